//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p covquant --test acceptance`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use covquant::channel::{analytic_covariance, draw_path_set, steering_vector, ClusterConfig, Path as ChannelPath, PathSet};
use covquant::codebook::{band_centre, build_codebook, build_upa_codebook, codeword_correlation, codeword_matrix, dft_column, dft_submatrix, Band};
use covquant::experiment::{run_experiment, ScenarioConfig};
use covquant::linalg::{hermitian_evd, inner, norm, subspace_distance, CMatrix, HermitianMatrix};
use covquant::metrics::{codeword_bound_check, average_snr, bound_check_with, circular_case_snr};
use covquant::multiuser::{bootstrap_positive_fraction, drop_users, evaluate_drop, plan_groups, CapacitySettings, InnerMode};
use covquant::rng::{child_seed, complex_gaussian, stream};
use covquant::table::RawTable;
use covquant::training::{estimator_mse, MseScenario};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_hermitian(n: usize, rng: &mut impl Rng) -> HermitianMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    let h = CMatrix::from_fn(n, n, |r, k| (g[(r, k)] + g[(k, r)].conj()) * 0.5);
    HermitianMatrix::new(h).unwrap()
}

fn random_unit(m: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..m).map(|_| complex_gaussian(rng)).collect();
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// In-band power share `∫_band |s(v)^H w|² dv / ‖w‖²`, built from the
/// band's sinc kernel entry by entry.
fn concentration(w: &[Complex64], q: usize, q_size: usize) -> f64 {
    concentration_at(w, band_centre(q, q_size), q_size)
}

/// Same for the band of width `1/Q` centred at `fc`.
fn concentration_at(w: &[Complex64], fc: f64, q_size: usize) -> f64 {
    let qf = q_size as f64;
    let kernel = |k: i64| {
        let base = if k == 0 {
            1.0 / qf
        } else {
            (PI * k as f64 / qf).sin() / (PI * k as f64)
        };
        Complex64::from_polar(base, 2.0 * PI * k as f64 * fc)
    };
    let mut acc = c(0.0, 0.0);
    for (n, wn) in w.iter().enumerate() {
        for (m, wm) in w.iter().enumerate() {
            acc += wn.conj() * kernel(n as i64 - m as i64) * wm;
        }
    }
    acc.re / w.iter().map(|x| x.norm_sqr()).sum::<f64>()
}

/// Slepian sequences from the commuting tridiagonal matrix, ordered by
/// decreasing concentration.
fn tridiagonal_dpss(m: usize, half_bandwidth: f64) -> CMatrix {
    let cw = (2.0 * PI * half_bandwidth).cos();
    let t = CMatrix::from_fn(m, m, |r, k| {
        if r == k {
            let x = (m as f64 - 1.0 - 2.0 * r as f64) / 2.0;
            c(x * x * cw, 0.0)
        } else if r + 1 == k {
            c((k * (m - k)) as f64 / 2.0, 0.0)
        } else if k + 1 == r {
            c((r * (m - r)) as f64 / 2.0, 0.0)
        } else {
            c(0.0, 0.0)
        }
    });
    hermitian_evd(&HermitianMatrix::new(t).unwrap()).eigenvectors
}

/// Composite Simpson integral of `√Q e^{j2πmv}` over band `q`.
fn simpson_correlation(q: usize, q_size: usize, m: i64, n: usize) -> Complex64 {
    let band = Band::codeword(q, q_size);
    let h = band.width() / n as f64;
    let amp = (q_size as f64).sqrt();
    let f = |v: f64| Complex64::from_polar(amp, 2.0 * PI * m as f64 * v);
    let mut s = f(band.lo) + f(band.hi);
    for i in 1..n {
        s += f(band.lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * (h / 3.0)
}

fn table_from(out: &covquant::experiment::ExperimentOutput, name: &str) -> RawTable {
    RawTable::parse(&out.tables[name].to_csv_string()).unwrap()
}

fn eigensolver() -> Outcome {
    let start = Instant::now();
    let (mut worst_res, mut worst_orth) = (0.0f64, 0.0f64);
    for i in 0..500u64 {
        let mut rng = stream(SEED, i);
        let n = rng.random_range(2..=64);
        let a = random_hermitian(n, &mut rng);
        let evd = hermitian_evd(&a);
        worst_res = worst_res.max(evd.reconstruction_residual(&a));
        worst_orth = worst_orth.max(evd.eigenvectors.orthonormality_deviation());
    }
    let t = start.elapsed();
    outcome(
        worst_res <= 1e-9 && worst_orth <= 1e-10 && t < Duration::from_secs(30),
        format!("max residual {worst_res:.2e}, max orthonormality {worst_orth:.2e}, {:.1} s", t.as_secs_f64()),
    )
}

fn correlation_closed_form() -> Outcome {
    let m = 64i64;
    let cases: Vec<(usize, usize)> = [4usize, 8, 16]
        .iter()
        .flat_map(|&qs| (0..qs).map(move |q| (q, qs)))
        .collect();
    let worst = cases
        .par_iter()
        .map(|&(q, qs)| {
            (-2 * m..=2 * m)
                .map(|k| (codeword_correlation(q, qs, k) - simpson_correlation(q, qs, k, 40_000)).norm())
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    outcome(worst <= 1e-9, format!("max error {worst:.2e} over {} codewords, |m| <= 128", cases.len()))
}

fn modulated_dpss() -> Outcome {
    let (m, qs) = (64, 8);
    let reference = tridiagonal_dpss(m, 0.5 / qs as f64);
    let mut worst = 1.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for q in 0..qs {
        let matrix = codeword_matrix(m, q, qs).unwrap();
        let evd = hermitian_evd(&matrix);
        let fc = band_centre(q, qs);
        for d in 0..8 {
            let l = &evd.eigenvalues;
            let gap = (l[d] - l[d + 1]).min(if d > 0 { l[d - 1] - l[d] } else { f64::INFINITY });
            if gap <= 1e-8 {
                skipped += 1;
                continue;
            }
            let u = evd.eigenvectors.column(d);
            let demod: Vec<Complex64> = u
                .iter()
                .enumerate()
                .map(|(k, x)| x * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * fc))
                .collect();
            worst = worst.min(inner(&reference.column(d), &demod).norm());
            checked += 1;
        }
    }
    outcome(
        worst > 1.0 - 1e-8 && checked > 0,
        format!("min alignment 1 - {:.2e} over {checked} vectors ({skipped} skipped for small gaps)", (1.0 - worst).max(0.0)),
    )
}

fn concentration_optimality() -> Outcome {
    let (m, qs) = (64, 8);
    let cb = build_codebook(m, qs, 6).unwrap();
    let reference = tridiagonal_dpss(m, 0.5 / qs as f64).column(0);
    let oracle_top = concentration_at(&reference, 0.0, qs);
    let mut ok = true;
    let mut min_top = f64::INFINITY;
    let mut max_gap_to_oracle = 0.0f64;
    let mut rng = stream(SEED, 4);
    for q in 0..qs {
        let top = concentration(&cb.entry(q).basis().column(0), q, qs);
        min_top = min_top.min(top);
        max_gap_to_oracle = max_gap_to_oracle.max((top - oracle_top).abs());
        for _ in 0..1000 {
            ok &= concentration(&random_unit(m, &mut rng), q, qs) <= top + 1e-12;
        }
        for n in 0..m {
            ok &= concentration(&dft_column(n, m), q, qs) <= top + 1e-12;
        }
    }
    outcome(
        ok && min_top > 0.999 && max_gap_to_oracle < 1e-9,
        format!("min top concentration {min_top:.12}, independent value {oracle_top:.12}, dominance {ok}"),
    )
}

fn leakage_ordering() -> Outcome {
    let cfg = ScenarioConfig::parse(
        "experiment = \"leakage-spectrum\"\nseed = 3\n[array]\nantennas = 64\n[codebook]\nsize = 8\nretained_values = [6, 7]\n\
         [simulation]\nrealizations = 200\n[band_paths]\nlo = 0.0\nhi = 0.125\ncount = 64\n[output]\ngrid = 256\n",
    )
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    let t = table_from(&out, "leakage_summary.csv");
    let (pre, d, q, oob) = (
        t.text_column("precoder").unwrap(),
        t.numeric_column("D").unwrap(),
        t.numeric_column("q").unwrap(),
        t.numeric_column("out_of_band").unwrap(),
    );
    let find = |p: &str, dd: f64| (0..pre.len()).find(|&i| pre[i] == p && d[i] == dd).map(|i| oob[i]).unwrap();
    let (p6, f6, p7) = (find("proposed", 6.0), find("dft", 6.0), find("proposed", 7.0));
    outcome(
        q.iter().all(|&x| x == 4.0) && p6 < f6 && p6 < p7,
        format!("out-of-band proposed D=6 {p6:.3e}, dft D=6 {f6:.3e}, proposed D=7 {p7:.3e}"),
    )
}

fn sandwich() -> Outcome {
    let cb = build_codebook(64, 8, 6).unwrap();
    let cfg = ClusterConfig::default();
    let (violations, worst_eq) = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let ps = draw_path_set(&cfg, &mut stream(child_seed(SEED, 6), i)).unwrap();
            let r = analytic_covariance(&ps, 64).unwrap().matrix;
            let mut bad = 0;
            let mut eq = 0.0f64;
            for e in &cb.entries {
                let b = codeword_bound_check(&r, e).unwrap();
                let tol = 1e-9 * b.mid.abs().max(1.0);
                if !b.holds(tol) {
                    bad += 1;
                }
                let flat = bound_check_with(&r, &e.basis(), &[0.7; 6]).unwrap();
                let scale = flat.mid.abs().max(1.0);
                eq = eq.max((flat.lower - flat.mid).abs() / scale).max((flat.upper - flat.mid).abs() / scale);
            }
            (bad, eq)
        })
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
    outcome(
        violations == 0 && worst_eq <= 1e-9,
        format!("{violations} violations in 8000 checks, equal-eigenvalue gap {worst_eq:.2e}"),
    )
}

fn sampling_convergence() -> Outcome {
    let (m, qs, q) = (16usize, 4usize, 1usize);
    let r = codeword_matrix(m, q, qs).unwrap();
    let lo = Band::codeword(q, qs).lo;
    let errors: Vec<(usize, f64, f64)> = [64usize, 256, 1024, 4096]
        .iter()
        .map(|&n| {
            let step = 1.0 / (qs * n) as f64;
            let mut gram = CMatrix::zeros(m, m);
            for i in 0..n {
                let s = steering_vector(lo + i as f64 * step, m);
                for a in 0..m {
                    for b in 0..m {
                        gram[(a, b)] += s[a] * s[b].conj() / n as f64;
                    }
                }
            }
            let diff = |scale: f64| {
                let target = r.matrix().scale(c(scale, 0.0));
                gram.sub(&target).unwrap().frobenius_norm()
            };
            (n, diff((qs as f64).sqrt()), diff(qs as f64))
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1].1 < w[0].1);
    let last = errors.last().unwrap().1;
    let listing: Vec<String> = errors.iter().map(|(n, e, _)| format!("N={n}: {e:.3e}")).collect();
    outcome(
        monotone && last < 1e-3,
        format!(
            "{}; monotone {monotone}; against Q*R_q the error stays near {:.2}",
            listing.join(", "),
            errors.last().unwrap().2
        ),
    )
}

fn circulant_closed_form() -> Outcome {
    let (m, qs) = (64usize, 8usize);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = stream(child_seed(SEED, 8), i);
        let count = rng.random_range(1..=20);
        let paths: Vec<ChannelPath> = (0..count)
            .map(|_| ChannelPath {
                sigma2: rng.random_range(0.05..1.0),
                tau: 0.0,
                v: rng.random_range(0..m) as f64 / m as f64,
            })
            .collect();
        let ps = PathSet::normalized(paths).unwrap();
        let q = rng.random_range(0..qs);
        let f = dft_submatrix(m, qs, q).unwrap();
        // Tr(F^H R F) with R[a, b] = Σ σ² e^{j2π(a−b)v}
        let mut trace = 0.0;
        for col in 0..f.cols() {
            for p in ps.paths() {
                let proj: Complex64 = (0..m)
                    .map(|a| f[(a, col)].conj() * Complex64::from_polar(1.0, 2.0 * PI * a as f64 * p.v))
                    .sum();
                trace += p.sigma2 * proj.norm_sqr();
            }
        }
        let closed = circular_case_snr(&ps, q, m, qs).unwrap();
        let cov = analytic_covariance(&ps, m).unwrap();
        let lib = average_snr(&f, &cov.matrix).unwrap();
        worst = worst.max((closed - trace).abs()).max((lib - trace).abs());
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.2e} over 100 path sets"))
}

fn band_paths() -> PathSet {
    let v: Vec<f64> = (0..64).map(|i| 0.125 * i as f64 / 64.0).collect();
    PathSet::equal_power(&v).unwrap()
}

fn estimator_bias() -> Outcome {
    let start = Instant::now();
    let sc = MseScenario::new(band_paths(), 64, 8, 6, 4096, 10.0);
    let res = estimator_mse(&sc, 10_000, child_seed(SEED, 9)).unwrap();
    let t = start.elapsed();
    let bias = res.max_relative_bias();
    outcome(
        bias < 0.02 && res.selection_agreement >= 0.95 && t < Duration::from_secs(300),
        format!(
            "max relative bias {bias:.2e}, selection agreement {:.4}, {:.1} s",
            res.selection_agreement,
            t.as_secs_f64()
        ),
    )
}

fn mse_trend() -> Outcome {
    let mses: Vec<(usize, f64)> = [4usize, 8, 16]
        .iter()
        .map(|&qs| {
            let sc = MseScenario::new(band_paths(), 64, qs, 6.min(64 / qs), 4096, 10.0);
            (qs, estimator_mse(&sc, 1000, child_seed(SEED, 100 + qs as u64)).unwrap().mse)
        })
        .collect();
    let ok = mses.windows(2).all(|w| w[0].1 < w[1].1);
    let listing: Vec<String> = mses.iter().map(|(q, e)| format!("Q={q}: {e:.4e}")).collect();
    outcome(ok, listing.join(", "))
}

fn relative_loss_trend() -> Outcome {
    let cfg = ScenarioConfig::parse(
        "experiment = \"snr-loss\"\nseed = 11\n[array]\nantennas = 64\n[codebook]\nsize = 8\nretained = 6\nmulti_size = 16\nfeedback = 2\n\
         [simulation]\ndrops = 200\n",
    )
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    let t = table_from(&out, "snr_loss.csv");
    let (scheme, d, loss) = (
        t.text_column("scheme").unwrap(),
        t.numeric_column("D").unwrap(),
        t.numeric_column("loss").unwrap(),
    );
    let at = |s: &str| (0..scheme.len()).find(|&i| scheme[i] == s && d[i] == 6.0).map(|i| loss[i]).unwrap();
    let (l8, l16) = (at("Q=8"), at("Q=16,J=2"));
    outcome(l8 >= l16, format!("mean loss Q=8 {l8:.4}, Q=16 with two codewords {l16:.4} over 200 drops"))
}

fn multiuser_trend() -> Outcome {
    let start = Instant::now();
    let cb = build_codebook(64, 8, 6).unwrap();
    let cfg = ClusterConfig::default();
    let settings = CapacitySettings::default();
    let run = |users: usize, family: u64| -> Vec<(usize, f64, f64)> {
        (0..100u64)
            .into_par_iter()
            .map(|i| {
                let drop = drop_users(users, &cfg, &cb, &mut stream(family, 2 * i)).unwrap();
                let groups = plan_groups(&drop, &cb, InnerMode::Proposed).unwrap().groups.len();
                let recs = evaluate_drop(&drop, &cb, &[10.0], &settings, child_seed(family, 2 * i + 1)).unwrap();
                let cap = |mode| recs.iter().find(|r| r.mode == mode).unwrap().capacity;
                (groups, cap(InnerMode::Proposed), cap(InnerMode::DftBaseline))
            })
            .collect()
    };
    let single = run(1, child_seed(SEED, 12));
    let (sp, sd) = single.iter().fold((0.0, 0.0), |a, r| (a.0 + r.1, a.1 + r.2));
    let gap = (sp - sd).abs() / sd;

    let multi = run(16, child_seed(SEED, 13));
    let min_groups = multi.iter().map(|r| r.0).min().unwrap();
    let diffs: Vec<f64> = multi.iter().map(|r| r.1 - r.2).collect();
    let confidence = bootstrap_positive_fraction(&diffs, 10_000, child_seed(SEED, 14)).unwrap();
    let (mp, md) = multi.iter().fold((0.0, 0.0), |a, r| (a.0 + r.1 / 100.0, a.1 + r.2 / 100.0));
    let t = start.elapsed();
    outcome(
        gap < 0.05 && min_groups >= 2 && confidence >= 0.95 && t < Duration::from_secs(600),
        format!(
            "single-user gap {gap:.4}; 16 users {mp:.4} vs {md:.4} bps/Hz, confidence {confidence:.4}, min groups {min_groups}, {:.1} s",
            t.as_secs_f64()
        ),
    )
}

fn planar_consistency() -> Outcome {
    let cb = build_upa_codebook(8, 8, 4, 2, 6).unwrap();
    let mut worst = 0.0f64;
    let mut min_gap = f64::INFINITY;
    for p in 0..4 {
        for q in 0..2 {
            let evd = hermitian_evd(&cb.matrix(p, q));
            min_gap = min_gap.min(evd.eigenvalues[5] - evd.eigenvalues[6]);
            worst = worst.max(subspace_distance(&evd.leading_vectors(6), &cb.entry(p, q).basis).unwrap());
        }
    }
    let cfg = ScenarioConfig::parse(
        "experiment = \"upa-capacity\"\nseed = 13\n[array]\nvertical = 8\nhorizontal = 8\n[codebook]\nvertical_size = 4\nsize = 2\nretained = 6\n\
         [simulation]\nsnr_db = [-10.0, 0.0, 10.0, 20.0, 30.0]\ndrops = 100\nrealizations = 50\n",
    )
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    let t = table_from(&out, "upa_capacity.csv");
    let (mode, cap) = (t.text_column("mode").unwrap(), t.numeric_column("capacity_bps_hz").unwrap());
    let pick = |m: &str| -> Vec<f64> { (0..mode.len()).filter(|&i| mode[i] == m).map(|i| cap[i]).collect() };
    let (pp, dd) = (pick("proposed"), pick("dft"));
    let trend = pp.iter().zip(&dd).all(|(a, b)| a >= b);
    outcome(
        worst < 1e-8 && trend,
        format!(
            "max subspace distance {worst:.2e} (min gap {min_gap:.2e}); capacity proposed {:.3} vs dft {:.3} at 10 dB",
            pp[2], dd[2]
        ),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn reproducibility() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_covquant");
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.toml");
    fs::write(
        &cfg_path,
        "experiment = \"multiuser-capacity\"\nseed = 14\n[array]\nantennas = 32\n[codebook]\nsize = 4\nretained = 4\n\
         [simulation]\nusers = [1, 6]\nsnr_db = [0.0, 10.0]\ndrops = 6\nrealizations = 4\n",
    )
    .unwrap();
    let mut dirs = Vec::new();
    for (i, jobs) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let status = Command::new(bin)
            .args(["--jobs", jobs, "run"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("run {i} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        dirs.push(out);
    }
    let (a, b) = (read_dir_sorted(&dirs[0]), read_dir_sorted(&dirs[1]));
    let csvs = a.iter().filter(|f| f.0.ends_with(".csv")).count();
    outcome(csvs > 0 && a == b, format!("{csvs} CSV files compared across --jobs 1 and --jobs 4"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("eigensolver", eigensolver),
        ("codeword correlation", correlation_closed_form),
        ("modulated DPSS identity", modulated_dpss),
        ("concentration optimality", concentration_optimality),
        ("leakage ordering", leakage_ordering),
        ("eigenvalue sandwich", sandwich),
        ("band sampling convergence", sampling_convergence),
        ("circulant closed form", circulant_closed_form),
        ("estimator bias", estimator_bias),
        ("MSE trend", mse_trend),
        ("relative loss trend", relative_loss_trend),
        ("multiuser trend", multiuser_trend),
        ("planar consistency", planar_consistency),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
