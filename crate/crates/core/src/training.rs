//! One-symbol training for codeword selection.
//!
//! Subcarriers are interleaved across the `Q` codewords, each subcarrier
//! carries a random QPSK outer precoder, and the receiver averages the
//! received power on each codeword's subcarriers to estimate
//! `γ_q + N0`.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{channel_realization, PathSet, SpatialCovariance, DEFAULT_SYMBOL_DURATION};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::linalg::{inner, orthonormalize, psd_sqrt, CMatrix, HermitianMatrix};
use crate::metrics::average_snr;
use crate::rng::{complex_gaussian, stream};

/// `N0` for a target SNR in dB, with unit average channel power per antenna.
pub fn noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Subcarriers owned by each codeword: `q ↦ {pQ + q}`.
pub fn allocate_subcarriers(k: usize, q_size: usize) -> Result<Vec<Vec<usize>>> {
    if q_size == 0 || k % q_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "{k} subcarriers cannot be split evenly across {q_size} codewords"
        )));
    }
    Ok((0..q_size).map(|q| (0..k / q_size).map(|p| p * q_size + q).collect()).collect())
}

/// QPSK outer precoder with entries `(±1 ± j)/√(2D)`.
pub fn random_outer_precoder<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Complex64> {
    let a = (2.0 * d as f64).sqrt().recip();
    (0..d)
        .map(|_| {
            let re = if rng.random::<bool>() { a } else { -a };
            let im = if rng.random::<bool>() { a } else { -a };
            Complex64::new(re, im)
        })
        .collect()
}

/// Everything transmitted in one training symbol.
///
/// The precoded symbol on subcarrier `k` is `√D · U_q v[k] x[k]`; the `√D`
/// makes `E[(√D v)(√D v)^H] = I` so the received power averages to
/// `Tr(U_q^H R U_q) + N0`.
#[derive(Clone, Debug)]
pub struct TrainingFrame {
    pub subcarriers: usize,
    pub codewords: usize,
    pub dimension: usize,
    pub allocation: Vec<Vec<usize>>,
    pub precoders: Vec<Vec<Complex64>>,
    pub symbols: Vec<Complex64>,
    pub noise_power: f64,
}

impl TrainingFrame {
    pub fn new<R: Rng + ?Sized>(k: usize, q_size: usize, d: usize, noise_power: f64, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("outer precoder dimension must be at least 1".into()));
        }
        if !(noise_power >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise power {noise_power} is negative")));
        }
        let allocation = allocate_subcarriers(k, q_size)?;
        let precoders = (0..k).map(|_| random_outer_precoder(d, rng)).collect();
        Ok(TrainingFrame {
            subcarriers: k,
            codewords: q_size,
            dimension: d,
            allocation,
            precoders,
            symbols: vec![Complex64::new(1.0, 0.0); k],
            noise_power,
        })
    }

    pub fn codeword_of(&self, k: usize) -> usize {
        k % self.codewords
    }

    /// Allocation table as text, one line per codeword.
    pub fn allocation_dump(&self) -> String {
        let mut out = format!("# K={} Q={} D={}\n", self.subcarriers, self.codewords, self.dimension);
        for (q, ks) in self.allocation.iter().enumerate() {
            let list: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
            out.push_str(&format!("{q}: {}\n", list.join(" ")));
        }
        out
    }
}

/// Per-codeword SNR estimates from one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrEstimate {
    pub gamma: Vec<f64>,
    pub samples: Vec<usize>,
}

fn accumulate(frame: &TrainingFrame, mut received: impl FnMut(usize, usize) -> Complex64) -> SnrEstimate {
    let mut gamma = vec![0.0; frame.codewords];
    let mut samples = vec![0usize; frame.codewords];
    for (q, ks) in frame.allocation.iter().enumerate() {
        for &k in ks {
            let y = received(q, k);
            gamma[q] += (frame.symbols[k].conj() * y).norm_sqr();
            samples[q] += 1;
        }
        gamma[q] /= samples[q].max(1) as f64;
    }
    SnrEstimate { gamma, samples }
}

fn noise<R: Rng + ?Sized>(n0: f64, rng: &mut R) -> Complex64 {
    if n0 > 0.0 {
        complex_gaussian(rng) * n0.sqrt()
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Estimates `γ_q + N0` for every codeword from per-subcarrier channels
/// (columns of `h`, `M x K`).
pub fn estimate_codeword_snrs<R: Rng + ?Sized>(
    h: &CMatrix,
    codebook: &Codebook,
    frame: &TrainingFrame,
    rng: &mut R,
) -> Result<SnrEstimate> {
    if h.cols() != frame.subcarriers {
        return Err(Error::DimensionMismatch(format!(
            "channel has {} subcarriers, frame has {}",
            h.cols(),
            frame.subcarriers
        )));
    }
    if h.rows() != codebook.antennas || frame.codewords != codebook.size || frame.dimension > codebook.retained {
        return Err(Error::DimensionMismatch(format!(
            "M={} Q={} D={} against codebook M={} Q={} D={}",
            h.rows(),
            frame.codewords,
            frame.dimension,
            codebook.antennas,
            codebook.size,
            codebook.retained
        )));
    }
    let scale = (frame.dimension as f64).sqrt();
    let inners: Vec<CMatrix> = codebook
        .entries
        .iter()
        .map(|e| e.leading(frame.dimension))
        .collect::<Result<_>>()?;
    Ok(accumulate(frame, |q, k| {
        let x = inners[q].mat_vec(&frame.precoders[k]).expect("dims checked");
        let hk = h.column(k);
        inner(&hk, &x) * scale * frame.symbols[k] + noise(frame.noise_power, rng)
    }))
}

/// Draws effective channels `g = U_q^H h ~ CN(0, U_q^H R U_q)` directly,
/// which is exact when subcarrier channels are independent.
#[derive(Clone, Debug)]
pub struct EffectiveChannelSampler {
    factors: Vec<CMatrix>,
}

impl EffectiveChannelSampler {
    pub fn new(r: &HermitianMatrix, codebook: &Codebook, d: usize) -> Result<Self> {
        let factors = codebook
            .entries
            .iter()
            .map(|e| {
                let u = e.leading(d)?;
                let s = HermitianMatrix::new(u.adjoint_mul(&r.matrix().matmul(&u)?)?)?;
                Ok(psd_sqrt(&s))
            })
            .collect::<Result<_>>()?;
        Ok(EffectiveChannelSampler { factors })
    }

    pub fn draw<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Vec<Complex64> {
        let f = &self.factors[q];
        let w: Vec<Complex64> = (0..f.cols()).map(|_| complex_gaussian(rng)).collect();
        f.mat_vec(&w).expect("square factor")
    }
}

/// [`estimate_codeword_snrs`] with an independent channel on every
/// subcarrier.
pub fn estimate_independent<R: Rng + ?Sized>(
    sampler: &EffectiveChannelSampler,
    frame: &TrainingFrame,
    rng: &mut R,
) -> SnrEstimate {
    let scale = (frame.dimension as f64).sqrt();
    accumulate(frame, |q, k| {
        let g = sampler.draw(q, rng);
        inner(&g, &frame.precoders[k]) * scale * frame.symbols[k] + noise(frame.noise_power, rng)
    })
}

/// Indices of the `J` largest estimates, largest first; ties toward the
/// smaller index.
pub fn feedback_decision(est: &SnrEstimate, j: usize) -> Result<Vec<usize>> {
    let q = est.gamma.len();
    if j == 0 || j > q {
        return Err(Error::InvalidArgument(format!("J={j} outside 1..={q}")));
    }
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|&a, &b| est.gamma[b].total_cmp(&est.gamma[a]).then(a.cmp(&b)));
    idx.truncate(j);
    Ok(idx)
}

/// Concatenates the leading `D_total / J` columns of each selected
/// codeword and re-orthonormalizes.
pub fn multi_codeword_precoder(codebook: &Codebook, indices: &[usize], d_total: usize) -> Result<CMatrix> {
    let j = indices.len();
    if j == 0 || d_total % j != 0 {
        return Err(Error::InvalidArgument(format!("{d_total} columns cannot be split across {j} codewords")));
    }
    if let Some(&bad) = indices.iter().find(|&&q| q >= codebook.size) {
        return Err(Error::InvalidArgument(format!("codeword {bad} out of range")));
    }
    let per = d_total / j;
    let mut cols = Vec::with_capacity(d_total);
    for &q in indices {
        let u = codebook.entry(q).leading(per)?;
        cols.extend((0..per).map(|c| u.column(c)));
    }
    let raw = CMatrix::from_columns(&cols)?;
    if j == 1 {
        return Ok(raw);
    }
    orthonormalize(&raw, 1e-8)
}

/// How channels vary across subcarriers in the MSE experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    /// A fresh channel on every subcarrier.
    Independent,
    /// One multipath realization per frame, correlated across subcarriers
    /// through the path delays.
    Literal,
}

/// Parameters of one estimator-accuracy experiment.
#[derive(Clone, Debug)]
pub struct MseScenario {
    pub paths: PathSet,
    pub antennas: usize,
    pub codewords: usize,
    pub dimension: usize,
    pub subcarriers: usize,
    pub snr_db: f64,
    pub mode: ChannelMode,
    pub symbol_duration: f64,
}

impl MseScenario {
    pub fn new(paths: PathSet, antennas: usize, codewords: usize, dimension: usize, subcarriers: usize, snr_db: f64) -> Self {
        MseScenario {
            paths,
            antennas,
            codewords,
            dimension,
            subcarriers,
            snr_db,
            mode: ChannelMode::Independent,
            symbol_duration: DEFAULT_SYMBOL_DURATION,
        }
    }
}

/// Aggregate estimator statistics over many frames.
#[derive(Clone, Debug)]
pub struct MseResult {
    /// `(1/Q) Σ_q mean |γ̂_q − (γ_q + N0)|² / (γ_q + N0)²`.
    pub mse: f64,
    /// `γ_q + N0`.
    pub target: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    /// Fraction of frames whose largest estimate picks the true best codeword.
    pub selection_agreement: f64,
    pub trials: usize,
}

impl MseResult {
    /// Largest `|mean γ̂_q − target_q| / target_q`.
    pub fn max_relative_bias(&self) -> f64 {
        self.mean_estimate
            .iter()
            .zip(&self.target)
            .map(|(m, t)| (m - t).abs() / t)
            .fold(0.0, f64::max)
    }
}

/// Monte Carlo estimator accuracy. Trial `i` uses stream `i` of `seed`.
pub fn estimator_mse(scenario: &MseScenario, trials: usize, seed: u64) -> Result<MseResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let s = scenario;
    let codebook = crate::codebook::build_codebook(s.antennas, s.codewords, s.dimension)?;
    let cov = crate::channel::analytic_covariance(&s.paths, s.antennas)?;
    let n0 = noise_power(s.snr_db);
    let target = true_snrs(&cov, &codebook, s.dimension)?
        .into_iter()
        .map(|g| g + n0)
        .collect::<Vec<_>>();
    let best = crate::metrics::best_index(&target, true).expect("non-empty");
    let sampler = match s.mode {
        ChannelMode::Independent => Some(EffectiveChannelSampler::new(&cov.matrix, &codebook, s.dimension)?),
        ChannelMode::Literal => None,
    };

    let per_trial: Vec<SnrEstimate> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let frame = TrainingFrame::new(s.subcarriers, s.codewords, s.dimension, n0, &mut rng)?;
            match &sampler {
                Some(sm) => Ok(estimate_independent(sm, &frame, &mut rng)),
                None => {
                    let h = channel_realization(&s.paths, s.antennas, s.subcarriers, s.symbol_duration, &mut rng)?;
                    estimate_codeword_snrs(&h.h, &codebook, &frame, &mut rng)
                }
            }
        })
        .collect::<Result<_>>()?;

    let q = s.codewords;
    let mut mse = 0.0;
    let mut mean = vec![0.0; q];
    let mut agree = 0usize;
    for est in &per_trial {
        for j in 0..q {
            mse += ((est.gamma[j] - target[j]) / target[j]).powi(2);
            mean[j] += est.gamma[j];
        }
        if feedback_decision(est, 1)?[0] == best {
            agree += 1;
        }
    }
    let n = trials as f64;
    Ok(MseResult {
        mse: mse / (n * q as f64),
        target,
        mean_estimate: mean.into_iter().map(|m| m / n).collect(),
        selection_agreement: agree as f64 / n,
        trials,
    })
}

/// `γ_q = Tr(U_q^H R U_q)` using the leading `d` columns of each codeword.
pub fn true_snrs(cov: &SpatialCovariance, codebook: &Codebook, d: usize) -> Result<Vec<f64>> {
    codebook
        .entries
        .iter()
        .map(|e| average_snr(&e.leading(d)?, &cov.matrix))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::analytic_covariance;
    use crate::codebook::build_codebook;

    #[test]
    fn allocation_examples() {
        let a = allocate_subcarriers(16, 8).unwrap();
        assert_eq!(a[3], vec![3, 11]);
        let a = allocate_subcarriers(8, 8).unwrap();
        assert!(a.iter().enumerate().all(|(q, ks)| ks == &vec![q]));
        assert!(allocate_subcarriers(10, 4).is_err());
        assert!(allocate_subcarriers(10, 0).is_err());
    }

    #[test]
    fn outer_precoder_is_unit_norm_qpsk() {
        let mut rng = stream(1, 0);
        let v = random_outer_precoder(1, &mut rng);
        assert!((v[0].norm() - 1.0).abs() < 1e-15);
        for d in [2, 6, 9] {
            let v = random_outer_precoder(d, &mut rng);
            let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 1.0).abs() < 1e-14);
            let a = (2.0 * d as f64).sqrt().recip();
            assert!(v.iter().all(|z| (z.re.abs() - a).abs() < 1e-15 && (z.im.abs() - a).abs() < 1e-15));
        }
    }

    #[test]
    fn scaled_outer_precoder_has_identity_covariance() {
        let d = 4;
        let n = 100_000;
        let mut rng = stream(2, 0);
        let mut acc = CMatrix::zeros(d, d);
        for _ in 0..n {
            let v = random_outer_precoder(d, &mut rng);
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += v[i] * v[j].conj() * d as f64;
                }
            }
        }
        let mean = acc.scale(Complex64::new(1.0 / n as f64, 0.0));
        let err = mean.sub(&CMatrix::identity(d)).unwrap().max_abs();
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn noiseless_flat_single_antenna() {
        let cb = build_codebook(1, 4, 1).unwrap();
        let h = CMatrix::from_fn(1, 8, |_, _| Complex64::new(1.0, 0.0));
        let mut rng = stream(3, 0);
        let frame = TrainingFrame::new(8, 4, 1, 0.0, &mut rng).unwrap();
        let est = estimate_codeword_snrs(&h, &cb, &frame, &mut rng).unwrap();
        for g in &est.gamma {
            assert!((g - 1.0).abs() < 1e-12);
        }
        assert_eq!(est.samples, vec![2; 4]);
    }

    #[test]
    fn zero_channel_measures_noise() {
        let cb = build_codebook(4, 2, 1).unwrap();
        let h = CMatrix::zeros(4, 2000);
        let mut rng = stream(4, 0);
        let frame = TrainingFrame::new(2000, 2, 1, 0.3, &mut rng).unwrap();
        let est = estimate_codeword_snrs(&h, &cb, &frame, &mut rng).unwrap();
        for g in &est.gamma {
            assert!((g - 0.3).abs() < 0.3 * 0.1);
        }
        assert!(estimate_codeword_snrs(&CMatrix::zeros(4, 10), &cb, &frame, &mut rng).is_err());
    }

    #[test]
    fn feedback_examples() {
        let est = SnrEstimate {
            gamma: vec![0.1, 0.9, 0.3],
            samples: vec![1; 3],
        };
        assert_eq!(feedback_decision(&est, 1).unwrap(), vec![1]);
        assert_eq!(feedback_decision(&est, 2).unwrap(), vec![1, 2]);
        assert_eq!(feedback_decision(&est, 3).unwrap(), vec![1, 2, 0]);
        assert!(feedback_decision(&est, 0).is_err());
        assert!(feedback_decision(&est, 4).is_err());
        let tie = SnrEstimate {
            gamma: vec![0.5, 0.5],
            samples: vec![1; 2],
        };
        assert_eq!(feedback_decision(&tie, 1).unwrap(), vec![0]);
    }

    #[test]
    fn multi_codeword_examples() {
        let cb = build_codebook(64, 16, 3).unwrap();
        let single = multi_codeword_precoder(&cb, &[5], 3).unwrap();
        assert!(single.sub(&cb.entry(5).basis()).unwrap().max_abs() < 1e-12);

        let a = cb.entry(5).basis();
        let b = cb.entry(6).basis();
        let cross = a.adjoint_mul(&b).unwrap().max_abs();
        assert!(cross < 0.05, "{cross}");

        let w = multi_codeword_precoder(&cb, &[5, 6], 6).unwrap();
        assert!(w.orthonormality_deviation() < 1e-10);
        assert!(multi_codeword_precoder(&cb, &[5, 6], 5).is_err());
    }

    #[test]
    fn effective_sampler_matches_covariance() {
        let cb = build_codebook(16, 4, 2).unwrap();
        let paths = PathSet::equal_power(&[-0.2, 0.05, 0.1]).unwrap();
        let cov = analytic_covariance(&paths, 16).unwrap();
        let sm = EffectiveChannelSampler::new(&cov.matrix, &cb, 2).unwrap();
        let truth = true_snrs(&cov, &cb, 2).unwrap();
        let mut rng = stream(5, 0);
        let n = 40_000;
        for q in 0..4 {
            let mean: f64 = (0..n).map(|_| crate::linalg::norm(&sm.draw(q, &mut rng)).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - truth[q]).abs() < 0.05 * truth[q] + 1e-9, "q={q} {mean} vs {}", truth[q]);
        }
    }

    #[test]
    fn noiseless_single_antenna_mse_is_zero() {
        let paths = PathSet::equal_power(&[0.0]).unwrap();
        let mut sc = MseScenario::new(paths, 1, 2, 1, 8, 300.0);
        sc.mode = ChannelMode::Literal;
        sc.symbol_duration = 1.0;
        let cb = build_codebook(1, 2, 1).unwrap();
        let h = CMatrix::from_fn(1, 8, |_, _| Complex64::new(1.0, 0.0));
        let mut rng = stream(6, 0);
        let frame = TrainingFrame::new(8, 2, 1, 0.0, &mut rng).unwrap();
        let est = estimate_codeword_snrs(&h, &cb, &frame, &mut rng).unwrap();
        let mse: f64 = est.gamma.iter().map(|g| (g - 1.0).powi(2)).sum::<f64>() / 2.0;
        assert!(mse < 1e-24);
        assert!(estimator_mse(&sc, 3, 1).unwrap().mse.is_finite());
    }

    #[test]
    fn mse_is_deterministic() {
        let paths = PathSet::equal_power(&[0.01, 0.05, 0.09]).unwrap();
        let sc = MseScenario::new(paths, 16, 4, 2, 64, 10.0);
        let a = estimator_mse(&sc, 20, 11).unwrap();
        let b = estimator_mse(&sc, 20, 11).unwrap();
        assert_eq!(a.mse, b.mse);
        assert_eq!(a.mean_estimate, b.mean_estimate);
    }
}
