//! Multi-group multiuser downlink with per-group zero forcing.
//!
//! Users are grouped by the codeword they feed back. Each group is served
//! through its inner precoder with a ZF outer precoder computed on the
//! effective channels; power is split equally across groups and then
//! across users. Interference from other groups (IGI) is not cancelled.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{
    analytic_covariance, draw_path_set_around, draw_planar_paths, planar_covariance, planar_steering, ClusterConfig,
    PathSet, PlanarClusterConfig, PlanarPath, SpatialCovariance, SteeringBasis, DEFAULT_SYMBOL_DURATION,
};
use crate::codebook::{dft_baseline, dft_baseline_2d, Codebook, Codebook2D};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, inner, norm, CMatrix, HermitianMatrix};
use crate::metrics::{best_index, select_codeword, SelectionCriterion};
use crate::rng::{complex_gaussian, stream};
use crate::training::noise_power;

/// Relative pivot floor for the ZF Gram matrix.
pub const ZF_PIVOT_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct User {
    pub los_deg: f64,
    pub paths: PathSet,
    pub covariance: SpatialCovariance,
    /// Codeword selected by average SNR on the analytic covariance.
    pub codeword: usize,
}

#[derive(Clone, Debug)]
pub struct UserDrop {
    pub users: Vec<User>,
}

impl UserDrop {
    /// Distinct codewords in ascending order.
    pub fn codewords(&self) -> Vec<usize> {
        let mut q: Vec<usize> = self.users.iter().map(|u| u.codeword).collect();
        q.sort_unstable();
        q.dedup();
        q
    }
}

/// Draws `n` users with independent LOS angles and path sets, and lets each
/// pick its codeword.
pub fn drop_users<R: Rng + ?Sized>(n: usize, cfg: &ClusterConfig, codebook: &Codebook, rng: &mut R) -> Result<UserDrop> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one user".into()));
    }
    cfg.validate()?;
    let [lo, hi] = cfg.los_range_deg;
    let users = (0..n)
        .map(|_| {
            let los = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let paths = draw_path_set_around(cfg, los, rng)?;
            let covariance = analytic_covariance(&paths, codebook.antennas)?;
            let codeword = select_codeword(codebook, &covariance, SelectionCriterion::AvgSnr)?;
            Ok(User {
                los_deg: los,
                paths,
                covariance,
                codeword,
            })
        })
        .collect::<Result<_>>()?;
    Ok(UserDrop { users })
}

/// Which inner precoder a group uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InnerMode {
    Proposed,
    DftBaseline,
}

impl InnerMode {
    pub fn label(self) -> &'static str {
        match self {
            InnerMode::Proposed => "proposed",
            InnerMode::DftBaseline => "dft",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Group {
    pub codeword: usize,
    /// `M x D` inner precoder.
    pub inner: CMatrix,
    /// Served users, strongest first.
    pub members: Vec<usize>,
}

/// Users grouped by codeword, with groups capped at `D` users.
#[derive(Clone, Debug)]
pub struct GroupPlan {
    pub groups: Vec<Group>,
    /// Users beyond the `D` strongest of their group.
    pub unserved: Vec<usize>,
}

/// Inner precoder of codeword `q` under `mode`.
pub fn inner_precoder(codebook: &Codebook, q: usize, mode: InnerMode) -> Result<CMatrix> {
    match mode {
        InnerMode::Proposed => Ok(codebook.entry(q).basis()),
        InnerMode::DftBaseline => dft_baseline(codebook.antennas, codebook.size, q, codebook.retained),
    }
}

/// Groups users by codeword. Members are ranked by long-term effective
/// channel power `Tr(U^H R U)`; ties keep user order.
pub fn plan_groups(drop: &UserDrop, codebook: &Codebook, mode: InnerMode) -> Result<GroupPlan> {
    let d = codebook.retained;
    let mut groups = Vec::new();
    let mut unserved = Vec::new();
    for q in drop.codewords() {
        let inner = inner_precoder(codebook, q, mode)?;
        let mut members: Vec<(usize, f64)> = drop
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.codeword == q)
            .map(|(i, u)| Ok((i, u.covariance.matrix.projected_trace(&inner)?)))
            .collect::<Result<_>>()?;
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        unserved.extend(members.iter().skip(d).map(|m| m.0));
        members.truncate(d);
        groups.push(Group {
            codeword: q,
            inner,
            members: members.into_iter().map(|m| m.0).collect(),
        });
    }
    unserved.sort_unstable();
    Ok(GroupPlan { groups, unserved })
}

/// ZF directions `H (H^H H)^{-1}` with unit-norm columns for a `D x U`
/// effective channel.
pub fn zf_outer_precoder(effective: &CMatrix) -> Result<CMatrix> {
    let (d, u) = (effective.rows(), effective.cols());
    if u == 0 || u > d {
        return Err(Error::InvalidArgument(format!("ZF needs 1 <= users <= D, got {u} users, D={d}")));
    }
    let gram = effective.adjoint_mul(effective)?;
    let l = cholesky(&gram, ZF_PIVOT_FLOOR)?;
    let inv = cholesky_solve(&l, &CMatrix::identity(u))?;
    let mut w = effective.matmul(&inv)?;
    for c in 0..u {
        let col = w.column(c);
        let n = norm(&col);
        w.set_column(c, &col.iter().map(|z| z / n).collect::<Vec<_>>());
    }
    Ok(w)
}

/// Where the capacity average is taken.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacitySettings {
    pub realizations: usize,
    pub subcarriers: Vec<usize>,
    pub symbol_duration: f64,
}

impl Default for CapacitySettings {
    fn default() -> Self {
        CapacitySettings {
            realizations: 50,
            subcarriers: (0..8).map(|i| i * 75).collect(),
            symbol_duration: DEFAULT_SYMBOL_DURATION,
        }
    }
}

/// Capacity statistics for one drop, mode and SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityRecord {
    pub mode: InnerMode,
    pub n_users: usize,
    pub snr_db: f64,
    /// Mean `log2(1 + SINR)` over users and samples; unserved users count 0.
    pub capacity: f64,
    /// Mean inter-group interference power at served users.
    pub igi_power: f64,
    /// Largest intra-group interference relative to the user's signal.
    pub max_iui_ratio: f64,
    pub unserved: usize,
    /// User-samples dropped because the effective channel was rank deficient.
    pub rank_drops: usize,
}

struct Sample {
    user: usize,
    signal: f64,
    igi: f64,
    iui: f64,
}

/// ZF for one group and one channel snapshot; rank-deficient users are
/// removed weakest first. Returns (user, transmit direction) pairs.
fn serve_group(group: &Group, channels: &[Vec<Complex64>], dropped: &mut usize) -> Result<Vec<(usize, Vec<Complex64>)>> {
    let mut members = group.members.clone();
    while !members.is_empty() {
        let cols: Vec<Vec<Complex64>> = members
            .iter()
            .map(|&u| group.inner.adjoint_mat_vec(&channels[u]))
            .collect::<Result<_>>()?;
        let eff = CMatrix::from_columns(&cols)?;
        match zf_outer_precoder(&eff) {
            Ok(w) => {
                return members
                    .iter()
                    .enumerate()
                    .map(|(i, &u)| Ok((u, group.inner.mat_vec(&w.column(i))?)))
                    .collect();
            }
            Err(Error::RankDeficient(_)) => {
                let weakest = (0..members.len())
                    .min_by(|&a, &b| norm(&cols[a]).total_cmp(&norm(&cols[b])))
                    .expect("non-empty");
                members.remove(weakest);
                *dropped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Vec::new())
}

fn snapshot_samples(plan: &GroupPlan, channels: &[Vec<Complex64>], dropped: &mut usize) -> Result<Vec<Sample>> {
    let served: Vec<Vec<(usize, Vec<Complex64>)>> = plan
        .groups
        .iter()
        .map(|g| serve_group(g, channels, dropped))
        .collect::<Result<_>>()?;
    let active = served.iter().filter(|s| !s.is_empty()).count();
    let mut out = Vec::new();
    for (g, members) in served.iter().enumerate() {
        for (u, _) in members {
            let h = &channels[*u];
            let mut sample = Sample {
                user: *u,
                signal: 0.0,
                igi: 0.0,
                iui: 0.0,
            };
            for (g2, others) in served.iter().enumerate() {
                let p = 1.0 / (active * others.len().max(1)) as f64;
                for (u2, x2) in others {
                    let pw = inner(h, x2).norm_sqr() * p;
                    if g2 != g {
                        sample.igi += pw;
                    } else if u2 == u {
                        sample.signal = pw;
                    } else {
                        sample.iui += pw;
                    }
                }
            }
            out.push(sample);
        }
    }
    Ok(out)
}

/// Total transmit power `Σ_u ‖x_u‖² P_u` of one snapshot's precoders.
pub fn transmit_power(plan: &GroupPlan, channels: &[Vec<Complex64>]) -> Result<f64> {
    let mut dropped = 0;
    let served: Vec<Vec<(usize, Vec<Complex64>)>> = plan
        .groups
        .iter()
        .map(|g| serve_group(g, channels, &mut dropped))
        .collect::<Result<_>>()?;
    let active = served.iter().filter(|s| !s.is_empty()).count();
    Ok(served
        .iter()
        .flat_map(|m| m.iter().map(move |(_, x)| norm(x).powi(2) / (active * m.len()) as f64))
        .sum())
}

/// Per-user channels for each sampled (realization, subcarrier).
fn channel_snapshots(drop: &UserDrop, settings: &CapacitySettings, rng_seed: u64) -> Vec<Vec<Vec<Complex64>>> {
    let bases: Vec<SteeringBasis> = drop
        .users
        .iter()
        .map(|u| SteeringBasis::new(&u.paths, u.covariance.dim()))
        .collect();
    (0..settings.realizations)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut rng = stream(rng_seed, r as u64);
            let gains: Vec<Vec<Complex64>> = bases
                .iter()
                .map(|b| (0..b.path_count()).map(|_| complex_gaussian(&mut rng)).collect())
                .collect();
            let bases = &bases;
            settings.subcarriers.iter().map(move |&k| {
                bases
                    .iter()
                    .zip(&gains)
                    .map(|(b, g)| b.channel_at(g, k, settings.symbol_duration))
                    .collect::<Vec<_>>()
            })
        })
        .collect()
}

/// Capacity of both inner-precoder modes on shared channel samples, for
/// every SNR in `snrs_db`. Channels come from stream family `rng_seed`.
pub fn evaluate_drop(
    drop: &UserDrop,
    codebook: &Codebook,
    snrs_db: &[f64],
    settings: &CapacitySettings,
    rng_seed: u64,
) -> Result<Vec<CapacityRecord>> {
    let snapshots = channel_snapshots(drop, settings, rng_seed);
    let mut out = Vec::new();
    for mode in [InnerMode::Proposed, InnerMode::DftBaseline] {
        let plan = plan_groups(drop, codebook, mode)?;
        out.extend(capacity_from_snapshots(drop, &plan, &snapshots, snrs_db, mode)?);
    }
    Ok(out)
}

/// Capacity of one mode at one SNR.
pub fn evaluate_capacity(
    drop: &UserDrop,
    codebook: &Codebook,
    snr_db: f64,
    mode: InnerMode,
    settings: &CapacitySettings,
    rng_seed: u64,
) -> Result<CapacityRecord> {
    let snapshots = channel_snapshots(drop, settings, rng_seed);
    let plan = plan_groups(drop, codebook, mode)?;
    Ok(capacity_from_snapshots(drop, &plan, &snapshots, &[snr_db], mode)?.remove(0))
}

fn capacity_from_snapshots(
    drop: &UserDrop,
    plan: &GroupPlan,
    snapshots: &[Vec<Vec<Complex64>>],
    snrs_db: &[f64],
    mode: InnerMode,
) -> Result<Vec<CapacityRecord>> {
    let mut dropped = 0;
    let samples: Vec<Vec<Sample>> = snapshots
        .iter()
        .map(|ch| snapshot_samples(plan, ch, &mut dropped))
        .collect::<Result<_>>()?;
    let n_users = drop.users.len();
    let denom = (n_users * snapshots.len().max(1)) as f64;
    let served: usize = samples.iter().map(Vec::len).sum();
    let igi = samples.iter().flatten().map(|s| s.igi).sum::<f64>() / served.max(1) as f64;
    let max_iui = samples
        .iter()
        .flatten()
        .map(|s| if s.signal > 0.0 { s.iui / s.signal } else { 0.0 })
        .fold(0.0, f64::max);
    debug_assert!(samples.iter().flatten().all(|s| s.user < n_users));
    Ok(snrs_db
        .iter()
        .map(|&snr| {
            let n0 = noise_power(snr);
            let total: f64 = samples
                .iter()
                .flatten()
                .map(|s| (1.0 + s.signal / (s.igi + s.iui + n0)).log2())
                .sum();
            CapacityRecord {
                mode,
                n_users,
                snr_db: snr,
                capacity: total / denom,
                igi_power: igi,
                max_iui_ratio: max_iui,
                unserved: plan.unserved.len(),
                rank_drops: dropped,
            }
        })
        .collect())
}

/// Fraction of bootstrap resamples whose mean of `diffs` is positive.
pub fn bootstrap_positive_fraction(diffs: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if diffs.is_empty() || resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs data and at least one resample".into()));
    }
    let mut rng = stream(seed, 0);
    let n = diffs.len();
    let positive = (0..resamples)
        .filter(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() > 0.0)
        .count();
    Ok(positive as f64 / resamples as f64)
}

/// Single-user planar-array capacity of the proposed codeword and the 2-D
/// DFT baseline for the same zone.
#[derive(Clone, Debug, PartialEq)]
pub struct UpaCapacity {
    pub zone: (usize, usize),
    pub snr_db: f64,
    pub proposed: f64,
    pub dft: f64,
}

/// Picks the zone with the largest average SNR; ties toward the smaller
/// row-major index.
pub fn select_zone(r: &HermitianMatrix, codebook: &Codebook2D) -> Result<(usize, usize)> {
    let scores: Vec<f64> = codebook
        .entries
        .iter()
        .map(|e| r.projected_trace(&e.basis))
        .collect::<Result<_>>()?;
    let i = best_index(&scores, true).ok_or_else(|| Error::InvalidArgument("empty codebook".into()))?;
    Ok((codebook.entries[i].p, codebook.entries[i].q))
}

/// Mean `log2(1 + ‖U^H h‖²/N0)` over `realizations` narrowband draws
/// `h = Σ_l √σ_l² g_l s_l`.
pub fn upa_capacity<R: Rng + ?Sized>(
    paths: &[PlanarPath],
    codebook: &Codebook2D,
    snrs_db: &[f64],
    realizations: usize,
    rng: &mut R,
) -> Result<Vec<UpaCapacity>> {
    let (mv, mh) = (codebook.m_v, codebook.m_h);
    let r = planar_covariance(paths, mv, mh)?;
    let (p, q) = select_zone(&r, codebook)?;
    let proposed = &codebook.entry(p, q).basis;
    let dft = dft_baseline_2d(mv, mh, codebook.p_size, codebook.q_size, p, q, codebook.retained)?;
    let steer: Vec<Vec<Complex64>> = paths
        .iter()
        .map(|pp| planar_steering(pp, mv, mh).into_iter().map(|z| z * pp.sigma2.sqrt()).collect())
        .collect();
    let steer = CMatrix::from_columns(&steer)?;
    let mut gains = Vec::with_capacity(realizations);
    for _ in 0..realizations {
        let g: Vec<Complex64> = (0..paths.len()).map(|_| complex_gaussian(rng)).collect();
        let h = steer.mat_vec(&g)?;
        gains.push((
            norm(&proposed.adjoint_mat_vec(&h)?).powi(2),
            norm(&dft.adjoint_mat_vec(&h)?).powi(2),
        ));
    }
    let n = realizations.max(1) as f64;
    Ok(snrs_db
        .iter()
        .map(|&snr| {
            let n0 = noise_power(snr);
            let (a, b) = gains
                .iter()
                .fold((0.0, 0.0), |acc, (gp, gd)| (acc.0 + (1.0 + gp / n0).log2(), acc.1 + (1.0 + gd / n0).log2()));
            UpaCapacity {
                zone: (p, q),
                snr_db: snr,
                proposed: a / n,
                dft: b / n,
            }
        })
        .collect())
}

/// Draws a planar user and evaluates [`upa_capacity`].
pub fn upa_drop_capacity<R: Rng + ?Sized>(
    cfg: &PlanarClusterConfig,
    codebook: &Codebook2D,
    snrs_db: &[f64],
    realizations: usize,
    rng: &mut R,
) -> Result<Vec<UpaCapacity>> {
    let paths = draw_planar_paths(cfg, rng)?;
    upa_capacity(&paths, codebook, snrs_db, realizations, rng)
}
