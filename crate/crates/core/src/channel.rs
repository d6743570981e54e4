//! Multipath channel model.
//!
//! Paths are described by power, delay and wave number. A ULA channel at
//! subcarrier `k` and antenna `m` is
//! `h[m, k] = Σ_l α_l · exp(−j2πkτ_l/T) · exp(j2πm·v_l)` with
//! `E[α_l α_p^*] = σ_l² δ[l − p]`, and the spatial correlation is
//! `r[m] = Σ_l σ_l² exp(j2πm·v_l)`.
//!
//! Path sets come from a simplified clustered model: a line-of-sight
//! direction, clusters placed uniformly around it, subpaths spread uniformly
//! inside each cluster, exponential delays and an exponential power-delay
//! profile.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_evd, toeplitz_from_correlation, CMatrix, EvdResult, HermitianMatrix};
use crate::rng::complex_gaussian;

/// Power normalization tolerance for a [`PathSet`].
pub const POWER_SUM_TOL: f64 = 1e-12;

/// OFDM symbol duration for 15 kHz subcarrier spacing.
pub const DEFAULT_SYMBOL_DURATION: f64 = 1.0 / 15e3;

/// Maps a wave number into `[−1/2, 1/2)`.
pub fn wrap_wavenumber(v: f64) -> f64 {
    let w = v - (v + 0.5).floor();
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

/// Array response `{exp(j2πmv)}_{m=0}^{M−1}`.
pub fn steering_vector(v: f64, m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * i as f64 * v))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Fraction of the total power carried by the path.
    pub sigma2: f64,
    /// Delay in seconds.
    pub tau: f64,
    /// Wave number `(d/λ)·sin θ`.
    pub v: f64,
}

/// A normalized set of propagation paths.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

#[derive(Serialize, Deserialize)]
struct PathSetFile {
    path: Vec<Path>,
}

impl PathSet {
    /// Validates powers (`Σσ² = 1`), delays (`τ ≥ 0`) and wraps wave numbers.
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidArgument("path set is empty".into()));
        }
        for (i, p) in paths.iter().enumerate() {
            if !(p.sigma2 >= 0.0) || !p.sigma2.is_finite() {
                return Err(Error::InvalidArgument(format!("path {i}: power {} is invalid", p.sigma2)));
            }
            if !(p.tau >= 0.0) || !p.tau.is_finite() {
                return Err(Error::InvalidArgument(format!("path {i}: delay {} is negative", p.tau)));
            }
            if !p.v.is_finite() {
                return Err(Error::InvalidArgument(format!("path {i}: wave number is not finite")));
            }
        }
        let total: f64 = paths.iter().map(|p| p.sigma2).sum();
        if (total - 1.0).abs() > POWER_SUM_TOL {
            return Err(Error::InvalidArgument(format!("path powers sum to {total}, expected 1")));
        }
        let paths = paths
            .into_iter()
            .map(|p| Path {
                v: wrap_wavenumber(p.v),
                ..p
            })
            .collect();
        Ok(PathSet { paths })
    }

    /// Rescales powers to sum to one before validating.
    pub fn normalized(mut paths: Vec<Path>) -> Result<Self> {
        let total: f64 = paths.iter().map(|p| p.sigma2).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("path powers sum to zero".into()));
        }
        for p in &mut paths {
            p.sigma2 /= total;
        }
        Self::new(paths)
    }

    /// Equal-power paths at the given wave numbers with zero delay.
    pub fn equal_power(wavenumbers: &[f64]) -> Result<Self> {
        let n = wavenumbers.len().max(1) as f64;
        Self::normalized(
            wavenumbers
                .iter()
                .map(|&v| Path {
                    sigma2: 1.0 / n,
                    tau: 0.0,
                    v,
                })
                .collect(),
        )
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&PathSetFile {
            path: self.paths.clone(),
        })
        .expect("path set serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: PathSetFile = toml::from_str(text).map_err(|e| Error::Parse {
            what: "path set".into(),
            reason: e.to_string(),
        })?;
        Self::new(file.path)
    }
}

/// How a cluster's power is divided among its subpaths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubpathSplit {
    #[default]
    Equal,
    /// Uniform random weights, renormalized within the cluster.
    Random,
}

/// Parameters of the clustered path generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub clusters: usize,
    pub subpaths: usize,
    /// Range the line-of-sight angle is drawn from, degrees.
    pub los_range_deg: [f64; 2],
    /// Cluster centres are uniform in `LOS ± cluster_spread_deg`.
    pub cluster_spread_deg: f64,
    /// Subpath angles are uniform in `centre ± angular_spread_deg`.
    pub angular_spread_deg: f64,
    /// Mean cluster delay and power-decay constant, seconds.
    pub delay_spread_s: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    pub subpath_split: SubpathSplit,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            clusters: 20,
            subpaths: 20,
            los_range_deg: [-85.0, 85.0],
            cluster_spread_deg: 10.0,
            angular_spread_deg: 2.0,
            delay_spread_s: 234e-9,
            antenna_spacing: 0.5,
            subpath_split: SubpathSplit::Equal,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.subpaths == 0 {
            return Err(Error::config("channel.clusters/subpaths", "counts must be at least 1"));
        }
        if self.cluster_spread_deg < 0.0 || self.angular_spread_deg < 0.0 || self.delay_spread_s < 0.0 {
            return Err(Error::config("channel", "spreads must be non-negative"));
        }
        if self.los_range_deg[0] > self.los_range_deg[1] {
            return Err(Error::config("channel.los_range_deg", "lower bound exceeds upper bound"));
        }
        if !(self.antenna_spacing > 0.0) {
            return Err(Error::config("channel.antenna_spacing", "must be positive"));
        }
        Ok(())
    }

    /// Single cluster with one subpath at a fixed angle: a pure line of sight.
    pub fn single_path(angle_deg: f64) -> Self {
        ClusterConfig {
            clusters: 1,
            subpaths: 1,
            los_range_deg: [angle_deg, angle_deg],
            cluster_spread_deg: 0.0,
            angular_spread_deg: 0.0,
            ..Self::default()
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a line-of-sight angle from the configured range and a path set
/// around it.
pub fn draw_path_set<R: Rng + ?Sized>(cfg: &ClusterConfig, rng: &mut R) -> Result<PathSet> {
    cfg.validate()?;
    let los = uniform(rng, cfg.los_range_deg[0], cfg.los_range_deg[1]);
    draw_path_set_around(cfg, los, rng)
}

/// Path set whose clusters are centred on a given line-of-sight angle.
pub fn draw_path_set_around<R: Rng + ?Sized>(cfg: &ClusterConfig, los_deg: f64, rng: &mut R) -> Result<PathSet> {
    cfg.validate()?;
    let delay_dist = (cfg.delay_spread_s > 0.0).then(|| Exp::new(1.0 / cfg.delay_spread_s).expect("positive rate"));
    let mut paths = Vec::with_capacity(cfg.clusters * cfg.subpaths);
    for _ in 0..cfg.clusters {
        let centre = los_deg + uniform(rng, -cfg.cluster_spread_deg, cfg.cluster_spread_deg);
        let tau = delay_dist.as_ref().map_or(0.0, |d| d.sample(rng));
        let cluster_power = if cfg.delay_spread_s > 0.0 {
            (-tau / cfg.delay_spread_s).exp()
        } else {
            1.0
        };
        let weights: Vec<f64> = match cfg.subpath_split {
            SubpathSplit::Equal => vec![1.0; cfg.subpaths],
            SubpathSplit::Random => (0..cfg.subpaths).map(|_| rng.random::<f64>() + 1e-12).collect(),
        };
        let wsum: f64 = weights.iter().sum();
        for w in weights {
            let angle = centre + uniform(rng, -cfg.angular_spread_deg, cfg.angular_spread_deg);
            paths.push(Path {
                sigma2: cluster_power * w / wsum,
                tau,
                v: cfg.antenna_spacing * angle.to_radians().sin(),
            });
        }
    }
    PathSet::normalized(paths)
}

/// One OFDM channel snapshot over `M` antennas and `K` subcarriers.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub antennas: usize,
    pub subcarriers: usize,
    pub symbol_duration: f64,
    /// `M x K`, column `k` is the spatial channel at subcarrier `k`.
    pub h: CMatrix,
    pub alphas: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn subcarrier(&self, k: usize) -> Vec<Complex64> {
        self.h.column(k)
    }

    /// Recomputes the channel from the stored gains.
    pub fn recompute(&self, paths: &PathSet) -> CMatrix {
        synthesize(paths, &self.alphas, self.antennas, self.subcarriers, self.symbol_duration)
    }
}

fn synthesize(paths: &PathSet, alphas: &[Complex64], m: usize, k: usize, t: f64) -> CMatrix {
    let mut h = CMatrix::zeros(m, k);
    for (p, &alpha) in paths.paths().iter().zip(alphas) {
        let steer = steering_vector(p.v, m);
        for kk in 0..k {
            let g = alpha * Complex64::from_polar(1.0, -2.0 * PI * kk as f64 * p.tau / t);
            for (mm, s) in steer.iter().enumerate() {
                h[(mm, kk)] += g * s;
            }
        }
    }
    h
}

/// Draws `α_l = σ_l · CN(0, 1)` and synthesizes the channel.
pub fn channel_realization<R: Rng + ?Sized>(
    paths: &PathSet,
    antennas: usize,
    subcarriers: usize,
    symbol_duration: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let alphas: Vec<Complex64> = paths
        .paths()
        .iter()
        .map(|p| complex_gaussian(rng) * p.sigma2.sqrt())
        .collect();
    channel_with_gains(paths, alphas, antennas, subcarriers, symbol_duration)
}

/// Synthesizes the channel for caller-supplied path gains.
pub fn channel_with_gains(
    paths: &PathSet,
    alphas: Vec<Complex64>,
    antennas: usize,
    subcarriers: usize,
    symbol_duration: f64,
) -> Result<ChannelRealization> {
    if antennas == 0 || subcarriers == 0 {
        return Err(Error::InvalidArgument("antenna and subcarrier counts must be at least 1".into()));
    }
    if !(symbol_duration > 0.0) {
        return Err(Error::InvalidArgument("symbol duration must be positive".into()));
    }
    if alphas.len() != paths.len() {
        return Err(Error::DimensionMismatch(format!("{} gains for {} paths", alphas.len(), paths.len())));
    }
    let h = synthesize(paths, &alphas, antennas, subcarriers, symbol_duration);
    Ok(ChannelRealization {
        antennas,
        subcarriers,
        symbol_duration,
        h,
        alphas,
    })
}

/// Precomputed steering matrix for fast per-subcarrier channel synthesis.
#[derive(Clone, Debug)]
pub struct SteeringBasis {
    /// `M x L`, column `l` is `s(v_l)` scaled by `σ_l`.
    scaled: CMatrix,
    delays: Vec<f64>,
}

impl SteeringBasis {
    pub fn new(paths: &PathSet, antennas: usize) -> Self {
        let cols: Vec<Vec<Complex64>> = paths
            .paths()
            .iter()
            .map(|p| steering_vector(p.v, antennas).into_iter().map(|z| z * p.sigma2.sqrt()).collect())
            .collect();
        SteeringBasis {
            scaled: CMatrix::from_columns(&cols).expect("equal lengths"),
            delays: paths.paths().iter().map(|p| p.tau).collect(),
        }
    }

    pub fn path_count(&self) -> usize {
        self.delays.len()
    }

    /// Channel at subcarrier `k` for normalized gains `g_l ~ CN(0,1)`
    /// (so that `α_l = σ_l g_l`).
    pub fn channel_at(&self, gains: &[Complex64], k: usize, symbol_duration: f64) -> Vec<Complex64> {
        let coeffs: Vec<Complex64> = gains
            .iter()
            .zip(&self.delays)
            .map(|(g, &tau)| g * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * tau / symbol_duration))
            .collect();
        self.scaled.mat_vec(&coeffs).expect("gain count matches")
    }
}

/// Spatial covariance `R = {r[m − n]}` with its correlation sequence.
#[derive(Debug)]
pub struct SpatialCovariance {
    pub correlation: Vec<Complex64>,
    pub matrix: HermitianMatrix,
    evd: OnceLock<EvdResult>,
}

impl Clone for SpatialCovariance {
    fn clone(&self) -> Self {
        let evd = OnceLock::new();
        if let Some(e) = self.evd.get() {
            let _ = evd.set(e.clone());
        }
        SpatialCovariance {
            correlation: self.correlation.clone(),
            matrix: self.matrix.clone(),
            evd,
        }
    }
}

impl SpatialCovariance {
    pub fn from_correlation(correlation: Vec<Complex64>) -> Result<Self> {
        let matrix = toeplitz_from_correlation(&correlation)?;
        Ok(SpatialCovariance {
            correlation,
            matrix,
            evd: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Eigen-decomposition, computed once.
    pub fn evd(&self) -> &EvdResult {
        self.evd.get_or_init(|| hermitian_evd(&self.matrix))
    }
}

/// `r[m] = Σ_l σ_l² exp(j2πm·v_l)` for `m = 0..M−1`.
pub fn spatial_correlation(paths: &PathSet, m: usize) -> Vec<Complex64> {
    let mut r: Vec<Complex64> = (0..m)
        .map(|i| {
            paths
                .paths()
                .iter()
                .map(|p| Complex64::from_polar(p.sigma2, 2.0 * PI * i as f64 * p.v))
                .sum()
        })
        .collect();
    if let Some(r0) = r.first_mut() {
        *r0 = Complex64::new(r0.re, 0.0);
    }
    r
}

pub fn analytic_covariance(paths: &PathSet, antennas: usize) -> Result<SpatialCovariance> {
    if antennas == 0 {
        return Err(Error::InvalidArgument("antenna count must be at least 1".into()));
    }
    SpatialCovariance::from_correlation(spatial_correlation(paths, antennas))
}

/// Average of `h[:,k] h[:,k]^H` over all realizations and subcarriers.
pub fn sample_covariance(realizations: &[ChannelRealization]) -> Result<HermitianMatrix> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::InvalidArgument("no realizations supplied".into()))?;
    let m = first.antennas;
    let mut acc = CMatrix::zeros(m, m);
    let mut count = 0usize;
    for real in realizations {
        if real.antennas != m {
            return Err(Error::DimensionMismatch(format!("{} vs {} antennas", real.antennas, m)));
        }
        for k in 0..real.subcarriers {
            let col = real.h.column(k);
            for r in 0..m {
                for c in 0..m {
                    acc[(r, c)] += col[r] * col[c].conj();
                }
            }
            count += 1;
        }
    }
    HermitianMatrix::new(acc.scale(Complex64::new(1.0 / count as f64, 0.0)))
}

/// Path powers binned on `gridsize` uniform wave-number bins covering
/// `[−1/2, 1/2)`; bin `i` covers `[−1/2 + i/G, −1/2 + (i+1)/G)`.
pub fn spatial_spectrum_on_grid(paths: &PathSet, gridsize: usize) -> Result<Vec<f64>> {
    if gridsize < 2 {
        return Err(Error::InvalidArgument("spectrum grid needs at least 2 bins".into()));
    }
    let mut bins = vec![0.0; gridsize];
    for p in paths.paths() {
        let pos = (p.v + 0.5) * gridsize as f64;
        // nudge exact edges so that v = i/G lands in bin i despite rounding
        let idx = ((pos + 1e-9).floor() as usize).min(gridsize - 1);
        bins[idx] += p.sigma2;
    }
    Ok(bins)
}

/// A path on a uniform planar array with vertical and horizontal wave
/// numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarPath {
    pub sigma2: f64,
    pub tau: f64,
    pub v_vertical: f64,
    pub v_horizontal: f64,
}

/// Angular ranges for planar-array path draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanarClusterConfig {
    pub paths: usize,
    /// Central angles are uniform in this range, degrees.
    pub centre_range_deg: [f64; 2],
    /// Angular spreads are uniform in this range, degrees.
    pub spread_range_deg: [f64; 2],
    pub delay_spread_s: f64,
    pub antenna_spacing: f64,
}

impl Default for PlanarClusterConfig {
    fn default() -> Self {
        PlanarClusterConfig {
            paths: 40,
            centre_range_deg: [-180.0, 180.0],
            spread_range_deg: [0.0, 90.0],
            delay_spread_s: 234e-9,
            antenna_spacing: 0.5,
        }
    }
}

/// Draws a planar path set: azimuth and zenith are independent and uniform
/// in windows with random centres and random widths.
///
/// Wave numbers: `v_V = d·cos(zenith)`, `v_H = d·sin(zenith)·sin(azimuth)`.
pub fn draw_planar_paths<R: Rng + ?Sized>(cfg: &PlanarClusterConfig, rng: &mut R) -> Result<Vec<PlanarPath>> {
    if cfg.paths == 0 {
        return Err(Error::config("channel.paths", "must be at least 1"));
    }
    let window = |rng: &mut R| {
        let centre = uniform(rng, cfg.centre_range_deg[0], cfg.centre_range_deg[1]);
        let spread = uniform(rng, cfg.spread_range_deg[0], cfg.spread_range_deg[1]);
        (centre, spread)
    };
    let (az_c, az_s) = window(rng);
    let (ze_c, ze_s) = window(rng);
    let delay_dist = (cfg.delay_spread_s > 0.0).then(|| Exp::new(1.0 / cfg.delay_spread_s).expect("positive rate"));
    let mut paths = Vec::with_capacity(cfg.paths);
    for _ in 0..cfg.paths {
        let az = (az_c + uniform(rng, -az_s / 2.0, az_s / 2.0)).to_radians();
        let ze = (ze_c + uniform(rng, -ze_s / 2.0, ze_s / 2.0)).to_radians();
        let tau = delay_dist.as_ref().map_or(0.0, |d| d.sample(rng));
        paths.push(PlanarPath {
            sigma2: 1.0 / cfg.paths as f64,
            tau,
            v_vertical: wrap_wavenumber(cfg.antenna_spacing * ze.cos()),
            v_horizontal: wrap_wavenumber(cfg.antenna_spacing * ze.sin() * az.sin()),
        });
    }
    Ok(paths)
}

/// Planar steering vector, vertical index outer: entry `m·M_H + n` is
/// `exp(j2π(m·v_V + n·v_H))`.
pub fn planar_steering(path: &PlanarPath, m_v: usize, m_h: usize) -> Vec<Complex64> {
    let sv = steering_vector(path.v_vertical, m_v);
    let sh = steering_vector(path.v_horizontal, m_h);
    sv.iter().flat_map(|a| sh.iter().map(move |b| a * b)).collect()
}

/// Covariance `Σ σ² s s^H` of a planar path set.
pub fn planar_covariance(paths: &[PlanarPath], m_v: usize, m_h: usize) -> Result<HermitianMatrix> {
    let n = m_v * m_h;
    let mut acc = CMatrix::zeros(n, n);
    for p in paths {
        let s = planar_steering(p, m_v, m_h);
        for r in 0..n {
            let a = s[r] * p.sigma2;
            for c in 0..n {
                acc[(r, c)] += a * s[c].conj();
            }
        }
    }
    HermitianMatrix::new(acc)
}
