//! Config-driven experiments.
//!
//! A scenario file is TOML with a top-level `experiment` and `seed` plus
//! optional sections. Each experiment writes fixed-schema CSV files into
//! the output directory; [`check_outcomes`] evaluates the expected trends
//! on those results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Deserialize;

use crate::channel::{
    analytic_covariance, draw_path_set, ClusterConfig, PathSet, PlanarClusterConfig,
    SpatialCovariance,
};
use crate::codebook::{build_codebook, build_upa_codebook, dft_baseline, Band};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::metrics::{
    ideal_outer_precoder, loss_for_precoder, mean_in_band_fraction, select_codeword, SelectionCriterion,
    DEFAULT_GRID,
};
use crate::multiuser::{drop_users, evaluate_drop, upa_drop_capacity, CapacitySettings, InnerMode};
use crate::rng::{child_seed, complex_gaussian, stream};
use crate::table::{Cell, RawTable, Table};
use crate::training::{estimator_mse, feedback_decision, multi_codeword_precoder, true_snrs, ChannelMode, MseScenario, SnrEstimate};

/// Env var naming the default output directory.
pub const OUT_DIR_ENV: &str = "COVQUANT_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LeakageSpectrum,
    MseVsQ,
    SnrLoss,
    MultiuserCapacity,
    UpaCapacity,
    CodebookDump,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LeakageSpectrum => "leakage-spectrum",
            ExperimentKind::MseVsQ => "mse-vs-q",
            ExperimentKind::SnrLoss => "snr-loss",
            ExperimentKind::MultiuserCapacity => "multiuser-capacity",
            ExperimentKind::UpaCapacity => "upa-capacity",
            ExperimentKind::CodebookDump => "codebook-dump",
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub antennas: Option<usize>,
    pub vertical: Option<usize>,
    pub horizontal: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    /// `Q`, or the horizontal zone count for planar arrays.
    pub size: Option<usize>,
    /// `Q` values for sweeps.
    pub sizes: Option<Vec<usize>>,
    /// `P`, the vertical zone count.
    pub vertical_size: Option<usize>,
    /// `D`.
    pub retained: Option<usize>,
    /// `D` values for sweeps.
    pub retained_values: Option<Vec<usize>>,
    /// Finer codebook and number of fed-back codewords for the
    /// multi-codeword comparison.
    pub multi_size: Option<usize>,
    pub feedback: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModeName {
    Independent,
    Literal,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub subcarriers: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub mode: Option<ChannelModeName>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub snr_db: Option<Vec<f64>>,
    pub users: Option<Vec<usize>>,
    pub drops: Option<usize>,
    pub realizations: Option<usize>,
    /// Subcarrier indices sampled for capacity averaging.
    pub subcarriers: Option<Vec<usize>>,
}

/// Equal-power paths evenly spread over `[lo, hi)` in wave number.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandPathsSection {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for BandPathsSection {
    fn default() -> Self {
        BandPathsSection {
            lo: 0.0,
            hi: 0.125,
            count: 64,
        }
    }
}

impl BandPathsSection {
    pub fn path_set(&self) -> Result<PathSet> {
        if self.count == 0 || !(self.hi > self.lo) {
            return Err(Error::config("band_paths", "need count >= 1 and hi > lo"));
        }
        let step = (self.hi - self.lo) / self.count as f64;
        let vs: Vec<f64> = (0..self.count).map(|i| self.lo + (i as f64 + 0.5) * step).collect();
        PathSet::equal_power(&vs)
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub grid: Option<usize>,
}

/// One experiment recipe.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub codebook: CodebookSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub channel: ClusterConfig,
    #[serde(default)]
    pub planar_channel: PlanarClusterConfig,
    #[serde(default)]
    pub band_paths: BandPathsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn need<T: Clone>(value: &Option<T>, field: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::config(field, "required for this experiment"))
}

fn positive(value: usize, field: &str) -> Result<usize> {
    if value == 0 {
        return Err(Error::config(field, "must be at least 1"));
    }
    Ok(value)
}

fn non_empty<T>(values: Vec<T>, field: &str) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    Ok(values)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            what: "scenario config".into(),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks that the fields this experiment reads are present and sane.
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        match self.experiment {
            ExperimentKind::LeakageSpectrum => {
                positive(need(&self.array.antennas, "array.antennas")?, "array.antennas")?;
                positive(need(&self.codebook.size, "codebook.size")?, "codebook.size")?;
                self.retained_values()?;
                positive(need(&self.simulation.realizations, "simulation.realizations")?, "simulation.realizations")?;
                self.band_paths.path_set()?;
            }
            ExperimentKind::MseVsQ => {
                positive(need(&self.array.antennas, "array.antennas")?, "array.antennas")?;
                non_empty(need(&self.codebook.sizes, "codebook.sizes")?, "codebook.sizes")?;
                positive(need(&self.codebook.retained, "codebook.retained")?, "codebook.retained")?;
                non_empty(need(&self.training.subcarriers, "training.subcarriers")?, "training.subcarriers")?;
                positive(need(&self.training.trials, "training.trials")?, "training.trials")?;
                non_empty(need(&self.simulation.snr_db, "simulation.snr_db")?, "simulation.snr_db")?;
                self.band_paths.path_set()?;
            }
            ExperimentKind::SnrLoss => {
                positive(need(&self.array.antennas, "array.antennas")?, "array.antennas")?;
                positive(need(&self.codebook.size, "codebook.size")?, "codebook.size")?;
                positive(need(&self.codebook.retained, "codebook.retained")?, "codebook.retained")?;
                positive(need(&self.simulation.drops, "simulation.drops")?, "simulation.drops")?;
                if let Some(j) = self.codebook.feedback {
                    positive(need(&self.codebook.multi_size, "codebook.multi_size")?, "codebook.multi_size")?;
                    if j == 0 || self.codebook.retained.unwrap_or(0) % j != 0 {
                        return Err(Error::config("codebook.feedback", "must divide codebook.retained"));
                    }
                }
            }
            ExperimentKind::MultiuserCapacity => {
                positive(need(&self.array.antennas, "array.antennas")?, "array.antennas")?;
                positive(need(&self.codebook.size, "codebook.size")?, "codebook.size")?;
                positive(need(&self.codebook.retained, "codebook.retained")?, "codebook.retained")?;
                let users = non_empty(need(&self.simulation.users, "simulation.users")?, "simulation.users")?;
                if users.contains(&0) {
                    return Err(Error::config("simulation.users", "user counts must be at least 1"));
                }
                non_empty(need(&self.simulation.snr_db, "simulation.snr_db")?, "simulation.snr_db")?;
                positive(need(&self.simulation.drops, "simulation.drops")?, "simulation.drops")?;
            }
            ExperimentKind::UpaCapacity => {
                positive(need(&self.array.vertical, "array.vertical")?, "array.vertical")?;
                positive(need(&self.array.horizontal, "array.horizontal")?, "array.horizontal")?;
                positive(need(&self.codebook.vertical_size, "codebook.vertical_size")?, "codebook.vertical_size")?;
                positive(need(&self.codebook.size, "codebook.size")?, "codebook.size")?;
                positive(need(&self.codebook.retained, "codebook.retained")?, "codebook.retained")?;
                non_empty(need(&self.simulation.snr_db, "simulation.snr_db")?, "simulation.snr_db")?;
                positive(need(&self.simulation.drops, "simulation.drops")?, "simulation.drops")?;
            }
            ExperimentKind::CodebookDump => {
                positive(need(&self.array.antennas, "array.antennas")?, "array.antennas")?;
                positive(need(&self.codebook.size, "codebook.size")?, "codebook.size")?;
                positive(need(&self.codebook.retained, "codebook.retained")?, "codebook.retained")?;
            }
        }
        Ok(())
    }

    fn retained_values(&self) -> Result<Vec<usize>> {
        match (&self.codebook.retained_values, self.codebook.retained) {
            (Some(v), _) => {
                let v = non_empty(v.clone(), "codebook.retained_values")?;
                if v.contains(&0) {
                    return Err(Error::config("codebook.retained_values", "values must be at least 1"));
                }
                Ok(v)
            }
            (None, Some(d)) => Ok(vec![positive(d, "codebook.retained")?]),
            (None, None) => Err(Error::config("codebook.retained", "required for this experiment")),
        }
    }

    fn realizations(&self) -> usize {
        self.simulation.realizations.unwrap_or(50)
    }

    /// Output directory: explicit override, then the config, then
    /// [`OUT_DIR_ENV`], then `covquant-out`.
    pub fn resolve_output_dir(&self, cli_override: Option<&Path>) -> PathBuf {
        if let Some(p) = cli_override {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("covquant-out"))
    }
}

/// Column layout of every emitted CSV, keyed by file name.
pub const SCHEMAS: &[(&str, &[&str])] = &[
    ("leakage_summary.csv", &["precoder", "D", "q", "in_band", "out_of_band"]),
    ("leakage_spectrum.csv", &["precoder", "D", "v", "power"]),
    ("mse.csv", &["Q", "K", "snr_db", "mse"]),
    ("mse_bias.csv", &["Q", "K", "snr_db", "q", "target", "mean_estimate", "selection_agreement"]),
    ("snr_loss.csv", &["scheme", "D", "gamma_q", "gamma_o", "loss"]),
    ("capacity.csv", &["mode", "n_users", "snr_db", "capacity_bps_hz", "igi_power"]),
    ("capacity_drops.csv", &["drop", "mode", "n_users", "snr_db", "capacity_bps_hz"]),
    ("upa_capacity.csv", &["mode", "m_v", "m_h", "snr_db", "capacity_bps_hz"]),
    ("eigenvalues.csv", &["q", "index", "eigenvalue"]),
];

/// Expected columns for a CSV file name, if it is one of ours.
pub fn schema_for(file_name: &str) -> Option<&'static [&'static str]> {
    SCHEMAS.iter().find(|(n, _)| *n == file_name).map(|(_, c)| *c)
}

/// Loads a CSV and validates it against its documented schema.
pub fn load_result(path: &Path) -> Result<RawTable> {
    let raw = RawTable::read(path)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if let Some(cols) = schema_for(name) {
        raw.expect_columns(cols).map_err(|reason| Error::Schema {
            path: path.to_path_buf(),
            reason,
        })?;
    }
    Ok(raw)
}

/// Everything an experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub experiment: ExperimentKind,
    pub tables: BTreeMap<String, Table>,
    /// Non-CSV artifacts (file name, contents).
    pub extras: BTreeMap<String, String>,
}

impl ExperimentOutput {
    fn new(experiment: ExperimentKind) -> Self {
        ExperimentOutput {
            experiment,
            tables: BTreeMap::new(),
            extras: BTreeMap::new(),
        }
    }

    /// Writes every table and artifact; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, t) in &self.tables {
            let p = dir.join(name);
            t.write(&p)?;
            written.push(p);
        }
        for (name, text) in &self.extras {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Runs the configured experiment in memory.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::LeakageSpectrum => leakage_spectrum(cfg),
        ExperimentKind::MseVsQ => mse_vs_q(cfg),
        ExperimentKind::SnrLoss => snr_loss(cfg),
        ExperimentKind::MultiuserCapacity => multiuser_capacity(cfg),
        ExperimentKind::UpaCapacity => upa_capacity(cfg),
        ExperimentKind::CodebookDump => codebook_dump(cfg),
    }
}

/// Channel snapshots `h = Σ_l σ_l g_l s(v_l)` for a fixed path set.
fn narrowband_channels(paths: &PathSet, m: usize, n: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let basis = crate::channel::SteeringBasis::new(paths, m);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let g: Vec<Complex64> = (0..basis.path_count()).map(|_| complex_gaussian(&mut rng)).collect();
            basis.channel_at(&g, 0, 1.0)
        })
        .collect()
}

/// Mean `|A(v)|²` of `W v` with the ideal outer precoder per snapshot.
fn mean_spectrum(w: &CMatrix, channels: &[Vec<Complex64>], grid: usize) -> Result<Vec<f64>> {
    let m = w.rows();
    let steer: Vec<Vec<Complex64>> = (0..grid)
        .map(|i| crate::channel::steering_vector(-0.5 + i as f64 / grid as f64, m))
        .collect();
    let per: Vec<Vec<f64>> = channels
        .par_iter()
        .map(|h| -> Result<Vec<f64>> {
            let Some(v) = ideal_outer_precoder(w, h)? else {
                return Ok(vec![0.0; grid]);
            };
            let x = w.mat_vec(&v)?;
            Ok(steer
                .iter()
                .map(|s| (crate::linalg::inner(s, &x) / m as f64).norm_sqr())
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = channels.len().max(1) as f64;
    Ok((0..grid).map(|i| per.iter().map(|p| p[i]).sum::<f64>() / n).collect())
}

fn leakage_spectrum(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    let m = cfg.array.antennas.expect("validated");
    let q_size = cfg.codebook.size.expect("validated");
    let ds = cfg.retained_values()?;
    let grid = cfg.output.grid.unwrap_or(DEFAULT_GRID);
    let paths = cfg.band_paths.path_set()?;
    let cov = analytic_covariance(&paths, m)?;
    let channels = narrowband_channels(&paths, m, cfg.realizations(), child_seed(cfg.seed, 1));

    let mut summary = Table::new(&["precoder", "D", "q", "in_band", "out_of_band"]);
    let mut spectrum = Table::new(&["precoder", "D", "v", "power"]);
    for &d in &ds {
        let cb = build_codebook(m, q_size, d)?;
        let q = select_codeword(&cb, &cov, SelectionCriterion::AvgSnr)?;
        let band = Band::codeword(q, q_size);
        for (label, w) in [("proposed", cb.entry(q).basis()), ("dft", dft_baseline(m, q_size, q, d)?)] {
            let inb = mean_in_band_fraction(&w, band, channels.iter().map(Vec::as_slice))?;
            summary.push(vec![label.into(), d.into(), q.into(), inb.into(), (1.0 - inb).into()])?;
            for (i, p) in mean_spectrum(&w, &channels, grid)?.into_iter().enumerate() {
                spectrum.push(vec![label.into(), d.into(), (-0.5 + i as f64 / grid as f64).into(), p.into()])?;
            }
        }
    }
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.tables.insert("leakage_summary.csv".into(), summary);
    out.tables.insert("leakage_spectrum.csv".into(), spectrum);
    Ok(out)
}

fn mse_vs_q(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    let m = cfg.array.antennas.expect("validated");
    let d = cfg.codebook.retained.expect("validated");
    let trials = cfg.training.trials.expect("validated");
    let mode = match cfg.training.mode.unwrap_or(ChannelModeName::Independent) {
        ChannelModeName::Independent => ChannelMode::Independent,
        ChannelModeName::Literal => ChannelMode::Literal,
    };
    let paths = cfg.band_paths.path_set()?;
    let mut mse = Table::new(&["Q", "K", "snr_db", "mse"]);
    let mut bias = Table::new(&["Q", "K", "snr_db", "q", "target", "mean_estimate", "selection_agreement"]);
    let mut tag = 0u64;
    for &k in cfg.training.subcarriers.as_ref().expect("validated") {
        for &snr in cfg.simulation.snr_db.as_ref().expect("validated") {
            for &q_size in cfg.codebook.sizes.as_ref().expect("validated") {
                tag += 1;
                let mut sc = MseScenario::new(paths.clone(), m, q_size, d.min(m / q_size.max(1)).max(1), k, snr);
                sc.mode = mode;
                sc.symbol_duration = crate::channel::DEFAULT_SYMBOL_DURATION;
                let res = estimator_mse(&sc, trials, child_seed(cfg.seed, tag))?;
                mse.push(vec![q_size.into(), k.into(), snr.into(), res.mse.into()])?;
                for (q, (t, e)) in res.target.iter().zip(&res.mean_estimate).enumerate() {
                    bias.push(vec![
                        q_size.into(),
                        k.into(),
                        snr.into(),
                        q.into(),
                        (*t).into(),
                        (*e).into(),
                        res.selection_agreement.into(),
                    ])?;
                }
            }
        }
    }
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.tables.insert("mse.csv".into(), mse);
    out.tables.insert("mse_bias.csv".into(), bias);
    Ok(out)
}

/// Per-drop relative SNR loss for `D = 1..=Dmax` (single codeword) and,
/// when configured, for the multi-codeword scheme at multiples of `J`.
fn snr_loss(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    let m = cfg.array.antennas.expect("validated");
    let q_size = cfg.codebook.size.expect("validated");
    let dmax = cfg.codebook.retained.expect("validated");
    let drops = cfg.simulation.drops.expect("validated");
    let cb = build_codebook(m, q_size, dmax)?;
    let multi = match cfg.codebook.feedback {
        Some(j) => {
            let size = cfg.codebook.multi_size.expect("validated");
            Some((j, size, build_codebook(m, size, dmax / j)?))
        }
        None => None,
    };

    // (scheme, D) -> sums of (gamma_q, gamma_o)
    let per_drop: Vec<Vec<(String, usize, f64, f64)>> = (0..drops)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let ps = draw_path_set(&cfg.channel, &mut stream(cfg.seed, i as u64))?;
            let cov = analytic_covariance(&ps, m)?;
            let mut rows = single_codeword_losses(&cov, &cb, q_size, dmax)?;
            if let Some((j, size, mcb)) = &multi {
                rows.extend(multi_codeword_losses(&cov, mcb, *size, *j, dmax)?);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut acc: BTreeMap<(String, usize), (f64, f64)> = BTreeMap::new();
    let mut order: Vec<(String, usize)> = Vec::new();
    for rows in &per_drop {
        for (scheme, d, gq, go) in rows {
            let key = (scheme.clone(), *d);
            if !acc.contains_key(&key) {
                order.push(key.clone());
            }
            let e = acc.entry(key).or_insert((0.0, 0.0));
            e.0 += gq;
            e.1 += go;
        }
    }
    let n = drops as f64;
    let mut t = Table::new(&["scheme", "D", "gamma_q", "gamma_o", "loss"]);
    for key in order {
        let (gq, go) = acc[&key];
        t.push(vec![key.0.clone().into(), key.1.into(), (gq / n).into(), (go / n).into(), ((go - gq) / n).into()])?;
    }
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.tables.insert("snr_loss.csv".into(), t);
    Ok(out)
}

fn single_codeword_losses(
    cov: &SpatialCovariance,
    cb: &crate::codebook::Codebook,
    q_size: usize,
    dmax: usize,
) -> Result<Vec<(String, usize, f64, f64)>> {
    let series = crate::metrics::relative_snr_loss(cov, cb, dmax)?;
    let scheme = format!("Q={q_size}");
    Ok(series
        .d_values
        .iter()
        .enumerate()
        .map(|(i, &d)| (scheme.clone(), d, series.gamma_q[i], series.gamma_o[i]))
        .collect())
}

fn multi_codeword_losses(
    cov: &SpatialCovariance,
    cb: &crate::codebook::Codebook,
    size: usize,
    j: usize,
    dmax: usize,
) -> Result<Vec<(String, usize, f64, f64)>> {
    let per = dmax / j;
    let est = SnrEstimate {
        gamma: true_snrs(cov, cb, per)?,
        samples: vec![1; size],
    };
    let chosen = feedback_decision(&est, j)?;
    let scheme = format!("Q={size},J={j}");
    let eig = &cov.evd().eigenvalues;
    (1..=per)
        .map(|c| {
            let w = multi_codeword_precoder(cb, &chosen, c * j)?;
            let go: f64 = eig.iter().take(c * j).sum();
            let gq = go - loss_for_precoder(cov, &w)?;
            Ok((scheme.clone(), c * j, gq, go))
        })
        .collect()
}

fn multiuser_capacity(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    let m = cfg.array.antennas.expect("validated");
    let q_size = cfg.codebook.size.expect("validated");
    let d = cfg.codebook.retained.expect("validated");
    let snrs = cfg.simulation.snr_db.clone().expect("validated");
    let drops = cfg.simulation.drops.expect("validated");
    let cb = build_codebook(m, q_size, d)?;
    let mut settings = CapacitySettings {
        realizations: cfg.realizations(),
        ..CapacitySettings::default()
    };
    if let Some(k) = &cfg.simulation.subcarriers {
        settings.subcarriers = non_empty(k.clone(), "simulation.subcarriers")?;
    }

    let mut summary = Table::new(&["mode", "n_users", "snr_db", "capacity_bps_hz", "igi_power"]);
    let mut per_drop = Table::new(&["drop", "mode", "n_users", "snr_db", "capacity_bps_hz"]);
    for (ui, &users) in cfg.simulation.users.as_ref().expect("validated").iter().enumerate() {
        let family = child_seed(cfg.seed, ui as u64 + 1);
        let records: Vec<Vec<crate::multiuser::CapacityRecord>> = (0..drops)
            .into_par_iter()
            .map(|i| {
                let drop = drop_users(users, &cfg.channel, &cb, &mut stream(family, 2 * i as u64))?;
                evaluate_drop(&drop, &cb, &snrs, &settings, child_seed(family, 2 * i as u64 + 1))
            })
            .collect::<Result<_>>()?;
        for mode in [InnerMode::Proposed, InnerMode::DftBaseline] {
            for (si, &snr) in snrs.iter().enumerate() {
                let (mut cap, mut igi) = (0.0, 0.0);
                for (i, recs) in records.iter().enumerate() {
                    let r = recs
                        .iter()
                        .filter(|r| r.mode == mode)
                        .nth(si)
                        .expect("one record per mode and SNR");
                    cap += r.capacity;
                    igi += r.igi_power;
                    per_drop.push(vec![i.into(), mode.label().into(), users.into(), snr.into(), r.capacity.into()])?;
                }
                let n = drops as f64;
                summary.push(vec![mode.label().into(), users.into(), snr.into(), (cap / n).into(), (igi / n).into()])?;
            }
        }
    }
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.tables.insert("capacity.csv".into(), summary);
    out.tables.insert("capacity_drops.csv".into(), per_drop);
    Ok(out)
}

fn upa_capacity(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    let mv = cfg.array.vertical.expect("validated");
    let mh = cfg.array.horizontal.expect("validated");
    let p = cfg.codebook.vertical_size.expect("validated");
    let q = cfg.codebook.size.expect("validated");
    let d = cfg.codebook.retained.expect("validated");
    let snrs = cfg.simulation.snr_db.clone().expect("validated");
    let drops = cfg.simulation.drops.expect("validated");
    let cb = build_upa_codebook(mv, mh, p, q, d)?;
    let results: Vec<Vec<crate::multiuser::UpaCapacity>> = (0..drops)
        .into_par_iter()
        .map(|i| upa_drop_capacity(&cfg.planar_channel, &cb, &snrs, cfg.realizations(), &mut stream(cfg.seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["mode", "m_v", "m_h", "snr_db", "capacity_bps_hz"]);
    let n = drops as f64;
    for (label, pick) in [("proposed", true), ("dft", false)] {
        for (si, &snr) in snrs.iter().enumerate() {
            let total: f64 = results
                .iter()
                .map(|r| if pick { r[si].proposed } else { r[si].dft })
                .sum();
            t.push(vec![label.into(), mv.into(), mh.into(), snr.into(), (total / n).into()])?;
        }
    }
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.tables.insert("upa_capacity.csv".into(), t);
    Ok(out)
}

fn codebook_dump(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    let cb = build_codebook(
        cfg.array.antennas.expect("validated"),
        cfg.codebook.size.expect("validated"),
        cfg.codebook.retained.expect("validated"),
    )?;
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.tables.insert("eigenvalues.csv".into(), cb.eigenvalue_table());
    out.extras.insert("basis.txt".into(), cb.basis_fixture());
    Ok(out)
}

/// Result of one trend assertion.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn cell_f64(t: &Table, r: usize, col: &str) -> f64 {
    match &t.rows[r][t.column_index(col).expect("known column")] {
        Cell::Float(x) => *x,
        Cell::Int(v) => *v as f64,
        Cell::Text(s) => s.parse().unwrap_or(f64::NAN),
    }
}

fn cell_text(t: &Table, r: usize, col: &str) -> String {
    match &t.rows[r][t.column_index(col).expect("known column")] {
        Cell::Text(s) => s.clone(),
        Cell::Int(v) => v.to_string(),
        Cell::Float(x) => x.to_string(),
    }
}

/// Trend assertions for an experiment's results.
pub fn check_outcomes(out: &ExperimentOutput) -> Vec<CheckOutcome> {
    let mut res = Vec::new();
    match out.experiment {
        ExperimentKind::LeakageSpectrum => {
            let t = &out.tables["leakage_summary.csv"];
            let mut by: BTreeMap<(String, usize), f64> = BTreeMap::new();
            for r in 0..t.rows.len() {
                by.insert((cell_text(t, r, "precoder"), cell_f64(t, r, "D") as usize), cell_f64(t, r, "out_of_band"));
            }
            let ds: Vec<usize> = by.keys().map(|k| k.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            for &d in &ds {
                let (p, f) = (by[&("proposed".into(), d)], by[&("dft".into(), d)]);
                res.push(CheckOutcome::new(
                    format!("leakage proposed < dft at D={d}"),
                    p < f,
                    format!("{p:.4e} vs {f:.4e}"),
                ));
            }
            for w in ds.windows(2) {
                let (a, b) = (by[&("proposed".into(), w[0])], by[&("proposed".into(), w[1])]);
                res.push(CheckOutcome::new(
                    format!("proposed leakage D={} < D={}", w[0], w[1]),
                    a < b,
                    format!("{a:.4e} vs {b:.4e}"),
                ));
            }
        }
        ExperimentKind::MseVsQ => {
            let t = &out.tables["mse.csv"];
            let mut by: BTreeMap<(usize, String), Vec<(usize, f64)>> = BTreeMap::new();
            for r in 0..t.rows.len() {
                by.entry((cell_f64(t, r, "K") as usize, cell_text(t, r, "snr_db")))
                    .or_default()
                    .push((cell_f64(t, r, "Q") as usize, cell_f64(t, r, "mse")));
            }
            for ((k, snr), mut v) in by {
                v.sort_by_key(|x| x.0);
                let ok = v.windows(2).all(|w| w[0].1 < w[1].1);
                res.push(CheckOutcome::new(format!("mse increasing in Q at K={k}, snr={snr}"), ok, format!("{v:?}")));
            }
        }
        ExperimentKind::SnrLoss => {
            let t = &out.tables["snr_loss.csv"];
            let dmax = (0..t.rows.len()).map(|r| cell_f64(t, r, "D") as usize).max().unwrap_or(0);
            let at: Vec<(String, f64)> = (0..t.rows.len())
                .filter(|&r| cell_f64(t, r, "D") as usize == dmax)
                .map(|r| (cell_text(t, r, "scheme"), cell_f64(t, r, "loss")))
                .collect();
            for w in at.windows(2) {
                res.push(CheckOutcome::new(
                    format!("loss {} >= {} at D={dmax}", w[0].0, w[1].0),
                    w[0].1 >= w[1].1,
                    format!("{:.4} vs {:.4}", w[0].1, w[1].1),
                ));
            }
            let ok = (0..t.rows.len()).all(|r| cell_f64(t, r, "loss") >= -1e-9);
            res.push(CheckOutcome::new("loss is non-negative", ok, ""));
        }
        ExperimentKind::MultiuserCapacity => {
            let t = &out.tables["capacity.csv"];
            let mut by: BTreeMap<(usize, String), [f64; 2]> = BTreeMap::new();
            for r in 0..t.rows.len() {
                let e = by
                    .entry((cell_f64(t, r, "n_users") as usize, cell_text(t, r, "snr_db")))
                    .or_default();
                e[usize::from(cell_text(t, r, "mode") == "dft")] = cell_f64(t, r, "capacity_bps_hz");
            }
            for ((users, snr), [p, f]) in by {
                if users == 1 {
                    let rel = (p - f).abs() / f;
                    res.push(CheckOutcome::new(
                        format!("single user proposed ~ dft at snr={snr}"),
                        rel < 0.05,
                        format!("relative gap {rel:.4}"),
                    ));
                } else {
                    res.push(CheckOutcome::new(
                        format!("{users} users proposed > dft at snr={snr}"),
                        p > f,
                        format!("{p:.4} vs {f:.4}"),
                    ));
                }
            }
        }
        ExperimentKind::UpaCapacity => {
            let t = &out.tables["upa_capacity.csv"];
            let half = t.rows.len() / 2;
            for r in 0..half {
                let (p, f) = (cell_f64(t, r, "capacity_bps_hz"), cell_f64(t, r + half, "capacity_bps_hz"));
                res.push(CheckOutcome::new(
                    format!("planar proposed >= dft at snr={}", cell_text(t, r, "snr_db")),
                    p >= f,
                    format!("{p:.4} vs {f:.4}"),
                ));
            }
        }
        ExperimentKind::CodebookDump => {
            let ok = out
                .extras
                .get("basis.txt")
                .and_then(|text| crate::codebook::parse_basis_fixture(text).ok())
                .is_some_and(|bases| bases.iter().all(|b| b.orthonormality_deviation() < 1e-10));
            res.push(CheckOutcome::new("bases orthonormal", ok, ""));
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    const LEAKAGE: &str = r#"
experiment = "leakage-spectrum"
seed = 3

[array]
antennas = 32

[codebook]
size = 4
retained_values = [4, 5]

[simulation]
realizations = 10

[band_paths]
lo = 0.0
hi = 0.25
count = 16

[output]
grid = 256
"#;

    #[test]
    fn parses_and_runs_leakage() {
        let cfg = ScenarioConfig::parse(LEAKAGE).unwrap();
        let out = run_experiment(&cfg).unwrap();
        let t = &out.tables["leakage_summary.csv"];
        assert_eq!(t.rows.len(), 4);
        assert_eq!(out.tables["leakage_spectrum.csv"].rows.len(), 4 * 256);
        let checks = check_outcomes(&out);
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn missing_seed_is_reported() {
        let text = LEAKAGE.replace("seed = 3\n", "");
        let err = ScenarioConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn missing_required_field_names_it() {
        let text = LEAKAGE.replace("antennas = 32\n", "");
        match ScenarioConfig::parse(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "array.antennas"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = LEAKAGE.replace("[array]\n", "[array]\nantenas = 4\n");
        let err = ScenarioConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("antenas"), "{err}");
    }

    #[test]
    fn unknown_experiment_is_rejected() {
        let text = LEAKAGE.replace("leakage-spectrum", "unknown-kind");
        assert!(ScenarioConfig::parse(&text).is_err());
    }

    #[test]
    fn codebook_dump_round_trips() {
        let cfg = ScenarioConfig::parse(
            "experiment = \"codebook-dump\"\nseed = 1\n[array]\nantennas = 16\n[codebook]\nsize = 4\nretained = 2\n",
        )
        .unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.tables["eigenvalues.csv"].rows.len(), 4 * 16);
        assert!(check_outcomes(&out)[0].passed);
        let dir = tempfile::tempdir().unwrap();
        let files = out.write(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        load_result(&dir.path().join("eigenvalues.csv")).unwrap();
    }

    #[test]
    fn schema_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mse.csv");
        fs::write(&p, "Q,K,mse\n4,64,0.1\n").unwrap();
        assert!(matches!(load_result(&p), Err(Error::Schema { .. })));
    }

    #[test]
    fn output_dir_precedence() {
        let cfg = ScenarioConfig::parse(LEAKAGE).unwrap();
        assert_eq!(cfg.resolve_output_dir(Some(Path::new("x"))), PathBuf::from("x"));
        let mut cfg2 = cfg.clone();
        cfg2.output_dir = Some("y".into());
        assert_eq!(cfg2.resolve_output_dir(None), PathBuf::from("y"));
    }
}
