//! Precoder quality measures.
//!
//! Average SNR `Tr(W^H R W)`, the four codeword-selection rules, the
//! eigenvalue sandwich on `Tr(U_q^H R U_q)`, transmit spectra and spatial
//! leakage, power concentration, the circulant closed form, relative SNR
//! loss against the ideal eigen-precoder, and chordal distances between
//! codeword spectra.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::{steering_vector, PathSet, SpatialCovariance};
use crate::codebook::{dft_band_indices, Band, Codebook, CodewordEntry};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_distance, inner, norm, trace_product, CMatrix, HermitianMatrix};

/// Orthonormality tolerance for precoders passed to [`average_snr`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Default spectrum grid for leakage reports.
pub const DEFAULT_GRID: usize = 4096;

/// `γ = Tr(W^H R W)` for an inner precoder with orthonormal columns.
pub fn average_snr(w: &CMatrix, r: &HermitianMatrix) -> Result<f64> {
    let dev = w.orthonormality_deviation();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal { deviation: dev });
    }
    let g = r.projected_trace(w)?;
    Ok(g.max(0.0))
}

/// Rule used by the receiver to pick a codeword.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionCriterion {
    /// Largest `Tr(U_q^H R U_q)`.
    AvgSnr,
    /// Largest `Tr(R_q R)`.
    TraceBound,
    /// Smallest `‖R_q − R‖_F`.
    Frobenius,
    /// Smallest chordal distance between the codeword spectrum and the
    /// channel spectrum, both truncated to lags `|m| < M`.
    SpectralChordal,
}

impl SelectionCriterion {
    pub const ALL: [SelectionCriterion; 4] = [
        SelectionCriterion::AvgSnr,
        SelectionCriterion::TraceBound,
        SelectionCriterion::Frobenius,
        SelectionCriterion::SpectralChordal,
    ];

    fn maximizes(self) -> bool {
        matches!(self, SelectionCriterion::AvgSnr | SelectionCriterion::TraceBound)
    }
}

/// Cosine between the lag-truncated channel spectrum and codeword spectrum.
///
/// By Parseval, `∫ R_q(v) R(v) dv` over trigonometric polynomials of degree
/// `< M` is `Σ_{|m|<M} r[m] conj(r_q[m])`.
fn spectral_cosine(r: &[Complex64], rq: &[Complex64]) -> f64 {
    let lagged = |a: &[Complex64], b: &[Complex64]| -> f64 {
        let mut s = (a[0] * b[0].conj()).re;
        for k in 1..a.len() {
            s += 2.0 * (a[k] * b[k].conj()).re;
        }
        s
    };
    let num = lagged(r, rq);
    let den = (lagged(r, r) * lagged(rq, rq)).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Per-codeword score under `criterion` (larger-is-better for SNR/trace,
/// smaller-is-better for the distances).
pub fn codeword_scores(codebook: &Codebook, r: &SpatialCovariance, criterion: SelectionCriterion) -> Result<Vec<f64>> {
    if r.dim() != codebook.antennas {
        return Err(Error::DimensionMismatch(format!(
            "{}-antenna covariance against a {}-antenna codebook",
            r.dim(),
            codebook.antennas
        )));
    }
    codebook
        .entries
        .iter()
        .map(|e| match criterion {
            SelectionCriterion::AvgSnr => average_snr(&e.basis(), &r.matrix),
            SelectionCriterion::TraceBound => trace_product(&e.matrix, &r.matrix),
            SelectionCriterion::Frobenius => frobenius_distance(e.matrix.matrix(), r.matrix.matrix()),
            SelectionCriterion::SpectralChordal => {
                let c = spectral_cosine(&r.correlation, &e.correlation).max(0.0);
                Ok((1.0 - c * c).max(0.0).sqrt())
            }
        })
        .collect()
}

/// Index of the best score; ties go to the smaller index.
pub fn best_index(scores: &[f64], maximize: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let better = if maximize { s > scores[b] } else { s < scores[b] };
                if better {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Picks `q*` under the given criterion.
pub fn select_codeword(codebook: &Codebook, r: &SpatialCovariance, criterion: SelectionCriterion) -> Result<usize> {
    if codebook.entries.is_empty() {
        return Err(Error::InvalidArgument("empty codebook".into()));
    }
    let scores = codeword_scores(codebook, r, criterion)?;
    Ok(best_index(&scores, criterion.maximizes()).expect("non-empty"))
}

/// The three terms of the eigenvalue sandwich
/// `λ_max⁻¹ Tr(R̃_q R) ≤ Tr(U_q^H R U_q) ≤ λ_min⁻¹ Tr(R̃_q R)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
    /// `Tr(R_q R)` with the full-rank codeword matrix, for comparison.
    pub full_rank_trace: f64,
}

impl BoundCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.lower <= self.mid + tol && self.mid <= self.upper + tol
    }
}

/// Sandwich for a codeword entry, with `R̃_q = U_q Λ_q U_q^H` (rank `D`).
pub fn codeword_bound_check(r: &HermitianMatrix, entry: &CodewordEntry) -> Result<BoundCheck> {
    let mut check = bound_check_with(r, &entry.basis(), entry.retained_eigenvalues())?;
    check.full_rank_trace = trace_product(&entry.matrix, r)?;
    Ok(check)
}

/// Sandwich for an arbitrary orthonormal basis and positive eigenvalues.
pub fn bound_check_with(r: &HermitianMatrix, basis: &CMatrix, eigenvalues: &[f64]) -> Result<BoundCheck> {
    if eigenvalues.len() != basis.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} eigenvalues for {} columns",
            eigenvalues.len(),
            basis.cols()
        )));
    }
    if let Some(bad) = eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument(format!("retained eigenvalue {bad} is not positive")));
    }
    let low_rank = HermitianMatrix::from_spectral(basis, eigenvalues)?;
    let t = trace_product(&low_rank, r)?;
    let lmax = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BoundCheck {
        lower: t / lmax,
        mid: r.projected_trace(basis)?,
        upper: t / lmin,
        full_rank_trace: t,
    })
}

/// Transmit spectrum of one precoded symbol and its band split.
#[derive(Clone, Debug)]
pub struct LeakageReport {
    pub band: Band,
    /// Grid points `v_i = −1/2 + i/G`.
    pub grid: Vec<f64>,
    /// `A(v_i) = (1/M) s^H(v_i) W v`.
    pub spectrum: Vec<Complex64>,
    /// Closed-form in-band share `x^H C x / x^H x`.
    pub in_band_fraction: f64,
    pub out_of_band_fraction: f64,
    /// In-band share estimated by quadrature on the grid.
    pub quadrature_in_band_fraction: f64,
}

/// Evaluates `A(v) = (1/M) s^H(v) x` with `x = W·outer` on a uniform grid.
pub fn transmit_spectrum(w: &CMatrix, outer: &[Complex64], grid: usize, band: Band) -> Result<LeakageReport> {
    let n = norm(outer);
    if n == 0.0 {
        return Err(Error::InvalidArgument("outer precoder is zero".into()));
    }
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("outer precoder norm is {n}, expected 1")));
    }
    if grid < 2 {
        return Err(Error::InvalidArgument("spectrum grid needs at least 2 points".into()));
    }
    let x = w.mat_vec(outer)?;
    let m = x.len();
    let grid_v: Vec<f64> = (0..grid).map(|i| -0.5 + i as f64 / grid as f64).collect();
    let spectrum: Vec<Complex64> = grid_v
        .iter()
        .map(|&v| inner(&steering_vector(v, m), &x) / m as f64)
        .collect();
    let in_band = power_concentration(&x, band)?;
    let power: Vec<f64> = spectrum.iter().map(|a| a.norm_sqr()).collect();
    let quad = band_quadrature(&power, band) / (power.iter().sum::<f64>() / grid as f64);
    Ok(LeakageReport {
        band,
        grid: grid_v,
        spectrum,
        in_band_fraction: in_band,
        out_of_band_fraction: 1.0 - in_band,
        quadrature_in_band_fraction: quad,
    })
}

/// Integral over `band` of a periodic function sampled at `v_i = −1/2 + i/G`.
///
/// Composite Simpson when both edges sit on the grid with an even number of
/// intervals between them, trapezoid for an odd count, and a cell-centre sum
/// otherwise.
pub fn band_quadrature(samples: &[f64], band: Band) -> f64 {
    let g = samples.len();
    let h = 1.0 / g as f64;
    let at = |i: usize| samples[i % g];
    let lo = (band.lo + 0.5) * g as f64;
    let hi = (band.hi + 0.5) * g as f64;
    let aligned = (lo - lo.round()).abs() < 1e-9 && (hi - hi.round()).abs() < 1e-9;
    if !aligned {
        return (0..g)
            .filter(|&i| band.contains(-0.5 + (i as f64 + 0.5) * h))
            .map(|i| 0.5 * (at(i) + at(i + 1)) * h)
            .sum();
    }
    let (i0, i1) = (lo.round() as usize, hi.round() as usize);
    let n = i1 - i0;
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 0 {
        let mut s = at(i0) + at(i1);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * at(i0 + k);
        }
        s * h / 3.0
    } else {
        let mut s = 0.5 * (at(i0) + at(i1));
        for k in 1..n {
            s += at(i0 + k);
        }
        s * h
    }
}

/// In-band share of the transmit spectrum of `w`,
/// `∫_band |A|² / ∫ |A|² = w^H C_band w / w^H w`.
pub fn power_concentration(w: &[Complex64], band: Band) -> Result<f64> {
    let n2 = norm(w).powi(2);
    if n2 == 0.0 {
        return Err(Error::InvalidArgument("zero vector has no spectrum".into()));
    }
    let c = band.kernel(w.len());
    Ok((c.quadratic_form(w) / n2).clamp(0.0, 1.0))
}

/// [`power_concentration`] by quadrature of `|A(v)|²` on a grid.
pub fn power_concentration_quadrature(w: &[Complex64], band: Band, grid: usize) -> Result<f64> {
    let n = norm(w);
    if n == 0.0 {
        return Err(Error::InvalidArgument("zero vector has no spectrum".into()));
    }
    let unit: Vec<Complex64> = w.iter().map(|z| z / n).collect();
    let w_col = CMatrix::column_vector(&unit);
    Ok(transmit_spectrum(&w_col, &[Complex64::new(1.0, 0.0)], grid, band)?.quadrature_in_band_fraction)
}

/// Ideal outer precoder `v = W^H h / ‖W^H h‖`; `None` if `W^H h = 0`.
pub fn ideal_outer_precoder(w: &CMatrix, h: &[Complex64]) -> Result<Option<Vec<Complex64>>> {
    let g = w.adjoint_mat_vec(h)?;
    let n = norm(&g);
    Ok((n > 0.0).then(|| g.into_iter().map(|z| z / n).collect()))
}

/// Mean in-band share of `W v` over channel snapshots, using the ideal
/// outer precoder for each snapshot.
pub fn mean_in_band_fraction<'a>(w: &CMatrix, band: Band, channels: impl IntoIterator<Item = &'a [Complex64]>) -> Result<f64> {
    let kernel = band.kernel(w.rows());
    let (mut acc, mut count) = (0.0, 0usize);
    for h in channels {
        if let Some(v) = ideal_outer_precoder(w, h)? {
            let x = w.mat_vec(&v)?;
            acc += kernel.quadratic_form(&x) / norm(&x).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no usable channel snapshots".into()));
    }
    Ok(acc / count as f64)
}

/// Largest out-of-band response `max_v ‖(1/M) s^H(v) U‖` over a grid,
/// skipping wave numbers within `margin` of the band edges (measured
/// cyclically).
pub fn max_out_of_band_response(u: &CMatrix, band: Band, margin: f64, grid: usize) -> f64 {
    let m = u.rows();
    let dist_to_band = |v: f64| -> f64 {
        if band.contains(v) {
            return 0.0;
        }
        let d = |a: f64, b: f64| {
            let x = (a - b).rem_euclid(1.0);
            x.min(1.0 - x)
        };
        d(v, band.lo).min(d(v, band.hi))
    };
    (0..grid)
        .map(|i| -0.5 + (i as f64 + 0.5) / grid as f64)
        .filter(|&v| dist_to_band(v) >= margin)
        .map(|v| {
            let resp = u.adjoint_mat_vec(&steering_vector(v, m)).expect("matching length");
            norm(&resp) / m as f64
        })
        .fold(0.0, f64::max)
}

/// Average SNR of the DFT-submatrix precoder when every path sits on the
/// DFT grid: `M · Σ_{n_l ∈ N_q} σ_l²`.
pub fn circular_case_snr(paths: &PathSet, q: usize, m: usize, q_size: usize) -> Result<f64> {
    let beams = dft_band_indices(m, q_size, q)?;
    let mut total = 0.0;
    for (i, p) in paths.paths().iter().enumerate() {
        let pos = p.v * m as f64;
        if (pos - pos.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "path {i} at wave number {} is not a multiple of 1/{m}",
                p.v
            )));
        }
        let n = (pos.round() as i64).rem_euclid(m as i64) as usize;
        if beams.contains(&n) {
            total += p.sigma2;
        }
    }
    Ok(m as f64 * total)
}

/// Average SNR of a growing precoder against the ideal eigen-precoder.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrLossSeries {
    /// `D = 1..=Dmax`.
    pub d_values: Vec<usize>,
    pub gamma_q: Vec<f64>,
    pub gamma_o: Vec<f64>,
    /// `L[D] = γ_o[D] − γ_q[D]`.
    pub loss: Vec<f64>,
    /// `Δ[D] = (γ[D+1] − γ[D]) / M` for `D = 1..Dmax−1`.
    pub delta_q: Vec<f64>,
    pub delta_o: Vec<f64>,
}

/// Loss series when the precoder for dimension `D` is the leading `D`
/// columns of `columns`.
pub fn snr_loss_series(r: &SpatialCovariance, columns: &CMatrix, dmax: usize) -> Result<SnrLossSeries> {
    if dmax == 0 || dmax > columns.cols() || dmax > r.dim() {
        return Err(Error::InvalidArgument(format!(
            "Dmax={dmax} with {} columns and M={}",
            columns.cols(),
            r.dim()
        )));
    }
    let m = r.dim() as f64;
    let eig = &r.evd().eigenvalues;
    let d_values: Vec<usize> = (1..=dmax).collect();
    let mut gamma_q = Vec::with_capacity(dmax);
    let mut gamma_o = Vec::with_capacity(dmax);
    let (mut gq, mut go) = (0.0, 0.0);
    for d in 0..dmax {
        gq += r.matrix.quadratic_form(&columns.column(d));
        go += eig[d];
        gamma_q.push(gq);
        gamma_o.push(go);
    }
    let loss = gamma_o.iter().zip(&gamma_q).map(|(o, q)| o - q).collect();
    let diff = |g: &[f64]| g.windows(2).map(|w| (w[1] - w[0]) / m).collect::<Vec<_>>();
    Ok(SnrLossSeries {
        d_values,
        delta_q: diff(&gamma_q),
        delta_o: diff(&gamma_o),
        gamma_q,
        gamma_o,
        loss,
    })
}

/// Relative SNR loss of the codeword selected by average SNR, for
/// `D = 1..=Dmax`.
pub fn relative_snr_loss(r: &SpatialCovariance, codebook: &Codebook, dmax: usize) -> Result<SnrLossSeries> {
    let q = select_codeword(codebook, r, SelectionCriterion::AvgSnr)?;
    let cols = codebook.entry(q).leading(dmax)?;
    snr_loss_series(r, &cols, dmax)
}

/// `γ_o[D] − Tr(W^H R W)` with `D` the column count of `w`.
pub fn loss_for_precoder(r: &SpatialCovariance, w: &CMatrix) -> Result<f64> {
    let d = w.cols();
    let ideal: f64 = r.evd().eigenvalues.iter().take(d).sum();
    Ok(ideal - average_snr(w, &r.matrix)?)
}

/// Chordal distance `√(1 − |∫R_p R_q dv|²)` between unit-energy flat
/// codeword spectra.
pub fn spectral_chordal_distance(p: usize, q: usize, q_size: usize) -> f64 {
    let (a, b) = (Band::codeword(p, q_size), Band::codeword(q, q_size));
    let overlap = (a.hi.min(b.hi) - a.lo.max(b.lo)).max(0.0);
    let ip = q_size as f64 * overlap;
    (1.0 - ip * ip).max(0.0).sqrt()
}

/// `(1/N) S_N S_N^H` with `S_N = [s(−1/2 + q/Q + n/(QN))]_{n=0}^{N−1}`,
/// which tends to `√Q · R_q`.
pub fn band_sampling_gram(m: usize, q: usize, q_size: usize, n: usize) -> Result<HermitianMatrix> {
    band_sampling_gram_offset(m, q, q_size, n, 0.0)
}

/// As [`band_sampling_gram`] with sample points shifted by `offset` of a
/// step (`0.5` gives midpoint sampling).
pub fn band_sampling_gram_offset(m: usize, q: usize, q_size: usize, n: usize, offset: f64) -> Result<HermitianMatrix> {
    if n == 0 || m == 0 || q >= q_size {
        return Err(Error::InvalidArgument("need N, M >= 1 and q < Q".into()));
    }
    let lo = Band::codeword(q, q_size).lo;
    let step = 1.0 / (q_size * n) as f64;
    // entries depend on m − m' only; accumulate the correlation sequence
    let r: Vec<Complex64> = (0..m)
        .map(|k| {
            (0..n)
                .map(|i| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * (lo + (i as f64 + offset) * step)))
                .sum::<Complex64>()
                / n as f64
        })
        .collect();
    let mut r = r;
    r[0] = Complex64::new(1.0, 0.0);
    crate::linalg::toeplitz_from_correlation(&r)
}
