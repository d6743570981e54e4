//! Spectrum-quantized covariance codebooks.
//!
//! The wave-number axis `[−1/2, 1/2)` is split into `Q` equal bands. Band
//! `q` carries a flat, unit-energy spectrum `√Q` on
//! `[−1/2 + q/Q, −1/2 + (q+1)/Q)`, whose correlation sequence is
//! `r_q[m] = sinc(πm/Q)/√Q · exp(j2πm·f_q)` with `f_q` the band centre. The
//! Toeplitz matrix `R_q` built from it is a modulated sinc kernel, so its
//! leading eigenvectors are modulated discrete prolate spheroidal sequences
//! and they are what the base station stores as inner precoders.
//!
//! Also here: the DFT-submatrix baseline, the planar-array (Kronecker)
//! codebook and the Dirichlet window `sin²(πMv)/sin²(πv)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::channel::wrap_wavenumber;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_evd, toeplitz_from_correlation, CMatrix, HermitianMatrix};
use crate::table::{format_float, Table};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// `sin(x)/x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// A half-open wave-number interval `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// Band `q` of a `Q`-way partition of `[−1/2, 1/2)`.
    pub fn codeword(q: usize, q_size: usize) -> Self {
        let w = 1.0 / q_size as f64;
        Band {
            lo: -0.5 + q as f64 * w,
            hi: -0.5 + (q + 1) as f64 * w,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v < self.hi
    }

    /// Concentration kernel `C[m, n] = ∫_band exp(j2π(m−n)v) dv`, so that
    /// `w^H C w / w^H w` is the in-band share of the transmit spectrum of
    /// `w`.
    pub fn kernel(&self, m: usize) -> HermitianMatrix {
        let (w, f) = (self.width(), self.centre());
        let mut r: Vec<Complex64> = (0..m)
            .map(|k| Complex64::from_polar(w * sinc(PI * k as f64 * w), 2.0 * PI * k as f64 * f))
            .collect();
        r[0] = Complex64::new(w, 0.0);
        toeplitz_from_correlation(&r).expect("r[0] = width > 0")
    }
}

/// Centre wave number `−1/2 + (q + 1/2)/Q` of band `q`.
pub fn band_centre(q: usize, q_size: usize) -> f64 {
    -0.5 + (q as f64 + 0.5) / q_size as f64
}

/// Correlation `r_q[m]` of the flat codeword spectrum on band `q`.
pub fn codeword_correlation(q: usize, q_size: usize, m: i64) -> Complex64 {
    let qf = q_size as f64;
    let mag = sinc(PI * m as f64 / qf) / qf.sqrt();
    Complex64::from_polar(mag, 2.0 * PI * m as f64 * band_centre(q, q_size))
}

/// Hermitian Toeplitz codeword matrix `R_q`.
pub fn codeword_matrix(m: usize, q: usize, q_size: usize) -> Result<HermitianMatrix> {
    let mut r: Vec<Complex64> = (0..m as i64).map(|k| codeword_correlation(q, q_size, k)).collect();
    r[0] = Complex64::new(r[0].re, 0.0);
    toeplitz_from_correlation(&r)
}

/// Number of eigenvalues above [`EIGEN_FLOOR`] times the largest.
fn positive_count(eigenvalues: &[f64]) -> usize {
    let max = eigenvalues.first().copied().unwrap_or(0.0);
    eigenvalues.iter().take_while(|&&l| l > EIGEN_FLOOR * max && l > 0.0).count()
}

/// One quantized covariance matrix with its eigenbasis.
#[derive(Clone, Debug)]
pub struct CodewordEntry {
    pub q: usize,
    pub codebook_size: usize,
    /// `r_q[m]` for `m = 0..M−1`.
    pub correlation: Vec<Complex64>,
    pub matrix: HermitianMatrix,
    /// All `M` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// All `M` eigenvectors; the inner precoder uses the leading `D`.
    eigenvectors: CMatrix,
    retained: usize,
}

impl CodewordEntry {
    fn new(m: usize, q: usize, q_size: usize, retained: usize) -> Result<Self> {
        let matrix = codeword_matrix(m, q, q_size)?;
        let evd = hermitian_evd(&matrix);
        let available = positive_count(&evd.eigenvalues);
        if retained > available {
            return Err(Error::InsufficientRank {
                requested: retained,
                available,
            });
        }
        Ok(CodewordEntry {
            q,
            codebook_size: q_size,
            correlation: (0..m as i64).map(|k| codeword_correlation(q, q_size, k)).collect(),
            matrix,
            eigenvalues: evd.eigenvalues,
            eigenvectors: evd.eigenvectors,
            retained,
        })
    }

    pub fn band(&self) -> Band {
        Band::codeword(self.q, self.codebook_size)
    }

    pub fn antennas(&self) -> usize {
        self.matrix.dim()
    }

    /// Number of retained columns `D`.
    pub fn retained(&self) -> usize {
        self.retained
    }

    /// `U_q`: the leading `D` eigenvectors.
    pub fn basis(&self) -> CMatrix {
        self.eigenvectors.leading_columns(self.retained)
    }

    /// The leading `n` eigenvectors, for any `n` up to the numerically
    /// positive count.
    pub fn leading(&self, n: usize) -> Result<CMatrix> {
        let available = positive_count(&self.eigenvalues);
        if n > available {
            return Err(Error::InsufficientRank {
                requested: n,
                available,
            });
        }
        Ok(self.eigenvectors.leading_columns(n))
    }

    pub fn all_eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn retained_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.retained]
    }

    pub fn lambda_max(&self) -> f64 {
        self.retained_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.retained_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rank-`D` approximation `U_q Λ_q U_q^H`.
    pub fn low_rank(&self) -> HermitianMatrix {
        HermitianMatrix::from_spectral(&self.basis(), self.retained_eigenvalues()).expect("consistent dims")
    }
}

/// `Q` codewords for an `M`-antenna ULA, each with a `D`-column eigenbasis.
#[derive(Clone, Debug)]
pub struct Codebook {
    pub antennas: usize,
    pub size: usize,
    pub retained: usize,
    pub entries: Vec<CodewordEntry>,
}

/// Builds all `Q` codewords and their eigenbases.
pub fn build_codebook(m: usize, q_size: usize, d: usize) -> Result<Codebook> {
    if q_size == 0 {
        return Err(Error::InvalidArgument("codebook size must be at least 1".into()));
    }
    if d == 0 || d > m {
        return Err(Error::InvalidArgument(format!("need 1 <= D <= M, got D={d}, M={m}")));
    }
    let entries = (0..q_size)
        .map(|q| CodewordEntry::new(m, q, q_size, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(Codebook {
        antennas: m,
        size: q_size,
        retained: d,
        entries,
    })
}

impl Codebook {
    pub fn entry(&self, q: usize) -> &CodewordEntry {
        &self.entries[q]
    }

    /// Eigenvalues of every codeword, one row per `(q, index)`.
    pub fn eigenvalue_table(&self) -> Table {
        let mut t = Table::new(&["q", "index", "eigenvalue"]);
        for e in &self.entries {
            for (i, &l) in e.eigenvalues.iter().enumerate() {
                t.push(vec![e.q.into(), i.into(), l.into()]).expect("finite");
            }
        }
        t
    }

    /// Text fixture of every `U_q`: a header line, then one
    /// `q d m re im` line per entry.
    pub fn basis_fixture(&self) -> String {
        let mut s = format!("# covquant basis M={} Q={} D={}\n", self.antennas, self.size, self.retained);
        for e in &self.entries {
            let u = e.basis();
            for d in 0..u.cols() {
                for m in 0..u.rows() {
                    let z = u[(m, d)];
                    let _ = writeln!(s, "{} {} {} {} {}", e.q, d, m, format_float(z.re), format_float(z.im));
                }
            }
        }
        s
    }

    pub fn write_basis_fixture(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.basis_fixture()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a fixture written by [`Codebook::basis_fixture`] back into one
/// `M x D` matrix per codeword.
pub fn parse_basis_fixture(text: &str) -> Result<Vec<CMatrix>> {
    let bad = |reason: String| Error::Parse {
        what: "basis fixture".into(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty fixture".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .filter_map(|t| t.split_once('=').and_then(|(_, v)| v.parse().ok()))
        .collect();
    let [m, q_size, d] = dims[..] else {
        return Err(bad(format!("malformed header `{header}`")));
    };
    let mut out = vec![CMatrix::zeros(m, d); q_size];
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(format!("line {}: expected 5 fields", i + 2)));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("line {}: {e}", i + 2)));
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 2)));
        let (q, dd, mm) = (idx(f[0])?, idx(f[1])?, idx(f[2])?);
        if q >= q_size || dd >= d || mm >= m {
            return Err(bad(format!("line {}: index out of range", i + 2)));
        }
        out[q][(mm, dd)] = Complex64::new(num(f[3])?, num(f[4])?);
    }
    Ok(out)
}

/// Top-`D` eigenvectors of the unmodulated kernel `{sinc(π(m−n)/Q)}`.
///
/// The kernel is real symmetric, so the returned entries are real.
pub fn standard_dpss_basis(m: usize, q_size: usize, d: usize) -> Result<CMatrix> {
    let (basis, _) = standard_dpss(m, q_size, d)?;
    Ok(basis)
}

/// Standard DPSS basis together with the kernel eigenvalues.
pub fn standard_dpss(m: usize, q_size: usize, d: usize) -> Result<(CMatrix, Vec<f64>)> {
    if q_size == 0 || d == 0 || d > m {
        return Err(Error::InvalidArgument(format!(
            "need Q >= 1 and 1 <= D <= M, got Q={q_size}, D={d}, M={m}"
        )));
    }
    let r: Vec<Complex64> = (0..m)
        .map(|k| Complex64::new(sinc(PI * k as f64 / q_size as f64), 0.0))
        .collect();
    let kernel = toeplitz_from_correlation(&r)?;
    let evd = hermitian_evd(&kernel);
    let available = positive_count(&evd.eigenvalues);
    if d > available {
        return Err(Error::InsufficientRank {
            requested: d,
            available,
        });
    }
    let mut basis = evd.eigenvectors.leading_columns(d);
    for r in 0..basis.rows() {
        for c in 0..basis.cols() {
            basis[(r, c)].im = 0.0;
        }
    }
    Ok((basis, evd.eigenvalues))
}

/// Unit-norm DFT column `f_n[m] = exp(j2πmn/M)/√M`, matched to a path at
/// wave number `n/M`.
pub fn dft_column(n: usize, m: usize) -> Vec<Complex64> {
    let s = 1.0 / (m as f64).sqrt();
    (0..m)
        .map(|i| Complex64::from_polar(s, 2.0 * PI * ((i * n) % m) as f64 / m as f64))
        .collect()
}

/// DFT indices whose wave numbers `n/M` (wrapped into `[−1/2, 1/2)`) fall
/// in band `q`, in increasing wave-number order.
pub fn dft_band_indices(m: usize, q_size: usize, q: usize) -> Result<Vec<usize>> {
    if q_size == 0 || m % q_size != 0 {
        return Err(Error::InvalidArgument(format!("Q={q_size} does not divide M={m}")));
    }
    if q >= q_size {
        return Err(Error::InvalidArgument(format!("codeword {q} out of range for Q={q_size}")));
    }
    let band = Band::codeword(q, q_size);
    let mut idx: Vec<usize> = (0..m).filter(|&n| band.contains(dft_wavenumber(n, m))).collect();
    idx.sort_by(|&a, &b| dft_wavenumber(a, m).total_cmp(&dft_wavenumber(b, m)));
    Ok(idx)
}

/// Wave number of DFT column `n`, wrapped into `[−1/2, 1/2)`.
pub fn dft_wavenumber(n: usize, m: usize) -> f64 {
    wrap_wavenumber(n as f64 / m as f64)
}

/// `F_q`: the `M/Q` DFT columns whose beams lie in band `q`.
pub fn dft_submatrix(m: usize, q_size: usize, q: usize) -> Result<CMatrix> {
    let idx = dft_band_indices(m, q_size, q)?;
    let cols: Vec<Vec<Complex64>> = idx.iter().map(|&n| dft_column(n, m)).collect();
    CMatrix::from_columns(&cols)
}

/// Selects the `d` columns of `w` with the largest in-band concentration;
/// ties (within 1e-12) go to the earlier column. Selected columns keep
/// their original order.
pub fn most_concentrated_columns(w: &CMatrix, kernel: &HermitianMatrix, d: usize) -> Result<Vec<usize>> {
    if d == 0 || d > w.cols() {
        return Err(Error::InvalidArgument(format!("cannot keep {d} of {} columns", w.cols())));
    }
    let conc: Vec<f64> = (0..w.cols())
        .map(|c| {
            let col = w.column(c);
            kernel.quadratic_form(&col) / crate::linalg::norm(&col).powi(2)
        })
        .collect();
    let mut order: Vec<usize> = (0..w.cols()).collect();
    order.sort_by(|&a, &b| {
        if (conc[a] - conc[b]).abs() <= 1e-12 {
            a.cmp(&b)
        } else {
            conc[b].total_cmp(&conc[a])
        }
    });
    let mut keep: Vec<usize> = order.into_iter().take(d).collect();
    keep.sort_unstable();
    Ok(keep)
}

/// DFT baseline precoder for band `q` with `D` columns: the `D` most
/// concentrated columns of `F_q`.
pub fn dft_baseline(m: usize, q_size: usize, q: usize, d: usize) -> Result<CMatrix> {
    let f = dft_submatrix(m, q_size, q)?;
    let keep = most_concentrated_columns(&f, &Band::codeword(q, q_size).kernel(m), d)?;
    Ok(f.select_columns(&keep))
}

/// `G(v) = sin²(πMv)/sin²(πv)`, equal to `M²` at integer `v`.
pub fn dirichlet_window(v: f64, m: usize) -> f64 {
    let mf = m as f64;
    let frac = v - v.round();
    if frac.abs() < 1e-9 {
        // second-order expansion around the removable singularity
        let x = PI * frac;
        return mf * mf * (1.0 - (mf * mf - 1.0) * x * x / 3.0);
    }
    let num = (PI * mf * v).sin();
    let den = (PI * v).sin();
    (num * num) / (den * den)
}

/// Planar-array codeword `(p, q)` with its Kronecker eigenbasis.
#[derive(Clone, Debug)]
pub struct PlanarCodeword {
    pub p: usize,
    pub q: usize,
    /// Retained eigenvalues (products of 1-D eigenvalues), descending.
    pub eigenvalues: Vec<f64>,
    /// `(i, j)` pairs: column `d` is `u^V_i ⊗ u^H_j`.
    pub index_pairs: Vec<(usize, usize)>,
    pub basis: CMatrix,
}

/// `P x Q` planar codebook over an `M_V x M_H` array.
#[derive(Clone, Debug)]
pub struct Codebook2D {
    pub m_v: usize,
    pub m_h: usize,
    pub p_size: usize,
    pub q_size: usize,
    pub retained: usize,
    pub vertical: Vec<CodewordEntry>,
    pub horizontal: Vec<CodewordEntry>,
    /// Row-major over `(p, q)`.
    pub entries: Vec<PlanarCodeword>,
}

impl Codebook2D {
    pub fn entry(&self, p: usize, q: usize) -> &PlanarCodeword {
        &self.entries[p * self.q_size + q]
    }

    /// `R_{p,q} = R_p^V ⊗ R_q^H`.
    pub fn matrix(&self, p: usize, q: usize) -> HermitianMatrix {
        self.vertical[p].matrix.kron(&self.horizontal[q].matrix)
    }
}

/// Two-dimensional correlation `r_{p,q}[m, n] = r_p[m] · r_q[n]`.
pub fn planar_codeword_correlation(p: usize, p_size: usize, q: usize, q_size: usize, m: i64, n: i64) -> Complex64 {
    codeword_correlation(p, p_size, m) * codeword_correlation(q, q_size, n)
}

/// Builds the planar codebook from 1-D eigen-decompositions.
pub fn build_upa_codebook(m_v: usize, m_h: usize, p_size: usize, q_size: usize, d: usize) -> Result<Codebook2D> {
    if m_v == 0 || m_h == 0 || p_size == 0 || q_size == 0 || d == 0 {
        return Err(Error::InvalidArgument("planar codebook dimensions must be at least 1".into()));
    }
    if d > m_v * m_h {
        return Err(Error::InvalidArgument(format!("D={d} exceeds {} antennas", m_v * m_h)));
    }
    let vertical = (0..p_size)
        .map(|p| CodewordEntry::new(m_v, p, p_size, 1))
        .collect::<Result<Vec<_>>>()?;
    let horizontal = (0..q_size)
        .map(|q| CodewordEntry::new(m_h, q, q_size, 1))
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(p_size * q_size);
    for ev in &vertical {
        for eh in &horizontal {
            let mut products: Vec<(f64, usize, usize)> = Vec::with_capacity(m_v * m_h);
            for (i, &a) in ev.eigenvalues.iter().enumerate() {
                for (j, &b) in eh.eigenvalues.iter().enumerate() {
                    products.push((a * b, i, j));
                }
            }
            products.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
            let max = products[0].0;
            let available = products.iter().take_while(|t| t.0 > EIGEN_FLOOR * max && t.0 > 0.0).count();
            if d > available {
                return Err(Error::InsufficientRank {
                    requested: d,
                    available,
                });
            }
            let chosen = &products[..d];
            let cols: Vec<Vec<Complex64>> = chosen
                .iter()
                .map(|&(_, i, j)| {
                    let a = ev.all_eigenvectors().column(i);
                    let b = eh.all_eigenvectors().column(j);
                    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
                })
                .collect();
            entries.push(PlanarCodeword {
                p: ev.q,
                q: eh.q,
                eigenvalues: chosen.iter().map(|t| t.0).collect(),
                index_pairs: chosen.iter().map(|t| (t.1, t.2)).collect(),
                basis: CMatrix::from_columns(&cols)?,
            });
        }
    }
    Ok(Codebook2D {
        m_v,
        m_h,
        p_size,
        q_size,
        retained: d,
        vertical,
        horizontal,
        entries,
    })
}

/// Planar DFT baseline: Kronecker products of the 1-D DFT submatrices,
/// keeping the `d` columns most concentrated in zone `(p, q)`.
pub fn dft_baseline_2d(m_v: usize, m_h: usize, p_size: usize, q_size: usize, p: usize, q: usize, d: usize) -> Result<CMatrix> {
    let fv = dft_submatrix(m_v, p_size, p)?;
    let fh = dft_submatrix(m_h, q_size, q)?;
    let f = fv.kron(&fh);
    let kernel = Band::codeword(p, p_size).kernel(m_v).kron(&Band::codeword(q, q_size).kernel(m_h));
    let keep = most_concentrated_columns(&f, &kernel, d)?;
    Ok(f.select_columns(&keep))
}
