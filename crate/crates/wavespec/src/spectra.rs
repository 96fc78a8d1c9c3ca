//! Spectral computations for the linearization about the solitary wave:
//! negative-eigenvalue counts of `L(k)`, unstable eigenvalues of `J L(k)`, the
//! growth-rate curve `sigma(k)` with its band and maximum, the bifurcation
//! curve `f(k) = max eig(J L(k) J)`, the multiplier bound locating the
//! essential spectrum, the reduced operator `A_eps` and its KdV limit, and the
//! `L` / `Lambda` similarity.

use faer::prelude::*;
use faer::{Mat, Side};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dno::{dno_matrix, DnoFamily};
use crate::error::{Result, WaveError};
use crate::grid::{Grid1D, StripGrid};
use crate::operators::{
    assemble_a_eps, assemble_l, assemble_lambda, assemble_m, assemble_m_inverse, conjugators, BlockOperator,
    SurfaceFields,
};
use crate::solitary::{Params, SolitaryWave};

/// Eigenvalues of `J L` with real part above this multiple of the spectral
/// radius are classified as unstable; below it, as neutral.
pub const UNSTABLE_REL_TOL: f64 = 1e-6;

/// Eigenvalues of a symmetric matrix below `-NEGATIVE_REL_TOL * max |lambda|`
/// are counted as negative.
pub const NEGATIVE_REL_TOL: f64 = 1e-9;

/// Band-edge bisection stops at this width in `k` (or one percent of the band
/// width, whichever is smaller).
pub const EDGE_TOL: f64 = 1e-4;

/// Fewest samples inside the band before a fine grid is inserted.
pub const MIN_BAND_SAMPLES: usize = 8;

/// Points of the fine grid inserted when the band is under-resolved.
pub const FINE_SAMPLES: usize = 24;

/// Relative size of a Taylor term `|sigma^(j)| (W/2)^j / j!` against `sigma0`
/// (with `W` the band width) above which the derivative counts as nonzero.
pub const ORDER_THRESHOLD: f64 = 1e-3;

/// KdV-limit eigenvalues of `-(beta - 1/3) d^2 + 1 - 3 sech^2(x / (2 sqrt(beta - 1/3)))`.
pub const KDV_LIMIT: [f64; 3] = [-1.25, 0.0, 0.75];

fn eigen_error(e: impl std::fmt::Debug) -> WaveError {
    WaveError::Eigen(format!("{e:?}"))
}

/// Spectrum of a symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetricSpectrum {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub n_negative: usize,
    pub abs_tol: f64,
}

impl SymmetricSpectrum {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }
}

pub fn eig_symmetric(a: &Mat<f64>) -> Result<SymmetricSpectrum> {
    let eigenvalues = a.self_adjoint_eigenvalues(Side::Lower).map_err(eigen_error)?;
    if eigenvalues.is_empty() || eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(WaveError::Eigen("non-finite eigenvalues".into()));
    }
    let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let abs_tol = NEGATIVE_REL_TOL * scale;
    let n_negative = eigenvalues.iter().filter(|&&x| x < -abs_tol).count();
    Ok(SymmetricSpectrum { eigenvalues, n_negative, abs_tol })
}

/// Spectrum of `J L(k)` (or `J Lambda(k)`) with its unstable part.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub k: f64,
    /// Sorted by real part, descending.
    pub eigenvalues: Vec<Complex64>,
    /// Spectral radius.
    pub scale: f64,
    pub re_tol: f64,
    /// Eigenvalues with real part above `re_tol`, descending.
    pub unstable: Vec<Complex64>,
}

impl SpectrumReport {
    pub fn sigma_max(&self) -> Option<Complex64> {
        self.unstable.first().copied()
    }

    pub fn max_abs_re(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, z| m.max(z.re.abs()))
    }
}

fn by_real_part_desc(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im))
}

/// General eigenvalues of a real matrix, classified against
/// `re_tol = UNSTABLE_REL_TOL * spectral radius`.
pub fn unstable_modes(a: &Mat<f64>, k: f64) -> Result<SpectrumReport> {
    unstable_modes_with(a, k, UNSTABLE_REL_TOL)
}

/// As [`unstable_modes`] with `re_tol = rel_tol * spectral radius`.
pub fn unstable_modes_with(a: &Mat<f64>, k: f64, rel_tol: f64) -> Result<SpectrumReport> {
    let mut eigenvalues = a.eigenvalues().map_err(eigen_error)?;
    if eigenvalues.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(WaveError::Eigen("non-finite eigenvalues".into()));
    }
    eigenvalues.sort_by(by_real_part_desc);
    let scale = eigenvalues.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let re_tol = rel_tol * scale;
    let unstable = eigenvalues.iter().copied().filter(|z| z.re > re_tol).collect();
    Ok(SpectrumReport { k, eigenvalues, scale, re_tol, unstable })
}

/// Eigenvector of `a` for the real eigenvalue `sigma` by inverse iteration,
/// normalized in the Euclidean norm with its largest entry positive.
/// Returns the vector and the relative residual `|a x - sigma x| / (|a|_F |x|)`.
pub fn real_eigenvector(a: &Mat<f64>, sigma: f64) -> Result<(Vec<f64>, f64)> {
    let n = a.nrows();
    // Offset the shift slightly so that an exact eigenvalue does not give an
    // exactly singular factorization.
    let shift = sigma + 1e-10 * a.norm_l2();
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.partial_piv_lu();
    let mut x = Mat::from_fn(n, 1, |i, _| 1.0 + 0.5 * (0.37 * i as f64).sin());
    for _ in 0..6 {
        x = lu.solve(&x);
        let norm = x.norm_l2();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(WaveError::Singular(format!("inverse iteration broke down at sigma = {sigma}")));
        }
        x /= faer::Scale(norm);
    }
    let mut v: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    let (imax, _) =
        v.iter().enumerate().fold((0, 0.0f64), |(im, m), (i, a)| if a.abs() > m { (i, a.abs()) } else { (im, m) });
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
    let av = a * &Mat::from_fn(n, 1, |i, _| v[i]);
    let res = (0..n).map(|i| (av[(i, 0)] - sigma * v[i]).powi(2)).sum::<f64>().sqrt();
    Ok((v, res / a.norm_l2()))
}

/// Linearization about a solitary wave for all transverse wavenumbers.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub params: Params,
    pub strip: StripGrid,
    pub eta: Vec<f64>,
    pub fields: SurfaceFields,
    /// `G_k[eta]` for `|k| <= k_max`; larger `|k|` are built directly.
    pub family: DnoFamily,
    /// Relative threshold of [`unstable_modes_with`].
    pub re_rel_tol: f64,
}

impl Linearization {
    pub fn new(w: &SolitaryWave, family: DnoFamily) -> Self {
        Self {
            params: w.params,
            strip: w.strip.clone(),
            eta: w.state.eta.clone(),
            fields: w.state.fields(),
            family,
            re_rel_tol: UNSTABLE_REL_TOL,
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.strip.x
    }

    /// `G_k[eta]`.
    pub fn dn(&self, k: f64) -> Result<Mat<f64>> {
        if k.abs() <= self.family.k_max() {
            self.family.matrix(k)
        } else {
            self.dn_direct(k)
        }
    }

    /// `G_k[eta]` built directly rather than interpolated.
    pub fn dn_direct(&self, k: f64) -> Result<Mat<f64>> {
        Ok(dno_matrix(&self.strip, &self.eta, k)?.matrix)
    }

    pub fn l(&self, k: f64) -> Result<BlockOperator> {
        Ok(self.l_with(k, &self.dn(k)?))
    }

    pub fn l_with(&self, k: f64, g: &Mat<f64>) -> BlockOperator {
        assemble_l(self.grid(), &self.fields, self.params.beta, self.params.alpha(), k, g)
    }

    pub fn lambda(&self, k: f64) -> Result<BlockOperator> {
        let g = self.dn(k)?;
        Ok(assemble_lambda(self.grid(), &self.fields, self.params.beta, self.params.alpha(), k, &g))
    }

    /// Spectrum of `J A` classified with this linearization's threshold.
    pub fn modes(&self, ja: &Mat<f64>, k: f64) -> Result<SpectrumReport> {
        unstable_modes_with(ja, k, self.re_rel_tol)
    }
}

/// Spectral data at one transverse wavenumber.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveSample {
    pub k: f64,
    /// Largest unstable eigenvalue of `J L(k)`, zero when none.
    pub sigma_re: f64,
    pub sigma_im: f64,
    pub n_unstable: usize,
    /// Largest `|Re lambda|` over the spectrum of `J L(k)`.
    pub max_abs_re: f64,
    /// Spectral radius of `J L(k)`.
    pub scale: f64,
    /// Negative eigenvalues of `L(k)` and the smallest eigenvalue.
    pub n_negative: usize,
    pub lambda_min: f64,
    /// `f(k) = max eig(J L(k) J)`.
    pub f: f64,
}

/// Evaluation of the spectral quantities along `k`.
pub trait Sampler: Sync {
    fn sample(&self, k: f64) -> Result<CurveSample>;
    /// Growth rate of the unstable mode, zero when there is none.
    fn sigma(&self, k: f64) -> Result<f64>;
    fn f(&self, k: f64) -> Result<f64>;
}

impl Sampler for Linearization {
    fn sample(&self, k: f64) -> Result<CurveSample> {
        let l = self.l(k)?;
        let sym = eig_symmetric(&l.dense())?;
        let f = eig_symmetric(&l.j_sandwich())?.max();
        let rep = self.modes(&l.times_j(), k)?;
        let top = rep.sigma_max().unwrap_or(Complex64::new(0.0, 0.0));
        Ok(CurveSample {
            k,
            sigma_re: top.re,
            sigma_im: top.im,
            n_unstable: rep.unstable.len(),
            max_abs_re: rep.max_abs_re(),
            scale: rep.scale,
            n_negative: sym.n_negative,
            lambda_min: sym.min(),
            f,
        })
    }

    fn sigma(&self, k: f64) -> Result<f64> {
        let rep = self.modes(&self.l(k)?.times_j(), k)?;
        Ok(rep.sigma_max().map_or(0.0, |z| z.re))
    }

    fn f(&self, k: f64) -> Result<f64> {
        Ok(eig_symmetric(&self.l(k)?.j_sandwich())?.max())
    }
}

/// Samples of `f(k)` with its sign change.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FCurve {
    pub ks: Vec<f64>,
    pub values: Vec<f64>,
    pub positive_at_zero: bool,
    pub strictly_decreasing: bool,
    pub sign_changes: usize,
    /// First zero crossing, bisected.
    pub crossing: Option<f64>,
}

/// Analyses `f` on increasing samples starting at `k = 0` and bisects the
/// first sign change to `tol`.
pub fn f_curve<S: Sampler + ?Sized>(sampler: &S, samples: &[CurveSample], tol: f64) -> Result<FCurve> {
    let ks: Vec<f64> = samples.iter().map(|s| s.k).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.f).collect();
    let positive_at_zero = ks.first() == Some(&0.0) && values[0] > 0.0;
    let strictly_decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let sign_changes = values.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
    let crossing = match values.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0) {
        Some(i) => {
            let (mut a, mut b) = (ks[i], ks[i + 1]);
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if sampler.f(mid)? > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            Some(0.5 * (a + b))
        }
        None => None,
    };
    Ok(FCurve { ks, values, positive_at_zero, strictly_decreasing, sign_changes, crossing })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Sampled growth-rate curve `sigma_max(k)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthCurve {
    /// Full samples (requested grid plus any inserted fine grid), by increasing `k`.
    pub samples: Vec<CurveSample>,
    /// Requested grid, as indices into `samples`.
    pub grid_indices: Vec<usize>,
    pub f: FCurve,
    pub band: Option<Band>,
    pub edge_tol: f64,
    /// Whether a fine grid was inserted below the `f` crossing.
    pub refined: bool,
    pub k0: f64,
    pub sigma0: f64,
    pub sigma_p: f64,
    pub sigma_pp: f64,
    pub sigma_pppp: f64,
    /// Nondegeneracy order at `k0`; `None` when the band is empty or the
    /// maximum is degenerate beyond order four.
    pub m: Option<u32>,
}

impl GrowthCurve {
    pub fn has_instability(&self) -> bool {
        self.band.is_some()
    }
}

fn bisect_edge<S: Sampler + ?Sized>(sampler: &S, mut stable: f64, mut unstable: f64, tol: f64) -> Result<f64> {
    while (unstable - stable).abs() > tol {
        let mid = 0.5 * (stable + unstable);
        if sampler.sigma(mid)? > 0.0 {
            unstable = mid;
        } else {
            stable = mid;
        }
    }
    Ok(0.5 * (stable + unstable))
}

/// Golden-section maximization of `sigma` on `[a, b]`; returns `(k, sigma)`.
fn golden_max<S: Sampler + ?Sized>(sampler: &S, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = sampler.sigma(c)?;
    let mut fd = sampler.sigma(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = sampler.sigma(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = sampler.sigma(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// Growth-rate curve over `k_grid` (increasing, starting at `0`).
///
/// When fewer than [`MIN_BAND_SAMPLES`] grid points are unstable, a fine grid
/// of [`FINE_SAMPLES`] points is inserted on `(0, k*]`, with `k*` the zero of
/// `f` (for `k > k*`, `L(k)` is positive and no mode can be unstable). Band
/// edges are bisected, the maximum is refined by golden section and the
/// derivatives at the maximum are taken by centred differences.
pub fn growth_curve<S: Sampler + ?Sized>(sampler: &S, k_grid: &[f64]) -> Result<GrowthCurve> {
    if k_grid.first() != Some(&0.0) || k_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(WaveError::InvalidArgument("the k grid must start at 0 and increase strictly".into()));
    }
    let coarse: Vec<CurveSample> = k_grid.par_iter().map(|&k| sampler.sample(k)).collect::<Result<_>>()?;
    let step = if k_grid.len() > 1 { k_grid[1] - k_grid[0] } else { 1.0 };
    let f = f_curve(sampler, &coarse, 1e-7 * step)?;
    let n_unstable = coarse.iter().filter(|s| s.n_unstable > 0).count();

    let mut samples = coarse.clone();
    let mut refined = false;
    if n_unstable < MIN_BAND_SAMPLES {
        let last_unstable = coarse.iter().rev().find(|s| s.n_unstable > 0).map(|s| s.k + step);
        let top = f.crossing.or(last_unstable).map(|t| t.min(k_grid[k_grid.len() - 1]));
        if let Some(top) = top {
            let fine: Vec<f64> = (1..=FINE_SAMPLES).map(|j| top * j as f64 / FINE_SAMPLES as f64).collect();
            let extra: Vec<CurveSample> = fine.par_iter().map(|&k| sampler.sample(k)).collect::<Result<_>>()?;
            samples.extend(extra);
            samples.sort_by(|a, b| a.k.total_cmp(&b.k));
            samples.dedup_by(|a, b| a.k == b.k);
            refined = true;
        }
    }
    let grid_indices =
        k_grid.iter().map(|k| samples.iter().position(|s| s.k == *k).expect("grid point kept")).collect();

    let mut curve = GrowthCurve {
        samples,
        grid_indices,
        f,
        band: None,
        edge_tol: EDGE_TOL,
        refined,
        k0: 0.0,
        sigma0: 0.0,
        sigma_p: 0.0,
        sigma_pp: 0.0,
        sigma_pppp: 0.0,
        m: None,
    };
    // Argmax, smallest k on ties.
    let Some(imax) = curve
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.n_unstable > 0)
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, v)) if v >= s.sigma_re => best,
            _ => Some((i, s.sigma_re)),
        })
        .map(|(i, _)| i)
    else {
        return Ok(curve);
    };
    let s = &curve.samples;
    let mut i_lo = imax;
    while i_lo > 0 && s[i_lo - 1].n_unstable > 0 {
        i_lo -= 1;
    }
    let mut i_hi = imax;
    while i_hi + 1 < s.len() && s[i_hi + 1].n_unstable > 0 {
        i_hi += 1;
    }
    let bracket_lo = if i_lo > 0 { s[i_lo - 1].k } else { s[i_lo].k };
    let bracket_hi = if i_hi + 1 < s.len() { s[i_hi + 1].k } else { s[i_hi].k };
    let edge_tol = EDGE_TOL.min(0.01 * (bracket_hi - bracket_lo));
    let lo = if i_lo > 0 { bisect_edge(sampler, bracket_lo, s[i_lo].k, edge_tol)? } else { bracket_lo };
    let hi = if i_hi + 1 < s.len() { bisect_edge(sampler, bracket_hi, s[i_hi].k, edge_tol)? } else { bracket_hi };
    let band = Band { lo, hi };
    let width = band.width();

    let a = if imax > 0 { s[imax - 1].k.max(lo) } else { s[imax].k };
    let b = if imax + 1 < s.len() { s[imax + 1].k.min(hi) } else { s[imax].k };
    let (mut k0, mut sigma0) = (s[imax].k, s[imax].sigma_re);
    if b > a {
        let (kg, sg) = golden_max(sampler, a, b, 1e-4 * width)?;
        if sg > sigma0 {
            (k0, sigma0) = (kg, sg);
        }
    }
    let h = (width / 16.0).min(0.5 * (k0 - lo)).min(0.5 * (hi - k0));
    let at = |t: f64| sampler.sigma(k0 + t);
    let (p1, m1) = (at(h)?, at(-h)?);
    let (p2, m2) = (at(2.0 * h)?, at(-2.0 * h)?);
    let (ph, mh) = (at(0.5 * h)?, at(-0.5 * h)?);
    let d2 = |step: f64, p: f64, m: f64| (p - 2.0 * sigma0 + m) / (step * step);
    let sigma_pp = (4.0 * d2(0.5 * h, ph, mh) - d2(h, p1, m1)) / 3.0;
    let sigma_p = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    let sigma_pppp = (p2 - 4.0 * p1 + 6.0 * sigma0 - 4.0 * m1 + m2) / h.powi(4);
    let significant =
        |d: f64, order: i32, factorial: f64| d.abs() * (0.5 * width).powi(order) / factorial > ORDER_THRESHOLD * sigma0;
    let m = if significant(sigma_pp, 2, 2.0) && sigma_pp < 0.0 {
        Some(2)
    } else if significant(sigma_pppp, 4, 24.0) && sigma_pppp < 0.0 {
        Some(4)
    } else {
        None
    };
    curve.band = Some(band);
    curve.edge_tol = edge_tol;
    curve.k0 = k0;
    curve.sigma0 = sigma0;
    curve.sigma_p = sigma_p;
    curve.sigma_pp = sigma_pp;
    curve.sigma_pppp = sigma_pppp;
    curve.m = m;
    Ok(curve)
}

/// Relative difference between `sigma(k)` from the interpolated family and
/// `sigma(-k)` from a direct build of `G_{-k}`.
pub fn evenness_check(lin: &Linearization, k: f64) -> Result<f64> {
    let plus = lin.sigma(k)?;
    let minus_op = lin.l_with(-k, &lin.dn_direct(-k)?);
    let minus = lin.modes(&minus_op.times_j(), -k)?.sigma_max().map_or(0.0, |z| z.re);
    let scale = plus.abs().max(minus.abs());
    Ok(if scale == 0.0 { 0.0 } else { (plus - minus).abs() / scale })
}

/// Essential-spectrum multiplier
/// `m(xi) = beta xi^2 + beta k^2 + alpha + gamma - xi^2 / (gamma + tanh(r) r)`,
/// `r = sqrt(xi^2 + k^2)`, continued by its limit at `xi = k = gamma = 0`.
pub fn essential_multiplier(beta: f64, alpha: f64, k: f64, gamma: f64, xi: f64) -> f64 {
    let r = (xi * xi + k * k).sqrt();
    let quotient = if gamma == 0.0 && k == 0.0 {
        // xi^2 / (xi tanh xi) = xi / tanh xi, equal to 1 at xi = 0.
        if xi == 0.0 {
            1.0
        } else {
            xi.abs() / xi.abs().tanh()
        }
    } else {
        xi * xi / (gamma + r.tanh() * r)
    };
    beta * xi * xi + beta * k * k + alpha + gamma - quotient
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MarginReport {
    pub k: f64,
    pub gamma: f64,
    pub beta: f64,
    /// `min_xi m(xi) - (beta k^2 + gamma + alpha - 1)`.
    pub min_margin: f64,
    pub argmin_xi: f64,
}

/// Smallest margin of the multiplier above its lower bound on
/// `xi = 0, step, ..., xi_max`.
pub fn essential_bound_check(beta: f64, alpha: f64, k: f64, gamma: f64, xi_max: f64, step: f64) -> MarginReport {
    let bound = beta * k * k + gamma + alpha - 1.0;
    let count = (xi_max / step).round() as usize;
    let (min_margin, argmin_xi) = (0..=count)
        .map(|i| {
            let xi = i as f64 * step;
            (essential_multiplier(beta, alpha, k, gamma, xi) - bound, xi)
        })
        .fold((f64::INFINITY, 0.0), |acc, x| if x.0 < acc.0 { x } else { acc });
    MarginReport { k, gamma, beta, min_margin, argmin_xi }
}

/// Spectrum of the reduced operator `A_eps`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedSpectrum {
    pub epsilon: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub n_negative: usize,
    pub lambda_minus: f64,
    /// Eigenvalue of smallest magnitude apart from `lambda_minus`.
    pub lambda_zero: f64,
    /// Unit (discrete `L^2`) eigenvectors of `lambda_minus` and `lambda_zero`.
    pub eta_minus: Vec<f64>,
    pub eta_zero: Vec<f64>,
    /// `|(eta_zero, eta_x)| / (|eta_zero| |eta_x|)`.
    pub zero_mode_correlation: f64,
    /// `|A_eps eta_x| / (eps^2 |eta_x|)`, relative to the scale of the bound states.
    pub translation_residual: f64,
}

/// Assembles `A_eps` from `G_0[eta_eps]` and diagonalizes it.
pub fn reduced_spectrum(w: &SolitaryWave, g0: &Mat<f64>) -> Result<ReducedSpectrum> {
    let grid = w.grid();
    let n = grid.n();
    let p = &w.params;
    let m = assemble_m(grid, g0, &w.state.eta);
    let m_inv = assemble_m_inverse(grid, &m)?;
    let a = assemble_a_eps(grid, &w.state.eta_x, &w.state.gamma, p.beta, p.alpha(), &m_inv);
    let eig = a.self_adjoint_eigen(Side::Lower).map_err(eigen_error)?;
    let eigenvalues: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();
    let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let n_negative = eigenvalues.iter().filter(|&&x| x < -NEGATIVE_REL_TOL * scale).count();
    let izero = (1..n).min_by(|&i, &j| eigenvalues[i].abs().total_cmp(&eigenvalues[j].abs())).unwrap_or(0);
    let unit = |col: usize| {
        let v: Vec<f64> = (0..n).map(|i| eig.U()[(i, col)]).collect();
        let norm = grid.norm(&v);
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let eta_minus = unit(0);
    let eta_zero = unit(izero);
    let ex = &w.state.eta_x;
    let ex_norm = grid.norm(ex);
    let zero_mode_correlation = grid.inner(&eta_zero, ex)?.abs() / ex_norm;
    let a_ex = &a * Mat::from_fn(n, 1, |i, _| ex[i]);
    let a_ex: Vec<f64> = (0..n).map(|i| a_ex[(i, 0)]).collect();
    let translation_residual = grid.norm(&a_ex) / (p.epsilon * p.epsilon * ex_norm);
    Ok(ReducedSpectrum {
        epsilon: p.epsilon,
        lambda_minus: eigenvalues[0],
        lambda_zero: eigenvalues[izero],
        eigenvalues,
        n_negative,
        eta_minus,
        eta_zero,
        zero_mode_correlation,
        translation_residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KdvRow {
    pub epsilon: f64,
    /// `lambda_minus / eps^2`.
    pub minus: f64,
    /// `lambda_zero / eps^2`.
    pub zero: f64,
}

/// Rescaled bound states of `A_eps` along a decreasing sequence of `eps`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KdvTable {
    pub rows: Vec<KdvRow>,
    /// Polynomial extrapolation in `eps^2` to `eps = 0` through all rows.
    pub extrapolated_minus: f64,
    /// Two-level extrapolation through the two smallest `eps`.
    pub two_level_minus: f64,
    /// `|minus + 5/4|` decreases along the rows.
    pub monotone: bool,
}

/// Neville extrapolation to `x = 0` of values `y` at abscissae `x`.
pub fn extrapolate_to_zero(x: &[f64], y: &[f64]) -> f64 {
    let mut p = y.to_vec();
    let n = x.len();
    for level in 1..n {
        for i in 0..n - level {
            let j = i + level;
            p[i] = (x[j] * p[i] - x[i] * p[i + 1]) / (x[j] - x[i]);
        }
    }
    p[0]
}

pub fn kdv_table(rows: Vec<KdvRow>) -> Result<KdvTable> {
    if rows.len() < 2 || rows.windows(2).any(|w| !(w[1].epsilon < w[0].epsilon)) {
        return Err(WaveError::InvalidArgument("need at least two strictly decreasing eps values".into()));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.epsilon * r.epsilon).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.minus).collect();
    let extrapolated_minus = extrapolate_to_zero(&x, &y);
    let n = rows.len();
    let two_level_minus = extrapolate_to_zero(&x[n - 2..], &y[n - 2..]);
    let gap: Vec<f64> = y.iter().map(|v| (v - KDV_LIMIT[0]).abs()).collect();
    let monotone = gap.windows(2).all(|w| w[1] < w[0]);
    Ok(KdvTable { rows, extrapolated_minus, two_level_minus, monotone })
}

/// Unstable spectra of `J L(k)` and `J Lambda(k)` compared.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub k: f64,
    pub sigma_l: Vec<f64>,
    pub sigma_lambda: Vec<f64>,
    /// Hausdorff distance between the unstable sets over the largest `|sigma|`.
    pub discrepancy: f64,
    /// `|U_L - Q U_Lambda|` between unit eigenvectors of the leading unstable
    /// eigenvalue, with `Q = [[1, 0], [-Z, 1]]`.
    pub vector_residual: Option<f64>,
}

pub fn similarity_check(lin: &Linearization, k: f64) -> Result<SimilarityReport> {
    let g = lin.dn(k)?;
    let (beta, alpha) = (lin.params.beta, lin.params.alpha());
    let jl = assemble_l(lin.grid(), &lin.fields, beta, alpha, k, &g).times_j();
    let jlam = assemble_lambda(lin.grid(), &lin.fields, beta, alpha, k, &g).times_j();
    let rl = lin.modes(&jl, k)?;
    let rm = lin.modes(&jlam, k)?;
    let sigma_l: Vec<f64> = rl.unstable.iter().map(|z| z.re).collect();
    let sigma_lambda: Vec<f64> = rm.unstable.iter().map(|z| z.re).collect();
    let hausdorff = |a: &[Complex64], b: &[Complex64]| {
        a.iter().map(|x| b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    let scale = rl.unstable.iter().chain(&rm.unstable).fold(0.0f64, |m, z| m.max(z.norm()));
    let discrepancy = if rl.unstable.len() != rm.unstable.len() {
        f64::INFINITY
    } else if scale == 0.0 {
        0.0
    } else {
        hausdorff(&rl.unstable, &rm.unstable).max(hausdorff(&rm.unstable, &rl.unstable)) / scale
    };
    let vector_residual = match (sigma_l.first(), sigma_lambda.first()) {
        (Some(&sl), Some(&sm)) => {
            let (ul, _) = real_eigenvector(&jl, sl)?;
            let (um, _) = real_eigenvector(&jlam, sm)?;
            let (_, q) = conjugators(&lin.fields.z);
            let qm = &q * Mat::from_fn(um.len(), 1, |i, _| um[i]);
            let mut v: Vec<f64> = (0..um.len()).map(|i| qm[(i, 0)]).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sign = if v.iter().zip(&ul).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            v.iter_mut().for_each(|x| *x *= sign / norm);
            Some(v.iter().zip(&ul).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        }
        _ => None,
    };
    Ok(SimilarityReport { k, sigma_l, sigma_lambda, discrepancy, vector_residual })
}

/// Smallest value of `(L(k) U, U) / N_k(U)` over `U` with `(U1, c) = 0` for
/// every constraint `c`, where
/// `N_k(U) = |U1|_{H^1}^2 + | |D| / (1 + |D|^{1/2}) U2 |^2 + k^2 / (1 + |k|) |U2|^2`.
/// At `k = 0`, where `N_0` and `L(0)` both vanish on constant `U2`, the
/// constants are removed from `U2` as well.
pub fn constrained_coercivity(grid: &Grid1D, l: &BlockOperator, constraints: &[Vec<f64>]) -> Result<f64> {
    let n = grid.n();
    let k = l.k.abs();
    let weight2 = |xi: f64| {
        let a = xi / (1.0 + xi.sqrt());
        (a * a + k * k / (1.0 + k)).sqrt()
    };
    let inv1 = grid.multiplier_matrix(|xi| (1.0 + xi * xi).powf(-0.5));
    let inv2 = grid.multiplier_matrix(|xi| {
        let w = weight2(xi);
        if w == 0.0 {
            1.0
        } else {
            1.0 / w
        }
    });
    let scaled = BlockOperator {
        k: l.k,
        kind: l.kind,
        a11: &inv1 * &l.a11 * &inv1,
        a12: &inv1 * &l.a12 * &inv2,
        a21: &inv2 * &l.a21 * &inv1,
        a22: &inv2 * &l.a22 * &inv2,
    }
    .dense();
    // Constraint directions in the scaled variables, orthonormalized.
    let mut directions: Vec<Vec<f64>> = constraints
        .iter()
        .map(|c| {
            let y = &inv1 * Mat::from_fn(n, 1, |i, _| c[i]);
            (0..2 * n).map(|i| if i < n { y[(i, 0)] } else { 0.0 }).collect()
        })
        .collect();
    if k == 0.0 {
        let y = &inv2 * Mat::from_fn(n, 1, |_, _| 1.0);
        directions.push((0..2 * n).map(|i| if i < n { 0.0 } else { y[(i - n, 0)] }).collect());
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut d in directions {
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = d.iter().zip(b).map(|(x, y)| x * y).sum();
                d.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            basis.push(d.into_iter().map(|x| x / norm).collect());
        }
    }
    let r = basis.len();
    let q = Mat::from_fn(2 * n, r, |i, j| basis[j][i]);
    // Pi A Pi + mu Q Q^T with Pi = I - Q Q^T: the constraint directions are
    // lifted to mu, far above the compressed spectrum.
    let mu = 10.0 * scaled.norm_l2() + 1.0;
    let aq = &scaled * &q;
    let qt_aq = q.transpose() * &aq;
    let correction = &aq * q.transpose();
    let compressed = &scaled - &correction - correction.transpose()
        + &q * (&qt_aq + Mat::<f64>::identity(r, r) * faer::Scale(mu)) * q.transpose();
    Ok(eig_symmetric(&compressed)?.min())
}
