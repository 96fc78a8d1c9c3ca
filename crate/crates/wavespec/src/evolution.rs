//! Linear evolution `dV/dt = J L(k) V` and the unstable wave packet
//!
//! ```text
//! U0(t, x, y) = int_{I u -I} e^{sigma(k) t} e^{i k y} U(k)(x) dk
//! ```
//!
//! built from the unstable eigenpairs `(sigma(k), U(k))` over a window `I` of
//! the instability band, with the fit of its norm against
//! `c + sigma t - rho log(1 + t)`.

use std::f64::consts::PI;

use faer::prelude::*;
use faer::{Mat, Side};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, WaveError};
use crate::spectra::{real_eigenvector, Band, GrowthCurve, Linearization};

/// Smallest accepted overlap between unit eigenvectors at neighbouring nodes.
pub const MIN_OVERLAP: f64 = 0.9;

/// Largest accepted condition number of the scaled growth-fit design matrix.
pub const MAX_FIT_CONDITION: f64 = 1e10;

/// Unstable eigenpair at one transverse wavenumber.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PacketMode {
    pub k: f64,
    pub sigma: f64,
    /// Composite Simpson weight.
    pub weight: f64,
    /// `(U1, U2)` stacked, unit in the discrete `L^2` norm.
    pub vector: Vec<f64>,
    /// Relative eigen-residual of `vector`.
    pub residual: f64,
}

/// Wave packet over `I u -I`. The mirror half uses `U(-k) = conj(U(k))`,
/// which for the real eigenvectors here is `U(k)` itself, so the packet is
/// real.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WavePacket {
    pub modes: Vec<PacketMode>,
    /// Node spacing; nodes are the integer multiples `k_i = (n0 + i) dk`, so
    /// the synthesized packet is periodic in `y` with period `2 pi / dk`.
    pub dk: f64,
    /// `x` grid spacing.
    pub spacing: f64,
    /// Smallest overlap between neighbouring eigenvectors after alignment.
    pub min_overlap: f64,
}

/// Window `[k0 - w, k0 + w]` (or `[k0, k0 + 2w]` when one-sided) with `w` a
/// quarter of the band width, clipped to the band.
pub fn packet_window(band: &Band, k0: f64, one_sided: bool) -> (f64, f64) {
    let w = 0.25 * band.width();
    let (a, b) = if one_sided { (k0, k0 + 2.0 * w) } else { (k0 - w, k0 + w) };
    (a.max(band.lo), b.min(band.hi))
}

/// `nk` lattice-aligned nodes `k_i = (n0 + i) dk` inside `[a, b)` with
/// `dk = (b - a) / nk`, and the spacing. A single node sits at `a`.
pub fn packet_nodes(a: f64, b: f64, nk: usize) -> Result<(Vec<f64>, f64)> {
    if nk == 1 {
        return Ok((vec![a], 0.0));
    }
    if nk < 3 || nk.is_multiple_of(2) {
        return Err(WaveError::InvalidArgument(format!("composite Simpson needs an odd node count >= 3, got {nk}")));
    }
    if !(b > a && a >= 0.0) {
        return Err(WaveError::InvalidArgument(format!("empty packet window [{a}, {b}]")));
    }
    let dk = (b - a) / nk as f64;
    let n0 = (a / dk).ceil();
    Ok(((0..nk).map(|i| (n0 + i as f64) * dk).collect(), dk))
}

/// Composite Simpson weights for `nk` (odd) nodes of spacing `dk`; weight `1`
/// for a single node.
pub fn simpson_weights(nk: usize, dk: f64) -> Vec<f64> {
    if nk == 1 {
        return vec![1.0];
    }
    (0..nk)
        .map(|i| {
            let c = if i == 0 || i + 1 == nk {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * dk / 3.0
        })
        .collect()
}

/// Unstable eigenpairs at the packet nodes, normalized and sign-aligned along `k`.
pub fn build_wavepacket(lin: &Linearization, curve: &GrowthCurve, nk: usize, one_sided: bool) -> Result<WavePacket> {
    let band = curve
        .band
        .ok_or_else(|| WaveError::InvalidArgument("no instability band: cannot build a wave packet".into()))?;
    let (a, b) = if nk == 1 { (curve.k0, curve.k0) } else { packet_window(&band, curve.k0, one_sided) };
    let (ks, dk) = packet_nodes(a, b, nk)?;
    let weights = simpson_weights(nk, dk);
    let h = lin.grid().spacing();
    let mut modes: Vec<PacketMode> = ks
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&k, &weight)| {
            let jl = lin.l(k)?.times_j();
            let rep = lin.modes(&jl, k)?;
            if rep.unstable.len() != 1 {
                return Err(WaveError::Eigen(format!(
                    "expected one unstable eigenvalue at k = {k}, found {}",
                    rep.unstable.len()
                )));
            }
            let sigma = rep.unstable[0].re;
            let (mut vector, residual) = real_eigenvector(&jl, sigma)?;
            let norm = (h * vector.iter().map(|x| x * x).sum::<f64>()).sqrt();
            vector.iter_mut().for_each(|x| *x /= norm);
            Ok(PacketMode { k, sigma, weight, vector, residual })
        })
        .collect::<Result<_>>()?;
    let mut min_overlap = 1.0f64;
    for i in 1..modes.len() {
        let overlap: f64 = h * modes[i].vector.iter().zip(&modes[i - 1].vector).map(|(x, y)| x * y).sum::<f64>();
        if overlap < 0.0 {
            modes[i].vector.iter_mut().for_each(|x| *x = -*x);
        }
        min_overlap = min_overlap.min(overlap.abs());
    }
    if min_overlap < MIN_OVERLAP {
        return Err(WaveError::Eigen(format!(
            "unstable eigenvector varies too fast along k (overlap {min_overlap:.3}); refine the packet nodes"
        )));
    }
    Ok(WavePacket { modes, dk, spacing: h, min_overlap })
}

impl WavePacket {
    /// `log |U0(t)|` in `L^2(x, y)`, by Plancherel in `y`:
    /// `|U0|^2 = 2 pi * 2 * int_I e^{2 sigma t} |U(k)|^2 dk`, by the quadrature.
    pub fn log_norm(&self, t: f64) -> f64 {
        self.log_norm_with_stride(t, 1)
    }

    /// As [`WavePacket::log_norm`] with Simpson's rule on every `stride`-th
    /// node (`NaN` when the node count does not allow it).
    pub fn log_norm_with_stride(&self, t: f64, stride: usize) -> f64 {
        let nk = self.modes.len();
        let (indices, weights): (Vec<usize>, Vec<f64>) = if nk == 1 {
            (vec![0], vec![1.0])
        } else {
            if stride == 0 || !(nk - 1).is_multiple_of(2 * stride) {
                return f64::NAN;
            }
            let count = (nk - 1) / stride + 1;
            ((0..count).map(|j| j * stride).collect(), simpson_weights(count, self.dk * stride as f64))
        };
        // Log-sum-exp of w_j e^{2 sigma_j t} |U_j|^2.
        let logs: Vec<f64> = indices
            .iter()
            .zip(&weights)
            .map(|(&i, w)| {
                let m = &self.modes[i];
                w.ln() + 2.0 * m.sigma * t + (self.spacing * m.vector.iter().map(|x| x * x).sum::<f64>()).ln()
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        0.5 * ((4.0 * PI).ln() + top + sum.ln())
    }

    /// Physical-space packet at `(t, y)`: the quadrature of
    /// `e^{sigma t} (e^{i k y} U(k) + e^{-i k y} conj(U(k)))`, in complex
    /// arithmetic. Its imaginary part measures the loss of realness.
    pub fn synthesize(&self, t: f64, y: f64) -> Vec<Complex64> {
        let n = self.modes[0].vector.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for m in &self.modes {
            let amp = m.weight * (m.sigma * t).exp();
            let plus = Complex64::from_polar(amp, m.k * y);
            let minus = Complex64::from_polar(amp, -m.k * y);
            for (o, &u) in out.iter_mut().zip(&m.vector) {
                let u = Complex64::new(u, 0.0);
                *o += plus * u + minus * u.conj();
            }
        }
        out
    }
}

/// Least-squares fit `log |U0(t)| = c + sigma t - rho log(1 + t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub sigma: f64,
    pub rho: f64,
    pub c: f64,
    /// Largest absolute residual of the fit.
    pub max_residual: f64,
    /// Condition number of the column-scaled normal matrix.
    pub condition: f64,
}

/// `count` equally spaced times on `[2 / sigma0, 20 / sigma0]`.
pub fn fit_times(sigma0: f64, count: usize) -> Vec<f64> {
    let (a, b) = (2.0 / sigma0, 20.0 / sigma0);
    (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
}

pub fn packet_growth_fit(times: &[f64], log_norms: &[f64]) -> Result<GrowthFit> {
    if times.len() != log_norms.len() {
        return Err(WaveError::LengthMismatch { expected: times.len(), found: log_norms.len() });
    }
    if times.len() < 4 || log_norms.iter().any(|v| !v.is_finite()) {
        return Err(WaveError::InvalidArgument("need at least four finite log norms".into()));
    }
    let columns = |t: f64| [1.0, t, -(1.0 + t).ln()];
    let scales: Vec<f64> = (0..3).map(|j| times.iter().map(|&t| columns(t)[j].abs()).fold(0.0, f64::max)).collect();
    let mut gram = Mat::<f64>::zeros(3, 3);
    let mut rhs = Mat::<f64>::zeros(3, 1);
    for (&t, &y) in times.iter().zip(log_norms) {
        let row = columns(t);
        for i in 0..3 {
            let ri = row[i] / scales[i];
            rhs[(i, 0)] += ri * y;
            for j in 0..3 {
                gram[(i, j)] += ri * row[j] / scales[j];
            }
        }
    }
    let ev = gram.self_adjoint_eigenvalues(Side::Lower).map_err(|e| WaveError::Eigen(format!("{e:?}")))?;
    let condition = ev[2] / ev[0];
    if !(condition.is_finite() && condition > 0.0 && condition < MAX_FIT_CONDITION) {
        return Err(WaveError::InvalidArgument(format!(
            "growth fit is ill-conditioned (condition {condition:.3e}); widen the time range"
        )));
    }
    let coef = gram.partial_piv_lu().solve(&rhs);
    let [c, sigma, rho] = [0, 1, 2].map(|i| coef[(i, 0)] / scales[i]);
    let max_residual = times
        .iter()
        .zip(log_norms)
        .map(|(&t, &y)| (y - (c + sigma * t - rho * (1.0 + t).ln())).abs())
        .fold(0.0, f64::max);
    Ok(GrowthFit { sigma, rho, c, max_residual, condition })
}

/// Width `max - min` of `log |U0(t)| - sigma0 t + log(1 + t) / (2m)` over the times.
pub fn sandwich_width(times: &[f64], log_norms: &[f64], sigma0: f64, m: u32) -> f64 {
    let vals: Vec<f64> =
        times.iter().zip(log_norms).map(|(&t, &y)| y - sigma0 * t + (1.0 + t).ln() / (2.0 * m as f64)).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Propagator used by [`linear_evolve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagator {
    /// Full eigendecomposition, `V(t) = X e^{Lambda t} X^{-1} V0`.
    Eigen,
    /// Implicit midpoint (Cayley) steps, which conserve `(L V, V)`.
    Midpoint,
}

/// `V(t)` for `dV/dt = A V` at the given times (ascending, from `0`).
///
/// With [`Propagator::Eigen`] the eigendecomposition is used when it
/// reconstructs `V0` to `1e-8`; otherwise (a numerically defective matrix)
/// the evolution falls back to midpoint steps of at most `dt` with a warning.
pub fn linear_evolve(
    a: &Mat<f64>,
    v0: &[f64],
    times: &[f64],
    propagator: Propagator,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = a.nrows();
    if v0.len() != n {
        return Err(WaveError::LengthMismatch { expected: n, found: v0.len() });
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(WaveError::InvalidArgument("times must be nonnegative and ascending".into()));
    }
    if propagator == Propagator::Eigen {
        if let Some(traj) = eigen_propagate(a, v0, times)? {
            return Ok(traj);
        }
        log::warn!("eigenvector matrix is numerically defective; falling back to midpoint steps");
    }
    midpoint_propagate(a, v0, times, dt)
}

fn eigen_propagate(a: &Mat<f64>, v0: &[f64], times: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
    let n = a.nrows();
    let eig = a.eigen().map_err(|e| WaveError::Eigen(format!("{e:?}")))?;
    let x = eig.U().to_owned();
    let lambda: Vec<Complex64> = (0..n).map(|i| eig.S()[i]).collect();
    let rhs = Mat::from_fn(n, 1, |i, _| Complex64::new(v0[i], 0.0));
    let coef = x.partial_piv_lu().solve(&rhs);
    let v0_norm = v0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let back = &x * &coef;
    let err = (0..n).map(|i| (back[(i, 0)] - rhs[(i, 0)]).norm_sqr()).sum::<f64>().sqrt();
    if !(err <= 1e-8 * v0_norm.max(f64::MIN_POSITIVE)) && v0_norm > 0.0 {
        return Ok(None);
    }
    let traj = times
        .iter()
        .map(|&t| {
            let scaled = Mat::from_fn(n, 1, |i, _| coef[(i, 0)] * (lambda[i] * t).exp());
            let v = &x * &scaled;
            (0..n).map(|i| v[(i, 0)].re).collect()
        })
        .collect();
    Ok(Some(traj))
}

fn midpoint_propagate(a: &Mat<f64>, v0: &[f64], times: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) {
        return Err(WaveError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut v = Mat::from_fn(v0.len(), 1, |i, _| v0[i]);
    let mut now = 0.0;
    for &t in times {
        let span = t - now;
        if span > 0.0 {
            let steps = (span / dt).ceil() as usize;
            let stepper = MidpointStepper::new(a, span / steps as f64);
            for _ in 0..steps {
                v = stepper.step(&v);
            }
        }
        now = t;
        out.push((0..v0.len()).map(|i| v[(i, 0)]).collect());
    }
    Ok(out)
}

/// One implicit-midpoint step `(I - dt/2 A) V' = (I + dt/2 A) V`.
pub struct MidpointStepper {
    plus: Mat<f64>,
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl MidpointStepper {
    pub fn new(a: &Mat<f64>, dt: f64) -> Self {
        let n = a.nrows();
        let half = a * faer::Scale(0.5 * dt);
        let eye = Mat::<f64>::identity(n, n);
        let plus = &eye + &half;
        let lu = (&eye - &half).partial_piv_lu();
        Self { plus, lu }
    }

    pub fn step(&self, v: &Mat<f64>) -> Mat<f64> {
        self.lu.solve(&self.plus * v)
    }
}

/// `h * V^T L V` along a trajectory, and its largest relative drift from the
/// initial value.
pub fn quadratic_form_drift(l: &Mat<f64>, h: f64, trajectory: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = l.nrows();
    let forms: Vec<f64> = trajectory
        .iter()
        .map(|v| {
            let col = Mat::from_fn(n, 1, |i, _| v[i]);
            let lv = l * &col;
            h * (0..n).map(|i| lv[(i, 0)] * v[i]).sum::<f64>()
        })
        .collect();
    let q0 = forms[0];
    let drift = forms.iter().map(|q| (q - q0).abs()).fold(0.0, f64::max) / q0.abs();
    (forms, drift)
}
