//! Line solitary gravity–capillary wave: leading-order closed form and Newton
//! refinement of the steady free-surface system
//!
//! ```text
//! r1 = eta_x + G[eta] phi
//! r2 = phi_x - phi_x^2 / 2 + (G[eta] phi + eta_x phi_x)^2 / (2 (1 + eta_x^2))
//!      - alpha eta + beta d_x(eta_x / (1 + eta_x^2)^{1/2})
//! ```
//!
//! with `alpha = 1 + eps^2`. Newton works on the symmetric subspace
//! `eta` even, `phi` odd, which excludes the translation mode and the
//! constant-potential mode. The potential tends to opposite constants at
//! `+-inf` and is carried as a periodic part plus a ramp `s x` (see
//! [`Potential`]); the extra unknown `s` is fixed by `phi_x = 0` at the edge
//! of the box.

use faer::prelude::*;
use faer::Mat;

use crate::dno::{z_and_v, DnoSettings, DnoSolver, Potential};
use crate::error::{Result, WaveError};
use crate::grid::{Grid1D, StripGrid};
use crate::operators::{assemble_lambda, SurfaceFields};

/// Soft upper bound on `eps` beyond which convergence is not expected.
pub const EPSILON_CAP: f64 = 0.3;

/// Physical and asymptotic parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Params {
    pub epsilon: f64,
    pub beta: f64,
}

impl Params {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 1.0 / 3.0) {
            return Err(WaveError::InvalidArgument(format!("beta must exceed 1/3 (beta > 1/3), got {beta}")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(WaveError::InvalidArgument(format!(
                "epsilon must be positive (eps = 0 is the degenerate flat state), got {epsilon}"
            )));
        }
        if epsilon > EPSILON_CAP {
            log::warn!("epsilon = {epsilon} exceeds the soft cap {EPSILON_CAP}; Newton may fail");
        }
        Ok(Self { epsilon, beta })
    }

    /// `alpha = 1 + eps^2`.
    pub fn alpha(&self) -> f64 {
        1.0 + self.epsilon * self.epsilon
    }

    /// `beta - 1/3`.
    pub fn bond_excess(&self) -> f64 {
        self.beta - 1.0 / 3.0
    }

    /// Decay rate `eps / (2 sqrt(beta - 1/3))` of the leading profile's argument.
    pub fn kappa(&self) -> f64 {
        self.epsilon / (2.0 * self.bond_excess().sqrt())
    }

    /// Default box half-length `30 sqrt(beta - 1/3) / eps`, where the leading
    /// profile is below `1e-12` in size.
    pub fn default_half_length(&self) -> f64 {
        30.0 * self.bond_excess().sqrt() / self.epsilon
    }
}

/// Surface state with its derived fields.
#[derive(Clone, Debug)]
pub struct SurfaceState {
    pub eta: Vec<f64>,
    pub phi: Potential,
    pub eta_x: Vec<f64>,
    pub phi_x: Vec<f64>,
    /// `G[eta] phi` at `k = 0`.
    pub g_phi: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    /// `gamma = (1 - phi_x) / (1 + eta_x^2)`.
    pub gamma: Vec<f64>,
}

impl SurfaceState {
    pub fn new(strip: &StripGrid, eta: Vec<f64>, phi: Potential) -> Result<Self> {
        let grid = &strip.x;
        let solver = DnoSolver::new(strip, &eta, 0.0, DnoSettings::default())?;
        Self::with_solver(grid, &solver, eta, phi)
    }

    fn with_solver(grid: &Grid1D, solver: &DnoSolver, eta: Vec<f64>, phi: Potential) -> Result<Self> {
        let eta_x = grid.derivative(&eta, 1);
        let phi_x = phi.derivative(grid);
        let g_phi = phi.apply_dno(solver, &eta_x)?;
        let (z, v) = z_and_v(&eta_x, &g_phi, &phi_x);
        let gamma = phi_x.iter().zip(&eta_x).map(|(p, e)| (1.0 - p) / (1.0 + e * e)).collect();
        Ok(Self { eta, phi, eta_x, phi_x, g_phi, z, v, gamma })
    }

    pub fn fields(&self) -> SurfaceFields {
        SurfaceFields { eta_x: self.eta_x.clone(), z: self.z.clone(), v: self.v.clone() }
    }

    /// Residuals `(r1, r2)` of the steady system.
    pub fn residual(&self, grid: &Grid1D, params: &Params) -> (Vec<f64>, Vec<f64>) {
        let n = grid.n();
        let r1 = (0..n).map(|j| self.eta_x[j] + self.g_phi[j]).collect();
        let curv: Vec<f64> = self.eta_x.iter().map(|e| e / (1.0 + e * e).sqrt()).collect();
        let d_curv = grid.derivative(&curv, 1);
        let alpha = params.alpha();
        let r2 = (0..n)
            .map(|j| {
                let (px, ex) = (self.phi_x[j], self.eta_x[j]);
                let b = self.g_phi[j] + ex * px;
                px - 0.5 * px * px + 0.5 * b * b / (1.0 + ex * ex) - alpha * self.eta[j] + params.beta * d_curv[j]
            })
            .collect();
        (r1, r2)
    }
}

/// Residuals of the steady system for a surface and potential (all at `k = 0`).
pub fn steady_residual(
    strip: &StripGrid,
    eta: &[f64],
    phi: &Potential,
    params: &Params,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let state = SurfaceState::new(strip, eta.to_vec(), phi.clone())?;
    Ok(state.residual(&strip.x, params))
}

/// A solitary wave on a strip grid.
#[derive(Clone, Debug)]
pub struct SolitaryWave {
    pub params: Params,
    pub strip: StripGrid,
    pub state: SurfaceState,
    /// Sup norm of the steady residual (including the far-field condition).
    pub residual_norm: f64,
    /// Residual norm before each Newton step and at the end.
    pub history: Vec<f64>,
}

impl SolitaryWave {
    /// Wave carried by given fields (e.g. a stored solution), with its
    /// residual re-evaluated.
    pub fn from_fields(params: &Params, strip: &StripGrid, eta: Vec<f64>, phi: Potential) -> Result<Self> {
        let state = SurfaceState::new(strip, eta, phi)?;
        let residual_norm = reduced_residual_norm(&strip.x, params, &state);
        Ok(Self { params: *params, strip: strip.clone(), state, residual_norm, history: vec![residual_norm] })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.strip.x
    }

    pub fn eta(&self) -> &[f64] {
        &self.state.eta
    }
}

/// Leading-order profile
/// `eta = -eps^2 sech^2(kappa x)`, `phi = -2 sqrt(beta - 1/3) eps tanh(kappa x)`.
pub fn leading_profile(params: &Params, strip: &StripGrid) -> Result<SolitaryWave> {
    let grid = &strip.x;
    let (eta, phi) = leading_fields(params, grid);
    let state = SurfaceState::new(strip, eta, phi)?;
    let residual_norm = reduced_residual_norm(grid, params, &state);
    Ok(SolitaryWave { params: *params, strip: strip.clone(), state, residual_norm, history: vec![residual_norm] })
}

/// Nodal leading-order fields, exactly even/odd on the grid.
pub fn leading_fields(params: &Params, grid: &Grid1D) -> (Vec<f64>, Potential) {
    let n = grid.n();
    let (eps, kappa) = (params.epsilon, params.kappa());
    let amp = 2.0 * params.bond_excess().sqrt() * eps;
    let lx = grid.half_length();
    let slope = -amp * (kappa * lx).tanh() / lx;
    let half: Vec<f64> = (0..=n / 2).map(|j| -eps * eps / (kappa * grid.node(j)).cosh().powi(2)).collect();
    let interior: Vec<f64> = (1..n / 2)
        .map(|j| {
            let x = grid.node(j);
            -amp * (kappa * x).tanh() - slope * x
        })
        .collect();
    (grid.even_extension(&half), Potential { periodic: grid.odd_extension(&interior), slope })
}

/// Packing of the symmetric unknowns `(eta on x <= 0, periodic phi on -Lx < x < 0, s)`.
struct Layout {
    n: usize,
}

impl Layout {
    fn size(&self) -> usize {
        self.n + 1
    }

    fn n_even(&self) -> usize {
        self.n / 2 + 1
    }

    fn pack(&self, eta: &[f64], phi: &Potential) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.size());
        u.extend_from_slice(&eta[..self.n_even()]);
        u.extend_from_slice(&phi.periodic[1..self.n / 2]);
        u.push(phi.slope);
        u
    }

    fn unpack(&self, grid: &Grid1D, u: &[f64]) -> (Vec<f64>, Potential) {
        let ne = self.n_even();
        let eta = grid.even_extension(&u[..ne]);
        let periodic = grid.odd_extension(&u[ne..self.n]);
        (eta, Potential { periodic, slope: u[self.n] })
    }

    /// Reduced residual: `r2` on `x <= 0`, `r1` on `-Lx < x < 0`, far field.
    fn residual(&self, grid: &Grid1D, params: &Params, state: &SurfaceState) -> Vec<f64> {
        let (r1, r2) = state.residual(grid, params);
        let mut r = Vec::with_capacity(self.size());
        r.extend_from_slice(&r2[..self.n_even()]);
        r.extend_from_slice(&r1[1..self.n / 2]);
        r.push(state.phi_x[0]);
        r
    }
}

fn reduced_residual_norm(grid: &Grid1D, params: &Params, state: &SurfaceState) -> f64 {
    let layout = Layout { n: grid.n() };
    sup_norm(&layout.residual(grid, params, state))
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Jacobian of the reduced residual, assembled from the blocks of
/// `J Lambda(0)` at the iterate plus the ramp column and far-field row.
fn reduced_jacobian(grid: &Grid1D, params: &Params, state: &SurfaceState, g: &Mat<f64>) -> Mat<f64> {
    let n = grid.n();
    let layout = Layout { n };
    let lam = assemble_lambda(grid, &state.fields(), params.beta, params.alpha(), 0.0, g);
    // Full Jacobian rows (r1, r2), columns (eta, phi): [[A21, A22], [-A11, -A12]].
    let full = lam.times_j();
    let ne = layout.n_even();
    let d = grid.derivative_matrix();
    let mut jac = Mat::<f64>::zeros(layout.size(), layout.size());
    // Residual row index -> full row index.
    let rows: Vec<usize> = (0..ne).map(|j| n + j).chain(1..n / 2).collect();
    for (ri, &fr) in rows.iter().enumerate() {
        for j in 0..ne {
            let rj = (n - j) % n;
            let mut value = full[(fr, j)];
            if rj != j {
                value += full[(fr, rj)];
            }
            jac[(ri, j)] = value;
        }
        for (c, j) in (1..n / 2).enumerate() {
            jac[(ri, ne + c)] = full[(fr, n + j)] - full[(fr, n + (n - j))];
        }
        // Ramp: G[eta] x = -eta_x, and d_x x = 1.
        let jfull = fr % n;
        jac[(ri, n)] = if fr < n { -state.eta_x[jfull] } else { 1.0 - state.phi_x[jfull] };
    }
    let far = layout.size() - 1;
    for (c, j) in (1..n / 2).enumerate() {
        jac[(far, ne + c)] = d[(0, j)] - d[(0, n - j)];
    }
    jac[(far, n)] = 1.0;
    jac
}

/// Newton refinement with halving line search on the sup norm of the residual.
pub fn newton_refine(guess: &SolitaryWave, tol: f64, max_iter: usize) -> Result<SolitaryWave> {
    let strip = &guess.strip;
    let grid = &strip.x;
    let params = guess.params;
    let layout = Layout { n: grid.n() };
    let settings = DnoSettings::default();

    let (eta0, phi0) = layout.unpack(grid, &layout.pack(&guess.state.eta, &guess.state.phi));
    let mut state = SurfaceState::new(strip, eta0, phi0)?;
    let mut residual = layout.residual(grid, &params, &state);
    let mut norm = sup_norm(&residual);
    let mut history = vec![norm];
    let mut iterations = 0;
    while norm > tol {
        if iterations == max_iter {
            return Err(WaveError::NoConvergence(format!(
                "Newton did not reach {tol:.1e} in {max_iter} iterations; residual history {history:?}"
            )));
        }
        iterations += 1;
        let g = DnoSolver::new(strip, &state.eta, 0.0, settings)?.matrix()?.matrix;
        let jac = reduced_jacobian(grid, &params, &state, &g);
        let rhs = Mat::<f64>::from_fn(residual.len(), 1, |i, _| -residual[i]);
        let step = jac.partial_piv_lu().solve(&rhs);
        if !step.norm_l2().is_finite() {
            return Err(WaveError::Singular("Newton Jacobian on the symmetric subspace".into()));
        }
        let u = layout.pack(&state.eta, &state.phi);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().enumerate().map(|(i, x)| x + lambda * step[(i, 0)]).collect();
            let (eta, phi) = layout.unpack(grid, &trial);
            let candidate = SurfaceState::new(strip, eta, phi)?;
            let r = layout.residual(grid, &params, &candidate);
            let trial_norm = sup_norm(&r);
            if trial_norm < norm || trial_norm <= tol {
                state = candidate;
                residual = r;
                norm = trial_norm;
                break;
            }
            lambda *= 0.5;
            if lambda < 1.0 / 64.0 {
                return Err(WaveError::NoConvergence(format!(
                    "line search failed at residual {norm:.3e}; residual history {history:?}"
                )));
            }
        }
        log::debug!("Newton step {iterations}: residual {norm:.3e} (damping {lambda})");
        history.push(norm);
    }
    Ok(SolitaryWave { params, strip: strip.clone(), state, residual_norm: norm, history })
}

/// Leading-order profile refined by Newton.
pub fn solve(params: &Params, strip: &StripGrid, tol: f64, max_iter: usize) -> Result<SolitaryWave> {
    newton_refine(&leading_profile(params, strip)?, tol, max_iter)
}

/// Residuals of the solitary-wave identities.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    /// `|| G[eta] phi + eta_x ||_inf`.
    pub dn_identity: f64,
    /// `|| Z + gamma eta_x ||_inf`.
    pub z_identity: f64,
    /// `|| gamma - (1 - v) ||_inf`.
    pub gamma_identity: f64,
    pub min_gamma: f64,
    /// `1 + min eta`.
    pub min_depth: f64,
}

pub fn verify_identities(w: &SolitaryWave) -> IdentityReport {
    let s = &w.state;
    let n = s.eta.len();
    let max = |f: &dyn Fn(usize) -> f64| (0..n).map(f).fold(0.0, |m: f64, x| m.max(x.abs()));
    IdentityReport {
        dn_identity: max(&|j| s.g_phi[j] + s.eta_x[j]),
        z_identity: max(&|j| s.z[j] + s.gamma[j] * s.eta_x[j]),
        gamma_identity: max(&|j| s.gamma[j] - (1.0 - s.v[j])),
        min_gamma: s.gamma.iter().cloned().fold(f64::INFINITY, f64::min),
        min_depth: 1.0 + s.eta.iter().cloned().fold(f64::INFINITY, f64::min),
    }
}

/// Central finite difference of the reduced residual along a direction of
/// the symmetric unknowns (debug oracle for the Jacobian). The direction must
/// be resolved by the grid: the shape derivative of the discrete
/// Dirichlet–Neumann operator agrees with its analytic formula only up to
/// the discretization error, which is large for grid-scale perturbations.
pub fn finite_difference_derivative(w: &SolitaryWave, direction: &[f64], step: f64) -> Result<Vec<f64>> {
    let grid = w.grid();
    let layout = Layout { n: grid.n() };
    if direction.len() != layout.size() {
        return Err(WaveError::LengthMismatch { expected: layout.size(), found: direction.len() });
    }
    let u = layout.pack(&w.state.eta, &w.state.phi);
    let eval = |sign: f64| -> Result<Vec<f64>> {
        let shifted: Vec<f64> = u.iter().zip(direction).map(|(a, d)| a + sign * step * d).collect();
        let (eta, phi) = layout.unpack(grid, &shifted);
        let state = SurfaceState::new(&w.strip, eta, phi)?;
        Ok(layout.residual(grid, &w.params, &state))
    };
    let (rp, rm) = (eval(1.0)?, eval(-1.0)?);
    Ok(rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * step)).collect())
}

/// Packs `(eta, periodic phi, s)` in the layout of the symmetric unknowns.
pub fn pack_unknowns(grid: &Grid1D, eta: &[f64], phi: &Potential) -> Vec<f64> {
    Layout { n: grid.n() }.pack(eta, phi)
}

/// Analytic reduced Jacobian at the current state (exposed for the oracle test).
pub fn analytic_jacobian(w: &SolitaryWave) -> Result<Mat<f64>> {
    let g = DnoSolver::new(&w.strip, &w.state.eta, 0.0, DnoSettings::default())?.matrix()?.matrix;
    Ok(reduced_jacobian(w.grid(), &w.params, &w.state, &g))
}
