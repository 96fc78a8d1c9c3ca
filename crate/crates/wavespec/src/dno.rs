//! Dirichlet–Neumann operator `G_k[eta]` of the fluid strip `-1 < z < eta(x)`
//! for boundary data `u(x) e^{iky}`.
//!
//! The fluid domain is flattened onto `[-Lx, Lx) x [-1, 0]` by
//! `z' = (z - eta) / (1 + eta)`. In flattened coordinates the potential solves
//! `-div(W grad psi) + k^2 (1 + eta) psi = 0` with
//!
//! ```text
//! W11 = 1 + eta,  W12 = -eta_x (z + 1),  W22 = (1 + (z + 1)^2 eta_x^2) / (1 + eta),
//! ```
//!
//! `psi = u` on the surface and a homogeneous conormal condition (which is
//! `psi_z = 0`) on the bottom. The discrete operator is the Schur complement
//! of the energy form `sum_ij h w_i (grad psi . W grad psi + k^2 (1+eta) psi^2)`
//! with Fourier differentiation in `x`, a nodal polynomial basis on
//! Chebyshev–Lobatto points in `z` and exact Gauss–Legendre integration in
//! `z`. Being a Schur complement of a symmetric positive form, it is symmetric, nonnegative and nondecreasing in `k^2` at
//! the discrete level.
//!
//! The solution is split as `psi = u^H + u^r`: `u^H` is the harmonic
//! extension on the flat strip (one ODE per Fourier mode) and carries the
//! exact flat symbol `r tanh r`, `r = sqrt(xi^2 + k^2)`. The correction
//! `u^r` vanishes on the surface and solves the variable-coefficient problem
//! forced by the metric perturbation; it is found by a fixed-point iteration
//! preconditioned with the flat operator, which contracts at a rate of order
//! `max |eta|`.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use num_complex::Complex64;

use crate::error::{Result, WaveError};
use crate::grid::{Grid1D, StripGrid};

/// Minimal admissible local depth `1 + min(eta)`.
pub const DEPTH_FLOOR: f64 = 1e-2;

/// Relative asymmetry above which a realized operator is rejected.
pub const ASYMMETRY_LIMIT: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Controls for the correction iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DnoSettings {
    /// Stop when the relative update of the correction falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of boundary data processed together.
    pub batch: usize,
}

impl Default for DnoSettings {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 200, batch: 64 }
    }
}

/// Inverse metric and volume factor of the flattening map on the strip grid.
/// Arrays are indexed `[i * nx + j]` with `i` the vertical node.
#[derive(Clone, Debug)]
pub struct FlatteningMetric {
    pub nx: usize,
    pub nz: usize,
    /// `g^{11}` is identically one.
    pub g12: Vec<f64>,
    pub g22: Vec<f64>,
    /// `det(g)^{1/2} = 1 + eta`.
    pub sqrt_det: Vec<f64>,
}

impl FlatteningMetric {
    /// Entries of `W = det(g)^{1/2} g^{-1}` at node `(i, j)`.
    pub fn conductivity(&self, i: usize, j: usize) -> (f64, f64, f64) {
        let idx = i * self.nx + j;
        let s = self.sqrt_det[idx];
        (s, s * self.g12[idx], s * self.g22[idx])
    }
}

pub fn build_flattening(strip: &StripGrid, eta: &[f64]) -> Result<FlatteningMetric> {
    let grid = &strip.x;
    grid.check_len(eta.len())?;
    let depth = 1.0 + eta.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(depth > DEPTH_FLOOR) {
        return Err(WaveError::DepthFloor { depth, floor: DEPTH_FLOOR });
    }
    let eta_x = grid.derivative(eta, 1);
    let (nx, nz) = (strip.nx(), strip.nz());
    let mut g12 = vec![0.0; nx * nz];
    let mut g22 = vec![0.0; nx * nz];
    let mut sqrt_det = vec![0.0; nx * nz];
    for (i, &z) in strip.z.nodes.iter().enumerate() {
        let zp = z + 1.0;
        for j in 0..nx {
            let h = 1.0 + eta[j];
            let idx = i * nx + j;
            g12[idx] = -eta_x[j] * zp / h;
            g22[idx] = (1.0 + zp * zp * eta_x[j] * eta_x[j]) / (h * h);
            sqrt_det[idx] = h;
        }
    }
    Ok(FlatteningMetric { nx, nz, g12, g22, sqrt_det })
}

/// Entries `(W11, W12, W22)` of the conductivity at height `z` of the
/// flattened strip.
pub fn conductivity(eta: f64, eta_x: f64, z: f64) -> (f64, f64, f64) {
    let h = 1.0 + eta;
    let zp = z + 1.0;
    (h, -eta_x * zp, (1.0 + zp * zp * eta_x * eta_x) / h)
}

/// Exact Galerkin stiffness `int l_i' l_j' dz` and mass `int l_i l_j dz` of the
/// nodal polynomial basis.
fn flat_forms(zg: &crate::grid::ChebyshevGrid) -> (Mat<f64>, Mat<f64>) {
    let nz = zg.len();
    let nq = zg.n_quad();
    let we = Mat::<f64>::from_fn(nq, nz, |q, i| zg.quad_weights[q] * zg.interp_diff[(q, i)]);
    let wi = Mat::<f64>::from_fn(nq, nz, |q, i| zg.quad_weights[q] * zg.interp[(q, i)]);
    let stiff = zg.interp_diff.transpose() * &we;
    let mass = zg.interp.transpose() * &wi;
    (stiff, mass)
}

/// Exact flat-bottom symbol `r tanh r`.
pub fn flat_symbol(xi: f64, k: f64) -> f64 {
    let r = (xi * xi + k * k).sqrt();
    r * r.tanh()
}

/// Per-Fourier-mode data of the flat operator `-d_zz + r^2`.
#[derive(Clone, Debug)]
struct ModeData {
    /// Inverse of the flat energy matrix on the nodes below the surface.
    inv: Mat<f64>,
    /// Flat discrete harmonic extension of a unit surface value.
    lift: Vec<f64>,
    /// Surface row of the flat energy matrix.
    top_row: Vec<f64>,
    flat_exact: f64,
    flat_discrete: f64,
}

/// Realized matrix of `G_k[eta]` with diagnostics.
#[derive(Clone, Debug)]
pub struct DnoMatrix {
    pub k: f64,
    /// Symmetrized matrix acting on nodal values.
    pub matrix: Mat<f64>,
    /// `||G - G^T||_F / ||G||_F` before symmetrization.
    pub asymmetry: f64,
    /// Largest number of correction iterations used by any batch.
    pub iterations: usize,
}

/// Solver for `G_k[eta]` on a fixed surface.
pub struct DnoSolver {
    grid: Grid1D,
    k: f64,
    nx: usize,
    nz: usize,
    nq: usize,
    nh: usize,
    /// Nodal values to quadrature points, and its transpose.
    interp: Mat<f64>,
    interp_t: Mat<f64>,
    /// Nodal values to `z`-derivative at quadrature points, and its transpose.
    interp_diff: Mat<f64>,
    interp_diff_t: Mat<f64>,
    /// Quadrature-weighted perturbation coefficients at `[q * nx + j]`:
    /// `w_q (W11 - 1)`, `w_q W12`, `w_q (W22 - 1)`, `w_q k^2 eta`.
    c11: Vec<f64>,
    c12: Vec<f64>,
    c22: Vec<f64>,
    c00: Vec<f64>,
    flat: bool,
    /// Surface invariant under `x -> -x` (bitwise on the nodes).
    even: bool,
    modes: Vec<ModeData>,
    /// Symbol of `d/dx` on the half spectrum (Nyquist dropped).
    dx_symbol: Vec<Complex64>,
    settings: DnoSettings,
}

impl std::fmt::Debug for DnoSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DnoSolver").field("k", &self.k).field("nx", &self.nx).field("nz", &self.nz).finish()
    }
}

impl DnoSolver {
    pub fn new(strip: &StripGrid, eta: &[f64], k: f64, settings: DnoSettings) -> Result<Self> {
        if !k.is_finite() {
            return Err(WaveError::InvalidArgument(format!("transverse wavenumber must be finite, got {k}")));
        }
        // Validates the surface (depth floor, length).
        build_flattening(strip, eta)?;
        let grid = strip.x.clone();
        let (nx, nz, nh) = (grid.n(), strip.nz(), grid.n_half());
        let zg = &strip.z;
        let nq = zg.n_quad();
        let eta_x = grid.derivative(eta, 1);

        let mut c11 = vec![0.0; nx * nq];
        let mut c12 = vec![0.0; nx * nq];
        let mut c22 = vec![0.0; nx * nq];
        let mut c00 = vec![0.0; nx * nq];
        for q in 0..nq {
            let wq = zg.quad_weights[q];
            for j in 0..nx {
                let (w11, w12, w22) = conductivity(eta[j], eta_x[j], zg.quad_nodes[q]);
                let idx = q * nx + j;
                c11[idx] = wq * (w11 - 1.0);
                c12[idx] = wq * w12;
                c22[idx] = wq * (w22 - 1.0);
                c00[idx] = wq * k * k * eta[j];
            }
        }
        let flat = eta.iter().all(|&e| e == 0.0);
        let even = (0..nx).all(|j| eta[j] == eta[(nx - j) % nx]);

        let (stiff, mass) = flat_forms(zg);
        let top = nz - 1;
        let modes = (0..nh)
            .map(|m| {
                let xi = grid.wavenumber(m);
                let r2 = xi * xi + k * k;
                let full = &stiff + &mass * r2;
                let inner = full.as_ref().submatrix(0, 0, top, top).to_owned();
                let inv = inner.partial_piv_lu().inverse();
                let mut lift = vec![0.0; nz];
                for i in 0..top {
                    lift[i] = -(0..top).map(|l| inv[(i, l)] * full[(l, top)]).sum::<f64>();
                }
                lift[top] = 1.0;
                let top_row: Vec<f64> = (0..nz).map(|l| full[(top, l)]).collect();
                let flat_discrete = (0..nz).map(|l| top_row[l] * lift[l]).sum();
                ModeData { inv, lift, top_row, flat_exact: flat_symbol(xi, k), flat_discrete }
            })
            .collect();
        let dx_symbol = (0..nh).map(|m| grid.derivative_symbol(m, 1)).collect();

        Ok(Self {
            grid,
            k,
            nx,
            nz,
            nq,
            nh,
            interp: zg.interp.clone(),
            interp_t: zg.interp.transpose().to_owned(),
            interp_diff: zg.interp_diff.clone(),
            interp_diff_t: zg.interp_diff.transpose().to_owned(),
            c11,
            c12,
            c22,
            c00,
            flat,
            even,
            modes,
            dx_symbol,
            settings,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Discrete flat symbol of half-spectrum mode `m` (for diagnostics).
    pub fn flat_discrete_symbol(&self, m: usize) -> f64 {
        self.modes[m].flat_discrete
    }

    /// Applies `G_k[eta]` to one boundary function.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(u.len())?;
        let mut out = vec![0.0; self.nx];
        self.apply_batch(&[u], &mut [&mut out[..]])?;
        if self.k == 0.0 {
            project_constants(&mut out);
        }
        Ok(out)
    }

    /// Builds the dense matrix of `G_k[eta]` on nodal values.
    pub fn matrix(&self) -> Result<DnoMatrix> {
        let mut out = self.raw_matrix()?;
        if self.k == 0.0 {
            project_constants_matrix(&mut out.matrix);
        }
        Ok(out)
    }

    /// Symmetrized matrix without the constant projection at `k = 0`.
    ///
    /// For an even surface the operator commutes with the reflection
    /// `x -> -x`, so only the columns of nodes `0..=nx/2` are solved for and the
    /// others are their mirror images.
    fn raw_matrix(&self) -> Result<DnoMatrix> {
        let n = self.nx;
        let columns: Vec<usize> = if self.even { (0..=n / 2).collect() } else { (0..n).collect() };
        let mut raw = Mat::<f64>::zeros(n, n);
        let mut iterations = 0;
        for chunk in columns.chunks(self.settings.batch.max(1)) {
            let unit: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&c| {
                    let mut e = vec![0.0; n];
                    e[c] = 1.0;
                    e
                })
                .collect();
            let mut cols = vec![vec![0.0; n]; chunk.len()];
            {
                let inputs: Vec<&[f64]> = unit.iter().map(|v| v.as_slice()).collect();
                let mut outputs: Vec<&mut [f64]> = cols.iter_mut().map(|v| v.as_mut_slice()).collect();
                iterations = iterations.max(self.apply_batch(&inputs, &mut outputs)?);
            }
            for (&c, col) in chunk.iter().zip(&cols) {
                for (i, v) in col.iter().enumerate() {
                    raw[(i, c)] = *v;
                }
                if self.even {
                    let rc = (n - c) % n;
                    for (i, v) in col.iter().enumerate() {
                        raw[((n - i) % n, rc)] = *v;
                    }
                }
            }
        }

        let mut diff = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                diff += (raw[(i, j)] - raw[(j, i)]).powi(2);
                total += raw[(i, j)].powi(2);
            }
        }
        let asymmetry = if total > 0.0 { (diff / total).sqrt() } else { 0.0 };
        if asymmetry > ASYMMETRY_LIMIT {
            return Err(WaveError::Asymmetry { asymmetry, limit: ASYMMETRY_LIMIT });
        }
        let matrix = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)]));
        Ok(DnoMatrix { k: self.k, matrix, asymmetry, iterations })
    }

    /// Applies the operator to a batch of boundary functions; returns the
    /// number of correction iterations.
    fn apply_batch(&self, inputs: &[&[f64]], outputs: &mut [&mut [f64]]) -> Result<usize> {
        let (nx, nz, nh) = (self.nx, self.nz, self.nh);
        let bsz = inputs.len();
        let top = nz - 1;

        let mut u_hat = vec![ZERO; bsz * nh];
        let mut buf = vec![0.0; nx];
        let mut fwd_scratch = vec![ZERO; self.grid.r2c().get_scratch_len()];
        for (b, u) in inputs.iter().enumerate() {
            buf.copy_from_slice(u);
            self.grid
                .r2c()
                .process_with_scratch(&mut buf, &mut u_hat[b * nh..(b + 1) * nh], &mut fwd_scratch)
                .expect("FFT sizes are fixed by the grid");
        }

        let mut w = vec![ZERO; nz * bsz * nh];
        let mut iterations = 0;
        let mut ws = Workspace::new(nx, nz, self.nq, nh, bsz, &self.grid);
        if !self.flat {
            let mut psi0 = vec![ZERO; nz * bsz * nh];
            for i in 0..nz {
                for b in 0..bsz {
                    for m in 0..nh {
                        psi0[(i * bsz + b) * nh + m] = self.modes[m].lift[i] * u_hat[b * nh + m];
                    }
                }
            }
            let mut w_new = vec![ZERO; nz * bsz * nh];
            let mut converged = false;
            let mut last_update = f64::INFINITY;
            while iterations < self.settings.max_iter {
                iterations += 1;
                for ((p, a), c) in ws.psi.iter_mut().zip(&psi0).zip(&w) {
                    *p = a + c;
                }
                self.perturbation(&mut ws);
                self.precondition(&ws.p, &mut w_new, bsz);
                let mut update: f64 = 0.0;
                let mut size: f64 = 0.0;
                for (old, new) in w.iter().zip(&w_new) {
                    update = update.max((new - old).norm());
                    size = size.max(new.norm());
                }
                std::mem::swap(&mut w, &mut w_new);
                last_update = if size > 0.0 { update / size } else { 0.0 };
                if last_update <= self.settings.tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(WaveError::NoConvergence(format!(
                    "Dirichlet-Neumann correction stalled after {iterations} iterations (relative update {last_update:.3e})"
                )));
            }
            for ((p, a), c) in ws.psi.iter_mut().zip(&psi0).zip(&w) {
                *p = a + c;
            }
            self.perturbation(&mut ws);
        }

        let mut inv_scratch = vec![ZERO; self.grid.c2r().get_scratch_len()];
        let mut flux = vec![ZERO; nh];
        let scale = 1.0 / nx as f64;
        for (b, out) in outputs.iter_mut().enumerate() {
            for m in 0..nh {
                let mut value = self.modes[m].flat_exact * u_hat[b * nh + m];
                if !self.flat {
                    let row = &self.modes[m].top_row;
                    for i in 0..top {
                        value += row[i] * w[(i * bsz + b) * nh + m];
                    }
                    value += ws.p[(top * bsz + b) * nh + m];
                }
                flux[m] = value;
            }
            flux[0].im = 0.0;
            flux[nh - 1].im = 0.0;
            self.grid
                .c2r()
                .process_with_scratch(&mut flux, out, &mut inv_scratch)
                .expect("FFT sizes are fixed by the grid");
            out.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(iterations)
    }

    /// Computes `ws.p` = metric perturbation applied to `ws.psi` (both in
    /// Fourier-in-x, nodal-in-z form).
    fn perturbation(&self, ws: &mut Workspace) {
        let (nx, nq, nh, bsz) = (self.nx, self.nq, self.nh, ws.bsz);
        let rows = nq * bsz;
        let scale = 1.0 / nx as f64;
        let c2r = self.grid.c2r();
        let r2c = self.grid.r2c();
        let with_mass = self.k != 0.0;

        // Values at the quadrature levels: x-derivative and (for k != 0) the
        // values themselves; then the z-derivative.
        gemm_rows(self.interp.as_ref(), &ws.psi, &mut ws.spec, self.nz, bsz * nh, Accum::Replace);
        for row in 0..rows {
            let spec = &ws.spec[row * nh..(row + 1) * nh];
            for m in 0..nh {
                ws.row[m] = spec[m] * self.dx_symbol[m];
            }
            c2r.process_with_scratch(&mut ws.row, &mut ws.phys_a[row * nx..(row + 1) * nx], &mut ws.inv_scratch)
                .expect("FFT sizes are fixed by the grid");
            if with_mass {
                ws.row.copy_from_slice(spec);
                ws.row[0].im = 0.0;
                ws.row[nh - 1].im = 0.0;
                c2r.process_with_scratch(&mut ws.row, &mut ws.phys_c[row * nx..(row + 1) * nx], &mut ws.inv_scratch)
                    .expect("FFT sizes are fixed by the grid");
            }
        }
        gemm_rows(self.interp_diff.as_ref(), &ws.psi, &mut ws.spec, self.nz, bsz * nh, Accum::Replace);
        for row in 0..rows {
            let spec = &mut ws.spec[row * nh..(row + 1) * nh];
            spec[0].im = 0.0;
            spec[nh - 1].im = 0.0;
            c2r.process_with_scratch(spec, &mut ws.phys_b[row * nx..(row + 1) * nx], &mut ws.inv_scratch)
                .expect("FFT sizes are fixed by the grid");
        }

        // Pointwise fluxes (the 1/nx of the inverse transforms is folded in).
        for q in 0..nq {
            let coef = q * nx..(q + 1) * nx;
            let (c11, c12, c22, c00) =
                (&self.c11[coef.clone()], &self.c12[coef.clone()], &self.c22[coef.clone()], &self.c00[coef]);
            for b in 0..bsz {
                let base = (q * bsz + b) * nx;
                let a = &mut ws.phys_a[base..base + nx];
                let d = &mut ws.phys_b[base..base + nx];
                for j in 0..nx {
                    let (ax, dzv) = (a[j] * scale, d[j] * scale);
                    a[j] = c11[j] * ax + c12[j] * dzv;
                    d[j] = c12[j] * ax + c22[j] * dzv;
                }
                if with_mass {
                    let c = &mut ws.phys_c[base..base + nx];
                    for j in 0..nx {
                        c[j] *= c00[j] * scale;
                    }
                }
            }
        }

        // Back to spectral space: p = I^T (-D_x f1 + f0) + E^T f2.
        for row in 0..rows {
            let out = &mut ws.spec[row * nh..(row + 1) * nh];
            r2c.process_with_scratch(&mut ws.phys_a[row * nx..(row + 1) * nx], out, &mut ws.fwd_scratch)
                .expect("FFT sizes are fixed by the grid");
            for m in 0..nh {
                out[m] *= -self.dx_symbol[m];
            }
            if with_mass {
                r2c.process_with_scratch(&mut ws.phys_c[row * nx..(row + 1) * nx], &mut ws.row, &mut ws.fwd_scratch)
                    .expect("FFT sizes are fixed by the grid");
                for (p, f) in out.iter_mut().zip(&ws.row) {
                    *p += f;
                }
            }
        }
        gemm_rows(self.interp_t.as_ref(), &ws.spec, &mut ws.p, nq, bsz * nh, Accum::Replace);
        for row in 0..rows {
            r2c.process_with_scratch(
                &mut ws.phys_b[row * nx..(row + 1) * nx],
                &mut ws.spec[row * nh..(row + 1) * nh],
                &mut ws.fwd_scratch,
            )
            .expect("FFT sizes are fixed by the grid");
        }
        gemm_rows(self.interp_diff_t.as_ref(), &ws.spec, &mut ws.p, nq, bsz * nh, Accum::Add);
    }

    /// `w_new = -(flat operator)^{-1} p` on the nodes below the surface.
    fn precondition(&self, p: &[Complex64], w_new: &mut [Complex64], bsz: usize) {
        let (nz, nh) = (self.nz, self.nh);
        let top = nz - 1;
        let pr: &[f64] = bytemuck::cast_slice(p);
        let wr: &mut [f64] = bytemuck::cast_slice_mut(w_new);
        let row_stride = (2 * bsz * nh) as isize;
        let col_stride = (2 * nh) as isize;
        for m in 0..nh {
            for c in 0..2 {
                // SAFETY: the strided views stay inside the buffers (offset
                // 2m + c plus at most (top - 1) rows and (bsz - 1) columns)
                // and distinct (m, c) pairs address disjoint elements.
                let (src, dst) = unsafe {
                    (
                        MatRef::from_raw_parts(pr.as_ptr().add(2 * m + c), top, bsz, row_stride, col_stride),
                        MatMut::from_raw_parts_mut(wr.as_mut_ptr().add(2 * m + c), top, bsz, row_stride, col_stride),
                    )
                };
                matmul(dst, Accum::Replace, self.modes[m].inv.as_ref(), src, -1.0, Par::Seq);
            }
        }
    }
}

/// Scratch buffers for one batch.
struct Workspace {
    bsz: usize,
    psi: Vec<Complex64>,
    p: Vec<Complex64>,
    spec: Vec<Complex64>,
    row: Vec<Complex64>,
    phys_a: Vec<f64>,
    phys_b: Vec<f64>,
    phys_c: Vec<f64>,
    fwd_scratch: Vec<Complex64>,
    inv_scratch: Vec<Complex64>,
}

impl Workspace {
    fn new(nx: usize, nz: usize, nq: usize, nh: usize, bsz: usize, grid: &Grid1D) -> Self {
        Self {
            bsz,
            psi: vec![ZERO; nz * bsz * nh],
            p: vec![ZERO; nz * bsz * nh],
            spec: vec![ZERO; nq * bsz * nh],
            row: vec![ZERO; nh],
            phys_a: vec![0.0; nq * bsz * nx],
            phys_b: vec![0.0; nq * bsz * nx],
            phys_c: vec![0.0; nq * bsz * nx],
            fwd_scratch: vec![ZERO; grid.r2c().get_scratch_len()],
            inv_scratch: vec![ZERO; grid.c2r().get_scratch_len()],
        }
    }
}

/// `dst = lhs * src` (or `+=`) where `src` is a row-major complex array with
/// `src_rows` rows and `ncols` columns, and `lhs` is real.
fn gemm_rows(
    lhs: MatRef<'_, f64>,
    src: &[Complex64],
    dst: &mut [Complex64],
    src_rows: usize,
    ncols: usize,
    accum: Accum,
) {
    let s: &[f64] = bytemuck::cast_slice(&src[..src_rows * ncols]);
    let dst_rows = lhs.nrows();
    let d: &mut [f64] = bytemuck::cast_slice_mut(&mut dst[..dst_rows * ncols]);
    let rhs = MatRef::from_row_major_slice(s, src_rows, 2 * ncols);
    let out = MatMut::from_row_major_slice_mut(d, dst_rows, 2 * ncols);
    matmul(out, accum, lhs, rhs, 1.0, Par::Seq);
}

fn project_constants(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Replaces `A` by `P A P` with `P` the orthogonal projector onto mean-zero vectors.
fn project_constants_matrix(a: &mut Mat<f64>) {
    let n = a.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).sum::<f64>() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[(i, j)]).sum::<f64>() / nf).collect();
    let total = row_means.iter().sum::<f64>() / nf;
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += total - row_means[i] - col_means[j];
        }
    }
}

/// Applies `G_k[eta]` to `u`.
pub fn apply_dno(strip: &StripGrid, eta: &[f64], u: &[f64], k: f64) -> Result<Vec<f64>> {
    DnoSolver::new(strip, eta, k, DnoSettings::default())?.apply(u)
}

/// Dense matrix of `G_k[eta]`.
pub fn dno_matrix(strip: &StripGrid, eta: &[f64], k: f64) -> Result<DnoMatrix> {
    DnoSolver::new(strip, eta, k, DnoSettings::default())?.matrix()
}

/// Nodal matrix of the flat multiplier `r tanh r` (a circulant).
pub fn flat_matrix(grid: &Grid1D, k: f64) -> Mat<f64> {
    let n = grid.n();
    let mut spec = vec![ZERO; grid.n_half()];
    for (m, c) in spec.iter_mut().enumerate() {
        *c = Complex64::new(flat_symbol(grid.wavenumber(m), k), 0.0);
    }
    let kernel = grid.inverse(&spec);
    Mat::from_fn(n, n, |i, l| kernel[(i + n - l) % n])
}

/// `G_k[eta]` for all `0 <= k <= k_max` on one surface.
///
/// The departure `C(k) = G_k[eta] - G_k[0]` is a Schur complement of
/// `S + k^2 M`, analytic in `k^2` away from `k^2 <= -(pi / (2 h_max))^2`
/// (`h_max` the largest depth). In `s = sqrt(k^2 + a)` with `a` below that
/// bound it is analytic in the half plane `Re s > 0`, so polynomial
/// interpolation at Chebyshev points of `s` converges geometrically; the
/// number of points is chosen from the corresponding Bernstein ellipse.
#[derive(Clone, Debug)]
pub struct DnoFamily {
    grid: Grid1D,
    k_max: f64,
    shift: f64,
    /// Interpolation points in `s`, decreasing (Chebyshev points of the second kind).
    nodes: Vec<f64>,
    corrections: Vec<Mat<f64>>,
    /// Largest raw asymmetry and iteration count over the builds.
    pub asymmetry: f64,
    pub iterations: usize,
}

impl DnoFamily {
    /// Target relative accuracy of the interpolant.
    pub const TOLERANCE: f64 = 1e-13;

    pub fn build(strip: &StripGrid, eta: &[f64], k_max: f64, settings: DnoSettings) -> Result<Self> {
        if !(k_max.is_finite() && k_max >= 0.0) {
            return Err(WaveError::InvalidArgument(format!("k_max must be finite and nonnegative, got {k_max}")));
        }
        build_flattening(strip, eta)?;
        let (shift, nodes) = Self::layout(eta, k_max);
        let mut corrections = Vec::with_capacity(nodes.len());
        let (mut asymmetry, mut iterations) = (0.0f64, 0);
        let ks = Self::wavenumbers_of(&nodes, shift, k_max);
        for &k in &ks {
            let solver = DnoSolver::new(strip, eta, k, settings)?;
            let raw = solver.raw_matrix()?;
            asymmetry = asymmetry.max(raw.asymmetry);
            iterations = iterations.max(raw.iterations);
            corrections.push(raw.matrix - flat_matrix(&strip.x, k));
        }
        Ok(Self { grid: strip.x.clone(), k_max, shift, nodes, corrections, asymmetry, iterations })
    }

    /// Reassembles a family from stored corrections (see [`DnoFamily::corrections`]).
    pub fn from_parts(strip: &StripGrid, eta: &[f64], k_max: f64, corrections: Vec<Mat<f64>>) -> Result<Self> {
        let (shift, nodes) = Self::layout(eta, k_max);
        let n = strip.nx();
        if corrections.len() != nodes.len() || corrections.iter().any(|c| c.nrows() != n || c.ncols() != n) {
            return Err(WaveError::LengthMismatch { expected: nodes.len(), found: corrections.len() });
        }
        Ok(Self { grid: strip.x.clone(), k_max, shift, nodes, corrections, asymmetry: 0.0, iterations: 0 })
    }

    /// Shift `a` and interpolation points for a surface and range.
    fn layout(eta: &[f64], k_max: f64) -> (f64, Vec<f64>) {
        let h_max = 1.0 + eta.iter().cloned().fold(0.0, f64::max);
        let shift = 0.8 * (std::f64::consts::FRAC_PI_2 / h_max).powi(2);
        let (lo, hi) = (shift.sqrt(), (k_max * k_max + shift).sqrt());
        if hi - lo < 1e-14 {
            return (shift, vec![lo]);
        }
        // Distance of s = 0 from the interval in units of the half width.
        let t0 = (hi + lo) / (hi - lo);
        let rho = t0 + (t0 * t0 - 1.0).sqrt();
        let count = ((1.0 / Self::TOLERANCE).ln() / rho.ln()).ceil() as usize + 2;
        let count = count.max(4);
        let mut nodes: Vec<f64> = (0..count)
            .map(|j| {
                let t = (std::f64::consts::PI * j as f64 / (count - 1) as f64).cos();
                0.5 * (hi + lo) + 0.5 * (hi - lo) * t
            })
            .collect();
        nodes[0] = hi;
        nodes[count - 1] = lo;
        (shift, nodes)
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// Transverse wavenumbers at which the operator was built.
    pub fn build_wavenumbers(&self) -> Vec<f64> {
        Self::wavenumbers_of(&self.nodes, self.shift, self.k_max)
    }

    /// Wavenumbers of the interpolation points; the end points are exactly `k_max` and `0`.
    fn wavenumbers_of(nodes: &[f64], shift: f64, k_max: f64) -> Vec<f64> {
        let last = nodes.len() - 1;
        nodes
            .iter()
            .enumerate()
            .map(|(j, s)| match j {
                0 if last > 0 => k_max,
                j if j == last => 0.0,
                _ => (s * s - shift).max(0.0).sqrt(),
            })
            .collect()
    }

    pub fn corrections(&self) -> &[Mat<f64>] {
        &self.corrections
    }

    /// `G_k[eta]` (symmetric; constants projected out at `k = 0`).
    pub fn matrix(&self, k: f64) -> Result<Mat<f64>> {
        let k = k.abs();
        if !(k <= self.k_max * (1.0 + 1e-12)) {
            return Err(WaveError::InvalidArgument(format!(
                "transverse wavenumber {k} outside the interpolated range [0, {}]",
                self.k_max
            )));
        }
        let s = (k * k + self.shift).sqrt();
        let count = self.nodes.len();
        let mut g = flat_matrix(&self.grid, k);
        let exact = self.build_wavenumbers().iter().position(|&t| t == k);
        if let Some(j) = exact.or_else(|| self.nodes.iter().position(|&t| t == s)) {
            g += &self.corrections[j];
        } else {
            let raw: Vec<f64> = (0..count)
                .map(|j| {
                    let w = if j == 0 || j + 1 == count { 0.5 } else { 1.0 };
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * w / (s - self.nodes[j])
                })
                .collect();
            let total: f64 = raw.iter().sum();
            let n = g.nrows();
            for (c, w) in self.corrections.iter().zip(&raw) {
                let w = *w / total;
                for col in 0..n {
                    for row in 0..n {
                        g[(row, col)] += w * c[(row, col)];
                    }
                }
            }
        }
        if k == 0.0 {
            project_constants_matrix(&mut g);
        }
        Ok(g)
    }
}

/// Surface potential on the periodic grid, `phi(x) = periodic(x) + slope * x`.
///
/// A solitary-wave potential tends to different constants as `x -> +-inf`;
/// on the periodic box it is carried by a periodic part and a linear ramp.
/// The ramp is harmonic in any domain with a flat bottom, so at `k = 0` its
/// Dirichlet–Neumann image is exactly `-slope * eta_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    pub periodic: Vec<f64>,
    pub slope: f64,
}

impl Potential {
    pub fn periodic(values: Vec<f64>) -> Self {
        Self { periodic: values, slope: 0.0 }
    }

    pub fn derivative(&self, grid: &Grid1D) -> Vec<f64> {
        grid.derivative(&self.periodic, 1).into_iter().map(|d| d + self.slope).collect()
    }

    /// Nodal values `periodic(x_j) + slope * x_j`.
    pub fn values(&self, grid: &Grid1D) -> Vec<f64> {
        self.periodic.iter().zip(grid.nodes()).map(|(p, x)| p + self.slope * x).collect()
    }

    /// `G_k[eta] phi` using a solver built on `eta`.
    pub fn apply_dno(&self, solver: &DnoSolver, eta_x: &[f64]) -> Result<Vec<f64>> {
        if self.slope != 0.0 && solver.k() != 0.0 {
            return Err(WaveError::InvalidArgument(
                "a potential with a linear ramp is only admissible at k = 0".into(),
            ));
        }
        let mut g = solver.apply(&self.periodic)?;
        for (gi, ex) in g.iter_mut().zip(eta_x) {
            *gi -= self.slope * ex;
        }
        Ok(g)
    }
}

/// `Z = (G phi + eta_x phi_x) / (1 + eta_x^2)` and `v = phi_x - Z eta_x`,
/// given `G phi`.
pub fn z_and_v(eta_x: &[f64], g_phi: &[f64], phi_x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> =
        (0..eta_x.len()).map(|j| (g_phi[j] + eta_x[j] * phi_x[j]) / (1.0 + eta_x[j] * eta_x[j])).collect();
    let v = (0..eta_x.len()).map(|j| phi_x[j] - z[j] * eta_x[j]).collect();
    (z, v)
}

/// Surface fields `Z` and `v` at `k = 0` for a given surface and potential.
pub fn compute_z_v(strip: &StripGrid, eta: &[f64], phi: &Potential) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = &strip.x;
    let solver = DnoSolver::new(strip, eta, 0.0, DnoSettings::default())?;
    let eta_x = grid.derivative(eta, 1);
    let g_phi = phi.apply_dno(&solver, &eta_x)?;
    Ok(z_and_v(&eta_x, &g_phi, &phi.derivative(grid)))
}

/// Shape derivative of `G_k[eta] phi` in direction `h`:
/// `-G_k(h Z_k) - d_x(h (phi_x - Z_k eta_x)) + k^2 h phi`.
pub fn frechet_dno(strip: &StripGrid, eta: &[f64], phi: &Potential, h: &[f64], k: f64) -> Result<Vec<f64>> {
    let grid = &strip.x;
    grid.check_len(h.len())?;
    let solver = DnoSolver::new(strip, eta, k, DnoSettings::default())?;
    let eta_x = grid.derivative(eta, 1);
    let phi_x = phi.derivative(grid);
    let g_phi = phi.apply_dno(&solver, &eta_x)?;
    let (z, v) = z_and_v(&eta_x, &g_phi, &phi_x);
    let hz: Vec<f64> = h.iter().zip(&z).map(|(a, b)| a * b).collect();
    let g_hz = solver.apply(&hz)?;
    let hv: Vec<f64> = h.iter().zip(&v).map(|(a, b)| a * b).collect();
    let d_hv = grid.derivative(&hv, 1);
    let phi_vals = phi.values(grid);
    Ok((0..grid.n()).map(|j| -g_hz[j] - d_hv[j] + k * k * h[j] * phi_vals[j]).collect())
}

/// Dense reference solver: assembles the full discrete energy operator on all
/// strip nodes and eliminates the interior exactly. Only for small grids; it
/// serves as an independent check of the iterative solver.
pub mod direct {
    use super::*;

    /// Matrix of the Fourier multiplier `symbol(xi)` on nodal values.
    fn multiplier_matrix(grid: &Grid1D, symbol: impl Fn(usize) -> f64) -> Mat<f64> {
        let n = grid.n();
        let mut a = Mat::<f64>::zeros(n, n);
        for l in 0..n {
            let mut e = vec![0.0; n];
            e[l] = 1.0;
            let mut s = grid.forward(&e);
            for (m, c) in s.iter_mut().enumerate() {
                *c *= symbol(m);
            }
            let col = grid.inverse(&s);
            for j in 0..n {
                a[(j, l)] = col[j];
            }
        }
        a
    }

    struct Assembled {
        full: Mat<f64>,
        flat: Mat<f64>,
    }

    fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |r, c| {
            a[(r / b.nrows(), c / b.ncols())] * b[(r % b.nrows(), c % b.ncols())]
        })
    }

    fn assemble(strip: &StripGrid, eta: &[f64], k: f64) -> Result<Assembled> {
        let grid = &strip.x;
        build_flattening(strip, eta)?;
        let zg = &strip.z;
        let (nx, nq) = (strip.nx(), zg.n_quad());
        let eta_x = grid.derivative(eta, 1);
        let dx = grid.derivative_matrix();
        let ident = Mat::<f64>::identity(nx, nx);
        let xx = multiplier_matrix(grid, |m| {
            let xi = grid.wavenumber(m);
            xi * xi + k * k
        });
        let (stiff, mass) = flat_forms(zg);
        let flat = kron(&stiff, &ident) + kron(&mass, &xx);

        // Functionals mapping nodal values to x-derivative, z-derivative and
        // values at the quadrature points.
        let ax = kron(&zg.interp, &dx);
        let bz = kron(&zg.interp_diff, &ident);
        let vv = kron(&zg.interp, &ident);
        let size = nq * nx;
        let diag = |f: &dyn Fn(usize, usize) -> f64| {
            let mut d = Mat::<f64>::zeros(size, size);
            for q in 0..nq {
                for j in 0..nx {
                    d[(q * nx + j, q * nx + j)] = zg.quad_weights[q] * f(q, j);
                }
            }
            d
        };
        let w = |q: usize, j: usize| conductivity(eta[j], eta_x[j], zg.quad_nodes[q]);
        let c11 = diag(&|q, j| w(q, j).0 - 1.0);
        let c12 = diag(&|q, j| w(q, j).1);
        let c22 = diag(&|q, j| w(q, j).2 - 1.0);
        let c00 = diag(&|_, j| k * k * eta[j]);
        let full = &flat
            + ax.transpose() * &c11 * &ax
            + ax.transpose() * &c12 * &bz
            + bz.transpose() * &c12 * &ax
            + bz.transpose() * &c22 * &bz
            + vv.transpose() * &c00 * &vv;
        Ok(Assembled { full, flat })
    }

    fn schur_top(a: &Mat<f64>, nx: usize, nz: usize) -> Mat<f64> {
        let ni = nx * (nz - 1);
        let aii = a.as_ref().submatrix(0, 0, ni, ni).to_owned();
        let ait = a.as_ref().submatrix(0, ni, ni, nx).to_owned();
        let ati = a.as_ref().submatrix(ni, 0, nx, ni);
        let att = a.as_ref().submatrix(ni, ni, nx, nx);
        let sol = aii.partial_piv_lu().solve(&ait);
        att.to_owned() - ati * &sol
    }

    /// Dense matrix of `G_k[eta]` by exact elimination.
    pub fn dno_matrix_direct(strip: &StripGrid, eta: &[f64], k: f64) -> Result<Mat<f64>> {
        let grid = &strip.x;
        let (nx, nz) = (strip.nx(), strip.nz());
        let asm = assemble(strip, eta, k)?;
        let g_eta = schur_top(&asm.full, nx, nz);
        let g_flat = schur_top(&asm.flat, nx, nz);
        let exact = multiplier_matrix(grid, |m| flat_symbol(grid.wavenumber(m), k));
        Ok(exact + g_eta - g_flat)
    }

    /// Collocation trace `-eta_x psi_x + (1 + eta_x^2)/(1 + eta) psi_z` at the
    /// surface, with `psi` the discrete solution from the dense solver.
    pub fn dno_trace_direct(strip: &StripGrid, eta: &[f64], u: &[f64], k: f64) -> Result<Vec<f64>> {
        let grid = &strip.x;
        let (nx, nz) = (strip.nx(), strip.nz());
        let asm = assemble(strip, eta, k)?;
        let ni = nx * (nz - 1);
        let aii = asm.full.as_ref().submatrix(0, 0, ni, ni).to_owned();
        let ait = asm.full.as_ref().submatrix(0, ni, ni, nx);
        let uc = Mat::<f64>::from_fn(nx, 1, |j, _| u[j]);
        let rhs = -(ait * &uc);
        let interior = aii.partial_piv_lu().solve(&rhs);
        let psi = |i: usize, j: usize| if i == nz - 1 { u[j] } else { interior[(i * nx + j, 0)] };
        let top = nz - 1;
        let eta_x = grid.derivative(eta, 1);
        let u_x = grid.derivative(u, 1);
        Ok((0..nx)
            .map(|j| {
                let psi_z: f64 = (0..nz).map(|l| strip.z.diff[(top, l)] * psi(l, j)).sum();
                -eta_x[j] * u_x[j] + (1.0 + eta_x[j] * eta_x[j]) / (1.0 + eta[j]) * psi_z
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn strip(lx: f64, nx: usize, nz: usize) -> StripGrid {
        StripGrid::new(Grid1D::new(lx, nx).unwrap(), nz).unwrap()
    }

    /// Gaussian bump; its periodic extension is smooth to roundoff on the boxes used here.
    fn bump(grid: &Grid1D, amp: f64, width: f64) -> Vec<f64> {
        grid.nodes().iter().map(|x| amp * (-(x / width).powi(2)).exp()).collect()
    }

    fn smooth_data(grid: &Grid1D) -> Vec<f64> {
        let l = grid.half_length();
        grid.nodes()
            .iter()
            .map(|x| (PI * x / l).sin() + 0.4 * (2.0 * PI * x / l).cos() + 0.2 * (-x * x / 4.0).exp())
            .collect()
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn flat_operator_is_the_exact_multiplier() {
        let s = strip(PI, 32, 16);
        let eta = vec![0.0; 32];
        for &k in &[0.0, 0.5, 1.0] {
            for mode in 1..5 {
                let u: Vec<f64> = s.x.nodes().iter().map(|x| (mode as f64 * x).cos()).collect();
                let g = apply_dno(&s, &eta, &u, k).unwrap();
                let sym = flat_symbol(mode as f64, k);
                let err: f64 = g.iter().zip(&u).map(|(a, b)| (a - sym * b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "k={k} mode={mode} err={err}");
            }
        }
    }

    #[test]
    fn flat_discrete_symbol_is_spectrally_accurate() {
        let s = strip(PI, 32, 24);
        let solver = DnoSolver::new(&s, &vec![0.0; 32], 0.7, DnoSettings::default()).unwrap();
        for m in 0..17 {
            let exact = flat_symbol(m as f64, 0.7);
            assert!((solver.flat_discrete_symbol(m) - exact).abs() < 1e-10 * exact.max(1.0));
        }
    }

    #[test]
    fn iterative_solver_matches_dense_elimination() {
        let s = strip(6.0, 24, 10);
        let eta = bump(&s.x, 0.08, 1.5);
        for &k in &[0.0, 0.8] {
            let it = dno_matrix(&s, &eta, k).unwrap();
            let dense = direct::dno_matrix_direct(&s, &eta, k).unwrap();
            let dense_sym = Mat::<f64>::from_fn(24, 24, |i, j| 0.5 * (dense[(i, j)] + dense[(j, i)]));
            let diff = (&it.matrix - &dense_sym).norm_l2() / dense_sym.norm_l2();
            assert!(diff < 1e-11, "k={k}: {diff}");
            let asym = (&dense - dense.transpose()).norm_l2() / dense.norm_l2();
            assert!(asym < 1e-12, "dense asymmetry {asym}");
        }
    }

    #[test]
    fn variational_flux_matches_collocation_trace_for_smooth_data() {
        let s = strip(8.0, 48, 20);
        let eta = bump(&s.x, 0.05, 2.0);
        let u = smooth_data(&s.x);
        for &k in &[0.0, 0.6] {
            let g = apply_dno(&s, &eta, &u, k).unwrap();
            let trace = direct::dno_trace_direct(&s, &eta, &u, k).unwrap();
            let err = max_abs(&g.iter().zip(&trace).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err < 1e-7 * max_abs(&g), "k={k}: {err}");
        }
    }

    #[test]
    fn first_order_shape_expansion() {
        // G[d eta] = G0 + d G1 + O(d^2), G1 u = -(eta u_x)_x + k^2 eta u - G0(eta G0 u).
        let s = strip(10.0, 64, 24);
        let shape = bump(&s.x, 1.0, 2.0);
        let u = smooth_data(&s.x);
        let k = 0.4;
        let g0 = |v: &[f64]| s.x.apply_multiplier(v, |xi| flat_symbol(xi, k));
        let g0u = g0(&u);
        let eg0u: Vec<f64> = shape.iter().zip(&g0u).map(|(a, b)| a * b).collect();
        let g0eg0u = g0(&eg0u);
        let ux = s.x.derivative(&u, 1);
        let eux: Vec<f64> = shape.iter().zip(&ux).map(|(a, b)| a * b).collect();
        let d_eux = s.x.derivative(&eux, 1);
        let g1: Vec<f64> = (0..64).map(|j| -d_eux[j] + k * k * shape[j] * u[j] - g0eg0u[j]).collect();
        let mut errs = Vec::new();
        for &d in &[1e-2, 5e-3] {
            let eta: Vec<f64> = shape.iter().map(|e| d * e).collect();
            let g = apply_dno(&s, &eta, &u, k).unwrap();
            let r: Vec<f64> = (0..64).map(|j| g[j] - g0u[j] - d * g1[j]).collect();
            errs.push(max_abs(&r));
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "second-order remainder ratio {ratio}, errs {errs:?}");
    }

    #[test]
    fn exact_harmonic_trace_on_curved_surface() {
        // Phi = cosh(r (z + 1)) cos(xi x) solves the problem for any surface; its flux is explicit.
        let lx = 10.0;
        for &(nx, nz) in &[(64usize, 20usize), (128, 32)] {
            let s = strip(lx, nx, nz);
            let eta = bump(&s.x, 0.06, 2.0);
            let eta_x = s.x.derivative(&eta, 1);
            let xi = 3.0 * PI / lx;
            let x = s.x.nodes();
            for &k in &[0.0, 0.7] {
                let r = (xi * xi + k * k).sqrt();
                let u: Vec<f64> = (0..nx).map(|j| (r * (1.0 + eta[j])).cosh() * (xi * x[j]).cos()).collect();
                let exact: Vec<f64> = (0..nx)
                    .map(|j| {
                        let depth = r * (1.0 + eta[j]);
                        r * depth.sinh() * (xi * x[j]).cos() + eta_x[j] * xi * depth.cosh() * (xi * x[j]).sin()
                    })
                    .collect();
                let g = apply_dno(&s, &eta, &u, k).unwrap();
                let err = max_abs(&g.iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>());
                assert!(err < 1e-11, "nx={nx} k={k}: {err}");
            }
        }
    }

    #[test]
    fn constants_are_annihilated_at_zero_k() {
        let s = strip(6.0, 32, 12);
        let eta = bump(&s.x, 0.1, 1.0);
        let g = apply_dno(&s, &eta, &vec![1.0; 32], 0.0).unwrap();
        assert!(max_abs(&g) < 1e-14);
    }

    #[test]
    fn frechet_derivative_matches_finite_differences() {
        let s = strip(10.0, 64, 20);
        let eta = bump(&s.x, 0.06, 2.0);
        let phi = Potential::periodic(smooth_data(&s.x));
        let h: Vec<f64> = s.x.nodes().iter().map(|x| (-(x - 1.0).powi(2) / 3.0).exp()).collect();
        for &k in &[0.0, 0.7] {
            let exact = frechet_dno(&s, &eta, &phi, &h, k).unwrap();
            let t = 1e-5;
            let plus: Vec<f64> = eta.iter().zip(&h).map(|(e, d)| e + t * d).collect();
            let minus: Vec<f64> = eta.iter().zip(&h).map(|(e, d)| e - t * d).collect();
            let gp = apply_dno(&s, &plus, &phi.periodic, k).unwrap();
            let gm = apply_dno(&s, &minus, &phi.periodic, k).unwrap();
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * t)).collect();
            let err = max_abs(&fd.iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err < 1e-6 * max_abs(&exact), "k={k}: err {err}");
        }
    }

    #[test]
    fn linear_ramp_has_exact_image() {
        // phi = x is harmonic with a flat bottom, so G[eta] x = -eta_x.
        let s = strip(6.0, 32, 16);
        let eta = bump(&s.x, 0.1, 1.0);
        let eta_x = s.x.derivative(&eta, 1);
        let solver = DnoSolver::new(&s, &eta, 0.0, DnoSettings::default()).unwrap();
        let ramp = Potential { periodic: vec![0.0; 32], slope: 1.0 };
        let g = ramp.apply_dno(&solver, &eta_x).unwrap();
        let err = max_abs(&g.iter().zip(&eta_x).map(|(a, b)| a + b).collect::<Vec<_>>());
        assert!(err < 1e-15);
    }

    #[test]
    fn reflection_reuse_matches_full_build() {
        let s = strip(8.0, 32, 12);
        let mut eta = bump(&s.x, 0.07, 1.5);
        let n = eta.len();
        for j in 1..n / 2 {
            eta[n - j] = eta[j];
        }
        let settings = DnoSettings::default();
        let even = DnoSolver::new(&s, &eta, 0.4, settings).unwrap().matrix().unwrap();
        // A surface that is not bitwise even forces the full build.
        let mut shifted = eta.clone();
        shifted[3] += 1e-300;
        let full = DnoSolver::new(&s, &shifted, 0.4, settings).unwrap().matrix().unwrap();
        assert!((&even.matrix - &full.matrix).norm_l2() < 1e-12 * full.matrix.norm_l2());
    }

    #[test]
    fn flat_matrix_is_the_multiplier() {
        let s = strip(PI, 16, 8);
        let a = flat_matrix(&s.x, 0.3);
        let u = smooth_data(&s.x);
        let expect = s.x.apply_multiplier(&u, |xi| flat_symbol(xi, 0.3));
        let au = &a * Mat::<f64>::from_fn(16, 1, |i, _| u[i]);
        let err = (0..16).map(|i| (au[(i, 0)] - expect[i]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn interpolated_family_matches_direct_builds() {
        let s = strip(10.0, 48, 16);
        let eta = bump(&s.x, -0.05, 2.0);
        let family = DnoFamily::build(&s, &eta, 3.0, DnoSettings::default()).unwrap();
        for &k in &[0.0, 0.013, 0.37, 1.234, 2.9, 3.0] {
            let direct = dno_matrix(&s, &eta, k).unwrap().matrix;
            let interp = family.matrix(k).unwrap();
            let err = (&interp - &direct).norm_l2() / direct.norm_l2();
            assert!(err < 1e-12, "k={k}: {err}");
        }
        assert!(family.matrix(3.5).is_err());
    }

    #[test]
    fn rejects_surface_touching_bottom() {
        let s = strip(6.0, 16, 10);
        let eta = vec![-0.995; 16];
        assert!(matches!(build_flattening(&s, &eta), Err(WaveError::DepthFloor { .. })));
    }
}
