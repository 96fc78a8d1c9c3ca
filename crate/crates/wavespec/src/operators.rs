//! Linearized water-wave operators about a one-dimensional surface state,
//! reduced by the transverse wavenumber `k`.
//!
//! With `Z`, `v` the surface fields of the state, `D = d/dx`, `G = G_k[eta]`
//! and `P = P_{eps,k}`:
//!
//! ```text
//! L(k)      = [ -P + alpha + (v-1) Z_x        (v-1) D ]
//!             [ -D ((v-1) .)                   G      ]
//! Lambda(k) = [ -P + alpha + Z G Z + Z v_x      (v-1) D - Z G ]
//!             [ -D ((v-1) .) - G Z              G             ]
//! ```
//!
//! and `L = P_mat^T Lambda P_mat` with `P_mat = [[1, 0], [Z, 1]]`. The
//! multiplication by `(v-1) Z_x` is discretized as
//! `(v-1) D Z - Z D (v-1) + Z v_x`, its value in the continuum, which makes the
//! discrete conjugation identity exact. Every operator is a dense matrix on
//! nodal values.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use crate::error::{Result, WaveError};
use crate::grid::Grid1D;

/// Which operator a block matrix represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    L,
    Lambda,
}

/// Surface fields entering the linearization.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceFields {
    pub eta_x: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

/// `2 x 2` block operator acting on `(U1, U2)`.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    pub k: f64,
    pub kind: OperatorKind,
    pub a11: Mat<f64>,
    pub a12: Mat<f64>,
    pub a21: Mat<f64>,
    pub a22: Mat<f64>,
}

impl BlockOperator {
    pub fn n(&self) -> usize {
        self.a11.nrows()
    }

    /// The full `2n x 2n` matrix.
    pub fn dense(&self) -> Mat<f64> {
        stack(&self.a11, &self.a12, &self.a21, &self.a22)
    }

    /// `J A` with `J = [[0, 1], [-1, 0]]`.
    pub fn times_j(&self) -> Mat<f64> {
        stack(&self.a21, &self.a22, &(-&self.a11), &(-&self.a12))
    }

    /// `J A J`, symmetric when `A` is.
    pub fn j_sandwich(&self) -> Mat<f64> {
        stack(&(-&self.a22), &self.a21, &self.a12, &(-&self.a11))
    }

    /// `||A - A^T||_F / ||A||_F`.
    pub fn asymmetry(&self) -> f64 {
        let a = self.dense();
        relative_asymmetry(&a)
    }

    /// Quadratic form `(A U, U)` with the trapezoid weight `h`.
    pub fn quadratic_form(&self, grid: &Grid1D, u1: &[f64], u2: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let mut r1 = 0.0;
            let mut r2 = 0.0;
            for j in 0..n {
                r1 += self.a11[(i, j)] * u1[j] + self.a12[(i, j)] * u2[j];
                r2 += self.a21[(i, j)] * u1[j] + self.a22[(i, j)] * u2[j];
            }
            acc += r1 * u1[i] + r2 * u2[i];
        }
        acc * grid.spacing()
    }
}

fn stack(a11: &Mat<f64>, a12: &Mat<f64>, a21: &Mat<f64>, a22: &Mat<f64>) -> Mat<f64> {
    let n = a11.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a11[(i, j)],
        (true, false) => a12[(i, j - n)],
        (false, true) => a21[(i - n, j)],
        (false, false) => a22[(i - n, j - n)],
    })
}

/// `||A - A^T||_F / ||A||_F`.
pub fn relative_asymmetry(a: &Mat<f64>) -> f64 {
    let norm = a.norm_l2();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm_l2() / norm
}

fn diag(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
}

/// `diag(a) B`.
fn scale_rows(a: &[f64], b: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(b.nrows(), b.ncols(), |i, j| a[i] * b[(i, j)])
}

/// `B diag(a)`.
fn scale_cols(b: &Mat<f64>, a: &[f64]) -> Mat<f64> {
    Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * a[j])
}

/// Capillary operator `P_{eps,k} = beta (D (1+eta_x^2)^{-3/2} D - k^2 (1+eta_x^2)^{-1/2})`.
pub fn assemble_p(grid: &Grid1D, eta_x: &[f64], beta: f64, k: f64) -> Mat<f64> {
    let d = grid.derivative_matrix();
    let c3: Vec<f64> = eta_x.iter().map(|e| beta * (1.0 + e * e).powf(-1.5)).collect();
    let mut p = &d * scale_rows(&c3, &d);
    for (i, e) in eta_x.iter().enumerate() {
        p[(i, i)] -= beta * k * k / (1.0 + e * e).sqrt();
    }
    p
}

/// Shared pieces of `L(k)` and `Lambda(k)`.
struct Pieces {
    d: Mat<f64>,
    vm1: Vec<f64>,
    /// `-P + alpha`.
    base: Mat<f64>,
    /// `(v - 1) D`.
    a12: Mat<f64>,
    /// `Z v_x` as a vector.
    z_vx: Vec<f64>,
}

fn pieces(grid: &Grid1D, fields: &SurfaceFields, beta: f64, alpha: f64, k: f64) -> Pieces {
    let n = grid.n();
    let d = grid.derivative_matrix();
    let vm1: Vec<f64> = fields.v.iter().map(|v| v - 1.0).collect();
    let mut base = -assemble_p(grid, &fields.eta_x, beta, k);
    for i in 0..n {
        base[(i, i)] += alpha;
    }
    let a12 = scale_rows(&vm1, &d);
    let vx = grid.derivative(&fields.v, 1);
    let z_vx = fields.z.iter().zip(&vx).map(|(a, b)| a * b).collect();
    Pieces { d, vm1, base, a12, z_vx }
}

/// `L(k)` given the realized `G_k[eta]`.
pub fn assemble_l(grid: &Grid1D, fields: &SurfaceFields, beta: f64, alpha: f64, k: f64, g: &Mat<f64>) -> BlockOperator {
    let p = pieces(grid, fields, beta, alpha, k);
    let z = &fields.z;
    // (v-1) D Z - Z D (v-1) + Z v_x.
    let commutator = scale_cols(&p.a12, z) - scale_cols(&scale_rows(z, &p.d), &p.vm1);
    let a11 = p.base + commutator + diag(&p.z_vx);
    let a21 = p.a12.transpose().to_owned();
    BlockOperator { k, kind: OperatorKind::L, a11, a12: p.a12, a21, a22: g.clone() }
}

/// `Lambda(k)` given the realized `G_k[eta]`.
pub fn assemble_lambda(
    grid: &Grid1D,
    fields: &SurfaceFields,
    beta: f64,
    alpha: f64,
    k: f64,
    g: &Mat<f64>,
) -> BlockOperator {
    let p = pieces(grid, fields, beta, alpha, k);
    let z = &fields.z;
    let zg = scale_rows(z, g);
    let a11 = p.base + scale_cols(&zg, z) + diag(&p.z_vx);
    let a12 = &p.a12 - &zg;
    let a21 = a12.transpose().to_owned();
    BlockOperator { k, kind: OperatorKind::Lambda, a11, a12, a21, a22: g.clone() }
}

/// Conjugators `P_mat = [[1, 0], [Z, 1]]` and `Q_mat = P_mat^{-1}`.
pub fn conjugators(z: &[f64]) -> (Mat<f64>, Mat<f64>) {
    let n = z.len();
    let build = |sign: f64| {
        Mat::from_fn(2 * n, 2 * n, |i, j| {
            if i == j {
                1.0
            } else if i >= n && j == i - n {
                sign * z[j]
            } else {
                0.0
            }
        })
    };
    (build(1.0), build(-1.0))
}

/// Orthogonal projector onto the Nyquist mode, where `D^{-1}` is undefined.
fn nyquist_projector(grid: &Grid1D) -> Mat<f64> {
    let nf = grid.n() as f64;
    Mat::from_fn(grid.n(), grid.n(), |i, j| if (i + j) % 2 == 0 { 1.0 / nf } else { -1.0 / nf })
}

/// `M = -D^{-1} G_0 D^{-1}` on the modes other than the Nyquist mode (zero
/// there).
///
/// `D^{-1}` does not act on constants, but `M` does: `D^{-1} 1 = x` is
/// harmonic in the fluid with `psi_z = 0` on the bottom, so `G_0 x = -eta_x`
/// and `M 1 = 1 + eta`, the constant of integration being fixed by the flat
/// symbol `tanh(xi) / xi -> 1`. By symmetry the mean of `M u` is the mean of
/// `(1 + eta) u`.
pub fn assemble_m(grid: &Grid1D, g0: &Mat<f64>, eta: &[f64]) -> Mat<f64> {
    let n = grid.n();
    let nf = n as f64;
    let a = grid.antiderivative_matrix();
    let mut m = -(&a * g0 * &a);
    let depth: Vec<f64> = eta.iter().map(|e| 1.0 + e).collect();
    let total: f64 = depth.iter().sum();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += (depth[i] + depth[j] - total / nf) / nf;
        }
    }
    symmetrize(&m)
}

/// Pseudo-inverse of `M`: the inverse off the Nyquist mode, zero on it.
pub fn assemble_m_inverse(grid: &Grid1D, m: &Mat<f64>) -> Result<Mat<f64>> {
    let pi = nyquist_projector(grid);
    let shifted = m + &pi;
    let lu = shifted.partial_piv_lu();
    let inv = lu.inverse();
    if !inv.norm_l2().is_finite() {
        return Err(WaveError::Singular("M is singular on the resolved modes".into()));
    }
    Ok(symmetrize(&(inv - pi)))
}

/// Reduced operator `A_eps = -P_{eps,0} + alpha + gamma D(gamma eta_x) - gamma M^{-1} gamma`.
pub fn assemble_a_eps(
    grid: &Grid1D,
    eta_x: &[f64],
    gamma: &[f64],
    beta: f64,
    alpha: f64,
    m_inv: &Mat<f64>,
) -> Mat<f64> {
    let n = grid.n();
    let mut a = -assemble_p(grid, eta_x, beta, 0.0);
    let g_ex: Vec<f64> = gamma.iter().zip(eta_x).map(|(g, e)| g * e).collect();
    let d_g_ex = grid.derivative(&g_ex, 1);
    for i in 0..n {
        a[(i, i)] += alpha + gamma[i] * d_g_ex[i];
    }
    let reduced = scale_cols(&scale_rows(gamma, m_inv), gamma);
    symmetrize(&(a - reduced))
}

pub fn symmetrize(a: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// Zero state `eta = phi = 0`: `Z = 0`, `v = 0`.
pub fn zero_fields(n: usize) -> SurfaceFields {
    SurfaceFields { eta_x: vec![0.0; n], z: vec![0.0; n], v: vec![0.0; n] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dno::{flat_matrix, flat_symbol};
    use std::f64::consts::PI;

    fn fields(grid: &Grid1D) -> SurfaceFields {
        let x = grid.nodes();
        let eta: Vec<f64> = x.iter().map(|x| -0.02 * (-x * x / 4.0).exp()).collect();
        SurfaceFields {
            eta_x: grid.derivative(&eta, 1),
            z: x.iter().map(|x| 0.03 * x * (-x * x / 5.0).exp()).collect(),
            v: x.iter().map(|x| 0.05 * (-x * x / 3.0).exp()).collect(),
        }
    }

    #[test]
    fn flat_capillary_operator_has_fourier_eigenvalues() {
        let grid = Grid1D::new(PI, 16).unwrap();
        let p = assemble_p(&grid, &[0.0; 16], 0.5, 0.7);
        for m in 1..8 {
            let u: Vec<f64> = grid.nodes().iter().map(|x| (m as f64 * x).cos()).collect();
            for i in 0..16 {
                let pu: f64 = (0..16).map(|j| p[(i, j)] * u[j]).sum();
                assert!((pu + 0.5 * ((m * m) as f64 + 0.49) * u[i]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn conjugation_identity_is_exact() {
        let grid = Grid1D::new(8.0, 32).unwrap();
        let f = fields(&grid);
        let g = flat_matrix(&grid, 0.6);
        let l = assemble_l(&grid, &f, 0.5, 1.01, 0.6, &g);
        let lam = assemble_lambda(&grid, &f, 0.5, 1.01, 0.6, &g);
        let (p, _) = conjugators(&f.z);
        let back = p.transpose() * lam.dense() * &p;
        let err = (&back - l.dense()).norm_l2() / l.dense().norm_l2();
        assert!(err < 1e-14, "{err}");
        assert!(l.asymmetry() < 1e-15 && lam.asymmetry() < 1e-15);
    }

    #[test]
    fn conjugators_are_inverse() {
        let z = [0.3, -0.2, 0.1, 0.7];
        let (p, q) = conjugators(&z);
        let id = &p * &q;
        assert!((id - Mat::<f64>::identity(8, 8)).norm_l2() < 1e-15);
    }

    #[test]
    fn jl_has_zero_trace() {
        let grid = Grid1D::new(8.0, 32).unwrap();
        let f = fields(&grid);
        let g = flat_matrix(&grid, 0.3);
        let jl = assemble_l(&grid, &f, 0.5, 1.01, 0.3, &g).times_j();
        let trace: f64 = (0..64).map(|i| jl[(i, i)]).sum();
        assert!(trace.abs() < 1e-12, "{trace}");
    }

    /// About the zero state each Fourier mode `e^{i xi x}` gives the block
    /// `J [[beta r^2 + alpha, -i xi], [i xi, g]]` with `g = tanh(r) r`, whose
    /// eigenvalues are `i (xi +- sqrt((beta r^2 + alpha) g))`: the frequencies
    /// of the resting fluid, Doppler-shifted by the unit frame speed.
    #[test]
    fn zero_state_jl_has_doppler_shifted_frequencies() {
        let (n, beta, alpha, k) = (16, 0.5, 1.01, 0.4);
        let grid = Grid1D::new(PI, n).unwrap();
        let g = flat_matrix(&grid, k);
        let jl = assemble_l(&grid, &zero_fields(n), beta, alpha, k, &g).times_j();
        let eig = jl.eigenvalues().unwrap();
        let mut found: Vec<f64> = eig.iter().map(|z| z.im).collect();
        assert!(eig.iter().all(|z| z.re.abs() < 1e-10));

        let mut expected = Vec::new();
        let mut undoppled = Vec::new();
        for m in -(n as i64 / 2) + 1..=n as i64 / 2 {
            let xi = m as f64;
            // The Nyquist mode has no resolved x-derivative, in the transport
            // term or in the capillary term.
            let nyquist = m == n as i64 / 2;
            let shift = if nyquist { 0.0 } else { xi };
            let r2 = if nyquist { k * k } else { xi * xi + k * k };
            let omega = ((beta * r2 + alpha) * flat_symbol(xi, k)).sqrt();
            expected.extend([shift + omega, shift - omega]);
            undoppled.extend([omega, -omega]);
        }
        for v in [&mut found, &mut expected, &mut undoppled] {
            v.sort_by(f64::total_cmp);
        }
        let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap(&found, &expected) < 1e-9, "{found:?}\n{expected:?}");
        assert!(gap(&found, &undoppled) > 1.0);
    }

    #[test]
    fn flat_m_is_the_multiplier_and_inverts() {
        let grid = Grid1D::new(PI, 32).unwrap();
        let m = assemble_m(&grid, &flat_matrix(&grid, 0.0), &[0.0; 32]);
        let m_inv = assemble_m_inverse(&grid, &m).unwrap();
        for mode in 0..16 {
            let u: Vec<f64> = grid.nodes().iter().map(|x| (mode as f64 * x).cos()).collect();
            let xi = mode as f64;
            let sym = if mode == 0 { 1.0 } else { flat_symbol(xi, 0.0) / (xi * xi) };
            for i in 0..32 {
                let mu: f64 = (0..32).map(|j| m[(i, j)] * u[j]).sum();
                let iu: f64 = (0..32).map(|j| m_inv[(i, j)] * u[j]).sum();
                assert!((mu - sym * u[i]).abs() < 1e-12);
                assert!((iu - u[i] / sym).abs() < 1e-11);
            }
        }
    }
}
