//! Periodic Fourier grid in `x` and Chebyshev–Lobatto grid in the vertical
//! coordinate of the flattened strip `[-1, 0]`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Result, WaveError};

/// Uniform periodic grid on `[-Lx, Lx)` with `n` nodes and FFT plans.
#[derive(Clone)]
pub struct Grid1D {
    half_length: f64,
    n: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid1D").field("half_length", &self.half_length).field("n", &self.n).finish()
    }
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.half_length.to_bits() == other.half_length.to_bits()
    }
}

impl Grid1D {
    /// Builds the grid `x_j = -Lx + 2 Lx j / n`, `j = 0..n`.
    pub fn new(half_length: f64, n: usize) -> Result<Self> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(WaveError::Grid(format!("Lx must be positive, got {half_length}")));
        }
        if n < 16 || !n.is_multiple_of(2) {
            return Err(WaveError::Grid(format!("Nx must be even and at least 16, got {n}")));
        }
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self { half_length, n, r2c: planner.plan_fft_forward(n), c2r: planner.plan_fft_inverse(n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of coefficients of the real half spectrum, `n / 2 + 1`.
    pub fn n_half(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_length + self.spacing() * j as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Nonnegative wavenumber of half-spectrum index `m`, `xi_m = pi m / Lx`.
    pub fn wavenumber(&self, m: usize) -> f64 {
        PI * m as f64 / self.half_length
    }

    /// All wavenumbers in FFT order: `0, 1, .., n/2-1, -n/2, .., -1` (times `pi / Lx`).
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        (0..n)
            .map(|m| {
                let s = if m < n / 2 { m } else { m - n };
                PI * s as f64 / self.half_length
            })
            .collect()
    }

    /// Index of the Nyquist coefficient in the half spectrum.
    pub fn nyquist(&self) -> usize {
        self.n / 2
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(WaveError::LengthMismatch { expected: self.n, found: len });
        }
        Ok(())
    }

    pub(crate) fn r2c(&self) -> &Arc<dyn RealToComplex<f64>> {
        &self.r2c
    }

    pub(crate) fn c2r(&self) -> &Arc<dyn ComplexToReal<f64>> {
        &self.c2r
    }

    /// Unnormalized forward real FFT into the half spectrum.
    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        let mut input = u.to_vec();
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_half()];
        self.forward_into(&mut input, &mut out);
        out
    }

    /// Forward FFT using caller-provided buffers; `input` is clobbered.
    pub fn forward_into(&self, input: &mut [f64], out: &mut [Complex64]) {
        self.r2c.process(input, out).expect("real FFT buffer sizes are fixed by the grid");
    }

    /// Inverse of [`Grid1D::forward`] including the `1/n` normalization.
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut s = spec.to_vec();
        let mut out = vec![0.0; self.n];
        self.inverse_into(&mut s, &mut out);
        out
    }

    /// Normalized inverse FFT using caller buffers; `spec` is clobbered.
    pub fn inverse_into(&self, spec: &mut [Complex64], out: &mut [f64]) {
        let last = spec.len() - 1;
        spec[0].im = 0.0;
        spec[last].im = 0.0;
        self.c2r.process(spec, out).expect("real FFT buffer sizes are fixed by the grid");
        let scale = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Multiplier of `d^order/dx^order` at half-spectrum index `m`. The
    /// Nyquist coefficient is dropped for odd orders so that odd derivatives
    /// map real data to real data and the first derivative is skew.
    pub fn derivative_symbol(&self, m: usize, order: u32) -> Complex64 {
        if order % 2 == 1 && m == self.nyquist() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, self.wavenumber(m)).powu(order)
    }

    /// Spectral derivative of a real grid function.
    pub fn derivative(&self, u: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return u.to_vec();
        }
        let mut spec = self.forward(u);
        for (m, c) in spec.iter_mut().enumerate() {
            *c *= self.derivative_symbol(m, order);
        }
        self.inverse(&spec)
    }

    /// Spectral derivative of a complex grid function.
    pub fn derivative_complex(&self, u: &[Complex64], order: u32) -> Vec<Complex64> {
        let re: Vec<f64> = u.iter().map(|z| z.re).collect();
        let im: Vec<f64> = u.iter().map(|z| z.im).collect();
        let dre = self.derivative(&re, order);
        let dim = self.derivative(&im, order);
        dre.into_iter().zip(dim).map(|(a, b)| Complex64::new(a, b)).collect()
    }

    /// Applies a real even Fourier multiplier `symbol(|xi|)`.
    pub fn apply_multiplier(&self, u: &[f64], symbol: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut spec = self.forward(u);
        for (m, c) in spec.iter_mut().enumerate() {
            *c *= symbol(self.wavenumber(m));
        }
        self.inverse(&spec)
    }

    /// Discrete `L^2` inner product `h * sum u_j v_j`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        Ok(self.spacing() * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Discrete `L^2` inner product of complex functions, `h * sum u_j conj(v_j)`.
    pub fn inner_complex(&self, u: &[Complex64], v: &[Complex64]) -> Result<Complex64> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        Ok(u.iter().zip(v).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.spacing())
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        (self.spacing() * u.iter().map(|a| a * a).sum::<f64>()).sqrt()
    }

    pub fn norm_complex(&self, u: &[Complex64]) -> f64 {
        (self.spacing() * u.iter().map(|a| a.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Mean value `(1 / 2Lx) * integral u`.
    pub fn mean(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() / self.n as f64
    }

    /// The seminorm `|| r / (1 + r)^{1/2} u ||` with `r = sqrt(xi^2 + k^2)`,
    /// evaluated through Parseval.
    pub fn weighted_seminorm(&self, u: &[f64], k: f64) -> Result<f64> {
        self.check_len(u.len())?;
        let spec = self.forward(u);
        let mut acc = 0.0;
        for (m, c) in spec.iter().enumerate() {
            let xi = self.wavenumber(m);
            let r = (xi * xi + k * k).sqrt();
            let weight = r * r / (1.0 + r);
            let mult = if m == 0 || m == self.nyquist() { 1.0 } else { 2.0 };
            acc += mult * weight * c.norm_sqr();
        }
        Ok((self.spacing() / self.n as f64 * acc).sqrt())
    }

    /// Reflection `u(x) -> u(-x)` on the grid (index map `j -> (n - j) mod n`).
    pub fn reflect(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n).map(|j| u[(self.n - j) % self.n]).collect()
    }

    /// Even extension of nodal values on `x <= 0` (`half.len() == n/2 + 1`).
    pub fn even_extension(&self, half: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|j| if j <= n / 2 { half[j] } else { half[n - j] }).collect()
    }

    /// Odd extension of nodal values on `-Lx < x < 0` (`interior.len() == n/2 - 1`);
    /// zero at `x = -Lx` and `x = 0`.
    pub fn odd_extension(&self, interior: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|j| match j {
                0 => 0.0,
                j if j < n / 2 => interior[j - 1],
                j if j == n / 2 => 0.0,
                j => -interior[n - j - 1],
            })
            .collect()
    }

    /// Dense spectral first-derivative matrix (Nyquist dropped), exactly skew.
    pub fn derivative_matrix(&self) -> Mat<f64> {
        let n = self.n;
        let scale = 0.5 * PI / self.half_length;
        let mut d = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for l in (j + 1)..n {
                let s = (l - j) as f64;
                let sign = if (l - j) % 2 == 0 { 1.0 } else { -1.0 };
                let value = -scale * sign / (PI * s / n as f64).tan();
                d[(j, l)] = value;
                d[(l, j)] = -value;
            }
        }
        d
    }

    /// Dense matrix of a real even Fourier multiplier `symbol(|xi|)`
    /// (symmetric circulant).
    pub fn multiplier_matrix(&self, symbol: impl Fn(f64) -> f64) -> Mat<f64> {
        let n = self.n;
        let mut col = vec![0.0; n];
        col[0] = 1.0;
        let kernel = self.apply_multiplier(&col, symbol);
        let mut a = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for l in 0..n {
                let d = (j + n - l) % n;
                let e = (l + n - j) % n;
                a[(j, l)] = 0.5 * (kernel[d] + kernel[e]);
            }
        }
        a
    }

    /// Dense matrix of the pseudo-inverse of the first derivative: the
    /// multiplier `1 / (i xi)` on all modes except the mean and Nyquist modes.
    pub fn antiderivative_matrix(&self) -> Mat<f64> {
        let n = self.n;
        let mut col = vec![0.0; n];
        col[0] = 1.0;
        let mut spec = self.forward(&col);
        for (m, c) in spec.iter_mut().enumerate() {
            if m == 0 || m == self.nyquist() {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c /= Complex64::new(0.0, self.wavenumber(m));
            }
        }
        let kernel = self.inverse(&spec);
        // Circulant: entry (j, l) depends on j - l only. Enforce skew symmetry.
        let mut a = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for l in 0..n {
                let d = (j + n - l) % n;
                let e = (l + n - j) % n;
                a[(j, l)] = 0.5 * (kernel[d] - kernel[e]);
            }
        }
        a
    }
}

/// Chebyshev–Lobatto discretization of the vertical interval `[-1, 0]`.
///
/// Unknowns are values at the Chebyshev–Lobatto nodes, i.e. polynomials of
/// degree `nz - 1` in `z`. Integrals of products of such polynomials with
/// low-degree coefficients are evaluated exactly by a Gauss–Legendre rule
/// with `nz + 2` points.
#[derive(Clone, Debug)]
pub struct ChebyshevGrid {
    /// Increasing nodes, `z_0 = -1` (bottom) and `z_{nz-1} = 0` (surface).
    pub nodes: Vec<f64>,
    /// Collocation differentiation matrix with respect to `z`.
    pub diff: Mat<f64>,
    /// Gauss–Legendre points on `[-1, 0]`.
    pub quad_nodes: Vec<f64>,
    /// Gauss–Legendre weights on `[-1, 0]`.
    pub quad_weights: Vec<f64>,
    /// Interpolation from nodal values to the quadrature points.
    pub interp: Mat<f64>,
    /// Derivative of the interpolant at the quadrature points.
    pub interp_diff: Mat<f64>,
}

impl ChebyshevGrid {
    pub fn new(nz: usize) -> Result<Self> {
        if nz < 8 {
            return Err(WaveError::Grid(format!("Nz must be at least 8, got {nz}")));
        }
        let m = nz - 1;
        let mf = m as f64;
        // t_i = -cos(pi i / m), written symmetrically to keep t_{m-i} = -t_i.
        let t: Vec<f64> = (0..nz).map(|i| (PI * (2.0 * i as f64 - mf) / (2.0 * mf)).sin()).collect();
        let nodes: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, &ti)| match i {
                0 => -1.0,
                _ if i == m => 0.0,
                _ => 0.5 * (ti - 1.0),
            })
            .collect();

        let bary = |i: usize| {
            let s = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
            if i == 0 || i == m {
                0.5 * s
            } else {
                s
            }
        };
        let mut diff = Mat::<f64>::zeros(nz, nz);
        for i in 0..nz {
            let mut row_sum = 0.0;
            for j in 0..nz {
                if i == j {
                    continue;
                }
                // t_i - t_j = 2 sin(pi (i + j) / 2m) sin(pi (i - j) / 2m)
                let a = PI * (i + j) as f64 / (2.0 * mf);
                let b = PI * (i as f64 - j as f64) / (2.0 * mf);
                let dt = 2.0 * a.sin() * b.sin();
                // d/dz = 2 d/dt on [-1, 0]
                let value = 2.0 * bary(j) / bary(i) / dt;
                diff[(i, j)] = value;
                row_sum += value;
            }
            diff[(i, i)] = -row_sum;
        }

        let (gx, gw) = gauss_legendre(nz + 2);
        let quad_nodes: Vec<f64> = gx.iter().map(|x| 0.5 * (x - 1.0)).collect();
        let quad_weights: Vec<f64> = gw.iter().map(|w| 0.5 * w).collect();
        let nq = quad_nodes.len();
        let mut interp = Mat::<f64>::zeros(nq, nz);
        for (q, &y) in gx.iter().enumerate() {
            let terms: Vec<f64> = (0..nz).map(|j| bary(j) / (y - t[j])).collect();
            let denom: f64 = terms.iter().sum();
            for j in 0..nz {
                interp[(q, j)] = terms[j] / denom;
            }
        }
        let interp_diff = &interp * &diff;

        Ok(Self { nodes, diff, quad_nodes, quad_weights, interp, interp_diff })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the surface node `z = 0`.
    pub fn top(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of quadrature points.
    pub fn n_quad(&self) -> usize {
        self.quad_nodes.len()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre polynomial.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Tensor grid of the flattened fluid strip `[-Lx, Lx) x [-1, 0]`.
#[derive(Clone, Debug)]
pub struct StripGrid {
    pub x: Grid1D,
    pub z: ChebyshevGrid,
}

impl StripGrid {
    pub fn new(x: Grid1D, nz: usize) -> Result<Self> {
        Ok(Self { x, z: ChebyshevGrid::new(nz)? })
    }

    pub fn nx(&self) -> usize {
        self.x.n()
    }

    pub fn nz(&self) -> usize {
        self.z.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn wavenumbers_are_integers_on_two_pi_box() {
        let g = Grid1D::new(PI, 16).unwrap();
        let xi = g.wavenumbers();
        let expected: Vec<f64> = (0..8).chain(-8..0).map(|m| m as f64).collect();
        assert!(max_abs_diff(&xi, &expected) < 1e-14);
    }

    #[test]
    fn rejects_odd_sizes() {
        let err = Grid1D::new(1.0, 15).unwrap_err();
        assert!(err.to_string().contains("Nx must be even"));
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let g = Grid1D::new(PI, 32).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|x| (3.0 * x).sin()).collect();
        let du = g.derivative(&u, 1);
        let expected: Vec<f64> = g.nodes().iter().map(|x| 3.0 * (3.0 * x).cos()).collect();
        assert!(max_abs_diff(&du, &expected) < 1e-12);
        let d2 = g.derivative(&u, 2);
        let expected2: Vec<f64> = u.iter().map(|v| -9.0 * v).collect();
        assert!(max_abs_diff(&d2, &expected2) < 1e-11);
    }

    #[test]
    fn derivative_matrix_matches_fft_derivative() {
        let g = Grid1D::new(7.3, 24).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|x| (x / 7.3 * PI).cos().exp()).collect();
        let d = g.derivative_matrix();
        let du: Vec<f64> = (0..24).map(|i| (0..24).map(|j| d[(i, j)] * u[j]).sum()).collect();
        assert!(max_abs_diff(&du, &g.derivative(&u, 1)) < 1e-12);
        for i in 0..24 {
            for j in 0..24 {
                assert_eq!(d[(i, j)], -d[(j, i)]);
            }
        }
    }

    #[test]
    fn antiderivative_inverts_derivative_on_oscillatory_modes() {
        let g = Grid1D::new(3.0, 16).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|x| (PI * x / 3.0).sin() + 0.3 * (2.0 * PI * x / 3.0).cos()).collect();
        let du = g.derivative(&u, 1);
        let a = g.antiderivative_matrix();
        let back: Vec<f64> = (0..16).map(|i| (0..16).map(|j| a[(i, j)] * du[j]).sum()).collect();
        assert!(max_abs_diff(&back, &u) < 1e-13);
    }

    #[test]
    fn inner_product_and_seminorm() {
        let g = Grid1D::new(PI, 64).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
        assert!((g.inner(&s, &s).unwrap() - PI).abs() < 1e-12);
        assert!(g.inner(&s, &s[..10]).is_err());
        // cos + i sin has seminorm sqrt(pi); real and imaginary parts carry half each.
        let c: Vec<f64> = g.nodes().iter().map(|x| x.cos()).collect();
        let total = g.weighted_seminorm(&c, 0.0).unwrap().powi(2) + g.weighted_seminorm(&s, 0.0).unwrap().powi(2);
        assert!((total.sqrt() - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_grid_differentiates_and_integrates_polynomials() {
        let c = ChebyshevGrid::new(16).unwrap();
        assert_eq!(c.nodes[0], -1.0);
        assert_eq!(c.nodes[15], 0.0);
        let f: Vec<f64> = c.nodes.iter().map(|z| z.powi(5) - 2.0 * z * z).collect();
        let df: Vec<f64> = (0..16).map(|i| (0..16).map(|j| c.diff[(i, j)] * f[j]).sum()).collect();
        let expected: Vec<f64> = c.nodes.iter().map(|z| 5.0 * z.powi(4) - 4.0 * z).collect();
        assert!(max_abs_diff(&df, &expected) < 1e-11);
        // Interpolate z^9 to the quadrature points and integrate it exactly.
        let p: Vec<f64> = c.nodes.iter().map(|z| z.powi(9)).collect();
        let pq: Vec<f64> = (0..c.n_quad()).map(|q| (0..16).map(|j| c.interp[(q, j)] * p[j]).sum()).collect();
        let integral: f64 = pq.iter().zip(&c.quad_weights).map(|(v, w)| v * v * w).sum();
        assert!((integral - 1.0 / 19.0).abs() < 1e-14);
        let dq: Vec<f64> = (0..c.n_quad()).map(|q| (0..16).map(|j| c.interp_diff[(q, j)] * p[j]).sum()).collect();
        for (q, &y) in c.quad_nodes.iter().enumerate() {
            assert!((dq[q] - 9.0 * y.powi(8)).abs() < 1e-11);
        }
    }

    #[test]
    fn reflection_maps_node_to_mirror() {
        let g = Grid1D::new(2.0, 16).unwrap();
        let x = g.nodes();
        let r = g.reflect(&x);
        assert_eq!(r[0], x[0]);
        for j in 1..16 {
            assert!((r[j] + x[j]).abs() < 1e-15);
        }
    }
}
