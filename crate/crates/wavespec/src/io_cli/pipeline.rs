//! Orchestration: solitary wave → Dirichlet–Neumann family → linearized
//! operators and their spectra → wave packet, with cached expensive stages
//! and deterministic outputs.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use faer::Mat;
use serde::Serialize;

use super::cache::{Cache, CacheKey, CacheStatus, CODE_VERSION};
use super::config::RunConfig;
use super::output::{write_csv, write_json, Cell, Metadata};
use crate::dno::{DnoFamily, DnoSettings, Potential};
use crate::error::{Result, StageContext, WaveError};
use crate::evolution::{
    build_wavepacket, fit_times, linear_evolve, packet_growth_fit, quadratic_form_drift, sandwich_width, GrowthFit,
    Propagator,
};
use crate::grid::{Grid1D, StripGrid};
use crate::solitary::{solve, verify_identities, IdentityReport, SolitaryWave};
use crate::spectra::{
    constrained_coercivity, evenness_check, growth_curve, real_eigenvector, reduced_spectrum, similarity_check, Band,
    GrowthCurve, Linearization, ReducedSpectrum, SimilarityReport,
};

/// Thresholds of the pipeline checks.
pub mod limits {
    pub const NEWTON_RESIDUAL: f64 = 1e-10;
    pub const DN_IDENTITY: f64 = 1e-9;
    pub const DN_ASYMMETRY: f64 = 1e-8;
    pub const ZERO_MODE_CORRELATION: f64 = 0.999;
    pub const ZERO_K_REAL: f64 = 1e-6;
    pub const UNSTABLE_IMAG: f64 = 1e-8;
    pub const SIMILARITY: f64 = 1e-6;
    pub const CROSSING_CELLS: f64 = 2.0;
    pub const MODE_GROWTH: f64 = 1e-3;
    pub const FORM_DRIFT: f64 = 1e-8;
    pub const SIGMA_FIT: f64 = 0.02;
    pub const RHO_FIT: f64 = 0.25;
    pub const EVENNESS: f64 = 1e-8;
}

/// Number of e-folds of the single-mode evolution check.
const MODE_EFOLDS: f64 = 3.0;
/// Implicit-midpoint steps over the single-mode horizon.
const MIDPOINT_STEPS: usize = 300;

/// Wall-clock time per stage (never written to output files).
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub solitary: Duration,
    pub dno: Duration,
    pub sweep: Duration,
    pub packet: Duration,
    pub total: Duration,
}

/// One pass/fail line of a validation report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion the check belongs to, if any.
    pub criterion: Option<u8>,
    pub value: f64,
    pub relation: &'static str,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, criterion: Option<u8>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), criterion, value, relation: "<=", limit, pass: value <= limit }
    }

    pub fn at_least(name: &str, criterion: Option<u8>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), criterion, value, relation: ">=", limit, pass: value >= limit }
    }

    pub fn above(name: &str, criterion: Option<u8>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), criterion, value, relation: ">", limit, pass: value > limit }
    }

    pub fn equals(name: &str, criterion: Option<u8>, value: f64, target: f64) -> Self {
        Self { name: name.into(), criterion, value, relation: "==", limit: target, pass: value == target }
    }

    pub fn holds(name: &str, criterion: Option<u8>, ok: bool) -> Self {
        Self::equals(name, criterion, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Set when a stage failed and later outputs are missing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incomplete: Option<String>,
}

impl ValidationReport {
    pub fn new(checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.pass);
        Self { checks, passed, incomplete: None }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Validated configuration, output directory, cache and worker pool.
pub struct Session {
    pub cfg: RunConfig,
    pub meta: Metadata,
    pub cache: Cache,
    pool: rayon::ThreadPool,
}

impl Session {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let cache = cfg.cache_dir();
        Self::with_cache_dir(cfg, cache)
    }

    /// As [`Session::new`] with an explicit cache directory.
    pub fn with_cache_dir(cfg: RunConfig, cache_dir: PathBuf) -> Result<Self> {
        cfg.validate()?;
        // Dense kernels run sequentially: parallel reductions would make the
        // floating-point results depend on scheduling.
        faer::set_global_parallelism(faer::Par::Seq);
        std::fs::create_dir_all(&cfg.output.out_dir)?;
        let cache = Cache::open(cache_dir)?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.output.threads {
            pool = pool.num_threads(n);
        }
        let pool = pool.build().map_err(|e| WaveError::Config(format!("output.threads: {e}")))?;
        let meta = Metadata { code_version: CODE_VERSION.into(), config_digest: cfg.digest()? };
        Ok(Self { cfg, meta, cache, pool })
    }

    /// Runs `f` on the session's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.cfg.output.out_dir.join(name)
    }

    pub fn strip(&self) -> Result<StripGrid> {
        StripGrid::new(Grid1D::new(self.cfg.half_length()?, self.cfg.grid.nx)?, self.cfg.grid.nz)
    }

    /// Newton-refined solitary wave, from the cache when available.
    pub fn solitary(&self) -> Result<(SolitaryWave, CacheStatus)> {
        let cfg = &self.cfg;
        let params = cfg.params()?;
        let strip = self.strip()?;
        let n = strip.nx();
        let key = CacheKey::builder("solitary")
            .f64("epsilon", cfg.epsilon)
            .f64("beta", cfg.beta)
            .f64("half_length", strip.x.half_length())
            .usize("nx", n)
            .usize("nz", strip.nz())
            .f64("newton_tol", cfg.tolerances.newton_tol)
            .usize("newton_max_iter", cfg.tolerances.newton_max_iter)
            .finish();
        let mut built = None;
        let (payload, status) = self.cache.get_or_build(&key, || {
            let w = solve(&params, &strip, cfg.tolerances.newton_tol, cfg.tolerances.newton_max_iter)?;
            let mut payload = w.state.eta.clone();
            payload.extend_from_slice(&w.state.phi.periodic);
            payload.push(w.state.phi.slope);
            built = Some(w);
            Ok(payload)
        })?;
        if let Some(w) = built {
            return Ok((w, status));
        }
        if payload.len() != 2 * n + 1 {
            return Err(WaveError::Cache(format!(
                "solitary entry holds {} values, expected {}",
                payload.len(),
                2 * n + 1
            )));
        }
        let phi = Potential { periodic: payload[n..2 * n].to_vec(), slope: payload[2 * n] };
        let w = SolitaryWave::from_fields(&params, &strip, payload[..n].to_vec(), phi)?;
        Ok((w, status))
    }

    /// `G_k[eta]` interpolation family on `[0, k_max]`, from the cache when available.
    pub fn family(&self, w: &SolitaryWave) -> Result<(DnoFamily, CacheStatus)> {
        let settings = DnoSettings::default();
        let k_max = self.cfg.k_range.k_max;
        let strip = &w.strip;
        let n = strip.nx();
        let key = CacheKey::builder("dno-family")
            .f64("half_length", strip.x.half_length())
            .usize("nx", n)
            .usize("nz", strip.nz())
            .f64("k_max", k_max)
            .f64("settings.tol", settings.tol)
            .usize("settings.max_iter", settings.max_iter)
            .f64s("eta", w.eta())
            .finish();
        let mut built = None;
        let (payload, status) = self.cache.get_or_build(&key, || {
            let fam = DnoFamily::build(strip, w.eta(), k_max, settings)?;
            let mut payload = vec![fam.asymmetry, fam.iterations as f64];
            for c in fam.corrections() {
                for j in 0..n {
                    payload.extend(c.col(j).iter().copied());
                }
            }
            built = Some(fam);
            Ok(payload)
        })?;
        if let Some(fam) = built {
            return Ok((fam, status));
        }
        let block = n * n;
        if payload.len() < 2 || (payload.len() - 2) % block != 0 {
            return Err(WaveError::Cache(format!("DN family entry holds {} values", payload.len())));
        }
        let corrections = payload[2..].chunks_exact(block).map(|c| Mat::from_fn(n, n, |i, j| c[j * n + i])).collect();
        let mut fam = DnoFamily::from_parts(strip, w.eta(), k_max, corrections)?;
        fam.asymmetry = payload[0];
        fam.iterations = payload[1] as usize;
        Ok((fam, status))
    }

    /// Solitary wave and its linearization, timing both stages.
    pub fn linearize(&self) -> Result<Prepared> {
        let t = Instant::now();
        let (wave, solitary_cache) = self.solitary().stage("solitary")?;
        let solitary_time = t.elapsed();
        let t = Instant::now();
        let (family, dno_cache) = self.install(|| self.family(&wave)).stage("dno")?;
        let dno_time = t.elapsed();
        let mut lin = Linearization::new(&wave, family);
        lin.re_rel_tol = self.cfg.tolerances.re_tol;
        Ok(Prepared { wave, lin, solitary_cache, dno_cache, solitary_time, dno_time })
    }

    /// Writes `profile.csv`.
    pub fn write_profile(&self, w: &SolitaryWave) -> Result<PathBuf> {
        let grid = w.grid();
        let s = &w.state;
        let phi = s.phi.values(grid);
        let rows: Vec<Vec<Cell>> = (0..grid.n())
            .map(|j| [grid.node(j), s.eta[j], phi[j], s.z[j], s.v[j], s.gamma[j]].into_iter().map(Cell::F).collect())
            .collect();
        let notes = [
            ("epsilon", format!("{}", w.params.epsilon)),
            ("beta", format!("{}", w.params.beta)),
            ("newton_residual", super::output::format_f64(w.residual_norm)),
        ];
        let path = self.out_path("profile.csv");
        write_csv(&path, &self.meta, &notes, &["x", "eta", "phi", "Z", "v", "gamma"], &rows)?;
        Ok(path)
    }

    /// Writes `growth_curve.csv`.
    pub fn write_growth_curve(&self, curve: &GrowthCurve) -> Result<PathBuf> {
        let rows: Vec<Vec<Cell>> = curve
            .samples
            .iter()
            .map(|s| vec![Cell::F(s.k), Cell::F(s.sigma_re), Cell::F(s.sigma_im), Cell::U(s.n_negative), Cell::F(s.f)])
            .collect();
        let path = self.out_path("growth_curve.csv");
        write_csv(&path, &self.meta, &[], &["k", "sigma_re", "sigma_im", "n_neg_L", "f_k"], &rows)?;
        Ok(path)
    }
}

/// Solitary wave and linearization shared by the later stages.
pub struct Prepared {
    pub wave: SolitaryWave,
    pub lin: Linearization,
    pub solitary_cache: CacheStatus,
    pub dno_cache: CacheStatus,
    pub solitary_time: Duration,
    pub dno_time: Duration,
}

/// Grid description written into reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridInfo {
    pub half_length: f64,
    pub nx: usize,
    pub nz: usize,
    pub spacing: f64,
}

impl GridInfo {
    pub fn of(strip: &StripGrid) -> Self {
        Self { half_length: strip.x.half_length(), nx: strip.nx(), nz: strip.nz(), spacing: strip.x.spacing() }
    }
}

/// Summary of the `A_eps` spectrum written into `spectrum.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedSummary {
    pub n_negative: usize,
    pub lambda_minus: f64,
    pub lambda_zero: f64,
    pub lambda_minus_over_eps2: f64,
    /// Lowest eigenvalues, ascending.
    pub lowest: Vec<f64>,
    pub zero_mode_correlation: f64,
    pub translation_residual: f64,
}

impl ReducedSummary {
    pub fn of(r: &ReducedSpectrum) -> Self {
        Self {
            n_negative: r.n_negative,
            lambda_minus: r.lambda_minus,
            lambda_zero: r.lambda_zero,
            lambda_minus_over_eps2: r.lambda_minus / (r.epsilon * r.epsilon),
            lowest: r.eigenvalues.iter().take(6).copied().collect(),
            zero_mode_correlation: r.zero_mode_correlation,
            translation_residual: r.translation_residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub newton_tol: f64,
    pub re_tol: f64,
    pub sym_tol: f64,
    pub edge_tol: f64,
}

/// Contents of `spectrum.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumDoc {
    pub epsilon: f64,
    pub beta: f64,
    pub grid: GridInfo,
    pub tolerances: Tolerances,
    pub band: Option<Band>,
    pub refined: bool,
    pub k0: f64,
    pub sigma0: f64,
    pub sigma_p: f64,
    pub sigma_pp: f64,
    pub sigma_pppp: f64,
    pub m: Option<u32>,
    pub f_positive_at_zero: bool,
    pub f_strictly_decreasing: bool,
    pub f_sign_changes: usize,
    pub f_crossing: Option<f64>,
    pub reduced: ReducedSummary,
    pub similarity: SimilarityReport,
    /// `|sigma(k) - sigma(-k)| / sigma(k)` at `k0 / 2`.
    pub evenness: f64,
    /// Constrained coercivity constant at `(k, value)` pairs.
    pub coercivity: Vec<(f64, f64)>,
}

/// Single-mode evolution at `k0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModeEvolution {
    pub k: f64,
    pub sigma: f64,
    pub efolds: f64,
    pub propagator: Propagator,
    /// `max_t | |V(t)| / (|V(0)| e^{sigma t}) - 1 |`.
    pub growth_error: f64,
    pub midpoint_steps: usize,
    /// Relative drift of `(L V, V)` under implicit midpoint from a perturbed mode.
    pub form_drift: f64,
}

/// Contents of `packet_fit.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PacketReport {
    pub window: (f64, f64),
    pub nk: usize,
    pub one_sided: bool,
    pub dk: f64,
    pub min_overlap: f64,
    pub max_mode_residual: f64,
    pub sigma0: f64,
    pub m: Option<u32>,
    pub fit: GrowthFit,
    pub sigma_rel_error: f64,
    /// `1 / (2 m)`.
    pub rho_expected: Option<f64>,
    pub rho_rel_error: Option<f64>,
    pub sandwich_width: Option<f64>,
    /// Largest `|log |U0|_nk - log |U0|_stride2|` over the fit times.
    pub refinement_difference: f64,
    pub mode: ModeEvolution,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub log_norms: Vec<f64>,
}

/// Everything a full pipeline run produces.
pub struct Artifacts {
    pub wave: SolitaryWave,
    pub identities: IdentityReport,
    pub lin: Linearization,
    pub curve: GrowthCurve,
    pub reduced: ReducedSpectrum,
    pub spectrum: SpectrumDoc,
    pub packet: Option<PacketReport>,
    pub validation: ValidationReport,
    pub solitary_cache: CacheStatus,
    pub dno_cache: CacheStatus,
    pub timings: StageTimings,
    pub files: Vec<PathBuf>,
}

/// Growth curve and the diagnostics derived from it.
pub fn spectra_stage(session: &Session, prep: &Prepared) -> Result<(GrowthCurve, ReducedSpectrum, SpectrumDoc)> {
    let cfg = &session.cfg;
    let lin = &prep.lin;
    let curve = session.install(|| growth_curve(lin, &cfg.k_grid()))?;
    let reduced = reduced_spectrum(&prep.wave, &lin.dn(0.0)?)?;
    let (k_sim, k_even) = if curve.has_instability() { (curve.k0, 0.5 * curve.k0) } else { (0.5, 0.5) };
    let similarity = similarity_check(lin, k_sim)?;
    let evenness = evenness_check(lin, k_even)?;
    let constraints = [reduced.eta_minus.clone(), reduced.eta_zero.clone()];
    let mut coercivity = Vec::new();
    for k in [0.0, k_sim] {
        coercivity.push((k, constrained_coercivity(lin.grid(), &lin.l(k)?, &constraints)?));
    }
    let spectrum = SpectrumDoc {
        epsilon: cfg.epsilon,
        beta: cfg.beta,
        grid: GridInfo::of(&lin.strip),
        tolerances: Tolerances {
            newton_tol: cfg.tolerances.newton_tol,
            re_tol: cfg.tolerances.re_tol,
            sym_tol: cfg.tolerances.sym_tol,
            edge_tol: curve.edge_tol,
        },
        band: curve.band,
        refined: curve.refined,
        k0: curve.k0,
        sigma0: curve.sigma0,
        sigma_p: curve.sigma_p,
        sigma_pp: curve.sigma_pp,
        sigma_pppp: curve.sigma_pppp,
        m: curve.m,
        f_positive_at_zero: curve.f.positive_at_zero,
        f_strictly_decreasing: curve.f.strictly_decreasing,
        f_sign_changes: curve.f.sign_changes,
        f_crossing: curve.f.crossing,
        reduced: ReducedSummary::of(&reduced),
        similarity,
        evenness,
        coercivity,
    };
    Ok((curve, reduced, spectrum))
}

/// Single-mode growth and quadratic-form conservation at `k0`.
pub fn mode_evolution(lin: &Linearization, curve: &GrowthCurve, propagator: Propagator) -> Result<ModeEvolution> {
    let k = curve.k0;
    let l = lin.l(k)?;
    let jl = l.times_j();
    let rep = lin.modes(&jl, k)?;
    let sigma = rep
        .sigma_max()
        .filter(|z| z.re > rep.re_tol)
        .ok_or_else(|| WaveError::Eigen(format!("no unstable eigenvalue at k0 = {k}")))?
        .re;
    let (v, _) = real_eigenvector(&jl, sigma)?;
    let horizon = MODE_EFOLDS / sigma;
    let times: Vec<f64> = (0..=30).map(|i| horizon * i as f64 / 30.0).collect();
    let dt = horizon / MIDPOINT_STEPS as f64;
    let traj = linear_evolve(&jl, &v, &times, propagator, dt)?;
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(&v);
    let growth_error =
        times.iter().zip(&traj).map(|(t, x)| (norm(x) / (n0 * (sigma * t).exp()) - 1.0).abs()).fold(0.0, f64::max);

    // A mode plus a localized even/odd pair, so that (L V, V) is not zero.
    let grid = lin.grid();
    let n = grid.n();
    let width = lin.params.kappa().recip();
    let bump: Vec<f64> = (0..n).map(|j| (-(grid.node(j) / width).powi(2)).exp()).collect();
    let bump_x = grid.derivative(&bump, 1);
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let v0: Vec<f64> =
        (0..2 * n).map(|i| v[i] + 0.3 * scale * if i < n { bump[i] } else { bump_x[i - n] * width }).collect();
    let traj = linear_evolve(&jl, &v0, &times, Propagator::Midpoint, dt)?;
    let (_, form_drift) = quadratic_form_drift(&l.dense(), grid.spacing(), &traj);
    Ok(ModeEvolution {
        k,
        sigma,
        efolds: MODE_EFOLDS,
        propagator,
        growth_error,
        midpoint_steps: MIDPOINT_STEPS,
        form_drift,
    })
}

/// Wave packet over the band, its growth fit and the single-mode checks.
pub fn packet_stage(session: &Session, lin: &Linearization, curve: &GrowthCurve) -> Result<PacketReport> {
    let pc = &session.cfg.packet;
    let packet = session.install(|| build_wavepacket(lin, curve, pc.nk, pc.one_sided))?;
    let times = fit_times(curve.sigma0, pc.fit_points);
    let log_norms: Vec<f64> = times.iter().map(|&t| packet.log_norm(t)).collect();
    let fit = packet_growth_fit(&times, &log_norms)?;
    let refinement_difference = if pc.nk > 1 {
        times.iter().zip(&log_norms).map(|(&t, &y)| (y - packet.log_norm_with_stride(t, 2)).abs()).fold(0.0, f64::max)
    } else {
        0.0
    };
    let rho_expected = curve.m.map(|m| 1.0 / (2.0 * m as f64));
    let mode = mode_evolution(lin, curve, pc.propagator)?;
    let window = (packet.modes[0].k, packet.modes[packet.modes.len() - 1].k);
    Ok(PacketReport {
        window,
        nk: pc.nk,
        one_sided: pc.one_sided,
        dk: packet.dk,
        min_overlap: packet.min_overlap,
        max_mode_residual: packet.modes.iter().map(|m| m.residual).fold(0.0, f64::max),
        sigma0: curve.sigma0,
        m: curve.m,
        fit,
        sigma_rel_error: (fit.sigma - curve.sigma0).abs() / curve.sigma0,
        rho_expected,
        rho_rel_error: rho_expected.map(|r| (fit.rho - r).abs() / r),
        sandwich_width: curve.m.map(|m| sandwich_width(&times, &log_norms, curve.sigma0, m)),
        refinement_difference,
        mode,
        times,
        log_norms,
    })
}

/// Pipeline checks (criterion numbers of the acceptance suite where they apply).
pub fn pipeline_checks(
    session: &Session,
    wave: &SolitaryWave,
    identities: &IdentityReport,
    lin: &Linearization,
    curve: &GrowthCurve,
    spectrum: &SpectrumDoc,
    packet: Option<&PacketReport>,
) -> Vec<Check> {
    use limits::*;
    let mut c = vec![
        Check::at_most("newton_residual", Some(3), wave.residual_norm, NEWTON_RESIDUAL),
        Check::at_most("dn_identity", Some(3), identities.dn_identity, DN_IDENTITY),
        Check::at_most("dn_asymmetry", Some(2), lin.family.asymmetry, DN_ASYMMETRY.min(session.cfg.tolerances.sym_tol)),
        Check::equals("a_eps_negative_count", Some(4), spectrum.reduced.n_negative as f64, 1.0),
        Check::at_least(
            "zero_mode_correlation",
            Some(4),
            spectrum.reduced.zero_mode_correlation,
            ZERO_MODE_CORRELATION,
        ),
    ];
    let max_neg = curve.samples.iter().map(|s| s.n_negative).max().unwrap_or(0);
    let at_zero = curve.samples.iter().find(|s| s.k == 0.0);
    c.push(Check::at_most("l_negative_count_max", Some(5), max_neg as f64, 1.0));
    c.push(Check::equals("l_negative_count_at_zero", Some(5), at_zero.map_or(f64::NAN, |s| s.n_negative as f64), 1.0));
    c.push(Check::at_most(
        "zero_k_max_abs_re_over_scale",
        Some(6),
        at_zero.map_or(f64::NAN, |s| s.max_abs_re / s.scale),
        ZERO_K_REAL,
    ));
    let unstable: Vec<_> = curve.samples.iter().filter(|s| s.n_unstable > 0).collect();
    c.push(Check::at_most(
        "unstable_count_max",
        Some(6),
        unstable.iter().map(|s| s.n_unstable).max().unwrap_or(0) as f64,
        1.0,
    ));
    c.push(Check::at_most(
        "unstable_imag_over_sigma",
        Some(6),
        unstable.iter().map(|s| s.sigma_im.abs() / s.sigma_re).fold(0.0, f64::max),
        UNSTABLE_IMAG,
    ));
    c.push(Check::holds("band_nonempty", Some(6), curve.band.is_some()));
    if let Some(band) = curve.band {
        let beyond = curve.samples.iter().filter(|s| s.k > band.hi && s.n_unstable > 0).count();
        c.push(Check::equals("unstable_beyond_band", Some(6), beyond as f64, 0.0));
    }
    c.push(Check::at_most("similarity_discrepancy", Some(7), spectrum.similarity.discrepancy, SIMILARITY));
    c.push(Check::at_most("evenness", None, spectrum.evenness, EVENNESS));
    for &(k, value) in &spectrum.coercivity {
        c.push(Check::above(&format!("coercivity_at_k_{k:.6e}"), None, value, 0.0));
    }
    c.push(Check::holds("f_positive_at_zero", Some(8), curve.f.positive_at_zero));
    c.push(Check::holds("f_strictly_decreasing", Some(8), curve.f.strictly_decreasing));
    c.push(Check::equals("f_sign_changes", Some(8), curve.f.sign_changes as f64, 1.0));
    let grid = session.cfg.k_grid();
    let cell = grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let crossing_gap = match (curve.f.crossing, curve.band) {
        (Some(x), Some(b)) => (x - b.hi).abs() / cell,
        _ => f64::INFINITY,
    };
    c.push(Check::at_most("f_crossing_minus_band_edge_in_cells", Some(8), crossing_gap, CROSSING_CELLS));
    c.push(Check::equals("degeneracy_order_m", Some(10), curve.m.map_or(f64::NAN, f64::from), 2.0));
    match packet {
        Some(p) => {
            c.push(Check::at_most("mode_growth_error", Some(10), p.mode.growth_error, MODE_GROWTH));
            c.push(Check::at_most("midpoint_form_drift", Some(10), p.mode.form_drift, FORM_DRIFT));
            c.push(Check::at_most("packet_sigma_rel_error", Some(10), p.sigma_rel_error, SIGMA_FIT));
            c.push(Check::at_most("packet_rho_rel_error", Some(10), p.rho_rel_error.unwrap_or(f64::NAN), RHO_FIT));
        }
        None => c.push(Check::holds("packet_built", Some(10), false)),
    }
    c
}

/// The full pipeline: writes `profile.csv`, `growth_curve.csv`,
/// `spectrum.json`, `packet.csv`, `packet_fit.json` and `validation.json`.
///
/// A failing stage writes `validation.json` flagged `incomplete` with the
/// stage error before returning it.
pub fn run_pipeline(cfg: RunConfig) -> Result<Artifacts> {
    run_session(&Session::new(cfg)?)
}

/// [`run_pipeline`] in an existing session.
pub fn run_session(session: &Session) -> Result<Artifacts> {
    let validation_path = session.out_path("validation.json");
    match run_stages(session) {
        Ok(a) => Ok(a),
        Err(e) => {
            let report = ValidationReport { checks: Vec::new(), passed: false, incomplete: Some(e.to_string()) };
            write_json(&validation_path, &session.meta, &report)?;
            Err(e)
        }
    }
}

fn run_stages(session: &Session) -> Result<Artifacts> {
    let start = Instant::now();
    for stale in ["profile.csv", "growth_curve.csv", "spectrum.json", "packet.csv", "packet_fit.json"] {
        let path = session.out_path(stale);
        if path.exists() {
            std::fs::remove_file(path)?;
        }
    }
    let prep = session.linearize()?;
    let identities = verify_identities(&prep.wave);
    let mut files = vec![session.write_profile(&prep.wave).stage("output")?];

    let t = Instant::now();
    let (curve, reduced, spectrum) = spectra_stage(session, &prep).stage("spectra")?;
    let sweep = t.elapsed();
    files.push(session.write_growth_curve(&curve).stage("output")?);
    let path = session.out_path("spectrum.json");
    write_json(&path, &session.meta, &spectrum).stage("output")?;
    files.push(path);

    let t = Instant::now();
    let packet = if curve.has_instability() {
        Some(packet_stage(session, &prep.lin, &curve).stage("evolution")?)
    } else {
        log::warn!("no instability band detected; skipping the wave packet");
        None
    };
    let packet_time = t.elapsed();
    if let Some(p) = &packet {
        let rows: Vec<Vec<Cell>> = p
            .times
            .iter()
            .zip(&p.log_norms)
            .map(|(&t, &y)| {
                let model = p.fit.c + p.fit.sigma * t - p.fit.rho * (1.0 + t).ln();
                vec![Cell::F(t), Cell::F(y.exp()), Cell::F(y - model)]
            })
            .collect();
        let path = session.out_path("packet.csv");
        let notes = [("fit", "log packet_norm = c + sigma t - rho log(1 + t)".to_string())];
        write_csv(&path, &session.meta, &notes, &["t", "packet_norm", "fit_residual"], &rows).stage("output")?;
        files.push(path);
        let path = session.out_path("packet_fit.json");
        write_json(&path, &session.meta, p).stage("output")?;
        files.push(path);
    }

    let checks = pipeline_checks(session, &prep.wave, &identities, &prep.lin, &curve, &spectrum, packet.as_ref());
    let validation = ValidationReport::new(checks);
    let path = session.out_path("validation.json");
    write_json(&path, &session.meta, &validation).stage("output")?;
    files.push(path);

    let timings = StageTimings {
        solitary: prep.solitary_time,
        dno: prep.dno_time,
        sweep,
        packet: packet_time,
        total: start.elapsed(),
    };
    log::info!(
        "stages: solitary {:.2?} ({:?}), dno {:.2?} ({:?}), spectra {:.2?}, packet {:.2?}",
        timings.solitary,
        prep.solitary_cache,
        timings.dno,
        prep.dno_cache,
        timings.sweep,
        timings.packet
    );
    Ok(Artifacts {
        wave: prep.wave,
        identities,
        lin: prep.lin,
        curve,
        reduced,
        spectrum,
        packet,
        validation,
        solitary_cache: prep.solitary_cache,
        dno_cache: prep.dno_cache,
        timings,
        files,
    })
}

/// `solitary` subcommand: writes `profile.csv` and `solitary.json`.
pub fn run_solitary(cfg: RunConfig) -> Result<(SolitaryWave, IdentityReport)> {
    #[derive(Serialize)]
    struct Doc {
        epsilon: f64,
        beta: f64,
        grid: GridInfo,
        residual_norm: f64,
        dn_identity: f64,
        z_identity: f64,
        gamma_identity: f64,
        min_gamma: f64,
        min_depth: f64,
    }
    let session = Session::new(cfg)?;
    let (w, _) = session.solitary().stage("solitary")?;
    let id = verify_identities(&w);
    session.write_profile(&w)?;
    let doc = Doc {
        epsilon: w.params.epsilon,
        beta: w.params.beta,
        grid: GridInfo::of(&w.strip),
        residual_norm: w.residual_norm,
        dn_identity: id.dn_identity,
        z_identity: id.z_identity,
        gamma_identity: id.gamma_identity,
        min_gamma: id.min_gamma,
        min_depth: id.min_depth,
    };
    write_json(&session.out_path("solitary.json"), &session.meta, &doc)?;
    Ok((w, id))
}

/// `growth-curve` subcommand: writes `profile.csv`, `growth_curve.csv` and `spectrum.json`.
pub fn run_growth_curve(cfg: RunConfig) -> Result<SpectrumDoc> {
    let session = Session::new(cfg)?;
    let prep = session.linearize()?;
    session.write_profile(&prep.wave)?;
    let (curve, _, spectrum) = spectra_stage(&session, &prep).stage("spectra")?;
    session.write_growth_curve(&curve)?;
    write_json(&session.out_path("spectrum.json"), &session.meta, &spectrum)?;
    Ok(spectrum)
}

/// Spectral data of `J L(k)` at one wavenumber.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointSpectrum {
    pub k: f64,
    /// Eigenvalues with the largest real parts, as `(re, im)`.
    pub leading: Vec<(f64, f64)>,
    pub scale: f64,
    pub re_tol: f64,
    pub n_unstable: usize,
    pub n_negative_l: usize,
    pub lambda_min_l: f64,
    pub f: f64,
    pub similarity_discrepancy: f64,
}

/// `spectrum` subcommand: writes `spectrum_k.json` for the given wavenumbers.
pub fn run_spectrum(cfg: RunConfig, ks: &[f64]) -> Result<Vec<PointSpectrum>> {
    use crate::spectra::eig_symmetric;
    let session = Session::new(cfg)?;
    let prep = session.linearize()?;
    let lin = &prep.lin;
    let points = ks
        .iter()
        .map(|&k| {
            let l = lin.l(k)?;
            let rep = lin.modes(&l.times_j(), k)?;
            let sym = eig_symmetric(&l.dense())?;
            let f = eig_symmetric(&l.j_sandwich())?.max();
            let sim = similarity_check(lin, k)?;
            Ok(PointSpectrum {
                k,
                leading: rep.eigenvalues.iter().take(8).map(|z| (z.re, z.im)).collect(),
                scale: rep.scale,
                re_tol: rep.re_tol,
                n_unstable: rep.unstable.len(),
                n_negative_l: sym.n_negative,
                lambda_min_l: sym.min(),
                f,
                similarity_discrepancy: sim.discrepancy,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("spectra")?;
    write_json(&session.out_path("spectrum_k.json"), &session.meta, &points)?;
    Ok(points)
}
