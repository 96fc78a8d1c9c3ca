//! Run configuration: TOML text with nested sections, defaults for every
//! field but `epsilon` and `beta`, and validation reporting key paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, WaveError};
use crate::evolution::Propagator;
use crate::solitary::{Params, EPSILON_CAP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epsilon: f64,
    pub beta: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub k_range: KRange,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub packet: PacketConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Box half-length; absent means `30 sqrt(beta - 1/3) / eps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
    pub nx: usize,
    pub nz: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_length: None, nx: 512, nz: 48 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KRange {
    pub k_min: f64,
    pub k_max: f64,
    pub nk: usize,
}

impl Default for KRange {
    fn default() -> Self {
        Self { k_min: 0.0, k_max: 3.0, nk: 61 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Sup-norm residual at which Newton stops.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Unstable threshold relative to the spectral radius.
    pub re_tol: f64,
    /// Largest accepted relative asymmetry of symmetric operators.
    pub sym_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { newton_tol: 1e-11, newton_max_iter: 20, re_tol: 1e-6, sym_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacketConfig {
    /// Simpson nodes on the window (odd).
    pub nk: usize,
    /// Window `[k0, k0 + 2w]` instead of `[k0 - w, k0 + w]`.
    pub one_sided: bool,
    pub propagator: Propagator,
    /// Number of times in the growth fit.
    pub fit_points: usize,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self { nk: 33, one_sided: false, propagator: Propagator::Eigen, fit_points: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    /// Cache directory; `WAVESPEC_CACHE` overrides it, absent means
    /// `<out_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for the `k` sweeps; absent means all cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("wavespec-out"), cache_dir: None, threads: None }
    }
}

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "WAVESPEC_CACHE";

impl RunConfig {
    /// Defaults for everything but the two physical parameters.
    pub fn new(epsilon: f64, beta: f64) -> Self {
        Self {
            epsilon,
            beta,
            grid: GridConfig::default(),
            k_range: KRange::default(),
            tolerances: Tolerances::default(),
            packet: PacketConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| WaveError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| WaveError::Config(e.to_string()))
    }

    /// Checks every constraint and reports all violations with their key paths.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, key: &str, msg: String| {
            if !ok {
                errors.push(format!("{key}: {msg}"));
            }
        };
        check(
            self.beta.is_finite() && self.beta > 1.0 / 3.0,
            "beta",
            format!("beta must exceed 1/3 (beta > 1/3), got {}", self.beta),
        );
        check(
            self.epsilon.is_finite() && self.epsilon > 0.0 && self.epsilon <= EPSILON_CAP,
            "epsilon",
            format!("epsilon must lie in (0, {EPSILON_CAP}], got {}", self.epsilon),
        );
        if let Some(lx) = self.grid.half_length {
            check(lx.is_finite() && lx > 0.0, "grid.half_length", format!("must be positive, got {lx}"));
        }
        check(
            self.grid.nx >= 16 && self.grid.nx.is_multiple_of(2),
            "grid.nx",
            format!("Nx must be even and at least 16, got {}", self.grid.nx),
        );
        check(self.grid.nz >= 8, "grid.nz", format!("Nz must be at least 8, got {}", self.grid.nz));
        let k = &self.k_range;
        check(k.k_min.is_finite() && k.k_min >= 0.0, "k_range.k_min", format!("must be nonnegative, got {}", k.k_min));
        check(k.k_max.is_finite() && k.k_max > k.k_min, "k_range.k_max", format!("must exceed k_min, got {}", k.k_max));
        check(k.nk >= 8, "k_range.nk", format!("must be at least 8, got {}", k.nk));
        let t = &self.tolerances;
        check(t.newton_tol > 0.0, "tolerances.newton_tol", format!("must be positive, got {}", t.newton_tol));
        check(t.newton_max_iter >= 1, "tolerances.newton_max_iter", "must be at least 1".into());
        check(t.re_tol > 0.0 && t.re_tol < 1.0, "tolerances.re_tol", format!("must lie in (0, 1), got {}", t.re_tol));
        check(t.sym_tol > 0.0, "tolerances.sym_tol", format!("must be positive, got {}", t.sym_tol));
        let p = &self.packet;
        check(
            p.nk == 1 || (p.nk >= 9 && p.nk % 2 == 1),
            "packet.nk",
            format!("must be 1 or an odd number of at least 9, got {}", p.nk),
        );
        check(p.fit_points >= 4, "packet.fit_points", format!("must be at least 4, got {}", p.fit_points));
        if let Some(n) = self.output.threads {
            check(n >= 1, "output.threads", "must be at least 1".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(WaveError::Config(errors.join("; ")))
        }
    }

    pub fn params(&self) -> Result<Params> {
        Params::new(self.epsilon, self.beta)
    }

    pub fn half_length(&self) -> Result<f64> {
        Ok(match self.grid.half_length {
            Some(lx) => lx,
            None => self.params()?.default_half_length(),
        })
    }

    /// `nk` equally spaced wavenumbers on `[k_min, k_max]`, preceded by `0`
    /// when `k_min > 0`.
    pub fn k_grid(&self) -> Vec<f64> {
        let k = &self.k_range;
        let mut grid: Vec<f64> =
            (0..k.nk).map(|i| k.k_min + (k.k_max - k.k_min) * i as f64 / (k.nk - 1) as f64).collect();
        if k.k_min > 0.0 {
            grid.insert(0, 0.0);
        }
        grid
    }

    /// Cache directory: `WAVESPEC_CACHE`, then the configured one, then
    /// `<out_dir>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        self.output.cache_dir.clone().unwrap_or_else(|| self.output.out_dir.join("cache"))
    }

    /// Hex SHA-256 of the canonical TOML text of everything that affects
    /// the numbers (the `output` section is excluded).
    pub fn digest(&self) -> Result<String> {
        let numeric = Self { output: OutputConfig::default(), ..self.clone() };
        Ok(hex::encode(Sha256::digest(numeric.to_toml_string()?.as_bytes())))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| WaveError::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml_str("epsilon = 0.1\nbeta = 0.5\n").unwrap();
        assert_eq!((cfg.grid.nx, cfg.grid.nz, cfg.k_range.k_max, cfg.k_range.nk), (512, 48, 3.0, 61));
        assert_eq!(cfg.grid.half_length, None);
        assert!((cfg.half_length().unwrap() - 30.0 * (0.5f64 - 1.0 / 3.0).sqrt() / 0.1).abs() < 1e-12);
        let grid = cfg.k_grid();
        assert_eq!(grid.len(), 61);
        assert_eq!(grid[0], 0.0);
        assert!((grid[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn small_beta_is_rejected_with_its_constraint() {
        let err = RunConfig::from_toml_str("epsilon = 0.1\nbeta = 0.3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("beta must exceed 1/3"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn every_violation_is_reported_with_its_key() {
        let text = "epsilon = 0.0\nbeta = 0.5\n[grid]\nnx = 15\n[packet]\nnk = 4\n";
        let msg = RunConfig::from_toml_str(text).unwrap_err().to_string();
        for key in ["epsilon:", "grid.nx:", "packet.nk:"] {
            assert!(msg.contains(key), "{msg}");
        }
    }

    #[test]
    fn unknown_keys_and_parse_errors_are_config_errors() {
        assert!(RunConfig::from_toml_str("epsilon = 0.1\nbeta = 0.5\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("epsilon = \n").is_err());
    }

    #[test]
    fn round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(0.05, 0.7);
        cfg.grid.half_length = Some(120.0);
        cfg.packet.one_sided = true;
        cfg.packet.propagator = Propagator::Midpoint;
        cfg.output.cache_dir = Some(PathBuf::from("/tmp/x"));
        let path = dir.path().join("run.toml");
        save_config(&cfg, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
        assert_eq!(cfg.digest().unwrap(), load_config(&path).unwrap().digest().unwrap());
    }

    #[test]
    fn digest_ignores_output_locations_only() {
        let a = RunConfig::new(0.1, 0.5);
        let mut b = a.clone();
        b.output.out_dir = PathBuf::from("elsewhere");
        b.output.threads = Some(3);
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.grid.nz = 40;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn positive_k_min_keeps_zero_in_the_grid() {
        let mut cfg = RunConfig::new(0.1, 0.5);
        cfg.k_range = KRange { k_min: 0.5, k_max: 1.0, nk: 11 };
        let g = cfg.k_grid();
        assert_eq!(g.len(), 12);
        assert_eq!((g[0], g[1], g[11]), (0.0, 0.5, 1.0));
    }
}
