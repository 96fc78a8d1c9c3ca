use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavespec::io_cli::{
    load_config, pipeline, run_dno_check, run_pipeline, run_validation, suite::summary_lines, RunConfig,
};
use wavespec::{Result, WaveError};

/// Transverse instability of capillary-gravity solitary waves.
#[derive(Parser, Debug)]
#[command(name = "wavespec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Newton-refined solitary wave: profile.csv and solitary.json.
    Solitary(Common),
    /// Dirichlet-Neumann operator checks: dno_check.json.
    DnoCheck(Common),
    /// Spectrum of J L(k) at chosen wavenumbers: spectrum_k.json.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Transverse wavenumbers (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<f64>,
    },
    /// Growth-rate curve and instability band: growth_curve.csv and spectrum.json.
    GrowthCurve(Common),
    /// Full pipeline including the wave packet and validation.json.
    Wavepacket(Common),
    /// Full acceptance suite; exits 1 when a check fails.
    Validate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nz: Option<usize>,
    #[arg(long)]
    kmax: Option<f64>,
    #[arg(long)]
    nk: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cache directory (takes precedence over WAVESPEC_CACHE and the config).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => match (self.epsilon, self.beta) {
                (Some(e), Some(b)) => RunConfig::new(e, b),
                _ => return Err(WaveError::Config("either --config or both --epsilon and --beta are required".into())),
            },
        };
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.nx {
            cfg.grid.nx = v;
        }
        if let Some(v) = self.nz {
            cfg.grid.nz = v;
        }
        if let Some(v) = self.kmax {
            cfg.k_range.k_max = v;
        }
        if let Some(v) = self.nk {
            cfg.k_range.nk = v;
        }
        if let Some(v) = &self.out {
            cfg.output.out_dir = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.output.threads = Some(v);
        }
        if let Some(v) = &self.cache {
            // The command line outranks the environment variable.
            std::env::set_var(wavespec::io_cli::CACHE_ENV, v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solitary(c) => {
            let (w, id) = pipeline::run_solitary(c.config()?)?;
            println!("residual {:.3e}, DN identity {:.3e}", w.residual_norm, id.dn_identity);
            Ok(true)
        }
        Command::DnoCheck(c) => {
            let doc = run_dno_check(c.config()?)?;
            for check in &doc.checks.checks {
                println!(
                    "{}: {:.3e} {} {:.3e} -> {}",
                    check.name,
                    check.value,
                    check.relation,
                    check.limit,
                    pass(check.pass)
                );
            }
            Ok(doc.checks.passed)
        }
        Command::Spectrum { common, k } => {
            for p in pipeline::run_spectrum(common.config()?, &k)? {
                let top = p.leading.first().copied().unwrap_or((f64::NAN, f64::NAN));
                println!(
                    "k {:.6e}: top {:.6e}{:+.3e}i, unstable {}, n_neg(L) {}",
                    p.k, top.0, top.1, p.n_unstable, p.n_negative_l
                );
            }
            Ok(true)
        }
        Command::GrowthCurve(c) => {
            let s = pipeline::run_growth_curve(c.config()?)?;
            match s.band {
                Some(b) => {
                    println!("band ({:.6e}, {:.6e}), k0 {:.6e}, sigma0 {:.6e}, m {:?}", b.lo, b.hi, s.k0, s.sigma0, s.m)
                }
                None => println!("no instability band"),
            }
            Ok(true)
        }
        Command::Wavepacket(c) => {
            let a = run_pipeline(c.config()?)?;
            for check in a.validation.failures() {
                println!("FAIL {}: {:.6e} {} {:.6e}", check.name, check.value, check.relation, check.limit);
            }
            Ok(a.validation.passed)
        }
        Command::Validate(c) => {
            let outcome = run_validation(c.config()?)?;
            for check in outcome.report.failures() {
                println!("FAIL {}: {:.6e} {} {:.6e}", check.name, check.value, check.relation, check.limit);
            }
            for line in summary_lines(&outcome.criteria) {
                println!("{line}");
            }
            println!("report: {}", outcome.path.display());
            Ok(outcome.report.passed)
        }
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
