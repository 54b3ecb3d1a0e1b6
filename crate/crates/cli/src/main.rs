//! `hyperdata`: command-line front end of hyperdata-core.

mod config;
mod pipelines;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{FamilyConfig, OperatorChoice, Pipeline, RunConfig};

const USAGE: i32 = 1;
const NOT_CERTIFIED: i32 = 2;

#[derive(Parser)]
#[command(
    name = "hyperdata",
    version,
    about = "Asymptotically hyperbolic initial data: constraints, mass and deformations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test the dominant energy condition μ >= (1+γ)|J|_g.
    CheckDec {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        /// Require μ > (1+γ)|J|_g strictly.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        gamma: Option<f64>,
        /// Equality tolerance of the non-strict test.
        #[arg(long)]
        dec_tolerance: Option<f64>,
    },
    /// Mass functional from charge integrals.
    Mass {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        /// Number of shell radii.
        #[arg(long)]
        ladder: Option<usize>,
    },
    /// Perturb to data satisfying the strict dominant energy condition.
    PerturbStrict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        /// Mass-drift budget.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Deform to data with an exactly conformally hyperbolic exterior.
    Deform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        /// Cutoff radius λ; the exterior is r >= 2λ.
        #[arg(long)]
        lambda: Option<f64>,
        /// Newton tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Run the strict-DEC perturbation first.
        #[arg(long)]
        strict_first: bool,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Strict-DEC perturbation in Wang gauge, or the gauge change alone.
    Wang {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Only change the radial gauge.
        #[arg(long)]
        gauge_only: bool,
    },
    /// Characteristic exponents of the model operators.
    Indicial {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        op: Option<OperatorChoice>,
        /// Dimension.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Solve u'' + a u' + b u = e^{-rate r} on the radial nodes.
    Ode {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        a: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        b: Option<f64>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda_minus: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda_plus: Option<f64>,
    },
    /// Run the pipeline selected in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config (JSON when the name ends in .json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dimension of the manifold.
    #[arg(long = "dim")]
    n: Option<usize>,
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    /// Radial nodes.
    #[arg(long)]
    nr: Option<usize>,
    /// Angular truncation degree.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    fd_order: Option<usize>,
}

#[derive(Args)]
struct FamilyArgs {
    /// hyperbolic, adss, wang or conf-hyp.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    m: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    p_rr: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    remainder: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    v0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y0_r: Option<f64>,
}

fn base_config(path: &Option<PathBuf>, pipeline: Pipeline) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            if cfg.pipeline != pipeline {
                bail!(
                    "config selects pipeline {} but the command is {}",
                    cfg.pipeline.name(),
                    pipeline.name()
                );
            }
            Ok(cfg)
        }
        None => Ok(RunConfig::new(pipeline)),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let g = &mut cfg.grid;
    if let Some(v) = c.n {
        g.n = v;
    }
    if let Some(v) = c.r0 {
        g.r0 = v;
    }
    if let Some(v) = c.rmax {
        g.rmax = v;
    }
    if let Some(v) = c.nr {
        g.nr = v;
    }
    if let Some(v) = c.l {
        g.l = v;
    }
    if let Some(v) = c.fd_order {
        g.fd_order = v;
    }
}

fn apply_family(cfg: &mut RunConfig, f: &FamilyArgs) -> Result<()> {
    if let Some(name) = &f.family {
        cfg.family = match name.as_str() {
            "hyperbolic" => FamilyConfig::Hyperbolic,
            "adss" => FamilyConfig::Adss { m: 1.0 },
            "wang" => FamilyConfig::Wang {
                m: 0.0,
                p_rr: 0.0,
                remainder: 0.0,
            },
            "conf-hyp" => FamilyConfig::ConfHyp { v0: 0.0, y0_r: 0.0 },
            other => {
                bail!("unknown family {other:?} (expected hyperbolic, adss, wang or conf-hyp)")
            }
        };
    }
    let unused = |flag: &str| anyhow::anyhow!("--{flag} does not apply to the selected family");
    match &mut cfg.family {
        FamilyConfig::Hyperbolic => {
            if f.m.is_some()
                || f.p_rr.is_some()
                || f.remainder.is_some()
                || f.v0.is_some()
                || f.y0_r.is_some()
            {
                return Err(unused("m/p-rr/remainder/v0/y0-r"));
            }
        }
        FamilyConfig::Adss { m } => {
            if let Some(v) = f.m {
                *m = v;
            }
            if f.p_rr.is_some() || f.remainder.is_some() || f.v0.is_some() || f.y0_r.is_some() {
                return Err(unused("p-rr/remainder/v0/y0-r"));
            }
        }
        FamilyConfig::Wang { m, p_rr, remainder } => {
            if let Some(v) = f.m {
                *m = v;
            }
            if let Some(v) = f.p_rr {
                *p_rr = v;
            }
            if let Some(v) = f.remainder {
                *remainder = v;
            }
            if f.v0.is_some() || f.y0_r.is_some() {
                return Err(unused("v0/y0-r"));
            }
        }
        FamilyConfig::ConfHyp { v0, y0_r } => {
            if let Some(v) = f.v0 {
                *v0 = v;
            }
            if let Some(v) = f.y0_r {
                *y0_r = v;
            }
            if f.m.is_some() || f.p_rr.is_some() || f.remainder.is_some() {
                return Err(unused("m/p-rr/remainder"));
            }
        }
    }
    Ok(())
}

fn resolve(command: Command) -> Result<RunConfig> {
    let cfg = match command {
        Command::CheckDec {
            common,
            family,
            strict,
            gamma,
            dec_tolerance,
        } => {
            let mut cfg = base_config(&common.config, Pipeline::CheckDec)?;
            apply_common(&mut cfg, &common);
            apply_family(&mut cfg, &family)?;
            cfg.dec.strict |= strict;
            if let Some(g) = gamma {
                cfg.dec.gamma = g;
            }
            if let Some(t) = dec_tolerance {
                cfg.tolerances.dec_tolerance = t;
            }
            cfg
        }
        Command::Mass {
            common,
            family,
            ladder,
        } => {
            let mut cfg = base_config(&common.config, Pipeline::Mass)?;
            apply_common(&mut cfg, &common);
            apply_family(&mut cfg, &family)?;
            if let Some(l) = ladder {
                cfg.tolerances.ladder = l;
            }
            cfg
        }
        Command::PerturbStrict {
            common,
            family,
            epsilon,
        } => {
            let mut cfg = base_config(&common.config, Pipeline::PerturbStrict)?;
            apply_common(&mut cfg, &common);
            apply_family(&mut cfg, &family)?;
            if let Some(e) = epsilon {
                cfg.tolerances.epsilon = e;
            }
            cfg
        }
        Command::Deform {
            common,
            family,
            lambda,
            tol,
            strict_first,
            epsilon,
        } => {
            let mut cfg = base_config(&common.config, Pipeline::Deform)?;
            apply_common(&mut cfg, &common);
            apply_family(&mut cfg, &family)?;
            if let Some(l) = lambda {
                cfg.deform.lambda = l;
            }
            if let Some(t) = tol {
                cfg.tolerances.newton_tol = t;
            }
            if let Some(e) = epsilon {
                cfg.tolerances.epsilon = e;
            }
            cfg.deform.strict_first |= strict_first;
            cfg
        }
        Command::Wang {
            common,
            family,
            epsilon,
            gauge_only,
        } => {
            let mut cfg = base_config(&common.config, Pipeline::Wang)?;
            apply_common(&mut cfg, &common);
            apply_family(&mut cfg, &family)?;
            if let Some(e) = epsilon {
                cfg.tolerances.epsilon = e;
            }
            cfg.wang.gauge_only |= gauge_only;
            cfg
        }
        Command::Indicial { config, out, op, n } => {
            let mut cfg = base_config(&config, Pipeline::Indicial)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(op) = op {
                cfg.indicial.op = op;
            }
            if let Some(n) = n {
                cfg.indicial.n = n;
            }
            cfg
        }
        Command::Ode {
            common,
            a,
            b,
            rate,
            lambda_minus,
            lambda_plus,
        } => {
            let mut cfg = base_config(&common.config, Pipeline::Ode)?;
            apply_common(&mut cfg, &common);
            let o = &mut cfg.ode;
            for (dst, src) in [
                (&mut o.a, a),
                (&mut o.b, b),
                (&mut o.rate, rate),
                (&mut o.lambda_minus, lambda_minus),
                (&mut o.lambda_plus, lambda_plus),
            ] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
            cfg
        }
        Command::Run { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            cfg
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HYPERDATA_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("HYPERDATA_THREADS={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("HYPERDATA_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn execute(cfg: &RunConfig) -> Result<i32> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let start = Instant::now();
    let outcome = pipelines::run(cfg, &cfg.out);
    let seconds = start.elapsed().as_secs_f64();
    let (code, status, reason, message, result) = match outcome {
        Ok(o) => match o.failure {
            None => (0, "certified", None, None, o.result),
            Some(r) => (
                NOT_CERTIFIED,
                "not-certified",
                Some(r.to_string()),
                None,
                o.result,
            ),
        },
        Err(e) => {
            let (code, reason) = match e.downcast_ref::<hyperdata_core::Error>() {
                Some(hyperdata_core::Error::InvalidParameter(_)) => {
                    (USAGE, "invalid-parameter".to_string())
                }
                Some(err) => (NOT_CERTIFIED, err.code().to_string()),
                None => (NOT_CERTIFIED, "io".to_string()),
            };
            (
                code,
                "error",
                Some(reason),
                Some(format!("{e:#}")),
                serde_json::Value::Null,
            )
        }
    };
    let report = json!({
        "schema": config::SCHEMA,
        "tool": "hyperdata",
        "version": env!("CARGO_PKG_VERSION"),
        "pipeline": cfg.pipeline.name(),
        "seed": cfg.seed,
        "config": cfg,
        "status": status,
        "exit_code": code,
        "reason": reason,
        "message": message,
        "threads": rayon::current_num_threads(),
        "timings": { "total_seconds": seconds },
        "result": result,
    });
    let path = cfg.out.join("report.json");
    pipelines::write_json(&path, &report)?;
    match (&reason, &message) {
        (Some(r), Some(m)) => eprintln!("{}: {status} ({r}): {m}", cfg.pipeline.name()),
        (Some(r), None) => println!("{}: {status} ({r})", cfg.pipeline.name()),
        _ => println!("{}: {status}", cfg.pipeline.name()),
    }
    println!("report: {}", path.display());
    Ok(code)
}

fn real_main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { USAGE } else { 0 };
        }
    };
    let cfg = match resolve(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return USAGE;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return USAGE;
    }
    match execute(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            USAGE
        }
    }
}

fn main() {
    std::process::exit(real_main());
}
