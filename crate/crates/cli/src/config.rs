use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    CheckDec,
    Mass,
    PerturbStrict,
    Deform,
    Wang,
    Indicial,
    Ode,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::CheckDec => "check-dec",
            Pipeline::Mass => "mass",
            Pipeline::PerturbStrict => "perturb-strict",
            Pipeline::Deform => "deform",
            Pipeline::Wang => "wang",
            Pipeline::Indicial => "indicial",
            Pipeline::Ode => "ode",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub r0: f64,
    pub rmax: f64,
    pub nr: usize,
    pub l: usize,
    pub fd_order: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 3,
            r0: 1.0,
            rmax: 12.0,
            nr: 64,
            l: 16,
            fd_order: 6,
        }
    }
}

/// Data family and its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    Hyperbolic,
    Adss {
        m: f64,
    },
    /// Isotropic Wang data: m = m·σ, p_rr constant.
    Wang {
        #[serde(default)]
        m: f64,
        #[serde(default)]
        p_rr: f64,
        #[serde(default)]
        remainder: f64,
    },
    /// apply_conformal((b, 0), 1 + v0 e^{-nr}, (Y0)_r e^{-nr} ω) with constant coefficients.
    ConfHyp {
        #[serde(default)]
        v0: f64,
        #[serde(default)]
        y0_r: f64,
    },
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig::Hyperbolic
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Mass-drift budget of the deformation pipelines.
    pub epsilon: f64,
    pub newton_tol: f64,
    pub ladder: usize,
    pub fit_shells: usize,
    pub cauchy_tol: f64,
    /// Tolerance of the non-strict DEC test.
    pub dec_tolerance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            epsilon: 1e-2,
            newton_tol: 1e-10,
            ladder: 8,
            fit_shells: 5,
            cauchy_tol: 1e-2,
            dec_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecConfig {
    pub strict: bool,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformConfig {
    pub lambda: f64,
    /// Run the strict-DEC pipeline first and deform its output.
    pub strict_first: bool,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            lambda: 1.5,
            strict_first: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WangConfig {
    /// Only change the radial gauge, no perturbation.
    pub gauge_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorChoice {
    Scalar,
    Vector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndicialConfig {
    pub op: OperatorChoice,
    pub n: usize,
}

impl Default for IndicialConfig {
    fn default() -> Self {
        IndicialConfig {
            op: OperatorChoice::Scalar,
            n: 3,
        }
    }
}

/// u'' + a u' + b u = e^{-rate r} on the grid's radial nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    pub a: f64,
    pub b: f64,
    pub rate: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            a: 2.0,
            b: -3.0,
            rate: 5.0,
            lambda_minus: 0.0,
            lambda_plus: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema")]
    pub schema: u32,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub dec: DecConfig,
    #[serde(default)]
    pub deform: DeformConfig,
    #[serde(default)]
    pub wang: WangConfig,
    #[serde(default)]
    pub indicial: IndicialConfig,
    #[serde(default)]
    pub ode: OdeConfig,
}

fn schema() -> u32 {
    SCHEMA
}

fn default_out() -> PathBuf {
    PathBuf::from("hyperdata-out")
}

impl RunConfig {
    pub fn new(pipeline: Pipeline) -> RunConfig {
        RunConfig {
            schema: SCHEMA,
            pipeline,
            seed: 0,
            out: default_out(),
            grid: GridConfig::default(),
            family: FamilyConfig::default(),
            tolerances: Tolerances::default(),
            dec: DecConfig::default(),
            deform: DeformConfig::default(),
            wang: WangConfig::default(),
            indicial: IndicialConfig::default(),
            ode: OdeConfig::default(),
        }
    }

    /// Reads a TOML document, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!(
                "unsupported config schema {} (expected {SCHEMA})",
                self.schema
            );
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("epsilon", t.epsilon),
            ("newton_tol", t.newton_tol),
            ("cauchy_tol", t.cauchy_tol),
            ("dec_tolerance", t.dec_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("tolerance {name} must be positive, got {v}");
            }
        }
        if t.ladder < 2 || t.fit_shells < 2 {
            bail!("ladder and fit_shells must be at least 2");
        }
        if !(self.dec.gamma >= 0.0) {
            bail!("gamma must be nonnegative");
        }
        if !(self.deform.lambda > 0.0) {
            bail!("lambda must be positive");
        }
        match self.family {
            FamilyConfig::Adss { m } if !(m >= 0.0) => {
                bail!("AdSS mass parameter must be nonnegative")
            }
            _ => {}
        }
        Ok(())
    }
}
