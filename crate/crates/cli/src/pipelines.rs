use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use hyperdata_core::catalog::{adss_data, conf_hyp_data, wang_data, WangSpec};
use hyperdata_core::constraints::{check_dec, DecOptions, DecReport};
use hyperdata_core::deformation::{
    deform_to_conformally_hyperbolic, perturb_to_strict_dec_with, perturb_wang,
    radial_leading_coefficient, wang_renormalize, DeformationResult, StrictDecOptions,
};
use hyperdata_core::diagnostics::decay_fit;
use hyperdata_core::elliptic::{indicial_exponents, radial_ode_solve, OdeProblem, OperatorKind};
use hyperdata_core::mass::{mass_conf_hyp, mass_functional_with, mass_wang, MassOptions};
use hyperdata_core::{Field, Grid, GridOptions, GridSpec, InitialData, Kind};
use serde_json::{json, Value};

use crate::config::{FamilyConfig, OperatorChoice, Pipeline, RunConfig};

/// Outcome of a pipeline that ran to completion.
pub struct Outcome {
    /// Reason code when the result is not certified.
    pub failure: Option<&'static str>,
    pub result: Value,
}

impl Outcome {
    fn certified(result: Value) -> Outcome {
        Outcome {
            failure: None,
            result,
        }
    }

    fn check(failure: Option<&'static str>, result: Value) -> Outcome {
        Outcome { failure, result }
    }
}

pub fn build_grid(cfg: &RunConfig) -> hyperdata_core::Result<Arc<Grid>> {
    let g = &cfg.grid;
    let spec = GridSpec {
        n: g.n,
        r0: g.r0,
        rmax: g.rmax,
        nr: g.nr,
        l: g.l,
        options: GridOptions {
            fd_order: g.fd_order,
            ..GridOptions::default()
        },
    };
    Grid::new(spec)
}

pub fn build_data(cfg: &RunConfig, grid: &Arc<Grid>) -> hyperdata_core::Result<InitialData> {
    let (n, na) = (grid.n(), grid.na());
    match cfg.family {
        FamilyConfig::Hyperbolic => Ok(InitialData::hyperbolic(grid)),
        FamilyConfig::Adss { m } => adss_data(m, grid),
        FamilyConfig::Wang { m, p_rr, remainder } => {
            let mut spec = WangSpec::isotropic(grid, &vec![m; na], &vec![p_rr; na]);
            spec.remainder = remainder;
            wang_data(&spec, grid)
        }
        FamilyConfig::ConfHyp { v0, y0_r } => conf_hyp_data(
            &vec![v0; na],
            &vec![y0_r; na],
            &vec![0.0; n * na],
            None,
            grid,
        ),
    }
}

fn csv_writer(out: &Path, name: &str) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(
        out.join(name),
    )?)))
}

/// (r, min_margin_over_sphere).
fn write_profile(out: &Path, report: &DecReport) -> anyhow::Result<()> {
    let mut w = csv_writer(out, "dec_profile.csv")?;
    w.write_record(["r", "min_margin_over_sphere"])?;
    for (r, m) in &report.profile {
        w.write_record([r.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn without_profile(report: &DecReport) -> Value {
    let mut v = serde_json::to_value(report).unwrap_or(Value::Null);
    if let Value::Object(map) = &mut v {
        map.remove("profile");
    }
    v
}

fn decay_json(data: &InitialData) -> Value {
    json!({ "alpha": data.decay.alpha, "tau": data.decay.tau, "tau0": data.decay.tau0 })
}

/// Writes fields and the per-pipeline CSVs of a deformation.
fn write_deformation(out: &Path, res: &DeformationResult) -> anyhow::Result<()> {
    res.write(&out.join("fields"))?;
    write_profile(out, &res.certificate.dec)?;
    let mut w = csv_writer(out, "newton_residuals.csv")?;
    w.write_record(["iteration", "residual", "step"])?;
    for (i, r) in res.certificate.residual_history.iter().enumerate() {
        let step = if i == 0 {
            String::new()
        } else {
            res.certificate
                .step_sizes
                .get(i - 1)
                .map(|s| s.to_string())
                .unwrap_or_default()
        };
        w.write_record([i.to_string(), r.to_string(), step])?;
    }
    w.flush()?;
    if !res.certificate.trials.is_empty() {
        let mut w = csv_writer(out, "trials.csv")?;
        w.write_record([
            "t",
            "gamma",
            "accepted",
            "reason",
            "min_margin",
            "worst_radius",
            "mass_drift",
        ])?;
        for t in &res.certificate.trials {
            w.write_record([
                t.t.to_string(),
                t.gamma.to_string(),
                t.accepted.to_string(),
                t.reason.clone().unwrap_or_default(),
                t.min_margin.to_string(),
                t.worst_radius.to_string(),
                t.mass_drift.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn deformation_json(res: &DeformationResult) -> Value {
    let mut cert = serde_json::to_value(&res.certificate).unwrap_or(Value::Null);
    if let Value::Object(map) = &mut cert {
        if let Some(Value::Object(dec)) = map.get_mut("dec") {
            dec.remove("profile");
        }
    }
    json!({ "certificate": cert, "decay": decay_json(&res.data), "fields": "fields" })
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Runs the configured pipeline. Library errors are returned for the caller
/// to report with their reason code.
pub fn run(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    match cfg.pipeline {
        Pipeline::Indicial => return indicial(cfg),
        Pipeline::Ode => return ode(cfg, out),
        _ => {}
    }
    let grid = build_grid(cfg)?;
    let data = build_data(cfg, &grid)?;
    match cfg.pipeline {
        Pipeline::CheckDec => {
            let opts = DecOptions {
                strict: cfg.dec.strict,
                gamma: cfg.dec.gamma,
                tolerance: cfg.tolerances.dec_tolerance,
                interior_only: false,
            };
            let report = check_dec(&data, &opts)?;
            write_profile(out, &report)?;
            let failure = (!report.holds).then_some("dec-violated");
            Ok(Outcome::check(
                failure,
                json!({ "dec": without_profile(&report) }),
            ))
        }
        Pipeline::Mass => {
            let opts = MassOptions {
                ladder: cfg.tolerances.ladder,
                fit_shells: cfg.tolerances.fit_shells,
                cauchy_tol: cfg.tolerances.cauchy_tol,
            };
            let report = mass_functional_with(&data, &opts)?;
            report.write_csv(File::create(out.join("mass_shells.csv"))?)?;
            let na = grid.na();
            let closed_form = match cfg.family {
                FamilyConfig::ConfHyp { v0, y0_r } => {
                    Some(mass_conf_hyp(&vec![v0; na], &vec![y0_r; na], &grid))
                }
                FamilyConfig::Wang { m, p_rr, .. } => {
                    let spec = WangSpec::isotropic(&grid, &vec![m; na], &vec![p_rr; na]);
                    Some(mass_wang(&spec.m, &spec.p_rr, &grid))
                }
                _ => None,
            };
            Ok(Outcome::certified(json!({
                "mass": report.values(),
                "report": report,
                "closed_form": closed_form,
            })))
        }
        Pipeline::PerturbStrict => {
            let res =
                perturb_to_strict_dec_with(&data, &StrictDecOptions::new(cfg.tolerances.epsilon))?;
            write_deformation(out, &res)?;
            let c = &res.certificate;
            let failure = if !c.dec.holds {
                Some("dec-violated")
            } else if !(c.mass_drift < cfg.tolerances.epsilon) {
                Some("mass-drift")
            } else {
                None
            };
            Ok(Outcome::check(failure, deformation_json(&res)))
        }
        Pipeline::Deform => {
            let (input, strict) = if cfg.deform.strict_first {
                let s = perturb_to_strict_dec_with(
                    &data,
                    &StrictDecOptions::new(cfg.tolerances.epsilon),
                )?;
                (s.data, true)
            } else {
                (data, false)
            };
            let res = deform_to_conformally_hyperbolic(
                &input,
                cfg.deform.lambda,
                None,
                cfg.tolerances.newton_tol,
            )?;
            write_deformation(out, &res)?;
            let c = &res.certificate;
            let exterior = c.exterior_error.map_or(0.0, |(a, b)| a.max(b));
            let failure = if !(exterior < 1e-10) {
                Some("exterior-not-exact")
            } else if strict && !c.dec.holds {
                Some("dec-violated")
            } else if !(c.mass_drift < cfg.tolerances.epsilon) {
                Some("mass-drift")
            } else {
                None
            };
            Ok(Outcome::check(failure, deformation_json(&res)))
        }
        Pipeline::Wang if cfg.wang.gauge_only => {
            let opts = MassOptions {
                ladder: cfg.tolerances.ladder,
                fit_shells: cfg.tolerances.fit_shells,
                cauchy_tol: cfg.tolerances.cauchy_tol,
            };
            let (out_data, gauge) = wang_renormalize(&data)?;
            let before = mass_functional_with(&data, &opts)?.values();
            let after = mass_functional_with(&out_data, &opts)?.values();
            let drift = before
                .iter()
                .zip(&after)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let ratio =
                sup(&gauge.leading_after) / sup(&gauge.leading_before).max(f64::MIN_POSITIVE);
            let fields = out.join("fields");
            std::fs::create_dir_all(&fields)?;
            for (name, f) in [("e", &out_data.e), ("pi", &out_data.pi)] {
                hyperdata_core::io::write_field(
                    f,
                    BufWriter::new(File::create(fields.join(format!("{name}.fld")))?),
                )?;
            }
            let failure = if !gauge.identity && !(ratio < 1e-8) {
                Some("gauge-fit")
            } else if !(drift < 1e-8) {
                Some("mass-drift")
            } else {
                None
            };
            Ok(Outcome::check(
                failure,
                json!({
                    "gauge": gauge,
                    "mass_before": before,
                    "mass_after": after,
                    "mass_drift": drift,
                    "leading_ratio": ratio,
                    "decay": decay_json(&out_data),
                    "fields": "fields",
                }),
            ))
        }
        Pipeline::Wang => {
            let res = perturb_wang(&data, cfg.tolerances.epsilon)?;
            write_deformation(out, &res)?;
            let c = &res.certificate;
            let before = c.gauge.as_ref().map_or(0.0, |g| sup(&g.leading_before));
            let after = sup(&radial_leading_coefficient(&res.data)?);
            let failure = if !c.dec.holds {
                Some("dec-violated")
            } else if before > 0.0 && !(after < 1e-8 * before) {
                Some("gauge-fit")
            } else if !(c.mass_drift < cfg.tolerances.epsilon) {
                Some("mass-drift")
            } else {
                None
            };
            let mut v = deformation_json(&res);
            v["gauge_fit"] = json!({ "leading_before": before, "leading_after": after });
            Ok(Outcome::check(failure, v))
        }
        Pipeline::Indicial | Pipeline::Ode => unreachable!(),
    }
}

fn indicial(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let kind = match cfg.indicial.op {
        OperatorChoice::Scalar => OperatorKind::Scalar,
        OperatorChoice::Vector => OperatorKind::Vector,
    };
    let rec = indicial_exponents(kind, cfg.indicial.n)?;
    let comps: Vec<Value> = rec
        .components
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "offset": c.offset,
                "exponents": [c.lower.to_string(), c.upper.to_string()],
                "radius": c.radius(rec.n).to_string(),
            })
        })
        .collect();
    Ok(Outcome::certified(json!({
        "op": cfg.indicial.op,
        "n": rec.n,
        "components": comps,
        "radius": rec.radius.to_string(),
    })))
}

fn ode(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let o = &cfg.ode;
    let grid = build_grid(cfg)?;
    let r = grid.r().to_vec();
    let f: Vec<f64> = r.iter().map(|r| (-o.rate * r).exp()).collect();
    let problem = OdeProblem::new(o.a, o.b, r.clone(), f.clone())?;
    let (dm, dp) = problem.roots();
    let u = radial_ode_solve(&problem, o.lambda_minus, o.lambda_plus)?;
    let mut w = csv_writer(out, "ode_solution.csv")?;
    w.write_record(["r", "u", "f"])?;
    for k in 0..r.len() {
        w.write_record([r[k].to_string(), u[k].to_string(), f[k].to_string()])?;
    }
    w.flush()?;
    // C e^{-kr} with C (k² - a k + b) = 1
    let denom = o.rate * o.rate - o.a * o.rate + o.b;
    let homogeneous = o.lambda_minus == 0.0 && o.lambda_plus == 0.0;
    let deviation = (homogeneous && denom != 0.0).then(|| {
        r.iter()
            .zip(&u)
            .map(|(r, u)| {
                let want = (-o.rate * r).exp() / denom;
                (u - want).abs() / want.abs()
            })
            .fold(0.0, f64::max)
    });
    let na = grid.na();
    let profile = Field::from_data(
        &grid,
        Kind::Scalar,
        0.0,
        u.iter().flat_map(|x| std::iter::repeat_n(*x, na)).collect(),
    )?;
    let rate = decay_fit(&profile).ok().map(|f| f.rate);
    let failure = match deviation {
        Some(d) if !(d < 1e-10) => Some("particular-solution"),
        _ => None,
    };
    Ok(Outcome::check(
        failure,
        json!({
            "roots": [dm, dp],
            "fitted_rate": rate,
            "closed_form_deviation": deviation,
            "csv": "ode_solution.csv",
        }),
    ))
}

/// Writes a pretty JSON document.
pub fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
