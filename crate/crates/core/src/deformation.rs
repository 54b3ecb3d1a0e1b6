//! Conformal deformations of initial data, the operator T and the density
//! pipelines.
//!
//! For (u, Y) the deformed data are (u^κ g, u^{κ/2}(π + L̊_Y g)) with
//! κ = 4/(n-2), and T(u, Y) = (-2u^κ μ̃, u^{κ/2} J̃).
//!
//! Conformal factors are handled through their deviation v = u - 1, which
//! carries the decay weight; u itself tends to 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calculus::spectral_tail;
use crate::constraints::{dec_report, densities, densities_with, DecOptions, DecReport};
use crate::data::InitialData;
use crate::diagnostics::weighted_sup_norm;
use crate::diagnostics::{
    cutoff_chi, cutoff_xi, decay_fit, extract_expansion, smooth_step, smooth_step_derivative,
};
use crate::elliptic::{solve_system, EllipticOptions, SystemSolution};
use crate::error::{Error, Result};
use crate::field::{pointwise, Field, Kind};
use crate::geometry::Geometry;
use crate::grid::MAX_WEIGHT;
use crate::mass::mass_continuity_probe;

/// κ = 4/(n-2).
pub fn kappa(n: usize) -> f64 {
    4.0 / (n as f64 - 2.0)
}

fn c_lap(n: usize) -> f64 {
    4.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

fn c_grad(n: usize) -> f64 {
    2.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

fn c_tr(n: usize) -> f64 {
    2.0 / (n as f64 - 2.0)
}

/// A safe integer decay weight for a field, from its fitted rate.
pub fn estimated_weight(f: &Field) -> f64 {
    match decay_fit(f) {
        Ok(fit) => (fit.rate - fit.width - 0.1).floor().clamp(0.0, MAX_WEIGHT),
        Err(_) => f.weight().clamp(0.0, MAX_WEIGHT),
    }
}

fn check_positive(v: &Field) -> Result<()> {
    let min = v.data().iter().cloned().fold(f64::INFINITY, f64::min) + 1.0;
    if !(min > 0.0) {
        return Err(Error::NonPositiveFactor { min });
    }
    Ok(())
}

/// (u^κ g, u^{κ/2}(π + L̊_Y g)).
pub fn apply_conformal(data: &InitialData, u: &Field, y: &Field) -> Result<InitialData> {
    let v = u.map(0.0, |x| x - 1.0);
    let w = estimated_weight(&v);
    apply_conformal_deviation(data, &v.with_weight(w), y)
}

/// [`apply_conformal`] with u = 1 + v.
pub fn apply_conformal_deviation(data: &InitialData, v: &Field, y: &Field) -> Result<InitialData> {
    let k = kappa(data.grid().n());
    check_positive(v)?;
    let geo = data.geometry()?;
    let wv = v.weight().max(0.0);
    let uk1 = v.map(wv, |x| (k * x.ln_1p()).exp_m1());
    let uk2 = v.map(0.0, |x| (1.0 + x).powf(0.5 * k));
    let g = geo.metric();
    let e = data
        .e
        .add(&g.mul_scalar(&uk1))
        .with_weight(data.e.weight().min(wv));
    let lk = geo.conformal_killing(y)?;
    let pi = data
        .pi
        .add(&lk)
        .mul_scalar(&uk2)
        .with_weight(data.pi.weight().min(lk.weight()));
    InitialData::new(e, pi, data.decay)
}

/// (P^k_j X_k) with the index raised by g.
fn contract(geo: &Geometry, p: &Field, x: &Field) -> Field {
    let n = geo.n();
    let xr = geo.raise(x);
    pointwise(
        geo.grid(),
        &[p, &xr],
        Kind::OneForm,
        p.weight() + x.weight(),
        |_, v, out| {
            for j in 0..n {
                out[j] = (0..n).map(|l| v[1][l] * v[0][l * n + j]).sum();
            }
        },
    )
}

/// T(u, Y) with u = 1 + v.
pub fn eval_t(data: &InitialData, u: &Field, y: &Field) -> Result<(Field, Field)> {
    let v = u.map(0.0, |x| x - 1.0);
    let w = estimated_weight(&v);
    eval_t_deviation(data, &v.with_weight(w), y)
}

/// T(1 + v, Y).
pub fn eval_t_deviation(data: &InitialData, v: &Field, y: &Field) -> Result<(Field, Field)> {
    let geo = data.geometry()?;
    eval_t_with(&geo, &data.pi, v, y)
}

/// T(1 + v, Y) for the data (g, π) given by a geometry of g.
pub fn eval_t_with(geo: &Geometry, pi: &Field, v: &Field, y: &Field) -> Result<(Field, Field)> {
    let n = geo.n();
    let nf = n as f64;
    let k = kappa(n);
    check_positive(v)?;
    let uinv = v.map(0.0, |x| 1.0 / (1.0 + x));
    let uk1 = v.map(v.weight(), |x| (k * x.ln_1p()).exp_m1());
    let ukh = v.map(0.0, |x| (1.0 + x).powf(0.5 * k));
    let p = pi.add(&geo.conformal_killing(y)?);
    let tr = geo.trace(pi);
    let first = geo
        .laplacian(v)?
        .mul_scalar(&uinv)
        .scale(c_lap(n))
        .sub(geo.scalar_curvature_deviation())
        .axpy(-nf * (nf - 1.0), &uk1)
        .axpy(2.0, &tr.mul_scalar(&ukh))
        .axpy(-1.0 / (nf - 1.0), &tr.mul_scalar(&tr))
        .add(&geo.dot2(&p, &p));
    let du = geo.covariant(v)?;
    let second = geo
        .divergence(&p)?
        .axpy(c_grad(n), &contract(geo, &p, &du).mul_scalar(&uinv))
        .axpy(-c_tr(n), &du.mul_scalar(&tr).mul_scalar(&uinv));
    Ok((first, second))
}

/// DT at a basepoint (1 + v0, Y0), optionally minus the derivative of
/// (u, Y) ↦ (-2u^κ μ̄, u^{κ/2} J̄) for fixed target densities.
pub struct TLinearization {
    geo: Geometry,
    uinv: Field,
    du0: Field,
    p0: Field,
    tr: Field,
    coef_v: Field,
    coef_dv: Option<Field>,
}

impl TLinearization {
    pub fn new(
        geo: Geometry,
        pi: &Field,
        v0: &Field,
        y0: &Field,
        target: Option<(&Field, &Field)>,
    ) -> Result<TLinearization> {
        let n = geo.n();
        let nf = n as f64;
        let k = kappa(n);
        check_positive(v0)?;
        let uinv = v0.map(0.0, |x| 1.0 / (1.0 + x));
        let lap0 = geo.laplacian(v0)?;
        let du0 = geo.covariant(v0)?;
        let p0 = pi.add(&geo.conformal_killing(y0)?);
        let tr = geo.trace(pi);
        let mut coef_v = lap0
            .mul_scalar(&uinv)
            .mul_scalar(&uinv)
            .scale(-c_lap(n))
            .axpy(
                -nf * (nf - 1.0) * k,
                &v0.map(0.0, |x| (1.0 + x).powf(k - 1.0)),
            )
            .axpy(
                k,
                &tr.mul_scalar(&v0.map(0.0, |x| (1.0 + x).powf(0.5 * k - 1.0))),
            )
            .with_weight(0.0);
        let mut coef_dv = None;
        if let Some((mu, j)) = target {
            coef_v = coef_v.axpy(
                2.0 * k,
                &mu.mul_scalar(&v0.map(0.0, |x| (1.0 + x).powf(k - 1.0))),
            );
            coef_dv = Some(
                j.mul_scalar(&v0.map(0.0, |x| (1.0 + x).powf(0.5 * k - 1.0)))
                    .scale(-0.5 * k),
            );
        }
        Ok(TLinearization {
            geo,
            uinv,
            du0,
            p0,
            tr,
            coef_v,
            coef_dv,
        })
    }

    /// At (1, 0) without target term.
    pub fn at_identity(data: &InitialData) -> Result<TLinearization> {
        let grid = data.grid();
        TLinearization::new(
            data.geometry()?,
            &data.pi,
            &Field::zeros(grid, Kind::Scalar),
            &Field::zeros(grid, Kind::OneForm),
            None,
        )
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn apply(&self, v: &Field, z: &Field) -> Result<(Field, Field)> {
        let geo = &self.geo;
        let n = geo.n();
        let lz = geo.conformal_killing(z)?;
        let first = geo
            .laplacian(v)?
            .mul_scalar(&self.uinv)
            .scale(c_lap(n))
            .add(&v.mul_scalar(&self.coef_v))
            .axpy(2.0, &geo.dot2(&self.p0, &lz));
        // ∇(v/u)
        let dq = geo.covariant(v)?.mul_scalar(&self.uinv).sub(
            &self
                .du0
                .mul_scalar(v)
                .mul_scalar(&self.uinv)
                .mul_scalar(&self.uinv),
        );
        let mut second = geo
            .divergence(&lz)?
            .axpy(c_grad(n), &contract(geo, &self.p0, &dq))
            .axpy(
                c_grad(n),
                &contract(geo, &lz, &self.du0).mul_scalar(&self.uinv),
            )
            .axpy(-c_tr(n), &dq.mul_scalar(&self.tr));
        if let Some(c) = &self.coef_dv {
            second = second.add(&c.mul_scalar(v));
        }
        Ok((first, second))
    }
}

/// DT|_(1,0)(v, Z).
pub fn linearize_t(data: &InitialData, v: &Field, z: &Field) -> Result<(Field, Field)> {
    TLinearization::at_identity(data)?.apply(v, z)
}

/// DT|_(1+v0, Y0)(v, Z).
pub fn linearize_t_at(
    data: &InitialData,
    v0: &Field,
    y0: &Field,
    v: &Field,
    z: &Field,
) -> Result<(Field, Field)> {
    TLinearization::new(data.geometry()?, &data.pi, v0, y0, None)?.apply(v, z)
}

/// Solves DT|_(1,0)(v, Z) = rhs in C_δ with zero Dirichlet data at R0.
pub fn solve_linearized(
    data: &InitialData,
    rhs: (&Field, &Field),
    delta: f64,
) -> Result<SystemSolution> {
    let lin = TLinearization::at_identity(data)?;
    solve_linearization(&lin, rhs, delta, &EllipticOptions::default())
}

/// Solves lin(v, Z) = rhs in C_δ.
pub fn solve_linearization(
    lin: &TLinearization,
    rhs: (&Field, &Field),
    delta: f64,
    opts: &EllipticOptions,
) -> Result<SystemSolution> {
    let n = lin.geo.n();
    let apply = |v: &Field, z: &Field| lin.apply(v, z);
    let sol = solve_system(&apply, rhs, delta, c_lap(n), opts)?;
    if sol.rank_deficient {
        log::warn!(
            "linearized solve: rank deficiency suspected, residual {:.3e}",
            sol.residual
        );
    }
    Ok(sol)
}

/// Per-trial record of a t-bisection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub t: f64,
    pub gamma: f64,
    pub accepted: bool,
    /// Failed test, if any.
    pub reason: Option<String>,
    pub min_margin: f64,
    pub worst_radius: f64,
    pub mass_drift: f64,
}

/// Certificate of a deformation pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub pipeline: String,
    pub t: Option<f64>,
    /// Strict margin parameter γ with μ̄ > (1+γ)|J̄|.
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub trials: Vec<Trial>,
    /// Newton residual norms (weighted sup over interior nodes).
    pub residual_history: Vec<f64>,
    pub step_sizes: Vec<f64>,
    /// Residual of the linear solve for (v, Z).
    pub linear_residual: f64,
    pub rank_deficient: bool,
    pub dec: DecReport,
    pub min_margin: f64,
    pub mass_before: Vec<f64>,
    pub mass_after: Vec<f64>,
    pub mass_drift: f64,
    /// Exterior errors sup|e - ((1+v)^κ - 1)b| and sup|π - (1+v)^{κ/2}L̊_Y b| on r >= 2λ.
    pub exterior_error: Option<(f64, f64)>,
    /// Leading coefficients v0 and (Y0)_r at the angular nodes.
    pub expansion: Option<(Vec<f64>, Vec<f64>)>,
    pub gauge: Option<WangGauge>,
    pub warnings: Vec<String>,
}

/// Output of a deformation pipeline.
#[derive(Debug, Clone)]
pub struct DeformationResult {
    /// Deviation v = u - 1 of the conformal factor.
    pub v: Field,
    pub y: Field,
    pub data: InitialData,
    pub certificate: Certificate,
}

impl DeformationResult {
    pub fn u(&self) -> Field {
        self.v.map(0.0, |x| 1.0 + x)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.certificate).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes the certificate and the fields v, Y, e and π into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("certificate.json"), self.to_json()?)?;
        for (name, f) in [
            ("v", &self.v),
            ("y", &self.y),
            ("e", &self.data.e),
            ("pi", &self.data.pi),
        ] {
            let file = std::fs::File::create(dir.join(format!("{name}.fld")))?;
            crate::io::write_field(f, std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

/// Controls of the strict-DEC and Wang perturbation pipelines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrictDecOptions {
    pub epsilon: f64,
    /// Weight of the linear solve; n - 1/2 when absent.
    pub delta: Option<f64>,
    /// Decay rate of f; n + min(1, τ0) when absent.
    pub f_rate: Option<f64>,
    pub t_start: f64,
    pub t_min: f64,
    /// Require μ̄ > (1+γ)|J̄| with γ = t/(12 sup(|J|/f) + 3t); otherwise γ = 0.
    pub gamma_certificate: bool,
    /// Require the bounds u^κ μ̄ > μ + tf/3 and u^κ|J̄| < |J| + tf/4.
    pub check_bounds: bool,
}

impl StrictDecOptions {
    pub fn new(epsilon: f64) -> StrictDecOptions {
        StrictDecOptions {
            epsilon,
            delta: None,
            f_rate: None,
            t_start: 1.0,
            t_min: 1e-8,
            gamma_certificate: true,
            check_bounds: true,
        }
    }
}

/// The linearized solution behind a strict-DEC perturbation.
#[derive(Debug, Clone)]
pub struct StrictDecDirection {
    pub f: Field,
    pub solution: SystemSolution,
    /// sup over interior nodes of |J|_g / f.
    pub j_over_f: f64,
}

fn default_delta(n: usize) -> f64 {
    n as f64 - 0.5
}

/// Builds f and solves DT|_(1,0)(v, Z) = (-f, 0).
pub fn strict_dec_direction(
    data: &InitialData,
    opts: &StrictDecOptions,
) -> Result<StrictDecDirection> {
    let grid = data.grid();
    let n = grid.n();
    let rate = opts.f_rate.unwrap_or(n as f64 + data.decay.tau0.min(1.0));
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "f decay rate {rate} must be positive"
        )));
    }
    let f = Field::scalar_fn(grid, rate.min(MAX_WEIGHT), move |r, _| (-rate * r).exp());
    let delta = opts.delta.unwrap_or(default_delta(n));
    let solution = solve_linearized(
        data,
        (&f.scale(-1.0), &Field::zeros(grid, Kind::OneForm)),
        delta,
    )?;
    let geo = data.geometry()?;
    let d = densities_with(&geo, &data.pi)?;
    let jn = geo.norm1(&d.j);
    let na = grid.na();
    let j_over_f = grid
        .interior()
        .flat_map(|k| (0..na).map(move |j| k * na + j))
        .map(|p| jn.at(0, p) / f.at(0, p))
        .fold(0.0, f64::max);
    Ok(StrictDecDirection {
        f,
        solution,
        j_over_f,
    })
}

/// The data (1+tv)^κ g, (1+tv)^{κ/2}(π + t L̊_Z g).
pub fn strict_dec_candidate(
    data: &InitialData,
    dir: &StrictDecDirection,
    t: f64,
) -> Result<InitialData> {
    apply_conformal_deviation(data, &dir.solution.v.scale(t), &dir.solution.z.scale(t))
}

/// γ = t/(12 S + 3t).
pub fn strict_gamma(t: f64, j_over_f: f64) -> f64 {
    t / (12.0 * j_over_f + 3.0 * t)
}

fn interior_opts(gamma: f64) -> DecOptions {
    DecOptions {
        strict: true,
        gamma,
        tolerance: 0.0,
        interior_only: true,
    }
}

/// Smallest interior value of the two bound margins.
fn bound_margins(
    data: &InitialData,
    out: &InitialData,
    v: &Field,
    f: &Field,
    t: f64,
) -> Result<(f64, f64)> {
    let k = kappa(data.grid().n());
    let (g0, g1) = (data.geometry()?, out.geometry()?);
    let (d0, d1) = (
        densities_with(&g0, &data.pi)?,
        densities_with(&g1, &out.pi)?,
    );
    let (j0, j1) = (g0.norm1(&d0.j), g1.norm1(&d1.j));
    let grid = data.grid();
    let na = grid.na();
    let (mut bm, mut bj) = (f64::INFINITY, f64::INFINITY);
    for kk in grid.interior() {
        for j in 0..na {
            let p = kk * na + j;
            let uk = (1.0 + t * v.at(0, p)).powf(k);
            let tf = t * f.at(0, p);
            bm = bm.min((uk * d1.mu.at(0, p) - d0.mu.at(0, p) - tf / 3.0) / tf);
            bj = bj.min((j0.at(0, p) + tf / 4.0 - uk * j1.at(0, p)) / tf);
        }
    }
    Ok((bm, bj))
}

/// Perturbs data satisfying the DEC to data satisfying the strict DEC with
/// masses within ε.
pub fn perturb_to_strict_dec(data: &InitialData, epsilon: f64) -> Result<DeformationResult> {
    perturb_to_strict_dec_with(data, &StrictDecOptions::new(epsilon))
}

pub fn perturb_to_strict_dec_with(
    data: &InitialData,
    opts: &StrictDecOptions,
) -> Result<DeformationResult> {
    strict_pipeline(data, opts, "strict-dec", |d| Ok((d, None)))
}

fn strict_pipeline(
    data: &InitialData,
    opts: &StrictDecOptions,
    name: &str,
    finish: impl Fn(InitialData) -> Result<(InitialData, Option<WangGauge>)>,
) -> Result<DeformationResult> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::InvalidParameter("ε must be positive".into()));
    }
    let mut warnings = Vec::new();
    let pre = crate::constraints::check_dec(
        data,
        &DecOptions {
            strict: false,
            tolerance: 1e-10,
            interior_only: true,
            gamma: 0.0,
        },
    )?;
    if !pre.holds {
        let msg = format!(
            "input violates the DEC: min margin {:.3e} at r = {:.3}",
            pre.min_margin, pre.worst_radius
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let dir = strict_dec_direction(data, opts)?;
    if dir.solution.rank_deficient {
        warnings.push(format!(
            "linear solve rank deficient, residual {:.3e}",
            dir.solution.residual
        ));
    }
    let mut trials = Vec::new();
    let mut t = opts.t_start;
    let mut last = (f64::NAN, f64::NAN);
    while t >= opts.t_min {
        let gamma = if opts.gamma_certificate {
            strict_gamma(t, dir.j_over_f)
        } else {
            0.0
        };
        let mut trial = Trial {
            t,
            gamma,
            accepted: false,
            reason: None,
            min_margin: f64::NAN,
            worst_radius: f64::NAN,
            mass_drift: f64::NAN,
        };
        let vmin = dir
            .solution
            .v
            .data()
            .iter()
            .fold(f64::INFINITY, |m, x| m.min(1.0 + t * x));
        if !(vmin > 0.0) {
            trial.reason = Some(format!("nonpositive u (min {vmin:.3e})"));
            trials.push(trial);
            t *= 0.5;
            continue;
        }
        let raw = strict_dec_candidate(data, &dir, t)?;
        let (out, gauge) = finish(raw.clone())?;
        let geo = out.geometry()?;
        let d = densities_with(&geo, &out.pi)?;
        let rep = dec_report(&geo, &d, &interior_opts(gamma));
        trial.min_margin = rep.min_margin;
        trial.worst_radius = rep.worst_radius;
        last = (rep.worst_radius, rep.min_margin);
        if !rep.holds {
            trial.reason = Some("strict DEC certificate".into());
            trials.push(trial);
            t *= 0.5;
            continue;
        }
        if opts.check_bounds {
            let (bm, bj) = bound_margins(data, &raw, &dir.solution.v, &dir.f, t)?;
            if !(bm > 0.0 && bj > 0.0) {
                trial.reason = Some(format!("density bounds (μ: {bm:.3e}, J: {bj:.3e})"));
                trials.push(trial);
                t *= 0.5;
                continue;
            }
        }
        let probe = mass_continuity_probe(data, &out)?;
        let drift = probe
            .mass_difference
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        trial.mass_drift = drift;
        if !(drift < opts.epsilon) {
            trial.reason = Some("mass drift".into());
            trials.push(trial);
            t *= 0.5;
            continue;
        }
        trial.accepted = true;
        trials.push(trial);
        let mass_after = probe
            .mass
            .iter()
            .zip(&probe.mass_difference)
            .map(|(a, b)| a + b)
            .collect();
        let certificate = Certificate {
            pipeline: name.into(),
            t: Some(t),
            gamma: opts.gamma_certificate.then_some(gamma),
            epsilon: Some(opts.epsilon),
            trials,
            residual_history: vec![],
            step_sizes: vec![],
            linear_residual: dir.solution.residual,
            rank_deficient: dir.solution.rank_deficient,
            min_margin: rep.min_margin,
            dec: rep,
            mass_before: probe.mass,
            mass_after,
            mass_drift: drift,
            exterior_error: None,
            expansion: None,
            gauge,
            warnings,
        };
        return Ok(DeformationResult {
            v: dir.solution.v.scale(t),
            y: dir.solution.z.scale(t),
            data: out,
            certificate,
        });
    }
    Err(Error::FailureToCertify {
        reason: format!("no t >= {:.1e} passed all tests", opts.t_min),
        radius: last.0,
        margin: last.1,
    })
}

/// Controls of the Newton deformation to conformally hyperbolic data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfHypOptions {
    pub lambda: f64,
    /// Residual tolerance (weighted sup over interior nodes).
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the Newton steps; n - 1/2 when absent.
    pub delta: Option<f64>,
    /// Values of (u - 1, Y) at R0 (angular nodes, then Y components);
    /// the input data are matched (u = 1, Y = 0) when absent.
    pub inner: Option<Vec<f64>>,
}

impl ConfHypOptions {
    pub fn new(lambda: f64) -> ConfHypOptions {
        ConfHypOptions {
            lambda,
            tol: 1e-10,
            max_iter: 25,
            delta: None,
            inner: None,
        }
    }
}

/// (χ_λ e, χ_λ π): the data cut off to b outside r = 2λ.
pub fn cutoff_data(data: &InitialData, lambda: f64) -> Result<InitialData> {
    let chi = cutoff_chi(lambda, data.grid())?;
    InitialData::new(
        data.e.mul_scalar(&chi).with_weight(data.e.weight()),
        data.pi.mul_scalar(&chi).with_weight(data.pi.weight()),
        data.decay,
    )
}

fn interior_sup(f: &Field, delta: f64) -> f64 {
    let grid = f.grid();
    let (nr, na) = (grid.nr(), grid.na());
    let mut g = f.clone();
    for block in g.data_mut().chunks_mut(nr * na) {
        block[..na].iter_mut().for_each(|x| *x = 0.0);
        block[(nr - 1) * na..].iter_mut().for_each(|x| *x = 0.0);
    }
    weighted_sup_norm(&g, delta)
}

/// Ξ(u, Y) - target in the form T(u, Y) - (-2u^κ μ̄, u^{κ/2} J̄).
fn conf_residual(
    geo: &Geometry,
    pi: &Field,
    v: &Field,
    y: &Field,
    mu: &Field,
    j: &Field,
) -> Result<(Field, Field)> {
    let k = kappa(geo.n());
    let (a, b) = eval_t_with(geo, pi, v, y)?;
    let first = a.add(&mu.mul_scalar(&v.map(0.0, |x| (1.0 + x).powf(k))).scale(2.0));
    let second = b.sub(&j.mul_scalar(&v.map(0.0, |x| (1.0 + x).powf(0.5 * k))));
    Ok((first, second))
}

/// Deforms data to data that are exactly conformally hyperbolic outside
/// r = 2λ, with densities ξ_λ(μ, J) or the given target.
pub fn deform_to_conformally_hyperbolic(
    data: &InitialData,
    lambda: f64,
    target: Option<(&Field, &Field)>,
    tol: f64,
) -> Result<DeformationResult> {
    deform_to_conformally_hyperbolic_with(
        data,
        target,
        &ConfHypOptions {
            tol,
            ..ConfHypOptions::new(lambda)
        },
    )
}

pub fn deform_to_conformally_hyperbolic_with(
    data: &InitialData,
    target: Option<(&Field, &Field)>,
    opts: &ConfHypOptions,
) -> Result<DeformationResult> {
    let grid = data.grid().clone();
    let (n, na, nr) = (grid.n(), grid.na(), grid.nr());
    let lambda = opts.lambda;
    let cut = cutoff_data(data, lambda)?;
    let (mu, j) = match target {
        Some((m, j)) => (m.clone(), j.clone()),
        None => {
            let xi = cutoff_xi(lambda, &grid)?;
            let d = densities(data)?;
            (d.mu.mul_scalar(&xi), d.j.mul_scalar(&xi))
        }
    };
    for f in [&mu, &j] {
        let tail = spectral_tail(f);
        let threshold = grid.options().tail_threshold;
        if tail > threshold {
            return Err(Error::Resolution { tail, threshold });
        }
    }
    let delta = opts.delta.unwrap_or(default_delta(n));
    let weight = delta.floor().clamp(0.0, MAX_WEIGHT);
    let inner = match &opts.inner {
        Some(b) if b.len() != (n + 1) * na => {
            return Err(Error::InvalidParameter(format!(
                "inner data must hold {} values",
                (n + 1) * na
            )))
        }
        Some(b) => b.clone(),
        None => vec![0.0; (n + 1) * na],
    };
    let geo = cut.geometry()?;
    let mut v = Field::zeros(&grid, Kind::Scalar).with_weight(weight);
    let mut y = Field::zeros(&grid, Kind::OneForm).with_weight(weight);
    let norm = |r: &(Field, Field)| interior_sup(&r.0, delta).max(interior_sup(&r.1, delta));
    let mut res = conf_residual(&geo, &cut.pi, &v, &y, &mu, &j)?;
    let mut history = vec![norm(&res)];
    let mut steps = Vec::new();
    let boundary_gap = |v: &Field, y: &Field| -> f64 {
        let mut gap = 0.0f64;
        for q in 0..na {
            gap = gap.max((v.at(0, q) - inner[q]).abs());
            for a in 0..n {
                gap = gap.max((y.at(a, q) - inner[(a + 1) * na + q]).abs());
            }
        }
        gap
    };
    let mut converged = history[0] < opts.tol && boundary_gap(&v, &y) == 0.0;
    let mut iter = 0;
    while !converged {
        if iter >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: *history.last().unwrap(),
                history,
            });
        }
        iter += 1;
        let lin = TLinearization::new(geo.clone(), &cut.pi, &v, &y, Some((&mu, &j)))?;
        let mut bc = vec![0.0; (n + 1) * na];
        for q in 0..na {
            bc[q] = inner[q] - v.at(0, q);
            for a in 0..n {
                bc[(a + 1) * na + q] = inner[(a + 1) * na + q] - y.at(a, q);
            }
        }
        let eopts = EllipticOptions {
            inner: Some(bc),
            truncate: true,
            atol: Some((1e-3 * opts.tol).max(1e-11)),
            ..Default::default()
        };
        let sol = solve_linearization(
            &lin,
            (&res.0.scale(-1.0), &res.1.scale(-1.0)),
            delta,
            &eopts,
        )?;
        let mut alpha = 1.0;
        let current = *history.last().unwrap();
        loop {
            let nv = v.axpy(alpha, &sol.v).with_weight(weight);
            let ny = y.axpy(alpha, &sol.z).with_weight(weight);
            let trial = if check_positive(&nv).is_ok() {
                Some(conf_residual(&geo, &cut.pi, &nv, &ny, &mu, &j)?)
            } else {
                None
            };
            if let Some(r) = trial {
                let rn = norm(&r);
                // the first step may raise the residual while it moves the boundary values
                if rn < current || (iter == 1 && alpha == 1.0) || rn < opts.tol {
                    v = nv;
                    y = ny;
                    res = r;
                    history.push(rn);
                    steps.push(alpha);
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                let min = nv.data().iter().fold(f64::INFINITY, |m, x| m.min(1.0 + x));
                if min <= 0.0 {
                    return Err(Error::NonPositiveFactor { min });
                }
                return Err(Error::NonConvergence {
                    iterations: iter,
                    residual: current,
                    history,
                });
            }
        }
        log::debug!(
            "newton {iter}: residual {:.3e}, step {alpha}",
            history.last().unwrap()
        );
        converged = *history.last().unwrap() < opts.tol;
    }
    let out = apply_conformal_deviation(&cut, &v, &y)?;
    // exterior exactness against the model built on b
    let k = kappa(n);
    let bgeo = Geometry::background(&grid);
    let model_e = Field::metric_b(&grid).mul_scalar(&v.map(0.0, |x| (k * x.ln_1p()).exp_m1()));
    let model_pi = bgeo
        .conformal_killing(&y)?
        .mul_scalar(&v.map(0.0, |x| (1.0 + x).powf(0.5 * k)));
    let (de, dp) = (out.e.sub(&model_e), out.pi.sub(&model_pi));
    let (mut ee, mut ep) = (0.0f64, 0.0f64);
    let (ne, np) = (de.norm_b(), dp.norm_b());
    for kk in 0..nr {
        if grid.r()[kk] >= 2.0 * lambda {
            for q in 0..na {
                ee = ee.max(ne.at(0, kk * na + q));
                ep = ep.max(np.at(0, kk * na + q));
            }
        }
    }
    let mut warnings = Vec::new();
    let expansion = match extract_expansion(&v, &y) {
        Ok(x) => Some((x.v0, x.y0_r)),
        Err(e) => {
            warnings.push(format!("no conformally hyperbolic expansion: {e}"));
            None
        }
    };
    let ogeo = out.geometry()?;
    let d = densities_with(&ogeo, &out.pi)?;
    let dec = dec_report(&ogeo, &d, &interior_opts(0.0));
    let (mass_before, mass_after, mass_drift) = match mass_continuity_probe(data, &out) {
        Ok(p) => {
            let after = p
                .mass
                .iter()
                .zip(&p.mass_difference)
                .map(|(a, b)| a + b)
                .collect();
            let drift = p.mass_difference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            (p.mass, after, drift)
        }
        Err(e) => {
            warnings.push(format!("mass comparison failed: {e}"));
            (vec![], vec![], f64::NAN)
        }
    };
    let certificate = Certificate {
        pipeline: "conformally-hyperbolic".into(),
        t: None,
        gamma: None,
        epsilon: None,
        trials: vec![],
        residual_history: history,
        step_sizes: steps,
        linear_residual: 0.0,
        rank_deficient: false,
        min_margin: dec.min_margin,
        dec,
        mass_before,
        mass_after,
        mass_drift,
        exterior_error: Some((ee, ep)),
        expansion,
        gauge: None,
        warnings,
    };
    Ok(DeformationResult {
        v,
        y,
        data: out,
        certificate,
    })
}

/// Radial change r̄ = r - ψ(r) h(ω) e^{-nr} bringing data to Wang gauge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WangGauge {
    /// h at the angular nodes.
    pub h: Vec<f64>,
    /// The radial change is ramped in over [R0, λ] and is complete beyond λ.
    pub lambda: f64,
    /// Leading e^{-nr} coefficients of e_rr before and after.
    pub leading_before: Vec<f64>,
    pub leading_after: Vec<f64>,
    pub identity: bool,
    /// max |r - r̄| over the nodes.
    pub max_shift: f64,
}

fn radial_component(e: &Field) -> Field {
    let grid = e.grid();
    let (n, na) = (grid.n(), grid.na());
    pointwise(grid, &[e], Kind::Scalar, e.weight(), |p, v, out| {
        let w = grid.omega(p % na);
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += w[a] * v[0][a * n + b] * w[b];
            }
        }
        out[0] = s;
    })
}

/// Leading e^{-nr} coefficient of e_rr at every angular node, zero when
/// e_rr is negligible against e.
pub fn radial_leading_coefficient(data: &InitialData) -> Result<Vec<f64>> {
    let grid = data.grid();
    let n = grid.n() as f64;
    let err = radial_component(&data.e).with_weight(data.e.weight());
    let scale = weighted_sup_norm(&data.e, n);
    if weighted_sup_norm(&err, n) <= 1e-13 * scale || scale == 0.0 {
        return Ok(vec![0.0; grid.na()]);
    }
    Ok(extract_expansion(&err, &Field::zeros(grid, Kind::OneForm))?.v0)
}

/// One radial change r = F(r̄), F(r̄) = r̄ + ψ(F) h(ω) e^{-nF}, with the
/// fields resampled at F. Returns the new data and max |r - r̄|.
fn wang_pass(data: &InitialData, h: &[f64], lambda: f64) -> Result<(InitialData, f64)> {
    let grid = data.grid().clone();
    let (n, na, nr, npts) = (grid.n(), grid.na(), grid.nr(), grid.npts());
    let nf = n as f64;
    // sphere gradient of h from the frame gradient of h(ω) on the first shell
    let mut hd = vec![0.0; npts];
    for k in 0..nr {
        hd[k * na..(k + 1) * na].copy_from_slice(h);
    }
    let hfield = Field::from_data(&grid, Kind::Scalar, 0.0, hd)?;
    let dh = crate::calculus::covariant_derivative(&hfield)?;
    let sh0 = grid.r()[0].sinh();
    let grad: Vec<Vec<f64>> = (0..na)
        .map(|q| (0..n).map(|a| dh.at(a, q) * sh0).collect())
        .collect();
    let width = lambda - grid.r0();
    let psi = |r: f64| 1.0 - smooth_step(1.0 + (r - grid.r0()) / width);
    let dpsi = |r: f64| -smooth_step_derivative(1.0 + (r - grid.r0()) / width) / width;
    let mut e = vec![0.0; n * n * npts];
    let mut pi = vec![0.0; n * n * npts];
    let mut max_shift = 0.0f64;
    for k in 0..nr {
        let rb = grid.r()[k];
        for q in 0..na {
            let p = k * na + q;
            let w = grid.omega(q);
            let d_of = |r: f64| psi(r) * h[q] * (-nf * r).exp();
            let dr_of = |r: f64| (dpsi(r) - nf * psi(r)) * h[q] * (-nf * r).exp();
            let mut fr = rb;
            for _ in 0..50 {
                let g = fr - d_of(fr) - rb;
                let step = g / (1.0 - dr_of(fr));
                fr -= step;
                if step.abs() <= 1e-16 * fr {
                    break;
                }
            }
            let dd = d_of(fr);
            max_shift = max_shift.max(dd.abs());
            let dr = dr_of(fr);
            let qm1 = 2.0 * (0.5 * (fr + rb)).cosh() * (0.5 * dd).sinh() / rb.sinh();
            let rho = 1.0 / (1.0 - dr);
            let rm1 = dr / (1.0 - dr);
            let gscale = psi(fr) * (-nf * fr).exp() / fr.sinh();
            let mut b = vec![0.0; n * n];
            for a in 0..n {
                for c in 0..n {
                    let rr = w[a] * w[c];
                    let tt = if a == c { 1.0 } else { 0.0 } - rr;
                    b[a * n + c] =
                        rm1 * rr + qm1 * tt + (1.0 + qm1) * rho * w[a] * gscale * grad[q][c];
                }
            }
            let (start, wts) = grid.interpolation_weights(fr.clamp(grid.r0(), grid.rmax()))?;
            let sample = |f: &Field, c: usize| -> f64 {
                wts.iter()
                    .enumerate()
                    .map(|(i, wi)| wi * f.at(c, (start + i) * na + q))
                    .sum()
            };
            let eo: Vec<f64> = (0..n * n).map(|c| sample(&data.e, c)).collect();
            let po: Vec<f64> = (0..n * n).map(|c| sample(&data.pi, c)).collect();
            // ē = e + B + Bᵀ + BᵀB + Bᵀe + eB + BᵀeB, π̄ = AᵀπA
            let ab = |i: usize, j: usize| b[i * n + j] + if i == j { 1.0 } else { 0.0 };
            for i in 0..n {
                for jj in 0..n {
                    let mut s = eo[i * n + jj] + b[i * n + jj] + b[jj * n + i];
                    let mut t = 0.0;
                    for a in 0..n {
                        s += b[a * n + i] * b[a * n + jj];
                        for c in 0..n {
                            let full = ab(a, i) * ab(c, jj);
                            s += (full - if a == i && c == jj { 1.0 } else { 0.0 }) * eo[a * n + c];
                            t += full * po[a * n + c];
                        }
                    }
                    e[(i * n + jj) * npts + p] = s;
                    pi[(i * n + jj) * npts + p] = t;
                }
            }
        }
    }
    let out = InitialData::new(
        Field::from_data(&grid, Kind::SymTensor, data.e.weight(), e)?,
        Field::from_data(&grid, Kind::SymTensor, data.pi.weight(), pi)?,
        data.decay,
    )?;
    Ok((out, max_shift))
}

const WANG_PASSES: usize = 4;

/// Changes the radial coordinate so that e_rr has no e^{-nr} term.
pub fn wang_renormalize(data: &InitialData) -> Result<(InitialData, WangGauge)> {
    let grid = data.grid().clone();
    let (n, na) = (grid.n(), grid.na());
    let nf = n as f64;
    let lambda = grid.r()[crate::diagnostics::fit_window(&grid).start];
    let before = radial_leading_coefficient(data)?;
    let scale = before.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        let gauge = WangGauge {
            h: vec![0.0; na],
            lambda,
            leading_before: before.clone(),
            leading_after: before,
            identity: true,
            max_shift: 0.0,
        };
        return Ok((data.clone(), gauge));
    }
    let mut h = vec![0.0; na];
    let mut out = data.clone();
    let mut after = before.clone();
    let mut max_shift = 0.0f64;
    // the leading-order change leaves O(e^{-2nr}) terms that bias the fit
    for _ in 0..WANG_PASSES {
        let step: Vec<f64> = after.iter().map(|a| a / (2.0 * nf)).collect();
        let (next, shift) = wang_pass(&out, &step, lambda)?;
        out = next;
        max_shift += shift;
        h.iter_mut().zip(&step).for_each(|(a, b)| *a += b);
        after = radial_leading_coefficient(&out)?;
        if after.iter().all(|a| a.abs() <= 1e-10 * scale) {
            break;
        }
    }
    let gauge = WangGauge {
        h,
        lambda,
        leading_before: before,
        leading_after: after,
        identity: false,
        max_shift,
    };
    Ok((out, gauge))
}

/// Strict-DEC perturbation with f = e^{-(n+1)r} followed by the Wang
/// renormalization; no γ certificate.
pub fn perturb_wang(data: &InitialData, epsilon: f64) -> Result<DeformationResult> {
    let n = data.grid().n() as f64;
    let opts = StrictDecOptions {
        f_rate: Some(n + 1.0),
        gamma_certificate: false,
        ..StrictDecOptions::new(epsilon)
    };
    perturb_wang_with(data, &opts)
}

pub fn perturb_wang_with(data: &InitialData, opts: &StrictDecOptions) -> Result<DeformationResult> {
    let lead = radial_leading_coefficient(data)?;
    let scale = weighted_sup_norm(&data.e, data.grid().n() as f64).max(1e-300);
    let mut res = strict_pipeline(data, opts, "wang", |d| {
        let (out, gauge) = wang_renormalize(&d)?;
        Ok((out, Some(gauge)))
    })?;
    if lead.iter().any(|a| a.abs() > 1e-8 * scale) {
        res.certificate
            .warnings
            .push("input e_rr has an e^{-nr} term; input not in Wang gauge".into());
    }
    Ok(res)
}
