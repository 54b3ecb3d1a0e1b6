//! KIDs, charge integrals and the mass functional.
//!
//! The mass of (g, π) evaluated on V ∈ span{cosh r, x^i sinh r} is
//!
//! ```text
//! ℳ(V) = 1/(2(n-1)ω_{n-1}) lim_R ∫_{S_R} U(ν) dμ^b,
//! U = V(div e - d tr e) + (tr e) dV - (e + 2η)(∇V, ·),
//! ```
//!
//! with e = g - b, η = π and every operation taken with respect to b.
//! x^i are the Cartesian coordinates of the unit sphere in R^n; for n = 3,
//! x¹ = sinθ cosφ, x² = sinθ sinφ, x³ = cosθ.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::{divergence, gradient};
use crate::constraints::densities;
use crate::data::InitialData;
use crate::diagnostics::weighted_sup_norm;
use crate::error::{Error, Result};
use crate::field::{pointwise, Field, Kind};
use crate::grid::Grid;

/// A translational KID (V, -dV) of hyperbolic space.
#[derive(Debug, Clone)]
pub struct KidElement {
    /// 0 for cosh r, i for x^i sinh r.
    pub index: usize,
    pub v: Field,
    pub dv: Field,
}

impl KidElement {
    pub fn new(grid: &Arc<Grid>, index: usize) -> KidElement {
        let n = grid.n();
        assert!(index <= n, "KID index {index} out of range");
        let v = Field::scalar_fn(grid, -1.0, move |r, w| {
            if index == 0 {
                r.cosh()
            } else {
                w[index - 1] * r.sinh()
            }
        });
        let dv = Field::from_fn(grid, Kind::OneForm, -1.0, move |r, w, out| {
            // ∇V = V' ω + (1/sinh r) grad_S V
            if index == 0 {
                for a in 0..n {
                    out[a] = r.sinh() * w[a];
                }
            } else {
                let i = index - 1;
                for a in 0..n {
                    let tang = if a == i { 1.0 } else { 0.0 } - w[i] * w[a];
                    out[a] = w[i] * r.cosh() * w[a] + tang;
                }
            }
        });
        KidElement { index, v, dv }
    }

    /// The argument of the displayed adjoint DΦ* that this KID annihilates.
    ///
    /// (V, ϖ) = (V, -dV) pairs with the densities (μ, J), whereas DΦ* pairs
    /// with the slots (-2μ, J) of Φ; the conversion halves V and flips its sign.
    pub fn adjoint_argument(&self) -> (Field, Field) {
        (self.v.scale(-0.5), self.dv.scale(-1.0))
    }
}

/// V_(0), ..., V_(n).
pub fn kid_basis(grid: &Arc<Grid>) -> Vec<KidElement> {
    (0..=grid.n()).map(|i| KidElement::new(grid, i)).collect()
}

/// Parts of the charge integrand independent of the KID.
struct ChargeParts {
    /// div e - d tr e.
    form: Field,
    tr: Field,
    /// e + 2η.
    sym: Field,
}

fn charge_parts(e: &Field, eta: &Field) -> Result<ChargeParts> {
    let tr = e.trace_b();
    let form = divergence(e)?.sub(&gradient(&tr)?);
    let sym = e.axpy(2.0, eta);
    Ok(ChargeParts { form, tr, sym })
}

fn integrand_from_parts(parts: &ChargeParts, kid: &KidElement) -> Field {
    let grid = kid.v.grid();
    let n = grid.n();
    let wt = parts.form.weight().min(parts.sym.weight()) - 1.0;
    pointwise(
        grid,
        &[&parts.form, &parts.tr, &parts.sym, &kid.v, &kid.dv],
        Kind::OneForm,
        wt,
        |_, x, out| {
            let [form, tr, sym, v, dv] = [x[0], x[1], x[2], x[3], x[4]];
            for a in 0..n {
                let mut s = v[0] * form[a] + tr[0] * dv[a];
                for b in 0..n {
                    s -= sym[b * n + a] * dv[b];
                }
                out[a] = s;
            }
        },
    )
}

/// The 1-form U of the charge integral for (e, η) and a KID.
pub fn charge_integrand(e: &Field, eta: &Field, kid: &KidElement) -> Result<Field> {
    Ok(integrand_from_parts(&charge_parts(e, eta)?, kid))
}

/// Per-node shell integrals ∫_{S_r} U(∂_r) sinh^{n-1} r dμ^σ.
fn shell_profile(u: &Field) -> Vec<f64> {
    let grid = u.grid();
    let n = grid.n();
    let na = grid.na();
    let ur = u.radial_part();
    (0..grid.nr())
        .map(|k| {
            grid.sphere().integrate(&ur.data()[k * na..(k + 1) * na])
                * grid.r()[k].sinh().powi(n as i32 - 1)
        })
        .collect()
}

/// ∫_{S_R} U(ν) dμ^b, interpolated in s between radial nodes.
pub fn sphere_charge(data: &InitialData, kid: &KidElement, radius: f64) -> Result<f64> {
    let u = charge_integrand(&data.e, &data.pi, kid)?;
    data.grid().interpolate_profile(&shell_profile(&u), radius)
}

/// 1/(2(n-1)ω_{n-1}).
pub fn mass_normalization(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64 - 1.0) * crate::sphere::sphere_area(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassOptions {
    /// Number of shell radii.
    pub ladder: usize,
    /// Shells entering the extrapolation fit.
    pub fit_shells: usize,
    /// Largest accepted last increment of the normalized shell values,
    /// relative to max(1, |value|).
    pub cauchy_tol: f64,
}

impl Default for MassOptions {
    fn default() -> Self {
        MassOptions {
            ladder: 8,
            fit_shells: 5,
            cauchy_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KidMass {
    pub index: usize,
    /// Normalized shell values ℳ_R(V) at the ladder radii.
    pub shells: Vec<f64>,
    pub value: f64,
    pub error: f64,
    /// True when the two-parameter fit was used.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassReport {
    pub n: usize,
    pub radii: Vec<f64>,
    pub normalization: f64,
    /// Exponent β of the extrapolation model c + a e^{-βR}.
    pub rate: f64,
    pub kids: Vec<KidMass>,
    pub warnings: Vec<String>,
}

impl MassReport {
    pub fn values(&self) -> Vec<f64> {
        self.kids.iter().map(|k| k.value).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// CSV rows (R, charge_V0, ..., charge_Vn) of unnormalized shell charges.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["R".to_string()];
        head.extend(self.kids.iter().map(|k| format!("charge_V{}", k.index)));
        out.write_record(&head)
            .map_err(|e| Error::Format(e.to_string()))?;
        for (i, r) in self.radii.iter().enumerate() {
            let mut row = vec![r.to_string()];
            row.extend(
                self.kids
                    .iter()
                    .map(|k| (k.shells[i] / self.normalization).to_string()),
            );
            out.write_record(&row)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Ladder radii: uniform in r across the outer half of the domain.
pub fn shell_ladder(grid: &Grid, count: usize) -> Vec<f64> {
    let (a, b) = (0.5 * (grid.r0() + grid.rmax()), grid.rmax());
    if count < 2 {
        return vec![b];
    }
    (0..count)
        .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Mass functional on V_(0..n) with shell extrapolation.
pub fn mass_functional(data: &InitialData) -> Result<MassReport> {
    mass_functional_with(data, &MassOptions::default())
}

pub fn mass_functional_with(data: &InitialData, opts: &MassOptions) -> Result<MassReport> {
    let grid = data.grid();
    let n = grid.n();
    let nf = n as f64;
    let mut warnings = Vec::new();
    if data.decay.tau <= 0.5 * nf {
        warnings.push(format!(
            "declared τ = {} does not exceed n/2",
            data.decay.tau
        ));
    }
    let beta = 2.0 * data.decay.tau - nf;
    let norm = mass_normalization(n);
    let radii = shell_ladder(grid, opts.ladder.max(2));
    let parts = charge_parts(&data.e, &data.pi)?;
    let mut kids = Vec::with_capacity(n + 1);
    for kid in kid_basis(grid) {
        let prof = shell_profile(&integrand_from_parts(&parts, &kid));
        let shells = radii
            .iter()
            .map(|&r| grid.interpolate_profile(&prof, r).map(|q| q * norm))
            .collect::<Result<Vec<_>>>()?;
        let (value, error, extrapolated) = extrapolate(&radii, &shells, beta, opts.fit_shells);
        let m = shells.len();
        let last = (shells[m - 1] - shells[m - 2]).abs();
        if last > opts.cauchy_tol * shells[m - 1].abs().max(1.0) {
            return Err(Error::MassNonConvergence { increment: last });
        }
        kids.push(KidMass {
            index: kid.index,
            shells,
            value,
            error,
            extrapolated,
        });
    }
    Ok(MassReport {
        n,
        radii,
        normalization: norm,
        rate: beta,
        kids,
        warnings,
    })
}

/// Fits c + a e^{-βR} to the last `count` shell values; falls back to the
/// last value when the fit is ill-conditioned.
fn extrapolate(radii: &[f64], vals: &[f64], beta: f64, count: usize) -> (f64, f64, bool) {
    let m = vals.len();
    let last = vals[m - 1];
    let inc = (vals[m - 1] - vals[m - 2]).abs();
    let k = count.clamp(2, m);
    let xs: Vec<f64> = radii[m - k..].iter().map(|r| (-beta * r).exp()).collect();
    let ys = &vals[m - k..];
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(beta > 0.0) || !(sxx.sqrt() > 1e-14 * mx.abs().max(1e-300)) || !sxx.is_normal() {
        return (last, inc, false);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let c = my - sxy / sxx * mx;
    if !c.is_finite() {
        return (last, inc, false);
    }
    (c, inc.max((c - last).abs()), true)
}

/// Closed-form masses for conformally hyperbolic asymptotics:
/// 2(n+1)/((n-2)ω) ∫ φ v0 + 2(n+1)/(nω) ∫ φ (Y0)_r with φ ∈ {1, x^i}.
pub fn mass_conf_hyp(v0: &[f64], y0_r: &[f64], grid: &Grid) -> Vec<f64> {
    let n = grid.n();
    let nf = n as f64;
    let om = crate::sphere::sphere_area(n);
    let (a, b) = (
        2.0 * (nf + 1.0) / ((nf - 2.0) * om),
        2.0 * (nf + 1.0) / (nf * om),
    );
    sphere_moments(grid, |j, phi| phi * (a * v0[j] + b * y0_r[j]))
}

/// Closed-form masses for Wang asymptotics: 1/(2(n-1)ω) ∫ φ (n tr_σ m - 2 p_rr).
///
/// `m` holds frame components of a tangential 2-tensor, `[(a*n+b)*na + j]`.
pub fn mass_wang(m: &[f64], p_rr: &[f64], grid: &Grid) -> Vec<f64> {
    let n = grid.n();
    let na = grid.na();
    let nf = n as f64;
    let norm = mass_normalization(n);
    sphere_moments(grid, |j, phi| {
        let tr: f64 = (0..n).map(|a| m[(a * n + a) * na + j]).sum();
        phi * norm * (nf * tr - 2.0 * p_rr[j])
    })
}

fn sphere_moments(grid: &Grid, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let n = grid.n();
    let na = grid.na();
    (0..=n)
        .map(|i| {
            let vals: Vec<f64> = (0..na)
                .map(|j| f(j, if i == 0 { 1.0 } else { grid.omega(j)[i - 1] }))
                .collect();
            grid.sphere().integrate(&vals)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityProbe {
    /// max e^{τ r}|e - ē|_b.
    pub metric: f64,
    /// max e^{τ r}|π - π̄|_b.
    pub momentum: f64,
    /// max e^{(n+τ0) r}(|μ - μ̄| + |J - J̄|_b).
    pub densities: f64,
    pub mass: Vec<f64>,
    pub mass_difference: Vec<f64>,
}

/// Distances between two data sets and their masses.
pub fn mass_continuity_probe(data: &InitialData, other: &InitialData) -> Result<ContinuityProbe> {
    if !data.e.same_grid(&other.e) {
        return Err(Error::InvalidParameter(
            "data sets live on different grids".into(),
        ));
    }
    let n = data.grid().n() as f64;
    let tau = data.decay.tau;
    let metric = weighted_sup_norm(&data.e.sub(&other.e), tau);
    let momentum = weighted_sup_norm(&data.pi.sub(&other.pi), tau);
    let (d1, d2) = (densities(data)?, densities(other)?);
    let w = n + data.decay.tau0;
    let dens = weighted_sup_norm(&d1.mu.sub(&d2.mu), w) + weighted_sup_norm(&d1.j.sub(&d2.j), w);
    let (m1, m2) = (mass_functional(data)?, mass_functional(other)?);
    let mass = m1.values();
    let mass_difference = mass.iter().zip(m2.values()).map(|(a, b)| b - a).collect();
    Ok(ContinuityProbe {
        metric,
        momentum,
        densities: dens,
        mass,
        mass_difference,
    })
}
