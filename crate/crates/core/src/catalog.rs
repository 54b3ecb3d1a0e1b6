//! Example data families: hyperbolic space, AdS-Schwarzschild, Wang
//! asymptotics and conformally hyperbolic asymptotics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{DecayClass, InitialData};
use crate::deformation::apply_conformal_deviation;
use crate::error::{Error, Result};
use crate::field::{Field, Kind};
use crate::grid::Grid;

/// (b, 0).
pub fn hyperbolic_data(grid: &Arc<Grid>) -> InitialData {
    InitialData::hyperbolic(grid)
}

/// Horizon radius a(m): the positive root of 1 + ρ² - 2mρ^{2-n}.
pub fn adss_horizon(m: f64, n: usize) -> f64 {
    let f = |rho: f64| 1.0 + rho * rho - 2.0 * m * rho.powi(2 - n as i32);
    let (mut lo, mut hi) = (1e-300f64.powf(1.0 / n as f64), 1.0f64);
    while f(hi) <= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// F(ρ) = ∫_ρ^∞ (1/√(1+t²-2mt^{2-n}) - 1/√(1+t²)) dt, so that
/// r = asinh ρ - F(ρ) normalizes the chart with r - asinh ρ → 0.
pub fn adss_chart_offset(m: f64, n: usize, rho: f64) -> f64 {
    // t = ρ/x maps (ρ, ∞) to (0, 1]; the integrand is written without
    // cancellation and vanishes like x^{n-1} at x = 0.
    let eps = 2.0 * m * rho.powi(3 - n as i32);
    let h = |x: f64| {
        let d0 = x * x + rho * rho;
        let d1 = d0 - 2.0 * m * rho.powi(2 - n as i32) * x.powi(n as i32);
        let (a, b) = (d0.sqrt(), d1.sqrt());
        eps * x.powi(n as i32 - 1) / (a * b * (a + b))
    };
    adaptive_gauss(&h, 0.0, 1.0, 1e-16, 40)
}

/// ∫_a^b f by 4-point Gauss-Legendre panels, bisected until two levels agree.
fn adaptive_gauss(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let whole = gauss4(f, a, b);
    let mid = 0.5 * (a + b);
    let halves = gauss4(f, a, mid) + gauss4(f, mid, b);
    if depth == 0 || (whole - halves).abs() <= tol * halves.abs().max(1e-300) {
        halves
    } else {
        adaptive_gauss(f, a, mid, tol, depth - 1) + adaptive_gauss(f, mid, b, tol, depth - 1)
    }
}

fn gauss4(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 2] = [0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
    const W: [f64; 2] = [0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for i in 0..2 {
        s += W[i] * (f(c - h * X[i]) + f(c + h * X[i]));
    }
    s * h
}

/// Areal radius ρ(r) of the AdSS chart and the offset F(ρ(r)).
pub fn adss_areal_radius(m: f64, n: usize, r: f64) -> Result<(f64, f64)> {
    let a = adss_horizon(m, n);
    let mut rho = r.sinh();
    for _ in 0..100 {
        let f = adss_chart_offset(m, n, rho);
        let g = rho.asinh() - f - r;
        let dg = 1.0 / (1.0 + rho * rho - 2.0 * m * rho.powi(2 - n as i32)).sqrt();
        let mut next = rho - g / dg;
        if next <= a {
            next = 0.5 * (rho + a);
        }
        if (next - rho).abs() <= 1e-15 * rho {
            let f = adss_chart_offset(m, n, next);
            return Ok((next, f));
        }
        rho = next;
    }
    Err(Error::NonConvergence {
        iterations: 100,
        residual: f64::NAN,
        history: vec![],
    })
}

/// Umbilic AdS-Schwarzschild data in the chart where g = dr² + ρ(r)²σ and
/// ρ/sinh r → 1; π = 0.
pub fn adss_data(m: f64, grid: &Arc<Grid>) -> Result<InitialData> {
    let n = grid.n();
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mass parameter {m} must be nonnegative"
        )));
    }
    let decay = DecayClass::new(0.5, n as f64, 1.0);
    if m == 0.0 {
        return Ok(InitialData {
            decay,
            ..InitialData::hyperbolic(grid)
        });
    }
    let a = adss_horizon(m, n);
    if a >= grid.r0().sinh() {
        return Err(Error::HorizonInsideDomain {
            horizon: a,
            inner: grid.r0().sinh(),
        });
    }
    let q = grid
        .r()
        .iter()
        .map(|&r| {
            let (_, f) = adss_areal_radius(m, n, r)?;
            // ρ²/sinh²r - 1 with ρ = sinh(r + F)
            let d = 2.0 * (r + 0.5 * f).cosh() * (0.5 * f).sinh();
            Ok(d * (d + 2.0 * r.sinh()) / r.sinh().powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    let na = grid.na();
    let npts = grid.npts();
    let mut data = vec![0.0; n * n * npts];
    for (k, qk) in q.iter().enumerate() {
        for j in 0..na {
            let w = grid.omega(j);
            for a in 0..n {
                for b in 0..n {
                    let p = if a == b { 1.0 } else { 0.0 } - w[a] * w[b];
                    data[(a * n + b) * npts + k * na + j] = qk * p;
                }
            }
        }
    }
    let e = Field::from_data(grid, Kind::SymTensor, n as f64, data)?;
    InitialData::new(e, Field::zeros(grid, Kind::SymTensor), decay)
}

/// Leading coefficients of Wang asymptotics, as node values on the sphere.
///
/// Tensors are given by frame components in the ambient Cartesian frame,
/// tangential to the sphere: scalars as `[j]`, 1-forms as `[a*na + j]` and
/// 2-tensors as `[(a*n+b)*na + j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WangSpec {
    pub m: Vec<f64>,
    pub p_rr: Vec<f64>,
    pub p_r_tangential: Vec<f64>,
    pub p_tangential: Vec<f64>,
    /// Amplitude of an isotropic tangential metric remainder at rate n+1.
    #[serde(default)]
    pub remainder: f64,
}

impl WangSpec {
    pub fn zero(grid: &Grid) -> WangSpec {
        let (n, na) = (grid.n(), grid.na());
        WangSpec {
            m: vec![0.0; n * n * na],
            p_rr: vec![0.0; na],
            p_r_tangential: vec![0.0; n * na],
            p_tangential: vec![0.0; n * n * na],
            remainder: 0.0,
        }
    }

    /// m = f·σ, p_rr = p, other momentum coefficients zero.
    pub fn isotropic(grid: &Grid, f: &[f64], p: &[f64]) -> WangSpec {
        let (n, na) = (grid.n(), grid.na());
        let mut s = WangSpec::zero(grid);
        for j in 0..na {
            let w = grid.omega(j);
            for a in 0..n {
                for b in 0..n {
                    let proj = if a == b { 1.0 } else { 0.0 } - w[a] * w[b];
                    s.m[(a * n + b) * na + j] = f[j] * proj;
                }
            }
        }
        s.p_rr.copy_from_slice(p);
        s
    }
}

/// g = dr² + sinh²r(σ + m e^{-nr} + remainder e^{-(n+1)r}), and π with
/// coordinate components π_rr = p_rr e^{-nr}, π_rμ = p_rμ e^{-(n-1)r},
/// π_μν = p_μν e^{-(n-2)r}.
pub fn wang_data(spec: &WangSpec, grid: &Arc<Grid>) -> Result<InitialData> {
    let (n, na, npts) = (grid.n(), grid.na(), grid.npts());
    let nf = n as f64;
    let check = |v: &Vec<f64>, len: usize, name: &str| {
        if v.len() != len || v.iter().any(|x| !x.is_finite()) {
            Err(Error::InvalidParameter(format!(
                "Wang coefficient {name} must have {len} finite values"
            )))
        } else {
            Ok(())
        }
    };
    check(&spec.m, n * n * na, "m")?;
    check(&spec.p_rr, na, "p_rr")?;
    check(&spec.p_r_tangential, n * na, "p_r")?;
    check(&spec.p_tangential, n * n * na, "p")?;
    let mut e = vec![0.0; n * n * npts];
    let mut pi = vec![0.0; n * n * npts];
    for k in 0..grid.nr() {
        let r = grid.r()[k];
        let (sh, en) = (r.sinh(), (-nf * r).exp());
        let en1 = (-(nf + 1.0) * r).exp();
        let rt = (-(nf - 1.0) * r).exp() / sh;
        let tt = (-(nf - 2.0) * r).exp() / (sh * sh);
        for j in 0..na {
            let p = k * na + j;
            let w = grid.omega(j);
            for a in 0..n {
                let ta = spec.p_r_tangential[a * na + j];
                for b in 0..n {
                    let ab = a * n + b;
                    let proj = if a == b { 1.0 } else { 0.0 } - w[a] * w[b];
                    e[ab * npts + p] = spec.m[ab * na + j] * en + spec.remainder * proj * en1;
                    let tb = spec.p_r_tangential[b * na + j];
                    pi[ab * npts + p] = spec.p_rr[j] * en * w[a] * w[b]
                        + rt * (w[a] * tb + w[b] * ta)
                        + tt * spec.p_tangential[ab * na + j];
                }
            }
        }
    }
    let decay = DecayClass::new(0.5, nf, 1.0);
    InitialData::new(
        Field::from_data(grid, Kind::SymTensor, nf, e)?,
        Field::from_data(grid, Kind::SymTensor, nf, pi)?,
        decay,
    )
}

/// Conformally hyperbolic data apply_conformal((b, 0), u, Y) with
/// u = 1 + v0 e^{-nr} + v1 and Y = ((Y0)_r ω + (Y0)_t) e^{-nr} + Y1 in frame
/// components; the tangential coordinate rate is n - 1.
pub fn conf_hyp_data(
    v0: &[f64],
    y0_r: &[f64],
    y0_t: &[f64],
    remainders: Option<(&Field, &Field)>,
    grid: &Arc<Grid>,
) -> Result<InitialData> {
    let (n, na, npts) = (grid.n(), grid.na(), grid.npts());
    let nf = n as f64;
    if v0.len() != na || y0_r.len() != na || y0_t.len() != n * na {
        return Err(Error::InvalidParameter(
            "sphere coefficient arrays have the wrong length".into(),
        ));
    }
    let mut v = vec![0.0; npts];
    let mut y = vec![0.0; n * npts];
    for k in 0..grid.nr() {
        let en = (-nf * grid.r()[k]).exp();
        for j in 0..na {
            let p = k * na + j;
            let w = grid.omega(j);
            v[p] = v0[j] * en;
            for a in 0..n {
                y[a * npts + p] = en * (y0_r[j] * w[a] + y0_t[a * na + j]);
            }
        }
    }
    let mut v = Field::from_data(grid, Kind::Scalar, nf, v)?;
    let mut y = Field::from_data(grid, Kind::OneForm, nf, y)?;
    if let Some((v1, y1)) = remainders {
        v = v.add(v1).with_weight(nf.min(v1.weight()));
        y = y.add(y1).with_weight(nf.min(y1.weight()));
    }
    let base = InitialData {
        decay: DecayClass::new(0.5, nf, 1.0),
        ..InitialData::hyperbolic(grid)
    };
    apply_conformal_deviation(&base, &v, &y)
}
