//! Weighted norms, cutoffs, decay-rate fits and extraction of conformally
//! hyperbolic leading terms.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Kind};
use crate::grid::Grid;

/// max over nodes of e^{δ r}|f|_b.
pub fn weighted_sup_norm(f: &Field, delta: f64) -> f64 {
    let grid = f.grid();
    let na = grid.na();
    let norm = f.norm_b();
    norm.data()
        .iter()
        .enumerate()
        .map(|(p, x)| (delta * grid.r()[p / na]).exp() * x)
        .fold(0.0, f64::max)
}

fn psi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 1 for x <= 1, 0 for x >= 2.
pub fn smooth_step(x: f64) -> f64 {
    let (a, b) = (psi(2.0 - x), psi(x - 1.0));
    a / (a + b)
}

/// Derivative of [`smooth_step`].
pub fn smooth_step_derivative(x: f64) -> f64 {
    let dpsi = |t: f64| if t > 0.0 { psi(t) / (t * t) } else { 0.0 };
    let (a, b) = (psi(2.0 - x), psi(x - 1.0));
    if a + b == 0.0 {
        return 0.0;
    }
    (-dpsi(2.0 - x) * b - a * dpsi(x - 1.0)) / ((a + b) * (a + b))
}

/// χ_λ(r) = χ(r/λ), equal to 1 for r <= λ and 0 for r >= 2λ.
pub fn cutoff_chi(lambda: f64, grid: &Arc<Grid>) -> Result<Field> {
    check_lambda(lambda, grid)?;
    Ok(Field::scalar_fn(grid, 0.0, move |r, _| {
        smooth_step(r / lambda)
    }))
}

/// ξ_λ = χ_λ + (1 - χ_λ) e^{-r}.
pub fn cutoff_xi(lambda: f64, grid: &Arc<Grid>) -> Result<Field> {
    check_lambda(lambda, grid)?;
    Ok(Field::scalar_fn(grid, 0.0, move |r, _| {
        let c = smooth_step(r / lambda);
        c + (1.0 - c) * (-r).exp()
    }))
}

fn check_lambda(lambda: f64, grid: &Grid) -> Result<()> {
    if !(lambda >= grid.r0()) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cutoff radius {lambda} below R0 = {}",
            grid.r0()
        )));
    }
    Ok(())
}

/// Radial nodes used by fits: the outer third of the nodes, without the
/// three outermost ones.
pub fn fit_window(grid: &Grid) -> Range<usize> {
    let nr = grid.nr();
    (2 * nr) / 3..nr - 3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    /// Two standard errors of the fitted slope.
    pub width: f64,
    pub r_min: f64,
    pub r_max: f64,
}

/// Decay rate of a field: minus the slope of log(shell sup |f|_b) against r.
///
/// The least-squares fit weights each node by its share of r, so the result
/// approximates a continuous fit over the window.
pub fn decay_fit(f: &Field) -> Result<DecayFit> {
    let grid = f.grid();
    let norm = f.norm_b();
    let win = fit_window(grid);
    let mut pts = Vec::with_capacity(win.len());
    for k in win.clone() {
        let m = norm.shell(0, k).iter().cloned().fold(0.0, f64::max);
        if !(m > 1e3 * f64::MIN_POSITIVE) || !m.is_finite() {
            return Err(Error::DegenerateFit(format!(
                "shell norm {m:e} at r = {:.4}",
                grid.r()[k]
            )));
        }
        pts.push((grid.r()[k], m.ln(), grid.ds() / grid.s()[k]));
    }
    let (slope, se) = weighted_line(&pts);
    Ok(DecayFit {
        rate: -slope,
        width: 2.0 * se,
        r_min: grid.r()[win.start],
        r_max: grid.r()[win.end - 1],
    })
}

/// Weighted least-squares line through (x, y, weight); returns slope and its
/// standard error.
fn weighted_line(pts: &[(f64, f64, f64)]) -> (f64, f64) {
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts
        .iter()
        .map(|p| p.2 * (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    let dof = (pts.len() as f64 - 2.0).max(1.0);
    let se = (rss / dof / sxx).sqrt();
    (slope, se)
}

/// Leading coefficients and remainders of (v, Y) in the model
/// v ≈ v0 e^{-nr}, Y_r ≈ (Y0)_r e^{-nr}, frame tangential part ≈ (Y0)_t e^{-nr}.
///
/// The frame tangential rate n corresponds to the coordinate rate n - 1:
/// a coordinate component Y_φ = sinh r · (frame component), so the
/// coordinate coefficient is half the frame coefficient.
#[derive(Debug, Clone)]
pub struct AsymptoticExpansion {
    pub n: usize,
    /// v0 at each angular node.
    pub v0: Vec<f64>,
    /// (Y0)_r at each angular node.
    pub y0_r: Vec<f64>,
    /// Frame tangential coefficients, `[a * na + j]` for Cartesian slot a.
    pub y0_t_frame: Vec<f64>,
    /// Coordinate tangential coefficients (rate n - 1), same layout.
    pub y0_t_coordinate: Vec<f64>,
    pub v1: Field,
    pub y1: Field,
    pub v1_rate: Option<DecayFit>,
    pub y1_rate: Option<DecayFit>,
    /// Weighted sup norms of the remainders with weight e^{(n+1)r}.
    pub v1_sup: f64,
    pub y1_sup: f64,
}

impl AsymptoticExpansion {
    /// The model terms as fields, so that model + remainder is the input.
    pub fn model(&self, grid: &Arc<Grid>) -> (Field, Field) {
        let n = self.n;
        let na = grid.na();
        let nf = n as f64;
        let npts = grid.npts();
        let mut vdata = vec![0.0; npts];
        let mut ydata = vec![0.0; n * npts];
        for k in 0..grid.nr() {
            let e = (-nf * grid.r()[k]).exp();
            for j in 0..na {
                let p = k * na + j;
                vdata[p] = self.v0[j] * e;
                let w = grid.omega(j);
                for a in 0..n {
                    ydata[a * npts + p] = (self.y0_r[j] * w[a] + self.y0_t_frame[a * na + j]) * e;
                }
            }
        }
        (
            Field::from_data(grid, Kind::Scalar, nf, vdata).expect("finite model"),
            Field::from_data(grid, Kind::OneForm, nf, ydata).expect("finite model"),
        )
    }

    /// Integral over the unit sphere of v0·phi and (Y0)_r·phi.
    pub fn sphere_moments(&self, grid: &Grid, phi: &[f64]) -> (f64, f64) {
        let sph = grid.sphere();
        let a: Vec<f64> = self.v0.iter().zip(phi).map(|(x, y)| x * y).collect();
        let b: Vec<f64> = self.y0_r.iter().zip(phi).map(|(x, y)| x * y).collect();
        (sph.integrate(&a), sph.integrate(&b))
    }
}

/// Coefficient c0 of s^{-n}·f ≈ c0 + c1 s + c2 s² over the fit window, at
/// every angular node of a scalar profile block.
fn leading_coefficients(grid: &Grid, data: &[f64], n: usize) -> Vec<f64> {
    let na = grid.na();
    let win = fit_window(grid);
    let m = win.len();
    let deg = 4.min(m);
    let mut a = DMatrix::zeros(m, deg);
    for (i, k) in win.clone().enumerate() {
        let s = grid.s()[k];
        for d in 0..deg {
            a[(i, d)] = s.powi(d as i32);
        }
    }
    let svd = a.svd(true, true);
    (0..na)
        .map(|j| {
            let rhs = DVector::from_iterator(
                m,
                win.clone()
                    .map(|k| grid.s()[k].powi(-(n as i32)) * data[k * na + j]),
            );
            svd.solve(&rhs, 1e-14).map(|c| c[0]).unwrap_or(0.0)
        })
        .collect()
}

/// Fits the conformally hyperbolic model to (v, Y).
pub fn extract_expansion(v: &Field, y: &Field) -> Result<AsymptoticExpansion> {
    if v.rank() != 0 || y.rank() != 1 || !v.same_grid(y) {
        return Err(Error::InvalidParameter(
            "extract_expansion needs a scalar and a 1-form on one grid".into(),
        ));
    }
    let grid = v.grid();
    let (n, na, npts) = (grid.n(), grid.na(), grid.npts());
    let nf = n as f64;
    for (name, f) in [("v", v), ("Y", y)] {
        if let Ok(fit) = decay_fit(f) {
            if fit.rate <= 0.5 * nf {
                return Err(Error::FitQuality(format!(
                    "{name} decays at rate {:.3} <= n/2",
                    fit.rate
                )));
            }
        }
    }
    let v0 = leading_coefficients(grid, v.data(), n);
    let yr = y.radial_part();
    let y0_r = leading_coefficients(grid, yr.data(), n);
    let mut tang = vec![0.0; n * npts];
    for p in 0..npts {
        let w = grid.omega(p % na);
        for a in 0..n {
            tang[a * npts + p] = y.at(a, p) - yr.at(0, p) * w[a];
        }
    }
    let mut y0_t_frame = Vec::with_capacity(n * na);
    for a in 0..n {
        y0_t_frame.extend(leading_coefficients(
            grid,
            &tang[a * npts..(a + 1) * npts],
            n,
        ));
    }
    let y0_t_coordinate = y0_t_frame.iter().map(|x| 0.5 * x).collect();
    let mut exp = AsymptoticExpansion {
        n,
        v0,
        y0_r,
        y0_t_frame,
        y0_t_coordinate,
        v1: v.clone(),
        y1: y.clone(),
        v1_rate: None,
        y1_rate: None,
        v1_sup: 0.0,
        y1_sup: 0.0,
    };
    let (mv, my) = exp.model(grid);
    exp.v1 = v.sub(&mv).with_weight(nf + 1.0);
    exp.y1 = y.sub(&my).with_weight(nf + 1.0);
    exp.v1_rate = decay_fit(&exp.v1).ok();
    exp.y1_rate = decay_fit(&exp.y1).ok();
    exp.v1_sup = weighted_sup_norm(&exp.v1, nf + 1.0);
    exp.y1_sup = weighted_sup_norm(&exp.y1, nf + 1.0);
    for (name, model, rest, rate) in [
        ("v", &mv, &exp.v1, exp.v1_rate),
        ("Y", &my, &exp.y1, exp.y1_rate),
    ] {
        let mw = window_sup(model);
        let rw = window_sup(rest);
        let faster = rate.is_none_or(|f| f.rate > nf);
        if rw >= mw && !faster {
            return Err(Error::FitQuality(format!(
                "{name}: remainder {rw:.3e} not below model {mw:.3e} on the outer shells"
            )));
        }
    }
    Ok(exp)
}

fn window_sup(f: &Field) -> f64 {
    let grid = f.grid();
    let norm = f.norm_b();
    fit_window(grid)
        .flat_map(|k| norm.shell(0, k).to_vec())
        .fold(0.0, f64::max)
}
