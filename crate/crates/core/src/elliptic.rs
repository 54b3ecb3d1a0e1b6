//! Model operators Δ - n and Δ_L on the hyperbolic exterior: indicial data,
//! the variation-of-parameters radial ODE solver, and weighted Dirichlet
//! solves.

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::calculus::{spectral_tail, strip_top_rows, without_resolution_check};
use crate::diagnostics::weighted_sup_norm;
use crate::error::{Error, Result};
use crate::field::{Field, Kind};
use crate::geometry::Geometry;
use crate::grid::{fornberg, Grid, MAX_WEIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// Δ - n on functions.
    Scalar,
    /// Δ_L = div L̊ on 1-forms.
    Vector,
}

/// Characteristic exponents of one component reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicialComponent {
    pub name: &'static str,
    /// Bundle rank offset k of the symmetry line Re s = (n-1)/2 - k.
    pub offset: i64,
    pub lower: Ratio<i64>,
    pub upper: Ratio<i64>,
}

impl IndicialComponent {
    /// δ+ - ((n-1)/2 - k).
    pub fn radius(&self, n: usize) -> Ratio<i64> {
        self.upper - (Ratio::new(n as i64 - 1, 2) - Ratio::from_integer(self.offset))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicialRecord {
    pub kind: OperatorKind,
    pub n: usize,
    pub components: Vec<IndicialComponent>,
    pub radius: Ratio<i64>,
}

/// Integer roots of s² - a s + b (a, b integers with integer roots).
fn integer_roots(a: i64, b: i64) -> (Ratio<i64>, Ratio<i64>) {
    let disc = a * a - 4 * b;
    let sq = (disc as f64).sqrt().round() as i64;
    assert_eq!(
        sq * sq,
        disc,
        "characteristic polynomial without rational roots"
    );
    (Ratio::new(a - sq, 2), Ratio::new(a + sq, 2))
}

/// Characteristic exponents and indicial radius of the model operators.
///
/// Scalar and radial vector components: s² - (n-1)s - n, roots {-1, n}.
/// Tangential vector components in sphere coordinates: s² - (n-3)s - 2(n-1),
/// roots {-2, n-1}, with offset k = 1.
pub fn indicial_exponents(kind: OperatorKind, n: usize) -> Result<IndicialRecord> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "dimension {n} must be at least 2"
        )));
    }
    let ni = n as i64;
    let (lo, hi) = integer_roots(ni - 1, -ni);
    let mut components = vec![IndicialComponent {
        name: if kind == OperatorKind::Scalar {
            "scalar"
        } else {
            "radial"
        },
        offset: 0,
        lower: lo,
        upper: hi,
    }];
    if kind == OperatorKind::Vector {
        let (lo, hi) = integer_roots(ni - 3, -2 * (ni - 1));
        components.push(IndicialComponent {
            name: "tangential",
            offset: 1,
            lower: lo,
            upper: hi,
        });
    }
    let radius = components[0].radius(n);
    debug_assert!(components.iter().all(|c| c.radius(n) == radius));
    Ok(IndicialRecord {
        kind,
        n,
        components,
        radius,
    })
}

/// u'' + A u' + B u = f sampled at increasing radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeProblem {
    pub a: f64,
    pub b: f64,
    pub r: Vec<f64>,
    pub f: Vec<f64>,
}

impl OdeProblem {
    pub fn new(a: f64, b: f64, r: Vec<f64>, f: Vec<f64>) -> Result<OdeProblem> {
        if !(a * a - 4.0 * b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "A² - 4B = {} must be positive",
                a * a - 4.0 * b
            )));
        }
        if r.len() != f.len() || r.len() < 4 || r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "radii must be increasing and match the samples".into(),
            ));
        }
        Ok(OdeProblem { a, b, r, f })
    }

    /// Roots δ- < δ+ of λ² - Aλ + B = 0.
    pub fn roots(&self) -> (f64, f64) {
        let d = (self.a * self.a - 4.0 * self.b).sqrt();
        (0.5 * (self.a - d), 0.5 * (self.a + d))
    }

    /// Pointwise residual u'' + A u' + B u - f from exact derivatives.
    pub fn residual(&self, u: &[f64], du: &[f64], ddu: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|k| ddu[k] + self.a * du[k] + self.b * u[k] - self.f[k])
            .collect()
    }
}

/// Fitted exponential decay rate of the outer samples of a profile.
fn tail_rate(r: &[f64], f: &[f64]) -> Option<f64> {
    let m = r.len();
    let win = if m >= 12 { 2 * m / 3..m - 3 } else { m / 2..m };
    let pts: Vec<(f64, f64)> = win
        .filter(|&k| f[k].abs() > 1e3 * f64::MIN_POSITIVE)
        .map(|k| (r[k], f[k].abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Interpolates w(s) = e^{p r} f(r) in s = e^{-r} from the nearest samples.
struct TailInterpolant {
    s: Vec<f64>,
    w: Vec<f64>,
    width: usize,
}

impl TailInterpolant {
    fn new(r: &[f64], f: &[f64], p: f64) -> Self {
        let s: Vec<f64> = r.iter().map(|r| (-r).exp()).collect();
        let w = r.iter().zip(f).map(|(r, f)| f * (p * r).exp()).collect();
        TailInterpolant {
            s,
            w,
            width: 8.min(r.len()),
        }
    }

    fn eval(&self, r: f64) -> f64 {
        let x = (-r).exp();
        // s decreases with the index
        let pos = self.s.partition_point(|&s| s > x);
        let m = self.width;
        let start = pos.saturating_sub(m / 2).min(self.s.len() - m);
        let nodes = &self.s[start..start + m];
        let c = fornberg(x, nodes, 0);
        c[0].iter()
            .zip(&self.w[start..start + m])
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Samples of the variation-of-parameters solution
///
/// ```text
/// u = Λ- e^{-δ- r} + Λ+ e^{-δ+ r}
///     - 1/(δ+ - δ-) (e^{-δ- r} ∫_r^∞ e^{δ- s} f ds - e^{-δ+ r} ∫_r^∞ e^{δ+ s} f ds).
/// ```
///
/// Tail integrals use Gauss-Legendre panels on a local interpolant of
/// e^{p r} f in e^{-r}; beyond the last radius f is continued by its fitted
/// exponential tail.
pub fn radial_ode_solve(
    problem: &OdeProblem,
    lambda_minus: f64,
    lambda_plus: f64,
) -> Result<Vec<f64>> {
    let (dm, dp) = problem.roots();
    let r = &problem.r;
    let f = &problem.f;
    let m = r.len();
    let rate = tail_rate(r, f);
    if let Some(rate) = rate {
        if !(rate > dp) {
            return Err(Error::DivergentTail { rate, required: dp });
        }
    }
    let p = rate.map_or(0.0, |k| (k - 0.5).floor().clamp(0.0, MAX_WEIGHT));
    let interp = TailInterpolant::new(r, f, p);
    // the continuation uses the local rate between the two outermost samples
    let outer = if f[m - 1] != 0.0 && f[m - 2] != 0.0 && f[m - 1].signum() == f[m - 2].signum() {
        Some((f[m - 2] / f[m - 1]).ln() / (r[m - 1] - r[m - 2]))
    } else {
        rate
    };
    let tail = |delta: f64| match outer.filter(|k| *k > delta) {
        // ∫_{Rmax}^∞ e^{δ(s - Rmax)} f(Rmax) e^{-κ(s - Rmax)} ds
        Some(k) => f[m - 1] / (k - delta),
        None => 0.0,
    };
    // J(r) = ∫_r^∞ e^{δ(s - r)} f(s) ds for both roots, swept inwards
    let sweep = |delta: f64| {
        let mut out = vec![0.0; m];
        out[m - 1] = tail(delta);
        for k in (0..m - 1).rev() {
            let (a, b) = (r[k], r[k + 1]);
            let panels = ((b - a) / 0.125).ceil().max(1.0) as usize;
            let h = (b - a) / panels as f64;
            let mut acc = 0.0;
            for q in 0..panels {
                let (lo, hi) = (a + q as f64 * h, a + (q + 1) as f64 * h);
                let (c, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                for (x, w) in GL_X.iter().zip(&GL_W) {
                    for t in [c - half * x, c + half * x] {
                        acc += w * half * interp.eval(t) * ((delta - p) * t - delta * a).exp();
                    }
                }
            }
            out[k] = acc + (delta * (b - a)).exp() * out[k + 1];
        }
        out
    };
    let jm = sweep(dm);
    let jp = sweep(dp);
    Ok((0..m)
        .map(|k| {
            let rk = r[k];
            lambda_minus * (-dm * rk).exp() + lambda_plus * (-dp * rk).exp()
                - (jm[k] - jp[k]) / (dp - dm)
        })
        .collect())
}

/// Result of a weighted exterior solve.
#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub field: Field,
    /// sup e^{δ r} |P u - rhs| over interior nodes.
    pub residual: f64,
    /// Krylov iterations (0 for direct solves).
    pub iterations: usize,
}

/// Boundary data and Krylov controls.
#[derive(Debug, Clone, Default)]
pub struct EllipticOptions {
    /// Dirichlet values at r = R0 (angular node values per component);
    /// homogeneous when absent.
    pub inner: Option<Vec<f64>>,
    /// Relative tolerance of the vector solve; defaults to 1e-11.
    pub tol: Option<f64>,
    /// Iteration cap of the vector solve; defaults to 300.
    pub max_iter: Option<usize>,
    /// Absolute tolerance on the weighted residual of a coupled solve.
    pub atol: Option<f64>,
    /// Solve on the harmonics below the truncation degree: the right-hand
    /// side and the operator are projected there instead of rejecting an
    /// unresolved right-hand side.
    pub truncate: bool,
}

fn check_window(delta: f64, n: usize) -> Result<()> {
    if !(delta > -1.0 && delta < n as f64) {
        return Err(Error::InvalidParameter(format!(
            "weight δ = {delta} outside the Fredholm window (-1, {n})"
        )));
    }
    Ok(())
}

fn check_rhs(rhs: &Field, kind: Kind) -> Result<()> {
    if rhs.kind() != kind {
        return Err(Error::InvalidParameter(format!(
            "expected a {kind:?} right-hand side"
        )));
    }
    let tail = spectral_tail(rhs);
    let threshold = rhs.grid().options().tail_threshold;
    if tail > threshold {
        return Err(Error::Resolution { tail, threshold });
    }
    Ok(())
}

/// Derivative weight used by the discrete operators for a solution in C_δ.
fn solution_weight(delta: f64) -> f64 {
    delta.floor().clamp(0.0, MAX_WEIGHT)
}

/// Weights c_i on the outermost nodes with Σ c_i w_i = lim_{s→0} w for
/// w = e^{δ r} u, extrapolating the smooth profile s^{-p} u to s = 0.
fn outer_row(grid: &Grid, delta: f64) -> (usize, Vec<f64>) {
    let nr = grid.nr();
    let p = solution_weight(delta);
    let m = (grid.options().fd_order + 1).min(nr);
    let start = nr - m;
    let nodes = &grid.s()[start..];
    let c = fornberg(0.0, nodes, 0);
    // s^{-p} u = s^{δ-p} w
    (
        start,
        c[0].iter()
            .zip(nodes)
            .map(|(c, s)| c * s.powf(delta - p))
            .collect(),
    )
}

/// Per-degree LU factors of the weighted radial operators of Δ - n,
/// conjugated by S = diag(e^{δ r}), with a Dirichlet row at R0 and the
/// vanishing of e^{δ r} u at s = 0 as the last row.
struct ScalarBlocks {
    grid: Arc<Grid>,
    delta: f64,
    lu: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl ScalarBlocks {
    fn new(grid: &Arc<Grid>, delta: f64) -> Result<ScalarBlocks> {
        let n = grid.n() as f64;
        let nr = grid.nr();
        let d = grid.radial_derivative_matrix(solution_weight(delta));
        let d2 = &d * &d;
        let sc: Vec<f64> = grid.r().iter().map(|r| (delta * r).exp()).collect();
        let sb = grid.sphere();
        let (ostart, orow) = outer_row(grid, delta);
        let lu = crate::par::map_range(grid.l() + 1, |l| {
            let lam = sb.eigenvalue(l);
            let mut m = DMatrix::zeros(nr, nr);
            for k in 0..nr {
                let r = grid.r()[k];
                let (sh, ch) = (r.sinh(), r.cosh());
                if k == 0 {
                    m[(k, k)] = 1.0;
                    continue;
                }
                if k == nr - 1 {
                    for (i, c) in orow.iter().enumerate() {
                        m[(k, ostart + i)] = *c;
                    }
                    continue;
                }
                for c in 0..nr {
                    m[(k, c)] = (d2[(k, c)] + (n - 1.0) * ch / sh * d[(k, c)]) * sc[k] / sc[c];
                }
                m[(k, k)] -= lam / (sh * sh) + n;
            }
            m.lu()
        });
        for (l, f) in lu.iter().enumerate() {
            if !f.is_invertible() {
                return Err(Error::Singular(format!("radial block of degree {l}")));
            }
        }
        Ok(ScalarBlocks {
            grid: grid.clone(),
            delta,
            lu,
        })
    }

    /// Solves the stacked profiles `data` (blocks of nr x na) in place. The
    /// inner and outer shells of `data` hold the boundary row values.
    fn solve(&self, data: &mut [f64]) {
        let grid = &self.grid;
        let (nr, na) = (grid.nr(), grid.na());
        let sb = grid.sphere();
        let degrees = sb.coef_degree();
        let sc: Vec<f64> = grid.r().iter().map(|r| (self.delta * r).exp()).collect();
        crate::par::for_each_chunk_mut(data, nr * na, |_, block| {
            let x = DMatrixView::from_slice(block, na, nr);
            let coef = sb.analysis() * x;
            let mut sol = DMatrix::zeros(coef.nrows(), nr);
            for (l, lu) in self.lu.iter().enumerate() {
                let rows: Vec<usize> = (0..degrees.len()).filter(|&i| degrees[i] == l).collect();
                if rows.is_empty() {
                    continue;
                }
                let mut b = DMatrix::zeros(nr, rows.len());
                for (c, &i) in rows.iter().enumerate() {
                    for k in 0..nr {
                        b[(k, c)] = coef[(i, k)] * sc[k];
                    }
                }
                let y = lu.solve(&b).expect("factor checked invertible");
                for (c, &i) in rows.iter().enumerate() {
                    for k in 0..nr {
                        sol[(i, k)] = y[(k, c)] / sc[k];
                    }
                }
            }
            let back = sb.synthesis() * sol;
            block.copy_from_slice(back.as_slice());
        });
    }
}

/// Zeroes boundary shells and writes inner data.
fn impose_boundary(grid: &Grid, data: &mut [f64], inner: Option<&[f64]>) {
    let (nr, na) = (grid.nr(), grid.na());
    for (c, block) in data.chunks_mut(nr * na).enumerate() {
        block[(nr - 1) * na..].iter_mut().for_each(|x| *x = 0.0);
        match inner {
            Some(v) => block[..na].copy_from_slice(&v[c * na..(c + 1) * na]),
            None => block[..na].iter_mut().for_each(|x| *x = 0.0),
        }
    }
}

fn inner_data(opts: &EllipticOptions, grid: &Grid, ncomp: usize) -> Result<Option<Vec<f64>>> {
    match &opts.inner {
        Some(v) if v.len() != ncomp * grid.na() => Err(Error::InvalidParameter(format!(
            "inner data must hold {} values",
            ncomp * grid.na()
        ))),
        other => Ok(other.clone()),
    }
}

/// Δ v - n v with respect to b.
pub fn scalar_model(v: &Field) -> Result<Field> {
    let geo = Geometry::background(v.grid());
    Ok(geo.laplacian(v)?.axpy(-(v.grid().n() as f64), v))
}

/// Δ_L Z = div L̊_Z b.
pub fn vector_model(z: &Field) -> Result<Field> {
    Geometry::background(z.grid()).vector_laplacian(z)
}

fn interior_residual(res: &Field, delta: f64) -> f64 {
    let grid = res.grid();
    let (nr, na) = (grid.nr(), grid.na());
    let mut r = res.clone();
    for block in r.data_mut().chunks_mut(nr * na) {
        block[..na].iter_mut().for_each(|x| *x = 0.0);
        block[(nr - 1) * na..].iter_mut().for_each(|x| *x = 0.0);
    }
    weighted_sup_norm(&r, delta)
}

/// Solves (Δ - n) v = rhs with Dirichlet data, per spherical-harmonic degree.
pub fn solve_scalar(rhs: &Field, delta: f64) -> Result<EllipticSolution> {
    solve_scalar_with(rhs, delta, &EllipticOptions::default())
}

pub fn solve_scalar_with(
    rhs: &Field,
    delta: f64,
    opts: &EllipticOptions,
) -> Result<EllipticSolution> {
    let grid = rhs.grid();
    check_window(delta, grid.n())?;
    check_rhs(rhs, Kind::Scalar)?;
    let inner = inner_data(opts, grid, 1)?;
    let blocks = ScalarBlocks::new(grid, delta)?;
    let mut data = rhs.data().to_vec();
    impose_boundary(grid, &mut data, inner.as_deref());
    blocks.solve(&mut data);
    let field = Field::from_data(grid, Kind::Scalar, solution_weight(delta), data)?;
    let residual = interior_residual(&scalar_model(&field)?.sub(rhs), delta);
    log::debug!("scalar solve δ={delta}: residual {residual:.3e}");
    Ok(EllipticSolution {
        field,
        residual,
        iterations: 0,
    })
}

/// Solves Δ_L Z = rhs with Dirichlet data by right-preconditioned GMRES;
/// the preconditioner applies the per-degree inverse of Δ - n to every
/// frame component.
pub fn solve_vector(rhs: &Field, delta: f64) -> Result<EllipticSolution> {
    solve_vector_with(rhs, delta, &EllipticOptions::default())
}

pub fn solve_vector_with(
    rhs: &Field,
    delta: f64,
    opts: &EllipticOptions,
) -> Result<EllipticSolution> {
    let grid = rhs.grid().clone();
    let n = grid.n();
    check_window(delta, n)?;
    check_rhs(rhs, Kind::OneForm)?;
    let inner = inner_data(opts, &grid, n)?;
    let blocks = ScalarBlocks::new(&grid, delta)?;
    let weight = solution_weight(delta);
    let sc: Vec<f64> = {
        let na = grid.na();
        let per: Vec<f64> = grid.r().iter().map(|r| (delta * r).exp()).collect();
        (0..n * grid.npts())
            .map(|i| per[(i % grid.npts()) / na])
            .collect()
    };
    // unknowns and equations are scaled by e^{δ r}
    let (ostart, orow) = outer_row(&grid, delta);
    let apply = |w: &[f64]| -> Result<Vec<f64>> {
        let z: Vec<f64> = w.iter().zip(&sc).map(|(a, s)| a / s).collect();
        let zf = Field::from_data(&grid, Kind::OneForm, weight, z)?;
        let lz = vector_model(&zf)?.into_data();
        let mut out: Vec<f64> = lz.iter().zip(&sc).map(|(a, s)| a * s).collect();
        let (nr, na) = (grid.nr(), grid.na());
        for (c, block) in out.chunks_mut(nr * na).enumerate() {
            let src = &w[c * nr * na..(c + 1) * nr * na];
            block[..na].copy_from_slice(&src[..na]);
            for j in 0..na {
                block[(nr - 1) * na + j] = orow
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * src[(ostart + i) * na + j])
                    .sum();
            }
        }
        Ok(out)
    };
    let precond = |w: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = w.iter().zip(&sc).map(|(a, s)| a / s).collect();
        blocks.solve(&mut z);
        z.iter().zip(&sc).map(|(a, s)| a * s).collect()
    };
    let mut b = rhs.data().to_vec();
    impose_boundary(&grid, &mut b, inner.as_deref());
    let b: Vec<f64> = b.iter().zip(&sc).map(|(a, s)| a * s).collect();
    let tol = opts.tol.unwrap_or(1e-11);
    let max_iter = opts.max_iter.unwrap_or(300);
    let (w, iterations) = gmres(&apply, &precond, &b, tol, max_iter, 60)?;
    let z: Vec<f64> = w.iter().zip(&sc).map(|(a, s)| a / s).collect();
    let field = Field::from_data(&grid, Kind::OneForm, weight, z)?;
    let residual = interior_residual(&vector_model(&field)?.sub(rhs), delta);
    log::debug!("vector solve δ={delta}: {iterations} iterations, residual {residual:.3e}");
    Ok(EllipticSolution {
        field,
        residual,
        iterations,
    })
}

/// Solution of a coupled scalar and 1-form system.
#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub v: Field,
    pub z: Field,
    /// sup e^{δ r}|residual| over interior nodes, both slots.
    pub residual: f64,
    pub iterations: usize,
    /// The Krylov solve stalled above its tolerance; the result is the
    /// least-squares iterate.
    pub rank_deficient: bool,
    /// Relative Krylov residual reached.
    pub krylov_residual: f64,
}

/// A linear map on pairs (v, Z) of a scalar and a 1-form.
pub type PairOperator<'a> = dyn Fn(&Field, &Field) -> Result<(Field, Field)> + 'a;

/// Solves A(v, Z) = (f, X) with Dirichlet data at R0 and vanishing weighted
/// limits at s = 0 by right-preconditioned GMRES. The preconditioner applies
/// the per-degree inverse of Δ - n to every component; `scalar_scale` is the
/// factor c with first slot of A ≈ c(Δ - n).
pub fn solve_system(
    apply: &PairOperator,
    rhs: (&Field, &Field),
    delta: f64,
    scalar_scale: f64,
    opts: &EllipticOptions,
) -> Result<SystemSolution> {
    let grid = rhs.0.grid().clone();
    let n = grid.n();
    check_window(delta, n)?;
    if !opts.truncate {
        check_rhs(rhs.0, Kind::Scalar)?;
        check_rhs(rhs.1, Kind::OneForm)?;
    } else if rhs.0.kind() != Kind::Scalar || rhs.1.kind() != Kind::OneForm {
        return Err(Error::InvalidParameter(
            "expected a scalar and a 1-form right-hand side".into(),
        ));
    }
    if !(scalar_scale != 0.0 && scalar_scale.is_finite()) {
        return Err(Error::InvalidParameter(
            "scalar scale must be finite and nonzero".into(),
        ));
    }
    let inner = inner_data(opts, &grid, n + 1)?;
    let blocks = ScalarBlocks::new(&grid, delta)?;
    let weight = solution_weight(delta);
    let (nr, na, npts) = (grid.nr(), grid.na(), grid.npts());
    let per: Vec<f64> = grid.r().iter().map(|r| (delta * r).exp()).collect();
    let sc: Vec<f64> = (0..(n + 1) * npts).map(|i| per[(i % npts) / na]).collect();
    let (ostart, orow) = outer_row(&grid, delta);
    let unscale = |w: &[f64]| -> Vec<f64> { w.iter().zip(&sc).map(|(a, s)| a / s).collect() };
    let fields = |x: Vec<f64>| -> Result<(Field, Field)> {
        let (a, b) = x.split_at(npts);
        Ok((
            Field::from_data(&grid, Kind::Scalar, weight, a.to_vec())?,
            Field::from_data(&grid, Kind::OneForm, weight, b.to_vec())?,
        ))
    };
    let stack = |a: &Field, b: &Field| -> Vec<f64> {
        let mut out: Vec<f64> = a.data().iter().map(|x| x / scalar_scale).collect();
        out.extend_from_slice(b.data());
        out
    };
    let project = |w: &[f64]| -> Vec<f64> {
        let mut x = w.to_vec();
        if opts.truncate {
            strip_top_rows(&grid, &mut x);
        }
        x
    };
    let op = |w: &[f64]| -> Result<Vec<f64>> {
        let low = project(w);
        let (v, z) = fields(unscale(&low))?;
        // Krylov vectors are not data; only the right-hand side is checked
        let (a, b) = without_resolution_check(|| apply(&v, &z))?;
        let mut out: Vec<f64> = project(&stack(&a, &b))
            .iter()
            .zip(&sc)
            .map(|(x, s)| x * s)
            .collect();
        if opts.truncate {
            // top harmonics are carried by the identity
            for ((o, x), l) in out.iter_mut().zip(w).zip(&low) {
                *o += x - l;
            }
        }
        for (c, block) in out.chunks_mut(nr * na).enumerate() {
            let src = &w[c * nr * na..(c + 1) * nr * na];
            block[..na].copy_from_slice(&src[..na]);
            for j in 0..na {
                block[(nr - 1) * na + j] = orow
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * src[(ostart + i) * na + j])
                    .sum();
            }
        }
        Ok(out)
    };
    let precond = |w: &[f64]| -> Vec<f64> {
        let mut z = unscale(w);
        blocks.solve(&mut z);
        z.iter().zip(&sc).map(|(a, s)| a * s).collect()
    };
    let mut b = project(&stack(rhs.0, rhs.1));
    impose_boundary(&grid, &mut b, inner.as_deref());
    let b: Vec<f64> = b.iter().zip(&sc).map(|(a, s)| a * s).collect();
    let max_iter = opts.max_iter.unwrap_or(300);
    let bnorm = dot(&b, &b).sqrt();
    let mut tol = opts.tol.unwrap_or(1e-11);
    if let (Some(atol), true) = (opts.atol, bnorm > 0.0) {
        tol = tol.max(atol / bnorm);
    }
    let run = gmres_run(&op, &precond, &b, tol, max_iter, 60)?;
    let stalled = run.history.last().copied().unwrap_or(0.0);
    if !run.converged && !(stalled < 1e-6) {
        return Err(Error::NonConvergence {
            iterations: run.iterations,
            residual: stalled,
            history: run.history,
        });
    }
    let rank_deficient = !run.converged;
    if rank_deficient {
        log::warn!(
            "coupled solve stalled at relative residual {stalled:.3e}; possible rank deficiency"
        );
    }
    let (w, iterations) = (run.x, run.iterations);
    let krylov_residual = if bnorm == 0.0 {
        0.0
    } else {
        let r = op(&w)?;
        let d: Vec<f64> = r.iter().zip(&b).map(|(a, b)| a - b).collect();
        dot(&d, &d).sqrt() / bnorm
    };
    let (v, z) = fields(unscale(&project(&w)))?;
    let (a, bb) = without_resolution_check(|| apply(&v, &z))?;
    let residual =
        interior_residual(&a.sub(rhs.0), delta).max(interior_residual(&bb.sub(rhs.1), delta));
    log::debug!("coupled solve δ={delta}: {iterations} iterations, residual {residual:.3e}");
    Ok(SystemSolution {
        v,
        z,
        residual,
        iterations,
        rank_deficient,
        krylov_residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted right-preconditioned GMRES. Returns the solution and the
/// number of iterations.
pub fn gmres(
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<(Vec<f64>, usize)> {
    let run = gmres_run(apply, precond, b, tol, max_iter, restart)?;
    if run.converged {
        Ok((run.x, run.iterations))
    } else {
        Err(Error::NonConvergence {
            iterations: run.iterations,
            residual: run.history.last().copied().unwrap_or(f64::NAN),
            history: run.history,
        })
    }
}

struct GmresRun {
    x: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
    converged: bool,
}

fn gmres_run(
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<GmresRun> {
    let len = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; len];
    if bnorm == 0.0 {
        return Ok(GmresRun {
            x,
            iterations: 0,
            history: vec![0.0],
            converged: true,
        });
    }
    let mut history = Vec::new();
    let mut total = 0;
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = dot(&r, &r).sqrt();
        history.push(beta / bnorm);
        if beta <= tol * bnorm {
            return Ok(GmresRun {
                x,
                iterations: total,
                history,
                converged: true,
            });
        }
        if total >= max_iter {
            return Ok(GmresRun {
                x,
                iterations: total,
                history,
                converged: false,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..restart {
            let z = precond(&v[j]);
            let mut w = apply(&z)?;
            zs.push(z);
            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                h[(i, j)] = hij;
                w.iter_mut().zip(&v[i]).for_each(|(a, b)| *a -= hij * b);
            }
            let hn = dot(&w, &w).sqrt();
            h[(j + 1, j)] = hn;
            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let den = (h[(j, j)].powi(2) + hn * hn).sqrt();
            cs[j] = h[(j, j)] / den;
            sn[j] = hn / den;
            h[(j, j)] = den;
            h[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;
            total += 1;
            let res = g[j + 1].abs() / bnorm;
            log::trace!("gmres {total}: {res:.3e}");
            if res <= tol || total >= max_iter || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let s: f64 = (i + 1..steps).map(|k| h[(i, k)] * y[k]).sum();
            y[i] = (g[i] - s) / h[(i, i)];
        }
        for (yi, z) in y.iter().zip(&zs) {
            x.iter_mut().zip(z).for_each(|(a, b)| *a += yi * b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_small_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let apply = |x: &[f64]| -> Result<Vec<f64>> { Ok((0..3).map(|i| dot(&a[i], x)).collect()) };
        let id = |x: &[f64]| x.to_vec();
        let (x, _) = gmres(&apply, &id, &[1.0, 2.0, 3.0], 1e-14, 10, 3).unwrap();
        let ax = apply(&x).unwrap();
        assert!(ax
            .iter()
            .zip([1.0, 2.0, 3.0])
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn roots_are_ordered() {
        let p = OdeProblem::new(2.0, -3.0, vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]).unwrap();
        assert_eq!(p.roots(), (-1.0, 3.0));
        assert!(OdeProblem::new(0.0, 1.0, vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]).is_err());
    }
}
