//! Background (hyperbolic) tensor calculus in the Cartesian b-orthonormal frame.
//!
//! For a tensor T with frame components T_{b_1..b_q} the covariant derivative
//! is
//!
//! ```text
//! (∇T)_{a b_1..b_q} = ω_a ∂_r T_{b..} + (1/sinh r) (grad_S T_{b..})_a
//!     + tanh(r/2) Σ_i ( δ_{a b_i} T_{..ω..} - ω_{b_i} T_{..a..} )
//! ```
//!
//! where grad_S is the gradient on the unit sphere written in ambient
//! components and `T_{..ω..}` contracts slot i with ω. The derivative index
//! comes first.

use std::cell::Cell;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::field::{Field, Kind};
use crate::grid::Grid;

/// Columns per GEMM block when transforming many shells at once.
const BLOCK: usize = 96;

/// Sphere gradients of `rows` stacked angular profiles (each of length na).
/// Returns n blocks (one per ambient axis) laid out like the input, plus the
/// relative spectral amplitude carried at the truncation degree.
pub(crate) fn sphere_gradient(grid: &Grid, data: &[f64]) -> (Vec<f64>, f64) {
    let sb = grid.sphere();
    let na = sb.len();
    let n = grid.n();
    let rows = data.len() / na;
    let top: Vec<usize> = sb
        .coef_degree()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == sb.degree())
        .map(|(i, _)| i)
        .collect();
    let nblocks = rows.div_ceil(BLOCK);
    let parts = crate::par::map_range(nblocks, |b| {
        let c0 = b * BLOCK;
        let c1 = ((b + 1) * BLOCK).min(rows);
        let x = DMatrixView::from_slice(&data[c0 * na..c1 * na], na, c1 - c0);
        let coef: DMatrix<f64> = sb.analysis() * x;
        let total = coef.norm_squared();
        let tail: f64 = top.iter().map(|&i| coef.row(i).norm_squared()).sum();
        let grads: Vec<DMatrix<f64>> = (0..n).map(|a| sb.gradient(a) * &coef).collect();
        (grads, tail, total)
    });
    let mut out = vec![0.0; n * rows * na];
    let (mut tail, mut total) = (0.0, 0.0);
    for (b, (grads, t, tot)) in parts.into_iter().enumerate() {
        let c0 = b * BLOCK;
        tail += t;
        total += tot;
        for (a, g) in grads.iter().enumerate() {
            let dst = &mut out[a * rows * na + c0 * na..a * rows * na + c0 * na + g.len()];
            dst.copy_from_slice(g.as_slice());
        }
    }
    // round-off sized tails are not a resolution problem
    let rel = if total > 0.0 && (tail / rows as f64).sqrt() > 1e-11 {
        (tail / total).sqrt()
    } else {
        0.0
    };
    (out, rel)
}

thread_local! {
    static UNCHECKED: Cell<usize> = const { Cell::new(0) };
}

struct Unchecked;

impl Drop for Unchecked {
    fn drop(&mut self) {
        UNCHECKED.with(|c| c.set(c.get() - 1));
    }
}

/// Runs `f` with the spectral-tail check of derivatives switched off on
/// this thread.
pub(crate) fn without_resolution_check<T>(f: impl FnOnce() -> T) -> T {
    UNCHECKED.with(|c| c.set(c.get() + 1));
    let _guard = Unchecked;
    f()
}

fn check_resolution(grid: &Grid, tail: f64) -> Result<()> {
    let threshold = grid.options().tail_threshold;
    if tail > threshold && UNCHECKED.with(|c| c.get()) == 0 {
        Err(Error::Resolution { tail, threshold })
    } else {
        Ok(())
    }
}

/// Removes the truncation-degree harmonics from every angular profile.
pub fn strip_top_degree(f: &Field) -> Field {
    let mut out = f.clone();
    strip_top_rows(f.grid(), out.data_mut());
    out
}

/// In-place version of [`strip_top_degree`] on stacked angular profiles.
pub(crate) fn strip_top_rows(grid: &Grid, data: &mut [f64]) {
    let sb = grid.sphere();
    let na = sb.len();
    let top: Vec<usize> = (0..sb.ncoef())
        .filter(|&i| sb.coef_degree()[i] == sb.degree())
        .collect();
    if top.is_empty() {
        return;
    }
    let synth = sb.synthesis().select_columns(&top);
    let anal = sb.analysis().select_rows(&top);
    crate::par::for_each_chunk_mut(data, na, |_, row| {
        let x = nalgebra::DVector::from_column_slice(row);
        let c = &anal * &x;
        let y = x - &synth * c;
        row.copy_from_slice(y.as_slice());
    });
}

/// Relative spectral amplitude of a field at the truncation degree.
pub fn spectral_tail(f: &Field) -> f64 {
    sphere_gradient(f.grid(), f.data()).1
}

/// ∇^b of a field; result has one more covariant slot (first index).
pub fn covariant_derivative(f: &Field) -> Result<Field> {
    let (out, tail) = covariant_derivative_raw(f);
    check_resolution(f.grid(), tail)?;
    Ok(out)
}

/// Covariant derivative without the resolution check.
pub(crate) fn covariant_derivative_raw(f: &Field) -> (Field, f64) {
    let grid = f.grid().clone();
    let n = grid.n();
    let (nr, na, npts) = (grid.nr(), grid.na(), grid.npts());
    let q = f.rank();
    let nc = f.ncomp();
    let mut dr = vec![0.0; f.data().len()];
    grid.radial_derivative(f.data(), na, f.weight(), &mut dr);
    let (grad, tail) = sphere_gradient(&grid, f.data());
    let inv_sinh: Vec<f64> = grid.r().iter().map(|r| 1.0 / r.sinh()).collect();
    let th: Vec<f64> = grid.r().iter().map(|r| (0.5 * r).tanh()).collect();
    let strides: Vec<usize> = (0..q).map(|i| n.pow((q - 1 - i) as u32)).collect();
    let data = f.data();
    let mut out = vec![0.0; n * nc * npts];
    crate::par::for_each_chunk_mut(&mut out, npts, |oc, dst| {
        let a = oc / nc;
        let c = oc % nc;
        let digits: Vec<usize> = strides.iter().map(|s| (c / s) % n).collect();
        for k in 0..nr {
            for j in 0..na {
                let p = k * na + j;
                let w = grid.omega(j);
                let mut v = w[a] * dr[c * npts + p] + inv_sinh[k] * grad[oc * npts + p];
                if q > 0 {
                    let mut corr = 0.0;
                    for (&bi, &st) in digits.iter().zip(&strides) {
                        let base = c - bi * st;
                        if a == bi {
                            for (d, wd) in w.iter().enumerate() {
                                corr += wd * data[(base + d * st) * npts + p];
                            }
                        }
                        corr -= w[bi] * data[(base + a * st) * npts + p];
                    }
                    v += th[k] * corr;
                }
                dst[p] = v;
            }
        }
    });
    let field = Field::from_data(&grid, Kind::of_rank(q + 1), f.weight(), out)
        .expect("covariant derivative produced invalid data");
    (field, tail)
}

/// Gradient 1-form of a scalar.
pub fn gradient(f: &Field) -> Result<Field> {
    assert_eq!(f.rank(), 0, "gradient needs a scalar");
    covariant_derivative(f)
}

/// Hessian ∇∇f (symmetrized).
pub fn hessian(f: &Field) -> Result<Field> {
    assert_eq!(f.rank(), 0, "hessian needs a scalar");
    let d = covariant_derivative(f)?;
    Ok(covariant_derivative(&d)?.into_sym())
}

/// Δf = tr_b Hess f.
pub fn laplacian(f: &Field) -> Result<Field> {
    Ok(hessian(f)?.trace_b())
}

/// Contraction of ∇T over the derivative index and the first slot of T.
pub fn divergence(t: &Field) -> Result<Field> {
    assert!(t.rank() >= 1, "divergence needs rank >= 1");
    Ok(contract_first_two(&covariant_derivative(t)?))
}

/// Traces the first two slots of a tensor of rank >= 2 with respect to b.
pub fn contract_first_two(t: &Field) -> Field {
    let grid = t.grid();
    let n = grid.n();
    let npts = grid.npts();
    let q = t.rank();
    let rest = n.pow((q - 2) as u32);
    let mut out = vec![0.0; rest * npts];
    for a in 0..n {
        for c in 0..rest {
            let src = t.comp((a * n + a) * rest + c);
            for (o, x) in out[c * npts..(c + 1) * npts].iter_mut().zip(src) {
                *o += x;
            }
        }
    }
    Field::from_data(grid, Kind::of_rank(q - 2), t.weight(), out).expect("contraction")
}

/// (L_Y b)_ab = ∇_a Y_b + ∇_b Y_a.
pub fn lie_derivative(y: &Field) -> Result<Field> {
    assert_eq!(y.rank(), 1, "lie_derivative needs a 1-form");
    let d = covariant_derivative(y)?;
    let n = y.grid().n();
    let npts = y.grid().npts();
    let mut out = vec![0.0; n * n * npts];
    for a in 0..n {
        for b in 0..n {
            let (x, z) = (d.comp(a * n + b), d.comp(b * n + a));
            for ((o, x), z) in out[(a * n + b) * npts..(a * n + b + 1) * npts]
                .iter_mut()
                .zip(x)
                .zip(z)
            {
                *o = x + z;
            }
        }
    }
    Field::from_data(y.grid(), Kind::SymTensor, y.weight(), out)
}

/// Trace-free part of L_Y b: L_Y b - (2/n)(div Y) b.
pub fn conformal_killing(y: &Field) -> Result<Field> {
    let l = lie_derivative(y)?;
    let n = y.grid().n() as f64;
    let tr = l.trace_b();
    Ok(l.sub(&tr.scale(1.0 / n).times_metric_b()))
}

/// Δ_L Y = div L̊_Y b, composed from the first-order operators.
pub fn vector_laplacian(y: &Field) -> Result<Field> {
    divergence(&conformal_killing(y)?)
}

/// Δ_L Y assembled as ∇^*∇-form on the Einstein background:
/// tr ∇∇Y + ((n-2)/n) d(div Y) - (n-1) Y.
pub fn vector_laplacian_direct(y: &Field) -> Result<Field> {
    assert_eq!(y.rank(), 1);
    let n = y.grid().n() as f64;
    let dy = covariant_derivative(y)?;
    let rough = contract_first_two(&covariant_derivative(&dy)?);
    let div = contract_first_two(&dy);
    let grad_div = covariant_derivative(&div)?;
    Ok(rough.axpy((n - 2.0) / n, &grad_div).axpy(-(n - 1.0), y))
}
