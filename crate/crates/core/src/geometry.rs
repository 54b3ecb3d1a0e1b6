//! Riemannian geometry of g = b + e relative to the hyperbolic background.
//!
//! With the difference tensor C^k_ij = Γ(g)^k_ij - Γ(b)^k_ij, computed from
//! background derivatives of e,
//!
//! ```text
//! C^k_ij = ½ g^{kl} (∇_i e_jl + ∇_j e_il - ∇_l e_ij)
//! Ric(g)_ij = -(n-1) b_ij + ∇_k C^k_ij - ∇_j C^k_ik + C^k_kl C^l_ij - C^k_jl C^l_ik
//! ```
//!
//! The inverse metric is kept as a deviation g^{-1} - b = -(b + e)^{-1} e and
//! the scalar curvature as Scal + n(n-1), so that nothing cancels at large r.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::calculus::{contract_first_two, covariant_derivative};
use crate::error::{Error, Result};
use crate::field::{pointwise, Field, Kind};
use crate::grid::Grid;

#[derive(Debug, Clone)]
pub struct Geometry {
    grid: Arc<Grid>,
    g: Field,
    ginv: Field,
    kdev: Field,
    c: Option<Field>,
    ric: Field,
    scal_dev: Field,
    volume: Field,
}

impl Geometry {
    /// Geometry of the hyperbolic background itself.
    pub fn background(grid: &Arc<Grid>) -> Geometry {
        let n = grid.n();
        let b = Field::metric_b(grid);
        Geometry {
            grid: grid.clone(),
            g: b.clone(),
            ginv: b.clone(),
            kdev: Field::zeros(grid, Kind::SymTensor),
            c: None,
            ric: b.scale(-(n as f64 - 1.0)),
            scal_dev: Field::zeros(grid, Kind::Scalar),
            volume: Field::constant(grid, 1.0),
        }
    }

    /// Geometry of g = b + e. Fails if g is not positive definite.
    pub fn new(e: &Field) -> Result<Geometry> {
        assert_eq!(e.rank(), 2, "metric deviation must be a 2-tensor");
        let grid = e.grid().clone();
        let n = grid.n();
        let w = e.weight();
        let mut min_eig = f64::INFINITY;
        for p in 0..grid.npts() {
            let m = DMatrix::from_row_slice(n, n, &e.node(p)) + DMatrix::identity(n, n);
            let lam = m.symmetric_eigenvalues().min();
            min_eig = min_eig.min(lam);
        }
        if !(min_eig > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "metric not positive definite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        let g = Field::metric_b(&grid).add(e);
        let kdev = pointwise(&grid, &[e], Kind::SymTensor, w, |_, v, out| {
            let em = DMatrix::from_row_slice(n, n, v[0]);
            let gm = &em + DMatrix::identity(n, n);
            let x = gm.lu().solve(&em).expect("positive definite metric");
            for (o, x) in out.iter_mut().zip(x.transpose().iter()) {
                *o = -x;
            }
        });
        let ginv = Field::metric_b(&grid).add(&kdev).with_weight(0.0);
        let volume = pointwise(&grid, &[&g], Kind::Scalar, 0.0, |_, v, out| {
            out[0] = DMatrix::from_row_slice(n, n, v[0]).determinant().sqrt();
        });
        let de = covariant_derivative(e)?;
        let c = pointwise(&grid, &[&ginv, &de], Kind::Tensor(3), w, |_, v, out| {
            let (gi, d) = (v[0], v[1]);
            let at = |i: usize, j: usize, l: usize| d[(i * n + j) * n + l];
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let low = 0.5 * (at(i, j, l) + at(j, i, l) - at(l, i, j));
                        for k in 0..n {
                            out[(k * n + i) * n + j] += gi[k * n + l] * low;
                        }
                    }
                }
            }
        });
        let dc = covariant_derivative(&c)?;
        let r1 = pointwise(&grid, &[&c, &dc], Kind::SymTensor, w, |_, v, out| {
            let (cc, d) = (v[0], v[1]);
            let cf = |k: usize, i: usize, j: usize| cc[(k * n + i) * n + j];
            let df = |m: usize, k: usize, i: usize, j: usize| d[((m * n + k) * n + i) * n + j];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += df(k, k, i, j) - df(j, k, i, k);
                        for l in 0..n {
                            s += cf(k, k, l) * cf(l, i, j) - cf(k, j, l) * cf(l, i, k);
                        }
                    }
                    out[i * n + j] = s;
                }
            }
        });
        let ric = Field::metric_b(&grid)
            .scale(-(n as f64 - 1.0))
            .add(&r1)
            .with_weight(0.0);
        let scal_dev = pointwise(&grid, &[&kdev, &ginv, &r1], Kind::Scalar, w, |_, v, out| {
            let trk: f64 = (0..n).map(|a| v[0][a * n + a]).sum();
            let contr: f64 = v[1].iter().zip(v[2]).map(|(a, b)| a * b).sum();
            out[0] = -(n as f64 - 1.0) * trk + contr;
        });
        Ok(Geometry {
            grid,
            g,
            ginv,
            kdev,
            c: Some(c),
            ric,
            scal_dev,
            volume,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn n(&self) -> usize {
        self.grid.n()
    }
    pub fn metric(&self) -> &Field {
        &self.g
    }
    pub fn inverse(&self) -> &Field {
        &self.ginv
    }
    /// g^{-1} - b.
    pub fn inverse_deviation(&self) -> &Field {
        &self.kdev
    }
    /// Connection difference C^k_ij (component (k*n + i)*n + j), if g != b.
    pub fn connection(&self) -> Option<&Field> {
        self.c.as_ref()
    }
    pub fn ricci(&self) -> &Field {
        &self.ric
    }
    /// Scal(g) + n(n-1).
    pub fn scalar_curvature_deviation(&self) -> &Field {
        &self.scal_dev
    }
    /// Volume density dμ^g / dμ^b.
    pub fn volume(&self) -> &Field {
        &self.volume
    }
    pub fn is_background(&self) -> bool {
        self.c.is_none()
    }

    /// ∇^g of a scalar, 1-form or 2-tensor (derivative index first).
    pub fn covariant(&self, t: &Field) -> Result<Field> {
        let d = covariant_derivative(t)?;
        let Some(c) = &self.c else { return Ok(d) };
        let n = self.n();
        let q = t.rank();
        if q == 0 {
            return Ok(d);
        }
        assert!(
            q <= 2,
            "covariant derivative with respect to g supports rank <= 2"
        );
        let kind = Kind::of_rank(q + 1);
        Ok(pointwise(
            &self.grid,
            &[&d, c, t],
            kind,
            d.weight(),
            |_, v, out| {
                let (dv, cv, tv) = (v[0], v[1], v[2]);
                out.copy_from_slice(dv);
                let cf = |k: usize, i: usize, j: usize| cv[(k * n + i) * n + j];
                if q == 1 {
                    for i in 0..n {
                        for j in 0..n {
                            let s: f64 = (0..n).map(|k| cf(k, i, j) * tv[k]).sum();
                            out[i * n + j] -= s;
                        }
                    }
                } else {
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                let mut s = 0.0;
                                for l in 0..n {
                                    s += cf(l, i, j) * tv[l * n + k] + cf(l, i, k) * tv[j * n + l];
                                }
                                out[(i * n + j) * n + k] -= s;
                            }
                        }
                    }
                }
            },
        ))
    }

    /// Hess^g f.
    pub fn hessian(&self, f: &Field) -> Result<Field> {
        let d = covariant_derivative(f)?;
        Ok(self.covariant(&d)?.into_sym())
    }

    /// Δ^g f = g^{ij} Hess_ij f.
    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        Ok(self.trace(&self.hessian(f)?))
    }

    /// div^g of a 1-form (scalar) or of a 2-tensor (1-form, contracting the
    /// first slot).
    pub fn divergence(&self, t: &Field) -> Result<Field> {
        let d = self.covariant(t)?;
        if self.c.is_none() {
            return Ok(contract_first_two(&d));
        }
        let n = self.n();
        let q = t.rank();
        let rest = n.pow(q as u32 - 1);
        Ok(pointwise(
            &self.grid,
            &[&self.ginv, &d],
            Kind::of_rank(q - 1),
            d.weight(),
            |_, v, out| {
                for i in 0..n {
                    for j in 0..n {
                        let gij = v[0][i * n + j];
                        for c in 0..rest {
                            out[c] += gij * v[1][(i * n + j) * rest + c];
                        }
                    }
                }
            },
        ))
    }

    /// Index raising with g: X^i = g^{ij} X_j (stored as frame components).
    pub fn raise(&self, x: &Field) -> Field {
        if self.c.is_none() {
            return x.clone();
        }
        let n = self.n();
        pointwise(
            &self.grid,
            &[&self.ginv, x],
            Kind::OneForm,
            x.weight(),
            |_, v, out| {
                for i in 0..n {
                    out[i] = (0..n).map(|j| v[0][i * n + j] * v[1][j]).sum();
                }
            },
        )
    }

    /// Mixed tensor T^i_j = g^{ia} T_aj (rank-2 storage, upper index first).
    pub fn raise_first(&self, t: &Field) -> Field {
        if self.c.is_none() {
            return t.clone();
        }
        let n = self.n();
        pointwise(
            &self.grid,
            &[&self.ginv, t],
            Kind::Tensor(2),
            t.weight(),
            |_, v, out| {
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = (0..n).map(|a| v[0][i * n + a] * v[1][a * n + j]).sum();
                    }
                }
            },
        )
    }

    /// tr^g T = g^{ij} T_ij.
    pub fn trace(&self, t: &Field) -> Field {
        if self.c.is_none() {
            return t.trace_b();
        }
        pointwise(
            &self.grid,
            &[&self.ginv, t],
            Kind::Scalar,
            t.weight(),
            |_, v, out| {
                out[0] = v[0].iter().zip(v[1]).map(|(a, b)| a * b).sum();
            },
        )
    }

    /// ⟨A, B⟩_g = g^{ia} g^{jb} A_ij B_ab.
    pub fn dot2(&self, a: &Field, b: &Field) -> Field {
        if self.c.is_none() {
            return a.dot_b(b);
        }
        let n = self.n();
        pointwise(
            &self.grid,
            &[&self.ginv, a, b],
            Kind::Scalar,
            a.weight() + b.weight(),
            |_, v, out| {
                let (gi, x, y) = (v[0], v[1], v[2]);
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        // (g^{-1} B g^{-1})_{ij}
                        let mut m = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                m += gi[i * n + a] * y[a * n + b] * gi[b * n + j];
                            }
                        }
                        s += x[i * n + j] * m;
                    }
                }
                out[0] = s;
            },
        )
    }

    /// ⟨X, Y⟩_g = g^{ij} X_i Y_j.
    pub fn dot1(&self, x: &Field, y: &Field) -> Field {
        if self.c.is_none() {
            return x.dot_b(y);
        }
        let n = self.n();
        pointwise(
            &self.grid,
            &[&self.ginv, x, y],
            Kind::Scalar,
            x.weight() + y.weight(),
            |_, v, out| {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += v[0][i * n + j] * v[1][i] * v[2][j];
                    }
                }
                out[0] = s;
            },
        )
    }

    /// |X|_g.
    pub fn norm1(&self, x: &Field) -> Field {
        self.dot1(x, x).map(x.weight(), |s| s.max(0.0).sqrt())
    }

    /// |T|_g of a 2-tensor.
    pub fn norm2(&self, t: &Field) -> Field {
        self.dot2(t, t).map(t.weight(), |s| s.max(0.0).sqrt())
    }

    /// (A∘B)_ij = g^{kl} A_ik B_jl.
    pub fn compose(&self, a: &Field, b: &Field) -> Field {
        let n = self.n();
        pointwise(
            &self.grid,
            &[&self.ginv, a, b],
            Kind::SymTensor,
            a.weight() + b.weight(),
            |_, v, out| {
                let (gi, x, y) = (v[0], v[1], v[2]);
                for i in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for k in 0..n {
                            for l in 0..n {
                                s += gi[k * n + l] * x[i * n + k] * y[j * n + l];
                            }
                        }
                        out[i * n + j] = s;
                    }
                }
            },
        )
    }

    /// (L_X g)_ij = ∇_i X_j + ∇_j X_i for a 1-form X.
    pub fn lie(&self, x: &Field) -> Result<Field> {
        let d = self.covariant(x)?;
        let n = self.n();
        Ok(pointwise(
            &self.grid,
            &[&d],
            Kind::SymTensor,
            d.weight(),
            |_, v, out| {
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = v[0][i * n + j] + v[0][j * n + i];
                    }
                }
            },
        ))
    }

    /// L̊_X g = L_X g - (2/n)(div X) g.
    pub fn conformal_killing(&self, x: &Field) -> Result<Field> {
        let d = self.covariant(x)?;
        let n = self.n();
        let nf = n as f64;
        Ok(pointwise(
            &self.grid,
            &[&d, &self.ginv, &self.g],
            Kind::SymTensor,
            d.weight(),
            |_, v, out| {
                let div: f64 = v[0].iter().zip(v[1]).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] =
                            v[0][i * n + j] + v[0][j * n + i] - 2.0 / nf * div * v[2][i * n + j];
                    }
                }
            },
        ))
    }

    /// Δ_L X = div^g L̊_X g.
    pub fn vector_laplacian(&self, x: &Field) -> Result<Field> {
        self.divergence(&self.conformal_killing(x)?)
    }

    /// ∫ f dμ^g over the grid.
    pub fn integrate(&self, f: &Field) -> f64 {
        let w = self.grid.volume_weights();
        f.data()
            .iter()
            .zip(&w)
            .zip(self.volume.data())
            .map(|((x, w), v)| x * w * v)
            .sum()
    }
}
