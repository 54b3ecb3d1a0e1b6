//! Quadrature and a band-limited harmonic basis on the unit sphere S^{n-1}.
//!
//! Tensor components are stored at quadrature nodes. Every angular operation
//! (projection, surface gradient, harmonic filtering) goes through an
//! orthonormal basis of harmonics of degree <= L sampled at those nodes:
//!
//! * n = 3: real spherical harmonics on a Gauss-Legendre x uniform-longitude
//!   grid with `L+1` latitudes and `2L+2` longitudes.
//! * n >= 4: a recursive product rule (Gauss-Gegenbauer in each polar angle)
//!   with a basis built from monomials of degree L and L-1, orthonormalized
//!   in the discrete inner product and rotated onto eigenvectors of the
//!   sphere Laplacian. Well conditioned for small L only (L <= 8 advised).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Band-limited harmonic basis sampled at the quadrature nodes of S^{n-1}.
#[derive(Debug, Clone)]
pub struct SphereBasis {
    dim: usize,
    degree: usize,
    /// Node coordinates, `dim` entries per node.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Degree l of each basis function.
    coef_degree: Vec<usize>,
    /// (ncoef x na): w_j Y_c(w_j), maps node values to coefficients.
    analysis: DMatrix<f64>,
    /// (na x ncoef): Y_c at nodes.
    synthesis: DMatrix<f64>,
    /// One (na x ncoef) matrix per ambient axis: components of grad_S Y_c.
    gradient: Vec<DMatrix<f64>>,
}

impl SphereBasis {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidParameter(format!("dimension {dim} < 3")));
        }
        if dim == 3 {
            Ok(Self::spherical_harmonics(degree))
        } else {
            Self::monomial_fallback(dim, degree)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn ncoef(&self) -> usize {
        self.coef_degree.len()
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }
    pub fn coef_degree(&self) -> &[usize] {
        &self.coef_degree
    }
    pub fn analysis(&self) -> &DMatrix<f64> {
        &self.analysis
    }
    pub fn synthesis(&self) -> &DMatrix<f64> {
        &self.synthesis
    }
    pub fn gradient(&self, axis: usize) -> &DMatrix<f64> {
        &self.gradient[axis]
    }

    /// Eigenvalue of -Laplace-Beltrami for degree l: l(l+n-2).
    pub fn eigenvalue(&self, l: usize) -> f64 {
        (l * (l + self.dim - 2)) as f64
    }

    /// Volume of the unit sphere S^{n-1}.
    pub fn area(&self) -> f64 {
        sphere_area(self.dim)
    }

    /// Quadrature of node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Harmonic coefficients of node values.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(values);
        (&self.analysis * v).as_slice().to_vec()
    }

    /// Node values of a coefficient vector.
    pub fn evaluate(&self, coefs: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(coefs);
        (&self.synthesis * c).as_slice().to_vec()
    }

    /// Index of the coefficient carrying the constant mode.
    pub fn constant_index(&self) -> usize {
        self.coef_degree.iter().position(|&l| l == 0).unwrap_or(0)
    }

    fn spherical_harmonics(degree: usize) -> Self {
        let l_max = degree;
        let nt = l_max + 1;
        let np = 2 * l_max + 2;
        let (xs, ws) = gauss_jacobi(nt, 0.0);
        let mut nodes = Vec::with_capacity(nt * np * 3);
        let mut weights = Vec::with_capacity(nt * np);
        let mut angles = Vec::with_capacity(nt * np);
        for (&x, &w) in xs.iter().zip(&ws) {
            let theta = x.acos();
            for k in 0..np {
                let phi = 2.0 * PI * k as f64 / np as f64;
                let st = theta.sin();
                nodes.extend_from_slice(&[st * phi.cos(), st * phi.sin(), theta.cos()]);
                weights.push(w * 2.0 * PI / np as f64);
                angles.push((theta, phi));
            }
        }
        let na = weights.len();
        let mut coef_degree = Vec::new();
        let mut coef_lm = Vec::new();
        for l in 0..=l_max {
            for m in -(l as i64)..=(l as i64) {
                coef_degree.push(l);
                coef_lm.push((l, m));
            }
        }
        let nc = coef_degree.len();
        let mut synthesis = DMatrix::zeros(na, nc);
        let mut gradient = vec![DMatrix::zeros(na, nc); 3];
        for (j, &(theta, phi)) in angles.iter().enumerate() {
            let (p, dp) = normalized_legendre(l_max, theta);
            let (st, ct) = (theta.sin(), theta.cos());
            let (sp, cp) = (phi.sin(), phi.cos());
            let e_theta = [ct * cp, ct * sp, -st];
            let e_phi = [-sp, cp, 0.0];
            for (c, &(l, m)) in coef_lm.iter().enumerate() {
                let ma = m.unsigned_abs() as usize;
                let (ang, dang) = if m == 0 {
                    (1.0, 0.0)
                } else if m > 0 {
                    let mf = ma as f64;
                    (
                        2f64.sqrt() * (mf * phi).cos(),
                        -2f64.sqrt() * mf * (mf * phi).sin(),
                    )
                } else {
                    let mf = ma as f64;
                    (
                        2f64.sqrt() * (mf * phi).sin(),
                        2f64.sqrt() * mf * (mf * phi).cos(),
                    )
                };
                let plm = p[idx_lm(l, ma)];
                let dplm = dp[idx_lm(l, ma)];
                synthesis[(j, c)] = plm * ang;
                let d_theta = dplm * ang;
                let d_phi = plm * dang / st;
                for a in 0..3 {
                    gradient[a][(j, c)] = e_theta[a] * d_theta + e_phi[a] * d_phi;
                }
            }
        }
        let analysis = weighted_transpose(&synthesis, &weights);
        SphereBasis {
            dim: 3,
            degree,
            nodes,
            weights,
            coef_degree,
            analysis,
            synthesis,
            gradient,
        }
    }

    fn monomial_fallback(dim: usize, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidParameter("degree must be >= 1".into()));
        }
        let (nodes, weights) = product_rule(dim, degree + 1);
        let na = weights.len();
        let mut exps = monomials(dim, degree);
        exps.extend(monomials(dim, degree - 1));
        let nm = exps.len();
        let mut vals = DMatrix::zeros(na, nm);
        let mut grads = vec![DMatrix::zeros(na, nm); dim];
        for j in 0..na {
            let x = &nodes[j * dim..(j + 1) * dim];
            for (c, e) in exps.iter().enumerate() {
                vals[(j, c)] = monomial_value(x, e);
                let amb: Vec<f64> = (0..dim).map(|a| monomial_partial(x, e, a)).collect();
                let radial: f64 = amb.iter().zip(x).map(|(g, xi)| g * xi).sum();
                for a in 0..dim {
                    grads[a][(j, c)] = amb[a] - radial * x[a];
                }
            }
        }
        // Orthonormalize columns in the discrete inner product (two passes of
        // modified Gram-Schmidt), tracking the same transform on gradients.
        let mut q = vals;
        for _ in 0..2 {
            for c in 0..nm {
                for p in 0..c {
                    let proj = weighted_dot(&q, p, c, &weights);
                    for j in 0..na {
                        q[(j, c)] -= proj * q[(j, p)];
                    }
                    for g in grads.iter_mut() {
                        for j in 0..na {
                            g[(j, c)] -= proj * g[(j, p)];
                        }
                    }
                }
                let norm = weighted_dot(&q, c, c, &weights).sqrt();
                if norm < 1e-12 {
                    return Err(Error::Singular(format!(
                        "monomial basis degenerate at column {c}; lower the degree"
                    )));
                }
                for j in 0..na {
                    q[(j, c)] /= norm;
                }
                for g in grads.iter_mut() {
                    for j in 0..na {
                        g[(j, c)] /= norm;
                    }
                }
            }
        }
        // Rotate onto Laplace-Beltrami eigenvectors: K_cd = <grad Y_c, grad Y_d>.
        let mut stiff = DMatrix::zeros(nm, nm);
        for g in &grads {
            let wg = weighted_transpose(g, &weights);
            stiff += &wg * g;
        }
        let stiff = (&stiff + stiff.transpose()) * 0.5;
        let eig = SymmetricEigen::new(stiff);
        let mut order: Vec<usize> = (0..nm).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let rot = DMatrix::from_fn(nm, nm, |i, k| eig.eigenvectors[(i, order[k])]);
        let synthesis = &q * &rot;
        let gradient: Vec<DMatrix<f64>> = grads.iter().map(|g| g * &rot).collect();
        let coef_degree = order
            .iter()
            .map(|&k| {
                let lam = eig.eigenvalues[k].max(0.0);
                // l(l+n-2) = lam
                let nn = (dim - 2) as f64;
                ((-nn + (nn * nn + 4.0 * lam).sqrt()) / 2.0).round() as usize
            })
            .collect();
        let analysis = weighted_transpose(&synthesis, &weights);
        Ok(SphereBasis {
            dim,
            degree,
            nodes,
            weights,
            coef_degree,
            analysis,
            synthesis,
            gradient,
        })
    }
}

fn weighted_dot(m: &DMatrix<f64>, a: usize, b: usize, w: &[f64]) -> f64 {
    (0..m.nrows()).map(|j| w[j] * m[(j, a)] * m[(j, b)]).sum()
}

fn weighted_transpose(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.ncols(), m.nrows(), |c, j| w[j] * m[(j, c)])
}

#[inline]
fn idx_lm(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Orthonormal associated Legendre functions P̄_l^m(cos θ) (so that
/// P̄_l^m(cos θ)·{1, √2 cos mφ, √2 sin mφ} are orthonormal on S²) and their
/// θ-derivatives, for 0 <= m <= l <= l_max.
pub fn normalized_legendre(l_max: usize, theta: f64) -> (Vec<f64>, Vec<f64>) {
    let n = (l_max + 1) * (l_max + 2) / 2;
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let (x, s) = (theta.cos(), theta.sin());
    p[0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        p[idx_lm(m, m)] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[idx_lm(m - 1, m - 1)];
    }
    for m in 0..l_max {
        p[idx_lm(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[idx_lm(m, m)];
    }
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[idx_lm(l, m)] = a * (x * p[idx_lm(l - 1, m)] - b * p[idx_lm(l - 2, m)]);
        }
    }
    for l in 0..=l_max {
        for m in 0..=l {
            let (lf, mf) = (l as f64, m as f64);
            let prev = if l > m { p[idx_lm(l - 1, m)] } else { 0.0 };
            let c = ((lf * lf - mf * mf) * (2.0 * lf + 1.0) / (2.0 * lf - 1.0).max(1.0)).sqrt();
            dp[idx_lm(l, m)] = (lf * x * p[idx_lm(l, m)] - c * prev) / s;
        }
    }
    (p, dp)
}

/// Gauss rule for the weight (1-t²)^a on [-1, 1] (Golub-Welsch).
pub fn gauss_jacobi(npts: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(npts, npts);
    for k in 1..npts {
        let kf = k as f64;
        let s = 2.0 * kf + 2.0 * a;
        let b = 4.0 * kf * (kf + a) * (kf + a) * (kf + 2.0 * a) / (s * s * (s + 1.0) * (s - 1.0));
        let off = b.sqrt();
        jac[(k, k - 1)] = off;
        jac[(k - 1, k)] = off;
    }
    let mu0 = gegenbauer_mass(a);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..npts)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    // symmetrize against round-off
    let nodes: Vec<f64> = (0..npts)
        .map(|k| 0.5 * (pairs[k].0 - pairs[npts - 1 - k].0))
        .collect();
    let weights: Vec<f64> = (0..npts)
        .map(|k| 0.5 * (pairs[k].1 + pairs[npts - 1 - k].1))
        .collect();
    (nodes, weights)
}

/// ∫_{-1}^{1} (1-t²)^a dt for a a non-negative multiple of 1/2.
fn gegenbauer_mass(a: f64) -> f64 {
    let twice = (2.0 * a).round() as i64;
    let (mut val, mut cur) = if twice % 2 == 0 {
        (2.0, 0.0)
    } else {
        (PI / 2.0, 0.5)
    };
    while cur + 1e-9 < a {
        cur += 1.0;
        val *= 2.0 * cur / (2.0 * cur + 1.0);
    }
    val
}

/// Volume ω_{n-1} of the unit sphere in R^n.
pub fn sphere_area(dim: usize) -> f64 {
    // ω_0 = 2, ω_1 = 2π, ω_{k+1} = 2π ω_{k-1} / k
    let (mut even, mut odd) = (2.0, 2.0 * PI);
    if dim == 1 {
        return even;
    }
    let mut k = 1;
    while k + 1 < dim {
        let next = 2.0 * PI * even / k as f64;
        even = odd;
        odd = next;
        k += 1;
    }
    odd
}

/// Product rule on S^{dim-1} exact for polynomials of degree <= 2*npts - 1.
fn product_rule(dim: usize, npts: usize) -> (Vec<f64>, Vec<f64>) {
    if dim == 2 {
        let np = 2 * npts;
        let mut nodes = Vec::with_capacity(2 * np);
        let w = 2.0 * PI / np as f64;
        for k in 0..np {
            let phi = 2.0 * PI * k as f64 / np as f64;
            nodes.extend_from_slice(&[phi.cos(), phi.sin()]);
        }
        return (nodes, vec![w; np]);
    }
    let (inner_nodes, inner_w) = product_rule(dim - 1, npts);
    let (ts, tw) = gauss_jacobi(npts, (dim as f64 - 3.0) / 2.0);
    let ni = inner_w.len();
    let mut nodes = Vec::with_capacity(dim * ni * npts);
    let mut weights = Vec::with_capacity(ni * npts);
    for (t, wt) in ts.iter().zip(&tw) {
        let rho = (1.0 - t * t).sqrt();
        for i in 0..ni {
            for a in 0..dim - 1 {
                nodes.push(rho * inner_nodes[i * (dim - 1) + a]);
            }
            nodes.push(*t);
            weights.push(wt * inner_w[i]);
        }
    }
    (nodes, weights)
}

fn monomials(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == dim - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(dim, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree as u32, &mut Vec::new(), &mut out);
    out
}

fn monomial_value(x: &[f64], e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(xi, &k)| xi.powi(k as i32)).product()
}

fn monomial_partial(x: &[f64], e: &[u32], axis: usize) -> f64 {
    if e[axis] == 0 {
        return 0.0;
    }
    let mut v = e[axis] as f64;
    for (i, (xi, &k)) in x.iter().zip(e).enumerate() {
        let k = if i == axis { k - 1 } else { k };
        v *= xi.powi(k as i32);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_jacobi(6, 0.0);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((i - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn harmonics_are_orthonormal() {
        let b = SphereBasis::new(3, 8).unwrap();
        let gram = b.analysis() * b.synthesis();
        let err = (gram - DMatrix::identity(b.ncoef(), b.ncoef())).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn gradient_of_coordinate_function() {
        // grad_S x^1 = e_1 - x^1 ω
        let b = SphereBasis::new(3, 6).unwrap();
        let vals: Vec<f64> = (0..b.len()).map(|j| b.node(j)[0]).collect();
        let c = DVector::from_vec(b.project(&vals));
        for a in 0..3 {
            let g = b.gradient(a) * &c;
            for j in 0..b.len() {
                let w = b.node(j);
                let expect = if a == 0 { 1.0 } else { 0.0 } - w[0] * w[a];
                assert!((g[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fallback_basis_in_four_dimensions() {
        let b = SphereBasis::new(4, 4).unwrap();
        let total: f64 = b.weights().iter().sum();
        assert!((total - 2.0 * PI * PI).abs() < 1e-12);
        // harmonic counts per degree on S^3: (l+1)^2
        for l in 0..=4 {
            let cnt = b.coef_degree().iter().filter(|&&d| d == l).count();
            assert_eq!(cnt, (l + 1) * (l + 1), "degree {l}");
        }
        let gram = b.analysis() * b.synthesis();
        let err = (gram - DMatrix::identity(b.ncoef(), b.ncoef())).abs().max();
        assert!(err < 1e-10, "{err}");
    }
}
