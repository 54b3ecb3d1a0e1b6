//! Exterior grid `[R0, Rmax] x S^{n-1}` with radial nodes uniform in s = e^{-r}.
//!
//! Tensor components live in the b-orthonormal "Cartesian" frame
//!
//! ```text
//! F_a = ω_a ∂_r + (1/sinh r) (E_a - ω_a ω),   a = 1..n,
//! ```
//!
//! where ω ∈ S^{n-1} ⊂ R^n and E_a is the a-th ambient axis. The components of
//! a smooth tensor in this frame are smooth functions on the sphere at each
//! radius, so the scalar harmonic transform applies to each of them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::SphereBasis;

/// Decay weights above this are treated as this value when differentiating;
/// a field decaying faster than e^{-pr} also decays faster than any smaller
/// rate, and the cap keeps s^{-p} representable.
pub const MAX_WEIGHT: f64 = 16.0;

/// Tunable discretization options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Formal order of the radial finite-difference rule (even, 2..=10).
    pub fd_order: usize,
    /// Relative spectral energy at degree L above which an angular derivative
    /// reports an under-resolved field.
    pub tail_threshold: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            fd_order: 6,
            tail_threshold: 1e-6,
        }
    }
}

/// Parameters that determine a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub r0: f64,
    pub rmax: f64,
    pub nr: usize,
    pub l: usize,
    #[serde(default)]
    pub options: GridOptions,
}

impl GridSpec {
    pub fn new(n: usize, r0: f64, rmax: f64, nr: usize, l: usize) -> Self {
        GridSpec {
            n,
            r0,
            rmax,
            nr,
            l,
            options: GridOptions::default(),
        }
    }
}

/// Finite-difference stencil of one node.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub start: usize,
    pub w: Vec<f64>,
}

#[derive(Debug)]
pub struct Grid {
    spec: GridSpec,
    r: Vec<f64>,
    s: Vec<f64>,
    ds: f64,
    sphere: SphereBasis,
    /// d/ds stencils (s decreasing with node index is accounted for).
    d_s: Vec<Stencil>,
    /// ∫ F ds weights over [s_min, s_max].
    s_quad: Vec<f64>,
}

/// Builds a grid on `[r0, rmax] x S^{n-1}` with `nr` radial nodes and angular
/// truncation degree `l`, using default options.
pub fn build_grid(n: usize, r0: f64, rmax: f64, nr: usize, l: usize) -> Result<Arc<Grid>> {
    Grid::new(GridSpec::new(n, r0, rmax, nr, l))
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Arc<Grid>> {
        let GridSpec {
            n,
            r0,
            rmax,
            nr,
            l,
            options,
        } = spec;
        if n < 3 {
            return Err(Error::InvalidParameter(format!("n = {n}, need n >= 3")));
        }
        if !(r0 > 0.0 && rmax > r0 && rmax.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < R0 < Rmax, got {r0}, {rmax}"
            )));
        }
        if nr < 8 {
            return Err(Error::InvalidParameter(format!("Nr = {nr}, need Nr >= 8")));
        }
        if l < 2 {
            return Err(Error::InvalidParameter(format!("L = {l}, need L >= 2")));
        }
        let order = options.fd_order;
        if order < 2 || order % 2 == 1 || order > 10 || order + 1 > nr {
            return Err(Error::InvalidParameter(format!(
                "fd_order = {order} unsupported"
            )));
        }
        if !(options.tail_threshold > 0.0) {
            return Err(Error::InvalidParameter(
                "tail_threshold must be positive".into(),
            ));
        }
        let s0 = (-r0).exp();
        let s1 = (-rmax).exp();
        let ds = (s0 - s1) / (nr - 1) as f64;
        let mut s: Vec<f64> = (0..nr).map(|k| s0 - ds * k as f64).collect();
        s[nr - 1] = s1;
        let mut r: Vec<f64> = s.iter().map(|x| -x.ln()).collect();
        r[0] = r0;
        r[nr - 1] = rmax;
        let sphere = SphereBasis::new(n, l)?;
        let d_s = derivative_stencils(&s, order);
        let s_quad = interval_quadrature(&s, order);
        Ok(Arc::new(Grid {
            spec,
            r,
            s,
            ds,
            sphere,
            d_s,
            s_quad,
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn n(&self) -> usize {
        self.spec.n
    }
    pub fn nr(&self) -> usize {
        self.spec.nr
    }
    pub fn l(&self) -> usize {
        self.spec.l
    }
    pub fn r0(&self) -> f64 {
        self.spec.r0
    }
    pub fn rmax(&self) -> f64 {
        self.spec.rmax
    }
    pub fn na(&self) -> usize {
        self.sphere.len()
    }
    /// Number of (radial, angular) nodes.
    pub fn npts(&self) -> usize {
        self.nr() * self.na()
    }
    pub fn r(&self) -> &[f64] {
        &self.r
    }
    pub fn s(&self) -> &[f64] {
        &self.s
    }
    pub fn ds(&self) -> f64 {
        self.ds
    }
    pub fn sphere(&self) -> &SphereBasis {
        &self.sphere
    }
    pub fn options(&self) -> &GridOptions {
        &self.spec.options
    }
    /// Ambient unit vector ω of angular node `j`.
    pub fn omega(&self, j: usize) -> &[f64] {
        self.sphere.node(j)
    }

    /// Frame components of the background metric b at any node: δ_ab.
    pub fn background_metric(&self) -> Vec<f64> {
        let n = self.n();
        (0..n * n)
            .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
            .collect()
    }

    /// Applies ∂_r to radial profiles of a quantity that behaves like
    /// s^p·(smooth in s). `data` holds `nrows` blocks of `nr x stride` values.
    pub fn radial_derivative(&self, data: &[f64], stride: usize, p: f64, out: &mut [f64]) {
        let p = p.min(MAX_WEIGHT);
        let nr = self.nr();
        let block = nr * stride;
        debug_assert_eq!(data.len() % block, 0);
        let spow: Vec<f64> = self.s.iter().map(|s| s.powf(-p)).collect();
        let sfac: Vec<f64> = self.s.iter().map(|s| s.powf(p + 1.0)).collect();
        crate::par::for_each_chunk_mut(out, stride, |row, o| {
            let c = row / nr;
            let k = row % nr;
            let base = c * block;
            let st = &self.d_s[k];
            o.iter_mut().for_each(|x| *x = 0.0);
            for (m, w) in st.w.iter().enumerate() {
                let kk = st.start + m;
                let coef = w * spow[kk];
                let src = &data[base + kk * stride..base + (kk + 1) * stride];
                for (x, y) in o.iter_mut().zip(src) {
                    *x += coef * y;
                }
            }
            let own = &data[base + k * stride..base + (k + 1) * stride];
            for (x, y) in o.iter_mut().zip(own) {
                *x = -p * y - sfac[k] * *x;
            }
        });
    }

    /// ∂_r of a single radial profile.
    pub fn radial_derivative_profile(&self, f: &[f64], p: f64) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.radial_derivative(f, 1, p, &mut out);
        out
    }

    /// Dense matrix of ∂_r acting on profiles of weight p (row k, column k').
    pub fn radial_derivative_matrix(&self, p: f64) -> nalgebra::DMatrix<f64> {
        let p = p.min(MAX_WEIGHT);
        let nr = self.nr();
        let mut m = nalgebra::DMatrix::zeros(nr, nr);
        for k in 0..nr {
            let st = &self.d_s[k];
            let sk = self.s[k].powf(p + 1.0);
            for (i, w) in st.w.iter().enumerate() {
                let kk = st.start + i;
                m[(k, kk)] -= sk * w * self.s[kk].powf(-p);
            }
            m[(k, k)] -= p;
        }
        m
    }

    /// Weights w_k with Σ w_k F(r_k) ≈ ∫_{R0}^{Rmax} F(r) dr.
    pub fn radial_weights(&self) -> Vec<f64> {
        // dr = -ds / s and s decreases with k
        self.s_quad
            .iter()
            .zip(&self.s)
            .map(|(w, s)| w / s)
            .collect()
    }

    /// Volume weights for ∫ F dμ^b over the grid, indexed like scalar data.
    pub fn volume_weights(&self) -> Vec<f64> {
        let n = self.n();
        let rw = self.radial_weights();
        let aw = self.sphere.weights();
        let mut out = Vec::with_capacity(self.npts());
        for (k, w) in rw.iter().enumerate() {
            let vol = w * self.r[k].sinh().powi(n as i32 - 1);
            out.extend(aw.iter().map(|a| a * vol));
        }
        out
    }

    /// Local Lagrange interpolation weights in s for a radius inside the grid.
    pub fn interpolation_weights(&self, radius: f64) -> Result<(usize, Vec<f64>)> {
        let (lo, hi) = (self.r0(), self.rmax());
        if !(radius >= lo - 1e-12 && radius <= hi + 1e-12) {
            return Err(Error::OutOfRange {
                radius,
                min: lo,
                max: hi,
            });
        }
        let s = (-radius).exp();
        let nr = self.nr();
        let m = (self.options().fd_order + 2).min(nr);
        let pos = (self.s[0] - s) / self.ds;
        let centre = pos.round() as isize;
        let start = (centre - (m as isize) / 2).clamp(0, (nr - m) as isize) as usize;
        let nodes = &self.s[start..start + m];
        let w = (0..m)
            .map(|i| {
                let mut l = 1.0;
                for (jj, &xj) in nodes.iter().enumerate() {
                    if jj != i {
                        l *= (s - xj) / (nodes[i] - xj);
                    }
                }
                l
            })
            .collect();
        Ok((start, w))
    }

    /// Interpolates a radial profile to `radius` (Lagrange in s).
    pub fn interpolate_profile(&self, f: &[f64], radius: f64) -> Result<f64> {
        let (start, w) = self.interpolation_weights(radius)?;
        Ok(w.iter().enumerate().map(|(i, w)| w * f[start + i]).sum())
    }

    /// Radial node indices whose shells are not on the truncation boundaries.
    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.nr() - 1
    }
}

/// Fornberg's algorithm: weights for derivatives 0..=m at `z` from nodes `x`.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

fn derivative_stencils(s: &[f64], order: usize) -> Vec<Stencil> {
    let nr = s.len();
    let width = order + 1;
    (0..nr)
        .map(|k| {
            let start = k.saturating_sub(order / 2).min(nr - width);
            let w = fornberg(s[k], &s[start..start + width], 1).swap_remove(1);
            Stencil { start, w }
        })
        .collect()
}

/// Weights for ∫_{s_min}^{s_max} F ds from samples at the (decreasing) nodes.
/// Each interval is integrated exactly against a local interpolant of degree
/// `order + 1`.
fn interval_quadrature(s: &[f64], order: usize) -> Vec<f64> {
    let nr = s.len();
    let width = (order + 2).min(nr);
    let mut w = vec![0.0; nr];
    for k in 0..nr - 1 {
        // interval between s[k+1] < s[k]
        let centre = k as isize - (width as isize - 2) / 2;
        let start = centre.clamp(0, (nr - width) as isize) as usize;
        let nodes = &s[start..start + width];
        let (a, b) = (s[k + 1], s[k]);
        // Gauss-Legendre on the interval against the Lagrange basis
        let (gx, gw) = crate::sphere::gauss_jacobi(width, 0.0);
        for (x, wx) in gx.iter().zip(&gw) {
            let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let h = 0.5 * (b - a) * wx;
            for i in 0..width {
                let mut l = 1.0;
                for (jj, &xj) in nodes.iter().enumerate() {
                    if jj != i {
                        l *= (t - xj) / (nodes[i] - xj);
                    }
                }
                w[start + i] += h * l;
            }
        }
    }
    w
}
