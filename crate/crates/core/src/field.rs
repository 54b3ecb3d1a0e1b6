//! Tensor fields sampled on a [`Grid`], stored as frame components.
//!
//! Layout: `data[(c * nr + k) * na + j]` for component `c`, radial node `k`
//! and angular node `j`. A rank-`q` tensor stores all `n^q` components with
//! multi-index `(a_1, .., a_q)` flattened row-major. Symmetric 2-tensors are
//! kept exactly symmetric.
//!
//! Every field carries a decay `weight` p: a lower bound on its decay rate,
//! meaning the field behaves like e^{-pr}·(smooth in s = e^{-r}). Radial
//! derivatives use it to differentiate s^{-p}·f, which stays smooth up to
//! s = 0. Growing fields have negative weight.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Scalar,
    OneForm,
    SymTensor,
    /// General covariant tensor of the given rank.
    Tensor(u8),
}

impl Kind {
    pub fn rank(self) -> usize {
        match self {
            Kind::Scalar => 0,
            Kind::OneForm => 1,
            Kind::SymTensor => 2,
            Kind::Tensor(q) => q as usize,
        }
    }

    /// Number of stored components in dimension n.
    pub fn ncomp(self, n: usize) -> usize {
        n.pow(self.rank() as u32)
    }

    /// Number of independent components (n(n+1)/2 for symmetric tensors).
    pub fn independent(self, n: usize) -> usize {
        match self {
            Kind::SymTensor => n * (n + 1) / 2,
            k => k.ncomp(n),
        }
    }

    pub fn of_rank(q: usize) -> Kind {
        match q {
            0 => Kind::Scalar,
            1 => Kind::OneForm,
            q => Kind::Tensor(q as u8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    kind: Kind,
    weight: f64,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>, kind: Kind) -> Field {
        let len = kind.ncomp(grid.n()) * grid.npts();
        // zero decays arbitrarily fast; cap to keep weight arithmetic finite
        Field {
            grid: grid.clone(),
            kind,
            weight: 64.0,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(grid: &Arc<Grid>, kind: Kind, weight: f64, data: Vec<f64>) -> Result<Field> {
        let len = kind.ncomp(grid.n()) * grid.npts();
        if data.len() != len {
            return Err(Error::InvalidParameter(format!(
                "field data length {} does not match {len}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite field value".into()));
        }
        let mut f = Field {
            grid: grid.clone(),
            kind,
            weight,
            data,
        };
        if kind == Kind::SymTensor {
            f.symmetrize();
        }
        Ok(f)
    }

    /// Builds a field from a closure of (r, ω) filling the component slice.
    pub fn from_fn<F>(grid: &Arc<Grid>, kind: Kind, weight: f64, f: F) -> Field
    where
        F: Fn(f64, &[f64], &mut [f64]) + Sync + Send,
    {
        let n = grid.n();
        let nc = kind.ncomp(n);
        let (nr, na) = (grid.nr(), grid.na());
        let npts = nr * na;
        let vals: Vec<Vec<f64>> = crate::par::map_range(npts, |p| {
            let mut buf = vec![0.0; nc];
            f(grid.r()[p / na], grid.omega(p % na), &mut buf);
            buf
        });
        let mut data = vec![0.0; nc * npts];
        for (p, v) in vals.iter().enumerate() {
            for c in 0..nc {
                data[c * npts + p] = v[c];
            }
        }
        let mut out = Field {
            grid: grid.clone(),
            kind,
            weight,
            data,
        };
        if kind == Kind::SymTensor {
            out.symmetrize();
        }
        out
    }

    pub fn scalar_fn<F>(grid: &Arc<Grid>, weight: f64, f: F) -> Field
    where
        F: Fn(f64, &[f64]) -> f64 + Sync + Send,
    {
        Field::from_fn(grid, Kind::Scalar, weight, |r, w, out| out[0] = f(r, w))
    }

    /// Constant scalar field.
    pub fn constant(grid: &Arc<Grid>, value: f64) -> Field {
        Field {
            grid: grid.clone(),
            kind: Kind::Scalar,
            weight: 0.0,
            data: vec![value; grid.npts()],
        }
    }

    /// The background metric b (identity frame components), weight 0.
    pub fn metric_b(grid: &Arc<Grid>) -> Field {
        let n = grid.n();
        Field::from_fn(grid, Kind::SymTensor, 0.0, |_, _, out| {
            for a in 0..n {
                out[a * n + a] = 1.0;
            }
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn kind(&self) -> Kind {
        self.kind
    }
    pub fn rank(&self) -> usize {
        self.kind.rank()
    }
    pub fn ncomp(&self) -> usize {
        self.kind.ncomp(self.grid.n())
    }
    pub fn weight(&self) -> f64 {
        self.weight
    }
    pub fn with_weight(mut self, weight: f64) -> Field {
        self.weight = weight;
        self
    }
    pub fn set_weight(&mut self, weight: f64) {
        self.weight = weight;
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Component `c` as a contiguous (nr x na) block.
    pub fn comp(&self, c: usize) -> &[f64] {
        let npts = self.grid.npts();
        &self.data[c * npts..(c + 1) * npts]
    }
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let npts = self.grid.npts();
        &mut self.data[c * npts..(c + 1) * npts]
    }

    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f64 {
        self.data[c * self.grid.npts() + p]
    }

    /// All components at node `p = k * na + j`.
    pub fn node(&self, p: usize) -> Vec<f64> {
        let npts = self.grid.npts();
        (0..self.ncomp()).map(|c| self.data[c * npts + p]).collect()
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
    }

    fn check_compatible(&self, other: &Field) {
        assert!(self.same_grid(other), "fields live on different grids");
        assert_eq!(self.kind.rank(), other.kind.rank(), "rank mismatch");
    }

    pub fn symmetrize(&mut self) {
        if self.rank() != 2 {
            return;
        }
        let n = self.grid.n();
        let npts = self.grid.npts();
        for a in 0..n {
            for b in (a + 1)..n {
                let (ab, ba) = (a * n + b, b * n + a);
                for p in 0..npts {
                    let m = 0.5 * (self.data[ab * npts + p] + self.data[ba * npts + p]);
                    self.data[ab * npts + p] = m;
                    self.data[ba * npts + p] = m;
                }
            }
        }
        self.kind = Kind::SymTensor;
    }

    /// Reinterprets a rank-2 field as symmetric after symmetrizing.
    pub fn into_sym(mut self) -> Field {
        self.symmetrize();
        self
    }

    pub fn add(&self, other: &Field) -> Field {
        self.check_compatible(other);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Field {
            grid: self.grid.clone(),
            kind: join_kind(self.kind, other.kind),
            weight: self.weight.min(other.weight),
            data,
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.check_compatible(other);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Field {
            grid: self.grid.clone(),
            kind: join_kind(self.kind, other.kind),
            weight: self.weight.min(other.weight),
            data,
        }
    }

    /// self + alpha * other.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Field {
        self.check_compatible(other);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Field {
            grid: self.grid.clone(),
            kind: join_kind(self.kind, other.kind),
            weight: self.weight.min(other.weight),
            data,
        }
    }

    pub fn scale(&self, alpha: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            weight: self.weight,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar(&self, f: &Field) -> Field {
        assert!(self.same_grid(f) && f.rank() == 0);
        let npts = self.grid.npts();
        let mut data = self.data.clone();
        for c in 0..self.ncomp() {
            for (x, y) in data[c * npts..(c + 1) * npts].iter_mut().zip(&f.data) {
                *x *= y;
            }
        }
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            weight: self.weight + f.weight,
            data,
        }
    }

    /// Applies `f` to every value of a scalar field.
    pub fn map(&self, weight: f64, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            weight,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Frame norm |T|_b at every node, as a scalar field.
    pub fn norm_b(&self) -> Field {
        let npts = self.grid.npts();
        let mut data = vec![0.0; npts];
        for c in 0..self.ncomp() {
            for (acc, x) in data.iter_mut().zip(&self.data[c * npts..(c + 1) * npts]) {
                *acc += x * x;
            }
        }
        data.iter_mut().for_each(|x| *x = x.sqrt());
        Field {
            grid: self.grid.clone(),
            kind: Kind::Scalar,
            weight: self.weight,
            data,
        }
    }

    /// Largest absolute value over all components and nodes.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Multiplies every component of radial shell k by `f[k]`.
    pub fn mul_radial(&self, f: &[f64], weight_shift: f64) -> Field {
        let (nr, na) = (self.grid.nr(), self.grid.na());
        let mut data = self.data.clone();
        for (i, x) in data.iter_mut().enumerate() {
            *x *= f[(i / na) % nr];
        }
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            weight: self.weight + weight_shift,
            data,
        }
    }

    /// Trace of a rank-2 field with respect to b.
    pub fn trace_b(&self) -> Field {
        assert_eq!(self.rank(), 2);
        let n = self.grid.n();
        let npts = self.grid.npts();
        let mut data = vec![0.0; npts];
        for a in 0..n {
            let c = a * n + a;
            for (acc, x) in data.iter_mut().zip(&self.data[c * npts..(c + 1) * npts]) {
                *acc += x;
            }
        }
        Field {
            grid: self.grid.clone(),
            kind: Kind::Scalar,
            weight: self.weight,
            data,
        }
    }

    /// Scalar times b.
    pub fn times_metric_b(&self) -> Field {
        assert_eq!(self.rank(), 0);
        let n = self.grid.n();
        let npts = self.grid.npts();
        let mut data = vec![0.0; n * n * npts];
        for a in 0..n {
            let c = a * n + a;
            data[c * npts..(c + 1) * npts].copy_from_slice(&self.data);
        }
        Field {
            grid: self.grid.clone(),
            kind: Kind::SymTensor,
            weight: self.weight,
            data,
        }
    }

    /// Componentwise b-inner product of two same-rank fields, as a scalar.
    pub fn dot_b(&self, other: &Field) -> Field {
        self.check_compatible(other);
        let npts = self.grid.npts();
        let mut data = vec![0.0; npts];
        for c in 0..self.ncomp() {
            let (a, b) = (
                &self.data[c * npts..(c + 1) * npts],
                &other.data[c * npts..(c + 1) * npts],
            );
            for ((acc, x), y) in data.iter_mut().zip(a).zip(b) {
                *acc += x * y;
            }
        }
        Field {
            grid: self.grid.clone(),
            kind: Kind::Scalar,
            weight: self.weight + other.weight,
            data,
        }
    }

    /// Radial frame component ω·X of a 1-form, or T(ω, ω) of a 2-tensor.
    pub fn radial_part(&self) -> Field {
        let grid = &self.grid;
        let (n, na, npts) = (grid.n(), grid.na(), grid.npts());
        let mut data = vec![0.0; npts];
        for (p, out) in data.iter_mut().enumerate() {
            let w = grid.omega(p % na);
            *out = match self.rank() {
                1 => (0..n).map(|a| w[a] * self.data[a * npts + p]).sum(),
                2 => (0..n)
                    .flat_map(|a| (0..n).map(move |b| (a, b)))
                    .map(|(a, b)| w[a] * w[b] * self.data[(a * n + b) * npts + p])
                    .sum(),
                _ => panic!("radial_part needs rank 1 or 2"),
            };
        }
        Field {
            grid: grid.clone(),
            kind: Kind::Scalar,
            weight: self.weight,
            data,
        }
    }

    /// Values of a scalar field on radial shell k.
    pub fn shell(&self, c: usize, k: usize) -> &[f64] {
        let na = self.grid.na();
        let base = c * self.grid.npts() + k * na;
        &self.data[base..base + na]
    }
}

/// Evaluates `f` at every node on the gathered components of `inputs`,
/// producing a field of kind `kind`. The closure receives the node index
/// `p = k * na + j`, the component slices of each input and the output slice.
pub fn pointwise<F>(grid: &Arc<Grid>, inputs: &[&Field], kind: Kind, weight: f64, f: F) -> Field
where
    F: Fn(usize, &[&[f64]], &mut [f64]) + Sync + Send,
{
    let data = pointwise_raw(grid, inputs, kind.ncomp(grid.n()), f);
    let mut out = Field {
        grid: grid.clone(),
        kind,
        weight,
        data,
    };
    if kind == Kind::SymTensor {
        out.symmetrize();
    }
    out
}

/// Like [`pointwise`] with `nout` output slots per node, returned in the
/// component-major layout.
pub fn pointwise_raw<F>(grid: &Arc<Grid>, inputs: &[&Field], nout: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &[&[f64]], &mut [f64]) + Sync + Send,
{
    const CHUNK: usize = 512;
    let npts = grid.npts();
    let ncs: Vec<usize> = inputs.iter().map(|x| x.ncomp()).collect();
    for x in inputs {
        assert!(
            Arc::ptr_eq(x.grid(), grid),
            "fields live on different grids"
        );
    }
    let nchunks = npts.div_ceil(CHUNK);
    let parts = crate::par::map_range(nchunks, |ch| {
        let p0 = ch * CHUNK;
        let p1 = (p0 + CHUNK).min(npts);
        let mut bufs: Vec<Vec<f64>> = ncs.iter().map(|&m| vec![0.0; m]).collect();
        let mut out = vec![0.0; (p1 - p0) * nout];
        for p in p0..p1 {
            for (i, x) in inputs.iter().enumerate() {
                let d = x.data();
                for (c, b) in bufs[i].iter_mut().enumerate() {
                    *b = d[c * npts + p];
                }
            }
            let views: Vec<&[f64]> = bufs.iter().map(|b| b.as_slice()).collect();
            f(p, &views, &mut out[(p - p0) * nout..(p - p0 + 1) * nout]);
        }
        out
    });
    let mut data = vec![0.0; nout * npts];
    for (ch, part) in parts.iter().enumerate() {
        let p0 = ch * CHUNK;
        for (i, v) in part.chunks(nout).enumerate() {
            for (c, x) in v.iter().enumerate() {
                data[c * npts + p0 + i] = *x;
            }
        }
    }
    data
}

/// Splits component-major data into consecutive fields of the given kinds.
pub fn split_fields(grid: &Arc<Grid>, data: &[f64], kinds: &[Kind], weight: f64) -> Vec<Field> {
    let npts = grid.npts();
    let mut off = 0;
    kinds
        .iter()
        .map(|&k| {
            let len = k.ncomp(grid.n()) * npts;
            let mut f = Field {
                grid: grid.clone(),
                kind: k,
                weight,
                data: data[off..off + len].to_vec(),
            };
            if k == Kind::SymTensor {
                f.symmetrize();
            }
            off += len;
            f
        })
        .collect()
}

fn join_kind(a: Kind, b: Kind) -> Kind {
    if a == b {
        a
    } else {
        Kind::of_rank(a.rank())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn background_metric_is_identity() {
        let g = build_grid(3, 1.0, 12.0, 16, 4).unwrap();
        let b = Field::metric_b(&g);
        for p in 0..g.npts() {
            let v = b.node(p);
            for a in 0..3 {
                for c in 0..3 {
                    assert_eq!(v[a * 3 + c], if a == c { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn symmetric_storage_is_exact() {
        let g = build_grid(3, 1.0, 12.0, 16, 4).unwrap();
        let t = Field::from_fn(&g, Kind::SymTensor, 0.0, |r, w, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = r * (i as f64) + w[0];
            }
        });
        for p in 0..g.npts() {
            let v = t.node(p);
            assert_eq!(v[1], v[3]);
            assert_eq!(v[2], v[6]);
            assert_eq!(v[5], v[7]);
        }
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        let g = build_grid(3, 1.0, 12.0, 16, 4).unwrap();
        assert!(Field::from_data(&g, Kind::Scalar, 0.0, vec![0.0; 3]).is_err());
        let mut d = vec![0.0; g.npts()];
        d[5] = f64::NAN;
        assert!(Field::from_data(&g, Kind::Scalar, 0.0, d).is_err());
    }
}
