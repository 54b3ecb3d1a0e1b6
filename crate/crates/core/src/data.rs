//! Initial data sets (g, π) stored as (e = g - b, π).

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{pointwise, Field, Kind};
use crate::geometry::Geometry;
use crate::grid::Grid;

/// Declared regularity class of a data set; carried for reporting and for
/// the extrapolation model of the mass functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayClass {
    pub alpha: f64,
    pub tau: f64,
    pub tau0: f64,
}

impl DecayClass {
    pub fn new(alpha: f64, tau: f64, tau0: f64) -> DecayClass {
        DecayClass { alpha, tau, tau0 }
    }
}

impl Default for DecayClass {
    fn default() -> Self {
        DecayClass {
            alpha: 0.5,
            tau: 3.0,
            tau0: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InitialData {
    pub e: Field,
    pub pi: Field,
    pub decay: DecayClass,
}

impl InitialData {
    /// Validates symmetry, shapes and positivity of g = b + e.
    pub fn new(e: Field, pi: Field, decay: DecayClass) -> Result<InitialData> {
        if e.rank() != 2 || pi.rank() != 2 {
            return Err(Error::InvalidParameter("e and π must be 2-tensors".into()));
        }
        if !e.same_grid(&pi) {
            return Err(Error::InvalidParameter(
                "e and π live on different grids".into(),
            ));
        }
        let e = e.into_sym();
        let pi = pi.into_sym();
        let min = min_eigenvalue(&e);
        if !(min > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "g = b + e is not positive definite (smallest eigenvalue {min:.3e})"
            )));
        }
        Ok(InitialData { e, pi, decay })
    }

    /// The hyperbolic data (b, 0).
    pub fn hyperbolic(grid: &Arc<Grid>) -> InitialData {
        let n = grid.n() as f64;
        InitialData {
            e: Field::zeros(grid, Kind::SymTensor),
            pi: Field::zeros(grid, Kind::SymTensor),
            decay: DecayClass::new(0.5, n + 1.0, 1.0),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.e.grid()
    }

    /// Geometry of g; the background geometry when e vanishes identically.
    pub fn geometry(&self) -> Result<Geometry> {
        if self.e.max_abs() == 0.0 {
            Ok(Geometry::background(self.grid()))
        } else {
            Geometry::new(&self.e)
        }
    }

    /// g = b + e.
    pub fn metric(&self) -> Field {
        Field::metric_b(self.grid()).add(&self.e)
    }

    /// K = π + g - (tr^g π / (n-1)) g.
    pub fn extrinsic_curvature(&self) -> Result<Field> {
        let geo = self.geometry()?;
        let n = self.grid().n() as f64;
        let tr = geo.trace(&self.pi);
        let g = geo.metric();
        Ok(self
            .pi
            .add(g)
            .sub(&g.mul_scalar(&tr).scale(1.0 / (n - 1.0)))
            .into_sym())
    }

    /// Smallest eigenvalue of g over all nodes.
    pub fn min_metric_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.e)
    }
}

fn min_eigenvalue(e: &Field) -> f64 {
    let grid = e.grid();
    let n = grid.n();
    let mins = pointwise(grid, &[e], Kind::Scalar, 0.0, |_, v, out| {
        let m = DMatrix::from_row_slice(n, n, v[0]) + DMatrix::identity(n, n);
        out[0] = m.symmetric_eigenvalues().min();
    });
    mins.data().iter().cloned().fold(f64::INFINITY, f64::min)
}
