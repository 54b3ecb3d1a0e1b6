use std::sync::Arc;

use hyperdata_core::calculus::{
    conformal_killing, covariant_derivative, divergence, gradient, laplacian, vector_laplacian,
    vector_laplacian_direct,
};
use hyperdata_core::{build_grid, Field, Grid, Kind};

fn grid() -> Arc<Grid> {
    build_grid(3, 1.0, 12.0, 64, 16).unwrap()
}

fn interior_sup(f: &Field, scale: impl Fn(f64) -> f64) -> f64 {
    let g = f.grid();
    let mut m: f64 = 0.0;
    for c in 0..f.ncomp() {
        for k in g.interior() {
            let s = scale(g.r()[k]);
            for x in f.shell(c, k) {
                m = m.max(x.abs() / s);
            }
        }
    }
    m
}

#[test]
fn kid_potentials_satisfy_static_equation() {
    let g = grid();
    let pots = [
        Field::scalar_fn(&g, -1.0, |r, _| r.cosh()),
        Field::scalar_fn(&g, -1.0, |r, w| w[0] * r.sinh()),
        Field::scalar_fn(&g, -1.0, |r, w| w[1] * r.sinh()),
        Field::scalar_fn(&g, -1.0, |r, w| w[2] * r.sinh()),
    ];
    for v in &pots {
        let res = laplacian(v).unwrap().axpy(-3.0, v);
        // relative to the size of V
        let err = interior_sup(&res, |r| r.cosh());
        assert!(err < 1e-8, "ΔV - nV = {err:e}");
    }
}

#[test]
fn analytic_gradient_of_decaying_harmonic() {
    let g = grid();
    // f = e^{-3r} x^3 (Y_10 up to normalization)
    let f = Field::scalar_fn(&g, 3.0, |r, w| (-3.0 * r).exp() * w[2]);
    let d = gradient(&f).unwrap();
    let exact = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        let (a, da) = ((-3.0 * r).exp(), -3.0 * (-3.0 * r).exp());
        for i in 0..3 {
            let e3 = if i == 2 { 1.0 } else { 0.0 };
            out[i] = w[i] * da * w[2] + a / r.sinh() * (e3 - w[2] * w[i]);
        }
    });
    let err = interior_sup(&d.sub(&exact), |_| 1.0);
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn conformal_killing_is_trace_free() {
    let g = grid();
    let y = gradient(&Field::scalar_fn(&g, -1.0, |r, _| r.cosh())).unwrap();
    let l = conformal_killing(&y).unwrap();
    let tr = l.trace_b();
    assert!(tr.max_abs() < 1e-9 * 1e5);
}

#[test]
fn vector_laplacian_routes_agree() {
    let g = grid();
    let y = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        let a = (-3.0 * r).exp();
        let b = (-4.0 * r).exp();
        out[0] = a * (w[0] * w[1] + 0.3) + b * w[2];
        out[1] = a * w[2] * w[2] - 0.2 * b;
        out[2] = a * w[0] + b * w[0] * w[1] * w[2];
    });
    let v1 = vector_laplacian(&y).unwrap();
    let v2 = vector_laplacian_direct(&y).unwrap();
    let err = interior_sup(&v1.sub(&v2), |r| (-3.0 * r).exp());
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn radial_vector_laplacian_reduction() {
    // Y = e^{-nr} dr: (Δ_L Y)_r = (2(n-1)/n)(Y'' + (n-1)Y' - nY) for radial Y
    let g = grid();
    let y = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        for i in 0..3 {
            out[i] = (-3.0 * r).exp() * w[i];
        }
    });
    let l = vector_laplacian(&y).unwrap().radial_part();
    let exact = Field::scalar_fn(&g, 3.0, |r, _| {
        let f = (-3.0 * r).exp();
        (4.0 / 3.0) * (9.0 * f - 6.0 * f / r.tanh() - 3.0 * f - 2.0 * f / r.sinh().powi(2))
    });
    let err = interior_sup(&l.sub(&exact), |r| (-3.0 * r).exp());
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn divergence_of_metric_vanishes() {
    let g = grid();
    let d = divergence(&Field::metric_b(&g)).unwrap();
    assert!(d.max_abs() < 1e-12);
    let dd = covariant_derivative(&Field::metric_b(&g)).unwrap();
    assert!(dd.max_abs() < 1e-12);
}
