use std::sync::Arc;

use hyperdata_core::diagnostics::{decay_fit, weighted_sup_norm};
use hyperdata_core::elliptic::*;
use hyperdata_core::{build_grid, Error, Field, Grid, Kind};
use num_rational::Ratio;

fn grid() -> Arc<Grid> {
    build_grid(3, 1.0, 12.0, 64, 8).unwrap()
}

fn rel_err(a: &Field, b: &Field) -> f64 {
    a.sub(b).max_abs() / b.max_abs()
}

#[test]
fn indicial_examples() {
    let rec = indicial_exponents(OperatorKind::Scalar, 3).unwrap();
    assert_eq!(
        (rec.components[0].lower, rec.components[0].upper),
        (Ratio::from(-1), Ratio::from(3))
    );
    assert_eq!(rec.radius, Ratio::from(2));
    let rec = indicial_exponents(OperatorKind::Vector, 3).unwrap();
    let t = &rec.components[1];
    assert_eq!((t.lower, t.upper), (Ratio::from(-2), Ratio::from(2)));
    let rec = indicial_exponents(OperatorKind::Scalar, 4).unwrap();
    assert_eq!(rec.components[0].upper, Ratio::from(4));
    assert_eq!(rec.radius, Ratio::new(5, 2));
    for n in 3..=6 {
        for kind in [OperatorKind::Scalar, OperatorKind::Vector] {
            let rec = indicial_exponents(kind, n).unwrap();
            assert_eq!(rec.radius, Ratio::new(n as i64 + 1, 2));
            for c in &rec.components {
                assert!(c.lower < c.upper);
                assert_eq!(c.radius(n), rec.radius);
                // symmetric about (n-1)/2 - k
                assert_eq!(c.lower + c.upper, Ratio::from(n as i64 - 1 - 2 * c.offset));
            }
        }
    }
    assert!(indicial_exponents(OperatorKind::Scalar, 1).is_err());
}

#[test]
fn ode_particular_solution() {
    // C e^{-5r}: 25C - 10C - 3C = 1
    let g = grid();
    let r = g.r().to_vec();
    let f: Vec<f64> = r.iter().map(|r| (-5.0 * r).exp()).collect();
    let u = radial_ode_solve(&OdeProblem::new(2.0, -3.0, r.clone(), f).unwrap(), 0.0, 0.0).unwrap();
    for (k, r) in r.iter().enumerate() {
        let want = (-5.0 * r).exp() / 12.0;
        assert!(
            (u[k] - want).abs() < 1e-10 * want,
            "r {r}: {} vs {want}",
            u[k]
        );
    }
}

#[test]
fn ode_homogeneous_branch_and_residual() {
    let g = grid();
    let r = g.r().to_vec();
    let u = radial_ode_solve(
        &OdeProblem::new(2.0, -3.0, r.clone(), vec![0.0; r.len()]).unwrap(),
        1.0,
        0.0,
    )
    .unwrap();
    assert!(r
        .iter()
        .zip(&u)
        .all(|(r, u)| (u - r.exp()).abs() < 1e-12 * r.exp()));
    // f = e^{-4r} + e^{-6r}; residual from exact derivatives of the closed form
    let f: Vec<f64> = r
        .iter()
        .map(|r| (-4.0 * r).exp() + (-6.0 * r).exp())
        .collect();
    let p = OdeProblem::new(2.0, -3.0, r.clone(), f).unwrap();
    let u = radial_ode_solve(&p, 0.0, 0.0).unwrap();
    // the outermost sample depends on the exponential continuation of f
    for (k, r) in r.iter().enumerate().take(r.len() - 1) {
        let want = (-4.0 * r).exp() / 5.0 + (-6.0 * r).exp() / 21.0;
        assert!(
            (u[k] - want).abs() < 1e-8 * want,
            "r {r}: {}",
            u[k] / want - 1.0
        );
    }
}

#[test]
fn ode_decay_dichotomy() {
    let g = build_grid(3, 1.0, 14.0, 96, 4).unwrap();
    let r = g.r().to_vec();
    let rate = |u: &[f64]| {
        let f = Field::from_data(
            &g,
            Kind::Scalar,
            0.0,
            u.iter().flat_map(|x| vec![*x; g.na()]).collect(),
        )
        .unwrap();
        decay_fit(&f).unwrap().rate
    };
    // κ = 4.5 > δ+ = 3: Λ+ = 0 keeps rate κ, Λ+ ≠ 0 gives δ+
    let f: Vec<f64> = r.iter().map(|r| (-4.5 * r).exp()).collect();
    let p = OdeProblem::new(2.0, -3.0, r.clone(), f).unwrap();
    let u = radial_ode_solve(&p, 0.0, 0.0).unwrap();
    assert!((rate(&u) - 4.5).abs() < 0.05, "{}", rate(&u));
    let u = radial_ode_solve(&p, 0.0, 1.0).unwrap();
    assert!((rate(&u) - 3.0).abs() < 0.05, "{}", rate(&u));
    let slow: Vec<f64> = r.iter().map(|r| (-2.5 * r).exp()).collect();
    let p = OdeProblem::new(2.0, -3.0, r.clone(), slow).unwrap();
    assert!(matches!(
        radial_ode_solve(&p, 0.0, 0.0),
        Err(Error::DivergentTail { .. })
    ));
}

#[test]
fn scalar_round_trip_with_inner_data() {
    let g = grid();
    let v = Field::scalar_fn(&g, 3.0, |r, _| (-3.0 * r).exp());
    let rhs = scalar_model(&v).unwrap();
    let opts = EllipticOptions {
        inner: Some(vec![(-3.0f64).exp(); g.na()]),
        ..Default::default()
    };
    let sol = solve_scalar_with(&rhs, 2.0, &opts).unwrap();
    assert!(
        rel_err(&sol.field, &v) < 1e-8,
        "{}",
        rel_err(&sol.field, &v)
    );
    assert!(sol.residual < 1e-8);
}

#[test]
fn scalar_round_trip_band_limited() {
    let g = grid();
    let v = Field::scalar_fn(&g, 5.0, |r, w| {
        (-5.0 * r).exp() * (1.0 - (-2.0 * (r - 1.0)).exp()) * (1.0 + w[0] + w[1] * w[2])
    });
    let sol = solve_scalar(&scalar_model(&v).unwrap(), 2.0).unwrap();
    assert!(rel_err(&sol.field, &v) < 1e-6);
}

#[test]
fn critical_rate_of_scalar_solution() {
    let g = build_grid(3, 1.0, 14.0, 96, 4).unwrap();
    let rhs = Field::scalar_fn(&g, 4.0, |r, _| (-4.0 * r).exp());
    // homogeneous inner data: the e^{-3r} and e^{-4r} terms are comparable
    // across the fit window, but the rate is clearly n rather than n + 1
    let sol = solve_scalar(&rhs, 2.0).unwrap();
    let fit = decay_fit(&sol.field).unwrap();
    assert!(fit.rate > 2.8 && fit.rate < 3.1, "{}", fit.rate);
    let opts = EllipticOptions {
        inner: Some(vec![(-3.0f64).exp(); g.na()]),
        ..Default::default()
    };
    let fit = decay_fit(&solve_scalar_with(&rhs, 2.0, &opts).unwrap().field).unwrap();
    assert!((fit.rate - 3.0).abs() < 0.1, "{}", fit.rate);
}

#[test]
fn window_is_enforced() {
    let g = grid();
    let rhs = Field::scalar_fn(&g, 4.0, |r, _| (-4.0 * r).exp());
    assert!(solve_scalar(&rhs, 3.0).is_err());
    assert!(solve_scalar(&rhs, -1.0).is_err());
    assert!(solve_vector(&Field::zeros(&g, Kind::OneForm), 3.5).is_err());
}

#[test]
fn vector_round_trip() {
    let g = grid();
    let z = Field::from_fn(&g, Kind::OneForm, 5.0, |r, w, out| {
        let phi = (-5.0 * r).exp() * (1.0 - (-2.0 * (r - 1.0)).exp());
        out[0] = phi * (1.0 + w[2]);
        out[1] = phi * w[0] * 0.5;
        out[2] = phi * (w[1] - 0.3);
    });
    let rhs = vector_model(&z).unwrap();
    let sol = solve_vector(&rhs, 2.0).unwrap();
    assert!(
        rel_err(&sol.field, &z) < 1e-6,
        "{} after {}",
        rel_err(&sol.field, &z),
        sol.iterations
    );
    assert!(weighted_sup_norm(&sol.field.sub(&z), 2.0) < 1e-6 * weighted_sup_norm(&z, 2.0));
}

#[test]
fn vector_model_is_div_of_conformal_killing() {
    let g = grid();
    let geo = hyperdata_core::geometry::Geometry::background(&g);
    let z = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        for a in 0..3 {
            out[a] = (-3.0 * r).exp() * (w[a] + 0.2 * a as f64);
        }
    });
    let a = vector_model(&z).unwrap();
    let b = geo.divergence(&geo.conformal_killing(&z).unwrap()).unwrap();
    assert!(a.sub(&b).max_abs() <= 1e-8 * a.max_abs());
}
