use std::sync::Arc;

use hyperdata_core::catalog::*;
use hyperdata_core::constraints::densities;
use hyperdata_core::deformation::kappa;
use hyperdata_core::diagnostics::extract_expansion;
use hyperdata_core::{build_grid, Error, Field, Grid, Kind};

fn grid(nr: usize) -> Arc<Grid> {
    build_grid(3, 1.0, 12.0, nr, 16).unwrap()
}

#[test]
fn horizon_is_a_root() {
    for (m, n) in [(1.0, 3), (0.1, 3), (2.0, 4), (0.5, 5)] {
        let a = adss_horizon(m, n);
        let f = 1.0 + a * a - 2.0 * m * a.powi(2 - n as i32);
        assert!(f.abs() < 1e-12, "{m} {n}: {f}");
    }
}

#[test]
fn areal_radius_solves_chart_ode() {
    // dρ/dr = √(1 + ρ² - 2m/ρ) for n = 3, and ρ - sinh r → 0 relative
    let m = 1.0;
    for r in [1.5, 2.5, 4.0, 7.0] {
        let h = 1e-4;
        let rho = |r: f64| adss_areal_radius(m, 3, r).unwrap().0;
        let d = (rho(r + h) - rho(r - h)) / (2.0 * h);
        let p = rho(r);
        let want = (1.0 + p * p - 2.0 * m / p).sqrt();
        assert!((d - want).abs() < 1e-6 * want, "r {r}: {d} vs {want}");
    }
    let (rho, _) = adss_areal_radius(m, 3, 10.0).unwrap();
    assert!((rho / 10.0f64.sinh() - 1.0).abs() < 1e-8);
}

#[test]
fn adss_zero_mass_is_hyperbolic() {
    let g = grid(32);
    let d = adss_data(0.0, &g).unwrap();
    assert_eq!(d.e.max_abs(), 0.0);
    assert_eq!(d.pi.max_abs(), 0.0);
}

#[test]
fn adss_rejects_horizon_in_domain() {
    let g = build_grid(3, 0.5, 12.0, 32, 8).unwrap();
    assert!(matches!(
        adss_data(1.0, &g),
        Err(Error::HorizonInsideDomain { .. })
    ));
    assert!(adss_data(-1.0, &g).is_err());
}

#[test]
fn adss_is_vacuum() {
    let g = grid(64);
    let d = densities(&adss_data(1.0, &g).unwrap()).unwrap();
    assert!(d.mu.max_abs() < 1e-4, "{}", d.mu.max_abs());
    assert!(d.j.max_abs() < 1e-4);
}

#[test]
fn wang_components() {
    let g = grid(32);
    let na = g.na();
    let f: Vec<f64> = (0..na).map(|j| 1.0 + g.omega(j)[2]).collect();
    let p = vec![0.3; na];
    let d = wang_data(&WangSpec::isotropic(&g, &f, &p), &g).unwrap();
    for k in [5, 20, 31] {
        let r = g.r()[k];
        for j in [0, na / 2] {
            let w = g.omega(j);
            let (mut rr, mut tr) = (0.0, 0.0);
            for a in 0..3 {
                tr += d.e.at(a * 3 + a, k * na + j);
                for b in 0..3 {
                    rr += d.pi.at(a * 3 + b, k * na + j) * w[a] * w[b];
                }
            }
            assert!((tr - 2.0 * f[j] * (-3.0 * r).exp()).abs() < 1e-14);
            assert!((rr - 0.3 * (-3.0 * r).exp()).abs() < 1e-14);
        }
    }
    let mut bad = WangSpec::zero(&g);
    bad.p_rr.pop();
    assert!(wang_data(&bad, &g).is_err());
}

#[test]
fn conf_hyp_round_trip() {
    let g = grid(64);
    let na = g.na();
    let v0: Vec<f64> = (0..na).map(|j| 0.5 + 0.2 * g.omega(j)[0]).collect();
    let y0: Vec<f64> = (0..na).map(|j| 0.1 * g.omega(j)[1]).collect();
    let d = conf_hyp_data(&v0, &y0, &vec![0.0; 3 * na], None, &g).unwrap();
    let k = kappa(3);
    // e = ((1+v)^κ - 1) b recovers v
    let vdata: Vec<f64> = (0..g.npts())
        .map(|p| ((d.e.at(0, p)).ln_1p() / k).exp_m1())
        .collect();
    let v = Field::from_data(&g, Kind::Scalar, 3.0, vdata).unwrap();
    let exp = extract_expansion(&v, &Field::zeros(&g, Kind::OneForm)).unwrap();
    for j in 0..na {
        assert!((exp.v0[j] - v0[j]).abs() < 1e-8);
    }
    assert!(conf_hyp_data(&v0[1..], &y0, &vec![0.0; 3 * na], None, &g).is_err());
}
