use std::sync::Arc;

use hyperdata_core::catalog::{adss_data, conf_hyp_data, wang_data, WangSpec};
use hyperdata_core::constraints::{check_dec, densities, DecOptions};
use hyperdata_core::deformation::*;
use hyperdata_core::diagnostics::{decay_fit, weighted_sup_norm};
use hyperdata_core::elliptic::scalar_model;
use hyperdata_core::mass::mass_functional;
use hyperdata_core::{build_grid, DecayClass, Field, Grid, GridSpec, InitialData, Kind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> Arc<Grid> {
    build_grid(3, 1.0, 12.0, 64, 8).unwrap()
}

fn fine() -> Arc<Grid> {
    let mut spec = GridSpec::new(3, 1.0, 12.0, 48, 12);
    spec.options.fd_order = 8;
    Grid::new(spec).unwrap()
}

fn small() -> Arc<Grid> {
    build_grid(3, 1.0, 10.0, 40, 6).unwrap()
}

/// Non-vacuum data with decaying e and π.
fn bumpy(g: &Arc<Grid>, a: f64, b: f64) -> InitialData {
    let e = Field::from_fn(g, Kind::SymTensor, 3.0, move |r, w, out| {
        let d = (-3.0 * r).exp();
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                out[i * 3 + j] = d * a * (delta + 0.3 * w[i] * w[j] + 0.2 * w[0] * delta);
            }
        }
    });
    let pi = Field::from_fn(g, Kind::SymTensor, 3.0, move |r, w, out| {
        let d = (-3.0 * r).exp();
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = d * b * (w[i] * w[j] + if i == j { 0.2 * w[2] } else { 0.0 });
            }
        }
    });
    InitialData::new(e, pi, DecayClass::new(0.5, 3.0, 1.0)).unwrap()
}

fn rel(a: &Field, b: &Field) -> f64 {
    let scale = weighted_sup_norm(b, 3.0).max(1e-300);
    weighted_sup_norm(&a.sub(b), 3.0) / scale
}

#[test]
fn t_vanishes_at_identity_on_hyperbolic_data() {
    let g = grid();
    let d = InitialData::hyperbolic(&g);
    let (a, b) = eval_t_deviation(
        &d,
        &Field::zeros(&g, Kind::Scalar),
        &Field::zeros(&g, Kind::OneForm),
    )
    .unwrap();
    assert!(a.max_abs() < 1e-12 && b.max_abs() < 1e-12);
}

#[test]
fn constant_factor_scales_metric() {
    let g = grid();
    let d = InitialData::hyperbolic(&g);
    let out = apply_conformal(
        &d,
        &Field::constant(&g, 2.0),
        &Field::zeros(&g, Kind::OneForm),
    )
    .unwrap();
    let want = 2f64.powf(kappa(3)) - 1.0;
    for c in 0..9 {
        let diag = c % 4 == 0;
        for p in 0..g.npts() {
            let x = out.e.at(c, p);
            assert!((x - if diag { want } else { 0.0 }).abs() < 1e-12);
        }
    }
    assert_eq!(out.pi.max_abs(), 0.0);
}

fn conformal_route(d: &InitialData, v: &Field, y: &Field) -> (Field, Field) {
    let k = kappa(d.grid().n());
    let out = apply_conformal_deviation(d, v, y).unwrap();
    let dens = densities(&out).unwrap();
    let first = dens
        .mu
        .mul_scalar(&v.map(0.0, |x| (1.0 + x).powf(k)))
        .scale(-2.0);
    let second = dens.j.mul_scalar(&v.map(0.0, |x| (1.0 + x).powf(0.5 * k)));
    (first, second)
}

#[test]
fn two_routes_agree_on_random_deformations() {
    let g = fine();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let (a, b) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let (c0, c1, c2) = (
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
        );
        let d = bumpy(&g, a, b);
        let v = Field::scalar_fn(&g, 3.0, move |r, w| {
            (-3.0 * r).exp() * (c0 + c1 * w[0] + c2 * w[1] * w[2])
        });
        let y = Field::from_fn(&g, Kind::OneForm, 3.0, move |r, w, out| {
            let e = (-3.0 * r).exp();
            for i in 0..3 {
                out[i] = e * (c1 * w[i] + c2 * if i == 0 { 1.0 } else { 0.0 });
            }
        });
        let (t1, t2) = eval_t_deviation(&d, &v, &y).unwrap();
        let (r1, r2) = conformal_route(&d, &v, &y);
        assert!(rel(&t1, &r1) < 1e-8, "first slot {}", rel(&t1, &r1));
        assert!(rel(&t2, &r2) < 1e-8, "second slot {}", rel(&t2, &r2));
    }
}

#[test]
fn exterior_form_on_hyperbolic_data() {
    // -2u^{κ+1} μ̃ = 8Δu + 6(u - u⁵) + u|L̊_Y b|², u³ J̃ = Δ_L Y + 4u^{-1} L̊_Y b(∇u, ·)
    let g = small();
    let d = InitialData::hyperbolic(&g);
    let v = Field::scalar_fn(&g, 3.0, |r, w| 0.1 * (-3.0 * r).exp() * (1.0 + 0.5 * w[2]));
    let y = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        for i in 0..3 {
            out[i] = 0.05 * (-3.0 * r).exp() * w[i];
        }
    });
    let (t1, t2) = eval_t_deviation(&d, &v, &y).unwrap();
    let geo = hyperdata_core::geometry::Geometry::background(&g);
    let u = v.map(0.0, |x| 1.0 + x);
    let lk = geo.conformal_killing(&y).unwrap();
    let lap = geo.laplacian(&v).unwrap();
    let want1 = lap
        .scale(8.0)
        .add(&v.map(3.0, |x| {
            -6.0 * x * (4.0 + x * (10.0 + x * (10.0 + x * (5.0 + x))))
        }))
        .add(&geo.dot2(&lk, &lk).mul_scalar(&u));
    let du = geo.covariant(&v).unwrap();
    let mut grad = Field::zeros(&g, Kind::OneForm);
    for p in 0..g.npts() {
        for j in 0..3 {
            let s: f64 = (0..3).map(|k| lk.at(k * 3 + j, p) * du.at(k, p)).sum();
            grad.data_mut()[j * g.npts() + p] = 4.0 * s / u.at(0, p);
        }
    }
    let want2 = geo.vector_laplacian(&y).unwrap().add(&grad);
    assert!(
        rel(&t1.mul_scalar(&u), &want1) < 1e-8,
        "{}",
        rel(&t1.mul_scalar(&u), &want1)
    );
    assert!(rel(&t2, &want2) < 1e-8);
}

fn taylor_order(d: &InitialData, v: &Field, z: &Field) -> f64 {
    let g = d.grid();
    let (b1, b2) = eval_t_deviation(
        d,
        &Field::zeros(g, Kind::Scalar).with_weight(v.weight()),
        &Field::zeros(g, Kind::OneForm),
    )
    .unwrap();
    let (l1, l2) = linearize_t(d, v, z).unwrap();
    let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eps| {
            let (t1, t2) = eval_t_deviation(d, &v.scale(eps), &z.scale(eps)).unwrap();
            let r1 = t1.sub(&b1).axpy(-eps, &l1);
            let r2 = t2.sub(&b2).axpy(-eps, &l2);
            weighted_sup_norm(&r1, 3.0).max(weighted_sup_norm(&r2, 3.0))
        })
        .collect();
    ((errs[0] / errs[1]).log10()).min((errs[1] / errs[2]).log10())
}

#[test]
fn linearization_has_second_order_remainder() {
    let g = small();
    let d = bumpy(&g, 0.3, 0.4);
    let v = Field::scalar_fn(&g, 3.0, |r, w| (-3.0 * r).exp() * (1.0 + w[0]));
    let z = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        for i in 0..3 {
            out[i] = (-3.0 * r).exp() * (w[i] + 0.3 * if i == 1 { 1.0 } else { 0.0 });
        }
    });
    let order = taylor_order(&d, &v, &z);
    assert!(order >= 1.9, "order {order}");
    let (a, b) = linearize_t(
        &d,
        &Field::zeros(&g, Kind::Scalar),
        &Field::zeros(&g, Kind::OneForm),
    )
    .unwrap();
    assert_eq!(a.max_abs() + b.max_abs(), 0.0);
}

#[test]
fn general_basepoint_linearization_is_a_derivative() {
    let g = small();
    let d = bumpy(&g, 0.2, 0.3);
    let v0 = Field::scalar_fn(&g, 3.0, |r, w| 0.2 * (-3.0 * r).exp() * (1.0 + w[1]));
    let y0 = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        for i in 0..3 {
            out[i] = 0.1 * (-3.0 * r).exp() * w[i];
        }
    });
    let v = Field::scalar_fn(&g, 3.0, |r, w| (-3.0 * r).exp() * w[2]);
    let z = Field::from_fn(&g, Kind::OneForm, 3.0, |r, _, out| {
        out[0] = (-3.0 * r).exp()
    });
    let (b1, b2) = eval_t_deviation(&d, &v0, &y0).unwrap();
    let (l1, l2) = linearize_t_at(&d, &v0, &y0, &v, &z).unwrap();
    let errs: Vec<f64> = [1e-2, 1e-3]
        .iter()
        .map(|&eps| {
            let (t1, t2) = eval_t_deviation(&d, &v0.axpy(eps, &v), &y0.axpy(eps, &z)).unwrap();
            weighted_sup_norm(&t1.sub(&b1).axpy(-eps, &l1), 3.0)
                .max(weighted_sup_norm(&t2.sub(&b2).axpy(-eps, &l2), 3.0))
        })
        .collect();
    assert!((errs[0] / errs[1]).log10() > 1.9, "{errs:?}");
}

#[test]
fn model_point_linearization_is_the_scalar_model() {
    let g = grid();
    let d = InitialData::hyperbolic(&g);
    let v = Field::scalar_fn(&g, 3.0, |r, w| (-3.0 * r).exp() * (1.0 + w[0] * w[1]));
    let (a, _) = linearize_t(&d, &v, &Field::zeros(&g, Kind::OneForm)).unwrap();
    let want = scalar_model(&v).unwrap().scale(8.0);
    assert!(a.sub(&want).max_abs() < 1e-10 * want.max_abs().max(1.0));
}

#[test]
fn linearized_solve_round_trip() {
    let g = grid();
    let d = bumpy(&g, 0.02, 0.03);
    let v = Field::scalar_fn(&g, 3.0, |r, w| {
        (-3.0 * r).exp() * (1.0 + 0.5 * w[0]) * (1.0 - (g_r0() - r).exp())
    });
    let z = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        let s = (-3.0 * r).exp() * (1.0 - (g_r0() - r).exp());
        for i in 0..3 {
            out[i] = s * (0.5 * w[i] + 0.2 * if i == 2 { 1.0 } else { 0.0 });
        }
    });
    let rhs = linearize_t(&d, &v, &z).unwrap();
    let sol = solve_linearized(&d, (&rhs.0, &rhs.1), 2.5).unwrap();
    assert!(!sol.rank_deficient);
    assert!(rel(&sol.v, &v) < 1e-6, "v {}", rel(&sol.v, &v));
    assert!(rel(&sol.z, &z) < 1e-6, "Z {}", rel(&sol.z, &z));
}

fn g_r0() -> f64 {
    1.0
}

#[test]
fn linearized_solve_of_zero_is_zero() {
    let g = grid();
    let d = bumpy(&g, 0.2, 0.3);
    let sol = solve_linearized(
        &d,
        (
            &Field::zeros(&g, Kind::Scalar),
            &Field::zeros(&g, Kind::OneForm),
        ),
        2.5,
    )
    .unwrap();
    assert_eq!(sol.v.max_abs() + sol.z.max_abs(), 0.0);
}

#[test]
fn critical_forcing_gives_rate_n() {
    let g = grid();
    let d = InitialData::hyperbolic(&g);
    let f = Field::scalar_fn(&g, 4.0, |r, _| -(-4.0 * r).exp());
    let sol = solve_linearized(&d, (&f, &Field::zeros(&g, Kind::OneForm)), 2.5).unwrap();
    let rate = decay_fit(&sol.v).unwrap().rate;
    // the fit window sees the e^{-4r} particular term as well
    assert!(rate > 2.8 && rate < 3.1, "rate {rate}");
}

fn m0(d: &InitialData) -> f64 {
    mass_functional(d).unwrap().values()[0]
}

#[test]
fn strict_pipeline_on_hyperbolic_data() {
    let g = grid();
    let h = InitialData::hyperbolic(&g);
    let out = perturb_to_strict_dec(&h, 1e-2).unwrap();
    let c = &out.certificate;
    let t = c.t.unwrap();
    assert!(c.min_margin > 0.0);
    assert!(c.gamma.unwrap() > 0.0);
    let opts = DecOptions {
        strict: true,
        gamma: c.gamma.unwrap(),
        tolerance: 0.0,
        interior_only: true,
    };
    assert!(check_dec(&out.data, &opts).unwrap().holds);
    assert!(m0(&out.data).abs() < 1e-2);
    assert!(t > 0.0 && t <= 1.0);
}

#[test]
fn strict_pipeline_keeps_adss_mass() {
    let g = grid();
    let a = adss_data(1.0, &g).unwrap();
    let out = perturb_to_strict_dec(&a, 1e-2).unwrap();
    assert!(out.certificate.dec.holds);
    assert!(out.certificate.min_margin > 0.0);
    assert!((m0(&out.data) - m0(&a)).abs() < 1e-2);
    assert!((m0(&out.data) - 1.0).abs() < 1e-2);
}

#[test]
fn halving_epsilon_does_not_raise_t() {
    let g = small();
    let h = InitialData::hyperbolic(&g);
    let ts: Vec<f64> = [2e-2, 1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&eps| {
            perturb_to_strict_dec(&h, eps)
                .unwrap()
                .certificate
                .t
                .unwrap()
        })
        .collect();
    assert!(ts.windows(2).all(|w| w[1] <= w[0]), "{ts:?}");
    assert!(ts[3] < ts[0], "{ts:?}");
}

#[test]
fn mass_change_is_linear_in_t() {
    let g = grid();
    let a = adss_data(1.0, &g).unwrap();
    let dir = strict_dec_direction(&a, &StrictDecOptions::new(1e-2)).unwrap();
    let base = m0(&a);
    let dm: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|&t| (m0(&strict_dec_candidate(&a, &dir, t).unwrap()) - base).abs())
        .collect();
    for w in dm.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "{dm:?}");
    }
}

#[test]
fn conformal_deformation_of_hyperbolic_data_is_trivial() {
    let g = small();
    let out =
        deform_to_conformally_hyperbolic(&InitialData::hyperbolic(&g), 2.0, None, 1e-10).unwrap();
    assert!(out.v.max_abs() == 0.0 && out.y.max_abs() == 0.0);
    assert!(out.certificate.residual_history.len() <= 2);
}

#[test]
fn newton_recovers_manufactured_solution() {
    let g = grid();
    let h = InitialData::hyperbolic(&g);
    let vs = Field::scalar_fn(&g, 3.0, |r, _| 0.1 * (-3.0 * r).exp());
    let ys = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        for a in 0..3 {
            out[a] = 0.05 * (-3.0 * r).exp() * w[a];
        }
    });
    let target = densities(&apply_conformal_deviation(&h, &vs, &ys).unwrap()).unwrap();
    let na = g.na();
    let mut inner = vec![0.0; 4 * na];
    for q in 0..na {
        inner[q] = vs.at(0, q);
        for a in 0..3 {
            inner[(a + 1) * na + q] = ys.at(a, q);
        }
    }
    let opts = ConfHypOptions {
        inner: Some(inner),
        ..ConfHypOptions::new(3.0)
    };
    let out =
        deform_to_conformally_hyperbolic_with(&h, Some((&target.mu, &target.j)), &opts).unwrap();
    assert!(out.v.sub(&vs).max_abs() < 1e-6 * vs.max_abs());
    assert!(out.y.sub(&ys).max_abs() < 1e-6 * ys.max_abs());
    let r = &out.certificate.residual_history;
    assert!(r.len() >= 4, "{r:?}");
    for k in r.len() - 3..r.len() {
        assert!(r[k] / (r[k - 1] * r[k - 1]) < 1e3, "{r:?}");
    }
}

#[test]
fn conformal_deformation_of_strict_adss() {
    let g = grid();
    let a = adss_data(1.0, &g).unwrap();
    let strict = perturb_to_strict_dec(&a, 1e-2).unwrap();
    let out = deform_to_conformally_hyperbolic(&strict.data, 1.5, None, 1e-10).unwrap();
    let (de, dp) = out.certificate.exterior_error.unwrap();
    assert!(de < 1e-10 && dp < 1e-10);
    assert!(out.certificate.dec.holds);
    assert!((m0(&out.data) - m0(&strict.data)).abs() < 1e-2);
}

#[test]
fn wang_data_is_already_in_gauge() {
    let g = grid();
    let na = g.na();
    let w = wang_data(&WangSpec::isotropic(&g, &vec![1.0; na], &vec![0.5; na]), &g).unwrap();
    let (out, gauge) = wang_renormalize(&w).unwrap();
    assert!(gauge.identity);
    assert!(out.e.sub(&w.e).max_abs() < 1e-10 && out.pi.sub(&w.pi).max_abs() < 1e-10);
}

fn tangential_coefficient(d: &InitialData, k: usize) -> f64 {
    let g = d.grid();
    let (n, na, npts) = (g.n(), g.na(), g.npts());
    let mut s = 0.0;
    for j in 0..na {
        let w = g.omega(j);
        for a in 0..n {
            for b in 0..n {
                let proj = if a == b { 1.0 } else { 0.0 } - w[a] * w[b];
                s += d.e.data()[(a * n + b) * npts + k * na + j] * proj;
            }
        }
    }
    s / ((n - 1) * na) as f64 * (n as f64 * g.r()[k]).exp()
}

#[test]
fn wang_gauge_of_conformally_hyperbolic_data() {
    let g = grid();
    let na = g.na();
    let c = 0.1;
    let d = conf_hyp_data(&vec![c; na], &vec![0.0; na], &vec![0.0; 3 * na], None, &g).unwrap();
    let (out, gauge) = wang_renormalize(&d).unwrap();
    let before = gauge
        .leading_before
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let after = gauge
        .leading_after
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(after < 1e-8 * before);
    // m = κ(n+1)/n · v0 σ
    let last = g.nr() - 1;
    assert!((tangential_coefficient(&out, last) - 4.0 * 4.0 / 3.0 * c).abs() < 1e-6);
    assert!((m0(&out) - m0(&d)).abs() < 1e-8);
}

#[test]
fn perturb_wang_on_hyperbolic_data() {
    let g = grid();
    let out = perturb_wang(&InitialData::hyperbolic(&g), 1e-2).unwrap();
    let c = &out.certificate;
    assert!(c.dec.holds && c.min_margin > 0.0);
    assert!(c.gamma.is_none());
    let a = radial_leading_coefficient(&out.data).unwrap();
    let gauge = c.gauge.as_ref().unwrap();
    let before = gauge
        .leading_before
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(a.iter().all(|x| x.abs() < 1e-8 * before));
    assert!(m0(&out.data).abs() < 1e-2);
}
