use std::sync::Arc;

use hyperdata_core::diagnostics::{
    cutoff_chi, cutoff_xi, decay_fit, extract_expansion, weighted_sup_norm,
};
use hyperdata_core::io::{read_field, write_field, write_shell_norms};
use hyperdata_core::{build_grid, Error, Field, Grid, Kind};
use proptest::prelude::*;

fn grid() -> Arc<Grid> {
    build_grid(3, 1.0, 12.0, 64, 8).unwrap()
}

#[test]
fn weighted_norm_examples() {
    let g = grid();
    assert_eq!(
        weighted_sup_norm(&Field::zeros(&g, Kind::SymTensor), 4.0),
        0.0
    );
    let f = Field::scalar_fn(&g, 3.0, |r, _| (-3.0 * r).exp());
    assert!((weighted_sup_norm(&f, 3.0) - 1.0).abs() < 1e-12);
    assert!((weighted_sup_norm(&f, 2.0) - (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn cutoff_examples() {
    let g = grid();
    let lambda = 3.0;
    let chi = cutoff_chi(lambda, &g).unwrap();
    let xi = cutoff_xi(lambda, &g).unwrap();
    let na = g.na();
    for k in 0..g.nr() {
        let r = g.r()[k];
        let c = chi.at(0, k * na);
        if r <= lambda {
            assert_eq!(c, 1.0);
        }
        if r >= 2.0 * lambda {
            assert_eq!(c, 0.0);
            assert!((xi.at(0, k * na) - (-r).exp()).abs() < 1e-15);
        }
        assert!((0.0..=1.0).contains(&c));
        if k > 0 {
            assert!(c <= chi.at(0, (k - 1) * na));
        }
    }
    assert!(cutoff_chi(0.5, &g).is_err());
}

#[test]
fn decay_fit_examples() {
    let g = grid();
    let f = decay_fit(&Field::scalar_fn(&g, 3.0, |r, _| (-3.0 * r).exp())).unwrap();
    assert!((f.rate - 3.0).abs() < 0.01 && f.width < 0.01);
    let f = decay_fit(&Field::scalar_fn(&g, 3.0, |r, _| {
        (-3.0 * r).exp() * (1.0 + (-r).exp())
    }))
    .unwrap();
    assert!(f.rate > 3.0 && f.rate < 3.05, "{}", f.rate);
    assert!(matches!(
        decay_fit(&Field::zeros(&g, Kind::Scalar)),
        Err(Error::DegenerateFit(_))
    ));
}

#[test]
fn expansion_of_exact_model() {
    let g = grid();
    let v = Field::scalar_fn(&g, 3.0, |r, _| 2.0 * (-3.0 * r).exp());
    let exp = extract_expansion(&v, &Field::zeros(&g, Kind::OneForm)).unwrap();
    assert!(exp.v0.iter().all(|x| (x - 2.0).abs() < 1e-10));
    assert!(weighted_sup_norm(&exp.v1, 0.0) < 1e-10);
    assert!(exp.y0_r.iter().chain(&exp.y0_t_frame).all(|x| *x == 0.0));
}

#[test]
fn expansion_with_faster_remainder() {
    let g = grid();
    let v = Field::scalar_fn(&g, 3.0, |r, w| (-3.0 * r).exp() * w[0] + (-4.0 * r).exp());
    let exp = extract_expansion(&v, &Field::zeros(&g, Kind::OneForm)).unwrap();
    for j in 0..g.na() {
        assert!((exp.v0[j] - g.omega(j)[0]).abs() < 1e-8);
    }
    let rate = exp.v1_rate.unwrap().rate;
    assert!((rate - 4.0).abs() < 0.05, "{rate}");
}

#[test]
fn expansion_frame_and_coordinate_tangential() {
    // Y = e^{-3r}(a dr-part + tangential part), frame components
    let g = grid();
    let y = Field::from_fn(&g, Kind::OneForm, 3.0, |r, w, out| {
        let e = (-3.0 * r).exp();
        // tangential vector e_3 - w_3 w, radial coefficient 0.5
        for a in 0..3 {
            let t = if a == 2 { 1.0 } else { 0.0 } - w[2] * w[a];
            out[a] = e * (0.5 * w[a] + t);
        }
    });
    let exp = extract_expansion(&Field::zeros(&g, Kind::Scalar), &y).unwrap();
    let na = g.na();
    for j in 0..na {
        let w = g.omega(j);
        assert!((exp.y0_r[j] - 0.5).abs() < 1e-9);
        let t = -w[2] * w[0];
        assert!((exp.y0_t_frame[j] - t).abs() < 1e-9);
        assert!((exp.y0_t_coordinate[j] - 0.5 * t).abs() < 1e-9);
    }
}

#[test]
fn slow_decay_is_rejected() {
    let g = grid();
    let v = Field::scalar_fn(&g, 1.0, |r, _| (-1.2 * r).exp());
    assert!(matches!(
        extract_expansion(&v, &Field::zeros(&g, Kind::OneForm)),
        Err(Error::FitQuality(_))
    ));
}

#[test]
fn binary_round_trip_and_csv() {
    let g = grid();
    let f = Field::from_fn(&g, Kind::SymTensor, 2.5, |r, w, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (-2.5 * r).exp() * (i as f64 + w[0]);
        }
    });
    let mut buf = Vec::new();
    write_field(&f, &mut buf).unwrap();
    let back = read_field(buf.as_slice(), Some(&g)).unwrap();
    assert_eq!(back.kind(), Kind::SymTensor);
    assert_eq!(back.weight(), 2.5);
    assert_eq!(back.data(), f.data());
    let fresh = read_field(buf.as_slice(), None).unwrap();
    assert_eq!(fresh.data(), f.data());
    assert!(read_field(&b"garbage!........"[..], None).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("norms.csv");
    write_shell_norms(&f, std::fs::File::create(&path).unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), g.nr() + 1);
    assert!(text.starts_with("r,sup,l2"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weighted_norm_monotone_in_delta(d1 in -2.0f64..5.0, dd in 0.0f64..3.0, a in -1.0f64..1.0) {
        let g = build_grid(3, 1.0, 8.0, 16, 4).unwrap();
        let f = Field::scalar_fn(&g, 2.0, move |r, w| (-2.0 * r).exp() * (1.0 + a * w[1]));
        prop_assert!(weighted_sup_norm(&f, d1) <= weighted_sup_norm(&f, d1 + dd) * (1.0 + 1e-14));
        let plain = f.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!((weighted_sup_norm(&f, 0.0) - plain).abs() < 1e-15);
    }

    #[test]
    fn expansion_reassembles_input(c0 in -2.0f64..2.0, c1 in -2.0f64..2.0, c2 in -1.0f64..1.0) {
        let g = build_grid(3, 1.0, 12.0, 48, 4).unwrap();
        let v = Field::scalar_fn(&g, 3.0, move |r, w| (-3.0 * r).exp() * (c0 + c1 * w[2]) + c2 * (-4.5 * r).exp());
        let y = Field::from_fn(&g, Kind::OneForm, 3.0, move |r, w, out| {
            for a in 0..3 { out[a] = (-3.0 * r).exp() * (c1 * w[a] + c2 * w[0]); }
        });
        let exp = extract_expansion(&v, &y).unwrap();
        let (mv, my) = exp.model(&g);
        let dv = mv.add(&exp.v1).sub(&v).max_abs();
        let dy = my.add(&exp.y1).sub(&y).max_abs();
        prop_assert!(dv <= 1e-15 * v.max_abs().max(1e-300) * 4.0 && dy <= 1e-15 * y.max_abs().max(1e-300) * 4.0);
    }

    #[test]
    fn cutoff_stays_in_unit_interval(lambda in 1.0f64..6.0) {
        let g = build_grid(3, 1.0, 12.0, 32, 4).unwrap();
        let chi = cutoff_chi(lambda, &g).unwrap();
        prop_assert!(chi.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
