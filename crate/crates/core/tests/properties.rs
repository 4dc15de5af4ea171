use proptest::prelude::*;

use starkit::circle::{GapTracker, Rotation};
use starkit::dsl::{from_json, parse_dsl, to_json};
use starkit::transference::{
    build_matrices, find_nu, geometric_mean_abs, nearest_signed_distance, phi_check, MatrixKind, NuVector,
    TransferParams,
};
use starkit::{to_dsl, Expr, LinearForm, Scalar, Vec2};

fn scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        (-6i64..=6, 1i64..=5).prop_map(|(n, d)| Scalar::rational(n, d)),
        (-3i64..=3, 1i64..=3, 0usize..3).prop_map(|(n, d, k)| {
            let s = [Scalar::sqrt2(), Scalar::sqrt3(), Scalar::inv_sqrt2()][k].clone();
            let c = Scalar::rational(n, d);
            let (r, _) = c.mul_exact(&s);
            if n == 0 {
                c
            } else {
                Scalar::new(r, s.surd())
            }
        }),
    ]
}

fn atom() -> impl Strategy<Value = Expr> {
    (scalar(), scalar())
        .prop_filter("nonzero form", |(a, b)| !(a.is_zero() && b.is_zero()))
        .prop_map(|(a, b)| Expr::abs(LinearForm::new(a, b).unwrap()))
}

fn expr() -> impl Strategy<Value = Expr> {
    atom().prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(|v| Expr::min(v).unwrap()),
            prop::collection::vec(inner.clone(), 1..4).prop_map(|v| Expr::max(v).unwrap()),
            prop::collection::vec(inner.clone(), 1..4).prop_map(|v| Expr::geo_mean(v).unwrap()),
            (1i64..=9, 1i64..=4, inner).prop_map(|(n, d, e)| Expr::scale(Scalar::rational(n, d), e).unwrap()),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec2> {
    (-50.0f64..50.0, -50.0f64..50.0).prop_map(|(a, b)| Vec2::new(a, b))
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn dsl_round_trip(e in expr()) {
        let text = to_dsl(&e);
        let back = parse_dsl(&text).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(to_dsl(&back), text);
    }

    #[test]
    fn json_round_trip(e in expr()) {
        prop_assert_eq!(from_json(&to_json(&e)).unwrap(), e);
    }

    #[test]
    fn positive_homogeneity(e in expr(), x in point(), t in 1e-3f64..1e3) {
        let lhs = e.eval(x.scale(t));
        let rhs = t * e.eval(x);
        prop_assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn star_body_rays(e in expr(), x in point(), t in 0.0f64..1.0) {
        let v = e.eval(x);
        prop_assert!(v >= 0.0);
        prop_assert!(e.eval(x.scale(t)) <= v * (1.0 + 1e-12));
        prop_assert!(close(e.eval(Vec2::new(-x.x1, -x.x2)), v, 1e-12));
    }

    #[test]
    fn nearest_distance_range(x in -1e6f64..1e6) {
        let d = nearest_signed_distance(x);
        prop_assert!((-0.5..=0.5).contains(&d));
        prop_assert!(((x - d) - (x - d).round()).abs() < 1e-6);
    }

    #[test]
    fn find_nu_iff_geometric_mean(
        x in prop::collection::vec(-1.0f64..1.0, 2..5),
        lambda in 1e-3f64..1.0,
    ) {
        let gm = geometric_mean_abs(&x);
        match find_nu(&x, lambda) {
            Some(nu) => {
                prop_assert!(gm <= lambda);
                prop_assert!((nu.product() - 1.0).abs() < 1e-9);
                let h = x.iter().zip(&nu.nu).map(|(a, v)| (a * v).abs()).fold(0.0, f64::max);
                prop_assert!(h <= lambda * (1.0 + 1e-9), "H_ν = {h} > {lambda}");
            }
            None => prop_assert!(gm > lambda),
        }
    }

    #[test]
    fn phi_is_integral(
        x in prop::collection::vec(0.0f64..1.0, 2..5),
        lambda in 1e-2f64..1.0,
        mu in 1.0f64..100.0,
        logs in prop::collection::vec(-1.0f64..1.0, 4),
        a in prop::collection::vec(-30i64..=30, 5),
        b in prop::collection::vec(-30i64..=30, 5),
    ) {
        let n = x.len();
        let mut nu: Vec<f64> = logs[..n.min(4)].iter().map(|v| v.exp()).collect();
        nu.resize(n, 1.0);
        let fix = nu.iter().product::<f64>().powf(-1.0 / n as f64);
        nu.iter_mut().for_each(|v| *v *= fix);
        let nu = NuVector { nu };
        let p = TransferParams::new(lambda, mu).unwrap();
        let ma = build_matrices(MatrixKind::A, &x, &p, &nu).unwrap();
        let mb = build_matrices(MatrixKind::Astar, &x, &p, &nu).unwrap();
        let (v, t) = phi_check(&ma, &mb, &a[..=n], &b[..=n]).unwrap();
        prop_assert!((v - t as f64).abs() <= 1e-8, "{v} vs {t}");
    }

    #[test]
    fn three_gaps(step in 0.0f64..1.0, start in 0.0f64..1.0, n in 1u64..600) {
        let rot = Rotation::from_f64(step, start);
        let mut tr = GapTracker::new();
        for k in 1..=n {
            tr.insert(rot.point(k));
        }
        prop_assert_eq!(tr.total(), 1u128 << 64);
        prop_assert!(tr.distinct_exact() <= 3);
    }
}
