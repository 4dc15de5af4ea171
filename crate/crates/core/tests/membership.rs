use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starkit::dsl::parse_dsl;
use starkit::lattice::SearchMode;
use starkit::measure::{ResonantSpec, Resonator};
use starkit::{Expr, Vec2};

fn registered() -> Vec<(&'static str, Expr)> {
    vec![
        ("height", Expr::height()),
        ("multiplicative", Expr::multiplicative()),
        ("union_jack", Expr::union_jack()),
        ("irrational_cusp", Expr::irrational_cusp()),
        ("slope_2_3", parse_dsl("gm(abs(2,-3),abs(1,1))").unwrap()),
        ("steep", parse_dsl("gm(abs(0,1),abs(1,0),abs(1,0))").unwrap()),
    ]
}

fn agree(name: &str, res: &Resonator, qs: impl Iterator<Item = u64> + Clone, n: usize, restricted: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for q in qs {
        for _ in 0..n {
            let x = Vec2::new(rng.random(), rng.random());
            let eps = 10f64.powf(rng.random_range(-3.0..-0.5));
            let spec = ResonantSpec { q, epsilon: eps, restricted };
            let fast = res.minimum(x, &spec, SearchMode::Fast).unwrap();
            let full = res.minimum(x, &spec, SearchMode::Exhaustive).unwrap();
            assert_eq!(fast.map(|m| m.1), full.map(|m| m.1), "{name} q={q} x={x:?}");
            let a = res.membership(x, &spec, SearchMode::Fast).unwrap();
            let b = res.membership(x, &spec, SearchMode::Exhaustive).unwrap();
            assert_eq!(a.is_some(), b.is_some(), "{name} q={q} x={x:?}");
        }
    }
}

#[test]
fn fast_search_equals_enumeration() {
    for (name, f) in registered() {
        let res = Resonator::new(&f).unwrap();
        agree(name, &res, 1..=64, 40, false);
    }
}

#[test]
fn restricted_fast_search_equals_enumeration() {
    for (name, f) in registered() {
        let res = Resonator::new(&f).unwrap();
        if res.rectangle().is_none() {
            continue;
        }
        agree(name, &res, [2, 3, 5, 6, 12, 30, 64].into_iter(), 30, true);
    }
}
