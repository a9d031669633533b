mod common;

use common::brute_loglik;
use lme_select::model::{neg_loglik, omega};
use lme_select::regularizer::ProxRequest;
use lme_select::simulator::{accuracy, generate, GroundTruth, SimConfig};
use lme_select::verify::{random_point, random_problem};
use lme_select::{RegKind, Regularizer};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn regularizer(kind: RegKind, lambda: f64, weight: f64, len: usize) -> Regularizer {
    match kind {
        RegKind::Alasso => Regularizer::alasso(lambda, vec![weight; len]).unwrap(),
        _ => Regularizer::new(kind, lambda).unwrap(),
    }
}

fn kind() -> impl Strategy<Value = RegKind> {
    prop_oneof![Just(RegKind::L0), Just(RegKind::L1), Just(RegKind::Alasso), Just(RegKind::Scad)]
}

fn prox_objective(reg: &Regularizer, w: &DVector<f64>, x: &DVector<f64>, t: f64) -> f64 {
    t * reg.penalty(w).unwrap() + 0.5 * (w - x).norm_squared()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_beats_any_feasible_candidate(
        kind in kind(),
        lambda in 0.01f64..5.0,
        weight in 0.1f64..4.0,
        t in 0.05f64..3.0,
        x in prop::collection::vec(-10.0f64..10.0, 1..6),
        cand in prop::collection::vec(-10.0f64..10.0, 6),
        tail in 0usize..6,
    ) {
        let n = x.len();
        let tail = tail.min(n);
        let reg = regularizer(kind, lambda, weight, n);
        let x = DVector::from_vec(x);
        let w = reg.prox(&ProxRequest::new(x.clone(), t, tail)).unwrap();
        prop_assert!(w.rows(n - tail, tail).iter().all(|v| *v >= 0.0));
        let mut c = DVector::from_column_slice(&cand[..n]);
        for v in c.rows_mut(n - tail, tail).iter_mut() {
            *v = v.abs();
        }
        prop_assert!(prox_objective(&reg, &w, &x, t) <= prox_objective(&reg, &c, &x, t) + 1e-12);
        let zero = DVector::zeros(n);
        prop_assert!(prox_objective(&reg, &w, &x, t) <= prox_objective(&reg, &zero, &x, t) + 1e-12);
    }

    #[test]
    fn convex_prox_is_nonexpansive(
        lambda in 0.0f64..5.0,
        t in 0.05f64..3.0,
        a in prop::collection::vec(-10.0f64..10.0, 4),
        b in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let reg = Regularizer::l1(lambda);
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let pa = reg.prox(&ProxRequest::new(a.clone(), t, 2)).unwrap();
        let pb = reg.prox(&ProxRequest::new(b.clone(), t, 2)).unwrap();
        prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
    }

    #[test]
    fn accuracy_is_symmetric_and_bounded(
        est in prop::collection::vec(any::<bool>(), 8),
        tru in prop::collection::vec(any::<bool>(), 8),
    ) {
        let t1 = GroundTruth { beta_mask: tru[..4].to_vec(), gamma_mask: tru[4..].to_vec() };
        let t2 = GroundTruth { beta_mask: est[..4].to_vec(), gamma_mask: est[4..].to_vec() };
        let a = accuracy(&est[..4], &est[4..], &t1).unwrap();
        let b = accuracy(&tru[..4], &tru[4..], &t2).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn likelihood_matches_brute_force(seed in any::<u64>(), p in 1usize..4, q in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob = random_problem(&mut rng, p, q, 3, 4).unwrap();
        let pt = random_point(&mut rng, p, q);
        let b: Vec<f64> = pt.beta.iter().copied().collect();
        let g: Vec<f64> = pt.gamma.iter().copied().collect();
        let brute = brute_loglik(&prob, &b, &g);
        prop_assert!((neg_loglik(&prob, &pt).unwrap() - brute).abs() <= 1e-9 * brute.abs().max(1.0));
        let om = omega(&prob, 0, &pt.gamma).unwrap();
        prop_assert_eq!(om.clone(), om.transpose());
    }

    #[test]
    fn simulation_is_deterministic(seed in 0u64..10_000) {
        let cfg = SimConfig { group_sizes: vec![3, 5], ..SimConfig::with_seed(seed) };
        let (a, _) = generate(&cfg).unwrap();
        let (b, _) = generate(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let (c, _) = generate(&SimConfig { seed: seed + 1, ..cfg }).unwrap();
        prop_assert_ne!(&a, &c);
    }
}
