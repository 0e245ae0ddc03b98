use proposal_programs::oracle::{fixtures, tv_distance};
use proposal_programs::samplers::importance_sample;
use proposal_programs::trainer::{
    checkpoint_from_json, checkpoint_to_json, combine_gradient, leave_one_out_log_means, ExecutionGradient, OptState,
};
use proposal_programs::{assess, ChoiceMap, Gradients, OutputSelection, ParamStore, ProbEstimate, Seed, Tensor, Value};
use proptest::prelude::*;

fn naive_log_mean(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x.exp()).sum::<f64>() / xs.len() as f64).ln()
}

proptest! {
    #[test]
    fn seed_derivation_is_deterministic(s in any::<u64>(), i in any::<u64>()) {
        prop_assert_eq!(Seed(s).derive(i), Seed(s).derive(i));
        prop_assert_ne!(Seed(s).derive(i), Seed(s).derive(i.wrapping_add(1)));
    }

    #[test]
    fn estimate_matches_naive_mean(lps in prop::collection::vec(-20.0f64..0.0, 1..12)) {
        let e = ProbEstimate::from_log_p_outputs(&lps);
        prop_assert!((e.log_xi_hat - naive_log_mean(&lps)).abs() < 1e-10);
    }

    #[test]
    fn estimate_shifts_with_inputs(lps in prop::collection::vec(-700.0f64..0.0, 1..12), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = lps.iter().map(|x| x + c).collect();
        let a = ProbEstimate::from_log_p_outputs(&lps).log_xi_hat;
        let b = ProbEstimate::from_log_p_outputs(&shifted).log_xi_hat;
        prop_assert!((a + c - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn leave_one_out_means_drop_one_execution(lps in prop::collection::vec(-10.0f64..0.0, 2..10)) {
        let loo = leave_one_out_log_means(&lps);
        for (k, v) in loo.iter().enumerate() {
            let rest: Vec<f64> = lps.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, x)| *x).collect();
            prop_assert!((v - naive_log_mean(&rest)).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_is_invariant_to_common_shift(
        lps in prop::collection::vec(-10.0f64..0.0, 2..6),
        c in -5.0f64..5.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let params = ParamStore::new().with("w", Tensor::vector(vec![0.0; 3]));
        let mut rng = Seed(seed).stream();
        let mut random_grad = || {
            let mut g = Gradients::zeros_like(&params);
            g.add_slice("w", &[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
            g
        };
        let execs: Vec<ExecutionGradient> = lps
            .iter()
            .map(|&lp| ExecutionGradient { log_p_output: lp, grad_output: random_grad(), grad_internal: random_grad() })
            .collect();
        let shifted: Vec<ExecutionGradient> = execs
            .iter()
            .map(|e| ExecutionGradient { log_p_output: e.log_p_output + c, ..e.clone() })
            .collect();
        let a = combine_gradient(&execs).unwrap().grad.flatten();
        let b = combine_gradient(&shifted).unwrap().grad.flatten();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn importance_weights_ignore_target_scale(c in 1e-3f64..1e3, seed in any::<u64>(), k in 1usize..4) {
        let target = fixtures::two_coin_target();
        let program = fixtures::two_coin::<()>();
        let outputs = OutputSelection::from_addresses(["z"]);
        let run = |t| importance_sample(t, &program, &(), &ParamStore::new(), &outputs, 20, k, |_| 0.0, Seed(seed)).unwrap();
        let a = run(&target).normalized_weights();
        let b = run(&target.scaled(c)).normalized_weights();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn no_internal_choices_give_exact_estimates(a in any::<bool>(), b in 0i64..3, k in 1usize..6, seed in any::<u64>()) {
        let program = fixtures::no_internal::<()>();
        let z = ChoiceMap::new().with("a", a).with("b", b);
        let exact = (if a { 0.3 } else { 0.7 }) * [0.5, 0.25, 0.25][b as usize];
        let e = assess(&program, &(), &ParamStore::new(), &z, k, &z.selection(), Seed(seed)).unwrap();
        prop_assert!((e.log_xi_hat - f64::ln(exact)).abs() < 1e-12);
    }

    #[test]
    fn choice_map_json_round_trip(
        reals in prop::collection::vec(-1e300f64..1e300, 0..5),
        ints in prop::collection::vec(any::<i64>(), 0..5),
        flag in any::<bool>(),
    ) {
        let mut z = ChoiceMap::new().with("flag", flag);
        for (i, r) in reals.iter().enumerate() {
            z.insert(format!("r{i}"), *r);
        }
        for (i, n) in ints.iter().enumerate() {
            z.insert(format!("n{i}"), *n);
        }
        z.insert("vec", Value::Vector(reals.clone()));
        let back = ChoiceMap::from_json(&z.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, z);
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..30), step in 1e-6f64..1.0) {
        let params = ParamStore::new().with("v", Tensor::vector(values));
        let opt = OptState::sgd(step);
        let (p, o) = checkpoint_from_json(&checkpoint_to_json(&params, &opt)).unwrap();
        prop_assert_eq!(p, params);
        prop_assert_eq!(o, opt);
    }

    #[test]
    fn tv_distance_is_a_bounded_symmetric_metric(raw in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 2..8)) {
        let sp: f64 = raw.iter().map(|r| r.0).sum();
        let sq: f64 = raw.iter().map(|r| r.1).sum();
        let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
        let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
        let d = tv_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
    }
}
