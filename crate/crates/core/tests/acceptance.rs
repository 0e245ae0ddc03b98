//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each (plus indented details) and exits nonzero if any failed.
//!
//! `cargo test --test acceptance -- <substring>` runs only the criteria whose
//! name contains the substring.

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proposal_programs::dist::{Distribution, ParamGrad};
use proposal_programs::linreg::{
    model_target, posterior_mean_line, sample_model, x_grid, ModelTraining, NnProposal, PriorProposal,
    RansacNnProposal,
};
use proposal_programs::nnet::Mlp;
use proposal_programs::oracle::{self, fixtures, WeightedPair};
use proposal_programs::parallel::map_indexed;
use proposal_programs::samplers::{importance_sample, mh_chain, ProposalKernel, TransitionKernel};
use proposal_programs::trainer::{estimate_gradient, objective_estimate, train, AdamConfig, OptState, TrainConfig};
use proposal_programs::{assess, ChoiceMap, OutputSelection, ParamStore, ProposalProgram, Seed, Value};
use rand::Rng;

const SE_BOUND: f64 = 4.0;
const EXACT_TOL: f64 = 1e-12;

#[derive(Default)]
struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        let detail = detail.into();
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
        self.passed &= ok;
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `|mean - exact| <= 4 SE`, with a round-off floor for zero-variance estimators.
fn within_se(out: &mut Outcome, label: &str, mean: f64, se: f64, exact: f64) {
    let dev = (mean - exact).abs();
    out.check(
        dev <= SE_BOUND * se + EXACT_TOL,
        format!("{label}: mean {mean:.6} exact {exact:.6} se {se:.2e} |z| {:.2}", dev / se),
    );
}

fn unbiasedness() -> Outcome {
    let mut out = Outcome::new();
    let params = ParamStore::new();
    for (f, name) in ["noisy-sum", "chain", "no-internal"].into_iter().enumerate() {
        let program = fixtures::by_name(name).unwrap();
        let outputs = fixtures::outputs_of(name).unwrap();
        let enumerated = oracle::enumerate(&program, &(), &params).unwrap();
        let marginals = enumerated.output_marginals(&outputs).unwrap();
        for (o, (z, _)) in marginals.iter().take(3).enumerate() {
            let exact = oracle::exact_marginal(&enumerated, z);
            let seed = Seed(101).derive(f as u64).derive(o as u64);
            let draws = map_indexed(100_000, |d| {
                assess(&program, &(), &params, z, 1, &outputs, seed.derive(d as u64))
                    .unwrap()
                    .xi_hat()
            });
            let (mean, se) = mean_and_se(&draws);
            within_se(&mut out, &format!("{name} {z:?}"), mean, se, exact);
        }
    }
    out
}

fn exactness() -> Outcome {
    let mut out = Outcome::new();
    let program = fixtures::no_internal::<()>();
    let params = ParamStore::new();
    let outputs = fixtures::outputs_of("no-internal").unwrap();
    let marginals = oracle::enumerate(&program, &(), &params)
        .unwrap()
        .output_marginals(&outputs)
        .unwrap();
    for k in [1, 5] {
        let worst = marginals
            .iter()
            .enumerate()
            .map(|(i, (z, p))| {
                let e = assess(&program, &(), &params, z, k, &outputs, Seed(202).derive(i as u64)).unwrap();
                (e.log_xi_hat - p.ln()).abs()
            })
            .fold(0.0, f64::max);
        out.check(
            worst <= EXACT_TOL,
            format!("K={k}: max |log estimate - log p| {worst:.1e} over {} output traces", marginals.len()),
        );
    }
    out
}

fn is_true(z: &ChoiceMap) -> f64 {
    f64::from(matches!(z.get_str("z"), Some(Value::Bool(true))))
}

/// Standard deviation of the self-normalized estimate over bootstrap
/// resamples of the particles.
fn bootstrap_se(log_weights: &[f64], values: &[f64], resamples: usize, seed: Seed) -> f64 {
    let n = log_weights.len();
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let estimates = map_indexed(resamples, |b| {
        let mut rng = seed.derive(b as u64).stream();
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            num += weights[i] * values[i];
            den += weights[i];
        }
        num / den
    });
    mean_and_se(&estimates).1 * (resamples as f64).sqrt()
}

fn importance_consistency() -> Outcome {
    let mut out = Outcome::new();
    let target = fixtures::two_coin_target();
    let exact = oracle::exact_expectation(&target, &fixtures::two_coin_support(), is_true).unwrap();
    let program = fixtures::two_coin::<()>();
    let outputs = OutputSelection::from_addresses(["z"]);
    let params = ParamStore::new();
    for k in [1, 10] {
        let seed = Seed(303).derive(k as u64);
        let run = |n| importance_sample(&target, &program, &(), &params, &outputs, n, k, is_true, seed).unwrap();
        let large = run(100_000);
        let small = run(1_000);
        let log_weights: Vec<f64> = large.samples.iter().map(|s| s.log_weight).collect();
        let values: Vec<f64> = large.samples.iter().map(|s| is_true(&s.z)).collect();
        let se = bootstrap_se(&log_weights, &values, 200, seed.derive(u64::MAX));
        let err_large = (large.estimate - exact).abs();
        let err_small = (small.estimate - exact).abs();
        out.check(
            err_large <= SE_BOUND * se,
            format!("K={k}: estimate {:.6} exact {exact:.6} bootstrap se {se:.2e} |z| {:.2}", large.estimate, err_large / se),
        );
        out.check(
            err_large <= err_small,
            format!("K={k}: error {err_large:.2e} at N=1e5 vs {err_small:.2e} at N=1e3"),
        );
    }
    out
}

fn mh_stationarity() -> Outcome {
    let mut out = Outcome::new();
    let target = fixtures::four_state_target();
    let support = fixtures::four_state_support();
    let exact = oracle::exact_target_distribution(&target, &support).unwrap();
    let program = fixtures::four_state_kernel();
    let params = ParamStore::new();
    for k in [1, 2, 10] {
        let kernel = ProposalKernel {
            program: &program,
            params: &params,
            k,
            outputs: OutputSelection::from_addresses(["s"]),
        };
        let kernels: [&dyn TransitionKernel; 1] = [&kernel];
        let chain = mh_chain(&target, &kernels, support[0].clone(), 200_000, Seed(404).derive(k as u64)).unwrap();
        let counts = oracle::occupancy(&chain.iterates[1..], &support);
        let total = counts.iter().sum::<u64>() as f64;
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        let chi = oracle::chi_square_gof(&counts, &exact).unwrap();
        let tv = oracle::tv_distance(&empirical, &exact).unwrap();
        out.check(
            chi.p_value >= 1e-3,
            format!("K={k}: chi-square {:.3} dof {} p-value {:.4} (acceptance rate {:.3})", chi.statistic, chi.dof, chi.p_value, chain.accept_rates[0]),
        );
        out.check(tv < 0.02, format!("K={k}: TV(empirical, exact) {tv:.4}"));
    }
    out
}

fn extended_space_identities() -> Outcome {
    let mut out = Outcome::new();
    let params = ParamStore::new();
    let a1 = oracle::check_importance_weight_identity(
        &fixtures::two_coin::<()>(),
        &(),
        &params,
        &fixtures::two_coin_target(),
        &fixtures::two_coin_support(),
        2,
    )
    .unwrap();
    out.check(
        a1.tuples == 8 && a1.max_deviation <= EXACT_TOL,
        format!("extended importance weight: {} tuples, max deviation {:.1e}", a1.tuples, a1.max_deviation),
    );
    let a2 = oracle::check_acceptance_ratio_identity(
        &fixtures::two_coin::<ChoiceMap>(),
        &params,
        &fixtures::two_coin_target(),
        &fixtures::two_coin_support(),
        &OutputSelection::from_addresses(["z"]),
        2,
    )
    .unwrap();
    out.check(
        a2.tuples == 256 && a2.max_deviation <= EXACT_TOL,
        format!("extended acceptance ratio: {} tuples, max deviation {:.1e}", a2.tuples, a2.max_deviation),
    );
    out
}

fn jensen_bound() -> Outcome {
    let mut out = Outcome::new();
    let params = ParamStore::new();
    for (name, strict) in [("two-coin", true), ("no-internal", false)] {
        let program = fixtures::by_name(name).unwrap();
        let outputs = fixtures::outputs_of(name).unwrap();
        let pairs: Vec<WeightedPair<()>> = oracle::enumerate(&program, &(), &params)
            .unwrap()
            .output_marginals(&outputs)
            .unwrap()
            .into_iter()
            .map(|(z, weight)| WeightedPair { input: (), z, weight })
            .collect();
        for k in 1..=3 {
            match oracle::exact_j_and_jk(&program, &pairs, &params, k) {
                Ok(o) => {
                    let gap = o.j - o.jk;
                    let ok = if strict { gap > EXACT_TOL } else { gap.abs() <= EXACT_TOL };
                    let relation = if strict { "strict" } else { "equal" };
                    out.check(ok, format!("{name} K={k}: J {:.12} J^K {:.12} gap {gap:.3e} ({relation})", o.j, o.jk));
                }
                Err(e) => out.check(false, format!("{name} K={k}: {e}")),
            }
        }
    }
    out
}

fn gradient_unbiasedness() -> Outcome {
    let mut out = Outcome::new();
    let params = fixtures::parametrized_two_coin_params(0.3, -1.0, 1.2);
    let program = fixtures::parametrized_two_coin::<()>();
    let p_true = 0.7;
    let pairs = vec![
        WeightedPair { input: (), z: ChoiceMap::new().with("z", true), weight: p_true },
        WeightedPair { input: (), z: ChoiceMap::new().with("z", false), weight: 1.0 - p_true },
    ];
    let k = 2;
    let exact = oracle::exact_grad_jk(&program, &pairs, &params, k).unwrap().flatten();
    let fd = oracle::finite_difference_grad_jk(&program, &pairs, &params, k, 1e-6).unwrap();
    let fd_dev = exact.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.check(fd_dev <= 1e-6, format!("exact gradient vs finite differences (h=1e-6): max deviation {fd_dev:.2e}"));

    const DRAWS: usize = 1_000_000;
    const CHUNK: usize = 10_000;
    let dims = exact.len();
    let seed = Seed(707);
    let partial = map_indexed(DRAWS / CHUNK, |c| {
        let mut sum = vec![0.0; dims];
        let mut sum_sq = vec![0.0; dims];
        for d in c * CHUNK..(c + 1) * CHUNK {
            let draw = seed.derive(d as u64);
            let z = if draw.derive(0).stream().random::<f64>() < p_true { &pairs[0].z } else { &pairs[1].z };
            let g = estimate_gradient(&program, &(), z, &params, k, draw.derive(1)).unwrap().grad.flatten();
            for (i, v) in g.iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        (sum, sum_sq)
    });
    let n = DRAWS as f64;
    for (i, name) in fixtures::GRAD_PARAM_NAMES.iter().enumerate() {
        let sum: f64 = partial.iter().map(|(s, _)| s[i]).sum();
        let sum_sq: f64 = partial.iter().map(|(_, s)| s[i]).sum();
        let mean = sum / n;
        let var = (sum_sq - n * mean * mean) / (n - 1.0);
        within_se(&mut out, &format!("{name} over 1e6 draws"), mean, (var / n).sqrt(), exact[i]);
    }
    out
}

/// `|fd - analytic| <= 1e-4 * max(|analytic|, 1e-2)`.
fn relative_ok(fd: f64, analytic: f64) -> bool {
    (fd - analytic).abs() <= 1e-4 * analytic.abs().max(1e-2)
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Checks every partial of one distribution instance; returns the worst
/// relative error and whether all passed.
fn check_distribution(d: &Distribution, value: &Value) -> (bool, f64) {
    let lp = |d: Distribution| d.log_density(value).unwrap();
    let grad = d.grad_log_density(value).unwrap();
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    match (d, grad) {
        (Distribution::Bernoulli { p }, ParamGrad::Bernoulli { p: g }) => {
            pairs.push((central_difference(|x| lp(Distribution::Bernoulli { p: x }), *p), g));
        }
        (Distribution::Categorical { probs }, ParamGrad::Categorical { probs: g }) => {
            // Sum-preserving directions e_a - e_b keep the distribution valid.
            let n = probs.len();
            for a in 0..n {
                let b = (a + 1) % n;
                let fd = central_difference(
                    |t| {
                        let mut q = probs.clone();
                        q[a] += t - probs[a];
                        q[b] -= t - probs[a];
                        lp(Distribution::Categorical { probs: q })
                    },
                    probs[a],
                );
                pairs.push((fd, g[a] - g[b]));
            }
        }
        (Distribution::Normal { mean, std }, ParamGrad::Normal { mean: gm, std: gs }) => {
            pairs.push((central_difference(|x| lp(Distribution::Normal { mean: x, std: *std }), *mean), gm));
            pairs.push((central_difference(|x| lp(Distribution::Normal { mean: *mean, std: x }), *std), gs));
        }
        (Distribution::Cauchy { location, scale }, ParamGrad::Cauchy { location: gl, scale: gs }) => {
            pairs.push((central_difference(|x| lp(Distribution::Cauchy { location: x, scale: *scale }), *location), gl));
            pairs.push((central_difference(|x| lp(Distribution::Cauchy { location: *location, scale: x }), *scale), gs));
        }
        (Distribution::Gamma { shape, scale }, ParamGrad::Gamma { shape: gk, scale: gs }) => {
            pairs.push((central_difference(|x| lp(Distribution::Gamma { shape: x, scale: *scale }), *shape), gk));
            pairs.push((central_difference(|x| lp(Distribution::Gamma { shape: *shape, scale: x }), *scale), gs));
        }
        (d, g) => panic!("unexpected gradient {g:?} for {d:?}"),
    }
    let worst = pairs
        .iter()
        .map(|(fd, g)| (fd - g).abs() / g.abs().max(1e-2))
        .fold(0.0, f64::max);
    (pairs.iter().all(|(fd, g)| relative_ok(*fd, *g)), worst)
}

fn random_distribution(i: usize, rng: &mut impl Rng) -> Distribution {
    match i % 5 {
        0 => Distribution::Bernoulli { p: rng.random_range(0.05..0.95) },
        1 => {
            let n = rng.random_range(2..6);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            Distribution::Categorical { probs: raw.iter().map(|p| p / total).collect() }
        }
        2 => Distribution::Normal { mean: rng.random_range(-3.0..3.0), std: rng.random_range(0.3..3.0) },
        3 => Distribution::Cauchy { location: rng.random_range(-3.0..3.0), scale: rng.random_range(0.3..3.0) },
        _ => Distribution::Gamma { shape: rng.random_range(0.5..5.0), scale: rng.random_range(0.3..3.0) },
    }
}

fn check_network(rng: &mut impl Rng) -> (bool, f64) {
    let (input, hidden, output) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..4));
    let net = Mlp::new("net/");
    let mut params = ParamStore::new();
    net.init(&mut params, input, hidden, output, rng);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
    let out_grad: Vec<f64> = (0..output).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = net.forward(&params, &x).unwrap();
    let grads = net.backward(&params, &cache, &out_grad).unwrap();
    let objective = |p: &ParamStore, x: &[f64]| -> f64 {
        let (y, _) = net.forward(p, x).unwrap();
        y.iter().zip(&out_grad).map(|(a, b)| a * b).sum()
    };
    let mut pairs = Vec::new();
    for (name, analytic) in [
        (&net.h_weights, &grads.h_weights),
        (&net.h_biases, &grads.h_biases),
        (&net.out_weights, &grads.out_weights),
        (&net.out_biases, &grads.out_biases),
    ] {
        for (j, g) in analytic.iter().enumerate() {
            let base = params.get(name).unwrap().data()[j];
            let fd = central_difference(
                |v| {
                    let mut p = params.clone();
                    p.get_mut(name).unwrap().data_mut()[j] = v;
                    objective(&p, &x)
                },
                base,
            );
            pairs.push((fd, *g));
        }
    }
    for (j, g) in grads.input.iter().enumerate() {
        let fd = central_difference(
            |v| {
                let mut shifted = x.clone();
                shifted[j] = v;
                objective(&params, &shifted)
            },
            x[j],
        );
        pairs.push((fd, *g));
    }
    let worst = pairs.iter().map(|(fd, g)| (fd - g).abs() / g.abs().max(1e-2)).fold(0.0, f64::max);
    (pairs.iter().all(|(fd, g)| relative_ok(*fd, *g)), worst)
}

fn gradient_plumbing() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = Seed(808).stream();
    let (mut ok, mut worst) = (0, 0.0f64);
    for i in 0..100 {
        let d = random_distribution(i, &mut rng);
        let value = d.sample(&mut rng).unwrap();
        let (pass, w) = check_distribution(&d, &value);
        ok += usize::from(pass);
        worst = worst.max(w);
    }
    out.check(ok == 100, format!("distribution score functions: {ok}/100 instances, worst relative error {worst:.2e}"));
    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..100 {
        let (pass, w) = check_network(&mut rng);
        ok += usize::from(pass);
        worst = worst.max(w);
    }
    out.check(ok == 100, format!("network backward pass: {ok}/100 instances, worst relative error {worst:.2e}"));
    out
}

/// Desk-scale settings read from the committed config.
struct Desk {
    seed: u64,
    n: usize,
    lo: f64,
    hi: f64,
    hidden: usize,
    iter_support: usize,
    k: usize,
    m: usize,
    iterations: usize,
    particles: usize,
    inference_k: usize,
}

fn desk() -> Desk {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_scale.json");
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let u = |v: &serde_json::Value| v.as_u64().unwrap() as usize;
    assert_eq!(c["training"]["optimizer"], "adam");
    Desk {
        seed: c["seed"].as_u64().unwrap(),
        n: u(&c["dataset"]["N"]),
        lo: c["dataset"]["x_grid"]["lo"].as_f64().unwrap(),
        hi: c["dataset"]["x_grid"]["hi"].as_f64().unwrap(),
        hidden: u(&c["proposal"]["hidden_width"]),
        iter_support: u(&c["proposal"]["iter_support"]),
        k: u(&c["training"]["K"]),
        m: u(&c["training"]["M"]),
        iterations: u(&c["training"]["iterations"]),
        particles: u(&c["inference"]["N_particles"]),
        inference_k: u(&c["inference"]["K"]),
    }
}

struct Trained {
    ransac_nn: (RansacNnProposal, ParamStore, Vec<f64>),
    nn: (NnProposal, ParamStore, Vec<f64>),
}

/// Seed streams match the CLI: 1 initializes parameters, 2 drives training.
fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let d = desk();
        let seed = Seed(d.seed);
        let training = ModelTraining::new(x_grid(d.n, d.lo, d.hi)).unwrap();
        let config = TrainConfig {
            k: d.k,
            minibatch: d.m,
            iterations: d.iterations,
        };
        let run = |program: &dyn ProposalProgram<Input = _>, init: ParamStore| {
            let opt = OptState::adam(AdamConfig::default());
            let r = train(&program, &training, init, opt, config, seed.derive(2)).unwrap();
            (r.params, r.objective_log)
        };
        let rn = RansacNnProposal::new(d.n, d.hidden, d.iter_support);
        let (rn_params, rn_log) = run(&rn, rn.init_params(&mut seed.derive(1).stream()));
        let nn = NnProposal::new(d.n, d.hidden);
        let (nn_params, nn_log) = run(&nn, nn.init_params(&mut seed.derive(1).stream()));
        Trained {
            ransac_nn: (rn, rn_params, rn_log),
            nn: (nn, nn_params, nn_log),
        }
    })
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn training_improvement() -> Outcome {
    let mut out = Outcome::new();
    let d = desk();
    let t = trained();
    for (label, log) in [("RANSAC+NN", &t.ransac_nn.2), ("NN", &t.nn.2)] {
        let first = window_mean(&log[..50]);
        let last = window_mean(&log[log.len() - 50..]);
        out.check(last > first, format!("{label}: objective first-50 mean {first:.4}, last-50 mean {last:.4}"));
    }
    let training = ModelTraining::new(x_grid(d.n, d.lo, d.hi)).unwrap();
    let held_out = Seed(d.seed).derive(3);
    let rn = objective_estimate(&t.ransac_nn.0, &training, &t.ransac_nn.1, d.k, 200, held_out).unwrap();
    let nn = objective_estimate(&t.nn.0, &training, &t.nn.1, d.k, 200, held_out).unwrap();
    out.check(
        rn.mean > nn.mean,
        format!(
            "held-out objective on 200 pairs: RANSAC+NN {:.4} (se {:.3}) vs NN {:.4} (se {:.3})",
            rn.mean, rn.std_error, nn.mean, nn.std_error
        ),
    );
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn inference_quality() -> Outcome {
    let mut out = Outcome::new();
    let d = desk();
    let t = trained();
    let xs = x_grid(d.n, d.lo, d.hi);
    let base = Seed(d.seed).derive(4);
    let mut trained_err = Vec::new();
    let mut prior_err = Vec::new();
    for i in 0..20u64 {
        let (data, truth) = sample_model(&xs, &mut base.derive(i).derive(0).stream()).unwrap();
        let true_slope = match truth.get_str("slope") {
            Some(Value::Real(s)) => *s,
            other => panic!("slope latent {other:?}"),
        };
        let target = model_target(&data);
        let outputs = t.ransac_nn.0.default_outputs(&data).unwrap();
        let is_seed = base.derive(i).derive(1);
        let with_trained = importance_sample(
            &target,
            &t.ransac_nn.0,
            &data,
            &t.ransac_nn.1,
            &outputs,
            d.particles,
            d.inference_k,
            |_| 0.0,
            is_seed,
        )
        .unwrap();
        let with_prior =
            importance_sample(&target, &PriorProposal, &data, &ParamStore::new(), &outputs, d.particles, 1, |_| 0.0, is_seed)
                .unwrap();
        trained_err.push((posterior_mean_line(&with_trained).slope - true_slope).powi(2));
        prior_err.push((posterior_mean_line(&with_prior).slope - true_slope).powi(2));
    }
    let (a, b) = (median(trained_err), median(prior_err));
    out.check(
        a < b,
        format!("median squared slope error over 20 datasets, {} particles: trained RANSAC+NN {a:.5} vs prior {b:.5}", d.particles),
    );
    out
}

fn main() {
    let criteria = [
        Criterion { name: "estimator unbiasedness", budget: Duration::from_secs(60), run: unbiasedness },
        Criterion { name: "exact estimate without internal choices", budget: Duration::from_secs(60), run: exactness },
        Criterion { name: "importance sampling consistency", budget: Duration::from_secs(120), run: importance_consistency },
        Criterion { name: "MH stationarity", budget: Duration::from_secs(120), run: mh_stationarity },
        Criterion { name: "extended-space identities", budget: Duration::from_secs(60), run: extended_space_identities },
        Criterion { name: "Jensen bound", budget: Duration::from_secs(60), run: jensen_bound },
        Criterion { name: "gradient estimator unbiasedness", budget: Duration::from_secs(300), run: gradient_unbiasedness },
        Criterion { name: "gradient plumbing", budget: Duration::from_secs(30), run: gradient_plumbing },
        Criterion { name: "training improvement", budget: Duration::from_secs(600), run: training_improvement },
        Criterion { name: "inference quality", budget: Duration::from_secs(300), run: inference_quality },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (i, c) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        outcome.check(
            elapsed <= c.budget,
            format!("runtime {:.1}s (budget {}s)", elapsed.as_secs_f64(), c.budget.as_secs()),
        );
        println!("{} [{:>2}] {}", if outcome.passed { "PASS" } else { "FAIL" }, i + 1, c.name);
        for line in &outcome.details {
            println!("       {line}");
        }
        if !outcome.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
