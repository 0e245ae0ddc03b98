//! `oracle-check`: every estimator compared against exhaustive enumeration.
//!
//! Sample sizes are smaller than the acceptance suite so the whole run takes
//! seconds; all seeds are fixed, so a green run stays green.

use std::path::Path;

use anyhow::Result;
use clap::ValueEnum;
use proposal_programs::oracle::{self, fixtures, WeightedPair};
use proposal_programs::parallel::map_indexed;
use proposal_programs::samplers::{importance_sample, mh_chain, ProposalKernel, TransitionKernel};
use proposal_programs::trainer::estimate_gradient;
use proposal_programs::{assess, ChoiceMap, OutputSelection, ParamStore, Seed, Value};

use crate::CheckFailure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Marginals,
    Unbiasedness,
    Exactness,
    AppendixA1,
    AppendixA2,
    Jensen,
    Is,
    Mh,
    Gradient,
}

const EXACT_TOL: f64 = 1e-12;
const SE_BOUND: f64 = 4.0;
const UNBIASEDNESS_DRAWS: usize = 20_000;
const IS_PARTICLES: usize = 20_000;
const MH_STEPS: usize = 50_000;
const MH_ALPHA: f64 = 1e-3;
const MH_TV: f64 = 0.02;
const GRADIENT_DRAWS: usize = 50_000;
const MASTER: Seed = Seed(20_240_601);

struct Check {
    name: String,
    passed: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn error(name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn within_se(name: String, mean: f64, se: f64, exact: f64) -> Check {
    let z = (mean - exact).abs() / se;
    // absolute floor for zero-variance estimators
    let passed = (mean - exact).abs() <= SE_BOUND * se + EXACT_TOL;
    Check::new(name, passed, format!("mean {mean:.6} exact {exact:.6} |z| {z:.2}"))
}

fn marginals(dir: &Path) -> Vec<Check> {
    let refs = match oracle::load_reference_marginals(dir) {
        Ok(r) if !r.is_empty() => r,
        Ok(_) => return vec![Check::new("marginals", false, format!("no reference files in {}", dir.display()))],
        Err(e) => return vec![Check::error("marginals", e)],
    };
    refs.iter()
        .map(|r| {
            let name = format!("marginals/{}", r.name);
            let Some(program) = fixtures::by_name(&r.fixture) else {
                return Check::new(name, false, format!("unknown fixture `{}`", r.fixture));
            };
            match oracle::enumerate(&program, &(), &ParamStore::new()) {
                Ok(e) => {
                    let exact = oracle::exact_marginal(&e, &r.z);
                    let dev = (exact - r.exact_marginal).abs();
                    Check::new(name, dev <= EXACT_TOL, format!("enumerated {exact:.12} stored {:.12} deviation {dev:.1e}", r.exact_marginal))
                }
                Err(e) => Check::error(name, e),
            }
        })
        .collect()
}

fn unbiasedness(dir: &Path) -> Vec<Check> {
    let refs = match oracle::load_reference_marginals(dir) {
        Ok(r) => r,
        Err(e) => return vec![Check::error("unbiasedness", e)],
    };
    refs.iter()
        .enumerate()
        .map(|(i, r)| {
            let name = format!("unbiasedness/{}", r.name);
            let Some(program) = fixtures::by_name(&r.fixture) else {
                return Check::new(name, false, format!("unknown fixture `{}`", r.fixture));
            };
            let outputs = r.z.selection();
            let seed = MASTER.derive(1).derive(i as u64);
            let draws: Result<Vec<f64>, _> = map_indexed(UNBIASEDNESS_DRAWS, |d| {
                assess(&program, &(), &ParamStore::new(), &r.z, 1, &outputs, seed.derive(d as u64)).map(|e| e.xi_hat())
            })
            .into_iter()
            .collect();
            match draws {
                Ok(d) => {
                    let (mean, se) = mean_and_se(&d);
                    within_se(name, mean, se, r.exact_marginal)
                }
                Err(e) => Check::error(name, e),
            }
        })
        .collect()
}

fn exactness() -> Vec<Check> {
    let program = fixtures::no_internal::<()>();
    let params = ParamStore::new();
    let outputs = fixtures::outputs_of("no-internal").expect("fixture names its outputs");
    let enumerated = match oracle::enumerate(&program, &(), &params) {
        Ok(e) => e,
        Err(e) => return vec![Check::error("exactness", e)],
    };
    let marginals = match enumerated.output_marginals(&outputs) {
        Ok(m) => m,
        Err(e) => return vec![Check::error("exactness", e)],
    };
    [1usize, 5]
        .into_iter()
        .map(|k| {
            let name = format!("exactness/no-internal/K={k}");
            let mut worst = 0.0f64;
            for (i, (z, p)) in marginals.iter().enumerate() {
                match assess(&program, &(), &params, z, k, &outputs, MASTER.derive(2).derive(i as u64)) {
                    Ok(e) => worst = worst.max((e.log_xi_hat - p.ln()).abs()),
                    Err(e) => return Check::error(name, e),
                }
            }
            Check::new(name, worst <= EXACT_TOL, format!("max |log ξ̂ - log p| {worst:.1e} over {} outputs", marginals.len()))
        })
        .collect()
}

fn appendix_a1() -> Vec<Check> {
    let name = "appendix-a1/two-coin/K=2";
    let report = oracle::check_importance_weight_identity(
        &fixtures::two_coin::<()>(),
        &(),
        &ParamStore::new(),
        &fixtures::two_coin_target(),
        &fixtures::two_coin_support(),
        2,
    );
    vec![match report {
        Ok(r) => Check::new(name, r.tuples > 0 && r.max_deviation <= EXACT_TOL, format!("{} tuples, max deviation {:.1e}", r.tuples, r.max_deviation)),
        Err(e) => Check::error(name, e),
    }]
}

fn appendix_a2() -> Vec<Check> {
    let name = "appendix-a2/two-coin/K=2";
    let report = oracle::check_acceptance_ratio_identity(
        &fixtures::two_coin::<ChoiceMap>(),
        &ParamStore::new(),
        &fixtures::two_coin_target(),
        &fixtures::two_coin_support(),
        &OutputSelection::from_addresses(["z"]),
        2,
    );
    vec![match report {
        Ok(r) => Check::new(name, r.tuples > 0 && r.max_deviation <= EXACT_TOL, format!("{} tuples, max deviation {:.1e}", r.tuples, r.max_deviation)),
        Err(e) => Check::error(name, e),
    }]
}

/// Training pairs drawn from the program's own output marginal.
fn self_pairs(name: &str) -> Result<Vec<WeightedPair<()>>, oracle::OracleError> {
    let program = fixtures::by_name(name).expect("known fixture");
    let outputs = fixtures::outputs_of(name).expect("fixture names its outputs");
    let e = oracle::enumerate(&program, &(), &ParamStore::new())?;
    Ok(e.output_marginals(&outputs)?
        .into_iter()
        .map(|(z, weight)| WeightedPair { input: (), z, weight })
        .collect())
}

fn jensen() -> Vec<Check> {
    let mut checks = Vec::new();
    for (name, strict) in [("two-coin", true), ("no-internal", false)] {
        let program = fixtures::by_name(name).expect("known fixture");
        for k in 1..=3 {
            let label = format!("jensen/{name}/K={k}");
            let result = self_pairs(name).and_then(|pairs| oracle::exact_j_and_jk(&program, &pairs, &ParamStore::new(), k));
            checks.push(match result {
                Ok(o) => {
                    let gap = o.j - o.jk;
                    let passed = if strict { gap > EXACT_TOL } else { gap.abs() <= EXACT_TOL };
                    let relation = if strict { "strict" } else { "equal" };
                    Check::new(label, passed, format!("J {:.12} J^K {:.12} gap {gap:.3e} ({relation})", o.j, o.jk))
                }
                Err(e) => Check::error(label, e),
            });
        }
    }
    checks
}

fn is_true(z: &ChoiceMap) -> f64 {
    f64::from(matches!(z.get_str("z"), Some(Value::Bool(true))))
}

fn importance() -> Vec<Check> {
    let target = fixtures::two_coin_target();
    let support = fixtures::two_coin_support();
    let exact = match oracle::exact_expectation(&target, &support, is_true) {
        Ok(x) => x,
        Err(e) => return vec![Check::error("is", e)],
    };
    let program = fixtures::two_coin::<()>();
    let outputs = OutputSelection::from_addresses(["z"]);
    [1usize, 10]
        .into_iter()
        .map(|k| {
            let name = format!("is/two-coin/K={k}");
            let seed = MASTER.derive(3).derive(k as u64);
            match importance_sample(&target, &program, &(), &ParamStore::new(), &outputs, IS_PARTICLES, k, is_true, seed) {
                Ok(r) => {
                    let se = r
                        .samples
                        .iter()
                        .zip(r.normalized_weights())
                        .map(|(s, w)| (w * (is_true(&s.z) - r.estimate)).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    within_se(name, r.estimate, se, exact)
                }
                Err(e) => Check::error(name, e),
            }
        })
        .collect()
}

fn mh() -> Vec<Check> {
    let target = fixtures::four_state_target();
    let support = fixtures::four_state_support();
    let exact = match oracle::exact_target_distribution(&target, &support) {
        Ok(p) => p,
        Err(e) => return vec![Check::error("mh", e)],
    };
    let program = fixtures::four_state_kernel();
    let params = ParamStore::new();
    [1usize, 2, 10]
        .into_iter()
        .map(|k| {
            let name = format!("mh/four-state/K={k}");
            let kernel = ProposalKernel {
                program: &program,
                params: &params,
                k,
                outputs: OutputSelection::from_addresses(["s"]),
            };
            let kernels: [&dyn TransitionKernel; 1] = [&kernel];
            let z0 = support[0].clone();
            let chain = match mh_chain(&target, &kernels, z0, MH_STEPS, MASTER.derive(4).derive(k as u64)) {
                Ok(c) => c,
                Err(e) => return Check::error(name, e),
            };
            let counts = oracle::occupancy(&chain.iterates[1..], &support);
            let total = counts.iter().sum::<u64>() as f64;
            let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
            match (oracle::chi_square_gof(&counts, &exact), oracle::tv_distance(&empirical, &exact)) {
                (Ok(chi), Ok(tv)) => Check::new(
                    name,
                    chi.p_value >= MH_ALPHA && tv < MH_TV,
                    format!("chi-square {:.3} (dof {}) p-value {:.4} TV {tv:.4}", chi.statistic, chi.dof, chi.p_value),
                ),
                (Err(e), _) | (_, Err(e)) => Check::error(name, e),
            }
        })
        .collect()
}

fn gradient() -> Vec<Check> {
    let params = fixtures::parametrized_two_coin_params(0.3, -1.0, 1.2);
    let program = fixtures::parametrized_two_coin::<()>();
    let pairs = vec![
        WeightedPair { input: (), z: ChoiceMap::new().with("z", true), weight: 0.7 },
        WeightedPair { input: (), z: ChoiceMap::new().with("z", false), weight: 0.3 },
    ];
    let k = 2;
    let exact = match oracle::exact_grad_jk(&program, &pairs, &params, k) {
        Ok(g) => g.flatten(),
        Err(e) => return vec![Check::error("gradient", e)],
    };
    let mut checks = Vec::new();
    match oracle::finite_difference_grad_jk(&program, &pairs, &params, k, 1e-6) {
        Ok(fd) => {
            let dev = exact.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            checks.push(Check::new("gradient/exact-vs-finite-difference", dev <= 1e-6, format!("max deviation {dev:.2e}")));
        }
        Err(e) => checks.push(Check::error("gradient/exact-vs-finite-difference", e)),
    }

    // Stratified over the two training pairs: mean = Σ w m_z, var = Σ w² s_z².
    let dims = exact.len();
    let mut mean = vec![0.0; dims];
    let mut var = vec![0.0; dims];
    for (p, pair) in pairs.iter().enumerate() {
        let seed = MASTER.derive(5).derive(p as u64);
        let draws: Result<Vec<Vec<f64>>, _> = map_indexed(GRADIENT_DRAWS, |d| {
            estimate_gradient(&program, &(), &pair.z, &params, k, seed.derive(d as u64)).map(|g| g.grad.flatten())
        })
        .into_iter()
        .collect();
        let draws = match draws {
            Ok(d) => d,
            Err(e) => return vec![Check::error("gradient/unbiased", e)],
        };
        for c in 0..dims {
            let column: Vec<f64> = draws.iter().map(|g| g[c]).collect();
            let (m, se) = mean_and_se(&column);
            mean[c] += pair.weight * m;
            var[c] += (pair.weight * se).powi(2);
        }
    }
    for (c, name) in fixtures::GRAD_PARAM_NAMES.iter().enumerate() {
        checks.push(within_se(format!("gradient/unbiased/{name}"), mean[c], var[c].sqrt(), exact[c]));
    }
    checks
}

fn selected(suite: Suite, fixtures_dir: &Path) -> Vec<Check> {
    let all = suite == Suite::All;
    let mut checks = Vec::new();
    let mut add = |s: Suite, f: &dyn Fn() -> Vec<Check>| {
        if all || suite == s {
            checks.extend(f());
        }
    };
    add(Suite::Marginals, &|| marginals(fixtures_dir));
    add(Suite::Unbiasedness, &|| unbiasedness(fixtures_dir));
    add(Suite::Exactness, &exactness);
    add(Suite::AppendixA1, &appendix_a1);
    add(Suite::AppendixA2, &appendix_a2);
    add(Suite::Jensen, &jensen);
    add(Suite::Is, &importance);
    add(Suite::Mh, &mh);
    add(Suite::Gradient, &gradient);
    checks
}

pub fn run(suite: Suite, fixtures_dir: &Path) -> Result<()> {
    let checks = selected(suite, fixtures_dir);
    for c in &checks {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    println!("{} passed, {} failed", checks.len() - failed.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CheckFailure(failed).into())
    }
}
