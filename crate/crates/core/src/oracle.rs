//! Exact reference computations on small discrete programs.
//!
//! Everything here works by exhaustive enumeration of execution paths using
//! the runtime's scripted execution mode, so the numbers describe the same
//! code that the estimators run.

pub mod fixtures;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::params::{Gradients, ParamStore};
use crate::runtime::{run_scripted, ExecError, ProbEstimate, ProposalProgram};
use crate::samplers::{mh_log_acceptance, UnnormalizedTarget};
use crate::special::{chi_square_sf, log_sum_exp};
use crate::trace::{agrees, restrict, split_log_prob, ChoiceMap, OutputSelection, Trace, Value};

pub const DEFAULT_BRANCH_LIMIT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("choice at `{0}` has no finite support")]
    NonEnumerable(String),
    #[error("enumeration exceeded {0} traces")]
    BranchLimit(usize),
    #[error("target has no support points with positive density")]
    EmptySupport,
    #[error("degenerate cells: {0}")]
    DegenerateCells(String),
    #[error("J^K = {jk} exceeds J = {j}")]
    JensenViolation { j: f64, jk: f64 },
    #[error("a constrained path with positive probability has zero output probability")]
    PositivityViolation,
    #[error("every K-tuple must give a positive estimate for the gradient to exist")]
    InfiniteObjective,
    #[error("reference fixture {file}: {reason}")]
    Reference { file: String, reason: String },
    #[error(transparent)]
    Exec(ExecError),
}

impl From<ExecError> for OracleError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::NonEnumerable(a) => OracleError::NonEnumerable(a.as_str().to_owned()),
            e => OracleError::Exec(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnumeratedTrace {
    pub trace: Trace,
    pub log_prob: f64,
}

impl EnumeratedTrace {
    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }
}

/// Every execution path of a program with its probability.
#[derive(Debug, Clone)]
pub struct EnumeratedProgram {
    pub traces: Vec<EnumeratedTrace>,
}

impl EnumeratedProgram {
    pub fn total_prob(&self) -> f64 {
        self.traces.iter().map(EnumeratedTrace::prob).sum()
    }

    /// Distinct output traces with their exact marginals, in first-seen order.
    pub fn output_marginals(&self, outputs: &OutputSelection) -> Result<Vec<(ChoiceMap, f64)>, OracleError> {
        let mut out: Vec<(ChoiceMap, f64)> = Vec::new();
        for t in &self.traces {
            let z = restrict(&t.trace, outputs).map_err(|e| OracleError::Exec(e.into()))?;
            match out.iter_mut().find(|(seen, _)| *seen == z) {
                Some((_, p)) => *p += t.prob(),
                None => out.push((z, t.prob())),
            }
        }
        Ok(out)
    }
}

/// Expected marginal stored as `{"fixture":name,"z":choice-map,"exact_marginal":p}`.
#[derive(Debug, Clone)]
pub struct ReferenceMarginal {
    /// File stem.
    pub name: String,
    pub fixture: String,
    pub z: ChoiceMap,
    pub exact_marginal: f64,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceDoc {
    fixture: String,
    z: serde_json::Value,
    exact_marginal: f64,
}

/// Reads every `*.json` reference file in `dir`, sorted by file name.
pub fn load_reference_marginals(dir: &Path) -> Result<Vec<ReferenceMarginal>, OracleError> {
    let bad = |file: &Path, reason: String| OracleError::Reference {
        file: file.display().to_string(),
        reason,
    };
    let listing = std::fs::read_dir(dir).map_err(|e| bad(dir, e.to_string()))?;
    let mut files: Vec<_> = listing
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path).map_err(|e| bad(path, e.to_string()))?;
            let doc: ReferenceDoc = serde_json::from_str(&text).map_err(|e| bad(path, e.to_string()))?;
            Ok(ReferenceMarginal {
                name: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                fixture: doc.fixture,
                z: ChoiceMap::from_json_value(doc.z).map_err(|e| bad(path, e.to_string()))?,
                exact_marginal: doc.exact_marginal,
            })
        })
        .collect()
}

/// Path of a constrained execution: the internal choices are enumerated and
/// the constrained ones are fixed.
#[derive(Debug, Clone)]
pub struct ConstrainedPath {
    pub trace: Trace,
    /// Probability of reaching this path, `log p(τ; x, z)`.
    pub log_p_internal: f64,
    /// `log p_O(τ; x)`; `-∞` when a constraint had zero probability.
    pub log_p_output: f64,
    pub grad_internal: Option<Gradients>,
    pub grad_output: Option<Gradients>,
}

/// Depth-first exploration of all paths.
fn explore<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    constraints: &ChoiceMap,
    track_grads: bool,
    cap: usize,
) -> Result<Vec<ConstrainedPath>, OracleError> {
    let mut pending: Vec<Vec<Value>> = vec![Vec::new()];
    let mut paths = Vec::new();
    while let Some(script) = pending.pop() {
        let run = run_scripted(program, input, params, constraints, &script, track_grads)?;
        let (log_p_output, log_p_internal) = if run.out_of_support {
            let (_, internal) = split_log_prob(&run.trace, &constraints.selection());
            (f64::NEG_INFINITY, internal)
        } else {
            split_log_prob(&run.trace, &constraints.selection())
        };
        paths.push(ConstrainedPath {
            trace: run.trace,
            log_p_internal,
            log_p_output,
            grad_internal: run.grad_internal,
            grad_output: run.grad_output,
        });
        if paths.len() > cap {
            return Err(OracleError::BranchLimit(cap));
        }
        pending.extend(run.branches.into_iter().rev());
    }
    Ok(paths)
}

/// All traces of `program` on `input`, with the default trace-count cap.
pub fn enumerate<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
) -> Result<EnumeratedProgram, OracleError> {
    enumerate_with_limit(program, input, params, DEFAULT_BRANCH_LIMIT)
}

pub fn enumerate_with_limit<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    cap: usize,
) -> Result<EnumeratedProgram, OracleError> {
    let paths = explore(program, input, params, &ChoiceMap::new(), false, cap)?;
    Ok(EnumeratedProgram {
        traces: paths
            .into_iter()
            .map(|p| EnumeratedTrace {
                log_prob: p.trace.total_log_prob(),
                trace: p.trace,
            })
            .collect(),
    })
}

/// All paths of the program with the choices in `z` fixed.
pub fn enumerate_constrained<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    z: &ChoiceMap,
    track_grads: bool,
) -> Result<Vec<ConstrainedPath>, OracleError> {
    explore(program, input, params, z, track_grads, DEFAULT_BRANCH_LIMIT)
}

/// `p(z; x)`: total probability of traces agreeing with `z`.
pub fn exact_marginal(enumerated: &EnumeratedProgram, z: &ChoiceMap) -> f64 {
    enumerated
        .traces
        .iter()
        .filter(|t| agrees(&t.trace, z))
        .map(EnumeratedTrace::prob)
        .sum()
}

/// Checks that every constrained path with positive probability has a
/// positive unconstrained probability.
pub fn check_positivity<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    z: &ChoiceMap,
) -> Result<(), OracleError> {
    let paths = enumerate_constrained(program, input, params, z, false)?;
    if paths
        .iter()
        .any(|p| p.log_p_internal > f64::NEG_INFINITY && p.log_p_output == f64::NEG_INFINITY)
    {
        return Err(OracleError::PositivityViolation);
    }
    Ok(())
}

/// Calls `f` with every index tuple in `{0..n}^k`, in lexicographic order.
fn for_each_tuple<F: FnMut(&[usize])>(n: usize, k: usize, mut f: F) {
    if n == 0 && k > 0 {
        return;
    }
    let mut idx = vec![0usize; k];
    loop {
        f(&idx);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn check_tuple_count(n: usize, k: usize) -> Result<(), OracleError> {
    let count = (n as f64).powi(k as i32);
    if count > DEFAULT_BRANCH_LIMIT as f64 {
        return Err(OracleError::BranchLimit(DEFAULT_BRANCH_LIMIT));
    }
    Ok(())
}

/// Training pair `(x, z)` with its probability under the training
/// distribution.
pub struct WeightedPair<I> {
    pub input: I,
    pub z: ChoiceMap,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    /// `J = E_r[log p(z; x)]`.
    pub j: f64,
    /// `J^K = E_r E_τ[log ξ̂]`.
    pub jk: f64,
}

/// `E_τ[log ξ̂]` over all K-tuples of constrained paths.
fn expected_log_estimate(paths: &[ConstrainedPath], k: usize) -> Result<f64, OracleError> {
    check_tuple_count(paths.len(), k)?;
    let mut total = 0.0;
    let mut lps = vec![0.0; k];
    for_each_tuple(paths.len(), k, |idx| {
        let mut log_weight = 0.0;
        for (slot, &i) in idx.iter().enumerate() {
            log_weight += paths[i].log_p_internal;
            lps[slot] = paths[i].log_p_output;
        }
        let weight = log_weight.exp();
        if weight > 0.0 {
            total += weight * ProbEstimate::from_log_p_outputs(&lps).log_xi_hat;
        }
    });
    Ok(total)
}

/// Exact `J` and `J^K`. Fails with [`OracleError::JensenViolation`] if
/// `J^K > J + 1e-12`.
pub fn exact_j_and_jk<P: ProposalProgram>(
    program: &P,
    pairs: &[WeightedPair<P::Input>],
    params: &ParamStore,
    k: usize,
) -> Result<Objectives, OracleError> {
    let mut j = 0.0;
    let mut jk = 0.0;
    for pair in pairs {
        let enumerated = enumerate(program, &pair.input, params)?;
        j += pair.weight * exact_marginal(&enumerated, &pair.z).ln();
        let paths = enumerate_constrained(program, &pair.input, params, &pair.z, false)?;
        jk += pair.weight * expected_log_estimate(&paths, k)?;
    }
    if jk > j + 1e-12 || jk.is_nan() {
        return Err(OracleError::JensenViolation { j, jk });
    }
    Ok(Objectives { j, jk })
}

/// Exact `∇θ J^K` from the score identity
/// `∇ E[log ξ̂] = E[log ξ̂ · Σ_k ∇log p(τ_k; x, z) + Σ_k W_k ∇log p_O(τ_k)]`.
pub fn exact_grad_jk<P: ProposalProgram>(
    program: &P,
    pairs: &[WeightedPair<P::Input>],
    params: &ParamStore,
    k: usize,
) -> Result<Gradients, OracleError> {
    let mut grad = Gradients::zeros_like(params);
    for pair in pairs {
        let paths = enumerate_constrained(program, &pair.input, params, &pair.z, true)?;
        check_tuple_count(paths.len(), k)?;
        let mut failure = None;
        let mut lps = vec![0.0; k];
        for_each_tuple(paths.len(), k, |idx| {
            let log_weight: f64 = idx.iter().map(|&i| paths[i].log_p_internal).sum();
            let weight = pair.weight * log_weight.exp();
            if weight == 0.0 {
                return;
            }
            for (slot, &i) in idx.iter().enumerate() {
                lps[slot] = paths[i].log_p_output;
            }
            let lse = log_sum_exp(&lps);
            if lse == f64::NEG_INFINITY {
                failure = Some(OracleError::InfiniteObjective);
                return;
            }
            let log_xi = lse - (k as f64).ln();
            for (slot, &i) in idx.iter().enumerate() {
                let path = &paths[i];
                let gi = path.grad_internal.as_ref().expect("gradients tracked");
                let go = path.grad_output.as_ref().expect("gradients tracked");
                grad.add_scaled(gi, weight * log_xi);
                let w = (lps[slot] - lse).exp();
                if w > 0.0 {
                    grad.add_scaled(go, weight * w);
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(grad)
}

/// Central finite differences of the exact `J^K` with step `h`.
pub fn finite_difference_grad_jk<P: ProposalProgram>(
    program: &P,
    pairs: &[WeightedPair<P::Input>],
    params: &ParamStore,
    k: usize,
    h: f64,
) -> Result<Vec<f64>, OracleError> {
    let base = params.flatten();
    let mut shifted = params.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut coords = base.clone();
        coords[i] = base[i] + h;
        shifted.set_flat(&coords);
        let plus = exact_j_and_jk(program, pairs, &shifted, k)?.jk;
        coords[i] = base[i] - h;
        shifted.set_flat(&coords);
        let minus = exact_j_and_jk(program, pairs, &shifted, k)?.jk;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Normalized target probabilities on `support`.
pub fn exact_target_distribution(
    target: &UnnormalizedTarget,
    support: &[ChoiceMap],
) -> Result<Vec<f64>, OracleError> {
    let logs: Vec<f64> = support.iter().map(|z| target.log_density(z)).collect();
    let lse = log_sum_exp(&logs);
    if support.is_empty() || lse == f64::NEG_INFINITY || lse.is_nan() {
        return Err(OracleError::EmptySupport);
    }
    Ok(logs.iter().map(|l| (l - lse).exp()).collect())
}

/// `E_π[f]` on a finite support.
pub fn exact_expectation<F: Fn(&ChoiceMap) -> f64>(
    target: &UnnormalizedTarget,
    support: &[ChoiceMap],
    f: F,
) -> Result<f64, OracleError> {
    let probs = exact_target_distribution(target, support)?;
    Ok(support.iter().zip(&probs).map(|(z, p)| p * f(z)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test with `cells - 1` degrees of freedom.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<ChiSquare, OracleError> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(OracleError::DegenerateCells(format!(
            "{} observed cells, {} expected",
            observed.len(),
            expected.len()
        )));
    }
    if let Some(p) = expected.iter().find(|p| !(**p > 0.0)) {
        return Err(OracleError::DegenerateCells(format!("expected probability {p}")));
    }
    let n: u64 = observed.iter().sum();
    let total: f64 = expected.iter().sum();
    let statistic = observed
        .iter()
        .zip(expected)
        .map(|(&o, &p)| {
            let e = n as f64 * p / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = observed.len() - 1;
    let p_value = chi_square_sf(statistic, dof).map_err(|e| OracleError::DegenerateCells(e.to_string()))?;
    Ok(ChiSquare {
        statistic,
        dof,
        p_value,
    })
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, OracleError> {
    if p.len() != q.len() {
        return Err(OracleError::DegenerateCells(format!("{} vs {} cells", p.len(), q.len())));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Counts of each support point, in support order.
pub fn occupancy(samples: &[ChoiceMap], support: &[ChoiceMap]) -> Vec<u64> {
    let mut counts = vec![0u64; support.len()];
    for s in samples {
        if let Some(i) = support.iter().position(|z| z == s) {
            counts[i] += 1;
        }
    }
    counts
}

/// Largest deviation found while checking an identity on all tuples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub tuples: usize,
    pub max_deviation: f64,
}

impl IdentityReport {
    fn record(&mut self, a: f64, b: f64) {
        self.tuples += 1;
        let dev = if a == b { 0.0 } else { (a - b).abs() };
        if dev.is_nan() || dev > self.max_deviation {
            self.max_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
        }
    }
}

fn path_key(trace: &Trace) -> String {
    format!("{:?}", trace.to_choice_map())
}

fn forward_log_probs<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
) -> Result<HashMap<String, f64>, OracleError> {
    Ok(enumerate(program, input, params)?
        .traces
        .iter()
        .map(|t| (path_key(&t.trace), t.log_prob))
        .collect())
}

/// Compares the importance weight of the extended target and proposal,
/// `π(z) Π p(τ_i; x, z) / ((1/K) Σ_k p(τ_k; x) Π_{i≠k} p(τ_i; x, z))`,
/// with `π̃(z) / ξ̂` for every `z` in `support` and every K-tuple of
/// constrained paths. Deviations are measured on log weights.
pub fn check_importance_weight_identity<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    target: &UnnormalizedTarget,
    support: &[ChoiceMap],
    k: usize,
) -> Result<IdentityReport, OracleError> {
    let forward = forward_log_probs(program, input, params)?;
    let mut report = IdentityReport {
        tuples: 0,
        max_deviation: 0.0,
    };
    for z in support {
        check_positivity(program, input, params, z)?;
        let paths = enumerate_constrained(program, input, params, z, false)?;
        let joint: Vec<f64> = paths
            .iter()
            .map(|p| forward.get(&path_key(&p.trace)).copied().unwrap_or(f64::NEG_INFINITY))
            .collect();
        let log_pi = target.log_density(z);
        check_tuple_count(paths.len(), k)?;
        let mut terms = vec![0.0; k];
        let mut lps = vec![0.0; k];
        for_each_tuple(paths.len(), k, |idx| {
            let constrained: f64 = idx.iter().map(|&i| paths[i].log_p_internal).sum();
            for (slot, &i) in idx.iter().enumerate() {
                terms[slot] = joint[i] + constrained - paths[i].log_p_internal;
                lps[slot] = paths[i].log_p_output;
            }
            let extended = log_pi + constrained - (log_sum_exp(&terms) - (k as f64).ln());
            let sampler = log_pi - ProbEstimate::from_log_p_outputs(&lps).log_xi_hat;
            report.record(extended, sampler);
        });
    }
    Ok(report)
}

/// Compares the Metropolis-Hastings ratio on the extended space of
/// `(z, ζ, k, τ_{1:K})` with the acceptance probability computed from
/// the two estimates, for every current state, forward index, forward path,
/// remaining constrained paths, reverse index and reverse paths.
///
/// The program takes the current state as input and proposes a full
/// replacement of it. Both sides are compared as `min(0, log ratio)`.
pub fn check_acceptance_ratio_identity<P>(
    program: &P,
    params: &ParamStore,
    target: &UnnormalizedTarget,
    support: &[ChoiceMap],
    outputs: &OutputSelection,
    k: usize,
) -> Result<IdentityReport, OracleError>
where
    P: ProposalProgram<Input = ChoiceMap>,
{
    let ln_k = (k as f64).ln();
    let mut report = IdentityReport {
        tuples: 0,
        max_deviation: 0.0,
    };
    for z in support {
        let log_pi_z = target.log_density(z);
        if log_pi_z == f64::NEG_INFINITY {
            continue;
        }
        let forward_z = enumerate(program, z, params)?;
        for fwd in &forward_z.traces {
            if fwd.log_prob == f64::NEG_INFINITY {
                continue;
            }
            let zeta = restrict(&fwd.trace, outputs).map_err(|e| OracleError::Exec(e.into()))?;
            let log_pi_zeta = target.log_density(&zeta);
            let joint_zeta = forward_log_probs(program, &zeta, params)?;
            // Paths on input z constrained to ζ, and on input ζ constrained to z.
            let here = enumerate_constrained(program, z, params, &zeta, false)?;
            let back = enumerate_constrained(program, &zeta, params, z, false)?;
            let fwd_key = path_key(&fwd.trace);
            let fwd_path = here
                .iter()
                .find(|p| path_key(&p.trace) == fwd_key)
                .expect("forward path appears among constrained paths");
            check_tuple_count(here.len() * back.len(), k)?;
            for slot in 0..k {
                let mut taus: Vec<&ConstrainedPath> = vec![fwd_path; k];
                for_each_tuple(here.len(), k - 1, |rest| {
                    let mut it = rest.iter();
                    for (j, tau) in taus.iter_mut().enumerate() {
                        if j != slot {
                            *tau = &here[*it.next().expect("k - 1 entries")];
                        }
                    }
                    let lps_fwd: Vec<f64> = taus.iter().map(|t| t.log_p_output).collect();
                    let lse_fwd = log_sum_exp(&lps_fwd);
                    let internal_fwd: f64 = taus.iter().map(|t| t.log_p_internal).sum();
                    let extended_current =
                        log_pi_z - ln_k + fwd.log_prob + internal_fwd - fwd_path.log_p_internal;
                    let kernel_back =
                        internal_fwd + fwd_path.log_p_output - lse_fwd;
                    for_each_tuple(back.len(), k, |idx| {
                        let lps_back: Vec<f64> = idx.iter().map(|&i| back[i].log_p_output).collect();
                        let lse_back = log_sum_exp(&lps_back);
                        let internal_back: f64 = idx.iter().map(|&i| back[i].log_p_internal).sum();
                        for slot_back in 0..k {
                            let chosen = &back[idx[slot_back]];
                            let joint = joint_zeta
                                .get(&path_key(&chosen.trace))
                                .copied()
                                .unwrap_or(f64::NEG_INFINITY);
                            let extended_proposed = log_pi_zeta - ln_k + joint + internal_back
                                - chosen.log_p_internal;
                            let kernel_fwd = internal_back + chosen.log_p_output - lse_back;
                            if kernel_fwd == f64::NEG_INFINITY {
                                // The extended kernel never proposes this tuple.
                                continue;
                            }
                            let ratio = extended_proposed + kernel_back - extended_current - kernel_fwd;
                            let extended = if ratio.is_nan() { f64::NEG_INFINITY } else { ratio.min(0.0) };
                            let sampler = mh_log_acceptance(
                                log_pi_zeta,
                                ProbEstimate::from_log_p_outputs(&lps_back).log_xi_hat,
                                log_pi_z,
                                ProbEstimate::from_log_p_outputs(&lps_fwd).log_xi_hat,
                            );
                            report.record(extended, sampler);
                        }
                    });
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn params() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn enumerate_spec_examples() {
        let single = crate::runtime::program_fn(|_: &(), _: &ParamStore, ctx: &mut crate::runtime::ExecutionContext<'_>| {
            ctx.flip("a", 0.3)?;
            Ok(())
        });
        let e = enumerate(&single, &(), &params()).unwrap();
        let mut probs: Vec<f64> = e.traces.iter().map(|t| t.prob()).collect();
        probs.sort_by(f64::total_cmp);
        assert_eq!(probs.len(), 2);
        assert!((probs[0] - 0.3).abs() < 1e-15 && (probs[1] - 0.7).abs() < 1e-15);

        let e = enumerate(&independent_pair::<()>(), &(), &params()).unwrap();
        assert_eq!(e.traces.len(), 4);
        assert!(e.traces.iter().all(|t| (t.prob() - 0.25).abs() < 1e-15));

        let e = enumerate(&two_coin::<()>(), &(), &params()).unwrap();
        let mut probs: Vec<f64> = e.traces.iter().map(|t| t.prob()).collect();
        probs.sort_by(f64::total_cmp);
        for (p, want) in probs.iter().zip([0.05, 0.05, 0.45, 0.45]) {
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn marginals() {
        let e = enumerate(&two_coin::<()>(), &(), &params()).unwrap();
        assert!((exact_marginal(&e, &ChoiceMap::new().with("z", true)) - 0.5).abs() < 1e-15);
        assert!((exact_marginal(&e, &ChoiceMap::new()) - 1.0).abs() < 1e-15);
        assert_eq!(exact_marginal(&e, &ChoiceMap::new().with("z", 3i64)), 0.0);
    }

    #[test]
    fn totals_for_every_fixture() {
        for name in NAMES {
            let p = by_name(name).unwrap();
            let e = enumerate(&p, &(), &params()).unwrap();
            assert!((e.total_prob() - 1.0).abs() < 1e-9, "{name}");
            let outputs = outputs_of(name).unwrap();
            let m = e.output_marginals(&outputs).unwrap();
            assert!((m.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reference_files_match_enumeration() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("test-fixtures");
        let refs = load_reference_marginals(&dir).unwrap();
        assert_eq!(refs.len(), 11);
        for r in refs {
            let p = by_name(&r.fixture).unwrap();
            let e = enumerate(&p, &(), &params()).unwrap();
            assert!((exact_marginal(&e, &r.z) - r.exact_marginal).abs() < 1e-12, "{}", r.name);
        }
    }

    #[test]
    fn continuous_choice_is_not_enumerable() {
        let p = crate::runtime::program_fn(|_: &(), _: &ParamStore, ctx: &mut crate::runtime::ExecutionContext<'_>| {
            ctx.choice("x", &crate::dist::Distribution::normal(0.0, 1.0)?)?;
            Ok(())
        });
        assert!(matches!(enumerate(&p, &(), &params()), Err(OracleError::NonEnumerable(a)) if a == "x"));
    }

    #[test]
    fn branch_limit() {
        let p = crate::runtime::program_fn(|_: &(), _: &ParamStore, ctx: &mut crate::runtime::ExecutionContext<'_>| {
            for i in 0..4 {
                ctx.flip(format!("c{i}"), 0.5)?;
            }
            Ok(())
        });
        assert_eq!(enumerate_with_limit(&p, &(), &params(), 16).unwrap().traces.len(), 16);
        assert!(matches!(
            enumerate_with_limit(&p, &(), &params(), 15),
            Err(OracleError::BranchLimit(15))
        ));
    }

    #[test]
    fn no_internal_choices_give_equal_objectives() {
        let pairs: Vec<WeightedPair<()>> = vec![
            WeightedPair { input: (), z: ChoiceMap::new().with("a", true).with("b", 2i64), weight: 0.5 },
            WeightedPair { input: (), z: ChoiceMap::new().with("a", false).with("b", 0i64), weight: 0.5 },
        ];
        for k in 1..=3 {
            let o = exact_j_and_jk(&no_internal::<()>(), &pairs, &params(), k).unwrap();
            assert!((o.j - o.jk).abs() < 1e-12);
        }
    }

    #[test]
    fn two_coin_k1_objective() {
        let pairs = vec![WeightedPair { input: (), z: ChoiceMap::new().with("z", true), weight: 1.0 }];
        let o = exact_j_and_jk(&two_coin::<()>(), &pairs, &params(), 1).unwrap();
        let want = 0.5 * 0.9f64.ln() + 0.5 * 0.1f64.ln();
        assert!((o.jk - want).abs() < 1e-15);
        assert!((o.j - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn target_distribution_examples() {
        let flat = UnnormalizedTarget::new("flat", |_| 0.0);
        let four = four_state_support();
        assert_eq!(exact_target_distribution(&flat, &four).unwrap(), vec![0.25; 4]);
        let two = UnnormalizedTarget::new("2:1", |z| match z.get_str("z") {
            Some(Value::Bool(true)) => 2f64.ln(),
            _ => 0.0,
        });
        let p = exact_target_distribution(&two, &two_coin_support()).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(exact_target_distribution(&flat, &[]), Err(OracleError::EmptySupport)));
    }

    #[test]
    fn stat_test_examples() {
        let c = chi_square_gof(&[25, 50, 25], &[0.25, 0.5, 0.25]).unwrap();
        assert_eq!(c.statistic, 0.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(chi_square_gof(&[1, 2], &[1.0, 0.0]), Err(OracleError::DegenerateCells(_))));
    }

    #[test]
    fn appendix_identities_on_two_coin() {
        let a1 = check_importance_weight_identity(
            &two_coin::<()>(),
            &(),
            &params(),
            &two_coin_target(),
            &two_coin_support(),
            2,
        )
        .unwrap();
        assert_eq!(a1.tuples, 8);
        assert!(a1.max_deviation <= 1e-12, "{a1:?}");
        let a2 = check_acceptance_ratio_identity(
            &two_coin::<ChoiceMap>(),
            &params(),
            &two_coin_target(),
            &two_coin_support(),
            &OutputSelection::from_addresses(["z"]),
            2,
        )
        .unwrap();
        assert_eq!(a2.tuples, 2 * 4 * 2 * 2 * 4 * 2);
        assert!(a2.max_deviation <= 1e-12, "{a2:?}");
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let theta = parametrized_two_coin_params(0.3, -1.0, 1.2);
        let pairs = vec![
            WeightedPair { input: (), z: ChoiceMap::new().with("z", true), weight: 0.7 },
            WeightedPair { input: (), z: ChoiceMap::new().with("z", false), weight: 0.3 },
        ];
        let program = parametrized_two_coin::<()>();
        for k in 1..=3 {
            let exact = exact_grad_jk(&program, &pairs, &theta, k).unwrap().flatten();
            let fd = finite_difference_grad_jk(&program, &pairs, &theta, k, 1e-6).unwrap();
            for (a, b) in exact.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-7, "K={k}: {exact:?} vs {fd:?}");
            }
        }
    }
}
