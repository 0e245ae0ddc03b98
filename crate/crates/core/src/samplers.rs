//! Importance sampling and Metropolis-Hastings driven by proposal programs.
//!
//! Both samplers consume the estimated proposal probability from
//! [`simulate`]/[`assess`] in place of the exact marginal. All weight
//! arithmetic is done in log space.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::parallel;
use crate::params::ParamStore;
use crate::runtime::{assess, simulate, ExecError, ProposalProgram};
use crate::seed::Seed;
use crate::special::log_sum_exp;
use crate::trace::{ChoiceMap, OutputSelection};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("every importance weight is zero")]
    AllWeightsZero,
    #[error("initial state has zero target density")]
    ZeroInitialDensity,
    #[error("need at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("failed to write diagnostics: {0}")]
    Io(#[from] std::io::Error),
}

type LogDensityFn = dyn Fn(&ChoiceMap) -> f64 + Send + Sync;

/// Unnormalized target density `log π̃(z)`; `-∞` marks zero density.
#[derive(Clone)]
pub struct UnnormalizedTarget {
    log_density: Arc<LogDensityFn>,
    pub description: String,
}

impl UnnormalizedTarget {
    pub fn new<F>(description: impl Into<String>, log_density: F) -> Self
    where
        F: Fn(&ChoiceMap) -> f64 + Send + Sync + 'static,
    {
        Self {
            log_density: Arc::new(log_density),
            description: description.into(),
        }
    }

    pub fn log_density(&self, z: &ChoiceMap) -> f64 {
        (self.log_density)(z)
    }

    /// Target multiplied by `c > 0`, i.e. `log π̃ + ln c`.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = Arc::clone(&self.log_density);
        let shift = c.ln();
        Self {
            log_density: Arc::new(move |z| inner(z) + shift),
            description: format!("{} (x{c})", self.description),
        }
    }
}

impl fmt::Debug for UnnormalizedTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnnormalizedTarget")
            .field("description", &self.description)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub z: ChoiceMap,
    /// `log π̃(z) - log ξ̂`.
    pub log_weight: f64,
}

#[derive(Debug, Clone)]
pub struct ImportanceResult {
    pub estimate: f64,
    pub samples: Vec<WeightedSample>,
    pub log_sum_weights: f64,
}

impl ImportanceResult {
    /// Self-normalized weights, summing to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| (s.log_weight - self.log_sum_weights).exp())
            .collect()
    }

    /// Self-normalized expectation of an arbitrary test function.
    pub fn expectation<F: Fn(&ChoiceMap) -> f64>(&self, f: F) -> f64 {
        self.samples
            .iter()
            .zip(self.normalized_weights())
            .filter(|(_, w)| *w > 0.0)
            .map(|(s, w)| w * f(&s.z))
            .sum()
    }

    /// Writes `particle_index,log_weight,f_value` rows.
    pub fn write_csv<W: Write, F: Fn(&ChoiceMap) -> f64>(&self, mut out: W, f: F) -> Result<(), SamplerError> {
        writeln!(out, "particle_index,log_weight,f_value")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(out, "{i},{:.17e},{:.17e}", s.log_weight, f(&s.z))?;
        }
        Ok(())
    }
}

/// Self-normalized importance sampling with `n` particles, each proposed by
/// `simulate` with `k` executions. Particle `i` uses `seed.derive(i)`.
#[allow(clippy::too_many_arguments)]
pub fn importance_sample<P, F>(
    target: &UnnormalizedTarget,
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    outputs: &OutputSelection,
    n: usize,
    k: usize,
    f: F,
    seed: Seed,
) -> Result<ImportanceResult, SamplerError>
where
    P: ProposalProgram,
    F: Fn(&ChoiceMap) -> f64,
{
    if n == 0 {
        return Err(SamplerError::Empty("particle"));
    }
    let samples = parallel::try_map_indexed(n, |i| {
        let sim = simulate(program, input, params, k, outputs, seed.derive(i as u64))?;
        let log_weight = target.log_density(&sim.z) - sim.estimate.log_xi_hat;
        Ok::<_, ExecError>(WeightedSample {
            z: sim.z,
            log_weight: if log_weight.is_nan() {
                f64::NEG_INFINITY
            } else {
                log_weight
            },
        })
    })?;
    let log_weights: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
    let log_sum_weights = log_sum_exp(&log_weights);
    if log_sum_weights == f64::NEG_INFINITY {
        return Err(SamplerError::AllWeightsZero);
    }
    let mut result = ImportanceResult {
        estimate: 0.0,
        samples,
        log_sum_weights,
    };
    result.estimate = result.expectation(f);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MHState {
    pub current: ChoiceMap,
    pub log_target_current: f64,
    pub step_count: u64,
    pub accept_count: u64,
}

impl MHState {
    pub fn new(target: &UnnormalizedTarget, z0: ChoiceMap) -> Result<Self, SamplerError> {
        let lp = target.log_density(&z0);
        if !(lp > f64::NEG_INFINITY) {
            return Err(SamplerError::ZeroInitialDensity);
        }
        Ok(Self {
            current: z0,
            log_target_current: lp,
            step_count: 0,
            accept_count: 0,
        })
    }
}

/// Record of one transition for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    pub log_alpha: f64,
    /// The proposal's own probability estimate was zero and the move was
    /// rejected without evaluating the ratio.
    pub degenerate: bool,
}

/// `log α = min(0, log π̃(z') + log ξ̂_{t-1} - log π̃(z_{t-1}) - log ξ̂')`.
pub fn mh_log_acceptance(
    log_target_proposed: f64,
    log_xi_reverse: f64,
    log_target_current: f64,
    log_xi_forward: f64,
) -> f64 {
    if log_target_proposed == f64::NEG_INFINITY || log_xi_reverse == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let ratio = log_target_proposed + log_xi_reverse - log_target_current - log_xi_forward;
    if ratio.is_nan() {
        f64::NEG_INFINITY
    } else {
        ratio.min(0.0)
    }
}

/// One Metropolis-Hastings transition using a proposal program.
///
/// The program receives the full current state as its input and proposes
/// values for the addresses in `outputs`; the proposed state is the current
/// state with those entries replaced. The reverse estimate assesses the
/// current values of `outputs` from the proposed state.
pub fn mh_step<P>(
    target: &UnnormalizedTarget,
    program: &P,
    params: &ParamStore,
    state: &MHState,
    k: usize,
    outputs: &OutputSelection,
    seed: Seed,
) -> Result<(MHState, StepInfo), SamplerError>
where
    P: ProposalProgram<Input = ChoiceMap>,
{
    debug_assert_eq!(
        target.log_density(&state.current).to_bits(),
        state.log_target_current.to_bits(),
        "cached target density is stale"
    );
    let sim = simulate(program, &state.current, params, k, outputs, seed.derive(0))?;
    let proposed = state.current.merged(&sim.z);
    let mut next = state.clone();
    next.step_count += 1;
    if sim.estimate.log_xi_hat == f64::NEG_INFINITY {
        let info = StepInfo {
            accepted: false,
            log_alpha: f64::NEG_INFINITY,
            degenerate: true,
        };
        return Ok((next, info));
    }
    let reverse_z: ChoiceMap = sim
        .z
        .addresses()
        .map(|a| {
            let v = state
                .current
                .get(a)
                .cloned()
                .ok_or_else(|| ExecError::SelectionMismatch)?;
            Ok((a.clone(), v))
        })
        .collect::<Result<_, ExecError>>()?;
    let reverse = assess(program, &proposed, params, &reverse_z, k, outputs, seed.derive(1))?;
    let log_target_proposed = target.log_density(&proposed);
    let log_alpha = mh_log_acceptance(
        log_target_proposed,
        reverse.log_xi_hat,
        state.log_target_current,
        sim.estimate.log_xi_hat,
    );
    let u: f64 = seed.derive(2).stream().random();
    let accepted = u.ln() <= log_alpha;
    if accepted {
        next.current = proposed;
        next.log_target_current = log_target_proposed;
        next.accept_count += 1;
    }
    Ok((
        next,
        StepInfo {
            accepted,
            log_alpha,
            degenerate: false,
        },
    ))
}

/// A transition operator on full states.
pub trait TransitionKernel: Sync {
    fn step(
        &self,
        target: &UnnormalizedTarget,
        state: &MHState,
        seed: Seed,
    ) -> Result<(MHState, StepInfo), SamplerError>;
}

/// MH kernel proposing the addresses in `outputs` from a proposal program.
pub struct ProposalKernel<'a, P> {
    pub program: &'a P,
    pub params: &'a ParamStore,
    pub k: usize,
    pub outputs: OutputSelection,
}

impl<P> TransitionKernel for ProposalKernel<'_, P>
where
    P: ProposalProgram<Input = ChoiceMap>,
{
    fn step(
        &self,
        target: &UnnormalizedTarget,
        state: &MHState,
        seed: Seed,
    ) -> Result<(MHState, StepInfo), SamplerError> {
        mh_step(target, self.program, self.params, state, self.k, &self.outputs, seed)
    }
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    /// `steps + 1` states, starting with `z0`.
    pub iterates: Vec<ChoiceMap>,
    /// Acceptance rate of each kernel over the steps it was applied.
    pub accept_rates: Vec<f64>,
    pub steps: Vec<StepInfo>,
}

impl ChainResult {
    /// Writes `step,accepted,log_alpha` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SamplerError> {
        writeln!(out, "step,accepted,log_alpha")?;
        for (t, s) in self.steps.iter().enumerate() {
            writeln!(out, "{t},{},{:.17e}", u8::from(s.accepted), s.log_alpha)?;
        }
        Ok(())
    }
}

/// Runs `steps` transitions applying `kernels` in a fixed cyclic order.
/// Step `t` uses `seed.derive(t)`.
pub fn mh_chain(
    target: &UnnormalizedTarget,
    kernels: &[&dyn TransitionKernel],
    z0: ChoiceMap,
    steps: usize,
    seed: Seed,
) -> Result<ChainResult, SamplerError> {
    if kernels.is_empty() {
        return Err(SamplerError::Empty("kernel"));
    }
    let mut state = MHState::new(target, z0)?;
    let mut iterates = Vec::with_capacity(steps + 1);
    iterates.push(state.current.clone());
    let mut applied = vec![0u64; kernels.len()];
    let mut accepted = vec![0u64; kernels.len()];
    let mut infos = Vec::with_capacity(steps);
    for t in 0..steps {
        let which = t % kernels.len();
        let (next, info) = kernels[which].step(target, &state, seed.derive(t as u64))?;
        applied[which] += 1;
        accepted[which] += u64::from(info.accepted);
        infos.push(info);
        state = next;
        iterates.push(state.current.clone());
    }
    let accept_rates = applied
        .iter()
        .zip(&accepted)
        .map(|(&n, &a)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
        .collect();
    Ok(ChainResult {
        iterates,
        accept_rates,
        steps: infos,
    })
}
