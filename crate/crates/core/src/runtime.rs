//! Execution engine for proposal programs.
//!
//! Programs are ordinary Rust code that issue addressed random choices
//! through an [`ExecutionContext`]. The context decides where each value
//! comes from (fresh sample, output constraint, or an enumeration script),
//! records its log probability, and optionally routes score-function
//! gradients into output and internal accumulators.
//!
//! [`simulate`] and [`assess`] implement the approximate interface: the
//! proposal probability of an output trace is replaced by the unbiased
//! estimate `ξ̂ = (1/K) Σ_k p_O(τ_k)`, carried in log space.

use std::collections::BTreeSet;
use std::marker::PhantomData;

use rand::Rng;
use thiserror::Error;

use crate::dist::{DistError, Distribution, ParamGrad};
use crate::nnet::NnetError;
use crate::parallel;
use crate::params::{Gradients, ParamError, ParamStore};
use crate::seed::{Seed, Stream};
use crate::special::log_mean_exp;
use crate::trace::{
    restrict, split_log_prob, Address, ChoiceMap, ChoiceRecord, OutputSelection, Trace, TraceError,
    Value,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("constrained value at `{0}` has zero probability")]
    OutOfSupportConstraint(Address),
    #[error("choice `{0}` has no finite discrete support")]
    NonEnumerable(Address),
    #[error("program drew from the raw stream during enumeration")]
    RawStreamInEnumeration,
    #[error("choice `{address}` produced a {actual} value, expected {expected}")]
    TypeMismatch {
        address: Address,
        expected: &'static str,
        actual: &'static str,
    },
    #[error("output trace addresses do not match the output selection")]
    SelectionMismatch,
    #[error("K must be at least 1")]
    ZeroReplicates,
    #[error("{0}")]
    User(String),
}

impl ExecError {
    pub fn user(message: impl Into<String>) -> Self {
        ExecError::User(message.into())
    }
}

/// A proposal program: a procedure of an input and parameters that makes
/// addressed random choices through the context.
pub trait ProposalProgram: Sync {
    type Input: Sync;

    fn execute(
        &self,
        input: &Self::Input,
        params: &ParamStore,
        ctx: &mut ExecutionContext<'_>,
    ) -> Result<(), ExecError>;

    /// Output addresses to use when the caller does not name them.
    fn default_outputs(&self, _input: &Self::Input) -> Option<OutputSelection> {
        None
    }
}

impl<P: ProposalProgram + ?Sized> ProposalProgram for &P {
    type Input = P::Input;

    fn execute(
        &self,
        input: &Self::Input,
        params: &ParamStore,
        ctx: &mut ExecutionContext<'_>,
    ) -> Result<(), ExecError> {
        (**self).execute(input, params, ctx)
    }

    fn default_outputs(&self, input: &Self::Input) -> Option<OutputSelection> {
        (**self).default_outputs(input)
    }
}

impl<P: ProposalProgram + ?Sized + Send> ProposalProgram for Box<P> {
    type Input = P::Input;

    fn execute(
        &self,
        input: &Self::Input,
        params: &ParamStore,
        ctx: &mut ExecutionContext<'_>,
    ) -> Result<(), ExecError> {
        (**self).execute(input, params, ctx)
    }

    fn default_outputs(&self, input: &Self::Input) -> Option<OutputSelection> {
        (**self).default_outputs(input)
    }
}

/// Program backed by a closure.
pub struct FnProgram<I, F> {
    body: F,
    outputs: Option<OutputSelection>,
    _input: PhantomData<fn(&I)>,
}

pub fn program_fn<I, F>(body: F) -> FnProgram<I, F>
where
    I: Sync,
    F: Fn(&I, &ParamStore, &mut ExecutionContext<'_>) -> Result<(), ExecError> + Sync,
{
    FnProgram {
        body,
        outputs: None,
        _input: PhantomData,
    }
}

impl<I, F> FnProgram<I, F> {
    pub fn with_outputs(mut self, outputs: OutputSelection) -> Self {
        self.outputs = Some(outputs);
        self
    }
}

impl<I, F> ProposalProgram for FnProgram<I, F>
where
    I: Sync,
    F: Fn(&I, &ParamStore, &mut ExecutionContext<'_>) -> Result<(), ExecError> + Sync,
{
    type Input = I;

    fn execute(
        &self,
        input: &I,
        params: &ParamStore,
        ctx: &mut ExecutionContext<'_>,
    ) -> Result<(), ExecError> {
        (self.body)(input, params, ctx)
    }

    fn default_outputs(&self, _input: &I) -> Option<OutputSelection> {
        self.outputs.clone()
    }
}

enum Mode<'a> {
    Forward,
    Constrained(&'a ChoiceMap),
    /// Unconstrained choices take values from `script` in order; past its end
    /// the first support value is taken and the alternatives are queued.
    Scripted {
        constraints: &'a ChoiceMap,
        script: &'a [Value],
        taken: Vec<Value>,
        branches: Vec<Vec<Value>>,
    },
}

struct GradSink {
    output: Gradients,
    internal: Gradients,
}

/// Per-execution state handed to a program body.
pub struct ExecutionContext<'a> {
    mode: Mode<'a>,
    rng: Stream,
    records: Vec<ChoiceRecord>,
    visited: BTreeSet<Address>,
    grads: Option<GradSink>,
    aborted: Option<ExecError>,
    raw_stream_used: bool,
}

impl<'a> ExecutionContext<'a> {
    fn new(mode: Mode<'a>, seed: Seed, grads: Option<&ParamStore>) -> Self {
        Self {
            mode,
            rng: seed.stream(),
            records: Vec::new(),
            visited: BTreeSet::new(),
            grads: grads.map(|p| GradSink {
                output: Gradients::zeros_like(p),
                internal: Gradients::zeros_like(p),
            }),
            aborted: None,
            raw_stream_used: false,
        }
    }

    /// Stream for un-annotated randomness. Draws from here are not recorded;
    /// the caller asserts they do not depend deterministically on θ.
    pub fn raw_stream(&mut self) -> &mut Stream {
        self.raw_stream_used = true;
        &mut self.rng
    }

    /// Whether this execution accumulates parameter gradients.
    pub fn tracks_gradients(&self) -> bool {
        self.grads.is_some()
    }

    /// Makes an addressed choice whose distribution does not depend on θ.
    pub fn choice(&mut self, address: impl Into<Address>, dist: &Distribution) -> Result<Value, ExecError> {
        self.choice_impl(address.into(), dist, None::<fn(&ParamGrad, &mut Gradients) -> Result<(), ExecError>>)
    }

    /// Makes an addressed choice whose distribution depends on θ.
    ///
    /// When gradients are tracked, `backprop` receives the score of the
    /// distribution's own parameters and must add the chain-ruled
    /// contribution into the given accumulator (the output accumulator for
    /// constrained addresses, the internal one otherwise).
    pub fn choice_with_grad<F>(
        &mut self,
        address: impl Into<Address>,
        dist: &Distribution,
        backprop: F,
    ) -> Result<Value, ExecError>
    where
        F: FnOnce(&ParamGrad, &mut Gradients) -> Result<(), ExecError>,
    {
        self.choice_impl(address.into(), dist, Some(backprop))
    }

    fn choice_impl<F>(
        &mut self,
        address: Address,
        dist: &Distribution,
        backprop: Option<F>,
    ) -> Result<Value, ExecError>
    where
        F: FnOnce(&ParamGrad, &mut Gradients) -> Result<(), ExecError>,
    {
        if let Some(err) = &self.aborted {
            return Err(err.clone());
        }
        if self.visited.contains(&address) {
            return Err(self.abort(TraceError::DuplicateAddress(address).into()));
        }
        let drawn: Result<(Value, bool), ExecError> = match &mut self.mode {
            Mode::Forward => dist.sample(&mut self.rng).map(|v| (v, false)).map_err(Into::into),
            Mode::Constrained(z) => match z.get(&address) {
                Some(v) => Ok((v.clone(), true)),
                None => dist.sample(&mut self.rng).map(|v| (v, false)).map_err(Into::into),
            },
            Mode::Scripted {
                constraints,
                script,
                taken,
                branches,
            } => match constraints.get(&address) {
                Some(v) => Ok((v.clone(), true)),
                None => {
                    let position = taken.len();
                    if position < script.len() {
                        taken.push(script[position].clone());
                        Ok((script[position].clone(), false))
                    } else {
                        match dist.finite_support() {
                            Some(support) if !support.is_empty() => {
                                for alt in support.iter().skip(1) {
                                    let mut branch = taken.clone();
                                    branch.push(alt.clone());
                                    branches.push(branch);
                                }
                                taken.push(support[0].clone());
                                Ok((support[0].clone(), false))
                            }
                            _ => Err(ExecError::NonEnumerable(address.clone())),
                        }
                    }
                }
            },
        };
        let (value, constrained) = match drawn {
            Ok(v) => v,
            Err(e) => return Err(self.abort(e)),
        };
        let log_prob = dist.log_density(&value)?;
        if log_prob == f64::NEG_INFINITY || log_prob.is_nan() {
            return Err(self.abort(ExecError::OutOfSupportConstraint(address)));
        }
        if let (Some(sink), Some(backprop)) = (self.grads.as_mut(), backprop) {
            let score = dist.grad_log_density(&value)?;
            let target = if constrained {
                &mut sink.output
            } else {
                &mut sink.internal
            };
            backprop(&score, target)?;
        }
        self.visited.insert(address.clone());
        let position = self.records.len();
        self.records.push(ChoiceRecord {
            address,
            value: value.clone(),
            log_prob,
            position,
        });
        Ok(value)
    }

    fn abort(&mut self, err: ExecError) -> ExecError {
        self.aborted = Some(err.clone());
        err
    }

    pub fn flip(&mut self, address: impl Into<Address>, p: f64) -> Result<bool, ExecError> {
        let address = address.into();
        let v = self.choice(address.clone(), &Distribution::bernoulli(p)?)?;
        expect_bool(address, v)
    }

    pub fn choice_bool(&mut self, address: impl Into<Address>, dist: &Distribution) -> Result<bool, ExecError> {
        let address = address.into();
        let v = self.choice(address.clone(), dist)?;
        expect_bool(address, v)
    }

    pub fn choice_int(&mut self, address: impl Into<Address>, dist: &Distribution) -> Result<i64, ExecError> {
        let address = address.into();
        let v = self.choice(address.clone(), dist)?;
        expect_int(address, v)
    }

    pub fn choice_real(&mut self, address: impl Into<Address>, dist: &Distribution) -> Result<f64, ExecError> {
        let address = address.into();
        let v = self.choice(address.clone(), dist)?;
        expect_real(address, v)
    }
}

pub fn expect_bool(address: Address, v: Value) -> Result<bool, ExecError> {
    v.as_bool().ok_or(ExecError::TypeMismatch {
        address,
        expected: "bool",
        actual: v.tag(),
    })
}

pub fn expect_int(address: Address, v: Value) -> Result<i64, ExecError> {
    v.as_int().ok_or(ExecError::TypeMismatch {
        address,
        expected: "int",
        actual: v.tag(),
    })
}

pub fn expect_real(address: Address, v: Value) -> Result<f64, ExecError> {
    v.as_real().ok_or(ExecError::TypeMismatch {
        address,
        expected: "real",
        actual: v.tag(),
    })
}

struct Finished {
    trace: Trace,
    grads: Option<GradSink>,
    branches: Vec<Vec<Value>>,
}

fn execute<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    mode: Mode<'_>,
    seed: Seed,
    track_grads: bool,
) -> (Result<(), ExecError>, Finished, bool) {
    let mut ctx = ExecutionContext::new(mode, seed, track_grads.then_some(params));
    let mut result = program.execute(input, params, &mut ctx);
    if result.is_ok() {
        if let Some(err) = ctx.aborted.take() {
            // The body swallowed an abort; the execution is still invalid.
            result = Err(err);
        }
    }
    if result.is_ok() {
        let constraints = match &ctx.mode {
            Mode::Forward => None,
            Mode::Constrained(z) => Some(*z),
            Mode::Scripted { constraints, .. } => Some(*constraints),
        };
        if let Some(z) = constraints {
            if let Some(missing) = z.addresses().find(|a| !ctx.visited.contains(*a)) {
                result = Err(TraceError::MissingOutput(missing.clone()).into());
            }
        }
    }
    let branches = match ctx.mode {
        Mode::Scripted { branches, .. } => branches,
        _ => Vec::new(),
    };
    let finished = Finished {
        trace: Trace::from_records_unchecked(ctx.records),
        grads: ctx.grads,
        branches,
    };
    (result, finished, ctx.raw_stream_used)
}

/// Executes the program, sampling every choice.
pub fn run_forward<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    seed: Seed,
) -> Result<Trace, ExecError> {
    let (result, finished, _) = execute(program, input, params, Mode::Forward, seed, false);
    result.map(|_| finished.trace)
}

/// Executes the program with the choices named in `z` fixed to its values.
///
/// Fails with [`ExecError::OutOfSupportConstraint`] when a constrained value
/// has zero probability and with [`TraceError::MissingOutput`] when an
/// address of `z` is never visited.
pub fn run_constrained<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    z: &ChoiceMap,
    seed: Seed,
) -> Result<Trace, ExecError> {
    let (result, finished, _) = execute(program, input, params, Mode::Constrained(z), seed, false);
    result.map(|_| finished.trace)
}

/// Constrained execution with gradient accumulation.
#[derive(Debug, Clone)]
pub struct GradTrace {
    /// `log p_O(τ)`; `-∞` when a constraint had zero probability.
    pub log_p_output: f64,
    /// `∇θ log p_O(τ)`.
    pub grad_output: Gradients,
    /// `∇θ log p_I(τ)` over annotated internal choices. For an aborted
    /// execution this covers the choices made before the abort.
    pub grad_internal: Gradients,
    pub trace: Trace,
}

/// Runs a constrained execution accumulating `∇θ log p_O` and `∇θ log p_I`.
/// Output addresses are the addresses of `z`.
pub fn run_constrained_with_grad<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    z: &ChoiceMap,
    seed: Seed,
) -> Result<GradTrace, ExecError> {
    let (result, finished, _) = execute(program, input, params, Mode::Constrained(z), seed, true);
    let aborted = match result {
        Ok(()) => false,
        Err(ExecError::OutOfSupportConstraint(_)) => true,
        Err(e) => return Err(e),
    };
    let sink = finished.grads.expect("gradient sink requested");
    let log_p_output = if aborted {
        f64::NEG_INFINITY
    } else {
        split_log_prob(&finished.trace, &z.selection()).0
    };
    Ok(GradTrace {
        log_p_output,
        grad_output: sink.output,
        grad_internal: sink.internal,
        trace: finished.trace,
    })
}

/// Result of one scripted execution, used by exhaustive enumeration.
pub(crate) struct ScriptedRun {
    pub trace: Trace,
    /// Unexplored sibling scripts discovered past the end of the script.
    pub branches: Vec<Vec<Value>>,
    pub grad_output: Option<Gradients>,
    pub grad_internal: Option<Gradients>,
    /// Set when a constraint had zero probability on this path.
    pub out_of_support: bool,
}

pub(crate) fn run_scripted<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    constraints: &ChoiceMap,
    script: &[Value],
    track_grads: bool,
) -> Result<ScriptedRun, ExecError> {
    let mode = Mode::Scripted {
        constraints,
        script,
        taken: Vec::new(),
        branches: Vec::new(),
    };
    let (result, finished, raw_used) = execute(program, input, params, mode, Seed(0), track_grads);
    if raw_used {
        return Err(ExecError::RawStreamInEnumeration);
    }
    let out_of_support = match result {
        Ok(()) => false,
        Err(ExecError::OutOfSupportConstraint(_)) => true,
        Err(e) => return Err(e),
    };
    let (grad_output, grad_internal) = match finished.grads {
        Some(s) => (Some(s.output), Some(s.internal)),
        None => (None, None),
    };
    Ok(ScriptedRun {
        trace: finished.trace,
        branches: finished.branches,
        grad_output,
        grad_internal,
        out_of_support,
    })
}

/// Log of the estimate `ξ̂`, and the number of executions behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEstimate {
    pub log_xi_hat: f64,
    pub k: usize,
}

impl ProbEstimate {
    /// `log((1/K) Σ_k p_O(τ_k))` from the per-execution `log p_O` values.
    pub fn from_log_p_outputs(log_p_outputs: &[f64]) -> Self {
        Self {
            log_xi_hat: log_mean_exp(log_p_outputs),
            k: log_p_outputs.len(),
        }
    }

    pub fn xi_hat(&self) -> f64 {
        self.log_xi_hat.exp()
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub z: ChoiceMap,
    pub estimate: ProbEstimate,
    /// Zero-based index of the unconstrained execution among the K.
    pub forward_index: usize,
    /// All K traces; entries are `None` for constrained executions that hit
    /// a zero-probability constraint.
    pub traces: Vec<Option<Trace>>,
    pub log_p_outputs: Vec<f64>,
}

fn constrained_log_p_output<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    z: &ChoiceMap,
    outputs: &OutputSelection,
    seed: Seed,
) -> Result<(Option<Trace>, f64), ExecError> {
    match run_constrained(program, input, params, z, seed) {
        Ok(trace) => {
            let lp = split_log_prob(&trace, outputs).0;
            Ok((Some(trace), lp))
        }
        Err(ExecError::OutOfSupportConstraint(_)) => Ok((None, f64::NEG_INFINITY)),
        Err(e) => Err(e),
    }
}

/// Samples an output trace and an estimate of its proposal probability.
///
/// One execution (at a uniformly drawn index) runs forward; the other `K-1`
/// run with the outputs fixed to the forward execution's output trace.
/// Execution `i` uses stream `seed.derive(i + 1)`.
pub fn simulate<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    k: usize,
    outputs: &OutputSelection,
    seed: Seed,
) -> Result<Simulation, ExecError> {
    if k == 0 {
        return Err(ExecError::ZeroReplicates);
    }
    let forward_index = seed.derive(0).stream().random_range(0..k);
    let forward = run_forward(program, input, params, seed.derive(forward_index as u64 + 1))?;
    let z = restrict(&forward, outputs)?;
    let forward_lp = split_log_prob(&forward, outputs).0;
    let others = parallel::try_map_indexed(k, |i| {
        if i == forward_index {
            return Ok((None, forward_lp));
        }
        constrained_log_p_output(program, input, params, &z, outputs, seed.derive(i as u64 + 1))
    })?;
    let mut traces = Vec::with_capacity(k);
    let mut log_p_outputs = Vec::with_capacity(k);
    let mut forward = Some(forward);
    for (i, (trace, lp)) in others.into_iter().enumerate() {
        traces.push(if i == forward_index { forward.take() } else { trace });
        log_p_outputs.push(lp);
    }
    Ok(Simulation {
        z,
        estimate: ProbEstimate::from_log_p_outputs(&log_p_outputs),
        forward_index,
        traces,
        log_p_outputs,
    })
}

fn check_selection(z: &ChoiceMap, outputs: &OutputSelection) -> Result<(), ExecError> {
    let covered = z.addresses().all(|a| outputs.contains(a));
    let complete = outputs.explicit().iter().all(|a| z.contains(a));
    if covered && complete {
        Ok(())
    } else {
        Err(ExecError::SelectionMismatch)
    }
}

/// Estimates the proposal probability of `z` from `K` constrained executions.
///
/// Executions whose constraints have zero probability contribute `p_O = 0`.
pub fn assess<P: ProposalProgram>(
    program: &P,
    input: &P::Input,
    params: &ParamStore,
    z: &ChoiceMap,
    k: usize,
    outputs: &OutputSelection,
    seed: Seed,
) -> Result<ProbEstimate, ExecError> {
    if k == 0 {
        return Err(ExecError::ZeroReplicates);
    }
    check_selection(z, outputs)?;
    let lps = parallel::try_map_indexed(k, |i| {
        constrained_log_p_output(program, input, params, z, outputs, seed.derive(i as u64 + 1))
            .map(|(_, lp)| lp)
    })?;
    Ok(ProbEstimate::from_log_p_outputs(&lps))
}
