//! Small discrete programs with hand-checkable marginals.

use crate::dist::{Distribution, ParamGrad};
use crate::params::{ParamStore, Tensor};
use crate::runtime::{expect_int, program_fn, ExecError, ExecutionContext, ProposalProgram};
use crate::samplers::UnnormalizedTarget;
use crate::special::sigmoid;
use crate::trace::{ChoiceMap, OutputSelection, Value};

/// Boxed program over an arbitrary input, for lookup by name.
pub type DynProgram<I> = Box<dyn ProposalProgram<Input = I> + Send>;

/// `u ~ bern(0.5)` internal, `z ~ bern(u ? 0.9 : 0.1)` output.
pub fn two_coin<I: Sync>() -> impl ProposalProgram<Input = I> + Send {
    program_fn(|_: &I, _: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        let u = ctx.flip("u", 0.5)?;
        ctx.flip("z", if u { 0.9 } else { 0.1 })?;
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["z"]))
}

/// Two independent fair coins `a` and `b`, both outputs.
pub fn independent_pair<I: Sync>() -> impl ProposalProgram<Input = I> + Send {
    program_fn(|_: &I, _: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        ctx.flip("a", 0.5)?;
        ctx.flip("b", 0.5)?;
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["a", "b"]))
}

/// `a ~ bern(0.3)`, `b ~ categorical(0.5, 0.25, 0.25)`; both outputs.
pub fn no_internal<I: Sync>() -> impl ProposalProgram<Input = I> + Send {
    program_fn(|_: &I, _: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        ctx.flip("a", 0.3)?;
        ctx.choice("b", &Distribution::categorical(vec![0.5, 0.25, 0.25])?)?;
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["a", "b"]))
}

/// Two internal fair coins; the output `z` in {0,1,2} lands on their sum
/// with probability 0.8.
pub fn noisy_sum<I: Sync>() -> impl ProposalProgram<Input = I> + Send {
    program_fn(|_: &I, _: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        let u = ctx.flip("u", 0.5)? as usize;
        let v = ctx.flip("v", 0.5)? as usize;
        let mut probs = vec![0.1; 3];
        probs[u + v] = 0.8;
        ctx.choice("z", &Distribution::categorical(probs)?)?;
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["z"]))
}

/// Internal `u ~ bern(0.3)`, `v ~ bern(u ? 0.8 : 0.2)`; outputs
/// `z1 ~ bern(v ? 0.7 : 0.4)` and `z2 ~ bern(u ? 0.6 : 0.1)`.
pub fn chain<I: Sync>() -> impl ProposalProgram<Input = I> + Send {
    program_fn(|_: &I, _: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        let u = ctx.flip("u", 0.3)?;
        let v = ctx.flip("v", if u { 0.8 } else { 0.2 })?;
        ctx.flip("z1", if v { 0.7 } else { 0.4 })?;
        ctx.flip("z2", if u { 0.6 } else { 0.1 })?;
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["z1", "z2"]))
}

/// Fixtures with unit input, by name.
pub fn by_name(name: &str) -> Option<DynProgram<()>> {
    Some(match name {
        "two-coin" => Box::new(two_coin::<()>()),
        "independent-pair" => Box::new(independent_pair::<()>()),
        "no-internal" => Box::new(no_internal::<()>()),
        "noisy-sum" => Box::new(noisy_sum::<()>()),
        "chain" => Box::new(chain::<()>()),
        _ => return None,
    })
}

pub const NAMES: [&str; 5] = ["two-coin", "independent-pair", "no-internal", "noisy-sum", "chain"];

/// Output selection of a named fixture.
pub fn outputs_of(name: &str) -> Option<OutputSelection> {
    by_name(name).and_then(|p| p.default_outputs(&()))
}

/// Unnormalized target over the two-coin output: `π̃(z=true) = 3`,
/// `π̃(z=false) = 1`.
pub fn two_coin_target() -> UnnormalizedTarget {
    UnnormalizedTarget::new("two-coin target 3:1", |z| match z.get_str("z") {
        Some(Value::Bool(true)) => 3f64.ln(),
        Some(Value::Bool(false)) => 0.0,
        _ => f64::NEG_INFINITY,
    })
}

/// Both values of the two-coin output.
pub fn two_coin_support() -> Vec<ChoiceMap> {
    vec![ChoiceMap::new().with("z", true), ChoiceMap::new().with("z", false)]
}

pub const FOUR_STATE_WEIGHTS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Target on states `s` in {0..3} proportional to 1:2:3:4.
pub fn four_state_target() -> UnnormalizedTarget {
    UnnormalizedTarget::new("four-state target 1:2:3:4", |z| match z.get_str("s") {
        Some(Value::Int(s)) if (0..4).contains(s) => FOUR_STATE_WEIGHTS[*s as usize].ln(),
        _ => f64::NEG_INFINITY,
    })
}

pub fn four_state_support() -> Vec<ChoiceMap> {
    (0..4i64).map(|s| ChoiceMap::new().with("s", s)).collect()
}

/// MH kernel on the four-state fixture. An internal coin picks one of two
/// rough approximations of the target; the proposal then mixes in a 10%
/// chance of staying at the current state.
pub fn four_state_kernel() -> impl ProposalProgram<Input = ChoiceMap> + Send {
    program_fn(|current: &ChoiceMap, _: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        let s = match current.get_str("s") {
            Some(v) => expect_int("s".into(), v.clone())?,
            None => return Err(ExecError::user("four-state kernel needs a current state")),
        };
        let heavy = ctx.flip("shape", 0.5)?;
        let base = if heavy {
            [0.05, 0.2, 0.3, 0.45]
        } else {
            [0.15, 0.2, 0.3, 0.35]
        };
        let mut probs: Vec<f64> = base.iter().map(|p| 0.9 * p).collect();
        probs[s as usize] += 0.1;
        let drawn = ctx.choice("s", &Distribution::categorical(probs)?)?;
        debug_assert!(matches!(drawn, Value::Int(_)));
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["s"]))
}

pub const GRAD_PARAM_NAMES: [&str; 3] = ["u_logit", "z_logit_u0", "z_logit_u1"];

/// Two-coin program with logistic parameters on both coins:
/// `u ~ bern(σ(u_logit))`, `z ~ bern(σ(u ? z_logit_u1 : z_logit_u0))`.
pub fn parametrized_two_coin<I: Sync>() -> impl ProposalProgram<Input = I> + Send {
    program_fn(|_: &I, theta: &ParamStore, ctx: &mut ExecutionContext<'_>| {
        let pu = sigmoid(theta.scalar("u_logit")?);
        let u = ctx.choice_with_grad("u", &Distribution::bernoulli(pu)?, |g, acc| {
            if let ParamGrad::Bernoulli { p } = g {
                acc.add("u_logit", 0, p * pu * (1.0 - pu))?;
            }
            Ok(())
        })?;
        let name = if u == Value::Bool(true) { "z_logit_u1" } else { "z_logit_u0" };
        let pz = sigmoid(theta.scalar(name)?);
        ctx.choice_with_grad("z", &Distribution::bernoulli(pz)?, |g, acc| {
            if let ParamGrad::Bernoulli { p } = g {
                acc.add(name, 0, p * pz * (1.0 - pz))?;
            }
            Ok(())
        })?;
        Ok(())
    })
    .with_outputs(OutputSelection::from_addresses(["z"]))
}

pub fn parametrized_two_coin_params(u_logit: f64, z_logit_u0: f64, z_logit_u1: f64) -> ParamStore {
    ParamStore::new()
        .with("u_logit", Tensor::scalar(u_logit))
        .with("z_logit_u0", Tensor::scalar(z_logit_u0))
        .with("z_logit_u1", Tensor::scalar(z_logit_u1))
}
