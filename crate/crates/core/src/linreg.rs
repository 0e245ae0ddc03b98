//! Bayesian linear regression with outliers: the target model, a RANSAC
//! heuristic, and proposal programs for the latent line and outlier flags.
//!
//! Model, with normal parameters given as standard deviations:
//!
//! ```text
//! slope     ~ Normal(0, 1)
//! intercept ~ Normal(0, 2)
//! o_i       ~ Bernoulli(0.1)
//! y_i       ~ Normal(slope * x_i + intercept, o_i ? 5.8 : 1)
//! ```

use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use thiserror::Error;

use crate::dist::{Distribution, ParamGrad};
use crate::nnet::Mlp;
use crate::params::{Gradients, ParamStore, Tensor};
use crate::runtime::{expect_int, expect_real, ExecError, ExecutionContext, ProposalProgram};
use crate::samplers::{ImportanceResult, UnnormalizedTarget};
use crate::seed::Seed;
use crate::special::{sigmoid, softmax};
use crate::trace::{Address, ChoiceMap, OutputSelection, Value};
use crate::trainer::TrainingDistribution;

pub const SLOPE_PRIOR_SD: f64 = 1.0;
pub const INTERCEPT_PRIOR_SD: f64 = 2.0;
pub const OUTLIER_PROB: f64 = 0.1;
pub const INLIER_SD: f64 = 1.0;
pub const OUTLIER_SD: f64 = 5.8;

/// Bounds keeping both outlier outcomes possible under every proposal.
const OUTLIER_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinregError {
    #[error("a dataset needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("xs has {xs} entries but ys has {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("dataset entry {0} is not finite")]
    NonFinite(usize),
    #[error("latent assignment does not match the dataset: {0}")]
    ShapeMismatch(String),
    #[error("RANSAC needs at least one iteration and a positive epsilon")]
    InvalidRansacParams,
    #[error("dataset csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, LinregError> {
        if xs.len() != ys.len() {
            return Err(LinregError::LengthMismatch {
                xs: xs.len(),
                ys: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(LinregError::TooFewPoints(xs.len()));
        }
        if let Some(i) = (0..xs.len()).find(|&i| !xs[i].is_finite() || !ys[i].is_finite()) {
            return Err(LinregError::NonFinite(i));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// `vcat(xs, ys)`.
    pub fn features(&self) -> Vec<f64> {
        self.xs.iter().chain(&self.ys).copied().collect()
    }

    /// CSV with header `x,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LinregError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y"])?;
        for (x, y) in self.points() {
            w.write_record([format!("{x:?}"), format!("{y:?}")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`]; lines starting
    /// with `#` are ignored.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, LinregError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
            return Err(LinregError::ShapeMismatch(format!("csv header {headers:?}, expected x,y")));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for row in r.deserialize() {
            let (x, y): (f64, f64) = row?;
            xs.push(x);
            ys.push(y);
        }
        Self::new(xs, ys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineHypothesis {
    pub slope: f64,
    pub intercept: f64,
}

impl LineHypothesis {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub num_iters: usize,
    pub epsilon: f64,
}

pub fn outlier_address(i: usize) -> Address {
    Address::from(format!("outlier-{i}"))
}

/// `slope`, `intercept` and `outlier-1..=n`.
pub fn latent_selection(n: usize) -> OutputSelection {
    let mut addrs = vec![Address::from("slope"), Address::from("intercept")];
    addrs.extend((1..=n).map(outlier_address));
    OutputSelection::from_addresses(addrs)
}

fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * r * r - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Reads `(line, outlier flags)` from a latent assignment for `n` points.
pub fn parse_latents(z: &ChoiceMap, n: usize) -> Result<(LineHypothesis, Vec<bool>), LinregError> {
    if z.len() != n + 2 {
        return Err(LinregError::ShapeMismatch(format!("{} addresses for {n} points", z.len())));
    }
    let real = |name: &str| match z.get_str(name) {
        Some(Value::Real(v)) => Ok(*v),
        other => Err(LinregError::ShapeMismatch(format!("`{name}` is {other:?}"))),
    };
    let line = LineHypothesis {
        slope: real("slope")?,
        intercept: real("intercept")?,
    };
    let flags = (1..=n)
        .map(|i| match z.get(&outlier_address(i)) {
            Some(Value::Bool(b)) => Ok(*b),
            other => Err(LinregError::ShapeMismatch(format!("`outlier-{i}` is {other:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((line, flags))
}

/// `log π(z, y)` under the model.
pub fn model_log_joint(data: &Dataset, z: &ChoiceMap) -> Result<f64, LinregError> {
    let (line, flags) = parse_latents(z, data.len())?;
    let mut lp = normal_log_density(line.slope, 0.0, SLOPE_PRIOR_SD)
        + normal_log_density(line.intercept, 0.0, INTERCEPT_PRIOR_SD);
    for ((x, y), outlier) in data.points().zip(flags) {
        let (prior, sd) = if outlier {
            (OUTLIER_PROB, OUTLIER_SD)
        } else {
            (1.0 - OUTLIER_PROB, INLIER_SD)
        };
        lp += prior.ln() + normal_log_density(y, line.at(x), sd);
    }
    Ok(lp)
}

/// The model joint as an unnormalized target over latents; malformed
/// assignments get zero density.
pub fn model_target(data: &Dataset) -> UnnormalizedTarget {
    let data = data.clone();
    UnnormalizedTarget::new("linear regression with outliers", move |z| {
        model_log_joint(&data, z).unwrap_or(f64::NEG_INFINITY)
    })
}

/// Best-of-`num_iters` line through random pairs of points, scored by the
/// number of points with residual below `epsilon`. Pairs with equal xs are
/// skipped. Returns NaN coefficients if every sampled pair was degenerate.
pub fn ransac<R: Rng + ?Sized>(
    data: &Dataset,
    params: &RansacParams,
    rng: &mut R,
) -> Result<LineHypothesis, LinregError> {
    if params.num_iters == 0 || !(params.epsilon > 0.0) {
        return Err(LinregError::InvalidRansacParams);
    }
    let mut best_inliers: i64 = -1;
    let mut best = LineHypothesis {
        slope: f64::NAN,
        intercept: f64::NAN,
    };
    for _ in 0..params.num_iters {
        let pair = index::sample(rng, data.len(), 2);
        let (i, j) = (pair.index(0), pair.index(1));
        let (x1, y1, x2, y2) = (data.xs[i], data.ys[i], data.xs[j], data.ys[j]);
        if x1 == x2 {
            continue;
        }
        let slope = (y2 - y1) / (x2 - x1);
        let line = LineHypothesis {
            slope,
            intercept: y1 - slope * x1,
        };
        let inliers = data
            .points()
            .filter(|&(x, y)| (y - line.at(x)).abs() < params.epsilon)
            .count() as i64;
        if inliers > best_inliers {
            best_inliers = inliers;
            best = line;
        }
    }
    Ok(best)
}

/// Posterior probability that `(x, y)` is an outlier given the line,
/// clamped to `[1e-12, 1 - 1e-12]`.
pub fn conditional_outlier_prob(x: f64, y: f64, line: &LineHypothesis) -> f64 {
    let mean = line.at(x);
    let log_out = OUTLIER_PROB.ln() + normal_log_density(y, mean, OUTLIER_SD);
    let log_in = (1.0 - OUTLIER_PROB).ln() + normal_log_density(y, mean, INLIER_SD);
    sigmoid(log_out - log_in).clamp(OUTLIER_PROB_FLOOR, 1.0 - OUTLIER_PROB_FLOOR)
}

fn propose_outliers(ctx: &mut ExecutionContext<'_>, data: &Dataset, line: &LineHypothesis) -> Result<(), ExecError> {
    for (i, (x, y)) in data.points().enumerate() {
        ctx.flip(outlier_address(i + 1), conditional_outlier_prob(x, y, line))?;
    }
    Ok(())
}

fn check_len(expected: usize, data: &Dataset) -> Result<(), ExecError> {
    if data.len() != expected {
        return Err(ExecError::user(format!(
            "proposal was built for {expected} points, dataset has {}",
            data.len()
        )));
    }
    Ok(())
}

pub const EPS_ALPHA: &str = "eps_alpha";
pub const EPS_BETA: &str = "eps_beta";
pub const ITER_LOGITS: &str = "iter_logits";
const NET_PREFIX: &str = "nn/";

/// RANSAC with learned epsilon and iteration-count distributions, followed by
/// Cauchy noise whose scales come from a network on the data.
///
/// Internal choices: `epsilon ~ gamma(exp(eps_alpha), exp(eps_beta))` and
/// `iters`, the zero-based index into iteration counts `1..=iter_support`
/// drawn from `softmax(iter_logits)`. RANSAC itself uses the raw stream.
#[derive(Debug, Clone)]
pub struct RansacNnProposal {
    pub n: usize,
    pub hidden: usize,
    pub iter_support: usize,
    net: Mlp,
}

impl RansacNnProposal {
    pub fn new(n: usize, hidden: usize, iter_support: usize) -> Self {
        Self {
            n,
            hidden,
            iter_support,
            net: Mlp::new(NET_PREFIX),
        }
    }

    /// `eps_alpha = eps_beta = 0`, uniform iteration logits, random network.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut params = ParamStore::new()
            .with(EPS_ALPHA, Tensor::scalar(0.0))
            .with(EPS_BETA, Tensor::scalar(0.0))
            .with(ITER_LOGITS, Tensor::vector(vec![0.0; self.iter_support]));
        self.net.init(&mut params, 2 * self.n, self.hidden, 2, rng);
        params
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }
}

fn add_cauchy_scale_grad(
    g: &ParamGrad,
    scale: f64,
    net: &Mlp,
    params: &ParamStore,
    cache: &crate::nnet::MlpCache,
    out_grad: impl Fn(f64, f64) -> Vec<f64>,
    acc: &mut Gradients,
) -> Result<(), ExecError> {
    if let ParamGrad::Cauchy { location, scale: d_scale } = g {
        net.backprop_into(params, cache, &out_grad(*location, d_scale * scale), acc)?;
    }
    Ok(())
}

impl ProposalProgram for RansacNnProposal {
    type Input = Dataset;

    fn execute(&self, data: &Dataset, params: &ParamStore, ctx: &mut ExecutionContext<'_>) -> Result<(), ExecError> {
        check_len(self.n, data)?;
        let shape = params.scalar(EPS_ALPHA)?.exp();
        let scale = params.scalar(EPS_BETA)?.exp();
        let epsilon = ctx.choice_with_grad("epsilon", &Distribution::gamma(shape, scale)?, |g, acc| {
            if let ParamGrad::Gamma { shape: ds, scale: dc } = g {
                acc.add(EPS_ALPHA, 0, ds * shape)?;
                acc.add(EPS_BETA, 0, dc * scale)?;
            }
            Ok(())
        })?;
        let epsilon = expect_real("epsilon".into(), epsilon)?;

        let probs = softmax(params.data(ITER_LOGITS)?);
        let idx = ctx.choice_with_grad("iters", &Distribution::categorical(probs.clone())?, |g, acc| {
            if let ParamGrad::Categorical { probs: dp } = g {
                let s: f64 = dp.iter().zip(&probs).map(|(d, p)| d * p).sum();
                let logits = acc.slice_mut(ITER_LOGITS)?;
                for (j, l) in logits.iter_mut().enumerate() {
                    *l += dp[j] * probs[j] - probs[j] * s;
                }
            }
            Ok(())
        })?;
        let num_iters = expect_int("iters".into(), idx)? as usize + 1;

        let guess = ransac(data, &RansacParams { num_iters, epsilon }, ctx.raw_stream())
            .map_err(|e| ExecError::user(e.to_string()))?;

        let (out, cache) = self.net.forward(params, &data.features())?;
        let (slope_scale, intercept_scale) = (out[0].exp(), out[1].exp());
        let net = &self.net;
        let slope = ctx.choice_with_grad("slope", &Distribution::cauchy(guess.slope, slope_scale)?, |g, acc| {
            add_cauchy_scale_grad(g, slope_scale, net, params, &cache, |_, s| vec![s, 0.0], acc)
        })?;
        let intercept = ctx.choice_with_grad(
            "intercept",
            &Distribution::cauchy(guess.intercept, intercept_scale)?,
            |g, acc| add_cauchy_scale_grad(g, intercept_scale, net, params, &cache, |_, s| vec![0.0, s], acc),
        )?;
        let line = LineHypothesis {
            slope: expect_real("slope".into(), slope)?,
            intercept: expect_real("intercept".into(), intercept)?,
        };
        propose_outliers(ctx, data, &line)
    }

    fn default_outputs(&self, data: &Dataset) -> Option<OutputSelection> {
        Some(latent_selection(data.len()))
    }
}

/// A network on `vcat(latent, xs, ys)` with a two-dimensional standard
/// normal latent drawn from the raw stream, predicting Cauchy locations and
/// log-scales for the line.
#[derive(Debug, Clone)]
pub struct NnProposal {
    pub n: usize,
    pub hidden: usize,
    net: Mlp,
}

impl NnProposal {
    pub fn new(n: usize, hidden: usize) -> Self {
        Self {
            n,
            hidden,
            net: Mlp::new(NET_PREFIX),
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut params = ParamStore::new();
        self.net.init(&mut params, 2 + 2 * self.n, self.hidden, 4, rng);
        params
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }
}

impl ProposalProgram for NnProposal {
    type Input = Dataset;

    fn execute(&self, data: &Dataset, params: &ParamStore, ctx: &mut ExecutionContext<'_>) -> Result<(), ExecError> {
        check_len(self.n, data)?;
        let rng = ctx.raw_stream();
        let mut features = vec![StandardNormal.sample(rng), StandardNormal.sample(rng)];
        features.extend(data.features());
        let (out, cache) = self.net.forward(params, &features)?;
        let (slope_scale, intercept_scale) = (out[2].exp(), out[3].exp());
        let net = &self.net;
        let slope = ctx.choice_with_grad("slope", &Distribution::cauchy(out[0], slope_scale)?, |g, acc| {
            add_cauchy_scale_grad(g, slope_scale, net, params, &cache, |l, s| vec![l, 0.0, s, 0.0], acc)
        })?;
        let intercept = ctx.choice_with_grad("intercept", &Distribution::cauchy(out[1], intercept_scale)?, |g, acc| {
            add_cauchy_scale_grad(g, intercept_scale, net, params, &cache, |l, s| vec![0.0, l, 0.0, s], acc)
        })?;
        let line = LineHypothesis {
            slope: expect_real("slope".into(), slope)?,
            intercept: expect_real("intercept".into(), intercept)?,
        };
        propose_outliers(ctx, data, &line)
    }

    fn default_outputs(&self, data: &Dataset) -> Option<OutputSelection> {
        Some(latent_selection(data.len()))
    }
}

/// The model prior over latents; it has no internal choices, so its
/// estimates are exact.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorProposal;

impl ProposalProgram for PriorProposal {
    type Input = Dataset;

    fn execute(&self, data: &Dataset, _: &ParamStore, ctx: &mut ExecutionContext<'_>) -> Result<(), ExecError> {
        ctx.choice("slope", &Distribution::normal(0.0, SLOPE_PRIOR_SD)?)?;
        ctx.choice("intercept", &Distribution::normal(0.0, INTERCEPT_PRIOR_SD)?)?;
        for i in 1..=data.len() {
            ctx.flip(outlier_address(i), OUTLIER_PROB)?;
        }
        Ok(())
    }

    fn default_outputs(&self, data: &Dataset) -> Option<OutputSelection> {
        Some(latent_selection(data.len()))
    }
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn x_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Draws latents and ys from the model at the given xs.
pub fn sample_model<R: Rng + ?Sized>(xs: &[f64], rng: &mut R) -> Result<(Dataset, ChoiceMap), LinregError> {
    let normal = |rng: &mut R, sd: f64| -> f64 {
        let draw: f64 = StandardNormal.sample(rng);
        sd * draw
    };
    let line = LineHypothesis {
        slope: normal(rng, SLOPE_PRIOR_SD),
        intercept: normal(rng, INTERCEPT_PRIOR_SD),
    };
    let mut z = ChoiceMap::new()
        .with("slope", line.slope)
        .with("intercept", line.intercept);
    let mut ys = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        let outlier = rng.random::<f64>() < OUTLIER_PROB;
        z.insert(outlier_address(i + 1), outlier);
        let sd = if outlier { OUTLIER_SD } else { INLIER_SD };
        ys.push(line.at(x) + normal(rng, sd));
    }
    Ok((Dataset::new(xs.to_vec(), ys)?, z))
}

/// Model-sampled `(data, z)` on an evenly spaced grid over `[-5, 5]`.
pub fn generate_training_pair(n: usize, seed: Seed) -> Result<(Dataset, ChoiceMap), LinregError> {
    if n < 2 {
        return Err(LinregError::TooFewPoints(n));
    }
    sample_model(&x_grid(n, -5.0, 5.0), &mut seed.stream())
}

/// The model as a training distribution over `(data, z)` at fixed xs.
#[derive(Debug, Clone)]
pub struct ModelTraining {
    pub xs: Vec<f64>,
}

impl ModelTraining {
    pub fn new(xs: Vec<f64>) -> Result<Self, LinregError> {
        if xs.len() < 2 {
            return Err(LinregError::TooFewPoints(xs.len()));
        }
        Ok(Self { xs })
    }
}

impl TrainingDistribution for ModelTraining {
    type Input = Dataset;

    fn sample(&self, seed: Seed) -> (Dataset, ChoiceMap) {
        sample_model(&self.xs, &mut seed.stream()).expect("grid has at least two finite points")
    }
}

/// Self-normalized posterior mean of the line.
pub fn posterior_mean_line(result: &ImportanceResult) -> LineHypothesis {
    let coord = |name: &'static str| {
        move |z: &ChoiceMap| match z.get_str(name) {
            Some(Value::Real(v)) => *v,
            _ => f64::NAN,
        }
    };
    LineHypothesis {
        slope: result.expectation(coord("slope")),
        intercept: result.expectation(coord("intercept")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{run_constrained, run_forward};
    use crate::trace::split_log_prob;

    fn line_data(slope: f64, intercept: f64, n: usize) -> Dataset {
        let xs = x_grid(n, -5.0, 5.0);
        let ys = xs.iter().map(|x| slope * x + intercept).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(Dataset::new(vec![1.0], vec![1.0]), Err(LinregError::TooFewPoints(1))));
        assert!(matches!(Dataset::new(vec![], vec![]), Err(LinregError::TooFewPoints(0))));
        assert!(Dataset::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(matches!(
            Dataset::new(vec![1.0, f64::NAN], vec![1.0, 2.0]),
            Err(LinregError::NonFinite(1))
        ));
    }

    #[test]
    fn single_inlier_on_line() {
        let data = Dataset::new(vec![1.0, 2.0], vec![3.0, 5.0]).unwrap();
        let z = ChoiceMap::new()
            .with("slope", 2.0)
            .with("intercept", 1.0)
            .with("outlier-1", false)
            .with("outlier-2", false);
        let prior = normal_log_density(2.0, 0.0, 1.0) + normal_log_density(1.0, 0.0, 2.0);
        let data_term = 2.0 * (0.9f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln());
        assert!((model_log_joint(&data, &z).unwrap() - prior - data_term).abs() < 1e-12);
        assert!(model_log_joint(&data, &z.clone().with("outlier-3", true)).is_err());
    }

    #[test]
    fn ransac_examples() {
        let mut rng = Seed(4).stream();
        for iters in [1, 3, 20] {
            let line = ransac(&line_data(2.0, 1.0, 11), &RansacParams { num_iters: iters, epsilon: 0.5 }, &mut rng).unwrap();
            assert!((line.slope - 2.0).abs() < 1e-12 && (line.intercept - 1.0).abs() < 1e-12);
        }
        let two = Dataset::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        let line = ransac(&two, &RansacParams { num_iters: 1, epsilon: 1.0 }, &mut rng).unwrap();
        assert_eq!((line.slope, line.intercept), (2.0, 1.0));
        let flat = line_data(0.0, 4.5, 6);
        let line = ransac(&flat, &RansacParams { num_iters: 2, epsilon: 1.0 }, &mut rng).unwrap();
        assert_eq!((line.slope, line.intercept), (0.0, 4.5));
        let vertical = Dataset::new(vec![1.0, 1.0], vec![0.0, 3.0]).unwrap();
        let line = ransac(&vertical, &RansacParams { num_iters: 3, epsilon: 1.0 }, &mut rng).unwrap();
        assert!(line.slope.is_nan());
    }

    #[test]
    fn outlier_probability_examples() {
        let line = LineHypothesis { slope: 0.5, intercept: -1.0 };
        let at_mean = conditional_outlier_prob(2.0, 0.0, &line);
        let want = (0.1 / 5.8) / ((0.1 / 5.8) + 0.9);
        assert!((at_mean - want).abs() < 1e-15);
        assert!((at_mean - 0.018797).abs() < 1e-6);
        assert!(conditional_outlier_prob(2.0, 10.0, &line) > 0.999);
        for r in [0.3, 1.7, 4.0] {
            assert_eq!(conditional_outlier_prob(2.0, r, &line), conditional_outlier_prob(2.0, -r, &line));
        }
        let far = conditional_outlier_prob(0.0, 1e6, &line);
        assert!(far < 1.0 && far > 0.0);
    }

    #[test]
    fn zero_network_gives_standard_cauchy() {
        let data = line_data(1.0, 0.0, 4);
        let proposal = NnProposal::new(4, 5);
        let mut params = ParamStore::new();
        proposal.network().init_zeros(&mut params, 10, 5, 4);
        let trace = run_forward(&proposal, &data, &params, Seed(3)).unwrap();
        let slope = trace.value(&"slope".into()).unwrap().as_real().unwrap();
        let expected = Distribution::cauchy(0.0, 1.0).unwrap().log_density(&Value::Real(slope)).unwrap();
        assert_eq!(trace.get(&"slope".into()).unwrap().log_prob, expected);
        assert_eq!(trace, run_forward(&proposal, &data, &params, Seed(3)).unwrap());
    }

    #[test]
    fn proposals_share_output_addresses() {
        let data = line_data(1.0, 0.0, 5);
        let a = RansacNnProposal::new(5, 4, 10);
        let b = NnProposal::new(5, 4);
        let pa = a.init_params(&mut Seed(1).stream());
        let pb = b.init_params(&mut Seed(2).stream());
        let sel = latent_selection(5);
        let za = crate::trace::restrict(&run_forward(&a, &data, &pa, Seed(1)).unwrap(), &sel).unwrap();
        let zb = crate::trace::restrict(&run_forward(&b, &data, &pb, Seed(1)).unwrap(), &sel).unwrap();
        let za: Vec<_> = za.addresses().cloned().collect();
        let zb: Vec<_> = zb.addresses().cloned().collect();
        assert_eq!(za, zb);
        assert_eq!(za.len(), 7);
    }

    #[test]
    fn collinear_data_hits_cauchy_mode() {
        let data = line_data(2.0, 1.0, 6);
        let proposal = RansacNnProposal::new(6, 3, 10);
        let params = proposal.init_params(&mut Seed(9).stream());
        let mut z = ChoiceMap::new().with("slope", 2.0).with("intercept", 1.0);
        for i in 1..=6 {
            z.insert(outlier_address(i), false);
        }
        let trace = run_constrained(&proposal, &data, &params, &z, Seed(5)).unwrap();
        let (out, _) = proposal.network().forward(&params, &data.features()).unwrap();
        let slope_lp = trace.get(&"slope".into()).unwrap().log_prob;
        assert!((slope_lp + (std::f64::consts::PI * out[0].exp()).ln()).abs() < 1e-9);
        let (lp_o, _) = split_log_prob(&trace, &latent_selection(6));
        let outlier_terms: f64 = (1..=6)
            .map(|i| trace.get(&outlier_address(i)).unwrap().log_prob)
            .sum();
        let cauchy_terms = slope_lp + trace.get(&"intercept".into()).unwrap().log_prob;
        assert!((lp_o - cauchy_terms - outlier_terms).abs() < 1e-12);
    }

    #[test]
    fn generated_pairs() {
        let (d1, z1) = generate_training_pair(20, Seed(7)).unwrap();
        let (d2, z2) = generate_training_pair(20, Seed(7)).unwrap();
        assert_eq!((d1.clone(), z1.clone()), (d2, z2));
        assert_eq!(z1.len(), 22);
        assert_eq!(d1.xs()[0], -5.0);
        assert_eq!(d1.xs()[19], 5.0);
        assert!(generate_training_pair(1, Seed(0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (d, _) = generate_training_pair(5, Seed(1)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,y\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }
}
