//! Primitive distributions: sampling, log densities and score functions.
//!
//! Conventions: `normal` and `cauchy` take a standard deviation / scale as
//! their second parameter, and `gamma` is parameterized by shape and scale.
//! Values outside the support have log density `-∞`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Cauchy, Distribution as _, Gamma, StandardNormal};
use thiserror::Error;

use crate::special::{digamma, ln_gamma};
use crate::trace::Value;

const CATEGORICAL_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid parameters for {kind}: {reason}")]
    InvalidParams { kind: &'static str, reason: String },
    #[error("value {value:?} is outside the support of {kind}")]
    OutOfSupport { kind: &'static str, value: Value },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Bernoulli { p: f64 },
    Categorical { probs: Vec<f64> },
    /// Integers `lo..=hi`.
    UniformDiscrete { lo: i64, hi: i64 },
    Normal { mean: f64, std: f64 },
    Cauchy { location: f64, scale: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Standard normal vector of length `dim`.
    MvNormalIid { dim: usize },
}

/// Partial derivatives of the log density with respect to each parameter,
/// at a fixed value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Bernoulli { p: f64 },
    Categorical { probs: Vec<f64> },
    UniformDiscrete,
    Normal { mean: f64, std: f64 },
    Cauchy { location: f64, scale: f64 },
    Gamma { shape: f64, scale: f64 },
    MvNormalIid,
}

impl ParamGrad {
    /// `(parameter name, partial)` pairs in declaration order; categorical
    /// probabilities are named `probs[i]`.
    pub fn partials(&self) -> Vec<(String, f64)> {
        match self {
            ParamGrad::Bernoulli { p } => vec![("p".into(), *p)],
            ParamGrad::Categorical { probs } => probs
                .iter()
                .enumerate()
                .map(|(i, g)| (format!("probs[{i}]"), *g))
                .collect(),
            ParamGrad::Normal { mean, std } => vec![("mean".into(), *mean), ("std".into(), *std)],
            ParamGrad::Cauchy { location, scale } => {
                vec![("location".into(), *location), ("scale".into(), *scale)]
            }
            ParamGrad::Gamma { shape, scale } => {
                vec![("shape".into(), *shape), ("scale".into(), *scale)]
            }
            ParamGrad::UniformDiscrete | ParamGrad::MvNormalIid => Vec::new(),
        }
    }
}

fn invalid(kind: &'static str, reason: impl Into<String>) -> DistError {
    DistError::InvalidParams {
        kind,
        reason: reason.into(),
    }
}

fn positive(kind: &'static str, name: &str, x: f64) -> Result<(), DistError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(kind, format!("{name} must be positive and finite, got {x}")))
    }
}

fn finite(kind: &'static str, name: &str, x: f64) -> Result<(), DistError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(kind, format!("{name} must be finite, got {x}")))
    }
}

impl Distribution {
    pub fn bernoulli(p: f64) -> Result<Self, DistError> {
        let d = Distribution::Bernoulli { p };
        d.validate()?;
        Ok(d)
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self, DistError> {
        let d = Distribution::Categorical { probs };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform_discrete(lo: i64, hi: i64) -> Result<Self, DistError> {
        let d = Distribution::UniformDiscrete { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(mean: f64, std: f64) -> Result<Self, DistError> {
        let d = Distribution::Normal { mean, std };
        d.validate()?;
        Ok(d)
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self, DistError> {
        let d = Distribution::Cauchy { location, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, DistError> {
        let d = Distribution::Gamma { shape, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn mvnormal_iid(dim: usize) -> Self {
        Distribution::MvNormalIid { dim }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::Bernoulli { .. } => "bernoulli",
            Distribution::Categorical { .. } => "categorical",
            Distribution::UniformDiscrete { .. } => "uniform_discrete",
            Distribution::Normal { .. } => "normal",
            Distribution::Cauchy { .. } => "cauchy",
            Distribution::Gamma { .. } => "gamma",
            Distribution::MvNormalIid { .. } => "mvnormal_iid",
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let kind = self.kind();
        match self {
            Distribution::Bernoulli { p } => {
                if (0.0..=1.0).contains(p) {
                    Ok(())
                } else {
                    Err(invalid(kind, format!("p must lie in [0, 1], got {p}")))
                }
            }
            Distribution::Categorical { probs } => {
                if probs.is_empty() {
                    return Err(invalid(kind, "no categories"));
                }
                if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(invalid(kind, "probabilities must be nonnegative"));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > CATEGORICAL_SUM_TOLERANCE {
                    return Err(invalid(kind, format!("probabilities sum to {sum}")));
                }
                Ok(())
            }
            Distribution::UniformDiscrete { lo, hi } => {
                if lo <= hi {
                    Ok(())
                } else {
                    Err(invalid(kind, format!("empty range {lo}..={hi}")))
                }
            }
            Distribution::Normal { mean, std } => {
                finite(kind, "mean", *mean)?;
                positive(kind, "std", *std)
            }
            Distribution::Cauchy { location, scale } => {
                finite(kind, "location", *location)?;
                positive(kind, "scale", *scale)
            }
            Distribution::Gamma { shape, scale } => {
                positive(kind, "shape", *shape)?;
                positive(kind, "scale", *scale)
            }
            Distribution::MvNormalIid { .. } => Ok(()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Distribution::Bernoulli { .. }
                | Distribution::Categorical { .. }
                | Distribution::UniformDiscrete { .. }
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Value, DistError> {
        self.validate()?;
        let value = match self {
            Distribution::Bernoulli { p } => Value::Bool(rng.random::<f64>() < *p),
            Distribution::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = None;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc && *p > 0.0 {
                        chosen = Some(i);
                        break;
                    }
                }
                // Rounding can leave u just above the final partial sum.
                let idx = chosen.unwrap_or_else(|| {
                    probs.iter().rposition(|p| *p > 0.0).expect("validated nonempty mass")
                });
                Value::Int(idx as i64)
            }
            Distribution::UniformDiscrete { lo, hi } => Value::Int(rng.random_range(*lo..=*hi)),
            Distribution::Normal { mean, std } => {
                let e: f64 = StandardNormal.sample(rng);
                Value::Real(mean + std * e)
            }
            Distribution::Cauchy { location, scale } => {
                let c = Cauchy::new(*location, *scale).map_err(|e| invalid("cauchy", e.to_string()))?;
                Value::Real(c.sample(rng))
            }
            Distribution::Gamma { shape, scale } => {
                let g = Gamma::new(*shape, *scale).map_err(|e| invalid("gamma", e.to_string()))?;
                Value::Real(g.sample(rng))
            }
            Distribution::MvNormalIid { dim } => {
                Value::Vector((0..*dim).map(|_| StandardNormal.sample(rng)).collect())
            }
        };
        Ok(value)
    }

    /// Log density (or mass) at `value`; `-∞` outside the support, including
    /// values of the wrong type.
    pub fn log_density(&self, value: &Value) -> Result<f64, DistError> {
        self.validate()?;
        let ninf = f64::NEG_INFINITY;
        let lp = match (self, value) {
            (Distribution::Bernoulli { p }, Value::Bool(b)) => {
                if *b {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            }
            (Distribution::Categorical { probs }, Value::Int(i)) => usize::try_from(*i)
                .ok()
                .and_then(|i| probs.get(i))
                .map_or(ninf, |p| p.ln()),
            (Distribution::UniformDiscrete { lo, hi }, Value::Int(i)) => {
                if (lo..=hi).contains(&i) {
                    -((hi - lo + 1) as f64).ln()
                } else {
                    ninf
                }
            }
            (Distribution::Normal { mean, std }, Value::Real(x)) => {
                let z = (x - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
            }
            (Distribution::Cauchy { location, scale }, Value::Real(x)) => {
                let z = (x - location) / scale;
                -PI.ln() - scale.ln() - (z * z).ln_1p()
            }
            (Distribution::Gamma { shape, scale }, Value::Real(x)) => {
                if *x > 0.0 {
                    (shape - 1.0) * x.ln() - x / scale - ln_gamma(*shape) - shape * scale.ln()
                } else {
                    ninf
                }
            }
            (Distribution::MvNormalIid { dim }, Value::Vector(xs)) => {
                if xs.len() == *dim {
                    xs.iter().map(|x| -0.5 * x * x).sum::<f64>()
                        - 0.5 * (*dim as f64) * (2.0 * PI).ln()
                } else {
                    ninf
                }
            }
            _ => ninf,
        };
        // NaN inputs (e.g. a NaN real value) are outside every support.
        Ok(if lp.is_nan() { ninf } else { lp })
    }

    /// Score function: gradient of the log density with respect to the
    /// distribution's own parameters.
    pub fn grad_log_density(&self, value: &Value) -> Result<ParamGrad, DistError> {
        let lp = self.log_density(value)?;
        if lp == f64::NEG_INFINITY {
            return Err(DistError::OutOfSupport {
                kind: self.kind(),
                value: value.clone(),
            });
        }
        let grad = match (self, value) {
            (Distribution::Bernoulli { p }, Value::Bool(b)) => ParamGrad::Bernoulli {
                p: if *b { 1.0 / p } else { -1.0 / (1.0 - p) },
            },
            (Distribution::Categorical { probs }, Value::Int(i)) => {
                let i = *i as usize;
                let mut g = vec![0.0; probs.len()];
                g[i] = 1.0 / probs[i];
                ParamGrad::Categorical { probs: g }
            }
            (Distribution::UniformDiscrete { .. }, _) => ParamGrad::UniformDiscrete,
            (Distribution::Normal { mean, std }, Value::Real(x)) => {
                let r = x - mean;
                ParamGrad::Normal {
                    mean: r / (std * std),
                    std: -1.0 / std + r * r / (std * std * std),
                }
            }
            (Distribution::Cauchy { location, scale }, Value::Real(x)) => {
                let r = x - location;
                let denom = scale * scale + r * r;
                ParamGrad::Cauchy {
                    location: 2.0 * r / denom,
                    scale: -1.0 / scale + 2.0 * r * r / (scale * denom),
                }
            }
            (Distribution::Gamma { shape, scale }, Value::Real(x)) => ParamGrad::Gamma {
                shape: x.ln() - digamma(*shape).expect("validated shape") - scale.ln(),
                scale: -shape / scale + x / (scale * scale),
            },
            (Distribution::MvNormalIid { .. }, _) => ParamGrad::MvNormalIid,
            _ => unreachable!("finite log density implies matching value tag"),
        };
        Ok(grad)
    }

    /// Values with positive probability, for finite discrete distributions.
    pub fn finite_support(&self) -> Option<Vec<Value>> {
        match self {
            Distribution::Bernoulli { p } => {
                let mut s = Vec::with_capacity(2);
                if *p > 0.0 {
                    s.push(Value::Bool(true));
                }
                if *p < 1.0 {
                    s.push(Value::Bool(false));
                }
                Some(s)
            }
            Distribution::Categorical { probs } => Some(
                probs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(i, _)| Value::Int(i as i64))
                    .collect(),
            ),
            Distribution::UniformDiscrete { lo, hi } => Some((*lo..=*hi).map(Value::Int).collect()),
            _ => None,
        }
    }
}
