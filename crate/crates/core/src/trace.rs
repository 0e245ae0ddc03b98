//! Addresses, values, traces and choice maps.
//!
//! A [`Trace`] is the ordered record of every addressed random choice made by
//! one execution of a program, together with the log probability of each
//! choice given the choices before it. A [`ChoiceMap`] is a partial
//! assignment of values to addresses; it is used both for output traces and
//! for execution constraints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

/// Absolute tolerance used when checking that a trace's cached total matches
/// the sum of its records.
pub const TOTAL_LOG_PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("address must be nonempty")]
    EmptyAddress,
    #[error("selected output address `{0}` was not realized")]
    MissingOutput(Address),
    #[error("address `{0}` visited twice in one execution")]
    DuplicateAddress(Address),
    #[error("log probability of `{0}` is not finite")]
    NonFiniteLogProb(Address),
    #[error("record positions are not 0..n-1")]
    BadPositions,
    #[error("total log probability {stored} disagrees with record sum {summed}")]
    TotalMismatch { stored: f64, summed: f64 },
    #[error("cannot serialize non-finite real {0}")]
    NonFiniteReal(f64),
    #[error("malformed JSON: {0}")]
    Json(String),
}

/// Name of a random choice. Hierarchy is expressed with `/` separators.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(String);

impl Address {
    pub const SEPARATOR: char = '/';

    pub fn new(key: impl Into<String>) -> Result<Self, TraceError> {
        let key = key.into();
        if key.is_empty() {
            return Err(TraceError::EmptyAddress);
        }
        Ok(Self(key))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True if this address is `prefix` itself or lies below it in the `/` hierarchy.
    pub fn has_prefix(&self, prefix: &str) -> bool {
        match self.0.strip_prefix(prefix) {
            Some("") => true,
            Some(rest) => rest.starts_with(Self::SEPARATOR),
            None => false,
        }
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Address {
    /// Panics on the empty string; use [`Address::new`] for untrusted keys.
    fn from(key: &str) -> Self {
        Self::new(key).expect("address literal must be nonempty")
    }
}

impl From<String> for Address {
    fn from(key: String) -> Self {
        Self::new(key).expect("address must be nonempty")
    }
}

/// Value of a random choice. Values with different tags never compare equal.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Vector(Vec<f64>),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Vector(_) => "vec",
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<f64> for Value {
    fn from(r: f64) -> Self {
        Value::Real(r)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Vector(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceRecord {
    pub address: Address,
    pub value: Value,
    /// Log probability (nats) of this value given the preceding choices.
    pub log_prob: f64,
    /// Zero-based execution order.
    pub position: usize,
}

/// Complete record of one program execution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    records: Vec<ChoiceRecord>,
    total_log_prob: f64,
}

impl Trace {
    /// Builds a trace from `(address, value, log_prob)` triples in execution order.
    pub fn from_choices<I>(choices: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = (Address, Value, f64)>,
    {
        let mut seen = BTreeSet::new();
        let mut records = Vec::new();
        let mut total = 0.0;
        for (position, (address, value, log_prob)) in choices.into_iter().enumerate() {
            if !log_prob.is_finite() {
                return Err(TraceError::NonFiniteLogProb(address));
            }
            if !seen.insert(address.clone()) {
                return Err(TraceError::DuplicateAddress(address));
            }
            total += log_prob;
            records.push(ChoiceRecord {
                address,
                value,
                log_prob,
                position,
            });
        }
        Ok(Self {
            records,
            total_log_prob: total,
        })
    }

    pub(crate) fn from_records_unchecked(records: Vec<ChoiceRecord>) -> Self {
        let total_log_prob = records.iter().map(|r| r.log_prob).sum();
        Self {
            records,
            total_log_prob,
        }
    }

    pub fn records(&self) -> &[ChoiceRecord] {
        &self.records
    }

    pub fn total_log_prob(&self) -> f64 {
        self.total_log_prob
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, address: &Address) -> Option<&ChoiceRecord> {
        self.records.iter().find(|r| &r.address == address)
    }

    pub fn value(&self, address: &Address) -> Option<&Value> {
        self.get(address).map(|r| &r.value)
    }

    /// All choices as a choice map.
    pub fn to_choice_map(&self) -> ChoiceMap {
        self.records
            .iter()
            .map(|r| (r.address.clone(), r.value.clone()))
            .collect()
    }

    /// Checks the structural invariants: finite log probs, unique addresses,
    /// positions `0..n`, and the cached total.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen = BTreeSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.position != i {
                return Err(TraceError::BadPositions);
            }
            if !r.log_prob.is_finite() {
                return Err(TraceError::NonFiniteLogProb(r.address.clone()));
            }
            if !seen.insert(&r.address) {
                return Err(TraceError::DuplicateAddress(r.address.clone()));
            }
        }
        let summed: f64 = self.records.iter().map(|r| r.log_prob).sum();
        if (summed - self.total_log_prob).abs() > TOTAL_LOG_PROB_TOLERANCE {
            return Err(TraceError::TotalMismatch {
                stored: self.total_log_prob,
                summed,
            });
        }
        Ok(())
    }
}

/// Partial assignment of values to addresses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChoiceMap {
    entries: BTreeMap<Address, Value>,
}

impl ChoiceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, address: impl Into<Address>, value: impl Into<Value>) -> Option<Value> {
        self.entries.insert(address.into(), value.into())
    }

    pub fn with(mut self, address: impl Into<Address>, value: impl Into<Value>) -> Self {
        self.insert(address, value);
        self
    }

    pub fn get(&self, address: &Address) -> Option<&Value> {
        self.entries.get(address)
    }

    pub fn get_str(&self, address: &str) -> Option<&Value> {
        self.entries.get(&Address::from(address))
    }

    pub fn contains(&self, address: &Address) -> bool {
        self.entries.contains_key(address)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &Value)> {
        self.entries.iter()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Address> {
        self.entries.keys()
    }

    /// Copy of `self` with every entry of `other` written over it.
    pub fn merged(&self, other: &ChoiceMap) -> ChoiceMap {
        let mut out = self.clone();
        for (a, v) in other.iter() {
            out.entries.insert(a.clone(), v.clone());
        }
        out
    }

    /// Selection naming exactly this map's addresses.
    pub fn selection(&self) -> OutputSelection {
        OutputSelection::from_addresses(self.entries.keys().cloned())
    }
}

impl FromIterator<(Address, Value)> for ChoiceMap {
    fn from_iter<T: IntoIterator<Item = (Address, Value)>>(iter: T) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Set of output addresses, given explicitly and/or by `/`-hierarchical prefixes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSelection {
    addresses: BTreeSet<Address>,
    prefixes: Vec<String>,
}

impl OutputSelection {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_addresses<I, A>(addresses: I) -> Self
    where
        I: IntoIterator<Item = A>,
        A: Into<Address>,
    {
        Self {
            addresses: addresses.into_iter().map(Into::into).collect(),
            prefixes: Vec::new(),
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefixes.push(prefix.into());
        self
    }

    pub fn contains(&self, address: &Address) -> bool {
        self.addresses.contains(address) || self.prefixes.iter().any(|p| address.has_prefix(p))
    }

    /// Explicitly listed addresses (prefix patterns are not expanded).
    pub fn explicit(&self) -> &BTreeSet<Address> {
        &self.addresses
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }
}

/// Output trace obtained by restricting `trace` to the selected addresses.
///
/// Every explicitly selected address must be realized in the trace; prefix
/// patterns select whatever realized addresses fall under them.
pub fn restrict(trace: &Trace, selection: &OutputSelection) -> Result<ChoiceMap, TraceError> {
    for address in selection.explicit() {
        if trace.get(address).is_none() {
            return Err(TraceError::MissingOutput(address.clone()));
        }
    }
    Ok(trace
        .records()
        .iter()
        .filter(|r| selection.contains(&r.address))
        .map(|r| (r.address.clone(), r.value.clone()))
        .collect())
}

/// True iff every address of `z` is realized in `trace` with an equal value.
pub fn agrees(trace: &Trace, z: &ChoiceMap) -> bool {
    z.iter()
        .all(|(a, v)| trace.value(a).is_some_and(|tv| tv == v))
}

/// Splits the trace log probability into `(log p_O, log p_I)`.
pub fn split_log_prob(trace: &Trace, selection: &OutputSelection) -> (f64, f64) {
    let mut output = 0.0;
    let mut internal = 0.0;
    for r in trace.records() {
        if selection.contains(&r.address) {
            output += r.log_prob;
        } else {
            internal += r.log_prob;
        }
    }
    (output, internal)
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

fn real_json(x: f64) -> Result<Box<RawValue>, TraceError> {
    if !x.is_finite() {
        return Err(TraceError::NonFiniteReal(x));
    }
    RawValue::from_string(format!("{x:.16e}")).map_err(|e| TraceError::Json(e.to_string()))
}

#[derive(Serialize)]
struct ValueOut {
    t: &'static str,
    v: Box<RawValue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValueIn {
    t: String,
    v: serde_json::Value,
}

#[derive(Serialize)]
struct RecordOut {
    addr: String,
    value: ValueOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    lp: Option<Box<RawValue>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    addr: String,
    value: ValueIn,
    #[serde(default)]
    lp: Option<f64>,
}

#[derive(Serialize)]
struct DocOut {
    choices: Vec<RecordOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_lp: Option<Box<RawValue>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocIn {
    choices: Vec<RecordIn>,
    #[serde(default)]
    total_lp: Option<f64>,
}

fn value_out(value: &Value) -> Result<ValueOut, TraceError> {
    let v = match value {
        Value::Bool(b) => RawValue::from_string(b.to_string()),
        Value::Int(i) => RawValue::from_string(i.to_string()),
        Value::Real(r) => return Ok(ValueOut { t: "real", v: real_json(*r)? }),
        Value::Vector(xs) => {
            let parts = xs
                .iter()
                .map(|x| real_json(*x).map(|r| r.get().to_owned()))
                .collect::<Result<Vec<_>, _>>()?;
            RawValue::from_string(format!("[{}]", parts.join(",")))
        }
    }
    .map_err(|e| TraceError::Json(e.to_string()))?;
    Ok(ValueOut { t: value.tag(), v })
}

fn value_in(value: ValueIn) -> Result<Value, TraceError> {
    let bad = || TraceError::Json(format!("value does not match tag `{}`", value.t));
    match value.t.as_str() {
        "bool" => value.v.as_bool().map(Value::Bool).ok_or_else(bad),
        "int" => value.v.as_i64().map(Value::Int).ok_or_else(bad),
        "real" => value.v.as_f64().map(Value::Real).ok_or_else(bad),
        "vec" => value
            .v
            .as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|x| x.as_f64().ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Vector),
        other => Err(TraceError::Json(format!("unknown value tag `{other}`"))),
    }
}

fn to_string<T: Serialize>(doc: &T) -> Result<String, TraceError> {
    serde_json::to_string(doc).map_err(|e| TraceError::Json(e.to_string()))
}

impl Trace {
    /// `{"choices":[{"addr","value":{"t","v"},"lp"}],"total_lp"}` with reals
    /// printed to 17 significant digits.
    pub fn to_json(&self) -> Result<String, TraceError> {
        let choices = self
            .records
            .iter()
            .map(|r| {
                Ok(RecordOut {
                    addr: r.address.to_string(),
                    value: value_out(&r.value)?,
                    lp: Some(real_json(r.log_prob)?),
                })
            })
            .collect::<Result<Vec<_>, TraceError>>()?;
        to_string(&DocOut {
            choices,
            total_lp: Some(real_json(self.total_log_prob)?),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let doc: DocIn = serde_json::from_str(text).map_err(|e| TraceError::Json(e.to_string()))?;
        let mut records = Vec::with_capacity(doc.choices.len());
        for (position, r) in doc.choices.into_iter().enumerate() {
            let address = Address::new(r.addr)?;
            let log_prob = r
                .lp
                .ok_or_else(|| TraceError::Json(format!("record `{address}` lacks `lp`")))?;
            records.push(ChoiceRecord {
                value: value_in(r.value)?,
                address,
                log_prob,
                position,
            });
        }
        let total = doc
            .total_lp
            .ok_or_else(|| TraceError::Json("missing `total_lp`".into()))?;
        let trace = Trace {
            records,
            total_log_prob: total,
        };
        trace.validate()?;
        Ok(trace)
    }
}

impl ChoiceMap {
    /// Same layout as a trace document, without `lp` and `total_lp`.
    pub fn to_json(&self) -> Result<String, TraceError> {
        let choices = self
            .entries
            .iter()
            .map(|(a, v)| {
                Ok(RecordOut {
                    addr: a.to_string(),
                    value: value_out(v)?,
                    lp: None,
                })
            })
            .collect::<Result<Vec<_>, TraceError>>()?;
        to_string(&DocOut {
            choices,
            total_lp: None,
        })
    }

    /// Accepts either a choice-map or a full trace document.
    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let doc: DocIn = serde_json::from_str(text).map_err(|e| TraceError::Json(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, TraceError> {
        let doc: DocIn = serde_json::from_value(value).map_err(|e| TraceError::Json(e.to_string()))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: DocIn) -> Result<Self, TraceError> {
        let mut map = ChoiceMap::new();
        for r in doc.choices {
            let address = Address::new(r.addr)?;
            if map.contains(&address) {
                return Err(TraceError::DuplicateAddress(address));
            }
            map.entries.insert(address, value_in(r.value)?);
        }
        Ok(map)
    }
}
