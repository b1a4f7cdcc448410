//! External IP import: CLIP blocks (free-running, own clock, pin access) and
//! IPIN nodes (embedded in the dataflow graph with a declared pipeline
//! latency).
//!
//! Behavior is a model, not HDL: a finite lookup table, a combinational
//! affine map (`out = B*in + c`), or a clocked linear state update
//! (`state' = A*state + B*in + c`, `out = state`), all with integer
//! coefficients. Descriptors load from JSON.

use crate::diag::{Error, ErrorCode, Result};
use crate::value::{FxpValue, OverflowMode, Value, WireType};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpStyle {
    Clip,
    Ipin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDir {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpPort {
    pub name: String,
    pub dir: PortDir,
    /// Scalar type written as in gtext: `bool`, `i32`, `f64`, `fxp<W,I>`.
    pub r#type: String,
    #[serde(skip, default = "default_port_ty")]
    pub ty: WireType,
}

fn default_port_ty() -> WireType {
    WireType::Int32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IpBehavior {
    /// Finite map from input tuples to output tuples.
    Table {
        entries: Vec<TableEntry>,
        default_out: Vec<i64>,
    },
    /// Combinational affine map: out = b * in + c.
    Comb { b: Vec<Vec<i64>>, c: Vec<i64> },
    /// Clocked linear state update: state' = a*state + b*in + c; out = state.
    Linear { a: Vec<Vec<i64>>, b: Vec<Vec<i64>>, c: Vec<i64>, init: Option<Vec<i64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub r#in: Vec<i64>,
    pub out: Vec<i64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpResources {
    #[serde(default)]
    pub lut: u64,
    #[serde(default)]
    pub ff: u64,
    #[serde(default)]
    pub dsp: u64,
    #[serde(default)]
    pub bram: u64,
}

/// An imported IP block, as declared in its JSON descriptor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpDescriptor {
    pub name: String,
    pub style: IpStyle,
    pub ports: Vec<IpPort>,
    pub behavior: IpBehavior,
    /// IPIN only: pipeline latency in ticks (>= 0). Latency 0 requires
    /// `depth_ns` so the timing check can account for the logic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<u64>,
    /// CLIP only: the clock this block free-runs on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<String>,
    /// IPIN latency 0 only: combinational depth of the logic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_ns: Option<f64>,
    #[serde(default)]
    pub resources: IpResources,
}

fn parse_scalar_type(s: &str) -> Option<WireType> {
    match s {
        "bool" => Some(WireType::Bool),
        "i32" => Some(WireType::Int32),
        "f64" => Some(WireType::Float64),
        _ => {
            let inner = s.strip_prefix("fxp<")?.strip_suffix('>')?;
            let (w, i) = inner.split_once(',')?;
            WireType::fxp(w.trim().parse().ok()?, i.trim().parse().ok()?)
        }
    }
}

impl IpDescriptor {
    /// Parses and validates a descriptor. Every schema violation is an
    /// `E_IP_SCHEMA` fault naming the offending field.
    pub fn from_json(json: &str) -> Result<IpDescriptor> {
        let mut desc: IpDescriptor = serde_json::from_str(json)
            .map_err(|e| Error::fault(ErrorCode::IpSchema, format!("bad IP descriptor: {}", e)))?;
        for p in &mut desc.ports {
            p.ty = parse_scalar_type(&p.r#type).ok_or_else(|| {
                Error::fault(
                    ErrorCode::IpSchema,
                    format!("IP `{}` port `{}`: unknown type `{}`", desc.name, p.name, p.r#type),
                )
            })?;
        }
        desc.validate()?;
        Ok(desc)
    }

    pub fn load(path: &std::path::Path) -> Result<IpDescriptor> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::fault(ErrorCode::Io, format!("cannot read {}: {}", path.display(), e))
        })?;
        Self::from_json(&text)
    }

    pub fn in_ports(&self) -> Vec<&IpPort> {
        self.ports.iter().filter(|p| p.dir == PortDir::In).collect()
    }

    pub fn out_ports(&self) -> Vec<&IpPort> {
        self.ports.iter().filter(|p| p.dir == PortDir::Out).collect()
    }

    fn bad(&self, msg: impl std::fmt::Display) -> Error {
        Error::fault(ErrorCode::IpSchema, format!("IP `{}`: {}", self.name, msg))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::fault(ErrorCode::IpSchema, "IP descriptor has no name"));
        }
        let n_in = self.in_ports().len();
        let n_out = self.out_ports().len();
        match self.style {
            IpStyle::Ipin => {
                let latency = self.latency.ok_or_else(|| self.bad("IPIN requires `latency`"))?;
                if latency == 0 && self.depth_ns.is_none() {
                    return Err(self.bad("latency-0 IPIN requires `depth_ns`"));
                }
                if self.clock.is_some() {
                    return Err(self.bad("IPIN must not declare a clock"));
                }
            }
            IpStyle::Clip => {
                if self.clock.is_none() {
                    return Err(self.bad("CLIP requires `clock`"));
                }
                if self.latency.is_some() {
                    return Err(self.bad("CLIP must not declare `latency`"));
                }
            }
        }
        match &self.behavior {
            IpBehavior::Table { entries, default_out } => {
                if default_out.len() != n_out {
                    return Err(self.bad("table default_out length != out port count"));
                }
                for e in entries {
                    if e.r#in.len() != n_in || e.out.len() != n_out {
                        return Err(self.bad("table entry arity mismatch"));
                    }
                }
            }
            IpBehavior::Comb { b, c } => {
                if c.len() != n_out || b.len() != n_out {
                    return Err(self.bad("comb coefficients must have one row per out port"));
                }
                for row in b {
                    if row.len() != n_in {
                        return Err(self.bad("comb row length != in port count"));
                    }
                }
            }
            IpBehavior::Linear { a, b, c, init } => {
                let n = a.len();
                if n == 0 {
                    return Err(self.bad("linear state must not be empty"));
                }
                for row in a {
                    if row.len() != n {
                        return Err(self.bad("linear `a` must be square"));
                    }
                }
                // An empty `b` means the state ignores inputs entirely.
                if !(b.is_empty() && n_in == 0) {
                    if b.len() != n {
                        return Err(self.bad("linear `b` must have one row per state"));
                    }
                    for row in b {
                        if row.len() != n_in {
                            return Err(self.bad("linear `b` row length != in port count"));
                        }
                    }
                }
                if c.len() != n {
                    return Err(self.bad("linear `c` length != state count"));
                }
                if let Some(init) = init {
                    if init.len() != n {
                        return Err(self.bad("linear `init` length != state count"));
                    }
                }
                if n_out > n {
                    return Err(self.bad("linear exposes more out ports than states"));
                }
            }
        }
        Ok(())
    }
}

fn value_to_i64(v: &Value) -> i64 {
    match v {
        Value::Bool(b) => *b as i64,
        Value::Int32(i) => *i as i64,
        Value::Float64(f) => *f as i64,
        Value::Fxp(fx) => fx.raw,
        _ => 0,
    }
}

fn i64_to_value(x: i64, ty: &WireType) -> Value {
    match ty {
        WireType::Bool => Value::Bool(x != 0),
        WireType::Int32 => Value::Int32(x as i32),
        WireType::Float64 => Value::Float64(x as f64),
        WireType::Fxp { word_bits, int_bits } => {
            Value::Fxp(FxpValue::fit(x as i128, *word_bits, *int_bits, OverflowMode::Wrap))
        }
        other => other.default_value(),
    }
}

/// Runtime of one IP instance: behavior state plus the IPIN pipeline queue.
#[derive(Debug)]
pub struct IpRuntime {
    pub desc: IpDescriptor,
    state: Vec<i64>,
    pipeline: VecDeque<Vec<Value>>,
}

impl IpRuntime {
    pub fn new(desc: IpDescriptor) -> IpRuntime {
        let state = match &desc.behavior {
            IpBehavior::Linear { a, init, .. } => {
                init.clone().unwrap_or_else(|| vec![0; a.len()])
            }
            _ => Vec::new(),
        };
        let latency = desc.latency.unwrap_or(0) as usize;
        let defaults: Vec<Value> =
            desc.out_ports().iter().map(|p| p.ty.default_value()).collect();
        let mut pipeline = VecDeque::new();
        for _ in 0..latency {
            pipeline.push_back(defaults.clone());
        }
        IpRuntime { desc, state, pipeline }
    }

    /// Raw behavior evaluation for this tick's inputs (before pipelining).
    fn eval_behavior(&mut self, ins: &[i64]) -> Vec<i64> {
        match &self.desc.behavior {
            IpBehavior::Table { entries, default_out } => entries
                .iter()
                .find(|e| e.r#in == ins)
                .map(|e| e.out.clone())
                .unwrap_or_else(|| default_out.clone()),
            IpBehavior::Comb { b, c } => b
                .iter()
                .zip(c)
                .map(|(row, bias)| {
                    row.iter().zip(ins).fold(*bias, |acc, (k, v)| acc.wrapping_add(k.wrapping_mul(*v)))
                })
                .collect(),
            IpBehavior::Linear { a, b, c, .. } => {
                // One clock tick: update the state, expose the new state.
                let mut next = vec![0i64; self.state.len()];
                for (i, row) in a.iter().enumerate() {
                    let mut acc = c[i];
                    for (j, k) in row.iter().enumerate() {
                        acc = acc.wrapping_add(k.wrapping_mul(self.state[j]));
                    }
                    if let Some(row) = b.get(i) {
                        for (j, k) in row.iter().enumerate() {
                            acc = acc.wrapping_add(k.wrapping_mul(ins[j]));
                        }
                    }
                    next[i] = acc;
                }
                self.state = next.clone();
                next
            }
        }
    }

    /// One tick: accepts one input tuple, returns this tick's output tuple
    /// (the behavior result from `latency` ticks ago).
    pub fn tick(&mut self, ins: &[Value]) -> Vec<Value> {
        let raw_ins: Vec<i64> = ins.iter().map(value_to_i64).collect();
        let raw_outs = self.eval_behavior(&raw_ins);
        let out_ports = self.desc.out_ports();
        let fresh: Vec<Value> = out_ports
            .iter()
            .enumerate()
            .map(|(i, p)| i64_to_value(raw_outs.get(i).copied().unwrap_or(0), &p.ty))
            .collect();
        if self.desc.latency.unwrap_or(0) == 0 {
            fresh
        } else {
            self.pipeline.push_back(fresh);
            self.pipeline.pop_front().expect("pipeline pre-filled")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_ipin(latency: u64) -> IpDescriptor {
        IpDescriptor::from_json(&format!(
            r#"{{
                "name": "ident",
                "style": "ipin",
                "ports": [
                    {{"name": "x", "dir": "in", "type": "i32"}},
                    {{"name": "y", "dir": "out", "type": "i32"}}
                ],
                "behavior": {{"kind": "comb", "b": [[1]], "c": [0]}},
                "latency": {},
                "depth_ns": 1.0
            }}"#,
            latency
        ))
        .unwrap()
    }

    #[test]
    fn ipin_identity_latency_3_delays_by_3_ticks() {
        // Delay-line oracle: out[t] = in[t-3], zero before.
        let mut rt = IpRuntime::new(identity_ipin(3));
        let mut outs = Vec::new();
        for t in 1..=6i32 {
            outs.push(rt.tick(&[Value::Int32(t)])[0].clone());
        }
        assert_eq!(
            outs,
            vec![
                Value::Int32(0),
                Value::Int32(0),
                Value::Int32(0),
                Value::Int32(1),
                Value::Int32(2),
                Value::Int32(3)
            ]
        );
    }

    #[test]
    fn ipin_latency_0_comb_add_matches_builtin_add() {
        let desc = IpDescriptor::from_json(
            r#"{
                "name": "add",
                "style": "ipin",
                "ports": [
                    {"name": "x", "dir": "in", "type": "i32"},
                    {"name": "y", "dir": "in", "type": "i32"},
                    {"name": "sum", "dir": "out", "type": "i32"}
                ],
                "behavior": {"kind": "comb", "b": [[1, 1]], "c": [0]},
                "latency": 0,
                "depth_ns": 5.0
            }"#,
        )
        .unwrap();
        let mut rt = IpRuntime::new(desc);
        for (a, b) in [(1, 2), (-7, 9), (i32::MAX, 1)] {
            let out = rt.tick(&[Value::Int32(a), Value::Int32(b)]);
            assert_eq!(out[0], Value::Int32(a.wrapping_add(b)));
        }
    }

    #[test]
    fn clip_counter_reaches_10_after_10_ticks() {
        let desc = IpDescriptor::from_json(
            r#"{
                "name": "counter",
                "style": "clip",
                "clock": "fck",
                "ports": [{"name": "count", "dir": "out", "type": "i32"}],
                "behavior": {"kind": "linear", "a": [[1]], "b": [], "c": [1]}
            }"#,
        )
        .unwrap();
        let mut rt = IpRuntime::new(desc);
        let mut last = Value::Int32(-1);
        for _ in 0..10 {
            last = rt.tick(&[])[0].clone();
        }
        assert_eq!(last, Value::Int32(10));
    }

    #[test]
    fn schema_violations_are_ip_schema_errors() {
        // IPIN without latency.
        let err = IpDescriptor::from_json(
            r#"{"name": "x", "style": "ipin", "ports": [], "behavior": {"kind": "comb", "b": [], "c": []}}"#,
        )
        .unwrap_err();
        assert_eq!(err.code(), ErrorCode::IpSchema);
        // CLIP without clock.
        let err = IpDescriptor::from_json(
            r#"{"name": "x", "style": "clip", "ports": [], "behavior": {"kind": "comb", "b": [], "c": []}}"#,
        )
        .unwrap_err();
        assert_eq!(err.code(), ErrorCode::IpSchema);
        // Latency-0 IPIN without depth.
        let err = IpDescriptor::from_json(
            r#"{"name": "x", "style": "ipin", "latency": 0, "ports": [], "behavior": {"kind": "comb", "b": [], "c": []}}"#,
        )
        .unwrap_err();
        assert_eq!(err.code(), ErrorCode::IpSchema);
    }
}
