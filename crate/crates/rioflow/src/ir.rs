//! The dataflow IR shared by every pass: nodes, typed wires, diagrams,
//! structure nodes, and whole-project containers.
//!
//! Semantics are single-token-per-wire-per-firing: one execution of a
//! diagram fires every node exactly once; loop structures re-execute their
//! body diagram per iteration. Feedback exists only through shift registers
//! on loop structures, so the node graph of any single diagram is acyclic.
//!
//! Node ids are caller-supplied strings ordered bytewise, which makes every
//! ordering decision in the toolchain deterministic without a numbering
//! pass.

use crate::diag::{Diagnostic, ErrorCode, SourceSpan};
use crate::value::{OverflowMode, Value, WireType};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

/// A named, typed boundary port (control or indicator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub ty: WireType,
}

/// Where a node prefers to run. `Inherit` defers to the enclosing VI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TargetHint {
    #[default]
    Inherit,
    Host,
    Fabric,
}

/// Execution engine of the virtual target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Host,
    Fabric,
}

/// Host-side FIFO operation timeout. `Ticks(0)` is a non-blocking poll.
/// Fabric-side FIFO ops are always non-blocking with an `ok` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub enum Timeout {
    #[default]
    Infinite,
    Ticks(u64),
}


/// A configured primitive instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Div,
    Gt,
    Lt,
    Eq,
    And,
    Or,
    Not,
    Select,
    Const(Value),
    Convert { to: WireType, mode: OverflowMode },
    Biquad,
    ArrayIndex,
    ArrayBuild(usize),
    FifoRead { channel: String, timeout: Timeout },
    FifoWrite { channel: String, timeout: Timeout },
    RegRead { channel: String },
    RegWrite { channel: String },
    ScanRead { channel: String },
    ScanWrite { channel: String },
    AoReady { dac: String },
    AoWrite { dac: String },
    FileReadPcm { source: String },
    Ipin { name: String },
}

impl PrimOp {
    pub fn name(&self) -> &'static str {
        match self {
            PrimOp::Add => "Add",
            PrimOp::Sub => "Sub",
            PrimOp::Mul => "Mul",
            PrimOp::Div => "Div",
            PrimOp::Gt => "Gt",
            PrimOp::Lt => "Lt",
            PrimOp::Eq => "Eq",
            PrimOp::And => "And",
            PrimOp::Or => "Or",
            PrimOp::Not => "Not",
            PrimOp::Select => "Select",
            PrimOp::Const(_) => "Const",
            PrimOp::Convert { .. } => "Convert",
            PrimOp::Biquad => "Biquad",
            PrimOp::ArrayIndex => "ArrayIndex",
            PrimOp::ArrayBuild(_) => "ArrayBuild",
            PrimOp::FifoRead { .. } => "FifoRead",
            PrimOp::FifoWrite { .. } => "FifoWrite",
            PrimOp::RegRead { .. } => "RegRead",
            PrimOp::RegWrite { .. } => "RegWrite",
            PrimOp::ScanRead { .. } => "ScanRead",
            PrimOp::ScanWrite { .. } => "ScanWrite",
            PrimOp::AoReady { .. } => "AoReady",
            PrimOp::AoWrite { .. } => "AoWrite",
            PrimOp::FileReadPcm { .. } => "FileReadPcm",
            PrimOp::Ipin { .. } => "Ipin",
        }
    }

    /// In-port names. `en` ports on channel writers/readers are optional:
    /// left unwired they default to true.
    pub fn in_port_names(&self) -> Vec<&'static str> {
        match self {
            PrimOp::Add | PrimOp::Sub | PrimOp::Mul | PrimOp::Div => vec!["x", "y"],
            PrimOp::Gt | PrimOp::Lt | PrimOp::Eq => vec!["x", "y"],
            PrimOp::And | PrimOp::Or => vec!["x", "y"],
            PrimOp::Not => vec!["x"],
            PrimOp::Select => vec!["s", "t", "f"],
            PrimOp::Const(_) => vec![],
            PrimOp::Convert { .. } => vec!["in"],
            PrimOp::Biquad => vec!["x", "b0", "b1", "b2", "a1", "a2"],
            PrimOp::ArrayIndex => vec!["arr", "idx"],
            PrimOp::ArrayBuild(_) => vec![], // generated: x0..x{n-1}; see in_ports()
            PrimOp::FifoRead { .. } => vec!["en"],
            PrimOp::FifoWrite { .. } => vec!["v", "en"],
            PrimOp::RegRead { .. } => vec![],
            PrimOp::RegWrite { .. } => vec!["v", "en"],
            PrimOp::ScanRead { .. } => vec![],
            PrimOp::ScanWrite { .. } => vec!["v"],
            PrimOp::AoReady { .. } => vec![],
            PrimOp::AoWrite { .. } => vec!["v", "en"],
            PrimOp::FileReadPcm { .. } => vec![],
            PrimOp::Ipin { .. } => vec![], // from descriptor
        }
    }

    pub fn out_port_names(&self) -> Vec<&'static str> {
        match self {
            PrimOp::Add => vec!["sum"],
            PrimOp::Sub => vec!["diff"],
            PrimOp::Mul => vec!["prod"],
            PrimOp::Div => vec!["quot"],
            PrimOp::Gt | PrimOp::Lt | PrimOp::Eq => vec!["res"],
            PrimOp::And | PrimOp::Or | PrimOp::Not => vec!["res"],
            PrimOp::Select => vec!["res"],
            PrimOp::Const(_) => vec!["out"],
            PrimOp::Convert { .. } => vec!["out"],
            PrimOp::Biquad => vec!["y"],
            PrimOp::ArrayIndex => vec!["elem"],
            PrimOp::ArrayBuild(_) => vec!["arr"],
            PrimOp::FifoRead { .. } => vec!["v", "ok"],
            PrimOp::FifoWrite { .. } => vec!["ok"],
            PrimOp::RegRead { .. } => vec!["v"],
            PrimOp::RegWrite { .. } => vec![],
            PrimOp::ScanRead { .. } => vec!["v"],
            PrimOp::ScanWrite { .. } => vec![],
            PrimOp::AoReady { .. } => vec!["rdy"],
            PrimOp::AoWrite { .. } => vec!["ok"],
            PrimOp::FileReadPcm { .. } => vec!["samples", "count"],
            PrimOp::Ipin { .. } => vec![],
        }
    }

    /// Ports that may be left unwired (an implicit constant applies).
    pub fn optional_in_ports(&self) -> &'static [&'static str] {
        match self {
            PrimOp::FifoRead { .. }
            | PrimOp::FifoWrite { .. }
            | PrimOp::RegWrite { .. }
            | PrimOp::AoWrite { .. } => &["en"],
            _ => &[],
        }
    }

    /// True when the primitive can only execute under host semantics.
    pub fn is_host_only(&self) -> bool {
        matches!(
            self,
            PrimOp::Div
                | PrimOp::Biquad
                | PrimOp::ArrayIndex
                | PrimOp::ArrayBuild(_)
                | PrimOp::ScanRead { .. }
                | PrimOp::ScanWrite { .. }
                | PrimOp::FileReadPcm { .. }
        )
    }
}

/// One shift register on a loop structure: the left terminal is a source
/// inside the body (named `name`), the right terminal is a sink (same name
/// used as a wire destination). Left and right share one declared type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRegister {
    pub name: String,
    pub ty: WireType,
    pub init: Value,
}

/// Loop unrolling directives consumed by the performance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlsDirectives {
    pub unroll: u32,
    pub target_ii: Option<u32>,
}

/// A run-time parameter of a single-cycle loop: a named i32 register,
/// optionally bound to a register channel. Its value is latched once per
/// loop iteration, at the iteration boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SctlParam {
    pub name: String,
    pub init: i32,
    pub channel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhileLoop {
    pub body: Diagram,
    /// Name of the bool indicator in `body` that stops the loop when true.
    pub stop_port: String,
    pub shift_regs: Vec<ShiftRegister>,
    pub hls: Option<HlsDirectives>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForLoop {
    pub body: Diagram,
    pub shift_regs: Vec<ShiftRegister>,
    pub hls: Option<HlsDirectives>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStructure {
    /// (selector value, body) pairs, ascending by selector value.
    pub cases: Vec<(i32, Diagram)>,
    pub default: Diagram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SctlLoop {
    pub body: Diagram,
    pub clock: String,
    pub params: Vec<SctlParam>,
    pub shift_regs: Vec<ShiftRegister>,
}

/// Structured-dataflow constructs. Each owns one or more body diagrams and
/// appears as a single node in its parent diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StructureNode {
    While(WhileLoop),
    For(ForLoop),
    Case(CaseStructure),
    Sctl(SctlLoop),
}

impl StructureNode {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StructureNode::While(_) => "while",
            StructureNode::For(_) => "for",
            StructureNode::Case(_) => "case",
            StructureNode::Sctl(_) => "sctl",
        }
    }

    /// All body diagrams, in a fixed order (cases ascending, then default).
    pub fn bodies(&self) -> Vec<&Diagram> {
        match self {
            StructureNode::While(w) => vec![&w.body],
            StructureNode::For(f) => vec![&f.body],
            StructureNode::Case(c) => {
                let mut v: Vec<&Diagram> = c.cases.iter().map(|(_, d)| d).collect();
                v.push(&c.default);
                v
            }
            StructureNode::Sctl(s) => vec![&s.body],
        }
    }

    pub fn shift_regs(&self) -> &[ShiftRegister] {
        match self {
            StructureNode::While(w) => &w.shift_regs,
            StructureNode::For(f) => &f.shift_regs,
            StructureNode::Case(_) => &[],
            StructureNode::Sctl(s) => &s.shift_regs,
        }
    }
}

/// What a node does: a primitive, a sub-VI call, or a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeOp {
    Prim(PrimOp),
    SubVi(String),
    Structure(Box<StructureNode>),
}

/// A node in a diagram. Ports are derived from the operation (and, for
/// sub-VIs, resolved against the callee's connector pane).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub op: NodeOp,
    pub target_hint: TargetHint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
}

impl Node {
    pub fn new(id: impl Into<String>, op: NodeOp) -> Node {
        Node { id: id.into(), op, target_hint: TargetHint::Inherit, span: None }
    }

    pub fn prim(id: impl Into<String>, op: PrimOp) -> Node {
        Node::new(id, NodeOp::Prim(op))
    }

    /// In-port names of this node. For sub-VIs the caller must resolve the
    /// callee; `subvi_ports` provides (controls, indicators) when known.
    pub fn in_port_names(&self, subvi: Option<&ViGraph>) -> Vec<String> {
        match &self.op {
            NodeOp::Prim(PrimOp::ArrayBuild(n)) => (0..*n).map(|i| format!("x{}", i)).collect(),
            NodeOp::Prim(p) => p.in_port_names().into_iter().map(str::to_owned).collect(),
            NodeOp::SubVi(_) => subvi
                .map(|vi| vi.diagram.controls.iter().map(|p| p.name.clone()).collect())
                .unwrap_or_default(),
            NodeOp::Structure(s) => structure_in_ports(s),
        }
    }

    pub fn out_port_names(&self, subvi: Option<&ViGraph>) -> Vec<String> {
        match &self.op {
            NodeOp::Prim(p) => p.out_port_names().into_iter().map(str::to_owned).collect(),
            NodeOp::SubVi(_) => subvi
                .map(|vi| vi.diagram.indicators.iter().map(|p| p.name.clone()).collect())
                .unwrap_or_default(),
            NodeOp::Structure(s) => structure_out_ports(s),
        }
    }
}

/// In-ports of a structure node: any distinguished ports (`N` for for-loops,
/// `sel` for cases) followed by the body's controls (input tunnels).
pub fn structure_in_ports(s: &StructureNode) -> Vec<String> {
    let mut ports = Vec::new();
    match s {
        StructureNode::For(_) => ports.push("N".to_string()),
        StructureNode::Case(_) => ports.push("sel".to_string()),
        StructureNode::While(_) | StructureNode::Sctl(_) => {}
    }
    let body = s.bodies()[0];
    for c in &body.controls {
        ports.push(c.name.clone());
    }
    ports
}

/// Out-ports of a structure node: the body's indicators (output tunnels)
/// followed by shift registers (final carried value).
pub fn structure_out_ports(s: &StructureNode) -> Vec<String> {
    let body = s.bodies()[0];
    let mut ports: Vec<String> = body.indicators.iter().map(|p| p.name.clone()).collect();
    if let StructureNode::While(w) = s {
        ports.retain(|p| *p != w.stop_port);
    }
    for sr in s.shift_regs() {
        ports.push(sr.name.clone());
    }
    ports
}

/// One end of a wire: either a boundary name of the enclosing diagram scope
/// (control, indicator, shift register terminal, loop stop, SCTL param) or a
/// named port on a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Boundary(String),
    Node { node: String, port: String },
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Boundary(name) => f.write_str(name),
            Endpoint::Node { node, port } => write!(f, "{}.{}", node, port),
        }
    }
}

/// A wire: exactly one source endpoint, fan-out of one or more destinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub src: Endpoint,
    pub dsts: Vec<Endpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dst_spans: Vec<Option<SourceSpan>>,
}

impl Wire {
    pub fn new(src: Endpoint, dsts: Vec<Endpoint>) -> Wire {
        Wire { src, dsts, span: None, dst_spans: Vec::new() }
    }

    pub fn simple(src: Endpoint, dst: Endpoint) -> Wire {
        Wire::new(src, vec![dst])
    }
}

/// Convenience constructors for endpoints.
pub fn bport(name: impl Into<String>) -> Endpoint {
    Endpoint::Boundary(name.into())
}

pub fn nport(node: impl Into<String>, port: impl Into<String>) -> Endpoint {
    Endpoint::Node { node: node.into(), port: port.into() }
}

/// A dataflow diagram: boundary ports plus a node/wire graph.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagram {
    pub controls: Vec<Port>,
    pub indicators: Vec<Port>,
    pub nodes: Vec<Node>,
    pub wires: Vec<Wire>,
}

impl Diagram {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn control(&self, name: &str) -> Option<&Port> {
        self.controls.iter().find(|p| p.name == name)
    }

    pub fn indicator(&self, name: &str) -> Option<&Port> {
        self.indicators.iter().find(|p| p.name == name)
    }
}

/// A VI: a named diagram with an ordered connector pane. The connector pane
/// is the declaration order of controls then indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViGraph {
    pub name: String,
    pub diagram: Diagram,
    /// Explicit target of this VI's code; `None` inherits the caller (or
    /// host at top level).
    pub target: Option<Target>,
}

impl ViGraph {
    /// The connector pane: ordered input names then output names.
    pub fn connector(&self) -> (Vec<&str>, Vec<&str>) {
        (
            self.diagram.controls.iter().map(|p| p.name.as_str()).collect(),
            self.diagram.indicators.iter().map(|p| p.name.as_str()).collect(),
        )
    }
}

/// Which side of the host/fabric boundary a channel endpoint sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Host,
    Fabric,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Host => f.write_str("host"),
            Side::Fabric => f.write_str("fabric"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelKind {
    Fifo { elem: WireType, capacity: usize, from: Side, to: Side },
    Register { elem: WireType, init: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDecl {
    pub name: String,
    pub kind: ChannelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
}

/// Direction of a scan-engine I/O channel, from the program's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanDir {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanChannel {
    pub name: String,
    pub dir: ScanDir,
    pub ty: WireType,
    /// Linear raw-to-engineering-units map: eng = raw * gain + offset.
    pub gain: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub period_us: u64,
    pub channels: Vec<ScanChannel>,
}

/// A simulated DAC bound to a fabric clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacDecl {
    pub name: String,
    pub sample_rate_hz: u64,
    pub clock: String,
    pub buffer: usize,
}

/// A logical PCM input source; the concrete path binds at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcmDecl {
    pub name: String,
    pub rate_hz: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

/// A whole project: every VI, the top-level VI, and the target model
/// declarations (clocks, channels, scan, DACs, PCM sources, imported IP).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Project {
    pub vis: BTreeMap<String, ViGraph>,
    pub top: String,
    pub clocks: BTreeMap<String, u64>,
    pub channels: Vec<ChannelDecl>,
    pub scan: Option<ScanConfig>,
    pub dacs: Vec<DacDecl>,
    pub pcm_sources: Vec<PcmDecl>,
    /// Imported IP descriptor file paths, as written in the project.
    pub imports: Vec<String>,
    /// CLIP instances: (instance name, descriptor name).
    pub clips: Vec<(String, String)>,
}

impl Project {
    pub fn top_vi(&self) -> Option<&ViGraph> {
        self.vis.get(&self.top)
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelDecl> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn dac(&self, name: &str) -> Option<&DacDecl> {
        self.dacs.iter().find(|d| d.name == name)
    }

    pub fn pcm(&self, name: &str) -> Option<&PcmDecl> {
        self.pcm_sources.iter().find(|p| p.name == name)
    }
}

/// Default fabric clock applied when a project declares none.
pub const DEFAULT_CLOCK_HZ: u64 = 40_000_000;
pub const DEFAULT_CLOCK_NAME: &str = "clk40";

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Scope context for validating a diagram: which boundary names act as
/// sources and which as sinks.
struct Scope<'a> {
    sources: BTreeSet<&'a str>,
    sinks: BTreeSet<&'a str>,
}

fn diagram_scope<'a>(
    d: &'a Diagram,
    shift_regs: &'a [ShiftRegister],
    params: &'a [SctlParam],
    stop_port: Option<&'a str>,
    implicit_index: bool,
) -> Scope<'a> {
    let mut sources: BTreeSet<&str> = d.controls.iter().map(|p| p.name.as_str()).collect();
    let mut sinks: BTreeSet<&str> = d.indicators.iter().map(|p| p.name.as_str()).collect();
    for sr in shift_regs {
        sources.insert(sr.name.as_str());
        sinks.insert(sr.name.as_str());
    }
    for p in params {
        sources.insert(p.name.as_str());
    }
    if let Some(stop) = stop_port {
        sinks.insert(stop);
    }
    if implicit_index {
        sources.insert("i");
    }
    Scope { sources, sinks }
}

/// Structural validation of one VI. Returns an empty list iff every
/// invariant holds; diagnostics carry node ids and stable error codes.
/// Pure: identical inputs produce an identical list.
pub fn validate(vi: &ViGraph, project: Option<&Project>) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    validate_diagram(&vi.diagram, &[], &[], None, false, false, project, &vi.name, &mut diags);
    diags
}

#[allow(clippy::too_many_arguments)]
fn validate_diagram(
    d: &Diagram,
    shift_regs: &[ShiftRegister],
    params: &[SctlParam],
    stop_port: Option<&str>,
    implicit_index: bool,
    in_sctl: bool,
    project: Option<&Project>,
    path: &str,
    diags: &mut Vec<Diagnostic>,
) {
    // Unique names across boundary declarations and nodes of this scope.
    let mut seen: HashSet<&str> = HashSet::new();
    let boundary_names = d
        .controls
        .iter()
        .map(|p| p.name.as_str())
        .chain(d.indicators.iter().map(|p| p.name.as_str()))
        .chain(shift_regs.iter().map(|sr| sr.name.as_str()))
        .chain(params.iter().map(|p| p.name.as_str()));
    for name in boundary_names {
        if !seen.insert(name) {
            diags.push(Diagnostic::new(
                ErrorCode::DupName,
                format!("duplicate boundary name `{}` in {}", name, path),
            ));
        }
    }
    for n in &d.nodes {
        if !seen.insert(n.id.as_str()) {
            diags.push(
                Diagnostic::new(
                    ErrorCode::DupName,
                    format!("duplicate node id `{}` in {}", n.id, path),
                )
                .with_node(n.id.clone())
                .with_opt_span(n.span.clone()),
            );
        }
    }

    // Per-node port name uniqueness and per-node structural checks.
    for n in &d.nodes {
        let subvi = match (&n.op, project) {
            (NodeOp::SubVi(name), Some(p)) => p.vis.get(name),
            _ => None,
        };
        let ins = n.in_port_names(subvi);
        let outs = n.out_port_names(subvi);
        let mut port_seen: HashSet<&str> = HashSet::new();
        for p in ins.iter().chain(outs.iter()) {
            if !port_seen.insert(p.as_str()) {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::DupPort,
                        format!("duplicate port `{}` on node `{}`", p, n.id),
                    )
                    .with_node(n.id.clone()),
                );
            }
        }
        if let NodeOp::Structure(s) = &n.op {
            validate_structure(n, s, in_sctl, project, path, diags);
        }
        if in_sctl {
            match &n.op {
                NodeOp::Prim(p) if p.is_host_only() => {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::SctlIllegalNode,
                            format!(
                                "host-only primitive `{}` on node `{}` inside single-cycle loop",
                                p.name(),
                                n.id
                            ),
                        )
                        .with_node(n.id.clone())
                        .with_opt_span(n.span.clone()),
                    );
                }
                NodeOp::SubVi(name) => {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::SctlIllegalNode,
                            format!("sub-VI `{}` must be expanded before fabric checks", name),
                        )
                        .with_node(n.id.clone()),
                    );
                }
                _ => {}
            }
        }
    }

    // Wire endpoint resolution and multi-driver detection.
    let scope = diagram_scope(d, shift_regs, params, stop_port, implicit_index);
    let node_ins: HashMap<&str, Vec<String>> = d
        .nodes
        .iter()
        .map(|n| {
            let subvi = match (&n.op, project) {
                (NodeOp::SubVi(name), Some(p)) => p.vis.get(name),
                _ => None,
            };
            (n.id.as_str(), n.in_port_names(subvi))
        })
        .collect();
    let node_outs: HashMap<&str, Vec<String>> = d
        .nodes
        .iter()
        .map(|n| {
            let subvi = match (&n.op, project) {
                (NodeOp::SubVi(name), Some(p)) => p.vis.get(name),
                _ => None,
            };
            (n.id.as_str(), n.out_port_names(subvi))
        })
        .collect();

    // Imported IP nodes get their port list from a descriptor that is not
    // available at parse time; endpoint checks treat them as wildcards and
    // elaboration validates against the descriptor.
    let wildcard: HashSet<&str> = d
        .nodes
        .iter()
        .filter(|n| matches!(n.op, NodeOp::Prim(PrimOp::Ipin { .. })))
        .map(|n| n.id.as_str())
        .collect();

    let mut driven: HashMap<&Endpoint, u32> = HashMap::new();
    for w in &d.wires {
        // Source must be a token source.
        match &w.src {
            Endpoint::Boundary(name) => {
                if !scope.sources.contains(name.as_str()) {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::UnknownEndpoint,
                            format!("`{}` is not a readable boundary name in {}", name, path),
                        )
                        .with_opt_span(w.span.clone()),
                    );
                }
            }
            Endpoint::Node { node, port } => match node_outs.get(node.as_str()) {
                Some(outs) if outs.iter().any(|p| p == port) => {}
                Some(_) if wildcard.contains(node.as_str()) => {}
                Some(_) => diags.push(
                    Diagnostic::new(
                        ErrorCode::UnknownEndpoint,
                        format!("node `{}` has no out port `{}`", node, port),
                    )
                    .with_node(node.clone())
                    .with_opt_span(w.span.clone()),
                ),
                None => diags.push(
                    Diagnostic::new(
                        ErrorCode::UnknownEndpoint,
                        format!("unknown node `{}` in wire source", node),
                    )
                    .with_opt_span(w.span.clone()),
                ),
            },
        }
        if w.dsts.is_empty() {
            diags.push(
                Diagnostic::new(ErrorCode::UnknownEndpoint, "wire with no destination")
                    .with_opt_span(w.span.clone()),
            );
        }
        for (i, dst) in w.dsts.iter().enumerate() {
            let dst_span = w.dst_spans.get(i).cloned().flatten().or_else(|| w.span.clone());
            match dst {
                Endpoint::Boundary(name) => {
                    if !scope.sinks.contains(name.as_str()) {
                        diags.push(
                            Diagnostic::new(
                                ErrorCode::UnknownEndpoint,
                                format!("`{}` is not a writable boundary name in {}", name, path),
                            )
                            .with_opt_span(dst_span.clone()),
                        );
                    }
                }
                Endpoint::Node { node, port } => match node_ins.get(node.as_str()) {
                    Some(ins) if ins.iter().any(|p| p == port) => {}
                    Some(_) if wildcard.contains(node.as_str()) => {}
                    Some(_) => diags.push(
                        Diagnostic::new(
                            ErrorCode::UnknownEndpoint,
                            format!("node `{}` has no in port `{}`", node, port),
                        )
                        .with_node(node.clone())
                        .with_opt_span(dst_span.clone()),
                    ),
                    None => diags.push(
                        Diagnostic::new(
                            ErrorCode::UnknownEndpoint,
                            format!("unknown node `{}` in wire destination", node),
                        )
                        .with_opt_span(dst_span.clone()),
                    ),
                },
            }
            let count = driven.entry(dst).or_insert(0);
            *count += 1;
            if *count == 2 {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::MultiDriver,
                        format!("`{}` is driven by more than one wire", dst),
                    )
                    .with_opt_span(dst_span),
                );
            }
        }
    }

    // Required in-ports must be driven.
    for n in &d.nodes {
        let subvi = match (&n.op, project) {
            (NodeOp::SubVi(name), Some(p)) => p.vis.get(name),
            _ => None,
        };
        let optional: &[&str] = match &n.op {
            NodeOp::Prim(p) => p.optional_in_ports(),
            _ => &[],
        };
        for port in n.in_port_names(subvi) {
            if optional.contains(&port.as_str()) {
                continue;
            }
            let ep = nport(&n.id, &port);
            if !driven.contains_key(&ep) {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::Unwired,
                        format!("in port `{}.{}` is not wired", n.id, port),
                    )
                    .with_node(n.id.clone())
                    .with_opt_span(n.span.clone()),
                );
            }
        }
    }
    // Indicators and loop stops must be driven.
    for ind in &d.indicators {
        let ep = bport(&ind.name);
        if !driven.contains_key(&ep) {
            diags.push(Diagnostic::new(
                ErrorCode::Unwired,
                format!("indicator `{}` is not wired in {}", ind.name, path),
            ));
        }
    }
    if let Some(stop) = stop_port {
        if !driven.contains_key(&bport(stop)) {
            diags.push(Diagnostic::new(
                ErrorCode::Unwired,
                format!("loop stop `{}` is not wired in {}", stop, path),
            ));
        }
    }

    // Acyclicity of the node graph (boundary endpoints, including shift
    // register terminals, do not create node-to-node edges).
    if let Err(cycle) = topo_order(d) {
        diags.push(cycle);
    }

    // Recurse into structure bodies.
    for n in &d.nodes {
        if let NodeOp::Structure(s) = &n.op {
            let child_path = format!("{}/{}", path, n.id);
            let child_in_sctl = in_sctl || matches!(**s, StructureNode::Sctl(_));
            match &**s {
                StructureNode::While(w) => validate_diagram(
                    &w.body,
                    &w.shift_regs,
                    &[],
                    Some(&w.stop_port),
                    true,
                    child_in_sctl,
                    project,
                    &child_path,
                    diags,
                ),
                StructureNode::For(fl) => validate_diagram(
                    &fl.body,
                    &fl.shift_regs,
                    &[],
                    None,
                    true,
                    child_in_sctl,
                    project,
                    &child_path,
                    diags,
                ),
                StructureNode::Case(c) => {
                    for (_, body) in &c.cases {
                        validate_diagram(
                            body,
                            &[],
                            &[],
                            None,
                            false,
                            child_in_sctl,
                            project,
                            &child_path,
                            diags,
                        );
                    }
                    validate_diagram(
                        &c.default,
                        &[],
                        &[],
                        None,
                        false,
                        child_in_sctl,
                        project,
                        &child_path,
                        diags,
                    );
                }
                StructureNode::Sctl(sc) => validate_diagram(
                    &sc.body,
                    &sc.shift_regs,
                    &sc.params,
                    None,
                    false,
                    true,
                    project,
                    &child_path,
                    diags,
                ),
            }
        }
    }
}

fn validate_structure(
    n: &Node,
    s: &StructureNode,
    parent_in_sctl: bool,
    _project: Option<&Project>,
    path: &str,
    diags: &mut Vec<Diagnostic>,
) {
    match s {
        StructureNode::While(w) => {
            let stop_ok = w.body.indicators.iter().any(|p| p.name == w.stop_port);
            if !stop_ok {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::UnknownEndpoint,
                        format!(
                            "while loop `{}` stop port `{}` is not a body indicator",
                            n.id, w.stop_port
                        ),
                    )
                    .with_node(n.id.clone()),
                );
            } else if w.body.indicator(&w.stop_port).map(|p| &p.ty) != Some(&WireType::Bool) {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::Type,
                        format!("while loop `{}` stop port `{}` must be bool", n.id, w.stop_port),
                    )
                    .with_node(n.id.clone()),
                );
            }
        }
        StructureNode::Case(c) => {
            // All branches must share the same tunnel signature.
            let sig = |d: &Diagram| {
                (
                    d.controls.iter().map(|p| (p.name.clone(), p.ty.clone())).collect::<Vec<_>>(),
                    d.indicators.iter().map(|p| (p.name.clone(), p.ty.clone())).collect::<Vec<_>>(),
                )
            };
            let want = sig(&c.default);
            let mut seen_sel = BTreeSet::new();
            for (val, body) in &c.cases {
                if !seen_sel.insert(*val) {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::DupName,
                            format!("case `{}` has duplicate selector value {}", n.id, val),
                        )
                        .with_node(n.id.clone()),
                    );
                }
                if sig(body) != want {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::TypeMismatch,
                            format!(
                                "case `{}` branch {} tunnel signature differs from default",
                                n.id, val
                            ),
                        )
                        .with_node(n.id.clone()),
                    );
                }
            }
        }
        StructureNode::Sctl(_) if parent_in_sctl => {
            diags.push(
                Diagnostic::new(
                    ErrorCode::SctlIllegalNode,
                    format!("nested single-cycle loop `{}` in {}", n.id, path),
                )
                .with_node(n.id.clone()),
            );
        }
        _ => {}
    }
    if parent_in_sctl {
        if let StructureNode::While(_) | StructureNode::For(_) = s {
            diags.push(
                Diagnostic::new(
                    ErrorCode::SctlIllegalNode,
                    format!(
                        "{} loop `{}` is not allowed inside a single-cycle loop",
                        s.kind_name(),
                        n.id
                    ),
                )
                .with_node(n.id.clone()),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Topological order
// ---------------------------------------------------------------------------

/// Node-to-node dependency edges of a diagram (wires through boundary names
/// do not order nodes).
pub fn node_edges(d: &Diagram) -> Vec<(usize, usize)> {
    let index: HashMap<&str, usize> =
        d.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut edges = Vec::new();
    for w in &d.wires {
        let src = match &w.src {
            Endpoint::Node { node, .. } => index.get(node.as_str()).copied(),
            Endpoint::Boundary(_) => None,
        };
        let Some(si) = src else { continue };
        for dst in &w.dsts {
            if let Endpoint::Node { node, .. } = dst {
                if let Some(&di) = index.get(node.as_str()) {
                    edges.push((si, di));
                }
            }
        }
    }
    edges
}

/// Deterministic topological order of a diagram's nodes: every wire's source
/// precedes all destinations, ties broken by ascending (bytewise) node id.
/// Fails with `E_CYCLE` naming nodes on a cycle when the graph is cyclic.
pub fn topo_order(d: &Diagram) -> Result<Vec<String>, Diagnostic> {
    let n = d.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, t) in node_edges(d) {
        adj[s].push(t);
        indegree[t] += 1;
    }
    // Min-heap on node id for deterministic tie-breaking.
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<(&str, usize)>> =
        std::collections::BinaryHeap::new();
    for (i, deg) in indegree.iter().enumerate() {
        if *deg == 0 {
            ready.push(std::cmp::Reverse((d.nodes[i].id.as_str(), i)));
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut remaining = indegree.clone();
    while let Some(std::cmp::Reverse((_, i))) = ready.pop() {
        order.push(d.nodes[i].id.clone());
        for &t in &adj[i] {
            remaining[t] -= 1;
            if remaining[t] == 0 {
                ready.push(std::cmp::Reverse((d.nodes[t].id.as_str(), t)));
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = d
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| remaining[*i] > 0)
            .map(|(_, node)| node.id.as_str())
            .collect();
        return Err(Diagnostic::new(
            ErrorCode::Cycle,
            format!("cycle through nodes without a shift register: {}", stuck.join(", ")),
        ));
    }
    Ok(order)
}
