//! Elaboration: sub-VI expansion, type inference, host/fabric partitioning,
//! and single-cycle timing feasibility.
//!
//! The pipeline is `expand` -> `infer_types` -> `partition`; `check_sctl`
//! runs on every single-cycle loop of the partitioned design. All passes are
//! pure transformations over the IR.

use crate::diag::{Diagnostic, Error, ErrorCode, Result};
use crate::fabric::ip::IpDescriptor;
use crate::fabric::ResourceEstimate;
use crate::ir::{
    bport, nport, ChannelDecl, ChannelKind, Diagram, Endpoint, Node, NodeOp, PrimOp, Project,
    ScanConfig, SctlLoop, SctlParam, ShiftRegister, Side, StructureNode, Target, TargetHint,
    ViGraph, Wire, DEFAULT_CLOCK_HZ,
};
use crate::value::{OverflowMode, Value, WireType};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

// ---------------------------------------------------------------------------
// Depth / resource table
// ---------------------------------------------------------------------------

/// Per-primitive flat override loaded from a JSON table file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lut: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ff: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dsp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bram: Option<u64>,
}

/// Combinational depth and resource model of the virtual fabric.
///
/// The built-in table is declared data: Add/Sub/logic/compare 5 ns, Select
/// 3 ns, Mul 15 ns, Convert 2 ns, constants and channel ports 0 ns; Div has
/// no fabric entry at all. Resources default to width-based rules
/// (arithmetic and muxes cost one LUT per result bit, Mul one DSP, registers
/// one FF per bit, FIFO buffers one BRAM per started KiB). A JSON file
/// `{"Add": {"depth_ns": 4.0, "lut": 16}, ...}` overrides entries flat.
#[derive(Debug, Clone, Default)]
pub struct DepthTable {
    overrides: BTreeMap<String, CostOverride>,
}

impl DepthTable {
    pub fn new() -> Self {
        DepthTable::default()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let overrides: BTreeMap<String, CostOverride> = serde_json::from_str(json)
            .map_err(|e| Error::fault(ErrorCode::Io, format!("bad depth table: {}", e)))?;
        Ok(DepthTable { overrides })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::fault(ErrorCode::Io, format!("cannot read {}: {}", path.display(), e))
        })?;
        Self::from_json(&text)
    }

    fn over(&self, name: &str) -> Option<&CostOverride> {
        self.overrides.get(name)
    }

    /// Combinational depth of one primitive instance in nanoseconds, or
    /// `None` when the primitive is not fabric-legal.
    pub fn depth_ns(&self, prim: &PrimOp) -> Option<f64> {
        if let Some(o) = self.over(prim.name()) {
            if let Some(d) = o.depth_ns {
                return Some(d);
            }
        }
        let d = match prim {
            PrimOp::Add | PrimOp::Sub => 5.0,
            PrimOp::And | PrimOp::Or | PrimOp::Not => 5.0,
            PrimOp::Gt | PrimOp::Lt | PrimOp::Eq => 5.0,
            PrimOp::Select => 3.0,
            PrimOp::Mul => 15.0,
            PrimOp::Convert { .. } => 2.0,
            PrimOp::Const(_) => 0.0,
            PrimOp::FifoRead { .. }
            | PrimOp::FifoWrite { .. }
            | PrimOp::RegRead { .. }
            | PrimOp::RegWrite { .. }
            | PrimOp::AoReady { .. }
            | PrimOp::AoWrite { .. } => 0.0,
            // Ipin depth comes from its descriptor; resolved by the caller.
            PrimOp::Ipin { .. } => 0.0,
            _ => return None,
        };
        Some(d)
    }

    /// Resource cost of one primitive instance. `out_width`/`in_width` are
    /// the result and widest-operand widths in bits.
    pub fn resources(&self, prim: &PrimOp, out_width: u64, in_width: u64) -> ResourceEstimate {
        let defaults = match prim {
            PrimOp::Add | PrimOp::Sub => ResourceEstimate { lut: out_width, ..Default::default() },
            PrimOp::Gt | PrimOp::Lt | PrimOp::Eq => {
                ResourceEstimate { lut: in_width, ..Default::default() }
            }
            PrimOp::And | PrimOp::Or | PrimOp::Not => {
                ResourceEstimate { lut: out_width, ..Default::default() }
            }
            PrimOp::Select => ResourceEstimate { lut: out_width, ..Default::default() },
            PrimOp::Mul => ResourceEstimate { dsp: 1, ..Default::default() },
            PrimOp::Convert { .. } => ResourceEstimate { lut: out_width, ..Default::default() },
            _ => ResourceEstimate::default(),
        };
        match self.over(prim.name()) {
            None => defaults,
            Some(o) => ResourceEstimate {
                lut: o.lut.unwrap_or(defaults.lut),
                ff: o.ff.unwrap_or(defaults.ff),
                dsp: o.dsp.unwrap_or(defaults.dsp),
                bram: o.bram.unwrap_or(defaults.bram),
            },
        }
    }

    /// Flip-flop cost of a boundary register.
    pub fn register_ff(&self, width: u64) -> ResourceEstimate {
        let per_bit = self.over("register").and_then(|o| o.ff).unwrap_or(1);
        ResourceEstimate { ff: width * per_bit, ..Default::default() }
    }

    /// Block-RAM cost of a FIFO buffer: one BRAM per started 1024 bytes.
    pub fn fifo_bram(&self, capacity_elems: usize, elem: &WireType) -> ResourceEstimate {
        if let Some(b) = self.over("fifo").and_then(|o| o.bram) {
            return ResourceEstimate { bram: b, ..Default::default() };
        }
        let bytes = (elem.width_bits().div_ceil(8)) * capacity_elems as u64;
        ResourceEstimate { bram: bytes.div_ceil(1024).max(1), ..Default::default() }
    }
}

// ---------------------------------------------------------------------------
// expand: sub-VI inlining
// ---------------------------------------------------------------------------

/// Inlines every sub-VI call into the top-level diagram. Node ids of inlined
/// nodes are prefixed with the instance path (`u1/n1`); behavior under the
/// host runtime is preserved. Fails on recursive call chains.
pub fn expand(p: &Project) -> Result<Project> {
    let top = p
        .top_vi()
        .ok_or_else(|| Error::fault(ErrorCode::UnresolvedSubvi, format!("no top VI `{}`", p.top)))?;
    let mut stack = vec![top.name.clone()];
    let diagram = expand_diagram(&top.diagram, p, top.target, &mut stack)?;
    let mut out = p.clone();
    out.vis.clear();
    out.vis
        .insert(top.name.clone(), ViGraph { name: top.name.clone(), diagram, target: top.target });
    Ok(out)
}

fn expand_diagram(
    d: &Diagram,
    p: &Project,
    context_target: Option<Target>,
    stack: &mut Vec<String>,
) -> Result<Diagram> {
    let mut out = Diagram {
        controls: d.controls.clone(),
        indicators: d.indicators.clone(),
        nodes: Vec::new(),
        wires: d.wires.clone(),
    };

    for node in &d.nodes {
        match &node.op {
            NodeOp::Prim(_) => out.nodes.push(node.clone()),
            NodeOp::Structure(s) => {
                let mut n = node.clone();
                n.op = NodeOp::Structure(Box::new(expand_structure(s, p, context_target, stack)?));
                out.nodes.push(n);
            }
            NodeOp::SubVi(callee_name) => {
                let callee = p.vis.get(callee_name).ok_or_else(|| {
                    Error::fault(
                        ErrorCode::UnresolvedSubvi,
                        format!("sub-VI `{}` is not defined", callee_name),
                    )
                })?;
                if stack.contains(callee_name) {
                    let mut path = stack.clone();
                    path.push(callee_name.clone());
                    return Err(Error::fault(
                        ErrorCode::Recursion,
                        format!("recursive sub-VI chain: {}", path.join(" -> ")),
                    ));
                }
                stack.push(callee_name.clone());
                let callee_target = callee.target.or(context_target);
                let inner = expand_diagram(&callee.diagram, p, callee_target, stack)?;
                stack.pop();
                inline_call(&mut out, node, callee, &inner, callee_target)?;
            }
        }
    }
    merge_wires(&mut out);
    Ok(out)
}

fn expand_structure(
    s: &StructureNode,
    p: &Project,
    context_target: Option<Target>,
    stack: &mut Vec<String>,
) -> Result<StructureNode> {
    Ok(match s {
        StructureNode::While(w) => StructureNode::While(crate::ir::WhileLoop {
            body: expand_diagram(&w.body, p, context_target, stack)?,
            stop_port: w.stop_port.clone(),
            shift_regs: w.shift_regs.clone(),
            hls: w.hls,
        }),
        StructureNode::For(f) => StructureNode::For(crate::ir::ForLoop {
            body: expand_diagram(&f.body, p, context_target, stack)?,
            shift_regs: f.shift_regs.clone(),
            hls: f.hls,
        }),
        StructureNode::Case(c) => {
            let mut cases = Vec::new();
            for (v, b) in &c.cases {
                cases.push((*v, expand_diagram(b, p, context_target, stack)?));
            }
            StructureNode::Case(crate::ir::CaseStructure {
                cases,
                default: expand_diagram(&c.default, p, context_target, stack)?,
            })
        }
        StructureNode::Sctl(sc) => StructureNode::Sctl(SctlLoop {
            body: expand_diagram(&sc.body, p, context_target, stack)?,
            clock: sc.clock.clone(),
            params: sc.params.clone(),
            shift_regs: sc.shift_regs.clone(),
        }),
    })
}

/// Splices one already-expanded callee body in place of a call node.
fn inline_call(
    out: &mut Diagram,
    call: &Node,
    callee: &ViGraph,
    inner: &Diagram,
    callee_target: Option<Target>,
) -> Result<()> {
    let prefix = |id: &str| format!("{}/{}", call.id, id);

    // Outer sources feeding each callee control.
    let mut outer_src: HashMap<String, Endpoint> = HashMap::new();
    for w in &out.wires {
        for dst in &w.dsts {
            if let Endpoint::Node { node, port } = dst {
                if *node == call.id && callee.diagram.control(port).is_some() {
                    outer_src.insert(port.clone(), w.src.clone());
                }
            }
        }
    }

    // The inner endpoint driving each callee indicator.
    let mut inner_drv: HashMap<&str, &Endpoint> = HashMap::new();
    for w in &inner.wires {
        for dst in &w.dsts {
            if let Endpoint::Boundary(name) = dst {
                if inner.indicator(name).is_some() {
                    inner_drv.insert(name.as_str(), &w.src);
                }
            }
        }
    }

    let remap_src = |e: &Endpoint| -> Result<Endpoint> {
        match e {
            Endpoint::Node { node, port } => Ok(nport(prefix(node), port.clone())),
            Endpoint::Boundary(name) => outer_src.get(name).cloned().ok_or_else(|| {
                Error::fault(
                    ErrorCode::Unwired,
                    format!("control `{}` of `{}` is not wired", name, call.id),
                )
            }),
        }
    };

    // Resolve the source that replaces `call.indicator` endpoints, through
    // possible control->indicator passthroughs.
    let mut indicator_src: HashMap<String, Endpoint> = HashMap::new();
    for ind in &callee.diagram.indicators {
        if let Some(drv) = inner_drv.get(ind.name.as_str()) {
            indicator_src.insert(ind.name.clone(), remap_src(drv)?);
        }
    }

    // Rewrite outer wires: drop legs into the call's controls, retarget legs
    // sourced at the call's indicators.
    let mut rewritten: Vec<Wire> = Vec::new();
    for w in std::mem::take(&mut out.wires) {
        let mut w = w;
        let src = match &w.src {
            Endpoint::Node { node, port } if *node == call.id => match indicator_src.get(port) {
                Some(s) => s.clone(),
                None => {
                    return Err(Error::fault(
                        ErrorCode::Unwired,
                        format!("indicator `{}` of `{}` is not driven", port, call.id),
                    ))
                }
            },
            other => other.clone(),
        };
        let keep: Vec<usize> = (0..w.dsts.len())
            .filter(|&i| !matches!(&w.dsts[i], Endpoint::Node { node, .. } if *node == call.id))
            .collect();
        if keep.len() != w.dsts.len() {
            let dsts = keep.iter().map(|&i| w.dsts[i].clone()).collect();
            let dst_spans = if w.dst_spans.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&i| w.dst_spans.get(i).cloned().flatten()).collect()
            };
            w.dsts = dsts;
            w.dst_spans = dst_spans;
        }
        w.src = src;
        if !w.dsts.is_empty() {
            rewritten.push(w);
        }
    }
    out.wires = rewritten;

    // Inlined nodes, with explicit targets stamped from the callee VI.
    for n in &inner.nodes {
        let mut n2 = n.clone();
        n2.id = prefix(&n.id);
        if n2.target_hint == TargetHint::Inherit {
            if let Some(t) = callee_target {
                n2.target_hint = match t {
                    Target::Host => TargetHint::Host,
                    Target::Fabric => TargetHint::Fabric,
                };
            }
        }
        out.nodes.push(n2);
    }

    // Inner wires (legs into callee indicators handled above).
    for w in &inner.wires {
        let src = remap_src(&w.src)?;
        let mut dsts = Vec::new();
        for dst in &w.dsts {
            match dst {
                Endpoint::Node { node, port } => dsts.push(nport(prefix(node), port.clone())),
                Endpoint::Boundary(_) => {} // indicator leg: rewired at the call site
            }
        }
        if !dsts.is_empty() {
            out.wires.push(Wire::new(src, dsts));
        }
    }
    Ok(())
}

/// Re-merges wire fan-out by source endpoint.
fn merge_wires(d: &mut Diagram) {
    let mut merged: Vec<Wire> = Vec::new();
    for w in std::mem::take(&mut d.wires) {
        if let Some(m) = merged.iter_mut().find(|m| m.src == w.src) {
            m.dsts.extend(w.dsts);
            m.dst_spans.extend(w.dst_spans);
        } else {
            merged.push(w);
        }
    }
    d.wires = merged;
}

// ---------------------------------------------------------------------------
// Type inference
// ---------------------------------------------------------------------------

/// Inferred port types of one node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PortTypes {
    pub ins: Vec<(String, WireType)>,
    pub outs: Vec<(String, WireType)>,
}

impl PortTypes {
    pub fn out_ty(&self, port: &str) -> Option<&WireType> {
        self.outs.iter().find(|(p, _)| p == port).map(|(_, t)| t)
    }

    pub fn in_ty(&self, port: &str) -> Option<&WireType> {
        self.ins.iter().find(|(p, _)| p == port).map(|(_, t)| t)
    }
}

/// Type assignment for one diagram and, recursively, its structure bodies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagramTypes {
    pub node_ports: BTreeMap<String, PortTypes>,
    pub bodies: BTreeMap<String, Vec<DiagramTypes>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypedDiagram {
    pub diagram: Diagram,
    pub types: DiagramTypes,
}

/// Project-level facts inference needs: channel element types, scan/dac/pcm
/// declarations, imported IP signatures, and bound PCM lengths.
pub struct TypeEnv<'a> {
    pub project: &'a Project,
    pub ipins: BTreeMap<String, IpDescriptor>,
    /// Sample counts of bound PCM sources; unbound sources type as length 0.
    pub pcm_lens: BTreeMap<String, usize>,
}

impl<'a> TypeEnv<'a> {
    pub fn new(project: &'a Project) -> Self {
        TypeEnv { project, ipins: BTreeMap::new(), pcm_lens: BTreeMap::new() }
    }

    fn channel_elem(&self, name: &str) -> Option<WireType> {
        self.project.channel(name).map(|c| match &c.kind {
            ChannelKind::Fifo { elem, .. } => elem.clone(),
            ChannelKind::Register { elem, .. } => elem.clone(),
        })
    }
}

/// Scope facts of the diagram being inferred (loop locals).
#[derive(Default, Clone)]
pub struct ScopeInfo<'a> {
    pub shift_regs: &'a [ShiftRegister],
    pub params: &'a [SctlParam],
    pub stop_port: Option<&'a str>,
    pub implicit_index: bool,
}

/// Infers one type per wire, inserting explicit `Convert` nodes for the
/// permitted numeric promotions (i32 to f64, i32 to fxp). Incompatible kinds
/// are rejected. Deterministic; inserts the minimum number of converts (one
/// per promoted input leg).
pub fn infer_types(d: &Diagram, env: &TypeEnv, scope: ScopeInfo) -> Result<TypedDiagram> {
    let mut diagram = d.clone();
    let mut types = DiagramTypes::default();

    // Boundary source types visible in this scope.
    let mut boundary: HashMap<String, WireType> = HashMap::new();
    for c in &d.controls {
        boundary.insert(c.name.clone(), c.ty.clone());
    }
    for sr in scope.shift_regs {
        boundary.insert(sr.name.clone(), sr.ty.clone());
    }
    for p in scope.params {
        boundary.insert(p.name.clone(), WireType::Int32);
    }
    if scope.implicit_index {
        boundary.insert("i".to_string(), WireType::Int32);
    }

    let order = crate::ir::topo_order(&diagram).map_err(|d| Error::Check(vec![d]))?;

    for node_id in &order {
        let node = diagram.node(node_id).cloned().expect("node in topo order");

        // Gather driven input types. Imported IP ports come from the
        // descriptor, not the node itself.
        let in_names: Vec<String> = match &node.op {
            NodeOp::Prim(PrimOp::Ipin { name }) => env
                .ipins
                .get(name)
                .map(|d| d.in_ports().iter().map(|p| p.name.clone()).collect())
                .unwrap_or_default(),
            _ => node.in_port_names(None),
        };
        let mut in_types: Vec<Option<WireType>> = Vec::with_capacity(in_names.len());
        for port in &in_names {
            let want = nport(node_id.clone(), port.clone());
            let src =
                diagram.wires.iter().find(|w| w.dsts.contains(&want)).map(|w| w.src.clone());
            let ty = match &src {
                None => None,
                Some(Endpoint::Boundary(b)) => boundary.get(b).cloned(),
                Some(Endpoint::Node { node: sn, port: sp }) => {
                    types.node_ports.get(sn).and_then(|pt| pt.out_ty(sp)).cloned()
                }
            };
            if src.is_some() && ty.is_none() {
                return Err(Error::Check(vec![Diagnostic::new(
                    ErrorCode::TypeMismatch,
                    format!("cannot type the source of `{}.{}`", node_id, port),
                )
                .with_node(node_id.clone())]));
            }
            in_types.push(ty);
        }

        // Structures: resolve tunnel types against the incoming wires (array
        // tunnels adapt their length to the caller), infer bodies, then
        // surface port types.
        if let NodeOp::Structure(s) = &node.op {
            let mut overrides: BTreeMap<String, WireType> = BTreeMap::new();
            {
                let body = s.bodies()[0];
                for (i, port) in in_names.iter().enumerate() {
                    let Some(found) = &in_types[i] else { continue };
                    let Some(declared) = body.controls.iter().find(|c| c.name == *port) else {
                        continue;
                    };
                    if let Some(adapted) = adapt_tunnel(found, &declared.ty) {
                        overrides.insert(port.clone(), adapted);
                    }
                }
            }
            let (port_types, body_types) = infer_structure(s, env, &overrides)?;
            for (i, port) in in_names.iter().enumerate() {
                if let (Some(found), Some(want)) = (&in_types[i], port_types.in_ty(port)) {
                    if found != want {
                        if let Some(cvt) = promotion(found, want) {
                            insert_convert(
                                &mut diagram,
                                &mut types,
                                &NodeRef::Port(node_id, port),
                                found,
                                &cvt,
                            );
                        } else {
                            return Err(type_mismatch(node_id, port, found, want));
                        }
                    }
                }
            }
            types.bodies.insert(node_id.clone(), body_types);
            types.node_ports.insert(node_id.clone(), port_types);
            continue;
        }

        let NodeOp::Prim(prim) = &node.op else {
            return Err(Error::fault(
                ErrorCode::UnresolvedSubvi,
                format!("sub-VI node `{}` must be expanded before type inference", node_id),
            ));
        };

        let sig = prim_signature(prim, &in_names, &in_types, env, node_id)?;
        for (port, target) in &sig.promotions {
            let i = in_names.iter().position(|p| p == port).unwrap();
            let found = in_types[i].clone().unwrap();
            insert_convert(&mut diagram, &mut types, &NodeRef::Port(node_id, port), &found, target);
        }
        types.node_ports.insert(node_id.clone(), sig.ports);
    }

    // Boundary sink type checks (indicators, shift register writes, stop).
    let sink_ty = |name: &str| -> Option<WireType> {
        d.indicators
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.ty.clone())
            .or_else(|| scope.shift_regs.iter().find(|sr| sr.name == name).map(|sr| sr.ty.clone()))
    };
    for w in &diagram.wires.clone() {
        let src_ty = match &w.src {
            Endpoint::Boundary(b) => boundary.get(b).cloned(),
            Endpoint::Node { node, port } => {
                types.node_ports.get(node).and_then(|pt| pt.out_ty(port)).cloned()
            }
        };
        let Some(src_ty) = src_ty else { continue };
        for dst in &w.dsts {
            if let Endpoint::Boundary(name) = dst {
                if let Some(want) = sink_ty(name) {
                    if want != src_ty {
                        if let Some(cvt) = promotion(&src_ty, &want) {
                            insert_convert(
                                &mut diagram,
                                &mut types,
                                &NodeRef::Boundary(name),
                                &src_ty,
                                &cvt,
                            );
                        } else {
                            return Err(Error::Check(vec![Diagnostic::new(
                                ErrorCode::TypeMismatch,
                                format!("`{}` expects {} but is driven with {}", name, want, src_ty),
                            )]));
                        }
                    }
                }
            }
        }
    }

    Ok(TypedDiagram { diagram, types })
}

fn type_mismatch(node: &str, port: &str, found: &WireType, want: &WireType) -> Error {
    Error::Check(vec![Diagnostic::new(
        ErrorCode::TypeMismatch,
        format!("`{}.{}` expects {} but is driven with {}", node, port, want, found),
    )
    .with_node(node.to_string())])
}

/// The single permitted promotion: i32 widens to f64 or to a fixed-point
/// type. Returns the conversion target when it applies.
fn promotion(found: &WireType, want: &WireType) -> Option<WireType> {
    if *found == WireType::Int32 && matches!(want, WireType::Float64 | WireType::Fxp { .. }) {
        Some(want.clone())
    } else {
        None
    }
}

enum NodeRef<'a> {
    Port(&'a str, &'a str),
    Boundary(&'a str),
}

/// Splices `Convert` in front of a destination. The inserted node id derives
/// from the destination, so repeated inference is deterministic.
fn insert_convert(
    diagram: &mut Diagram,
    types: &mut DiagramTypes,
    at: &NodeRef<'_>,
    found: &WireType,
    target: &WireType,
) {
    let (cvt_id, dst) = match at {
        NodeRef::Port(node, port) => {
            (format!("{}${}$cv", node, port), nport(node.to_string(), port.to_string()))
        }
        NodeRef::Boundary(name) => (format!("{}$cv", name), bport(name.to_string())),
    };
    for w in diagram.wires.iter_mut() {
        if let Some(i) = w.dsts.iter().position(|d| *d == dst) {
            w.dsts[i] = nport(cvt_id.clone(), "in");
            if i < w.dst_spans.len() {
                w.dst_spans[i] = None;
            }
            break;
        }
    }
    diagram.nodes.push(Node::prim(
        cvt_id.clone(),
        PrimOp::Convert { to: target.clone(), mode: OverflowMode::Saturate },
    ));
    diagram.wires.push(Wire::simple(nport(cvt_id.clone(), "out"), dst));
    types.node_ports.insert(
        cvt_id,
        PortTypes {
            ins: vec![("in".into(), found.clone())],
            outs: vec![("out".into(), target.clone())],
        },
    );
}

/// Array-typed input tunnels adapt their declared length to the incoming
/// wire (element types must match exactly). Returns the adapted type when
/// the rule applies.
fn adapt_tunnel(found: &WireType, declared: &WireType) -> Option<WireType> {
    match (found, declared) {
        (WireType::Array { elem: fe, len: fl }, WireType::Array { elem: de, len: dl })
            if fe == de && fl != dl =>
        {
            Some(found.clone())
        }
        _ => None,
    }
}

fn infer_structure(
    s: &StructureNode,
    env: &TypeEnv,
    tunnel_overrides: &BTreeMap<String, WireType>,
) -> Result<(PortTypes, Vec<DiagramTypes>)> {
    let with_overrides = |d: &Diagram| -> Diagram {
        if tunnel_overrides.is_empty() {
            return d.clone();
        }
        let mut d2 = d.clone();
        for c in &mut d2.controls {
            if let Some(t) = tunnel_overrides.get(&c.name) {
                c.ty = t.clone();
            }
        }
        d2
    };
    let mut bodies = Vec::new();
    match s {
        StructureNode::While(w) => {
            let td = infer_types(
                &with_overrides(&w.body),
                env,
                ScopeInfo {
                    shift_regs: &w.shift_regs,
                    params: &[],
                    stop_port: Some(&w.stop_port),
                    implicit_index: true,
                },
            )?;
            bodies.push(td.types);
        }
        StructureNode::For(f) => {
            let td = infer_types(
                &with_overrides(&f.body),
                env,
                ScopeInfo {
                    shift_regs: &f.shift_regs,
                    params: &[],
                    stop_port: None,
                    implicit_index: true,
                },
            )?;
            bodies.push(td.types);
        }
        StructureNode::Case(c) => {
            for (_, b) in &c.cases {
                bodies.push(infer_types(&with_overrides(b), env, ScopeInfo::default())?.types);
            }
            bodies
                .push(infer_types(&with_overrides(&c.default), env, ScopeInfo::default())?.types);
        }
        StructureNode::Sctl(sc) => {
            let td = infer_types(
                &with_overrides(&sc.body),
                env,
                ScopeInfo {
                    shift_regs: &sc.shift_regs,
                    params: &sc.params,
                    stop_port: None,
                    implicit_index: false,
                },
            )?;
            bodies.push(td.types);
        }
    }

    let body = s.bodies()[0];
    let mut ins: Vec<(String, WireType)> = Vec::new();
    match s {
        StructureNode::For(_) => ins.push(("N".into(), WireType::Int32)),
        StructureNode::Case(_) => ins.push(("sel".into(), WireType::Int32)),
        _ => {}
    }
    for c in &body.controls {
        let ty = tunnel_overrides.get(&c.name).cloned().unwrap_or_else(|| c.ty.clone());
        ins.push((c.name.clone(), ty));
    }
    let mut outs: Vec<(String, WireType)> = Vec::new();
    for p in &body.indicators {
        if let StructureNode::While(w) = s {
            if p.name == w.stop_port {
                continue;
            }
        }
        outs.push((p.name.clone(), p.ty.clone()));
    }
    for sr in s.shift_regs() {
        outs.push((sr.name.clone(), sr.ty.clone()));
    }
    Ok((PortTypes { ins, outs }, bodies))
}

struct PrimSig {
    ports: PortTypes,
    promotions: Vec<(String, WireType)>,
}

/// Result of unifying two numeric operand types.
struct Unified {
    ty: WireType,
    promote_x: Option<WireType>,
    promote_y: Option<WireType>,
}

fn unify_numeric(x: &WireType, y: &WireType) -> Option<Unified> {
    use WireType::*;
    // Scalar/array broadcast: the scalar leg may promote, the array may not.
    match (x, y) {
        (Array { elem, len }, s) if !matches!(s, Array { .. }) => {
            let u = unify_numeric(elem, s)?;
            if u.promote_x.is_some() {
                return None; // would require converting every element
            }
            Some(Unified {
                ty: WireType::array(u.ty, *len),
                promote_x: None,
                promote_y: u.promote_y,
            })
        }
        (s, Array { elem, len }) if !matches!(s, Array { .. }) => {
            let u = unify_numeric(s, elem)?;
            if u.promote_y.is_some() {
                return None;
            }
            Some(Unified {
                ty: WireType::array(u.ty, *len),
                promote_x: u.promote_x,
                promote_y: None,
            })
        }
        (Int32, Int32) => Some(Unified { ty: Int32, promote_x: None, promote_y: None }),
        (Float64, Float64) => Some(Unified { ty: Float64, promote_x: None, promote_y: None }),
        (Int32, Float64) => Some(Unified { ty: Float64, promote_x: Some(Float64), promote_y: None }),
        (Float64, Int32) => Some(Unified { ty: Float64, promote_x: None, promote_y: Some(Float64) }),
        (Int32, f @ Fxp { .. }) => {
            Some(Unified { ty: f.clone(), promote_x: Some(f.clone()), promote_y: None })
        }
        (f @ Fxp { .. }, Int32) => {
            Some(Unified { ty: f.clone(), promote_x: None, promote_y: Some(f.clone()) })
        }
        (a @ Fxp { .. }, b @ Fxp { .. }) if a == b => {
            Some(Unified { ty: a.clone(), promote_x: None, promote_y: None })
        }
        (Array { elem: e1, len: l1 }, Array { elem: e2, len: l2 }) if l1 == l2 => {
            let u = unify_numeric(e1, e2)?;
            if u.promote_x.is_some() || u.promote_y.is_some() {
                return None; // no implicit elementwise conversion of arrays
            }
            Some(Unified { ty: WireType::array(u.ty, *l1), promote_x: None, promote_y: None })
        }
        _ => None,
    }
}

/// Result type of a multiply over a unified operand type: fixed-point
/// products widen to the exact full-precision format.
fn mul_result(ty: &WireType, node: &str) -> Result<WireType> {
    match ty {
        WireType::Fxp { word_bits, int_bits } => {
            let w = word_bits * 2;
            let i = int_bits * 2;
            WireType::fxp(w, i).ok_or_else(|| {
                Error::Check(vec![Diagnostic::new(
                    ErrorCode::TypeMismatch,
                    format!("fxp product fxp<{},{}> exceeds 64 word bits at `{}`", w, i, node),
                )
                .with_node(node.to_string())])
            })
        }
        WireType::Array { elem, len } => Ok(WireType::array(mul_result(elem, node)?, *len)),
        other => Ok(other.clone()),
    }
}

fn prim_signature(
    prim: &PrimOp,
    in_names: &[String],
    in_types: &[Option<WireType>],
    env: &TypeEnv,
    node: &str,
) -> Result<PrimSig> {
    let get = |port: &str| -> Result<WireType> {
        let i = in_names.iter().position(|p| p == port).ok_or_else(|| {
            Error::fault(ErrorCode::UnknownEndpoint, format!("no port `{}` on `{}`", port, node))
        })?;
        in_types[i].clone().ok_or_else(|| {
            Error::Check(vec![Diagnostic::new(
                ErrorCode::Unwired,
                format!("in port `{}.{}` is not wired", node, port),
            )
            .with_node(node.to_string())])
        })
    };
    let mut promotions: Vec<(String, WireType)> = Vec::new();
    let mut ins: Vec<(String, WireType)> = Vec::new();
    let mut outs: Vec<(String, WireType)> = Vec::new();

    let mut bin_numeric =
        |out_name: &str, is_mul: bool, promotions: &mut Vec<(String, WireType)>| -> Result<()> {
            let tx = get("x")?;
            let ty = get("y")?;
            let u = unify_numeric(&tx, &ty).ok_or_else(|| type_mismatch(node, "y", &ty, &tx))?;
            if let Some(p) = u.promote_x {
                promotions.push(("x".into(), p));
            }
            if let Some(p) = u.promote_y {
                promotions.push(("y".into(), p));
            }
            let result = if is_mul { mul_result(&u.ty, node)? } else { u.ty.clone() };
            ins.push(("x".into(), u.ty.clone()));
            ins.push(("y".into(), u.ty));
            outs.push((out_name.into(), result));
            Ok(())
        };

    match prim {
        PrimOp::Add => bin_numeric("sum", false, &mut promotions)?,
        PrimOp::Sub => bin_numeric("diff", false, &mut promotions)?,
        PrimOp::Mul => bin_numeric("prod", true, &mut promotions)?,
        PrimOp::Div => {
            let tx = get("x")?;
            let ty = get("y")?;
            if matches!(tx, WireType::Fxp { .. })
                || matches!(ty, WireType::Fxp { .. })
                || matches!(tx, WireType::Array { .. })
                || matches!(ty, WireType::Array { .. })
            {
                return Err(Error::Check(vec![Diagnostic::new(
                    ErrorCode::TypeMismatch,
                    format!("`{}`: Div is defined for scalar i32 and f64 only", node),
                )
                .with_node(node.to_string())]));
            }
            let u = unify_numeric(&tx, &ty).ok_or_else(|| type_mismatch(node, "y", &ty, &tx))?;
            if let Some(p) = u.promote_x {
                promotions.push(("x".into(), p));
            }
            if let Some(p) = u.promote_y {
                promotions.push(("y".into(), p));
            }
            ins.push(("x".into(), u.ty.clone()));
            ins.push(("y".into(), u.ty.clone()));
            outs.push(("quot".into(), u.ty));
        }
        PrimOp::Gt | PrimOp::Lt | PrimOp::Eq => {
            let tx = get("x")?;
            let ty = get("y")?;
            if *prim == PrimOp::Eq && tx == WireType::Bool && ty == WireType::Bool {
                ins.push(("x".into(), WireType::Bool));
                ins.push(("y".into(), WireType::Bool));
                outs.push(("res".into(), WireType::Bool));
            } else {
                let u = unify_numeric(&tx, &ty).ok_or_else(|| type_mismatch(node, "y", &ty, &tx))?;
                if matches!(u.ty, WireType::Array { .. } | WireType::Cluster(_)) {
                    return Err(Error::Check(vec![Diagnostic::new(
                        ErrorCode::TypeMismatch,
                        format!("`{}`: comparisons are scalar-only", node),
                    )]));
                }
                if let Some(p) = u.promote_x {
                    promotions.push(("x".into(), p));
                }
                if let Some(p) = u.promote_y {
                    promotions.push(("y".into(), p));
                }
                ins.push(("x".into(), u.ty.clone()));
                ins.push(("y".into(), u.ty));
                outs.push(("res".into(), WireType::Bool));
            }
        }
        PrimOp::And | PrimOp::Or => {
            for p in ["x", "y"] {
                let t = get(p)?;
                if t != WireType::Bool {
                    return Err(type_mismatch(node, p, &t, &WireType::Bool));
                }
                ins.push((p.into(), WireType::Bool));
            }
            outs.push(("res".into(), WireType::Bool));
        }
        PrimOp::Not => {
            let t = get("x")?;
            if t != WireType::Bool {
                return Err(type_mismatch(node, "x", &t, &WireType::Bool));
            }
            ins.push(("x".into(), WireType::Bool));
            outs.push(("res".into(), WireType::Bool));
        }
        PrimOp::Select => {
            let ts = get("s")?;
            if ts != WireType::Bool {
                return Err(type_mismatch(node, "s", &ts, &WireType::Bool));
            }
            let tt = get("t")?;
            let tf = get("f")?;
            let unified = if tt == tf {
                Unified { ty: tt.clone(), promote_x: None, promote_y: None }
            } else {
                unify_numeric(&tt, &tf).ok_or_else(|| type_mismatch(node, "f", &tf, &tt))?
            };
            if let Some(p) = unified.promote_x {
                promotions.push(("t".into(), p));
            }
            if let Some(p) = unified.promote_y {
                promotions.push(("f".into(), p));
            }
            ins.push(("s".into(), WireType::Bool));
            ins.push(("t".into(), unified.ty.clone()));
            ins.push(("f".into(), unified.ty.clone()));
            outs.push(("res".into(), unified.ty));
        }
        PrimOp::Const(v) => outs.push(("out".into(), v.ty())),
        PrimOp::Convert { to, .. } => {
            let t = get("in")?;
            if !t.is_numeric_scalar() || !to.is_numeric_scalar() {
                return Err(Error::Check(vec![Diagnostic::new(
                    ErrorCode::TypeMismatch,
                    format!("`{}`: Convert requires numeric scalars ({} -> {})", node, t, to),
                )]));
            }
            ins.push(("in".into(), t));
            outs.push(("out".into(), to.clone()));
        }
        PrimOp::Biquad => {
            let tx = get("x")?;
            let ok = matches!(&tx, WireType::Array { elem, .. } if **elem == WireType::Float64);
            if !ok {
                return Err(type_mismatch(node, "x", &tx, &WireType::array(WireType::Float64, 0)));
            }
            ins.push(("x".into(), tx.clone()));
            for p in ["b0", "b1", "b2", "a1", "a2"] {
                let t = get(p)?;
                if t == WireType::Int32 {
                    promotions.push((p.into(), WireType::Float64));
                } else if t != WireType::Float64 {
                    return Err(type_mismatch(node, p, &t, &WireType::Float64));
                }
                ins.push((p.into(), WireType::Float64));
            }
            outs.push(("y".into(), tx));
        }
        PrimOp::ArrayIndex => {
            let ta = get("arr")?;
            let WireType::Array { elem, .. } = &ta else {
                return Err(type_mismatch(node, "arr", &ta, &WireType::array(WireType::Float64, 0)));
            };
            let ti = get("idx")?;
            if ti != WireType::Int32 {
                return Err(type_mismatch(node, "idx", &ti, &WireType::Int32));
            }
            let elem = (**elem).clone();
            ins.push(("arr".into(), ta.clone()));
            ins.push(("idx".into(), WireType::Int32));
            outs.push(("elem".into(), elem));
        }
        PrimOp::ArrayBuild(n) => {
            if *n == 0 {
                return Err(Error::Check(vec![Diagnostic::new(
                    ErrorCode::TypeMismatch,
                    format!("`{}`: ArrayBuild needs at least one element", node),
                )]));
            }
            let first = get("x0")?;
            for i in 0..*n {
                let p = format!("x{}", i);
                let t = get(&p)?;
                if t != first {
                    return Err(type_mismatch(node, &p, &t, &first));
                }
                ins.push((p, first.clone()));
            }
            outs.push(("arr".into(), WireType::array(first, *n)));
        }
        PrimOp::FifoRead { channel, .. } => {
            let elem = env.channel_elem(channel).ok_or_else(|| {
                Error::fault(ErrorCode::UnknownEndpoint, format!("channel `{}`", channel))
            })?;
            maybe_bool_en(&mut ins, in_names, in_types, node)?;
            outs.push(("v".into(), elem));
            outs.push(("ok".into(), WireType::Bool));
        }
        PrimOp::FifoWrite { channel, .. } => {
            let elem = env.channel_elem(channel).ok_or_else(|| {
                Error::fault(ErrorCode::UnknownEndpoint, format!("channel `{}`", channel))
            })?;
            let tv = get("v")?;
            if tv != elem {
                if let Some(p) = promotion(&tv, &elem) {
                    promotions.push(("v".into(), p));
                } else {
                    return Err(type_mismatch(node, "v", &tv, &elem));
                }
            }
            ins.push(("v".into(), elem));
            maybe_bool_en(&mut ins, in_names, in_types, node)?;
            outs.push(("ok".into(), WireType::Bool));
        }
        PrimOp::RegRead { channel } => {
            let elem = env.channel_elem(channel).ok_or_else(|| {
                Error::fault(ErrorCode::UnknownEndpoint, format!("channel `{}`", channel))
            })?;
            outs.push(("v".into(), elem));
        }
        PrimOp::RegWrite { channel } => {
            let elem = env.channel_elem(channel).ok_or_else(|| {
                Error::fault(ErrorCode::UnknownEndpoint, format!("channel `{}`", channel))
            })?;
            let tv = get("v")?;
            if tv != elem {
                if let Some(p) = promotion(&tv, &elem) {
                    promotions.push(("v".into(), p));
                } else {
                    return Err(type_mismatch(node, "v", &tv, &elem));
                }
            }
            ins.push(("v".into(), elem));
            maybe_bool_en(&mut ins, in_names, in_types, node)?;
        }
        PrimOp::ScanRead { channel } => {
            let ty = scan_channel_ty(env, channel)?;
            outs.push(("v".into(), ty));
        }
        PrimOp::ScanWrite { channel } => {
            let ty = scan_channel_ty(env, channel)?;
            let tv = get("v")?;
            if tv != ty {
                if let Some(p) = promotion(&tv, &ty) {
                    promotions.push(("v".into(), p));
                } else {
                    return Err(type_mismatch(node, "v", &tv, &ty));
                }
            }
            ins.push(("v".into(), ty));
        }
        PrimOp::AoReady { .. } => outs.push(("rdy".into(), WireType::Bool)),
        PrimOp::AoWrite { .. } => {
            let tv = get("v")?;
            let ok =
                matches!(tv, WireType::Int32) || matches!(tv, WireType::Fxp { word_bits: 16, .. });
            if !ok {
                return Err(Error::Check(vec![Diagnostic::new(
                    ErrorCode::TypeMismatch,
                    format!("`{}`: AoWrite takes i32 or 16-bit fxp sample codes, got {}", node, tv),
                )]));
            }
            ins.push(("v".into(), tv));
            maybe_bool_en(&mut ins, in_names, in_types, node)?;
            outs.push(("ok".into(), WireType::Bool));
        }
        PrimOp::FileReadPcm { source } => {
            let len = env.pcm_lens.get(source).copied().unwrap_or(0);
            outs.push(("samples".into(), WireType::array(WireType::Float64, len)));
            outs.push(("count".into(), WireType::Int32));
        }
        PrimOp::Ipin { name } => {
            let desc = env.ipins.get(name).ok_or_else(|| {
                Error::fault(ErrorCode::IpSchema, format!("IP `{}` is not imported", name))
            })?;
            for p in desc.in_ports() {
                let t = get(&p.name)?;
                if t != p.ty {
                    return Err(type_mismatch(node, &p.name, &t, &p.ty));
                }
                ins.push((p.name.clone(), p.ty.clone()));
            }
            for p in desc.out_ports() {
                outs.push((p.name.clone(), p.ty.clone()));
            }
        }
    }
    Ok(PrimSig { ports: PortTypes { ins, outs }, promotions })
}

fn scan_channel_ty(env: &TypeEnv, channel: &str) -> Result<WireType> {
    env.project
        .scan
        .as_ref()
        .and_then(|s| s.channels.iter().find(|c| c.name == channel))
        .map(|c| c.ty.clone())
        .ok_or_else(|| {
            Error::fault(ErrorCode::UnknownEndpoint, format!("scan channel `{}`", channel))
        })
}

fn maybe_bool_en(
    ins: &mut Vec<(String, WireType)>,
    in_names: &[String],
    in_types: &[Option<WireType>],
    node: &str,
) -> Result<()> {
    if let Some(i) = in_names.iter().position(|p| p == "en") {
        if let Some(t) = &in_types[i] {
            if *t != WireType::Bool {
                return Err(type_mismatch(node, "en", t, &WireType::Bool));
            }
            ins.push(("en".into(), WireType::Bool));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Partition
// ---------------------------------------------------------------------------

/// One single-cycle loop assigned to the fabric.
#[derive(Debug, Clone)]
pub struct FabricLoop {
    pub node_id: String,
    pub sctl: SctlLoop,
    pub clock_hz: u64,
    pub types: DiagramTypes,
    /// Constant values folded into input tunnels (body controls).
    pub tunnel_consts: BTreeMap<String, Value>,
}

/// A declared channel together with the node ids touching it on each side.
#[derive(Debug, Clone)]
pub struct ChannelBinding {
    pub channel: ChannelDecl,
    pub host_nodes: Vec<String>,
    pub fabric_nodes: Vec<String>,
}

/// The partitioned design: a host diagram, fabric loops, and the channel
/// bindings connecting them. No wire crosses the boundary directly.
#[derive(Debug, Clone)]
pub struct DeploymentPlan {
    pub host: TypedDiagram,
    pub fabric_loops: Vec<FabricLoop>,
    pub bindings: Vec<ChannelBinding>,
    pub scan: Option<ScanConfig>,
}

/// Splits a flat, typed project into host and fabric programs. Single-cycle
/// loops always land on the fabric; everything else follows its target hint
/// (inheriting the VI default). Every host/fabric crossing must go through a
/// declared channel.
pub fn partition(project: &Project, top: &TypedDiagram) -> Result<DeploymentPlan> {
    let mut diags: Vec<Diagnostic> = Vec::new();
    let vi = project.top_vi().ok_or_else(|| {
        Error::fault(ErrorCode::UnresolvedSubvi, format!("no top VI `{}`", project.top))
    })?;
    let default_target = vi.target.unwrap_or(Target::Host);

    // Effective side per node.
    let mut side: HashMap<&str, Side> = HashMap::new();
    for n in &top.diagram.nodes {
        let s = match &n.op {
            NodeOp::Structure(s) if matches!(**s, StructureNode::Sctl(_)) => Side::Fabric,
            _ => match n.target_hint {
                TargetHint::Host => Side::Host,
                TargetHint::Fabric => Side::Fabric,
                TargetHint::Inherit => match default_target {
                    Target::Host => Side::Host,
                    Target::Fabric => Side::Fabric,
                },
            },
        };
        side.insert(n.id.as_str(), s);
    }

    // Nested single-cycle loops inside host structures are not supported:
    // the plan's fabric side holds top-level loops only.
    for n in &top.diagram.nodes {
        if let NodeOp::Structure(s) = &n.op {
            if !matches!(**s, StructureNode::Sctl(_)) && contains_sctl(s) {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::SctlIllegalNode,
                        format!("single-cycle loop nested inside `{}` must be at the top level", n.id),
                    )
                    .with_node(n.id.clone()),
                );
            }
        }
    }

    // Fabric-side non-SCTL nodes are legal only as constants feeding SCTL
    // tunnels (folded below).
    let mut foldable: HashSet<&str> = HashSet::new();
    for n in &top.diagram.nodes {
        if side[n.id.as_str()] != Side::Fabric {
            continue;
        }
        match &n.op {
            NodeOp::Structure(s) if matches!(**s, StructureNode::Sctl(_)) => {}
            NodeOp::Prim(PrimOp::Const(_)) => {
                let all_into_sctl = top.diagram.wires.iter().all(|w| {
                    if w.src != nport(&n.id, "out") {
                        return true;
                    }
                    w.dsts.iter().all(|d| match d {
                        Endpoint::Node { node, .. } => {
                            matches!(top.diagram.node(node).map(|nn| &nn.op),
                                Some(NodeOp::Structure(s)) if matches!(**s, StructureNode::Sctl(_)))
                        }
                        _ => false,
                    })
                });
                if all_into_sctl {
                    foldable.insert(n.id.as_str());
                } else {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::HostPrimInFabric,
                            format!(
                                "fabric constant `{}` may only feed single-cycle loop tunnels",
                                n.id
                            ),
                        )
                        .with_node(n.id.clone()),
                    );
                }
            }
            _ => diags.push(
                Diagnostic::new(
                    ErrorCode::HostPrimInFabric,
                    format!("node `{}` cannot run on the fabric outside a single-cycle loop", n.id),
                )
                .with_node(n.id.clone()),
            ),
        }
    }

    // Boundary wires: any leg whose endpoints sit on different sides.
    // Top-level boundary ports (controls/indicators) count as host.
    let ep_side = |e: &Endpoint| -> Option<Side> {
        match e {
            Endpoint::Boundary(_) => Some(Side::Host),
            Endpoint::Node { node, .. } => side.get(node.as_str()).copied(),
        }
    };
    for w in &top.diagram.wires {
        let Some(ss) = ep_side(&w.src) else { continue };
        let src_foldable =
            matches!(&w.src, Endpoint::Node { node, .. } if foldable.contains(node.as_str()));
        for dst in &w.dsts {
            let Some(ds) = ep_side(dst) else { continue };
            if ss != ds && !src_foldable {
                diags.push(
                    Diagnostic::new(
                        ErrorCode::BoundaryWire,
                        format!(
                            "wire {} -> {} crosses the host/fabric boundary without a channel",
                            w.src, dst
                        ),
                    )
                    .with_opt_span(w.span.clone()),
                );
            }
        }
    }

    // Scan channels may not share names with channels or DACs (single owner).
    if let Some(scan) = &project.scan {
        for c in &scan.channels {
            if project.channel(&c.name).is_some() || project.dac(&c.name).is_some() {
                diags.push(Diagnostic::new(
                    ErrorCode::ChannelOwnership,
                    format!("scan channel `{}` is also owned by fabric logic", c.name),
                ));
            }
        }
    }

    // Channel usage sides.
    let mut usage: BTreeMap<String, (Vec<String>, Vec<String>)> = BTreeMap::new();
    collect_channel_usage(&top.diagram, &side, default_target, &mut usage, &mut diags, project);

    if !diags.is_empty() {
        return Err(Error::Check(diags));
    }

    // Build fabric loops with folded tunnel constants.
    let mut fabric_loops = Vec::new();
    for n in &top.diagram.nodes {
        let NodeOp::Structure(s) = &n.op else { continue };
        let StructureNode::Sctl(sc) = &**s else { continue };
        let clock_hz = resolve_clock(project, &sc.clock);
        let mut tunnel_consts = BTreeMap::new();
        for w in &top.diagram.wires {
            if let Endpoint::Node { node: src_node, .. } = &w.src {
                if let Some(NodeOp::Prim(PrimOp::Const(v))) =
                    top.diagram.node(src_node).map(|nn| &nn.op)
                {
                    for dst in &w.dsts {
                        if let Endpoint::Node { node, port } = dst {
                            if node == &n.id {
                                tunnel_consts.insert(port.clone(), v.clone());
                            }
                        }
                    }
                }
            }
        }
        let types =
            top.types.bodies.get(&n.id).and_then(|b| b.first()).cloned().unwrap_or_default();
        fabric_loops.push(FabricLoop {
            node_id: n.id.clone(),
            sctl: sc.clone(),
            clock_hz,
            types,
            tunnel_consts,
        });
    }

    // Host diagram: drop fabric nodes and every wire leg touching them.
    let mut host = top.diagram.clone();
    host.nodes.retain(|n| side[n.id.as_str()] == Side::Host);
    let host_ids: HashSet<&str> = host.nodes.iter().map(|n| n.id.as_str()).collect();
    let mut wires = Vec::new();
    for w in &top.diagram.wires {
        let src_ok = match &w.src {
            Endpoint::Boundary(_) => true,
            Endpoint::Node { node, .. } => host_ids.contains(node.as_str()),
        };
        if !src_ok {
            continue;
        }
        let dsts: Vec<Endpoint> = w
            .dsts
            .iter()
            .filter(|d| match d {
                Endpoint::Boundary(_) => true,
                Endpoint::Node { node, .. } => host_ids.contains(node.as_str()),
            })
            .cloned()
            .collect();
        if !dsts.is_empty() {
            wires.push(Wire::new(w.src.clone(), dsts));
        }
    }
    host.wires = wires;
    let mut host_types = top.types.clone();
    host_types.node_ports.retain(|id, _| host_ids.contains(id.as_str()));
    host_types.bodies.retain(|id, _| host_ids.contains(id.as_str()));

    let bindings = usage
        .into_iter()
        .filter_map(|(name, (host_nodes, fabric_nodes))| {
            project
                .channel(&name)
                .map(|c| ChannelBinding { channel: c.clone(), host_nodes, fabric_nodes })
        })
        .collect();

    Ok(DeploymentPlan {
        host: TypedDiagram { diagram: host, types: host_types },
        fabric_loops,
        bindings,
        scan: project.scan.clone(),
    })
}

fn contains_sctl(s: &StructureNode) -> bool {
    s.bodies().iter().any(|b| {
        b.nodes.iter().any(|n| match &n.op {
            NodeOp::Structure(inner) => {
                matches!(**inner, StructureNode::Sctl(_)) || contains_sctl(inner)
            }
            _ => false,
        })
    })
}

/// Resolves a clock name to Hz; projects with no clock declarations run the
/// fabric at the documented 40 MHz default.
pub fn resolve_clock(project: &Project, name: &str) -> u64 {
    project.clocks.get(name).copied().unwrap_or(DEFAULT_CLOCK_HZ)
}

fn collect_channel_usage(
    d: &Diagram,
    top_side: &HashMap<&str, Side>,
    default_target: Target,
    usage: &mut BTreeMap<String, (Vec<String>, Vec<String>)>,
    diags: &mut Vec<Diagnostic>,
    project: &Project,
) {
    for n in &d.nodes {
        let s = top_side.get(n.id.as_str()).copied().unwrap_or(match default_target {
            Target::Host => Side::Host,
            Target::Fabric => Side::Fabric,
        });
        collect_node_channels(n, s, usage, diags, project);
    }
}

fn collect_node_channels(
    n: &Node,
    s: Side,
    usage: &mut BTreeMap<String, (Vec<String>, Vec<String>)>,
    diags: &mut Vec<Diagnostic>,
    project: &Project,
) {
    let mut record = |channel: &str, node_id: &str, is_write: bool, is_fifo: bool| {
        let entry = usage.entry(channel.to_string()).or_default();
        match s {
            Side::Host => entry.0.push(node_id.to_string()),
            Side::Fabric => entry.1.push(node_id.to_string()),
        }
        if is_fifo {
            if let Some(decl) = project.channel(channel) {
                if let ChannelKind::Fifo { from, to, .. } = &decl.kind {
                    let need = if is_write { *from } else { *to };
                    if need != s {
                        diags.push(
                            Diagnostic::new(
                                ErrorCode::ChannelSide,
                                format!(
                                    "node `{}` uses fifo `{}` from the {} side but its {} endpoint is {}",
                                    node_id,
                                    channel,
                                    s,
                                    if is_write { "write" } else { "read" },
                                    need
                                ),
                            )
                            .with_node(node_id.to_string()),
                        );
                    }
                }
            }
        }
    };
    match &n.op {
        NodeOp::Prim(PrimOp::FifoRead { channel, .. }) => record(channel, &n.id, false, true),
        NodeOp::Prim(PrimOp::FifoWrite { channel, .. }) => record(channel, &n.id, true, true),
        NodeOp::Prim(PrimOp::RegRead { channel }) => record(channel, &n.id, false, false),
        NodeOp::Prim(PrimOp::RegWrite { channel }) => record(channel, &n.id, true, false),
        NodeOp::Structure(st) => {
            if let StructureNode::Sctl(sc) = &**st {
                for p in &sc.params {
                    if let Some(ch) = &p.channel {
                        usage.entry(ch.clone()).or_default().1.push(n.id.clone());
                    }
                }
            }
            for body in st.bodies() {
                for inner in &body.nodes {
                    collect_node_channels(inner, s, usage, diags, project);
                }
            }
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Single-cycle timing feasibility
// ---------------------------------------------------------------------------

/// Longest-combinational-path report of one single-cycle loop body.
#[derive(Debug, Clone, Serialize)]
pub struct SctlReport {
    pub loop_id: String,
    pub clock_hz: u64,
    pub period_ns: f64,
    pub path_ns: f64,
    pub feasible: bool,
    /// Node ids along the critical path, in dataflow order.
    pub critical_path: Vec<String>,
}

impl SctlReport {
    pub fn as_result(&self) -> Result<()> {
        if self.feasible {
            Ok(())
        } else {
            Err(Error::fault(
                ErrorCode::SctlTiming,
                format!(
                    "loop `{}`: critical path {:.1} ns exceeds period {:.1} ns ({} Hz) via [{}]",
                    self.loop_id,
                    self.path_ns,
                    self.period_ns,
                    self.clock_hz,
                    self.critical_path.join(" -> ")
                ),
            ))
        }
    }
}

/// Per-node combinational depth, recursing into case structures: a case is
/// one mux (Select depth) after its deepest branch.
fn node_depth(n: &Node, table: &DepthTable, ipins: &BTreeMap<String, IpDescriptor>) -> Result<f64> {
    match &n.op {
        NodeOp::Prim(PrimOp::Ipin { name }) => {
            let desc = ipins.get(name).ok_or_else(|| {
                Error::fault(ErrorCode::IpSchema, format!("IP `{}` is not imported", name))
            })?;
            if desc.latency.unwrap_or(0) >= 1 {
                // Pipelined: registers bound the path at this node.
                Ok(0.0)
            } else {
                Ok(desc.depth_ns.unwrap_or(0.0))
            }
        }
        NodeOp::Prim(p) => table.depth_ns(p).ok_or_else(|| {
            Error::fault(
                ErrorCode::SctlIllegalNode,
                format!("primitive `{}` on node `{}` is not fabric-legal", p.name(), n.id),
            )
        }),
        NodeOp::Structure(s) => match &**s {
            StructureNode::Case(c) => {
                let mut worst: f64 = 0.0;
                for (_, b) in &c.cases {
                    worst = worst.max(body_longest_path(b, table, ipins)?.0);
                }
                worst = worst.max(body_longest_path(&c.default, table, ipins)?.0);
                Ok(worst + table.depth_ns(&PrimOp::Select).unwrap_or(3.0))
            }
            other => Err(Error::fault(
                ErrorCode::SctlIllegalNode,
                format!("{} loop `{}` inside a single-cycle loop", other.kind_name(), n.id),
            )),
        },
        NodeOp::SubVi(name) => Err(Error::fault(
            ErrorCode::SctlIllegalNode,
            format!("sub-VI `{}` must be expanded before timing", name),
        )),
    }
}

/// Whether a node's output starts a fresh combinational path (its result
/// comes out of a register, not from this tick's input logic).
fn is_path_cut(n: &Node, ipins: &BTreeMap<String, IpDescriptor>) -> bool {
    match &n.op {
        NodeOp::Prim(PrimOp::Ipin { name }) => {
            ipins.get(name).map(|d| d.latency.unwrap_or(0) >= 1).unwrap_or(false)
        }
        _ => false,
    }
}

/// DAG longest path over node depths. Returns (path_ns, path node ids).
pub(crate) fn body_longest_path(
    body: &Diagram,
    table: &DepthTable,
    ipins: &BTreeMap<String, IpDescriptor>,
) -> Result<(f64, Vec<String>)> {
    let order = crate::ir::topo_order(body).map_err(|d| Error::Check(vec![d]))?;
    let idx: HashMap<&str, usize> =
        body.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); body.nodes.len()];
    for (s, t) in crate::ir::node_edges(body) {
        preds[t].push(s);
    }
    let mut arrive = vec![0f64; body.nodes.len()];
    let mut best_pred: Vec<Option<usize>> = vec![None; body.nodes.len()];
    let mut best = (0f64, None::<usize>);
    for id in &order {
        let i = idx[id.as_str()];
        let w = node_depth(&body.nodes[i], table, ipins)?;
        let mut base = 0f64;
        for &p in &preds[i] {
            if is_path_cut(&body.nodes[p], ipins) {
                continue;
            }
            if arrive[p] > base {
                base = arrive[p];
                best_pred[i] = Some(p);
            }
        }
        arrive[i] = base + w;
        if arrive[i] > best.0 {
            best = (arrive[i], Some(i));
        }
    }
    let mut path = Vec::new();
    let mut cur = best.1;
    while let Some(i) = cur {
        path.push(body.nodes[i].id.clone());
        cur = best_pred[i];
    }
    path.reverse();
    Ok((best.0, path))
}

/// Computes the critical path of a single-cycle loop body and compares it
/// with the clock period. Every loop iteration must fit in one tick.
pub fn check_sctl(
    loop_id: &str,
    sctl: &SctlLoop,
    clock_hz: u64,
    table: &DepthTable,
    ipins: &BTreeMap<String, IpDescriptor>,
) -> Result<SctlReport> {
    let (path_ns, critical_path) = body_longest_path(&sctl.body, table, ipins)?;
    let period_ns = 1e9 / clock_hz as f64;
    Ok(SctlReport {
        loop_id: loop_id.to_string(),
        clock_hz,
        period_ns,
        path_ns,
        feasible: path_ns <= period_ns,
        critical_path,
    })
}


// ---------------------------------------------------------------------------
// Whole-project elaboration
// ---------------------------------------------------------------------------

/// Everything the execution engines need from one elaborated project.
pub struct Elaborated {
    /// Flat project (single top VI, sub-VIs inlined).
    pub project: Project,
    pub top: TypedDiagram,
    pub plan: DeploymentPlan,
}

/// Front-to-back elaboration: expand, infer types, partition.
pub fn elaborate(
    p: &Project,
    ipins: &BTreeMap<String, IpDescriptor>,
    pcm_lens: &BTreeMap<String, usize>,
) -> Result<Elaborated> {
    let flat = expand(p)?;
    let vi = flat.top_vi().ok_or_else(|| {
        Error::fault(ErrorCode::UnresolvedSubvi, format!("no top VI `{}`", flat.top))
    })?;
    let mut env = TypeEnv::new(&flat);
    env.ipins = ipins.clone();
    env.pcm_lens = pcm_lens.clone();
    let top = infer_types(&vi.diagram, &env, ScopeInfo::default())?;
    let plan = partition(&flat, &top)?;
    Ok(Elaborated { project: flat, top, plan })
}

/// Loads every IP descriptor a project imports, resolving paths relative to
/// `base_dir`.
pub fn load_imports(
    p: &Project,
    base_dir: &std::path::Path,
) -> Result<BTreeMap<String, IpDescriptor>> {
    let mut out = BTreeMap::new();
    for rel in &p.imports {
        let path = base_dir.join(rel);
        let desc = IpDescriptor::load(&path)?;
        if out.insert(desc.name.clone(), desc).is_some() {
            return Err(Error::fault(
                ErrorCode::IpSchema,
                format!("duplicate IP descriptor imported via {}", rel),
            ));
        }
    }
    Ok(out)
}
