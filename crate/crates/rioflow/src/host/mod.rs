//! Host runtime: asynchronous dataflow firing semantics.
//!
//! One execution of a diagram fires every node exactly once; a node becomes
//! ready when all of its (required) in-ports hold a token. When several
//! nodes are ready the scheduler picks pseudo-randomly from the configured
//! seed; determinacy of the results is a tested property of the firing
//! rule, not an accident of a fixed order. Loop structures re-execute their
//! body diagram per iteration, threading shift registers.
//!
//! The engine is resumable: channel operations that would block suspend the
//! whole execution (to the co-simulation tick loop) and resume exactly
//! where they left off, including inside nested structures.

pub mod biquad;
pub mod prims;

pub use biquad::{biquad, biquad_step, BiquadCoeffs, BiquadState};
pub use prims::{convert_value, fire, fire_named};

use crate::comm::CommSet;
use crate::diag::{Diagnostic, Error, ErrorCode, Result};
use crate::fabric::ip::{IpDescriptor, IpRuntime};
use crate::ir::{
    Diagram, Endpoint, NodeOp, PrimOp, Project, StructureNode, Timeout, ViGraph,
};
use crate::scan::{ScanEngine, VirtualAo};
use crate::value::{Value, WireType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

/// Execution limits and scheduler seed.
#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub seed: u64,
    pub max_firings: u64,
    pub trace: bool,
    /// Iterations a single-cycle loop runs under host semantics (one per
    /// simulated tick in the development flow).
    pub sctl_iters: u64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { seed: 0, max_firings: 1_000_000, trace: false, sctl_iters: 0 }
    }
}

/// One firing in the execution trace.
#[derive(Debug, Clone)]
pub struct FiringRecord {
    pub index: u64,
    pub node: String,
    pub consumed: Vec<(String, Value)>,
    pub produced: Vec<(String, Value)>,
}

#[derive(Debug, Clone, Default)]
pub struct FiringTrace {
    pub records: Vec<FiringRecord>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub outputs: BTreeMap<String, Value>,
    pub trace: FiringTrace,
    pub firings: u64,
}

/// External state the host program touches: channels, the scan map, DACs,
/// bound PCM data, and imported IP instances.
#[derive(Default)]
pub struct HostEnv<'a> {
    pub comm: Option<&'a mut CommSet>,
    pub scan: Option<&'a mut ScanEngine>,
    pub aos: Option<&'a mut BTreeMap<String, VirtualAo>>,
    pub pcm: BTreeMap<String, Arc<Vec<f64>>>,
    pub ipins: BTreeMap<String, IpDescriptor>,
    /// Current tick in co-simulation; stays 0 in pure host runs.
    pub now: u64,
}

// ---------------------------------------------------------------------------
// Compiled diagrams
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct CNode {
    id: String,
    op: NodeOp,
    in_names: Vec<String>,
    out_names: Vec<String>,
    in_slots: Vec<usize>,
    in_required: Vec<bool>,
    /// Destination slots per out port.
    out_fan: Vec<Vec<usize>>,
    bodies: Vec<Rc<Compiled>>,
}

/// A diagram lowered to slot indices for fast, allocation-light activation.
#[derive(Debug)]
pub struct Compiled {
    nodes: Vec<CNode>,
    slot_count: usize,
    control_fan: BTreeMap<String, Vec<usize>>,
    index_fan: Vec<usize>,
    indicator_slots: Vec<(String, WireType, usize)>,
    shiftreg_slots: Vec<(String, usize)>,
    stop_slot: Option<usize>,
    /// Channel primitives compiled inside a single-cycle loop body are
    /// non-blocking with an explicit ok flag.
    sctl_ctx: bool,
}

struct CompileCx<'a> {
    project: Option<&'a Project>,
}

/// Port names of a node as implied by its wiring (sorted, deduplicated).
fn wire_derived_ports(d: &Diagram, node_id: &str) -> (Vec<String>, Vec<String>) {
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for w in &d.wires {
        if let Endpoint::Node { node, port } = &w.src {
            if node == node_id && !outs.contains(port) {
                outs.push(port.clone());
            }
        }
        for dst in &w.dsts {
            if let Endpoint::Node { node, port } = dst {
                if node == node_id && !ins.contains(port) {
                    ins.push(port.clone());
                }
            }
        }
    }
    ins.sort();
    outs.sort();
    (ins, outs)
}

impl Compiled {
    pub fn build(d: &Diagram, project: Option<&Project>) -> Result<Rc<Compiled>> {
        let cx = CompileCx { project };
        compile_diagram(d, &cx, &[], &[], None, false)
    }
}

fn compile_diagram(
    d: &Diagram,
    cx: &CompileCx<'_>,
    shift_regs: &[crate::ir::ShiftRegister],
    params: &[crate::ir::SctlParam],
    stop_port: Option<&str>,
    sctl_ctx: bool,
) -> Result<Rc<Compiled>> {
    let mut slot_count = 0usize;
    let mut alloc = || {
        let s = slot_count;
        slot_count += 1;
        s
    };

    // Slots for node in-ports.
    let mut nodes: Vec<CNode> = Vec::with_capacity(d.nodes.len());
    let mut in_slot_of: BTreeMap<(String, String), usize> = BTreeMap::new();
    for n in &d.nodes {
        let subvi = match (&n.op, cx.project) {
            (NodeOp::SubVi(name), Some(p)) => p.vis.get(name),
            _ => None,
        };
        if matches!(&n.op, NodeOp::SubVi(_)) && subvi.is_none() {
            return Err(Error::fault(
                ErrorCode::UnresolvedSubvi,
                format!("sub-VI for node `{}` cannot be resolved", n.id),
            ));
        }
        // Imported IP ports are not statically known here; derive them from
        // the wires and reorder against the descriptor at fire time.
        let (in_names, out_names) = if matches!(&n.op, NodeOp::Prim(PrimOp::Ipin { .. })) {
            wire_derived_ports(d, &n.id)
        } else {
            (n.in_port_names(subvi), n.out_port_names(subvi))
        };
        let optional: Vec<&str> = match &n.op {
            NodeOp::Prim(p) => p.optional_in_ports().to_vec(),
            _ => Vec::new(),
        };
        let mut in_slots = Vec::with_capacity(in_names.len());
        let mut in_required = Vec::with_capacity(in_names.len());
        for port in &in_names {
            let s = alloc();
            in_slot_of.insert((n.id.clone(), port.clone()), s);
            in_slots.push(s);
            in_required.push(!optional.contains(&port.as_str()));
        }

        // Compile nested bodies.
        let bodies: Vec<Rc<Compiled>> = match &n.op {
            NodeOp::Structure(s) => match &**s {
                StructureNode::While(w) => vec![compile_diagram(
                    &w.body,
                    cx,
                    &w.shift_regs,
                    &[],
                    Some(&w.stop_port),
                    sctl_ctx,
                )?],
                StructureNode::For(f) => {
                    vec![compile_diagram(&f.body, cx, &f.shift_regs, &[], None, sctl_ctx)?]
                }
                StructureNode::Case(c) => {
                    let mut v = Vec::new();
                    for (_, b) in &c.cases {
                        v.push(compile_diagram(b, cx, &[], &[], None, sctl_ctx)?);
                    }
                    v.push(compile_diagram(&c.default, cx, &[], &[], None, sctl_ctx)?);
                    v
                }
                StructureNode::Sctl(sc) => {
                    vec![compile_diagram(&sc.body, cx, &sc.shift_regs, &sc.params, None, true)?]
                }
            },
            NodeOp::SubVi(_) => {
                let vi: &ViGraph = subvi.unwrap();
                vec![compile_diagram(&vi.diagram, cx, &[], &[], None, sctl_ctx)?]
            }
            NodeOp::Prim(_) => Vec::new(),
        };

        nodes.push(CNode {
            id: n.id.clone(),
            op: n.op.clone(),
            out_fan: vec![Vec::new(); out_names.len()],
            in_names,
            out_names,
            in_slots,
            in_required,
            bodies,
        });
    }

    // Boundary sink slots.
    let mut indicator_slots = Vec::new();
    for ind in &d.indicators {
        indicator_slots.push((ind.name.clone(), ind.ty.clone(), alloc()));
    }
    let mut shiftreg_slots = Vec::new();
    for sr in shift_regs {
        shiftreg_slots.push((sr.name.clone(), alloc()));
    }
    let stop_slot = stop_port.and_then(|name| {
        indicator_slots.iter().find(|(n, _, _)| n == name).map(|(_, _, s)| *s)
    });

    // Wire fan-out: resolve each destination endpoint to a slot.
    let node_index: BTreeMap<String, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    let sink_slot = |name: &str| -> Option<usize> {
        indicator_slots
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, s)| *s)
            .or_else(|| shiftreg_slots.iter().find(|(n, _)| n == name).map(|(_, s)| *s))
    };

    let mut control_fan: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for c in &d.controls {
        control_fan.insert(c.name.clone(), Vec::new());
    }
    for sr in shift_regs {
        control_fan.entry(sr.name.clone()).or_default();
    }
    for p in params {
        control_fan.entry(p.name.clone()).or_default();
    }
    let mut index_fan = Vec::new();

    for w in &d.wires {
        let mut dst_slots = Vec::new();
        for dst in &w.dsts {
            let slot = match dst {
                Endpoint::Boundary(name) => sink_slot(name).ok_or_else(|| {
                    Error::fault(ErrorCode::UnknownEndpoint, format!("unknown sink `{}`", name))
                })?,
                Endpoint::Node { node, port } => {
                    *in_slot_of.get(&(node.clone(), port.clone())).ok_or_else(|| {
                        Error::fault(
                            ErrorCode::UnknownEndpoint,
                            format!("unknown port `{}.{}`", node, port),
                        )
                    })?
                }
            };
            dst_slots.push(slot);
        }
        match &w.src {
            Endpoint::Boundary(name) => {
                if name == "i" && !control_fan.contains_key("i") {
                    index_fan.extend(dst_slots);
                } else {
                    control_fan
                        .get_mut(name)
                        .ok_or_else(|| {
                            Error::fault(
                                ErrorCode::UnknownEndpoint,
                                format!("unknown source `{}`", name),
                            )
                        })?
                        .extend(dst_slots);
                }
            }
            Endpoint::Node { node, port } => {
                let ni = *node_index.get(node).ok_or_else(|| {
                    Error::fault(ErrorCode::UnknownEndpoint, format!("unknown node `{}`", node))
                })?;
                let pi = nodes[ni].out_names.iter().position(|p| p == port).ok_or_else(|| {
                    Error::fault(
                        ErrorCode::UnknownEndpoint,
                        format!("unknown out port `{}.{}`", node, port),
                    )
                })?;
                nodes[ni].out_fan[pi].extend(dst_slots);
            }
        }
    }

    Ok(Rc::new(Compiled {
        nodes,
        slot_count,
        control_fan,
        index_fan,
        indicator_slots,
        shiftreg_slots,
        stop_slot,
        sctl_ctx,
    }))
}

// ---------------------------------------------------------------------------
// Activation state
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum NState {
    Idle,
    /// A channel op that attempted and would block; `rounds` counts aging
    /// steps in pure host mode, `since` the tick of the first attempt.
    BlockedChan { since: u64, rounds: u64 },
    For(Box<LoopState>),
    While(Box<LoopState>),
    Case(Box<CaseState>),
    Sub(Box<Act>),
    SctlHost(Box<SctlHostState>),
}

#[derive(Debug)]
struct LoopState {
    iter: u32,
    trips: u32, // for-loop trip count; unused for while
    carries: Vec<Value>,
    tunnels: Vec<Value>,
    last_outs: Vec<Option<Value>>,
    body: Option<Act>,
}

#[derive(Debug)]
struct CaseState {
    branch: usize,
    body: Act,
}

#[derive(Debug)]
struct SctlHostState {
    iter: u64,
    total: u64,
    carries: Vec<Value>,
    last_outs: Vec<Option<Value>>,
    body: Option<Act>,
}

#[derive(Debug)]
struct Act {
    slots: Vec<Option<Value>>,
    fired: Vec<bool>,
    state: Vec<NState>,
}

impl Act {
    fn new(c: &Compiled) -> Act {
        Act {
            slots: vec![None; c.slot_count],
            fired: vec![false; c.nodes.len()],
            state: c.nodes.iter().map(|_| NState::Idle).collect(),
        }
    }

    fn deposit(&mut self, fan: &[usize], v: &Value) {
        for &s in fan {
            self.slots[s] = Some(v.clone());
        }
    }
}

/// Outcome of advancing an activation as far as it can go.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Flow {
    /// No node can fire and none is suspended mid-operation.
    Quiescent,
    /// At least one node is suspended on a channel; simulated time must
    /// advance before anything can change.
    Blocked,
}

struct Ctx<'a, 'e, 'f> {
    rng: ChaCha8Rng,
    firings: u64,
    cfg: &'a ExecConfig,
    trace: Vec<FiringRecord>,
    env: &'a mut HostEnv<'e>,
    ipin_state: &'f mut BTreeMap<String, IpRuntime>,
    /// Last successfully read value per fabric-context FifoRead node, so a
    /// failed read holds its output like a hardware FIFO dout.
    read_hold: &'f mut BTreeMap<String, Value>,
    path: String,
}

impl Ctx<'_, '_, '_> {
    fn count_firing(&mut self) -> Result<()> {
        self.firings += 1;
        if self.firings > self.cfg.max_firings {
            return Err(Error::fault(
                ErrorCode::Limit,
                format!("firing limit {} exceeded", self.cfg.max_firings),
            ));
        }
        Ok(())
    }
}

enum FireOut {
    Fired,
    Blocked,
}

// ---------------------------------------------------------------------------
// The engine
// ---------------------------------------------------------------------------

fn run_act(c: &Compiled, act: &mut Act, ctx: &mut Ctx<'_, '_, '_>) -> Result<Flow> {
    loop {
        // Candidate nodes: not yet fired, with inputs available (or already
        // past input consumption because they are mid-structure/blocked).
        let mut ready: Vec<usize> = Vec::new();
        for (i, n) in c.nodes.iter().enumerate() {
            if act.fired[i] {
                continue;
            }
            let started = !matches!(act.state[i], NState::Idle);
            if started {
                ready.push(i);
                continue;
            }
            let ok = n
                .in_slots
                .iter()
                .zip(&n.in_required)
                .all(|(&s, &req)| !req || act.slots[s].is_some());
            if ok {
                ready.push(i);
            }
        }
        if ready.is_empty() {
            return Ok(Flow::Quiescent);
        }
        // Attempt ready nodes in random order until one fires.
        let mut progressed = false;
        while !ready.is_empty() {
            let pick = ctx.rng.random_range(0..ready.len());
            let i = ready.swap_remove(pick);
            match fire_node(c, act, i, ctx)? {
                FireOut::Fired => {
                    progressed = true;
                    break;
                }
                FireOut::Blocked => {}
            }
        }
        if !progressed {
            return Ok(Flow::Blocked);
        }
    }
}

/// A finished body must have fired every node; anything left over means a
/// token never arrived (deadlock inside the body).
fn ensure_complete(c: &Compiled, act: &Act, what: &str) -> Result<()> {
    for (i, fired) in act.fired.iter().enumerate() {
        if !fired {
            return Err(Error::fault(
                ErrorCode::Deadlock,
                format!("{}: node `{}` never became ready", what, c.nodes[i].id),
            ));
        }
    }
    Ok(())
}

fn take_inputs(c: &Compiled, act: &Act, i: usize) -> Vec<Option<Value>> {
    c.nodes[i].in_slots.iter().map(|&s| act.slots[s].clone()).collect()
}

fn finish_firing(
    c: &Compiled,
    act: &mut Act,
    i: usize,
    outs: Vec<Value>,
    ctx: &mut Ctx<'_, '_, '_>,
) -> Result<FireOut> {
    ctx.count_firing()?;
    if ctx.cfg.trace {
        let node = &c.nodes[i];
        let ins = take_inputs(c, act, i);
        let consumed = node
            .in_names
            .iter()
            .zip(&ins)
            .filter_map(|(n, v)| v.clone().map(|v| (n.clone(), v)))
            .collect();
        let produced = node.out_names.iter().cloned().zip(outs.iter().cloned()).collect();
        let name = if ctx.path.is_empty() {
            node.id.clone()
        } else {
            format!("{}{}", ctx.path, node.id)
        };
        ctx.trace.push(FiringRecord { index: ctx.firings, node: name, consumed, produced });
    }
    // Fan out one token per out port.
    let node = &c.nodes[i];
    for (pi, v) in outs.iter().enumerate() {
        for &s in &node.out_fan[pi] {
            act.slots[s] = Some(v.clone());
        }
    }
    act.fired[i] = true;
    act.state[i] = NState::Idle;
    Ok(FireOut::Fired)
}

fn fire_node(c: &Compiled, act: &mut Act, i: usize, ctx: &mut Ctx<'_, '_, '_>) -> Result<FireOut> {
    let op = c.nodes[i].op.clone();
    match &op {
        NodeOp::Prim(p) => fire_prim(c, act, i, p, ctx),
        NodeOp::SubVi(_) => fire_subvi(c, act, i, ctx),
        NodeOp::Structure(s) => fire_structure(c, act, i, s, ctx),
    }
}

fn en_value(c: &Compiled, act: &Act, i: usize) -> bool {
    c.nodes[i]
        .in_names
        .iter()
        .position(|n| n == "en")
        .and_then(|ix| act.slots[c.nodes[i].in_slots[ix]].as_ref().and_then(|v| v.as_bool()))
        .unwrap_or(true)
}

fn in_value(c: &Compiled, act: &Act, i: usize, port: &str) -> Option<Value> {
    c.nodes[i]
        .in_names
        .iter()
        .position(|n| n == port)
        .and_then(|ix| act.slots[c.nodes[i].in_slots[ix]].clone())
}

fn channel_elem_ty(comm: &CommSet, channel: &str) -> Result<WireType> {
    let ch = comm.get(channel).ok_or_else(|| {
        Error::fault(ErrorCode::UnknownEndpoint, format!("channel `{}` does not exist", channel))
    })?;
    Ok(match &ch.decl.kind {
        crate::ir::ChannelKind::Fifo { elem, .. } => elem.clone(),
        crate::ir::ChannelKind::Register { elem, .. } => elem.clone(),
    })
}

fn fire_prim(
    c: &Compiled,
    act: &mut Act,
    i: usize,
    p: &PrimOp,
    ctx: &mut Ctx<'_, '_, '_>,
) -> Result<FireOut> {
    let node_id = c.nodes[i].id.clone();
    let no_comm =
        || Error::fault(ErrorCode::Runtime, format!("`{}`: no channels bound", node_id));

    match p {
        PrimOp::FifoRead { channel, timeout } => {
            let en = en_value(c, act, i);
            let comm = ctx.env.comm.as_deref_mut().ok_or_else(no_comm)?;
            let elem_ty = channel_elem_ty(comm, channel)?;
            let hold_key = format!("{}{}", ctx.path, node_id);
            // Inside a single-cycle loop a read that does not pop keeps the
            // previous value on its output, like a hardware FIFO dout; plain
            // host reads deliver the type default with the ok flag low.
            let idle_value = |ctx: &Ctx| -> Value {
                if c.sctl_ctx {
                    ctx.read_hold.get(&hold_key).cloned().unwrap_or_else(|| elem_ty.default_value())
                } else {
                    elem_ty.default_value()
                }
            };
            if !en {
                let outs = vec![idle_value(ctx), Value::Bool(false)];
                return finish_firing(c, act, i, outs, ctx);
            }
            match comm.get_mut(channel)?.try_read() {
                Some(v) => {
                    if c.sctl_ctx {
                        ctx.read_hold.insert(hold_key, v.clone());
                    }
                    finish_firing(c, act, i, vec![v, Value::Bool(true)], ctx)
                }
                None => {
                    let effective = if c.sctl_ctx { Timeout::Ticks(0) } else { *timeout };
                    if timed_out(act, i, effective, ctx.env.now) {
                        let outs = vec![idle_value(ctx), Value::Bool(false)];
                        finish_firing(c, act, i, outs, ctx)
                    } else {
                        Ok(FireOut::Blocked)
                    }
                }
            }
        }
        PrimOp::FifoWrite { channel, timeout } => {
            let en = en_value(c, act, i);
            let v = in_value(c, act, i, "v").expect("required port wired");
            let comm = ctx.env.comm.as_deref_mut().ok_or_else(no_comm)?;
            if !en {
                return finish_firing(c, act, i, vec![Value::Bool(false)], ctx);
            }
            if comm.get_mut(channel)?.try_write(v) {
                finish_firing(c, act, i, vec![Value::Bool(true)], ctx)
            } else {
                let effective = if c.sctl_ctx { Timeout::Ticks(0) } else { *timeout };
                if timed_out(act, i, effective, ctx.env.now) {
                    // Dropped: the false flag makes the overflow observable.
                    finish_firing(c, act, i, vec![Value::Bool(false)], ctx)
                } else {
                    Ok(FireOut::Blocked)
                }
            }
        }
        PrimOp::RegRead { channel } => {
            let comm = ctx.env.comm.as_deref_mut().ok_or_else(no_comm)?;
            let v = comm.get_mut(channel)?.reg_read();
            finish_firing(c, act, i, vec![v], ctx)
        }
        PrimOp::RegWrite { channel } => {
            let en = en_value(c, act, i);
            if en {
                let v = in_value(c, act, i, "v").expect("required port wired");
                let comm = ctx.env.comm.as_deref_mut().ok_or_else(no_comm)?;
                comm.get_mut(channel)?.reg_write(v);
            }
            finish_firing(c, act, i, vec![], ctx)
        }
        PrimOp::ScanRead { channel } => {
            let scan = ctx.env.scan.as_deref_mut().ok_or_else(|| {
                Error::fault(ErrorCode::Runtime, format!("`{}`: no scan engine", node_id))
            })?;
            let v = scan.host_read(channel).ok_or_else(|| {
                Error::fault(ErrorCode::Runtime, format!("unknown scan channel `{}`", channel))
            })?;
            finish_firing(c, act, i, vec![v], ctx)
        }
        PrimOp::ScanWrite { channel } => {
            let v = in_value(c, act, i, "v").expect("required port wired");
            let scan = ctx.env.scan.as_deref_mut().ok_or_else(|| {
                Error::fault(ErrorCode::Runtime, format!("`{}`: no scan engine", node_id))
            })?;
            scan.host_write(channel, v);
            finish_firing(c, act, i, vec![], ctx)
        }
        PrimOp::AoReady { dac } => {
            let aos = ctx.env.aos.as_deref_mut().ok_or_else(|| {
                Error::fault(ErrorCode::Runtime, format!("`{}`: no analog outputs", node_id))
            })?;
            let rdy = aos
                .get(dac)
                .map(|ao| ao.has_space())
                .ok_or_else(|| Error::fault(ErrorCode::Runtime, format!("unknown dac `{}`", dac)))?;
            finish_firing(c, act, i, vec![Value::Bool(rdy)], ctx)
        }
        PrimOp::AoWrite { dac } => {
            let en = en_value(c, act, i);
            let aos = ctx.env.aos.as_deref_mut().ok_or_else(|| {
                Error::fault(ErrorCode::Runtime, format!("`{}`: no analog outputs", node_id))
            })?;
            let ao = aos
                .get_mut(dac)
                .ok_or_else(|| Error::fault(ErrorCode::Runtime, format!("unknown dac `{}`", dac)))?;
            let ok = if en {
                let code = sample_code(&in_value(c, act, i, "v").expect("required port wired"));
                ao.push(code)
            } else {
                false
            };
            finish_firing(c, act, i, vec![Value::Bool(ok)], ctx)
        }
        PrimOp::FileReadPcm { source } => {
            let samples = ctx.env.pcm.get(source).cloned().unwrap_or_else(|| Arc::new(Vec::new()));
            let items: Vec<Value> = samples.iter().map(|&x| Value::Float64(x)).collect();
            let count = items.len() as i32;
            let outs = vec![Value::array(WireType::Float64, items), Value::Int32(count)];
            finish_firing(c, act, i, outs, ctx)
        }
        PrimOp::Ipin { name } => {
            let desc = ctx.env.ipins.get(name).cloned().ok_or_else(|| {
                Error::fault(ErrorCode::IpSchema, format!("IP `{}` is not imported", name))
            })?;
            // Reorder wire-derived inputs into descriptor port order.
            let mut by_name: BTreeMap<&str, Value> = BTreeMap::new();
            for (port, v) in c.nodes[i].in_names.iter().zip(take_inputs(c, act, i)) {
                if let Some(v) = v {
                    by_name.insert(port.as_str(), v);
                }
            }
            let mut vals = Vec::new();
            for p in desc.in_ports() {
                let v = by_name.remove(p.name.as_str()).ok_or_else(|| {
                    Error::fault(
                        ErrorCode::Unwired,
                        format!("IP port `{}.{}` is not wired", node_id, p.name),
                    )
                })?;
                vals.push(v);
            }
            let out_order: Vec<String> =
                desc.out_ports().iter().map(|p| p.name.clone()).collect();
            let key = format!("{}{}", ctx.path, node_id);
            let rt = ctx.ipin_state.entry(key).or_insert_with(|| IpRuntime::new(desc));
            let res = rt.tick(&vals);
            // Map descriptor-ordered results onto the node's out ports.
            let mut outs = vec![Value::Int32(0); c.nodes[i].out_names.len()];
            for (port, v) in out_order.iter().zip(res) {
                if let Some(ix) = c.nodes[i].out_names.iter().position(|p| p == port) {
                    outs[ix] = v;
                }
            }
            finish_firing(c, act, i, outs, ctx)
        }
        pure => {
            let vals: Vec<Value> =
                take_inputs(c, act, i).into_iter().map(|v| v.expect("wired")).collect();
            let outs = prims::fire_named(pure, &vals, &node_id)?;
            finish_firing(c, act, i, outs, ctx)
        }
    }
}

fn sample_code(v: &Value) -> i32 {
    match v {
        Value::Int32(x) => (*x).clamp(i16::MIN as i32, i16::MAX as i32),
        Value::Fxp(fx) => (fx.raw as i32).clamp(i16::MIN as i32, i16::MAX as i32),
        _ => 0,
    }
}

/// Ages and checks a blocked channel op. Timeouts are measured in simulated
/// ticks when time advances (co-simulation) and in scheduler rounds in pure
/// host runs.
fn timed_out(act: &mut Act, i: usize, timeout: Timeout, now: u64) -> bool {
    let limit = match timeout {
        Timeout::Infinite => {
            if !matches!(act.state[i], NState::BlockedChan { .. }) {
                act.state[i] = NState::BlockedChan { since: now, rounds: 0 };
            }
            return false;
        }
        Timeout::Ticks(t) => t,
    };
    match &mut act.state[i] {
        NState::BlockedChan { since, rounds } => {
            let waited_ticks = now.saturating_sub(*since);
            waited_ticks.max(*rounds) >= limit
        }
        st => {
            *st = NState::BlockedChan { since: now, rounds: 0 };
            limit == 0
        }
    }
}

fn fire_subvi(c: &Compiled, act: &mut Act, i: usize, ctx: &mut Ctx<'_, '_, '_>) -> Result<FireOut> {
    let body_c = c.nodes[i].bodies[0].clone();
    if matches!(act.state[i], NState::Idle) {
        let ins = take_inputs(c, act, i);
        let mut body = Act::new(&body_c);
        for (pi, name) in c.nodes[i].in_names.iter().enumerate() {
            let v = ins[pi].clone().expect("wired");
            if let Some(fan) = body_c.control_fan.get(name) {
                let fan = fan.clone();
                body.deposit(&fan, &v);
            }
        }
        act.state[i] = NState::Sub(Box::new(body));
    }
    let saved = ctx.path.clone();
    ctx.path = format!("{}{}/", ctx.path, c.nodes[i].id);
    let flow = {
        let NState::Sub(body) = &mut act.state[i] else { unreachable!() };
        run_act(&body_c, body, ctx)
    };
    ctx.path = saved;
    match flow? {
        Flow::Blocked => Ok(FireOut::Blocked),
        Flow::Quiescent => {
            let NState::Sub(body) = std::mem::replace(&mut act.state[i], NState::Idle) else {
                unreachable!()
            };
            ensure_complete(&body_c, &body, &format!("sub-VI `{}`", c.nodes[i].id))?;
            let mut outs = Vec::new();
            for (name, _, slot) in &body_c.indicator_slots {
                let v = body.slots[*slot].clone().ok_or_else(|| {
                    Error::fault(
                        ErrorCode::Deadlock,
                        format!(
                            "indicator `{}` of `{}` never received a token",
                            name, c.nodes[i].id
                        ),
                    )
                })?;
                outs.push(v);
            }
            finish_firing(c, act, i, outs, ctx)
        }
    }
}

fn fire_structure(
    c: &Compiled,
    act: &mut Act,
    i: usize,
    s: &StructureNode,
    ctx: &mut Ctx<'_, '_, '_>,
) -> Result<FireOut> {
    match s {
        StructureNode::For(f) => {
            if matches!(act.state[i], NState::Idle) {
                let ins = take_inputs(c, act, i);
                let trips = ins[0]
                    .as_ref()
                    .and_then(|v| v.as_i32())
                    .ok_or_else(|| Error::fault(ErrorCode::Runtime, "for loop N must be i32"))?;
                let trips = trips.max(0) as u32;
                let tunnels: Vec<Value> =
                    ins[1..].iter().map(|v| v.clone().expect("wired")).collect();
                act.state[i] = NState::For(Box::new(LoopState {
                    iter: 0,
                    trips,
                    carries: f.shift_regs.iter().map(|sr| sr.init.clone()).collect(),
                    tunnels,
                    last_outs: vec![None; c.nodes[i].bodies[0].indicator_slots.len()],
                    body: None,
                }));
            }
            advance_loop(c, act, i, ctx, false)
        }
        StructureNode::While(w) => {
            if matches!(act.state[i], NState::Idle) {
                let ins = take_inputs(c, act, i);
                let tunnels: Vec<Value> = ins.iter().map(|v| v.clone().expect("wired")).collect();
                act.state[i] = NState::While(Box::new(LoopState {
                    iter: 0,
                    trips: 0,
                    carries: w.shift_regs.iter().map(|sr| sr.init.clone()).collect(),
                    tunnels,
                    last_outs: vec![None; c.nodes[i].bodies[0].indicator_slots.len()],
                    body: None,
                }));
            }
            advance_loop(c, act, i, ctx, true)
        }
        StructureNode::Case(cs) => {
            if matches!(act.state[i], NState::Idle) {
                let ins = take_inputs(c, act, i);
                let sel = ins[0]
                    .as_ref()
                    .and_then(|v| v.as_i32())
                    .ok_or_else(|| Error::fault(ErrorCode::Runtime, "case selector must be i32"))?;
                let branch = cs
                    .cases
                    .iter()
                    .position(|(v, _)| *v == sel)
                    .unwrap_or(cs.cases.len()); // default branch index
                let body_c = &c.nodes[i].bodies[branch];
                let mut body = Act::new(body_c);
                for (pi, name) in c.nodes[i].in_names.iter().enumerate().skip(1) {
                    if let Some(fan) = body_c.control_fan.get(name) {
                        let fan = fan.clone();
                        let v = ins[pi].clone().expect("wired");
                        body.deposit(&fan, &v);
                    }
                }
                act.state[i] = NState::Case(Box::new(CaseState { branch, body }));
            }
            let branch = match &act.state[i] {
                NState::Case(cs_state) => cs_state.branch,
                _ => unreachable!(),
            };
            let body_c = c.nodes[i].bodies[branch].clone();
            let saved = ctx.path.clone();
            ctx.path = format!("{}{}/", ctx.path, c.nodes[i].id);
            let flow = {
                let NState::Case(cs_state) = &mut act.state[i] else { unreachable!() };
                run_act(&body_c, &mut cs_state.body, ctx)
            };
            ctx.path = saved;
            match flow? {
                Flow::Blocked => Ok(FireOut::Blocked),
                Flow::Quiescent => {
                    let NState::Case(done) = std::mem::replace(&mut act.state[i], NState::Idle)
                    else {
                        unreachable!()
                    };
                    ensure_complete(&body_c, &done.body, &format!("case `{}`", c.nodes[i].id))?;
                    let mut outs = Vec::new();
                    for (name, _, slot) in &body_c.indicator_slots {
                        let v = done.body.slots[*slot].clone().ok_or_else(|| {
                            Error::fault(
                                ErrorCode::Deadlock,
                                format!(
                                    "case `{}` branch left `{}` unfilled",
                                    c.nodes[i].id, name
                                ),
                            )
                        })?;
                        outs.push(v);
                    }
                    finish_firing(c, act, i, outs, ctx)
                }
            }
        }
        StructureNode::Sctl(sc) => {
            if matches!(act.state[i], NState::Idle) {
                act.state[i] = NState::SctlHost(Box::new(SctlHostState {
                    iter: 0,
                    total: ctx.cfg.sctl_iters,
                    carries: sc.shift_regs.iter().map(|sr| sr.init.clone()).collect(),
                    last_outs: vec![None; c.nodes[i].bodies[0].indicator_slots.len()],
                    body: None,
                }));
            }
            advance_sctl_host(c, act, i, sc, ctx)
        }
    }
}

/// Runs loop iterations until done or blocked. Shared by for and while.
fn advance_loop(
    c: &Compiled,
    act: &mut Act,
    i: usize,
    ctx: &mut Ctx<'_, '_, '_>,
    is_while: bool,
) -> Result<FireOut> {
    let body_c = c.nodes[i].bodies[0].clone();
    loop {
        // Start a new iteration or finish.
        let finish = {
            let st = match &mut act.state[i] {
                NState::For(st) | NState::While(st) => st,
                _ => unreachable!(),
            };
            if st.body.is_none() {
                let done = if is_while { false } else { st.iter >= st.trips };
                if done {
                    true
                } else {
                    st.body = Some(new_loop_body(&body_c, c, i, st));
                    false
                }
            } else {
                false
            }
        };
        if finish {
            let outs = {
                let st = match &act.state[i] {
                    NState::For(st) | NState::While(st) => st,
                    _ => unreachable!(),
                };
                loop_outputs(&body_c, st, &c.nodes[i].op)
            };
            return finish_firing(c, act, i, outs, ctx);
        }

        // Advance the body.
        let saved = ctx.path.clone();
        ctx.path = format!("{}{}/", ctx.path, c.nodes[i].id);
        let flow = {
            let st = match &mut act.state[i] {
                NState::For(st) | NState::While(st) => st,
                _ => unreachable!(),
            };
            run_act(&body_c, st.body.as_mut().unwrap(), ctx)
        };
        ctx.path = saved;

        match flow? {
            Flow::Blocked => return Ok(FireOut::Blocked),
            Flow::Quiescent => {
                let mut stop = false;
                {
                    let st = match &mut act.state[i] {
                        NState::For(st) | NState::While(st) => st,
                        _ => unreachable!(),
                    };
                    let body = st.body.take().unwrap();
                    ensure_complete(&body_c, &body, &format!("loop `{}`", c.nodes[i].id))?;
                    for (k, (_, _, slot)) in body_c.indicator_slots.iter().enumerate() {
                        if let Some(v) = &body.slots[*slot] {
                            st.last_outs[k] = Some(v.clone());
                        }
                    }
                    for (k, (_, slot)) in body_c.shiftreg_slots.iter().enumerate() {
                        if let Some(v) = &body.slots[*slot] {
                            st.carries[k] = v.clone();
                        }
                    }
                    if is_while {
                        let stop_slot = body_c.stop_slot.ok_or_else(|| {
                            Error::fault(ErrorCode::Deadlock, "while loop has no stop indicator")
                        })?;
                        stop = body.slots[stop_slot]
                            .as_ref()
                            .and_then(|v| v.as_bool())
                            .ok_or_else(|| {
                                Error::fault(
                                    ErrorCode::Deadlock,
                                    "while loop stop indicator never received a token",
                                )
                            })?;
                    }
                    st.iter += 1;
                }
                if stop {
                    let outs = {
                        let st = match &act.state[i] {
                            NState::While(st) => st,
                            _ => unreachable!(),
                        };
                        loop_outputs(&body_c, st, &c.nodes[i].op)
                    };
                    return finish_firing(c, act, i, outs, ctx);
                }
            }
        }
    }
}

fn new_loop_body(body_c: &Compiled, c: &Compiled, i: usize, st: &LoopState) -> Act {
    let mut body = Act::new(body_c);
    // Tunnels (body controls): same values every iteration. For a for-loop
    // the first in-port is N and is not a tunnel.
    let skip = match &c.nodes[i].op {
        NodeOp::Structure(s) if matches!(**s, StructureNode::For(_)) => 1,
        _ => 0,
    };
    for (k, name) in c.nodes[i].in_names.iter().skip(skip).enumerate() {
        if let Some(fan) = body_c.control_fan.get(name) {
            let fan = fan.clone();
            if let Some(v) = st.tunnels.get(k) {
                body.deposit(&fan, v);
            }
        }
    }
    // Shift register left terminals.
    let shiftreg_names: Vec<String> = match &c.nodes[i].op {
        NodeOp::Structure(s) => s.shift_regs().iter().map(|sr| sr.name.clone()).collect(),
        _ => Vec::new(),
    };
    for (k, name) in shiftreg_names.iter().enumerate() {
        if let Some(fan) = body_c.control_fan.get(name) {
            let fan = fan.clone();
            body.deposit(&fan, &st.carries[k]);
        }
    }
    // Implicit iteration index.
    let fan = body_c.index_fan.clone();
    body.deposit(&fan, &Value::Int32(st.iter as i32));
    body
}

fn loop_outputs(body_c: &Compiled, st: &LoopState, op: &NodeOp) -> Vec<Value> {
    let mut outs = Vec::new();
    let stop_name: Option<&str> = match op {
        NodeOp::Structure(s) => match &**s {
            StructureNode::While(w) => Some(w.stop_port.as_str()),
            _ => None,
        },
        _ => None,
    };
    for (k, (name, ty, _)) in body_c.indicator_slots.iter().enumerate() {
        if Some(name.as_str()) == stop_name {
            continue;
        }
        outs.push(st.last_outs[k].clone().unwrap_or_else(|| ty.default_value()));
    }
    outs.extend(st.carries.iter().cloned());
    outs
}

fn advance_sctl_host(
    c: &Compiled,
    act: &mut Act,
    i: usize,
    sc: &crate::ir::SctlLoop,
    ctx: &mut Ctx<'_, '_, '_>,
) -> Result<FireOut> {
    let body_c = c.nodes[i].bodies[0].clone();
    loop {
        let tunnel_ins = take_inputs(c, act, i);
        let finish = {
            let NState::SctlHost(st) = &mut act.state[i] else { unreachable!() };
            if st.body.is_none() {
                if st.iter >= st.total {
                    true
                } else {
                    // Latch params at the iteration boundary, seed carries
                    // and tunnels.
                    let mut body = Act::new(&body_c);
                    for p in &sc.params {
                        let v = match (&p.channel, ctx.env.comm.as_deref_mut()) {
                            (Some(ch), Some(comm)) => comm
                                .get_mut(ch)
                                .ok()
                                .map(|cst| cst.reg_read())
                                .and_then(|v| v.as_i32())
                                .unwrap_or(p.init),
                            _ => p.init,
                        };
                        if let Some(fan) = body_c.control_fan.get(&p.name) {
                            let fan = fan.clone();
                            body.deposit(&fan, &Value::Int32(v));
                        }
                    }
                    for (k, sr) in sc.shift_regs.iter().enumerate() {
                        if let Some(fan) = body_c.control_fan.get(&sr.name) {
                            let fan = fan.clone();
                            body.deposit(&fan, &st.carries[k]);
                        }
                    }
                    // Input tunnels hold the same token every iteration.
                    for (pi, name) in c.nodes[i].in_names.iter().enumerate() {
                        if let Some(fan) = body_c.control_fan.get(name) {
                            if sc.params.iter().any(|p| p.name == *name)
                                || sc.shift_regs.iter().any(|sr| sr.name == *name)
                            {
                                continue;
                            }
                            let fan = fan.clone();
                            if let Some(v) = tunnel_ins[pi].clone() {
                                body.deposit(&fan, &v);
                            }
                        }
                    }
                    st.body = Some(body);
                    false
                }
            } else {
                false
            }
        };
        if finish {
            let outs = {
                let NState::SctlHost(st) = &act.state[i] else { unreachable!() };
                let mut outs = Vec::new();
                for (k, (_, ty, _)) in body_c.indicator_slots.iter().enumerate() {
                    outs.push(st.last_outs[k].clone().unwrap_or_else(|| ty.default_value()));
                }
                outs.extend(st.carries.iter().cloned());
                outs
            };
            return finish_firing(c, act, i, outs, ctx);
        }

        let saved = ctx.path.clone();
        ctx.path = format!("{}{}/", ctx.path, c.nodes[i].id);
        let flow = {
            let NState::SctlHost(st) = &mut act.state[i] else { unreachable!() };
            run_act(&body_c, st.body.as_mut().unwrap(), ctx)
        };
        ctx.path = saved;

        match flow? {
            // Single-cycle channel ops poll, so bodies cannot block; treat a
            // block defensively as a suspension anyway.
            Flow::Blocked => return Ok(FireOut::Blocked),
            Flow::Quiescent => {
                let NState::SctlHost(st) = &mut act.state[i] else { unreachable!() };
                let body = st.body.take().unwrap();
                ensure_complete(&body_c, &body, &format!("single-cycle loop `{}`", c.nodes[i].id))?;
                for (k, (_, _, slot)) in body_c.indicator_slots.iter().enumerate() {
                    if let Some(v) = &body.slots[*slot] {
                        st.last_outs[k] = Some(v.clone());
                    }
                }
                for (k, (_, slot)) in body_c.shiftreg_slots.iter().enumerate() {
                    if let Some(v) = &body.slots[*slot] {
                        st.carries[k] = v.clone();
                    }
                }
                st.iter += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Top-level processes
// ---------------------------------------------------------------------------

/// A resumable host program execution for co-simulation.
pub struct HostProcess {
    compiled: Rc<Compiled>,
    act: Act,
    rng: ChaCha8Rng,
    cfg: ExecConfig,
    pub firings: u64,
    pub trace: FiringTrace,
    ipin_state: BTreeMap<String, IpRuntime>,
    read_hold: BTreeMap<String, Value>,
    finished: Option<BTreeMap<String, Value>>,
}

/// Result of one co-simulation host phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HostPhase {
    Done,
    Blocked,
}

impl HostProcess {
    pub fn new(
        d: &Diagram,
        project: Option<&Project>,
        inputs: &BTreeMap<String, Value>,
        cfg: ExecConfig,
    ) -> Result<HostProcess> {
        let compiled = Compiled::build(d, project)?;
        let mut act = Act::new(&compiled);
        for ctl in d.controls.iter().map(|p| &p.name) {
            match inputs.get(ctl) {
                Some(v) => {
                    let fan = compiled.control_fan.get(ctl).cloned().unwrap_or_default();
                    act.deposit(&fan, v);
                }
                None => {
                    return Err(Error::Check(vec![Diagnostic::new(
                        ErrorCode::Unwired,
                        format!("no input value supplied for control `{}`", ctl),
                    )]))
                }
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(HostProcess {
            compiled,
            act,
            rng,
            cfg,
            firings: 0,
            trace: FiringTrace::default(),
            ipin_state: BTreeMap::new(),
            read_hold: BTreeMap::new(),
            finished: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.finished.is_some()
    }

    pub fn outputs(&self) -> Option<&BTreeMap<String, Value>> {
        self.finished.as_ref()
    }

    /// Runs until the program finishes or every runnable path is blocked on
    /// a channel. Call once per simulated tick.
    pub fn phase(&mut self, env: &mut HostEnv<'_>) -> Result<HostPhase> {
        if self.finished.is_some() {
            return Ok(HostPhase::Done);
        }
        let mut ipin_state = std::mem::take(&mut self.ipin_state);
        let mut read_hold = std::mem::take(&mut self.read_hold);
        let mut ctx = Ctx {
            rng: self.rng.clone(),
            firings: self.firings,
            cfg: &self.cfg,
            trace: std::mem::take(&mut self.trace.records),
            env,
            ipin_state: &mut ipin_state,
            read_hold: &mut read_hold,
            path: String::new(),
        };
        let flow = run_act(&self.compiled, &mut self.act, &mut ctx);
        self.rng = ctx.rng.clone();
        self.firings = ctx.firings;
        self.trace.records = std::mem::take(&mut ctx.trace);
        self.ipin_state = ipin_state;
        self.read_hold = read_hold;
        match flow? {
            Flow::Blocked => Ok(HostPhase::Blocked),
            Flow::Quiescent => {
                let mut outputs = BTreeMap::new();
                for (name, _, slot) in &self.compiled.indicator_slots {
                    match &self.act.slots[*slot] {
                        Some(v) => {
                            outputs.insert(name.clone(), v.clone());
                        }
                        None => {
                            return Err(Error::fault(
                                ErrorCode::Deadlock,
                                format!("quiescent with unfilled indicator `{}`", name),
                            ))
                        }
                    }
                }
                self.finished = Some(outputs);
                Ok(HostPhase::Done)
            }
        }
    }

    /// Ages every blocked channel op by one scheduler round (pure host runs
    /// where no simulated clock advances). Returns whether any op is
    /// blocked, and whether any of them can ever expire.
    fn age_blocked(&mut self) -> (bool, bool) {
        fn finite(c: &Compiled, i: usize) -> bool {
            match &c.nodes[i].op {
                NodeOp::Prim(PrimOp::FifoRead { timeout, .. })
                | NodeOp::Prim(PrimOp::FifoWrite { timeout, .. }) => {
                    c.sctl_ctx || matches!(timeout, Timeout::Ticks(_))
                }
                _ => false,
            }
        }
        fn walk(c: &Compiled, act: &mut Act) -> (bool, bool) {
            let mut any = false;
            let mut expirable = false;
            for (i, st) in act.state.iter_mut().enumerate() {
                match st {
                    NState::BlockedChan { rounds, .. } => {
                        *rounds += 1;
                        any = true;
                        expirable |= finite(c, i);
                    }
                    NState::For(l) | NState::While(l) => {
                        if let Some(b) = &mut l.body {
                            let (a, f) = walk(&c.nodes[i].bodies[0], b);
                            any |= a;
                            expirable |= f;
                        }
                    }
                    NState::Case(cs) => {
                        let branch = cs.branch;
                        let (a, f) = walk(&c.nodes[i].bodies[branch], &mut cs.body);
                        any |= a;
                        expirable |= f;
                    }
                    NState::Sub(b) => {
                        let (a, f) = walk(&c.nodes[i].bodies[0], b);
                        any |= a;
                        expirable |= f;
                    }
                    NState::SctlHost(s) => {
                        if let Some(b) = &mut s.body {
                            let (a, f) = walk(&c.nodes[i].bodies[0], b);
                            any |= a;
                            expirable |= f;
                        }
                    }
                    NState::Idle => {}
                }
            }
            (any, expirable)
        }
        let compiled = self.compiled.clone();
        walk(&compiled, &mut self.act)
    }
}

/// Executes a diagram to completion under pure host semantics: inputs cover
/// all controls, outputs are the final indicator tokens.
pub fn run(
    d: &Diagram,
    project: Option<&Project>,
    inputs: &BTreeMap<String, Value>,
    cfg: &ExecConfig,
    env: &mut HostEnv<'_>,
) -> Result<RunOutput> {
    let mut proc = HostProcess::new(d, project, inputs, cfg.clone())?;
    loop {
        match proc.phase(env)? {
            HostPhase::Done => {
                let outputs = proc.finished.take().unwrap_or_default();
                return Ok(RunOutput { outputs, trace: proc.trace, firings: proc.firings });
            }
            HostPhase::Blocked => {
                // No clock advances here: age finite timeouts each round; a
                // block where nothing can ever expire is a deadlock.
                let (any, expirable) = proc.age_blocked();
                if !any || !expirable {
                    return Err(Error::fault(
                        ErrorCode::Deadlock,
                        "execution blocked on channels that can never complete",
                    ));
                }
            }
        }
    }
}

/// Drives a single-cycle loop body under host semantics one iteration at a
/// time, exposing the per-iteration indicator values. One call to [`step`]
/// corresponds to one fabric clock tick, which is what the host/fabric
/// equivalence law compares against.
///
/// [`step`]: SctlStepper::step
pub struct SctlStepper {
    body: Rc<Compiled>,
    sctl: crate::ir::SctlLoop,
    tunnels: BTreeMap<String, Value>,
    carries: Vec<Value>,
    rng: ChaCha8Rng,
    cfg: ExecConfig,
    firings: u64,
    ipin_state: BTreeMap<String, IpRuntime>,
    read_hold: BTreeMap<String, Value>,
    iter: u64,
}

impl SctlStepper {
    pub fn new(
        sctl: &crate::ir::SctlLoop,
        tunnels: BTreeMap<String, Value>,
        cfg: ExecConfig,
    ) -> Result<SctlStepper> {
        let cx = CompileCx { project: None };
        let body =
            compile_diagram(&sctl.body, &cx, &sctl.shift_regs, &sctl.params, None, true)?;
        Ok(SctlStepper {
            body,
            sctl: sctl.clone(),
            tunnels,
            carries: sctl.shift_regs.iter().map(|sr| sr.init.clone()).collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            firings: 0,
            ipin_state: BTreeMap::new(),
            read_hold: BTreeMap::new(),
            iter: 0,
        })
    }

    /// Runs one loop iteration; returns the body's indicator values.
    pub fn step(&mut self, env: &mut HostEnv<'_>) -> Result<BTreeMap<String, Value>> {
        let mut act = Act::new(&self.body);
        // Latch params at the iteration boundary.
        for p in &self.sctl.params {
            let v = match (&p.channel, env.comm.as_deref_mut()) {
                (Some(ch), Some(comm)) => comm
                    .get_mut(ch)
                    .ok()
                    .map(|cst| cst.reg_read())
                    .and_then(|v| v.as_i32())
                    .unwrap_or(p.init),
                _ => p.init,
            };
            if let Some(fan) = self.body.control_fan.get(&p.name) {
                let fan = fan.clone();
                act.deposit(&fan, &Value::Int32(v));
            }
        }
        for (k, sr) in self.sctl.shift_regs.iter().enumerate() {
            if let Some(fan) = self.body.control_fan.get(&sr.name) {
                let fan = fan.clone();
                act.deposit(&fan, &self.carries[k]);
            }
        }
        for (name, v) in &self.tunnels {
            if let Some(fan) = self.body.control_fan.get(name) {
                let fan = fan.clone();
                act.deposit(&fan, v);
            }
        }
        let mut ipin_state = std::mem::take(&mut self.ipin_state);
        let mut read_hold = std::mem::take(&mut self.read_hold);
        let mut ctx = Ctx {
            rng: self.rng.clone(),
            firings: self.firings,
            cfg: &self.cfg,
            trace: Vec::new(),
            env,
            ipin_state: &mut ipin_state,
            read_hold: &mut read_hold,
            path: String::new(),
        };
        let flow = run_act(&self.body, &mut act, &mut ctx);
        self.rng = ctx.rng.clone();
        self.firings = ctx.firings;
        self.ipin_state = ipin_state;
        self.read_hold = read_hold;
        match flow? {
            Flow::Quiescent => {}
            Flow::Blocked => {
                return Err(Error::fault(
                    ErrorCode::Deadlock,
                    "single-cycle body blocked; channel ops must poll",
                ))
            }
        }
        let mut outs = BTreeMap::new();
        for (name, ty, slot) in &self.body.indicator_slots {
            let v = act.slots[*slot].clone().unwrap_or_else(|| ty.default_value());
            outs.insert(name.clone(), v);
        }
        for (k, (name, slot)) in self.body.shiftreg_slots.iter().enumerate() {
            if let Some(v) = &act.slots[*slot] {
                self.carries[k] = v.clone();
            }
            let _ = name;
        }
        self.iter += 1;
        Ok(outs)
    }

    pub fn iterations(&self) -> u64 {
        self.iter
    }

    pub fn carries(&self) -> &[Value] {
        &self.carries
    }
}
