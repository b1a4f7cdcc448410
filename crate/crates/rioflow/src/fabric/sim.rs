//! Cycle-accurate simulation of compiled netlists, free-running CLIP blocks
//! and DAC models on one deterministic tick grid.
//!
//! Multiple clocks are scheduled on an integer grid running at the least
//! common multiple of all clock frequencies; a block on clock `f` evaluates
//! and latches at every grid tick divisible by `grid_hz / f`. Per tick the
//! order is fixed: deliver DMA arrivals, inject stimuli, evaluate due
//! netlists (in plan order) then CLIP blocks, commit channel/DAC writes,
//! latch registers, emit DAC samples, run the DMA engines. Identical plans
//! and stimuli therefore produce bitwise-identical traces.

use super::ip::{IpDescriptor, IpRuntime};
use super::{NetId, Netlist, Step};
use crate::comm::CommSet;
use crate::diag::{Error, ErrorCode, Result};
use crate::host::prims;
use crate::ir::{ChannelDecl, DacDecl};
use crate::scan::VirtualAo;
use crate::value::Value;
use serde::Serialize;
use std::collections::BTreeMap;

/// Pre-resolved external inputs: channel elements appear at the consumer
/// side at the given tick (bypassing DMA), pin values drive CLIP inputs
/// from the given tick on.
#[derive(Debug, Clone, Default)]
pub struct Stimuli {
    pub channel: Vec<(u64, String, Value)>,
    pub pins: Vec<(u64, String, Value)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransferDir {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferEvent {
    pub channel: String,
    pub dir: TransferDir,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TraceEvent {
    /// A fabric-side FIFO or DAC write was dropped because the buffer was
    /// full (drop-with-flag policy).
    Overflow { target: String, node: String },
    /// A DAC emission found its buffer empty and held the previous sample.
    Underrun { target: String },
}

/// One simulated tick: post-latch register values of the blocks that ticked,
/// CLIP pin samples, channel transfers, and policy events.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TickRecord {
    pub tick: u64,
    /// (signal table index, value) pairs.
    pub regs: Vec<(usize, Value)>,
    pub pins: Vec<(usize, Value)>,
    pub transfers: Vec<TransferEvent>,
    pub events: Vec<TraceEvent>,
}

/// Full trace of a simulation: one record per simulated tick.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TickTrace {
    pub signals: Vec<String>,
    pub ticks: Vec<TickRecord>,
}

/// Receives per-tick records; lets long co-simulations stream instead of
/// retaining everything.
pub trait TickSink {
    fn on_signals(&mut self, _signals: &[String], _types: &[crate::value::WireType]) {}
    fn on_tick(&mut self, rec: TickRecord);
}

/// Collects the whole trace in memory.
#[derive(Default)]
pub struct CollectSink {
    pub trace: TickTrace,
}

impl TickSink for CollectSink {
    fn on_signals(&mut self, signals: &[String], _types: &[crate::value::WireType]) {
        self.trace.signals = signals.to_vec();
    }
    fn on_tick(&mut self, rec: TickRecord) {
        self.trace.ticks.push(rec);
    }
}

/// Drops everything (summary-only runs).
pub struct NullSink;

impl TickSink for NullSink {
    fn on_tick(&mut self, _rec: TickRecord) {}
}

// ---------------------------------------------------------------------------
// Netlist simulation state
// ---------------------------------------------------------------------------

/// Pending end-of-tick effect captured during evaluation.
enum Pending {
    Fifo { channel: String, v: Value },
    Reg { channel: String, v: Value },
    Ao { dac: String, code: i32 },
}

/// Live state of one netlist: current net values plus per-step hold state.
pub struct NetlistSim {
    pub netlist: Netlist,
    values: Vec<Value>,
    /// Last successfully read value per FifoRead step.
    read_hold: BTreeMap<usize, Value>,
    ipin_rt: BTreeMap<usize, IpRuntime>,
    /// Signal-table ids of registers then params (parallel vectors).
    reg_sig: Vec<usize>,
    param_sig: Vec<usize>,
}

impl NetlistSim {
    pub fn new(netlist: Netlist, ipins: &BTreeMap<String, IpDescriptor>) -> Result<NetlistSim> {
        let mut values: Vec<Value> =
            netlist.net_types.iter().map(|t| t.default_value()).collect();
        for (net, v) in &netlist.consts {
            values[*net] = v.clone();
        }
        for reg in &netlist.registers {
            values[reg.out] = reg.init.clone();
        }
        for p in &netlist.params {
            values[p.out] = Value::Int32(p.init);
        }
        let mut ipin_rt = BTreeMap::new();
        for (si, step) in netlist.steps.iter().enumerate() {
            if let Step::Ipin { name, .. } = step {
                let desc = ipins.get(name).ok_or_else(|| {
                    Error::fault(ErrorCode::IpSchema, format!("IP `{}` is not imported", name))
                })?;
                ipin_rt.insert(si, IpRuntime::new(desc.clone()));
            }
        }
        Ok(NetlistSim {
            netlist,
            values,
            read_hold: BTreeMap::new(),
            ipin_rt,
            reg_sig: Vec::new(),
            param_sig: Vec::new(),
        })
    }

    pub fn register_value(&self, name: &str) -> Option<&Value> {
        self.netlist.registers.iter().find(|r| r.name == name).map(|r| &self.values[r.out])
    }

    fn truthy(&self, net: Option<NetId>) -> bool {
        net.map(|n| matches!(self.values[n], Value::Bool(true))).unwrap_or(true)
    }

    /// Sample inputs and evaluate all combinational logic for one tick.
    fn eval(
        &mut self,
        comm: &mut CommSet,
        aos: &mut BTreeMap<String, VirtualAo>,
        pending: &mut Vec<Pending>,
        rec: &mut TickRecord,
    ) -> Result<()> {
        // Params sample their bound register channels at the tick boundary.
        for p in &self.netlist.params {
            if let Some(ch) = &p.channel {
                let v = comm.get_mut(ch)?.reg_read();
                self.values[p.out] = match v.as_i32() {
                    Some(i) => Value::Int32(i),
                    None => Value::Int32(p.init),
                };
            }
        }

        for si in 0..self.netlist.steps.len() {
            let step = self.netlist.steps[si].clone();
            match &step {
                Step::Comb { node, op, ins, out } => {
                    let args: Vec<Value> = ins.iter().map(|&n| self.values[n].clone()).collect();
                    let outs = prims::fire_named(op, &args, node)?;
                    self.values[*out] = outs.into_iter().next().ok_or_else(|| {
                        Error::fault(ErrorCode::Runtime, format!("`{}` produced nothing", node))
                    })?;
                }
                Step::SelectByValue { sel, arms, default, out, .. } => {
                    let sel_v = self.values[*sel].as_i32().unwrap_or(0);
                    let src = arms
                        .iter()
                        .find(|(v, _)| *v == sel_v)
                        .map(|(_, n)| *n)
                        .unwrap_or(*default);
                    self.values[*out] = self.values[src].clone();
                }
                Step::FifoRead { channel, en, out_v, out_ok, .. } => {
                    let enabled = self.truthy(*en);
                    let got = if enabled { comm.get_mut(channel)?.try_read() } else { None };
                    match got {
                        Some(v) => {
                            rec.transfers.push(TransferEvent {
                                channel: channel.clone(),
                                dir: TransferDir::Read,
                                value: v.clone(),
                            });
                            self.read_hold.insert(si, v.clone());
                            self.values[*out_v] = v;
                            self.values[*out_ok] = Value::Bool(true);
                        }
                        None => {
                            // Hold the last read value, like a FIFO dout.
                            if let Some(h) = self.read_hold.get(&si) {
                                self.values[*out_v] = h.clone();
                            }
                            self.values[*out_ok] = Value::Bool(false);
                        }
                    }
                }
                Step::FifoWrite { node, channel, v, en, out_ok } => {
                    let enabled = self.truthy(*en);
                    let ok = if enabled {
                        let ch = comm.get_mut(channel)?;
                        if ch.reserve_write() {
                            pending.push(Pending::Fifo {
                                channel: channel.clone(),
                                v: self.values[*v].clone(),
                            });
                            true
                        } else {
                            rec.events.push(TraceEvent::Overflow {
                                target: channel.clone(),
                                node: node.clone(),
                            });
                            false
                        }
                    } else {
                        false
                    };
                    self.values[*out_ok] = Value::Bool(ok);
                }
                Step::RegRead { channel, out, .. } => {
                    self.values[*out] = comm.get_mut(channel)?.reg_read();
                }
                Step::RegWrite { channel, v, en, .. } => {
                    if self.truthy(*en) {
                        pending.push(Pending::Reg {
                            channel: channel.clone(),
                            v: self.values[*v].clone(),
                        });
                    }
                }
                Step::AoReady { dac, out, .. } => {
                    let rdy = aos.get(dac).map(|a| a.has_space()).unwrap_or(false);
                    self.values[*out] = Value::Bool(rdy);
                }
                Step::AoWrite { node, dac, v, en, out_ok } => {
                    let enabled = self.truthy(*en);
                    let ok = if enabled {
                        match aos.get_mut(dac) {
                            Some(ao) => {
                                if ao.reserve() {
                                    pending.push(Pending::Ao {
                                        dac: dac.clone(),
                                        code: value_code(&self.values[*v]),
                                    });
                                    true
                                } else {
                                    rec.events.push(TraceEvent::Overflow {
                                        target: dac.clone(),
                                        node: node.clone(),
                                    });
                                    false
                                }
                            }
                            None => false,
                        }
                    } else {
                        false
                    };
                    self.values[*out_ok] = Value::Bool(ok);
                }
                Step::Ipin { ins, outs, .. } => {
                    let args: Vec<Value> = ins.iter().map(|&n| self.values[n].clone()).collect();
                    let rt = self.ipin_rt.get_mut(&si).expect("runtime built");
                    let res = rt.tick(&args);
                    for (o, v) in outs.iter().zip(res) {
                        self.values[*o] = v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Latch boundary registers and record their post-latch values.
    fn latch(&mut self, rec: &mut TickRecord) {
        let next: Vec<Option<Value>> = self
            .netlist
            .registers
            .iter()
            .map(|r| r.next.map(|n| self.values[n].clone()))
            .collect();
        for (ri, reg) in self.netlist.registers.iter().enumerate() {
            if let Some(v) = &next[ri] {
                self.values[reg.out] = v.clone();
            }
            rec.regs.push((self.reg_sig[ri], self.values[reg.out].clone()));
        }
        for (pi, p) in self.netlist.params.iter().enumerate() {
            rec.regs.push((self.param_sig[pi], self.values[p.out].clone()));
        }
    }
}

fn value_code(v: &Value) -> i32 {
    match v {
        Value::Int32(x) => (*x).clamp(i16::MIN as i32, i16::MAX as i32),
        Value::Fxp(fx) => (fx.raw as i32).clamp(i16::MIN as i32, i16::MAX as i32),
        Value::Bool(b) => *b as i32,
        _ => 0,
    }
}

// ---------------------------------------------------------------------------
// CLIP state
// ---------------------------------------------------------------------------

/// A free-running CLIP block bound to its own clock.
pub struct ClipSim {
    pub name: String,
    rt: IpRuntime,
    in_pins: Vec<String>,
    out_pins: Vec<String>,
    out_sig: Vec<usize>,
}

impl ClipSim {
    pub fn new(name: &str, desc: &IpDescriptor) -> ClipSim {
        ClipSim {
            name: name.to_string(),
            in_pins: desc.in_ports().iter().map(|p| p.name.clone()).collect(),
            out_pins: desc.out_ports().iter().map(|p| p.name.clone()).collect(),
            rt: IpRuntime::new(desc.clone()),
            out_sig: Vec::new(),
        }
    }

    fn step(&mut self, pin_values: &BTreeMap<String, Value>, rec: &mut TickRecord) {
        let ins: Vec<Value> = self
            .in_pins
            .iter()
            .map(|p| {
                pin_values
                    .get(&format!("{}.{}", self.name, p))
                    .cloned()
                    .unwrap_or(Value::Int32(0))
            })
            .collect();
        let outs = self.rt.tick(&ins);
        for ((sig, _pin), v) in self.out_sig.iter().zip(&self.out_pins).zip(outs) {
            rec.pins.push((*sig, v));
        }
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm_all(freqs: &[u64]) -> Result<u64> {
    let mut acc: u64 = 1;
    for &f in freqs {
        if f == 0 {
            return Err(Error::fault(ErrorCode::Type, "clock frequency must be > 0"));
        }
        let g = gcd(acc, f);
        let l = (acc as u128 / g as u128) * f as u128;
        if l > u64::MAX as u128 {
            return Err(Error::fault(
                ErrorCode::Type,
                "clock frequencies have no representable common grid",
            ));
        }
        acc = l as u64;
    }
    Ok(acc)
}

/// Everything needed to run the fabric side standalone.
#[derive(Debug, Clone)]
pub struct FabricPlan {
    pub netlists: Vec<Netlist>,
    /// (instance name, descriptor, clock Hz) per free-running CLIP.
    pub clips: Vec<(String, IpDescriptor, u64)>,
    pub channels: Vec<ChannelDecl>,
    /// (declaration, bound clock Hz) per DAC.
    pub dacs: Vec<(DacDecl, u64)>,
}

/// The live fabric engine. Co-simulation drives it one grid tick at a time;
/// [`simulate`] wraps it for stimuli-driven standalone runs.
pub struct FabricEngine {
    pub grid_hz: u64,
    pub netlists: Vec<(NetlistSim, u64)>,
    pub clips: Vec<(ClipSim, u64)>,
    pub aos: BTreeMap<String, VirtualAo>,
    ao_div: BTreeMap<String, u64>,
    ao_sig: BTreeMap<String, usize>,
    pub pin_values: BTreeMap<String, Value>,
    pub signals: Vec<String>,
    pub signal_types: Vec<crate::value::WireType>,
}

impl FabricEngine {
    pub fn build(plan: &FabricPlan, ipins: &BTreeMap<String, IpDescriptor>) -> Result<FabricEngine> {
        let mut freqs: Vec<u64> = plan.netlists.iter().map(|n| n.clock_hz).collect();
        freqs.extend(plan.clips.iter().map(|(_, _, hz)| *hz));
        freqs.extend(plan.dacs.iter().map(|(_, hz)| *hz));
        if freqs.is_empty() {
            freqs.push(1);
        }
        let grid_hz = lcm_all(&freqs)?;

        let mut signals: Vec<String> = Vec::new();
        let mut signal_types: Vec<crate::value::WireType> = Vec::new();
        let mut netlists = Vec::new();
        for n in &plan.netlists {
            let div = grid_hz / n.clock_hz;
            let mut sim = NetlistSim::new(n.clone(), ipins)?;
            for reg in &sim.netlist.registers {
                signals.push(format!("{}.{}", sim.netlist.name, reg.name));
                signal_types.push(reg.ty.clone());
                sim.reg_sig.push(signals.len() - 1);
            }
            for p in &sim.netlist.params {
                signals.push(format!("{}.{}", sim.netlist.name, p.name));
                signal_types.push(crate::value::WireType::Int32);
                sim.param_sig.push(signals.len() - 1);
            }
            netlists.push((sim, div));
        }
        let mut clips = Vec::new();
        for (name, desc, hz) in &plan.clips {
            if desc.style != super::ip::IpStyle::Clip {
                return Err(Error::fault(
                    ErrorCode::IpSchema,
                    format!("`{}` is not a CLIP descriptor", desc.name),
                ));
            }
            let div = grid_hz / hz;
            let mut sim = ClipSim::new(name, desc);
            for (pin, port) in sim.out_pins.clone().iter().zip(desc.out_ports()) {
                signals.push(format!("{}.{}", name, pin));
                signal_types.push(port.ty.clone());
                sim.out_sig.push(signals.len() - 1);
            }
            clips.push((sim, div));
        }
        let mut aos = BTreeMap::new();
        let mut ao_div = BTreeMap::new();
        let mut ao_sig = BTreeMap::new();
        for (decl, hz) in &plan.dacs {
            let div = grid_hz / hz;
            signals.push(decl.name.clone());
            signal_types.push(crate::value::WireType::Int32);
            ao_sig.insert(decl.name.clone(), signals.len() - 1);
            ao_div.insert(decl.name.clone(), div);
            aos.insert(decl.name.clone(), VirtualAo::new(decl.clone(), *hz));
        }
        Ok(FabricEngine {
            grid_hz,
            netlists,
            clips,
            aos,
            ao_div,
            ao_sig,
            pin_values: BTreeMap::new(),
            signals,
            signal_types,
        })
    }

    /// One grid tick of the fabric side (phases: evaluate due netlists,
    /// then CLIPs; commit writes; latch; emit DAC samples). DMA delivery
    /// and dispatch are the caller's phases around this.
    pub fn tick(&mut self, t: u64, comm: &mut CommSet, rec: &mut TickRecord) -> Result<()> {
        let mut pending: Vec<Pending> = Vec::new();
        let mut due: Vec<usize> = Vec::new();
        for (i, (sim, div)) in self.netlists.iter_mut().enumerate() {
            if t.is_multiple_of(*div) {
                sim.eval(comm, &mut self.aos, &mut pending, rec)?;
                due.push(i);
            }
        }
        for (clip, div) in self.clips.iter_mut() {
            if t.is_multiple_of(*div) {
                clip.step(&self.pin_values, rec);
            }
        }
        // Commit writes after every read of this tick.
        for p in pending {
            match p {
                Pending::Fifo { channel, v } => {
                    rec.transfers.push(TransferEvent {
                        channel: channel.clone(),
                        dir: TransferDir::Write,
                        value: v.clone(),
                    });
                    comm.get_mut(&channel)?.commit_reserved(v);
                }
                Pending::Reg { channel, v } => comm.get_mut(&channel)?.reg_write(v),
                Pending::Ao { dac, code } => {
                    if let Some(ao) = self.aos.get_mut(&dac) {
                        ao.commit(code);
                    }
                }
            }
        }
        for &i in &due {
            self.netlists[i].0.latch(rec);
        }
        // DAC emissions happen on the DAC's own clock grid.
        for (name, ao) in self.aos.iter_mut() {
            let div = self.ao_div[name];
            if t.is_multiple_of(div) {
                let clock_tick = t / div;
                let before = ao.underruns;
                if let Some(code) = ao.emit(clock_tick) {
                    rec.pins.push((self.ao_sig[name], Value::Int32(code as i32)));
                    if ao.underruns > before {
                        rec.events.push(TraceEvent::Underrun { target: name.clone() });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs the fabric side standalone under pre-resolved stimuli for `nticks`
/// grid ticks, producing one record per tick. Deterministic: identical
/// plans and stimuli give bitwise-identical traces.
pub fn simulate(
    plan: &FabricPlan,
    ipins: &BTreeMap<String, IpDescriptor>,
    stimuli: &Stimuli,
    nticks: u64,
) -> Result<TickTrace> {
    let mut sink = CollectSink::default();
    simulate_into(plan, ipins, stimuli, nticks, &mut sink)?;
    Ok(sink.trace)
}

pub fn simulate_into(
    plan: &FabricPlan,
    ipins: &BTreeMap<String, IpDescriptor>,
    stimuli: &Stimuli,
    nticks: u64,
    sink: &mut dyn TickSink,
) -> Result<()> {
    let mut engine = FabricEngine::build(plan, ipins)?;
    let mut comm = CommSet::create(&plan.channels, &BTreeMap::new())?;

    let mut chan_stim = stimuli.channel.clone();
    chan_stim.sort_by_key(|(t, _, _)| *t);
    let mut pin_stim = stimuli.pins.clone();
    pin_stim.sort_by_key(|(t, _, _)| *t);
    let mut ci = 0usize;
    let mut pi = 0usize;

    sink.on_signals(&engine.signals, &engine.signal_types);
    for t in 0..nticks {
        let mut rec = TickRecord { tick: t, ..Default::default() };
        comm.deliver_all(t);
        while ci < chan_stim.len() && chan_stim[ci].0 == t {
            let (_, ch, v) = &chan_stim[ci];
            comm.get_mut(ch)?.inject(v.clone());
            ci += 1;
        }
        while pi < pin_stim.len() && pin_stim[pi].0 == t {
            let (_, pin, v) = &pin_stim[pi];
            engine.pin_values.insert(pin.clone(), v.clone());
            pi += 1;
        }
        engine.tick(t, &mut comm, &mut rec)?;
        comm.dispatch_all(t);
        sink.on_tick(rec);
    }
    Ok(())
}
