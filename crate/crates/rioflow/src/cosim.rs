//! Co-execution of the host program and the fabric on one deterministic
//! tick grid.
//!
//! Per grid tick, in fixed order: DMA arrivals become readable, stimuli
//! inject, the scan engine runs if its period elapsed, the fabric evaluates
//! and latches (netlists then CLIPs, reads before write commits), DAC
//! samples emit, the host program runs until it blocks or finishes, and the
//! DMA engines pick up freshly staged writes. The host scheduler draws from
//! the seeded generator, so a manifest (seed included) fully determines the
//! run.

use crate::comm::{ChannelStats, CommSet, DmaModel};
use crate::diag::Result;
use crate::elaborate::{DepthTable, Elaborated};
use crate::fabric::ip::IpDescriptor;
use crate::fabric::sim::{FabricEngine, Stimuli, TickRecord, TickSink};
use crate::host::{ExecConfig, HostEnv, HostPhase, HostProcess};
use crate::ir::Project;
use crate::scan::{IoState, ScanEngine};
use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Everything a co-simulation needs beyond the elaborated design.
#[derive(Debug, Clone, Default)]
pub struct CosimInputs {
    pub controls: BTreeMap<String, Value>,
    pub pcm: BTreeMap<String, Arc<Vec<f64>>>,
    pub stimuli: Stimuli,
    /// Raw scan input codes: (tick, channel, code).
    pub scan_stimulus: Vec<(u64, String, i32)>,
    pub dma_overrides: BTreeMap<String, DmaModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AoSummary {
    pub emissions: u64,
    pub underruns: u64,
    pub ticks_per_sample: u64,
    /// True when every emission delta equals `ticks_per_sample` exactly.
    pub zero_jitter: bool,
}

/// Machine-readable run summary.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CosimSummary {
    pub ticks: u64,
    pub grid_hz: u64,
    pub firings: u64,
    pub host_done: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub host_outputs: Option<BTreeMap<String, String>>,
    /// Final post-latch values of every fabric register, `loop.reg`.
    pub final_registers: BTreeMap<String, String>,
    pub underruns: u64,
    pub overflows: u64,
    pub channels: BTreeMap<String, ChannelStats>,
    pub aos: BTreeMap<String, AoSummary>,
    pub scan_snapshots: u64,
    pub scan_overruns: u64,
}

/// A live co-simulation.
pub struct Cosim {
    pub engine: FabricEngine,
    pub comm: CommSet,
    pub host: HostProcess,
    pub scan: Option<ScanEngine>,
    pub io: IoState,
    /// (tick, channel, value) rows for every driven scan output.
    pub scan_log: Vec<(u64, String, String)>,
    scan_div: u64,
    scan_period_short: bool,
    ipins: BTreeMap<String, IpDescriptor>,
    pcm: BTreeMap<String, Arc<Vec<f64>>>,
    chan_stim: Vec<(u64, String, Value)>,
    pin_stim: Vec<(u64, String, Value)>,
    scan_stim: Vec<(u64, String, i32)>,
    overflows: u64,
}

impl Cosim {
    pub fn new(
        project: &Project,
        elab: &Elaborated,
        table: &DepthTable,
        ipins: &BTreeMap<String, IpDescriptor>,
        inputs: CosimInputs,
        cfg: ExecConfig,
    ) -> Result<Cosim> {
        let plan = crate::fabric::compile_plan(&elab.plan, project, table, ipins)?;
        let engine = FabricEngine::build(&plan, ipins)?;
        let comm = CommSet::create(&project.channels, &inputs.dma_overrides)?;
        let host =
            HostProcess::new(&elab.plan.host.diagram, Some(project), &inputs.controls, cfg)?;
        let (scan, scan_div, scan_period_short) = match &elab.plan.scan {
            Some(cfg_scan) => {
                let period_ticks =
                    (cfg_scan.period_us as u128 * engine.grid_hz as u128 / 1_000_000u128) as u64;
                // A period shorter than one grid tick cannot be honored:
                // every cycle is late and records an overrun.
                (Some(ScanEngine::new(cfg_scan.clone())), period_ticks.max(1), period_ticks == 0)
            }
            None => (None, 1, false),
        };
        let mut chan_stim = inputs.stimuli.channel;
        chan_stim.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        let mut pin_stim = inputs.stimuli.pins;
        pin_stim.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        let mut scan_stim = inputs.scan_stimulus;
        scan_stim.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        Ok(Cosim {
            engine,
            comm,
            host,
            scan,
            io: IoState::default(),
            scan_log: Vec::new(),
            scan_div,
            scan_period_short,
            ipins: ipins.clone(),
            pcm: inputs.pcm,
            chan_stim,
            pin_stim,
            scan_stim,
            overflows: 0,
        })
    }

    /// Runs `ticks` grid ticks and returns the summary. Records stream into
    /// `sink` as they happen.
    pub fn run(&mut self, ticks: u64, sink: &mut dyn TickSink) -> Result<CosimSummary> {
        sink.on_signals(&self.engine.signals, &self.engine.signal_types);
        let mut ci = 0usize;
        let mut pi = 0usize;
        let mut si = 0usize;

        for t in 0..ticks {
            let mut rec = TickRecord { tick: t, ..Default::default() };

            // 1. DMA arrivals become visible.
            self.comm.deliver_all(t);

            // 2. Stimulus injection.
            while ci < self.chan_stim.len() && self.chan_stim[ci].0 == t {
                let (_, ch, v) = &self.chan_stim[ci];
                self.comm.get_mut(ch)?.inject(v.clone());
                ci += 1;
            }
            while pi < self.pin_stim.len() && self.pin_stim[pi].0 == t {
                let (_, pin, v) = &self.pin_stim[pi];
                self.engine.pin_values.insert(pin.clone(), v.clone());
                pi += 1;
            }
            while si < self.scan_stim.len() && self.scan_stim[si].0 <= t {
                let (_, ch, raw) = &self.scan_stim[si];
                self.io.ai_raw.insert(ch.clone(), *raw);
                si += 1;
            }

            // 3. Scan engine at its period.
            if let Some(scan) = &mut self.scan {
                if t % self.scan_div == 0 {
                    if self.scan_period_short {
                        scan.record_overrun();
                    }
                    let snap = scan.scan_tick(&mut self.io);
                    for ch in &scan.cfg.channels {
                        if ch.dir == crate::ir::ScanDir::Out {
                            self.scan_log.push((
                                t,
                                ch.name.clone(),
                                snap.values[&ch.name].to_string(),
                            ));
                        }
                    }
                }
            }

            // 4. Fabric: evaluate, commit, latch, emit.
            self.engine.tick(t, &mut self.comm, &mut rec)?;
            for ev in &rec.events {
                if matches!(ev, crate::fabric::sim::TraceEvent::Overflow { .. }) {
                    self.overflows += 1;
                }
            }

            // 5. Host phase.
            if !self.host.is_done() {
                let mut env = HostEnv {
                    comm: Some(&mut self.comm),
                    scan: self.scan.as_mut(),
                    aos: Some(&mut self.engine.aos),
                    pcm: self.pcm.clone(),
                    ipins: self.ipins.clone(),
                    now: t,
                };
                match self.host.phase(&mut env)? {
                    HostPhase::Done | HostPhase::Blocked => {}
                }
            }

            // 6. DMA engines pick up staged writes.
            self.comm.dispatch_all(t);

            sink.on_tick(rec);
        }

        Ok(self.summary(ticks))
    }

    fn summary(&self, ticks: u64) -> CosimSummary {
        let mut final_registers = BTreeMap::new();
        for (sim, _) in &self.engine.netlists {
            for reg in &sim.netlist.registers {
                if let Some(v) = sim.register_value(&reg.name) {
                    final_registers
                        .insert(format!("{}.{}", sim.netlist.name, reg.name), v.to_string());
                }
            }
        }
        let mut channels = BTreeMap::new();
        let mut overflows = self.overflows;
        for (name, ch) in self.comm.iter() {
            channels.insert(name.clone(), ch.stats);
            overflows += ch.stats.overflow_drops;
        }
        let mut aos = BTreeMap::new();
        let mut underruns = 0;
        for (name, ao) in &self.engine.aos {
            let mut zero_jitter = true;
            for w in ao.emitted.windows(2) {
                if w[1].0 - w[0].0 != ao.ticks_per_sample {
                    zero_jitter = false;
                }
            }
            underruns += ao.underruns;
            aos.insert(
                name.clone(),
                AoSummary {
                    emissions: ao.emitted.len() as u64,
                    underruns: ao.underruns,
                    ticks_per_sample: ao.ticks_per_sample,
                    zero_jitter,
                },
            );
        }
        CosimSummary {
            ticks,
            grid_hz: self.engine.grid_hz,
            firings: self.host.firings,
            host_done: self.host.is_done(),
            host_outputs: self
                .host
                .outputs()
                .map(|o| o.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()),
            final_registers,
            underruns,
            overflows,
            channels,
            aos,
            scan_snapshots: self.scan.as_ref().map(|s| s.snapshots).unwrap_or(0),
            scan_overruns: self.scan.as_ref().map(|s| s.overruns).unwrap_or(0),
        }
    }
}


// ---------------------------------------------------------------------------
// Host mode: the development flow before fabric compilation
// ---------------------------------------------------------------------------

/// Runs the whole design under host semantics: single-cycle loop bodies
/// execute on the host interpreter (one iteration per tick), channels
/// transfer with zero latency, and DACs keep their tick schedule. This is
/// the migration flow (start on the host, move to the fabric later) and
/// for SCTL-legal projects its final values agree with co-simulation.
pub fn run_host_mode(
    project: &Project,
    elab: &Elaborated,
    inputs: CosimInputs,
    cfg: ExecConfig,
    ticks: u64,
    ipins: &BTreeMap<String, IpDescriptor>,
) -> Result<CosimSummary> {
    // Channels lose their boundary: everything lives on the host.
    let local_decls: Vec<crate::ir::ChannelDecl> = project
        .channels
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if let crate::ir::ChannelKind::Fifo { from, to, .. } = &mut c.kind {
                *from = crate::ir::Side::Host;
                *to = crate::ir::Side::Host;
            }
            c
        })
        .collect();
    let mut comm = CommSet::create(&local_decls, &BTreeMap::new())?;

    let mut aos: BTreeMap<String, crate::scan::VirtualAo> = BTreeMap::new();
    let mut ao_div: BTreeMap<String, u64> = BTreeMap::new();
    let mut freqs: Vec<u64> = elab.plan.fabric_loops.iter().map(|f| f.clock_hz).collect();
    for d in &project.dacs {
        freqs.push(crate::elaborate::resolve_clock(project, &d.clock));
    }
    if freqs.is_empty() {
        freqs.push(1);
    }
    let grid_hz = freqs.iter().fold(1u64, |a, &b| {
        let g = {
            fn gcd(a: u64, b: u64) -> u64 {
                if b == 0 {
                    a
                } else {
                    gcd(b, a % b)
                }
            }
            gcd(a, b)
        };
        a / g * b
    });
    for d in &project.dacs {
        let hz = crate::elaborate::resolve_clock(project, &d.clock);
        ao_div.insert(d.name.clone(), grid_hz / hz);
        aos.insert(d.name.clone(), crate::scan::VirtualAo::new(d.clone(), hz));
    }

    let mut scan = elab.plan.scan.as_ref().map(|c| ScanEngine::new(c.clone()));
    let scan_div = elab
        .plan
        .scan
        .as_ref()
        .map(|c| ((c.period_us as u128 * grid_hz as u128) / 1_000_000u128).max(1) as u64)
        .unwrap_or(1);
    let mut io = IoState::default();

    let mut host =
        HostProcess::new(&elab.plan.host.diagram, Some(project), &inputs.controls, cfg.clone())?;
    let mut steppers: Vec<(String, u64, crate::host::SctlStepper)> = Vec::new();
    for fl in &elab.plan.fabric_loops {
        let tunnels: BTreeMap<String, Value> = fl.tunnel_consts.clone();
        let stepper = crate::host::SctlStepper::new(&fl.sctl, tunnels, cfg.clone())?;
        steppers.push((fl.node_id.clone(), grid_hz / fl.clock_hz, stepper));
    }

    let mut chan_stim = inputs.stimuli.channel.clone();
    chan_stim.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let mut scan_stim = inputs.scan_stimulus.clone();
    scan_stim.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let mut ci = 0usize;
    let mut si = 0usize;

    let mut last_outs: BTreeMap<String, BTreeMap<String, Value>> = BTreeMap::new();
    for t in 0..ticks {
        while ci < chan_stim.len() && chan_stim[ci].0 == t {
            let (_, ch, v) = &chan_stim[ci];
            comm.get_mut(ch)?.inject(v.clone());
            ci += 1;
        }
        while si < scan_stim.len() && scan_stim[si].0 <= t {
            let (_, ch, raw) = &scan_stim[si];
            io.ai_raw.insert(ch.clone(), *raw);
            si += 1;
        }
        if let Some(scan) = &mut scan {
            if t % scan_div == 0 {
                scan.scan_tick(&mut io);
            }
        }
        for (loop_id, div, stepper) in steppers.iter_mut() {
            if t % *div == 0 {
                let mut env = HostEnv {
                    comm: Some(&mut comm),
                    scan: scan.as_mut(),
                    aos: Some(&mut aos),
                    pcm: inputs.pcm.clone(),
                    ipins: ipins.clone(),
                    now: t,
                };
                let outs = stepper.step(&mut env)?;
                last_outs.insert(loop_id.clone(), outs);
            }
        }
        for (name, ao) in aos.iter_mut() {
            let div = ao_div[name];
            if t % div == 0 {
                ao.emit(t / div);
            }
        }
        if !host.is_done() {
            let mut env = HostEnv {
                comm: Some(&mut comm),
                scan: scan.as_mut(),
                aos: Some(&mut aos),
                pcm: inputs.pcm.clone(),
                ipins: ipins.clone(),
                now: t,
            };
            host.phase(&mut env)?;
        }
    }

    let mut final_registers = BTreeMap::new();
    for (fl, (loop_id, _, stepper)) in elab.plan.fabric_loops.iter().zip(&steppers) {
        if let Some(outs) = last_outs.get(loop_id) {
            for (k, v) in outs {
                final_registers.insert(format!("{}.{}", loop_id, k), v.to_string());
            }
        }
        for (sr, v) in fl.sctl.shift_regs.iter().zip(stepper.carries()) {
            final_registers.insert(format!("{}.{}", loop_id, sr.name), v.to_string());
        }
    }
    let mut channels = BTreeMap::new();
    for (name, ch) in comm.iter() {
        channels.insert(name.clone(), ch.stats);
    }
    let mut ao_sum = BTreeMap::new();
    let mut underruns = 0;
    for (name, ao) in &aos {
        underruns += ao.underruns;
        ao_sum.insert(
            name.clone(),
            AoSummary {
                emissions: ao.emitted.len() as u64,
                underruns: ao.underruns,
                ticks_per_sample: ao.ticks_per_sample,
                zero_jitter: ao
                    .emitted
                    .windows(2)
                    .all(|w| w[1].0 - w[0].0 == ao.ticks_per_sample),
            },
        );
    }
    Ok(CosimSummary {
        ticks,
        grid_hz,
        firings: host.firings,
        host_done: host.is_done(),
        host_outputs: host
            .outputs()
            .map(|o| o.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()),
        final_registers,
        underruns,
        overflows: 0,
        channels,
        aos: ao_sum,
        scan_snapshots: scan.as_ref().map(|s| s.snapshots).unwrap_or(0),
        scan_overruns: scan.as_ref().map(|s| s.overruns).unwrap_or(0),
    })
}

#[cfg(test)]
mod scan_tests {
    use super::*;
    use crate::elaborate::elaborate;
    use crate::fabric::sim::NullSink;
    use crate::gtext::parse;

    #[test]
    fn scan_runs_at_its_period_and_logs_outputs() {
        let text = "\
top Main
clock fck 1000 Hz
scan 2000 us {
  in ai0: f64 units 0.5 0
  out ao0: f64 units 0.5 0
}
vi Main {
  indicator seen: f64
  node r: ScanRead ai0
  node w: ScanWrite ao0
  node k: Const f64 2.5
  wire k.out -> w.v
  wire r.v -> seen
  sctl idle clock fck {
  }
}
";
        let p = parse(text, "t").unwrap();
        let e = elaborate(&p, &BTreeMap::new(), &BTreeMap::new()).unwrap();
        // 1 kHz grid, 2000 us period: one scan every 2 ticks.
        let inputs = CosimInputs {
            scan_stimulus: vec![(0, "ai0".into(), 10), (5, "ai0".into(), 20)],
            ..Default::default()
        };
        let mut cosim = Cosim::new(
            &p,
            &e,
            &DepthTable::new(),
            &BTreeMap::new(),
            inputs,
            ExecConfig::default(),
        )
        .unwrap();
        let summary = cosim.run(10, &mut NullSink).unwrap();
        assert_eq!(summary.scan_snapshots, 5, "ticks 0,2,4,6,8");
        assert_eq!(summary.scan_overruns, 0);
        // Host saw an engineering-units value (raw * 0.5).
        let seen: f64 = summary.host_outputs.as_ref().unwrap()["seen"].parse().unwrap();
        assert!(seen == 5.0 || seen == 10.0, "raw 10 or 20 through gain 0.5, got {}", seen);
        // The staged host write was driven out and logged.
        assert!(cosim.scan_log.iter().any(|(_, ch, v)| ch == "ao0" && v == "2.5"));
        assert_eq!(cosim.io.ao_raw["ao0"], 5, "2.5 eng units / 0.5 gain = raw 5");
    }
}

#[cfg(test)]
mod host_mode_tests {
    use super::*;
    use crate::elaborate::elaborate;
    use crate::fabric::sim::NullSink;
    use crate::gtext::parse;

    const COUNTER: &str = "\
top Main
clock fck 1000000 Hz
vi Main {
  sctl s clock fck {
    shiftreg c: i32 init 0
    indicator out: i32
    node one: Const i32 1
    node inc: Add
    wire c -> inc.x
    wire one.out -> inc.y
    wire inc.sum -> c
    wire c -> out
  }
}
";

    /// The migration promise: host-mode and co-simulation agree on final
    /// values for SCTL-legal projects.
    #[test]
    fn host_mode_agrees_with_cosim_on_counter() {
        let p = parse(COUNTER, "t").unwrap();
        let e = elaborate(&p, &BTreeMap::new(), &BTreeMap::new()).unwrap();
        let ticks = 100;

        let mut cosim = Cosim::new(
            &p,
            &e,
            &DepthTable::new(),
            &BTreeMap::new(),
            CosimInputs::default(),
            ExecConfig { sctl_iters: ticks, ..Default::default() },
        )
        .unwrap();
        let a = cosim.run(ticks, &mut NullSink).unwrap();

        let b = run_host_mode(
            &p,
            &e,
            CosimInputs::default(),
            ExecConfig { sctl_iters: ticks, ..Default::default() },
            ticks,
            &BTreeMap::new(),
        )
        .unwrap();

        // Final register 99: the output register latched the pre-increment
        // count of the last tick.
        assert_eq!(a.final_registers["s.out"], "99");
        assert_eq!(b.final_registers["s.out"], "99");
        assert_eq!(a.final_registers["s.c"], b.final_registers["s.c"]);
    }
}
