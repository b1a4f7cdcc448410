//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its measured numbers.

use rioflow::comm::{ChannelState, DmaModel};
use rioflow::cosim::{Cosim, CosimInputs};
use rioflow::demo::{oracle_codes, run_demo, sine, DemoOptions};
use rioflow::elaborate::{check_sctl, elaborate, DepthTable, DiagramTypes, ScopeInfo, TypeEnv};
use rioflow::fabric::sim::{simulate, FabricPlan, NullSink, Stimuli};
use rioflow::fabric::{compile_sctl, estimate, step_resources, Netlist, Step};
use rioflow::gtext::{format_project, normalize, parse};
use rioflow::host::{run, ExecConfig, HostEnv, SctlStepper};
use rioflow::ir::{
    bport, nport, ChannelDecl, ChannelKind, Diagram, Node, NodeOp, Port, PrimOp, Project,
    ScanChannel, ScanConfig, ScanDir, SctlLoop, ShiftRegister, Side, Wire,
};
use rioflow::scan::{IoState, ScanEngine};
use rioflow::value::{Value, WireType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// Random diagram generator (valid by construction)
// ---------------------------------------------------------------------------

/// Sources available while growing a random diagram.
#[derive(Clone)]
struct Source {
    endpoint: rioflow::ir::Endpoint,
    ty: WireType,
}

/// Builds a random acyclic diagram of scalar primitives with every node
/// input wired and every indicator driven.
fn random_diagram(rng: &mut ChaCha8Rng, max_nodes: usize) -> (Diagram, BTreeMap<String, Value>) {
    let mut d = Diagram::default();
    let mut inputs = BTreeMap::new();
    let mut sources: Vec<Source> = Vec::new();

    let n_controls = rng.random_range(1..=3);
    for k in 0..n_controls {
        let name = format!("c{}", k);
        d.controls.push(Port { name: name.clone(), ty: WireType::Int32 });
        inputs.insert(name.clone(), Value::Int32(rng.random_range(-100..100)));
        sources.push(Source { endpoint: bport(name), ty: WireType::Int32 });
    }

    let n_nodes = rng.random_range(1..=max_nodes);
    for k in 0..n_nodes {
        let id = format!("n{:02}", k);
        let ints: Vec<Source> =
            sources.iter().filter(|s| s.ty == WireType::Int32).cloned().collect();
        let bools: Vec<Source> =
            sources.iter().filter(|s| s.ty == WireType::Bool).cloned().collect();
        let pick = |rng: &mut ChaCha8Rng, pool: &[Source]| pool[rng.random_range(0..pool.len())].clone();

        let choice = rng.random_range(0..8);
        let (op, wires, out_port, out_ty): (PrimOp, Vec<(Source, &str)>, &str, WireType) =
            match choice {
                0 => (PrimOp::Add, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "sum", WireType::Int32),
                1 => (PrimOp::Sub, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "diff", WireType::Int32),
                2 => (PrimOp::Mul, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "prod", WireType::Int32),
                3 => (PrimOp::Gt, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "res", WireType::Bool),
                4 => (PrimOp::Lt, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "res", WireType::Bool),
                5 if !bools.is_empty() => {
                    (PrimOp::Not, vec![(pick(rng, &bools), "x")], "res", WireType::Bool)
                }
                6 if !bools.is_empty() => (
                    PrimOp::Select,
                    vec![(pick(rng, &bools), "s"), (pick(rng, &ints), "t"), (pick(rng, &ints), "f")],
                    "res",
                    WireType::Int32,
                ),
                _ => (
                    PrimOp::Const(Value::Int32(rng.random_range(-50..50))),
                    vec![],
                    "out",
                    WireType::Int32,
                ),
            };
        d.nodes.push(Node::prim(id.clone(), op));
        for (src, port) in wires {
            d.wires.push(Wire::simple(src.endpoint, nport(id.clone(), port)));
        }
        sources.push(Source { endpoint: nport(id, out_port), ty: out_ty });
    }

    // Expose a few sources as indicators so outputs are observable.
    let n_ind = rng.random_range(1..=3.min(sources.len()));
    for k in 0..n_ind {
        let src = sources[rng.random_range(0..sources.len())].clone();
        let name = format!("y{}", k);
        d.indicators.push(Port { name: name.clone(), ty: src.ty.clone() });
        d.wires.push(Wire::simple(src.endpoint, bport(name)));
    }
    (d, inputs)
}

#[test]
fn criterion_1_determinacy_across_seeds() {
    let t0 = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD17A);
    let diagrams = 200;
    let seeds = 50;
    for case in 0..diagrams {
        let (d, inputs) = random_diagram(&mut rng, 12);
        let vi = rioflow::ir::ViGraph { name: format!("R{}", case), diagram: d.clone(), target: None };
        assert!(rioflow::ir::validate(&vi, None).is_empty(), "generator produced invalid diagram");
        let mut first: Option<BTreeMap<String, Value>> = None;
        for seed in 0..seeds {
            let cfg = ExecConfig { seed, ..Default::default() };
            let mut env = HostEnv::default();
            let out = run(&d, None, &inputs, &cfg, &mut env).expect("run");
            match &first {
                None => first = Some(out.outputs),
                Some(want) => assert_eq!(
                    want, &out.outputs,
                    "case {} diverged at seed {}",
                    case, seed
                ),
            }
        }
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs() < 60, "determinacy suite took {:?}", dt);
    println!(
        "PASS criterion 1: {} diagrams x {} seeds byte-identical in {:?}",
        diagrams, seeds, dt
    );
}

// ---------------------------------------------------------------------------
// Random single-cycle bodies
// ---------------------------------------------------------------------------

/// Builds a random fabric-legal loop body reading one FIFO. Every value is
/// observable through indicators; shift registers carry state.
fn random_sctl(rng: &mut ChaCha8Rng, max_ops: usize, with_fifo: bool) -> SctlLoop {
    let mut body = Diagram::default();
    let mut sources: Vec<Source> = Vec::new();
    let mut shift_regs = Vec::new();

    let n_regs = rng.random_range(1..=2);
    for k in 0..n_regs {
        let name = format!("r{}", k);
        shift_regs.push(ShiftRegister {
            name: name.clone(),
            ty: WireType::Int32,
            init: Value::Int32(rng.random_range(-10..10)),
        });
        sources.push(Source { endpoint: bport(name), ty: WireType::Int32 });
    }
    if with_fifo {
        body.nodes.push(Node::prim(
            "a_rd".to_string(),
            PrimOp::FifoRead { channel: "in".into(), timeout: rioflow::ir::Timeout::Ticks(0) },
        ));
        sources.push(Source { endpoint: nport("a_rd", "v"), ty: WireType::Int32 });
        sources.push(Source { endpoint: nport("a_rd", "ok"), ty: WireType::Bool });
    }

    let n_ops = rng.random_range(1..=max_ops);
    for k in 0..n_ops {
        let id = format!("n{:02}", k);
        let ints: Vec<Source> =
            sources.iter().filter(|s| s.ty == WireType::Int32).cloned().collect();
        let bools: Vec<Source> =
            sources.iter().filter(|s| s.ty == WireType::Bool).cloned().collect();
        let pick = |rng: &mut ChaCha8Rng, pool: &[Source]| pool[rng.random_range(0..pool.len())].clone();
        let choice = rng.random_range(0..8);
        let (op, wires, out_port, out_ty): (PrimOp, Vec<(Source, &str)>, &str, WireType) =
            match choice {
                0 => (PrimOp::Add, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "sum", WireType::Int32),
                1 => (PrimOp::Sub, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "diff", WireType::Int32),
                2 => (PrimOp::Mul, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "prod", WireType::Int32),
                3 => (PrimOp::Gt, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "res", WireType::Bool),
                4 => (PrimOp::Eq, vec![(pick(rng, &ints), "x"), (pick(rng, &ints), "y")], "res", WireType::Bool),
                5 if !bools.is_empty() => {
                    (PrimOp::Not, vec![(pick(rng, &bools), "x")], "res", WireType::Bool)
                }
                6 if !bools.is_empty() => (
                    PrimOp::Select,
                    vec![(pick(rng, &bools), "s"), (pick(rng, &ints), "t"), (pick(rng, &ints), "f")],
                    "res",
                    WireType::Int32,
                ),
                _ => (
                    PrimOp::Const(Value::Int32(rng.random_range(-20..20))),
                    vec![],
                    "out",
                    WireType::Int32,
                ),
            };
        body.nodes.push(Node::prim(id.clone(), op));
        for (src, port) in wires {
            body.wires.push(Wire::simple(src.endpoint, nport(id.clone(), port)));
        }
        sources.push(Source { endpoint: nport(id, out_port), ty: out_ty });
    }

    // Feed shift registers from random int sources.
    let ints: Vec<Source> = sources.iter().filter(|s| s.ty == WireType::Int32).cloned().collect();
    for sr in &shift_regs {
        let src = ints[rng.random_range(0..ints.len())].clone();
        body.wires.push(Wire::simple(src.endpoint, bport(sr.name.clone())));
    }
    // Observable outputs.
    let n_ind = rng.random_range(1..=2);
    for k in 0..n_ind {
        let src = ints[rng.random_range(0..ints.len())].clone();
        let name = format!("y{}", k);
        body.indicators.push(Port { name: name.clone(), ty: WireType::Int32 });
        body.wires.push(Wire::simple(src.endpoint, bport(name)));
    }

    SctlLoop { body, clock: "fck".into(), params: vec![], shift_regs }
}

fn in_channel_project() -> Project {
    let mut p = Project::default();
    p.channels.push(ChannelDecl {
        name: "in".into(),
        kind: ChannelKind::Fifo {
            elem: WireType::Int32,
            capacity: 4096,
            from: Side::Fabric,
            to: Side::Fabric,
        },
        span: None,
    });
    p
}

fn infer_sctl_types(sctl: &SctlLoop, project: &Project) -> DiagramTypes {
    let env = TypeEnv::new(project);
    let td = rioflow::elaborate::infer_types(
        &sctl.body,
        &env,
        ScopeInfo {
            shift_regs: &sctl.shift_regs,
            params: &sctl.params,
            stop_port: None,
            implicit_index: false,
        },
    )
    .expect("generated body types");
    td.types
}

#[test]
fn criterion_2_host_fabric_equivalence() {
    let t0 = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE01);
    let bodies = 100;
    let nticks = 1000u64;
    let project = in_channel_project();
    let table = DepthTable::new();
    // 100 MHz leaves room for deep random bodies; feasibility itself is
    // criterion 3's subject.
    let clock_hz = 100_000_000u64;

    for case in 0..bodies {
        let sctl = random_sctl(&mut rng, 10, true);
        let types = infer_sctl_types(&sctl, &project);
        let report = check_sctl("s", &sctl, clock_hz, &table, &BTreeMap::new()).unwrap();
        if !report.feasible {
            continue; // keep only single-cycle-legal bodies
        }
        let netlist = compile_sctl(
            "s",
            &sctl,
            clock_hz,
            &table,
            &BTreeMap::new(),
            &BTreeMap::new(),
            &types,
        )
        .expect("compile");

        // The stream has gaps (no element on every third tick), so failed
        // reads and held outputs are part of what must match.
        let arrival_ticks: Vec<u64> = (0..nticks).filter(|t| t % 3 != 2).collect();
        let inputs: Vec<i32> =
            (0..arrival_ticks.len() as i32).map(|k| k * 13 - 6000).collect();
        let plan = FabricPlan {
            netlists: vec![netlist],
            clips: vec![],
            channels: project.channels.clone(),
            dacs: vec![],
        };
        let stimuli = Stimuli {
            channel: arrival_ticks
                .iter()
                .zip(&inputs)
                .map(|(t, v)| (*t, "in".to_string(), Value::Int32(*v)))
                .collect(),
            pins: vec![],
        };
        let trace = simulate(&plan, &BTreeMap::new(), &stimuli, nticks).expect("simulate");

        // Indicator registers, per tick (post-latch).
        let ind_names: Vec<String> =
            sctl.body.indicators.iter().map(|p| format!("s.{}", p.name)).collect();
        let sigs: Vec<usize> = ind_names
            .iter()
            .map(|n| trace.signals.iter().position(|s| s == n).expect("signal"))
            .collect();
        let mut fabric_streams: Vec<Vec<Value>> = vec![Vec::new(); sigs.len()];
        for rec in &trace.ticks {
            for (k, sig) in sigs.iter().enumerate() {
                for (s, v) in &rec.regs {
                    if s == sig {
                        fabric_streams[k].push(v.clone());
                    }
                }
            }
        }

        // Host: same body, one iteration per tick, elements injected at the
        // same ticks the fabric saw them.
        let mut comm =
            rioflow::comm::CommSet::create(&project.channels, &BTreeMap::new()).unwrap();
        let mut stepper =
            SctlStepper::new(&sctl, BTreeMap::new(), ExecConfig::default()).expect("stepper");
        let mut host_streams: Vec<Vec<Value>> = vec![Vec::new(); sigs.len()];
        {
            let mut env = HostEnv { comm: Some(&mut comm), ..Default::default() };
            let mut next = 0usize;
            for t in 0..nticks {
                if next < arrival_ticks.len() && arrival_ticks[next] == t {
                    env.comm
                        .as_deref_mut()
                        .unwrap()
                        .get_mut("in")
                        .unwrap()
                        .inject(Value::Int32(inputs[next]));
                    next += 1;
                }
                let outs = stepper.step(&mut env).expect("step");
                for (k, p) in sctl.body.indicators.iter().enumerate() {
                    host_streams[k].push(outs[&p.name].clone());
                }
            }
        }
        assert_eq!(
            fabric_streams, host_streams,
            "case {}: fabric and host streams diverged",
            case
        );
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs() < 60, "equivalence suite took {:?}", dt);
    println!(
        "PASS criterion 2: {} random loop bodies, {} ticks each, streams bitwise equal in {:?}",
        bodies, nticks, dt
    );
}

#[test]
fn criterion_3_feasibility_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEA5);
    let table = DepthTable::new();
    let period_hz = 40_000_000; // 25 ns period
    let mut feasible = 0usize;
    let mut infeasible = 0usize;
    let cases = 250;
    for _ in 0..cases {
        let sctl = random_sctl(&mut rng, 8, false);
        if sctl.body.nodes.len() > 8 {
            continue;
        }
        let report = check_sctl("s", &sctl, period_hz, &table, &BTreeMap::new()).unwrap();

        // Oracle: exhaustive enumeration of every node-to-node path.
        let edges = rioflow::ir::node_edges(&sctl.body);
        fn dfs(
            i: usize,
            acc: f64,
            body: &Diagram,
            edges: &[(usize, usize)],
            table: &DepthTable,
            best: &mut f64,
        ) {
            let w = match &body.nodes[i].op {
                NodeOp::Prim(p) => table.depth_ns(p).unwrap_or(0.0),
                _ => 0.0,
            };
            let total = acc + w;
            if total > *best {
                *best = total;
            }
            for (s, t) in edges {
                if *s == i {
                    dfs(*t, total, body, edges, table, best);
                }
            }
        }
        let mut brute = 0f64;
        for i in 0..sctl.body.nodes.len() {
            dfs(i, 0.0, &sctl.body, &edges, &table, &mut brute);
        }
        assert!(
            (report.path_ns - brute).abs() < 1e-9,
            "longest path {} != brute force {}",
            report.path_ns,
            brute
        );
        let brute_feasible = brute <= 25.0;
        assert_eq!(report.feasible, brute_feasible, "verdict mismatch at path {}", brute);
        if report.feasible {
            feasible += 1;
        } else {
            infeasible += 1;
        }
    }
    assert!(feasible > 0 && infeasible > 0, "suite must exercise both verdicts");
    println!(
        "PASS criterion 3: {} bodies, longest path == exhaustive enumeration ({} feasible, {} infeasible at 40 MHz)",
        cases, feasible, infeasible
    );
}

#[test]
fn criterion_4_timing_replica() {
    let t0 = std::time::Instant::now();
    // 1 MHz fabric clock, 10k samples: every delta exactly 23, no underruns.
    let input = sine(1000.0, 44100.0, 0.5, 10_000);
    let opts = DemoOptions { input, ..Default::default() };
    let run = run_demo(&opts, &mut NullSink).expect("demo at 1 MHz");
    assert_eq!(run.report.ticks_per_sample, 23);
    assert_eq!(run.emissions.len(), 10_000);
    for w in run.emissions.windows(2) {
        assert_eq!(w[1].0 - w[0].0, 23, "jitter at tick {}", w[0].0);
    }
    assert_eq!(run.report.underruns, 0);

    // 40 MHz: deltas exactly 907 over >= 1000 samples.
    let input = sine(1000.0, 44100.0, 0.5, 1_100);
    let mut clock_overrides = BTreeMap::new();
    clock_overrides.insert("fck".to_string(), 40_000_000u64);
    let opts = DemoOptions { input, clock_overrides, ..Default::default() };
    let run40 = run_demo(&opts, &mut NullSink).expect("demo at 40 MHz");
    assert_eq!(run40.report.ticks_per_sample, 907);
    assert!(run40.emissions.len() >= 1000);
    for w in run40.emissions.windows(2) {
        assert_eq!(w[1].0 - w[0].0, 907);
    }
    assert_eq!(run40.report.underruns, 0);
    let dt = t0.elapsed();
    assert!(dt.as_secs() < 120, "timing replica took {:?}", dt);
    println!(
        "PASS criterion 4: 10k samples at delta 23 (1 MHz) and {} samples at delta 907 (40 MHz), 0 underruns, in {:?}",
        run40.emissions.len(),
        dt
    );
}

#[test]
fn criterion_5_signal_replica() {
    let input = sine(1000.0, 44100.0, 0.5, 10_000);
    let opts = DemoOptions { input: input.clone(), ..Default::default() };
    let run = run_demo(&opts, &mut NullSink).expect("demo");
    let want = oracle_codes(&input, [1.0, 1.0, 1.0]);
    assert_eq!(run.output.len(), want.len());
    let mut exact = 0usize;
    for (k, (got, want)) in run.output.iter().zip(&want).enumerate() {
        let delta = (*got as i32 - *want as i32).abs();
        assert!(delta <= 1, "sample {}: {} vs oracle {} ({} LSB)", k, got, want, delta);
        if delta == 0 {
            exact += 1;
        }
    }
    let frac = exact as f64 / want.len() as f64;
    assert!(frac >= 0.999, "only {:.4} of samples exact", frac);
    println!(
        "PASS criterion 5: {}/{} samples exact vs double-precision oracle, all within 1 LSB",
        exact,
        want.len()
    );
}

#[test]
fn criterion_6_fifo_linearizability() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1F0);
    let mut total_ops = 0u64;
    let mut runs = 0;
    while total_ops < 100_000 {
        runs += 1;
        let capacity = rng.random_range(1..=32usize);
        let decl = ChannelDecl {
            name: "c".into(),
            kind: ChannelKind::Fifo {
                elem: WireType::Int32,
                capacity,
                from: Side::Host,
                to: Side::Fabric,
            },
            span: None,
        };
        let model = DmaModel {
            base_ticks: rng.random_range(0..12),
            per_element_ticks: rng.random_range(1..3),
            burst: rng.random_range(1..6),
        };
        let mut ch = ChannelState::new(decl, Some(model)).unwrap();
        let mut next = 0i32;
        let mut read_back = Vec::new();
        let ticks = rng.random_range(100..400u64);
        for t in 0..ticks {
            ch.deliver(t);
            for _ in 0..rng.random_range(0..4) {
                if ch.try_write(Value::Int32(next)) {
                    next += 1;
                }
                total_ops += 1;
            }
            for _ in 0..rng.random_range(0..4) {
                if let Some(v) = ch.try_read() {
                    read_back.push(v);
                }
                total_ops += 1;
            }
            assert!(
                ch.occupancy() <= ch.capacity() + ch.in_flight(),
                "occupancy bound violated"
            );
            ch.dispatch(t);
        }
        // Drain what remains.
        for t in ticks..ticks + 1000 {
            ch.deliver(t);
            while let Some(v) = ch.try_read() {
                read_back.push(v);
            }
            ch.dispatch(t);
        }
        assert_eq!(read_back.len(), next as usize, "loss or duplication");
        for (k, v) in read_back.iter().enumerate() {
            assert_eq!(*v, Value::Int32(k as i32), "order violated at {}", k);
        }
    }
    println!(
        "PASS criterion 6: {} randomized interleaved ops across {} DMA FIFOs, order and occupancy preserved",
        total_ops, runs
    );
}

#[test]
fn criterion_7_scan_coherence() {
    let channels: Vec<ScanChannel> = (0..4)
        .map(|k| ScanChannel {
            name: format!("ai{}", k),
            dir: ScanDir::In,
            ty: WireType::Float64,
            gain: 1.0,
            offset: 0.0,
        })
        .collect();
    let mut eng = ScanEngine::new(ScanConfig { period_us: 100, channels });
    let mut io = IoState::default();
    let scans = 10_000;
    let mut last_index = None;
    let mut t = 0i64;
    for _ in 0..scans {
        // The stimulus ramps every tick; several ticks pass between scans.
        for _ in 0..3 {
            t += 1;
            for k in 0..4 {
                io.ai_raw.insert(format!("ai{}", k), (t + 1000 * k) as i32);
            }
        }
        let snap = eng.scan_tick(&mut io);
        // Coherence: all four values must decode to the same source tick.
        let t0 = snap.values["ai0"].as_f64().unwrap() as i64;
        for k in 1..4 {
            let tk = snap.values[&format!("ai{}", k)].as_f64().unwrap() as i64 - 1000 * k;
            assert_eq!(tk, t0, "snapshot {} mixes scan cycles", snap.index);
        }
        if let Some(prev) = last_index {
            assert_eq!(snap.index, prev + 1, "scan indices not consecutive");
        }
        last_index = Some(snap.index);
    }
    println!("PASS criterion 7: {} scans, zero mixed-cycle snapshots, indices strictly consecutive", scans);
}

#[test]
fn criterion_8_resource_additivity_and_table_lookup() {
    let table = DepthTable::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0E57);
    let project = in_channel_project();

    // Independent oracle: sum the declared table rows per step and register.
    let oracle = |n: &Netlist| {
        let mut want = rioflow::fabric::ResourceEstimate::default();
        for step in &n.steps {
            want = want + step_resources(n, step, &table);
        }
        for reg in &n.registers {
            want = want + table.register_ff(reg.ty.width_bits());
        }
        for _ in &n.params {
            want = want + table.register_ff(32);
        }
        want
    };

    let mut netlists = Vec::new();
    for _ in 0..40 {
        let sctl = random_sctl(&mut rng, 8, true);
        let types = infer_sctl_types(&sctl, &project);
        let report = check_sctl("s", &sctl, 100_000_000, &table, &BTreeMap::new()).unwrap();
        if !report.feasible {
            continue;
        }
        let n = compile_sctl(
            "s",
            &sctl,
            100_000_000,
            &table,
            &BTreeMap::new(),
            &BTreeMap::new(),
            &types,
        )
        .unwrap();
        assert_eq!(estimate(&n, &table), oracle(&n), "table lookup mismatch");
        netlists.push(n);
    }
    assert!(netlists.len() >= 20);
    // Additivity across every adjacent pair (disjoint union = concatenation
    // of parts, net ids offset).
    for pair in netlists.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let mut union = a.clone();
        let off = union.net_types.len();
        union.net_types.extend(b.net_types.iter().cloned());
        for s in &b.steps {
            union.steps.push(offset_step(s, off));
        }
        for r in &b.registers {
            let mut r2 = r.clone();
            r2.out += off;
            r2.next = r.next.map(|n| n + off);
            union.registers.push(r2);
        }
        for p in &b.params {
            let mut p2 = p.clone();
            p2.out += off;
            union.params.push(p2);
        }
        assert_eq!(
            estimate(&union, &table),
            estimate(a, &table) + estimate(b, &table),
            "additivity violated"
        );
    }
    println!(
        "PASS criterion 8: {} netlists equal their table sums; pairwise unions are additive",
        netlists.len()
    );
}

fn offset_step(s: &Step, off: usize) -> Step {
    let mv = |n: &usize| n + off;
    match s {
        Step::Comb { node, op, ins, out } => Step::Comb {
            node: format!("b/{}", node),
            op: op.clone(),
            ins: ins.iter().map(mv).collect(),
            out: mv(out),
        },
        Step::FifoRead { node, channel, en, out_v, out_ok } => Step::FifoRead {
            node: format!("b/{}", node),
            channel: channel.clone(),
            en: en.map(|n| n + off),
            out_v: mv(out_v),
            out_ok: mv(out_ok),
        },
        Step::RegRead { node, channel, out } => Step::RegRead {
            node: format!("b/{}", node),
            channel: channel.clone(),
            out: mv(out),
        },
        Step::AoReady { node, dac, out } => {
            Step::AoReady { node: format!("b/{}", node), dac: dac.clone(), out: mv(out) }
        }
        Step::Ipin { node, name, ins, outs } => Step::Ipin {
            node: format!("b/{}", node),
            name: name.clone(),
            ins: ins.iter().map(mv).collect(),
            outs: outs.iter().map(mv).collect(),
        },
        Step::SelectByValue { node, sel, arms, default, out } => Step::SelectByValue {
            node: format!("b/{}", node),
            sel: mv(sel),
            arms: arms.iter().map(|(v, n)| (*v, n + off)).collect(),
            default: mv(default),
            out: mv(out),
        },
        Step::FifoWrite { node, channel, v, en, out_ok } => Step::FifoWrite {
            node: format!("b/{}", node),
            channel: channel.clone(),
            v: mv(v),
            en: en.map(|n| n + off),
            out_ok: mv(out_ok),
        },
        Step::RegWrite { node, channel, v, en } => Step::RegWrite {
            node: format!("b/{}", node),
            channel: channel.clone(),
            v: mv(v),
            en: en.map(|n| n + off),
        },
        Step::AoWrite { node, dac, v, en, out_ok } => Step::AoWrite {
            node: format!("b/{}", node),
            dac: dac.clone(),
            v: mv(v),
            en: en.map(|n| n + off),
            out_ok: mv(out_ok),
        },
    }
}

// ---------------------------------------------------------------------------
// Parser round-trip and fuzz
// ---------------------------------------------------------------------------

/// Random small project built from the random diagram generator plus some
/// declarations.
fn random_project(rng: &mut ChaCha8Rng) -> Project {
    let mut p = Project::default();
    if rng.random_bool(0.7) {
        p.clocks.insert("fck".into(), [1_000_000u64, 40_000_000][rng.random_range(0..2)]);
    }
    if rng.random_bool(0.5) {
        p.channels.push(ChannelDecl {
            name: "q0".into(),
            kind: ChannelKind::Fifo {
                elem: WireType::Int32,
                capacity: rng.random_range(1..64),
                from: Side::Host,
                to: Side::Fabric,
            },
            span: None,
        });
    }
    if rng.random_bool(0.3) {
        p.channels.push(ChannelDecl {
            name: "r0".into(),
            kind: ChannelKind::Register {
                elem: WireType::Int32,
                init: Value::Int32(rng.random_range(-5..100)),
            },
            span: None,
        });
    }
    let n_vis = rng.random_range(1..=2);
    for v in 0..n_vis {
        let (diagram, _) = random_diagram(rng, 8);
        let name = if v == 0 { "Main".to_string() } else { format!("Aux{}", v) };
        p.vis.insert(name.clone(), rioflow::ir::ViGraph { name, diagram, target: None });
    }
    p.top = "Main".into();
    p
}

#[test]
fn criterion_9_parser_round_trip_and_fuzz() {
    let t0 = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9A55);
    // Round trip: parse(format(p)) == p up to declaration order, and format
    // is a fixpoint.
    let mut corpus: Vec<String> = vec![rioflow::demo::WMS_PROJECT.to_string()];
    let round_trips = 1000;
    for case in 0..round_trips {
        let p = random_project(&mut rng);
        let text = format_project(&p);
        let p2 = parse(&text, "gen").unwrap_or_else(|e| {
            panic!("case {}: generated text failed to parse: {:?}\n{}", case, e, text)
        });
        assert_eq!(normalize(&p2), normalize(&p), "case {} round trip mismatch", case);
        let text2 = format_project(&p2);
        assert_eq!(text2, text, "case {} format not a fixpoint", case);
        if corpus.len() < 20 {
            corpus.push(text);
        }
    }

    // Fuzz: random mutations never crash the parser; they either parse or
    // produce diagnostics.
    let fuzz_rounds = 100_000;
    let mut parsed_ok = 0u64;
    for _ in 0..fuzz_rounds {
        let base = &corpus[rng.random_range(0..corpus.len())];
        let mut bytes = base.clone().into_bytes();
        for _ in 0..rng.random_range(1..8) {
            if bytes.is_empty() {
                break;
            }
            let pos = rng.random_range(0..bytes.len());
            match rng.random_range(0..3) {
                0 => bytes[pos] = rng.random_range(1..=255u8) as u8,
                1 => {
                    bytes.insert(pos, b"{}<>;:.->x0 \n"[rng.random_range(0..13)]);
                }
                _ => {
                    bytes.remove(pos);
                }
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        if parse(&text, "fuzz").is_ok() {
            parsed_ok += 1;
        }
    }
    let dt = t0.elapsed();
    println!(
        "PASS criterion 9: {} round trips identical; {} fuzz inputs, no crash ({} still parsed) in {:?}",
        round_trips, fuzz_rounds, parsed_ok, dt
    );
}

#[test]
fn criterion_10_clip_independence() {
    // A free-running CLIP counter next to an SCTL stalled on an empty FIFO
    // for the whole run: the counter advances exactly once per tick, the
    // loop's output registers never change.
    let text = "\
top Main
clock fck 1000000 Hz
channel up fifo<i32, 8> host -> fabric
vi Main {
  sctl s clock fck {
    indicator got: i32
    indicator seen: bool
    node rd: FifoRead up
    wire rd.v -> got
    wire rd.ok -> seen
  }
}
";
    let p = parse(text, "t").unwrap();
    let e = elaborate(&p, &BTreeMap::new(), &BTreeMap::new()).unwrap();
    let mut plan =
        rioflow::fabric::compile_plan(&e.plan, &p, &DepthTable::new(), &BTreeMap::new()).unwrap();
    let clip = rioflow::fabric::ip::IpDescriptor::from_json(
        r#"{
            "name": "freectr",
            "style": "clip",
            "clock": "fck",
            "ports": [{"name": "count", "dir": "out", "type": "i32"}],
            "behavior": {"kind": "linear", "a": [[1]], "b": [], "c": [1]}
        }"#,
    )
    .unwrap();
    plan.clips.push(("free".into(), clip, 1_000_000));
    let nticks = 5000u64;
    let trace = simulate(&plan, &BTreeMap::new(), &Stimuli::default(), nticks).unwrap();
    let count_sig = trace.signals.iter().position(|s| s == "free.count").unwrap();
    let got_sig = trace.signals.iter().position(|s| s == "s.got").unwrap();
    let seen_sig = trace.signals.iter().position(|s| s == "s.seen").unwrap();
    let mut expected = 1i32;
    let mut counts = 0u64;
    for rec in &trace.ticks {
        for (s, v) in &rec.pins {
            if s == &count_sig {
                assert_eq!(v.as_i32(), Some(expected), "CLIP skipped or repeated a tick");
                expected += 1;
                counts += 1;
            }
        }
        for (s, v) in &rec.regs {
            if s == &got_sig {
                assert_eq!(v.as_i32(), Some(0), "stalled loop register changed");
            }
            if s == &seen_sig {
                assert_eq!(v.as_bool(), Some(false));
            }
        }
    }
    assert_eq!(counts, nticks);
    println!(
        "PASS criterion 10: CLIP advanced exactly once per tick for {} ticks beside a stalled loop",
        nticks
    );
}

// ---------------------------------------------------------------------------
// Cross-mode agreement (the migration promise)
// ---------------------------------------------------------------------------

#[test]
fn migration_promise_host_mode_matches_cosim() {
    let text = "\
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
    let p = parse(text, "t").unwrap();
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
    let b = rioflow::cosim::run_host_mode(
        &p,
        &e,
        CosimInputs::default(),
        ExecConfig { sctl_iters: ticks, ..Default::default() },
        ticks,
        &BTreeMap::new(),
    )
    .unwrap();
    assert_eq!(a.final_registers["s.out"], "99");
    assert_eq!(a.final_registers["s.out"], b.final_registers["s.out"]);
    println!("PASS migration promise: host mode and co-simulation agree (final register 99)");
}
