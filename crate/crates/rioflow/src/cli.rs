//! Command-line driver: `check`, `sim`, `estimate`, `demo`.
//!
//! Exit codes: 0 ok, 1 design error, 2 usage error, 3 runtime failure.
//! Reports are written both human-readable (stdout) and as JSON files under
//! the output directory; file writes go through a temp-then-rename so
//! readers never observe partial output.

use crate::cosim::{run_host_mode, Cosim, CosimInputs};
use crate::diag::{Error, ErrorCode};
use crate::elaborate::{check_sctl, elaborate, load_imports, DepthTable, Elaborated};
use crate::fabric::ip::IpDescriptor;
use crate::fabric::sim::{NullSink, TickSink};
use crate::fabric::{estimate_with_ipins, hls_estimate, ResourceEstimate};
use crate::host::ExecConfig;
use crate::ir::{NodeOp, Project, StructureNode};
use crate::trace::{CsvSink, TeeSink, VcdSink};
use crate::value::{FxpValue, OverflowMode, Value, WireType};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "rioflow", version, about = "Heterogeneous dataflow toolchain: host/fabric co-simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate, type and partition a project; print diagnostics.
    Check {
        project: PathBuf,
    },
    /// Run a project (host-only or co-simulation) and write traces.
    Sim(SimArgs),
    /// Timing and resource report for every single-cycle loop.
    Estimate(EstimateArgs),
    /// Run the bundled wireless-music-system demo pipeline.
    Demo(DemoArgs),
}

#[derive(Args)]
struct SimArgs {
    project: PathBuf,
    /// Execution mode: `cosim` (fabric netlists) or `host` (all-host
    /// development flow).
    #[arg(long, default_value = "cosim")]
    mode: String,
    #[arg(long, default_value_t = 1000)]
    ticks: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Clock frequency overrides, `NAME=HZ`.
    #[arg(long = "clock")]
    clocks: Vec<String>,
    /// Trace formats to write: comma-separated subset of `vcd,csv`.
    #[arg(long, default_value = "")]
    trace: String,
    /// Control input values, `NAME=VALUE`.
    #[arg(long = "input")]
    inputs: Vec<String>,
    /// Scan stimulus CSV (`tick,channel,raw_value` rows).
    #[arg(long)]
    stimulus: Option<PathBuf>,
    /// PCM source bindings, `NAME=PATH`.
    #[arg(long = "pcm")]
    pcm: Vec<String>,
    /// DMA model overrides, `CHANNEL=BASE:PER_ELEM:BURST`.
    #[arg(long = "dma")]
    dma: Vec<String>,
    #[arg(long)]
    max_firings: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    project: PathBuf,
    #[arg(long = "clock")]
    clocks: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Project file; defaults to the bundled demo project.
    project: Option<PathBuf>,
    /// Input PCM (16-bit little-endian signed mono).
    #[arg(long)]
    pcm_in: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Band gains `LOW,MID,HIGH`.
    #[arg(long, default_value = "1,1,1")]
    gains: String,
    /// Output sample budget (defaults to the input length).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "clock")]
    clocks: Vec<String>,
    /// Fail (exit 3) when DAC underruns exceed this count.
    #[arg(long, default_value_t = 0)]
    underrun_limit: u64,
    #[arg(long, default_value = "")]
    trace: String,
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Check { project } => cmd_check(&project),
        Cmd::Sim(args) => cmd_sim(&args),
        Cmd::Estimate(args) => cmd_estimate(&args),
        Cmd::Demo(args) => cmd_demo(&args),
    };
    match code {
        Ok(c) => c,
        Err(CliError { exit, error }) => {
            for d in error.diagnostics() {
                eprintln!("{}", d);
            }
            exit
        }
    }
}

struct CliError {
    exit: i32,
    error: Error,
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: Error) -> CliError {
    CliError { exit: 2, error: e }
}

fn design(e: Error) -> CliError {
    CliError { exit: 1, error: e }
}

fn runtime(e: Error) -> CliError {
    let exit = match e.code() {
        ErrorCode::Deadlock | ErrorCode::Limit | ErrorCode::Runtime | ErrorCode::Underrun => 3,
        ErrorCode::Io => 2,
        _ => 1,
    };
    CliError { exit, error: e }
}

fn load_project(path: &Path, clock_overrides: &[String]) -> CliResult<Project> {
    if !path.exists() {
        return Err(usage(Error::fault(
            ErrorCode::Io,
            format!("project file {} does not exist", path.display()),
        )));
    }
    let mut p = crate::gtext::parse_file(path).map_err(design)?;
    for spec in clock_overrides {
        let (name, hz) = spec.split_once('=').ok_or_else(|| {
            usage(Error::fault(ErrorCode::Io, format!("bad --clock `{}`, expected NAME=HZ", spec)))
        })?;
        let hz: u64 = hz.parse().map_err(|_| {
            usage(Error::fault(ErrorCode::Io, format!("bad clock frequency in `{}`", spec)))
        })?;
        p.clocks.insert(name.to_string(), hz);
    }
    Ok(p)
}

fn depth_table() -> CliResult<DepthTable> {
    match std::env::var_os("RIOFLOW_DEPTH_TABLE") {
        Some(path) => DepthTable::load(Path::new(&path)).map_err(usage),
        None => Ok(DepthTable::new()),
    }
}

fn project_ipins(p: &Project, project_path: &Path) -> CliResult<BTreeMap<String, IpDescriptor>> {
    let base = project_path.parent().unwrap_or(Path::new("."));
    load_imports(p, base).map_err(design)
}

/// Writes a file atomically (temp in the same directory, then rename).
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| {
        runtime(Error::fault(ErrorCode::Io, format!("cannot create {}: {}", dir.display(), e)))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| {
            runtime(Error::fault(ErrorCode::Io, format!("cannot write {}: {}", path.display(), e)))
        })
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn elaborate_checked(
    p: &Project,
    ipins: &BTreeMap<String, IpDescriptor>,
) -> CliResult<Elaborated> {
    elaborate(p, ipins, &BTreeMap::new()).map_err(design)
}

fn cmd_check(path: &Path) -> CliResult<i32> {
    let p = load_project(path, &[])?;
    let ipins = project_ipins(&p, path)?;
    let elab = elaborate_checked(&p, &ipins)?;
    let table = depth_table()?;
    let mut failed = false;
    for fl in &elab.plan.fabric_loops {
        let report =
            check_sctl(&fl.node_id, &fl.sctl, fl.clock_hz, &table, &ipins).map_err(design)?;
        if !report.feasible {
            failed = true;
            let err = report.as_result().unwrap_err();
            for d in err.diagnostics() {
                eprintln!("{}", d);
            }
        }
    }
    if failed {
        return Ok(1);
    }
    println!(
        "ok: {} VIs, {} fabric loops, {} channels",
        1,
        elab.plan.fabric_loops.len(),
        elab.plan.bindings.len()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// sim
// ---------------------------------------------------------------------------

fn parse_control_value(ty: &WireType, text: &str) -> Result<Value, Error> {
    let bad = || Error::fault(ErrorCode::Io, format!("cannot parse `{}` as {}", text, ty));
    Ok(match ty {
        WireType::Bool => Value::Bool(text.parse().map_err(|_| bad())?),
        WireType::Int32 => Value::Int32(text.parse().map_err(|_| bad())?),
        WireType::Float64 => Value::Float64(text.parse().map_err(|_| bad())?),
        WireType::Fxp { word_bits, int_bits } => {
            let x: f64 = text.parse().map_err(|_| bad())?;
            Value::Fxp(FxpValue::from_f64(x, *word_bits, *int_bits, OverflowMode::Saturate))
        }
        _ => return Err(bad()),
    })
}

fn parse_inputs(p: &Elaborated, specs: &[String]) -> CliResult<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    let controls = &p.plan.host.diagram.controls;
    for spec in specs {
        let (name, text) = spec.split_once('=').ok_or_else(|| {
            usage(Error::fault(ErrorCode::Io, format!("bad --input `{}`, expected NAME=VALUE", spec)))
        })?;
        let ty = controls
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.ty.clone())
            .ok_or_else(|| {
                usage(Error::fault(ErrorCode::Io, format!("no control named `{}`", name)))
            })?;
        out.insert(name.to_string(), parse_control_value(&ty, text).map_err(usage)?);
    }
    // Unspecified controls default to zero values.
    for c in controls {
        out.entry(c.name.clone()).or_insert_with(|| c.ty.default_value());
    }
    Ok(out)
}

fn parse_scan_stimulus(path: &Path) -> CliResult<Vec<(u64, String, i32)>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        usage(Error::fault(ErrorCode::Io, format!("cannot read {}: {}", path.display(), e)))
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("tick") {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(t), Some(ch), Some(raw)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(usage(Error::fault(
                ErrorCode::Io,
                format!("{}:{}: expected tick,channel,raw_value", path.display(), lineno + 1),
            )));
        };
        let t: u64 = t.trim().parse().map_err(|_| {
            usage(Error::fault(ErrorCode::Io, format!("bad tick at line {}", lineno + 1)))
        })?;
        let raw: i32 = raw.trim().parse().map_err(|_| {
            usage(Error::fault(ErrorCode::Io, format!("bad raw value at line {}", lineno + 1)))
        })?;
        out.push((t, ch.trim().to_string(), raw));
    }
    Ok(out)
}

fn parse_dma_overrides(specs: &[String]) -> CliResult<BTreeMap<String, crate::comm::DmaModel>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (name, rest) = spec.split_once('=').ok_or_else(|| {
            usage(Error::fault(
                ErrorCode::Io,
                format!("bad --dma `{}`, expected CHANNEL=BASE:PER_ELEM:BURST", spec),
            ))
        })?;
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(usage(Error::fault(
                ErrorCode::Io,
                format!("bad --dma `{}`, expected CHANNEL=BASE:PER_ELEM:BURST", spec),
            )));
        }
        let nums: Vec<u64> = parts
            .iter()
            .map(|s| s.parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(Error::fault(ErrorCode::Io, format!("bad --dma `{}`", spec))))?;
        out.insert(
            name.to_string(),
            crate::comm::DmaModel {
                base_ticks: nums[0],
                per_element_ticks: nums[1],
                burst: nums[2],
            },
        );
    }
    Ok(out)
}

type PcmBindings = (BTreeMap<String, Arc<Vec<f64>>>, BTreeMap<String, usize>);

fn load_pcm_bindings(specs: &[String]) -> CliResult<PcmBindings> {
    let mut data = BTreeMap::new();
    let mut lens = BTreeMap::new();
    for spec in specs {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            usage(Error::fault(ErrorCode::Io, format!("bad --pcm `{}`, expected NAME=PATH", spec)))
        })?;
        let samples = crate::pcm::read_normalized(Path::new(path)).map_err(usage)?;
        lens.insert(name.to_string(), samples.len());
        data.insert(name.to_string(), Arc::new(samples));
    }
    Ok((data, lens))
}

fn cmd_sim(args: &SimArgs) -> CliResult<i32> {
    let p = load_project(&args.project, &args.clocks)?;
    let ipins = project_ipins(&p, &args.project)?;
    let (pcm, pcm_lens) = load_pcm_bindings(&args.pcm)?;
    let elab = elaborate(&p, &ipins, &pcm_lens).map_err(design)?;
    let table = depth_table()?;

    let controls = parse_inputs(&elab, &args.inputs)?;
    let scan_stimulus = match &args.stimulus {
        Some(path) => parse_scan_stimulus(path)?,
        None => Vec::new(),
    };
    let inputs = CosimInputs {
        controls,
        pcm,
        scan_stimulus,
        dma_overrides: parse_dma_overrides(&args.dma)?,
        ..Default::default()
    };
    let cfg = ExecConfig {
        seed: args.seed,
        max_firings: args.max_firings.unwrap_or(100_000_000),
        trace: false,
        sctl_iters: args.ticks,
    };

    let summary = match args.mode.as_str() {
        "host" => run_host_mode(&p, &elab, inputs, cfg, args.ticks, &ipins).map_err(runtime)?,
        "cosim" => {
            let mut cosim =
                Cosim::new(&p, &elab, &table, &ipins, inputs, cfg).map_err(design)?;
            let want: Vec<&str> =
                args.trace.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            let mut vcd_buf = Vec::new();
            let mut csv_buf = Vec::new();
            let summary = {
                let mut sinks: Vec<&mut dyn TickSink> = Vec::new();
                let mut vcd = VcdSink::new(&mut vcd_buf, cosim.engine.grid_hz);
                let mut csv = CsvSink::new(&mut csv_buf);
                if want.contains(&"vcd") {
                    sinks.push(&mut vcd);
                }
                if want.contains(&"csv") {
                    sinks.push(&mut csv);
                }
                if sinks.is_empty() {
                    cosim.run(args.ticks, &mut NullSink).map_err(runtime)?
                } else {
                    let mut tee = TeeSink { sinks };
                    let s = cosim.run(args.ticks, &mut tee).map_err(runtime)?;
                    drop(tee);
                    vcd.finish().map_err(runtime)?;
                    csv.finish().map_err(runtime)?;
                    s
                }
            };
            if want.contains(&"vcd") {
                write_atomic(&args.out.join("trace.vcd"), &vcd_buf)?;
            }
            if want.contains(&"csv") {
                write_atomic(&args.out.join("trace.csv"), &csv_buf)?;
            }
            if !cosim.scan_log.is_empty() {
                let mut log = String::from("tick,channel,value\n");
                for (t, ch, v) in &cosim.scan_log {
                    log.push_str(&format!("{},{},{}\n", t, ch, v));
                }
                write_atomic(&args.out.join("scan_log.csv"), log.as_bytes())?;
            }
            summary
        }
        other => {
            return Err(usage(Error::fault(
                ErrorCode::Io,
                format!("unknown --mode `{}` (expected host or cosim)", other),
            )))
        }
    };

    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&args.out.join("summary.json"), json.as_bytes())?;
    println!(
        "ticks={} firings={} underruns={} overflows={} host_done={}",
        summary.ticks, summary.firings, summary.underruns, summary.overflows, summary.host_done
    );
    for (name, v) in &summary.final_registers {
        println!("  {} = {}", name, v);
    }
    for (name, st) in &summary.channels {
        println!("  channel {}: writes={} reads={} drops={}", name, st.writes, st.reads, st.overflow_drops);
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LoopReport {
    name: String,
    clock_hz: u64,
    period_ns: f64,
    critical_path_ns: f64,
    slack_ns: f64,
    feasible: bool,
    critical_path: Vec<String>,
    resources: ResourceEstimate,
}

#[derive(Serialize)]
struct EstimateReport {
    loops: Vec<LoopReport>,
    channels: BTreeMap<String, ResourceEstimate>,
    hls: BTreeMap<String, crate::fabric::HlsEstimate>,
    total: ResourceEstimate,
    feasible: bool,
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult<i32> {
    let p = load_project(&args.project, &args.clocks)?;
    let ipins = project_ipins(&p, &args.project)?;
    let elab = elaborate_checked(&p, &ipins)?;
    let table = depth_table()?;

    let mut loops = Vec::new();
    let mut total = ResourceEstimate::default();
    let mut feasible = true;
    for fl in &elab.plan.fabric_loops {
        let timing =
            check_sctl(&fl.node_id, &fl.sctl, fl.clock_hz, &table, &ipins).map_err(design)?;
        let resources = if timing.feasible {
            let netlist = crate::fabric::compile_sctl(
                &fl.node_id,
                &fl.sctl,
                fl.clock_hz,
                &table,
                &ipins,
                &fl.tunnel_consts,
                &fl.types,
            )
            .map_err(design)?;
            estimate_with_ipins(&netlist, &table, &ipins)
        } else {
            feasible = false;
            ResourceEstimate::default()
        };
        total = total + resources;
        loops.push(LoopReport {
            name: fl.node_id.clone(),
            clock_hz: timing.clock_hz,
            period_ns: timing.period_ns,
            critical_path_ns: timing.path_ns,
            slack_ns: timing.period_ns - timing.path_ns,
            feasible: timing.feasible,
            critical_path: timing.critical_path.clone(),
            resources,
        });
    }
    let mut channels = BTreeMap::new();
    for c in &p.channels {
        if let crate::ir::ChannelKind::Fifo { elem, capacity, .. } = &c.kind {
            let r = table.fifo_bram(*capacity, elem);
            total = total + r;
            channels.insert(c.name.clone(), r);
        }
    }
    // Performance model for loops annotated with unroll directives.
    let mut hls = BTreeMap::new();
    for n in &elab.top.diagram.nodes {
        if let NodeOp::Structure(s) = &n.op {
            let (body, directives) = match &**s {
                StructureNode::For(f) => (&f.body, f.hls),
                StructureNode::While(w) => (&w.body, w.hls),
                _ => continue,
            };
            if let Some(d) = directives {
                let types = elab
                    .top
                    .types
                    .bodies
                    .get(&n.id)
                    .and_then(|b| b.first())
                    .cloned()
                    .unwrap_or_default();
                let h = hls_estimate(body, &types, d.unroll, d.target_ii, &table)
                    .map_err(design)?;
                hls.insert(n.id.clone(), h);
            }
        }
    }

    let report = EstimateReport { loops, channels, hls, total, feasible };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&args.out.join("estimate.json"), json.as_bytes())?;

    println!("{:<16} {:>12} {:>10} {:>9} {:>8} {:>6} {:>6} {:>6}", "loop", "clock", "path_ns", "slack_ns", "lut", "ff", "dsp", "bram");
    for l in &report.loops {
        println!(
            "{:<16} {:>12} {:>10.1} {:>9.1} {:>8} {:>6} {:>6} {:>6}{}",
            l.name,
            l.clock_hz,
            l.critical_path_ns,
            l.slack_ns,
            l.resources.lut,
            l.resources.ff,
            l.resources.dsp,
            l.resources.bram,
            if l.feasible { "" } else { "  INFEASIBLE" }
        );
    }
    for (name, r) in &report.channels {
        println!("{:<16} {:>12} {:>10} {:>9} {:>8} {:>6} {:>6} {:>6}", format!("fifo {}", name), "", "", "", r.lut, r.ff, r.dsp, r.bram);
    }
    for (name, h) in &report.hls {
        println!(
            "loop {}: II={} (unroll {}, {} multiplies){}",
            name,
            h.initiation_interval,
            h.unroll,
            h.multiplier_ops,
            match h.target_met {
                Some(true) => ", target met",
                Some(false) => ", TARGET MISSED",
                None => "",
            }
        );
    }
    println!(
        "total: lut={} ff={} dsp={} bram={}",
        report.total.lut, report.total.ff, report.total.dsp, report.total.bram
    );
    Ok(if report.feasible { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

fn cmd_demo(args: &DemoArgs) -> CliResult<i32> {
    if !args.pcm_in.exists() {
        return Err(usage(Error::fault(
            ErrorCode::Io,
            format!("input PCM {} does not exist", args.pcm_in.display()),
        )));
    }
    let gains: Vec<f64> = args
        .gains
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            usage(Error::fault(ErrorCode::Io, format!("bad --gains `{}`, expected L,M,H", args.gains)))
        })?;
    if gains.len() != 3 {
        return Err(usage(Error::fault(ErrorCode::Io, "expected exactly three gains")));
    }
    let mut clock_overrides = BTreeMap::new();
    for spec in &args.clocks {
        let (name, hz) = spec.split_once('=').ok_or_else(|| {
            usage(Error::fault(ErrorCode::Io, format!("bad --clock `{}`", spec)))
        })?;
        clock_overrides.insert(
            name.to_string(),
            hz.parse::<u64>().map_err(|_| {
                usage(Error::fault(ErrorCode::Io, format!("bad clock frequency in `{}`", spec)))
            })?,
        );
    }
    // A custom project path replaces the bundled demo wholesale.
    if let Some(path) = &args.project {
        if !path.exists() {
            return Err(usage(Error::fault(
                ErrorCode::Io,
                format!("project file {} does not exist", path.display()),
            )));
        }
    }

    let input = crate::pcm::read_normalized(&args.pcm_in).map_err(usage)?;
    let opts = crate::demo::DemoOptions {
        input,
        gains: [gains[0], gains[1], gains[2]],
        samples: args.samples,
        seed: args.seed,
        clock_overrides,
        underrun_limit: args.underrun_limit,
    };
    let run = crate::demo::run_demo(&opts, &mut NullSink).map_err(runtime)?;

    let out_pcm = args.out.join("demo_out.pcm");
    std::fs::create_dir_all(&args.out).ok();
    crate::pcm::write_codes(&out_pcm, &run.output).map_err(runtime)?;
    let json = serde_json::to_string_pretty(&run.report).expect("report serializes");
    write_atomic(&args.out.join("demo_report.json"), json.as_bytes())?;

    println!(
        "emitted {} samples at {} ticks/sample ({} Hz fabric clock); jitter zero: {}; underruns: {}",
        run.report.samples_emitted,
        run.report.ticks_per_sample,
        run.report.fabric_clock_hz,
        run.report.zero_jitter,
        run.report.underruns
    );
    println!("wrote {}", out_pcm.display());
    let _ = std::io::stdout().flush();
    if run.report.underruns > opts.underrun_limit {
        return Err(runtime(Error::fault(
            ErrorCode::Underrun,
            format!("{} DAC underruns exceed the limit {}", run.report.underruns, opts.underrun_limit),
        )));
    }
    Ok(0)
}
