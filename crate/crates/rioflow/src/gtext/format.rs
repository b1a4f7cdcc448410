//! Canonical serializer for projects.
//!
//! The canonical form sorts VIs by name, emits nodes in topological order
//! (ties broken by node id), one declaration per line, and one `wire` line
//! per destination sorted by source then destination. Formatting a parsed
//! canonical text reproduces it byte for byte.

use crate::ir::{
    ChannelKind, Diagram, Endpoint, Node, NodeOp, PrimOp, Project, ScanDir, SctlParam,
    ShiftRegister, Side, StructureNode, Target, TargetHint, Timeout, ViGraph,
};
use crate::value::{FxpValue, OverflowMode, Value, WireType};
use std::collections::HashMap;
use std::fmt::Write as _;

pub fn format_project(p: &Project) -> String {
    let mut out = String::new();
    if !p.top.is_empty() {
        writeln!(out, "top {}", p.top).unwrap();
    }
    for (name, hz) in &p.clocks {
        writeln!(out, "clock {} {} Hz", name, hz).unwrap();
    }
    let mut channels = p.channels.clone();
    channels.sort_by(|a, b| a.name.cmp(&b.name));
    for c in &channels {
        match &c.kind {
            ChannelKind::Fifo { elem, capacity, from, to } => {
                writeln!(out, "channel {} fifo<{}, {}> {} -> {}", c.name, type_str(elem), capacity, side(*from), side(*to))
                    .unwrap();
            }
            ChannelKind::Register { elem, init } => {
                let init_str = if *init == elem.default_value() {
                    String::new()
                } else {
                    format!(" init {}", literal_str(init))
                };
                writeln!(out, "register {} <{}>{}", c.name, type_str(elem), init_str).unwrap();
            }
        }
    }
    if let Some(scan) = &p.scan {
        writeln!(out, "scan {} us {{", scan.period_us).unwrap();
        for ch in &scan.channels {
            let dir = match ch.dir {
                ScanDir::In => "in",
                ScanDir::Out => "out",
            };
            if ch.gain == 1.0 && ch.offset == 0.0 {
                writeln!(out, "  {} {}: {}", dir, ch.name, type_str(&ch.ty)).unwrap();
            } else {
                writeln!(out, "  {} {}: {} units {:?} {:?}", dir, ch.name, type_str(&ch.ty), ch.gain, ch.offset)
                    .unwrap();
            }
        }
        writeln!(out, "}}").unwrap();
    }
    let mut dacs = p.dacs.clone();
    dacs.sort_by(|a, b| a.name.cmp(&b.name));
    for d in &dacs {
        writeln!(out, "dac {} {} Hz clock {} buffer {}", d.name, d.sample_rate_hz, d.clock, d.buffer)
            .unwrap();
    }
    let mut pcm = p.pcm_sources.clone();
    pcm.sort_by(|a, b| a.name.cmp(&b.name));
    for s in &pcm {
        match &s.file {
            Some(f) => writeln!(out, "pcm {} rate {} file \"{}\"", s.name, s.rate_hz, escape(f)).unwrap(),
            None => writeln!(out, "pcm {} rate {}", s.name, s.rate_hz).unwrap(),
        }
    }
    let mut imports = p.imports.clone();
    imports.sort();
    for i in &imports {
        writeln!(out, "import \"{}\"", escape(i)).unwrap();
    }
    let mut clips = p.clips.clone();
    clips.sort();
    for (name, desc) in &clips {
        writeln!(out, "clip {} uses {}", name, desc).unwrap();
    }
    // BTreeMap iteration is already sorted by VI name.
    for vi in p.vis.values() {
        out.push('\n');
        write_vi(&mut out, vi);
    }
    out
}

fn side(s: Side) -> &'static str {
    match s {
        Side::Host => "host",
        Side::Fabric => "fabric",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn type_str(t: &WireType) -> String {
    match t {
        WireType::Bool => "bool".into(),
        WireType::Int32 => "i32".into(),
        WireType::Float64 => "f64".into(),
        WireType::Fxp { word_bits, int_bits } => format!("fxp<{},{}>", word_bits, int_bits),
        WireType::Array { elem, len } => format!("[{}; {}]", type_str(elem), len),
        WireType::Cluster(_) => "cluster".into(), // not expressible in source
    }
}

/// Formats a scalar literal so that parsing it back reproduces the value
/// exactly. Fixed-point values print as a decimal when the decimal
/// round-trips through quantization, otherwise in `raw` form.
pub fn literal_str(v: &Value) -> String {
    match v {
        Value::Bool(b) => b.to_string(),
        Value::Int32(i) => i.to_string(),
        Value::Float64(f) => format!("{:?}", f),
        Value::Fxp(fx) => {
            let dec = fx.to_f64();
            let back = FxpValue::from_f64(dec, fx.word_bits, fx.int_bits, OverflowMode::Saturate);
            if back.raw == fx.raw && dec.is_finite() {
                format!("{:?}", dec)
            } else {
                format!("raw {}", fx.raw)
            }
        }
        Value::Array(_) | Value::Cluster(_) => "<composite>".into(),
    }
}

fn write_vi(out: &mut String, vi: &ViGraph) {
    match vi.target {
        Some(Target::Fabric) => writeln!(out, "vi {} target fabric {{", vi.name).unwrap(),
        Some(Target::Host) => writeln!(out, "vi {} target host {{", vi.name).unwrap(),
        None => writeln!(out, "vi {} {{", vi.name).unwrap(),
    }
    write_diagram_items(out, &vi.diagram, &[], &[], None, 1);
    writeln!(out, "}}").unwrap();
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_diagram_items(
    out: &mut String,
    d: &Diagram,
    shift_regs: &[ShiftRegister],
    params: &[SctlParam],
    stop_port: Option<&str>,
    level: usize,
) {
    for c in &d.controls {
        indent(out, level);
        writeln!(out, "control {}: {}", c.name, type_str(&c.ty)).unwrap();
    }
    for i in &d.indicators {
        indent(out, level);
        writeln!(out, "indicator {}: {}", i.name, type_str(&i.ty)).unwrap();
    }
    if let Some(stop) = stop_port {
        if stop != "stop" {
            indent(out, level);
            writeln!(out, "stop {}", stop).unwrap();
        }
    }
    for p in params {
        indent(out, level);
        let init = if p.init != 0 { format!(" init {}", p.init) } else { String::new() };
        let from = p.channel.as_ref().map(|c| format!(" from {}", c)).unwrap_or_default();
        writeln!(out, "param {}: i32{}{}", p.name, init, from).unwrap();
    }
    for sr in shift_regs {
        indent(out, level);
        writeln!(out, "shiftreg {}: {} init {}", sr.name, type_str(&sr.ty), literal_str(&sr.init))
            .unwrap();
    }

    // Nodes in topological order (ties by id); unordered graphs with cycles
    // should not reach the formatter, but fall back to id order if they do.
    let order: Vec<String> = crate::ir::topo_order(d)
        .unwrap_or_else(|_| {
            let mut ids: Vec<String> = d.nodes.iter().map(|n| n.id.clone()).collect();
            ids.sort();
            ids
        });
    let by_id: HashMap<&str, &Node> = d.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let topo_pos: HashMap<&str, usize> =
        order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    for id in &order {
        write_node(out, by_id[id.as_str()], level);
    }

    // One wire line per destination, sorted by (source, destination) keys.
    type EndpointKey = (u8, usize, String, String);
    let mut lines: Vec<(EndpointKey, EndpointKey, String)> = Vec::new();
    let key = |e: &Endpoint| -> EndpointKey {
        match e {
            Endpoint::Boundary(name) => (0, 0, name.clone(), String::new()),
            Endpoint::Node { node, port } => (
                1,
                topo_pos.get(node.as_str()).copied().unwrap_or(usize::MAX),
                node.clone(),
                port.clone(),
            ),
        }
    };
    for w in &d.wires {
        for dst in &w.dsts {
            lines.push((key(&w.src), key(dst), format!("wire {} -> {}", w.src, dst)));
        }
    }
    lines.sort();
    for (_, _, text) in &lines {
        indent(out, level);
        out.push_str(text);
        out.push('\n');
    }
}

fn write_node(out: &mut String, n: &Node, level: usize) {
    match &n.op {
        NodeOp::Structure(s) => write_structure(out, n, s, level),
        NodeOp::SubVi(name) => {
            indent(out, level);
            writeln!(out, "node {}: sub {}{}", n.id, name, hint_str(n.target_hint)).unwrap();
        }
        NodeOp::Prim(p) => {
            indent(out, level);
            writeln!(out, "node {}: {}{}", n.id, prim_str(p), hint_str(n.target_hint)).unwrap();
        }
    }
}

fn hint_str(h: TargetHint) -> &'static str {
    match h {
        TargetHint::Inherit => "",
        TargetHint::Host => " target host",
        TargetHint::Fabric => " target fabric",
    }
}

fn prim_str(p: &PrimOp) -> String {
    match p {
        PrimOp::Const(v) => format!("Const {} {}", type_str(&v.ty()), literal_str(v)),
        PrimOp::Convert { to, mode } => match mode {
            OverflowMode::Saturate => format!("Convert {}", type_str(to)),
            OverflowMode::Wrap => format!("Convert {} wrap", type_str(to)),
        },
        PrimOp::ArrayBuild(n) => format!("ArrayBuild {}", n),
        PrimOp::FifoRead { channel, timeout } => {
            format!("FifoRead {}{}", channel, timeout_str(*timeout))
        }
        PrimOp::FifoWrite { channel, timeout } => {
            format!("FifoWrite {}{}", channel, timeout_str(*timeout))
        }
        PrimOp::RegRead { channel } => format!("RegRead {}", channel),
        PrimOp::RegWrite { channel } => format!("RegWrite {}", channel),
        PrimOp::ScanRead { channel } => format!("ScanRead {}", channel),
        PrimOp::ScanWrite { channel } => format!("ScanWrite {}", channel),
        PrimOp::AoReady { dac } => format!("AoReady {}", dac),
        PrimOp::AoWrite { dac } => format!("AoWrite {}", dac),
        PrimOp::FileReadPcm { source } => format!("FileReadPCM {}", source),
        PrimOp::Ipin { name } => format!("Ipin {}", name),
        other => other.name().to_string(),
    }
}

fn timeout_str(t: Timeout) -> String {
    match t {
        Timeout::Infinite => String::new(),
        Timeout::Ticks(n) => format!(" timeout {}", n),
    }
}

fn write_structure(out: &mut String, n: &Node, s: &StructureNode, level: usize) {
    match s {
        StructureNode::While(w) => {
            indent(out, level);
            writeln!(out, "while {}{} {{", n.id, hls_str(&w.hls)).unwrap();
            write_diagram_items(out, &w.body, &w.shift_regs, &[], Some(&w.stop_port), level + 1);
            indent(out, level);
            writeln!(out, "}}").unwrap();
        }
        StructureNode::For(f) => {
            indent(out, level);
            writeln!(out, "for {}{} {{", n.id, hls_str(&f.hls)).unwrap();
            write_diagram_items(out, &f.body, &f.shift_regs, &[], None, level + 1);
            indent(out, level);
            writeln!(out, "}}").unwrap();
        }
        StructureNode::Case(c) => {
            indent(out, level);
            writeln!(out, "case {} {{", n.id).unwrap();
            for (sel, body) in &c.cases {
                indent(out, level + 1);
                writeln!(out, "of {} {{", sel).unwrap();
                write_diagram_items(out, body, &[], &[], None, level + 2);
                indent(out, level + 1);
                writeln!(out, "}}").unwrap();
            }
            indent(out, level + 1);
            writeln!(out, "default {{").unwrap();
            write_diagram_items(out, &c.default, &[], &[], None, level + 2);
            indent(out, level + 1);
            writeln!(out, "}}").unwrap();
            indent(out, level);
            writeln!(out, "}}").unwrap();
        }
        StructureNode::Sctl(sc) => {
            indent(out, level);
            writeln!(out, "sctl {} clock {} {{", n.id, sc.clock).unwrap();
            write_diagram_items(out, &sc.body, &sc.shift_regs, &sc.params, None, level + 1);
            indent(out, level);
            writeln!(out, "}}").unwrap();
        }
    }
}

fn hls_str(h: &Option<crate::ir::HlsDirectives>) -> String {
    match h {
        None => String::new(),
        Some(d) => match d.target_ii {
            Some(t) => format!(" unroll {} target_ii {}", d.unroll, t),
            None => format!(" unroll {}", d.unroll),
        },
    }
}
