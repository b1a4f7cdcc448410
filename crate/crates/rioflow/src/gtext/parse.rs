//! Recursive-descent parser producing an [`ir::Project`].
//!
//! Parsing succeeds only when the result is structurally sound: after
//! building the AST the parser checks project invariants (top VI exists,
//! sub-VI references resolve, no duplicate declarations) and runs
//! [`ir::validate`] on every VI, so a returned project is always clean.

use super::lex::{lex, Tok, Token};
use crate::diag::{Diagnostic, ErrorCode, SourceSpan};
use crate::ir::{
    bport, nport, CaseStructure, ChannelDecl, ChannelKind, DacDecl, Diagram, Endpoint, ForLoop,
    HlsDirectives, Node, NodeOp, PcmDecl, Port, PrimOp, Project, ScanChannel, ScanConfig, ScanDir,
    SctlLoop, SctlParam, ShiftRegister, Side, StructureNode, Target, TargetHint, Timeout, ViGraph,
    WhileLoop, Wire,
};
use crate::value::{FxpValue, OverflowMode, Value, WireType};

pub fn parse(text: &str, file: &str) -> Result<Project, Vec<Diagnostic>> {
    let tokens = lex(text, file).map_err(|d| vec![d])?;
    let mut p = Parser { toks: tokens, pos: 0 };
    let project = p.project().map_err(|d| vec![d])?;
    let diags = check_project(&project);
    if diags.is_empty() {
        Ok(project)
    } else {
        Err(diags)
    }
}

/// Project-level invariant checks plus structural validation of every VI.
fn check_project(p: &Project) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if p.vis.is_empty() {
        diags.push(Diagnostic::new(ErrorCode::UnresolvedSubvi, "project declares no VIs"));
        return diags;
    }
    if !p.vis.contains_key(&p.top) {
        diags.push(Diagnostic::new(
            ErrorCode::UnresolvedSubvi,
            format!("top-level VI `{}` is not defined", p.top),
        ));
    }
    // Sub-VI references must resolve.
    for vi in p.vis.values() {
        check_subvi_refs(&vi.diagram, p, &mut diags);
    }
    // Channel/DAC/PCM references on nodes must resolve.
    for vi in p.vis.values() {
        check_resource_refs(&vi.diagram, p, &mut diags);
    }
    for vi in p.vis.values() {
        diags.extend(crate::ir::validate(vi, Some(p)));
    }
    diags
}

fn check_subvi_refs(d: &Diagram, p: &Project, diags: &mut Vec<Diagnostic>) {
    for n in &d.nodes {
        match &n.op {
            NodeOp::SubVi(name) => {
                if !p.vis.contains_key(name) {
                    diags.push(
                        Diagnostic::new(
                            ErrorCode::UnresolvedSubvi,
                            format!("sub-VI `{}` is not defined", name),
                        )
                        .with_node(n.id.clone())
                        .with_opt_span(n.span.clone()),
                    );
                }
            }
            NodeOp::Structure(s) => {
                for body in s.bodies() {
                    check_subvi_refs(body, p, diags);
                }
            }
            NodeOp::Prim(_) => {}
        }
    }
}

fn check_resource_refs(d: &Diagram, p: &Project, diags: &mut Vec<Diagnostic>) {
    for n in &d.nodes {
        let missing = |kind: &str, name: &str| {
            Diagnostic::new(
                ErrorCode::UnknownEndpoint,
                format!("{} `{}` is not declared", kind, name),
            )
            .with_node(n.id.clone())
            .with_opt_span(n.span.clone())
        };
        match &n.op {
            NodeOp::Prim(PrimOp::FifoRead { channel, .. })
            | NodeOp::Prim(PrimOp::FifoWrite { channel, .. }) => {
                match p.channel(channel).map(|c| &c.kind) {
                    Some(ChannelKind::Fifo { .. }) => {}
                    Some(_) => diags.push(missing("fifo channel", channel)),
                    None => diags.push(missing("channel", channel)),
                }
            }
            NodeOp::Prim(PrimOp::RegRead { channel })
            | NodeOp::Prim(PrimOp::RegWrite { channel }) => {
                match p.channel(channel).map(|c| &c.kind) {
                    Some(ChannelKind::Register { .. }) => {}
                    Some(_) => diags.push(missing("register channel", channel)),
                    None => diags.push(missing("channel", channel)),
                }
            }
            NodeOp::Prim(PrimOp::ScanRead { channel }) | NodeOp::Prim(PrimOp::ScanWrite { channel }) => {
                let found = p
                    .scan
                    .as_ref()
                    .map(|s| s.channels.iter().any(|c| c.name == *channel))
                    .unwrap_or(false);
                if !found {
                    diags.push(missing("scan channel", channel));
                }
            }
            NodeOp::Prim(PrimOp::AoWrite { dac }) | NodeOp::Prim(PrimOp::AoReady { dac }) => {
                if p.dac(dac).is_none() {
                    diags.push(missing("dac", dac));
                }
            }
            NodeOp::Prim(PrimOp::FileReadPcm { source }) => {
                if p.pcm(source).is_none() {
                    diags.push(missing("pcm source", source));
                }
            }
            NodeOp::Structure(s) => {
                for body in s.bodies() {
                    check_resource_refs(body, p, diags);
                }
                if let StructureNode::Sctl(sc) = &**s {
                    for param in &sc.params {
                        if let Some(ch) = &param.channel {
                            match p.channel(ch).map(|c| &c.kind) {
                                Some(ChannelKind::Register { .. }) => {}
                                _ => diags.push(missing("register channel", ch)),
                            }
                        }
                    }
                    if !p.clocks.is_empty() && !p.clocks.contains_key(&sc.clock) {
                        diags.push(
                            Diagnostic::new(
                                ErrorCode::UnknownEndpoint,
                                format!("clock `{}` is not declared", sc.clock),
                            )
                            .with_node(n.id.clone()),
                        );
                    }
                }
            }
            _ => {}
        }
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

/// Body kinds drive which items are legal where.
#[derive(Clone, Copy, PartialEq)]
enum Ctx {
    Vi,
    While,
    For,
    Sctl,
    Case,
}

/// Accumulates the pieces of one diagram scope before finalizing.
#[derive(Default)]
struct ScopeAcc {
    controls: Vec<Port>,
    indicators: Vec<Port>,
    nodes: Vec<Node>,
    raw_wires: Vec<(Endpoint, Endpoint, SourceSpan)>,
    shift_regs: Vec<ShiftRegister>,
    params: Vec<SctlParam>,
    stop_port: Option<String>,
}

impl ScopeAcc {
    fn finish(self) -> (Diagram, Vec<ShiftRegister>, Vec<SctlParam>, Option<String>) {
        // Merge one-destination wire lines into fan-out wires keyed by
        // source, preserving declaration order.
        let mut wires: Vec<Wire> = Vec::new();
        for (src, dst, span) in self.raw_wires {
            if let Some(w) = wires.iter_mut().find(|w| w.src == src) {
                w.dsts.push(dst);
                w.dst_spans.push(Some(span));
            } else {
                wires.push(Wire {
                    src,
                    dsts: vec![dst],
                    span: Some(span.clone()),
                    dst_spans: vec![Some(span)],
                });
            }
        }
        (
            Diagram {
                controls: self.controls,
                indicators: self.indicators,
                nodes: self.nodes,
                wires,
            },
            self.shift_regs,
            self.params,
            self.stop_port,
        )
    }
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, span: &SourceSpan, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::new(ErrorCode::Syntax, msg).with_span(span.clone())
    }

    fn expect_tok(&mut self, want: Tok, what: &str) -> Result<Token, Diagnostic> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.err(&t.span, format!("expected {}, found {}", what, t.tok.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, SourceSpan), Diagnostic> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.span)),
            other => {
                Err(self.err(&t.span, format!("expected {}, found {}", what, other.describe())))
            }
        }
    }

    /// Consumes the given keyword if present.
    fn eat_kw(&mut self, kw: &str) -> bool {
        if matches!(&self.peek().tok, Tok::Ident(s) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<SourceSpan, Diagnostic> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(t.span),
            other => {
                Err(self.err(&t.span, format!("expected `{}`, found {}", kw, other.describe())))
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<(u64, SourceSpan), Diagnostic> {
        let t = self.next();
        match t.tok {
            Tok::Int(v) if v >= 0 && v <= u64::MAX as i128 => Ok((v as u64, t.span)),
            other => {
                Err(self.err(&t.span, format!("expected {}, found {}", what, other.describe())))
            }
        }
    }

    fn int_signed(&mut self, what: &str) -> Result<(i128, SourceSpan), Diagnostic> {
        let neg = if self.peek().tok == Tok::Minus {
            self.pos += 1;
            true
        } else {
            false
        };
        let t = self.next();
        match t.tok {
            Tok::Int(v) => Ok((if neg { -v } else { v }, t.span)),
            other => {
                Err(self.err(&t.span, format!("expected {}, found {}", what, other.describe())))
            }
        }
    }

    // ---- project --------------------------------------------------------

    fn project(&mut self) -> Result<Project, Diagnostic> {
        let mut project = Project::default();
        let mut top_decl: Option<(String, SourceSpan)> = None;
        let mut vi_order: Vec<String> = Vec::new();

        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => break,
                Tok::Ident(kw) => match kw.as_str() {
                    "top" => {
                        self.pos += 1;
                        let (name, span) = self.ident("top VI name")?;
                        if top_decl.is_some() {
                            return Err(self.err(&span, "duplicate `top` declaration"));
                        }
                        top_decl = Some((name, span));
                    }
                    "clock" => {
                        self.pos += 1;
                        let (name, span) = self.ident("clock name")?;
                        let (hz, _) = self.uint("frequency in Hz")?;
                        self.expect_kw("Hz")?;
                        if project.clocks.contains_key(&name) {
                            return Err(Diagnostic::new(
                                ErrorCode::DupName,
                                format!("duplicate clock `{}`", name),
                            )
                            .with_span(span));
                        }
                        if hz == 0 {
                            return Err(self.err(&span, "clock frequency must be > 0"));
                        }
                        project.clocks.insert(name, hz);
                    }
                    "channel" => {
                        self.pos += 1;
                        let decl = self.fifo_decl()?;
                        if project.channel(&decl.name).is_some() {
                            return Err(Diagnostic::new(
                                ErrorCode::DupChannel,
                                format!("duplicate channel `{}`", decl.name),
                            )
                            .with_opt_span(decl.span.clone()));
                        }
                        project.channels.push(decl);
                    }
                    "register" => {
                        self.pos += 1;
                        let decl = self.register_decl()?;
                        if project.channel(&decl.name).is_some() {
                            return Err(Diagnostic::new(
                                ErrorCode::DupChannel,
                                format!("duplicate channel `{}`", decl.name),
                            )
                            .with_opt_span(decl.span.clone()));
                        }
                        project.channels.push(decl);
                    }
                    "scan" => {
                        self.pos += 1;
                        if project.scan.is_some() {
                            return Err(self.err(&t.span, "duplicate `scan` declaration"));
                        }
                        project.scan = Some(self.scan_decl()?);
                    }
                    "dac" => {
                        self.pos += 1;
                        let d = self.dac_decl()?;
                        if project.dac(&d.name).is_some() {
                            return Err(Diagnostic::new(
                                ErrorCode::DupName,
                                format!("duplicate dac `{}`", d.name),
                            )
                            .with_span(t.span.clone()));
                        }
                        project.dacs.push(d);
                    }
                    "pcm" => {
                        self.pos += 1;
                        let d = self.pcm_decl()?;
                        if project.pcm(&d.name).is_some() {
                            return Err(Diagnostic::new(
                                ErrorCode::DupName,
                                format!("duplicate pcm source `{}`", d.name),
                            )
                            .with_span(t.span.clone()));
                        }
                        project.pcm_sources.push(d);
                    }
                    "import" => {
                        self.pos += 1;
                        let t = self.next();
                        match t.tok {
                            Tok::Str(path) => project.imports.push(path),
                            other => {
                                return Err(self.err(
                                    &t.span,
                                    format!("expected import path string, found {}", other.describe()),
                                ))
                            }
                        }
                    }
                    "clip" => {
                        self.pos += 1;
                        let (name, span) = self.ident("clip instance name")?;
                        self.expect_kw("uses")?;
                        let (desc, _) = self.ident("descriptor name")?;
                        if project.clips.iter().any(|(n, _)| *n == name) {
                            return Err(Diagnostic::new(
                                ErrorCode::DupName,
                                format!("duplicate clip `{}`", name),
                            )
                            .with_span(span));
                        }
                        project.clips.push((name, desc));
                    }
                    "vi" => {
                        self.pos += 1;
                        let vi = self.vi_def()?;
                        if project.vis.contains_key(&vi.name) {
                            return Err(Diagnostic::new(
                                ErrorCode::DupName,
                                format!("duplicate VI `{}`", vi.name),
                            )
                            .with_span(t.span.clone()));
                        }
                        vi_order.push(vi.name.clone());
                        project.vis.insert(vi.name.clone(), vi);
                    }
                    other => {
                        return Err(self.err(
                            &t.span,
                            format!(
                                "expected a declaration (top/clock/channel/register/scan/dac/pcm/import/clip/vi), found `{}`",
                                other
                            ),
                        ))
                    }
                },
                other => {
                    return Err(
                        self.err(&t.span, format!("expected a declaration, found {}", other.describe()))
                    )
                }
            }
        }

        project.top = match top_decl {
            Some((name, _)) => name,
            None if project.vis.contains_key("Main") => "Main".to_string(),
            None if vi_order.len() == 1 => vi_order[0].clone(),
            None => String::new(),
        };
        Ok(project)
    }

    fn side(&mut self) -> Result<Side, Diagnostic> {
        let (s, span) = self.ident("`host` or `fabric`")?;
        match s.as_str() {
            "host" => Ok(Side::Host),
            "fabric" => Ok(Side::Fabric),
            other => Err(self.err(&span, format!("expected `host` or `fabric`, found `{}`", other))),
        }
    }

    fn fifo_decl(&mut self) -> Result<ChannelDecl, Diagnostic> {
        let (name, span) = self.ident("channel name")?;
        self.expect_kw("fifo")?;
        self.expect_tok(Tok::Lt, "`<`")?;
        let elem = self.wire_type()?;
        self.expect_tok(Tok::Comma, "`,`")?;
        let (cap, cap_span) = self.uint("fifo capacity")?;
        self.expect_tok(Tok::Gt, "`>`")?;
        if cap == 0 {
            return Err(self.err(&cap_span, "fifo capacity must be >= 1"));
        }
        let from = self.side()?;
        self.expect_tok(Tok::Arrow, "`->`")?;
        let to = self.side()?;
        Ok(ChannelDecl {
            name,
            kind: ChannelKind::Fifo { elem, capacity: cap as usize, from, to },
            span: Some(span),
        })
    }

    fn register_decl(&mut self) -> Result<ChannelDecl, Diagnostic> {
        let (name, span) = self.ident("register name")?;
        self.expect_tok(Tok::Lt, "`<`")?;
        let elem = self.wire_type()?;
        self.expect_tok(Tok::Gt, "`>`")?;
        let init = if self.eat_kw("init") {
            self.literal(&elem)?
        } else {
            elem.default_value()
        };
        Ok(ChannelDecl { name, kind: ChannelKind::Register { elem, init }, span: Some(span) })
    }

    fn scan_decl(&mut self) -> Result<ScanConfig, Diagnostic> {
        let (period, span) = self.uint("scan period in us")?;
        self.expect_kw("us")?;
        if period == 0 {
            return Err(self.err(&span, "scan period must be > 0"));
        }
        self.expect_tok(Tok::LBrace, "`{`")?;
        let mut channels = Vec::new();
        loop {
            if self.peek().tok == Tok::RBrace {
                self.pos += 1;
                break;
            }
            let (kw, span) = self.ident("`in` or `out`")?;
            let dir = match kw.as_str() {
                "in" => ScanDir::In,
                "out" => ScanDir::Out,
                other => {
                    return Err(self.err(&span, format!("expected `in` or `out`, found `{}`", other)))
                }
            };
            let (name, nspan) = self.ident("scan channel name")?;
            self.expect_tok(Tok::Colon, "`:`")?;
            let ty = self.wire_type()?;
            let (gain, offset) = if self.eat_kw("units") {
                (self.float_lit()?, self.float_lit()?)
            } else {
                (1.0, 0.0)
            };
            if channels.iter().any(|c: &ScanChannel| c.name == name) {
                return Err(Diagnostic::new(
                    ErrorCode::DupName,
                    format!("duplicate scan channel `{}`", name),
                )
                .with_span(nspan));
            }
            channels.push(ScanChannel { name, dir, ty, gain, offset });
        }
        Ok(ScanConfig { period_us: period, channels })
    }

    fn dac_decl(&mut self) -> Result<DacDecl, Diagnostic> {
        let (name, _) = self.ident("dac name")?;
        let (rate, rspan) = self.uint("sample rate in Hz")?;
        self.expect_kw("Hz")?;
        if rate == 0 {
            return Err(self.err(&rspan, "dac sample rate must be > 0"));
        }
        self.expect_kw("clock")?;
        let (clock, _) = self.ident("clock name")?;
        let buffer = if self.eat_kw("buffer") { self.uint("buffer size")?.0 as usize } else { 64 };
        Ok(DacDecl { name, sample_rate_hz: rate, clock, buffer })
    }

    fn pcm_decl(&mut self) -> Result<PcmDecl, Diagnostic> {
        let (name, _) = self.ident("pcm source name")?;
        self.expect_kw("rate")?;
        let (rate, rspan) = self.uint("sample rate in Hz")?;
        if rate == 0 {
            return Err(self.err(&rspan, "pcm rate must be > 0"));
        }
        let file = if self.eat_kw("file") {
            let t = self.next();
            match t.tok {
                Tok::Str(s) => Some(s),
                other => {
                    return Err(
                        self.err(&t.span, format!("expected file path string, found {}", other.describe()))
                    )
                }
            }
        } else {
            None
        };
        Ok(PcmDecl { name, rate_hz: rate, file })
    }

    // ---- types and literals ---------------------------------------------

    fn wire_type(&mut self) -> Result<WireType, Diagnostic> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => match s.as_str() {
                "bool" => Ok(WireType::Bool),
                "i32" => Ok(WireType::Int32),
                "f64" => Ok(WireType::Float64),
                "fxp" => {
                    self.expect_tok(Tok::Lt, "`<`")?;
                    let (w, wspan) = self.uint("word bits")?;
                    self.expect_tok(Tok::Comma, "`,`")?;
                    let (i, _) = self.int_signed("integer bits")?;
                    self.expect_tok(Tok::Gt, "`>`")?;
                    let w32: u32 = w.try_into().map_err(|_| {
                        self.err(&wspan, "fixed-point word bits out of range (1..=64)")
                    })?;
                    let i32v: i32 = i
                        .try_into()
                        .map_err(|_| self.err(&wspan, "fixed-point integer bits out of range"))?;
                    WireType::fxp(w32, i32v).ok_or_else(|| {
                        self.err(
                            &wspan,
                            format!("invalid fixed-point type fxp<{},{}> (need 0 < W <= 64, -64 <= I <= W)", w, i),
                        )
                    })
                }
                other => Err(self.err(&t.span, format!("expected a type, found `{}`", other))),
            },
            Tok::LBracket => {
                let elem = self.wire_type()?;
                self.expect_tok(Tok::Semi, "`;`")?;
                let (len, _) = self.uint("array length")?;
                self.expect_tok(Tok::RBracket, "`]`")?;
                Ok(WireType::array(elem, len as usize))
            }
            other => Err(self.err(&t.span, format!("expected a type, found {}", other.describe()))),
        }
    }

    fn float_lit(&mut self) -> Result<f64, Diagnostic> {
        let neg = if self.peek().tok == Tok::Minus {
            self.pos += 1;
            true
        } else {
            false
        };
        let t = self.next();
        let v = match t.tok {
            Tok::Float(v) => v,
            Tok::Int(v) => v as f64,
            other => {
                return Err(self.err(&t.span, format!("expected a number, found {}", other.describe())))
            }
        };
        Ok(if neg { -v } else { v })
    }

    fn literal(&mut self, ty: &WireType) -> Result<Value, Diagnostic> {
        let span = self.peek().span.clone();
        match ty {
            WireType::Bool => {
                let (s, span) = self.ident("`true` or `false`")?;
                match s.as_str() {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    other => {
                        Err(self.err(&span, format!("expected `true` or `false`, found `{}`", other)))
                    }
                }
            }
            WireType::Int32 => {
                let (v, span) = self.int_signed("integer literal")?;
                let v32: i32 = v
                    .try_into()
                    .map_err(|_| self.err(&span, "integer literal out of i32 range"))?;
                Ok(Value::Int32(v32))
            }
            WireType::Float64 => Ok(Value::Float64(self.float_lit()?)),
            WireType::Fxp { word_bits, int_bits } => {
                if self.eat_kw("raw") {
                    let (raw, rspan) = self.int_signed("raw fixed-point value")?;
                    let max = FxpValue::max_raw(*word_bits) as i128;
                    let min = FxpValue::min_raw(*word_bits) as i128;
                    if raw < min || raw > max {
                        return Err(self.err(&rspan, "raw value out of range for word width"));
                    }
                    Ok(Value::Fxp(FxpValue {
                        word_bits: *word_bits,
                        int_bits: *int_bits,
                        raw: raw as i64,
                    }))
                } else {
                    let x = self.float_lit()?;
                    Ok(Value::Fxp(FxpValue::from_f64(
                        x,
                        *word_bits,
                        *int_bits,
                        OverflowMode::Saturate,
                    )))
                }
            }
            WireType::Array { .. } | WireType::Cluster(_) => Err(self.err(
                &span,
                "array/cluster literals are not supported; build them with ArrayBuild",
            )),
        }
    }

    // ---- VI bodies --------------------------------------------------------

    fn vi_def(&mut self) -> Result<ViGraph, Diagnostic> {
        let (name, _) = self.ident("VI name")?;
        let target = if self.eat_kw("target") {
            Some(match self.side()? {
                Side::Host => Target::Host,
                Side::Fabric => Target::Fabric,
            })
        } else {
            None
        };
        self.expect_tok(Tok::LBrace, "`{`")?;
        let scope = self.items(Ctx::Vi)?;
        let (diagram, _, _, _) = scope.finish();
        Ok(ViGraph { name, diagram, target })
    }

    /// Parses items until the closing `}` of the current block.
    fn items(&mut self, ctx: Ctx) -> Result<ScopeAcc, Diagnostic> {
        let mut acc = ScopeAcc::default();
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::RBrace => {
                    self.pos += 1;
                    return Ok(acc);
                }
                Tok::Eof => {
                    return Err(self.err(&t.span, "unexpected end of input inside block"));
                }
                Tok::Ident(kw) => match kw.as_str() {
                    "control" => {
                        self.pos += 1;
                        let (name, _) = self.ident("control name")?;
                        self.expect_tok(Tok::Colon, "`:`")?;
                        let ty = self.wire_type()?;
                        acc.controls.push(Port { name, ty });
                    }
                    "indicator" => {
                        self.pos += 1;
                        let (name, _) = self.ident("indicator name")?;
                        self.expect_tok(Tok::Colon, "`:`")?;
                        let ty = self.wire_type()?;
                        acc.indicators.push(Port { name, ty });
                    }
                    "node" => {
                        self.pos += 1;
                        let node = self.node_item()?;
                        acc.nodes.push(node);
                    }
                    "wire" => {
                        self.pos += 1;
                        let span = t.span.clone();
                        let src = self.endpoint()?;
                        self.expect_tok(Tok::Arrow, "`->`")?;
                        let dst = self.endpoint()?;
                        acc.raw_wires.push((src, dst, span));
                    }
                    "shiftreg" => {
                        if !matches!(ctx, Ctx::While | Ctx::For | Ctx::Sctl) {
                            return Err(self.err(&t.span, "`shiftreg` is only allowed inside loops"));
                        }
                        self.pos += 1;
                        let (name, _) = self.ident("shift register name")?;
                        self.expect_tok(Tok::Colon, "`:`")?;
                        let ty = self.wire_type()?;
                        self.expect_kw("init")?;
                        let init = self.literal(&ty)?;
                        acc.shift_regs.push(ShiftRegister { name, ty, init });
                    }
                    "param" => {
                        if ctx != Ctx::Sctl {
                            return Err(self
                                .err(&t.span, "`param` is only allowed inside single-cycle loops"));
                        }
                        self.pos += 1;
                        let (name, _) = self.ident("param name")?;
                        self.expect_tok(Tok::Colon, "`:`")?;
                        self.expect_kw("i32")?;
                        let init = if self.eat_kw("init") {
                            let (v, vspan) = self.int_signed("param initial value")?;
                            v.try_into()
                                .map_err(|_| self.err(&vspan, "param initial value out of i32 range"))?
                        } else {
                            0
                        };
                        let channel =
                            if self.eat_kw("from") { Some(self.ident("register channel name")?.0) } else { None };
                        acc.params.push(SctlParam { name, init, channel });
                    }
                    "stop" => {
                        if ctx != Ctx::While {
                            return Err(self.err(&t.span, "`stop` is only allowed inside while loops"));
                        }
                        self.pos += 1;
                        let (name, span) = self.ident("stop indicator name")?;
                        if acc.stop_port.is_some() {
                            return Err(self.err(&span, "duplicate `stop` declaration"));
                        }
                        acc.stop_port = Some(name);
                    }
                    "while" => {
                        self.pos += 1;
                        let node = self.structure_item(Ctx::While, &t.span)?;
                        acc.nodes.push(node);
                    }
                    "for" => {
                        self.pos += 1;
                        let node = self.structure_item(Ctx::For, &t.span)?;
                        acc.nodes.push(node);
                    }
                    "case" => {
                        self.pos += 1;
                        let node = self.case_item(&t.span)?;
                        acc.nodes.push(node);
                    }
                    "sctl" => {
                        self.pos += 1;
                        let node = self.sctl_item(&t.span)?;
                        acc.nodes.push(node);
                    }
                    other => {
                        return Err(self.err(
                            &t.span,
                            format!("expected an item (control/indicator/node/wire/...), found `{}`", other),
                        ))
                    }
                },
                other => {
                    return Err(
                        self.err(&t.span, format!("expected an item, found {}", other.describe()))
                    )
                }
            }
        }
    }

    fn endpoint(&mut self) -> Result<Endpoint, Diagnostic> {
        let (first, _) = self.ident("endpoint")?;
        if self.peek().tok == Tok::Dot {
            self.pos += 1;
            let (port, _) = self.ident("port name")?;
            Ok(nport(first, port))
        } else {
            Ok(bport(first))
        }
    }

    fn hls_directives(&mut self) -> Result<Option<HlsDirectives>, Diagnostic> {
        if self.eat_kw("unroll") {
            let (u, uspan) = self.uint("unroll factor")?;
            if u == 0 {
                return Err(self.err(&uspan, "unroll factor must be >= 1"));
            }
            let target_ii = if self.eat_kw("target_ii") {
                Some(self.uint("target initiation interval")?.0 as u32)
            } else {
                None
            };
            Ok(Some(HlsDirectives { unroll: u as u32, target_ii }))
        } else {
            Ok(None)
        }
    }

    fn structure_item(&mut self, ctx: Ctx, span: &SourceSpan) -> Result<Node, Diagnostic> {
        let (id, _) = self.ident("loop name")?;
        let mut stop_override = None;
        if ctx == Ctx::While && self.eat_kw("stop") {
            stop_override = Some(self.ident("stop indicator name")?.0);
        }
        let hls = self.hls_directives()?;
        self.expect_tok(Tok::LBrace, "`{`")?;
        let scope = self.items(ctx)?;
        let (body, shift_regs, _, stop_in_body) = scope.finish();
        let structure = match ctx {
            Ctx::While => {
                let stop_port =
                    stop_override.or(stop_in_body).unwrap_or_else(|| "stop".to_string());
                StructureNode::While(WhileLoop { body, stop_port, shift_regs, hls })
            }
            Ctx::For => StructureNode::For(ForLoop { body, shift_regs, hls }),
            _ => unreachable!(),
        };
        Ok(Node {
            id,
            op: NodeOp::Structure(Box::new(structure)),
            target_hint: TargetHint::Inherit,
            span: Some(span.clone()),
        })
    }

    fn case_item(&mut self, span: &SourceSpan) -> Result<Node, Diagnostic> {
        let (id, _) = self.ident("case name")?;
        self.expect_tok(Tok::LBrace, "`{`")?;
        let mut cases: Vec<(i32, Diagram)> = Vec::new();
        let mut default: Option<Diagram> = None;
        loop {
            let t = self.next();
            match &t.tok {
                Tok::RBrace => break,
                Tok::Ident(kw) if kw == "of" => {
                    let (sel, sspan) = self.int_signed("selector value")?;
                    let sel32: i32 = sel
                        .try_into()
                        .map_err(|_| self.err(&sspan, "selector value out of i32 range"))?;
                    self.expect_tok(Tok::LBrace, "`{`")?;
                    let (body, _, _, _) = self.items(Ctx::Case)?.finish();
                    cases.push((sel32, body));
                }
                Tok::Ident(kw) if kw == "default" => {
                    self.expect_tok(Tok::LBrace, "`{`")?;
                    let (body, _, _, _) = self.items(Ctx::Case)?.finish();
                    if default.is_some() {
                        return Err(self.err(&t.span, "duplicate `default` branch"));
                    }
                    default = Some(body);
                }
                other => {
                    return Err(self.err(
                        &t.span,
                        format!("expected `of`, `default` or `}}`, found {}", other.describe()),
                    ))
                }
            }
        }
        let default = default
            .ok_or_else(|| self.err(span, format!("case `{}` has no `default` branch", id)))?;
        cases.sort_by_key(|(v, _)| *v);
        Ok(Node {
            id,
            op: NodeOp::Structure(Box::new(StructureNode::Case(CaseStructure { cases, default }))),
            target_hint: TargetHint::Inherit,
            span: Some(span.clone()),
        })
    }

    fn sctl_item(&mut self, span: &SourceSpan) -> Result<Node, Diagnostic> {
        let (id, _) = self.ident("loop name")?;
        self.expect_kw("clock")?;
        let (clock, _) = self.ident("clock name")?;
        self.expect_tok(Tok::LBrace, "`{`")?;
        let scope = self.items(Ctx::Sctl)?;
        let (body, shift_regs, params, _) = scope.finish();
        Ok(Node {
            id,
            op: NodeOp::Structure(Box::new(StructureNode::Sctl(SctlLoop {
                body,
                clock,
                params,
                shift_regs,
            }))),
            target_hint: TargetHint::Inherit,
            span: Some(span.clone()),
        })
    }

    fn node_item(&mut self) -> Result<Node, Diagnostic> {
        let (id, id_span) = self.ident("node name")?;
        self.expect_tok(Tok::Colon, "`:`")?;
        let (prim, prim_span) = self.ident("primitive or `sub`")?;
        let op = match prim.as_str() {
            "sub" => {
                let (vi, _) = self.ident("sub-VI name")?;
                NodeOp::SubVi(vi)
            }
            "Add" => NodeOp::Prim(PrimOp::Add),
            "Sub" => NodeOp::Prim(PrimOp::Sub),
            "Mul" => NodeOp::Prim(PrimOp::Mul),
            "Div" => NodeOp::Prim(PrimOp::Div),
            "Gt" => NodeOp::Prim(PrimOp::Gt),
            "Lt" => NodeOp::Prim(PrimOp::Lt),
            "Eq" => NodeOp::Prim(PrimOp::Eq),
            "And" => NodeOp::Prim(PrimOp::And),
            "Or" => NodeOp::Prim(PrimOp::Or),
            "Not" => NodeOp::Prim(PrimOp::Not),
            "Select" => NodeOp::Prim(PrimOp::Select),
            "Biquad" => NodeOp::Prim(PrimOp::Biquad),
            "ArrayIndex" => NodeOp::Prim(PrimOp::ArrayIndex),
            "ArrayBuild" => {
                let (n, _) = self.uint("element count")?;
                NodeOp::Prim(PrimOp::ArrayBuild(n as usize))
            }
            "Const" => {
                let ty = self.wire_type()?;
                let v = self.literal(&ty)?;
                NodeOp::Prim(PrimOp::Const(v))
            }
            "Convert" => {
                let to = self.wire_type()?;
                let mode = if self.eat_kw("wrap") {
                    OverflowMode::Wrap
                } else {
                    self.eat_kw("sat");
                    OverflowMode::Saturate
                };
                NodeOp::Prim(PrimOp::Convert { to, mode })
            }
            "FifoRead" | "FifoWrite" => {
                let (channel, _) = self.ident("channel name")?;
                let timeout = if self.eat_kw("timeout") {
                    if self.eat_kw("inf") {
                        Timeout::Infinite
                    } else {
                        Timeout::Ticks(self.uint("timeout in ticks")?.0)
                    }
                } else {
                    Timeout::Infinite
                };
                if prim == "FifoRead" {
                    NodeOp::Prim(PrimOp::FifoRead { channel, timeout })
                } else {
                    NodeOp::Prim(PrimOp::FifoWrite { channel, timeout })
                }
            }
            "RegRead" => NodeOp::Prim(PrimOp::RegRead { channel: self.ident("channel name")?.0 }),
            "RegWrite" => NodeOp::Prim(PrimOp::RegWrite { channel: self.ident("channel name")?.0 }),
            "ScanRead" => NodeOp::Prim(PrimOp::ScanRead { channel: self.ident("scan channel")?.0 }),
            "ScanWrite" => {
                NodeOp::Prim(PrimOp::ScanWrite { channel: self.ident("scan channel")?.0 })
            }
            "AoReady" => NodeOp::Prim(PrimOp::AoReady { dac: self.ident("dac name")?.0 }),
            "AoWrite" => NodeOp::Prim(PrimOp::AoWrite { dac: self.ident("dac name")?.0 }),
            "FileReadPCM" => {
                NodeOp::Prim(PrimOp::FileReadPcm { source: self.ident("pcm source name")?.0 })
            }
            "Ipin" => NodeOp::Prim(PrimOp::Ipin { name: self.ident("IP name")?.0 }),
            other => {
                return Err(Diagnostic::new(
                    ErrorCode::UnknownPrimitive,
                    format!("unknown primitive `{}`", other),
                )
                .with_span(prim_span))
            }
        };
        let target_hint = if self.eat_kw("target") {
            match self.side()? {
                Side::Host => TargetHint::Host,
                Side::Fabric => TargetHint::Fabric,
            }
        } else {
            TargetHint::Inherit
        };
        Ok(Node { id, op, target_hint, span: Some(id_span) })
    }
}
