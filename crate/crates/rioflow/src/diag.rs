//! Diagnostics: stable error codes, source spans, and the diagnostic record
//! every analysis pass emits.
//!
//! Passes never panic on user input. Structural checks return a list of
//! [`Diagnostic`]s; an empty list means the input is clean.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Location of a construct in a `.gtext` source file. Lines and columns are
/// 1-based; `length` is in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl SourceSpan {
    pub fn new(file: impl Into<String>, line: u32, column: u32, length: u32) -> Self {
        debug_assert!(line >= 1 && column >= 1);
        SourceSpan { file: file.into(), line, column, length }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

/// Stable, machine-readable error codes. The `Display` form (`E_*`) is part
/// of the CLI contract and never changes meaning between releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    MultiDriver,
    Cycle,
    Syntax,
    UnknownPrimitive,
    DupName,
    DupPort,
    DupChannel,
    UnknownEndpoint,
    Unwired,
    Recursion,
    UnresolvedSubvi,
    TypeMismatch,
    Type,
    BoundaryWire,
    HostPrimInFabric,
    SctlTiming,
    SctlIllegalNode,
    Deadlock,
    Limit,
    Runtime,
    IpSchema,
    IpClockUndeclared,
    TargetUnreachable,
    ScanOverrun,
    Underrun,
    Overflow,
    ChannelOwnership,
    ChannelSide,
    Io,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        use ErrorCode::*;
        match self {
            MultiDriver => "E_MULTI_DRIVER",
            Cycle => "E_CYCLE",
            Syntax => "E_SYNTAX",
            UnknownPrimitive => "E_UNKNOWN_PRIMITIVE",
            DupName => "E_DUP_NAME",
            DupPort => "E_DUP_PORT",
            DupChannel => "E_DUP_CHANNEL",
            UnknownEndpoint => "E_UNKNOWN_ENDPOINT",
            Unwired => "E_UNWIRED",
            Recursion => "E_RECURSION",
            UnresolvedSubvi => "E_UNRESOLVED_SUBVI",
            TypeMismatch => "E_TYPE_MISMATCH",
            Type => "E_TYPE",
            BoundaryWire => "E_BOUNDARY_WIRE",
            HostPrimInFabric => "E_HOST_PRIM_IN_FABRIC",
            SctlTiming => "E_SCTL_TIMING",
            SctlIllegalNode => "E_SCTL_ILLEGAL_NODE",
            Deadlock => "E_DEADLOCK",
            Limit => "E_LIMIT",
            Runtime => "E_RUNTIME",
            IpSchema => "E_IP_SCHEMA",
            IpClockUndeclared => "E_IP_CLOCK_UNDECLARED",
            TargetUnreachable => "E_TARGET_UNREACHABLE",
            ScanOverrun => "E_SCAN_OVERRUN",
            Underrun => "E_UNDERRUN",
            Overflow => "E_OVERFLOW",
            ChannelOwnership => "E_CHANNEL_OWNERSHIP",
            ChannelSide => "E_CHANNEL_SIDE",
            Io => "E_IO",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One finding from a structural or semantic check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
    /// Node the finding is anchored to, when it concerns one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

impl Diagnostic {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Diagnostic { code, message: message.into(), span: None, node: None }
    }

    pub fn with_span(mut self, span: SourceSpan) -> Self {
        self.span = Some(span);
        self
    }

    pub fn with_opt_span(mut self, span: Option<SourceSpan>) -> Self {
        self.span = span;
        self
    }

    pub fn with_node(mut self, node: impl Into<String>) -> Self {
        self.node = Some(node.into());
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.span {
            Some(s) => write!(f, "{}: {}: {}", s, self.code, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

/// Toolchain-level error: either a batch of diagnostics from a check pass or
/// a single fault from execution.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("{}", format_diags(.0))]
    Check(Vec<Diagnostic>),
    #[error("{0}")]
    Fault(Diagnostic),
}

impl Error {
    pub fn fault(code: ErrorCode, message: impl Into<String>) -> Self {
        Error::Fault(Diagnostic::new(code, message))
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Check(v) => v.first().map(|d| d.code).unwrap_or(ErrorCode::Type),
            Error::Fault(d) => d.code,
        }
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            Error::Check(v) => v.clone(),
            Error::Fault(d) => vec![d.clone()],
        }
    }
}

fn format_diags(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
