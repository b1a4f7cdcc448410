//! rioflow: a desk-scale heterogeneous dataflow toolchain.
//!
//! One textual dataflow language (`.gtext`) is compiled and co-executed
//! across two simulated engines: a host processor running asynchronous
//! dataflow firing semantics and an FPGA fabric running synchronous
//! single-cycle loops as clocked register-transfer netlists. The two sides
//! talk only through declared FIFO/register channels (with an explicit DMA
//! latency model at the boundary) and a scan-engine I/O layer that
//! publishes coherent snapshots of all I/O channels at a fixed period.
//!
//! Pipeline: [`gtext`] parses projects into the [`ir`], [`elaborate`]
//! expands sub-VI hierarchy, infers types, partitions host/fabric and
//! checks single-cycle timing feasibility; [`host`] executes the host
//! partition, [`fabric`] compiles loops to netlists and simulates them
//! cycle-accurately, [`comm`] and [`scan`] model the target's channels and
//! I/O, and [`cosim`] drives everything on one deterministic tick grid.

pub mod comm;
pub mod cosim;
pub mod demo;
pub mod diag;
pub mod elaborate;
pub mod fabric;
pub mod gtext;
pub mod host;
pub mod ir;
pub mod pcm;
pub mod scan;
pub mod trace;
pub mod value;

pub mod cli;

pub use diag::{Diagnostic, Error, ErrorCode, Result, SourceSpan};
pub use value::{ArrayValue, FxpValue, OverflowMode, Value, WireType};
