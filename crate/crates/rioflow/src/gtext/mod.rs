//! Textual front-end and serializer for projects: the `.gtext` language.
//!
//! `.gtext` is UTF-8, `#` comments to end of line, `{}` blocks:
//!
//! ```text
//! top Main
//! clock fck 40000000 Hz
//! channel audio fifo<fxp<16,16>, 64> host -> fabric
//! register tps <i32>
//!
//! vi Main {
//!   control a: f64
//!   control b: f64
//!   indicator s: f64
//!   node n1: Add
//!   wire a -> n1.x
//!   wire b -> n1.y
//!   wire n1.sum -> s
//! }
//! ```
//!
//! [`parse`] only returns projects that pass structural validation;
//! [`format_project`] emits the canonical form (VIs sorted by name, nodes in
//! topo-then-id order, one declaration per line) and is a fixpoint under
//! parse-then-format.

mod format;
mod lex;
mod parse;

pub use format::{format_project, literal_str, type_str};
pub use parse::parse;

use crate::ir::{Diagram, NodeOp, Project, StructureNode, Wire};

/// Reads and parses a project file.
pub fn parse_file(path: &std::path::Path) -> crate::diag::Result<Project> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        crate::diag::Error::fault(
            crate::diag::ErrorCode::Io,
            format!("cannot read {}: {}", path.display(), e),
        )
    })?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("project.gtext");
    parse(&text, name).map_err(crate::diag::Error::Check)
}

/// Reorders a project into a declaration-order-independent form: nodes by
/// id, wires by endpoints, channels and target declarations by name. Two
/// projects that differ only in declaration order normalize identically;
/// connector panes (control/indicator order) are meaningful and preserved.
pub fn normalize(p: &Project) -> Project {
    let mut out = p.clone();
    for c in &mut out.channels {
        c.span = None;
    }
    out.channels.sort_by(|a, b| a.name.cmp(&b.name));
    out.dacs.sort_by(|a, b| a.name.cmp(&b.name));
    out.pcm_sources.sort_by(|a, b| a.name.cmp(&b.name));
    out.imports.sort();
    out.clips.sort();
    for vi in out.vis.values_mut() {
        normalize_diagram(&mut vi.diagram);
    }
    out
}

fn normalize_diagram(d: &mut Diagram) {
    for n in &mut d.nodes {
        if let NodeOp::Structure(s) = &mut n.op {
            match s.as_mut() {
                StructureNode::While(w) => normalize_diagram(&mut w.body),
                StructureNode::For(f) => normalize_diagram(&mut f.body),
                StructureNode::Case(c) => {
                    for (_, b) in &mut c.cases {
                        normalize_diagram(b);
                    }
                    normalize_diagram(&mut c.default);
                }
                StructureNode::Sctl(sc) => normalize_diagram(&mut sc.body),
            }
        }
        // Spans are layout metadata, not structure.
        n.span = None;
    }
    d.nodes.sort_by(|a, b| a.id.cmp(&b.id));
    // Fan-out sharing a source merges into one wire.
    let mut merged: Vec<Wire> = Vec::new();
    for w in std::mem::take(&mut d.wires) {
        match merged.iter_mut().find(|m| m.src == w.src) {
            Some(m) => m.dsts.extend(w.dsts),
            None => merged.push(Wire { src: w.src, dsts: w.dsts, span: None, dst_spans: Vec::new() }),
        }
    }
    for w in &mut merged {
        w.dsts.sort();
    }
    merged.sort_by(|a, b| a.src.cmp(&b.src));
    d.wires = merged;
}
