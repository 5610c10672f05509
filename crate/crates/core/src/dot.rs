//! Graphviz export, one fill colour per node category.

use std::fmt::Write;

use crate::graph::ComputationalGraph;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_dot(g: &ComputationalGraph) -> String {
    let mut out = String::from("digraph G {\n    node [style=filled];\n");
    for (id, rec) in g.records() {
        let _ = writeln!(
            out,
            "    {} [label={}, fillcolor={}];",
            quote(id),
            quote(&format!("{}\\n{}", id, rec.node.kind())),
            quote(rec.node.category().colour())
        );
    }
    for e in g.edges() {
        let _ = writeln!(out, "    {} -> {} [key={}];", quote(&e.src), quote(&e.dst), e.key);
    }
    out.push_str("}\n");
    out
}
