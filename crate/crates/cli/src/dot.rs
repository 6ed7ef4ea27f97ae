//! Graphviz rendering of opacity graphs.

use std::fmt::Write;

use otm_core::opacity::{Colour, OpacityGraph};

fn colour(c: Colour) -> &'static str {
    match c {
        Colour::Red => "red",
        Colour::Black => "black",
    }
}

/// Vertices in `≪` order; edges labelled with the rule numbers that produced them.
pub fn render(g: &OpacityGraph) -> String {
    let mut out = String::from("digraph opg {\n  rankdir=LR;\n");
    for k in g.order() {
        let c = colour(g.colour(*k).unwrap_or(Colour::Black));
        writeln!(out, "  \"{k}\" [color={c}, fontcolor={c}];").unwrap();
    }
    for (from, to, c) in g.edges() {
        let rules = g.edge_rules(from, to).map(|r| r.numbers()).unwrap_or_default();
        let label = rules.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
        let style = if g.merges().contains(&(from, to)) { ", style=bold" } else { "" };
        writeln!(out, "  \"{from}\" -> \"{to}\" [color={}, label=\"{label}\"{style}];", colour(c)).unwrap();
    }
    out.push_str("}\n");
    out
}
