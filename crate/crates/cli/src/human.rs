//! Plain-text rendering of reports for `--human`.

use std::collections::BTreeMap;
use std::fmt::Write;

use otm_core::value::Value;

use crate::runner::{verdict_name, CheckReport, MainOutcome, OpacityReport, Report, ScenarioInfo};

fn heap(map: &BTreeMap<String, Value>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn outcome(o: &MainOutcome) -> String {
    match o {
        MainOutcome::Returned(v) => format!("returned {v}"),
        MainOutcome::Threw(e) => format!("threw {e}"),
        MainOutcome::Running => "still running".into(),
    }
}

fn opacity(out: &mut String, o: &OpacityReport) {
    let v = &o.verdict;
    writeln!(out, "consistent:  {}", o.consistent).unwrap();
    writeln!(out, "opaque:      {}{}", v.opaque, if v.heuristic { " (canonical order only)" } else { "" }).unwrap();
    if let Some(w) = &v.witness {
        let order: Vec<String> = w.iter().map(ToString::to_string).collect();
        writeln!(out, "witness:     {}", order.join(" << ")).unwrap();
    }
    if let Some(viol) = &v.violation {
        writeln!(out, "violation:   {viol:?}").unwrap();
    }
    writeln!(out, "red forest:  {}", o.forest).unwrap();
}

pub fn report(r: &Report) -> String {
    let mut out = String::new();
    match r {
        Report::Single(s) => {
            writeln!(out, "scenario:    {} {:?}", s.scenario, s.params).unwrap();
            writeln!(out, "verdict:     {}{}", verdict_name(s.verdict), if s.blocking_expected { " (blocking expected)" } else { "" }).unwrap();
            writeln!(out, "steps:       {} ({} events)", s.steps, s.events).unwrap();
            writeln!(out, "commits:     {}  aborts: {}  merges: {}  restarts: {}", s.commits, s.aborts, s.merges, s.restarts).unwrap();
            writeln!(out, "main thread: {}", outcome(&s.outcome)).unwrap();
            writeln!(out, "heap:        {}", heap(&s.heap)).unwrap();
            if !s.output.is_empty() {
                writeln!(out, "output:      {:?}", s.output).unwrap();
            }
            if let Some(d) = &s.opacity_detail {
                opacity(&mut out, d);
            }
        }
        Report::Explore(e) => {
            writeln!(out, "scenario:    {} {:?} (all schedules)", e.scenario, e.params).unwrap();
            writeln!(out, "states:      {}{}", e.states, if e.partial { " (state budget exhausted)" } else { "" }).unwrap();
            writeln!(out, "terminals:   {} {:?}", e.terminals.len(), e.verdicts).unwrap();
            for (i, t) in e.terminals.iter().enumerate() {
                writeln!(out, "  #{i}: {}, {}, heap {}", verdict_name(t.verdict), outcome(&t.outcome), heap(&t.heap)).unwrap();
            }
            if let Some(o) = e.opacity {
                writeln!(out, "opaque:      {o}").unwrap();
            }
        }
    }
    out
}

pub fn check(c: &CheckReport) -> String {
    let mut out = format!("events:      {}\ntransactions: {}\n", c.events, c.transactions);
    opacity(&mut out, &c.opacity);
    out
}

pub fn list(items: &[ScenarioInfo]) -> String {
    let mut out = String::new();
    for s in items {
        let params: Vec<String> = s.params.iter().map(|(k, v)| format!("--param {k}={v}")).collect();
        writeln!(out, "{:<22} {}", s.name, s.summary).unwrap();
        if !params.is_empty() {
            writeln!(out, "{:<22} {}", "", params.join(" ")).unwrap();
        }
    }
    out
}
