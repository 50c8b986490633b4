//! Leak reports: ordering, summary counts and the text and JSON renderings.

use std::fmt::Write as _;

use serde::Serialize;

use crate::edl::Pattern;
use crate::graphs::ValueFlowGraph;
use crate::points_to::PointsToResult;
use crate::sir::SirModule;
use crate::tracker::{LeakFinding, Risk};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SinkInfo {
    pub function: String,
    pub loc: String,
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SourceInfo {
    pub alloc: String,
    pub loc: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PathStep {
    pub node: String,
    pub loc: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub pattern: Pattern,
    pub risk: &'static str,
    pub sink: SinkInfo,
    pub source: SourceInfo,
    pub path: Vec<PathStep>,
    pub notes: Vec<String>,
    #[serde(skip)]
    sort_key: (Risk, Pattern, String, String, Vec<u32>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    #[serde(rename = "P1")]
    pub p1: usize,
    #[serde(rename = "P2")]
    pub p2: usize,
    #[serde(rename = "P3")]
    pub p3: usize,
    #[serde(rename = "P4")]
    pub p4: usize,
    #[serde(rename = "P5")]
    pub p5: usize,
    pub high: usize,
    pub total: usize,
}

impl Summary {
    pub fn count(&self, p: Pattern) -> usize {
        match p {
            Pattern::P1 => self.p1,
            Pattern::P2 => self.p2,
            Pattern::P3 => self.p3,
            Pattern::P4 => self.p4,
            Pattern::P5 => self.p5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeakReport {
    pub version: u32,
    pub findings: Vec<Finding>,
    pub summary: Summary,
    pub diagnostics: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

impl LeakReport {
    /// Orders findings high risk first, then by pattern, sink location and
    /// source location.
    pub fn new(
        m: &SirModule,
        vfg: &ValueFlowGraph,
        pts: &PointsToResult,
        findings: &[LeakFinding],
        diagnostics: Vec<String>,
    ) -> Self {
        let mut out: Vec<Finding> = findings
            .iter()
            .map(|f| {
                let src = vfg.node(f.source);
                let v = src.value.unwrap();
                let alloc = match pts.site_of_allocation(m, v) {
                    Some(s) => pts.site(s).label.clone(),
                    None => m.value_label(v),
                };
                let sink = SinkInfo {
                    function: m.function(f.sink.inst.func).name.clone(),
                    loc: f.sink.loc.clone(),
                    kind: f.sink.kind.name().to_string(),
                };
                let source = SourceInfo {
                    alloc,
                    loc: m.value_loc(v),
                };
                Finding {
                    pattern: f.pattern,
                    risk: f.risk.name(),
                    sort_key: (
                        f.risk,
                        f.pattern,
                        sink.loc.clone(),
                        source.loc.clone(),
                        f.path.iter().map(|n| n.0).collect(),
                    ),
                    sink,
                    source,
                    path: f
                        .path
                        .iter()
                        .map(|n| {
                            let node = vfg.node(*n);
                            PathStep {
                                node: format!("{} {}", n, node.label),
                                loc: node.loc.clone(),
                            }
                        })
                        .collect(),
                    notes: f.notes.clone(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.sort_key.cmp(&b.sort_key));
        let mut summary = Summary::default();
        for f in &out {
            match f.pattern {
                Pattern::P1 => summary.p1 += 1,
                Pattern::P2 => summary.p2 += 1,
                Pattern::P3 => summary.p3 += 1,
                Pattern::P4 => summary.p4 += 1,
                Pattern::P5 => summary.p5 += 1,
            }
            if f.risk == "high" {
                summary.high += 1;
            }
        }
        summary.total = out.len();
        LeakReport {
            version: 1,
            findings: out,
            summary,
            diagnostics,
        }
    }

    pub fn emit(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Text => self.to_text(),
        }
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, f) in self.findings.iter().enumerate() {
            let _ = writeln!(
                out,
                "[{}] {} risk: {} at {} in {} leaks {} ({})",
                f.pattern, f.risk, f.sink.kind, f.sink.loc, f.sink.function, f.source.alloc, f.source.loc
            );
            for (k, step) in f.path.iter().enumerate() {
                let arrow = if k == 0 { "   " } else { "-> " };
                let _ = writeln!(out, "    {arrow}{} ({})", step.node, step.loc);
            }
            for n in &f.notes {
                let _ = writeln!(out, "    note: {n}");
            }
            if i + 1 < self.findings.len() {
                out.push('\n');
            }
        }
        let s = &self.summary;
        if !self.findings.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{} finding(s), {} high risk: P1={} P2={} P3={} P4={} P5={}",
            s.total, s.high, s.p1, s.p2, s.p3, s.p4, s.p5
        );
        for d in &self.diagnostics {
            let _ = writeln!(out, "warning: {d}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finding(pattern: Pattern, risk: Risk, sink_loc: &str) -> Finding {
        Finding {
            pattern,
            risk: risk.name(),
            sink: SinkInfo {
                function: "f".into(),
                loc: sink_loc.into(),
                kind: "store".into(),
            },
            source: SourceInfo {
                alloc: "stack:f:%k".into(),
                loc: "a.c:1".into(),
            },
            path: vec![],
            notes: vec![],
            sort_key: (risk, pattern, sink_loc.into(), "a.c:1".into(), vec![]),
        }
    }

    #[test]
    fn empty_report_json() {
        let r = LeakReport {
            version: 1,
            findings: vec![],
            summary: Summary::default(),
            diagnostics: vec![],
        };
        let v: serde_json::Value = serde_json::from_str(&r.emit(Format::Json)).unwrap();
        assert_eq!(v["findings"].as_array().unwrap().len(), 0);
        assert_eq!(v["summary"]["total"], 0);
        assert_eq!(v["summary"]["P1"], 0);
        assert!(r.emit(Format::Text).starts_with("0 finding(s)"));
    }

    #[test]
    fn json_field_order_is_stable() {
        let f = finding(Pattern::P1, Risk::Normal, "a.c:9");
        let r = LeakReport {
            version: 1,
            findings: vec![f],
            summary: Summary {
                p1: 1,
                total: 1,
                ..Summary::default()
            },
            diagnostics: vec![],
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"version":1,"findings":[{"pattern":"P1","risk":"normal","sink":{"function":"f","loc":"a.c:9","kind":"store"},"source":{"alloc":"stack:f:%k","loc":"a.c:1"},"path":[],"notes":[]}],"summary":{"P1":1,"P2":0,"P3":0,"P4":0,"P5":0,"high":0,"total":1},"diagnostics":[]}"#
        );
    }

    #[test]
    fn high_risk_sorts_first() {
        let mut v = [
            finding(Pattern::P1, Risk::Normal, "a.c:1"),
            finding(Pattern::P3, Risk::High, "a.c:5"),
            finding(Pattern::P2, Risk::High, "a.c:7"),
        ];
        v.sort_by(|a, b| a.sort_key.cmp(&b.sort_key));
        let order: Vec<_> = v.iter().map(|f| (f.risk, f.pattern)).collect();
        assert_eq!(order, vec![("high", Pattern::P2), ("high", Pattern::P3), ("normal", Pattern::P1)]);
    }
}
