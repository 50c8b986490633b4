//! The whole analysis, from interface and program text to a report.

use thiserror::Error;

use crate::edl::{extract_key_parameters, parse_edl, EdlError, EdlInterface, LeakTuple};
use crate::graphs::{build_call_graph, build_vfg, CallGraph, ValueFlowGraph};
use crate::points_to::{solve_points_to, PointsToResult};
use crate::report::LeakReport;
use crate::sir::{collect_insensitive, parse_sir_sources, InsensitiveDataTable, SirError, SirModule};
use crate::taint::{find_sinks, SinkResult};
use crate::tracker::{back_track, tag_high_risk, BarrierConfig, LeakFinding, TrackContext, TrackLimits};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{file}: {source}")]
    Edl { file: String, source: EdlError },
    #[error("{file}: {source}")]
    EdlMerge { file: String, source: EdlError },
    #[error(transparent)]
    Sir(#[from] SirError),
}

/// Named source texts and analysis settings.
#[derive(Clone, Debug, Default)]
pub struct AnalyzeInput {
    pub edl: Vec<(String, String)>,
    pub sir: Vec<(String, String)>,
    pub config: BarrierConfig,
    pub limits: TrackLimits,
}

/// Every intermediate result, kept for dumps and tests.
pub struct Analysis {
    pub interface: EdlInterface,
    pub tuples: Vec<LeakTuple>,
    pub module: SirModule,
    pub table: InsensitiveDataTable,
    pub pts: PointsToResult,
    pub cg: CallGraph,
    pub vfg: ValueFlowGraph,
    pub sinks: SinkResult,
    pub findings: Vec<LeakFinding>,
    pub report: LeakReport,
}

pub fn analyze(input: &AnalyzeInput) -> Result<Analysis, PipelineError> {
    let mut parts = Vec::new();
    for (file, text) in &input.edl {
        parts.push(parse_edl(text).map_err(|source| PipelineError::Edl {
            file: file.clone(),
            source,
        })?);
    }
    let interface = EdlInterface::merge(parts).map_err(|source| PipelineError::EdlMerge {
        file: input.edl.iter().map(|(f, _)| f.as_str()).collect::<Vec<_>>().join(", "),
        source,
    })?;
    let tuples = extract_key_parameters(&interface);
    let sources: Vec<(&str, &str)> = input.sir.iter().map(|(f, t)| (f.as_str(), t.as_str())).collect();
    let module = parse_sir_sources(&sources)?;

    let mut diagnostics = Vec::new();
    let (table, warnings) = collect_insensitive(&module);
    diagnostics.extend(warnings);
    let pts = solve_points_to(&module);
    diagnostics.extend(pts.diagnostics.iter().cloned());
    let cg = build_call_graph(&module, &pts);
    let vfg = build_vfg(&module, &cg, &pts);
    let sinks = find_sinks(&tuples, &module, &cg, &vfg, &pts);
    diagnostics.extend(sinks.diagnostics.iter().cloned());
    diagnostics.extend(input.config.unmatched(&module));
    let high = tag_high_risk(&module, &cg, &vfg, &input.config);
    let cx = TrackContext::new(&module, &vfg, &table, &input.config);
    let (findings, notes) = back_track(&cx, &sinks.sinks, &high, input.limits);
    diagnostics.extend(notes);
    let report = LeakReport::new(&module, &vfg, &pts, &findings, diagnostics);
    Ok(Analysis {
        interface,
        tuples,
        module,
        table,
        pts,
        cg,
        vfg,
        sinks,
        findings,
        report,
    })
}
