//! Golden-file corpus runner.
//!
//! A case directory holds one or more `*.edl` and `*.sir` files and an
//! `expected.json` listing the findings as `(pattern, risk, sink loc,
//! source loc)`. Paths are not compared, so node renumbering does not break
//! the goldens.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::pipeline::{analyze, AnalyzeInput};
use crate::report::LeakReport;
use crate::tracker::BarrierConfig;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedFinding {
    pub pattern: String,
    pub risk: String,
    pub sink: String,
    pub source: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectedFile {
    findings: Vec<ExpectedFinding>,
}

#[derive(Clone, Debug)]
pub struct CorpusCase {
    pub name: String,
    pub dir: PathBuf,
    pub edl: Vec<(String, String)>,
    pub sir: Vec<(String, String)>,
    /// Parsed golden findings, or why they could not be read.
    pub expected: Result<Vec<ExpectedFinding>, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CaseVerdict {
    Pass,
    Mismatch {
        missing: Vec<ExpectedFinding>,
        unexpected: Vec<ExpectedFinding>,
    },
    Error(String),
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub verdict: CaseVerdict,
    pub report: Option<LeakReport>,
}

fn files_with_ext(dir: &Path, ext: &str) -> io::Result<Vec<(String, String)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p)?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, text))
        })
        .collect()
}

pub fn load_case(dir: &Path) -> io::Result<CorpusCase> {
    let expected = match fs::read_to_string(dir.join("expected.json")) {
        Ok(text) => serde_json::from_str::<ExpectedFile>(&text)
            .map(|f| f.findings)
            .map_err(|e| format!("malformed expected.json: {e}")),
        Err(e) => Err(format!("cannot read expected.json: {e}")),
    };
    Ok(CorpusCase {
        name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        dir: dir.to_path_buf(),
        edl: files_with_ext(dir, "edl")?,
        sir: files_with_ext(dir, "sir")?,
        expected,
    })
}

/// Normalized findings of a report, sorted.
pub fn normalize(report: &LeakReport) -> Vec<ExpectedFinding> {
    let mut v: Vec<ExpectedFinding> = report
        .findings
        .iter()
        .map(|f| ExpectedFinding {
            pattern: f.pattern.to_string(),
            risk: f.risk.to_string(),
            sink: f.sink.loc.clone(),
            source: f.source.loc.clone(),
        })
        .collect();
    v.sort();
    v
}

pub fn run_case(case: &CorpusCase, config: &BarrierConfig) -> CaseResult {
    let expected = match &case.expected {
        Ok(e) => e,
        Err(msg) => {
            return CaseResult {
                name: case.name.clone(),
                verdict: CaseVerdict::Error(msg.clone()),
                report: None,
            }
        }
    };
    if case.edl.is_empty() || case.sir.is_empty() {
        return CaseResult {
            name: case.name.clone(),
            verdict: CaseVerdict::Error("case needs at least one .edl and one .sir file".into()),
            report: None,
        };
    }
    let input = AnalyzeInput {
        edl: case.edl.clone(),
        sir: case.sir.clone(),
        config: config.clone(),
        ..AnalyzeInput::default()
    };
    let analysis = match analyze(&input) {
        Ok(a) => a,
        Err(e) => {
            return CaseResult {
                name: case.name.clone(),
                verdict: CaseVerdict::Error(e.to_string()),
                report: None,
            }
        }
    };
    let actual = normalize(&analysis.report);
    let mut expected = expected.clone();
    expected.sort();
    let verdict = if actual == expected {
        CaseVerdict::Pass
    } else {
        CaseVerdict::Mismatch {
            missing: multiset_minus(&expected, &actual),
            unexpected: multiset_minus(&actual, &expected),
        }
    };
    CaseResult {
        name: case.name.clone(),
        verdict,
        report: Some(analysis.report),
    }
}

fn multiset_minus(a: &[ExpectedFinding], b: &[ExpectedFinding]) -> Vec<ExpectedFinding> {
    let mut rest = b.to_vec();
    a.iter()
        .filter(|x| match rest.iter().position(|y| y == *x) {
            Some(i) => {
                rest.remove(i);
                false
            }
            None => true,
        })
        .cloned()
        .collect()
}

/// Runs every case under `dir` (or under `dir/cases` when present), in name
/// order.
pub fn run_corpus(dir: &Path) -> io::Result<Vec<CaseResult>> {
    let root = if dir.join("cases").is_dir() { dir.join("cases") } else { dir.to_path_buf() };
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let config = BarrierConfig::default();
    dirs.iter().map(|d| Ok(run_case(&load_case(d)?, &config))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(p: &str, s: &str) -> ExpectedFinding {
        ExpectedFinding {
            pattern: p.into(),
            risk: "normal".into(),
            sink: s.into(),
            source: "a:1".into(),
        }
    }

    #[test]
    fn multiset_difference_counts_duplicates() {
        let a = vec![f("P1", "x"), f("P1", "x"), f("P2", "y")];
        let b = vec![f("P1", "x")];
        assert_eq!(multiset_minus(&a, &b), vec![f("P1", "x"), f("P2", "y")]);
        assert!(multiset_minus(&b, &a).is_empty());
    }
}
