//! Versioned evaluation report, emitted as JSON and markdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DeviationCurve, GroundingTable, LengthStrata, Ratio, StepTable};
use crate::data::{ElementKind, Platform};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid report: {0}")]
    Invalid(String),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Grounding,
    Steps,
}

/// A per-item failure that kept the item out of the tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemError {
    pub id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingSection {
    pub table: GroundingTable,
    /// Keyed by `all` and by each modality present.
    pub deviation_curves: BTreeMap<String, DeviationCurve>,
    pub length_strata: LengthStrata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsSection {
    pub mode: String,
    pub overall: StepTable,
    pub by_benchmark: BTreeMap<String, StepTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub kind: ReportKind,
    /// The full effective configuration, defaults included.
    pub config: serde_json::Value,
    pub n_items: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<StepsSection>,
    pub errors: Vec<ItemError>,
    pub notes: Vec<String>,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), MetricsError> {
    if cond {
        Ok(())
    } else {
        Err(MetricsError::Invalid(msg()))
    }
}

fn sum(rs: impl IntoIterator<Item = Ratio>) -> Ratio {
    rs.into_iter().fold(Ratio::default(), |a, b| Ratio {
        hits: a.hits + b.hits,
        n: a.n + b.n,
    })
}

impl Report {
    /// Structural checks on top of what deserialization enforces.
    pub fn validate(&self) -> Result<(), MetricsError> {
        check(self.schema_version == SCHEMA_VERSION, || format!("unsupported schema_version {}", self.schema_version))?;
        match self.kind {
            ReportKind::Grounding => check(self.grounding.is_some() && self.steps.is_none(), || "grounding report needs exactly the grounding section".into())?,
            ReportKind::Steps => check(self.steps.is_some() && self.grounding.is_none(), || "steps report needs exactly the steps section".into())?,
        }
        check(
            self.n_items == self.scored() + self.errors.len() as u64,
            || format!("n_items {} != scored {} + errors {}", self.n_items, self.scored(), self.errors.len()),
        )?;
        if let Some(g) = &self.grounding {
            let cells = sum(g.table.cells.iter().map(|c| c.acc));
            check(cells == g.table.micro, || format!("micro {:?} != sum of cells {:?}", g.table.micro, cells))?;
            for (label, curve) in &g.deviation_curves {
                for w in curve.points.windows(2) {
                    check(w[0].threshold < w[1].threshold && w[0].acc.hits <= w[1].acc.hits, || {
                        format!("deviation curve `{label}` is not monotone")
                    })?;
                }
            }
            if let Some(first) = g.deviation_curves.get("all").and_then(|c| c.points.first()) {
                if first.threshold == 0.0 {
                    check(first.acc == g.table.micro, || "t=0 column differs from grounding accuracy".into())?;
                }
            }
            let strata = sum(g.length_strata.buckets.iter().map(|b| b.all));
            check(strata == g.table.micro, || "length strata do not partition the results".into())?;
        }
        if let Some(s) = &self.steps {
            let cols = |f: fn(&StepTable) -> Ratio| sum(s.by_benchmark.values().map(f));
            check(
                cols(|t| t.type_acc) == s.overall.type_acc
                    && cols(|t| t.grounding_acc) == s.overall.grounding_acc
                    && cols(|t| t.sr) == s.overall.sr,
                || "per-benchmark tables do not add up to the overall table".into(),
            )?;
            check(s.overall.sr.hits <= s.overall.type_acc.hits, || "more successes than type matches".into())?;
        }
        Ok(())
    }

    fn scored(&self) -> u64 {
        self.grounding.as_ref().map(|g| g.table.micro.n).unwrap_or(0) + self.steps.as_ref().map(|s| s.overall.sr.n).unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let r: Report = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        match self.kind {
            ReportKind::Grounding => md.push_str("# Grounding evaluation\n\n"),
            ReportKind::Steps => md.push_str("# Step evaluation\n\n"),
        }
        let _ = writeln!(md, "Items: {}, scored: {}, errors: {}\n", self.n_items, self.scored(), self.errors.len());
        if let Some(g) = &self.grounding {
            grounding_markdown(&mut md, g);
        }
        if let Some(s) = &self.steps {
            steps_markdown(&mut md, s);
        }
        if !self.notes.is_empty() {
            md.push_str("## Notes\n\n");
            for n in &self.notes {
                let _ = writeln!(md, "- {n}");
            }
            md.push('\n');
        }
        if !self.errors.is_empty() {
            md.push_str("## Errors\n\n| id | kind | message |\n|---|---|---|\n");
            for e in &self.errors {
                let _ = writeln!(md, "| {} | {} | {} |", e.id, e.kind, e.message.replace('|', "\\|").replace('\n', " "));
            }
            md.push('\n');
        }
        md.push_str("## Configuration\n\n```json\n");
        md.push_str(&serde_json::to_string_pretty(&self.config).unwrap_or_default());
        md.push_str("\n```\n");
        md
    }
}

fn grounding_markdown(md: &mut String, g: &GroundingSection) {
    md.push_str("## Accuracy by platform\n\n|");
    for p in Platform::ALL {
        for k in ElementKind::ALL {
            let _ = write!(md, " {} {} |", p.label(), k.label());
        }
    }
    md.push_str(" Micro Avg |\n|");
    md.push_str(&"---|".repeat(Platform::ALL.len() * ElementKind::ALL.len() + 1));
    md.push_str("\n|");
    for p in Platform::ALL {
        for k in ElementKind::ALL {
            let _ = write!(md, " {} |", g.table.cell(p, k).cell());
        }
    }
    let _ = writeln!(md, " {} |\n", g.table.micro.cell());

    md.push_str("## Accuracy by deviation threshold\n\n");
    if let Some(curve) = g.deviation_curves.values().next() {
        md.push_str("| Instruction |");
        for p in &curve.points {
            if p.threshold == 0.0 {
                md.push_str(" d=0 |");
            } else {
                let _ = write!(md, " d<={} |", p.threshold);
            }
        }
        md.push_str(" N |\n|");
        md.push_str(&"---|".repeat(curve.points.len() + 2));
        md.push('\n');
    }
    for (label, curve) in &g.deviation_curves {
        let _ = write!(md, "| {label} |");
        for p in &curve.points {
            match p.delta_tenths {
                Some(d) => {
                    let _ = write!(md, " {} ({}) |", p.acc, super::fmt_delta(d));
                }
                None => {
                    let _ = write!(md, " {} |", p.acc);
                }
            }
        }
        let n = curve.points.first().map(|p| p.acc.n).unwrap_or(0);
        let _ = writeln!(md, " {n} |");
    }
    md.push('\n');
    strata_markdown(md, &g.length_strata);
}

fn strata_markdown(md: &mut String, s: &LengthStrata) {
    let mut modalities: Vec<_> = s.buckets.iter().flat_map(|b| b.by_modality.keys().copied()).collect();
    modalities.sort();
    modalities.dedup();
    md.push_str("## Accuracy by instruction length (chars)\n\n| Length | All |");
    for m in &modalities {
        let _ = write!(md, " {} |", m.as_str());
    }
    md.push_str("\n|");
    md.push_str(&"---|".repeat(modalities.len() + 2));
    md.push('\n');
    for b in &s.buckets {
        let _ = write!(md, "| {} | {} |", b.label(), b.all.cell());
        for m in &modalities {
            let _ = write!(md, " {} |", b.by_modality.get(m).copied().unwrap_or_default().cell());
        }
        md.push('\n');
    }
    md.push('\n');
}

fn steps_markdown(md: &mut String, s: &StepsSection) {
    let _ = writeln!(md, "Mode: {}\n", s.mode);
    md.push_str("| Benchmark | Type | Grounding | SR |\n|---|---|---|---|\n");
    for (name, t) in s.by_benchmark.iter().map(|(k, v)| (k.as_str(), v)).chain([("overall", &s.overall)]) {
        let _ = writeln!(md, "| {name} | {} | {} | {} |", t.type_acc.cell(), t.grounding_acc.cell(), t.sr.cell());
    }
    md.push('\n');
}

fn write_file(path: &Path, contents: &str) -> Result<(), MetricsError> {
    std::fs::write(path, contents).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Validate and write `report.json` and `report.md` into `out_dir`.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<(PathBuf, PathBuf), MetricsError> {
    report.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| MetricsError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let json = out_dir.join("report.json");
    let md = out_dir.join("report.md");
    write_file(&json, &report.to_json()?)?;
    write_file(&md, &report.to_markdown())?;
    Ok((json, md))
}
