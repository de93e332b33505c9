//! Benchmark scoring: grounding accuracy tables, deviation-threshold
//! curves, step metrics and instruction-length strata.
//!
//! All aggregates are integer counts; percentages are derived from them
//! only for display, to one decimal with halves rounded up.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action::{actions_match, location_matches, Action, MatchRules};
use crate::data::{ElementKind, Platform};
use crate::geom::{deviation, NormBox, NormPoint};
use crate::policy::Modality;

pub use report::{emit_report, GroundingSection, ItemError, MetricsError, Report, ReportKind, StepsSection};

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.0, 0.05, 0.10, 0.20, 0.30];
pub const DEFAULT_LENGTH_EDGES: [u64; 5] = [0, 50, 100, 150, 200];

/// `hits / n`, kept as counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawRatio", into = "RawRatio")]
pub struct Ratio {
    pub hits: u64,
    pub n: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRatio {
    hits: u64,
    n: u64,
    pct: Option<f64>,
}

impl From<Ratio> for RawRatio {
    fn from(r: Ratio) -> Self {
        RawRatio {
            hits: r.hits,
            n: r.n,
            pct: r.pct(),
        }
    }
}

impl TryFrom<RawRatio> for Ratio {
    type Error = String;

    fn try_from(raw: RawRatio) -> Result<Self, Self::Error> {
        let r = Ratio::new(raw.hits, raw.n)?;
        if r.pct() != raw.pct {
            return Err(format!("pct {:?} inconsistent with {}/{}", raw.pct, raw.hits, raw.n));
        }
        Ok(r)
    }
}

impl Ratio {
    pub fn new(hits: u64, n: u64) -> Result<Self, String> {
        if hits > n {
            return Err(format!("hits {hits} exceed n {n}"));
        }
        Ok(Self { hits, n })
    }

    pub fn add(&mut self, hit: bool) {
        self.n += 1;
        self.hits += u64::from(hit);
    }

    /// Percentage in tenths of a point, halves rounded up; `None` when n = 0.
    pub fn tenths(&self) -> Option<u64> {
        (self.n > 0).then(|| (2000 * self.hits + self.n) / (2 * self.n))
    }

    pub fn pct(&self) -> Option<f64> {
        self.tenths().map(|t| t as f64 / 10.0)
    }

    /// `"80.7 (807/1000)"` or `"n/a (0/0)"`.
    pub fn cell(&self) -> String {
        format!("{self} ({}/{})", self.hits, self.n)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tenths() {
            Some(t) => write!(f, "{}.{}", t / 10, t % 10),
            None => f.write_str("n/a"),
        }
    }
}

fn fmt_delta(tenths: i64) -> String {
    let sign = if tenths < 0 { '-' } else { '+' };
    let a = tenths.unsigned_abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub sample_id: String,
    pub pred: NormPoint,
    pub gt_bbox: NormBox,
    pub platform: Platform,
    pub element_kind: ElementKind,
    pub instruction_len_chars: u64,
    pub modality: Modality,
    pub deviation: f64,
}

impl GroundingResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sample_id: impl Into<String>,
        pred: NormPoint,
        gt_bbox: NormBox,
        platform: Platform,
        element_kind: ElementKind,
        instruction_len_chars: u64,
        modality: Modality,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            deviation: deviation(&pred, &gt_bbox),
            pred,
            gt_bbox,
            platform,
            element_kind,
            instruction_len_chars,
            modality,
        }
    }

    pub fn hit(&self) -> bool {
        self.deviation == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingCell {
    pub platform: Platform,
    pub element_kind: ElementKind,
    pub acc: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingTable {
    /// Every platform × element kind, in fixed order; empty groups have n = 0.
    pub cells: Vec<GroundingCell>,
    pub micro: Ratio,
}

impl GroundingTable {
    pub fn cell(&self, platform: Platform, kind: ElementKind) -> Ratio {
        self.cells
            .iter()
            .find(|c| c.platform == platform && c.element_kind == kind)
            .map(|c| c.acc)
            .unwrap_or_default()
    }

    /// Mean of non-empty cells. Reported nowhere; it exists so tests can
    /// show how it differs from the micro average.
    pub fn macro_pct(&self) -> Option<f64> {
        let pcts: Vec<f64> = self.cells.iter().filter_map(|c| (c.acc.n > 0).then(|| c.acc.hits as f64 / c.acc.n as f64)).collect();
        (!pcts.is_empty()).then(|| 100.0 * pcts.iter().sum::<f64>() / pcts.len() as f64)
    }
}

pub fn grounding_table(results: &[GroundingResult]) -> GroundingTable {
    let mut cells = Vec::new();
    for p in Platform::ALL {
        for k in ElementKind::ALL {
            let mut acc = Ratio::default();
            for r in results.iter().filter(|r| r.platform == p && r.element_kind == k) {
                acc.add(r.hit());
            }
            cells.push(GroundingCell {
                platform: p,
                element_kind: k,
                acc,
            });
        }
    }
    // Micro average, counted straight from the items.
    let mut micro = Ratio::default();
    for r in results {
        micro.add(r.hit());
    }
    debug_assert_eq!(micro.hits, cells.iter().map(|c| c.acc.hits).sum::<u64>());
    GroundingTable { cells, micro }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePoint {
    pub threshold: f64,
    pub acc: Ratio,
    /// Increment over the previous column in tenths of a point, taken from
    /// the displayed values so that the printed row adds up.
    pub delta_tenths: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationCurve {
    pub points: Vec<CurvePoint>,
}

impl DeviationCurve {
    /// `80.7 / 88.5(+7.8) / ...`
    pub fn row(&self) -> String {
        self.points
            .iter()
            .map(|p| match p.delta_tenths {
                Some(d) => format!("{}({})", p.acc, fmt_delta(d)),
                None => p.acc.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" / ")
    }
}

/// Accuracy at each threshold: a result counts when `deviation <= t`
/// (at t = 0 that is exactly a hit).
pub fn deviation_curve(deviations: &[f64], thresholds: &[f64]) -> DeviationCurve {
    let mut points: Vec<CurvePoint> = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let acc = Ratio {
            hits: deviations.iter().filter(|&&d| d <= t).count() as u64,
            n: deviations.len() as u64,
        };
        let delta_tenths = points.last().and_then(|prev| match (prev.acc.tenths(), acc.tenths()) {
            (Some(a), Some(b)) => Some(b as i64 - a as i64),
            _ => None,
        });
        points.push(CurvePoint {
            threshold: t,
            acc,
            delta_tenths,
        });
    }
    DeviationCurve { points }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepResult {
    pub benchmark: String,
    pub episode_id: String,
    pub step_index: u32,
    pub type_match: bool,
    /// Only for steps whose ground truth is a click-like action.
    pub grounding_match: Option<bool>,
    pub step_success: bool,
}

pub fn score_step(
    benchmark: &str,
    episode_id: &str,
    step_index: u32,
    pred: &Action,
    gt: &Action,
    gt_bbox: Option<&NormBox>,
    rules: &MatchRules,
) -> StepResult {
    let grounding_match = gt.point().map(|g| match pred.point() {
        Some(p) if pred.is_click_like() => location_matches(&p, &g, gt_bbox, rules),
        _ => false,
    });
    StepResult {
        benchmark: benchmark.to_string(),
        episode_id: episode_id.to_string(),
        step_index,
        type_match: pred.kind() == gt.kind(),
        grounding_match: if gt.is_click_like() { grounding_match } else { None },
        step_success: actions_match(pred, gt, gt_bbox, rules),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTable {
    pub type_acc: Ratio,
    pub grounding_acc: Ratio,
    pub sr: Ratio,
}

pub fn step_table<'a>(results: impl IntoIterator<Item = &'a StepResult>) -> StepTable {
    let mut t = StepTable::default();
    for r in results {
        t.type_acc.add(r.type_match);
        t.sr.add(r.step_success);
        if let Some(g) = r.grounding_match {
            t.grounding_acc.add(g);
        }
    }
    t
}

/// One step table per benchmark tag.
pub fn step_tables_by_benchmark(results: &[StepResult]) -> BTreeMap<String, StepTable> {
    let mut groups: BTreeMap<&str, Vec<&StepResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.benchmark.as_str()).or_default().push(r);
    }
    groups.into_iter().map(|(k, v)| (k.to_string(), step_table(v))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthBucket {
    pub lo: u64,
    /// `None` for the open-ended last bucket.
    pub hi: Option<u64>,
    pub all: Ratio,
    pub by_modality: BTreeMap<Modality, Ratio>,
}

impl LengthBucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{},{})", self.lo, hi),
            None => format!("[{},inf)", self.lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthStrata {
    pub buckets: Vec<LengthBucket>,
}

/// Index of the half-open bucket `[edges[i], edges[i+1])` holding `len`.
/// `edges` must be strictly increasing and start at 0.
pub fn bucket_index(len: u64, edges: &[u64]) -> usize {
    edges.partition_point(|&e| e <= len).saturating_sub(1)
}

/// Bucket `(length, modality, success)` triples by instruction length.
pub fn length_strata(items: impl IntoIterator<Item = (u64, Modality, bool)>, edges: &[u64]) -> LengthStrata {
    let mut buckets: Vec<LengthBucket> = edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| LengthBucket {
            lo,
            hi: edges.get(i + 1).copied(),
            all: Ratio::default(),
            by_modality: BTreeMap::new(),
        })
        .collect();
    if buckets.is_empty() {
        return LengthStrata { buckets };
    }
    for (len, modality, ok) in items {
        let b = &mut buckets[bucket_index(len, edges)];
        b.all.add(ok);
        b.by_modality.entry(modality).or_default().add(ok);
    }
    LengthStrata { buckets }
}

pub fn grounding_strata(results: &[GroundingResult], edges: &[u64]) -> LengthStrata {
    length_strata(results.iter().map(|r| (r.instruction_len_chars, r.modality, r.hit())), edges)
}
