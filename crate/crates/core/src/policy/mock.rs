//! Seeded mock policy with controlled grounding error regimes.
//!
//! For each query the oracle draws one of three regimes:
//!
//! * **exact**: the target center,
//! * **near**: a point just outside the target, uniformly over the region
//!   whose deviation from the target lies in `(0, near_radius]`,
//! * **far**: uniform over the whole screen.
//!
//! On a second-step query over an enlarged crop (zoom-aware mode) the
//! answer is drawn in window-local coordinates. The near regime there is an
//! aiming error around the target center bounded by `near_radius / k`, so
//! enlargement turns most near misses into hits.
//!
//! Every draw comes from a generator seeded by the global seed and the
//! query's identity, so answers are reproducible across runs, threads and
//! platforms.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CropContext, PolicyBackend, PolicyError, PolicyQuery, Prediction};
use crate::action::{serialize_action, Action};
use crate::geom::{box_to_local, deviation, global_to_local, CropWindow, NormBox, NormPoint, PixelSize};
use crate::seed::rng_for;

const MAX_REJECTION_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockOracleConfig {
    pub p_exact: f64,
    pub p_near: f64,
    pub p_far: f64,
    pub near_radius: f64,
    pub seed: u64,
    pub zoom_aware: bool,
}

impl Default for MockOracleConfig {
    fn default() -> Self {
        Self {
            p_exact: 1.0,
            p_near: 0.0,
            p_far: 0.0,
            near_radius: 0.05,
            seed: 0,
            zoom_aware: true,
        }
    }
}

impl MockOracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ps = [self.p_exact, self.p_near, self.p_far];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("regime probabilities must lie in [0, 1], got {ps:?}"));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("regime probabilities must sum to 1, got {ps:?}"));
        }
        if !(self.near_radius.is_finite() && self.near_radius > 0.0) {
            return Err(format!("near_radius must be > 0, got {}", self.near_radius));
        }
        Ok(())
    }

    /// Near-miss radius used inside a crop enlarged by `window.zoom_k`.
    pub fn effective_near_radius(&self, window: &CropWindow) -> f64 {
        if self.zoom_aware {
            self.near_radius / window.zoom_k
        } else {
            self.near_radius
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Exact,
    Near,
    Far,
}

/// Where a ground-truth click lands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetGeom {
    Box(NormBox),
    Point(NormPoint),
}

impl TargetGeom {
    pub fn aim(&self) -> NormPoint {
        match self {
            TargetGeom::Box(b) => b.center(),
            TargetGeom::Point(p) => *p,
        }
    }

    fn deviation(&self, p: &NormPoint) -> f64 {
        match self {
            TargetGeom::Box(b) => deviation(p, b),
            TargetGeom::Point(c) => p.distance(c),
        }
    }

    fn extent(&self) -> (f64, f64, f64, f64) {
        match self {
            TargetGeom::Box(b) => (b.x_min(), b.y_min(), b.x_max(), b.y_max()),
            TargetGeom::Point(p) => (p.x(), p.y(), p.x(), p.y()),
        }
    }
}

/// Ground truth the oracle answers from.
#[derive(Debug, Clone, PartialEq)]
pub struct MockTarget {
    pub action: Action,
    pub bbox: Option<NormBox>,
}

impl MockTarget {
    pub fn click(point: NormPoint, bbox: Option<NormBox>) -> Self {
        Self {
            action: Action::Click { point },
            bbox,
        }
    }

    fn geom(&self) -> Option<TargetGeom> {
        let point = self.action.point()?;
        Some(match self.bbox {
            Some(b) => TargetGeom::Box(b),
            None => TargetGeom::Point(point),
        })
    }
}

fn draw_regime<R: Rng>(cfg: &MockOracleConfig, rng: &mut R) -> Regime {
    let u: f64 = rng.random();
    if u < cfg.p_exact {
        Regime::Exact
    } else if u < cfg.p_exact + cfg.p_near {
        Regime::Near
    } else {
        Regime::Far
    }
}

fn uniform_point<R: Rng>(rng: &mut R) -> NormPoint {
    NormPoint::new(rng.random(), rng.random()).expect("unit draws")
}

/// Uniform over `{p in [0,1]^2 : 0 < dev(p) <= radius}` by rejection from
/// the target's bounding rectangle grown by `radius`.
fn near_miss<R: Rng>(target: &TargetGeom, radius: f64, rng: &mut R) -> Option<NormPoint> {
    let (x0, y0, x1, y1) = target.extent();
    let lo_x = (x0 - radius).max(0.0);
    let hi_x = (x1 + radius).min(1.0);
    let lo_y = (y0 - radius).max(0.0);
    let hi_y = (y1 + radius).min(1.0);
    for _ in 0..MAX_REJECTION_DRAWS {
        let x = lo_x + (hi_x - lo_x) * rng.random::<f64>();
        let y = lo_y + (hi_y - lo_y) * rng.random::<f64>();
        let p = NormPoint::new(x, y).ok()?;
        let d = target.deviation(&p);
        if d > 0.0 && d <= radius {
            return Some(p);
        }
    }
    None
}

/// Uniform over the disc of `radius` around `center`, restricted to the
/// unit square.
fn aim_error<R: Rng>(center: &NormPoint, radius: f64, rng: &mut R) -> NormPoint {
    for _ in 0..MAX_REJECTION_DRAWS {
        let dx = (2.0 * rng.random::<f64>() - 1.0) * radius;
        let dy = (2.0 * rng.random::<f64>() - 1.0) * radius;
        if dx.hypot(dy) > radius {
            continue;
        }
        if let Ok(p) = NormPoint::new(center.x() + dx, center.y() + dy) {
            return p;
        }
    }
    *center
}

/// One full-screen draw for `target`, seeded by `seed`.
///
/// If the near region is empty (a target covering the whole screen) the
/// draw falls back to the target center.
pub fn sample_point(cfg: &MockOracleConfig, target: &TargetGeom, seed: u64, query_id: &str) -> (Regime, NormPoint) {
    let mut rng = rng_for(seed, &["predict", query_id]);
    let regime = draw_regime(cfg, &mut rng);
    let point = match regime {
        Regime::Exact => target.aim(),
        Regime::Near => near_miss(target, cfg.near_radius, &mut rng).unwrap_or_else(|| target.aim()),
        Regime::Far => uniform_point(&mut rng),
    };
    (regime, point)
}

/// Window-local answer to a query over an enlarged crop of `source`.
pub fn mock_zoom_response(
    cfg: &MockOracleConfig,
    target: &TargetGeom,
    window: &CropWindow,
    source: PixelSize,
    query_id: &str,
) -> Result<(Regime, NormPoint), PolicyError> {
    let local_aim = match target {
        TargetGeom::Box(b) => box_to_local(b, window, source)
            .ok_or(PolicyError::TargetLost)?
            .center(),
        TargetGeom::Point(p) => global_to_local(p, window, source).map_err(|_| PolicyError::TargetLost)?,
    };
    let window_key = format!(
        "{},{},{},{},{}",
        window.origin_x, window.origin_y, window.width, window.height, window.zoom_k
    );
    let mut rng = rng_for(cfg.seed, &["zoom", query_id, &window_key]);
    let regime = draw_regime(cfg, &mut rng);
    let point = match regime {
        Regime::Exact => local_aim,
        Regime::Near => aim_error(&local_aim, cfg.effective_near_radius(window), &mut rng),
        Regime::Far => uniform_point(&mut rng),
    };
    Ok((regime, point))
}

/// Mock backend answering from registered ground truth.
///
/// Click targets go through the regime draw. Other ground-truth actions are
/// replayed verbatim.
#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    config: MockOracleConfig,
    targets: HashMap<String, MockTarget>,
}

impl MockOracle {
    pub fn new(config: MockOracleConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(Self {
            config,
            targets: HashMap::new(),
        })
    }

    pub fn config(&self) -> &MockOracleConfig {
        &self.config
    }

    pub fn insert(&mut self, query_id: impl Into<String>, target: MockTarget) {
        self.targets.insert(query_id.into(), target);
    }

    pub fn with_targets(mut self, targets: impl IntoIterator<Item = (String, MockTarget)>) -> Self {
        self.targets.extend(targets);
        self
    }

    fn answer(&self, query: &PolicyQuery<'_>) -> Result<Action, PolicyError> {
        let target = self
            .targets
            .get(query.query_id)
            .ok_or_else(|| PolicyError::UnknownQuery(query.query_id.to_string()))?;
        match (query.crop, target.geom()) {
            (Some(CropContext { window, source_size }), Some(geom)) => {
                let (_, p) = mock_zoom_response(&self.config, &geom, &window, source_size, query.query_id)?;
                Ok(target.action.with_point(p))
            }
            (Some(_), None) => Err(PolicyError::TargetLost),
            (None, Some(geom)) => {
                let (_, p) = sample_point(&self.config, &geom, self.config.seed, query.query_id);
                Ok(target.action.with_point(p))
            }
            (None, None) => Ok(target.action.clone()),
        }
    }
}

impl PolicyBackend for MockOracle {
    fn predict(&self, query: &PolicyQuery<'_>) -> Result<Prediction, PolicyError> {
        let action = self.answer(query)?;
        Ok(Prediction {
            raw: serialize_action(&action),
            action,
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::crop_window;
    use crate::policy::{predict, Instruction, Observation, PolicyMode};
    use std::collections::HashMap;

    fn cfg(p_exact: f64, p_near: f64, p_far: f64) -> MockOracleConfig {
        MockOracleConfig {
            p_exact,
            p_near,
            p_far,
            near_radius: 0.05,
            seed: 17,
            zoom_aware: true,
        }
    }

    fn target_box() -> NormBox {
        NormBox::new(0.28, 0.38, 0.32, 0.42).unwrap()
    }

    fn query_predict(oracle: &MockOracle, id: &str) -> Prediction {
        let ins = Instruction::text("tap it");
        let obs = Observation {
            screenshot_ref: "s.png".into(),
            size: PixelSize::new(1000, 800).unwrap(),
            step_index: 1,
        };
        let q = PolicyQuery {
            query_id: id,
            history: &[],
            instruction: &ins,
            current: &obs,
            mode: PolicyMode::Grounding,
            crop: None,
        };
        predict(oracle, &q).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.5, 0.5, 0.1).validate().is_err());
        assert!(cfg(1.2, -0.2, 0.0).validate().is_err());
        let mut c = cfg(1.0, 0.0, 0.0);
        c.near_radius = 0.0;
        assert!(c.validate().is_err());
        assert!(cfg(0.79, 0.15, 0.06).validate().is_ok());
    }

    #[test]
    fn exact_hits_center() {
        let b = target_box();
        let mut oracle = MockOracle::new(cfg(1.0, 0.0, 0.0)).unwrap();
        oracle.insert("a", MockTarget::click(b.center(), Some(b)));
        let p = query_predict(&oracle, "a");
        let point = p.action.point().unwrap();
        assert!((point.x() - 0.3).abs() < 1e-12 && (point.y() - 0.4).abs() < 1e-12);
        assert_eq!(p.raw.as_str(), "click(x=0.3000, y=0.4000)");
    }

    #[test]
    fn deterministic_per_query() {
        let b = target_box();
        let mut oracle = MockOracle::new(cfg(0.3, 0.3, 0.4)).unwrap();
        oracle.insert("a", MockTarget::click(b.center(), Some(b)));
        assert_eq!(query_predict(&oracle, "a"), query_predict(&oracle, "a"));
        let clone = oracle.clone();
        assert_eq!(query_predict(&oracle, "a"), query_predict(&clone, "a"));
    }

    #[test]
    fn near_band_over_1000_draws() {
        let c = cfg(0.0, 1.0, 0.0);
        let geom = TargetGeom::Box(target_box());
        for i in 0..1000 {
            let (regime, p) = sample_point(&c, &geom, c.seed, &format!("q{i}"));
            assert_eq!(regime, Regime::Near);
            let d = geom.deviation(&p);
            assert!(d > 0.0 && d <= 0.05, "draw {i}: deviation {d}");
        }
    }

    #[test]
    fn regime_frequencies_within_two_points() {
        let c = cfg(0.79, 0.15, 0.06);
        let geom = TargetGeom::Box(target_box());
        let mut counts: HashMap<Regime, usize> = HashMap::new();
        let n = 10_000;
        for i in 0..n {
            *counts.entry(sample_point(&c, &geom, c.seed, &format!("q{i}")).0).or_default() += 1;
        }
        for (regime, p) in [(Regime::Exact, 0.79), (Regime::Near, 0.15), (Regime::Far, 0.06)] {
            let f = counts.get(&regime).copied().unwrap_or(0) as f64 / n as f64;
            assert!((f - p).abs() <= 0.02, "{regime:?}: {f} vs {p}");
        }
    }

    #[test]
    fn zoom_effective_radius() {
        let c = cfg(0.0, 1.0, 0.0);
        let image = PixelSize::new(1000, 800).unwrap();
        let window = crop_window(&NormPoint::new(0.3, 0.4).unwrap(), image, 2.0).unwrap();
        assert!((c.effective_near_radius(&window) - 0.025).abs() < 1e-15);
        let geom = TargetGeom::Box(target_box());
        let local_center = box_to_local(&target_box(), &window, image).unwrap().center();
        for i in 0..500 {
            let (_, p) = mock_zoom_response(&c, &geom, &window, image, &format!("q{i}")).unwrap();
            assert!(p.distance(&local_center) <= 0.025 + 1e-12);
        }
    }

    #[test]
    fn zoom_exact_is_local_center() {
        let c = cfg(1.0, 0.0, 0.0);
        let image = PixelSize::new(1000, 800).unwrap();
        let b = target_box();
        let window = crop_window(&NormPoint::new(0.31, 0.41).unwrap(), image, 4.0).unwrap();
        let (regime, p) = mock_zoom_response(&c, &TargetGeom::Box(b), &window, image, "z").unwrap();
        assert_eq!(regime, Regime::Exact);
        let expected = box_to_local(&b, &window, image).unwrap().center();
        assert!(p.distance(&expected) < 1e-12);
    }

    #[test]
    fn zoom_target_outside_is_lost() {
        let c = cfg(1.0, 0.0, 0.0);
        let image = PixelSize::new(1000, 800).unwrap();
        let window = crop_window(&NormPoint::new(0.9, 0.9).unwrap(), image, 4.0).unwrap();
        let r = mock_zoom_response(&c, &TargetGeom::Box(target_box()), &window, image, "z");
        assert!(matches!(r, Err(PolicyError::TargetLost)));
        let r = mock_zoom_response(&c, &TargetGeom::Point(NormPoint::new(0.1, 0.1).unwrap()), &window, image, "z");
        assert!(matches!(r, Err(PolicyError::TargetLost)));
    }

    #[test]
    fn non_click_targets_replay_verbatim() {
        let mut oracle = MockOracle::new(cfg(0.0, 0.0, 1.0)).unwrap();
        oracle.insert(
            "t",
            MockTarget {
                action: Action::TypeText { text: "hi".into() },
                bbox: None,
            },
        );
        let ins = Instruction::text("x");
        let obs = Observation {
            screenshot_ref: "s.png".into(),
            size: PixelSize::new(10, 10).unwrap(),
            step_index: 1,
        };
        let q = PolicyQuery {
            query_id: "t",
            history: &[],
            instruction: &ins,
            current: &obs,
            mode: PolicyMode::Planning,
            crop: None,
        };
        assert_eq!(oracle.predict(&q).unwrap().action, Action::TypeText { text: "hi".into() });
        let q = PolicyQuery { query_id: "missing", ..q };
        assert!(matches!(oracle.predict(&q), Err(PolicyError::UnknownQuery(_))));
    }
}
