//! Leaf models, computable leaf metrics, balls and Hausdorff measures.
//!
//! Hausdorff measures use the radius premeasure `rho_m(B(x, r)) = r^m`, so in
//! dimension one `lambda` is half the arc length, and a circle of
//! circumference 1 has total mass 1/2.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Error, Result};
use crate::systems::SystemSpec;

/// Geometry of a model leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LeafModel {
    /// `[0, length]`.
    FlatInterval { length: f64 },
    /// `[0, circumference)` with wrap-around.
    Circle { circumference: f64 },
    /// `[0, side]^dimension` with the Euclidean metric, `dimension` in 1..=3.
    EuclideanBox { dimension: usize, side: f64 },
}

impl LeafModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LeafModel::FlatInterval { length: x }
            | LeafModel::Circle { circumference: x }
            | LeafModel::EuclideanBox { side: x, .. }
                if !(x > 0.0 && x.is_finite()) =>
            {
                argument(format!("leaf size {x} must be positive and finite"))
            }
            LeafModel::EuclideanBox { dimension, .. } if !(1..=3).contains(&dimension) => {
                argument(format!("box dimension {dimension} outside 1..=3"))
            }
            _ => Ok(()),
        }
    }

    pub fn dimension(&self) -> usize {
        match *self {
            LeafModel::EuclideanBox { dimension, .. } => dimension,
            _ => 1,
        }
    }

    /// Intrinsic diameter.
    pub fn diameter(&self) -> f64 {
        match *self {
            LeafModel::FlatInterval { length } => length,
            LeafModel::Circle { circumference } => circumference / 2.0,
            LeafModel::EuclideanBox { dimension, side } => side * (dimension as f64).sqrt(),
        }
    }

    /// Intrinsic volume (length, circumference or side^n).
    pub fn volume(&self) -> f64 {
        match *self {
            LeafModel::FlatInterval { length } => length,
            LeafModel::Circle { circumference } => circumference,
            LeafModel::EuclideanBox { dimension, side } => side.powi(dimension as i32),
        }
    }

    /// Whether `p` lies in the fundamental domain.
    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.dimension() || p.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match *self {
            LeafModel::FlatInterval { length } => (0.0..=length).contains(&p[0]),
            LeafModel::Circle { circumference } => (0.0..circumference).contains(&p[0]),
            LeafModel::EuclideanBox { side, .. } => p.iter().all(|x| (0.0..=side).contains(x)),
        }
    }

    pub fn check(&self, p: &[f64]) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            domain(format!("point {p:?} outside the fundamental domain of {self:?}"))
        }
    }

    /// Bring a 1-D coordinate into the fundamental domain: circles wrap,
    /// flat intervals are checked.
    pub fn reduce1(&self, v: f64) -> Result<f64> {
        match *self {
            LeafModel::Circle { circumference } => Ok(reduce_mod(v, circumference)),
            _ => {
                self.check(&[v])?;
                Ok(v)
            }
        }
    }
}

/// `x mod c` in `[0, c)`, robust to `rem_euclid` returning `c`.
pub fn reduce_mod(x: f64, c: f64) -> f64 {
    let r = x.rem_euclid(c);
    if r >= c {
        0.0
    } else {
        r
    }
}

/// Increasing homeomorphism of the line used by pullback metrics. On circle
/// leaves the lift must satisfy `lift(v + C) = lift(v) + C_target`.
pub trait MonotoneMap: Send + Sync + fmt::Debug {
    fn lift(&self, v: f64) -> f64;
    fn lift_inverse(&self, u: f64) -> f64;
}

/// `v -> slope * v + offset`, `slope > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub slope: f64,
    pub offset: f64,
}

impl MonotoneMap for AffineMap {
    fn lift(&self, v: f64) -> f64 {
        self.slope * v + self.offset
    }

    fn lift_inverse(&self, u: f64) -> f64 {
        (u - self.offset) / self.slope
    }
}

/// Inverse of a monotone map.
#[derive(Debug, Clone)]
pub struct Inverted(pub Arc<dyn MonotoneMap>);

impl MonotoneMap for Inverted {
    fn lift(&self, v: f64) -> f64 {
        self.0.lift_inverse(v)
    }

    fn lift_inverse(&self, u: f64) -> f64 {
        self.0.lift(u)
    }
}

/// Pairwise distance oracle for tabulated metrics. `None` marks a pair the
/// table does not cover.
pub trait DistanceOracle: Send + Sync + fmt::Debug {
    fn distance(&self, a: &[f64], b: &[f64]) -> Option<f64>;
}

/// How distances on a leaf are computed.
#[derive(Debug, Clone)]
pub enum MetricRule {
    Intrinsic,
    /// `c` times the intrinsic metric.
    Scaled(f64),
    /// `d(a, b) = d_target(h(a), h(b))` for a 1-D monotone map `h`.
    Pullback {
        map: Arc<dyn MonotoneMap>,
        target: LeafModel,
    },
    /// `max_{|n| <= horizon} d_c(F^n a, F^n b)` along the fiber over `base`.
    TruncatedSup {
        system: SystemSpec,
        base: f64,
        horizon: u32,
    },
    Tabulated(Arc<dyn DistanceOracle>),
}

/// A half-open, open or closed coordinate interval of a 1-D leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Span {
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    pub fn len(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo || (self.hi == self.lo && !(self.lo_closed && self.hi_closed))
    }
}

/// A computable metric on a model leaf.
#[derive(Debug, Clone)]
pub struct LeafMetric {
    pub leaf: LeafModel,
    pub rule: MetricRule,
}

impl LeafMetric {
    pub fn new(leaf: LeafModel, rule: MetricRule) -> Result<Self> {
        leaf.validate()?;
        match &rule {
            MetricRule::Scaled(c) if !(*c > 0.0 && c.is_finite()) => {
                return argument(format!("scale {c} must be positive"));
            }
            MetricRule::Pullback { target, .. } => {
                target.validate()?;
                if leaf.dimension() != 1 || target.dimension() != 1 {
                    return argument("pullback metrics are defined on 1-D leaves only");
                }
            }
            MetricRule::TruncatedSup { system, .. } if !system.has_fiber() => {
                return argument("truncated sup-metric needs a system with fibers");
            }
            MetricRule::TruncatedSup { system, .. } if system.fiber_model() != leaf => {
                return argument("truncated sup-metric leaf must be the system's fiber");
            }
            _ => {}
        }
        if leaf.dimension() > 1
            && !matches!(rule, MetricRule::Intrinsic | MetricRule::Scaled(_) | MetricRule::Tabulated(_))
        {
            return argument("only intrinsic, scaled or tabulated metrics on boxes");
        }
        Ok(LeafMetric { leaf, rule })
    }

    pub fn intrinsic(leaf: LeafModel) -> Self {
        LeafMetric { leaf, rule: MetricRule::Intrinsic }
    }

    pub fn scaled(leaf: LeafModel, c: f64) -> Result<Self> {
        Self::new(leaf, MetricRule::Scaled(c))
    }

    /// Same rule multiplied by `c`. Intrinsic and scaled rules stay closed-form;
    /// pullbacks pick up an affine post-composition.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        let rule = match &self.rule {
            MetricRule::Intrinsic => MetricRule::Scaled(c),
            MetricRule::Scaled(s) => MetricRule::Scaled(s * c),
            MetricRule::Pullback { map, target } => {
                let target = match *target {
                    LeafModel::FlatInterval { length } => LeafModel::FlatInterval { length: c * length },
                    LeafModel::Circle { circumference } => LeafModel::Circle { circumference: c * circumference },
                    b => b,
                };
                MetricRule::Pullback {
                    map: Arc::new(Composed { inner: map.clone(), outer: AffineMap { slope: c, offset: 0.0 } }),
                    target,
                }
            }
            _ => return argument("only intrinsic, scaled and pullback metrics can be rescaled"),
        };
        Self::new(self.leaf, rule)
    }

    /// `Some(c)` when the metric is `c` times the intrinsic one.
    pub fn euclidean_scale(&self) -> Option<f64> {
        match self.rule {
            MetricRule::Intrinsic => Some(1.0),
            MetricRule::Scaled(c) => Some(c),
            _ => None,
        }
    }

    /// Whether distances are lengths of shortest arcs, so that 1-D Hausdorff
    /// masses are closed-form.
    pub fn is_length_metric(&self) -> bool {
        matches!(self.rule, MetricRule::Intrinsic | MetricRule::Scaled(_) | MetricRule::Pullback { .. })
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.leaf.check(a)?;
        self.leaf.check(b)?;
        self.distance_unchecked(a, b)
    }

    pub fn distance1(&self, a: f64, b: f64) -> Result<f64> {
        self.distance(&[a], &[b])
    }

    fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(match &self.rule {
            MetricRule::Intrinsic => intrinsic_distance(&self.leaf, a, b),
            MetricRule::Scaled(c) => c * intrinsic_distance(&self.leaf, a, b),
            MetricRule::Pullback { map, target } => {
                let (ha, hb) = (map.lift(a[0]), map.lift(b[0]));
                match *target {
                    LeafModel::Circle { circumference } => {
                        let d = reduce_mod(ha - hb, circumference);
                        d.min(circumference - d)
                    }
                    _ => (ha - hb).abs(),
                }
            }
            MetricRule::TruncatedSup { system, base, horizon } => {
                crate::metric_systems::sup_metric_truncated(system, *base, a[0], b[0], *horizon)?
            }
            MetricRule::Tabulated(oracle) => {
                oracle.distance(a, b).ok_or_else(|| Error::Oracle(format!("pair {a:?}, {b:?} not tabulated")))?
            }
        })
    }

    /// Length of the positively oriented arc from `a` to `b` (lift
    /// coordinates, `a <= b`) measured in this metric.
    pub fn arc_length(&self, a: f64, b: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        match &self.rule {
            MetricRule::Intrinsic => Ok(b - a),
            MetricRule::Scaled(c) => Ok(c * (b - a)),
            MetricRule::Pullback { map, .. } => Ok(map.lift(b) - map.lift(a)),
            _ => {
                const SEGMENTS: usize = 256;
                let h = (b - a) / SEGMENTS as f64;
                let mut prev = self.leaf.reduce1(a)?;
                let mut total = 0.0;
                for i in 1..=SEGMENTS {
                    let next = self.leaf.reduce1(a + h * i as f64)?;
                    total += self.distance_unchecked(&[prev], &[next])?;
                    prev = next;
                }
                Ok(total)
            }
        }
    }

    /// The ball `B(center, r)` (closed if `closed`) of a 1-D leaf as coordinate
    /// spans inside the fundamental domain. `None` when the rule cannot
    /// describe balls (tabulated metrics) or the leaf is not 1-D.
    pub fn ball_spans(&self, center: f64, r: f64, closed: bool) -> Result<Option<Vec<Span>>> {
        if self.leaf.dimension() != 1 {
            return Ok(None);
        }
        self.leaf.check(&[center])?;
        if r < 0.0 || r.is_nan() {
            return argument(format!("negative radius {r}"));
        }
        let (lo, hi) = match &self.rule {
            MetricRule::Intrinsic => (center - r, center + r),
            MetricRule::Scaled(c) => (center - r / c, center + r / c),
            MetricRule::Pullback { map, target } => {
                // Spans beyond the leaf are clipped after mapping back.
                let u = map.lift(center);
                if let LeafModel::Circle { circumference } = *target {
                    if 2.0 * r > circumference {
                        return Ok(Some(lift_interval_to_spans(&self.leaf, 0.0, f64::INFINITY, closed)));
                    }
                }
                (map.lift_inverse(u - r), map.lift_inverse(u + r))
            }
            MetricRule::TruncatedSup { .. } => {
                let reach = match self.leaf {
                    LeafModel::Circle { circumference } => (circumference / 2.0, circumference / 2.0),
                    LeafModel::FlatInterval { length } => (center, length - center),
                    LeafModel::EuclideanBox { .. } => unreachable!(),
                };
                let right = self.bisect_extent(center, r, closed, 1.0, reach.1)?;
                let left = self.bisect_extent(center, r, closed, -1.0, reach.0)?;
                if matches!(self.leaf, LeafModel::Circle { .. }) && right >= reach.1 && left >= reach.0 {
                    (center - reach.0 - 1.0, center + reach.1 + 1.0)
                } else {
                    (center - left, center + right)
                }
            }
            MetricRule::Tabulated(_) => return Ok(None),
        };
        Ok(Some(lift_interval_to_spans(&self.leaf, lo, hi, closed)))
    }

    /// Largest `t` in `[0, reach]` with `center + sign * s` in the ball for all `s < t`.
    fn bisect_extent(&self, center: f64, r: f64, closed: bool, sign: f64, reach: f64) -> Result<f64> {
        let inside = |t: f64| -> Result<bool> {
            let p = self.leaf.reduce1(center + sign * t)?;
            let d = self.distance_unchecked(&[center], &[p])?;
            Ok(if closed { d <= r } else { d < r })
        };
        if inside(reach)? {
            return Ok(reach);
        }
        let (mut lo, mut hi) = (0.0, reach);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if inside(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[derive(Debug)]
struct Composed {
    inner: Arc<dyn MonotoneMap>,
    outer: AffineMap,
}

impl MonotoneMap for Composed {
    fn lift(&self, v: f64) -> f64 {
        self.outer.lift(self.inner.lift(v))
    }

    fn lift_inverse(&self, u: f64) -> f64 {
        self.inner.lift_inverse(self.outer.lift_inverse(u))
    }
}

fn intrinsic_distance(leaf: &LeafModel, a: &[f64], b: &[f64]) -> f64 {
    match *leaf {
        LeafModel::Circle { circumference } => {
            let d = reduce_mod(a[0] - b[0], circumference);
            d.min(circumference - d)
        }
        LeafModel::FlatInterval { .. } => (a[0] - b[0]).abs(),
        LeafModel::EuclideanBox { .. } => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
    }
}

/// Split a lift-coordinate interval into spans of the fundamental domain.
fn lift_interval_to_spans(leaf: &LeafModel, lo: f64, hi: f64, closed: bool) -> Vec<Span> {
    match *leaf {
        LeafModel::Circle { circumference: c } => {
            if hi - lo > c || (closed && hi - lo >= c) {
                return vec![Span { lo: 0.0, hi: c, lo_closed: true, hi_closed: false }];
            }
            let shift = (lo / c).floor() * c;
            let (a, b) = (lo - shift, hi - shift);
            if b <= c {
                vec![Span { lo: a, hi: b.min(c), lo_closed: closed, hi_closed: closed && b < c }]
            } else {
                vec![
                    Span { lo: a, hi: c, lo_closed: closed, hi_closed: false },
                    Span { lo: 0.0, hi: b - c, lo_closed: true, hi_closed: closed },
                ]
            }
        }
        LeafModel::FlatInterval { length } => {
            let (a, b) = (lo.max(0.0), hi.min(length));
            vec![Span { lo: a, hi: b, lo_closed: closed || lo < 0.0, hi_closed: closed || hi > length }]
        }
        LeafModel::EuclideanBox { .. } => Vec::new(),
    }
}

/// Mass of balls under a measure on a leaf.
pub trait BallMeasure: Sync {
    /// Mass of the open ball.
    fn ball_mass(&self, center: &[f64], r: f64) -> Result<f64>;

    /// Mass of the closed ball; defaults to the open ball for measures
    /// without atoms.
    fn closed_ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        self.ball_mass(center, r)
    }
}

/// Volume of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(n as f64 / 2.0) / gamma_half_integer(n + 2),
    }
}

fn gamma_half_integer(twice: usize) -> f64 {
    // Gamma(twice / 2).
    if twice == 2 {
        1.0
    } else if twice == 1 {
        PI.sqrt()
    } else {
        (twice as f64 / 2.0 - 1.0) * gamma_half_integer(twice - 2)
    }
}

/// Hausdorff mass of grid-cube covers per unit volume in dimension `n`:
/// cubes of side `t` sit in balls of radius `t sqrt(n) / 2`.
pub fn cube_cover_constant(n: usize) -> f64 {
    ((n as f64).sqrt() / 2.0).powi(n as i32)
}

/// Hausdorff measure `lambda` of a leaf metric under the `r^m` premeasure.
///
/// In dimension one this is half the metric length. On boxes it is the
/// grid-cube cover constant times the (scaled) volume.
#[derive(Debug, Clone)]
pub struct HausdorffMeasure {
    pub metric: LeafMetric,
}

impl HausdorffMeasure {
    pub fn new(metric: LeafMetric) -> Self {
        HausdorffMeasure { metric }
    }

    /// Mass of a union of disjoint spans of a 1-D leaf.
    pub fn span_mass(&self, spans: &[Span]) -> Result<f64> {
        let mut total = 0.0;
        for s in spans {
            total += self.metric.arc_length(s.lo, s.hi)?;
        }
        Ok(0.5 * total)
    }

    fn box_ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        let scale = self
            .metric
            .euclidean_scale()
            .ok_or_else(|| Error::Oracle("Hausdorff mass on boxes needs an intrinsic or scaled metric".into()))?;
        let LeafModel::EuclideanBox { dimension, side } = self.metric.leaf else { unreachable!() };
        let vol = clipped_ball_volume(center, r / scale, side);
        Ok(cube_cover_constant(dimension) * scale.powi(dimension as i32) * vol)
    }
}

impl BallMeasure for HausdorffMeasure {
    fn ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        self.metric.leaf.check(center)?;
        if self.metric.leaf.dimension() > 1 {
            return self.box_ball_mass(center, r);
        }
        match self.metric.ball_spans(center[0], r, false)? {
            Some(spans) => self.span_mass(&spans),
            None => Err(Error::Oracle("metric rule does not describe balls".into())),
        }
    }
}

/// Volume of `B(center, r)` intersected with `[0, side]^n`.
pub fn clipped_ball_volume(center: &[f64], r: f64, side: f64) -> f64 {
    let n = center.len();
    if r <= 0.0 {
        return 0.0;
    }
    if center.iter().all(|&c| c - r >= 0.0 && c + r <= side) {
        return unit_ball_volume(n) * r.powi(n as i32);
    }
    clipped_volume_rec(center, r, side)
}

fn clipped_volume_rec(center: &[f64], r: f64, side: f64) -> f64 {
    let c = center[0];
    let (lo, hi) = ((c - r).max(0.0), (c + r).min(side));
    if hi <= lo {
        return 0.0;
    }
    if center.len() == 1 {
        return hi - lo;
    }
    // Composite midpoint rule on a grid that is graded towards the ends,
    // where the slice radius has a square-root singularity.
    let steps = if center.len() == 2 { 4096 } else { 256 };
    let rest = &center[1..];
    let mut total = 0.0;
    for i in 0..steps {
        let (u0, u1) = (i as f64 / steps as f64, (i + 1) as f64 / steps as f64);
        let (x0, x1) = (graded(lo, hi, c, r, u0), graded(lo, hi, c, r, u1));
        let xm = 0.5 * (x0 + x1);
        let slice = (r * r - (xm - c) * (xm - c)).max(0.0).sqrt();
        total += (x1 - x0) * clipped_volume_rec(rest, slice, side);
    }
    total
}

/// Map `u` in `[0, 1]` to `[lo, hi]`, clustering points near `c +- r`.
fn graded(lo: f64, hi: f64, c: f64, r: f64, u: f64) -> f64 {
    // Substitute x = c + r sin(theta), which removes the end singularity.
    let t0 = ((lo - c) / r).clamp(-1.0, 1.0).asin();
    let t1 = ((hi - c) / r).clamp(-1.0, 1.0).asin();
    c + r * (t0 + u * (t1 - t0)).sin()
}

/// Point mass `mass` at `point`.
#[derive(Debug, Clone)]
pub struct DiracMeasure {
    pub point: Vec<f64>,
    pub mass: f64,
    pub metric: LeafMetric,
}

impl BallMeasure for DiracMeasure {
    fn ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        let d = self.metric.distance(center, &self.point)?;
        Ok(if d < r { self.mass } else { 0.0 })
    }

    fn closed_ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        let d = self.metric.distance(center, &self.point)?;
        Ok(if d <= r { self.mass } else { 0.0 })
    }
}

/// Measure given by a closure `(center, r, closed) -> mass`.
pub struct FnMeasure<F>(pub F);

impl<F> BallMeasure for FnMeasure<F>
where
    F: Fn(&[f64], f64, bool) -> Result<f64> + Sync,
{
    fn ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        (self.0)(center, r, false)
    }

    fn closed_ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        (self.0)(center, r, true)
    }
}

/// Sum of two measures.
pub struct SumMeasure<'a>(pub &'a dyn BallMeasure, pub &'a dyn BallMeasure);

impl BallMeasure for SumMeasure<'_> {
    fn ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        Ok(self.0.ball_mass(center, r)? + self.1.ball_mass(center, r)?)
    }

    fn closed_ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        Ok(self.0.closed_ball_mass(center, r)? + self.1.closed_ball_mass(center, r)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return argument(format!("ball radius {radius} must be nonnegative"));
        }
        Ok(Ball { center, radius })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    WholeLeaf,
    Ball(Ball),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausdorffEstimate {
    pub value: f64,
    pub m: usize,
    pub delta_ladder: Vec<f64>,
    pub per_delta_values: Vec<f64>,
    pub converged: bool,
    /// Lower bound `volume / omega_m` valid for every ball cover.
    pub lower_bound: f64,
    /// `value - lower_bound`.
    pub gap: f64,
}

/// `delta_j = 2^-j` for `j = 3..=14`.
pub fn default_delta_ladder() -> Vec<f64> {
    (3..=14).map(|j| 0.5f64.powi(j)).collect()
}

pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;

/// Check a ladder is strictly decreasing and positive.
pub fn check_ladder(ladder: &[f64], what: &str) -> Result<()> {
    if ladder.is_empty() {
        return argument(format!("{what} ladder is empty"));
    }
    if ladder.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return argument(format!("{what} ladder entries must be positive"));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return argument(format!("{what} ladder must be strictly decreasing"));
    }
    Ok(())
}

/// Carathéodory estimate `inf sum r_i^m` over covers by balls of diameter
/// at most `delta`, for each `delta` of the ladder.
///
/// Length metrics use equal-radius covers of each arc; other 1-D metrics use
/// chain covers whose pieces have metric diameter at most `delta`. Boxes use
/// grid cubes inscribed in balls of diameter `delta`. The raw cover sums are
/// replaced by their running minimum from the fine end, since a finer cover
/// is admissible at every coarser rung.
pub fn hausdorff_estimate(metric: &LeafMetric, region: &Region, m: usize, ladder: &[f64]) -> Result<HausdorffEstimate> {
    check_ladder(ladder, "delta")?;
    if m != metric.leaf.dimension() {
        return argument(format!("m = {m} does not match leaf dimension {}", metric.leaf.dimension()));
    }
    if let Region::Ball(b) = region {
        metric.leaf.check(&b.center)?;
        if b.radius == 0.0 {
            return Ok(HausdorffEstimate {
                value: 0.0,
                m,
                delta_ladder: ladder.to_vec(),
                per_delta_values: vec![0.0; ladder.len()],
                converged: true,
                lower_bound: 0.0,
                gap: 0.0,
            });
        }
    }
    let (raw, volume) =
        if m == 1 { one_dim_covers(metric, region, ladder)? } else { box_covers(metric, region, ladder)? };
    let mut values = raw;
    for j in (0..values.len().saturating_sub(1)).rev() {
        values[j] = values[j].min(values[j + 1]);
    }
    let value = *values.last().unwrap();
    let converged = match values.len() {
        0 | 1 => false,
        n => {
            let (a, b) = (values[n - 2], values[n - 1]);
            b == a || (b - a).abs() <= CONVERGENCE_TOLERANCE * b.abs().max(a.abs())
        }
    };
    let lower_bound = volume / unit_ball_volume(m);
    Ok(HausdorffEstimate {
        value,
        m,
        delta_ladder: ladder.to_vec(),
        per_delta_values: values,
        converged,
        lower_bound,
        gap: value - lower_bound,
    })
}

fn one_dim_covers(metric: &LeafMetric, region: &Region, ladder: &[f64]) -> Result<(Vec<f64>, f64)> {
    let spans = match region {
        Region::WholeLeaf => match metric.leaf {
            LeafModel::Circle { circumference } => {
                vec![Span { lo: 0.0, hi: circumference, lo_closed: true, hi_closed: false }]
            }
            LeafModel::FlatInterval { length } => {
                vec![Span { lo: 0.0, hi: length, lo_closed: true, hi_closed: true }]
            }
            LeafModel::EuclideanBox { .. } => unreachable!(),
        },
        Region::Ball(b) => metric
            .ball_spans(b.center[0], b.radius, false)?
            .ok_or_else(|| Error::Oracle("metric rule does not describe balls".into()))?,
    };
    let mut lengths = Vec::with_capacity(spans.len());
    for s in &spans {
        lengths.push(metric.arc_length(s.lo, s.hi)?);
    }
    let volume: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(ladder.len());
    for &delta in ladder {
        let mut total = 0.0;
        for (s, &len) in spans.iter().zip(&lengths) {
            total += if metric.is_length_metric() {
                // k equal balls of radius len / (2k) and diameter len / k <= delta.
                let k = (len / delta).ceil().max(1.0);
                k * (len / (2.0 * k))
            } else {
                chain_cover(metric, s.lo, s.hi, delta)?
            };
        }
        out.push(total);
    }
    Ok((out, volume))
}

/// Cover the arc `[a, b]` by consecutive pieces of metric diameter at most
/// `delta`, each inside a ball centred at the piece midpoint.
fn chain_cover(metric: &LeafMetric, a: f64, b: f64, delta: f64) -> Result<f64> {
    let leaf = metric.leaf;
    let d = |x: f64, y: f64| -> Result<f64> { metric.distance_unchecked(&[leaf.reduce1(x)?], &[leaf.reduce1(y)?]) };
    let mut total = 0.0;
    let mut start = a;
    let mut guard = 0usize;
    while start < b {
        guard += 1;
        if guard > 10_000_000 {
            return Err(Error::Oracle("chain cover did not terminate".into()));
        }
        // Grow the piece by doubling, then bisect the admissible end point.
        let mut step = delta.min(b - start) * 0.25;
        let mut end = (start + step).min(b);
        while end < b && d(start, (start + 2.0 * step).min(b))? <= delta {
            step *= 2.0;
            end = (start + step).min(b);
        }
        let (mut lo, mut hi) = (end, (start + 2.0 * step).min(b));
        if end < b {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if d(start, mid)? <= delta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            end = lo;
        }
        if end <= start {
            return Err(Error::Oracle("chain cover stalled".into()));
        }
        let mid = 0.5 * (start + end);
        total += d(mid, start)?.max(d(mid, end)?);
        start = end;
    }
    Ok(total)
}

fn box_covers(metric: &LeafMetric, region: &Region, ladder: &[f64]) -> Result<(Vec<f64>, f64)> {
    let scale = metric
        .euclidean_scale()
        .ok_or_else(|| Error::Oracle("box covers need an intrinsic or scaled metric".into()))?;
    let LeafModel::EuclideanBox { dimension: n, side } = metric.leaf else { unreachable!() };
    let sqrt_n = (n as f64).sqrt();
    let mut out = Vec::with_capacity(ladder.len());
    for &delta in ladder {
        // Cubes of Euclidean side t have metric diameter scale * t * sqrt(n).
        let k = (side * scale * sqrt_n / delta).ceil().max(1.0) as u64;
        let t = side / k as f64;
        let radius = scale * t * sqrt_n / 2.0;
        let cubes = match region {
            Region::WholeLeaf => (k as f64).powi(n as i32),
            Region::Ball(b) => {
                let r = b.radius / scale;
                count_cubes(&b.center, r * r, t, k) as f64
            }
        };
        out.push(cubes * radius.powi(n as i32));
    }
    let volume = match region {
        Region::WholeLeaf => (scale * side).powi(n as i32),
        Region::Ball(b) => scale.powi(n as i32) * clipped_ball_volume(&b.center, b.radius / scale, side),
    };
    Ok((out, volume))
}

/// Number of grid cubes (side `t`, `k` per axis) meeting the open ball with
/// squared radius `budget` around `center`.
fn count_cubes(center: &[f64], budget: f64, t: f64, k: u64) -> u64 {
    let c = center[0];
    let r = budget.max(0.0).sqrt();
    let first = ((c - r) / t).floor().max(0.0) as u64;
    let last = (((c + r) / t).ceil() as u64).min(k);
    let mut total = 0;
    for i in first..last {
        let (lo, hi) = (i as f64 * t, (i + 1) as f64 * t);
        let gap = if c < lo {
            lo - c
        } else if c > hi {
            c - hi
        } else {
            0.0
        };
        let left = budget - gap * gap;
        if left <= 0.0 {
            continue;
        }
        total += if center.len() == 1 { 1 } else { count_cubes(&center[1..], left, t, k) };
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    /// `max nu(B(x, 2r)) / nu(B(x, r))`; infinite when a denominator vanished.
    pub omega: f64,
    /// Center and radius attaining the maximum.
    pub worst: Option<(Vec<f64>, f64)>,
    /// Number of scanned balls with zero mass.
    pub zero_mass: usize,
}

/// Empirical doubling constant over a grid of centers and radii. On flat
/// intervals the caller keeps centers at least `2 * max(radii)` from the
/// endpoints, where clipping would distort the ratio.
pub fn doubling_constant(measure: &dyn BallMeasure, centers: &[Vec<f64>], radii: &[f64]) -> Result<DoublingReport> {
    if centers.is_empty() || radii.is_empty() {
        return argument("doubling scan needs centers and radii");
    }
    let mut report = DoublingReport { omega: 0.0, worst: None, zero_mass: 0 };
    for c in centers {
        for &r in radii {
            if !(r > 0.0) {
                return argument(format!("radius {r} must be positive"));
            }
            let small = measure.ball_mass(c, r)?;
            let big = measure.ball_mass(c, 2.0 * r)?;
            let ratio = if small > 0.0 {
                big / small
            } else {
                report.zero_mass += 1;
                f64::INFINITY
            };
            if ratio > report.omega || report.worst.is_none() {
                report.omega = ratio.max(report.omega);
                report.worst = Some((c.clone(), r));
            }
        }
    }
    Ok(report)
}

/// Masses of the annuli `{r - w < d(x, y) < r + w}` for each width.
pub fn annulus_mass_profile(measure: &dyn BallMeasure, ball: &Ball, widths: &[f64]) -> Result<Vec<f64>> {
    check_ladder(widths, "width")?;
    widths
        .iter()
        .map(|&w| {
            let outer = measure.ball_mass(&ball.center, ball.radius + w)?;
            let inner = if ball.radius > w { measure.closed_ball_mass(&ball.center, ball.radius - w)? } else { 0.0 };
            Ok((outer - inner).max(0.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> LeafModel {
        LeafModel::Circle { circumference: 1.0 }
    }

    fn flat(length: f64) -> LeafModel {
        LeafModel::FlatInterval { length }
    }

    #[test]
    fn distance_examples() {
        let c = LeafMetric::intrinsic(circle());
        assert!((c.distance1(0.1, 0.9).unwrap() - 0.2).abs() < 1e-15);
        let f = LeafMetric::intrinsic(flat(1.0));
        assert_eq!(f.distance1(0.25, 0.75).unwrap(), 0.5);
        let s = LeafMetric::scaled(circle(), 3.0).unwrap();
        assert_eq!(s.distance1(0.0, 0.25).unwrap(), 0.75);
    }

    #[test]
    fn distance_rejects_points_outside_domain() {
        let c = LeafMetric::intrinsic(circle());
        assert!(matches!(c.distance1(1.0, 0.2), Err(Error::Domain(_))));
        let f = LeafMetric::intrinsic(flat(1.0));
        assert!(matches!(f.distance1(-0.1, 0.2), Err(Error::Domain(_))));
    }

    #[test]
    fn hausdorff_of_interval_and_circle_is_half() {
        for leaf in [flat(1.0), circle()] {
            let est = hausdorff_estimate(&LeafMetric::intrinsic(leaf), &Region::WholeLeaf, 1, &default_delta_ladder())
                .unwrap();
            assert!((est.value - 0.5).abs() < 0.005, "{est:?}");
            assert!(est.converged);
        }
    }

    #[test]
    fn hausdorff_of_degenerate_ball_is_zero() {
        let m = LeafMetric::intrinsic(flat(1.0));
        let b = Ball::new(vec![0.3], 0.0).unwrap();
        let est = hausdorff_estimate(&m, &Region::Ball(b), 1, &default_delta_ladder()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn hausdorff_rejects_bad_ladders() {
        let m = LeafMetric::intrinsic(flat(1.0));
        assert!(hausdorff_estimate(&m, &Region::WholeLeaf, 1, &[0.1, 0.2]).is_err());
        assert!(hausdorff_estimate(&m, &Region::WholeLeaf, 2, &[0.1]).is_err());
    }

    #[test]
    fn box_whole_leaf_uses_cube_constant() {
        let m = LeafMetric::intrinsic(LeafModel::EuclideanBox { dimension: 2, side: 1.0 });
        let est = hausdorff_estimate(&m, &Region::WholeLeaf, 2, &default_delta_ladder()).unwrap();
        assert!((est.value - 0.5).abs() < 1e-12);
        assert!((est.lower_bound - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn box_ball_estimate_approaches_cube_constant_times_area() {
        let m = LeafMetric::intrinsic(LeafModel::EuclideanBox { dimension: 2, side: 1.0 });
        let b = Ball::new(vec![0.5, 0.5], 0.25).unwrap();
        let est = hausdorff_estimate(&m, &Region::Ball(b), 2, &default_delta_ladder()).unwrap();
        let target = 0.5 * PI * 0.0625;
        assert!((est.value - target).abs() / target < 0.01, "{est:?}");
        assert!(est.per_delta_values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sup_metric_chain_cover_of_isometric_fiber_matches_length() {
        let sys = SystemSpec::ProductDoublingRotation { alpha: crate::systems::RotationNumber::golden() };
        let m = LeafMetric::new(circle(), MetricRule::TruncatedSup { system: sys, base: 0.3, horizon: 4 }).unwrap();
        let b = Ball::new(vec![0.5], 0.1).unwrap();
        let est = hausdorff_estimate(&m, &Region::Ball(b), 1, &default_delta_ladder()).unwrap();
        assert!((est.value - 0.1).abs() < 1e-3, "{est:?}");
    }

    #[test]
    fn doubling_examples() {
        let lam = HausdorffMeasure::new(LeafMetric::intrinsic(flat(1.0)));
        let centers = vec![vec![0.45], vec![0.5], vec![0.55]];
        let rep = doubling_constant(&lam, &centers, &[0.01, 0.05, 0.1]).unwrap();
        assert!((rep.omega - 2.0).abs() < 1e-12);

        let area = HausdorffMeasure::new(LeafMetric::intrinsic(LeafModel::EuclideanBox { dimension: 2, side: 1.0 }));
        let rep = doubling_constant(&area, &[vec![0.5, 0.5]], &[0.05, 0.1, 0.2]).unwrap();
        assert!((rep.omega - 4.0).abs() < 1e-12);

        let dirac = DiracMeasure { point: vec![0.5], mass: 1.0, metric: LeafMetric::intrinsic(flat(1.0)) };
        let rep = doubling_constant(&dirac, &[vec![0.5]], &[0.01, 0.1]).unwrap();
        assert_eq!(rep.omega, 1.0);
    }

    #[test]
    fn doubling_zero_mass_is_infinite() {
        let dirac = DiracMeasure { point: vec![0.9], mass: 1.0, metric: LeafMetric::intrinsic(flat(1.0)) };
        let rep = doubling_constant(&dirac, &[vec![0.1]], &[0.01]).unwrap();
        assert!(rep.omega.is_infinite());
        assert_eq!(rep.zero_mass, 1);
    }

    #[test]
    fn annulus_profiles() {
        let metric = LeafMetric::intrinsic(flat(1.0));
        let lam = HausdorffMeasure::new(metric.clone());
        let ball = Ball::new(vec![0.5], 0.2).unwrap();
        let widths = [0.04, 0.02, 0.01, 0.005];
        let masses = annulus_mass_profile(&lam, &ball, &widths).unwrap();
        for (m, w) in masses.iter().zip(widths) {
            // Two arcs of length 2w, half-length convention.
            assert!((m - 2.0 * w).abs() < 1e-12, "{m} vs {w}");
        }
        let dirac = DiracMeasure { point: vec![0.5], mass: 1.0, metric: metric.clone() };
        assert!(annulus_mass_profile(&dirac, &ball, &widths).unwrap().iter().all(|&m| m == 0.0));
        let on_sphere = DiracMeasure { point: vec![0.7], mass: 0.25, metric };
        let masses = annulus_mass_profile(&on_sphere, &ball, &widths).unwrap();
        assert!(masses.iter().all(|&m| m == 0.25));
    }

    #[test]
    fn circle_ball_spans_wrap() {
        let m = LeafMetric::intrinsic(circle());
        let spans = m.ball_spans(0.05, 0.1, false).unwrap().unwrap();
        assert_eq!(spans.len(), 2);
        let total: f64 = spans.iter().map(|s| s.len()).sum();
        assert!((total - 0.2).abs() < 1e-15);
        assert!(spans.iter().any(|s| s.contains(0.97)));
        let whole = m.ball_spans(0.3, 0.6, false).unwrap().unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].len(), 1.0);
    }

    #[test]
    fn pullback_ball_mass_matches_target() {
        let map: Arc<dyn MonotoneMap> = Arc::new(AffineMap { slope: 2.0, offset: 0.0 });
        let m = LeafMetric::new(flat(1.0), MetricRule::Pullback { map, target: flat(2.0) }).unwrap();
        assert!((m.distance1(0.1, 0.4).unwrap() - 0.6).abs() < 1e-15);
        let lam = HausdorffMeasure::new(m);
        assert!((lam.ball_mass(&[0.5], 0.2).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn scaled_masses_scale() {
        let base = HausdorffMeasure::new(LeafMetric::intrinsic(circle()));
        let tri = HausdorffMeasure::new(LeafMetric::scaled(circle(), 3.0).unwrap());
        let a = base.ball_mass(&[0.4], 0.05).unwrap();
        let b = tri.ball_mass(&[0.4], 0.15).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-14);
    }

    #[test]
    fn clipped_disk_at_corner_is_quarter() {
        let v = clipped_ball_volume(&[0.0, 0.0], 0.5, 1.0);
        assert!((v - PI * 0.25 / 4.0).abs() < 1e-6, "{v}");
        let half = clipped_ball_volume(&[0.5, 0.0], 0.25, 1.0);
        assert!((half - PI * 0.0625 / 2.0).abs() < 1e-6);
    }
}
