//! Empirical conditional measures: orbit states binned by plaque, with the
//! unit-ball normalization and chart-overlap consistency checks.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Error, Result};
use crate::lamination::{Chart, Overlap, PlaqueId};
use crate::metric::{BallMeasure, LeafMetric, LeafModel, Span};
use crate::stats;
use crate::systems::OrbitStream;

/// Bins with fewer samples are excluded from classification.
pub const DEFAULT_MIN_COUNT: u64 = 1000;
/// Cells of the fiber histograms.
pub const DEFAULT_BINS: usize = 4096;
/// Fiber coordinates closer than this (on the same base point) are merged.
pub const QUANTUM: f64 = 1e-12;

/// An orbit state seen in a plaque. `weight` counts merged repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSample {
    pub base: f64,
    pub fiber: f64,
    pub weight: f64,
}

/// Weighted point cloud on one plaque approximating its conditional measure.
///
/// Masses are `scale * raw`, where raw weights count orbit states. The scale
/// starts at probability normalization and is reset by
/// [`normalize_unit_ball`].
#[derive(Debug, Clone)]
pub struct EmpiricalConditional {
    pub plaque: PlaqueId,
    pub fiber: LeafModel,
    samples: Vec<FiberSample>,
    prefix: Vec<f64>,
    pub raw_mass: f64,
    /// Weighted median of the fiber coordinates.
    pub anchor: f64,
    pub scale: f64,
    pub metric: LeafMetric,
    pub low_count: bool,
}

impl EmpiricalConditional {
    /// Build from raw `(base, fiber)` points. Points sharing a base point and
    /// a fiber coordinate up to [`QUANTUM`] are merged.
    pub fn from_points(
        plaque: PlaqueId,
        fiber: LeafModel,
        mut points: Vec<(f64, f64, f64)>,
        min_count: u64,
    ) -> Result<Self> {
        if points.is_empty() {
            return argument(format!("plaque {plaque} has no samples"));
        }
        for &(_, v, w) in &points {
            fiber.check(&[v])?;
            if !(w > 0.0) {
                return argument("sample weights must be positive");
            }
        }
        points.par_sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
        let mut samples: Vec<FiberSample> = Vec::with_capacity(points.len());
        for (base, v, w) in points {
            if let Some(last) = samples.last_mut() {
                if last.base == base && ((last.fiber / QUANTUM).round() == (v / QUANTUM).round()) {
                    last.weight += w;
                    continue;
                }
            }
            samples.push(FiberSample { base, fiber: v, weight: w });
        }
        Ok(Self::from_samples(plaque, fiber, samples, min_count))
    }

    fn from_samples(plaque: PlaqueId, fiber: LeafModel, samples: Vec<FiberSample>, min_count: u64) -> Self {
        let mut prefix = Vec::with_capacity(samples.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for s in &samples {
            acc += s.weight;
            prefix.push(acc);
        }
        let half = acc / 2.0;
        let idx = prefix[1..].partition_point(|&p| p < half).min(samples.len() - 1);
        EmpiricalConditional {
            plaque,
            fiber,
            anchor: samples[idx].fiber,
            samples,
            prefix,
            raw_mass: acc,
            scale: 1.0 / acc,
            metric: LeafMetric::intrinsic(fiber),
            low_count: acc < min_count as f64,
        }
    }

    pub fn samples(&self) -> &[FiberSample] {
        &self.samples
    }

    /// Normalized mass of every sample.
    pub fn total_mass(&self) -> f64 {
        self.scale * self.raw_mass
    }

    /// Raw weight in a coordinate span.
    pub fn raw_in_span(&self, span: &Span) -> f64 {
        let lo = if span.lo_closed {
            self.samples.partition_point(|s| s.fiber < span.lo)
        } else {
            self.samples.partition_point(|s| s.fiber <= span.lo)
        };
        let hi = if span.hi_closed {
            self.samples.partition_point(|s| s.fiber <= span.hi)
        } else {
            self.samples.partition_point(|s| s.fiber < span.hi)
        };
        if hi > lo {
            self.prefix[hi] - self.prefix[lo]
        } else {
            0.0
        }
    }

    /// Raw weight of a ball in `metric`.
    pub fn raw_ball(&self, metric: &LeafMetric, center: f64, r: f64, closed: bool) -> Result<f64> {
        match metric.ball_spans(center, r, closed)? {
            Some(spans) => Ok(spans.iter().map(|s| self.raw_in_span(s)).sum()),
            None => {
                let mut total = 0.0;
                for s in &self.samples {
                    let d = metric.distance1(center, s.fiber)?;
                    if d < r || (closed && d == r) {
                        total += s.weight;
                    }
                }
                Ok(total)
            }
        }
    }

    /// Same samples, with a different metric handle.
    pub fn with_metric(&self, metric: LeafMetric) -> Result<Self> {
        if metric.leaf != self.fiber {
            return argument("metric lives on a different leaf");
        }
        let mut out = self.clone();
        out.metric = metric;
        Ok(out)
    }

    /// Fiber histogram of normalized masses over `bins` equal cells.
    pub fn histogram(&self, bins: usize) -> Vec<f64> {
        histogram(self.samples.iter().map(|s| (s.fiber, s.weight * self.scale)), &self.fiber, bins)
    }

    /// KS distance of the fiber distribution from uniform.
    pub fn ks_uniform(&self) -> f64 {
        let (lo, hi) = fiber_range(&self.fiber);
        let pts: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.fiber, s.weight)).collect();
        stats::ks_uniform_weighted(&pts, lo, hi)
    }
}

impl BallMeasure for EmpiricalConditional {
    fn ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        Ok(self.scale * self.raw_ball(&self.metric, center[0], r, false)?)
    }

    fn closed_ball_mass(&self, center: &[f64], r: f64) -> Result<f64> {
        Ok(self.scale * self.raw_ball(&self.metric, center[0], r, true)?)
    }
}

fn fiber_range(leaf: &LeafModel) -> (f64, f64) {
    match *leaf {
        LeafModel::Circle { circumference } => (0.0, circumference),
        LeafModel::FlatInterval { length } => (0.0, length),
        LeafModel::EuclideanBox { side, .. } => (0.0, side),
    }
}

fn histogram(points: impl Iterator<Item = (f64, f64)>, leaf: &LeafModel, bins: usize) -> Vec<f64> {
    let (lo, hi) = fiber_range(leaf);
    let mut h = vec![0.0; bins];
    for (v, w) in points {
        let i = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        h[i.min(bins - 1)] += w;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisintegrationOptions {
    pub min_count: u64,
}

impl Default for DisintegrationOptions {
    fn default() -> Self {
        DisintegrationOptions { min_count: DEFAULT_MIN_COUNT }
    }
}

/// Conditionals of one chart.
#[derive(Debug, Clone)]
pub struct Disintegration {
    pub chart: Chart,
    pub conditionals: BTreeMap<PlaqueId, EmpiricalConditional>,
    /// Orbit states outside the chart.
    pub skipped: u64,
    pub binned: u64,
    pub low_count: Vec<PlaqueId>,
    pub diagnostics: Vec<String>,
}

impl Disintegration {
    /// Conditionals with enough samples for classification.
    pub fn qualifying(&self) -> impl Iterator<Item = &EmpiricalConditional> {
        self.conditionals.values().filter(|c| !c.low_count)
    }
}

/// Bin an orbit by plaque of `chart`.
pub fn disintegrate(orbit: &OrbitStream, chart: &Chart, opts: &DisintegrationOptions) -> Result<Disintegration> {
    let spec = orbit.spec;
    if spec.fiber_model() != chart.fiber {
        return argument("chart fiber does not match the system's fibers");
    }
    let mut bins: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); chart.cells() as usize];
    let mut skipped = 0u64;
    for s in orbit.iter() {
        let (b, v) = spec.lamination_coords(s);
        match chart.locate(b, v) {
            Ok((p, v)) => bins[p.cell as usize].push((b, v, 1.0)),
            Err(_) => skipped += 1,
        }
    }
    let binned: u64 = bins.iter().map(|b| b.len() as u64).sum();
    let built: Vec<Result<Option<EmpiricalConditional>>> = bins
        .into_par_iter()
        .enumerate()
        .map(|(cell, pts)| {
            if pts.is_empty() {
                return Ok(None);
            }
            let plaque = PlaqueId { chart: chart.id, cell: cell as u32 };
            EmpiricalConditional::from_points(plaque, chart.fiber, pts, opts.min_count).map(Some)
        })
        .collect();
    let mut conditionals = BTreeMap::new();
    for c in built {
        if let Some(c) = c? {
            conditionals.insert(c.plaque, c);
        }
    }
    let low_count: Vec<PlaqueId> = conditionals.values().filter(|c| c.low_count).map(|c| c.plaque).collect();
    let mut diagnostics = Vec::new();
    if conditionals.is_empty() {
        diagnostics.push("orbit does not meet the chart".to_string());
    }
    if !low_count.is_empty() {
        diagnostics.push(format!("{} plaques below {} samples", low_count.len(), opts.min_count));
    }
    Ok(Disintegration { chart: chart.clone(), conditionals, skipped, binned, low_count, diagnostics })
}

/// Rescale so that `B_metric(anchor, 1)` has mass exactly 1. Returns the
/// conditional and the factor relative to probability normalization.
pub fn normalize_unit_ball(cond: &EmpiricalConditional, metric: &LeafMetric) -> Result<(EmpiricalConditional, f64)> {
    let mut out = cond.with_metric(metric.clone())?;
    let raw = cond.raw_ball(metric, cond.anchor, 1.0, false)?;
    if !(raw > 0.0) {
        return Err(Error::Oracle(format!("unit ball at the anchor of plaque {} has no mass", cond.plaque)));
    }
    out.scale = 1.0 / raw;
    Ok((out, cond.raw_mass / raw))
}

/// Same conditional normalized at a different anchor.
pub fn renormalized_at(cond: &EmpiricalConditional, anchor: f64, metric: &LeafMetric) -> Result<EmpiricalConditional> {
    cond.fiber.check(&[anchor])?;
    let mut moved = cond.clone();
    moved.anchor = anchor;
    Ok(normalize_unit_ball(&moved, metric)?.0)
}

/// `beta = 1 / mu_x(B(y, 1))` under the normalization of `cond`.
pub fn proportionality(cond: &EmpiricalConditional, y: f64, metric: &LeafMetric) -> Result<f64> {
    cond.fiber.check(&[y])?;
    let m = cond.scale * cond.raw_ball(metric, y, 1.0, false)?;
    if !(m > 0.0) {
        return domain(format!("unit ball at {y} has no mass"));
    }
    Ok(1.0 / m)
}

/// Mass-weighted union of conditionals, e.g. sibling cells of a refined chart.
pub fn merged(parts: &[&EmpiricalConditional], plaque: PlaqueId, min_count: u64) -> Result<EmpiricalConditional> {
    let Some(first) = parts.first() else {
        return argument("nothing to merge");
    };
    if parts.iter().any(|p| p.fiber != first.fiber) {
        return argument("conditionals live on different fibers");
    }
    let pts: Vec<(f64, f64, f64)> =
        parts.iter().flat_map(|p| p.samples.iter().map(|s| (s.base, s.fiber, s.weight))).collect();
    EmpiricalConditional::from_points(plaque, first.fiber, pts, min_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub first: PlaqueId,
    pub second: PlaqueId,
    pub count_first: f64,
    pub count_second: f64,
    /// Total variation between the two restricted, rescaled conditionals.
    pub deviation: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub records: Vec<OverlapRecord>,
    /// Largest deviation over overlaps with enough samples.
    pub max_deviation: f64,
    pub max_flagged_deviation: f64,
    pub flagged: usize,
}

/// Compare conditionals of two charts on each overlap: restrict both to the
/// common base set, rescale to equal mass and take the total variation
/// between their fiber histograms.
pub fn overlap_consistency(
    first: &Disintegration,
    second: &Disintegration,
    overlaps: &[Overlap],
    bins: usize,
    min_count: u64,
) -> Result<OverlapReport> {
    if bins == 0 {
        return argument("need at least one histogram cell");
    }
    let mut report = OverlapReport { records: Vec::new(), max_deviation: 0.0, max_flagged_deviation: 0.0, flagged: 0 };
    for o in overlaps {
        let restrict = |d: &Disintegration, id: PlaqueId| -> (Vec<f64>, f64) {
            match d.conditionals.get(&id) {
                Some(c) => {
                    let pts = c.samples.iter().filter(|s| o.contains(s.base)).map(|s| (s.fiber, s.weight));
                    let h = histogram(pts, &c.fiber, bins);
                    let n = h.iter().sum();
                    (h, n)
                }
                None => (vec![0.0; bins], 0.0),
            }
        };
        let (h1, n1) = restrict(first, o.first);
        let (h2, n2) = restrict(second, o.second);
        let deviation = stats::total_variation(&h1, &h2);
        let flagged = n1 < min_count as f64 || n2 < min_count as f64;
        if flagged {
            report.flagged += 1;
            report.max_flagged_deviation = report.max_flagged_deviation.max(deviation);
        } else {
            report.max_deviation = report.max_deviation.max(deviation);
        }
        report.records.push(OverlapRecord {
            first: o.first,
            second: o.second,
            count_first: n1,
            count_second: n2,
            deviation,
            flagged,
        });
    }
    Ok(report)
}

/// CSV `plaque_id,fiber_coord,weight`: repeated coordinates are written as
/// exact atoms, the rest as nonzero cells of a histogram (cell midpoints).
pub fn write_conditionals_csv<W: Write>(d: &Disintegration, bins: usize, mut out: W) -> io::Result<()> {
    writeln!(out, "plaque_id,fiber_coord,weight")?;
    for c in d.conditionals.values() {
        let (lo, hi) = fiber_range(&c.fiber);
        let mut rest = vec![0.0; bins];
        let mut atoms: BTreeMap<u64, f64> = BTreeMap::new();
        for s in &c.samples {
            if s.weight > 1.0 {
                *atoms.entry(s.fiber.to_bits()).or_default() += s.weight * c.scale;
            } else {
                let i = (((s.fiber - lo) / (hi - lo)) * bins as f64) as usize;
                rest[i.min(bins - 1)] += s.weight * c.scale;
            }
        }
        for (bits, w) in atoms {
            writeln!(out, "{},{:.12e},{:.12e}", c.plaque, f64::from_bits(bits), w)?;
        }
        for (i, w) in rest.iter().enumerate() {
            if *w > 0.0 {
                let mid = lo + (i as f64 + 0.5) * (hi - lo) / bins as f64;
                writeln!(out, "{},{:.12e},{:.12e}", c.plaque, mid, w)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaqueSummary {
    pub plaque: String,
    pub samples: usize,
    pub raw_mass: f64,
    pub anchor: f64,
    pub scale: f64,
    pub low_count: bool,
    pub ks_uniform: f64,
}

pub fn plaque_summaries(d: &Disintegration) -> Vec<PlaqueSummary> {
    d.conditionals
        .values()
        .map(|c| PlaqueSummary {
            plaque: c.plaque.to_string(),
            samples: c.samples.len(),
            raw_mass: c.raw_mass,
            anchor: c.anchor,
            scale: c.scale,
            low_count: c.low_count,
            ks_uniform: c.ks_uniform(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{orbit, random_initial, RotationNumber, State, SystemSpec};

    const CIRCLE: LeafModel = LeafModel::Circle { circumference: 1.0 };
    const FLAT4: LeafModel = LeafModel::FlatInterval { length: 4.0 };

    fn plaque() -> PlaqueId {
        PlaqueId { chart: 0, cell: 0 }
    }

    fn uniform(leaf: LeafModel, n: usize) -> EmpiricalConditional {
        let (_, hi) = fiber_range(&leaf);
        let pts = (0..n).map(|i| (0.0, (i as f64 + 0.5) * hi / n as f64, 1.0)).collect();
        EmpiricalConditional::from_points(plaque(), leaf, pts, 0).unwrap()
    }

    #[test]
    fn rational_rotation_gives_three_atoms() {
        let spec = SystemSpec::Rotation { alpha: RotationNumber::rational(1, 3).unwrap() };
        let o = orbit(&spec, State::new(0.0, 0.0), 300_000, 0).unwrap();
        let chart = Chart::uniform(0, 1, CIRCLE).unwrap();
        let d = disintegrate(&o, &chart, &DisintegrationOptions::default()).unwrap();
        let c = &d.conditionals[&plaque()];
        assert_eq!(c.samples().len(), 3);
        for s in c.samples() {
            assert!((s.weight * c.scale - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(d.binned, 300_000);
    }

    #[test]
    fn mass_is_conserved() {
        let spec = SystemSpec::ProductDoublingRotation { alpha: RotationNumber::golden() };
        let o = orbit(&spec, random_initial(&spec, 7), 20_000, 7).unwrap();
        let chart = Chart::uniform(0, 16, CIRCLE).unwrap();
        let d = disintegrate(&o, &chart, &DisintegrationOptions::default()).unwrap();
        let total: f64 = d.conditionals.values().map(|c| c.raw_mass).sum();
        assert_eq!(total, 20_000.0);
        assert_eq!(d.binned + d.skipped, 20_000);
    }

    #[test]
    fn unit_ball_on_circle_is_probability() {
        let c = uniform(CIRCLE, 1000);
        let (n, factor) = normalize_unit_ball(&c, &LeafMetric::intrinsic(CIRCLE)).unwrap();
        assert_eq!(factor, 1.0);
        assert!((n.total_mass() - 1.0).abs() < 1e-12);
        let (again, _) = normalize_unit_ball(&n, &LeafMetric::intrinsic(CIRCLE)).unwrap();
        assert_eq!(again.scale, n.scale);
    }

    #[test]
    fn uniform_flat_interval_normalization_factor_is_two() {
        let c = uniform(FLAT4, 4000);
        let metric = LeafMetric::intrinsic(FLAT4);
        let (n, factor) = normalize_unit_ball(&c, &metric).unwrap();
        assert!((n.anchor - 2.0).abs() < 1e-3);
        assert!((factor - 2.0).abs() < 1e-3);
        let beta = proportionality(&n, 1.5, &metric).unwrap();
        assert!((beta - 1.0).abs() < 1e-3);
    }

    #[test]
    fn proportionality_is_reciprocal() {
        let pts = (0..4000).map(|i| (0.0, 4.0 * ((i as f64 + 0.5) / 4000.0).powi(2), 1.0)).collect();
        let c = EmpiricalConditional::from_points(plaque(), FLAT4, pts, 0).unwrap();
        let metric = LeafMetric::intrinsic(FLAT4);
        let (nx, _) = normalize_unit_ball(&c, &metric).unwrap();
        let y = 2.7;
        let ny = renormalized_at(&c, y, &metric).unwrap();
        let b1 = proportionality(&nx, y, &metric).unwrap();
        let b2 = proportionality(&ny, nx.anchor, &metric).unwrap();
        assert!((b1 * b2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_unit_ball_is_an_error() {
        let c = EmpiricalConditional::from_points(plaque(), FLAT4, vec![(0.0, 0.1, 1.0)], 0).unwrap();
        let metric = LeafMetric::intrinsic(FLAT4);
        let (n, _) = normalize_unit_ball(&c, &metric).unwrap();
        assert!(proportionality(&n, 3.5, &metric).is_err());
    }

    #[test]
    fn refinement_merge_is_exact() {
        let spec = SystemSpec::ProductDoublingRotation { alpha: RotationNumber::golden() };
        let o = orbit(&spec, random_initial(&spec, 9), 30_000, 9).unwrap();
        let coarse = disintegrate(&o, &Chart::uniform(0, 4, CIRCLE).unwrap(), &Default::default()).unwrap();
        let fine = disintegrate(&o, &Chart::uniform(1, 8, CIRCLE).unwrap(), &Default::default()).unwrap();
        for (id, c) in &coarse.conditionals {
            let a = &fine.conditionals[&PlaqueId { chart: 1, cell: 2 * id.cell }];
            let b = &fine.conditionals[&PlaqueId { chart: 1, cell: 2 * id.cell + 1 }];
            let m = merged(&[a, b], *id, DEFAULT_MIN_COUNT).unwrap();
            assert_eq!(m.samples(), c.samples());
            assert_eq!(m.anchor, c.anchor);
        }
    }

    #[test]
    fn identical_charts_are_consistent() {
        let spec = SystemSpec::ProductDoublingRotation { alpha: RotationNumber::golden() };
        let o = orbit(&spec, random_initial(&spec, 3), 50_000, 3).unwrap();
        let chart = Chart::uniform(0, 4, CIRCLE).unwrap();
        let d = disintegrate(&o, &chart, &Default::default()).unwrap();
        let overlaps = crate::lamination::overlap_pairs(&chart, &chart).unwrap();
        let rep = overlap_consistency(&d, &d, &overlaps, DEFAULT_BINS, DEFAULT_MIN_COUNT).unwrap();
        assert_eq!(rep.max_deviation, 0.0);
        assert_eq!(rep.flagged, 0);
    }

    #[test]
    fn mismatched_short_orbits_are_flagged() {
        let spec = SystemSpec::ProductDoublingRotation { alpha: RotationNumber::golden() };
        let a = orbit(&spec, random_initial(&spec, 1), 1000, 1).unwrap();
        let b = orbit(&spec, random_initial(&spec, 2), 1000, 2).unwrap();
        let c1 = Chart::uniform(0, 2, CIRCLE).unwrap();
        let c2 = Chart::uniform(1, 4, CIRCLE).unwrap();
        let d1 = disintegrate(&a, &c1, &Default::default()).unwrap();
        let d2 = disintegrate(&b, &c2, &Default::default()).unwrap();
        let overlaps = crate::lamination::overlap_pairs(&c1, &c2).unwrap();
        let rep = overlap_consistency(&d1, &d2, &overlaps, DEFAULT_BINS, DEFAULT_MIN_COUNT).unwrap();
        assert_eq!(rep.flagged, overlaps.len());
        assert!(rep.max_flagged_deviation > 0.5);
    }

    #[test]
    fn csv_export_is_deterministic() {
        let spec = SystemSpec::Rotation { alpha: RotationNumber::rational(1, 3).unwrap() };
        let o = orbit(&spec, State::new(0.0, 0.0), 3000, 0).unwrap();
        let d = disintegrate(&o, &Chart::uniform(0, 1, CIRCLE).unwrap(), &Default::default()).unwrap();
        let mut a = Vec::new();
        write_conditionals_csv(&d, DEFAULT_BINS, &mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("plaque_id,fiber_coord,weight\n0:0,0.000000000000e0,"));
    }
}
