//! Families of leaf metrics indexed by base points: constant families,
//! truncated sup-metrics along fiber orbits and per-plaque assignments,
//! with invariance and bi-Lipschitz diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};
use crate::lamination::Chart;
use crate::metric::{LeafMetric, LeafModel, MetricRule};
use crate::systems::SystemSpec;

pub const DEFAULT_HORIZON: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Intrinsic,
    SupTruncated(u32),
    Pullback,
    Supplied,
}

#[derive(Debug, Clone)]
pub enum MetricFamily {
    /// The same metric on every fiber.
    Constant(LeafMetric),
    /// `d^(N)_x` along the fiber over each base point `x`.
    SupTruncated { system: SystemSpec, horizon: u32 },
    /// One metric per cell of a chart.
    PerPlaque { chart: Chart, metrics: Vec<LeafMetric> },
}

/// A metric on every fiber of a product lamination.
#[derive(Debug, Clone)]
pub struct MetricSystem {
    pub provenance: Provenance,
    pub family: MetricFamily,
}

impl MetricSystem {
    pub fn constant(metric: LeafMetric, provenance: Provenance) -> Self {
        MetricSystem { provenance, family: MetricFamily::Constant(metric) }
    }

    pub fn intrinsic(leaf: LeafModel) -> Self {
        Self::constant(LeafMetric::intrinsic(leaf), Provenance::Intrinsic)
    }

    pub fn sup_truncated(system: SystemSpec, horizon: u32) -> Result<Self> {
        if !system.has_fiber() {
            return argument("truncated sup-metric needs a system with fibers");
        }
        Ok(MetricSystem {
            provenance: Provenance::SupTruncated(horizon),
            family: MetricFamily::SupTruncated { system, horizon },
        })
    }

    pub fn per_plaque(chart: Chart, metrics: Vec<LeafMetric>) -> Result<Self> {
        if metrics.len() != chart.cells() as usize {
            return argument(format!("{} metrics for a chart with {} cells", metrics.len(), chart.cells()));
        }
        if metrics.iter().any(|m| m.leaf != chart.fiber) {
            return argument("per-plaque metrics must live on the chart's fiber");
        }
        Ok(MetricSystem { provenance: Provenance::Supplied, family: MetricFamily::PerPlaque { chart, metrics } })
    }

    /// The metric on the fiber over `base`.
    pub fn metric_at(&self, base: f64) -> Result<LeafMetric> {
        if !(0.0..1.0).contains(&base) {
            return domain(format!("base coordinate {base} outside [0, 1)"));
        }
        match &self.family {
            MetricFamily::Constant(m) => Ok(m.clone()),
            MetricFamily::SupTruncated { system, horizon } => LeafMetric::new(
                system.fiber_model(),
                MetricRule::TruncatedSup { system: *system, base, horizon: *horizon },
            ),
            MetricFamily::PerPlaque { chart, metrics } => Ok(metrics[chart.cell_of(base)? as usize].clone()),
        }
    }

    pub fn distance(&self, base: f64, a: f64, b: f64) -> Result<f64> {
        self.metric_at(base)?.distance1(a, b)
    }
}

/// `d^(N)_x(a, b) = max_{|n| <= N} d_c(F^n a, F^n b)` along the fiber over `x`.
pub fn sup_metric_truncated(spec: &SystemSpec, x: f64, a: f64, b: f64, horizon: u32) -> Result<f64> {
    if !spec.has_fiber() {
        return argument(format!("{} has no fiber structure", spec.kind_name()));
    }
    if !(0.0..1.0).contains(&x) {
        return domain(format!("base coordinate {x} outside [0, 1)"));
    }
    let leaf = spec.fiber_model();
    leaf.check(&[a])?;
    leaf.check(&[b])?;
    let mut best = spec.fiber_distance(a, b);
    let (mut xf, mut af, mut bf) = (x, a, b);
    for _ in 0..horizon {
        af = spec.fiber_step(xf, af)?;
        bf = spec.fiber_step(xf, bf)?;
        xf = spec.base_step(xf);
        best = best.max(spec.fiber_distance(af, bf));
    }
    let (mut xb, mut ab, mut bb) = (x, a, b);
    for _ in 0..horizon {
        let prev = spec.base_inverse(xb);
        ab = spec.fiber_step_inverse(prev, ab)?;
        bb = spec.fiber_step_inverse(prev, bb)?;
        xb = prev;
        best = best.max(spec.fiber_distance(ab, bb));
    }
    Ok(best)
}

/// A sample `(x, a, b)`: base point and two fiber points over it.
pub type PairSample = (f64, f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub max_defect: f64,
    pub worst: Option<PairSample>,
    pub count: usize,
}

/// `max |d_{f(x)}(F a, F b) - d_x(a, b)|` over the samples.
pub fn invariance_defect(system: &MetricSystem, spec: &SystemSpec, samples: &[PairSample]) -> Result<DefectReport> {
    let mut report = DefectReport { max_defect: 0.0, worst: None, count: 0 };
    let leaf = spec.fiber_model();
    for &(x, a, b) in samples {
        let before = system.distance(x, a, b)?;
        let fa = leaf.reduce1(spec.fiber_step(x, a)?)?;
        let fb = leaf.reduce1(spec.fiber_step(x, b)?)?;
        let after = system.distance(spec.base_step(x), fa, fb)?;
        let defect = (after - before).abs();
        if report.worst.is_none() || defect > report.max_defect {
            report.max_defect = defect;
            report.worst = Some((x, a, b));
        }
        report.count += 1;
    }
    Ok(report)
}

/// Truncation gap `d^(N+1) - d^(N)` on the samples and on their images,
/// which bounds the invariance defect of `d^(N)` on those samples.
pub fn truncation_gap(spec: &SystemSpec, samples: &[PairSample], horizon: u32) -> Result<f64> {
    let leaf = spec.fiber_model();
    let mut gap: f64 = 0.0;
    for &(x, a, b) in samples {
        let fa = leaf.reduce1(spec.fiber_step(x, a)?)?;
        let fb = leaf.reduce1(spec.fiber_step(x, b)?)?;
        for (y, p, q) in [(x, a, b), (spec.base_step(x), fa, fb)] {
            let g = sup_metric_truncated(spec, y, p, q, horizon + 1)? - sup_metric_truncated(spec, y, p, q, horizon)?;
            gap = gap.max(g);
        }
    }
    Ok(gap)
}

/// `max d^(N) - d^(N/2)` over the samples.
pub fn stabilization(spec: &SystemSpec, samples: &[PairSample], horizon: u32) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &(x, a, b) in samples {
        let full = sup_metric_truncated(spec, x, a, b, horizon)?;
        let half = sup_metric_truncated(spec, x, a, b, horizon / 2)?;
        worst = worst.max(full - half);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLipschitzReport {
    pub a_hat: f64,
    pub b_hat: f64,
    pub count: usize,
    pub skipped: usize,
    /// Largest violation of the declared bounds; 0 when none were declared.
    pub max_violation: f64,
}

/// Empirical constants with `A d_ref <= d_sys <= B d_ref` over the samples.
pub fn bilipschitz_constants(
    system: &MetricSystem,
    reference: &MetricSystem,
    samples: &[PairSample],
    declared: Option<(f64, f64)>,
) -> Result<BiLipschitzReport> {
    let mut report = BiLipschitzReport { a_hat: f64::INFINITY, b_hat: 0.0, count: 0, skipped: 0, max_violation: 0.0 };
    for &(x, a, b) in samples {
        let d_ref = reference.distance(x, a, b)?;
        if d_ref <= 0.0 {
            report.skipped += 1;
            continue;
        }
        let d_sys = system.distance(x, a, b)?;
        let ratio = d_sys / d_ref;
        report.a_hat = report.a_hat.min(ratio);
        report.b_hat = report.b_hat.max(ratio);
        report.count += 1;
        if let Some((lo, hi)) = declared {
            let v = (lo * d_ref - d_sys).max(d_sys - hi * d_ref).max(0.0);
            report.max_violation = report.max_violation.max(v);
        }
    }
    if report.count == 0 {
        return argument("every sample pair is coincident");
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterDistortion {
    /// `max(sup Dg_n, 1 / inf Dg_n)` over `|n| <= horizon`.
    pub k_measured: f64,
    pub max_derivative: f64,
    pub min_derivative: f64,
}

/// Measured derivative bounds of the fiber iterates `g_n` over base point `x`
/// for `|n| <= horizon`: symmetric differences on a grid of fiber points,
/// then a local refinement around the extreme grid points.
pub fn center_distortion_bound(spec: &SystemSpec, x: f64, horizon: u32, grid: usize) -> Result<CenterDistortion> {
    if !spec.has_fiber() {
        return argument(format!("{} has no fiber structure", spec.kind_name()));
    }
    let leaf = spec.fiber_model();
    let length = match leaf {
        LeafModel::Circle { circumference } => circumference,
        LeafModel::FlatInterval { length } => length,
        LeafModel::EuclideanBox { .. } => unreachable!(),
    };
    let grid = grid.max(8);
    let points: Vec<f64> = (0..grid).map(|i| (i as f64 + 0.5) * length / grid as f64).collect();
    let mut hi = (1.0, 0.0, 0i64);
    let mut lo = (1.0, 0.0, 0i64);
    for &v in &points {
        for n in -(horizon as i64)..=(horizon as i64) {
            let d = derivative(spec, x, v, n)?;
            if d > hi.0 {
                hi = (d, v, n);
            }
            if d < lo.0 {
                lo = (d, v, n);
            }
        }
    }
    let cell = length / grid as f64;
    let refine = |(best, v0, n): (f64, f64, i64), larger: bool| -> Result<f64> {
        let mut best = best;
        let mut center = v0;
        let mut width = cell;
        for _ in 0..6 {
            for k in -8..=8 {
                let v = center + width * k as f64 / 8.0;
                let Ok(v) = leaf.reduce1(v) else { continue };
                let d = derivative(spec, x, v, n)?;
                if (larger && d > best) || (!larger && d < best) {
                    best = d;
                    center = v;
                }
            }
            width /= 4.0;
        }
        Ok(best)
    };
    let max_derivative = refine(hi, true)?;
    let min_derivative = refine(lo, false)?;
    Ok(CenterDistortion { k_measured: max_derivative.max(1.0 / min_derivative), max_derivative, min_derivative })
}

fn derivative(spec: &SystemSpec, x: f64, v: f64, n: i64) -> Result<f64> {
    let h = 1e-7;
    let (_, up) = spec.fiber_iterate(x, v + h, n)?;
    let (_, down) = spec.fiber_iterate(x, v - h, n)?;
    let mut diff = up - down;
    if matches!(spec.fiber_model(), LeafModel::Circle { .. }) {
        diff -= diff.round();
    }
    Ok(diff.abs() / (2.0 * h))
}
