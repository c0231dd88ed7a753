//! Distortion ladders, atom detection and the atomic-versus-Hausdorff verdict.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disintegration::EmpiricalConditional;
use crate::error::{argument, Result};
use crate::lamination::PlaqueId;
use crate::metric::{check_ladder, BallMeasure, HausdorffMeasure, LeafMetric, LeafModel, Span};
use crate::stats;

/// `eps_k = 2^-k` for `k = k_min..=k_max`.
pub fn dyadic_ladder(k_min: i32, k_max: i32) -> Vec<f64> {
    (k_min..=k_max).map(|k| 0.5f64.powi(k)).collect()
}

pub fn default_eps_ladder() -> Vec<f64> {
    dyadic_ladder(2, 12)
}

pub const DEFAULT_ANCHORS: usize = 16;
/// Rungs standing in for the `eps -> 0` tail.
pub const TAIL_RUNGS: usize = 3;

/// Ratios `mu(B(x, eps_k)) / lambda(B(x, eps_k))` for a set of anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionLadder {
    pub plaque: PlaqueId,
    pub eps: Vec<f64>,
    pub anchors: Vec<f64>,
    /// Indexed `[anchor][rung]`.
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub ratios: Vec<Vec<f64>>,
    /// Rungs removed because some anchor's ball had zero `lambda`.
    pub dropped: Vec<f64>,
    /// Largest ratio over the tail rungs.
    pub delta_upper: f64,
    /// Smallest ratio over the tail rungs.
    pub delta_lower: f64,
}

/// Weighted quantiles `(i + 1/2) / count` of the fiber coordinates.
pub fn quantile_anchors(cond: &EmpiricalConditional, count: usize) -> Vec<f64> {
    let samples = cond.samples();
    let total = cond.raw_mass;
    let mut out = Vec::with_capacity(count);
    let mut acc = 0.0;
    let mut i = 0;
    for q in 0..count {
        let target = (q as f64 + 0.5) / count as f64 * total;
        while i + 1 < samples.len() && acc + samples[i].weight < target {
            acc += samples[i].weight;
            i += 1;
        }
        out.push(samples[i].fiber);
    }
    out
}

/// Ladder of distortion ratios at `anchors` (weighted quantiles by default).
/// `cond` carries the normalization; `metric` defines the balls and `lambda`.
pub fn distortion_ladder(
    cond: &EmpiricalConditional,
    metric: &LeafMetric,
    eps: &[f64],
    anchors: Option<&[f64]>,
) -> Result<DistortionLadder> {
    check_ladder(eps, "eps")?;
    if metric.leaf != cond.fiber {
        return argument("metric lives on a different leaf");
    }
    let anchors: Vec<f64> = match anchors {
        Some(a) => a.to_vec(),
        None => quantile_anchors(cond, DEFAULT_ANCHORS),
    };
    if anchors.is_empty() {
        return argument("no anchors");
    }
    let lam = HausdorffMeasure::new(metric.clone());
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = anchors
        .par_iter()
        .map(|&a| {
            let mut mu = Vec::with_capacity(eps.len());
            let mut la = Vec::with_capacity(eps.len());
            for &e in eps {
                mu.push(cond.scale * cond.raw_ball(metric, a, e, false)?);
                la.push(lam.ball_mass(&[a], e)?);
            }
            Ok((mu, la))
        })
        .collect();
    let mut mu = Vec::with_capacity(anchors.len());
    let mut lambda = Vec::with_capacity(anchors.len());
    for r in rows {
        let (m, l) = r?;
        mu.push(m);
        lambda.push(l);
    }
    let keep: Vec<bool> = (0..eps.len()).map(|k| lambda.iter().all(|row| row[k] > 0.0)).collect();
    let filter = |row: &Vec<f64>| -> Vec<f64> { row.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect() };
    let mu: Vec<Vec<f64>> = mu.iter().map(filter).collect();
    let lambda: Vec<Vec<f64>> = lambda.iter().map(filter).collect();
    let dropped: Vec<f64> = eps.iter().zip(&keep).filter(|(_, &k)| !k).map(|(e, _)| *e).collect();
    let eps: Vec<f64> = eps.iter().zip(&keep).filter(|(_, &k)| k).map(|(e, _)| *e).collect();
    let ratios: Vec<Vec<f64>> =
        mu.iter().zip(&lambda).map(|(m, l)| m.iter().zip(l).map(|(a, b)| a / b).collect()).collect();
    let from = eps.len().saturating_sub(TAIL_RUNGS);
    let tail = ratios.iter().flat_map(|r| r[from..].iter().copied());
    let (delta_lower, delta_upper) = tail.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    Ok(DistortionLadder {
        plaque: cond.plaque,
        eps,
        anchors,
        mu,
        lambda,
        ratios,
        dropped,
        delta_upper,
        delta_lower: if delta_lower.is_finite() { delta_lower } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    /// Median of the deepest-rung ratios.
    pub delta_bar: f64,
    /// Coefficient of variation over all tail ratios.
    pub cv: f64,
    pub anchors: usize,
    /// Fewer than two anchors or three rungs.
    pub insufficient: bool,
}

/// Pool ladders across anchors and plaques.
pub fn uniformity_check(ladders: &[DistortionLadder]) -> UniformityReport {
    let mut deepest = Vec::new();
    let mut tail = Vec::new();
    let mut min_rungs = usize::MAX;
    for l in ladders {
        min_rungs = min_rungs.min(l.eps.len());
        for row in &l.ratios {
            if let Some(&last) = row.last() {
                deepest.push(last);
            }
            tail.extend_from_slice(&row[row.len().saturating_sub(TAIL_RUNGS)..]);
        }
    }
    let anchors = deepest.len();
    let insufficient = anchors < 2 || min_rungs < TAIL_RUNGS;
    UniformityReport {
        delta_bar: if deepest.is_empty() { f64::NAN } else { stats::median(&deepest) },
        cv: if anchors < 2 { 0.0 } else { stats::coefficient_of_variation(&tail) },
        anchors,
        insufficient,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub center: f64,
    /// Fraction of the conditional's mass.
    pub mass: f64,
}

/// Greedy search for mass concentrations: repeatedly take the heaviest
/// window of radius `eps_min`, remove it with an `eps_min` margin, and stop
/// once `theta` of the mass is covered. The list is returned only if it
/// covers `theta` with at most `max_atoms` clusters each holding at least
/// `theta / count`; otherwise it is empty.
pub fn atom_detect(cond: &EmpiricalConditional, eps_min: f64, theta: f64, max_atoms: usize) -> Result<Vec<Atom>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return argument(format!("theta {theta} outside (0, 1]"));
    }
    if !(eps_min > 0.0) {
        return argument("eps_min must be positive");
    }
    let period = match cond.fiber {
        LeafModel::Circle { circumference } => Some(circumference),
        _ => None,
    };
    let total = cond.raw_mass;
    let mut active: Vec<(f64, f64)> = cond.samples().iter().map(|s| (s.fiber, s.weight)).collect();
    let mut atoms = Vec::new();
    let mut covered = 0.0;
    while covered < theta && atoms.len() < max_atoms && !active.is_empty() {
        let (start, mass, center) = heaviest_window(&active, 2.0 * eps_min, period);
        if mass <= 0.0 {
            break;
        }
        atoms.push(Atom { center, mass: mass / total });
        covered += mass / total;
        let cut = Span { lo: start - eps_min, hi: start + 3.0 * eps_min, lo_closed: true, hi_closed: true };
        active.retain(|&(v, _)| !in_window(v, &cut, period));
    }
    let k = atoms.len();
    if k == 0 || covered < theta || atoms.iter().any(|a| a.mass < theta / k as f64) {
        return Ok(Vec::new());
    }
    Ok(atoms)
}

fn in_window(v: f64, w: &Span, period: Option<f64>) -> bool {
    match period {
        Some(c) => [v - c, v, v + c].iter().any(|&x| w.contains(x)),
        None => w.contains(v),
    }
}

/// Heaviest closed window `[v_i, v_i + width]` starting at a sample, with
/// wrap-around on circles. Returns `(start, mass, weighted center)`.
fn heaviest_window(sorted: &[(f64, f64)], width: f64, period: Option<f64>) -> (f64, f64, f64) {
    let n = sorted.len();
    let ext: Vec<(f64, f64)> = match period {
        Some(c) => sorted.iter().copied().chain(sorted.iter().map(|&(v, w)| (v + c, w))).collect(),
        None => sorted.to_vec(),
    };
    let mut best = (sorted[0].0, 0.0, sorted[0].0);
    let mut j = 0;
    let mut mass = 0.0;
    let mut moment = 0.0;
    for i in 0..n {
        if j < i {
            j = i;
            mass = 0.0;
            moment = 0.0;
        }
        let limit = match period {
            Some(_) => i + n,
            None => n,
        };
        while j < limit && ext[j].0 <= ext[i].0 + width {
            mass += ext[j].1;
            moment += ext[j].1 * ext[j].0;
            j += 1;
        }
        if mass > best.1 {
            let mut center = moment / mass;
            if let Some(c) = period {
                if center >= c {
                    center -= c;
                }
            }
            best = (ext[i].0, mass, center);
        }
        mass -= ext[i].1;
        moment -= ext[i].1 * ext[i].0;
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub cv_max: f64,
    pub theta: f64,
    pub quorum: f64,
    pub eps_min: f64,
    pub max_atoms: usize,
    /// Largest allowed `ratio[last] / ratio[last - 2]` per anchor.
    pub growth_max: f64,
    /// No ratio may exceed this multiple of the pooled `delta_bar`.
    pub tail_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            cv_max: 0.1,
            theta: 0.9,
            quorum: 0.9,
            eps_min: 1e-3,
            max_atoms: 64,
            growth_max: 2.0,
            tail_factor: 10.0,
        }
    }
}

/// Evidence gathered on one plaque.
#[derive(Debug, Clone)]
pub struct PlaqueEvidence {
    pub plaque: PlaqueId,
    pub ladder: DistortionLadder,
    pub atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VerdictKind {
    Atomic,
    Hausdorff { delta_bar: f64 },
    Inconclusive,
}

impl VerdictKind {
    pub fn name(&self) -> &'static str {
        match self {
            VerdictKind::Atomic => "Atomic",
            VerdictKind::Hausdorff { .. } => "Hausdorff",
            VerdictKind::Inconclusive => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaqueAtom {
    pub plaque: String,
    pub center: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRecord {
    pub plaque: String,
    pub anchor: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyVerdict {
    pub kind: VerdictKind,
    pub delta_bar: Option<f64>,
    pub cv: Option<f64>,
    pub atoms: Vec<PlaqueAtom>,
    pub plaques_used: usize,
    /// Fraction of plaques whose atoms cover `theta` of their mass.
    pub atomic_fraction: f64,
    pub thresholds: Thresholds,
    pub tails: Vec<TailRecord>,
    pub diagnostics: Vec<String>,
}

impl DichotomyVerdict {
    /// `{verdict, delta_bar, cv, atoms, plaques_used, thresholds}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "verdict": self.kind.name(),
            "delta_bar": self.delta_bar,
            "cv": self.cv,
            "atoms": self.atoms,
            "plaques_used": self.plaques_used,
            "thresholds": self.thresholds,
        })
    }
}

/// Decide between the atomic and Hausdorff branches.
pub fn classify(evidence: &[PlaqueEvidence], thresholds: &Thresholds) -> DichotomyVerdict {
    let mut verdict = DichotomyVerdict {
        kind: VerdictKind::Inconclusive,
        delta_bar: None,
        cv: None,
        atoms: Vec::new(),
        plaques_used: evidence.len(),
        atomic_fraction: 0.0,
        thresholds: *thresholds,
        tails: Vec::new(),
        diagnostics: Vec::new(),
    };
    if evidence.is_empty() {
        verdict.diagnostics.push("no qualifying plaques".into());
        return verdict;
    }
    for e in evidence {
        for (a, row) in e.ladder.anchors.iter().zip(&e.ladder.ratios) {
            verdict.tails.push(TailRecord {
                plaque: e.plaque.to_string(),
                anchor: *a,
                ratios: row[row.len().saturating_sub(TAIL_RUNGS)..].to_vec(),
            });
        }
    }
    let atomic = evidence.iter().filter(|e| e.atoms.iter().map(|a| a.mass).sum::<f64>() >= thresholds.theta).count();
    verdict.atomic_fraction = atomic as f64 / evidence.len() as f64;
    let ladders: Vec<DistortionLadder> = evidence.iter().map(|e| e.ladder.clone()).collect();
    let u = uniformity_check(&ladders);
    verdict.cv = Some(u.cv);
    verdict.delta_bar = Some(u.delta_bar).filter(|d| d.is_finite());

    if verdict.atomic_fraction >= thresholds.quorum {
        verdict.kind = VerdictKind::Atomic;
        for e in evidence {
            for a in &e.atoms {
                verdict.atoms.push(PlaqueAtom { plaque: e.plaque.to_string(), center: a.center, mass: a.mass });
            }
        }
        return verdict;
    }

    let mut ok = true;
    if u.insufficient {
        verdict.diagnostics.push(format!("insufficient anchors or rungs ({} anchors)", u.anchors));
        ok = false;
    }
    if !(u.cv < thresholds.cv_max) {
        verdict.diagnostics.push(format!("cv {:.4} not below {}", u.cv, thresholds.cv_max));
        ok = false;
    }
    if !(u.delta_bar > 0.0 && u.delta_bar.is_finite()) {
        verdict.diagnostics.push("pooled delta_bar is not finite and positive".into());
        ok = false;
    }
    let mut worst_growth: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for l in &ladders {
        for row in &l.ratios {
            if row.len() >= TAIL_RUNGS {
                let g = row[row.len() - 1] / row[row.len() - TAIL_RUNGS];
                worst_growth = worst_growth.max(if g.is_nan() { f64::INFINITY } else { g });
            }
            worst_ratio = row.iter().copied().fold(worst_ratio, f64::max);
        }
    }
    if worst_growth > thresholds.growth_max {
        verdict.diagnostics.push(format!("ratio tails grow by {worst_growth:.3}"));
        ok = false;
    }
    if ok && worst_ratio > thresholds.tail_factor * u.delta_bar {
        verdict.diagnostics.push(format!("ratio {worst_ratio:.4} exceeds {} x delta_bar", thresholds.tail_factor));
        ok = false;
    }
    if ok {
        verdict.kind = VerdictKind::Hausdorff { delta_bar: u.delta_bar };
    }
    verdict
}

/// Total variation `1/2 sum |mu(I) - delta_bar lambda(I)| / mu(leaf)` over a
/// partition of the leaf into `bins` cells.
pub fn hausdorff_agreement(
    cond: &EmpiricalConditional,
    metric: &LeafMetric,
    delta_bar: f64,
    bins: usize,
) -> Result<f64> {
    if bins == 0 {
        return argument("need at least one histogram cell");
    }
    let hi = match cond.fiber {
        LeafModel::Circle { circumference } => circumference,
        LeafModel::FlatInterval { length } => length,
        LeafModel::EuclideanBox { .. } => return argument("1-D leaves only"),
    };
    let lam = HausdorffMeasure::new(metric.clone());
    let mu = cond.histogram(bins);
    let mut diff = 0.0;
    for (i, m) in mu.iter().enumerate() {
        let span = Span {
            lo: hi * i as f64 / bins as f64,
            hi: hi * (i + 1) as f64 / bins as f64,
            lo_closed: true,
            hi_closed: false,
        };
        diff += (m - delta_bar * lam.span_mass(&[span])?).abs();
    }
    Ok(0.5 * diff / cond.total_mass())
}
