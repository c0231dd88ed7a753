//! Executes a parsed experiment and collects everything the reports need.

use crate::classifier::{
    atom_detect, classify, distortion_ladder, quantile_anchors, DichotomyVerdict, PlaqueEvidence, VerdictKind,
};
use crate::disintegration::{
    disintegrate, normalize_unit_ball, overlap_consistency, plaque_summaries, Disintegration, DisintegrationOptions,
    OverlapReport, PlaqueSummary,
};
use crate::lamination::{overlap_pairs, Chart, PlaqueId};
use crate::metric::{HausdorffMeasure, LeafMetric, LeafModel, MetricRule};
use crate::packing::{certify_regularity, greedy_pack, CertificateVerdict, PackingResult, RegularityCertificate};
use crate::systems::{orbit, random_initial, SystemSpec};
use crate::Result;

use super::config::{ExperimentConfig, InitialPolicy, MetricChoice, Mode};

/// Histogram resolution for chart-overlap comparisons.
pub const OVERLAP_BINS: usize = 256;

/// Per-plaque quantities beyond the disintegration summary.
#[derive(Debug, Clone)]
pub struct PlaqueOutcome {
    pub plaque: PlaqueId,
    /// Unit-ball normalization relative to probability normalization.
    pub factor: f64,
    pub evidence: PlaqueEvidence,
}

#[derive(Debug, Clone)]
pub struct DynamicsOutcome {
    pub spec: SystemSpec,
    pub disintegration: Disintegration,
    pub summaries: Vec<PlaqueSummary>,
    pub plaques: Vec<PlaqueOutcome>,
    pub verdict: DichotomyVerdict,
    pub overlap: Option<OverlapReport>,
}

#[derive(Debug, Clone)]
pub struct PackingOutcome {
    pub certificate: RegularityCertificate,
    pub finest: PackingResult,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Dynamics(Box<DynamicsOutcome>),
    Packing(Box<PackingOutcome>),
}

impl Outcome {
    pub fn inconclusive(&self) -> bool {
        match self {
            Outcome::Dynamics(d) => d.verdict.kind == VerdictKind::Inconclusive,
            Outcome::Packing(p) => p.certificate.verdict == CertificateVerdict::Inconclusive,
        }
    }

    pub fn verdict_name(&self) -> &'static str {
        match self {
            Outcome::Dynamics(d) => d.verdict.kind.name(),
            Outcome::Packing(p) => match p.certificate.verdict {
                CertificateVerdict::Certified => "certified",
                CertificateVerdict::Refuted => "refuted",
                CertificateVerdict::Inconclusive => "inconclusive",
            },
        }
    }
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.mode {
        Mode::Dynamics => run_dynamics(cfg).map(|d| Outcome::Dynamics(Box::new(d))),
        Mode::Packing => run_packing(cfg).map(|p| Outcome::Packing(Box::new(p))),
    }
}

/// Metric used on a plaque. The sup-metric is frozen at the base point in
/// the middle of the plaque's first base interval.
pub fn plaque_metric(cfg: &ExperimentConfig, spec: &SystemSpec, chart: &Chart, cell: u32) -> Result<LeafMetric> {
    let leaf = spec.fiber_model();
    match cfg.metric {
        MetricChoice::Intrinsic => Ok(LeafMetric::intrinsic(leaf)),
        MetricChoice::Scaled(c) => LeafMetric::scaled(leaf, c),
        MetricChoice::Sup { horizon } => {
            let (lo, hi) = chart.cell_intervals(cell)[0];
            LeafMetric::new(leaf, MetricRule::TruncatedSup { system: *spec, base: 0.5 * (lo + hi), horizon })
        }
    }
}

fn run_dynamics(cfg: &ExperimentConfig) -> Result<DynamicsOutcome> {
    let spec = cfg.system.expect("dynamics config carries a system");
    let x0 = match cfg.initial {
        InitialPolicy::Random => random_initial(&spec, cfg.seed),
        InitialPolicy::Fixed(s) => s,
    };
    let stream = orbit(&spec, x0, cfg.length, cfg.seed)?.with_burn_in(cfg.burn_in);
    let opts = DisintegrationOptions { min_count: cfg.min_count };
    let chart = Chart::uniform(0, cfg.cells, spec.fiber_model())?;
    let mut d = disintegrate(&stream, &chart, &opts)?;

    let mut plaques = Vec::new();
    let mut evidence = Vec::new();
    let qualifying: Vec<PlaqueId> = d.qualifying().map(|c| c.plaque).collect();
    for id in qualifying {
        let metric = plaque_metric(cfg, &spec, &chart, id.cell)?;
        let cond = &d.conditionals[&id];
        let (normalized, factor) = normalize_unit_ball(cond, &metric)?;
        let anchors = quantile_anchors(&normalized, cfg.anchors);
        let eps = scaled_eps(cfg);
        let ladder = distortion_ladder(&normalized, &metric, &eps, Some(&anchors))?;
        let atoms = atom_detect(&normalized, cfg.thresholds.eps_min, cfg.thresholds.theta, cfg.thresholds.max_atoms)?;
        let ev = PlaqueEvidence { plaque: id, ladder, atoms };
        evidence.push(ev.clone());
        plaques.push(PlaqueOutcome { plaque: id, factor, evidence: ev });
        d.conditionals.insert(id, normalized);
    }
    let mut verdict = classify(&evidence, &cfg.thresholds);
    verdict.diagnostics.extend(d.diagnostics.iter().cloned());

    let overlap = match cfg.cells2 {
        Some(cells2) => {
            let second = Chart::shifted(1, cells2, cfg.offset2, spec.fiber_model())?;
            let d2 = disintegrate(&stream, &second, &opts)?;
            let pairs = overlap_pairs(&chart, &second)?;
            Some(overlap_consistency(&d, &d2, &pairs, OVERLAP_BINS, cfg.min_count)?)
        }
        None => None,
    };
    let summaries = plaque_summaries(&d);
    Ok(DynamicsOutcome { spec, disintegration: d, summaries, plaques, verdict, overlap })
}

/// Ladder radii are given in units of the intrinsic metric; a scaled metric
/// sees them multiplied by its factor so that the same balls are probed.
fn scaled_eps(cfg: &ExperimentConfig) -> Vec<f64> {
    match cfg.metric {
        MetricChoice::Scaled(c) => cfg.eps.iter().map(|e| e * c).collect(),
        _ => cfg.eps.clone(),
    }
}

fn run_packing(cfg: &ExperimentConfig) -> Result<PackingOutcome> {
    let p = &cfg.packing;
    let leaf = LeafModel::EuclideanBox { dimension: p.n, side: 4.0 * p.r0 };
    let metric = LeafMetric::intrinsic(leaf);
    let measure = HausdorffMeasure::new(metric.clone());
    let center = vec![2.0 * p.r0; p.n];
    let r_ladder: Vec<f64> = (0..p.radii).map(|i| p.r0 * 0.5f64.powi(i as i32)).collect();
    let s_ladders: Vec<Vec<f64>> =
        r_ladder.iter().map(|&r| (1..=p.octaves).map(|j| r * 0.5f64.powi(j as i32)).collect()).collect();
    let certificate = certify_regularity(&metric, &measure, &center, p.r0, &r_ladder, &s_ladders)?;
    let finest = greedy_pack(p.n, p.r0, p.r0 * 0.5f64.powi(p.octaves as i32))?;
    Ok(PackingOutcome { certificate, finest })
}
