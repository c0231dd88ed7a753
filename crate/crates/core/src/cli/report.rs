//! Report files. Nothing here depends on the clock, so identical configs
//! produce identical bytes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::disintegration::{write_conditionals_csv, DEFAULT_BINS};

use super::config::ExperimentConfig;
use super::pipeline::{DynamicsOutcome, Outcome, PackingOutcome};

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> io::Result<()> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::other)?;
    writeln!(out)?;
    out.flush()
}

fn config_block(cfg: &ExperimentConfig) -> Value {
    json!({ "config": cfg.resolved, "config_hash": cfg.hash() })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

/// Write every report for `outcome` into `dir`; returns the files written.
pub fn write_reports(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let names = match outcome {
        Outcome::Dynamics(d) => write_dynamics(cfg, d, dir)?,
        Outcome::Packing(p) => write_packing(cfg, p, dir)?,
    };
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

fn write_dynamics(cfg: &ExperimentConfig, o: &DynamicsOutcome, dir: &Path) -> io::Result<Vec<&'static str>> {
    write_json(dir, "verdict.json", &merge(o.verdict.to_json(), config_block(cfg)))?;

    let mut out = create(dir, "conditionals.csv")?;
    write_conditionals_csv(&o.disintegration, DEFAULT_BINS, &mut out)?;
    out.flush()?;

    let mut out = create(dir, "ladder.csv")?;
    writeln!(out, "anchor_id,eps,mu_ball,lambda_ball,ratio")?;
    for p in &o.plaques {
        let l = &p.evidence.ladder;
        for i in 0..l.anchors.len() {
            for k in 0..l.eps.len() {
                writeln!(
                    out,
                    "{}/{},{:.12e},{:.12e},{:.12e},{:.12e}",
                    p.plaque, i, l.eps[k], l.mu[i][k], l.lambda[i][k], l.ratios[i][k]
                )?;
            }
        }
    }
    out.flush()?;

    let plaques: Vec<Value> = o
        .summaries
        .iter()
        .map(|s| {
            let extra = o.plaques.iter().find(|p| p.plaque.to_string() == s.plaque);
            let mut v = serde_json::to_value(s).expect("summary serializes");
            if let Some(p) = extra {
                v["normalization_factor"] = json!(p.factor);
                v["anchors"] = json!(p.evidence.ladder.anchors);
                v["delta_upper"] = json!(p.evidence.ladder.delta_upper);
                v["delta_lower"] = json!(p.evidence.ladder.delta_lower);
                v["atoms"] = json!(p.evidence.atoms);
            }
            v
        })
        .collect();
    let d = &o.disintegration;
    let report = json!({
        "mode": "dynamics",
        "system": o.spec.to_string(),
        "orbit": { "binned": d.binned, "skipped": d.skipped },
        "chart": { "cells": d.chart.cells(), "low_count": d.low_count.iter().map(|p| p.to_string()).collect::<Vec<_>>() },
        "plaques": plaques,
        "verdict": o.verdict,
        "overlap": o.overlap,
    });
    write_json(dir, "report.json", &merge(report, config_block(cfg)))?;

    let mut s = String::new();
    writeln!(s, "system        {}", o.spec).unwrap();
    writeln!(s, "config hash   {}", cfg.hash()).unwrap();
    writeln!(s, "orbit         T = {}, seed = {}, burn-in = {}", cfg.length, cfg.seed, cfg.burn_in).unwrap();
    writeln!(
        s,
        "chart         {} cells, {} plaques met, {} below {} samples",
        d.chart.cells(),
        d.conditionals.len(),
        d.low_count.len(),
        cfg.min_count
    )
    .unwrap();
    writeln!(s, "verdict       {}", o.verdict.kind.name()).unwrap();
    if let Some(db) = o.verdict.delta_bar {
        writeln!(s, "delta_bar     {db:.6}").unwrap();
    }
    if let Some(cv) = o.verdict.cv {
        writeln!(s, "cv            {cv:.6}").unwrap();
    }
    writeln!(s, "atomic share  {:.4} of {} plaques", o.verdict.atomic_fraction, o.verdict.plaques_used).unwrap();
    if !o.verdict.atoms.is_empty() {
        writeln!(s, "atoms         {}", o.verdict.atoms.len()).unwrap();
        for a in o.verdict.atoms.iter().take(12) {
            writeln!(s, "  {} at {:.9} mass {:.9}", a.plaque, a.center, a.mass).unwrap();
        }
    }
    if let Some(ov) = &o.overlap {
        writeln!(
            s,
            "overlap       max deviation {:.6} over {} overlaps ({} flagged)",
            ov.max_deviation,
            ov.records.len(),
            ov.flagged
        )
        .unwrap();
    }
    let worst_ks = o.summaries.iter().filter(|p| !p.low_count).map(|p| p.ks_uniform).fold(0.0, f64::max);
    writeln!(s, "worst KS      {worst_ks:.6}").unwrap();
    for msg in &o.verdict.diagnostics {
        writeln!(s, "note          {msg}").unwrap();
    }
    fs::write(dir.join("summary.txt"), s)?;

    let mut files = vec!["verdict.json", "conditionals.csv", "ladder.csv", "report.json", "summary.txt"];
    if o.overlap.is_some() {
        write_json(dir, "overlap.json", &merge(json!({ "overlap": o.overlap }), config_block(cfg)))?;
        files.push("overlap.json");
    }
    Ok(files)
}

fn write_packing(cfg: &ExperimentConfig, o: &PackingOutcome, dir: &Path) -> io::Result<Vec<&'static str>> {
    let c = &o.certificate;
    write_json(dir, "certificate.json", &merge(json!({ "certificate": c }), config_block(cfg)))?;

    let mut out = create(dir, "packing_centers.csv")?;
    o.finest.write_csv(&mut out)?;
    out.flush()?;

    let report = json!({
        "mode": "packing",
        "certificate": c,
        "finest_packing": {
            "n": o.finest.n,
            "r": o.finest.r,
            "s": o.finest.s,
            "count": o.finest.count,
            "grid_count": o.finest.grid_count,
            "normalized_density": o.finest.normalized_density,
        },
    });
    write_json(dir, "report.json", &merge(report, config_block(cfg)))?;

    let mut s = String::new();
    writeln!(s, "packing lab   n = {}, r0 = {}", cfg.packing.n, cfg.packing.r0).unwrap();
    writeln!(s, "config hash   {}", cfg.hash()).unwrap();
    writeln!(s, "verdict       {:?}", c.verdict).unwrap();
    writeln!(s, "C_hat         {:.6}", c.c_hat).unwrap();
    writeln!(s, "p_hat         {:.6}", c.p_hat).unwrap();
    writeln!(s, "r-dependence  {}", c.r_dependence).unwrap();
    writeln!(
        s,
        "finest        s = {:e}: {} balls, density {:.6}",
        o.finest.s, o.finest.count, o.finest.normalized_density
    )
    .unwrap();
    for msg in &c.diagnostics {
        writeln!(s, "note          {msg}").unwrap();
    }
    fs::write(dir.join("summary.txt"), s)?;
    Ok(vec!["certificate.json", "packing_centers.csv", "report.json", "summary.txt"])
}
