//! Packing and covering numbers of Euclidean balls, packing-regularity
//! certificates for leaf metrics, and constants transferred along
//! bi-Lipschitz equivalences.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::metric::{check_ladder, BallMeasure, LeafMetric, LeafModel};

/// Packing (`count = L(r, s)`) or covering (`count = U(r, s)`) of `B(0, r)`
/// by balls of radius `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingResult {
    pub n: usize,
    pub r: f64,
    pub s: f64,
    pub count: usize,
    /// Balls placed by the regular grid construction alone.
    pub grid_count: usize,
    /// Centers, `n` coordinates each, concatenated.
    pub centers: Vec<f64>,
    pub normalized_density: f64,
}

impl PackingResult {
    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.n..(i + 1) * self.n]
    }

    /// One center per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.n).map(|i| format!("x{i}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.count {
            let row: Vec<String> = self.center(i).iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_dimension(n: usize) -> Result<()> {
    if (1..=3).contains(&n) {
        Ok(())
    } else {
        argument(format!("dimension {n} outside 1..=3"))
    }
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Uniform grid hash over points of `R^n` (`n <= 3`).
struct SpatialHash {
    cell: f64,
    n: usize,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialHash {
    fn new(cell: f64, n: usize) -> Self {
        SpatialHash { cell, n, buckets: HashMap::new() }
    }

    fn key(&self, p: &[f64]) -> [i64; 3] {
        let mut k = [0i64; 3];
        for (i, x) in p.iter().enumerate() {
            k[i] = (x / self.cell).floor() as i64;
        }
        k
    }

    fn insert(&mut self, p: &[f64], id: usize) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(id);
    }

    /// Ids stored in the `3^n` cells around `p`.
    fn near(&self, p: &[f64], mut f: impl FnMut(usize) -> bool) -> bool {
        let k = self.key(p);
        let span = |i: usize| if i < self.n { -1..=1 } else { 0..=0 };
        for a in span(0) {
            for b in span(1) {
                for c in span(2) {
                    if let Some(ids) = self.buckets.get(&[k[0] + a, k[1] + b, k[2] + c]) {
                        for &id in ids {
                            if f(id) {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

/// Packing of `B(0, r)` by disjoint open balls of radius `s`.
///
/// In dimension one the count is the exact maximum `floor(r / s)`. In higher
/// dimensions a cubic grid of side `2s` inside the cube inscribed in the ball
/// is extended greedily over a candidate lattice, outermost candidates first;
/// the purely greedy packing is also computed and the larger one returned.
pub fn greedy_pack(n: usize, r: f64, s: f64) -> Result<PackingResult> {
    check_dimension(n)?;
    if !(s > 0.0 && s < r && r.is_finite()) {
        return argument(format!("packing needs 0 < s < r, got r = {r}, s = {s}"));
    }
    if n == 1 {
        let count = (r / s * (1.0 + 1e-12)).floor() as usize;
        let centers: Vec<f64> = (0..count).map(|i| -r + s + 2.0 * s * i as f64).collect();
        return Ok(finish(n, r, s, count, centers));
    }
    let m = (r / (s * (n as f64).sqrt()) * (1.0 + 1e-12)).floor() as usize;
    let mut seed = Vec::new();
    let offset = -(m as f64) * s + s;
    let mut idx = vec![0usize; n];
    if m > 0 {
        loop {
            seed.extend(idx.iter().map(|&i| offset + 2.0 * s * i as f64));
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < m {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
    }
    let grid_count = m.pow(n as u32);
    let candidates = candidate_lattice(n, r, s);
    let seeded = extend_greedy(n, s, seed, &candidates);
    let plain = extend_greedy(n, s, Vec::new(), &candidates);
    let centers = if plain.len() > seeded.len() { plain } else { seeded };
    let mut result = finish(n, r, s, centers.len() / n, centers);
    result.grid_count = grid_count;
    Ok(result)
}

fn finish(n: usize, r: f64, s: f64, count: usize, centers: Vec<f64>) -> PackingResult {
    PackingResult {
        n,
        r,
        s,
        count,
        grid_count: count,
        centers,
        normalized_density: count as f64 * (s / r).powi(n as i32),
    }
}

/// Lattice points `c` with `|c| <= r - s`, ordered by decreasing norm and
/// then lexicographically.
fn candidate_lattice(n: usize, r: f64, s: f64) -> Vec<f64> {
    // Finer candidates while few balls fit, where lattice effects dominate.
    let spacing = if r / s <= 16.0 { s / 8.0 } else { s / 2.0 };
    let reach = r - s;
    let k = (reach / spacing * (1.0 + 1e-12)).floor() as i64;
    let mut pts: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut idx = vec![-k; n];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 * spacing).collect();
        let q = norm(&p);
        if q <= reach * (1.0 + 1e-12) {
            pts.push((q, p));
        }
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] <= k {
                break;
            }
            idx[d] = -k;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.partial_cmp(&b.1).unwrap()));
    pts.into_iter().flat_map(|(_, p)| p).collect()
}

fn extend_greedy(n: usize, s: f64, seed: Vec<f64>, candidates: &[f64]) -> Vec<f64> {
    let min2 = (2.0 * s) * (2.0 * s) * (1.0 - 1e-12);
    let mut hash = SpatialHash::new(2.0 * s, n);
    let mut centers = seed;
    for i in 0..centers.len() / n {
        hash.insert(&centers[i * n..(i + 1) * n], i);
    }
    for c in candidates.chunks(n) {
        let blocked = hash.near(c, |id| dist2(&centers[id * n..(id + 1) * n], c) < min2);
        if !blocked {
            let id = centers.len() / n;
            centers.extend_from_slice(c);
            hash.insert(c, id);
        }
    }
    centers
}

/// Check that a packing consists of disjoint balls inside `B(0, r)`.
pub fn verify_packing(p: &PackingResult) -> bool {
    let n = p.n;
    let tol = 1e-9 * p.s;
    let mut hash = SpatialHash::new(2.0 * p.s, n);
    for i in 0..p.count {
        let c = p.center(i);
        if norm(c) > p.r - p.s + tol {
            return false;
        }
        let lim = 2.0 * p.s - tol;
        if hash.near(c, |id| dist2(p.center(id), c) < lim * lim) {
            return false;
        }
        hash.insert(c, i);
    }
    true
}

/// Covering of `B(0, r)` by open balls of radius `s`.
///
/// Grid cubes of side `t < 2s / sqrt(n)` fit inside the balls circumscribing
/// them; cubes that miss `B(0, r)` are dropped.
pub fn greedy_cover(n: usize, r: f64, s: f64) -> Result<PackingResult> {
    check_dimension(n)?;
    if !(s > 0.0 && s <= r && r.is_finite()) {
        return argument(format!("covering needs 0 < s <= r, got r = {r}, s = {s}"));
    }
    if s >= r {
        return Ok(finish(n, r, s, 1, vec![0.0; n]));
    }
    if n == 1 {
        let k = (r / s).floor() as usize + 1;
        let step = 2.0 * r / k as f64;
        let centers = (0..k).map(|i| -r + step * (i as f64 + 0.5)).collect();
        return Ok(finish(n, r, s, k, centers));
    }
    let bound = 2.0 * s / (n as f64).sqrt();
    let mut k = (2.0 * r / bound).ceil() as usize;
    if 2.0 * r / k as f64 >= bound {
        k += 1;
    }
    let t = 2.0 * r / k as f64;
    let mut centers = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let lows: Vec<f64> = idx.iter().map(|&i| -r + t * i as f64).collect();
        let closest: f64 = lows
            .iter()
            .map(|&lo| {
                let hi = lo + t;
                let g = if lo > 0.0 {
                    lo
                } else if hi < 0.0 {
                    -hi
                } else {
                    0.0
                };
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if closest < r {
            centers.extend(lows.iter().map(|lo| lo + t / 2.0));
        }
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    let count = centers.len() / n;
    Ok(finish(n, r, s, count, centers))
}

/// Check that every point of a grid of spacing at most `s / 8` inside
/// `B(0, r)` lies in some ball of the covering.
pub fn verify_covering(p: &PackingResult) -> bool {
    let n = p.n;
    let spacing_bound = p.s / 8.0;
    let k = (2.0 * p.r / spacing_bound).ceil() as usize;
    let h = 2.0 * p.r / k as f64;
    let mut hash = SpatialHash::new(2.0 * p.s, n);
    for i in 0..p.count {
        hash.insert(p.center(i), i);
    }
    let s2 = p.s * p.s;
    let mut idx = vec![0usize; n];
    let mut q = vec![0.0; n];
    loop {
        for d in 0..n {
            q[d] = -p.r + h * (idx[d] as f64 + 0.5);
        }
        if norm(&q) < p.r && !hash.near(&q, |id| dist2(p.center(id), &q) < s2) {
            return false;
        }
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateVerdict {
    Certified,
    Refuted,
    Inconclusive,
}

/// Evidence for one `(r, s)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRecord {
    pub r: f64,
    pub s: f64,
    pub cover_count: usize,
    pub pack_count: usize,
    pub lambda_ball: f64,
    /// `U(r, s) s^m / lambda(B(x, r))`.
    pub cover_ratio: f64,
    /// `lambda(B(x, r) minus the packed balls) / lambda(B(x, r))`.
    pub residual_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityCertificate {
    pub r0: f64,
    pub c_hat: f64,
    pub p_hat: f64,
    pub evidence: Vec<LadderRecord>,
    pub verdict: CertificateVerdict,
    /// Per-radius covering constants vary by more than a factor 1.5.
    pub r_dependence: bool,
    pub diagnostics: Vec<String>,
}

/// Number of trailing rungs standing in for liminf / limsup.
pub const TAIL_RUNGS: usize = 3;

/// Certify packing regularity of `metric` at `center` against `measure`
/// (normally its Hausdorff measure) along the given ladders.
///
/// `C_hat` is the largest over `r` of the smallest cover ratio among the last
/// three `s` rungs; `p_hat` is the largest residual fraction among them.
pub fn certify_regularity(
    metric: &LeafMetric,
    measure: &dyn BallMeasure,
    center: &[f64],
    r0: f64,
    r_ladder: &[f64],
    s_ladders: &[Vec<f64>],
) -> Result<RegularityCertificate> {
    check_ladder(r_ladder, "radius")?;
    if r_ladder.len() != s_ladders.len() {
        return argument("one s ladder is needed per radius");
    }
    metric.leaf.check(center)?;
    let m = metric.leaf.dimension();
    let mut cert = RegularityCertificate {
        r0,
        c_hat: 0.0,
        p_hat: 0.0,
        evidence: Vec::new(),
        verdict: CertificateVerdict::Certified,
        r_dependence: false,
        diagnostics: Vec::new(),
    };
    let mut per_r_c = Vec::new();
    for (&r, s_ladder) in r_ladder.iter().zip(s_ladders) {
        if r > r0 {
            return argument(format!("radius {r} exceeds r0 = {r0}"));
        }
        check_ladder(s_ladder, "s")?;
        if s_ladder[0] >= r {
            return argument(format!("s ladder must stay below r = {r}"));
        }
        if s_ladder.len() < TAIL_RUNGS || s_ladder[0] / s_ladder[s_ladder.len() - 1] < 8.0 {
            cert.diagnostics.push(format!("s ladder at r = {r} spans fewer than 3 octaves"));
            cert.verdict = CertificateVerdict::Inconclusive;
        }
        let mut records = Vec::new();
        for &s in s_ladder {
            match ladder_record(metric, measure, center, m, r, s) {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    cert.diagnostics.push(format!("r = {r}, s = {s}: {e}"));
                    cert.verdict = CertificateVerdict::Inconclusive;
                }
            }
        }
        let tail = &records[records.len().saturating_sub(TAIL_RUNGS)..];
        if !tail.is_empty() {
            let c = tail.iter().map(|x| x.cover_ratio).fold(f64::INFINITY, f64::min);
            let p = tail.iter().map(|x| x.residual_fraction).fold(0.0, f64::max);
            per_r_c.push(c);
            cert.c_hat = cert.c_hat.max(c);
            cert.p_hat = cert.p_hat.max(p);
        }
        cert.evidence.extend(records);
    }
    if let (Some(lo), Some(hi)) = (per_r_c.iter().copied().reduce(f64::min), per_r_c.iter().copied().reduce(f64::max)) {
        if lo > 0.0 && hi / lo > 1.5 {
            cert.r_dependence = true;
            cert.diagnostics.push(format!("covering constant varies with r: {lo:.4} to {hi:.4}"));
        }
    }
    if cert.verdict == CertificateVerdict::Certified && !(cert.p_hat < 1.0 && cert.c_hat.is_finite()) {
        cert.verdict = CertificateVerdict::Refuted;
    }
    Ok(cert)
}

fn ladder_record(
    metric: &LeafMetric,
    measure: &dyn BallMeasure,
    center: &[f64],
    m: usize,
    r: f64,
    s: f64,
) -> Result<LadderRecord> {
    let lambda_ball = measure.ball_mass(center, r)?;
    if !(lambda_ball > 0.0) {
        return Err(Error::Oracle(format!("ball of radius {r} has zero mass")));
    }
    let (cover_count, packed) = match metric.euclidean_scale() {
        Some(c) => euclidean_counts(metric, measure, center, m, r / c, s / c, c)?,
        None if m == 1 => chain_counts(metric, measure, center[0], r, s)?,
        None => return Err(Error::Oracle("no packing routine for this metric".into())),
    };
    let (pack_count, packed_mass) = packed;
    Ok(LadderRecord {
        r,
        s,
        cover_count,
        pack_count,
        lambda_ball,
        cover_ratio: cover_count as f64 * s.powi(m as i32) / lambda_ball,
        residual_fraction: ((lambda_ball - packed_mass) / lambda_ball).max(0.0),
    })
}

type Counts = (usize, (usize, f64));

fn euclidean_counts(
    metric: &LeafMetric,
    measure: &dyn BallMeasure,
    center: &[f64],
    m: usize,
    r: f64,
    s: f64,
    scale: f64,
) -> Result<Counts> {
    let cover = greedy_cover(m, r, s)?;
    let pack = greedy_pack(m, r, s)?;
    let mut mass = 0.0;
    for i in 0..pack.count {
        let p: Vec<f64> = center.iter().zip(pack.center(i)).map(|(x, c)| x + c).collect();
        let p = match metric.leaf {
            LeafModel::Circle { .. } => vec![metric.leaf.reduce1(p[0])?],
            _ => {
                metric.leaf.check(&p)?;
                p
            }
        };
        mass += measure.ball_mass(&p, s * scale)?;
    }
    Ok((cover.count, (pack.count, mass)))
}

/// Walk along the ball `B(x, r)` of a 1-D metric laying down consecutive
/// balls of radius `s`, for packing (disjoint) and covering (overlapping).
fn chain_counts(metric: &LeafMetric, measure: &dyn BallMeasure, x: f64, r: f64, s: f64) -> Result<Counts> {
    let spans =
        metric.ball_spans(x, r, false)?.ok_or_else(|| Error::Oracle("metric rule does not describe balls".into()))?;
    let leaf = metric.leaf;
    let d = |a: f64, b: f64| -> Result<f64> { metric.distance1(leaf.reduce1(a)?, leaf.reduce1(b)?) };
    // Smallest t > 0 with d(p, p + t) >= target.
    let reach = |p: f64, target: f64, limit: f64| -> Result<f64> {
        if d(p, p + limit)? < target {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = (0.0, limit);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if d(p, p + mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    };
    let mut cover = 0;
    let mut pack = 0;
    let mut mass = 0.0;
    for sp in &spans {
        let mut p = sp.lo;
        loop {
            let c = p + reach(p, s, sp.hi - p)?;
            if !c.is_finite() {
                break;
            }
            let u = reach(c, s, sp.hi - c)?;
            if !u.is_finite() {
                break;
            }
            pack += 1;
            mass += measure.ball_mass(&[leaf.reduce1(c)?], s)?;
            p = c + u;
        }
        let mut p = sp.lo;
        while p < sp.hi {
            cover += 1;
            let t = reach(p, s * (1.0 - 1e-9), sp.hi - p)?;
            if !t.is_finite() {
                break;
            }
            let c = p + t;
            let u = reach(c, s * (1.0 - 1e-9), sp.hi - c)?;
            if !u.is_finite() {
                break;
            }
            p = c + u;
        }
    }
    Ok((cover, (pack, mass)))
}

/// Constants carried across a bi-Lipschitz change of metric
/// `A d <= rho <= B d` in dimension `m` with `lambda` `Q`-doubling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConstants {
    pub a: f64,
    pub b: f64,
    pub m: u32,
    pub q: f64,
    /// Least `l >= 0` with `B / A <= 2^l`.
    pub l: u32,
    /// Doubling constant of the transported measure, `Q^(l+1) B^m A^-m`.
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn transfer_constants(a: f64, b: f64, m: u32, q: f64) -> Result<TransferConstants> {
    if !(a > 0.0 && a.is_finite()) {
        return argument(format!("A = {a} must be positive"));
    }
    if !(b >= a && b.is_finite()) {
        return argument(format!("B = {b} must be at least A = {a}"));
    }
    if !(q >= 1.0 && q.is_finite()) {
        return argument(format!("Q = {q} must be at least 1"));
    }
    if m < 1 {
        return argument("m must be at least 1");
    }
    let ratio = b / a;
    let mut l = 0u32;
    while 2f64.powi(l as i32) < ratio {
        l += 1;
    }
    let mi = m as i32;
    let r = q.powi(l as i32 + 1) * b.powi(mi) * a.powi(-mi);
    Ok(TransferConstants {
        a,
        b,
        m,
        q,
        l,
        r,
        alpha: a.powi(mi) * r.powi(-(l as i32)),
        beta: b.powi(mi) * q.powi(l as i32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::HausdorffMeasure;

    #[test]
    fn one_dim_packing_examples() {
        assert_eq!(greedy_pack(1, 1.0, 0.26).unwrap().count, 3);
        for s in [0.51, 0.7, 0.99] {
            assert_eq!(greedy_pack(1, 1.0, s).unwrap().count, 1);
        }
        for k in 1..20 {
            let p = greedy_pack(1, 1.0, 1.0 / (2.0 * k as f64)).unwrap();
            assert!(p.count >= 2 * k);
            assert!(p.normalized_density >= 1.0 - 1e-12);
            assert!(verify_packing(&p));
        }
        assert!(greedy_pack(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn covering_examples() {
        assert_eq!(greedy_cover(1, 1.0, 1.0).unwrap().count, 1);
        let c = greedy_cover(1, 1.0, 0.4).unwrap();
        assert!(c.count <= 4);
        assert!(verify_covering(&c));
        for k in 2..12 {
            let c = greedy_cover(2, 1.0, 2f64.sqrt() / k as f64).unwrap();
            assert!(c.normalized_density <= 8.0);
            assert!(verify_covering(&c));
        }
    }

    #[test]
    fn two_dim_packing_is_valid_and_dense() {
        for j in 1..=5 {
            let p = greedy_pack(2, 1.0, 0.5f64.powi(j)).unwrap();
            assert!(verify_packing(&p));
            assert!(p.count >= p.grid_count);
            assert!(p.normalized_density >= 0.475, "j = {j}: {}", p.normalized_density);
        }
    }

    #[test]
    fn tampered_results_fail_verification() {
        let mut p = greedy_pack(2, 1.0, 0.25).unwrap();
        p.centers[2] = p.centers[0];
        p.centers[3] = p.centers[1];
        assert!(!verify_packing(&p));
        let mut c = greedy_cover(2, 1.0, 0.25).unwrap();
        c.count -= 3;
        assert!(!verify_covering(&c));
    }

    #[test]
    fn transfer_constant_examples() {
        let t = transfer_constants(1.0, 2.0, 1, 2.0).unwrap();
        assert_eq!((t.l, t.r, t.alpha, t.beta), (1, 8.0, 0.125, 4.0));
        let t = transfer_constants(1.0, 1.0, 3, 2.0).unwrap();
        assert_eq!((t.l, t.r, t.alpha, t.beta), (0, 2.0, 1.0, 1.0));
        let t = transfer_constants(3.0, 3.0, 1, 2.0).unwrap();
        assert_eq!(t.l, 0);
        assert!((t.r - 2.0).abs() < 1e-15 && t.alpha == 3.0 && t.beta == 3.0);
        assert!(transfer_constants(0.0, 1.0, 1, 2.0).is_err());
        assert!(transfer_constants(2.0, 1.0, 1, 2.0).is_err());
    }

    #[test]
    fn l_brackets_the_ratio() {
        for (a, b) in [(1.0, 1.5), (0.5, 3.0), (1.0, 4.0), (0.3, 0.31)] {
            let t = transfer_constants(a, b, 2, 3.0).unwrap();
            let x = b / a;
            assert!(x <= 2f64.powi(t.l as i32));
            assert!(t.l == 0 || 2f64.powi(t.l as i32 - 1) < x);
            assert!(t.r >= t.q && t.alpha <= t.beta);
        }
    }

    fn s_ladder(r: f64) -> Vec<f64> {
        (1..=8).map(|j| r * 0.5f64.powi(j)).collect()
    }

    #[test]
    fn euclidean_line_is_certified() {
        let leaf = LeafModel::FlatInterval { length: 4.0 };
        let metric = LeafMetric::intrinsic(leaf);
        let lam = HausdorffMeasure::new(metric.clone());
        let cert =
            certify_regularity(&metric, &lam, &[2.0], 1.0, &[1.0, 0.5], &[s_ladder(1.0), s_ladder(0.5)]).unwrap();
        assert_eq!(cert.verdict, CertificateVerdict::Certified);
        assert!(cert.p_hat <= 0.05 && cert.c_hat <= 2f64.powf(1.5), "{cert:?}");
    }

    #[test]
    fn scaled_line_certificate_matches() {
        let leaf = LeafModel::FlatInterval { length: 4.0 };
        let base = LeafMetric::intrinsic(leaf);
        let tri = LeafMetric::scaled(leaf, 3.0).unwrap();
        let a = certify_regularity(&base, &HausdorffMeasure::new(base.clone()), &[2.0], 1.0, &[1.0], &[s_ladder(1.0)])
            .unwrap();
        let b = certify_regularity(&tri, &HausdorffMeasure::new(tri.clone()), &[2.0], 3.0, &[3.0], &[s_ladder(3.0)])
            .unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert!((a.c_hat - b.c_hat).abs() < 1e-12 && (a.p_hat - b.p_hat).abs() < 1e-12);
    }

    #[test]
    fn short_ladder_is_inconclusive() {
        let metric = LeafMetric::intrinsic(LeafModel::FlatInterval { length: 4.0 });
        let lam = HausdorffMeasure::new(metric.clone());
        let cert = certify_regularity(&metric, &lam, &[2.0], 1.0, &[1.0], &[vec![0.5, 0.4, 0.3]]).unwrap();
        assert_eq!(cert.verdict, CertificateVerdict::Inconclusive);
        assert!(certify_regularity(&metric, &lam, &[2.0], 0.5, &[1.0], &[s_ladder(1.0)]).is_err());
    }

    #[test]
    fn chain_counts_match_exact_counts_for_pullbacks() {
        use crate::metric::{AffineMap, MetricRule};
        use std::sync::Arc;
        let leaf = LeafModel::FlatInterval { length: 4.0 };
        let map = Arc::new(AffineMap { slope: 1.0, offset: 0.0 });
        let metric = LeafMetric::new(leaf, MetricRule::Pullback { map, target: leaf }).unwrap();
        let lam = HausdorffMeasure::new(metric.clone());
        let (cover, (pack, _)) = chain_counts(&metric, &lam, 2.0, 1.0, 0.3).unwrap();
        assert_eq!(pack, 3);
        assert_eq!(cover, 4);
    }
}
