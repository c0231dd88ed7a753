//! Built-in dynamical systems and replayable orbit streams.
//!
//! Every system is a Z-action on a product `base x fiber` (the plain rotation
//! is treated as a single leaf: base coordinate `0`, fiber = the circle).
//! `step` applies one iterate in plain `f64` arithmetic. Orbit streams use an
//! exact internal representation instead: rational rotations run on an
//! integer lattice, irrational rotations on a 64-bit fixed-point accumulator,
//! and the doubling map on a 64-bit shift register whose low bit is refilled
//! from a seeded generator at every step.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};
use crate::metric::{LeafModel, MonotoneMap};

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;
const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Reduce a real number into `[0, 1)`.
pub fn reduce_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Rotation number, kept rational when given as `p/q` so that periodic
/// orbits close exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RotationNumber {
    Rational { p: u64, q: u64 },
    Irrational(f64),
}

impl RotationNumber {
    /// The golden-mean rotation number `(sqrt(5) - 1) / 2`.
    pub fn golden() -> Self {
        RotationNumber::Irrational((5f64.sqrt() - 1.0) / 2.0)
    }

    pub fn rational(p: u64, q: u64) -> Result<Self> {
        if q == 0 {
            return argument("rotation denominator must be positive");
        }
        let g = gcd(p % q, q);
        let (p, q) = ((p % q) / g, q / g);
        Ok(RotationNumber::Rational { p, q })
    }

    pub fn irrational(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return argument(format!("rotation number {alpha} outside [0, 1)"));
        }
        Ok(RotationNumber::Irrational(alpha))
    }

    /// Parse `golden`, `p/q` or a decimal in `[0, 1)`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("golden") {
            return Ok(Self::golden());
        }
        if let Some((p, q)) = t.split_once('/') {
            let p: u64 = p.trim().parse().map_err(|_| crate::Error::Argument(format!("bad numerator in '{t}'")))?;
            let q: u64 = q.trim().parse().map_err(|_| crate::Error::Argument(format!("bad denominator in '{t}'")))?;
            return Self::rational(p, q);
        }
        let a: f64 = t.parse().map_err(|_| crate::Error::Argument(format!("cannot parse rotation number '{t}'")))?;
        Self::irrational(a)
    }

    pub fn value(&self) -> f64 {
        match *self {
            RotationNumber::Rational { p, q } => p as f64 / q as f64,
            RotationNumber::Irrational(a) => a,
        }
    }

    /// Exact period for rational rotation numbers.
    pub fn period(&self) -> Option<u64> {
        match *self {
            RotationNumber::Rational { q, .. } => Some(q),
            RotationNumber::Irrational(_) => None,
        }
    }

    fn rotate(&self, x: f64, forward: bool) -> f64 {
        match *self {
            RotationNumber::Rational { p, q } => {
                let k = x * q as f64;
                let kr = k.round();
                if (k - kr).abs() < 1e-9 {
                    let k = (kr as u64) % q;
                    let next = if forward { (k + p) % q } else { (k + q - p) % q };
                    next as f64 / q as f64
                } else {
                    let a = p as f64 / q as f64;
                    reduce_unit(if forward { x + a } else { x - a })
                }
            }
            RotationNumber::Irrational(a) => reduce_unit(if forward { x + a } else { x - a }),
        }
    }
}

impl fmt::Display for RotationNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RotationNumber::Rational { p, q } => write!(f, "{p}/{q}"),
            RotationNumber::Irrational(a) if a == Self::golden().value() => write!(f, "golden"),
            RotationNumber::Irrational(a) => write!(f, "{a}"),
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Fiber drive `tau` of the contracting and neutral-center systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Drive {
    /// `tau(x) = x`.
    Identity,
    /// `tau(x) = 1/2 + amplitude * sin(2 pi x)`, continuous on the circle.
    Sine { amplitude: f64 },
}

impl Drive {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Drive::Identity => x,
            Drive::Sine { amplitude } => 0.5 + amplitude * (TAU * x).sin(),
        }
    }
}

impl fmt::Display for Drive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Drive::Identity => write!(f, "identity"),
            Drive::Sine { amplitude } => write!(f, "sine:{amplitude}"),
        }
    }
}

/// Base dynamics of the contracting control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseMap {
    Doubling,
    Rotation(RotationNumber),
}

/// Orientation-preserving circle diffeomorphism
/// `v -> v + amplitude / (2 pi) * sin(2 pi (v - phase))`, `0 <= amplitude < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleConjugacy {
    pub amplitude: f64,
    pub phase: f64,
}

impl CircleConjugacy {
    pub fn new(amplitude: f64, phase: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&amplitude) {
            return argument(format!("conjugacy amplitude {amplitude} outside [0, 1)"));
        }
        Ok(CircleConjugacy { amplitude, phase })
    }

    pub fn derivative(&self, v: f64) -> f64 {
        1.0 + self.amplitude * (TAU * (v - self.phase)).cos()
    }

    /// Bounds `1 / K <= h' <= K` hold for `K = (1 + amplitude) / (1 - amplitude)`
    /// on every composition `h_y o h_x^{-1}`.
    pub fn distortion_bound(&self) -> f64 {
        (1.0 + self.amplitude) / (1.0 - self.amplitude)
    }
}

impl MonotoneMap for CircleConjugacy {
    fn lift(&self, v: f64) -> f64 {
        v + self.amplitude / TAU * (TAU * (v - self.phase)).sin()
    }

    fn lift_inverse(&self, u: f64) -> f64 {
        // h(v) - v is bounded by amplitude / (2 pi); bracket and polish with
        // safeguarded Newton steps.
        let spread = self.amplitude / TAU + 1e-15;
        let (mut lo, mut hi) = (u - spread, u + spread);
        let mut v = u;
        for _ in 0..100 {
            let f = self.lift(v) - u;
            if f.abs() <= 1e-16 * (1.0 + u.abs()) {
                break;
            }
            if f > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let next = v - f / self.derivative(v);
            v = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-17 {
                break;
            }
        }
        v
    }
}

/// The built-in systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SystemSpec {
    /// Circle rotation `x -> x + alpha`.
    Rotation { alpha: RotationNumber },
    /// `(x, v) -> (2x, v + alpha)`; fibers are unit circles, rotated isometrically.
    ProductDoublingRotation { alpha: RotationNumber },
    /// `(x, v) -> (2x, h(h^{-1}(v) + alpha))` for the conjugacy `h` with phase 0.
    ConjugatedRotationCocycle { alpha: RotationNumber, amplitude: f64 },
    /// `(x, v) -> (f(x), c v + (1 - c) tau(x))` on fibers `[0, 1]`.
    ContractingFiber { rate: f64, drive: Drive, base: BaseMap },
    /// `(x, v) -> (x + alpha, h_{x + alpha}(h_x^{-1}(v)))` with `h_x` the
    /// conjugacy of phase `tau(x)`; derivatives of all iterates stay in `[1/K, K]`.
    NeutralCenterToy { alpha: RotationNumber, drive: Drive, amplitude: f64 },
}

impl SystemSpec {
    pub fn contracting_default() -> Self {
        SystemSpec::ContractingFiber {
            rate: 0.5,
            drive: Drive::Sine { amplitude: 1.0 / 32.0 },
            base: BaseMap::Rotation(RotationNumber::golden()),
        }
    }

    pub fn neutral_default() -> Self {
        SystemSpec::NeutralCenterToy { alpha: RotationNumber::golden(), drive: Drive::Identity, amplitude: 0.3 }
    }

    /// Check parameter invariants.
    pub fn validate(&self) -> Result<()> {
        match *self {
            SystemSpec::ConjugatedRotationCocycle { amplitude, .. }
            | SystemSpec::NeutralCenterToy { amplitude, .. } => {
                CircleConjugacy::new(amplitude, 0.0)?;
            }
            SystemSpec::ContractingFiber { rate, drive, .. } => {
                if !(rate > 0.0 && rate < 1.0) {
                    return argument(format!("contraction rate {rate} outside (0, 1)"));
                }
                if let Drive::Sine { amplitude } = drive {
                    if !(0.0..=0.5).contains(&amplitude) {
                        return argument(format!("drive amplitude {amplitude} outside [0, 1/2]"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SystemSpec::Rotation { .. } => "rotation",
            SystemSpec::ProductDoublingRotation { .. } => "product_doubling_rotation",
            SystemSpec::ConjugatedRotationCocycle { .. } => "conjugated_rotation_cocycle",
            SystemSpec::ContractingFiber { .. } => "contracting_fiber",
            SystemSpec::NeutralCenterToy { .. } => "neutral_center_toy",
        }
    }

    /// Whether the system is a skew product with a genuine fiber.
    pub fn has_fiber(&self) -> bool {
        !matches!(self, SystemSpec::Rotation { .. })
    }

    /// Model of the leaves of the invariant lamination.
    pub fn fiber_model(&self) -> LeafModel {
        match self {
            SystemSpec::ContractingFiber { .. } => LeafModel::FlatInterval { length: 1.0 },
            _ => LeafModel::Circle { circumference: 1.0 },
        }
    }

    /// Coordinates `(base, fiber)` of a state in the product lamination.
    pub fn lamination_coords(&self, s: State) -> (f64, f64) {
        match self {
            SystemSpec::Rotation { .. } => (0.0, s.base),
            _ => (s.base, s.fiber),
        }
    }

    pub fn base_step(&self, x: f64) -> f64 {
        match *self {
            SystemSpec::Rotation { alpha } => alpha.rotate(x, true),
            SystemSpec::ProductDoublingRotation { .. } | SystemSpec::ConjugatedRotationCocycle { .. } => doubling(x),
            SystemSpec::ContractingFiber { base, .. } => match base {
                BaseMap::Doubling => doubling(x),
                BaseMap::Rotation(a) => a.rotate(x, true),
            },
            SystemSpec::NeutralCenterToy { alpha, .. } => alpha.rotate(x, true),
        }
    }

    /// Inverse of the base map. The doubling map uses the branch `x / 2`.
    pub fn base_inverse(&self, x: f64) -> f64 {
        match *self {
            SystemSpec::Rotation { alpha } | SystemSpec::NeutralCenterToy { alpha, .. } => alpha.rotate(x, false),
            SystemSpec::ProductDoublingRotation { .. } | SystemSpec::ConjugatedRotationCocycle { .. } => 0.5 * x,
            SystemSpec::ContractingFiber { base, .. } => match base {
                BaseMap::Doubling => 0.5 * x,
                BaseMap::Rotation(a) => a.rotate(x, false),
            },
        }
    }

    /// Fiber part of one step over base point `x`.
    pub fn fiber_step(&self, x: f64, v: f64) -> Result<f64> {
        Ok(match *self {
            SystemSpec::Rotation { .. } => return argument("rotation has no fiber structure"),
            SystemSpec::ProductDoublingRotation { alpha } => alpha.rotate(reduce_unit(v), true),
            SystemSpec::ConjugatedRotationCocycle { alpha, amplitude } => {
                let h = CircleConjugacy { amplitude, phase: 0.0 };
                reduce_unit(h.lift(h.lift_inverse(v) + alpha.value()))
            }
            SystemSpec::ContractingFiber { rate, drive, .. } => rate * v + (1.0 - rate) * drive.eval(x),
            SystemSpec::NeutralCenterToy { drive, amplitude, .. } => {
                let here = CircleConjugacy { amplitude, phase: drive.eval(x) };
                let there = CircleConjugacy { amplitude, phase: drive.eval(self.base_step(x)) };
                reduce_unit(there.lift(here.lift_inverse(v)))
            }
        })
    }

    /// Inverse fiber step: `x_prev` is the base point before the step and
    /// `v` the fiber point after it.
    pub fn fiber_step_inverse(&self, x_prev: f64, v: f64) -> Result<f64> {
        Ok(match *self {
            SystemSpec::Rotation { .. } => return argument("rotation has no fiber structure"),
            SystemSpec::ProductDoublingRotation { alpha } => alpha.rotate(reduce_unit(v), false),
            SystemSpec::ConjugatedRotationCocycle { alpha, amplitude } => {
                let h = CircleConjugacy { amplitude, phase: 0.0 };
                reduce_unit(h.lift(h.lift_inverse(v) - alpha.value()))
            }
            SystemSpec::ContractingFiber { rate, drive, .. } => (v - (1.0 - rate) * drive.eval(x_prev)) / rate,
            SystemSpec::NeutralCenterToy { drive, amplitude, .. } => {
                let here = CircleConjugacy { amplitude, phase: drive.eval(x_prev) };
                let there = CircleConjugacy { amplitude, phase: drive.eval(self.base_step(x_prev)) };
                reduce_unit(here.lift(there.lift_inverse(v)))
            }
        })
    }

    /// Fiber point of `F^n(x, v)` for `n` in `Z`, along with the base point.
    pub fn fiber_iterate(&self, x: f64, v: f64, n: i64) -> Result<(f64, f64)> {
        let (mut x, mut v) = (x, v);
        if n >= 0 {
            for _ in 0..n {
                v = self.fiber_step(x, v)?;
                x = self.base_step(x);
            }
        } else {
            for _ in 0..(-n) {
                let prev = self.base_inverse(x);
                v = self.fiber_step_inverse(prev, v)?;
                x = prev;
            }
        }
        Ok((x, v))
    }

    /// Distance on a single fiber in the reference (intrinsic) fiber metric.
    pub fn fiber_distance(&self, a: f64, b: f64) -> f64 {
        match self.fiber_model() {
            LeafModel::Circle { circumference } => {
                let d = (a - b).rem_euclid(circumference);
                d.min(circumference - d)
            }
            _ => (a - b).abs(),
        }
    }
}

impl fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemSpec::Rotation { alpha } => write!(f, "Rotation({alpha})"),
            SystemSpec::ProductDoublingRotation { alpha } => {
                write!(f, "ProductDoublingRotation({alpha})")
            }
            SystemSpec::ConjugatedRotationCocycle { alpha, amplitude } => {
                write!(f, "ConjugatedRotationCocycle({alpha}, {amplitude})")
            }
            SystemSpec::ContractingFiber { rate, drive, base } => {
                let base = match base {
                    BaseMap::Doubling => "doubling".to_string(),
                    BaseMap::Rotation(a) => format!("rotation {a}"),
                };
                write!(f, "ContractingFiber({rate}, {drive}, {base})")
            }
            SystemSpec::NeutralCenterToy { alpha, drive, amplitude } => {
                write!(f, "NeutralCenterToy({alpha}, {drive}, {amplitude})")
            }
        }
    }
}

fn doubling(x: f64) -> f64 {
    let y = 2.0 * x;
    if y >= 1.0 {
        y - 1.0
    } else {
        y
    }
}

/// A point of the phase space. For [`SystemSpec::Rotation`] the point is
/// `base` and `fiber` is unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub base: f64,
    pub fiber: f64,
}

impl State {
    pub fn new(base: f64, fiber: f64) -> Self {
        State { base, fiber }
    }
}

/// One application of the system map in plain floating point.
pub fn step(spec: &SystemSpec, state: State) -> Result<State> {
    let base = spec.base_step(state.base);
    let fiber = if spec.has_fiber() { spec.fiber_step(state.base, state.fiber)? } else { state.fiber };
    Ok(State { base, fiber })
}

fn check_state(spec: &SystemSpec, s: State) -> Result<()> {
    if !(0.0..1.0).contains(&s.base) {
        return domain(format!("base coordinate {} outside [0, 1)", s.base));
    }
    if spec.has_fiber() {
        let ok = match spec.fiber_model() {
            LeafModel::Circle { circumference } => (0.0..circumference).contains(&s.fiber),
            LeafModel::FlatInterval { length } => (0.0..=length).contains(&s.fiber),
            LeafModel::EuclideanBox { .. } => false,
        };
        if !ok {
            return domain(format!("fiber coordinate {} outside the fiber", s.fiber));
        }
    }
    Ok(())
}

/// Seeded uniformly random initial state.
pub fn random_initial(spec: &SystemSpec, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let base = rng.gen::<f64>();
    let fiber = if spec.has_fiber() { rng.gen::<f64>() } else { 0.0 };
    State { base, fiber }
}

/// A replayable orbit of fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitStream {
    pub spec: SystemSpec,
    pub initial: State,
    pub len: u64,
    pub seed: u64,
    /// States generated and discarded before the first yielded state.
    pub burn_in: u64,
}

/// Build an orbit stream of exactly `len` states starting at `x0`.
pub fn orbit(spec: &SystemSpec, x0: State, len: u64, seed: u64) -> Result<OrbitStream> {
    if len < 1 {
        return argument("orbit length must be at least 1");
    }
    spec.validate()?;
    check_state(spec, x0)?;
    Ok(OrbitStream { spec: *spec, initial: x0, len, seed, burn_in: 0 })
}

impl OrbitStream {
    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    /// Fresh iterator over the states; every call replays the same orbit.
    pub fn iter(&self) -> OrbitIter {
        let mut it = OrbitIter::new(&self.spec, self.initial, self.seed, self.len);
        for _ in 0..self.burn_in {
            it.advance();
        }
        it
    }

    /// CSV dump `index,base,fiber`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "index,base,fiber")?;
        for (i, s) in self.iter().enumerate() {
            writeln!(out, "{i},{:e},{:e}", s.base, s.fiber)?;
        }
        Ok(())
    }

    /// Binary dump: little-endian `f64` pairs `(base, fiber)`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for s in self.iter() {
            out.write_all(&s.base.to_le_bytes())?;
            out.write_all(&s.fiber.to_le_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum CircleCounter {
    Lattice { offset: f64, k: u64, p: u64, q: u64 },
    Fixed { x: u64, step: u64 },
}

impl CircleCounter {
    fn new(alpha: RotationNumber, x0: f64) -> Self {
        match alpha {
            RotationNumber::Rational { p, q } => {
                let kr = (x0 * q as f64).round();
                let offset = x0 - kr / q as f64;
                CircleCounter::Lattice { offset, k: (kr as u64) % q, p, q }
            }
            RotationNumber::Irrational(a) => CircleCounter::Fixed { x: to_fixed(x0), step: to_fixed(a) },
        }
    }

    fn value(&self) -> f64 {
        match *self {
            CircleCounter::Lattice { offset, k, q, .. } => {
                let base = k as f64 / q as f64;
                if offset == 0.0 {
                    base
                } else {
                    reduce_unit(base + offset)
                }
            }
            CircleCounter::Fixed { x, .. } => from_fixed(x),
        }
    }

    fn advance(&mut self) {
        match self {
            CircleCounter::Lattice { k, p, q, .. } => *k = (*k + *p) % *q,
            CircleCounter::Fixed { x, step } => *x = x.wrapping_add(*step),
        }
    }
}

fn to_fixed(x: f64) -> u64 {
    (x * TWO_POW_64) as u64
}

fn from_fixed(x: u64) -> f64 {
    (x >> 11) as f64 * TWO_POW_M53
}

/// Doubling map on a 64-bit register: shift left, refill the low bit from
/// the seeded generator. The register is the binary expansion of the base
/// point; refilled bits extend it below the resolution of `f64`.
#[derive(Debug, Clone)]
struct ShiftRegister {
    reg: u64,
    rng: ChaCha8Rng,
    pool: u64,
    left: u32,
}

impl ShiftRegister {
    fn new(x0: f64, seed: u64) -> Self {
        ShiftRegister { reg: to_fixed(x0), rng: ChaCha8Rng::seed_from_u64(seed), pool: 0, left: 0 }
    }

    fn advance(&mut self) {
        if self.left == 0 {
            self.pool = self.rng.next_u64();
            self.left = 64;
        }
        let bit = self.pool & 1;
        self.pool >>= 1;
        self.left -= 1;
        self.reg = (self.reg << 1) | bit;
    }

    fn value(&self) -> f64 {
        from_fixed(self.reg)
    }
}

#[derive(Debug, Clone)]
enum BaseIter {
    Rotation(CircleCounter),
    Doubling(Box<ShiftRegister>),
}

impl BaseIter {
    fn value(&self) -> f64 {
        match self {
            BaseIter::Rotation(c) => c.value(),
            BaseIter::Doubling(r) => r.value(),
        }
    }

    fn advance(&mut self) {
        match self {
            BaseIter::Rotation(c) => c.advance(),
            BaseIter::Doubling(r) => r.advance(),
        }
    }
}

#[derive(Debug, Clone)]
enum FiberIter {
    None,
    Rotation(CircleCounter),
    Conjugated { w: CircleCounter, h: CircleConjugacy },
    Contracting { v: f64, rate: f64, drive: Drive },
    Neutral { w: f64, amplitude: f64, drive: Drive },
}

/// Iterator over the states of an [`OrbitStream`].
#[derive(Debug, Clone)]
pub struct OrbitIter {
    base: BaseIter,
    fiber: FiberIter,
    remaining: u64,
}

impl OrbitIter {
    fn new(spec: &SystemSpec, x0: State, seed: u64, len: u64) -> Self {
        let base = match *spec {
            SystemSpec::Rotation { alpha } | SystemSpec::NeutralCenterToy { alpha, .. } => {
                BaseIter::Rotation(CircleCounter::new(alpha, x0.base))
            }
            SystemSpec::ProductDoublingRotation { .. } | SystemSpec::ConjugatedRotationCocycle { .. } => {
                BaseIter::Doubling(Box::new(ShiftRegister::new(x0.base, seed)))
            }
            SystemSpec::ContractingFiber { base, .. } => match base {
                BaseMap::Doubling => BaseIter::Doubling(Box::new(ShiftRegister::new(x0.base, seed))),
                BaseMap::Rotation(a) => BaseIter::Rotation(CircleCounter::new(a, x0.base)),
            },
        };
        let fiber = match *spec {
            SystemSpec::Rotation { .. } => FiberIter::None,
            SystemSpec::ProductDoublingRotation { alpha } => FiberIter::Rotation(CircleCounter::new(alpha, x0.fiber)),
            SystemSpec::ConjugatedRotationCocycle { alpha, amplitude } => {
                let h = CircleConjugacy { amplitude, phase: 0.0 };
                let w0 = reduce_unit(h.lift_inverse(x0.fiber));
                FiberIter::Conjugated { w: CircleCounter::new(alpha, w0), h }
            }
            SystemSpec::ContractingFiber { rate, drive, .. } => FiberIter::Contracting { v: x0.fiber, rate, drive },
            SystemSpec::NeutralCenterToy { drive, amplitude, .. } => {
                let h = CircleConjugacy { amplitude, phase: drive.eval(x0.base) };
                FiberIter::Neutral { w: h.lift_inverse(x0.fiber), amplitude, drive }
            }
        };
        OrbitIter { base, fiber, remaining: len }
    }

    fn current(&self) -> State {
        let x = self.base.value();
        let v = match &self.fiber {
            FiberIter::None => 0.0,
            FiberIter::Rotation(c) => c.value(),
            FiberIter::Conjugated { w, h } => reduce_unit(h.lift(w.value())),
            FiberIter::Contracting { v, .. } => *v,
            FiberIter::Neutral { w, amplitude, drive } => {
                let h = CircleConjugacy { amplitude: *amplitude, phase: drive.eval(x) };
                reduce_unit(h.lift(*w))
            }
        };
        State { base: x, fiber: v }
    }

    fn advance(&mut self) {
        let x = self.base.value();
        match &mut self.fiber {
            FiberIter::None | FiberIter::Neutral { .. } => {}
            FiberIter::Rotation(c) => c.advance(),
            FiberIter::Conjugated { w, .. } => w.advance(),
            FiberIter::Contracting { v, rate, drive } => {
                *v = *rate * *v + (1.0 - *rate) * drive.eval(x);
            }
        }
        self.base.advance();
    }
}

impl Iterator for OrbitIter {
    type Item = State;

    fn next(&mut self) -> Option<State> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let s = self.current();
        self.advance();
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

impl ExactSizeIterator for OrbitIter {}

/// Fiber Lyapunov exponent along an orbit, by finite differences of the
/// fiber maps.
pub fn fiber_lyapunov_exponent(spec: &SystemSpec, x0: State, steps: u64) -> Result<f64> {
    if !spec.has_fiber() {
        return argument("rotation has no fiber structure");
    }
    let h = 1e-7;
    let (mut x, mut v) = (x0.base, x0.fiber);
    let mut acc = 0.0;
    for _ in 0..steps {
        let up = spec.fiber_step(x, v + h)?;
        let down = spec.fiber_step(x, v - h)?;
        let mut diff = up - down;
        if matches!(spec.fiber_model(), LeafModel::Circle { .. }) {
            diff = diff - diff.round();
        }
        acc += (diff.abs() / (2.0 * h)).ln();
        v = spec.fiber_step(x, v)?;
        x = spec.base_step(x);
    }
    Ok(acc / steps as f64)
}
