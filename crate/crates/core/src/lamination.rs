//! Product charts `[0, 1) x fiber` cut into half-open base cells.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};
use crate::metric::LeafModel;
use crate::systems::reduce_unit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlaqueId {
    pub chart: u32,
    pub cell: u32,
}

impl fmt::Display for PlaqueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.chart, self.cell)
    }
}

/// A chart of the product lamination. Cell `i` is `[start + u_i, start +
/// u_{i+1})` modulo 1, with `u_0 = 0` and `u_K = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub id: u32,
    start: f64,
    offsets: Vec<f64>,
    pub fiber: LeafModel,
}

impl Chart {
    /// Cell boundaries given as offsets from `start`; the first must be 0.
    pub fn new(id: u32, start: f64, offsets: Vec<f64>, fiber: LeafModel) -> Result<Self> {
        fiber.validate()?;
        if offsets.is_empty() {
            return argument("a chart needs at least one cell");
        }
        if offsets[0] != 0.0 || offsets.iter().any(|&u| !(0.0..1.0).contains(&u)) {
            return argument("cell offsets must start at 0 and lie in [0, 1)");
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return argument("cell offsets must be strictly increasing");
        }
        Ok(Chart { id, start: reduce_unit(start), offsets, fiber })
    }

    /// `cells` equal cells starting at 0.
    pub fn uniform(id: u32, cells: u32, fiber: LeafModel) -> Result<Self> {
        Self::shifted(id, cells, 0.0, fiber)
    }

    /// `cells` equal cells starting at `offset`.
    pub fn shifted(id: u32, cells: u32, offset: f64, fiber: LeafModel) -> Result<Self> {
        if cells == 0 {
            return argument("a chart needs at least one cell");
        }
        let offsets = (0..cells).map(|i| i as f64 / cells as f64).collect();
        Self::new(id, offset, offsets, fiber)
    }

    pub fn cells(&self) -> u32 {
        self.offsets.len() as u32
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    /// Cell index of a base point under the half-open convention.
    pub fn cell_of(&self, base: f64) -> Result<u32> {
        if !(0.0..1.0).contains(&base) {
            return domain(format!("base coordinate {base} outside [0, 1)"));
        }
        let y = reduce_unit(base - self.start);
        Ok((self.offsets.partition_point(|&u| u <= y) - 1) as u32)
    }

    /// Chart evaluation: plaque and reduced fiber coordinate.
    pub fn locate(&self, base: f64, fiber: f64) -> Result<(PlaqueId, f64)> {
        let cell = self.cell_of(base)?;
        let v = self.fiber.reduce1(fiber)?;
        Ok((PlaqueId { chart: self.id, cell }, v))
    }

    /// The base cell as disjoint half-open subintervals of `[0, 1)`.
    pub fn cell_intervals(&self, cell: u32) -> Vec<(f64, f64)> {
        let i = cell as usize;
        let lo = self.start + self.offsets[i];
        let hi = self.start + self.offsets.get(i + 1).copied().unwrap_or(1.0);
        if hi <= 1.0 {
            vec![(lo, hi)]
        } else if lo >= 1.0 {
            vec![(lo - 1.0, hi - 1.0)]
        } else {
            vec![(lo, 1.0), (0.0, hi - 1.0)]
        }
    }

    /// Total base length of a cell.
    pub fn cell_width(&self, cell: u32) -> f64 {
        self.cell_intervals(cell).iter().map(|(a, b)| b - a).sum()
    }
}

/// Two intersecting cells and their common base set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub first: PlaqueId,
    pub second: PlaqueId,
    pub pieces: Vec<(f64, f64)>,
}

impl Overlap {
    pub fn contains(&self, base: f64) -> bool {
        self.pieces.iter().any(|&(a, b)| base >= a && base < b)
    }

    pub fn width(&self) -> f64 {
        self.pieces.iter().map(|(a, b)| b - a).sum()
    }
}

/// All pairs of cells whose base intervals meet in a set of positive length.
pub fn overlap_pairs(first: &Chart, second: &Chart) -> Result<Vec<Overlap>> {
    if first.fiber != second.fiber {
        return argument("charts have different fiber models");
    }
    let mut out = Vec::new();
    for i in 0..first.cells() {
        let a = first.cell_intervals(i);
        for j in 0..second.cells() {
            let b = second.cell_intervals(j);
            let mut pieces = Vec::new();
            for &(a0, a1) in &a {
                for &(b0, b1) in &b {
                    let (lo, hi) = (a0.max(b0), a1.min(b1));
                    if hi > lo {
                        pieces.push((lo, hi));
                    }
                }
            }
            if !pieces.is_empty() {
                pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
                out.push(Overlap {
                    first: PlaqueId { chart: first.id, cell: i },
                    second: PlaqueId { chart: second.id, cell: j },
                    pieces,
                });
            }
        }
    }
    Ok(out)
}
