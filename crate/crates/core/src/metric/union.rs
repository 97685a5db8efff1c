use super::FiniteMetricMeasureSpace as Space;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Landmarks `p_{n,i} ∈ X_i` matched with `p_n ∈ X`, promising
/// `|d(p_{m,i}, p_{n,i}) − d(p_m, p_n)| < 1/N(i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTable {
    /// `N(i)`.
    pub precision: u32,
    /// `(index in the block, index in the limit)`.
    pub pairs: Vec<(usize, usize)>,
}

/// A metric on the disjoint union `X_1 ⊔ ⋯ ⊔ X_m ⊔ X`.
///
/// Points are numbered block by block with the limit space last.
#[derive(Clone, Debug)]
pub struct UnionMetric {
    space: Space,
    offsets: Vec<usize>,
}

impl UnionMetric {
    /// The union as a measured metric space (weights inherited).
    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Global index of point `i` of block `b`; `b = blocks` is the limit.
    pub fn index(&self, b: usize, i: usize) -> usize {
        self.offsets[b] + i
    }

    pub fn limit_index(&self, j: usize) -> usize {
        self.offsets[self.offsets.len() - 2] + j
    }

    pub fn d(&self, a: usize, b: usize) -> f64 {
        self.space.d(a, b)
    }
}

/// Glues each block to the limit space through its landmark table.
///
/// Between block `X_i` and `X`: `d(x, y) = min_n d(x, p_{n,i}) + d(p_n, y) + 1/N(i)`.
/// Between two blocks the distance is the shortest route through `X`.
/// Each table's precision promise is verified first.
pub fn union_metric(blocks: &[Space], limit: &Space, tables: &[LandmarkTable]) -> Result<UnionMetric> {
    if blocks.len() != tables.len() {
        return Err(Error::Mismatch(format!(
            "{} blocks but {} landmark tables",
            blocks.len(),
            tables.len()
        )));
    }
    for (t, (block, table)) in blocks.iter().zip(tables).enumerate() {
        if table.pairs.is_empty() {
            return Err(Error::param(format!("landmark table {t} is empty")));
        }
        if table.precision == 0 {
            return Err(Error::param(format!("landmark table {t} has precision N = 0")));
        }
        let eps = 1.0 / table.precision as f64;
        for &(bi, lj) in &table.pairs {
            block.check_index(bi)?;
            limit.check_index(lj)?;
        }
        for (m, &(bm, lm)) in table.pairs.iter().enumerate() {
            for (n, &(bn, ln)) in table.pairs.iter().enumerate() {
                let defect = (block.d(bm, bn) - limit.d(lm, ln)).abs();
                if defect >= eps {
                    return Err(Error::LandmarkPrecision {
                        table: t,
                        m,
                        n,
                        defect,
                        precision: table.precision,
                    });
                }
            }
        }
    }
    let mut offsets = vec![0];
    for b in blocks {
        offsets.push(offsets.last().unwrap() + b.n());
    }
    offsets.push(offsets.last().unwrap() + limit.n());
    let total = *offsets.last().unwrap();
    let lim0 = offsets[blocks.len()];
    let mut dist = vec![0.0; total * total];
    let mut set = |a: usize, b: usize, v: f64| {
        dist[a * total + b] = v;
        dist[b * total + a] = v;
    };
    for i in 0..limit.n() {
        for j in 0..limit.n() {
            set(lim0 + i, lim0 + j, limit.d(i, j));
        }
    }
    // cross[b][x * |X| + y] = d(x, y) for x in block b and y in X
    let mut cross: Vec<Vec<f64>> = Vec::with_capacity(blocks.len());
    for (b, (block, table)) in blocks.iter().zip(tables).enumerate() {
        let eps = 1.0 / table.precision as f64;
        let mut c = vec![0.0; block.n() * limit.n()];
        for x in 0..block.n() {
            for y in 0..block.n() {
                set(offsets[b] + x, offsets[b] + y, block.d(x, y));
            }
            for y in 0..limit.n() {
                let v = table
                    .pairs
                    .iter()
                    .map(|&(p, q)| block.d(x, p) + limit.d(q, y))
                    .fold(f64::INFINITY, f64::min)
                    + eps;
                c[x * limit.n() + y] = v;
                set(offsets[b] + x, lim0 + y, v);
            }
        }
        cross.push(c);
    }
    for a in 0..blocks.len() {
        for b in (a + 1)..blocks.len() {
            for x in 0..blocks[a].n() {
                for y in 0..blocks[b].n() {
                    let v = (0..limit.n())
                        .map(|z| cross[a][x * limit.n() + z] + cross[b][y * limit.n() + z])
                        .fold(f64::INFINITY, f64::min);
                    set(offsets[a] + x, offsets[b] + y, v);
                }
            }
        }
    }
    let weight: Vec<f64> = blocks
        .iter()
        .chain(std::iter::once(limit))
        .flat_map(|s| s.weights().to_vec())
        .collect();
    let space = Space::from_trusted(total, dist, weight, None)?;
    Ok(UnionMetric { space, offsets })
}
