use super::FiniteMetricMeasureSpace as Space;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest space accepted by the exhaustive covering order unless the
/// caller raises the cap.
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 16;

/// Scan order for greedy net construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetOrder {
    Index,
    Shuffled(u64),
}

fn scan_order(n: usize, order: NetOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let NetOrder::Shuffled(seed) = order {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    idx
}

/// Greedy maximal `r`-discrete net: points are pairwise at distance `≥ r`
/// and no further point can be added. Returned in scan order.
pub fn maximal_r_discrete_net(x: &Space, r: f64, order: NetOrder) -> Result<Vec<usize>> {
    if !(r > 0.0) {
        return Err(Error::param(format!("net radius must be positive, got {r}")));
    }
    let mut net: Vec<usize> = Vec::new();
    for p in scan_order(x.n(), order) {
        if net.iter().all(|&q| x.d(p, q) >= r) {
            net.push(p);
        }
    }
    Ok(net)
}

/// How [`covering_order`] searches over `r`-discrete subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoveringMode {
    /// Exact branch and bound; refuses spaces with more than `cap` points.
    Exhaustive { cap: usize },
    /// Lower bound from `budget` random scan orders.
    Randomized { budget: usize, seed: u64 },
}

impl CoveringMode {
    pub fn exhaustive() -> Self {
        CoveringMode::Exhaustive {
            cap: DEFAULT_EXHAUSTIVE_CAP,
        }
    }
}

/// Local covering order `K_{c,X}(r)`: the largest number of balls
/// `B(x_λ, cr)` around an `r`-discrete set (pairwise distances `≥ r`) that
/// share a common point.
///
/// A point `z` lies in `B(a, cr)` exactly when `a ∈ B(z, cr)`, so `K` is the
/// largest `r`-discrete subset of a single open ball `B(z, cr)`.
pub fn covering_order(x: &Space, c: f64, r: f64, mode: CoveringMode) -> Result<usize> {
    if !(c >= 1.0) {
        return Err(Error::param(format!("covering factor c must be >= 1, got {c}")));
    }
    if !(r > 0.0) {
        return Err(Error::param(format!("covering radius must be positive, got {r}")));
    }
    match mode {
        CoveringMode::Exhaustive { cap } => {
            if x.n() > cap {
                return Err(Error::ExhaustiveCap { n: x.n(), cap });
            }
            let mut best = 0;
            for z in 0..x.n() {
                let ball = x.ball(z, c * r);
                if ball.len() > best {
                    best = best.max(max_separated(x, &ball, r, best));
                }
            }
            Ok(best)
        }
        CoveringMode::Randomized { budget, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let balls: Vec<Vec<usize>> = (0..x.n()).map(|z| x.ball(z, c * r)).collect();
            let mut rank: Vec<usize> = (0..x.n()).collect();
            let mut order: Vec<usize> = (0..x.n()).collect();
            let mut best = 0;
            for round in 0..budget.max(1) {
                if round > 0 {
                    order.shuffle(&mut rng);
                }
                for (k, &p) in order.iter().enumerate() {
                    rank[p] = k;
                }
                for ball in &balls {
                    let mut members = ball.clone();
                    members.sort_by_key(|&p| rank[p]);
                    let mut chosen: Vec<usize> = Vec::new();
                    for p in members {
                        if chosen.iter().all(|&q| x.d(p, q) >= r) {
                            chosen.push(p);
                        }
                    }
                    best = best.max(chosen.len());
                }
            }
            Ok(best)
        }
    }
}

/// Size of the largest subset of `vs` with pairwise distances `≥ r`,
/// or at most `floor` when no subset beats it.
fn max_separated(x: &Space, vs: &[usize], r: f64, floor: usize) -> usize {
    let m = vs.len();
    let words = m.div_ceil(64);
    let mut conflict = vec![vec![0u64; words]; m];
    for a in 0..m {
        for b in 0..m {
            if a != b && x.d(vs[a], vs[b]) < r {
                conflict[a][b / 64] |= 1 << (b % 64);
            }
        }
    }
    let mut all = vec![0u64; words];
    for a in 0..m {
        all[a / 64] |= 1 << (a % 64);
    }
    let mut best = floor;
    branch(&conflict, all, 0, &mut best);
    best
}

fn count(set: &[u64]) -> usize {
    set.iter().map(|w| w.count_ones() as usize).sum()
}

fn branch(conflict: &[Vec<u64>], cand: Vec<u64>, size: usize, best: &mut usize) {
    let left = count(&cand);
    if size + left <= *best {
        return;
    }
    // Vertex of maximal degree inside the candidate set.
    let mut pick = None;
    let mut deg_max = 0;
    for (w, &word) in cand.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let v = w * 64 + b;
            let deg: usize = conflict[v]
                .iter()
                .zip(&cand)
                .map(|(c, k)| (c & k).count_ones() as usize)
                .sum();
            if pick.is_none() || deg > deg_max {
                pick = Some(v);
                deg_max = deg;
            }
        }
    }
    let Some(v) = pick else {
        *best = (*best).max(size);
        return;
    };
    if deg_max == 0 {
        *best = (*best).max(size + left);
        return;
    }
    let with: Vec<u64> = cand
        .iter()
        .zip(&conflict[v])
        .enumerate()
        .map(|(w, (k, c))| {
            let own = if w == v / 64 { 1u64 << (v % 64) } else { 0 };
            k & !c & !own
        })
        .collect();
    branch(conflict, with, size + 1, best);
    let mut without = cand;
    without[v / 64] &= !(1u64 << (v % 64));
    branch(conflict, without, size, best);
}

/// Nearest-point map onto `f`: every point goes to its closest member of
/// `f`, ties to the lowest index.
pub fn project_onto_subset(z: &Space, f: &[usize]) -> Result<Vec<usize>> {
    if f.is_empty() {
        return Err(Error::EmptySubset);
    }
    for &q in f {
        z.check_index(q)?;
    }
    let mut sorted = f.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok((0..z.n())
        .map(|p| {
            let mut best = (f64::INFINITY, sorted[0]);
            for &q in &sorted {
                if z.d(p, q) < best.0 {
                    best = (z.d(p, q), q);
                }
            }
            best.1
        })
        .collect())
}

/// Kuratowski embedding `x ↦ d(x, ·) − d(anchor, ·)` into `ℓ^∞(n)`; the
/// sup-norm distance between rows `i` and `j` equals `d(i, j)`.
pub fn kuratowski_embed(x: &Space, anchor: usize) -> Result<Vec<Vec<f64>>> {
    x.check_index(anchor)?;
    let base = x.row(anchor);
    Ok((0..x.n())
        .map(|i| x.row(i).iter().zip(base).map(|(a, b)| a - b).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{linf, sample_circle, sample_cube, sample_interval};
    use std::f64::consts::PI;

    fn two() -> Space {
        Space::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn net_extremes() {
        let s = sample_interval(6, 1.0).unwrap();
        assert_eq!(maximal_r_discrete_net(&s, 5.0, NetOrder::Index).unwrap(), vec![0]);
        assert_eq!(maximal_r_discrete_net(&s, 0.19, NetOrder::Index).unwrap().len(), 6);
        assert!(maximal_r_discrete_net(&s, 0.0, NetOrder::Index).is_err());
    }

    #[test]
    fn circle_net_of_four() {
        let c = sample_circle(12, 2.0 * PI).unwrap();
        let net = maximal_r_discrete_net(&c, PI / 2.0, NetOrder::Index).unwrap();
        assert_eq!(net, vec![0, 3, 6, 9]);
    }

    #[test]
    fn shuffled_nets_are_maximal() {
        let c = sample_circle(12, 2.0 * PI).unwrap();
        for seed in 0..20 {
            let net = maximal_r_discrete_net(&c, PI / 2.0, NetOrder::Shuffled(seed)).unwrap();
            for &p in &net {
                for &q in &net {
                    assert!(p == q || c.d(p, q) >= PI / 2.0 - 1e-12);
                }
            }
            for p in 0..12 {
                assert!(net.iter().any(|&q| c.d(p, q) < PI / 2.0));
            }
        }
    }

    #[test]
    fn covering_order_of_two_points() {
        let t = two();
        assert_eq!(covering_order(&t, 3.0, 0.5, CoveringMode::exhaustive()).unwrap(), 2);
        assert_eq!(covering_order(&t, 1.0, 0.5, CoveringMode::exhaustive()).unwrap(), 1);
        let rnd = CoveringMode::Randomized { budget: 10, seed: 1 };
        assert_eq!(covering_order(&t, 3.0, 0.5, rnd).unwrap(), 2);
    }

    #[test]
    fn exhaustive_cap_is_enforced() {
        let s = sample_interval(17, 1.0).unwrap();
        assert!(matches!(
            covering_order(&s, 1.0, 0.1, CoveringMode::exhaustive()),
            Err(Error::ExhaustiveCap { n: 17, cap: 16 })
        ));
        assert!(covering_order(&s, 1.0, 0.1, CoveringMode::Exhaustive { cap: 17 }).is_ok());
    }

    #[test]
    fn exhaustive_matches_subset_enumeration() {
        let g = sample_cube(&[3, 4], &[1.0, 1.0]).unwrap();
        for &(c, r) in &[(1.0, 0.3), (2.0, 0.3), (1.5, 0.5), (3.0, 0.34)] {
            // Oracle: every subset, every center.
            let mut brute = 0;
            for mask in 1u32..(1 << g.n()) {
                let set: Vec<usize> = (0..g.n()).filter(|b| mask >> b & 1 == 1).collect();
                let sep = set
                    .iter()
                    .all(|&p| set.iter().all(|&q| p == q || g.d(p, q) >= r));
                if !sep {
                    continue;
                }
                for z in 0..g.n() {
                    let k = set.iter().filter(|&&p| g.d(p, z) < c * r).count();
                    brute = brute.max(k);
                }
            }
            let k = covering_order(&g, c, r, CoveringMode::exhaustive()).unwrap();
            assert_eq!(k, brute, "c = {c}, r = {r}");
        }
    }

    #[test]
    fn projection_examples() {
        let c = sample_circle(8, 8.0).unwrap();
        let all: Vec<usize> = (0..8).collect();
        assert_eq!(project_onto_subset(&c, &all).unwrap(), all);
        assert_eq!(project_onto_subset(&c, &[5]).unwrap(), vec![5; 8]);
        // Oracle by enumeration: antipodes 0 and 4; points 2 and 6 tie.
        assert_eq!(
            project_onto_subset(&c, &[4, 0]).unwrap(),
            vec![0, 0, 0, 4, 4, 4, 0, 0]
        );
        assert!(project_onto_subset(&c, &[]).is_err());
    }

    #[test]
    fn kuratowski_identity() {
        let t = two();
        let e = kuratowski_embed(&t, 0).unwrap();
        assert_eq!(e[0], vec![0.0, 0.0]);
        assert_eq!(linf(&e[0], &e[1]), 1.0);
        let c = sample_circle(7, 3.0).unwrap();
        let e = kuratowski_embed(&c, 2).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert!((linf(&e[i], &e[j]) - c.d(i, j)).abs() <= 4.0 * f64::EPSILON * c.diameter());
            }
        }
    }
}
