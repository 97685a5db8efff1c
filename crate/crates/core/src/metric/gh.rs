use super::FiniteMetricMeasureSpace as Space;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A relation between the points of `X` and `Y` that projects onto both.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence {
    pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    /// Checks that every index of `0..nx` and `0..ny` occurs. Pairs are
    /// stored sorted and without duplicates.
    pub fn new(mut pairs: Vec<(usize, usize)>, nx: usize, ny: usize) -> Result<Self> {
        let mut seen_x = vec![false; nx];
        let mut seen_y = vec![false; ny];
        for &(i, j) in &pairs {
            if i >= nx {
                return Err(Error::IndexOutOfRange { index: i, n: nx });
            }
            if j >= ny {
                return Err(Error::IndexOutOfRange { index: j, n: ny });
            }
            seen_x[i] = true;
            seen_y[j] = true;
        }
        if let Some(i) = seen_x.iter().position(|s| !s) {
            return Err(Error::param(format!("correspondence misses point {i} of X")));
        }
        if let Some(j) = seen_y.iter().position(|s| !s) {
            return Err(Error::param(format!("correspondence misses point {j} of Y")));
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self { pairs })
    }

    /// The correspondence `{(x, f(x))} ∪ {(g(y), y)}`.
    pub fn from_maps(f: &[usize], g: &[usize]) -> Result<Self> {
        let pairs = f
            .iter()
            .enumerate()
            .map(|(i, &j)| (i, j))
            .chain(g.iter().enumerate().map(|(j, &i)| (i, j)))
            .collect();
        Self::new(pairs, f.len(), g.len())
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

fn pair_distortion(x: &Space, y: &Space, pairs: &[(usize, usize)]) -> f64 {
    let mut dis: f64 = 0.0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        for &(i2, j2) in &pairs[k + 1..] {
            dis = dis.max((x.d(i, i2) - y.d(j, j2)).abs());
        }
    }
    dis
}

/// `dis R = max |d_X(x, x') − d_Y(y, y')|` over pairs of pairs of `R`.
pub fn distortion(corr: &Correspondence, x: &Space, y: &Space) -> Result<f64> {
    for &(i, j) in &corr.pairs {
        x.check_index(i)?;
        y.check_index(j)?;
    }
    Ok(pair_distortion(x, y, &corr.pairs))
}

/// Distortion of a total map `X → Y` given as `map[i] = φ(i)`.
pub fn distortion_of_map(map: &[usize], x: &Space, y: &Space) -> Result<f64> {
    if map.len() != x.n() {
        return Err(Error::Mismatch(format!(
            "map has {} entries for a space of {} points",
            map.len(),
            x.n()
        )));
    }
    for &j in map {
        y.check_index(j)?;
    }
    let mut dis: f64 = 0.0;
    for i in 0..x.n() {
        for i2 in (i + 1)..x.n() {
            dis = dis.max((x.d(i, i2) - y.d(map[i], map[i2])).abs());
        }
    }
    Ok(dis)
}

/// Whether `φ` has distortion `< eps` and its image is `eps`-dense
/// (every point of `Y` lies in an open `eps`-ball around the image).
pub fn is_eps_approximation(map: &[usize], x: &Space, y: &Space, eps: f64) -> Result<bool> {
    if distortion_of_map(map, x, y)? >= eps {
        return Ok(false);
    }
    Ok((0..y.n()).all(|q| map.iter().any(|&j| y.d(q, j) < eps)))
}

/// Hausdorff distance between two nonempty index subsets of `z`.
pub fn hausdorff_distance(a: &[usize], b: &[usize], z: &Space) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySubset);
    }
    for &i in a.iter().chain(b) {
        z.check_index(i)?;
    }
    let one_sided = |p: &[usize], q: &[usize]| {
        p.iter()
            .map(|&i| q.iter().map(|&j| z.d(i, j)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(one_sided(a, b).max(one_sided(b, a)))
}

/// Budget for the correspondence search behind [`gh_upper`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhSearch {
    /// Independent hill-climbing runs; the first uses the deterministic
    /// eccentricity seeding, later ones random landmarks.
    pub restarts: usize,
    /// Maximal number of improvement sweeps per run.
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for GhSearch {
    fn default() -> Self {
        Self {
            restarts: 4,
            sweeps: 50,
            seed: 0,
        }
    }
}

impl GhSearch {
    /// A search with roughly `budget` sweeps in total.
    pub fn with_budget(budget: usize, seed: u64) -> Self {
        let restarts = (budget / 50).clamp(1, 16);
        Self {
            restarts,
            sweeps: (budget / restarts).max(1),
            seed,
        }
    }
}

/// Local search state: `R = {(x, f(x))} ∪ {(g(y), y)}` with the matrix of
/// pair-pair distortions and the two largest entries of every row.
struct Climber<'a> {
    x: &'a Space,
    y: &'a Space,
    pairs: Vec<(usize, usize)>,
    nx: usize,
    e: Vec<f64>,
    top: Vec<(f64, usize, f64)>,
}

impl<'a> Climber<'a> {
    fn new(x: &'a Space, y: &'a Space, f: &[usize], g: &[usize]) -> Self {
        let pairs: Vec<(usize, usize)> = f
            .iter()
            .enumerate()
            .map(|(i, &j)| (i, j))
            .chain(g.iter().enumerate().map(|(j, &i)| (i, j)))
            .collect();
        let p = pairs.len();
        let mut c = Self {
            x,
            y,
            pairs,
            nx: x.n(),
            e: vec![0.0; p * p],
            top: vec![(0.0, usize::MAX, 0.0); p],
        };
        for k in 0..p {
            c.fill_row(k);
        }
        c.refresh_top();
        c
    }

    fn entry(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        (self.x.d(a.0, b.0) - self.y.d(a.1, b.1)).abs()
    }

    fn fill_row(&mut self, k: usize) {
        let p = self.pairs.len();
        for l in 0..p {
            let v = self.entry(self.pairs[k], self.pairs[l]);
            self.e[k * p + l] = v;
            self.e[l * p + k] = v;
        }
    }

    fn refresh_top(&mut self) {
        let p = self.pairs.len();
        for l in 0..p {
            let row = &self.e[l * p..(l + 1) * p];
            let (mut b1, mut a1, mut b2) = (f64::NEG_INFINITY, usize::MAX, f64::NEG_INFINITY);
            for (m, &v) in row.iter().enumerate() {
                if v > b1 {
                    b2 = b1;
                    b1 = v;
                    a1 = m;
                } else if v > b2 {
                    b2 = v;
                }
            }
            self.top[l] = (b1, a1, b2);
        }
    }

    fn distortion(&self) -> f64 {
        self.top.iter().map(|t| t.0).fold(0.0, f64::max)
    }

    fn row_max(&self, k: usize) -> f64 {
        self.top[k].0
    }

    /// Largest entry among pairs other than `k`.
    fn max_without(&self, k: usize) -> f64 {
        let mut m: f64 = 0.0;
        for (l, &(b1, a1, b2)) in self.top.iter().enumerate() {
            if l != k {
                m = m.max(if a1 == k { b2 } else { b1 });
            }
        }
        m
    }

    /// Largest entry of row `k` if pair `k` were replaced by `cand`.
    fn row_with(&self, k: usize, cand: (usize, usize)) -> f64 {
        let mut m: f64 = 0.0;
        for (l, &q) in self.pairs.iter().enumerate() {
            if l != k {
                m = m.max(self.entry(cand, q));
            }
        }
        m
    }

    /// One pass over all pairs, moving each to its best replacement when
    /// that lowers the global distortion or its own row maximum without
    /// raising the global distortion. Returns whether anything moved.
    fn sweep(&mut self) -> bool {
        let mut moved = false;
        for k in 0..self.pairs.len() {
            let global = self.distortion();
            let rest = self.max_without(k);
            let own = self.row_max(k);
            let (i, j) = self.pairs[k];
            let candidates: Vec<(usize, usize)> = if k < self.nx {
                (0..self.y.n()).map(|j2| (i, j2)).collect()
            } else {
                (0..self.x.n()).map(|i2| (i2, j)).collect()
            };
            let mut best = (own, self.pairs[k]);
            for cand in candidates {
                if cand == self.pairs[k] {
                    continue;
                }
                let r = self.row_with(k, cand);
                if r < best.0 - 1e-15 {
                    best = (r, cand);
                }
            }
            if best.1 != self.pairs[k] && rest.max(best.0) <= global {
                self.pairs[k] = best.1;
                self.fill_row(k);
                self.refresh_top();
                moved = true;
            }
        }
        moved
    }
}

fn eccentricities(s: &Space) -> Vec<f64> {
    (0..s.n())
        .map(|i| s.row(i).iter().cloned().fold(0.0, f64::max))
        .collect()
}

fn argmin_by(n: usize, f: impl Fn(usize) -> f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for i in 0..n {
        let v = f(i);
        if v < best.0 {
            best = (v, i);
        }
    }
    best.1
}

/// Seeds `f, g` by matching distances to one landmark pair `(x0, y0)`.
fn landmark_seed(x: &Space, y: &Space, x0: usize, y0: usize) -> (Vec<usize>, Vec<usize>) {
    let f = (0..x.n())
        .map(|i| argmin_by(y.n(), |j| (y.d(y0, j) - x.d(x0, i)).abs()))
        .collect();
    let g = (0..y.n())
        .map(|j| argmin_by(x.n(), |i| (x.d(x0, i) - y.d(y0, j)).abs()))
        .collect();
    (f, g)
}

fn maps_of(corr: &Correspondence, nx: usize, ny: usize) -> (Vec<usize>, Vec<usize>) {
    let mut f = vec![usize::MAX; nx];
    let mut g = vec![usize::MAX; ny];
    for &(i, j) in &corr.pairs {
        if f[i] == usize::MAX {
            f[i] = j;
        }
        if g[j] == usize::MAX {
            g[j] = i;
        }
    }
    (f, g)
}

/// Upper bound `dis(R)/2 ≥ d_GH(X, Y)` with its witness `R`, found by
/// landmark seeding and pair-swap hill climbing with restarts.
///
/// An optional `warm` correspondence is climbed first. Deterministic for a
/// fixed search seed.
pub fn gh_upper(
    x: &Space,
    y: &Space,
    search: &GhSearch,
    warm: Option<&Correspondence>,
) -> Result<(f64, Correspondence)> {
    let (nx, ny) = (x.n(), y.n());
    let mut starts: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    if let Some(w) = warm {
        for &(i, j) in w.pairs() {
            x.check_index(i)?;
            y.check_index(j)?;
        }
        Correspondence::new(w.pairs.clone(), nx, ny)?;
        starts.push(maps_of(w, nx, ny));
    }
    if nx == ny {
        let id: Vec<usize> = (0..nx).collect();
        starts.push((id.clone(), id));
    }
    let (ex, ey) = (eccentricities(x), eccentricities(y));
    let x0 = argmin_by(nx, |i| -ex[i]);
    let y0 = argmin_by(ny, |j| (ey[j] - ex[x0]).abs());
    starts.push(landmark_seed(x, y, x0, y0));
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut order: Vec<usize> = (0..nx).collect();
    for _ in 1..search.restarts.max(1) {
        order.shuffle(&mut rng);
        let x0 = order[0];
        let y0 = rng.random_range(0..ny);
        starts.push(landmark_seed(x, y, x0, y0));
    }
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for (f, g) in starts {
        let mut c = Climber::new(x, y, &f, &g);
        for _ in 0..search.sweeps {
            if !c.sweep() {
                break;
            }
        }
        let dis = c.distortion();
        if best.as_ref().is_none_or(|(b, _)| dis < *b) {
            best = Some((dis, c.pairs));
        }
        if dis == 0.0 {
            break;
        }
    }
    let (dis, pairs) = best.expect("at least one start");
    Ok((0.5 * dis, Correspondence::new(pairs, nx, ny)?))
}

fn sorted_row(s: &Space, i: usize) -> Vec<f64> {
    let mut r = s.row(i).to_vec();
    r.sort_by(f64::total_cmp);
    r
}

/// Hausdorff distance between two sorted finite subsets of the real line.
fn line_hausdorff(a: &[f64], b: &[f64]) -> f64 {
    let one = |p: &[f64], q: &[f64]| {
        let mut k = 0;
        let mut worst: f64 = 0.0;
        for &v in p {
            while k + 1 < q.len() && q[k + 1] <= v {
                k += 1;
            }
            let mut d = (q[k] - v).abs();
            if k + 1 < q.len() {
                d = d.min((q[k + 1] - v).abs());
            }
            worst = worst.max(d);
        }
        worst
    };
    one(a, b).max(one(b, a))
}

/// Certified lower bound on `d_GH(X, Y)`.
///
/// Combines `|diam X − diam Y| / 2` with the distance-set bound: a pair
/// `(x, y)` of a correspondence with distortion `δ` has distance sets
/// within Hausdorff distance `δ` on the line, so half the worst best-match
/// Hausdorff distance bounds the GH distance from below.
pub fn gh_lower(x: &Space, y: &Space) -> f64 {
    let diam = 0.5 * (x.diameter() - y.diameter()).abs();
    let dx: Vec<Vec<f64>> = (0..x.n()).map(|i| sorted_row(x, i)).collect();
    let dy: Vec<Vec<f64>> = (0..y.n()).map(|j| sorted_row(y, j)).collect();
    let mut h = vec![0.0; x.n() * y.n()];
    for (i, a) in dx.iter().enumerate() {
        for (j, b) in dy.iter().enumerate() {
            h[i * y.n() + j] = line_hausdorff(a, b);
        }
    }
    let from_x = (0..x.n())
        .map(|i| (0..y.n()).map(|j| h[i * y.n() + j]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let from_y = (0..y.n())
        .map(|j| (0..x.n()).map(|i| h[i * y.n() + j]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    diam.max(0.5 * from_x.max(from_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{sample_circle, sample_interval};
    use std::f64::consts::PI;

    fn point() -> Space {
        Space::new(vec![vec![0.0]], vec![1.0]).unwrap()
    }

    fn two(d: f64) -> Space {
        Space::new(vec![vec![0.0, d], vec![d, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    /// Exhaustive GH distance over every correspondence (tiny spaces only).
    fn brute_gh(x: &Space, y: &Space) -> f64 {
        let all: Vec<(usize, usize)> = (0..x.n())
            .flat_map(|i| (0..y.n()).map(move |j| (i, j)))
            .collect();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << all.len()) {
            let pairs: Vec<_> = (0..all.len())
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| all[b])
                .collect();
            if Correspondence::new(pairs.clone(), x.n(), y.n()).is_ok() {
                best = best.min(pair_distortion(x, y, &pairs));
            }
        }
        0.5 * best
    }

    #[test]
    fn identity_has_zero_distortion() {
        let c = sample_circle(8, 2.0 * PI).unwrap();
        let id: Vec<usize> = (0..8).collect();
        assert_eq!(distortion_of_map(&id, &c, &c).unwrap(), 0.0);
        let rot: Vec<usize> = (0..8).map(|i| (i + 1) % 8).collect();
        assert!(distortion_of_map(&rot, &c, &c).unwrap() < 1e-15);
    }

    #[test]
    fn collapsing_map_has_distortion_one() {
        assert_eq!(distortion_of_map(&[0, 0], &two(1.0), &point()).unwrap(), 1.0);
        assert!(distortion_of_map(&[0, 3], &two(1.0), &two(1.0)).is_err());
    }

    #[test]
    fn eps_approximations() {
        let t = two(1.0);
        assert!(is_eps_approximation(&[0, 1], &t, &t, 1e-9).unwrap());
        assert!(is_eps_approximation(&[0], &point(), &t, 1.01).unwrap());
        assert!(!is_eps_approximation(&[0], &point(), &t, 0.5).unwrap());
        let fine = sample_circle(64, 2.0 * PI).unwrap();
        let coarse = sample_circle(32, 2.0 * PI).unwrap();
        let near: Vec<usize> = (0..64).map(|i| (i / 2) % 32).collect();
        assert!(is_eps_approximation(&near, &fine, &coarse, 2.0 * (2.0 * PI / 64.0)).unwrap());
    }

    #[test]
    fn hausdorff_examples() {
        let c = sample_circle(8, 8.0).unwrap();
        assert_eq!(hausdorff_distance(&[1, 2], &[1, 2], &c).unwrap(), 0.0);
        let all: Vec<usize> = (0..8).collect();
        assert_eq!(hausdorff_distance(&[3], &all, &c).unwrap(), 4.0);
        // Oracle by hand: {0, 1} vs {4, 6}; point 4 is 3 from 1, point 1 is 3 from 4.
        assert_eq!(hausdorff_distance(&[0, 1], &[4, 6], &c).unwrap(), 3.0);
        assert!(hausdorff_distance(&[], &[1], &c).is_err());
    }

    #[test]
    fn gh_of_point_and_pair() {
        let (b, w) = gh_upper(&point(), &two(1.0), &GhSearch::default(), None).unwrap();
        assert_eq!(b, 0.5);
        assert_eq!(w.pairs(), &[(0, 0), (0, 1)]);
        assert_eq!(gh_lower(&point(), &two(1.0)), 0.5);
        assert_eq!(brute_gh(&point(), &two(1.0)), 0.5);
    }

    #[test]
    fn gh_of_isometric_spaces_is_zero() {
        let c = sample_circle(9, 3.0).unwrap();
        let (b, _) = gh_upper(&c, &c, &GhSearch::default(), None).unwrap();
        assert_eq!(b, 0.0);
        assert_eq!(gh_lower(&c, &c), 0.0);
    }

    #[test]
    fn diameter_bound() {
        let a = sample_interval(3, 1.0).unwrap();
        let b = sample_interval(4, 3.0).unwrap();
        assert!(gh_lower(&a, &b) >= 1.0);
    }

    #[test]
    fn bounds_bracket_brute_force_on_small_circles() {
        let x = sample_circle(4, 2.0 * PI).unwrap();
        let y = sample_circle(3, 4.0 * PI).unwrap();
        let exact = brute_gh(&x, &y);
        let (up, w) = gh_upper(&x, &y, &GhSearch::default(), None).unwrap();
        assert!(gh_lower(&x, &y) <= exact + 1e-12);
        assert!(up >= exact - 1e-12);
        assert!((distortion(&w, &x, &y).unwrap() * 0.5 - up).abs() < 1e-15);
        assert!((up - exact).abs() < 1e-12);
    }

    #[test]
    fn larger_budget_never_hurts() {
        let x = sample_circle(8, 2.0 * PI).unwrap();
        let y = sample_circle(8, 4.0 * PI).unwrap();
        let (small, _) = gh_upper(&x, &y, &GhSearch::with_budget(1, 3), None).unwrap();
        let (large, _) = gh_upper(&x, &y, &GhSearch::with_budget(400, 3), None).unwrap();
        assert!(large <= small);
        assert!(large >= gh_lower(&x, &y));
        // diameters π and 2π
        assert!(gh_lower(&x, &y) >= PI / 2.0 - 1e-12);
    }

    #[test]
    fn warm_start_is_respected() {
        let x = sample_interval(5, 1.0).unwrap();
        let y = sample_interval(5, 1.0).unwrap();
        let id = Correspondence::from_maps(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4]).unwrap();
        let (b, _) = gh_upper(&x, &y, &GhSearch { restarts: 1, sweeps: 0, seed: 0 }, Some(&id)).unwrap();
        assert_eq!(b, 0.0);
        assert!(Correspondence::new(vec![(0, 0)], 2, 1).is_err());
    }
}
