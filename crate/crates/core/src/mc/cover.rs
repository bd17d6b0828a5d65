use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{run_replicas, McConfig, McRng, SampleSet};
use crate::error::{Error, Result};

/// Largest vertex count a simulated graph may have.
const MAX_VERTICES: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeSpec {
    /// Regular `arity`-ary tree of the given depth. The extended variant adds
    /// a vertex `oo` joined only to the root.
    KAry {
        arity: usize,
        depth: usize,
        #[serde(default)]
        extended: bool,
    },
    #[serde(rename = "torus_2d")]
    Torus2D { side: usize },
}

impl TreeSpec {
    pub fn binary(depth: usize, extended: bool) -> Self {
        TreeSpec::KAry { arity: 2, depth, extended }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TreeSpec::KAry { arity, depth, .. } => {
                if arity < 2 || depth < 1 {
                    return Err(Error::Invalid(format!("trees need arity ≥ 2 and depth ≥ 1, got {arity} and {depth}")));
                }
                tree_size(arity, depth).map(|_| ())
            }
            TreeSpec::Torus2D { side } => {
                if side < 2 {
                    return Err(Error::Invalid(format!("torus side must be at least 2, got {side}")));
                }
                if side.checked_mul(side).is_none_or(|v| v > MAX_VERTICES) {
                    return Err(Error::Resource(format!("torus of side {side} is too large")));
                }
                Ok(())
            }
        }
    }
}

/// Vertex count and index of the first leaf in heap order.
fn tree_size(arity: usize, depth: usize) -> Result<(usize, usize)> {
    let mut total = 1usize;
    let mut level = 1usize;
    let mut first_leaf = 0usize;
    for _ in 0..depth {
        first_leaf = total;
        level = level.checked_mul(arity).ok_or_else(too_big)?;
        total = total.checked_add(level).ok_or_else(too_big)?;
        if total > MAX_VERTICES {
            return Err(too_big());
        }
    }
    Ok((total, first_leaf))
}

fn too_big() -> Error {
    Error::Resource("tree is too large to simulate".into())
}

/// Heap-ordered tree with an optional extra vertex `oo` at index `size`.
struct Tree {
    arity: usize,
    size: usize,
    first_leaf: usize,
    extended: bool,
}

impl Tree {
    fn new(arity: usize, depth: usize, extended: bool) -> Result<Self> {
        let (size, first_leaf) = tree_size(arity, depth)?;
        Ok(Tree { arity, size, first_leaf, extended })
    }

    fn oo(&self) -> usize {
        self.size
    }

    #[inline]
    fn step(&self, v: usize, rng: &mut McRng) -> usize {
        if v == self.size {
            return 0;
        }
        if v >= self.first_leaf {
            return (v - 1) / self.arity;
        }
        let up = usize::from(v > 0 || self.extended);
        let r = rng.random_range(0..self.arity + up);
        if r < self.arity {
            self.arity * v + 1 + r
        } else if v == 0 {
            self.size
        } else {
            (v - 1) / self.arity
        }
    }
}

fn budget_error(budget: u64) -> Error {
    Error::Resource(format!("walk exceeded the step budget of {budget}"))
}

/// Steps until a walk from the root has visited every vertex.
fn plain_cover(tree: &Tree, rng: &mut McRng, budget: u64) -> Result<u64> {
    let mut seen = vec![false; tree.size];
    seen[0] = true;
    let mut left = tree.size - 1;
    let mut v = 0;
    let mut steps = 0u64;
    while left > 0 {
        v = tree.step(v, rng);
        steps += 1;
        if steps > budget {
            return Err(budget_error(budget));
        }
        if !seen[v] {
            seen[v] = true;
            left -= 1;
        }
    }
    Ok(steps)
}

struct ExtendedRun {
    cover: u64,
    returns: u64,
    epochs: Vec<u64>,
}

/// Walk from `oo` until the extended tree is covered and the walk is back at `oo`.
fn extended_cover(tree: &Tree, rng: &mut McRng, budget: u64) -> Result<ExtendedRun> {
    let oo = tree.oo();
    let mut seen = vec![false; tree.size + 1];
    seen[oo] = true;
    let mut left = tree.size;
    let mut v = oo;
    let mut steps = 0u64;
    let mut epoch = 0u64;
    let mut cover = None;
    let mut returns = 0u64;
    let mut epochs = Vec::new();
    loop {
        v = tree.step(v, rng);
        steps += 1;
        epoch += 1;
        if steps > budget {
            return Err(budget_error(budget));
        }
        if !seen[v] {
            seen[v] = true;
            left -= 1;
            if left == 0 {
                cover = Some(steps);
            }
        }
        if v == oo {
            epochs.push(epoch);
            epoch = 0;
            if cover.is_some() {
                break;
            }
            returns += 1;
        }
    }
    let cover = cover.expect("loop exits only after cover");
    let r = returns as usize;
    let lower: u64 = epochs[..r].iter().sum();
    let upper: u64 = epochs[..r + 1].iter().sum();
    if !(lower <= cover && cover <= upper) {
        return Err(Error::Numeric(format!("epoch sandwich violated: {lower} ≤ {cover} ≤ {upper} fails")));
    }
    Ok(ExtendedRun { cover, returns, epochs })
}

/// Cover times of a tree or torus walk.
///
/// Trees report `E_n = √(C_n / arity^depth)`. Extended trees start at `oo`
/// and also report the number `R_n` of returns to `oo` before the cover
/// time, the first epoch `tau_1` and every completed epoch `tau_epochs`
/// (including the one during which the cover happens).
pub fn simulate_cover_time(tree: &TreeSpec, cfg: &McConfig) -> Result<SampleSet> {
    tree.validate()?;
    let (arity, depth, extended) = match *tree {
        TreeSpec::KAry { arity, depth, extended } => (arity, depth, extended),
        TreeSpec::Torus2D { side } => return simulate_torus_cover(side, cfg),
    };
    let t = Tree::new(arity, depth, extended)?;
    let norm = (arity as f64).powi(depth as i32);
    if !extended {
        let c = run_replicas(cfg, |_, rng| plain_cover(&t, rng, cfg.step_budget))?;
        let values: Vec<f64> = c.iter().map(|&c| c as f64).collect();
        let e = values.iter().map(|c| (c / norm).sqrt()).collect();
        return Ok(SampleSet::new(values).with_replica_extra("E_n", e));
    }
    let runs = run_replicas(cfg, |_, rng| extended_cover(&t, rng, cfg.step_budget))?;
    let values: Vec<f64> = runs.iter().map(|r| r.cover as f64).collect();
    let e = values.iter().map(|c| (c / norm).sqrt()).collect();
    let r = runs.iter().map(|r| r.returns as f64).collect();
    let tau1 = runs.iter().map(|r| r.epochs[0] as f64).collect();
    let all = runs.iter().flat_map(|r| r.epochs.iter().map(|&t| t as f64)).collect();
    Ok(SampleSet::new(values)
        .with_replica_extra("E_n", e)
        .with_replica_extra("R_n", r)
        .with_replica_extra("tau_1", tau1)
        .with_extra("tau_epochs", all))
}

/// One return time to `oo` per replica on an extended tree.
pub fn simulate_return_epochs(tree: &TreeSpec, cfg: &McConfig) -> Result<SampleSet> {
    tree.validate()?;
    let TreeSpec::KAry { arity, depth, extended: true } = *tree else {
        return Err(Error::Invalid("return epochs need an extended tree".into()));
    };
    let t = Tree::new(arity, depth, true)?;
    let values = run_replicas(cfg, |_, rng| {
        let mut v = t.step(t.oo(), rng);
        let mut steps = 1u64;
        while v != t.oo() {
            v = t.step(v, rng);
            steps += 1;
            if steps > cfg.step_budget {
                return Err(budget_error(cfg.step_budget));
            }
        }
        Ok(steps as f64)
    })?;
    Ok(SampleSet::new(values))
}

/// Cover time of the simple random walk on the `side × side` torus from the
/// origin, with the exploratory statistics `πC/(4 n² (log n)²)` and `√(C/n²)`.
pub fn simulate_torus_cover(side: usize, cfg: &McConfig) -> Result<SampleSet> {
    TreeSpec::Torus2D { side }.validate()?;
    let n = side;
    let values = run_replicas(cfg, |_, rng| {
        let mut seen = vec![false; n * n];
        seen[0] = true;
        let mut left = n * n - 1;
        let (mut x, mut y) = (0usize, 0usize);
        let mut steps = 0u64;
        while left > 0 {
            match rng.random_range(0..4u8) {
                0 => x = if x + 1 == n { 0 } else { x + 1 },
                1 => x = if x == 0 { n - 1 } else { x - 1 },
                2 => y = if y + 1 == n { 0 } else { y + 1 },
                _ => y = if y == 0 { n - 1 } else { y - 1 },
            }
            steps += 1;
            if steps > cfg.step_budget {
                return Err(budget_error(cfg.step_budget));
            }
            let i = y * n + x;
            if !seen[i] {
                seen[i] = true;
                left -= 1;
            }
        }
        Ok(steps as f64)
    })?;
    let sq = (n * n) as f64;
    let ln = (n as f64).ln();
    let stat = values.iter().map(|c| std::f64::consts::PI * c / (4.0 * sq * ln * ln)).collect();
    let centered = values.iter().map(|c| (c / sq).sqrt()).collect();
    Ok(SampleSet::new(values).with_replica_extra("statistic", stat).with_replica_extra("centered", centered))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnMoments {
    pub mean: f64,
    pub variance: f64,
    /// Largest relative residual of the two linear solves.
    pub residual: f64,
}

/// Exact mean and variance of the return time to level 0 of the walk on
/// `{0, …, n+1}` that steps right with probability 2/3, left with 1/3, and
/// reflects at `n + 1`. This is the level process of a binary extended tree
/// of depth `n` seen from `oo`.
pub fn return_time_moments(n: usize) -> Result<ReturnMoments> {
    if n < 1 {
        return Err(Error::Domain("return-time moments need depth n ≥ 1".into()));
    }
    let size = n + 1;
    let (p_left, p_right) = (1.0 / 3.0, 2.0 / 3.0);
    // Row i (level i + 1): x_i − p_left·x_{i−1} − p_right·x_{i+1} = b_i; last row reflects.
    let lower: Vec<f64> = (0..size).map(|i| if i == 0 { 0.0 } else if i == size - 1 { -1.0 } else { -p_left }).collect();
    let upper: Vec<f64> = (0..size).map(|i| if i == size - 1 { 0.0 } else { -p_right }).collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..size)
            .map(|i| {
                let left = if i > 0 { lower[i] * x[i - 1] } else { 0.0 };
                let right = if i + 1 < size { upper[i] * x[i + 1] } else { 0.0 };
                x[i] + left + right
            })
            .collect()
    };
    // In increments d_i = x_i − x_{i−1} the rows read p_left·d_i − p_right·d_{i+1} = b_i,
    // so a backward sweep of positive terms solves them without cancellation.
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; size];
        d[size - 1] = b[size - 1];
        for i in (0..size - 1).rev() {
            d[i] = (b[i] + p_right * d[i + 1]) / p_left;
        }
        let mut acc = 0.0;
        d.iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect()
    };
    let residual = |x: &[f64], b: &[f64]| -> f64 {
        let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        apply(x).iter().zip(b).map(|(ax, b)| (ax - b).abs() / scale).fold(0.0, f64::max)
    };
    let ones = vec![1.0; size];
    let t = solve(&ones);
    // E[(1 + T_j)²] summed over one step gives b_i = 2 t_i − 1.
    let b2: Vec<f64> = t.iter().map(|t| 2.0 * t - 1.0).collect();
    let s = solve(&b2);
    let res = residual(&t, &ones).max(residual(&s, &b2));
    if res > 1e-9 {
        return Err(Error::Numeric(format!("return-time solve residual {res:e} exceeds 1e-9")));
    }
    let mean = 1.0 + t[0];
    let second = 1.0 + 2.0 * t[0] + s[0];
    Ok(ReturnMoments { mean, variance: second - mean * mean, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_one_tree() {
        let reps = 100_000;
        let set = simulate_cover_time(&TreeSpec::binary(1, false), &McConfig::new(reps, 5)).unwrap();
        let s = set.summary();
        // C = 1 + 2K with K geometric(1/2) on {1, 2, …}: mean 5, variance 8.
        assert!((s.mean - 5.0).abs() < 4.0 * (8.0 / reps as f64).sqrt(), "{}", s.mean);
        let p3 = set.values.iter().filter(|v| **v == 3.0).count() as f64 / reps as f64;
        assert!((p3 - 0.5).abs() < 4.0 * (0.25 / reps as f64).sqrt());
    }

    #[test]
    fn extended_sandwich_and_epochs() {
        let set = simulate_cover_time(&TreeSpec::binary(3, true), &McConfig::new(200, 9)).unwrap();
        let r = &set.extras["R_n"];
        let all = &set.extras["tau_epochs"];
        assert_eq!(all.len(), r.iter().map(|r| *r as usize + 1).sum::<usize>());
        assert!(set.extras["tau_1"].iter().all(|t| *t >= 2.0 && t % 2.0 == 0.0));
    }

    #[test]
    fn small_return_moments() {
        let m = return_time_moments(1).unwrap();
        assert!((m.mean - 6.0).abs() < 1e-12);
        for n in [1usize, 5, 10, 20] {
            let m = return_time_moments(n).unwrap();
            let exact = 2f64.powi(n as i32 + 2) - 2.0;
            assert!((m.mean / exact - 1.0).abs() < 1e-14, "n={n}: {}", m.mean / exact - 1.0);
        }
        assert!(return_time_moments(0).is_err());
    }

    /// Distribution of the return time by forward propagation of the level chain.
    fn propagated_moments(n: usize) -> (f64, f64) {
        let mut dist = vec![0.0; n + 2];
        dist[1] = 1.0;
        let (mut m1, mut m2) = (0.0, 0.0);
        for t in 2..200_000u64 {
            let mut next = vec![0.0; n + 2];
            for (i, p) in dist.iter().enumerate().skip(1) {
                if i == n + 1 {
                    next[n] += p;
                } else {
                    next[i - 1] += p / 3.0;
                    next[i + 1] += 2.0 * p / 3.0;
                }
            }
            let hit = next[0];
            m1 += t as f64 * hit;
            m2 += (t * t) as f64 * hit;
            next[0] = 0.0;
            dist = next;
            if dist.iter().sum::<f64>() < 1e-18 {
                break;
            }
        }
        (m1, m2 - m1 * m1)
    }

    #[test]
    fn return_moments_match_propagation() {
        for n in [1usize, 2, 4, 6] {
            let (mean, var) = propagated_moments(n);
            let m = return_time_moments(n).unwrap();
            assert!((m.mean - mean).abs() < 1e-8 * mean, "n={n}");
            assert!((m.variance - var).abs() < 1e-7 * var, "n={n}: {} vs {var}", m.variance);
        }
    }

    #[test]
    fn return_epochs_mean() {
        let reps = 20_000;
        let set = simulate_return_epochs(&TreeSpec::binary(4, true), &McConfig::new(reps, 2)).unwrap();
        let m = return_time_moments(4).unwrap();
        let s = set.summary();
        assert!((s.mean - m.mean).abs() < 4.0 * (m.variance / reps as f64).sqrt());
        assert!(simulate_return_epochs(&TreeSpec::binary(4, false), &McConfig::new(1, 1)).is_err());
    }

    /// Expected cover time of the 2×2 torus by iterating the absorbing chain
    /// on (position, visited set).
    fn torus2_expected_cover() -> f64 {
        let moves = |p: usize| [p ^ 1, p ^ 1, p ^ 2, p ^ 2];
        let mut e = [[0.0f64; 16]; 4];
        for _ in 0..20_000 {
            let mut next = e;
            for mask in 1..15usize {
                for p in 0..4 {
                    if mask & (1 << p) == 0 {
                        continue;
                    }
                    let avg: f64 = moves(p).iter().map(|&q| e[q][mask | (1 << q)]).sum::<f64>() / 4.0;
                    next[p][mask] = 1.0 + avg;
                }
            }
            e = next;
        }
        e[0][1]
    }

    #[test]
    fn torus_side_two() {
        let exact = torus2_expected_cover();
        let reps = 100_000;
        let s = simulate_torus_cover(2, &McConfig::new(reps, 4)).unwrap().summary();
        assert!((s.mean - exact).abs() < 4.0 * s.std_error(), "{} vs {exact}", s.mean);
        assert!(simulate_torus_cover(1, &McConfig::new(1, 1)).is_err());
    }

    #[test]
    fn deterministic_across_workers() {
        let mut a = McConfig::new(16, 77);
        a.workers = 1;
        let mut b = a.clone();
        b.workers = 3;
        let t = TreeSpec::binary(4, true);
        assert_eq!(simulate_cover_time(&t, &a).unwrap(), simulate_cover_time(&t, &b).unwrap());
    }

    #[test]
    fn step_budget_enforced() {
        let mut cfg = McConfig::new(1, 1);
        cfg.step_budget = 10;
        assert!(matches!(simulate_cover_time(&TreeSpec::binary(6, false), &cfg), Err(Error::Resource(_))));
    }
}
