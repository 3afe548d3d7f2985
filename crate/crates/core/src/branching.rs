//! The offspring process associated with the graph model, simulated under a
//! size cap, and pool-based estimators of survival and small-tree
//! functionals.
//!
//! A particle of weight `w` spawns `Poisson(q * E[kernel(w, W)])` children
//! whose weights are iid with density proportional to `kernel(w, x)` against
//! the weight law. The root weight follows the weight law itself. For the
//! Pareto law both the mean split at `w` and the child-weight inverse CDF
//! have closed forms, used throughout; adaptive quadrature serves as the
//! independent oracle in tests.

use crate::graph::ComponentType;
use crate::model::ModelParams;
use crate::numeric::{integrate, wilson95};
use crate::rng::{substream, Stream};
use crate::{Error, Result};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One simulated family tree. `size` counts every particle ever alive.
/// `weights` holds all particle weights when the tree finished below the
/// storage cap; censored or over-cap trees carry `None` and contribute zero
/// to weight functionals (folded into reported truncation bias).
#[derive(Clone, Debug, PartialEq)]
pub struct ProgenySample {
    pub size: u32,
    /// Index of the last generation reached; the root is generation 0. For
    /// censored trees, the generation being filled when the cap was hit.
    pub generations: u32,
    pub censored: bool,
    pub weights: Option<Vec<f64>>,
}

/// Mean offspring intensity of a weight-`w` particle split at the parent
/// weight: `below = E[kernel(w, W); W < w]`, `above = E[kernel(w, W); W >= w]`,
/// both without the `q` factor. Closed forms for the Pareto law.
pub fn kernel_mass_split(alpha: f64, sigma: f64, w_min: f64, w: f64) -> (f64, f64) {
    debug_assert!(w >= w_min);
    let t = w / w_min;
    let below = if (sigma - alpha).abs() < 1e-12 {
        w * alpha * w_min.powf(sigma) * t.ln()
    } else {
        w * alpha * w_min.powf(sigma) * (t.powf(sigma - alpha) - 1.0) / (sigma - alpha)
    };
    let above = w.powf(sigma) * alpha * w_min * t.powf(1.0 - alpha) / (alpha - 1.0);
    (below, above)
}

/// `E[kernel(w, W)]` for the model's weight law.
pub fn mean_kernel(params: &ModelParams, w: f64) -> f64 {
    let (below, above) = kernel_mass_split(params.alpha, params.sigma, params.w_min, w);
    below + above
}

/// Draw one child weight of a weight-`w` parent by exact inversion of the
/// two mixture components (density proportional to `x^(sigma-alpha-1)` on
/// `[w_min, w)`, and to `x^(-alpha)` on `[w, inf)`).
fn sample_child(
    alpha: f64,
    sigma: f64,
    w_min: f64,
    w: f64,
    below: f64,
    above: f64,
    stream: &mut Stream,
) -> f64 {
    let pick = stream.next_unit() * (below + above);
    if pick < below {
        let v = stream.next_unit();
        let t = w / w_min;
        if (sigma - alpha).abs() < 1e-12 {
            w_min * t.powf(v)
        } else {
            let ta = t.powf(sigma - alpha);
            w_min * (1.0 + v * (ta - 1.0)).powf(1.0 / (sigma - alpha))
        }
    } else {
        w * stream.next_unit().powf(-1.0 / (alpha - 1.0))
    }
}

/// Simulate one tree, censoring once the running population exceeds
/// `size_cap`. When the offspring mean alone puts the chance of staying
/// within the cap below f64 resolution, the tree is censored without
/// drawing the (astronomically large) Poisson count.
pub fn sample_progeny(
    params: &ModelParams,
    size_cap: u32,
    weight_store_cap: u32,
    stream: &mut Stream,
) -> ProgenySample {
    assert!(size_cap >= 1, "size cap must be >= 1");
    let dist = params.weight_dist();
    let root = dist.sample(stream);
    let mut current = vec![root];
    let mut next: Vec<f64> = Vec::new();
    let mut log: Vec<f64> = Vec::new();
    let mut storing = weight_store_cap >= 1;
    if storing {
        log.push(root);
    }
    let mut total: u32 = 1;
    let mut generation: u32 = 0;
    let mut censored = false;
    'grow: while !current.is_empty() {
        for idx in 0..current.len() {
            let w = current[idx];
            let (below, above) = kernel_mass_split(params.alpha, params.sigma, params.w_min, w);
            let mean = params.q * (below + above);
            debug_assert!(mean.is_finite() && mean > 0.0);
            // P(Poisson(mean) <= size_cap) < 2^-1074 here, so censoring
            // directly is exact at f64 resolution.
            if mean > 8.0 * (size_cap as f64 + 1.0) {
                censored = true;
                generation += 1;
                break 'grow;
            }
            let count = Poisson::new(mean).expect("positive finite mean").sample(stream) as u64;
            for _ in 0..count {
                total += 1;
                if total > size_cap {
                    censored = true;
                    generation += 1;
                    break 'grow;
                }
                let child = sample_child(
                    params.alpha,
                    params.sigma,
                    params.w_min,
                    w,
                    below,
                    above,
                    stream,
                );
                next.push(child);
                if storing {
                    if (log.len() as u32) < weight_store_cap {
                        log.push(child);
                    } else {
                        storing = false;
                        log = Vec::new();
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        generation += 1;
        std::mem::swap(&mut current, &mut next);
        next.clear();
    }
    let weights = if !censored && storing { Some(log) } else { None };
    ProgenySample { size: total, generations: generation, censored, weights }
}

/// A frozen pool of iid tree samples plus caches for fast functional
/// evaluation (per-particle `w^sigma`, size histogram).
#[derive(Clone, Debug)]
pub struct TreePool {
    pub params: ModelParams,
    pub size_cap: u32,
    pub weight_store_cap: u32,
    pub seed: u64,
    pub samples: Vec<ProgenySample>,
    censored: usize,
    /// (size, count) over uncensored samples, ascending size.
    size_counts: Vec<(u32, u32)>,
    /// Flat `w^sigma` of stored samples; sample i owns
    /// `flat[offsets[i]..offsets[i+1]]` (empty when not stored).
    pow_sigma_flat: Vec<f64>,
    offsets: Vec<u32>,
}

impl TreePool {
    pub fn new(
        params: ModelParams,
        size_cap: u32,
        weight_store_cap: u32,
        seed: u64,
        samples: Vec<ProgenySample>,
    ) -> TreePool {
        let censored = samples.iter().filter(|s| s.censored).count();
        let mut hist = std::collections::BTreeMap::new();
        for s in &samples {
            if !s.censored {
                *hist.entry(s.size).or_insert(0u32) += 1;
            }
        }
        let mut offsets = Vec::with_capacity(samples.len() + 1);
        offsets.push(0u32);
        let total: usize = samples.iter().filter_map(|s| s.weights.as_ref().map(Vec::len)).sum();
        let mut flat = Vec::with_capacity(total);
        for s in &samples {
            if let Some(ws) = &s.weights {
                flat.extend(ws.iter().map(|w| w.powf(params.sigma)));
            }
            offsets.push(flat.len() as u32);
        }
        TreePool {
            params,
            size_cap,
            weight_store_cap,
            seed,
            samples,
            censored,
            size_counts: hist.into_iter().collect(),
            pow_sigma_flat: flat,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn censored_count(&self) -> usize {
        self.censored
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.len() as f64
    }

    /// `w^sigma` of sample `i`'s particles; empty when weights were not
    /// stored (censored or above the storage cap).
    #[inline]
    pub(crate) fn pow_sigma(&self, i: usize) -> &[f64] {
        &self.pow_sigma_flat[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn size_counts(&self) -> &[(u32, u32)] {
        &self.size_counts
    }
}

/// Build a pool of `m` iid trees. Sample `i` draws from the `i`-th child
/// stream of `seed`, so the pool is independent of the parallel schedule.
pub fn build_pool(
    params: &ModelParams,
    m: usize,
    size_cap: u32,
    weight_store_cap: u32,
    seed: u64,
) -> Result<TreePool> {
    if m == 0 {
        return Err(Error::domain("pool size m must be >= 1"));
    }
    let samples: Vec<ProgenySample> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut s = Stream::new(substream(seed, i as u64));
            sample_progeny(params, size_cap, weight_store_cap, &mut s)
        })
        .collect();
    Ok(TreePool::new(*params, size_cap, weight_store_cap, seed, samples))
}

/// Survival estimate: the censored fraction, its 95% confidence interval,
/// and a cap-sensitivity bracket (fraction censored, fraction above half
/// the cap).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThetaEstimate {
    pub theta_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub censored_fraction: f64,
    /// Fraction of trees exceeding half the size cap (censored included);
    /// the gap to `censored_fraction` measures cap sensitivity.
    pub half_cap_fraction: f64,
}

pub fn estimate_theta(pool: &TreePool) -> ThetaEstimate {
    assert!(!pool.is_empty(), "survival estimation needs a nonempty pool");
    let m = pool.len();
    let c = pool.censored_count();
    let (ci_lo, ci_hi) = wilson95(c, m);
    let half = pool
        .samples
        .iter()
        .filter(|s| s.censored || s.size > pool.size_cap / 2)
        .count();
    ThetaEstimate {
        theta_hat: c as f64 / m as f64,
        ci_lo,
        ci_hi,
        censored_fraction: c as f64 / m as f64,
        half_cap_fraction: half as f64 / m as f64,
    }
}

/// Survival probability for the rank-one case (`sigma = 1`), where the
/// kernel factorizes and survival solves a scalar fixed point: `c` is the
/// largest root of `c = E[W (1 - exp(-q c W))]`, approached monotonically
/// from `c_0 = E[W]`, and `theta = 1 - E[exp(-q c W)]`.
pub fn theta_rank_one_oracle(params: &ModelParams) -> Result<f64> {
    if (params.sigma - 1.0).abs() > 1e-12 {
        return Err(Error::domain(
            "rank-one survival oracle requires sigma = 1",
        ));
    }
    let dist = params.weight_dist();
    let q = params.q;
    // E[g(W)] via the tail-variate substitution W = w_min * u^(-1/alpha);
    // the lower cutoff contributes at most eps^(1-1/alpha) in E[W] terms.
    let eps = 1e-13;
    let expect = |g: &dyn Fn(f64) -> f64| {
        integrate(
            |u| g(dist.w_min * u.powf(-1.0 / dist.alpha)),
            eps,
            1.0,
            1e-12,
        )
    };
    let mut c = dist.mean();
    for _ in 0..2000 {
        let next = expect(&|w| w * (1.0 - (-q * c * w).exp()));
        let done = (next - c).abs() < 1e-14;
        c = next;
        if done {
            break;
        }
    }
    Ok(1.0 - expect(&|w| (-q * c * w).exp()))
}

/// Moment-functional estimate with its truncation-bias bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub truncation_bias: f64,
}

/// `E[z^(|T| * h)] ` over the pool, censored trees contributing 0. With
/// `z = 1 - q` and exponent `h` this is the hub-count functional; with
/// `h = 1` it is the generating function at `z`.
pub fn estimate_h(pool: &TreePool, z: f64, h_exponent: f64) -> Result<FunctionalEstimate> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::domain(format!("z must lie in [0, 1] (got {z})")));
    }
    if !(h_exponent >= 0.0) {
        return Err(Error::domain(format!(
            "exponent must be >= 0 (got {h_exponent})"
        )));
    }
    let m = pool.len() as f64;
    let mut acc = 0.0;
    for &(size, count) in pool.size_counts() {
        acc += count as f64 * z.powf(size as f64 * h_exponent);
    }
    let bias = pool.censored_fraction() * z.powf(pool.size_cap as f64 * h_exponent);
    Ok(FunctionalEstimate { value: acc / m, truncation_bias: bias })
}

/// Probability that the tree realizes a given small-component type:
/// fraction of pool trees with `|T| = ell` whose weight multiset falls in
/// the type's buckets (trees touching weight >= r never match).
pub fn estimate_type_prob(pool: &TreePool, ty: &ComponentType) -> Result<f64> {
    let w_min = pool.params.w_min;
    let mut hits = 0usize;
    for s in &pool.samples {
        if s.censored || s.size != ty.ell {
            continue;
        }
        if let Some(ws) = &s.weights {
            if let Some(t) = crate::graph::classify_component(ws, w_min, ty.eps, ty.r)? {
                if t == *ty {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / pool.len() as f64)
}

/// Distribution over small-component types of trees with size <= ell_max,
/// as pool fractions.
pub fn pool_type_distribution(
    pool: &TreePool,
    eps: f64,
    r: f64,
    ell_max: u32,
) -> Result<std::collections::BTreeMap<ComponentType, f64>> {
    let w_min = pool.params.w_min;
    let mut counts: std::collections::BTreeMap<ComponentType, usize> = Default::default();
    for s in &pool.samples {
        if s.censored || s.size > ell_max {
            continue;
        }
        if let Some(ws) = &s.weights {
            if let Some(t) = crate::graph::classify_component(ws, w_min, eps, r)? {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
    }
    let m = pool.len() as f64;
    Ok(counts.into_iter().map(|(t, c)| (t, c as f64 / m)).collect())
}

/// Product over tree particles and hub entries of the no-connection factor
/// `1 - q * min(y_i * w^sigma, 1)`. Empty `y` gives 1.
pub fn pbar(tree_weights: &[f64], y: &[f64], params: &ModelParams) -> f64 {
    let q = params.q;
    let mut p = 1.0;
    for &w in tree_weights {
        let ws = w.powf(params.sigma);
        for &yi in y {
            p *= 1.0 - q * (yi * ws).min(1.0);
        }
    }
    p
}

/// Pool mean of [`pbar`] against an override connection probability; the
/// workhorse behind membership tests. Censored and unstored trees
/// contribute 0.
pub(crate) fn no_connection_value_with_q(pool: &TreePool, y: &[f64], q: f64) -> f64 {
    let m = pool.len();
    let mut acc = 0.0;
    for i in 0..m {
        let ws = pool.pow_sigma(i);
        if ws.is_empty() {
            continue;
        }
        let mut p = 1.0;
        for &wsig in ws {
            for &yi in y {
                p *= 1.0 - q * (yi * wsig).min(1.0);
            }
        }
        acc += p;
    }
    acc / m as f64
}

/// No-connection estimate with truncation-bias bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NoConnectionEstimate {
    pub value: f64,
    pub truncation_bias: f64,
}

/// `E[prod over particles and hub entries of (1 - q min(y_i w^sigma, 1))]`,
/// censored and unstored trees contributing 0. The bias bound uses the
/// per-particle factor bound at `w_min` (valid for sigma >= 0; trivial
/// bound 1 otherwise).
pub fn estimate_no_connection(pool: &TreePool, y: &[f64]) -> Result<NoConnectionEstimate> {
    for &yi in y {
        if !(yi > 0.0) || !yi.is_finite() {
            return Err(Error::domain(format!("hub entries must be positive (got {yi})")));
        }
    }
    let q = pool.params.q;
    let value = no_connection_value_with_q(pool, y, q);
    let missing = pool
        .samples
        .iter()
        .filter(|s| s.censored || s.weights.is_none())
        .count() as f64
        / pool.len() as f64;
    let per_particle: f64 = if pool.params.sigma >= 0.0 {
        let wsig = pool.params.w_min.powf(pool.params.sigma);
        y.iter().map(|&yi| 1.0 - q * (yi * wsig).min(1.0)).product()
    } else {
        1.0
    };
    let bias = missing * per_particle.powf(pool.size_cap as f64);
    Ok(NoConnectionEstimate { value, truncation_bias: bias })
}

/// `(1/ell) * E[ 1{|T| = ell} * pbar(y) ]` over the pool: the predicted
/// density of size-`ell` components per vertex in the conditioned graph.
pub fn estimate_g_ell(pool: &TreePool, y: &[f64], ell: u32) -> Result<f64> {
    if ell == 0 {
        return Err(Error::domain("component size ell must be >= 1"));
    }
    let q = pool.params.q;
    let mut acc = 0.0;
    for i in 0..pool.len() {
        if pool.samples[i].censored || pool.samples[i].size != ell {
            continue;
        }
        let ws = pool.pow_sigma(i);
        if ws.is_empty() {
            continue;
        }
        let mut p = 1.0;
        for &wsig in ws {
            for &yi in y {
                p *= 1.0 - q * (yi * wsig).min(1.0);
            }
        }
        acc += p;
    }
    Ok(acc / (ell as f64 * pool.len() as f64))
}

// ---------------------------------------------------------------------------
// Pool files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PoolHeader {
    schema: String,
    alpha: f64,
    sigma: f64,
    q: f64,
    w_min: f64,
    m: usize,
    size_cap: u32,
    weight_store_cap: u32,
    seed: u64,
}

/// Write a pool: JSON header line, then one record per sample
/// (`c size generations` censored, `d size generations` weights dropped,
/// `size generations w1 w2 ...` stored).
pub fn write_pool(pool: &TreePool, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let header = PoolHeader {
        schema: "tree-pool/1".into(),
        alpha: pool.params.alpha,
        sigma: pool.params.sigma,
        q: pool.params.q,
        w_min: pool.params.w_min,
        m: pool.len(),
        size_cap: pool.size_cap,
        weight_store_cap: pool.weight_store_cap,
        seed: pool.seed,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for s in &pool.samples {
        if s.censored {
            writeln!(out, "c {} {}", s.size, s.generations)?;
        } else if let Some(ws) = &s.weights {
            write!(out, "{} {}", s.size, s.generations)?;
            for w in ws {
                write!(out, " {w}")?;
            }
            writeln!(out)?;
        } else {
            writeln!(out, "d {} {}", s.size, s.generations)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pool(path: &Path) -> Result<TreePool> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty pool file".into()))??;
    let h: PoolHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Format(format!("bad pool header: {e}")))?;
    if h.schema != "tree-pool/1" {
        return Err(Error::Format(format!("unsupported pool schema: {}", h.schema)));
    }
    let params = ModelParams::new(h.alpha, h.sigma, h.q, h.w_min)?;
    let mut samples = Vec::with_capacity(h.m);
    for _ in 0..h.m {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("truncated pool file".into()))??;
        let mut it = line.split_whitespace();
        let first = it
            .next()
            .ok_or_else(|| Error::Format("empty pool record".into()))?;
        let (censored, dropped, size_tok) = match first {
            "c" => (true, false, None),
            "d" => (false, true, None),
            tok => (false, false, Some(tok)),
        };
        let size: u32 = size_tok
            .map(Ok)
            .unwrap_or_else(|| {
                it.next()
                    .ok_or_else(|| Error::Format(format!("bad pool record: {line}")))
            })?
            .parse()
            .map_err(|_| Error::Format(format!("bad size in: {line}")))?;
        let generations: u32 = it
            .next()
            .ok_or_else(|| Error::Format(format!("bad pool record: {line}")))?
            .parse()
            .map_err(|_| Error::Format(format!("bad generations in: {line}")))?;
        let weights = if censored || dropped {
            None
        } else {
            let ws: std::result::Result<Vec<f64>, _> = it.map(str::parse).collect();
            let ws = ws.map_err(|_| Error::Format(format!("bad weight in: {line}")))?;
            if ws.len() as u32 != size {
                return Err(Error::Format(format!(
                    "stored weights ({}) disagree with size ({size})",
                    ws.len()
                )));
            }
            Some(ws)
        };
        if size == 0 {
            return Err(Error::Format("tree size must be >= 1".into()));
        }
        samples.push(ProgenySample { size, generations, censored, weights });
    }
    Ok(TreePool::new(params, h.size_cap, h.weight_store_cap, h.seed, samples))
}
