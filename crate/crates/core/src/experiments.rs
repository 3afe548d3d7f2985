//! End-to-end validation harness: law-of-large-numbers runs, planted-hub
//! replication experiments, conditional-law experiments against the
//! constant curve, coupled-approximation checks, and an exact small-graph
//! oracle for ground truth.
//!
//! Every run is a pure function of (config, master seed): replication `r`
//! draws from child `r` of a dedicated replication parent stream, with the
//! hub-vector, weight, and edge randomness on separate grandchildren, so
//! results are independent of the worker count and of sibling operations.

use crate::branching::{estimate_g_ell, estimate_theta, pool_type_distribution, TreePool};
use crate::graph::{
    components, count_types, generate_coupled, generate_from_weights, plant_top_slots,
    ComponentStats, ComponentType, Graph,
};
use crate::ldp::{c_curve, hubs, phi_threshold, plateau_end, y_membership, HubWeights};
use crate::model::{edge_probability, ModelParams};
use crate::rng::{substream, Stream};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Child tag of the master seed owning all replication streams.
const TAG_REPS: u64 = 0;
/// Child tag of the master seed owning the constant-curve draws.
const TAG_CURVE: u64 = 1;
/// Grandchild tags inside one replication; one consumer per stream.
const REP_TAG_Y: u64 = 101;
const REP_TAG_WEIGHTS: u64 = 102;
const REP_TAG_GRAPH: u64 = 103;
/// Attempt cap for rejection sampling of hub vectors.
const REJECTION_CAP: usize = 10_000;

/// Shared settings for the replication experiments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub n: usize,
    pub replications: usize,
    /// Giant-fraction level defining success `largest > rho * n`.
    pub rho: f64,
    /// Slack for sampling hub vectors in the enlarged target set.
    pub margin: f64,
    pub seed: u64,
    /// Weight-bucket width for component types.
    pub eps: f64,
    /// Weight truncation bound for component types.
    pub r: f64,
    /// Largest component size tracked per record.
    pub ell_max: u32,
    /// Number of s-grid points for the conditional survival comparison.
    pub grid_points: usize,
    /// Importance-sampling draws behind the constant curve.
    pub draws: usize,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("n must be >= 1"));
        }
        if self.replications == 0 {
            return Err(Error::domain("replications must be >= 1"));
        }
        if !self.rho.is_finite() || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::domain(format!("rho must lie in [0, 1) (got {})", self.rho)));
        }
        Ok(())
    }

    /// The sampling slack must keep `rho + margin` strictly inside
    /// `(theta_hat, 1)`.
    fn validate_margin(&self, theta_hat: f64) -> Result<()> {
        let limit = (self.rho - theta_hat).min(1.0 - self.rho);
        if !(self.margin > 0.0 && self.margin < limit) {
            return Err(Error::domain(format!(
                "margin must lie in (0, min(rho - theta_hat, 1 - rho)) = (0, {limit}) (got {})",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Observables of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub seed: u64,
    pub giant_fraction: f64,
    /// (component size, number of components) for sizes <= ell_max.
    pub size_counts: Vec<(u32, u32)>,
    /// Planted hub weights in units of n, descending.
    pub planted: Vec<f64>,
    /// Pool prediction of the per-size component density given the planted
    /// hubs: (size, predicted count / n). Filled by conditional runs.
    pub g_hat: Vec<(u32, f64)>,
    /// Largest component exceeded rho * n.
    pub success: bool,
}

fn rep_seed_of(master: u64, rep: usize) -> u64 {
    substream(substream(master, TAG_REPS), rep as u64)
}

/// Simulate one replication: iid natural weights, every weight at or above
/// `phi * n` resampled conditioned below it (so weight-Theta(n) vertices
/// are exactly the planted ones), hub values `y * n` planted into the top
/// slots, edges drawn at scale n.
fn simulate_rep(
    params: &ModelParams,
    n: usize,
    rep_seed: u64,
    y: &[f64],
    phi: Option<f64>,
) -> Result<ComponentStats> {
    let dist = params.weight_dist();
    let mut wstream = Stream::new(substream(rep_seed, REP_TAG_WEIGHTS));
    let mut weights: Vec<f64> = (0..n).map(|_| dist.sample(&mut wstream)).collect();
    if let Some(phi) = phi {
        let bound = phi * n as f64;
        if bound <= params.w_min {
            return Err(Error::domain(format!(
                "conditioning floor {bound} is not above w_min; n too small for this phi"
            )));
        }
        for w in weights.iter_mut() {
            if *w >= bound {
                *w = dist.sample_below(bound, &mut wstream);
            }
        }
    }
    let hub_values: Vec<f64> = y.iter().map(|v| v * n as f64).collect();
    plant_top_slots(&mut weights, &hub_values);
    let g = generate_from_weights(params, weights, n, substream(rep_seed, REP_TAG_GRAPH))?;
    Ok(components(&g))
}

fn record_from_stats(
    rep: usize,
    rep_seed: u64,
    stats: &ComponentStats,
    y: &[f64],
    cfg: &ExperimentConfig,
) -> RunRecord {
    let size_counts: Vec<(u32, u32)> = stats
        .count_by_size
        .range(..=cfg.ell_max)
        .map(|(&s, &c)| (s, c))
        .collect();
    RunRecord {
        rep,
        seed: rep_seed,
        giant_fraction: stats.largest_size as f64 / cfg.n as f64,
        size_counts,
        planted: y.to_vec(),
        g_hat: Vec::new(),
        success: stats.largest_size as f64 > cfg.rho * cfg.n as f64,
    }
}

// ---------------------------------------------------------------------------
// Law-of-large-numbers runs
// ---------------------------------------------------------------------------

/// Per-size agreement between the graphs and the pool.
#[derive(Clone, Debug, Serialize)]
pub struct PerSizeComparison {
    pub ell: u32,
    /// Pool estimate of the probability a tree has exactly this size.
    pub pool_prob: f64,
    /// Mean over replications of the fraction of vertices living in
    /// components of this size.
    pub mean_vertex_fraction: f64,
    pub mean_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnReport {
    pub theta_hat: f64,
    /// Mean over replications of |giant fraction - theta_hat|.
    pub mean_abs_giant_error: f64,
    pub per_size: Vec<PerSizeComparison>,
    pub records: Vec<RunRecord>,
}

fn require_matching_pool(pool: &TreePool, params: &ModelParams) -> Result<()> {
    if pool.params != *params {
        return Err(Error::domain(
            "pool parameters differ from the experiment parameters",
        ));
    }
    Ok(())
}

/// Generate `replications` natural graphs and compare the giant fraction
/// and the per-size vertex fractions to the pool estimates.
pub fn run_lln(pool: &TreePool, cfg: &ExperimentConfig) -> Result<LlnReport> {
    cfg.validate()?;
    require_matching_pool(pool, &cfg.params)?;
    let theta = estimate_theta(pool);
    let per_rep: Vec<Result<(RunRecord, Vec<f64>)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = rep_seed_of(cfg.seed, rep);
            let stats = simulate_rep(&cfg.params, cfg.n, rep_seed, &[], None)?;
            let fractions: Vec<f64> = (1..=cfg.ell_max)
                .map(|l| {
                    stats.vertices_by_size.get(&l).copied().unwrap_or(0) as f64 / cfg.n as f64
                })
                .collect();
            Ok((record_from_stats(rep, rep_seed, &stats, &[], cfg), fractions))
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.replications);
    let mut fracs = Vec::with_capacity(cfg.replications);
    for r in per_rep {
        let (rec, f) = r?;
        records.push(rec);
        fracs.push(f);
    }
    let m = pool.len() as f64;
    let reps = cfg.replications as f64;
    let per_size = (1..=cfg.ell_max)
        .map(|l| {
            let pool_prob = pool
                .size_counts()
                .iter()
                .find(|(s, _)| *s == l)
                .map(|(_, c)| *c as f64 / m)
                .unwrap_or(0.0);
            let idx = (l - 1) as usize;
            let mean_vertex_fraction = fracs.iter().map(|f| f[idx]).sum::<f64>() / reps;
            let mean_abs_error =
                fracs.iter().map(|f| (f[idx] - pool_prob).abs()).sum::<f64>() / reps;
            PerSizeComparison { ell: l, pool_prob, mean_vertex_fraction, mean_abs_error }
        })
        .collect();
    let mean_abs_giant_error = records
        .iter()
        .map(|r| (r.giant_fraction - theta.theta_hat).abs())
        .sum::<f64>()
        / reps;
    Ok(LlnReport { theta_hat: theta.theta_hat, mean_abs_giant_error, per_size, records })
}

// ---------------------------------------------------------------------------
// Planted-hub runs
// ---------------------------------------------------------------------------

/// How the hub vector of each replication is chosen.
#[derive(Clone, Debug)]
pub enum YMode {
    /// Rejection-sample from the Pareto proposal above the hub floor until
    /// the vector is a member of the target set at level `rho + margin`.
    SampleInTarget,
    /// Fixed hub vector with an explicit conditioning floor
    /// (`phi <= min y_i`), shared by all replications.
    Explicit { y: HubWeights, phi: f64 },
    /// No hubs: the natural graph.
    None,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlantReport {
    pub h: u32,
    /// Conditioning floor actually used (absent for natural graphs).
    pub phi: Option<f64>,
    pub success_fraction: f64,
    /// Mean rejection attempts per replication (1 when not sampling).
    pub mean_attempts: f64,
    pub records: Vec<RunRecord>,
}

fn sample_hub_vector(
    pool: &TreePool,
    target: f64,
    h: u32,
    phi: f64,
    y_seed: u64,
) -> Result<(HubWeights, usize)> {
    let alpha = pool.params.alpha;
    let mut stream = Stream::new(y_seed);
    for attempt in 1..=REJECTION_CAP {
        let y: Vec<f64> = (0..h).map(|_| phi * stream.next_unit().powf(-1.0 / alpha)).collect();
        let hw = HubWeights::new(y)?;
        if y_membership(&hw, target, pool)? {
            return Ok((hw, attempt));
        }
    }
    Err(Error::Estimation(format!(
        "no member of the level-{target} target set in {REJECTION_CAP} proposal draws; \
         the margin is too aggressive for this pool"
    )))
}

/// Plant `h` hubs per replication and record how often the largest
/// component exceeds `rho * n`.
pub fn run_planted_hubs(
    pool: &TreePool,
    cfg: &ExperimentConfig,
    h: u32,
    y_mode: &YMode,
) -> Result<PlantReport> {
    cfg.validate()?;
    require_matching_pool(pool, &cfg.params)?;
    let phi = match y_mode {
        YMode::None => {
            if h != 0 {
                return Err(Error::domain("y mode `none` plants no hubs; h must be 0"));
            }
            None
        }
        YMode::Explicit { y, phi } => {
            if y.h() as u32 != h || h == 0 {
                return Err(Error::domain(format!(
                    "explicit mode needs a non-empty hub vector of length h (h={h}, len={})",
                    y.h()
                )));
            }
            let min_y = *y.as_slice().last().expect("non-empty");
            if !(phi.is_finite() && *phi > 0.0 && *phi <= min_y) {
                return Err(Error::domain(format!(
                    "conditioning floor must lie in (0, min y] = (0, {min_y}] (got {phi})"
                )));
            }
            Some(*phi)
        }
        YMode::SampleInTarget => {
            if h == 0 {
                return Err(Error::domain("sampling mode needs h >= 1"));
            }
            let theta = estimate_theta(pool);
            cfg.validate_margin(theta.theta_hat)?;
            Some(phi_threshold(cfg.rho + cfg.margin, cfg.params.q, h, pool)?)
        }
    };
    let per_rep: Vec<Result<(RunRecord, usize)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = rep_seed_of(cfg.seed, rep);
            let (y, attempts) = match y_mode {
                YMode::None => (Vec::new(), 1),
                YMode::Explicit { y, .. } => (y.as_slice().to_vec(), 1),
                YMode::SampleInTarget => {
                    let (hw, attempts) = sample_hub_vector(
                        pool,
                        cfg.rho + cfg.margin,
                        h,
                        phi.expect("sampling mode sets phi"),
                        substream(rep_seed, REP_TAG_Y),
                    )?;
                    (hw.as_slice().to_vec(), attempts)
                }
            };
            let stats = simulate_rep(&cfg.params, cfg.n, rep_seed, &y, phi)?;
            Ok((record_from_stats(rep, rep_seed, &stats, &y, cfg), attempts))
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.replications);
    let mut attempts_total = 0usize;
    for r in per_rep {
        let (rec, attempts) = r?;
        records.push(rec);
        attempts_total += attempts;
    }
    let reps = cfg.replications as f64;
    let success_fraction = records.iter().filter(|r| r.success).count() as f64 / reps;
    Ok(PlantReport {
        h,
        phi,
        success_fraction,
        mean_attempts: attempts_total as f64 / reps,
        records,
    })
}

// ---------------------------------------------------------------------------
// Conditional-law runs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub s: f64,
    /// Fraction of replications with giant fraction above `s`.
    pub empirical_survival: f64,
    /// Constant-curve ratio C_s / C_rho on shared draws.
    pub predicted_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionalReport {
    pub h: u32,
    pub phi: f64,
    /// End of the current hub-count plateau: the prediction's support end.
    pub s_end: f64,
    /// Sup over the grid of |empirical survival - predicted ratio|.
    pub ks_distance: f64,
    /// Fraction of replications with giant fraction >= rho - 0.02.
    pub support_fraction: f64,
    /// Fraction of replications whose per-size component densities all sit
    /// within 0.01 of the pool prediction for sizes <= min(5, ell_max).
    pub size_density_agreement_fraction: f64,
    pub grid: Vec<SurvivalPoint>,
    pub records: Vec<RunRecord>,
}

/// Plant hub vectors conditioned on membership of the level-`rho` target
/// set, then compare the realized giant-fraction law against the constant
/// curve and the per-size component densities against the pool.
pub fn run_conditional(pool: &TreePool, cfg: &ExperimentConfig) -> Result<ConditionalReport> {
    cfg.validate()?;
    require_matching_pool(pool, &cfg.params)?;
    if cfg.grid_points < 2 {
        return Err(Error::domain("need at least 2 grid points"));
    }
    if cfg.draws == 0 {
        return Err(Error::domain("need at least one constant-curve draw"));
    }
    let q = cfg.params.q;
    let hr = hubs(cfg.rho, q, pool)?;
    if hr.ceil == 0 {
        return Err(Error::domain(
            "conditional runs need rho above the survival threshold (hub count >= 1)",
        ));
    }
    let h = hr.ceil;
    let phi = phi_threshold(cfg.rho, q, h, pool)?;
    let s_end = plateau_end(pool, q, h)?;
    let s_top = s_end.min(1.0 - 1e-9);
    let step = (s_top - cfg.rho) / cfg.grid_points as f64;
    let grid_s: Vec<f64> = (0..cfg.grid_points).map(|j| cfg.rho + j as f64 * step).collect();
    let curve = c_curve(&grid_s, q, pool, phi, h, cfg.draws, substream(cfg.seed, TAG_CURVE))?;
    let c_rho = curve[0].c_hat;

    let ell_cap = cfg.ell_max.min(5);
    let per_rep: Vec<Result<RunRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = rep_seed_of(cfg.seed, rep);
            let (hw, _) =
                sample_hub_vector(pool, cfg.rho, h, phi, substream(rep_seed, REP_TAG_Y))?;
            let y = hw.as_slice().to_vec();
            let stats = simulate_rep(&cfg.params, cfg.n, rep_seed, &y, Some(phi))?;
            let mut rec = record_from_stats(rep, rep_seed, &stats, &y, cfg);
            rec.g_hat = (1..=ell_cap)
                .map(|l| Ok((l, estimate_g_ell(pool, &y, l)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(rec)
        })
        .collect();
    let records = per_rep.into_iter().collect::<Result<Vec<_>>>()?;

    let reps = cfg.replications as f64;
    let grid: Vec<SurvivalPoint> = grid_s
        .iter()
        .zip(curve.iter())
        .map(|(&s, est)| {
            let empirical_survival =
                records.iter().filter(|r| r.giant_fraction > s).count() as f64 / reps;
            let predicted_ratio = if c_rho > 0.0 { est.c_hat / c_rho } else { f64::NAN };
            SurvivalPoint { s, empirical_survival, predicted_ratio }
        })
        .collect();
    let ks_distance = grid
        .iter()
        .map(|p| (p.empirical_survival - p.predicted_ratio).abs())
        .fold(0.0, f64::max);
    let support_fraction =
        records.iter().filter(|r| r.giant_fraction >= cfg.rho - 0.02).count() as f64 / reps;
    let size_density_agreement_fraction = records
        .iter()
        .filter(|r| {
            r.g_hat.iter().all(|&(l, g)| {
                let count =
                    r.size_counts.iter().find(|(s, _)| *s == l).map(|(_, c)| *c).unwrap_or(0);
                (count as f64 / cfg.n as f64 - g).abs() <= 0.01
            })
        })
        .count() as f64
        / reps;
    Ok(ConditionalReport {
        h,
        phi,
        s_end,
        ks_distance,
        support_fraction,
        size_density_agreement_fraction,
        grid,
        records,
    })
}

// ---------------------------------------------------------------------------
// Coupling checks
// ---------------------------------------------------------------------------

/// Sum over small-component types of |ell * count / n - pool probability|:
/// the total deviation of the graph's type densities from the pool's tree
/// law, over the union of types seen on either side. Components containing
/// any weight >= r are outside the type space on both sides.
pub fn type_concentration_sum(
    g: &Graph,
    pool: &TreePool,
    eps: f64,
    r: f64,
    ell_max: u32,
) -> Result<f64> {
    let counts = count_types(g, pool.params.w_min, eps, r, ell_max)?;
    let reference = pool_type_distribution(pool, eps, r, ell_max)?;
    let n = g.n_model as f64;
    let mut keys: BTreeSet<&ComponentType> = counts.keys().collect();
    keys.extend(reference.keys());
    let mut sum = 0.0;
    for t in keys {
        let emp = counts.get(t).copied().unwrap_or(0) as f64 * t.ell as f64 / n;
        let pool_p = reference.get(t).copied().unwrap_or(0.0);
        sum += (emp - pool_p).abs();
    }
    Ok(sum)
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub replications: usize,
    /// Approximation edges missing from the reference graph (must be 0).
    pub subset_violations: usize,
    pub mean_edge_difference_per_n: f64,
    pub mean_giant_full: f64,
    pub mean_giant_approx: f64,
    pub mean_type_sum_full: f64,
    pub mean_type_sum_approx: f64,
    pub regularity_fraction: f64,
    pub quota_fraction: f64,
}

/// Generate coupled graph pairs and verify the approximation is a subgraph
/// of the reference; report edge and type-density gaps.
pub fn run_coupling_check(
    params: &ModelParams,
    n: usize,
    delta: f64,
    r: f64,
    replications: usize,
    seed: u64,
    eps: f64,
    ell_max: u32,
    pool: &TreePool,
) -> Result<CouplingReport> {
    if replications == 0 {
        return Err(Error::domain("replications must be >= 1"));
    }
    require_matching_pool(pool, params)?;
    let ratio = eps / delta;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "eps must be an integer multiple of delta (eps/delta = {ratio})"
        )));
    }
    let per_rep: Vec<Result<(usize, f64, f64, f64, f64, f64, bool, bool)>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let pair = generate_coupled(params, n, substream(seed, rep as u64), delta, r)?;
            let full_edges: BTreeSet<(u32, u32)> = pair.full.edges.iter().copied().collect();
            let violations = pair
                .approx
                .edges
                .iter()
                .filter(|&&(a, b)| {
                    let u = pair.approx_to_full[a as usize];
                    let v = pair.approx_to_full[b as usize];
                    !full_edges.contains(&(u.min(v), u.max(v)))
                })
                .count();
            let edge_diff =
                (pair.full.edges.len() as f64 - pair.approx.edges.len() as f64) / n as f64;
            let giant_full = components(&pair.full).largest_size as f64 / n as f64;
            let giant_approx = components(&pair.approx).largest_size as f64 / n as f64;
            let ts_full = type_concentration_sum(&pair.full, pool, eps, r, ell_max)?;
            let ts_approx = type_concentration_sum(&pair.approx, pool, eps, r, ell_max)?;
            Ok((
                violations,
                edge_diff,
                giant_full,
                giant_approx,
                ts_full,
                ts_approx,
                pair.regularity,
                pair.quota_met,
            ))
        })
        .collect();
    let rows = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let m = replications as f64;
    Ok(CouplingReport {
        replications,
        subset_violations: rows.iter().map(|r| r.0).sum(),
        mean_edge_difference_per_n: rows.iter().map(|r| r.1).sum::<f64>() / m,
        mean_giant_full: rows.iter().map(|r| r.2).sum::<f64>() / m,
        mean_giant_approx: rows.iter().map(|r| r.3).sum::<f64>() / m,
        mean_type_sum_full: rows.iter().map(|r| r.4).sum::<f64>() / m,
        mean_type_sum_approx: rows.iter().map(|r| r.5).sum::<f64>() / m,
        regularity_fraction: rows.iter().filter(|r| r.6).count() as f64 / m,
        quota_fraction: rows.iter().filter(|r| r.7).count() as f64 / m,
    })
}

// ---------------------------------------------------------------------------
// Exact small-graph oracle
// ---------------------------------------------------------------------------

/// Exact law of the largest-component size on a fixed tiny weight vector,
/// by enumerating all edge subsets. Entry `k` is the probability the
/// largest component has size `k + 1`. Edge probabilities use the scale
/// `n_model`, which may differ from the vertex count.
pub fn exact_small_oracle(
    weights: &[f64],
    params: &ModelParams,
    n_model: usize,
) -> Result<Vec<f64>> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::domain("need at least one vertex"));
    }
    if n > 6 {
        return Err(Error::domain(format!(
            "exact enumeration is limited to n <= 6 vertices (got {n})"
        )));
    }
    for &w in weights {
        if !w.is_finite() || w < params.w_min {
            return Err(Error::domain(format!(
                "vertex weight {w} below w_min {}",
                params.w_min
            )));
        }
    }
    let mut pairs = Vec::new();
    for j in 1..n {
        for i in 0..j {
            pairs.push((i, j, edge_probability(weights[i], weights[j], params, n_model)));
        }
    }
    let mut law = vec![0.0f64; n];
    for mask in 0u32..(1u32 << pairs.len()) {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        let mut prob = 1.0;
        for (b, &(i, j, p)) in pairs.iter().enumerate() {
            if mask & (1 << b) != 0 {
                prob *= p;
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            } else {
                prob *= 1.0 - p;
            }
        }
        if prob == 0.0 {
            continue;
        }
        let mut size = vec![0u32; n];
        for v in 0..n {
            size[find(&mut parent, v)] += 1;
        }
        let largest = *size.iter().max().expect("non-empty") as usize;
        law[largest - 1] += prob;
    }
    Ok(law)
}

/// Direct Monte Carlo of the upper-tail probability. Refused when the
/// predicted scale `(n * tail(n))^ceil(hubs)` is below 1e-6: at such sizes
/// the event is unobservable by naive sampling and the planted/conditional
/// harness is the supported route.
pub fn naive_tail_mc(
    params: &ModelParams,
    n: usize,
    rho: f64,
    replications: usize,
    seed: u64,
    pool: &TreePool,
) -> Result<f64> {
    if n == 0 || replications == 0 {
        return Err(Error::domain("n and replications must be >= 1"));
    }
    require_matching_pool(pool, params)?;
    let hr = hubs(rho, params.q, pool)?;
    let scale = (n as f64 * params.weight_dist().tail(n as f64)).powi(hr.ceil as i32);
    if hr.ceil >= 1 && scale < 1e-6 {
        return Err(Error::domain(format!(
            "predicted tail scale {scale:.3e} is below 1e-6: naive Monte Carlo cannot \
             resolve this event; use the planted or conditional experiments"
        )));
    }
    let successes: usize = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = rep_seed_of(seed, rep);
            let stats = simulate_rep(params, n, rep_seed, &[], None)?;
            Ok(usize::from(stats.largest_size as f64 > rho * n as f64))
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    Ok(successes as f64 / replications as f64)
}

// ---------------------------------------------------------------------------
// Run store
// ---------------------------------------------------------------------------

/// Append records to a JSONL store, one JSON object per line.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Format(format!("encode: {e}")))?,
        );
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("record: {e}")))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::build_pool;
    use std::sync::OnceLock;

    fn cfg(params: ModelParams, n: usize, reps: usize, rho: f64, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            params,
            n,
            replications: reps,
            rho,
            margin: 0.05,
            seed,
            eps: 0.5,
            r: 4.0,
            ell_max: 5,
            grid_points: 8,
            draws: 4_000,
        }
    }

    fn shared_pool() -> &'static TreePool {
        static POOL: OnceLock<TreePool> = OnceLock::new();
        POOL.get_or_init(|| {
            let p = ModelParams::new(2.5, 1.0, 0.5, 1.0).unwrap();
            build_pool(&p, 20_000, 2_000, 2_000, 404).unwrap()
        })
    }

    fn supercritical_pool() -> &'static TreePool {
        static POOL: OnceLock<TreePool> = OnceLock::new();
        POOL.get_or_init(|| {
            let p = ModelParams::new(3.5, 1.0, 1.0, 1.0).unwrap();
            build_pool(&p, 20_000, 1_000, 1_000, 11).unwrap()
        })
    }

    #[test]
    fn oracle_matches_hand_enumeration_for_unit_triangle() {
        let p = ModelParams::new(3.5, 1.0, 1.0, 1.0).unwrap();
        let law = exact_small_oracle(&[1.0, 1.0, 1.0], &p, 3).unwrap();
        assert!((law[0] - 8.0 / 27.0).abs() < 1e-12);
        assert!((law[1] - 12.0 / 27.0).abs() < 1e-12);
        assert!((law[2] - 7.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_frozen_four_vertex_law() {
        let p = ModelParams::new(3.5, 1.0, 0.7, 1.0).unwrap();
        let law = exact_small_oracle(&[1.0, 1.5, 2.0, 3.0], &p, 4).unwrap();
        let want = [
            0.009734308593750006,
            0.10785723046875004,
            0.27793259375000007,
            0.6044758671875,
        ];
        for (got, want) in law.iter().zip(want.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_two_vertex_and_saturated_cases() {
        let p = ModelParams::new(3.5, 1.0, 0.5, 1.0).unwrap();
        let law = exact_small_oracle(&[2.0, 3.0], &p, 10).unwrap();
        assert!((law[0] - 0.7).abs() < 1e-15);
        assert!((law[1] - 0.3).abs() < 1e-15);
        // all pairwise probabilities saturate at 1
        let p1 = ModelParams::new(3.5, 1.0, 1.0, 1.0).unwrap();
        let law = exact_small_oracle(&[3.0, 3.0, 3.0], &p1, 3).unwrap();
        assert_eq!(law[2], 1.0);
        assert_eq!(law[0] + law[1], 0.0);
        // refusal above the enumeration limit
        assert!(exact_small_oracle(&[1.0; 7], &p, 7).is_err());
    }

    #[test]
    fn generator_matches_oracle_within_monte_carlo_error() {
        let p = ModelParams::new(3.5, 1.0, 1.0, 1.0).unwrap();
        let oracle = exact_small_oracle(&[1.0, 1.0, 1.0], &p, 3).unwrap();
        let reps = 20_000usize;
        let mut counts = [0usize; 3];
        for k in 0..reps {
            let g = generate_from_weights(&p, vec![1.0, 1.0, 1.0], 3, substream(909, k as u64))
                .unwrap();
            counts[components(&g).largest_size as usize - 1] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p_hat = c as f64 / reps as f64;
            let se = (oracle[i] * (1.0 - oracle[i]) / reps as f64).sqrt();
            assert!(
                (p_hat - oracle[i]).abs() <= 3.0 * se,
                "size {}: {p_hat} vs {} (se {se})",
                i + 1,
                oracle[i]
            );
        }
    }

    #[test]
    fn lln_run_tracks_pool_estimates() {
        let pool = supercritical_pool();
        let c = cfg(pool.params, 3_000, 6, 0.5, 77);
        let rep = run_lln(pool, &c).unwrap();
        assert!(rep.mean_abs_giant_error < 0.05, "giant error {}", rep.mean_abs_giant_error);
        assert!(rep.per_size[0].mean_abs_error < 0.05);
        assert_eq!(rep.records.len(), 6);
        // reproducible and schedule-independent
        let again = run_lln(pool, &c).unwrap();
        assert_eq!(rep.records, again.records);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let from_single = single.install(|| run_lln(pool, &c).unwrap());
        assert_eq!(rep.records, from_single.records);
    }

    #[test]
    fn planted_hubs_lift_the_giant_and_absence_does_not() {
        let pool = shared_pool();
        let theta = estimate_theta(pool).theta_hat;
        let mut c = cfg(pool.params, 3_000, 8, theta + 0.15, 505);
        c.margin = 0.05;
        let h = hubs(c.rho + c.margin, pool.params.q, pool).unwrap().ceil;
        assert!(h >= 1);
        let with = run_planted_hubs(pool, &c, h, &YMode::SampleInTarget).unwrap();
        assert!(with.success_fraction >= 0.5, "success {}", with.success_fraction);
        assert!(with.mean_attempts >= 1.0);
        assert!(with.phi.unwrap() > 0.0);
        for r in &with.records {
            assert_eq!(r.planted.len(), h as usize);
        }
        let without = run_planted_hubs(pool, &c, 0, &YMode::None).unwrap();
        assert!(without.success_fraction <= 0.1, "success {}", without.success_fraction);
    }

    #[test]
    fn explicit_prefixes_are_pathwise_monotone_in_h() {
        let pool = shared_pool();
        let theta = estimate_theta(pool).theta_hat;
        let c = cfg(pool.params, 2_000, 10, theta + 0.15, 606);
        let phi = 0.05;
        let y_full = [0.9, 0.4, 0.08];
        let mut reports = Vec::new();
        for h in 1..=3u32 {
            let y = HubWeights::new(y_full[..h as usize].to_vec()).unwrap();
            let mode = YMode::Explicit { y, phi };
            reports.push(run_planted_hubs(pool, &c, h, &mode).unwrap());
        }
        for w in reports.windows(2) {
            for (lo, hi) in w[0].records.iter().zip(w[1].records.iter()) {
                assert!(
                    !(lo.success && !hi.success),
                    "success lost when adding a hub (rep {})",
                    lo.rep
                );
                assert!(hi.giant_fraction >= lo.giant_fraction - 1e-12);
            }
        }
    }

    #[test]
    fn margin_and_mode_validation() {
        let pool = shared_pool();
        let theta = estimate_theta(pool).theta_hat;
        let mut c = cfg(pool.params, 1_000, 2, theta + 0.15, 3);
        c.margin = 0.5; // >= 1 - rho
        assert!(run_planted_hubs(pool, &c, 1, &YMode::SampleInTarget).is_err());
        c.margin = 0.05;
        assert!(run_planted_hubs(pool, &c, 1, &YMode::None).is_err());
        assert!(run_planted_hubs(pool, &c, 0, &YMode::SampleInTarget).is_err());
        let y = HubWeights::new(vec![0.5]).unwrap();
        let bad_floor = YMode::Explicit { y: y.clone(), phi: 0.7 };
        assert!(run_planted_hubs(pool, &c, 1, &bad_floor).is_err());
        let wrong_h = YMode::Explicit { y, phi: 0.1 };
        assert!(run_planted_hubs(pool, &c, 2, &wrong_h).is_err());
    }

    #[test]
    fn rejection_sampling_reports_unreachable_targets() {
        let p = ModelParams::new(2.5, 1.0, 0.5, 1.0).unwrap();
        let pool = build_pool(&p, 2_000, 1_000, 1_000, 8).unwrap();
        // rho + margin far beyond the one-hub plateau: no single hub vector
        // is ever a member, so sampling must hit the attempt cap
        let mut c = cfg(p, 1_000, 1, 0.8, 4);
        c.margin = 0.19;
        let err = run_planted_hubs(&pool, &c, 1, &YMode::SampleInTarget).unwrap_err();
        assert!(matches!(err, Error::Estimation(_)), "got {err:?}");
    }

    #[test]
    fn conditional_run_matches_its_own_curve_loosely() {
        let pool = shared_pool();
        let theta = estimate_theta(pool).theta_hat;
        let c = cfg(pool.params, 3_000, 10, theta + 0.15, 707);
        let rep = run_conditional(pool, &c).unwrap();
        assert_eq!(rep.h, 1);
        assert!(rep.phi > 0.0);
        assert!(rep.s_end > c.rho);
        assert_eq!(rep.grid.len(), c.grid_points);
        assert_eq!(rep.grid[0].s, c.rho);
        assert!((rep.grid[0].predicted_ratio - 1.0).abs() < 1e-12);
        assert!(rep.ks_distance <= 0.5, "ks {}", rep.ks_distance);
        assert!(rep.support_fraction >= 0.7, "support {}", rep.support_fraction);
        for r in &rep.records {
            assert_eq!(r.g_hat.len(), 5);
            assert!(!r.planted.is_empty());
        }
        // reproducible
        let again = run_conditional(pool, &c).unwrap();
        assert_eq!(rep.records, again.records);
        // below the survival threshold there is no conditional regime
        let low = cfg(pool.params, 1_000, 2, 0.01, 1);
        assert!(run_conditional(pool, &low).is_err());
    }

    #[test]
    fn coupling_check_reports_zero_violations() {
        let pool = supercritical_pool();
        let p = pool.params;
        let rep = run_coupling_check(&p, 2_000, 0.25, 4.0, 5, 31, 0.5, 4, pool).unwrap();
        assert_eq!(rep.subset_violations, 0);
        assert!(rep.mean_edge_difference_per_n >= 0.0);
        assert!(rep.mean_giant_full >= rep.mean_giant_approx);
        assert!(rep.mean_type_sum_full.is_finite() && rep.mean_type_sum_full < 1.0);
        assert!(rep.mean_type_sum_approx.is_finite());
        // eps must be a multiple of delta
        assert!(run_coupling_check(&p, 2_000, 0.3, 4.0, 1, 31, 0.5, 4, pool).is_err());
    }

    #[test]
    fn naive_tail_mc_refuses_unresolvable_scales() {
        let pool = shared_pool();
        let p = pool.params;
        // n = 10^5: (n tail(n))^1 = n^(1-2.5) ~ 3e-8 < 1e-6
        let err = naive_tail_mc(&p, 100_000, 0.7, 10, 5, pool).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "got {err:?}");
        // tiny n: the event is merely unlikely, not astronomically so
        let frac = naive_tail_mc(&p, 100, 0.7, 50, 5, pool).unwrap();
        assert!((0.0..=1.0).contains(&frac));
    }

    #[test]
    fn jsonl_round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let recs = vec![
            RunRecord {
                rep: 0,
                seed: 42,
                giant_fraction: 0.625,
                size_counts: vec![(1, 10), (2, 3)],
                planted: vec![0.5],
                g_hat: vec![(1, 0.25)],
                success: true,
            },
            RunRecord {
                rep: 1,
                seed: 43,
                giant_fraction: 0.0625,
                size_counts: vec![],
                planted: vec![],
                g_hat: vec![],
                success: false,
            },
        ];
        append_jsonl(&path, &recs).unwrap();
        append_jsonl(&path, &recs[..1]).unwrap();
        let back: Vec<RunRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[..2], recs[..]);
        assert_eq!(back[2], recs[0]);
    }
}
