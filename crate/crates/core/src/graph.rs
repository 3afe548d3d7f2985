//! Graph realization, component statistics, small-component type counts,
//! and the finite-type approximation with its monotone coupling.
//!
//! Randomness contract: a graph is a pure function of (params, weights,
//! n_model, seed). The uniform deciding pair (i, j), i < j, is
//! `unit_at(edge_stream, j*(j-1)/2 + i)`; an edge is present iff that
//! uniform is <= the pair's edge probability. Changing thread count cannot
//! change the numbers.

use crate::model::{kernel, ModelParams};
use crate::rng::{substream, unit_at, Stream};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Tag of the weight-sampling child stream of a graph seed.
const TAG_WEIGHTS: u64 = 0;
/// Tag of the edge-uniform child stream.
const TAG_EDGES: u64 = 1;
/// Tag of the thinning-uniform child stream (coupling only).
const TAG_THINNING: u64 = 2;

/// A realized graph. `n_model` is the scale in the edge probability
/// `q * min(kernel / n_model, 1)`; it equals `weights.len()` except for
/// windowed (induced) graphs, which keep the original scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub n_model: usize,
    pub weights: Vec<f64>,
    /// Edges as (u, v) with u < v, no duplicates, no self-loops.
    pub edges: Vec<(u32, u32)>,
    pub seed: u64,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.weights.len()
    }
}

/// Flat pair index of (i, j) with i < j.
#[inline]
pub fn pair_index(i: usize, j: usize) -> u64 {
    debug_assert!(i < j);
    let j = j as u64;
    j * (j - 1) / 2 + i as u64
}

/// Generate a graph on `n` iid weights. `window = Some((a, b))` keeps only
/// vertices with weight in `[a, b)` (induced subgraph) while the edge
/// probability keeps the original scale `n`. `planted` replaces the
/// `planted.len()` highest-weight slots with the given weights before edges
/// are drawn.
pub fn generate(
    params: &ModelParams,
    n: usize,
    seed: u64,
    window: Option<(f64, f64)>,
    planted: &[f64],
) -> Result<Graph> {
    if n == 0 {
        return Err(Error::domain("graph size n must be >= 1"));
    }
    if planted.len() > n {
        return Err(Error::domain("more planted weights than vertices"));
    }
    for &w in planted {
        if !w.is_finite() || w < params.w_min {
            return Err(Error::domain(format!(
                "planted weight {w} below w_min {}",
                params.w_min
            )));
        }
    }
    if let Some((a, b)) = window {
        if !(a >= params.w_min && b > a) {
            return Err(Error::domain(format!(
                "weight window [{a}, {b}) must satisfy w_min <= a < b"
            )));
        }
    }
    let dist = params.weight_dist();
    let mut wstream = Stream::new(substream(seed, TAG_WEIGHTS));
    let mut weights: Vec<f64> = (0..n).map(|_| dist.sample(&mut wstream)).collect();
    plant_top_slots(&mut weights, planted);
    if let Some((a, b)) = window {
        // keep the original pair indices for the edge uniforms so the
        // windowed graph is the induced subgraph of the full realization
        let kept: Vec<usize> = (0..n).filter(|&i| weights[i] >= a && weights[i] < b).collect();
        let kept_weights: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
        let edges =
            draw_edges(params, &kept_weights, Some(&kept), n, substream(seed, TAG_EDGES));
        return Ok(Graph { n_model: n, weights: kept_weights, edges, seed });
    }
    generate_from_weights(params, weights, n, seed)
}

/// Replace the `hubs.len()` highest-weight slots by `hubs` (largest natural
/// slot gets the first hub). Ties break toward the lower vertex index.
pub fn plant_top_slots(weights: &mut [f64], hubs: &[f64]) {
    if hubs.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    for (slot, &h) in order.iter().zip(hubs.iter()) {
        weights[*slot] = h;
    }
}

/// Draw the edge set over the given weights. This is the randomness
/// bottleneck; rows are processed in parallel and concatenated in row
/// order, so the result is schedule-independent.
pub fn generate_from_weights(
    params: &ModelParams,
    weights: Vec<f64>,
    n_model: usize,
    seed: u64,
) -> Result<Graph> {
    if n_model == 0 {
        return Err(Error::domain("n_model must be >= 1"));
    }
    for &w in &weights {
        if !w.is_finite() || w < params.w_min {
            return Err(Error::domain(format!(
                "vertex weight {w} below w_min {}",
                params.w_min
            )));
        }
    }
    let edges = draw_edges(params, &weights, None, n_model, substream(seed, TAG_EDGES));
    Ok(Graph { n_model, weights, edges, seed })
}

/// Draw the edge set; the uniform of local pair (i, j) is addressed by the
/// *original* vertex indices (`orig`, strictly increasing) when the vertex
/// set is a filtered subset, so induced subgraphs share the full graph's
/// randomness.
fn draw_edges(
    params: &ModelParams,
    weights: &[f64],
    orig: Option<&[usize]>,
    n_model: usize,
    edge_seed: u64,
) -> Vec<(u32, u32)> {
    let m = weights.len();
    let pw: Vec<f64> = weights.iter().map(|w| w.powf(params.sigma)).collect();
    let q = params.q;
    let nf = n_model as f64;
    let rows: Vec<Vec<(u32, u32)>> = (1..m)
        .into_par_iter()
        .map(|j| {
            let wj = weights[j];
            let pwj = pw[j];
            let oj = orig.map_or(j, |map| map[j]);
            let base = pair_index(0, oj);
            let mut row = Vec::new();
            for i in 0..j {
                let wi = weights[i];
                // kernel = max * min^sigma via the cached powers
                let kap = if wi <= wj { wj * pw[i] } else { wi * pwj };
                let p = q * (kap / nf).min(1.0);
                let oi = orig.map_or(i, |map| map[i]);
                if unit_at(edge_seed, base + oi as u64) <= p {
                    row.push((i as u32, j as u32));
                }
            }
            row
        })
        .collect();
    rows.concat()
}

// ---------------------------------------------------------------------------
// Components
// ---------------------------------------------------------------------------

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        // path halving
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

/// Connected-component summary. Component ids are canonical: the id of a
/// component is its smallest vertex index.
#[derive(Clone, Debug, Serialize)]
pub struct ComponentStats {
    /// Per-vertex component id.
    pub component_id: Vec<u32>,
    /// Component sizes in ascending id order.
    pub sizes: Vec<u32>,
    pub largest_size: u32,
    /// size -> number of components of that size.
    pub count_by_size: BTreeMap<u32, u32>,
    /// size -> number of vertices living in components of that size.
    pub vertices_by_size: BTreeMap<u32, u32>,
}

/// Union-find decomposition of the graph into connected components.
pub fn components(g: &Graph) -> ComponentStats {
    let n = g.n();
    let mut uf = UnionFind::new(n);
    for &(u, v) in &g.edges {
        uf.union(u, v);
    }
    let mut id_of_root: Vec<u32> = vec![u32::MAX; n];
    let mut component_id = vec![0u32; n];
    let mut sizes = Vec::new();
    for v in 0..n as u32 {
        let r = uf.find(v) as usize;
        if id_of_root[r] == u32::MAX {
            // ascending scan: first visitor is the smallest vertex
            id_of_root[r] = v;
            sizes.push(uf.size[r]);
        }
        component_id[v as usize] = id_of_root[r];
    }
    let mut count_by_size = BTreeMap::new();
    let mut vertices_by_size = BTreeMap::new();
    for &s in &sizes {
        *count_by_size.entry(s).or_insert(0) += 1;
        *vertices_by_size.entry(s).or_insert(0) += s;
    }
    let largest_size = sizes.iter().copied().max().unwrap_or(0);
    ComponentStats { component_id, sizes, largest_size, count_by_size, vertices_by_size }
}

// ---------------------------------------------------------------------------
// Component types
// ---------------------------------------------------------------------------

/// Type of a small component: its size and the sorted multiset of weight
/// buckets `floor((w - w_min) / eps)` of its vertices, relative to the
/// discretization `(eps, r)` it was computed under.
#[derive(Clone, Debug, Serialize)]
pub struct ComponentType {
    pub ell: u32,
    pub buckets: Vec<u32>,
    pub eps: f64,
    pub r: f64,
}

impl PartialEq for ComponentType {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for ComponentType {}
impl PartialOrd for ComponentType {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ComponentType {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.ell, &self.buckets, self.eps.to_bits(), self.r.to_bits()).cmp(&(
            other.ell,
            &other.buckets,
            other.eps.to_bits(),
            other.r.to_bits(),
        ))
    }
}
impl std::hash::Hash for ComponentType {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        (self.ell, &self.buckets, self.eps.to_bits(), self.r.to_bits()).hash(state)
    }
}

fn validate_discretization(w_min: f64, eps: f64, r: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::domain(format!("eps must be positive (got {eps})")));
    }
    if !(r > w_min) || !r.is_finite() {
        return Err(Error::domain(format!(
            "truncation bound r={r} must exceed w_min={w_min}"
        )));
    }
    let steps = (r - w_min) / eps;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "(r - w_min) must be an integer multiple of eps (got {steps} steps)"
        )));
    }
    Ok(())
}

/// Classify one component by its weight multiset. Returns `None` when any
/// weight is >= `r` (out of range for the truncated type space). Buckets
/// are half-open: bucket `i` covers `[w_min + i*eps, w_min + (i+1)*eps)`.
pub fn classify_component(
    weights: &[f64],
    w_min: f64,
    eps: f64,
    r: f64,
) -> Result<Option<ComponentType>> {
    validate_discretization(w_min, eps, r)?;
    if weights.is_empty() {
        return Err(Error::domain("component must have at least one vertex"));
    }
    let mut buckets = Vec::with_capacity(weights.len());
    for &w in weights {
        if !w.is_finite() || w < w_min {
            return Err(Error::domain(format!("weight {w} below w_min {w_min}")));
        }
        if w >= r {
            return Ok(None);
        }
        buckets.push(((w - w_min) / eps).floor() as u32);
    }
    buckets.sort_unstable();
    Ok(Some(ComponentType { ell: weights.len() as u32, buckets, eps, r }))
}

/// Count components of size <= `ell_max` by type, skipping components that
/// contain any vertex of weight >= `r`.
pub fn count_types(
    g: &Graph,
    w_min: f64,
    eps: f64,
    r: f64,
    ell_max: u32,
) -> Result<BTreeMap<ComponentType, u32>> {
    validate_discretization(w_min, eps, r)?;
    let stats = components(g);
    let mut members: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (v, &cid) in stats.component_id.iter().enumerate() {
        members.entry(cid).or_default().push(g.weights[v]);
    }
    let mut out = BTreeMap::new();
    for ws in members.values() {
        if ws.len() as u32 > ell_max {
            continue;
        }
        if let Some(ty) = classify_component(ws, w_min, eps, r)? {
            *out.entry(ty).or_insert(0) += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite-type approximation
// ---------------------------------------------------------------------------

/// Weight discretization for the finite-type approximating graph: levels
/// `z_i = w_min + i*delta` for `i < k`, cell masses `f_i = P(z_i <= W <
/// z_i + delta)`, and per-level target counts `ceil((1-delta) * n * f_i)`.
#[derive(Clone, Debug, Serialize)]
pub struct DeltaIrgModel {
    pub delta: f64,
    pub r: f64,
    pub w_min: f64,
    pub n: usize,
    pub z_levels: Vec<f64>,
    pub masses: Vec<f64>,
    pub counts: Vec<usize>,
    /// Sum of the per-level target counts; at most `n`.
    pub n_total: usize,
}

pub fn build_delta_irg(
    params: &ModelParams,
    n: usize,
    delta: f64,
    r: f64,
) -> Result<DeltaIrgModel> {
    if n == 0 {
        return Err(Error::domain("n must be >= 1"));
    }
    validate_discretization(params.w_min, delta, r)?;
    let k = ((r - params.w_min) / delta).round() as usize;
    let dist = params.weight_dist();
    let mut z_levels = Vec::with_capacity(k);
    let mut masses = Vec::with_capacity(k);
    let mut counts = Vec::with_capacity(k);
    let mut n_total = 0usize;
    for i in 0..k {
        let z = params.w_min + i as f64 * delta;
        let mass = dist.cell_mass(z, z + delta);
        let c = ((1.0 - delta) * n as f64 * mass).ceil() as usize;
        z_levels.push(z);
        masses.push(mass);
        counts.push(c);
        n_total += c;
    }
    if n_total > n {
        return Err(Error::domain(format!(
            "delta grid too fine for n: level quotas sum to {n_total} > {n}"
        )));
    }
    Ok(DeltaIrgModel { delta, r, w_min: params.w_min, n, z_levels, masses, counts, n_total })
}

/// Truncated lower kernel: 0 if either weight is >= `r`, otherwise the
/// infimum of the kernel over the closed delta-cells containing the two
/// weights. The kernel is piecewise monotone on each side of the diagonal,
/// so the infimum is attained at a cell corner or at a diagonal endpoint.
pub fn kernel_delta(w1: f64, w2: f64, model: &DeltaIrgModel, sigma: f64) -> f64 {
    assert!(
        w1 >= model.w_min && w2 >= model.w_min,
        "kernel_delta needs weights >= w_min"
    );
    if w1 >= model.r || w2 >= model.r {
        return 0.0;
    }
    let k = model.z_levels.len();
    let cell = |w: f64| -> (f64, f64) {
        let i = (((w - model.w_min) / model.delta).floor() as usize).min(k - 1);
        let lo = model.w_min + i as f64 * model.delta;
        (lo, lo + model.delta)
    };
    let (a1, b1) = cell(w1);
    let (a2, b2) = cell(w2);
    let mut best = f64::INFINITY;
    for &x in &[a1, b1] {
        for &y in &[a2, b2] {
            best = best.min(kernel(x, y, sigma));
        }
    }
    let dlo = a1.max(a2);
    let dhi = b1.min(b2);
    if dlo <= dhi {
        best = best.min(kernel(dlo, dlo, sigma));
        best = best.min(kernel(dhi, dhi, sigma));
    }
    best
}

/// Output of [`generate_coupled`]: the reference graph induced on weights
/// below `r` (original-scale edge probabilities) and the finite-type
/// approximation realized on a subset of its vertices, with the
/// approximation's edge set a subset of the reference edge set under the
/// shared randomness.
#[derive(Clone, Debug)]
pub struct CoupledPair {
    pub full: Graph,
    pub approx: Graph,
    /// Reference-graph vertex index of each approximation vertex.
    pub approx_to_full: Vec<u32>,
    pub model: DeltaIrgModel,
    /// Literal regularity event: every level count strictly inside the
    /// two-sided window ((1-delta) n f_i, (1+delta) n f_i).
    pub regularity: bool,
    /// Every level met its target count.
    pub quota_met: bool,
    /// Total shortfall against the per-level targets.
    pub deficit: usize,
}

/// Generate the reference graph and its finite-type approximation under one
/// shared randomness. Per level, the approximation uses the first
/// `min(available, target)` vertices; it fails with `CouplingUnavailable`
/// only when the total shortfall exceeds fraction `delta` of the target
/// total, i.e. when the approximating graph would be undersized beyond the
/// discretization's own slack.
pub fn generate_coupled(
    params: &ModelParams,
    n: usize,
    seed: u64,
    delta: f64,
    r: f64,
) -> Result<CoupledPair> {
    let model = build_delta_irg(params, n, delta, r)?;
    let dist = params.weight_dist();
    let mut wstream = Stream::new(substream(seed, TAG_WEIGHTS));
    let all_weights: Vec<f64> = (0..n).map(|_| dist.sample(&mut wstream)).collect();

    // Reference graph vertex set: weights below r, original indices order.
    let full_weights: Vec<f64> = all_weights.iter().copied().filter(|w| *w < r).collect();
    let m = full_weights.len();
    let k = model.z_levels.len();
    let level_of = |w: f64| -> usize {
        (((w - params.w_min) / delta).floor() as usize).min(k - 1)
    };

    // Per-level selection, truncated to availability.
    let mut taken = vec![0usize; k];
    let mut selected: Vec<Option<u32>> = vec![None; m];
    let mut approx_to_full = Vec::new();
    let mut approx_weights = Vec::new();
    let mut next_approx = 0u32;
    for (i, &w) in full_weights.iter().enumerate() {
        let lvl = level_of(w);
        if taken[lvl] < model.counts[lvl] {
            taken[lvl] += 1;
            selected[i] = Some(next_approx);
            approx_to_full.push(i as u32);
            approx_weights.push(model.z_levels[lvl]);
            next_approx += 1;
        }
    }
    let mut counts_observed = vec![0usize; k];
    for &w in &full_weights {
        counts_observed[level_of(w)] += 1;
    }
    let mut deficit = 0usize;
    let mut regularity = true;
    for i in 0..k {
        deficit += model.counts[i].saturating_sub(counts_observed[i]);
        let nf = n as f64 * model.masses[i];
        let c = counts_observed[i] as f64;
        if !(c > (1.0 - delta) * nf && c < (1.0 + delta) * nf) {
            regularity = false;
        }
    }
    let quota_met = deficit == 0;
    if deficit as f64 > delta * model.n_total as f64 {
        return Err(Error::CouplingUnavailable(format!(
            "level shortfall {deficit} exceeds {} of the target total {}",
            delta, model.n_total
        )));
    }

    // Ratio of approximating to reference edge probability per level pair.
    // The truncated kernel is constant on cell pairs, so one evaluation at
    // cell midpoints covers every weight pair with those levels.
    let nf = n as f64;
    let q = params.q;
    let mut ratio_num = vec![0.0f64; k * k];
    for a in 0..k {
        for b in 0..k {
            let wa = model.z_levels[a] + 0.5 * delta;
            let wb = model.z_levels[b] + 0.5 * delta;
            ratio_num[a * k + b] = q * (kernel_delta(wa, wb, &model, params.sigma) / nf).min(1.0);
        }
    }

    let edge_seed = substream(seed, TAG_EDGES);
    let thin_seed = substream(seed, TAG_THINNING);
    let pw: Vec<f64> = full_weights.iter().map(|w| w.powf(params.sigma)).collect();
    let levels: Vec<u16> = full_weights.iter().map(|&w| level_of(w) as u16).collect();
    type RowPair = (Vec<(u32, u32)>, Vec<(u32, u32)>);
    let rows: Vec<RowPair> = (1..m)
        .into_par_iter()
        .map(|j| {
            let wj = full_weights[j];
            let pwj = pw[j];
            let base = pair_index(0, j);
            let mut full_row = Vec::new();
            let mut approx_row = Vec::new();
            for i in 0..j {
                let wi = full_weights[i];
                let kap = if wi <= wj { wj * pw[i] } else { wi * pwj };
                let p_full = q * (kap / nf).min(1.0);
                let idx = base + i as u64;
                if unit_at(edge_seed, idx) <= p_full {
                    full_row.push((i as u32, j as u32));
                    if let (Some(ai), Some(aj)) = (selected[i], selected[j]) {
                        let p_approx =
                            ratio_num[levels[i] as usize * k + levels[j] as usize];
                        // Thinning keeps the edge with probability
                        // p_approx / p_full <= 1, so approx edges are a
                        // subset of reference edges by construction.
                        if unit_at(thin_seed, idx) <= p_approx / p_full {
                            approx_row.push((ai.min(aj), ai.max(aj)));
                        }
                    }
                }
            }
            (full_row, approx_row)
        })
        .collect();
    let mut full_edges = Vec::new();
    let mut approx_edges = Vec::new();
    for (f, a) in rows {
        full_edges.extend(f);
        approx_edges.extend(a);
    }
    let full = Graph { n_model: n, weights: full_weights, edges: full_edges, seed };
    let approx = Graph { n_model: n, weights: approx_weights, edges: approx_edges, seed };
    Ok(CoupledPair { full, approx, approx_to_full, model, regularity, quota_met, deficit })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Write a graph as text: header line `n seed` (a third field holds the
/// model scale when it differs from n), then n weight lines, then `u v`
/// edge lines.
pub fn write_graph(g: &Graph, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    if g.n_model == g.n() {
        writeln!(out, "{} {}", g.n(), g.seed)?;
    } else {
        writeln!(out, "{} {} {}", g.n(), g.seed, g.n_model)?;
    }
    for w in &g.weights {
        writeln!(out, "{w}")?;
    }
    for (u, v) in &g.edges {
        writeln!(out, "{u} {v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty graph file".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(Error::Format(format!("bad graph header: {header}")));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|_| Error::Format(format!("bad vertex count: {}", fields[0])))?;
    let seed: u64 = fields[1]
        .parse()
        .map_err(|_| Error::Format(format!("bad seed: {}", fields[1])))?;
    let n_model: usize = if fields.len() == 3 {
        fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad model scale: {}", fields[2])))?
    } else {
        n
    };
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("truncated weight section".into()))??;
        weights.push(
            line.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad weight line: {line}")))?,
        );
    }
    let mut edges = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let u: u32 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad edge line: {line}")))?;
        let v: u32 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad edge line: {line}")))?;
        if u >= v || v as usize >= n {
            return Err(Error::Format(format!("edge out of range: {line}")));
        }
        edges.push((u, v));
    }
    Ok(Graph { n_model, weights, edges, seed })
}
