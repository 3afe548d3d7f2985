//! Hub-count machinery for the upper tail of the largest component: the
//! fractional hub count and its two equivalent definitions, membership of
//! hub-weight vectors, the hub-weight floor, the importance-sampled leading
//! constant, the rate function, and finite-n tail predictions.
//!
//! Everything is evaluated against a frozen tree pool, which collapses the
//! nested randomness: membership of a hub vector is a deterministic function
//! of (y, pool), so the importance-sampling estimator is an ordinary mean.

use crate::branching::{
    estimate_h, estimate_theta, mean_kernel, no_connection_value_with_q, ThetaEstimate, TreePool,
};
use crate::model::ModelParams;
use crate::numeric::{bisect_monotone, factorial, integrate, mean_stderr};
use crate::rng::{substream, Stream};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Geometric grid ratio for the hub-weight floor search.
const PHI_GRID_RATIO: f64 = 0.8;
/// Absolute floor below which the hub-weight search reports failure.
const PHI_FLOOR: f64 = 1e-6;

/// Which branch of the hub-count case split fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HubsStatus {
    /// rho is at or below the (CI upper edge of the) survival probability.
    BelowThreshold,
    /// q = 1: a single giant hub percolates everything it touches.
    FullPercolation,
    /// Interior case: bisection on the pool functional.
    Interior,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HubsResult {
    pub value: f64,
    pub ceil: u32,
    pub theta: ThetaEstimate,
    pub status: HubsStatus,
}

fn validate_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::domain(format!("rho must be in [0, 1) (got {rho})")));
    }
    if rho >= 1.0 {
        return Err(Error::domain(format!(
            "rho = {rho} >= 1: the hub count diverges"
        )));
    }
    Ok(())
}

fn validate_q(q: f64) -> Result<()> {
    if !q.is_finite() || q <= 0.0 || q > 1.0 {
        return Err(Error::domain(format!("q must lie in (0, 1] (got {q})")));
    }
    Ok(())
}

/// Ceiling that tolerates bisection noise: a value within 1e-6 of an
/// integer is that integer, so a hub count solved to exactly 2 never
/// rounds up to 3.
fn ceil_snapped(v: f64) -> u32 {
    let r = v.round();
    if (v - r).abs() < 1e-6 {
        r as u32
    } else {
        v.ceil() as u32
    }
}

/// Minimal number of hubs (fractional) whose planting pushes the giant
/// above fraction `rho`: the smallest `h` with
/// `E[(1-q)^(|T| h)] <= 1 - rho` on the pool. Case split: 0 at or below the
/// survival threshold (CI upper edge, conservative), 1 for q = 1 above it.
pub fn hubs(rho: f64, q: f64, pool: &TreePool) -> Result<HubsResult> {
    validate_rho(rho)?;
    validate_q(q)?;
    let theta = estimate_theta(pool);
    if rho <= theta.ci_hi {
        return Ok(HubsResult { value: 0.0, ceil: 0, theta, status: HubsStatus::BelowThreshold });
    }
    if q == 1.0 {
        return Ok(HubsResult { value: 1.0, ceil: 1, theta, status: HubsStatus::FullPercolation });
    }
    let z = 1.0 - q;
    let target = 1.0 - rho;
    let phi_of = |h: f64| estimate_h(pool, z, h).expect("z in [0,1], h >= 0").value;
    let mut hi = 1.0f64;
    while phi_of(hi) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Estimation(
                "hub bisection bracket exhausted; pool cannot resolve this rho".into(),
            ));
        }
    }
    let value = bisect_monotone(phi_of, target, 0.0, hi, 1e-9);
    Ok(HubsResult { value, ceil: ceil_snapped(value), theta, status: HubsStatus::Interior })
}

/// The same hub count computed through the size generating function: solve
/// `E[z^|T|] = 1 - rho` for `z*` on the pool, then `h = ln z* / ln(1 - q)`.
/// Agrees with [`hubs`] to bisection tolerance.
pub fn hubs_via_generating_function(rho: f64, q: f64, pool: &TreePool) -> Result<f64> {
    validate_rho(rho)?;
    validate_q(q)?;
    let theta = estimate_theta(pool);
    if rho <= theta.ci_hi {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    let gen_fn = |z: f64| estimate_h(pool, z, 1.0).expect("z in [0,1]").value;
    let z_star = bisect_monotone(gen_fn, 1.0 - rho, 0.0, 1.0, 1e-12);
    Ok(z_star.ln() / (1.0 - q).ln())
}

/// Small-q / large-rho asymptotic of the hub count.
pub fn hubs_asymptotic(rho: f64, q: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("rho must lie in (0, 1) (got {rho})")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!(
            "asymptotic hub count needs q in (0, 1) (got {q})"
        )));
    }
    Ok((1.0 - rho).recip().ln() / (1.0 - q).recip().ln())
}

/// `E[exp(-q E[kernel(W, .)])]`: the probability that the root has no
/// children, by quadrature against the weight law.
fn isolated_root_prob(params: &ModelParams) -> f64 {
    let dist = params.weight_dist();
    integrate(
        |u| {
            let w = dist.w_min * u.powf(-1.0 / dist.alpha);
            (-params.q * mean_kernel(params, w)).exp()
        },
        1e-13,
        1.0,
        1e-12,
    )
}

/// Refined asymptotic: correcting the leading term by the chance that a
/// tree stops at its root. The correction enters with the sign that makes
/// the refined value smaller than the plain asymptotic, matching the
/// inversion of `E[z^|T|] ~ z * P(|T| = 1)` as `z -> 0`.
pub fn hubs_asymptotic_refined(rho: f64, params: &ModelParams) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("rho must lie in (0, 1) (got {rho})")));
    }
    if params.q >= 1.0 {
        return Err(Error::domain("refined asymptotic needs q < 1"));
    }
    let p1 = isolated_root_prob(params);
    Ok(((1.0 - rho).recip().ln() + p1.ln()) / (1.0 - params.q).recip().ln())
}

/// Hub-weight vector in units of n, canonically sorted descending.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HubWeights {
    y: Vec<f64>,
}

impl HubWeights {
    pub fn new(mut y: Vec<f64>) -> Result<Self> {
        for &v in &y {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "hub weights must be positive and finite (got {v})"
                )));
            }
        }
        y.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        Ok(HubWeights { y })
    }

    pub fn h(&self) -> usize {
        self.y.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.y
    }
}

/// Membership of the hub vector in the target set: true iff the pool's
/// no-connection functional is at most `1 - rho`. Deterministic for a
/// fixed pool.
pub fn y_membership(y: &HubWeights, rho: f64, pool: &TreePool) -> Result<bool> {
    validate_rho(rho)?;
    let est = crate::branching::estimate_no_connection(pool, y.as_slice())?;
    Ok(est.value <= 1.0 - rho)
}

/// End of the plateau on which ceil(hubs) stays at `h`: the largest rho
/// this pool can certify with `h` hubs, `1 - E[(1-q)^(|T| h)]`.
pub fn plateau_end(pool: &TreePool, q: f64, h: u32) -> Result<f64> {
    validate_q(q)?;
    Ok(1.0 - estimate_h(pool, 1.0 - q, h as f64)?.value)
}

/// Largest floor `phi` on a geometric grid below `w_min^(-sigma)` such
/// that, on this pool, any hub vector with a coordinate below `phi` is
/// certifiably a non-member at level `rho`: the bound functional
/// `E[(1-q)^(|T|(h-1)) * prod_x (1 - q min(W_x^sigma phi, 1))]` exceeds
/// `(1 - rho)` by a 3-standard-error margin.
pub fn phi_threshold(rho: f64, q: f64, h: u32, pool: &TreePool) -> Result<f64> {
    validate_rho(rho)?;
    validate_q(q)?;
    if h == 0 {
        return Err(Error::domain("hub floor needs h >= 1"));
    }
    let m = pool.len();
    let z = 1.0 - q;
    let he = (h - 1) as f64;
    let start = pool.params.w_min.powf(-pool.params.sigma);
    let mut vals = vec![0.0f64; m];
    let mut k = 1i32;
    loop {
        let phi = start * PHI_GRID_RATIO.powi(k);
        if phi < PHI_FLOOR {
            return Err(Error::Estimation(format!(
                "no admissible hub floor above {PHI_FLOOR}; increase the pool size"
            )));
        }
        for (i, v) in vals.iter_mut().enumerate() {
            let ws = pool.pow_sigma(i);
            *v = if ws.is_empty() {
                0.0
            } else {
                let mut p = z.powf(pool.samples[i].size as f64 * he);
                for &wsig in ws {
                    p *= 1.0 - q * (wsig * phi).min(1.0);
                }
                p
            };
        }
        let (mean, se) = mean_stderr(&vals);
        if mean > (1.0 - rho) + 3.0 * se {
            return Ok(phi);
        }
        k += 1;
    }
}

/// Importance-sampling estimate of the leading constant.
#[derive(Clone, Debug, Serialize)]
pub struct CEstimate {
    pub rho: f64,
    pub h: u32,
    pub phi: f64,
    pub c_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub member_fraction: f64,
    pub draws: usize,
    pub warning: Option<String>,
}

/// Evaluate the constant on a whole grid of rho values sharing one plateau
/// (same `h` and `phi`): the proposal draws are computed once and the
/// estimate at each level is the survival fraction of `1 - pbar(y)` above
/// that level, scaled by `phi^(-alpha h) / h!`.
pub fn c_curve(
    rhos: &[f64],
    q: f64,
    pool: &TreePool,
    phi: f64,
    h: u32,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<CEstimate>> {
    validate_q(q)?;
    if rhos.is_empty() {
        return Err(Error::domain("need at least one rho"));
    }
    for &r in rhos {
        validate_rho(r)?;
    }
    if h == 0 {
        return Err(Error::domain("constant estimation needs h >= 1"));
    }
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::domain(format!("phi must be positive (got {phi})")));
    }
    if n_draws == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    let alpha = pool.params.alpha;
    // Proposal: y_i iid with density alpha phi^alpha y^-(alpha+1) on
    // [phi, inf), drawn by inverse transform. One survival value per draw
    // serves every rho on the plateau.
    let survivals: Vec<f64> = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let mut s = Stream::new(substream(seed, k as u64));
            let y: Vec<f64> = (0..h)
                .map(|_| phi * s.next_unit().powf(-1.0 / alpha))
                .collect();
            1.0 - no_connection_value_with_q(pool, &y, q)
        })
        .collect();
    let scale = phi.powf(-alpha * h as f64) / factorial(h);
    let n = n_draws as f64;
    Ok(rhos
        .iter()
        .map(|&rho| {
            let hits = survivals.iter().filter(|&&v| v >= rho).count();
            let p = hits as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            let (ci_lo, ci_hi, warning) = if hits == 0 {
                (
                    0.0,
                    scale * 3.0 / n,
                    Some("no members among the draws; one-sided upper bound".to_string()),
                )
            } else {
                (
                    scale * (p - 1.96 * se).max(0.0),
                    scale * (p + 1.96 * se),
                    None,
                )
            };
            CEstimate {
                rho,
                h,
                phi,
                c_hat: scale * p,
                ci_lo,
                ci_hi,
                member_fraction: p,
                draws: n_draws,
                warning,
            }
        })
        .collect())
}

/// Leading constant at one rho; `h` is derived from the pool's hub count.
pub fn estimate_c(
    rho: f64,
    q: f64,
    pool: &TreePool,
    phi: f64,
    n_draws: usize,
    seed: u64,
) -> Result<CEstimate> {
    let hr = hubs(rho, q, pool)?;
    if hr.ceil == 0 {
        return Err(Error::domain(
            "rho is at or below the survival threshold; no hub constant applies",
        ));
    }
    Ok(c_curve(&[rho], q, pool, phi, hr.ceil, n_draws, seed)?.remove(0))
}

/// Large-deviation rate: `(alpha - 1) * ceil(hubs)` on the supercritical
/// plateau, `+inf` above 1 or strictly below the survival estimate.
pub fn rate_function(rho: f64, params: &ModelParams, pool: &TreePool) -> Result<f64> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::domain(format!("rho must be >= 0 (got {rho})")));
    }
    if rho >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let theta = estimate_theta(pool);
    if rho < theta.theta_hat {
        return Ok(f64::INFINITY);
    }
    let hr = hubs(rho, params.q, pool)?;
    Ok((params.alpha - 1.0) * hr.ceil as f64)
}

/// Whether the power-law prediction is sharp or only a two-sided bound
/// (integer hub count with q < 1 sits on a discontinuity of the constant).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionStatus {
    Sharp,
    BoundsOnly,
    NotApplicable,
}

/// Bundle of the upper-tail quantities at one rho.
#[derive(Clone, Debug, Serialize)]
pub struct LdpQuantities {
    pub rho: f64,
    pub q: f64,
    pub theta: ThetaEstimate,
    pub hubs_value: f64,
    pub hubs_ceil: u32,
    pub hubs_status: HubsStatus,
    /// None encodes +infinity.
    pub rate: Option<f64>,
    pub phi: Option<f64>,
    pub c_estimate: Option<CEstimate>,
    pub prediction_status: PredictionStatus,
}

/// Compute hub count, rate, hub floor and constant in one pass. `phi_override`
/// skips the floor search (testing aid; the CLI exposes it).
pub fn ldp_quantities(
    pool: &TreePool,
    rho: f64,
    n_draws: usize,
    seed: u64,
    phi_override: Option<f64>,
) -> Result<LdpQuantities> {
    let params = pool.params;
    let hr = hubs(rho, params.q, pool)?;
    let rate = rate_function(rho, &params, pool)?;
    let (phi, c_estimate, prediction_status) = if hr.ceil >= 1 {
        let phi = match phi_override {
            Some(p) if p > 0.0 && p.is_finite() => p,
            Some(p) => return Err(Error::domain(format!("bad phi override: {p}"))),
            None => phi_threshold(rho, params.q, hr.ceil, pool)?,
        };
        let c = c_curve(&[rho], params.q, pool, phi, hr.ceil, n_draws, seed)?.remove(0);
        let on_integer = (hr.value - hr.value.round()).abs() < 1e-6;
        let status = if on_integer && params.q < 1.0 {
            PredictionStatus::BoundsOnly
        } else {
            PredictionStatus::Sharp
        };
        (Some(phi), Some(c), status)
    } else {
        (None, None, PredictionStatus::NotApplicable)
    };
    Ok(LdpQuantities {
        rho,
        q: params.q,
        theta: hr.theta,
        hubs_value: hr.value,
        hubs_ceil: hr.ceil,
        hubs_status: hr.status,
        rate: rate.is_finite().then_some(rate),
        phi,
        c_estimate,
        prediction_status,
    })
}

/// Asymptotic prediction for `P(largest component > rho n)`:
/// `C_hat * (n * tail(n))^ceil(hubs)`.
pub fn upper_tail_prediction(
    rho: f64,
    n: usize,
    params: &ModelParams,
    quantities: &LdpQuantities,
) -> Result<f64> {
    validate_rho(rho)?;
    let c = quantities
        .c_estimate
        .as_ref()
        .ok_or_else(|| Error::domain("no constant estimate in the quantities bundle"))?;
    let tail = params.weight_dist().tail(n as f64);
    Ok(c.c_hat * (n as f64 * tail).powi(quantities.hubs_ceil as i32))
}
