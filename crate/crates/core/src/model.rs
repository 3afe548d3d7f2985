//! Model parameters, the Pareto weight law, and the connection kernel.
//!
//! A graph instance has `n` vertices with iid weights from a Pareto law with
//! tail `(w / w_min)^(-alpha)` on `[w_min, inf)`. Vertices `u != v` connect
//! independently with probability `q * min(kernel(W_u, W_v) / n, 1)` where
//! `kernel(w1, w2) = max(w1, w2) * min(w1, w2)^sigma`.

use crate::rng::Stream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Validated model parameters. Construct via [`ModelParams::new`]; the
/// constraints are `alpha > 1`, `sigma < 2 * alpha - 1`, `q` in `(0, 1]`,
/// `w_min > 0`, all finite. Deserialization re-validates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    pub alpha: f64,
    pub sigma: f64,
    pub q: f64,
    pub w_min: f64,
}

#[derive(Deserialize)]
struct RawParams {
    alpha: f64,
    sigma: f64,
    q: f64,
    w_min: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.alpha, r.sigma, r.q, r.w_min)
    }
}

impl ModelParams {
    pub fn new(alpha: f64, sigma: f64, q: f64, w_min: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 1.0 {
            return Err(Error::domain(format!(
                "alpha must satisfy alpha > 1 (got {alpha})"
            )));
        }
        if !sigma.is_finite() || sigma >= 2.0 * alpha - 1.0 {
            return Err(Error::domain(format!(
                "sigma must satisfy sigma < 2 * alpha - 1 (got sigma={sigma}, alpha={alpha})"
            )));
        }
        if !q.is_finite() || q <= 0.0 || q > 1.0 {
            return Err(Error::domain(format!("q must lie in (0, 1] (got {q})")));
        }
        if !w_min.is_finite() || w_min <= 0.0 {
            return Err(Error::domain(format!("w_min must be positive (got {w_min})")));
        }
        Ok(ModelParams { alpha, sigma, q, w_min })
    }

    pub fn weight_dist(&self) -> WeightDist {
        WeightDist::new(self.alpha, self.w_min)
    }
}

/// Pareto weight law with tail `l_const * w^(-alpha) = (w / w_min)^(-alpha)`
/// on `[w_min, inf)`. `l_const` is pinned to `w_min^alpha` so that
/// `tail(w_min) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightDist {
    pub alpha: f64,
    pub w_min: f64,
    pub l_const: f64,
}

impl WeightDist {
    pub fn new(alpha: f64, w_min: f64) -> Self {
        WeightDist { alpha, w_min, l_const: w_min.powf(alpha) }
    }

    /// `P(W > w)`; equals 1 below `w_min`.
    #[inline]
    pub fn tail(&self, w: f64) -> f64 {
        if w <= self.w_min {
            1.0
        } else {
            (w / self.w_min).powf(-self.alpha)
        }
    }

    /// Inverse tail: maps `u` in (0, 1] to `w_min * u^(-1/alpha)`. The
    /// uniform variate is interpreted as the tail value, so small `u` means
    /// large weight; `u = 0` would be an infinite weight.
    #[inline]
    fn quantile(&self, u: f64) -> f64 {
        debug_assert!(u > 0.0 && u <= 1.0);
        self.w_min * u.powf(-1.0 / self.alpha)
    }

    /// Draw one weight from `stream`.
    #[inline]
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        self.quantile(stream.next_unit())
    }

    /// Draw one weight conditioned on `W < bound`; `bound > w_min` required.
    #[inline]
    pub fn sample_below(&self, bound: f64, stream: &mut Stream) -> f64 {
        debug_assert!(bound > self.w_min);
        let t = self.tail(bound);
        // W < bound iff the tail variate lies in (t, 1].
        self.quantile(t + stream.next_unit() * (1.0 - t))
    }

    /// `P(a <= W < b)` for `w_min <= a <= b`.
    #[inline]
    pub fn cell_mass(&self, a: f64, b: f64) -> f64 {
        self.tail(a) - self.tail(b)
    }

    /// `E[W] = alpha * w_min / (alpha - 1)`.
    pub fn mean(&self) -> f64 {
        self.alpha * self.w_min / (self.alpha - 1.0)
    }

    /// `E[W^2]`; infinite for `alpha <= 2`.
    pub fn second_moment(&self) -> f64 {
        if self.alpha > 2.0 {
            self.alpha * self.w_min * self.w_min / (self.alpha - 2.0)
        } else {
            f64::INFINITY
        }
    }
}

/// Inverse-transform weight sample: `w_min * u^(-1/alpha)` for `u` in
/// (0, 1]. Errors on `u` outside (0, 1] (`u = 0` would be infinite).
pub fn sample_weight(dist: &WeightDist, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::domain(format!(
            "weight sampling needs u in (0, 1] (got {u})"
        )));
    }
    Ok(dist.w_min * u.powf(-1.0 / dist.alpha))
}

/// Connection kernel `max(w1, w2) * min(w1, w2)^sigma`. Weights must be
/// positive; graph and pool constructors guarantee this.
#[inline]
pub fn kernel(w1: f64, w2: f64, sigma: f64) -> f64 {
    assert!(w1 > 0.0 && w2 > 0.0, "kernel needs positive weights");
    let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
    hi * lo.powf(sigma)
}

/// Edge probability `q * min(kernel(w1, w2) / n, 1)` for a graph scaled to
/// `n` vertices.
#[inline]
pub fn edge_probability(w1: f64, w2: f64, params: &ModelParams, n: usize) -> f64 {
    assert!(n > 0, "edge probability needs n >= 1");
    params.q * (kernel(w1, w2, params.sigma) / n as f64).min(1.0)
}
