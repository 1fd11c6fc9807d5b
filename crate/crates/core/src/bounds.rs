//! Desk-scale verification of the concentration statements the mixing
//! analysis rests on: the upper tail of a sum of half-normals, the linear
//! upper bound on the standard Gaussian CDF, and the upper tail of the
//! aggregate influence at a vertex whose degree is binomial.
//!
//! Monte Carlo checks pass when the empirical exceedance frequency is at
//! most the proved bound plus three binomial standard errors; the CDF check
//! is deterministic and passes when the worst margin over a grid is not
//! meaningfully negative.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::influence::gamma;
use crate::instance::beta_c;
use crate::rng::{stream, PURPOSE_MC};

/// Monte Carlo tail checks refuse fewer trials: the three-standard-error
/// pass rule needs a meaningful binomial error estimate.
pub const MIN_TRIALS: u64 = 10_000;

/// Per-trial generator streams pack the trial index into 32 bits.
const MAX_TRIALS: u64 = 1 << 32;

/// Standard Gaussian CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// `E[tanh(beta |J| / 2)]` for a standard Gaussian `J`, by composite Simpson
/// integration of `sqrt(2/pi) * tanh(beta x / 2) exp(-x^2/2)` over `[0, 12]`
/// (the discarded tail is below 1e-32). Accurate to about 1e-12 for
/// moderate `beta`; rejects `beta > 64` where the integrand's kink would
/// need a finer grid.
pub fn expected_edge_influence(beta: f64) -> Result<f64> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    if beta > 64.0 {
        return Err(Error::invalid(format!(
            "quadrature is tuned for beta <= 64, got {beta}"
        )));
    }
    const UPPER: f64 = 12.0;
    const INTERVALS: usize = 48_000; // even
    let f = |x: f64| (beta * x / 2.0).tanh() * (-x * x / 2.0).exp();
    let h = UPPER / INTERVALS as f64;
    let mut acc = f(0.0) + f(UPPER);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    let integral = acc * h / 3.0;
    Ok((2.0 / std::f64::consts::PI).sqrt() * integral)
}

fn check_trials(trials: u64) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "tail checks need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    if trials >= MAX_TRIALS {
        return Err(Error::invalid(format!(
            "at most {MAX_TRIALS} trials are supported, got {trials}"
        )));
    }
    Ok(())
}

fn binomial_std_error(hits: u64, trials: u64) -> f64 {
    let p = hits as f64 / trials as f64;
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Run one simulation per trial index in parallel and return the exceedance
/// count and the sum of the simulated values. Partial results are combined
/// in fixed chunk order, so the totals are bitwise reproducible whatever the
/// thread schedule; each trial reads its own generator stream, so they do
/// not depend on the chunk size either.
fn chunked_trials(trials: u64, sim: impl Fn(u64) -> (bool, f64) + Sync) -> (u64, f64) {
    const CHUNK: u64 = 1 << 12;
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<(u64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = trials.min(lo + CHUNK);
            let mut hits = 0u64;
            let mut sum = 0.0f64;
            for t in lo..hi {
                let (hit, x) = sim(t);
                hits += u64::from(hit);
                sum += x;
            }
            (hits, sum)
        })
        .collect();
    partials
        .into_iter()
        .fold((0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// Result of the half-normal sum tail check.
#[derive(Clone, Debug, Serialize)]
pub struct TailCheckReport {
    pub terms: u32,
    pub sigma: f64,
    pub delta: f64,
    /// `terms * sigma * sqrt(2/pi)`, the exact mean of the sum.
    pub mean: f64,
    /// `(1 + delta) * mean`.
    pub threshold: f64,
    pub trials: u64,
    pub exceedances: u64,
    pub empirical: f64,
    pub std_error: f64,
    /// Sample mean of the simulated sums, for checking against `mean`.
    pub empirical_mean: f64,
    /// `exp(-terms * delta^2 / pi)`.
    pub bound: f64,
    pub pass: bool,
}

/// Sample `X = sum of `terms` i.i.d. |N(0, sigma^2)|` values `trials` times
/// and compare the frequency of `X > (1 + delta) E[X]` against the proved
/// tail bound `exp(-terms delta^2 / pi)`.
pub fn half_normal_tail_check(
    terms: u32,
    sigma: f64,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<TailCheckReport> {
    if terms == 0 {
        return Err(Error::invalid("the sum needs at least one term"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "delta must be finite and >= 0, got {delta}"
        )));
    }
    check_trials(trials)?;
    let n = terms as f64;
    let mean = n * sigma * (2.0 / std::f64::consts::PI).sqrt();
    let threshold = (1.0 + delta) * mean;
    let bound = (-n * delta * delta / std::f64::consts::PI).exp();

    let (exceedances, total) = chunked_trials(trials, |t| {
        use rand::Rng;
        let mut rng = stream(seed, PURPOSE_MC, t);
        let mut x = 0.0f64;
        for _ in 0..terms {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            x += sigma * z.abs();
        }
        (x > threshold, x)
    });
    let empirical = exceedances as f64 / trials as f64;
    let std_error = binomial_std_error(exceedances, trials);
    Ok(TailCheckReport {
        terms,
        sigma,
        delta,
        mean,
        threshold,
        trials,
        exceedances,
        empirical,
        std_error,
        empirical_mean: total / trials as f64,
        bound,
        pass: empirical <= bound + 3.0 * std_error,
    })
}

/// Result of the Gaussian CDF linear bound check.
#[derive(Clone, Debug, Serialize)]
pub struct PhiBoundReport {
    pub points: usize,
    pub max_x: f64,
    /// Smallest value of `1/2 + x/sqrt(2 pi) - Phi(x)` over the grid.
    pub worst_margin: f64,
    pub worst_x: f64,
    pub pass: bool,
}

/// Check `Phi(x) <= 1/2 + x / sqrt(2 pi)` on a uniform grid of `points`
/// values spanning `[0, max_x]`. The margin is zero at `x = 0` and grows,
/// so a pass means the margin never dips below -1e-12 anywhere sampled.
pub fn phi_bound_check(max_x: f64, points: usize) -> Result<PhiBoundReport> {
    if !(max_x > 0.0) || !max_x.is_finite() {
        return Err(Error::invalid(format!(
            "max_x must be finite and > 0, got {max_x}"
        )));
    }
    if points < 2 {
        return Err(Error::invalid("the grid needs at least 2 points"));
    }
    let slope = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut worst_margin = f64::INFINITY;
    let mut worst_x = 0.0;
    for i in 0..points {
        let x = max_x * i as f64 / (points - 1) as f64;
        let margin = 0.5 + slope * x - std_normal_cdf(x);
        if margin < worst_margin {
            worst_margin = margin;
            worst_x = x;
        }
    }
    Ok(PhiBoundReport {
        points,
        max_x,
        worst_margin,
        worst_x,
        pass: worst_margin >= -1e-12,
    })
}

/// Result of the aggregate influence tail check.
#[derive(Clone, Debug, Serialize)]
pub struct AggregateTailReport {
    pub d: f64,
    pub epsilon: f64,
    /// `(1 - epsilon) * beta_c(d)`, the temperature the bound is stated at.
    pub beta: f64,
    /// Number of vertices of the simulated graph; degrees are
    /// `Bin(graph_size, d / graph_size)`.
    pub graph_size: u64,
    /// Exact mean `d * E[Gamma]` of the aggregate influence.
    pub mean: f64,
    pub empirical_mean: f64,
    /// Whether `mean <= 1 - epsilon`, the contraction-style consequence of
    /// the temperature range.
    pub mean_ok: bool,
    /// `mean + epsilon / 2`.
    pub threshold: f64,
    pub trials: u64,
    pub exceedances: u64,
    pub empirical: f64,
    pub std_error: f64,
    /// `exp(-epsilon^4 d / (8 pi))`.
    pub bound: f64,
    pub pass: bool,
}

/// Simulate the aggregate influence at a vertex: degree binomial with mean
/// `d`, each incident edge contributing `|tanh(beta J / 2)|` for an
/// independent standard Gaussian `J`, at `beta = (1 - epsilon) beta_c(d)`.
/// Checks both the exceedance frequency of `A >= E[A] + epsilon/2` against
/// `exp(-epsilon^4 d / (8 pi))` and that `E[A] <= 1 - epsilon`.
pub fn aggregate_tail_check(
    d: f64,
    epsilon: f64,
    graph_size: u64,
    trials: u64,
    seed: u64,
) -> Result<AggregateTailReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must be in (0, 1), got {epsilon}"
        )));
    }
    if !(d >= 1.0) || !d.is_finite() {
        return Err(Error::invalid(format!("d must be finite and >= 1, got {d}")));
    }
    if (graph_size as f64) < d {
        return Err(Error::invalid(
            "graph_size must be at least d so the edge probability is at most 1",
        ));
    }
    check_trials(trials)?;
    let beta = (1.0 - epsilon) * beta_c(d);
    let expected_gamma = expected_edge_influence(beta)?;
    let mean = d * expected_gamma;
    let threshold = mean + epsilon / 2.0;
    let bound = (-epsilon.powi(4) * d / (8.0 * std::f64::consts::PI)).exp();
    let degree_law = rand_distr::Binomial::new(graph_size, d / graph_size as f64)
        .map_err(|e| Error::invalid(format!("bad degree law: {e}")))?;

    let (exceedances, total) = chunked_trials(trials, |t| {
        use rand::Rng;
        let mut rng = stream(seed, PURPOSE_MC, t);
        let degree = rng.sample(degree_law);
        let mut a = 0.0f64;
        for _ in 0..degree {
            let j: f64 = rng.sample(rand_distr::StandardNormal);
            a += gamma(beta, j);
        }
        (a >= threshold, a)
    });
    let empirical = exceedances as f64 / trials as f64;
    let std_error = binomial_std_error(exceedances, trials);
    let mean_ok = mean <= (1.0 - epsilon) + 1e-9;
    Ok(AggregateTailReport {
        d,
        epsilon,
        beta,
        graph_size,
        mean,
        empirical_mean: total / trials as f64,
        mean_ok,
        threshold,
        trials,
        exceedances,
        empirical,
        std_error,
        bound,
        pass: mean_ok && empirical <= bound + 3.0 * std_error,
    })
}
