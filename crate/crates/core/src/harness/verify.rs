// SPDX-License-Identifier: MIT OR Apache-2.0

//! Randomized numerical checks of the steering math: the first-order
//! behaviour of the steered objective and the optimality of `μ*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist::{log_sum_exp, softmax, Epsilons, LogitVector, ProbVector};
use crate::error::{Error, Result};
use crate::steering::{build_steering, raw_steering_vector, ConstrainedDelta, SteeringConfig};
use crate::strength::mu_token;

/// Relative tolerance of the analytic derivative against finite differences.
pub const FD_REL_TOL: f64 = 1e-6;
/// Absolute scale below which the relative tolerance stops shrinking.
pub const FD_ABS_FLOOR: f64 = 1e-3;
pub const STATIONARY_TOL: f64 = 1e-8;
pub const SLOPE_TOL: f64 = 0.1;
pub const SLOPE_MUS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

pub const GRID_LIMIT: f64 = 10.0;
pub const GRID_STEP: f64 = 1e-4;
pub const DESCENT_VOCAB: usize = 10;
pub const DESCENT_NORM: f64 = 0.1;
pub const DESCENT_MIN_LINEAR: f64 = 1e-6;
pub const DESCENT_RATE: f64 = 0.95;

fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

fn probs(z: &[f64]) -> Result<ProbVector> {
    softmax(&LogitVector::new(z.to_vec())?)
}

/// `KL(q ‖ softmax(z))` through log-softmax, no flooring.
pub fn kl_to_logits(q: &[f64], z: &[f64]) -> f64 {
    let lse = log_sum_exp(z).expect("finite logits");
    q.iter()
        .zip(z)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(&qi, &zi)| qi * (qi.ln() - (zi - lse)))
        .sum()
}

/// `KL(p ‖ softmax(z + μδ))` where `p = softmax(z)`, written as
/// `ln(1 + Σ p expm1(μδ)) − μ⟨p, δ⟩` so it stays accurate for tiny `μ`.
pub fn stationary_kl(p: &[f64], delta: &[f64], mu: f64) -> f64 {
    let s: f64 = p
        .iter()
        .zip(delta)
        .map(|(pi, d)| pi * (mu * d).exp_m1())
        .sum();
    let lin: f64 = p.iter().zip(delta).map(|(pi, d)| pi * d).sum();
    s.ln_1p() - mu * lin
}

fn shifted(z: &[f64], delta: &[f64], mu: f64) -> Vec<f64> {
    z.iter().zip(delta).map(|(a, d)| a + mu * d).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderReport {
    pub trials: usize,
    pub derivative_failures: usize,
    /// Worst `|analytic − fd| / max(|analytic|, 1e-3)`.
    pub max_rel_err: f64,
    pub stationary_failures: usize,
    pub max_stationary_fd: f64,
    pub slope_failures: usize,
    pub min_slope: f64,
    pub max_slope: f64,
}

impl FirstOrderReport {
    pub fn passed(&self) -> bool {
        self.derivative_failures == 0 && self.stationary_failures == 0 && self.slope_failures == 0
    }
}

/// For random `(q, z_φ, p_θ)` with `|V| ∈ 2..=50`, checks
/// `d/dμ KL(q ‖ softmax(z_φ + μδ))|₀ = ⟨p_φ − q, δ⟩` by central differences,
/// and at `q = p_φ` that the derivative vanishes and the excess KL is
/// quadratic in `μ`.
pub fn verify_first_order(trials: usize, eps: &Epsilons, seed: u64) -> Result<FirstOrderReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    eps.validate()?;
    let h = eps.fd_step;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = FirstOrderReport {
        trials,
        derivative_failures: 0,
        max_rel_err: 0.0,
        stationary_failures: 0,
        max_stationary_fd: 0.0,
        slope_failures: 0,
        min_slope: f64::INFINITY,
        max_slope: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let n = rng.random_range(2..=50);
        let z = random_logits(&mut rng, n, 3.0);
        let p_phi = probs(&z)?;
        let p_theta = probs(&random_logits(&mut rng, n, 3.0))?;
        let q = if rng.random_bool(0.5) {
            ProbVector::one_hot(n, rng.random_range(0..n))
        } else {
            probs(&random_logits(&mut rng, n, 2.0))?
        };
        let delta = raw_steering_vector(&p_phi, &p_theta, eps)?.delta;

        let analytic: f64 = p_phi
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .zip(&delta)
            .map(|((p, q), d)| (p - q) * d)
            .sum();
        let fd = (kl_to_logits(q.as_slice(), &shifted(&z, &delta, h))
            - kl_to_logits(q.as_slice(), &shifted(&z, &delta, -h)))
            / (2.0 * h);
        let rel = (analytic - fd).abs() / analytic.abs().max(FD_ABS_FLOOR);
        r.max_rel_err = r.max_rel_err.max(rel);
        if rel > FD_REL_TOL {
            r.derivative_failures += 1;
        }

        let p = p_phi.as_slice();
        let fd0 = (stationary_kl(p, &delta, h) - stationary_kl(p, &delta, -h)) / (2.0 * h);
        r.max_stationary_fd = r.max_stationary_fd.max(fd0.abs());
        if fd0.abs() > STATIONARY_TOL {
            r.stationary_failures += 1;
        }

        let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let unit: Vec<f64> = delta.iter().map(|d| d / norm).collect();
        let excess: Vec<f64> = SLOPE_MUS
            .iter()
            .map(|&mu| stationary_kl(p, &unit, mu))
            .collect();
        let slope = if norm > 0.0 && excess.iter().all(|&e| e > 0.0) {
            log_log_slope(&SLOPE_MUS, &excess)
        } else {
            f64::NAN
        };
        r.min_slope = r.min_slope.min(slope);
        r.max_slope = r.max_slope.max(slope);
        // written so that a NaN slope counts as a failure
        let within = (slope - 2.0).abs() <= SLOPE_TOL;
        if !within {
            r.slope_failures += 1;
        }
    }
    Ok(r)
}

/// Argmin of `−Lμ + ½μ²D` over the grid `[−10, 10]` with step `1e-4`.
pub fn grid_argmin(l: f64, d: f64) -> f64 {
    let steps = (2.0 * GRID_LIMIT / GRID_STEP).round() as i64;
    let (mut best, mut best_f) = (-GRID_LIMIT, f64::INFINITY);
    for i in 0..=steps {
        let mu = -GRID_LIMIT + i as f64 * GRID_STEP;
        let f = -l * mu + 0.5 * mu * mu * d;
        if f < best_f {
            best = mu;
            best_f = f;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct MuOracleReport {
    pub trials: usize,
    pub grid_failures: usize,
    pub max_grid_err: f64,
    pub descent_eligible: usize,
    pub descent_wins: usize,
}

impl MuOracleReport {
    pub fn descent_rate(&self) -> f64 {
        self.descent_wins as f64 / self.descent_eligible.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.grid_failures == 0
            && self.descent_eligible == self.trials
            && self.descent_rate() >= DESCENT_RATE
    }
}

/// `δ̂` rescaled to Euclidean norm `target` over its finite entries.
fn rescale(delta_hat: &ConstrainedDelta, target: f64) -> ConstrainedDelta {
    let norm = delta_hat.kept().map(|(_, d)| d * d).sum::<f64>().sqrt();
    if norm == 0.0 {
        delta_hat.clone()
    } else {
        delta_hat.scaled(target / norm)
    }
}

/// `(L, D)` over kept coordinates, computed directly from the definition.
fn surrogate_terms(y: usize, p: &ProbVector, delta_hat: &ConstrainedDelta) -> (f64, f64) {
    let mut l = 0.0;
    let mut d = 0.0;
    for (k, x) in delta_hat.kept() {
        let e = if k == y { 1.0 } else { 0.0 };
        l += (e - p[k]) * x;
        d += x * x;
    }
    (l, d)
}

struct Instance {
    y: usize,
    z: Vec<f64>,
    p_phi: ProbVector,
    delta_hat: ConstrainedDelta,
}

/// A random non-degenerate instance under the default steering config.
fn instance(rng: &mut ChaCha8Rng, n: usize, cfg: &SteeringConfig) -> Result<Option<Instance>> {
    let z = random_logits(rng, n, 3.0);
    let p_phi = probs(&z)?;
    let p_theta = probs(&random_logits(rng, n, 3.0))?;
    let y = rng.random_range(0..n);
    let step = build_steering(&p_phi, &p_theta, cfg)?;
    if !step.mask.keep[y] {
        return Ok(None);
    }
    Ok(Some(Instance {
        y,
        z,
        p_phi,
        delta_hat: step.delta_hat,
    }))
}

/// Compares `mu_token` against a grid search of the quadratic surrogate and
/// runs the descent experiment: with `‖δ̂‖ = 0.1`, the one-hot KL at `μ*` is
/// below the unsteered one. Masked coordinates keep their logit in the
/// descent check so the mask itself cannot account for the decrease.
pub fn verify_mu_oracle(trials: usize, seed: u64) -> Result<MuOracleReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let cfg = SteeringConfig::default();
    let eps = cfg.epsilons;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = MuOracleReport {
        trials,
        grid_failures: 0,
        max_grid_err: 0.0,
        descent_eligible: 0,
        descent_wins: 0,
    };

    let mut done = 0;
    while done < trials {
        let n = rng.random_range(2..=50);
        let Some(inst) = instance(&mut rng, n, &cfg)? else {
            continue;
        };
        // |L| ≤ √2‖δ̂‖, so this keeps μ* inside the grid
        let target = rng.random_range(0.15..=1.0);
        let dh = rescale(&inst.delta_hat, target);
        let rec = mu_token(inst.y as u32, &inst.p_phi, &dh, &eps)?;
        if rec.degenerate {
            continue;
        }
        let (l, d) = surrogate_terms(inst.y, &inst.p_phi, &dh);
        let err = (grid_argmin(l, d) - rec.mu_star).abs();
        r.max_grid_err = r.max_grid_err.max(err);
        if err > GRID_STEP {
            r.grid_failures += 1;
        }
        done += 1;
    }

    // bounded so a pathological seed cannot spin forever
    let mut attempts = 0;
    while r.descent_eligible < trials && attempts < 1000 * trials {
        attempts += 1;
        let Some(inst) = instance(&mut rng, DESCENT_VOCAB, &cfg)? else {
            continue;
        };
        let dh = rescale(&inst.delta_hat, DESCENT_NORM);
        let rec = mu_token(inst.y as u32, &inst.p_phi, &dh, &eps)?;
        if rec.degenerate || rec.linear_term.abs() <= DESCENT_MIN_LINEAR {
            continue;
        }
        r.descent_eligible += 1;
        let mut shift = vec![0.0; DESCENT_VOCAB];
        for (k, x) in dh.kept() {
            shift[k] = x;
        }
        let target = ProbVector::one_hot(DESCENT_VOCAB, inst.y);
        let before = kl_to_logits(target.as_slice(), &inst.z);
        let after = kl_to_logits(target.as_slice(), &shifted(&inst.z, &shift, rec.mu_star));
        if after < before {
            r.descent_wins += 1;
        }
    }
    Ok(r)
}
