//! Density of the collided observation magnitudes and its log-likelihood.
//!
//! Under the line-of-sight model, a de-spread unit-power observation has
//! squared magnitude distributed as `|A + e^{j phi} b|^2` with `b =
//! sqrt(beta2)`, `phi` uniform, and `A = |sqrt(beta1) + w|` Rice distributed
//! through the complex Gaussian noise `w`. Conditioning on `A = a` gives an
//! arcsine-type density supported on `sqrt(t) in [|a - b|, a + b]`;
//! integrating `a` out over a Rice-weighted grid yields the marginal density
//! evaluated here. Both path-loss arguments enter symmetrically in exact
//! arithmetic; the quadrature introduces only a small asymmetry.

use std::f64::consts::PI;

use crate::channel::DespreadObservation;
use crate::error::{Error, Result};

/// Densities below this value are floored before taking logs so that a single
/// out-of-support observation penalizes, but never poisons, a likelihood sum.
pub const PDF_FLOOR: f64 = 1e-300;

/// Clamp applied to `1 - x^2` under the square root of the conditional
/// density, bounding the integrable endpoint singularities.
const SUPPORT_CLAMP: f64 = 1e-12;

/// Half-width of the quadrature window in Rice standard deviations.
const QUAD_SIGMAS: f64 = 6.0;

/// Smallest admissible quadrature abscissa.
const QUAD_FLOOR: f64 = 1e-6;

/// Series/asymptotic crossover for `log_bessel_i0`.
const I0_CROSSOVER: f64 = 30.0;

/// Coefficients of the large-argument expansion
/// `I0(x) ~ e^x / sqrt(2 pi x) * (1 + sum_k c_k x^-k)`.
const I0_ASYMPTOTIC: [f64; 8] = [
    1.0 / 8.0,
    9.0 / 128.0,
    225.0 / 3072.0,
    11025.0 / 98304.0,
    893025.0 / 3932160.0,
    108056025.0 / 188743680.0,
    18261468225.0 / 10569646080.0,
    4108830350625.0 / 676457349120.0,
];

fn log_i0(x: f64) -> f64 {
    if x < I0_CROSSOVER {
        // All-positive power series sum_j (x/2)^{2j} / (j!)^2; at most ~70
        // terms are needed below the crossover and nothing overflows.
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut j = 1.0;
        loop {
            term *= q / (j * j);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            j += 1.0;
        }
        sum.ln()
    } else {
        let mut correction = 0.0;
        let mut power = 1.0;
        for c in I0_ASYMPTOTIC {
            power /= x;
            correction += c * power;
        }
        x - 0.5 * (2.0 * PI * x).ln() + correction.ln_1p()
    }
}

/// Natural log of the modified Bessel function `I0`, stable for arguments up
/// to at least `1e6` (the result stays finite where `I0` itself overflows).
pub fn log_bessel_i0(x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::invalid("log_bessel_i0 requires a finite x >= 0"));
    }
    Ok(log_i0(x))
}

/// Log density of the Rice-distributed conditioning amplitude
/// `A = |sqrt(beta1) + w|` for noise variance `noise_variance` (assumed
/// valid): `ln(2a/v) - (a^2 + beta1)/v + ln I0(2 a sqrt(beta1) / v)`.
fn rice_log_density(a: f64, beta1: f64, noise_variance: f64) -> f64 {
    let v = noise_variance;
    (2.0 * a / v).ln() - (a * a + beta1) / v + log_i0(2.0 * a * beta1.sqrt() / v)
}

/// Log of the Rice density of `A = |sqrt(beta1) + w|` with unit-variance
/// complex Gaussian `w` (scale `1/sqrt(2)`).
pub fn rice_pdf_log(a: f64, beta1: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid("rice_pdf_log requires a finite amplitude a > 0"));
    }
    if !(beta1 >= 0.0) || !beta1.is_finite() {
        return Err(Error::invalid("rice_pdf_log requires a finite beta1 >= 0"));
    }
    Ok(rice_log_density(a, beta1, 1.0))
}

/// Density of `t = |a + e^{j phi} b|^2` for uniform `phi`, conditioned on the
/// amplitudes `a` and `b`: an arcsine-type law supported on
/// `sqrt(t) in [|a - b|, a + b]`, with the endpoint singularities clamped.
pub fn conditional_pdf(t: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid("conditional_pdf requires a finite a > 0"));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::invalid("conditional_pdf requires a finite b >= 0"));
    }
    if b == 0.0 {
        return Err(Error::degenerate(
            "conditional density collapses to a point mass at a^2 when b = 0",
        ));
    }
    if t.is_nan() || t.is_infinite() {
        return Err(Error::invalid("conditional_pdf requires a finite t"));
    }
    if t < 0.0 {
        return Ok(0.0);
    }
    // The density is symmetric in the two amplitudes; evaluating on the
    // sorted pair makes the symmetry exact in floating point as well.
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let rt = t.sqrt();
    if rt < hi - lo || rt > lo + hi {
        return Ok(0.0);
    }
    let x = (t - lo * lo - hi * hi) / (2.0 * lo * hi);
    let s = (1.0 - x * x).max(SUPPORT_CLAMP);
    Ok(1.0 / (2.0 * PI * lo * hi * s.sqrt()))
}

/// Path-loss pair hypothesis evaluated by the likelihood, together with the
/// observation noise variance (1 under the unit-power convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodParams {
    beta1: f64,
    beta2: f64,
    noise_variance: f64,
}

impl LikelihoodParams {
    /// Hypothesis for unit noise variance.
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 >= 0.0) || !beta1.is_finite() || !(beta2 >= 0.0) || !beta2.is_finite() {
            return Err(Error::invalid("path losses must be finite and >= 0"));
        }
        Ok(Self {
            beta1,
            beta2,
            noise_variance: 1.0,
        })
    }

    /// Replaces the noise variance, e.g. with
    /// [`DespreadObservation::noise_variance`] when `rho_p tau_p != 1`.
    pub fn with_noise_variance(mut self, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::invalid("noise variance must be positive and finite"));
        }
        self.noise_variance = noise_variance;
        Ok(self)
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

/// Riemann quadrature over the Rice-distributed conditioning amplitude:
/// uniformly spaced abscissas covering six standard deviations around the
/// Rice location, with the node spacing as every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    beta1: f64,
    noise_variance: f64,
    first: f64,
    step: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Rice density at each node times its weight, cached because the grid
    /// search reuses one rule across many hypotheses and observations.
    rice_weights: Vec<f64>,
}

impl QuadratureRule {
    fn build(beta1: f64, noise_variance: f64, node_count: usize) -> Result<Self> {
        if !(beta1 >= 0.0) || !beta1.is_finite() {
            return Err(Error::invalid("quadrature requires a finite beta1 >= 0"));
        }
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::invalid("noise variance must be positive and finite"));
        }
        if node_count < 2 {
            return Err(Error::invalid("quadrature needs at least 2 nodes"));
        }
        let location = beta1.sqrt();
        let sigma = (0.5 * noise_variance).sqrt();
        let lower = (location - QUAD_SIGMAS * sigma).max(QUAD_FLOOR);
        let upper = location + QUAD_SIGMAS * sigma;
        let step = (upper - lower) / (node_count - 1) as f64;
        let nodes: Vec<f64> = (0..node_count)
            .map(|j| lower + j as f64 * step)
            .collect();
        let weights = vec![step; node_count];
        let rice_weights = nodes
            .iter()
            .map(|&a| rice_log_density(a, beta1, noise_variance).exp() * step)
            .collect();
        Ok(Self {
            beta1,
            noise_variance,
            first: lower,
            step,
            nodes,
            weights,
            rice_weights,
        })
    }

    /// Rule for the hypothesis `params`, honoring its noise variance.
    pub fn for_params(params: &LikelihoodParams, node_count: usize) -> Result<Self> {
        Self::build(params.beta1, params.noise_variance, node_count)
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Builds the amplitude quadrature for `beta1` under unit noise variance.
pub fn build_quadrature(beta1: f64, node_count: usize) -> Result<QuadratureRule> {
    QuadratureRule::build(beta1, 1.0, node_count)
}

/// Marginal density of a normalized squared-magnitude observation under
/// `params`, mixing the conditional density over `rule`'s Rice-weighted
/// nodes. `rule` must have been built for the same `beta1` and noise
/// variance. For `beta2 = 0` the mixture degenerates and the exact
/// noncentral law of `|sqrt(beta1) + w|^2` is used instead.
pub fn marginal_pdf(t: f64, params: &LikelihoodParams, rule: &QuadratureRule) -> f64 {
    debug_assert_eq!(rule.beta1.to_bits(), params.beta1.to_bits());
    debug_assert_eq!(
        rule.noise_variance.to_bits(),
        params.noise_variance.to_bits()
    );
    if !(t >= 0.0) || !t.is_finite() {
        return 0.0;
    }
    let v = params.noise_variance;
    if params.beta2 == 0.0 {
        let log_pdf =
            -(t + params.beta1) / v + log_i0(2.0 * (t * params.beta1).sqrt() / v) - v.ln();
        return log_pdf.exp();
    }
    let b = params.beta2.sqrt();
    let rt = t.sqrt();
    let lo = (rt - b).abs();
    let hi = rt + b;
    // The support in the amplitude is the contiguous band [lo, hi];
    // everything outside contributes exactly zero.
    let last = rule.nodes.len() - 1;
    let j0 = if lo <= rule.first {
        0
    } else {
        let j = ((lo - rule.first) / rule.step).ceil();
        if j > last as f64 {
            return 0.0;
        }
        j as usize
    };
    let j1 = {
        let j = ((hi - rule.first) / rule.step).floor();
        if j < 0.0 {
            return 0.0;
        }
        (j as usize).min(last)
    };
    if j0 > j1 {
        return 0.0;
    }
    let b_sq = b * b;
    let inv_2b = 1.0 / (2.0 * b);
    let mut sum = 0.0;
    for j in j0..=j1 {
        let a = rule.nodes[j];
        let x = (t - a * a - b_sq) * inv_2b / a;
        let s = (1.0 - x * x).max(SUPPORT_CLAMP);
        sum += rule.rice_weights[j] / (a * s.sqrt());
    }
    sum / (2.0 * PI * b)
}

/// Sum of floored log marginal densities over the observation blocks; the
/// observations are normalized to the unit-power convention internally and
/// `params.noise_variance` must describe them (see
/// [`DespreadObservation::noise_variance`]).
pub fn log_likelihood(
    observations: &DespreadObservation,
    params: &LikelihoodParams,
    rule: &QuadratureRule,
) -> f64 {
    observations
        .normalized_squared_magnitudes()
        .iter()
        .map(|&t| marginal_pdf(t, params, rule).max(PDF_FLOOR).ln())
        .sum()
}

/// Serializes the marginal density over a caller-supplied grid as CSV with a
/// `t,pdf` header.
pub fn marginal_pdf_csv(params: &LikelihoodParams, rule: &QuadratureRule, ts: &[f64]) -> String {
    let mut out = String::from("t,pdf\n");
    for &t in ts {
        out.push_str(&format!("{t},{}\n", marginal_pdf(t, params, rule)));
    }
    out
}
