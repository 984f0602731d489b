//! Link-level synthesis: per-block user gains, received pilot signals, and
//! de-spreading into scalar per-block observations.
//!
//! The receiver sees, in every coherence block, the superposition of both
//! users' (optionally rotated) pilots plus complex Gaussian noise. Projecting
//! onto the shared pilot sequence collapses each block to one scalar
//! observation whose squared magnitude drives the path-loss estimator.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::pilot::{PilotAssignment, PilotBook};

/// Fading model for the per-block user gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    /// Line-of-sight: constant magnitude `sqrt(beta)` and one phase per drop,
    /// held constant across blocks.
    Los,
    /// Line-of-sight with per-user linear phase drift: each user's phase
    /// advances by a per-drop rate drawn uniformly from
    /// `[-max_rad_per_block, max_rad_per_block]`.
    LosDrift { max_rad_per_block: f64 },
    /// Independent zero-mean complex Gaussian gain per block with variance
    /// `beta`.
    Rayleigh,
}

/// One drop's channel gains for the two users over `I` coherence blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    beta: [f64; 2],
    gains: [Vec<Complex64>; 2],
    model: ChannelModel,
}

impl ChannelRealization {
    /// Wraps externally produced gains, enforcing the model's magnitude
    /// structure (`|g| = sqrt(beta)` for the line-of-sight variants).
    pub fn from_gains(
        beta: [f64; 2],
        gains: [Vec<Complex64>; 2],
        model: ChannelModel,
    ) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::invalid("path losses must be finite and >= 0"));
        }
        if gains[0].len() != gains[1].len() || gains[0].is_empty() {
            return Err(Error::dimensions(
                "both users need the same nonzero number of per-block gains",
            ));
        }
        if !matches!(model, ChannelModel::Rayleigh) {
            for (user, user_gains) in gains.iter().enumerate() {
                let magnitude = beta[user].sqrt();
                if user_gains.iter().any(|g| (g.norm() - magnitude).abs() > 1e-9) {
                    return Err(Error::invalid(format!(
                        "line-of-sight gains for user {user} must have magnitude sqrt(beta)"
                    )));
                }
            }
        }
        Ok(Self { beta, gains, model })
    }

    pub fn beta(&self, user: usize) -> f64 {
        self.beta[user]
    }

    pub fn gain(&self, user: usize, block: usize) -> Complex64 {
        self.gains[user][block]
    }

    pub fn gains(&self, user: usize) -> &[Complex64] {
        &self.gains[user]
    }

    pub fn block_count(&self) -> usize {
        self.gains[0].len()
    }

    pub fn model(&self) -> ChannelModel {
        self.model
    }
}

/// Draws one channel realization for path losses `beta1`, `beta2` over
/// `block_count` blocks. Identical seeds reproduce identical realizations.
pub fn generate_channel(
    beta1: f64,
    beta2: f64,
    block_count: usize,
    model: ChannelModel,
    seed: u64,
) -> Result<ChannelRealization> {
    if block_count == 0 {
        return Err(Error::invalid("block count must be at least 1"));
    }
    if !beta1.is_finite() || !beta2.is_finite() || beta1 < 0.0 || beta2 < 0.0 {
        return Err(Error::invalid("path losses must be finite and >= 0"));
    }
    if let ChannelModel::LosDrift { max_rad_per_block } = model {
        if !max_rad_per_block.is_finite() || max_rad_per_block < 0.0 {
            return Err(Error::invalid("drift rate bound must be finite and >= 0"));
        }
    }
    let beta = [beta1, beta2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains = match model {
        ChannelModel::Los => beta.map(|b| {
            let magnitude = b.sqrt();
            let theta = rng.random_range(-PI..=PI);
            vec![Complex64::from_polar(magnitude, theta); block_count]
        }),
        ChannelModel::LosDrift { max_rad_per_block } => beta.map(|b| {
            let magnitude = b.sqrt();
            let theta = rng.random_range(-PI..=PI);
            let rate = rng.random_range(-max_rad_per_block..=max_rad_per_block);
            (0..block_count)
                .map(|i| Complex64::from_polar(magnitude, theta + rate * i as f64))
                .collect()
        }),
        ChannelModel::Rayleigh => beta.map(|b| {
            let scale = (b * 0.5).sqrt();
            (0..block_count)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(scale * re, scale * im)
                })
                .collect()
        }),
    };
    ChannelRealization::from_gains(beta, gains, model)
}

fn validate_tx(
    channel: &ChannelRealization,
    book: &PilotBook,
    assignments: &[PilotAssignment; 2],
    rho_p: f64,
) -> Result<()> {
    if !(rho_p > 0.0 && rho_p.is_finite()) {
        return Err(Error::invalid("pilot power rho_p must be positive and finite"));
    }
    if assignments[0].user() != 0 || assignments[1].user() != 1 {
        return Err(Error::invalid(
            "assignments must be ordered [reference user, rotating user]",
        ));
    }
    for assignment in assignments {
        if assignment.pilot() >= book.tau_p() {
            return Err(Error::invalid(format!(
                "pilot index {} out of range for book of size {}",
                assignment.pilot(),
                book.tau_p()
            )));
        }
        if assignment.schedule().block_count() != channel.block_count() {
            return Err(Error::dimensions(format!(
                "schedule spans {} blocks but the channel spans {}",
                assignment.schedule().block_count(),
                channel.block_count()
            )));
        }
    }
    Ok(())
}

fn synthesize(
    channel: &ChannelRealization,
    book: &PilotBook,
    assignments: &[PilotAssignment; 2],
    rho_p: f64,
    noise_rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Vec<Complex64>>> {
    validate_tx(channel, book, assignments, rho_p)?;
    let tau_p = book.tau_p();
    let amplitude = (rho_p * tau_p as f64).sqrt();
    let mut received = match noise_rng {
        Some(rng) => (0..channel.block_count())
            .map(|_| {
                (0..tau_p)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(re, im) * FRAC_1_SQRT_2
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>(),
        None => vec![vec![Complex64::ZERO; tau_p]; channel.block_count()],
    };
    for assignment in assignments {
        let sequence = book.sequence(assignment.pilot())?;
        for (block, row) in received.iter_mut().enumerate() {
            let weight = amplitude
                * channel.gain(assignment.user(), block)
                * assignment.schedule().rotation(block);
            for (entry, chip) in row.iter_mut().zip(sequence) {
                *entry += weight * chip;
            }
        }
    }
    Ok(received)
}

/// Synthesizes the received pilot vectors for every block: superimposed
/// rotated pilots from both users at power `rho_p`, plus unit-variance
/// complex Gaussian noise per entry drawn from `seed`.
pub fn received_pilot_signal(
    channel: &ChannelRealization,
    book: &PilotBook,
    assignments: &[PilotAssignment; 2],
    rho_p: f64,
    seed: u64,
) -> Result<Vec<Vec<Complex64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize(channel, book, assignments, rho_p, Some(&mut rng))
}

/// Same synthesis with the noise term forced to zero.
pub fn received_pilot_signal_noiseless(
    channel: &ChannelRealization,
    book: &PilotBook,
    assignments: &[PilotAssignment; 2],
    rho_p: f64,
) -> Result<Vec<Vec<Complex64>>> {
    synthesize(channel, book, assignments, rho_p, None)
}

/// Per-block scalar observations obtained by projecting the received vectors
/// onto one pilot sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DespreadObservation {
    values: Vec<Complex64>,
    rho_p: f64,
    tau_p: usize,
}

impl DespreadObservation {
    /// Wraps raw de-spread values together with the transmit parameters they
    /// were produced under.
    pub fn from_values(values: Vec<Complex64>, rho_p: f64, tau_p: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("need at least one observation"));
        }
        if !(rho_p > 0.0 && rho_p.is_finite()) {
            return Err(Error::invalid("pilot power rho_p must be positive and finite"));
        }
        if tau_p == 0 {
            return Err(Error::invalid("pilot length tau_p must be at least 1"));
        }
        Ok(Self {
            values,
            rho_p,
            tau_p,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn block_count(&self) -> usize {
        self.values.len()
    }

    pub fn rho_p(&self) -> f64 {
        self.rho_p
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    /// Squared magnitudes rescaled to the unit-power convention
    /// (`|y|^2 / rho_p`), the form consumed by the likelihood.
    pub fn normalized_squared_magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|y| y.norm_sqr() / self.rho_p).collect()
    }

    /// Variance of the additive noise term after the unit-power rescaling:
    /// `1 / (rho_p * tau_p)`.
    pub fn noise_variance(&self) -> f64 {
        1.0 / (self.rho_p * self.tau_p as f64)
    }

    /// Header for per-drop trace dumps.
    pub fn trace_csv_header() -> &'static str {
        "drop,block,re(y),im(y),|y|2"
    }

    /// CSV rows (no header) tracing the raw observations of one drop.
    pub fn trace_csv_rows(&self, drop: usize) -> String {
        let mut out = String::new();
        for (block, y) in self.values.iter().enumerate() {
            out.push_str(&format!(
                "{drop},{block},{},{},{}\n",
                y.re,
                y.im,
                y.norm_sqr()
            ));
        }
        out
    }
}

/// Projects each block's received vector onto pilot `pilot`, scaling by
/// `1/sqrt(tau_p)` so the noise term keeps variance `1/tau_p`.
pub fn despread(
    received: &[Vec<Complex64>],
    book: &PilotBook,
    pilot: usize,
    rho_p: f64,
) -> Result<DespreadObservation> {
    let sequence = book.sequence(pilot)?;
    if received.is_empty() {
        return Err(Error::invalid("need at least one received block"));
    }
    if received.iter().any(|row| row.len() != book.tau_p()) {
        return Err(Error::dimensions(
            "every received block must have tau_p entries",
        ));
    }
    let scale = 1.0 / (book.tau_p() as f64).sqrt();
    let values = received
        .iter()
        .map(|row| {
            scale
                * row
                    .iter()
                    .zip(sequence)
                    .map(|(y, chip)| chip.conj() * y)
                    .sum::<Complex64>()
        })
        .collect();
    DespreadObservation::from_values(values, rho_p, book.tau_p())
}
