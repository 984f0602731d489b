//! Monte Carlo evaluation of the path-loss estimator over scenario sweeps.
//!
//! A scenario fixes the phase scheme, both users' large-scale SNRs, the
//! block count, and a master seed. Every drop draws a fresh channel, a
//! fresh noise realization, and (for the pseudo-random scheme) a fresh
//! schedule from per-drop substreams of the master seed, runs the full
//! synthesize/de-spread/estimate pipeline, and contributes one squared
//! relative error per user. Drops are independent, so they run in parallel
//! with the `parallel` feature; per-drop results are collected in drop
//! order and reduced with compensated summation, which makes every reported
//! number identical for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::channel::{
    despread, generate_channel, received_pilot_signal, received_pilot_signal_noiseless,
    ChannelModel, DespreadObservation,
};
use crate::error::{Error, Result};
use crate::estimator::{db_to_linear, ml_grid_search, PathLossEstimate, SearchGrid};
use crate::likelihood::{marginal_pdf, LikelihoodParams, QuadratureRule};
use crate::pilot::{PhaseSchedule, PilotAssignment, PilotBook, Scheme};

/// Substream purposes fanned out from the master seed.
const PURPOSE_CHANNEL: u64 = 0;
const PURPOSE_NOISE: u64 = 1;
const PURPOSE_SCHEDULE: u64 = 2;

/// Reference SNR and block count of the path-loss-gap sweep.
pub const FIG1_REFERENCE_SNR_DB: f64 = 20.0;
pub const FIG1_BLOCK_COUNT: usize = 10;
/// Second-user SNR excess over the reference, in dB.
pub const FIG1_GAPS_DB: [f64; 11] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

/// Block counts of the block-count sweep (run at 20 dB for both users).
pub const FIG2_BLOCK_COUNTS: [usize; 6] = [2, 5, 10, 20, 30, 50];
/// Equal-SNR values of the SNR sweep (run at 10 blocks).
pub const FIG2_SNRS_DB: [f64; 8] = [-10.0, -5.0, 0.0, 3.0, 5.0, 10.0, 15.0, 20.0];

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-drop substream seed: the master seed, drop index, and
/// purpose tag are mixed through chained SplitMix64 finalizers, so each
/// (drop, purpose) pair gets an independent, reproducible stream no matter
/// how drops are scheduled across threads.
pub fn substream_seed(master: u64, drop: u64, purpose: u64) -> u64 {
    let h = splitmix(master ^ 0x9E37_79B9_7F4A_7C15);
    let h = splitmix(h ^ drop.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix(h ^ purpose.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
}

/// Full description of one Monte Carlo scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scheme: Scheme,
    /// First user's large-scale SNR in dB; the linear path loss is
    /// `10^(snr/10)` under the unit pilot-power convention.
    pub snr1_db: f64,
    pub snr2_db: f64,
    /// Coherence blocks per drop.
    pub block_count: usize,
    pub drops: usize,
    pub seed: u64,
    pub grid: SearchGrid,
    pub quad_nodes: usize,
    pub rho_p: f64,
    pub tau_p: usize,
    pub pilot_index: usize,
    pub channel_model: ChannelModel,
    /// Suppress the additive noise term (exact-recovery checks).
    pub noiseless: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Structured,
            snr1_db: 20.0,
            snr2_db: 20.0,
            block_count: 10,
            drops: 500,
            seed: 1,
            grid: SearchGrid::default_db(),
            quad_nodes: crate::estimator::DEFAULT_QUAD_NODES,
            rho_p: 1.0,
            tau_p: 1,
            pilot_index: 0,
            channel_model: ChannelModel::Los,
            noiseless: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_count == 0 {
            return Err(Error::invalid("block_count must be at least 1"));
        }
        if self.drops == 0 {
            return Err(Error::invalid("drops must be at least 1"));
        }
        if self.quad_nodes < 2 {
            return Err(Error::invalid("quad_nodes must be at least 2"));
        }
        if !self.snr1_db.is_finite() || !self.snr2_db.is_finite() {
            return Err(Error::invalid("snr1_db and snr2_db must be finite"));
        }
        if !(self.rho_p > 0.0) || !self.rho_p.is_finite() {
            return Err(Error::invalid("rho_p must be positive and finite"));
        }
        if self.tau_p == 0 {
            return Err(Error::invalid("tau_p must be at least 1"));
        }
        if self.pilot_index >= self.tau_p {
            return Err(Error::invalid("pilot_index must be less than tau_p"));
        }
        for (name, snr) in [("snr1_db", self.snr1_db), ("snr2_db", self.snr2_db)] {
            if snr < self.grid.min_db() || snr > self.grid.max_db() {
                return Err(Error::invalid(format!(
                    "{name} = {snr} lies outside the search grid span [{}, {}]",
                    self.grid.min_db(),
                    self.grid.max_db()
                )));
            }
        }
        Ok(())
    }

    /// True linear path losses implied by the configured SNRs.
    pub fn betas(&self) -> [f64; 2] {
        [db_to_linear(self.snr1_db), db_to_linear(self.snr2_db)]
    }

    fn schedule(&self, drop: u64) -> Result<PhaseSchedule> {
        match self.scheme {
            Scheme::Structured => PhaseSchedule::structured(self.block_count),
            Scheme::PseudoRandom => PhaseSchedule::pseudo_random(
                self.block_count,
                substream_seed(self.seed, drop, PURPOSE_SCHEDULE),
            ),
            Scheme::Canonical => PhaseSchedule::canonical(self.block_count),
        }
    }
}

/// Everything produced by one Monte Carlo drop.
#[derive(Debug, Clone, PartialEq)]
pub struct DropOutcome {
    pub observation: DespreadObservation,
    pub estimate: PathLossEstimate,
    /// True linear path losses used for this drop.
    pub beta: [f64; 2],
    /// The second user's schedule for this drop.
    pub schedule: PhaseSchedule,
}

/// Runs the synthesize/de-spread/estimate pipeline for one drop of `config`.
pub fn simulate_drop(config: &ScenarioConfig, drop: u64) -> Result<DropOutcome> {
    let beta = config.betas();
    let channel = generate_channel(
        beta[0],
        beta[1],
        config.block_count,
        config.channel_model,
        substream_seed(config.seed, drop, PURPOSE_CHANNEL),
    )?;
    let schedule = config.schedule(drop)?;
    let book = PilotBook::dft(config.tau_p)?;
    let assignments = [
        PilotAssignment::reference(config.pilot_index, config.block_count)?,
        PilotAssignment::rotating(config.pilot_index, schedule.clone()),
    ];
    let received = if config.noiseless {
        received_pilot_signal_noiseless(&channel, &book, &assignments, config.rho_p)?
    } else {
        received_pilot_signal(
            &channel,
            &book,
            &assignments,
            config.rho_p,
            substream_seed(config.seed, drop, PURPOSE_NOISE),
        )?
    };
    let observation = despread(&received, &book, config.pilot_index, config.rho_p)?;
    let estimate = ml_grid_search(&observation, &config.grid, config.quad_nodes)?;
    Ok(DropOutcome {
        observation,
        estimate,
        beta,
        schedule,
    })
}

/// Per-user normalized mean squared error of the path-loss estimates over
/// all drops, with standard errors of each mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub nmse1: f64,
    pub nmse2: f64,
    /// Always `(nmse1 + nmse2) / 2`.
    pub mean_nmse: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    /// Standard error of the per-drop mean NMSE samples.
    pub stderr: f64,
    pub drops_used: usize,
    pub config: ScenarioConfig,
}

impl ScenarioResult {
    pub fn csv_header() -> &'static str {
        "scheme,snr1_db,snr2_db,I,drops,nmse1,nmse2,mean_nmse,stderr"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.config.scheme.label(),
            self.config.snr1_db,
            self.config.snr2_db,
            self.config.block_count,
            self.drops_used,
            self.nmse1,
            self.nmse2,
            self.mean_nmse,
            self.stderr
        )
    }
}

/// Serializes results under the stable scenario CSV header.
pub fn results_to_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from(ScenarioResult::csv_header());
    out.push('\n');
    for result in results {
        out.push_str(&result.csv_row());
        out.push('\n');
    }
    out
}

fn kahan_mean(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum / values.len() as f64
}

/// Standard error of the mean, from the compensated two-pass sample
/// variance; zero for a single sample.
fn stderr_of_mean(values: &[f64], mean: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let d = (v - mean) * (v - mean);
        let y = d - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    (sum / ((n - 1) as f64) / n as f64).sqrt()
}

fn summarize(config: &ScenarioConfig, outcomes: Vec<DropOutcome>) -> ScenarioResult {
    let squared_relative = |hat: f64, truth: f64| {
        let d = (hat - truth) / truth;
        d * d
    };
    let e1: Vec<f64> = outcomes
        .iter()
        .map(|o| squared_relative(o.estimate.beta1_hat, o.beta[0]))
        .collect();
    let e2: Vec<f64> = outcomes
        .iter()
        .map(|o| squared_relative(o.estimate.beta2_hat, o.beta[1]))
        .collect();
    let per_drop_mean: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 0.5 * (a + b)).collect();
    let nmse1 = kahan_mean(&e1);
    let nmse2 = kahan_mean(&e2);
    ScenarioResult {
        nmse1,
        nmse2,
        mean_nmse: 0.5 * (nmse1 + nmse2),
        stderr1: stderr_of_mean(&e1, nmse1),
        stderr2: stderr_of_mean(&e2, nmse2),
        stderr: stderr_of_mean(&per_drop_mean, kahan_mean(&per_drop_mean)),
        drops_used: outcomes.len(),
        config: config.clone(),
    }
}

/// Runs all drops of `config` (concurrently when the `parallel` feature is
/// enabled) and aggregates per-user NMSE. Results are bit-identical to
/// [`run_scenario_sequential`] for every thread count.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    let outcomes: Vec<DropOutcome> = (0..config.drops as u64)
        .into_par_iter()
        .map(|drop| simulate_drop(config, drop))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<DropOutcome> = (0..config.drops as u64)
        .map(|drop| simulate_drop(config, drop))
        .collect::<Result<_>>()?;
    Ok(summarize(config, outcomes))
}

/// Single-threaded reference path over the same per-drop substreams.
pub fn run_scenario_sequential(config: &ScenarioConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let outcomes: Vec<DropOutcome> = (0..config.drops as u64)
        .map(|drop| simulate_drop(config, drop))
        .collect::<Result<_>>()?;
    Ok(summarize(config, outcomes))
}

/// Path-loss-gap sweep: the first user stays at the 20 dB reference while
/// the second user's SNR runs 0 to 10 dB above it, for all three schemes at
/// 10 blocks. Scheme-major, gap-minor row order; every point reuses `base`'s
/// seed so compared points share their random numbers.
pub fn sweep_fig1(base: &ScenarioConfig) -> Result<Vec<ScenarioResult>> {
    let mut results = Vec::with_capacity(Scheme::ALL.len() * FIG1_GAPS_DB.len());
    for scheme in Scheme::ALL {
        for gap in FIG1_GAPS_DB {
            let config = ScenarioConfig {
                scheme,
                snr1_db: FIG1_REFERENCE_SNR_DB,
                snr2_db: FIG1_REFERENCE_SNR_DB + gap,
                block_count: FIG1_BLOCK_COUNT,
                ..base.clone()
            };
            results.push(run_scenario(&config)?);
        }
    }
    Ok(results)
}

/// Block-count sweep at 20 dB for both users, all three schemes.
pub fn sweep_fig2_left(base: &ScenarioConfig) -> Result<Vec<ScenarioResult>> {
    let mut results = Vec::with_capacity(Scheme::ALL.len() * FIG2_BLOCK_COUNTS.len());
    for scheme in Scheme::ALL {
        for block_count in FIG2_BLOCK_COUNTS {
            let config = ScenarioConfig {
                scheme,
                snr1_db: 20.0,
                snr2_db: 20.0,
                block_count,
                ..base.clone()
            };
            results.push(run_scenario(&config)?);
        }
    }
    Ok(results)
}

/// Equal-SNR sweep at 10 blocks, all three schemes.
pub fn sweep_fig2_right(base: &ScenarioConfig) -> Result<Vec<ScenarioResult>> {
    let mut results = Vec::with_capacity(Scheme::ALL.len() * FIG2_SNRS_DB.len());
    for scheme in Scheme::ALL {
        for snr_db in FIG2_SNRS_DB {
            let config = ScenarioConfig {
                scheme,
                snr1_db: snr_db,
                snr2_db: snr_db,
                block_count: 10,
                ..base.clone()
            };
            results.push(run_scenario(&config)?);
        }
    }
    Ok(results)
}

/// Both halves of the block-count/SNR figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Sweep {
    pub left: Vec<ScenarioResult>,
    pub right: Vec<ScenarioResult>,
}

pub fn sweep_fig2(base: &ScenarioConfig) -> Result<Fig2Sweep> {
    Ok(Fig2Sweep {
        left: sweep_fig2_left(base)?,
        right: sweep_fig2_right(base)?,
    })
}

/// Draws `count` squared-magnitude observation samples through the full
/// synthesize/de-spread pipeline of `config` (no estimation), normalized by
/// the pilot power. Used to compare the simulated law against the evaluated
/// density.
pub fn sample_squared_magnitudes(config: &ScenarioConfig, count: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let mut samples = Vec::with_capacity(count);
    let mut drop = 0u64;
    while samples.len() < count {
        let beta = config.betas();
        let channel = generate_channel(
            beta[0],
            beta[1],
            config.block_count,
            config.channel_model,
            substream_seed(config.seed, drop, PURPOSE_CHANNEL),
        )?;
        let schedule = config.schedule(drop)?;
        let book = PilotBook::dft(config.tau_p)?;
        let assignments = [
            PilotAssignment::reference(config.pilot_index, config.block_count)?,
            PilotAssignment::rotating(config.pilot_index, schedule),
        ];
        let received = if config.noiseless {
            received_pilot_signal_noiseless(&channel, &book, &assignments, config.rho_p)?
        } else {
            received_pilot_signal(
                &channel,
                &book,
                &assignments,
                config.rho_p,
                substream_seed(config.seed, drop, PURPOSE_NOISE),
            )?
        };
        let observation = despread(&received, &book, config.pilot_index, config.rho_p)?;
        samples.extend(observation.normalized_squared_magnitudes());
        drop += 1;
    }
    samples.truncate(count);
    Ok(samples)
}

/// Marginal density of the observation law implied by `config`, evaluated
/// with the scenario's own quadrature size.
pub fn scenario_marginal_pdf(config: &ScenarioConfig, t: f64) -> Result<f64> {
    let beta = config.betas();
    let params = LikelihoodParams::new(beta[0], beta[1])?.with_noise_variance(
        1.0 / (config.rho_p * config.tau_p as f64),
    )?;
    let rule = QuadratureRule::for_params(&params, config.quad_nodes)?;
    Ok(marginal_pdf(t, &params, &rule))
}
