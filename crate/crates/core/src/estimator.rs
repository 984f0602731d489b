//! Maximum-likelihood path-loss search and MMSE channel estimation.
//!
//! The path losses of both colliding users are recovered by scanning a dB
//! grid of hypothesis pairs, evaluating the marginal log-likelihood of the
//! de-spread observation magnitudes at every cell, and refining around the
//! coarse argmax on a finer dB lattice clipped to the grid span. The point
//! estimates then feed linear MMSE per-block channel estimation, which also
//! reports the per-user estimation quality.
//!
//! The marginal law of an observation is symmetric under swapping the two
//! hypothesized path losses, but the quadrature places its nodes along the
//! first user's amplitude, so the two orderings of one hypothesis pair
//! evaluate to slightly different numbers. Every surface cell therefore
//! averages both orderings: mirrored cells become exactly equal (floating
//! point addition commutes) and the deterministic lexicographic tie-break
//! resolves the orientation instead of quadrature round-off.

use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::channel::DespreadObservation;
use crate::error::{Error, Result};
use crate::likelihood::{marginal_pdf, LikelihoodParams, QuadratureRule, PDF_FLOOR};
use crate::pilot::PhaseSchedule;

/// Default number of quadrature nodes for likelihood evaluation.
pub const DEFAULT_QUAD_NODES: usize = 64;

/// Half-width of the refinement window around the coarse argmax, in dB.
const REFINE_HALF_WIDTH_DB: f64 = 1.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(0.1 * db)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Hypothesis grid for the path-loss search: one ordered list of dB values
/// shared by both axes, plus the refinement lattice spacing. A
/// `refine_step_db <= 0` disables the refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    values_db: Vec<f64>,
    refine_step_db: f64,
}

impl SearchGrid {
    pub fn new(values_db: Vec<f64>, refine_step_db: f64) -> Result<Self> {
        if values_db.is_empty() {
            return Err(Error::invalid("search grid needs at least one dB value"));
        }
        if values_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("search grid values must be finite"));
        }
        if values_db.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("search grid values must be strictly increasing"));
        }
        if refine_step_db.is_nan() {
            return Err(Error::invalid("refine_step_db must not be NaN"));
        }
        Ok(Self {
            values_db,
            refine_step_db,
        })
    }

    /// Uniform grid from `min_db` to `max_db` inclusive in `step_db` strides.
    pub fn from_range_db(
        min_db: f64,
        max_db: f64,
        step_db: f64,
        refine_step_db: f64,
    ) -> Result<Self> {
        if !(step_db > 0.0) || !step_db.is_finite() {
            return Err(Error::invalid("grid step must be positive and finite"));
        }
        if !min_db.is_finite() || !max_db.is_finite() || max_db < min_db {
            return Err(Error::invalid("grid range must be finite with max >= min"));
        }
        let count = ((max_db - min_db) / step_db + 1e-9).floor() as usize + 1;
        let values = (0..count).map(|k| min_db + k as f64 * step_db).collect();
        Self::new(values, refine_step_db)
    }

    /// The default search: -20 dB to +40 dB in 1 dB steps, refined at 0.1 dB.
    pub fn default_db() -> Self {
        Self::from_range_db(-20.0, 40.0, 1.0, 0.1).expect("default grid is valid")
    }

    pub fn values_db(&self) -> &[f64] {
        &self.values_db
    }

    pub fn refine_step_db(&self) -> f64 {
        self.refine_step_db
    }

    pub fn min_db(&self) -> f64 {
        self.values_db[0]
    }

    pub fn max_db(&self) -> f64 {
        *self.values_db.last().expect("grid is nonempty")
    }
}

/// Log-likelihood evaluated over a rectangle of hypothesis pairs, stored
/// row-major: rows scan the first-user axis, columns the second-user axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSurface {
    beta1_db: Vec<f64>,
    beta2_db: Vec<f64>,
    loglik: Vec<f64>,
}

impl LikelihoodSurface {
    pub fn from_values(beta1_db: Vec<f64>, beta2_db: Vec<f64>, loglik: Vec<f64>) -> Result<Self> {
        if beta1_db.is_empty() || beta2_db.is_empty() {
            return Err(Error::invalid("surface axes must be nonempty"));
        }
        if loglik.len() != beta1_db.len() * beta2_db.len() {
            return Err(Error::dimensions(format!(
                "surface has {} values for a {} x {} grid",
                loglik.len(),
                beta1_db.len(),
                beta2_db.len()
            )));
        }
        Ok(Self {
            beta1_db,
            beta2_db,
            loglik,
        })
    }

    pub fn beta1_db(&self) -> &[f64] {
        &self.beta1_db
    }

    pub fn beta2_db(&self) -> &[f64] {
        &self.beta2_db
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.loglik[i * self.beta2_db.len() + j]
    }

    /// Indices of the maximizing cell. Ties resolve to the smallest
    /// `(beta1, beta2)` pair in lexicographic order, which in row-major
    /// storage is simply the first cell attaining the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &v) in self.loglik.iter().enumerate() {
            if v > self.loglik[best] {
                best = k;
            }
        }
        (best / self.beta2_db.len(), best % self.beta2_db.len())
    }

    /// Serializes the surface row-major as `beta1_db,beta2_db,loglik` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta1_db,beta2_db,loglik\n");
        for (i, &b1) in self.beta1_db.iter().enumerate() {
            for (j, &b2) in self.beta2_db.iter().enumerate() {
                out.push_str(&format!("{b1},{b2},{}\n", self.value(i, j)));
            }
        }
        out
    }
}

/// Joint maximum-likelihood point estimate of both path losses (linear
/// scale) and the log-likelihood attained there, where a point's
/// log-likelihood is the mean of its two hypothesis-ordering evaluations
/// (the surface cell value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossEstimate {
    pub beta1_hat: f64,
    pub beta2_hat: f64,
    pub loglik: f64,
}

/// Per-block linear MMSE channel estimates for both users, after removing
/// the second user's known pilot rotation, together with the per-user
/// estimation quality `gamma_k = E[|g_hat|^2] <= beta_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    estimates: [Vec<Complex64>; 2],
    gamma: [f64; 2],
}

impl ChannelEstimate {
    pub fn estimate(&self, user: usize) -> &[Complex64] {
        &self.estimates[user]
    }

    pub fn gamma(&self, user: usize) -> f64 {
        self.gamma[user]
    }

    pub fn block_count(&self) -> usize {
        self.estimates[0].len()
    }
}

/// Log-likelihood of one observation vector for every hypothesis pair on
/// `row_db` x `col_db`. Each cell is the average of the two orderings of its
/// hypothesis pair, so `value(i, j)` and `value(j, i)` are exactly equal
/// wherever both exist and the tie-break owns the orientation.
fn evaluate_surface_axes(
    observations: &DespreadObservation,
    row_db: &[f64],
    col_db: &[f64],
    quad_nodes: usize,
) -> Result<LikelihoodSurface> {
    validate_axis(row_db)?;
    validate_axis(col_db)?;
    let ts = observations.normalized_squared_magnitudes();
    let noise_variance = observations.noise_variance();
    let forward = likelihood_matrix(&ts, row_db, col_db, noise_variance, quad_nodes)?;
    // The mirror pass with the axes exchanged supplies each cell's other
    // ordering; for a square surface it is the same matrix transposed.
    let mirror = if row_db == col_db {
        None
    } else {
        Some(likelihood_matrix(
            &ts,
            col_db,
            row_db,
            noise_variance,
            quad_nodes,
        )?)
    };
    let mirror = mirror.as_ref().unwrap_or(&forward);
    let mut loglik = Vec::with_capacity(row_db.len() * col_db.len());
    for (i, row) in forward.iter().enumerate() {
        for (j, &value) in row.iter().enumerate() {
            loglik.push(0.5 * (value + mirror[j][i]));
        }
    }
    LikelihoodSurface::from_values(row_db.to_vec(), col_db.to_vec(), loglik)
}

/// Single-ordering evaluation over `row_db` x `col_db`. Rows share a
/// quadrature rule (it depends only on the row hypothesis), and with the
/// `parallel` feature enabled rows are evaluated concurrently; results are
/// position-collected, so the output is identical for any thread count.
fn likelihood_matrix(
    ts: &[f64],
    row_db: &[f64],
    col_db: &[f64],
    noise_variance: f64,
    quad_nodes: usize,
) -> Result<Vec<Vec<f64>>> {
    let row =
        |&db1: &f64| -> Result<Vec<f64>> { row_log_likelihoods(ts, db1, col_db, noise_variance, quad_nodes) };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = row_db.par_iter().map(row).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = row_db.iter().map(row).collect::<Result<_>>()?;
    Ok(rows)
}

fn validate_axis(axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::invalid("surface axis must be nonempty"));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("surface axis values must be finite"));
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("surface axis must be strictly increasing"));
    }
    Ok(())
}

/// One surface row: the first-user hypothesis is fixed, so the Rice
/// quadrature is built once and reused across every second-user column.
fn row_log_likelihoods(
    ts: &[f64],
    db1: f64,
    col_db: &[f64],
    noise_variance: f64,
    quad_nodes: usize,
) -> Result<Vec<f64>> {
    let beta1 = db_to_linear(db1);
    let probe = LikelihoodParams::new(beta1, 0.0)?.with_noise_variance(noise_variance)?;
    let rule = QuadratureRule::for_params(&probe, quad_nodes)?;
    col_db
        .iter()
        .map(|&db2| {
            let params =
                LikelihoodParams::new(beta1, db_to_linear(db2))?.with_noise_variance(noise_variance)?;
            Ok(cell_log_likelihood(ts, &params, &rule))
        })
        .collect()
}

/// Score of one hypothesis ordering, kept as the single scoring routine so
/// the surface, the refinement pass, and any external re-evaluation agree
/// bit for bit: a cell's stored value is the mean of this ordering and the
/// swapped one.
fn cell_log_likelihood(ts: &[f64], params: &LikelihoodParams, rule: &QuadratureRule) -> f64 {
    ts.iter()
        .map(|&t| marginal_pdf(t, params, rule).max(PDF_FLOOR).ln())
        .sum()
}

/// Evaluates the joint log-likelihood over `values_db` x `values_db`.
pub fn evaluate_surface(
    observations: &DespreadObservation,
    values_db: &[f64],
    quad_nodes: usize,
) -> Result<LikelihoodSurface> {
    evaluate_surface_axes(observations, values_db, values_db, quad_nodes)
}

fn estimate_from(surface: &LikelihoodSurface) -> PathLossEstimate {
    let (i, j) = surface.argmax();
    PathLossEstimate {
        beta1_hat: db_to_linear(surface.beta1_db()[i]),
        beta2_hat: db_to_linear(surface.beta2_db()[j]),
        loglik: surface.value(i, j),
    }
}

/// Single coarse pass over the full grid, no refinement.
pub fn coarse_search(
    observations: &DespreadObservation,
    grid: &SearchGrid,
    quad_nodes: usize,
) -> Result<PathLossEstimate> {
    let surface = evaluate_surface(observations, grid.values_db(), quad_nodes)?;
    Ok(estimate_from(&surface))
}

/// Refinement axis: `center_db` plus multiples of `step_db` out to the
/// window half-width, clipped to the coarse grid span so a singleton grid
/// refines to itself.
fn refine_axis(center_db: f64, step_db: f64, min_db: f64, max_db: f64) -> Vec<f64> {
    let reach = (REFINE_HALF_WIDTH_DB / step_db + 1e-9).floor() as i64;
    (-reach..=reach)
        .map(|k| center_db + k as f64 * step_db)
        .filter(|&v| v >= min_db - 1e-12 && v <= max_db + 1e-12)
        .collect()
}

/// Two-stage maximum-likelihood search: coarse argmax over the full grid,
/// then a refined argmax on the `refine_step_db` lattice within one dB of
/// the coarse winner (clipped to the grid span). Ties at either stage
/// resolve to the lexicographically smallest hypothesis pair; since mirrored
/// cells tie exactly, equal-score orientations consistently come back with
/// `beta1_hat <= beta2_hat`.
pub fn ml_grid_search(
    observations: &DespreadObservation,
    grid: &SearchGrid,
    quad_nodes: usize,
) -> Result<PathLossEstimate> {
    let coarse = evaluate_surface(observations, grid.values_db(), quad_nodes)?;
    let (i, j) = coarse.argmax();
    let step = grid.refine_step_db();
    if step <= 0.0 {
        return Ok(estimate_from(&coarse));
    }
    let axis1 = refine_axis(coarse.beta1_db()[i], step, grid.min_db(), grid.max_db());
    let axis2 = refine_axis(coarse.beta2_db()[j], step, grid.min_db(), grid.max_db());
    let refined = evaluate_surface_axes(observations, &axis1, &axis2, quad_nodes)?;
    Ok(estimate_from(&refined))
}

/// Removes a known per-block pilot rotation from `values`.
pub fn de_rotate(values: &[Complex64], schedule: &PhaseSchedule) -> Result<Vec<Complex64>> {
    if values.len() != schedule.block_count() {
        return Err(Error::dimensions(format!(
            "{} values against a {}-block schedule",
            values.len(),
            schedule.block_count()
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, y)| y * schedule.rotation(i).conj())
        .collect())
}

/// Per-block linear MMSE channel estimation for both users given path
/// losses (true or estimated). The second user is estimated against its
/// rotated effective channel and de-rotated before being returned, so both
/// outputs estimate the underlying block-constant gains.
pub fn mmse_channel_estimate(
    observations: &DespreadObservation,
    beta1: f64,
    beta2: f64,
    schedule: &PhaseSchedule,
) -> Result<ChannelEstimate> {
    if !(beta1 >= 0.0) || !beta1.is_finite() || !(beta2 >= 0.0) || !beta2.is_finite() {
        return Err(Error::invalid("path losses must be finite and >= 0"));
    }
    if schedule.block_count() != observations.block_count() {
        return Err(Error::dimensions(format!(
            "{}-block schedule against {} observation blocks",
            schedule.block_count(),
            observations.block_count()
        )));
    }
    let rho = observations.rho_p();
    let tau = observations.tau_p() as f64;
    let denom = rho * tau * (beta1 + beta2) + 1.0;
    let c1 = rho.sqrt() * tau * beta1 / denom;
    let c2 = rho.sqrt() * tau * beta2 / denom;
    let first = observations.values().iter().map(|y| y * c1).collect();
    let rotated: Vec<Complex64> = observations.values().iter().map(|y| y * c2).collect();
    let second = de_rotate(&rotated, schedule)?;
    let gamma = [
        rho * tau * beta1 * beta1 / denom,
        rho * tau * beta2 * beta2 / denom,
    ];
    Ok(ChannelEstimate {
        estimates: [first, second],
        gamma,
    })
}

/// Plug-in pipeline: maximum-likelihood path losses feed the MMSE channel
/// estimator. Callers with side knowledge of the true path losses can call
/// [`mmse_channel_estimate`] directly instead.
pub fn plug_in_channel_estimate(
    observations: &DespreadObservation,
    grid: &SearchGrid,
    quad_nodes: usize,
    schedule: &PhaseSchedule,
) -> Result<(PathLossEstimate, ChannelEstimate)> {
    let path_loss = ml_grid_search(observations, grid, quad_nodes)?;
    let channels = mmse_channel_estimate(
        observations,
        path_loss.beta1_hat,
        path_loss.beta2_hat,
        schedule,
    )?;
    Ok((path_loss, channels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        generate_channel, received_pilot_signal_noiseless, ChannelModel,
    };
    use crate::likelihood::log_likelihood;
    use crate::pilot::{PilotAssignment, PilotBook, Scheme};

    #[test]
    fn default_grid_shape() {
        let grid = SearchGrid::default_db();
        assert_eq!(grid.values_db().len(), 61);
        assert_eq!(grid.min_db(), -20.0);
        assert_eq!(grid.max_db(), 40.0);
        assert!(grid
            .values_db()
            .windows(2)
            .all(|w| (w[1] - w[0] - 1.0).abs() < 1e-12));
        assert_eq!(grid.refine_step_db(), 0.1);
    }

    #[test]
    fn grid_rejects_bad_values() {
        assert!(SearchGrid::new(vec![], 0.1).is_err());
        assert!(SearchGrid::new(vec![0.0, 0.0], 0.1).is_err());
        assert!(SearchGrid::new(vec![1.0, 0.0], 0.1).is_err());
        assert!(SearchGrid::new(vec![0.0, f64::NAN], 0.1).is_err());
        assert!(SearchGrid::new(vec![0.0], f64::NAN).is_err());
        assert!(SearchGrid::from_range_db(0.0, -1.0, 1.0, 0.1).is_err());
        assert!(SearchGrid::from_range_db(0.0, 1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn range_grid_counts_inclusive_endpoints() {
        let grid = SearchGrid::from_range_db(0.0, 2.0, 0.5, 0.1).unwrap();
        assert_eq!(grid.values_db(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let single = SearchGrid::from_range_db(20.0, 20.0, 1.0, 0.1).unwrap();
        assert_eq!(single.values_db(), &[20.0]);
    }

    #[test]
    fn db_conversions_round_trip() {
        for db in [-20.0, -3.0, 0.0, 10.0, 20.0, 40.0] {
            assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-12);
        }
        assert!((db_to_linear(20.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn surface_layout_and_argmax_tie_breaking() {
        // 2 x 3 surface with the max attained twice: cells (0,2) and (1,0).
        let surface = LikelihoodSurface::from_values(
            vec![0.0, 1.0],
            vec![0.0, 1.0, 2.0],
            vec![-5.0, -4.0, -1.0, -1.0, -9.0, -2.0],
        )
        .unwrap();
        assert_eq!(surface.value(0, 2), -1.0);
        assert_eq!(surface.value(1, 0), -1.0);
        // Lexicographically smallest pair wins the tie.
        assert_eq!(surface.argmax(), (0, 2));
    }

    #[test]
    fn surface_argmax_is_shift_invariant() {
        let base = vec![-5.0, -4.0, -1.5, -7.0, -9.0, -2.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.25).collect();
        let a = LikelihoodSurface::from_values(vec![0.0, 1.0], vec![0.0, 1.0, 2.0], base).unwrap();
        let b =
            LikelihoodSurface::from_values(vec![0.0, 1.0], vec![0.0, 1.0, 2.0], shifted).unwrap();
        assert_eq!(a.argmax(), b.argmax());
    }

    #[test]
    fn surface_csv_format() {
        let surface = LikelihoodSurface::from_values(
            vec![-1.0, 0.0],
            vec![2.0],
            vec![-3.5, -4.25],
        )
        .unwrap();
        assert_eq!(
            surface.to_csv(),
            "beta1_db,beta2_db,loglik\n-1,2,-3.5\n0,2,-4.25\n"
        );
    }

    #[test]
    fn surface_rejects_dimension_mismatch() {
        assert!(LikelihoodSurface::from_values(vec![0.0], vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(LikelihoodSurface::from_values(vec![], vec![0.0], vec![]).is_err());
    }

    #[test]
    fn refine_axis_is_clipped_to_the_span() {
        let axis = refine_axis(20.0, 0.1, -20.0, 40.0);
        assert_eq!(axis.len(), 21);
        assert!((axis[0] - 19.0).abs() < 1e-12);
        assert!((axis[20] - 21.0).abs() < 1e-12);
        assert!(axis.contains(&20.0));
        // Center on the boundary: only inward offsets survive.
        let edge = refine_axis(-20.0, 0.1, -20.0, 40.0);
        assert_eq!(edge.len(), 11);
        assert_eq!(edge[0], -20.0);
        // Singleton span refines to itself.
        assert_eq!(refine_axis(20.0, 0.1, 20.0, 20.0), vec![20.0]);
    }

    fn noiseless_observation(
        beta1: f64,
        beta2: f64,
        blocks: usize,
        scheme: Scheme,
        seed: u64,
    ) -> (crate::channel::DespreadObservation, PhaseSchedule) {
        let tau_p = 4;
        let book = PilotBook::dft(tau_p).unwrap();
        let channel =
            generate_channel(beta1, beta2, blocks, ChannelModel::Los, seed).unwrap();
        let schedule = match scheme {
            Scheme::Structured => PhaseSchedule::structured(blocks).unwrap(),
            Scheme::PseudoRandom => PhaseSchedule::pseudo_random(blocks, seed ^ 0xa5).unwrap(),
            Scheme::Canonical => PhaseSchedule::canonical(blocks).unwrap(),
        };
        let assignments = [
            PilotAssignment::reference(1, blocks).unwrap(),
            PilotAssignment::rotating(1, schedule.clone()),
        ];
        let received =
            received_pilot_signal_noiseless(&channel, &book, &assignments, 1.0).unwrap();
        let obs = crate::channel::despread(&received, &book, 1, 1.0).unwrap();
        (obs, schedule)
    }

    #[test]
    fn singleton_grid_returns_the_true_point() {
        let (obs, _) = noiseless_observation(100.0, 100.0, 10, Scheme::Structured, 11);
        let grid = SearchGrid::new(vec![20.0], 0.1).unwrap();
        let estimate = ml_grid_search(&obs, &grid, DEFAULT_QUAD_NODES).unwrap();
        assert_eq!(estimate.beta1_hat, db_to_linear(20.0));
        assert_eq!(estimate.beta2_hat, db_to_linear(20.0));
    }

    #[test]
    fn coarse_search_matches_surface_argmax() {
        let (obs, _) = noiseless_observation(10.0, 100.0, 8, Scheme::Structured, 3);
        let grid = SearchGrid::from_range_db(0.0, 24.0, 2.0, 0.1).unwrap();
        let surface = evaluate_surface(&obs, grid.values_db(), 32).unwrap();
        let (i, j) = surface.argmax();
        let coarse = coarse_search(&obs, &grid, 32).unwrap();
        assert_eq!(coarse.beta1_hat, db_to_linear(surface.beta1_db()[i]));
        assert_eq!(coarse.beta2_hat, db_to_linear(surface.beta2_db()[j]));
        assert_eq!(coarse.loglik, surface.value(i, j));
    }

    #[test]
    fn estimate_loglik_matches_a_fresh_evaluation() {
        let (obs, _) = noiseless_observation(50.0, 200.0, 10, Scheme::Structured, 9);
        let grid = SearchGrid::from_range_db(10.0, 30.0, 1.0, 0.1).unwrap();
        let estimate = ml_grid_search(&obs, &grid, 48).unwrap();
        let mut ordered = [0.0; 2];
        for (slot, (b1, b2)) in ordered.iter_mut().zip([
            (estimate.beta1_hat, estimate.beta2_hat),
            (estimate.beta2_hat, estimate.beta1_hat),
        ]) {
            let params = LikelihoodParams::new(b1, b2)
                .unwrap()
                .with_noise_variance(obs.noise_variance())
                .unwrap();
            let rule = QuadratureRule::for_params(&params, 48).unwrap();
            *slot = log_likelihood(&obs, &params, &rule);
        }
        assert_eq!(estimate.loglik, 0.5 * (ordered[0] + ordered[1]));
    }

    #[test]
    fn mirrored_cells_tie_exactly_and_resolve_ascending() {
        // Truth is descending (25 dB, 20 dB); the likelihood cannot order
        // the users, so the pair comes back ascending by the tie-break while
        // the unordered values still match the truth.
        let (obs, _) =
            noiseless_observation(db_to_linear(25.0), 100.0, 10, Scheme::Structured, 17);
        let grid = SearchGrid::from_range_db(15.0, 30.0, 1.0, 0.1).unwrap();
        let surface = evaluate_surface(&obs, grid.values_db(), 32).unwrap();
        let n = grid.values_db().len();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(
                    surface.value(i, j).to_bits(),
                    surface.value(j, i).to_bits(),
                    "cells ({i},{j}) and ({j},{i}) must tie exactly"
                );
            }
        }
        let estimate = ml_grid_search(&obs, &grid, 32).unwrap();
        assert!(estimate.beta1_hat <= estimate.beta2_hat);
        assert!((linear_to_db(estimate.beta1_hat) - 20.0).abs() < 0.5);
        assert!((linear_to_db(estimate.beta2_hat) - 25.0).abs() < 0.5);
    }

    #[test]
    fn refinement_never_decreases_the_loglik() {
        for seed in 0..5 {
            let (obs, _) = noiseless_observation(100.0, 50.0, 10, Scheme::Structured, seed);
            let grid = SearchGrid::from_range_db(0.0, 30.0, 1.0, 0.1).unwrap();
            let coarse = coarse_search(&obs, &grid, 32).unwrap();
            let refined = ml_grid_search(&obs, &grid, 32).unwrap();
            assert!(refined.loglik >= coarse.loglik);
        }
    }

    #[test]
    fn refined_estimate_lies_on_the_refinement_lattice() {
        let (obs, _) = noiseless_observation(80.0, 120.0, 10, Scheme::Structured, 21);
        let grid = SearchGrid::from_range_db(0.0, 30.0, 1.0, 0.1).unwrap();
        let coarse = coarse_search(&obs, &grid, 32).unwrap();
        let refined = ml_grid_search(&obs, &grid, 32).unwrap();
        for (hat, center) in [
            (refined.beta1_hat, linear_to_db(coarse.beta1_hat)),
            (refined.beta2_hat, linear_to_db(coarse.beta2_hat)),
        ] {
            let offset = (linear_to_db(hat) - center) / 0.1;
            assert!((offset - offset.round()).abs() < 1e-6, "offset {offset}");
            assert!(offset.abs() <= 10.0 + 1e-6);
        }
    }

    #[test]
    fn zero_refine_step_skips_refinement() {
        let (obs, _) = noiseless_observation(100.0, 50.0, 10, Scheme::Structured, 2);
        let grid_off = SearchGrid::from_range_db(0.0, 30.0, 1.0, 0.0).unwrap();
        let grid_on = SearchGrid::from_range_db(0.0, 30.0, 1.0, 0.1).unwrap();
        let coarse = coarse_search(&obs, &grid_on, 32).unwrap();
        let skipped = ml_grid_search(&obs, &grid_off, 32).unwrap();
        assert_eq!(coarse, skipped);
    }

    #[test]
    fn path_loss_search_ignores_per_block_phase_rotations() {
        // Only magnitudes enter the likelihood, so re-phasing each block
        // leaves the search result unchanged.
        let (obs, _) = noiseless_observation(100.0, 100.0, 10, Scheme::Structured, 5);
        let twisted: Vec<Complex64> = obs
            .values()
            .iter()
            .enumerate()
            .map(|(i, y)| y * Complex64::from_polar(1.0, 0.7 * i as f64 - 1.1))
            .collect();
        let twisted =
            crate::channel::DespreadObservation::from_values(twisted, obs.rho_p(), obs.tau_p())
                .unwrap();
        let grid = SearchGrid::from_range_db(10.0, 30.0, 1.0, 0.1).unwrap();
        let a = ml_grid_search(&obs, &grid, 32).unwrap();
        let b = ml_grid_search(&twisted, &grid, 32).unwrap();
        assert!((a.beta1_hat - b.beta1_hat).abs() < 1e-9 * a.beta1_hat);
        assert!((a.beta2_hat - b.beta2_hat).abs() < 1e-9 * a.beta2_hat);
    }

    #[test]
    fn de_rotate_canonical_is_identity() {
        let schedule = PhaseSchedule::canonical(4).unwrap();
        let values = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.25),
            Complex64::new(0.0, -3.0),
            Complex64::new(4.0, 0.0),
        ];
        let out = de_rotate(&values, &schedule).unwrap();
        assert_eq!(out, values);
    }

    #[test]
    fn de_rotate_inverts_the_rotation() {
        let schedule = PhaseSchedule::structured(6).unwrap();
        let values = vec![Complex64::new(1.5, -0.5); 6];
        let rotated: Vec<Complex64> = values
            .iter()
            .enumerate()
            .map(|(i, v)| v * schedule.rotation(i))
            .collect();
        let restored = de_rotate(&rotated, &schedule).unwrap();
        for (r, v) in restored.iter().zip(&values) {
            assert!((r - v).norm() < 1e-14);
        }
    }

    #[test]
    fn de_rotate_two_block_structured_sends_one_to_minus_j() {
        // Second structured phase for two blocks is pi/2, so de-rotating a
        // unit sample multiplies it by exp(-j pi/2) = -j.
        let schedule = PhaseSchedule::structured(2).unwrap();
        let out = de_rotate(
            &[Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)],
            &schedule,
        )
        .unwrap();
        assert!((out[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn de_rotate_rejects_length_mismatch() {
        let schedule = PhaseSchedule::structured(3).unwrap();
        assert!(de_rotate(&[Complex64::new(1.0, 0.0)], &schedule).is_err());
    }

    #[test]
    fn mmse_single_user_shrinkage() {
        // With beta2 = 0 the first user's estimate is the classic shrinkage
        // sqrt(rho) tau beta / (rho tau beta + 1) times the observation.
        let values = vec![Complex64::new(2.0, -1.0), Complex64::new(0.5, 0.75)];
        let obs =
            crate::channel::DespreadObservation::from_values(values.clone(), 4.0, 2).unwrap();
        let schedule = PhaseSchedule::canonical(2).unwrap();
        let est = mmse_channel_estimate(&obs, 3.0, 0.0, &schedule).unwrap();
        let c1 = 2.0 * 2.0 * 3.0 / (4.0 * 2.0 * 3.0 + 1.0);
        for (e, y) in est.estimate(0).iter().zip(&values) {
            assert!((e - y * c1).norm() < 1e-15);
        }
        assert!(est.estimate(1).iter().all(|e| e.norm() == 0.0));
        let gamma1 = 4.0 * 2.0 * 9.0 / (4.0 * 2.0 * 3.0 + 1.0);
        assert!((est.gamma(0) - gamma1).abs() < 1e-12);
        assert_eq!(est.gamma(1), 0.0);
    }

    #[test]
    fn mmse_symmetric_users_share_gamma() {
        let values = vec![Complex64::new(1.0, 1.0); 4];
        let obs = crate::channel::DespreadObservation::from_values(values, 1.0, 1).unwrap();
        let schedule = PhaseSchedule::structured(4).unwrap();
        let beta = 7.5;
        let est = mmse_channel_estimate(&obs, beta, beta, &schedule).unwrap();
        let want = beta * beta / (2.0 * beta + 1.0);
        assert!((est.gamma(0) - want).abs() < 1e-12);
        assert!((est.gamma(1) - want).abs() < 1e-12);
    }

    #[test]
    fn mmse_gamma_never_exceeds_beta() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let schedule = PhaseSchedule::canonical(1).unwrap();
        for _ in 0..1000 {
            let beta1 = 10f64.powf(rng.random_range(-3.0..4.0));
            let beta2 = 10f64.powf(rng.random_range(-3.0..4.0));
            let rho = 10f64.powf(rng.random_range(-2.0..2.0));
            let tau = rng.random_range(1..=16);
            let obs = crate::channel::DespreadObservation::from_values(
                vec![Complex64::new(1.0, 0.0)],
                rho,
                tau,
            )
            .unwrap();
            let est = mmse_channel_estimate(&obs, beta1, beta2, &schedule).unwrap();
            assert!(est.gamma(0) < beta1);
            assert!(est.gamma(1) < beta2);
        }
    }

    #[test]
    fn mmse_gamma_approaches_beta_only_asymptotically() {
        let schedule = PhaseSchedule::canonical(1).unwrap();
        let value = vec![Complex64::new(1.0, 0.0)];
        let beta = 5.0;
        let mut last_ratio = 0.0;
        for rho in [1.0, 1e3, 1e6, 1e12] {
            let obs =
                crate::channel::DespreadObservation::from_values(value.clone(), rho, 1).unwrap();
            let est = mmse_channel_estimate(&obs, beta, 0.0, &schedule).unwrap();
            let ratio = est.gamma(0) / beta;
            assert!(ratio > last_ratio && ratio < 1.0);
            last_ratio = ratio;
        }
        assert!(1.0 - last_ratio < 1e-9);
    }

    #[test]
    fn mmse_second_user_estimate_is_de_rotated() {
        // Noiseless single-block toy: y = sqrt(rho) (g1 + g2 r). The second
        // user's estimate must align with g2, not with g2 r.
        let blocks = 8;
        let (obs, schedule) = noiseless_observation(0.0, 100.0, blocks, Scheme::Structured, 13);
        let est = mmse_channel_estimate(&obs, 0.0, 100.0, &schedule).unwrap();
        // All de-rotated estimates of a block-constant channel coincide.
        let first = est.estimate(1)[0];
        assert!(first.norm() > 1.0);
        for e in est.estimate(1) {
            assert!((e - first).norm() < 1e-9 * first.norm());
        }
    }

    #[test]
    fn mmse_rejects_bad_arguments() {
        let obs = crate::channel::DespreadObservation::from_values(
            vec![Complex64::new(1.0, 0.0)],
            1.0,
            1,
        )
        .unwrap();
        let schedule = PhaseSchedule::canonical(2).unwrap();
        assert!(mmse_channel_estimate(&obs, 1.0, 1.0, &schedule).is_err());
        let schedule = PhaseSchedule::canonical(1).unwrap();
        assert!(mmse_channel_estimate(&obs, -1.0, 1.0, &schedule).is_err());
        assert!(mmse_channel_estimate(&obs, f64::NAN, 1.0, &schedule).is_err());
    }

    #[test]
    fn plug_in_pipeline_recovers_a_clean_channel() {
        let (obs, schedule) = noiseless_observation(100.0, 100.0, 10, Scheme::Structured, 4);
        let grid = SearchGrid::from_range_db(10.0, 30.0, 1.0, 0.1).unwrap();
        let (path_loss, channels) =
            plug_in_channel_estimate(&obs, &grid, DEFAULT_QUAD_NODES, &schedule).unwrap();
        assert!((linear_to_db(path_loss.beta1_hat) - 20.0).abs() < 1.0);
        assert!((linear_to_db(path_loss.beta2_hat) - 20.0).abs() < 1.0);
        assert_eq!(channels.block_count(), 10);
        assert!(channels.gamma(0) > 0.0 && channels.gamma(0) < path_loss.beta1_hat);
    }
}
