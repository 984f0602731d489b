//! Pilot sequences and per-block phase-rotation schedules.
//!
//! Two users transmit the same pilot sequence over `I` coherence blocks. The
//! second user additionally rotates its pilot by a per-block phase; the choice
//! of rotation schedule is what distinguishes the estimation schemes compared
//! in this crate. User 0 (the reference user) never rotates.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Orthonormal pilot book realized as the columns of the DFT matrix scaled to
/// unit norm. With size `tau_p` the book holds `tau_p` sequences of length
/// `tau_p`, pairwise orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    sequences: Vec<Vec<Complex64>>,
}

impl PilotBook {
    /// Builds the DFT pilot book of size `tau_p >= 1`.
    pub fn dft(tau_p: usize) -> Result<Self> {
        if tau_p == 0 {
            return Err(Error::invalid("pilot book size must be at least 1"));
        }
        let n = tau_p as f64;
        let scale = 1.0 / n.sqrt();
        let sequences = (0..tau_p)
            .map(|q| {
                (0..tau_p)
                    .map(|s| Complex64::from_polar(scale, -2.0 * PI * (q * s) as f64 / n))
                    .collect()
            })
            .collect();
        Ok(Self { sequences })
    }

    /// Number of sequences, equal to the sequence length.
    pub fn tau_p(&self) -> usize {
        self.sequences.len()
    }

    /// The unit-norm pilot sequence at `index`.
    pub fn sequence(&self, index: usize) -> Result<&[Complex64]> {
        self.sequences
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "pilot index {index} out of range for book of size {}",
                    self.tau_p()
                ))
            })
    }
}

/// Phase-rotation scheme applied by the second user across coherence blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Deterministic equally spaced phases that cancel around the unit circle.
    Structured,
    /// Independent uniform phases drawn per block from a seeded stream.
    PseudoRandom,
    /// No rotation: every block phase is zero.
    Canonical,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Structured, Scheme::PseudoRandom, Scheme::Canonical];

    /// Stable lowercase label used in CSV output and CLI parsing.
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Structured => "structured",
            Scheme::PseudoRandom => "pseudo-random",
            Scheme::Canonical => "canonical",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "structured" => Ok(Scheme::Structured),
            "pseudo-random" | "pseudorandom" | "pseudo_random" => Ok(Scheme::PseudoRandom),
            "canonical" => Ok(Scheme::Canonical),
            other => Err(Error::invalid(format!(
                "unknown scheme \"{other}\" (expected structured, pseudo-random, or canonical)"
            ))),
        }
    }
}

/// Per-block pilot phase rotations for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    scheme: Scheme,
    phases: Vec<f64>,
}

impl PhaseSchedule {
    /// The structured schedule: block `i` (1-based) rotates by
    /// `(2i - 1)·pi/I - pi`. The phases are strictly increasing, confined to
    /// `(-pi, pi)`, and their unit vectors sum to zero for `I >= 2`.
    pub fn structured(block_count: usize) -> Result<Self> {
        Self::check_blocks(block_count)?;
        let n = block_count as f64;
        let phases = (1..=block_count)
            .map(|i| (2 * i - 1) as f64 * PI / n - PI)
            .collect();
        Ok(Self {
            scheme: Scheme::Structured,
            phases,
        })
    }

    /// Independent uniform phases on `[-pi, pi]` from a seeded stream;
    /// identical seeds reproduce identical schedules.
    pub fn pseudo_random(block_count: usize, seed: u64) -> Result<Self> {
        Self::check_blocks(block_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = (0..block_count)
            .map(|_| rng.random_range(-PI..=PI))
            .collect();
        Ok(Self {
            scheme: Scheme::PseudoRandom,
            phases,
        })
    }

    /// The canonical (unrotated) schedule: all phases zero.
    pub fn canonical(block_count: usize) -> Result<Self> {
        Self::check_blocks(block_count)?;
        Ok(Self {
            scheme: Scheme::Canonical,
            phases: vec![0.0; block_count],
        })
    }

    fn check_blocks(block_count: usize) -> Result<()> {
        if block_count == 0 {
            return Err(Error::invalid("block count must be at least 1"));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn block_count(&self) -> usize {
        self.phases.len()
    }

    /// The unit-modulus rotation `e^{j·phase}` applied in `block` (0-based).
    pub fn rotation(&self, block: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.phases[block])
    }

    /// Serializes the schedule as CSV with a `block_index,phase_radians`
    /// header; block indices are 0-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_index,phase_radians\n");
        for (i, phase) in self.phases.iter().enumerate() {
            out.push_str(&format!("{i},{phase}\n"));
        }
        out
    }
}

/// Pilot index and rotation schedule assigned to one of the two users.
/// User 0 is the reference user and always carries the canonical schedule;
/// user 1 may carry any schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotAssignment {
    user: usize,
    pilot: usize,
    schedule: PhaseSchedule,
}

impl PilotAssignment {
    /// Assignment for the reference user (index 0), which transmits unrotated
    /// pilots over `block_count` blocks.
    pub fn reference(pilot: usize, block_count: usize) -> Result<Self> {
        Ok(Self {
            user: 0,
            pilot,
            schedule: PhaseSchedule::canonical(block_count)?,
        })
    }

    /// Assignment for the rotating user (index 1) with an arbitrary schedule.
    pub fn rotating(pilot: usize, schedule: PhaseSchedule) -> Self {
        Self {
            user: 1,
            pilot,
            schedule,
        }
    }

    /// User index: 0 for the reference user, 1 for the rotating user.
    pub fn user(&self) -> usize {
        self.user
    }

    pub fn pilot(&self) -> usize {
        self.pilot
    }

    pub fn schedule(&self) -> &PhaseSchedule {
        &self.schedule
    }
}
