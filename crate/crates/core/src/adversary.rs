//! Blinding-attack construction.
//!
//! Eve blinds the detectors with bright light, sets each threshold, and then
//! sends classical pulses whose intensity is chosen so that Z-basis rounds
//! click on her chosen detector while X-basis rounds either stay dark
//! (balanced attack) or click only on the detector she believes represents
//! the correct X outcome (unbalanced / d-dimensional attack).

use serde::{Deserialize, Serialize};

use crate::detector::{BlindedPulse, SignalSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// All thresholds equal; X rounds produce no click.
    Balanced,
    /// Two detectors, the guessed `|+>` detector has the lower threshold.
    Unbalanced,
    /// Unbalanced attack generalized to `d` detectors.
    DDimensional,
}

/// Source of Eve's intended Z outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSequence {
    /// Pseudorandom outcomes from Eve's own seeded stream.
    Pseudorandom { seed: u64 },
    /// Explicit outcomes, repeated cyclically over the rounds.
    Explicit(Vec<usize>),
}

impl Default for TargetSequence {
    fn default() -> Self {
        TargetSequence::Pseudorandom { seed: 0x05ee_de7e }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig<T> {
    pub strategy: Strategy,
    /// Per physical detector blinding threshold.
    pub thresholds: Vec<T>,
    #[serde(default)]
    pub targets: TargetSequence,
    /// Fraction of rounds carrying the attack pulse; the rest are honest.
    pub attack_fraction: T,
    #[serde(default)]
    pub guessed_plus_index: usize,
    /// Pulse intensity; the midpoint of the feasible window when absent.
    #[serde(default)]
    pub intensity: Option<T>,
}

impl<T: Real> AttackConfig<T> {
    pub fn balanced(d: usize, threshold: T) -> Self {
        Self {
            strategy: Strategy::Balanced,
            thresholds: vec![threshold; d],
            targets: TargetSequence::default(),
            attack_fraction: T::one(),
            guessed_plus_index: 0,
            intensity: None,
        }
    }

    pub fn unbalanced(plus_threshold: T, minus_threshold: T) -> Self {
        Self {
            strategy: Strategy::Unbalanced,
            thresholds: vec![plus_threshold, minus_threshold],
            targets: TargetSequence::default(),
            attack_fraction: T::one(),
            guessed_plus_index: 0,
            intensity: None,
        }
    }

    /// d-dimensional attack with the two lowest thresholds given; the rest
    /// sit just below `d` times the second-lowest threshold.
    pub fn d_dimensional(d: usize, lowest: T, second: T, guessed_plus_index: usize) -> Result<Self> {
        if d < 2 || guessed_plus_index >= d {
            return Err(Error::param("guessed_plus_index", "must index one of d >= 2 detectors"));
        }
        let dd = T::from_usize(d).expect("dimension fits scalar");
        let others = dd * second * (T::one() - T::lit(1e-6));
        let second_index = if guessed_plus_index == 0 { 1 } else { 0 };
        let thresholds = (0..d)
            .map(|i| {
                if i == guessed_plus_index {
                    lowest
                } else if i == second_index {
                    second
                } else {
                    others
                }
            })
            .collect();
        Ok(Self {
            strategy: crate::adversary::Strategy::DDimensional,
            thresholds,
            targets: TargetSequence::default(),
            attack_fraction: T::one(),
            guessed_plus_index,
            intensity: None,
        })
    }

    pub fn dimension(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension();
        if d < 2 {
            return Err(Error::param("thresholds", "need at least two detectors"));
        }
        if !(self.attack_fraction >= T::zero() && self.attack_fraction <= T::one()) {
            return Err(Error::param("attack_fraction", "must lie in [0, 1]"));
        }
        if self.thresholds.iter().any(|&t| !(t >= T::zero()) || !t.is_finite()) {
            return Err(Error::param("thresholds", "must be finite and non-negative"));
        }
        if self.guessed_plus_index >= d {
            return Err(Error::param("guessed_plus_index", format!("must be < {d}")));
        }
        if let TargetSequence::Explicit(seq) = &self.targets {
            if seq.is_empty() {
                return Err(Error::param("targets", "explicit target sequence is empty"));
            }
            if let Some(bad) = seq.iter().find(|&&t| t >= d) {
                return Err(Error::param("targets", format!("target outcome {bad} >= d = {d}")));
            }
        }
        Ok(())
    }

    /// The configured pulse intensity, or the window midpoint.
    pub fn pulse_intensity(&self) -> Result<T> {
        let window = feasible_intensity_window(self, self.dimension())?;
        match self.intensity {
            Some(i) if window.contains(i) => Ok(i),
            Some(i) => Err(Error::AttackInfeasible(format!(
                "intensity {i} outside feasible window ({}, {}]",
                window.lo, window.hi
            ))),
            None => Ok(window.midpoint()),
        }
    }
}

/// Half-open admissible intensity interval `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityWindow<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> IntensityWindow<T> {
    pub fn contains(&self, intensity: T) -> bool {
        intensity > self.lo && intensity <= self.hi
    }

    pub fn midpoint(&self) -> T {
        (self.lo + self.hi) / T::lit(2.0)
    }
}

/// Range of pulse intensities for which the attack fully controls the
/// outcomes as intended by `config.strategy`.
pub fn feasible_intensity_window<T: Real>(config: &AttackConfig<T>, d: usize) -> Result<IntensityWindow<T>> {
    config.validate()?;
    if config.dimension() != d {
        return Err(Error::param("thresholds", format!("attack has {} thresholds but d = {d}", config.dimension())));
    }
    let dd = T::from_usize(d).expect("dimension fits scalar");
    let th = &config.thresholds;
    let window = match config.strategy {
        Strategy::Balanced => {
            let first = th[0];
            if th.iter().any(|&t| t != first) {
                return Err(Error::AttackInfeasible("balanced attack requires equal thresholds".into()));
            }
            IntensityWindow { lo: first, hi: dd * first }
        }
        Strategy::Unbalanced | Strategy::DDimensional => {
            if config.strategy == Strategy::Unbalanced && d != 2 {
                return Err(Error::AttackInfeasible(
                    "unbalanced attack is defined for d = 2; use d_dimensional".into(),
                ));
            }
            let g = config.guessed_plus_index;
            let lowest = th[g];
            let others = th.iter().enumerate().filter(|&(i, _)| i != g).map(|(_, &t)| t);
            let second = others.clone().fold(T::infinity(), T::min);
            if !(lowest < second) {
                return Err(Error::AttackInfeasible(format!(
                    "guessed |0>_x detector {g} must have the strictly smallest threshold"
                )));
            }
            if others.clone().filter(|&t| t == second).count() > 1 {
                return Err(Error::AttackInfeasible("several thresholds tie at the second-smallest value".into()));
            }
            let max_other = others.fold(T::zero(), T::max);
            IntensityWindow { lo: (dd * lowest).max(max_other), hi: dd * second }
        }
    };
    if !(window.lo < window.hi) {
        return Err(Error::AttackInfeasible(format!("empty intensity window ({}, {}]", window.lo, window.hi)));
    }
    Ok(window)
}

/// Blinded pulse steering a Z measurement onto `round_target`; in the X
/// basis the light splits evenly over the `d` detectors.
pub fn craft_attack_pulse<T: Real>(
    config: &AttackConfig<T>,
    round_target: usize,
    intensity: T,
) -> Result<SignalSpec<T>> {
    let d = config.dimension();
    let window = feasible_intensity_window(config, d)?;
    if !window.contains(intensity) {
        return Err(Error::AttackInfeasible(format!(
            "intensity {intensity} outside feasible window ({}, {}]",
            window.lo, window.hi
        )));
    }
    if round_target >= d {
        return Err(Error::param("round_target", format!("target {round_target} >= d = {d}")));
    }
    Ok(attack_pulse_unchecked(d, round_target, intensity))
}

pub(crate) fn attack_pulse_unchecked<T: Real>(d: usize, round_target: usize, intensity: T) -> SignalSpec<T> {
    let share = T::one() / T::from_usize(d).expect("dimension fits scalar");
    let mut routing_z = vec![T::zero(); d];
    routing_z[round_target] = T::one();
    SignalSpec::Blinded(BlindedPulse { intensity, routing_x: vec![share; d], routing_z })
}
