//! Threshold single-photon detectors.
//!
//! A bank of `d` threshold detectors is driven either by an honest coherent
//! pulse (Poissonian photon number, per-photon loss, dark counts) or by a
//! bright classical pulse from a blinding attack, in which case each
//! detector behaves as a pure intensity discriminator: it fires iff the
//! intensity routed to it strictly exceeds its threshold.
//!
//! The X basis is the monitoring basis: the source is expected to prepare
//! the X eigenstate `|0>_x`, and the physical detector that represents the
//! correct outcome is chosen per round through a [`DetectorAssignment`].
//! The Z basis generates randomness; Z outcome `i` is physical detector `i`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest supported dimension; click patterns are stored as a `u64` mask.
pub const MAX_DIMENSION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Z,
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Basis::X),
            "Z" | "z" => Ok(Basis::Z),
            other => Err(Error::param("basis", format!("unknown basis `{other}`"))),
        }
    }
}

/// How no-click events are interpreted during post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    /// No-click and multi-click X rounds are errors; all Z rounds are kept.
    BlindingAware,
    /// Squashing-model treatment: no-click rounds are discarded as vacua.
    LegacySquash,
}

impl Treatment {
    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::BlindingAware => "blinding_aware",
            Treatment::LegacySquash => "legacy_squash",
        }
    }
}

impl std::str::FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blinding_aware" | "blinding-aware" | "aware" => Ok(Treatment::BlindingAware),
            "legacy_squash" | "legacy-squash" | "legacy" => Ok(Treatment::LegacySquash),
            other => Err(Error::param("treatment", format!("unknown treatment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorBank<T> {
    efficiencies: Vec<T>,
    dark_count: T,
    thresholds: Vec<T>,
}

impl<T: Real> DetectorBank<T> {
    pub fn new(efficiencies: Vec<T>, dark_count: T, thresholds: Vec<T>) -> Result<Self> {
        let d = efficiencies.len();
        if !(2..=MAX_DIMENSION).contains(&d) {
            return Err(Error::param("dimension", format!("need 2 <= d <= {MAX_DIMENSION}, got {d}")));
        }
        if thresholds.len() != d {
            return Err(Error::param("thresholds", format!("expected {d} thresholds, got {}", thresholds.len())));
        }
        if efficiencies.iter().any(|&e| !(e >= T::zero() && e <= T::one())) {
            return Err(Error::param("efficiency", "each efficiency must lie in [0, 1]"));
        }
        if !(dark_count >= T::zero() && dark_count < T::one()) {
            return Err(Error::param("dark_count", "dark-count probability must lie in [0, 1)"));
        }
        if thresholds.iter().any(|&t| !(t >= T::zero()) || !t.is_finite()) {
            return Err(Error::param("thresholds", "thresholds must be finite and non-negative"));
        }
        Ok(Self { efficiencies, dark_count, thresholds })
    }

    /// `d` unblinded detectors with common efficiency.
    pub fn uniform(d: usize, efficiency: T, dark_count: T) -> Result<Self> {
        Self::new(vec![efficiency; d], dark_count, vec![T::zero(); d])
    }

    pub fn dimension(&self) -> usize {
        self.efficiencies.len()
    }

    pub fn efficiencies(&self) -> &[T] {
        &self.efficiencies
    }

    pub fn dark_count(&self) -> T {
        self.dark_count
    }

    pub fn thresholds(&self) -> &[T] {
        &self.thresholds
    }

    /// Copy of this bank with the blinding thresholds replaced.
    pub fn with_thresholds(&self, thresholds: Vec<T>) -> Result<Self> {
        Self::new(self.efficiencies.clone(), self.dark_count, thresholds)
    }

    /// Copy of this bank with every detector back in single-photon mode.
    pub fn unblinded(&self) -> Self {
        Self {
            efficiencies: self.efficiencies.clone(),
            dark_count: self.dark_count,
            thresholds: vec![T::zero(); self.dimension()],
        }
    }
}

/// Honest coherent pulse aimed at the X eigenstate `prepared`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestPulse<T> {
    pub mean_photons: T,
    pub transmittance: T,
    #[serde(default)]
    pub prepared: usize,
    /// Probability that the X-basis routing lands on a wrong outcome.
    #[serde(default)]
    pub misalignment: T,
}

/// Bright pulse of total intensity `intensity`; `routing_x[i]` and
/// `routing_z[i]` give the fraction reaching physical detector `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedPulse<T> {
    pub intensity: T,
    pub routing_x: Vec<T>,
    pub routing_z: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", bound(deserialize = "T: Deserialize<'de> + Default"))]
pub enum SignalSpec<T> {
    Honest(HonestPulse<T>),
    Blinded(BlindedPulse<T>),
}

impl<T: Real> SignalSpec<T> {
    pub fn honest(mean_photons: T, transmittance: T) -> Self {
        SignalSpec::Honest(HonestPulse { mean_photons, transmittance, prepared: 0, misalignment: T::zero() })
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            SignalSpec::Honest(p) => {
                if !(p.mean_photons >= T::zero()) || !p.mean_photons.is_finite() {
                    return Err(Error::param("mean_photons", "must be finite and >= 0"));
                }
                if !(p.transmittance >= T::zero() && p.transmittance <= T::one()) {
                    return Err(Error::param("transmittance", "must lie in [0, 1]"));
                }
                if !(p.misalignment >= T::zero() && p.misalignment < T::one()) {
                    return Err(Error::param("misalignment", "must lie in [0, 1)"));
                }
                if p.prepared >= d {
                    return Err(Error::param("prepared", format!("state index {} >= d = {d}", p.prepared)));
                }
            }
            SignalSpec::Blinded(p) => {
                if !(p.intensity >= T::zero()) || !p.intensity.is_finite() {
                    return Err(Error::param("intensity", "must be finite and >= 0"));
                }
                for (name, routing) in [("routing_x", &p.routing_x), ("routing_z", &p.routing_z)] {
                    if routing.len() != d {
                        return Err(Error::param(name, format!("expected {d} fractions, got {}", routing.len())));
                    }
                    if routing.iter().any(|&f| !(f >= T::zero())) {
                        return Err(Error::param(name, "fractions must be non-negative"));
                    }
                    let sum = routing.iter().fold(T::zero(), |acc, &f| acc + f);
                    if (sum - T::one()).abs() > T::lit(1e-6) {
                        return Err(Error::param(name, format!("fractions sum to {sum}, not 1")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mapping from logical X outcomes to physical detectors. Entry 0 is the
/// detector that represents the correct outcome `|0>_x`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorAssignment(Vec<usize>);

impl DetectorAssignment {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        validate_permutation(&map)?;
        Ok(Self(map))
    }

    pub fn identity(d: usize) -> Self {
        Self((0..d).collect())
    }

    /// Identity with logical 0 swapped onto physical `correct`.
    pub fn with_correct(d: usize, correct: usize) -> Result<Self> {
        if correct >= d {
            return Err(Error::NotAPermutation { dimension: d });
        }
        let mut map: Vec<usize> = (0..d).collect();
        map.swap(0, correct);
        Ok(Self(map))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn correct(&self) -> usize {
        self.0[0]
    }
}

pub(crate) fn validate_permutation(map: &[usize]) -> Result<()> {
    let d = map.len();
    if d > MAX_DIMENSION {
        return Err(Error::NotAPermutation { dimension: d });
    }
    let mut seen = 0u64;
    for &p in map {
        if p >= d || seen & (1 << p) != 0 {
            return Err(Error::NotAPermutation { dimension: d });
        }
        seen |= 1 << p;
    }
    Ok(())
}

/// Set of fired detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ClickPattern {
    mask: u64,
}

impl ClickPattern {
    pub fn empty() -> Self {
        Self { mask: 0 }
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        let mask = indices.iter().fold(0u64, |m, &i| m | (1u64 << i));
        Self { mask }
    }

    pub fn mask(self) -> u64 {
        self.mask
    }

    pub fn insert(&mut self, detector: usize) {
        self.mask |= 1u64 << detector;
    }

    pub fn contains(self, detector: usize) -> bool {
        self.mask & (1u64 << detector) != 0
    }

    pub fn count(self) -> u32 {
        self.mask.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.mask == 0
    }

    /// The fired detector, if exactly one fired.
    pub fn single(self) -> Option<usize> {
        (self.count() == 1).then(|| self.mask.trailing_zeros() as usize)
    }

    pub fn fired(self) -> impl Iterator<Item = usize> {
        let mut rest = self.mask;
        std::iter::from_fn(move || {
            (rest != 0).then(|| {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                i
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    XCorrect,
    XError,
    XDiscarded,
    ZSingle(usize),
    ZNoRandomness,
    ZDiscarded,
}

/// Simulate one gate of the detector bank.
pub fn measure_pulse<T: Real, R: Rng + ?Sized>(
    signal: &SignalSpec<T>,
    bank: &DetectorBank<T>,
    basis: Basis,
    assignment: &[usize],
    rng: &mut R,
) -> Result<ClickPattern> {
    let d = bank.dimension();
    if assignment.len() != d {
        return Err(Error::NotAPermutation { dimension: d });
    }
    validate_permutation(assignment)?;
    signal.validate(d)?;
    Ok(measure_validated(signal, bank, basis, assignment, rng))
}

/// [`measure_pulse`] without input validation, for callers that validated once.
pub(crate) fn measure_validated<T: Real, R: Rng + ?Sized>(
    signal: &SignalSpec<T>,
    bank: &DetectorBank<T>,
    basis: Basis,
    assignment: &[usize],
    rng: &mut R,
) -> ClickPattern {
    let d = bank.dimension();
    let mut pattern = match signal {
        SignalSpec::Honest(pulse) => honest_clicks(pulse, bank, basis, assignment, rng),
        SignalSpec::Blinded(pulse) => blinded_clicks(pulse, bank, basis),
    };
    let p_dark = bank.dark_count().as_f64();
    if p_dark > 0.0 {
        for i in 0..d {
            if rng.random::<f64>() < p_dark {
                pattern.insert(i);
            }
        }
    }
    pattern
}

fn honest_clicks<T: Real, R: Rng + ?Sized>(
    pulse: &HonestPulse<T>,
    bank: &DetectorBank<T>,
    basis: Basis,
    assignment: &[usize],
    rng: &mut R,
) -> ClickPattern {
    let d = bank.dimension();
    let mut pattern = ClickPattern::empty();
    let mean = pulse.mean_photons.as_f64();
    if mean <= 0.0 {
        return pattern;
    }
    let photons = Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0);
    if photons == 0 {
        return pattern;
    }
    let channel = pulse.transmittance.as_f64();
    let sensitive = |i: usize| bank.thresholds()[i] == T::zero();

    match basis {
        Basis::X => {
            let mut logical = pulse.prepared;
            let misalign = pulse.misalignment.as_f64();
            if misalign > 0.0 && rng.random::<f64>() < misalign {
                // uniformly random wrong outcome
                let k = rng.random_range(0..d - 1);
                logical = if k >= pulse.prepared { k + 1 } else { k };
            }
            let target = assignment[logical];
            let survive = channel * bank.efficiencies()[target].as_f64();
            if sensitive(target) && (0..photons).any(|_| rng.random::<f64>() < survive) {
                pattern.insert(target);
            }
        }
        Basis::Z => {
            for _ in 0..photons {
                let i = rng.random_range(0..d);
                if pattern.contains(i) {
                    continue;
                }
                let survive = channel * bank.efficiencies()[i].as_f64();
                if sensitive(i) && rng.random::<f64>() < survive {
                    pattern.insert(i);
                }
            }
        }
    }
    pattern
}

fn blinded_clicks<T: Real>(pulse: &BlindedPulse<T>, bank: &DetectorBank<T>, basis: Basis) -> ClickPattern {
    let routing = match basis {
        Basis::X => &pulse.routing_x,
        Basis::Z => &pulse.routing_z,
    };
    let mut pattern = ClickPattern::empty();
    for (i, (&fraction, &threshold)) in routing.iter().zip(bank.thresholds()).enumerate() {
        if fraction * pulse.intensity > threshold {
            pattern.insert(i);
        }
    }
    pattern
}

/// Map a click pattern to its post-processing category.
///
/// `correct_index` is the physical detector representing `|0>_x` in this
/// round; it is ignored in the Z basis.
pub fn classify_pattern(pattern: ClickPattern, basis: Basis, correct_index: usize, treatment: Treatment) -> Category {
    let discard_empty = treatment == Treatment::LegacySquash;
    match basis {
        Basis::X => {
            if pattern.is_empty() && discard_empty {
                Category::XDiscarded
            } else if pattern.single() == Some(correct_index) {
                Category::XCorrect
            } else {
                Category::XError
            }
        }
        Basis::Z => {
            if pattern.is_empty() && discard_empty {
                Category::ZDiscarded
            } else if let Some(i) = pattern.single() {
                Category::ZSingle(i)
            } else {
                Category::ZNoRandomness
            }
        }
    }
}
