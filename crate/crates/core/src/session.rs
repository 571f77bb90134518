//! Protocol session: per-round basis choice, detector assignment,
//! measurement and classification, aggregated into a [`TallySummary`].
//!
//! Rounds are processed in fixed-size chunks. Each chunk draws from its own
//! ChaCha stream derived from `(seed, chunk index)`, so results do not depend
//! on how many worker threads run the chunks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{attack_pulse_unchecked, AttackConfig, TargetSequence};
use crate::bits::BitString;
use crate::detector::{
    classify_pattern, measure_validated, Basis, Category, DetectorBank, HonestPulse, SignalSpec, Treatment,
};
use crate::error::{Error, Result};
use crate::scalar::Real;

const CHUNK_ROUNDS: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams<T> {
    pub rounds: u64,
    pub dimension: usize,
    pub p_x: T,
    pub treatment: Treatment,
    pub seed: u64,
}

impl<T: Real> ProtocolParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::param("rounds", "need at least one round"));
        }
        if self.dimension < 2 {
            return Err(Error::param("dimension", "need d >= 2"));
        }
        if !(self.p_x > T::zero() && self.p_x < T::one()) {
            return Err(Error::param("p_x", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// What the source emits: honest pulses, optionally replaced by Eve's
/// blinding pulses in a fraction of the rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSource<T> {
    pub honest: HonestPulse<T>,
    #[serde(default)]
    pub attack: Option<AttackConfig<T>>,
}

impl<T: Real> SessionSource<T> {
    pub fn honest(honest: HonestPulse<T>) -> Self {
        Self { honest, attack: None }
    }

    /// Every round attacked; the honest pulse is never used.
    pub fn full_attack(attack: AttackConfig<T>) -> Self {
        let honest =
            HonestPulse { mean_photons: T::zero(), transmittance: T::one(), prepared: 0, misalignment: T::zero() };
        Self { honest, attack: Some(attack) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallySummary {
    pub treatment: Treatment,
    pub dimension: usize,
    pub rounds: u64,
    pub x_rounds: u64,
    pub z_rounds: u64,
    pub x_correct: u64,
    pub x_error: u64,
    #[serde(default)]
    pub x_discarded: u64,
    pub z_single: u64,
    pub z_no_randomness: u64,
    #[serde(default)]
    pub z_discarded: u64,
    /// Per-detector click counts in Z (single and multi clicks).
    pub z_totals: Vec<u64>,
    /// Per-detector single-click counts in Z.
    pub z_singles: Vec<u64>,
    /// Z single-click outcomes in round order.
    #[serde(default)]
    pub raw_symbols: Vec<u32>,
}

impl TallySummary {
    pub fn empty(treatment: Treatment, dimension: usize) -> Self {
        Self {
            treatment,
            dimension,
            rounds: 0,
            x_rounds: 0,
            z_rounds: 0,
            x_correct: 0,
            x_error: 0,
            x_discarded: 0,
            z_single: 0,
            z_no_randomness: 0,
            z_discarded: 0,
            z_totals: vec![0; dimension],
            z_singles: vec![0; dimension],
            raw_symbols: Vec::new(),
        }
    }

    /// X rounds with at least one click.
    pub fn x_clicked(&self) -> u64 {
        self.x_rounds - self.x_discarded
    }

    /// Z rounds with at least one click.
    pub fn z_clicked(&self) -> u64 {
        self.z_rounds - self.z_discarded
    }

    /// Observed X error rate over the rounds that enter the estimate.
    pub fn x_error_rate(&self) -> Option<f64> {
        let denominator = match self.treatment {
            Treatment::BlindingAware => self.x_rounds,
            Treatment::LegacySquash => self.x_clicked(),
        };
        (denominator > 0).then(|| self.x_error as f64 / denominator as f64)
    }

    fn record(&mut self, basis: Basis, pattern_fired: impl Iterator<Item = usize>, category: Category) {
        self.rounds += 1;
        match basis {
            Basis::X => self.x_rounds += 1,
            Basis::Z => {
                self.z_rounds += 1;
                for i in pattern_fired {
                    self.z_totals[i] += 1;
                }
            }
        }
        match category {
            Category::XCorrect => self.x_correct += 1,
            Category::XError => self.x_error += 1,
            Category::XDiscarded => self.x_discarded += 1,
            Category::ZSingle(i) => {
                self.z_single += 1;
                self.z_singles[i] += 1;
                self.raw_symbols.push(i as u32);
            }
            Category::ZNoRandomness => self.z_no_randomness += 1,
            Category::ZDiscarded => self.z_discarded += 1,
        }
    }

    /// Fold `other` into `self`; symbols are appended after ours.
    pub fn merge(&mut self, other: &TallySummary) {
        assert_eq!(self.dimension, other.dimension, "merging tallies of different dimension");
        self.rounds += other.rounds;
        self.x_rounds += other.x_rounds;
        self.z_rounds += other.z_rounds;
        self.x_correct += other.x_correct;
        self.x_error += other.x_error;
        self.x_discarded += other.x_discarded;
        self.z_single += other.z_single;
        self.z_no_randomness += other.z_no_randomness;
        self.z_discarded += other.z_discarded;
        for (a, b) in self.z_totals.iter_mut().zip(&other.z_totals) {
            *a += b;
        }
        for (a, b) in self.z_singles.iter_mut().zip(&other.z_singles) {
            *a += b;
        }
        self.raw_symbols.extend_from_slice(&other.raw_symbols);
    }

    /// Check the internal count identities.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::InconsistentAnalysis(format!("tally invariant violated: {what}")));
        if self.x_rounds + self.z_rounds != self.rounds {
            return fail("N_x + N_z != N");
        }
        if self.x_correct + self.x_error + self.x_discarded != self.x_rounds {
            return fail("X categories do not partition N_x");
        }
        if self.z_single + self.z_no_randomness + self.z_discarded != self.z_rounds {
            return fail("Z categories do not partition N_z");
        }
        if self.z_singles.iter().sum::<u64>() != self.z_single {
            return fail("per-detector singles do not sum to N_z^s");
        }
        if self.z_singles.iter().zip(&self.z_totals).any(|(s, t)| s > t) {
            return fail("single clicks exceed total clicks");
        }
        if !self.raw_symbols.is_empty() && self.raw_symbols.len() as u64 != self.z_single {
            return fail("raw symbol count differs from N_z^s");
        }
        Ok(())
    }
}

/// Per Z single-click symbol, Eve's intended outcome if that round was attacked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub eve_targets: Vec<Option<u32>>,
}

impl AttackTrace {
    /// Number of attacked raw symbols and how many of them Eve predicted.
    pub fn agreement(&self, raw_symbols: &[u32]) -> (u64, u64) {
        let mut attacked = 0;
        let mut matched = 0;
        for (target, &symbol) in self.eve_targets.iter().zip(raw_symbols) {
            if let Some(t) = target {
                attacked += 1;
                if *t == symbol {
                    matched += 1;
                }
            }
        }
        (attacked, matched)
    }
}

pub fn run_session<T: Real>(
    params: &ProtocolParams<T>,
    source: &SessionSource<T>,
    bank: &DetectorBank<T>,
) -> Result<TallySummary> {
    run_session_traced(params, source, bank).map(|(tally, _)| tally)
}

/// [`run_session`] that also reports Eve's knowledge of the raw symbols.
pub fn run_session_traced<T: Real>(
    params: &ProtocolParams<T>,
    source: &SessionSource<T>,
    bank: &DetectorBank<T>,
) -> Result<(TallySummary, AttackTrace)> {
    params.validate()?;
    let d = params.dimension;
    if bank.dimension() != d {
        return Err(Error::param("dimension", format!("bank has {} detectors, params say {d}", bank.dimension())));
    }
    let honest_signal = SignalSpec::Honest(source.honest.clone());
    honest_signal.validate(d)?;
    let plan = match &source.attack {
        Some(attack) => {
            if attack.dimension() != d {
                return Err(Error::param("attack", "attack dimension differs from session dimension"));
            }
            let intensity = attack.pulse_intensity()?;
            Some(AttackPlan {
                pulses: (0..d).map(|t| attack_pulse_unchecked(d, t, intensity)).collect(),
                bank: bank.with_thresholds(attack.thresholds.clone())?,
                fraction: attack.attack_fraction.as_f64(),
                targets: attack.targets.clone(),
            })
        }
        None => None,
    };
    let ctx = RoundContext {
        d,
        p_x: params.p_x.as_f64(),
        treatment: params.treatment,
        honest_signal,
        honest_bank: bank.unblinded(),
        attack: plan,
    };

    let chunks = params.rounds.div_ceil(CHUNK_ROUNDS);
    let results: Vec<(TallySummary, AttackTrace)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CHUNK_ROUNDS;
            let len = CHUNK_ROUNDS.min(params.rounds - start);
            ctx.run_chunk(params.seed, chunk, start, len)
        })
        .collect();

    let mut tally = TallySummary::empty(params.treatment, d);
    let mut trace = AttackTrace::default();
    for (t, tr) in &results {
        tally.merge(t);
        trace.eve_targets.extend_from_slice(&tr.eve_targets);
    }
    Ok((tally, trace))
}

struct AttackPlan<T> {
    pulses: Vec<SignalSpec<T>>,
    bank: DetectorBank<T>,
    fraction: f64,
    targets: TargetSequence,
}

struct RoundContext<T> {
    d: usize,
    p_x: f64,
    treatment: Treatment,
    honest_signal: SignalSpec<T>,
    honest_bank: DetectorBank<T>,
    attack: Option<AttackPlan<T>>,
}

impl<T: Real> RoundContext<T> {
    fn run_chunk(&self, seed: u64, chunk: u64, start: u64, len: u64) -> (TallySummary, AttackTrace) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let mut eve_rng = match self.attack.as_ref().map(|a| &a.targets) {
            Some(TargetSequence::Pseudorandom { seed: eve_seed }) => {
                let mut r = ChaCha8Rng::seed_from_u64(*eve_seed);
                r.set_stream(chunk);
                Some(r)
            }
            _ => None,
        };

        let d = self.d;
        let mut tally = TallySummary::empty(self.treatment, d);
        let mut trace = AttackTrace::default();
        let mut assignment: Vec<usize> = (0..d).collect();

        for round in start..start + len {
            // Eve commits to her target before knowing Alice's basis.
            let eve_target = self.attack.as_ref().map(|plan| match &plan.targets {
                TargetSequence::Explicit(seq) => seq[(round % seq.len() as u64) as usize],
                TargetSequence::Pseudorandom { .. } => eve_rng.as_mut().expect("eve stream").random_range(0..d),
            });

            let basis = if rng.random::<f64>() < self.p_x { Basis::X } else { Basis::Z };
            let correct = if basis == Basis::X && self.treatment == Treatment::BlindingAware {
                rng.random_range(0..d)
            } else {
                0
            };
            assignment.iter_mut().enumerate().for_each(|(i, a)| *a = i);
            assignment.swap(0, correct);

            let attacked = match &self.attack {
                Some(plan) => plan.fraction >= 1.0 || (plan.fraction > 0.0 && rng.random::<f64>() < plan.fraction),
                None => false,
            };
            let pattern = match (&self.attack, attacked) {
                (Some(plan), true) => {
                    let target = eve_target.expect("attacked round has a target");
                    measure_validated(&plan.pulses[target], &plan.bank, basis, &assignment, &mut rng)
                }
                _ => measure_validated(&self.honest_signal, &self.honest_bank, basis, &assignment, &mut rng),
            };
            let category = classify_pattern(pattern, basis, correct, self.treatment);
            if matches!(category, Category::ZSingle(_)) {
                trace.eve_targets.push(if attacked { eve_target.map(|t| t as u32) } else { None });
            }
            tally.record(basis, pattern.fired(), category);
        }
        (tally, trace)
    }
}

/// Random bits consumed by basis choice (and, for the blinding-aware
/// protocol, the X-basis detector assignment).
pub fn seed_cost(rounds: u64, x_rounds: u64, d: usize, treatment: Treatment) -> Result<u64> {
    if x_rounds > rounds {
        return Err(Error::param("x_rounds", "N_x exceeds N"));
    }
    if x_rounds == 0 {
        return Ok(0);
    }
    let per_round = match treatment {
        Treatment::BlindingAware => (rounds as f64).log2() + (d as f64).log2(),
        Treatment::LegacySquash => (rounds as f64).log2(),
    };
    Ok((x_rounds as f64 * per_round).ceil() as u64)
}

/// Serialize Z single-click symbols, `log2 d` bits each, most significant first.
pub fn raw_bits(tally: &TallySummary, d: usize) -> Result<BitString> {
    symbols_to_bits(&tally.raw_symbols, d)
}

pub fn symbols_to_bits(symbols: &[u32], d: usize) -> Result<BitString> {
    if d < 2 || !d.is_power_of_two() {
        return Err(Error::UnsupportedSerialization(d));
    }
    let width = d.trailing_zeros() as usize;
    let mut bits = BitString::with_capacity(symbols.len() * width);
    for &s in symbols {
        if s as usize >= d {
            return Err(Error::param("raw_symbols", format!("symbol {s} >= d = {d}")));
        }
        for k in (0..width).rev() {
            bits.push((s >> k) & 1 == 1);
        }
    }
    Ok(bits)
}
