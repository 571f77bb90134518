//! Finite-key analysis: certified extractable length from observed counts.
//!
//! The X basis is a sample of the rounds; its error rate, corrected for
//! sampling without replacement, bounds the phase error of the Z single-click
//! rounds. The extractable length follows from the entropic uncertainty
//! relation with basis incompatibility `q`, the leftover-hash penalty, and the
//! random seeds consumed by the basis and detector choices.

use serde::{Deserialize, Serialize};

use crate::detector::Treatment;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::session::TallySummary;

/// Statistical bound used for the sampling correction `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaBound {
    /// Chernoff bound in relative-entropy form, inverted numerically for the
    /// observed error rate.
    #[default]
    Chernoff,
    /// Closed form `sqrt((n+k)(k+1)/(n k^2) * ln(1/ε) / 2)`, independent of
    /// the observed rate.
    Serfling,
}

impl std::str::FromStr for GammaBound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chernoff" => Ok(GammaBound::Chernoff),
            "serfling" => Ok(GammaBound::Serfling),
            other => Err(Error::param("gamma_bound", format!("unknown bound `{other}`"))),
        }
    }
}

impl GammaBound {
    /// Upper deviation `γ` such that, when `k` of `n + k` positions are
    /// sampled uniformly without replacement and the sample shows error rate
    /// `observed`, the error rate on the `n` unsampled positions exceeds
    /// `observed + γ` with probability at most `failure`.
    ///
    /// The result is clamped so `observed + γ <= 1`.
    pub fn gamma<T: Real>(self, n: T, k: T, observed: T, failure: T) -> Result<T> {
        if !(k >= T::one()) {
            return Err(Error::InsufficientTestData(format!("sample size k = {k}")));
        }
        if !(n >= T::one()) {
            return Err(Error::param("n", format!("remaining size must be >= 1, got {n}")));
        }
        if !(observed >= T::zero() && observed <= T::one()) {
            return Err(Error::param("observed", "rate must lie in [0, 1]"));
        }
        if !(failure > T::zero() && failure < T::one()) {
            return Err(Error::param("failure", "probability must lie in (0, 1)"));
        }
        let raw = match self {
            GammaBound::Serfling => {
                let ln = (T::one() / failure).ln();
                ((n + k) * (k + T::one()) / (n * k * k) * ln / T::lit(2.0)).sqrt()
            }
            GammaBound::Chernoff => {
                let upper = chernoff_upper(observed, k, failure);
                (upper - observed) * (n + k) / n
            }
        };
        Ok(raw.min(T::one() - observed).max(T::zero()))
    }
}

/// Largest population rate `p >= rate` with `k * D(rate || p) <= ln(1/ε)`.
fn chernoff_upper<T: Real>(rate: T, k: T, failure: T) -> T {
    if rate >= T::one() {
        return T::one();
    }
    let budget = (T::one() / failure).ln() / k;
    let mut lo = rate;
    let mut hi = T::one();
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if binary_relative_entropy(rate, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `D(a || p)` in nats for Bernoulli distributions.
fn binary_relative_entropy<T: Real>(a: T, p: T) -> T {
    let term = |x: T, y: T| if x <= T::zero() { T::zero() } else { x * (x / y).ln() };
    term(a, p) + term(T::one() - a, T::one() - p)
}

/// `γ` with the default bound.
pub fn gamma_bound<T: Real>(n: T, k: T, observed: T, failure: T) -> Result<T> {
    GammaBound::default().gamma(n, k, observed, failure)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecrecyBudget<T> {
    /// Smoothing parameter of the entropies.
    pub smoothing: T,
    /// Failure probability of the sampling bound.
    pub sampling: T,
    /// Failure probability of leftover hashing.
    pub hashing: T,
}

impl<T: Real> SecrecyBudget<T> {
    pub fn total(&self) -> T {
        self.smoothing + self.sampling + self.hashing
    }
}

/// Equal three-way split of the total secrecy parameter.
pub fn secrecy_budget<T: Real>(eps_sec: T) -> Result<SecrecyBudget<T>> {
    if !(eps_sec > T::zero() && eps_sec < T::one()) {
        return Err(Error::param("eps_sec", "must lie in (0, 1)"));
    }
    let third = eps_sec / T::lit(3.0);
    Ok(SecrecyBudget { smoothing: third, sampling: third, hashing: third })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityParams<T> {
    pub eps_sec: T,
    /// Basis incompatibility, in bits.
    pub q: T,
    /// Detection-balance coefficient `2 min(η0, η1) / (η0 + η1)`.
    pub eta_e: T,
    #[serde(default)]
    pub gamma_bound: GammaBound,
}

impl<T: Real> SecurityParams<T> {
    pub fn new(eps_sec: T, q: T, eta_e: T) -> Self {
        Self { eps_sec, q, eta_e, gamma_bound: GammaBound::default() }
    }

    /// Calibration of the two-detector polarization setup.
    pub fn calibrated() -> Self {
        Self::new(T::lit(1e-9), T::lit(0.954), T::lit(0.9932))
    }

    /// Ideal mutually unbiased bases in dimension `d`.
    pub fn ideal(d: usize) -> Self {
        Self::new(T::lit(1e-9), log2_dim(d), T::one())
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        secrecy_budget(self.eps_sec)?;
        if !(self.q > T::zero() && self.q <= log2_dim::<T>(d) + T::epsilon()) {
            return Err(Error::param("q", format!("must lie in (0, log2 {d}]")));
        }
        if !(self.eta_e > T::zero() && self.eta_e <= T::one()) {
            return Err(Error::param("eta_e", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Detection-balance coefficient from two channel efficiencies.
pub fn detection_balance<T: Real>(eta0: T, eta1: T) -> T {
    T::lit(2.0) * eta0.min(eta1) / (eta0 + eta1)
}

pub(crate) fn log2_dim<T: Real>(d: usize) -> T {
    T::from_usize(d).expect("dimension fits scalar").log2()
}

/// d-ary entropy `h_d(x) = -x log2(x/(d-1)) - (1-x) log2(1-x)`, saturating at
/// `log2 d` for `x >= (d-1)/d`.
pub fn entropy_hd<T: Real>(x: T, d: usize) -> T {
    let dd = T::from_usize(d).expect("dimension fits scalar");
    let cap = (dd - T::one()) / dd;
    if x <= T::zero() {
        T::zero()
    } else if x >= cap {
        dd.log2()
    } else {
        -x * (x / (dd - T::one())).log2() - (T::one() - x) * (T::one() - x).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseError<T> {
    pub value: T,
    /// The `(d-1)/d` cap was applied.
    pub saturated: bool,
}

/// Phase-error bound assuming every X-type error falls on a Z single click.
pub fn phase_error_upper<T: Real>(e_x_bar: T, n_z: T, n_z_single: T, d: usize) -> Result<PhaseError<T>> {
    if !(n_z_single >= T::one()) {
        return Err(Error::NoExtractableRounds);
    }
    Ok(cap_phase(e_x_bar * n_z / n_z_single, d))
}

fn cap_phase<T: Real>(value: T, d: usize) -> PhaseError<T> {
    let dd = T::from_usize(d).expect("dimension fits scalar");
    let cap = (dd - T::one()) / dd;
    if value > cap {
        PhaseError { value: cap, saturated: true }
    } else {
        PhaseError { value, saturated: false }
    }
}

/// Counts entering the key-length formula, already mapped to the variant.
///
/// For the blinding-aware protocol `x_sample = N_x`, `z_rounds = N_z`; for the
/// legacy protocol they are the clicked-round counts `n_x`, `n_z`. `x_rounds`
/// always counts every X round (it prices the basis-choice seeds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCounts<T> {
    pub dimension: usize,
    pub rounds: T,
    pub x_rounds: T,
    pub x_sample: T,
    pub x_errors: T,
    pub z_rounds: T,
    pub z_single: T,
}

impl<T: Real> AnalysisCounts<T> {
    pub fn from_tally(tally: &TallySummary) -> Self {
        let c = T::from_count;
        let (x_sample, z_rounds) = match tally.treatment {
            Treatment::BlindingAware => (tally.x_rounds, tally.z_rounds),
            Treatment::LegacySquash => (tally.x_clicked(), tally.z_clicked()),
        };
        Self {
            dimension: tally.dimension,
            rounds: c(tally.rounds),
            x_rounds: c(tally.x_rounds),
            x_sample: c(x_sample),
            x_errors: c(tally.x_error),
            z_rounds: c(z_rounds),
            z_single: c(tally.z_single),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisOptions<T> {
    /// Use this phase-error bound instead of computing it from `γ`.
    pub phi_override: Option<T>,
    /// Infinite-data limit: `γ = 0` and no hashing penalty.
    pub asymptotic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport<T> {
    pub variant: Treatment,
    pub dimension: usize,
    pub rounds: T,
    pub e_x: T,
    pub gamma: T,
    pub e_x_bar: T,
    pub phi_z: T,
    pub phi_saturated: bool,
    pub phi_overridden: bool,
    pub entropy: T,
    pub q: T,
    pub eta_e: T,
    pub budget: SecrecyBudget<T>,
    pub n_seeds: T,
    /// Right-hand side of the length bound before clamping at zero.
    pub length_bound: T,
    /// Certified output length in whole bits.
    pub length: u64,
    pub rate: T,
}

/// Seeds consumed for basis choice (and detector assignment when
/// blinding-aware), rounded up to whole bits.
pub fn seed_bits<T: Real>(rounds: T, x_rounds: T, d: usize, variant: Treatment) -> T {
    if x_rounds <= T::zero() {
        return T::zero();
    }
    let per_round = match variant {
        Treatment::BlindingAware => rounds.log2() + log2_dim::<T>(d),
        Treatment::LegacySquash => rounds.log2(),
    };
    (x_rounds * per_round).ceil()
}

/// Extractable length for a simulated tally. The tally must have been
/// produced under `variant`.
pub fn key_length<T: Real>(
    tally: &TallySummary,
    sec: &SecurityParams<T>,
    variant: Treatment,
    phi_override: Option<T>,
) -> Result<AnalysisReport<T>> {
    if tally.treatment != variant {
        return Err(Error::InconsistentAnalysis(format!(
            "tally produced under {} analysed as {}",
            tally.treatment.as_str(),
            variant.as_str()
        )));
    }
    let options = AnalysisOptions { phi_override, asymptotic: false };
    analyze_counts(&AnalysisCounts::from_tally(tally), sec, variant, &options)
}

pub fn analyze_counts<T: Real>(
    counts: &AnalysisCounts<T>,
    sec: &SecurityParams<T>,
    variant: Treatment,
    options: &AnalysisOptions<T>,
) -> Result<AnalysisReport<T>> {
    let d = counts.dimension;
    sec.validate(d)?;
    let budget = secrecy_budget(sec.eps_sec)?;
    if !(counts.x_sample >= T::one()) {
        return Err(Error::InsufficientTestData("no X-basis rounds available for error estimation".into()));
    }
    if !(counts.z_single >= T::one()) {
        return Err(Error::NoExtractableRounds);
    }
    let e_x = counts.x_errors / counts.x_sample;

    let (gamma, phase, overridden) = match options.phi_override {
        Some(phi) => {
            if !(phi >= T::zero() && phi <= T::one()) {
                return Err(Error::param("phi_override", "must lie in [0, 1]"));
            }
            (T::zero(), cap_phase(phi, d), true)
        }
        None => {
            let gamma = if options.asymptotic {
                T::zero()
            } else {
                sec.gamma_bound.gamma(counts.z_rounds, counts.x_sample, e_x, budget.sampling)?
            };
            let e_bar = (e_x + gamma).min(T::one());
            (gamma, phase_error_upper(e_bar, counts.z_rounds, counts.z_single, d)?, false)
        }
    };
    let e_x_bar = (e_x + gamma).min(T::one());
    let entropy = entropy_hd(phase.value, d);

    let hashing =
        if options.asymptotic { T::zero() } else { T::lit(2.0) * (T::one() / (T::lit(2.0) * budget.hashing)).log2() };
    let n_seeds = seed_bits(counts.rounds, counts.x_rounds, d, variant);
    let privacy = counts.z_single * (sec.q - entropy) - hashing;
    let length_bound = match variant {
        Treatment::BlindingAware => sec.eta_e * privacy - n_seeds,
        Treatment::LegacySquash => privacy - n_seeds,
    };
    let length = if length_bound > T::zero() { length_bound.floor().to_u64().unwrap_or(u64::MAX) } else { 0 };
    let rate = T::from_count(length) / counts.rounds;

    Ok(AnalysisReport {
        variant,
        dimension: d,
        rounds: counts.rounds,
        e_x,
        gamma,
        e_x_bar,
        phi_z: phase.value,
        phi_saturated: phase.saturated,
        phi_overridden: overridden,
        entropy,
        q: sec.q,
        eta_e: match variant {
            Treatment::BlindingAware => sec.eta_e,
            Treatment::LegacySquash => T::one(),
        },
        budget,
        n_seeds,
        length_bound,
        length,
        rate,
    })
}
