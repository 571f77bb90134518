//! Closed-form gains and expected tallies for coherent-state inputs, and the
//! expected generation rate that follows from them.

use serde::{Deserialize, Serialize};

use crate::detector::Treatment;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::security::{analyze_counts, AnalysisCounts, AnalysisOptions, AnalysisReport, SecurityParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ChannelModel<T> {
    /// Mean photon number at the source.
    pub mu: T,
    /// Total transmittance including detection efficiency.
    pub eta: T,
    pub dark_count: T,
    #[serde(default = "default_misalignment")]
    pub misalignment: T,
    pub dimension: usize,
}

fn default_misalignment<T: Real>() -> T {
    T::lit(DEFAULT_MISALIGNMENT)
}

pub const DEFAULT_MISALIGNMENT: f64 = 0.004;

/// Repetition rate and detector count rate of the reference experiment.
const EXPERIMENT_REPETITION_HZ: f64 = 5.0e6;
const EXPERIMENT_COUNT_RATE_HZ: f64 = 4.15e6;
const EXPERIMENT_REFERENCE_MU: f64 = 9.3;
const EXPERIMENT_DARK_CPS: [f64; 2] = [24.0, 5.0];

impl<T: Real> ChannelModel<T> {
    pub fn new(mu: T, eta: T, dark_count: T, dimension: usize) -> Self {
        Self { mu, eta, dark_count, misalignment: T::lit(DEFAULT_MISALIGNMENT), dimension }
    }

    /// Two-detector model calibrated to the reference experiment: the
    /// per-detector Z click probability `count_rate / repetition` at
    /// `μ = 9.3` fixes `η` through `1 - exp(-μη/2)`, and the dark-count
    /// probability is the mean channel dark rate per gate.
    pub fn experiment() -> Self {
        let click = EXPERIMENT_COUNT_RATE_HZ / EXPERIMENT_REPETITION_HZ;
        let eta = -2.0 * (1.0 - click).ln() / EXPERIMENT_REFERENCE_MU;
        let dark = EXPERIMENT_DARK_CPS.iter().sum::<f64>() / 2.0 / EXPERIMENT_REPETITION_HZ;
        Self::new(T::lit(EXPERIMENT_REFERENCE_MU), T::lit(eta), T::lit(dark), 2)
    }

    pub fn with_mu(self, mu: T) -> Self {
        Self { mu, ..self }
    }

    /// Extra channel loss in dB on top of the current transmittance.
    pub fn with_extra_loss_db(self, loss_db: T) -> Self {
        let factor = T::lit(10.0).powf(-loss_db / T::lit(10.0));
        Self { eta: self.eta * factor, ..self }
    }

    /// Mean photon number reaching the detectors, `μ' = μη`.
    pub fn mu_eff(&self) -> T {
        self.mu * self.eta
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::param("dimension", "need d >= 2"));
        }
        if !(self.mu >= T::zero()) || !self.mu.is_finite() {
            return Err(Error::param("mu", "must be finite and >= 0"));
        }
        if !(self.eta >= T::zero() && self.eta <= T::one()) {
            return Err(Error::param("eta", "must lie in [0, 1]"));
        }
        if !(self.dark_count >= T::zero() && self.dark_count < T::one()) {
            return Err(Error::param("dark_count", "must lie in [0, 1)"));
        }
        if !(self.misalignment >= T::zero() && self.misalignment < T::one()) {
            return Err(Error::param("misalignment", "must lie in [0, 1)"));
        }
        Ok(())
    }

    fn dim(&self) -> T {
        T::from_usize(self.dimension).expect("dimension fits scalar")
    }

    /// `Q_μ^x`: single click on the correct X detector.
    pub fn gain_x(&self) -> T {
        let keep = T::one() - self.dark_count;
        keep.powi(self.dimension as i32 - 1) - keep.powi(self.dimension as i32) * (-self.mu_eff()).exp()
    }

    /// `Q_μ^z`: single click on any Z detector.
    pub fn gain_z_single(&self) -> T {
        let d = self.dim();
        let keep = T::one() - self.dark_count;
        let n = self.dimension as i32;
        d * keep.powi(n - 1) * (-(d - T::one()) * self.mu_eff() / d).exp() - d * keep.powi(n) * (-self.mu_eff()).exp()
    }

    /// Probability that one given Z detector fires.
    pub fn z_detector_click(&self) -> T {
        T::one() - (T::one() - self.dark_count) * (-self.mu_eff() / self.dim()).exp()
    }

    /// Legacy two-detector total click gain `1 - (1-p_d)^2 e^{-μη}`.
    pub fn legacy_gain_click(&self) -> T {
        let keep = T::one() - self.dark_count;
        T::one() - keep * keep * (-self.mu_eff()).exp()
    }

    /// Legacy error gain `p_d + e_d (Q_x - p_d)`.
    pub fn legacy_gain_error(&self) -> T {
        self.dark_count + self.misalignment * (self.legacy_gain_click() - self.dark_count)
    }

    /// Legacy single-click gain `2(1-p_d) e^{-μη/2} - 2(1-p_d)^2 e^{-μη}`.
    pub fn legacy_gain_single(&self) -> T {
        let keep = T::one() - self.dark_count;
        let two = T::lit(2.0);
        two * keep * (-self.mu_eff() / two).exp() - two * keep * keep * (-self.mu_eff()).exp()
    }
}

/// Per-photon-number yields `(Y_n^{|0>_x}, Y_n^{sc})`; the second is the
/// single-click yield of one particular Z detector.
pub fn yields_photon_number<T: Real>(n: u32, model: &ChannelModel<T>) -> (T, T) {
    let keep = T::one() - model.dark_count;
    let d = model.dimension as i32;
    let dd = T::from_usize(model.dimension).expect("dimension fits scalar");
    let lost = (T::one() - model.eta).powi(n as i32);
    let y_x = keep.powi(d - 1) - keep.powi(d) * lost;
    let stay = (T::one() - (dd - T::one()) * model.eta / dd).powi(n as i32);
    let y_sc = keep.powi(d - 1) * (stay - lost * keep);
    (y_x, y_sc)
}

/// Expected counts; real-valued because they are means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTallies<T> {
    pub treatment: Treatment,
    pub dimension: usize,
    pub rounds: T,
    pub x_rounds: T,
    pub z_rounds: T,
    pub x_correct: T,
    pub x_error: T,
    /// X rounds with a click (equals `x_rounds` for the blinding-aware model).
    pub x_clicked: T,
    /// Z rounds with a click (equals `z_rounds` for the blinding-aware model).
    pub z_clicked: T,
    pub z_single: T,
    pub z_totals: Vec<T>,
    pub z_singles: Vec<T>,
}

impl<T: Real> ExpectedTallies<T> {
    pub fn counts(&self) -> AnalysisCounts<T> {
        let (x_sample, z_rounds) = match self.treatment {
            Treatment::BlindingAware => (self.x_rounds, self.z_rounds),
            Treatment::LegacySquash => (self.x_clicked, self.z_clicked),
        };
        AnalysisCounts {
            dimension: self.dimension,
            rounds: self.rounds,
            x_rounds: self.x_rounds,
            x_sample,
            x_errors: self.x_error,
            z_rounds,
            z_single: self.z_single,
        }
    }
}

fn check_rounds<T: Real>(model: &ChannelModel<T>, rounds: T, p_x: T) -> Result<()> {
    model.validate()?;
    if !(rounds >= T::one()) {
        return Err(Error::param("rounds", "need at least one round"));
    }
    if !(p_x > T::zero() && p_x < T::one()) {
        return Err(Error::param("p_x", "must lie in (0, 1)"));
    }
    Ok(())
}

/// Expected tallies of the blinding-aware protocol.
pub fn expected_tallies_new<T: Real>(model: &ChannelModel<T>, rounds: T, p_x: T) -> Result<ExpectedTallies<T>> {
    check_rounds(model, rounds, p_x)?;
    let x_rounds = rounds * p_x;
    let z_rounds = rounds - x_rounds;
    let q_x = model.gain_x();
    let x_error = x_rounds * (T::one() - q_x + model.misalignment * q_x);
    let z_single = z_rounds * model.gain_z_single();
    let d = model.dimension;
    let per_detector = T::from_usize(d).expect("dimension fits scalar");
    Ok(ExpectedTallies {
        treatment: Treatment::BlindingAware,
        dimension: d,
        rounds,
        x_rounds,
        z_rounds,
        x_correct: x_rounds - x_error,
        x_error,
        x_clicked: x_rounds,
        z_clicked: z_rounds,
        z_single,
        z_totals: vec![z_rounds * model.z_detector_click(); d],
        z_singles: vec![z_single / per_detector; d],
    })
}

/// Expected tallies of the legacy (no-click-as-vacuum) protocol; `d = 2` only.
pub fn expected_tallies_legacy<T: Real>(model: &ChannelModel<T>, rounds: T, p_x: T) -> Result<ExpectedTallies<T>> {
    check_rounds(model, rounds, p_x)?;
    if model.dimension != 2 {
        return Err(Error::UnsupportedDimension(model.dimension));
    }
    let x_rounds = rounds * p_x;
    let z_rounds = rounds - x_rounds;
    let q_click = model.legacy_gain_click();
    let x_clicked = x_rounds * q_click;
    let x_error = x_rounds * model.legacy_gain_error();
    let z_single = z_rounds * model.legacy_gain_single();
    let two = T::lit(2.0);
    Ok(ExpectedTallies {
        treatment: Treatment::LegacySquash,
        dimension: 2,
        rounds,
        x_rounds,
        z_rounds,
        x_correct: x_clicked - x_error,
        x_error,
        x_clicked,
        z_clicked: z_rounds * q_click,
        z_single,
        z_totals: vec![z_rounds * model.z_detector_click(); 2],
        z_singles: vec![z_single / two; 2],
    })
}

pub fn expected_tallies<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    p_x: T,
    variant: Treatment,
) -> Result<ExpectedTallies<T>> {
    match variant {
        Treatment::BlindingAware => expected_tallies_new(model, rounds, p_x),
        Treatment::LegacySquash => expected_tallies_legacy(model, rounds, p_x),
    }
}

/// Analysis of the expected tallies. A model without extractable rounds or
/// without clicked test rounds yields a zero-length report rather than an
/// error, so rate curves and optimizers see `R = 0` there.
pub fn expected_rate<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    p_x: T,
    sec: &SecurityParams<T>,
    variant: Treatment,
    asymptotic: bool,
) -> Result<AnalysisReport<T>> {
    let tallies = expected_tallies(model, rounds, p_x, variant)?;
    let mut counts = tallies.counts();
    let options = AnalysisOptions { phi_override: None, asymptotic };
    let starved = !(counts.z_single >= T::one()) || !(counts.x_sample >= T::one()) || !(counts.z_rounds >= T::one());
    if starved {
        // analyse a stand-in with one single click and report zero length
        counts.z_rounds = counts.z_rounds.max(T::one());
        counts.z_single = counts.z_single.max(T::one()).min(counts.z_rounds);
        counts.x_sample = counts.x_sample.max(T::one());
        counts.x_errors = counts.x_sample;
    }
    let mut report = analyze_counts(&counts, sec, variant, &options)?;
    if starved {
        report.length = 0;
        report.rate = T::zero();
        report.length_bound = report.length_bound.min(T::zero());
    }
    Ok(report)
}

/// One point of a rate curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint<T> {
    pub x: T,
    pub mu: T,
    pub p_x: T,
    pub rate: T,
}

/// `R` as a function of source intensity.
pub fn rate_vs_intensity<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    p_x: T,
    sec: &SecurityParams<T>,
    variant: Treatment,
    asymptotic: bool,
    intensities: &[T],
) -> Result<Vec<CurvePoint<T>>> {
    intensities
        .iter()
        .map(|&mu| {
            let r = expected_rate(&model.with_mu(mu), rounds, p_x, sec, variant, asymptotic)?;
            Ok(CurvePoint { x: mu, mu, p_x, rate: r.rate })
        })
        .collect()
}
