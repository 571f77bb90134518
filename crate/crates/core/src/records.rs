//! File formats: measured count records, session configurations, and
//! reports. All are single JSON objects.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::detector::{DetectorBank, HonestPulse, Treatment};
use crate::error::{Error, Result};
use crate::rate::DEFAULT_MISALIGNMENT;
use crate::security::{AnalysisCounts, GammaBound, SecurityParams};
use crate::session::{ProtocolParams, SessionSource};

/// Largest disagreement tolerated between a stated `e_x` and the error
/// count, covering rates printed to four decimals.
pub const RATE_ROUNDING: f64 = 5e-5;

/// Measured counts of one run, field-for-field as published tables list them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub variant: Treatment,
    #[serde(rename = "N_Z")]
    pub n_z: u64,
    #[serde(rename = "N_X")]
    pub n_x: u64,
    /// Clicks of each Z detector, single or multiple.
    pub total_clicks_z: Vec<u64>,
    /// Single clicks of each Z detector.
    pub single_clicks_z: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_errors: Option<u64>,
    /// X rounds with a click; legacy analysis samples only these.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_clicked: Option<u64>,
    /// Z rounds with a click; legacy analysis only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_clicked: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_z_override: Option<f64>,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_e: Option<f64>,
    pub eps_sec: f64,
    /// Published rate, kept for comparison only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CountsRecord {
    pub fn dimension(&self) -> usize {
        self.total_clicks_z.len()
    }

    pub fn z_single(&self) -> u64 {
        self.single_clicks_z.iter().sum()
    }

    pub fn eta_e(&self) -> f64 {
        self.eta_e.unwrap_or(1.0)
    }

    /// X rounds the error rate refers to.
    pub fn x_sample(&self) -> u64 {
        match self.variant {
            Treatment::BlindingAware => self.n_x,
            Treatment::LegacySquash => self.x_clicked.unwrap_or(self.n_x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension();
        if d < 2 {
            return Err(Error::record("total_clicks_z", "need one entry per detector, d >= 2"));
        }
        if self.single_clicks_z.len() != d {
            return Err(Error::record(
                "single_clicks_z",
                format!("has {} entries, total_clicks_z has {d}", self.single_clicks_z.len()),
            ));
        }
        for (i, (&s, &t)) in self.single_clicks_z.iter().zip(&self.total_clicks_z).enumerate() {
            if s > t {
                return Err(Error::record(format!("single_clicks_z[{i}]"), format!("{s} exceeds total {t}")));
            }
            if t > self.n_z {
                return Err(Error::record(format!("total_clicks_z[{i}]"), format!("{t} exceeds N_Z = {}", self.n_z)));
            }
        }
        if self.z_single() > self.n_z {
            return Err(Error::record(
                "single_clicks_z",
                format!("sum {} exceeds N_Z = {}", self.z_single(), self.n_z),
            ));
        }
        if let Some(c) = self.x_clicked {
            if c > self.n_x {
                return Err(Error::record("x_clicked", "exceeds N_X"));
            }
        }
        if let Some(c) = self.z_clicked {
            if c > self.n_z || c < self.z_single() {
                return Err(Error::record("z_clicked", "must lie between the single clicks and N_Z"));
            }
        }
        let sample = self.x_sample();
        match (self.e_x, self.x_errors) {
            (None, None) => return Err(Error::record("e_x", "either e_x or x_errors is required")),
            (Some(e), _) if !(0.0..=1.0).contains(&e) => return Err(Error::record("e_x", "must lie in [0, 1]")),
            (_, Some(k)) if k > sample => {
                return Err(Error::record("x_errors", format!("{k} exceeds the {sample} sampled X rounds")))
            }
            (Some(e), Some(k)) if sample > 0 && (k as f64 / sample as f64 - e).abs() > RATE_ROUNDING => {
                return Err(Error::record("x_errors", format!("{k} errors in {sample} rounds disagree with e_x = {e}")))
            }
            _ => {}
        }
        if let Some(phi) = self.phi_z_override {
            if !(0.0..=1.0).contains(&phi) {
                return Err(Error::record("phi_z_override", "must lie in [0, 1]"));
            }
        }
        if !(self.q > 0.0 && self.q <= (d as f64).log2()) {
            return Err(Error::record("q", format!("must lie in (0, log2 {d}]")));
        }
        if let Some(e) = self.eta_e {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::record("eta_e", "must lie in (0, 1]"));
            }
        }
        if !(self.eps_sec > 0.0 && self.eps_sec < 1.0) {
            return Err(Error::record("eps_sec", "must lie in (0, 1)"));
        }
        if self.variant == Treatment::LegacySquash && d != 2 && self.z_clicked.is_none() {
            return Err(Error::record("z_clicked", "required for legacy records with d != 2"));
        }
        Ok(())
    }

    pub fn security(&self, gamma_bound: GammaBound) -> SecurityParams<f64> {
        SecurityParams { gamma_bound, ..SecurityParams::new(self.eps_sec, self.q, self.eta_e()) }
    }

    /// Counts as seen by the analysis. A stated `e_x` takes precedence over
    /// an error count; legacy Z rounds default to the single clicks plus the
    /// double clicks `total_0 - single_0`.
    pub fn to_analysis_counts(&self) -> AnalysisCounts<f64> {
        let sample = self.x_sample() as f64;
        let x_errors = match (self.e_x, self.x_errors) {
            (Some(e), _) => e * sample,
            (None, Some(k)) => k as f64,
            (None, None) => 0.0,
        };
        let z_rounds = match self.variant {
            Treatment::BlindingAware => self.n_z,
            Treatment::LegacySquash => {
                self.z_clicked.unwrap_or_else(|| self.z_single() + self.total_clicks_z[0] - self.single_clicks_z[0])
            }
        };
        AnalysisCounts {
            dimension: self.dimension(),
            rounds: (self.n_z + self.n_x) as f64,
            x_rounds: self.n_x as f64,
            x_sample: sample,
            x_errors,
            z_rounds: z_rounds as f64,
            z_single: self.z_single() as f64,
        }
    }
}

pub fn parse_counts(text: &str) -> Result<CountsRecord> {
    let record: CountsRecord = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    record.validate()?;
    if record.eta_e.is_none() {
        log::warn!("record has no eta_e; using 1.0");
    }
    Ok(record)
}

pub fn ingest_counts(path: impl AsRef<Path>) -> Result<CountsRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_counts(&text)
}

pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

fn default_efficiency() -> f64 {
    1.0
}

fn default_misalignment() -> f64 {
    DEFAULT_MISALIGNMENT
}

fn default_eps() -> f64 {
    1e-9
}

fn default_one() -> f64 {
    1.0
}

/// Parameters of a simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub rounds: u64,
    pub dimension: usize,
    pub p_x: f64,
    pub mu: f64,
    /// Channel transmittance.
    #[serde(default = "default_one")]
    pub eta: f64,
    /// Per-detector efficiency; one value applies to all detectors.
    #[serde(default)]
    pub detector_efficiency: Option<Vec<f64>>,
    #[serde(default)]
    pub dark_count: f64,
    #[serde(default = "default_misalignment")]
    pub misalignment: f64,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default = "default_one")]
    pub eta_e: f64,
    #[serde(default = "default_eps")]
    pub eps_sec: f64,
    #[serde(default)]
    pub gamma_bound: GammaBound,
    #[serde(default)]
    pub attack: Option<AttackConfig<f64>>,
}

impl SessionConfig {
    pub fn honest(rounds: u64, dimension: usize, p_x: f64, mu: f64) -> Self {
        Self {
            rounds,
            dimension,
            p_x,
            mu,
            eta: 1.0,
            detector_efficiency: None,
            dark_count: 0.0,
            misalignment: DEFAULT_MISALIGNMENT,
            q: None,
            eta_e: 1.0,
            eps_sec: default_eps(),
            gamma_bound: GammaBound::default(),
            attack: None,
        }
    }

    pub fn protocol(&self, treatment: Treatment, seed: u64) -> ProtocolParams<f64> {
        ProtocolParams { rounds: self.rounds, dimension: self.dimension, p_x: self.p_x, treatment, seed }
    }

    pub fn source(&self) -> SessionSource<f64> {
        SessionSource {
            honest: HonestPulse {
                mean_photons: self.mu,
                transmittance: self.eta,
                prepared: 0,
                misalignment: self.misalignment,
            },
            attack: self.attack.clone(),
        }
    }

    pub fn bank(&self) -> Result<DetectorBank<f64>> {
        let d = self.dimension;
        let eff = match &self.detector_efficiency {
            None => vec![default_efficiency(); d],
            Some(v) if v.len() == 1 => vec![v[0]; d],
            Some(v) => v.clone(),
        };
        DetectorBank::new(eff, self.dark_count, vec![0.0; d])
    }

    /// `q` defaults to `log2 d`.
    pub fn security(&self) -> SecurityParams<f64> {
        let q = self.q.unwrap_or((self.dimension as f64).log2());
        SecurityParams { gamma_bound: self.gamma_bound, ..SecurityParams::new(self.eps_sec, q, self.eta_e) }
    }
}

pub fn parse_session_config(text: &str) -> Result<SessionConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}
