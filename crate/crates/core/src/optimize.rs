//! Deterministic maximization of the expected rate over source intensity and
//! basis ratio: a log-spaced grid followed by coordinate-wise golden-section
//! refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::Treatment;
use crate::error::{Error, Result};
use crate::rate::{expected_rate, ChannelModel, CurvePoint};
use crate::scalar::Real;
use crate::security::SecurityParams;

pub const GRID_POINTS: usize = 50;
pub const MU_RANGE: (f64, f64) = (0.01, 100.0);
pub const P_X_RANGE: (f64, f64) = (1e-6, 0.5);
const REFINE_PASSES: usize = 2;
const RELATIVE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum<T> {
    pub mu: T,
    pub p_x: T,
    pub rate: T,
}

/// Problem shared by all evaluations of one optimization.
struct Objective<'a, T> {
    model: &'a ChannelModel<T>,
    rounds: T,
    sec: &'a SecurityParams<T>,
    variant: Treatment,
    asymptotic: bool,
}

impl<T: Real> Objective<'_, T> {
    /// Unfloored length per round; monotone in the reported rate and smoother
    /// for the line searches.
    fn score(&self, mu: T, p_x: T) -> Result<T> {
        let report = expected_rate(&self.model.with_mu(mu), self.rounds, p_x, self.sec, self.variant, self.asymptotic)?;
        Ok(if report.length == 0 { T::zero() } else { report.length_bound / self.rounds })
    }

    fn finish(&self, mu: T, p_x: T) -> Result<Optimum<T>> {
        let report = expected_rate(&self.model.with_mu(mu), self.rounds, p_x, self.sec, self.variant, self.asymptotic)?;
        Ok(Optimum { mu, p_x, rate: report.rate })
    }
}

fn log_grid<T: Real>(lo: f64, hi: f64, n: usize) -> Vec<T> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| T::lit((a + (b - a) * i as f64 / (n - 1) as f64).exp())).collect()
}

/// Maximizes `score` on `[lo, hi]` in log coordinates, starting from the
/// incumbent `(x0, f0)`. Returns the incumbent unless strictly improved.
fn golden_section<T: Real>(lo: T, hi: T, x0: T, f0: T, score: impl Fn(T) -> Result<T>) -> Result<(T, T)> {
    let ratio = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = score(c.exp())?;
    let mut fd = score(d.exp())?;
    let tol = T::lit(RELATIVE_TOLERANCE);
    while (b.exp() - a.exp()) > tol * ((a.exp() + b.exp()) / T::lit(2.0)) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = score(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = score(d.exp())?;
        }
    }
    let (x, f) = if fc >= fd { (c.exp(), fc) } else { (d.exp(), fd) };
    Ok(if f > f0 { (x, f) } else { (x0, f0) })
}

/// Bracket spanning the grid neighbours of `value`.
fn bracket<T: Real>(grid: &[T], value: T) -> (T, T) {
    let pos = grid.iter().position(|&g| g >= value).unwrap_or(grid.len() - 1);
    let lo = grid[pos.saturating_sub(1)].min(value);
    let hi = grid[(pos + 1).min(grid.len() - 1)].max(value);
    (lo, hi)
}

/// Best `(μ, p_x)` for the model's `η`, `p_d`, `e_d` and `d`; the model's
/// own `μ` is ignored. `R* = 0` is a valid outcome.
pub fn optimize_params<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    sec: &SecurityParams<T>,
    variant: Treatment,
    asymptotic: bool,
) -> Result<Optimum<T>> {
    model.validate()?;
    let objective = Objective { model, rounds, sec, variant, asymptotic };
    let mus: Vec<T> = log_grid(MU_RANGE.0, MU_RANGE.1, GRID_POINTS);
    let pxs: Vec<T> = log_grid(P_X_RANGE.0, P_X_RANGE.1, GRID_POINTS);

    let scores = (0..mus.len() * pxs.len())
        .into_par_iter()
        .map(|idx| objective.score(mus[idx / pxs.len()], pxs[idx % pxs.len()]))
        .collect::<Result<Vec<T>>>()?;
    // index order is (μ, p_x) ascending, so the first maximum wins ties
    let mut best = 0;
    for (idx, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = idx;
        }
    }
    let (mut mu, mut p_x, mut f) = (mus[best / pxs.len()], pxs[best % pxs.len()], scores[best]);
    if f <= T::zero() {
        return objective.finish(mu, p_x);
    }

    for _ in 0..REFINE_PASSES {
        let (lo, hi) = bracket(&mus, mu);
        (mu, f) = golden_section(lo, hi, mu, f, |m| objective.score(m, p_x))?;
        let (lo, hi) = bracket(&pxs, p_x);
        (p_x, f) = golden_section(lo, hi, p_x, f, |p| objective.score(mu, p))?;
    }
    objective.finish(mu, p_x)
}

/// Best `μ` at fixed `p_x`.
pub fn optimize_intensity<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    p_x: T,
    sec: &SecurityParams<T>,
    variant: Treatment,
    asymptotic: bool,
) -> Result<Optimum<T>> {
    model.validate()?;
    let objective = Objective { model, rounds, sec, variant, asymptotic };
    let mus: Vec<T> = log_grid(MU_RANGE.0, MU_RANGE.1, GRID_POINTS);
    let scores = mus.par_iter().map(|&m| objective.score(m, p_x)).collect::<Result<Vec<T>>>()?;
    let mut best = 0;
    for (idx, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = idx;
        }
    }
    let (mut mu, f) = (mus[best], scores[best]);
    if f > T::zero() {
        let (lo, hi) = bracket(&mus, mu);
        mu = golden_section(lo, hi, mu, f, |m| objective.score(m, p_x))?.0;
    }
    objective.finish(mu, p_x)
}

/// How the source intensity is chosen at each loss value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityPolicy {
    /// Keep the model's `μ`.
    Fixed,
    /// Re-optimize `μ` at every loss value.
    Optimal,
}

/// `R` against extra channel loss in dB.
pub fn rate_vs_loss<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    p_x: T,
    sec: &SecurityParams<T>,
    variant: Treatment,
    policy: IntensityPolicy,
    losses_db: &[T],
) -> Result<Vec<CurvePoint<T>>> {
    losses_db
        .iter()
        .map(|&loss| {
            let lossy = model.with_extra_loss_db(loss);
            let (mu, rate) = match policy {
                IntensityPolicy::Fixed => (model.mu, expected_rate(&lossy, rounds, p_x, sec, variant, false)?.rate),
                IntensityPolicy::Optimal => {
                    let best = optimize_intensity(&lossy, rounds, p_x, sec, variant, false)?;
                    (best.mu, best.rate)
                }
            };
            Ok(CurvePoint { x: loss, mu, p_x, rate })
        })
        .collect()
}

/// Jointly optimized `R*` against dimension, with `q = log2 d` when `ideal_q`
/// is set and `sec` used unchanged otherwise.
pub fn rate_vs_dimension<T: Real>(
    model: &ChannelModel<T>,
    rounds: T,
    sec: &SecurityParams<T>,
    asymptotic: bool,
    ideal_q: bool,
    dimensions: &[usize],
) -> Result<Vec<CurvePoint<T>>> {
    dimensions
        .iter()
        .map(|&d| {
            if d < 2 {
                return Err(Error::param("dimension", "need d >= 2"));
            }
            let m = ChannelModel { dimension: d, ..*model };
            let s = if ideal_q { SecurityParams { q: T::lit((d as f64).log2()), ..*sec } } else { *sec };
            let best = optimize_params(&m, rounds, &s, Treatment::BlindingAware, asymptotic)?;
            let x = T::from_usize(d).expect("dimension fits scalar");
            Ok(CurvePoint { x, mu: best.mu, p_x: best.p_x, rate: best.rate })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ideal(d: usize) -> (ChannelModel<f64>, SecurityParams<f64>) {
        (ChannelModel::new(1.0, 1.0, 1e-5, d), SecurityParams::ideal(d))
    }

    #[test]
    fn optimum_dominates_random_points() {
        let (m, sec) = ideal(2);
        let best = optimize_params(&m, 1e8, &sec, Treatment::BlindingAware, false).unwrap();
        assert!(best.rate > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mu = 10f64.powf(rng.random_range(-2.0..2.0));
            let p_x = 10f64.powf(rng.random_range(-6.0..0.5f64.log10()));
            let r = expected_rate(&m.with_mu(mu), 1e8, p_x, &sec, Treatment::BlindingAware, false).unwrap();
            assert!(best.rate >= r.rate, "R({mu}, {p_x}) = {} > {}", r.rate, best.rate);
        }
    }

    #[test]
    fn deterministic() {
        let (m, sec) = ideal(3);
        let a = optimize_params(&m, 1e7, &sec, Treatment::BlindingAware, false).unwrap();
        let b = optimize_params(&m, 1e7, &sec, Treatment::BlindingAware, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_dark_counts_give_nothing() {
        let m = ChannelModel::new(1.0, 1.0, 0.5, 2);
        let best = optimize_params(&m, 1e9, &SecurityParams::ideal(2), Treatment::BlindingAware, true).unwrap();
        assert_eq!(best.rate, 0.0);
    }

    #[test]
    fn fixed_intensity_loses_to_optimal_under_loss() {
        let m = ChannelModel::<f64>::experiment();
        let sec = SecurityParams::calibrated();
        let losses = [0.0, 3.0, 10.0];
        let fixed =
            rate_vs_loss(&m, 1e9, 5e-4, &sec, Treatment::BlindingAware, IntensityPolicy::Fixed, &losses).unwrap();
        let opt =
            rate_vs_loss(&m, 1e9, 5e-4, &sec, Treatment::BlindingAware, IntensityPolicy::Optimal, &losses).unwrap();
        for (f, o) in fixed.iter().zip(&opt) {
            assert!(o.rate >= f.rate);
        }
        assert_eq!(fixed[2].rate, 0.0);
        assert!(opt[2].rate > 0.05);
    }
}
