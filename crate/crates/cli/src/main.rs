#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use siqrng::adversary::{AttackConfig, Strategy};
use siqrng::extractor::{extract, plan_extraction, ToeplitzSpec};
use siqrng::optimize::{optimize_params, rate_vs_dimension, rate_vs_loss, IntensityPolicy};
use siqrng::rate::{rate_vs_intensity, ChannelModel, CurvePoint, DEFAULT_MISALIGNMENT};
use siqrng::records::{ingest_counts, parse_session_config, SessionConfig};
use siqrng::security::{analyze_counts, key_length, AnalysisOptions, AnalysisReport, GammaBound, SecurityParams};
use siqrng::session::{raw_bits, run_session_traced};
use siqrng::stats::{run_battery, BatteryConfig};
use siqrng::{BitString, Error, Treatment};

#[derive(Parser)]
#[command(name = "siqrng", version, about = "Simulate, analyse and extract source-independent QRNG output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated session and analyse its tallies.
    Simulate(SimulateArgs),
    /// Analyse a measured counts record.
    Analyze(AnalyzeArgs),
    /// Sweep the closed-form rate over intensity, loss or dimension (CSV).
    RateCurve(CurveArgs),
    /// Maximise the closed-form rate over intensity and basis ratio.
    Optimize(OptimizeArgs),
    /// Run both protocol variants under a blinding attack.
    AttackDemo(AttackArgs),
    /// Hash raw bits down to the certified length.
    Extract(ExtractArgs),
    /// Run the statistical test battery on a bit file.
    TestBattery(BatteryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Aware,
    Legacy,
}

impl From<Variant> for Treatment {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Aware => Treatment::BlindingAware,
            Variant::Legacy => Treatment::LegacySquash,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Bound {
    Chernoff,
    Serfling,
}

impl From<Bound> for GammaBound {
    fn from(b: Bound) -> Self {
        match b {
            Bound::Chernoff => GammaBound::Chernoff,
            Bound::Serfling => GammaBound::Serfling,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Session configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "aware")]
    variant: Variant,
    /// Write the raw Z-basis bits (little-endian packed) here.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    /// Write the analysis report here as well as to stdout.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Counts record (JSON).
    record: PathBuf,
    /// Use the record's phase-error value instead of computing it.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    asymptotic: bool,
    #[arg(long, value_enum)]
    gamma_bound: Option<Bound>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two detectors calibrated to the reference experiment.
    Experiment,
    /// Unit transmittance, `p_d = 1e-5`, `q = log2 d`.
    Ideal,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "experiment")]
    preset: Preset,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    dark_count: Option<f64>,
    #[arg(long)]
    misalignment: Option<f64>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    eta_e: Option<f64>,
    #[arg(long)]
    eps_sec: Option<f64>,
    #[arg(long, value_enum)]
    gamma_bound: Option<Bound>,
    #[arg(long, default_value_t = 1e9)]
    rounds: f64,
    #[arg(long, value_enum, default_value = "aware")]
    variant: Variant,
    #[arg(long)]
    asymptotic: bool,
}

impl ModelArgs {
    fn build(&self) -> (ChannelModel<f64>, SecurityParams<f64>) {
        let (mut model, mut sec) = match self.preset {
            Preset::Experiment => (ChannelModel::experiment(), SecurityParams::calibrated()),
            Preset::Ideal => {
                let d = self.dimension.unwrap_or(2);
                (ChannelModel::new(1.0, 1.0, 1e-5, d), SecurityParams::ideal(d))
            }
        };
        model.mu = self.mu.unwrap_or(model.mu);
        model.eta = self.eta.unwrap_or(model.eta);
        model.dark_count = self.dark_count.unwrap_or(model.dark_count);
        model.misalignment = self.misalignment.unwrap_or(DEFAULT_MISALIGNMENT);
        model.dimension = self.dimension.unwrap_or(model.dimension);
        sec.q = self.q.unwrap_or(sec.q);
        sec.eta_e = self.eta_e.unwrap_or(sec.eta_e);
        sec.eps_sec = self.eps_sec.unwrap_or(sec.eps_sec);
        if let Some(b) = self.gamma_bound {
            sec.gamma_bound = b.into();
        }
        (model, sec)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Mu,
    Loss,
    Dimension,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "mu")]
    sweep: Sweep,
    #[arg(long, default_value_t = 4.0)]
    from: f64,
    #[arg(long, default_value_t = 20.0)]
    to: f64,
    #[arg(long, default_value_t = 161)]
    steps: usize,
    #[arg(long, default_value_t = 5e-4)]
    p_x: f64,
    /// Loss sweep: re-optimise the intensity at each point.
    #[arg(long)]
    optimal_mu: bool,
    /// Dimension sweep: use `q = log2 d` for each dimension.
    #[arg(long)]
    ideal_q: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Balanced,
    Unbalanced,
    DDimensional,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    seed: u64,
    /// Session configuration; its attack block, if any, is used as given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "unbalanced")]
    strategy: AttackKind,
    #[arg(long, default_value_t = 1_000_000)]
    rounds: u64,
    #[arg(long, default_value_t = 2)]
    dimension: usize,
    #[arg(long, default_value_t = 0.02)]
    p_x: f64,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
}

#[derive(Args)]
struct ExtractArgs {
    /// Raw bits, little-endian packed.
    #[arg(long)]
    raw: PathBuf,
    /// Number of valid bits in the raw file (default: all bits).
    #[arg(long)]
    raw_len: Option<usize>,
    /// Analysis report (JSON), or any object with a `report` field.
    #[arg(long)]
    report: PathBuf,
    /// Toeplitz seed file of `m + l - 1` bits, little-endian packed.
    #[arg(long, conflicts_with = "seed")]
    toeplitz_seed: Option<PathBuf>,
    /// Draw the Toeplitz seed from a pseudorandom stream with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Save the drawn Toeplitz seed.
    #[arg(long)]
    seed_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BatteryArgs {
    /// Bits, little-endian packed.
    bits: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 1_000_000)]
    length: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Print the full report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = categorize(&err);
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn categorize(err: &anyhow::Error) -> (&'static str, u8) {
    if let Some(e) = err.downcast_ref::<Error>() {
        let code = match e {
            Error::InvalidParameter { .. } | Error::NotAPermutation { .. } => 3,
            Error::Record { .. } | Error::Parse(_) => 4,
            Error::AttackInfeasible(_) => 5,
            Error::InsufficientTestData(_) | Error::NoExtractableRounds => 6,
            Error::LengthMismatch { .. } | Error::SequenceTooShort { .. } => 7,
            Error::UnsupportedSerialization(_) | Error::UnsupportedDimension(_) => 8,
            Error::InconsistentAnalysis(_) => 9,
        };
        (e.category(), code)
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        ("io", 10)
    } else {
        ("invalid-input", 3)
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::RateCurve(a) => rate_curve(a),
        Command::Optimize(a) => optimize(a),
        Command::AttackDemo(a) => attack_demo(a),
        Command::Extract(a) => extract_cmd(a),
        Command::TestBattery(a) => battery(a),
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: &Path) -> anyhow::Result<SessionConfig> {
    let text = String::from_utf8(read(path)?).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(parse_session_config(&text)?)
}

fn emit(value: &Value, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        write(path, text.as_bytes())?;
    }
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config)?;
    let treatment = a.variant.into();
    let (mut tally, trace) = run_session_traced(&cfg.protocol(treatment, a.seed), &cfg.source(), &cfg.bank()?)?;
    tally.check_invariants()?;
    let report = key_length(&tally, &cfg.security(), treatment, None);
    if let Some(path) = &a.raw_out {
        write(path, &raw_bits(&tally, cfg.dimension)?.to_bytes_le())?;
    }
    let raw_len = raw_bits(&tally, cfg.dimension).map(|b| b.len()).ok();
    let (attacked, matched) = trace.agreement(&tally.raw_symbols);
    tally.raw_symbols.clear();
    let report = match report {
        Ok(r) => serde_json::to_value(r)?,
        Err(e) => json!({ "error": e.to_string(), "category": e.category() }),
    };
    let value = json!({
        "seed": a.seed,
        "tally": tally,
        "raw_bits": raw_len,
        "attacked_raw_symbols": attacked,
        "eve_matches": matched,
        "report": report,
    });
    if let Some(path) = &a.report_out {
        write(path, serde_json::to_string_pretty(&value)?.as_bytes())?;
    }
    emit(&value, None)
}

fn analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let record = ingest_counts(&a.record)?;
    let sec = record.security(a.gamma_bound.map(Into::into).unwrap_or_default());
    let phi_override =
        if a.exact {
            Some(record.phi_z_override.ok_or_else(|| Error::Record {
                field: "phi_z_override".into(),
                reason: "required for --exact".into(),
            })?)
        } else {
            None
        };
    let options = AnalysisOptions { phi_override, asymptotic: a.asymptotic };
    let report = analyze_counts(&record.to_analysis_counts(), &sec, record.variant, &options)?;
    let mut value = serde_json::to_value(&report)?;
    if let Some(label) = &record.label {
        value["label"] = json!(label);
    }
    if let Some(r) = record.expected_rate {
        value["expected_rate"] = json!(r);
    }
    emit(&value, a.out.as_deref())
}

fn grid(from: f64, to: f64, steps: usize) -> anyhow::Result<Vec<f64>> {
    if steps < 2 || !(to > from) {
        bail!(Error::InvalidParameter { name: "steps", reason: "need steps >= 2 and to > from".into() });
    }
    Ok((0..steps).map(|i| from + (to - from) * i as f64 / (steps - 1) as f64).collect())
}

fn rate_curve(a: CurveArgs) -> anyhow::Result<()> {
    let (model, sec) = a.model.build();
    let m = &a.model;
    let (label, points): (&str, Vec<CurvePoint<f64>>) = match a.sweep {
        Sweep::Mu => {
            let mus = grid(a.from, a.to, a.steps)?;
            ("mu", rate_vs_intensity(&model, m.rounds, a.p_x, &sec, m.variant.into(), m.asymptotic, &mus)?)
        }
        Sweep::Loss => {
            let losses = grid(a.from, a.to, a.steps)?;
            let policy = if a.optimal_mu { IntensityPolicy::Optimal } else { IntensityPolicy::Fixed };
            ("loss_db", rate_vs_loss(&model, m.rounds, a.p_x, &sec, m.variant.into(), policy, &losses)?)
        }
        Sweep::Dimension => {
            let (lo, hi) = (a.from.round() as usize, a.to.round() as usize);
            if lo < 2 || hi < lo {
                bail!(Error::InvalidParameter {
                    name: "from",
                    reason: "dimensions must satisfy 2 <= from <= to".into()
                });
            }
            let dims: Vec<usize> = (lo..=hi).collect();
            ("dimension", rate_vs_dimension(&model, m.rounds, &sec, m.asymptotic, a.ideal_q, &dims)?)
        }
    };
    let sink: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    // a mu sweep has no separate swept column
    let swept = label != "mu";
    let header = [label, "mu", "p_x", "rate"];
    w.write_record(&header[usize::from(!swept)..])?;
    for p in points {
        let row = [p.x.to_string(), p.mu.to_string(), p.p_x.to_string(), p.rate.to_string()];
        w.write_record(&row[usize::from(!swept)..])?;
    }
    w.flush()?;
    Ok(())
}

fn optimize(a: OptimizeArgs) -> anyhow::Result<()> {
    let (model, sec) = a.model.build();
    let best = optimize_params(&model, a.model.rounds, &sec, a.model.variant.into(), a.model.asymptotic)?;
    emit(&json!({ "mu": best.mu, "p_x": best.p_x, "rate": best.rate, "dimension": model.dimension }), None)
}

fn default_attack(kind: AttackKind, d: usize) -> anyhow::Result<AttackConfig<f64>> {
    Ok(match kind {
        AttackKind::Balanced => AttackConfig::balanced(d, 1.0),
        AttackKind::Unbalanced => {
            if d != 2 {
                bail!(Error::InvalidParameter {
                    name: "strategy",
                    reason: "the unbalanced attack is defined for d = 2; use d-dimensional".into()
                });
            }
            AttackConfig::unbalanced(1.0, 1.8)
        }
        AttackKind::DDimensional => AttackConfig::d_dimensional(d, 1.0, 1.5, 0)?,
    })
}

fn attack_demo(a: AttackArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => {
            let mut c = SessionConfig::honest(a.rounds, a.dimension, a.p_x, 0.0);
            c.misalignment = 0.0;
            c
        }
    };
    if cfg.attack.is_none() {
        let mut attack = default_attack(a.strategy, cfg.dimension)?;
        attack.attack_fraction = a.fraction;
        cfg.attack = Some(attack);
    }
    let attack = cfg.attack.clone().expect("attack set above");
    let strategy = match attack.strategy {
        Strategy::Balanced => "balanced",
        Strategy::Unbalanced => "unbalanced",
        Strategy::DDimensional => "d_dimensional",
    };
    let mut rows = serde_json::Map::new();
    for variant in [Treatment::BlindingAware, Treatment::LegacySquash] {
        let (mut tally, trace) = run_session_traced(&cfg.protocol(variant, a.seed), &cfg.source(), &cfg.bank()?)?;
        let (attacked, matched) = trace.agreement(&tally.raw_symbols);
        let report: Option<AnalysisReport<f64>> = match key_length(&tally, &cfg.security(), variant, None) {
            Ok(r) => Some(r),
            Err(Error::NoExtractableRounds) => None,
            Err(e) => return Err(e.into()),
        };
        tally.raw_symbols.clear();
        rows.insert(
            variant.as_str().to_string(),
            json!({
                "x_error_rate": tally.x_error_rate(),
                "length": report.as_ref().map_or(0, |r| r.length),
                "rate": report.as_ref().map_or(0.0, |r| r.rate),
                "eve_agreement": if attacked > 0 { Some(matched as f64 / attacked as f64) } else { None },
                "tally": tally,
                "report": report,
            }),
        );
    }
    let gap = rows["legacy_squash"]["length"].as_u64().unwrap_or(0) as i128
        - rows["blinding_aware"]["length"].as_u64().unwrap_or(0) as i128;
    emit(
        &json!({
            "seed": a.seed,
            "strategy": strategy,
            "attack_fraction": attack.attack_fraction,
            "rounds": cfg.rounds,
            "variants": rows,
            "security_gap_bits": gap,
        }),
        None,
    )
}

fn extract_cmd(a: ExtractArgs) -> anyhow::Result<()> {
    let raw = BitString::from_bytes_le(&read(&a.raw)?, a.raw_len)?;
    let value: Value = serde_json::from_slice(&read(&a.report)?).map_err(|e| Error::Parse(e.to_string()))?;
    let report_value = value.get("report").cloned().unwrap_or(value);
    let report: AnalysisReport<f64> =
        serde_json::from_value(report_value).map_err(|e| Error::Parse(format!("report: {e}")))?;
    let spec = match (&a.toeplitz_seed, a.seed) {
        (Some(path), _) => {
            let len = ToeplitzSpec::seed_len(raw.len(), report.length as usize);
            let seed = BitString::from_bytes_le(&read(path)?, Some(len))?;
            if report.length as usize > raw.len() {
                bail!(Error::InconsistentAnalysis(format!(
                    "certified length {} exceeds raw length {}",
                    report.length,
                    raw.len()
                )));
            }
            ToeplitzSpec::new(raw.len(), report.length as usize, seed)?
        }
        (None, Some(s)) => plan_extraction(&report, raw.len(), &mut ChaCha8Rng::seed_from_u64(s))?,
        (None, None) => {
            return Err(anyhow!(Error::InvalidParameter {
                name: "seed",
                reason: "pass --toeplitz-seed or --seed".into()
            }))
        }
    };
    if let Some(path) = &a.seed_out {
        write(path, &spec.seed().to_bytes_le())?;
    }
    let out = extract(&raw, &spec)?;
    write(&a.out, &out.to_bytes_le())?;
    emit(&json!({ "input_bits": raw.len(), "output_bits": out.len(), "seed_bits": spec.seed().len() }), None)
}

fn battery(a: BatteryArgs) -> anyhow::Result<()> {
    let bits = BitString::from_bytes_le(&read(&a.bits)?, None)?;
    let config = BatteryConfig { sequence_count: a.count, sequence_length: a.length, alpha: a.alpha };
    let results = run_battery(&bits, &config)?;
    if a.json {
        let rows: Vec<Value> = results
            .iter()
            .map(|r| {
                json!({
                    "name": r.name,
                    "implemented": r.implemented,
                    "uniformity_p": r.implemented.then_some(r.uniformity_p),
                    "proportion": r.implemented.then_some(r.proportion),
                    "passed": r.implemented.then_some(r.passed),
                })
            })
            .collect();
        let threshold = config.proportion_threshold();
        return emit(&json!({ "config": config, "proportion_threshold": threshold, "tests": rows }), None);
    }
    println!("minimum pass proportion {:.4}, uniformity threshold 1e-4", config.proportion_threshold());
    println!("{:<28} {:>12} {:>11}  result", "test", "P-value_T", "proportion");
    for r in &results {
        if r.implemented {
            let verdict = if r.passed { "pass" } else { "FAIL" };
            println!("{:<28} {:>12.6} {:>11.4}  {verdict}", r.name, r.uniformity_p, r.proportion);
        } else {
            println!("{:<28} {:>12} {:>11}  not implemented", r.name, "-", "-");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn library_errors_keep_their_category() {
        let err = anyhow::Error::from(Error::NoExtractableRounds);
        assert_eq!(categorize(&err), ("no-extractable-rounds", 6));
        let io = anyhow::Error::from(std::io::Error::other("x"));
        assert_eq!(categorize(&io).0, "io");
    }
}
