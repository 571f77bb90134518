//! Shipped count records parse, survive a serialization round trip, and
//! reproduce their stated rates with the stated phase-error bound.

use std::path::PathBuf;

use siqrng::records::{ingest_counts, to_json};
use siqrng::security::{analyze_counts, AnalysisOptions, GammaBound};

fn fixtures() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
}

#[test]
fn all_fixtures_round_trip() {
    let paths = fixtures();
    assert_eq!(paths.len(), 18);
    for path in paths {
        let original: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let record = ingest_counts(&path).unwrap();
        let back: serde_json::Value = serde_json::from_str(&to_json(&record).unwrap()).unwrap();
        assert_eq!(original, back, "{}", path.display());
    }
}

#[test]
fn single_clicks_of_reference_row() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let record = ingest_counts(dir.join("aware_intensity_mu_9.6.json")).unwrap();
    assert_eq!(record.z_single(), 272_373_082);
    assert_eq!(record.dimension(), 2);
}

#[test]
fn exact_mode_reproduces_stated_rates() {
    for path in fixtures() {
        let record = ingest_counts(&path).unwrap();
        let options = AnalysisOptions { phi_override: record.phi_z_override, asymptotic: false };
        let report = analyze_counts(
            &record.to_analysis_counts(),
            &record.security(GammaBound::default()),
            record.variant,
            &options,
        )
        .unwrap();
        let expected = record.expected_rate.unwrap();
        assert!((report.rate - expected).abs() <= 1e-3, "{}: {} vs {expected}", path.display(), report.rate);
    }
}
