//! Independent reference implementations of the statistical tests, with
//! their own special functions, compared against the library to 1e-10.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siqrng::stats;
use siqrng::BitString;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
fn q_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let prefix = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..1_000_000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * prefix
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1_000_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        prefix * h
    }
}

fn erfc_ref(x: f64) -> f64 {
    if x >= 0.0 {
        q_gamma(0.5, x * x)
    } else {
        2.0 - q_gamma(0.5, x * x)
    }
}

fn phi_ref(x: f64) -> f64 {
    0.5 * erfc_ref(-x / 2f64.sqrt())
}

fn frequency_ref(e: &[bool]) -> f64 {
    let s: i64 = e.iter().map(|&b| if b { 1 } else { -1 }).sum();
    erfc_ref(s.unsigned_abs() as f64 / (e.len() as f64).sqrt() / 2f64.sqrt())
}

fn block_frequency_ref(e: &[bool], m: usize) -> f64 {
    let n_blocks = e.len() / m;
    let mut chi = 0.0;
    for i in 0..n_blocks {
        let ones = e[i * m..(i + 1) * m].iter().filter(|&&b| b).count();
        let pi = ones as f64 / m as f64;
        chi += (pi - 0.5) * (pi - 0.5);
    }
    chi *= 4.0 * m as f64;
    q_gamma(n_blocks as f64 / 2.0, chi / 2.0)
}

fn runs_ref(e: &[bool]) -> f64 {
    let n = e.len() as f64;
    let pi = e.iter().filter(|&&b| b).count() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return 0.0;
    }
    let mut v = 1.0;
    for k in 0..e.len() - 1 {
        if e[k] != e[k + 1] {
            v += 1.0;
        }
    }
    let num = (v - 2.0 * n * pi * (1.0 - pi)).abs();
    erfc_ref(num / (2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi)))
}

fn longest_run_ref(e: &[bool]) -> f64 {
    let n = e.len();
    let (m, lo, hi, pis): (usize, usize, usize, Vec<f64>) = if n < 6272 {
        (8, 1, 4, vec![0.21484375, 0.3671875, 0.23046875, 0.1875])
    } else if n < 750_000 {
        (128, 4, 9, vec![0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847])
    } else {
        (10_000, 10, 16, vec![0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    };
    let blocks = n / m;
    let mut nu = vec![0.0; pis.len()];
    for b in 0..blocks {
        let mut longest = 0;
        let mut run = 0;
        for &bit in &e[b * m..(b + 1) * m] {
            if bit {
                run += 1;
                if run > longest {
                    longest = run;
                }
            } else {
                run = 0;
            }
        }
        let class = if longest <= lo {
            0
        } else if longest >= hi {
            pis.len() - 1
        } else {
            longest - lo
        };
        nu[class] += 1.0;
    }
    let nb = blocks as f64;
    let chi: f64 = (0..pis.len()).map(|i| (nu[i] - nb * pis[i]).powi(2) / (nb * pis[i])).sum();
    q_gamma((pis.len() - 1) as f64 / 2.0, chi / 2.0)
}

fn cusum_ref(e: &[bool], backward: bool) -> f64 {
    let n = e.len();
    let x: Vec<i64> = e.iter().map(|&b| if b { 1 } else { -1 }).collect();
    let mut z = 0i64;
    let mut s = 0i64;
    for i in 0..n {
        let idx = if backward { n - 1 - i } else { i };
        s += x[idx];
        z = z.max(s.abs());
    }
    let nf = n as f64;
    let zf = z as f64;
    let mut p = 1.0;
    let k_lo = ((-nf / zf + 1.0) / 4.0).floor() as i64;
    let k_hi = ((nf / zf - 1.0) / 4.0).floor() as i64;
    for k in k_lo..=k_hi {
        let k = k as f64;
        p -= phi_ref((4.0 * k + 1.0) * zf / nf.sqrt()) - phi_ref((4.0 * k - 1.0) * zf / nf.sqrt());
    }
    let k_lo = ((-nf / zf - 3.0) / 4.0).floor() as i64;
    for k in k_lo..=k_hi {
        let k = k as f64;
        p += phi_ref((4.0 * k + 3.0) * zf / nf.sqrt()) - phi_ref((4.0 * k + 1.0) * zf / nf.sqrt());
    }
    p
}

/// Overlapping `m`-bit pattern counts over the sequence extended by its
/// first `m - 1` bits.
fn counts_ref(e: &[bool], m: usize) -> Vec<f64> {
    let n = e.len();
    let ext: Vec<bool> = e.iter().chain(e.iter().take(m.saturating_sub(1))).copied().collect();
    let mut counts = vec![0.0; 1 << m];
    for i in 0..n {
        let mut v = 0;
        for j in 0..m {
            v = v * 2 + usize::from(ext[i + j]);
        }
        counts[v] += 1.0;
    }
    counts
}

fn apen_ref(e: &[bool], m: usize) -> f64 {
    let n = e.len() as f64;
    let phi =
        |mm: usize| -> f64 { counts_ref(e, mm).iter().filter(|&&c| c > 0.0).map(|&c| (c / n) * (c / n).ln()).sum() };
    let apen = phi(m) - phi(m + 1);
    q_gamma(2f64.powi(m as i32 - 1), n * (2f64.ln() - apen))
}

fn serial_ref(e: &[bool], m: usize) -> (f64, f64) {
    let n = e.len() as f64;
    let psi = |mm: usize| -> f64 {
        if mm == 0 {
            return 0.0;
        }
        counts_ref(e, mm).iter().map(|c| c * c).sum::<f64>() * 2f64.powi(mm as i32) / n - n
    };
    let (a, b, c) = (psi(m), psi(m - 1), psi(m - 2));
    (q_gamma(2f64.powi(m as i32 - 2), (a - b) / 2.0), q_gamma(2f64.powi(m as i32 - 3), (a - 2.0 * b + c) / 2.0))
}

fn close(name: &str, lib: f64, oracle: f64) {
    assert!((lib - oracle).abs() <= 1e-10, "{name}: library {lib} vs reference {oracle}");
}

#[test]
fn reference_special_functions() {
    // erfc(1) and Q(1, 2) = e^-2
    assert!((erfc_ref(1.0) - 0.157_299_207_050_285_13).abs() < 1e-15);
    assert!((q_gamma(1.0, 2.0) - (-2f64).exp()).abs() < 1e-15);
}

#[test]
fn library_matches_reference_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let lengths = [100, 128, 1000, 5000, 6272, 20_000, 100_000, 800_000];
    for i in 0..50 {
        let n = lengths[i % lengths.len()];
        // mild bias keeps some sequences near the runs prerequisite boundary
        let p = 0.5 + rng.random_range(-0.02..0.02);
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let bits = BitString::from_bools(e.iter().copied());
        close("frequency", stats::frequency_monobit(&bits).unwrap(), frequency_ref(&e));
        close(
            "block_frequency",
            stats::block_frequency(&bits, 128.min(n)).unwrap(),
            block_frequency_ref(&e, 128.min(n)),
        );
        close("runs", stats::runs_test(&bits).unwrap(), runs_ref(&e));
        if n >= 128 {
            close("longest_run", stats::longest_run(&bits).unwrap(), longest_run_ref(&e));
        }
        let [f, b] = stats::cumulative_sums(&bits).unwrap();
        close("cusum forward", f, cusum_ref(&e, false));
        close("cusum backward", b, cusum_ref(&e, true));
        close("approximate_entropy", stats::approximate_entropy(&bits, 2).unwrap(), apen_ref(&e, 2));
        let [s1, s2] = stats::serial(&bits, 3).unwrap();
        let (r1, r2) = serial_ref(&e, 3);
        close("serial 1", s1, r1);
        close("serial 2", s2, r2);
    }
}

#[test]
fn battery_is_deterministic_and_uniform_on_a_prng() {
    let config = stats::BatteryConfig { sequence_count: 60, sequence_length: 20_000, alpha: 0.01 };
    let mut passes = 0;
    let runs = 20;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits =
            BitString::from_bools((0..config.sequence_count * config.sequence_length).map(|_| rng.random::<bool>()));
        let a = stats::run_battery(&bits, &config).unwrap();
        if seed == 0 {
            // not-implemented rows carry NaN, so compare renderings
            assert_eq!(format!("{a:?}"), format!("{:?}", stats::run_battery(&bits, &config).unwrap()));
        }
        if a.iter().filter(|r| r.implemented).all(|r| r.uniformity_p >= stats::UNIFORMITY_THRESHOLD) {
            passes += 1;
        }
    }
    // nine rows per run, each failing uniformity with probability ~1e-4
    assert!(passes as f64 >= 0.95 * runs as f64, "{passes}/{runs}");
}
