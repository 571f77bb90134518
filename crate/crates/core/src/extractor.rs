//! Toeplitz-hash randomness extraction over GF(2).
//!
//! The `ℓ × m` matrix is defined by an `m + ℓ - 1` bit seed through
//! `T[i][j] = seed[j - i + ℓ - 1]`: seed bit 0 is the bottom-left entry, bits
//! `0..ℓ` run up the first column, and bits `ℓ-1..m+ℓ-1` run along the first
//! row. Output bit `i` is the parity of row `i` ANDed with the raw input.
//!
//! Small products use a word-packed parity loop. Large products are computed
//! as integer convolutions with FFTs over blocks of the input and output, then
//! reduced mod 2; the result is bit-identical to the dense product.

use std::sync::Arc;

use rand::RngCore;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::security::AnalysisReport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToeplitzSpec {
    input_len: usize,
    output_len: usize,
    seed: BitString,
}

impl ToeplitzSpec {
    pub fn new(input_len: usize, output_len: usize, seed: BitString) -> Result<Self> {
        if output_len > input_len {
            return Err(Error::param("output_len", format!("{output_len} exceeds input length {input_len}")));
        }
        let expected = Self::seed_len(input_len, output_len);
        if seed.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: seed.len() });
        }
        Ok(Self { input_len, output_len, seed })
    }

    /// `m + ℓ - 1`, or 0 when `ℓ = 0`.
    pub fn seed_len(input_len: usize, output_len: usize) -> usize {
        if output_len == 0 {
            0
        } else {
            input_len + output_len - 1
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn seed(&self) -> &BitString {
        &self.seed
    }

    /// Matrix entry `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> bool {
        self.seed.get(j + self.output_len - 1 - i)
    }
}

/// Uniform seed of `len` bits.
pub fn random_seed<R: RngCore + ?Sized>(len: usize, rng: &mut R) -> BitString {
    let mut words = vec![0u64; len.div_ceil(64)];
    for w in &mut words {
        *w = rng.next_u64();
    }
    let rem = len % 64;
    if rem != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << rem) - 1;
        }
    }
    BitString::from_words(words, len).expect("word count matches length")
}

/// Binds the certified length of `report` to a Toeplitz matrix over
/// `raw_len` input bits, drawing the seed from `rng`.
pub fn plan_extraction<T: Real, R: RngCore + ?Sized>(
    report: &AnalysisReport<T>,
    raw_len: usize,
    rng: &mut R,
) -> Result<ToeplitzSpec> {
    let out = usize::try_from(report.length).unwrap_or(usize::MAX);
    if out > raw_len {
        return Err(Error::InconsistentAnalysis(format!(
            "certified length {} exceeds raw length {raw_len}",
            report.length
        )));
    }
    ToeplitzSpec::new(raw_len, out, random_seed(ToeplitzSpec::seed_len(raw_len, out), rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Word-packed parity for small products, FFT blocks otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Products with at most this many word operations use the direct path.
const DIRECT_WORD_OPS: u128 = 1 << 28;
const FFT_BLOCK: usize = 1 << 22;

pub fn extract(raw: &BitString, spec: &ToeplitzSpec) -> Result<BitString> {
    extract_with(raw, spec, Method::Auto)
}

pub fn extract_with(raw: &BitString, spec: &ToeplitzSpec, method: Method) -> Result<BitString> {
    if raw.len() != spec.input_len {
        return Err(Error::LengthMismatch { expected: spec.input_len, actual: raw.len() });
    }
    if spec.output_len == 0 {
        return Ok(BitString::new());
    }
    let direct = match method {
        Method::Direct => true,
        Method::Fft => false,
        Method::Auto => (spec.output_len as u128) * (spec.input_len.div_ceil(64) as u128) <= DIRECT_WORD_OPS,
    };
    Ok(if direct { extract_direct(raw, spec) } else { extract_fft(raw, spec, FFT_BLOCK, FFT_BLOCK) })
}

fn extract_direct(raw: &BitString, spec: &ToeplitzSpec) -> BitString {
    let l = spec.output_len;
    let words = raw.words();
    let mut out = BitString::zeros(l);
    for i in 0..l {
        // row i reads seed bits [l-1-i, l-1-i+m)
        let start = l - 1 - i;
        let parity = words.iter().enumerate().fold(0u64, |acc, (w, &r)| acc ^ (r & spec.seed.word_at(start + 64 * w)));
        if parity.count_ones() % 2 == 1 {
            out.set(i, true);
        }
    }
    out
}

/// Block convolution. Output chunk `[i0, i0+C)` against input block
/// `[j0, j0+B)` needs seed bits from `base = j0 - i0 - (C-1) + ℓ - 1` over
/// `B + C - 1` positions; with `s'[t] = seed[base + t]` and the reversed
/// block `r'[k] = raw[j0 + B - 1 - k]`, output `i0 + v` receives
/// `(s' * r')[B + C - 2 - v]`, which a cyclic convolution of size at least
/// `B + C - 1` reproduces without wrap-around.
pub(crate) fn extract_fft(raw: &BitString, spec: &ToeplitzSpec, block: usize, chunk: usize) -> BitString {
    let m = spec.input_len;
    let l = spec.output_len;
    let block = block.min(m).max(1);
    let chunk = chunk.min(l).max(1);
    let size = (block + chunk - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let plans = Plans { forward, inverse, size };

    let mut out = BitString::zeros(l);
    let mut i0 = 0;
    while i0 < l {
        let len = chunk.min(l - i0);
        let values = chunk_product(raw, spec, &plans, i0, block, chunk);
        for v in 0..len {
            let x = values[block + chunk - 2 - v];
            let rounded = x.round();
            debug_assert!((x - rounded).abs() < 0.25, "FFT rounding error {x}");
            if (rounded as u64) & 1 == 1 {
                out.set(i0 + v, true);
            }
        }
        i0 += chunk;
    }
    out
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    size: usize,
}

/// Real parts of the accumulated cyclic convolutions for one output chunk.
fn chunk_product(
    raw: &BitString,
    spec: &ToeplitzSpec,
    plans: &Plans,
    i0: usize,
    block: usize,
    chunk: usize,
) -> Vec<f64> {
    let m = spec.input_len;
    let l = spec.output_len;
    let n = plans.size;
    let seed_len = spec.seed.len() as i64;
    let mut acc = vec![Complex::new(0.0, 0.0); n];
    let mut work = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); plans.forward.get_inplace_scratch_len()];

    let mut j0 = 0;
    while j0 < m {
        let base = j0 as i64 - i0 as i64 - (chunk as i64 - 1) + l as i64 - 1;
        work.fill(Complex::new(0.0, 0.0));
        // seed window in the real part, reversed input block in the imaginary part
        for (t, z) in work.iter_mut().take(block + chunk - 1).enumerate() {
            let k = base + t as i64;
            if (0..seed_len).contains(&k) && spec.seed.get(k as usize) {
                z.re = 1.0;
            }
        }
        for (k, z) in work.iter_mut().take(block).enumerate() {
            let j = j0 + block - 1 - k;
            if j < m && raw.get(j) {
                z.im = 1.0;
            }
        }
        plans.forward.process_with_scratch(&mut work, &mut scratch);
        // split the two real transforms and multiply: S·R with
        // S = (Z[k] + conj Z[-k]) / 2, R = (Z[k] - conj Z[-k]) / 2i
        for k in 0..n {
            let a = work[k];
            let b = work[(n - k) % n].conj();
            let s = (a + b) * 0.5;
            let r = (a - b) * Complex::new(0.0, -0.5);
            acc[k] += s * r;
        }
        j0 += block;
    }
    plans.inverse.process_with_scratch(&mut acc, &mut scratch);
    let scale = 1.0 / n as f64;
    acc.iter().map(|z| z.re * scale).collect()
}
