//! Static context models over quantised coefficients.
//!
//! Symbols are coefficient values `-RADIUS..=RADIUS` plus one escape symbol.
//! An escaped value `s` costs the escape symbol, an Elias-gamma code for
//! `|s| - RADIUS - 1` and one sign bit, so every integer has a finite cost.
//!
//! The DC coefficient of a block is coded as the difference to the previous
//! block's DC in the same channel (raster order, starting from 0) under
//! context 0. AC coefficient `(v, u)` uses context `min(u + v, 7)`.

use sha2::{Digest, Sha256};

use super::CodecError;

pub const RADIUS: i64 = 127;
pub const ESCAPE: usize = (2 * RADIUS + 1) as usize;
pub const ALPHABET: usize = ESCAPE + 1;
pub const CONTEXTS: usize = 8;
/// Additive smoothing applied when counting symbols.
pub const SMOOTHING: u64 = 1;

/// Pseudo-count mass of the generic prior.
const PRIOR_MASS: f64 = (1u64 << 20) as f64;
const AC_WEIGHT: [f64; CONTEXTS - 1] = [0.6, 0.7, 0.8, 0.85, 0.9, 0.93, 0.96];
const AC_SHARP: f64 = 0.05;

#[inline]
pub fn context_of(v: usize, u: usize) -> usize {
    if u + v == 0 {
        0
    } else {
        (u + v).min(CONTEXTS - 1)
    }
}

#[inline]
pub fn symbol_of(value: i64) -> usize {
    if value.abs() <= RADIUS {
        (value + RADIUS) as usize
    } else {
        ESCAPE
    }
}

/// Bits spent after the escape symbol for `value`.
pub fn escape_extra_bits(value: i64) -> f64 {
    let n = value.unsigned_abs() - RADIUS as u64 - 1;
    (2 * (n + 1).ilog2() + 1 + 1) as f64
}

/// Per-context symbol frequency tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModel {
    frequencies: Vec<Vec<u64>>,
    trained_on: usize,
    cost: Vec<Vec<f64>>,
    id: u64,
}

impl EntropyModel {
    /// Untrained prior: per context a two-component discrete Laplacian
    /// mixture, sharp near zero with a heavy tail. DC differences get a wider
    /// tail than AC coefficients, and high-frequency contexts put more weight
    /// on the sharp component.
    pub fn generic() -> Self {
        let mut frequencies = Vec::with_capacity(CONTEXTS);
        for ctx in 0..CONTEXTS {
            let (w, sharp, tail) = if ctx == 0 {
                (0.5, 0.6, 0.97)
            } else {
                (AC_WEIGHT[ctx - 1], AC_SHARP, 0.85)
            };
            let mass = |s: i64| w * laplace(sharp, s) + (1.0 - w) * laplace(tail, s);
            let beyond = w * laplace_tail(sharp) + (1.0 - w) * laplace_tail(tail);
            let mut table: Vec<u64> = (-RADIUS..=RADIUS)
                .map(|s| SMOOTHING + (PRIOR_MASS * mass(s)).round() as u64)
                .collect();
            table.push(SMOOTHING + (PRIOR_MASS * beyond).round() as u64);
            frequencies.push(table);
        }
        Self::from_frequencies(frequencies, 0).expect("generic tables are well formed")
    }

    pub fn from_frequencies(frequencies: Vec<Vec<u64>>, trained_on: usize) -> Result<Self, CodecError> {
        if frequencies.len() != CONTEXTS || frequencies.iter().any(|t| t.len() != ALPHABET) {
            return Err(CodecError::Model(format!(
                "expected {CONTEXTS} tables of {ALPHABET} symbols"
            )));
        }
        if frequencies.iter().flatten().any(|&f| f < SMOOTHING) {
            return Err(CodecError::Model(format!("frequencies must be at least {SMOOTHING}")));
        }
        let cost = frequencies
            .iter()
            .map(|t| {
                let total = t.iter().sum::<u64>() as f64;
                t.iter().map(|&f| total.log2() - (f as f64).log2()).collect()
            })
            .collect();
        let mut hasher = Sha256::new();
        hasher.update(b"rdcf-entropy-model");
        for f in frequencies.iter().flatten() {
            hasher.update(f.to_le_bytes());
        }
        let digest = hasher.finalize();
        let id = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Ok(Self {
            frequencies,
            trained_on,
            cost,
            id,
        })
    }

    /// Content hash of the frequency tables.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Number of frames the tables were counted from (0 for the prior).
    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn frequencies(&self) -> &[Vec<u64>] {
        &self.frequencies
    }

    pub fn probability(&self, ctx: usize, symbol: usize) -> f64 {
        let t = &self.frequencies[ctx];
        t[symbol] as f64 / t.iter().sum::<u64>() as f64
    }

    /// `-log2 p` of the symbol, plus escape payload where applicable.
    #[inline]
    pub fn value_bits(&self, ctx: usize, value: i64) -> f64 {
        let sym = symbol_of(value);
        let base = self.cost[ctx][sym];
        if sym == ESCAPE {
            base + escape_extra_bits(value)
        } else {
            base
        }
    }
}

fn laplace(rho: f64, s: i64) -> f64 {
    (1.0 - rho) / (1.0 + rho) * rho.powi(s.unsigned_abs() as i32)
}

/// Mass of `|s| > RADIUS` under [`laplace`].
fn laplace_tail(rho: f64) -> f64 {
    2.0 * rho.powi(RADIUS as i32 + 1) / (1.0 + rho)
}
