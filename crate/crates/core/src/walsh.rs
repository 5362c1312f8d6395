//! Phase maps on the Boolean cube and their Walsh–Hadamard spectra.
//!
//! Configurations are indexed by an integer `x` whose most significant bit
//! is qubit 1: for `n = 3` the index `0b100` is the configuration
//! `(x1, x2, x3) = (1, 0, 0)`. Subset masks use the same bit placement, so
//! qubit `i` (1-based) lives at bit `n - i` in both.

use crate::error::{Error, Result};
use crate::table::{fmt_f64, write_table, Table};

pub const MAX_QUBITS: usize = 20;

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        Err(Error::QubitCount(n))
    } else {
        Ok(())
    }
}

/// A subset `S` of the qubits `{1, ..., n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask {
    n: usize,
    bits: u32,
}

impl SubsetMask {
    pub fn new(n: usize, bits: u32) -> Result<Self> {
        check_n(n)?;
        if (bits as u64) >= (1u64 << n) {
            return Err(Error::MaskRange { bits, n });
        }
        Ok(SubsetMask { n, bits })
    }

    /// Builds a mask from 1-based qubit indices.
    pub fn from_qubits(n: usize, qubits: &[usize]) -> Result<Self> {
        check_n(n)?;
        let mut bits = 0u32;
        for &q in qubits {
            if q == 0 || q > n {
                return Err(Error::QubitIndex { index: q, n });
            }
            bits |= 1 << (n - q);
        }
        Ok(SubsetMask { n, bits })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, 0)
    }

    pub fn full(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(SubsetMask { n, bits: ((1u64 << n) - 1) as u32 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    /// `|S|`.
    pub fn order(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn contains(&self, qubit: usize) -> bool {
        qubit >= 1 && qubit <= self.n && self.bits & (1 << (self.n - qubit)) != 0
    }

    /// Member qubits in ascending order (1-based).
    pub fn qubits(&self) -> Vec<usize> {
        (1..=self.n).filter(|&q| self.contains(q)).collect()
    }

    pub fn complement(&self) -> SubsetMask {
        SubsetMask { n: self.n, bits: !self.bits & (((1u64 << self.n) - 1) as u32) }
    }

    /// Letter label, `a` for qubit 1: `{1, 3}` is `"ac"`. The empty set is `"0"`.
    pub fn label(&self) -> String {
        if self.is_empty() {
            return "0".to_string();
        }
        self.qubits()
            .into_iter()
            .map(|q| {
                if q <= 26 {
                    char::from(b'a' + (q - 1) as u8).to_string()
                } else {
                    format!("q{q}")
                }
            })
            .collect()
    }

    /// Bit string of length `n`, qubit 1 first.
    pub fn bit_string(&self) -> String {
        bit_string(self.n, self.bits as usize)
    }

    /// All nonempty subsets ordered by size, then by qubit order
    /// (`a, b, c, ab, ac, bc, abc` for three qubits).
    pub fn nonempty(n: usize) -> Result<Vec<SubsetMask>> {
        check_n(n)?;
        let mut all: Vec<SubsetMask> =
            (1..(1u32 << n)).map(|bits| SubsetMask { n, bits }).collect();
        all.sort_by_key(|m| (m.order(), std::cmp::Reverse(m.bits)));
        Ok(all)
    }

    pub fn parse_label(n: usize, label: &str) -> Result<Self> {
        let qubits = label
            .chars()
            .map(|c| {
                if c.is_ascii_lowercase() {
                    Ok((c as u8 - b'a' + 1) as usize)
                } else {
                    Err(Error::Parse(format!("bad subset label `{label}`")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_qubits(n, &qubits)
    }
}

pub(crate) fn bit_string(n: usize, x: usize) -> String {
    (0..n).map(|k| if x >> (n - 1 - k) & 1 == 1 { '1' } else { '0' }).collect()
}

/// `chi_S(x) = prod_{i in S} (-1)^{x_i}`.
pub fn character_value(s: SubsetMask, n: usize, x: usize) -> Result<i8> {
    if s.n != n {
        return Err(Error::Dimension { expected: s.n, got: n });
    }
    if x >= 1 << n {
        return Err(Error::MaskRange { bits: x as u32, n });
    }
    Ok(character(s.bits as usize, x))
}

#[inline]
pub(crate) fn character(mask: usize, x: usize) -> i8 {
    if (mask & x).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Real phases `phi(x)` in radians for every configuration of `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    n: usize,
    values: Vec<f64>,
}

impl PhaseMap {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        check_n(n)?;
        if values.len() != 1 << n {
            return Err(Error::Dimension { expected: 1 << n, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("phase map entry {i}")));
        }
        Ok(PhaseMap { n, values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(PhaseMap { n, values: vec![0.0; 1 << n] })
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Result<Self> {
        check_n(n)?;
        Self::new(n, (0..1usize << n).map(f).collect())
    }

    /// `c * chi_S`.
    pub fn character_map(s: SubsetMask, c: f64) -> Self {
        let n = s.n;
        PhaseMap { n, values: (0..1usize << n).map(|x| c * character(s.bits as usize, x) as f64).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }

    /// Pointwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &PhaseMap, b: f64) -> Result<PhaseMap> {
        if other.n != self.n {
            return Err(Error::Dimension { expected: self.n, got: other.n });
        }
        Ok(PhaseMap {
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        write_table(
            &["index", "bits", "phase_rad"],
            self.values
                .iter()
                .enumerate()
                .map(|(x, v)| vec![x.to_string(), bit_string(self.n, x), fmt_f64(*v)]),
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let table = Table::parse(text)?;
        table.expect_header(&["index", "bits", "phase_rad"])?;
        let len = table.rows.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::Parse(format!("{len} rows is not a power of two")));
        }
        let n = len.trailing_zeros() as usize;
        let mut values = Vec::with_capacity(len);
        for row in 0..len {
            let index = table.usize_at(row, 0)?;
            if index != row {
                return Err(Error::Parse(format!("row {} has index {index}, expected {row}", row + 1)));
            }
            if table.rows[row][1] != bit_string(n, row) {
                return Err(Error::Parse(format!("row {} bit string mismatch", row + 1)));
            }
            values.push(table.f64_at(row, 2)?);
        }
        PhaseMap::new(n, values)
    }
}

/// Walsh–Hadamard coefficients `phi_hat(S)`, indexed by subset mask bits.
#[derive(Debug, Clone, PartialEq)]
pub struct WalshSpectrum {
    n: usize,
    coeffs: Vec<f64>,
}

impl WalshSpectrum {
    pub fn new(n: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_n(n)?;
        if coeffs.len() != 1 << n {
            return Err(Error::Dimension { expected: 1 << n, got: coeffs.len() });
        }
        Ok(WalshSpectrum { n, coeffs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, s: SubsetMask) -> f64 {
        self.coeffs[s.bits as usize]
    }
}

/// In-place unnormalized fast Walsh–Hadamard butterfly.
fn butterfly(data: &mut [f64]) {
    let len = data.len();
    let mut half = 1;
    while half < len {
        for block in (0..len).step_by(2 * half) {
            for j in block..block + half {
                let (u, v) = (data[j], data[j + half]);
                data[j] = u + v;
                data[j + half] = u - v;
            }
        }
        half *= 2;
    }
}

/// `phi_hat(S) = 2^-n sum_x phi(x) chi_S(x)`, computed with the
/// `O(n 2^n)` butterfly.
pub fn walsh_transform(phi: &PhaseMap) -> WalshSpectrum {
    let mut coeffs = phi.values.clone();
    butterfly(&mut coeffs);
    let scale = 1.0 / (1u64 << phi.n) as f64;
    coeffs.iter_mut().for_each(|c| *c *= scale);
    WalshSpectrum { n: phi.n, coeffs }
}

/// The defining `O(4^n)` sum, kept as an independent reference.
pub fn walsh_transform_direct(phi: &PhaseMap) -> WalshSpectrum {
    let len = 1usize << phi.n;
    let coeffs = (0..len)
        .map(|s| {
            phi.values
                .iter()
                .enumerate()
                .map(|(x, v)| v * character(s, x) as f64)
                .sum::<f64>()
                / len as f64
        })
        .collect();
    WalshSpectrum { n: phi.n, coeffs }
}

/// `phi(x) = sum_S phi_hat(S) chi_S(x)`.
pub fn walsh_inverse(spec: &WalshSpectrum) -> PhaseMap {
    let mut values = spec.coeffs.clone();
    butterfly(&mut values);
    PhaseMap { n: spec.n, values }
}

/// Coefficients of one interaction order `k = |S|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub order: usize,
    pub entries: Vec<(SubsetMask, f64)>,
}

/// Groups the spectrum by `|S| = 0..=n`.
pub fn k_body_layers(spec: &WalshSpectrum) -> Vec<Layer> {
    let mut layers: Vec<Layer> =
        (0..=spec.n).map(|order| Layer { order, entries: Vec::new() }).collect();
    let mut masks: Vec<SubsetMask> =
        (0..1u32 << spec.n).map(|bits| SubsetMask { n: spec.n, bits }).collect();
    masks.sort_by_key(|m| std::cmp::Reverse(m.bits));
    for m in masks {
        layers[m.order()].entries.push((m, spec.coeffs[m.bits as usize]));
    }
    layers
}
