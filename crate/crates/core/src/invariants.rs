//! Discrete derivatives on phase maps and the support-selective phase
//! invariants `Delta_S`.
//!
//! `Delta_S` is the average over the complement qubits of the mixed
//! derivative `delta_S phi`. The production path evaluates the equivalent
//! alternating sum `(-1)^|S| 2^-n sum_x chi_S(x) phi(x)`, i.e.
//! `(-1)^|S| phi_hat(S)`; the derivative-average route is kept as
//! [`invariant_by_definition`].

use crate::error::{Error, Result};
use crate::table::{fmt_f64, write_table, Table};
use crate::walsh::{character, walsh_transform, PhaseMap, SubsetMask};

/// `(delta_i phi)(x) = (phi(x | x_i = 1) - phi(x | x_i = 0)) / 2`.
pub fn discrete_derivative(phi: &PhaseMap, qubit: usize) -> Result<PhaseMap> {
    let n = phi.n();
    if qubit == 0 || qubit > n {
        return Err(Error::QubitIndex { index: qubit, n });
    }
    let bit = 1usize << (n - qubit);
    PhaseMap::from_fn(n, |x| 0.5 * (phi.get(x | bit) - phi.get(x & !bit)))
}

/// `delta_S phi`, applying the single-qubit derivatives in ascending qubit order.
pub fn multi_derivative(phi: &PhaseMap, s: SubsetMask) -> Result<PhaseMap> {
    check_subset(phi, s)?;
    let mut out = phi.clone();
    for q in s.qubits() {
        out = discrete_derivative(&out, q)?;
    }
    Ok(out)
}

fn check_subset(phi: &PhaseMap, s: SubsetMask) -> Result<()> {
    if s.n() != phi.n() {
        return Err(Error::Dimension { expected: phi.n(), got: s.n() });
    }
    if s.is_empty() {
        return Err(Error::EmptySubset);
    }
    Ok(())
}

fn sign_of_order(s: SubsetMask) -> f64 {
    if s.order() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `Delta_S(phi)` by the alternating sum over all configurations.
pub fn invariant(phi: &PhaseMap, s: SubsetMask) -> Result<f64> {
    check_subset(phi, s)?;
    let mask = s.bits() as usize;
    let sum: f64 =
        phi.values().iter().enumerate().map(|(x, v)| character(mask, x) as f64 * v).sum();
    Ok(sign_of_order(s) * sum / phi.values().len() as f64)
}

/// `Delta_S(phi)` as the complement average of `delta_S phi`.
///
/// `delta_S phi` does not depend on the qubits in `S`, so the average runs
/// over complement configurations with the `S` bits held at zero.
pub fn invariant_by_definition(phi: &PhaseMap, s: SubsetMask) -> Result<f64> {
    let d = multi_derivative(phi, s)?;
    let comp = s.complement().bits() as usize;
    let n_comp = s.complement().order();
    // enumerate submasks of the complement
    let mut sum = 0.0;
    let mut sub = comp;
    loop {
        sum += d.get(sub);
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & comp;
    }
    Ok(sum / (1u64 << n_comp) as f64)
}

/// `Delta_S` for every nonempty `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSet {
    n: usize,
    values: Vec<Option<f64>>,
}

impl InvariantSet {
    /// An empty set to be filled with [`InvariantSet::insert`].
    pub fn partial(n: usize) -> Result<Self> {
        SubsetMask::empty(n)?;
        Ok(InvariantSet { n, values: vec![None; 1 << n] })
    }

    pub fn insert(&mut self, s: SubsetMask, value: f64) -> Result<()> {
        if s.n() != self.n {
            return Err(Error::Dimension { expected: self.n, got: s.n() });
        }
        if s.is_empty() {
            return Err(Error::EmptySubset);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("invariant {}", s.label())));
        }
        self.values[s.bits() as usize] = Some(value);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: SubsetMask) -> Option<f64> {
        if s.n() != self.n {
            return None;
        }
        self.values[s.bits() as usize]
    }

    /// Lookup by letter label, e.g. `"abc"`. Panics on a malformed label.
    pub fn by_label(&self, label: &str) -> Option<f64> {
        self.get(SubsetMask::parse_label(self.n, label).expect("valid label"))
    }

    /// Number of populated subsets.
    pub fn len(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Populated entries in size-then-qubit order.
    pub fn entries(&self) -> Vec<(SubsetMask, f64)> {
        SubsetMask::nonempty(self.n)
            .expect("validated n")
            .into_iter()
            .filter_map(|s| self.values[s.bits() as usize].map(|v| (s, v)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        write_table(
            &["subset_bits", "subset_label", "delta_rad"],
            self.entries()
                .into_iter()
                .map(|(s, v)| vec![s.bit_string(), s.label(), fmt_f64(v)]),
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let table = Table::parse(text)?;
        table.expect_header(&["subset_bits", "subset_label", "delta_rad"])?;
        let n = table
            .rows
            .first()
            .map(|r| r[0].len())
            .ok_or_else(|| Error::Parse("no invariant rows".into()))?;
        let mut set = InvariantSet::partial(n)?;
        for (i, row) in table.rows.iter().enumerate() {
            if row[0].len() != n || !row[0].chars().all(|c| c == '0' || c == '1') {
                return Err(Error::Parse(format!("row {}: bad subset bits `{}`", i + 1, row[0])));
            }
            let bits = u32::from_str_radix(&row[0], 2).expect("checked binary");
            let s = SubsetMask::new(n, bits)?;
            if s.label() != row[1] {
                return Err(Error::Parse(format!("row {}: label `{}` does not match bits", i + 1, row[1])));
            }
            set.insert(s, table.f64_at(i, 2)?)?;
        }
        Ok(set)
    }
}

/// All `2^n - 1` invariants from a single Walsh transform.
pub fn all_invariants(phi: &PhaseMap) -> InvariantSet {
    let spec = walsh_transform(phi);
    let n = phi.n();
    let mut values = vec![None; 1 << n];
    for (bits, c) in spec.coeffs().iter().enumerate().skip(1) {
        let sign = if bits.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        values[bits] = Some(sign * c);
    }
    InvariantSet { n, values }
}

// Sign rows for phi_000 .. phi_111 as printed in the explicit three-qubit table.
const CLOSED_FORM_ROWS: [(&str, [i8; 8]); 7] = [
    ("abc", [1, -1, -1, 1, -1, 1, 1, -1]),
    ("ab", [1, 1, -1, -1, -1, -1, 1, 1]),
    ("ac", [1, -1, 1, -1, -1, 1, -1, 1]),
    ("bc", [1, -1, -1, 1, 1, -1, -1, 1]),
    ("a", [1, 1, 1, 1, -1, -1, -1, -1]),
    ("b", [1, 1, -1, -1, 1, 1, -1, -1]),
    ("c", [1, -1, 1, -1, 1, -1, 1, -1]),
];

/// The explicit three-qubit closed forms, evaluated exactly as tabulated.
///
/// These carry no `(-1)^|S|` prefactor, so they equal `phi_hat(S)` and
/// differ in sign from [`invariant`] whenever `|S|` is odd.
pub fn invariant_closed_form(phi: &PhaseMap, s: SubsetMask) -> Result<f64> {
    if phi.n() != 3 {
        return Err(Error::Dimension { expected: 3, got: phi.n() });
    }
    check_subset(phi, s)?;
    let label = s.label();
    let (_, signs) = CLOSED_FORM_ROWS
        .iter()
        .find(|(l, _)| *l == label)
        .expect("every nonempty 3-qubit subset is tabulated");
    Ok(signs.iter().zip(phi.values()).map(|(&c, v)| c as f64 * v).sum::<f64>() / 8.0)
}

/// Smallest-magnitude representative of `x` modulo `period`.
pub fn reduce_mod(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r > period / 2.0 {
        r - period
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn zzz_map() -> PhaseMap {
        PhaseMap::from_fn(3, |x| PI / 4.0 * character(0b111, x) as f64).unwrap()
    }

    fn m(n: usize, label: &str) -> SubsetMask {
        SubsetMask::parse_label(n, label).unwrap()
    }

    #[test]
    fn derivative_examples() {
        let phi = PhaseMap::new(1, vec![0.0, PI]).unwrap();
        assert_eq!(discrete_derivative(&phi, 1).unwrap().values(), &[PI / 2.0, PI / 2.0]);

        let chi = PhaseMap::character_map(m(3, "bc"), 0.9);
        assert!(discrete_derivative(&chi, 1).unwrap().values().iter().all(|v| *v == 0.0));

        let zz = PhaseMap::new(2, vec![0.7, -0.7, -0.7, 0.7]).unwrap();
        assert_eq!(discrete_derivative(&zz, 1).unwrap().values(), &[-0.7, 0.7, -0.7, 0.7]);

        assert!(matches!(discrete_derivative(&zz, 3), Err(Error::QubitIndex { .. })));
        assert!(matches!(discrete_derivative(&zz, 0), Err(Error::QubitIndex { .. })));
    }

    #[test]
    fn derivative_output_constant_along_its_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = PhaseMap::from_fn(3, |_| rng.gen_range(-3.0..3.0)).unwrap();
        for q in 1..=3 {
            let d = discrete_derivative(&phi, q).unwrap();
            let bit = 1 << (3 - q);
            for x in 0..8 {
                assert_eq!(d.get(x), d.get(x ^ bit));
            }
        }
    }

    #[test]
    fn multi_derivative_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = PhaseMap::from_fn(3, |_| rng.gen_range(-3.0..3.0)).unwrap();
        assert_eq!(
            multi_derivative(&phi, m(3, "b")).unwrap(),
            discrete_derivative(&phi, 2).unwrap()
        );

        let s = m(3, "abc");
        let d = multi_derivative(&PhaseMap::character_map(s, 0.4), s).unwrap();
        assert!(d.values().iter().all(|v| (v + 0.4).abs() < 1e-15));

        let one_two = discrete_derivative(&discrete_derivative(&phi, 1).unwrap(), 2).unwrap();
        let two_one = discrete_derivative(&discrete_derivative(&phi, 2).unwrap(), 1).unwrap();
        for (a, b) in one_two.values().iter().zip(two_one.values()) {
            assert!((a - b).abs() <= 1e-14);
        }
        assert_eq!(multi_derivative(&phi, SubsetMask::empty(3).unwrap()), Err(Error::EmptySubset));
    }

    #[test]
    fn invariant_examples() {
        let phi = zzz_map();
        assert!((invariant(&phi, m(3, "abc")).unwrap() + PI / 4.0).abs() < 1e-15);
        assert!((invariant_by_definition(&phi, m(3, "abc")).unwrap() + PI / 4.0).abs() < 1e-15);

        let c = PhaseMap::new(3, vec![2.5; 8]).unwrap();
        for s in SubsetMask::nonempty(3).unwrap() {
            assert_eq!(invariant(&c, s).unwrap(), 0.0);
        }

        let phi = PhaseMap::character_map(m(3, "a"), 0.3)
            .combine(1.0, &PhaseMap::character_map(m(3, "ab"), 0.5), 1.0)
            .unwrap();
        assert!((invariant(&phi, m(3, "ab")).unwrap() - 0.5).abs() < 1e-15);
        assert!((invariant(&phi, m(3, "a")).unwrap() + 0.3).abs() < 1e-15);
        assert!(invariant(&phi, m(3, "abc")).unwrap().abs() < 1e-15);
        assert_eq!(invariant(&phi, SubsetMask::empty(3).unwrap()), Err(Error::EmptySubset));
    }

    #[test]
    fn all_invariants_examples() {
        let set = all_invariants(&zzz_map());
        assert_eq!(set.len(), 7);
        assert!((set.by_label("abc").unwrap() + PI / 4.0).abs() < 1e-15);
        for l in ["a", "b", "c", "ab", "ac", "bc"] {
            assert!(set.by_label(l).unwrap().abs() < 1e-15);
        }

        let zz = PhaseMap::new(2, vec![0.7, -0.7, -0.7, 0.7]).unwrap();
        let set = all_invariants(&zz);
        assert!((set.by_label("ab").unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(set.by_label("a").unwrap(), 0.0);
        assert_eq!(set.by_label("b").unwrap(), 0.0);

        let zero = all_invariants(&PhaseMap::zeros(4).unwrap());
        assert_eq!(zero.len(), 15);
        assert!(zero.entries().iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn closed_form_examples() {
        let s = m(3, "abc");
        assert!((invariant_closed_form(&zzz_map(), s).unwrap() - PI / 4.0).abs() < 1e-15);
        let c = PhaseMap::new(3, vec![-1.0; 8]).unwrap();
        for s in SubsetMask::nonempty(3).unwrap() {
            assert_eq!(invariant_closed_form(&c, s).unwrap(), 0.0);
        }
        let ab = m(3, "ab");
        let phi = PhaseMap::character_map(ab, 0.5);
        assert!((invariant_closed_form(&phi, ab).unwrap() - 0.5).abs() < 1e-15);
        let phi2 = PhaseMap::zeros(2).unwrap();
        assert!(invariant_closed_form(&phi2, m(2, "ab")).is_err());
    }

    #[test]
    fn derivative_of_character_exhaustive() {
        for n in 1..=4 {
            for s_bits in 1..1u32 << n {
                let s = SubsetMask::new(n, s_bits).unwrap();
                for r_bits in 0..1u32 << n {
                    let r = SubsetMask::new(n, r_bits).unwrap();
                    let d = multi_derivative(&PhaseMap::character_map(r, 1.0), s).unwrap();
                    let sign = sign_of_order(s);
                    let expect = if s_bits & !r_bits != 0 {
                        PhaseMap::zeros(n).unwrap()
                    } else {
                        PhaseMap::character_map(SubsetMask::new(n, r_bits & !s_bits).unwrap(), sign)
                    };
                    assert_eq!(d, expect, "S={s_bits:b} R={r_bits:b}");
                }
            }
        }
    }

    #[test]
    fn invariant_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = PhaseMap::from_fn(3, |_| rng.gen_range(-3.0..3.0)).unwrap();
        let set = all_invariants(&phi);
        let text = set.to_csv();
        assert!(text.starts_with("subset_bits,subset_label,delta_rad\n100,a,"));
        let back = InvariantSet::from_csv(&text).unwrap();
        for ((s1, v1), (s2, v2)) in set.entries().iter().zip(back.entries()) {
            assert_eq!(*s1, s2);
            assert!((v1 - v2).abs() < 1e-10);
        }
        assert!(InvariantSet::from_csv("subset_bits,subset_label,delta_rad\n100,b,0.1\n").is_err());
    }

    #[test]
    fn reduce_mod_picks_nearest() {
        assert!((reduce_mod(3.0 * PI / 4.0 + 10.0 * PI, PI) + PI / 4.0).abs() < 1e-12);
        assert!(reduce_mod(0.1, PI) - 0.1 < 1e-15);
        assert!((reduce_mod(-0.1, PI) + 0.1).abs() < 1e-15);
    }
}
