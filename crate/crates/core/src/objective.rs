//! Invariant-space control cost, trace fidelity, local corrections and the
//! dephasing estimate.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::invariants::InvariantSet;
use crate::linalg::{CMat, C64};
use crate::nvmodel::{diagonal_unitary as diagonal, hadamard_on_first, FrameKind};
use crate::walsh::{character, PhaseMap, SubsetMask};

/// Dense complex matrix standing in for a (near-)unitary operator.
pub type UnitaryMatrix = CMat;

/// Targets `Delta*_S` per nonempty subset and weights per interaction order.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    n: usize,
    /// Indexed by mask bits; `None` means unconstrained.
    targets: Vec<Option<f64>>,
    /// `weights[k - 1] = w_k`.
    weights: Vec<f64>,
}

impl TargetSpec {
    /// All subsets unconstrained.
    pub fn new(n: usize, weights: Vec<f64>) -> Result<Self> {
        SubsetMask::empty(n)?;
        if weights.len() != n {
            return Err(Error::Dimension { expected: n, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        Ok(TargetSpec { n, targets: vec![None; 1 << n], weights })
    }

    /// `Delta*_abc = pi/4`, all pairs `0`, single-qubit invariants free,
    /// `w = (0, 1, 1)`.
    pub fn three_body_entangler() -> Self {
        let mut spec = TargetSpec::new(3, vec![0.0, 1.0, 1.0]).expect("valid");
        for s in SubsetMask::nonempty(3).expect("valid") {
            match s.order() {
                2 => spec.set_target(s, Some(0.0)).expect("valid"),
                3 => spec.set_target(s, Some(std::f64::consts::FRAC_PI_4)).expect("valid"),
                _ => {}
            }
        }
        spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set_target(&mut self, s: SubsetMask, target: Option<f64>) -> Result<()> {
        if s.n() != self.n {
            return Err(Error::Dimension { expected: self.n, got: s.n() });
        }
        if s.is_empty() {
            return Err(Error::EmptySubset);
        }
        if let Some(t) = target {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("target for {}", s.label())));
            }
        }
        self.targets[s.bits() as usize] = target;
        Ok(())
    }

    pub fn set_weight(&mut self, order: usize, w: f64) -> Result<()> {
        if order == 0 || order > self.n {
            return Err(Error::InvalidParameter(format!("no interaction order {order}")));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        self.weights[order - 1] = w;
        Ok(())
    }

    pub fn target(&self, s: SubsetMask) -> Option<f64> {
        self.targets.get(s.bits() as usize).copied().flatten()
    }

    pub fn weight(&self, order: usize) -> f64 {
        self.weights[order - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(S, Delta*_S, w_|S|)` for every constrained subset.
    pub fn constrained(&self) -> Vec<(SubsetMask, f64, f64)> {
        SubsetMask::nonempty(self.n)
            .expect("n validated")
            .into_iter()
            .filter_map(|s| self.target(s).map(|t| (s, t, self.weight(s.order()))))
            .collect()
    }

    /// Diagonal unitary whose invariants equal the targets (unconstrained
    /// subsets contribute nothing): `phi = sum_S (-1)^|S| Delta*_S chi_S`.
    pub fn diagonal_target(&self) -> PhaseMap {
        let constrained = self.constrained();
        PhaseMap::from_fn(self.n, |x| {
            constrained
                .iter()
                .map(|(s, t, _)| {
                    let sign = if s.order() % 2 == 0 { 1.0 } else { -1.0 };
                    sign * t * character(s.bits() as usize, x) as f64
                })
                .sum()
        })
        .expect("finite targets")
    }

    /// Target unitary in the computational basis: the diagonal target
    /// conjugated back out of the analysis frame.
    pub fn target_unitary(&self, kind: FrameKind) -> UnitaryMatrix {
        let d = diagonal(&self.diagonal_target());
        match kind {
            FrameKind::Canonical => d,
            FrameKind::HadamardOnA => {
                let h = hadamard_on_first(self.n);
                &h * d * &h
            }
        }
    }
}

/// `J = sum_S w_|S| [1 - cos 2(Delta_S - Delta*_S)]` over constrained subsets.
pub fn cost(inv: &InvariantSet, spec: &TargetSpec) -> Result<f64> {
    if inv.n() != spec.n() {
        return Err(Error::Dimension { expected: spec.n(), got: inv.n() });
    }
    let mut j = 0.0;
    for (s, target, w) in spec.constrained() {
        if w == 0.0 {
            continue;
        }
        let delta = inv.get(s).ok_or(Error::MissingInvariant(s.bits()))?;
        j += w * (1.0 - (2.0 * (delta - target)).cos());
    }
    Ok(j)
}

/// Shifts of `2 Delta_S` (all seven nonempty `S`, in [`SubsetMask::nonempty`]
/// order) in units of `pi/2`, mod 4, reachable by re-lifting a three-qubit
/// phase map `phi(x) -> phi(x) + 2 pi k(x)`.
fn lift_shifts() -> &'static [[u8; 7]] {
    static SHIFTS: OnceLock<Vec<[u8; 7]>> = OnceLock::new();
    SHIFTS.get_or_init(|| {
        // 2 Delta_S moves by (-1)^|S| (pi/2) sum_x chi_S(x) k(x)
        let subsets = SubsetMask::nonempty(3).expect("n = 3");
        let generators: Vec<[u8; 7]> = (0..8)
            .map(|x| {
                let mut g = [0u8; 7];
                for (slot, s) in g.iter_mut().zip(&subsets) {
                    let sign = if s.order() % 2 == 0 { 1 } else { -1 };
                    *slot = (sign * character(s.bits() as usize, x) as i32).rem_euclid(4) as u8;
                }
                g
            })
            .collect();
        let mut shifts = std::collections::BTreeSet::new();
        shifts.insert([0u8; 7]);
        loop {
            let mut grown = shifts.clone();
            for v in &shifts {
                for g in &generators {
                    let mut w = *v;
                    for (a, b) in w.iter_mut().zip(g) {
                        *a = (*a + b) % 4;
                    }
                    grown.insert(w);
                }
            }
            if grown.len() == shifts.len() {
                break;
            }
            shifts = grown;
        }
        shifts.into_iter().collect()
    })
}

/// `min_k J(phi + 2 pi k)` and the invariants of the minimizing lift.
///
/// Unlike [`cost`] on a fixed lift this depends only on the diagonal
/// unitary. The returned invariants are defined mod `pi`, which is all the
/// cost and [`local_correction`] need. Three qubits only.
pub fn best_lift(inv: &InvariantSet, spec: &TargetSpec) -> Result<(f64, InvariantSet)> {
    if inv.n() != spec.n() {
        return Err(Error::Dimension { expected: spec.n(), got: inv.n() });
    }
    if spec.n() != 3 {
        return Err(Error::Dimension { expected: 3, got: spec.n() });
    }
    let subsets = SubsetMask::nonempty(3)?;
    let mut deltas = [0.0; 7];
    for (d, s) in deltas.iter_mut().zip(&subsets) {
        *d = inv.get(*s).ok_or(Error::MissingInvariant(s.bits()))?;
    }
    // (slot, weight, cos(a + m pi/2) for m = 0..3)
    let mut terms = Vec::new();
    for (s, target, w) in spec.constrained() {
        if w == 0.0 {
            continue;
        }
        let slot = subsets.iter().position(|m| *m == s).expect("nonempty subset");
        let a = 2.0 * (deltas[slot] - target);
        terms.push((slot, w, [a.cos(), -a.sin(), -a.cos(), a.sin()]));
    }
    let mut best = (f64::INFINITY, [0u8; 7]);
    for m in lift_shifts() {
        let j: f64 = terms.iter().map(|(slot, w, c)| w * (1.0 - c[m[*slot] as usize])).sum();
        if j < best.0 {
            best = (j, *m);
        }
    }
    let mut lifted = InvariantSet::partial(3)?;
    for ((s, d), m) in subsets.iter().zip(deltas).zip(best.1) {
        lifted.insert(*s, d + m as f64 * std::f64::consts::FRAC_PI_4)?;
    }
    Ok((best.0, lifted))
}

/// Cost of the most favourable lift; see [`best_lift`].
pub fn lift_invariant_cost(inv: &InvariantSet, spec: &TargetSpec) -> Result<f64> {
    Ok(best_lift(inv, spec)?.0)
}

/// Central finite-difference gradient of `f` at `params`.
pub fn cost_gradient_fd(f: impl Fn(&[f64]) -> f64, params: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step {step} must be positive")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = f(&probe);
        probe[i] = params[i] - step;
        let down = f(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective near parameter {i}")));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `|Tr(U_t^dagger U)|^2 / d^2`.
pub fn fidelity(target: &UnitaryMatrix, actual: &UnitaryMatrix) -> Result<f64> {
    if target.shape() != actual.shape() || target.nrows() != target.ncols() {
        return Err(Error::Dimension { expected: target.nrows(), got: actual.nrows() });
    }
    let d = target.nrows() as f64;
    let tr: C64 = target.iter().zip(actual.iter()).map(|(t, a)| t.conj() * a).sum();
    Ok((tr.norm_sqr() / (d * d)).min(1.0))
}

/// `Tr(U^dagger U) / d`.
pub fn unitarity_metric(u: &UnitaryMatrix) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum::<f64>() / u.nrows() as f64
}

/// Local phase rotations cancelling the single-qubit invariants of the
/// framed phase map: `exp(i sum_j Delta_j Z_j)`, conjugated by `H_A` for the
/// Hadamard frame.
pub fn local_correction(inv: &InvariantSet, mode: FrameKind) -> Result<UnitaryMatrix> {
    let n = inv.n();
    let mut single = Vec::with_capacity(n);
    for q in 1..=n {
        let s = SubsetMask::from_qubits(n, &[q])?;
        single.push((s.bits() as usize, inv.get(s).ok_or(Error::MissingInvariant(s.bits()))?));
    }
    let phi = PhaseMap::from_fn(n, |x| single.iter().map(|&(m, d)| d * character(m, x) as f64).sum())?;
    let d = diagonal(&phi);
    Ok(match mode {
        FrameKind::Canonical => d,
        FrameKind::HadamardOnA => {
            let h = hadamard_on_first(n);
            &h * d * &h
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTrace {
    times: Vec<f64>,
    p_minus1: Vec<f64>,
}

impl ExposureTrace {
    pub fn new(times: Vec<f64>, p_minus1: Vec<f64>) -> Result<Self> {
        if times.len() != p_minus1.len() {
            return Err(Error::Dimension { expected: times.len(), got: p_minus1.len() });
        }
        if times.is_empty() {
            return Err(Error::InvalidParameter("empty exposure trace".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("trace times must be strictly increasing".into()));
        }
        if p_minus1.iter().any(|p| !(*p >= -1e-9 && *p <= 1.0 + 1e-9)) {
            return Err(Error::InvalidParameter("populations must lie in [0, 1]".into()));
        }
        Ok(ExposureTrace { times, p_minus1 })
    }

    /// `integral p_{-1} dt` by the trapezoidal rule, seconds.
    pub fn exposure(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.p_minus1.windows(2))
            .map(|(t, p)| 0.5 * (t[1] - t[0]) * (p[0] + p[1]))
            .sum()
    }
}

/// `D = exp(-E / T2)` with `E` the integrated `m_s = -1` exposure.
pub fn dephasing_estimate(trace: &ExposureTrace, t2: f64) -> Result<f64> {
    dephasing_from_exposure(trace.exposure(), t2)
}

pub fn dephasing_from_exposure(exposure: f64, t2: f64) -> Result<f64> {
    if !(t2 > 0.0) || !t2.is_finite() {
        return Err(Error::InvalidParameter(format!("T2 = {t2} must be positive")));
    }
    if !(exposure >= 0.0) || !exposure.is_finite() {
        return Err(Error::InvalidParameter(format!("exposure {exposure} must be nonnegative")));
    }
    Ok((-exposure / t2).exp())
}

/// Electron dephasing times reported alongside every gate, seconds.
pub const REPORT_T2: [f64; 2] = [0.5e-3, 1e-3];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::all_invariants;
    use crate::linalg::{identity, kron, max_abs_diff, pauli_x, pauli_z};
    use crate::nvmodel::{apply_frame, framed_diagonal_phases};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn set(n: usize, entries: &[(&str, f64)]) -> InvariantSet {
        let mut inv = InvariantSet::partial(n).unwrap();
        for (l, v) in entries {
            inv.insert(SubsetMask::parse_label(n, l).unwrap(), *v).unwrap();
        }
        inv
    }

    #[test]
    fn cost_examples() {
        let spec = TargetSpec::three_body_entangler();
        let on_target = set(3, &[("ab", 0.0), ("ac", 0.0), ("bc", 0.0), ("abc", FRAC_PI_4)]);
        assert_eq!(cost(&on_target, &spec).unwrap(), 0.0);

        let mut one = TargetSpec::new(1, vec![1.0]).unwrap();
        one.set_target(SubsetMask::full(1).unwrap(), Some(0.3)).unwrap();
        let shifted = set(1, &[("a", 0.3 + PI)]);
        assert!(cost(&shifted, &one).unwrap() < 1e-15);
        let quarter = set(1, &[("a", 0.3 + FRAC_PI_2)]);
        assert!((cost(&quarter, &one).unwrap() - 2.0).abs() < 1e-15);

        assert!(matches!(cost(&set(2, &[]), &spec), Err(Error::Dimension { .. })));
        assert!(matches!(cost(&set(3, &[("ab", 0.0)]), &spec), Err(Error::MissingInvariant(_))));
        // unconstrained single-qubit entries are ignored
        let with_locals = set(3, &[("a", 1.0), ("ab", 0.0), ("ac", 0.0), ("bc", 0.0), ("abc", FRAC_PI_4)]);
        assert_eq!(cost(&with_locals, &spec).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        let g = cost_gradient_fd(|p| p[0] * p[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = cost_gradient_fd(|_| 2.5, &[1.0, 2.0], 1e-3).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = cost_gradient_fd(|p| 1.0 - (2.0 * p[0]).cos(), &[0.0], 1e-4).unwrap();
        assert!(g[0].abs() <= 1e-6);
        assert!(cost_gradient_fd(|p| p[0], &[0.0], 0.0).is_err());
        assert!(cost_gradient_fd(|_| f64::NAN, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let zzz = kron(&kron(&pauli_z(), &pauli_z()), &pauli_z());
        assert!((fidelity(&zzz, &zzz).unwrap() - 1.0).abs() < 1e-15);
        let phased = &zzz * C64::from_polar(1.0, 0.37);
        assert!((fidelity(&zzz, &phased).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&identity(2), &pauli_z()).unwrap(), 0.0);
        assert!(fidelity(&identity(2), &identity(4)).is_err());
    }

    #[test]
    fn target_unitaries() {
        let spec = TargetSpec::three_body_entangler();
        let zzz = kron(&kron(&pauli_z(), &pauli_z()), &pauli_z());
        let xzz = kron(&kron(&pauli_x(), &pauli_z()), &pauli_z());
        let expect = crate::linalg::expm_hermitian(&zzz, FRAC_PI_4);
        assert!(max_abs_diff(&spec.target_unitary(FrameKind::Canonical), &expect) < 1e-14);
        let expect = crate::linalg::expm_hermitian(&xzz, FRAC_PI_4);
        assert!(max_abs_diff(&spec.target_unitary(FrameKind::HadamardOnA), &expect) < 1e-14);

        // the diagonal target reproduces the targets through the invariants
        let inv = all_invariants(&spec.diagonal_target());
        assert!(cost(&inv, &spec).unwrap() < 1e-28);
        assert!((inv.by_label("abc").unwrap() - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn local_correction_examples() {
        let zero = set(3, &[("a", 0.0), ("b", 0.0), ("c", 0.0)]);
        let u = local_correction(&zero, FrameKind::Canonical).unwrap();
        assert!(max_abs_diff(&u, &identity(8)) < 1e-15);

        let mut phi = PhaseMap::character_map(SubsetMask::parse_label(3, "a").unwrap(), 0.2);
        let extra = PhaseMap::character_map(SubsetMask::full(3).unwrap(), 0.4);
        phi = phi.combine(1.0, &extra, 1.0).unwrap();
        let inv = all_invariants(&phi);
        let corrected = local_correction(&inv, FrameKind::Canonical).unwrap() * diagonal(&phi);
        let (out, _) = framed_diagonal_phases(&corrected, FrameKind::Canonical).unwrap();
        let after = all_invariants(&out);
        for s in SubsetMask::nonempty(3).unwrap() {
            let expect = if s.order() == 1 { 0.0 } else { inv.get(s).unwrap() };
            assert!((after.get(s).unwrap() - expect).abs() < 1e-12, "{}", s.label());
        }

        // Hadamard frame: correction acts on the framed operator
        let u_pulse = apply_frame(&diagonal(&phi), FrameKind::HadamardOnA);
        let loc = local_correction(&inv, FrameKind::HadamardOnA).unwrap();
        let (out, off) = framed_diagonal_phases(&(loc * u_pulse), FrameKind::HadamardOnA).unwrap();
        assert!(off < 1e-14);
        assert!(all_invariants(&out).by_label("a").unwrap().abs() < 1e-12);

        assert!(local_correction(&set(3, &[("a", 0.0)]), FrameKind::Canonical).is_err());
    }

    #[test]
    fn dephasing_examples() {
        assert!((dephasing_from_exposure(0.4e-6, 0.5e-3).unwrap() - (-8e-4f64).exp()).abs() < 1e-15);
        assert!((dephasing_from_exposure(0.45e-6, 0.5e-3).unwrap() - 0.99910).abs() < 1e-5);
        let flat = ExposureTrace::new(vec![0.0, 1e-6], vec![0.0, 0.0]).unwrap();
        assert_eq!(dephasing_estimate(&flat, 1e-3).unwrap(), 1.0);
        let full = ExposureTrace::new(vec![0.0, 0.5e-6, 1.5e-6], vec![1.0, 1.0, 1.0]).unwrap();
        assert!((dephasing_estimate(&full, 0.5e-3).unwrap() - (-1.5e-6f64 / 0.5e-3).exp()).abs() < 1e-15);
        assert!(ExposureTrace::new(vec![], vec![]).is_err());
        assert!(ExposureTrace::new(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(dephasing_estimate(&flat, 0.0).is_err());
    }
}
