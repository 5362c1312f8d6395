//! Rotating-frame model of an NV electron coupled to a set of nuclear spins.
//!
//! The electron is reduced to the `{|0>, |-1>}` manifold and the model keeps
//! three pieces: the microwave drive at the carrier detuning, the weak
//! drive-mediated electron–nuclear modulation through the hyperfine
//! misalignment angles, and the static nuclear precession in the `|-1>`
//! manifold. That static term is what makes the drive configuration
//! selective: in the frame co-rotating with the carrier, configuration `m`
//! sees the detuning `Delta_e(m)`. Nuclear states are expressed in the eigenbasis of the rotated
//! operators `I'_z`, in which `I'_{x,y,z}` take the standard spin-matrix form.
//!
//! Basis ordering is electron first (`|0>` then `|-1>`), followed by the
//! nuclei in configuration order, each in descending `m`.
//!
//! Frequencies inside [`DerivedFrame`] and [`RegisterModel`] are angular
//! (rad/s); [`RegisterConfig`] holds tabulated values in Hz and Hz/T.

use std::f64::consts::{PI, SQRT_2, TAU};

use crate::error::{Error, Result};
use crate::linalg::{identity, kron_all, pauli_x, pauli_y, spin_operators, CMat, C64};
use crate::pulse::Drive;
use crate::walsh::{PhaseMap, MAX_QUBITS};

#[derive(Debug, Clone, PartialEq)]
pub enum NuclearRole {
    /// Held in a fixed `m_I` manifold.
    Spectator { m: f64 },
    /// Spin-1/2 logical qubit: `|0> = m +1/2`, `|1> = m -1/2`.
    Qubit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub name: String,
    pub twice_spin: u32,
    /// gamma / 2pi in Hz/T.
    pub gamma: f64,
    /// Hz.
    pub a_zz: f64,
    /// Hz.
    pub a_perp: f64,
    /// Hz. Quadrupole splitting; it drops out of the rotating-frame model.
    pub q: f64,
    pub role: NuclearRole,
}

impl Nucleus {
    fn dim(&self) -> usize {
        self.twice_spin as usize + 1
    }

    fn spin(&self) -> f64 {
        self.twice_spin as f64 / 2.0
    }

    /// `m` value of Zeeman-ordered level `k`.
    fn m_of(&self, k: usize) -> f64 {
        self.spin() - k as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterConfig {
    /// gamma_e / 2pi in Hz/T.
    pub gamma_e: f64,
    /// Static field along the NV axis, tesla.
    pub b0: f64,
    pub nuclei: Vec<Nucleus>,
}

impl Default for RegisterConfig {
    /// NV with a spectator 14N in `m_I = +1` and two 13C qubits.
    fn default() -> Self {
        RegisterConfig {
            gamma_e: 28.024e9,
            b0: 0.45,
            nuclei: vec![
                Nucleus {
                    name: "N14".into(),
                    twice_spin: 2,
                    gamma: 3.077e6,
                    a_zz: -2.14e6,
                    a_perp: 0.0,
                    q: -5.01e6,
                    role: NuclearRole::Spectator { m: 1.0 },
                },
                Nucleus {
                    name: "C1".into(),
                    twice_spin: 1,
                    gamma: 10.71e6,
                    a_zz: 2.281e6,
                    a_perp: 0.240e6,
                    q: 0.0,
                    role: NuclearRole::Qubit,
                },
                Nucleus {
                    name: "C2".into(),
                    twice_spin: 1,
                    gamma: 10.71e6,
                    a_zz: -1.011e6,
                    a_perp: 0.014e6,
                    q: 0.0,
                    role: NuclearRole::Qubit,
                },
            ],
        }
    }
}

impl RegisterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nuclei.is_empty() {
            return Err(Error::InvalidParameter("register needs at least one nucleus".into()));
        }
        for v in [self.gamma_e, self.b0] {
            if !v.is_finite() {
                return Err(Error::NonFinite("register field parameter".into()));
            }
        }
        for nuc in &self.nuclei {
            if nuc.twice_spin == 0 {
                return Err(Error::InvalidParameter(format!("nucleus {} has spin 0", nuc.name)));
            }
            if ![nuc.gamma, nuc.a_zz, nuc.a_perp, nuc.q].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("nucleus {}", nuc.name)));
            }
            match nuc.role {
                NuclearRole::Spectator { m } => {
                    let k = nuc.spin() - m;
                    if m.abs() > nuc.spin() || (k - k.round()).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "m = {m} is not a level of nucleus {}",
                            nuc.name
                        )));
                    }
                }
                NuclearRole::Qubit => {
                    if nuc.twice_spin != 1 {
                        return Err(Error::InvalidParameter(format!(
                            "qubit nucleus {} must be spin 1/2",
                            nuc.name
                        )));
                    }
                }
            }
        }
        if self.logical_qubits() > MAX_QUBITS {
            return Err(Error::QubitCount(self.logical_qubits()));
        }
        Ok(())
    }

    /// Electron plus qubit nuclei.
    pub fn logical_qubits(&self) -> usize {
        1 + self.nuclei.iter().filter(|n| n.role == NuclearRole::Qubit).count()
    }

    pub fn dimension(&self) -> usize {
        2 * self.nuclei.iter().map(Nucleus::dim).product::<usize>()
    }
}

/// Per-nucleus quantities of the misalignment rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuclearFrame {
    /// Polar misalignment angle.
    pub theta: f64,
    /// Azimuthal angle.
    pub azimuth: f64,
    /// Precession frequency in the `|-1>` manifold, rad/s.
    pub omega: f64,
    /// `gamma B0`, rad/s.
    pub larmor: f64,
    /// Beat between nuclear precession and the electron transition, taken in
    /// the carrier frame: `omega + (omega_mw - Lambda_s)`.
    pub beat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedFrame {
    pub nuclei: Vec<NuclearFrame>,
    /// `m` values of every nuclear configuration, in basis order.
    pub configs: Vec<Vec<f64>>,
    /// `Lambda(m) - Lambda_s` per configuration, rad/s.
    pub lambda_offset: Vec<f64>,
    /// Configuration the carrier addresses (spectators fixed, qubits up).
    pub resonant_config: usize,
    /// `omega_mw - Lambda_s`, rad/s.
    pub carrier_detuning: f64,
    /// `Delta_e(m) = omega_mw - Lambda(m)`, rad/s.
    pub detunings: Vec<f64>,
}

/// Misalignment angles, precession frequencies and configuration-dependent
/// detunings. `carrier_offset` shifts the microwave carrier away from the
/// resonance of the addressed configuration (rad/s).
///
/// Only differences of `Lambda(m)` enter; `Lambda_s` itself is never needed.
pub fn derive_frame(cfg: &RegisterConfig, carrier_offset: f64) -> Result<DerivedFrame> {
    cfg.validate()?;
    let mut nuclei = Vec::with_capacity(cfg.nuclei.len());
    for nuc in &cfg.nuclei {
        let longitudinal = nuc.a_zz + nuc.gamma * cfg.b0;
        // A_xz = 0, A_yz = A_perp
        let (a_xz, a_yz) = (0.0, nuc.a_perp);
        let transverse = (a_xz * a_xz + a_yz * a_yz).sqrt();
        let theta = if longitudinal == 0.0 {
            if transverse == 0.0 {
                return Err(Error::DegenerateAngle(nuc.name.clone()));
            }
            PI / 2.0
        } else {
            (transverse / longitudinal).atan() + 0.0
        };
        let azimuth = if a_yz == 0.0 { 0.0 } else { (a_xz / a_yz).atan() };
        let omega = TAU * (longitudinal * longitudinal + transverse * transverse).sqrt();
        let larmor = TAU * nuc.gamma * cfg.b0;
        nuclei.push(NuclearFrame { theta, azimuth, omega, larmor, beat: 0.0 });
    }

    let configs = enumerate_configs(&cfg.nuclei);
    let lambda_offset: Vec<f64> = configs
        .iter()
        .map(|ms| -ms.iter().zip(&nuclei).map(|(m, f)| m * (f.larmor - f.omega)).sum::<f64>())
        .collect();
    let resonant: Vec<f64> = cfg
        .nuclei
        .iter()
        .map(|n| match n.role {
            NuclearRole::Spectator { m } => m,
            NuclearRole::Qubit => 0.5,
        })
        .collect();
    let resonant_config = configs
        .iter()
        .position(|c| c.iter().zip(&resonant).all(|(a, b)| (a - b).abs() < 1e-12))
        .expect("resonant configuration is enumerated");
    let carrier_detuning = lambda_offset[resonant_config] + carrier_offset;
    let detunings = lambda_offset.iter().map(|l| carrier_detuning - l).collect();
    for f in &mut nuclei {
        f.beat = f.omega + carrier_detuning;
    }
    Ok(DerivedFrame { nuclei, configs, lambda_offset, resonant_config, carrier_detuning, detunings })
}

fn enumerate_configs(nuclei: &[Nucleus]) -> Vec<Vec<f64>> {
    let mut configs = vec![Vec::new()];
    for nuc in nuclei {
        configs = configs
            .into_iter()
            .flat_map(|prefix| {
                (0..nuc.dim()).map(move |k| {
                    let mut c = prefix.clone();
                    c.push(nuc.m_of(k));
                    c
                })
            })
            .collect();
    }
    configs
}

/// `theta`-weighted electron ⊗ nuclear operator products for one nucleus.
#[derive(Debug, Clone)]
struct Coupling {
    beat: f64,
    azimuth: f64,
    xx: CMat,
    xy: CMat,
    yx: CMat,
    yy: CMat,
}

/// Assembled operator blocks, ready for repeated Hamiltonian evaluation.
///
/// A model covers either the full register space or one sector closed under
/// the dynamics (see [`RegisterModel::spectator_sector`]).
#[derive(Debug, Clone)]
pub struct RegisterModel {
    cfg: RegisterConfig,
    frame: DerivedFrame,
    dims: Vec<usize>,
    /// Full-space indices of the basis states this model keeps.
    basis: Vec<usize>,
    static_diag: Vec<f64>,
    /// `(row of |0,m>, row of |-1,m>)` in local indices.
    drive_pairs: Vec<(usize, usize)>,
    couplings: Vec<Coupling>,
    /// `Omega = drive_scale * E`.
    drive_scale: f64,
}

impl RegisterModel {
    pub fn new(cfg: &RegisterConfig, carrier_offset: f64) -> Result<Self> {
        let frame = derive_frame(cfg, carrier_offset)?;
        let mut dims = vec![2];
        dims.extend(cfg.nuclei.iter().map(Nucleus::dim));
        let dim: usize = dims.iter().product();
        let nuc_dim = dim / 2;

        let mut static_diag = vec![0.0; dim];
        for (c, ms) in frame.configs.iter().enumerate() {
            let shift: f64 =
                -ms.iter().zip(&frame.nuclei).map(|(m, f)| (f.omega - f.larmor) * m).sum::<f64>();
            static_diag[nuc_dim + c] = shift;
        }
        let drive_pairs = (0..nuc_dim).map(|c| (c, nuc_dim + c)).collect();

        let mut couplings = Vec::new();
        for (i, f) in frame.nuclei.iter().enumerate() {
            if f.theta == 0.0 {
                continue;
            }
            let (ix, iy, _) = spin_operators(cfg.nuclei[i].twice_spin);
            let embed = |electron: CMat, nuclear: &CMat| {
                let mut ops = vec![electron];
                for (j, nuc) in cfg.nuclei.iter().enumerate() {
                    ops.push(if j == i { nuclear.clone() } else { identity(nuc.dim()) });
                }
                kron_all(&ops) * C64::new(f.theta, 0.0)
            };
            couplings.push(Coupling {
                beat: f.beat,
                azimuth: f.azimuth,
                xx: embed(pauli_x(), &ix),
                xy: embed(pauli_x(), &iy),
                yx: embed(pauli_y(), &ix),
                yy: embed(pauli_y(), &iy),
            });
        }
        Ok(RegisterModel {
            cfg: cfg.clone(),
            frame,
            dims,
            basis: (0..dim).collect(),
            static_diag,
            drive_pairs,
            couplings,
            drive_scale: TAU * cfg.gamma_e / (2.0 * SQRT_2),
        })
    }

    /// Restriction to the states where every spectator sits in its fixed
    /// manifold. Fails if the dynamics couple that sector to the rest.
    pub fn spectator_sector(&self) -> Result<RegisterModel> {
        let nuc_dim = self.dim_full() / 2;
        let keep_config: Vec<bool> = self
            .frame
            .configs
            .iter()
            .map(|ms| {
                self.cfg.nuclei.iter().zip(ms).all(|(nuc, m)| match nuc.role {
                    NuclearRole::Spectator { m: fixed } => (m - fixed).abs() < 1e-12,
                    NuclearRole::Qubit => true,
                })
            })
            .collect();
        let kept: Vec<usize> = self
            .basis
            .iter()
            .copied()
            .filter(|&full| keep_config[full % nuc_dim])
            .collect();
        let local: Vec<usize> = kept
            .iter()
            .map(|full| self.basis.iter().position(|b| b == full).expect("subset"))
            .collect();
        for c in &self.couplings {
            for op in [&c.xx, &c.xy, &c.yx, &c.yy] {
                for &r in &local {
                    for col in 0..op.ncols() {
                        if !local.contains(&col) && op[(r, col)].norm() > 0.0 {
                            return Err(Error::InvalidParameter(
                                "spectator sector is coupled to other manifolds".into(),
                            ));
                        }
                    }
                }
            }
        }
        let slice = |m: &CMat| CMat::from_fn(local.len(), local.len(), |r, c| m[(local[r], local[c])]);
        let index_of = |old: usize| local.iter().position(|&l| l == old);
        Ok(RegisterModel {
            cfg: self.cfg.clone(),
            frame: self.frame.clone(),
            dims: self.dims.clone(),
            basis: kept,
            static_diag: local.iter().map(|&l| self.static_diag[l]).collect(),
            drive_pairs: self
                .drive_pairs
                .iter()
                .filter_map(|&(a, b)| Some((index_of(a)?, index_of(b)?)))
                .collect(),
            couplings: self
                .couplings
                .iter()
                .map(|c| Coupling {
                    beat: c.beat,
                    azimuth: c.azimuth,
                    xx: slice(&c.xx),
                    xy: slice(&c.xy),
                    yx: slice(&c.yx),
                    yy: slice(&c.yy),
                })
                .collect(),
            drive_scale: self.drive_scale,
        })
    }

    pub fn config(&self) -> &RegisterConfig {
        &self.cfg
    }

    pub fn frame(&self) -> &DerivedFrame {
        &self.frame
    }

    /// Dimension of the space this model acts on.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn dim_full(&self) -> usize {
        self.dims.iter().product()
    }

    /// Full-space indices of the kept basis states.
    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// `Omega(t) = drive_scale * E(t)`, rad/s per tesla.
    pub fn drive_scale(&self) -> f64 {
        self.drive_scale
    }

    /// Local indices of basis states with the electron in `|-1>`.
    pub fn minus_one_states(&self) -> Vec<usize> {
        let nuc_dim = self.dim_full() / 2;
        (0..self.dim()).filter(|&k| self.basis[k] >= nuc_dim).collect()
    }

    /// Static part (the zero-drive Hamiltonian), diagonal.
    pub fn static_diagonal(&self) -> &[f64] {
        &self.static_diag
    }

    /// Writes `H(t)` for envelope value `envelope` (tesla) into `out`.
    pub fn fill_hamiltonian(&self, t: f64, envelope: f64, out: &mut CMat) {
        let dim = self.dim();
        debug_assert_eq!(out.nrows(), dim);
        out.fill(C64::new(0.0, 0.0));
        for (k, d) in self.static_diag.iter().enumerate() {
            out[(k, k)] = C64::new(*d, 0.0);
        }
        let omega = self.drive_scale * envelope;
        if omega == 0.0 {
            return;
        }
        // The drive rotates at the bare carrier detuning; the configuration
        // dependence of the transition comes from the static P_-1 term only.
        // sigma_x cos + sigma_y sin puts exp(-i Delta t) on <0|.|-1>.
        let z = C64::from_polar(omega, -self.frame.carrier_detuning * t);
        for &(a, b) in &self.drive_pairs {
            out[(a, b)] += z;
            out[(b, a)] += z.conj();
        }
        let (s_e, c_e) = (self.frame.carrier_detuning * t).sin_cos();
        for c in &self.couplings {
            let (s_n, c_n) = (c.beat * t - c.azimuth).sin_cos();
            // electron factor -sin(Delta t) sigma_x + cos(Delta t) sigma_y
            let w = [omega * s_e * c_n, omega * s_e * s_n, -omega * c_e * c_n, -omega * c_e * s_n];
            for (op, weight) in [&c.xx, &c.xy, &c.yx, &c.yy].into_iter().zip(w) {
                if weight != 0.0 {
                    out.zip_apply(op, |o, v| *o += v * weight);
                }
            }
        }
    }

    pub fn hamiltonian(&self, t: f64, envelope: f64) -> CMat {
        let mut h = CMat::zeros(self.dim(), self.dim());
        self.fill_hamiltonian(t, envelope, &mut h);
        h
    }
}

/// `H(t)` for the drive's envelope at time `t`.
pub fn build_hamiltonian(t: f64, drive: &dyn Drive, model: &RegisterModel) -> Result<CMat> {
    let e = drive.envelope_at(t)?;
    Ok(model.hamiltonian(t, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Canonical,
    /// Conjugation by a Hadamard on logical qubit A (the electron).
    HadamardOnA,
}

impl FrameKind {
    pub fn name(&self) -> &'static str {
        match self {
            FrameKind::Canonical => "canonical",
            FrameKind::HadamardOnA => "hadamard_a",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(FrameKind::Canonical),
            "hadamard_a" | "hadamard_on_a" => Ok(FrameKind::HadamardOnA),
            other => Err(Error::Parse(format!("unknown frame `{other}`"))),
        }
    }
}

/// Logical basis vectors inside a model's basis plus the analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalFrame {
    pub kind: FrameKind,
    pub qubits: usize,
    /// Local model index of each logical basis state, logical index order.
    pub embedding: Vec<usize>,
}

impl LogicalFrame {
    /// Logical qubits are the electron (`|0>`, `|-1>`) followed by the qubit
    /// nuclei (`m = +1/2`, `-1/2`); spectators stay in their fixed level.
    pub fn for_model(model: &RegisterModel, kind: FrameKind) -> Result<Self> {
        let cfg = model.config();
        let qubits = cfg.logical_qubits();
        let mut embedding = Vec::with_capacity(1 << qubits);
        for x in 0..1usize << qubits {
            let bit = |q: usize| (x >> (qubits - 1 - q)) & 1;
            let mut full = bit(0);
            let mut next_qubit = 1;
            for nuc in &cfg.nuclei {
                let level = match nuc.role {
                    NuclearRole::Spectator { m } => (nuc.spin() - m).round() as usize,
                    NuclearRole::Qubit => {
                        let b = bit(next_qubit);
                        next_qubit += 1;
                        b
                    }
                };
                full = full * nuc.dim() + level;
            }
            let local = model
                .basis()
                .iter()
                .position(|&b| b == full)
                .ok_or(Error::Embedding(1.0))?;
            embedding.push(local);
        }
        Ok(LogicalFrame { kind, qubits, embedding })
    }

    /// Deviation of the embedding columns from orthonormality.
    pub fn orthonormality_deviation(&self, dim: usize) -> f64 {
        let mut seen = vec![false; dim];
        for &e in &self.embedding {
            if e >= dim || seen[e] {
                return 1.0;
            }
            seen[e] = true;
        }
        0.0
    }
}

/// `U_L = E^dagger U E` and `leakage = 1 - Tr(U_L^dagger U_L) / d_L`.
pub fn logical_block(u_full: &CMat, frame: &LogicalFrame) -> Result<(CMat, f64)> {
    let dev = frame.orthonormality_deviation(u_full.nrows());
    if dev > 0.0 {
        return Err(Error::Embedding(dev));
    }
    let e = &frame.embedding;
    let u_l = CMat::from_fn(e.len(), e.len(), |r, c| u_full[(e[r], e[c])]);
    let norm: f64 = u_l.iter().map(|z| z.norm_sqr()).sum();
    let leakage = (1.0 - norm / e.len() as f64).clamp(0.0, 1.0);
    Ok((u_l, leakage))
}

/// Hadamard on the most significant logical qubit.
pub fn hadamard_on_first(qubits: usize) -> CMat {
    let mut ops = vec![crate::linalg::hadamard()];
    ops.extend((1..qubits).map(|_| identity(2)));
    kron_all(&ops)
}

/// Applies the frame conjugation to a logical block.
pub fn apply_frame(u_l: &CMat, kind: FrameKind) -> CMat {
    match kind {
        FrameKind::Canonical => u_l.clone(),
        FrameKind::HadamardOnA => {
            let qubits = u_l.nrows().trailing_zeros() as usize;
            let h = hadamard_on_first(qubits);
            &h * u_l * &h
        }
    }
}

/// Diagonal phases of the framed logical block and the largest off-diagonal
/// magnitude. Phases are principal values in `(-pi, pi]`.
pub fn framed_diagonal_phases(u_l: &CMat, kind: FrameKind) -> Result<(PhaseMap, f64)> {
    let d = u_l.nrows();
    if !d.is_power_of_two() || u_l.ncols() != d {
        return Err(Error::Dimension { expected: d.next_power_of_two(), got: d });
    }
    let framed = apply_frame(u_l, kind);
    let mut phases = Vec::with_capacity(d);
    let mut off = 0.0f64;
    for r in 0..d {
        for c in 0..d {
            let z = framed[(r, c)];
            if r == c {
                if z.norm() < 1e-6 {
                    return Err(Error::IllConditioned { index: r, magnitude: z.norm() });
                }
                phases.push(z.arg());
            } else {
                off = off.max(z.norm());
            }
        }
    }
    Ok((PhaseMap::new(d.trailing_zeros() as usize, phases)?, off))
}

/// Diagonal unitary `diag(exp(i phi(x)))`.
pub fn diagonal_unitary(phi: &PhaseMap) -> CMat {
    let v = phi.values();
    CMat::from_fn(v.len(), v.len(), |r, c| if r == c { C64::from_polar(1.0, v[r]) } else { C64::new(0.0, 0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_hermitian, hermiticity_deviation, kron, max_abs_diff, pauli_z};
    use crate::pulse::{PulseParams, Tone, ZeroDrive};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> RegisterModel {
        RegisterModel::new(&RegisterConfig::default(), 0.0).unwrap()
    }

    // plug-in oracle, written out independently of derive_frame
    fn oracle(a_zz_mhz: f64, a_perp_mhz: f64, gamma_mhz_t: f64) -> (f64, f64) {
        let lon = a_zz_mhz + gamma_mhz_t * 0.45;
        ((lon * lon + a_perp_mhz * a_perp_mhz).sqrt(), (a_perp_mhz / lon).atan())
    }

    #[test]
    fn derived_frame_table_values() {
        let f = derive_frame(&RegisterConfig::default(), 0.0).unwrap();
        let (w1, th1) = oracle(2.281, 0.240, 10.71);
        assert!((w1 - 7.1045).abs() < 1e-4);
        assert!((th1 - 0.03379).abs() < 1e-5);
        assert!((f.nuclei[1].omega / TAU / 1e6 - w1).abs() / w1 < 1e-12);
        assert!((f.nuclei[1].theta - th1).abs() < 1e-12);
        let (w2, _) = oracle(-1.011, 0.014, 10.71);
        assert!((w2 - 3.8085).abs() < 1e-4);
        assert!((f.nuclei[2].omega / TAU / 1e6 - w2).abs() / w2 < 1e-12);
        assert_eq!(f.nuclei[0].theta, 0.0);
        assert!(f.nuclei.iter().all(|n| n.theta <= 0.04));
        assert_eq!(f.configs.len(), 12);
        assert_eq!(f.detunings[f.resonant_config], 0.0);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let mut cfg = RegisterConfig::default();
        cfg.nuclei[0].a_zz = -cfg.nuclei[0].gamma * cfg.b0;
        assert!(matches!(derive_frame(&cfg, 0.0), Err(Error::DegenerateAngle(_))));
    }

    #[test]
    fn lambda_differences_follow_flipped_spins() {
        let f = derive_frame(&RegisterConfig::default(), 0.0).unwrap();
        for (a, ma) in f.configs.iter().enumerate() {
            for (b, mb) in f.configs.iter().enumerate() {
                let expect: f64 = -ma
                    .iter()
                    .zip(mb)
                    .zip(&f.nuclei)
                    .map(|((x, y), n)| (x - y) * (n.larmor - n.omega))
                    .sum::<f64>();
                let got = f.lambda_offset[a] - f.lambda_offset[b];
                assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_envelope_gives_static_term() {
        let m = model();
        let h = build_hamiltonian(3e-7, &ZeroDrive(1e-6), &m).unwrap();
        assert_eq!(m.dim(), 24);
        for r in 0..24 {
            for c in 0..24 {
                let expect = if r == c { m.static_diagonal()[r] } else { 0.0 };
                assert_eq!(h[(r, c)], C64::new(expect, 0.0));
            }
        }
        // P_{-1} (x) -(omega_C1 - gamma B0) I'z for C1 up, others at index 0
        let f = m.frame();
        let expect = -(f.nuclei[0].omega - f.nuclei[0].larmor)
            - 0.5 * (f.nuclei[1].omega - f.nuclei[1].larmor)
            - 0.5 * (f.nuclei[2].omega - f.nuclei[2].larmor);
        assert!((m.static_diagonal()[12] - expect).abs() < 1e-6);
        assert!(m.static_diagonal()[..12].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn resonant_block_is_sigma_x() {
        let mut cfg = RegisterConfig::default();
        for n in &mut cfg.nuclei {
            n.a_perp = 0.0;
        }
        let m = RegisterModel::new(&cfg, 0.0).unwrap();
        let e = 1e-4;
        // times where the carrier phase Delta_e t is a whole number of turns
        let t = 3.0 * TAU / m.frame().carrier_detuning.abs();
        let h = m.hamiltonian(t, e);
        let r = m.frame().resonant_config;
        let omega = m.drive_scale() * e;
        assert!((h[(r, 12 + r)] - C64::new(omega, 0.0)).norm() < 1e-9 * omega);
        assert!((h[(12 + r, r)] - C64::new(omega, 0.0)).norm() < 1e-9 * omega);
    }

    #[test]
    fn hamiltonian_hermitian_and_linear_in_drive() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = rng.gen_range(0.0..1.5e-6);
            let e = rng.gen_range(-5e-3..5e-3);
            let h = m.hamiltonian(t, e);
            assert!(hermiticity_deviation(&h) <= 1e-12 * 1e9);
            let scale = 1.0 / m.drive_scale() / 5e-3;
            assert!(hermiticity_deviation(&h) * scale <= 1e-12);

            let h0 = m.hamiltonian(t, 0.0);
            let h2 = m.hamiltonian(t, 2.0 * e);
            let lin = (&h2 - &h0) - (&h - &h0) * C64::new(2.0, 0.0);
            assert!(lin.iter().map(|z| z.norm()).fold(0.0, f64::max) * scale < 1e-12);
        }
        let p = PulseParams::new(vec![Tone { amplitude: 1e-4, frequency: 0.0, phase: 0.0 }], 1e-6, 0.1).unwrap();
        assert!(build_hamiltonian(2e-6, &p, &m).is_err());
    }

    #[test]
    fn sector_matches_full_block() {
        let full = model();
        let sector = full.spectator_sector().unwrap();
        assert_eq!(sector.dim(), 8);
        let h_full = full.hamiltonian(4.1e-7, 2e-4);
        let h_sec = sector.hamiltonian(4.1e-7, 2e-4);
        for (r, &fr) in sector.basis().iter().enumerate() {
            for (c, &fc) in sector.basis().iter().enumerate() {
                assert_eq!(h_sec[(r, c)], h_full[(fr, fc)]);
            }
        }
        let lf = LogicalFrame::for_model(&sector, FrameKind::Canonical).unwrap();
        assert_eq!(lf.embedding, (0..8).collect::<Vec<_>>());
        let lf_full = LogicalFrame::for_model(&full, FrameKind::Canonical).unwrap();
        assert_eq!(lf_full.embedding, vec![0, 1, 2, 3, 12, 13, 14, 15]);
    }

    #[test]
    fn logical_block_examples() {
        let full = model();
        let lf = LogicalFrame::for_model(&full, FrameKind::Canonical).unwrap();
        let (u_l, leak) = logical_block(&identity(24), &lf).unwrap();
        assert!(max_abs_diff(&u_l, &identity(8)) == 0.0);
        assert_eq!(leak, 0.0);

        // swap logical |000> (full index 0) with a spectator state (index 4)
        let mut swap = identity(24);
        swap.swap_rows(0, 4);
        let (_, leak) = logical_block(&swap, &lf).unwrap();
        assert!((leak - 1.0 / 8.0).abs() < 1e-15);

        let bad = LogicalFrame { kind: FrameKind::Canonical, qubits: 3, embedding: vec![0, 0, 1, 2, 3, 4, 5, 6] };
        assert!(matches!(logical_block(&identity(24), &bad), Err(Error::Embedding(_))));
    }

    #[test]
    fn framed_phase_examples() {
        let zzz = kron(&kron(&pauli_z(), &pauli_z()), &pauli_z());
        let u = expm_hermitian(&zzz, -std::f64::consts::FRAC_PI_4);
        let (phi, off) = framed_diagonal_phases(&u, FrameKind::Canonical).unwrap();
        for x in 0..8usize {
            let s = if x.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            assert!((phi.get(x) - s * PI / 4.0).abs() < 1e-12);
        }
        assert!(off < 1e-15);

        let (phi, off) = framed_diagonal_phases(&identity(8), FrameKind::Canonical).unwrap();
        assert!(phi.values().iter().all(|v| *v == 0.0) && off == 0.0);

        let xzz = kron(&kron(&pauli_x(), &pauli_z()), &pauli_z());
        let u = expm_hermitian(&xzz, PI / 4.0);
        let framed = apply_frame(&u, FrameKind::HadamardOnA);
        let expect = expm_hermitian(&zzz, PI / 4.0);
        assert!(max_abs_diff(&framed, &expect) < 1e-14);
        let (_, off) = framed_diagonal_phases(&u, FrameKind::HadamardOnA).unwrap();
        assert!(off < 1e-14);

        let x = kron(&kron(&pauli_x(), &identity(2)), &identity(2));
        assert!(matches!(
            framed_diagonal_phases(&x, FrameKind::Canonical),
            Err(Error::IllConditioned { index: 0, .. })
        ));
    }

    #[test]
    fn diagonal_construction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let phi = PhaseMap::from_fn(3, |_| rng.gen_range(-10.0..10.0)).unwrap();
            let (back, _) = framed_diagonal_phases(&diagonal_unitary(&phi), FrameKind::Canonical).unwrap();
            for (a, b) in phi.values().iter().zip(back.values()) {
                let d = (a - b).rem_euclid(TAU);
                assert!(d.min(TAU - d) < 1e-12);
            }
        }
    }
}
