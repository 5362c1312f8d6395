//! Configuration-selective starting points for the multi-tone search.
//!
//! When the target acts on the electron conditioned on the nuclear
//! configuration, each configuration `j` owns a 2x2 electron block of the
//! logical propagator. Up to the local correction and the determinant fixed
//! by the static energies, the block the pulse must produce is known in
//! closed form. One tone per block is fitted on that block alone, ignoring
//! cross-talk, and the fitted tones seed the full search.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{CMat, C64};
use crate::nvmodel::{FrameKind, LogicalFrame, RegisterModel};
use crate::objective::TargetSpec;
use crate::pulse::{window_unchecked, Tone};
use crate::search::{cmaes, Coordinate, MinimizeOptions};

/// Rotations below this angle (rad) leave a block undriven.
const IDLE_ANGLE: f64 = 0.05;
const THETA_STEPS: usize = 720;
const FIT_STEP: f64 = 2e-9;
const FIT_BUDGET: usize = 900;

type Mat2 = [[C64; 2]; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

/// `exp(-i H tau)` for Hermitian 2x2 `H`.
fn expm2(h: &Mat2, tau: f64) -> Mat2 {
    let h0 = 0.5 * (h[0][0].re + h[1][1].re);
    let hz = 0.5 * (h[0][0].re - h[1][1].re);
    let b = h[0][1];
    let norm = (hz * hz + b.norm_sqr()).sqrt();
    let (s, c) = (norm * tau).sin_cos();
    let sinc = if norm > 0.0 { s / norm } else { tau };
    let g = C64::from_polar(1.0, -h0 * tau);
    let mi = C64::new(0.0, -1.0);
    [
        [g * (C64::new(c, 0.0) + mi * sinc * hz), g * mi * sinc * b],
        [g * mi * sinc * b.conj(), g * (C64::new(c, 0.0) - mi * sinc * hz)],
    ]
}

/// Rotation angle in `[0, 2 pi]` of an SU(2) element.
fn rotation_angle(v: &Mat2) -> f64 {
    let tr = (v[0][0] + v[1][1]).re;
    2.0 * (0.5 * tr).clamp(-1.0, 1.0).acos()
}

/// Block the pulse must reach in one configuration.
#[derive(Debug, Clone)]
pub struct BlockTarget {
    /// Nuclear configuration index (low logical bits).
    pub config: usize,
    /// Model indices of the electron `|0>` and `|-1>` states.
    pub states: [usize; 2],
    /// Required block propagator, static evolution included.
    pub target: [[C64; 2]; 2],
    /// Rotation the drive must add to the static evolution.
    pub angle: f64,
}

#[derive(Debug, Clone)]
pub struct SelectivePlan {
    /// Free angle of the local electron correction.
    pub theta: f64,
    /// Total rotation over all blocks.
    pub effort: f64,
    pub blocks: Vec<BlockTarget>,
}

/// Candidate plans, least effort first, one per sign pattern of the
/// configuration phases. `None` when the target is not block diagonal in the
/// nuclear configurations.
pub fn plans(target: &TargetSpec, kind: FrameKind, model: &RegisterModel, frame: &LogicalFrame, duration: f64) -> Option<Vec<SelectivePlan>> {
    let n = frame.qubits;
    if n < 2 {
        return None;
    }
    let half = 1usize << (n - 1);
    let u_t = target.target_unitary(kind);
    for r in 0..2 * half {
        for c in 0..2 * half {
            if r % half != c % half && u_t[(r, c)].norm() > 1e-9 {
                return None;
            }
        }
    }
    let stat = model.static_diagonal();
    let blocks: Vec<([usize; 2], Mat2, [f64; 2])> = (0..half)
        .map(|j| {
            let states = [frame.embedding[j], frame.embedding[half + j]];
            let ut = [[u_t[(j, j)], u_t[(j, half + j)]], [u_t[(half + j, j)], u_t[(half + j, half + j)]]];
            (states, ut, [stat[states[0]], stat[states[1]]])
        })
        .collect();
    let local = |theta: f64| -> Mat2 {
        let (s, c) = theta.sin_cos();
        let (c, s) = (C64::new(c, 0.0), C64::new(0.0, s));
        let zero = C64::new(0.0, 0.0);
        match kind {
            FrameKind::Canonical => [[c + s, zero], [zero, c - s]],
            FrameKind::HadamardOnA => [[c, s], [s, c]],
        }
    };

    // sign patterns: affine functions of the nuclear bits mod 2
    let patterns = 1usize << n;
    let mut out = Vec::with_capacity(patterns);
    for pattern in 0..patterns {
        let sign = |j: usize| -> f64 {
            let bits = (pattern & 1) + ((pattern >> 1) & j).count_ones() as usize;
            if bits % 2 == 0 { 0.0 } else { PI }
        };
        let mut best: Option<SelectivePlan> = None;
        for k in 0..THETA_STEPS {
            let theta = PI * k as f64 / THETA_STEPS as f64;
            let l = local(theta);
            let mut effort = 0.0;
            let mut targets = Vec::with_capacity(half);
            for (j, (states, ut, e)) in blocks.iter().enumerate() {
                // det of the block is fixed by the static energies
                let scalar = C64::from_polar(1.0, -0.5 * duration * (e[0] + e[1]) + sign(j));
                let w = mul(&l, ut);
                let w = [[w[0][0] * scalar, w[0][1] * scalar], [w[1][0] * scalar, w[1][1] * scalar]];
                let inv_static = [C64::from_polar(1.0, duration * e[0]), C64::from_polar(1.0, duration * e[1])];
                let v = [[inv_static[0] * w[0][0], inv_static[0] * w[0][1]], [inv_static[1] * w[1][0], inv_static[1] * w[1][1]]];
                let angle = rotation_angle(&v);
                effort += angle;
                targets.push(BlockTarget { config: j, states: *states, target: w, angle });
            }
            if best.as_ref().map_or(true, |b| effort < b.effort) {
                best = Some(SelectivePlan { theta, effort, blocks: targets });
            }
        }
        out.extend(best);
    }
    out.sort_by(|a, b| a.effort.total_cmp(&b.effort));
    Some(out)
}

/// Block propagator for a single windowed tone, off-block couplings dropped.
fn block_propagator(model: &RegisterModel, states: [usize; 2], tone: Tone, duration: f64, taper: f64) -> Mat2 {
    let steps = (duration / FIT_STEP).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let mut h = CMat::zeros(model.dim(), model.dim());
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let mut u: Mat2 = [[one, zero], [zero, one]];
    for k in 0..steps {
        let t = (k as f64 + 0.5) * dt;
        let e = window_unchecked(t, duration, taper) * tone.amplitude * (tone.frequency * t + tone.phase).cos();
        model.fill_hamiltonian(t, e, &mut h);
        let hb = [[h[(states[0], states[0])], h[(states[0], states[1])]], [h[(states[1], states[0])], h[(states[1], states[1])]]];
        u = mul(&expm2(&hb, dt), &u);
    }
    u
}

fn block_error(u: &Mat2, w: &Mat2) -> f64 {
    let mut s = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            s += (u[r][c] - w[r][c]).norm_sqr();
        }
    }
    s / 8.0
}

/// Fits one tone per driven block of `plan`; returns the tones and the
/// number of block evaluations spent.
pub fn fit_tones(
    plan: &SelectivePlan,
    model: &RegisterModel,
    duration: f64,
    taper: f64,
    amplitude_bound: f64,
    frequency_bound: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Tone>, usize) {
    let effective = duration * (1.0 - taper);
    let scale = model.drive_scale();
    let carrier = model.frame().carrier_detuning;
    let mut tones = Vec::new();
    let mut spent = 0;
    for block in plan.blocks.iter().filter(|b| b.angle > IDLE_ANGLE) {
        let stat = model.static_diagonal();
        let resonance = (carrier + stat[block.states[1]] - stat[block.states[0]]).abs();
        let amp_hi = amplitude_bound.min(3.0 * TAU / (scale * effective));
        let span = 2.0 * TAU / effective;
        let decode = |x: &[f64]| Tone {
            amplitude: amp_hi * x[0].clamp(0.0, 1.0),
            frequency: (resonance + span * (2.0 * x[1].clamp(0.0, 1.0) - 1.0)).clamp(-frequency_bound, frequency_bound),
            phase: TAU * x[2].rem_euclid(1.0),
        };
        let f = |x: &[f64]| block_error(&block_propagator(model, block.states, decode(x), duration, taper), &block.target);
        let coords = [Coordinate::Bounded, Coordinate::Bounded, Coordinate::Periodic];
        let opts = MinimizeOptions { budget: FIT_BUDGET, sigma0: 0.15, stop_below: 1e-8, threads: 1 };
        let guess = (block.angle / (scale * effective) / amp_hi).min(1.0);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in 0..4 {
            let x0 = [guess, 0.5 + 0.1 * rng.gen_range(-1.0..=1.0), 0.25 * start as f64];
            let run = cmaes(&f, &x0, &coords, &opts, rng);
            spent += run.evaluations;
            if best.as_ref().map_or(true, |b| run.value < b.0) {
                best = Some((run.value, run.x));
            }
        }
        let (_, x) = best.expect("four starts");
        tones.push(decode(&x));
    }
    (tones, spent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nvmodel::RegisterConfig;
    use rand::SeedableRng;

    fn sector() -> RegisterModel {
        RegisterModel::new(&RegisterConfig::default(), 0.0).unwrap().spectator_sector().unwrap()
    }

    #[test]
    fn expm2_matches_general_exponential() {
        let h: Mat2 = [[C64::new(0.3, 0.0), C64::new(0.2, -0.7)], [C64::new(0.2, 0.7), C64::new(-1.1, 0.0)]];
        let u = expm2(&h, 1.7);
        let big = CMat::from_fn(2, 2, |r, c| h[r][c]);
        let reference = crate::linalg::expm_hermitian_eigen(&big, 1.7);
        for r in 0..2 {
            for c in 0..2 {
                assert!((u[r][c] - reference[(r, c)]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_effort_only_when_static_evolution_is_the_target() {
        let m = sector();
        let frame = LogicalFrame::for_model(&m, FrameKind::Canonical).unwrap();
        let spec = TargetSpec::three_body_entangler();
        let plans = plans(&spec, FrameKind::Canonical, &m, &frame, 1.5e-6).unwrap();
        assert_eq!(plans.len(), 8);
        assert!(plans.windows(2).all(|w| w[0].effort <= w[1].effort));
        // the three-body phase cannot come from static evolution alone
        assert!(plans[0].effort > 1.0);
        assert_eq!(plans[0].blocks.len(), 4);
    }

    #[test]
    fn fitted_tone_reaches_its_block() {
        let m = sector();
        let frame = LogicalFrame::for_model(&m, FrameKind::Canonical).unwrap();
        let spec = TargetSpec::three_body_entangler();
        let plan = plans(&spec, FrameKind::Canonical, &m, &frame, 1.5e-6).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (tones, spent) = fit_tones(&plan, &m, 1.5e-6, 0.15, 3e-4, TAU * 5e6, &mut rng);
        assert!(spent > 0 && !tones.is_empty());
        let driven: Vec<&BlockTarget> = plan.blocks.iter().filter(|b| b.angle > IDLE_ANGLE).collect();
        let u = block_propagator(&m, driven[0].states, tones[0], 1.5e-6, 0.15);
        assert!(block_error(&u, &driven[0].target) < 1e-3, "{}", block_error(&u, &driven[0].target));
    }
}
