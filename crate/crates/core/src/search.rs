//! Pulse optimization against the composite invariant objective.
//!
//! Parameters are searched in normalized coordinates: amplitudes and tone
//! frequencies map their symmetric bounds onto `[0, 1]`, phases map `[0, 2pi)`
//! onto a periodic unit interval. The derivative-free method is a seeded
//! CMA-ES with batch-synchronous generations and independent restarts.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::invariants::{all_invariants, InvariantSet};
use crate::linalg::CMat;
use crate::nvmodel::{apply_frame, framed_diagonal_phases, logical_block, FrameKind, LogicalFrame, RegisterConfig, RegisterModel};
use crate::objective::{best_lift, cost, fidelity, local_correction, TargetSpec};
use crate::propagate::{propagate, TimeGrid};
use crate::pulse::{slew_penalty, Drive, PulseParams, Tone};
use crate::selective::{fit_tones, plans};
use crate::table::{fmt_f64, write_table};

/// Converts SI slew (T/s) squared into (mT/ns) squared.
const SLEW_UNIT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterBounds {
    /// `|a_i| <= amplitude`, tesla.
    pub amplitude: f64,
    /// `|omega_i| <= frequency`, rad/s.
    pub frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub leakage: f64,
    pub unitarity: f64,
    pub smoothness: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties { leakage: 10.0, unitarity: 10.0, smoothness: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DerivativeFree,
    FiniteDifferenceGradient,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::DerivativeFree => "derivative_free",
            Method::FiniteDifferenceGradient => "finite_difference_gradient",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "derivative_free" | "cmaes" => Ok(Method::DerivativeFree),
            "finite_difference_gradient" | "gradient" => Ok(Method::FiniteDifferenceGradient),
            other => Err(Error::Parse(format!("unknown search method `{other}`"))),
        }
    }
}

/// Where each restart begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Small random amplitudes, frequencies spread over the band.
    Random,
    /// One tone per configuration block fitted to the block the target
    /// requires (see [`crate::selective`]); restart `r` uses the `r`-th
    /// cheapest sign pattern.
    Selective,
}

impl Start {
    pub fn name(&self) -> &'static str {
        match self {
            Start::Random => "random",
            Start::Selective => "selective",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Start::Random),
            "selective" => Ok(Start::Selective),
            other => Err(Error::Parse(format!("unknown search start `{other}`"))),
        }
    }
}

/// Which form of the invariant cost enters the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostForm {
    /// `J` on the principal-branch phase map.
    Principal,
    /// `J` minimized over the `2pi` lifts of the phase map entries.
    Lifted,
}

impl CostForm {
    pub fn name(&self) -> &'static str {
        match self {
            CostForm::Principal => "principal",
            CostForm::Lifted => "lifted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "principal" => Ok(CostForm::Principal),
            "lifted" => Ok(CostForm::Lifted),
            other => Err(Error::Parse(format!("unknown cost form `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub register: RegisterConfig,
    pub target: TargetSpec,
    pub frame: FrameKind,
    /// Seconds.
    pub duration: f64,
    pub taper: f64,
    pub tones: usize,
    /// rad/s.
    pub carrier_offset: f64,
    pub bounds: ParameterBounds,
    /// Propagation step used while searching, seconds.
    pub dt: f64,
    /// Objective evaluations per restart.
    pub budget: usize,
    pub seed: u64,
    pub restarts: usize,
    pub penalties: Penalties,
    pub method: Method,
    pub cost_form: CostForm,
    pub start: Start,
    /// Concurrent evaluations; 0 lets the thread pool decide.
    pub threads: usize,
    pub stop_below: f64,
    /// Initial CMA-ES step size in normalized coordinates.
    pub sigma0: f64,
}

impl SearchSpec {
    /// Three-body entangler in the canonical frame, 1500 ns.
    pub fn zzz() -> Self {
        SearchSpec {
            register: RegisterConfig::default(),
            target: TargetSpec::three_body_entangler(),
            frame: FrameKind::Canonical,
            duration: 1500e-9,
            taper: 0.15,
            tones: 8,
            carrier_offset: 0.0,
            bounds: ParameterBounds { amplitude: 5e-3, frequency: TAU * 10e6 },
            dt: 1e-9,
            budget: 20_000,
            seed: 0,
            restarts: 4,
            penalties: Penalties::default(),
            method: Method::DerivativeFree,
            cost_form: CostForm::Lifted,
            start: Start::Random,
            threads: 0,
            stop_below: 1e-4,
            sigma0: 0.1,
        }
    }

    /// `X (x) Z (x) Z` entangler through the Hadamard frame on A, 1250 ns.
    pub fn xzz() -> Self {
        SearchSpec { frame: FrameKind::HadamardOnA, duration: 1250e-9, ..Self::zzz() }
    }

    pub fn validate(&self) -> Result<()> {
        self.register.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("duration", self.duration)?;
        positive("dt", self.dt)?;
        positive("amplitude bound", self.bounds.amplitude)?;
        positive("frequency bound", self.bounds.frequency)?;
        positive("sigma0", self.sigma0)?;
        if !(0.0..=1.0).contains(&self.taper) {
            return Err(Error::InvalidParameter(format!("taper {} outside [0, 1]", self.taper)));
        }
        if self.tones == 0 {
            return Err(Error::InvalidParameter("at least one tone is required".into()));
        }
        if self.budget == 0 {
            return Err(Error::InvalidParameter("budget must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        if self.target.n() != self.register.logical_qubits() {
            return Err(Error::Dimension { expected: self.register.logical_qubits(), got: self.target.n() });
        }
        let p = &self.penalties;
        if ![p.leakage, p.unitarity, p.smoothness].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidParameter("penalty weights must be finite and nonnegative".into()));
        }
        if !self.carrier_offset.is_finite() || !self.stop_below.is_finite() {
            return Err(Error::NonFinite("carrier offset or stopping threshold".into()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        3 * self.tones
    }

    /// Amplitudes and frequencies are boxed, phases wrap.
    pub fn coordinates(&self) -> Vec<Coordinate> {
        let mut c = vec![Coordinate::Bounded; 2 * self.tones];
        c.extend(std::iter::repeat(Coordinate::Periodic).take(self.tones));
        c
    }

    /// Normalized coordinates of `p` (layout: amplitudes, frequencies, phases).
    pub fn encode(&self, p: &PulseParams) -> Vec<f64> {
        let b = &self.bounds;
        let mut x: Vec<f64> = p.tones.iter().map(|t| 0.5 * (t.amplitude / b.amplitude + 1.0)).collect();
        x.extend(p.tones.iter().map(|t| 0.5 * (t.frequency / b.frequency + 1.0)));
        x.extend(p.tones.iter().map(|t| t.phase.rem_euclid(TAU) / TAU));
        x
    }

    /// Inverse of [`encode`](Self::encode), clamping bounded coordinates and
    /// wrapping phases.
    pub fn decode(&self, x: &[f64]) -> Result<PulseParams> {
        if x.len() != self.dimension() {
            return Err(Error::Dimension { expected: self.dimension(), got: x.len() });
        }
        let n = self.tones;
        let b = &self.bounds;
        let tones = (0..n)
            .map(|i| Tone {
                amplitude: b.amplitude * (2.0 * x[i].clamp(0.0, 1.0) - 1.0),
                frequency: b.frequency * (2.0 * x[n + i].clamp(0.0, 1.0) - 1.0),
                phase: TAU * x[2 * n + i].rem_euclid(1.0),
            })
            .collect();
        let mut p = PulseParams::new(tones, self.duration, self.taper)?;
        p.carrier_offset = self.carrier_offset;
        Ok(p)
    }

    pub fn in_bounds(&self, p: &PulseParams) -> bool {
        let slack = 1.0 + 1e-12;
        p.tones.len() == self.tones
            && p.tones.iter().all(|t| {
                t.amplitude.abs() <= self.bounds.amplitude * slack
                    && t.frequency.abs() <= self.bounds.frequency * slack
                    && t.phase.is_finite()
            })
    }

    /// Random start: amplitudes within 10% of the bound, frequencies spread
    /// over the band with jitter inside each slot, uniform phases.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.tones;
        let mut x = Vec::with_capacity(3 * n);
        for _ in 0..n {
            x.push(0.5 + 0.05 * rng.gen_range(-1.0..=1.0));
        }
        for i in 0..n {
            x.push((i as f64 + rng.gen_range(0.0..1.0)) / n as f64);
        }
        for _ in 0..n {
            x.push(rng.gen_range(0.0..1.0));
        }
        x
    }

    /// Random start with its leading tones replaced by `seeded`.
    fn seeded_point(&self, seeded: &[Tone], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.tones;
        let mut x = self.initial_point(rng);
        let b = &self.bounds;
        for (i, t) in seeded.iter().take(n).enumerate() {
            x[i] = 0.5 * (t.amplitude.clamp(-b.amplitude, b.amplitude) / b.amplitude + 1.0);
            x[n + i] = 0.5 * (t.frequency.clamp(-b.frequency, b.frequency) / b.frequency + 1.0);
            x[2 * n + i] = t.phase.rem_euclid(TAU) / TAU;
        }
        x
    }
}

/// Objective value and the diagnostics that produced it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub composite: f64,
    pub cost: f64,
    /// Cost of the most favourable lift of the phase map.
    pub cost_lifted: f64,
    pub leakage: f64,
    /// `1 - Tr(D^dagger D) / d_L` for the diagonal part `D` of the framed
    /// logical block: how far the phase map is from describing the block.
    pub nonunitarity: f64,
    /// Mean squared envelope slope, (mT/ns)^2.
    pub slew: f64,
    /// Fidelity with the target after the local correction.
    pub fidelity: f64,
    pub fidelity_uncorrected: f64,
    pub off_diagonal: f64,
    pub invariants: Option<InvariantSet>,
    /// Invariants of the minimizing lift, each defined mod `pi`.
    pub invariants_lifted: Option<InvariantSet>,
    pub logical: Option<CMat>,
    /// Set when propagation or phase extraction failed; `composite` is then
    /// infinite.
    pub failure: Option<String>,
}

impl Evaluation {
    fn failed(reason: String) -> Self {
        Evaluation {
            composite: f64::INFINITY,
            cost: f64::INFINITY,
            cost_lifted: f64::INFINITY,
            leakage: f64::NAN,
            nonunitarity: f64::NAN,
            slew: f64::NAN,
            fidelity: 0.0,
            fidelity_uncorrected: 0.0,
            off_diagonal: f64::NAN,
            invariants: None,
            invariants_lifted: None,
            logical: None,
            failure: Some(reason),
        }
    }
}

/// `1 - sum_x |F_xx|^2 / d` for the framed block `F`.
pub fn diagonal_nonunitarity(u_l: &CMat, kind: FrameKind) -> f64 {
    let framed = apply_frame(u_l, kind);
    let d = framed.nrows();
    (1.0 - (0..d).map(|x| framed[(x, x)].norm_sqr()).sum::<f64>() / d as f64).max(0.0)
}

/// Shared read-only state for repeated objective evaluations.
#[derive(Debug, Clone)]
pub struct Evaluator {
    spec: SearchSpec,
    model: RegisterModel,
    frame: LogicalFrame,
    grid: TimeGrid,
    nodes: Vec<f64>,
    target: CMat,
}

impl Evaluator {
    /// Uses the spectator sector of the register when it is closed under the
    /// dynamics, the full register otherwise.
    pub fn new(spec: &SearchSpec) -> Result<Self> {
        spec.validate()?;
        let full = RegisterModel::new(&spec.register, spec.carrier_offset)?;
        let model = full.spectator_sector().unwrap_or(full);
        let frame = LogicalFrame::for_model(&model, spec.frame)?;
        let grid = TimeGrid::with_step(spec.duration, spec.dt)?;
        let nodes = (0..=grid.steps()).map(|k| grid.time(k)).collect();
        Ok(Evaluator {
            target: spec.target.target_unitary(spec.frame),
            spec: spec.clone(),
            model,
            frame,
            grid,
            nodes,
        })
    }

    pub fn spec(&self) -> &SearchSpec {
        &self.spec
    }

    pub fn model(&self) -> &RegisterModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn target_unitary(&self) -> &CMat {
        &self.target
    }

    /// Composite objective for an in-bounds parameter set.
    pub fn evaluate(&self, p: &PulseParams) -> Result<Evaluation> {
        if !self.spec.in_bounds(p) {
            return Err(Error::InvalidParameter("pulse parameters outside search bounds".into()));
        }
        Ok(self.evaluate_drive(p))
    }

    /// Composite objective for any envelope with the spec's duration.
    pub fn evaluate_drive(&self, drive: &dyn Drive) -> Evaluation {
        match self.try_evaluate(drive) {
            Ok(e) => e,
            Err(err) => Evaluation::failed(err.to_string()),
        }
    }

    fn try_evaluate(&self, drive: &dyn Drive) -> Result<Evaluation> {
        if (drive.duration() - self.grid.duration()).abs() > 1e-12 * self.grid.duration() {
            return Err(Error::InvalidParameter(format!(
                "drive lasts {:e} s, search grid {:e} s",
                drive.duration(),
                self.grid.duration()
            )));
        }
        let u = propagate(drive, &self.model, &self.grid)?;
        let (u_l, leakage) = logical_block(&u, &self.frame)?;
        let nonunitarity = diagonal_nonunitarity(&u_l, self.spec.frame);
        let (phi, off_diagonal) = framed_diagonal_phases(&u_l, self.spec.frame)?;
        let inv = all_invariants(&phi);
        let j = cost(&inv, &self.spec.target)?;
        let slew = slew_penalty(drive, &self.nodes)? * SLEW_UNIT;
        let pen = &self.spec.penalties;
        let (jl, lifted) = match best_lift(&inv, &self.spec.target) {
            Ok(b) => b,
            Err(_) => (j, inv.clone()),
        };
        // the local correction must come from the same lift as the cost
        let (jx, used) = match self.spec.cost_form {
            CostForm::Principal => (j, &inv),
            CostForm::Lifted => (jl, &lifted),
        };
        let corrected = local_correction(used, self.spec.frame)? * &u_l;
        let composite = jx + pen.leakage * leakage + pen.unitarity * nonunitarity + pen.smoothness * slew;
        Ok(Evaluation {
            composite,
            cost: j,
            cost_lifted: jl,
            leakage,
            nonunitarity,
            slew,
            fidelity: fidelity(&self.target, &corrected)?,
            fidelity_uncorrected: fidelity(&self.target, &u_l)?,
            off_diagonal,
            invariants_lifted: Some(lifted),
            invariants: Some(inv),
            logical: Some(u_l),
            failure: None,
        })
    }

    /// Composite value at a normalized point; infinite if decoding or
    /// propagation fails.
    pub fn objective(&self, x: &[f64]) -> f64 {
        match self.spec.decode(x) {
            Ok(p) => self.evaluate_drive(&p).composite,
            Err(_) => f64::INFINITY,
        }
    }
}

/// How a search (or one restart) ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    BudgetExhausted,
    TargetReached,
    Stagnated,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::TargetReached => "target_reached",
            Termination::Stagnated => "stagnated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    /// Clamped to `[0, 1]`.
    Bounded,
    /// Wraps with period 1.
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    pub budget: usize,
    pub sigma0: f64,
    pub stop_below: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// `(evaluations so far, best so far)` after every generation.
    pub history: Vec<(usize, f64)>,
    pub termination: Termination,
}

fn repair(x: &mut [f64], coords: &[Coordinate]) {
    for (v, c) in x.iter_mut().zip(coords) {
        if *c == Coordinate::Bounded {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

fn thread_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

/// Seeded CMA-ES on normalized coordinates starting from `x0`.
pub fn cmaes(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    coords: &[Coordinate],
    opts: &MinimizeOptions,
    rng: &mut ChaCha8Rng,
) -> Minimum {
    let n = x0.len();
    let nf = n as f64;
    let lambda = 4 + (3.0 * nf.ln()).floor() as usize;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let pool = thread_pool(opts.threads);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = opts.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);

    let mut x0r = x0.to_vec();
    repair(&mut x0r, coords);
    let mut best_x = x0r.clone();
    let mut best = f(&x0r);
    let mut evaluations = 1;
    let mut history = vec![(evaluations, best)];
    let mut generation = 0usize;
    let mut stale = 0usize;

    let termination = loop {
        if best < opts.stop_below {
            break Termination::TargetReached;
        }
        if evaluations >= opts.budget {
            break Termination::BudgetExhausted;
        }
        let batch = lambda.min(opts.budget - evaluations);
        let points: Vec<Vec<f64>> = (0..batch)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &basis * z.component_mul(&scales);
                let mut x: Vec<f64> = (&mean + y * sigma).iter().copied().collect();
                repair(&mut x, coords);
                x
            })
            .collect();
        let values: Vec<f64> = pool.install(|| points.par_iter().map(|x| f(x)).collect());
        evaluations += batch;
        let mut order: Vec<usize> = (0..batch).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        if values[order[0]] < best {
            best = values[order[0]];
            best_x = points[order[0]].clone();
            stale = 0;
        } else {
            stale += 1;
        }
        history.push((evaluations, best));
        if batch < lambda {
            continue;
        }

        let old_mean = mean.clone();
        let steps: Vec<DVector<f64>> = order[..mu]
            .iter()
            .map(|&k| (DVector::from_column_slice(&points[k]) - &old_mean) / sigma)
            .collect();
        let y_w = steps.iter().zip(&weights).fold(DVector::zeros(n), |acc, (y, w)| acc + y * *w);
        mean = &old_mean + &y_w * sigma;

        let inv_sqrt = &basis * DMatrix::from_diagonal(&scales.map(|d| 1.0 / d)) * basis.transpose();
        p_sigma = &p_sigma * (1.0 - c_sigma) + (&inv_sqrt * &y_w) * (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt();
        generation += 1;
        let norm_ps = p_sigma.norm();
        let h_sigma = norm_ps / (1.0 - (1.0 - c_sigma).powi(2 * generation as i32)).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        p_c = &p_c * (1.0 - c_c) + &y_w * (h * (c_c * (2.0 - c_c) * mu_eff).sqrt());
        let rank_mu = steps
            .iter()
            .zip(&weights)
            .fold(DMatrix::zeros(n, n), |acc, (y, w)| acc + y * y.transpose() * *w);
        cov = &cov * (1.0 - c_1 - c_mu)
            + (&p_c * p_c.transpose() + &cov * ((1.0 - h) * c_c * (2.0 - c_c))) * c_1
            + rank_mu * c_mu;
        sigma *= ((c_sigma / d_sigma) * (norm_ps / chi_n - 1.0)).exp();

        cov = (&cov + cov.transpose()) * 0.5;
        let eig = cov.clone().symmetric_eigen();
        basis = eig.eigenvectors;
        scales = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());

        let spread = sigma * scales.max();
        if spread < 1e-10 || stale > 200 + 30 * n / lambda {
            break Termination::Stagnated;
        }
    };
    Minimum { x: best_x, value: best, evaluations, history, termination }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS on central finite-difference gradients, with
/// backtracking line search and projection onto the box.
pub fn fd_descent(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    coords: &[Coordinate],
    opts: &MinimizeOptions,
) -> Minimum {
    const MEMORY: usize = 8;
    let n = x0.len();
    let pool = thread_pool(opts.threads);
    let h = 1e-6;
    let gradient = |x: &[f64]| -> Vec<f64> {
        let probes: Vec<f64> = pool.install(|| {
            (0..2 * n)
                .into_par_iter()
                .map(|k| {
                    let mut p = x.to_vec();
                    p[k / 2] += if k % 2 == 0 { h } else { -h };
                    f(&p)
                })
                .collect()
        });
        (0..n).map(|i| (probes[2 * i] - probes[2 * i + 1]) / (2.0 * h)).collect()
    };

    let mut x = x0.to_vec();
    repair(&mut x, coords);
    let mut value = f(&x);
    let mut evaluations = 1;
    let mut history = vec![(evaluations, value)];
    let mut memory: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut grad = gradient(&x);
    evaluations += 2 * n;
    let termination = loop {
        if value < opts.stop_below {
            break Termination::TargetReached;
        }
        let gnorm = dot(&grad, &grad).sqrt();
        if !gnorm.is_finite() || gnorm == 0.0 {
            break Termination::Stagnated;
        }

        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let scale = match memory.last() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => opts.sigma0 / gnorm,
        };
        q.iter_mut().for_each(|v| *v *= scale);
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&direction, &grad) >= 0.0 {
            memory.clear();
            direction = grad.iter().map(|g| -g * opts.sigma0 / gnorm).collect();
        }
        let slope = dot(&direction, &grad);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            if evaluations + 1 > opts.budget {
                break;
            }
            let mut trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, d)| xi + step * d).collect();
            repair(&mut trial, coords);
            let v = f(&trial);
            evaluations += 1;
            if v <= value + 1e-4 * step * slope {
                accepted = Some((trial, v));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, v)) = accepted else {
            if evaluations + 1 > opts.budget {
                break Termination::BudgetExhausted;
            }
            if memory.is_empty() {
                break Termination::Stagnated;
            }
            memory.clear();
            continue;
        };
        if evaluations + 2 * n > opts.budget {
            x = trial;
            value = v;
            history.push((evaluations, value));
            break Termination::BudgetExhausted;
        }
        let next = gradient(&trial);
        evaluations += 2 * n;
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(1e-300) {
            memory.push((s, y, 1.0 / sy));
            if memory.len() > MEMORY {
                memory.remove(0);
            }
        }
        let improvement = value - v;
        x = trial;
        value = v;
        grad = next;
        history.push((evaluations, value));
        if improvement <= 1e-15 * value.abs().max(1e-300) && memory.is_empty() {
            break Termination::Stagnated;
        }
    };
    Minimum { x, value, evaluations, history, termination }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub restart: usize,
    pub best: f64,
    pub evaluations: usize,
    /// Single-block evaluations spent fitting a selective start.
    pub fit_evaluations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: PulseParams,
    pub best_composite: f64,
    pub cost: f64,
    pub fidelity: f64,
    pub evaluation: Evaluation,
    /// `(evaluation index, best composite so far)` across all restarts.
    pub history: Vec<(usize, f64)>,
    pub termination: Termination,
    pub evaluations: usize,
    pub restarts: Vec<RestartSummary>,
}

/// Runs the configured search. Restart `r` draws from the ChaCha stream `r`
/// of the seed, so results depend only on the spec.
pub fn optimize(spec: &SearchSpec) -> Result<SearchResult> {
    let evaluator = Evaluator::new(spec)?;
    let coords = spec.coordinates();
    let f = |x: &[f64]| evaluator.objective(x);
    let opts = MinimizeOptions {
        budget: spec.budget,
        sigma0: spec.sigma0,
        stop_below: spec.stop_below,
        threads: spec.threads,
    };
    let mut best: Option<Minimum> = None;
    let mut history = Vec::new();
    let mut offset = 0;
    let mut restarts = Vec::new();
    let plans = match spec.start {
        Start::Selective => plans(&spec.target, spec.frame, evaluator.model(), &evaluator.frame, spec.duration),
        Start::Random => None,
    };
    for r in 0..spec.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(r as u64);
        let mut fit_evaluations = 0;
        let x0 = match (&plans, spec.start) {
            (Some(plans), Start::Selective) if !plans.is_empty() => {
                let plan = &plans[r % plans.len()];
                let (tones, spent) = fit_tones(
                    plan,
                    evaluator.model(),
                    spec.duration,
                    spec.taper,
                    spec.bounds.amplitude,
                    spec.bounds.frequency,
                    &mut rng,
                );
                fit_evaluations = spent;
                spec.seeded_point(&tones, &mut rng)
            }
            _ => spec.initial_point(&mut rng),
        };
        let run = match spec.method {
            Method::DerivativeFree => cmaes(&f, &x0, &coords, &opts, &mut rng),
            Method::FiniteDifferenceGradient => fd_descent(&f, &x0, &coords, &opts),
        };
        let prior = best.as_ref().map_or(f64::INFINITY, |b| b.value);
        for &(k, v) in &run.history {
            history.push((offset + k, v.min(prior)));
        }
        offset += run.evaluations;
        restarts.push(RestartSummary {
            restart: r,
            best: run.value,
            evaluations: run.evaluations,
            fit_evaluations,
            termination: run.termination,
        });
        let reached = run.termination == Termination::TargetReached;
        if run.value < prior {
            best = Some(run);
        }
        if reached {
            break;
        }
    }
    let best = best.expect("at least one restart");
    let params = spec.decode(&best.x)?;
    let evaluation = evaluator.evaluate(&params)?;
    Ok(SearchResult {
        best: params,
        best_composite: best.value,
        cost: evaluation.cost,
        fidelity: evaluation.fidelity,
        evaluation,
        history,
        termination: restarts.last().expect("ran").termination,
        evaluations: offset,
        restarts,
    })
}

impl SearchResult {
    /// `key: value` lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k}: {v}\n"));
        line("best_composite", fmt_f64(self.best_composite));
        line("cost", fmt_f64(self.cost));
        line("cost_lifted", fmt_f64(self.evaluation.cost_lifted));
        line("fidelity", fmt_f64(self.fidelity));
        line("fidelity_uncorrected", fmt_f64(self.evaluation.fidelity_uncorrected));
        line("leakage", fmt_f64(self.evaluation.leakage));
        line("nonunitarity", fmt_f64(self.evaluation.nonunitarity));
        line("slew_mT2_per_ns2", fmt_f64(self.evaluation.slew));
        line("evaluations", self.evaluations.to_string());
        line("termination", self.termination.name().to_string());
        for r in &self.restarts {
            line(
                &format!("restart_{}", r.restart),
                format!(
                    "best={} evaluations={} fit_evaluations={} termination={}",
                    fmt_f64(r.best),
                    r.evaluations,
                    r.fit_evaluations,
                    r.termination.name()
                ),
            );
        }
        s
    }

    pub fn history_csv(&self) -> String {
        write_table(
            &["eval", "best_composite"],
            self.history.iter().map(|(k, v)| vec![k.to_string(), fmt_f64(*v)]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub steps: [f64; 2],
    pub derivatives: [f64; 2],
    pub ratio: f64,
    pub passed: bool,
}

/// Directional central differences of `f` at `x` along `dir` for two steps.
/// Passes when the two estimates agree within a factor of two (or both are
/// negligible).
pub fn directional_check(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    dir: &[f64],
    steps: [f64; 2],
) -> Result<GradientCheck> {
    let mut derivatives = [0.0; 2];
    for (d, &h) in derivatives.iter_mut().zip(&steps) {
        let at = |s: f64| x.iter().zip(dir).map(|(xi, di)| xi + s * di).collect::<Vec<f64>>();
        let (up, down) = (f(&at(h)), f(&at(-h)));
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("objective at gradient probe".into()));
        }
        *d = (up - down) / (2.0 * h);
    }
    let scale = derivatives[0].abs().max(derivatives[1].abs());
    let ratio = if scale < 1e-12 { 1.0 } else { derivatives[0] / derivatives[1] };
    Ok(GradientCheck { steps, derivatives, ratio, passed: (0.5..=2.0).contains(&ratio) })
}

/// Step sizes of the gradient check, in normalized coordinates.
pub const GRADIENT_CHECK_STEPS: [f64; 2] = [1e-5, 1e-6];

/// Directional FD consistency of the composite objective at `params` along
/// a seeded random direction.
pub fn gradient_check(evaluator: &Evaluator, params: &PulseParams, seed: u64) -> Result<GradientCheck> {
    let spec = evaluator.spec();
    if !spec.in_bounds(params) {
        return Err(Error::InvalidParameter("parameters outside search bounds".into()));
    }
    let x = spec.encode(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);
    let h = GRADIENT_CHECK_STEPS[0];
    for ((xi, di), c) in x.iter().zip(&dir).zip(spec.coordinates()) {
        if c == Coordinate::Bounded && (xi - h * di.abs() < 0.0 || xi + h * di.abs() > 1.0) {
            return Err(Error::InvalidParameter("gradient probe straddles a parameter bound".into()));
        }
    }
    let f = |y: &[f64]| evaluator.objective(y);
    directional_check(&f, &x, &dir, GRADIENT_CHECK_STEPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(budget: usize) -> MinimizeOptions {
        MinimizeOptions { budget, sigma0: 0.2, stop_below: f64::NEG_INFINITY, threads: 1 }
    }

    #[test]
    fn cmaes_finds_shifted_quadratic() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.7).powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let coords = [Coordinate::Bounded; 2];
        let m = cmaes(&f, &[0.5, 0.5], &coords, &opts(500), &mut rng);
        assert!((m.x[0] - 0.3).abs() < 1e-3 && (m.x[1] - 0.7).abs() < 1e-3, "{:?}", m.x);
        assert!(m.evaluations <= 500);
        assert!(m.history.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
    }

    #[test]
    fn cmaes_is_deterministic_and_respects_bounds() {
        let f = |x: &[f64]| -x.iter().sum::<f64>();
        let coords = [Coordinate::Bounded; 3];
        let run = |seed| cmaes(&f, &[0.5; 3], &coords, &opts(300), &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (run(4), run(4));
        assert_eq!(a, b);
        assert!(a.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.value < -2.99);
    }

    #[test]
    fn fd_descent_on_quadratic() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2);
        let m = fd_descent(&f, &[0.5, 0.5], &[Coordinate::Bounded; 2], &opts(2000));
        assert!((m.x[0] - 0.3).abs() < 1e-3 && (m.x[1] - 0.6).abs() < 1e-3);
    }

    #[test]
    fn directional_check_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let c = directional_check(&f, &[1.0, 0.0], &[1.0, 0.0], GRADIENT_CHECK_STEPS).unwrap();
        assert!((c.derivatives[0] - 2.0).abs() < 1e-6 && (c.derivatives[1] - 2.0).abs() < 1e-6);
        assert!(c.passed);
    }

    #[test]
    fn encode_decode_round_trip() {
        let spec = SearchSpec::zzz();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = spec.initial_point(&mut rng);
        let p = spec.decode(&x).unwrap();
        assert!(spec.in_bounds(&p));
        assert!(p.tones.iter().all(|t| t.amplitude.abs() <= 0.1 * spec.bounds.amplitude + 1e-18));
        let back = spec.encode(&p);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_free_composite_is_cost() {
        let mut spec = SearchSpec::zzz();
        spec.duration = 200e-9;
        spec.penalties = Penalties { leakage: 0.0, unitarity: 0.0, smoothness: 0.0 };
        let ev = Evaluator::new(&spec).unwrap();
        let p = spec.decode(&spec.initial_point(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        let e = ev.evaluate(&p).unwrap();
        assert_eq!(e.composite, e.cost_lifted);
        assert!(e.cost_lifted <= e.cost);
        spec.cost_form = CostForm::Principal;
        let e = Evaluator::new(&spec).unwrap().evaluate(&p).unwrap();
        assert_eq!(e.composite, e.cost);
        assert!(e.failure.is_none());
        let mut out = p.clone();
        out.tones[0].amplitude = 1.0;
        assert!(ev.evaluate(&out).is_err());
    }
}
