//! Time-ordered propagation with midpoint-sampled step exponentials.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::invariants::all_invariants;
use crate::linalg::{apply_expm_hermitian, identity, operator_norm, CMat, C64};
use crate::nvmodel::{apply_frame, FrameKind, LogicalFrame, RegisterModel};
use crate::pulse::Drive;
use crate::table::{fmt_f64, write_table, Table};
use crate::walsh::{PhaseMap, SubsetMask};

/// Default step, seconds.
pub const DEFAULT_DT: f64 = 0.25e-9;
pub const DEFAULT_STRIDE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    duration: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(duration: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        if !duration.is_finite() || duration < 0.0 {
            return Err(Error::InvalidParameter(format!("duration {duration} must be finite and >= 0")));
        }
        Ok(TimeGrid { duration, steps })
    }

    /// Smallest uniform grid with step no larger than `dt`.
    pub fn with_step(duration: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("step {dt} must be positive")));
        }
        let steps = ((duration / dt) - 1e-9).ceil().max(1.0) as usize;
        Self::new(duration, steps)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.duration * k as f64 / self.steps as f64
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        self.duration * (k as f64 + 0.5) / self.steps as f64
    }

    pub fn halved(&self) -> TimeGrid {
        TimeGrid { duration: self.duration, steps: 2 * self.steps }
    }
}

/// Steps `U <- exp(-i H dt) U` over `[t0, t1]` in `steps` midpoint steps,
/// calling `visit(k, &U)` after every step.
fn evolve(
    drive: &dyn Drive,
    model: &RegisterModel,
    t0: f64,
    t1: f64,
    steps: usize,
    mut visit: impl FnMut(usize, &CMat) -> Result<()>,
) -> Result<CMat> {
    let dim = model.dim();
    let mut u = identity(dim);
    if t1 == t0 {
        return Ok(u);
    }
    let dt = (t1 - t0) / steps as f64;
    let mut h = CMat::zeros(dim, dim);
    for k in 0..steps {
        let t = t0 + (k as f64 + 0.5) * dt;
        let e = drive.envelope_at(t)?;
        model.fill_hamiltonian(t, e, &mut h);
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!("Hamiltonian at t = {t:e} s")));
        }
        apply_expm_hermitian(&h, dt, &mut u);
        visit(k, &u)?;
    }
    Ok(u)
}

/// `U = prod_{k=N-1..0} exp(-i H(t_k + dt/2) dt)` over the whole pulse.
pub fn propagate(drive: &dyn Drive, model: &RegisterModel, grid: &TimeGrid) -> Result<CMat> {
    evolve(drive, model, 0.0, grid.duration(), grid.steps(), |_, _| Ok(()))
}

/// Propagator from `t0` to `t1` with `steps` midpoint steps.
pub fn propagate_interval(
    drive: &dyn Drive,
    model: &RegisterModel,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<CMat> {
    if steps == 0 || !(t1 >= t0) {
        return Err(Error::InvalidParameter(format!("interval [{t0}, {t1}] with {steps} steps")));
    }
    let duration = drive.duration();
    if t0 < 0.0 || t1 > duration * (1.0 + 1e-12) {
        return Err(Error::TimeOutOfRange { t: t1, duration });
    }
    evolve(drive, model, t0, t1, steps, |_, _| Ok(()))
}

/// Closed form `exp(-i H_static T)` of the diagonal zero-drive term.
pub fn static_propagator(model: &RegisterModel, duration: f64) -> CMat {
    let d = model.static_diagonal();
    CMat::from_fn(d.len(), d.len(), |r, c| {
        if r == c {
            C64::from_polar(1.0, -d[r] * duration)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub dt: f64,
    /// `‖U(dt) - U(dt/2)‖_2`.
    pub difference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

pub fn convergence_test(drive: &dyn Drive, model: &RegisterModel, grid: &TimeGrid) -> Result<ConvergenceReport> {
    let coarse = propagate(drive, model, grid)?;
    let fine = propagate(drive, model, &grid.halved())?;
    let difference = operator_norm(&(coarse - fine));
    Ok(ConvergenceReport {
        dt: grid.dt(),
        difference,
        tolerance: CONVERGENCE_TOLERANCE,
        passed: difference <= CONVERGENCE_TOLERANCE,
    })
}

/// Logical product state used for trajectories: `|+>` on every qubit except
/// qubit A, which starts in `|+>` for the canonical frame and `|0>` for the
/// Hadamard frame (so that it reads `|+>` after the frame change).
pub fn initial_logical_state(qubits: usize, kind: FrameKind) -> Vec<C64> {
    let d = 1usize << qubits;
    let plus = (1usize << (qubits - 1)) as f64;
    (0..d)
        .map(|x| match kind {
            FrameKind::Canonical => C64::new(1.0 / (d as f64).sqrt(), 0.0),
            FrameKind::HadamardOnA => {
                if x >> (qubits - 1) == 0 {
                    C64::new(1.0 / plus.sqrt(), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub propagator: CMat,
    /// Continuously unwrapped `Delta_S`, in [`SubsetMask::nonempty`] order.
    pub invariants: Vec<f64>,
    /// Smallest framed diagonal magnitude; below `1e-6` the phases of this
    /// sample are not meaningful and the previous ones are carried over.
    pub min_diagonal: f64,
    /// Populations of all full-register basis states.
    pub populations: Vec<f64>,
    pub logical_populations: Vec<f64>,
    pub p_minus1: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub qubits: usize,
    pub kind: FrameKind,
    pub samples: Vec<TrajectorySample>,
}

/// Records the evolution every `stride` steps (and always at `T`).
pub fn trajectory(
    drive: &dyn Drive,
    model: &RegisterModel,
    frame: &LogicalFrame,
    grid: &TimeGrid,
    stride: usize,
) -> Result<Trajectory> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    let psi0_logical = initial_logical_state(frame.qubits, frame.kind);
    let mut psi0 = vec![C64::new(0.0, 0.0); model.dim()];
    for (x, &local) in frame.embedding.iter().enumerate() {
        psi0[local] = psi0_logical[x];
    }
    let minus_one = model.minus_one_states();
    let full_dim = model.dim_full();
    let subsets = SubsetMask::nonempty(frame.qubits)?;
    let mut last_phases: Option<Vec<f64>> = None;
    let mut samples = Vec::new();

    let mut record = |t: f64, u: &CMat| -> Result<()> {
        let e = &frame.embedding;
        let u_l = CMat::from_fn(e.len(), e.len(), |r, c| u[(e[r], e[c])]);
        let framed = apply_frame(&u_l, frame.kind);
        let diag: Vec<C64> = (0..e.len()).map(|x| framed[(x, x)]).collect();
        let min_diagonal = diag.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        let phases: Vec<f64> = if min_diagonal < 1e-6 {
            last_phases.clone().unwrap_or_else(|| vec![0.0; e.len()])
        } else {
            diag.iter()
                .enumerate()
                .map(|(x, z)| match &last_phases {
                    Some(prev) => unwrap_near(z.arg(), prev[x]),
                    None => z.arg(),
                })
                .collect()
        };
        last_phases = Some(phases.clone());
        let inv = all_invariants(&PhaseMap::new(frame.qubits, phases)?);
        let invariants = subsets.iter().map(|s| inv.get(*s).unwrap_or(f64::NAN)).collect();

        let psi: Vec<C64> = (0..u.nrows())
            .map(|r| (0..u.ncols()).map(|c| u[(r, c)] * psi0[c]).sum())
            .collect();
        let mut populations = vec![0.0; full_dim];
        for (k, z) in psi.iter().enumerate() {
            populations[model.basis()[k]] = z.norm_sqr();
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let logical_populations = e.iter().map(|&l| psi[l].norm_sqr()).collect();
        let p_minus1 = minus_one.iter().map(|&k| psi[k].norm_sqr()).sum();
        samples.push(TrajectorySample {
            t,
            propagator: u.clone(),
            invariants,
            min_diagonal,
            populations,
            logical_populations,
            p_minus1,
            norm,
        });
        Ok(())
    };

    record(0.0, &identity(model.dim()))?;
    let steps = grid.steps();
    evolve(drive, model, 0.0, grid.duration(), steps, |k, u| {
        if (k + 1) % stride == 0 || k + 1 == steps {
            record(grid.time(k + 1), u)?;
        }
        Ok(())
    })?;
    Ok(Trajectory { qubits: frame.qubits, kind: frame.kind, samples })
}

/// Representative of `raw` (mod 2pi) nearest to `prev`.
fn unwrap_near(raw: f64, prev: f64) -> f64 {
    raw + TAU * ((prev - raw) / TAU).round()
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn p_minus1(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.p_minus1).collect()
    }

    pub fn final_sample(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory has the t = 0 sample")
    }

    fn invariant_header(&self) -> Vec<String> {
        let mut header = vec!["t_ns".to_string()];
        for s in SubsetMask::nonempty(self.qubits).expect("qubit count validated") {
            header.push(format!("d_{}", s.label()));
        }
        header.push("p_ms_minus1".into());
        for x in 0..1usize << self.qubits {
            header.push(format!("p_{:0width$b}", x, width = self.qubits));
        }
        header
    }

    /// `t_ns, d_<S>..., p_ms_minus1, p_<bits>...` with logical populations.
    pub fn invariants_csv(&self) -> String {
        let header = self.invariant_header();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(
            &header,
            self.samples.iter().map(|s| {
                let mut row = vec![fmt_f64(s.t * 1e9)];
                row.extend(s.invariants.iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(s.p_minus1));
                row.extend(s.logical_populations.iter().map(|v| fmt_f64(*v)));
                row
            }),
        )
    }

    /// `t_ns, p_0 ... p_{D-1}` over the full register basis.
    pub fn populations_csv(&self) -> String {
        let dim = self.samples[0].populations.len();
        let mut header = vec!["t_ns".to_string()];
        header.extend((0..dim).map(|k| format!("p_{k}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(
            &header,
            self.samples.iter().map(|s| {
                let mut row = vec![fmt_f64(s.t * 1e9)];
                row.extend(s.populations.iter().map(|v| fmt_f64(*v)));
                row
            }),
        )
    }
}

/// Parsed invariant trajectory CSV: times (seconds), invariants per sample
/// and `p_{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSeries {
    pub times: Vec<f64>,
    pub invariants: Vec<Vec<f64>>,
    pub p_minus1: Vec<f64>,
}

pub fn parse_invariants_csv(text: &str, qubits: usize) -> Result<InvariantSeries> {
    let table = Table::parse(text)?;
    let subsets = SubsetMask::nonempty(qubits)?;
    let t_col = table.column("t_ns")?;
    let cols: Vec<usize> = subsets
        .iter()
        .map(|s| table.column(&format!("d_{}", s.label())))
        .collect::<Result<_>>()?;
    let p_col = table.column("p_ms_minus1")?;
    let mut series = InvariantSeries { times: vec![], invariants: vec![], p_minus1: vec![] };
    for r in 0..table.rows.len() {
        series.times.push(table.f64_at(r, t_col)? * 1e-9);
        series.invariants.push(cols.iter().map(|&c| table.f64_at(r, c)).collect::<Result<_>>()?);
        series.p_minus1.push(table.f64_at(r, p_col)?);
    }
    Ok(series)
}
