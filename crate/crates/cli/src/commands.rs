use std::fs;
use std::path::{Path, PathBuf};

use phasefilter::invariants::{all_invariants, invariant, invariant_closed_form, invariant_by_definition, InvariantSet};
use phasefilter::nvmodel::{framed_diagonal_phases, logical_block, FrameKind, LogicalFrame, RegisterModel};
use phasefilter::objective::{dephasing_from_exposure, ExposureTrace, REPORT_T2};
use phasefilter::propagate::{parse_invariants_csv, propagate, trajectory, TimeGrid};
use phasefilter::pulse::{Drive, PulseParams, SampledPulse};
use phasefilter::search::{optimize, Evaluation, Evaluator, SearchSpec};
use phasefilter::table::{fmt_f64, write_table, Table};
use phasefilter::walsh::{PhaseMap, SubsetMask};

use crate::config::RunConfig;
use crate::CliError;

pub const PULSE_CSV: &str = "pulse.csv";
pub const TONES_CSV: &str = "tones.csv";
pub const SUMMARY: &str = "summary.txt";
pub const HISTORY_CSV: &str = "history.csv";
pub const EVALUATION: &str = "evaluation.txt";
pub const PHASE_MAP_CSV: &str = "phase_map.csv";
pub const INVARIANTS_CSV: &str = "invariants.csv";
pub const TRAJECTORY_CSV: &str = "trajectory_invariants.csv";
pub const POPULATIONS_CSV: &str = "populations.csv";
pub const REPORT: &str = "report.txt";

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn prepare(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Search spec re-targeted at the artifact grid.
fn fine_spec(cfg: &RunConfig) -> SearchSpec {
    SearchSpec { dt: cfg.dt, ..cfg.search.clone() }
}

fn grid(cfg: &RunConfig, duration: f64) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::with_step(duration, cfg.dt)?)
}

/// Reads either a sampled envelope (`t_ns,envelope`) or a tone table.
pub fn load_pulse(path: &Path, cfg: &RunConfig) -> Result<Box<dyn Drive>, CliError> {
    let text = read(path)?;
    let header = Table::parse(&text)?.header;
    if header.first().map(String::as_str) == Some("amplitude_mT") {
        let s = &cfg.search;
        Ok(Box::new(PulseParams::from_tones_csv(&text, s.duration, s.taper, s.carrier_offset)?))
    } else {
        Ok(Box::new(SampledPulse::from_csv(&text)?))
    }
}

fn evaluation_text(cfg: &RunConfig, ev: &Evaluation) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| s.push_str(&format!("{k}: {v}\n"));
    line("gate", cfg.gate.name().to_string());
    line("frame", cfg.frame().name().to_string());
    line("duration_ns", fmt_f64(cfg.search.duration * 1e9));
    line("dt_ns", fmt_f64(cfg.dt * 1e9));
    line("fidelity", fmt_f64(ev.fidelity));
    line("fidelity_uncorrected", fmt_f64(ev.fidelity_uncorrected));
    line("cost", fmt_f64(ev.cost));
    line("cost_lifted", fmt_f64(ev.cost_lifted));
    line("leakage", fmt_f64(ev.leakage));
    line("nonunitarity", fmt_f64(ev.nonunitarity));
    line("off_diagonal", fmt_f64(ev.off_diagonal));
    line("slew_mT2_per_ns2", fmt_f64(ev.slew));
    s
}

fn checked(ev: Evaluation) -> Result<Evaluation, CliError> {
    match &ev.failure {
        Some(reason) => Err(CliError::Numerical(reason.clone())),
        None => Ok(ev),
    }
}

/// Phase map, invariants, trajectory, evaluation and report for one drive.
fn write_artifacts(cfg: &RunConfig, drive: &dyn Drive, dir: &Path) -> Result<Evaluation, CliError> {
    let ev = checked(Evaluator::new(&fine_spec(cfg))?.evaluate_drive(drive))?;
    let (phi, _) = framed_diagonal_phases(ev.logical.as_ref().expect("successful evaluation"), cfg.frame())?;
    write(dir, PHASE_MAP_CSV, &phi.to_csv())?;
    write(dir, INVARIANTS_CSV, &all_invariants(&phi).to_csv())?;
    write(dir, EVALUATION, &evaluation_text(cfg, &ev))?;
    write_trajectory(cfg, drive, dir)?;
    let report = build_report(dir)?;
    write(dir, REPORT, &report)?;
    Ok(ev)
}

fn write_trajectory(cfg: &RunConfig, drive: &dyn Drive, dir: &Path) -> Result<InvariantSet, CliError> {
    let model = RegisterModel::new(&cfg.search.register, cfg.search.carrier_offset)?;
    let frame = LogicalFrame::for_model(&model, cfg.frame())?;
    let traj = trajectory(drive, &model, &frame, &grid(cfg, drive.duration())?, cfg.stride)?;
    write(dir, TRAJECTORY_CSV, &traj.invariants_csv())?;
    write(dir, POPULATIONS_CSV, &traj.populations_csv())?;
    let mut last = InvariantSet::partial(frame.qubits)?;
    for (s, v) in SubsetMask::nonempty(frame.qubits)?.into_iter().zip(&traj.final_sample().invariants) {
        last.insert(s, *v)?;
    }
    Ok(last)
}

pub fn synthesize(cfg: &RunConfig, dir: &Path) -> Result<String, CliError> {
    prepare(dir)?;
    let result = optimize(&cfg.search)?;
    let best = &result.best;
    write(dir, TONES_CSV, &best.tones_csv())?;
    let steps = grid(cfg, best.duration)?.steps();
    write(dir, PULSE_CSV, &SampledPulse::from_drive(best, steps)?.to_csv())?;
    write(dir, SUMMARY, &result.summary())?;
    write(dir, HISTORY_CSV, &result.history_csv())?;
    // artifacts are evaluated from the tone table as written, so the files
    // alone reproduce every reported number
    let written = PulseParams::from_tones_csv(
        &best.tones_csv(),
        best.duration,
        best.taper,
        best.carrier_offset,
    )?;
    write_artifacts(cfg, &written, dir)?;
    read(&dir.join(REPORT))
}

/// Invariant table for a phase map: both routes and the tabulated closed forms.
pub fn analysis_table(phi: &PhaseMap) -> Result<String, CliError> {
    let n = phi.n();
    let mut rows = Vec::new();
    for s in SubsetMask::nonempty(n)? {
        let alternating = invariant(phi, s)?;
        let definition = invariant_by_definition(phi, s)?;
        let (boxed, relation) = if n == 3 {
            let b = invariant_closed_form(phi, s)?;
            let sign = if s.order() % 2 == 0 { 1.0 } else { -1.0 };
            let holds = (alternating - sign * b).abs() <= 1e-9 * (1.0 + alternating.abs());
            let flag = match (holds, s.order() % 2 == 0) {
                (true, true) => "equal",
                (true, false) => "negated",
                (false, _) => "mismatch",
            };
            (fmt_f64(b), flag.to_string())
        } else {
            ("n/a".to_string(), "n/a".to_string())
        };
        rows.push(vec![s.bit_string(), s.label(), fmt_f64(alternating), fmt_f64(definition), boxed, relation]);
    }
    Ok(write_table(
        &["subset_bits", "subset_label", "delta_rad", "definition_rad", "closed_form_rad", "closed_form_relation"],
        rows,
    ))
}

pub enum AnalyzeInput {
    PhaseMap(PathBuf),
    Pulse(PathBuf),
}

pub fn analyze(cfg: &RunConfig, input: &AnalyzeInput, dir: Option<&Path>) -> Result<String, CliError> {
    let (phi, extra) = match input {
        AnalyzeInput::PhaseMap(path) => (PhaseMap::from_csv(&read(path)?)?, String::new()),
        AnalyzeInput::Pulse(path) => {
            let drive = load_pulse(path, cfg)?;
            let model = RegisterModel::new(&cfg.search.register, cfg.search.carrier_offset)?;
            let frame = LogicalFrame::for_model(&model, cfg.frame())?;
            let u = propagate(drive.as_ref(), &model, &grid(cfg, drive.duration())?)?;
            let (u_l, leakage) = logical_block(&u, &frame)?;
            let (phi, off) = framed_diagonal_phases(&u_l, cfg.frame())?;
            let ev = checked(Evaluator::new(&SearchSpec { duration: drive.duration(), ..fine_spec(cfg) })?
                .evaluate_drive(drive.as_ref()))?;
            let mut s = format!("frame: {}\n", cfg.frame().name());
            s.push_str(&format!("leakage: {}\n", fmt_f64(leakage)));
            s.push_str(&format!("off_diagonal: {}\n", fmt_f64(off)));
            s.push_str(&format!("fidelity: {}\n", fmt_f64(ev.fidelity)));
            s.push_str(&format!("cost: {}\n", fmt_f64(ev.cost)));
            (phi, s)
        }
    };
    let table = analysis_table(&phi)?;
    if let Some(dir) = dir {
        prepare(dir)?;
        write(dir, PHASE_MAP_CSV, &phi.to_csv())?;
        write(dir, INVARIANTS_CSV, &all_invariants(&phi).to_csv())?;
        write(dir, "analysis.csv", &table)?;
    }
    Ok(format!("{extra}{table}"))
}

pub fn trajectory_cmd(cfg: &RunConfig, pulse: &Path, dir: &Path) -> Result<String, CliError> {
    prepare(dir)?;
    let drive = load_pulse(pulse, cfg)?;
    let last = write_trajectory(cfg, drive.as_ref(), dir)?;
    let mut s = format!("frame: {}\n", cfg.frame().name());
    for (mask, v) in last.entries() {
        s.push_str(&format!("final_delta_{}: {}\n", mask.label(), fmt_f64(v)));
    }
    Ok(s)
}

fn key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Consolidated report from a run directory's evaluation, invariants and
/// trajectory files.
pub fn build_report(dir: &Path) -> Result<String, CliError> {
    let missing = |name: &str| CliError::Input(format!("{}: missing run artifact", dir.join(name).display()));
    let need = |name: &str| -> Result<String, CliError> {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(missing(name));
        }
        read(&p)
    };
    let evaluation = key_values(&need(EVALUATION)?);
    let inv = InvariantSet::from_csv(&need(INVARIANTS_CSV)?)?;
    let series = parse_invariants_csv(&need(TRAJECTORY_CSV)?, inv.n())?;
    let exposure = ExposureTrace::new(series.times.clone(), series.p_minus1.clone())?.exposure();

    let mut s = String::new();
    for key in ["gate", "frame", "duration_ns", "fidelity", "cost", "leakage", "nonunitarity"] {
        let v = evaluation.iter().find(|(k, _)| k == key).ok_or_else(|| missing(EVALUATION))?;
        s.push_str(&format!("{}: {}\n", key, v.1));
    }
    for (mask, v) in inv.entries() {
        s.push_str(&format!("delta_{}: {}\n", mask.label(), fmt_f64(v)));
    }
    if let Some(last) = series.invariants.last() {
        for (mask, v) in SubsetMask::nonempty(inv.n())?.iter().zip(last) {
            s.push_str(&format!("trajectory_final_delta_{}: {}\n", mask.label(), fmt_f64(*v)));
        }
    }
    s.push_str(&format!("exposure_ns: {}\n", fmt_f64(exposure * 1e9)));
    for t2 in REPORT_T2 {
        let d = dephasing_from_exposure(exposure, t2)?;
        s.push_str(&format!("dephasing_T2_{}ms: {}\n", t2 * 1e3, fmt_f64(d)));
    }
    Ok(s)
}

pub fn report(dir: &Path) -> Result<String, CliError> {
    let s = build_report(dir)?;
    write(dir, REPORT, &s)?;
    Ok(s)
}

pub fn frame_override(cfg: &mut RunConfig, frame: Option<FrameKind>) {
    if let Some(kind) = frame {
        cfg.search.frame = kind;
    }
}
