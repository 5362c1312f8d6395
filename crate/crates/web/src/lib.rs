//! Browser bindings: invariants of a three-qubit phase map, its distance to
//! the ZZZ entangler, and multi-tone envelope samples.
//!
//! The plain functions carry the logic so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use phasefilter::invariants::{all_invariants, invariant_closed_form};
use phasefilter::nvmodel::{diagonal_unitary, FrameKind};
use phasefilter::objective::{best_lift, cost, fidelity, local_correction, TargetSpec};
use phasefilter::pulse::{envelope, PulseParams};
use phasefilter::walsh::{PhaseMap, SubsetMask};
use wasm_bindgen::prelude::*;

fn three_qubit_map(phases: &[f64]) -> Result<PhaseMap, String> {
    if phases.len() != 8 {
        return Err(format!("expected 8 phases, got {}", phases.len()));
    }
    PhaseMap::new(3, phases.to_vec()).map_err(|e| e.to_string())
}

/// One `label delta closed_form` line per nonempty subset, radians.
pub fn invariant_rows(phases: &[f64]) -> Result<String, String> {
    let phi = three_qubit_map(phases)?;
    let inv = all_invariants(&phi);
    let mut out = String::new();
    for s in SubsetMask::nonempty(3).map_err(|e| e.to_string())? {
        let b = invariant_closed_form(&phi, s).map_err(|e| e.to_string())?;
        let d = inv.get(s).ok_or("missing invariant")?;
        out.push_str(&format!("{} {:.6} {:.6}\n", s.label(), d, b));
    }
    Ok(out)
}

/// `[J, J over lifts, fidelity after local correction]` against
/// `exp(-i pi/4 ZZZ)`.
pub fn zzz_scores(phases: &[f64]) -> Result<Vec<f64>, String> {
    let phi = three_qubit_map(phases)?;
    let spec = TargetSpec::three_body_entangler();
    let inv = all_invariants(&phi);
    let j = cost(&inv, &spec).map_err(|e| e.to_string())?;
    let (jl, lifted) = best_lift(&inv, &spec).map_err(|e| e.to_string())?;
    let corr = local_correction(&lifted, FrameKind::Canonical).map_err(|e| e.to_string())?;
    let f = fidelity(&spec.target_unitary(FrameKind::Canonical), &(corr * diagonal_unitary(&phi)))
        .map_err(|e| e.to_string())?;
    Ok(vec![j, jl, f])
}

/// Envelope in mT at `steps` midpoints of a tone table
/// (`amplitude_mT,frequency_MHz,phase_rad`).
pub fn envelope_mt(tones_csv: &str, duration_ns: f64, taper: f64, steps: usize) -> Result<Vec<f64>, String> {
    if steps == 0 {
        return Err("steps must be positive".into());
    }
    let duration = duration_ns * 1e-9;
    let p = PulseParams::from_tones_csv(tones_csv, duration, taper, 0.0).map_err(|e| e.to_string())?;
    (0..steps)
        .map(|k| {
            let t = (k as f64 + 0.5) * duration / steps as f64;
            envelope(t, &p).map(|e| e * 1e3).map_err(|e| e.to_string())
        })
        .collect()
}

#[wasm_bindgen(js_name = invariantRows)]
pub fn invariant_rows_js(phases: &[f64]) -> Result<String, JsValue> {
    invariant_rows(phases).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = zzzScores)]
pub fn zzz_scores_js(phases: &[f64]) -> Result<Vec<f64>, JsValue> {
    zzz_scores(phases).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = envelopeMt)]
pub fn envelope_mt_js(tones_csv: &str, duration_ns: f64, taper: f64, steps: usize) -> Result<Vec<f64>, JsValue> {
    envelope_mt(tones_csv, duration_ns, taper, steps).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn zzz() -> Vec<f64> {
        (0..8u32).map(|x| if x.count_ones() % 2 == 0 { -PI / 4.0 } else { PI / 4.0 }).collect()
    }

    #[test]
    fn rows_list_seven_subsets() {
        let rows = invariant_rows(&zzz()).unwrap();
        assert_eq!(rows.lines().count(), 7);
        assert!(rows.lines().last().unwrap().starts_with("abc 0.785398"));
        assert!(invariant_rows(&[0.0; 4]).is_err());
    }

    #[test]
    fn target_map_scores_perfectly() {
        let s = zzz_scores(&zzz()).unwrap();
        assert!(s[0] < 1e-12 && s[1] < 1e-12);
        assert!((s[2] - 1.0).abs() < 1e-12);
        let s = zzz_scores(&[0.0; 8]).unwrap();
        assert!(s[2] < 0.6);
    }

    #[test]
    fn envelope_is_tapered() {
        let e = envelope_mt("amplitude_mT,frequency_MHz,phase_rad\n0.1,0,0\n", 1000.0, 0.15, 100).unwrap();
        assert_eq!(e.len(), 100);
        assert!(e[0] < 0.01 && (e[50] - 0.1).abs() < 1e-9);
        assert!(envelope_mt("nonsense", 1000.0, 0.15, 10).is_err());
    }
}
