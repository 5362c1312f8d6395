//! Multi-tone windowed microwave envelopes.
//!
//! `E(t) = w(t) sum_i a_i cos(omega_i t + phase_i)` with a tapered-cosine
//! window `w`. Amplitudes are in tesla, frequencies in rad/s, times in
//! seconds. The envelope modulates a carrier whose offset from the
//! addressed electron resonance is `carrier_offset`.

use crate::error::{Error, Result};
use crate::table::{fmt_f64, write_table, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseParams {
    pub tones: Vec<Tone>,
    pub duration: f64,
    pub taper: f64,
    pub carrier_offset: f64,
}

/// Anything that yields an envelope value on `[0, duration]`.
pub trait Drive: Sync {
    fn duration(&self) -> f64;
    fn envelope_at(&self, t: f64) -> Result<f64>;
}

fn check_time(t: f64, duration: f64) -> Result<()> {
    // tolerate rounding at the end point of accumulated grids
    let slack = 1e-12 * duration.max(1e-300);
    if !(t >= -slack && t <= duration + slack) {
        return Err(Error::TimeOutOfRange { t, duration });
    }
    Ok(())
}

/// Tapered-cosine window: cosine ramps of length `alpha * T` at both ends.
pub fn window(t: f64, duration: f64, alpha: f64) -> Result<f64> {
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter(format!("duration {duration} must be positive")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("taper {alpha} outside [0, 1]")));
    }
    check_time(t, duration)?;
    Ok(window_unchecked(t, duration, alpha))
}

pub(crate) fn window_unchecked(t: f64, duration: f64, alpha: f64) -> f64 {
    let ramp = alpha * duration;
    let edge = t.min(duration - t).max(0.0);
    if edge >= ramp {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * edge / ramp).cos())
    }
}

impl PulseParams {
    pub fn new(tones: Vec<Tone>, duration: f64, taper: f64) -> Result<Self> {
        let p = PulseParams { tones, duration, taper, carrier_offset: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidParameter(format!("duration {} must be positive", self.duration)));
        }
        if !(0.0..=1.0).contains(&self.taper) {
            return Err(Error::InvalidParameter(format!("taper {} outside [0, 1]", self.taper)));
        }
        for (i, tone) in self.tones.iter().enumerate() {
            if !(tone.amplitude.is_finite() && tone.frequency.is_finite() && tone.phase.is_finite()) {
                return Err(Error::NonFinite(format!("tone {i}")));
            }
        }
        Ok(())
    }

    /// Decision vector `(a_1..a_n, omega_1..omega_n, phase_1..phase_n)`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.tones.iter().map(|t| t.amplitude).collect();
        v.extend(self.tones.iter().map(|t| t.frequency));
        v.extend(self.tones.iter().map(|t| t.phase));
        v
    }

    pub fn from_vector(v: &[f64], duration: f64, taper: f64) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(Error::Dimension { expected: 3 * (v.len() / 3 + 1), got: v.len() });
        }
        let n = v.len() / 3;
        let tones = (0..n)
            .map(|i| Tone { amplitude: v[i], frequency: v[n + i], phase: v[2 * n + i] })
            .collect();
        PulseParams::new(tones, duration, taper)
    }

    /// CSV `amplitude_mT,frequency_MHz,phase_rad`, one row per tone, with
    /// frequencies as `omega / 2pi`.
    pub fn tones_csv(&self) -> String {
        write_table(
            &["amplitude_mT", "frequency_MHz", "phase_rad"],
            self.tones.iter().map(|k| {
                vec![
                    fmt_f64(k.amplitude * 1e3),
                    fmt_f64(k.frequency / std::f64::consts::TAU * 1e-6),
                    fmt_f64(k.phase),
                ]
            }),
        )
    }

    pub fn from_tones_csv(text: &str, duration: f64, taper: f64, carrier_offset: f64) -> Result<Self> {
        let table = Table::parse(text)?;
        table.expect_header(&["amplitude_mT", "frequency_MHz", "phase_rad"])?;
        let mut tones = Vec::with_capacity(table.rows.len());
        for row in 0..table.rows.len() {
            tones.push(Tone {
                amplitude: table.f64_at(row, 0)? * 1e-3,
                frequency: table.f64_at(row, 1)? * 1e6 * std::f64::consts::TAU,
                phase: table.f64_at(row, 2)?,
            });
        }
        let mut p = PulseParams::new(tones, duration, taper)?;
        p.carrier_offset = carrier_offset;
        Ok(p)
    }

    #[inline]
    fn tone_sum(&self, t: f64) -> f64 {
        self.tones.iter().map(|k| k.amplitude * (k.frequency * t + k.phase).cos()).sum()
    }
}

impl Drive for PulseParams {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn envelope_at(&self, t: f64) -> Result<f64> {
        envelope(t, self)
    }
}

/// `E(t) = w(t) sum_i a_i cos(omega_i t + phase_i)`.
pub fn envelope(t: f64, p: &PulseParams) -> Result<f64> {
    let w = window(t, p.duration, p.taper)?;
    Ok(w * p.tone_sum(t))
}

/// Mean of squared finite-difference slopes `((E_{k+1} - E_k) / h_k)^2`
/// of the envelope sampled on `grid`, in tesla^2 / s^2.
pub fn slew_penalty(drive: &dyn Drive, grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("slew grid needs at least two points".into()));
    }
    let samples = grid.iter().map(|&t| drive.envelope_at(t)).collect::<Result<Vec<f64>>>()?;
    let mut total = 0.0;
    for k in 0..grid.len() - 1 {
        let h = grid[k + 1] - grid[k];
        if !(h > 0.0) {
            return Err(Error::InvalidParameter("slew grid must be strictly increasing".into()));
        }
        let slope = (samples[k + 1] - samples[k]) / h;
        total += slope * slope;
    }
    Ok(total / (grid.len() - 1) as f64)
}

/// An envelope replayed from samples with linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPulse {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledPulse {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Dimension { expected: times.len(), got: values.len() });
        }
        if times.len() < 2 {
            return Err(Error::InvalidParameter("sampled pulse needs at least two samples".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidParameter("sampled pulse must start at t = 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("sample times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pulse sample".into()));
        }
        Ok(SampledPulse { times, values })
    }

    /// Samples `drive` at `t = 0`, the midpoints of `steps` equal intervals,
    /// and `t = T`. Replaying on the same step count reproduces the
    /// midpoint values exactly.
    pub fn from_drive(drive: &dyn Drive, steps: usize) -> Result<Self> {
        let duration = drive.duration();
        let dt = duration / steps as f64;
        let mut times = Vec::with_capacity(steps + 2);
        times.push(0.0);
        times.extend((0..steps).map(|k| (k as f64 + 0.5) * dt));
        times.push(duration);
        let values = times.iter().map(|&t| drive.envelope_at(t)).collect::<Result<Vec<_>>>()?;
        SampledPulse::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV `t_ns,envelope` with the envelope in millitesla.
    pub fn to_csv(&self) -> String {
        write_table(
            &["t_ns", "envelope"],
            self.times
                .iter()
                .zip(&self.values)
                .map(|(t, v)| vec![fmt_f64(t * 1e9), fmt_f64(v * 1e3)]),
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let table = Table::parse(text)?;
        table.expect_header(&["t_ns", "envelope"])?;
        let mut times = Vec::with_capacity(table.rows.len());
        let mut values = Vec::with_capacity(table.rows.len());
        for row in 0..table.rows.len() {
            times.push(table.f64_at(row, 0)? * 1e-9);
            values.push(table.f64_at(row, 1)? * 1e-3);
        }
        SampledPulse::new(times, values)
    }
}

impl Drive for SampledPulse {
    fn duration(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    fn envelope_at(&self, t: f64) -> Result<f64> {
        check_time(t, self.duration())?;
        let k = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(k) => return Ok(self.values[k]),
            Err(k) => k,
        };
        if k == 0 {
            return Ok(self.values[0]);
        }
        if k >= self.times.len() {
            return Ok(*self.values.last().expect("non-empty"));
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let f = (t - t0) / (t1 - t0);
        Ok(self.values[k - 1] * (1.0 - f) + self.values[k] * f)
    }
}

/// A drive that is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDrive(pub f64);

impl Drive for ZeroDrive {
    fn duration(&self) -> f64 {
        self.0
    }

    fn envelope_at(&self, t: f64) -> Result<f64> {
        check_time(t, self.0)?;
        Ok(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const T: f64 = 1.5e-6;

    fn one_tone(a: f64, w: f64, phase: f64) -> PulseParams {
        PulseParams::new(vec![Tone { amplitude: a, frequency: w, phase }], T, 0.15).unwrap()
    }

    #[test]
    fn window_examples() {
        assert_eq!(window(0.0, T, 0.15).unwrap(), 0.0);
        assert_eq!(window(T, T, 0.15).unwrap(), 0.0);
        assert_eq!(window(T / 2.0, T, 0.15).unwrap(), 1.0);
        assert!((window(0.075 * T, T, 0.15).unwrap() - 0.5).abs() < 1e-15);
        assert!((window(0.15 * T, T, 0.15).unwrap() - 1.0).abs() <= 1e-12);
        assert!(window(-1e-9, T, 0.15).is_err());
        assert!(window(1.1 * T, T, 0.15).is_err());
        assert!(window(0.0, T, 1.5).is_err());
        assert_eq!(window(0.0, T, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn window_is_continuous() {
        let delta = 0.1e-9;
        let steps = (T / delta) as usize;
        let mut worst: f64 = 0.0;
        for k in 0..steps {
            let t = k as f64 * delta;
            let a = window(t, T, 0.15).unwrap();
            let b = window((t + delta).min(T), T, 0.15).unwrap();
            worst = worst.max((a - b).abs());
        }
        // max slope pi / (2 alpha T) times the step
        assert!(worst <= PI / (2.0 * 0.15 * T) * delta * 1.0001, "{worst}");
    }

    #[test]
    fn envelope_examples() {
        let empty = PulseParams::new(vec![], T, 0.15).unwrap();
        assert_eq!(envelope(T / 3.0, &empty).unwrap(), 0.0);
        assert_eq!(envelope(T / 2.0, &one_tone(1.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(envelope(T / 2.0, &one_tone(1.0, 0.0, PI)).unwrap(), -1.0);
        assert!(envelope(2.0 * T, &one_tone(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn slew_examples() {
        let zero = PulseParams::new(vec![], T, 0.15).unwrap();
        let grid: Vec<f64> = (0..=1500).map(|k| k as f64 * 1e-9).collect();
        assert_eq!(slew_penalty(&zero, &grid).unwrap(), 0.0);

        let flat: Vec<f64> = (300..=1200).map(|k| k as f64 * 1e-9).collect();
        assert_eq!(slew_penalty(&one_tone(1.0, 0.0, 0.0), &flat).unwrap(), 0.0);

        // 9 whole periods inside the flat part
        let w = 2.0 * PI * 10e6;
        let measured = slew_penalty(&one_tone(1.0, w, 0.0), &flat).unwrap();
        let analytic = w * w / 2.0;
        assert!(measured > 0.0);
        assert!(((measured - analytic) / analytic).abs() < 0.05, "{measured} vs {analytic}");

        assert!(slew_penalty(&zero, &[0.0]).is_err());
        assert!(slew_penalty(&zero, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn vector_layout() {
        let p = PulseParams::new(
            vec![
                Tone { amplitude: 1.0, frequency: 2.0, phase: 3.0 },
                Tone { amplitude: 4.0, frequency: 5.0, phase: 6.0 },
            ],
            T,
            0.15,
        )
        .unwrap();
        let v = p.to_vector();
        assert_eq!(v, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(PulseParams::from_vector(&v, T, 0.15).unwrap(), p);
        assert!(PulseParams::from_vector(&v[..5], T, 0.15).is_err());
    }

    #[test]
    fn sampled_replay_hits_midpoints_exactly() {
        let p = one_tone(2e-4, 2.0 * PI * 3e6, 0.4);
        let s = SampledPulse::from_drive(&p, 100).unwrap();
        let dt = T / 100.0;
        for k in [0, 17, 99] {
            let t = (k as f64 + 0.5) * dt;
            assert_eq!(s.envelope_at(t).unwrap(), p.envelope_at(t).unwrap());
        }
        let back = SampledPulse::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back.times().len(), s.times().len());
        let t = 40.5 * dt;
        let rel = (back.envelope_at(t).unwrap() - s.envelope_at(t).unwrap()).abs() / 2e-4;
        assert!(rel < 1e-10);
        assert!(SampledPulse::from_csv("t_ns,env\n0,0\n1,0\n").is_err());
        assert!(SampledPulse::new(vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn tones_csv_round_trip() {
        let mut p = one_tone(2.5e-4, 2.0 * PI * 3.25e6, -1.2);
        p.carrier_offset = 7.0;
        let text = p.tones_csv();
        assert!(text.starts_with("amplitude_mT,frequency_MHz,phase_rad\n"));
        let back = PulseParams::from_tones_csv(&text, T, p.taper, 7.0).unwrap();
        let (a, b) = (p.tones[0], back.tones[0]);
        assert!((a.amplitude - b.amplitude).abs() < 1e-15);
        assert!((a.frequency - b.frequency).abs() / a.frequency < 1e-11);
        assert!((a.phase - b.phase).abs() < 1e-11);
        assert_eq!(back.carrier_offset, 7.0);
        assert!(PulseParams::from_tones_csv("amp,f\n1,2\n", T, 0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn envelope_bounded_and_linear(
            amps in proptest::collection::vec(-1.0f64..1.0, 1..6),
            scale in -3.0f64..3.0,
            frac in 0.0f64..1.0,
        ) {
            let tones: Vec<Tone> = amps.iter().enumerate().map(|(i, &a)| Tone {
                amplitude: a,
                frequency: 2.0 * PI * 1e6 * (i as f64 + 0.3),
                phase: 0.7 * i as f64,
            }).collect();
            let p = PulseParams::new(tones.clone(), T, 0.15).unwrap();
            let t = frac * T;
            let e = envelope(t, &p).unwrap();
            let bound: f64 = amps.iter().map(|a| a.abs()).sum();
            prop_assert!(e.abs() <= bound + 1e-12);

            let scaled = PulseParams::new(
                tones.iter().map(|k| Tone { amplitude: scale * k.amplitude, ..*k }).collect(),
                T,
                0.15,
            ).unwrap();
            prop_assert!((envelope(t, &scaled).unwrap() - scale * e).abs() <= 1e-12);
        }
    }
}
