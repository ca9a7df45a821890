//! Second-order IIR notch, applied forward-backward for zero phase.

use super::DataError;

/// Normalized biquad coefficients (a0 = 1).
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Cookbook notch at `f0` with quality factor `q`. Unit gain at DC and
    /// Nyquist, a null at `f0`.
    pub fn notch(fs: f64, f0: f64, q: f64) -> Result<Self, DataError> {
        if !(f0 > 0.0 && f0 < fs / 2.0) || !fs.is_finite() || q <= 0.0 {
            return Err(DataError::InvalidFrequency { f0, fs });
        }
        let omega = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = omega.sin() / (2.0 * q);
        let cos_w = omega.cos();
        let a0 = 1.0 + alpha;
        Ok(Biquad {
            b0: 1.0 / a0,
            b1: -2.0 * cos_w / a0,
            b2: 1.0 / a0,
            a1: -2.0 * cos_w / a0,
            a2: (1.0 - alpha) / a0,
        })
    }

    /// Direct-form II transposed, from the given state.
    fn run(&self, x: &[f64], state: (f64, f64)) -> Vec<f64> {
        let (mut z1, mut z2) = state;
        let mut out = Vec::with_capacity(x.len());
        for &xi in x {
            let y = self.b0 * xi + z1;
            z1 = self.b1 * xi - self.a1 * y + z2;
            z2 = self.b2 * xi - self.a2 * y;
            out.push(y);
        }
        out
    }

    /// Steady-state initial conditions for a unit step, so a constant input
    /// passes through without a startup transient.
    fn step_state(&self) -> (f64, f64) {
        let dc_gain = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        let z2 = self.b2 - self.a2 * dc_gain;
        let z1 = self.b1 - self.a1 * dc_gain + z2;
        (z1, z2)
    }
}

/// Zero-phase filtering: periodic-extension padding at both ends, a
/// forward pass and a reversed pass, each started from scaled steady state.
///
/// Reflection padding folds the phase of high-frequency content at the
/// joints, and a narrow notch rings there for its whole decay time —
/// periodic extension instead keeps whole-cycle oscillations (a mains
/// tone on a second-aligned window) continuous through the pads. The pad
/// length covers several ringing times of the filter's poles, capped by
/// the signal length.
pub fn filtfilt(filter: &Biquad, x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let pole_radius = filter.a2.abs().sqrt().min(0.9999);
    let ringing = (1.0 / (1.0 - pole_radius)).ceil() as usize;
    let pad = (6 * ringing).max(9).min(x.len() - 1);
    let n = x.len();
    let mut extended = Vec::with_capacity(n + 2 * pad);
    extended.extend_from_slice(&x[n - pad..]);
    extended.extend_from_slice(x);
    extended.extend_from_slice(&x[..pad]);

    let (z1, z2) = filter.step_state();
    let scale = extended[0];
    let forward = filter.run(&extended, (z1 * scale, z2 * scale));
    let mut reversed: Vec<f64> = forward.into_iter().rev().collect();
    let scale = reversed[0];
    reversed = filter.run(&reversed, (z1 * scale, z2 * scale));
    reversed.reverse();
    reversed[pad..pad + x.len()].to_vec()
}

/// The preprocessing notch: zero-phase, defaults 50 Hz at Q = 30.
pub fn notch_filter(x: &[f64], fs: f64, f0: f64, q: f64) -> Result<Vec<f64>, DataError> {
    let filter = Biquad::notch(fs, f0, q)?;
    Ok(filtfilt(&filter, x))
}
