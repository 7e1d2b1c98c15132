//! Butterworth design as cascaded second-order sections.
//!
//! Analog prototype poles, lowpass-to-lowpass or lowpass-to-bandpass
//! transformation, then the bilinear map with prewarped band edges.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DspError, Result};

/// One biquad, `a0` normalised to 1:
/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Gain at DC.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterBand {
    Lowpass { cutoff_hz: f64 },
    Bandpass { low_hz: f64, high_hz: f64 },
}

/// A digital filter as a cascade of biquads, with its design metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub band: FilterBand,
    pub fs_hz: f64,
}

impl SosFilter {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.fs_hz;
        let z_inv = Complex64::new(libm::cos(w), -libm::sin(w));
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0 - 1e-9
    }
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let m = 2.0 * k as f64 - order as f64 + 1.0;
            -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64))
        })
        .collect()
}

fn prewarp(freq_hz: f64, fs_hz: f64) -> f64 {
    2.0 * fs_hz * libm::tan(PI * freq_hz / fs_hz)
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

fn bilinear(analog: Zpk, fs_hz: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs_hz, 0.0);
    let map = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let mut zeros: Vec<Complex64> = analog.zeros.iter().map(map).collect();
    let poles: Vec<Complex64> = analog.poles.iter().map(map).collect();
    // Zeros at infinity land on Nyquist.
    zeros.resize(poles.len(), Complex64::new(-1.0, 0.0));
    let num: Complex64 = analog.zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = analog.poles.iter().map(|p| fs2 - p).product();
    Zpk {
        zeros,
        poles,
        gain: analog.gain * (num / den).re,
    }
}

const REAL_TOL: f64 = 1e-9;

/// Splits roots into conjugate pairs (upper half-plane kept once) and reals.
fn split_roots(roots: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
    let mut complex = Vec::new();
    let mut real = Vec::new();
    for r in roots {
        if libm::fabs(r.im) <= REAL_TOL * (1.0 + r.norm()) {
            real.push(r.re);
        } else if r.im > 0.0 {
            complex.push(*r);
        }
    }
    (complex, real)
}

/// Quadratic coefficients `[c1, c2]` of `(1 - r1 z⁻¹)(1 - r2 z⁻¹)`, plus the
/// number of roots each factor carries.
fn quadratics(roots: &[Complex64]) -> Vec<[f64; 2]> {
    let (complex, mut real) = split_roots(roots);
    let mut out: Vec<[f64; 2]> = complex
        .iter()
        .map(|r| [-2.0 * r.re, r.norm_sqr()])
        .collect();
    real.sort_by(f64::total_cmp);
    // Pair extremes so a +1 zero sits with a -1 zero.
    let (mut lo, mut hi) = (0, real.len());
    while hi - lo >= 2 {
        let (r1, r2) = (real[lo], real[hi - 1]);
        out.push([-(r1 + r2), r1 * r2]);
        lo += 1;
        hi -= 1;
    }
    if hi - lo == 1 {
        out.push([-real[lo], 0.0]);
    }
    out
}

fn to_sos(digital: Zpk) -> Vec<Biquad> {
    let mut den = quadratics(&digital.poles);
    // Sections ordered from the pole farthest from the unit circle inwards.
    den.sort_by(|a, b| libm::fabs(a[1]).total_cmp(&libm::fabs(b[1])));
    let num = quadratics(&digital.zeros);
    den.iter()
        .enumerate()
        .map(|(i, a)| {
            let b = num.get(i).map_or([1.0, 0.0, 0.0], |c| [1.0, c[0], c[1]]);
            Biquad { b, a: *a }
        })
        .enumerate()
        .map(|(i, mut s)| {
            if i == 0 {
                s.b.iter_mut().for_each(|v| *v *= digital.gain);
            }
            s
        })
        .collect()
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 {
        return Err(DspError::InvalidOrder(order));
    }
    Ok(())
}

/// Butterworth bandpass of the given prototype order (digital order `2·order`).
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs_hz: f64,
) -> Result<SosFilter> {
    check_order(order)?;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand {
            low_hz,
            high_hz,
            fs_hz,
        });
    }
    let (w1, w2) = (prewarp(low_hz, fs_hz), prewarp(high_hz, fs_hz));
    let bw = w2 - w1;
    let w0_sq = Complex64::new(w1 * w2, 0.0);
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        poles.push(half + root);
        poles.push(half - root);
    }
    let analog = Zpk {
        zeros: alloc::vec![Complex64::new(0.0, 0.0); order],
        poles,
        gain: libm::pow(bw, order as f64),
    };
    Ok(SosFilter {
        sections: to_sos(bilinear(analog, fs_hz)),
        order,
        band: FilterBand::Bandpass { low_hz, high_hz },
        fs_hz,
    })
}

/// Butterworth lowpass of the given order.
pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<SosFilter> {
    check_order(order)?;
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand {
            low_hz: 0.0,
            high_hz: cutoff_hz,
            fs_hz,
        });
    }
    let wc = prewarp(cutoff_hz, fs_hz);
    let analog = Zpk {
        zeros: Vec::new(),
        poles: prototype_poles(order).iter().map(|p| p * wc).collect(),
        gain: libm::pow(wc, order as f64),
    };
    Ok(SosFilter {
        sections: to_sos(bilinear(analog, fs_hz)),
        order,
        band: FilterBand::Lowpass { cutoff_hz },
        fs_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandpass_zeros_at_dc_and_nyquist() {
        let f = design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap();
        assert_eq!(f.sections.len(), 5);
        assert!(f.magnitude(0.0) < 1e-10);
        assert!(f.magnitude(125.0) < 1e-10);
    }

    #[test]
    fn bandpass_corners_and_center() {
        let f = design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap();
        let corner = core::f64::consts::FRAC_1_SQRT_2;
        for edge in [4.0, 40.0] {
            let m = f.magnitude(edge);
            assert!((m - corner).abs() / corner < 0.02, "{edge} Hz: {m}");
        }
        let center = f.magnitude(libm::sqrt(160.0));
        assert!((0.99..=1.0 + 1e-12).contains(&center), "{center}");
        assert!(f.is_stable());
    }

    #[test]
    fn lowpass_unit_dc_gain() {
        let f = design_butterworth_lowpass(8, 100.0, 1000.0).unwrap();
        assert_eq!(f.sections.len(), 4);
        assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
        assert!((f.magnitude(100.0) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(f.magnitude(500.0) < 1e-12);
        assert!(f.is_stable());
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(matches!(
            design_butterworth_bandpass(0, 4.0, 40.0, 250.0),
            Err(DspError::InvalidOrder(0))
        ));
        for (lo, hi) in [(0.0, 40.0), (40.0, 4.0), (4.0, 125.0), (-1.0, 10.0)] {
            assert!(matches!(
                design_butterworth_bandpass(5, lo, hi, 250.0),
                Err(DspError::InvalidBand { .. })
            ));
        }
    }

    #[test]
    fn odd_prototype_puts_real_pole_pair_in_one_section() {
        // Wide band: the real prototype pole maps to two real bandpass poles.
        let f = design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap();
        let real_sections = f
            .sections
            .iter()
            .filter(|s| s.poles().iter().all(|p| p.im.abs() < 1e-12))
            .count();
        assert_eq!(real_sections, 1);
    }
}
