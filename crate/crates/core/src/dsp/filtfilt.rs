//! Cascade filtering, forward-backward zero-phase filtering and decimation.

use alloc::vec::Vec;

use super::filter::{design_butterworth_lowpass, Biquad, SosFilter};
use super::{DspError, Result};

/// Anti-alias lowpass used by [`decimate`].
pub const DECIMATE_ORDER: usize = 8;
/// Anti-alias cutoff as a fraction of the post-decimation Nyquist frequency.
pub const DECIMATE_CUTOFF: f64 = 0.8;

/// Runs `x` through the cascade in transposed direct form II, starting each
/// section from `state` (two delays per section), which is updated in place.
/// All sections advance together one sample at a time.
pub fn sosfilt_with_state(sections: &[Biquad], x: &mut [f64], state: &mut [[f64; 2]]) {
    let n = sections.len().min(state.len());
    let (sections, state) = (&sections[..n], &mut state[..n]);
    for v in x.iter_mut() {
        let mut xin = *v;
        for (s, z) in sections.iter().zip(state.iter_mut()) {
            let y = s.b[0] * xin + z[0];
            z[0] = s.b[1] * xin - s.a[0] * y + z[1];
            z[1] = s.b[2] * xin - s.a[1] * y;
            xin = y;
        }
        *v = xin;
    }
}

/// Per-section delay state reached after a long unit step.
pub fn sosfilt_zi(sections: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let [_, b1, b2] = s.b;
            let [a1, a2] = s.a;
            let gain = s.dc_gain();
            let z1 = b2 - a2 * gain;
            let z0 = b1 - a1 * gain + z1;
            let zi = [z0 * scale, z1 * scale];
            scale *= gain;
            zi
        })
        .collect()
}

/// Reflection padding per end: three times the digital filter order.
pub fn filtfilt_padlen(filter: &SosFilter) -> usize {
    3 * 2 * filter.sections.len()
}

fn filter_from_edge(sections: &[Biquad], zi: &[[f64; 2]], x: &mut [f64]) {
    let x0 = x[0];
    let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect();
    sosfilt_with_state(sections, x, &mut state);
}

/// Zero-phase filtering: odd-reflection padding, a forward pass, a reverse
/// pass, then the padding is trimmed.
pub fn filtfilt(filter: &SosFilter, signal: &[f64]) -> Result<Vec<f64>> {
    let pad = filtfilt_padlen(filter);
    let n = signal.len();
    if n <= pad {
        return Err(DspError::SignalTooShort {
            len: n,
            min: pad + 1,
        });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (signal[0], signal[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = sosfilt_zi(&filter.sections);
    filter_from_edge(&filter.sections, &zi, &mut ext);
    ext.reverse();
    filter_from_edge(&filter.sections, &zi, &mut ext);
    ext.reverse();
    ext.truncate(pad + n);
    ext.drain(..pad);
    Ok(ext)
}

/// Designs the anti-alias lowpass used for a given rate and factor.
pub fn decimation_filter(fs_hz: f64, factor: usize) -> Result<SosFilter> {
    let nyquist = fs_hz / factor as f64 / 2.0;
    design_butterworth_lowpass(DECIMATE_ORDER, DECIMATE_CUTOFF * nyquist, fs_hz)
}

/// Zero-phase anti-alias lowpass then every `factor`-th sample from index 0.
/// Output length is `ceil(len / factor)`.
pub fn decimate(signal: &[f64], fs_hz: f64, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(DspError::InvalidFactor(factor));
    }
    if factor == 1 {
        return Ok(signal.to_vec());
    }
    decimate_with(&decimation_filter(fs_hz, factor)?, signal, factor)
}

/// [`decimate`] with a precomputed anti-alias filter.
pub fn decimate_with(filter: &SosFilter, signal: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(DspError::InvalidFactor(factor));
    }
    if signal.len() < 8 * factor {
        return Err(DspError::SignalTooShort {
            len: signal.len(),
            min: 8 * factor,
        });
    }
    let smooth = filtfilt(filter, signal)?;
    Ok(smooth.into_iter().step_by(factor).collect())
}

#[cfg(test)]
mod tests {
    use super::super::design_butterworth_bandpass;
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn sine(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
        let n = (fs * seconds) as usize;
        (0..n)
            .map(|i| libm::sin(2.0 * PI * freq * i as f64 / fs))
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    #[test]
    fn zeros_stay_zero() {
        let f = design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap();
        let y = filtfilt(&f, &vec![0.0; 500]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_start_is_transient_free_for_lowpass() {
        let f = design_butterworth_lowpass(4, 20.0, 250.0).unwrap();
        let y = filtfilt(&f, &vec![3.0; 200]).unwrap();
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn short_signals_are_rejected() {
        let f = design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap();
        assert_eq!(filtfilt_padlen(&f), 30);
        assert!(matches!(
            filtfilt(&f, &[1.0; 30]),
            Err(DspError::SignalTooShort { len: 30, min: 31 })
        ));
        assert!(filtfilt(&f, &[1.0; 31]).is_ok());
    }

    #[test]
    fn stopband_sine_is_crushed() {
        let f = design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap();
        let x = sine(1.0, 250.0, 4.0);
        let y = filtfilt(&f, &x).unwrap();
        let central = &y[250..750];
        let db = 20.0 * libm::log10(rms(central) / rms(&x[250..750]));
        assert!(db <= -40.0, "{db} dB");
    }

    #[test]
    fn decimate_constant() {
        let y = decimate(&vec![2.5; 1001], 1000.0, 4).unwrap();
        assert_eq!(y.len(), 251);
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn decimate_errors() {
        assert_eq!(
            decimate(&[1.0; 100], 1000.0, 0),
            Err(DspError::InvalidFactor(0))
        );
        assert!(matches!(
            decimate(&[1.0; 31], 1000.0, 4),
            Err(DspError::SignalTooShort { .. })
        ));
        assert_eq!(decimate(&[1.0, 2.0], 1000.0, 1).unwrap(), vec![1.0, 2.0]);
    }
}
