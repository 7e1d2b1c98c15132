use std::f64::consts::PI;

use btrn_core::dataset::{synth_generate, Session, SynthConfig};
use btrn_core::dsp::*;

fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
        .collect()
}

/// Least-squares amplitude and phase of a known-frequency sinusoid.
fn sine_fit(x: &[f64], freq: f64, fs: f64, offset: usize) -> (f64, f64) {
    let (mut ss, mut cc, mut sc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in x.iter().enumerate() {
        let ph = 2.0 * PI * freq * (k + offset) as f64 / fs;
        let (s, c) = ph.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (xs * cc - xc * sc) / det;
    let b = (xc * ss - xs * sc) / det;
    ((a * a + b * b).sqrt(), b.atan2(a))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn bandpass() -> SosFilter {
    design_butterworth_bandpass(5, 4.0, 40.0, 250.0).unwrap()
}

#[test]
fn frequency_response_matches_reference_design() {
    // Cascade response of scipy.signal.butter(5, [4, 40], 'bandpass', fs=250, output='sos').
    let reference = [
        (1.0, 0.0006194714364393104, 0.8271454167469489),
        (4.0, 0.7071067811865244, -2.356194490192316),
        (8.0, 0.999987343268462, 1.1412850564816557),
        (12.649110640673518, 1.0000000000000069, 0.07918694643233744),
        (25.0, 0.999674641380513, -1.605871901982617),
        (40.0, 0.7071067811865472, 2.3561944901923444),
        (60.0, 0.049845720233394564, 0.2880772344561975),
        (100.0, 0.00011420258328979749, -1.0423093110706871),
    ];
    let f = bandpass();
    for (freq, mag, phase) in reference {
        let h = f.response(freq);
        let want = num_complex::Complex64::from_polar(mag, phase);
        assert!((h - want).norm() < 1e-10, "{freq} Hz: {h} vs {want}");
    }
    assert_eq!(f.sections.len(), 5);
}

#[test]
fn lowpass_matches_reference_design() {
    // scipy.signal.butter(8, 100, fs=1000, output='sos') magnitudes.
    let f = decimation_filter(1000.0, 4).unwrap();
    for (freq, mag) in [
        (10.0, 1.0000000000000007),
        (100.0, 0.7071067811865472),
        (125.0, 0.14190460491292478),
        (300.0, 9.644875678001114e-06),
    ] {
        assert!((f.magnitude(freq) - mag).abs() < 1e-10, "{freq}");
    }
}

#[test]
fn filtfilt_matches_reference_output() {
    // scipy.signal.sosfiltfilt(sos, x, padtype='odd', padlen=30).
    let x: Vec<f64> = (0..400)
        .map(|i| {
            let t = i as f64 / 250.0;
            (2.0 * PI * 7.0 * t).sin()
                + 0.5 * (2.0 * PI * 31.0 * t + 0.3).cos()
                + 0.01 * i as f64
                + 0.2
        })
        .collect();
    let y = filtfilt(&bandpass(), &x).unwrap();
    let reference = [
        (0, 0.10357939821891701),
        (1, -0.05741300766288242),
        (37, -0.07159997173947186),
        (100, -1.4093953419834861),
        (199, -0.5157291603358065),
        (250, 0.4738443577472782),
        (398, 0.30107121395789377),
        (399, 0.10298877121604737),
    ];
    for (i, want) in reference {
        assert!((y[i] - want).abs() < 1e-10, "index {i}: {} vs {want}", y[i]);
    }
}

#[test]
fn decimate_matches_reference_output() {
    // scipy sosfiltfilt with butter(8, 100, fs=1000), padlen 24, then [::4].
    let x: Vec<f64> = (0..1000)
        .map(|i| {
            let t = i as f64 / 1000.0;
            (2.0 * PI * 10.0 * t).sin() + 0.3 * (2.0 * PI * 300.0 * t).sin()
        })
        .collect();
    let y = decimate(&x, 1000.0, 4).unwrap();
    assert_eq!(y.len(), 250);
    for (i, want) in [
        (0, 0.0016382205199141284),
        (1, 0.2484784430470284),
        (50, -1.8744077470711495e-13),
        (125, -9.913944665207453e-16),
        (249, -0.24566046842148065),
    ] {
        assert!((y[i] - want).abs() < 1e-10, "index {i}");
    }
}

#[test]
fn twelve_hz_passes_with_zero_lag() {
    let fs = 250.0;
    let x = sine(12.0, fs, 1000, 1.0);
    let y = filtfilt(&bandpass(), &x).unwrap();
    let (a, b) = (250, 750);
    let (amp, _) = sine_fit(&y[a..b], 12.0, fs, a);
    assert!((amp - 1.0).abs() < 0.02, "amplitude {amp}");
    let xcorr = |lag: isize| -> f64 { (a..b).map(|i| x[i] * y[(i as isize + lag) as usize]).sum() };
    let best = (-10isize..=10)
        .max_by(|&p, &q| xcorr(p).total_cmp(&xcorr(q)))
        .unwrap();
    assert_eq!(best, 0);
}

#[test]
fn one_hz_is_attenuated_40_db() {
    let x = sine(1.0, 250.0, 2500, 1.0);
    let y = filtfilt(&bandpass(), &x).unwrap();
    let ratio = rms(&y[500..2000]) / rms(&x[500..2000]);
    assert!(20.0 * ratio.log10() <= -40.0, "{ratio}");
}

#[test]
fn decimating_ten_hz_keeps_amplitude() {
    let x = sine(10.0, 1000.0, 4000, 1.0);
    let y = decimate(&x, 1000.0, 4).unwrap();
    assert_eq!(y.len(), 1000);
    let (amp, _) = sine_fit(&y[200..800], 10.0, 250.0, 200);
    assert!((amp - 1.0).abs() < 0.02, "{amp}");
}

#[test]
fn decimating_three_hundred_hz_removes_it() {
    let x = sine(300.0, 1000.0, 4000, 1.0);
    let y = decimate(&x, 1000.0, 4).unwrap();
    assert!(rms(&y) < 0.01 * rms(&x), "{}", rms(&y) / rms(&x));
}

#[test]
fn designs_are_stable_across_bands() {
    for (order, lo, hi, fs) in [
        (1, 1.0, 2.0, 250.0),
        (5, 4.0, 40.0, 250.0),
        (5, 0.5, 120.0, 250.0),
        (8, 8.0, 13.0, 1000.0),
        (4, 30.0, 400.0, 1000.0),
    ] {
        let f = design_butterworth_bandpass(order, lo, hi, fs).unwrap();
        assert!(f.max_pole_radius() < 1.0 - 1e-9, "{order} {lo} {hi} {fs}");
        let centre = (lo * hi).sqrt();
        assert!((f.magnitude(centre) - 1.0).abs() < 0.01);
    }
}

#[test]
fn fast_chain_matches_stepwise_chain() {
    let cfg = SynthConfig {
        n_subjects: 1,
        trials_per_direction: 2,
        ..SynthConfig::default()
    };
    let rec = synth_generate(&cfg, "sub1", Session::Execution).unwrap();
    let pp = PreprocessConfig::default();
    let fast = preprocess(rec.clone(), &pp).unwrap();
    let slow = preprocess_stepwise(rec, &pp).unwrap();
    assert_eq!(fast.len(), 12);
    assert_eq!(fast.epoch_shape(), Some((24, 750)));
    assert_eq!(fast.channel_labels, slow.channel_labels);
    let worst = fast
        .epochs
        .iter()
        .zip(&slow.epochs)
        .flat_map(|(a, b)| a.data.iter().flatten().zip(b.data.iter().flatten()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn car_removes_common_mode_exactly() {
    let common = sine(3.0, 100.0, 300, 5.0);
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            common
                .iter()
                .enumerate()
                .map(|(i, v)| v + (c as f64 + 1.0) * ((i * (c + 1)) as f64).sin())
                .collect()
        })
        .collect();
    let own: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            (0..300)
                .map(|i| (c as f64 + 1.0) * ((i * (c + 1)) as f64).sin())
                .collect()
        })
        .collect();
    let a = car(&rows).unwrap();
    let b = car(&own).unwrap();
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}
