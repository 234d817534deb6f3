use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Waveform;

/// Magnitude of the analytic signal, computed with one full-length DFT.
pub fn envelope(w: &Waveform) -> Vec<f64> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = w.samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // one-sided spectrum doubling
    let half = n / 2;
    for (k, b) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *b *= h;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.norm() * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_signal() {
        assert!(envelope(&Waveform::zeros(100, 16_000)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steady_tone_has_flat_envelope() {
        let sr = 16_000;
        let a = 0.7;
        // whole number of cycles keeps the DFT leakage-free
        let w = Waveform::new(
            (0..16_000)
                .map(|i| a * (2.0 * PI * 500.0 * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap();
        let env = envelope(&w);
        for v in &env[200..15_800] {
            assert!((v - a).abs() < 1e-6);
        }
    }

    #[test]
    fn am_tone_is_demodulated() {
        let sr = 16_000;
        let amp = |t: f64| 0.5 + 0.3 * (2.0 * PI * 4.0 * t).cos();
        let w = Waveform::new(
            (0..16_000)
                .map(|i| {
                    let t = i as f64 / sr as f64;
                    amp(t) * (2.0 * PI * 1000.0 * t).sin()
                })
                .collect(),
            sr,
        )
        .unwrap();
        let env = envelope(&w);
        for i in 500..15_500 {
            let t = i as f64 / sr as f64;
            assert!((env[i] - amp(t)).abs() < 1e-3, "{i}");
        }
    }

    #[test]
    fn negation_invariant() {
        let w = Waveform::new((0..257).map(|i| ((i * 37) % 11) as f64 - 5.0).collect(), 8000).unwrap();
        let a = envelope(&w);
        let b = envelope(&w.scaled(-1.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
            assert!(*x >= 0.0);
        }
    }
}
