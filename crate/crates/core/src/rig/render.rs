use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{channel_paths, RigGeometry, SceneSpec, SourceClass};
use crate::dsp::Waveform;
use crate::error::Result;

/// RMS of every emitter before distance attenuation.
pub const EMITTER_RMS: f64 = 0.2;

/// A source signal as a finite sum of sinusoids, silent before `t = 0`.
///
/// Being analytic, it can be read at any fractional delay exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Emitter {
    /// `(angular frequency, amplitude, phase)`.
    pub partials: Vec<(f64, f64, f64)>,
}

impl Emitter {
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.partials.iter().map(|&(w, a, p)| a * (w * t + p).sin()).sum()
    }

    /// Long-run RMS.
    pub fn rms(&self) -> f64 {
        (self.partials.iter().map(|&(_, a, _)| a * a / 2.0).sum::<f64>()).sqrt()
    }
}

fn harmonics(rng: &mut ChaCha8Rng, f0: f64, top: f64, odd_only: bool, decay: f64, out: &mut Vec<(f64, f64)>) {
    let mut k = 1usize;
    while k as f64 * f0 < top {
        if !odd_only || k % 2 == 1 {
            let jitter = rng.gen_range(0.8..1.2);
            out.push((k as f64 * f0, jitter / (k as f64).powf(decay)));
        }
        k += 1;
    }
}

fn noise_band(rng: &mut ChaCha8Rng, lo: f64, hi: f64, count: usize, level: f64, out: &mut Vec<(f64, f64)>) {
    let a = level / (count as f64).sqrt();
    for _ in 0..count {
        out.push((rng.gen_range(lo..hi), a * rng.gen_range(0.5..1.5)));
    }
}

/// Class-specific timbre drawn from `seed`, scaled to [`EMITTER_RMS`].
pub fn emitter(class: SourceClass, seed: u64, sample_rate: u32) -> Emitter {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyq = 0.45 * sample_rate as f64;
    let mut parts = Vec::new();
    match class {
        SourceClass::Car => {
            let f0 = rng.gen_range(80.0..120.0);
            harmonics(&mut rng, f0, 2500f64.min(nyq), false, 1.0, &mut parts);
            noise_band(&mut rng, 200.0, 4000f64.min(nyq), 24, 0.6, &mut parts);
        }
        SourceClass::Tram => {
            let f0 = rng.gen_range(300.0..500.0);
            harmonics(&mut rng, f0, 2100f64.min(nyq), false, 1.5, &mut parts);
            noise_band(&mut rng, 2500f64.min(nyq * 0.5), 7000f64.min(nyq), 24, 0.8, &mut parts);
        }
        SourceClass::Motorcycle => {
            let f0 = rng.gen_range(40.0..70.0);
            harmonics(&mut rng, f0, 3000f64.min(nyq), true, 0.8, &mut parts);
            noise_band(&mut rng, 100.0, 1500f64.min(nyq), 12, 0.3, &mut parts);
        }
    }
    let mut e = Emitter {
        partials: parts
            .into_iter()
            .map(|(f, a)| (2.0 * PI * f, a, rng.gen_range(0.0..2.0 * PI)))
            .collect(),
    };
    let s = EMITTER_RMS / e.rms();
    e.partials.iter_mut().for_each(|p| p.1 *= s);
    e
}

/// Renders all eight rig channels, indexed by `channel id - 1`.
///
/// Delays and gains follow the instantaneous source position at each output
/// sample.
pub fn render_scene(scene: &SceneSpec, g: &RigGeometry) -> Result<Vec<Waveform>> {
    scene.validate()?;
    let n = scene.num_samples();
    let sr = scene.sample_rate as f64;
    let mut chans = vec![vec![0.0f64; n]; 8];
    for src in &scene.sources {
        let em = emitter(src.class, src.timbre_seed, scene.sample_rate);
        for i in 0..n {
            let t = i as f64 / sr;
            let paths = channel_paths(src, t, g);
            for (c, &(delay, gain)) in paths.iter().enumerate() {
                chans[c][i] += gain * em.value(t - delay);
            }
        }
    }
    if scene.noise_floor > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
        let normal = Normal::new(0.0, scene.noise_floor).expect("finite noise floor");
        for ch in chans.iter_mut() {
            for s in ch.iter_mut() {
                *s += normal.sample(&mut rng);
            }
        }
    }
    Ok(chans
        .into_iter()
        .enumerate()
        .map(|(c, samples)| Waveform {
            samples,
            sample_rate: scene.sample_rate,
            channel_id: Some(c as u8 + 1),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::{itd, SourceSpec};
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn scene(sources: Vec<SourceSpec>, noise: f64) -> SceneSpec {
        SceneSpec {
            sources,
            duration: 0.25,
            sample_rate: 16000,
            noise_floor: noise,
            rng_seed: 9,
        }
    }

    fn source(az: f64, d: f64, gain: f64) -> SourceSpec {
        SourceSpec {
            class: SourceClass::Car,
            azimuth0: az,
            distance0: d,
            angular_velocity: 0.0,
            radial_velocity: 0.0,
            timbre_seed: 3,
            base_gain: gain,
        }
    }

    #[test]
    fn empty_scene_is_silent() {
        let out = render_scene(&scene(vec![], 0.0), &RigGeometry::default()).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|w| w.samples.iter().all(|&s| s == 0.0)));
    }

    #[test]
    fn gain_is_linear_and_distance_inverse() {
        let g = RigGeometry::default();
        let a = render_scene(&scene(vec![source(0.4, 2.0, 1.0)], 0.0), &g).unwrap();
        let b = render_scene(&scene(vec![source(0.4, 2.0, 2.0)], 0.0), &g).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.samples.iter().zip(&y.samples) {
                assert!((2.0 * p - q).abs() < 1e-12);
            }
        }
        // same arrival structure at 4 m, shifted by the extra travel time
        let far = render_scene(&scene(vec![source(0.4, 4.0, 1.0)], 0.0), &g).unwrap();
        let em = emitter(SourceClass::Car, 3, 16000);
        let ch = 2;
        let paths2 = channel_paths(&source(0.4, 2.0, 1.0), 0.0, &g);
        let paths4 = channel_paths(&source(0.4, 4.0, 1.0), 0.0, &g);
        for i in [1000usize, 2000, 3000] {
            let t = i as f64 / 16000.0;
            let near_unit = em.value(t - paths2[ch].0) * paths2[ch].1;
            let far_unit = em.value(t - paths4[ch].0) * paths4[ch].1;
            assert!((a[ch].samples[i] - near_unit).abs() < 1e-12);
            assert!((far[ch].samples[i] - far_unit).abs() < 1e-12);
        }
        assert!((paths4[ch].1 * 2.0 - paths2[ch].1).abs() < 1e-12);
    }

    #[test]
    fn onsets_follow_path_lengths() {
        let g = RigGeometry::default();
        let out = render_scene(&scene(vec![source(FRAC_PI_2, 3.0, 1.0)], 0.0), &g).unwrap();
        let onset = |w: &Waveform| w.samples.iter().position(|&s| s != 0.0).unwrap();
        let paths = channel_paths(&source(FRAC_PI_2, 3.0, 1.0), 0.0, &g);
        for (c, w) in out.iter().enumerate() {
            let expect = (paths[c].0 * 16000.0).ceil() as usize;
            assert!((onset(w) as i64 - expect as i64).abs() <= 1, "channel {}", c + 1);
        }
        // source on the left of the front pair: channel 3 hears it first
        assert!(onset(&out[2]) < onset(&out[7]));
        assert!(itd(FRAC_PI_2, &g) > 0.0);
    }

    #[test]
    fn emitters_are_seeded_and_normalized() {
        for class in SourceClass::ALL {
            let a = emitter(class, 11, 16000);
            assert_eq!(a, emitter(class, 11, 16000));
            assert_ne!(a, emitter(class, 12, 16000));
            assert!((a.rms() - EMITTER_RMS).abs() < 1e-12);
            assert!(a.partials.iter().all(|p| p.0 / (2.0 * PI) < 8000.0));
        }
    }

    #[test]
    fn noise_is_reproducible() {
        let g = RigGeometry::default();
        let a = render_scene(&scene(vec![], 0.01), &g).unwrap();
        let b = render_scene(&scene(vec![], 0.01), &g).unwrap();
        assert_eq!(a, b);
        assert!((a[0].rms() - 0.01).abs() < 1e-3);
    }
}
