use std::f64::consts::PI;

use ndarray::{Array2, Array3};

use super::{wrap_angle, SceneSpec, SourceSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub height: usize,
    pub width: usize,
    /// Meters assigned to background pixels.
    pub bg_depth: f64,
}

impl Default for RasterConfig {
    /// 32 x 64 panorama, background at 40 m.
    fn default() -> Self {
        RasterConfig {
            height: 32,
            width: 64,
            bg_depth: 40.0,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "grid {}x{} is below the 8x8 minimum",
                self.height, self.width
            )));
        }
        if !(self.bg_depth > 0.0) {
            return Err(Error::Config("background depth must be positive".into()));
        }
        Ok(())
    }

    /// Azimuth at the center of column `c`.
    pub fn column_azimuth(&self, c: usize) -> f64 {
        -PI + 2.0 * PI * (c as f64 + 0.5) / self.width as f64
    }

    /// Elevation at the center of row `r` (row 0 at the top).
    pub fn row_elevation(&self, r: usize) -> f64 {
        PI / 2.0 - PI * (r as f64 + 0.5) / self.height as f64
    }

    /// Pixels per radian of azimuth.
    pub fn columns_per_radian(&self) -> f64 {
        self.width as f64 / (2.0 * PI)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMaps {
    /// 0 background, else a [`super::SourceClass`] id.
    pub labels: Array2<u8>,
    /// Meters.
    pub depth: Array2<f64>,
    /// `(H, W, 2)`: horizontal then vertical displacement in pixels.
    pub flow: Array3<f64>,
}

/// Pixels covered by a source's rectangle when it sits at `azimuth` and
/// `distance`. A rectangle always covers at least the pixel holding its
/// center.
pub(crate) fn footprint(src: &SourceSpec, azimuth: f64, distance: f64, cfg: &RasterConfig) -> Vec<(usize, usize)> {
    let (w, h) = src.class.size();
    let half_w = 0.5 * w / distance;
    let half_h = 0.5 * h / distance;
    let col_step = 2.0 * PI / cfg.width as f64;
    let row_step = PI / cfg.height as f64;
    let rows: Vec<usize> = (0..cfg.height)
        .filter(|&r| cfg.row_elevation(r).abs() <= half_h.max(0.5 * row_step))
        .collect();
    let cols: Vec<usize> = (0..cfg.width)
        .filter(|&c| wrap_angle(cfg.column_azimuth(c) - azimuth).abs() <= half_w.max(0.5 * col_step))
        .collect();
    rows.iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect()
}

/// Label frame at time `t`; sources are held at `distance(t)`, nearer ones
/// painted last.
pub fn label_frame(scene: &SceneSpec, t: f64, cfg: &RasterConfig) -> Array2<u8> {
    let mut labels = Array2::zeros((cfg.height, cfg.width));
    for src in by_depth(scene, t) {
        for (r, c) in footprint(src, src.azimuth(t), src.distance(t), cfg) {
            labels[[r, c]] = src.class.id();
        }
    }
    labels
}

fn by_depth(scene: &SceneSpec, t: f64) -> Vec<&SourceSpec> {
    let mut order: Vec<&SourceSpec> = scene.sources.iter().collect();
    // far to near; stable so equal distances keep list order
    order.sort_by(|a, b| b.distance(t).total_cmp(&a.distance(t)));
    order
}

/// Panoramic semantic, depth and flow maps at `t_mid`, with flow measuring
/// each source's displacement until `t_next`.
pub fn rasterize_ground_truth(
    scene: &SceneSpec,
    t_mid: f64,
    t_next: f64,
    cfg: &RasterConfig,
) -> Result<GroundTruthMaps> {
    cfg.validate()?;
    if !(0.0 <= t_mid && t_mid < t_next && t_next <= scene.duration) {
        return Err(Error::Config(format!(
            "need 0 <= t_mid < t_next <= {}, got {t_mid}, {t_next}",
            scene.duration
        )));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut labels = Array2::zeros((h, w));
    let mut depth = Array2::from_elem((h, w), cfg.bg_depth);
    let mut flow = Array3::zeros((h, w, 2));
    let ppr = cfg.columns_per_radian();
    for src in by_depth(scene, t_mid) {
        let d = src.distance(t_mid);
        let dx = (src.azimuth(t_next) - src.azimuth(t_mid)) * ppr;
        for (r, c) in footprint(src, src.azimuth(t_mid), d, cfg) {
            labels[[r, c]] = src.class.id();
            depth[[r, c]] = d;
            flow[[r, c, 0]] = dx;
            flow[[r, c, 1]] = 0.0;
        }
    }
    Ok(GroundTruthMaps { labels, depth, flow })
}

#[cfg(test)]
mod tests {
    use super::super::SourceClass;
    use super::*;

    fn scene(sources: Vec<SourceSpec>) -> SceneSpec {
        SceneSpec {
            sources,
            duration: 1.0,
            sample_rate: 16000,
            noise_floor: 0.0,
            rng_seed: 0,
        }
    }

    fn src(class: SourceClass, az: f64, d: f64, w: f64) -> SourceSpec {
        SourceSpec {
            class,
            azimuth0: az,
            distance0: d,
            angular_velocity: w,
            radial_velocity: 0.0,
            timbre_seed: 0,
            base_gain: 1.0,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let cfg = RasterConfig::default();
        let m = rasterize_ground_truth(&scene(vec![]), 0.5, 0.75, &cfg).unwrap();
        assert!(m.labels.iter().all(|&l| l == 0));
        assert!(m.depth.iter().all(|&d| d == 40.0));
        assert!(m.flow.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn static_source_has_zero_flow_and_its_depth() {
        let cfg = RasterConfig::default();
        let m = rasterize_ground_truth(&scene(vec![src(SourceClass::Car, 0.3, 3.0, 0.0)]), 0.5, 0.75, &cfg).unwrap();
        let mut n = 0;
        for ((r, c), &l) in m.labels.indexed_iter() {
            if l > 0 {
                n += 1;
                assert_eq!(l, 1);
                assert_eq!(m.depth[[r, c]], 3.0);
                assert_eq!(m.flow[[r, c, 0]], 0.0);
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn flow_follows_projection_arithmetic() {
        let cfg = RasterConfig::default();
        let omega = 0.4;
        let m = rasterize_ground_truth(&scene(vec![src(SourceClass::Tram, -1.0, 2.5, omega)]), 0.5, 0.75, &cfg).unwrap();
        let expect = omega * 0.25 * 64.0 / (2.0 * PI);
        for ((r, c), &l) in m.labels.indexed_iter() {
            if l > 0 {
                assert!((m.flow[[r, c, 0]] - expect).abs() < 1e-12);
                assert_eq!(m.flow[[r, c, 1]], 0.0);
            }
        }
    }

    #[test]
    fn nearer_source_wins_and_width_scales() {
        let cfg = RasterConfig::default();
        let near = src(SourceClass::Motorcycle, 0.0, 2.0, 0.0);
        let far = src(SourceClass::Car, 0.0, 4.0, 0.0);
        let m = rasterize_ground_truth(&scene(vec![near, far]), 0.5, 0.75, &cfg).unwrap();
        let center = (cfg.height / 2, cfg.width / 2);
        assert_eq!(m.labels[center], 3);
        let cols = |d: f64| footprint(&far, 0.0, d, &cfg).iter().filter(|p| p.0 == center.0).count();
        assert!(cols(2.0) > cols(4.0));
    }

    #[test]
    fn wraps_across_the_seam() {
        let cfg = RasterConfig::default();
        let m = rasterize_ground_truth(&scene(vec![src(SourceClass::Car, PI, 2.0, 0.0)]), 0.5, 0.75, &cfg).unwrap();
        let row = cfg.height / 2;
        assert!(m.labels[[row, 0]] > 0 && m.labels[[row, cfg.width - 1]] > 0);
    }

    #[test]
    fn small_grid_rejected() {
        let cfg = RasterConfig { height: 4, ..RasterConfig::default() };
        assert!(rasterize_ground_truth(&scene(vec![]), 0.5, 0.75, &cfg).is_err());
    }
}
