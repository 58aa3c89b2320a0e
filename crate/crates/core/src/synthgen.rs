//! Synthetic radiograph-like scenes with exactly one annotated point.
//!
//! An endotracheal-tube analog enters from the top edge and ends at the
//! target tip; a carina analog is a V-shaped bifurcation whose junction is
//! the target. The tracheostomy-tube distractor is a short curved segment
//! whose end looks locally like a tube tip.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::ingest::{GrayImage, SampleRecord, TargetClass};

/// Gaussian falloff of the line profile outside the solid core, in pixels.
const EDGE_SIGMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// `(H, W)` in pixels.
    pub image_size: (usize, usize),
    pub noise_std: f64,
    pub tube_width_px: usize,
    pub ett_min_len_frac: f64,
    pub ett_max_len_frac: f64,
    pub tt_len_frac: f64,
    pub distractor_prob: f64,
    pub target_class: TargetClass,
    pub carina_branch_angle_deg: f64,
    pub pixel_spacing_mm: Option<f64>,
    /// Constant `(dx, dy)` added to every sampled target point.
    pub tip_bias_px: (f64, f64),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: (64, 64),
            noise_std: 0.05,
            tube_width_px: 3,
            ett_min_len_frac: 0.1,
            ett_max_len_frac: 0.9,
            tt_len_frac: 0.25,
            distractor_prob: 0.5,
            target_class: TargetClass::EttTip,
            carina_branch_angle_deg: 60.0,
            pixel_spacing_mm: None,
            tip_bias_px: (0.0, 0.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub record: SampleRecord,
    pub has_target: bool,
    pub has_distractor: bool,
}

/// Closed interval of admissible target coordinates along one axis.
type Range = (f64, f64);

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        ensure!(h >= 16 && w >= 16, InvalidArgument, "image_size {h}×{w} is below 16×16");
        ensure!(
            self.noise_std >= 0.0 && self.noise_std.is_finite(),
            InvalidArgument,
            "noise_std must be a non-negative number"
        );
        ensure!(self.tube_width_px >= 1, InvalidArgument, "tube_width_px must be at least 1");
        ensure!(
            0.0 < self.ett_min_len_frac
                && self.ett_min_len_frac <= self.ett_max_len_frac
                && self.ett_max_len_frac <= 1.0,
            InvalidArgument,
            "need 0 < ett_min_len_frac <= ett_max_len_frac <= 1"
        );
        ensure!(
            self.tt_len_frac > 0.0 && self.tt_len_frac < 1.0,
            InvalidArgument,
            "tt_len_frac must lie in (0, 1)"
        );
        ensure!(
            (0.0..=1.0).contains(&self.distractor_prob),
            InvalidArgument,
            "distractor_prob must lie in [0, 1]"
        );
        ensure!(
            self.carina_branch_angle_deg > 0.0 && self.carina_branch_angle_deg < 180.0,
            InvalidArgument,
            "carina_branch_angle_deg must lie in (0, 180)"
        );
        if let Some(s) = self.pixel_spacing_mm {
            ensure!(s > 0.0 && s.is_finite(), InvalidArgument, "pixel_spacing_mm must be positive");
        }
        let (xr, yr) = self.tip_ranges()?;
        let tw = self.tube_width_px as f64;
        let (bx, by) = self.tip_bias_px;
        ensure!(
            xr.0 + bx >= tw && xr.1 + bx <= w as f64 - tw && yr.0 + by >= tw && yr.1 + by <= h as f64 - tw,
            InvalidArgument,
            "tip_bias_px ({bx}, {by}) pushes targets to within a tube width of the border"
        );
        Ok(())
    }

    /// Edge margin for sampled targets: at least one tube width.
    pub fn margin(&self) -> f64 {
        let (h, w) = self.image_size;
        (self.tube_width_px as f64).max(h.min(w) as f64 / 8.0)
    }

    /// Unbiased sampling ranges for the target `x` and `y`.
    fn tip_ranges(&self) -> Result<(Range, Range)> {
        let (h, w) = (self.image_size.0 as f64, self.image_size.1 as f64);
        let m = self.margin();
        let x = (m, w - m);
        // the target ends a tube entering from the top, so its depth follows the tube length
        let y = (m.max(self.ett_min_len_frac * h), (h - m).min(self.ett_max_len_frac * h));
        ensure!(
            x.0 <= x.1 && y.0 <= y.1,
            InvalidArgument,
            "no room for targets: x in [{}, {}], y in [{}, {}]",
            x.0,
            x.1,
            y.0,
            y.1
        );
        Ok((x, y))
    }
}

/// Independent generator for scene `index`; stream 1 is reserved for
/// distractor-only scenes so they never share randomness with positives.
fn scene_rng(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(2).wrapping_add(stream));
    rng
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

fn polyline_distance(p: (f64, f64), line: &[(f64, f64)]) -> f64 {
    line.windows(2)
        .map(|s| segment_distance(p, s[0], s[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Solid core of half-width `half`, Gaussian shoulder beyond it.
fn profile(d: f64, half: f64) -> f64 {
    if d <= half {
        1.0
    } else {
        let e = (d - half) / EDGE_SIGMA;
        (-0.5 * e * e).exp()
    }
}

/// Low-frequency background: a random linear gradient plus a broad vertical band.
fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let base = rng.random_range(0.15..0.3);
    let gx = rng.random_range(-0.1..0.1);
    let gy = rng.random_range(-0.1..0.1);
    let band_x = rng.random_range(0.3..0.7) * w as f64;
    let band_w = rng.random_range(0.2..0.35) * w as f64;
    let band_amp = rng.random_range(0.0..0.1);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = (r as f64 + 0.5) / h as f64 - 0.5;
        for c in 0..w {
            let xp = c as f64 + 0.5;
            let x = xp / w as f64 - 0.5;
            let band = band_amp * (-0.5 * ((xp - band_x) / band_w).powi(2)).exp();
            out.push(base + gx * x + gy * y + band);
        }
    }
    out
}

/// Near-vertical polyline from above the top edge down to `tip`.
fn tube_from_top(rng: &mut ChaCha8Rng, tip: (f64, f64), w: f64, tube_width: f64) -> Vec<(f64, f64)> {
    let x_top = tip.0 + rng.random_range(-0.1..0.1) * w;
    let amp = rng.random_range(0.0..2.0);
    let freq = rng.random_range(0.5..1.5);
    let phase = rng.random_range(0.0..2.0 * PI);
    let y0 = -tube_width;
    let n = 16;
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            // jitter vanishes at both ends so the tip stays exact
            let jitter = amp * (PI * t).sin() * (2.0 * PI * freq * t + phase).sin();
            (x_top + (tip.0 - x_top) * t + jitter, y0 + (tip.1 - y0) * t)
        })
        .collect()
}

/// Circular arc of `length` starting at `start`, heading `heading` radians
/// from straight down, turning by `turn` radians in total. Last point is the tip.
fn arc(start: (f64, f64), heading: f64, turn: f64, length: f64) -> Vec<(f64, f64)> {
    let n = 12;
    let step = length / n as f64;
    let mut pts = vec![start];
    let mut p = start;
    for k in 0..n {
        let a = heading + turn * (k as f64 + 0.5) / n as f64;
        p = (p.0 + step * a.sin(), p.1 + step * a.cos());
        pts.push(p);
    }
    pts
}

fn inside(p: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> bool {
    p.0 >= lo.0 && p.0 <= hi.0 && p.1 >= lo.1 && p.1 <= hi.1
}

/// Short curved distractor starting in the upper-middle region, on the side
/// away from `avoid_x` when there is a target.
fn distractor(rng: &mut ChaCha8Rng, cfg: &SceneConfig, avoid_x: Option<f64>) -> Vec<(f64, f64)> {
    let (h, w) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let left = match avoid_x {
        Some(x) => x > w / 2.0,
        None => rng.random_bool(0.5),
    };
    let x_s = if left {
        rng.random_range(0.15..0.4) * w
    } else {
        rng.random_range(0.6..0.85) * w
    };
    let y_s = rng.random_range(0.25..0.5) * h;
    let length = cfg.tt_len_frac * h;
    let heading = rng.random_range(-PI / 6.0..PI / 6.0);
    let turn = rng.random_range(PI / 4.0..PI / 2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let m = cfg.margin();
    let (lo, hi) = ((m, m), (w - m, h - m));
    let mut line = arc((x_s, y_s), heading, turn, length);
    if !inside(*line.last().unwrap(), lo, hi) {
        line = arc((x_s, y_s), heading, -turn, length);
    }
    if !inside(*line.last().unwrap(), lo, hi) {
        line = arc((x_s, y_s), 0.0, 0.0, length.min(h - m - y_s));
    }
    line
}

fn render(
    bg: &[f64],
    lines: &[Vec<(f64, f64)>],
    amp: f64,
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let (h, w) = cfg.image_size;
    let half = cfg.tube_width_px as f64 / 2.0;
    let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
    let mut pixels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = lines
                .iter()
                .map(|l| polyline_distance(p, l))
                .fold(f64::INFINITY, f64::min);
            let line = if d.is_finite() { amp * profile(d, half) } else { 0.0 };
            let n = if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            pixels.push((bg[r * w + c] + line + n).clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage {
        height: h,
        width: w,
        pixels,
    }
}

enum Kind {
    Target,
    DistractorOnly,
}

fn build(cfg: &SceneConfig, index: u64, kind: Kind) -> Result<SyntheticScene> {
    cfg.validate()?;
    let (h, w) = cfg.image_size;
    let (stream, prefix) = match kind {
        Kind::Target => (0, "case"),
        Kind::DistractorOnly => (1, "neg"),
    };
    let mut rng = scene_rng(cfg.seed, index, stream);
    let bg = background(&mut rng, h, w);
    let amp = rng.random_range(0.45..0.6);
    let tw = cfg.tube_width_px as f64;
    let mut lines = Vec::new();
    let (point, has_distractor) = match kind {
        Kind::Target => {
            let (xr, yr) = cfg.tip_ranges()?;
            let tip = (
                rng.random_range(xr.0..=xr.1) + cfg.tip_bias_px.0,
                rng.random_range(yr.0..=yr.1) + cfg.tip_bias_px.1,
            );
            lines.push(tube_from_top(&mut rng, tip, w as f64, tw));
            if cfg.target_class == TargetClass::Carina {
                let half_angle = cfg.carina_branch_angle_deg.to_radians() / 2.0;
                let len = rng.random_range(0.15..0.25) * h as f64;
                for s in [-1.0, 1.0] {
                    let a = s * half_angle;
                    lines.push(vec![tip, (tip.0 + len * a.sin(), tip.1 + len * a.cos())]);
                }
            }
            let has_distractor = rng.random_bool(cfg.distractor_prob);
            if has_distractor {
                lines.push(distractor(&mut rng, cfg, Some(tip.0)));
            }
            (Some(tip), has_distractor)
        }
        Kind::DistractorOnly => {
            lines.push(distractor(&mut rng, cfg, None));
            (None, true)
        }
    };
    let image = render(&bg, &lines, amp, cfg, &mut rng);
    let case_id = format!("{prefix}-{index:06}");
    let record = SampleRecord {
        image_path: format!("images/{case_id}.pgm"),
        case_id,
        patient_id: String::new(),
        target_class: cfg.target_class,
        point,
        pixel_spacing_mm: cfg.pixel_spacing_mm,
        image_dims: (h, w),
    };
    Ok(SyntheticScene {
        image,
        record,
        has_target: point.is_some(),
        has_distractor,
    })
}

/// Scene `index` of the stream defined by `cfg.seed`; patient id is the case's own.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<SyntheticScene> {
    let mut s = build(cfg, index, Kind::Target)?;
    s.record.patient_id = format!("patient-{index:06}");
    Ok(s)
}

/// `n` target scenes with patients assigned in consecutive groups.
pub fn generate_dataset(cfg: &SceneConfig, n: usize, patient_group_size: usize) -> Result<Vec<SyntheticScene>> {
    ensure!(n >= 1, InvalidArgument, "dataset size must be at least 1");
    ensure!(patient_group_size >= 1, InvalidArgument, "patient_group_size must be at least 1");
    (0..n)
        .map(|i| {
            let mut s = build(cfg, i as u64, Kind::Target)?;
            s.record.patient_id = format!("patient-{:06}", i / patient_group_size);
            Ok(s)
        })
        .collect()
}

/// `n_pos` target scenes followed by `n_neg` scenes holding only the distractor.
pub fn make_presence_set(cfg: &SceneConfig, n_pos: usize, n_neg: usize) -> Result<Vec<SyntheticScene>> {
    ensure!(n_pos >= 1 && n_neg >= 1, InvalidArgument, "presence set needs positives and negatives");
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos {
        out.push(generate_scene(cfg, i as u64)?);
    }
    for i in 0..n_neg {
        let mut s = build(cfg, i as u64, Kind::DistractorOnly)?;
        s.record.patient_id = format!("patient-neg-{i:06}");
        out.push(s);
    }
    Ok(out)
}
