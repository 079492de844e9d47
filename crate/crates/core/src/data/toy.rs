//! Synthetic city: straight one-way lanes carrying trains of vehicle pulses.
//!
//! Each lane runs across the whole map along one axis and is assigned one of
//! the four heading channel pairs (east → NE, north → NW, south → SE,
//! west → SW). Pulses move one pixel per frame and repeat with a cycle of 4,
//! 6 or 12 frames, so the pattern twelve frames ahead equals the current one up
//! to a slow time-of-day volume profile. Lane phases change from day to day.
//! Channel `2h` carries volume and `2h + 1` speed for heading `h`; channel 8
//! flags incidents at random lane pixels.

use serde::{Deserialize, Serialize};

use super::{DayFile, StaticFile, DYNAMIC_CHANNELS, FRAMES_PER_DAY, STATIC_CHANNELS};
use crate::error::{arg_err, Result};
use crate::tensor::{Prng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub num_days: usize,
    pub seed: u64,
    pub num_lanes: usize,
    pub incident_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { height: 16, width: 16, num_days: 3, seed: 0, num_lanes: 4, incident_rate: 0.002 }
    }
}

const CYCLES: [usize; 3] = [4, 6, 12];
const MIN_DIM: usize = 8;

#[derive(Clone, Copy, Debug)]
enum Axis {
    Row(usize),
    Col(usize),
}

#[derive(Clone, Debug)]
struct Lane {
    axis: Axis,
    /// 0 = east, 1 = north, 2 = south, 3 = west; also the heading channel pair.
    heading: usize,
    cycle: usize,
    pulse_len: usize,
    speed: u8,
    peak: f64,
}

impl Lane {
    fn pixels(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        match self.axis {
            Axis::Row(y) => (0..w).map(|x| (y, x)).collect(),
            Axis::Col(x) => (0..h).map(|y| (y, x)).collect(),
        }
    }

    /// Position along the direction of travel.
    fn coord(&self, y: usize, x: usize, h: usize, w: usize) -> usize {
        match self.heading {
            0 => x,
            1 => h - 1 - y,
            2 => y,
            _ => w - 1 - x,
        }
    }
}

fn profile(t: usize) -> f64 {
    let s = (std::f64::consts::PI * t as f64 / FRAMES_PER_DAY as f64).sin();
    0.55 + 0.45 * s * s
}

fn pick_distinct(rng: &mut Prng, count: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (lo..hi).collect();
    rng.shuffle(&mut pool);
    pool.truncate(count);
    pool.sort_unstable();
    pool
}

/// Deterministic per seed; single threaded.
pub fn generate_toy_city(config: &GeneratorConfig) -> Result<(Vec<DayFile>, StaticFile)> {
    let (h, w) = (config.height, config.width);
    if h < MIN_DIM || w < MIN_DIM {
        return arg_err(format!("toy city must be at least {MIN_DIM}x{MIN_DIM}, got {h}x{w}"));
    }
    if config.num_lanes == 0 || config.num_lanes > (h - 2) + (w - 2) {
        return arg_err(format!("num_lanes must be in 1..={}", (h - 2) + (w - 2)));
    }
    if !(0.0..=1.0).contains(&config.incident_rate) {
        return arg_err("incident_rate must lie in [0, 1]");
    }
    let mut rng = Prng::new(config.seed);
    let n_rows = config.num_lanes.div_ceil(2).min(h - 2);
    let n_cols = config.num_lanes - n_rows;
    let rows = pick_distinct(&mut rng, n_rows, 1, h - 1);
    let cols = pick_distinct(&mut rng, n_cols, 1, w - 1);
    let axes: Vec<Axis> = rows.into_iter().map(Axis::Row).chain(cols.into_iter().map(Axis::Col)).collect();
    let lanes: Vec<Lane> = axes
        .into_iter()
        .map(|axis| {
            let forward = rng.bernoulli(0.5);
            let heading = match (axis, forward) {
                (Axis::Row(_), true) => 0,
                (Axis::Row(_), false) => 3,
                (Axis::Col(_), true) => 2,
                (Axis::Col(_), false) => 1,
            };
            let cycle = CYCLES[rng.below(CYCLES.len())];
            Lane {
                axis,
                heading,
                cycle,
                pulse_len: 1 + rng.below(2),
                speed: 80 + rng.below(121) as u8,
                peak: rng.uniform_f64(150.0, 250.0),
            }
        })
        .collect();

    let static_map = build_static(&lanes, h, w)?;

    let mut days = Vec::with_capacity(config.num_days);
    for d in 0..config.num_days {
        let mut day_rng = rng.derive(d as u64);
        let phases: Vec<usize> = lanes.iter().map(|l| day_rng.below(l.cycle)).collect();
        let mut t = Tensor::<u8>::zeros(&[FRAMES_PER_DAY, h, w, DYNAMIC_CHANNELS]);
        let data = t.data_mut();
        for f in 0..FRAMES_PER_DAY {
            let base = f * h * w * DYNAMIC_CHANNELS;
            for (lane, &phase) in lanes.iter().zip(&phases) {
                let volume = (lane.peak * profile(f)).round().clamp(1.0, 255.0) as u8;
                for (y, x) in lane.pixels(h, w) {
                    let px = base + (y * w + x) * DYNAMIC_CHANNELS;
                    let u = lane.coord(y, x, h, w);
                    let pos = (u + lane.cycle * FRAMES_PER_DAY - f - phase) % lane.cycle;
                    if pos < lane.pulse_len {
                        data[px + 2 * lane.heading] = volume;
                        data[px + 2 * lane.heading + 1] = lane.speed;
                    }
                    if config.incident_rate > 0.0 && day_rng.bernoulli(config.incident_rate) {
                        data[px + 8] = 255;
                    }
                }
            }
        }
        days.push(DayFile::new(t)?);
    }
    Ok((days, static_map))
}

fn build_static(lanes: &[Lane], h: usize, w: usize) -> Result<StaticFile> {
    let mut s = Tensor::<u8>::zeros(&[h, w, STATIC_CHANNELS]);
    let mut on_lane = vec![false; h * w];
    for lane in lanes {
        for (y, x) in lane.pixels(h, w) {
            on_lane[y * w + x] = true;
            s.set(&[y, x, 0], 255);
            s.set(&[y, x, 1 + lane.heading], 255);
            let sp = s.get(&[y, x, 6]).max(lane.speed);
            s.set(&[y, x, 6], sp);
        }
    }
    for y in 0..h {
        for x in 0..w {
            let d = (0..h)
                .flat_map(|yy| (0..w).map(move |xx| (yy, xx)))
                .filter(|&(yy, xx)| on_lane[yy * w + xx])
                .map(|(yy, xx)| y.abs_diff(yy).max(x.abs_diff(xx)))
                .min()
                .unwrap_or(h.max(w));
            s.set(&[y, x, 5], (d * 40).min(255) as u8);
        }
    }
    StaticFile::new(s)
}
