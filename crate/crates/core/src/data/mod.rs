//! Day files, sliding windows, normalization, the HXT1 file format, and a
//! synthetic city generator.

mod dataset;
pub mod hxt;
mod toy;

pub use dataset::{Dataset, Manifest, Split};
pub use hxt::{load_tensor, read_tensor, save_tensor, write_tensor, AnyTensor};
pub use toy::{generate_toy_city, GeneratorConfig};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Five-minute frames per day.
pub const FRAMES_PER_DAY: usize = 288;
/// Channels per frame: volume/speed for four headings plus incidents.
pub const DYNAMIC_CHANNELS: usize = 9;
/// Channels predicted per frame (the incident channel is dropped).
pub const TARGET_CHANNELS: usize = 8;
pub const STATIC_CHANNELS: usize = 7;
pub const INPUT_FRAMES: usize = 12;
/// Offsets of the predicted frames after the last input frame: +5, +10, +15,
/// +30, +45 and +60 minutes.
pub const HORIZON_OFFSETS: [usize; 6] = [1, 2, 3, 6, 9, 12];
/// Column labels for the horizons in metrics files.
pub const HORIZON_LABELS: [&str; 6] = ["h5", "h10", "h15", "h30", "h45", "h60"];

/// One day of traffic: `[288, H, W, 9]` u8.
#[derive(Clone, Debug, PartialEq)]
pub struct DayFile(Tensor<u8>);

impl DayFile {
    pub fn new(tensor: Tensor<u8>) -> Result<Self> {
        match tensor.shape() {
            &[FRAMES_PER_DAY, h, w, DYNAMIC_CHANNELS] if h > 0 && w > 0 => Ok(Self(tensor)),
            s => shape_err(format!("day file must be [288, H, W, 9], got {s:?}")),
        }
    }

    pub fn tensor(&self) -> &Tensor<u8> {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn num_frames(&self) -> usize {
        self.0.shape()[0]
    }

    /// Channels `[0, channels)` of frame `t` as a channel-first `[channels, H, W]` tensor scaled to [0, 1].
    pub fn frame(&self, t: usize, channels: usize) -> Result<Tensor> {
        if t >= self.num_frames() {
            return arg_err(format!("frame {t} out of range 0..{}", self.num_frames()));
        }
        hwc_to_chw(&self.0.data()[t * self.height() * self.width() * DYNAMIC_CHANNELS..], self.height(), self.width(), DYNAMIC_CHANNELS, channels)
    }
}

/// Static city map: `[H, W, 7]` u8.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticFile(Tensor<u8>);

impl StaticFile {
    pub fn new(tensor: Tensor<u8>) -> Result<Self> {
        match tensor.shape() {
            &[h, w, STATIC_CHANNELS] if h > 0 && w > 0 => Ok(Self(tensor)),
            s => shape_err(format!("static file must be [H, W, 7], got {s:?}")),
        }
    }

    pub fn tensor(&self) -> &Tensor<u8> {
        &self.0
    }

    /// `[7, H, W]` scaled to [0, 1].
    pub fn to_input(&self) -> Result<Tensor> {
        let s = self.0.shape();
        hwc_to_chw(self.0.data(), s[0], s[1], STATIC_CHANNELS, STATIC_CHANNELS)
    }
}

fn hwc_to_chw(src: &[u8], h: usize, w: usize, stride: usize, channels: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[channels, h, w]);
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let px = &src[(y * w + x) * stride..(y * w + x) * stride + channels];
            for (c, &v) in px.iter().enumerate() {
                dst[(c * h + y) * w + x] = normalize(v);
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn normalize(v: u8) -> f32 {
    v as f32 / 255.0
}

/// A sliding window: twelve consecutive input frames and the frames to predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub start: usize,
    pub input_indices: [usize; INPUT_FRAMES],
    pub output_indices: Vec<usize>,
}

impl WindowSpec {
    pub fn new(start: usize, offsets: &[usize]) -> Self {
        let last = start + INPUT_FRAMES - 1;
        Self {
            start,
            input_indices: std::array::from_fn(|i| start + i),
            output_indices: offsets.iter().map(|o| last + o).collect(),
        }
    }

    pub fn last_index(&self) -> usize {
        self.output_indices.iter().copied().max().unwrap_or(self.start + INPUT_FRAMES - 1)
    }
}

/// Every window with the default horizons that fits in `num_frames` frames, in ascending order.
pub fn window_indices(num_frames: usize) -> Vec<WindowSpec> {
    window_indices_with(num_frames, &HORIZON_OFFSETS)
}

pub fn window_indices_with(num_frames: usize, offsets: &[usize]) -> Vec<WindowSpec> {
    let span = INPUT_FRAMES - 1 + offsets.iter().copied().max().unwrap_or(0);
    (0..num_frames.saturating_sub(span))
        .map(|t| WindowSpec::new(t, offsets))
        .collect()
}

/// Twelve `[9, H, W]` input frames and a `[F, 8, H, W]` target, scaled by 1/255.
pub fn extract_window(day: &DayFile, spec: &WindowSpec) -> Result<(Vec<Tensor>, Tensor)> {
    if spec.last_index() >= day.num_frames() {
        return arg_err(format!("window ending at frame {} exceeds a {}-frame day", spec.last_index(), day.num_frames()));
    }
    let inputs = spec
        .input_indices
        .iter()
        .map(|&t| day.frame(t, DYNAMIC_CHANNELS))
        .collect::<Result<Vec<_>>>()?;
    let targets = spec
        .output_indices
        .iter()
        .map(|&t| day.frame(t, TARGET_CHANNELS))
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, Tensor::stack(&targets)?))
}

/// `clamp(round(255 x), 0, 255)`, rounding half away from zero.
pub fn denormalize_and_quantize(pred: &Tensor) -> Result<Tensor<u8>> {
    if let Some(i) = pred.data().iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("prediction element {i} is NaN")));
    }
    let data = pred.data().iter().map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8).collect();
    Tensor::from_vec(pred.shape(), data)
}

/// Repeats the last input frame (first 8 channels) for every horizon.
pub fn persistence_forecast(inputs: &[Tensor], horizons: usize) -> Result<Tensor> {
    let last = inputs.last().ok_or_else(|| Error::InvalidArgument("no input frames".into()))?;
    let frame = keep_target_channels(last)?;
    Tensor::stack(&vec![frame; horizons])
}

/// Predicts frame `t + k` with frame `t + k - 12`, i.e. assumes a 12-frame cycle.
pub fn periodic_forecast(inputs: &[Tensor], offsets: &[usize]) -> Result<Tensor> {
    if inputs.len() != INPUT_FRAMES {
        return arg_err(format!("expected {INPUT_FRAMES} input frames"));
    }
    let frames = offsets
        .iter()
        .map(|&o| {
            if o == 0 || o > INPUT_FRAMES {
                return arg_err(format!("offset {o} outside 1..=12"));
            }
            keep_target_channels(&inputs[o - 1])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&frames)
}

fn keep_target_channels(frame: &Tensor) -> Result<Tensor> {
    match frame.shape() {
        &[c, h, w] if c >= TARGET_CHANNELS => {
            Tensor::from_vec(&[TARGET_CHANNELS, h, w], frame.data()[..TARGET_CHANNELS * h * w].to_vec())
        }
        s => shape_err(format!("frame must be [C >= 8, H, W], got {s:?}")),
    }
}

/// A batch of windows ready for the network.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, 7, H, W]`
    pub static_input: Tensor,
    /// Twelve `[N, 9, H, W]` frames, oldest first.
    pub dynamic: Vec<Tensor>,
    /// `[N, F, 8, H, W]`
    pub target: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks per-window samples. `static_input` is the `[7, H, W]` city map shared by all.
    pub fn from_samples(static_input: &Tensor, samples: Vec<(Vec<Tensor>, Tensor)>) -> Result<Self> {
        if samples.is_empty() {
            return arg_err("empty batch");
        }
        let n = samples.len();
        let statics = Tensor::stack(&vec![static_input.clone(); n])?;
        let mut per_frame: Vec<Vec<Tensor>> = vec![Vec::with_capacity(n); INPUT_FRAMES];
        let mut targets = Vec::with_capacity(n);
        for (inputs, target) in samples {
            if inputs.len() != INPUT_FRAMES {
                return arg_err("window must have 12 input frames");
            }
            for (k, f) in inputs.into_iter().enumerate() {
                per_frame[k].push(f);
            }
            targets.push(target);
        }
        let dynamic = per_frame.iter().map(|fs| Tensor::stack(fs)).collect::<Result<_>>()?;
        Ok(Self { static_input: statics, dynamic, target: Tensor::stack(&targets)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day_with(value: impl Fn(usize, usize, usize, usize) -> u8, h: usize, w: usize) -> DayFile {
        let mut t = Tensor::<u8>::zeros(&[FRAMES_PER_DAY, h, w, DYNAMIC_CHANNELS]);
        for f in 0..FRAMES_PER_DAY {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..DYNAMIC_CHANNELS {
                        t.set(&[f, y, x, c], value(f, y, x, c));
                    }
                }
            }
        }
        DayFile::new(t).unwrap()
    }

    #[test]
    fn window_counts() {
        let w = window_indices(288);
        assert_eq!(w.len(), 265);
        assert_eq!(w[0].output_indices, vec![12, 13, 14, 17, 20, 23]);
        assert_eq!(w[0].input_indices, std::array::from_fn(|i| i));
        assert_eq!(w.last().unwrap().last_index(), 287);
        assert_eq!(window_indices(24).len(), 1);
        assert!(window_indices(23).is_empty());
        for n in 0..=300 {
            assert_eq!(window_indices(n).len(), n.saturating_sub(23));
        }
        let twelve: Vec<usize> = (1..=12).collect();
        assert_eq!(window_indices_with(288, &twelve).len(), 265);
    }

    #[test]
    fn extraction() {
        let day = day_with(|f, y, x, c| ((f + y + x + c) % 256) as u8, 2, 3);
        let spec = &window_indices(288)[5];
        let (inputs, target) = extract_window(&day, spec).unwrap();
        assert_eq!(inputs.len(), 12);
        assert_eq!(inputs[0].shape(), &[9, 2, 3]);
        assert_eq!(target.shape(), &[6, 8, 2, 3]);
        // input frame 0 is day frame 5; channel 4 at (1, 2)
        assert_eq!(inputs[0].get(&[4, 1, 2]), normalize(((5 + 1 + 2 + 4) % 256) as u8));
        // horizon 3 is frame 5 + 11 + 6 = 22
        assert_eq!(target.get(&[3, 7, 0, 1]), normalize(((22 + 1 + 7) % 256) as u8));
        assert!(target.data().iter().chain(inputs.iter().flat_map(|t| t.data())).all(|v| (0.0..=1.0).contains(v)));
        assert!(extract_window(&day, &WindowSpec::new(270, &HORIZON_OFFSETS)).is_err());
    }

    #[test]
    fn zero_day_and_endpoints() {
        let day = day_with(|_, _, _, _| 0, 2, 2);
        let (i, t) = extract_window(&day, &window_indices(288)[0]).unwrap();
        assert!(i.iter().all(|f| f.max_abs() == 0.0) && t.max_abs() == 0.0);
        assert_eq!(normalize(255), 1.0);
        assert_eq!(normalize(0), 0.0);
    }

    #[test]
    fn quantization() {
        let t = Tensor::from_vec(&[3], vec![0.5, -0.1, 1.2]).unwrap();
        let q = denormalize_and_quantize(&t).unwrap();
        assert_eq!(q.data(), &[128, 0, 255]);
        assert!(denormalize_and_quantize(&Tensor::from_vec(&[1], vec![f32::NAN]).unwrap()).is_err());
        let all: Vec<f32> = (0..=255u8).map(normalize).collect();
        let back = denormalize_and_quantize(&Tensor::from_vec(&[256], all).unwrap()).unwrap();
        assert_eq!(back.data(), &(0..=255u8).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn shape_checks() {
        assert!(DayFile::new(Tensor::zeros(&[287, 2, 2, 9])).is_err());
        assert!(DayFile::new(Tensor::zeros(&[288, 2, 2, 8])).is_err());
        assert!(StaticFile::new(Tensor::zeros(&[2, 2, 6])).is_err());
    }

    #[test]
    fn baselines() {
        let inputs: Vec<Tensor> = (0..12).map(|k| Tensor::full(&[9, 1, 1], k as f32)).collect();
        let p = persistence_forecast(&inputs, 6).unwrap();
        assert_eq!(p.shape(), &[6, 8, 1, 1]);
        assert!(p.data().iter().all(|&v| v == 11.0));
        let q = periodic_forecast(&inputs, &HORIZON_OFFSETS).unwrap();
        let firsts: Vec<f32> = (0..6).map(|h| q.get(&[h, 0, 0, 0])).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 2.0, 5.0, 8.0, 11.0]);
    }
}
