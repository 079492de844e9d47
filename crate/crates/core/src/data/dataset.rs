//! Dataset directory: `static.hxt`, `day_0000.hxt` … and `manifest.json`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::hxt::{load_tensor, save_tensor};
use super::{extract_window, window_indices_with, Batch, DayFile, StaticFile, WindowSpec};
use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub num_days: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_lanes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident_rate: Option<f64>,
}

impl Manifest {
    /// The last `val_days` days form the validation split, the rest train.
    pub fn with_split(height: usize, width: usize, num_days: usize, seed: u64, val_days: usize) -> Self {
        let val_days = val_days.min(num_days);
        Self {
            height,
            width,
            num_days,
            seed,
            train: (0..num_days - val_days).collect(),
            val: (num_days - val_days..num_days).collect(),
            num_lanes: None,
            incident_rate: None,
        }
    }

    pub fn days(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(d) = self.train.iter().chain(&self.val).find(|&&d| d >= self.num_days) {
            return arg_err(format!("split refers to day {d} but the dataset has {} days", self.num_days));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => arg_err(format!("unknown split `{other}` (expected train or val)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// A fully loaded dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub static_map: StaticFile,
    pub days: Vec<DayFile>,
}

pub fn day_file_name(day: usize) -> String {
    format!("day_{day:04}.hxt")
}

impl Dataset {
    pub fn new(manifest: Manifest, static_map: StaticFile, days: Vec<DayFile>) -> Result<Self> {
        manifest.validate()?;
        if days.len() != manifest.num_days {
            return arg_err(format!("manifest lists {} days, {} given", manifest.num_days, days.len()));
        }
        let st = static_map.tensor().shape();
        if st[0] != manifest.height || st[1] != manifest.width {
            return arg_err(format!("static map is {}x{}, manifest says {}x{}", st[0], st[1], manifest.height, manifest.width));
        }
        if let Some(d) = days.iter().position(|d| d.height() != manifest.height || d.width() != manifest.width) {
            return arg_err(format!("day {d} does not match the manifest's spatial size"));
        }
        Ok(Self { manifest, static_map, days })
    }

    /// Writes the directory layout. A non-empty directory is refused unless `force`.
    pub fn write(&self, dir: impl AsRef<Path>, force: bool) -> Result<()> {
        let dir = dir.as_ref();
        if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
            return arg_err(format!("{} exists and is not empty (use --force)", dir.display()));
        }
        fs::create_dir_all(dir)?;
        save_tensor(dir.join("static.hxt"), self.static_map.tensor())?;
        for (i, d) in self.days.iter().enumerate() {
            save_tensor(dir.join(day_file_name(i)), d.tensor())?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir: PathBuf = dir.as_ref().to_path_buf();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let static_map = StaticFile::new(load_tensor(dir.join("static.hxt"))?.into_u8()?)?;
        let days = (0..manifest.num_days)
            .map(|i| DayFile::new(load_tensor(dir.join(day_file_name(i)))?.into_u8()?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, static_map, days)
    }

    /// `(day, window)` pairs of a split, taking every `stride`-th window of each day.
    pub fn windows(&self, split: Split, offsets: &[usize], stride: usize) -> Vec<(usize, WindowSpec)> {
        let stride = stride.max(1);
        self.manifest
            .days(split)
            .iter()
            .flat_map(|&d| {
                window_indices_with(self.days[d].num_frames(), offsets)
                    .into_iter()
                    .step_by(stride)
                    .map(move |w| (d, w))
            })
            .collect()
    }

    pub fn static_input(&self) -> Result<Tensor> {
        self.static_map.to_input()
    }

    pub fn sample(&self, day: usize, spec: &WindowSpec) -> Result<(Vec<Tensor>, Tensor)> {
        let d = self
            .days
            .get(day)
            .ok_or_else(|| Error::InvalidArgument(format!("day {day} out of range")))?;
        extract_window(d, spec)
    }

    pub fn batch(&self, windows: &[(usize, WindowSpec)]) -> Result<Batch> {
        let samples = windows
            .iter()
            .map(|(d, w)| self.sample(*d, w))
            .collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&self.static_input()?, samples)
    }
}
