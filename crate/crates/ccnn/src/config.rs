//! Experiment configuration: desk-scale defaults, the paper-scale switch,
//! and the line-oriented key=value config file (unknown keys are errors).

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::CellImageParams;
use crate::error::{Error, Result};
use crate::optim::LrSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // dataset
    pub image_size: usize,
    pub images_per_split: usize,
    pub cells_min: usize,
    pub cells_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub noise_sigma: f64,
    pub data_dir: String,
    // architecture
    pub conv1_kernels: usize,
    pub conv2_kernels: usize,
    // training
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub momentum: f64,
    pub complex_lr: f64,
    pub complex_lr_drop_iteration: u64,
    pub complex_lr_after: f64,
    pub real_lr: f64,
    // trials
    pub trials: usize,
    pub convergence_threshold: f64,
    /// Evaluate metrics every this many epochs (1 = the per-epoch cadence).
    pub eval_every_epochs: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            image_size: 150,
            images_per_split: 20,
            cells_min: 6,
            cells_max: 14,
            radius_min: 4.0,
            radius_max: 6.0,
            intensity_min: 0.55,
            intensity_max: 1.0,
            noise_sigma: 0.06,
            data_dir: "data".into(),
            conv1_kernels: 8,
            conv2_kernels: 2,
            seed: 42,
            iterations: 5_000,
            batch_size: 100,
            momentum: 0.9,
            complex_lr: 0.01,
            complex_lr_drop_iteration: 2_000,
            complex_lr_after: 0.001,
            real_lr: 0.1,
            trials: 5,
            convergence_threshold: 0.15,
            eval_every_epochs: 1,
        }
    }
}

impl ExperimentConfig {
    /// Full-scale protocol: 100 images (10,000 patches) per split and
    /// 20,000 iterations. Everything else matches the desk defaults.
    pub fn apply_paper_scale(&mut self) {
        self.images_per_split = 100;
        self.iterations = 20_000;
    }

    pub fn cell_image_params(&self, seed: u64) -> CellImageParams {
        CellImageParams {
            image_size: self.image_size,
            cell_count: (self.cells_min, self.cells_max),
            cell_radius: (self.radius_min, self.radius_max),
            intensity: (self.intensity_min, self.intensity_max),
            noise_sigma: self.noise_sigma,
            seed,
        }
    }

    pub fn complex_schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(vec![
            (self.complex_lr_drop_iteration, self.complex_lr),
            (u64::MAX, self.complex_lr_after),
        ])
    }

    pub fn real_schedule(&self) -> LrSchedule {
        LrSchedule::constant(self.real_lr)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image_size.is_multiple_of(crate::data::PATCH_SIZE) {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by the patch size {}",
                self.image_size,
                crate::data::PATCH_SIZE
            )));
        }
        if self.batch_size == 0 || self.images_per_split == 0 {
            return Err(Error::Config("batch_size and images_per_split must be >= 1".into()));
        }
        let patches = self.images_per_split * (self.image_size / crate::data::PATCH_SIZE).pow(2);
        if self.batch_size > patches {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} patches per split",
                self.batch_size, patches
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.conv1_kernels == 0 || self.conv2_kernels == 0 {
            return Err(Error::Config("kernel counts must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.eval_every_epochs == 0 {
            return Err(Error::Config("eval_every_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Parse a key=value config file over the defaults. Lines may be blank
    /// or start with '#'; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", line_no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
            config.set(key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", line_no + 1))
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("key {key:?}: cannot parse value {value:?}"))
            })
        }
        match key {
            "image_size" => self.image_size = parse(key, value)?,
            "images_per_split" => self.images_per_split = parse(key, value)?,
            "cells_min" => self.cells_min = parse(key, value)?,
            "cells_max" => self.cells_max = parse(key, value)?,
            "radius_min" => self.radius_min = parse(key, value)?,
            "radius_max" => self.radius_max = parse(key, value)?,
            "intensity_min" => self.intensity_min = parse(key, value)?,
            "intensity_max" => self.intensity_max = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "data_dir" => self.data_dir = value.to_string(),
            "conv1_kernels" => self.conv1_kernels = parse(key, value)?,
            "conv2_kernels" => self.conv2_kernels = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "complex_lr" => self.complex_lr = parse(key, value)?,
            "complex_lr_drop_iteration" => self.complex_lr_drop_iteration = parse(key, value)?,
            "complex_lr_after" => self.complex_lr_after = parse(key, value)?,
            "real_lr" => self.real_lr = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "convergence_threshold" => self.convergence_threshold = parse(key, value)?,
            "eval_every_epochs" => self.eval_every_epochs = parse(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown key {other:?}")));
            }
        }
        Ok(())
    }
}
