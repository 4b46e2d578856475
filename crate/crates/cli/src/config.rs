//! Run configuration: flat key=value lines with section prefixes
//! (model.gamma=0.4). Unknown keys are rejected; flags override file values.

use spotlight_core::imageio::Normalization;
use spotlight_core::losses::LossConfig;
use spotlight_core::postprocess::DetectParams;
use spotlight_core::trainer::TrainConfig;
use spotlight_core::StdConfig;

/// Network widths plus the label/post-processing constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub base_channels: usize,
    pub fpn_channels: usize,
    pub fused_channels: usize,
    pub head_hidden: usize,
    pub cpfsm_hidden: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
    pub threshold: f64,
    pub min_area: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let std = StdConfig::default();
        ModelSection {
            base_channels: std.base_channels,
            fpn_channels: std.fpn_channels,
            fused_channels: std.fused_channels,
            head_hidden: std.head_hidden,
            cpfsm_hidden: std.cpfsm_hidden,
            bn_momentum: std.bn_momentum,
            bn_epsilon: std.bn_epsilon,
            gamma: 0.4,
            beta: 1.5,
            threshold: 0.5,
            min_area: 16,
        }
    }
}

impl ModelSection {
    pub fn std_config(&self) -> StdConfig {
        StdConfig {
            base_channels: self.base_channels,
            fpn_channels: self.fpn_channels,
            fused_channels: self.fused_channels,
            head_hidden: self.head_hidden,
            cpfsm_hidden: self.cpfsm_hidden,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams { threshold: self.threshold, min_area: self.min_area, beta: self.beta }
    }
}

/// Input/output conventions: resize target, normalization constants and the
/// synthetic-dataset shape used by `train --synthetic` and `bench`.
#[derive(Clone, Debug, PartialEq)]
pub struct IoSection {
    pub short_side: usize,
    pub synth_count: usize,
    pub synth_size: usize,
    pub synth_instances: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for IoSection {
    fn default() -> Self {
        let norm = Normalization::default();
        IoSection {
            short_side: 736,
            synth_count: 5,
            synth_size: 256,
            synth_instances: 2,
            mean: norm.mean,
            std: norm.std,
        }
    }
}

impl IoSection {
    pub fn normalization(&self) -> Normalization {
        Normalization { mean: self.mean, std: self.std }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub io: IoSection,
}

impl RunConfig {
    /// Applies one "section.key=value" assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
        }
        match key {
            "model.base_channels" => self.model.base_channels = parse(key, value)?,
            "model.fpn_channels" => self.model.fpn_channels = parse(key, value)?,
            "model.fused_channels" => self.model.fused_channels = parse(key, value)?,
            "model.head_hidden" => self.model.head_hidden = parse(key, value)?,
            "model.cpfsm_hidden" => self.model.cpfsm_hidden = parse(key, value)?,
            "model.bn_momentum" => self.model.bn_momentum = parse(key, value)?,
            "model.bn_epsilon" => self.model.bn_epsilon = parse(key, value)?,
            "model.gamma" => self.model.gamma = parse(key, value)?,
            "model.beta" => self.model.beta = parse(key, value)?,
            "model.threshold" => self.model.threshold = parse(key, value)?,
            "model.min_area" => self.model.min_area = parse(key, value)?,
            "loss.lambda1" => self.loss.lambda1 = parse(key, value)?,
            "loss.lambda2" => self.loss.lambda2 = parse(key, value)?,
            "loss.coarse" => self.loss.coarse = value.parse()?,
            "loss.refined" => self.loss.refined = value.parse()?,
            "loss.ohem_ratio" => self.loss.ohem_ratio = parse(key, value)?,
            "train.lr" => self.train.base_lr = parse(key, value)?,
            "train.momentum" => self.train.momentum = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.poly_power" => self.train.poly_power = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "io.short_side" => self.io.short_side = parse(key, value)?,
            "io.synth_count" => self.io.synth_count = parse(key, value)?,
            "io.synth_size" => self.io.synth_size = parse(key, value)?,
            "io.synth_instances" => self.io.synth_instances = parse(key, value)?,
            "io.mean_r" => self.io.mean[0] = parse(key, value)?,
            "io.mean_g" => self.io.mean[1] = parse(key, value)?,
            "io.mean_b" => self.io.mean[2] = parse(key, value)?,
            "io.std_r" => self.io.std[0] = parse(key, value)?,
            "io.std_g" => self.io.std[1] = parse(key, value)?,
            "io.std_b" => self.io.std[2] = parse(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies config file text: one key=value per line; blank lines and
    /// lines starting with '#' are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
            self.apply(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(())
    }

    /// Applies "key=value" assignments from repeated --set flags.
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<(), String> {
        for s in sets {
            let (key, value) =
                s.split_once('=').ok_or_else(|| format!("--set {s:?}: expected key=value"))?;
            self.apply(key.trim(), value.trim()).map_err(|e| format!("--set {s:?}: {e}"))?;
        }
        Ok(())
    }
}
