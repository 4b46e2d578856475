//! Spotlight text detector network: toy backbone, per-scale mixed
//! information extraction, pyramid fusion, coarse map, mapping filter,
//! cascaded parallel feature steering, alpha calibration, refined map.

mod blocks;
mod layers;
mod weights;

pub use blocks::{
    mapping_filter, scm_calibrate, Backbone, CoarseHead, Cpfsm, Fpn, Miem, RefinedHead,
};
pub use layers::{BnLayer, BufferEntry, ConvBnRelu, ConvLayer, ParamEntry, TConvLayer};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{BnMode, Tensor};

/// Model hyperparameters. `base_channels` is the backbone width C; the four
/// stages emit C, 2C, 4C, 8C channels at strides 4, 8, 16, 32.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdConfig {
    pub base_channels: usize,
    pub fpn_channels: usize,
    pub fused_channels: usize,
    pub head_hidden: usize,
    pub cpfsm_hidden: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl StdConfig {
    pub fn new(base_channels: usize) -> StdConfig {
        StdConfig {
            base_channels,
            fpn_channels: 64,
            fused_channels: 64,
            head_hidden: 16,
            cpfsm_hidden: 64,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }

    pub fn scale_channels(&self) -> [usize; 4] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }
}

impl Default for StdConfig {
    fn default() -> Self {
        StdConfig::new(64)
    }
}

/// The full detector. Parameter layout is fixed by construction order, so a
/// given config and seed always produce the same registry.
pub struct StdModel {
    pub config: StdConfig,
    pub backbone: Backbone,
    pub miem: Vec<Miem>,
    pub fpn: Fpn,
    pub coarse: CoarseHead,
    pub cpfsm: Cpfsm,
    pub refined: RefinedHead,
    pub alpha: Tensor,
}

impl StdModel {
    pub fn new(cfg: &StdConfig, seed: u64) -> StdModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(cfg.base_channels, cfg.bn_momentum, cfg.bn_epsilon, &mut rng);
        let miem = cfg
            .scale_channels()
            .into_iter()
            .map(|w| Miem::new(w, cfg.bn_momentum, cfg.bn_epsilon, &mut rng))
            .collect();
        let fpn = Fpn::new(cfg.scale_channels(), cfg.fpn_channels, cfg.fused_channels, &mut rng);
        let coarse = CoarseHead::new(cfg.fused_channels, cfg.head_hidden, &mut rng);
        let cpfsm = Cpfsm::new(cfg.fused_channels, cfg.cpfsm_hidden, &mut rng);
        let refined = RefinedHead::new(cfg.fused_channels, cfg.head_hidden, &mut rng);
        let alpha = Tensor::param(crate::tensor::Shape::scalar(), vec![-1.0]);
        StdModel { config: cfg.clone(), backbone, miem, fpn, coarse, cpfsm, refined, alpha }
    }

    /// Full forward pass: returns the coarse map at stride 4 and the refined
    /// map at input resolution, both passed through a sigmoid.
    pub fn forward(&self, image: &Tensor, mode: BnMode) -> (Tensor, Tensor) {
        let scales = self.backbone.forward(image, mode);
        let mut enhanced = Vec::with_capacity(4);
        for (block, scale) in self.miem.iter().zip(&scales) {
            enhanced.push(block.forward(scale, mode));
        }
        let enhanced: [Tensor; 4] = enhanced.try_into().unwrap_or_else(|_| unreachable!());
        let f_fuse = self.fpn.forward(&enhanced);
        let m_cs = self.coarse.forward(&f_fuse);
        let f_mf = mapping_filter(&f_fuse, &m_cs);
        let f_fp = self.cpfsm.forward(&f_mf);
        let f_c = scm_calibrate(&f_fuse, &f_fp, &self.alpha);
        let m_rs = self.refined.forward(&f_c);
        (m_cs, m_rs)
    }

    /// All trainable parameters in a fixed order.
    pub fn parameters(&self) -> Vec<ParamEntry> {
        let (params, _) = self.state();
        params
    }

    /// All non-trainable buffers (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<BufferEntry> {
        let (_, buffers) = self.state();
        buffers
    }

    fn state(&self) -> (Vec<ParamEntry>, Vec<BufferEntry>) {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        self.backbone.collect("backbone", &mut params, &mut buffers);
        for (i, m) in self.miem.iter().enumerate() {
            m.collect(&format!("miem{i}"), &mut params, &mut buffers);
        }
        self.fpn.collect("fpn", &mut params);
        self.coarse.collect("coarse_head", &mut params);
        self.cpfsm.collect("cpfsm", &mut params);
        self.refined.collect("refined_head", &mut params);
        params.push(ParamEntry { name: "alpha".into(), tensor: self.alpha.clone(), decay: false });
        (params, buffers)
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.shape().numel()).sum()
    }
}

/// Composition entry point used by training and inference.
pub fn std_forward(model: &StdModel, image: &Tensor, mode: BnMode) -> (Tensor, Tensor) {
    model.forward(image, mode)
}
