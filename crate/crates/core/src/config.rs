//! Experiment configuration and presets.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::error::{Error, Result};
use crate::head::{AnchorClass, DecodeParams, ANCHOR_YAWS};
use crate::losses::{FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA};
use crate::metrics::ClassThresholds;
use crate::mvfe::AuxLossForm;
use crate::optim::{AdamParams, Schedule};
use crate::projection::{GridSpec, View};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Vod,
    Astyx,
}

/// Switches for the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// When off the map is the identity.
    pub positional_map: bool,
    /// When off every value-transform input in the backbone is zero.
    pub radar_assist: bool,
    /// When off the cylindrical features are zero (BEV only).
    pub cylinder_view: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            positional_map: true,
            radar_assist: true,
            cylinder_view: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub bev: GridSpec,
    pub cyl: GridSpec,
}

impl GridConfig {
    pub fn preset(d: Dataset) -> Self {
        match d {
            Dataset::Vod => GridConfig {
                bev: GridSpec::vod(View::Bev),
                cyl: GridSpec::vod(View::Cyl),
            },
            Dataset::Astyx => GridConfig {
                bev: GridSpec::astyx(View::Bev),
                cyl: GridSpec::astyx(View::Cyl),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Base feature width `d` (per view).
    pub width: usize,
    pub pillar_channels: usize,
    pub resnet_blocks: usize,
    pub knn_k: usize,
    pub idw_k: usize,
    /// Points kept per frame; larger frames are subsampled.
    pub point_cap: usize,
    /// Scale applied to coordinates entering the learned transforms.
    pub coord_scale: f64,
    /// Scale applied to `[v, v_r, rcs]` entering the value transforms.
    pub radar_scale: [f64; 3],
    /// Initial logit offset of the positional map and backbone attention.
    pub map_logit_offset: f64,
    pub encoder_stages: usize,
    pub head_width: usize,
    pub head_convs: usize,
    pub head_stride: usize,
    pub anchors: Vec<AnchorClass>,
    pub anchor_yaws: Vec<f64>,
    pub aux_loss_form: AuxLossForm,
    pub ablation: Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub aux: f64,
    pub loc: f64,
    pub dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            aux: 1.0,
            loc: 2.0,
            dir: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            focal_alpha: FOCAL_ALPHA,
            focal_gamma: FOCAL_GAMMA,
            smooth_l1_beta: SMOOTH_L1_BETA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    pub schedule: Schedule,
    /// Linear warmup length in optimizer steps; zero disables it.
    pub warmup_steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            lr: 0.003,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 10.0,
            schedule: Schedule::Constant,
            warmup_steps: 0,
        }
    }
}

impl OptimConfig {
    /// Learning rate of step `step` (zero-based) out of `total_steps`.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let base = self.schedule.lr(self.lr, step, total_steps);
        if step < self.warmup_steps {
            base * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            base
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub decode: DecodeParams,
    pub iou: ClassThresholds,
    /// Also report the driving corridor.
    pub corridor: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            decode: DecodeParams::default(),
            iou: ClassThresholds::standard(),
            corridor: true,
        }
    }
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Dataset directory; synthetic scenes are generated when absent.
    pub root: Option<String>,
    pub train_split: String,
    pub eval_split: String,
    pub synth_scenes: usize,
    pub synth_seed: u64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            train_split: "train".into(),
            eval_split: "val".into(),
            synth_scenes: 16,
            synth_seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: Dataset,
    pub data: DataConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    fn paper(dataset: Dataset, name: &str) -> Self {
        ExperimentConfig {
            name: name.into(),
            dataset,
            data: DataConfig::default(),
            grid: GridConfig::preset(dataset),
            model: ModelConfig {
                width: 64,
                pillar_channels: 32,
                resnet_blocks: 2,
                knn_k: 16,
                idw_k: 3,
                point_cap: 1024,
                coord_scale: 0.1,
                radar_scale: [0.1, 0.1, 0.05],
                map_logit_offset: -5.0,
                encoder_stages: 3,
                head_width: 64,
                head_convs: 4,
                head_stride: 2,
                anchors: AnchorClass::defaults(),
                anchor_yaws: ANCHOR_YAWS.to_vec(),
                aux_loss_form: AuxLossForm::default(),
                ablation: Ablation::default(),
            },
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig {
                epochs: 80,
                batch_size: 8,
                seed: 0,
                augment: AugmentSpec::default(),
            },
            eval: EvalConfig::default(),
        }
    }

    /// Full-size settings for the VoD grid.
    pub fn paper_vod() -> Self {
        Self::paper(Dataset::Vod, "paper-vod")
    }

    /// Full-size settings for the Astyx grid.
    pub fn paper_astyx() -> Self {
        Self::paper(Dataset::Astyx, "paper-astyx")
    }

    /// Reduced profile for single-machine runs on synthetic scenes.
    pub fn desk() -> Self {
        let mut c = Self::paper(Dataset::Vod, "desk");
        c.model.width = 32;
        c.model.pillar_channels = 16;
        c.model.point_cap = 256;
        c.model.head_width = 32;
        c.train.epochs = 20;
        c.train.batch_size = 2;
        // 0.003 diverges within the first epoch at this batch size.
        c.optim.lr = 0.001;
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-vod" => Some(Self::paper_vod()),
            "paper-astyx" => Some(Self::paper_astyx()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["paper-vod", "paper-astyx", "desk"];

    pub fn validate(&self) -> Result<()> {
        self.grid.bev.validate()?;
        self.grid.cyl.validate()?;
        if self.grid.bev.view != View::Bev || self.grid.cyl.view != View::Cyl {
            return Err(Error::Config("grid views are swapped".into()));
        }
        let m = &self.model;
        if m.width == 0 || m.pillar_channels == 0 || m.head_width == 0 || m.head_convs == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if m.knn_k == 0 || m.idw_k == 0 || m.point_cap == 0 {
            return Err(Error::Config("knn_k, idw_k and point_cap must be positive".into()));
        }
        if !(m.coord_scale > 0.0) || m.radar_scale.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("input scales must be finite and positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.optim.lr > 0.0) || !(self.optim.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer lr must be positive and decay non-negative".into()));
        }
        self.train.augment.validate()?;
        self.data.synth.validate()?;
        crate::head::build_anchors(&self.grid.bev, m.head_stride, &m.anchors, &m.anchor_yaws)?;
        Ok(())
    }
}
