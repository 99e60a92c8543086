use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointconv::{Activation, BlockSpec};
use crate::roipool::RoiPoolConfig;
use crate::sampling::{Extents, SamplingConfig, Strategy};
use crate::voxelization::GridLayout;

/// Forward-pass configuration. Every key is optional in the TOML file.
///
/// ```toml
/// resolutions = [0.1, 0.2, 0.4, 0.8]
/// radius_scale = 1.5
/// kernel = 3
/// channels = [16, 32, 64, 128]
/// layers_per_block = 2
/// input_channels = 1
/// roi_grid = 5
/// roi_n_max = 5
/// crop_min = [0.0, -40.0, -3.0]
/// crop_max = [70.0, 40.0, 1.0]
/// strategy = "grid_buffer"
/// seed = 0
/// deterministic = true
/// threads = 0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Downsampling resolution per block, meters.
    pub resolutions: Vec<f64>,
    /// Query radius as a multiple of each block's resolution.
    pub radius_scale: f64,
    pub kernel: usize,
    pub channels: Vec<usize>,
    pub layers_per_block: usize,
    /// Feature channels of the input cloud (reflectance for KITTI scans).
    pub input_channels: usize,
    pub relu: bool,
    pub layout: GridLayout,
    pub roi_grid: usize,
    pub roi_n_max: usize,
    /// Backbone block whose output features are pooled into RoIs.
    pub roi_feature_block: usize,
    pub crop_min: [f64; 3],
    pub crop_max: [f64; 3],
    pub strategy: Strategy,
    pub seed: u64,
    pub deterministic: bool,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
    /// Hidden widths of the per-key-point proposal MLP.
    pub proposal_hidden: Vec<usize>,
    /// Output channels of the two refinement convolutions.
    pub refine_conv: [usize; 2],
    pub refine_hidden: Vec<usize>,
    /// Proposals with the highest foreground logits that get refined.
    pub refine_top_k: usize,
    /// Box size prior `(w, l, h)` the proposal head regresses against.
    pub anchor: [f64; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![0.1, 0.2, 0.4, 0.8],
            radius_scale: BlockSpec::RADIUS_SCALE,
            kernel: 3,
            channels: vec![16, 32, 64, 128],
            layers_per_block: 2,
            input_channels: 1,
            relu: true,
            layout: GridLayout::Sorted,
            roi_grid: 5,
            roi_n_max: 5,
            roi_feature_block: 0,
            crop_min: [0.0, -40.0, -3.0],
            crop_max: [70.0, 40.0, 1.0],
            strategy: Strategy::GridBuffer,
            seed: 0,
            deterministic: true,
            threads: 0,
            proposal_hidden: vec![128, 64],
            refine_conv: [64, 128],
            refine_hidden: vec![64],
            refine_top_k: 128,
            anchor: [1.6, 3.9, 1.56],
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated so NaN is rejected
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() || self.resolutions.len() != self.channels.len() {
            return Err(Error::Config(format!(
                "{} resolutions for {} channel widths",
                self.resolutions.len(),
                self.channels.len()
            )));
        }
        if self.roi_feature_block >= self.resolutions.len() {
            return Err(Error::Config(format!(
                "roi_feature_block {} out of range",
                self.roi_feature_block
            )));
        }
        if self.roi_grid != 5 {
            return Err(Error::Config("the refinement head needs roi_grid = 5".into()));
        }
        if !(self.radius_scale > 0.0) || self.anchor.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("radius_scale and anchor must be positive".into()));
        }
        if (0..3).any(|a| !(self.crop_max[a] > self.crop_min[a])) {
            return Err(Error::Config("crop_max must exceed crop_min on every axis".into()));
        }
        self.roi_config()?;
        crate::pointconv::validate_blocks(&self.blocks())
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        self.resolutions
            .iter()
            .zip(&self.channels)
            .map(|(&r, &c)| BlockSpec {
                resolution: r,
                radius: self.radius_scale * r,
                k: self.kernel,
                channels: c,
                layers: self.layers_per_block,
            })
            .collect()
    }

    pub fn extents(&self) -> Result<Extents> {
        Extents::from_bounds(self.crop_min, self.crop_max)
    }

    pub fn sampling(&self) -> Result<SamplingConfig> {
        let mut s = SamplingConfig::new(self.resolutions[0], self.strategy)
            .with_extents(self.extents()?)
            .with_seed(self.seed);
        s.deterministic = self.deterministic;
        Ok(s)
    }

    pub fn roi_config(&self) -> Result<RoiPoolConfig> {
        RoiPoolConfig::new(self.roi_grid, self.roi_n_max)
    }

    pub fn activation(&self) -> Activation {
        if self.relu {
            Activation::Relu
        } else {
            Activation::Identity
        }
    }

    /// Channels of the concatenated backbone output.
    pub fn feature_channels(&self) -> usize {
        self.channels.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_blocks() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.blocks(), BlockSpec::standard());
        assert_eq!(c.feature_channels(), 240);
        assert_eq!(c.roi_config().unwrap(), RoiPoolConfig::default());
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);

        let partial = PipelineConfig::from_toml("threads = 4\nstrategy = \"sort_unique\"\n").unwrap();
        assert_eq!(partial.threads, 4);
        assert_eq!(partial.strategy, Strategy::SortUnique);
        assert_eq!(partial.channels, c.channels);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(PipelineConfig::from_toml("no_such_key = 1").is_err());
        assert!(PipelineConfig::from_toml("channels = [16]").is_err());
        assert!(PipelineConfig::from_toml("resolutions = [0.2, 0.1]\nchannels = [4, 4]").is_err());
        assert!(PipelineConfig::from_toml("kernel = 2").is_err());
        assert!(PipelineConfig::from_toml("roi_grid = 4").is_err());
    }
}
