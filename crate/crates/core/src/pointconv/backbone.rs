use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_layer_with_grid, Activation, ConvKernel};
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::sampling::{downsample, gather, SampleResult, SamplingConfig};
use crate::voxelization::{radius_neighbors, AccelGrid, GridLayout, VoxelizationConfig};

/// One backbone block: downsample once, then `layers` point-wise convolutions
/// sharing the same key-points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Downsampling resolution in meters.
    pub resolution: f64,
    /// Neighbor query radius in meters.
    pub radius: f64,
    /// Kernel resolution (odd).
    pub k: usize,
    pub channels: usize,
    pub layers: usize,
}

impl BlockSpec {
    /// Query radius as a multiple of the block's downsampling resolution.
    pub const RADIUS_SCALE: f64 = 1.5;

    pub fn new(resolution: f64, k: usize, channels: usize) -> Self {
        Self {
            resolution,
            radius: Self::RADIUS_SCALE * resolution,
            k,
            channels,
            layers: 2,
        }
    }

    /// Four blocks at 0.1, 0.2, 0.4 and 0.8 m with 16, 32, 64 and 128 channels, `k = 3`.
    pub fn standard() -> Vec<BlockSpec> {
        [(0.1, 16), (0.2, 32), (0.4, 64), (0.8, 128)]
            .into_iter()
            .map(|(r, c)| BlockSpec::new(r, 3, c))
            .collect()
    }

    fn voxel_config(&self, layout: GridLayout) -> Result<VoxelizationConfig> {
        Ok(VoxelizationConfig::new(self.radius, self.k)?.with_layout(layout))
    }
}

pub(crate) fn validate_blocks(blocks: &[BlockSpec]) -> Result<()> {
    for (n, b) in blocks.iter().enumerate() {
        if !(b.resolution > 0.0 && b.radius > 0.0) || b.layers == 0 || b.channels == 0 {
            return Err(Error::Config(format!("block {n} is degenerate: {b:?}")));
        }
        if b.k % 2 == 0 {
            return Err(Error::KernelResolution(b.k));
        }
    }
    if blocks.windows(2).any(|w| w[1].resolution <= w[0].resolution) {
        return Err(Error::Config("block resolutions must be strictly increasing".into()));
    }
    Ok(())
}

/// Kernels for every layer of every block.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights {
    pub blocks: Vec<Vec<ConvKernel>>,
}

impl BackboneWeights {
    pub fn init(blocks: &[BlockSpec], input_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = input_channels;
        let blocks = blocks
            .iter()
            .map(|b| {
                (0..b.layers)
                    .map(|_| {
                        let w = ConvKernel::init_uniform(b.k, c_in, b.channels, &mut rng);
                        c_in = b.channels;
                        w
                    })
                    .collect()
            })
            .collect();
        Self { blocks }
    }

    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel> {
        self.blocks.iter().flatten()
    }

    fn check(&self, blocks: &[BlockSpec], input_channels: usize) -> Result<()> {
        if self.blocks.len() != blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight blocks for {} block specs",
                self.blocks.len(),
                blocks.len()
            )));
        }
        let mut c_in = input_channels;
        for (n, (ws, b)) in self.blocks.iter().zip(blocks).enumerate() {
            if ws.len() != b.layers {
                return Err(Error::ShapeMismatch(format!(
                    "block {n}: {} kernels for {} layers",
                    ws.len(),
                    b.layers
                )));
            }
            for w in ws {
                if w.resolution() != b.k || w.in_channels() != c_in || w.out_channels() != b.channels {
                    return Err(Error::ShapeMismatch(format!(
                        "block {n}: kernel {}^3 x {} x {} but expected {}^3 x {} x {}",
                        w.resolution(),
                        w.in_channels(),
                        w.out_channels(),
                        b.k,
                        c_in,
                        b.channels
                    )));
                }
                c_in = b.channels;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BackboneOptions {
    /// Strategy, extents and seed for every block; the resolution is set per block.
    pub sampling: SamplingConfig,
    pub activation: Activation,
    pub layout: GridLayout,
}

#[derive(Clone, Debug)]
pub struct BlockOutput {
    /// Key-points of this block with the last layer's features.
    pub key_points: PointCloud,
    pub sample: SampleResult,
    pub downsample_secs: f64,
    pub conv_secs: f64,
}

#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub blocks: Vec<BlockOutput>,
    /// Last block's key-points with every block's features side by side.
    pub concatenated: PointCloud,
    pub concat_secs: f64,
}

impl BackboneOutput {
    pub fn key_point_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.key_points.len()).collect()
    }
}

/// Run the hierarchical backbone.
///
/// Each block downsamples the previous block's key-points at its own
/// resolution, so key-point sets are nested and counts never increase.
pub fn run_backbone(
    cloud: &PointCloud,
    blocks: &[BlockSpec],
    weights: &BackboneWeights,
    opts: &BackboneOptions,
) -> Result<BackboneOutput> {
    validate_blocks(blocks)?;
    weights.check(blocks, cloud.channels())?;

    let mut outputs: Vec<BlockOutput> = Vec::with_capacity(blocks.len());
    for (b, ws) in blocks.iter().zip(&weights.blocks) {
        let input = outputs.last().map_or(cloud, |o| &o.key_points);

        let t0 = Instant::now();
        let sample = downsample(input, &opts.sampling.clone().with_resolution(b.resolution))?;
        let keys = gather(input, &sample)?;
        let downsample_secs = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let vcfg = b.voxel_config(opts.layout)?;
        let grid = AccelGrid::build(input, vcfg.voxel_size(), vcfg.layout)?;
        let mut feats = conv_layer_with_grid(input, &grid, &keys, &vcfg, &ws[0], opts.activation)?;
        for w in &ws[1..] {
            // Later layers see the key-point cloud itself.
            let g = AccelGrid::build(&feats, vcfg.voxel_size(), vcfg.layout)?;
            feats = conv_layer_with_grid(&feats, &g, &keys, &vcfg, w, opts.activation)?;
        }
        let conv_secs = t1.elapsed().as_secs_f64();

        outputs.push(BlockOutput {
            key_points: feats,
            sample,
            downsample_secs,
            conv_secs,
        });
    }

    let t2 = Instant::now();
    let concatenated = concatenate(&outputs, blocks)?;
    Ok(BackboneOutput {
        blocks: outputs,
        concatenated,
        concat_secs: t2.elapsed().as_secs_f64(),
    })
}

/// Pull every block's features onto the last block's key-points by
/// nearest-neighbor lookup within that block's resolution (zeros if none).
fn concatenate(outputs: &[BlockOutput], blocks: &[BlockSpec]) -> Result<PointCloud> {
    let Some(last) = outputs.last() else {
        return Ok(PointCloud::default());
    };
    let targets = last.key_points.points();
    let total: usize = outputs.iter().map(|o| o.key_points.channels()).sum();
    let mut features = vec![0.0; targets.len() * total];
    let mut offset = 0;
    for (o, b) in outputs.iter().zip(blocks) {
        let src = &o.key_points;
        let c = src.channels();
        let grid = AccelGrid::build(src, b.resolution, GridLayout::Sorted)?;
        for (t, q) in targets.iter().enumerate() {
            if let Some(i) = nearest_within(&grid, src, q, b.resolution) {
                features[t * total + offset..][..c].copy_from_slice(src.feature(i));
            }
        }
        offset += c;
    }
    last.key_points.with_features(total, features)
}

fn nearest_within(grid: &AccelGrid, cloud: &PointCloud, q: &Point3, r: f64) -> Option<usize> {
    // Candidates come back ascending, so ties resolve to the lowest index.
    radius_neighbors(grid, cloud, q, r)
        .into_iter()
        .map(|i| (cloud.point(i).distance_squared(q), i))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{Extents, Strategy};
    use rand::Rng;

    fn opts(extent: f64) -> BackboneOptions {
        BackboneOptions {
            sampling: SamplingConfig::new(0.1, Strategy::GridBuffer).with_extents(
                Extents::new(Point3::new(-extent, -extent, -extent).unwrap(), [2.0 * extent; 3]).unwrap(),
            ),
            activation: Activation::Relu,
            layout: GridLayout::Sorted,
        }
    }

    #[test]
    fn standard_blocks() {
        let b = BlockSpec::standard();
        assert_eq!(b.iter().map(|b| b.channels).sum::<usize>(), 240);
        assert_eq!(
            b.iter().map(|b| b.resolution).collect::<Vec<_>>(),
            vec![0.1, 0.2, 0.4, 0.8]
        );
        assert!(b.iter().all(|b| b.k == 3 && b.layers == 2));
        validate_blocks(&b).unwrap();
    }

    #[test]
    fn non_increasing_resolutions_rejected() {
        let mut b = BlockSpec::standard();
        b[2].resolution = 0.2;
        assert!(validate_blocks(&b).is_err());
    }

    #[test]
    fn single_point_survives_every_block() {
        let cloud = PointCloud::from_rows(vec![Point3::new(0.3, 0.2, 0.1).unwrap()], &[vec![1.0]]).unwrap();
        let blocks = BlockSpec::standard();
        let w = BackboneWeights::init(&blocks, 1, 0);
        let out = run_backbone(&cloud, &blocks, &w, &opts(5.0)).unwrap();
        assert_eq!(out.key_point_counts(), vec![1, 1, 1, 1]);
        assert_eq!(out.concatenated.channels(), 240);
        assert_eq!(out.concatenated.len(), 1);
    }

    #[test]
    fn counts_are_non_increasing_and_features_concatenate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..4000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-0.5..0.5),
                )
                .unwrap()
            })
            .collect();
        let cloud = PointCloud::new(pts, 1, vec![1.0; 4000]).unwrap();
        let blocks = BlockSpec::standard();
        let w = BackboneWeights::init(&blocks, 1, 9);
        let out = run_backbone(&cloud, &blocks, &w, &opts(5.0)).unwrap();
        let counts = out.key_point_counts();
        assert!(counts.windows(2).all(|c| c[1] <= c[0]), "{counts:?}");
        assert_eq!(out.concatenated.len(), counts[3]);

        // Key-point sets are nested, so every block contributes its exact feature.
        let last = &out.blocks[3].key_points;
        for (bi, block) in out.blocks.iter().enumerate() {
            let off: usize = blocks[..bi].iter().map(|b| b.channels).sum();
            for t in 0..last.len() {
                let src = block
                    .key_points
                    .points()
                    .iter()
                    .position(|q| *q == last.point(t))
                    .expect("nested key-points");
                assert_eq!(
                    &out.concatenated.feature(t)[off..off + blocks[bi].channels],
                    block.key_points.feature(src)
                );
            }
        }
    }

    #[test]
    fn weight_shape_mismatch_is_rejected() {
        let cloud = PointCloud::from_rows(vec![Point3::ORIGIN], &[vec![1.0, 2.0]]).unwrap();
        let blocks = BlockSpec::standard();
        let w = BackboneWeights::init(&blocks, 1, 0);
        assert!(run_backbone(&cloud, &blocks, &w, &opts(5.0)).is_err());
    }
}
