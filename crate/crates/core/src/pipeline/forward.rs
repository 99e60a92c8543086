use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::PipelineConfig;
use crate::error::{Error, Result};
use crate::geom::{OrientedBox, PointCloud};
use crate::losses::sigmoid;
use crate::pointconv::{read_kernels, run_backbone, write_kernels, BackboneOptions, BackboneWeights, ConvKernel};
use crate::roipool::{box_to_world, la_pool_indexed, mlp_forward, refine_head, RefineHeadWeights};
use crate::voxelization::{AccelGrid, GridLayout};

/// Outputs of the proposal head per key-point: foreground logit, seven box
/// parameters, flip logit.
pub const PROPOSAL_OUTPUTS: usize = 9;

/// Log-scale size deltas are clamped to this magnitude before `exp`.
const MAX_LOG_SCALE: f64 = 4.0;

/// All learnable kernels of the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub backbone: BackboneWeights,
    /// Proposal MLP as `k = 1` kernels.
    pub proposal: Vec<ConvKernel>,
    pub refine: RefineHeadWeights,
}

impl ModelWeights {
    /// Seeded uniform initialization shaped for `cfg`.
    pub fn init(cfg: &PipelineConfig, seed: u64) -> Self {
        let backbone = BackboneWeights::init(&cfg.blocks(), cfg.input_channels, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut widths = vec![cfg.feature_channels()];
        widths.extend_from_slice(&cfg.proposal_hidden);
        widths.push(PROPOSAL_OUTPUTS);
        let proposal = widths
            .windows(2)
            .map(|w| ConvKernel::init_uniform(1, w[0], w[1], &mut rng))
            .collect();
        let refine = RefineHeadWeights::init(
            cfg.channels[cfg.roi_feature_block],
            cfg.refine_conv,
            &cfg.refine_hidden,
            &mut rng,
        );
        Self {
            backbone,
            proposal,
            refine,
        }
    }

    /// Kernels in blob order: backbone, proposal MLP, refine convs, refine MLP.
    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel> {
        self.backbone
            .kernels()
            .chain(&self.proposal)
            .chain(self.refine.kernels())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_kernels(w, self.kernels())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Read a blob and split it into parts according to `cfg`; shapes must match.
    pub fn read_from<R: Read>(r: &mut R, cfg: &PipelineConfig) -> Result<Self> {
        let shape = Self::init(cfg, 0);
        let mut all = read_kernels(r)?.into_iter();
        let expected = shape.kernels().count();
        if all.len() != expected {
            return Err(Error::Blob(format!(
                "{} kernels in blob, configuration needs {expected}",
                all.len()
            )));
        }
        let mut take = |like: &ConvKernel| -> Result<ConvKernel> {
            let k = all.next().expect("count checked");
            let got = (k.resolution(), k.in_channels(), k.out_channels());
            let want = (like.resolution(), like.in_channels(), like.out_channels());
            if got != want {
                return Err(Error::Blob(format!("kernel shape {got:?}, expected {want:?}")));
            }
            Ok(k)
        };
        let backbone = BackboneWeights {
            blocks: shape
                .backbone
                .blocks
                .iter()
                .map(|b| b.iter().map(&mut take).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        };
        let proposal = shape.proposal.iter().map(&mut take).collect::<Result<_>>()?;
        let refine = RefineHeadWeights {
            convs: [take(&shape.refine.convs[0])?, take(&shape.refine.convs[1])?],
            mlp: shape.refine.mlp.iter().map(&mut take).collect::<Result<_>>()?,
        };
        Ok(Self {
            backbone,
            proposal,
            refine,
        })
    }

    pub fn load(path: &Path, cfg: &PipelineConfig) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f, cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Proposal {
    /// Index into the last block's key-points.
    pub key_point: usize,
    pub bbox: OrientedBox,
    pub fg_logit: f64,
    pub confidence: f64,
    pub flip_logit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinedProposal {
    /// Index into the proposal list.
    pub proposal: usize,
    pub bbox: OrientedBox,
    pub confidence: f64,
    pub flip_logit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub secs: f64,
    pub points_in: usize,
    pub points_out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    pub total_secs: f64,
    pub input_points: usize,
    /// Points outside the crop extents.
    pub dropped_points: usize,
    pub key_point_counts: Vec<usize>,
    pub peak_buffer_bytes: u64,
    pub points_per_sec: f64,
}

impl TimingReport {
    pub fn stage_sum(&self) -> f64 {
        self.stages.iter().map(|s| s.secs).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardOutput {
    pub proposals: Vec<Proposal>,
    pub refined: Vec<RefinedProposal>,
    pub report: TimingReport,
}

fn decode_proposal(kp: usize, anchor_pos: [f64; 3], o: &[f64], anchor: [f64; 3]) -> Result<Proposal> {
    let size = |i: usize| anchor[i] * o[4 + i].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    let bbox = OrientedBox::new(
        anchor_pos[0] + o[1],
        anchor_pos[1] + o[2],
        anchor_pos[2] + o[3],
        size(0),
        size(1),
        size(2),
        o[7],
    )?;
    Ok(Proposal {
        key_point: kp,
        bbox,
        fg_logit: o[0],
        confidence: sigmoid(o[0]),
        flip_logit: o[8],
    })
}

/// Apply refinement residuals: center offsets in the box frame scaled by the
/// box size, log-scale size deltas, additive yaw.
fn apply_residuals(b: &OrientedBox, r: &[f64; 7]) -> Result<OrientedBox> {
    let d = b.dims();
    let c = box_to_world(b, [r[0] * d[0], r[1] * d[1], r[2] * d[2]])?;
    let size = |i: usize| d[i] * r[3 + i].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
    OrientedBox::new(c.x(), c.y(), c.z(), size(0), size(1), size(2), b.yaw() + r[6])
}

/// Run the full detector on `cloud` inside a pool of `cfg.threads` workers.
pub fn run_forward(cloud: &PointCloud, cfg: &PipelineConfig, weights: &ModelWeights) -> Result<ForwardOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| forward_in_pool(cloud, cfg, weights))
}

fn forward_in_pool(cloud: &PointCloud, cfg: &PipelineConfig, weights: &ModelWeights) -> Result<ForwardOutput> {
    let start = Instant::now();
    let ones;
    let cloud = if cloud.channels() == 0 && cfg.input_channels == 1 {
        ones = PointCloud::new(cloud.points().to_vec(), 1, vec![1.0; cloud.len()])?;
        &ones
    } else {
        cloud
    };
    let blocks = cfg.blocks();
    let opts = BackboneOptions {
        sampling: cfg.sampling()?,
        activation: cfg.activation(),
        layout: cfg.layout,
    };
    let bb = run_backbone(cloud, &blocks, &weights.backbone, &opts)?;

    let mut stages = Vec::new();
    let mut prev = cloud.len();
    for (n, b) in bb.blocks.iter().enumerate() {
        let out = b.key_points.len();
        stages.push(StageTiming {
            name: format!("block{n}.downsample"),
            secs: b.downsample_secs,
            points_in: prev,
            points_out: out,
        });
        stages.push(StageTiming {
            name: format!("block{n}.conv"),
            secs: b.conv_secs,
            points_in: out,
            points_out: out,
        });
        prev = out;
    }
    let feats = &bb.concatenated;
    stages.push(StageTiming {
        name: "concat".into(),
        secs: bb.concat_secs,
        points_in: feats.len(),
        points_out: feats.len(),
    });

    let t = Instant::now();
    let act = cfg.activation();
    let proposals: Vec<Proposal> = (0..feats.len())
        .into_par_iter()
        .map(|i| {
            let o = mlp_forward(&weights.proposal, feats.feature(i), act)?;
            decode_proposal(i, feats.point(i).to_array(), &o, cfg.anchor)
        })
        .collect::<Result<_>>()?;
    stages.push(StageTiming {
        name: "proposal_head".into(),
        secs: t.elapsed().as_secs_f64(),
        points_in: feats.len(),
        points_out: proposals.len(),
    });

    let t = Instant::now();
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].fg_logit.total_cmp(&proposals[a].fg_logit).then(a.cmp(&b)));
    order.truncate(cfg.refine_top_k);
    let source = &bb.blocks[cfg.roi_feature_block].key_points;
    let roi = cfg.roi_config()?;
    let grid = AccelGrid::build(source, 1.0, GridLayout::Sorted)?;
    let pooled: Vec<_> = order
        .par_iter()
        .map(|&i| la_pool_indexed(source, &grid, &proposals[i].bbox, &roi))
        .collect::<Result<_>>()?;
    stages.push(StageTiming {
        name: "roi_pool".into(),
        secs: t.elapsed().as_secs_f64(),
        points_in: source.len(),
        points_out: pooled.len(),
    });

    let t = Instant::now();
    let refined: Vec<RefinedProposal> = order
        .par_iter()
        .zip(&pooled)
        .map(|(&i, p)| {
            let out = refine_head(p, &weights.refine)?;
            Ok(RefinedProposal {
                proposal: i,
                bbox: apply_residuals(&proposals[i].bbox, &out.residuals)?,
                confidence: out.confidence(),
                flip_logit: out.flip_logit,
            })
        })
        .collect::<Result<_>>()?;
    stages.push(StageTiming {
        name: "refine_head".into(),
        secs: t.elapsed().as_secs_f64(),
        points_in: pooled.len(),
        points_out: refined.len(),
    });

    let total_secs = start.elapsed().as_secs_f64();
    let report = TimingReport {
        stages,
        total_secs,
        input_points: cloud.len(),
        dropped_points: bb.blocks.first().map_or(0, |b| b.sample.dropped),
        key_point_counts: bb.key_point_counts(),
        peak_buffer_bytes: bb.blocks.iter().map(|b| b.sample.buffer_bytes).max().unwrap_or(0),
        points_per_sec: if total_secs > 0.0 {
            cloud.len() as f64 / total_secs
        } else {
            0.0
        },
    };
    Ok(ForwardOutput {
        proposals,
        refined,
        report,
    })
}
