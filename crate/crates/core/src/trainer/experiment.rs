//! Paired comparison of reserved-row and fresh-row initialization for the
//! target classes of stage 2. Both arms share data, encoder initialization,
//! base head rows and shuffling; only the target-class rows differ.

use super::synthetic::{stage2_mapping, Split, SyntheticConfig, SyntheticSpeakerSet};
use super::{
    build_head, finetune_stage2, pretrain_stage1, transfer_to_stage2, EncoderParams, EncoderShape, PoolingKind,
    TrainConfig, TrainReport,
};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferExperiment {
    pub data: SyntheticConfig,
    pub hidden: usize,
    pub channels: usize,
    pub pooling: PoolingKind,
    pub sub_centers: usize,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl Default for TransferExperiment {
    /// Both stages use the same lr scale, so the stage-2/stage-1 ratio stays
    /// at 2.5e-4. Chunks are shortened to 50 frames to keep ten paired runs
    /// within a few minutes on one core.
    fn default() -> Self {
        let lr_scale = 5.0;
        let chunk_len = 50;
        let mut stage1 = TrainConfig::stage1(lr_scale);
        stage1.epochs = 30;
        stage1.chunk_len = chunk_len;
        let mut stage2 = TrainConfig::stage2(lr_scale);
        stage2.epochs = 100;
        stage2.chunk_len = chunk_len;
        Self {
            data: SyntheticConfig { frames: 60, train_utts: 4, ..SyntheticConfig::default() },
            hidden: 32,
            channels: 16,
            pooling: PoolingKind::Gsp,
            sub_centers: 1,
            stage1,
            stage2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub reserved: bool,
    pub stage1: TrainReport,
    pub stage2: TrainReport,
    pub params: EncoderParams,
    /// Top-1 accuracy on held-out target utterances over all stage-2 classes.
    pub target_val_acc: f64,
}

impl TransferExperiment {
    fn embedding_dim(&self) -> usize {
        match self.pooling {
            PoolingKind::Gsp => 2 * self.channels,
            PoolingKind::Mqmha { queries, .. } => 2 * self.channels * queries,
        }
    }

    /// Stage 1 then stage 2 for one arm.
    pub fn run_arm(&self, seed: u64, reserved: bool) -> Result<ArmResult> {
        let set = SyntheticSpeakerSet::new(self.data.clone(), seed)?;
        let (ns, nt) = (self.data.n_source, self.data.n_target);
        let e = self.embedding_dim();

        // The reserved block is drawn after the base rows from its own
        // stream, so the base rows match between arms.
        let mut head = build_head(3 * ns, 0, self.sub_centers, e, &mut seed::substream(seed, "head-base"))?;
        if reserved {
            let extra = build_head(3 * nt, 0, self.sub_centers, e, &mut seed::substream(seed, "head-reserved"))?;
            let mut w = head.weights().to_vec();
            w.extend_from_slice(extra.weights());
            let mut mask = vec![false; 3 * ns];
            mask.resize(3 * (ns + nt), true);
            head = crate::modelmath::SpeakerHead::new(3 * (ns + nt), self.sub_centers, e, w, mask, head.scale, head.margin)?;
        }
        let shape = EncoderShape { input_dim: self.data.dim, hidden: self.hidden, channels: self.channels };
        let init = EncoderParams::random(shape, self.pooling, head, &mut seed::substream(seed, "encoder"))?;

        let train1 = set.stage1_data(Split::Train, reserved);
        let val1 = set.stage1_data(Split::Val, reserved);
        let (p1, r1) = pretrain_stage1(init, &train1, &val1, &self.stage1, &mut seed::substream(seed, "stage1"))?;

        let mapping = stage2_mapping(ns, nt, reserved);
        let p2 = transfer_to_stage2(&p1, &mapping, &mut seed::substream(seed, "fresh-rows"))?;
        let train2 = set.stage2_data(Split::Train);
        let val2 = set.target_data(Split::Val);
        let (p2, r2) = finetune_stage2(p2, &train2, &val2, &self.stage2, &mut seed::substream(seed, "stage2"))?;
        Ok(ArmResult { reserved, target_val_acc: r2.after.accuracy, stage1: r1, stage2: r2, params: p2 })
    }

    /// Both arms for one seed: `(reserved, fresh)`.
    pub fn run_pair(&self, seed: u64) -> Result<(ArmResult, ArmResult)> {
        Ok((self.run_arm(seed, true)?, self.run_arm(seed, false)?))
    }
}
