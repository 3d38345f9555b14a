//! Orientation-aware motion network.
//!
//! A small graph-temporal encoder turns a projected view into segment tokens.
//! Two cross-attention branches condition those tokens on the orientation
//! encoding; their outputs are concatenated into the motion feature `m`, which
//! feeds a classifier and a projection into the joint motion-text space.

mod attention;
mod encoder;
mod bundle;

use std::sync::Arc;

use rand::Rng;

pub use attention::{cross_attention, AttentionOutput, AttentionParams};
pub use bundle::{meta_path, ModelBundle};
pub use encoder::{prepare_input, segment_ranges, window_count, EncoderInput, INPUT_CHANNELS};

use crate::encoding::{encode_degrees, OrientationEncoding, DEFAULT_LEVELS};
use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

use crate::geometry::skeleton::{normalized_adjacency, NUM_JOINTS};
use crate::geometry::ProjectedView;
use crate::numerics::{glorot, uniform, BlockOperator, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frequency levels `L` of the orientation encoding.
    pub levels: usize,
    /// Branch width `D`. `2D` is the motion feature width.
    pub branch_dim: usize,
    pub heads: usize,
    /// Token width `D_e`.
    pub encoder_dim: usize,
    /// Joint motion-text space width `D_j`.
    pub joint_dim: usize,
    /// Text embedding width `D_t`.
    pub text_dim: usize,
    pub gcn_channels: usize,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    pub temporal_channels: usize,
    pub segments: usize,
    pub classifier_hidden: usize,
    pub orientation_hidden: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            branch_dim: DEFAULT_LEVELS,
            heads: 4,
            encoder_dim: 64,
            joint_dim: 256,
            text_dim: 512,
            gcn_channels: 16,
            temporal_kernel: 4,
            temporal_stride: 4,
            temporal_channels: 16,
            segments: 8,
            classifier_hidden: 256,
            orientation_hidden: DEFAULT_LEVELS,
            num_classes,
        }
    }

    /// Motion feature width `2D`.
    pub fn motion_dim(&self) -> usize {
        2 * self.branch_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("levels", self.levels),
            ("branch_dim", self.branch_dim),
            ("heads", self.heads),
            ("encoder_dim", self.encoder_dim),
            ("joint_dim", self.joint_dim),
            ("text_dim", self.text_dim),
            ("gcn_channels", self.gcn_channels),
            ("temporal_kernel", self.temporal_kernel),
            ("temporal_stride", self.temporal_stride),
            ("temporal_channels", self.temporal_channels),
            ("segments", self.segments),
            ("classifier_hidden", self.classifier_hidden),
            ("orientation_hidden", self.orientation_hidden),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if self.branch_dim % self.heads != 0 {
            return Err(invalid(format!(
                "branch_dim {} not divisible by {} heads",
                self.branch_dim, self.heads
            )));
        }
        if self.levels != self.branch_dim {
            return Err(invalid(format!(
                "encoding width 2L = {} must equal the motion feature width 2D = {}",
                2 * self.levels,
                2 * self.branch_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionTokens {
    /// `[segments, D_e]`
    pub tokens: Tensor,
    pub pooled: Vec<f64>,
    /// 1 for tokens that saw at least one visible joint.
    pub token_mask: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionEmbedding {
    pub m: Vec<f64>,
    pub m_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassLogits {
    pub logits: Vec<f64>,
}

/// Tape handles of one view's forward pass.
#[derive(Clone, Debug)]
pub struct ViewVars {
    pub tokens: Var,
    pub pooled: Var,
    pub h_a: Var,
    pub h_b: Var,
    pub m: Var,
    pub logits: Var,
    /// Unit motion embedding in the joint space.
    pub joint: Var,
    pub attention_a: Vec<Var>,
    pub attention_b: Vec<Var>,
}

/// Plain values of one view's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewOutputs {
    pub tokens: MotionTokens,
    pub embedding: MotionEmbedding,
    pub logits: ClassLogits,
    pub joint: Vec<f64>,
}

mod names {
    pub const GCN1_W: &str = "encoder.gcn1.weight";
    pub const GCN1_B: &str = "encoder.gcn1.bias";
    pub const GCN2_W: &str = "encoder.gcn2.weight";
    pub const GCN2_B: &str = "encoder.gcn2.bias";
    pub const TEMP_W: &str = "encoder.temporal.weight";
    pub const TEMP_B: &str = "encoder.temporal.bias";
    pub const TOKEN_W: &str = "encoder.token.weight";
    pub const TOKEN_B: &str = "encoder.token.bias";
    pub const A_QUERY: &str = "branch_a.query";
    pub const A_ORIENT1_W: &str = "branch_a.orient1.weight";
    pub const A_ORIENT1_B: &str = "branch_a.orient1.bias";
    pub const A_ORIENT2_W: &str = "branch_a.orient2.weight";
    pub const A_ORIENT2_B: &str = "branch_a.orient2.bias";
    pub const A_KV_W: &str = "branch_a.kv.weight";
    pub const A_KV_B: &str = "branch_a.kv.bias";
    pub const A_ATTN: &str = "branch_a.attn";
    pub const B_QUERY_W: &str = "branch_b.query.weight";
    pub const B_QUERY_B: &str = "branch_b.query.bias";
    pub const B_KEY1_W: &str = "branch_b.key1.weight";
    pub const B_KEY1_B: &str = "branch_b.key1.bias";
    pub const B_KEY2_W: &str = "branch_b.key2.weight";
    pub const B_KEY2_B: &str = "branch_b.key2.bias";
    pub const B_ATTN: &str = "branch_b.attn";
    pub const CLS1_W: &str = "classifier.fc1.weight";
    pub const CLS1_B: &str = "classifier.fc1.bias";
    pub const CLS2_W: &str = "classifier.fc2.weight";
    pub const CLS2_B: &str = "classifier.fc2.bias";
    pub const HEAD_MOTION: &str = "head.motion.weight";
    pub const HEAD_TEXT: &str = "head.text.weight";
}
pub use names::{HEAD_MOTION, HEAD_TEXT};

/// `x W + b`
fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = tape.param(store, w)?;
    let b = tape.param(store, b)?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Linear map without bias followed by row-wise unit normalization.
pub fn project_to_joint_space(tape: &mut Tape, store: &ParamStore, x: Var, head: &str) -> Result<Var> {
    let w = tape.param(store, head)?;
    let y = tape.matmul(x, w)?;
    tape.l2_normalize(y)
}

#[derive(Clone, Debug)]
pub struct OrientationAwareModel {
    config: ModelConfig,
    adjacency: Arc<BlockOperator>,
    attn_a: AttentionParams,
    attn_b: AttentionParams,
}

impl OrientationAwareModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let adjacency = Arc::new(BlockOperator::from_dense(NUM_JOINTS, &normalized_adjacency())?);
        let attn_a = AttentionParams::with_prefix(names::A_ATTN, config.heads);
        let attn_b = AttentionParams::with_prefix(names::B_ATTN, config.heads);
        Ok(Self {
            config,
            adjacency,
            attn_a,
            attn_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Shapes of every parameter, in store order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        use names::*;
        let c = &self.config;
        let (d, g, t) = (c.branch_dim, c.gcn_channels, c.temporal_channels);
        let enc = 2 * c.levels;
        let mut v: Vec<(String, Vec<usize>)> = vec![
            (GCN1_W.into(), vec![INPUT_CHANNELS, g]),
            (GCN1_B.into(), vec![1, g]),
            (GCN2_W.into(), vec![g, g]),
            (GCN2_B.into(), vec![1, g]),
            (TEMP_W.into(), vec![c.temporal_kernel * g, t]),
            (TEMP_B.into(), vec![1, t]),
            (TOKEN_W.into(), vec![NUM_JOINTS * t, c.encoder_dim]),
            (TOKEN_B.into(), vec![1, c.encoder_dim]),
            (A_QUERY.into(), vec![1, d]),
            (A_ORIENT1_W.into(), vec![enc, c.orientation_hidden]),
            (A_ORIENT1_B.into(), vec![1, c.orientation_hidden]),
            (A_ORIENT2_W.into(), vec![c.orientation_hidden, d]),
            (A_ORIENT2_B.into(), vec![1, d]),
            (A_KV_W.into(), vec![c.encoder_dim, d]),
            (A_KV_B.into(), vec![1, d]),
        ];
        for p in [&self.attn_a.wq, &self.attn_a.wk, &self.attn_a.wv, &self.attn_a.wo] {
            v.push((p.clone(), vec![d, d]));
        }
        v.extend([
            (B_QUERY_W.into(), vec![c.encoder_dim, d]),
            (B_QUERY_B.into(), vec![1, d]),
            (B_KEY1_W.into(), vec![enc, d]),
            (B_KEY1_B.into(), vec![1, d]),
            (B_KEY2_W.into(), vec![enc, d]),
            (B_KEY2_B.into(), vec![1, d]),
        ]);
        for p in [&self.attn_b.wq, &self.attn_b.wk, &self.attn_b.wv, &self.attn_b.wo] {
            v.push((p.clone(), vec![d, d]));
        }
        v.extend([
            (CLS1_W.into(), vec![2 * d, c.classifier_hidden]),
            (CLS1_B.into(), vec![1, c.classifier_hidden]),
            (CLS2_W.into(), vec![c.classifier_hidden, c.num_classes]),
            (CLS2_B.into(), vec![1, c.num_classes]),
            (HEAD_MOTION.into(), vec![2 * d, c.joint_dim]),
            (HEAD_TEXT.into(), vec![c.text_dim, c.joint_dim]),
        ]);
        v
    }

    /// Glorot weights, zero biases and a small random query vector.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if name == names::A_QUERY {
                uniform(rng, &shape, 1.0 / (shape[1] as f64).sqrt())
            } else {
                glorot(rng, shape[0], shape[1])
            };
            store.insert(name, t).expect("parameter names are unique");
        }
        store
    }

    /// Checks that `store` holds every parameter with the expected shape.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        for (name, shape) in self.param_shapes() {
            let t = store
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn prepare(&self, view: &ProjectedView) -> Result<EncoderInput> {
        prepare_input(view, self.config.temporal_kernel)
    }

    pub fn orientation(&self, theta_deg: f64) -> Result<OrientationEncoding> {
        encode_degrees(theta_deg, self.config.levels)
    }

    /// Graph convolutions, strided temporal convolution and segment pooling.
    /// Returns `(tokens, pooled, token_mask)`.
    pub fn encode_motion(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &EncoderInput,
    ) -> Result<(Var, Var, Arc<Vec<f64>>)> {
        use names::*;
        let c = &self.config;
        if input.frames < c.temporal_kernel {
            return Err(invalid(format!(
                "{} frames is shorter than the temporal kernel {}",
                input.frames, c.temporal_kernel
            )));
        }
        let x = tape.constant(input.features.clone());
        let mut h = x;
        for (w, b) in [(GCN1_W, GCN1_B), (GCN2_W, GCN2_B)] {
            let mixed = tape.block_mix(h, self.adjacency.clone())?;
            let y = linear(tape, store, mixed, w, b)?;
            let y = tape.relu(y);
            h = tape.mul_rows(y, input.joint_mask.clone())?;
        }
        let u = tape.temporal_unfold(h, NUM_JOINTS, c.temporal_kernel, c.temporal_stride)?;
        let u = linear(tape, store, u, TEMP_W, TEMP_B)?;
        let u = tape.relu(u);
        let windows = window_count(input.frames, c.temporal_kernel, c.temporal_stride);
        let u = tape.reshape(u, vec![windows, NUM_JOINTS * c.temporal_channels])?;
        let per_window = linear(tape, store, u, TOKEN_W, TOKEN_B)?;
        let ranges = segment_ranges(windows, c.segments);
        let mask = encoder::segment_mask(input, &ranges, c.temporal_kernel, c.temporal_stride);
        let tokens = tape.mean_pool(per_window, Arc::new(ranges))?;
        let mask = Arc::new(mask);
        let pooled = tape.masked_mean(tokens, mask.clone())?;
        Ok((tokens, pooled, mask))
    }

    /// Branch A: the orientation query `q0 + MLP(gamma)` attends over the
    /// projected motion tokens.
    pub fn orientation_as_query(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        gamma: Var,
        tokens: Var,
    ) -> Result<AttentionOutput> {
        use names::*;
        self.check_gamma(tape, gamma)?;
        let hidden = linear(tape, store, gamma, A_ORIENT1_W, A_ORIENT1_B)?;
        let hidden = tape.relu(hidden);
        let offset = linear(tape, store, hidden, A_ORIENT2_W, A_ORIENT2_B)?;
        let q0 = tape.param(store, A_QUERY)?;
        let query = tape.add(offset, q0)?;
        let kv = linear(tape, store, tokens, A_KV_W, A_KV_B)?;
        cross_attention(tape, store, &self.attn_a, query, kv, kv)
    }

    /// Branch B: the projected pooled motion feature attends over two tokens
    /// obtained from the orientation encoding.
    pub fn motion_as_query(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pooled: Var,
        gamma: Var,
    ) -> Result<AttentionOutput> {
        use names::*;
        self.check_gamma(tape, gamma)?;
        let query = linear(tape, store, pooled, B_QUERY_W, B_QUERY_B)?;
        let k1 = linear(tape, store, gamma, B_KEY1_W, B_KEY1_B)?;
        let k2 = linear(tape, store, gamma, B_KEY2_W, B_KEY2_B)?;
        let kv = tape.concat_rows(&[k1, k2])?;
        cross_attention(tape, store, &self.attn_b, query, kv, kv)
    }

    fn check_gamma(&self, tape: &Tape, gamma: Var) -> Result<()> {
        let t = tape.value(gamma);
        if t.rows() != 1 || t.cols() != 2 * self.config.levels {
            return Err(invalid(format!(
                "orientation encoding of shape {:?}, expected [1, {}]",
                t.shape(),
                2 * self.config.levels
            )));
        }
        Ok(())
    }

    /// `m = [h_A, h_B]`; also returns `m / |m|`.
    pub fn fuse_branches(&self, tape: &mut Tape, h_a: Var, h_b: Var) -> Result<(Var, Var)> {
        if tape.value(h_a).shape() != tape.value(h_b).shape() {
            return Err(invalid("branch outputs differ in shape"));
        }
        let m = tape.concat_cols(&[h_a, h_b])?;
        let m_hat = tape.l2_normalize(m)?;
        Ok((m, m_hat))
    }

    pub fn classify(&self, tape: &mut Tape, store: &ParamStore, m: Var) -> Result<Var> {
        use names::*;
        let h = linear(tape, store, m, CLS1_W, CLS1_B)?;
        let h = tape.relu(h);
        linear(tape, store, h, CLS2_W, CLS2_B)
    }

    /// Unit text embedding in the joint space, one per row of `text`.
    pub fn project_text(&self, tape: &mut Tape, store: &ParamStore, text: Var) -> Result<Var> {
        project_to_joint_space(tape, store, text, HEAD_TEXT)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &EncoderInput,
        gamma: &OrientationEncoding,
    ) -> Result<ViewVars> {
        let (tokens, pooled, _) = self.encode_motion(tape, store, input)?;
        let g = tape.constant(Tensor::row(gamma.gamma.clone()));
        let a = self.orientation_as_query(tape, store, g, tokens)?;
        let b = self.motion_as_query(tape, store, pooled, g)?;
        let (m, _) = self.fuse_branches(tape, a.output, b.output)?;
        let logits = self.classify(tape, store, m)?;
        let joint = project_to_joint_space(tape, store, m, HEAD_MOTION)?;
        Ok(ViewVars {
            tokens,
            pooled,
            h_a: a.output,
            h_b: b.output,
            m,
            logits,
            joint,
            attention_a: a.weights,
            attention_b: b.weights,
        })
    }

    /// Forward pass on a frozen model, conditioned on the view's own theta.
    pub fn run_view(&self, store: &ParamStore, view: &ProjectedView) -> Result<ViewOutputs> {
        let input = self.prepare(view)?;
        let gamma = self.orientation(view.theta_deg as f64)?;
        self.run_input(store, &input, &gamma)
    }

    pub fn run_input(
        &self,
        store: &ParamStore,
        input: &EncoderInput,
        gamma: &OrientationEncoding,
    ) -> Result<ViewOutputs> {
        let mut tape = Tape::new();
        let (tokens, _, mask) = self.encode_motion(&mut tape, store, input)?;
        let g = tape.constant(Tensor::row(gamma.gamma.clone()));
        let a = self.orientation_as_query(&mut tape, store, g, tokens)?;
        let pooled = tape.masked_mean(tokens, mask.clone())?;
        let b = self.motion_as_query(&mut tape, store, pooled, g)?;
        let (m, m_hat) = self.fuse_branches(&mut tape, a.output, b.output)?;
        let logits = self.classify(&mut tape, store, m)?;
        let joint = project_to_joint_space(&mut tape, store, m, HEAD_MOTION)?;
        Ok(ViewOutputs {
            tokens: MotionTokens {
                tokens: tape.value(tokens).clone(),
                pooled: tape.value(pooled).data().to_vec(),
                token_mask: mask.to_vec(),
            },
            embedding: MotionEmbedding {
                m: tape.value(m).data().to_vec(),
                m_hat: tape.value(m_hat).data().to_vec(),
            },
            logits: ClassLogits {
                logits: tape.value(logits).data().to_vec(),
            },
            joint: tape.value(joint).data().to_vec(),
        })
    }

    /// Text embedding projected into the joint space.
    pub fn embed_text(&self, store: &ParamStore, text: &[f64]) -> Result<Vec<f64>> {
        if text.len() != self.config.text_dim {
            return Err(invalid(format!(
                "text embedding of width {}, expected {}",
                text.len(),
                self.config.text_dim
            )));
        }
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::row(text.to_vec()));
        let j = self.project_text(&mut tape, store, t)?;
        Ok(tape.value(j).data().to_vec())
    }
}
