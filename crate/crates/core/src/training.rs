//! Contrastive and classification losses and the two-stage training loop.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::OrientationEncoding;
use crate::error::{invalid, Error, Result};
use crate::geometry::ProjectedView;
use crate::model::{EncoderInput, ModelBundle, ModelConfig, OrientationAwareModel};
use crate::numerics::{adam_step, AdamConfig, OptimizerState, ParamStore, Tape, Tensor, Var};
use crate::textbank::TextBank;

/// Tolerance on the unit norm of inputs to [`contrastive_distance`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Contrastive margin.
    pub mu: f64,
    pub lambda_pretrain: f64,
    pub lambda_finetune: f64,
    /// Epochs against wildcard descriptions.
    pub pretrain_epochs: usize,
    /// Epochs against per-bin descriptions, after pretraining.
    pub finetune_epochs: usize,
    /// Anchors per batch; a batch holds twice as many rows.
    pub batch_pairs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// When false the metrics log carries 0 instead of elapsed seconds, so
    /// repeated runs produce identical bytes.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            lambda_pretrain: 0.5,
            lambda_finetune: 1.0,
            pretrain_epochs: 10,
            finetune_epochs: 5,
            batch_pairs: 8,
            adam: AdamConfig::default(),
            seed: 0,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.pretrain_epochs + self.finetune_epochs
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(invalid(format!("mu {} outside (0, 1]", self.mu)));
        }
        for l in [self.lambda_pretrain, self.lambda_finetune] {
            check_lambda(l)?;
        }
        if self.batch_pairs == 0 {
            return Err(invalid("batch_pairs must be at least 1"));
        }
        if self.epochs() == 0 {
            return Err(invalid("at least one epoch is required"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(invalid(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_sym: f64,
    pub l_ce: f64,
    pub total: f64,
}

/// `1 - (1 + cos) / 2` for unit vectors, clamped to `[0, 1]`.
pub fn contrastive_distance(m_hat: &[f64], t_hat: &[f64]) -> Result<f64> {
    if m_hat.len() != t_hat.len() {
        return Err(invalid("vectors differ in length"));
    }
    for v in [m_hat, t_hat] {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(invalid(format!("vector norm {n} is not 1")));
        }
    }
    let cos: f64 = m_hat.iter().zip(t_hat).map(|(a, b)| a * b).sum();
    Ok((0.5 - 0.5 * cos).clamp(0.0, 1.0))
}

/// `lambda * l_ce + (1 - lambda) * l_sym`
pub fn total_loss(l_ce: f64, l_sym: f64, lambda: f64) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    Ok(LossBreakdown {
        l_sym,
        l_ce,
        total: lambda * l_ce + (1.0 - lambda) * l_sym,
    })
}

/// Negative log-softmax at `label`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(invalid(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - logits[label])
}

/// Interleaved positive and negative rows sharing their anchor text.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    /// `[2N, D_j]` unit motion embeddings, `[m1+; m1-; m2+; ...]`.
    pub m: Tensor,
    /// `[2N, D_j]` unit text embeddings, each anchor twice.
    pub t: Tensor,
    /// `1, 0, 1, 0, ...`
    pub y: Vec<f64>,
    /// Class of each anchor.
    pub class_labels: Vec<usize>,
}

impl PairBatch {
    pub fn pairs(&self) -> usize {
        self.y.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.y.len();
        if rows == 0 || rows % 2 != 0 || self.m.rows() != rows || self.t.rows() != rows {
            return Err(invalid("pair batch needs an even, matching number of rows"));
        }
        if self.y.iter().enumerate().any(|(i, &y)| y != if i % 2 == 0 { 1.0 } else { 0.0 }) {
            return Err(invalid("labels must alternate 1, 0"));
        }
        if self.class_labels.len() != rows / 2 {
            return Err(invalid("one class label per anchor"));
        }
        Ok(())
    }
}

fn alternating_labels(pairs: usize) -> Vec<f64> {
    (0..2 * pairs).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect()
}

/// Symmetric margin loss over all rows of `m` and `t`, averaged over the rows.
pub fn sym_loss_on_tape(tape: &mut Tape, m: Var, t: Var, y: &[f64], mu: f64) -> Result<Var> {
    let rows = tape.value(m).rows();
    if y.len() != rows {
        return Err(invalid("one label per row required"));
    }
    let cos = tape.row_dot(m, t)?;
    let d = tape.affine(cos, -0.5, 0.5);
    let d = tape.clamp(d, 0.0, 1.0);
    let pos = tape.square(d);
    let gap = tape.affine(d, -1.0, mu);
    let gap = tape.relu(gap);
    let neg = tape.square(gap);
    let inv = 1.0 / rows as f64;
    let wp = Arc::new(y.iter().map(|v| v * inv).collect());
    let wn = Arc::new(y.iter().map(|v| (1.0 - v) * inv).collect());
    let lp = tape.weighted_sum(pos, wp)?;
    let ln = tape.weighted_sum(neg, wn)?;
    tape.add(lp, ln)
}

pub fn sym_loss(batch: &PairBatch, mu: f64) -> Result<f64> {
    batch.validate()?;
    let mut tape = Tape::new();
    let m = tape.constant(batch.m.clone());
    let t = tape.constant(batch.t.clone());
    let l = sym_loss_on_tape(&mut tape, m, t, &batch.y, mu)?;
    Ok(tape.scalar(l))
}

fn stack_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::matrix(rows.len(), cols, rows.concat())
}

/// Samples `n` anchors and, for each, a motion of another class; embeds both
/// with the model and the anchor text with the text head.
#[allow(clippy::too_many_arguments)]
pub fn build_pair_batch<R: Rng + ?Sized>(
    views: &[ProjectedView],
    labels: &[usize],
    bank: &TextBank,
    per_bin_text: bool,
    model: &OrientationAwareModel,
    store: &ParamStore,
    n: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if views.len() != labels.len() || views.is_empty() || n == 0 {
        return Err(invalid("need matching, non-empty views and labels and n >= 1"));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::CannotSampleNegative);
    }
    let mut m_rows = Vec::with_capacity(2 * n);
    let mut t_rows = Vec::with_capacity(2 * n);
    let mut class_labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(0..views.len());
        let others: Vec<usize> = (0..views.len()).filter(|&i| labels[i] != labels[a]).collect();
        let b = others[rng.random_range(0..others.len())];
        let bin = per_bin_text.then_some(views[a].theta_deg);
        let text = bank.embedding(&views[a].label, bin)?;
        let t = model.embed_text(store, &text.t_hat)?;
        m_rows.push(model.run_view(store, &views[a])?.joint);
        m_rows.push(model.run_view(store, &views[b])?.joint);
        t_rows.push(t.clone());
        t_rows.push(t);
        class_labels.push(labels[a]);
    }
    Ok(PairBatch {
        m: stack_rows(&m_rows)?,
        t: stack_rows(&t_rows)?,
        y: alternating_labels(n),
        class_labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:e}\t{:.9}\t{:.9}\t{:.9}\t{:.3}",
            self.epoch, self.lr, self.losses.l_sym, self.losses.l_ce, self.losses.total, self.wall_seconds
        )
    }
}

/// Tab-separated `epoch, lr, l_sym, l_ce, total, wall-seconds`, one line per epoch.
pub fn format_metrics(metrics: &[EpochMetrics]) -> String {
    let mut s = String::new();
    for m in metrics {
        let _ = writeln!(s, "{}", m.log_line());
    }
    s
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: Vec<EpochMetrics>,
}

/// Labeled training items with cached orientation and text encodings.
struct Corpus<'a> {
    views: &'a [ProjectedView],
    labels: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    gammas: HashMap<i32, OrientationEncoding>,
}

impl<'a> Corpus<'a> {
    fn new(views: &'a [ProjectedView], classes: &[String], model: &OrientationAwareModel) -> Result<Self> {
        let mut labels = Vec::with_capacity(views.len());
        let mut by_class = vec![Vec::new(); classes.len()];
        let mut gammas = HashMap::new();
        for (i, v) in views.iter().enumerate() {
            let c = classes
                .iter()
                .position(|c| *c == v.label)
                .ok_or_else(|| invalid(format!("view label `{}` is not a training class", v.label)))?;
            labels.push(c);
            by_class[c].push(i);
            if let std::collections::hash_map::Entry::Vacant(e) = gammas.entry(v.theta_deg) {
                e.insert(model.orientation(v.theta_deg as f64)?);
            }
        }
        if by_class.iter().filter(|c| !c.is_empty()).count() < 2 {
            return Err(Error::CannotSampleNegative);
        }
        Ok(Self {
            views,
            labels,
            by_class,
            gammas,
        })
    }

    /// Uniform draw among items whose class differs from `class`.
    fn sample_other<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> usize {
        let total = self.views.len() - self.by_class[class].len();
        let mut k = rng.random_range(0..total);
        for (c, items) in self.by_class.iter().enumerate() {
            if c == class {
                continue;
            }
            if k < items.len() {
                return items[k];
            }
            k -= items.len();
        }
        unreachable!("k is below the number of other-class items")
    }
}

struct Stage {
    lambda: f64,
    per_bin_text: bool,
}

/// One training item ready for the model.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub input: EncoderInput,
    pub gamma: OrientationEncoding,
    pub class: usize,
}

#[derive(Clone, Debug)]
pub enum Negative {
    /// Reuses the embedding of another anchor in the same batch.
    Anchor(usize),
    /// An item that is not an anchor.
    Extra(BatchItem),
}

/// Anchors, one negative and one unit text embedding per anchor.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub anchors: Vec<BatchItem>,
    pub negatives: Vec<Negative>,
    pub texts: Vec<Vec<f64>>,
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        let n = self.anchors.len();
        if n == 0 || self.negatives.len() != n || self.texts.len() != n {
            return Err(invalid("a batch plan needs one negative and one text per anchor"));
        }
        for (i, neg) in self.negatives.iter().enumerate() {
            let class = match neg {
                Negative::Anchor(j) => self
                    .anchors
                    .get(*j)
                    .ok_or_else(|| invalid(format!("negative refers to anchor {j} of {n}")))?
                    .class,
                Negative::Extra(item) => item.class,
            };
            if class == self.anchors[i].class {
                return Err(invalid(format!("negative of anchor {i} shares its class")));
            }
        }
        Ok(())
    }
}

/// Scalars of the batch objective on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_sym: Var,
    pub l_ce: Var,
    pub total: Var,
}

/// `lambda * l_ce + (1 - lambda) * l_sym` for one batch. Text rows go through
/// the text head; `l_ce` is the mean over anchors.
pub fn batch_loss(
    model: &OrientationAwareModel,
    tape: &mut Tape,
    store: &ParamStore,
    plan: &BatchPlan,
    lambda: f64,
    mu: f64,
) -> Result<LossVars> {
    check_lambda(lambda)?;
    plan.validate()?;
    let mut joint = Vec::with_capacity(plan.anchors.len());
    let mut logits = Vec::with_capacity(plan.anchors.len());
    for a in &plan.anchors {
        let v = model.forward(tape, store, &a.input, &a.gamma)?;
        joint.push(v.joint);
        logits.push(v.logits);
    }
    let text_dim = model.config().text_dim;
    let mut m_rows = Vec::with_capacity(2 * joint.len());
    let mut t_rows = Vec::with_capacity(2 * joint.len() * text_dim);
    for (i, neg) in plan.negatives.iter().enumerate() {
        let negative = match neg {
            Negative::Anchor(j) => joint[*j],
            Negative::Extra(item) => model.forward(tape, store, &item.input, &item.gamma)?.joint,
        };
        m_rows.push(joint[i]);
        m_rows.push(negative);
        if plan.texts[i].len() != text_dim {
            return Err(invalid(format!("text {i} has width {}, expected {text_dim}", plan.texts[i].len())));
        }
        t_rows.extend_from_slice(&plan.texts[i]);
        t_rows.extend_from_slice(&plan.texts[i]);
    }
    let m = tape.concat_rows(&m_rows)?;
    let t = tape.constant(Tensor::matrix(m_rows.len(), text_dim, t_rows)?);
    let t = model.project_text(tape, store, t)?;
    let l_sym = sym_loss_on_tape(tape, m, t, &alternating_labels(plan.anchors.len()), mu)?;
    let all_logits = tape.concat_rows(&logits)?;
    let labels = Arc::new(plan.anchors.iter().map(|a| a.class).collect());
    let ce = tape.cross_entropy(all_logits, labels)?;
    let l_ce = tape.mean(ce);
    let a = tape.scale(l_ce, lambda);
    let b = tape.scale(l_sym, 1.0 - lambda);
    let total = tape.add(a, b)?;
    Ok(LossVars { l_sym, l_ce, total })
}

impl Corpus<'_> {
    fn item(&self, model: &OrientationAwareModel, i: usize) -> Result<BatchItem> {
        let view = &self.views[i];
        Ok(BatchItem {
            input: model.prepare(view)?,
            gamma: self.gammas[&view.theta_deg].clone(),
            class: self.labels[i],
        })
    }

    /// Negatives come from the batch's own anchors of other classes, or
    /// from the corpus when the batch holds a single class.
    fn plan<R: Rng + ?Sized>(
        &self,
        model: &OrientationAwareModel,
        texts: &HashMap<(usize, Option<i32>), Vec<f64>>,
        anchors: &[usize],
        per_bin_text: bool,
        rng: &mut R,
    ) -> Result<BatchPlan> {
        let mut plan = BatchPlan {
            anchors: Vec::with_capacity(anchors.len()),
            negatives: Vec::with_capacity(anchors.len()),
            texts: Vec::with_capacity(anchors.len()),
        };
        for &a in anchors {
            plan.anchors.push(self.item(model, a)?);
        }
        for &a in anchors {
            let class = self.labels[a];
            let in_batch: Vec<usize> = (0..anchors.len())
                .filter(|&j| self.labels[anchors[j]] != class)
                .collect();
            plan.negatives.push(if in_batch.is_empty() {
                Negative::Extra(self.item(model, self.sample_other(class, rng))?)
            } else {
                Negative::Anchor(in_batch[rng.random_range(0..in_batch.len())])
            });
            let bin = per_bin_text.then_some(self.views[a].theta_deg);
            plan.texts.push(texts[&(class, bin)].clone());
        }
        Ok(plan)
    }
}

/// One optimizer step.
fn train_step(
    model: &OrientationAwareModel,
    store: &mut ParamStore,
    state: &mut OptimizerState,
    plan: &BatchPlan,
    lambda: f64,
    mu: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = batch_loss(model, &mut tape, store, plan, lambda, mu)?;
    let losses = LossBreakdown {
        l_sym: tape.scalar(vars.l_sym),
        l_ce: tape.scalar(vars.l_ce),
        total: tape.scalar(vars.total),
    };
    if !(losses.total.is_finite() && losses.l_sym.is_finite() && losses.l_ce.is_finite()) {
        return Err(Error::Divergence(format!(
            "non-finite loss at step {}: l_sym={} l_ce={} total={}",
            state.step() + 1,
            losses.l_sym,
            losses.l_ce,
            losses.total
        )));
    }
    tape.backward(vars.total, store)?;
    adam_step(store, state)?;
    Ok(losses)
}

/// Pretrains against wildcard descriptions at `lambda_pretrain`, then
/// finetunes against per-bin descriptions at `lambda_finetune`. The epoch
/// counter driving the learning-rate decay runs across both stages.
pub fn train(
    views: &[ProjectedView],
    classes: &[String],
    bank: &TextBank,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if views.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if model_config.num_classes != classes.len() {
        return Err(invalid(format!(
            "model has {} classes, {} given",
            model_config.num_classes,
            classes.len()
        )));
    }
    if model_config.text_dim != bank.dim() {
        return Err(invalid(format!(
            "model text width {} differs from the table's {}",
            model_config.text_dim,
            bank.dim()
        )));
    }
    let model = OrientationAwareModel::new(model_config)?;
    let corpus = Corpus::new(views, classes, &model)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rng = init_rng.clone();
    rng.set_stream(1);
    let mut store = model.init_params(&mut init_rng);
    let mut state = OptimizerState::new(&store, config.adam)?;

    let mut texts: HashMap<(usize, Option<i32>), Vec<f64>> = HashMap::new();
    for (c, name) in classes.iter().enumerate() {
        texts.insert((c, None), bank.embedding(name, None)?.t_hat);
        for &bin in corpus.gammas.keys() {
            texts.insert((c, Some(bin)), bank.embedding(name, Some(bin))?.t_hat);
        }
    }

    let start = Instant::now();
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs());
    for epoch in 0..config.epochs() {
        let stage = if epoch < config.pretrain_epochs {
            Stage {
                lambda: config.lambda_pretrain,
                per_bin_text: false,
            }
        } else {
            Stage {
                lambda: config.lambda_finetune,
                per_bin_text: true,
            }
        };
        state.set_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for anchors in order.chunks(config.batch_pairs) {
            let plan = corpus.plan(&model, &texts, anchors, stage.per_bin_text, &mut rng)?;
            let l = train_step(&model, &mut store, &mut state, &plan, stage.lambda, config.mu)?;
            sums[0] += l.l_sym;
            sums[1] += l.l_ce;
            sums[2] += l.total;
            batches += 1;
        }
        let n = batches as f64;
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr: state.lr(),
            losses: LossBreakdown {
                l_sym: sums[0] / n,
                l_ce: sums[1] / n,
                total: sums[2] / n,
            },
            wall_seconds: if config.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log::info!("epoch {}: {}", m.epoch, m.log_line());
        metrics.push(m);
    }
    Ok(TrainOutcome {
        bundle: ModelBundle::new(model, store, classes.to_vec())?,
        metrics,
    })
}
