//! Text-similarity and classifier prediction, multi-view fusion and the
//! evaluation harnesses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::error::{invalid, Error, Result};
use crate::geometry::ProjectedView;
use crate::model::ModelBundle;
use crate::textbank::TextBank;

/// Tolerance on the unit norm of motion embeddings passed to [`score_view`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityScores {
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedScores {
    pub s_bar: Vec<f64>,
    pub views_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewMode {
    Sv,
    Mv,
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewMode::Sv => "sv",
            ViewMode::Mv => "mv",
        })
    }
}

impl std::str::FromStr for ViewMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sv" => Ok(ViewMode::Sv),
            "mv" => Ok(ViewMode::Mv),
            _ => Err(invalid(format!("unknown view mode `{s}`, expected sv or mv"))),
        }
    }
}

/// `Seen` is same-domain classification with the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalMode {
    Zsl,
    Zscd,
    Seen,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Zsl => "zsl",
            EvalMode::Zscd => "zscd",
            EvalMode::Seen => "seen",
        })
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zsl" => Ok(EvalMode::Zsl),
            "zscd" => Ok(EvalMode::Zscd),
            "seen" => Ok(EvalMode::Seen),
            _ => Err(invalid(format!("unknown mode `{s}`, expected zsl, zscd or seen"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub k_hat: usize,
    /// Every class index, best first.
    pub topk: Vec<usize>,
    pub mode: ViewMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopK {
    pub top1: f64,
    pub top5: f64,
}

/// Joint-space text embeddings of `candidates` at `theta_bin`, or their
/// wildcard embeddings when the bin is unknown.
pub fn candidate_embeddings(
    bundle: &ModelBundle,
    bank: &TextBank,
    candidates: &[String],
    theta_bin: Option<i32>,
) -> Result<Vec<Vec<f64>>> {
    if candidates.is_empty() {
        return Err(invalid("candidate list is empty"));
    }
    candidates
        .iter()
        .map(|c| {
            let t = bank.embedding(c, theta_bin)?;
            bundle.model.embed_text(&bundle.store, &t.t_hat)
        })
        .collect()
}

/// Dot products of a joint-space motion embedding with each candidate's
/// joint-space text embedding.
pub fn score_view(
    m_hat: &[f64],
    bundle: &ModelBundle,
    bank: &TextBank,
    candidates: &[String],
    theta_bin: Option<i32>,
) -> Result<SimilarityScores> {
    let texts = candidate_embeddings(bundle, bank, candidates, theta_bin)?;
    score_against(m_hat, &texts)
}

/// Dot products against already projected candidates.
pub fn score_against(m_hat: &[f64], texts: &[Vec<f64>]) -> Result<SimilarityScores> {
    if texts.is_empty() {
        return Err(invalid("candidate list is empty"));
    }
    let n = m_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("motion embedding norm {n} is not 1")));
    }
    let scores = texts
        .iter()
        .map(|t| {
            if t.len() != m_hat.len() {
                return Err(invalid("text and motion embeddings differ in width"));
            }
            let s: f64 = m_hat.iter().zip(t).map(|(a, b)| a * b).sum();
            Ok(s.clamp(-1.0, 1.0))
        })
        .collect::<Result<_>>()?;
    Ok(SimilarityScores { scores })
}

/// Elementwise mean.
pub fn fuse_views(scores: &[SimilarityScores]) -> Result<FusedScores> {
    let first = scores.first().ok_or_else(|| invalid("no views to fuse"))?;
    let k = first.scores.len();
    if scores.iter().any(|s| s.scores.len() != k) {
        return Err(invalid("views score different candidate counts"));
    }
    let mut s_bar = vec![0.0; k];
    for s in scores {
        for (acc, v) in s_bar.iter_mut().zip(&s.scores) {
            *acc += v;
        }
    }
    let n = scores.len() as f64;
    s_bar.iter_mut().for_each(|v| *v /= n);
    Ok(FusedScores {
        s_bar,
        views_used: scores.len(),
    })
}

/// Ranks by descending score; equal scores keep ascending index order.
pub fn predict(fused: &FusedScores, mode: ViewMode) -> Result<Prediction> {
    rank(&fused.s_bar, mode)
}

fn rank(scores: &[f64], mode: ViewMode) -> Result<Prediction> {
    if scores.is_empty() {
        return Err(invalid("nothing to rank"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores contain NaN"));
    }
    let mut topk: Vec<usize> = (0..scores.len()).collect();
    topk.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(Prediction {
        k_hat: topk[0],
        topk,
        mode,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean over views of the classifier's softmax.
pub fn mv_classify_probs(views: &[&ProjectedView], bundle: &ModelBundle) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(invalid("no views to classify"));
    }
    let mut mean = vec![0.0; bundle.classes.len()];
    for v in views {
        let p = softmax(&bundle.model.run_view(&bundle.store, v)?.logits.logits);
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    let n = views.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn topk_accuracy(predictions: &[Prediction], labels: &[usize]) -> Result<TopK> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(invalid("no predictions"));
    }
    let (mut top1, mut top5) = (0usize, 0usize);
    for (p, &l) in predictions.iter().zip(labels) {
        top1 += (p.k_hat == l) as usize;
        top5 += p.topk.iter().take(5).any(|&k| k == l) as usize;
    }
    let n = labels.len() as f64;
    Ok(TopK {
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
    })
}

/// Views of one source motion, in input order.
#[derive(Clone, Debug)]
pub struct ViewGroup<'a> {
    pub label: String,
    pub views: Vec<&'a ProjectedView>,
}

impl<'a> ViewGroup<'a> {
    /// The view with theta closest to 0; `-x` wins a tie with `x`.
    pub fn designated(&self) -> &'a ProjectedView {
        self.views
            .iter()
            .min_by_key(|v| (v.theta_deg.abs(), v.theta_deg, v.view_index))
            .expect("groups are non-empty")
    }
}

/// Groups views by source sequence, ordered by sequence id. A view without a
/// sequence id forms its own group, after all identified ones.
pub fn group_by_sequence(views: &[ProjectedView]) -> Result<Vec<ViewGroup<'_>>> {
    let mut by_id: BTreeMap<usize, ViewGroup> = BTreeMap::new();
    let mut loose = Vec::new();
    for v in views {
        match v.sequence {
            Some(id) => {
                let g = by_id.entry(id).or_insert_with(|| ViewGroup {
                    label: v.label.clone(),
                    views: Vec::new(),
                });
                if g.label != v.label {
                    return Err(invalid(format!(
                        "sequence {id} mixes labels `{}` and `{}`",
                        g.label, v.label
                    )));
                }
                g.views.push(v);
            }
            None => loose.push(ViewGroup {
                label: v.label.clone(),
                views: vec![v],
            }),
        }
    }
    Ok(by_id.into_values().chain(loose).collect())
}

/// Seen and unseen class names for a zero-shot experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

impl Split {
    pub fn new(name: impl Into<String>, seen: Vec<String>, unseen: Vec<String>) -> Result<Self> {
        let s = Self {
            name: name.into(),
            seen,
            unseen,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unseen.is_empty() {
            return Err(Error::InvalidSplit("no unseen classes".into()));
        }
        let seen: BTreeSet<&String> = self.seen.iter().collect();
        let overlap: Vec<&str> = self
            .unseen
            .iter()
            .filter(|c| seen.contains(c))
            .map(String::as_str)
            .collect();
        if !overlap.is_empty() {
            return Err(Error::InvalidSplit(format!(
                "classes both seen and unseen: {}",
                overlap.join(", ")
            )));
        }
        let mut uniq = BTreeSet::new();
        if let Some(d) = self.unseen.iter().find(|c| !uniq.insert(*c)) {
            return Err(Error::InvalidSplit(format!("unseen class `{d}` listed twice")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    pub class: String,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub view_mode: ViewMode,
    pub split_name: String,
    pub top1: f64,
    pub top5: f64,
    pub n_items: usize,
    pub per_class: Vec<ClassAccuracy>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("mode\tview_mode\tsplit_name\ttop1\ttop5\tn_items\n");
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            self.mode, self.view_mode, self.split_name, self.top1, self.top5, self.n_items
        );
        for c in &self.per_class {
            let _ = writeln!(s, "{}\t{:.6}\t{}", c.class, c.accuracy, c.count);
        }
        s
    }
}

fn build_report(
    mode: EvalMode,
    view_mode: ViewMode,
    split_name: &str,
    candidates: &[String],
    predictions: &[Prediction],
    labels: &[usize],
) -> Result<EvalReport> {
    let acc = topk_accuracy(predictions, labels)?;
    let per_class = candidates
        .iter()
        .enumerate()
        .filter_map(|(k, class)| {
            let hits: Vec<bool> = predictions
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(p, _)| p.k_hat == k)
                .collect();
            (!hits.is_empty()).then(|| ClassAccuracy {
                class: class.clone(),
                accuracy: hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64,
                count: hits.len(),
            })
        })
        .collect();
    Ok(EvalReport {
        mode,
        view_mode,
        split_name: split_name.to_string(),
        top1: acc.top1,
        top5: acc.top5,
        n_items: labels.len(),
        per_class,
    })
}

/// Groups whose label is among `candidates`, with their candidate index.
fn labeled_groups<'a>(views: &'a [ProjectedView], candidates: &[String]) -> Result<(Vec<ViewGroup<'a>>, Vec<usize>)> {
    let mut groups = Vec::new();
    let mut labels = Vec::new();
    for g in group_by_sequence(views)? {
        if let Some(k) = candidates.iter().position(|c| *c == g.label) {
            labels.push(k);
            groups.push(g);
        }
    }
    if groups.is_empty() {
        return Err(invalid("no test item belongs to a candidate class"));
    }
    Ok((groups, labels))
}

/// Text-similarity evaluation over the unseen classes of `split`.
///
/// Items are view groups; SV scores the designated view, MV averages the
/// scores of every view. Texts resolve at each view's own bin. Items of
/// classes outside the candidate set are skipped.
pub fn zsl_eval(
    views: &[ProjectedView],
    bundle: &ModelBundle,
    bank: &TextBank,
    split: &Split,
    mode: EvalMode,
    view_mode: ViewMode,
) -> Result<EvalReport> {
    split.validate()?;
    if mode == EvalMode::Seen {
        return Err(invalid("zsl_eval covers zsl and zscd; use seen_eval"));
    }
    if let Some(c) = bundle.classes.iter().find(|c| split.unseen.contains(c)) {
        return Err(Error::InvalidSplit(format!("class `{c}` was trained on but is a candidate")));
    }
    let candidates = &split.unseen;
    let mut text_cache: BTreeMap<i32, Vec<Vec<f64>>> = BTreeMap::new();
    let (groups, labels) = labeled_groups(views, candidates)?;
    let mut predictions = Vec::with_capacity(groups.len());
    for g in &groups {
        let chosen: Vec<&ProjectedView> = match view_mode {
            ViewMode::Sv => vec![g.designated()],
            ViewMode::Mv => g.views.clone(),
        };
        let mut scores = Vec::with_capacity(chosen.len());
        for v in chosen {
            let m = bundle.model.run_view(&bundle.store, v)?.joint;
            if !text_cache.contains_key(&v.theta_deg) {
                let t = candidate_embeddings(bundle, bank, candidates, Some(v.theta_deg))?;
                text_cache.insert(v.theta_deg, t);
            }
            scores.push(score_against(&m, &text_cache[&v.theta_deg])?);
        }
        predictions.push(predict(&fuse_views(&scores)?, view_mode)?);
    }
    build_report(mode, view_mode, &split.name, candidates, &predictions, &labels)
}

/// Same-domain classification with the classifier head over the model's
/// own classes. MV averages per-view probabilities.
pub fn seen_eval(
    views: &[ProjectedView],
    bundle: &ModelBundle,
    split_name: &str,
    view_mode: ViewMode,
) -> Result<EvalReport> {
    let (groups, labels) = labeled_groups(views, &bundle.classes)?;
    let mut predictions = Vec::with_capacity(groups.len());
    for g in &groups {
        let chosen: Vec<&ProjectedView> = match view_mode {
            ViewMode::Sv => vec![g.designated()],
            ViewMode::Mv => g.views.clone(),
        };
        let p = mv_classify_probs(&chosen, bundle)?;
        predictions.push(rank(&p, view_mode)?);
    }
    build_report(EvalMode::Seen, view_mode, split_name, &bundle.classes, &predictions, &labels)
}
