//! The toy differentiable student detector.
//!
//! A linear feature projector feeds the semantic classifier head, and a
//! class-agnostic linear regressor predicts box deltas parameterized as
//! (dx/w, dy/h, dlog w, dlog h[, da]). Losses follow the hybrid scheme: a
//! supervised flow with plain cross-entropy and L1, unsupervised and queue
//! flows with a foreground mean plus weighted background cross-entropy, and
//! an optional regression term fed only by filter-approved pseudo boxes.
//! Gradients are analytic; the L1 subgradient at a kink is 0.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_probs, Background, ClassifierHead};
use crate::error::{Error, Result};
use crate::geometry::BoxAny;
use crate::selection::wrap_half_turn;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoxKind {
    #[default]
    Horizontal,
    Oriented,
}

impl BoxKind {
    pub fn k(&self) -> usize {
        match self {
            BoxKind::Horizontal => 4,
            BoxKind::Oriented => 5,
        }
    }
}

fn center_form(b: &BoxAny) -> (f64, f64, f64, f64, f64) {
    match b {
        BoxAny::H(h) => {
            let (cx, cy) = h.center();
            (cx, cy, h.width(), h.height(), 0.0)
        }
        BoxAny::O(o) => (o.cx, o.cy, o.w, o.h, o.a),
    }
}

/// Encode `target` relative to `proposal` as (dx/w, dy/h, dlog w, dlog h, da).
/// The angle slot stays 0 for horizontal boxes.
pub fn encode_delta(target: &BoxAny, proposal: &BoxAny) -> Result<[f64; 5]> {
    if target.k() != proposal.k() {
        return Err(Error::Model("mixed box kinds in delta encoding".into()));
    }
    let (tcx, tcy, tw, th, ta) = center_form(target);
    let (pcx, pcy, pw, ph, pa) = center_form(proposal);
    Ok([
        (tcx - pcx) / pw,
        (tcy - pcy) / ph,
        (tw / pw).ln(),
        (th / ph).ln(),
        if target.k() == 5 { wrap_half_turn(ta - pa) } else { 0.0 },
    ])
}

/// Apply a predicted delta to a proposal box.
pub fn decode_delta(proposal: &BoxAny, delta: &[f64]) -> Result<BoxAny> {
    if delta.len() < proposal.k() {
        return Err(Error::Model(format!(
            "delta of length {} cannot refine a k={} box",
            delta.len(),
            proposal.k()
        )));
    }
    let (pcx, pcy, pw, ph, pa) = center_form(proposal);
    let cx = pcx + delta[0] * pw;
    let cy = pcy + delta[1] * ph;
    let w = pw * delta[2].exp();
    let h = ph * delta[3].exp();
    match proposal {
        BoxAny::H(_) => Ok(BoxAny::H(crate::geometry::HBox {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        })),
        BoxAny::O(_) => Ok(BoxAny::O(
            crate::geometry::OBox { cx, cy, w, h, a: pa + delta[4] }.canonical(),
        )),
    }
}

/// Trainable state: projector, class-agnostic regressor, and the classifier
/// head (which owns log-tau and any learnable background vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    /// d_embed x d_feat.
    pub projector: Array2<f64>,
    /// k x d_feat.
    pub regressor: Array2<f64>,
    pub head: ClassifierHead,
}

/// The EMA shadow has the same shape as its paired student.
pub type TeacherParams = StudentParams;

impl StudentParams {
    /// Small random projector, zero regressor (refinement starts as the
    /// identity on boxes).
    pub fn init(
        feature_dim: usize,
        kind: BoxKind,
        head: ClassifierHead,
        init_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = head.dim();
        let projector = Array2::from_shape_fn((d, feature_dim), |_| {
            init_scale * rng.sample::<f64, _>(StandardNormal)
        });
        let regressor = Array2::zeros((kind.k(), feature_dim));
        StudentParams {
            projector,
            regressor,
            head,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.projector.ncols()
    }

    pub fn box_kind(&self) -> BoxKind {
        if self.regressor.nrows() == 5 {
            BoxKind::Oriented
        } else {
            BoxKind::Horizontal
        }
    }

    fn learnable_background(&self) -> Option<&Vec<f64>> {
        match &self.head.background {
            Background::Learnable(b) => Some(b),
            _ => None,
        }
    }
}

/// Gradient blocks mirroring [`StudentParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub projector: Array2<f64>,
    pub regressor: Array2<f64>,
    pub log_tau: f64,
    /// Present only for a learnable background.
    pub background: Option<Array1<f64>>,
}

impl ParamGrad {
    pub fn zeros_like(params: &StudentParams) -> Self {
        ParamGrad {
            projector: Array2::zeros(params.projector.raw_dim()),
            regressor: Array2::zeros(params.regressor.raw_dim()),
            log_tau: 0.0,
            background: params
                .learnable_background()
                .map(|b| Array1::zeros(b.len())),
        }
    }

    /// self += c * other
    pub fn scaled_add(&mut self, c: f64, other: &ParamGrad) {
        self.projector.scaled_add(c, &other.projector);
        self.regressor.scaled_add(c, &other.regressor);
        self.log_tau += c * other.log_tau;
        if let (Some(a), Some(b)) = (self.background.as_mut(), other.background.as_ref()) {
            a.scaled_add(c, b);
        }
    }
}

/// Momentum buffers for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub projector: Array2<f64>,
    pub regressor: Array2<f64>,
    pub log_tau: f64,
    pub background: Option<Array1<f64>>,
}

impl SgdState {
    pub fn zeros_like(params: &StudentParams) -> Self {
        SgdState {
            projector: Array2::zeros(params.projector.raw_dim()),
            regressor: Array2::zeros(params.regressor.raw_dim()),
            log_tau: 0.0,
            background: params
                .learnable_background()
                .map(|b| Array1::zeros(b.len())),
        }
    }
}

/// Classic momentum SGD with L2 weight decay added to the gradient:
/// g = grad + wd * theta; m = momentum * m + g; theta -= lr * m.
pub fn sgd_step(
    params: &mut StudentParams,
    grad: &ParamGrad,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    fn update_array<D: ndarray::Dimension>(
        theta: &mut ndarray::Array<f64, D>,
        grad: &ndarray::Array<f64, D>,
        m: &mut ndarray::Array<f64, D>,
        lr: f64,
        momentum: f64,
        wd: f64,
    ) {
        ndarray::Zip::from(theta).and(grad).and(m).for_each(|t, &g, m| {
            let g = g + wd * *t;
            *m = momentum * *m + g;
            *t -= lr * *m;
        });
    }
    update_array(&mut params.projector, &grad.projector, &mut state.projector, lr, momentum, weight_decay);
    update_array(&mut params.regressor, &grad.regressor, &mut state.regressor, lr, momentum, weight_decay);
    {
        let g = grad.log_tau + weight_decay * params.head.log_tau;
        state.log_tau = momentum * state.log_tau + g;
        params.head.log_tau -= lr * state.log_tau;
    }
    if let (Background::Learnable(b), Some(gb), Some(mb)) = (
        &mut params.head.background,
        grad.background.as_ref(),
        state.background.as_mut(),
    ) {
        for i in 0..b.len() {
            let g = gb[i] + weight_decay * b[i];
            mb[i] = momentum * mb[i] + g;
            b[i] -= lr * mb[i];
        }
    }
}

/// EMA update of the teacher from the student:
/// theta' = alpha * theta' + (1 - alpha) * theta, elementwise over all
/// trainable blocks.
pub fn ema_update(teacher: &mut TeacherParams, student: &StudentParams, alpha: f64) -> Result<()> {
    if teacher.projector.raw_dim() != student.projector.raw_dim()
        || teacher.regressor.raw_dim() != student.regressor.raw_dim()
    {
        return Err(Error::Model("teacher/student shape mismatch".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Model(format!("EMA momentum must be in [0,1), got {alpha}")));
    }
    ndarray::Zip::from(&mut teacher.projector)
        .and(&student.projector)
        .for_each(|t, &s| *t = alpha * *t + (1.0 - alpha) * s);
    ndarray::Zip::from(&mut teacher.regressor)
        .and(&student.regressor)
        .for_each(|t, &s| *t = alpha * *t + (1.0 - alpha) * s);
    teacher.head.log_tau = alpha * teacher.head.log_tau + (1.0 - alpha) * student.head.log_tau;
    if let (Background::Learnable(tb), Background::Learnable(sb)) =
        (&mut teacher.head.background, &student.head.background)
    {
        for (t, s) in tb.iter_mut().zip(sb) {
            *t = alpha * *t + (1.0 - alpha) * s;
        }
    }
    Ok(())
}

/// Single-region forward result.
#[derive(Debug, Clone)]
pub struct Forward {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub delta: Vec<f64>,
    pub refined: BoxAny,
}

/// Project a feature, score it against the head, and refine the box.
/// A zero-norm projection yields all-zero scores (a uniform softmax) rather
/// than an error.
pub fn forward_one(params: &StudentParams, feature: &Array1<f64>, proposal: &BoxAny) -> Result<Forward> {
    if feature.len() != params.feature_dim() {
        return Err(Error::Model(format!(
            "feature dim {} does not match projector input {}",
            feature.len(),
            params.feature_dim()
        )));
    }
    let v = params.projector.dot(feature);
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scores = if vnorm < NORM_EPS {
        vec![0.0; params.head.n_categories() + 1]
    } else {
        params.head.similarity(v.as_slice().expect("contiguous"))?
    };
    let probs = predict_probs(&scores);
    let delta = params.regressor.dot(feature).to_vec();
    let mut full = [0.0; 5];
    full[..delta.len()].copy_from_slice(&delta);
    let refined = decode_delta(proposal, &full)?;
    Ok(Forward {
        scores,
        probs,
        delta,
        refined,
    })
}

/// Which loss formula a batch feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    /// Plain cross-entropy over all proposals plus L1 over foreground.
    Supervised,
    /// Foreground mean cross-entropy plus weighted background terms, with an
    /// L1 term over filter-approved pairs.
    Unsupervised,
    /// Queue flow: same structure as unsupervised; the regression term is
    /// optional and off by default.
    Queue,
}

/// Assignment of one proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Foreground {
        category: usize,
        /// Encoded regression target; `None` when the assigned pseudo box was
        /// rejected by the box filter.
        reg_target: Option<[f64; 5]>,
    },
    Background {
        /// Normalized contribution of this sample to the background loss.
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSample {
    pub feature: Array1<f64>,
    pub bbox: BoxAny,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub proposals: Vec<ProposalSample>,
    pub targets: Vec<Target>,
    pub flow: FlowKind,
    /// Include the regression term (unsupervised default true, queue default
    /// false).
    pub include_regression: bool,
}

impl LossBatch {
    pub fn n_foreground(&self) -> usize {
        self.targets
            .iter()
            .filter(|t| matches!(t, Target::Foreground { .. }))
            .count()
    }

    pub fn n_background(&self) -> usize {
        self.targets.len() - self.n_foreground()
    }

    fn n_reg(&self) -> usize {
        self.targets
            .iter()
            .filter(|t| matches!(t, Target::Foreground { reg_target: Some(_), .. }))
            .count()
    }

    fn validate(&self, params: &StudentParams) -> Result<()> {
        if self.proposals.len() != self.targets.len() {
            return Err(Error::Model("proposal/target length mismatch".into()));
        }
        if self.proposals.is_empty() {
            return Err(Error::Model("empty loss batch".into()));
        }
        let n_classes = params.head.n_categories();
        for t in &self.targets {
            if let Target::Foreground { category, .. } = t {
                if *category >= n_classes {
                    return Err(Error::Model(format!("foreground category {category} out of range")));
                }
            }
        }
        Ok(())
    }
}

fn target_index(t: &Target, background_index: usize) -> usize {
    match t {
        Target::Foreground { category, .. } => *category,
        Target::Background { .. } => background_index,
    }
}

/// Mean L1 in delta space between predicted and target deltas; the per-box
/// loss averages over the k coordinates.
fn l1_term(params: &StudentParams, batch: &LossBatch) -> f64 {
    let k = params.regressor.nrows();
    let n_reg = batch.n_reg();
    if n_reg == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (p, t) in batch.proposals.iter().zip(&batch.targets) {
        if let Target::Foreground { reg_target: Some(target), .. } = t {
            let delta = params.regressor.dot(&p.feature);
            let mut box_loss = 0.0;
            for c in 0..k {
                box_loss += (delta[c] - target[c]).abs();
            }
            total += box_loss / k as f64;
        }
    }
    total / n_reg as f64
}

fn ce_of(params: &StudentParams, p: &ProposalSample, t: &Target) -> Result<f64> {
    let fwd = forward_one(params, &p.feature, &p.bbox)?;
    let idx = target_index(t, params.head.background_index());
    Ok(-fwd.probs[idx].ln())
}

/// Supervised loss: cross-entropy averaged over all proposals plus L1
/// averaged over foreground proposals.
pub fn loss_supervised(params: &StudentParams, batch: &LossBatch) -> Result<f64> {
    batch.validate(params)?;
    let n = batch.proposals.len() as f64;
    let mut ce = 0.0;
    for (p, t) in batch.proposals.iter().zip(&batch.targets) {
        ce += ce_of(params, p, t)?;
    }
    Ok(ce / n + l1_term(params, batch))
}

/// Unsupervised classification loss: foreground mean cross-entropy plus
/// weighted background cross-entropy (weights normalized over the batch's
/// background set).
pub fn loss_unsup_cls(params: &StudentParams, batch: &LossBatch) -> Result<f64> {
    batch.validate(params)?;
    let n_fg = batch.n_foreground();
    let mut total = 0.0;
    for (p, t) in batch.proposals.iter().zip(&batch.targets) {
        let ce = ce_of(params, p, t)?;
        match t {
            Target::Foreground { .. } => total += ce / n_fg as f64,
            Target::Background { weight } => total += weight * ce,
        }
    }
    Ok(total)
}

/// Unsupervised regression loss: mean L1 over foreground pairs whose pseudo
/// box survived the filter; 0 for an empty set.
pub fn loss_unsup_reg(params: &StudentParams, batch: &LossBatch) -> Result<f64> {
    batch.validate(params)?;
    Ok(l1_term(params, batch))
}

/// Queue-flow classification loss; same structure and weighting as the
/// unsupervised classification loss.
pub fn loss_queue_cls(params: &StudentParams, batch: &LossBatch) -> Result<f64> {
    loss_unsup_cls(params, batch)
}

/// Weighted sum of the three flow losses.
pub fn total_loss(ls: f64, lu: f64, ld: f64, alpha: f64, beta: f64, gamma: f64) -> f64 {
    alpha * ls + beta * lu + gamma * ld
}

/// The loss a batch contributes under its flow kind.
pub fn flow_loss(params: &StudentParams, batch: &LossBatch) -> Result<f64> {
    match batch.flow {
        FlowKind::Supervised => loss_supervised(params, batch),
        FlowKind::Unsupervised | FlowKind::Queue => {
            let mut loss = loss_unsup_cls(params, batch)?;
            if batch.include_regression {
                loss += loss_unsup_reg(params, batch)?;
            }
            Ok(loss)
        }
    }
}

/// Analytic gradient of [`flow_loss`] with respect to every parameter block.
/// Returns the loss value alongside the gradient.
pub fn grad_batch(params: &StudentParams, batch: &LossBatch) -> Result<(f64, ParamGrad)> {
    batch.validate(params)?;
    let mut grad = ParamGrad::zeros_like(params);
    let n = batch.proposals.len() as f64;
    let n_fg = batch.n_foreground();
    let n_reg = batch.n_reg();
    let k = params.regressor.nrows();
    let bg_index = params.head.background_index();
    let tau = params.head.tau();
    let include_reg = match batch.flow {
        FlowKind::Supervised => true,
        _ => batch.include_regression,
    };

    let mut loss = 0.0;
    for (p, t) in batch.proposals.iter().zip(&batch.targets) {
        let fwd = forward_one(params, &p.feature, &p.bbox)?;
        let idx = target_index(t, bg_index);
        let ce = -fwd.probs[idx].ln();
        let ce_weight = match (batch.flow, t) {
            (FlowKind::Supervised, _) => 1.0 / n,
            (_, Target::Foreground { .. }) => 1.0 / n_fg as f64,
            (_, Target::Background { weight }) => *weight,
        };
        loss += ce_weight * ce;

        // Cross-entropy through the cosine scores.
        let v = params.projector.dot(&p.feature);
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm >= NORM_EPS {
            let vhat = &v / vnorm;
            let mut dl_dv: Array1<f64> = Array1::zeros(v.len());
            for (j, (prob, score)) in fwd.probs.iter().zip(&fwd.scores).enumerate() {
                let resid = prob - if j == idx { 1.0 } else { 0.0 };
                if resid == 0.0 {
                    continue;
                }
                // d score_j / d log_tau = -score_j for every cosine-backed
                // slot, and exactly 0 for the fixed zero background.
                grad.log_tau += ce_weight * resid * (-score);
                let cos = score * tau;
                match embedding_direction(params, j, bg_index) {
                    EmbeddingDir::Unit(t_j) => {
                        for d in 0..v.len() {
                            dl_dv[d] += resid * (t_j[d] - cos * vhat[d]) / (tau * vnorm);
                        }
                    }
                    EmbeddingDir::LearnableBg(b) => {
                        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if bnorm >= NORM_EPS {
                            for d in 0..v.len() {
                                dl_dv[d] += resid * (b[d] / bnorm - cos * vhat[d]) / (tau * vnorm);
                            }
                            if let Some(gb) = grad.background.as_mut() {
                                for d in 0..b.len() {
                                    gb[d] += ce_weight
                                        * resid
                                        * (vhat[d] - cos * b[d] / bnorm)
                                        / (tau * bnorm);
                                }
                            }
                        }
                    }
                    EmbeddingDir::Zero => {}
                }
            }
            // dL/dW += ce_weight * outer(dL/dv, x)
            for d in 0..dl_dv.len() {
                let g = ce_weight * dl_dv[d];
                if g != 0.0 {
                    for (w, &x) in grad
                        .projector
                        .row_mut(d)
                        .iter_mut()
                        .zip(p.feature.iter())
                    {
                        *w += g * x;
                    }
                }
            }
        }

        // L1 regression through the deltas.
        if include_reg && n_reg > 0 {
            if let Target::Foreground { reg_target: Some(target), .. } = t {
                let mut box_loss = 0.0;
                for c in 0..k {
                    let diff = fwd.delta[c] - target[c];
                    box_loss += diff.abs();
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    if sign != 0.0 {
                        let g = sign / (k as f64 * n_reg as f64);
                        for (w, &x) in grad.regressor.row_mut(c).iter_mut().zip(p.feature.iter()) {
                            *w += g * x;
                        }
                    }
                }
                loss += box_loss / (k as f64 * n_reg as f64);
            }
        }
    }
    Ok((loss, grad))
}

enum EmbeddingDir<'a> {
    Unit(Vec<f64>),
    LearnableBg(&'a Vec<f64>),
    Zero,
}

fn embedding_direction<'a>(
    params: &'a StudentParams,
    slot: usize,
    bg_index: usize,
) -> EmbeddingDir<'a> {
    if slot < bg_index {
        EmbeddingDir::Unit(params.head.embeddings[slot].vector.clone())
    } else {
        match &params.head.background {
            Background::Zero => EmbeddingDir::Zero,
            Background::NormalizedMean => EmbeddingDir::Unit(
                params
                    .head
                    .normalized_mean_vector()
                    .expect("head has categories"),
            ),
            Background::Learnable(b) => EmbeddingDir::LearnableBg(b),
        }
    }
}

/// Inputs for one unlabeled image under consistency training: the teacher
/// sees weakly augmented features, the student strongly augmented ones.
#[derive(Debug, Clone)]
pub struct ConsistencyInput {
    pub boxes: Vec<BoxAny>,
    pub rpn_scores: Vec<f64>,
    pub weak_features: Vec<Array1<f64>>,
    pub strong_features: Vec<Array1<f64>>,
}

/// A pseudo ground-truth box proposed by the teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPseudoBox {
    pub bbox: BoxAny,
    pub category_id: usize,
    pub prob: f64,
    /// Index of the proposal it was refined from.
    pub proposal_index: usize,
}

/// Run the teacher on the weak view and produce pseudo ground truth:
/// proposals with an objectness score at or above `rpn_thresh`, refined by the
/// teacher regressor, keeping those whose argmax is a category.
pub fn teacher_pseudo_boxes(
    teacher: &TeacherParams,
    input: &ConsistencyInput,
    rpn_thresh: f64,
) -> Result<Vec<TeacherPseudoBox>> {
    let mut out = Vec::new();
    for (i, bbox) in input.boxes.iter().enumerate() {
        if input.rpn_scores[i] < rpn_thresh {
            continue;
        }
        let fwd = forward_one(teacher, &input.weak_features[i], bbox)?;
        let mut argmax = 0;
        for j in 1..fwd.probs.len() {
            if fwd.probs[j] > fwd.probs[argmax] {
                argmax = j;
            }
        }
        if argmax == teacher.head.background_index() {
            continue;
        }
        out.push(TeacherPseudoBox {
            bbox: fwd.refined,
            category_id: argmax,
            prob: fwd.probs[argmax],
            proposal_index: i,
        });
    }
    Ok(out)
}

/// Assemble the student-side unsupervised batch: assign each proposal to the
/// best-overlapping pseudo box (IoU >= `iou_thresh`), attach regression
/// targets only for filter-approved pseudo boxes (`reg_keep`, aligned with
/// `pseudo`), and weight background samples by the teacher's normalized
/// background probability.
pub fn build_consistency_batch(
    teacher: &TeacherParams,
    input: &ConsistencyInput,
    pseudo: &[TeacherPseudoBox],
    reg_keep: Option<&[bool]>,
    iou_thresh: f64,
) -> Result<LossBatch> {
    let bg_index = teacher.head.background_index();
    let mut targets = Vec::with_capacity(input.boxes.len());
    let mut bg_scores = Vec::new();
    for (i, bbox) in input.boxes.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (pi, pb) in pseudo.iter().enumerate() {
            let iou = bbox.iou(&pb.bbox);
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((pi, iou));
            }
        }
        match best {
            Some((pi, _)) => {
                let keep = reg_keep.map_or(true, |k| k[pi]);
                let reg_target = if keep {
                    Some(encode_delta(&pseudo[pi].bbox, bbox)?)
                } else {
                    None
                };
                targets.push(Target::Foreground {
                    category: pseudo[pi].category_id,
                    reg_target,
                });
            }
            None => {
                let fwd = forward_one(teacher, &input.weak_features[i], bbox)?;
                bg_scores.push(fwd.probs[bg_index]);
                targets.push(Target::Background { weight: 0.0 });
            }
        }
    }
    // Normalize background weights over the batch's background set.
    let total: f64 = bg_scores.iter().sum();
    let n_bg = bg_scores.len();
    let mut bg_iter = bg_scores.into_iter();
    for t in targets.iter_mut() {
        if let Target::Background { weight } = t {
            let s = bg_iter.next().expect("background count");
            *weight = if total > 0.0 { s / total } else { 1.0 / n_bg as f64 };
        }
    }
    let proposals = input
        .boxes
        .iter()
        .zip(&input.strong_features)
        .map(|(b, f)| ProposalSample {
            feature: f.clone(),
            bbox: *b,
        })
        .collect();
    Ok(LossBatch {
        proposals,
        targets,
        flow: FlowKind::Unsupervised,
        include_regression: true,
    })
}

/// One consistency step: teacher pseudo-labels on the weak view supervise the
/// student on the strong view. Returns the loss, its gradient, and the batch.
pub fn consistency_step(
    student: &StudentParams,
    teacher: &TeacherParams,
    input: &ConsistencyInput,
    rpn_thresh: f64,
    reg_keep: Option<&[bool]>,
) -> Result<(f64, ParamGrad, LossBatch)> {
    let pseudo = teacher_pseudo_boxes(teacher, input, rpn_thresh)?;
    let batch = build_consistency_batch(teacher, input, &pseudo, reg_keep, 0.5)?;
    let (loss, grad) = grad_batch(student, &batch)?;
    Ok((loss, grad, batch))
}
