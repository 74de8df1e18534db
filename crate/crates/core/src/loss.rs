//! Classification, transitive-consistency and pointwise-consistency losses.
//!
//! All five terms read the same [`ActivationBundle`]:
//!
//! | term    | x-side                         | y-side                         |
//! |---------|--------------------------------|--------------------------------|
//! | `ce`    | `C_x(E_x x)`                   | `C_y(E_y y)`                   |
//! | `dstc`  | `C_y(T_xy E_x x)`              | `C_x(T_yx E_y y)`              |
//! | `cdstc` | `C_x(T_yx T_xy E_x x)`         | `C_y(T_xy T_yx E_y y)`         |
//! | `pc`    | `‖E_x x − T_yx E_y y‖²`        | `‖E_y y − T_xy E_x x‖²`        |
//! | `cpc`   | `‖E_x x − T_yx T_xy E_x x‖²`   | `‖E_y y − T_xy T_yx E_y y‖²`   |
//!
//! Class terms are softmax cross-entropy over classifier logits, averaged
//! over the batch; the two sides are summed. Pointwise terms are batch means
//! of squared distances, optionally between ℓ2-normalized vectors. The
//! combined objective is `ce + α·pc + β·dstc + γ·cpc + δ·cdstc`.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{ActivationBundle, DstcModel, ModelGrads, UnimodalBundle};
use crate::nn::{ForwardCache, Mlp, MlpGrads, Mode};
use crate::tensor::{dot, Matrix, NORM_EPS};

/// Distance used by the pointwise loss terms and by retrieval scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn short_name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euc",
            Metric::Cosine => "cos",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euc" | "euclidean" => Some(Metric::Euclidean),
            "cos" | "cosine" => Some(Metric::Cosine),
            _ => None,
        }
    }
}

/// Weights of the translation-side terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// pointwise consistency
    pub alpha: f64,
    /// transitive class consistency
    pub beta: f64,
    /// cyclic pointwise consistency
    pub gamma: f64,
    /// cyclic transitive class consistency
    pub delta: f64,
    pub pointwise_metric: Metric,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64, pointwise_metric: Metric) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            gamma,
            delta,
            pointwise_metric,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            pointwise_metric: Metric::Euclidean,
        }
    }

    pub fn ones() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
            pointwise_metric: Metric::Euclidean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Coefficients of the full objective, CE weighted 1.
    pub fn coefficients(&self) -> TermCoefficients {
        TermCoefficients {
            ce: 1.0,
            pc: self.alpha,
            dstc: self.beta,
            cpc: self.gamma,
            cdstc: self.delta,
        }
    }
}

/// Multipliers for each of the five terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermCoefficients {
    pub ce: f64,
    pub pc: f64,
    pub dstc: f64,
    pub cpc: f64,
    pub cdstc: f64,
}

impl TermCoefficients {
    pub fn only(term: LossTerm) -> Self {
        let mut c = Self::default();
        match term {
            LossTerm::Ce => c.ce = 1.0,
            LossTerm::Pc => c.pc = 1.0,
            LossTerm::Dstc => c.dstc = 1.0,
            LossTerm::Cpc => c.cpc = 1.0,
            LossTerm::Cdstc => c.cdstc = 1.0,
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossTerm {
    Ce,
    Pc,
    Dstc,
    Cpc,
    Cdstc,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [LossTerm::Ce, LossTerm::Pc, LossTerm::Dstc, LossTerm::Cpc, LossTerm::Cdstc];
}

/// Unweighted component values and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub pc: f64,
    pub dstc: f64,
    pub cpc: f64,
    pub cdstc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Ce => self.ce,
            LossTerm::Pc => self.pc,
            LossTerm::Dstc => self.dstc,
            LossTerm::Cpc => self.cpc,
            LossTerm::Cdstc => self.cdstc,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.ce, self.pc, self.dstc, self.cpc, self.cdstc, self.total].iter().all(|v| v.is_finite())
    }
}

/// Mean softmax cross-entropy against one-hot targets, with its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(Error::dims("softmax_cross_entropy", logits.shape(), targets.shape()));
    }
    let mut classes = Vec::with_capacity(targets.rows());
    for (row, t) in targets.iter_rows().enumerate() {
        let ones = t.iter().filter(|&&v| v == 1.0).count();
        let zeros = t.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != t.len() {
            return Err(Error::NotOneHot { row });
        }
        classes.push(t.iter().position(|&v| v == 1.0).unwrap());
    }
    cross_entropy_indices(logits, &classes)
}

/// Same as [`softmax_cross_entropy`] with class indices as targets.
pub fn cross_entropy_indices(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::dims("cross_entropy", logits.shape(), (labels.len(), 1)));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, c);
    for (i, (row, &label)) in logits.iter_rows().zip(labels).enumerate() {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                index: i,
                label,
                classes: c,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        let g = grad.row_mut(i);
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp() / nf;
        }
        g[label] -= 1.0 / nf;
    }
    Ok((loss / nf, grad))
}

/// Batch mean of `‖a_i − b_i‖²` (after row normalization for the cosine
/// metric) and the gradients with respect to `a` and `b`.
pub fn pointwise_distance(a: &Matrix, b: &Matrix, metric: Metric) -> Result<(f64, Matrix, Matrix)> {
    if a.shape() != b.shape() {
        return Err(Error::dims("pointwise_distance", a.shape(), b.shape()));
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let nf = n as f64;
    let mut value = 0.0;
    let mut ga = Matrix::zeros(n, a.cols());
    let mut gb = Matrix::zeros(n, a.cols());
    for i in 0..n {
        let (ra, rb) = (a.row(i), b.row(i));
        match metric {
            Metric::Euclidean => {
                for (j, (&u, &v)) in ra.iter().zip(rb).enumerate() {
                    let d = u - v;
                    value += d * d;
                    ga.set(i, j, 2.0 * d / nf);
                    gb.set(i, j, -2.0 * d / nf);
                }
            }
            Metric::Cosine => {
                let norm_a = dot(ra, ra).sqrt().max(NORM_EPS);
                let norm_b = dot(rb, rb).sqrt().max(NORM_EPS);
                let ua: Vec<f64> = ra.iter().map(|v| v / norm_a).collect();
                let ub: Vec<f64> = rb.iter().map(|v| v / norm_b).collect();
                let diff: Vec<f64> = ua.iter().zip(&ub).map(|(u, v)| u - v).collect();
                value += dot(&diff, &diff);
                let g_ua: Vec<f64> = diff.iter().map(|d| 2.0 * d / nf).collect();
                let g_ub: Vec<f64> = g_ua.iter().map(|g| -g).collect();
                ga.row_mut(i).copy_from_slice(&through_normalization(&ua, norm_a, &g_ua));
                gb.row_mut(i).copy_from_slice(&through_normalization(&ub, norm_b, &g_ub));
            }
        }
    }
    Ok((value / nf, ga, gb))
}

/// Chain rule through `u = v / max(‖v‖, eps)`.
fn through_normalization(u: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    if norm <= NORM_EPS {
        // clamped branch: u = v / eps is linear in v
        return g.iter().map(|x| x / norm).collect();
    }
    let proj = dot(u, g);
    u.iter().zip(g).map(|(ui, gi)| (gi - ui * proj) / norm).collect()
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn backprop_into(
    net: &Mlp,
    cache: &ForwardCache,
    upstream: Option<Matrix>,
    param_grads: &mut MlpGrads,
    input_slot: Option<&mut Option<Matrix>>,
) -> Result<()> {
    if let Some(g) = upstream {
        let (g_in, grads) = net.backward(cache, &g)?;
        param_grads.accumulate(&grads, 1.0);
        if let Some(slot) = input_slot {
            accumulate(slot, g_in)?;
        }
    }
    Ok(())
}

fn scaled(coef: f64, g: Matrix) -> Option<Matrix> {
    (coef != 0.0).then(|| if coef == 1.0 { g } else { g.scale(coef) })
}

/// Evaluates all five components on a bundle, and when `with_grads` is set,
/// backpropagates `Σ coef·term` into every subnetwork. Terms whose
/// coefficient is zero are valued but not differentiated.
pub fn evaluate_bundle(
    model: &DstcModel,
    bundle: &ActivationBundle,
    labels: &[usize],
    coefs: &TermCoefficients,
    metric: Metric,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<ModelGrads>)> {
    let b = bundle;
    let (l_x, g_lx) = cross_entropy_indices(&b.logits_x, labels)?;
    let (l_y, g_ly) = cross_entropy_indices(&b.logits_y, labels)?;
    let (l_txy, g_ltxy) = cross_entropy_indices(&b.logits_txy, labels)?;
    let (l_tyx, g_ltyx) = cross_entropy_indices(&b.logits_tyx, labels)?;
    let (l_rtx, g_lrtx) = cross_entropy_indices(&b.logits_rtx, labels)?;
    let (l_rty, g_lrty) = cross_entropy_indices(&b.logits_rty, labels)?;
    let (pc_x, pc_x_a, pc_x_b) = pointwise_distance(&b.ex, &b.tyx, metric)?;
    let (pc_y, pc_y_a, pc_y_b) = pointwise_distance(&b.ey, &b.txy, metric)?;
    let (cpc_x, cpc_x_a, cpc_x_b) = pointwise_distance(&b.ex, &b.rtx, metric)?;
    let (cpc_y, cpc_y_a, cpc_y_b) = pointwise_distance(&b.ey, &b.rty, metric)?;

    let mut out = LossBreakdown {
        ce: l_x + l_y,
        pc: pc_x + pc_y,
        dstc: l_txy + l_tyx,
        cpc: cpc_x + cpc_y,
        cdstc: l_rtx + l_rty,
        total: 0.0,
    };
    out.total = coefs.ce * out.ce + coefs.pc * out.pc + coefs.dstc * out.dstc + coefs.cpc * out.cpc + coefs.cdstc * out.cdstc;
    if !with_grads {
        return Ok((out, None));
    }
    if b.mode != Mode::Train {
        return Err(Error::EvalModeCache);
    }

    let mut grads = ModelGrads::zeros_like(model);
    let (mut g_ex, mut g_ey, mut g_txy, mut g_tyx, mut g_rtx, mut g_rty) = (None, None, None, None, None, None);
    let add = |slot: &mut Option<Matrix>, coef: f64, g: Matrix| -> Result<()> {
        match scaled(coef, g) {
            Some(g) => accumulate(slot, g),
            None => Ok(()),
        }
    };
    add(&mut g_ex, coefs.pc, pc_x_a)?;
    add(&mut g_tyx, coefs.pc, pc_x_b)?;
    add(&mut g_ey, coefs.pc, pc_y_a)?;
    add(&mut g_txy, coefs.pc, pc_y_b)?;
    add(&mut g_ex, coefs.cpc, cpc_x_a)?;
    add(&mut g_rtx, coefs.cpc, cpc_x_b)?;
    add(&mut g_ey, coefs.cpc, cpc_y_a)?;
    add(&mut g_rty, coefs.cpc, cpc_y_b)?;

    let c = &b.caches;
    // classifiers
    backprop_into(&model.c_x, &c.logits_x, scaled(coefs.ce, g_lx), &mut grads.c_x, Some(&mut g_ex))?;
    backprop_into(&model.c_y, &c.logits_y, scaled(coefs.ce, g_ly), &mut grads.c_y, Some(&mut g_ey))?;
    backprop_into(&model.c_y, &c.logits_txy, scaled(coefs.dstc, g_ltxy), &mut grads.c_y, Some(&mut g_txy))?;
    backprop_into(&model.c_x, &c.logits_tyx, scaled(coefs.dstc, g_ltyx), &mut grads.c_x, Some(&mut g_tyx))?;
    backprop_into(&model.c_x, &c.logits_rtx, scaled(coefs.cdstc, g_lrtx), &mut grads.c_x, Some(&mut g_rtx))?;
    backprop_into(&model.c_y, &c.logits_rty, scaled(coefs.cdstc, g_lrty), &mut grads.c_y, Some(&mut g_rty))?;
    // second translation hop
    backprop_into(&model.t_yx, &c.rtx, g_rtx, &mut grads.t_yx, Some(&mut g_txy))?;
    backprop_into(&model.t_xy, &c.rty, g_rty, &mut grads.t_xy, Some(&mut g_tyx))?;
    // first translation hop
    backprop_into(&model.t_xy, &c.txy, g_txy, &mut grads.t_xy, Some(&mut g_ex))?;
    backprop_into(&model.t_yx, &c.tyx, g_tyx, &mut grads.t_yx, Some(&mut g_ey))?;
    // encoders
    backprop_into(&model.e_x, &c.ex, g_ex, &mut grads.e_x, None)?;
    backprop_into(&model.e_y, &c.ey, g_ey, &mut grads.e_y, None)?;
    Ok((out, Some(grads)))
}

/// Classification loss on the encoder/classifier paths only.
pub fn unimodal_ce(model: &DstcModel, bundle: &UnimodalBundle, labels: &[usize]) -> Result<(f64, ModelGrads)> {
    if bundle.mode != Mode::Train {
        return Err(Error::EvalModeCache);
    }
    let (l_x, g_lx) = cross_entropy_indices(&bundle.logits_x, labels)?;
    let (l_y, g_ly) = cross_entropy_indices(&bundle.logits_y, labels)?;
    let mut grads = ModelGrads::zeros_like(model);
    let (mut g_ex, mut g_ey) = (None, None);
    backprop_into(&model.c_x, &bundle.cache_logits_x, Some(g_lx), &mut grads.c_x, Some(&mut g_ex))?;
    backprop_into(&model.c_y, &bundle.cache_logits_y, Some(g_ly), &mut grads.c_y, Some(&mut g_ey))?;
    backprop_into(&model.e_x, &bundle.cache_ex, g_ex, &mut grads.e_x, None)?;
    backprop_into(&model.e_y, &bundle.cache_ey, g_ey, &mut grads.e_y, None)?;
    Ok((l_x + l_y, grads))
}

fn single_term(model: &DstcModel, batch: &Batch, term: LossTerm, metric: Metric) -> Result<(f64, ModelGrads)> {
    let bundle = model.forward_all(&batch.x, &batch.y, Mode::Train)?;
    let (bd, grads) = evaluate_bundle(model, &bundle, &batch.labels, &TermCoefficients::only(term), metric, true)?;
    Ok((bd.get(term), grads.expect("gradients requested")))
}

pub fn loss_ce(model: &DstcModel, batch: &Batch) -> Result<(f64, ModelGrads)> {
    single_term(model, batch, LossTerm::Ce, Metric::Euclidean)
}

pub fn loss_dstc(model: &DstcModel, batch: &Batch) -> Result<(f64, ModelGrads)> {
    single_term(model, batch, LossTerm::Dstc, Metric::Euclidean)
}

pub fn loss_cdstc(model: &DstcModel, batch: &Batch) -> Result<(f64, ModelGrads)> {
    single_term(model, batch, LossTerm::Cdstc, Metric::Euclidean)
}

pub fn loss_pc(model: &DstcModel, batch: &Batch, metric: Metric) -> Result<(f64, ModelGrads)> {
    single_term(model, batch, LossTerm::Pc, metric)
}

pub fn loss_cpc(model: &DstcModel, batch: &Batch, metric: Metric) -> Result<(f64, ModelGrads)> {
    single_term(model, batch, LossTerm::Cpc, metric)
}

/// The full weighted objective on a train-mode forward of `batch`.
pub fn combined_loss(model: &DstcModel, batch: &Batch, weights: &LossWeights) -> Result<(LossBreakdown, ModelGrads)> {
    combined_loss_with(model, batch, &weights.coefficients(), weights.pointwise_metric)
}

pub fn combined_loss_with(
    model: &DstcModel,
    batch: &Batch,
    coefs: &TermCoefficients,
    metric: Metric,
) -> Result<(LossBreakdown, ModelGrads)> {
    for v in [coefs.ce, coefs.pc, coefs.dstc, coefs.cpc, coefs.cdstc] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("loss coefficient {v} is not a finite non-negative number")));
        }
    }
    let bundle = model.forward_all(&batch.x, &batch.y, Mode::Train)?;
    let (bd, grads) = evaluate_bundle(model, &bundle, &batch.labels, coefs, metric, true)?;
    Ok((bd, grads.expect("gradients requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchPreset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_ce(logits: &Matrix, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (row, &l) in logits.iter_rows().zip(labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total -= (row[l].exp() / z).ln();
        }
        total / labels.len() as f64
    }

    #[test]
    fn confident_logits_have_zero_loss() {
        let logits = Matrix::from_rows(&[[40.0, 0.0, 0.0], [0.0, 0.0, 35.0]]).unwrap();
        let (l, _) = cross_entropy_indices(&logits, &[0, 2]).unwrap();
        assert!(l <= 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let targets = Matrix::from_rows(&[[0.0, 1.0, 0.0, 0.0]]).unwrap();
        let (l, _) = softmax_cross_entropy(&Matrix::zeros(1, 4), &targets).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stabilized_ce_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = Matrix::from_fn(5, 3, |_, _| rng.random_range(-3.0..3.0));
        let labels = [0, 2, 1, 1, 0];
        let (l, _) = cross_entropy_indices(&logits, &labels).unwrap();
        assert!((l - naive_ce(&logits, &labels)).abs() <= 1e-10);
    }

    #[test]
    fn non_one_hot_targets_are_rejected() {
        let t = Matrix::from_rows(&[[1.0, 0.0], [0.5, 0.5]]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&Matrix::zeros(2, 2), &t),
            Err(Error::NotOneHot { row: 1 })
        ));
    }

    #[test]
    fn orthogonal_pointwise_values() {
        let a = Matrix::row_vector(&[1.0, 0.0]);
        let b = Matrix::row_vector(&[0.0, 1.0]);
        let (v, _, _) = pointwise_distance(&a, &b, Metric::Euclidean).unwrap();
        assert_eq!(v, 2.0);
        let (v, _, _) = pointwise_distance(
            &Matrix::row_vector(&[3.0, 0.0]),
            &Matrix::row_vector(&[0.0, 4.0]),
            Metric::Cosine,
        )
        .unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::new(1.0, -1.0, 0.0, 0.0, Metric::Cosine).is_err());
        assert!(LossWeights::new(1.0, f64::NAN, 0.0, 0.0, Metric::Cosine).is_err());
        assert!(LossWeights::new(10.0, 1.0, 1000.0, 100.0, Metric::Euclidean).is_ok());
    }

    #[test]
    fn combined_total_is_weighted_sum() {
        let model = DstcModel::build(&ArchPreset::custom(4, 3, 3, 5, 4, 2), 3, 4, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = Batch::new(
            Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)),
            Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)),
            vec![0, 1, 2, 1],
        )
        .unwrap();
        let w = LossWeights::new(0.5, 2.0, 3.0, 0.25, Metric::Cosine).unwrap();
        let (bd, _) = combined_loss(&model, &batch, &w).unwrap();
        let expect = bd.ce + 0.5 * bd.pc + 2.0 * bd.dstc + 3.0 * bd.cpc + 0.25 * bd.cdstc;
        assert!((bd.total - expect).abs() <= 1e-12);
    }
}
