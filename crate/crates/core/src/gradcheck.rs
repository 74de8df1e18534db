//! Central finite-difference checks of every loss against backprop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::loss::{
    combined_loss, evaluate_bundle, loss_cdstc, loss_ce, loss_cpc, loss_dstc, loss_pc, LossBreakdown, LossTerm, LossWeights,
    Metric, TermCoefficients,
};
use crate::model::{ArchPreset, DstcModel, ModelGrads, Subnet};
use crate::nn::Mode;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Ce,
    Dstc,
    Cdstc,
    Pc(Metric),
    Cpc(Metric),
    /// All terms with unit weights.
    Combined(Metric),
}

impl Objective {
    pub const ALL: [Objective; 8] = [
        Objective::Ce,
        Objective::Dstc,
        Objective::Cdstc,
        Objective::Pc(Metric::Euclidean),
        Objective::Pc(Metric::Cosine),
        Objective::Cpc(Metric::Euclidean),
        Objective::Cpc(Metric::Cosine),
        Objective::Combined(Metric::Euclidean),
    ];

    /// `ALL` plus the cosine combined objective.
    pub fn suite() -> Vec<Objective> {
        let mut v = Self::ALL.to_vec();
        v.push(Objective::Combined(Metric::Cosine));
        v
    }

    pub fn name(&self) -> String {
        match self {
            Objective::Ce => "ce".into(),
            Objective::Dstc => "dstc".into(),
            Objective::Cdstc => "cdstc".into(),
            Objective::Pc(m) => format!("pc_{}", m.short_name()),
            Objective::Cpc(m) => format!("cpc_{}", m.short_name()),
            Objective::Combined(m) => format!("combined_{}", m.short_name()),
        }
    }

    pub fn metric(&self) -> Metric {
        match *self {
            Objective::Pc(m) | Objective::Cpc(m) | Objective::Combined(m) => m,
            _ => Metric::Euclidean,
        }
    }

    pub fn coefficients(&self) -> TermCoefficients {
        match self {
            Objective::Ce => TermCoefficients::only(LossTerm::Ce),
            Objective::Dstc => TermCoefficients::only(LossTerm::Dstc),
            Objective::Cdstc => TermCoefficients::only(LossTerm::Cdstc),
            Objective::Pc(_) => TermCoefficients::only(LossTerm::Pc),
            Objective::Cpc(_) => TermCoefficients::only(LossTerm::Cpc),
            Objective::Combined(_) => LossWeights::ones().coefficients(),
        }
    }

    /// Value of the objective from an unweighted breakdown.
    pub fn value(&self, b: &LossBreakdown) -> f64 {
        let c = self.coefficients();
        c.ce * b.ce + c.pc * b.pc + c.dstc * b.dstc + c.cpc * b.cpc + c.cdstc * b.cdstc
    }

    /// Backprop gradient through the public loss entry point.
    pub fn analytic(&self, model: &DstcModel, batch: &Batch) -> Result<ModelGrads> {
        Ok(match *self {
            Objective::Ce => loss_ce(model, batch)?.1,
            Objective::Dstc => loss_dstc(model, batch)?.1,
            Objective::Cdstc => loss_cdstc(model, batch)?.1,
            Objective::Pc(m) => loss_pc(model, batch, m)?.1,
            Objective::Cpc(m) => loss_cpc(model, batch, m)?.1,
            Objective::Combined(m) => {
                let w = LossWeights {
                    pointwise_metric: m,
                    ..LossWeights::ones()
                };
                combined_loss(model, batch, &w)?.1
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Largest feature, hidden or class dimension of a random model.
    pub max_dim: usize,
    pub batch: usize,
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Gradient magnitude below which the error is measured absolutely.
    pub floor: f64,
    pub seed: u64,
    /// Test hook: corrupt one analytic gradient entry so the check must fail.
    #[doc(hidden)]
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            max_dim: 16,
            batch: 4,
            trials: 20,
            step: 1e-6,
            tolerance: 1e-5,
            floor: 1e-3,
            seed: 0,
            corrupt: false,
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResult {
    pub objective: Objective,
    pub trials: usize,
    pub params_checked: usize,
    pub max_rel_err: f64,
    /// Location of the largest error: subnet, tensor index, entry index.
    pub worst: Option<(Subnet, usize, usize)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub results: Vec<ObjectiveResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "gradient check: {} trials, dims <= {}, batch {}, h = {:e}, tolerance {:e}\n",
            c.trials, c.max_dim, c.batch, c.step, c.tolerance
        );
        for r in &self.results {
            let worst = r
                .worst
                .map(|(s, t, i)| format!(" at {}[{t}][{i}]", s.name()))
                .unwrap_or_default();
            out.push_str(&format!(
                "{:<14} {} max rel err {:.3e} over {} params{worst}\n",
                r.objective.name(),
                if r.passed { "PASS" } else { "FAIL" },
                r.max_rel_err,
                r.params_checked
            ));
        }
        out
    }
}

/// A random model and batch with every dimension in `2..=max_dim`.
pub fn random_problem(max_dim: usize, batch: usize, seed: u64) -> Result<(DstcModel, Batch)> {
    if max_dim < 2 || batch < 2 {
        return Err(Error::InvalidArgument("gradient check needs max_dim >= 2 and batch >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = |rng: &mut ChaCha8Rng| rng.random_range(2..=max_dim);
    let (x_dim, y_dim, classes) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let (hidden, embed, bottleneck) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let preset = ArchPreset::custom(x_dim, y_dim, classes, hidden, embed, bottleneck);
    let mut model = DstcModel::build(&preset, classes, x_dim, y_dim, rng.random())?;
    // move BatchNorm affine parameters off their identity initialization
    for s in Subnet::ALL {
        for p in model.net_mut(s).param_slices_mut() {
            for v in p.iter_mut() {
                *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let normal = |r, c, rng: &mut ChaCha8Rng| Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let x = normal(batch, x_dim, &mut rng);
    let y = normal(batch, y_dim, &mut rng);
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    Ok((model, Batch::new(x, y, labels)?))
}

fn breakdowns(model: &DstcModel, batch: &Batch) -> Result<[LossBreakdown; 2]> {
    let bundle = model.forward_all(&batch.x, &batch.y, Mode::Train)?;
    let coefs = TermCoefficients::default();
    let euc = evaluate_bundle(model, &bundle, &batch.labels, &coefs, Metric::Euclidean, false)?.0;
    let cos = evaluate_bundle(model, &bundle, &batch.labels, &coefs, Metric::Cosine, false)?.0;
    Ok([euc, cos])
}

fn pick(b: &[LossBreakdown; 2], metric: Metric) -> &LossBreakdown {
    match metric {
        Metric::Euclidean => &b[0],
        Metric::Cosine => &b[1],
    }
}

/// Central-difference gradients of each objective, one perturbation pass
/// shared by all of them.
pub fn numeric_gradients(model: &DstcModel, batch: &Batch, objectives: &[Objective], step: f64) -> Result<Vec<ModelGrads>> {
    let mut probe = model.clone();
    let mut out: Vec<ModelGrads> = objectives.iter().map(|_| ModelGrads::zeros_like(model)).collect();
    for s in Subnet::ALL {
        let shapes: Vec<usize> = model.net(s).param_slices().iter().map(|p| p.len()).collect();
        for (t, &len) in shapes.iter().enumerate() {
            for i in 0..len {
                let orig = probe.net(s).param_slices()[t][i];
                probe.net_mut(s).param_slices_mut()[t][i] = orig + step;
                let plus = breakdowns(&probe, batch)?;
                probe.net_mut(s).param_slices_mut()[t][i] = orig - step;
                let minus = breakdowns(&probe, batch)?;
                probe.net_mut(s).param_slices_mut()[t][i] = orig;
                for (obj, g) in objectives.iter().zip(out.iter_mut()) {
                    let m = obj.metric();
                    let d = (obj.value(pick(&plus, m)) - obj.value(pick(&minus, m))) / (2.0 * step);
                    g.get_mut(s).slices_mut()[t][i] = d;
                }
            }
        }
    }
    Ok(out)
}

/// Largest relative error between two gradient sets and where it occurs.
pub fn compare(analytic: &ModelGrads, numeric: &ModelGrads, floor: f64) -> (f64, Option<(Subnet, usize, usize)>, usize) {
    let mut worst = (0.0, None);
    let mut count = 0;
    for s in Subnet::ALL {
        for (t, (a, n)) in analytic.get(s).slices().iter().zip(numeric.get(s).slices()).enumerate() {
            for (i, (&a, &n)) in a.iter().zip(n.iter()).enumerate() {
                count += 1;
                let e = relative_error(a, n, floor);
                if !(e <= worst.0) {
                    worst = (e, Some((s, t, i)));
                }
            }
        }
    }
    (worst.0, worst.1, count)
}

/// Runs the check for `objectives` over `cfg.trials` random problems.
pub fn run(cfg: &GradCheckConfig, objectives: &[Objective]) -> Result<GradCheckReport> {
    if cfg.trials == 0 || !(cfg.step > 0.0) {
        return Err(Error::InvalidArgument("gradient check needs trials > 0 and a positive step".into()));
    }
    let mut results: Vec<ObjectiveResult> = objectives
        .iter()
        .map(|&objective| ObjectiveResult {
            objective,
            trials: cfg.trials,
            params_checked: 0,
            max_rel_err: 0.0,
            worst: None,
            passed: true,
        })
        .collect();
    for trial in 0..cfg.trials {
        let (model, batch) = random_problem(cfg.max_dim, cfg.batch, cfg.seed.wrapping_add(trial as u64))?;
        let numeric = numeric_gradients(&model, &batch, objectives, cfg.step)?;
        for (k, (obj, num)) in objectives.iter().zip(&numeric).enumerate() {
            let mut analytic = obj.analytic(&model, &batch)?;
            if cfg.corrupt && k == objectives.len() - 1 && trial == 0 {
                analytic.t_xy.slices_mut()[0][0] += 1.0;
            }
            let (err, at, count) = compare(&analytic, num, cfg.floor);
            let r = &mut results[k];
            r.params_checked += count;
            if !(err <= r.max_rel_err) {
                r.max_rel_err = err;
                r.worst = at;
            }
        }
    }
    for r in &mut results {
        r.passed = r.max_rel_err <= cfg.tolerance;
    }
    Ok(GradCheckReport { config: *cfg, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor_for_tiny_gradients() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-3), 1e-6);
        assert!((relative_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn objective_values_select_terms() {
        let b = LossBreakdown {
            ce: 1.0,
            pc: 2.0,
            dstc: 3.0,
            cpc: 4.0,
            cdstc: 5.0,
            total: 0.0,
        };
        assert_eq!(Objective::Cpc(Metric::Cosine).value(&b), 4.0);
        assert_eq!(Objective::Combined(Metric::Euclidean).value(&b), 15.0);
    }

    #[test]
    fn small_suite_passes_and_corruption_fails() {
        let cfg = GradCheckConfig {
            max_dim: 5,
            trials: 2,
            ..GradCheckConfig::default()
        };
        let report = run(&cfg, &Objective::suite()).unwrap();
        assert!(report.passed(), "{}", report.summary());
        let bad = run(&GradCheckConfig { corrupt: true, ..cfg }, &Objective::suite()).unwrap();
        assert!(!bad.passed());
        assert!(bad.summary().contains("FAIL"));
    }
}
