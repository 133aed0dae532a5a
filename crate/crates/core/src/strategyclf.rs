//! Baseline strategy classifiers: L2-regularized logistic regression,
//! Bernoulli naive Bayes, majority/random baselines, stratified k-fold
//! cross-validation and weak labeling of a whole corpus.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actionstate::{derive_action_state, Provenance, Strategy, StrategyLabels, TieRule};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::textfeat::{FeatureSet, FeatureSpace, LexiconSpec, SparseVector};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_K: usize = 10;
pub const LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
/// Probability at or above which a label is predicted positive.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits indices into `k` folds that preserve the class ratio: each
/// class is shuffled with `seed` and dealt round-robin, continuing from the
/// fold where the previous class stopped.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::config("k", "k must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
                k,
            });
        }
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// A fitted binary scorer.
pub trait Scorer {
    /// Probability of the positive class.
    fn predict_proba(&self, x: &SparseVector) -> f64;

    fn predict(&self, x: &SparseVector) -> u8 {
        u8::from(self.predict_proba(x) >= THRESHOLD)
    }

    /// Rarer class in the training data (ties → positive class).
    fn minority_class(&self) -> u8;
}

/// A learning algorithm for binary labels with per-example weights.
/// Further classical learners plug in here.
pub trait Learner {
    type Model: Scorer;

    fn name(&self) -> &'static str;

    fn fit(&self, xs: &[SparseVector], ys: &[u8], weights: &[f64]) -> Result<Self::Model>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Weights applied to classes 0 and 1 during training.
    pub class_weights: (f64, f64),
    pub regularization: f64,
    pub minority: u8,
}

impl LinearModel {
    pub fn decision(&self, x: &SparseVector) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }
}

impl Scorer for LinearModel {
    fn predict_proba(&self, x: &SparseVector) -> f64 {
        sigmoid(self.decision(x))
    }

    fn minority_class(&self) -> u8 {
        self.minority
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn class_counts(ys: &[u8]) -> (usize, usize) {
    let pos = ys.iter().filter(|&&y| y == 1).count();
    (ys.len() - pos, pos)
}

fn minority_of(ys: &[u8]) -> u8 {
    let (neg, pos) = class_counts(ys);
    u8::from(pos <= neg)
}

/// Class weights `n_max / n_c`: the majority class keeps weight 1.
pub fn balanced_class_weights(ys: &[u8]) -> (f64, f64) {
    let (neg, pos) = class_counts(ys);
    let max = neg.max(pos) as f64;
    (max / neg.max(1) as f64, max / pos.max(1) as f64)
}

/// Logistic regression fit by L-BFGS on
/// `Σ wᵢ·logloss(yᵢ, wᵀxᵢ + b) + (λ/2)‖w‖²` (bias unpenalized).
#[derive(Debug, Clone, Copy)]
pub struct LogisticRegression {
    pub lambda: f64,
    pub class_weighted: bool,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        LogisticRegression {
            lambda: DEFAULT_LAMBDA,
            class_weighted: false,
            grad_tol: 1e-6,
            max_iters: 5000,
        }
    }
}

impl Learner for LogisticRegression {
    type Model = LinearModel;

    fn name(&self) -> &'static str {
        "logistic_regression"
    }

    fn fit(&self, xs: &[SparseVector], ys: &[u8], weights: &[f64]) -> Result<LinearModel> {
        let (neg, pos) = class_counts(ys);
        if neg == 0 || pos == 0 {
            return Err(Error::SingleClass);
        }
        let dim = xs[0].dim();
        let cw = if self.class_weighted {
            balanced_class_weights(ys)
        } else {
            (1.0, 1.0)
        };
        let sw: Vec<f64> = ys
            .iter()
            .zip(weights)
            .map(|(&y, &w)| w * if y == 1 { cw.1 } else { cw.0 })
            .collect();
        let lambda = self.lambda;
        // parameters: [w_0..w_{dim-1}, b]
        let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (w, b) = theta.split_at(dim);
            let mut f = 0.0;
            for ((x, &y), &s) in xs.iter().zip(ys).zip(&sw) {
                let z = x.dot_dense(w) + b[0];
                f += s * (softplus(z) - f64::from(y) * z);
                let r = s * (sigmoid(z) - f64::from(y));
                for &(i, v) in x.entries() {
                    grad[i] += r * v;
                }
                grad[dim] += r;
            }
            for i in 0..dim {
                f += 0.5 * lambda * w[i] * w[i];
                grad[i] += lambda * w[i];
            }
            f
        };
        let mut theta = vec![0.0; dim + 1];
        // start the bias at the weighted log-odds
        let wpos: f64 = sw.iter().zip(ys).filter(|(_, &y)| y == 1).map(|(s, _)| s).sum();
        let wneg: f64 = sw.iter().zip(ys).filter(|(_, &y)| y == 0).map(|(s, _)| s).sum();
        theta[dim] = (wpos / wneg).ln();
        let converged = lbfgs(objective, &mut theta, self.grad_tol, self.max_iters);
        if !converged {
            log::warn!(
                "logistic regression stopped at {} iterations before converging (gradient tolerance {})",
                self.max_iters,
                self.grad_tol
            );
        }
        let bias = theta.pop().unwrap();
        Ok(LinearModel {
            weights: theta,
            bias,
            class_weights: cw,
            regularization: lambda,
            minority: minority_of(ys),
        })
    }
}

pub fn train_logistic(
    xs: &[SparseVector],
    ys: &[u8],
    lambda: f64,
    class_weighted: bool,
) -> Result<LinearModel> {
    LogisticRegression {
        lambda,
        class_weighted,
        ..Default::default()
    }
    .fit(xs, ys, &vec![1.0; ys.len()])
}

/// Relative objective decrease below which L-BFGS stops.
const FTOL: f64 = 1e-12;

/// Limited-memory BFGS with backtracking Armijo line search. Returns whether
/// the gradient norm fell below `tol` or the relative decrease of the
/// objective fell below [`FTOL`].
fn lbfgs<F>(mut f: F, x: &mut [f64], tol: f64, max_iters: usize) -> bool
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 10;
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for _ in 0..max_iters {
        if norm(&g) < tol {
            return true;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        if m > 0 {
            let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = norm(&g);
            d.iter_mut().for_each(|v| *v /= gn.max(1.0));
        }
        for i in 0..m {
            let beta = rho[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // not a descent direction; reset to steepest descent
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                let decrease = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
                fx = f_new;
                if decrease <= FTOL {
                    return true;
                }
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if s_hist.len() == MEMORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho.remove(0);
                    }
                    rho.push(1.0 / sy);
                    s_hist.push(s);
                    y_hist.push(y);
                }
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // line search exhausted: we are at numerical precision
            return norm(&g) < tol;
        }
    }
    norm(&g) < tol
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bernoulli naive Bayes over binarized features (`x > 0`), Laplace smoothed.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliNb {
    pub alpha: f64,
}

impl Default for BernoulliNb {
    fn default() -> Self {
        BernoulliNb { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    log_prior: [f64; 2],
    /// ln P(x_j = 1 | c) and ln P(x_j = 0 | c)
    log_on: [Vec<f64>; 2],
    log_off: [Vec<f64>; 2],
    /// Σ_j ln P(x_j = 0 | c), so scoring touches only active features.
    off_total: [f64; 2],
    minority: u8,
}

impl Scorer for NbModel {
    fn predict_proba(&self, x: &SparseVector) -> f64 {
        let mut s = [0.0; 2];
        for (c, sc) in s.iter_mut().enumerate() {
            *sc = self.log_prior[c] + self.off_total[c];
            for &(j, v) in x.entries() {
                if v > 0.0 {
                    *sc += self.log_on[c][j] - self.log_off[c][j];
                }
            }
        }
        sigmoid(s[1] - s[0])
    }

    fn minority_class(&self) -> u8 {
        self.minority
    }
}

impl Learner for BernoulliNb {
    type Model = NbModel;

    fn name(&self) -> &'static str {
        "bernoulli_nb"
    }

    fn fit(&self, xs: &[SparseVector], ys: &[u8], weights: &[f64]) -> Result<NbModel> {
        let (neg, pos) = class_counts(ys);
        if neg == 0 || pos == 0 {
            return Err(Error::SingleClass);
        }
        let dim = xs[0].dim();
        let mut mass = [0.0; 2];
        let mut on = [vec![0.0; dim], vec![0.0; dim]];
        for ((x, &y), &w) in xs.iter().zip(ys).zip(weights) {
            let c = usize::from(y);
            mass[c] += w;
            for &(j, v) in x.entries() {
                if v > 0.0 {
                    on[c][j] += w;
                }
            }
        }
        let total = mass[0] + mass[1];
        let mut log_on = [vec![0.0; dim], vec![0.0; dim]];
        let mut log_off = [vec![0.0; dim], vec![0.0; dim]];
        let mut off_total = [0.0; 2];
        for c in 0..2 {
            for j in 0..dim {
                let p = (on[c][j] + self.alpha) / (mass[c] + 2.0 * self.alpha);
                log_on[c][j] = p.ln();
                log_off[c][j] = (1.0 - p).ln();
                off_total[c] += log_off[c][j];
            }
        }
        Ok(NbModel {
            log_prior: [(mass[0] / total).ln(), (mass[1] / total).ln()],
            log_on,
            log_off,
            off_total,
            minority: minority_of(ys),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub minority_f1: f64,
    pub recall: f64,
    pub precision: f64,
}

impl MetricsRow {
    pub fn mean(rows: &[MetricsRow]) -> MetricsRow {
        let n = rows.len().max(1) as f64;
        let sum = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        MetricsRow {
            accuracy: sum(|r| r.accuracy),
            macro_f1: sum(|r| r.macro_f1),
            minority_f1: sum(|r| r.minority_f1),
            recall: sum(|r| r.recall),
            precision: sum(|r| r.precision),
        }
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Metrics from paired labels. `minority` selects the class whose F1 is
/// reported as minority-F1; recall and precision refer to class 1.
/// Undefined ratios are 0.
pub fn metrics_from_predictions(y_true: &[u8], y_pred: &[u8], minority: u8) -> Result<MetricsRow> {
    if y_true.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut cm = [[0usize; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[usize::from(t)][usize::from(p)] += 1;
    }
    let (tn, fp, fn_, tp) = (cm[0][0], cm[0][1], cm[1][0], cm[1][1]);
    let f1_pos = f1(tp, fp, fn_);
    let f1_neg = f1(tn, fn_, fp);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MetricsRow {
        accuracy: ratio(tp + tn, y_true.len()),
        macro_f1: 0.5 * (f1_pos + f1_neg),
        minority_f1: if minority == 1 { f1_pos } else { f1_neg },
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
    })
}

/// Confusion counts `[[tn, fp], [fn, tp]]`.
pub fn confusion_matrix(y_true: &[u8], y_pred: &[u8]) -> [[usize; 2]; 2] {
    let mut cm = [[0usize; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[usize::from(t)][usize::from(p)] += 1;
    }
    cm
}

pub fn evaluate<M: Scorer>(model: &M, xs: &[SparseVector], ys: &[u8]) -> Result<MetricsRow> {
    let pred: Vec<u8> = xs.iter().map(|x| model.predict(x)).collect();
    metrics_from_predictions(ys, &pred, model.minority_class())
}

/// Majority-label and uniform-random baselines.
pub fn baselines(train_y: &[u8], test_y: &[u8], seed: u64) -> Result<(MetricsRow, MetricsRow)> {
    let (neg, pos) = class_counts(train_y);
    let majority = u8::from(pos > neg);
    let minority = minority_of(train_y);
    let maj = metrics_from_predictions(test_y, &vec![majority; test_y.len()], minority)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random: Vec<u8> = (0..test_y.len()).map(|_| u8::from(rng.random::<bool>())).collect();
    let rnd = metrics_from_predictions(test_y, &random, minority)?;
    Ok((maj, rnd))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub model: String,
    pub folds: Vec<MetricsRow>,
    pub mean: MetricsRow,
    pub skipped_folds: usize,
}

/// k-fold stratified cross-validation of `learner`. Folds whose training
/// part holds a single class are skipped with a warning.
pub fn cross_validate<L: Learner>(
    learner: &L,
    xs: &[SparseVector],
    ys: &[u8],
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    let folds = stratified_kfold(ys, k, seed)?;
    let mut rows = Vec::with_capacity(k);
    let mut skipped = 0;
    for (fi, fold) in folds.iter().enumerate() {
        let tx: Vec<SparseVector> = fold.train.iter().map(|&i| xs[i].clone()).collect();
        let ty: Vec<u8> = fold.train.iter().map(|&i| ys[i]).collect();
        let model = match learner.fit(&tx, &ty, &vec![1.0; ty.len()]) {
            Ok(m) => m,
            Err(Error::SingleClass) => {
                log::warn!("fold {fi}: single-class training data, skipped");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let ex: Vec<SparseVector> = fold.test.iter().map(|&i| xs[i].clone()).collect();
        let ey: Vec<u8> = fold.test.iter().map(|&i| ys[i]).collect();
        rows.push(evaluate(&model, &ex, &ey)?);
    }
    if rows.is_empty() {
        return Err(Error::Numerical("every fold was skipped".into()));
    }
    Ok(CvReport {
        model: learner.name().to_string(),
        mean: MetricsRow::mean(&rows),
        folds: rows,
        skipped_folds: skipped,
    })
}

/// Cross-validated majority and random baselines on the same folds.
pub fn cross_validate_baselines(ys: &[u8], k: usize, seed: u64) -> Result<(CvReport, CvReport)> {
    let folds = stratified_kfold(ys, k, seed)?;
    let mut maj = Vec::new();
    let mut rnd = Vec::new();
    for (fi, fold) in folds.iter().enumerate() {
        let ty: Vec<u8> = fold.train.iter().map(|&i| ys[i]).collect();
        let ey: Vec<u8> = fold.test.iter().map(|&i| ys[i]).collect();
        let (a, b) = baselines(&ty, &ey, seed.wrapping_add(fi as u64))?;
        maj.push(a);
        rnd.push(b);
    }
    let report = |name: &str, rows: Vec<MetricsRow>| CvReport {
        model: name.to_string(),
        mean: MetricsRow::mean(&rows),
        folds: rows,
        skipped_folds: 0,
    };
    Ok((report("majority", maj), report("random", rnd)))
}

/// Picks λ from the grid by mean cross-validated macro-F1.
pub fn select_lambda(
    xs: &[SparseVector],
    ys: &[u8],
    grid: &[f64],
    class_weighted: bool,
    k: usize,
    seed: u64,
) -> Result<(f64, CvReport)> {
    let mut best: Option<(f64, CvReport)> = None;
    for &lambda in grid {
        let lr = LogisticRegression {
            lambda,
            class_weighted,
            ..Default::default()
        };
        let rep = cross_validate(&lr, xs, ys, k, seed)?;
        if best.as_ref().is_none_or(|(_, b)| rep.mean.macro_f1 > b.mean.macro_f1) {
            best = Some((lambda, rep));
        }
    }
    best.ok_or_else(|| Error::config("lambda_grid", "empty grid"))
}

/// Features ranked by |weight| descending; ties broken by name.
pub fn coefficient_attributions(model: &LinearModel, names: &[String], top_k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = names.iter().cloned().zip(model.weights.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k.max(1));
    ranked
}

/// One classifier per strategy sharing a feature space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyModels {
    pub feature_set: FeatureSet,
    pub space: FeatureSpace,
    pub models: BTreeMap<Strategy, LinearModel>,
}

impl StrategyModels {
    pub fn predict(&self, text: &str) -> [f64; 5] {
        let x = self.space.vectorize(self.feature_set, text);
        Strategy::ALL.map(|s| self.models.get(&s).map_or(0.0, |m| m.predict_proba(&x)))
    }
}

/// Fits one logistic model per strategy on the texts annotated for it. The
/// feature space is fitted on every annotated text.
pub fn train_strategy_models(
    texts: &[AnnotatedText],
    feature_set: FeatureSet,
    min_df: usize,
    lexicon: LexiconSpec,
    lambda: f64,
    class_weighted: bool,
) -> Result<StrategyModels> {
    let docs: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
    let space = FeatureSpace::fit(&docs, min_df, lexicon);
    let xs: Vec<SparseVector> = docs.iter().map(|d| space.vectorize(feature_set, d)).collect();
    let mut models = BTreeMap::new();
    for s in Strategy::ALL {
        let (sx, sy): (Vec<SparseVector>, Vec<u8>) = texts
            .iter()
            .zip(&xs)
            .filter_map(|(t, x)| t.labels[s.index()].map(|y| (x.clone(), u8::from(y))))
            .unzip();
        if sy.is_empty() {
            return Err(Error::invalid(format!("no annotated texts for {s}")));
        }
        models.insert(s, train_logistic(&sx, &sy, lambda, class_weighted)?);
    }
    Ok(StrategyModels {
        feature_set,
        space,
        models,
    })
}

/// Labels every message of the corpus. Human annotations, keyed by message
/// id, override predictions.
pub fn weak_label_corpus(
    models: &StrategyModels,
    corpus: &Corpus,
    human: &HashMap<String, [bool; 5]>,
) -> Result<BTreeMap<String, StrategyLabels>> {
    for s in Strategy::ALL {
        if !models.models.contains_key(&s) {
            return Err(Error::invalid(format!("no model for strategy {s}")));
        }
    }
    Ok(corpus
        .messages()
        .map(|m| {
            let id = m.id();
            let probs = models.predict(&m.text);
            let labels = match human.get(&id) {
                Some(flags) => StrategyLabels {
                    flags: *flags,
                    provenance: Provenance::Human,
                    probabilities: Some(probs),
                },
                None => StrategyLabels {
                    flags: probs.map(|p| p >= THRESHOLD),
                    provenance: Provenance::Predicted,
                    probabilities: Some(probs),
                },
            };
            (id, labels)
        })
        .collect())
}

/// Writes `message_id, five labels, five probabilities, provenance, action_state`.
pub fn write_weak_labels<W: Write>(
    out: W,
    labels: &BTreeMap<String, StrategyLabels>,
    tie: TieRule,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["message_id".to_string()];
    header.extend(Strategy::ALL.iter().map(|s| s.name().to_string()));
    header.extend(Strategy::ALL.iter().map(|s| format!("p_{}", s.name())));
    header.push("provenance".into());
    header.push("action_state".into());
    w.write_record(&header)?;
    for (id, l) in labels {
        let mut rec = vec![id.clone()];
        rec.extend(l.flags.iter().map(|&b| u8::from(b).to_string()));
        match l.probabilities {
            Some(p) => rec.extend(p.iter().map(|v| format!("{v:.6}"))),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rec.push(l.provenance.name().into());
        rec.push(derive_action_state(l, tie).name().into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label file with `message_id` and the five strategy columns.
/// Optional `p_*` and `provenance` columns are honoured; rows with any
/// empty strategy cell are skipped.
pub fn read_labels<R: std::io::Read>(src: R) -> Result<BTreeMap<String, StrategyLabels>> {
    let mut rdr = csv::Reader::from_reader(src);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("message_id").ok_or_else(|| Error::invalid("label file needs message_id"))?;
    let flag_cols: Vec<usize> = Strategy::ALL
        .iter()
        .map(|s| col(s.name()).ok_or_else(|| Error::invalid(format!("label file needs {s}"))))
        .collect::<Result<_>>()?;
    let prob_cols: Vec<Option<usize>> = Strategy::ALL
        .iter()
        .map(|s| col(&format!("p_{}", s.name())))
        .collect();
    let prov_col = col("provenance");
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if flag_cols.iter().any(|&c| rec[c].trim().is_empty()) {
            continue;
        }
        let mut flags = [false; 5];
        for (f, &c) in flags.iter_mut().zip(&flag_cols) {
            *f = match rec[c].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(Error::Record {
                        line,
                        message: format!("bad flag {other:?}"),
                    })
                }
            };
        }
        let probabilities = if prob_cols.iter().all(|c| c.is_some_and(|c| !rec[c].trim().is_empty())) {
            let mut p = [0.0; 5];
            for (v, c) in p.iter_mut().zip(&prob_cols) {
                *v = rec[c.unwrap()].trim().parse().map_err(|_| Error::Record {
                    line,
                    message: "bad probability".into(),
                })?;
            }
            Some(p)
        } else {
            None
        };
        let provenance = match prov_col.map(|c| rec[c].trim()) {
            Some("predicted") => Provenance::Predicted,
            _ => Provenance::Human,
        };
        out.insert(
            rec[id_col].to_string(),
            StrategyLabels {
                flags,
                provenance,
                probabilities,
            },
        );
    }
    Ok(out)
}

/// Annotated training text: `text` plus any of the five strategy columns;
/// an empty cell means "not annotated for this strategy".
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedText {
    pub message_ref: Option<String>,
    pub text: String,
    pub labels: [Option<bool>; 5],
}

pub fn read_annotated_texts<R: std::io::Read>(src: R) -> Result<Vec<AnnotatedText>> {
    let mut rdr = csv::Reader::from_reader(src);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = col("text").ok_or_else(|| Error::invalid("annotation file needs a text column"))?;
    let ref_col = col("message_ref").or_else(|| col("message_id"));
    let flag_cols: Vec<Option<usize>> = Strategy::ALL.iter().map(|s| col(s.name())).collect();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut labels = [None; 5];
        for (l, c) in labels.iter_mut().zip(&flag_cols) {
            if let Some(c) = c {
                *l = match rec[*c].trim() {
                    "" => None,
                    "1" | "true" => Some(true),
                    "0" | "false" => Some(false),
                    other => {
                        return Err(Error::Record {
                            line: i + 2,
                            message: format!("bad flag {other:?}"),
                        })
                    }
                };
            }
        }
        out.push(AnnotatedText {
            message_ref: ref_col.map(|c| rec[c].to_string()).filter(|s| !s.is_empty()),
            text: rec[text_col].to_string(),
            labels,
        });
    }
    Ok(out)
}

/// Writes a cross-validation table: one row per (feature set, strategy, model).
pub fn write_cv_report<W: Write>(out: W, rows: &[(FeatureSet, Strategy, CvReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "feature_set",
        "strategy",
        "model",
        "accuracy",
        "macro_f1",
        "minority_f1",
        "recall",
        "precision",
    ])?;
    for (fs, s, r) in rows {
        let m = &r.mean;
        w.write_record([
            fs.name().to_string(),
            s.name().to_string(),
            r.model.clone(),
            format!("{:.3}", m.accuracy),
            format!("{:.3}", m.macro_f1),
            format!("{:.3}", m.minority_f1),
            format!("{:.3}", m.recall),
            format!("{:.3}", m.precision),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xs1(v: &[f64]) -> Vec<SparseVector> {
        v.iter().map(|&x| SparseVector::from_dense(&[x])).collect()
    }

    #[test]
    fn kfold_balanced_and_deterministic() {
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
        let folds = stratified_kfold(&labels, 5, 7).unwrap();
        for f in &folds {
            let pos = f.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((pos, f.test.len() - pos), (2, 2));
        }
        assert_eq!(folds, stratified_kfold(&labels, 5, 7).unwrap());
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_small_class() {
        let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0];
        assert!(matches!(
            stratified_kfold(&labels, 5, 0),
            Err(Error::ClassTooSmall { class: 1, count: 3, k: 5 })
        ));
    }

    #[test]
    fn separable_pair() {
        let m = train_logistic(&xs1(&[1.0, -1.0]), &[1, 0], 1.0, false).unwrap();
        let acc = evaluate(&m, &xs1(&[1.0, -1.0]), &[1, 0]).unwrap().accuracy;
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn heavy_regularization_gives_prior() {
        let xs = xs1(&[1.0, 2.0, -1.0, 0.5]);
        let ys = [1, 1, 0, 1];
        let m = train_logistic(&xs, &ys, 1e9, false).unwrap();
        assert!(m.weights[0].abs() < 1e-6);
        assert!((m.predict_proba(&xs[0]) - 0.75).abs() < 1e-6);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            train_logistic(&xs1(&[1.0, 2.0]), &[1, 1], 1.0, false),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn majority_baseline_on_skewed_split() {
        let train: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
        let (maj, _) = baselines(&train, &train, 1).unwrap();
        assert!((maj.accuracy - 0.9).abs() < 1e-12);
        assert_eq!(maj.minority_f1, 0.0);
        assert_eq!(maj.recall, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0];
        let m = metrics_from_predictions(&y, &y, 1).unwrap();
        assert_eq!(
            m,
            MetricsRow {
                accuracy: 1.0,
                macro_f1: 1.0,
                minority_f1: 1.0,
                recall: 1.0,
                precision: 1.0
            }
        );
        assert!(metrics_from_predictions(&[], &[], 1).is_err());
    }

    #[test]
    fn constant_classifier_macro_f1_is_one_third() {
        let y = [0, 1, 0, 1, 0, 1];
        let m = metrics_from_predictions(&y, &[1; 6], 0).unwrap();
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn attributions_ranked() {
        let model = LinearModel {
            weights: vec![2.0, -3.0, 0.5],
            bias: 0.0,
            class_weights: (1.0, 1.0),
            regularization: 1.0,
            minority: 1,
        };
        let names: Vec<String> = ["feature1", "feature2", "feature3"].map(String::from).to_vec();
        assert_eq!(
            coefficient_attributions(&model, &names, 2),
            vec![("feature2".to_string(), -3.0), ("feature1".to_string(), 2.0)]
        );
        let zero = LinearModel {
            weights: vec![0.0; 3],
            ..model
        };
        let r = coefficient_attributions(&zero, &["b", "c", "a"].map(String::from), 3);
        assert_eq!(r.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn naive_bayes_learns_indicator() {
        let xs: Vec<SparseVector> = (0..40)
            .map(|i| SparseVector::from_dense(&[f64::from(u8::from(i % 2 == 0)), 1.0]))
            .collect();
        let ys: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
        let m = BernoulliNb::default().fit(&xs, &ys, &[1.0; 40]).unwrap();
        assert_eq!(evaluate(&m, &xs, &ys).unwrap().accuracy, 1.0);
    }

    #[test]
    fn labels_file_round_trip() {
        let mut labels = BTreeMap::new();
        labels.insert(
            "g1-m0".to_string(),
            StrategyLabels {
                flags: [true, false, false, true, false],
                provenance: Provenance::Predicted,
                probabilities: Some([0.9, 0.1, 0.2, 0.5, 0.0]),
            },
        );
        labels.insert("g1-m1".to_string(), StrategyLabels::human([false; 5]));
        let mut buf = Vec::new();
        write_weak_labels(&mut buf, &labels, TieRule::default()).unwrap();
        let back = read_labels(buf.as_slice()).unwrap();
        assert_eq!(back, labels);
    }
}
