//! Perceived-trustworthiness models: a fixed-effects linear probability
//! model over strategy flags, and a combined text + strategy classifier.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::actionstate::{Strategy, StrategyLabels};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, PivotedQr};
use crate::strategyclf::{cross_validate, CvReport, LogisticRegression, DEFAULT_K, DEFAULT_LAMBDA};
use crate::textfeat::{FeatureSet, FeatureSpace, LexiconSpec, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustObservation {
    pub message_id: String,
    /// Receiver judged the message truthful.
    pub outcome: bool,
    pub strategies: [bool; 5],
    pub game_id: u32,
    /// Messages already exchanged in the thread (relative index).
    pub duration: u32,
    pub text: String,
}

/// Observations for every message with a receiver annotation and labels.
pub fn observations(corpus: &Corpus, labels: &BTreeMap<String, StrategyLabels>) -> Vec<TrustObservation> {
    let mut out: Vec<TrustObservation> = corpus
        .messages()
        .filter_map(|m| {
            let outcome = m.receiver_perception?;
            let l = labels.get(&m.id())?;
            Some(TrustObservation {
                message_id: m.id(),
                outcome,
                strategies: l.flags,
                game_id: m.game_id,
                duration: m.rel_index,
                text: m.text.clone(),
            })
        })
        .collect();
    out.sort_by(|a, b| (a.game_id, &a.message_id).cmp(&(b.game_id, &b.message_id)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermBlock {
    Intercept,
    Strategy,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub block: TermBlock,
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub terms: Vec<Coefficient>,
    pub n: usize,
    pub df: usize,
    pub sigma2: f64,
    pub reference_game: u32,
}

impl CoefficientReport {
    pub fn get(&self, term: &str) -> Option<&Coefficient> {
        self.terms.iter().find(|c| c.term == term)
    }

    pub fn strategy(&self, s: Strategy) -> &Coefficient {
        self.get(s.name()).expect("every strategy has a term")
    }
}

/// Least-squares fit of outcome on strategies, duration and game
/// indicators, with the smallest game id as the reference level.
pub fn fit_fixed_effects(obs: &[TrustObservation]) -> Result<CoefficientReport> {
    let reference = obs
        .iter()
        .map(|o| o.game_id)
        .min()
        .ok_or_else(|| Error::invalid("no trust observations"))?;
    fit_fixed_effects_with_reference(obs, reference)
}

pub fn fit_fixed_effects_with_reference(obs: &[TrustObservation], reference: u32) -> Result<CoefficientReport> {
    let y: Vec<f64> = obs.iter().map(|o| f64::from(u8::from(o.outcome))).collect();
    fit_fixed_effects_on(obs, &y, reference)
}

/// Same design as [`fit_fixed_effects_with_reference`] with real-valued
/// responses `y` in place of the binary outcomes.
pub fn fit_fixed_effects_on(obs: &[TrustObservation], y: &[f64], reference: u32) -> Result<CoefficientReport> {
    if y.len() != obs.len() {
        return Err(Error::invalid(format!("{} responses for {} observations", y.len(), obs.len())));
    }
    let games: BTreeSet<u32> = obs.iter().map(|o| o.game_id).collect();
    if !games.contains(&reference) {
        return Err(Error::config("reference_game", format!("game {reference} has no observations")));
    }
    if games.len() < 2 {
        log::warn!("single game: its effect is absorbed into the intercept");
    }
    let dummies: Vec<u32> = games.into_iter().filter(|&g| g != reference).collect();
    let mut names: Vec<(String, TermBlock)> = vec![("intercept".into(), TermBlock::Intercept)];
    names.extend(Strategy::ALL.iter().map(|s| (s.name().to_string(), TermBlock::Strategy)));
    names.push(("duration".into(), TermBlock::Control));
    names.extend(dummies.iter().map(|g| (format!("game_{g}"), TermBlock::Control)));
    let p = names.len();
    let n = obs.len();
    if n <= p {
        return Err(Error::invalid(format!("{n} observations for {p} parameters")));
    }
    let dummy_col: BTreeMap<u32, usize> = dummies.iter().enumerate().map(|(i, &g)| (g, 7 + i)).collect();
    let mut x = Matrix::zeros(n, p);
    for (i, o) in obs.iter().enumerate() {
        x.set(i, 0, 1.0);
        for (j, &f) in o.strategies.iter().enumerate() {
            x.set(i, 1 + j, f64::from(u8::from(f)));
        }
        x.set(i, 6, f64::from(o.duration));
        if let Some(&c) = dummy_col.get(&o.game_id) {
            x.set(i, c, 1.0);
        }
    }
    let qr = PivotedQr::new(&x);
    if qr.rank() < p {
        let mut cols: BTreeSet<usize> = BTreeSet::new();
        for dep in qr.dependencies() {
            cols.extend(dep);
        }
        return Err(Error::Collinear(cols.into_iter().map(|c| names[c].0.clone()).collect()));
    }
    let beta = qr.solve(y);
    let fitted = x.mul_vec(&beta);
    let mut rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
    // an exact fit leaves only rounding residue
    if rss <= 1e-24 * (1.0 + y.iter().map(|v| v * v).sum::<f64>()) {
        rss = 0.0;
    }
    let df = n - p;
    let sigma2 = rss / df as f64;
    let diag = qr
        .inverse_gram_diagonal()
        .ok_or_else(|| Error::Numerical("singular normal equations".into()))?;
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let terms = names
        .into_iter()
        .enumerate()
        .map(|(j, (term, block))| {
            let est = beta[j];
            let se = (sigma2 * diag[j]).max(0.0).sqrt();
            let pval = if se > 0.0 {
                2.0 * (1.0 - t_dist.cdf((est / se).abs()))
            } else if est.abs() < 1e-12 {
                1.0
            } else {
                0.0
            };
            Coefficient {
                term,
                block,
                estimate: est,
                se,
                p: pval,
            }
        })
        .collect();
    Ok(CoefficientReport {
        terms,
        n,
        df,
        sigma2,
        reference_game: reference,
    })
}

pub fn write_coefficients_csv<W: Write>(out: W, report: &CoefficientReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "block", "estimate", "se", "p"])?;
    for c in &report.terms {
        let block = match c.block {
            TermBlock::Intercept => "intercept",
            TermBlock::Strategy => "strategy",
            TermBlock::Control => "control",
        };
        w.write_record([
            c.term.clone(),
            block.to_string(),
            format!("{:.6}", c.estimate),
            format!("{:.6}", c.se),
            format!("{:.6}", c.p),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrustClassifierConfig {
    /// Text features; `None` uses strategy flags only.
    pub feature_set: Option<FeatureSet>,
    pub lambda: f64,
    pub class_weighted: bool,
    pub k: usize,
    pub seed: u64,
    pub min_df: usize,
}

impl Default for TrustClassifierConfig {
    fn default() -> Self {
        TrustClassifierConfig {
            feature_set: Some(FeatureSet::TfidfDiscursive),
            lambda: DEFAULT_LAMBDA,
            class_weighted: true,
            k: DEFAULT_K,
            seed: 0,
            min_df: 2,
        }
    }
}

fn trust_design(
    obs: &[TrustObservation],
    space: Option<(&FeatureSpace, FeatureSet)>,
    subset: &[Strategy],
) -> Vec<SparseVector> {
    obs.iter()
        .map(|o| {
            let flags: Vec<f64> = subset
                .iter()
                .map(|s| f64::from(u8::from(o.strategies[s.index()])))
                .collect();
            let flags = SparseVector::from_dense(&flags);
            match space {
                Some((sp, set)) => sp.vectorize(set, &o.text).concat(&flags),
                None => flags,
            }
        })
        .collect()
}

/// Cross-validated logistic regression on text features plus the selected
/// strategy flags.
pub fn combined_trust_classifier(
    obs: &[TrustObservation],
    subset: &[Strategy],
    cfg: &TrustClassifierConfig,
) -> Result<CvReport> {
    if cfg.feature_set.is_none() && subset.is_empty() {
        return Err(Error::config(
            "strategy_subset",
            "no text features and no strategies selected",
        ));
    }
    let space = cfg.feature_set.map(|set| {
        let docs: Vec<&str> = obs.iter().map(|o| o.text.as_str()).collect();
        (FeatureSpace::fit(&docs, cfg.min_df, LexiconSpec::starter()), set)
    });
    let xs = trust_design(obs, space.as_ref().map(|(s, f)| (s, *f)), subset);
    let ys: Vec<u8> = obs.iter().map(|o| u8::from(o.outcome)).collect();
    let lr = LogisticRegression {
        lambda: cfg.lambda,
        class_weighted: cfg.class_weighted,
        ..Default::default()
    };
    cross_validate(&lr, &xs, &ys, cfg.k, cfg.seed)
}

/// Columns of the ablation grid: text only, each single strategy, all five.
pub fn ablation_subsets() -> Vec<(String, Vec<Strategy>)> {
    let mut cols = vec![("text".to_string(), Vec::new())];
    cols.extend(Strategy::ALL.iter().map(|&s| (format!("+{}", s.name()), vec![s])));
    cols.push(("+all".to_string(), Strategy::ALL.to_vec()));
    cols
}

pub fn trust_ablation(obs: &[TrustObservation], cfg: &TrustClassifierConfig) -> Result<Vec<(String, CvReport)>> {
    ablation_subsets()
        .into_iter()
        .map(|(name, subset)| Ok((name, combined_trust_classifier(obs, &subset, cfg)?)))
        .collect()
}

/// Metric rows by ablation columns.
pub fn write_ablation_grid_csv<W: Write>(out: W, cells: &[(String, CvReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["metric".to_string()];
    header.extend(cells.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    let metrics: [(&str, fn(&CvReport) -> f64); 5] = [
        ("accuracy", |r| r.mean.accuracy),
        ("macro_f1", |r| r.mean.macro_f1),
        ("minority_f1", |r| r.mean.minority_f1),
        ("recall", |r| r.mean.recall),
        ("precision", |r| r.mean.precision),
    ];
    for (name, get) in metrics {
        let mut rec = vec![name.to_string()];
        rec.extend(cells.iter().map(|(_, r)| format!("{:.6}", get(r))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ob(i: usize, outcome: bool, strategies: [bool; 5], game_id: u32) -> TrustObservation {
        TrustObservation {
            message_id: format!("g{game_id}-m{i}"),
            outcome,
            strategies,
            game_id,
            duration: (i % 7) as u32,
            text: String::new(),
        }
    }

    fn varied(n: usize, outcome: impl Fn(usize) -> bool) -> Vec<TrustObservation> {
        (0..n)
            .map(|i| {
                let s = [i % 2 == 0, i % 3 == 0, i % 5 == 0, i % 7 < 3, i % 11 < 5];
                ob(i, outcome(i), s, 1 + ((i / 13) % 3) as u32)
            })
            .collect()
    }

    #[test]
    fn constant_outcome() {
        let r = fit_fixed_effects(&varied(200, |_| true)).unwrap();
        for s in Strategy::ALL {
            assert!(r.strategy(s).estimate.abs() < 1e-10);
            assert_eq!(r.strategy(s).p, 1.0);
        }
        assert!((r.get("intercept").unwrap().estimate - 1.0).abs() < 1e-10);
    }

    #[test]
    fn duplicated_strategy_is_collinear() {
        let mut obs = varied(100, |i| i % 4 == 0);
        for o in &mut obs {
            o.strategies[4] = o.strategies[0];
        }
        match fit_fixed_effects(&obs) {
            Err(Error::Collinear(cols)) => {
                assert!(cols.contains(&"speaker_move".to_string()));
                assert!(cols.contains(&"friendliness".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reference_game_does_not_move_strategies() {
        let obs = varied(300, |i| (i * 7919) % 13 < 6);
        let a = fit_fixed_effects_with_reference(&obs, 1).unwrap();
        let b = fit_fixed_effects_with_reference(&obs, 3).unwrap();
        for s in Strategy::ALL {
            assert!((a.strategy(s).estimate - b.strategy(s).estimate).abs() < 1e-10);
            assert!((a.strategy(s).se - b.strategy(s).se).abs() < 1e-10);
        }
        assert!(a.get("game_1").is_none() && b.get("game_3").is_none());
    }

    #[test]
    fn classifier_needs_some_features() {
        let cfg = TrustClassifierConfig {
            feature_set: None,
            ..Default::default()
        };
        assert!(matches!(
            combined_trust_classifier(&varied(50, |i| i % 2 == 0), &[], &cfg),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn ablation_grid_layout() {
        let cols = ablation_subsets();
        assert_eq!(cols.len(), 7);
        assert_eq!(cols[0].1.len(), 0);
        assert_eq!(cols[6].1.len(), 5);
    }
}
