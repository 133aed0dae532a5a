//! Inter-annotator agreement for binary labels: pairwise percent agreement,
//! supermajority share, and a two-class Dawid–Skene annotator model fit by EM.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse binary vote matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationMatrix {
    items: Vec<String>,
    annotators: Vec<String>,
    /// per item: (annotator index, label)
    votes: Vec<Vec<(usize, u8)>>,
    item_pos: HashMap<String, usize>,
    annotator_pos: HashMap<String, usize>,
}

impl AnnotationMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from `(item, annotator, label)` triples. A repeated
    /// (item, annotator) pair replaces the earlier vote.
    pub fn from_triples<I, A>(triples: impl IntoIterator<Item = (I, A, u8)>) -> Result<Self>
    where
        I: Into<String>,
        A: Into<String>,
    {
        let mut m = AnnotationMatrix::new();
        for (i, a, l) in triples {
            m.add_vote(i.into(), a.into(), l)?;
        }
        Ok(m)
    }

    pub fn add_vote(&mut self, item: String, annotator: String, label: u8) -> Result<()> {
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        let ii = match self.item_pos.get(&item) {
            Some(&i) => i,
            None => {
                self.item_pos.insert(item.clone(), self.items.len());
                self.items.push(item);
                self.votes.push(Vec::new());
                self.items.len() - 1
            }
        };
        let ai = match self.annotator_pos.get(&annotator) {
            Some(&i) => i,
            None => {
                self.annotator_pos.insert(annotator.clone(), self.annotators.len());
                self.annotators.push(annotator);
                self.annotators.len() - 1
            }
        };
        let row = &mut self.votes[ii];
        match row.iter_mut().find(|(a, _)| *a == ai) {
            Some(v) => v.1 = label,
            None => row.push((ai, label)),
        }
        Ok(())
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn item_votes(&self, item: usize) -> &[(usize, u8)] {
        &self.votes[item]
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Same matrix with every label inverted.
    pub fn flipped(&self) -> Self {
        let mut m = self.clone();
        for row in &mut m.votes {
            for v in row {
                v.1 = 1 - v.1;
            }
        }
        m
    }

    fn counted_items(&self) -> impl Iterator<Item = &Vec<(usize, u8)>> {
        self.votes.iter().filter(|r| r.len() >= 2)
    }

    fn warn_sparse_items(&self) {
        let skipped = self.votes.iter().filter(|r| r.len() < 2).count();
        if skipped > 0 {
            log::warn!("{skipped} item(s) with fewer than 2 votes excluded from agreement");
        }
    }
}

/// Mean over items of the fraction of agreeing annotator pairs, × 100.
/// Items with fewer than two votes are skipped.
pub fn pairwise_percent_agreement(m: &AnnotationMatrix) -> f64 {
    m.warn_sparse_items();
    let per_item: Vec<f64> = m
        .counted_items()
        .map(|row| {
            let n = row.len();
            let ones = row.iter().filter(|v| v.1 == 1).count();
            let zeros = n - ones;
            let agree = ones * ones.saturating_sub(1) / 2 + zeros * zeros.saturating_sub(1) / 2;
            agree as f64 / (n * (n - 1) / 2) as f64
        })
        .collect();
    if per_item.is_empty() {
        return 0.0;
    }
    100.0 * per_item.iter().sum::<f64>() / per_item.len() as f64
}

pub const DEFAULT_SUPERMAJORITY: f64 = 0.8;

/// Percentage of items whose modal label share is at least `bar`.
pub fn supermajority_fraction(m: &AnnotationMatrix, bar: f64) -> f64 {
    let mut n = 0usize;
    let mut hit = 0usize;
    for row in m.counted_items() {
        n += 1;
        let ones = row.iter().filter(|v| v.1 == 1).count();
        let modal = ones.max(row.len() - ones);
        // tolerance keeps the boundary inclusive (4 of 5 at bar 0.8)
        if modal as f64 >= bar * row.len() as f64 - 1e-12 {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        100.0 * hit as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAccuracy {
    pub sensitivity: f64,
    pub specificity: f64,
}

impl AnnotatorAccuracy {
    pub fn theta(&self) -> f64 {
        0.5 * (self.sensitivity + self.specificity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pairwise_pct: f64,
    pub supermajority_pct: f64,
    /// Mean over annotators of (sensitivity + specificity) / 2.
    pub theta: f64,
    pub per_annotator: BTreeMap<String, AnnotatorAccuracy>,
    pub prevalence: f64,
    /// Posterior probability of the positive class per item.
    pub posteriors: Vec<f64>,
    pub iterations: usize,
    /// Observed-data log-likelihood after each M-step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub supermajority_bar: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 500,
            tol: 1e-6,
            supermajority_bar: DEFAULT_SUPERMAJORITY,
        }
    }
}

struct Params {
    prevalence: f64,
    sens: Vec<f64>,
    spec: Vec<f64>,
}

impl Params {
    fn max_change(&self, other: &Params) -> f64 {
        let mut d = (self.prevalence - other.prevalence).abs();
        for (a, b) in self.sens.iter().zip(&other.sens).chain(self.spec.iter().zip(&other.spec)) {
            d = d.max((a - b).abs());
        }
        d
    }
}

/// Natural log with ln 0 = −∞.
#[inline]
fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn m_step(m: &AnnotationMatrix, post: &[f64]) -> Params {
    let k = m.annotators.len();
    let n = post.len();
    let prevalence = if n == 0 { 0.5 } else { post.iter().sum::<f64>() / n as f64 };
    let mut pos_mass = vec![0.0; k];
    let mut pos_hit = vec![0.0; k];
    let mut neg_mass = vec![0.0; k];
    let mut neg_hit = vec![0.0; k];
    for (row, &t) in m.votes.iter().zip(post) {
        for &(a, l) in row {
            pos_mass[a] += t;
            neg_mass[a] += 1.0 - t;
            if l == 1 {
                pos_hit[a] += t;
            } else {
                neg_hit[a] += 1.0 - t;
            }
        }
    }
    let ratio = |hit: &[f64], mass: &[f64]| -> Vec<f64> {
        let raw: Vec<Option<f64>> = hit
            .iter()
            .zip(mass)
            .map(|(h, m)| (*m > 0.0).then(|| (h / m).clamp(0.0, 1.0)))
            .collect();
        let defined: Vec<f64> = raw.iter().flatten().copied().collect();
        // annotators who never saw mass in a class borrow the pooled mean
        let fallback = if defined.is_empty() {
            1.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        raw.into_iter().map(|r| r.unwrap_or(fallback)).collect()
    };
    Params {
        prevalence,
        sens: ratio(&pos_hit, &pos_mass),
        spec: ratio(&neg_hit, &neg_mass),
    }
}

/// Returns posteriors and the observed-data log-likelihood under `p`.
fn e_step(m: &AnnotationMatrix, p: &Params) -> (Vec<f64>, f64) {
    let lp = ln_or_neg_inf(p.prevalence);
    let ln = ln_or_neg_inf(1.0 - p.prevalence);
    let mut ll = 0.0;
    let post = m
        .votes
        .iter()
        .map(|row| {
            let (mut a, mut b) = (lp, ln);
            for &(j, l) in row {
                if l == 1 {
                    a += ln_or_neg_inf(p.sens[j]);
                    b += ln_or_neg_inf(1.0 - p.spec[j]);
                } else {
                    a += ln_or_neg_inf(1.0 - p.sens[j]);
                    b += ln_or_neg_inf(p.spec[j]);
                }
            }
            let z = log_add(a, b);
            ll += z;
            if z == f64::NEG_INFINITY {
                0.5
            } else {
                (a - z).exp()
            }
        })
        .collect();
    (post, ll)
}

/// Fits the two-class annotator confusion model by EM, initialized from the
/// per-item majority vote. Fails if the log-likelihood ever decreases.
pub fn fit_annotator_model(m: &AnnotationMatrix, opts: EmOptions) -> Result<AgreementReport> {
    if m.annotators.len() < 2 {
        return Err(Error::invalid("annotator model needs at least 2 annotators"));
    }
    let pairwise_pct = pairwise_percent_agreement(m);
    let supermajority_pct = supermajority_fraction(m, opts.supermajority_bar);

    let labels: Vec<u8> = m.votes.iter().flatten().map(|v| v.1).collect();
    if labels.iter().all(|&l| l == labels[0]) {
        let prevalence = f64::from(labels[0]);
        let perfect = AnnotatorAccuracy {
            sensitivity: 1.0,
            specificity: 1.0,
        };
        return Ok(AgreementReport {
            pairwise_pct,
            supermajority_pct,
            theta: 1.0,
            per_annotator: m.annotators.iter().map(|a| (a.clone(), perfect)).collect(),
            prevalence,
            posteriors: vec![prevalence; m.n_items()],
            iterations: 0,
            log_likelihood: vec![0.0],
        });
    }

    let mut post: Vec<f64> = m
        .votes
        .iter()
        .map(|row| {
            let ones = row.iter().filter(|v| v.1 == 1).count() * 2;
            match ones.cmp(&row.len()) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => 0.5,
            }
        })
        .collect();

    let mut params = m_step(m, &post);
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (new_post, ll) = e_step(m, &params);
        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-9 * (1.0 + f64::abs(prev)) {
                return Err(Error::Numerical(format!(
                    "EM log-likelihood decreased at iteration {iterations}: {prev} -> {ll}"
                )));
            }
        }
        trace.push(ll);
        post = new_post;
        iterations += 1;
        let next = m_step(m, &post);
        let delta = next.max_change(&params);
        params = next;
        if delta < opts.tol || iterations >= opts.max_iters {
            break;
        }
    }
    let (final_post, ll) = e_step(m, &params);
    if let Some(&prev) = trace.last() {
        if ll < prev - 1e-9 * (1.0 + f64::abs(prev)) {
            return Err(Error::Numerical(format!(
                "EM log-likelihood decreased at final step: {prev} -> {ll}"
            )));
        }
    }
    trace.push(ll);
    post = final_post;

    // label-swapped optimum: restore class semantics
    let k = m.annotators.len() as f64;
    let mean_sum = params.sens.iter().zip(&params.spec).map(|(a, b)| a + b).sum::<f64>() / k;
    if mean_sum < 1.0 {
        let sens = params.spec.iter().map(|s| 1.0 - s).collect();
        let spec = params.sens.iter().map(|s| 1.0 - s).collect();
        params = Params {
            prevalence: 1.0 - params.prevalence,
            sens,
            spec,
        };
        for t in &mut post {
            *t = 1.0 - *t;
        }
    }

    let per_annotator: BTreeMap<String, AnnotatorAccuracy> = m
        .annotators
        .iter()
        .enumerate()
        .map(|(j, a)| {
            (
                a.clone(),
                AnnotatorAccuracy {
                    sensitivity: params.sens[j],
                    specificity: params.spec[j],
                },
            )
        })
        .collect();
    let theta = per_annotator.values().map(AnnotatorAccuracy::theta).sum::<f64>() / k;

    Ok(AgreementReport {
        pairwise_pct,
        supermajority_pct,
        theta,
        per_annotator,
        prevalence: params.prevalence,
        posteriors: post,
        iterations,
        log_likelihood: trace,
    })
}

pub const GATE_PAIRWISE_PCT: f64 = 75.0;
pub const GATE_THETA: f64 = 0.65;

/// A label is usable for training iff pairwise agreement ≥ 75% and θ ≥ 0.65.
pub fn passes_gate(pairwise_pct: f64, theta: f64) -> bool {
    pairwise_pct >= GATE_PAIRWISE_PCT && theta >= GATE_THETA
}

pub fn quality_gate(reports: &BTreeMap<String, AgreementReport>) -> BTreeMap<String, bool> {
    reports
        .iter()
        .map(|(k, r)| (k.clone(), passes_gate(r.pairwise_pct, r.theta)))
        .collect()
}

/// Reads `item_id,annotator_id,label[,strategy]`. Without a strategy column
/// all votes go under `default_label`.
pub fn read_votes_csv<R: Read>(src: R, default_label: &str) -> Result<BTreeMap<String, AnnotationMatrix>> {
    let mut rdr = csv::Reader::from_reader(src);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (item, ann, lab) = match (col("item_id"), col("annotator_id"), col("label")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::invalid(
                "votes csv needs columns item_id, annotator_id, label",
            ))
        }
    };
    let strat = col("strategy");
    let mut out: BTreeMap<String, AnnotationMatrix> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label: u8 = rec[lab].trim().parse().map_err(|_| Error::Record {
            line: i + 2,
            message: format!("bad label {:?}", &rec[lab]),
        })?;
        let key = strat.map_or(default_label, |s| &rec[s]).to_string();
        out.entry(key)
            .or_default()
            .add_vote(rec[item].to_string(), rec[ann].to_string(), label)
            .map_err(|e| Error::Record {
                line: i + 2,
                message: e.to_string(),
            })?;
    }
    Ok(out)
}

pub fn write_votes_csv<W: Write>(out: W, matrices: &BTreeMap<String, AnnotationMatrix>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "annotator_id", "label", "strategy"])?;
    for (label, m) in matrices {
        for (i, row) in m.votes.iter().enumerate() {
            for &(a, l) in row {
                w.write_record([&m.items[i], &m.annotators[a], &l.to_string(), label])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Agreement table with one row per label.
pub fn write_agreement_csv<W: Write>(out: W, reports: &BTreeMap<String, AgreementReport>) -> Result<()> {
    let gate = quality_gate(reports);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label",
        "pairwise_pct_agree",
        "pct_with_80_agreement",
        "theta",
        "used_for_training",
    ])?;
    for (k, r) in reports {
        w.write_record([
            k.clone(),
            format!("{:.2}", r.pairwise_pct),
            format!("{:.2}", r.supermajority_pct),
            format!("{:.4}", r.theta),
            if gate[k] { "YES" } else { "NO" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-annotator sensitivity/specificity table.
pub fn write_annotator_csv<W: Write>(out: W, reports: &BTreeMap<String, AgreementReport>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "annotator", "sensitivity", "specificity", "theta"])?;
    for (k, r) in reports {
        for (a, acc) in &r.per_annotator {
            w.write_record([
                k.clone(),
                a.clone(),
                format!("{:.6}", acc.sensitivity),
                format!("{:.6}", acc.specificity),
                format!("{:.6}", acc.theta()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(votes: &[u8]) -> Vec<(String, String, u8)> {
        votes
            .iter()
            .enumerate()
            .map(|(a, &l)| ("x".to_string(), format!("a{a}"), l))
            .collect()
    }

    fn matrix(items: &[&[u8]]) -> AnnotationMatrix {
        let mut m = AnnotationMatrix::new();
        for (i, votes) in items.iter().enumerate() {
            for (a, &l) in votes.iter().enumerate() {
                m.add_vote(format!("i{i}"), format!("a{a}"), l).unwrap();
            }
        }
        m
    }

    #[test]
    fn pairwise_examples() {
        let m = AnnotationMatrix::from_triples(item(&[1, 1, 1, 1, 1])).unwrap();
        assert_eq!(pairwise_percent_agreement(&m), 100.0);
        let m = AnnotationMatrix::from_triples(item(&[1, 1, 1, 1, 0])).unwrap();
        assert!((pairwise_percent_agreement(&m) - 60.0).abs() < 1e-12);
        let m = matrix(&[&[1, 1, 1, 1, 1], &[1, 1, 1, 1, 0]]);
        assert!((pairwise_percent_agreement(&m) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn single_vote_items_are_skipped() {
        let mut m = matrix(&[&[1, 1]]);
        m.add_vote("lonely".into(), "a0".into(), 0).unwrap();
        assert_eq!(pairwise_percent_agreement(&m), 100.0);
    }

    #[test]
    fn supermajority_examples() {
        assert_eq!(supermajority_fraction(&matrix(&[&[1, 1, 1, 1, 0]]), 0.8), 100.0);
        assert_eq!(supermajority_fraction(&matrix(&[&[1, 1, 0, 0, 0]]), 0.8), 0.0);
        assert_eq!(
            supermajority_fraction(&matrix(&[&[1, 1, 1], &[0, 0, 0]]), 0.8),
            100.0
        );
    }

    #[test]
    fn gate_examples() {
        assert!(!passes_gate(76.5, 0.58));
        assert!(passes_gate(75.26, 0.66));
        assert!(!passes_gate(74.9, 0.70));
    }

    #[test]
    fn degenerate_votes() {
        let m = matrix(&[&[0, 0, 0], &[0, 0, 0]]);
        let r = fit_annotator_model(&m, EmOptions::default()).unwrap();
        assert_eq!(r.theta, 1.0);
        assert_eq!(r.prevalence, 0.0);
    }

    #[test]
    fn perfect_annotators() {
        let m = matrix(&[&[1, 1, 1], &[0, 0, 0], &[1, 1, 1], &[0, 0, 0]]);
        let r = fit_annotator_model(&m, EmOptions::default()).unwrap();
        assert!((r.theta - 1.0).abs() < 1e-6);
        assert!((r.prevalence - 0.5).abs() < 1e-12);
    }

    #[test]
    fn needs_two_annotators() {
        let m = AnnotationMatrix::from_triples([("i", "a", 1u8), ("j", "a", 0)]).unwrap();
        assert!(fit_annotator_model(&m, EmOptions::default()).is_err());
    }

    #[test]
    fn votes_csv_round_trip() {
        let csv = "item_id,annotator_id,label,strategy\ni1,a,1,reasoning\ni1,b,0,reasoning\ni2,a,1,friendliness\n";
        let ms = read_votes_csv(csv.as_bytes(), "label").unwrap();
        assert_eq!(ms.len(), 2);
        let mut buf = Vec::new();
        write_votes_csv(&mut buf, &ms).unwrap();
        assert_eq!(read_votes_csv(buf.as_slice(), "label").unwrap(), ms);
    }
}
