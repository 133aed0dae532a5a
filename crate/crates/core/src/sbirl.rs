//! Score-based inverse reinforcement learning over dyadic threads.
//!
//! Each player's subthread of states is summarized by a discounted feature
//! map μ, a linear reward θ is fit by least squares against final scores,
//! and threads are scored by comparing the players' mean per-state reward.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actionstate::{derive_action_state, ActionState, StrategyLabels, TieRule};
use crate::corpus::{thread_outcome, Corpus, Message, ThreadOutcome};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::socialgraph::{CentralityTrace, CentralityVector};

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const GAMMA_SWEEP: [f64; 5] = [0.5, 0.8, 0.9, 0.95, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateVariant {
    RandomState,
    Simple,
    GraphOnly,
    GraphAware,
}

impl StateVariant {
    pub const ALL: [StateVariant; 4] = [
        StateVariant::RandomState,
        StateVariant::Simple,
        StateVariant::GraphOnly,
        StateVariant::GraphAware,
    ];

    pub fn dimension(self) -> usize {
        match self {
            StateVariant::RandomState => 1,
            StateVariant::Simple => 6,
            StateVariant::GraphOnly => 8,
            StateVariant::GraphAware => 14,
        }
    }

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            StateVariant::RandomState => "random",
            StateVariant::Simple => "simple",
            StateVariant::GraphOnly => "graph",
            StateVariant::GraphAware => "graph-aware",
        }
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, StateVariant::Simple | StateVariant::GraphAware)
    }

    pub fn needs_graph(self) -> bool {
        matches!(self, StateVariant::GraphOnly | StateVariant::GraphAware)
    }
}

impl fmt::Display for StateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" | "random_state" => Ok(StateVariant::RandomState),
            "simple" => Ok(StateVariant::Simple),
            "graph" | "graph_only" => Ok(StateVariant::GraphOnly),
            "graph-aware" | "graph_aware" => Ok(StateVariant::GraphAware),
            other => Err(Error::config("variant", format!("unknown variant {other:?}"))),
        }
    }
}

/// State vector φ(s) of one message.
pub fn encode_state(
    variant: StateVariant,
    msg: &Message,
    labels: Option<&StrategyLabels>,
    centrality: Option<&CentralityVector>,
    tie: TieRule,
) -> Result<Vec<f64>> {
    let simple = |l: Option<&StrategyLabels>| -> Result<Vec<f64>> {
        let l = l.ok_or_else(|| {
            Error::invalid(format!("message {} has no strategy labels", msg.id()))
        })?;
        let mut v: Vec<f64> = l.flags.iter().map(|&b| f64::from(u8::from(b))).collect();
        v.push(f64::from(u8::from(
            derive_action_state(l, tie) == ActionState::Group1,
        )));
        Ok(v)
    };
    let graph = |c: Option<&CentralityVector>| -> Result<Vec<f64>> {
        c.map(|c| c.to_array().to_vec()).ok_or_else(|| {
            Error::invalid(format!("message {} has no centrality snapshot", msg.id()))
        })
    };
    match variant {
        StateVariant::RandomState => Ok(vec![f64::from(msg.score_delta)]),
        StateVariant::Simple => simple(labels),
        StateVariant::GraphOnly => graph(centrality),
        StateVariant::GraphAware => {
            let mut v = simple(labels)?;
            v.extend(graph(centrality)?);
            Ok(v)
        }
    }
}

/// One player's ordered states within a thread with their final score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subthread {
    pub player: String,
    pub states: Vec<Vec<f64>>,
    pub final_score: f64,
}

impl Subthread {
    pub fn truncated(&self, n: usize) -> Subthread {
        Subthread {
            player: self.player.clone(),
            states: self.states.iter().take(n).cloned().collect(),
            final_score: self.final_score,
        }
    }
}

/// A dyadic thread seen as two competing subthreads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadPair {
    pub id: String,
    pub a: Subthread,
    pub b: Subthread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub theta: Vec<f64>,
    pub gamma: f64,
}

impl RewardModel {
    pub fn reward(&self, state: &[f64]) -> f64 {
        self.theta.iter().zip(state).map(|(t, s)| t * s).sum()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::config("gamma", format!("{gamma} is outside [0, 1)")))
    }
}

/// μ = Σ γᵗ φ(sₜ); the zero vector of dimension `dim` for no states.
pub fn discounted_feature_map(states: &[Vec<f64>], gamma: f64, dim: usize) -> Vec<f64> {
    let mut mu = vec![0.0; dim];
    let mut w = 1.0;
    for s in states {
        for (m, x) in mu.iter_mut().zip(s) {
            *m += w * x;
        }
        w *= gamma;
    }
    mu
}

/// θ minimizing `(1/n) Σ (fᵢ − θᵀμᵢ)² + ridge·‖θ‖²`; minimum norm when the
/// design is rank deficient.
pub fn fit_reward(samples: &[(Vec<f64>, f64)], ridge: f64, gamma: f64) -> Result<RewardModel> {
    check_gamma(gamma)?;
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::config("ridge", format!("{ridge} must be ≥ 0")));
    }
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("reward fit needs at least one subthread"));
    }
    let d = samples[0].0.len();
    if let Some((mu, _)) = samples.iter().find(|(mu, _)| mu.len() != d) {
        return Err(Error::invalid(format!(
            "feature maps of dimension {} and {d} mixed",
            mu.len()
        )));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|(mu, _)| mu.as_slice()).collect();
    let a = Matrix::from_rows(&rows);
    let f: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let theta = lstsq(&a, &f, ridge * n as f64);
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numerical("non-finite reward parameters".into()));
    }
    Ok(RewardModel { theta, gamma })
}

/// Fits θ on every subthread of `threads`.
pub fn fit_threads(threads: &[ThreadPair], gamma: f64, ridge: f64) -> Result<RewardModel> {
    let dim = threads
        .first()
        .and_then(|t| t.a.states.first().or(t.b.states.first()))
        .map_or(0, Vec::len);
    let samples: Vec<(Vec<f64>, f64)> = threads
        .iter()
        .flat_map(|t| [&t.a, &t.b])
        .map(|s| (discounted_feature_map(&s.states, gamma, dim), s.final_score))
        .collect();
    fit_reward(&samples, ridge, gamma)
}

/// Undiscounted mean of θᵀφ over the subthread's states.
pub fn average_reward(model: &RewardModel, sub: &Subthread) -> Result<f64> {
    if sub.states.is_empty() {
        return Err(Error::invalid(format!(
            "subthread of {} has no states",
            sub.player
        )));
    }
    Ok(sub.states.iter().map(|s| model.reward(s)).sum::<f64>() / sub.states.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinnerEval {
    pub accuracy: f64,
    pub n_threads: usize,
    pub n_correct: usize,
    pub n_ties: usize,
}

/// Share of untied threads where the higher-scoring player also has the
/// strictly higher average reward.
pub fn evaluate_winner_accuracy(model: &RewardModel, threads: &[ThreadPair]) -> Result<WinnerEval> {
    let (mut n, mut correct, mut ties) = (0usize, 0usize, 0usize);
    for t in threads {
        let (win, lose) = if t.a.final_score > t.b.final_score {
            (&t.a, &t.b)
        } else if t.b.final_score > t.a.final_score {
            (&t.b, &t.a)
        } else {
            ties += 1;
            continue;
        };
        n += 1;
        if average_reward(model, win)? > average_reward(model, lose)? {
            correct += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no untied threads to evaluate"));
    }
    Ok(WinnerEval {
        accuracy: correct as f64 / n as f64,
        n_threads: n,
        n_correct: correct,
        n_ties: ties,
    })
}

/// Fit and evaluate on the same threads.
pub fn fit_and_evaluate(threads: &[ThreadPair], gamma: f64, ridge: f64) -> Result<(RewardModel, WinnerEval)> {
    let model = fit_threads(threads, gamma, ridge)?;
    let eval = evaluate_winner_accuracy(&model, threads)?;
    Ok((model, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    /// `None` for the untruncated data.
    pub n: Option<usize>,
    pub eval: WinnerEval,
}

/// Accuracy after truncating every subthread to its first n states, for each
/// n, followed by the full-data point.
pub fn ablation_curve(
    threads: &[ThreadPair],
    n_values: &[usize],
    gamma: f64,
    ridge: f64,
) -> Result<Vec<AblationPoint>> {
    if n_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("ablate", "n values must be sorted ascending"));
    }
    if n_values.contains(&0) {
        return Err(Error::config("ablate", "n values must be positive"));
    }
    let mut out = Vec::with_capacity(n_values.len() + 1);
    for &n in n_values {
        let cut: Vec<ThreadPair> = threads
            .iter()
            .map(|t| ThreadPair {
                id: t.id.clone(),
                a: t.a.truncated(n),
                b: t.b.truncated(n),
            })
            .collect();
        let (_, eval) = fit_and_evaluate(&cut, gamma, ridge)?;
        out.push(AblationPoint { n: Some(n), eval });
    }
    let (_, eval) = fit_and_evaluate(threads, gamma, ridge)?;
    out.push(AblationPoint { n: None, eval });
    Ok(out)
}

/// Thread pairs built from a corpus, with counts of what was left out.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusThreads {
    pub threads: Vec<ThreadPair>,
    /// Threads where one side never spoke.
    pub n_unscored: usize,
    /// Threads whose two players finished level.
    pub n_tied: usize,
}

/// Encodes every dyadic thread of the corpus. Final scores are game-level;
/// tied threads are kept (the evaluator excludes them) and counted.
pub fn corpus_threads(
    corpus: &Corpus,
    variant: StateVariant,
    labels: &BTreeMap<String, StrategyLabels>,
    traces: &BTreeMap<u32, CentralityTrace>,
    tie: TieRule,
) -> Result<CorpusThreads> {
    let mut out = CorpusThreads {
        threads: Vec::new(),
        n_unscored: 0,
        n_tied: 0,
    };
    for game in &corpus.games {
        let trace = if variant.needs_graph() {
            Some(traces.get(&game.game_id).ok_or_else(|| {
                Error::invalid(format!("no centrality trace for game {}", game.game_id))
            })?)
        } else {
            None
        };
        for t in &game.threads {
            match thread_outcome(t.pair, &game.final_scores) {
                ThreadOutcome::Unscored => {
                    out.n_unscored += 1;
                    continue;
                }
                ThreadOutcome::Tied => out.n_tied += 1,
                ThreadOutcome::Winner { .. } => {}
            }
            let mut subs = Vec::with_capacity(2);
            for p in [t.pair.first(), t.pair.second()] {
                let mut states = Vec::new();
                for m in t.messages.iter().filter(|m| m.sender == p) {
                    let c = match trace {
                        Some(tr) => Some(
                            tr.at(m.abs_index)
                                .and_then(|vs| vs.get(p.index()))
                                .ok_or_else(|| {
                                    Error::invalid(format!("no snapshot for message {}", m.id()))
                                })?,
                        ),
                        None => None,
                    };
                    states.push(encode_state(variant, m, labels.get(&m.id()), c, tie)?);
                }
                subs.push(Subthread {
                    player: p.name().to_string(),
                    states,
                    final_score: f64::from(game.final_scores[&p]),
                });
            }
            if subs.iter().any(|s| s.states.is_empty()) {
                out.n_unscored += 1;
                continue;
            }
            let b = subs.pop().expect("two subthreads");
            let a = subs.pop().expect("two subthreads");
            out.threads.push(ThreadPair {
                id: format!("g{}-{}-{}", game.game_id, t.pair.first(), t.pair.second()),
                a,
                b,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub variant: StateVariant,
    pub gamma: f64,
    pub eval: WinnerEval,
}

/// Accuracy of each variant at each γ.
pub fn gamma_sweep(
    threads: &BTreeMap<StateVariant, Vec<ThreadPair>>,
    gammas: &[f64],
    ridge: f64,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (&variant, ts) in threads {
        for &gamma in gammas {
            let (_, eval) = fit_and_evaluate(ts, gamma, ridge)?;
            rows.push(EvalRow { variant, gamma, eval });
        }
    }
    Ok(rows)
}

/// Strict ordering graph-aware > simple > graph-only > random at some γ.
pub fn ordering_holds(rows: &[EvalRow], gamma: f64) -> bool {
    let acc = |v: StateVariant| {
        rows.iter()
            .find(|r| r.variant == v && r.gamma == gamma)
            .map(|r| r.eval.accuracy)
    };
    match (
        acc(StateVariant::GraphAware),
        acc(StateVariant::Simple),
        acc(StateVariant::GraphOnly),
        acc(StateVariant::RandomState),
    ) {
        (Some(ga), Some(s), Some(g), Some(r)) => ga > s && s > g && g > r,
        _ => false,
    }
}

pub fn write_eval_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "gamma", "accuracy", "threads", "correct", "ties_excluded"])?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.gamma.to_string(),
            format!("{:.6}", r.eval.accuracy),
            r.eval.n_threads.to_string(),
            r.eval.n_correct.to_string(),
            r.eval.n_ties.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(out: W, points: &[AblationPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "accuracy", "threads"])?;
    for p in points {
        w.write_record([
            p.n.map_or_else(|| "full".to_string(), |n| n.to_string()),
            format!("{:.6}", p.eval.accuracy),
            p.eval.n_threads.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_states_jsonl<W: Write>(mut out: W, threads: &[ThreadPair]) -> Result<()> {
    for t in threads {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_states_jsonl<R: BufRead>(src: R) -> Result<Vec<ThreadPair>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in src.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: ThreadPair = serde_json::from_str(&line).map_err(|e| Error::Json {
            line: i + 1,
            source: e,
        })?;
        for s in t.a.states.iter().chain(&t.b.states) {
            let d = *dim.get_or_insert(s.len());
            if s.len() != d || s.iter().any(|x| !x.is_finite()) {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("state of dimension {} or non-finite, expected {d}", s.len()),
                });
            }
        }
        if !t.a.final_score.is_finite() || !t.b.final_score.is_finite() {
            return Err(Error::Record {
                line: i + 1,
                message: "non-finite final score".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}
