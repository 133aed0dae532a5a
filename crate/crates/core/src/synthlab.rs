//! Seeded generators of instances with known ground truth.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actionstate::Strategy;
use crate::agreement::AnnotationMatrix;
use crate::corpus::{Corpus, Message, Pair, Power, Thread};
use crate::error::{Error, Result};
use crate::sbirl::{discounted_feature_map, Subthread, ThreadPair};
use crate::trustmodel::TrustObservation;

/// Independent stream for a named purpose under one seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbirlConfig {
    pub seed: u64,
    /// Number of dyadic threads (two subthreads each).
    pub n_threads: usize,
    pub dim: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Drawn uniform in [−1, 1]ᵈ when absent.
    pub theta: Option<Vec<f64>>,
}

impl Default for SbirlConfig {
    fn default() -> Self {
        SbirlConfig {
            seed: 0,
            n_threads: 250,
            dim: 8,
            sigma: 0.0,
            gamma: 0.9,
            min_len: 1,
            max_len: 12,
            theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbirlInstance {
    pub threads: Vec<ThreadPair>,
    pub theta_star: Vec<f64>,
    pub gamma: f64,
}

/// Smallest separation kept between the two sides of a pair, in both the
/// discounted return and the mean reward.
const PAIR_GAP: f64 = 1e-3;

/// States uniform in [−1, 1]ᵈ and scores `θ*ᵀμ + N(0, σ²)`.
///
/// Pairs are redrawn until the noise-free winner also has the higher mean
/// reward, so at σ = 0 the ground truth ranks every thread correctly. States
/// and noise come from separate streams: changing σ only rescales the noise.
pub fn gen_sbirl(cfg: &SbirlConfig) -> Result<SbirlInstance> {
    if cfg.dim == 0 {
        return Err(Error::config("dim", "must be at least 1"));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::config("min_len", "need 1 ≤ min_len ≤ max_len"));
    }
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::config("gamma", "must lie in [0, 1)"));
    }
    if !(cfg.sigma >= 0.0) {
        return Err(Error::config("sigma", "must be ≥ 0"));
    }
    let mut rng = stream(cfg.seed, 1);
    let mut noise = stream(cfg.seed, 2);
    let theta = match &cfg.theta {
        Some(t) if t.len() == cfg.dim => t.clone(),
        Some(t) => {
            return Err(Error::config(
                "theta",
                format!("has {} entries, dim is {}", t.len(), cfg.dim),
            ))
        }
        None => (0..cfg.dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
    };
    let dot = |s: &[f64]| s.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>();
    let draw = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let states: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..cfg.dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let f = dot(&discounted_feature_map(&states, cfg.gamma, cfg.dim));
        let mean = states.iter().map(|s| dot(s)).sum::<f64>() / len as f64;
        (states, f, mean)
    };
    let mut threads = Vec::with_capacity(cfg.n_threads);
    for i in 0..cfg.n_threads {
        let (a, b) = loop {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let df = a.1 - b.1;
            let dm = a.2 - b.2;
            if df * dm > 0.0 && df.abs() > PAIR_GAP && dm.abs() > PAIR_GAP {
                break (a, b);
            }
        };
        let za: f64 = StandardNormal.sample(&mut noise);
        let zb: f64 = StandardNormal.sample(&mut noise);
        threads.push(ThreadPair {
            id: format!("t{i:05}"),
            a: Subthread {
                player: format!("t{i:05}a"),
                states: a.0,
                final_score: a.1 + cfg.sigma * za,
            },
            b: Subthread {
                player: format!("t{i:05}b"),
                states: b.0,
                final_score: b.1 + cfg.sigma * zb,
            },
        });
    }
    Ok(SbirlInstance {
        threads,
        theta_star: theta,
        gamma: cfg.gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSpec {
    pub sensitivity: f64,
    pub specificity: f64,
}

impl AnnotatorSpec {
    pub fn symmetric(accuracy: f64) -> Self {
        AnnotatorSpec {
            sensitivity: accuracy,
            specificity: accuracy,
        }
    }

    pub fn theta(&self) -> f64 {
        0.5 * (self.sensitivity + self.specificity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    pub seed: u64,
    pub n_items: usize,
    pub prevalence: f64,
    pub annotators: Vec<AnnotatorSpec>,
}

/// Votes of every annotator on every item, plus the true labels.
pub fn gen_annotations(cfg: &AnnotationConfig) -> Result<(AnnotationMatrix, Vec<u8>)> {
    if cfg.annotators.len() < 2 {
        return Err(Error::config("annotators", "need at least two"));
    }
    let prob = |x: f64| (0.0..=1.0).contains(&x);
    if !prob(cfg.prevalence)
        || cfg
            .annotators
            .iter()
            .any(|a| !prob(a.sensitivity) || !prob(a.specificity))
    {
        return Err(Error::config("annotators", "probabilities must lie in [0, 1]"));
    }
    let mut rng = stream(cfg.seed, 3);
    let mut m = AnnotationMatrix::new();
    let mut truth = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let y = rng.random_bool(cfg.prevalence);
        truth.push(u8::from(y));
        for (j, a) in cfg.annotators.iter().enumerate() {
            let correct = rng.random_bool(if y { a.sensitivity } else { a.specificity });
            let vote = if correct { y } else { !y };
            m.add_vote(format!("item{i:05}"), format!("a{j}"), u8::from(vote))?;
        }
    }
    Ok((m, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustConfig {
    pub seed: u64,
    pub n: usize,
    pub n_games: usize,
    pub intercept: f64,
    /// True coefficients in strategy order.
    pub coefficients: [f64; 5],
    pub duration_coef: f64,
    /// Standard deviation of the game intercepts.
    pub game_sd: f64,
    /// Probability that each strategy flag is set.
    pub strategy_rates: [f64; 5],
    pub max_duration: u32,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            seed: 0,
            n: 10_000,
            n_games: 12,
            intercept: 0.5,
            coefficients: [0.0, 0.0, 0.0, 0.0, -0.2],
            duration_coef: 0.0,
            game_sd: 0.05,
            strategy_rates: [0.5; 5],
            max_duration: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustInstance {
    pub observations: Vec<TrustObservation>,
    pub game_effects: BTreeMap<u32, f64>,
}

/// Linear-probability outcomes: p = intercept + game + Σ βⱼ·flagⱼ +
/// β_d·duration, clipped to [0, 1], then compared with a uniform draw.
pub fn gen_trust(cfg: &TrustConfig) -> Result<TrustInstance> {
    if cfg.n_games == 0 {
        return Err(Error::config("n_games", "must be at least 1"));
    }
    let mut rng = stream(cfg.seed, 4);
    let game_dist = Normal::new(0.0, cfg.game_sd).map_err(|e| Error::config("game_sd", e.to_string()))?;
    let game_effects: BTreeMap<u32, f64> = (1..=cfg.n_games as u32)
        .map(|g| (g, if g == 1 { 0.0 } else { game_dist.sample(&mut rng) }))
        .collect();
    let mut observations = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let game_id = 1 + (i % cfg.n_games) as u32;
        let strategies = cfg.strategy_rates.map(|r| rng.random_bool(r.clamp(0.0, 1.0)));
        let duration = rng.random_range(0..=cfg.max_duration);
        let mut p = cfg.intercept + game_effects[&game_id] + cfg.duration_coef * f64::from(duration);
        for (b, &f) in cfg.coefficients.iter().zip(&strategies) {
            if f {
                p += b;
            }
        }
        let outcome = rng.random::<f64>() < p.clamp(0.0, 1.0);
        observations.push(TrustObservation {
            message_id: format!("g{game_id}-m{i}"),
            outcome,
            strategies,
            game_id,
            duration,
            text: phrase_text(&strategies, &mut rng),
        });
    }
    Ok(TrustInstance {
        observations,
        game_effects,
    })
}

const PHRASES: [&[&str]; 5] = [
    &[
        "I will move my army into Munich this turn",
        "my fleet is going to support Trieste next season",
        "I plan to take Belgium with my army",
    ],
    &[
        "you should move your fleet to the Black Sea",
        "can you support my army into Galicia please",
        "you need to hold Vienna against the attack",
    ],
    &[
        "France is planning to attack England next year",
        "Russia will move against Turkey very soon",
        "I think Austria has been lying to everyone here",
    ],
    &[
        "because that keeps both of our centers safe",
        "if we do this then nobody can stop us",
        "so it makes sense for both of us right now",
    ],
    &[
        "thanks so much friend I really appreciate it",
        "great to work with you again my friend",
        "hope you are having a lovely day buddy",
    ],
];

const FILLER: [&str; 4] = [
    "let me know what you think about it",
    "we can talk more about this later today",
    "the board looks quite interesting at the moment",
    "I am still thinking about the next few turns",
];

fn phrase_text<R: Rng>(flags: &[bool; 5], rng: &mut R) -> String {
    let mut parts: Vec<&str> = Strategy::ALL
        .iter()
        .filter(|s| flags[s.index()])
        .map(|s| *PHRASES[s.index()].choose(rng).expect("non-empty bank"))
        .collect();
    if parts.is_empty() {
        parts.push(FILLER.choose(rng).expect("non-empty bank"));
    }
    parts.join(". ") + "."
}

pub fn write_trust_csv<W: Write>(out: W, obs: &[TrustObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["message_id", "game_id", "duration", "outcome"];
    header.extend(Strategy::ALL.iter().map(|s| s.name()));
    header.push("text");
    w.write_record(&header)?;
    for o in obs {
        let mut rec = vec![
            o.message_id.clone(),
            o.game_id.to_string(),
            o.duration.to_string(),
            u8::from(o.outcome).to_string(),
        ];
        rec.extend(o.strategies.iter().map(|&f| u8::from(f).to_string()));
        rec.push(o.text.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trust_csv<R: std::io::Read>(src: R) -> Result<Vec<TrustObservation>> {
    let mut rdr = csv::Reader::from_reader(src);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Record {
            line,
            message: format!("bad {what}"),
        };
        if rec.len() < 10 {
            return Err(bad("column count"));
        }
        let flag = |c: usize| match rec[c].trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad("flag")),
        };
        let mut strategies = [false; 5];
        for (j, s) in strategies.iter_mut().enumerate() {
            *s = flag(4 + j)?;
        }
        out.push(TrustObservation {
            message_id: rec[0].to_string(),
            game_id: rec[1].trim().parse().map_err(|_| bad("game_id"))?,
            duration: rec[2].trim().parse().map_err(|_| bad("duration"))?,
            outcome: flag(3)?,
            strategies,
            text: rec[9].to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_games: usize,
    pub messages_per_game: usize,
    /// Share of messages released with human strategy labels.
    pub annotated_share: f64,
    /// Share of messages with a receiver judgment.
    pub perception_share: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_games: 4,
            messages_per_game: 300,
            annotated_share: 0.3,
            perception_share: 0.9,
        }
    }
}

/// Synthetic games with strategy-bearing text and human labels for a share
/// of messages.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Generating strategy flags of every message, by message id.
    pub truth: BTreeMap<String, [bool; 5]>,
    /// Message ids released as human annotations.
    pub annotated: Vec<String>,
}

pub fn gen_corpus(cfg: &CorpusConfig) -> Result<SynthCorpus> {
    if cfg.messages_per_game == 0 {
        return Err(Error::config("messages_per_game", "must be positive"));
    }
    let mut rng = stream(cfg.seed, 5);
    let mut truth = BTreeMap::new();
    let mut annotated = Vec::new();
    let mut threads = Vec::new();
    const SEASONS: [&str; 3] = ["Spring", "Fall", "Winter"];
    for g in 0..cfg.n_games {
        let game_id = g as u32 + 1;
        // players with higher skill reason more and gain centers faster
        let skill: Vec<f64> = Power::ALL.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let mut score: Vec<i32> = Power::ALL
            .iter()
            .map(|p| if *p == Power::Russia { 4 } else { 3 })
            .collect();
        let mut rel: BTreeMap<Pair, u32> = BTreeMap::new();
        let mut by_pair: BTreeMap<Pair, Vec<Message>> = BTreeMap::new();
        let per_season = (cfg.messages_per_game / 30).max(1);
        for abs in 0..cfg.messages_per_game {
            let s = rng.random_range(0..7);
            let mut r = rng.random_range(0..6);
            if r >= s {
                r += 1;
            }
            let (sender, receiver) = (Power::ALL[s], Power::ALL[r]);
            let k = skill[s];
            let rates = [0.35, 0.3, 0.2 + 0.2 * k, 0.15 + 0.5 * k, 0.55 - 0.4 * k];
            let flags = rates.map(|p| rng.random_bool(p));
            let text = phrase_text(&flags, &mut rng);
            let season_no = abs / per_season;
            if abs > 0 && abs % per_season == 0 {
                for (i, sc) in score.iter_mut().enumerate() {
                    let step = rng.random_range(-1.0..1.0) + skill[i] - 0.45;
                    *sc = (*sc + step.round() as i32).clamp(0, 18);
                }
            }
            let pair = Pair::new(sender, receiver).expect("distinct powers");
            let ri = rel.entry(pair).or_insert(0);
            let perception = rng
                .random_bool(cfg.perception_share)
                .then(|| rng.random_bool(if flags[4] { 0.85 } else { 0.95 }));
            let msg = Message {
                game_id,
                sender,
                receiver,
                text,
                sender_truth: rng.random_bool(0.95),
                receiver_perception: perception,
                game_score: score[s],
                score_delta: score[s] - score[r],
                season: SEASONS[season_no % 3].to_string(),
                year: 1901 + (season_no / 3) as i32,
                abs_index: abs as u32,
                rel_index: *ri,
            };
            *ri += 1;
            truth.insert(msg.id(), flags);
            if rng.random_bool(cfg.annotated_share) {
                annotated.push(msg.id());
            }
            by_pair.entry(pair).or_default().push(msg);
        }
        threads.extend(by_pair.into_iter().map(|(pair, messages)| Thread {
            game_id,
            pair,
            messages,
        }));
    }
    annotated.sort();
    Ok(SynthCorpus {
        corpus: Corpus::from_threads(threads)?,
        truth,
        annotated,
    })
}

impl SynthCorpus {
    /// `message_id,text,<five strategies>` for the annotated messages; read
    /// by both the annotated-text and the label readers.
    pub fn write_annotations<W: Write>(&self, out: W) -> Result<()> {
        let texts: BTreeMap<String, &str> = self
            .corpus
            .messages()
            .map(|m| (m.id(), m.text.as_str()))
            .collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["message_id", "text"];
        header.extend(Strategy::ALL.iter().map(|s| s.name()));
        w.write_record(&header)?;
        for id in &self.annotated {
            let mut rec = vec![id.clone(), texts[id].to_string()];
            rec.extend(self.truth[id].iter().map(|&f| u8::from(f).to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::pairwise_percent_agreement;

    #[test]
    fn sbirl_is_deterministic() {
        let cfg = SbirlConfig {
            n_threads: 20,
            ..Default::default()
        };
        assert_eq!(gen_sbirl(&cfg).unwrap(), gen_sbirl(&cfg).unwrap());
        let noisy = gen_sbirl(&SbirlConfig { sigma: 1.0, ..cfg.clone() }).unwrap();
        let clean = gen_sbirl(&cfg).unwrap();
        assert_eq!(noisy.threads[3].a.states, clean.threads[3].a.states);
        assert_ne!(noisy.threads[3].a.final_score, clean.threads[3].a.final_score);
    }

    #[test]
    fn perfect_annotators_agree() {
        let cfg = AnnotationConfig {
            seed: 1,
            n_items: 200,
            prevalence: 0.3,
            annotators: vec![AnnotatorSpec::symmetric(1.0); 3],
        };
        let (m, _) = gen_annotations(&cfg).unwrap();
        assert_eq!(pairwise_percent_agreement(&m), 100.0);
        let (m, truth) = gen_annotations(&AnnotationConfig { prevalence: 0.0, ..cfg }).unwrap();
        assert!(truth.iter().all(|&y| y == 0));
        assert!((0..m.n_items()).all(|i| m.item_votes(i).iter().all(|v| v.1 == 0)));
    }

    #[test]
    fn trust_rows_round_trip() {
        let inst = gen_trust(&TrustConfig {
            n: 50,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_trust_csv(&mut buf, &inst.observations).unwrap();
        assert_eq!(read_trust_csv(buf.as_slice()).unwrap(), inst.observations);
    }

    #[test]
    fn corpus_round_trips_through_dialog_lines() {
        let s = gen_corpus(&CorpusConfig {
            n_games: 2,
            messages_per_game: 80,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.corpus.n_messages(), 160);
        let mut buf = Vec::new();
        s.corpus.write_dialogs(&mut buf).unwrap();
        let back = crate::corpus::parse_dialogs(buf.as_slice()).unwrap();
        assert_eq!(back, s.corpus);
    }
}
