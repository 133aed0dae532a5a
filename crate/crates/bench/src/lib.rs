//! Deterministic workloads shared by the benchmarks.

use parley_core::socialgraph::CommGraph;
use parley_core::strategyclf::AnnotatedText;
use parley_core::synthlab::{gen_corpus, gen_sbirl, gen_trust, CorpusConfig, SbirlConfig, TrustConfig};
use parley_core::trustmodel::TrustObservation;
use parley_core::{Game, ThreadPair};

/// Seven-player graph with every ordered pair weighted.
pub fn dense_graph() -> CommGraph {
    let w = (0..7)
        .map(|i| (0..7).map(|j| if i == j { 0.0 } else { ((i * 7 + j) % 5 + 1) as f64 }).collect())
        .collect();
    CommGraph::from_weights(w)
}

pub fn sbirl_threads(n_threads: usize) -> Vec<ThreadPair> {
    gen_sbirl(&SbirlConfig { seed: 1, n_threads, ..Default::default() })
        .expect("valid config")
        .threads
}

pub fn game(messages: usize) -> Game {
    gen_corpus(&CorpusConfig { seed: 1, n_games: 1, messages_per_game: messages, ..Default::default() })
        .expect("valid config")
        .corpus
        .games
        .remove(0)
}

pub fn trust_observations(n: usize) -> Vec<TrustObservation> {
    gen_trust(&TrustConfig { seed: 1, n, ..Default::default() })
        .expect("valid config")
        .observations
}

/// Synthetic trust texts labeled with their generating strategies.
pub fn annotated_texts(n: usize) -> Vec<AnnotatedText> {
    trust_observations(n)
        .into_iter()
        .map(|o| AnnotatedText {
            text: o.text,
            message_ref: Some(o.message_id),
            labels: o.strategies.map(Some),
        })
        .collect()
}
