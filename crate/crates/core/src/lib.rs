//! Negotiation analytics for seven-player dialog games.

pub mod actionstate;
pub mod agreement;
pub mod corpus;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod sbirl;
pub mod socialgraph;
pub mod strategyclf;
pub mod synthlab;
pub mod textfeat;
pub mod trustmodel;

pub use actionstate::{ActionState, Strategy, StrategyLabels, TieRule};
pub use corpus::{Corpus, Game, Message, Pair, Power, Thread};
pub use error::{Error, Result};
pub use pipeline::{execute, run, ReportBundle, RunConfig, Subcommand};
pub use sbirl::{RewardModel, StateVariant, Subthread, ThreadPair};
pub use socialgraph::{CentralityVector, CommGraph};
pub use textfeat::{FeatureSet, SparseVector};
