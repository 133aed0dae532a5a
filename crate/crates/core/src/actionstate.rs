//! Strategy labels and the mutually exclusive per-message action state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// The five negotiation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SpeakerMove,
    RecipientMove,
    OtherMove,
    Reasoning,
    Friendliness,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SpeakerMove,
        Strategy::RecipientMove,
        Strategy::OtherMove,
        Strategy::Reasoning,
        Strategy::Friendliness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SpeakerMove => "speaker_move",
            Strategy::RecipientMove => "recipient_move",
            Strategy::OtherMove => "other_move",
            Strategy::Reasoning => "reasoning",
            Strategy::Friendliness => "friendliness",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Predicted,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Human => "human",
            Provenance::Predicted => "predicted",
        }
    }
}

/// Five binary strategy flags for one message, indexed by [`Strategy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyLabels {
    pub flags: [bool; 5],
    pub provenance: Provenance,
    /// Classifier probabilities, when the labels came from (or were checked
    /// against) a model.
    pub probabilities: Option<[f64; 5]>,
}

impl StrategyLabels {
    pub fn human(flags: [bool; 5]) -> Self {
        StrategyLabels {
            flags,
            provenance: Provenance::Human,
            probabilities: None,
        }
    }

    pub fn get(&self, s: Strategy) -> bool {
        self.flags[s.index()]
    }

    /// Union of the speaker's and recipient's move flags.
    pub fn game_move(&self) -> bool {
        self.get(Strategy::SpeakerMove) || self.get(Strategy::RecipientMove)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionState {
    /// Reasoning, game moves, other players' moves.
    Group1,
    /// Friendliness.
    Group2,
}

impl ActionState {
    pub fn name(self) -> &'static str {
        match self {
            ActionState::Group1 => "group1",
            ActionState::Group2 => "group2",
        }
    }
}

/// How equal evidence for both groups is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieRule {
    /// The corpus-level majority state.
    Majority(ActionState),
    AlwaysGroup1,
}

impl Default for TieRule {
    fn default() -> Self {
        TieRule::Majority(ActionState::Group1)
    }
}

impl TieRule {
    /// Majority rule whose state is the most frequent one among untied
    /// messages; Group1 when the counts are equal.
    pub fn corpus_majority<'a>(labels: impl IntoIterator<Item = &'a StrategyLabels>) -> TieRule {
        let (mut g1, mut g2) = (0usize, 0usize);
        for l in labels {
            let (a, b) = evidence(l);
            match a.cmp(&b) {
                std::cmp::Ordering::Greater => g1 += 1,
                std::cmp::Ordering::Less => g2 += 1,
                std::cmp::Ordering::Equal => {}
            }
        }
        TieRule::Majority(if g2 > g1 {
            ActionState::Group2
        } else {
            ActionState::Group1
        })
    }

    fn resolve(self) -> ActionState {
        match self {
            TieRule::Majority(s) => s,
            TieRule::AlwaysGroup1 => ActionState::Group1,
        }
    }
}

fn evidence(l: &StrategyLabels) -> (u8, u8) {
    let g1 = u8::from(l.get(Strategy::Reasoning))
        + u8::from(l.game_move())
        + u8::from(l.get(Strategy::OtherMove));
    (g1, u8::from(l.get(Strategy::Friendliness)))
}

pub fn derive_action_state(l: &StrategyLabels, tie: TieRule) -> ActionState {
    let (g1, g2) = evidence(l);
    match g1.cmp(&g2) {
        std::cmp::Ordering::Greater => ActionState::Group1,
        std::cmp::Ordering::Less => ActionState::Group2,
        std::cmp::Ordering::Equal => tie.resolve(),
    }
}

/// Label columns used in the correlation diagnostic.
pub const CORRELATION_COLUMNS: [&str; 6] = [
    "speaker_move",
    "recipient_move",
    "other_move",
    "reasoning",
    "friendliness",
    "game_move",
];

fn column(l: &StrategyLabels, c: usize) -> f64 {
    let b = if c < 5 { l.flags[c] } else { l.game_move() };
    f64::from(u8::from(b))
}

/// Pairwise Pearson correlations with two-sided p-values. Entries involving
/// a constant column are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
    pub n: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.r[i][j]
    }

    /// True when every Group1 pair correlates positively and every
    /// Group1–Group2 pair negatively.
    pub fn matches_group_pattern(&self) -> bool {
        let group1 = ["reasoning", "game_move", "other_move"];
        let within = group1.iter().enumerate().all(|(i, a)| {
            group1[i + 1..]
                .iter()
                .all(|b| self.get(a, b).is_some_and(|r| r > 0.0))
        });
        let across = group1
            .iter()
            .all(|a| self.get(a, "friendliness").is_some_and(|r| r < 0.0));
        within && across
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a Pearson r via the t approximation with n − 2 df.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

pub fn correlation_matrix(labels: &[StrategyLabels]) -> Result<CorrelationMatrix> {
    let n = labels.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 messages, got {n}"
        )));
    }
    let cols: Vec<Vec<f64>> = (0..CORRELATION_COLUMNS.len())
        .map(|c| labels.iter().map(|l| column(l, c)).collect())
        .collect();
    let k = cols.len();
    let mut r = vec![vec![None; k]; k];
    let mut p = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            if let Some(v) = pearson(&cols[i], &cols[j]) {
                let v = if i == j { 1.0 } else { v };
                r[i][j] = Some(v);
                r[j][i] = Some(v);
                let pv = pearson_p_value(v, n);
                p[i][j] = Some(pv);
                p[j][i] = Some(pv);
            }
        }
    }
    Ok(CorrelationMatrix {
        names: CORRELATION_COLUMNS.iter().map(|s| s.to_string()).collect(),
        r,
        p,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(f: [u8; 5]) -> StrategyLabels {
        StrategyLabels::human(f.map(|x| x == 1))
    }

    #[test]
    fn action_state_examples() {
        let tie = TieRule::default();
        assert_eq!(derive_action_state(&labels([0, 0, 0, 1, 0]), tie), ActionState::Group1);
        assert_eq!(derive_action_state(&labels([0, 0, 0, 0, 1]), tie), ActionState::Group2);
        assert_eq!(derive_action_state(&labels([0, 0, 0, 1, 1]), tie), ActionState::Group1);
        assert_eq!(
            derive_action_state(&labels([0, 0, 0, 1, 1]), TieRule::Majority(ActionState::Group2)),
            ActionState::Group2
        );
    }

    #[test]
    fn game_move_is_a_union() {
        // speaker + recipient count once: 1 vs friendliness 1 is a tie
        let l = labels([1, 1, 0, 0, 1]);
        assert_eq!(
            derive_action_state(&l, TieRule::Majority(ActionState::Group2)),
            ActionState::Group2
        );
    }

    #[test]
    fn corpus_majority_rule() {
        let ls = [labels([0, 0, 0, 0, 1]), labels([0, 0, 0, 0, 1]), labels([0, 0, 0, 1, 0])];
        assert_eq!(
            TieRule::corpus_majority(&ls),
            TieRule::Majority(ActionState::Group2)
        );
    }

    #[test]
    fn identical_and_complementary_columns() {
        let ls = [
            labels([1, 1, 0, 1, 0]),
            labels([0, 0, 1, 0, 1]),
            labels([1, 1, 0, 1, 0]),
            labels([0, 0, 1, 0, 1]),
        ];
        let c = correlation_matrix(&ls).unwrap();
        assert!((c.get("speaker_move", "recipient_move").unwrap() - 1.0).abs() < 1e-12);
        assert!((c.get("reasoning", "friendliness").unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(c.p[0][1], Some(0.0));
    }

    #[test]
    fn constant_column_is_flagged() {
        let ls = [labels([1, 0, 0, 1, 0]), labels([0, 0, 0, 0, 1]), labels([1, 0, 0, 0, 1])];
        let c = correlation_matrix(&ls).unwrap();
        assert_eq!(c.get("recipient_move", "reasoning"), None);
        assert!(correlation_matrix(&ls[..2]).is_err());
    }

    #[test]
    fn p_value_reference() {
        // frozen from an independent t-distribution implementation
        let p = pearson_p_value(0.5, 12);
        assert!((p - 0.09785461425781246).abs() < 1e-10, "{p}");
    }
}
