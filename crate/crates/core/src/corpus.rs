//! Dialog corpus ingestion.
//!
//! The input is line-delimited JSON, one dyadic conversation per line, with
//! parallel arrays for the per-message fields. Conversations are grouped
//! into games and threads keyed by the unordered pair of powers.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfeat::{self, tokenize};

/// The seven great powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Power {
    Austria,
    England,
    France,
    Germany,
    Italy,
    Russia,
    Turkey,
}

impl Power {
    pub const ALL: [Power; 7] = [
        Power::Austria,
        Power::England,
        Power::France,
        Power::Germany,
        Power::Italy,
        Power::Russia,
        Power::Turkey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Power::Austria => "austria",
            Power::England => "england",
            Power::France => "france",
            Power::Germany => "germany",
            Power::Italy => "italy",
            Power::Russia => "russia",
            Power::Turkey => "turkey",
        }
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Power {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.trim().to_lowercase();
        Power::ALL
            .into_iter()
            .find(|p| p.name() == lower || (lower == "austria-hungary" && *p == Power::Austria))
            .ok_or_else(|| s.to_string())
    }
}

/// Unordered pair of distinct powers, stored with the smaller one first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair(Power, Power);

impl Pair {
    pub fn new(a: Power, b: Power) -> Option<Pair> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Pair(a, b)),
            std::cmp::Ordering::Greater => Some(Pair(b, a)),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn first(&self) -> Power {
        self.0
    }

    pub fn second(&self) -> Power {
        self.1
    }

    pub fn other(&self, p: Power) -> Option<Power> {
        if p == self.0 {
            Some(self.1)
        } else if p == self.1 {
            Some(self.0)
        } else {
            None
        }
    }

    pub fn contains(&self, p: Power) -> bool {
        self.0 == p || self.1 == p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub game_id: u32,
    pub sender: Power,
    pub receiver: Power,
    pub text: String,
    pub sender_truth: bool,
    pub receiver_perception: Option<bool>,
    pub game_score: i32,
    pub score_delta: i32,
    pub season: String,
    pub year: i32,
    pub abs_index: u32,
    pub rel_index: u32,
}

impl Message {
    /// Stable identifier `g<game>-m<abs_index>`.
    pub fn id(&self) -> String {
        message_id(self.game_id, self.abs_index)
    }
}

pub fn message_id(game_id: u32, abs_index: u32) -> String {
    format!("g{game_id}-m{abs_index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub game_id: u32,
    pub pair: Pair,
    pub messages: Vec<Message>,
}

impl Thread {
    /// Final score of `player` within this thread: the score on their last
    /// message here.
    pub fn last_score(&self, player: Power) -> Option<i32> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.sender == player)
            .map(|m| m.game_score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub game_id: u32,
    pub threads: Vec<Thread>,
    pub final_scores: BTreeMap<Power, i32>,
    pub winner: Option<Power>,
}

impl Game {
    fn new(game_id: u32, threads: Vec<Thread>) -> Self {
        let mut g = Game {
            game_id,
            threads,
            final_scores: BTreeMap::new(),
            winner: None,
        };
        g.final_scores = final_scores(&g);
        g.winner = unique_max(&g.final_scores);
        g
    }

    pub fn players(&self) -> [Power; 7] {
        Power::ALL
    }

    /// All messages of the game ordered by `abs_index`.
    pub fn messages(&self) -> Vec<&Message> {
        let mut all: Vec<&Message> = self.threads.iter().flat_map(|t| &t.messages).collect();
        all.sort_by_key(|m| (m.abs_index, m.rel_index, m.sender));
        all
    }

    pub fn n_messages(&self) -> usize {
        self.threads.iter().map(|t| t.messages.len()).sum()
    }
}

fn unique_max(scores: &BTreeMap<Power, i32>) -> Option<Power> {
    let best = *scores.values().max()?;
    let mut it = scores.iter().filter(|(_, &s)| s == best);
    let (p, _) = it.next()?;
    it.next().is_none().then_some(*p)
}

/// Each player's score on their last sent message in the game.
pub fn final_scores(game: &Game) -> BTreeMap<Power, i32> {
    let mut last: HashMap<Power, (u32, u32, i32)> = HashMap::new();
    for t in &game.threads {
        for m in &t.messages {
            let key = (m.abs_index, m.rel_index, m.game_score);
            let e = last.entry(m.sender).or_insert(key);
            if (key.0, key.1) >= (e.0, e.1) {
                *e = key;
            }
        }
    }
    last.into_iter().map(|(p, (_, _, s))| (p, s)).collect()
}

/// Outcome of comparing the two members of a thread by final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadOutcome {
    Winner { winner: Power, loser: Power },
    Tied,
    /// One of the pair never sent a message.
    Unscored,
}

pub fn thread_outcome(pair: Pair, scores: &BTreeMap<Power, i32>) -> ThreadOutcome {
    match (scores.get(&pair.first()), scores.get(&pair.second())) {
        (Some(a), Some(b)) if a > b => ThreadOutcome::Winner {
            winner: pair.first(),
            loser: pair.second(),
        },
        (Some(a), Some(b)) if a < b => ThreadOutcome::Winner {
            winner: pair.second(),
            loser: pair.first(),
        },
        (Some(_), Some(_)) => ThreadOutcome::Tied,
        _ => ThreadOutcome::Unscored,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub games: Vec<Game>,
}

impl Corpus {
    pub fn n_messages(&self) -> usize {
        self.games.iter().map(Game::n_messages).sum()
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.games
            .iter()
            .flat_map(|g| g.threads.iter().flat_map(|t| t.messages.iter()))
    }

    pub fn threads(&self) -> impl Iterator<Item = (&Game, &Thread)> {
        self.games
            .iter()
            .flat_map(|g| g.threads.iter().map(move |t| (g, t)))
    }

    pub fn from_threads(threads: Vec<Thread>) -> Result<Corpus> {
        let mut by_key: BTreeMap<(u32, Pair), Vec<Message>> = BTreeMap::new();
        for t in threads {
            by_key.entry((t.game_id, t.pair)).or_default().extend(t.messages);
        }
        let mut games: BTreeMap<u32, Vec<Thread>> = BTreeMap::new();
        for ((game_id, pair), mut messages) in by_key {
            messages.sort_by_key(|m| m.rel_index);
            if let Some(w) = messages.windows(2).find(|w| w[0].rel_index >= w[1].rel_index) {
                return Err(Error::invalid(format!(
                    "game {game_id}, thread {}-{}: duplicate relative index {}",
                    pair.first(),
                    pair.second(),
                    w[1].rel_index
                )));
            }
            games.entry(game_id).or_default().push(Thread {
                game_id,
                pair,
                messages,
            });
        }
        Ok(Corpus {
            games: games
                .into_iter()
                .map(|(id, threads)| Game::new(id, threads))
                .collect(),
        })
    }

    /// Writes one dialog record per thread; `parse_dialogs` reads it back to an
    /// identical corpus.
    pub fn write_dialogs<W: Write>(&self, mut out: W) -> Result<()> {
        for (_, t) in self.threads() {
            let rec = DialogRecord::from_thread(t);
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Integer that may be encoded as a JSON number or a numeric string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
struct IntLike(i64);

impl<'de> Deserialize<'de> for IntLike {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(IntLike(i)),
            Raw::Float(f) if f.fract() == 0.0 => Ok(IntLike(f as i64)),
            Raw::Float(f) => Err(de::Error::custom(format!("non-integer {f}"))),
            Raw::Str(s) => s
                .trim()
                .parse()
                .map(IntLike)
                .map_err(|_| de::Error::custom(format!("not an integer: {s:?}"))),
        }
    }
}

/// A truth label that may be a boolean, a boolean string, or the
/// unannotated marker.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Perception(Option<bool>);

const NO_ANNOTATION: &str = "NOANNOTATION";

impl Serialize for Perception {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(b) => s.serialize_bool(b),
            None => s.serialize_str(NO_ANNOTATION),
        }
    }
}

impl<'de> Deserialize<'de> for Perception {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bool(bool),
            Str(String),
            Null(()),
        }
        match Raw::deserialize(d)? {
            Raw::Bool(b) => Ok(Perception(Some(b))),
            Raw::Null(()) => Ok(Perception(None)),
            Raw::Str(s) => match s.trim().to_lowercase().as_str() {
                "true" => Ok(Perception(Some(true))),
                "false" => Ok(Perception(Some(false))),
                "noannotation" | "" => Ok(Perception(None)),
                other => Err(de::Error::custom(format!("bad truth label {other:?}"))),
            },
        }
    }
}

/// On-disk dialog record: one conversation, parallel arrays.
#[derive(Debug, Serialize, Deserialize)]
struct DialogRecord {
    messages: Vec<String>,
    sender_labels: Vec<Perception>,
    receiver_labels: Vec<Perception>,
    speakers: Vec<String>,
    receivers: Vec<String>,
    absolute_message_index: Vec<IntLike>,
    relative_message_index: Vec<IntLike>,
    seasons: Vec<String>,
    years: Vec<IntLike>,
    game_score: Vec<IntLike>,
    game_score_delta: Vec<IntLike>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    players: Vec<String>,
    game_id: IntLike,
}

impl DialogRecord {
    fn from_thread(t: &Thread) -> Self {
        let ms = &t.messages;
        DialogRecord {
            messages: ms.iter().map(|m| m.text.clone()).collect(),
            sender_labels: ms.iter().map(|m| Perception(Some(m.sender_truth))).collect(),
            receiver_labels: ms.iter().map(|m| Perception(m.receiver_perception)).collect(),
            speakers: ms.iter().map(|m| m.sender.name().to_string()).collect(),
            receivers: ms.iter().map(|m| m.receiver.name().to_string()).collect(),
            absolute_message_index: ms.iter().map(|m| IntLike(m.abs_index.into())).collect(),
            relative_message_index: ms.iter().map(|m| IntLike(m.rel_index.into())).collect(),
            seasons: ms.iter().map(|m| m.season.clone()).collect(),
            years: ms.iter().map(|m| IntLike(m.year.into())).collect(),
            game_score: ms.iter().map(|m| IntLike(m.game_score.into())).collect(),
            game_score_delta: ms.iter().map(|m| IntLike(m.score_delta.into())).collect(),
            players: vec![t.pair.first().name().into(), t.pair.second().name().into()],
            game_id: IntLike(t.game_id.into()),
        }
    }

    fn into_messages(self, line: usize) -> Result<Vec<Message>> {
        let n = self.messages.len();
        let check = |field: &'static str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    line,
                    field,
                    expected: n,
                    found: len,
                })
            }
        };
        check("sender_labels", self.sender_labels.len())?;
        check("receiver_labels", self.receiver_labels.len())?;
        check("speakers", self.speakers.len())?;
        check("receivers", self.receivers.len())?;
        check("absolute_message_index", self.absolute_message_index.len())?;
        check("relative_message_index", self.relative_message_index.len())?;
        check("seasons", self.seasons.len())?;
        check("years", self.years.len())?;
        check("game_score", self.game_score.len())?;
        check("game_score_delta", self.game_score_delta.len())?;

        let power = |s: &str| {
            s.parse::<Power>()
                .map_err(|value| Error::UnknownPower { line, value })
        };
        let to_u32 = |field: &str, v: i64| {
            u32::try_from(v).map_err(|_| Error::Record {
                line,
                message: format!("{field} out of range: {v}"),
            })
        };
        let to_i32 = |field: &str, v: i64| {
            i32::try_from(v).map_err(|_| Error::Record {
                line,
                message: format!("{field} out of range: {v}"),
            })
        };
        let game_id = to_u32("game_id", self.game_id.0)?;

        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let sender = power(&self.speakers[i])?;
            let receiver = power(&self.receivers[i])?;
            if sender == receiver {
                return Err(Error::Record {
                    line,
                    message: format!("message {i}: sender equals receiver ({sender})"),
                });
            }
            let sender_truth = self.sender_labels[i].0.ok_or_else(|| Error::Record {
                line,
                message: format!("message {i}: missing sender label"),
            })?;
            out.push(Message {
                game_id,
                sender,
                receiver,
                text: self.messages[i].clone(),
                sender_truth,
                receiver_perception: self.receiver_labels[i].0,
                game_score: to_i32("game_score", self.game_score[i].0)?,
                score_delta: to_i32("game_score_delta", self.game_score_delta[i].0)?,
                season: self.seasons[i].clone(),
                year: to_i32("years", self.years[i].0)?,
                abs_index: to_u32("absolute_message_index", self.absolute_message_index[i].0)?,
                rel_index: to_u32("relative_message_index", self.relative_message_index[i].0)?,
            });
        }
        if let Some(w) = out.windows(2).find(|w| w[0].abs_index >= w[1].abs_index) {
            return Err(Error::Record {
                line,
                message: format!("absolute_message_index not increasing at {}", w[1].abs_index),
            });
        }
        Ok(out)
    }
}

/// Parses line-delimited dialog records into a corpus. Blank lines are skipped.
pub fn parse_dialogs<R: BufRead>(source: R) -> Result<Corpus> {
    let mut threads = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DialogRecord =
            serde_json::from_str(&line).map_err(|source| Error::Json { line: line_no, source })?;
        let messages = rec.into_messages(line_no)?;
        let mut by_pair: BTreeMap<Pair, Vec<Message>> = BTreeMap::new();
        for m in messages {
            // sender != receiver was checked above
            let pair = Pair::new(m.sender, m.receiver).unwrap();
            by_pair.entry(pair).or_default().push(m);
        }
        for (pair, messages) in by_pair {
            threads.push(Thread {
                game_id: messages[0].game_id,
                pair,
                messages,
            });
        }
    }
    Corpus::from_threads(threads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub message_ref: String,
    pub text: String,
    pub token_count: usize,
}

/// Minimum whitespace tokens for a sentence to be kept.
pub const MIN_SENTENCE_TOKENS: usize = 5;

/// Splits on `.`, `!` and `?`, keeping fragments with at least five tokens.
pub fn segment_and_filter(msg: &Message) -> Vec<Sentence> {
    segment_text(&msg.text)
        .into_iter()
        .map(|(text, token_count)| Sentence {
            message_ref: msg.id(),
            text,
            token_count,
        })
        .collect()
}

fn segment_text(text: &str) -> Vec<(String, usize)> {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .filter_map(|frag| {
            let n = tokenize(frag).len();
            (n >= MIN_SENTENCE_TOKENS).then(|| (frag.to_string(), n))
        })
        .collect()
}

/// Similarity grouping of sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupGroups {
    /// Group id of each input sentence. Ids are assigned in order of each
    /// group's first member.
    pub group_of: Vec<usize>,
    /// Members of each group in input order; the first is the representative.
    pub groups: Vec<Vec<usize>>,
}

impl DedupGroups {
    pub fn representatives(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g[0]).collect()
    }
}

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.8;

/// Groups sentences whose TF-IDF cosine similarity exceeds `threshold`,
/// closing transitively.
pub fn dedup_sentences(sentences: &[Sentence], threshold: f64) -> DedupGroups {
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let vocab = textfeat::build_vocabulary(&texts, 1);
    let vecs: Vec<_> = texts
        .iter()
        .map(|t| textfeat::tfidf_vectorize(t, &vocab, texts.len()))
        .collect();

    // inverted index: term -> sentences containing it
    let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); vocab.len()];
    for (i, v) in vecs.iter().enumerate() {
        for &(t, w) in v.entries() {
            postings[t].push((i, w));
        }
    }

    let mut uf = UnionFind::new(sentences.len());
    let mut acc: HashMap<usize, f64> = HashMap::new();
    for (i, v) in vecs.iter().enumerate() {
        acc.clear();
        for &(t, w) in v.entries() {
            for &(j, wj) in &postings[t] {
                if j > i {
                    *acc.entry(j).or_insert(0.0) += w * wj;
                }
            }
        }
        for (&j, &sim) in &acc {
            if sim > threshold {
                uf.union(i, j);
            }
        }
    }

    let mut root_to_group: HashMap<usize, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of = Vec::with_capacity(sentences.len());
    for i in 0..sentences.len() {
        let root = uf.find(i);
        let g = *root_to_group.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
        group_of.push(g);
    }
    DedupGroups { group_of, groups }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Writes the sentence table: `sentence_id,message_ref,text,token_count,group_id`.
pub fn write_sentences<W: Write>(out: W, sentences: &[Sentence], groups: &DedupGroups) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sentence_id", "message_ref", "text", "token_count", "group_id"])?;
    for (i, s) in sentences.iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.message_ref.clone(),
            s.text.clone(),
            s.token_count.to_string(),
            groups.group_of[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Group representatives whose message the sender marked truthful: the pool
/// annotation samples are drawn from.
pub fn annotation_pool<'a>(corpus: &Corpus, sentences: &'a [Sentence], groups: &DedupGroups) -> Vec<(usize, &'a Sentence)> {
    let truthful: std::collections::HashSet<String> =
        corpus.messages().filter(|m| m.sender_truth).map(Message::id).collect();
    groups
        .groups
        .iter()
        .map(|g| g[0])
        .filter(|&i| truthful.contains(&sentences[i].message_ref))
        .map(|i| (i, &sentences[i]))
        .collect()
}
