//! Subcommand orchestration, report bundles and run manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actionstate::{correlation_matrix, derive_action_state, StrategyLabels, TieRule};
use crate::agreement::{
    fit_annotator_model, quality_gate, read_votes_csv, write_agreement_csv, write_annotator_csv,
    write_votes_csv, EmOptions,
};
use crate::corpus::{annotation_pool, 
    dedup_sentences, parse_dialogs, segment_and_filter, write_sentences, Corpus, Power,
};
use crate::error::{Error, Result};
use crate::sbirl::{
    ablation_curve, corpus_threads, fit_threads, gamma_sweep, read_states_jsonl, write_ablation_csv,
    write_eval_csv, write_states_jsonl, AblationPoint, StateVariant, ThreadPair, GAMMA_SWEEP,
};
use crate::socialgraph::{accumulate, centrality_trace, write_edge_list_csv, write_trace_csv, CentralityTrace};
use crate::strategyclf::{
    coefficient_attributions, cross_validate, cross_validate_baselines, read_annotated_texts,
    read_labels, train_strategy_models, weak_label_corpus, write_cv_report, write_weak_labels,
    AnnotatedText, BernoulliNb, LogisticRegression,
};
use crate::synthlab::{
    gen_annotations, gen_corpus, gen_sbirl, gen_trust, write_trust_csv, read_trust_csv,
    AnnotationConfig, AnnotatorSpec, CorpusConfig, SbirlConfig, TrustConfig,
};
use crate::textfeat::{write_column_manifest, write_triplets, FeatureSet, FeatureSpace, LexiconSpec};
use crate::trustmodel::{
    fit_fixed_effects, observations, trust_ablation, write_ablation_grid_csv, write_coefficients_csv,
    CoefficientReport, TermBlock, TrustClassifierConfig, TrustObservation,
};
use crate::actionstate::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Ingest,
    Agree,
    Features,
    Train,
    Label,
    Actions,
    Graph,
    Sbirl,
    Ablate,
    Trust,
    Synth,
}

impl Subcommand {
    pub const ALL: [Subcommand; 11] = [
        Subcommand::Ingest,
        Subcommand::Agree,
        Subcommand::Features,
        Subcommand::Train,
        Subcommand::Label,
        Subcommand::Actions,
        Subcommand::Graph,
        Subcommand::Sbirl,
        Subcommand::Ablate,
        Subcommand::Trust,
        Subcommand::Synth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Ingest => "ingest",
            Subcommand::Agree => "agree",
            Subcommand::Features => "features",
            Subcommand::Train => "train",
            Subcommand::Label => "label",
            Subcommand::Actions => "actions",
            Subcommand::Graph => "graph",
            Subcommand::Sbirl => "sbirl",
            Subcommand::Ablate => "ablate",
            Subcommand::Trust => "trust",
            Subcommand::Synth => "synth",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("subcommand", format!("unknown subcommand {s:?}")))
    }
}

/// How ties between the two action-state groups are broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieChoice {
    /// Corpus-level majority state.
    Majority,
    Group1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub sigma: f64,
    pub n_threads: usize,
    pub dim: usize,
    pub n_games: usize,
    pub messages_per_game: usize,
    pub n_items: usize,
    pub prevalence: f64,
    pub annotator_accuracies: Vec<f64>,
    pub trust_n: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            sigma: 0.0,
            n_threads: 250,
            dim: 8,
            n_games: 4,
            messages_per_game: 300,
            n_items: 1000,
            prevalence: 0.3,
            annotator_accuracies: vec![0.95, 0.85, 0.75, 0.65, 0.55],
            trust_n: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dialog file, or a directory of `*.jsonl` dialog files.
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub k: usize,
    pub lambda: f64,
    pub class_weighted: bool,
    pub min_df: usize,
    pub feature_set: FeatureSet,
    /// Feature sets compared by `train`.
    pub feature_sets: Vec<FeatureSet>,
    pub lexicon: Option<PathBuf>,
    pub votes: Option<PathBuf>,
    /// Label name for vote rows without a strategy column.
    pub default_label: String,
    pub annotations: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub states: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub dedup_threshold: f64,
    pub supermajority: f64,
    pub gamma: f64,
    pub gammas: Vec<f64>,
    pub ridge: f64,
    pub variants: Vec<StateVariant>,
    pub ablate: Vec<usize>,
    pub tie_rule: TieChoice,
    pub trust_ablation: bool,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out_dir: PathBuf::from("parley-out"),
            seed: 0,
            k: crate::strategyclf::DEFAULT_K,
            lambda: crate::strategyclf::DEFAULT_LAMBDA,
            class_weighted: true,
            min_df: 2,
            feature_set: FeatureSet::TfidfDiscursive,
            feature_sets: FeatureSet::ALL.to_vec(),
            lexicon: None,
            votes: None,
            default_label: "label".into(),
            annotations: None,
            labels: None,
            states: None,
            observations: None,
            dedup_threshold: crate::corpus::DEFAULT_DEDUP_THRESHOLD,
            supermajority: crate::agreement::DEFAULT_SUPERMAJORITY,
            gamma: crate::sbirl::DEFAULT_GAMMA,
            gammas: GAMMA_SWEEP.to_vec(),
            ridge: 0.0,
            variants: StateVariant::ALL.to_vec(),
            ablate: Vec::new(),
            tie_rule: TieChoice::Majority,
            trust_ablation: true,
            synth: SynthSection::default(),
        }
    }
}

/// n values used by `ablate` when none are given.
pub const DEFAULT_ABLATION: [usize; 12] = [1, 2, 3, 5, 10, 15, 20, 25, 30, 40, 50, 60];

impl RunConfig {
    /// Checks value ranges; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is outside [0, 1]")))
            }
        };
        if self.k < 2 {
            return Err(Error::config("k", "needs at least 2 folds"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("lambda", "must be positive"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::config("ridge", "must be ≥ 0"));
        }
        unit("dedup_threshold", self.dedup_threshold)?;
        unit("supermajority", self.supermajority)?;
        for &g in self.gammas.iter().chain([&self.gamma]) {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::config("gamma", format!("{g} is outside [0, 1)")));
            }
        }
        if self.ablate.contains(&0) || self.ablate.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("ablate", "values must be positive and strictly ascending"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        if self.feature_sets.is_empty() {
            return Err(Error::config("feature_sets", "at least one feature set is required"));
        }
        if !(self.synth.sigma >= 0.0) {
            return Err(Error::config("synth.sigma", "must be ≥ 0"));
        }
        unit("synth.prevalence", self.synth.prevalence)?;
        for &a in &self.synth.annotator_accuracies {
            unit("synth.annotator_accuracies", a)?;
        }
        Ok(())
    }

    fn tie(&self, labels: &BTreeMap<String, StrategyLabels>) -> TieRule {
        match self.tie_rule {
            TieChoice::Majority => TieRule::corpus_majority(labels.values()),
            TieChoice::Group1 => TieRule::AlwaysGroup1,
        }
    }

    fn lexicon_spec(&self) -> Result<LexiconSpec> {
        match &self.lexicon {
            Some(p) => LexiconSpec::parse(&read_to_string(p)?),
            None => Ok(LexiconSpec::starter()),
        }
    }
}

impl RunConfig {
    /// Builds a config from a self-describing value such as parsed TOML.
    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::config(config_field(&e.to_string()), e.to_string()))
    }
}

fn config_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

/// Named tables and charts produced by one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportBundle {
    pub files: BTreeMap<String, Vec<u8>>,
    /// Extra facts recorded in the manifest.
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl ReportBundle {
    fn add<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.insert(name.to_string(), buf);
        Ok(())
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.notes
            .insert(key.to_string(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::config(field, "this subcommand needs it"))
}

/// Reads a dialog file, or every `*.jsonl` file of a directory in name
/// order, into one corpus.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut fs: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        fs.sort();
        if fs.is_empty() {
            return Err(Error::MissingInput(path.join("*.jsonl")));
        }
        fs
    } else {
        vec![path.to_path_buf()]
    };
    let mut threads = Vec::new();
    for f in files {
        let c = parse_dialogs(open(&f)?).map_err(|e| match e {
            Error::MissingInput(_) => e,
            other => Error::invalid(format!("{}: {other}", f.display())),
        })?;
        threads.extend(c.games.into_iter().flat_map(|g| g.threads));
    }
    Corpus::from_threads(threads)
}

fn corpus(cfg: &RunConfig) -> Result<Corpus> {
    load_corpus(required(&cfg.dataset, "dataset")?)
}

/// Runs one subcommand and collects its reports.
pub fn run(sub: Subcommand, cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let mut b = ReportBundle::default();
    match sub {
        Subcommand::Ingest => ingest(cfg, &mut b)?,
        Subcommand::Agree => agree(cfg, &mut b)?,
        Subcommand::Features => features(cfg, &mut b)?,
        Subcommand::Train => train(cfg, &mut b)?,
        Subcommand::Label => label(cfg, &mut b)?,
        Subcommand::Actions => actions(cfg, &mut b)?,
        Subcommand::Graph => graph(cfg, &mut b)?,
        Subcommand::Sbirl => sbirl(cfg, &mut b, false)?,
        Subcommand::Ablate => sbirl(cfg, &mut b, true)?,
        Subcommand::Trust => trust(cfg, &mut b)?,
        Subcommand::Synth => synth(cfg, &mut b)?,
    }
    Ok(b)
}

fn ingest(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let c = corpus(cfg)?;
    let sentences: Vec<_> = c.messages().flat_map(segment_and_filter).collect();
    let groups = dedup_sentences(&sentences, cfg.dedup_threshold);
    b.add("sentences.csv", |w| write_sentences(w, &sentences, &groups))?;
    let pool = annotation_pool(&c, &sentences, &groups);
    b.add("annotation_pool.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["sentence_id", "message_ref", "text"])?;
        for (i, s) in &pool {
            wr.write_record([i.to_string(), s.message_ref.clone(), s.text.clone()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    b.note("annotation_pool", pool.len());
    b.add("games.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["game_id", "threads", "messages", "winner"];
        header.extend(Power::ALL.iter().map(|p| p.name()));
        wr.write_record(&header)?;
        for g in &c.games {
            let mut rec = vec![
                g.game_id.to_string(),
                g.threads.len().to_string(),
                g.n_messages().to_string(),
                g.winner.map_or_else(String::new, |p| p.name().to_string()),
            ];
            rec.extend(
                Power::ALL
                    .iter()
                    .map(|p| g.final_scores.get(p).map_or_else(String::new, i32::to_string)),
            );
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    b.note("games", c.games.len());
    b.note("messages", c.n_messages());
    b.note("sentences", sentences.len());
    b.note("sentence_groups", groups.groups.len());
    Ok(())
}

fn agree(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let matrices = read_votes_csv(open(required(&cfg.votes, "votes")?)?, &cfg.default_label)?;
    let opts = EmOptions {
        supermajority_bar: cfg.supermajority,
        ..Default::default()
    };
    let reports = matrices
        .iter()
        .map(|(l, m)| Ok((l.clone(), fit_annotator_model(m, opts)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    b.add("agreement.csv", |w| write_agreement_csv(w, &reports))?;
    b.add("annotators.csv", |w| write_annotator_csv(w, &reports))?;
    b.note("gate", quality_gate(&reports));
    Ok(())
}

fn features(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let c = corpus(cfg)?;
    let msgs: Vec<_> = c.messages().collect();
    let docs: Vec<&str> = msgs.iter().map(|m| m.text.as_str()).collect();
    let space = FeatureSpace::fit(&docs, cfg.min_df, cfg.lexicon_spec()?);
    let rows: Vec<_> = docs.iter().map(|d| space.vectorize(cfg.feature_set, d)).collect();
    b.add("features.csv", |w| write_triplets(w, &rows))?;
    b.add("columns.csv", |w| write_column_manifest(w, &space.feature_names(cfg.feature_set)))?;
    b.add("rows.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["row", "message_id"])?;
        for (i, m) in msgs.iter().enumerate() {
            wr.write_record([i.to_string(), m.id()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    b.note("feature_set", cfg.feature_set);
    b.note("dimension", space.dimension(cfg.feature_set));
    Ok(())
}

fn annotated(cfg: &RunConfig) -> Result<Vec<AnnotatedText>> {
    read_annotated_texts(open(required(&cfg.annotations, "annotations")?)?)
}

fn train(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let texts = annotated(cfg)?;
    let docs: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
    let space = FeatureSpace::fit(&docs, cfg.min_df, cfg.lexicon_spec()?);
    let lr = LogisticRegression {
        lambda: cfg.lambda,
        class_weighted: cfg.class_weighted,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &fs in &cfg.feature_sets {
        let all: Vec<_> = docs.iter().map(|d| space.vectorize(fs, d)).collect();
        for s in Strategy::ALL {
            let (xs, ys): (Vec<_>, Vec<u8>) = texts
                .iter()
                .zip(&all)
                .filter_map(|(t, x)| t.labels[s.index()].map(|y| (x.clone(), u8::from(y))))
                .unzip();
            if ys.is_empty() {
                log::warn!("{s}: no annotated texts, skipped");
                continue;
            }
            rows.push((fs, s, cross_validate(&lr, &xs, &ys, cfg.k, cfg.seed)?));
            rows.push((fs, s, cross_validate(&BernoulliNb::default(), &xs, &ys, cfg.k, cfg.seed)?));
            let (maj, rnd) = cross_validate_baselines(&ys, cfg.k, cfg.seed)?;
            rows.push((fs, s, maj));
            rows.push((fs, s, rnd));
        }
    }
    b.add("cv_metrics.csv", |w| write_cv_report(w, &rows))?;
    let models = train_strategy_models(
        &texts,
        cfg.feature_set,
        cfg.min_df,
        cfg.lexicon_spec()?,
        cfg.lambda,
        cfg.class_weighted,
    )?;
    let names = models.space.feature_names(cfg.feature_set);
    b.add("attributions.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["strategy", "rank", "feature", "weight"])?;
        for (s, m) in &models.models {
            for (i, (f, wt)) in coefficient_attributions(m, &names, 20).into_iter().enumerate() {
                wr.write_record([s.name().to_string(), (i + 1).to_string(), f, format!("{wt:.6}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    b.add("models.json", |w| Ok(serde_json::to_writer(w, &models)?))?;
    Ok(())
}

/// Labels from a label file, or weak labels from models trained on the
/// annotations. Returns the labels and their source.
fn corpus_labels(cfg: &RunConfig, c: &Corpus) -> Result<(BTreeMap<String, StrategyLabels>, &'static str)> {
    if let Some(p) = &cfg.labels {
        return Ok((read_labels(open(p)?)?, "label-file"));
    }
    let texts = annotated(cfg).map_err(|e| match e {
        Error::Config { .. } => Error::config("labels", "needs a label file or an annotation file"),
        other => other,
    })?;
    let models = train_strategy_models(
        &texts,
        cfg.feature_set,
        cfg.min_df,
        cfg.lexicon_spec()?,
        cfg.lambda,
        cfg.class_weighted,
    )?;
    let human: HashMap<String, [bool; 5]> = texts
        .iter()
        .filter_map(|t| {
            let id = t.message_ref.clone()?;
            let mut flags = [false; 5];
            for (f, l) in flags.iter_mut().zip(t.labels) {
                *f = l?;
            }
            Some((id, flags))
        })
        .collect();
    Ok((weak_label_corpus(&models, c, &human)?, "weak-labels"))
}

fn write_correlation(b: &mut ReportBundle, labels: &BTreeMap<String, StrategyLabels>) -> Result<()> {
    let ls: Vec<StrategyLabels> = labels.values().copied().collect();
    let cm = correlation_matrix(&ls)?;
    b.add("correlation.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["a", "b", "r", "p", "n"])?;
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for i in 0..cm.names.len() {
            for j in 0..cm.names.len() {
                wr.write_record([
                    cm.names[i].clone(),
                    cm.names[j].clone(),
                    fmt(cm.r[i][j]),
                    fmt(cm.p[i][j]),
                    cm.n.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    })?;
    b.note("group_pattern", cm.matches_group_pattern());
    Ok(())
}

fn label(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let c = corpus(cfg)?;
    let (labels, source) = corpus_labels(cfg, &c)?;
    let tie = cfg.tie(&labels);
    b.add("labels.csv", |w| write_weak_labels(w, &labels, tie))?;
    write_correlation(b, &labels)?;
    b.note("label_source", source);
    b.note("tie_rule", tie);
    Ok(())
}

fn actions(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let labels = read_labels(open(required(&cfg.labels, "labels")?)?)?;
    let tie = cfg.tie(&labels);
    b.add("action_states.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["message_id", "action_state"])?;
        for (id, l) in &labels {
            wr.write_record([id.as_str(), derive_action_state(l, tie).name()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    write_correlation(b, &labels)?;
    b.note("tie_rule", tie);
    Ok(())
}

fn traces(c: &Corpus) -> Result<BTreeMap<u32, CentralityTrace>> {
    c.games
        .iter()
        .map(|g| Ok((g.game_id, centrality_trace(g)?)))
        .collect()
}

fn graph(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let c = corpus(cfg)?;
    let tr = traces(&c)?;
    let list: Vec<CentralityTrace> = tr.into_values().collect();
    b.add("centrality.csv", |w| write_trace_csv(w, &list))?;
    let finals: BTreeMap<u32, _> = c
        .games
        .iter()
        .map(|g| {
            let last = g.messages().last().map_or(0, |m| m.abs_index);
            (g.game_id, accumulate(g, last))
        })
        .collect();
    b.add("edges.csv", |w| write_edge_list_csv(w, &finals))?;
    Ok(())
}

fn sbirl(cfg: &RunConfig, b: &mut ReportBundle, ablation_only: bool) -> Result<()> {
    let mut by_variant: BTreeMap<StateVariant, Vec<ThreadPair>> = BTreeMap::new();
    if let Some(p) = &cfg.states {
        let ts = read_states_jsonl(open(p)?)?;
        by_variant.insert(cfg.variants[0], ts);
        b.note("label_source", "states-file");
    } else {
        let c = corpus(cfg)?;
        let need_labels = cfg.variants.iter().any(|v| v.needs_labels());
        let (labels, source) = if need_labels {
            corpus_labels(cfg, &c)?
        } else {
            (BTreeMap::new(), "none")
        };
        let tie = cfg.tie(&labels);
        let tr = if cfg.variants.iter().any(|v| v.needs_graph()) {
            traces(&c)?
        } else {
            BTreeMap::new()
        };
        let mut unscored = BTreeMap::new();
        for &v in &cfg.variants {
            let ct = corpus_threads(&c, v, &labels, &tr, tie)?;
            unscored.insert(v.name(), ct.n_unscored);
            by_variant.insert(v, ct.threads);
        }
        b.note("label_source", source);
        b.note("tie_rule", tie);
        b.note("unscored_threads", unscored);
    }
    b.note("seed", cfg.seed);
    b.note("gamma", cfg.gamma);
    if !ablation_only {
        let mut gammas = cfg.gammas.clone();
        if !gammas.contains(&cfg.gamma) {
            gammas.push(cfg.gamma);
        }
        gammas.sort_by(f64::total_cmp);
        let rows = gamma_sweep(&by_variant, &gammas, cfg.ridge)?;
        b.add("sbirl.csv", |w| write_eval_csv(w, &rows))?;
        let ties: BTreeMap<&str, usize> = rows
            .iter()
            .filter(|r| r.gamma == cfg.gamma)
            .map(|r| (r.variant.name(), r.eval.n_ties))
            .collect();
        b.note("tie_exclusions", ties);
        b.add("theta.csv", |w| {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["variant", "index", "theta"])?;
            for (v, ts) in &by_variant {
                let m = fit_threads(ts, cfg.gamma, cfg.ridge)?;
                for (i, t) in m.theta.iter().enumerate() {
                    wr.write_record([v.name().to_string(), i.to_string(), format!("{t:.10}")])?;
                }
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    let ns: Vec<usize> = if cfg.ablate.is_empty() && ablation_only {
        DEFAULT_ABLATION.to_vec()
    } else {
        cfg.ablate.clone()
    };
    if !ns.is_empty() {
        let v = if by_variant.contains_key(&StateVariant::GraphAware) {
            StateVariant::GraphAware
        } else {
            *by_variant.keys().next().expect("at least one variant")
        };
        let curve = ablation_curve(&by_variant[&v], &ns, cfg.gamma, cfg.ridge)?;
        b.add("ablation.csv", |w| write_ablation_csv(w, &curve))?;
        let svg = ablation_svg(v, &curve);
        b.files.insert("ablation.svg".into(), svg.into_bytes());
        b.note("ablation_variant", v.name());
    }
    Ok(())
}

fn trust_observations(cfg: &RunConfig) -> Result<(Vec<TrustObservation>, &'static str)> {
    if let Some(p) = &cfg.observations {
        return Ok((read_trust_csv(open(p)?)?, "observation-file"));
    }
    let c = corpus(cfg)?;
    let (labels, source) = corpus_labels(cfg, &c)?;
    Ok((observations(&c, &labels), source))
}

fn trust(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let (obs, source) = trust_observations(cfg)?;
    let report = fit_fixed_effects(&obs)?;
    b.add("coefficients.csv", |w| write_coefficients_csv(w, &report))?;
    b.files
        .insert("coefficients.svg".into(), forest_svg(&report).into_bytes());
    if cfg.trust_ablation {
        let tc = TrustClassifierConfig {
            feature_set: Some(cfg.feature_set),
            lambda: cfg.lambda,
            class_weighted: cfg.class_weighted,
            k: cfg.k,
            seed: cfg.seed,
            min_df: cfg.min_df,
        };
        let cells = trust_ablation(&obs, &tc)?;
        b.add("trust_ablation.csv", |w| write_ablation_grid_csv(w, &cells))?;
    }
    b.note("label_source", source);
    b.note("observations", obs.len());
    Ok(())
}

fn synth(cfg: &RunConfig, b: &mut ReportBundle) -> Result<()> {
    let s = &cfg.synth;
    let inst = gen_sbirl(&SbirlConfig {
        seed: cfg.seed,
        n_threads: s.n_threads,
        dim: s.dim,
        sigma: s.sigma,
        gamma: cfg.gamma,
        ..Default::default()
    })?;
    b.add("states.jsonl", |w| write_states_jsonl(w, &inst.threads))?;
    b.add("sbirl_truth.json", |w| Ok(serde_json::to_writer(w, &inst.theta_star)?))?;
    let (votes, _) = gen_annotations(&AnnotationConfig {
        seed: cfg.seed,
        n_items: s.n_items,
        prevalence: s.prevalence,
        annotators: s.annotator_accuracies.iter().map(|&a| AnnotatorSpec::symmetric(a)).collect(),
    })?;
    let mut m = BTreeMap::new();
    m.insert(cfg.default_label.clone(), votes);
    b.add("votes.csv", |w| write_votes_csv(w, &m))?;
    let sc = gen_corpus(&CorpusConfig {
        seed: cfg.seed,
        n_games: s.n_games,
        messages_per_game: s.messages_per_game,
        ..Default::default()
    })?;
    b.add("dialogs.jsonl", |w| sc.corpus.write_dialogs(w))?;
    b.add("annotations.csv", |w| sc.write_annotations(w))?;
    let tr = gen_trust(&TrustConfig {
        seed: cfg.seed,
        n: s.trust_n,
        ..Default::default()
    })?;
    b.add("trust.csv", |w| write_trust_csv(w, &tr.observations))?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of the ablation curve. Point labels are the CSV cells.
fn ablation_svg(variant: StateVariant, curve: &[AblationPoint]) -> String {
    let (w, h, m) = (640.0, 360.0, 50.0);
    let n = curve.len().max(2) as f64;
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / (n - 1.0);
    let y = |a: f64| h - m - (h - 2.0 * m) * a;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">winner accuracy by first n utterances ({})</text>\n\
         <line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        xml_escape(variant.name()),
        h - m,
        w - m,
        h - m,
        h - m
    );
    let pts: Vec<String> = curve
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{:.2},{:.2}", x(i), y(p.eval.accuracy)))
        .collect();
    s += &format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    );
    for (i, p) in curve.iter().enumerate() {
        let n_label = p.n.map_or_else(|| "full".to_string(), |n| n.to_string());
        let acc = format!("{:.6}", p.eval.accuracy);
        s += &format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{acc}</text>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{n_label}</text>\n",
            x(i),
            y(p.eval.accuracy),
            x(i),
            y(p.eval.accuracy) - 8.0,
            x(i),
            h - m + 16.0
        );
    }
    s += "</svg>\n";
    s
}

/// Forest plot of the strategy and duration coefficients with 95% intervals.
fn forest_svg(report: &CoefficientReport) -> String {
    let terms: Vec<_> = report
        .terms
        .iter()
        .filter(|c| c.block == TermBlock::Strategy || c.term == "duration")
        .collect();
    let (w, row, top, left) = (640.0, 36.0, 50.0, 160.0);
    let h = top + row * terms.len() as f64 + 30.0;
    let span = terms
        .iter()
        .map(|c| c.estimate.abs() + 1.96 * c.se)
        .fold(1e-9_f64, f64::max);
    let right = w - 110.0;
    let x = |v: f64| left + (right - left) * (v + span) / (2.0 * span);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"20\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">perceived trustworthiness coefficients</text>\n\
         <line x1=\"{:.2}\" y1=\"{top}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
        x(0.0),
        x(0.0),
        h - 30.0
    );
    for (i, c) in terms.iter().enumerate() {
        let cy = top + row * (i as f64 + 0.5);
        s += &format!(
            "<text x=\"20\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
             <line x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"black\"/>\n\
             <circle cx=\"{:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{:.6}</text>\n",
            cy + 4.0,
            xml_escape(&c.term),
            x(c.estimate - 1.96 * c.se),
            x(c.estimate + 1.96 * c.se),
            x(c.estimate),
            if c.p < 0.05 { "firebrick" } else { "steelblue" },
            right + 10.0,
            cy + 4.0,
            c.estimate
        );
    }
    s += "</svg>\n";
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes every file of the bundle under `out_dir` with stable names.
pub fn emit_reports(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(bundle.files.len());
    for (name, data) in &bundle.files {
        let p = out_dir.join(name);
        let mut f = File::create(&p)?;
        f.write_all(data)?;
        paths.push(p);
    }
    Ok(paths)
}

fn write_manifest(out_dir: &Path, m: &Manifest) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let p = out_dir.join(MANIFEST_NAME);
    let mut f = File::create(&p)?;
    serde_json::to_writer_pretty(&mut f, m)?;
    f.write_all(b"\n")?;
    Ok(p)
}

/// Result of a complete run including report emission.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Option<PathBuf>,
    pub files: Vec<PathBuf>,
    pub bundle: Option<ReportBundle>,
    pub error: Option<Error>,
}

/// Runs, emits reports and always attempts to write the manifest.
pub fn execute(sub: Subcommand, cfg: &RunConfig) -> RunOutcome {
    let result = run(sub, cfg).and_then(|b| {
        let files = emit_reports(&b, &cfg.out_dir)?;
        Ok((b, files))
    });
    let (bundle, files, error) = match result {
        Ok((b, f)) => (Some(b), f, None),
        Err(e) => (None, Vec::new(), Some(e)),
    };
    let exit_code = error.as_ref().map_or(0, Error::exit_code);
    let manifest = Manifest {
        tool: "parley".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.name().into(),
        status: if error.is_none() { "ok" } else { "error" }.into(),
        exit_code,
        error: error.as_ref().map(|e| e.to_string()),
        config: cfg.clone(),
        artifacts: bundle
            .iter()
            .flat_map(|b| &b.files)
            .map(|(name, data)| Artifact {
                name: name.clone(),
                bytes: data.len(),
                sha256: sha256_hex(data),
            })
            .collect(),
        notes: bundle.as_ref().map(|b| b.notes.clone()).unwrap_or_default(),
    };
    let manifest = match write_manifest(&cfg.out_dir, &manifest) {
        Ok(p) => Some(p),
        Err(e) => {
            log::error!("could not write manifest: {e}");
            None
        }
    };
    RunOutcome {
        exit_code,
        manifest,
        files,
        bundle,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_a_config_error() {
        let e = "dance".parse::<Subcommand>().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        for s in Subcommand::ALL {
            assert_eq!(s.name().parse::<Subcommand>().unwrap(), s);
        }
    }

    #[test]
    fn validation_names_fields() {
        let cfg = RunConfig {
            gamma: 1.0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "gamma"),
            other => panic!("{other:?}"),
        }
        let cfg = RunConfig {
            ablate: vec![30, 25],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "ablate"));
    }

    #[test]
    fn config_from_value_reports_unknown_field() {
        let v = serde_json::json!({ "gama": 0.5 });
        match RunConfig::from_value(v) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "gama"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_dataset_is_an_input_error() {
        let cfg = RunConfig {
            dataset: Some("/nonexistent/dialogs.jsonl".into()),
            ..Default::default()
        };
        let e = run(Subcommand::Ingest, &cfg).unwrap_err();
        assert!(matches!(e, Error::MissingInput(_)));
        assert_eq!(e.exit_code(), 3);
        let e = run(Subcommand::Ingest, &RunConfig::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn empty_bundle_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_reports(&ReportBundle::default(), dir.path()).unwrap();
        assert!(paths.is_empty());
    }

    #[test]
    fn svg_labels_match_csv() {
        let ts: Vec<ThreadPair> = crate::synthlab::gen_sbirl(&SbirlConfig {
            n_threads: 40,
            dim: 3,
            ..Default::default()
        })
        .unwrap()
        .threads;
        let curve = ablation_curve(&ts, &[1, 2], 0.9, 0.0).unwrap();
        let mut csv_buf = Vec::new();
        write_ablation_csv(&mut csv_buf, &curve).unwrap();
        let csv_text = String::from_utf8(csv_buf).unwrap();
        let svg = ablation_svg(StateVariant::Simple, &curve);
        for p in &curve {
            let acc = format!("{:.6}", p.eval.accuracy);
            assert!(csv_text.contains(&acc) && svg.contains(&format!(">{acc}<")));
        }
    }
}
