use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand as ClapSubcommand};
use parley_core::pipeline::{execute, RunConfig, Subcommand, TieChoice};
use parley_core::{FeatureSet, StateVariant};

/// Negotiation analytics for seven-player dialog games.
#[derive(Parser, Debug)]
#[command(name = "parley", version, about)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "PARLEY_OUT")]
    out: Option<PathBuf>,

    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dialog file or directory of `*.jsonl` dialog files.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Parse dialogs, segment and deduplicate sentences.
    Ingest(Opts),
    /// Annotator agreement statistics and quality gate.
    Agree(Opts),
    /// Export message feature matrices.
    Features(Opts),
    /// Cross-validate strategy classifiers.
    Train(Opts),
    /// Weak-label the corpus with trained strategy classifiers.
    Label(Opts),
    /// Derive action states and label correlations.
    Actions(Opts),
    /// Centrality traces of the communication graphs.
    Graph(Opts),
    /// Fit rewards and evaluate winner accuracy.
    Sbirl(Opts),
    /// Winner accuracy on the first n utterances.
    Ablate(Opts),
    /// Trustworthiness regression and classifier ablation.
    Trust(Opts),
    /// Write synthetic oracle instances.
    Synth(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Vote table: item_id, annotator_id, label and optional strategy.
    #[arg(long)]
    votes: Option<PathBuf>,
    /// Annotated texts: text, optional message_id, strategy columns.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Strategy label file keyed by message_id.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Encoded thread states (JSON lines).
    #[arg(long)]
    states: Option<PathBuf>,
    /// Trust observation table.
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Lexicon file replacing the bundled starter lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, value_parser = parse_feature_set)]
    feature_set: Option<FeatureSet>,
    #[arg(long)]
    min_df: Option<usize>,
    /// Cross-validation folds.
    #[arg(short, long)]
    k: Option<usize>,
    /// L2 penalty of the logistic models.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    no_class_weights: bool,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    #[arg(long)]
    supermajority: Option<f64>,
    #[arg(long)]
    default_label: Option<String>,
    /// State encoding; repeat for several.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<StateVariant>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Discount factors of the sensitivity sweep.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Utterance limits for the ablation curve.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<usize>,
    /// Tie rule for action states: majority or group1.
    #[arg(long, value_parser = parse_tie)]
    tie_rule: Option<TieChoice>,
    /// Skip the trust classifier ablation grid.
    #[arg(long)]
    no_ablation: bool,
    /// Noise on synthetic final scores.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    n_threads: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    games: Option<usize>,
    #[arg(long)]
    messages_per_game: Option<usize>,
}

fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    s.parse().map_err(|e: parley_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<StateVariant, String> {
    s.parse().map_err(|e: parley_core::Error| e.to_string())
}

fn parse_tie(s: &str) -> Result<TieChoice, String> {
    match s {
        "majority" => Ok(TieChoice::Majority),
        "group1" => Ok(TieChoice::Group1),
        _ => Err(format!("unknown tie rule {s:?}")),
    }
}

fn split(cmd: Command) -> (Subcommand, Opts) {
    match cmd {
        Command::Ingest(o) => (Subcommand::Ingest, o),
        Command::Agree(o) => (Subcommand::Agree, o),
        Command::Features(o) => (Subcommand::Features, o),
        Command::Train(o) => (Subcommand::Train, o),
        Command::Label(o) => (Subcommand::Label, o),
        Command::Actions(o) => (Subcommand::Actions, o),
        Command::Graph(o) => (Subcommand::Graph, o),
        Command::Sbirl(o) => (Subcommand::Sbirl, o),
        Command::Ablate(o) => (Subcommand::Ablate, o),
        Command::Trust(o) => (Subcommand::Trust, o),
        Command::Synth(o) => (Subcommand::Synth, o),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let src = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&src).with_context(|| format!("config {}", path.display()))
}

fn apply(cfg: &mut RunConfig, cli: &Cli, o: Opts) {
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    set!(out_dir, cli.out.clone());
    set!(seed, cli.seed);
    if cli.dataset.is_some() {
        cfg.dataset = cli.dataset.clone();
    }
    for (slot, v) in [
        (&mut cfg.votes, o.votes),
        (&mut cfg.annotations, o.annotations),
        (&mut cfg.labels, o.labels),
        (&mut cfg.states, o.states),
        (&mut cfg.observations, o.observations),
        (&mut cfg.lexicon, o.lexicon),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    set!(feature_set, o.feature_set);
    set!(min_df, o.min_df);
    set!(k, o.k);
    set!(lambda, o.lambda);
    if o.no_class_weights {
        cfg.class_weighted = false;
    }
    set!(dedup_threshold, o.dedup_threshold);
    set!(supermajority, o.supermajority);
    set!(default_label, o.default_label);
    if !o.variants.is_empty() {
        cfg.variants = o.variants;
    }
    set!(gamma, o.gamma);
    if !o.gammas.is_empty() {
        cfg.gammas = o.gammas;
    }
    set!(ridge, o.ridge);
    if !o.ablate.is_empty() {
        cfg.ablate = o.ablate;
    }
    set!(tie_rule, o.tie_rule);
    if o.no_ablation {
        cfg.trust_ablation = false;
    }
    if let Some(v) = o.sigma {
        cfg.synth.sigma = v;
    }
    if let Some(v) = o.n_threads {
        cfg.synth.n_threads = v;
    }
    if let Some(v) = o.dim {
        cfg.synth.dim = v;
    }
    if let Some(v) = o.games {
        cfg.synth.n_games = v;
    }
    if let Some(v) = o.messages_per_game {
        cfg.synth.messages_per_game = v;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cli = Cli::parse();
    let command = std::mem::replace(&mut cli.command, Command::Graph(Opts::default()));
    let (sub, opts) = split(command);
    let mut cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    apply(&mut cfg, &cli, opts);
    let outcome = execute(sub, &cfg);
    for f in &outcome.files {
        println!("{}", f.display());
    }
    if let Some(m) = &outcome.manifest {
        println!("{}", m.display());
    }
    if let Some(e) = &outcome.error {
        log::error!("{sub} failed");
        eprintln!("error: {e}");
    }
    ExitCode::from(u8::try_from(outcome.exit_code).unwrap_or(1))
}
