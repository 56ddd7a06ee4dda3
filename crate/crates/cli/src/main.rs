use std::collections::HashSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};

use clarity_core::augmentation::{augment_minority, paraphrase_backend, AugmentOptions, AugmentationError};
use clarity_core::cache::ResponseCache;
use clarity_core::dataset::{class_frequencies, load_split, save_split, Dataset, DatasetError, Split};
use clarity_core::ensemble::{majority_vote, EnsembleError, TiePolicy};
use clarity_core::llm_client::{classify_instance, ClientError, LlmClient, MockMode, ModelConfig, PredictError};
use clarity_core::metrics::{confusion_matrix, prf_report};
use clarity_core::parallel::bounded_map;
use clarity_core::prediction_file::{read_predictions, render_ensemble, render_predictions, write_text};
use clarity_core::prompting::{render_prompt, select_demonstrations_excluding, PromptError, PromptSpec, Strategy};
use clarity_core::selftest;
use clarity_core::sweep::{parse_strategy_tag, render_aggregates, run_sweep, SweepConfig, SweepError};
use clarity_core::taxonomy::{parse_exact, ClarityLabel, Label, LabelTaxonomy, Level, NameStyle};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(name = "clarity", version, about = "Response-clarity classification harness")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print class frequencies for a split.
    Stats {
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        /// clarity, evasion, or omit for both.
        #[arg(long)]
        level: Option<Level>,
        /// Also write the table as TSV.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Print the prompt for one instance.
    Render {
        /// Split containing the instance.
        data: PathBuf,
        #[arg(long)]
        id: String,
        #[command(flatten)]
        prompt: PromptArgs,
    },
    /// Classify every instance of a split with one model.
    Predict {
        data: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long)]
        prompt_names: bool,
    },
    /// Run a declarative prompt x model sweep.
    Sweep { config: PathBuf },
    /// Majority-vote two or more prediction files.
    Ensemble {
        #[arg(required = true, num_args = 2..)]
        predictions: Vec<PathBuf>,
        #[arg(long, default_value = "clarity")]
        level: Level,
        #[arg(long, value_enum, default_value = "default")]
        policy: PolicyArg,
        /// Label chosen on ties under the default policy.
        #[arg(long, default_value = "Ambivalent")]
        default_label: String,
        /// Training split, required by the train-frequency policy.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Write "Ambivalent Reply" style names.
        #[arg(long)]
        prompt_names: bool,
    },
    /// Score a prediction file against gold labels.
    Evaluate {
        gold: PathBuf,
        predictions: PathBuf,
        #[arg(long, default_value = "clarity")]
        level: Level,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long)]
        tsv: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Paraphrase-augment a minority class of the training split.
    Augment {
        train: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "Clear Non-Reply")]
        target: String,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        audit: PathBuf,
    },
    /// Check loss identities, gradients and truncation.
    NumericsSelftest {
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
}

#[derive(Args)]
struct PromptArgs {
    /// ZS, ZS+Re2, CoT, or FS<k>.
    #[arg(long, default_value = "ZS")]
    strategy: String,
    #[arg(long, default_value = "clarity")]
    level: Level,
    #[arg(long)]
    enriched: bool,
    #[arg(long)]
    president: bool,
    #[arg(long)]
    subcategories: bool,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Demonstration pool for few-shot strategies.
    #[arg(long)]
    train: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// TOML model configuration.
    #[arg(long, conflicts_with = "mock")]
    model: Option<PathBuf>,
    /// Offline backend, e.g. `echo-label: Ambivalent`.
    #[arg(long)]
    mock: Option<String>,
    #[arg(long, default_value = "mock")]
    model_id: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Default,
    TrainFrequency,
    MeanProbability,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }
}

fn usage(e: impl Display) -> Failure {
    Failure::new(EXIT_USAGE, anyhow!("{e}"))
}

fn data(e: impl Display) -> Failure {
    Failure::new(EXIT_DATA, anyhow!("{e}"))
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::new(EXIT_DATA, e)
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        let code = match e {
            PromptError::InsufficientClassSupport { .. } | PromptError::MissingPresident { .. } => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Failure::new(code, e)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match e {
            ClientError::Transport { .. } | ClientError::ProviderRefusal(_) => EXIT_TRANSPORT,
            ClientError::Cache(_) => EXIT_DATA,
            ClientError::Auth(_) | ClientError::Config(_) => EXIT_USAGE,
        };
        Failure::new(code, e)
    }
}

impl From<PredictError> for Failure {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Prompt(p) => p.into(),
            PredictError::Client(c) => c.into(),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        let code = match e {
            SweepError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure::new(code, e)
    }
}

impl From<AugmentationError> for Failure {
    fn from(e: AugmentationError) -> Self {
        match e {
            AugmentationError::Client(c) => c.into(),
            other => Failure::new(EXIT_DATA, other),
        }
    }
}

impl From<EnsembleError> for Failure {
    fn from(e: EnsembleError) -> Self {
        let code = match e {
            EnsembleError::DefaultLevel { .. } | EnsembleError::MissingFrequency { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure::new(code, e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Stats {
            data,
            split,
            level,
            tsv,
        } => stats(&data, split, level, tsv.as_deref()),
        Command::Render { data, id, prompt } => render(&data, &id, &prompt),
        Command::Predict {
            data,
            prompt,
            model,
            cache,
            out,
            split,
            prompt_names,
        } => predict(&data, split, &prompt, &model, cache.as_deref(), &out, prompt_names),
        Command::Sweep { config } => sweep(&config),
        Command::Ensemble {
            predictions,
            level,
            policy,
            default_label,
            train,
            out,
            prompt_names,
        } => ensemble(
            &predictions,
            level,
            policy,
            &default_label,
            train.as_deref(),
            &out,
            prompt_names,
        ),
        Command::Evaluate {
            gold,
            predictions,
            level,
            split,
            tsv,
            confusion,
        } => evaluate(&gold, &predictions, level, split, tsv.as_deref(), confusion.as_deref()),
        Command::Augment {
            train,
            model,
            target,
            seed,
            out,
            audit,
        } => augment(&train, &model, &target, seed, &out, &audit),
        Command::NumericsSelftest { seed } => numerics_selftest(seed),
    }
}

fn style(prompt_names: bool) -> NameStyle {
    if prompt_names {
        NameStyle::Prompt
    } else {
        NameStyle::Short
    }
}

fn stats(path: &Path, split: Split, level: Option<Level>, tsv: Option<&Path>) -> Result<(), Failure> {
    let ds = load_split(path, split)?;
    let levels = match level {
        Some(l) => vec![l],
        None => vec![Level::Clarity, Level::Evasion],
    };
    println!("{} split: {} instances", ds.split, ds.len());
    let mut tsv_text = String::new();
    for level in levels {
        let table = class_frequencies(&ds, level)?;
        println!("\n{}", table.render_table());
        tsv_text.push_str(&table.render_tsv());
    }
    if let Some(p) = tsv {
        write_text(p, &tsv_text).map_err(data)?;
    }
    Ok(())
}

fn prompt_spec(args: &PromptArgs) -> Result<PromptSpec, Failure> {
    let (strategy, shots) = parse_strategy_tag(&args.strategy).map_err(usage)?;
    let spec = PromptSpec {
        strategy,
        shots,
        level: args.level,
        enriched: args.enriched,
        president_name: args.president,
        subcategory_definitions: args.subcategories,
        seed: args.seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn demonstrations(
    spec: &PromptSpec,
    args: &PromptArgs,
    exclude: &HashSet<String>,
) -> Result<Vec<clarity_core::prompting::Demonstration>, Failure> {
    if spec.strategy != Strategy::FewShot {
        return Ok(Vec::new());
    }
    let train_path = args
        .train
        .as_deref()
        .ok_or_else(|| usage("few-shot strategies need --train"))?;
    let train = load_split(train_path, Split::Train)?;
    Ok(select_demonstrations_excluding(&train, spec, exclude)?)
}

fn render(path: &Path, id: &str, args: &PromptArgs) -> Result<(), Failure> {
    let spec = prompt_spec(args)?;
    let ds = load_split(path, Split::Dev)?;
    let inst = ds
        .get(id)
        .ok_or_else(|| data(format!("no instance `{id}` in {}", path.display())))?;
    let exclude = HashSet::from([id.to_string()]);
    let demos = demonstrations(&spec, args, &exclude)?;
    let prompt = render_prompt(&spec, &demos, inst, &LabelTaxonomy::standard())?;
    for w in &prompt.warnings {
        log::warn!("{w}");
    }
    print!("{}", prompt.text());
    Ok(())
}

fn model_config(args: &ModelArgs) -> Result<ModelConfig, Failure> {
    match (&args.model, &args.mock) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
        (None, Some(mock)) => {
            let mode: MockMode = mock.parse().map_err(usage)?;
            Ok(ModelConfig::mock(args.model_id.clone(), mode))
        }
        (None, None) => Err(usage("pass --model <config.toml> or --mock <mode>")),
    }
}

#[allow(clippy::too_many_arguments)]
fn predict(
    path: &Path,
    split: Split,
    args: &PromptArgs,
    model: &ModelArgs,
    cache_dir: Option<&Path>,
    out: &Path,
    prompt_names: bool,
) -> Result<(), Failure> {
    let spec = prompt_spec(args)?;
    let ds = load_split(path, split)?;
    let ids: HashSet<String> = ds.iter().map(|i| i.id.clone()).collect();
    let demos = demonstrations(&spec, args, &ids)?;
    let client = LlmClient::new(model_config(model)?)?;
    let cache = cache_dir.map(ResponseCache::open).transpose().map_err(data)?;
    let taxonomy = LabelTaxonomy::standard();

    let results = bounded_map(&ds.instances, client.config().max_in_flight, |_, inst| {
        classify_instance(&client, &spec, &demos, inst, &taxonomy, cache.as_ref())
    });
    let preds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let unparsed = preds.iter().filter(|p| p.parsed.is_none()).count();
    if unparsed > 0 {
        log::warn!("{unparsed} of {} outputs could not be parsed", preds.len());
    }
    write_text(out, &render_predictions(&preds, spec.level, style(prompt_names))).map_err(data)?;
    eprintln!(
        "wrote {} predictions to {} ({} backend requests)",
        preds.len(),
        out.display(),
        client.requests_sent()
    );
    Ok(())
}

fn sweep(config: &Path) -> Result<(), Failure> {
    let cfg = SweepConfig::load(config)?;
    let outcome = run_sweep(&cfg)?;
    println!("name\tstrategy\tinput\tmodel\tmacro_f1\tstatus");
    for r in outcome.table.ranked() {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            r.strategy,
            if r.enriched { "enriched" } else { "atomic" },
            r.model_id,
            r.macro_f1.map(|f| format!("{f:.4}")).unwrap_or_else(|| "-".into()),
            match &r.status {
                clarity_core::sweep::RowStatus::Ok => "ok".to_string(),
                clarity_core::sweep::RowStatus::Warning(w) => w.clone(),
                clarity_core::sweep::RowStatus::Failed { message, .. } => message.clone(),
            }
        );
    }
    if let Ok(agg) = render_aggregates(&outcome.table) {
        println!("\n{agg}");
    }
    eprintln!(
        "results in {} ({} backend requests)",
        outcome.results_path.display(),
        outcome.requests_sent
    );
    if outcome.any_transport_failure() {
        return Err(Failure::new(
            EXIT_TRANSPORT,
            anyhow!("one or more grid points hit transport failures"),
        ));
    }
    Ok(())
}

fn ensemble(
    files: &[PathBuf],
    level: Level,
    policy: PolicyArg,
    default_label: &str,
    train: Option<&Path>,
    out: &Path,
    prompt_names: bool,
) -> Result<(), Failure> {
    let policy = match policy {
        PolicyArg::Default => {
            let label = parse_exact(default_label, level)
                .ok_or_else(|| usage(format!("`{default_label}` is not a {level} label")))?;
            TiePolicy::DefaultLabel(label)
        }
        PolicyArg::TrainFrequency => {
            let path = train.ok_or_else(|| usage("the train-frequency policy needs --train"))?;
            TiePolicy::TrainFrequency(class_frequencies(&load_split(path, Split::Train)?, level)?)
        }
        PolicyArg::MeanProbability => TiePolicy::MeanProbability,
    };

    let members = files
        .iter()
        .map(|f| read_predictions(f, level))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    let mut order: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for p in members.iter().flatten() {
        if seen.insert(p.instance_id.as_str()) {
            order.push(&p.instance_id);
        }
    }

    let mut results = Vec::with_capacity(order.len());
    let mut skipped = 0;
    for id in order {
        let votes: Vec<_> = members
            .iter()
            .filter_map(|m| m.iter().find(|p| p.instance_id == id).cloned())
            .collect();
        match majority_vote(&votes, &policy) {
            Ok(r) => results.push(r),
            Err(EnsembleError::NoParsedVotes) => {
                log::warn!("instance `{id}` has no parsed votes, skipped");
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let ties = results.iter().filter(|r| r.tie_broken).count();
    write_text(out, &render_ensemble(&results, level, style(prompt_names))).map_err(data)?;
    eprintln!(
        "ensembled {} instances from {} files ({ties} ties, {skipped} skipped)",
        results.len(),
        files.len()
    );
    Ok(())
}

fn evaluate(
    gold_path: &Path,
    pred_path: &Path,
    level: Level,
    split: Split,
    tsv: Option<&Path>,
    confusion: Option<&Path>,
) -> Result<(), Failure> {
    let gold: Dataset = load_split(gold_path, split)?;
    let preds = read_predictions(pred_path, level).map_err(data)?;
    let mut g = Vec::new();
    let mut p = Vec::new();
    let mut dropped = 0;
    for pred in &preds {
        let inst = gold
            .get(&pred.instance_id)
            .ok_or_else(|| data(format!("prediction for unknown instance `{}`", pred.instance_id)))?;
        let gold_label: Label = inst.gold(level).ok_or_else(|| {
            data(DatasetError::MissingGold {
                id: inst.id.clone(),
                level,
            })
        })?;
        match pred.parsed {
            Some(l) => {
                g.push(gold_label);
                p.push(l);
            }
            None => dropped += 1,
        }
    }
    let missing = gold.len().saturating_sub(preds.len());
    if dropped > 0 || missing > 0 {
        log::warn!("{dropped} unparsed predictions dropped, {missing} gold instances without a prediction");
    }
    let cm = confusion_matrix(level, &g, &p).map_err(data)?;
    let report = prf_report(&cm);
    print!("{}", report.render_table());
    if let Some(path) = tsv {
        write_text(path, &report.to_tsv()).map_err(data)?;
    }
    if let Some(path) = confusion {
        write_text(path, &cm.to_tsv()).map_err(data)?;
    }
    Ok(())
}

fn augment(
    train_path: &Path,
    model: &ModelArgs,
    target: &str,
    seed: u64,
    out: &Path,
    audit: &Path,
) -> Result<(), Failure> {
    let target: ClarityLabel = parse_exact(target, Level::Clarity)
        .and_then(Label::as_clarity)
        .ok_or_else(|| usage(format!("`{target}` is not a clarity label")))?;
    let train = load_split(train_path, Split::Train)?;
    let client = LlmClient::new(paraphrase_backend(model_config(model)?))?;
    let options = AugmentOptions {
        seed,
        max_in_flight: client.config().max_in_flight,
        ..AugmentOptions::default()
    };
    let outcome = augment_minority(&train, target, &client, &options)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    save_split(&outcome.dataset, out)?;
    write_text(audit, &outcome.audit_tsv()).map_err(data)?;
    eprintln!(
        "{target}: {} sources, {} candidates, {} retained; split now {} instances",
        outcome.sources,
        outcome.candidates,
        outcome.retained,
        outcome.dataset.len()
    );
    Ok(())
}

fn numerics_selftest(seed: u64) -> Result<(), Failure> {
    let checks = selftest::run_all(seed);
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(data(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
