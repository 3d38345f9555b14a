//! `oazr` command-line front end.

mod config;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oazr_core::geometry::io::{read_motions, read_views, write_views};
use oazr_core::geometry::{render_dataset, ProjectedView};
use oazr_core::inference::{
    candidate_embeddings, fuse_views, group_by_sequence, predict, score_against, seen_eval, zsl_eval, EvalMode,
    Split, ViewMode,
};
use oazr_core::model::ModelBundle;
use oazr_core::synthdata::{gen_dataset, standard_specs, ActionSpec, YawDistribution, GENERATORS};
use oazr_core::textbank::{build_table, load_embedding_table, DescriptionCatalog, TextBank};
use oazr_core::training::{format_metrics, train};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "oazr", version, about = "Orientation-aware skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic 3D motions.
    GenSynth(GenSynthArgs),
    /// Render motions from the virtual camera rig.
    Project(ProjectArgs),
    /// Build a text embedding table from a description catalog.
    EmbedText(EmbedTextArgs),
    /// Train a model on projected views.
    Train(TrainArgs),
    /// Evaluate a model and write a report.
    Eval(EvalArgs),
    /// Predict an action for every item.
    Infer(InferArgs),
    /// Run the built-in occlusion and gradient checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output motion file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Motions per class.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Comma-separated generator names; all six by default.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Fixed body yaw in degrees; uniform over the circle when absent.
    #[arg(long, allow_hyphen_values = true)]
    yaw: Option<f64>,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ProjectArgs {
    /// Input motion file.
    #[arg(long)]
    motions: PathBuf,
    /// Output view file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Run configuration (rig, noise, frames).
    #[arg(long, long_help = config::keys_help())]
    config: Option<PathBuf>,
    /// Seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EmbedTextArgs {
    /// Output table.
    #[arg(long)]
    out: PathBuf,
    /// Description catalog (TSV); the built-in one when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Comma-separated actions; every catalog action by default.
    #[arg(long, value_delimiter = ',')]
    actions: Vec<String>,
    /// Run configuration (D_t sets the width).
    #[arg(long, long_help = config::keys_help())]
    config: Option<PathBuf>,
    /// Hash seed of the embedder.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TextArgs {
    /// Embedding table.
    #[arg(long)]
    table: PathBuf,
    /// Description catalog used for missing table entries.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration.
    #[arg(long, long_help = config::keys_help())]
    config: Option<PathBuf>,
    /// Training views; the configuration's `data` when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Embedding table; the configuration's `table` when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Description catalog used for missing table entries.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Checkpoint path; the configuration's `out` when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics log; `<out>.metrics.tsv` by default.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Comma-separated training classes; every label in the data by default.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Test views.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    text: TextArgs,
    /// zsl, zscd or seen.
    #[arg(long, default_value = "zsl")]
    mode: EvalMode,
    /// sv or mv.
    #[arg(long, default_value = "mv")]
    view_mode: ViewMode,
    /// Comma-separated candidate classes; for zsl and zscd, every test label
    /// the model was not trained on by default.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    /// Name written to the report.
    #[arg(long, default_value = "default")]
    split_name: String,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hash seed for text missing from the table.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// Views to label.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    text: TextArgs,
    /// Comma-separated candidate classes; the model's classes by default.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    /// sv or mv.
    #[arg(long, default_value = "mv")]
    view_mode: ViewMode,
    /// Prediction file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hash seed for text missing from the table.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    /// Random occlusion scenes.
    #[arg(long, default_value_t = 1000)]
    scenes: usize,
    /// Parameters sampled per gradient check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_catalog(path: Option<&Path>) -> Result<DescriptionCatalog> {
    Ok(match path {
        Some(p) => DescriptionCatalog::load(p).with_context(|| format!("loading catalog {}", p.display()))?,
        None => DescriptionCatalog::builtin(),
    })
}

fn load_bank(text: &TextArgs, seed: u64) -> Result<TextBank> {
    let table = load_embedding_table(&text.table).with_context(|| format!("loading table {}", text.table.display()))?;
    Ok(TextBank::new(table, load_catalog(text.catalog.as_deref())?, seed))
}

fn load_views(path: &Path) -> Result<Vec<ProjectedView>> {
    let views = read_views(path).with_context(|| format!("loading views {}", path.display()))?;
    if views.is_empty() {
        bail!("{} holds no views", path.display());
    }
    Ok(views)
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    ModelBundle::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn labels_of(views: &[ProjectedView]) -> Vec<String> {
    views.iter().map(|v| v.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn gen_synth(a: GenSynthArgs) -> Result<String> {
    let specs: Vec<ActionSpec> = if a.classes.is_empty() {
        standard_specs()
    } else {
        a.classes
            .iter()
            .map(|c| ActionSpec::standard(c))
            .collect::<oazr_core::Result<_>>()
            .with_context(|| format!("known generators: {}", GENERATORS.join(", ")))?
    };
    let yaw = a.yaw.map_or(YawDistribution::default(), YawDistribution::Fixed);
    let data = gen_dataset(&specs, a.per_class, yaw, a.seed)?;
    data.write(&a.out)?;
    Ok(format!(
        "gen-synth motions={} classes={} seed={} out={}",
        data.motions.len(),
        data.classes.len(),
        a.seed,
        a.out.display()
    ))
}

fn project(a: ProjectArgs) -> Result<String> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let motions = read_motions(&a.motions).with_context(|| format!("loading motions {}", a.motions.display()))?;
    let r = render_dataset(&motions, &cfg.rig, &cfg.noise, cfg.frames, cfg.seed)?;
    write_views(&a.out, &r.views)?;
    Ok(format!(
        "project motions={} views={} dropped={} occluded={} seed={} out={}",
        motions.len(),
        r.views.len(),
        r.dropped.len(),
        r.stats.occluded,
        cfg.seed,
        a.out.display()
    ))
}

fn embed_text(a: EmbedTextArgs) -> Result<String> {
    let cfg = load_config(a.config.as_deref(), None)?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    let actions = if a.actions.is_empty() { catalog.actions() } else { a.actions };
    if actions.is_empty() {
        bail!("no actions to embed");
    }
    let table = build_table(&catalog, &actions, cfg.text_dim, a.seed)?;
    table.save(&a.out)?;
    Ok(format!(
        "embed-text actions={} entries={} dim={} seed={} out={}",
        actions.len(),
        table.len(),
        table.dim(),
        a.seed,
        a.out.display()
    ))
}

fn train_cmd(a: TrainArgs) -> Result<String> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let pick = |flag: Option<PathBuf>, key: &Option<PathBuf>, name: &str| {
        flag.or_else(|| key.clone())
            .with_context(|| format!("--{name} is required when the configuration has no `{name}`"))
    };
    let data = pick(a.data, &cfg.data, "data")?;
    let table = pick(a.table, &cfg.table, "table")?;
    let out = pick(a.out, &cfg.out, "out")?;
    let catalog = a.catalog.or_else(|| cfg.catalog.clone());
    let bank = load_bank(&TextArgs { table, catalog }, cfg.seed)?;
    let all = load_views(&data)?;
    let classes = if a.classes.is_empty() { labels_of(&all) } else { a.classes };
    let views: Vec<ProjectedView> = all.into_iter().filter(|v| classes.contains(&v.label)).collect();
    if views.is_empty() {
        bail!("no view carries one of the training classes");
    }
    let outcome = train(&views, &classes, &bank, cfg.model_config(classes.len()), &cfg.train_config())?;
    outcome.bundle.save(&out)?;
    let metrics = a.metrics.unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".metrics.tsv");
        s.into()
    });
    std::fs::write(&metrics, format_metrics(&outcome.metrics))
        .with_context(|| format!("writing {}", metrics.display()))?;
    let last = outcome.metrics.last().expect("at least one epoch");
    Ok(format!(
        "train items={} classes={} epochs={} total={:.6} seed={} out={} metrics={}",
        views.len(),
        classes.len(),
        outcome.metrics.len(),
        last.losses.total,
        cfg.seed,
        out.display(),
        metrics.display()
    ))
}

fn eval_cmd(a: EvalArgs) -> Result<String> {
    let bundle = load_model(&a.model)?;
    let views = load_views(&a.data)?;
    let report = match a.mode {
        EvalMode::Seen => seen_eval(&views, &bundle, &a.split_name, a.view_mode)?,
        mode => {
            let unseen = if a.candidates.is_empty() {
                labels_of(&views)
                    .into_iter()
                    .filter(|c| !bundle.classes.contains(c))
                    .collect()
            } else {
                a.candidates
            };
            let split = Split::new(a.split_name.clone(), bundle.classes.clone(), unseen)?;
            let bank = load_bank(&a.text, a.seed)?;
            zsl_eval(&views, &bundle, &bank, &split, mode, a.view_mode)?
        }
    };
    emit(a.out.as_deref(), &report.to_tsv())?;
    Ok(format!(
        "eval mode={} view_mode={} top1={:.6} top5={:.6} n_items={}",
        report.mode, report.view_mode, report.top1, report.top5, report.n_items
    ))
}

fn infer_cmd(a: InferArgs) -> Result<String> {
    let bundle = load_model(&a.model)?;
    let views = load_views(&a.data)?;
    let bank = load_bank(&a.text, a.seed)?;
    let candidates = if a.candidates.is_empty() { bundle.classes.clone() } else { a.candidates };
    let mut cache = std::collections::BTreeMap::new();
    let mut text = String::from("item\tlabel\tpredicted\tscore\tviews\n");
    let groups = group_by_sequence(&views)?;
    for (i, g) in groups.iter().enumerate() {
        let chosen = match a.view_mode {
            ViewMode::Sv => vec![g.designated()],
            ViewMode::Mv => g.views.clone(),
        };
        let mut scores = Vec::with_capacity(chosen.len());
        for v in chosen {
            if !cache.contains_key(&v.theta_deg) {
                let t = candidate_embeddings(&bundle, &bank, &candidates, Some(v.theta_deg))?;
                cache.insert(v.theta_deg, t);
            }
            let m = bundle.model.run_view(&bundle.store, v)?.joint;
            scores.push(score_against(&m, &cache[&v.theta_deg])?);
        }
        let fused = fuse_views(&scores)?;
        let p = predict(&fused, a.view_mode)?;
        let item = g.views[0].sequence.map_or_else(|| format!("v{i}"), |s| s.to_string());
        text += &format!(
            "{item}\t{}\t{}\t{:.6}\t{}\n",
            g.label, candidates[p.k_hat], fused.s_bar[p.k_hat], fused.views_used
        );
    }
    emit(a.out.as_deref(), &text)?;
    Ok(format!(
        "infer items={} candidates={} view_mode={}",
        groups.len(),
        candidates.len(),
        a.view_mode
    ))
}

fn selftest(a: SelftestArgs) -> Result<String> {
    const TOLERANCE: f64 = 1e-5;
    let r = oazr_core::selftest::run(a.seed, a.scenes, a.samples)?;
    let o = r.occlusion;
    eprintln!(
        "occlusion: scenes={} excluded={} occluded={} disagreements={}",
        o.scenes, o.excluded, o.occluded, o.disagreements
    );
    for (lambda, g) in &r.gradients {
        eprintln!(
            "gradient lambda={lambda}: checked={} max_rel_error={:.3e} near_kink={} unresolved={}",
            g.checked, g.max_relative_error, g.skipped_near_kink, g.skipped_unresolved
        );
    }
    if !r.passed(TOLERANCE) {
        bail!("selftest failed");
    }
    let worst = r.gradients.iter().map(|(_, g)| g.max_relative_error).fold(0.0, f64::max);
    Ok(format!(
        "selftest ok scenes={} disagreements=0 max_rel_error={worst:.3e} seed={}",
        o.scenes, a.seed
    ))
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Project(a) => project(a),
        Command::EmbedText(a) => embed_text(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Selftest(a) => selftest(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
