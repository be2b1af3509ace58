use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use tcic::checkpoint::Checkpoint;
use tcic::decode::{sample, ImageCaptioner};
use tcic::experiment::{
    ablate, check_vocabularies, evaluate_models, generate_captions, interpret_dataset, interpretation_report, prepare,
    summary, sweep, train_rl, train_xe, initial_state, ExperimentError, Prepared, RunConfig, RunDir, Stage,
};
use tcic::interpret::Probe;
use tcic::microworld::{generate, Dataset, WorldSpec};

const OUTPUT_ROOT_ENV: &str = "TCIC_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "tcic", version, about = "Scene-graph captioning with theme nodes")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run config; fields not given come from the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    xe_steps: Option<u64>,
    #[arg(long)]
    rl_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    theme_nodes: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Phase {
    Xe,
    Rl,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train the cross-entropy phase, the RL phase, or both.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "both")]
        phase: Phase,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop the phase after this step without changing its schedule.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Decode a split with one checkpoint or an ensemble and score it.
    Eval {
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        /// Write the report here instead of printing only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write captions as JSON lines.
    Generate {
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        /// Draw this many random samples per image instead of beam search.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report which objects and words each theme node is closest to.
    Interpret {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
        #[arg(long)]
        limit: Option<usize>,
        /// Encoder layer to read attention from (default: last).
        #[arg(long)]
        layer: Option<usize>,
        /// Attention head (default: mean over heads).
        #[arg(long)]
        head: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per theme-node count and tabulate dev metrics.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        theme_counts: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Train the ablation ladder T+O, +R, +V, +GE, +CR, +TA.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Generate the synthetic micro-world and write train/dev/test JSON files.
    GenData {
        /// World description; defaults to the built-in world.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut text = match &args.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => "{}".to_string(),
    };
    if let Some(p) = args.preset {
        let mut v: Value = serde_json::from_str(&text)?;
        let name = match p {
            PresetArg::Desk => "desk",
            PresetArg::Paper => "paper",
        };
        v.as_object_mut().context("config must be a JSON object")?.insert("preset".into(), json!(name));
        text = v.to_string();
    }
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.xe_steps {
        cfg.xe.total_steps = n;
    }
    if let Some(n) = args.rl_steps {
        cfg.rl.total_steps = n;
    }
    if let Some(n) = args.batch_size {
        cfg.xe.batch_size = n;
        cfg.rl.batch_size = n;
    }
    if let Some(n) = args.theme_nodes {
        cfg.model.num_theme_nodes = n;
    }
    if let Some(n) = args.beam {
        cfg.beam.beam_size = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(root: &Path, cfg: &RunConfig, name: Option<&str>, default: &str) -> Result<RunDir> {
    let path = match (&cfg.output_dir, name) {
        (_, Some(n)) => root.join(n),
        (Some(p), None) => p.clone(),
        (None, None) => root.join(default),
    };
    Ok(RunDir::create(path)?)
}

fn split<'a>(prep: &'a Prepared, s: SplitArg) -> &'a Dataset {
    match s {
        SplitArg::Train => &prep.splits.train,
        SplitArg::Dev => &prep.splits.dev,
        SplitArg::Test => &prep.splits.test,
    }
}

/// Loads checkpoints and rebuilds the data they were trained on.
fn load_checkpoints(paths: &[PathBuf]) -> Result<(Vec<Checkpoint>, RunConfig, Prepared)> {
    let ckpts = paths
        .iter()
        .map(|p| Checkpoint::load(p).map_err(ExperimentError::from).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    check_vocabularies(&ckpts)?;
    let cfg: RunConfig = serde_json::from_value(ckpts[0].run.clone()).context("checkpoint run config")?;
    let prep = prepare(&cfg)?;
    if prep.vocab != ckpts[0].vocab {
        return Err(ExperimentError::Config("checkpoint vocabulary does not match its dataset".into()).into());
    }
    Ok((ckpts, cfg, prep))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<Value> {
    let root = cli.output_root;
    match cli.command {
        Command::Train { cfg: args, phase, resume, stop_after } => {
            let cfg = load_config(&args)?;
            let prep = prepare(&cfg)?;
            let dir = run_dir(&root, &cfg, args.name.as_deref(), &format!("train-seed{}", cfg.seed))?;
            write_json(&dir.join("config.json"), &cfg)?;
            let mut state = match &resume {
                Some(p) => Checkpoint::load(p).map_err(ExperimentError::from).with_context(|| format!("loading {}", p.display()))?,
                None => initial_state(&prep, &cfg)?,
            };
            if phase == Phase::Rl && state.xe_steps == 0 {
                bail!(ExperimentError::Config("--phase rl needs --resume with a cross-entropy checkpoint".into()));
            }
            if phase != Phase::Rl && state.rl_steps == 0 {
                state = train_xe(&prep, &cfg, state, Some(&dir), stop_after)?;
            }
            let xe_done = state.xe_steps >= cfg.xe.total_steps;
            if phase == Phase::Rl || (phase == Phase::Both && xe_done) {
                state = train_rl(&prep, &cfg, state, Some(&dir), stop_after)?;
            }
            let (dev, _) = evaluate_models(&[&state.model], &prep.vocab, &prep.splits.dev, &cfg.beam, cfg.eval_limit)?;
            let out = summary(&state, &dev);
            write_json(&dir.join("summary.json"), &out)?;
            Ok(json!({ "run_dir": dir.0, "summary": out }))
        }
        Command::Eval { ckpts, split: s, beam, limit, out } => {
            let (states, mut cfg, prep) = load_checkpoints(&ckpts)?;
            if let Some(b) = beam {
                cfg.beam.beam_size = b;
            }
            let models: Vec<_> = states.iter().map(|c| &c.model).collect();
            let (report, _) = evaluate_models(&models, &prep.vocab, split(&prep, s), &cfg.beam, limit)?;
            let v = serde_json::to_value(&report)?;
            if let Some(p) = out {
                write_json(&p, &v)?;
            }
            Ok(v)
        }
        Command::Generate { ckpts, split: s, beam, limit, samples, seed, out } => {
            let (states, mut cfg, prep) = load_checkpoints(&ckpts)?;
            if let Some(b) = beam {
                cfg.beam.beam_size = b;
            }
            let data = split(&prep, s);
            let mut lines = Vec::new();
            match samples {
                None => {
                    let models: Vec<_> = states.iter().map(|c| &c.model).collect();
                    for g in generate_captions(&models, &prep.vocab, data, &cfg.beam, limit)? {
                        lines.push(serde_json::to_string(&g)?);
                    }
                }
                Some(n) => {
                    if states.len() != 1 {
                        bail!(ExperimentError::Config("sampling takes exactly one checkpoint".into()));
                    }
                    let count = limit.unwrap_or(usize::MAX).min(data.examples.len());
                    for (id, e) in data.examples[..count].iter().enumerate() {
                        let mut m = ImageCaptioner::new(&states[0].model, &e.scene_graph)?;
                        for h in sample(&mut m, n, cfg.beam.max_len, seed.wrapping_add(id as u64))? {
                            lines.push(json!({ "id": id, "caption": prep.vocab.decode(&h.tokens), "score": h.log_prob }).to_string());
                        }
                    }
                }
            }
            let path = out.unwrap_or_else(|| root.join("generated.jsonl"));
            if let Some(d) = path.parent() {
                fs::create_dir_all(d)?;
            }
            let mut f = fs::File::create(&path)?;
            for l in &lines {
                writeln!(f, "{l}")?;
            }
            Ok(json!({ "output": path, "captions": lines.len() }))
        }
        Command::Interpret { ckpt, split: s, limit, layer, head, out } => {
            let (states, _, prep) = load_checkpoints(std::slice::from_ref(&ckpt))?;
            let model = &states[0].model;
            if let Some(l) = layer.filter(|&l| l >= model.config.enc_layers) {
                bail!(ExperimentError::Config(format!("layer {l} out of range")));
            }
            if let Some(h) = head.filter(|&h| h >= model.config.heads) {
                bail!(ExperimentError::Config(format!("head {h} out of range")));
            }
            let interp = interpret_dataset(model, &prep.vocab, split(&prep, s), limit, Probe { layer, head })?;
            let report = interpretation_report(&interp);
            let v = json!({ "nodes": report, "object_items": interp.objects.items, "word_items": interp.words.items });
            if let Some(p) = out {
                write_json(&p, &v)?;
            }
            Ok(v)
        }
        Command::Sweep { cfg: args, theme_counts, seeds } => {
            let cfg = load_config(&args)?;
            let prep = prepare(&cfg)?;
            let dir = run_dir(&root, &cfg, args.name.as_deref(), "sweep")?;
            let mut rows = Vec::new();
            for seed in seeds.unwrap_or_else(|| vec![cfg.seed]) {
                let c = RunConfig { seed, ..cfg.clone() };
                rows.extend(sweep(&prep, &c, &theme_counts, Some(&dir))?);
            }
            write_json(&dir.join("sweep.json"), &rows)?;
            Ok(json!({ "run_dir": dir.0, "rows": rows }))
        }
        Command::Ablate { cfg: args, seeds } => {
            let cfg = load_config(&args)?;
            let prep = prepare(&cfg)?;
            let dir = run_dir(&root, &cfg, args.name.as_deref(), "ablation")?;
            let seeds = seeds.unwrap_or_else(|| vec![cfg.seed]);
            let rows = ablate(&prep, &cfg, &Stage::LADDER, &seeds, Some(&dir))?;
            let table: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "stage": r.stage.name(), "seed": r.seed,
                        "bleu4": r.dev.report.bleu[3], "rouge_l": r.dev.report.rouge_l,
                        "cider_d": r.dev.report.cider_d, "theme_recall": r.dev.theme_recall,
                    })
                })
                .collect();
            Ok(json!({ "run_dir": dir.0, "table": table }))
        }
        Command::GenData { world, seed, out } => {
            let mut spec = match world {
                Some(p) => serde_json::from_str::<WorldSpec>(&fs::read_to_string(&p)?).map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))?,
                None => WorldSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let splits = generate(&spec)?;
            let dir = out.unwrap_or_else(|| root.join("data"));
            fs::create_dir_all(&dir)?;
            for (name, d) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
                d.save(&dir.join(format!("{name}.json")))?;
            }
            write_json(&dir.join("world.json"), &spec)?;
            Ok(json!({
                "output": dir,
                "train": splits.train.examples.len(), "dev": splits.dev.examples.len(), "test": splits.test.examples.len(),
            }))
        }
    }
}

fn error_json(kind: &str, message: String) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim().to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<ExperimentError>().map_or("error", ExperimentError::kind);
            eprintln!("{}", error_json(kind, format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
