use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use feedcap::captioner::{Captioner, CAPTIONER_CHECKPOINT_VERSION};
use feedcap::corpus::{load_dataset, save_dataset, Dataset, DATASET_VERSION};
use feedcap::fbn::{save_fbn_dataset, Fbn};
use feedcap::feedback::{load_snapshot, save_snapshot, store_stats, FeedbackStore, StoreFilter};
use feedcap::numerics::CHECKPOINT_VERSION;
use feedcap::{Error, Result};
use feedcap_hub::{Hub, HubConfig, SystemClock};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{sha256_hex, ExperimentConfig, Overrides};
use crate::{gradcheck, pipeline};

#[derive(Debug, Parser)]
#[command(name = "feedcap", version, about = "Caption training with phrase-level feedback")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON). Flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// RL reference/reward mode, e.g. GT, C, A, GT+FB, C+FB, A+FB or 4gt+fb.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Run directory for every artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the training and test scene datasets.
    GenData,
    /// Cross-entropy pretraining of the captioner.
    Pretrain,
    /// Greedy snapshot captions for the RL images.
    Caption,
    /// Run the feedback service over the snapshot captions.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Static files of the annotation client.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Fill the feedback store with scripted-teacher records.
    Teach,
    /// Train the feedback network.
    TrainFbn,
    /// Policy-gradient fine-tuning in the configured mode.
    TrainRl,
    /// Score a captioner checkpoint on the test split.
    Eval {
        /// Defaults to the RL checkpoint of the current mode, else the pretrained one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference gradient checks; fails at relative error 1e-4 or more.
    Gradcheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Caption => "caption",
            Command::Serve { .. } => "serve",
            Command::Teach => "teach",
            Command::TrainFbn => "train-fbn",
            Command::TrainRl => "train-rl",
            Command::Eval { .. } => "eval",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Result of a command: a JSON summary, plus a failure message when the
/// command ran but its check did not pass.
#[derive(Debug)]
pub struct Report {
    pub summary: Value,
    pub failure: Option<Error>,
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("dataset.jsonl")
    }
    pub fn test(&self) -> PathBuf {
        self.root.join("test.jsonl")
    }
    pub fn captioner(&self) -> PathBuf {
        self.root.join("captioner.json")
    }
    pub fn pretrain_report(&self) -> PathBuf {
        self.root.join("pretrain.json")
    }
    pub fn snapshot(&self) -> PathBuf {
        self.root.join("snapshot.jsonl")
    }
    pub fn feedback(&self) -> PathBuf {
        self.root.join("feedback.jsonl")
    }
    pub fn fbn(&self) -> PathBuf {
        self.root.join("fbn.json")
    }
    pub fn fbn_report(&self) -> PathBuf {
        self.root.join("fbn_report.json")
    }
    pub fn fbn_dataset(&self) -> PathBuf {
        self.root.join("fbn_dataset.jsonl")
    }
    pub fn human_fbn_dataset(&self) -> PathBuf {
        self.root.join("fbn_dataset.human.jsonl")
    }
    pub fn rl(&self, mode: &str) -> PathBuf {
        self.root.join(format!("rl-{mode}.json"))
    }
    pub fn rl_log(&self, mode: &str) -> PathBuf {
        self.root.join(format!("rl-{mode}.log.jsonl"))
    }
    pub fn eval(&self, checkpoint: &Path) -> PathBuf {
        let stem = checkpoint
            .file_stem()
            .map_or("checkpoint".into(), |s| s.to_string_lossy());
        self.root.join(format!("eval-{stem}.json"))
    }
    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "missing {}; run `feedcap {producer}` first",
            path.display()
        )))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Hash over both splits, stored in every checkpoint trained on them.
pub fn dataset_hash(run: &RunDir) -> Result<String> {
    require(&run.train(), "gen-data")?;
    require(&run.test(), "gen-data")?;
    let mut bytes = read_bytes(&run.train())?;
    bytes.extend(read_bytes(&run.test())?);
    Ok(sha256_hex(&bytes))
}

fn load_splits(run: &RunDir) -> Result<(Dataset, Dataset)> {
    require(&run.train(), "gen-data")?;
    require(&run.test(), "gen-data")?;
    Ok((load_dataset(&run.train(), None)?, load_dataset(&run.test(), None)?))
}

/// Loads a captioner and refuses it unless it was trained on this run's data.
pub fn load_matching_captioner(run: &RunDir, path: &Path) -> Result<Captioner> {
    require(path, "pretrain")?;
    let (c, trained_on) = Captioner::load(path)?;
    let expected = dataset_hash(run)?;
    match trained_on {
        Some(h) if h == expected => Ok(c),
        Some(h) => Err(Error::Contract(format!(
            "{} was trained on dataset {h}, but {} holds dataset {expected}",
            path.display(),
            run.root.display()
        ))),
        None => Err(Error::Contract(format!(
            "{} records no training dataset",
            path.display()
        ))),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    run: RunDir,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn input(&mut self, p: PathBuf) -> PathBuf {
        self.inputs.push(p.clone());
        p
    }

    fn output(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }

    fn hashes(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        paths
            .iter()
            .filter(|p| p.exists())
            .map(|p| {
                let name = p
                    .strip_prefix(&self.run.root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned();
                Ok((name, file_hash(p)?))
            })
            .collect()
    }

    fn write_manifest(&self, name: &str, command: &str, summary: &Value) -> Result<()> {
        let versions = BTreeMap::from([
            ("feedcap-cli", env!("CARGO_PKG_VERSION").to_string()),
            ("dataset", DATASET_VERSION.to_string()),
            ("captioner_checkpoint", CAPTIONER_CHECKPOINT_VERSION.to_string()),
            ("param_checkpoint", CHECKPOINT_VERSION.to_string()),
        ]);
        let manifest = json!({
            "command": command,
            "config_hash": self.cfg.hash()?,
            "seed": self.cfg.seed,
            "config": self.cfg,
            "versions": versions,
            "inputs": self.hashes(&self.inputs)?,
            "outputs": self.hashes(&self.outputs)?,
            "summary": summary,
        });
        let path = self.run.manifest(name);
        std::fs::create_dir_all(path.parent().expect("manifest dir")).map_err(|e| Error::io(&path, e))?;
        write_json(&path, &manifest)
    }
}

pub fn config_for(common: &CommonArgs) -> Result<ExperimentConfig> {
    let over = Overrides {
        seed: common.seed,
        mode: common.mode.clone(),
        out: common.out.clone(),
    };
    ExperimentConfig::load(common.config.as_deref(), &over)
}

pub fn run(cli: &Cli) -> Result<Report> {
    if let Command::Gradcheck = cli.command {
        let seed = cli.common.seed.unwrap_or(0);
        let s = gradcheck::run(seed)?;
        let summary = serde_json::to_value(&s).map_err(|e| Error::Format(e.to_string()))?;
        let failure = (!s.passed).then(|| {
            Error::Numeric(format!(
                "max relative gradient error {:e} is not below {:e}",
                s.max_rel_error,
                gradcheck::TOLERANCE
            ))
        });
        return Ok(Report { summary, failure });
    }
    let cfg = config_for(&cli.common)?;
    let run = RunDir::new(cfg.paths.out.clone());
    let mut ctx = Ctx {
        cfg,
        run,
        inputs: vec![],
        outputs: vec![],
    };
    let mode = ctx.cfg.rl.mode.to_string();
    let (summary, manifest_name) = match &cli.command {
        Command::GenData => (gen_data(&mut ctx)?, "gen-data".to_string()),
        Command::Pretrain => (pretrain(&mut ctx)?, "pretrain".to_string()),
        Command::Caption => (caption(&mut ctx)?, "caption".to_string()),
        Command::Teach => (teach(&mut ctx)?, "teach".to_string()),
        Command::TrainFbn => (train_fbn(&mut ctx)?, "train-fbn".to_string()),
        Command::TrainRl => (train_rl(&mut ctx)?, format!("train-rl.{mode}")),
        Command::Eval { checkpoint } => {
            let (summary, stem) = eval(&mut ctx, checkpoint.clone())?;
            (summary, format!("eval.{stem}"))
        }
        Command::Serve { addr, ui } => {
            return serve(ctx, *addr, ui.clone()).map(|summary| Report { summary, failure: None })
        }
        Command::Gradcheck => unreachable!("handled above"),
    };
    ctx.write_manifest(&manifest_name, cli.command.name(), &summary)?;
    Ok(Report { summary, failure: None })
}

fn gen_data(ctx: &mut Ctx) -> Result<Value> {
    std::fs::create_dir_all(&ctx.run.root).map_err(|e| Error::io(&ctx.run.root, e))?;
    let (train, test) = pipeline::gen_data(&ctx.cfg)?;
    save_dataset(&train, &ctx.output(ctx.run.train()))?;
    save_dataset(&test, &ctx.output(ctx.run.test()))?;
    Ok(json!({
        "train_scenes": train.len(),
        "test_scenes": test.len(),
        "dataset_hash": dataset_hash(&ctx.run)?,
    }))
}

fn pretrain(ctx: &mut Ctx) -> Result<Value> {
    ctx.input(ctx.run.train());
    ctx.input(ctx.run.test());
    let (train, test) = load_splits(&ctx.run)?;
    let hash = dataset_hash(&ctx.run)?;
    let (c, out) = pipeline::pretrain_captioner(&ctx.cfg, &train)?;
    c.save(&ctx.output(ctx.run.captioner()), Some(hash))?;
    let train_eval = pipeline::evaluate_captioner(&ctx.cfg, &c, &train)?;
    let test_eval = pipeline::evaluate_captioner(&ctx.cfg, &c, &test)?;
    let report = json!({ "epochs": out.log, "train": train_eval, "test": test_eval });
    write_json(&ctx.output(ctx.run.pretrain_report()), &report)?;
    Ok(json!({
        "final_loss": out.log.last().map(|e| e.loss),
        "train_exact_match": train_eval.exact_match,
        "test_exact_match": test_eval.exact_match,
        "test_weighted": test_eval.metrics.weighted,
    }))
}

fn caption(ctx: &mut Ctx) -> Result<Value> {
    ctx.input(ctx.run.train());
    let path = ctx.input(ctx.run.captioner());
    let c = load_matching_captioner(&ctx.run, &path)?;
    let (train, _) = load_splits(&ctx.run)?;
    let subset = pipeline::rl_subset(&ctx.cfg, &train)?;
    let snap = pipeline::snapshot(&ctx.cfg, &c, &subset)?;
    save_snapshot(&snap, &ctx.output(ctx.run.snapshot()))?;
    Ok(json!({ "captions": snap.len(), "empty": subset.records.len() - snap.len() }))
}

fn teach(ctx: &mut Ctx) -> Result<Value> {
    ctx.input(ctx.run.train());
    require(&ctx.run.snapshot(), "caption")?;
    let snap = load_snapshot(&ctx.input(ctx.run.snapshot()))?;
    let (train, _) = load_splits(&ctx.run)?;
    let subset = pipeline::rl_subset(&ctx.cfg, &train)?;
    let store = FeedbackStore::new(ctx.output(ctx.run.feedback()));
    let done: Vec<u64> = store.load(StoreFilter::default())?.iter().map(|r| r.image_id).collect();
    let records = pipeline::teach(&ctx.cfg, &subset, &snap, &done)?;
    store.append_all(&records)?;
    let all = store.load(StoreFilter::default())?;
    Ok(json!({ "added": records.len(), "store": store_stats(&all) }))
}

fn train_fbn(ctx: &mut Ctx) -> Result<Value> {
    let store = FeedbackStore::new(ctx.input(ctx.run.feedback()));
    let mut records = store.load(StoreFilter::default())?;
    let stored = records.len();
    records.extend(pipeline::synthetic_records(&ctx.cfg, ctx.cfg.fbn.synthetic_records)?);
    let (fbn, report, examples) =
        pipeline::train_feedback_network(&ctx.cfg, &records, &pipeline::fbn_train_config(&ctx.cfg))?;
    fbn.save(&ctx.output(ctx.run.fbn()))?;
    save_fbn_dataset(&examples, &ctx.output(ctx.run.fbn_dataset()))?;
    write_json(&ctx.output(ctx.run.fbn_report()), &report)?;
    Ok(json!({
        "stored_records": stored,
        "synthetic_records": ctx.cfg.fbn.synthetic_records,
        "examples": examples.len(),
        "test_accuracy": report.test.accuracy,
        "majority_baseline": report.majority_baseline,
    }))
}

fn train_rl(ctx: &mut Ctx) -> Result<Value> {
    let mode = ctx.cfg.rl.mode;
    ctx.input(ctx.run.train());
    ctx.input(ctx.run.test());
    let path = ctx.input(ctx.run.captioner());
    let c = load_matching_captioner(&ctx.run, &path)?;
    let (train, test) = load_splits(&ctx.run)?;
    let subset = pipeline::rl_subset(&ctx.cfg, &train)?;
    let records = if mode.needs_records() {
        require(&ctx.run.feedback(), "teach")?;
        Some(FeedbackStore::new(ctx.input(ctx.run.feedback())).load(StoreFilter::default())?)
    } else {
        None
    };
    let fbn = if mode.feedback {
        require(&ctx.run.fbn(), "train-fbn")?;
        Some(Fbn::load(&ctx.input(ctx.run.fbn()))?)
    } else {
        None
    };
    let eval = if ctx.cfg.rl.eval_each_epoch {
        Some(pipeline::eval_set(&ctx.cfg, &test)?)
    } else {
        None
    };
    let (tuned, log) = pipeline::reinforce(
        &ctx.cfg,
        &pipeline::rl_config(&ctx.cfg),
        &c,
        &subset,
        records.as_deref(),
        fbn.as_ref(),
        eval.as_ref(),
    )?;
    let name = mode.to_string();
    tuned.save(&ctx.output(ctx.run.rl(&name)), Some(dataset_hash(&ctx.run)?))?;
    log.write_jsonl(&ctx.output(ctx.run.rl_log(&name)))?;
    let last = log.epochs.last();
    Ok(json!({
        "mode": name,
        "epochs": log.epochs.len(),
        "final_mean_reward": last.and_then(|e| e.mean_reward),
        "final_baseline_reward": last.and_then(|e| e.baseline_reward),
    }))
}

fn eval(ctx: &mut Ctx, checkpoint: Option<PathBuf>) -> Result<(Value, String)> {
    let path = checkpoint.unwrap_or_else(|| {
        let rl = ctx.run.rl(&ctx.cfg.rl.mode.to_string());
        if rl.exists() {
            rl
        } else {
            ctx.run.captioner()
        }
    });
    ctx.input(ctx.run.train());
    ctx.input(ctx.run.test());
    ctx.input(path.clone());
    let c = load_matching_captioner(&ctx.run, &path)?;
    let (_, test) = load_splits(&ctx.run)?;
    let report = pipeline::evaluate_captioner(&ctx.cfg, &c, &test)?;
    write_json(&ctx.output(ctx.run.eval(&path)), &report)?;
    let stem = path
        .file_stem()
        .map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    let mut summary = serde_json::to_value(&report).map_err(|e| Error::Format(e.to_string()))?;
    summary["checkpoint"] = json!(path.strip_prefix(&ctx.run.root).unwrap_or(&path));
    Ok((summary, stem))
}

fn serve(mut ctx: Ctx, addr: SocketAddr, ui: Option<PathBuf>) -> Result<Value> {
    require(&ctx.run.snapshot(), "caption")?;
    let snap = load_snapshot(&ctx.input(ctx.run.snapshot()))?;
    let (train, _) = load_splits(&ctx.run)?;
    let store = FeedbackStore::new(ctx.run.feedback());
    let hub_cfg = HubConfig {
        export_path: Some(ctx.run.human_fbn_dataset()),
        ..HubConfig::default()
    };
    let hub = Hub::new(&snap, &train, store, Arc::new(SystemClock::default()), hub_cfg)?;
    let summary = json!({ "listening": addr.to_string(), "tasks": snap.len() });
    ctx.write_manifest("serve", "serve", &summary)?;
    println!("{summary}");
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io(&ctx.run.root, e))?;
    rt.block_on(feedcap_hub::serve(hub, addr, ui))
        .map_err(|e| Error::io(&ctx.run.root, e))?;
    Ok(summary)
}
