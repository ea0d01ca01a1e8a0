//! The `hybrid-aug` command line: config resolution, the on-disk run
//! layout and one function per subcommand.
//!
//! Layout under `--out`:
//! `seed-<s>/data/{train,val,test,augmented}.hyad`,
//! `seed-<s>/models/{base,plus}.ckpt`, `seed-<s>/tables/*.csv`, per-command
//! resolved configs, and the seed-aggregated `report.json` / `sweep/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::aphynity::{AphynityModel, EpochStats, LagrangianConfig};
use crate::augmentation::{build_augmented_dataset, finetune_encoder, AugmentConfig, Augmentable, Augmented};
use crate::checkpoint::{Flavor, HybridModel};
use crate::datasets::{generate_split, standard_splits, Dataset};
use crate::dynamics::{System, SystemSpec};
use crate::evaluation::{emit_report, evaluate_model, za_sweep, ExperimentReport, MeanBaseline, RunMeta, RunRecord, SweepRecord};
use crate::hvae::{default_arch, HvaeConfig, HvaeModel};
use crate::hybrid::{ArchConfig, Predictor};
use crate::selfcheck;
use crate::tensor::Rng;
use crate::Error;

pub const THREADS_ENV: &str = "HYBRID_AUG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "hybrid-aug", version, about = "Hybrid physics/ML models with expert augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate train/val/test datasets.
    GenData(RunArgs),
    /// Train the base hybrid model.
    Train(RunArgs),
    /// Build the expert-augmented dataset and fine-tune the encoder.
    Augment(RunArgs),
    /// Evaluate base and augmented models on validation and shifted test.
    Eval(RunArgs),
    /// Evaluate both models over bins of shifted interaction parameters.
    Sweep(RunArgs),
    /// Run gradient, physics and persistence checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON run config; absent keys take system defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set aphynity.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root of the run.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (falls back to HYBRID_AUG_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Continue training from the existing base checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Shorthand for `--set system=…`.
    #[arg(long)]
    pub system: Option<String>,
    /// Shorthand for `--set flavor=…`.
    #[arg(long)]
    pub flavor: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct SelfcheckArgs {
    #[arg(long)]
    pub threads: Option<usize>,
    /// Add this offset to every analytic primitive gradient (negative control).
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub perturb_grad: f64,
}

/// Bad invocation or config; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Sample counts and evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Seeds aggregated by `eval` and `sweep`; empty means the run seed.
    pub seeds: Vec<u64>,
    pub sweep_bins: usize,
    pub sweep_count: usize,
    /// Also score the per-step training mean.
    pub mean_baseline: bool,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: System,
    pub flavor: Flavor,
    pub seed: u64,
    pub spec: SystemSpec,
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub aphynity: LagrangianConfig,
    pub hvae: HvaeConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn defaults(system: System, flavor: Flavor) -> Self {
        let (train, val, test) = crate::datasets::default_counts(system);
        let arch = match flavor {
            Flavor::Aphynity => ArchConfig::for_system(system),
            Flavor::Hvae => default_arch(system),
        };
        RunConfig {
            system,
            flavor,
            seed: 0,
            spec: SystemSpec::new(system),
            data: DataConfig { train, val, test },
            arch,
            aphynity: LagrangianConfig::for_system(system),
            hvae: HvaeConfig::for_system(system),
            augment: AugmentConfig::default(),
            eval: EvalConfig { seeds: vec![], sweep_bins: 3, sweep_count: 100, mean_baseline: true },
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.spec.system != self.system {
            return Err(Error::Config(format!("spec.system is {} but system is {}", self.spec.system, self.system)));
        }
        self.spec.validate()?;
        self.arch.validate(&self.spec)?;
        self.aphynity.validate()?;
        self.hvae.validate()?;
        self.augment.validate()?;
        self.augment.support(&self.spec)?;
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return Err(Error::Config("data counts must be positive".into()));
        }
        if self.eval.sweep_bins == 0 || self.eval.sweep_count == 0 {
            return Err(Error::Config("sweep needs at least one bin and one sample".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.eval.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.eval.seeds.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse `v` as JSON, falling back to a bare string.
fn parse_value(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> anyhow::Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        if key.is_empty() {
            return Err(usage(format!("bad override path `{path}`")));
        }
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Map::new());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(usage(format!("`{}` is not an object in override `{path}`", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Recursively overlay `top` on `base`; objects merge, everything else
/// replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Config file, then `--system`/`--flavor`/`--set`, then `--seed`, over
/// the defaults of the chosen system and flavour.
pub fn resolve_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut user = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?
        }
        None => json!({}),
    };
    if !user.is_object() {
        return Err(usage("config must be a JSON object"));
    }
    if let Some(s) = &args.system {
        set_path(&mut user, "system", Value::String(s.clone()))?;
    }
    if let Some(f) = &args.flavor {
        set_path(&mut user, "flavor", Value::String(f.clone()))?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("override `{kv}` is not KEY=VALUE")))?;
        set_path(&mut user, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(seed) = args.seed {
        set_path(&mut user, "seed", json!(seed))?;
    }
    let system: System = match user.get("system") {
        Some(Value::String(s)) => s.parse().map_err(|e: Error| usage(e.to_string()))?,
        Some(other) => return Err(usage(format!("system must be a string, got {other}"))),
        None => System::Pendulum,
    };
    // Accept the short alias in the stored form too.
    user["system"] = serde_json::to_value(system)?;
    let flavor: Flavor = match user.get("flavor") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| usage(format!("flavor: {e}")))?,
        None => Flavor::Aphynity,
    };
    let mut full = serde_json::to_value(RunConfig::defaults(system, flavor))?;
    merge(&mut full, user);
    let cfg: RunConfig = serde_json::from_value(full).map_err(|e| usage(format!("invalid config: {e}")))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn threads_from(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads_from(flag)? {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Paths of one seed's artifacts.
pub struct SeedDir(pub PathBuf);

impl SeedDir {
    pub fn new(out: &Path, seed: u64) -> Self {
        SeedDir(out.join(format!("seed-{seed}")))
    }
    pub fn data(&self, split: &str) -> PathBuf {
        self.0.join("data").join(format!("{split}.hyad"))
    }
    pub fn model(&self, which: &str) -> PathBuf {
        self.0.join("models").join(format!("{which}.ckpt"))
    }
    pub fn table(&self, name: &str) -> PathBuf {
        self.0.join("tables").join(name)
    }
}

fn ensure_dir(p: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_config(dir: &Path, command: &str, cfg: &RunConfig) -> anyhow::Result<()> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{command}.config.json"));
    fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("missing {what}: {}", path.display())))
    }
}

fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    require(path, "dataset")?;
    Ok(Dataset::load(path)?)
}

fn load_model(path: &Path) -> anyhow::Result<(HybridModel, Value)> {
    require(path, "checkpoint")?;
    Ok(HybridModel::load(path)?)
}

fn write_history(path: &Path, history: &[EpochStats]) -> anyhow::Result<()> {
    ensure_dir(path.parent().expect("table paths have a parent"))?;
    let keys: Vec<String> = history.first().map(|h| h.terms.keys().cloned().collect()).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string()];
    header.extend(keys.iter().cloned());
    w.write_record(&header)?;
    for h in history {
        let mut row = vec![h.epoch.to_string()];
        row.extend(keys.iter().map(|k| h.terms.get(k).map(|v| format!("{v}")).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let dir = SeedDir::new(out, cfg.seed);
    ensure_dir(&dir.0.join("data"))?;
    let counts = (cfg.data.train, cfg.data.val, cfg.data.test);
    for split in standard_splits(&cfg.spec, counts, cfg.seed) {
        let data = generate_split(&split)?;
        let path = dir.data(&split.name);
        data.save(&path)?;
        eprintln!("wrote {} ({} samples)", path.display(), data.len());
    }
    write_config(&dir.0, "gen-data", cfg)
}

fn fresh_model(cfg: &RunConfig) -> anyhow::Result<HybridModel> {
    Ok(match cfg.flavor {
        Flavor::Aphynity => HybridModel::Aphynity(AphynityModel::new(cfg.spec.clone(), cfg.arch.clone(), &cfg.aphynity, cfg.seed)?),
        Flavor::Hvae => HybridModel::Hvae(HvaeModel::new(cfg.spec.clone(), cfg.arch.clone(), &cfg.hvae, cfg.seed)?),
    })
}

fn log_epoch(prefix: &str, h: Option<&EpochStats>) {
    if let Some(h) = h {
        let terms: Vec<String> = h.terms.iter().map(|(k, v)| format!("{k}={v:.5}")).collect();
        eprintln!("{prefix} epoch {:>4}  {}", h.epoch, terms.join(" "));
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: bool) -> anyhow::Result<()> {
    let dir = SeedDir::new(out, cfg.seed);
    let train = load_data(&dir.data("train"))?;
    if train.system_spec()? != cfg.spec {
        return Err(usage("training data was generated for a different system spec"));
    }
    let ckpt = dir.model("base");
    ensure_dir(ckpt.parent().expect("model paths have a parent"))?;
    let mut model = if resume && ckpt.exists() {
        let (m, _) = HybridModel::load(&ckpt)?;
        if m.flavor() != cfg.flavor {
            return Err(usage(format!("checkpoint is {} but the config asks for {}", m.flavor().name(), cfg.flavor.name())));
        }
        eprintln!("resuming from epoch {}", m.epoch());
        m
    } else {
        fresh_model(cfg)?
    };
    let notes = json!({ "config_hash": cfg.hash(), "seed": cfg.seed });
    let save = |m: HybridModel| m.save(&ckpt, notes.clone());
    let result = match &mut model {
        HybridModel::Aphynity(m) => m.train(&train, &cfg.aphynity, cfg.seed, |m| {
            log_epoch("train", m.state.history.last());
            save(HybridModel::Aphynity(m.clone()))
        }),
        HybridModel::Hvae(m) => m.train(&train, &cfg.hvae, cfg.seed, |m| {
            log_epoch("train", m.state.history.last());
            save(HybridModel::Hvae(m.clone()))
        }),
    };
    if let Err(e) = result {
        let last = if ckpt.exists() { HybridModel::load(&ckpt).map(|(m, _)| m.epoch()).unwrap_or(0) } else { 0 };
        return Err(anyhow!(e).context(format!("training failed; last good epoch {last} saved at {}", ckpt.display())));
    }
    // Also covers resuming a finished run, which trains zero epochs.
    model.save(&ckpt, notes)?;
    write_history(&dir.table("train_loss.csv"), model.history())?;
    write_config(&dir.0, "train", cfg)
}

fn run_augment<M: Augmentable>(
    base: &M,
    train: &Dataset,
    cfg: &AugmentConfig,
    seed: u64,
) -> anyhow::Result<(M, Augmented, Vec<EpochStats>)> {
    let aug = build_augmented_dataset(base, train, cfg, Rng::derive_seed(seed, 0))?;
    let mut plus = base.clone();
    let stats = finetune_encoder(&mut plus, &aug.data, cfg, Rng::derive_seed(seed, 1), |s| {
        log_epoch("finetune", Some(s));
        Ok(())
    })?;
    Ok((plus, aug, stats))
}

pub fn cmd_augment(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let dir = SeedDir::new(out, cfg.seed);
    let train = load_data(&dir.data("train"))?;
    let (base, _) = load_model(&dir.model("base"))?;
    let (plus, aug, stats) = match &base {
        HybridModel::Aphynity(m) => {
            let (p, a, s) = run_augment(m, &train, &cfg.augment, cfg.seed)?;
            (HybridModel::Aphynity(p), a, s)
        }
        HybridModel::Hvae(m) => {
            let (p, a, s) = run_augment(m, &train, &cfg.augment, cfg.seed)?;
            (HybridModel::Hvae(p), a, s)
        }
    };
    if plus.decoder_hash() != base.decoder_hash() {
        bail!("fine-tuning changed the decoder");
    }
    aug.data.save(&dir.data("augmented"))?;
    let notes = json!({
        "base_decoder_hash": base.decoder_hash(),
        "augment": cfg.augment,
        "ze_support": cfg.augment.support(&cfg.spec)?,
        "skipped": aug.skipped,
        "config_hash": cfg.hash(),
    });
    plus.save(&dir.model("plus"), notes)?;
    write_history(&dir.table("finetune_loss.csv"), &stats)?;
    eprintln!("augmented {} samples ({} skipped)", aug.data.len(), aug.skipped);
    write_config(&dir.0, "augment", cfg)
}

fn model_names(flavor: Flavor) -> (String, String) {
    (flavor.name().to_string(), format!("{}+", flavor.name()))
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExperimentReport> {
    let mut runs = Vec::new();
    for seed in cfg.seeds() {
        let dir = SeedDir::new(out, seed);
        let (base, _) = load_model(&dir.model("base"))?;
        let plus_path = dir.model("plus");
        let plus = if plus_path.exists() { Some(HybridModel::load(&plus_path)?.0) } else { None };
        let (base_name, plus_name) = model_names(base.flavor());
        let mean = if cfg.eval.mean_baseline { Some(MeanBaseline::fit(&load_data(&dir.data("train"))?)?) } else { None };
        for split in ["val", "test"] {
            let data = load_data(&dir.data(split))?;
            let mut models: Vec<(&str, &dyn Predictor)> = vec![(&base_name, base.predictor())];
            if let Some(p) = &plus {
                models.push((&plus_name, p.predictor()));
            }
            if let Some(m) = &mean {
                models.push(("mean", m));
            }
            for (name, model) in models {
                let m = evaluate_model(model, &data, seed)?;
                eprintln!("seed {seed} {split:<5} {name:<10} log-MSE {:>8.4}  z_e error {}", m.log_mse.value, fmt_pct(m.ze_error));
                runs.push(RunRecord {
                    split: split.into(),
                    model: name.into(),
                    seed,
                    log_mse: m.log_mse.value,
                    ze_error: m.ze_error,
                    n: m.n,
                });
            }
        }
    }
    let report = ExperimentReport::new(meta(cfg), runs, vec![]);
    emit_report(&report, out)?;
    write_config(out, "eval", cfg)?;
    Ok(report)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "-".into())
}

fn meta(cfg: &RunConfig) -> RunMeta {
    RunMeta { system: cfg.system.to_string(), seeds: cfg.seeds(), flavor: cfg.flavor.name().into(), config_hash: cfg.hash() }
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExperimentReport> {
    let mut rows = Vec::new();
    for seed in cfg.seeds() {
        let dir = SeedDir::new(out, seed);
        let (base, _) = load_model(&dir.model("base"))?;
        let (plus, _) = load_model(&dir.model("plus"))?;
        let (base_name, plus_name) = model_names(base.flavor());
        let table = za_sweep(base.predictor(), plus.predictor(), &cfg.spec, cfg.eval.sweep_bins, cfg.eval.sweep_count, seed)?;
        for r in table {
            eprintln!(
                "seed {seed} bin {} [{:.3}, {:.3}]  {base_name} {:>8.4}  {plus_name} {:>8.4}",
                r.bin, r.lo, r.hi, r.base.log_mse.value, r.plus.log_mse.value
            );
            for (name, m) in [(&base_name, &r.base), (&plus_name, &r.plus)] {
                rows.push(SweepRecord { bin: r.bin, lo: r.lo, hi: r.hi, model: name.clone(), seed, log_mse: m.log_mse.value, n: m.n });
            }
        }
    }
    let report = ExperimentReport::new(meta(cfg), vec![], rows);
    let dir = out.join("sweep");
    emit_report(&report, &dir)?;
    write_config(&dir, "sweep", cfg)?;
    Ok(report)
}

/// Prints one line per check; the error lists the failures.
pub fn cmd_selfcheck(perturb: f64) -> anyhow::Result<()> {
    let checks = selfcheck::run_all(perturb)?;
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| format!("{}/{}", c.group, c.name)).collect();
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        bail!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))
    }
}

fn out_dir(args: &RunArgs) -> anyhow::Result<&Path> {
    args.out.as_deref().ok_or_else(|| usage("--out is required"))
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let started = Instant::now();
    let run = |args: &RunArgs, f: &dyn Fn(&RunConfig, &Path) -> anyhow::Result<()>| -> anyhow::Result<()> {
        init_threads(args.threads)?;
        let out = out_dir(args)?;
        let cfg = resolve_config(args)?;
        f(&cfg, out)
    };
    match &cli.command {
        Command::GenData(a) => run(a, &cmd_gen_data)?,
        Command::Train(a) => run(a, &|c, o| cmd_train(c, o, a.resume))?,
        Command::Augment(a) => run(a, &cmd_augment)?,
        Command::Eval(a) => run(a, &|c, o| cmd_eval(c, o).map(|_| ()))?,
        Command::Sweep(a) => run(a, &|c, o| cmd_sweep(c, o).map(|_| ()))?,
        Command::Selfcheck(a) => {
            init_threads(a.threads)?;
            cmd_selfcheck(a.perturb_grad)?
        }
    }
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Exit status for an error: 2 for usage and config problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() || matches!(err.downcast_ref::<Error>(), Some(Error::Config(_))) {
        2
    } else {
        1
    }
}

/// Parse `argv`, run, and return the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
