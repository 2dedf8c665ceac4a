//! The `oa` command-line tool.
//!
//! Every failure prints one line, `oa: error: <kind>: <message>`, to stderr
//! and exits with status 1; usage errors exit with status 2.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneSpec;
use crate::binio::write_atomic;
use crate::corpus::{self, explode, read_jsonl, synth, write_jsonl, DatasetStats, Preprocessing, Split};
use crate::experiment::{
    bench, bench_table, evaluate, prepare, report, run_crossdataset, run_cv, run_fixed_split, summary_csv, summary_markdown,
    RunOptions, RunSummary, TrainConfig,
};
use crate::gradcheck::{layer_suite, op_suite, suite_table};
use crate::model::ScopeModel;
use crate::ortho::{OAConfig, Variant};
use crate::{Error, Result};

/// Environment variable that overrides the configured seed of `oa train`.
pub const SEED_ENV: &str = "OA_SEED";

#[derive(Debug, Parser)]
#[command(name = "oa", version, about = "Orthogonal Attention negation scope resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// *sem-style CoNLL columns
    Sem,
    /// BioScope/SFU-style XML
    Bioscope,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert annotated corpora to canonical JSONL, one sample per cue.
    Ingest {
        #[arg(long, value_enum)]
        format: Format,
        /// Input file; repeat to concatenate several.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Split tag for each input, in order (train, dev or test).
        #[arg(long, value_parser = parse_split)]
        split: Vec<Split>,
        /// Source name stored with every sample; defaults to the output file stem.
        #[arg(long)]
        source: Option<String>,
    },
    /// Train and evaluate with cross-validation. Samples that all carry split
    /// tags are trained on their fixed split instead, repeated with 10 seeds;
    /// --test-data trains on folds of --data and tests on folds of it.
    Train {
        /// TOML run configuration; flags take precedence over it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        prep: Option<Preprocessing>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Overrides OA_SEED and the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Parent of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Token-level metrics of a saved model on a JSONL corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference checks of every operation and layer.
    Gradcheck {
        /// Check one variant; all four by default.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inference timings per variant and batch size.
    Bench {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, value_delimiter = ',', default_value = "1,8,32")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a rule-generated corpus as JSONL.
    Synth {
        #[arg(long, default_value_t = synth::BUNDLED_LEN)]
        n: usize,
        #[arg(long, default_value_t = synth::BUNDLED_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare finished runs: one row per run, best per train/test pair marked.
    Report {
        /// Run directories, or directories containing them.
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Write report.csv and report.md here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score pooled token counts instead of averaging fold F1s.
        #[arg(long)]
        pooled: bool,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (expected train, dev or test)")),
    }
}

/// Dataset paths of a run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// The file given to `oa train --config`. Every key is optional:
///
/// ```toml
/// n_heads = 4                 # OA heads; defaults to the largest valid count up to 12
///
/// [train]                     # TrainConfig fields
/// epochs = 60
/// variant = "ca"
/// preprocessing = "augment"
///
/// [backbone]
/// kind = "toy_encoder"        # or "precomputed" with d and path
/// d = 64
///
/// [data]
/// train = "bioscope-abstracts.jsonl"   # relative to the config file
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub n_heads: Option<usize>,
    pub train: TrainConfig,
    pub backbone: BackboneSpec,
    pub data: DataPaths,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let BackboneSpec::Precomputed { path: p, .. } = &mut cfg.backbone {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn heads(&self) -> Result<usize> {
        let d = self.backbone.d();
        self.n_heads
            .or_else(|| OAConfig::default_heads(d))
            .ok_or_else(|| Error::Config(format!("no head count divides d = {d} into perfect squares; set n_heads")))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oa: error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { format, inputs, out, split, source } => cmd_ingest(format, &inputs, &out, &split, source).map(drop),
        Command::Train { config, variant, prep, data, test_data, seed, out, jobs } => {
            let mut cfg = match &config {
                Some(p) => RunConfigFile::load(p)?,
                None => RunConfigFile::default(),
            };
            if let Some(s) = env_seed()? {
                cfg.train.seed = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(v) = variant {
                cfg.train.variant = v;
            }
            if let Some(p) = prep {
                cfg.train.preprocessing = p;
            }
            if data.is_some() {
                cfg.data.train = data;
            }
            if test_data.is_some() {
                cfg.data.test = test_data;
            }
            let dir = cmd_train(&cfg, &out, jobs)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Eval { checkpoint, data } => cmd_eval(&checkpoint, &data),
        Command::Gradcheck { variant, d, heads, seed } => cmd_gradcheck(variant, d, heads, seed),
        Command::Bench { variant, batch_sizes, repeats, d, heads, seed } => cmd_bench(variant, &batch_sizes, repeats, d, heads, seed),
        Command::Synth { n, seed, out } => {
            write_jsonl(&out, &synth::generate(n, seed))?;
            println!("wrote {n} samples to {}", out.display());
            Ok(())
        }
        Command::Report { runs, out, pooled } => cmd_report(&runs, out.as_deref(), pooled),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn variants(v: Option<Variant>) -> Vec<Variant> {
    v.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v])
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

/// Parses every input before writing, so a malformed file leaves no output.
pub fn cmd_ingest(format: Format, inputs: &[PathBuf], out: &Path, splits: &[Split], source: Option<String>) -> Result<DatasetStats> {
    if !splits.is_empty() && splits.len() != inputs.len() {
        return Err(Error::Config(format!("{} --split values for {} inputs", splits.len(), inputs.len())));
    }
    let source = source.unwrap_or_else(|| stem(out));
    let (mut sentences, mut samples) = (Vec::new(), Vec::new());
    for (i, path) in inputs.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = match format {
            Format::Sem => corpus::parse_sem_conll(&text),
            Format::Bioscope => corpus::parse_bioscope_xml(&text),
        }
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for raw in &parsed {
            for mut s in explode(raw, &source)? {
                s.split = splits.get(i).copied();
                samples.push(s);
            }
        }
        sentences.extend(parsed);
    }
    write_jsonl(out, &samples)?;
    let stats = DatasetStats::of(&sentences, &samples);
    println!(
        "{}: {} sentences, {} with negation, {} samples",
        out.display(),
        stats.sentences,
        stats.negated_sentences,
        stats.samples
    );
    Ok(stats)
}

/// Runs the configured protocol and writes the run directory
/// `<out>/<run-id>/`, which it returns.
pub fn cmd_train(cfg: &RunConfigFile, out: &Path, jobs: usize) -> Result<PathBuf> {
    let train_path = cfg.data.train.as_ref().ok_or_else(|| Error::Config("no training data: pass --data or set data.train".into()))?;
    let spec = cfg.train.model_spec(&cfg.backbone, cfg.heads()?)?;
    let samples = read_jsonl(train_path)?;
    let name = stem(train_path);
    let run_dir = |id: &str| -> Result<PathBuf> {
        let dir = out.join(id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    };
    let test = cfg.data.test.as_ref().map(|p| Ok::<_, Error>((read_jsonl(p)?, stem(p)))).transpose()?;
    let test_name = test.as_ref().map_or(name.as_str(), |t| t.1.as_str());
    let dir = run_dir(&RunSummary::run_id(&name, test_name, &cfg.train))?;
    let opts = RunOptions { jobs, checkpoint_dir: Some(dir.clone()) };
    write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let summary = match &test {
        Some((t, tn)) => run_crossdataset((&samples, &name), (t, tn), &cfg.train, &spec, &opts)?,
        None if !samples.is_empty() && samples.iter().all(|s| s.split.is_some()) => {
            run_fixed_split(&samples, &name, &cfg.train, &spec, &opts)?
        }
        None => run_cv(&samples, &name, &cfg.train, &spec, &opts)?,
    };
    for f in &summary.folds {
        write_atomic(&dir.join(format!("fold{}.json", f.fold)), serde_json::to_string_pretty(f)?.as_bytes())?;
    }
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_atomic(&dir.join("summary.csv"), summary_csv(&summary)?.as_bytes())?;
    write_atomic(&dir.join("summary.md"), summary_markdown(&summary).as_bytes())?;
    log::info!("{}: macro F1 {:.4}", summary.run_id, summary.macro_f1);
    Ok(dir)
}

pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<()> {
    let (model, meta) = ScopeModel::load(checkpoint)?;
    let samples = read_jsonl(data)?;
    let vocab = *model.backbone.vocab().ok_or_else(|| Error::Config("evaluation needs a token-id backbone".into()))?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let prepared = prepare(&samples, &idx, meta.preprocessing, &vocab, meta.max_len)?;
    let c = evaluate(&model, &prepared)?;
    let m = c.metrics();
    println!("precision {:.4} recall {:.4} f1 {:.4} (tp {} fp {} fn {} tn {})", m.precision, m.recall, m.f1, c.tp, c.fp, c.fn_, c.tn);
    Ok(())
}

pub fn cmd_gradcheck(variant: Option<Variant>, d: usize, heads: usize, seed: u64) -> Result<()> {
    let mut rows = op_suite(seed)?;
    for v in variants(variant) {
        rows.extend(layer_suite(v, d, heads, seed)?);
    }
    print!("{}", suite_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::Check(format!("{failed} of {} gradient checks failed", rows.len())));
    }
    Ok(())
}

pub fn cmd_bench(variant: Option<Variant>, batch_sizes: &[usize], repeats: usize, d: usize, heads: usize, seed: u64) -> Result<()> {
    let backbone = match BackboneSpec::toy() {
        BackboneSpec::ToyEncoder { vocab_size, n_layers, max_len, .. } => {
            BackboneSpec::ToyEncoder { d, vocab_size, n_layers, n_heads: heads, max_len }
        }
        other => other,
    };
    let mut rows = Vec::new();
    for v in variants(variant) {
        let cfg = TrainConfig { variant: v, ..TrainConfig::default() };
        rows.extend(bench(&cfg.model_spec(&backbone, heads)?, batch_sizes, repeats, seed)?);
    }
    print!("{}", bench_table(&rows));
    Ok(())
}

/// Directories holding a `summary.json`, either given directly or one level down.
fn find_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for p in paths {
        if p.join("summary.json").is_file() {
            found.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
        let mut sub: Vec<PathBuf> =
            entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|d| d.join("summary.json").is_file()).collect();
        if sub.is_empty() {
            return Err(Error::Config(format!("{}: no summary.json found", p.display())));
        }
        sub.sort();
        found.extend(sub);
    }
    Ok(found)
}

pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>, pooled: bool) -> Result<()> {
    let summaries = find_runs(runs)?
        .iter()
        .map(|dir| {
            let path = dir.join("summary.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(serde_json::from_str::<RunSummary>(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let rep = report(&summaries, pooled);
    let md = rep.markdown();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("report.csv"), rep.csv()?.as_bytes())?;
        write_atomic(&dir.join("report.md"), md.as_bytes())?;
    }
    print!("{md}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_keys_are_optional_and_checked() {
        let cfg: RunConfigFile = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfigFile::default());
        assert_eq!(cfg.heads().unwrap(), 4);
        let cfg: RunConfigFile = toml::from_str("[train]\nepochs = 3\n[backbone]\nkind = \"toy_encoder\"\nd = 16").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.backbone.d(), 16);
        assert!(toml::from_str::<RunConfigFile>("[train]\nepoch = 3").is_err());
        assert!(toml::from_str::<RunConfigFile>("bogus = 1").is_err());
    }

    #[test]
    fn echoed_config_parses_back() {
        let mut cfg = RunConfigFile::default();
        cfg.train.variant = Variant::Ca;
        cfg.data.train = Some("x.jsonl".into());
        let back: RunConfigFile = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_from(["oa", "train", "--variant", "xx"]), ExitCode::from(2));
        assert_eq!(main_from(["oa", "frobnicate"]), ExitCode::from(2));
    }
}
