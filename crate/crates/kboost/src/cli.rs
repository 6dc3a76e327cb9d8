//! The `kboost` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use kboost_core::dsp::{AudioSignal, Stft};
use kboost_core::gridnet::{spec_to_features, INPUT_CHANNELS};
use kboost_core::numerics::ParamStore;
use kboost_core::runtime::{causality_audit, header_overhead, hint_throughput, run_session, SessionOutput, CHUNK_SECONDS};
use kboost_core::synth::{Split, Task};
use kboost_core::train::{Baseline, Boosted, EpochRecord, Example, TrainConfig, TrainLog, Trainable, Trainer};
use kboost_core::{rng, Real, Tensor};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{Role, SessionConfig, SweepPoint};
use crate::corpus::{load_examples, read_manifest, split_rows, write_corpus};
use crate::error::{io_err, Result};
use crate::eval::{evaluate_rows, synthesize, Estimate, Runner};
use crate::models;
use crate::report::{aggregate, sweep_table, write_csv, write_trace, MetricsReport, ReportHeader, SweepRow, TraceHeader};
use crate::threaded::run_threaded;
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "kboost", version, about = "Knowledge boosting for streaming speech models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides of the link and compression settings of a config.
#[derive(Debug, Clone, Default, Args)]
pub struct LinkArgs {
    /// Local-to-remote delay in milliseconds.
    #[arg(long)]
    pub c_out_ms: Option<f64>,
    /// Remote-to-local delay in milliseconds.
    #[arg(long)]
    pub c_in_ms: Option<f64>,
    /// Compression ratio P of the hint channels.
    #[arg(long)]
    pub compression: Option<usize>,
}

impl LinkArgs {
    pub fn apply(&self, cfg: &mut SessionConfig) -> Result<()> {
        if let Some(v) = self.c_out_ms {
            cfg.delay.c_out_ms = v;
        }
        if let Some(v) = self.c_in_ms {
            cfg.delay.c_in_ms = v;
        }
        if let Some(p) = self.compression {
            cfg.boost.p = p;
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineRole {
    Small,
    Medium,
    Large,
}

impl From<BaselineRole> for Role {
    fn from(r: BaselineRole) -> Self {
        match r {
            BaselineRole::Small => Role::Small,
            BaselineRole::Medium => Role::Medium,
            BaselineRole::Large => Role::Large,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Delay in chunks.
    C,
    /// Compression ratio.
    P,
    /// Frozen versus jointly trained large model.
    Freeze,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Corpus directory (defaults to the config's).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use only the first N training mixtures.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Use only the first N validation mixtures.
    #[arg(long)]
    pub val_limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the corpus of a config to WAV files and a manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's corpus directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite a corpus generated from different settings.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train a small, medium or large model on its own.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "large")]
        model: BaselineRole,
        #[command(flatten)]
        train: TrainArgs,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log (defaults to the checkpoint path with `.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Jointly train a boosted small/large pair.
    TrainKb {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        link: LinkArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Pretrained large model used to initialize the large half.
        #[arg(long)]
        large: Option<PathBuf>,
        /// Keep the large model fixed.
        #[arg(long)]
        freeze: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Stream every file of a split through a model and report SI-SDR.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        link: LinkArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "model")]
        estimate: Estimate,
        #[arg(long)]
        limit: Option<usize>,
        /// Directory for report.jsonl and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate a checkpoint trained for a different configuration.
        #[arg(long)]
        allow_mismatch: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run one recording through the two-node streaming runtime.
    Stream {
        #[arg(long)]
        config: PathBuf,
        /// Boosted checkpoint; without one the models are freshly initialized.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        link: LinkArgs,
        /// Binaural input recording.
        #[arg(long)]
        input: PathBuf,
        /// Enrollment recording for target speaker extraction.
        #[arg(long)]
        enrollment: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-tick trace as line-delimited JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// 2 runs the remote node on its own thread, 1 uses the single-threaded scheduler.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        workers: u8,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Hint link rate, parameter counts and MACs of a config.
    Calc {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Train and evaluate every point of a config's sweep grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep only this axis (values from the config, or C 0,1,3,6 / P 1,2,4 / freeze on,off).
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        large: Option<PathBuf>,
        /// Test files per point.
        #[arg(long)]
        eval_limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Points trained in parallel, each in its own directory.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Check that outputs never depend on input they could not have seen.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        link: LinkArgs,
        #[arg(long, default_value_t = 10)]
        probes: usize,
        /// Length of the random input in chunks.
        #[arg(long, default_value_t = 100)]
        ticks: usize,
        /// Remove the merge attention mask to confirm the audit catches it.
        #[arg(long)]
        inject_leak: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_mismatch: bool,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { config, out: dir, force, jobs } => cmd_synth(&config, dir, force, jobs, out),
        Command::Pretrain {
            config,
            model,
            train,
            out: path,
            log,
        } => cmd_pretrain(&config, model.into(), &train, &path, log, out),
        Command::TrainKb {
            config,
            link,
            train,
            large,
            freeze,
            out: path,
            log,
            allow_mismatch,
        } => {
            let mut cfg = SessionConfig::load(&config)?;
            link.apply(&mut cfg)?;
            if freeze {
                cfg.train.freeze_large = Some(true);
            }
            let large = large.map(|p| Checkpoint::load(&p)).transpose()?;
            let log = log.unwrap_or_else(|| with_suffix(&path, ".log.jsonl"));
            let (model, _) = train_kb(&cfg, &train, large.as_ref(), allow_mismatch, &log, out)?;
            models::boosted_checkpoint(&cfg, &model)?.save(&path)?;
            writeln!(out, "wrote {}", path.display()).map_err(io_err(&path))
        }
        Command::Eval {
            config,
            checkpoint,
            link,
            corpus,
            split,
            estimate,
            limit,
            out: dir,
            allow_mismatch,
            jobs,
        } => {
            let mut cfg = SessionConfig::load(&config)?;
            link.apply(&mut cfg)?;
            let ck = checkpoint.map(|p| Checkpoint::load(&p)).transpose()?;
            let opts = EvalOptions {
                corpus: corpus.unwrap_or_else(|| cfg.corpus.dir.clone()),
                split: split.into(),
                estimate,
                limit,
                allow_mismatch,
                jobs,
            };
            let report = cmd_eval(&cfg, ck.as_ref(), &opts)?;
            if let Some(dir) = dir {
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let path = dir.join("report.jsonl");
                std::fs::write(&path, report.to_jsonl()).map_err(io_err(&path))?;
                report.write_csv(&dir.join("report.csv"))?;
            }
            write!(out, "{}", report.summary_table()).map_err(io_err("stdout"))
        }
        Command::Stream {
            config,
            checkpoint,
            link,
            input,
            enrollment,
            out: path,
            trace,
            workers,
            allow_mismatch,
        } => {
            let mut cfg = SessionConfig::load(&config)?;
            link.apply(&mut cfg)?;
            let ck = checkpoint.map(|p| Checkpoint::load(&p)).transpose()?;
            cmd_stream(&cfg, ck.as_ref(), allow_mismatch, &input, enrollment.as_deref(), &path, trace.as_deref(), workers, out)
        }
        Command::Calc { config, link } => {
            let mut cfg = SessionConfig::load(&config)?;
            link.apply(&mut cfg)?;
            write!(out, "{}", calc_report(&cfg)?).map_err(io_err("stdout"))
        }
        Command::Sweep {
            config,
            axis,
            train,
            large,
            eval_limit,
            out: dir,
            jobs,
            allow_mismatch,
        } => {
            let cfg = SessionConfig::load(&config)?;
            let large = large.map(|p| Checkpoint::load(&p)).transpose()?;
            let points = sweep_points(&cfg, axis)?;
            let rows = cmd_sweep(&cfg, &points, &train, large.as_ref(), eval_limit, &dir, jobs, allow_mismatch)?;
            write_csv(&dir.join("sweep.csv"), &rows)?;
            write!(out, "{}", sweep_table(&rows)).map_err(io_err("stdout"))
        }
        Command::Audit {
            config,
            checkpoint,
            link,
            probes,
            ticks,
            inject_leak,
            seed,
            allow_mismatch,
        } => {
            let mut cfg = SessionConfig::load(&config)?;
            link.apply(&mut cfg)?;
            let ck = checkpoint.map(|p| Checkpoint::load(&p)).transpose()?;
            let model = match &ck {
                Some(ck) => models::load_boosted::<f32>(&cfg, ck, allow_mismatch)?.0,
                None => models::boosted::<f32>(&cfg)?,
            };
            cmd_audit(&cfg, model, probes, ticks, inject_leak, seed.unwrap_or(cfg.seed), out)
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(io_err("stdout"))
}

pub fn cmd_synth(config: &Path, dir: Option<PathBuf>, force: bool, jobs: usize, out: &mut dyn Write) -> Result<()> {
    let cfg = SessionConfig::load(config)?;
    let dir = dir.unwrap_or_else(|| cfg.corpus.dir.clone());
    let s = write_corpus(&cfg.corpus_spec(), &dir, force, jobs)?;
    let hash = &s.config_hash[..12];
    if s.changed {
        say(
            out,
            format_args!(
                "{}: {} task, train {} / val {} / test {} mixtures (corpus {hash}, seed {})",
                dir.display(),
                s.task.name(),
                s.train,
                s.val,
                s.test,
                cfg.seed
            ),
        )
    } else {
        say(out, format_args!("{}: no changes (corpus {hash})", dir.display()))
    }
}

/// Training log: a header line with the config hash and seed, then one line per epoch.
struct LogWriter {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
}

impl LogWriter {
    fn create(path: &Path, hash: &str, seed: u64, role: Role) -> Result<Self> {
        #[derive(Serialize)]
        struct Header<'a> {
            config_hash: &'a str,
            seed: u64,
            role: Role,
        }
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = Self {
            path: path.to_path_buf(),
            file: std::io::BufWriter::new(f),
        };
        w.line(&Header { config_hash: hash, seed, role })?;
        Ok(w)
    }

    fn line(&mut self, v: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.file, v)
            .map_err(std::io::Error::from)
            .and_then(|_| self.file.write_all(b"\n"))
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

struct Data {
    train: Vec<Example<f32>>,
    val: Vec<Example<f32>>,
}

fn load_data(cfg: &SessionConfig, args: &TrainArgs) -> Result<Data> {
    let dir = args.corpus.clone().unwrap_or_else(|| cfg.corpus.dir.clone());
    let rows = read_manifest(&dir)?;
    let stft = Stft::<f64>::new(cfg.stft)?;
    let limit = args.limit.or(cfg.train.limit);
    let load = |split, limit| -> Result<Vec<Example<f32>>> {
        let rows = split_rows(&rows, split, limit);
        if rows.is_empty() {
            return Err(kboost_core::Error::Config(format!("corpus {} has no {} mixtures", dir.display(), split.name())).into());
        }
        Ok(load_examples(&dir, &rows, cfg.task, &stft)?.iter().map(Example::cast).collect())
    };
    Ok(Data {
        train: load(Split::Train, limit)?,
        val: load(Split::Val, args.val_limit)?,
    })
}

/// Runs the trainer and keeps the parameters of the best validation epoch.
fn fit_best<M: Trainable<f32> + Clone>(
    tc: TrainConfig,
    cfg: &SessionConfig,
    model: &mut M,
    data: &Data,
    log: &mut LogWriter,
    out: &mut dyn Write,
) -> Result<TrainLog> {
    let mut trainer = Trainer::<f32>::new(tc, cfg.stft)?;
    let mut best: Option<(f64, Vec<ParamStore<f32>>)> = None;
    let mut failure = None;
    let result = trainer.fit(model, &data.train, &data.val, |rec: &EpochRecord, m: &M| {
        if best.as_ref().map_or(true, |(b, _)| rec.val_si_snr > *b) {
            best = Some((rec.val_si_snr, m.stores().into_iter().cloned().collect()));
        }
        let r = log.line(rec).and_then(|_| {
            say(
                out,
                format_args!(
                    "epoch {:>3}  loss {:>8.3}  val {:>7.3} dB  lr {:.2e}",
                    rec.epoch, rec.train_loss, rec.val_si_snr, rec.lr
                ),
            )
        });
        if let Err(e) = r {
            failure.get_or_insert(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let log = result?;
    if let Some((_, stores)) = best {
        for (s, b) in model.stores_mut().into_iter().zip(&stores) {
            s.copy_values_from(b);
        }
    }
    Ok(log)
}

/// Trains one baseline; returns the best-validation model and its log.
pub fn pretrain(cfg: &SessionConfig, role: Role, args: &TrainArgs, log_path: &Path, out: &mut dyn Write) -> Result<(Baseline<f32>, TrainLog)> {
    let mut tc = cfg.pretrain_config();
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    let data = load_data(cfg, args)?;
    let mut model: Baseline<f32> = models::baseline(cfg, role)?;
    let mut log = LogWriter::create(log_path, &cfg.model_hash(role)?, cfg.seed, role)?;
    say(out, format_args!("pretraining {role} model on {} mixtures", data.train.len()))?;
    let tl = fit_best(tc, cfg, &mut model, &data, &mut log, out)?;
    Ok((model, tl))
}

pub fn cmd_pretrain(config: &Path, role: Role, args: &TrainArgs, path: &Path, log: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let cfg = SessionConfig::load(config)?;
    let log_path = log.unwrap_or_else(|| with_suffix(path, ".log.jsonl"));
    let (model, tl) = pretrain(&cfg, role, args, &log_path, out)?;
    models::baseline_checkpoint(&cfg, role, &model)?.save(path)?;
    say(
        out,
        format_args!("best val {:.3} dB, wrote {}", tl.best_val().unwrap_or(f64::NAN), path.display()),
    )
}

/// Joint training of a boosted pair; returns the best-validation model.
pub fn train_kb(
    cfg: &SessionConfig,
    args: &TrainArgs,
    large: Option<&Checkpoint>,
    allow_mismatch: bool,
    log_path: &Path,
    out: &mut dyn Write,
) -> Result<(Boosted<f32>, TrainLog)> {
    let mut tc = cfg.train_config();
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    let data = load_data(cfg, args)?;
    let mut model: Boosted<f32> = models::boosted(cfg)?;
    match large {
        Some(ck) => models::init_large(cfg, &mut model, ck, allow_mismatch)?,
        None => say(out, format_args!("no pretrained large model given; training it from scratch"))?,
    }
    model.freeze_large(tc.freeze_large);
    let mut log = LogWriter::create(log_path, &cfg.model_hash(Role::Boosted)?, cfg.seed, Role::Boosted)?;
    say(
        out,
        format_args!(
            "training {} pair, C = {}, P = {} on {} mixtures",
            if tc.freeze_large { "frozen-large" } else { "joint" },
            cfg.chunks()?,
            cfg.boost.p,
            data.train.len()
        ),
    )?;
    let tl = fit_best(tc, cfg, &mut model, &data, &mut log, out)?;
    Ok((model, tl))
}

pub struct EvalOptions {
    pub corpus: PathBuf,
    pub split: Split,
    pub estimate: Estimate,
    pub limit: Option<usize>,
    pub allow_mismatch: bool,
    pub jobs: usize,
}

fn local_params(cfg: &SessionConfig, role: Role) -> Result<Vec<(String, usize)>> {
    let bins = cfg.bins();
    Ok(match role {
        Role::Boosted => {
            let kb = cfg.kb_config()?;
            vec![
                ("small".into(), kb.small.param_count(bins)),
                ("boost".into(), kb.boost_param_count()),
                ("large".into(), kb.large.param_count(bins)),
            ]
        }
        r => vec![(r.name().into(), cfg.grid(r).param_count(bins))],
    })
}

fn local_macs(cfg: &SessionConfig, role: Role) -> Result<u64> {
    let bins = cfg.bins();
    Ok(match role {
        Role::Boosted => {
            let kb = cfg.kb_config()?;
            kb.small.macs_per_chunk(bins) + kb.merge_macs_per_chunk(bins)
        }
        r => cfg.grid(r).macs_per_chunk(bins),
    })
}

pub fn cmd_eval(cfg: &SessionConfig, ck: Option<&Checkpoint>, opts: &EvalOptions) -> Result<MetricsReport> {
    let (runner, role, mismatch) = match (ck, opts.estimate) {
        (None, Estimate::Model) => return Err(kboost_core::Error::Config("evaluating a model needs --checkpoint".into()).into()),
        (None, _) => (None, Role::Boosted, false),
        (Some(ck), _) if ck.role == Role::Boosted => {
            let (model, mismatch) = models::load_boosted::<f32>(cfg, ck, opts.allow_mismatch)?;
            let delays = cfg.tick_delays()?;
            (Some(Runner::Boosted { model, delays }), Role::Boosted, mismatch)
        }
        (Some(ck), _) => {
            let (model, mismatch) = models::load_baseline::<f32>(cfg, ck, opts.allow_mismatch)?;
            (Some(Runner::Baseline { model }), ck.role, mismatch)
        }
    };
    let rows = split_rows(&read_manifest(&opts.corpus)?, opts.split, opts.limit);
    if rows.is_empty() {
        return Err(kboost_core::Error::Config(format!("no {} mixtures in {}", opts.split.name(), opts.corpus.display())).into());
    }
    let stft = Stft::<f64>::new(cfg.stft)?;
    let files = evaluate_rows(&opts.corpus, &rows, cfg.task, &stft, opts.estimate, runner.as_ref(), opts.jobs)?;
    let throughput = if role == Role::Boosted {
        hint_throughput(cfg.models.large.k, cfg.boost.p, cfg.bins(), 1.0 / CHUNK_SECONDS, 32)?
    } else {
        0.0
    };
    let header = ReportHeader {
        config: cfg.name.clone(),
        config_hash: cfg.model_hash(role)?,
        checkpoint_hash: ck.map(|c| c.hash.clone()),
        config_mismatch: mismatch,
        seed: cfg.seed,
        role: role.name().into(),
        estimate: opts.estimate.name().into(),
        split: opts.split.name().into(),
        delay_chunks: cfg.chunks()?,
        compression: cfg.boost.p,
        params: local_params(cfg, role)?,
        throughput_bps: throughput,
        local_macs_per_chunk: local_macs(cfg, role)?,
    };
    Ok(MetricsReport::new(header, files))
}

fn features(signal: &AudioSignal<f64>, stft: &Stft<f64>) -> Result<Tensor<f32>> {
    if signal.num_channels() != 2 {
        return Err(kboost_core::Error::Shape(format!("expected a binaural recording, got {} channels", signal.num_channels())).into());
    }
    let x = spec_to_features(&stft.stft(signal)?);
    debug_assert_eq!(x.shape()[2], INPUT_CHANNELS);
    Ok(x.cast())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_stream(
    cfg: &SessionConfig,
    ck: Option<&Checkpoint>,
    allow_mismatch: bool,
    input: &Path,
    enrollment: Option<&Path>,
    path: &Path,
    trace: Option<&Path>,
    workers: u8,
    out: &mut dyn Write,
) -> Result<()> {
    let model: Boosted<f32> = match ck {
        Some(ck) => models::load_boosted(cfg, ck, allow_mismatch)?.0,
        None => models::boosted(cfg)?,
    };
    let stft = Stft::<f64>::new(cfg.stft)?;
    let signal = read_wav(input)?;
    let x = features(&signal, &stft)?;
    let e = enrollment.map(|p| read_wav(p).and_then(|s| features(&s, &stft))).transpose()?;
    let delays = cfg.tick_delays()?;
    let SessionOutput { output, trace: tr } = if workers == 2 {
        run_threaded(&model.sys, &model.params, &x, None, e.as_ref(), delays)?
    } else {
        run_session(&model.sys, &model.params, &x, None, e.as_ref(), delays)?
    };
    let channels = synthesize(&output, &stft)?;
    write_wav(path, &AudioSignal::new(channels, signal.sample_rate())?)?;
    if let Some(tp) = trace {
        let header = TraceHeader {
            config_hash: cfg.model_hash(Role::Boosted)?,
            seed: cfg.seed,
            delays,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(tp).map_err(io_err(tp))?);
        write_trace(&mut w, &header, &tr).and_then(|_| w.flush()).map_err(io_err(tp))?;
    }
    say(
        out,
        format_args!(
            "{} chunks, C = {} (uplink {}, downlink {}), wrote {}",
            tr.records.len(),
            delays.total(),
            delays.uplink,
            delays.downlink,
            path.display()
        ),
    )
}

/// Published figures printed next to the computed ones.
fn reference_params_k(task: Task, role: Role) -> f64 {
    match (task, role) {
        (Task::Ss, Role::Small) => 23.96,
        (Task::Ss, Role::Medium) => 37.38,
        (Task::Ss, Role::Large) => 518.77,
        (Task::Ss, Role::Boosted) => 36.54,
        (_, Role::Small) => 23.38,
        (_, Role::Medium) => 36.44,
        (_, Role::Large) => 516.46,
        (_, Role::Boosted) => 35.70,
    }
}

/// Rate in bits per second rounded to three significant figures.
pub fn format_rate(bps: f64) -> String {
    let (v, unit) = if bps >= 1e6 {
        (bps / 1e6, "Mbps")
    } else if bps >= 1e3 {
        (bps / 1e3, "kbps")
    } else {
        (bps, "bps")
    };
    let decimals = if v >= 100.0 {
        0
    } else if v >= 10.0 {
        1
    } else {
        2
    };
    format!("{v:.decimals$} {unit}")
}

pub fn calc_report(cfg: &SessionConfig) -> Result<String> {
    use std::fmt::Write as _;
    let mut t = String::new();
    let (k, bins) = (cfg.models.large.k, cfg.bins());
    let rate = 1.0 / CHUNK_SECONDS;
    let _ = writeln!(t, "{} ({}), K = {k}, F = {bins}, {rate:.0} chunks/s, 32-bit values", cfg.name, cfg.task.name());
    let _ = writeln!(t, "delay C = {} chunks", cfg.chunks()?);
    let mut ps = vec![1, 2, 4];
    if !ps.contains(&cfg.boost.p) {
        ps.push(cfg.boost.p);
    }
    for p in ps {
        let Ok(bps) = hint_throughput(k, p, bins, rate, 32) else { continue };
        let reference = match (cfg.task, p) {
            (Task::Tse, 1) => "  (reference 1.55 Mbps)",
            (Task::Tse, 2) => "  (reference 776 kbps)",
            _ => "",
        };
        let mark = if p == cfg.boost.p { "*" } else { " " };
        let _ = writeln!(t, "{mark}hint rate P={p}: {bps:.0} bps = {}{reference}", format_rate(bps));
    }
    let _ = writeln!(t, " wire headers: {:.0} bps", header_overhead(rate));
    let kb = cfg.kb_config()?;
    let counts = [
        (Role::Small, cfg.models.small.param_count(bins), cfg.models.small.macs_per_chunk(bins)),
        (Role::Medium, cfg.models.medium.param_count(bins), cfg.models.medium.macs_per_chunk(bins)),
        (Role::Large, cfg.models.large.param_count(bins), cfg.models.large.macs_per_chunk(bins)),
        (
            Role::Boosted,
            kb.small.param_count(bins) + kb.boost_param_count(),
            local_macs(cfg, Role::Boosted)?,
        ),
    ];
    for (role, n, macs) in counts {
        let r = reference_params_k(cfg.task, role);
        let k = n as f64 / 1e3;
        let _ = writeln!(
            t,
            "params {:<8} {:>8.2}K  (reference {:>7.2}K, {:+.1}%)  MACs/chunk {:.3}M",
            role.name(),
            k,
            r,
            100.0 * (k - r) / r,
            macs as f64 / 1e6
        );
    }
    Ok(t)
}

pub fn sweep_points(cfg: &SessionConfig, axis: Option<Axis>) -> Result<Vec<SweepPoint>> {
    let here = cfg.point()?;
    Ok(match axis {
        None => cfg.sweep_points()?,
        Some(Axis::C) => cfg.sweep.c.clone().unwrap_or(vec![0, 1, 3, 6]).into_iter().map(|c| SweepPoint { c, ..here }).collect(),
        Some(Axis::P) => cfg.sweep.p.clone().unwrap_or(vec![1, 2, 4]).into_iter().map(|p| SweepPoint { p, ..here }).collect(),
        Some(Axis::Freeze) => cfg
            .sweep
            .freeze
            .clone()
            .unwrap_or(vec![true, false])
            .into_iter()
            .map(|freeze| SweepPoint { freeze, ..here })
            .collect(),
    })
}

fn point_name(p: &SweepPoint) -> String {
    format!("{}-c{}-p{}", if p.freeze { "fkb" } else { "kb" }, p.c, p.p)
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    base: &SessionConfig,
    point: SweepPoint,
    args: &TrainArgs,
    large: Option<&Checkpoint>,
    eval_limit: Option<usize>,
    dir: &Path,
    allow_mismatch: bool,
) -> Result<(TrainLog, MetricsReport)> {
    let cfg = base.at(point);
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut progress = std::fs::File::create(dir.join("progress.txt")).map_err(io_err(dir))?;
    let (model, log) = train_kb(&cfg, args, large, allow_mismatch, &dir.join("train.log.jsonl"), &mut progress)?;
    let ck = models::boosted_checkpoint(&cfg, &model)?;
    ck.save(&dir.join("boosted.ckpt"))?;
    let opts = EvalOptions {
        corpus: args.corpus.clone().unwrap_or_else(|| cfg.corpus.dir.clone()),
        split: Split::Test,
        estimate: Estimate::Model,
        limit: eval_limit,
        allow_mismatch: false,
        jobs: 1,
    };
    let report = cmd_eval(&cfg, Some(&ck), &opts)?;
    let path = dir.join("report.jsonl");
    std::fs::write(&path, report.to_jsonl()).map_err(io_err(&path))?;
    report.write_csv(&dir.join("report.csv"))?;
    Ok((log, report))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    cfg: &SessionConfig,
    points: &[SweepPoint],
    args: &TrainArgs,
    large: Option<&Checkpoint>,
    eval_limit: Option<usize>,
    dir: &Path,
    jobs: usize,
    allow_mismatch: bool,
) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let next = std::sync::atomic::AtomicUsize::new(0);
    let rows: std::sync::Mutex<Vec<Option<SweepRow>>> = std::sync::Mutex::new(vec![None; points.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&point) = points.get(i) else { break };
                let name = point_name(&point);
                let pcfg = cfg.at(point);
                let bins = cfg.bins();
                let (params_k, macs_m) = match pcfg.kb_config() {
                    Ok(kb) => (
                        (kb.small.param_count(bins) + kb.boost_param_count()) as f64 / 1e3,
                        (kb.small.macs_per_chunk(bins) + kb.merge_macs_per_chunk(bins)) as f64 / 1e6,
                    ),
                    Err(_) => (f64::NAN, f64::NAN),
                };
                let mut row = SweepRow {
                    name: if point.freeze { "FKB" } else { "KB" }.to_string(),
                    c: point.c,
                    p: point.p,
                    freeze: point.freeze,
                    val_si_snr: None,
                    test_si_sdr: None,
                    test_std: None,
                    params_k,
                    macs_m,
                    status: "ok".into(),
                };
                match sweep_point(cfg, point, args, large, eval_limit, &dir.join(&name), allow_mismatch) {
                    Ok((log, report)) => {
                        let agg = aggregate(&report.rows);
                        row.val_si_snr = log.best_val();
                        row.test_si_sdr = Some(agg.mean);
                        row.test_std = Some(agg.std);
                    }
                    Err(e) => row.status = format!("error: {e}"),
                }
                rows.lock().unwrap()[i] = Some(row);
            });
        }
    });
    Ok(rows.into_inner().unwrap().into_iter().flatten().collect())
}

pub fn cmd_audit<T: Real>(
    cfg: &SessionConfig,
    mut model: Boosted<T>,
    probes: usize,
    ticks: usize,
    inject_leak: bool,
    seed: u64,
    out: &mut dyn Write,
) -> Result<()> {
    if ticks == 0 {
        return Err(kboost_core::Error::Config("audit needs at least one tick".into()).into());
    }
    model.sys.inject_future_leak(inject_leak);
    let bins = cfg.bins();
    let mut r = rng::derive(seed, 0xa0d1);
    let noise = |n: usize, r: &mut rng::SeededRng| (0..n).map(|_| T::lit(rng::gaussian(r))).collect::<Vec<T>>();
    let x = Tensor::from_vec(&[ticks, bins, INPUT_CHANNELS], noise(ticks * bins * INPUT_CHANNELS, &mut r))?;
    let enrollment = if cfg.task == Task::Tse {
        let n = 32;
        Some(Tensor::from_vec(&[n, bins, INPUT_CHANNELS], noise(n * bins * INPUT_CHANNELS, &mut r))?)
    } else {
        None
    };
    let c = cfg.chunks()?;
    // the last tick has no future to perturb, so it is never a probe
    let span = if ticks > 1 { ticks - 1 } else { 1 };
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut r, span, probes.min(span)).into_vec();
    chosen.sort_unstable();
    let mut first = None;
    // the unperturbed run is the same for every probe
    let mut base: Option<Tensor<T>> = None;
    for probe in chosen {
        let pipeline = |l: &Tensor<T>, rem: &Tensor<T>| {
            let clean = std::ptr::eq(l, &x) && std::ptr::eq(rem, &x);
            if let (true, Some(b)) = (clean, &base) {
                return Ok(b.clone());
            }
            let y = model.sys.infer(&model.params, l, rem, enrollment.as_ref())?;
            if clean {
                base = Some(y.clone());
            }
            Ok(y)
        };
        let report = causality_audit(pipeline, &x, c, probe, seed ^ probe as u64)?;
        if report.is_clean() {
            say(out, format_args!("probe {probe:>4}: clean (remote copy perturbed from chunk {})", report.perturbed_from))?;
        } else {
            for v in &report.violations {
                say(out, format_args!("probe {probe:>4}: VIOLATION {:?} at tick {}: {}", v.kind, v.tick, v.detail))?;
            }
            first.get_or_insert(report);
        }
    }
    match first {
        Some(report) => Err(report.into_result().unwrap_err().into()),
        None => say(out, format_args!("audit passed, C = {c}")),
    }
}
