use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::info;

use noisyd_ct::audio::{
    read_wav, simulate_corpus, write_manifest, Manifest, NoisePool, PartitionRole,
    SimulationOptions, SnrPolicy,
};
use noisyd_ct::backbone::BackboneConfig;
use noisyd_ct::config::RunConfig;
use noisyd_ct::eval::{evaluate_set, export_heatmaps, Bucketing};
use noisyd_ct::noisyd::NoisyD;
use noisyd_ct::toy::{write_corpus, ToySizes};
use noisyd_ct::training::{
    extract_features, finetune, pretrain, train_baseline, train_noisyd, Checkpoint, Model,
    Recognizer, Stage, StageSummary,
};
use noisyd_ct::transducer::TransducerDecoder;
use noisyd_ct::{Error, Result};

/// Noise-robust Conformer-Transducer toolkit.
#[derive(Debug, Parser)]
#[command(name = "noisyd-ct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mix clean utterances with partitioned noise at controlled SNRs.
    Simulate(SimulateArgs),
    /// Run one training stage (1, 2, 3) or the pooled baseline.
    Train(TrainArgs),
    /// Decode manifests and write a bucketed WER report.
    Eval(EvalArgs),
    /// Export noisy, disentangled and reference representations as CSV.
    Visualize(VisualizeArgs),
    /// Print parameter counts for a configuration.
    Params(ParamsArgs),
    /// Write the synthetic ten-word toy corpus.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Clean manifest (JSON lines).
    #[arg(long = "clean-manifest", alias = "clean")]
    clean: PathBuf,
    /// Directory of noise recordings, one subdirectory per noise type.
    #[arg(long = "noise-dir", alias = "noise")]
    noise: PathBuf,
    /// Which noise partition to draw from: train or test.
    #[arg(long = "partition", alias = "split", value_parser = parse_role)]
    split: PartitionRole,
    /// Output directory for audio and manifests.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 15.0, allow_negative_numbers = true)]
    snr_max: f64,
    /// Comma-separated SNR grid; emits one manifest per noise type and SNR.
    #[arg(long, allow_hyphen_values = true)]
    snr_grid: Option<String>,
    /// Trailing fraction of every noise file reserved for the test partition.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Reject noise segments shorter than the utterance instead of
    /// wrapping them around.
    #[arg(long)]
    no_loop: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// 1, 2, 3 or baseline.
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Configuration file; stages 2 and 3 default to the one stored in --init.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training manifest: clean for stage 1, paired for the others.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint of the previous stage.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Optimizer steps (defaults to train.steps).
    #[arg(long)]
    steps: Option<usize>,
    /// JSON-lines training log (defaults to <out>.log.jsonl).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Config override, KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest to decode; repeatable.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    by_snr: bool,
    #[arg(long)]
    by_noise: bool,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    noisy: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Count the decoder for this many output units instead of the
    /// configured vocabulary.
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ToySizes::default().train_utterances)]
    train_utterances: usize,
    #[arg(long, default_value_t = ToySizes::default().test_utterances)]
    test_utterances: usize,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_role(s: &str) -> std::result::Result<PartitionRole, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let msg = e.to_string().replace('\n', " ");
            let msg = msg.strip_prefix(&format!("{}: ", category)).unwrap_or(&msg);
            eprintln!("error[{}]: {}", category, msg);
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("NOISYD_CT_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        Error::Config(format!(
            "NOISYD_CT_THREADS must be a positive integer, got {:?}",
            value
        ))
    })?;
    if n == 0 {
        return Err(Error::Config(
            "NOISYD_CT_THREADS must be a positive integer, got 0".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Visualize(a) => visualize(a),
        Command::Params(a) => params(a),
        Command::Toy(a) => toy(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let clean = Manifest::load(&a.clean)?;
    let pool = NoisePool::load(&a.noise, a.test_fraction)?;
    let snr = match &a.snr_grid {
        Some(grid) => SnrPolicy::Grid(parse_grid(grid)?),
        None => SnrPolicy::Uniform {
            min: a.snr_min,
            max: a.snr_max,
        },
    };
    let opts = SimulationOptions {
        snr,
        seed: a.seed,
        allow_loop: !a.no_loop,
    };
    let sets = simulate_corpus(&clean, &pool.partition(a.split), a.split, &opts, &a.out)?;
    for set in sets {
        let path = a.out.join(format!("{}.jsonl", set.label()));
        write_manifest(&path, &set.entries)?;
        println!("{}\t{}", path.display(), set.entries.len());
    }
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad SNR value {:?} in --snr-grid", s)))
        })
        .collect()
}

fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {:?}", kv)))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".log.jsonl");
    PathBuf::from(name)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut overrides = parse_overrides(&a.overrides)?;
    if let Some(seed) = a.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let config = match &a.config {
        Some(path) => Some(RunConfig::load(path)?.with_overrides(&overrides)?),
        None => None,
    };
    let init = match (a.stage, &a.init) {
        (Stage::Pretrain | Stage::Baseline, Some(_)) => {
            return Err(Error::Config(format!(
                "stage {} trains from scratch; --init applies to stages 2 and 3",
                stage_name(a.stage)
            )))
        }
        (Stage::NoisyD, None) => {
            return Err(Error::Training(
                "stage 2 needs the stage-1 checkpoint; pass it with --init".into(),
            ))
        }
        (Stage::Finetune, None) => {
            return Err(Error::Training(
                "stage 3 needs the stage-2 checkpoint; pass it with --init".into(),
            ))
        }
        (_, Some(path)) => Some(Checkpoint::load(path)?),
        (_, None) => None,
    };

    let manifest = Manifest::load(&a.data)?;
    let raw = extract_features(&manifest)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);

    let (model, summary) = match init {
        None => {
            let config = config.ok_or_else(|| {
                Error::Config(format!("stage {} needs --config", stage_name(a.stage)))
            })?;
            let steps = a.steps.unwrap_or(config.train.steps);
            let vocab = config.vocabulary()?;
            info!(
                "stage {}: {} utterances, {} steps",
                stage_name(a.stage),
                raw.len(),
                steps
            );
            if a.stage == Stage::Baseline {
                train_baseline(config, vocab, &raw, steps, Some(&mut log))?
            } else {
                pretrain(config, vocab, &raw, steps, Some(&mut log))?
            }
        }
        Some(ckpt) => {
            let config = match config {
                Some(c) => c,
                None => RunConfig::parse(&ckpt.config_text)?.with_overrides(&overrides)?,
            };
            let steps = a.steps.unwrap_or(config.train.steps);
            let model = Model::from_checkpoint(ckpt, Some(config))?;
            info!(
                "stage {}: {} utterances, {} steps",
                stage_name(a.stage),
                raw.len(),
                steps
            );
            if a.stage == Stage::NoisyD {
                train_noisyd(model, &raw, steps, Some(&mut log))?
            } else {
                finetune(model, &raw, steps, Some(&mut log))?
            }
        }
    };
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    model.to_checkpoint().save(&a.out)?;
    report_summary(&summary);
    println!("checkpoint\t{}", a.out.display());
    println!("log\t{}", log_path.display());
    Ok(())
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "1",
        Stage::NoisyD => "2",
        Stage::Finetune => "3",
        Stage::Baseline => "baseline",
    }
}

fn report_summary(summary: &StageSummary) {
    if let Some(last) = summary.log.last() {
        println!(
            "final step {}: total {:.4} (ctc {:.4}, rnnt {:.4}, l_con {:.4}, l_r {:.4})",
            last.step, last.total, last.ctc, last.rnnt, last.l_con, last.l_r
        );
    }
    println!("rejected steps\t{}", summary.rejected_steps);
    println!("ctc no-path items\t{}", summary.no_path_ctc);
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let config_text = ckpt.config_text.clone();
    let recognizer = Recognizer::from_checkpoint(ckpt)?;
    let manifests = a
        .manifests
        .iter()
        .map(Manifest::load)
        .collect::<Result<Vec<_>>>()?;
    let bucketing = Bucketing {
        by_snr: a.by_snr,
        by_noise: a.by_noise,
    };
    let report = evaluate_set(&recognizer, &manifests, bucketing, config_text)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&a.out, report.to_json()?).map_err(|e| Error::io(&a.out, e))?;
    print!("{}", report.table());
    for e in &report.errata {
        eprintln!("skipped {}: {}", e.id, e.reason);
    }
    Ok(())
}

fn visualize(a: VisualizeArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let clean = read_wav(&a.clean, None)?;
    let noisy = read_wav(&a.noisy, None)?;
    let meta = export_heatmaps(ckpt, &clean, &noisy, &a.out)?;
    println!("frames x dims\t{} x {}", meta.frames, meta.dims);
    println!(
        "d(h_clean_tilde, h_t)\t{:.6}\tstandardized {:.6}",
        meta.distance_clean_tilde_vs_t, meta.standardized_distance_clean_tilde_vs_t
    );
    println!(
        "d(h_noisy, h_t)\t{:.6}\tstandardized {:.6}",
        meta.distance_noisy_vs_t, meta.standardized_distance_noisy_vs_t
    );
    println!("written to\t{}", a.out.display());
    Ok(())
}

fn params(a: ParamsArgs) -> Result<()> {
    let config = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse("")?,
    };
    let vocab_size = match a.vocab_size {
        Some(n) => n,
        None => config.vocabulary()?.len(),
    };
    let enc: &BackboneConfig = &config.encoder;
    enc.validate()?;
    let dec = TransducerDecoder::new(config.decoder, enc.d_model, vocab_size);
    let nd_config = config.noisyd();
    let nd = NoisyD::new(nd_config)?;
    let encoder = enc.param_count();
    let decoder = dec.param_count();
    let noisyd = nd_config.param_count()?;
    let rows: [(&str, usize); 10] = [
        ("feature_encoder", enc.feature_encoder_param_count()),
        ("conformer_blocks", enc.num_layers * enc.block_param_count()),
        ("encoder_total", encoder),
        ("transducer_decoder", decoder),
        ("noisyd.encoder_c", nd.encoder_c.param_count()),
        ("noisyd.encoder_n", nd.encoder_n.param_count()),
        ("noisyd.decoder_cn", nd.decoder_cn.param_count()),
        ("noisyd_total", noisyd),
        ("baseline_total", encoder + decoder),
        (
            "inference_total",
            encoder + decoder + nd.encoder_c.param_count(),
        ),
    ];
    for (name, n) in rows {
        println!("{:<20} {:>12}", name, n);
    }
    println!("{:<20} {:>12}", "vocabulary", vocab_size);
    Ok(())
}

fn toy(a: ToyArgs) -> Result<()> {
    let sizes = ToySizes {
        train_utterances: a.train_utterances,
        test_utterances: a.test_utterances,
        ..ToySizes::default()
    };
    let corpus = write_corpus(&a.out, a.seed, sizes)?;
    println!("train\t{}", corpus.train_manifest.display());
    println!("test\t{}", corpus.test_manifest.display());
    println!("noise\t{}", corpus.noise_dir.display());
    println!("config\t{}", corpus.config.display());
    Ok(())
}
