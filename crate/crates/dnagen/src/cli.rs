//! Command-line interface: TOML config handling, run directories, and the
//! train / design / eval entry points.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::designer::{
    design_report, direct_design, joint_design, DesignConfig, DesignError, Objective, Property,
};
use crate::evalkit::{
    align_boundary_logos, distance_distribution, interpolate_latent, invert_generator,
    logo_matrix, motif_matches, reflect_and_summarize, sample_generator, single_span_fraction,
    EvalError, InvertConfig,
};
use crate::gradcore::{AdamHyper, GradError, Tensor};
use crate::models::{
    load_checkpoint, save_checkpoint, Checkpoint, DiscriminatorArch, Generator, GeneratorArch,
    ModelError, PredictorArch, Pwm,
};
use crate::seqdata::{
    encode_onehot, ingest_fasta, percentile_filter, synth_binding_data, synth_motif_dataset,
    DnaSequence, MotifExample, ScoredDataset, SeqError, SyntheticOracle,
};
use crate::training::{
    sample_latent, train_predictor, train_wgan, PredictorTrainConfig, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training aborted: {0}")]
    Abort(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Abort(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => CliError::Config(msg),
            TrainError::Aborted { .. } => CliError::Abort(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Config(msg) => CliError::Config(msg),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SeqError> for CliError {
    fn from(e: SeqError) -> Self {
        match e {
            SeqError::Config(msg) => CliError::Config(msg),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(msg) => CliError::Config(msg),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<GradError> for CliError {
    fn from(e: GradError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("i/o error: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "dnagen", version, about = "Generative design of DNA sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the command's config section.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing). Defaults to a fresh
    /// directory under ./runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the WGAN-GP generator/discriminator pair.
    TrainGan(RunArgs),
    /// Train the property predictor on scored sequences.
    TrainPredictor {
        #[command(flatten)]
        args: RunArgs,
        /// Keep only entries at or below this score percentile.
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// Gradient-based sequence design against an objective.
    Design(RunArgs),
    /// Evaluation analyses over trained models.
    Eval {
        #[arg(value_enum)]
        op: EvalOp,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalOp {
    Interpolate,
    InvertReflect,
    Distances,
    Logos,
    ExonAlign,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// One of: synthetic_motif, fasta, synthetic_binding, scored_tsv.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motif: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planting_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fasta_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_motifs: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    /// One of: pwm, predictor, oracle, channel_mass.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motif: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_motifs: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// "direct" or "joint".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<PathBuf>,
    pub terms: Vec<TermSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plain_step: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flank: Option<usize>,
    /// Inversion target sequence; defaults to a generator sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invert_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    /// Count reference entries identical to the query; off by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_self: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn or_set<T: Clone>(slot: &mut Option<T>, default: T) -> T {
    slot.get_or_insert(default).clone()
}

fn req<T: Clone>(slot: &Option<T>, what: &str) -> Result<T, CliError> {
    slot.clone()
        .ok_or_else(|| CliError::Config(format!("missing required field: {what}")))
}

fn load_config(path: &Path) -> Result<Config, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn run_dir(out: &Option<PathBuf>, config_path: &Path) -> Result<PathBuf, CliError> {
    let dir = match out {
        Some(p) => p.clone(),
        None => {
            let text = fs::read(config_path)?;
            let digest = Sha256::digest(&text);
            let hash: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{ts}-{hash}"))
        }
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Writes the config with every default the run actually used filled in.
fn write_resolved(cfg: &Config, dir: &Path) -> Result<(), CliError> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::Other(format!("serializing resolved config: {e}")))?;
    fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainGan(args) => cmd_train_gan(args),
        Command::TrainPredictor { args, percentile } => cmd_train_predictor(args, percentile),
        Command::Design(args) => cmd_design(args),
        Command::Eval { op, args } => cmd_eval(op, args),
    }
}

fn motif_tensor(ex: &MotifExample, annotation: bool) -> Tensor {
    let oh = encode_onehot(&ex.sequence);
    if !annotation {
        return oh;
    }
    let l = oh.shape()[0];
    let mut data = Vec::with_capacity(l * 5);
    for i in 0..l {
        data.extend_from_slice(&oh.data()[i * 4..(i + 1) * 4]);
        data.push(ex.track.values()[i]);
    }
    Tensor::new(vec![l, 5], data).expect("finite track values")
}

/// Sequences (and a probe PWM, when one is planted) for GAN training or as
/// an evaluation reference set.
fn load_sequences(data: &mut DataSection) -> Result<(Vec<MotifExample>, Option<Pwm>), CliError> {
    match data.kind.as_str() {
        "synthetic_motif" => {
            let seq_len = req(&data.seq_len, "data.seq_len")?;
            let motif = req(&data.motif, "data.motif")?;
            let n = or_set(&mut data.n, 500);
            let planting = or_set(&mut data.planting_prob, 1.0);
            let seed = or_set(&mut data.seed, 0);
            or_set(&mut data.annotation, false);
            let pwm = Pwm::from_consensus(&motif)?;
            let examples =
                synth_motif_dataset(n, seq_len, &pwm, planting, &[0.25; 4], seed)?;
            Ok((examples, Some(pwm)))
        }
        "fasta" => {
            let path = req(&data.fasta_path, "data.fasta_path")?;
            let seq_len = req(&data.seq_len, "data.seq_len")?;
            let seqs = ingest_fasta(&path, seq_len)?;
            let examples = seqs
                .into_iter()
                .map(|sequence| {
                    let track = crate::seqdata::AnnotationTrack::from_span(seq_len, None);
                    MotifExample {
                        sequence,
                        span: None,
                        track,
                    }
                })
                .collect();
            Ok((examples, None))
        }
        other => Err(CliError::Config(format!(
            "data.kind {other:?} is not a sequence source (expected synthetic_motif or fasta)"
        ))),
    }
}

fn train_section_config(
    train: &mut TrainSection,
    seed_override: Option<u64>,
) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.batch_size = or_set(&mut train.batch_size, cfg.batch_size);
    cfg.total_steps = or_set(&mut train.total_steps, cfg.total_steps);
    cfg.disc_steps = or_set(&mut train.disc_steps, cfg.disc_steps);
    cfg.gp_lambda = or_set(&mut train.gp_lambda, cfg.gp_lambda);
    if let Some(seed) = seed_override {
        train.seed = Some(seed);
    }
    cfg.seed = or_set(&mut train.seed, 0);
    cfg.eval_every = or_set(&mut train.eval_every, cfg.eval_every);
    cfg.adam = AdamHyper::new(
        or_set(&mut train.step_size, 1e-4),
        or_set(&mut train.beta1, 0.5),
        or_set(&mut train.beta2, 0.9),
    );
    cfg
}

fn cmd_train_gan(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    let dir = run_dir(&args.out, &args.config)?;
    let data = cfg
        .data
        .as_mut()
        .ok_or_else(|| CliError::Config("missing [data] section".into()))?;
    let (examples, probe_pwm) = load_sequences(data)?;
    let annotation = data.annotation.unwrap_or(false);
    let seq_len = req(&data.seq_len, "data.seq_len")?;
    if examples.is_empty() {
        return Err(CliError::Config("no training sequences produced".into()));
    }
    let dataset: Vec<Tensor> = examples.iter().map(|e| motif_tensor(e, annotation)).collect();

    let model = cfg.model.get_or_insert_with(Default::default);
    let latent_dim = or_set(&mut model.latent_dim, 100);
    let hidden = or_set(&mut model.hidden, 64);
    let mut gen_arch = GeneratorArch::new(latent_dim, seq_len, hidden);
    if annotation {
        gen_arch = gen_arch.with_annotation();
    }
    let channels = gen_arch.output_channels();
    let disc_arch = DiscriminatorArch::new(seq_len, hidden, channels);

    let train = cfg.train.get_or_insert_with(Default::default);
    let tcfg = train_section_config(train, args.seed);

    let (gen, disc, metrics) = train_wgan(&dataset, gen_arch, disc_arch, &tcfg, probe_pwm.as_ref())?;

    save_checkpoint(&Checkpoint::of_generator(&gen), &dir.join("generator.json"))?;
    save_checkpoint(&Checkpoint::of_discriminator(&disc), &dir.join("discriminator.json"))?;
    metrics.save_tsv(&dir.join("metrics.tsv"))?;
    write_resolved(&cfg, &dir)?;
    if let Some(last) = metrics.steps.last() {
        println!(
            "trained {} generator steps; final d_loss {:.6} g_loss {:.6}",
            metrics.steps.len(),
            last.d_loss,
            last.g_loss
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn load_scored(data: &mut DataSection) -> Result<ScoredDataset, CliError> {
    match data.kind.as_str() {
        "synthetic_binding" => {
            let seq_len = req(&data.seq_len, "data.seq_len")?;
            let motifs = req(&data.oracle_motifs, "data.oracle_motifs")?;
            let weights = or_set(&mut data.oracle_weights, vec![1.0; motifs.len()]);
            let n = or_set(&mut data.n, 500);
            let seed = or_set(&mut data.seed, 0);
            let pwms = motifs
                .iter()
                .map(|m| Pwm::from_consensus(m))
                .collect::<Result<Vec<_>, _>>()?;
            let mut oracle = SyntheticOracle::new(pwms, weights, seed)?;
            Ok(synth_binding_data(&mut oracle, n, seq_len, seed)?)
        }
        "scored_tsv" => {
            let path = req(&data.scores_path, "data.scores_path")?;
            Ok(ScoredDataset::load_tsv(&path)?)
        }
        other => Err(CliError::Config(format!(
            "data.kind {other:?} is not a scored source (expected synthetic_binding or scored_tsv)"
        ))),
    }
}

fn cmd_train_predictor(args: RunArgs, percentile: Option<f64>) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    let dir = run_dir(&args.out, &args.config)?;
    let data = cfg
        .data
        .as_mut()
        .ok_or_else(|| CliError::Config("missing [data] section".into()))?;
    let full = load_scored(data)?;
    if full.is_empty() {
        return Err(CliError::Config("scored dataset is empty".into()));
    }
    let seq_len = full.entries[0].sequence.len();

    let train = cfg.train.get_or_insert_with(Default::default);
    if let Some(p) = percentile {
        train.percentile = Some(p);
    }
    let used = match train.percentile {
        Some(p) => {
            if !(0.0..=100.0).contains(&p) {
                return Err(CliError::Config(format!("percentile {p} out of [0,100]")));
            }
            percentile_filter(&full, p)
        }
        None => full.clone(),
    };

    let model = cfg.model.get_or_insert_with(Default::default);
    let arch = PredictorArch::new(
        seq_len,
        or_set(&mut model.filters, 16),
        or_set(&mut model.filter_len, 12),
        or_set(&mut model.pred_hidden, 32),
    );

    let mut pcfg = PredictorTrainConfig::default();
    pcfg.batch_size = or_set(&mut train.batch_size, pcfg.batch_size);
    pcfg.total_steps = or_set(&mut train.total_steps, pcfg.total_steps);
    if let Some(seed) = args.seed {
        train.seed = Some(seed);
    }
    pcfg.seed = or_set(&mut train.seed, 0);
    pcfg.eval_every = or_set(&mut train.eval_every, pcfg.eval_every);
    pcfg.adam = AdamHyper::new(
        or_set(&mut train.step_size, 1e-3),
        or_set(&mut train.beta1, 0.9),
        or_set(&mut train.beta2, 0.999),
    );

    let (pred, metrics) = train_predictor(&used, arch, &pcfg)?;

    save_checkpoint(&Checkpoint::of_predictor(&pred), &dir.join("predictor.json"))?;
    metrics.save_tsv(&dir.join("predictor_metrics.tsv"))?;
    full.save_tsv(&dir.join("dataset_full.tsv"))?;
    used.save_tsv(&dir.join("dataset.tsv"))?;
    write_resolved(&cfg, &dir)?;
    if let Some(last) = metrics.evals.last() {
        println!(
            "trained {} steps on {} entries; valid mse {:.6} spearman {:.4}",
            pcfg.total_steps,
            used.len(),
            last.valid_mse,
            last.valid_spearman
        );
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn build_objective(terms: &mut [TermSection]) -> Result<Objective, CliError> {
    if terms.is_empty() {
        return Err(CliError::Config("design.terms is empty".into()));
    }
    let mut objective = Objective::new();
    for (i, term) in terms.iter_mut().enumerate() {
        let weight = or_set(&mut term.weight, 1.0);
        let prop = match term.kind.as_str() {
            "pwm" => {
                let motif = req(&term.motif, &format!("design.terms[{i}].motif"))?;
                Property::PwmMatch(Pwm::from_consensus(&motif)?)
            }
            "predictor" => {
                let path = req(&term.path, &format!("design.terms[{i}].path"))?;
                Property::Predictor(load_checkpoint(&path)?.into_predictor()?)
            }
            "oracle" => {
                let motifs = req(&term.oracle_motifs, &format!("design.terms[{i}].oracle_motifs"))?;
                let weights = or_set(&mut term.oracle_weights, vec![1.0; motifs.len()]);
                let pwms = motifs
                    .iter()
                    .map(|m| Pwm::from_consensus(m))
                    .collect::<Result<Vec<_>, _>>()?;
                Property::Oracle(SyntheticOracle::new(pwms, weights, 0)?)
            }
            "channel_mass" => {
                Property::ChannelMass(req(&term.channel, &format!("design.terms[{i}].channel"))?)
            }
            other => {
                return Err(CliError::Config(format!(
                    "design.terms[{i}].kind {other:?} (expected pwm, predictor, oracle, or channel_mass)"
                )))
            }
        };
        objective = objective.push(weight, prop);
    }
    Ok(objective)
}

fn cmd_design(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    let dir = run_dir(&args.out, &args.config)?;
    let design = cfg
        .design
        .as_mut()
        .ok_or_else(|| CliError::Config("missing [design] section".into()))?;

    let objective = build_objective(&mut design.terms)?;
    let mode = or_set(&mut design.mode, "direct".to_string());
    if let Some(seed) = args.seed {
        design.seed = Some(seed);
    }
    let dcfg = DesignConfig {
        max_steps: or_set(&mut design.max_steps, 2000),
        restarts: or_set(&mut design.restarts, 10),
        adam: AdamHyper::new(
            or_set(&mut design.step_size, 1e-1),
            or_set(&mut design.beta1, 0.9),
            or_set(&mut design.beta2, 0.999),
        ),
        noise_std: or_set(&mut design.noise_std, 1e-5),
        prior_weight: or_set(&mut design.prior_weight, 0.0),
        seed: or_set(&mut design.seed, 0),
        plain_step: or_set(&mut design.plain_step, false),
        ..DesignConfig::default()
    };

    let results = match mode.as_str() {
        "direct" => {
            let seq_len = req(&design.seq_len, "design.seq_len")?;
            direct_design(&objective, seq_len, &dcfg)?
        }
        "joint" => {
            let path = req(&design.generator, "design.generator")?;
            let gen = load_checkpoint(&path)?.into_generator()?;
            joint_design(&objective, &gen, &dcfg)?
        }
        other => {
            return Err(CliError::Config(format!(
                "design.mode {other:?} (expected direct or joint)"
            )))
        }
    };

    design_report(&results, &objective, &dir.join("designs.tsv"))?;
    // Match boxes for any PWM terms: strong windows of each design.
    let pwm_terms: Vec<&Pwm> = objective
        .terms
        .iter()
        .filter_map(|(_, p)| match p {
            crate::designer::Property::PwmMatch(pwm) => Some(pwm),
            _ => None,
        })
        .collect();
    if !pwm_terms.is_empty() {
        let mut out = String::from("restart\tterm\tposition\tscore\n");
        for r in &results {
            for (t, pwm) in pwm_terms.iter().enumerate() {
                for (pos, score) in motif_matches(&r.sequence, pwm, 0.9 * pwm.len() as f64) {
                    out.push_str(&format!("{}\t{t}\t{pos}\t{score}\n", r.restart));
                }
            }
        }
        fs::write(dir.join("matches.tsv"), out)?;
    }
    write_resolved(&cfg, &dir)?;
    let best = results
        .iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        .expect("restarts >= 1");
    println!(
        "best of {} restarts: score {:.6} sequence {}",
        results.len(),
        best.score,
        best.sequence
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn load_generator(eval: &EvalSection) -> Result<Generator, CliError> {
    let path = req(&eval.generator, "eval.generator")?;
    Ok(load_checkpoint(&path)?.into_generator()?)
}

fn cmd_eval(op: EvalOp, args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    let dir = run_dir(&args.out, &args.config)?;
    let eval = cfg.eval.get_or_insert_with(Default::default);
    if let Some(seed) = args.seed {
        eval.seed = Some(seed);
    }
    let seed = or_set(&mut eval.seed, 0);
    let gen = load_generator(eval)?;

    match op {
        EvalOp::Interpolate => {
            let points = or_set(&mut eval.points, 11);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z0 = sample_latent(gen.arch.latent_dim, &mut rng);
            let z1 = sample_latent(gen.arch.latent_dim, &mut rng);
            let path = interpolate_latent(&gen, &z0, &z1, points)?;
            let mut out = String::from("alpha\tsequence\n");
            for p in &path {
                out.push_str(&format!("{}\t{}\n", p.alpha, p.sequence));
            }
            fs::write(dir.join("interpolation.tsv"), out)?;
        }
        EvalOp::InvertReflect => {
            let n_points = or_set(&mut eval.n_points, 16);
            let icfg = InvertConfig {
                max_steps: or_set(&mut eval.invert_steps, 400),
                seed,
                ..InvertConfig::default()
            };
            let target: DnaSequence = match &eval.target {
                Some(t) => t
                    .parse()
                    .map_err(|e: SeqError| CliError::Config(e.to_string()))?,
                None => sample_generator(&gen, 1, seed.wrapping_add(1))?
                    .remove(0)
                    .0,
            };
            eval.target = Some(target.to_string());
            let points = invert_generator(&gen, &target, n_points, &icfg)?;
            let mut out = String::from("point\tmatch_fraction\tloss\taccepted\n");
            for (i, p) in points.iter().enumerate() {
                out.push_str(&format!(
                    "{i}\t{}\t{}\t{}\n",
                    p.match_fraction, p.loss, p.accepted
                ));
            }
            fs::write(dir.join("invert.tsv"), out)?;
            let accepted: Vec<_> = points
                .iter()
                .filter(|p| p.accepted)
                .map(|p| p.latent.clone())
                .collect();
            let latents = if accepted.is_empty() {
                points.iter().map(|p| p.latent.clone()).collect()
            } else {
                accepted
            };
            let logo = reflect_and_summarize(&gen, &latents)?;
            logo.save_tsv(&dir.join("reflect_logo.tsv"))?;
            println!(
                "accepted {}/{} inversion points",
                points.iter().filter(|p| p.accepted).count(),
                points.len()
            );
        }
        EvalOp::Distances => {
            let n = or_set(&mut eval.n_samples, 64);
            let include_self = or_set(&mut eval.include_self, false);
            let data = cfg
                .data
                .as_mut()
                .ok_or_else(|| CliError::Config("missing [data] section (reference set)".into()))?;
            let (examples, _) = load_sequences(data)?;
            let reference: Vec<DnaSequence> =
                examples.into_iter().map(|e| e.sequence).collect();
            let queries: Vec<DnaSequence> = sample_generator(&gen, n, seed)?
                .into_iter()
                .map(|(s, _)| s)
                .collect();
            let dist = distance_distribution(&queries, &reference, include_self)?;
            dist.save_tsv(&dir.join("distances.tsv"))?;
            println!(
                "min distance to reference set: {} (mean {:.3})",
                dist.min().unwrap_or(0),
                dist.mean()
            );
        }
        EvalOp::Logos => {
            let n = or_set(&mut eval.n_samples, 64);
            let seqs: Vec<DnaSequence> = sample_generator(&gen, n, seed)?
                .into_iter()
                .map(|(s, _)| s)
                .collect();
            let logo = logo_matrix(&seqs)?;
            logo.save_tsv(&dir.join("logo.tsv"))?;
        }
        EvalOp::ExonAlign => {
            if !gen.arch.annotation {
                return Err(CliError::Config(
                    "exon-align needs a generator trained with an annotation track".into(),
                ));
            }
            let n = or_set(&mut eval.n_samples, 64);
            let flank = or_set(&mut eval.flank, 5);
            let samples = sample_generator(&gen, n, seed)?;
            let logos = align_boundary_logos(&samples, flank)?;
            if let Some(start) = &logos.start {
                start.save_tsv(&dir.join("exon_logo_start.tsv"))?;
            }
            if let Some(end) = &logos.end {
                end.save_tsv(&dir.join("exon_logo_end.tsv"))?;
            }
            let summary = format!(
                "single_span_fraction\tstart_aligned\tstart_skipped\tend_aligned\tend_skipped\tstart_peak\tend_peak\n{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                single_span_fraction(&samples),
                logos.start_aligned,
                logos.start_skipped,
                logos.end_aligned,
                logos.end_skipped,
                logos
                    .start
                    .as_ref()
                    .map(|l| l.peak_position().to_string())
                    .unwrap_or_default(),
                logos
                    .end
                    .as_ref()
                    .map(|l| l.peak_position().to_string())
                    .unwrap_or_default()
            );
            fs::write(dir.join("exon_summary.tsv"), summary)?;
        }
    }
    write_resolved(&cfg, &dir)?;
    println!("outputs in {}", dir.display());
    Ok(())
}
