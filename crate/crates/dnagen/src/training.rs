//! WGAN-GP adversarial training and supervised predictor training.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::gradcore::{adam_step, grad, AdamHyper, AdamState, GradError, Tape, Tensor, Var};
use crate::models::{
    Discriminator, DiscriminatorArch, Generator, GeneratorArch, ModelError, Predictor,
    PredictorArch, Pwm,
};
use crate::seqdata::{decode_argmax, encode_onehot, ScoredDataset, SeqError, SplitLabel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training aborted at step {step}: {reason}")]
    Aborted { step: usize, reason: String },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// WGAN-GP training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Generator steps; each is preceded by `disc_steps` discriminator steps.
    pub total_steps: usize,
    pub disc_steps: usize,
    pub gp_lambda: f64,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Snapshot period in generator steps; 0 disables snapshots.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            total_steps: 1000,
            disc_steps: 5,
            gp_lambda: 10.0,
            adam: AdamHyper::new(1e-4, 0.5, 0.9),
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch size must be at least 2".into()));
        }
        if self.disc_steps < 1 {
            return Err(TrainError::Config(
                "at least one discriminator step per generator step".into(),
            ));
        }
        if self.gp_lambda < 0.0 {
            return Err(TrainError::Config("gradient-penalty weight must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    /// Fraction of generated positions whose max channel is >= 0.9.
    pub onehotness: f64,
    /// Fraction of generated samples with a strong motif window, when a
    /// probe PWM is configured.
    pub motif_match_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
    /// Mean ||∇_x̂ D(x̂)|| over the last discriminator batch.
    pub grad_norm_mean: f64,
    pub snapshot: Option<Snapshot>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainMetrics {
    pub steps: Vec<StepMetrics>,
}

impl TrainMetrics {
    /// Append-only TSV: step, d_loss, g_loss, penalty, grad_norm,
    /// snapshot columns (empty when no snapshot was taken).
    pub fn save_tsv(&self, path: &Path) -> Result<(), TrainError> {
        let mut out =
            String::from("step\td_loss\tg_loss\tpenalty\tgrad_norm_mean\tonehotness\tmotif_match_rate\n");
        for m in &self.steps {
            let (oh, mm) = match &m.snapshot {
                Some(s) => (
                    format!("{}", s.onehotness),
                    s.motif_match_rate.map(|r| format!("{r}")).unwrap_or_default(),
                ),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                m.step, m.d_loss, m.g_loss, m.penalty, m.grad_norm_mean, oh, mm
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Everything random a discriminator step consumes, drawn up front so the
/// step is reproducible from its draw.
#[derive(Debug, Clone)]
pub struct DiscDraw {
    pub batch_indices: Vec<usize>,
    pub z: Vec<Tensor>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GenDraw {
    pub z: Vec<Tensor>,
}

pub fn sample_latent<R: Rng>(dim: usize, rng: &mut R) -> Tensor {
    let data = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![dim], data).expect("finite latent draw")
}

pub fn draw_disc<R: Rng>(
    rng: &mut R,
    dataset_len: usize,
    batch: usize,
    latent_dim: usize,
) -> DiscDraw {
    DiscDraw {
        batch_indices: (0..batch).map(|_| rng.gen_range(0..dataset_len)).collect(),
        z: (0..batch).map(|_| sample_latent(latent_dim, rng)).collect(),
        u: (0..batch).map(|_| rng.gen::<f64>()).collect(),
    }
}

pub fn draw_gen<R: Rng>(rng: &mut R, batch: usize, latent_dim: usize) -> GenDraw {
    GenDraw {
        z: (0..batch).map(|_| sample_latent(latent_dim, rng)).collect(),
    }
}

/// Generator output as a single [L, C] matrix (annotation appended as a
/// fifth column when present).
pub fn generator_matrix(gen: &Generator, z: &Tensor) -> Result<Tensor, GradError> {
    let (seq, track) = gen.generate(z)?;
    match track {
        None => Ok(seq),
        Some(track) => {
            let l = seq.shape()[0];
            let mut data = Vec::with_capacity(l * 5);
            for i in 0..l {
                data.extend_from_slice(&seq.data()[i * 4..(i + 1) * 4]);
                data.push(track.data()[i]);
            }
            Tensor::new(vec![l, 5], data)
        }
    }
}

/// Generator forward on a tape, joined with the annotation channel.
fn generator_matrix_var(gen: &Generator, vars: &[Var], z: &Var) -> Result<Var, GradError> {
    let (seq, track) = gen.forward_bound(vars, z)?;
    match track {
        None => Ok(seq),
        Some(track) => {
            let l = gen.arch.seq_len;
            let wide = seq.embed_cols(0, 5);
            let t = track.reshape(vec![l, 1]).embed_cols(4, 5);
            Ok(wide.add(&t))
        }
    }
}

/// (penalty, gradient norm) of the discriminator at an interpolate leaf.
pub fn gradient_penalty_var(
    disc: &Discriminator,
    disc_vars: &[Var],
    x_hat: &Var,
) -> Result<(Var, Var), GradError> {
    let d_hat = disc.forward_bound(disc_vars, x_hat)?;
    let gx = grad(&d_hat, std::slice::from_ref(x_hat))?.remove(0);
    let norm = gx.square().sum().sqrt();
    let penalty = norm.add_scalar(-1.0).square();
    Ok((penalty, norm))
}

pub fn interpolate_samples(real: &Tensor, fake: &Tensor, u: f64) -> Result<Tensor, GradError> {
    if real.shape() != fake.shape() {
        return Err(GradError::Dimension(format!(
            "interpolation shapes differ: {:?} vs {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .map(|(&r, &f)| u * r + (1.0 - u) * f)
        .collect();
    Tensor::new(real.shape().to_vec(), data)
}

/// Mean over the batch of (||∇_x̂ D(x̂)||₂ − 1)² at x̂ = u·x_real + (1−u)·x_fake.
pub fn gradient_penalty(
    disc: &Discriminator,
    x_real: &[Tensor],
    x_fake: &[Tensor],
    u: &[f64],
) -> Result<f64, TrainError> {
    if x_real.len() != x_fake.len() || x_real.len() != u.len() {
        return Err(GradError::Dimension(format!(
            "gradient_penalty: batch lengths {} / {} / {}",
            x_real.len(),
            x_fake.len(),
            u.len()
        ))
        .into());
    }
    let mut total = 0.0;
    for i in 0..x_real.len() {
        let tape = Tape::new();
        let vars = disc.params.bind(&tape);
        let x_hat = tape.leaf(interpolate_samples(&x_real[i], &x_fake[i], u[i])?);
        let (pen, _) = gradient_penalty_var(disc, &vars, &x_hat)?;
        total += pen.scalar_value();
    }
    Ok(total / x_real.len() as f64)
}

#[derive(Debug, Clone)]
pub struct DiscStepOut {
    /// Descended loss: E[D(fake)] − E[D(real)] + λ·penalty.
    pub d_loss: f64,
    /// E[D(real)] − E[D(fake)] (the adversarial objective, without penalty).
    pub wgan_objective: f64,
    pub penalty: f64,
    pub grad_norm_mean: f64,
}

/// One Adam ascent step on E[D(x_real)] − E[D(G(z))] − λ·penalty for θ_D.
/// The generator is read-only.
pub fn disc_step(
    dataset: &[Tensor],
    draw: &DiscDraw,
    gen: &Generator,
    disc: &mut Discriminator,
    state: &mut AdamState,
    gp_lambda: f64,
) -> Result<DiscStepOut, TrainError> {
    let batch = draw.batch_indices.len();
    let n_params = disc.params.len();

    struct SampleOut {
        grads: Vec<Tensor>,
        d_real: f64,
        d_fake: f64,
        penalty: f64,
        grad_norm: f64,
    }

    let per_sample = |i: usize| -> Result<SampleOut, TrainError> {
        let tape = Tape::new();
        let vars = disc.params.bind(&tape);
        let real_t = &dataset[draw.batch_indices[i]];
        let fake_t = generator_matrix(gen, &draw.z[i])?;
        let real = tape.leaf(real_t.clone());
        let fake = tape.leaf(fake_t.clone());
        let d_real = disc.forward_bound(&vars, &real)?;
        let d_fake = disc.forward_bound(&vars, &fake)?;
        let mut loss = d_fake.sub(&d_real);
        let (pen_val, norm_val) = if gp_lambda > 0.0 {
            let x_hat = tape.leaf(interpolate_samples(real_t, &fake_t, draw.u[i])?);
            let (pen, norm) = gradient_penalty_var(disc, &vars, &x_hat)?;
            loss = loss.add(&pen.scale(gp_lambda));
            (pen.scalar_value(), norm.scalar_value())
        } else {
            (0.0, 0.0)
        };
        let grads = grad(&loss, &vars)?
            .into_iter()
            .map(|g| g.value())
            .collect();
        Ok(SampleOut {
            grads,
            d_real: d_real.scalar_value(),
            d_fake: d_fake.scalar_value(),
            penalty: pen_val,
            grad_norm: norm_val,
        })
    };

    let samples: Vec<SampleOut> = (0..batch)
        .into_par_iter()
        .map(per_sample)
        .collect::<Result<_, _>>()?;

    let mut grads: Vec<Tensor> = disc
        .params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let scale = 1.0 / batch as f64;
    for s in &samples {
        for k in 0..n_params {
            let dst = grads[k].data_mut();
            for (d, &g) in dst.iter_mut().zip(s.grads[k].data()) {
                *d += g * scale;
            }
        }
    }

    let mean = |f: fn(&SampleOut) -> f64| samples.iter().map(f).sum::<f64>() * scale;
    let wgan_objective = mean(|s| s.d_real) - mean(|s| s.d_fake);
    let penalty = mean(|s| s.penalty);
    let d_loss = -wgan_objective + gp_lambda * penalty;
    if !d_loss.is_finite() {
        return Err(TrainError::Aborted {
            step: state.step_count() as usize,
            reason: format!("non-finite discriminator loss {d_loss}"),
        });
    }
    adam_step(disc.params.tensors_mut(), &grads, state, false)?;
    Ok(DiscStepOut {
        d_loss,
        wgan_objective,
        penalty,
        grad_norm_mean: mean(|s| s.grad_norm),
    })
}

#[derive(Debug, Clone)]
pub struct GenStepOut {
    /// E[D(G(z))] before the update (the ascended objective).
    pub g_loss: f64,
}

/// One Adam ascent step on E[D(G(z))] for θ_G. The discriminator is
/// read-only.
pub fn gen_step(
    gen: &mut Generator,
    disc: &Discriminator,
    draw: &GenDraw,
    state: &mut AdamState,
) -> Result<GenStepOut, TrainError> {
    let batch = draw.z.len();
    let n_params = gen.params.len();

    let per_sample = |i: usize| -> Result<(Vec<Tensor>, f64), TrainError> {
        let tape = Tape::new();
        let gen_vars = gen.params.bind(&tape);
        let disc_vars = disc.params.bind(&tape);
        let z = tape.leaf(draw.z[i].clone());
        let x = generator_matrix_var(gen, &gen_vars, &z)?;
        let score = disc.forward_bound(&disc_vars, &x)?;
        let grads = grad(&score, &gen_vars)?
            .into_iter()
            .map(|g| g.value())
            .collect();
        Ok((grads, score.scalar_value()))
    };

    let samples: Vec<(Vec<Tensor>, f64)> = (0..batch)
        .into_par_iter()
        .map(per_sample)
        .collect::<Result<_, _>>()?;

    let mut grads: Vec<Tensor> = gen
        .params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let scale = 1.0 / batch as f64;
    let mut g_loss = 0.0;
    for (sg, score) in &samples {
        g_loss += score * scale;
        for k in 0..n_params {
            let dst = grads[k].data_mut();
            for (d, &g) in dst.iter_mut().zip(sg[k].data()) {
                *d += g * scale;
            }
        }
    }
    if !g_loss.is_finite() {
        return Err(TrainError::Aborted {
            step: state.step_count() as usize,
            reason: format!("non-finite generator loss {g_loss}"),
        });
    }
    adam_step(gen.params.tensors_mut(), &grads, state, true)?;
    Ok(GenStepOut { g_loss })
}

fn snapshot(gen: &Generator, rng: &mut ChaCha8Rng, probe_pwm: Option<&Pwm>) -> Snapshot {
    const SNAPSHOT_SAMPLES: usize = 32;
    let mut strong_positions = 0usize;
    let mut total_positions = 0usize;
    let mut matches = 0usize;
    for _ in 0..SNAPSHOT_SAMPLES {
        let z = sample_latent(gen.arch.latent_dim, rng);
        let (seq, _) = gen.generate(&z).expect("generator forward");
        let l = seq.shape()[0];
        for i in 0..l {
            let mx = (0..4).map(|j| seq.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
            if mx >= 0.9 {
                strong_positions += 1;
            }
        }
        total_positions += l;
        if let Some(pwm) = probe_pwm {
            let decoded = encode_onehot(&decode_argmax(&seq));
            let best = crate::models::pwm_window_scores(&decoded, pwm)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            if best >= 0.9 * pwm.len() as f64 {
                matches += 1;
            }
        }
    }
    Snapshot {
        onehotness: strong_positions as f64 / total_positions as f64,
        motif_match_rate: probe_pwm.map(|_| matches as f64 / SNAPSHOT_SAMPLES as f64),
    }
}

/// Alternates `disc_steps` discriminator updates with one generator update.
/// Deterministic given the config seed.
pub fn train_wgan(
    dataset: &[Tensor],
    gen_arch: GeneratorArch,
    disc_arch: DiscriminatorArch,
    cfg: &TrainConfig,
    probe_pwm: Option<&Pwm>,
) -> Result<(Generator, Discriminator, TrainMetrics), TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    let shape = dataset[0].shape().to_vec();
    if dataset.iter().any(|t| t.shape() != shape) {
        return Err(TrainError::Config("dataset sequences have mixed shapes".into()));
    }
    if shape != vec![disc_arch.seq_len, disc_arch.input_channels] {
        return Err(TrainError::Config(format!(
            "dataset shape {shape:?} does not match discriminator input [{}, {}]",
            disc_arch.seq_len, disc_arch.input_channels
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = Generator::init(gen_arch, &mut rng);
    let mut disc = Discriminator::init(disc_arch, &mut rng);
    let mut disc_state = AdamState::new(disc.params.tensors(), cfg.adam);
    let mut gen_state = AdamState::new(gen.params.tensors(), cfg.adam);
    let mut metrics = TrainMetrics::default();

    for step in 0..cfg.total_steps {
        let mut d_out = None;
        for _ in 0..cfg.disc_steps {
            let draw = draw_disc(&mut rng, dataset.len(), cfg.batch_size, gen.arch.latent_dim);
            d_out = Some(disc_step(
                dataset,
                &draw,
                &gen,
                &mut disc,
                &mut disc_state,
                cfg.gp_lambda,
            )?);
        }
        let draw = draw_gen(&mut rng, cfg.batch_size, gen.arch.latent_dim);
        let g_out = gen_step(&mut gen, &disc, &draw, &mut gen_state)?;
        let d_out = d_out.expect("disc_steps >= 1");
        let snap = if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            Some(snapshot(&gen, &mut rng, probe_pwm))
        } else {
            None
        };
        metrics.steps.push(StepMetrics {
            step,
            d_loss: d_out.d_loss,
            g_loss: g_out.g_loss,
            penalty: d_out.penalty,
            grad_norm_mean: d_out.grad_norm_mean,
            snapshot: snap,
        });
    }
    Ok((gen, disc, metrics))
}

/// Supervised predictor training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            batch_size: 32,
            total_steps: 500,
            adam: AdamHyper::new(1e-3, 0.9, 0.999),
            seed: 0,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorEval {
    pub step: usize,
    pub train_mse: f64,
    pub valid_mse: f64,
    pub valid_spearman: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PredictorMetrics {
    pub evals: Vec<PredictorEval>,
}

impl PredictorMetrics {
    pub fn save_tsv(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = String::from("step\ttrain_mse\tvalid_mse\tvalid_spearman\n");
        for e in &self.evals {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.step, e.train_mse, e.valid_mse, e.valid_spearman
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

pub fn predictor_mse(pred: &Predictor, data: &[(Tensor, f64)]) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = data
        .par_iter()
        .map(|(x, y)| pred.score(x).map(|p| (p - y) * (p - y)))
        .collect::<Result<Vec<f64>, _>>()?
        .into_iter()
        .sum();
    Ok(total / data.len() as f64)
}

/// Minimizes mean squared error between predictor output and scores.
pub fn train_predictor(
    data: &ScoredDataset,
    arch: PredictorArch,
    cfg: &PredictorTrainConfig,
) -> Result<(Predictor, PredictorMetrics), TrainError> {
    let encode = |label: SplitLabel| -> Vec<(Tensor, f64)> {
        data.split(label)
            .map(|e| (encode_onehot(&e.sequence), e.score))
            .collect()
    };
    let train = encode(SplitLabel::Train);
    let valid = encode(SplitLabel::Valid);
    if train.is_empty() {
        return Err(TrainError::Config("train split is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pred = Predictor::init(arch, &mut rng);
    let mut state = AdamState::new(pred.params.tensors(), cfg.adam);
    let mut metrics = PredictorMetrics::default();
    let n_params = pred.params.len();

    for step in 0..cfg.total_steps {
        let indices: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..train.len()))
            .collect();

        let samples: Vec<(Vec<Tensor>, f64)> = indices
            .par_iter()
            .map(|&idx| -> Result<(Vec<Tensor>, f64), TrainError> {
                let (x, y) = &train[idx];
                let tape = Tape::new();
                let vars = pred.params.bind(&tape);
                let xv = tape.leaf(x.clone());
                let out = pred.forward_bound(&vars, &xv)?;
                let loss = out.add_scalar(-y).square();
                let grads = grad(&loss, &vars)?
                    .into_iter()
                    .map(|g| g.value())
                    .collect();
                Ok((grads, loss.scalar_value()))
            })
            .collect::<Result<_, _>>()?;

        let mut grads: Vec<Tensor> = pred
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        let scale = 1.0 / cfg.batch_size as f64;
        let mut train_mse = 0.0;
        for (sg, loss) in &samples {
            train_mse += loss * scale;
            for k in 0..n_params {
                let dst = grads[k].data_mut();
                for (d, &g) in dst.iter_mut().zip(sg[k].data()) {
                    *d += g * scale;
                }
            }
        }
        if !train_mse.is_finite() {
            return Err(TrainError::Aborted {
                step,
                reason: format!("non-finite predictor loss {train_mse}"),
            });
        }
        adam_step(pred.params.tensors_mut(), &grads, &mut state, false)?;

        if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps)
        {
            let valid_mse = predictor_mse(&pred, &valid)?;
            let valid_spearman = if valid.len() >= 2 {
                let preds: Vec<f64> = valid
                    .par_iter()
                    .map(|(x, _)| pred.score(x))
                    .collect::<Result<_, _>>()?;
                let truth: Vec<f64> = valid.iter().map(|(_, y)| *y).collect();
                spearman(&preds, &truth)?
            } else {
                0.0
            };
            metrics.evals.push(PredictorEval {
                step,
                train_mse,
                valid_mse,
                valid_spearman,
            });
        }
    }
    Ok((pred, metrics))
}

/// Spearman rank correlation: Pearson correlation of fractional ranks with
/// average-rank ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, TrainError> {
    if a.len() != b.len() {
        return Err(GradError::Dimension(format!(
            "spearman: lengths {} vs {}",
            a.len(),
            b.len()
        ))
        .into());
    }
    if a.len() < 2 {
        return Err(TrainError::Config("spearman needs at least 2 points".into()));
    }
    let ra = fractional_ranks(a);
    let rb = fractional_ranks(b);
    Ok(pearson(&ra, &rb))
}

fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank over the tie group; ranks are 1-based.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
