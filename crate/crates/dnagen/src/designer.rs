//! Gradient-based sequence design: ascend a differentiable objective either
//! directly over a per-position latent (softmax pre-layer) or through a
//! trained generator's latent space.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::gradcore::{adam_step, grad, AdamHyper, AdamState, GradError, Tape, Tensor, Var};
use crate::models::{pwm_score, ModelError, Predictor, Pwm};
use crate::seqdata::{decode_argmax, DnaSequence, SyntheticOracle};
use crate::training::sample_latent;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A differentiable sequence property f(x), x an [L, 4] soft one-hot matrix.
#[derive(Debug, Clone)]
pub enum Property {
    /// Output of a trained predictor network.
    Predictor(Predictor),
    /// Best-window PWM match score.
    PwmMatch(Pwm),
    /// Closed-form synthetic fitness.
    Oracle(SyntheticOracle),
    /// Mean probability mass on one nucleotide channel (toy objective).
    ChannelMass(usize),
}

impl Property {
    pub fn eval_var(&self, x: &Var) -> Result<Var, DesignError> {
        match self {
            Property::Predictor(p) => {
                let vars = p.params.bind(&x.tape());
                Ok(p.forward_bound(&vars, x)?)
            }
            Property::PwmMatch(pwm) => Ok(pwm_score(x, pwm)?),
            Property::Oracle(o) => Ok(o.score_var(x)?),
            Property::ChannelMass(c) => {
                let l = x.shape()[0];
                if *c >= 4 {
                    return Err(DesignError::Config(format!("channel {c} out of range")));
                }
                Ok(x.slice_cols(*c, 1).sum().scale(1.0 / l as f64))
            }
        }
    }

    pub fn eval(&self, x: &Tensor) -> Result<f64, DesignError> {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        Ok(self.eval_var(&xv)?.scalar_value())
    }
}

/// Weighted sum of properties: t(x) = Σ wᵢ·fᵢ(x). Negative weights
/// penalize a property.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub terms: Vec<(f64, Property)>,
}

impl Objective {
    pub fn new() -> Self {
        Objective { terms: Vec::new() }
    }

    pub fn single(property: Property) -> Self {
        Objective {
            terms: vec![(1.0, property)],
        }
    }

    pub fn push(mut self, weight: f64, property: Property) -> Self {
        self.terms.push((weight, property));
        self
    }

    pub fn eval_var(&self, x: &Var) -> Result<Var, DesignError> {
        if self.terms.is_empty() {
            return Err(DesignError::Config("objective has no terms".into()));
        }
        let mut total: Option<Var> = None;
        for (w, prop) in &self.terms {
            let term = prop.eval_var(x)?.scale(*w);
            total = Some(match total {
                None => term,
                Some(acc) => acc.add(&term),
            });
        }
        Ok(total.unwrap())
    }

    pub fn eval(&self, x: &Tensor) -> Result<f64, DesignError> {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        Ok(self.eval_var(&xv)?.scalar_value())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    /// Maximum ascent steps per restart.
    pub max_steps: usize,
    pub restarts: usize,
    pub adam: AdamHyper,
    /// Std of zero-mean noise added to the gradient each step.
    pub noise_std: f64,
    /// Weight ε₂ on the standard-normal latent prior (joint mode only).
    pub prior_weight: f64,
    pub seed: u64,
    /// Use a plain gradient step of size `adam.step_size` instead of Adam.
    pub plain_step: bool,
    /// Converged when |Δt| stays below this for `patience` steps.
    pub convergence_tol: f64,
    pub patience: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            max_steps: 2000,
            restarts: 1,
            adam: AdamHyper::new(1e-1, 0.9, 0.999),
            noise_std: 1e-5,
            prior_weight: 0.0,
            seed: 0,
            plain_step: false,
            convergence_tol: 1e-8,
            patience: 50,
        }
    }
}

impl DesignConfig {
    fn validate(&self) -> Result<(), DesignError> {
        if self.restarts == 0 {
            return Err(DesignError::Config("at least one restart required".into()));
        }
        if self.max_steps == 0 {
            return Err(DesignError::Config("max_steps must be positive".into()));
        }
        if self.noise_std < 0.0 {
            return Err(DesignError::Config("noise std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    pub restart: usize,
    pub steps_run: usize,
    pub converged: bool,
    /// Objective value at the final soft matrix.
    pub score: f64,
    pub sequence: DnaSequence,
    /// Final soft one-hot matrix [L, 4].
    pub soft: Tensor,
    /// Final latent: [L, 4] pre-softmax in direct mode, [D_z] in joint mode.
    pub latent: Tensor,
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn perturb(grads: &mut [Tensor], noise_std: f64, rng: &mut ChaCha8Rng) {
    if noise_std == 0.0 {
        return;
    }
    let noise = Normal::new(0.0, noise_std).expect("valid noise std");
    for g in grads {
        for v in g.data_mut() {
            *v += noise.sample(rng);
        }
    }
}

fn ascend(
    z: &mut Tensor,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &DesignConfig,
) -> Result<(), DesignError> {
    if cfg.plain_step {
        for (v, &g) in z.data_mut().iter_mut().zip(grads[0].data()) {
            *v += cfg.adam.step_size * g;
        }
        Ok(())
    } else {
        let mut params = [z.clone()];
        adam_step(&mut params, grads, state, true)?;
        let [updated] = params;
        *z = updated;
        Ok(())
    }
}

/// One restart of the shared ascent loop. `forward` maps a latent leaf to
/// (soft matrix, total objective including any prior term).
fn run_restart<F>(
    restart: usize,
    init: Tensor,
    cfg: &DesignConfig,
    forward: F,
) -> Result<DesignResult, DesignError>
where
    F: Fn(&Var) -> Result<(Var, Var), DesignError>,
{
    let mut rng = restart_rng(cfg.seed, restart);
    // Burn the draws used for initialization so noise is decorrelated.
    let mut z = init;
    let mut state = AdamState::new(std::slice::from_ref(&z), cfg.adam);
    let mut prev_t = f64::NAN;
    let mut quiet = 0usize;
    let mut steps_run = 0usize;
    let mut converged = false;

    for step in 0..cfg.max_steps {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let (_, total) = forward(&zv)?;
        let t = total.scalar_value();
        if !t.is_finite() {
            return Err(DesignError::Config(format!(
                "non-finite objective {t} at restart {restart} step {step}"
            )));
        }
        let mut grads = vec![grad(&total, std::slice::from_ref(&zv))?.remove(0).value()];
        perturb(&mut grads, cfg.noise_std, &mut rng);
        ascend(&mut z, &grads, &mut state, cfg)?;
        steps_run = step + 1;

        if (t - prev_t).abs() < cfg.convergence_tol {
            quiet += 1;
            if quiet >= cfg.patience {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
        prev_t = t;
    }

    let tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let (soft_var, total) = forward(&zv)?;
    let soft = soft_var.value();
    Ok(DesignResult {
        restart,
        steps_run,
        converged,
        score: total.scalar_value(),
        sequence: decode_argmax(&soft),
        soft,
        latent: z,
    })
}

/// Direct design: free [L, 4] pre-softmax latent, x = softmax over channels,
/// Adam ascent on the objective. One result per restart.
pub fn direct_design(
    objective: &Objective,
    seq_len: usize,
    cfg: &DesignConfig,
) -> Result<Vec<DesignResult>, DesignError> {
    cfg.validate()?;
    (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(cfg.seed, r);
            let init = Tensor::new(
                vec![seq_len, 4],
                (0..seq_len * 4).map(|_| StandardNormal.sample(&mut rng)).collect(),
            )?;
            run_restart(r, init, cfg, |zv| {
                let x = zv.softmax_rows();
                let t = objective.eval_var(&x)?;
                Ok((x, t))
            })
        })
        .collect()
}

/// Joint design: ascend the objective through a trained generator,
/// ∇_z t(G(z)), optionally regularized toward the standard-normal prior.
pub fn joint_design(
    objective: &Objective,
    gen: &crate::models::Generator,
    cfg: &DesignConfig,
) -> Result<Vec<DesignResult>, DesignError> {
    cfg.validate()?;
    (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(cfg.seed, r);
            let init = sample_latent(gen.arch.latent_dim, &mut rng);
            run_restart(r, init, cfg, |zv| {
                let vars = gen.params.bind(&zv.tape());
                let (x, _) = gen.forward_bound(&vars, zv)?;
                let mut t = objective.eval_var(&x)?;
                if cfg.prior_weight != 0.0 {
                    // log N(z; 0, I) up to a constant is −‖z‖²/2.
                    let prior = zv.square().sum().scale(-0.5 * cfg.prior_weight);
                    t = t.add(&prior);
                }
                Ok((x, t))
            })
        })
        .collect()
}

/// TSV report: restart, step count, final objective, decoded sequence, and
/// each term re-evaluated on the decoded one-hot sequence.
pub fn design_report(
    results: &[DesignResult],
    objective: &Objective,
    path: &Path,
) -> Result<(), DesignError> {
    let mut out = String::from("restart\tsteps\tconverged\tfinal_t\tsequence");
    for i in 0..objective.terms.len() {
        out.push_str(&format!("\tterm{i}_score"));
    }
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            r.restart, r.steps_run, r.converged, r.score, r.sequence
        ));
        let decoded = crate::seqdata::encode_onehot(&r.sequence);
        for (_, prop) in &objective.terms {
            out.push_str(&format!("\t{}", prop.eval(&decoded)?));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
