//! Network definitions: WGAN generator, WGAN discriminator, DeepBind-style
//! learned predictor and the fixed-PWM predictor, plus checkpoint I/O.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcore::{GradError, PadSpec, Tape, Tensor, Var};

pub const NUM_RESBLOCKS: usize = 5;
pub const RESBLOCK_FILTER_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("pwm error: {0}")]
    Pwm(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Position weight matrix: K rows, each a probability distribution over
/// (A, C, G, T).
#[derive(Debug, Clone, PartialEq)]
pub struct Pwm {
    rows: Vec<[f64; 4]>,
}

impl Pwm {
    pub fn new(rows: Vec<[f64; 4]>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::Pwm("pwm must have at least one row".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(ModelError::Pwm(format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(ModelError::Pwm(format!("row {i} sums to {s}, expected 1")));
            }
        }
        Ok(Pwm { rows })
    }

    /// Exact one-hot columns for a consensus string over ACGT.
    pub fn from_consensus(consensus: &str) -> Result<Self, ModelError> {
        Self::from_consensus_soft(consensus, 1.0)
    }

    /// `p` on the consensus base, the rest spread uniformly.
    pub fn from_consensus_soft(consensus: &str, p: f64) -> Result<Self, ModelError> {
        if !(0.25..=1.0).contains(&p) {
            return Err(ModelError::Pwm(format!("consensus weight {p} out of range")));
        }
        let rest = (1.0 - p) / 3.0;
        let rows = consensus
            .chars()
            .map(|ch| {
                let idx = match ch.to_ascii_uppercase() {
                    'A' => 0,
                    'C' => 1,
                    'G' => 2,
                    'T' => 3,
                    other => return Err(ModelError::Pwm(format!("invalid base '{other}'"))),
                };
                let mut row = [rest; 4];
                row[idx] = p;
                Ok(row)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Pwm::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 4]] {
        &self.rows
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.rows.iter().flatten().copied().collect();
        Tensor::new(vec![self.rows.len(), 4], data).expect("pwm rows are finite")
    }

    /// Highest-probability base per row, ties to the lowest column index.
    pub fn consensus(&self) -> String {
        self.rows
            .iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..4 {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                ['A', 'C', 'G', 'T'][best]
            })
            .collect()
    }

    /// TSV with header "A\tC\tG\tT".
    pub fn save_tsv(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = String::from("A\tC\tG\tT\n");
        for row in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", row[0], row[1], row[2], row[3]));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| ModelError::Pwm("empty pwm file".into()))?;
        if header.trim() != "A\tC\tG\tT" {
            return Err(ModelError::Pwm(format!("bad pwm header: {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split('\t')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ModelError::Pwm(format!("row {i}: {e}")))?;
            if vals.len() != 4 {
                return Err(ModelError::Pwm(format!(
                    "row {i}: expected 4 columns, got {}",
                    vals.len()
                )));
            }
            rows.push([vals[0], vals[1], vals[2], vals[3]]);
        }
        Pwm::new(rows)
    }
}

/// Max over all length-K windows of the inner product of `x` with the PWM.
/// Differentiable; the max routes to the argmax window, lowest position on
/// ties.
pub fn pwm_score(x: &Var, pwm: &Pwm) -> Result<Var, GradError> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != 4 {
        return Err(GradError::Dimension(format!(
            "pwm_score expects [L,4], got {shape:?}"
        )));
    }
    let (l, k) = (shape[0], pwm.len());
    if k > l {
        return Err(GradError::Dimension(format!(
            "pwm length {k} exceeds sequence length {l}"
        )));
    }
    let scores = pwm_window_scores(&x.value(), pwm);
    let mut best = 0;
    for p in 1..scores.len() {
        if scores[p] > scores[best] {
            best = p;
        }
    }
    Ok(x.slice_rows(best, k).mask_mul(pwm.to_tensor()).sum())
}

/// Inner-product score of every length-K window (plain values, no graph).
pub fn pwm_window_scores(x: &Tensor, pwm: &Pwm) -> Vec<f64> {
    let l = x.shape()[0];
    let k = pwm.len();
    (0..=l - k)
        .map(|p| {
            let mut s = 0.0;
            for (i, row) in pwm.rows().iter().enumerate() {
                for c in 0..4 {
                    s += x.at(p + i, c) * row[c];
                }
            }
            s
        })
        .collect()
}

/// Named parameter tensors; order is the serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.names.push(name.into());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    /// Inserts every parameter as a leaf on `tape`, in declaration order.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

fn init_weight<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            n * std
        })
        .collect();
    Tensor::new(shape, data).expect("finite init")
}

fn push_resblocks<R: Rng>(params: &mut ParamSet, rng: &mut R, hidden: usize) {
    let k = RESBLOCK_FILTER_LEN;
    for i in 0..NUM_RESBLOCKS {
        params.push(format!("res{i}_w1"), init_weight(rng, vec![k, hidden, hidden], k * hidden));
        params.push(format!("res{i}_b1"), Tensor::zeros(vec![hidden]));
        params.push(format!("res{i}_w2"), init_weight(rng, vec![k, hidden, hidden], k * hidden));
        params.push(format!("res{i}_b2"), Tensor::zeros(vec![hidden]));
    }
}

fn resblock_chain(
    mut h: Var,
    vars: &[Var],
    first: usize,
    res_scale: f64,
) -> Result<Var, GradError> {
    let pad = PadSpec::Flank {
        amount: (RESBLOCK_FILTER_LEN - 1) / 2,
        value: 0.0,
    };
    for i in 0..NUM_RESBLOCKS {
        let base = first + 4 * i;
        h = h.resblock(
            &vars[base],
            &vars[base + 1],
            &vars[base + 2],
            &vars[base + 3],
            res_scale,
            pad,
        )?;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub res_scale: f64,
    pub annotation: bool,
}

impl GeneratorArch {
    pub fn new(latent_dim: usize, seq_len: usize, hidden: usize) -> Self {
        GeneratorArch {
            latent_dim,
            seq_len,
            hidden,
            res_scale: 0.3,
            annotation: false,
        }
    }

    pub fn with_annotation(mut self) -> Self {
        self.annotation = true;
        self
    }

    pub fn output_channels(&self) -> usize {
        if self.annotation {
            5
        } else {
            4
        }
    }
}

/// WGAN generator: linear D_z -> L·C_h, reshape, 5 resblocks, output conv,
/// softmax over the 4 nucleotide channels (annotation channel via sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub arch: GeneratorArch,
    pub params: ParamSet,
}

impl Generator {
    pub fn init<R: Rng>(arch: GeneratorArch, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let (dz, l, ch) = (arch.latent_dim, arch.seq_len, arch.hidden);
        params.push("w_in", init_weight(rng, vec![dz, l * ch], dz));
        params.push("b_in", Tensor::zeros(vec![l * ch]));
        push_resblocks(&mut params, rng, ch);
        let c_out = arch.output_channels();
        params.push("w_out", init_weight(rng, vec![1, ch, c_out], ch));
        params.push("b_out", Tensor::zeros(vec![c_out]));
        Generator { arch, params }
    }

    /// Forward pass with parameters already bound on the tape (training).
    pub fn forward_bound(
        &self,
        vars: &[Var],
        z: &Var,
    ) -> Result<(Var, Option<Var>), GradError> {
        let (l, ch) = (self.arch.seq_len, self.arch.hidden);
        if z.shape() != vec![self.arch.latent_dim] {
            return Err(GradError::Dimension(format!(
                "generator expects latent [{}], got {:?}",
                self.arch.latent_dim,
                z.shape()
            )));
        }
        let h = z.linear(&vars[0], &vars[1])?.reshape(vec![l, ch]);
        let h = resblock_chain(h, vars, 2, self.arch.res_scale)?;
        let n = vars.len();
        let out = h.conv1d(&vars[n - 2], &vars[n - 1], PadSpec::None)?;
        let seq = out.slice_cols(0, 4).softmax_rows();
        let track = if self.arch.annotation {
            Some(out.slice_cols(4, 1).sigmoid().reshape(vec![l]))
        } else {
            None
        };
        Ok((seq, track))
    }

    /// Inference forward: binds parameters internally.
    pub fn forward(&self, tape: &Tape, z: &Var) -> Result<(Var, Option<Var>), GradError> {
        let vars = self.params.bind(tape);
        self.forward_bound(&vars, z)
    }

    /// Decoded output for a plain latent vector (fresh throwaway tape).
    pub fn generate(&self, z: &Tensor) -> Result<(Tensor, Option<Tensor>), GradError> {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let (seq, track) = self.forward(&tape, &zv)?;
        Ok((seq.value(), track.map(|t| t.value())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub seq_len: usize,
    pub hidden: usize,
    pub input_channels: usize,
    pub res_scale: f64,
}

impl DiscriminatorArch {
    pub fn new(seq_len: usize, hidden: usize, input_channels: usize) -> Self {
        DiscriminatorArch {
            seq_len,
            hidden,
            input_channels,
            res_scale: 0.3,
        }
    }
}

/// WGAN discriminator: input conv, 5 resblocks, flatten, linear to an
/// unbounded scalar score.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub arch: DiscriminatorArch,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init<R: Rng>(arch: DiscriminatorArch, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let (l, ch, cin) = (arch.seq_len, arch.hidden, arch.input_channels);
        let k = RESBLOCK_FILTER_LEN;
        params.push("w_in", init_weight(rng, vec![k, cin, ch], k * cin));
        params.push("b_in", Tensor::zeros(vec![ch]));
        push_resblocks(&mut params, rng, ch);
        params.push("w_fc", init_weight(rng, vec![l * ch, 1], l * ch));
        params.push("b_fc", Tensor::zeros(vec![1]));
        Discriminator { arch, params }
    }

    pub fn forward_bound(&self, vars: &[Var], x: &Var) -> Result<Var, GradError> {
        let (l, ch, cin) = (self.arch.seq_len, self.arch.hidden, self.arch.input_channels);
        if x.shape() != vec![l, cin] {
            return Err(GradError::Dimension(format!(
                "discriminator expects [{l},{cin}], got {:?}",
                x.shape()
            )));
        }
        let pad = PadSpec::Flank {
            amount: (RESBLOCK_FILTER_LEN - 1) / 2,
            value: 0.0,
        };
        let h = x.conv1d(&vars[0], &vars[1], pad)?;
        let h = resblock_chain(h, vars, 2, self.arch.res_scale)?;
        let n = vars.len();
        h.reshape(vec![l * ch]).linear(&vars[n - 2], &vars[n - 1])
    }

    pub fn forward(&self, tape: &Tape, x: &Var) -> Result<Var, GradError> {
        let vars = self.params.bind(tape);
        self.forward_bound(&vars, x)
    }

    pub fn score(&self, x: &Tensor) -> Result<f64, GradError> {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        Ok(self.forward(&tape, &xv)?.scalar_value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorArch {
    pub seq_len: usize,
    pub filters: usize,
    pub filter_len: usize,
    pub hidden: usize,
}

impl PredictorArch {
    pub fn new(seq_len: usize, filters: usize, filter_len: usize, hidden: usize) -> Self {
        PredictorArch {
            seq_len,
            filters,
            filter_len,
            hidden,
        }
    }
}

/// DeepBind-style predictor: conv over 0.25-flank-padded input,
/// leaky_relu(0.1), max+mean pooling, two dense layers, sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub arch: PredictorArch,
    pub params: ParamSet,
}

pub const PREDICTOR_LEAKY_ALPHA: f64 = 0.1;

impl Predictor {
    pub fn init<R: Rng>(arch: PredictorArch, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let (f, m, h) = (arch.filters, arch.filter_len, arch.hidden);
        params.push("w_conv", init_weight(rng, vec![m, 4, f], m * 4));
        params.push("b_conv", Tensor::zeros(vec![f]));
        params.push("w_h", init_weight(rng, vec![2 * f, h], 2 * f));
        params.push("b_h", Tensor::zeros(vec![h]));
        params.push("w_out", init_weight(rng, vec![h, 1], h));
        params.push("b_out", Tensor::zeros(vec![1]));
        Predictor { arch, params }
    }

    pub fn forward_bound(&self, vars: &[Var], x: &Var) -> Result<Var, GradError> {
        if x.shape() != vec![self.arch.seq_len, 4] {
            return Err(GradError::Dimension(format!(
                "predictor expects [{},4], got {:?}",
                self.arch.seq_len,
                x.shape()
            )));
        }
        // Flanks of M−1 positions at 0.25 per channel allow partial matches.
        let pad = PadSpec::Flank {
            amount: self.arch.filter_len - 1,
            value: 0.25,
        };
        let h = x
            .conv1d(&vars[0], &vars[1], pad)?
            .leaky_relu(PREDICTOR_LEAKY_ALPHA)
            .pool_concat()?;
        let h = h.linear(&vars[2], &vars[3])?.leaky_relu(PREDICTOR_LEAKY_ALPHA);
        Ok(h.linear(&vars[4], &vars[5])?.sigmoid())
    }

    pub fn forward(&self, tape: &Tape, x: &Var) -> Result<Var, GradError> {
        let vars = self.params.bind(tape);
        self.forward_bound(&vars, x)
    }

    pub fn score(&self, x: &Tensor) -> Result<f64, GradError> {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        Ok(self.forward(&tape, &xv)?.scalar_value())
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchDescriptor {
    Generator(GeneratorArch),
    Discriminator(DiscriminatorArch),
    Predictor(PredictorArch),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Portable checkpoint: versioned container of (name, shape, values)
/// entries plus an architecture descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: ArchDescriptor,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    fn from_params(arch: ArchDescriptor, params: &ParamSet) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            arch,
            params: params
                .names()
                .iter()
                .zip(params.tensors())
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    fn into_params(self, reference: &ParamSet) -> Result<ParamSet, ModelError> {
        if self.params.len() != reference.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter entries, found {}",
                reference.len(),
                self.params.len()
            )));
        }
        let mut out = ParamSet::new();
        for (entry, (name, t)) in self
            .params
            .into_iter()
            .zip(reference.names().iter().zip(reference.tensors()))
        {
            if &entry.name != name || entry.shape != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {:?} with shape {:?} does not match architecture ({} {:?})",
                    entry.name,
                    entry.shape,
                    name,
                    t.shape()
                )));
            }
            let tensor = Tensor::new(entry.shape, entry.data)
                .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", entry.name)))?;
            out.push(entry.name, tensor);
        }
        Ok(out)
    }

    pub fn of_generator(g: &Generator) -> Self {
        Checkpoint::from_params(ArchDescriptor::Generator(g.arch.clone()), &g.params)
    }

    pub fn of_discriminator(d: &Discriminator) -> Self {
        Checkpoint::from_params(ArchDescriptor::Discriminator(d.arch.clone()), &d.params)
    }

    pub fn of_predictor(p: &Predictor) -> Self {
        Checkpoint::from_params(ArchDescriptor::Predictor(p.arch.clone()), &p.params)
    }

    pub fn into_generator(self) -> Result<Generator, ModelError> {
        let arch = match &self.arch {
            ArchDescriptor::Generator(a) => a.clone(),
            other => {
                return Err(ModelError::Checkpoint(format!(
                    "expected a generator checkpoint, found {other:?}"
                )))
            }
        };
        let reference = Generator::init(arch.clone(), &mut shape_probe_rng());
        let params = self.into_params(&reference.params)?;
        Ok(Generator { arch, params })
    }

    pub fn into_discriminator(self) -> Result<Discriminator, ModelError> {
        let arch = match &self.arch {
            ArchDescriptor::Discriminator(a) => a.clone(),
            other => {
                return Err(ModelError::Checkpoint(format!(
                    "expected a discriminator checkpoint, found {other:?}"
                )))
            }
        };
        let reference = Discriminator::init(arch.clone(), &mut shape_probe_rng());
        let params = self.into_params(&reference.params)?;
        Ok(Discriminator { arch, params })
    }

    pub fn into_predictor(self) -> Result<Predictor, ModelError> {
        let arch = match &self.arch {
            ArchDescriptor::Predictor(a) => a.clone(),
            other => {
                return Err(ModelError::Checkpoint(format!(
                    "expected a predictor checkpoint, found {other:?}"
                )))
            }
        };
        let reference = Predictor::init(arch.clone(), &mut shape_probe_rng());
        let params = self.into_params(&reference.params)?;
        Ok(Predictor { arch, params })
    }
}

// Only used to derive reference shapes; values are discarded.
fn shape_probe_rng() -> impl Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let json = serde_json::to_string(ckpt)
        .map_err(|e| ModelError::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {}",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}
