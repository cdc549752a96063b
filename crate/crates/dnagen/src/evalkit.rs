//! Evaluation kit: sequence distances, latent-space interpolation and
//! inversion, frequency logos, and annotation-track analyses.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::gradcore::{adam_step, grad, AdamHyper, AdamState, GradError, Tape, Tensor};
use crate::models::{Generator, GeneratorArch, Pwm};
use crate::seqdata::{decode_argmax, encode_onehot, Base, DnaSequence};
use crate::training::{train_wgan, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn edit_distance(a: &DnaSequence, b: &DnaSequence) -> usize {
    let (a, b) = (a.bases(), b.bases());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Per-query minimum edit distance to a reference set.
#[derive(Debug, Clone, Default)]
pub struct DistanceDistribution {
    pub distances: Vec<usize>,
}

impl DistanceDistribution {
    pub fn min(&self) -> Option<usize> {
        self.distances.iter().copied().min()
    }

    pub fn mean(&self) -> f64 {
        if self.distances.is_empty() {
            return 0.0;
        }
        self.distances.iter().sum::<usize>() as f64 / self.distances.len() as f64
    }

    /// Histogram TSV: distance, count.
    pub fn save_tsv(&self, path: &Path) -> Result<(), EvalError> {
        let max = self.distances.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; max + 1];
        for &d in &self.distances {
            counts[d] += 1;
        }
        let mut out = String::from("distance\tcount\n");
        for (d, c) in counts.iter().enumerate() {
            out.push_str(&format!("{d}\t{c}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Minimum edit distance from each query to the reference set. With
/// `include_self` false (the default reading for self-comparisons),
/// reference entries identical to the query are skipped.
pub fn distance_distribution(
    queries: &[DnaSequence],
    reference: &[DnaSequence],
    include_self: bool,
) -> Result<DistanceDistribution, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::Config("reference set is empty".into()));
    }
    let distances = queries
        .par_iter()
        .map(|q| {
            reference
                .iter()
                .filter(|r| include_self || *r != q)
                .map(|r| edit_distance(q, r))
                .min()
                .ok_or_else(|| {
                    EvalError::Config(
                        "reference set contains only the query itself (self excluded)".into(),
                    )
                })
        })
        .collect::<Result<_, _>>()?;
    Ok(DistanceDistribution { distances })
}

#[derive(Debug, Clone)]
pub struct InterpPoint {
    pub alpha: f64,
    pub latent: Tensor,
    /// Soft generator output [L, 4].
    pub soft: Tensor,
    pub sequence: DnaSequence,
}

/// Decodes the generator along the straight line from `z0` to `z1`.
/// Endpoints reproduce the generator outputs at `z0` and `z1` exactly.
pub fn interpolate_latent(
    gen: &Generator,
    z0: &Tensor,
    z1: &Tensor,
    points: usize,
) -> Result<Vec<InterpPoint>, EvalError> {
    if points < 2 {
        return Err(EvalError::Config("interpolation needs at least 2 points".into()));
    }
    if z0.shape() != z1.shape() {
        return Err(EvalError::Config("interpolation endpoints differ in shape".into()));
    }
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let alpha = i as f64 / (points - 1) as f64;
        let data = z0
            .data()
            .iter()
            .zip(z1.data())
            .map(|(&a, &b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        let z = Tensor::new(z0.shape().to_vec(), data)?;
        let (soft, _) = gen.generate(&z)?;
        out.push(InterpPoint {
            alpha,
            sequence: decode_argmax(&soft),
            soft,
            latent: z,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertConfig {
    pub max_steps: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Decode-match fraction above which a point counts as accepted.
    pub accept_bar: f64,
}

impl Default for InvertConfig {
    fn default() -> Self {
        InvertConfig {
            max_steps: 400,
            adam: AdamHyper::new(1e-1, 0.9, 0.999),
            seed: 0,
            accept_bar: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InvertResult {
    pub latent: Tensor,
    /// Mean cross-entropy between target one-hot and generator softmax.
    pub loss: f64,
    /// Fraction of positions where the decoded output matches the target,
    /// recomputed by a forward pass.
    pub match_fraction: f64,
    pub accepted: bool,
}

/// Searches for latents whose generator output decodes to `target`:
/// `n_points` independent Adam starts minimizing per-position cross-entropy.
/// All points are returned with their recomputed match rates; `accepted`
/// marks those at or above the config bar.
pub fn invert_generator(
    gen: &Generator,
    target: &DnaSequence,
    n_points: usize,
    cfg: &InvertConfig,
) -> Result<Vec<InvertResult>, EvalError> {
    if target.len() != gen.arch.seq_len {
        return Err(EvalError::Config(format!(
            "target length {} vs generator length {}",
            target.len(),
            gen.arch.seq_len
        )));
    }
    let onehot = encode_onehot(target);
    let l = target.len() as f64;

    let run = |point: usize| -> Result<InvertResult, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(point as u64);
        let dz = gen.arch.latent_dim;
        let mut z = Tensor::new(
            vec![dz],
            (0..dz).map(|_| StandardNormal.sample(&mut rng)).collect(),
        )?;
        let mut state = AdamState::new(std::slice::from_ref(&z), cfg.adam);
        let mut last_loss = f64::INFINITY;
        for _ in 0..cfg.max_steps {
            let tape = Tape::new();
            let zv = tape.leaf(z.clone());
            let (soft, _) = gen.forward(&tape, &zv)?;
            let loss = soft.ln().mask_mul(onehot.clone()).sum().scale(-1.0 / l);
            last_loss = loss.scalar_value();
            let g = grad(&loss, std::slice::from_ref(&zv))?.remove(0).value();
            let mut params = [z.clone()];
            adam_step(&mut params, &[g], &mut state, false)?;
            let [updated] = params;
            z = updated;
        }
        let (soft, _) = gen.generate(&z)?;
        let decoded = decode_argmax(&soft);
        let matches = decoded
            .bases()
            .iter()
            .zip(target.bases())
            .filter(|(a, b)| a == b)
            .count();
        let match_fraction = matches as f64 / l;
        Ok(InvertResult {
            latent: z,
            loss: last_loss,
            match_fraction,
            accepted: match_fraction >= cfg.accept_bar,
        })
    };

    (0..n_points).into_par_iter().map(run).collect()
}

/// Decodes {G(−zᵢ)} and stacks the results into a frequency matrix.
pub fn reflect_and_summarize(
    gen: &Generator,
    latents: &[Tensor],
) -> Result<FrequencyMatrix, EvalError> {
    if latents.is_empty() {
        return Err(EvalError::Config("no latents to reflect".into()));
    }
    let seqs = latents
        .iter()
        .map(|z| {
            let neg = Tensor::new(
                z.shape().to_vec(),
                z.data().iter().map(|&v| -v).collect(),
            )?;
            let (soft, _) = gen.generate(&neg)?;
            Ok(decode_argmax(&soft))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    FrequencyMatrix::from_sequences(&seqs)
}

/// One channel-permutation complementation experiment: trains a fresh model
/// with the nucleotide channels permuted, inverts a repeated-base target,
/// reflects the latents, and reports what the reflections decode to.
/// Report-only; the outcome is model-dependent.
#[derive(Debug, Clone)]
pub struct ComplementReport {
    /// Channel permutation used: channel c carried base perm[c].
    pub permutation: [usize; 4],
    pub target_base: Base,
    /// Modal base and its frequency at each position of the reflected batch.
    pub modal: Vec<(Base, f64)>,
    /// Positions whose modal base is the complement of the target.
    pub complement_positions: usize,
    pub seq_len: usize,
    pub accepted_points: usize,
    pub total_points: usize,
}

impl ComplementReport {
    pub fn complement_match(&self) -> bool {
        // Majority of positions decoding to the complement counts as a
        // match; the paper reports this qualitatively.
        self.complement_positions * 2 > self.seq_len
    }

    pub fn save_tsv(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::from("position\tmodal_base\tmodal_freq\tis_complement\n");
        let comp = self.target_base.complement();
        for (i, (b, f)) in self.modal.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\t{f}\t{}\n", b.to_char(), *b == comp));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Applies a channel permutation to one-hot training data: output channel
/// `c` receives the indicator of base `perm[c]`.
fn permute_channels(x: &Tensor, perm: &[usize; 4]) -> Tensor {
    let l = x.shape()[0];
    let mut data = vec![0.0; l * 4];
    for i in 0..l {
        for c in 0..4 {
            data[i * 4 + c] = x.data()[i * 4 + perm[c]];
        }
    }
    Tensor::new(vec![l, 4], data).unwrap()
}

pub fn complementation_sweep(
    perm: [usize; 4],
    training_seqs: &[DnaSequence],
    gen_arch: GeneratorArch,
    train_cfg: &TrainConfig,
    target_base: Base,
    n_points: usize,
    invert_cfg: &InvertConfig,
) -> Result<ComplementReport, EvalError> {
    {
        let mut seen = [false; 4];
        for &p in &perm {
            if p > 3 || seen[p] {
                return Err(EvalError::Config(format!(
                    "not a channel permutation: {perm:?}"
                )));
            }
            seen[p] = true;
        }
    }
    let seq_len = gen_arch.seq_len;
    let dataset: Vec<Tensor> = training_seqs
        .iter()
        .map(|s| permute_channels(&encode_onehot(s), &perm))
        .collect();
    let disc_arch = crate::models::DiscriminatorArch::new(seq_len, gen_arch.hidden, 4);
    let (gen, _, _) = train_wgan(&dataset, gen_arch, disc_arch, train_cfg, None)?;

    // The target lives in permuted channel space too.
    let inv = {
        let mut inv = [0usize; 4];
        for (c, &p) in perm.iter().enumerate() {
            inv[p] = c;
        }
        inv
    };
    let permuted_target = DnaSequence::new(vec![
        Base::from_index(inv[target_base.index()]);
        seq_len
    ]);
    let points = invert_generator(&gen, &permuted_target, n_points, invert_cfg)?;
    let accepted: Vec<&InvertResult> = points.iter().filter(|p| p.accepted).collect();
    let use_points: Vec<Tensor> = if accepted.is_empty() {
        points.iter().map(|p| p.latent.clone()).collect()
    } else {
        accepted.iter().map(|p| p.latent.clone()).collect()
    };
    let reflected = reflect_and_summarize(&gen, &use_points)?;

    // Map modal channels back through the permutation to base space.
    let comp = target_base.complement();
    let mut modal = Vec::with_capacity(seq_len);
    let mut complement_positions = 0;
    for row in reflected.freqs() {
        let mut best = 0;
        for c in 1..4 {
            if row[c] > row[best] {
                best = c;
            }
        }
        let base = Base::from_index(perm[best]);
        if base == comp {
            complement_positions += 1;
        }
        modal.push((base, row[best]));
    }
    Ok(ComplementReport {
        permutation: perm,
        target_base,
        modal,
        complement_positions,
        seq_len,
        accepted_points: accepted.len(),
        total_points: points.len(),
    })
}

/// Per-position nucleotide frequencies over equal-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    freqs: Vec<[f64; 4]>,
}

impl FrequencyMatrix {
    pub fn from_sequences(seqs: &[DnaSequence]) -> Result<Self, EvalError> {
        let first = seqs
            .first()
            .ok_or_else(|| EvalError::Config("logo needs at least one sequence".into()))?;
        let l = first.len();
        if seqs.iter().any(|s| s.len() != l) {
            return Err(EvalError::Config("logo sequences have mixed lengths".into()));
        }
        let mut freqs = vec![[0.0f64; 4]; l];
        for s in seqs {
            for (i, b) in s.bases().iter().enumerate() {
                freqs[i][b.index()] += 1.0;
            }
        }
        let n = seqs.len() as f64;
        for row in &mut freqs {
            for f in row {
                *f /= n;
            }
        }
        Ok(FrequencyMatrix { freqs })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn freqs(&self) -> &[[f64; 4]] {
        &self.freqs
    }

    /// Information content per position: 2 − H(p) bits, no small-sample
    /// correction.
    pub fn info_bits(&self) -> Vec<f64> {
        self.freqs
            .iter()
            .map(|row| {
                let h: f64 = row
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.log2())
                    .sum();
                2.0 - h
            })
            .collect()
    }

    /// Position with maximal information content (lowest index on ties).
    pub fn peak_position(&self) -> usize {
        let info = self.info_bits();
        let mut best = 0;
        for (i, &v) in info.iter().enumerate() {
            if v > info[best] {
                best = i;
            }
        }
        best
    }

    /// TSV: position, freq_a, freq_c, freq_g, freq_t, info_bits.
    pub fn save_tsv(&self, path: &Path) -> Result<(), EvalError> {
        let info = self.info_bits();
        let mut out = String::from("position\tfreq_a\tfreq_c\tfreq_g\tfreq_t\tinfo_bits\n");
        for (i, (row, bits)) in self.freqs.iter().zip(&info).enumerate() {
            out.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\t{bits}\n",
                row[0], row[1], row[2], row[3]
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

pub fn logo_matrix(seqs: &[DnaSequence]) -> Result<FrequencyMatrix, EvalError> {
    FrequencyMatrix::from_sequences(seqs)
}

/// First/last-above-threshold span of an annotation track: (first index
/// with value > 0.5, last such index), ignoring interior gaps.
pub fn exon_span(track: &[f64]) -> Option<(usize, usize)> {
    let first = track.iter().position(|&v| v > 0.5)?;
    let last = track.iter().rposition(|&v| v > 0.5)?;
    Some((first, last))
}

/// Whether the track's span exists and has no interior gap (every value
/// between first and last exceeds 0.5).
pub fn span_is_contiguous(track: &[f64]) -> bool {
    match exon_span(track) {
        None => false,
        Some((s, e)) => track[s..=e].iter().all(|&v| v > 0.5),
    }
}

/// Fraction of samples whose track forms a single contiguous span.
pub fn single_span_fraction(samples: &[(DnaSequence, Vec<f64>)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let single = samples
        .iter()
        .filter(|(_, t)| span_is_contiguous(t))
        .count();
    single as f64 / samples.len() as f64
}

/// Logos of sequence windows around the detected span boundaries, plus the
/// aligned/skipped accounting. A sample is skipped for a given boundary
/// when it has no span or the ±flank window does not fit.
#[derive(Debug, Clone)]
pub struct BoundaryLogos {
    pub start: Option<FrequencyMatrix>,
    pub end: Option<FrequencyMatrix>,
    pub start_aligned: usize,
    pub start_skipped: usize,
    pub end_aligned: usize,
    pub end_skipped: usize,
}

pub fn align_boundary_logos(
    samples: &[(DnaSequence, Vec<f64>)],
    flank: usize,
) -> Result<BoundaryLogos, EvalError> {
    let collect = |at_start: bool| -> (Vec<DnaSequence>, usize) {
        let mut windows = Vec::new();
        let mut skipped = 0;
        for (seq, track) in samples {
            let Some((s, e)) = exon_span(track) else {
                skipped += 1;
                continue;
            };
            let boundary = if at_start { s } else { e };
            if boundary < flank || boundary + flank >= seq.len() {
                skipped += 1;
                continue;
            }
            windows.push(DnaSequence::new(
                seq.bases()[boundary - flank..=boundary + flank].to_vec(),
            ));
        }
        (windows, skipped)
    };
    let (start_windows, start_skipped) = collect(true);
    let (end_windows, end_skipped) = collect(false);
    Ok(BoundaryLogos {
        start_aligned: start_windows.len(),
        end_aligned: end_windows.len(),
        start: if start_windows.is_empty() {
            None
        } else {
            Some(FrequencyMatrix::from_sequences(&start_windows)?)
        },
        end: if end_windows.is_empty() {
            None
        } else {
            Some(FrequencyMatrix::from_sequences(&end_windows)?)
        },
        start_skipped,
        end_skipped,
    })
}

/// All windows whose one-hot inner product with the PWM reaches the
/// threshold, sorted by position.
pub fn motif_matches(seq: &DnaSequence, pwm: &Pwm, threshold: f64) -> Vec<(usize, f64)> {
    if pwm.len() > seq.len() {
        return Vec::new();
    }
    crate::models::pwm_window_scores(&encode_onehot(seq), pwm)
        .into_iter()
        .enumerate()
        .filter(|(_, s)| *s >= threshold)
        .collect()
}

/// Fraction of sequences whose best PWM window scores at least
/// `threshold` × PWM length.
pub fn motif_match_rate(seqs: &[DnaSequence], pwm: &Pwm, threshold: f64) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    let hits = seqs
        .iter()
        .filter(|s| !motif_matches(s, pwm, threshold * pwm.len() as f64).is_empty())
        .count();
    hits as f64 / seqs.len() as f64
}

/// Samples `n` sequences (and tracks, when present) from the generator.
pub fn sample_generator(
    gen: &Generator,
    n: usize,
    seed: u64,
) -> Result<Vec<(DnaSequence, Vec<f64>)>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = crate::training::sample_latent(gen.arch.latent_dim, &mut rng);
        let (soft, track) = gen.generate(&z)?;
        out.push((
            decode_argmax(&soft),
            track.map(|t| t.data().to_vec()).unwrap_or_default(),
        ));
    }
    Ok(out)
}

/// Fraction of soft one-hot positions whose max channel is at least `bar`.
pub fn onehotness(soft: &Tensor, bar: f64) -> f64 {
    let l = soft.shape()[0];
    let c = soft.shape()[1];
    let strong = (0..l)
        .filter(|&i| {
            (0..c)
                .map(|j| soft.data()[i * c + j])
                .fold(f64::NEG_INFINITY, f64::max)
                >= bar
        })
        .count();
    strong as f64 / l as f64
}
