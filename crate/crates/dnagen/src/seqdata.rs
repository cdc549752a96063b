//! Sequence encodings, FASTA ingestion, dataset splitting, annotation
//! tracks, and synthetic dataset/oracle generators.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gradcore::{Tensor, Var};
use crate::models::{pwm_window_scores, Pwm};

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("encoding error: invalid character '{0}'")]
    Encoding(char),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Base {
    A = 0,
    C = 1,
    G = 2,
    T = 3,
}

impl Base {
    pub fn from_char(c: char) -> Result<Self, SeqError> {
        match c.to_ascii_uppercase() {
            'A' => Ok(Base::A),
            'C' => Ok(Base::C),
            'G' => Ok(Base::G),
            'T' => Ok(Base::T),
            other => Err(SeqError::Encoding(other)),
        }
    }

    pub fn from_index(i: usize) -> Self {
        [Base::A, Base::C, Base::G, Base::T][i]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn to_char(self) -> char {
        ['A', 'C', 'G', 'T'][self as usize]
    }

    /// Watson–Crick complement: A↔T, C↔G.
    pub fn complement(self) -> Self {
        match self {
            Base::A => Base::T,
            Base::C => Base::G,
            Base::G => Base::C,
            Base::T => Base::A,
        }
    }
}

/// Fixed-length DNA sequence over {A, C, G, T}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DnaSequence(Vec<Base>);

impl DnaSequence {
    pub fn new(bases: Vec<Base>) -> Self {
        DnaSequence(bases)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bases(&self) -> &[Base] {
        &self.0
    }

    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        Self::random_background(len, &[0.25; 4], rng)
    }

    pub fn random_background<R: Rng>(len: usize, background: &[f64; 4], rng: &mut R) -> Self {
        DnaSequence((0..len).map(|_| sample_base(background, rng)).collect())
    }
}

impl FromStr for DnaSequence {
    type Err = SeqError;

    fn from_str(s: &str) -> Result<Self, SeqError> {
        Ok(DnaSequence(
            s.chars().map(Base::from_char).collect::<Result<_, _>>()?,
        ))
    }
}

impl fmt::Display for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{}", b.to_char())?;
        }
        Ok(())
    }
}

fn sample_base<R: Rng>(probs: &[f64; 4], rng: &mut R) -> Base {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return Base::from_index(i);
        }
    }
    Base::T
}

/// L×4 exact one-hot matrix, column order (A, C, G, T).
pub fn encode_onehot(seq: &DnaSequence) -> Tensor {
    let l = seq.len();
    let mut t = Tensor::zeros(vec![l, 4]);
    for (i, b) in seq.bases().iter().enumerate() {
        t.data_mut()[i * 4 + b.index()] = 1.0;
    }
    t
}

/// Per-row argmax; ties broken by the lowest column index (A<C<G<T).
pub fn decode_argmax(x: &Tensor) -> DnaSequence {
    assert_eq!(x.shape().len(), 2, "decode_argmax expects a matrix");
    assert_eq!(x.shape()[1], 4, "decode_argmax expects 4 channels");
    let bases = (0..x.shape()[0])
        .map(|i| {
            let mut best = 0;
            for j in 1..4 {
                if x.at(i, j) > x.at(i, best) {
                    best = j;
                }
            }
            Base::from_index(best)
        })
        .collect();
    DnaSequence::new(bases)
}

/// Length-L vector of values in [0, 1]; training tracks are binary.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack(Vec<f64>);

impl AnnotationTrack {
    pub fn new(values: Vec<f64>) -> Result<Self, SeqError> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(SeqError::Config("annotation values must be in [0,1]".into()));
        }
        Ok(AnnotationTrack(values))
    }

    pub fn from_span(len: usize, span: Option<(usize, usize)>) -> Self {
        let mut values = vec![0.0; len];
        if let Some((start, end)) = span {
            for v in values.iter_mut().take(end + 1).skip(start) {
                *v = 1.0;
            }
        }
        AnnotationTrack(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reads FASTA records, uppercases the bodies, chops each record into
/// non-overlapping length-`window` windows and discards windows containing
/// any non-ACGT character (e.g. N). Trailing partial windows are dropped.
pub fn ingest_fasta(path: &Path, window: usize) -> Result<Vec<DnaSequence>, SeqError> {
    if window == 0 {
        return Err(SeqError::Config("window length must be positive".into()));
    }
    let text = fs::read_to_string(path)?;
    let mut records: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.starts_with('>') {
            records.push(String::new());
        } else if !line.is_empty() {
            if records.is_empty() {
                return Err(SeqError::Parse("sequence data before first '>' header".into()));
            }
            records.last_mut().unwrap().push_str(&line.to_ascii_uppercase());
        }
    }
    let mut out = Vec::new();
    for body in &records {
        let chars: Vec<char> = body.chars().collect();
        for chunk in chars.chunks_exact(window) {
            if let Ok(seq) = chunk.iter().collect::<String>().parse::<DnaSequence>() {
                out.push(seq);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Valid => "valid",
            SplitLabel::Test => "test",
        }
    }
}

impl FromStr for SplitLabel {
    type Err = SeqError;

    fn from_str(s: &str) -> Result<Self, SeqError> {
        match s {
            "train" => Ok(SplitLabel::Train),
            "valid" => Ok(SplitLabel::Valid),
            "test" => Ok(SplitLabel::Test),
            other => Err(SeqError::Parse(format!("unknown split label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Deterministic seeded shuffle, then an 80/10/10 partition (floor for
/// valid/test, remainder to train).
pub fn split_dataset<T>(data: Vec<T>, seed: u64) -> Result<Splits<T>, SeqError> {
    let n = data.len();
    if n < 10 {
        return Err(SeqError::Config(format!(
            "dataset has {n} items; at least 10 required for splitting"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;

    let mut slots: Vec<Option<T>> = data.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<T> {
        ids.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let train = take(&order[..n_train]);
    let valid = take(&order[n_train..n_train + n_valid]);
    let test = take(&order[n_train + n_valid..]);
    Ok(Splits { train, valid, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifExample {
    pub sequence: DnaSequence,
    /// Inclusive (start, end) of the planted motif, when present.
    pub span: Option<(usize, usize)>,
    pub track: AnnotationTrack,
}

/// Background sequences with a motif sampled column-wise from `pwm` planted
/// on a uniformly chosen span with probability `planting_prob`. The
/// annotation track is 1 on the planted span, else 0.
pub fn synth_motif_dataset(
    n: usize,
    len: usize,
    pwm: &Pwm,
    planting_prob: f64,
    background: &[f64; 4],
    seed: u64,
) -> Result<Vec<MotifExample>, SeqError> {
    let k = pwm.len();
    if k > len {
        return Err(SeqError::Config(format!(
            "motif length {k} exceeds sequence length {len}"
        )));
    }
    if !(0.0..=1.0).contains(&planting_prob) {
        return Err(SeqError::Config(format!(
            "planting probability {planting_prob} out of [0,1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut seq = DnaSequence::random_background(len, background, &mut rng);
        let span = if rng.gen::<f64>() < planting_prob {
            let start = rng.gen_range(0..=len - k);
            for (i, row) in pwm.rows().iter().enumerate() {
                let probs = [row[0], row[1], row[2], row[3]];
                seq.0[start + i] = sample_base(&probs, &mut rng);
            }
            Some((start, start + k - 1))
        } else {
            None
        };
        let track = AnnotationTrack::from_span(len, span);
        out.push(MotifExample { sequence: seq, span, track });
    }
    Ok(out)
}

/// Hidden scorer standing in for wet-lab measurements: a weighted sum of
/// PWM max-window scores through an affine map and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    pwms: Vec<Pwm>,
    weights: Vec<f64>,
    affine_scale: f64,
    affine_offset: f64,
    pub seed: u64,
}

impl SyntheticOracle {
    pub fn new(pwms: Vec<Pwm>, weights: Vec<f64>, seed: u64) -> Result<Self, SeqError> {
        if pwms.is_empty() || pwms.len() != weights.len() {
            return Err(SeqError::Config(format!(
                "oracle needs matching pwm/weight lists, got {}/{}",
                pwms.len(),
                weights.len()
            )));
        }
        Ok(SyntheticOracle {
            pwms,
            weights,
            affine_scale: 1.0,
            affine_offset: 0.0,
            seed,
        })
    }

    pub fn pwms(&self) -> &[Pwm] {
        &self.pwms
    }

    /// PWM with the largest combination weight (its consensus is the
    /// oracle's strongest motif).
    pub fn strongest_pwm(&self) -> &Pwm {
        let mut best = 0;
        for i in 1..self.weights.len() {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        &self.pwms[best]
    }

    fn raw_score(&self, x: &Tensor) -> f64 {
        self.pwms
            .iter()
            .zip(&self.weights)
            .map(|(pwm, w)| {
                let scores = pwm_window_scores(x, pwm);
                w * scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }

    pub fn score_matrix(&self, x: &Tensor) -> f64 {
        let raw = self.raw_score(x);
        sigmoid(self.affine_scale * raw + self.affine_offset)
    }

    pub fn score_seq(&self, seq: &DnaSequence) -> f64 {
        self.score_matrix(&encode_onehot(seq))
    }

    /// Differentiable oracle evaluation on a tape.
    pub fn score_var(&self, x: &Var) -> Result<Var, crate::gradcore::GradError> {
        let mut acc: Option<Var> = None;
        for (pwm, &w) in self.pwms.iter().zip(&self.weights) {
            let term = crate::models::pwm_score(x, pwm)?.scale(w);
            acc = Some(match acc {
                None => term,
                Some(prev) => prev.add(&term),
            });
        }
        Ok(acc
            .unwrap()
            .scale(self.affine_scale)
            .add_scalar(self.affine_offset)
            .sigmoid())
    }

    /// Fits the affine stage so the raw scores of `probes` map onto
    /// sigmoid inputs covering (0.1, 0.9). Fails if the raw range collapses.
    pub fn calibrate_on(&mut self, probes: &[DnaSequence]) -> Result<(), SeqError> {
        let raws: Vec<f64> = probes
            .iter()
            .map(|s| self.raw_score(&encode_onehot(s)))
            .collect();
        let min = raws.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max - min).is_finite() || max - min < 1e-9 {
            return Err(SeqError::Config(format!(
                "oracle raw scores are degenerate (range {})",
                max - min
            )));
        }
        let lo = logit(0.1);
        let hi = logit(0.9);
        self.affine_scale = (hi - lo) / (max - min);
        self.affine_offset = lo - self.affine_scale * min;
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub sequence: DnaSequence,
    pub score: f64,
    pub split: SplitLabel,
}

/// Sequences with scores in [0, 1] and disjoint train/valid/test labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredDataset {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, label: SplitLabel) -> impl Iterator<Item = &ScoredEntry> {
        self.entries.iter().filter(move |e| e.split == label)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// TSV with columns sequence, score, split; header row required.
    pub fn save_tsv(&self, path: &Path) -> Result<(), SeqError> {
        let mut out = String::from("sequence\tscore\tsplit\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.sequence, e.score, e.split.as_str()));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<Self, SeqError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SeqError::Parse("empty dataset file".into()))?;
        if header.trim_end_matches('\r') != "sequence\tscore\tsplit" {
            return Err(SeqError::Parse(format!("bad dataset header: {header:?}")));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(SeqError::Parse(format!(
                    "row {i}: expected 3 columns, got {}",
                    fields.len()
                )));
            }
            entries.push(ScoredEntry {
                sequence: fields[0].parse()?,
                score: fields[1]
                    .parse()
                    .map_err(|e| SeqError::Parse(format!("row {i} score: {e}")))?,
                split: fields[2].parse()?,
            });
        }
        Ok(ScoredDataset { entries })
    }
}

/// Random probe sequences scored by the oracle, with the oracle's affine
/// stage auto-calibrated so the scores span a broad range
/// (min < 0.2, max > 0.8).
pub fn synth_binding_data(
    oracle: &mut SyntheticOracle,
    n: usize,
    len: usize,
    seed: u64,
) -> Result<ScoredDataset, SeqError> {
    if n < 10 {
        return Err(SeqError::Config(format!(
            "need at least 10 probes, requested {n}"
        )));
    }
    const MAX_TRIES: u64 = 5;
    let mut last_err = None;
    for attempt in 0..MAX_TRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let probes: Vec<DnaSequence> = (0..n).map(|_| DnaSequence::random(len, &mut rng)).collect();
        match oracle.calibrate_on(&probes) {
            Ok(()) => {}
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        }
        let scores: Vec<f64> = probes.iter().map(|s| oracle.score_seq(s)).collect();
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(min < 0.2 && max > 0.8) {
            last_err = Some(SeqError::Config(format!(
                "calibrated scores span [{min:.3}, {max:.3}], need min<0.2 and max>0.8"
            )));
            continue;
        }
        let splits = split_dataset((0..n).collect::<Vec<usize>>(), seed)?;
        let mut labels = vec![SplitLabel::Train; n];
        for &i in &splits.valid {
            labels[i] = SplitLabel::Valid;
        }
        for &i in &splits.test {
            labels[i] = SplitLabel::Test;
        }
        let entries = probes
            .into_iter()
            .zip(scores)
            .zip(labels)
            .map(|((sequence, score), split)| ScoredEntry { sequence, score, split })
            .collect();
        return Ok(ScoredDataset { entries });
    }
    Err(last_err.unwrap_or_else(|| SeqError::Config("calibration failed".into())))
}

/// Retains entries with score ≤ the pct-th percentile (nearest-rank).
/// Split labels are preserved.
pub fn percentile_filter(data: &ScoredDataset, pct: f64) -> ScoredDataset {
    if data.is_empty() || pct >= 100.0 {
        return data.clone();
    }
    let mut sorted = data.scores();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    let threshold = sorted[rank.min(n) - 1];
    ScoredDataset {
        entries: data
            .entries
            .iter()
            .filter(|e| e.score <= threshold)
            .cloned()
            .collect(),
    }
}
