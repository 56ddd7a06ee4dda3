//! Class-imbalance numerics: inverse-frequency class weights, weighted
//! cross-entropy, focal loss, their gradients through softmax, and token
//! truncation.
//!
//! Losses are per-example; reduction over a batch is left to callers.

use num_rational::Ratio;
use thiserror::Error;

use crate::dataset::ClassFrequencyTable;

/// Lower bound applied to the target probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("class {class} has zero training instances")]
    ZeroCount { class: usize },
    #[error("target probability is zero; log is undefined")]
    DomainError,
    #[error("target index {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("weights have {got} entries, expected {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("head ({head}) + tail ({tail}) must equal max_len ({max_len})")]
    BadWindow { max_len: usize, head: usize, tail: usize },
    #[error("focal gamma must be non-negative and finite, got {0}")]
    BadGamma(f64),
}

/// Inverse-frequency weights `w_i = N / (C * n_i)`, kept both as exact
/// ratios and as floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightTable {
    pub counts: Vec<u64>,
    pub total: u64,
    pub classes: u64,
    pub exact: Vec<Ratio<u64>>,
    pub weights: Vec<f64>,
}

impl ClassWeightTable {
    pub fn from_counts(counts: &[u64]) -> Result<Self, NumericsError> {
        if let Some(class) = counts.iter().position(|&n| n == 0) {
            return Err(NumericsError::ZeroCount { class });
        }
        let total: u64 = counts.iter().sum();
        let classes = counts.len() as u64;
        let exact: Vec<Ratio<u64>> = counts.iter().map(|&n| Ratio::new(total, classes * n)).collect();
        let weights = counts
            .iter()
            .map(|&n| total as f64 / (classes as f64 * n as f64))
            .collect();
        Ok(ClassWeightTable {
            counts: counts.to_vec(),
            total,
            classes,
            exact,
            weights,
        })
    }
}

/// Weights from training-split frequencies.
pub fn class_weights(freq: &ClassFrequencyTable) -> Result<ClassWeightTable, NumericsError> {
    ClassWeightTable::from_counts(&freq.counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    pub gamma: f64,
    /// Per-class weights; `None` means unit weights.
    pub weights: Option<Vec<f64>>,
    /// Reject `p_t = 0` instead of clamping it to [`PROB_FLOOR`].
    pub strict: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            gamma: 2.0,
            weights: None,
            strict: false,
        }
    }
}

impl LossParams {
    pub fn with_weights(weights: &ClassWeightTable) -> Self {
        LossParams {
            weights: Some(weights.weights.clone()),
            ..Self::default()
        }
    }

    fn weight(&self, target: usize, classes: usize) -> Result<f64, NumericsError> {
        match &self.weights {
            None => Ok(1.0),
            Some(w) if w.len() != classes => Err(NumericsError::WeightLength {
                got: w.len(),
                expected: classes,
            }),
            Some(w) => Ok(w[target]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    WeightedCrossEntropy,
    Focal,
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn target_prob(probs: &[f64], target: usize, strict: bool) -> Result<f64, NumericsError> {
    let p = *probs.get(target).ok_or(NumericsError::BadTarget {
        target,
        classes: probs.len(),
    })?;
    if p <= 0.0 && strict {
        return Err(NumericsError::DomainError);
    }
    Ok(p.clamp(PROB_FLOOR, 1.0))
}

/// `-w_t * ln(p_t)`.
pub fn wce_loss(probs: &[f64], target: usize, params: &LossParams) -> Result<f64, NumericsError> {
    let p = target_prob(probs, target, params.strict)?;
    let w = params.weight(target, probs.len())?;
    Ok(-w * p.ln())
}

/// `-w_t * (1 - p_t)^gamma * ln(p_t)`.
pub fn focal_loss(probs: &[f64], target: usize, params: &LossParams) -> Result<f64, NumericsError> {
    if !(params.gamma >= 0.0 && params.gamma.is_finite()) {
        return Err(NumericsError::BadGamma(params.gamma));
    }
    let p = target_prob(probs, target, params.strict)?;
    let w = params.weight(target, probs.len())?;
    Ok(-w * (1.0 - p).powf(params.gamma) * p.ln())
}

/// Loss of `softmax(logits)` against `target`.
pub fn loss_from_logits(
    logits: &[f64],
    target: usize,
    params: &LossParams,
    kind: LossKind,
) -> Result<f64, NumericsError> {
    let probs = softmax(logits);
    match kind {
        LossKind::WeightedCrossEntropy => wce_loss(&probs, target, params),
        LossKind::Focal => focal_loss(&probs, target, params),
    }
}

/// Analytic gradient of `loss ∘ softmax` with respect to the logits.
///
/// With `p = softmax(z)` and `dp_t/dz_j = p_t (δ_tj - p_j)`:
/// WCE gives `w_t (p_j - δ_tj)`; focal gives
/// `w_t [γ (1-p_t)^(γ-1) p_t ln p_t - (1-p_t)^γ] (δ_tj - p_j)`.
pub fn loss_gradient(
    logits: &[f64],
    target: usize,
    params: &LossParams,
    kind: LossKind,
) -> Result<Vec<f64>, NumericsError> {
    let probs = softmax(logits);
    let classes = probs.len();
    if target >= classes {
        return Err(NumericsError::BadTarget { target, classes });
    }
    let w = params.weight(target, classes)?;
    let p_t = probs[target];
    let delta = |j: usize| if j == target { 1.0 } else { 0.0 };

    let scale = match kind {
        LossKind::WeightedCrossEntropy => -w,
        LossKind::Focal => {
            let gamma = params.gamma;
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(NumericsError::BadGamma(gamma));
            }
            let q = 1.0 - p_t;
            if q <= 0.0 {
                return Ok(vec![0.0; classes]);
            }
            let focal_term = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * p_t * p_t.max(PROB_FLOOR).ln()
            };
            w * (focal_term - q.powf(gamma))
        }
    };
    Ok((0..classes).map(|j| scale * (delta(j) - probs[j])).collect())
}

/// Central finite-difference gradient of the loss, for verification.
pub fn numerical_gradient(
    logits: &[f64],
    target: usize,
    params: &LossParams,
    kind: LossKind,
    h: f64,
) -> Result<Vec<f64>, NumericsError> {
    let mut z = logits.to_vec();
    let mut grad = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let orig = z[j];
        z[j] = orig + h;
        let plus = loss_from_logits(&z, target, params, kind)?;
        z[j] = orig - h;
        let minus = loss_from_logits(&z, target, params, kind)?;
        z[j] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Ordered stream of opaque token identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence<T>(pub Vec<T>);

impl<T> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TokenSequence<String> {
    /// Whitespace tokenization, for demonstrations only.
    pub fn whitespace(text: &str) -> Self {
        TokenSequence(text.split_whitespace().map(str::to_string).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationMode {
    /// Keep the first `max_len` tokens.
    Standard,
    /// Keep the first `head` and the last `tail` tokens.
    HeadTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationWindow {
    pub max_len: usize,
    pub head: usize,
    pub tail: usize,
}

impl Default for TruncationWindow {
    fn default() -> Self {
        TruncationWindow {
            max_len: 512,
            head: 256,
            tail: 256,
        }
    }
}

pub fn truncate<T: Clone>(
    seq: &TokenSequence<T>,
    mode: TruncationMode,
    window: TruncationWindow,
) -> Result<TokenSequence<T>, NumericsError> {
    let TruncationWindow { max_len, head, tail } = window;
    if mode == TruncationMode::HeadTail && head + tail != max_len {
        return Err(NumericsError::BadWindow { max_len, head, tail });
    }
    let tokens = &seq.0;
    if tokens.len() <= max_len {
        return Ok(seq.clone());
    }
    Ok(TokenSequence(match mode {
        TruncationMode::Standard => tokens[..max_len].to_vec(),
        TruncationMode::HeadTail => tokens[..head]
            .iter()
            .chain(&tokens[tokens.len() - tail..])
            .cloned()
            .collect(),
    }))
}
