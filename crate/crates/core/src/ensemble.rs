//! Plurality voting over member predictions with pluggable tie-breaking.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::ClassFrequencyTable;
use crate::llm_client::Prediction;
use crate::taxonomy::{Label, Level};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("no member produced a parseable label")]
    NoParsedVotes,
    #[error("member predictions mix taxonomy levels")]
    MixedLevels,
    #[error("mean-probability tie-break needs a probability vector from every member (missing for `{model_id}`)")]
    MissingProbabilities { model_id: String },
    #[error("probability vector from `{model_id}` has {got} entries, expected {expected}")]
    ProbabilityLength {
        model_id: String,
        got: usize,
        expected: usize,
    },
    #[error("training frequencies are for the {table} level, votes are at the {votes} level")]
    MissingFrequency { table: Level, votes: Level },
    #[error("default label {label} is not at the {level} level")]
    DefaultLevel { label: Label, level: Level },
}

/// How to resolve a tie between top-voted labels.
#[derive(Debug, Clone, PartialEq)]
pub enum TiePolicy {
    /// Always pick this label on a tie, whether or not it is among the tied set.
    DefaultLabel(Label),
    /// Pick the tied label that is most frequent in the training split.
    TrainFrequency(ClassFrequencyTable),
    /// Pick the tied label with the highest mean member probability.
    MeanProbability,
}

impl TiePolicy {
    pub fn kind(&self) -> TiePolicyKind {
        match self {
            TiePolicy::DefaultLabel(_) => TiePolicyKind::DefaultLabel,
            TiePolicy::TrainFrequency(_) => TiePolicyKind::TrainFrequency,
            TiePolicy::MeanProbability => TiePolicyKind::MeanProbability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TiePolicyKind {
    DefaultLabel,
    TrainFrequency,
    MeanProbability,
}

impl fmt::Display for TiePolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicyKind::DefaultLabel => "default-label",
            TiePolicyKind::TrainFrequency => "train-frequency",
            TiePolicyKind::MeanProbability => "mean-probability",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub instance_id: String,
    pub winner: Label,
    /// Votes per label, indexed by label code.
    pub vote_counts: Vec<usize>,
    pub tie_broken: bool,
    pub policy_used: TiePolicyKind,
    /// Mean member probabilities, when every member supplied them.
    pub mean_probabilities: Option<Vec<f64>>,
}

impl EnsembleResult {
    pub fn level(&self) -> Level {
        self.winner.level()
    }

    /// `Name=count` pairs joined by `;`, for diagnostics columns.
    pub fn votes_summary(&self) -> String {
        self.level()
            .labels()
            .into_iter()
            .zip(&self.vote_counts)
            .map(|(l, n)| format!("{l}={n}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn mean_probabilities(voters: &[&Prediction], classes: usize) -> Result<Option<Vec<f64>>, EnsembleError> {
    let mut sum = vec![0.0; classes];
    for p in voters {
        let Some(v) = &p.probabilities else {
            return Ok(None);
        };
        if v.len() != classes {
            return Err(EnsembleError::ProbabilityLength {
                model_id: p.model_id.clone(),
                got: v.len(),
                expected: classes,
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = voters.len() as f64;
    Ok(Some(sum.into_iter().map(|s| s / n).collect()))
}

/// Index of the largest score among `tied`; the earliest code wins on equal
/// scores.
fn best_by<F: Fn(usize) -> f64>(tied: &[usize], score: F) -> usize {
    let mut best = tied[0];
    for &c in &tied[1..] {
        if score(c) > score(best) {
            best = c;
        }
    }
    best
}

/// Majority vote over the members' parsed labels. Members without a parsed
/// label are ignored.
pub fn majority_vote(preds: &[Prediction], policy: &TiePolicy) -> Result<EnsembleResult, EnsembleError> {
    let voters: Vec<&Prediction> = preds.iter().filter(|p| p.parsed.is_some()).collect();
    let Some(first) = voters.first() else {
        return Err(EnsembleError::NoParsedVotes);
    };
    let level = first.parsed.expect("filtered").level();
    if voters.iter().any(|p| p.parsed.map(Label::level) != Some(level)) {
        return Err(EnsembleError::MixedLevels);
    }
    let classes = level.class_count();
    let mut votes = vec![0usize; classes];
    for p in &voters {
        votes[p.parsed.expect("filtered").code()] += 1;
    }
    let mean = mean_probabilities(&voters, classes)?;

    let top = *votes.iter().max().expect("at least one class");
    let tied: Vec<usize> = (0..classes).filter(|&c| votes[c] == top).collect();
    let tie_broken = tied.len() > 1;

    let winner_code = if !tie_broken {
        tied[0]
    } else {
        match policy {
            TiePolicy::DefaultLabel(label) => {
                if label.level() != level {
                    return Err(EnsembleError::DefaultLevel { label: *label, level });
                }
                label.code()
            }
            TiePolicy::TrainFrequency(table) => {
                if table.level != level {
                    return Err(EnsembleError::MissingFrequency {
                        table: table.level,
                        votes: level,
                    });
                }
                best_by(&tied, |c| table.counts[c] as f64)
            }
            TiePolicy::MeanProbability => {
                let Some(mean) = &mean else {
                    let missing = voters
                        .iter()
                        .find(|p| p.probabilities.is_none())
                        .map(|p| p.model_id.clone())
                        .unwrap_or_default();
                    return Err(EnsembleError::MissingProbabilities { model_id: missing });
                };
                best_by(&tied, |c| mean[c])
            }
        }
    };

    Ok(EnsembleResult {
        instance_id: first.instance_id.clone(),
        winner: Label::from_code(level, winner_code).expect("code in range"),
        vote_counts: votes,
        tie_broken,
        policy_used: policy.kind(),
        mean_probabilities: mean,
    })
}
