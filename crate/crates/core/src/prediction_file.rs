//! Tab-separated prediction files with a header row, e.g. columns
//! `instance_id`, `label`, `raw_fingerprint`, `prob_0`, `prob_1`, `prob_2`.
//!
//! Only `instance_id` and `label` are required; columns are located by
//! header name and unknown columns are ignored. An empty label marks an
//! unparseable prediction. Probability columns, when present, are indexed by
//! label code.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::ensemble::EnsembleResult;
use crate::llm_client::Prediction;
use crate::taxonomy::{parse_exact, Label, Level, NameStyle};

#[derive(Debug, Error)]
pub enum PredictionFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing header column `{column}`")]
    MissingColumn { path: String, column: &'static str },
    #[error("{path}:{line}: {message}")]
    BadRow { path: String, line: usize, message: String },
}

fn label_cell(label: Option<Label>, style: NameStyle) -> &'static str {
    label.map(|l| l.canonical_name(style)).unwrap_or("")
}

fn prob_header(classes: usize) -> String {
    (0..classes).map(|i| format!("\tprob_{i}")).collect()
}

fn prob_cells(probs: &[f64]) -> String {
    probs.iter().map(|p| format!("\t{p}")).collect()
}

/// Renders member predictions. Probability columns are written only when
/// every row has a vector.
pub fn render_predictions(preds: &[Prediction], level: Level, style: NameStyle) -> String {
    let with_probs = !preds.is_empty() && preds.iter().all(|p| p.probabilities.is_some());
    let mut out = String::from("instance_id\tlabel\traw_fingerprint");
    if with_probs {
        out.push_str(&prob_header(level.class_count()));
    }
    out.push('\n');
    for p in preds {
        out.push_str(&format!(
            "{}\t{}\t{}",
            p.instance_id,
            label_cell(p.parsed, style),
            p.raw_fingerprint()
        ));
        if with_probs {
            out.push_str(&prob_cells(p.probabilities.as_deref().unwrap_or_default()));
        }
        out.push('\n');
    }
    out
}

/// Renders ensemble output: the member-file columns plus tie diagnostics.
pub fn render_ensemble(results: &[EnsembleResult], level: Level, style: NameStyle) -> String {
    let with_probs = !results.is_empty() && results.iter().all(|r| r.mean_probabilities.is_some());
    let mut out = String::from("instance_id\tlabel\traw_fingerprint");
    if with_probs {
        out.push_str(&prob_header(level.class_count()));
    }
    out.push_str("\ttie_broken\tpolicy\tvotes\n");
    for r in results {
        out.push_str(&format!("{}\t{}\t-", r.instance_id, r.winner.canonical_name(style)));
        if with_probs {
            out.push_str(&prob_cells(r.mean_probabilities.as_deref().unwrap_or_default()));
        }
        out.push_str(&format!(
            "\t{}\t{}\t{}\n",
            r.tie_broken,
            r.policy_used,
            r.votes_summary()
        ));
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), PredictionFileError> {
    let path = path.as_ref();
    let io_err = |source| PredictionFileError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    w.write_all(text.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parses a prediction file. `model_id` is attached to every row (prediction
/// files do not carry it). Labels are matched exactly in either naming style.
pub fn parse_predictions(
    text: &str,
    level: Level,
    model_id: &str,
    path_for_errors: &str,
) -> Result<Vec<Prediction>, PredictionFileError> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &'static str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or(PredictionFileError::MissingColumn {
                path: path_for_errors.to_string(),
                column: name,
            })
    };
    let id_col = find("instance_id")?;
    let label_col = find("label")?;
    let prob_cols: Vec<usize> = (0..level.class_count())
        .map(|i| columns.iter().position(|c| *c == format!("prob_{i}")))
        .collect::<Option<Vec<_>>>()
        .unwrap_or_default();

    let mut preds = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| PredictionFileError::BadRow {
            path: path_for_errors.to_string(),
            line: idx + 1,
            message,
        };
        let cells: Vec<&str> = line.split('\t').collect();
        let cell = |i: usize| cells.get(i).map(|c| c.trim()).unwrap_or("");
        let id = cell(id_col);
        if id.is_empty() {
            return Err(bad("empty instance_id".into()));
        }
        let raw = cell(label_col);
        let parsed = if raw.is_empty() {
            None
        } else {
            Some(parse_exact(raw, level).ok_or_else(|| bad(format!("unknown {level} label `{raw}`")))?)
        };
        let probabilities = if prob_cols.is_empty() {
            None
        } else {
            let v = prob_cols
                .iter()
                .map(|&c| {
                    cell(c)
                        .parse::<f64>()
                        .map_err(|e| bad(format!("bad probability `{}`: {e}", cell(c))))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(bad("probability outside [0, 1]".into()));
            }
            Some(v)
        };
        preds.push(Prediction {
            instance_id: id.to_string(),
            model_id: model_id.to_string(),
            raw_output: raw.to_string(),
            parsed,
            fuzzy: false,
            probabilities,
            parse_error: None,
            from_cache: false,
        });
    }
    Ok(preds)
}

pub fn read_predictions(path: impl AsRef<Path>, level: Level) -> Result<Vec<Prediction>, PredictionFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PredictionFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_predictions(&text, level, &model_id, &path.display().to_string())
}
