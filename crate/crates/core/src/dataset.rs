//! Question/answer records, split loading, class statistics and the
//! atomic/enriched question renderings.
//!
//! Record files are line-delimited JSON, one object per line:
//!
//! ```text
//! {"id":"q1","question":"...","context":"...","answer":"...","president":"...",
//!  "clarity":"Clear Reply","evasion":"Explicit","evasion_annotations":[]}
//! ```
//!
//! Only `id`, `question` and `answer` are required. Labels use the short
//! canonical names. Blank lines are ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{parse_exact, ClarityLabel, EvasionLabel, Label, Level};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate id `{id}` at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("unknown {level} label `{value}` at line {line}")]
    UnknownLabelString { line: usize, level: Level, value: String },
    #[error("line {line}: evasion label {evasion} is not a child of clarity label {clarity}")]
    ParentMismatch {
        line: usize,
        clarity: ClarityLabel,
        evasion: EvasionLabel,
    },
    #[error("instance `{id}` has no gold {level} label")]
    MissingGold { id: String, level: Level },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One interview question/answer pair with its gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    /// The target question being judged.
    pub question: String,
    /// Full interviewer turn; may be empty.
    #[serde(default)]
    pub context: String,
    pub answer: String,
    #[serde(default)]
    pub president: String,
    #[serde(default, rename = "clarity", skip_serializing_if = "Option::is_none")]
    pub clarity_gold: Option<ClarityLabel>,
    #[serde(default, rename = "evasion", skip_serializing_if = "Option::is_none")]
    pub evasion_gold: Option<EvasionLabel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evasion_annotations: Vec<EvasionLabel>,
}

impl QAInstance {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        QAInstance {
            id: id.into(),
            question: question.into(),
            context: String::new(),
            answer: answer.into(),
            president: String::new(),
            clarity_gold: None,
            evasion_gold: None,
            evasion_annotations: Vec::new(),
        }
    }

    /// Gold label at `level`. A Clarity gold is derived from the Evasion
    /// gold's parent when only the latter is recorded.
    pub fn gold(&self, level: Level) -> Option<Label> {
        match level {
            Level::Clarity => self
                .clarity_gold
                .or_else(|| self.evasion_gold.map(EvasionLabel::parent))
                .map(Label::Clarity),
            Level::Evasion => self.evasion_gold.map(Label::Evasion),
        }
    }
}

/// Target question followed by the interviewer turn, or the question alone
/// when there is no context.
pub fn enriched_question(instance: &QAInstance) -> String {
    if instance.context.trim().is_empty() {
        format!("Target question: {}", instance.question)
    } else {
        format!(
            "Target question: {}\n\nFull interviewer turn (context): {}",
            instance.question, instance.context
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    pub instances: Vec<QAInstance>,
}

impl Dataset {
    pub fn new(split: Split, instances: Vec<QAInstance>) -> Self {
        Dataset { split, instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QAInstance> {
        self.instances.iter()
    }

    pub fn get(&self, id: &str) -> Option<&QAInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

/// Raw on-disk shape; labels stay strings so errors can carry line numbers.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    question: String,
    #[serde(default)]
    context: Option<String>,
    answer: String,
    #[serde(default)]
    president: Option<String>,
    #[serde(default)]
    clarity: Option<String>,
    #[serde(default)]
    evasion: Option<String>,
    #[serde(default)]
    evasion_annotations: Option<Vec<String>>,
}

fn label_field(raw: Option<String>, level: Level, line: usize) -> Result<Option<Label>, DatasetError> {
    match raw {
        None => Ok(None),
        Some(s) if s.trim().is_empty() => Ok(None),
        Some(s) => parse_exact(&s, level)
            .map(Some)
            .ok_or(DatasetError::UnknownLabelString { line, level, value: s }),
    }
}

fn parse_record(text: &str, line: usize) -> Result<QAInstance, DatasetError> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| DatasetError::MalformedRecord {
        line,
        message: e.to_string(),
    })?;
    for (name, value) in [("id", &raw.id), ("question", &raw.question), ("answer", &raw.answer)] {
        if value.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                line,
                message: format!("field `{name}` is empty"),
            });
        }
    }
    let clarity = label_field(raw.clarity, Level::Clarity, line)?.and_then(Label::as_clarity);
    let evasion = label_field(raw.evasion, Level::Evasion, line)?.and_then(Label::as_evasion);
    if let (Some(c), Some(e)) = (clarity, evasion) {
        if e.parent() != c {
            return Err(DatasetError::ParentMismatch {
                line,
                clarity: c,
                evasion: e,
            });
        }
    }
    let annotations = raw
        .evasion_annotations
        .unwrap_or_default()
        .into_iter()
        .map(|s| label_field(Some(s), Level::Evasion, line).map(|l| l.and_then(Label::as_evasion)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    if !(annotations.is_empty() || annotations.len() == 3) {
        return Err(DatasetError::MalformedRecord {
            line,
            message: format!("expected 0 or 3 evasion annotations, got {}", annotations.len()),
        });
    }
    Ok(QAInstance {
        id: raw.id,
        question: raw.question,
        context: raw.context.unwrap_or_default(),
        answer: raw.answer,
        president: raw.president.unwrap_or_default(),
        clarity_gold: clarity,
        evasion_gold: evasion,
        evasion_annotations: annotations,
    })
}

/// Reads records from any buffered reader. Line numbers in errors are 1-based.
pub fn read_split<R: BufRead>(reader: R, split: Split) -> Result<Dataset, DatasetError> {
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let instance = parse_record(&line, line_no)?;
        if !seen.insert(instance.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: instance.id,
            });
        }
        instances.push(instance);
    }
    Ok(Dataset { split, instances })
}

pub fn load_split(path: impl AsRef<Path>, split: Split) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_split(BufReader::new(file), split)
}

pub fn write_records<W: Write>(dataset: &Dataset, mut out: W) -> io::Result<()> {
    for instance in &dataset.instances {
        serde_json::to_writer(&mut out, instance)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_split(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_records(dataset, BufWriter::new(file)).map_err(io_err)
}

/// Per-class gold counts at one level; `counts` is indexed by label code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFrequencyTable {
    pub level: Level,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ClassFrequencyTable {
    pub fn from_counts(level: Level, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), level.class_count(), "one count per class");
        let total = counts.iter().sum();
        ClassFrequencyTable { level, counts, total }
    }

    pub fn count(&self, label: Label) -> u64 {
        if label.level() != self.level {
            return 0;
        }
        self.counts[label.code()]
    }

    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    /// Aligned two-column text table with a trailing total row.
    pub fn render_table(&self) -> String {
        let labels = self.level.labels();
        let width = labels
            .iter()
            .map(|l| l.to_string().len())
            .max()
            .unwrap_or(0)
            .max("total".len());
        let mut out = String::new();
        for label in labels {
            let n = self.count(label);
            let pct = if self.total == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.total as f64
            };
            out.push_str(&format!("{:<width$}  {:>7}  {:>6.2}%\n", label.to_string(), n, pct));
        }
        out.push_str(&format!("{:<width$}  {:>7}\n", "total", self.total));
        out
    }

    pub fn render_tsv(&self) -> String {
        let mut out = String::from("level\tlabel\tcount\n");
        for label in self.level.labels() {
            out.push_str(&format!("{}\t{}\t{}\n", self.level, label, self.count(label)));
        }
        out
    }
}

pub fn class_frequencies(dataset: &Dataset, level: Level) -> Result<ClassFrequencyTable, DatasetError> {
    let mut counts = vec![0u64; level.class_count()];
    for instance in &dataset.instances {
        let gold = instance.gold(level).ok_or_else(|| DatasetError::MissingGold {
            id: instance.id.clone(),
            level,
        })?;
        counts[gold.code()] += 1;
    }
    Ok(ClassFrequencyTable::from_counts(level, counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Dataset, DatasetError> {
        read_split(text.as_bytes(), Split::Train)
    }

    #[test]
    fn loads_in_file_order() {
        let text = r#"{"id":"a","question":"Q1?","answer":"A1","clarity":"Clear Reply","evasion":"Explicit"}
{"id":"b","question":"Q2?","answer":"A2","context":"C2","clarity":"Ambivalent"}

{"id":"c","question":"Q3?","answer":"A3","evasion":"Clarification","evasion_annotations":["Clarification","Dodging","Clarification"]}
"#;
        let d = read(text).unwrap();
        let ids: Vec<_> = d.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(d.instances[1].context, "C2");
        assert_eq!(d.instances[0].president, "");
        assert_eq!(d.instances[2].evasion_annotations.len(), 3);
        assert_eq!(
            d.instances[2].gold(Level::Clarity),
            Some(ClarityLabel::ClearNonReply.into())
        );
    }

    #[test]
    fn empty_file() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn parent_mismatch() {
        let text = r#"{"id":"a","question":"Q?","answer":"A","clarity":"Clear Reply","evasion":"Dodging"}"#;
        assert!(matches!(read(text), Err(DatasetError::ParentMismatch { line: 1, .. })));
    }

    #[test]
    fn record_errors() {
        let dup =
            "{\"id\":\"a\",\"question\":\"Q\",\"answer\":\"A\"}\n{\"id\":\"a\",\"question\":\"Q\",\"answer\":\"A\"}";
        assert!(matches!(read(dup), Err(DatasetError::DuplicateId { line: 2, .. })));
        assert!(matches!(
            read("{not json"),
            Err(DatasetError::MalformedRecord { line: 1, .. })
        ));
        let empty_q = r#"{"id":"a","question":"  ","answer":"A"}"#;
        assert!(matches!(read(empty_q), Err(DatasetError::MalformedRecord { .. })));
        let bad = r#"{"id":"a","question":"Q","answer":"A","clarity":"Clear-ish"}"#;
        assert!(matches!(read(bad), Err(DatasetError::UnknownLabelString { .. })));
        let two = r#"{"id":"a","question":"Q","answer":"A","evasion_annotations":["Dodging","General"]}"#;
        assert!(matches!(read(two), Err(DatasetError::MalformedRecord { .. })));
    }

    #[test]
    fn frequencies() {
        let mk = |id: &str, c: ClarityLabel| QAInstance {
            clarity_gold: Some(c),
            ..QAInstance::new(id, "q", "a")
        };
        let d = Dataset::new(
            Split::Train,
            vec![
                mk("1", ClarityLabel::Ambivalent),
                mk("2", ClarityLabel::Ambivalent),
                mk("3", ClarityLabel::ClearReply),
                mk("4", ClarityLabel::ClearNonReply),
            ],
        );
        let t = class_frequencies(&d, Level::Clarity).unwrap();
        assert_eq!(t.counts, vec![1, 2, 1]);
        assert_eq!(t.total, 4);
        assert!(matches!(
            class_frequencies(&d, Level::Evasion),
            Err(DatasetError::MissingGold { .. })
        ));

        let empty = Dataset::new(Split::Dev, vec![]);
        let t = class_frequencies(&empty, Level::Evasion).unwrap();
        assert_eq!(t.counts, vec![0; 9]);
        assert_eq!(t.total, 0);
    }

    #[test]
    fn enriched_rendering() {
        let mut i = QAInstance::new("x", "Q?", "A");
        i.context = "C? And D?".into();
        assert_eq!(
            enriched_question(&i),
            "Target question: Q?\n\nFull interviewer turn (context): C? And D?"
        );
        i.context.clear();
        assert_eq!(enriched_question(&i), "Target question: Q?");
    }

    #[test]
    fn table_rendering() {
        let t = ClassFrequencyTable::from_counts(Level::Clarity, vec![1, 2, 1]);
        let text = t.render_table();
        assert!(text.contains("Ambivalent"));
        assert!(text.lines().last().unwrap().starts_with("total"));
        assert_eq!(t.render_tsv().lines().count(), 4);
    }
}
