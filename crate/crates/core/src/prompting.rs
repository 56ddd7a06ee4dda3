//! Few-shot demonstration selection and prompt rendering.
//!
//! Two template frames exist. The basic frame carries the three one-line
//! Clarity definitions and is used by every plain clarity prompt. The detailed
//! frame is used when Clarity definitions are expanded with their Evasion
//! subcategories, and for all nine-way Evasion prompts; it asks for the
//! "category name" and lays the query out over separate target-question,
//! speaker and interviewer-turn lines.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{enriched_question, Dataset, QAInstance};
use crate::taxonomy::{Label, LabelTaxonomy, Level, NameStyle};

pub const SYSTEM_LINE: &str = "You are a world-class political discourse analyst trained to detect evasive communication strategies in high-stakes interviews.";
const CLARITY_TASK_LINE: &str = "Judge the clarity of an answer to a journalist's question.";
const EVASION_TASK_LINE: &str =
    "Your task is to classify how a public official answers a journalist\u{2019}s question.";
const LABELS_HEADER: &str = "Labels (choose exactly ONE):";
const OUTPUT_LABEL: &str = "Output ONLY the label name (no explanation, no punctuation).";
const OUTPUT_CATEGORY: &str = "Output ONLY the category name.";
const COT_REASONING: &str = "In your own mind, reason step by step about how the answer responds to the question. Keep all intermediate reasoning hidden and do not write it out.";
const COT_OUTPUT_LABEL: &str =
    "When you have decided, output ONLY the label name (no explanation, no extra text, no punctuation).";
const COT_OUTPUT_CATEGORY: &str = "When you have decided, output ONLY the category name.";
const REPEAT_MARKER: &str = "Read the question again:";
const EXAMPLES_LABEL: &str = "The following examples illustrate each label:";
const EXAMPLES_CATEGORY: &str = "The following examples illustrate each category:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{k} shots cannot be split evenly across {classes} classes")]
    IndivisibleK { k: usize, classes: usize },
    #[error("{k} shots is not a supported few-shot size at the {level} level (expected one of {allowed:?})")]
    UnsupportedShots {
        k: usize,
        level: Level,
        allowed: &'static [usize],
    },
    #[error("class {label} has {available} eligible training instances, {needed} needed")]
    InsufficientClassSupport {
        label: Label,
        needed: usize,
        available: usize,
    },
    #[error("instance `{id}` has no president name but the prompt requires a speaker line")]
    MissingPresident { id: String },
    #[error("the speaker line is only available with subcategory definitions or at the evasion level")]
    PresidentUnsupported,
    #[error("strategy {strategy} takes no demonstrations, got {got}")]
    UnexpectedDemonstrations { strategy: Strategy, got: usize },
    #[error("expected {expected} demonstrations, got {got}")]
    DemonstrationCount { expected: usize, got: usize },
    #[error("demonstration label {label} is not at the {level} level")]
    DemonstrationLevel { label: Label, level: Level },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "ZS")]
    ZeroShot,
    #[serde(rename = "ZS_Re2", alias = "ZS+Re2")]
    ZeroShotRepeat,
    #[serde(rename = "FS")]
    FewShot,
    #[serde(rename = "CoT")]
    HiddenReasoning,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "ZS",
            Strategy::ZeroShotRepeat => "ZS+Re2",
            Strategy::FewShot => "FS",
            Strategy::HiddenReasoning => "CoT",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zs" => Ok(Strategy::ZeroShot),
            "zs+re2" | "zs_re2" | "re2" => Ok(Strategy::ZeroShotRepeat),
            "fs" => Ok(Strategy::FewShot),
            "cot" => Ok(Strategy::HiddenReasoning),
            other => Err(format!("unknown strategy `{other}` (expected ZS, ZS+Re2, FS or CoT)")),
        }
    }
}

fn default_seed() -> u64 {
    13
}

/// One point of the prompt design grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    pub strategy: Strategy,
    #[serde(default)]
    pub shots: usize,
    #[serde(default = "default_level")]
    pub level: Level,
    #[serde(default)]
    pub enriched: bool,
    #[serde(default)]
    pub president_name: bool,
    #[serde(default)]
    pub subcategory_definitions: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_level() -> Level {
    Level::Clarity
}

pub const CLARITY_SHOTS: &[usize] = &[3, 9, 27];
pub const EVASION_SHOTS: &[usize] = &[9, 18, 27];

impl PromptSpec {
    pub fn zero_shot(level: Level) -> Self {
        PromptSpec {
            strategy: Strategy::ZeroShot,
            shots: 0,
            level,
            enriched: false,
            president_name: false,
            subcategory_definitions: false,
            seed: default_seed(),
        }
    }

    pub fn few_shot(level: Level, shots: usize) -> Self {
        PromptSpec {
            strategy: Strategy::FewShot,
            shots,
            ..Self::zero_shot(level)
        }
    }

    /// Short strategy tag used in result tables ("FS27", "ZS+Re2").
    pub fn strategy_tag(&self) -> String {
        match self.strategy {
            Strategy::FewShot => format!("FS{}", self.shots),
            other => other.as_str().to_string(),
        }
    }

    fn detailed_frame(&self) -> bool {
        self.subcategory_definitions || self.level == Level::Evasion
    }

    pub fn allowed_shots(&self) -> &'static [usize] {
        match self.level {
            Level::Clarity => CLARITY_SHOTS,
            Level::Evasion => EVASION_SHOTS,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let classes = self.level.class_count();
        match self.strategy {
            Strategy::FewShot => {
                if self.shots == 0 || !self.shots.is_multiple_of(classes) {
                    return Err(PromptError::IndivisibleK { k: self.shots, classes });
                }
                if !self.allowed_shots().contains(&self.shots) {
                    return Err(PromptError::UnsupportedShots {
                        k: self.shots,
                        level: self.level,
                        allowed: self.allowed_shots(),
                    });
                }
            }
            strategy if self.shots != 0 => {
                return Err(PromptError::UnexpectedDemonstrations {
                    strategy,
                    got: self.shots,
                })
            }
            _ => {}
        }
        if self.president_name && !self.detailed_frame() {
            return Err(PromptError::PresidentUnsupported);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub source_id: String,
    pub question_text: String,
    pub answer: String,
    pub label: Label,
}

/// Class-balanced demonstrations drawn from `train`.
pub fn select_demonstrations(train: &Dataset, spec: &PromptSpec) -> Result<Vec<Demonstration>, PromptError> {
    select_demonstrations_excluding(train, spec, &HashSet::new())
}

/// As [`select_demonstrations`], never drawing an instance whose id is in
/// `exclude` (used to keep query instances out of their own prompt).
///
/// Demonstrations come out class-blocked in label-code order; each block is
/// a seeded sample without replacement, shuffled with the same generator.
pub fn select_demonstrations_excluding(
    train: &Dataset,
    spec: &PromptSpec,
    exclude: &HashSet<String>,
) -> Result<Vec<Demonstration>, PromptError> {
    let classes = spec.level.class_count();
    let k = spec.shots;
    if !k.is_multiple_of(classes) {
        return Err(PromptError::IndivisibleK { k, classes });
    }
    let per_class = k / classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut demos = Vec::with_capacity(k);

    for label in spec.level.labels() {
        let pool: Vec<&QAInstance> = train
            .iter()
            .filter(|i| i.gold(spec.level) == Some(label) && !exclude.contains(&i.id))
            .collect();
        if pool.len() < per_class {
            return Err(PromptError::InsufficientClassSupport {
                label,
                needed: per_class,
                available: pool.len(),
            });
        }
        let mut picked = rand::seq::index::sample(&mut rng, pool.len(), per_class).into_vec();
        picked.sort_unstable();
        picked.shuffle(&mut rng);
        demos.extend(picked.into_iter().map(|idx| {
            let inst = pool[idx];
            Demonstration {
                source_id: inst.id.clone(),
                question_text: if spec.enriched {
                    enriched_question(inst)
                } else {
                    inst.question.clone()
                },
                answer: inst.answer.clone(),
                label,
            }
        }));
    }
    Ok(demos)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// A rendered prompt ready to send. `instance_id` is metadata only and is
/// not part of the fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub instance_id: String,
    pub messages: Vec<ChatMessage>,
    pub fingerprint: String,
    pub warnings: Vec<String>,
}

impl PromptText {
    pub fn single_user(instance_id: impl Into<String>, content: String) -> Self {
        let messages = vec![ChatMessage {
            role: "user".into(),
            content,
        }];
        let fingerprint = fingerprint_messages(&messages);
        PromptText {
            instance_id: instance_id.into(),
            messages,
            fingerprint,
            warnings: Vec::new(),
        }
    }

    /// Concatenated message contents.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn fingerprint_messages(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.as_bytes());
        hasher.update([0u8]);
        hasher.update(m.content.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

fn definitions_block(spec: &PromptSpec, taxonomy: &LabelTaxonomy) -> String {
    let body = if spec.level == Level::Clarity && spec.subcategory_definitions {
        taxonomy
            .subcategory_blocks()
            .iter()
            .map(|(_, text)| text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    } else {
        taxonomy.definition_lines(spec.level).join("\n")
    };
    format!("{LABELS_HEADER}\n{body}")
}

fn output_instruction(spec: &PromptSpec) -> String {
    let detailed = spec.detailed_frame();
    match (spec.strategy, detailed) {
        (Strategy::HiddenReasoning, false) => format!("{COT_REASONING}\n\n{COT_OUTPUT_LABEL}"),
        (Strategy::HiddenReasoning, true) => format!("{COT_REASONING}\n\n{COT_OUTPUT_CATEGORY}"),
        (_, false) => OUTPUT_LABEL.to_string(),
        (_, true) => OUTPUT_CATEGORY.to_string(),
    }
}

fn render_demos(demos: &[Demonstration]) -> String {
    demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            format!(
                "Example {}:\nQuestion: {}\nAnswer: {}\nLabel: {}",
                i + 1,
                d.question_text,
                d.answer,
                d.label.canonical_name(NameStyle::Prompt)
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders the full classification prompt for `instance`.
pub fn render_prompt(
    spec: &PromptSpec,
    demos: &[Demonstration],
    instance: &QAInstance,
    taxonomy: &LabelTaxonomy,
) -> Result<PromptText, PromptError> {
    spec.validate()?;
    match spec.strategy {
        Strategy::FewShot if demos.len() != spec.shots => {
            return Err(PromptError::DemonstrationCount {
                expected: spec.shots,
                got: demos.len(),
            })
        }
        Strategy::FewShot => {}
        strategy if !demos.is_empty() => {
            return Err(PromptError::UnexpectedDemonstrations {
                strategy,
                got: demos.len(),
            })
        }
        _ => {}
    }
    if let Some(d) = demos.iter().find(|d| d.label.level() != spec.level) {
        return Err(PromptError::DemonstrationLevel {
            label: d.label,
            level: spec.level,
        });
    }
    if spec.president_name && instance.president.trim().is_empty() {
        return Err(PromptError::MissingPresident {
            id: instance.id.clone(),
        });
    }

    let mut warnings = Vec::new();
    let has_context = !instance.context.trim().is_empty();
    if spec.enriched && !has_context {
        let msg = format!(
            "instance `{}` has no interviewer turn; rendering the atomic question",
            instance.id
        );
        log::debug!("{msg}");
        warnings.push(msg);
    }

    let detailed = spec.detailed_frame();
    let task_line = match spec.level {
        Level::Clarity => CLARITY_TASK_LINE,
        Level::Evasion => EVASION_TASK_LINE,
    };
    let definitions = definitions_block(spec, taxonomy);
    let instruction = output_instruction(spec);

    let mut sections: Vec<String> = vec![SYSTEM_LINE.into(), task_line.into(), definitions.clone()];
    if spec.strategy == Strategy::FewShot {
        sections.push(if detailed { EXAMPLES_CATEGORY } else { EXAMPLES_LABEL }.into());
        sections.push(render_demos(demos));
    }
    sections.push(instruction.clone());
    if spec.strategy == Strategy::ZeroShotRepeat {
        sections.push(format!("{REPEAT_MARKER}\n{task_line}"));
        sections.push(definitions);
        sections.push(instruction);
    }

    let query = if detailed {
        let mut q = format!("Target question (to evaluate): {}\n", instance.question);
        if spec.president_name {
            q.push_str(&format!("Speaker: {}\n", instance.president));
        }
        if spec.enriched && has_context {
            q.push_str(&format!(
                "Full interviewer turn (may contain multiple questions): {}\n",
                instance.context
            ));
        }
        q.push_str(&format!("Answer: {}\nLabel:", instance.answer));
        q
    } else {
        let question = if spec.enriched {
            enriched_question(instance)
        } else {
            instance.question.clone()
        };
        if spec.strategy == Strategy::FewShot {
            format!("Question: {}\nAnswer: {}\nLabel:", question, instance.answer)
        } else {
            format!("QUESTION: {}\nANSWER: {}\nLabel:", question, instance.answer)
        }
    };
    sections.push(query);

    let mut prompt = PromptText::single_user(instance.id.clone(), sections.join("\n\n"));
    prompt.warnings = warnings;
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::taxonomy::{ClarityLabel, EvasionLabel};

    fn instance() -> QAInstance {
        QAInstance {
            context: "Is the deal done? And when will it be signed?".into(),
            president: "Jane Doe".into(),
            ..QAInstance::new("q0", "Is the deal done?", "We are working on it.")
        }
    }

    fn train() -> Dataset {
        let mut v = Vec::new();
        for (n, e) in EvasionLabel::ALL.iter().enumerate() {
            for j in 0..9 {
                v.push(QAInstance {
                    evasion_gold: Some(*e),
                    clarity_gold: Some(e.parent()),
                    ..QAInstance::new(
                        format!("t{n}-{j}"),
                        format!("Question {n}-{j}?"),
                        format!("Answer {n}-{j}."),
                    )
                });
            }
        }
        Dataset::new(Split::Train, v)
    }

    fn count(h: &str, n: &str) -> usize {
        h.matches(n).count()
    }

    #[test]
    fn zero_shot_shape() {
        let p = render_prompt(
            &PromptSpec::zero_shot(Level::Clarity),
            &[],
            &instance(),
            &LabelTaxonomy::standard(),
        )
        .unwrap();
        let t = p.text();
        assert_eq!(count(&t, OUTPUT_LABEL), 1);
        assert!(t.starts_with(SYSTEM_LINE));
        assert!(t.ends_with("QUESTION: Is the deal done?\nANSWER: We are working on it.\nLabel:"));
    }

    #[test]
    fn repeat_doubles_definitions() {
        let spec = PromptSpec {
            strategy: Strategy::ZeroShotRepeat,
            ..PromptSpec::zero_shot(Level::Clarity)
        };
        let t = render_prompt(&spec, &[], &instance(), &LabelTaxonomy::standard())
            .unwrap()
            .text();
        for line in LabelTaxonomy::standard().definition_lines(Level::Clarity) {
            assert_eq!(count(&t, &line), 2, "{line}");
        }
        assert_eq!(count(&t, REPEAT_MARKER), 1);
    }

    #[test]
    fn hidden_reasoning() {
        let spec = PromptSpec {
            strategy: Strategy::HiddenReasoning,
            ..PromptSpec::zero_shot(Level::Clarity)
        };
        let t = render_prompt(&spec, &[], &instance(), &LabelTaxonomy::standard())
            .unwrap()
            .text();
        assert!(t.contains("Keep all intermediate reasoning hidden"));
        assert_eq!(count(&t, "no punctuation"), 1);
        assert!(!t.contains(OUTPUT_LABEL));
    }

    #[test]
    fn subcategory_blocks() {
        let spec = PromptSpec {
            subcategory_definitions: true,
            enriched: true,
            president_name: true,
            ..PromptSpec::few_shot(Level::Clarity, 27)
        };
        let demos = select_demonstrations(&train(), &spec).unwrap();
        let t = render_prompt(&spec, &demos, &instance(), &LabelTaxonomy::standard())
            .unwrap()
            .text();
        assert_eq!(count(&t, "Sub-categories:"), 2);
        assert_eq!(count(&t, "Sub-category:"), 1);
        assert!(t.contains("Speaker: Jane Doe\n"));
        assert!(t.contains("Full interviewer turn (may contain multiple questions): Is the deal done? And when"));
        assert!(t.ends_with("Answer: We are working on it.\nLabel:"));
    }

    #[test]
    fn few_shot_balance_and_label_lines() {
        let spec = PromptSpec::few_shot(Level::Clarity, 27);
        let demos = select_demonstrations(&train(), &spec).unwrap();
        for c in ClarityLabel::ALL {
            assert_eq!(demos.iter().filter(|d| d.label == c.into()).count(), 9);
        }
        let t = render_prompt(&spec, &demos, &instance(), &LabelTaxonomy::standard())
            .unwrap()
            .text();
        assert_eq!(t.lines().filter(|l| l.starts_with("Label: ")).count(), 27);
        assert_eq!(t.lines().filter(|l| *l == "Label:").count(), 1);

        let spec = PromptSpec::few_shot(Level::Evasion, 27);
        let demos = select_demonstrations(&train(), &spec).unwrap();
        for e in EvasionLabel::ALL {
            assert_eq!(demos.iter().filter(|d| d.label == e.into()).count(), 3);
        }
    }

    #[test]
    fn demo_order_is_class_blocked() {
        let spec = PromptSpec::few_shot(Level::Clarity, 9);
        let demos = select_demonstrations(&train(), &spec).unwrap();
        let codes: Vec<usize> = demos.iter().map(|d| d.label.code()).collect();
        assert_eq!(codes, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(demos, select_demonstrations(&train(), &spec).unwrap());
        let other = PromptSpec { seed: 99, ..spec };
        assert_ne!(demos, select_demonstrations(&train(), &other).unwrap());
    }

    #[test]
    fn selection_errors() {
        let spec = PromptSpec::few_shot(Level::Clarity, 4);
        assert_eq!(
            select_demonstrations(&train(), &spec),
            Err(PromptError::IndivisibleK { k: 4, classes: 3 })
        );
        let small = Dataset::new(Split::Train, train().instances.into_iter().take(12).collect());
        assert!(matches!(
            select_demonstrations(&small, &PromptSpec::few_shot(Level::Clarity, 27)),
            Err(PromptError::InsufficientClassSupport { .. })
        ));
    }

    #[test]
    fn exclusion() {
        let spec = PromptSpec::few_shot(Level::Evasion, 27);
        let t = train();
        let exclude: HashSet<String> = t
            .iter()
            .filter(|i| i.id.ends_with("-0"))
            .map(|i| i.id.clone())
            .collect();
        let demos = select_demonstrations_excluding(&t, &spec, &exclude).unwrap();
        assert!(demos.iter().all(|d| !exclude.contains(&d.source_id)));
    }

    #[test]
    fn spec_validation() {
        let mut spec = PromptSpec::zero_shot(Level::Clarity);
        spec.president_name = true;
        assert_eq!(spec.validate(), Err(PromptError::PresidentUnsupported));
        let spec = PromptSpec::few_shot(Level::Evasion, 3);
        assert!(matches!(spec.validate(), Err(PromptError::IndivisibleK { .. })));
        let spec = PromptSpec::few_shot(Level::Clarity, 6);
        assert!(matches!(spec.validate(), Err(PromptError::UnsupportedShots { .. })));
    }

    #[test]
    fn missing_fields() {
        let spec = PromptSpec {
            subcategory_definitions: true,
            president_name: true,
            ..PromptSpec::zero_shot(Level::Clarity)
        };
        let mut inst = instance();
        inst.president.clear();
        assert!(matches!(
            render_prompt(&spec, &[], &inst, &LabelTaxonomy::standard()),
            Err(PromptError::MissingPresident { .. })
        ));

        let spec = PromptSpec {
            enriched: true,
            ..PromptSpec::zero_shot(Level::Clarity)
        };
        let mut inst = instance();
        inst.context.clear();
        let p = render_prompt(&spec, &[], &inst, &LabelTaxonomy::standard()).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert!(p
            .text()
            .contains("QUESTION: Target question: Is the deal done?\nANSWER:"));
    }

    #[test]
    fn fingerprint_is_stable() {
        let spec = PromptSpec::zero_shot(Level::Evasion);
        let a = render_prompt(&spec, &[], &instance(), &LabelTaxonomy::standard()).unwrap();
        let b = render_prompt(&spec, &[], &instance(), &LabelTaxonomy::standard()).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.fingerprint.len(), 64);
        let mut other = instance();
        other.answer.push('!');
        let c = render_prompt(&spec, &[], &other, &LabelTaxonomy::standard()).unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
    }
}
