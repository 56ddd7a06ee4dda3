//! Minority-class paraphrase augmentation.
//!
//! Every source instance of the target class gets one paraphrase candidate,
//! then extra candidates are drawn from uniformly sampled sources so the
//! pool is oversampled by 550/356 (rounded up). Each candidate is retried up
//! to three times until it passes the length filter; the first `m` valid
//! candidates in generation order are appended to the training split.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{Dataset, QAInstance};
use crate::llm_client::{ClientError, LlmClient, ModelConfig};
use crate::parallel::bounded_map;
use crate::prompting::PromptText;
use crate::taxonomy::{ClarityLabel, Level, NameStyle};

/// Delimiters around the text to be paraphrased inside the generation prompt.
pub const QUOTE_OPEN: &str = "<<<\n";
pub const QUOTE_CLOSE: &str = "\n>>>";

/// Candidates generated per source instance, as `numerator / denominator`.
pub const OVERSAMPLE_RATIO: (usize, usize) = (550, 356);
pub const MAX_ATTEMPTS: u32 = 3;
pub const PARAPHRASE_TEMPERATURE: f64 = 0.55;

#[derive(Debug, Error)]
pub enum AugmentationError {
    #[error("instance `{id}` is {found}, paraphrasing requires {expected}")]
    WrongClass {
        id: String,
        expected: ClarityLabel,
        found: String,
    },
    #[error("cannot filter empty text")]
    EmptyText,
    #[error("no {0} instances in the training split")]
    EmptyTarget(ClarityLabel),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Builds the paraphrase-generation prompt for a Clear Non-Reply answer.
pub fn paraphrase_prompt(instance: &QAInstance) -> Result<PromptText, AugmentationError> {
    paraphrase_prompt_for(instance, ClarityLabel::ClearNonReply)
}

pub fn paraphrase_prompt_for(instance: &QAInstance, target: ClarityLabel) -> Result<PromptText, AugmentationError> {
    let gold = instance.gold(Level::Clarity).and_then(|l| l.as_clarity());
    if gold != Some(target) {
        return Err(AugmentationError::WrongClass {
            id: instance.id.clone(),
            expected: target,
            found: gold.map_or_else(|| "unlabelled".to_string(), |g| g.to_string()),
        });
    }
    let name = target.name(NameStyle::Short);
    let text = format!(
        "You are rewriting a politician's answer from a press interview.\n\
         \n\
         Paraphrase the answer below using new wording. The rewritten answer must remain a {name}:\n\
         - It must not directly address the interviewer's question, and it must keep its deflective, non-answering intent.\n\
         - Preserve the original tone, level of formality and stylistic markers (for example vagueness or hesitation).\n\
         - Do not introduce new facts, examples or topics.\n\
         - Keep the original discourse structure. Do not summarize, clarify or restructure the response.\n\
         - Keep roughly the same length and number of sentences.\n\
         \n\
         Interviewer's question: {question}\n\
         \n\
         Original answer:\n\
         {QUOTE_OPEN}{answer}{QUOTE_CLOSE}\n\
         \n\
         Return only the rewritten answer.",
        question = instance.question,
        answer = instance.answer,
    );
    Ok(PromptText::single_user(instance.id.clone(), text))
}

/// Maximal runs of non-whitespace.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Maximal runs of `.`, `!` or `?` each close one sentence; non-empty text
/// has at least one sentence.
pub fn sentence_count(text: &str) -> usize {
    if text.trim().is_empty() {
        return 0;
    }
    let mut runs = 0;
    let mut in_run = false;
    for ch in text.chars() {
        let term = matches!(ch, '.' | '!' | '?');
        if term && !in_run {
            runs += 1;
        }
        in_run = term;
    }
    runs.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterVerdict {
    pub word_ok: bool,
    pub sentence_ok: bool,
    pub orig_words: usize,
    pub para_words: usize,
    pub orig_sentences: usize,
    pub para_sentences: usize,
}

impl FilterVerdict {
    pub fn accepted(&self) -> bool {
        self.word_ok && self.sentence_ok
    }

    pub fn reason(&self) -> Option<&'static str> {
        match (self.word_ok, self.sentence_ok) {
            (true, true) => None,
            (false, true) => Some("word_count"),
            (true, false) => Some("sentence_count"),
            (false, false) => Some("word_count+sentence_count"),
        }
    }
}

/// Word count within [ceil(0.8 w), floor(1.2 w)] and sentence count within
/// one of the original.
pub fn filter_paraphrase(original: &str, paraphrase: &str) -> Result<FilterVerdict, AugmentationError> {
    if original.trim().is_empty() || paraphrase.trim().is_empty() {
        return Err(AugmentationError::EmptyText);
    }
    let orig_words = word_count(original);
    let para_words = word_count(paraphrase);
    let lower = (4 * orig_words).div_ceil(5);
    let upper = 6 * orig_words / 5;
    let orig_sentences = sentence_count(original);
    let para_sentences = sentence_count(paraphrase);
    Ok(FilterVerdict {
        word_ok: (lower..=upper).contains(&para_words),
        sentence_ok: orig_sentences.abs_diff(para_sentences) <= 1,
        orig_words,
        para_words,
        orig_sentences,
        para_sentences,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pending,
    Accepted,
    Rejected(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pending => f.write_str("pending"),
            Verdict::Accepted => f.write_str("accepted"),
            Verdict::Rejected(why) => write!(f, "rejected({why})"),
        }
    }
}

/// One generation attempt for one candidate slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaphraseCandidate {
    pub candidate: usize,
    pub source_id: String,
    pub text: String,
    pub attempt: u32,
    pub verdict: Verdict,
    pub filter: Option<FilterVerdict>,
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub seed: u64,
    pub max_attempts: u32,
    pub max_in_flight: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            seed: 13,
            max_attempts: MAX_ATTEMPTS,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub dataset: Dataset,
    /// Every attempt, ordered by candidate then attempt.
    pub attempts: Vec<ParaphraseCandidate>,
    pub sources: usize,
    pub candidates: usize,
    pub retained: usize,
    pub warnings: Vec<String>,
}

impl AugmentOutcome {
    pub fn audit_tsv(&self) -> String {
        let mut out = String::from(
            "candidate\tsource_id\tattempt\tverdict\torig_words\tpara_words\torig_sentences\tpara_sentences\n",
        );
        for a in &self.attempts {
            let (ow, pw, os, ps) = a
                .filter
                .map(|f| (f.orig_words, f.para_words, f.orig_sentences, f.para_sentences))
                .unwrap_or_default();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{ow}\t{pw}\t{os}\t{ps}\n",
                a.candidate, a.source_id, a.attempt, a.verdict
            ));
        }
        out
    }
}

/// Total candidates for `m` sources: `ceil(m * 550 / 356)`.
pub fn candidate_budget(m: usize) -> usize {
    let (num, den) = OVERSAMPLE_RATIO;
    (m * num).div_ceil(den)
}

/// Applies the paraphrase temperature unless one is already configured.
pub fn paraphrase_backend(mut cfg: ModelConfig) -> ModelConfig {
    cfg.temperature.get_or_insert(PARAPHRASE_TEMPERATURE);
    cfg
}

fn generate_candidate(
    client: &LlmClient,
    index: usize,
    source: &QAInstance,
    target: ClarityLabel,
    max_attempts: u32,
) -> Result<Vec<ParaphraseCandidate>, AugmentationError> {
    let prompt = paraphrase_prompt_for(source, target)?;
    let mut attempts = Vec::new();
    for attempt in 1..=max_attempts {
        let text = client.complete(&prompt)?.trim().to_string();
        let (verdict, filter) = match filter_paraphrase(&source.answer, &text) {
            Ok(f) if f.accepted() => (Verdict::Accepted, Some(f)),
            Ok(f) => (Verdict::Rejected(f.reason().unwrap_or_default().to_string()), Some(f)),
            Err(_) => (Verdict::Rejected("empty".into()), None),
        };
        let done = verdict == Verdict::Accepted;
        attempts.push(ParaphraseCandidate {
            candidate: index,
            source_id: source.id.clone(),
            text,
            attempt,
            verdict,
            filter,
        });
        if done {
            break;
        }
    }
    Ok(attempts)
}

/// Paraphrase-augments the `target` class of `train`. The input instances
/// are kept as an unchanged prefix of the output.
pub fn augment_minority(
    train: &Dataset,
    target: ClarityLabel,
    client: &LlmClient,
    options: &AugmentOptions,
) -> Result<AugmentOutcome, AugmentationError> {
    let sources: Vec<&QAInstance> = train
        .iter()
        .filter(|i| i.gold(Level::Clarity).and_then(|l| l.as_clarity()) == Some(target))
        .collect();
    let m = sources.len();
    if m == 0 {
        return Err(AugmentationError::EmptyTarget(target));
    }
    let total = candidate_budget(m);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut slots: Vec<&QAInstance> = sources.clone();
    slots.extend((m..total).map(|_| sources[rng.gen_range(0..m)]));

    let results = bounded_map(&slots, options.max_in_flight, |i, src| {
        generate_candidate(client, i, src, target, options.max_attempts)
    });
    let mut attempts = Vec::new();
    for r in results {
        attempts.extend(r?);
    }

    let mut dataset = train.clone();
    let mut per_source: HashMap<&str, usize> = HashMap::new();
    let mut retained = 0;
    for a in attempts.iter().filter(|a| a.verdict == Verdict::Accepted) {
        if retained == m {
            break;
        }
        let src = slots[a.candidate];
        let n = per_source.entry(src.id.as_str()).or_insert(0);
        *n += 1;
        dataset.instances.push(QAInstance {
            id: format!("{}-aug{}", src.id, n),
            answer: a.text.clone(),
            clarity_gold: Some(target),
            evasion_annotations: Vec::new(),
            ..src.clone()
        });
        retained += 1;
    }

    let mut warnings = Vec::new();
    if retained < m {
        let msg = format!("only {retained} of {m} paraphrases passed the filter");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(AugmentOutcome {
        dataset,
        attempts,
        sources: m,
        candidates: total,
        retained,
        warnings,
    })
}
