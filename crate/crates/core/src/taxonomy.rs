//! Two-level label space: three Clarity classes refined into nine Evasion
//! classes, plus tolerant parsing of labels out of raw model output.
//!
//! Numeric codes follow the declaration order of each enum (0..=2 and
//! 0..=8) and are stable; they index probability vectors and TSV columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Which taxonomy level a label or prediction lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Clarity,
    Evasion,
}

impl Level {
    pub fn class_count(self) -> usize {
        match self {
            Level::Clarity => ClarityLabel::ALL.len(),
            Level::Evasion => EvasionLabel::ALL.len(),
        }
    }

    /// All labels at this level in code order.
    pub fn labels(self) -> Vec<Label> {
        match self {
            Level::Clarity => ClarityLabel::ALL.iter().copied().map(Label::Clarity).collect(),
            Level::Evasion => EvasionLabel::ALL.iter().copied().map(Label::Evasion).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Clarity => "clarity",
            Level::Evasion => "evasion",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clarity" | "task1" => Ok(Level::Clarity),
            "evasion" | "task2" => Ok(Level::Evasion),
            other => Err(format!("unknown level `{other}` (expected clarity or evasion)")),
        }
    }
}

/// How a label name is spelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NameStyle {
    /// Dataset-style names ("Ambivalent").
    Short,
    /// Names as written in the prompt templates ("Ambivalent Reply").
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClarityLabel {
    ClearReply,
    Ambivalent,
    ClearNonReply,
}

impl ClarityLabel {
    pub const ALL: [ClarityLabel; 3] = [
        ClarityLabel::ClearReply,
        ClarityLabel::Ambivalent,
        ClarityLabel::ClearNonReply,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self, style: NameStyle) -> &'static str {
        match (self, style) {
            (ClarityLabel::ClearReply, _) => "Clear Reply",
            (ClarityLabel::Ambivalent, NameStyle::Short) => "Ambivalent",
            (ClarityLabel::Ambivalent, NameStyle::Prompt) => "Ambivalent Reply",
            (ClarityLabel::ClearNonReply, _) => "Clear Non-Reply",
        }
    }

    /// Evasion classes that refine this Clarity class, in code order.
    pub fn children(self) -> Vec<EvasionLabel> {
        EvasionLabel::ALL
            .iter()
            .copied()
            .filter(|e| e.parent() == self)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvasionLabel {
    Implicit,
    General,
    PartialHalfAnswer,
    Dodging,
    Deflection,
    Explicit,
    DecliningToAnswer,
    ClaimsIgnorance,
    Clarification,
}

impl EvasionLabel {
    pub const ALL: [EvasionLabel; 9] = [
        EvasionLabel::Implicit,
        EvasionLabel::General,
        EvasionLabel::PartialHalfAnswer,
        EvasionLabel::Dodging,
        EvasionLabel::Deflection,
        EvasionLabel::Explicit,
        EvasionLabel::DecliningToAnswer,
        EvasionLabel::ClaimsIgnorance,
        EvasionLabel::Clarification,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Evasion names are spelled identically in both styles.
    pub fn name(self, _style: NameStyle) -> &'static str {
        match self {
            EvasionLabel::Implicit => "Implicit",
            EvasionLabel::General => "General",
            EvasionLabel::PartialHalfAnswer => "Partial/half-answer",
            EvasionLabel::Dodging => "Dodging",
            EvasionLabel::Deflection => "Deflection",
            EvasionLabel::Explicit => "Explicit",
            EvasionLabel::DecliningToAnswer => "Declining to answer",
            EvasionLabel::ClaimsIgnorance => "Claims ignorance",
            EvasionLabel::Clarification => "Clarification",
        }
    }

    pub fn parent(self) -> ClarityLabel {
        parent_of(self)
    }
}

/// Parent Clarity class of an Evasion class.
pub fn parent_of(label: EvasionLabel) -> ClarityLabel {
    use EvasionLabel::*;
    match label {
        Implicit | General | PartialHalfAnswer | Dodging | Deflection => ClarityLabel::Ambivalent,
        Explicit => ClarityLabel::ClearReply,
        DecliningToAnswer | ClaimsIgnorance | Clarification => ClarityLabel::ClearNonReply,
    }
}

/// A label at either level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Clarity(ClarityLabel),
    Evasion(EvasionLabel),
}

impl Label {
    pub fn level(self) -> Level {
        match self {
            Label::Clarity(_) => Level::Clarity,
            Label::Evasion(_) => Level::Evasion,
        }
    }

    pub fn code(self) -> usize {
        match self {
            Label::Clarity(c) => c.code(),
            Label::Evasion(e) => e.code(),
        }
    }

    pub fn from_code(level: Level, code: usize) -> Option<Self> {
        match level {
            Level::Clarity => ClarityLabel::from_code(code).map(Label::Clarity),
            Level::Evasion => EvasionLabel::from_code(code).map(Label::Evasion),
        }
    }

    pub fn canonical_name(self, style: NameStyle) -> &'static str {
        canonical_name(self, style)
    }

    pub fn as_clarity(self) -> Option<ClarityLabel> {
        match self {
            Label::Clarity(c) => Some(c),
            Label::Evasion(_) => None,
        }
    }

    pub fn as_evasion(self) -> Option<EvasionLabel> {
        match self {
            Label::Evasion(e) => Some(e),
            Label::Clarity(_) => None,
        }
    }

    /// Projects onto the Clarity level (Evasion labels map to their parent).
    pub fn to_clarity(self) -> ClarityLabel {
        match self {
            Label::Clarity(c) => c,
            Label::Evasion(e) => e.parent(),
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Label::Clarity(ClarityLabel::ClearReply) => &["clear reply"],
            Label::Clarity(ClarityLabel::Ambivalent) => &["ambivalent", "ambivalent reply"],
            Label::Clarity(ClarityLabel::ClearNonReply) => &["clear non-reply"],
            Label::Evasion(EvasionLabel::Implicit) => &["implicit"],
            Label::Evasion(EvasionLabel::General) => &["general"],
            Label::Evasion(EvasionLabel::PartialHalfAnswer) => &["partial/half-answer", "partial"],
            Label::Evasion(EvasionLabel::Dodging) => &["dodging"],
            Label::Evasion(EvasionLabel::Deflection) => &["deflection"],
            Label::Evasion(EvasionLabel::Explicit) => &["explicit"],
            Label::Evasion(EvasionLabel::DecliningToAnswer) => &["declining to answer"],
            Label::Evasion(EvasionLabel::ClaimsIgnorance) => &["claims ignorance"],
            Label::Evasion(EvasionLabel::Clarification) => &["clarification"],
        }
    }
}

impl From<ClarityLabel> for Label {
    fn from(c: ClarityLabel) -> Self {
        Label::Clarity(c)
    }
}

impl From<EvasionLabel> for Label {
    fn from(e: EvasionLabel) -> Self {
        Label::Evasion(e)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name(NameStyle::Short))
    }
}

impl fmt::Display for ClarityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name(NameStyle::Short))
    }
}

impl fmt::Display for EvasionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name(NameStyle::Short))
    }
}

pub fn canonical_name(label: Label, style: NameStyle) -> &'static str {
    match label {
        Label::Clarity(c) => c.name(style),
        Label::Evasion(e) => e.name(style),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no {level} label found in `{raw}`")]
    NoMatch { raw: String, level: Level },
    #[error("ambiguous {level} label in `{raw}`: {candidates:?}")]
    AmbiguousMatch {
        raw: String,
        level: Level,
        candidates: Vec<Label>,
    },
}

/// Result of [`parse_label`]. `fuzzy` is set when the label was recovered
/// from a longer string rather than matched exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedLabel {
    pub label: Label,
    pub fuzzy: bool,
}

fn normalize(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    lowered
        .trim_end_matches(['.', '!', '?', ':', ';'])
        .trim_end()
        .to_string()
}

/// Recovers a label from free-form model output.
///
/// Matching order: trim, case-fold, strip trailing `. ! ? : ;`, exact match
/// against any accepted spelling, then a unique-substring fallback that sets
/// the `fuzzy` flag.
pub fn parse_label(raw: &str, level: Level) -> Result<ParsedLabel, ParseError> {
    let norm = normalize(raw);
    let labels = level.labels();

    if let Some(&label) = labels.iter().find(|l| l.aliases().contains(&norm.as_str())) {
        return Ok(ParsedLabel { label, fuzzy: false });
    }

    let found: Vec<Label> = labels
        .into_iter()
        .filter(|l| l.aliases().iter().any(|a| norm.contains(a)))
        .collect();
    match found.as_slice() {
        [] => Err(ParseError::NoMatch {
            raw: raw.to_string(),
            level,
        }),
        [label] => Ok(ParsedLabel {
            label: *label,
            fuzzy: true,
        }),
        _ => Err(ParseError::AmbiguousMatch {
            raw: raw.to_string(),
            level,
            candidates: found,
        }),
    }
}

/// Exact-only parse used for dataset files, where fuzzy recovery would hide
/// corrupted records.
pub fn parse_exact(raw: &str, level: Level) -> Option<Label> {
    match parse_label(raw, level) {
        Ok(ParsedLabel { label, fuzzy: false }) => Some(label),
        _ => None,
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.canonical_name(NameStyle::Short))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_exact(&s, Level::Clarity)
            .or_else(|| parse_exact(&s, Level::Evasion))
            .ok_or_else(|| serde::de::Error::custom(format!("unknown label `{s}`")))
    }
}

impl Serialize for ClarityLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name(NameStyle::Short))
    }
}

impl<'de> Deserialize<'de> for ClarityLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_exact(&s, Level::Clarity)
            .and_then(Label::as_clarity)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown clarity label `{s}`")))
    }
}

impl Serialize for EvasionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name(NameStyle::Short))
    }
}

impl<'de> Deserialize<'de> for EvasionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_exact(&s, Level::Evasion)
            .and_then(Label::as_evasion)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown evasion label `{s}`")))
    }
}

/// Label definitions as they appear in the classification prompts.
///
/// `definitions` holds the one-line definition for every label (Clarity
/// lines from the base template, Evasion lines from the nine-way template);
/// `subcategory_blocks` holds the expanded Clarity definitions that embed
/// the Evasion descriptions, in the order they are presented.
#[derive(Debug, Clone)]
pub struct LabelTaxonomy {
    definitions: Vec<(Label, &'static str)>,
    subcategory_blocks: Vec<(ClarityLabel, String)>,
}

impl Default for LabelTaxonomy {
    fn default() -> Self {
        Self::standard()
    }
}

impl LabelTaxonomy {
    pub fn standard() -> Self {
        use ClarityLabel as C;
        use EvasionLabel as E;
        let definitions = vec![
            (C::ClearReply.into(), "the answer directly supplies what was asked."),
            (
                C::Ambivalent.into(),
                "the answer references the topic but is indirect, vague, partial, or hedged.",
            ),
            (
                C::ClearNonReply.into(),
                "the answer refuses, claims not to know, asks for clarification, or ignores the question.",
            ),
            (
                E::Implicit.into(),
                "The information requested is given, but without being explicitly stated (not in the expected form).",
            ),
            (
                E::General.into(),
                "The information provided is too general or lacks the requested specificity.",
            ),
            (
                E::PartialHalfAnswer.into(),
                "Offers only a specific component of the requested information.",
            ),
            (E::Dodging.into(), "Ignoring the question altogether."),
            (
                E::Deflection.into(),
                "Starts on topic but shifts the focus and makes a different point than what is asked.",
            ),
            (
                E::Explicit.into(),
                "The information requested is explicitly stated (in the requested form).",
            ),
            (
                E::DecliningToAnswer.into(),
                "Acknowledges the question but directly or indirectly refuses to answer.",
            ),
            (
                E::ClaimsIgnorance.into(),
                "The answerer claims or admits not to know the answer.",
            ),
            (
                E::Clarification.into(),
                "Does not provide the requested information and asks for clarification.",
            ),
        ];

        let ambivalent = "Ambivalent Reply\n\
            Definition: Where a response is given in the form of a valid answer but allows for multiple interpretations.\n\
            Sub-categories:\n\
            - Implicit: The information requested is given, but without being explicitly stated (not in the expected form)\n\
            - General: The information provided is too general/lacks the requested specificity\n\
            - Partial: Offers only a specific component of the requested information\n\
            - Dodging: Ignoring the question altogether\n\
            - Deflection: Starts on topic but shifts the focus and makes a different point than what is asked";
        let clear_reply = "Clear Reply\n\
            Definition: Containing replies that admit only one interpretation.\n\
            Sub-category:\n\
            - Explicit: The information requested is explicitly stated (in the requested form)";
        let clear_non_reply = "Clear Non-Reply\n\
            Definition: Containing responses where the answerer openly refuses to share information.\n\
            Sub-categories:\n\
            - Declining to answer: Acknowledge the question but directly or indirectly refusing to answer at the moment\n\
            - Claims ignorance: The answerer claims/admits not to know the answer themselves\n\
            - Clarification: Does not provide the requested information and asks for clarification";

        LabelTaxonomy {
            definitions,
            subcategory_blocks: vec![
                (C::Ambivalent, ambivalent.to_string()),
                (C::ClearReply, clear_reply.to_string()),
                (C::ClearNonReply, clear_non_reply.to_string()),
            ],
        }
    }

    pub fn parent_of(&self, label: EvasionLabel) -> ClarityLabel {
        parent_of(label)
    }

    pub fn definition(&self, label: Label) -> &str {
        self.definitions
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, d)| *d)
            .unwrap_or_default()
    }

    /// `- <Name>: <definition>` lines for every label at `level`.
    pub fn definition_lines(&self, level: Level) -> Vec<String> {
        level
            .labels()
            .into_iter()
            .map(|l| format!("- {}: {}", l.canonical_name(NameStyle::Prompt), self.definition(l)))
            .collect()
    }

    /// Expanded Clarity definitions, in presentation order.
    pub fn subcategory_blocks(&self) -> &[(ClarityLabel, String)] {
        &self.subcategory_blocks
    }

    pub fn subcategory_text(&self, label: ClarityLabel) -> &str {
        self.subcategory_blocks
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, t)| t.as_str())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_noisy_matches() {
        let p = parse_label("Clear Reply", Level::Clarity).unwrap();
        assert_eq!(p.label, ClarityLabel::ClearReply.into());
        assert!(!p.fuzzy);

        let p = parse_label("  ambivalent reply.\n", Level::Clarity).unwrap();
        assert_eq!(p.label, ClarityLabel::Ambivalent.into());
        assert!(!p.fuzzy);

        let p = parse_label("I would say Clear Non-Reply here", Level::Clarity).unwrap();
        assert_eq!(p.label, ClarityLabel::ClearNonReply.into());
        assert!(p.fuzzy);
    }

    #[test]
    fn no_match_and_ambiguous() {
        assert!(matches!(
            parse_label("maybe", Level::Clarity),
            Err(ParseError::NoMatch { .. })
        ));
        assert!(matches!(
            parse_label("either Clear Reply or Ambivalent", Level::Clarity),
            Err(ParseError::AmbiguousMatch { .. })
        ));
        assert!(matches!(
            parse_label("", Level::Evasion),
            Err(ParseError::NoMatch { .. })
        ));
    }

    #[test]
    fn partial_spellings() {
        for raw in ["Partial", "partial/half-answer", "Partial/half-answer."] {
            let p = parse_label(raw, Level::Evasion).unwrap();
            assert_eq!(p.label, EvasionLabel::PartialHalfAnswer.into());
            assert!(!p.fuzzy, "{raw}");
        }
    }

    #[test]
    fn stacked_trailing_punctuation() {
        let p = parse_label("Dodging?!;", Level::Evasion).unwrap();
        assert_eq!(p.label, EvasionLabel::Dodging.into());
        assert!(!p.fuzzy);
    }

    #[test]
    fn parents() {
        assert_eq!(parent_of(EvasionLabel::Explicit), ClarityLabel::ClearReply);
        assert_eq!(parent_of(EvasionLabel::Dodging), ClarityLabel::Ambivalent);
        assert_eq!(parent_of(EvasionLabel::Clarification), ClarityLabel::ClearNonReply);
        let sizes: Vec<usize> = [
            ClarityLabel::Ambivalent,
            ClarityLabel::ClearReply,
            ClarityLabel::ClearNonReply,
        ]
        .iter()
        .map(|c| c.children().len())
        .collect();
        assert_eq!(sizes, vec![5, 1, 3]);
    }

    #[test]
    fn names() {
        assert_eq!(
            canonical_name(ClarityLabel::Ambivalent.into(), NameStyle::Prompt),
            "Ambivalent Reply"
        );
        assert_eq!(
            canonical_name(ClarityLabel::ClearNonReply.into(), NameStyle::Short),
            "Clear Non-Reply"
        );
        assert_eq!(
            canonical_name(EvasionLabel::Explicit.into(), NameStyle::Prompt),
            "Explicit"
        );
    }

    #[test]
    fn codes_are_row_major() {
        for level in [Level::Clarity, Level::Evasion] {
            for (i, l) in level.labels().into_iter().enumerate() {
                assert_eq!(l.code(), i);
                assert_eq!(Label::from_code(level, i), Some(l));
            }
        }
        assert_eq!(Label::from_code(Level::Clarity, 3), None);
    }

    #[test]
    fn round_trip_all_names() {
        for level in [Level::Clarity, Level::Evasion] {
            for l in level.labels() {
                for style in [NameStyle::Short, NameStyle::Prompt] {
                    let p = parse_label(l.canonical_name(style), level).unwrap();
                    assert_eq!(p.label, l);
                    assert!(!p.fuzzy);
                }
            }
        }
    }

    #[test]
    fn serde_uses_short_names() {
        let json = serde_json::to_string(&ClarityLabel::Ambivalent).unwrap();
        assert_eq!(json, "\"Ambivalent\"");
        let back: ClarityLabel = serde_json::from_str("\"Ambivalent Reply\"").unwrap();
        assert_eq!(back, ClarityLabel::Ambivalent);
        assert!(serde_json::from_str::<EvasionLabel>("\"dodge\"").is_err());
    }

    #[test]
    fn definition_lines_match_templates() {
        let t = LabelTaxonomy::standard();
        let lines = t.definition_lines(Level::Clarity);
        assert_eq!(lines[0], "- Clear Reply: the answer directly supplies what was asked.");
        assert_eq!(lines.len(), 3);
        let lines = t.definition_lines(Level::Evasion);
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[3], "- Dodging: Ignoring the question altogether.");
        assert!(t
            .subcategory_text(ClarityLabel::ClearReply)
            .contains("Sub-category:\n- Explicit"));
    }
}
