//! Rule pipeline that maps free-form model output onto a label.
//!
//! Rules run in declared order and the first one that matches decides. For
//! quiz-style instances, option `A` maps to the first non-abstain label,
//! `B` to the second, and so on.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AnnotateError;
use crate::dataset::{Instance, LabelSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureMap {
    /// The capture is an option letter.
    OptionLetter,
    /// The capture is a label, compared case-insensitively.
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizationRule {
    ExactLabelMatch,
    OptionLetter,
    CaseInsensitiveLabelMatch,
    OptionTextSubstring,
    RegexCapture { pattern: String, map_as: CaptureMap },
    AbstainPhrase {
        phrases: Vec<String>,
        /// Abstain label to emit; defaults to the first one in the label space.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

/// The shipped rule order: most specific first.
pub fn default_rules() -> Vec<NormalizationRule> {
    vec![
        NormalizationRule::ExactLabelMatch,
        NormalizationRule::OptionLetter,
        NormalizationRule::CaseInsensitiveLabelMatch,
        NormalizationRule::OptionTextSubstring,
        NormalizationRule::RegexCapture { pattern: r"\(([A-Z])\)".into(), map_as: CaptureMap::OptionLetter },
        NormalizationRule::RegexCapture {
            pattern: r#"(?i)\banswer\s*(?:is)?\s*[:：]?\s*["'*]*([A-Za-z0-9_-]+)"#.into(),
            map_as: CaptureMap::Label,
        },
        NormalizationRule::AbstainPhrase {
            phrases: vec![
                "unsure".into(),
                "not sure".into(),
                "cannot determine".into(),
                "can't determine".into(),
                "cannot be determined".into(),
            ],
            label: None,
        },
    ]
}

#[derive(Debug, Clone)]
enum Compiled {
    Exact,
    Letter,
    CaseInsensitive,
    OptionText,
    Regex(Regex, CaptureMap),
    Abstain(Vec<String>, Option<String>),
}

/// Rules with their regexes compiled, ready to apply.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<Compiled>,
}

impl RuleSet {
    pub fn compile(rules: &[NormalizationRule]) -> Result<Self, AnnotateError> {
        if rules.is_empty() {
            return Err(AnnotateError::Profile("rule set is empty".into()));
        }
        let rules = rules
            .iter()
            .map(|r| {
                Ok(match r {
                    NormalizationRule::ExactLabelMatch => Compiled::Exact,
                    NormalizationRule::OptionLetter => Compiled::Letter,
                    NormalizationRule::CaseInsensitiveLabelMatch => Compiled::CaseInsensitive,
                    NormalizationRule::OptionTextSubstring => Compiled::OptionText,
                    NormalizationRule::RegexCapture { pattern, map_as } => {
                        let re = Regex::new(pattern)
                            .map_err(|e| AnnotateError::Profile(format!("bad regex `{pattern}`: {e}")))?;
                        if re.captures_len() < 2 {
                            return Err(AnnotateError::Profile(format!("regex `{pattern}` has no capture group")));
                        }
                        Compiled::Regex(re, *map_as)
                    }
                    NormalizationRule::AbstainPhrase { phrases, label } => {
                        Compiled::Abstain(phrases.iter().map(|p| p.to_lowercase()).collect(), label.clone())
                    }
                })
            })
            .collect::<Result<_, AnnotateError>>()?;
        Ok(RuleSet { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// A normalized output: the label and the index of the rule that produced
/// it, or neither when nothing matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub label: Option<String>,
    pub rule: Option<usize>,
}

fn option_label(letter: &str, space: &LabelSpace, instance: &Instance) -> Option<String> {
    let mut chars = letter.chars();
    let c = chars.next()?.to_ascii_uppercase();
    if chars.next().is_some() || !c.is_ascii_uppercase() {
        return None;
    }
    let idx = (c as u8 - b'A') as usize;
    let options = instance.options.as_ref()?;
    if idx >= options.len() {
        return None;
    }
    space.classes().get(idx).map(|s| s.to_string())
}

fn strip_punct(s: &str) -> &str {
    s.trim().trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | '.' | ':' | '!' | '"' | '\'' | '*') || c.is_whitespace())
}

fn label_ci(candidate: &str, space: &LabelSpace) -> Option<String> {
    let c = strip_punct(candidate).to_lowercase();
    space.labels().iter().find(|l| l.to_lowercase() == c).cloned()
}

fn apply(rule: &Compiled, raw: &str, space: &LabelSpace, instance: &Instance) -> Option<String> {
    match rule {
        Compiled::Exact => {
            let t = raw.trim();
            space.labels().iter().find(|l| l.as_str() == t).cloned()
        }
        Compiled::Letter => option_label(strip_punct(raw), space, instance),
        Compiled::CaseInsensitive => label_ci(raw, space),
        Compiled::OptionText => {
            let options = instance.options.as_ref()?;
            let lower = raw.to_lowercase();
            let hits: Vec<usize> = (0..options.len())
                .filter(|&i| !options[i].is_empty() && lower.contains(&options[i].to_lowercase()))
                .collect();
            // An option that is a substring of another hit does not count.
            let maximal: Vec<usize> = hits
                .iter()
                .copied()
                .filter(|&i| {
                    let me = options[i].to_lowercase();
                    !hits.iter().any(|&j| j != i && options[j].len() > options[i].len() && options[j].to_lowercase().contains(&me))
                })
                .collect();
            match maximal.as_slice() {
                [only] => space.classes().get(*only).map(|s| s.to_string()),
                _ => None,
            }
        }
        Compiled::Regex(re, map) => {
            let cap = re.captures(raw)?.get(1)?.as_str();
            match map {
                CaptureMap::OptionLetter => option_label(cap, space, instance),
                CaptureMap::Label => label_ci(cap, space),
            }
        }
        Compiled::Abstain(phrases, label) => {
            let lower = raw.to_lowercase();
            if !phrases.iter().any(|p| lower.contains(p.as_str())) {
                return None;
            }
            match label {
                Some(l) if space.is_abstain(l) => Some(l.clone()),
                Some(_) => None,
                None => space.abstain_labels().first().cloned(),
            }
        }
    }
}

/// Maps raw model output onto a label of `space`. Pure: the same inputs
/// always give the same answer.
pub fn normalize_output(raw: &str, space: &LabelSpace, instance: &Instance, rules: &RuleSet) -> Normalized {
    for (idx, rule) in rules.rules.iter().enumerate() {
        if let Some(label) = apply(rule, raw, space, instance) {
            return Normalized { label: Some(label), rule: Some(idx) };
        }
    }
    Normalized { label: None, rule: None }
}
