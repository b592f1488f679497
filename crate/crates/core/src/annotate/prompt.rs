use std::sync::LazyLock;

use regex::Regex;

use super::{AnnotateError, LlmWorkerProfile};
use crate::dataset::{Instance, LabelSpace};

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());

/// Lettered option list, one `A. <option>` line per option.
pub fn render_options(options: &[String]) -> Result<String, AnnotateError> {
    if options.len() > 26 {
        return Err(AnnotateError::Template(format!("{} options exceed the A-Z letter range", options.len())));
    }
    Ok(options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {o}", (b'A' + i as u8) as char))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Substitutes `{text}`, `{options}` and `{labels}` in the profile's
/// template. Other text in braces is left alone only if it is not an
/// identifier; `{foo}` is an error.
pub fn render_prompt(profile: &LlmWorkerProfile, instance: &Instance, space: &LabelSpace) -> Result<String, AnnotateError> {
    render_template(&profile.prompt_template, instance, space)
}

pub(crate) fn render_template(template: &str, instance: &Instance, space: &LabelSpace) -> Result<String, AnnotateError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut last = 0;
    for cap in PLACEHOLDER.captures_iter(template) {
        let whole = cap.get(0).unwrap();
        out.push_str(&template[last..whole.start()]);
        last = whole.end();
        let value = match &cap[1] {
            "text" => instance
                .text
                .clone()
                .ok_or_else(|| AnnotateError::Template(format!("instance `{}` has no text for {{text}}", instance.id)))?,
            "options" => match &instance.options {
                Some(opts) if !opts.is_empty() => render_options(opts)?,
                _ => {
                    return Err(AnnotateError::Template(format!(
                        "instance `{}` has no options for {{options}}",
                        instance.id
                    )))
                }
            },
            "labels" => {
                let mut labels: Vec<&str> = space.classes();
                labels.extend(space.abstain_labels().iter().map(String::as_str));
                labels.join(", ")
            }
            other => return Err(AnnotateError::Template(format!("unknown placeholder {{{other}}}"))),
        };
        out.push_str(&value);
    }
    out.push_str(&template[last..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rte_space() -> LabelSpace {
        LabelSpace::new(["0", "1", "unsure"], ["unsure"]).unwrap()
    }

    #[test]
    fn substitutes_text_and_labels() {
        let inst = Instance {
            text: Some("Premise: A dog runs.\nHypothesis: An animal moves.".into()),
            ..Instance::new("p1")
        };
        let out = render_template("Q: {text}\nAnswer with one of: {labels}", &inst, &rte_space()).unwrap();
        assert_eq!(out, "Q: Premise: A dog runs.\nHypothesis: An animal moves.\nAnswer with one of: 0, 1, unsure");
        assert!(!out.contains('{'));
    }

    #[test]
    fn lettered_options() {
        let space = LabelSpace::new(["a", "b", "c", "d", "e"], Vec::<String>::new()).unwrap();
        let inst = Instance {
            text: Some("Pick one".into()),
            options: Some(["red", "green", "blue", "cyan", "pink"].map(String::from).to_vec()),
            ..Instance::new("q")
        };
        let out = render_template("{text}\n{options}", &inst, &space).unwrap();
        for (l, o) in ["A. red", "B. green", "C. blue", "D. cyan", "E. pink"].iter().zip(out.lines().skip(1)) {
            assert_eq!(l, &o);
        }
        assert_eq!(out.lines().count(), 6);
    }

    #[test]
    fn missing_options_is_an_error() {
        let inst = Instance { text: Some("t".into()), ..Instance::new("q") };
        assert!(matches!(render_template("{text} {options}", &inst, &rte_space()), Err(AnnotateError::Template(_))));
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        let inst = Instance { text: Some("t".into()), ..Instance::new("q") };
        assert!(render_template("{text} {answer}", &inst, &rte_space()).is_err());
        assert_eq!(render_template("{text} {\"a\": 1}", &inst, &rte_space()).unwrap(), "t {\"a\": 1}");
    }
}
