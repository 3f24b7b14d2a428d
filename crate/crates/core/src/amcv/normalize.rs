//! Canonical answer forms. Two answers are equal iff their canonical strings are.

use std::sync::LazyLock;

use regex::Regex;

use super::AnswerType;

/// Canonical value for a multiple-choice answer with no recognizable option.
pub const UNPARSEABLE: &str = "UNPARSEABLE";

static FINAL_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)final\s+answer\s*(?:is\s*)?[:：]?[ \t]*([^\n]*)").unwrap());
static ANSWER_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\banswer\s*[:：][ \t]*([^\n]*)").unwrap());
static BARE_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([A-Ea-e])\)?[.):]?$").unwrap());
static LEADING_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([A-E])[.):]\)?\s+\S").unwrap());
static LEADING_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?)(\d{1,3}(?:,\d{3})+|\d+)(?:\.(\d+))?(.*)$").unwrap());

/// Text after the last answer marker, or the whole input when there is none.
fn extract_marked(raw: &str) -> &str {
    for re in [&*FINAL_MARKER, &*ANSWER_MARKER] {
        if let Some(cap) = re.captures_iter(raw).last() {
            let m = cap.get(1).unwrap().as_str();
            if !m.trim().is_empty() {
                return m;
            }
        }
    }
    raw
}

fn strip_terminal_punctuation(s: &str) -> &str {
    s.trim_end_matches(|c: char| c.is_whitespace() || ['.', ',', '!', '?', ';', ':', '。'].contains(&c))
}

fn option_letter(index: usize) -> String {
    ((b'A' + index as u8) as char).to_string()
}

fn normalize_choice(raw: &str, choices: Option<&[String]>) -> String {
    let n = choices.map_or(5, |c| c.len().min(5));
    let text = extract_marked(raw).trim();
    let letter = BARE_LETTER
        .captures(text)
        .or_else(|| LEADING_LETTER.captures(text))
        .map(|c| c[1].to_ascii_uppercase());
    if let Some(letter) = letter {
        let idx = (letter.as_bytes()[0] - b'A') as usize;
        return if idx < n { letter } else { UNPARSEABLE.to_string() };
    }
    if let Some(choices) = choices {
        let wanted = strip_terminal_punctuation(text).to_lowercase();
        let hits: Vec<usize> = choices
            .iter()
            .enumerate()
            .filter(|(_, c)| strip_terminal_punctuation(c.trim()).to_lowercase() == wanted)
            .map(|(i, _)| i)
            .collect();
        if let [only] = hits[..] {
            if only < n {
                return option_letter(only);
            }
        }
    }
    UNPARSEABLE.to_string()
}

fn canonical_number(s: &str) -> String {
    let Some(cap) = LEADING_NUMBER.captures(s) else {
        return s.to_string();
    };
    let rest = &cap[4];
    if rest.starts_with(|c: char| c.is_ascii_digit() || c == ',' || c == '.') {
        return s.to_string();
    }
    let int: String = cap[2].chars().filter(|&c| c != ',').collect();
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac = cap.get(3).map_or("", |m| m.as_str().trim_end_matches('0'));
    let sign = if &cap[1] == "-" && (int != "0" || !frac.is_empty()) { "-" } else { "" };
    let mut out = format!("{sign}{int}");
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    out.push_str(rest);
    out
}

fn normalize_text(raw: &str) -> String {
    let text = extract_marked(raw).to_lowercase();
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = strip_terminal_punctuation(&collapsed);
    while let Some(rest) = ["a ", "an ", "the "].iter().find_map(|a| s.strip_prefix(a)) {
        s = rest.trim_start();
    }
    canonical_number(s)
}

pub fn normalize_answer(raw: &str, kind: AnswerType, choices: Option<&[String]>) -> String {
    match kind {
        AnswerType::MultipleChoice => normalize_choice(raw, choices),
        AnswerType::FillInBlank | AnswerType::ShortAnswer => normalize_text(raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abcd() -> Vec<String> {
        ["Red", "Green", "Blue", "Yellow"].iter().map(|s| s.to_string()).collect()
    }

    fn mc(raw: &str) -> String {
        normalize_answer(raw, AnswerType::MultipleChoice, Some(&abcd()))
    }

    #[test]
    fn choice_letter_patterns() {
        for raw in ["B", "(B)", "B.", "Answer: B.", "answer: (b)", "b", "B) Green", "The tallest is...\nFinal answer: B"] {
            assert_eq!(mc(raw), "B", "{raw:?}");
        }
    }

    #[test]
    fn choice_text_maps_to_letter() {
        assert_eq!(mc("green"), "B");
        assert_eq!(mc("Answer: Yellow."), "D");
    }

    #[test]
    fn unparseable_choices() {
        assert_eq!(mc("I am not sure"), UNPARSEABLE);
        assert_eq!(mc("E"), UNPARSEABLE, "E is outside a four-option list");
        assert_eq!(mc(""), UNPARSEABLE);
        let dup = vec!["x".to_string(), "X".to_string()];
        assert_eq!(normalize_answer("x", AnswerType::MultipleChoice, Some(&dup)), UNPARSEABLE);
    }

    #[test]
    fn last_marker_wins() {
        assert_eq!(mc("Answer: A\nOn reflection... Final answer: C"), "C");
    }

    #[test]
    fn free_text_chain() {
        assert_eq!(normalize_answer("  The Photosynthesis. ", AnswerType::ShortAnswer, None), "photosynthesis");
        assert_eq!(normalize_answer("Answer:  an   Apple tree!", AnswerType::ShortAnswer, None), "apple tree");
        assert_eq!(normalize_answer("Yes", AnswerType::ShortAnswer, None), "yes");
    }

    #[test]
    fn numeric_canonicalization() {
        let fill = |s| normalize_answer(s, AnswerType::FillInBlank, None);
        assert_eq!(fill("1,250.0"), "1250");
        assert_eq!(fill("5.0"), "5");
        assert_eq!(fill("5.50 kg"), "5.5 kg");
        assert_eq!(fill("007"), "7");
        assert_eq!(fill("-0.0"), "0");
        assert_eq!(fill("Answer: 70"), "70");
        assert_eq!(fill("1,2345"), "1,2345", "malformed grouping left alone");
        assert_eq!(fill("3.14159"), "3.14159");
    }

    proptest! {
        #[test]
        fn free_text_normalization_is_idempotent(s in "[ A-Za-z0-9,.!?]{0,24}") {
            let once = normalize_answer(&s, AnswerType::ShortAnswer, None);
            prop_assert_eq!(normalize_answer(&once, AnswerType::ShortAnswer, None), once.clone());
        }

        #[test]
        fn choice_output_is_letter_or_sentinel(s in ".{0,20}") {
            let out = mc(&s);
            prop_assert!(out == UNPARSEABLE || ["A", "B", "C", "D"].contains(&out.as_str()));
        }
    }
}
