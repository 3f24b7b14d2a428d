use serde::{Deserialize, Serialize};

use super::{AmcvError, AnswerSet, AnswerType};
use crate::dataset::QuestionRecord;

pub const QUESTION_TEMPLATE_ID: &str = "rdr-question-v1";
pub const CORRECTION_TEMPLATE_ID: &str = "rdr-self-correct-v1";

const DEFAULT_QUESTION_TEMPLATE: &str = "{question}\n{choices}{format}";

/// Initial per-view prompt. `{question}`, `{choices}` and `{format}` are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            id: QUESTION_TEMPLATE_ID.to_string(),
            text: DEFAULT_QUESTION_TEMPLATE.to_string(),
        }
    }
}

fn choices_block(choices: Option<&[String]>) -> String {
    match choices {
        Some(cs) if !cs.is_empty() => {
            let mut s = String::from("Options:\n");
            for (i, c) in cs.iter().enumerate() {
                s.push_str(&format!("{}. {}\n", (b'A' + i as u8) as char, c));
            }
            s
        }
        _ => String::new(),
    }
}

fn format_instruction(kind: AnswerType) -> &'static str {
    match kind {
        AnswerType::MultipleChoice => {
            "Answer with the letter of the correct option. End your response with a line of the form \"Answer: <letter>\"."
        }
        AnswerType::FillInBlank => {
            "Answer with the missing value only. End your response with a line of the form \"Answer: <value>\"."
        }
        AnswerType::ShortAnswer => {
            "Answer briefly. End your response with a line of the form \"Answer: <answer>\"."
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, q: &QuestionRecord) -> String {
        self.text
            .replace("{question}", &q.question_text)
            .replace("{choices}", &choices_block(q.choices.as_deref()))
            .replace("{format}", format_instruction(q.answer_type))
    }
}

/// Reconciliation prompt listing every view's answer with its provenance.
/// Fails when the answers agree, since no correction is warranted.
pub fn build_self_correction_prompt(q: &QuestionRecord, answers: &AnswerSet) -> Result<String, AmcvError> {
    let first = answers.answers.first().map(|a| a.canonical.as_str());
    if answers.answers.iter().all(|a| Some(a.canonical.as_str()) == first) {
        return Err(AmcvError::Precondition(format!(
            "{}: answers agree, nothing to reconcile",
            q.id
        )));
    }
    let mut s = format!(
        "You have provided different answers for the question \"{}\" based on slightly varied visual presentations of the diagram.\n",
        q.question_text
    );
    s.push_str(&choices_block(q.choices.as_deref()));
    s.push_str("Your responses were:\n");
    for a in &answers.answers {
        let origin = match (a.kind, a.intensity) {
            (Some(k), Some(l)) => format!("{k}, {l}"),
            _ => "original, unperturbed diagram".to_string(),
        };
        s.push_str(&format!("A_{} ({origin}): {}\n", a.view_index, a.canonical));
    }
    s.push_str(
        "Please re-examine the diagram and your previous answers, identify the most consistent and likely correct answer among them, and explain your reasoning for the final choice.\n",
    );
    s.push_str("Finish with a last line of the form \"Final answer: <answer>\".");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amcv::ViewAnswer;
    use crate::dataset::Domain;
    use crate::perturb::{IntensityLevel, PerturbationKind};
    use crate::Fraction;

    fn question() -> QuestionRecord {
        QuestionRecord {
            id: "q7".into(),
            image_path: "x.png".into(),
            question_text: "Which bar is tallest?".into(),
            answer_type: AnswerType::MultipleChoice,
            choices: Some(vec!["Bar A".into(), "Bar B".into()]),
            ground_truth: "A".into(),
            domain: Domain::Physics,
            subtopic: "s".into(),
            render_schema: None,
        }
    }

    fn set(canon: &[&str]) -> AnswerSet {
        let kinds = PerturbationKind::ALL;
        AnswerSet {
            question_id: "q7".into(),
            answers: canon
                .iter()
                .enumerate()
                .map(|(i, c)| ViewAnswer {
                    view_index: i as u32,
                    kind: (i > 0).then(|| kinds[(i - 1) % 5]),
                    intensity: (i > 0).then_some(IntensityLevel::Medium),
                    digest: String::new(),
                    raw: c.to_string(),
                    canonical: c.to_string(),
                    latency_ms: 0,
                })
                .collect(),
            c_q: Fraction::from_integer(1),
            a_mode: canon[0].to_string(),
            triggered_correction: false,
            a_final: canon[0].to_string(),
            extra_calls: 0,
            correction: None,
        }
    }

    #[test]
    fn question_prompt_lists_options() {
        let p = PromptTemplate::default().render(&question());
        assert!(p.starts_with("Which bar is tallest?\nOptions:\nA. Bar A\nB. Bar B\n"));
        assert!(p.ends_with("\"Answer: <letter>\"."));
    }

    #[test]
    fn two_distinct_answers_listed_with_provenance() {
        let p = build_self_correction_prompt(&question(), &set(&["A", "B"])).unwrap();
        assert!(p.contains("A_0 (original, unperturbed diagram): A\n"));
        assert!(p.contains("A_1 (gaussian_noise, medium): B\n"));
        assert!(p.contains("identify the most consistent and likely correct answer among them"));
        assert!(p.ends_with("\"Final answer: <answer>\"."));
    }

    #[test]
    fn eleven_answers_all_enumerated() {
        let canon = ["A", "A", "B", "A", "B", "A", "A", "B", "A", "A", "B"];
        let p = build_self_correction_prompt(&question(), &set(&canon)).unwrap();
        for i in 0..11 {
            assert!(p.contains(&format!("A_{i} (")), "missing A_{i}");
        }
        assert_eq!(p.matches("unperturbed").count(), 1);
    }

    #[test]
    fn agreeing_answers_violate_precondition() {
        assert!(matches!(
            build_self_correction_prompt(&question(), &set(&["A", "A", "A"])),
            Err(AmcvError::Precondition(_))
        ));
    }
}
