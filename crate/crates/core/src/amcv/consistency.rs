use std::collections::HashMap;

use crate::Fraction;

/// Modal answer and its share of the list.
///
/// Ties go to the value that appears first, i.e. the lowest view index.
/// Returns `None` for an empty list.
pub fn consistency_score(canon_answers: &[String]) -> Option<(Fraction, String)> {
    if canon_answers.is_empty() {
        return None;
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, a) in canon_answers.iter().enumerate() {
        counts.entry(a.as_str()).or_insert((0, i)).0 += 1;
    }
    let (mode, (count, _)) = counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("non-empty");
    Some((
        Fraction::new(count as i64, canon_answers.len() as i64),
        mode.to_string(),
    ))
}
