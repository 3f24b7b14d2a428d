use serde::{Deserialize, Serialize};

use super::{IntensityLevel, PerturbError, PerturbationKind, PerturbationSpec};
use crate::rng::derive_stream;

/// Fewer views than kinds cannot cover every kind.
pub const MIN_VIEWS: u32 = 5;
/// The kind x intensity grid has 15 cells.
pub const MAX_VIEWS: u32 = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewPlan {
    pub question_id: String,
    pub master_seed: u64,
    /// View `i` (1-based) is `specs[i - 1]`.
    pub specs: Vec<PerturbationSpec>,
}

impl ViewPlan {
    pub fn n_views(&self) -> usize {
        self.specs.len()
    }
}

/// Coverage-first plan: one cell per kind (kinds in shuffled order, each
/// with a uniformly drawn intensity), then the remaining views drawn without
/// replacement from the unused cells. The plan stream is the question's
/// view-0 lineage, which never drives a kernel.
pub fn build_view_plan(question_id: &str, master_seed: u64, n_views: u32) -> Result<ViewPlan, PerturbError> {
    if !(MIN_VIEWS..=MAX_VIEWS).contains(&n_views) {
        return Err(PerturbError::InvalidConfig(format!(
            "n_views must lie in [{MIN_VIEWS}, {MAX_VIEWS}], got {n_views}"
        )));
    }
    let mut rng = derive_stream(master_seed, question_id, 0);

    let mut kinds = PerturbationKind::ALL;
    rng.shuffle(&mut kinds);
    let mut cells: Vec<(PerturbationKind, IntensityLevel)> = kinds
        .iter()
        .map(|&k| (k, IntensityLevel::ALL[rng.below(3) as usize]))
        .collect();

    let mut rest: Vec<(PerturbationKind, IntensityLevel)> = PerturbationKind::ALL
        .iter()
        .flat_map(|&k| IntensityLevel::ALL.iter().map(move |&l| (k, l)))
        .filter(|cell| !cells.contains(cell))
        .collect();
    rng.shuffle(&mut rest);
    cells.extend(rest.into_iter().take(n_views as usize - cells.len()));

    let specs = cells
        .into_iter()
        .enumerate()
        .map(|(i, (kind, intensity))| PerturbationSpec {
            kind,
            intensity,
            master_seed,
            question_id: question_id.to_string(),
            view_index: i as u32 + 1,
        })
        .collect();
    Ok(ViewPlan {
        question_id: question_id.to_string(),
        master_seed,
        specs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn five_views_cover_each_kind_once() {
        let plan = build_view_plan("q1", 42, 5).unwrap();
        let kinds: HashSet<_> = plan.specs.iter().map(|s| s.kind).collect();
        assert_eq!(kinds.len(), 5);
    }

    #[test]
    fn fifteen_views_exhaust_the_grid() {
        let plan = build_view_plan("q1", 42, 15).unwrap();
        let cells: HashSet<_> = plan.specs.iter().map(|s| (s.kind, s.intensity)).collect();
        assert_eq!(cells.len(), 15);
    }

    #[test]
    fn out_of_range_view_counts_rejected() {
        for n in [0, 4, 16, 20] {
            assert!(matches!(build_view_plan("q", 1, n), Err(PerturbError::InvalidConfig(_))));
        }
    }

    #[test]
    fn plans_vary_across_questions() {
        let a = build_view_plan("q1", 42, 10).unwrap();
        let b = build_view_plan("q2", 42, 10).unwrap();
        let cells = |p: &ViewPlan| p.specs.iter().map(|s| (s.kind, s.intensity)).collect::<Vec<_>>();
        assert_ne!(cells(&a), cells(&b));
    }

    proptest! {
        #[test]
        fn plan_invariants(qid in "[a-z0-9_]{1,12}", seed in any::<u64>(), n in MIN_VIEWS..=MAX_VIEWS) {
            let plan = build_view_plan(&qid, seed, n).unwrap();
            prop_assert_eq!(plan.specs.len(), n as usize);
            let kinds: HashSet<_> = plan.specs.iter().map(|s| s.kind).collect();
            prop_assert_eq!(kinds.len(), 5);
            let cells: HashSet<_> = plan.specs.iter().map(|s| (s.kind, s.intensity)).collect();
            prop_assert_eq!(cells.len(), n as usize);
            for (i, s) in plan.specs.iter().enumerate() {
                prop_assert_eq!(s.view_index, i as u32 + 1);
            }
            prop_assert_eq!(plan, build_view_plan(&qid, seed, n).unwrap());
        }
    }
}
