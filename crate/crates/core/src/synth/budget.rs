use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::dsl::SearchConfig;

/// Labels to request in each planned iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub total_budget: usize,
    pub initial_count: usize,
    pub per_iteration: Vec<usize>,
}

impl BudgetSchedule {
    pub fn planned_iterations(&self) -> usize {
        self.per_iteration.len()
    }

    /// Allotment for iteration `i` (0-based); zero past the plan.
    pub fn allotment(&self, i: usize) -> usize {
        self.per_iteration.get(i).copied().unwrap_or(0)
    }
}

/// Spreads the remaining budget evenly over `n_p + n_g * n_d` iterations,
/// earlier iterations taking the remainder.
pub fn plan_budget(b: usize, initial_count: usize, config: &SearchConfig) -> Result<BudgetSchedule, SynthesisError> {
    if b < initial_count {
        return Err(SynthesisError::Precondition(format!(
            "budget {b} is smaller than the {initial_count} initial labels"
        )));
    }
    let t = (config.n_p + config.n_g * config.n_d()).max(1);
    let r = b - initial_count;
    let per_iteration = (0..t).map(|i| r / t + usize::from(i < r % t)).collect();
    Ok(BudgetSchedule {
        total_budget: b,
        initial_count,
        per_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_schedule() {
        let s = plan_budget(50, 30, &SearchConfig::trajectory()).unwrap();
        assert_eq!(s.per_iteration, vec![2, 2, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(s.planned_iterations(), 14);
        assert_eq!(s.allotment(20), 0);
    }

    #[test]
    fn exhausted_and_uniform() {
        let cfg = SearchConfig::trajectory();
        assert!(plan_budget(12, 12, &cfg).unwrap().per_iteration.iter().all(|&n| n == 0));
        assert!(plan_budget(40, 12, &cfg).unwrap().per_iteration.iter().all(|&n| n == 2));
        assert!(plan_budget(5, 12, &cfg).is_err());
        assert_eq!(plan_budget(30, 12, &cfg.without_durations()).unwrap().per_iteration, vec![4, 4, 4, 3, 3]);
    }

    #[test]
    fn sums_to_remaining() {
        let cfg = SearchConfig::trajectory();
        for b in 0..60 {
            for init in 0..=b {
                let s = plan_budget(b, init, &cfg).unwrap();
                assert_eq!(s.per_iteration.iter().sum::<usize>(), b - init);
                let (lo, hi) = (s.per_iteration.iter().min().unwrap(), s.per_iteration.iter().max().unwrap());
                assert!(hi - lo <= 1);
            }
        }
    }
}
