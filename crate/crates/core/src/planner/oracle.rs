use std::cmp::Ordering;

use super::{PlannerError, RewardInputs};
use crate::domain::Plan;

pub const MAX_ORACLE_TASKS: usize = 6;
pub const MAX_ORACLE_WORKERS: u32 = 24;

/// Exhaustive search over every assignment with total at most the capacity.
///
/// Rewards are summed in task order, exactly as the DP accumulates them, and
/// ties are broken by the same per-task preference applied from the last
/// task backwards, so the result is comparable bit-for-bit with [`super::solve`].
pub fn brute_force_solve(inputs: &RewardInputs) -> Result<Plan, PlannerError> {
    let m = inputs.tasks.len();
    if m > MAX_ORACLE_TASKS || inputs.capacity > MAX_ORACLE_WORKERS {
        return Err(PlannerError::TooLarge {
            tasks: m,
            workers: inputs.capacity,
            max_tasks: MAX_ORACLE_TASKS,
            max_workers: MAX_ORACLE_WORKERS,
        });
    }
    let candidates: Vec<Vec<u32>> = (0..m).map(|i| inputs.candidates(i)).collect();
    let mut search = Search { inputs, candidates: &candidates, current: vec![0; m], best: None };
    search.descend(0, 0, 0.0);
    let (objective, assignment) = search.best.unwrap_or((0.0, Vec::new()));
    Ok(inputs.make_plan(&assignment, objective))
}

struct Search<'a> {
    inputs: &'a RewardInputs,
    candidates: &'a [Vec<u32>],
    current: Vec<u32>,
    best: Option<(f64, Vec<u32>)>,
}

impl Search<'_> {
    fn descend(&mut self, i: usize, used: u32, partial: f64) {
        if i == self.current.len() {
            self.offer(partial);
            return;
        }
        for idx in 0..self.candidates[i].len() {
            let k = self.candidates[i][idx];
            if used + k > self.inputs.capacity {
                break;
            }
            self.current[i] = k;
            let sum = partial + self.inputs.gain(i, k);
            self.descend(i + 1, used + k, sum);
        }
        self.current[i] = 0;
    }

    fn offer(&mut self, value: f64) {
        let replace = match &self.best {
            None => true,
            Some((best, assignment)) => {
                value > *best || (value == *best && self.tie_order(&self.current, assignment) == Ordering::Less)
            }
        };
        if replace {
            self.best = Some((value, self.current.clone()));
        }
    }

    fn tie_order(&self, a: &[u32], b: &[u32]) -> Ordering {
        for i in (0..a.len()).rev() {
            let ord = self.inputs.preference(i, a[i]).cmp(&self.inputs.preference(i, b[i]));
            if ord != Ordering::Equal {
                return ord;
            }
        }
        Ordering::Equal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CostParams;
    use crate::planner::solve;
    use crate::planner::tests::task;

    fn cost() -> CostParams {
        CostParams { lambda_worker: 1e-5, d_transition: 60.0, checkpoint_interval: 1800.0, horizon: 1e9 }
    }

    #[test]
    fn zero_tasks() {
        let plan = brute_force_solve(&RewardInputs::new(vec![], 10, cost())).unwrap();
        assert!(plan.tasks.is_empty());
        assert_eq!(plan.objective, 0.0);
    }

    #[test]
    fn single_task_is_argmax() {
        let pts = [(2, 30.0), (3, 20.0), (5, 44.0), (6, 41.0)];
        let inputs = RewardInputs::new(vec![task("a", 1.0, 2, &pts)], 6, cost()).with_current(&[3]);
        let plan = brute_force_solve(&inputs).unwrap();
        let argmax =
            inputs.candidates(0).into_iter().max_by(|a, b| inputs.gain(0, *a).total_cmp(&inputs.gain(0, *b))).unwrap();
        assert_eq!(plan.assignment(), vec![argmax]);
        assert_eq!(argmax, 5);
    }

    #[test]
    fn refuses_large_instances() {
        let t = task("a", 1.0, 1, &[(1, 1.0)]);
        let inputs = RewardInputs::new(vec![t; 7], 8, cost());
        assert!(matches!(brute_force_solve(&inputs), Err(PlannerError::TooLarge { .. })));
        let inputs = RewardInputs::new(vec![task("a", 1.0, 1, &[(1, 1.0)])], 25, cost());
        assert!(brute_force_solve(&inputs).is_err());
    }

    #[test]
    fn matches_dp_small() {
        let a = task("a", 1.2, 2, &[(2, 10.0), (4, 25.0), (6, 28.0)]);
        let b = task("b", 0.7, 1, &[(1, 6.0), (3, 20.0), (4, 21.0)]);
        let c = task("c", 2.0, 3, &[(3, 9.0), (5, 12.0)]);
        let inputs = RewardInputs::new(vec![a, b, c], 10, cost()).with_current(&[4, 3, 3]).with_fault("c".into());
        let dp = solve(&inputs);
        let bf = brute_force_solve(&inputs).unwrap();
        assert_eq!(dp, bf);
    }
}
