use super::RewardInputs;
use crate::domain::Plan;

/// Filled dynamic-programming table.
///
/// `value(i, j)` is the best reward of the first `i` tasks using at most `j`
/// workers; `choice(i, j)` is the worker count given to task `i` there.
#[derive(Debug, Clone)]
pub struct DpTable {
    tasks: usize,
    width: usize,
    values: Vec<f64>,
    choices: Vec<u32>,
}

impl DpTable {
    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn capacity(&self) -> u32 {
        (self.width - 1) as u32
    }

    pub fn value(&self, i: usize, j: u32) -> f64 {
        self.values[i * self.width + j as usize]
    }

    pub fn choice(&self, i: usize, j: u32) -> u32 {
        self.choices[i * self.width + j as usize]
    }

    /// Walks the choices back from `(m, n)`.
    pub fn traceback(&self) -> Vec<u32> {
        let mut out = vec![0; self.tasks];
        let mut j = self.capacity();
        for i in (1..=self.tasks).rev() {
            let k = self.choice(i, j);
            out[i - 1] = k;
            j -= k;
        }
        out
    }
}

/// Optimal plan for `inputs`. O(m * n * c) where c is the number of
/// calibrated points per task (at most n + 1).
pub fn solve(inputs: &RewardInputs) -> Plan {
    solve_with_table(inputs).0
}

pub fn solve_with_table(inputs: &RewardInputs) -> (Plan, DpTable) {
    let m = inputs.tasks.len();
    let n = inputs.capacity as usize;
    let width = n + 1;
    let mut values = vec![0.0; (m + 1) * width];
    let mut choices = vec![0u32; (m + 1) * width];

    for i in 1..=m {
        let task = i - 1;
        let candidates: Vec<(u32, f64, (bool, u32))> = inputs
            .candidates(task)
            .into_iter()
            .map(|k| (k, inputs.gain(task, k), inputs.preference(task, k)))
            .collect();
        for j in 0..=n {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0u32;
            let mut best_pref = (true, u32::MAX);
            for &(k, gain, pref) in candidates.iter().take_while(|c| c.0 as usize <= j) {
                let v = values[(i - 1) * width + (j - k as usize)] + gain;
                let better = v > best || (v == best && pref < best_pref);
                if better {
                    best = v;
                    best_k = k;
                    best_pref = pref;
                }
            }
            values[i * width + j] = best;
            choices[i * width + j] = best_k;
        }
    }

    let table = DpTable { tasks: m, width, values, choices };
    let assignment = table.traceback();
    let objective = table.value(m, inputs.capacity);
    (inputs.make_plan(&assignment, objective), table)
}
