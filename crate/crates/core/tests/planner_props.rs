mod common;

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicron::planner::{brute_force_solve, precompute_lookup, solve, waf, Perturbation, RewardInputs};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn solver_matches_oracle(seed in any::<u64>()) {
        let inputs = common::random_inputs(&mut ChaCha8Rng::seed_from_u64(seed), 4, 20);
        let dp = solve(&inputs);
        let bf = brute_force_solve(&inputs).unwrap();
        prop_assert_eq!(dp.assignment(), bf.assignment());
        prop_assert_eq!(dp.objective.to_bits(), bf.objective.to_bits());
    }

    #[test]
    fn plans_fit_capacity_and_calibration(seed in any::<u64>()) {
        let inputs = common::random_inputs(&mut ChaCha8Rng::seed_from_u64(seed), 6, 64);
        let plan = solve(&inputs);
        prop_assert!(plan.total_workers() <= inputs.capacity);
        for (i, tp) in plan.tasks.iter().enumerate() {
            prop_assert!(inputs.candidates(i).contains(&tp.x));
            prop_assert_eq!(tp.layout.is_some(), tp.x > 0);
            if let Some(l) = tp.layout {
                prop_assert_eq!(l.workers(), tp.x);
            }
        }
    }

    /// With free transitions the fault set cannot change the optimum.
    #[test]
    fn faults_are_irrelevant_without_transition_cost(seed in any::<u64>()) {
        let mut inputs = common::random_inputs(&mut ChaCha8Rng::seed_from_u64(seed), 4, 20);
        inputs.cost.d_transition = 0.0;
        let with = solve(&inputs);
        inputs.faulted.clear();
        let without = solve(&inputs);
        prop_assert_eq!(with.assignment(), without.assignment());
        prop_assert_eq!(with.objective, without.objective);
    }

    /// A dearer transition never raises the penalty weight of the tasks the
    /// plan moves. Which tasks move can still change: at a higher cost the
    /// plan may move a different, lighter task instead.
    #[test]
    fn transition_cost_discourages_moves(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = common::random_inputs(&mut rng, 4, 20);
        let lo = rng.random_range(0.0..3600.0);
        let hi = lo + rng.random_range(0.0..3600.0);
        inputs.cost.d_transition = lo;
        let cheap = solve(&inputs).assignment();
        inputs.cost.d_transition = hi;
        let dear = solve(&inputs).assignment();
        let at_stake = |plan: &[u32], inp: &RewardInputs| -> f64 {
            (0..plan.len())
                .filter(|&i| plan[i] != inp.current[i] && !inp.is_faulted(i))
                .map(|i| waf(&inp.tasks[i], inp.current[i]))
                .sum()
        };
        let (a, b) = (at_stake(&cheap, &inputs), at_stake(&dear, &inputs));
        prop_assert!(b <= a * (1.0 + 1e-12), "{b} > {a}");
    }

    #[test]
    fn lookup_entries_are_fresh_solves(seed in any::<u64>(), join in 0u32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cluster, base) = common::random_state(&mut rng);
        let table = precompute_lookup(&cluster, &base, join);
        let healthy = cluster.nodes.iter().filter(|n| n.health == unicron::domain::Health::Healthy).count();
        let expected = cluster.nodes.len() + usize::from(join > 0) + base.tasks.len();
        prop_assert_eq!(table.len(), expected);
        prop_assert!(healthy <= cluster.nodes.len());
        for (p, plan) in table.iter() {
            prop_assert_eq!(&solve(&p.apply(&cluster, &base)), plan);
        }
        if join > 0 {
            let mut grown = base.clone();
            grown.capacity += join;
            prop_assert_eq!(table.get(&Perturbation::WorkersJoin(join)), Some(&solve(&grown)));
        }
    }
}

#[test]
fn large_instance_solves_quickly() {
    use std::sync::Arc;
    use std::time::Instant;
    use unicron::domain::{CostParams, Layout, TaskSpec, ThroughputTable};

    let tasks: Vec<TaskSpec> = (0..8)
        .map(|i| {
            let id = format!("big{i}");
            let mut tbl = ThroughputTable::new(id.as_str().into(), 1);
            for x in 1..=1024u32 {
                let flops = f64::from(x).powf(0.9) * 1e12 * (1.0 + 0.01 * f64::from(i));
                tbl.insert(x, flops, Layout::new(x, 1, 1)).unwrap();
            }
            TaskSpec {
                id: id.into(),
                model_size: 1e9,
                weight: 1.0,
                min_workers: 1,
                d_iter: 30.0,
                calibration: Arc::new(tbl),
            }
        })
        .collect();
    let inputs = RewardInputs::new(tasks, 1024, CostParams::default());
    let start = Instant::now();
    let plan = solve(&inputs);
    let took = start.elapsed();
    assert_eq!(plan.total_workers(), 1024);
    assert!(took.as_secs_f64() < 10.0, "m=8, n=1024 took {took:?}");
}

/// Six identical 7B tasks: the optimum cannot depend on task order, and no
/// equal split beats it.
#[test]
fn identical_tasks_are_interchangeable() {
    use unicron::workload::{build_tasks, case_config};

    let cfg = case_config(1, 16, 8).unwrap();
    let tasks = build_tasks(&cfg, None).unwrap();
    let inputs = RewardInputs::new(tasks.clone(), 128, cfg.cost_params);
    let plan = solve(&inputs);

    let mut reversed = tasks;
    reversed.reverse();
    let flipped = solve(&RewardInputs::new(reversed, 128, cfg.cost_params));
    assert_eq!(plan.objective.to_bits(), flipped.objective.to_bits());
    let mut a = plan.assignment();
    let mut b = flipped.assignment();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);

    let even = inputs.candidates(0).into_iter().filter(|&x| x * 6 <= 128).max().unwrap();
    let rate = waf(&inputs.tasks[0], even);
    let total: f64 = plan.tasks.iter().zip(&inputs.tasks).map(|(t, s)| waf(s, t.x)).sum();
    assert!(total >= 6.0 * rate, "{a:?}");
}
