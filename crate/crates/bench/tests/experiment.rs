use vqbe_bench::{run_experiment, ExperimentSpec, RunRecord};
use vqbe_core::Selection;

fn sweep() -> ExperimentSpec {
    ExperimentSpec {
        name: "sweep".into(),
        targets: vec!["TQ1".into(), "TQ6".into()],
        budgets: vec![12, 20, 30],
        fn_rates: vec![0.0, 0.3],
        selections: vec![Selection::Disagreement, Selection::Random],
        repetitions: 2,
        train_size: 150,
        test_size: 150,
        seed: 4,
        ..Default::default()
    }
}

fn outcome(runs: &[RunRecord]) -> Vec<(String, usize, usize, String, Option<String>, usize)> {
    runs.iter()
        .map(|r| (r.target.clone(), r.budget, r.repetition, format!("{:?}{}", r.selection, r.fn_rate), r.best_query.clone(), r.labels_used))
        .collect()
}

#[test]
fn sweep_covers_every_cell_and_writes_reports() {
    let spec = sweep();
    let report = run_experiment(&spec).unwrap();
    assert_eq!(report.runs.len(), 2 * 2 * 3 * 2 * 2);
    assert_eq!(report.summary.len(), 2 * 3 * 2 * 2);
    for r in &report.runs {
        assert!(!r.failed, "{:?}", r.error);
        assert!(r.labels_used <= r.budget);
        assert!((0.0..=1.0).contains(&r.f1));
    }
    for s in &report.summary {
        assert_eq!(s.runs, 2);
    }

    let dir = tempfile::tempdir().unwrap();
    let files = report.write_dir(dir.path()).unwrap();
    assert_eq!(files, ["report.json", "runs.csv", "summary.csv", "f1_vs_budget.svg", "f1_vs_noise.svg"]);
    let runs_csv = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs_csv.lines().count(), report.runs.len() + 1);
    let svg = std::fs::read_to_string(dir.path().join("f1_vs_budget.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let back: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back["runs"].as_array().unwrap().len(), report.runs.len());
}

#[test]
fn sweeps_are_reproducible_across_worker_counts() {
    let a = run_experiment(&ExperimentSpec { budgets: vec![20], fn_rates: vec![0.3], ..sweep() }).unwrap();
    let b = run_experiment(&ExperimentSpec { budgets: vec![20], fn_rates: vec![0.3], workers: 2, ..sweep() }).unwrap();
    assert_eq!(outcome(&a.runs), outcome(&b.runs));
    let f1 = |r: &[RunRecord]| r.iter().map(|x| x.f1).collect::<Vec<_>>();
    assert_eq!(f1(&a.runs), f1(&b.runs));
}

#[test]
fn larger_budgets_do_not_hurt_on_average() {
    let spec = ExperimentSpec {
        targets: vec!["TQ8".into()],
        budgets: vec![12, 30],
        repetitions: 4,
        train_size: 300,
        test_size: 300,
        seed: 9,
        ..Default::default()
    };
    let report = run_experiment(&spec).unwrap();
    let mean = |b: usize| {
        let v: Vec<f64> = report.runs.iter().filter(|r| r.budget == b).map(|r| r.f1).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(30) + 0.05 >= mean(12), "{} vs {}", mean(30), mean(12));
}
