use std::path::Path;

use mlem::adaptive::AdaptiveParams;
use mlem_bench::config::{ReferenceKind, ReferenceSpec, ShapeSpec};
use mlem_bench::experiment::{run_experiment, RunMode};
use mlem_bench::output::{best_of_trials, read_results, write_results, HEADER};
use mlem_bench::ExperimentConfig;

const OU: &str = r#"
seed = 4

[problem]
kind = "ou"
dim = 2
rate = 1.0
sigma = 0.5
horizon = 1.0
base_steps = 256

[ladder]
c = 1.0
gamma = 3.0
k_min = 0
k_max = 4
seed = 9

[reference]
n_steps = 256
"#;

fn ou_with(solvers: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!("{OU}\n{solvers}")).unwrap()
}

#[test]
fn committed_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            cfg.build_problem().unwrap();
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml(&format!("{OU}\ncolour = 1")).is_err());
    let nested = OU.replace("k_max = 4", "k_max = 4\nkmax = 4");
    assert!(ExperimentConfig::from_toml(&nested).is_err());
    let solver = "[[solver]]\nmethod = \"em\"\nn_steps = [8]\nbatchsize = 3";
    assert!(ExperimentConfig::from_toml(&format!("{OU}\n{solver}")).is_err());
}

#[test]
fn validation_catches_inconsistent_settings() {
    let bad = [
        "[[solver]]\nmethod = \"em\"\nn_steps = [7]",
        "[[solver]]\nmethod = \"mlem\"\nn_steps = [8]",
        "[[solver]]\nmethod = \"mlem\"\nn_steps = [8]\nschedule = { variant = \"theorem\" }",
        "[[solver]]\nmethod = \"em\"\nn_steps = [8]\nschedule = { variant = \"power_law\", constant = 1.0, exponent = 2.0 }",
        "[[solver]]\nmethod = \"mlem\"\nn_steps = [8]\nschedule = { variant = \"power_law\", constant = 1.0, exponent = 2.0 }\nmatch_solver = 0",
    ];
    for b in bad {
        assert!(
            ExperimentConfig::from_toml(&format!("{OU}\n{b}")).is_err(),
            "accepted:\n{b}"
        );
    }
    assert!(ExperimentConfig::from_toml(&OU.replace("n_steps = 256", "n_steps = 100")).is_err());
}

#[test]
fn empty_results_give_a_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_results(&[], &path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        format!("{}\n", HEADER.join(","))
    );
    assert!(read_results(&path).unwrap().is_empty());
}

#[test]
fn em_at_the_reference_grid_has_zero_error() {
    let cfg = ou_with("[[solver]]\nmethod = \"em\"\nn_steps = [256]\nbatch = 16");
    let rows = run_experiment(&cfg, RunMode::Run).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].schedule, "level:4");
    assert_eq!(rows[0].mse, 0.0);
    assert_eq!(rows[0].expected_cost, 256.0 * 4096.0);
}

#[test]
fn em_error_shrinks_with_level() {
    let mut cfg = ou_with("[[solver]]\nmethod = \"em\"\nn_steps = [256]\nbatch = 64");
    cfg.ladder.shape = ShapeSpec::Coherent;
    cfg.ladder.max_freq = 0.5;
    cfg.reference = ReferenceSpec {
        kind: ReferenceKind::ExactOu,
        n_steps: 256,
    };
    let rows = run_experiment(&cfg, RunMode::Sweep).unwrap();
    let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    assert_eq!(mse.len(), 5);
    for w in mse.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{mse:?}");
    }
}

#[test]
fn results_are_deterministic_apart_from_wall_clock() {
    let cfg = ou_with(
        "[[solver]]\nmethod = \"em\"\nn_steps = [16, 64]\nbatch = 8\n\n\
         [[solver]]\nmethod = \"mlem\"\nn_steps = [64]\nschedule = { variant = \"power_law\", constant = 2.0, exponent = 2.5 }\n\
         scales = [0.5, 1.0]\ntrials = 3\nbatch = 8\nplan_seed = 5",
    );
    let dir = tempfile::tempdir().unwrap();
    let strip = |path: &Path| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.records()
            .map(|rec| {
                rec.unwrap()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 6)
                    .map(|(_, s)| s.to_string())
                    .collect()
            })
            .collect()
    };
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_results(&run_experiment(&cfg, RunMode::Run).unwrap(), &a).unwrap();
    write_results(&run_experiment(&cfg, RunMode::Run).unwrap(), &b).unwrap();
    let rows = strip(&a);
    assert_eq!(rows.len(), 2 + 2 * 3);
    assert_eq!(rows, strip(&b));

    let parsed = read_results(&a).unwrap();
    let best = best_of_trials(&parsed);
    assert_eq!(best.len(), 4);
    let trials: Vec<_> = parsed
        .iter()
        .filter(|r| r.schedule == "power_law:x0.5")
        .collect();
    assert_eq!(
        trials.iter().map(|r| r.plan_seed).collect::<Vec<_>>(),
        [Some(5), Some(6), Some(7)]
    );
    let min = trials.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min);
    assert_eq!(
        best.iter()
            .find(|r| r.schedule == "power_law:x0.5")
            .unwrap()
            .mse,
        min
    );
}

#[test]
fn learned_sweep_gives_thirteen_shifts_of_fifteen_trials() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.kv");
    let params =
        AdaptiveParams::constant((0..=4).collect(), &[0.9, 0.5, 0.2, 0.1, 0.05], 0.1).unwrap();
    std::fs::write(&file, params.to_kv_string()).unwrap();
    let cfg = ou_with(&format!(
        "[[solver]]\nmethod = \"mlem\"\nn_steps = [32]\nbatch = 2\nschedule = {{ variant = \"learned\", file = {:?} }}",
        file.display().to_string()
    ));
    let rows = run_experiment(&cfg, RunMode::Sweep).unwrap();
    assert_eq!(rows.len(), 195);
    assert_eq!(rows[0].schedule, "learned:-3");
    assert_eq!(rows[194].schedule, "learned:+3");
    assert!(rows.iter().all(|r| r.mse >= 0.0 && r.ledger_cost > 0.0));
    let costs: Vec<f64> = rows.iter().step_by(15).map(|r| r.expected_cost).collect();
    assert!(costs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn matched_blocks_share_the_target_costs() {
    let cfg = ou_with(
        "[[solver]]\nmethod = \"mlem\"\nn_steps = [64]\nschedule = { variant = \"power_law\", constant = 2.0, exponent = 2.5 }\n\
         scales = [0.25, 1.0]\ntrials = 1\nbatch = 4\ncost_mode = \"paper\"\n\n\
         [[solver]]\nmethod = \"mlem\"\nn_steps = [64]\nschedule = { variant = \"inverse_cost\", constant = 1.0 }\n\
         match_solver = 0\ntrials = 1\nbatch = 4\ncost_mode = \"paper\"",
    );
    let rows = run_experiment(&cfg, RunMode::Run).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.schedule.as_str()).collect();
    assert_eq!(
        labels,
        [
            "power_law:x0.25",
            "power_law",
            "inverse_cost@power_law:x0.25",
            "inverse_cost@power_law"
        ]
    );
    for (a, b) in rows[..2].iter().zip(&rows[2..]) {
        assert!((a.expected_cost - b.expected_cost).abs() <= 1e-9 * a.expected_cost);
    }
}

#[test]
fn ledger_concentrates_as_steps_grow() {
    let cfg = ou_with(
        "[[solver]]\nmethod = \"mlem\"\nn_steps = [2, 32, 256]\nschedule = { variant = \"power_law\", constant = 2.0, exponent = 2.5 }\n\
         trials = 20\nbatch = 50\nshared_bernoulli = false\ncost_mode = \"paper\"",
    );
    let rows = run_experiment(&cfg, RunMode::Run).unwrap();
    // mean relative gap over the trials of each step count
    let gaps: Vec<f64> = rows
        .chunks(20)
        .map(|c| {
            c.iter()
                .map(|r| ((r.ledger_cost - r.expected_cost) / r.expected_cost).abs())
                .sum::<f64>()
                / 20.0
        })
        .collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}
