use twoprice::fluid::solve_fluid;
use twoprice::harness::{
    compare_csv, run_experiment, run_one, summary_csv, validate_config, write_experiment, ExperimentConfig,
};
use twoprice::policies::{run_learning_policy, Gate, PolicyKind};
use twoprice::queueing::{conservation_check, RunTrace, Simulator};

const THREE_BY_THREE: &str = "
[experiment]
name = small_network
horizon = 20000
policies = prob2p, threshold
seeds = 0..2
weights = 0.001
checkpoints = 50

[schedule]
gamma = 1/6
mode = anytime
eta_mult = 0.1
delta_mult = 0.2
alpha_mult = 0.2
beta = 1
e_override_mult = 8

[topology]
customers = 3
servers = 3
";

fn network_config() -> ExperimentConfig {
    let mut text = THREE_BY_THREE.to_string();
    for (i, j) in [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (3, 2), (3, 3)] {
        text.push_str(&format!("\n[edge]\ncustomer = {i}\nserver = {j}\n"));
    }
    for k in 1..=3 {
        text.push_str(&format!(
            "\n[curve]\nside = customer\nindex = {k}\nkind = linear\nintercept = 2\nslope = 2\np_min = 0\np_max = 2\n"
        ));
        text.push_str(&format!(
            "\n[curve]\nside = server\nindex = {k}\nkind = linear\nintercept = 0\nslope = 2\np_min = 0\np_max = 2\n"
        ));
    }
    ExperimentConfig::parse(&text).unwrap()
}

fn small_single_link() -> ExperimentConfig {
    ExperimentConfig {
        horizon: 20_000,
        checkpoints: 40,
        seeds: (0, 3),
        policies: PolicyKind::ALL.to_vec(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn network_config_solves_and_validates() {
    let config = network_config();
    let instance = config.validate().unwrap();
    let fluid = solve_fluid(&instance, config.schedule.a_min).unwrap();
    assert!((fluid.f_star - 0.75).abs() <= 1e-6);
    let checks = validate_config(&config);
    assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
}

#[test]
fn experiments_are_sorted_and_repeatable() {
    let config = small_single_link();
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a.len(), 16);
    let keys: Vec<_> = a.iter().map(|r| (r.policy, r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(summary_csv(&a, &config.weights), summary_csv(&b, &config.weights));
    assert_eq!(compare_csv(&a, &config.weights), compare_csv(&b, &config.weights));
}

#[test]
fn summary_rows_cover_every_checkpoint() {
    let config = small_single_link();
    let runs = run_experiment(&config).unwrap();
    let csv = summary_csv(&runs, &config.weights);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,policy,seed,regret,avg_qlen,max_qlen,expected_profit,realized_profit,obj_0.001,obj_0.01"
    );
    let points = runs[0].summary.points.len();
    assert_eq!(lines.count(), points * runs.len());
    assert_eq!(runs[0].summary.last().unwrap().t, config.horizon);
}

#[test]
fn compare_rows_pair_against_threshold() {
    let config = small_single_link();
    let runs = run_experiment(&config).unwrap();
    let csv = compare_csv(&runs, &config.weights);
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,w,policy,baseline,improvement_pct,ci_half_width,seeds");
    for line in csv.lines().skip(1) {
        let cols: Vec<_> = line.split(',').collect();
        assert_eq!(cols[3], "threshold");
        assert_ne!(cols[2], "threshold");
        assert_eq!(cols[6], "4");
    }
}

#[test]
fn traced_runs_conserve_customers_and_servers() {
    let config = network_config();
    let instance = config.validate().unwrap();
    for gate in [Gate::TwoPrice, Gate::Threshold] {
        let mut trace = RunTrace::new("learning", 5, config.schedule.gamma, config.horizon);
        {
            let mut sim = Simulator::new(&instance, 5, config.horizon, &mut trace);
            let report = run_learning_policy(&mut sim, &config.schedule, gate).unwrap();
            assert!(!report.iterations.is_empty());
        }
        assert_eq!(trace.len() as u64, config.horizon);
        conservation_check(&instance.topology, &trace).unwrap();
    }
}

#[test]
fn trace_files_are_written_per_run() {
    let mut config = small_single_link();
    config.horizon = 2_000;
    config.seeds = (7, 7);
    config.trace = true;
    let instance = config.validate().unwrap();
    let fluid = solve_fluid(&instance, config.schedule.a_min).unwrap();
    let run = run_one(&config, &instance, &fluid, PolicyKind::Prob2p, 7).unwrap();
    let trace = String::from_utf8(run.trace_csv.clone().unwrap()).unwrap();
    assert!(trace.starts_with("t,queue,side,price,rate,arrival,matches,q_len,useful"), "{}", &trace[..80]);

    let dir = tempfile::tempdir().unwrap();
    let written = write_experiment(dir.path(), &[run], &config.weights, true).unwrap();
    let names: Vec<_> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["summary.csv", "compare.csv", "trace_prob2p_7.csv"]);
}
