//! End-to-end runs of the experiment pipeline on the bundled scenes.

use std::fs;
use std::path::PathBuf;

use grasprefine::flow::read_jsonl;
use grasprefine::harness::{run_experiment, ClassifierKind, ExperimentSpec, Method};

fn sphere(method: Method, seeds: usize, grasps: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::builtin("sphere", method);
    spec.classifiers = vec![ClassifierKind::Stability];
    spec.repetitions = seeds;
    spec.sampler.n_samples = grasps;
    spec
}

#[test]
fn default_settings_raise_the_mean_score_on_the_sphere() {
    let report = run_experiment(&sphere(Method::Flow, 100, 64)).unwrap();
    let raised = report
        .runs
        .iter()
        .filter(|r| r.final_mean_d > r.initial_mean_d)
        .count();
    assert!(raised >= 90, "{raised}/100");
    assert!(report.aggregate.mean_final_d > report.aggregate.mean_initial_d);
}

#[test]
fn flow_on_one_hundred_sphere_samples_improves() {
    let report = run_experiment(&sphere(Method::Flow, 1, 100)).unwrap();
    assert!(report.runs[0].relative_improvement > 1.0);
}

#[test]
fn long_mh_chains_cost_more_time_than_the_flow() {
    let flow = run_experiment(&sphere(Method::Flow, 1, 64)).unwrap();
    let mh = run_experiment(&sphere(Method::MhV2, 1, 64)).unwrap();
    assert_eq!(flow.runs[0].batch, mh.runs[0].batch);
    assert!(mh.aggregate.wall_time_s > flow.aggregate.wall_time_s);
}

#[test]
fn traces_agree_with_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = sphere(Method::Flow, 1, 16);
    spec.classifiers.push(ClassifierKind::Handover);
    spec.output_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&spec).unwrap();
    let text = fs::read_to_string(dir.path().join("traces_rep0.jsonl")).unwrap();
    let records = read_jsonl(&text).unwrap();
    assert_eq!(records.len(), 16 * (spec.flow.n_steps + 1));
    for ranked in &report.runs[0].ranking {
        let last = records
            .iter()
            .find(|(i, s)| *i == ranked.index && s.step == spec.flow.n_steps)
            .unwrap();
        assert_eq!(last.1.joint, ranked.joint);
        assert_eq!(last.1.scores.len(), 2);
    }
}

#[test]
fn shipped_experiment_files_load() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = ExperimentSpec::load(&path).unwrap();
            spec.load_scene().unwrap();
            n += 1;
        }
    }
    assert!(n >= 3);
}
