//! Experiment runner: sample, optionally pre-select, refine, rank, report.

pub mod report;
pub mod spec;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::mh_refine_batch_from;
use crate::classifiers::{ClassifierSet, Evaluation};
use crate::error::{Error, Result};
use crate::flow::{refine_batch_from, substream, write_jsonl, FlowConfig, RefinementTrace, TraceStep};
use crate::geometry::{EulerGrasp, Scene};
use crate::oracle::{gradient_check, GradientCheck};
use crate::samplers::{sample_bbox, SamplerConfig};

pub use report::{relative_improvement, success_by_attempt, Aggregate, MetricsReport, RankedGrasp, RunMetrics};
pub use spec::{derive_seed, ClassifierKind, ExperimentSpec, Method};

/// Grasps refined together between trace flushes.
const CHUNK: usize = 64;

const SAMPLER_STREAM: u64 = 1;
const REFINER_STREAM: u64 = 2;
const PLACEMENT_STREAM: u64 = 3;

/// The scene of one repetition: the loaded scene, yawed by a seeded angle
/// when the spec asks for randomized placement.
pub fn repetition_scene(spec: &ExperimentSpec, base: &Scene, seed: u64) -> (Scene, f64) {
    if !spec.randomize_object_yaw {
        return (base.clone(), 0.0);
    }
    let yaw = substream(derive_seed(seed, PLACEMENT_STREAM), 0)
        .random_range(-std::f64::consts::PI..std::f64::consts::PI);
    (base.yawed(yaw), yaw)
}

/// Seed of repetition `rep`.
pub fn repetition_seed(spec: &ExperimentSpec, rep: usize) -> u64 {
    spec.seed.wrapping_add(rep as u64)
}

/// Initial grasps of one repetition, as Euler vectors.
pub fn sample_initial(spec: &ExperimentSpec, scene: &Scene, seed: u64) -> Result<Vec<EulerGrasp>> {
    let cfg = SamplerConfig {
        seed: derive_seed(seed, SAMPLER_STREAM),
        n_samples: spec.batch_size(),
        ..spec.sampler.clone()
    };
    Ok(sample_bbox(scene, &cfg)?.iter().map(|p| p.to_euler()).collect())
}

fn check_finite(e: &Evaluation, index: usize) -> Result<()> {
    if e.joint.is_finite() && e.scores.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(Error::Classifier {
            index,
            message: format!("non-finite score {:?}", e.scores),
        })
    }
}

fn mean_scores(names: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> BTreeMap<String, f64> {
    let mut sums = vec![0.0; names.len()];
    let mut n = 0usize;
    for row in rows {
        sums.iter_mut().zip(&row).for_each(|(s, v)| *s += v);
        n += 1;
    }
    names
        .iter()
        .zip(sums)
        .map(|(name, s)| ((*name).to_owned(), s / n.max(1) as f64))
        .collect()
}

fn refine_chunk(
    spec: &ExperimentSpec,
    chunk: &[EulerGrasp],
    initial: &[Evaluation],
    offset: usize,
    set: &ClassifierSet,
    scene: &Scene,
    seed: u64,
) -> Result<Vec<RefinementTrace>> {
    let refine_seed = derive_seed(seed, REFINER_STREAM);
    match spec.method {
        Method::Flow => {
            let cfg = FlowConfig {
                seed: refine_seed,
                ..spec.flow.clone()
            };
            refine_batch_from(chunk, offset, set, scene, &cfg)
        }
        Method::Mh | Method::MhV1 | Method::MhV2 => {
            mh_refine_batch_from(chunk, offset, set, scene, &spec.mh_config(refine_seed))
        }
        Method::None => Ok(chunk
            .iter()
            .zip(initial)
            .map(|(g, e)| RefinementTrace {
                steps: vec![TraceStep::new(0, g, e.joint, e.scores.clone())],
            })
            .collect()),
    }
}

/// One repetition on an already-built scene and classifier set. Traces are
/// appended to `traces` when given.
pub fn run_repetition(
    spec: &ExperimentSpec,
    rep: usize,
    scene: &Scene,
    object_yaw: f64,
    set: &ClassifierSet,
    mut traces: Option<&mut dyn Write>,
) -> Result<RunMetrics> {
    let seed = repetition_seed(spec, rep);
    set.reset_counts();
    let mut grasps = sample_initial(spec, scene, seed)?;
    let mut initial: Vec<Evaluation> = grasps.par_iter().map(|g| set.evaluate(g, scene)).collect();
    for (i, e) in initial.iter().enumerate() {
        check_finite(e, i)?;
    }
    if let Some(k) = spec.top_k {
        let mut order: Vec<usize> = (0..grasps.len()).collect();
        order.sort_by(|&a, &b| initial[b].joint.total_cmp(&initial[a].joint));
        order.truncate(k);
        grasps = order.iter().map(|&i| grasps[i]).collect();
        initial = order.iter().map(|&i| initial[i].clone()).collect();
    }

    let mut finals: Vec<TraceStep> = Vec::with_capacity(grasps.len());
    let mut flagged = 0usize;
    let (mut accepted, mut decided) = (0usize, 0usize);
    let mut wall = Duration::ZERO;
    for (c, chunk) in grasps.chunks(CHUNK).enumerate() {
        let offset = c * CHUNK;
        let start = Instant::now();
        let batch = refine_chunk(spec, chunk, &initial[offset..offset + chunk.len()], offset, set, scene, seed)?;
        wall += start.elapsed();
        for (i, t) in batch.into_iter().enumerate() {
            if let Some(out) = traces.as_deref_mut() {
                write_jsonl(out, offset + i, &t)?;
            }
            flagged += t.flagged_steps();
            for s in &t.steps {
                if let Some(a) = s.accepted {
                    decided += 1;
                    accepted += a as usize;
                }
            }
            let last = t.steps.into_iter().last().expect("traces are nonempty");
            if !last.joint.is_finite() {
                return Err(Error::Classifier {
                    index: offset + i,
                    message: "non-finite final score".into(),
                });
            }
            finals.push(last);
        }
    }

    let mut ranking: Vec<RankedGrasp> = finals
        .iter()
        .enumerate()
        .map(|(index, s)| RankedGrasp { index, joint: s.joint })
        .collect();
    ranking.sort_by(|a, b| b.joint.total_cmp(&a.joint));
    if spec.method == Method::MhV1 {
        ranking.truncate(finals.len().div_ceil(4));
    }
    // Means are summed in batch order so that reporting every grasp
    // reproduces the initial sums exactly.
    let mut keep: Vec<usize> = ranking.iter().map(|r| r.index).collect();
    keep.sort_unstable();
    let reported: Vec<&TraceStep> = keep.iter().map(|&i| &finals[i]).collect();

    let tau = spec.threshold;
    let names = set.names();
    let initial_above = initial.iter().filter(|e| e.joint > tau).count();
    let final_above = reported.iter().filter(|s| s.joint > tau).count();
    let counts = set.counts();
    Ok(RunMetrics {
        repetition: rep,
        seed,
        object_yaw,
        batch: grasps.len(),
        reported: reported.len(),
        initial_mean_d: initial.iter().map(|e| e.joint).sum::<f64>() / initial.len() as f64,
        final_mean_d: reported.iter().map(|s| s.joint).sum::<f64>() / reported.len() as f64,
        initial_above,
        final_above,
        relative_improvement: relative_improvement(initial_above, final_above),
        wall_time_s: wall.as_secs_f64(),
        value_calls: counts.value_calls,
        gradient_calls: counts.gradient_calls,
        budget: counts.budget(),
        flagged_steps: flagged,
        acceptance_rate: (decided > 0).then(|| accepted as f64 / decided as f64),
        initial_scores: mean_scores(&names, initial.iter().map(|e| e.scores.clone())),
        final_scores: mean_scores(&names, reported.iter().map(|s| s.scores.clone())),
        ranking,
    })
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Run every repetition of `spec`. When the spec has an output directory,
/// writes `traces_rep<r>.jsonl`, `report.toml` and `table.csv` there.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsReport> {
    spec.validate()?;
    let base = spec.load_scene()?;
    let gripper = spec.load_gripper()?;
    let chain = if spec.classifiers.contains(&ClassifierKind::Execution) {
        Some(spec.load_chain()?)
    } else {
        None
    };
    let out = spec.output_dir.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut runs = Vec::with_capacity(spec.repetitions);
    for rep in 0..spec.repetitions {
        let seed = repetition_seed(spec, rep);
        let (scene, yaw) = repetition_scene(spec, &base, seed);
        let set = spec::build_classifiers(spec, &scene, &gripper, chain.as_ref())?;
        let run = match out {
            Some(dir) => {
                let path = dir.join(format!("traces_rep{rep}.jsonl"));
                let mut w = create_file(&path)?;
                let run = run_repetition(spec, rep, &scene, yaw, &set, Some(&mut w))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
                run
            }
            None => run_repetition(spec, rep, &scene, yaw, &set, None)?,
        };
        log::info!(
            "{} rep {rep}: mean D {:.4} -> {:.4}, {} calls",
            spec.label(),
            run.initial_mean_d,
            run.final_mean_d,
            run.budget
        );
        runs.push(run);
    }
    let report = MetricsReport::assemble(
        spec.label(),
        spec.method,
        spec.classifier_letters(),
        spec.threshold,
        spec.seed,
        runs,
    );
    if let Some(dir) = out {
        write_report(&report, dir)?;
    }
    Ok(report)
}

pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    let path = dir.join("report.toml");
    fs::write(&path, report.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("table.csv");
    report.write_csv(create_file(&path)?)
}

/// One row of a method comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub method: String,
    pub classifiers: String,
    pub steps: usize,
    pub mean_initial_d: f64,
    pub mean_final_d: f64,
    pub relative_improvement: f64,
    pub wall_time_s: f64,
    pub value_calls: u64,
    pub gradient_calls: u64,
    pub budget: u64,
    /// Budget spent per refined grasp, averaged over repetitions.
    pub budget_per_grasp: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Serialize(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn steps_of(spec: &ExperimentSpec) -> usize {
    match spec.method {
        Method::Flow => spec.flow.n_steps,
        Method::Mh | Method::MhV1 | Method::MhV2 => spec.mh_config(0).n_steps,
        Method::None => 0,
    }
}

fn comparison_row(spec: &ExperimentSpec, report: &MetricsReport) -> ComparisonRow {
    let (value, gradient) = report
        .runs
        .iter()
        .fold((0, 0), |(v, g), r| (v + r.value_calls, g + r.gradient_calls));
    let grasps: usize = report.runs.iter().map(|r| r.batch).sum();
    ComparisonRow {
        label: spec.label(),
        method: spec.method.label().to_owned(),
        classifiers: spec.classifier_letters(),
        steps: steps_of(spec),
        mean_initial_d: report.aggregate.mean_initial_d,
        mean_final_d: report.aggregate.mean_final_d,
        relative_improvement: report.aggregate.relative_improvement,
        wall_time_s: report.aggregate.wall_time_s,
        value_calls: value,
        gradient_calls: gradient,
        budget: report.aggregate.budget,
        budget_per_grasp: report.aggregate.budget as f64 / grasps.max(1) as f64,
    }
}

/// MH steps whose evaluation budget per grasp equals that of a flow with
/// `flow_steps` steps: flow spends `3N + 1`, MH spends `M + 1`.
pub fn matched_mh_steps(flow_steps: usize) -> usize {
    3 * flow_steps
}

/// Run each spec and tabulate the results. The specs must share scene,
/// sampler, seed and repetitions. With `budget_match`, every plain `mh` spec
/// gets an extra row run with the step count that matches the first flow
/// spec's evaluation budget.
pub fn compare_methods(specs: &[ExperimentSpec], budget_match: bool) -> Result<ComparisonTable> {
    let first = specs
        .first()
        .ok_or_else(|| Error::invalid("comparison", "no experiments given"))?;
    let scene = first.load_scene()?;
    for s in &specs[1..] {
        if s.load_scene()? != scene {
            return Err(Error::MismatchedSpecs(format!("`{}` uses a different scene", s.label())));
        }
        if s.sampler != first.sampler {
            return Err(Error::MismatchedSpecs(format!("`{}` uses a different sampler", s.label())));
        }
        if s.seed != first.seed || s.repetitions != first.repetitions {
            return Err(Error::MismatchedSpecs(format!(
                "`{}` uses a different seed or repetition count",
                s.label()
            )));
        }
        if s.randomize_object_yaw != first.randomize_object_yaw {
            return Err(Error::MismatchedSpecs(format!("`{}` places objects differently", s.label())));
        }
    }
    let matched_steps = if budget_match {
        let flow = specs
            .iter()
            .find(|s| s.method == Method::Flow)
            .ok_or_else(|| Error::invalid("comparison", "budget matching needs a flow experiment"))?;
        Some(matched_mh_steps(flow.flow.n_steps))
    } else {
        None
    };

    let mut table = ComparisonTable::default();
    for s in specs {
        let report = run_experiment(s)?;
        table.rows.push(comparison_row(s, &report));
        if let (Some(steps), Method::Mh) = (matched_steps, s.method) {
            let mut matched = s.clone();
            matched.name = format!("{}@matched", s.label());
            matched.mh.n_steps = steps;
            matched.output_dir = s.output_dir.as_ref().map(|d| suffixed(d, "matched"));
            let report = run_experiment(&matched)?;
            table.rows.push(comparison_row(&matched, &report));
        }
    }
    Ok(table)
}

fn suffixed(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!("_{suffix}"));
    dir.with_file_name(name)
}

/// Every classifier kind checked against central differences on `n_poses`
/// grasps drawn with the spec's sampler from its scene.
pub fn gradient_audit(spec: &ExperimentSpec, n_poses: usize, h: f64, tolerance: f64) -> Result<Vec<GradientCheck>> {
    let all = ExperimentSpec {
        classifiers: vec![ClassifierKind::Stability, ClassifierKind::Execution, ClassifierKind::Handover],
        ..spec.clone()
    };
    all.validate()?;
    let scene = all.load_scene()?;
    let chain = all.load_chain()?;
    let set = spec::build_classifiers(&all, &scene, &all.load_gripper()?, Some(&chain))?;
    let cfg = SamplerConfig {
        seed: derive_seed(all.seed, SAMPLER_STREAM),
        n_samples: n_poses,
        ..all.sampler.clone()
    };
    let poses: Vec<EulerGrasp> = sample_bbox(&scene, &cfg)?.iter().map(|p| p.to_euler()).collect();
    set.classifiers()
        .par_iter()
        .map(|c| gradient_check(c.as_ref(), &scene, &poses, h, tolerance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> ExperimentSpec {
        let mut s = ExperimentSpec::builtin("sphere", method);
        s.sampler.n_samples = 12;
        s.flow.n_steps = 5;
        s.mh.n_steps = 15;
        s.repetitions = 2;
        s
    }

    #[test]
    fn identity_pipeline_keeps_metrics() {
        let r = run_experiment(&small(Method::None)).unwrap();
        for run in &r.runs {
            assert_eq!(run.initial_mean_d, run.final_mean_d);
            assert_eq!(run.initial_scores, run.final_scores);
            assert_eq!(run.relative_improvement, 1.0);
            assert_eq!((run.value_calls, run.gradient_calls), (12, 0));
        }
    }

    #[test]
    fn ranking_is_sorted_and_budget_exact() {
        let r = run_experiment(&small(Method::Flow)).unwrap();
        for run in &r.runs {
            assert!(run.ranking.windows(2).all(|w| w[0].joint >= w[1].joint));
            assert_eq!(run.ranking.len(), 12);
            assert_eq!(run.value_calls, 12 + 12);
            assert_eq!(run.gradient_calls, 12 * 5);
            assert_eq!(run.budget, 12 + 12 * (3 * 5 + 1));
        }
        let mh = run_experiment(&small(Method::Mh)).unwrap();
        assert_eq!(mh.runs[0].value_calls, 12 + 12 * 16);
        assert!(mh.runs[0].acceptance_rate.is_some());
    }

    #[test]
    fn top_k_and_mh_v1_reporting() {
        let mut s = small(Method::Flow);
        s.top_k = Some(4);
        let r = run_experiment(&s).unwrap();
        assert!(r.runs.iter().all(|run| run.batch == 4 && run.ranking.len() == 4));
        let mut v1 = small(Method::MhV1);
        v1.sampler.n_samples = 3;
        let r = run_experiment(&v1).unwrap();
        assert_eq!((r.runs[0].batch, r.runs[0].reported), (12, 3));
    }

    #[test]
    fn yaw_is_seeded() {
        let mut s = small(Method::None);
        s.scene = "builtin:box".into();
        s.randomize_object_yaw = true;
        let a = run_experiment(&s).unwrap();
        assert_ne!(a.runs[0].object_yaw, a.runs[1].object_yaw);
        assert_eq!(a.without_timing(), run_experiment(&s).unwrap().without_timing());
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = small(Method::Flow);
        s.output_dir = Some(dir.path().join("out"));
        let r = run_experiment(&s).unwrap();
        let out = dir.path().join("out");
        let traces = fs::read_to_string(out.join("traces_rep0.jsonl")).unwrap();
        assert_eq!(traces.lines().count(), 12 * 6);
        assert_eq!(MetricsReport::load(&out.join("report.toml")).unwrap(), r);
        assert_eq!(fs::read_to_string(out.join("table.csv")).unwrap().lines().count(), 3);
    }

    #[test]
    fn gradient_audit_covers_every_classifier() {
        let spec = ExperimentSpec::builtin("box", Method::Flow);
        let checks = gradient_audit(&spec, 20, 1e-6, 1e-4).unwrap();
        let names: Vec<&str> = checks.iter().map(|c| c.classifier.as_str()).collect();
        assert_eq!(names.len(), 3);
        for c in &checks {
            assert_eq!(c.checked + c.skipped, 20);
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn comparison_rules() {
        let flow = small(Method::Flow);
        let mh = small(Method::Mh);
        let table = compare_methods(&[flow.clone(), mh.clone(), flow.clone()], true).unwrap();
        assert_eq!(table.rows.len(), 4);
        let matched = table.row("sphere_mh@matched").unwrap();
        assert_eq!(matched.steps, 15);
        let f = &table.rows[0];
        assert_eq!(matched.budget_per_grasp, f.budget_per_grasp);
        let (mut a, mut b) = (table.rows[0].clone(), table.rows[3].clone());
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);

        let mut other = small(Method::Mh);
        other.scene = "builtin:box".into();
        assert!(matches!(compare_methods(&[flow.clone(), other], false), Err(Error::MismatchedSpecs(_))));
        assert!(compare_methods(&[mh], true).is_err());
    }
}
