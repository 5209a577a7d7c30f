//! Wall time of flow refinement against MH chains on the bundled sphere.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grasprefine::baselines::{mh_refine_batch, MhConfig};
use grasprefine::builtin;
use grasprefine::classifiers::{ClassifierSet, StabilityClassifier, StabilityParams};
use grasprefine::flow::{refine_batch, FlowConfig};
use grasprefine::geometry::{EulerGrasp, Scene};
use grasprefine::harness::{matched_mh_steps, sample_initial, ExperimentSpec, Method};

fn setup(batch: usize) -> (Scene, ClassifierSet, Vec<EulerGrasp>) {
    let mut spec = ExperimentSpec::builtin("sphere", Method::Flow);
    spec.sampler.n_samples = batch;
    let scene = spec.load_scene().unwrap();
    let gripper = builtin::gripper("parallel_jaw").unwrap();
    let set = ClassifierSet::single(StabilityClassifier::new(gripper, StabilityParams::default()).unwrap());
    let grasps = sample_initial(&spec, &scene, 0).unwrap();
    (scene, set, grasps)
}

fn refinement(c: &mut Criterion) {
    let flow = FlowConfig::default();
    let mut group = c.benchmark_group("refine");
    group.sample_size(10);
    for batch in [16, 256] {
        let (scene, set, grasps) = setup(batch);
        group.bench_with_input(BenchmarkId::new("flow", batch), &grasps, |b, g| {
            b.iter(|| refine_batch(g, &set, &scene, &flow).unwrap())
        });
        let matched = MhConfig {
            n_steps: matched_mh_steps(flow.n_steps),
            ..MhConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("mh_matched", batch), &grasps, |b, g| {
            b.iter(|| mh_refine_batch(g, &set, &scene, &matched).unwrap())
        });
        let long = MhConfig {
            n_steps: 500,
            ..MhConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("mh_500", batch), &grasps, |b, g| {
            b.iter(|| mh_refine_batch(g, &set, &scene, &long).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, refinement);
criterion_main!(benches);
