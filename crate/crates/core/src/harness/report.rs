use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::harness::spec::Method;

/// `final_above / initial_above`, with `0 / 0 = 1` and `x / 0 = ∞`.
pub fn relative_improvement(initial_above: usize, final_above: usize) -> f64 {
    match (initial_above, final_above) {
        (0, 0) => 1.0,
        (0, _) => f64::INFINITY,
        (i, f) => f as f64 / i as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGrasp {
    /// Index of the grasp within the refined batch.
    pub index: usize,
    pub joint: f64,
}

/// Metrics of one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub repetition: usize,
    pub seed: u64,
    /// Rotation applied to the scene objects about the vertical, radians.
    pub object_yaw: f64,
    /// Grasps refined.
    pub batch: usize,
    /// Grasps entering the final metrics (a subset for `mh_v1`).
    pub reported: usize,
    pub initial_mean_d: f64,
    pub final_mean_d: f64,
    pub initial_above: usize,
    pub final_above: usize,
    pub relative_improvement: f64,
    pub wall_time_s: f64,
    pub value_calls: u64,
    pub gradient_calls: u64,
    pub budget: u64,
    pub flagged_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    pub initial_scores: BTreeMap<String, f64>,
    pub final_scores: BTreeMap<String, f64>,
    /// Reported grasps by final `D`, best first.
    pub ranking: Vec<RankedGrasp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_initial_d: f64,
    pub mean_final_d: f64,
    /// Pooled over repetitions: total final above `τ` over total initial.
    pub relative_improvement: f64,
    pub wall_time_s: f64,
    pub budget: u64,
    /// Entry `k − 1`: fraction of repetitions whose top `k` ranked grasps
    /// contain one above `τ`.
    pub success_by_attempt: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub method: Method,
    pub classifiers: String,
    pub threshold: f64,
    pub seed: u64,
    pub aggregate: Aggregate,
    pub runs: Vec<RunMetrics>,
}

/// For `k = 1..=K`, the fraction of runs whose `k` best-ranked grasps include
/// one with `D > τ`. `K` is the longest ranking.
pub fn success_by_attempt(report: &MetricsReport, threshold: f64) -> Vec<f64> {
    let runs = &report.runs;
    let longest = runs.iter().map(|r| r.ranking.len()).max().unwrap_or(0);
    if runs.is_empty() {
        return Vec::new();
    }
    // First rank (1-based) at which each run succeeds.
    let first: Vec<Option<usize>> = runs
        .iter()
        .map(|r| r.ranking.iter().position(|g| g.joint > threshold).map(|i| i + 1))
        .collect();
    (1..=longest)
        .map(|k| first.iter().filter(|f| matches!(f, Some(i) if *i <= k)).count() as f64 / runs.len() as f64)
        .collect()
}

impl MetricsReport {
    pub(crate) fn assemble(
        experiment: String,
        method: Method,
        classifiers: String,
        threshold: f64,
        seed: u64,
        runs: Vec<RunMetrics>,
    ) -> Self {
        let n = runs.len() as f64;
        let initial_above: usize = runs.iter().map(|r| r.initial_above).sum();
        let final_above: usize = runs.iter().map(|r| r.final_above).sum();
        let mut report = MetricsReport {
            experiment,
            method,
            classifiers,
            threshold,
            seed,
            aggregate: Aggregate {
                mean_initial_d: runs.iter().map(|r| r.initial_mean_d).sum::<f64>() / n,
                mean_final_d: runs.iter().map(|r| r.final_mean_d).sum::<f64>() / n,
                relative_improvement: relative_improvement(initial_above, final_above),
                wall_time_s: runs.iter().map(|r| r.wall_time_s).sum(),
                budget: runs.iter().map(|r| r.budget).sum(),
                success_by_attempt: Vec::new(),
            },
            runs,
        };
        report.aggregate.success_by_attempt = success_by_attempt(&report, threshold);
        report
    }

    /// The report with every wall-time field zeroed, for reproducibility
    /// comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.aggregate.wall_time_s = 0.0;
        r.runs.iter_mut().for_each(|run| run.wall_time_s = 0.0);
        r
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::error::parse_toml(&read_to_string(path)?, &path.display().to_string())
    }

    /// Flat per-run table, one row per repetition.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for run in &self.runs {
            w.serialize(TableRow::new(self, run))
                .map_err(|e| Error::Serialize(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[derive(Serialize)]
struct TableRow<'a> {
    experiment: &'a str,
    method: &'a str,
    classifiers: &'a str,
    repetition: usize,
    seed: u64,
    batch: usize,
    initial_mean_d: f64,
    final_mean_d: f64,
    initial_above: usize,
    final_above: usize,
    relative_improvement: f64,
    wall_time_s: f64,
    value_calls: u64,
    gradient_calls: u64,
    budget: u64,
}

impl<'a> TableRow<'a> {
    fn new(report: &'a MetricsReport, run: &RunMetrics) -> Self {
        Self {
            experiment: &report.experiment,
            method: report.method.label(),
            classifiers: &report.classifiers,
            repetition: run.repetition,
            seed: run.seed,
            batch: run.batch,
            initial_mean_d: run.initial_mean_d,
            final_mean_d: run.final_mean_d,
            initial_above: run.initial_above,
            final_above: run.final_above,
            relative_improvement: run.relative_improvement,
            wall_time_s: run.wall_time_s,
            value_calls: run.value_calls,
            gradient_calls: run.gradient_calls,
            budget: run.budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(joints: &[f64], initial_above: usize) -> RunMetrics {
        let mut ranking: Vec<RankedGrasp> = joints
            .iter()
            .enumerate()
            .map(|(index, &joint)| RankedGrasp { index, joint })
            .collect();
        ranking.sort_by(|a, b| b.joint.total_cmp(&a.joint));
        let final_above = joints.iter().filter(|&&d| d > 0.5).count();
        RunMetrics {
            repetition: 0,
            seed: 0,
            object_yaw: 0.0,
            batch: joints.len(),
            reported: joints.len(),
            initial_mean_d: 0.1,
            final_mean_d: joints.iter().sum::<f64>() / joints.len() as f64,
            initial_above,
            final_above,
            relative_improvement: relative_improvement(initial_above, final_above),
            wall_time_s: 1.5,
            value_calls: 1,
            gradient_calls: 2,
            budget: 7,
            flagged_steps: 0,
            acceptance_rate: None,
            initial_scores: BTreeMap::from([("stability".to_owned(), 0.1)]),
            final_scores: BTreeMap::from([("stability".to_owned(), 0.4)]),
            ranking,
        }
    }

    fn report(runs: Vec<RunMetrics>) -> MetricsReport {
        MetricsReport::assemble("t".into(), Method::Flow, "S".into(), 0.5, 0, runs)
    }

    #[test]
    fn improvement_ratio_rules() {
        assert_eq!(relative_improvement(0, 0), 1.0);
        assert_eq!(relative_improvement(0, 3), f64::INFINITY);
        assert_eq!(relative_improvement(4, 6), 1.5);
        assert_eq!(relative_improvement(4, 0), 0.0);
    }

    #[test]
    fn success_curves() {
        let all = report(vec![run(&[0.9, 0.8], 1), run(&[0.7, 0.6], 1)]);
        assert_eq!(success_by_attempt(&all, 0.5), vec![1.0, 1.0]);
        let none = report(vec![run(&[0.1, 0.2], 0), run(&[0.3], 0)]);
        assert_eq!(success_by_attempt(&none, 0.5), vec![0.0, 0.0]);
        let mixed = report(vec![run(&[0.9, 0.1, 0.1], 1), run(&[0.1, 0.2, 0.3], 0)]);
        let curve = success_by_attempt(&mixed, 0.5);
        assert_eq!(curve, vec![0.5, 0.5, 0.5]);
        assert!(curve.windows(2).all(|w| w[1] >= w[0]));
        let late = report(vec![run(&[0.6, 0.45, 0.4], 0)]);
        assert_eq!(success_by_attempt(&late, 0.42), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn aggregate_pools_counts() {
        let r = report(vec![run(&[0.9, 0.8], 1), run(&[0.1, 0.2], 0)]);
        assert_eq!(r.aggregate.relative_improvement, 2.0);
        assert_eq!(r.aggregate.budget, 14);
        assert_eq!(r.without_timing().aggregate.wall_time_s, 0.0);
        assert!(r.without_timing().runs.iter().all(|x| x.wall_time_s == 0.0));
    }

    #[test]
    fn toml_and_csv_output() {
        let r = report(vec![run(&[0.9, 0.8], 0)]);
        let text = r.to_toml_string().unwrap();
        assert!(text.contains("relative_improvement = inf"));
        let back: MetricsReport = toml::from_str(&text).unwrap();
        assert_eq!(back, r);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("experiment,method,classifiers,repetition"));
    }
}
