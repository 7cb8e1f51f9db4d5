//! The three localization engines, accuracy scoring, timing, and the
//! experiment grid behind `rinn report`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::features::{features_at, l_max, occurrences, Occurrences, TUPLE};
use crate::mlp::{self, Mlp, MlpError, TrainConfig, TrainReport, HIDDEN};
use crate::monitoring::{
    self, generate_dataset, Dataset, GeneratorConfig, MonitorSnapshot, MonitoringError, Sample,
};
use crate::physical::{FailureClass, PowerModel};
use crate::provisioning::Lightpath;
use crate::rules::{self, LabelledSnapshot, SuspectPartition, ThresholdTable, DEFAULT_WINDOW};
use crate::seed;
use crate::topology::{ComponentGraph, ComponentId, Topology};

/// Inclusion probability of each suspect in the rules benchmark.
pub const RULES_PICK_PROBABILITY: f64 = 0.5;
/// Extra healthy components per sample in the all-component training set.
pub const ANN_NEGATIVES: usize = 16;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Monitoring(#[from] MonitoringError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("{predicted} predictions for {truths} ground truths")]
    LengthMismatch { predicted: usize, truths: usize },
    #[error("model io: {0}")]
    Io(String),
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Rules,
    Ann,
    Rinn,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Rules, Engine::Ann, Engine::Rinn];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Rules => "rules",
            Engine::Ann => "ann",
            Engine::Rinn => "rinn",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub engine: Engine,
    pub predicted: BTreeSet<ComponentId>,
    pub inference_s: f64,
}

/// Everything an engine needs about one monitored network.
pub struct Context<'a> {
    pub graph: &'a ComponentGraph,
    pub lightpaths: &'a [Lightpath],
    pub pre: &'a MonitorSnapshot,
    pub thresholds: &'a ThresholdTable,
    pub occurrences: Occurrences,
}

impl<'a> Context<'a> {
    pub fn new(
        graph: &'a ComponentGraph,
        lightpaths: &'a [Lightpath],
        pre: &'a MonitorSnapshot,
        thresholds: &'a ThresholdTable,
    ) -> Self {
        Context {
            graph,
            lightpaths,
            pre,
            thresholds,
            occurrences: occurrences(lightpaths),
        }
    }

    pub fn features(
        &self,
        component: ComponentId,
        post: &MonitorSnapshot,
        l_max: usize,
    ) -> Vec<f64> {
        let occ = self
            .occurrences
            .get(&component)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        features_at(occ, self.lightpaths, self.pre, post, l_max)
    }

    pub fn reason(&self, post: &MonitorSnapshot) -> SuspectPartition {
        rules::reason(self.graph, self.lightpaths, post, self.thresholds)
    }
}

/// Thresholds for a dataset's network, calibrated on `window` healthy epochs.
pub fn calibrate(dataset: &Dataset, graph: &ComponentGraph, window: usize) -> ThresholdTable {
    let history = monitoring::healthy_window(
        graph,
        &dataset.lightpaths,
        &dataset.deployment,
        &dataset.meta.power_model,
        window,
        seed::derive(dataset.meta.seed, "calibration"),
    );
    let labelled: Vec<LabelledSnapshot<'_>> = history
        .iter()
        .map(|s| LabelledSnapshot {
            snapshot: s,
            failed: BTreeSet::new(),
        })
        .collect();
    rules::fit_thresholds(
        graph,
        &dataset.lightpaths,
        &labelled,
        &dataset.meta.power_model,
        window,
    )
    .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub engine: Engine,
    pub opm_percent: u32,
    pub l_max: usize,
    pub train: TrainConfig,
    pub pairs: usize,
    pub final_loss: f64,
    pub mlp: Mlp,
}

impl ModelFile {
    pub fn file_name(engine: Engine, opm_percent: u32) -> String {
        format!("model-{}-opm{}.json", engine.name(), opm_percent)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string(self).expect("model serializes");
        crate::util::write_atomic(path, text.as_bytes())
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Format(e.to_string()))
    }

    pub fn is_faulty(&self, features: &[f64]) -> bool {
        self.mlp
            .is_faulty(features)
            .expect("features sized for the model")
    }
}

/// Suspect components of every sample, labelled by ground truth.
pub fn rinn_pairs(ctx: &Context<'_>, samples: &[Sample], l_max: usize) -> Vec<(Vec<f64>, f64)> {
    samples
        .par_iter()
        .flat_map_iter(|s| {
            let truth = s.truth();
            let part = ctx.reason(&s.post);
            part.suspect
                .into_iter()
                .map(|c| {
                    (
                        ctx.features(c, &s.post, l_max),
                        truth.contains(&c) as u8 as f64,
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Failed components of every sample plus healthy ones: half drawn from the
/// components that sit downstream of a failure (or right before one) on a
/// lightpath carrying it, half from anywhere.
pub fn ann_pairs(
    ctx: &Context<'_>,
    samples: &[Sample],
    l_max: usize,
    negatives: usize,
    seed_root: u64,
) -> Vec<(Vec<f64>, f64)> {
    let everything: Vec<ComponentId> = ctx.occurrences.keys().copied().collect();
    samples
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, s)| {
            let mut rng = seed::rng_indexed(seed_root, "ann-negatives", k as u64);
            let truth = s.truth();
            let mut near = BTreeSet::new();
            for lp in ctx.lightpaths {
                if let Some(first) = lp.components.iter().position(|c| truth.contains(c)) {
                    near.extend(lp.components[first.saturating_sub(1)..].iter().copied());
                }
            }
            let near: Vec<ComponentId> = near.into_iter().filter(|c| !truth.contains(c)).collect();
            let mut picked: BTreeSet<ComponentId> = near
                .choose_multiple(&mut rng, negatives / 2)
                .copied()
                .collect();
            let mut guard = 0;
            while picked.len() < negatives && guard < 20 * negatives {
                guard += 1;
                let c = everything[rng.gen_range(0..everything.len())];
                if !truth.contains(&c) {
                    picked.insert(c);
                }
            }
            let mut out: Vec<(Vec<f64>, f64)> = truth
                .iter()
                .map(|&c| (ctx.features(c, &s.post, l_max), 1.0))
                .collect();
            out.extend(
                picked
                    .into_iter()
                    .map(|c| (ctx.features(c, &s.post, l_max), 0.0)),
            );
            out
        })
        .collect()
}

/// Builds the training pairs for `engine` and fits a fresh model. With no
/// pairs the freshly initialised model is returned untrained.
pub fn train_model(
    engine: Engine,
    ctx: &Context<'_>,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelFile, TrainReport), PipelineError> {
    let lm = l_max(&dataset.lightpaths).max(1);
    let pairs = match engine {
        Engine::Rinn => rinn_pairs(ctx, &dataset.samples, lm),
        Engine::Ann | Engine::Rules => ann_pairs(
            ctx,
            &dataset.samples,
            lm,
            ANN_NEGATIVES,
            seed::derive(cfg.seed, "pairs"),
        ),
    };
    let mut model = Mlp::new(TUPLE * lm, HIDDEN, &mut seed::rng(cfg.seed, engine.name()));
    let report = mlp::train(&mut model, &pairs, cfg)?;
    Ok((
        ModelFile {
            engine,
            opm_percent: dataset.meta.opm_percent(),
            l_max: lm,
            train: *cfg,
            pairs: pairs.len(),
            final_loss: report.final_loss,
            mlp: model,
        },
        report,
    ))
}

pub fn rules_benchmark<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    post: &MonitorSnapshot,
    p: f64,
    rng: &mut R,
) -> LocalizationResult {
    let start = Instant::now();
    let part = ctx.reason(post);
    let mut predicted = part.faulty;
    predicted.extend(part.suspect.into_iter().filter(|_| rng.gen_bool(p)));
    LocalizationResult {
        engine: Engine::Rules,
        predicted,
        inference_s: start.elapsed().as_secs_f64(),
    }
}

pub fn ann_benchmark(
    ctx: &Context<'_>,
    post: &MonitorSnapshot,
    model: &ModelFile,
) -> LocalizationResult {
    let start = Instant::now();
    let predicted = ctx
        .occurrences
        .keys()
        .copied()
        .filter(|&c| model.is_faulty(&ctx.features(c, post, model.l_max)))
        .collect();
    LocalizationResult {
        engine: Engine::Ann,
        predicted,
        inference_s: start.elapsed().as_secs_f64(),
    }
}

pub fn rinn_localize(
    ctx: &Context<'_>,
    post: &MonitorSnapshot,
    model: &ModelFile,
) -> LocalizationResult {
    let start = Instant::now();
    let part = ctx.reason(post);
    let mut predicted = part.faulty;
    predicted.extend(
        part.suspect
            .into_iter()
            .filter(|&c| model.is_faulty(&ctx.features(c, post, model.l_max))),
    );
    LocalizationResult {
        engine: Engine::Rinn,
        predicted,
        inference_s: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub complete: f64,
    pub partial: f64,
    pub total: f64,
    pub samples: usize,
}

/// Exact match counts as complete. Overlap without exact match counts as
/// partial, except for single-failure truths, which have no partial credit.
pub fn score(
    predicted: &[BTreeSet<ComponentId>],
    truths: &[BTreeSet<ComponentId>],
) -> Result<AccuracyReport, PipelineError> {
    if predicted.len() != truths.len() {
        return Err(PipelineError::LengthMismatch {
            predicted: predicted.len(),
            truths: truths.len(),
        });
    }
    let (mut complete, mut partial) = (0usize, 0usize);
    for (p, t) in predicted.iter().zip(truths) {
        if p == t {
            complete += 1;
        } else if t.len() >= 2 && !p.is_disjoint(t) {
            partial += 1;
        }
    }
    let n = truths.len().max(1) as f64;
    let (c, p) = (complete as f64 / n, partial as f64 / n);
    Ok(AccuracyReport {
        complete: c,
        partial: p,
        total: c + p,
        samples: truths.len(),
    })
}

/// Runs one engine on every sample. `model` is ignored for the rules
/// benchmark and required otherwise.
pub fn evaluate(
    engine: Engine,
    ctx: &Context<'_>,
    samples: &[Sample],
    model: Option<&ModelFile>,
    seed_root: u64,
) -> Vec<LocalizationResult> {
    samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| match engine {
            Engine::Rules => {
                let mut rng = seed::rng_indexed(seed_root, "rules-pick", k as u64);
                rules_benchmark(ctx, &s.post, RULES_PICK_PROBABILITY, &mut rng)
            }
            Engine::Ann => ann_benchmark(ctx, &s.post, model.expect("ann needs a model")),
            Engine::Rinn => rinn_localize(ctx, &s.post, model.expect("rinn needs a model")),
        })
        .collect()
}

pub fn score_results(results: &[LocalizationResult], samples: &[Sample]) -> AccuracyReport {
    let predicted: Vec<_> = results.iter().map(|r| r.predicted.clone()).collect();
    let truths: Vec<_> = samples.iter().map(Sample::truth).collect();
    score(&predicted, &truths).expect("one result per sample")
}

/// Mean wall-clock seconds per sample, single-threaded, after one warm-up
/// call.
pub fn measure_inference(
    engine: Engine,
    ctx: &Context<'_>,
    samples: &[Sample],
    model: Option<&ModelFile>,
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut rng = seed::rng(0, "timing");
    let run = |s: &Sample, rng: &mut seed::StageRng| match engine {
        Engine::Rules => rules_benchmark(ctx, &s.post, RULES_PICK_PROBABILITY, rng),
        Engine::Ann => ann_benchmark(ctx, &s.post, model.expect("model")),
        Engine::Rinn => rinn_localize(ctx, &s.post, model.expect("model")),
    };
    let _ = run(&samples[0], &mut rng);
    let start = Instant::now();
    for s in samples {
        std::hint::black_box(run(s, &mut rng));
    }
    start.elapsed().as_secs_f64() / samples.len() as f64
}

pub fn mean_suspect_ratio(ctx: &Context<'_>, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .par_iter()
        .map(|s| ctx.reason(&s.post).suspect_ratio())
        .sum();
    sum / samples.len() as f64
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lp_count: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub opm_percents: Vec<u32>,
    pub failure_sets: Vec<Vec<usize>>,
    /// OPM percentage used for the failure-type and lightpath-count families.
    pub fixed_opm_percent: u32,
    pub lp_counts: Vec<usize>,
    pub power_model: PowerModel,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            lp_count: 100,
            train_samples: 1000,
            test_samples: 1000,
            opm_percents: vec![20, 40, 60, 80, 100],
            failure_sets: vec![vec![1], vec![2], vec![3], vec![1, 2, 3]],
            fixed_opm_percent: 60,
            lp_counts: vec![20, 40, 60, 80, 100],
            power_model: PowerModel::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub family: &'static str,
    pub opm_percent: u32,
    pub failures: String,
    pub failure_type: String,
    pub lp_count: usize,
    pub engine: Engine,
    pub complete: f64,
    pub partial: f64,
    pub total: f64,
    pub suspect_ratio: f64,
    pub mean_time_ms: f64,
    pub samples: usize,
}

pub const REPORT_HEADER: &str = "family,opm_percent,failures,failure_type,lp_count,engine,complete,partial,total,suspect_ratio,mean_time_ms,samples";

impl ReportRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            self.family,
            self.opm_percent,
            self.failures,
            self.failure_type,
            self.lp_count,
            self.engine,
            self.complete,
            self.partial,
            self.total,
            self.suspect_ratio,
            self.mean_time_ms,
            self.samples
        )
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

pub fn failures_label(set: &[usize]) -> String {
    set.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("+")
}

/// Trained models for one OPM percentage.
pub struct TrainedPair {
    pub rinn: ModelFile,
    pub ann: ModelFile,
    pub rinn_report: TrainReport,
    pub ann_report: TrainReport,
}

/// Generates the mixed-failure training set at `opm_percent` and trains both
/// networks on it.
pub fn train_for_opm(
    topology: &Topology,
    cfg: &ExperimentConfig,
    opm_percent: u32,
) -> Result<TrainedPair, PipelineError> {
    let data = generate_dataset(
        topology,
        &GeneratorConfig {
            lp_count: cfg.lp_count,
            samples: cfg.train_samples,
            n_f_set: vec![1, 2, 3],
            type_filter: None,
            opm_fraction: opm_percent as f64 / 100.0,
            power_model: cfg.power_model,
            wavelengths: crate::provisioning::DEFAULT_WAVELENGTHS,
            seed: seed::derive_indexed(cfg.seed, "train", opm_percent as u64),
        },
    )?;
    let graph = data.graph()?;
    let th = calibrate(&data, &graph, DEFAULT_WINDOW);
    let ctx = Context::new(&graph, &data.lightpaths, &data.pre, &th);
    let (rinn, rinn_report) = train_model(Engine::Rinn, &ctx, &data, &cfg.train)?;
    let (ann, ann_report) = train_model(Engine::Ann, &ctx, &data, &cfg.train)?;
    Ok(TrainedPair {
        rinn,
        ann,
        rinn_report,
        ann_report,
    })
}

struct TestCase<'a> {
    family: &'static str,
    opm_percent: u32,
    failures: Vec<usize>,
    class: Option<FailureClass>,
    lp_count: usize,
    models: &'a TrainedPair,
    timed: bool,
}

fn run_case(
    topology: &Topology,
    cfg: &ExperimentConfig,
    case: &TestCase<'_>,
    index: u64,
) -> Result<Vec<ReportRow>, PipelineError> {
    let data = generate_dataset(
        topology,
        &GeneratorConfig {
            lp_count: case.lp_count,
            samples: cfg.test_samples,
            n_f_set: case.failures.clone(),
            type_filter: case.class,
            opm_fraction: case.opm_percent as f64 / 100.0,
            power_model: cfg.power_model,
            wavelengths: crate::provisioning::DEFAULT_WAVELENGTHS,
            seed: seed::derive_indexed(cfg.seed, "test", index),
        },
    )?;
    let graph = data.graph()?;
    let th = calibrate(&data, &graph, DEFAULT_WINDOW);
    let ctx = Context::new(&graph, &data.lightpaths, &data.pre, &th);
    let ratio = mean_suspect_ratio(&ctx, &data.samples);
    let mut rows = Vec::new();
    for engine in Engine::ALL {
        let model = match engine {
            Engine::Rules => None,
            Engine::Ann => Some(&case.models.ann),
            Engine::Rinn => Some(&case.models.rinn),
        };
        let results = evaluate(
            engine,
            &ctx,
            &data.samples,
            model,
            seed::derive_indexed(cfg.seed, "eval", index),
        );
        let acc = score_results(&results, &data.samples);
        let time = if case.timed {
            measure_inference(engine, &ctx, &data.samples, model)
        } else {
            0.0
        };
        rows.push(ReportRow {
            family: case.family,
            opm_percent: case.opm_percent,
            failures: failures_label(&case.failures),
            failure_type: case.class.map_or("all".into(), |c| c.name().into()),
            lp_count: case.lp_count,
            engine,
            complete: acc.complete,
            partial: acc.partial,
            total: acc.total,
            suspect_ratio: ratio,
            mean_time_ms: time * 1e3,
            samples: acc.samples,
        });
    }
    Ok(rows)
}

/// Accuracy against OPM percentage and failure count, against failure type,
/// and against lightpath count (with inference time).
pub fn run_report(
    topology: &Topology,
    cfg: &ExperimentConfig,
) -> Result<Vec<ReportRow>, PipelineError> {
    let mut percents = cfg.opm_percents.clone();
    if !percents.contains(&cfg.fixed_opm_percent) {
        percents.push(cfg.fixed_opm_percent);
    }
    let mut trained = Vec::new();
    for &p in &percents {
        trained.push((p, train_for_opm(topology, cfg, p)?));
    }
    let models_at = |p: u32| &trained.iter().find(|(q, _)| *q == p).expect("trained").1;
    let mut cases = Vec::new();
    for &p in &cfg.opm_percents {
        for set in &cfg.failure_sets {
            cases.push(TestCase {
                family: "opm",
                opm_percent: p,
                failures: set.clone(),
                class: None,
                lp_count: cfg.lp_count,
                models: models_at(p),
                timed: false,
            });
        }
    }
    for class in FailureClass::ALL {
        for set in &cfg.failure_sets {
            cases.push(TestCase {
                family: "type",
                opm_percent: cfg.fixed_opm_percent,
                failures: set.clone(),
                class: Some(class),
                lp_count: cfg.lp_count,
                models: models_at(cfg.fixed_opm_percent),
                timed: false,
            });
        }
    }
    for &n in &cfg.lp_counts {
        cases.push(TestCase {
            family: "lps",
            opm_percent: cfg.fixed_opm_percent,
            failures: vec![1, 2, 3],
            class: None,
            lp_count: n,
            models: models_at(cfg.fixed_opm_percent),
            timed: true,
        });
    }
    let mut rows = Vec::new();
    for (k, case) in cases.iter().enumerate() {
        rows.extend(run_case(topology, cfg, case, k as u64)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u32]) -> BTreeSet<ComponentId> {
        v.iter().copied().collect()
    }

    #[test]
    fn scoring_rules() {
        let r = score(&[set(&[1, 2]), set(&[1])], &[set(&[1, 2]), set(&[1, 2, 3])]).unwrap();
        assert_eq!((r.complete, r.partial, r.total), (0.5, 0.5, 1.0));
        let r = score(&[set(&[2])], &[set(&[1])]).unwrap();
        assert_eq!(r.total, 0.0);
        // no partial credit on a single failure, even when it was found
        let r = score(&[set(&[1, 2])], &[set(&[1])]).unwrap();
        assert_eq!((r.complete, r.partial), (0.0, 0.0));
        // a superset of a multi-failure truth is partial
        let r = score(&[set(&[1, 2, 9])], &[set(&[1, 2])]).unwrap();
        assert_eq!(r.partial, 1.0);
        assert!(matches!(
            score(&[], &[set(&[1])]),
            Err(PipelineError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn csv_row_shape() {
        let row = ReportRow {
            family: "opm",
            opm_percent: 60,
            failures: failures_label(&[1, 2, 3]),
            failure_type: "all".into(),
            lp_count: 100,
            engine: Engine::Rinn,
            complete: 0.5,
            partial: 0.25,
            total: 0.75,
            suspect_ratio: 0.1,
            mean_time_ms: 1.5,
            samples: 10,
        };
        assert_eq!(
            row.csv(),
            "opm,60,1+2+3,all,100,rinn,0.5000,0.2500,0.7500,0.1000,1.5000,10"
        );
        assert_eq!(
            REPORT_HEADER.split(',').count(),
            row.csv().split(',').count()
        );
    }
}
