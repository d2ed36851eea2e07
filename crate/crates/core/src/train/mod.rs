//! Training loops, evaluation, replicate statistics and checkpoints.

pub mod analysis;
pub mod checkpoint;
pub mod plan;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::augment;
use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::grad::{
    backward_pruned_thresholded, example_gradients, find_threshold_for_fraction, for_each_conv_route,
    threshold_for_fraction, threshold_gradients, Engine, ExampleGrad, GradBundle, SparsityStats,
};
use crate::models::{tree3_forward, Model};
use crate::optim::{schedule_alpha, schedule_eta, sgd_nesterov_step, OptimizerState};
use crate::rng::{keyed, Stream};
use crate::tensor::{argmax, softmax_xent, Activation};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use plan::{builtin_plans, plan_by_name, Mode, Threshold, TrainPlan};

/// Examples per work unit. Fixed so that reductions do not depend on the
/// number of threads.
const CHUNK: usize = 10;
/// Steps between re-derivations of θ for an active-fraction threshold.
const RECALIBRATE_EVERY: u64 = 50;
/// Examples used to derive θ.
const CALIBRATION_EXAMPLES: usize = 16;

/// One optimizer step's worth of bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub loss_sum: f64,
    pub examples: usize,
    pub sparsity: SparsityStats,
}

/// Owns the model and optimizer state of a run and applies mini-batch steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    plan: TrainPlan,
    model: Model<f32>,
    state: OptimizerState<f32>,
    engine: Engine,
    theta: Option<f64>,
    steps: u64,
}

impl Trainer {
    pub fn new(plan: &TrainPlan) -> Result<Self> {
        plan.validate()?;
        let model = Model::init(&plan.model_spec(), plan.seed, plan.init)?;
        Self::with_model(plan, model)
    }

    pub fn with_model(plan: &TrainPlan, model: Model<f32>) -> Result<Self> {
        if model.spec() != plan.model_spec() {
            return Err(Error::ConfigMismatch(format!(
                "plan `{}` describes `{}`, the model is `{}`",
                plan.name,
                plan.model_spec().describe(),
                model.spec().describe()
            )));
        }
        let state = OptimizerState::new(&model.tensors());
        let engine = Engine::select(plan.pruned_bp, &model);
        let theta = match plan.threshold {
            Some(Threshold::Theta(t)) => Some(t),
            _ => None,
        };
        Ok(Trainer {
            plan: plan.clone(),
            model,
            state,
            engine,
            theta,
            steps: 0,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn engine(&self) -> Engine {
        self.engine
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Current gradient threshold, if any.
    pub fn theta(&self) -> Option<f64> {
        self.theta
    }

    fn route_level_threshold(&self) -> bool {
        matches!(&self.model, Model::Tree3 { config, .. } if config.activation == Activation::Relu)
    }

    fn example(&self, img: &LabeledImage) -> Result<ExampleGrad<f32>> {
        let label = img.label as usize;
        match (self.theta, &self.model) {
            (Some(theta), Model::Tree3 { config, params }) if self.route_level_threshold() => {
                let trace = tree3_forward(params, config, &img.pixels)?;
                let (loss, _) = softmax_xent(&trace.logits, label)?;
                let bundle = backward_pruned_thresholded(params, config, &trace, label, theta)?;
                Ok(ExampleGrad {
                    loss,
                    logits: trace.logits,
                    bundle,
                })
            }
            (Some(theta), _) => {
                let mut g = example_gradients(&self.model, &img.pixels, label, self.engine)?;
                g.bundle = threshold_gradients(&g.bundle, theta)?.0;
                Ok(g)
            }
            (None, _) => example_gradients(&self.model, &img.pixels, label, self.engine),
        }
    }

    /// Derives θ so that `target` of all gradient instances on `sample` stay active.
    pub fn calibrate(&mut self, sample: &[LabeledImage], target: f64) -> Result<f64> {
        let theta = if self.route_level_threshold() {
            let Model::Tree3 { config, params } = &self.model else { unreachable!() };
            let mut mags = Vec::new();
            let mut total = 0usize;
            for img in sample {
                let label = img.label as usize;
                let trace = tree3_forward(params, config, &img.pixels)?;
                for_each_conv_route(params, config, &trace, label, |r| mags.push(r.value.abs()))?;
                let b = example_gradients(&self.model, &img.pixels, label, Engine::Pruned)?.bundle;
                for (g, s) in b.grads.iter().zip(&b.stages) {
                    if *s != crate::grad::Stage::Conv {
                        mags.extend(g.data().iter().map(|x| f64::from(x.abs())));
                    }
                }
                let z = b.zero_counts;
                total += (z.conv.total + z.tree.total + z.fc.total) as usize;
            }
            threshold_for_fraction(&mut mags, total, target)?
        } else {
            let bundles = sample
                .iter()
                .map(|img| Ok(example_gradients(&self.model, &img.pixels, img.label as usize, self.engine)?.bundle))
                .collect::<Result<Vec<_>>>()?;
            find_threshold_for_fraction(&bundles, target)?
        };
        self.theta = Some(theta);
        Ok(theta)
    }

    /// One mini-batch step at the learning rate and decay of `epoch`.
    pub fn step(&mut self, batch: &[LabeledImage], epoch: usize) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty mini-batch".into()));
        }
        if let Some(Threshold::ActiveFraction(f)) = self.plan.threshold {
            if self.steps % RECALIBRATE_EVERY == 0 || self.theta.is_none() {
                self.calibrate(&batch[..batch.len().min(CALIBRATION_EXAMPLES)], f)?;
            }
        }
        let mut hp = self.plan.hyper_params();
        hp.eta = schedule_eta(&self.plan.schedule, epoch)?;
        hp.alpha = schedule_alpha(&self.plan.schedule, epoch, self.plan.alpha);

        let this = &*self;
        let partials: Vec<Result<(GradBundle<f32>, f64, SparsityStats)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut sum = GradBundle::zeros_like(&this.model);
                let mut loss = 0f64;
                let mut stats = SparsityStats::default();
                for img in chunk {
                    let g = this.example(img)?;
                    if !g.loss.is_finite() {
                        return Err(Error::NonFinite {
                            epoch,
                            step: this.steps as usize,
                        });
                    }
                    loss += f64::from(g.loss);
                    stats.push(&g.bundle.zero_counts);
                    sum.add_assign(&g.bundle)?;
                }
                Ok((sum, loss, stats))
            })
            .collect();
        let mut report = StepReport {
            examples: batch.len(),
            ..Default::default()
        };
        let mut total = GradBundle::zeros_like(&self.model);
        for p in partials {
            let (g, loss, stats) = p?;
            total.add_assign(&g)?;
            report.loss_sum += loss;
            report.sparsity.merge(&stats);
        }
        total.scale(1.0 / batch.len() as f32);
        sgd_nesterov_step(&mut self.model.tensors_mut(), &total.grads, &mut self.state, &hp)?;
        self.steps += 1;
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub lr: f64,
    pub zero_frac_conv: f64,
    pub zero_frac_tree: f64,
    pub zero_frac_fc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub plan_name: String,
    pub seed: u64,
    pub final_test_accuracy: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Zero-fraction statistics over the training examples of the last epoch.
    pub sparsity: SparsityStats,
    pub wall_time: f64,
    pub examples_seen: u64,
    /// Threshold in force at the end of the run, if any.
    pub final_theta: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Progress lines on stderr.
    pub verbose: bool,
    /// Evaluate on at most this many test examples per epoch.
    pub test_limit: Option<usize>,
}

/// Training examples the plan uses, in stored order.
pub fn training_subset(plan: &TrainPlan, train_set: &Dataset) -> Result<Dataset> {
    if train_set.kind() != plan.model_spec().dataset() {
        return Err(Error::ConfigMismatch(format!(
            "plan `{}` needs {:?} data, got {:?}",
            plan.name,
            plan.model_spec().dataset(),
            train_set.kind()
        )));
    }
    match plan.dataset_size {
        Some(n) if n > train_set.len() => Err(Error::Plan(format!(
            "plan `{}` wants {n} training examples, only {} available",
            plan.name,
            train_set.len()
        ))),
        Some(n) => Ok(train_set.head(n)),
        None => Ok(train_set.clone()),
    }
}

/// Visiting order of training examples in `epoch`.
pub fn epoch_order(plan: &TrainPlan, n: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if plan.mode == Mode::Offline {
        order.shuffle(&mut keyed(plan.seed, Stream::Shuffle, &[epoch as u64]));
    }
    order
}

/// The (augmented) example `index` as seen in `epoch`.
pub fn training_example(plan: &TrainPlan, data: &Dataset, index: usize, epoch: usize) -> LabeledImage {
    let img = data.get(index);
    let policy = plan.augment();
    if policy.is_identity() {
        return img;
    }
    augment(&img, &policy, &mut keyed(plan.seed, Stream::Augment, &[epoch as u64, index as u64]))
}

/// Runs a plan to completion and returns its metrics and final model.
pub fn train(plan: &TrainPlan, train_set: &Dataset, test_set: &Dataset, opts: &TrainOptions) -> Result<(RunResult, Model<f32>)> {
    let start = Instant::now();
    let data = training_subset(plan, train_set)?;
    let test = match opts.test_limit {
        Some(n) => test_set.head(n),
        None => test_set.clone(),
    };
    let mut trainer = Trainer::new(plan)?;
    let mut epochs = Vec::with_capacity(plan.epochs);
    let mut seen = 0u64;
    let mut last_sparsity = SparsityStats::default();
    for epoch in 0..plan.epochs {
        let order = epoch_order(plan, data.len(), epoch);
        let mut loss = 0f64;
        let mut sparsity = SparsityStats::default();
        for idx in order.chunks(plan.batch) {
            let batch: Vec<LabeledImage> = idx.iter().map(|&i| training_example(plan, &data, i, epoch)).collect();
            let r = trainer.step(&batch, epoch)?;
            loss += r.loss_sum;
            sparsity.merge(&r.sparsity);
            seen += r.examples as u64;
        }
        let test_accuracy = evaluate(trainer.model(), &test)?;
        let f = sparsity.fraction_zero();
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss / data.len() as f64,
            test_accuracy,
            lr: schedule_eta(&plan.schedule, epoch)?,
            zero_frac_conv: f[0],
            zero_frac_tree: f[1],
            zero_frac_fc: f[2],
        };
        if opts.verbose {
            eprintln!(
                "{} epoch {}/{}: loss {:.4} test acc {:.4} lr {} zero frac {:.3}/{:.3}/{:.3} ({:.0}s)",
                plan.name,
                m.epoch,
                plan.epochs,
                m.train_loss,
                m.test_accuracy,
                m.lr,
                f[0],
                f[1],
                f[2],
                start.elapsed().as_secs_f64()
            );
        }
        epochs.push(m);
        last_sparsity = sparsity;
    }
    let result = RunResult {
        plan_name: plan.name.clone(),
        seed: plan.seed,
        final_test_accuracy: epochs.last().map_or(0.0, |m| m.test_accuracy),
        epochs,
        sparsity: last_sparsity,
        wall_time: start.elapsed().as_secs_f64(),
        examples_seen: seen,
        final_theta: trainer.theta(),
    };
    Ok((result, trainer.into_model()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub examples: usize,
}

/// Accuracy and mean loss over a dataset.
pub fn evaluate_report(model: &Model<f32>, data: &Dataset) -> Result<EvalReport> {
    if data.kind() != model.spec().dataset() {
        return Err(Error::ConfigMismatch(format!(
            "model expects {:?} images, dataset holds {:?}",
            model.spec().dataset(),
            data.kind()
        )));
    }
    if data.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let parts: Vec<Result<(usize, f64)>> = (0..data.len())
        .collect::<Vec<_>>()
        .par_chunks(100)
        .map(|idx| {
            let mut correct = 0;
            let mut loss = 0f64;
            for &i in idx {
                let img = data.get(i);
                let logits = model.logits(&img.pixels)?;
                if argmax(logits.data()) == img.label as usize {
                    correct += 1;
                }
                loss += f64::from(softmax_xent(&logits, img.label as usize)?.0);
            }
            Ok((correct, loss))
        })
        .collect();
    let (mut correct, mut loss) = (0, 0f64);
    for p in parts {
        let (c, l) = p?;
        correct += c;
        loss += l;
    }
    Ok(EvalReport {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss / data.len() as f64,
        examples: data.len(),
    })
}

/// Fraction of examples whose arg-max logit is the label.
pub fn evaluate(model: &Model<f32>, data: &Dataset) -> Result<f64> {
    Ok(evaluate_report(model, data)?.accuracy)
}

/// Removes a seeded uniform sample of `n` examples and returns `(rest, sample)`.
pub fn split_validation(data: &Dataset, n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n > data.len() {
        return Err(Error::Invalid(format!(
            "validation split of {n} exceeds the {} available examples",
            data.len()
        )));
    }
    let mut picked = rand::seq::index::sample(&mut keyed(seed, Stream::Split, &[]), data.len(), n).into_vec();
    picked.sort_unstable();
    let mut taken = vec![false; data.len()];
    picked.iter().for_each(|&i| taken[i] = true);
    let rest: Vec<usize> = (0..data.len()).filter(|&i| !taken[i]).collect();
    Ok((data.select(&rest), data.select(&picked)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub seed: u64,
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub plan_name: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<ReplicateRun>,
}

impl ReplicateSummary {
    /// Summary over completed runs; failed runs are listed but not averaged.
    pub fn from_runs(plan_name: &str, runs: Vec<ReplicateRun>) -> Self {
        let acc: Vec<f64> = runs.iter().filter_map(|r| r.accuracy).collect();
        let n = acc.len();
        let mean = if n == 0 { f64::NAN } else { acc.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        ReplicateSummary {
            plan_name: plan_name.into(),
            n,
            mean,
            std,
            runs,
        }
    }
}

/// Trains `n` copies of `plan` with seeds `seed, seed+1, …`. A failing run is
/// recorded and the remaining runs still execute. `each` sees every finished run.
pub fn run_replicates(
    plan: &TrainPlan,
    n: usize,
    train_set: &Dataset,
    test_set: &Dataset,
    opts: &TrainOptions,
    mut each: impl FnMut(&TrainPlan, &Result<(RunResult, Model<f32>)>),
) -> Result<ReplicateSummary> {
    if n < 2 {
        return Err(Error::Invalid(format!("replicate statistics need at least 2 runs, got {n}")));
    }
    let mut runs = Vec::with_capacity(n);
    for i in 0..n {
        let p = TrainPlan {
            seed: plan.seed + i as u64,
            ..plan.clone()
        };
        let r = train(&p, train_set, test_set, opts);
        each(&p, &r);
        runs.push(match r {
            Ok((res, _)) => ReplicateRun {
                seed: p.seed,
                accuracy: Some(res.final_test_accuracy),
                error: None,
            },
            Err(e) => ReplicateRun {
                seed: p.seed,
                accuracy: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(ReplicateSummary::from_runs(&plan.name, runs))
}

pub fn write_metrics_csv(path: &Path, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    for m in &result.epochs {
        w.serialize(m).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Invalid(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::DatasetKind;
    use crate::models::{InitScheme, ModelSpec, Tree3Config};
    use crate::optim::Schedule;

    pub(crate) fn synthetic(kind: DatasetKind, n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = keyed(seed, Stream::Synthetic, &[]);
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        // Each class brightens its own horizontal stripe.
        let side = kind.side();
        let mut pixels = Vec::with_capacity(n * kind.image_len());
        for &l in &labels {
            for _ in 0..kind.channels() {
                for y in 0..side {
                    for _ in 0..side {
                        let stripe = y * 10 / side == l as usize;
                        let base = if stripe { 200 } else { 40 };
                        pixels.push(base + rng.random_range(0..40u8));
                    }
                }
            }
        }
        Dataset::from_raw(kind, pixels, labels).unwrap()
    }

    fn tiny_plan() -> TrainPlan {
        TrainPlan {
            name: "tiny".into(),
            k: 2,
            m: 2,
            geometry: crate::models::Geometry::Mnist,
            epochs: 2,
            batch: 10,
            eta: 0.05,
            schedule: Schedule::constant(0.05),
            dataset_size: None,
            augment_shift: 2,
            ..plan_by_name("tree3-mnist").unwrap()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = synthetic(DatasetKind::Mnist, 40, 1);
        let plan = TrainPlan {
            schedule: Schedule::constant(0.0),
            alpha: 0.0,
            ..tiny_plan()
        };
        let init = Model::<f32>::init(&plan.model_spec(), plan.seed, InitScheme::He).unwrap();
        let (r, m) = train(&plan, &data, &data, &TrainOptions::default()).unwrap();
        assert_eq!(m, init);
        assert_eq!(r.epochs.len(), 2);
        assert_eq!(r.examples_seen, 80);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = synthetic(DatasetKind::Mnist, 200, 2);
        let plan = TrainPlan { epochs: 3, ..tiny_plan() };
        let (a, ma) = train(&plan, &data, &data, &TrainOptions::default()).unwrap();
        let (b, mb) = train(&plan, &data, &data, &TrainOptions::default()).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(ma, mb);
        assert!(a.epochs[2].train_loss < a.epochs[0].train_loss, "{:?}", a.epochs);
        assert!(a.final_test_accuracy > 0.25, "{:?}", a.epochs);
    }

    #[test]
    fn online_mode_visits_each_example_once() {
        let data = synthetic(DatasetKind::Mnist, 50, 3);
        let plan = TrainPlan {
            mode: Mode::Online,
            epochs: 1,
            dataset_size: Some(30),
            ..tiny_plan()
        };
        assert_eq!(epoch_order(&plan, 30, 0), (0..30).collect::<Vec<_>>());
        let (r, _) = train(&plan, &data, &data, &TrainOptions::default()).unwrap();
        assert_eq!(r.examples_seen, 30);
        let offline = epoch_order(&tiny_plan(), 30, 0);
        let mut sorted = offline.clone();
        sorted.sort();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
        assert_ne!(offline, sorted);
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let data = synthetic(DatasetKind::Mnist, 20, 4);
        let plan = tiny_plan();
        let mut t = Trainer::new(&plan).unwrap();
        t.model.tensors_mut()[2].data_mut()[0] = f32::NAN;
        let batch: Vec<_> = data.iter().take(10).collect();
        let err = t.step(&batch, 3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { epoch: 3, step: 0 }), "{err}");
    }

    #[test]
    fn dominated_output_predicts_one_class() {
        let data = synthetic(DatasetKind::Mnist, 57, 5);
        let cfg = Tree3Config::mnist(2, 2, Activation::Relu);
        let mut model = Model::<f32>::init(&ModelSpec::Tree3(cfg), 1, InitScheme::He).unwrap();
        if let Model::Tree3 { params, .. } = &mut model {
            // Tree outputs are nonnegative; make class 3 win whenever any is positive.
            let fc = params.heads[0].w_fc.data_mut();
            for u in 0..cfg.tree_units() {
                for o in 0..10 {
                    fc[u * 10 + o] = if o == 3 { 1e3 } else { 0.0 };
                }
            }
        }
        let acc = evaluate(&model, &data).unwrap();
        assert_eq!(acc, data.class_frequency(3));
        assert_eq!(acc, evaluate(&model, &data).unwrap());
    }

    #[test]
    fn validation_split() {
        let data = synthetic(DatasetKind::Mnist, 500, 6);
        let (rest, val) = split_validation(&data, 100, 1).unwrap();
        assert_eq!((rest.len(), val.len()), (400, 100));
        let (_, val2) = split_validation(&data, 100, 2).unwrap();
        assert_ne!(val.labels(), val2.labels());
        let (all, none) = split_validation(&data, 0, 1).unwrap();
        assert_eq!((all.len(), none.len()), (500, 0));
        assert!(split_validation(&data, 501, 1).is_err());
    }

    #[test]
    fn replicate_summary_statistics() {
        let runs = [0.5, 0.7, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &a)| ReplicateRun {
                seed: i as u64,
                accuracy: Some(a),
                error: None,
            })
            .chain([ReplicateRun {
                seed: 9,
                accuracy: None,
                error: Some("boom".into()),
            }])
            .collect();
        let s = ReplicateSummary::from_runs("p", runs);
        assert_eq!(s.n, 3);
        assert_eq!(s.mean, (0.5 + 0.7 + 0.6) / 3.0);
        assert!((s.std - 0.1).abs() < 1e-12);
        assert_eq!(s.runs.len(), 4);
    }

    #[test]
    fn identical_seeds_give_zero_spread() {
        let data = synthetic(DatasetKind::Mnist, 40, 7);
        let plan = TrainPlan { epochs: 1, ..tiny_plan() };
        let mut accs = vec![];
        for _ in 0..2 {
            accs.push(train(&plan, &data, &data, &TrainOptions::default()).unwrap().0.final_test_accuracy);
        }
        let runs = accs
            .iter()
            .map(|&a| ReplicateRun {
                seed: plan.seed,
                accuracy: Some(a),
                error: None,
            })
            .collect();
        assert_eq!(ReplicateSummary::from_runs("p", runs).std, 0.0);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = synthetic(DatasetKind::Mnist, 20, 8);
        let (r, _) = train(&TrainPlan { epochs: 1, ..tiny_plan() }, &data, &data, &TrainOptions::default()).unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &r).unwrap();
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("epoch,train_loss,test_accuracy,lr,zero_frac_conv,zero_frac_tree,zero_frac_fc"));
        assert_eq!(read_metrics_csv(&p).unwrap(), r.epochs);
    }

    #[test]
    fn wrong_dataset_kind_is_rejected() {
        let data = synthetic(DatasetKind::Cifar10, 10, 9);
        assert!(matches!(
            train(&tiny_plan(), &data, &data, &TrainOptions::default()),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
