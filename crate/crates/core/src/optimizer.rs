//! Alternating optimization of the hashing head.
//!
//! ```text
//! init head from PCA; mine matches and offline negatives
//! for k in 1..=K:
//!     for t in 1..=T:
//!         B ← sgn(F)                      (closed form, all images)
//!         np epochs of momentum SGD on W with B fixed
//!         score validation mAP, keep the best head
//!     regenerate negatives from the current codes
//! ```

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{FeatureStore, ModelWorld, Split};
use crate::error::{Error, Result};
use crate::loss::{
    pair_grad, pair_loss, pair_set_loss, quantization_stats, LossParams, PairLossBreakdown,
    QuantizationStats,
};
use crate::mining::{
    assemble_batches, mine_matches, mine_negatives_offline, mine_negatives_online, MiningParams,
    PairSet, TrainingPair,
};
use crate::model::{init_head, HashHead};
use crate::numkit::{Matrix, Rng};
use crate::retrieval::{binarize, evaluate_map, CodeDatabase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    /// Outer loop count `K` (negative regenerations).
    pub outer_iters: usize,
    /// Inner alternations `T` per outer iteration.
    pub inner_iters: usize,
    /// Epochs `np` per W-step.
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub queries_per_batch: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            outer_iters: 4,
            inner_iters: 5,
            epochs: 10,
            learning_rate: 1e-3,
            momentum: 0.9,
            queries_per_batch: 4,
            seed: 7,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_iters == 0 || self.epochs == 0 {
            return Err(Error::Param("K, T and np must all be >= 1".into()));
        }
        if self.queries_per_batch == 0 {
            return Err(Error::Param("queries_per_batch must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Param(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Param(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub code_len: usize,
    pub mining: MiningParams,
    /// Hinge margin; `None` means `L / 2`.
    pub margin: Option<f64>,
    pub alpha: f64,
    pub schedule: TrainSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            code_len: 16,
            mining: MiningParams::default(),
            margin: None,
            alpha: 1.0,
            schedule: TrainSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn loss_params(&self) -> LossParams {
        LossParams {
            margin: self.margin.unwrap_or(self.code_len as f64 / 2.0),
            alpha: self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_len == 0 {
            return Err(Error::Param("code length must be >= 1".into()));
        }
        self.mining.validate()?;
        self.loss_params().validate()?;
        self.schedule.validate()
    }
}

/// Loss and code quality after one epoch (epoch 0: right after the B-step).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(skip)]
    pub loss: PairLossBreakdown,
    pub mean_abs_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: usize,
    /// Full pair-set loss with the previous codes, just before the B-step.
    pub loss_before_b: PairLossBreakdown,
    /// Same, with the freshly computed codes.
    pub loss_after_b: PairLossBreakdown,
    pub epochs: Vec<EpochRecord>,
    /// Quantization of the training embeddings after the W-step.
    pub quantization: QuantizationStats,
    pub val_map: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub code_len: usize,
    pub init_val_map: f64,
    pub init_quantization: QuantizationStats,
    pub records: Vec<StepRecord>,
    /// `(k, t)` of the head with the highest validation mAP (first on ties).
    pub best_checkpoint: (usize, usize),
    pub best_val_map: f64,
    /// Wall-clock time. Not written to any file.
    pub elapsed: Duration,
}

impl TrainReport {
    pub fn best_record(&self) -> &StepRecord {
        let (k, t) = self.best_checkpoint;
        self.records
            .iter()
            .find(|r| r.k == k && r.t == t)
            .expect("best checkpoint is recorded")
    }

    /// `k,t,epoch,total_loss,sim_term,hinge_term,quant_term,mean_abs_dev,val_map`.
    /// `val_map` is filled on the last epoch row of each `(k, t)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "k,t,epoch,total_loss,sim_term,hinge_term,quant_term,mean_abs_dev,val_map\n",
        );
        for r in &self.records {
            let last = r.epochs.last().map(|e| e.epoch);
            for e in &r.epochs {
                let val = if Some(e.epoch) == last {
                    format!("{}", r.val_map)
                } else {
                    String::new()
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.k,
                    r.t,
                    e.epoch,
                    e.loss.total,
                    e.loss.similarity,
                    e.loss.hinge,
                    e.loss.quantization,
                    e.mean_abs_dev,
                    val
                ));
            }
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Checkpoint {
            k: usize,
            t: usize,
        }
        #[derive(Serialize)]
        struct Summary {
            code_len: usize,
            best_checkpoint: Checkpoint,
            best_val_map: f64,
            init_val_map: f64,
            init_mean_abs_dev: f64,
            best_mean_abs_dev: f64,
            records: usize,
        }
        let best = self.best_record();
        let s = Summary {
            code_len: self.code_len,
            best_checkpoint: Checkpoint {
                k: best.k,
                t: best.t,
            },
            best_val_map: self.best_val_map,
            init_val_map: self.init_val_map,
            init_mean_abs_dev: self.init_quantization.mean_abs_dev,
            best_mean_abs_dev: best.quantization.mean_abs_dev,
            records: self.records.len(),
        };
        let mut text = serde_json::to_string_pretty(&s)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(csv_path, self.to_csv())?;
        std::fs::write(json_path, self.summary_json()?)?;
        Ok(())
    }
}

/// Closed-form B-step: `sgn(F)` with `sgn(0) = +1`.
pub fn b_step(f: &Matrix, ids: Vec<String>) -> CodeDatabase {
    binarize(f, ids)
}

/// Where in the schedule a W-step runs; used for divergence reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepPosition {
    pub k: usize,
    pub t: usize,
}

struct Velocity(Vec<f64>);

/// `(∂L/∂fi, ∂L/∂fj, loss)` of one pair.
type PairTerms = (Vec<f64>, Vec<f64>, PairLossBreakdown);

/// Gradient of the mean pair loss over the batch with respect to the head
/// parameters, plus the summed batch loss. `x` and `codes` are indexed by world image index.
pub fn batch_gradient(
    head: &HashHead,
    x: &Matrix,
    codes: &Matrix,
    batch: &[TrainingPair],
    p: &LossParams,
) -> Result<(Vec<f64>, PairLossBreakdown)> {
    let mut images: Vec<usize> = batch.iter().flat_map(|pr| [pr.query, pr.other]).collect();
    images.sort_unstable();
    images.dedup();
    let local: BTreeMap<usize, usize> = images.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let xb = x.select_rows(&images);
    let f = head.forward(&xb)?;

    let per_pair: Vec<Result<PairTerms>> = batch
        .par_iter()
        .map(|pr| {
            let (qi, oi) = (local[&pr.query], local[&pr.other]);
            let (fi, fj) = (f.row(qi), f.row(oi));
            let (bi, bj) = (codes.row(pr.query), codes.row(pr.other));
            let loss = pair_loss(fi, fj, bi, bj, pr.matching, p)?;
            let (gi, gj) = pair_grad(fi, fj, bi, bj, pr.matching, p)?;
            Ok((gi, gj, loss))
        })
        .collect();

    let mut upstream = Matrix::zeros(images.len(), head.code_len());
    let mut loss = PairLossBreakdown::default();
    for (pr, res) in batch.iter().zip(per_pair) {
        let (gi, gj, l) = res?;
        loss += l;
        for (u, g) in upstream.row_mut(local[&pr.query]).iter_mut().zip(&gi) {
            *u += g;
        }
        for (u, g) in upstream.row_mut(local[&pr.other]).iter_mut().zip(&gj) {
            *u += g;
        }
    }
    let inv = 1.0 / batch.len().max(1) as f64;
    upstream.data_mut().iter_mut().for_each(|u| *u *= inv);
    let g = head.backward(&xb, &upstream)?;
    let mut flat = Vec::with_capacity(head.num_parameters());
    flat.extend_from_slice(g.w1.data());
    flat.extend_from_slice(&g.b1);
    flat.extend_from_slice(g.w2.data());
    flat.extend_from_slice(&g.b2);
    Ok((flat, loss))
}

/// W-step: `np` epochs of momentum SGD with the codes held fixed.
///
/// Velocity starts at zero. Each step is `v ← μ·v − η·g; θ ← θ + v` with
/// `g` the gradient of the mean pair loss over the batch. Returns one record per
/// epoch, measured over the full pair set.
#[allow(clippy::too_many_arguments)]
pub fn w_step(
    head: &mut HashHead,
    x: &Matrix,
    training: &[usize],
    pairs: &PairSet,
    codes: &Matrix,
    sched: &TrainSchedule,
    p: &LossParams,
    rng: &mut Rng,
    pos: StepPosition,
) -> Result<Vec<EpochRecord>> {
    let all_pairs = pairs.all_pairs();
    let mut velocity = Velocity(vec![0.0; head.num_parameters()]);
    let mut params = head.parameters();
    let mut records = Vec::with_capacity(sched.epochs);
    let diverged = |epoch, batch, message: &str| Error::Divergence {
        k: pos.k,
        t: pos.t,
        epoch,
        batch,
        message: message.to_string(),
    };

    for epoch in 1..=sched.epochs {
        let batches = assemble_batches(pairs, sched.queries_per_batch, rng);
        for (bi, batch) in batches.iter().enumerate() {
            let (grad, loss) = batch_gradient(head, x, codes, batch, p)?;
            if !loss.total.is_finite() {
                return Err(diverged(epoch, bi + 1, "non-finite loss"));
            }
            for ((v, g), w) in velocity.0.iter_mut().zip(&grad).zip(params.iter_mut()) {
                *v = sched.momentum * *v - sched.learning_rate * g;
                *w += *v;
            }
            if params.iter().any(|w| !w.is_finite()) {
                return Err(diverged(epoch, bi + 1, "non-finite parameter"));
            }
            head.set_parameters(&params);
        }
        let f = head.forward(x)?;
        let loss = pair_set_loss(&f, codes, &all_pairs, p)?;
        if !loss.total.is_finite() {
            return Err(diverged(epoch, batches.len(), "non-finite loss"));
        }
        records.push(EpochRecord {
            epoch,
            loss,
            mean_abs_dev: quantization_stats(&f.select_rows(training)).mean_abs_dev,
        });
    }
    Ok(records)
}

/// Head outputs for every image of the store, binarized.
pub fn encode(head: &HashHead, store: &FeatureStore) -> Result<CodeDatabase> {
    Ok(binarize(
        &head.forward(store.features())?,
        store.ids().to_vec(),
    ))
}

fn check_alignment(world: &ModelWorld, store: &FeatureStore) -> Result<()> {
    if !store.is_aligned_with(world) {
        return Err(Error::Shape(
            "feature store rows do not follow world image order".into(),
        ));
    }
    Ok(())
}

/// Validation queries ranked against the database.
pub fn validate_map(
    head: &HashHead,
    world: &ModelWorld,
    store: &FeatureStore,
    tau: usize,
) -> Result<f64> {
    check_alignment(world, store)?;
    let codes = encode(head, store)?;
    codes_validation_map(world, &codes, tau)
}

pub fn codes_validation_map(world: &ModelWorld, codes: &CodeDatabase, tau: usize) -> Result<f64> {
    let queries = world.with_split(Split::ValidationQuery);
    if queries.is_empty() {
        return Err(Error::Protocol("world has no validation queries".into()));
    }
    evaluate_map(
        world,
        codes,
        &queries,
        &world.with_split(Split::Database),
        tau,
    )
}

/// Held-out score: every database image queries the rest of the database.
pub fn test_map(
    head: &HashHead,
    world: &ModelWorld,
    store: &FeatureStore,
    tau: usize,
) -> Result<f64> {
    check_alignment(world, store)?;
    codes_test_map(world, &encode(head, store)?, tau)
}

pub fn codes_test_map(world: &ModelWorld, codes: &CodeDatabase, tau: usize) -> Result<f64> {
    let db = world.with_split(Split::Database);
    evaluate_map(world, codes, &db, &db, tau)
}

/// Sign-of-PCA baseline: the initialized head with no training.
pub fn baseline_head(
    world: &ModelWorld,
    store: &FeatureStore,
    code_len: usize,
) -> Result<HashHead> {
    check_alignment(world, store)?;
    init_head(
        &store.features().select_rows(&world.training_images()),
        code_len,
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: HashHead,
    pub report: TrainReport,
    /// Pair set after the last regeneration.
    pub pairs: PairSet,
}

/// Observer hooks, mostly for auditing a run.
pub trait TrainObserver {
    fn on_pairs(&mut self, _pairs: &PairSet) {}
    fn on_step(&mut self, _record: &StepRecord) {}
}

impl TrainObserver for () {}

pub fn train(world: &ModelWorld, store: &FeatureStore, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(world, store, cfg, &mut ())
}

pub fn train_observed(
    world: &ModelWorld,
    store: &FeatureStore,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    check_alignment(world, store)?;
    let sched = &cfg.schedule;
    let p = cfg.loss_params();
    let tau = cfg.mining.tau;
    let x = store.features();
    let ids = store.ids().to_vec();
    let training = world.training_images();

    let mut head = init_head(&x.select_rows(&training), cfg.code_len)?;
    let mut rng = Rng::new(sched.seed);
    let matches = mine_matches(world, &mut rng, tau)?;
    let negatives = mine_negatives_offline(world, store, &cfg.mining, &mut rng)?;
    let mut pairs = PairSet {
        matches,
        negatives,
        generation: 0,
    };
    observer.on_pairs(&pairs);

    let f0 = head.forward(x)?;
    let init_quantization = quantization_stats(&f0.select_rows(&training));
    let init_val_map = codes_validation_map(world, &binarize(&f0, ids.clone()), tau)?;
    let mut codes = b_step(&f0, ids.clone()).to_signs();

    let mut records = Vec::with_capacity(sched.outer_iters * sched.inner_iters);
    let mut best: Option<(f64, (usize, usize), HashHead)> = None;

    for k in 1..=sched.outer_iters {
        for t in 1..=sched.inner_iters {
            let all_pairs = pairs.all_pairs();
            let f = head.forward(x)?;
            let loss_before_b = pair_set_loss(&f, &codes, &all_pairs, &p)?;
            codes = b_step(&f, ids.clone()).to_signs();
            let loss_after_b = pair_set_loss(&f, &codes, &all_pairs, &p)?;

            let mut epochs = vec![EpochRecord {
                epoch: 0,
                loss: loss_after_b,
                mean_abs_dev: quantization_stats(&f.select_rows(&training)).mean_abs_dev,
            }];
            epochs.extend(w_step(
                &mut head,
                x,
                &training,
                &pairs,
                &codes,
                sched,
                &p,
                &mut rng,
                StepPosition { k, t },
            )?);

            let f = head.forward(x)?;
            let quantization = quantization_stats(&f.select_rows(&training));
            let val_map = codes_validation_map(world, &binarize(&f, ids.clone()), tau)?;
            let record = StepRecord {
                k,
                t,
                loss_before_b,
                loss_after_b,
                epochs,
                quantization,
                val_map,
            };
            observer.on_step(&record);
            records.push(record);
            if best.as_ref().is_none_or(|(m, _, _)| val_map > *m) {
                best = Some((val_map, (k, t), head.clone()));
            }
        }
        let current = binarize(&head.forward(x)?, ids.clone());
        pairs.negatives = mine_negatives_online(world, &current, &cfg.mining, &mut rng)?;
        pairs.generation += 1;
        observer.on_pairs(&pairs);
    }

    let (best_val_map, best_checkpoint, best_head) = best.expect("at least one step");
    Ok(TrainOutcome {
        head: best_head,
        report: TrainReport {
            code_len: cfg.code_len,
            init_val_map,
            init_quantization,
            records,
            best_checkpoint,
            best_val_map,
            elapsed: started.elapsed(),
        },
        pairs,
    })
}

/// One row of the code-length sweep. `map` is `None` when the code length
/// cannot be initialized from the data (L > min(N-1, D)).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub code_len: usize,
    pub map: Option<f64>,
}

/// Trains and scores one head per code length, everything else fixed.
/// Scores equal those of the saved model re-encoded with `encode`.
/// The margin follows `L / 2` unless `base.margin` pins it.
pub fn code_length_sweep(
    world: &ModelWorld,
    store: &FeatureStore,
    base: &TrainConfig,
    lengths: &[usize],
) -> Result<Vec<SweepRow>> {
    let limit = world
        .training_images()
        .len()
        .saturating_sub(1)
        .min(store.dim());
    lengths
        .iter()
        .map(|&code_len| {
            if code_len > limit {
                return Ok(SweepRow {
                    code_len,
                    map: None,
                });
            }
            let cfg = TrainConfig { code_len, ..*base };
            let out = train(world, store, &cfg)?;
            // score the head as it is stored on disk, with f32 weights
            let head = HashHead::from_bytes(&out.head.to_bytes()?)?;
            let map = test_map(&head, world, store, cfg.mining.tau)?;
            Ok(SweepRow {
                code_len,
                map: Some(map),
            })
        })
        .collect()
}

/// Writes `L,map` rows; lengths that could not be trained get an empty map.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "L,map")?;
    for r in rows {
        match r.map {
            Some(m) => writeln!(out, "{},{:.6}", r.code_len, m)?,
            None => writeln!(out, "{},", r.code_len)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_world, WorldGenParams};

    fn tiny_world() -> (ModelWorld, FeatureStore) {
        generate_world(&WorldGenParams {
            num_models: 6,
            images_per_model: 6,
            points_per_model: 40,
            obs_fraction: 0.5,
            feature_dim: 8,
            tau: 5,
            seed: 3,
            ..WorldGenParams::default()
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            code_len: 4,
            mining: MiningParams { k: 8, m: 3, tau: 5 },
            schedule: TrainSchedule {
                outer_iters: 2,
                inner_iters: 2,
                epochs: 2,
                ..TrainSchedule::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn b_step_sign_rule() {
        let f = Matrix::from_rows(&[vec![0.3, -2.0], vec![0.0, -0.1]]).unwrap();
        let b = b_step(&f, vec!["a".into(), "b".into()]).to_signs();
        assert_eq!(b.data(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(b_step(&b, vec!["a".into(), "b".into()]).to_signs(), b);
    }

    #[test]
    fn degenerate_schedule_returns_init() {
        let (world, store) = tiny_world();
        let mut cfg = tiny_config();
        cfg.schedule = TrainSchedule {
            outer_iters: 1,
            inner_iters: 1,
            epochs: 1,
            learning_rate: 0.0,
            ..cfg.schedule
        };
        let out = train(&world, &store, &cfg).unwrap();
        assert_eq!(out.report.records.len(), 1);
        assert_eq!(out.head, baseline_head(&world, &store, 4).unwrap());
    }

    #[test]
    fn zero_lr_w_step_is_null() {
        let (world, store) = tiny_world();
        let head0 = baseline_head(&world, &store, 4).unwrap();
        let mut head = head0.clone();
        let mut rng = Rng::new(0);
        let pairs = PairSet {
            matches: mine_matches(&world, &mut rng, 5).unwrap(),
            negatives: mine_negatives_offline(
                &world,
                &store,
                &MiningParams { k: 8, m: 3, tau: 5 },
                &mut rng,
            )
            .unwrap(),
            generation: 0,
        };
        let codes = b_step(
            &head.forward(store.features()).unwrap(),
            store.ids().to_vec(),
        )
        .to_signs();
        let sched = TrainSchedule {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainSchedule::default()
        };
        w_step(
            &mut head,
            store.features(),
            &world.training_images(),
            &pairs,
            &codes,
            &sched,
            &LossParams::for_code_len(4),
            &mut rng,
            StepPosition::default(),
        )
        .unwrap();
        assert_eq!(head, head0);
    }

    #[test]
    fn stationary_pair_has_zero_gradient() {
        // f_i = f_j = b for both images of a single matching pair
        let head = HashHead::new(
            Matrix::zeros(2, 2),
            vec![0.0; 2],
            Matrix::zeros(2, 2),
            vec![1.0, -1.0],
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.3, 0.1], vec![-0.2, 0.9]]).unwrap();
        let codes = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        let batch = [TrainingPair {
            query: 0,
            other: 1,
            matching: true,
        }];
        let (g, loss) =
            batch_gradient(&head, &x, &codes, &batch, &LossParams::for_code_len(2)).unwrap();
        assert_eq!(loss.total, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let (world, store) = tiny_world();
        let a = train(&world, &store, &tiny_config()).unwrap();
        let b = train(&world, &store, &tiny_config()).unwrap();
        assert_eq!(a.head.to_bytes().unwrap(), b.head.to_bytes().unwrap());
        assert_eq!(a.report.to_csv(), b.report.to_csv());
        assert_eq!(
            a.report.summary_json().unwrap(),
            b.report.summary_json().unwrap()
        );
    }

    #[test]
    fn report_shape() {
        let (world, store) = tiny_world();
        let out = train(&world, &store, &tiny_config()).unwrap();
        let r = &out.report;
        assert_eq!(r.records.len(), 4);
        let best = r.records.iter().map(|s| s.val_map).fold(f64::MIN, f64::max);
        assert_eq!(r.best_val_map, best);
        assert_eq!(r.best_record().val_map, best);
        let csv = r.to_csv();
        // header + 4 records × (epoch 0 + 2 epochs)
        assert_eq!(csv.lines().count(), 1 + 4 * 3);
        assert!(csv.starts_with(
            "k,t,epoch,total_loss,sim_term,hinge_term,quant_term,mean_abs_dev,val_map\n"
        ));
        assert_eq!(out.pairs.generation, 2);
    }

    #[test]
    fn b_step_never_increases_loss() {
        let (world, store) = tiny_world();
        let out = train(&world, &store, &tiny_config()).unwrap();
        for r in &out.report.records {
            assert!(r.loss_after_b.total <= r.loss_before_b.total + 1e-12);
        }
    }

    #[test]
    fn missing_validation_queries() {
        let (world, store) = tiny_world();
        let head = baseline_head(&world, &store, 4).unwrap();
        assert!(validate_map(&head, &world, &store, 5).is_ok());
        let splits = world
            .image_ids()
            .into_iter()
            .map(|id| (id, Split::Database))
            .collect();
        let no_val =
            ModelWorld::new(world.models().to_vec(), world.images().to_vec(), splits).unwrap();
        assert!(matches!(
            validate_map(&head, &no_val, &store, 5),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn sweep_marks_untrainable_lengths() {
        let (world, store) = tiny_world();
        let rows = code_length_sweep(&world, &store, &tiny_config(), &[4, 9]).unwrap();
        assert!(rows[0].map.is_some());
        assert_eq!(
            rows[1],
            SweepRow {
                code_len: 9,
                map: None
            }
        );
    }

    #[test]
    fn schedule_validation() {
        assert!(TrainSchedule {
            momentum: 1.0,
            ..TrainSchedule::default()
        }
        .validate()
        .is_err());
        assert!(TrainSchedule {
            epochs: 0,
            ..TrainSchedule::default()
        }
        .validate()
        .is_err());
        assert!(TrainSchedule::default().validate().is_ok());
    }
}
