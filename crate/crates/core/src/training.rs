//! Two-stage training procedure and policy evaluation metrics.
//!
//! Stage 1 is behavioral cloning on expert master solutions. Stage 2 keeps
//! the graph layers frozen and fine-tunes the dense layers with the
//! feasibility-adjusted loss. Training is single-threaded and fully
//! deterministic given the config seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cuts::CUT_FEAS_TOL;
use crate::graph::DatasetSample;
use crate::policy::{
    adam_step, independent_predict, loss_and_grad, predict, Descriptor, HeadKind, LossMode,
    OptimizerState, PolicyGrads, PolicyParams, INDEPENDENT_THRESHOLDS,
};
use crate::problem::Assignment;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub omega: f64,
    pub seed: u64,
    /// Share of instances held out by [`split_by_instance`].
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_lr: 1e-3,
            stage2_lr: 1e-4,
            batch_size: 8,
            epochs: 20,
            omega: 0.1,
            seed: 1,
            split_fraction: 0.05,
        }
    }
}

/// Final parameters plus the mean loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub epoch_losses: Vec<f64>,
}

/// Exact-match and feasibility-satisfaction counts of a policy on a
/// dataset. The feasibility denominator only counts samples that carry
/// feasibility cuts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub exact_match_num: usize,
    pub exact_match_den: usize,
    pub feas_num: usize,
    pub feas_den: usize,
}

impl PolicyMetrics {
    pub fn exact_match(&self) -> f64 {
        self.exact_match_num as f64 / self.exact_match_den as f64
    }

    /// `None` when no sample carries feasibility cuts.
    pub fn feasibility(&self) -> Option<f64> {
        if self.feas_den == 0 {
            None
        } else {
            Some(self.feas_num as f64 / self.feas_den as f64)
        }
    }
}

fn run_epochs(
    mut params: PolicyParams,
    dataset: &[DatasetSample],
    admissible: &[Assignment],
    mode: LossMode,
    lr: f64,
    config: &TrainConfig,
    shuffle_seed: u64,
) -> TrainOutcome {
    assert!(!dataset.is_empty(), "training requires a nonempty dataset");
    let mut state = OptimizerState::new(&params, lr);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Option<PolicyGrads> = None;
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (loss, g) = loss_and_grad(&params, &dataset[idx], mode, admissible);
                batch_loss += loss;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.accumulate(&g),
                }
            }
            let mut grads = grads.expect("nonempty batch");
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut state, &mut params, &grads);
            total += batch_loss;
        }
        epoch_losses.push(total / dataset.len() as f64);
    }

    TrainOutcome {
        params,
        epoch_losses,
    }
}

/// Behavioral cloning: minibatch Adam on the cross-entropy against the
/// expert indices (per-variable binary cross-entropy for the independent
/// head).
pub fn stage1_train(
    dataset: &[DatasetSample],
    admissible: &[Assignment],
    descriptor: &Descriptor,
    config: &TrainConfig,
) -> TrainOutcome {
    let params = crate::policy::init_params(descriptor, config.seed);
    let mut out = run_epochs(
        params,
        dataset,
        admissible,
        LossMode::Stage1,
        config.stage1_lr,
        config,
        config.seed,
    );
    out.params.stages = vec!["stage1".to_string()];
    out
}

/// Feasibility-aware fine-tuning on top of stage-1 parameters: graph layers
/// frozen, dense layers updated against the adjusted logits.
pub fn stage2_finetune(
    params: &PolicyParams,
    dataset: &[DatasetSample],
    admissible: &[Assignment],
    config: &TrainConfig,
) -> TrainOutcome {
    let mut out = run_epochs(
        params.clone(),
        dataset,
        admissible,
        LossMode::Stage2 {
            omega: config.omega,
        },
        config.stage2_lr,
        config,
        config.seed.wrapping_add(1),
    );
    out.params.stages = params.stages.clone();
    out.params
        .stages
        .push(format!("stage2(omega={})", config.omega));
    out
}

/// Predicted assignment of either head on one sample; `None` when the
/// independent head rejects.
pub fn predict_assignment(
    params: &PolicyParams,
    sample: &DatasetSample,
    admissible: &[Assignment],
) -> Option<Assignment> {
    match params.descriptor.head {
        HeadKind::Combination => {
            let (idx, _) = predict(params, &sample.graph, admissible).expect("head checked");
            Some(admissible[idx])
        }
        HeadKind::Independent => {
            independent_predict(params, &sample.graph, INDEPENDENT_THRESHOLDS)
                .expect("head checked")
        }
    }
}

/// Exact-match and feasibility metrics on a dataset. A rejected independent
/// prediction counts as a mismatch and as infeasible.
pub fn evaluate_policy(
    params: &PolicyParams,
    dataset: &[DatasetSample],
    admissible: &[Assignment],
) -> PolicyMetrics {
    let mut metrics = PolicyMetrics {
        exact_match_num: 0,
        exact_match_den: dataset.len(),
        feas_num: 0,
        feas_den: 0,
    };
    for sample in dataset {
        let predicted = predict_assignment(params, sample, admissible);
        if predicted == Some(admissible[sample.label_index]) {
            metrics.exact_match_num += 1;
        }
        if !sample.feasibility_cuts.is_empty() {
            metrics.feas_den += 1;
            if let Some(y) = predicted {
                let yf = y.as_f64();
                let ok = sample.feasibility_cuts.iter().all(|row| {
                    let v: f64 = row.alpha
                        + row
                            .beta
                            .iter()
                            .zip(yf.iter())
                            .map(|(b, v)| b * v)
                            .sum::<f64>();
                    v <= CUT_FEAS_TOL
                });
                if ok {
                    metrics.feas_num += 1;
                }
            }
        }
    }
    metrics
}

/// Splits a dataset by instance: all samples of one decomposition run land
/// on the same side. `fraction` is the held-out share of instances,
/// rounded, at least one instance when positive. Deterministic in `seed`.
pub fn split_by_instance(
    samples: &[DatasetSample],
    fraction: f64,
    seed: u64,
) -> (Vec<DatasetSample>, Vec<DatasetSample>) {
    let mut instance_seeds: Vec<u64> = Vec::new();
    for s in samples {
        if !instance_seeds.contains(&s.instance_seed) {
            instance_seeds.push(s.instance_seed);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instance_seeds.shuffle(&mut rng);
    let n_test = if fraction <= 0.0 {
        0
    } else {
        ((instance_seeds.len() as f64 * fraction).round() as usize)
            .max(1)
            .min(instance_seeds.len())
    };
    let test_set: Vec<u64> = instance_seeds[..n_test].to_vec();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if test_set.contains(&s.instance_seed) {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{AffineCut, CutKind, CutStore};
    use crate::graph::{encode, FeasCutRow, DATASET_SCHEMA};
    use crate::problem::{enumerate_admissible, PureBinaryConstraints};
    use rand::Rng;

    fn admissible() -> Vec<Assignment> {
        enumerate_admissible(&PureBinaryConstraints::family()).unwrap()
    }

    /// Synthetic but structured samples: the label is the admissible
    /// assignment minimizing the optimality-cut max, so the task is
    /// learnable from the graph.
    fn synthetic_dataset(n: usize, seed: u64) -> Vec<DatasetSample> {
        let adm = admissible();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for k in 0..n {
            let mut store = CutStore::new();
            for i in 0..rng.random_range(1..4usize) {
                let mut beta = [0.0; 5];
                for b in beta.iter_mut() {
                    *b = rng.random_range(-60.0..60.0);
                }
                store.push(AffineCut {
                    kind: CutKind::Optimality,
                    alpha: rng.random_range(-100.0..100.0),
                    beta,
                    origin_iteration: i,
                    origin_assignment: adm[0],
                });
            }
            if rng.random_range(0..2) == 1 {
                let mut beta = [0.0; 5];
                for b in beta.iter_mut() {
                    *b = rng.random_range(-5.0..5.0);
                }
                store.push(AffineCut {
                    kind: CutKind::Feasibility,
                    alpha: rng.random_range(-5.0..1.0),
                    beta,
                    origin_iteration: 9,
                    origin_assignment: adm[0],
                });
            }
            let label = match crate::master::solve_exact(&store, &adm) {
                Ok(res) => adm.iter().position(|y| *y == res.y_best).unwrap(),
                Err(_) => 0,
            };
            let y_prev = adm[k % adm.len()];
            out.push(DatasetSample {
                schema: DATASET_SCHEMA.to_string(),
                instance_seed: k as u64,
                iteration: 0,
                label_index: label,
                graph: encode(&store, &y_prev),
                feasibility_cuts: store
                    .feasibility
                    .iter()
                    .map(|c| FeasCutRow {
                        alpha: c.alpha,
                        beta: c.beta,
                    })
                    .collect(),
            });
        }
        out
    }

    fn fast_config() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn stage1_loss_decreases_over_epochs() {
        let adm = admissible();
        let data = synthetic_dataset(10, 7);
        let desc = Descriptor::reduced(HeadKind::Combination, adm.len());
        let out = stage1_train(&data, &adm, &desc, &fast_config());
        assert_eq!(out.epoch_losses.len(), 20);
        assert!(
            out.epoch_losses[19] < out.epoch_losses[0],
            "losses {:?}",
            out.epoch_losses
        );
    }

    #[test]
    fn single_sample_overfits_to_exact_match() {
        let adm = admissible();
        let data = synthetic_dataset(1, 3);
        let desc = Descriptor::reduced(HeadKind::Combination, adm.len());
        // One sample means one optimizer step per epoch; give the loop
        // enough steps to actually overfit.
        let config = TrainConfig {
            epochs: 400,
            ..TrainConfig::default()
        };
        let out = stage1_train(&data, &adm, &desc, &config);
        let metrics = evaluate_policy(&out.params, &data, &adm);
        assert_eq!(metrics.exact_match_num, 1);
        assert_eq!(metrics.exact_match_den, 1);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let adm = admissible();
        let data = synthetic_dataset(6, 11);
        let desc = Descriptor::reduced(HeadKind::Combination, adm.len());
        let a = stage1_train(&data, &adm, &desc, &fast_config());
        let b = stage1_train(&data, &adm, &desc, &fast_config());
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn stage2_freezes_graph_layers_bitwise() {
        let adm = admissible();
        let data = synthetic_dataset(8, 13);
        let desc = Descriptor::reduced(HeadKind::Combination, adm.len());
        let stage1 = stage1_train(&data, &adm, &desc, &fast_config());
        let stage2 = stage2_finetune(&stage1.params, &data, &adm, &fast_config());
        assert_eq!(stage1.params.ecc, stage2.params.ecc);
        assert_ne!(stage1.params.dense, stage2.params.dense);
        assert_eq!(stage2.params.stages.len(), 2);
    }

    #[test]
    fn stage2_with_zero_omega_matches_stage1_losses_pointwise() {
        let adm = admissible();
        let data = synthetic_dataset(5, 17);
        let desc = Descriptor::reduced(HeadKind::Combination, adm.len());
        let trained = stage1_train(&data, &adm, &desc, &fast_config());
        for sample in &data {
            let (l1, _) = loss_and_grad(&trained.params, sample, LossMode::Stage1, &adm);
            let (l2, _) = loss_and_grad(
                &trained.params,
                sample,
                LossMode::Stage2 { omega: 0.0 },
                &adm,
            );
            assert!((l1 - l2).abs() <= 1e-12);
        }
    }

    #[test]
    fn independent_head_trains() {
        let adm = admissible();
        let data = synthetic_dataset(10, 19);
        let desc = Descriptor::reduced(HeadKind::Independent, adm.len());
        let out = stage1_train(&data, &adm, &desc, &fast_config());
        assert!(out.epoch_losses[19] < out.epoch_losses[0]);
    }

    #[test]
    fn metrics_handle_missing_feasibility_cuts() {
        let adm = admissible();
        let mut data = synthetic_dataset(6, 23);
        for s in data.iter_mut() {
            s.feasibility_cuts.clear();
        }
        let desc = Descriptor::reduced(HeadKind::Combination, adm.len());
        let params = crate::policy::init_params(&desc, 1);
        let metrics = evaluate_policy(&params, &data, &adm);
        assert_eq!(metrics.feas_den, 0);
        assert_eq!(metrics.feasibility(), None);
        assert_eq!(metrics.exact_match_den, 6);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let mut data = synthetic_dataset(9, 29);
        // Multiple samples per instance.
        let mut more = data.clone();
        for s in more.iter_mut() {
            s.iteration = 1;
        }
        data.extend(more);

        let (train_a, test_a) = split_by_instance(&data, 0.3, 5);
        let (train_b, test_b) = split_by_instance(&data, 0.3, 5);
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(train_a.len() + test_a.len(), data.len());

        let train_seeds: Vec<u64> = train_a.iter().map(|s| s.instance_seed).collect();
        for s in &test_a {
            assert!(!train_seeds.contains(&s.instance_seed));
        }

        let (train_c, test_c) = split_by_instance(&data, 0.3, 6);
        assert_eq!(train_c.len() + test_c.len(), data.len());
    }
}
