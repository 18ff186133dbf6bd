use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::network::{bce_loss, Gradients, Mode, Network, NetworkArch};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::scalar::Scalar;

/// ADAM moment estimates and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update. Rejects non-finite gradients before
/// touching any parameter.
pub fn adam_step<T: Scalar>(net: &mut Network<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    let n = net.n_params();
    if grads.values.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Argument(format!(
            "shape mismatch: {n} parameters, {} gradients, {} moments",
            grads.values.len(),
            state.m.len()
        )));
    }
    if let Some(index) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            index,
            step: state.step + 1,
        });
    }
    state.step += 1;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(state.step as i32));
    let c2 = T::of(1.0 - state.beta2.powi(state.step as i32));
    let lr = T::of(state.lr);
    let eps = T::of(state.eps);
    let params = net.params_mut_silent();
    for i in 0..n {
        let g = grads.values[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    net.bump_generation();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Network input with its label and grouping key (patient id).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub input: Vec<T>,
    pub label: u8,
    pub group: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch ADAM on binary cross-entropy; shuffling and dropout masks
/// are drawn from `config.seed`.
pub fn train<T: Scalar>(net: &mut Network<T>, data: &[&[T]], labels: &[u8], config: &TrainConfig) -> Result<TrainReport> {
    if data.len() != labels.len() {
        return Err(Error::Argument(format!("{} inputs, {} labels", data.len(), labels.len())));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::EmptyClass("training set needs cases and controls".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(net.n_params(), config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[T]> = chunk.iter().map(|&i| data[i]).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let pass = net.forward(&batch, Mode::Train, rng.random())?;
            epoch_loss += bce_loss(&pass.scores, &ys).as_f64() * chunk.len() as f64;
            let grads = net.backward(&pass, &ys)?;
            adam_step(net, &grads, &mut state)?;
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainReport { loss_history: history })
}

/// Patient-level fold assignment, stratified by whether the patient
/// contributes any case.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: HashMap<u32, usize>,
}

impl FoldAssignment {
    pub fn fold(&self, group: u32) -> Option<usize> {
        self.fold_of.get(&group).copied()
    }
}

/// Shuffles case groups and control groups separately and deals each
/// stratum round-robin over `k` folds.
pub fn assign_folds(groups: &[(u32, bool)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Split(format!("need k >= 2 folds, got {k}")));
    }
    let mut cases: Vec<u32> = groups.iter().filter(|g| g.1).map(|g| g.0).collect();
    let mut controls: Vec<u32> = groups.iter().filter(|g| !g.1).map(|g| g.0).collect();
    cases.sort_unstable();
    cases.dedup();
    controls.sort_unstable();
    controls.dedup();
    if cases.len() < k {
        return Err(Error::Split(format!(
            "{} case groups cannot populate {k} folds",
            cases.len()
        )));
    }
    if controls.len() < k {
        return Err(Error::Split(format!(
            "{} control groups cannot populate {k} folds",
            controls.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases.shuffle(&mut rng);
    controls.shuffle(&mut rng);
    let mut fold_of = HashMap::new();
    for (i, g) in cases.iter().enumerate() {
        fold_of.insert(*g, i % k);
    }
    // Continue the deal where the cases stopped so fold sizes stay balanced.
    for (i, g) in controls.iter().enumerate() {
        fold_of.entry(*g).or_insert((cases.len() + i) % k);
    }
    Ok(FoldAssignment { k, fold_of })
}

/// A dataset that can be split by group and needs a preprocessing step fit
/// on the training part of each fold (e.g. a channel scaler).
pub trait FoldData<T>: Sync {
    type Prep: Send + Sync;

    fn len(&self) -> usize;
    fn label(&self, i: usize) -> u8;
    fn group(&self, i: usize) -> u32;
    fn fit_prep(&self, train: &[usize]) -> Result<Self::Prep>;
    fn input(&self, prep: &Self::Prep, i: usize) -> Vec<T>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> FoldData<T> for [Sample<T>] {
    type Prep = ();

    fn len(&self) -> usize {
        <[Sample<T>]>::len(self)
    }
    fn label(&self, i: usize) -> u8 {
        self[i].label
    }
    fn group(&self, i: usize) -> u32 {
        self[i].group
    }
    fn fit_prep(&self, _: &[usize]) -> Result<()> {
        Ok(())
    }
    fn input(&self, _: &(), i: usize) -> Vec<T> {
        self[i].input.clone()
    }
}

#[derive(Debug, Clone)]
pub struct FoldModel<T, P> {
    pub fold: usize,
    pub network: Network<T>,
    pub prep: P,
    pub auroc: f64,
    pub test_indices: Vec<usize>,
    pub test_scores: Vec<T>,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KFoldReport<T, P> {
    pub folds: Vec<FoldModel<T, P>>,
    pub mean_auroc: f64,
}

impl<T, P> KFoldReport<T, P> {
    pub fn aurocs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.auroc).collect()
    }
}

/// Trains one network per fold on the other folds' samples and scores the
/// held-out fold. Folds run in parallel; each fold's seed is derived from
/// `train.seed` and the fold index, so results do not depend on scheduling.
pub fn kfold_evaluate<T, D>(
    data: &D,
    folds: &FoldAssignment,
    arch: NetworkArch,
    train_config: &TrainConfig,
) -> Result<KFoldReport<T, D::Prep>>
where
    T: Scalar,
    D: FoldData<T> + ?Sized,
{
    arch.validate()?;
    let mut fold_idx = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let g = data.group(i);
        fold_idx.push(
            folds
                .fold(g)
                .ok_or_else(|| Error::Split(format!("group {g} has no fold")))?,
        );
    }
    for f in 0..folds.k {
        let labels: Vec<u8> = (0..data.len()).filter(|&i| fold_idx[i] == f).map(|i| data.label(i)).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::Split(format!("fold {f} lacks one class ({pos} cases of {})", labels.len())));
        }
    }
    let results: Vec<Result<FoldModel<T, D::Prep>>> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_idx[i] != f).collect();
            let test_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_idx[i] == f).collect();
            let prep = data.fit_prep(&train_idx)?;
            let train_x: Vec<Vec<T>> = train_idx.iter().map(|&i| data.input(&prep, i)).collect();
            let train_y: Vec<u8> = train_idx.iter().map(|&i| data.label(i)).collect();
            let seed = train_config.seed.wrapping_add(1000 * (f as u64 + 1));
            let mut net = Network::new(arch, seed)?;
            let refs: Vec<&[T]> = train_x.iter().map(Vec::as_slice).collect();
            let report = train(
                &mut net,
                &refs,
                &train_y,
                &TrainConfig {
                    seed,
                    ..*train_config
                },
            )?;
            drop(train_x);
            let mut scores = Vec::with_capacity(test_idx.len());
            for &i in &test_idx {
                scores.push(net.predict(&data.input(&prep, i))?);
            }
            let test_y: Vec<u8> = test_idx.iter().map(|&i| data.label(i)).collect();
            let a = auroc(&scores, &test_y)?;
            Ok(FoldModel {
                fold: f,
                network: net,
                prep,
                auroc: a,
                test_indices: test_idx,
                test_scores: scores,
                loss_history: report.loss_history,
            })
        })
        .collect();
    let folds_out = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mean_auroc = folds_out.iter().map(|f| f.auroc).sum::<f64>() / folds_out.len() as f64;
    Ok(KFoldReport {
        folds: folds_out,
        mean_auroc,
    })
}
