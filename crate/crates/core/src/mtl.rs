//! Hard-parameter-sharing multi-task training.
//!
//! One shared trunk, one output head per task, optional per-task pre/post
//! stacks. Training randomness is keyed to the canonical group identity, so
//! the member order callers use never changes results.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment_task, TaskSplit};
use crate::error::{Error, Result};
use crate::nn::{
    self, flatten_rows, Activation, Dense, LayerAct, LearningCurve, LossKind, OutputActivation,
    TrainConfig,
};
use crate::search::partition::GroupKey;
use crate::util::{derive_seed, rng_for};

/// Architecture of the shared net: per-task pre widths, trunk widths,
/// per-task post widths. Heads are single dense layers of width 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlArch {
    pub pre_widths: Vec<usize>,
    pub shared_widths: Vec<usize>,
    pub post_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub learning_rate: f64,
}

impl MtlArch {
    pub fn validate(&self) -> Result<()> {
        if self.shared_widths.is_empty() {
            return Err(Error::ShapeMismatch("shared trunk must be nonempty".into()));
        }
        if self
            .pre_widths
            .iter()
            .chain(&self.shared_widths)
            .chain(&self.post_widths)
            .any(|&w| w == 0)
        {
            return Err(Error::ShapeMismatch("layer widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::DomainError("learning rate must be > 0".into()));
        }
        Ok(())
    }

    /// Plain trunk-plus-heads default.
    pub fn trunk_only(
        shared_widths: Vec<usize>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
        learning_rate: f64,
    ) -> Self {
        MtlArch {
            pre_widths: Vec::new(),
            shared_widths,
            post_widths: Vec::new(),
            hidden_activation,
            output_activation,
            learning_rate,
        }
    }
}

/// Knobs for the inter-task affinity recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlOptions {
    /// Record the lookahead affinity matrix during training.
    pub compute_z: bool,
    /// Record every k-th step.
    pub z_every: usize,
    /// SGD rate of the lookahead step; `None` uses the arch learning rate.
    pub z_rate: Option<f64>,
}

impl Default for MtlOptions {
    fn default() -> Self {
        MtlOptions {
            compute_z: false,
            z_every: 10,
            z_rate: None,
        }
    }
}

/// Outcome of one group training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlResult {
    pub group: GroupKey,
    /// Test-split loss per task under the training loss kind.
    pub per_task_loss: BTreeMap<String, f64>,
    pub total_loss: f64,
    /// Output-head weights then bias, per task.
    pub task_vectors: BTreeMap<String, Vec<f64>>,
    /// Lookahead affinity, row/column order = canonical group order.
    pub z_matrix: Option<Vec<Vec<f64>>>,
    /// Summed validation loss over the group at the curve checkpoints.
    pub curve: LearningCurve,
    /// Test-split predictions per task, for secondary metrics.
    pub per_task_test_pred: BTreeMap<String, Vec<f64>>,
}

impl MtlResult {
    pub fn task_ids(&self) -> Vec<String> {
        self.group.ids().to_vec()
    }
}

/// Head weight-and-bias vectors in canonical order.
pub fn extract_task_vectors(result: &MtlResult) -> BTreeMap<String, Vec<f64>> {
    result.task_vectors.clone()
}

/// Relative MTL gain: `(sum STL - MTL) / sum STL`. Negative values mean
/// negative transfer.
pub fn relative_mtl_gain(stl_losses: &BTreeMap<String, f64>, mtl_total: f64) -> Result<f64> {
    let stl_sum: f64 = stl_losses.values().sum();
    if !(stl_sum > 0.0) {
        return Err(Error::ZeroStlSum);
    }
    Ok((stl_sum - mtl_total) / stl_sum)
}

struct TaskModules {
    pre: Vec<Dense>,
    post: Vec<Dense>,
    head: Dense,
}

struct MtlNet {
    trunk: Vec<Dense>,
    tasks: Vec<TaskModules>,
    hidden: Activation,
    output: OutputActivation,
}

impl MtlNet {
    fn init(arch: &MtlArch, input_dim: usize, n_tasks: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &["mtl-init"]);
        let pre_in = input_dim;
        let mut pre_shape: Vec<(usize, usize)> = Vec::new();
        let mut cur = pre_in;
        for &w in &arch.pre_widths {
            pre_shape.push((w, cur));
            cur = w;
        }
        let trunk_in = cur;
        let mut trunk = Vec::new();
        let mut tcur = trunk_in;
        for &w in &arch.shared_widths {
            trunk.push(Dense::glorot(w, tcur, &mut rng));
            tcur = w;
        }
        let mut post_shape: Vec<(usize, usize)> = Vec::new();
        let mut pcur = tcur;
        for &w in &arch.post_widths {
            post_shape.push((w, pcur));
            pcur = w;
        }

        // per-task modules share one init draw: identical tasks then train
        // identically, which keeps group results symmetric in the members
        let proto = TaskModules {
            pre: pre_shape
                .iter()
                .map(|&(o, i)| Dense::glorot(o, i, &mut rng))
                .collect(),
            post: post_shape
                .iter()
                .map(|&(o, i)| Dense::glorot(o, i, &mut rng))
                .collect(),
            head: Dense::glorot(1, pcur, &mut rng),
        };
        let tasks = (0..n_tasks)
            .map(|_| TaskModules {
                pre: proto.pre.clone(),
                post: proto.post.clone(),
                head: proto.head.clone(),
            })
            .collect();

        MtlNet {
            trunk,
            tasks,
            hidden: arch.hidden_activation,
            output: arch.output_activation,
        }
    }

    fn hidden_acts(&self, n: usize) -> Vec<LayerAct> {
        vec![LayerAct::Hidden(self.hidden); n]
    }

    /// Forward one task's rows; returns predictions and per-stage caches.
    fn forward_task(&self, t: usize, x: &[f64], n: usize) -> TaskForward {
        let tm = &self.tasks[t];
        let pre = nn::stack_forward(&tm.pre, &self.hidden_acts(tm.pre.len()), x, n);
        let trunk = nn::stack_forward(
            &self.trunk,
            &self.hidden_acts(self.trunk.len()),
            &pre.output,
            n,
        );
        let post = nn::stack_forward(
            &tm.post,
            &self.hidden_acts(tm.post.len()),
            &trunk.output,
            n,
        );
        let head = nn::stack_forward(
            std::slice::from_ref(&tm.head),
            &[LayerAct::Output(self.output)],
            &post.output,
            n,
        );
        TaskForward {
            pre,
            trunk,
            post,
            head,
        }
    }

    fn predict_task(&self, t: usize, x: &[f64], n: usize) -> Vec<f64> {
        self.forward_task(t, x, n).head.output
    }

    /// Backprop one task's loss gradient; accumulates into `grads` (same
    /// layout as the net) and returns nothing else.
    fn backward_task(
        &self,
        t: usize,
        fwd: &TaskForward,
        dpred: &[f64],
        n: usize,
        grads: &mut MtlGrads,
    ) {
        let tm = &self.tasks[t];
        let (head_g, dpost) = nn::stack_backward(
            std::slice::from_ref(&tm.head),
            &[LayerAct::Output(self.output)],
            &fwd.head,
            dpred,
            n,
        );
        let (post_g, dtrunk) = nn::stack_backward(
            &tm.post,
            &self.hidden_acts(tm.post.len()),
            &fwd.post,
            &dpost,
            n,
        );
        let (trunk_g, dpre) = nn::stack_backward(
            &self.trunk,
            &self.hidden_acts(self.trunk.len()),
            &fwd.trunk,
            &dtrunk,
            n,
        );
        let (pre_g, _) = nn::stack_backward(
            &tm.pre,
            &self.hidden_acts(tm.pre.len()),
            &fwd.pre,
            &dpre,
            n,
        );
        grads.accumulate_trunk(&trunk_g);
        grads.set_task(t, pre_g, post_g, head_g.into_iter().next().unwrap());
    }

    /// Trunk-only gradient of one task's loss, for the lookahead measure.
    fn trunk_grad_of_task(&self, t: usize, fwd: &TaskForward, dpred: &[f64], n: usize) -> Vec<Dense> {
        let tm = &self.tasks[t];
        let (_, dpost) = nn::stack_backward(
            std::slice::from_ref(&tm.head),
            &[LayerAct::Output(self.output)],
            &fwd.head,
            dpred,
            n,
        );
        let (_, dtrunk) = nn::stack_backward(
            &tm.post,
            &self.hidden_acts(tm.post.len()),
            &fwd.post,
            &dpost,
            n,
        );
        let (trunk_g, _) = nn::stack_backward(
            &self.trunk,
            &self.hidden_acts(self.trunk.len()),
            &fwd.trunk,
            &dtrunk,
            n,
        );
        trunk_g
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.trunk {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        for t in &self.tasks {
            for l in t.pre.iter().chain(&t.post).chain(std::iter::once(&t.head)) {
                out.extend_from_slice(&l.w);
                out.extend_from_slice(&l.b);
            }
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        let mut take = |l: &mut Dense| {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        };
        for l in &mut self.trunk {
            take(l);
        }
        for t in &mut self.tasks {
            for l in t.pre.iter_mut().chain(&mut t.post).chain(std::iter::once(&mut t.head)) {
                take(l);
            }
        }
        debug_assert_eq!(off, flat.len());
    }
}

struct TaskForward {
    pre: nn::ForwardCache,
    trunk: nn::ForwardCache,
    post: nn::ForwardCache,
    head: nn::ForwardCache,
}

struct MtlGrads {
    trunk: Vec<Dense>,
    tasks: Vec<Option<(Vec<Dense>, Vec<Dense>, Dense)>>,
}

impl MtlGrads {
    fn zeros_like(net: &MtlNet) -> Self {
        MtlGrads {
            trunk: net
                .trunk
                .iter()
                .map(|l| Dense::zeros(l.out_dim, l.in_dim))
                .collect(),
            tasks: (0..net.tasks.len()).map(|_| None).collect(),
        }
    }

    fn accumulate_trunk(&mut self, g: &[Dense]) {
        for (acc, layer) in self.trunk.iter_mut().zip(g) {
            for (a, v) in acc.w.iter_mut().zip(&layer.w) {
                *a += v;
            }
            for (a, v) in acc.b.iter_mut().zip(&layer.b) {
                *a += v;
            }
        }
    }

    fn set_task(&mut self, t: usize, pre: Vec<Dense>, post: Vec<Dense>, head: Dense) {
        self.tasks[t] = Some((pre, post, head));
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.trunk {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        for t in &self.tasks {
            let (pre, post, head) = t.as_ref().expect("gradient missing for a task");
            for l in pre.iter().chain(post).chain(std::iter::once(head)) {
                out.extend_from_slice(&l.w);
                out.extend_from_slice(&l.b);
            }
        }
        out
    }
}

/// Trains one group jointly and reports per-task losses, head vectors, and
/// (optionally) the inter-task affinity matrix.
///
/// Each step takes the same row indices from every task's augmented
/// training set, so the batch is balanced across tasks. The step loss is
/// the sum of per-task mean losses.
pub fn train_mtl(
    splits: &BTreeMap<String, TaskSplit>,
    group: &GroupKey,
    arch: &MtlArch,
    config: &TrainConfig,
    opts: &MtlOptions,
) -> Result<MtlResult> {
    arch.validate()?;
    config.validate()?;
    if group.len() < 2 {
        return Err(Error::GroupTooSmall(group.len()));
    }
    let ids = group.ids();
    let mut task_splits = Vec::with_capacity(ids.len());
    for id in ids {
        let s = splits
            .get(id)
            .ok_or_else(|| Error::MissingPrerequisite(format!("no split for task `{id}`")))?;
        task_splits.push(s);
    }
    let input_dim = task_splits[0].train.dim();

    // balance training rows by cyclic augmentation to the group max
    let max_train = task_splits
        .iter()
        .map(|s| s.train.n_samples())
        .max()
        .unwrap();
    let aug: Vec<_> = task_splits
        .iter()
        .map(|s| augment_task(&s.train, max_train))
        .collect();
    let train_x: Vec<Vec<f64>> = aug.iter().map(|t| flatten_rows(&t.features)).collect();
    let val_x: Vec<Vec<f64>> = task_splits
        .iter()
        .map(|s| flatten_rows(&s.val.features))
        .collect();

    let seed = derive_seed(config.seed, &["mtl", &group.canonical()]);
    let mut net = MtlNet::init(arch, input_dim, ids.len(), seed);
    let n_flat = net.flatten().len();
    let mut adam = nn::AdamState::new(n_flat);

    let batch = config.resolve_batch(max_train);
    let steps_per_epoch = max_train.div_ceil(batch);
    let total_steps = config.epochs * steps_per_epoch;
    let mut checkpoints: Vec<(f64, usize)> = config
        .curve_checkpoints
        .iter()
        .map(|&f| (f, ((f * total_steps as f64).ceil() as usize).max(1)))
        .collect();
    if !checkpoints.iter().any(|&(f, _)| f == 1.0) {
        checkpoints.push((1.0, total_steps));
    }
    checkpoints.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let z_rate = opts.z_rate.unwrap_or(arch.learning_rate);
    let mut z_sums = vec![vec![0.0; ids.len()]; ids.len()];
    let mut z_count = 0usize;

    let val_total = |net: &MtlNet| -> Result<f64> {
        let mut total = 0.0;
        for (t, s) in task_splits.iter().enumerate() {
            let pred = net.predict_task(t, &val_x[t], s.val.n_samples());
            total += nn::loss(config.loss_kind, &pred, &s.val.targets)?;
        }
        Ok(total)
    };

    // one index order shared by all tasks per epoch
    let mut rng = rng_for(seed, &["mtl-shuffle"]);
    let mut order: Vec<usize> = (0..max_train).collect();
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut step = 0usize;

    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let bn = chunk.len();
            // gather per-task batches
            let mut bx: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
            let mut by: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
            for t in 0..ids.len() {
                let mut x = Vec::with_capacity(bn * input_dim);
                let mut y = Vec::with_capacity(bn);
                for &i in chunk {
                    x.extend_from_slice(&train_x[t][i * input_dim..(i + 1) * input_dim]);
                    y.push(aug[t].targets[i]);
                }
                bx.push(x);
                by.push(y);
            }

            let fwd: Vec<TaskForward> = (0..ids.len())
                .map(|t| net.forward_task(t, &bx[t], bn))
                .collect();
            let dpreds: Vec<Vec<f64>> = (0..ids.len())
                .map(|t| batch_loss_grad(config.loss_kind, &fwd[t].head.output, &by[t]))
                .collect();

            let mut grads = MtlGrads::zeros_like(&net);
            for t in 0..ids.len() {
                net.backward_task(t, &fwd[t], &dpreds[t], bn, &mut grads);
            }

            step += 1;
            if opts.compute_z && step % opts.z_every == 0 {
                record_z(
                    &mut net,
                    &fwd,
                    &dpreds,
                    &bx,
                    &by,
                    bn,
                    config.loss_kind,
                    z_rate,
                    &mut z_sums,
                )?;
                z_count += 1;
            }

            let mut flat = net.flatten();
            adam.step_flat(&mut flat, &grads.flatten(), arch.learning_rate);
            net.assign_flat(&flat);

            for &(f, at) in &checkpoints {
                if at == step {
                    let l = val_total(&net)?;
                    if !l.is_finite() {
                        return Err(Error::NumericalDivergence { step });
                    }
                    curve.push((f, l));
                }
            }
            if step == total_steps {
                break 'epochs;
            }
        }
    }

    let mut per_task_loss = BTreeMap::new();
    let mut task_vectors = BTreeMap::new();
    let mut per_task_test_pred = BTreeMap::new();
    for (t, s) in task_splits.iter().enumerate() {
        let x = flatten_rows(&s.test.features);
        let pred = net.predict_task(t, &x, s.test.n_samples());
        let l = nn::loss(config.loss_kind, &pred, &s.test.targets)?;
        per_task_loss.insert(ids[t].clone(), l);
        per_task_test_pred.insert(ids[t].clone(), pred);
        let tm = &net.tasks[t];
        let mut v = tm.head.w.clone();
        v.extend_from_slice(&tm.head.b);
        task_vectors.insert(ids[t].clone(), v);
    }
    let total_loss: f64 = ids.iter().map(|id| per_task_loss[id]).sum();

    let z_matrix = if opts.compute_z && z_count > 0 {
        Some(
            z_sums
                .into_iter()
                .map(|row| row.into_iter().map(|v| v / z_count as f64).collect())
                .collect(),
        )
    } else {
        None
    };

    Ok(MtlResult {
        group: group.clone(),
        per_task_loss,
        total_loss,
        task_vectors,
        z_matrix,
        curve: LearningCurve { points: curve },
        per_task_test_pred,
    })
}

/// dLoss/dPred of a task's mean batch loss.
fn batch_loss_grad(kind: LossKind, pred: &[f64], y: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    match kind {
        LossKind::Mse => pred.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / n).collect(),
        LossKind::Bce => pred
            .iter()
            .zip(y)
            .map(|(&p, &t)| (-t / p + (1.0 - t) / (1.0 - p)) / n)
            .collect(),
    }
}

/// One lookahead sample: for each source task i, take an SGD step on the
/// trunk along task i's gradient and record the relative loss change of
/// every task j on its own current batch.
#[allow(clippy::too_many_arguments)]
fn record_z(
    net: &mut MtlNet,
    fwd: &[TaskForward],
    dpreds: &[Vec<f64>],
    bx: &[Vec<f64>],
    by: &[Vec<f64>],
    bn: usize,
    kind: LossKind,
    z_rate: f64,
    z_sums: &mut [Vec<f64>],
) -> Result<()> {
    let n_tasks = fwd.len();
    let before: Vec<f64> = (0..n_tasks)
        .map(|j| nn::loss(kind, &fwd[j].head.output, &by[j]))
        .collect::<Result<_>>()?;

    let saved_trunk = net.trunk.clone();
    for i in 0..n_tasks {
        let trunk_g = net.trunk_grad_of_task(i, &fwd[i], &dpreds[i], bn);
        for (layer, g) in net.trunk.iter_mut().zip(&trunk_g) {
            for (w, gw) in layer.w.iter_mut().zip(&g.w) {
                *w -= z_rate * gw;
            }
            for (b, gb) in layer.b.iter_mut().zip(&g.b) {
                *b -= z_rate * gb;
            }
        }
        for j in 0..n_tasks {
            let pred = net.predict_task(j, &bx[j], bn);
            let after = nn::loss(kind, &pred, &by[j])?;
            z_sums[i][j] += 1.0 - after / before[j].max(1e-12);
        }
        net.trunk.clone_from(&saved_trunk);
    }
    Ok(())
}

/// Trains all tasks of the group in one model and returns the lookahead
/// affinity matrix alongside the training result.
pub fn inter_task_affinity(
    splits: &BTreeMap<String, TaskSplit>,
    group: &GroupKey,
    arch: &MtlArch,
    config: &TrainConfig,
    opts: &MtlOptions,
) -> Result<MtlResult> {
    let mut o = opts.clone();
    o.compute_z = true;
    train_mtl(splits, group, arch, config, &o)
}
