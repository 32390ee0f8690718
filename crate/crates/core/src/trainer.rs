//! Two-phase sparse-adapter training on a toy layered model, with baselines
//! and a forgetting benchmark.
//!
//! The model is a stack of frozen weights plus one low-rank adapter per
//! layer. Training runs in two phases split at `warmup_steps`:
//!
//! 1. *warmup*: plain SGD on the composite loss with unmasked adapters;
//! 2. *integration*: at the split step a one-shot magnitude mask is built for
//!    every factor at the configured retained density, and from then on the
//!    masks are applied before each forward pass and re-applied after each
//!    update, so pruned entries stay exactly zero.
//!
//! The conflict-mitigation terms (Frobenius for dense-role layers, L1 for the
//! connector) are evaluated against retention masks computed once from the
//! pretrained weights before the loop starts.
//!
//! "Source" tasks are synthetic linear teachers clustered around a common
//! base map; the "target" teacher sits farther away. Pretraining fits the
//! frozen weights to the source mixture, fine-tuning adapts to the target,
//! and evaluation scores every task as `1 / (1 + MSE)` on a fixed seeded
//! batch, so forgetting shows up as a drop in the source score.

use crate::adapter::{build_mask, LoraAdapter};
use crate::error::{Result, SculptError};
use crate::matrix::Matrix;
use crate::regularizer::{
    cmr_frobenius_grad, cmr_l1_grad, LayerReg, RegGrad,
};
use crate::retention::{retention_mask, RetentionMask};
use crate::rng::RandomStream;
use crate::theory::expected_sparsity_raw;

// Stream ids: every random subsystem draws from its own (seed, id) stream.
pub const STREAM_TASK_GEN: u64 = 0x5441_534B;
pub const STREAM_PRETRAIN_INIT: u64 = 0x4949_4E49;
pub const STREAM_PRETRAIN_DATA: u64 = 0x5052_4554;
pub const STREAM_TRAIN_DATA: u64 = 0x4654_554E;
pub const STREAM_ADAPTER_BASE: u64 = 0x4144_0000;
pub const STREAM_EVAL_BASE: u64 = 0x4556_0000;
pub const STREAM_DARE: u64 = 0x4441_5245;

/// Which training scheme produces the final adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Two-phase masked training with conflict-mitigation terms.
    LoraSculpt,
    /// Plain low-rank adaptation.
    Lora,
    /// Plain adaptation plus `lambda * ||BA||_F^2`.
    L2Reg,
    /// Plain adaptation, then keep only the top-magnitude fraction of each
    /// layer's delta.
    PosthocPrune,
    /// Plain adaptation, then random drop-and-rescale of each delta.
    Dare,
}

impl Baseline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Baseline::LoraSculpt => "lorasculpt",
            Baseline::Lora => "lora",
            Baseline::L2Reg => "l2reg",
            Baseline::PosthocPrune => "posthoc_prune",
            Baseline::Dare => "dare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lorasculpt" => Ok(Baseline::LoraSculpt),
            "lora" => Ok(Baseline::Lora),
            "l2reg" => Ok(Baseline::L2Reg),
            "posthoc_prune" => Ok(Baseline::PosthocPrune),
            "dare" => Ok(Baseline::Dare),
            other => Err(SculptError::parameter(
                "baseline",
                format!("expected lorasculpt|lora|l2reg|posthoc_prune|dare, got {other}"),
            )),
        }
    }
}

/// Full run configuration. Field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Retained fraction `s` used for both factor masks.
    pub retained_density: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub baseline: Baseline,
    pub rank: usize,
    pub gamma: f64,
    /// Layer widths, input first: `dims[0] -> dims[1] -> ... -> dims[n]`.
    pub dims: Vec<usize>,
    /// Regularizer assignment per layer; must match `dims.len() - 1`.
    pub layer_tags: Vec<LayerReg>,
    pub dare_drop: f64,
    pub l2_lambda: f64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub noise_std: f64,
    pub num_source_tasks: usize,
    pub teacher_std: f64,
    /// Spread of the source teachers around the shared base map.
    pub source_spread: f64,
    /// Distance of the target teacher from the base map.
    pub target_shift: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 800,
            warmup_steps: 80,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            retained_density: 0.1,
            omega: 1.0,
            epsilon: 1e-8,
            alpha: 1e-3,
            beta: 1e-5,
            seed: 42,
            baseline: Baseline::LoraSculpt,
            rank: 8,
            gamma: 1.0,
            dims: vec![16, 32, 32, 8],
            layer_tags: vec![LayerReg::L1, LayerReg::Frobenius, LayerReg::Frobenius],
            dare_drop: 0.5,
            l2_lambda: 1e-3,
            pretrain_steps: 1500,
            pretrain_lr: 0.05,
            noise_std: 0.02,
            num_source_tasks: 4,
            teacher_std: 0.25,
            source_spread: 0.05,
            target_shift: 0.12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SculptError::Config(msg));
        if self.dims.len() < 2 {
            return fail(format!("dims needs at least two entries, got {:?}", self.dims));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return fail(format!("dims entries must be positive, got {:?}", self.dims));
        }
        if self.layer_tags.len() != self.dims.len() - 1 {
            return fail(format!(
                "layer_tags must list {} tags (one per layer), got {}",
                self.dims.len() - 1,
                self.layer_tags.len()
            ));
        }
        if self.warmup_steps < 1 || self.warmup_steps >= self.total_steps {
            return fail(format!(
                "warmup_steps must satisfy 1 <= warmup < total_steps, got {} vs {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.retained_density > 0.0 && self.retained_density <= 1.0) {
            return fail(format!(
                "retained_density must lie in (0, 1], got {}",
                self.retained_density
            ));
        }
        if self.learning_rate <= 0.0 || self.pretrain_lr <= 0.0 {
            return fail("learning rates must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.pretrain_steps == 0 {
            return fail("batch_size and pretrain_steps must be positive".to_string());
        }
        if self.rank == 0 {
            return fail("rank must be positive".to_string());
        }
        for w in self.dims.windows(2) {
            let (q, p) = (w[0], w[1]);
            if self.rank > p.min(q) {
                return fail(format!(
                    "rank {} exceeds min dimension of a {}x{} layer",
                    self.rank, p, q
                ));
            }
        }
        if self.omega <= 0.0 || self.epsilon <= 0.0 {
            return fail("omega and epsilon must be positive".to_string());
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.l2_lambda < 0.0 {
            return fail("regularizer coefficients must be nonnegative".to_string());
        }
        if !(0.0..1.0).contains(&self.dare_drop) {
            return fail(format!("dare_drop must lie in [0, 1), got {}", self.dare_drop));
        }
        if self.gamma <= 0.0 {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.noise_std < 0.0 || self.teacher_std <= 0.0 {
            return fail("noise_std must be >= 0 and teacher_std > 0".to_string());
        }
        if self.source_spread < 0.0 || self.target_shift < 0.0 {
            return fail("teacher spread parameters must be nonnegative".to_string());
        }
        if self.num_source_tasks == 0 {
            return fail("num_source_tasks must be at least 1".to_string());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }
}

/// Synthetic linear teachers: several clustered source tasks plus one
/// shifted target task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub sources: Vec<Matrix>,
    pub target: Matrix,
    pub noise_std: f64,
    pub seed: u64,
}

impl TaskSpec {
    /// Deterministic teacher generation from the config seed.
    pub fn generate(cfg: &TrainConfig) -> TaskSpec {
        let mut rng = RandomStream::new(cfg.seed, STREAM_TASK_GEN);
        let (out, inp) = (cfg.output_dim(), cfg.input_dim());
        let base = rng.sample_gaussian(out, inp, cfg.teacher_std);
        let sources = (0..cfg.num_source_tasks)
            .map(|_| {
                let jitter = rng.sample_gaussian(out, inp, cfg.source_spread);
                base.add(&jitter).expect("same shape")
            })
            .collect();
        let shift = rng.sample_gaussian(out, inp, cfg.target_shift);
        let target = base.add(&shift).expect("same shape");
        TaskSpec {
            sources,
            target,
            noise_std: cfg.noise_std,
            seed: cfg.seed,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.sources.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Connector,
    Llm,
}

/// One layer: frozen pretrained weight, its adapter, and an optional merged
/// delta override installed by the post-training baselines.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w0: Matrix,
    pub adapter: LoraAdapter,
    pub role: LayerRole,
    pub tanh_after: bool,
    pub delta_override: Option<Matrix>,
}

impl Layer {
    /// `W0 + delta`, where the delta comes from the override when present
    /// and from the (masked) adapter product otherwise.
    pub fn effective_weight(&self) -> Matrix {
        let delta = match &self.delta_override {
            Some(d) => d.clone(),
            None => self.adapter.delta_weight(),
        };
        self.w0.add(&delta).expect("delta shape matches w0")
    }

    fn effective_delta(&self) -> Matrix {
        match &self.delta_override {
            Some(d) => d.clone(),
            None => self.adapter.delta_weight(),
        }
    }
}

/// Frozen pretrained stack plus per-layer adapters.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub layers: Vec<Layer>,
}

struct LayerCache {
    input: Matrix,
    output: Matrix,
    weff: Matrix,
}

impl ToyModel {
    /// Assembles a model from pretrained weights, with zero-delta adapters
    /// initialized from the run seed. Layer 0 is the connector (tanh
    /// nonlinearity after it); the remaining layers are linear.
    pub fn assemble(cfg: &TrainConfig, weights: Vec<Matrix>) -> Result<ToyModel> {
        if weights.len() != cfg.dims.len() - 1 {
            return Err(SculptError::Config(format!(
                "expected {} weight matrices, got {}",
                cfg.dims.len() - 1,
                weights.len()
            )));
        }
        let layers = weights
            .into_iter()
            .enumerate()
            .map(|(l, w0)| {
                let (p, q) = w0.shape();
                let mut rng = RandomStream::new(cfg.seed, STREAM_ADAPTER_BASE + l as u64);
                let adapter = LoraAdapter::init(&mut rng, p, q, cfg.rank, cfg.gamma)?;
                Ok(Layer {
                    w0,
                    adapter,
                    role: if l == 0 { LayerRole::Connector } else { LayerRole::Llm },
                    tanh_after: l == 0,
                    delta_override: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ToyModel { layers })
    }

    /// Batched forward pass; `x` is `input_dim x batch`.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut act = x.clone();
        for layer in &self.layers {
            let z = layer.effective_weight().matmul(&act).expect("layer shapes");
            act = if layer.tanh_after { z.map(f64::tanh) } else { z };
        }
        act
    }

    fn forward_cached(&self, x: &Matrix) -> (Matrix, Vec<LayerCache>) {
        let mut act = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let weff = layer.effective_weight();
            let z = weff.matmul(&act).expect("layer shapes");
            let out = if layer.tanh_after { z.map(f64::tanh) } else { z };
            caches.push(LayerCache {
                input: act,
                output: out.clone(),
                weff,
            });
            act = out;
        }
        (act, caches)
    }

    /// Backpropagates `d_out = dL/d(final activation)` and returns
    /// `dL/dW_eff` per layer.
    fn backward(&self, caches: &[LayerCache], mut d_out: Matrix) -> Vec<Matrix> {
        let n = self.layers.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        for l in (0..n).rev() {
            let cache = &caches[l];
            let dz = if self.layers[l].tanh_after {
                let dtanh = cache.output.map(|a| 1.0 - a * a);
                d_out.hadamard(&dtanh).expect("shape")
            } else {
                d_out
            };
            grads[l] = Some(dz.matmul(&cache.input.transpose()).expect("shape"));
            if l > 0 {
                d_out = cache.weff.transpose().matmul(&dz).expect("shape");
            } else {
                d_out = dz; // consumed; keeps the borrow checker happy
            }
        }
        let _ = d_out;
        grads.into_iter().map(|g| g.unwrap()).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub task_loss: f64,
    pub cmr_frob: f64,
    pub cmr_l1: f64,
    pub total_loss: f64,
}

fn sample_inputs(rng: &mut RandomStream, dim: usize, batch: usize) -> Matrix {
    rng.sample_gaussian(dim, batch, 1.0)
}

fn teacher_outputs(teacher: &Matrix, x: &Matrix) -> Matrix {
    teacher.matmul(x).expect("teacher shape")
}

/// Batch from the target task, with label noise.
fn sample_target_batch(rng: &mut RandomStream, task: &TaskSpec, batch: usize) -> (Matrix, Matrix) {
    let x = sample_inputs(rng, task.target.cols(), batch);
    let mut y = teacher_outputs(&task.target, &x);
    if task.noise_std > 0.0 {
        let noise = rng.sample_gaussian(y.rows(), y.cols(), task.noise_std);
        y = y.add(&noise).expect("shape");
    }
    (x, y)
}

/// Batch from the source mixture: each sample draws its teacher uniformly.
fn sample_mixture_batch(rng: &mut RandomStream, task: &TaskSpec, batch: usize) -> (Matrix, Matrix) {
    let inp = task.target.cols();
    let out = task.target.rows();
    let picks: Vec<usize> = (0..batch).map(|_| rng.next_below(task.sources.len())).collect();
    let x = sample_inputs(rng, inp, batch);
    let mut y = Matrix::zeros(out, batch);
    for (col, &k) in picks.iter().enumerate() {
        let teacher = &task.sources[k];
        for i in 0..out {
            let mut acc = 0.0;
            for j in 0..inp {
                acc += teacher.get(i, j) * x.get(j, col);
            }
            y.set(i, col, acc);
        }
    }
    if task.noise_std > 0.0 {
        let noise = rng.sample_gaussian(out, batch, task.noise_std);
        y = y.add(&noise).expect("shape");
    }
    (x, y)
}

fn mse(pred: &Matrix, target: &Matrix) -> f64 {
    let diff = pred.sub(target).expect("shape");
    diff.data().iter().map(|v| v * v).sum::<f64>() / diff.numel() as f64
}

/// Pretrains the frozen stack on the source mixture with momentum SGD.
/// Returns the trained weights; adapters are attached by
/// [`ToyModel::assemble`].
pub fn pretrain_weights(cfg: &TrainConfig, task: &TaskSpec) -> Result<Vec<Matrix>> {
    let mut init_rng = RandomStream::new(cfg.seed, STREAM_PRETRAIN_INIT);
    let mut weights: Vec<Matrix> = cfg
        .dims
        .windows(2)
        .map(|w| {
            let (q, p) = (w[0], w[1]);
            let std = 0.5 / (q as f64).sqrt();
            init_rng.sample_gaussian(p, q, std)
        })
        .collect();
    let tanh_after: Vec<bool> = (0..weights.len()).map(|l| l == 0).collect();
    let mut vel: Vec<Matrix> = weights
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut data_rng = RandomStream::new(cfg.seed, STREAM_PRETRAIN_DATA);

    for step in 0..cfg.pretrain_steps {
        let (x, y) = sample_mixture_batch(&mut data_rng, task, cfg.batch_size);
        // forward
        let mut act = x;
        let mut caches: Vec<(Matrix, Matrix)> = Vec::with_capacity(weights.len());
        for (w, &tanh) in weights.iter().zip(&tanh_after) {
            let z = w.matmul(&act).expect("shape");
            let out = if tanh { z.map(f64::tanh) } else { z };
            caches.push((act, out.clone()));
            act = out;
        }
        let diff = act.sub(&y).expect("shape");
        let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / diff.numel() as f64;
        if !loss.is_finite() {
            return Err(SculptError::Training {
                step,
                reason: format!("pretraining loss became non-finite ({loss})"),
            });
        }
        // backward
        let mut d_out = diff.scale(2.0 / diff.numel() as f64);
        for l in (0..weights.len()).rev() {
            let (input, output) = &caches[l];
            let dz = if tanh_after[l] {
                d_out
                    .hadamard(&output.map(|a| 1.0 - a * a))
                    .expect("shape")
            } else {
                d_out
            };
            let grad = dz.matmul(&input.transpose()).expect("shape");
            // Propagate through the weight used in the forward pass, then
            // update it.
            let d_prev = if l > 0 {
                Some(weights[l].transpose().matmul(&dz).expect("shape"))
            } else {
                None
            };
            vel[l] = vel[l].scale(cfg.momentum).add(&grad).expect("shape");
            weights[l] = weights[l]
                .sub(&vel[l].scale(cfg.pretrain_lr))
                .expect("shape");
            d_out = d_prev.unwrap_or(dz);
        }
    }
    Ok(weights)
}

/// Pretrains on the source mixture and assembles the frozen model with
/// fresh zero-delta adapters.
pub fn pretrain_base(cfg: &TrainConfig, task: &TaskSpec) -> Result<ToyModel> {
    let weights = pretrain_weights(cfg, task)?;
    ToyModel::assemble(cfg, weights)
}

struct LoopOpts {
    masking: bool,
    use_cmr: bool,
    l2_lambda: Option<f64>,
}

/// Observer invoked with the model state at the end of every step.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &ToyModel);

fn run_adapter_training(
    base: &ToyModel,
    task: &TaskSpec,
    cfg: &TrainConfig,
    opts: &LoopOpts,
    mut observer: Option<StepObserver<'_>>,
) -> Result<(ToyModel, Vec<TraceRow>)> {
    let mut model = base.clone();
    let n_layers = model.layers.len();

    // Retention masks only for layers whose term is actually active; an
    // inactive term contributes nothing to loss, gradients, or the trace.
    let mut retention: Vec<Option<(LayerReg, RetentionMask)>> = Vec::with_capacity(n_layers);
    for (layer, &tag) in model.layers.iter().zip(&cfg.layer_tags) {
        let active = opts.use_cmr
            && match tag {
                LayerReg::Frobenius => cfg.alpha > 0.0,
                LayerReg::L1 => cfg.beta > 0.0,
                LayerReg::None => false,
            };
        retention.push(if active {
            Some((tag, retention_mask(&layer.w0, cfg.omega, cfg.epsilon)?))
        } else {
            None
        });
    }

    let mut vel: Vec<(Matrix, Matrix)> = model
        .layers
        .iter()
        .map(|l| {
            (
                Matrix::zeros(l.adapter.b().rows(), l.adapter.b().cols()),
                Matrix::zeros(l.adapter.a().rows(), l.adapter.a().cols()),
            )
        })
        .collect();
    let mut data_rng = RandomStream::new(cfg.seed, STREAM_TRAIN_DATA);
    let mut trace = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        if opts.masking && step == cfg.warmup_steps {
            for layer in &mut model.layers {
                layer
                    .adapter
                    .build_masks(cfg.retained_density, cfg.retained_density)?;
            }
        }
        let masked_phase = opts.masking && step >= cfg.warmup_steps;
        if masked_phase {
            for layer in &mut model.layers {
                layer.adapter.apply_masks()?;
            }
        }

        let (x, y) = sample_target_batch(&mut data_rng, task, cfg.batch_size);
        let (y_hat, caches) = model.forward_cached(&x);
        let diff = y_hat.sub(&y).expect("shape");
        let task_loss = diff.data().iter().map(|v| v * v).sum::<f64>() / diff.numel() as f64;
        if !task_loss.is_finite() {
            return Err(SculptError::Training {
                step,
                reason: format!("task loss became non-finite ({task_loss})"),
            });
        }

        let d_out = diff.scale(2.0 / diff.numel() as f64);
        let weff_grads = model.backward(&caches, d_out);

        let mut cmr_frob_sum = 0.0;
        let mut cmr_l1_sum = 0.0;
        let mut l2_sum = 0.0;
        for l in 0..n_layers {
            let layer = &mut model.layers[l];
            let gw = &weff_grads[l];
            // Task gradient through delta = gamma * B A.
            let mut grad_b = gw
                .matmul(&layer.adapter.a().transpose())
                .expect("shape")
                .scale(cfg.gamma);
            let mut grad_a = layer
                .adapter
                .b()
                .transpose()
                .matmul(gw)
                .expect("shape")
                .scale(cfg.gamma);

            if let Some((tag, mask)) = &retention[l] {
                let reg: RegGrad = match tag {
                    LayerReg::Frobenius => cmr_frobenius_grad(mask, &layer.adapter)?,
                    LayerReg::L1 => cmr_l1_grad(mask, &layer.adapter)?,
                    LayerReg::None => unreachable!(),
                };
                let coeff = match tag {
                    LayerReg::Frobenius => {
                        cmr_frob_sum += reg.loss;
                        cfg.alpha
                    }
                    LayerReg::L1 => {
                        cmr_l1_sum += reg.loss;
                        cfg.beta
                    }
                    LayerReg::None => unreachable!(),
                };
                grad_b = grad_b.add(&reg.grad_b.scale(coeff)).expect("shape");
                grad_a = grad_a.add(&reg.grad_a.scale(coeff)).expect("shape");
            }

            if let Some(lambda) = opts.l2_lambda {
                if lambda > 0.0 {
                    let delta = layer.adapter.b().matmul(layer.adapter.a()).expect("shape");
                    let norm_sq = delta.data().iter().map(|v| v * v).sum::<f64>();
                    l2_sum += lambda * norm_sq;
                    let gb = delta
                        .matmul(&layer.adapter.a().transpose())
                        .expect("shape")
                        .scale(2.0 * lambda);
                    let ga = layer
                        .adapter
                        .b()
                        .transpose()
                        .matmul(&delta)
                        .expect("shape")
                        .scale(2.0 * lambda);
                    grad_b = grad_b.add(&gb).expect("shape");
                    grad_a = grad_a.add(&ga).expect("shape");
                }
            }

            let (vb, va) = &mut vel[l];
            *vb = vb.scale(cfg.momentum).add(&grad_b).expect("shape");
            *va = va.scale(cfg.momentum).add(&grad_a).expect("shape");
            *layer.adapter.b_mut() = layer
                .adapter
                .b()
                .sub(&vb.scale(cfg.learning_rate))
                .expect("shape");
            *layer.adapter.a_mut() = layer
                .adapter
                .a()
                .sub(&va.scale(cfg.learning_rate))
                .expect("shape");
        }

        if masked_phase {
            for layer in &mut model.layers {
                layer.adapter.apply_masks()?;
            }
        }

        let total_loss =
            task_loss + cfg.alpha * cmr_frob_sum + cfg.beta * cmr_l1_sum + l2_sum;
        trace.push(TraceRow {
            step,
            task_loss,
            cmr_frob: cmr_frob_sum,
            cmr_l1: cmr_l1_sum,
            total_loss,
        });
        if let Some(obs) = observer.as_mut() {
            obs(step, &model);
        }
    }
    Ok((model, trace))
}

/// Entrywise random drop with probability `p_drop`, survivors rescaled by
/// `1 / (1 - p_drop)`; unbiased in expectation.
pub fn dare_drop_rescale(delta: &Matrix, p_drop: f64, rng: &mut RandomStream) -> Result<Matrix> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(SculptError::parameter(
            "p_drop",
            format!("must lie in [0, 1), got {p_drop}"),
        ));
    }
    let keep_scale = 1.0 / (1.0 - p_drop);
    let mut out = delta.clone();
    for v in out.data_mut() {
        if rng.bernoulli(p_drop) {
            *v = 0.0;
        } else {
            *v *= keep_scale;
        }
    }
    Ok(out)
}

/// Replaces every layer's delta by its top-magnitude fraction `s`.
pub fn posthoc_prune(model: &ToyModel, retained_density: f64) -> Result<ToyModel> {
    let mut pruned = model.clone();
    for layer in &mut pruned.layers {
        let delta = layer.effective_delta();
        let mask = build_mask(&delta, retained_density)?;
        layer.delta_override = Some(mask.hadamard(&delta)?);
    }
    Ok(pruned)
}

/// Applies drop-and-rescale to every layer's delta.
pub fn dare_model(model: &ToyModel, p_drop: f64, seed: u64) -> Result<ToyModel> {
    let mut rng = RandomStream::new(seed, STREAM_DARE);
    let mut out = model.clone();
    for layer in &mut out.layers {
        let delta = layer.effective_delta();
        layer.delta_override = Some(dare_drop_rescale(&delta, p_drop, &mut rng)?);
    }
    Ok(out)
}

/// Fine-tunes `base` on the target task under the configured scheme and
/// reports the per-step trace. The input model is untouched.
pub fn train(base: &ToyModel, task: &TaskSpec, cfg: &TrainConfig) -> Result<(ToyModel, Vec<TraceRow>)> {
    train_with_observer(base, task, cfg, None)
}

/// [`train`] with a per-step observer (used by invariant checks).
pub fn train_with_observer(
    base: &ToyModel,
    task: &TaskSpec,
    cfg: &TrainConfig,
    observer: Option<StepObserver<'_>>,
) -> Result<(ToyModel, Vec<TraceRow>)> {
    cfg.validate()?;
    match cfg.baseline {
        Baseline::LoraSculpt => run_adapter_training(
            base,
            task,
            cfg,
            &LoopOpts {
                masking: true,
                use_cmr: true,
                l2_lambda: None,
            },
            observer,
        ),
        Baseline::Lora => run_adapter_training(
            base,
            task,
            cfg,
            &LoopOpts {
                masking: false,
                use_cmr: false,
                l2_lambda: None,
            },
            observer,
        ),
        Baseline::L2Reg => run_adapter_training(
            base,
            task,
            cfg,
            &LoopOpts {
                masking: false,
                use_cmr: false,
                l2_lambda: Some(cfg.l2_lambda),
            },
            observer,
        ),
        Baseline::PosthocPrune => {
            let (trained, trace) = run_adapter_training(
                base,
                task,
                cfg,
                &LoopOpts {
                    masking: false,
                    use_cmr: false,
                    l2_lambda: None,
                },
                observer,
            )?;
            Ok((posthoc_prune(&trained, cfg.retained_density)?, trace))
        }
        Baseline::Dare => {
            let (trained, trace) = run_adapter_training(
                base,
                task,
                cfg,
                &LoopOpts {
                    masking: false,
                    use_cmr: false,
                    l2_lambda: None,
                },
                observer,
            )?;
            Ok((dare_model(&trained, cfg.dare_drop, cfg.seed)?, trace))
        }
    }
}

/// Per-layer structural sparsity next to its closed-form expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSparsityRow {
    pub layer: usize,
    pub actual: f64,
    pub expected: f64,
}

/// Source/target scores plus per-layer sparsity, the benchmark scoreboard.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub source_mses: Vec<f64>,
    pub source_scores: Vec<f64>,
    pub target_mse: f64,
    pub target_score: f64,
    /// Mean of the per-source scores.
    pub source: f64,
    pub target: f64,
    /// `(source + target) / 2`.
    pub avg: f64,
    pub layer_sparsity: Vec<LayerSparsityRow>,
}

const EVAL_BATCH: usize = 1024;

fn score(mse: f64) -> f64 {
    1.0 / (1.0 + mse)
}

fn eval_task(model: &ToyModel, teacher: &Matrix, seed: u64, stream: u64) -> f64 {
    let mut rng = RandomStream::new(seed, stream);
    let x = sample_inputs(&mut rng, teacher.cols(), EVAL_BATCH);
    let y = teacher_outputs(teacher, &x);
    let y_hat = model.forward(&x);
    mse(&y_hat, &y)
}

/// Scores the model on every task with fixed seeded evaluation batches
/// (noise-free targets) and collects per-layer sparsity.
pub fn evaluate(model: &ToyModel, task: &TaskSpec) -> EvalReport {
    let source_mses: Vec<f64> = task
        .sources
        .iter()
        .enumerate()
        .map(|(i, teacher)| eval_task(model, teacher, task.seed, STREAM_EVAL_BASE + i as u64))
        .collect();
    let target_mse = eval_task(
        model,
        &task.target,
        task.seed,
        STREAM_EVAL_BASE + task.sources.len() as u64,
    );
    let source_scores: Vec<f64> = source_mses.iter().map(|&m| score(m)).collect();
    let target_score = score(target_mse);
    let source = source_scores.iter().sum::<f64>() / source_scores.len() as f64;
    let avg = (source + target_score) / 2.0;

    let layer_sparsity = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let (actual, expected) = if layer.adapter.has_masks() {
                let (s_b, s_a) = layer.adapter.retained_densities().unwrap();
                (
                    layer.adapter.structural_sparsity().expect("masks present"),
                    expected_sparsity_raw(s_b, s_a, layer.adapter.rank()),
                )
            } else {
                (layer.effective_delta().nonzero_fraction(), 1.0)
            };
            LayerSparsityRow {
                layer: l,
                actual,
                expected,
            }
        })
        .collect();

    EvalReport {
        source_mses,
        source_scores,
        target_mse,
        target_score,
        source,
        target: target_score,
        avg,
        layer_sparsity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            total_steps: 60,
            warmup_steps: 10,
            pretrain_steps: 300,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn task_generation_deterministic() {
        let cfg = quick_cfg();
        let a = TaskSpec::generate(&cfg);
        let b = TaskSpec::generate(&cfg);
        assert!(a.target.bit_eq(&b.target));
        assert_eq!(a.sources.len(), 4);
        for (x, y) in a.sources.iter().zip(&b.sources) {
            assert!(x.bit_eq(y));
        }
    }

    #[test]
    fn pretrain_deterministic_and_zero_delta_adapters() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let m1 = pretrain_base(&cfg, &task).unwrap();
        let m2 = pretrain_base(&cfg, &task).unwrap();
        for (l1, l2) in m1.layers.iter().zip(&m2.layers) {
            assert!(l1.w0.bit_eq(&l2.w0));
        }
        // Adapters contribute nothing at initialization.
        let mut rng = RandomStream::new(7, 999);
        let x = rng.sample_gaussian(cfg.input_dim(), 16, 1.0);
        let with_adapters = m1.forward(&x);
        let frozen_only = {
            let mut stripped = m1.clone();
            for layer in &mut stripped.layers {
                layer.delta_override = Some(Matrix::zeros(layer.w0.rows(), layer.w0.cols()));
            }
            stripped.forward(&x)
        };
        assert!(with_adapters.bit_eq(&frozen_only));
    }

    #[test]
    fn pretrain_fits_source_mixture() {
        let cfg = TrainConfig::default();
        let task = TaskSpec::generate(&cfg);
        let model = pretrain_base(&cfg, &task).unwrap();
        // Held-out mixture batch, noise-free targets.
        let mut rng = RandomStream::new(cfg.seed, 0xDEAD);
        let x = sample_inputs(&mut rng, cfg.input_dim(), 512);
        let mixture_mse: f64 = task
            .sources
            .iter()
            .map(|t| mse(&model.forward(&x), &teacher_outputs(t, &x)))
            .sum::<f64>()
            / task.sources.len() as f64;
        assert!(mixture_mse < 0.05, "mixture mse {mixture_mse}");
    }

    #[test]
    fn w0_frozen_through_training() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let before: Vec<Vec<u8>> = base
            .layers
            .iter()
            .map(|l| l.w0.data().iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        let (trained, _) = train(&base, &task, &cfg).unwrap();
        for (layer, snap) in trained.layers.iter().zip(&before) {
            let after: Vec<u8> = layer.w0.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            assert_eq!(&after, snap);
        }
    }

    #[test]
    fn masked_entries_stay_zero() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let mut violations = 0usize;
        let mut observer = |step: usize, m: &ToyModel| {
            if step < cfg.warmup_steps {
                return;
            }
            for layer in &m.layers {
                let ad = &layer.adapter;
                let (mb, ma) = (ad.mask_b().unwrap(), ad.mask_a().unwrap());
                for (v, mask) in ad.b().data().iter().zip(mb.data()) {
                    if *mask == 0.0 && *v != 0.0 {
                        violations += 1;
                    }
                }
                for (v, mask) in ad.a().data().iter().zip(ma.data()) {
                    if *mask == 0.0 && *v != 0.0 {
                        violations += 1;
                    }
                }
            }
        };
        train_with_observer(&base, &task, &cfg, Some(&mut observer)).unwrap();
        assert_eq!(violations, 0);
    }

    #[test]
    fn sculpt_reduces_to_lora_at_full_density() {
        let mut cfg = quick_cfg();
        cfg.retained_density = 1.0;
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();

        let (sculpt_model, sculpt_trace) = train(&base, &task, &cfg).unwrap();
        let mut lora_cfg = cfg.clone();
        lora_cfg.baseline = Baseline::Lora;
        let (lora_model, lora_trace) = train(&base, &task, &lora_cfg).unwrap();

        assert_eq!(sculpt_trace.len(), lora_trace.len());
        for (s, l) in sculpt_trace.iter().zip(&lora_trace) {
            assert_eq!(s.task_loss.to_bits(), l.task_loss.to_bits());
            assert_eq!(s.total_loss.to_bits(), l.total_loss.to_bits());
            assert_eq!(s.cmr_frob, 0.0);
            assert_eq!(s.cmr_l1, 0.0);
        }
        for (a, b) in sculpt_model.layers.iter().zip(&lora_model.layers) {
            assert!(a.adapter.b().bit_eq(b.adapter.b()));
            assert!(a.adapter.a().bit_eq(b.adapter.a()));
        }
    }

    #[test]
    fn dare_zero_drop_is_identity() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let mut lora_cfg = cfg.clone();
        lora_cfg.baseline = Baseline::Lora;
        let (trained, _) = train(&base, &task, &lora_cfg).unwrap();
        let dared = dare_model(&trained, 0.0, cfg.seed).unwrap();
        for (orig, d) in trained.layers.iter().zip(&dared.layers) {
            let delta = orig.adapter.delta_weight();
            assert!(d.delta_override.as_ref().unwrap().bit_eq(&delta));
        }
    }

    #[test]
    fn posthoc_full_density_matches_lora() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let mut lora_cfg = cfg.clone();
        lora_cfg.baseline = Baseline::Lora;
        let (trained, _) = train(&base, &task, &lora_cfg).unwrap();
        let pruned = posthoc_prune(&trained, 1.0).unwrap();
        let mut rng = RandomStream::new(3, 3);
        let x = rng.sample_gaussian(cfg.input_dim(), 8, 1.0);
        assert!(pruned.forward(&x).bit_eq(&trained.forward(&x)));
    }

    #[test]
    fn posthoc_respects_density() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let mut lora_cfg = cfg.clone();
        lora_cfg.baseline = Baseline::Lora;
        let (trained, _) = train(&base, &task, &lora_cfg).unwrap();
        let pruned = posthoc_prune(&trained, 0.1).unwrap();
        for layer in &pruned.layers {
            let delta = layer.delta_override.as_ref().unwrap();
            let kept = delta.data().iter().filter(|&&v| v != 0.0).count();
            let expected = (0.1 * delta.numel() as f64).round() as usize;
            assert_eq!(kept, expected);
        }
    }

    #[test]
    fn evaluate_scores_and_aggregates() {
        let cfg = quick_cfg();
        let task = TaskSpec::generate(&cfg);
        let base = pretrain_base(&cfg, &task).unwrap();
        let report = evaluate(&base, &task);
        assert_eq!(report.source_scores.len(), 4);
        let mean = report.source_scores.iter().sum::<f64>() / 4.0;
        assert!((report.source - mean).abs() < 1e-15);
        assert!((report.avg - (report.source + report.target) / 2.0).abs() < 1e-15);
        // Before fine-tuning the model knows the sources, not the target.
        assert!(report.source > report.target);
        // Dense adapters: per-layer sparsity defaults to the dense row.
        for row in &report.layer_sparsity {
            assert_eq!(row.expected, 1.0);
        }
    }

    #[test]
    fn score_transform() {
        assert_eq!(score(0.0), 1.0);
        assert!((score(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn training_rejects_bad_config() {
        let mut cfg = quick_cfg();
        cfg.warmup_steps = cfg.total_steps;
        let task = TaskSpec::generate(&cfg);
        let base = {
            let mut ok = quick_cfg();
            ok.seed = cfg.seed;
            pretrain_base(&ok, &task).unwrap()
        };
        assert!(matches!(
            train(&base, &task, &cfg),
            Err(SculptError::Config(_))
        ));
    }

    #[test]
    fn config_validation_catches_errors() {
        let mut cfg = TrainConfig::default();
        cfg.retained_density = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = TrainConfig::default();
        cfg.rank = 64;
        assert!(cfg.validate().is_err());

        let mut cfg = TrainConfig::default();
        cfg.layer_tags.pop();
        assert!(cfg.validate().is_err());

        assert!(TrainConfig::default().validate().is_ok());
    }
}
