//! The assembled network: per-modality residual-attention branches, the shared
//! MIFA stage, per-task heads, the weighted multitask loss and gradient-based
//! saliency.

use drifa_tensor::{Adam, Graph, ParamStore, PoolKind, RandomStream, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layers::{Conv, Dense};
use crate::mfa::{Mfa, MfaOmegaSwitches, MfaSwitches};
use crate::mifa::{mifa_forward, MifaOmegaSwitches, MifaParams, MifaSwitches};

/// Sub-module toggles used by the ablation grids. A disabled module becomes
/// an identity pass-through; shapes never change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub mfa: bool,
    pub mifa: bool,
    pub hifa: bool,
    pub clia: bool,
    pub mgifa: bool,
    pub mlifa: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::all(true)
    }
}

impl AblationFlags {
    pub fn all(on: bool) -> Self {
        Self { mfa: on, mifa: on, hifa: on, clia: on, mgifa: on, mlifa: on }
    }

    fn mfa_switches(&self) -> MfaSwitches {
        MfaSwitches { hifa: self.mfa && self.hifa, clia: self.mfa && self.clia }
    }

    fn mifa_switches(&self) -> MifaSwitches {
        MifaSwitches { mgifa: self.mifa && self.mgifa, mlifa: self.mifa && self.mlifa }
    }
}

/// Which learnable modulation weights are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OmegaFlags {
    pub omega_d: bool,
    pub omega_l: bool,
    pub omega_c: bool,
    pub omega_dm: bool,
    pub omega_lm: bool,
    pub omega_cm: bool,
}

impl Default for OmegaFlags {
    fn default() -> Self {
        Self::all(true)
    }
}

impl OmegaFlags {
    pub fn all(on: bool) -> Self {
        Self { omega_d: on, omega_l: on, omega_c: on, omega_dm: on, omega_lm: on, omega_cm: on }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrifaNetConfig {
    pub modalities: usize,
    pub in_channels: usize,
    /// Common channel width after each modality's stem.
    pub channels: usize,
    /// RRA blocks per branch.
    pub blocks: usize,
    /// Block indices that halve H×W and double the channel width.
    pub downsample_blocks: Vec<usize>,
    /// Class count per task.
    pub tasks: Vec<usize>,
    /// Loss weight per task; uniform 1/t when absent.
    pub task_weights: Option<Vec<f64>>,
    /// Dropout rate before each head, active in training and MC passes.
    pub dropout: f64,
    pub ablation: AblationFlags,
    pub omegas: OmegaFlags,
}

impl Default for DrifaNetConfig {
    fn default() -> Self {
        Self {
            modalities: 2,
            in_channels: 1,
            channels: 8,
            blocks: 2,
            downsample_blocks: Vec::new(),
            tasks: vec![2],
            task_weights: None,
            dropout: 0.25,
            ablation: AblationFlags::default(),
            omegas: OmegaFlags::default(),
        }
    }
}

impl DrifaNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
        if self.modalities == 0 || self.in_channels == 0 || self.channels == 0 {
            return bad("modalities, in_channels and channels must be positive".into());
        }
        let mifa = self.ablation.mifa_switches();
        if (mifa.mgifa || mifa.mlifa) && self.modalities < 2 {
            return bad(format!("MIFA needs at least two modalities, got {}", self.modalities));
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        if let Some(&n) = self.tasks.iter().find(|&&n| n < 2) {
            return bad(format!("each task needs at least 2 classes, got {n}"));
        }
        if let Some(w) = &self.task_weights {
            if w.len() != self.tasks.len() {
                return Err(CoreError::WeightCountMismatch { expected: self.tasks.len(), got: w.len() });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("task weights must be finite and non-negative, got {w:?}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let Some(&b) = self.downsample_blocks.iter().find(|&&b| b >= self.blocks) {
            return bad(format!("downsample block {b} but only {} blocks", self.blocks));
        }
        Ok(())
    }

    pub fn task_weights(&self) -> Vec<f64> {
        self.task_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.tasks.len() as f64; self.tasks.len()])
    }

    /// Channel width at the end of each branch.
    pub fn feature_channels(&self) -> usize {
        self.channels << self.downsample_blocks.len()
    }

    fn mfa_omegas(&self) -> MfaOmegaSwitches {
        MfaOmegaSwitches { d: self.omegas.omega_d, l: self.omegas.omega_l, c: self.omegas.omega_c }
    }
}

/// Residual block with an MFA after each 3×3 convolution.
#[derive(Clone, Debug)]
pub struct RraBlock {
    pub conv1: Conv,
    pub mfa1: Mfa,
    pub conv2: Conv,
    pub mfa2: Mfa,
    /// Strided 1×1 projection on the skip path of downsampling blocks.
    pub skip: Option<Conv>,
}

impl RraBlock {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels_in: usize,
        downsample: bool,
        config: &DrifaNetConfig,
        rng: &mut RandomStream,
    ) -> Result<Self> {
        let (out, stride) = if downsample { (channels_in * 2, 2) } else { (channels_in, 1) };
        let switches = config.ablation.mfa_switches();
        let omegas = config.mfa_omegas();
        let conv1 = Conv::new(store, &format!("{prefix}.conv1"), 3, channels_in, out, stride, rng)?;
        let mfa1 = Mfa::new(store, &format!("{prefix}.conv1.mfa"), out, switches, omegas, rng)?;
        let conv2 = Conv::new(store, &format!("{prefix}.conv2"), 3, out, out, 1, rng)?;
        let mfa2 = Mfa::new(store, &format!("{prefix}.conv2.mfa"), out, switches, omegas, rng)?;
        let skip = if downsample {
            Some(Conv::new(store, &format!("{prefix}.skip"), 1, channels_in, out, 2, rng)?)
        } else {
            None
        };
        Ok(Self { conv1, mfa1, conv2, mfa2, skip })
    }
}

/// `y = skip(x) + MFA(relu(conv2(MFA(relu(conv1(x))))))`. Returns the block
/// output and the attention maps it produced.
pub fn rra_forward(g: &mut Graph, x: Var, block: &RraBlock) -> Result<(Var, Vec<Var>)> {
    let mut maps = Vec::new();
    let h = block.conv1.forward(g, x)?;
    let h = g.relu(h);
    let h = block.mfa1.forward(g, h)?;
    maps.extend(h.attention);
    let h = block.conv2.forward(g, h.output)?;
    let h = g.relu(h);
    let h = block.mfa2.forward(g, h)?;
    maps.extend(h.attention);
    let skip = match &block.skip {
        Some(proj) => proj.forward(g, x)?,
        None => x,
    };
    if g.shape(skip) != g.shape(h.output) {
        return Err(CoreError::Tensor(TensorError::ShapeMismatch(format!(
            "residual {:?} vs skip {:?}",
            g.shape(h.output),
            g.shape(skip)
        ))));
    }
    Ok((g.add(skip, h.output)?, maps))
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub stem: Conv,
    pub blocks: Vec<RraBlock>,
    /// Extra MFA after the last block.
    pub refine: Mfa,
}

/// Aligned samples from every modality plus labels for every task.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalBatch {
    /// One N×H×W×C_in tensor per modality.
    pub inputs: Vec<Tensor>,
    /// One label vector of length N per task.
    pub labels: Vec<Vec<usize>>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, |t| t.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Stochastic<'r> {
    pub rng: &'r mut RandomStream,
    pub rate: f64,
}

/// Intermediate values exposed for inspection.
pub struct Taps {
    /// Refined branch output per modality (MIFA input).
    pub x_prime: Vec<Var>,
    /// Every MFA attention map, in evaluation order.
    pub mfa_maps: Vec<Var>,
    /// Shared MIFA map, absent when MIFA is ablated.
    pub shared_attention: Option<Var>,
    /// Per-modality MIFA output.
    pub shared: Vec<Var>,
}

pub struct NetOutput {
    pub logits: Vec<Var>,
    pub taps: Taps,
}

pub struct MtlLoss {
    pub total: Var,
    pub per_task: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: f64,
    pub per_task: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DrifaNet {
    pub config: DrifaNetConfig,
    pub store: ParamStore,
    pub branches: Vec<Branch>,
    pub mifa: MifaParams,
    pub heads: Vec<Dense>,
}

impl DrifaNet {
    pub fn new(config: DrifaNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = drifa_tensor::stream(seed);
        let mut store = ParamStore::new();
        let switches = config.ablation.mfa_switches();
        let mut branches = Vec::with_capacity(config.modalities);
        for b in 0..config.modalities {
            let stem = Conv::new(&mut store, &format!("branch{b}.stem"), 3, config.in_channels, config.channels, 1, &mut rng)?;
            let mut width = config.channels;
            let mut blocks = Vec::with_capacity(config.blocks);
            for r in 0..config.blocks {
                let down = config.downsample_blocks.contains(&r);
                blocks.push(RraBlock::new(&mut store, &format!("branch{b}.rra{r}"), width, down, &config, &mut rng)?);
                if down {
                    width *= 2;
                }
            }
            let refine = Mfa::new(&mut store, &format!("branch{b}.refine.mfa"), width, switches, config.mfa_omegas(), &mut rng)?;
            branches.push(Branch { stem, blocks, refine });
        }
        let width = config.feature_channels();
        let o = config.omegas;
        let mifa = MifaParams::new(
            &mut store,
            config.modalities,
            width,
            config.ablation.mifa_switches(),
            MifaOmegaSwitches { dm: o.omega_dm, lm: o.omega_lm, cm: o.omega_cm },
            &mut rng,
        )?;
        let heads = config
            .tasks
            .iter()
            .enumerate()
            .map(|(t, &n)| Dense::new(&mut store, &format!("head{t}"), config.modalities * width, n, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, store, branches, mifa, heads })
    }

    fn check_inputs(&self, g: &Graph, inputs: &[Var]) -> Result<usize> {
        if inputs.len() != self.config.modalities {
            return Err(CoreError::ConfigMismatch(format!(
                "{} modality inputs for a {}-modality model",
                inputs.len(),
                self.config.modalities
            )));
        }
        let first = g.shape(inputs[0]).to_vec();
        match first[..] {
            [n, _, _, c] if c == self.config.in_channels => {
                if inputs.iter().any(|&x| g.shape(x) != first.as_slice()) {
                    return Err(CoreError::ConfigMismatch("modality inputs differ in shape".into()));
                }
                Ok(n)
            }
            _ => Err(CoreError::ConfigMismatch(format!(
                "inputs must be N×H×W×{}, got {first:?}",
                self.config.in_channels
            ))),
        }
    }

    /// Forward pass on `g` (which must borrow `self.store`). Dropout is active
    /// only when `stochastic` is given.
    pub fn forward(&self, g: &mut Graph, inputs: &[Var], stochastic: Option<Stochastic<'_>>) -> Result<NetOutput> {
        let n = self.check_inputs(g, inputs)?;
        let mut x_prime = Vec::with_capacity(inputs.len());
        let mut mfa_maps = Vec::new();
        for (branch, &x) in self.branches.iter().zip(inputs) {
            let h = branch.stem.forward(g, x)?;
            let mut h = g.relu(h);
            for block in &branch.blocks {
                let (out, maps) = rra_forward(g, h, block)?;
                mfa_maps.extend(maps);
                h = out;
            }
            let refined = branch.refine.forward(g, h)?;
            mfa_maps.extend(refined.attention);
            x_prime.push(refined.output);
        }

        let fused = mifa_forward(g, &x_prime, &self.mifa)?;
        let width = self.config.feature_channels();
        let mut pooled = Vec::with_capacity(fused.shared.len());
        for &xs in &fused.shared {
            let p = g.global_pool(PoolKind::Avg, xs)?;
            pooled.push(g.reshape(p, vec![n, width])?);
        }
        let features = g.concat(&pooled, 1)?;

        let mut stochastic = stochastic;
        let mut logits = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let h = match stochastic.as_mut() {
                Some(s) => g.dropout(features, s.rate, s.rng, true)?,
                None => features,
            };
            logits.push(head.forward(g, h)?);
        }
        Ok(NetOutput {
            logits,
            taps: Taps { x_prime, mfa_maps, shared_attention: fused.attention, shared: fused.shared },
        })
    }

    /// Per-task logits for a batch of inputs.
    pub fn logits(&self, inputs: &[Tensor], stochastic: Option<Stochastic<'_>>) -> Result<Vec<Tensor>> {
        let mut g = Graph::with_params(&self.store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.forward(&mut g, &vars, stochastic)?;
        Ok(out.logits.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Per-task softmax probabilities.
    pub fn probabilities(&self, inputs: &[Tensor], stochastic: Option<Stochastic<'_>>) -> Result<Vec<Tensor>> {
        let mut g = Graph::with_params(&self.store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.forward(&mut g, &vars, stochastic)?;
        out.logits
            .iter()
            .map(|&v| {
                let p = g.softmax(v, 1)?;
                Ok(g.value(p).clone())
            })
            .collect()
    }

    /// Deterministic argmax predictions per task.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Vec<Vec<usize>>> {
        Ok(self.logits(inputs, None)?.iter().map(argmax_rows).collect())
    }

    /// Loss and parameter gradients for one batch; gradients are loaded into
    /// the store.
    pub fn compute_gradients(&mut self, batch: &MultimodalBatch, stochastic: Option<Stochastic<'_>>) -> Result<StepReport> {
        let weights = self.config.task_weights();
        let (report, grads) = {
            let mut g = Graph::with_params(&self.store);
            let vars: Vec<Var> = batch.inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = self.forward(&mut g, &vars, stochastic)?;
            let loss = mtl_loss(&mut g, &out.logits, &batch.labels, &weights)?;
            let report = StepReport {
                loss: g.value(loss.total).data()[0],
                per_task: loss.per_task.iter().map(|&v| g.value(v).data()[0]).collect(),
            };
            (report, g.backward(loss.total)?)
        };
        self.store.load_grads(&grads);
        Ok(report)
    }

    /// One optimizer step on a batch.
    pub fn train_step(&mut self, batch: &MultimodalBatch, adam: &mut Adam, rng: &mut RandomStream) -> Result<StepReport> {
        let rate = self.config.dropout;
        let report = self.compute_gradients(batch, Some(Stochastic { rng, rate }))?;
        adam.step(&mut self.store)?;
        Ok(report)
    }

    /// Deterministic multitask loss on a batch, without gradients.
    pub fn evaluate_loss(&self, batch: &MultimodalBatch) -> Result<StepReport> {
        let weights = self.config.task_weights();
        let mut g = Graph::with_params(&self.store);
        let vars: Vec<Var> = batch.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.forward(&mut g, &vars, None)?;
        let loss = mtl_loss(&mut g, &out.logits, &batch.labels, &weights)?;
        Ok(StepReport {
            loss: g.value(loss.total).data()[0],
            per_task: loss.per_task.iter().map(|&v| g.value(v).data()[0]).collect(),
        })
    }
}

/// Row-wise argmax of an N×n tensor; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let n = t.shape()[t.rank() - 1];
    t.data()
        .chunks_exact(n)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// `Σ_t ω_t · CE_t`, returned with the per-task components.
pub fn mtl_loss(g: &mut Graph, logits: &[Var], labels: &[Vec<usize>], weights: &[f64]) -> Result<MtlLoss> {
    if weights.len() != logits.len() {
        return Err(CoreError::WeightCountMismatch { expected: logits.len(), got: weights.len() });
    }
    if labels.len() != logits.len() {
        return Err(CoreError::LengthMismatch(format!("{} label vectors for {} tasks", labels.len(), logits.len())));
    }
    let mut per_task = Vec::with_capacity(logits.len());
    let mut total: Option<Var> = None;
    for ((&z, y), &w) in logits.iter().zip(labels).zip(weights) {
        let ce = g.cross_entropy(z, y)?;
        per_task.push(ce);
        let weighted = g.scale(ce, w);
        total = Some(match total {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }
    Ok(MtlLoss { total: total.expect("at least one task"), per_task })
}

/// Grad-CAM style maps for `class` of `task`, one N×H×W tensor per modality,
/// each image normalised to [0, 1].
///
/// Taken at the MIFA output of each branch: channel weights are the spatial
/// mean of ∂logit/∂feature, the map is relu of the weighted channel sum,
/// upsampled (nearest) to the input size when the branch downsampled.
pub fn saliency(net: &DrifaNet, inputs: &[Tensor], task: usize, class: usize) -> Result<Vec<Tensor>> {
    let classes = *net.config.tasks.get(task).ok_or(CoreError::InvalidTaskOrClass { task, class })?;
    if class >= classes {
        return Err(CoreError::InvalidTaskOrClass { task, class });
    }
    let mut g = Graph::with_params(&net.store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = net.forward(&mut g, &vars, None)?;
    let z = out.logits[task];
    let n = g.shape(z)[0];
    let pick = g.constant(Tensor::from_fn(vec![n, classes], |i| if i[1] == class { 1.0 } else { 0.0 }));
    let picked = g.mul(z, pick)?;
    let objective = g.sum(picked);
    let features: Vec<Tensor> = out.taps.shared.iter().map(|&v| g.value(v).clone()).collect();
    let grads = g.backward(objective)?;

    let (in_h, in_w) = (inputs[0].shape()[1], inputs[0].shape()[2]);
    let mut maps = Vec::with_capacity(features.len());
    for (feat, &var) in features.iter().zip(&out.taps.shared) {
        let [_, h, w, c] = *feat.shape() else { unreachable!("branch features are NHWC") };
        let dfeat = grads.wrt(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; feat.numel()]);
        let mut map = Tensor::zeros(vec![n, in_h, in_w]);
        for b in 0..n {
            let mut alpha = vec![0.0; c];
            for p in 0..h * w {
                for (ch, a) in alpha.iter_mut().enumerate() {
                    *a += dfeat[(b * h * w + p) * c + ch];
                }
            }
            alpha.iter_mut().for_each(|a| *a /= (h * w) as f64);
            let cam: Vec<f64> = (0..h * w)
                .map(|p| {
                    let base = (b * h * w + p) * c;
                    let v: f64 = alpha.iter().enumerate().map(|(ch, a)| a * feat.data()[base + ch]).sum();
                    v.max(0.0)
                })
                .collect();
            let peak = cam.iter().copied().fold(0.0, f64::max);
            for y in 0..in_h {
                for x in 0..in_w {
                    let v = cam[(y * h / in_h) * w + x * w / in_w];
                    map.set(&[b, y, x], if peak > 0.0 { v / peak } else { 0.0 });
                }
            }
        }
        maps.push(map);
    }
    Ok(maps)
}
