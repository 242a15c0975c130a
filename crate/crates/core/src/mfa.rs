//! Multi-branch fusion attention for a single modality.
//!
//! HIFA turns a feature map into a per-channel descriptor `d̂` through four
//! chained 1×1 convolutions whose outputs are globally pooled (avg, max, avg,
//! max), concatenated hierarchically and compressed by a fully connected
//! layer. CLIA produces a spatial map `l̂` from two sigmoid-gated 1×1
//! convolutions with 3×3 local average pooling and a skip fusion. The two are
//! combined into an attention map `a = σ(d̂·ω_d + l̂·ω_l)` that rescales the
//! input as `x' = x ⊗ a ⊗ ω_c`.

use drifa_tensor::{Graph, ParamStore, PoolKind, RandomStream, Var};

use crate::error::{CoreError, Result};
use crate::layers::{Conv, Dense, Modulation};

/// Kernel of the local pooling stages; stride 1 with same padding keeps H×W.
pub const LOCAL_POOL_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct HifaParams {
    pub psi: [Conv; 4],
    /// Compresses the 4C concatenation back to C.
    pub f: Dense,
    pub channels: usize,
}

impl HifaParams {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut RandomStream) -> Result<Self> {
        let mut conv = |i: usize| Conv::new(store, &format!("{prefix}.psi{i}"), 1, channels, channels, 1, rng);
        let psi = [conv(0)?, conv(1)?, conv(2)?, conv(3)?];
        let f = Dense::new(store, &format!("{prefix}.f"), 4 * channels, channels, rng)?;
        Ok(Self { psi, f, channels })
    }
}

#[derive(Clone, Debug)]
pub struct CliaParams {
    pub psi1: Conv,
    pub psi2: Conv,
    pub channels: usize,
}

impl CliaParams {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut RandomStream) -> Result<Self> {
        Ok(Self {
            psi1: Conv::new(store, &format!("{prefix}.psi1"), 1, channels, channels, 1, rng)?,
            psi2: Conv::new(store, &format!("{prefix}.psi2"), 1, channels, channels, 1, rng)?,
            channels,
        })
    }
}

/// Which of the three MFA modulation weights participate in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MfaOmegaSwitches {
    pub d: bool,
    pub l: bool,
    pub c: bool,
}

impl Default for MfaOmegaSwitches {
    fn default() -> Self {
        Self { d: true, l: true, c: true }
    }
}

#[derive(Clone, Debug)]
pub struct MfaWeights {
    /// Scalar weight on `d̂`.
    pub omega_d: Modulation,
    /// Scalar weight on `l̂`.
    pub omega_l: Modulation,
    /// Per-channel weight on the attended output.
    pub omega_c: Modulation,
    pub channels: usize,
}

impl MfaWeights {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, on: MfaOmegaSwitches) -> Result<Self> {
        Ok(Self {
            omega_d: Modulation::new(store, &format!("{prefix}.omega_d"), 1, on.d)?,
            omega_l: Modulation::new(store, &format!("{prefix}.omega_l"), 1, on.l)?,
            omega_c: Modulation::new(store, &format!("{prefix}.omega_c"), channels, on.c)?,
            channels,
        })
    }
}

fn check_map(g: &Graph, x: Var, channels: usize, what: &str) -> Result<[usize; 4]> {
    match *g.shape(x) {
        [n, h, w, c] if c == channels => Ok([n, h, w, c]),
        ref s => Err(CoreError::Tensor(drifa_tensor::TensorError::ShapeMismatch(format!(
            "{what} expects N×H×W×{channels}, got {s:?}"
        )))),
    }
}

/// `d̂` (N×C) from an N×H×W×C map.
pub fn hifa_forward(g: &mut Graph, x: Var, params: &HifaParams) -> Result<Var> {
    let [n, _, _, c] = check_map(g, x, params.channels, "HIFA")?;
    let pi = params.psi[0].forward(g, x)?;
    let lambda1 = params.psi[1].forward(g, pi)?;
    let fused = g.add(pi, lambda1)?;
    let lambda2 = params.psi[2].forward(g, fused)?;
    let lambda3 = params.psi[3].forward(g, lambda2)?;

    let streams = [(pi, PoolKind::Avg), (lambda1, PoolKind::Max), (lambda2, PoolKind::Avg), (lambda3, PoolKind::Max)];
    let mut pooled = Vec::with_capacity(4);
    for (s, kind) in streams {
        let p = g.global_pool(kind, s)?;
        pooled.push(g.reshape(p, vec![n, c])?);
    }
    let h0 = g.concat(&pooled[0..2], 1)?;
    let h1 = g.concat(&pooled[2..4], 1)?;
    let h = g.concat(&[h0, h1], 1)?;
    params.f.forward(g, h)
}

/// `l̂` (N×H×W×C), each element in (0, 2).
pub fn clia_forward(g: &mut Graph, x: Var, params: &CliaParams) -> Result<Var> {
    check_map(g, x, params.channels, "CLIA")?;
    let z1 = params.psi1.forward(g, x)?;
    let eta1 = g.sigmoid(z1);
    let compressed = g.local_pool(PoolKind::Avg, eta1, LOCAL_POOL_KERNEL, 1)?;
    let z2 = params.psi2.forward(g, compressed)?;
    let eta2 = g.sigmoid(z2);
    let refined = g.local_pool(PoolKind::Avg, eta2, LOCAL_POOL_KERNEL, 1)?;
    Ok(g.add(compressed, refined)?)
}

/// `a = σ(d̂·ω_d + l̂·ω_l)` with `d̂` broadcast over H×W. Either input may be
/// absent (its sub-module ablated); at least one must be present, and the
/// map shape then comes from `l̂` or from `spatial` when only `d̂` is given.
pub fn mfa_attention(
    g: &mut Graph,
    d_hat: Option<Var>,
    l_hat: Option<Var>,
    spatial: Option<[usize; 2]>,
    w: &MfaWeights,
) -> Result<Var> {
    let d_term = match d_hat {
        Some(d) => {
            let [n, c] = *g.shape(d) else {
                return Err(shape_mismatch(format!("d̂ must be N×C, got {:?}", g.shape(d))));
            };
            if c != w.channels {
                return Err(shape_mismatch(format!("d̂ has {c} channels, weights expect {}", w.channels)));
            }
            let d = w.omega_d.apply(g, d, vec![1, 1])?;
            Some((g.reshape(d, vec![n, 1, 1, c])?, n, c))
        }
        None => None,
    };
    let l_term = match l_hat {
        Some(l) => {
            check_map(g, l, w.channels, "l̂")?;
            Some(w.omega_l.apply(g, l, vec![1, 1, 1, 1])?)
        }
        None => None,
    };
    let logits = match (d_term, l_term) {
        (Some((d, dn, _)), Some(l)) => {
            if g.shape(l)[0] != dn {
                return Err(shape_mismatch("d̂ and l̂ batch sizes differ".into()));
            }
            g.add(l, d)?
        }
        (None, Some(l)) => l,
        (Some((d, n, c)), None) => {
            let [h, wd] = spatial.ok_or_else(|| shape_mismatch("spatial size needed without l̂".into()))?;
            g.broadcast_to(d, vec![n, h, wd, c])?
        }
        (None, None) => return Err(CoreError::InvalidConfig("MFA attention needs d̂ or l̂".into())),
    };
    Ok(g.sigmoid(logits))
}

/// `x' = x ⊗ a ⊗ ω_c`.
pub fn mfa_apply(g: &mut Graph, x: Var, a: Var, w: &MfaWeights) -> Result<Var> {
    check_map(g, x, w.channels, "MFA input")?;
    if g.shape(a) != g.shape(x) {
        return Err(shape_mismatch(format!("attention {:?} vs input {:?}", g.shape(a), g.shape(x))));
    }
    let attended = g.mul(x, a)?;
    w.omega_c.apply(g, attended, vec![1, 1, 1, w.channels])
}

fn shape_mismatch(msg: String) -> CoreError {
    CoreError::Tensor(drifa_tensor::TensorError::ShapeMismatch(msg))
}

/// Sub-module toggles inside one MFA instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MfaSwitches {
    pub hifa: bool,
    pub clia: bool,
}

/// One MFA instance. With both HIFA and CLIA switched off it is an identity.
#[derive(Clone, Debug)]
pub struct Mfa {
    pub hifa: HifaParams,
    pub clia: CliaParams,
    pub weights: MfaWeights,
    pub switches: MfaSwitches,
}

pub struct MfaOutput {
    pub output: Var,
    pub attention: Option<Var>,
}

impl Mfa {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        switches: MfaSwitches,
        omegas: MfaOmegaSwitches,
        rng: &mut RandomStream,
    ) -> Result<Self> {
        Ok(Self {
            hifa: HifaParams::new(store, &format!("{prefix}.hifa"), channels, rng)?,
            clia: CliaParams::new(store, &format!("{prefix}.clia"), channels, rng)?,
            weights: MfaWeights::new(store, prefix, channels, omegas)?,
            switches,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<MfaOutput> {
        if !self.switches.hifa && !self.switches.clia {
            return Ok(MfaOutput { output: x, attention: None });
        }
        let [_, h, w, _] = check_map(g, x, self.weights.channels, "MFA")?;
        let d_hat = if self.switches.hifa { Some(hifa_forward(g, x, &self.hifa)?) } else { None };
        let l_hat = if self.switches.clia { Some(clia_forward(g, x, &self.clia)?) } else { None };
        let a = mfa_attention(g, d_hat, l_hat, Some([h, w]), &self.weights)?;
        let output = mfa_apply(g, x, a, &self.weights)?;
        Ok(MfaOutput { output, attention: Some(a) })
    }
}
