//! Multimodal information fusion attention.
//!
//! Same-kind pooled features are summed across modalities, passed through a
//! per-kind projection and added up: global min/max/avg pooling gives `g'`
//! (N×C), local 3×3 min/max/avg pooling gives `l'` (N×H×W×C, projection as a
//! 1×1 convolution). One shared map `A = σ(g'·ω_dm + l'·ω_lm)` then rescales
//! every modality: `x^s_i = x'_i ⊗ A ⊗ ω_cm[i]`.

use drifa_tensor::{Graph, ParamStore, PoolKind, RandomStream, TensorError, Var};

use crate::error::{CoreError, Result};
use crate::layers::{Conv, Dense, Modulation};
use crate::mfa::LOCAL_POOL_KERNEL;

/// Pooling kinds in fusion order: min, max, avg.
pub const POOL_ORDER: [PoolKind; 3] = [PoolKind::Min, PoolKind::Max, PoolKind::Avg];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MifaOmegaSwitches {
    pub dm: bool,
    pub lm: bool,
    pub cm: bool,
}

impl Default for MifaOmegaSwitches {
    fn default() -> Self {
        Self { dm: true, lm: true, cm: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MifaSwitches {
    pub mgifa: bool,
    pub mlifa: bool,
}

#[derive(Clone, Debug)]
pub struct MifaParams {
    /// Projections for global min, max, avg.
    pub global_fc: [Dense; 3],
    /// Per-pixel projections for local min, max, avg.
    pub local_fc: [Conv; 3],
    pub omega_dm: Modulation,
    pub omega_lm: Modulation,
    /// One channel vector per modality.
    pub omega_cm: Vec<Modulation>,
    pub channels: usize,
    pub switches: MifaSwitches,
}

impl MifaParams {
    pub fn new(
        store: &mut ParamStore,
        modalities: usize,
        channels: usize,
        switches: MifaSwitches,
        omegas: MifaOmegaSwitches,
        rng: &mut RandomStream,
    ) -> Result<Self> {
        let c = channels;
        let global_fc = [
            Dense::new(store, "mifa.fpool.gmin", c, c, rng)?,
            Dense::new(store, "mifa.fpool.gmax", c, c, rng)?,
            Dense::new(store, "mifa.fpool.gavg", c, c, rng)?,
        ];
        let local_fc = [
            Conv::new(store, "mifa.fpool.lmin", 1, c, c, 1, rng)?,
            Conv::new(store, "mifa.fpool.lmax", 1, c, c, 1, rng)?,
            Conv::new(store, "mifa.fpool.lavg", 1, c, c, 1, rng)?,
        ];
        let omega_dm = Modulation::new(store, "mifa.omega_dm", 1, omegas.dm)?;
        let omega_lm = Modulation::new(store, "mifa.omega_lm", 1, omegas.lm)?;
        let omega_cm = (0..modalities)
            .map(|i| Modulation::new(store, &format!("mifa.omega_cm.{i}"), c, omegas.cm))
            .collect::<Result<_>>()?;
        Ok(Self { global_fc, local_fc, omega_dm, omega_lm, omega_cm, channels, switches })
    }

    pub fn is_identity(&self) -> bool {
        !self.switches.mgifa && !self.switches.mlifa
    }
}

fn mismatch(msg: String) -> CoreError {
    CoreError::Tensor(TensorError::ShapeMismatch(msg))
}

/// Validates a modality feature set: at least two maps of one N×H×W×C shape.
fn feature_shape(g: &Graph, xs: &[Var], channels: usize) -> Result<[usize; 4]> {
    if xs.len() < 2 {
        return Err(CoreError::TooFewModalities(xs.len()));
    }
    let first = g.shape(xs[0]).to_vec();
    let [n, h, w, c] = first[..] else {
        return Err(mismatch(format!("modality features must be N×H×W×C, got {first:?}")));
    };
    if c != channels {
        return Err(mismatch(format!("features have {c} channels, MIFA expects {channels}")));
    }
    if let Some(bad) = xs.iter().find(|&&x| g.shape(x) != first.as_slice()) {
        return Err(mismatch(format!("modality shapes differ: {first:?} vs {:?}", g.shape(*bad))));
    }
    Ok([n, h, w, c])
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// `g'` (N×C): Σ over pooling kinds of f_P(Σ over modalities of P_global(x_i)).
pub fn mglif_global(g: &mut Graph, xs: &[Var], params: &MifaParams) -> Result<Var> {
    let [n, _, _, c] = feature_shape(g, xs, params.channels)?;
    let mut fused = Vec::with_capacity(3);
    for (kind, fc) in POOL_ORDER.iter().zip(&params.global_fc) {
        let pooled = xs.iter().map(|&x| g.global_pool(*kind, x)).collect::<drifa_tensor::Result<Vec<_>>>()?;
        let summed = sum_all(g, &pooled)?;
        let flat = g.reshape(summed, vec![n, c])?;
        fused.push(fc.forward(g, flat)?);
    }
    sum_all(g, &fused)
}

/// `l'` (N×H×W×C): Σ over pooling kinds of f_P(Σ over modalities of P_local(x_i)).
pub fn mglif_local(g: &mut Graph, xs: &[Var], params: &MifaParams) -> Result<Var> {
    feature_shape(g, xs, params.channels)?;
    let mut fused = Vec::with_capacity(3);
    for (kind, fc) in POOL_ORDER.iter().zip(&params.local_fc) {
        let pooled = xs
            .iter()
            .map(|&x| g.local_pool(*kind, x, LOCAL_POOL_KERNEL, 1))
            .collect::<drifa_tensor::Result<Vec<_>>>()?;
        let summed = sum_all(g, &pooled)?;
        fused.push(fc.forward(g, summed)?);
    }
    sum_all(g, &fused)
}

/// Shared map `A = σ(g'·ω_dm + l'·ω_lm)`, `g'` broadcast over H×W. Either
/// input may be absent; with only `g'` the map takes its shape from `spatial`.
pub fn mifa_attention(
    g: &mut Graph,
    g_prime: Option<Var>,
    l_prime: Option<Var>,
    spatial: Option<[usize; 2]>,
    params: &MifaParams,
) -> Result<Var> {
    let global = match g_prime {
        Some(gp) => {
            let [n, c] = *g.shape(gp) else {
                return Err(mismatch(format!("g' must be N×C, got {:?}", g.shape(gp))));
            };
            if c != params.channels {
                return Err(mismatch(format!("g' has {c} channels, expected {}", params.channels)));
            }
            let gp = params.omega_dm.apply(g, gp, vec![1, 1])?;
            Some((g.reshape(gp, vec![n, 1, 1, c])?, n, c))
        }
        None => None,
    };
    let local = match l_prime {
        Some(lp) => {
            match *g.shape(lp) {
                [_, _, _, c] if c == params.channels => {}
                ref s => return Err(mismatch(format!("l' must be N×H×W×{}, got {s:?}", params.channels))),
            }
            Some(params.omega_lm.apply(g, lp, vec![1, 1, 1, 1])?)
        }
        None => None,
    };
    let logits = match (global, local) {
        (Some((gp, n, _)), Some(lp)) => {
            if g.shape(lp)[0] != n {
                return Err(mismatch("g' and l' batch sizes differ".into()));
            }
            g.add(lp, gp)?
        }
        (None, Some(lp)) => lp,
        (Some((gp, n, c)), None) => {
            let [h, w] = spatial.ok_or_else(|| mismatch("spatial size needed without l'".into()))?;
            g.broadcast_to(gp, vec![n, h, w, c])?
        }
        (None, None) => return Err(CoreError::InvalidConfig("MIFA attention needs g' or l'".into())),
    };
    Ok(g.sigmoid(logits))
}

/// `x^s_i = x'_i ⊗ A ⊗ ω_cm[i]`; the same `A` multiplies every modality.
pub fn mifa_apply(g: &mut Graph, xs: &[Var], shared: Var, params: &MifaParams) -> Result<Vec<Var>> {
    if xs.len() != params.omega_cm.len() {
        return Err(CoreError::ConfigMismatch(format!(
            "{} modalities but {} ω_cm vectors",
            xs.len(),
            params.omega_cm.len()
        )));
    }
    let shape = g.shape(shared).to_vec();
    xs.iter()
        .zip(&params.omega_cm)
        .map(|(&x, omega)| {
            if g.shape(x) != shape.as_slice() {
                return Err(mismatch(format!("feature {:?} vs shared map {shape:?}", g.shape(x))));
            }
            let attended = g.mul(x, shared)?;
            omega.apply(g, attended, vec![1, 1, 1, params.channels])
        })
        .collect()
}

pub struct MifaOutput {
    pub shared: Vec<Var>,
    pub attention: Option<Var>,
}

/// Full MIFA stage; an identity when both halves are switched off.
pub fn mifa_forward(g: &mut Graph, xs: &[Var], params: &MifaParams) -> Result<MifaOutput> {
    if params.is_identity() {
        return Ok(MifaOutput { shared: xs.to_vec(), attention: None });
    }
    let [_, h, w, _] = feature_shape(g, xs, params.channels)?;
    let gp = if params.switches.mgifa { Some(mglif_global(g, xs, params)?) } else { None };
    let lp = if params.switches.mlifa { Some(mglif_local(g, xs, params)?) } else { None };
    let a = mifa_attention(g, gp, lp, Some([h, w]), params)?;
    let shared = mifa_apply(g, xs, a, params)?;
    Ok(MifaOutput { shared, attention: Some(a) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use drifa_tensor::{stream, Tensor};

    const ALL: MifaSwitches = MifaSwitches { mgifa: true, mlifa: true };

    fn identity_projections(store: &mut ParamStore) {
        for (_, p) in store.iter_mut() {
            if p.name.starts_with("mifa.fpool") {
                let shape = p.value.shape().to_vec();
                if p.name.ends_with("bias") {
                    p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
                } else {
                    p.value = Tensor::from_fn(shape, |i| if i[i.len() - 2] == i[i.len() - 1] { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn constant_inputs_fuse_to_six_c() {
        let mut store = ParamStore::new();
        let params = MifaParams::new(&mut store, 2, 3, ALL, MifaOmegaSwitches::default(), &mut stream(2)).unwrap();
        identity_projections(&mut store);
        let mut g = Graph::with_params(&store);
        let xs = [g.constant(Tensor::full(vec![1, 3, 3, 3], 0.5)), g.constant(Tensor::full(vec![1, 3, 3, 3], 0.5))];
        let gp = mglif_global(&mut g, &xs, &params).unwrap();
        assert!(g.value(gp).data().iter().all(|&v| v == 3.0));
        let lp = mglif_local(&mut g, &xs, &params).unwrap();
        assert!(g.value(lp).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn opposite_modalities_cancel_avg_sum() {
        let mut store = ParamStore::new();
        let params = MifaParams::new(&mut store, 2, 2, ALL, MifaOmegaSwitches::default(), &mut stream(2)).unwrap();
        let x = Tensor::from_fn(vec![1, 4, 4, 2], |i| (i[1] as f64 - 1.5) * (i[2] as f64 + 0.5) + i[3] as f64);
        let neg = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| -v).collect()).unwrap();
        let mut g = Graph::new();
        let (a, b) = (g.constant(x), g.constant(neg));
        let pa = g.local_pool(PoolKind::Avg, a, 3, 1).unwrap();
        let pb = g.local_pool(PoolKind::Avg, b, 3, 1).unwrap();
        let s = g.add(pa, pb).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
        let _ = params;
    }

    #[test]
    fn needs_two_modalities_of_equal_shape() {
        let mut store = ParamStore::new();
        let params = MifaParams::new(&mut store, 2, 2, ALL, MifaOmegaSwitches::default(), &mut stream(0)).unwrap();
        let mut g = Graph::with_params(&store);
        let a = g.constant(Tensor::zeros(vec![1, 3, 3, 2]));
        let b = g.constant(Tensor::zeros(vec![1, 4, 3, 2]));
        assert!(matches!(mglif_global(&mut g, &[a], &params), Err(CoreError::TooFewModalities(1))));
        assert!(mglif_local(&mut g, &[a, b], &params).is_err());
    }

    #[test]
    fn zero_inputs_give_half_map() {
        let mut store = ParamStore::new();
        let params = MifaParams::new(&mut store, 2, 2, ALL, MifaOmegaSwitches::default(), &mut stream(0)).unwrap();
        let mut g = Graph::with_params(&store);
        let gp = g.constant(Tensor::zeros(vec![2, 2]));
        let lp = g.constant(Tensor::zeros(vec![2, 3, 3, 2]));
        let a = mifa_attention(&mut g, Some(gp), Some(lp), None, &params).unwrap();
        assert!(g.value(a).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_omega_cm_silences_one_modality() {
        let mut store = ParamStore::new();
        let params = MifaParams::new(&mut store, 2, 2, ALL, MifaOmegaSwitches::default(), &mut stream(0)).unwrap();
        store.value_mut(params.omega_cm[1].id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::with_params(&store);
        let x0 = Tensor::full(vec![1, 2, 2, 2], 2.0);
        let xs = [g.constant(x0.clone()), g.constant(Tensor::full(vec![1, 2, 2, 2], 5.0))];
        let a = g.constant(Tensor::ones(vec![1, 2, 2, 2]));
        let out = mifa_apply(&mut g, &xs, a, &params).unwrap();
        assert_eq!(g.value(out[0]), &x0);
        assert!(g.value(out[1]).data().iter().all(|&v| v == 0.0));
    }
}
