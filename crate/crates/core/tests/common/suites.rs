//! Measurement sweeps shared by the granular tests and the acceptance run.
//! Each returns named measurements against a limit instead of asserting.

use drifa_core::mfa::{clia_forward, hifa_forward, mfa_apply, mfa_attention, Mfa, MfaOmegaSwitches, MfaSwitches};
use drifa_core::mifa::{
    mglif_global, mglif_local, mifa_apply, mifa_attention, mifa_forward, MifaOmegaSwitches, MifaParams, MifaSwitches,
};
use drifa_core::net::{mtl_loss, rra_forward, DrifaNet, DrifaNetConfig};
use drifa_core::{AblationFlags, OmegaFlags};
use drifa_tensor::{stream, Graph, Padding, ParamStore, PoolKind, Tensor, Var};
use rand::Rng;

use super::reference::{self, Map};
use super::{fd_check, flatten, max_abs, random_tensor, randomize};

pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;
pub const ORACLE_TOL: f64 = 1e-12;
pub const ORACLE_TRIALS: u64 = 24;

#[derive(Clone, Debug)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    /// Passing requires `value < limit`.
    pub limit: f64,
}

impl Measurement {
    fn new(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit }
    }

    pub fn ok(&self) -> bool {
        self.value < self.limit
    }
}

/// Panics listing every measurement over its limit.
pub fn assert_all(ms: &[Measurement]) {
    let bad: Vec<String> = ms.iter().filter(|m| !m.ok()).map(|m| format!("{}: {:e} >= {:e}", m.name, m.value, m.limit)).collect();
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

fn op(name: &str, inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> Measurement {
    Measurement::new(name, fd_check(&ParamStore::new(), inputs, usize::MAX, build), OP_TOL)
}

/// Every differentiable engine op on small random inputs.
pub fn engine_gradients() -> Vec<Measurement> {
    let a = random_tensor(&[2, 3, 3, 2], 1);
    let b = random_tensor(&[2, 3, 3, 2], 2);
    let per_channel = random_tensor(&[1, 1, 1, 2], 3);
    let x = random_tensor(&[2, 5, 5, 2], 5);
    let logits = Tensor::new(vec![3, 4], random_tensor(&[3, 4], 12).data().iter().map(|v| v * 4.0).collect()).unwrap();
    let mut ms = vec![
        op("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap()),
        op("sub", &[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap()),
        op("mul", &[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]).unwrap()),
        op("mul broadcast", &[a.clone(), per_channel.clone()], |g, v| g.mul(v[0], v[1]).unwrap()),
        op("broadcast_to", &[per_channel], |g, v| g.broadcast_to(v[0], vec![2, 3, 3, 2]).unwrap()),
        op("concat", &[a.clone(), b], |g, v| g.concat(&[v[0], v[1]], 3).unwrap()),
        op("reshape", &[a.clone()], |g, v| g.reshape(v[0], vec![6, 6]).unwrap()),
        op("scale", &[a.clone()], |g, v| g.scale(v[0], -2.5)),
        op("sum", &[a.clone()], |g, v| g.sum(v[0])),
        op("sigmoid", &[logits.clone()], |g, v| g.sigmoid(v[0])),
        op("relu", &[logits.clone()], |g, v| g.relu(v[0])),
        op("softmax", &[logits.clone()], |g, v| g.softmax(v[0], 1).unwrap()),
        op("cross_entropy", &[logits], |g, v| g.cross_entropy(v[0], &[0, 3, 1]).unwrap()),
        op("dropout", &[a.clone()], |g, v| g.dropout(v[0], 0.4, &mut stream(3), true).unwrap()),
        op("fully_connected", &[random_tensor(&[3, 4], 8), random_tensor(&[4, 5], 9), random_tensor(&[5], 10)], |g, v| {
            g.fully_connected(v[0], v[1], v[2]).unwrap()
        }),
    ];
    for (k, stride) in [(3, 1), (1, 1), (3, 2)] {
        let w = random_tensor(&[k, k, 2, 3], 6 + k as u64);
        ms.push(op(&format!("conv2d k{k} s{stride}"), &[x.clone(), w], |g, v| {
            g.conv2d(v[0], v[1], stride, Padding::Same).unwrap()
        }));
    }
    for kind in [PoolKind::Avg, PoolKind::Max, PoolKind::Min] {
        ms.push(op(&format!("global {kind:?} pool"), &[a.clone()], |g, v| g.global_pool(kind, v[0]).unwrap()));
        ms.push(op(&format!("local {kind:?} pool"), &[a.clone()], |g, v| g.local_pool(kind, v[0], 3, 1).unwrap()));
    }
    ms
}

fn mfa(c: usize, switches: MfaSwitches, seed: u64, scale: f64) -> (ParamStore, Mfa) {
    let mut store = ParamStore::new();
    let m = Mfa::new(&mut store, "m", c, switches, MfaOmegaSwitches::default(), &mut stream(seed)).unwrap();
    randomize(&mut store, seed + 1, scale);
    (store, m)
}

fn mifa(m: usize, c: usize, switches: MifaSwitches, seed: u64, scale: f64) -> (ParamStore, MifaParams) {
    let mut store = ParamStore::new();
    let p = MifaParams::new(&mut store, m, c, switches, MifaOmegaSwitches::default(), &mut stream(seed)).unwrap();
    randomize(&mut store, seed + 1, scale);
    (store, p)
}

/// Attention paths, residual blocks and the multitask loss, over inputs and
/// parameters.
pub fn module_gradients() -> Vec<Measurement> {
    let mut ms = Vec::new();
    let (store, m) = mfa(3, MfaSwitches { hifa: true, clia: true }, 1, 0.8);
    let x = [random_tensor(&[2, 4, 3, 3], 2)];
    ms.push(Measurement::new("hifa", fd_check(&store, &x, usize::MAX, |g, v| hifa_forward(g, v[0], &m.hifa).unwrap()), OP_TOL));
    ms.push(Measurement::new("clia", fd_check(&store, &x, usize::MAX, |g, v| clia_forward(g, v[0], &m.clia).unwrap()), OP_TOL));

    for (i, (hifa, clia)) in [(true, true), (true, false), (false, true)].into_iter().enumerate() {
        let (store, m) = mfa(2, MfaSwitches { hifa, clia }, 10 + i as u64, 0.8);
        let x = [random_tensor(&[2, 3, 4, 2], 3)];
        let err = fd_check(&store, &x, usize::MAX, |g, v| m.forward(g, v[0]).unwrap().output);
        ms.push(Measurement::new(format!("mfa hifa={hifa} clia={clia}"), err, OP_TOL));
    }

    let (store, p) = mifa(3, 2, MifaSwitches { mgifa: true, mlifa: true }, 4, 0.8);
    let xs: Vec<_> = (0..3).map(|i| random_tensor(&[2, 3, 3, 2], 20 + i)).collect();
    ms.push(Measurement::new("mglif global", fd_check(&store, &xs, usize::MAX, |g, v| mglif_global(g, v, &p).unwrap()), OP_TOL));
    ms.push(Measurement::new("mglif local", fd_check(&store, &xs, usize::MAX, |g, v| mglif_local(g, v, &p).unwrap()), OP_TOL));

    for (i, (mgifa, mlifa)) in [(true, true), (true, false), (false, true)].into_iter().enumerate() {
        let (store, p) = mifa(2, 3, MifaSwitches { mgifa, mlifa }, 30 + i as u64, 0.8);
        let xs: Vec<_> = (0..2).map(|k| random_tensor(&[1, 4, 3, 3], 40 + k)).collect();
        let err = fd_check(&store, &xs, usize::MAX, |g, v| {
            let out = mifa_forward(g, v, &p).unwrap();
            g.concat(&out.shared, 3).unwrap()
        });
        ms.push(Measurement::new(format!("mifa mgifa={mgifa} mlifa={mlifa}"), err, OP_TOL));
    }

    let config = DrifaNetConfig { channels: 2, blocks: 2, downsample_blocks: vec![1], ..Default::default() };
    let mut net = DrifaNet::new(config, 5).unwrap();
    randomize(&mut net.store, 6, 0.6);
    let x = [random_tensor(&[1, 4, 4, 2], 7)];
    for (i, block) in net.branches[0].blocks.iter().enumerate() {
        let err = fd_check(&net.store, &x, 12, |g, v| rra_forward(g, v[0], block).unwrap().0);
        ms.push(Measurement::new(format!("residual block {i}"), err, OP_TOL));
    }

    let logits = [random_tensor(&[3, 2], 1), random_tensor(&[3, 4], 2)];
    let labels = vec![vec![0, 1, 1], vec![3, 0, 2]];
    let err = fd_check(&ParamStore::new(), &logits, usize::MAX, |g, v| mtl_loss(g, v, &labels, &[0.7, 0.3]).unwrap().total);
    ms.push(Measurement::new("multitask loss", err, OP_TOL));
    ms
}

/// The assembled network at 1×8×8 inputs, two modalities, one task: all
/// modules on, and all attention modules off.
pub fn network_gradients() -> Vec<Measurement> {
    let full = DrifaNetConfig { channels: 4, blocks: 2, downsample_blocks: vec![1], tasks: vec![3], ..Default::default() };
    let off = AblationFlags { mfa: false, mifa: false, ..AblationFlags::default() };
    let bare = DrifaNetConfig { channels: 3, ablation: off, ..Default::default() };
    [("full network", full, 11), ("network without attention", bare, 21)]
        .into_iter()
        .map(|(name, config, seed)| {
            let mut net = DrifaNet::new(config, seed).unwrap();
            randomize(&mut net.store, seed + 1, 0.5);
            let xs = [random_tensor(&[1, 8, 8, 1], seed + 2), random_tensor(&[1, 8, 8, 1], seed + 3)];
            let err = fd_check(&net.store, &xs, 24, |g, v| net.forward(g, v, None).unwrap().logits[0]);
            Measurement::new(name, err, NET_TOL)
        })
        .collect()
}

struct Case {
    shape: [usize; 4],
    seed: u64,
}

fn cases() -> impl Iterator<Item = Case> {
    (0..ORACLE_TRIALS).map(|seed| {
        let mut rng = stream(1000 + seed);
        let shape = [rng.random_range(1..=2), rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=4)];
        Case { shape, seed }
    })
}

fn mfa_module(c: usize, seed: u64) -> (ParamStore, Mfa) {
    mfa(c, MfaSwitches { hifa: true, clia: true }, seed, 1.0)
}

fn mifa_module(m: usize, c: usize, seed: u64) -> (ParamStore, MifaParams) {
    mifa(m, c, MifaSwitches { mgifa: true, mlifa: true }, seed, 1.0)
}

fn scalar_of(store: &ParamStore, name: &str) -> f64 {
    reference::param(store, name)[0]
}

fn modality_inputs(g: &mut Graph, m: usize, shape: &[usize; 4], seed: u64) -> (Vec<Var>, Vec<Map>) {
    (0..m)
        .map(|i| {
            let t = random_tensor(shape, seed * 10 + i as u64);
            (g.constant(t.clone()), Map::from_tensor(&t))
        })
        .unzip()
}

fn unit_interval(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = stream(seed);
    Tensor::from_fn(shape.to_vec(), move |_| rng.random_range(0.0..1.0))
}

/// Worst absolute deviation from the scalar-loop reference over
/// `ORACLE_TRIALS` random shapes, per building block.
pub fn oracle_errors() -> Vec<Measurement> {
    let mut worst = [0.0f64; 8];
    for Case { shape, seed } in cases() {
        let [n, h, w, c] = shape;
        let m = 2 + seed as usize % 3;

        let (store, block) = mfa_module(c, seed);
        let x = random_tensor(&shape, seed);
        let xm = Map::from_tensor(&x);
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let d = hifa_forward(&mut g, xv, &block.hifa).unwrap();
        worst[0] = worst[0].max(max_abs(g.value(d).data(), &flatten(&reference::hifa(&store, "m.hifa", &xm))));
        let l = clia_forward(&mut g, xv, &block.clia).unwrap();
        worst[1] = worst[1].max(max_abs(g.value(l).data(), &reference::clia(&store, "m.clia", &xm).data));

        // mfa_attention, with both halves and with each half alone
        let d = random_tensor(&[n, c], seed + 1);
        let lt = random_tensor(&shape, seed + 2);
        let (dv, lv) = (g.constant(d.clone()), g.constant(lt.clone()));
        let rows: Vec<Vec<f64>> = d.data().chunks(c).map(<[f64]>::to_vec).collect();
        let lm = Map::from_tensor(&lt);
        let (wd, wl) = (scalar_of(&store, "m.omega_d"), scalar_of(&store, "m.omega_l"));
        for (dd, ll) in [(true, true), (true, false), (false, true)] {
            let a = mfa_attention(&mut g, dd.then_some(dv), ll.then_some(lv), dd.then_some([h, w]), &block.weights).unwrap();
            let want = reference::attention(dd.then_some(&rows[..]), ll.then_some(&lm), wd, wl, shape);
            worst[2] = worst[2].max(max_abs(g.value(a).data(), &want.data));
        }

        let a = unit_interval(shape, seed + 7);
        let av = g.constant(a.clone());
        let out = mfa_apply(&mut g, xv, av, &block.weights).unwrap();
        let want = reference::apply(&xm, &Map::from_tensor(&a), &reference::param(&store, "m.omega_c"));
        worst[3] = worst[3].max(max_abs(g.value(out).data(), &want.data));

        let (store, p) = mifa_module(m, c, seed);
        let mut g = Graph::with_params(&store);
        let (xs, maps) = modality_inputs(&mut g, m, &shape, seed);
        let gp = mglif_global(&mut g, &xs, &p).unwrap();
        worst[4] = worst[4].max(max_abs(g.value(gp).data(), &flatten(&reference::mglif_global(&store, &maps))));
        let lp = mglif_local(&mut g, &xs, &p).unwrap();
        worst[5] = worst[5].max(max_abs(g.value(lp).data(), &reference::mglif_local(&store, &maps).data));

        let (gt, lt) = (random_tensor(&[n, c], seed + 3), random_tensor(&shape, seed + 4));
        let (gv, lv) = (g.constant(gt.clone()), g.constant(lt.clone()));
        let rows: Vec<Vec<f64>> = gt.data().chunks(c).map(<[f64]>::to_vec).collect();
        let lm = Map::from_tensor(&lt);
        let (wd, wl) = (scalar_of(&store, "mifa.omega_dm"), scalar_of(&store, "mifa.omega_lm"));
        for (dd, ll) in [(true, true), (true, false), (false, true)] {
            let a = mifa_attention(&mut g, dd.then_some(gv), ll.then_some(lv), dd.then_some([h, w]), &p).unwrap();
            let want = reference::attention(dd.then_some(&rows[..]), ll.then_some(&lm), wd, wl, shape);
            worst[6] = worst[6].max(max_abs(g.value(a).data(), &want.data));
        }

        let a = unit_interval(shape, seed + 11);
        let av = g.constant(a.clone());
        let outs = mifa_apply(&mut g, &xs, av, &p).unwrap();
        let am = Map::from_tensor(&a);
        for (i, (&o, x)) in outs.iter().zip(&maps).enumerate() {
            let want = reference::apply(x, &am, &reference::param(&store, &format!("mifa.omega_cm.{i}")));
            worst[7] = worst[7].max(max_abs(g.value(o).data(), &want.data));
        }
    }
    let names = [
        "hifa_forward",
        "clia_forward",
        "mfa_attention",
        "mfa_apply",
        "mglif_global",
        "mglif_local",
        "mifa_attention",
        "mifa_apply",
    ];
    names.iter().zip(worst).map(|(n, v)| Measurement::new(*n, v, ORACLE_TOL)).collect()
}

pub fn random_config(rng: &mut impl Rng) -> DrifaNetConfig {
    let modalities = rng.random_range(1..=3);
    let blocks = rng.random_range(0..=3);
    let mut ablation = AblationFlags {
        mfa: rng.random(),
        mifa: rng.random(),
        hifa: rng.random(),
        clia: rng.random(),
        mgifa: rng.random(),
        mlifa: rng.random(),
    };
    if modalities == 1 {
        ablation.mifa = false;
    }
    DrifaNetConfig {
        modalities,
        in_channels: rng.random_range(1..=3),
        channels: rng.random_range(1..=4),
        blocks,
        downsample_blocks: (0..blocks).filter(|_| rng.random_bool(0.3)).collect(),
        tasks: (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=4)).collect(),
        task_weights: None,
        dropout: 0.25,
        ablation,
        omegas: OmegaFlags {
            omega_d: rng.random(),
            omega_l: rng.random(),
            omega_c: rng.random(),
            omega_dm: rng.random(),
            omega_lm: rng.random(),
            omega_cm: rng.random(),
        },
    }
}

/// Forward passes of `count` random valid configs on random input sizes.
/// Returns every violated contract: logits shape, feature shapes, number and
/// shape of attention maps, and attention strictly inside (0, 1).
pub fn config_fuzz(count: u64) -> Vec<String> {
    let mut rng = stream(77);
    let mut violations = Vec::new();
    for trial in 0..count {
        let config = random_config(&mut rng);
        if let Err(e) = config.validate() {
            violations.push(format!("generated invalid config: {e}"));
            continue;
        }
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(2..=7), rng.random_range(2..=7));
        let net = DrifaNet::new(config.clone(), trial).unwrap();
        let mut g = Graph::with_params(&net.store);
        let xs: Vec<Var> = (0..config.modalities)
            .map(|i| g.constant(random_tensor(&[n, h, w, config.in_channels], trial * 10 + i as u64)))
            .collect();
        let out = net.forward(&mut g, &xs, None).unwrap();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                violations.push(format!("{what}: {config:?} at {n}x{h}x{w}"));
            }
        };

        check(out.logits.len() == config.tasks.len(), "head count");
        for (&z, &classes) in out.logits.iter().zip(&config.tasks) {
            check(g.shape(z) == [n, classes] && g.value(z).is_finite(), "logits");
        }
        let (mut fh, mut fw) = (h, w);
        for _ in &config.downsample_blocks {
            fh = fh.div_ceil(2);
            fw = fw.div_ceil(2);
        }
        let feature_shape = [n, fh, fw, config.feature_channels()];
        for &x in out.taps.x_prime.iter().chain(&out.taps.shared) {
            check(g.shape(x) == feature_shape, "feature shape");
        }
        let mfa_on = config.ablation.mfa && (config.ablation.hifa || config.ablation.clia);
        let expected_maps = if mfa_on { config.modalities * (2 * config.blocks + 1) } else { 0 };
        check(out.taps.mfa_maps.len() == expected_maps, "per-modality map count");
        let mifa_on = config.ablation.mifa && (config.ablation.mgifa || config.ablation.mlifa);
        check(out.taps.shared_attention.is_some() == mifa_on, "shared map presence");
        if let Some(a) = out.taps.shared_attention {
            check(g.shape(a) == feature_shape, "shared map shape");
        }
        for &a in out.taps.mfa_maps.iter().chain(&out.taps.shared_attention) {
            check(g.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0), "attention outside (0, 1)");
        }
    }
    violations
}

/// Random configs built once with every modulation weight enabled (all at
/// their initial value 1) and once with none; returns the configs whose
/// logits differ in any bit.
pub fn neutrality(count: u64) -> Vec<String> {
    let mut rng = stream(5);
    let mut violations = Vec::new();
    for trial in 0..count {
        let mut config = random_config(&mut rng);
        config.omegas = OmegaFlags::all(true);
        let with = DrifaNet::new(config.clone(), trial).unwrap();
        config.omegas = OmegaFlags::all(false);
        let without = DrifaNet::new(config.clone(), trial).unwrap();
        let xs: Vec<Tensor> =
            (0..config.modalities).map(|i| random_tensor(&[2, 5, 5, config.in_channels], trial + i as u64)).collect();
        let bits = |ts: Vec<Tensor>| ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        if bits(with.logits(&xs, None).unwrap()) != bits(without.logits(&xs, None).unwrap()) {
            violations.push(format!("{config:?}"));
        }
    }
    violations
}
