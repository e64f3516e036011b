//! Measurements shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use lgsan::backbone::{Pyramid, PyramidExtractor, TinyBackbone};
use lgsan::cglrm::{spatial_merge, spatial_split, Cglrm};
use lgsan::feem::{EdgeEnhancer, Feem, FeemDims};
use lgsan::fft::HighPass;
use lgsan::grounding::mgfa;
use lgsan::loss::{boundary_window, dice_loss, weighted_structure_loss, DICE_EPS};
use lgsan::network::{total_loss, Output, Predictions};
use lgsan::nn::{ParamKind, ParamStore};
use lgsan::ops::PadMode;
use lgsan::saam::{linear_attention, Saam, SaamDims};
use lgsan_oracles::modules as om;
use lgsan_oracles::Nchw;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-12), rng.random());
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

pub fn random_nchw(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Nchw {
    Nchw::from_vec(n, c, h, w, randn(rng, n * c * h * w))
}

pub fn tensor(x: &Nchw) -> Tensor {
    Tensor::from_vec(x.data.clone(), (x.n, x.c, x.h, x.w), &Device::Cpu).unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn to_nchw(t: &Tensor) -> Nchw {
    let (n, c, h, w) = t.dims4().unwrap();
    Nchw::from_vec(n, c, h, w, flat(t))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn store(seed: u64) -> ParamStore {
    ParamStore::new(seed, DType::F64, Device::Cpu)
}

/// Replaces every parameter with N(0, scale^2) draws so that fixed
/// initializations (unit gammas, zero betas) do not hide mistakes. Running
/// variances are drawn from [0.5, 1.5].
pub fn randomize(ps: &ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let names: Vec<String> = ps.names().map(str::to_string).collect();
    for name in names {
        let var = ps.get(&name).unwrap();
        let n = var.elem_count();
        let values: Vec<f64> = if name.ends_with("running_var") {
            (0..n).map(|_| r.random_range(0.5..1.5)).collect()
        } else {
            randn(&mut r, n).into_iter().map(|v| v * scale).collect()
        };
        ps.set(&name, &Tensor::from_vec(values, var.dims(), &Device::Cpu).unwrap()).unwrap();
    }
}

pub fn param(ps: &ParamStore, name: &str) -> Vec<f64> {
    flat(ps.get(name).unwrap_or_else(|| panic!("no parameter {name}")).as_tensor())
}

// ---------------------------------------------------------------------------
// Module equivalence against the scalar oracles.

pub fn edge_enhance_error(train: bool, pad: PadMode, seed: u64) -> f64 {
    let mut ps = store(seed);
    let enh = EdgeEnhancer::new(&mut ps, "enh", 4, pad).unwrap();
    randomize(&ps, seed + 1, 0.7);
    let x = random_nchw(&mut rng(seed + 2), 1, 4, 8, 8);
    let weights = om::EdgeEnhanceWeights {
        conv_w: param(&ps, "enh.conv.weight"),
        conv_b: param(&ps, "enh.conv.bias"),
        bn_gamma: param(&ps, "enh.bn.gamma"),
        bn_beta: param(&ps, "enh.bn.beta"),
        running: (!train).then(|| (param(&ps, "enh.bn.running_mean"), param(&ps, "enh.bn.running_var"))),
        reflect: pad == PadMode::Reflect,
    };
    let (want_diff, want_out) = om::edge_enhance(&x, &weights);
    let (diff, out) = enh.forward_parts(&tensor(&x), train).unwrap();
    max_abs_diff(&want_diff.data, &flat(&diff)).max(max_abs_diff(&want_out.data, &flat(&out)))
}

pub fn fft_highpass_error(relu: bool, shape: (usize, usize, usize, usize), cutoff: f64, seed: u64) -> f64 {
    let x = random_nchw(&mut rng(seed), shape.0, shape.1, shape.2, shape.3);
    let hp = HighPass::new(cutoff).unwrap();
    let got = if relu { hp.forward(&tensor(&x)) } else { hp.linear(&tensor(&x)) }.unwrap();
    max_abs_diff(&om::fft_highpass(&x, cutoff, relu).data, &flat(&got))
}

pub fn linear_attention_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, n, c) = (1, 64, 4);
    let mk = |r: &mut ChaCha8Rng| randn(r, b * n * c);
    let (q, k, v) = (mk(&mut r), mk(&mut r), mk(&mut r));
    let tok = |d: &[f64]| -> om::Tokens { vec![d.chunks(c).map(<[f64]>::to_vec).collect()] };
    let want = om::linear_attention(&tok(&q), &tok(&k), &tok(&v));
    let t = |d: &[f64]| Tensor::from_vec(d.to_vec(), (b, n, c), &Device::Cpu).unwrap();
    let got = linear_attention(&t(&q), &t(&k), &t(&v)).unwrap().out;
    let want: Vec<f64> = want.into_iter().flatten().flatten().collect();
    max_abs_diff(&want, &flat(&got))
}

pub fn saam_error(c: usize, h: usize, w: usize, seed: u64) -> f64 {
    let mut ps = store(seed);
    let d = SaamDims { channels: c, guide_m: 1, guide_e: 3, dim: 4 };
    let saam = Saam::new(&mut ps, "saam", &d).unwrap();
    randomize(&ps, seed + 1, 0.7);
    let mut r = rng(seed + 2);
    let x = random_nchw(&mut r, 1, c, h, w);
    let m = random_nchw(&mut r, 1, 1, h, w);
    let e = random_nchw(&mut r, 1, 3, 2 * h, 2 * w);
    let w = om::SaamWeights {
        q_w: param(&ps, "saam.q.weight"),
        q_b: param(&ps, "saam.q.bias"),
        k_w: param(&ps, "saam.k.weight"),
        k_b: param(&ps, "saam.k.bias"),
        v_w: param(&ps, "saam.v.weight"),
        m_w: param(&ps, "saam.m_proj.weight"),
        m_b: param(&ps, "saam.m_proj.bias"),
        e_w: param(&ps, "saam.e_proj.weight"),
        e_b: param(&ps, "saam.e_proj.bias"),
        out_w: param(&ps, "saam.out.weight"),
        dim: 4,
    };
    let want = om::saam_forward(&x, &m, &e, &w);
    let got = saam.forward(&tensor(&x), &tensor(&m), &tensor(&e)).unwrap();
    max_abs_diff(&want.data, &flat(&got))
}

pub fn cglrm_weights(ps: &ParamStore, prefix: &str, c: usize, reduction: usize, shared: bool) -> om::CglrmWeights {
    let p = |n: &str| param(ps, &format!("{prefix}.{n}"));
    om::CglrmWeights {
        ca_w1: p("ca_fc1.weight"),
        ca_w2: p("ca_fc2.weight"),
        ca_hidden: (c / reduction).max(1),
        sa_w: p("sa.weight"),
        local: (0..if shared { 1 } else { 4 })
            .map(|i| (p(&format!("local{i}.weight")), p(&format!("local{i}.bias"))))
            .collect(),
        fuse_w: p("fuse.weight"),
        fuse_b: p("fuse.bias"),
        out_w: p("out.weight"),
        out_b: p("out.bias"),
    }
}

pub fn cglrm_error(shared: bool, h: usize, w: usize, seed: u64) -> f64 {
    cglrm_error_c(4, shared, h, w, seed)
}

pub fn cglrm_error_c(c: usize, shared: bool, h: usize, w: usize, seed: u64) -> f64 {
    let mut ps = store(seed);
    let cg = Cglrm::new(&mut ps, "cg", c, 2, shared).unwrap();
    randomize(&ps, seed + 1, 0.5);
    let x = random_nchw(&mut rng(seed + 2), 1, c, h, w);
    let want = om::cglrm_forward(&x, &cglrm_weights(&ps, "cg", c, 2, shared));
    max_abs_diff(&want.data, &flat(&cg.forward(&tensor(&x)).unwrap()))
}

/// `(name, max abs error)` for every module-vs-oracle comparison.
pub fn module_oracle_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (train, pad) in [(true, PadMode::Zeros), (false, PadMode::Zeros), (true, PadMode::Reflect), (false, PadMode::Reflect)] {
        let mode = if train { "batch" } else { "running" };
        out.push((format!("edge_enhance {mode} stats, {pad:?} padding"), edge_enhance_error(train, pad, 10)));
    }
    for (relu, shape, cutoff) in [
        (false, (1, 4, 8, 8), 0.25),
        (true, (1, 4, 8, 8), 0.25),
        (false, (1, 2, 6, 8), 0.4),
        (true, (1, 3, 8, 5), 0.1),
    ] {
        out.push((
            format!("fft_highpass {}x{}x{}x{} cutoff {cutoff}{}", shape.0, shape.1, shape.2, shape.3, if relu { " relu" } else { "" }),
            fft_highpass_error(relu, shape, cutoff, 20),
        ));
    }
    out.push(("linear_attention 1x64x4".into(), linear_attention_error(30)));
    out.push(("saam forward 1x4x8x8".into(), saam_error(4, 8, 8, 31)));
    out.push(("saam forward 1x2x2x2".into(), saam_error(2, 2, 2, 32)));
    out.push(("cglrm forward shared 1x4x8x8".into(), cglrm_error(true, 8, 8, 40)));
    out.push(("cglrm forward per-quadrant 1x4x8x8".into(), cglrm_error(false, 8, 8, 41)));
    out.push(("cglrm forward odd 1x4x7x5".into(), cglrm_error(false, 7, 5, 42)));
    out.push(("cglrm forward 1x4x4x4".into(), cglrm_error(false, 4, 4, 43)));
    out.push(("cglrm forward 1x2x4x4".into(), cglrm_error_c(2, true, 4, 4, 44)));
    out
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

pub struct GradReport {
    pub worst_var: String,
    pub worst_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the step crossed a ReLU kink.
    pub kinks: usize,
}

/// Relative error `|g - g_fd| / max(|g|, |g_fd|, 1e-3)` per variable, with
/// norms taken over a sample of its coordinates and central differences of
/// step `1e-6`. The floor keeps gradients that vanish by construction, such
/// as a bias feeding batch norm, from turning rounding noise into a large
/// ratio. A coordinate whose forward and backward one-sided slopes differ by
/// more than `1e-3 * max(1, |slope|)` sits on a kink of a piecewise-linear
/// op and is skipped; the count is reported so it can be bounded.
pub fn gradcheck(vars: &[(String, Var)], f: &dyn Fn() -> Tensor, per_var: usize, seed: u64) -> GradReport {
    let h: f64 = std::env::var("GRADCHECK_H").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-6);
    let loss = f();
    let f0 = loss.to_scalar::<f64>().unwrap();
    let grads = loss.backward().unwrap();
    let mut r = rng(seed);
    let mut rep = GradReport { worst_var: String::new(), worst_err: 0.0, checked: 0, kinks: 0 };
    for (name, var) in vars {
        let base = flat(var.as_tensor());
        let analytic = grads.get(var.as_tensor()).map(flat).unwrap_or_else(|| vec![0.0; base.len()]);
        let picks: Vec<usize> =
            if base.len() <= per_var { (0..base.len()).collect() } else { (0..per_var).map(|_| r.random_range(0..base.len())).collect() };
        let (mut num_sq, mut diff_sq, mut ana_sq) = (0.0, 0.0, 0.0);
        for i in picks {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap()).unwrap();
                f().to_scalar::<f64>().unwrap()
            };
            let (fp, fm) = (eval(h), eval(-h));
            let fd = (fp - fm) / (2.0 * h);
            let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
            if (fwd - bwd).abs() > 1e-3 * fd.abs().max(1.0) {
                rep.kinks += 1;
                continue;
            }
            rep.checked += 1;
            num_sq += fd * fd;
            ana_sq += analytic[i] * analytic[i];
            diff_sq += (fd - analytic[i]).powi(2);
        }
        var.set(&Tensor::from_vec(base, var.dims(), &Device::Cpu).unwrap()).unwrap();
        let err = diff_sq.sqrt() / num_sq.sqrt().max(ana_sq.sqrt()).max(1e-3);
        if std::env::var("GRADCHECK_VERBOSE").is_ok() {
            eprintln!("{name}: err {err:e} |fd| {:e} |an| {:e}", num_sq.sqrt(), ana_sq.sqrt());
        }
        if err > rep.worst_err || rep.worst_var.is_empty() {
            rep.worst_var = name.clone();
            rep.worst_err = err;
        }
    }
    rep
}

fn input_var(x: &Nchw) -> Var {
    Var::from_tensor(&tensor(x)).unwrap()
}

fn trainables(ps: &ParamStore) -> Vec<(String, Var)> {
    ps.trainable()
}

fn weighted_sum(t: &Tensor, w: &Tensor) -> Tensor {
    (t * w).unwrap().sum_all().unwrap()
}

pub fn feem_gradcheck(seed: u64) -> GradReport {
    let mut ps = store(seed);
    let d = FeemDims { pyramid: [3, 4, 4, 5], attn: 2, channels: 3, head_hidden: 3, full_res_head: false };
    let feem = Feem::new(&mut ps, "feem", &d, 0.25, PadMode::Zeros).unwrap();
    randomize(&ps, seed + 1, 0.5);
    let mut r = rng(seed + 2);
    let f: Vec<Var> = [(3, 16), (4, 8), (4, 4), (5, 2)].iter().map(|&(c, s)| input_var(&random_nchw(&mut r, 2, c, s, s))).collect();
    let attn = input_var(&random_nchw(&mut r, 2, 2, 4, 4));
    let w_e = tensor(&random_nchw(&mut r, 2, 3, 16, 16));
    let w_l = tensor(&random_nchw(&mut r, 2, 1, 32, 32));
    let mut vars = trainables(&ps);
    vars.extend(f.iter().enumerate().map(|(i, v)| (format!("f{}", i + 1), v.clone())));
    vars.push(("attn".into(), attn.clone()));
    let run = || {
        let pyr = Pyramid { f: std::array::from_fn(|i| f[i].as_tensor().clone()) };
        let out = feem.forward(&pyr, attn.as_tensor(), (32, 32), true).unwrap();
        (weighted_sum(&out.e, &w_e) + weighted_sum(&out.e_logit, &w_l)).unwrap()
    };
    gradcheck(&vars, &run, 6, seed + 3)
}

pub fn saam_gradcheck(seed: u64) -> GradReport {
    let mut ps = store(seed);
    let saam = Saam::new(&mut ps, "saam", &SaamDims { channels: 3, guide_m: 1, guide_e: 2, dim: 4 }).unwrap();
    randomize(&ps, seed + 1, 0.6);
    let mut r = rng(seed + 2);
    let x = input_var(&random_nchw(&mut r, 2, 3, 6, 6));
    let m = input_var(&random_nchw(&mut r, 2, 1, 3, 3));
    let e = input_var(&random_nchw(&mut r, 2, 2, 6, 6));
    let w = tensor(&random_nchw(&mut r, 2, 3, 6, 6));
    let mut vars = trainables(&ps);
    vars.extend([("x".to_string(), x.clone()), ("m".into(), m.clone()), ("e".into(), e.clone())]);
    let run = || weighted_sum(&saam.forward(x.as_tensor(), m.as_tensor(), e.as_tensor()).unwrap(), &w);
    gradcheck(&vars, &run, 8, seed + 3)
}

pub fn cglrm_gradcheck(seed: u64) -> GradReport {
    let mut ps = store(seed);
    let cg = Cglrm::new(&mut ps, "cg", 4, 2, false).unwrap();
    randomize(&ps, seed + 1, 0.5);
    let mut r = rng(seed + 2);
    let x = input_var(&random_nchw(&mut r, 1, 4, 6, 6));
    let w = tensor(&random_nchw(&mut r, 1, 4, 6, 6));
    let mut vars = trainables(&ps);
    vars.push(("x".into(), x.clone()));
    let run = || weighted_sum(&cg.forward(x.as_tensor()).unwrap(), &w);
    gradcheck(&vars, &run, 8, seed + 3)
}

fn binary_map(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor {
    let v: Vec<f64> = (0..n * h * w).map(|_| if r.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(v, (n, 1, h, w), &Device::Cpu).unwrap()
}

pub fn structure_loss_gradcheck(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = input_var(&random_nchw(&mut r, 2, 1, 10, 10));
    let gt = binary_map(&mut r, 2, 10, 10);
    let vars = vec![("logits".to_string(), x.clone())];
    gradcheck(&vars, &|| weighted_structure_loss(x.as_tensor(), &gt).unwrap(), 200, seed + 1)
}

pub fn dice_loss_gradcheck(seed: u64) -> GradReport {
    let mut r = rng(seed);
    let x = input_var(&random_nchw(&mut r, 2, 1, 10, 10));
    let gt = binary_map(&mut r, 2, 10, 10);
    let vars = vec![("logits".to_string(), x.clone())];
    gradcheck(&vars, &|| dice_loss(x.as_tensor(), &gt).unwrap(), 200, seed + 1)
}

pub fn backbone_gradcheck(seed: u64) -> GradReport {
    let mut ps = store(seed);
    let bb = TinyBackbone::new(&mut ps, "bb", [4, 4, 6, 6], 1).unwrap();
    let mut r = rng(seed + 2);
    let x = input_var(&Nchw::from_vec(1, 3, 32, 32, (0..3 * 32 * 32).map(|_| r.random::<f64>()).collect()));
    let w = tensor(&random_nchw(&mut r, 1, 6, 1, 1));
    let mut vars = trainables(&ps);
    vars.push(("image".into(), x.clone()));
    let run = || weighted_sum(&bb.extract(x.as_tensor()).unwrap().f[3], &w);
    gradcheck(&vars, &run, 4, seed + 3)
}

pub fn gradient_reports() -> Vec<(String, GradReport)> {
    vec![
        ("feem".into(), feem_gradcheck(50)),
        ("saam".into(), saam_gradcheck(51)),
        ("cglrm".into(), cglrm_gradcheck(52)),
        ("structure loss".into(), structure_loss_gradcheck(53)),
        ("dice loss".into(), dice_loss_gradcheck(54)),
        ("backbone f4".into(), backbone_gradcheck(55)),
    ]
}

// ---------------------------------------------------------------------------
// Frequency-domain invariants of the high-pass.

pub struct FrequencyReport {
    pub dc_mean: f64,
    pub sinusoid_dev: f64,
    pub linearity: f64,
}

fn plane_means(t: &Tensor) -> Vec<f64> {
    let (n, c, h, w) = t.dims4().unwrap();
    let v = flat(t);
    (0..n * c).map(|i| v[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / (h * w) as f64).collect()
}

pub fn frequency_invariants() -> FrequencyReport {
    let hp = HighPass::new(0.25).unwrap();
    let mut r = rng(60);
    let x = random_nchw(&mut r, 2, 3, 16, 16);
    let shifted = Nchw { data: x.data.iter().map(|v| v + 3.0).collect(), ..x.clone() };
    let dc_mean = plane_means(&hp.linear(&tensor(&shifted)).unwrap()).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // Frequency (3, 5) on 16x16 sits at radius sqrt(34) > 0.25 * 16 / 2.
    let (h, w) = (16, 16);
    let wave: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (2.0 * std::f64::consts::PI * (3.0 * y / h as f64 + 5.0 * x / w as f64)).cos()
        })
        .collect();
    let wave_t = Tensor::from_vec(wave.clone(), (1, 1, h, w), &Device::Cpu).unwrap();
    let sinusoid_dev = max_abs_diff(&wave, &flat(&hp.linear(&wave_t).unwrap()));

    let y = random_nchw(&mut r, 2, 3, 16, 16);
    let (a, b) = (1.7, -0.6);
    let combo = Nchw { data: x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect(), ..x.clone() };
    let lhs = flat(&hp.linear(&tensor(&combo)).unwrap());
    let (hx, hy) = (flat(&hp.linear(&tensor(&x)).unwrap()), flat(&hp.linear(&tensor(&y)).unwrap()));
    let rhs: Vec<f64> = hx.iter().zip(&hy).map(|(p, q)| a * p + b * q).collect();
    FrequencyReport { dc_mean, sinusoid_dev, linearity: max_abs_diff(&lhs, &rhs) }
}

// ---------------------------------------------------------------------------
// Exact structural identities.

pub struct IdentityReport {
    pub split_merge_exact: bool,
    pub saam_zero_branch_exact: bool,
    pub cglrm_zero_branch_exact: bool,
    pub mgfa_zero_mask_exact: bool,
    pub lambda_linearity: f64,
}

pub fn structural_identities() -> IdentityReport {
    let mut r = rng(70);
    let mut split_merge_exact = true;
    for (h, w) in [(8, 8), (7, 5), (1, 1), (2, 9), (16, 4)] {
        let x = tensor(&random_nchw(&mut r, 2, 3, h, w));
        let back = spatial_merge(&spatial_split(&x).unwrap()).unwrap();
        split_merge_exact &= flat(&back) == flat(&x);
    }

    let mut ps = store(71);
    let saam = Saam::new(&mut ps, "saam", &SaamDims { channels: 4, guide_m: 1, guide_e: 2, dim: 4 }).unwrap();
    randomize(&ps, 72, 0.7);
    ps.zero_prefix("saam.out").unwrap();
    let x = tensor(&random_nchw(&mut r, 1, 4, 8, 8));
    let (m, e) = (tensor(&random_nchw(&mut r, 1, 1, 8, 8)), tensor(&random_nchw(&mut r, 1, 2, 8, 8)));
    let saam_zero_branch_exact = flat(&saam.forward(&x, &m, &e).unwrap()) == flat(&x);

    let mut ps = store(73);
    let cg = Cglrm::new(&mut ps, "cg", 4, 2, false).unwrap();
    randomize(&ps, 74, 0.7);
    ps.zero_prefix("cg.out").unwrap();
    let cglrm_zero_branch_exact = flat(&cg.forward(&x).unwrap()) == flat(&x);

    let zero = Tensor::zeros((1, 1, 2, 2), DType::F64, &Device::Cpu).unwrap();
    let mgfa_zero_mask_exact = flat(&mgfa(&x, &zero).unwrap()) == flat(&x);

    let logit = |r: &mut ChaCha8Rng| tensor(&random_nchw(r, 2, 1, 16, 16));
    let preds = Predictions {
        logits: Output::ALL.iter().map(|&o| (o, logit(&mut r))).collect(),
        warnings: Vec::new(),
    };
    let (mask, edge) = (binary_map(&mut r, 2, 16, 16), binary_map(&mut r, 2, 16, 16));
    let t5 = total_loss(&preds, &mask, &edge, 5.0).unwrap().0.to_scalar::<f64>().unwrap();
    let t0 = total_loss(&preds, &mask, &edge, 0.0).unwrap().0.to_scalar::<f64>().unwrap();
    let dice = dice_loss(preds.logit(Output::Oe).unwrap(), &edge).unwrap().to_scalar::<f64>().unwrap();
    IdentityReport {
        split_merge_exact,
        saam_zero_branch_exact,
        cglrm_zero_branch_exact,
        mgfa_zero_mask_exact,
        lambda_linearity: (t5 - t0 - 5.0 * dice).abs(),
    }
}

pub fn oracle_structure_loss_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_nchw(&mut r, 2, 1, 20, 20);
    let gt_t = binary_map(&mut r, 2, 20, 20);
    let want = om::structure_loss(&x, &to_nchw(&gt_t), boundary_window(20));
    let got = weighted_structure_loss(&tensor(&x), &gt_t).unwrap().to_scalar::<f64>().unwrap();
    let want_d = om::dice_loss(&x, &to_nchw(&gt_t), DICE_EPS);
    let got_d = dice_loss(&tensor(&x), &gt_t).unwrap().to_scalar::<f64>().unwrap();
    (want - got).abs().max((want_d - got_d).abs())
}

pub fn is_trainable(ps: &ParamStore, name: &str) -> bool {
    ps.kind(name) == Some(ParamKind::Trainable)
}
