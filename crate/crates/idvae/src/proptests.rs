//! Cross-module property battery: gradient checks against central finite
//! differences, update-isolation checks for every variant, and closed-form /
//! Monte-Carlo oracles for the losses and evaluation statistics.
//!
//! Every case runs from a fixed seed, so a failure reproduces from the name
//! and seed it prints. Oracles are independent implementations (naive loops,
//! Monte Carlo, closed forms), never the code under test.

use crate::config::{ExperimentConfig, Schedule, Variant};
use crate::data::MixtureSpec;
use crate::error::Result;
use crate::eval::{fit_gaussian, frechet_distance, GaussianStats};
use crate::graph::Graph;
use crate::losses;
use crate::nets::{Model, NamedParam, NetSpec, ParamSet, TrunkPath};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{load_data, phase_sequence, TrainState};

/// Finite-difference step.
const FD_EPS: f32 = 1e-3;
/// Relative tolerance for analytic vs finite-difference gradients (32-bit).
const FD_REL_TOL: f64 = 1e-2;
/// Absolute noise floor: f32 forward evaluations quantize the loss at about
/// 1e-7 * |L|, which shows up in the difference quotient as ~6e-5 * |L|.
const FD_ABS_FLOOR: f64 = 5e-4;

/// Compare analytic gradients of `build` against central finite differences,
/// perturbing every coordinate of every listed parameter.
/// Returns the number of coordinates checked.
pub fn check_grads(
    params: &[NamedParam],
    build: &mut dyn FnMut(&mut Graph) -> Result<Tensor>,
) -> std::result::Result<usize, String> {
    for p in params {
        p.tensor.zero_grad();
    }
    let mut g = Graph::new();
    let loss = build(&mut g).map_err(|e| e.to_string())?;
    g.backward(&loss).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f32>> =
        params.iter().map(|p| p.tensor.grad().unwrap_or_else(|| vec![0.0; p.tensor.numel()])).collect();

    let mut eval = |ps: &NamedParam, values: &[f32]| -> std::result::Result<f64, String> {
        ps.tensor.set_value(values);
        let mut g = Graph::inference();
        let out = build(&mut g).map_err(|e| e.to_string())?;
        Ok(out.item() as f64)
    };

    let mut checked = 0usize;
    for (pi, p) in params.iter().enumerate() {
        let base = p.tensor.value();
        let mut work = base.clone();
        for i in 0..base.len() {
            work[i] = base[i] + FD_EPS;
            let lp = eval(p, &work)?;
            work[i] = base[i] - FD_EPS;
            let lm = eval(p, &work)?;
            work[i] = base[i];
            p.tensor.set_value(&base);
            let fd = (lp - lm) / (2.0 * FD_EPS as f64);
            let an = analytic[pi][i] as f64;
            let err = (an - fd).abs();
            if err > FD_ABS_FLOOR && err > FD_REL_TOL * an.abs().max(fd.abs()) {
                // Confirm at a 4x smaller step. A kink straddled by the
                // original step stops biasing the quotient, while a genuine
                // VJP defect keeps its relative error at any step.
                let h2 = FD_EPS / 4.0;
                work[i] = base[i] + h2;
                let lp2 = eval(p, &work)?;
                work[i] = base[i] - h2;
                let lm2 = eval(p, &work)?;
                work[i] = base[i];
                p.tensor.set_value(&base);
                let fd2 = (lp2 - lm2) / (2.0 * h2 as f64);
                let err2 = (an - fd2).abs();
                let floor2 = FD_ABS_FLOOR * 4.0; // f32 noise scales as 1/h
                if err2 > floor2 && err2 > FD_REL_TOL * an.abs().max(fd2.abs()) {
                    return Err(format!(
                        "{}[{i}]: analytic {an:.6e} vs finite-diff {fd:.6e} / {fd2:.6e} (err {err:.2e})",
                        p.name
                    ));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Run a loss-level gradient case, retrying with derived seeds when a
/// coordinate trips. Central differences at a leaky-relu kink blend the two
/// slopes whenever a pre-activation lies within the step of zero, which is
/// an artifact of the probe, not of the gradient; a genuine VJP defect fails
/// at every seed. Op-level cases keep their inputs away from kinks by
/// construction and do not retry.
fn with_seed_retries(
    seed: u64,
    attempts: u64,
    run: impl Fn(u64) -> std::result::Result<(String, usize), String>,
) -> std::result::Result<(String, usize), String> {
    let mut last_err = String::new();
    for attempt in 0..attempts {
        let s = seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9));
        match run(s) {
            Ok((detail, units)) => {
                let note = if attempt == 0 {
                    detail
                } else {
                    format!("{detail} (kink retry {attempt})")
                };
                return Ok((note, units));
            }
            Err(e) => last_err = e,
        }
    }
    Err(format!("failed at all {attempts} seeds; last: {last_err}"))
}

fn param(rng: &mut Rng, name: &str, shape: &[usize], lo: f32, hi: f32) -> NamedParam {
    let n: usize = shape.iter().product();
    let mut data = vec![0.0f32; n];
    for v in data.iter_mut() {
        let mag = rng.uniform_range(lo, hi);
        *v = if rng.uniform_f32() < 0.5 { -mag } else { mag };
    }
    NamedParam { name: name.into(), tensor: Tensor::param(shape, data) }
}

fn weight_head(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = vec![0.0f32; n];
    for v in data.iter_mut() {
        *v = rng.uniform_range(-1.0, 1.0);
    }
    Tensor::from_vec(shape, data)
}

/// Reduce an op output to a scalar with a fixed random weighting so the full
/// Jacobian is exercised by one backward pass.
fn weighted_sum(g: &mut Graph, out: &Tensor, w: &Tensor) -> Result<Tensor> {
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(&prod))
}

// ── suite plumbing ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub seed: u64,
    pub passed: bool,
    /// Observed-vs-expected summary on failure; work summary on success.
    pub detail: String,
    /// Randomized instances/coordinates this case covered.
    pub units: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn units(&self) -> usize {
        self.cases.iter().map(|c| c.units).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            s.push_str(&format!(
                "{} {} (seed {}): {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.seed,
                c.detail
            ));
        }
        let failed = self.cases.iter().filter(|c| !c.passed).count();
        s.push_str(&format!("{} cases, {} failed\n", self.cases.len(), failed));
        s
    }
}

type CaseFn = fn(u64) -> std::result::Result<(String, usize), String>;

fn registry() -> Vec<(&'static str, u64, CaseFn)> {
    vec![
        ("grad.op.add", 101, grad_add),
        ("grad.op.sub", 102, grad_sub),
        ("grad.op.mul", 103, grad_mul),
        ("grad.op.scale_addscalar", 104, grad_scale_addscalar),
        ("grad.op.broadcast", 105, grad_broadcast),
        ("grad.op.matmul", 106, grad_matmul),
        ("grad.op.conv2d", 107, grad_conv2d),
        ("grad.op.conv2d_transpose", 108, grad_conv2d_transpose),
        ("grad.op.relu", 109, grad_relu),
        ("grad.op.leaky_relu", 110, grad_leaky_relu),
        ("grad.op.sigmoid", 111, grad_sigmoid),
        ("grad.op.tanh", 112, grad_tanh),
        ("grad.op.exp", 113, grad_exp),
        ("grad.op.log", 114, grad_log),
        ("grad.op.square", 115, grad_square),
        ("grad.op.clamp", 116, grad_clamp),
        ("grad.op.reductions", 117, grad_reductions),
        ("grad.op.concat", 118, grad_concat),
        ("grad.op.reshape", 119, grad_reshape),
        ("grad.op.cross_entropy", 120, grad_cross_entropy),
        ("grad.loss.recons", 131, grad_loss_recons),
        ("grad.loss.prior_kl", 132, grad_loss_prior),
        ("grad.loss.dis", 133, grad_loss_dis),
        ("grad.loss.gen_adv", 134, grad_loss_gen_adv),
        ("grad.loss.recons_dis", 135, grad_loss_recons_dis),
        ("grad.net.composed", 136, grad_composed_networks),
        ("isolation.vae", 201, |s| isolation_case(s, Variant::Vae)),
        ("isolation.idvae", 202, |s| isolation_case(s, Variant::Idvae)),
        ("isolation.idvae_r", 203, |s| isolation_case(s, Variant::IdvaeR)),
        ("isolation.no_sharing", 204, |s| isolation_case(s, Variant::NoSharing)),
        ("isolation.c_idvae", 205, |s| isolation_case(s, Variant::CIdvae)),
        ("isolation.enc_first", 206, isolation_enc_first),
        ("isolation.joint", 207, isolation_joint),
        ("oracle.prior_kl_mc", 301, oracle_prior_kl_mc),
        ("oracle.recons_two_loop", 302, oracle_recons_two_loop),
        ("oracle.dis_scalar", 303, oracle_dis_scalar),
        ("oracle.fit_gaussian", 304, oracle_fit_gaussian),
        ("oracle.frechet_diagonal", 305, oracle_frechet_diagonal),
        ("oracle.adam_reference", 306, oracle_adam_reference),
        ("prop.grad_accumulation", 401, prop_grad_accumulation),
        ("prop.backward_linearity", 402, prop_backward_linearity),
        ("prop.kl_permutation", 403, prop_kl_permutation),
        ("prop.frechet_symmetry", 404, prop_frechet_symmetry),
        ("prop.frechet_zero", 405, prop_frechet_zero),
        ("prop.frechet_monotone", 406, prop_frechet_monotone),
        ("prop.mixture_stats", 407, prop_mixture_stats),
        ("prop.determinism", 408, prop_determinism),
    ]
}

/// Run every registered case whose name contains `filter` (all when None),
/// optionally overriding the per-case seeds for a fuzzing session.
pub fn run_suite(filter: Option<&str>, seed_override: Option<u64>) -> SuiteReport {
    let mut cases = Vec::new();
    for (name, default_seed, f) in registry() {
        if let Some(fil) = filter {
            if !name.contains(fil) {
                continue;
            }
        }
        let seed = seed_override.unwrap_or(default_seed);
        let result = f(seed);
        cases.push(match result {
            Ok((detail, units)) => {
                CaseResult { name: name.into(), seed, passed: true, detail, units }
            }
            Err(detail) => CaseResult { name: name.into(), seed, passed: false, detail, units: 0 },
        });
    }
    SuiteReport { cases }
}

// ── gradient cases: individual ops ──────────────────────────────────────

fn grad_unary(
    seed: u64,
    lo: f32,
    hi: f32,
    op: impl Fn(&mut Graph, &Tensor) -> Tensor,
) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    let mut instances = 0usize;
    for shape in [vec![7], vec![3, 4], vec![2, 2, 3]] {
        let p = param(&mut rng, "x", &shape, lo, hi);
        let w = weight_head(&mut rng, &shape);
        total += check_grads(std::slice::from_ref(&p), &mut |g| {
            let y = op(g, &p.tensor);
            weighted_sum(g, &y, &w)
        })?;
        instances += 1;
    }
    Ok((format!("{instances} shapes, {total} coords"), instances))
}

fn grad_add(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_binary(seed, |g, a, b| g.add(a, b))
}

fn grad_sub(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_binary(seed, |g, a, b| g.sub(a, b))
}

fn grad_mul(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_binary(seed, |g, a, b| g.mul(a, b))
}

fn grad_binary(
    seed: u64,
    op: impl Fn(&mut Graph, &Tensor, &Tensor) -> Result<Tensor>,
) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    let mut instances = 0usize;
    for shape in [vec![5], vec![2, 3], vec![2, 2, 2]] {
        let a = param(&mut rng, "a", &shape, 0.2, 1.5);
        let b = param(&mut rng, "b", &shape, 0.2, 1.5);
        let w = weight_head(&mut rng, &shape);
        total += check_grads(&[a.clone(), b.clone()], &mut |g| {
            let y = op(g, &a.tensor, &b.tensor)?;
            weighted_sum(g, &y, &w)
        })?;
        instances += 1;
    }
    Ok((format!("{instances} shapes, {total} coords"), instances))
}

fn grad_scale_addscalar(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    for c in [-1.7f32, 0.4, 2.5] {
        let p = param(&mut rng, "x", &[3, 3], 0.2, 1.5);
        let w = weight_head(&mut rng, &[3, 3]);
        total += check_grads(std::slice::from_ref(&p), &mut |g| {
            let y = g.scale(&p.tensor, c);
            let y = g.add_scalar(&y, c * 0.5);
            weighted_sum(g, &y, &w)
        })?;
    }
    Ok((format!("3 constants, {total} coords"), 3))
}

fn grad_broadcast(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    let cases: Vec<(Vec<usize>, Vec<usize>)> = vec![
        (vec![], vec![2, 3]),
        (vec![4], vec![3, 4]),
        (vec![2], vec![3, 2, 2, 2]),
        (vec![2, 3], vec![2, 3, 2, 2]),
    ];
    let n = cases.len();
    for (from, to) in cases {
        let p = param(&mut rng, "x", &from, 0.2, 1.5);
        let w = weight_head(&mut rng, &to);
        total += check_grads(std::slice::from_ref(&p), &mut |g| {
            let y = g.broadcast_to(&p.tensor, &to)?;
            weighted_sum(g, &y, &w)
        })?;
    }
    Ok((format!("{n} patterns, {total} coords"), n))
}

fn grad_matmul(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    for (m, k, n) in [(2usize, 3usize, 4usize), (1, 5, 2), (4, 4, 4)] {
        let a = param(&mut rng, "a", &[m, k], 0.2, 1.2);
        let b = param(&mut rng, "b", &[k, n], 0.2, 1.2);
        let w = weight_head(&mut rng, &[m, n]);
        total += check_grads(&[a.clone(), b.clone()], &mut |g| {
            let y = g.matmul(&a.tensor, &b.tensor)?;
            weighted_sum(g, &y, &w)
        })?;
    }
    Ok((format!("3 shapes, {total} coords"), 3))
}

fn grad_conv2d(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    let cases = [(1usize, 2usize, 5usize, 3usize, 1usize, 1usize), (2, 3, 6, 4, 2, 1), (3, 1, 4, 1, 1, 0)];
    for (ci, co, hw, k, s, p) in cases {
        let x = param(&mut rng, "x", &[2, ci, hw, hw], 0.2, 1.0);
        let w = param(&mut rng, "w", &[co, ci, k, k], 0.2, 0.8);
        let oh = crate::kernels::conv_out(hw, k, s, p);
        let head = weight_head(&mut rng, &[2, co, oh, oh]);
        total += check_grads(&[x.clone(), w.clone()], &mut |g| {
            let y = g.conv2d(&x.tensor, &w.tensor, s, p)?;
            weighted_sum(g, &y, &head)
        })?;
    }
    Ok((format!("3 geometries, {total} coords"), 3))
}

fn grad_conv2d_transpose(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    let cases = [
        (2usize, 1usize, 3usize, 4usize, 2usize, 1usize, 1usize),
        (1, 2, 2, 3, 1, 0, 0),
        (2, 2, 3, 4, 2, 1, 0),
    ];
    for (ci, co, hw, k, s, p, op) in cases {
        let x = param(&mut rng, "x", &[2, ci, hw, hw], 0.2, 1.0);
        let w = param(&mut rng, "w", &[ci, co, k, k], 0.2, 0.8);
        let oh = crate::kernels::conv_transpose_out(hw, k, s, p, op);
        let head = weight_head(&mut rng, &[2, co, oh, oh]);
        total += check_grads(&[x.clone(), w.clone()], &mut |g| {
            let y = g.conv2d_transpose(&x.tensor, &w.tensor, s, p, op)?;
            weighted_sum(g, &y, &head)
        })?;
    }
    Ok((format!("3 geometries, {total} coords"), 3))
}

fn grad_relu(seed: u64) -> std::result::Result<(String, usize), String> {
    // inputs kept away from the kink at 0
    grad_unary(seed, 0.05, 1.5, |g, x| g.relu(x))
}

fn grad_leaky_relu(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_unary(seed, 0.05, 1.5, |g, x| g.leaky_relu(x, 0.2))
}

fn grad_sigmoid(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_unary(seed, 0.1, 2.0, |g, x| g.sigmoid(x))
}

fn grad_tanh(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_unary(seed, 0.1, 2.0, |g, x| g.tanh(x))
}

fn grad_exp(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_unary(seed, 0.1, 1.0, |g, x| g.exp(x))
}

fn grad_log(seed: u64) -> std::result::Result<(String, usize), String> {
    // strictly positive inputs, away from the 1e-7 guard
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    for shape in [vec![6], vec![3, 3]] {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.uniform_range(0.1, 2.0)).collect();
        let p = NamedParam { name: "x".into(), tensor: Tensor::param(&shape, data) };
        let w = weight_head(&mut rng, &shape);
        total += check_grads(std::slice::from_ref(&p), &mut |g| {
            let y = g.log(&p.tensor);
            weighted_sum(g, &y, &w)
        })?;
    }
    Ok((format!("2 shapes, {total} coords"), 2))
}

fn grad_square(seed: u64) -> std::result::Result<(String, usize), String> {
    grad_unary(seed, 0.1, 1.5, |g, x| g.square(x))
}

fn grad_clamp(seed: u64) -> std::result::Result<(String, usize), String> {
    // inputs strictly inside and strictly outside the clamp band
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    for _ in 0..2 {
        let data: Vec<f32> = (0..8)
            .map(|i| {
                if i % 2 == 0 {
                    rng.uniform_range(-0.4, 0.4) // inside (-0.5, 0.5)
                } else {
                    let v = rng.uniform_range(0.6, 1.5);
                    if rng.uniform_f32() < 0.5 {
                        -v
                    } else {
                        v
                    }
                }
            })
            .collect();
        let p = NamedParam { name: "x".into(), tensor: Tensor::param(&[8], data) };
        let w = weight_head(&mut rng, &[8]);
        total += check_grads(std::slice::from_ref(&p), &mut |g| {
            let y = g.clamp(&p.tensor, -0.5, 0.5);
            weighted_sum(g, &y, &w)
        })?;
    }
    Ok((format!("2 instances, {total} coords"), 2))
}

fn grad_reductions(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    for shape in [vec![5], vec![3, 4]] {
        let p = param(&mut rng, "x", &shape, 0.2, 1.5);
        total += check_grads(std::slice::from_ref(&p), &mut |g| Ok(g.sum_all(&p.tensor)))?;
        let q = param(&mut rng, "y", &shape, 0.2, 1.5);
        total += check_grads(std::slice::from_ref(&q), &mut |g| Ok(g.mean_all(&q.tensor)))?;
    }
    Ok((format!("4 instances, {total} coords"), 4))
}

fn grad_concat(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    // axis 1 (feature concat), axis 0, and a 4-D channel concat
    let a = param(&mut rng, "a", &[2, 3], 0.2, 1.5);
    let b = param(&mut rng, "b", &[2, 2], 0.2, 1.5);
    let w = weight_head(&mut rng, &[2, 5]);
    total += check_grads(&[a.clone(), b.clone()], &mut |g| {
        let y = g.concat(&[&a.tensor, &b.tensor], 1)?;
        weighted_sum(g, &y, &w)
    })?;
    let c = param(&mut rng, "c", &[1, 3], 0.2, 1.5);
    let d = param(&mut rng, "d", &[2, 3], 0.2, 1.5);
    let w0 = weight_head(&mut rng, &[3, 3]);
    total += check_grads(&[c.clone(), d.clone()], &mut |g| {
        let y = g.concat(&[&c.tensor, &d.tensor], 0)?;
        weighted_sum(g, &y, &w0)
    })?;
    let e = param(&mut rng, "e", &[2, 1, 2, 2], 0.2, 1.5);
    let f = param(&mut rng, "f", &[2, 2, 2, 2], 0.2, 1.5);
    let w1 = weight_head(&mut rng, &[2, 3, 2, 2]);
    total += check_grads(&[e.clone(), f.clone()], &mut |g| {
        let y = g.concat(&[&e.tensor, &f.tensor], 1)?;
        weighted_sum(g, &y, &w1)
    })?;
    Ok((format!("3 axes, {total} coords"), 3))
}

fn grad_reshape(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let p = param(&mut rng, "x", &[2, 6], 0.2, 1.5);
    let w = weight_head(&mut rng, &[3, 4]);
    let total = check_grads(std::slice::from_ref(&p), &mut |g| {
        let y = g.reshape(&p.tensor, &[3, 4])?;
        weighted_sum(g, &y, &w)
    })?;
    Ok((format!("1 instance, {total} coords"), 1))
}

fn grad_cross_entropy(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut total = 0usize;
    for (b, k) in [(3usize, 4usize), (5, 2)] {
        let p = param(&mut rng, "logits", &[b, k], 0.2, 1.5);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
        total += check_grads(std::slice::from_ref(&p), &mut |g| {
            g.cross_entropy(&p.tensor, &labels)
        })?;
    }
    Ok((format!("2 instances, {total} coords"), 2))
}

// ── gradient cases: full losses through the networks ────────────────────

fn tiny_models(seed: u64) -> Vec<(Model, Tensor)> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let mv = Model::new(NetSpec::vector(3, &[6, 5], 2), &mut rng).unwrap();
    let xv = {
        let data: Vec<f32> = (0..4 * 3).map(|_| rng.normal_f32()).collect();
        Tensor::from_vec(&[4, 3], data)
    };
    out.push((mv, xv));
    let mi = Model::new(NetSpec::image([1, 6, 6], &[3, 4], 2), &mut rng).unwrap();
    let xi = {
        let data: Vec<f32> = (0..2 * 36).map(|_| rng.uniform_f32()).collect();
        Tensor::from_vec(&[2, 1, 6, 6], data)
    };
    out.push((mi, xi));
    out
}

fn all_params(m: &Model) -> Vec<NamedParam> {
    m.partition.all().cloned().collect()
}

fn grad_loss_recons(seed: u64) -> std::result::Result<(String, usize), String> {
    with_seed_retries(seed, 6, grad_loss_recons_once)
}

fn grad_loss_recons_once(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut total = 0usize;
    for (model, x) in tiny_models(seed) {
        let b = x.shape()[0];
        let eps = {
            let mut r = Rng::new(seed ^ 0x11);
            let mut v = vec![0.0f32; b * 2];
            r.fill_normal(&mut v);
            Tensor::from_vec(&[b, 2], v)
        };
        let params = all_params(&model);
        total += check_grads(&params, &mut |g| {
            let code = model.encode_with_eps(g, &x, None, &eps)?;
            let recon = model.decode(g, &code.sample, None)?;
            losses::recons_loss(g, &x, &recon)
        })?;
    }
    Ok((format!("2 nets, {total} coords"), 2))
}

fn grad_loss_prior(seed: u64) -> std::result::Result<(String, usize), String> {
    with_seed_retries(seed, 6, grad_loss_prior_once)
}

fn grad_loss_prior_once(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut total = 0usize;
    for (model, x) in tiny_models(seed) {
        let b = x.shape()[0];
        let eps = Tensor::zeros(&[b, 2]);
        let params = all_params(&model);
        total += check_grads(&params, &mut |g| {
            let code = model.encode_with_eps(g, &x, None, &eps)?;
            losses::prior_kl(g, &code.mu, &code.log_var)
        })?;
    }
    Ok((format!("2 nets, {total} coords"), 2))
}

fn grad_loss_dis(seed: u64) -> std::result::Result<(String, usize), String> {
    with_seed_retries(seed, 6, grad_loss_dis_once)
}

fn grad_loss_dis_once(seed: u64) -> std::result::Result<(String, usize), String> {
    // Fakes are detached by construction: generate them once, hold them
    // fixed, and differentiate only the discriminator path.
    let mut total = 0usize;
    for (model, x) in tiny_models(seed) {
        let b = x.shape()[0];
        let (x_recon, x_prior) = {
            let mut gi = Graph::inference();
            let mut r = Rng::new(seed ^ 0x22);
            let code = model.encode(&mut gi, &x, None, &mut r).map_err(|e| e.to_string())?;
            let xr = model.decode(&mut gi, &code.sample, None).map_err(|e| e.to_string())?;
            let zp = crate::data::sample_prior(b, 2, &mut r);
            let xp = model.decode(&mut gi, &zp, None).map_err(|e| e.to_string())?;
            (xr, xp)
        };
        let mut params: Vec<NamedParam> = model.partition.set(ParamSet::Dis).to_vec();
        params.extend(model.partition.set(ParamSet::Shared).iter().cloned());
        total += check_grads(&params, &mut |g| {
            let d_real = model.discriminate(g, &x, None)?;
            let d_fp = model.discriminate(g, &x_prior, None)?;
            let d_fr = model.discriminate(g, &x_recon, None)?;
            Ok(losses::dis_loss(g, &d_real, &d_fp, &d_fr)?.total)
        })?;
    }
    Ok((format!("2 nets, {total} coords"), 2))
}

fn grad_loss_gen_adv(seed: u64) -> std::result::Result<(String, usize), String> {
    with_seed_retries(seed, 6, grad_loss_gen_adv_once)
}

fn grad_loss_gen_adv_once(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut total = 0usize;
    for (model, x) in tiny_models(seed) {
        let b = x.shape()[0];
        let eps = {
            let mut r = Rng::new(seed ^ 0x33);
            let mut v = vec![0.0f32; b * 2];
            r.fill_normal(&mut v);
            Tensor::from_vec(&[b, 2], v)
        };
        let zp = crate::data::sample_prior(b, 2, &mut Rng::new(seed ^ 0x44));
        model.partition.set_trainable(&[ParamSet::Shared, ParamSet::Enc, ParamSet::Dis], false);
        let params: Vec<NamedParam> = model.partition.set(ParamSet::Dec).to_vec();
        let r = check_grads(&params, &mut |g| {
            let code = model.encode_with_eps(g, &x, None, &eps)?;
            let x_recon = model.decode(g, &code.sample, None)?;
            let x_prior = model.decode(g, &zp, None)?;
            let d_fp = model.discriminate(g, &x_prior, None)?;
            let d_fr = model.discriminate(g, &x_recon, None)?;
            losses::gen_adv_loss(g, &d_fp, &d_fr)
        });
        model.partition.set_trainable(&[ParamSet::Shared, ParamSet::Enc, ParamSet::Dis], true);
        total += r?;
    }
    Ok((format!("2 nets, {total} coords"), 2))
}

fn grad_loss_recons_dis(seed: u64) -> std::result::Result<(String, usize), String> {
    with_seed_retries(seed, 6, grad_loss_recons_dis_once)
}

fn grad_loss_recons_dis_once(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut total = 0usize;
    for (model, x) in tiny_models(seed) {
        let b = x.shape()[0];
        let eps = {
            let mut r = Rng::new(seed ^ 0x55);
            let mut v = vec![0.0f32; b * 2];
            r.fill_normal(&mut v);
            Tensor::from_vec(&[b, 2], v)
        };
        model.partition.set_trainable(&[ParamSet::Shared, ParamSet::Enc, ParamSet::Dis], false);
        let params: Vec<NamedParam> = model.partition.set(ParamSet::Dec).to_vec();
        let layer = model.spec.feature_layer();
        let r = check_grads(&params, &mut |g| {
            let code = model.encode_with_eps(g, &x, None, &eps)?;
            let x_recon = model.decode(g, &code.sample, None)?;
            let f_x = model.trunk_features(g, &x, None, layer, TrunkPath::Discriminator)?;
            let f_r = model.trunk_features(g, &x_recon, None, layer, TrunkPath::Discriminator)?;
            losses::recons_dis_loss(g, &f_x, &f_r)
        });
        model.partition.set_trainable(&[ParamSet::Shared, ParamSet::Enc, ParamSet::Dis], true);
        total += r?;
    }
    Ok((format!("2 nets, {total} coords"), 2))
}

fn grad_composed_networks(seed: u64) -> std::result::Result<(String, usize), String> {
    with_seed_retries(seed, 6, grad_composed_networks_once)
}

fn grad_composed_networks_once(seed: u64) -> std::result::Result<(String, usize), String> {
    // full encoder/decoder/discriminator stack under one scalar
    let mut total = 0usize;
    for (model, x) in tiny_models(seed) {
        let b = x.shape()[0];
        let eps = {
            let mut r = Rng::new(seed ^ 0x66);
            let mut v = vec![0.0f32; b * 2];
            r.fill_normal(&mut v);
            Tensor::from_vec(&[b, 2], v)
        };
        let params = all_params(&model);
        total += check_grads(&params, &mut |g| {
            let code = model.encode_with_eps(g, &x, None, &eps)?;
            let recon = model.decode(g, &code.sample, None)?;
            let d = model.discriminate(g, &recon, None)?;
            let c = g.clamp(&d, 1e-7, 1.0 - 1e-7);
            let l = g.log(&c);
            let m = g.mean_all(&l);
            let mse = losses::recons_loss(g, &x, &recon)?;
            g.add(&mse, &m)
        })?;
    }
    Ok((format!("2 nets, {total} coords"), 2))
}

// ── update isolation ────────────────────────────────────────────────────

fn isolation_cfg(variant: Variant, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::ring_defaults();
    cfg.variant = variant;
    cfg.trunk = vec![12, 10];
    cfg.train_n = 128;
    cfg.test_n = 32;
    cfg.batch_size = 16;
    cfg.seed = seed;
    if variant == Variant::IdvaeR {
        cfg.weights.gamma = 1.0;
    }
    cfg
}

fn expected_prefixes(variant: Variant, set: ParamSet) -> Vec<&'static str> {
    let shared: &[&str] = if variant == Variant::NoSharing { &[] } else { &["trunk."] };
    match set {
        ParamSet::Shared => shared.to_vec(),
        ParamSet::Enc => {
            let mut v = vec!["mu.", "logvar."];
            if variant == Variant::NoSharing {
                v.push("enc_trunk.");
            }
            v
        }
        ParamSet::Dis => {
            let mut v = vec!["dis."];
            if variant == Variant::NoSharing {
                v.push("dis_trunk.");
            }
            v
        }
        ParamSet::Dec => vec!["dec."],
    }
}

fn isolation_run(
    cfg: &ExperimentConfig,
    steps: usize,
) -> std::result::Result<(String, usize), String> {
    let (train, _) = load_data(cfg).map_err(|e| e.to_string())?;
    let mut state = TrainState::new(cfg, &train).map_err(|e| e.to_string())?;
    let seq = phase_sequence(cfg);
    let mut batch_rng = Rng::new(cfg.seed ^ 0x5A5A);
    let mut checked = 0usize;
    for step in 0..steps {
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| batch_rng.below(train.len())).collect();
        let batch = train.gather(&idx);
        for kind in &seq {
            let before: Vec<(String, Vec<f32>)> = state
                .model
                .partition
                .all()
                .map(|p| (p.name.clone(), p.tensor.value()))
                .collect();
            state.run_phase(cfg, *kind, &batch).map_err(|e| e.to_string())?;
            // expected prefixes for this phase
            let mut allowed: Vec<&str> = Vec::new();
            for set in kind.updated_sets() {
                allowed.extend(expected_prefixes(cfg.variant, *set));
            }
            let mut changed_prefixes: Vec<&str> = Vec::new();
            for (name, old) in &before {
                let p = state.model.partition.all().find(|p| &p.name == name).unwrap();
                let changed = p.tensor.value() != *old;
                let prefix = allowed.iter().find(|pre| name.starts_with(**pre));
                if changed {
                    match prefix {
                        Some(pre) => {
                            if !changed_prefixes.contains(pre) {
                                changed_prefixes.push(pre);
                            }
                        }
                        None => {
                            return Err(format!(
                                "step {step} phase {}: {} changed but is outside {:?}",
                                kind.name(),
                                name,
                                allowed
                            ))
                        }
                    }
                }
            }
            // every expected set must actually move (nondegenerate data)
            for pre in &allowed {
                if !changed_prefixes.contains(pre) {
                    return Err(format!(
                        "step {step} phase {}: no parameter under '{pre}' changed",
                        kind.name()
                    ));
                }
            }
            checked += 1;
        }
    }
    Ok((format!("{steps} steps x {} phases", seq.len()), checked))
}

fn isolation_case(seed: u64, variant: Variant) -> std::result::Result<(String, usize), String> {
    isolation_run(&isolation_cfg(variant, seed), 100)
}

fn isolation_enc_first(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut cfg = isolation_cfg(Variant::Idvae, seed);
    cfg.schedule = Schedule::EncFirst;
    isolation_run(&cfg, 25)
}

fn isolation_joint(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut cfg = isolation_cfg(Variant::Idvae, seed);
    cfg.schedule = Schedule::Joint;
    isolation_run(&cfg, 25)
}

// ── closed-form / Monte-Carlo oracles ───────────────────────────────────

fn oracle_prior_kl_mc(seed: u64) -> std::result::Result<(String, usize), String> {
    // KL(q || N(0,I)) for diagonal q estimated by Monte Carlo with 1e5
    // samples of E_q[log q(z) - log p(z)].
    let mut rng = Rng::new(seed);
    let mut instances = 0usize;
    for _ in 0..3 {
        let d = 4usize;
        let mu: Vec<f32> = (0..d).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
        let lv: Vec<f32> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mut g = Graph::inference();
        let got = losses::prior_kl(
            &mut g,
            &Tensor::from_vec(&[1, d], mu.clone()),
            &Tensor::from_vec(&[1, d], lv.clone()),
        )
        .map_err(|e| e.to_string())?
        .item() as f64;

        let n = 100_000usize;
        let mut acc = 0.0f64;
        for _ in 0..n {
            for j in 0..d {
                let m = mu[j] as f64;
                let var = (lv[j] as f64).exp();
                let z = m + var.sqrt() * rng.normal_f32() as f64;
                // log q - log p for this coordinate
                let log_q = -0.5 * ((z - m) * (z - m) / var + var.ln() + (2.0 * std::f64::consts::PI).ln());
                let log_p = -0.5 * (z * z + (2.0 * std::f64::consts::PI).ln());
                acc += log_q - log_p;
            }
        }
        let mc = acc / n as f64;
        let rel = (got - mc).abs() / mc.abs().max(0.1);
        if rel > 0.02 {
            return Err(format!("closed form {got:.5} vs MC {mc:.5} (rel {rel:.4})"));
        }
        instances += 1;
    }
    Ok((format!("{instances} posteriors, 1e5 samples each"), instances))
}

fn oracle_recons_two_loop(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    for _ in 0..5 {
        let (n, d) = (4usize, 3usize);
        let a: Vec<f32> = (0..n * d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let b: Vec<f32> = (0..n * d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let mut acc = 0.0f64;
        for i in 0..n {
            for j in 0..d {
                let diff = (b[i * d + j] - a[i * d + j]) as f64;
                acc += diff * diff;
            }
        }
        let expect = acc / (n * d) as f64;
        let mut g = Graph::inference();
        let got = losses::recons_loss(
            &mut g,
            &Tensor::from_vec(&[n, d], a),
            &Tensor::from_vec(&[n, d], b),
        )
        .map_err(|e| e.to_string())?
        .item() as f64;
        if (got - expect).abs() > 1e-6 {
            return Err(format!("{got} vs naive {expect}"));
        }
    }
    Ok(("5 random batches".into(), 5))
}

fn oracle_dis_scalar(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    for _ in 0..10 {
        let b = 4usize;
        let pr: Vec<f32> = (0..b).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let pf: Vec<f32> = (0..b).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let pg: Vec<f32> = (0..b).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let mut oracle = 0.0f64;
        for i in 0..b {
            oracle -= f64::from(pr[i]).ln() / b as f64;
            oracle -= (1.0 - f64::from(pf[i])).ln() / b as f64;
            oracle -= (1.0 - f64::from(pg[i])).ln() / b as f64;
        }
        let mut g = Graph::inference();
        let got = losses::dis_loss(
            &mut g,
            &Tensor::from_vec(&[b, 1], pr),
            &Tensor::from_vec(&[b, 1], pf),
            &Tensor::from_vec(&[b, 1], pg),
        )
        .map_err(|e| e.to_string())?
        .total
        .item() as f64;
        if (got - oracle).abs() > 1e-6 {
            return Err(format!("{got} vs oracle {oracle}"));
        }
    }
    Ok(("10 probability draws".into(), 10))
}

fn oracle_fit_gaussian(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let (n, d) = (50usize, 4usize);
    let data: Vec<f32> = (0..n * d).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    let s = fit_gaussian(&Tensor::from_vec(&[n, d], data.clone())).map_err(|e| e.to_string())?;
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += data[i * d + j] as f64 / n as f64;
        }
    }
    for j in 0..d {
        if (s.mean[j] - mean[j]).abs() > 1e-5 {
            return Err(format!("mean[{j}] {} vs {}", s.mean[j], mean[j]));
        }
    }
    for a in 0..d {
        for b in 0..d {
            let mut c = 0.0f64;
            for i in 0..n {
                c += (data[i * d + a] as f64 - mean[a]) * (data[i * d + b] as f64 - mean[b]);
            }
            c /= (n - 1) as f64;
            if (s.cov[a * d + b] - c).abs() > 1e-5 {
                return Err(format!("cov[{a},{b}] {} vs {}", s.cov[a * d + b], c));
            }
        }
    }
    Ok((format!("{n}x{d} matrix, every entry"), 1))
}

fn oracle_frechet_diagonal(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let mut instances = 0usize;
    for _ in 0..10 {
        let d = 6usize;
        let ma: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0) as f64).collect();
        let mb: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0) as f64).collect();
        let va: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.1, 3.0) as f64).collect();
        let vb: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.1, 3.0) as f64).collect();
        let mk = |mean: &[f64], var: &[f64]| {
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                cov[i * d + i] = var[i];
            }
            GaussianStats { mean: mean.to_vec(), cov, n: 100 }
        };
        let got = frechet_distance(&mk(&ma, &va), &mk(&mb, &vb)).map_err(|e| e.to_string())?;
        let mut expect = 0.0;
        for i in 0..d {
            expect += (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2);
        }
        if (got - expect).abs() > 1e-4 {
            return Err(format!("{got} vs diagonal closed form {expect}"));
        }
        instances += 1;
    }
    Ok((format!("{instances} diagonal pairs"), instances))
}

fn oracle_adam_reference(seed: u64) -> std::result::Result<(String, usize), String> {
    use crate::optim::{Adam, AdamParams};
    let mut rng = Rng::new(seed);
    let hyper = AdamParams { lr: 2e-3, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
    let p = NamedParam { name: "w".into(), tensor: Tensor::param(&[5], vec![0.3; 5]) };
    let mut opt = Adam::new(hyper);
    let mut theta = [0.3f32; 5];
    let mut m = [0.0f32; 5];
    let mut v = [0.0f32; 5];
    for t in 1..=100u64 {
        let grads: Vec<f32> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        p.tensor.zero_grad();
        p.tensor.accumulate_grad(&grads);
        opt.step(std::slice::from_ref(&p));
        for i in 0..5 {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grads[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
            let mh = m[i] / (1.0 - hyper.beta1.powi(t as i32));
            let vh = v[i] / (1.0 - hyper.beta2.powi(t as i32));
            theta[i] -= hyper.lr * mh / (vh.sqrt() + hyper.eps);
        }
        let got = p.tensor.value();
        for i in 0..5 {
            if (got[i] - theta[i]).abs() > 1e-6 {
                return Err(format!("step {t} coord {i}: {} vs {}", got[i], theta[i]));
            }
        }
    }
    Ok(("100 steps vs reference".into(), 100))
}

// ── structural properties ───────────────────────────────────────────────

fn prop_grad_accumulation(seed: u64) -> std::result::Result<(String, usize), String> {
    // two backward calls without zeroing double the gradient, exactly
    let mut rng = Rng::new(seed);
    let p = param(&mut rng, "w", &[6], 0.2, 1.5);
    let single = {
        p.tensor.zero_grad();
        let mut g = Graph::new();
        let sq = g.square(&p.tensor);
        let root = g.sum_all(&sq);
        g.backward(&root).map_err(|e| e.to_string())?;
        p.tensor.grad().unwrap()
    };
    p.tensor.zero_grad();
    for _ in 0..2 {
        let mut g = Graph::new();
        let sq = g.square(&p.tensor);
        let root = g.sum_all(&sq);
        g.backward(&root).map_err(|e| e.to_string())?;
    }
    let double = p.tensor.grad().unwrap();
    for (s, d) in single.iter().zip(&double) {
        if *d != 2.0 * s {
            return Err(format!("{d} != 2 * {s}"));
        }
    }
    Ok(("exact doubling".into(), 1))
}

fn prop_backward_linearity(seed: u64) -> std::result::Result<(String, usize), String> {
    // backward(a) then backward(b) equals backward(a + b)
    let mut rng = Rng::new(seed);
    let p = param(&mut rng, "w", &[5], 0.2, 1.5);
    let build_a = |g: &mut Graph, t: &Tensor| {
        let s = g.square(t);
        g.sum_all(&s)
    };
    let build_b = |g: &mut Graph, t: &Tensor| {
        let e = g.exp(t);
        g.mean_all(&e)
    };
    p.tensor.zero_grad();
    {
        let mut g = Graph::new();
        let a = build_a(&mut g, &p.tensor);
        g.backward(&a).map_err(|e| e.to_string())?;
        let mut g2 = Graph::new();
        let b = build_b(&mut g2, &p.tensor);
        g2.backward(&b).map_err(|e| e.to_string())?;
    }
    let separate = p.tensor.grad().unwrap();
    p.tensor.zero_grad();
    {
        let mut g = Graph::new();
        let a = build_a(&mut g, &p.tensor);
        let b = build_b(&mut g, &p.tensor);
        let s = g.add(&a, &b).map_err(|e| e.to_string())?;
        g.backward(&s).map_err(|e| e.to_string())?;
    }
    let joint = p.tensor.grad().unwrap();
    for (i, (s, j)) in separate.iter().zip(&joint).enumerate() {
        if (s - j).abs() > 1e-6 * s.abs().max(1.0) {
            return Err(format!("coord {i}: separate {s} vs joint {j}"));
        }
    }
    Ok(("sum rule holds".into(), 1))
}

fn prop_kl_permutation(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let d = 6usize;
    let mu: Vec<f32> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let lv: Vec<f32> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut g = Graph::inference();
    let a = losses::prior_kl(
        &mut g,
        &Tensor::from_vec(&[1, d], mu.clone()),
        &Tensor::from_vec(&[1, d], lv.clone()),
    )
    .map_err(|e| e.to_string())?
    .item();
    let mut idx: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut idx);
    let mu_p: Vec<f32> = idx.iter().map(|&i| mu[i]).collect();
    let lv_p: Vec<f32> = idx.iter().map(|&i| lv[i]).collect();
    let b = losses::prior_kl(
        &mut g,
        &Tensor::from_vec(&[1, d], mu_p),
        &Tensor::from_vec(&[1, d], lv_p),
    )
    .map_err(|e| e.to_string())?
    .item();
    if (a - b).abs() > 1e-5 {
        return Err(format!("{a} vs permuted {b}"));
    }
    Ok(("permutation invariant".into(), 1))
}

fn prop_frechet_symmetry(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let n = 50;
    let fa: Vec<f32> = (0..n * 3).map(|_| rng.normal_f32()).collect();
    let fb: Vec<f32> = (0..n * 3).map(|_| rng.normal_f32() * 1.4 - 0.2).collect();
    let sa = fit_gaussian(&Tensor::from_vec(&[n, 3], fa)).map_err(|e| e.to_string())?;
    let sb = fit_gaussian(&Tensor::from_vec(&[n, 3], fb)).map_err(|e| e.to_string())?;
    let ab = frechet_distance(&sa, &sb).map_err(|e| e.to_string())?;
    let ba = frechet_distance(&sb, &sa).map_err(|e| e.to_string())?;
    if (ab - ba).abs() > 1e-5 {
        return Err(format!("{ab} vs {ba}"));
    }
    Ok(("symmetric".into(), 1))
}

fn prop_frechet_zero(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut rng = Rng::new(seed);
    let f: Vec<f32> = (0..40 * 3).map(|_| rng.normal_f32()).collect();
    let s = fit_gaussian(&Tensor::from_vec(&[40, 3], f)).map_err(|e| e.to_string())?;
    let d = frechet_distance(&s, &s.clone()).map_err(|e| e.to_string())?;
    if d != 0.0 {
        return Err(format!("identical stats gave {d}, expected exactly 0"));
    }
    Ok(("exactly zero on identical stats".into(), 1))
}

fn prop_frechet_monotone(seed: u64) -> std::result::Result<(String, usize), String> {
    let _ = seed;
    let base = GaussianStats { mean: vec![0.0], cov: vec![0.9], n: 10 };
    let mut last = -1.0f64;
    for shift in [0.05f64, 0.3, 0.9, 2.0, 5.0] {
        let other = GaussianStats { mean: vec![shift], cov: vec![0.9], n: 10 };
        let d = frechet_distance(&base, &other).map_err(|e| e.to_string())?;
        if d <= last {
            return Err(format!("not strictly increasing at shift {shift}"));
        }
        last = d;
    }
    Ok(("strictly increasing in |mean gap|".into(), 5))
}

fn prop_mixture_stats(seed: u64) -> std::result::Result<(String, usize), String> {
    let spec = MixtureSpec::default_ring();
    let mut rng = Rng::new(seed);
    let n = 100_000;
    let (_, modes) = crate::data::sample_mixture(&spec, n, &mut rng);
    let mut counts = vec![0usize; spec.k()];
    for m in modes {
        counts[m] += 1;
    }
    let expect = n as f64 / spec.k() as f64;
    for (i, c) in counts.iter().enumerate() {
        let rel = (*c as f64 - expect).abs() / expect;
        if rel > 0.03 {
            return Err(format!("mode {i} frequency off by {rel:.4}"));
        }
    }
    let z = crate::data::sample_prior(10_000, 10, &mut rng);
    let v = z.value();
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64;
    if mean.abs() > 0.02 || (var - 1.0).abs() > 0.02 {
        return Err(format!("prior mean {mean:.4} var {var:.4}"));
    }
    Ok(("mixture frequencies and prior moments in bounds".into(), 2))
}

fn prop_determinism(seed: u64) -> std::result::Result<(String, usize), String> {
    let mut cfg = isolation_cfg(Variant::Idvae, seed);
    cfg.epochs = 1;
    let (train, _) = load_data(&cfg).map_err(|e| e.to_string())?;
    let run = || -> std::result::Result<Vec<f32>, String> {
        let mut state = TrainState::new(&cfg, &train).map_err(|e| e.to_string())?;
        let batch = train.gather(&(0..16).collect::<Vec<_>>());
        for _ in 0..5 {
            state.train_step(&cfg, &batch).map_err(|e| e.to_string())?;
        }
        Ok(state.model.partition.all().flat_map(|p| p.tensor.value()).collect())
    };
    let a = run()?;
    let b = run()?;
    if a != b {
        return Err("two identical runs produced different parameters".into());
    }
    Ok(("bit-identical replay".into(), 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_filter_selects_subset() {
        let report = run_suite(Some("oracle.recons"), None);
        assert_eq!(report.cases.len(), 1);
        assert!(report.all_passed(), "{}", report.render());
    }

    #[test]
    fn failure_detail_is_reproducible_from_seed() {
        // same seed, same outcome
        let a = run_suite(Some("prop.kl_permutation"), Some(77));
        let b = run_suite(Some("prop.kl_permutation"), Some(77));
        assert_eq!(a.cases[0].passed, b.cases[0].passed);
        assert_eq!(a.cases[0].detail, b.cases[0].detail);
    }
}
