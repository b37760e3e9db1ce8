//! Central finite-difference verification of every differentiable op and
//! of the composite blocks, in `f64`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::derive_seed;
use crate::error::Result;
use crate::model::network::cdc_tape;
use crate::model::{prepare_inputs, Graph, ModelConfig, ModelParams};
use crate::tensor::ops::RunningStats;
use crate::tensor::{Conv2dSpec, Mode, Tape, Tensor, Var};
use crate::wavelet::wtconv_tape;

pub const STEP: f64 = 1e-5;
/// Fallback steps for coordinates that miss at `STEP`. A ReLU or max-pool
/// kink lying within `STEP` of the probe point spoils the central
/// difference, and a narrower window steps past it.
pub const FALLBACK_STEPS: [f64; 2] = [1e-6, 1e-7];
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error: gradients smaller than this
/// are compared absolutely (scaled by the floor), because their central
/// differences are dominated by round-off.
pub const FLOOR: f64 = 1e-3;
/// Coordinates probed per tensor.
pub const PROBES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub passed: bool,
}

type Tensors = BTreeMap<String, Tensor<f64>>;

/// Builds a fresh tape from named tensors, returning the scalar loss and
/// the leaves the tensors were bound to.
type Builder<'a> = dyn Fn(&Tensors) -> Result<(Tape<f64>, Var, BTreeMap<String, Var>)> + 'a;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn loss_of(build: &Builder<'_>, t: &Tensors) -> Result<f64> {
    let (tape, loss, _) = build(t)?;
    Ok(tape.value(loss).data()[0])
}

fn central(build: &Builder<'_>, probe: &mut Tensors, name: &str, i: usize, orig: f64, h: f64) -> Result<f64> {
    probe.get_mut(name).expect("same keys").data_mut()[i] = orig + h;
    let up = loss_of(build, probe)?;
    probe.get_mut(name).expect("same keys").data_mut()[i] = orig - h;
    let down = loss_of(build, probe)?;
    probe.get_mut(name).expect("same keys").data_mut()[i] = orig;
    Ok((up - down) / (2.0 * h))
}

/// Compare analytic and central-difference gradients on sampled coordinates
/// of every tensor in `tensors`.
pub fn check_case(name: &str, tensors: Tensors, build: &Builder<'_>, seed: u64) -> Result<CaseReport> {
    let (tape, loss, vars) = build(&tensors)?;
    let mut grads = tape.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_err, mut worst, mut checked) = (0.0f64, String::new(), 0);
    let mut probe = tensors.clone();
    for (tname, t) in &tensors {
        let analytic = match vars.get(tname).and_then(|&v| grads.take(v)) {
            Some(g) => g,
            None => Tensor::zeros(t.shape()),
        };
        let picks: Vec<usize> = if t.len() <= PROBES {
            (0..t.len()).collect()
        } else {
            (0..PROBES).map(|_| rng.random_range(0..t.len())).collect()
        };
        for i in picks {
            let orig = t.data()[i];
            let a = analytic.data()[i];
            let mut best = (f64::INFINITY, 0.0);
            for h in std::iter::once(STEP).chain(FALLBACK_STEPS) {
                let numeric = central(build, &mut probe, tname, i, orig, h)?;
                let err = relative_error(a, numeric);
                if err < best.0 {
                    best = (err, numeric);
                }
                if err < TOLERANCE {
                    break;
                }
            }
            let (err, numeric) = best;
            checked += 1;
            if err > max_err || worst.is_empty() {
                max_err = max_err.max(err);
                worst = format!("{tname}[{i}]: analytic {a:.6e} numeric {numeric:.6e}");
            }
        }
    }
    Ok(CaseReport {
        name: name.to_string(),
        checked,
        max_rel_err: max_err,
        passed: max_err < TOLERANCE,
        worst,
    })
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Single-op case: every input is a parameter leaf; the loss is the output
/// projected on a fixed random tensor.
fn op_case(
    name: &str,
    inputs: Vec<(&str, Tensor<f64>)>,
    seed: u64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<CaseReport> {
    let order: Vec<String> = inputs.iter().map(|(n, _)| n.to_string()).collect();
    let tensors: Tensors = inputs.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    let proj_seed = derive_seed(seed, &[0x50524f4a]);
    let build = |t: &Tensors| -> Result<(Tape<f64>, Var, BTreeMap<String, Var>)> {
        let mut tape = Tape::new();
        let mut vars = BTreeMap::new();
        let leaves: Vec<Var> = order
            .iter()
            .map(|n| {
                let v = tape.param(t[n].clone());
                vars.insert(n.clone(), v);
                v
            })
            .collect();
        let out = f(&mut tape, &leaves)?;
        let shape = tape.value(out).shape().to_vec();
        let r = tape.constant(rand_t(&mut ChaCha8Rng::seed_from_u64(proj_seed), &shape));
        let p = tape.mul(out, r)?;
        let loss = tape.sum(p);
        Ok((tape, loss, vars))
    };
    check_case(name, tensors, &build, seed)
}

/// Every primitive of the tape, at one seed.
pub fn op_suite(seed: u64) -> Result<Vec<CaseReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| rand_t(&mut rng, s);
    let mut out = Vec::new();
    let s = seed;
    out.push(op_case("add", vec![("a", r(&[2, 3])), ("b", r(&[2, 3]))], s, |t, v| t.add(v[0], v[1]))?);
    out.push(op_case("sub", vec![("a", r(&[2, 3])), ("b", r(&[2, 3]))], s, |t, v| t.sub(v[0], v[1]))?);
    out.push(op_case("mul", vec![("a", r(&[2, 3])), ("b", r(&[2, 3]))], s, |t, v| t.mul(v[0], v[1]))?);
    out.push(op_case("scale", vec![("a", r(&[5]))], s, |t, v| Ok(t.scale(v[0], -1.7)))?);
    out.push(op_case("sum", vec![("a", r(&[2, 2, 2]))], s, |t, v| Ok(t.sum(v[0])))?);
    out.push(op_case("relu", vec![("a", r(&[3, 4]))], s, |t, v| Ok(t.relu(v[0])))?);
    out.push(op_case("sigmoid", vec![("a", r(&[6]).scale(3.0))], s, |t, v| Ok(t.sigmoid(v[0])))?);
    out.push(op_case(
        "conv2d",
        vec![("x", r(&[2, 3, 6, 5])), ("w", r(&[4, 3, 3, 3])), ("b", r(&[4]))],
        s,
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same(3, 3)),
    )?);
    out.push(op_case(
        "conv2d_stride2",
        vec![("x", r(&[2, 2, 7, 8])), ("w", r(&[3, 2, 3, 3]))],
        s,
        |t, v| t.conv2d(v[0], v[1], None, Conv2dSpec::new(2, 1, 1)),
    )?);
    out.push(op_case(
        "conv2d_depthwise",
        vec![("x", r(&[1, 4, 5, 5])), ("w", r(&[4, 1, 3, 3])), ("b", r(&[4]))],
        s,
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same(3, 3).with_groups(4)),
    )?);
    out.push(op_case(
        "conv2d_1x3",
        vec![("x", r(&[1, 2, 4, 6])), ("w", r(&[2, 2, 1, 3]))],
        s,
        |t, v| t.conv2d(v[0], v[1], None, Conv2dSpec::same(1, 3)),
    )?);
    let stats = RunningStats {
        mean: r(&[3]).scale(0.3),
        var: r(&[3]).map(|v| v.abs() + 0.5),
    };
    let st = stats.clone();
    out.push(op_case(
        "batch_norm_train",
        vec![("x", r(&[4, 3, 3, 2])), ("g", r(&[3])), ("b", r(&[3]))],
        s,
        move |t, v| t.batch_norm(v[0], v[1], v[2], &st, Mode::Train, "bn"),
    )?);
    out.push(op_case(
        "batch_norm_eval",
        vec![("x", r(&[2, 3, 2, 2])), ("g", r(&[3])), ("b", r(&[3]))],
        s,
        move |t, v| t.batch_norm(v[0], v[1], v[2], &stats, Mode::Eval, "bn"),
    )?);
    out.push(op_case(
        "layer_norm",
        vec![("x", r(&[2, 5, 2, 3])), ("g", r(&[5])), ("b", r(&[5]))],
        s,
        |t, v| t.layer_norm(v[0], v[1], v[2]),
    )?);
    out.push(op_case("max_pool2d", vec![("x", r(&[2, 2, 4, 6]))], s, |t, v| t.max_pool2d(v[0]))?);
    out.push(op_case("global_avg_pool", vec![("x", r(&[2, 3, 3, 4]))], s, |t, v| {
        t.global_avg_pool(v[0])
    })?);
    out.push(op_case(
        "linear",
        vec![("x", r(&[3, 5])), ("w", r(&[4, 5])), ("b", r(&[4]))],
        s,
        |t, v| t.linear(v[0], v[1], Some(v[2])),
    )?);
    out.push(op_case("reshape", vec![("x", r(&[2, 6]))], s, |t, v| t.reshape(v[0], &[3, 4]))?);
    out.push(op_case(
        "concat",
        vec![("a", r(&[2, 1, 2, 2])), ("b", r(&[2, 3, 2, 2]))],
        s,
        |t, v| t.concat(&[v[0], v[1], v[0]]),
    )?);
    out.push(op_case("narrow", vec![("x", r(&[2, 5, 2, 2]))], s, |t, v| t.narrow(v[0], 1, 3))?);
    out.push(op_case("dwt2", vec![("x", r(&[2, 2, 4, 6]))], s, |t, v| t.dwt2(v[0]))?);
    out.push(op_case("idwt2", vec![("x", r(&[1, 8, 3, 2]))], s, |t, v| t.idwt2(v[0]))?);
    out.push(op_case("fft2d", vec![("x", r(&[2, 2, 4, 6]))], s, |t, v| t.fft2d(v[0]))?);
    out.push(op_case("ifft2d_real", vec![("x", r(&[1, 4, 4, 3]))], s, |t, v| t.ifft2d_real(v[0]))?);
    let labels = [0.0, 1.0, 1.0, 0.0, 1.0];
    out.push(op_case("bce_with_logits", vec![("z", r(&[5]).scale(4.0))], s, move |t, v| {
        t.bce_with_logits(v[0], &labels)
    })?);
    out.push(op_case(
        "cdc_conv",
        vec![("x", r(&[2, 3, 5, 5])), ("w", r(&[2, 3, 3, 3])), ("b", r(&[2]))],
        s,
        |t, v| cdc_tape(t, v[0], v[1], Some(v[2])),
    )?);
    out.push(op_case(
        "wtconv",
        vec![("x", r(&[1, 2, 8, 8])), ("base", r(&[2, 1, 3, 3])), ("b0", r(&[8, 1, 3, 3])), ("b1", r(&[8, 1, 3, 3]))],
        s,
        |t, v| wtconv_tape(t, v[0], v[1], &[v[2], v[3]]),
    )?);
    Ok(out)
}

fn model_case(
    name: &str,
    params: &ModelParams<f64>,
    input: Option<Tensor<f64>>,
    mode: Mode,
    seed: u64,
    f: impl Fn(&mut Graph<'_, f64>, Option<Var>) -> Result<Var>,
) -> Result<CaseReport> {
    const INPUT: &str = "<input>";
    let mut tensors = params.params.clone();
    if let Some(x) = input {
        tensors.insert(INPUT.to_string(), x);
    }
    let proj_seed = derive_seed(seed, &[0x50524f4a]);
    let build = |t: &Tensors| -> Result<(Tape<f64>, Var, BTreeMap<String, Var>)> {
        let mut p = params.clone();
        for (k, v) in t {
            if k != INPUT {
                p.params.insert(k.clone(), v.clone());
            }
        }
        let mut g = Graph::new(&p, mode, true);
        let x = t.get(INPUT).map(|x| g.tape.param(x.clone()));
        let out = f(&mut g, x)?;
        let (mut tape, mut vars) = g.into_parts();
        if let Some(x) = x {
            vars.insert(INPUT.to_string(), x);
        }
        let loss = if tape.value(out).len() == 1 {
            out
        } else {
            let shape = tape.value(out).shape().to_vec();
            let r = tape.constant(rand_t(&mut ChaCha8Rng::seed_from_u64(proj_seed), &shape));
            let pr = tape.mul(out, r)?;
            tape.sum(pr)
        };
        Ok((tape, loss, vars))
    };
    check_case(name, tensors, &build, seed)
}

/// Stem, spatial block, frequency block and the whole network at
/// `base_scale` 32 with a narrow width.
pub fn block_suite(seed: u64) -> Result<Vec<CaseReport>> {
    let cfg = ModelConfig {
        base_channels: 4,
        ..ModelConfig::with_scale(32)
    };
    let mut params = ModelParams::<f64>::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    // nonzero biases and affine terms so their gradients are exercised
    for (name, t) in params.params.iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            *t = Tensor::uniform(t.shape(), -0.2, 0.2, &mut rng);
        }
    }
    for s in params.stats.values_mut() {
        s.var = s.var.map(|v| v + 0.5);
    }
    let mut out = Vec::new();
    let x = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    out.push(model_case("stem", &params, Some(x), Mode::Train, seed, |g, x| {
        g.stem(x.expect("input"), "stem.base")
    })?);
    let f = Tensor::uniform(&[2, 4, 8, 8], -1.0, 1.0, &mut rng);
    out.push(model_case("spatial_process_block", &params, Some(f.clone()), Mode::Train, seed, |g, x| {
        g.spb(x.expect("input"), "spb1")
    })?);
    out.push(model_case("frequency_process_block", &params, Some(f), Mode::Train, seed, |g, x| {
        g.fpb(x.expect("input"), "fpb0")
    })?);
    let imgs: Vec<_> = (0..2)
        .map(|i| crate::data::toy_image(32, seed, crate::data::ToySplit::Train, i == 1, 0))
        .collect::<Result<_>>()?;
    let refs: Vec<_> = imgs.iter().collect();
    let inputs = prepare_inputs::<f64>(&refs, &cfg)?;
    out.push(model_case("network", &params, None, Mode::Train, seed, move |g, _| {
        let z = g.forward(&inputs)?;
        g.tape.bce_with_logits(z, &[0.0, 1.0])
    })?);
    Ok(out)
}

/// All suites over `seeds` consecutive seeds starting at `seed`.
pub fn run_all(seed: u64, seeds: u64) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for s in seed..seed + seeds {
        for mut c in op_suite(s)?.into_iter().chain(block_suite(s)?) {
            c.name = format!("{} (seed {s})", c.name);
            out.push(c);
        }
    }
    Ok(out)
}
