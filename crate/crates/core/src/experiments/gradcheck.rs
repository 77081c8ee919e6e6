use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::ctrl::{AffineMean, TrainableMean};
use crate::error::Result;
use crate::experiments::Task;
use crate::nn::{check_mlp, check_vjp, Activation, GradCheck, GradCheckConfig, Mlp, MlpInput, MlpSpec};
use crate::rng::{self, StreamRng};
use crate::score::{MeanField, ScoreModel, ScoreNet};
use crate::value::{ValueArch, ValueNet};

const BATCH: usize = 8;

fn flat(x: ArrayView2<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn unflat(x: &[f64], d: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((x.len() / d, d), x).expect("whole rows")
}

fn times(r: &mut StreamRng, lo: f64, hi: f64) -> Vec<f64> {
    (0..BATCH).map(|_| r.gen_range(lo..hi)).collect()
}

/// Reverse-clock mean and forward-clock score of `net`, with respect to its
/// parameters and its input.
fn score_checks(name: &str, net: &ScoreNet, cfg: &GradCheckConfig, r: &mut StreamRng) -> Result<Vec<GradCheck>> {
    let d = net.dim();
    let ctx = net.spec().context_dim;
    let t = times(r, 0.02, 0.98);
    let x = rng::normal_matrix(r, BATCH, d);
    let class: Vec<usize> = (0..BATCH).map(|i| if ctx > 0 { i % ctx } else { 0 }).collect();
    let p0 = net.params().as_slice().to_vec();
    let with = |p: &[f64]| -> Result<ScoreNet> {
        let mut n = net.clone();
        n.set_params(p)?;
        Ok(n)
    };
    let mean_params = check_vjp(
        &format!("{name} mean params"),
        &p0,
        cfg,
        |p| with(p)?.mean_batch(&t, x.view(), &class),
        |c| {
            let mut g = vec![0.0; p0.len()];
            net.mean_param_vjp(&t, x.view(), &class, c, &mut g)?;
            Ok(g)
        },
    )?;
    let score_input = check_vjp(
        &format!("{name} score input"),
        &flat(x.view()),
        cfg,
        |xv| net.score_batch(&t, unflat(xv, d), &class),
        |c| Ok(flat(net.score_input_vjp(&t, x.view(), &class, c)?.view())),
    )?;
    Ok(vec![mean_params, score_input])
}

fn value_checks<D: ScoreModel + Clone>(name: &str, vnet: &ValueNet<D>, cfg: &GradCheckConfig, r: &mut StreamRng) -> Result<Vec<GradCheck>> {
    let d = vnet.reward.dim();
    let t = times(r, 0.05, 0.95);
    let x = rng::normal_matrix(r, BATCH, d);
    let class = vec![0; BATCH];
    let column = |v: Vec<f64>| Array2::from_shape_vec((v.len(), 1), v).expect("column");
    let p0 = vnet.params().as_slice().to_vec();
    let params = check_vjp(
        &format!("{name} params"),
        &p0,
        cfg,
        |p| {
            let mut v = vnet.clone();
            v.params_mut().as_mut_slice().copy_from_slice(p);
            Ok(column(v.value_batch(&t, x.view(), &class)?))
        },
        |c| vnet.param_vjp(&t, x.view(), &class, &c.column(0).to_vec()),
    )?;
    let input = check_vjp(
        &format!("{name} input"),
        &flat(x.view()),
        cfg,
        |xv| Ok(column(vnet.value_batch(&t, unflat(xv, d), &class)?)),
        |c| {
            let mut g = vnet.grad_x_batch(&t, x.view(), &class)?;
            for (mut row, &ci) in g.rows_mut().into_iter().zip(c.column(0)) {
                row *= ci;
            }
            Ok(flat(g.view()))
        },
    )?;
    Ok(vec![params, input])
}

/// Finite-difference checks of the analytic derivatives of every network
/// class. Value networks sit on top of `trained` with random corrector
/// parameters.
pub fn network_gradchecks(task: &Task, trained: &ScoreNet, cfg: &GradCheckConfig) -> Result<Vec<GradCheck>> {
    let mut r = rng::stream(cfg.seed, 30);
    let mut out = Vec::new();
    let d = task.data.dim();

    for act in [Activation::Silu, Activation::Tanh, Activation::Identity] {
        for ctx in [0, 3] {
            let mut spec = MlpSpec::small(d, 3);
            spec.activation = act;
            spec.context_dim = ctx;
            let mlp = Mlp::new(spec)?;
            let p = mlp.init_params(&mut r);
            let t = times(&mut r, 0.0, 1.0);
            let x = rng::normal_matrix(&mut r, BATCH, d);
            let class: Vec<usize> = (0..BATCH).map(|i| i % 3).collect();
            let input = MlpInput::new(&t, x.view(), if ctx > 0 { &class } else { &[] });
            out.extend(check_mlp(&format!("mlp {act:?} ctx {ctx}"), &mlp, p.as_slice(), input, cfg)?);
        }
    }

    let mut cond_spec = task.score_net.clone();
    cond_spec.context_dim = 3;
    for (name, spec) in [("score random", task.score_net.clone()), ("score conditional", cond_spec)] {
        let params = Mlp::new(spec.clone())?.init_params(&mut r);
        let net = ScoreNet::new(spec, params, task.schedule.horizon)?;
        out.extend(score_checks(name, &net, cfg, &mut r)?);
    }
    out.extend(score_checks("score trained", trained, cfg, &mut r)?);

    let affine = AffineMean::new(-0.7, vec![0.3; d])?;
    let t = times(&mut r, 0.0, 1.0);
    let x = rng::normal_matrix(&mut r, BATCH, d);
    let class = vec![0; BATCH];
    out.push(check_vjp(
        "affine mean params",
        affine.param_values(),
        cfg,
        |p| AffineMean::new(p[0], p[1..].to_vec())?.mean_batch(&t, x.view(), &class),
        |c| {
            let mut g = vec![0.0; affine.n_params()];
            affine.mean_param_vjp(&t, x.view(), &class, c, &mut g)?;
            Ok(g)
        },
    )?);

    let corrector = MlpSpec::small(d, 1);
    for (name, arch) in ValueArch::ablation() {
        let params = Mlp::new(corrector.clone())?.init_params(&mut r);
        let vnet = ValueNet::new(task.reward.clone(), task.schedule, trained.clone(), arch, corrector.clone(), params)?;
        out.extend(value_checks(&format!("value {name}"), &vnet, cfg, &mut r)?);
    }
    Ok(out)
}
