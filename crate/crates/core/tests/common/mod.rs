//! Oracles shared by several test targets.
#![allow(dead_code)]

use ldtts::acoustic::{AcousticDims, AcousticModel, LinguisticEncoder, Parameterization};
use ldtts::alignment::{upsample, upsample_backward, AlignmentPath, ConditionSeq, DurationModel, DurationTable, Projector, Trellis};
use ldtts::corpus::TokenSeq;
use ldtts::diffusion::{DiagGaussianSeq, LatentSeq};
use ldtts::nn::NetworkKind;
use ldtts::params::ParamStore;
use ldtts::rng::normal_matrix;
use ldtts::schedule::DiffusionSchedule;
use ldtts::vae::{Vae, VaeDims};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// `|a - n| / (|a| + |n|)` over the full flattened gradient, with central differences.
pub fn grad_error(params: &ParamStore, analytic: &ParamStore, f: impl Fn(&ParamStore) -> f64) -> f64 {
    let mut p = params.clone();
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let len = params.get(name).unwrap().len();
        for k in 0..len {
            let orig = p.get(name).unwrap().data[k];
            p.get_mut(name).unwrap().data[k] = orig + GRAD_EPS;
            let up = f(&p);
            p.get_mut(name).unwrap().data[k] = orig - GRAD_EPS;
            let down = f(&p);
            p.get_mut(name).unwrap().data[k] = orig;
            let num = (up - down) / (2.0 * GRAD_EPS);
            let ana = analytic.get(name).map(|t| t.data[k]).unwrap_or(0.0);
            diff += (num - ana) * (num - ana);
            norm_a += ana * ana;
            norm_n += num * num;
        }
    }
    let denom = norm_a.sqrt() + norm_n.sqrt();
    assert!(denom > 0.0, "gradient is identically zero");
    diff.sqrt() / denom
}

/// Moves zero-initialized layers off zero so every weight matters.
fn jitter(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, t) in params.iter_mut() {
        for v in t.data.iter_mut() {
            *v += 0.3 * rng.random_range(-1.0..1.0);
        }
    }
}

fn tiny_dims(network: NetworkKind) -> AcousticDims {
    AcousticDims {
        alphabet_size: 4,
        latent_dim: 2,
        cond_dim: 3,
        embed_dim: 3,
        encoder_hidden: 4,
        model_hidden: 5,
        time_embed_dim: 4,
        network,
    }
}

fn random_posterior(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> DiagGaussianSeq {
    let mean = normal_matrix(rng, frames, dim);
    let var = normal_matrix(rng, frames, dim).mapv(|v| 0.05 + 0.3 * v.abs());
    DiagGaussianSeq::new(mean, var).unwrap()
}

fn tiny_schedule() -> DiffusionSchedule {
    DiffusionSchedule::linear(20, 1e-3, 0.2).unwrap()
}

/// Largest relative error over `instances` random cases.
pub fn vae_grad(instances: u64) -> f64 {
    let vae = Vae::new(VaeDims {
        feat_dim: 3,
        latent_dim: 2,
        hidden: 4,
    });
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = vae.init(&mut rng);
            jitter(&mut params, &mut rng);
            let frames = rng.random_range(1..5);
            let x = normal_matrix(&mut rng, frames, 3);
            let noise = normal_matrix(&mut rng, frames, 2);
            let kl_weight = rng.random_range(0.01..1.5);
            let (_, grads) = vae.loss_and_grad(&params, x.view(), noise.view(), kl_weight).unwrap();
            grad_error(&params, &grads, |p| vae.loss_and_grad(p, x.view(), noise.view(), kl_weight).unwrap().0.total)
        })
        .fold(0.0, f64::max)
}

pub fn projector_grad(instances: u64) -> f64 {
    let proj = Projector::new(2, 5, 3);
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut params = ParamStore::new();
            proj.init(&mut params, &mut rng);
            jitter(&mut params, &mut rng);
            let tokens = rng.random_range(1..4);
            let durations = DurationTable::new((0..tokens).map(|_| rng.random_range(1..4)).collect()).unwrap();
            let zy = LatentSeq(normal_matrix(&mut rng, tokens, 3));
            let zx = LatentSeq(normal_matrix(&mut rng, durations.total(), 2));
            let path = durations.to_path();
            let (_, grads) = proj.loss_and_grad(&params, &zy, &zx, &path).unwrap();
            grad_error(&params, &grads, |p| proj.loss(p, &zy, &zx, &path).unwrap())
        })
        .fold(0.0, f64::max)
}

pub fn duration_grad(instances: u64) -> f64 {
    let model = DurationModel::new(3, 4);
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut params = ParamStore::new();
            model.init(&mut params, &mut rng);
            jitter(&mut params, &mut rng);
            let tokens = rng.random_range(1..6);
            let zy = normal_matrix(&mut rng, tokens, 3);
            let d = DurationTable::new((0..tokens).map(|_| rng.random_range(1..8)).collect()).unwrap();
            let (_, grads) = model.loss_and_grad(&params, zy.view(), &d).unwrap();
            grad_error(&params, &grads, |p| model.loss_and_grad(p, zy.view(), &d).unwrap().0)
        })
        .fold(0.0, f64::max)
}

pub fn acoustic_grad(parameterization: Parameterization, network: NetworkKind, instances: u64) -> f64 {
    let dims = tiny_dims(network);
    let model = AcousticModel::new(dims, parameterization);
    let schedule = tiny_schedule();
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let mut params = ParamStore::new();
            model.init(&mut params, &mut rng);
            jitter(&mut params, &mut rng);
            let frames = rng.random_range(1..5);
            let t = rng.random_range(1..=schedule.steps());
            let vae_out = random_posterior(&mut rng, frames, dims.latent_dim);
            let cond = ConditionSeq(normal_matrix(&mut rng, frames, dims.cond_dim));
            let na = LatentSeq(normal_matrix(&mut rng, frames, dims.latent_dim));
            let nb = LatentSeq(normal_matrix(&mut rng, frames, dims.latent_dim));
            let scale = rng.random_range(0.5..3.0);
            let mut grads = ParamStore::new();
            let (loss, _) = model
                .diffusion_loss_and_grad(&params, &vae_out, &cond, &schedule, t, &na, &nb, scale, &mut grads)
                .unwrap();
            let direct = model.diffusion_step_loss(&params, &vae_out, &cond, &schedule, t, &na, &nb).unwrap() / scale;
            assert!((loss - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            grad_error(&params, &grads, |p| {
                model.diffusion_step_loss(p, &vae_out, &cond, &schedule, t, &na, &nb).unwrap() / scale
            })
        })
        .fold(0.0, f64::max)
}

pub fn mse_grad(instances: u64) -> f64 {
    let dims = tiny_dims(NetworkKind::Frame);
    let model = AcousticModel::new(dims, Parameterization::Data);
    let schedule = tiny_schedule();
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
            let mut params = ParamStore::new();
            model.init(&mut params, &mut rng);
            jitter(&mut params, &mut rng);
            let frames = rng.random_range(1..5);
            let vae_out = random_posterior(&mut rng, frames, dims.latent_dim);
            let cond = ConditionSeq(normal_matrix(&mut rng, frames, dims.cond_dim));
            let mut grads = ParamStore::new();
            model.mse_loss_and_grad(&params, &vae_out, &cond, &schedule, 2.0, &mut grads).unwrap();
            grad_error(&params, &grads, |p| model.mse_step_loss(p, &vae_out, &cond, &schedule).unwrap() / 2.0)
        })
        .fold(0.0, f64::max)
}

/// Encoder, upsampling and acoustic model chained as in stage-two training.
pub fn encoder_grad(instances: u64) -> f64 {
    let dims = tiny_dims(NetworkKind::Frame);
    let model = AcousticModel::new(dims, Parameterization::Data);
    let encoder = LinguisticEncoder::new(&dims);
    let schedule = tiny_schedule();
    (0..instances)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let mut params = ParamStore::new();
            model.init(&mut params, &mut rng);
            encoder.init(&mut params, &mut rng);
            jitter(&mut params, &mut rng);
            let n_tok = rng.random_range(1..4);
            let tokens = TokenSeq((0..n_tok).map(|_| rng.random_range(0..dims.alphabet_size)).collect());
            let durations = DurationTable::new((0..n_tok).map(|_| rng.random_range(1..3)).collect()).unwrap();
            let frames = durations.total();
            let t = rng.random_range(1..=schedule.steps());
            let vae_out = random_posterior(&mut rng, frames, dims.latent_dim);
            let na = LatentSeq(normal_matrix(&mut rng, frames, dims.latent_dim));
            let nb = LatentSeq(normal_matrix(&mut rng, frames, dims.latent_dim));

            let mut grads = ParamStore::new();
            let (zy, cache) = encoder.forward(&params, &tokens).unwrap();
            let cond = upsample(zy.view(), &durations).unwrap();
            let (_, d_cond) = model
                .diffusion_loss_and_grad(&params, &vae_out, &cond, &schedule, t, &na, &nb, 1.0, &mut grads)
                .unwrap();
            let d_zy = upsample_backward(d_cond.view(), &durations);
            encoder.backward(&params, &cache, d_zy.view(), &mut grads).unwrap();

            grad_error(&params, &grads, |p| {
                let zy = encoder.encode(p, &tokens).unwrap();
                let cond = upsample(zy.view(), &durations).unwrap();
                model.diffusion_step_loss(p, &vae_out, &cond, &schedule, t, &na, &nb).unwrap()
            })
        })
        .fold(0.0, f64::max)
}

/// Every monotonic path, by choosing the frames where the token advances.
pub fn all_paths(tokens: usize, frames: usize) -> Vec<AlignmentPath> {
    fn rec(start: usize, left: usize, frames: usize, picked: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(picked.clone());
            return;
        }
        for f in start..frames {
            if frames - f < left {
                break;
            }
            picked.push(f);
            rec(f + 1, left - 1, frames, picked, out);
            picked.pop();
        }
    }
    let mut sets = Vec::new();
    rec(1, tokens - 1, frames, &mut Vec::new(), &mut sets);
    sets.into_iter()
        .map(|advances| {
            let mut assign = Vec::with_capacity(frames);
            let mut i = 0;
            for f in 0..frames {
                if advances.contains(&f) {
                    i += 1;
                }
                assign.push(i);
            }
            AlignmentPath { assign }
        })
        .collect()
}

/// Minimum cost and all paths that reach it.
pub fn brute_force(trellis: &Trellis) -> (f64, Vec<AlignmentPath>) {
    let paths = all_paths(trellis.tokens(), trellis.frames());
    let best = paths.iter().map(|p| trellis.path_cost(p)).fold(f64::INFINITY, f64::min);
    let optimal = paths.into_iter().filter(|p| trellis.path_cost(p) == best).collect();
    (best, optimal)
}

/// Up to 6 tokens and 10 frames; small integer costs when `integer`, to force ties.
pub fn random_trellis(rng: &mut ChaCha8Rng, integer: bool) -> Trellis {
    let n = rng.random_range(1..=6);
    let f = rng.random_range(n..=10);
    let cost = Array2::from_shape_simple_fn((n, f), || {
        if integer {
            rng.random_range(0..3) as f64
        } else {
            rng.random_range(0.0..4.0)
        }
    });
    Trellis { cost }
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value against `cdf`.
pub fn ks_test(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
