//! Ancestral sampling with a model that knows the target exactly.
//!
//! With the model returning the true posterior parameters, the sampler should
//! reproduce `N(mu, sigma2)` in both parameterizations.

use ldtts::acoustic::{sample_latents_with, FinalStep, ModelFunctionOutput, Parameterization};
use ldtts::rng::{substream, SAMPLING_STREAM};
use ldtts::schedule::DiffusionSchedule;
use ndarray::Array2;

fn main() -> ldtts::Result<()> {
    let s = DiffusionSchedule::linear(100, 1e-4, 0.02)?;
    let (mu, sigma2) = (0.7f64, 0.3f64);
    for p in [Parameterization::Data, Parameterization::Noise] {
        let model = |x: &ldtts::diffusion::LatentSeq, t: usize| {
            let head = match p {
                Parameterization::Data => x.0.mapv(|_| mu),
                Parameterization::Noise => {
                    let ab = s.alpha_bar(t);
                    x.0.mapv(|v| (v - ab.sqrt() * mu) / (1.0 - ab).sqrt())
                }
            };
            Ok(ModelFunctionOutput {
                logvar_pred: Array2::from_elem(head.dim(), sigma2.ln()),
                mu_pred: head,
            })
        };
        let x = sample_latents_with(model, 20_000, 1, &s, p, FinalStep::Sample, &mut substream(0, SAMPLING_STREAM))?;
        let n = x.0.len() as f64;
        let m = x.0.sum() / n;
        let v = x.0.mapv(|z| (z - m) * (z - m)).sum() / (n - 1.0);
        println!("{p:?}: sample mean {m:.4} (target {mu}), variance {v:.4} (target {sigma2})");
    }
    Ok(())
}
