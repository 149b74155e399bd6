//! Trains the frame VAE on a small corpus and reports held-out reconstruction.

use ldtts::analysis::lt_diagnostic_for;
use ldtts::config::RunConfig;
use ldtts::diffusion::LatentSeq;
use ldtts::rng::{substream, VAE_STREAM};
use ldtts::system::windowed_means;
use ldtts::vae::{recon_error, train_vae, Vae};

fn main() -> ldtts::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.corpus.n_train = 150;
    cfg.corpus.n_test = 20;
    let corpus = cfg.generate_corpus()?;
    let vae = Vae::new(cfg.vae_dims);
    let trained = train_vae(&vae, &corpus.train, &cfg.vae, &mut substream(cfg.seed, VAE_STREAM))?;

    let w = windowed_means(&trained.history, 20);
    println!("loss per step: first window {:.4}, last window {:.4}", w[0], w[w.len() - 1]);
    let mut total = 0.0;
    let mut frames = 0;
    for u in &corpus.test {
        let enc = vae.encode(&trained.params, &u.features)?;
        let x = vae.decode(&trained.params, &LatentSeq(enc.mean))?;
        total += recon_error(x.view(), u.features.view())?;
        frames += u.features.frames();
    }
    println!("held-out reconstruction error per frame {:.5}", total / frames as f64);
    let lt = lt_diagnostic_for(&vae, &trained.params, &corpus.test, &cfg.schedule.build()?)?;
    println!("prior mismatch at t=T, nats per frame {lt:.2e}");
    Ok(())
}
