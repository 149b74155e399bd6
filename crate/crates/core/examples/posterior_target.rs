//! How the reverse-step target moves from the VAE posterior at t=1 towards
//! the plain diffusion posterior at large t.

use ldtts::diffusion::{posterior_latent_target, LatentSeq};
use ldtts::schedule::DiffusionSchedule;
use ndarray::array;

fn main() -> ldtts::Result<()> {
    let s = DiffusionSchedule::linear(100, 1e-4, 0.02)?;
    let mu = array![[0.7]];
    let sigma2 = array![[0.02]];
    let xt = LatentSeq(array![[-0.4]]);
    println!("encoder posterior N(0.7, 0.02), x_t = -0.4");
    println!("{:>4} {:>10} {:>10}", "t", "mean", "var");
    for t in [1, 2, 3, 10, 50, 100] {
        let q = posterior_latent_target(&s, mu.view(), sigma2.view(), &xt, t)?;
        println!("{t:>4} {:>10.5} {:>10.5}", q.mean[[0, 0]], q.var[[0, 0]]);
    }
    Ok(())
}
