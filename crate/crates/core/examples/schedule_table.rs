//! Prints the linear noise schedule and the variance interpolation at a few steps.

use ldtts::schedule::DiffusionSchedule;

fn main() -> ldtts::Result<()> {
    let s = DiffusionSchedule::linear(100, 1e-4, 0.02)?;
    let sigma2 = 0.05;
    println!("{:>4} {:>10} {:>10} {:>10} {:>12}", "t", "beta", "alpha_bar", "beta_bar", "interp(0.05)");
    for t in [1, 2, 5, 10, 25, 50, 75, 100] {
        println!(
            "{t:>4} {:>10.6} {:>10.6} {:>10.6} {:>12.6}",
            s.beta(t),
            s.alpha_bar(t),
            s.beta_bar(t),
            s.interpolate(sigma2, t)
        );
    }
    Ok(())
}
