//! Recovers hidden durations with monotonic alignment search.

use ldtts::alignment::{build_trellis, durations_from_path, monotonic_alignment_search, upsample, DurationTable};
use ldtts::rng::normal_matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ldtts::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = DurationTable::new(vec![3, 1, 4, 2, 5])?;
    let zy = normal_matrix(&mut rng, truth.0.len(), 4);
    let frames = upsample(zy.view(), &truth)?.0 + normal_matrix(&mut rng, truth.total(), 4).mapv(|v| 0.2 * v);

    let trellis = build_trellis(zy.view(), frames.view());
    let path = monotonic_alignment_search(&trellis)?;
    let found = durations_from_path(&path);
    println!("true durations  {:?}", truth.0);
    println!("found durations {:?}", found.0);
    println!("path cost {:.4}, true-path cost {:.4}", trellis.path_cost(&path), trellis.path_cost(&truth.to_path()));
    Ok(())
}
