//! Alignment between token-rate and frame-rate latent sequences.
//!
//! A projection `g` maps acoustic latents into the linguistic latent space. Its
//! training treats both latent sequences as constants, so only the projection
//! weights move. The squared distances between the two sequences form a
//! trellis, and the least-cost monotonic path through it yields durations.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::LatentSeq;
use crate::error::{Error, Result};
use crate::nn::{Mlp, Momentum};
use crate::params::ParamStore;

/// Frame-rate condition obtained by upsampling token-rate latents.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSeq(pub Array2<f64>);

impl ConditionSeq {
    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// Squared distances, `[tokens x frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trellis {
    pub cost: Array2<f64>,
}

impl Trellis {
    pub fn tokens(&self) -> usize {
        self.cost.nrows()
    }

    pub fn frames(&self) -> usize {
        self.cost.ncols()
    }

    /// Cost of a path, accumulated frame by frame.
    pub fn path_cost(&self, path: &AlignmentPath) -> f64 {
        path.assign
            .iter()
            .enumerate()
            .fold(0.0, |acc, (f, &i)| acc + self.cost[[i, f]])
    }
}

/// Token index for every frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub assign: Vec<usize>,
}

impl AlignmentPath {
    /// Checks monotonicity, start at token 0, end at the last token and unit steps.
    pub fn validate(&self, tokens: usize) -> Result<()> {
        let a = &self.assign;
        if tokens == 0 || a.is_empty() {
            return Err(Error::Alignment("empty path".into()));
        }
        if a[0] != 0 {
            return Err(Error::Alignment("path must start at token 0".into()));
        }
        if *a.last().unwrap() != tokens - 1 {
            return Err(Error::Alignment(format!("path must end at token {}", tokens - 1)));
        }
        if a.windows(2).any(|w| w[1] != w[0] && w[1] != w[0] + 1) {
            return Err(Error::Alignment("path must stay or advance by one token".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.assign.len()
    }
}

/// Frames per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationTable(pub Vec<usize>);

impl DurationTable {
    pub fn new(durations: Vec<usize>) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::Duration("no tokens".into()));
        }
        if durations.contains(&0) {
            return Err(Error::Duration("every token needs at least one frame".into()));
        }
        Ok(Self(durations))
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Path that assigns `durations[i]` consecutive frames to token `i`.
    pub fn to_path(&self) -> AlignmentPath {
        let assign = self
            .0
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
            .collect();
        AlignmentPath { assign }
    }

    /// Start frame of each token.
    pub fn starts(&self) -> Vec<usize> {
        self.0
            .iter()
            .scan(0, |acc, &d| {
                let s = *acc;
                *acc += d;
                Some(s)
            })
            .collect()
    }
}

/// Spreads `frames` as evenly as possible over `tokens`.
pub fn uniform_durations(tokens: usize, frames: usize) -> Result<DurationTable> {
    if tokens == 0 || tokens > frames {
        return Err(Error::Duration(format!("cannot spread {frames} frames over {tokens} tokens")));
    }
    let base = frames / tokens;
    let extra = frames % tokens;
    DurationTable::new((0..tokens).map(|i| base + usize::from(i < extra)).collect())
}

/// `cost[i][f] = |zy[i] - gzx[f]|^2`.
pub fn build_trellis(zy: ArrayView2<f64>, gzx: ArrayView2<f64>) -> Trellis {
    let mut cost = Array2::zeros((zy.nrows(), gzx.nrows()));
    for (i, y) in zy.outer_iter().enumerate() {
        for (f, g) in gzx.outer_iter().enumerate() {
            cost[[i, f]] = y.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    Trellis { cost }
}

/// Least-total-cost monotonic path that visits every token.
///
/// `acc[i][f]` is the best cost of frames `0..=f` ending on token `i`; each
/// frame either stays on the previous frame's token or advances by one. Among
/// equal-cost paths, walking forward in time keeps the current token as long as
/// possible, so token transitions land on the latest frame.
pub fn monotonic_alignment_search(trellis: &Trellis) -> Result<AlignmentPath> {
    let (n, frames) = trellis.cost.dim();
    if n == 0 || frames == 0 {
        return Err(Error::Alignment("empty trellis".into()));
    }
    if n > frames {
        return Err(Error::Alignment(format!("{n} tokens cannot fit into {frames} frames")));
    }
    let c = &trellis.cost;
    let mut acc = Array2::from_elem((n, frames), f64::INFINITY);
    let mut advanced = Array2::from_elem((n, frames), false);
    acc[[0, 0]] = c[[0, 0]];
    for f in 1..frames {
        // Token i is reachable at frame f only if i <= f and the remaining
        // tokens still fit into the remaining frames.
        let lo = (n - 1).saturating_sub(frames - 1 - f);
        let hi = (n - 1).min(f);
        for i in lo..=hi {
            let stay = acc[[i, f - 1]];
            let adv = if i > 0 { acc[[i - 1, f - 1]] } else { f64::INFINITY };
            if adv <= stay {
                acc[[i, f]] = c[[i, f]] + adv;
                advanced[[i, f]] = true;
            } else {
                acc[[i, f]] = c[[i, f]] + stay;
            }
        }
    }
    let mut assign = vec![0; frames];
    let mut i = n - 1;
    for f in (0..frames).rev() {
        assign[f] = i;
        if f > 0 && advanced[[i, f]] {
            i -= 1;
        }
    }
    let path = AlignmentPath { assign };
    path.validate(n)?;
    Ok(path)
}

pub fn durations_from_path(path: &AlignmentPath) -> DurationTable {
    let tokens = path.assign.last().map_or(0, |&i| i + 1);
    let mut d = vec![0; tokens];
    for &i in &path.assign {
        d[i] += 1;
    }
    DurationTable(d)
}

/// Repeats row `i` of `zy` `durations[i]` times.
pub fn upsample(zy: ArrayView2<f64>, durations: &DurationTable) -> Result<ConditionSeq> {
    if durations.0.len() != zy.nrows() {
        return Err(Error::Duration(format!(
            "{} durations for {} tokens",
            durations.0.len(),
            zy.nrows()
        )));
    }
    if durations.0.contains(&0) {
        return Err(Error::Duration("zero duration".into()));
    }
    let mut out = Array2::zeros((durations.total(), zy.ncols()));
    let mut f = 0;
    for (row, &d) in zy.outer_iter().zip(&durations.0) {
        for _ in 0..d {
            out.row_mut(f).assign(&row);
            f += 1;
        }
    }
    Ok(ConditionSeq(out))
}

/// Adjoint of [`upsample`]: sums frame gradients back onto their tokens.
pub fn upsample_backward(d_cond: ArrayView2<f64>, durations: &DurationTable) -> Array2<f64> {
    let mut out = Array2::zeros((durations.0.len(), d_cond.ncols()));
    let mut f = 0;
    for (i, &d) in durations.0.iter().enumerate() {
        out.row_mut(i).assign(&d_cond.slice(ndarray::s![f..f + d, ..]).sum_axis(Axis(0)));
        f += d;
    }
    out
}

/// The projection `g` from acoustic to linguistic latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    net: Mlp,
}

impl Projector {
    pub fn new(latent_dim: usize, hidden: usize, cond_dim: usize) -> Self {
        Self {
            net: Mlp::new("align.proj", latent_dim, hidden, cond_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.net.init(store, false, rng);
    }

    pub fn project(&self, params: &ParamStore, zx: &LatentSeq) -> Result<LatentSeq> {
        if zx.dim() != self.net.input {
            return Err(Error::Shape {
                expected: (zx.frames(), self.net.input),
                got: zx.0.dim(),
            });
        }
        Ok(LatentSeq(self.net.apply(params, zx.view())?))
    }

    pub fn loss(&self, params: &ParamStore, zy: &LatentSeq, zx: &LatentSeq, path: &AlignmentPath) -> Result<f64> {
        Ok(self.loss_and_grad(params, zy, zx, path)?.0)
    }

    /// Mean over frames of `|zy[assign[f]] - g(zx[f])|^2`. Gradients reach only
    /// the projection weights.
    pub fn loss_and_grad(
        &self,
        params: &ParamStore,
        zy: &LatentSeq,
        zx: &LatentSeq,
        path: &AlignmentPath,
    ) -> Result<(f64, ParamStore)> {
        path.validate(zy.frames())?;
        if path.frames() != zx.frames() {
            return Err(Error::Alignment(format!(
                "path covers {} frames, latents have {}",
                path.frames(),
                zx.frames()
            )));
        }
        let (g, cache) = self.net.forward(params, zx.view())?;
        let frames = zx.frames() as f64;
        let mut d_out = Array2::zeros(g.dim());
        let mut loss = 0.0;
        for (f, &i) in path.assign.iter().enumerate() {
            for j in 0..g.ncols() {
                let d = g[[f, j]] - zy.0[[i, j]];
                loss += d * d;
                d_out[[f, j]] = 2.0 * d / frames;
            }
        }
        let mut grads = ParamStore::new();
        self.net.backward(params, &cache, d_out.view(), &mut grads)?;
        Ok((loss / frames, grads))
    }
}

/// Per-token regression from linguistic latents to log-duration.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationModel {
    net: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DurationTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for DurationTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
        }
    }
}

impl DurationModel {
    pub fn new(cond_dim: usize, hidden: usize) -> Self {
        Self {
            net: Mlp::new("dur", cond_dim, hidden, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.net.init(store, true, rng);
    }

    pub fn log_durations(&self, params: &ParamStore, zy: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.apply(params, zy)?.column(0).to_vec())
    }

    /// `max(1, round(exp(prediction)))` per token.
    pub fn predict(&self, params: &ParamStore, zy: ArrayView2<f64>) -> Result<DurationTable> {
        let d = self
            .log_durations(params, zy)?
            .into_iter()
            .map(|l| {
                let r = l.exp().round();
                if r.is_finite() && r >= 1.0 {
                    r as usize
                } else if r.is_finite() {
                    1
                } else {
                    usize::MAX / 2
                }
            })
            .collect();
        DurationTable::new(d)
    }

    /// Mean over tokens of `(prediction - ln d)^2`.
    pub fn loss_and_grad(&self, params: &ParamStore, zy: ArrayView2<f64>, durations: &DurationTable) -> Result<(f64, ParamStore)> {
        if durations.0.len() != zy.nrows() {
            return Err(Error::Duration("duration count does not match tokens".into()));
        }
        let (out, cache) = self.net.forward(params, zy)?;
        let n = zy.nrows() as f64;
        let mut d_out = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for (k, &d) in durations.0.iter().enumerate() {
            let r = out[[k, 0]] - (d as f64).ln();
            loss += r * r;
            d_out[[k, 0]] = 2.0 * r / n;
        }
        let mut grads = ParamStore::new();
        self.net.backward(params, &cache, d_out.view(), &mut grads)?;
        Ok((loss / n, grads))
    }

    /// Runs `config.epochs` passes over `pairs`, updating the `dur.*` tensors in `params`.
    pub fn train<R: Rng + ?Sized>(
        &self,
        params: &mut ParamStore,
        pairs: &[(Array2<f64>, DurationTable)],
        config: &DurationTrainConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(Error::Duration("no training pairs".into()));
        }
        let mut opt = Momentum::new(config.lr, config.momentum, None);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut history = Vec::new();
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for batch in order.chunks(config.batch_size.max(1)) {
                let zy = ndarray::concatenate(
                    Axis(0),
                    &batch.iter().map(|&i| pairs[i].0.view()).collect::<Vec<_>>(),
                )
                .expect("latent dims agree");
                let d = DurationTable(batch.iter().flat_map(|&i| pairs[i].1 .0.iter().copied()).collect());
                let (loss, grads) = self.loss_and_grad(params, zy.view(), &d)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        step: history.len(),
                        loss,
                    });
                }
                history.push(loss);
                opt.step(params, &grads)?;
            }
        }
        Ok(history)
    }
}

/// Renders alignments as CSV with header `utt_id,token_index,start_frame,duration`.
pub fn alignments_csv<'a>(rows: impl IntoIterator<Item = (usize, &'a DurationTable)>) -> String {
    let mut out = String::from("utt_id,token_index,start_frame,duration\n");
    for (utt, table) in rows {
        for (i, (start, d)) in table.starts().into_iter().zip(&table.0).enumerate() {
            writeln!(out, "{utt},{i},{start},{d}").unwrap();
        }
    }
    out
}
