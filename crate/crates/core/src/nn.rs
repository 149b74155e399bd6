//! Small hand-differentiated networks, the optimizer, and time embeddings.
//!
//! Layers read their weights from a [`ParamStore`] by name and accumulate
//! gradients into a store with the same names.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{ParamStore, Tensor};

/// Frame-wise `affine -> tanh -> affine`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
            output,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Adds freshly initialized weights. With `zero_output` the last layer starts at zero.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, zero_output: bool, rng: &mut R) {
        let s1 = 1.0 / (self.input as f64).sqrt();
        let s2 = 1.0 / (self.hidden as f64).sqrt();
        store.insert(self.name("w1"), Tensor::randn(&[self.input, self.hidden], s1, rng));
        store.insert(self.name("b1"), Tensor::zeros(&[self.hidden]));
        let w2 = if zero_output {
            Tensor::zeros(&[self.hidden, self.output])
        } else {
            Tensor::randn(&[self.hidden, self.output], s2, rng)
        };
        store.insert(self.name("w2"), w2);
        store.insert(self.name("b2"), Tensor::zeros(&[self.output]));
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        let w1 = store.get(&self.name("w1"))?.as_matrix();
        let b1 = store.get(&self.name("b1"))?.as_vector();
        let w2 = store.get(&self.name("w2"))?.as_matrix();
        let b2 = store.get(&self.name("b2"))?.as_vector();
        let mut hidden = x.dot(&w1);
        hidden += &b1;
        hidden.mapv_inplace(f64::tanh);
        let mut out = hidden.dot(&w2);
        out += &b2;
        Ok((
            out,
            MlpCache {
                input: x.to_owned(),
                hidden,
            },
        ))
    }

    pub fn apply(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(store, x)?.0)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        d_out: ArrayView2<f64>,
        grads: &mut ParamStore,
    ) -> Result<Array2<f64>> {
        let w1 = store.get(&self.name("w1"))?.as_matrix();
        let w2 = store.get(&self.name("w2"))?.as_matrix();
        let mut d_pre = d_out.dot(&w2.t());
        d_pre.zip_mut_with(&cache.hidden, |d, h| *d *= 1.0 - h * h);
        accumulate(grads, &self.name("w2"), &[self.hidden, self.output], &cache.hidden.t().dot(&d_out));
        accumulate_vec(grads, &self.name("b2"), &d_out.sum_axis(Axis(0)));
        accumulate(grads, &self.name("w1"), &[self.input, self.hidden], &cache.input.t().dot(&d_pre));
        accumulate_vec(grads, &self.name("b1"), &d_pre.sum_axis(Axis(0)));
        Ok(d_pre.dot(&w1.t()))
    }
}

fn accumulate(grads: &mut ParamStore, name: &str, shape: &[usize], g: &Array2<f64>) {
    let t = grads.entry(name, shape);
    for (a, b) in t.data.iter_mut().zip(g.iter()) {
        *a += b;
    }
}

fn accumulate_vec(grads: &mut ParamStore, name: &str, g: &Array1<f64>) {
    let t = grads.entry(name, &[g.len()]);
    for (a, b) in t.data.iter_mut().zip(g.iter()) {
        *a += b;
    }
}

/// Stacks each frame with its left and right neighbours (zero padded), giving
/// `[frames x 3 * dim]`.
pub fn unfold3(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, 3 * d));
    for f in 0..n {
        if f > 0 {
            out.slice_mut(s![f, 0..d]).assign(&x.row(f - 1));
        }
        out.slice_mut(s![f, d..2 * d]).assign(&x.row(f));
        if f + 1 < n {
            out.slice_mut(s![f, 2 * d..3 * d]).assign(&x.row(f + 1));
        }
    }
    out
}

/// Adjoint of [`unfold3`].
pub fn fold3(d: ArrayView2<f64>, dim: usize) -> Array2<f64> {
    let n = d.nrows();
    let mut out = Array2::zeros((n, dim));
    for f in 0..n {
        let mut row = out.row_mut(f);
        row += &d.slice(s![f, dim..2 * dim]);
        if f + 1 < n {
            row += &d.slice(s![f + 1, 0..dim]);
        }
        if f > 0 {
            row += &d.slice(s![f - 1, 2 * dim..3 * dim]);
        }
    }
    out
}

/// Two kernel-3 convolutions along the frame axis with a tanh between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    unfolded_input: Array2<f64>,
    hidden: Array2<f64>,
    unfolded_hidden: Array2<f64>,
}

impl ConvNet {
    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, zero_output: bool, rng: &mut R) {
        let s1 = 1.0 / ((3 * self.input) as f64).sqrt();
        let s2 = 1.0 / ((3 * self.hidden) as f64).sqrt();
        store.insert(self.name("k1"), Tensor::randn(&[3 * self.input, self.hidden], s1, rng));
        store.insert(self.name("b1"), Tensor::zeros(&[self.hidden]));
        let k2 = if zero_output {
            Tensor::zeros(&[3 * self.hidden, self.output])
        } else {
            Tensor::randn(&[3 * self.hidden, self.output], s2, rng)
        };
        store.insert(self.name("k2"), k2);
        store.insert(self.name("b2"), Tensor::zeros(&[self.output]));
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<(Array2<f64>, ConvCache)> {
        let k1 = store.get(&self.name("k1"))?.as_matrix();
        let b1 = store.get(&self.name("b1"))?.as_vector();
        let k2 = store.get(&self.name("k2"))?.as_matrix();
        let b2 = store.get(&self.name("b2"))?.as_vector();
        let unfolded_input = unfold3(x);
        let mut hidden = unfolded_input.dot(&k1);
        hidden += &b1;
        hidden.mapv_inplace(f64::tanh);
        let unfolded_hidden = unfold3(hidden.view());
        let mut out = unfolded_hidden.dot(&k2);
        out += &b2;
        Ok((
            out,
            ConvCache {
                unfolded_input,
                hidden,
                unfolded_hidden,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvCache,
        d_out: ArrayView2<f64>,
        grads: &mut ParamStore,
    ) -> Result<Array2<f64>> {
        let k1 = store.get(&self.name("k1"))?.as_matrix();
        let k2 = store.get(&self.name("k2"))?.as_matrix();
        accumulate(grads, &self.name("k2"), &[3 * self.hidden, self.output], &cache.unfolded_hidden.t().dot(&d_out));
        accumulate_vec(grads, &self.name("b2"), &d_out.sum_axis(Axis(0)));
        let mut d_hidden = fold3(d_out.dot(&k2.t()).view(), self.hidden);
        d_hidden.zip_mut_with(&cache.hidden, |d, h| *d *= 1.0 - h * h);
        accumulate(grads, &self.name("k1"), &[3 * self.input, self.hidden], &cache.unfolded_input.t().dot(&d_hidden));
        accumulate_vec(grads, &self.name("b1"), &d_hidden.sum_axis(Axis(0)));
        Ok(fold3(d_hidden.dot(&k1.t()).view(), self.input))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    #[default]
    Frame,
    Conv,
}

/// Either network family behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Frame(Mlp),
    Conv(ConvNet),
}

#[derive(Debug, Clone)]
pub enum NetworkCache {
    Frame(MlpCache),
    Conv(ConvCache),
}

impl Network {
    pub fn new(kind: NetworkKind, prefix: &str, input: usize, hidden: usize, output: usize) -> Self {
        match kind {
            NetworkKind::Frame => Network::Frame(Mlp::new(prefix, input, hidden, output)),
            NetworkKind::Conv => Network::Conv(ConvNet {
                prefix: prefix.to_string(),
                input,
                hidden,
                output,
            }),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Network::Frame(m) => m.input,
            Network::Conv(c) => c.input,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, zero_output: bool, rng: &mut R) {
        match self {
            Network::Frame(m) => m.init(store, zero_output, rng),
            Network::Conv(c) => c.init(store, zero_output, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<(Array2<f64>, NetworkCache)> {
        Ok(match self {
            Network::Frame(m) => {
                let (y, c) = m.forward(store, x)?;
                (y, NetworkCache::Frame(c))
            }
            Network::Conv(n) => {
                let (y, c) = n.forward(store, x)?;
                (y, NetworkCache::Conv(c))
            }
        })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &NetworkCache,
        d_out: ArrayView2<f64>,
        grads: &mut ParamStore,
    ) -> Result<Array2<f64>> {
        match (self, cache) {
            (Network::Frame(m), NetworkCache::Frame(c)) => m.backward(store, c, d_out, grads),
            (Network::Conv(n), NetworkCache::Conv(c)) => n.backward(store, c, d_out, grads),
            _ => panic!("network cache does not match network kind"),
        }
    }
}

/// Sinusoidal embedding of a diffusion step: `[sin(t w_0), cos(t w_0), sin(t w_1), ...]`
/// with `w_i = 10000^(-2i/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let w = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        out[2 * i] = (t as f64 * w).sin();
        out[2 * i + 1] = (t as f64 * w).cos();
    }
    out
}

/// Gradient descent with heavy-ball momentum and optional global norm clipping.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    velocity: ParamStore,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            momentum,
            clip_norm,
            velocity: ParamStore::new(),
        }
    }

    /// Updates every parameter that has a gradient; others are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        let scale = match self.clip_norm {
            Some(c) => {
                let n = grads.l2_norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (name, g) in grads.iter() {
            let v = self.velocity.entry(name, &g.shape);
            let p = params.get_mut(name)?;
            for ((pv, vv), gv) in p.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
                *vv = self.momentum * *vv + scale * gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new("m", 3, 5, 2);
        mlp.init(&mut store, true, &mut rng);
        let y = mlp.apply(&store, array![[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]].view()).unwrap();
        assert_eq!(y, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let d = Array2::from_shape_fn((3, 6), |(i, j)| (i * 6 + j) as f64 * 0.1 - 0.7);
        let lhs: f64 = (&unfold3(x.view()) * &d).sum();
        let rhs: f64 = (&x * &fold3(d.view(), 2)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn time_embedding_layout() {
        let e = time_embedding(3, 8);
        assert_eq!(e.len(), 8);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15);
        assert!((e[1] - 3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn momentum_descends_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor { shape: vec![1], data: vec![5.0] });
        let mut opt = Momentum::new(0.1, 0.9, None);
        for _ in 0..200 {
            let mut g = ParamStore::new();
            g.insert("x", Tensor { shape: vec![1], data: vec![2.0 * p.get("x").unwrap().data[0]] });
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.get("x").unwrap().data[0].abs() < 1e-3);
    }
}
