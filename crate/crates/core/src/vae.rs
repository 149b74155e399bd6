//! Frame-wise diagonal-Gaussian VAE over feature frames.
//!
//! The encoder outputs a mean and an unconstrained log-variance per latent
//! dimension; the decoder maps a latent frame back to a feature frame.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureSeq, Utterance};
use crate::diffusion::{check_same, kl_diag_gaussian, DiagGaussianSeq, LatentSeq};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Momentum};
use crate::params::ParamStore;
use crate::rng::normal_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeDims {
    pub feat_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for VaeDims {
    fn default() -> Self {
        Self {
            feat_dim: 8,
            latent_dim: 4,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub kl_weight: f64,
    pub clip_norm: Option<f64>,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            kl_weight: 0.02,
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Mean over frames of the squared reconstruction error norm.
pub fn recon_error(decoded: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_same(target.dim(), decoded.dim())?;
    let frames = target.nrows().max(1) as f64;
    let mut acc = 0.0;
    Zip::from(decoded)
        .and(target)
        .for_each(|&a, &b| acc += (a - b) * (a - b));
    Ok(acc / frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub dims: VaeDims,
    encoder: Mlp,
    decoder: Mlp,
}

impl Vae {
    pub fn new(dims: VaeDims) -> Self {
        Self {
            dims,
            encoder: Mlp::new("vae.enc", dims.feat_dim, dims.hidden, 2 * dims.latent_dim),
            decoder: Mlp::new("vae.dec", dims.latent_dim, dims.hidden, dims.feat_dim),
        }
    }

    /// Fresh parameters; the encoder output layer starts at zero so every frame
    /// initially encodes to `N(0, I)`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, true, rng);
        self.decoder.init(&mut store, false, rng);
        store
    }

    fn check_features(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dims.feat_dim {
            return Err(Error::Shape {
                expected: (x.nrows(), self.dims.feat_dim),
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, params: &ParamStore, x: &FeatureSeq) -> Result<DiagGaussianSeq> {
        self.encode_view(params, x.view())
    }

    pub fn encode_view(&self, params: &ParamStore, x: ArrayView2<f64>) -> Result<DiagGaussianSeq> {
        self.check_features(x)?;
        let out = self.encoder.apply(params, x)?;
        Ok(self.split_encoder_output(&out))
    }

    fn split_encoder_output(&self, out: &Array2<f64>) -> DiagGaussianSeq {
        let l = self.dims.latent_dim;
        DiagGaussianSeq {
            mean: out.slice(s![.., 0..l]).to_owned(),
            var: out.slice(s![.., l..2 * l]).mapv(f64::exp),
        }
    }

    pub fn decode(&self, params: &ParamStore, z: &LatentSeq) -> Result<FeatureSeq> {
        if z.dim() != self.dims.latent_dim {
            return Err(Error::Shape {
                expected: (z.frames(), self.dims.latent_dim),
                got: z.0.dim(),
            });
        }
        Ok(FeatureSeq(self.decoder.apply(params, z.view())?))
    }

    /// Loss terms for one feature sequence with externally supplied standard-normal noise.
    pub fn loss(&self, params: &ParamStore, x: &FeatureSeq, noise: &LatentSeq, kl_weight: f64) -> Result<VaeLoss> {
        let enc = self.encode(params, x)?;
        let z = enc.sample(noise.view())?;
        let recon = recon_error(self.decode(params, &z)?.view(), x.view())?;
        let prior = DiagGaussianSeq::standard_normal(enc.frames(), enc.dim());
        let kl = kl_diag_gaussian(&enc, &prior)? / x.frames().max(1) as f64;
        Ok(VaeLoss {
            total: recon + kl_weight * kl,
            recon,
            kl,
        })
    }

    /// Loss and its gradient with respect to every VAE parameter.
    pub fn loss_and_grad(
        &self,
        params: &ParamStore,
        x: ArrayView2<f64>,
        noise: ArrayView2<f64>,
        kl_weight: f64,
    ) -> Result<(VaeLoss, ParamStore)> {
        self.check_features(x)?;
        let frames = x.nrows().max(1) as f64;
        let l = self.dims.latent_dim;
        let (enc_out, enc_cache) = self.encoder.forward(params, x)?;
        let mu = enc_out.slice(s![.., 0..l]);
        let logvar = enc_out.slice(s![.., l..2 * l]);
        check_same(mu.dim(), noise.dim())?;
        let std = logvar.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&std * &noise);
        let (x_hat, dec_cache) = self.decoder.forward(params, z.view())?;

        let diff = &x_hat - &x;
        let recon = diff.iter().map(|d| d * d).sum::<f64>() / frames;
        let kl = Zip::from(&mu)
            .and(&logvar)
            .fold(0.0, |acc, &m, &lv| acc + 0.5 * (lv.exp() + m * m - 1.0 - lv))
            / frames;

        let mut grads = ParamStore::new();
        let d_xhat = diff.mapv(|d| 2.0 * d / frames);
        let dz = self.decoder.backward(params, &dec_cache, d_xhat.view(), &mut grads)?;
        let mut d_mu = dz.clone();
        let mut d_logvar = &dz * &noise * &std * 0.5;
        Zip::from(&mut d_mu)
            .and(&mut d_logvar)
            .and(&mu)
            .and(&logvar)
            .for_each(|dm, dl, &m, &lv| {
                *dm += kl_weight * m / frames;
                *dl += kl_weight * 0.5 * (lv.exp() - 1.0) / frames;
            });
        let d_out = concatenate![Axis(1), d_mu, d_logvar];
        self.encoder.backward(params, &enc_cache, d_out.view(), &mut grads)?;
        Ok((
            VaeLoss {
                total: recon + kl_weight * kl,
                recon,
                kl,
            },
            grads,
        ))
    }
}

/// Stacks the feature frames of several utterances.
pub fn stack_features<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Array2<f64> {
    let views: Vec<ArrayView2<f64>> = utts.into_iter().map(|u| u.features.view()).collect();
    concatenate(Axis(0), &views).expect("feature dims agree")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVae {
    pub params: ParamStore,
    /// Total loss of every optimizer step.
    pub history: Vec<f64>,
}

/// Minibatch gradient descent with momentum on the VAE loss.
pub fn train_vae<R: Rng + ?Sized>(
    vae: &Vae,
    corpus: &[Utterance],
    config: &VaeTrainConfig,
    rng: &mut R,
) -> Result<TrainedVae> {
    if corpus.is_empty() {
        return Err(Error::Corpus("cannot train on an empty corpus".into()));
    }
    let mut params = vae.init(rng);
    let mut opt = Momentum::new(config.lr, config.momentum, config.clip_norm);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::new();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let x = stack_features(batch.iter().map(|&i| &corpus[i]));
            let noise = normal_matrix(rng, x.nrows(), vae.dims.latent_dim);
            let (loss, grads) = vae.loss_and_grad(&params, x.view(), noise.view(), config.kl_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    step: history.len(),
                    loss: loss.total,
                });
            }
            history.push(loss.total);
            opt.step(&mut params, &grads)?;
        }
    }
    Ok(TrainedVae { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (Vae, ParamStore) {
        let vae = Vae::new(VaeDims {
            feat_dim: 3,
            latent_dim: 2,
            hidden: 5,
        });
        let params = vae.init(&mut ChaCha8Rng::seed_from_u64(3));
        (vae, params)
    }

    #[test]
    fn fresh_encoder_is_standard_normal() {
        let (vae, params) = small();
        let x = FeatureSeq(array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]]);
        let enc = vae.encode(&params, &x).unwrap();
        assert_eq!(enc.frames(), 2);
        assert_eq!(enc.mean, Array2::<f64>::zeros((2, 2)));
        assert_eq!(enc.var, Array2::<f64>::ones((2, 2)));
        let loss = vae.loss(&params, &x, &LatentSeq::zeros(2, 2), 1.0).unwrap();
        assert_eq!(loss.kl, 0.0);
    }

    #[test]
    fn shape_errors() {
        let (vae, params) = small();
        assert!(vae.encode(&params, &FeatureSeq(Array2::zeros((2, 4)))).is_err());
        assert!(vae.decode(&params, &LatentSeq::zeros(2, 3)).is_err());
        let out = vae.decode(&params, &LatentSeq::zeros(7, 2)).unwrap();
        assert_eq!(out.0.dim(), (7, 3));
    }

    #[test]
    fn recon_error_of_identity_is_zero() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(recon_error(x.view(), x.view()).unwrap(), 0.0);
        assert_eq!(recon_error(array![[1.0, 0.0]].view(), array![[0.0, 0.0]].view()).unwrap(), 1.0);
    }

    #[test]
    fn loss_matches_gradient_path_value() {
        let (vae, mut params) = small();
        params.get_mut("vae.enc.w2").unwrap().data.iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * i as f64 - 0.2);
        let x = FeatureSeq(array![[0.3, -1.0, 2.0], [1.0, 0.5, -0.5]]);
        let noise = LatentSeq(array![[0.1, -0.4], [1.2, 0.3]]);
        let a = vae.loss(&params, &x, &noise, 0.7).unwrap();
        let (b, _) = vae.loss_and_grad(&params, x.view(), noise.view(), 0.7).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
        assert!((a.kl - b.kl).abs() < 1e-12);
    }
}
