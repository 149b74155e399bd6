//! Synthetic paired token/feature corpus with ground-truth durations.
//!
//! Each token id owns `variants` template rows. Every occurrence of a token
//! picks one variant and emits `duration` frames of that row plus Gaussian
//! noise. With more than one variant the feature distribution given the token
//! is multimodal.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, CORPUS_STREAM, TEMPLATE_STREAM};

/// Token ids of one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn new(tokens: Vec<usize>, alphabet: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Corpus("token sequence is empty".into()));
        }
        if let Some(&id) = tokens.iter().find(|&&id| id >= alphabet) {
            return Err(Error::Token { id, alphabet });
        }
        Ok(Self(tokens))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Acoustic feature frames, `[frames x feat_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSeq(#[serde(with = "matrix_rows")] pub Array2<f64>);

impl FeatureSeq {
    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// Serializes a matrix as a list of rows.
pub mod matrix_rows {
    use ndarray::Array2;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.outer_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let n = flat.len().checked_div(cols).unwrap_or(0);
        Array2::from_shape_vec((n, cols), flat).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCorpusSpec {
    pub alphabet_size: usize,
    pub feat_dim: usize,
    /// Template rows per token id.
    pub variants: usize,
    /// `[alphabet_size * variants x feat_dim]`; row `token * variants + variant`.
    #[serde(with = "matrix_rows")]
    pub template: Array2<f64>,
    /// Inclusive frames-per-token range.
    pub duration_range: (usize, usize),
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthCorpusSpec {
    /// Draws a standard-normal template from the seed's template stream.
    pub fn new(
        alphabet_size: usize,
        feat_dim: usize,
        variants: usize,
        duration_range: (usize, usize),
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = substream(seed, TEMPLATE_STREAM);
        let template = Array2::from_shape_simple_fn((alphabet_size * variants, feat_dim), || {
            rng.sample(StandardNormal)
        });
        let spec = Self {
            alphabet_size,
            feat_dim,
            variants,
            template,
            duration_range,
            noise_std,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size == 0 || self.feat_dim == 0 || self.variants == 0 {
            return Err(Error::Corpus("alphabet, feat_dim and variants must be positive".into()));
        }
        let (lo, hi) = self.duration_range;
        if lo < 1 || lo > hi {
            return Err(Error::Corpus(format!("invalid duration range ({lo}, {hi})")));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Corpus(format!("invalid noise_std {}", self.noise_std)));
        }
        if self.template.dim() != (self.alphabet_size * self.variants, self.feat_dim) {
            return Err(Error::Corpus("template shape does not match spec".into()));
        }
        Ok(())
    }

    pub fn template_row(&self, token: usize, variant: usize) -> ArrayView1<'_, f64> {
        self.template.row(token * self.variants + variant)
    }

    /// Squared distance from `frame` to the closest template variant of `token`.
    pub fn nearest_template_sq(&self, token: usize, frame: ArrayView1<f64>) -> f64 {
        (0..self.variants)
            .map(|v| {
                self.template_row(token, v)
                    .iter()
                    .zip(frame.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: usize,
    pub tokens: TokenSeq,
    pub features: FeatureSeq,
    /// Ground-truth frames per token; sums to the frame count.
    pub durations: Vec<usize>,
    /// Template variant used by each token occurrence.
    pub variants: Vec<usize>,
}

impl Utterance {
    /// Noise-free feature frames for this utterance.
    pub fn clean_features(&self, spec: &SynthCorpusSpec) -> Array2<f64> {
        let mut out = Array2::zeros((self.features.frames(), spec.feat_dim));
        let mut f = 0;
        for ((&tok, &d), &var) in self.tokens.0.iter().zip(&self.durations).zip(&self.variants) {
            for _ in 0..d {
                out.row_mut(f).assign(&spec.template_row(tok, var));
                f += 1;
            }
        }
        out
    }
}

/// Samples `n_utts` utterances with token counts drawn uniformly from `len_range`.
///
/// The stream depends only on `spec.seed`, so two calls with the same spec give
/// identical output.
pub fn generate_corpus(
    spec: &SynthCorpusSpec,
    n_utts: usize,
    len_range: (usize, usize),
) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let (lmin, lmax) = len_range;
    if lmin < 1 || lmin > lmax {
        return Err(Error::Corpus(format!("invalid length range ({lmin}, {lmax})")));
    }
    let (dmin, dmax) = spec.duration_range;
    let mut rng = substream(spec.seed, CORPUS_STREAM);
    let mut out = Vec::with_capacity(n_utts);
    for id in 0..n_utts {
        let n_tok = rng.random_range(lmin..=lmax);
        let tokens: Vec<usize> = (0..n_tok).map(|_| rng.random_range(0..spec.alphabet_size)).collect();
        let durations: Vec<usize> = (0..n_tok).map(|_| rng.random_range(dmin..=dmax)).collect();
        let variants: Vec<usize> = (0..n_tok).map(|_| rng.random_range(0..spec.variants)).collect();
        let frames: usize = durations.iter().sum();
        let mut feats = Array2::zeros((frames, spec.feat_dim));
        let mut f = 0;
        for ((&tok, &d), &var) in tokens.iter().zip(&durations).zip(&variants) {
            for _ in 0..d {
                let row = spec.template_row(tok, var);
                for (j, v) in feats.row_mut(f).iter_mut().enumerate() {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = row[j] + spec.noise_std * n;
                }
                f += 1;
            }
        }
        out.push(Utterance {
            id,
            tokens: TokenSeq(tokens),
            features: FeatureSeq(feats),
            durations,
            variants,
        });
    }
    Ok(out)
}

/// A generated corpus split into training and held-out utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub spec: SynthCorpusSpec,
    pub len_range: (usize, usize),
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    /// Generates `n_train + n_test` utterances; the last `n_test` are held out.
    pub fn generate(
        spec: SynthCorpusSpec,
        n_train: usize,
        n_test: usize,
        len_range: (usize, usize),
    ) -> Result<Self> {
        if n_train == 0 {
            return Err(Error::Corpus("training split is empty".into()));
        }
        let mut all = generate_corpus(&spec, n_train + n_test, len_range)?;
        let test = all.split_off(n_train);
        Ok(Self {
            spec,
            len_range,
            train: all,
            test,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corpus: Corpus = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        corpus.spec.validate()?;
        Ok(corpus)
    }
}
