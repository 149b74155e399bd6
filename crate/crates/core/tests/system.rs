//! Trained-system checks on a reduced configuration.

use std::sync::OnceLock;

use ldtts::acoustic::{FinalStep, Objective};
use ldtts::alignment::{DurationTable, ConditionSeq};
use ldtts::analysis::{evaluate_synthesis, feature_rms, llr_curve, LlrModels};
use ldtts::config::RunConfig;
use ldtts::corpus::Corpus;
use ldtts::diffusion::LatentSeq;
use ldtts::params::ParamStore;
use ldtts::rng::{substream, ANALYSIS_STREAM, SAMPLING_STREAM, TTS_STREAM, VAE_STREAM};
use ldtts::schedule::DiffusionSchedule;
use ldtts::system::{train_tts, windowed_means, TrainedTts, TtsModel, TtsSystem};
use ldtts::vae::{train_vae, TrainedVae, Vae};
use ndarray::Array2;

struct Fixture {
    cfg: RunConfig,
    corpus: Corpus,
    schedule: DiffusionSchedule,
    vae: Vae,
    trained_vae: TrainedVae,
    model: TtsModel,
    tts: TrainedTts,
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.corpus.n_train = 200;
    cfg.corpus.n_test = 20;
    cfg.tts.epochs = 300;
    cfg
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = small_config();
        let corpus = cfg.generate_corpus().unwrap();
        let schedule = cfg.schedule.build().unwrap();
        let vae = Vae::new(cfg.vae_dims);
        let trained_vae = train_vae(&vae, &corpus.train, &cfg.vae, &mut substream(cfg.seed, VAE_STREAM)).unwrap();
        let model = TtsModel::new(cfg.model, cfg.tts.parameterization);
        let before = trained_vae.params.clone();
        let tts = train_tts(
            &model,
            &vae,
            &trained_vae.params,
            &corpus.train,
            &schedule,
            &cfg.tts,
            true,
            &mut substream(cfg.seed, TTS_STREAM),
        )
        .unwrap();
        assert_eq!(before, trained_vae.params);
        Fixture {
            cfg,
            corpus,
            schedule,
            vae,
            trained_vae,
            model,
            tts,
        }
    })
}

fn system(f: &Fixture) -> TtsSystem<'_> {
    TtsSystem {
        vae: &f.vae,
        vae_params: &f.trained_vae.params,
        model: &f.model,
        params: &f.tts.params,
        schedule: &f.schedule,
        objective: Objective::Diffusion,
        final_step: FinalStep::Mean,
    }
}

#[test]
fn vae_reconstruction_is_below_noise_floor() {
    let f = fixture();
    let mut total = 0.0;
    for u in &f.corpus.test {
        let enc = f.vae.encode(&f.trained_vae.params, &u.features).unwrap();
        let x = f.vae.decode(&f.trained_vae.params, &LatentSeq(enc.mean)).unwrap();
        let d = DurationTable::new(u.durations.clone()).unwrap();
        total += feature_rms(&f.corpus.spec, &u.tokens.0, &d, &x.0).unwrap();
    }
    let rms = total / f.corpus.test.len() as f64;
    assert!(rms < 1.5 * f.cfg.corpus.noise_std, "held-out reconstruction rms {rms}");
    let w = windowed_means(&f.trained_vae.history, 50);
    assert!(w.last().unwrap() < w.first().unwrap());
}

#[test]
fn acoustic_loss_decreases() {
    let w = windowed_means(&fixture().tts.acoustic_history, 50);
    assert!(w.last().unwrap() < w.first().unwrap(), "{:?} -> {:?}", w.first(), w.last());
}

#[test]
fn synthesis_follows_durations() {
    let f = fixture();
    let sys = system(f);
    let u = &f.corpus.test[0];
    let mut rng = substream(1, SAMPLING_STREAM);
    let predicted = sys.synthesize(&u.tokens, None, &mut rng).unwrap();
    assert_eq!(predicted.features.frames(), predicted.durations.total());
    assert_eq!(predicted.durations.0.len(), u.tokens.len());
    let gt = DurationTable::new(u.durations.clone()).unwrap();
    let forced = sys.synthesize(&u.tokens, Some(&gt), &mut rng).unwrap();
    assert_eq!(forced.features.0.dim(), (gt.total(), f.cfg.corpus.feat_dim));
}

#[test]
fn evaluation_is_deterministic() {
    let f = fixture();
    let run = || evaluate_synthesis(&system(f), &f.corpus.spec, &f.corpus.test, false, &mut substream(9, SAMPLING_STREAM)).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.to_csv().lines().next(), Some("utt_id,feature_rms,duration_mae,frames"));
}

#[test]
fn oracle_round_trip_is_bounded_by_reconstruction() {
    // ground-truth durations with VAE round-trip latents in place of sampled ones
    let f = fixture();
    for u in &f.corpus.test {
        let d = DurationTable::new(u.durations.clone()).unwrap();
        let enc = f.vae.encode(&f.trained_vae.params, &u.features).unwrap();
        let x = f.vae.decode(&f.trained_vae.params, &LatentSeq(enc.mean)).unwrap();
        let rms = feature_rms(&f.corpus.spec, &u.tokens.0, &d, &x.0).unwrap();
        let clean = u.clean_features(&f.corpus.spec);
        let recon = ((&x.0 - &clean).mapv(|v| v * v).sum() / clean.len() as f64).sqrt();
        assert!(rms <= recon + 1e-12);
    }
}

/// Zeroing the condition weights makes the condition irrelevant, so the
/// unconditional score equals the conditional one bit for bit.
#[test]
fn llr_of_condition_blind_model_is_exactly_one() {
    let f = fixture();
    let mut params: ParamStore = f.tts.params.clone();
    let a = f.cfg.model.acoustic;
    let w1 = params.get_mut("acoustic.net.w1").unwrap();
    let hidden = w1.shape[1];
    for r in a.latent_dim..a.latent_dim + a.cond_dim {
        for c in 0..hidden {
            w1.data[r * hidden + c] = 0.0;
        }
    }
    let models = LlrModels {
        model: &f.model,
        cond_params: &params,
        uncond_params: &params,
    };
    let short = DiffusionSchedule::linear(20, 1e-4, 0.02).unwrap();
    let curve = llr_curve(models, &f.vae, &f.trained_vae.params, &f.corpus.test[..4], &short, 2, &mut substream(0, ANALYSIS_STREAM)).unwrap();
    assert_eq!(curve.points.len(), 20);
    for p in &curve.points {
        assert_eq!(p.ratio, Some(1.0), "t={}", p.t);
    }
}

#[test]
fn llr_points_are_stable_under_more_samples() {
    let f = fixture();
    let models = LlrModels {
        model: &f.model,
        cond_params: &f.tts.params,
        uncond_params: &f.tts.params,
    };
    let run = |n, s| llr_curve(models, &f.vae, &f.trained_vae.params, &f.corpus.test, &f.schedule, n, &mut substream(s, ANALYSIS_STREAM)).unwrap();
    let a = run(2, 1);
    let b = run(4, 2);
    let mut outside = 0;
    for (p, q) in a.points.iter().zip(&b.points) {
        let (rp, rq) = (p.ratio.unwrap(), q.ratio.unwrap());
        assert!(rp.is_finite() && rq.is_finite());
        if (rp - rq).abs() >= 2.0 * p.stderr {
            outside += 1;
        }
    }
    // a two-standard-error band leaves about 5% of points outside by chance
    assert!(outside <= a.points.len() / 10, "{outside} points moved by more than 2 stderr");
}

#[test]
fn zero_condition_has_frame_shape() {
    let f = fixture();
    let u = &f.corpus.test[0];
    let d = DurationTable::new(u.durations.clone()).unwrap();
    let c = f.model.condition(&f.tts.params, &u.tokens, &d, false).unwrap();
    assert_eq!(c, ConditionSeq(Array2::zeros((d.total(), f.cfg.model.acoustic.cond_dim))));
}
