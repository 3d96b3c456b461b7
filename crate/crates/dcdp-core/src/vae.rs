//! Asymmetric action encoder/decoder and the stage-1 training loop.
//!
//! The encoder sees only the executed action sub-chunk (normalized) and
//! emits a Gaussian posterior over a latent. The decoder is a recurrent
//! cell that reconstructs one action per step from the latent, the per-step
//! dynamic features, and a learned step embedding, so at run time the same
//! decoder can re-emit the chunk under refreshed observations. Training
//! jointly optimizes the VAE and the dynamic feature encoder with
//! reconstruction + KL + self-supervised differential losses.

use crate::config::Config;
use crate::demos::Dataset;
use crate::encoder::{DynamicEncoder, EncoderArch, HistoryBank, IMG};
use crate::env::{render, GoalSpec};
use crate::nn::{Adam, Embedding, Linear, ParamSet, Proj};
use crate::rng::Rng;
use crate::runtime::ActionBounds;
use crate::tensor::{Tape, TensorId};
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Arch {
    pub encoder: EncoderArch,
    pub h_exec: usize,
    pub action_dim: usize,
    pub d_z: usize,
    pub step_embed_dim: usize,
    pub rnn_hidden: usize,
    pub lambda_kl: f64,
    pub lambda_diff: f64,
}

impl Stage1Arch {
    pub fn from_config(cfg: &Config) -> Self {
        Stage1Arch {
            encoder: EncoderArch::from_config(cfg),
            h_exec: cfg.h_exec,
            action_dim: 2,
            d_z: cfg.latent_dim,
            step_embed_dim: cfg.step_embed_dim,
            rnn_hidden: cfg.rnn_hidden,
            lambda_kl: cfg.lambda_kl,
            lambda_diff: cfg.lambda_diff,
        }
    }

    pub fn chunk_len(&self) -> usize {
        self.h_exec * self.action_dim
    }
}

/// Layer handles for the VAE half of the stage-1 parameter set.
pub struct ActionVae {
    enc_fc1: Linear,
    enc_fc2: Linear,
    enc_out: Linear,
    step_table: Embedding,
    w_ih: Proj,
    w_hh: Proj,
    rnn_bias: usize,
    head: Linear,
}

impl ActionVae {
    fn new(ps: &mut ParamSet, rng: &mut Rng, arch: &Stage1Arch) -> Self {
        let chunk = arch.chunk_len();
        let enc_fc1 = Linear::new(ps, rng, "vae/enc/fc1", chunk, 128);
        let enc_fc2 = Linear::new(ps, rng, "vae/enc/fc2", 128, 128);
        let enc_out = Linear::new(ps, rng, "vae/enc/out", 128, 2 * arch.d_z);
        let step_table = Embedding::new(ps, rng, "vae/step_embed", arch.h_exec, arch.step_embed_dim);
        let in_dim = arch.d_z + arch.encoder.d_f + arch.step_embed_dim;
        let w_ih = Proj::new(ps, rng, "vae/rnn/w_ih", in_dim, arch.rnn_hidden);
        let w_hh = Proj::new(ps, rng, "vae/rnn/w_hh", arch.rnn_hidden, arch.rnn_hidden);
        let rnn_bias = ps.add("vae/rnn/b", &[arch.rnn_hidden], vec![0.0; arch.rnn_hidden], true);
        let head = Linear::new(ps, rng, "vae/head", arch.rnn_hidden, arch.action_dim);
        ActionVae { enc_fc1, enc_fc2, enc_out, step_table, w_ih, w_hh, rnn_bias, head }
    }
}

/// The jointly trained stage-1 bundle: dynamic feature encoder + action VAE
/// over one parameter set (one checkpoint file).
pub struct Stage1Model {
    pub arch: Stage1Arch,
    pub params: ParamSet,
    pub encoder: DynamicEncoder,
    pub vae: ActionVae,
    pub frozen: bool,
}

impl Stage1Model {
    pub fn new(arch: Stage1Arch, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = Rng::new(seed ^ 0x7374_6167_6531_5f69);
        let encoder = DynamicEncoder::new(&mut params, &mut rng, arch.encoder.clone());
        let vae = ActionVae::new(&mut params, &mut rng, &arch);
        params.add(
            "s1/arch",
            &[16],
            vec![
                arch.encoder.m as f64,
                arch.encoder.c1 as f64,
                arch.encoder.c2 as f64,
                arch.encoder.c3 as f64,
                arch.encoder.c4 as f64,
                arch.encoder.d as f64,
                arch.encoder.d_k as f64,
                arch.encoder.d_f as f64,
                arch.encoder.alpha_init,
                arch.encoder.ablate_ta as u8 as f64,
                arch.encoder.ablate_dca as u8 as f64,
                arch.h_exec as f64,
                arch.d_z as f64,
                arch.step_embed_dim as f64,
                arch.rnn_hidden as f64,
                arch.lambda_diff,
            ],
            false,
        );
        params.add("s1/lambda_kl", &[1], vec![arch.lambda_kl], false);
        Stage1Model { arch, params, encoder, vae, frozen: false }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::checkpoint::FormatError> {
        self.params.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::checkpoint::FormatError> {
        let entries = crate::checkpoint::load(path)?;
        let arch_e = entries
            .iter()
            .find(|e| e.name == "s1/arch")
            .ok_or_else(|| crate::checkpoint::FormatError::Invalid("missing s1/arch".into()))?;
        let a = &arch_e.data;
        let kl = entries
            .iter()
            .find(|e| e.name == "s1/lambda_kl")
            .ok_or_else(|| crate::checkpoint::FormatError::Invalid("missing s1/lambda_kl".into()))?
            .data[0];
        let arch = Stage1Arch {
            encoder: EncoderArch {
                m: a[0] as usize,
                c1: a[1] as usize,
                c2: a[2] as usize,
                c3: a[3] as usize,
                c4: a[4] as usize,
                d: a[5] as usize,
                d_k: a[6] as usize,
                d_f: a[7] as usize,
                alpha_init: a[8],
                ablate_ta: a[9] != 0.0,
                ablate_dca: a[10] != 0.0,
            },
            h_exec: a[11] as usize,
            action_dim: 2,
            d_z: a[12] as usize,
            step_embed_dim: a[13] as usize,
            rnn_hidden: a[14] as usize,
            lambda_kl: kl,
            lambda_diff: a[15],
        };
        let mut model = Stage1Model::new(arch, 0);
        model.params.load_entries(&entries)?;
        model.frozen = true;
        Ok(model)
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    // ── VAE tape path ──────────────────────────────────────────────────

    /// Posterior parameters of a normalized chunk: ([1,d_z], [1,d_z]).
    pub fn encode_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        chunk: TensorId,
    ) -> (TensorId, TensorId) {
        let h = self.vae.enc_fc1.forward(tape, leaves, chunk);
        let h = tape.relu(h);
        let h = self.vae.enc_fc2.forward(tape, leaves, h);
        let h = tape.relu(h);
        let out = self.vae.enc_out.forward(tape, leaves, h);
        let mu = tape.slice_cols(out, 0, self.arch.d_z);
        let logvar = tape.slice_cols(out, self.arch.d_z, 2 * self.arch.d_z);
        (mu, logvar)
    }

    /// `z = mu + exp(logvar / 2) * eps`.
    pub fn reparameterize_tape(
        &self,
        tape: &mut Tape,
        mu: TensorId,
        logvar: TensorId,
        eps: TensorId,
    ) -> TensorId {
        let half = tape.scale(logvar, 0.5);
        let sd = tape.exp(half);
        let scaled = tape.mul(sd, eps);
        tape.add(mu, scaled)
    }

    /// Decode one action per step; `features[s]` conditions step `s`.
    /// Returns the stacked [h_exec, action_dim] reconstruction.
    pub fn decode_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        z: TensorId,
        features: &[TensorId],
    ) -> TensorId {
        assert_eq!(features.len(), self.arch.h_exec, "one feature vector per step");
        let mut h = tape.zeros(&[1, self.arch.rnn_hidden]);
        let mut actions = Vec::with_capacity(self.arch.h_exec);
        for (s, &f) in features.iter().enumerate() {
            let e = self.vae.step_table.forward(tape, leaves, s);
            let x = tape.concat(&[z, f, e], 1);
            let xi = self.vae.w_ih.forward(tape, leaves, x);
            let hh = self.vae.w_hh.forward(tape, leaves, h);
            let pre = tape.add(xi, hh);
            let pre = tape.add_bias(pre, leaves[self.vae.rnn_bias]);
            h = tape.tanh(pre);
            actions.push(self.vae.head.forward(tape, leaves, h));
        }
        tape.concat(&actions, 0)
    }

    /// `recon + lambda_kl * KL(N(mu, sigma^2) || N(0, I)) + lambda_diff * L_diff`.
    #[allow(clippy::too_many_arguments)]
    pub fn total_loss_tape(
        &self,
        tape: &mut Tape,
        recon: TensorId,
        target: TensorId,
        mu: TensorId,
        logvar: TensorId,
        diff_loss: Option<TensorId>,
    ) -> TensorId {
        let recon_loss = tape.mse(recon, target);
        let kl = gaussian_kl_tape(tape, mu, logvar);
        let kl_term = tape.scale(kl, self.arch.lambda_kl);
        let mut total = tape.add(recon_loss, kl_term);
        if let Some(dl) = diff_loss {
            let dl_term = tape.scale(dl, self.arch.lambda_diff);
            total = tape.add(total, dl_term);
        }
        total
    }

    // ── tape-free inference path ───────────────────────────────────────

    pub fn vae_encode_fast(&self, chunk: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(chunk.len(), self.arch.chunk_len(), "wrong chunk length");
        let mut h1 = Vec::new();
        self.vae.enc_fc1.forward_fast(&self.params, chunk, &mut h1);
        relu_inplace(&mut h1);
        let mut h2 = Vec::new();
        self.vae.enc_fc2.forward_fast(&self.params, &h1, &mut h2);
        relu_inplace(&mut h2);
        let mut out = Vec::new();
        self.vae.enc_out.forward_fast(&self.params, &h2, &mut out);
        let mu = out[..self.arch.d_z].to_vec();
        let logvar = out[self.arch.d_z..].to_vec();
        (mu, logvar)
    }

    /// One recurrent decode step; `hidden` is updated in place.
    pub fn vae_decode_step_fast(
        &self,
        z: &[f64],
        features: &[f64],
        step: usize,
        hidden: &mut Vec<f64>,
    ) -> [f64; 2] {
        assert!(step < self.arch.h_exec, "step {step} out of range");
        let e = self.vae.step_table.row(&self.params, step);
        let mut x = Vec::with_capacity(z.len() + features.len() + e.len());
        x.extend_from_slice(z);
        x.extend_from_slice(features);
        x.extend_from_slice(e);
        let mut xi = Vec::new();
        self.vae.w_ih.forward_fast(&self.params, &x, 1, &mut xi);
        let mut hh = Vec::new();
        self.vae.w_hh.forward_fast(&self.params, hidden, 1, &mut hh);
        let b = self.params.data(self.vae.rnn_bias);
        for i in 0..xi.len() {
            xi[i] = (xi[i] + hh[i] + b[i]).tanh();
        }
        *hidden = xi;
        let mut a = Vec::new();
        self.vae.head.forward_fast(&self.params, hidden, &mut a);
        [a[0], a[1]]
    }

    /// Decode a whole chunk at once (test oracle for the step-wise path).
    pub fn vae_decode_batch_fast(&self, z: &[f64], features: &[Vec<f64>]) -> Vec<[f64; 2]> {
        assert_eq!(features.len(), self.arch.h_exec);
        let mut hidden = vec![0.0; self.arch.rnn_hidden];
        features
            .iter()
            .enumerate()
            .map(|(s, f)| self.vae_decode_step_fast(z, f, s, &mut hidden))
            .collect()
    }

    pub fn frame_features(&self, image: &[f64]) -> Vec<f64> {
        self.encoder.frame_features_fast(&self.params, image)
    }

    pub fn encoder_extract_cached(&self, bank: &HistoryBank) -> Vec<f64> {
        let feats = bank.window_features();
        self.encoder.extract_fast(&self.params, &feats)
    }

    pub fn encoder_extract_images(&self, images: &[&[f64]]) -> Vec<f64> {
        let feats: Vec<Vec<f64>> = images
            .iter()
            .map(|img| self.encoder.frame_features_fast(&self.params, img))
            .collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        self.encoder.extract_fast(&self.params, &refs)
    }
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))` on the tape:
/// `-1/2 sum(1 + logvar - mu^2 - exp(logvar))`.
pub fn gaussian_kl_tape(tape: &mut Tape, mu: TensorId, logvar: TensorId) -> TensorId {
    let n = tape.data(mu).len();
    let ones = tape.leaf(vec![1.0; n], &[1, n], false);
    let t1 = tape.add(ones, logvar);
    let mu2 = tape.mul(mu, mu);
    let ev = tape.exp(logvar);
    let t2 = tape.sub(t1, mu2);
    let t3 = tape.sub(t2, ev);
    let s = tape.sum(t3);
    tape.scale(s, -0.5)
}

/// Scalar reference for the Gaussian KL (textbook formula).
pub fn gaussian_kl_scalar(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

// ── stage-1 training ───────────────────────────────────────────────────

/// Pre-rendered episode frames packed as gray-level indices (4 levels), so
/// a 200-episode dataset fits comfortably in memory.
struct FrameStore {
    frames: Vec<Vec<Vec<u8>>>,
}

const GRAY_LEVELS: [f64; 4] = [
    crate::env::PX_BG,
    crate::env::PX_GOAL,
    crate::env::PX_BLOCK,
    crate::env::PX_PUSHER,
];

impl FrameStore {
    fn build(ds: &Dataset) -> Self {
        let goal = GoalSpec::default();
        let frames = ds
            .episodes
            .par_iter()
            .map(|ep| {
                ep.states
                    .iter()
                    .map(|st| {
                        render(st, &goal)
                            .iter()
                            .map(|&v| {
                                GRAY_LEVELS
                                    .iter()
                                    .position(|&g| g == v)
                                    .expect("unknown gray level") as u8
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        FrameStore { frames }
    }

    fn image(&self, ep: usize, t: usize) -> Vec<f64> {
        let t = t.min(self.frames[ep].len() - 1);
        self.frames[ep][t].iter().map(|&i| GRAY_LEVELS[i as usize]).collect()
    }
}

/// Stage-1 training: jointly optimize the dynamic encoder and the VAE on
/// executed sub-chunks with per-step features drawn from each demo's own
/// frames. Deterministic for a fixed seed.
pub fn train_stage1(ds: &Dataset, cfg: &Config, seed: u64, ablate_ssd: bool, ablate_ta: bool, ablate_dca: bool) -> Stage1Model {
    let mut arch = Stage1Arch::from_config(cfg);
    arch.encoder.ablate_ta = ablate_ta;
    arch.encoder.ablate_dca = ablate_dca;
    if ablate_ssd {
        arch.lambda_diff = 0.0;
    }
    let mut model = Stage1Model::new(arch, seed);
    let bounds = ActionBounds { a_min: ds.a_min, a_max: ds.a_max };
    let store = FrameStore::build(ds);
    let mut opt = Adam::new(&model.params, cfg.lr_stage1);
    let mut rng = Rng::new(seed ^ 0x7331_5f74_7261_696e);

    // sample index: (episode, chunk start)
    let mut index = Vec::new();
    for (e, ep) in ds.episodes.iter().enumerate() {
        for t in 0..ep.len() {
            index.push((e, t));
        }
    }
    assert!(!index.is_empty(), "empty dataset");

    let m = model.arch.encoder.m;
    let h_exec = model.arch.h_exec;
    for epoch in 0..cfg.epochs_stage1 {
        rng.shuffle(&mut index);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in index.chunks(cfg.batch_stage1) {
            let draws: Vec<((usize, usize), Vec<f64>)> = batch
                .iter()
                .map(|&(e, t)| {
                    let mut eps = vec![0.0; model.arch.d_z];
                    rng.fill_normal(&mut eps);
                    ((e, t), eps)
                })
                .collect();

            let results: Vec<(f64, Vec<Option<Vec<f64>>>)> = draws
                .par_iter()
                .map(|((e, t), eps)| {
                    let ep = &ds.episodes[*e];
                    let mut tape = Tape::new();
                    let leaves = model.params.leaves(&mut tape);

                    // conv features once per unique frame in the span
                    let first = t.saturating_sub(m - 1);
                    let last = t + h_exec - 1;
                    let mut frame_feat = std::collections::BTreeMap::new();
                    for u in first..=last {
                        let img = store.image(*e, u);
                        let leaf = tape.leaf(img, &[1, IMG, IMG], false);
                        let feat = model.encoder.frame_features_tape(&mut tape, &leaves, leaf);
                        frame_feat.insert(u, feat);
                    }

                    // per-step dynamic features + differential losses
                    let mut features = Vec::with_capacity(h_exec);
                    let mut diff_losses = Vec::with_capacity(h_exec);
                    for s in 0..h_exec {
                        let u = t + s;
                        let window: Vec<TensorId> = (0..m)
                            .map(|i| {
                                let idx = (u + i + 1).saturating_sub(m).max(first);
                                frame_feat[&idx]
                            })
                            .collect();
                        let (f, diffs) = model.encoder.extract_tape(&mut tape, &leaves, &window);
                        if model.arch.lambda_diff > 0.0 {
                            let dl = model.encoder.diff_loss_tape(
                                &mut tape,
                                &leaves,
                                f,
                                *diffs.last().unwrap(),
                            );
                            diff_losses.push(dl);
                        }
                        features.push(f);
                    }

                    // normalized executed sub-chunk
                    let mut chunk = Vec::with_capacity(h_exec * 2);
                    for s in 0..h_exec {
                        let a = ep.actions[(*t + s).min(ep.len() - 1)];
                        let na = bounds.normalize(a);
                        chunk.push(na[0]);
                        chunk.push(na[1]);
                    }
                    let chunk_row = tape.leaf(chunk.clone(), &[1, h_exec * 2], false);
                    let target = tape.leaf(chunk, &[h_exec, 2], false);

                    let (mu, logvar) = model.encode_tape(&mut tape, &leaves, chunk_row);
                    let eps_leaf = tape.leaf(eps.clone(), &[1, model.arch.d_z], false);
                    let z = model.reparameterize_tape(&mut tape, mu, logvar, eps_leaf);
                    let recon = model.decode_tape(&mut tape, &leaves, z, &features);

                    let diff_mean = if diff_losses.is_empty() {
                        None
                    } else {
                        let rows: Vec<TensorId> = diff_losses
                            .iter()
                            .map(|&d| tape.reshape(d, &[1, 1]))
                            .collect();
                        let stacked = tape.concat(&rows, 1);
                        Some(tape.mean(stacked))
                    };
                    let loss =
                        model.total_loss_tape(&mut tape, recon, target, mu, logvar, diff_mean);
                    tape.backward(loss);
                    (tape.value(loss), model.params.collect_grads(&tape, &leaves))
                })
                .collect();

            let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.params.len()];
            let mut batch_loss = 0.0;
            let bsz = results.len() as f64;
            for (loss, g) in &results {
                batch_loss += loss / bsz;
                for (acc, gi) in grads.iter_mut().zip(g.iter()) {
                    if let Some(gi) = gi {
                        match acc {
                            Some(a) => {
                                for (av, gv) in a.iter_mut().zip(gi.iter()) {
                                    *av += gv / bsz;
                                }
                            }
                            None => *acc = Some(gi.iter().map(|v| v / bsz).collect()),
                        }
                    }
                }
            }
            assert!(batch_loss.is_finite(), "stage-1 training loss became non-finite");
            opt.step(&mut model.params, &grads);
            epoch_loss += batch_loss;
            batches += 1;
        }
        eprintln!(
            "[train-fast] epoch {}/{} loss {:.6}",
            epoch + 1,
            cfg.epochs_stage1,
            epoch_loss / batches.max(1) as f64
        );
    }
    model.frozen = true;
    model
}

/// Mean reconstruction MSE of the frozen model over dataset chunks, using
/// posterior means (the inference path). Windows come from each episode's
/// own frames, mirroring training.
pub fn reconstruction_mse(model: &Stage1Model, ds: &Dataset, max_samples: usize) -> f64 {
    let bounds = ActionBounds { a_min: ds.a_min, a_max: ds.a_max };
    let store = FrameStore::build(ds);
    let m = model.arch.encoder.m;
    let h_exec = model.arch.h_exec;
    let mut index = Vec::new();
    for (e, ep) in ds.episodes.iter().enumerate() {
        for t in (0..ep.len()).step_by(h_exec) {
            index.push((e, t));
        }
    }
    let stride = (index.len() / max_samples.max(1)).max(1);
    let samples: Vec<(usize, usize)> = index.into_iter().step_by(stride).collect();
    let total: f64 = samples
        .par_iter()
        .map(|&(e, t)| {
            let ep = &ds.episodes[e];
            let mut chunk = Vec::with_capacity(h_exec * 2);
            for s in 0..h_exec {
                let a = ep.actions[(t + s).min(ep.len() - 1)];
                let na = bounds.normalize(a);
                chunk.push(na[0]);
                chunk.push(na[1]);
            }
            let (mu, _) = model.vae_encode_fast(&chunk);
            let mut features = Vec::with_capacity(h_exec);
            for s in 0..h_exec {
                let u = t + s;
                let images: Vec<Vec<f64>> = (0..m)
                    .map(|i| store.image(e, (u + i + 1).saturating_sub(m)))
                    .collect();
                let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
                features.push(model.encoder_extract_images(&refs));
            }
            let recon = model.vae_decode_batch_fast(&mu, &features);
            let mut mse = 0.0;
            for (s, a) in recon.iter().enumerate() {
                let dx = a[0] - chunk[2 * s];
                let dy = a[1] - chunk[2 * s + 1];
                mse += dx * dx + dy * dy;
            }
            mse / (h_exec * 2) as f64
        })
        .sum();
    total / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos;

    fn small_model(seed: u64) -> Stage1Model {
        let cfg = Config::default();
        Stage1Model::new(Stage1Arch::from_config(&cfg), seed)
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let model = small_model(3);
        let chunk: Vec<f64> = (0..16).map(|i| (i as f64) / 16.0 - 0.5).collect();
        let (mu1, lv1) = model.vae_encode_fast(&chunk);
        let (mu2, lv2) = model.vae_encode_fast(&chunk);
        assert_eq!(mu1, mu2);
        assert_eq!(lv1, lv2);
        assert_eq!(mu1.len(), 32);
        assert_eq!(lv1.len(), 32);
    }

    #[test]
    #[should_panic(expected = "wrong chunk length")]
    fn encode_rejects_wrong_length() {
        let model = small_model(3);
        model.vae_encode_fast(&[0.0; 10]);
    }

    #[test]
    fn reparameterize_identities() {
        let model = small_model(7);
        let mut tape = Tape::new();
        let mu_v: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        let mu = tape.leaf(mu_v.clone(), &[1, 32], false);
        // eps = 0 -> z = mu
        let lv = tape.leaf(vec![-0.7; 32], &[1, 32], false);
        let eps0 = tape.zeros(&[1, 32]);
        let z = model.reparameterize_tape(&mut tape, mu, lv, eps0);
        for (a, b) in tape.data(z).iter().zip(&mu_v) {
            assert!((a - b).abs() < 1e-12);
        }
        // logvar = 0 -> z = mu + eps
        let lv0 = tape.zeros(&[1, 32]);
        let ev: Vec<f64> = (0..32).map(|i| (i as f64) * 0.01 - 0.15).collect();
        let epst = tape.leaf(ev.clone(), &[1, 32], false);
        let z = model.reparameterize_tape(&mut tape, mu, lv0, epst);
        for ((a, b), e) in tape.data(z).iter().zip(&mu_v).zip(&ev) {
            assert!((a - (b + e)).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let model = small_model(7);
        let mu_v = vec![0.8, -1.2];
        let lv_v = vec![0.4, -0.6];
        let mut rng = Rng::new(99);
        let n = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let mut tape = Tape::new();
            let mu = tape.leaf(mu_v.clone(), &[1, 2], false);
            let lv = tape.leaf(lv_v.clone(), &[1, 2], false);
            let e = tape.leaf(vec![rng.next_normal(), rng.next_normal()], &[1, 2], false);
            let z = model.reparameterize_tape(&mut tape, mu, lv, e);
            mean[0] += tape.data(z)[0];
            mean[1] += tape.data(z)[1];
        }
        for d in 0..2 {
            mean[d] /= n as f64;
            let sd = (lv_v[d] as f64).exp().sqrt();
            assert!(
                (mean[d] - mu_v[d]).abs() < 3.0 * sd / 100.0,
                "dim {d}: sample mean {} vs mu {}",
                mean[d],
                mu_v[d]
            );
        }
    }

    #[test]
    fn reparameterize_gradients() {
        // dz/dmu = 1 and dz/dlogvar = 0.5 sigma eps, by finite differences
        let model = small_model(1);
        let err = crate::tensor::grad_check_multi(
            |t, ids| {
                let e = t.leaf(vec![0.37, -0.9, 1.4], &[1, 3], false);
                let z = model.reparameterize_tape(t, ids[0], ids[1], e);
                let sq = t.mul(z, z);
                t.sum(sq)
            },
            &[
                (vec![0.3, -0.5, 0.9], vec![1, 3]),
                (vec![0.2, 0.0, -1.1], vec![1, 3]),
            ],
            1e-6,
        );
        assert!(err < 1e-6, "reparameterization grad err {err}");
    }

    #[test]
    fn gaussian_kl_matches_closed_form() {
        // mu = 1, logvar = 0 gives 0.5 per dimension
        let mut tape = Tape::new();
        let mu = tape.leaf(vec![1.0], &[1, 1], false);
        let lv = tape.leaf(vec![0.0], &[1, 1], false);
        let kl = gaussian_kl_tape(&mut tape, mu, lv);
        assert!((tape.value(kl) - 0.5).abs() < 1e-12);

        let mut rng = Rng::new(12);
        for _ in 0..100 {
            let mu_v: Vec<f64> = (0..8).map(|_| rng.range(-2.0, 2.0)).collect();
            let lv_v: Vec<f64> = (0..8).map(|_| rng.range(-2.0, 1.0)).collect();
            let mut tape = Tape::new();
            let mu = tape.leaf(mu_v.clone(), &[1, 8], false);
            let lv = tape.leaf(lv_v.clone(), &[1, 8], false);
            let kl = gaussian_kl_tape(&mut tape, mu, lv);
            let expect = gaussian_kl_scalar(&mu_v, &lv_v);
            assert!(
                (tape.value(kl) - expect).abs() < 1e-10,
                "kl {} vs closed form {}",
                tape.value(kl),
                expect
            );
            assert!(tape.value(kl) >= -1e-12);
        }
    }

    #[test]
    fn total_loss_vanishes_at_perfect_fit() {
        let model = small_model(5);
        let mut tape = Tape::new();
        let a = tape.leaf(vec![0.1; 16], &[8, 2], false);
        let mu = tape.zeros(&[1, 32]);
        let lv = tape.zeros(&[1, 32]);
        let loss = model.total_loss_tape(&mut tape, a, a, mu, lv, None);
        assert!(tape.value(loss).abs() < 1e-12);
    }

    #[test]
    fn decoder_is_causal() {
        let model = small_model(9);
        let mut rng = Rng::new(4);
        let z: Vec<f64> = (0..32).map(|_| rng.range(-1.0, 1.0)).collect();
        let base: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..128).map(|_| rng.range(-1.0, 1.0)).collect())
            .collect();
        let out_base = model.vae_decode_batch_fast(&z, &base);
        // change features at step 4: steps 0..4 identical, 4.. differ
        let mut changed = base.clone();
        for v in changed[4].iter_mut() {
            *v += 0.5;
        }
        let out_changed = model.vae_decode_batch_fast(&z, &changed);
        for s in 0..4 {
            assert_eq!(out_base[s], out_changed[s], "step {s} must be untouched");
        }
        assert_ne!(out_base[4], out_changed[4]);
        let tail_differs = (4..8).any(|s| out_base[s] != out_changed[s]);
        assert!(tail_differs);
    }

    #[test]
    fn decode_tape_matches_fast_path() {
        let model = small_model(11);
        let mut rng = Rng::new(8);
        let z: Vec<f64> = (0..32).map(|_| rng.range(-1.0, 1.0)).collect();
        let feats: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..128).map(|_| rng.range(-1.0, 1.0)).collect())
            .collect();
        let fast = model.vae_decode_batch_fast(&z, &feats);

        let mut tape = Tape::new();
        let leaves = model.params.leaves(&mut tape);
        let zt = tape.leaf(z.clone(), &[1, 32], false);
        let ft: Vec<TensorId> =
            feats.iter().map(|f| tape.leaf(f.clone(), &[1, 128], false)).collect();
        let recon = model.decode_tape(&mut tape, &leaves, zt, &ft);
        let data = tape.data(recon);
        for (s, a) in fast.iter().enumerate() {
            assert_eq!(data[2 * s].to_bits(), a[0].to_bits());
            assert_eq!(data[2 * s + 1].to_bits(), a[1].to_bits());
        }
    }

    #[test]
    fn encoder_grad_check_through_vae_encode() {
        let model = small_model(13);
        let mut rng = Rng::new(3);
        let chunk: Vec<f64> = (0..16).map(|_| rng.range(-1.0, 1.0)).collect();
        // check gradients w.r.t. the first encoder layer's weights
        let idx = model.params.index_of("vae/enc/fc1/w").unwrap();
        let err = crate::tensor::grad_check_multi(
            |t, ids| {
                let mut leaves = model.params.leaves(t);
                leaves[idx] = ids[0];
                let c = t.leaf(chunk.clone(), &[1, 16], false);
                let (mu, logvar) = model.encode_tape(t, &leaves, c);
                let kl = gaussian_kl_tape(t, mu, logvar);
                let musq = t.mul(mu, mu);
                let msum = t.sum(musq);
                t.add(kl, msum)
            },
            &[(model.params.data(idx).to_vec(), model.params.shape(idx).to_vec())],
            1e-5,
        );
        assert!(err < 1e-4, "vae encoder grad err {err}");
    }

    #[test]
    fn stage1_smoke_training_descends_and_is_deterministic() {
        let ds = demos::generate(2, 21, 3.0).unwrap();
        let mut cfg = Config::default();
        cfg.epochs_stage1 = 1;
        cfg.batch_stage1 = 8;

        let probe = |model: &Stage1Model| reconstruction_mse(model, &ds, 16);
        let untrained = small_model(17);
        let before = probe(&untrained);
        let m1 = train_stage1(&ds, &cfg, 17, false, false, false);
        let after = probe(&m1);
        assert!(
            after < before,
            "stage-1 training did not improve reconstruction: {before} -> {after}"
        );
        let m2 = train_stage1(&ds, &cfg, 17, false, false, false);
        assert_eq!(m1.checksum(), m2.checksum());
    }

    #[test]
    fn stage1_checkpoint_round_trip() {
        let ds = demos::generate(1, 31, 3.0).unwrap();
        let mut cfg = Config::default();
        cfg.epochs_stage1 = 1;
        cfg.batch_stage1 = 8;
        let model = train_stage1(&ds, &cfg, 23, false, true, false);
        let dir = std::env::temp_dir().join("dcdp_s1_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fast.ckpt");
        model.save(&path).unwrap();
        let loaded = Stage1Model::load(&path).unwrap();
        assert_eq!(model.checksum(), loaded.checksum());
        assert_eq!(model.arch, loaded.arch);
        assert!(loaded.arch.encoder.ablate_ta);
        // inference agrees
        let chunk: Vec<f64> = (0..16).map(|i| i as f64 * 0.05 - 0.4).collect();
        assert_eq!(model.vae_encode_fast(&chunk).0, loaded.vae_encode_fast(&chunk).0);
    }

}
