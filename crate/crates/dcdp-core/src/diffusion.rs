//! Conditional denoising diffusion policy over action chunks.
//!
//! The slow policy: given the current low-dimensional state vector, a DDPM
//! with a linear beta schedule maps Gaussian noise to a 16-step action chunk
//! in normalized space. The denoiser is an MLP trunk over (noisy chunk,
//! learned timestep embedding, projected conditioning). After training the
//! parameters are frozen; ancestral sampling runs on the tape-free path.

use crate::config::Config;
use crate::demos::Dataset;
use crate::env::WORKSPACE;
use crate::kernels;
use crate::nn::{Adam, Embedding, Linear, ParamSet};
use crate::rng::Rng;
use crate::runtime::{normalize_action, ActionBounds};
use crate::tensor::{Tape, TensorId};
use rayon::prelude::*;

/// Linear-beta DDPM schedule with precomputed alpha products.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_diff: usize, beta_start: f64, beta_end: f64) -> Self {
        assert!(t_diff >= 2);
        assert!(beta_start > 0.0 && beta_end < 1.0 && beta_start < beta_end);
        let mut betas = Vec::with_capacity(t_diff);
        for i in 0..t_diff {
            let f = i as f64 / (t_diff - 1) as f64;
            betas.push(beta_start + (beta_end - beta_start) * f);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_diff);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        NoiseSchedule { betas, alphas, alpha_bars }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Forward diffusion: `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` with
/// t in [1, T].
pub fn forward_noise(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
    assert!(t >= 1 && t <= schedule.len(), "diffusion step {t} out of range");
    assert_eq!(x0.len(), eps.len());
    let ab = schedule.alpha_bars[t - 1];
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect()
}

/// Architecture hyperparameters, stored in the checkpoint for validation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionArch {
    pub t_diff: usize,
    pub h_pred: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub t_embed_dim: usize,
    pub cond_dim: usize,
    pub trunk_width: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl DiffusionArch {
    pub fn from_config(cfg: &Config) -> Self {
        DiffusionArch {
            t_diff: cfg.t_diff,
            h_pred: cfg.h_pred,
            action_dim: 2,
            obs_dim: 5,
            t_embed_dim: cfg.t_embed_dim,
            cond_dim: cfg.cond_dim,
            trunk_width: cfg.trunk_width,
            beta_start: cfg.beta_start,
            beta_end: cfg.beta_end,
        }
    }

    pub fn chunk_len(&self) -> usize {
        self.h_pred * self.action_dim
    }
}

/// Input featurization of the conditioning projection. The block angle
/// arrives as theta/pi, which wraps discontinuously at +-1; the sin/cos
/// pair restores continuity, and pusher-block offsets spare the trunk from
/// re-deriving them.
pub const COND_FEATURES: usize = 8;

pub fn cond_features(state_vec: &[f64]) -> [f64; COND_FEATURES] {
    let th = state_vec[4] * std::f64::consts::PI;
    [
        state_vec[0],
        state_vec[1],
        state_vec[2],
        state_vec[3],
        th.sin(),
        th.cos(),
        state_vec[2] - state_vec[0],
        state_vec[3] - state_vec[1],
    ]
}

/// The denoiser network plus everything needed to sample: parameters,
/// schedule, action bounds, and a frozen flag checked by training code.
pub struct DiffusionPolicy {
    pub arch: DiffusionArch,
    pub params: ParamSet,
    pub schedule: NoiseSchedule,
    pub bounds: ActionBounds,
    pub frozen: bool,
    t_embed: Embedding,
    cond_proj: Linear,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    head: Linear,
}

impl DiffusionPolicy {
    pub fn new(arch: DiffusionArch, bounds: ActionBounds, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = Rng::new(seed ^ 0x6470_5f69_6e69_7431);
        let t_embed = Embedding::new(&mut params, &mut rng, "dp/t_embed", arch.t_diff, arch.t_embed_dim);
        let cond_proj = Linear::new(&mut params, &mut rng, "dp/cond", COND_FEATURES, arch.cond_dim);
        let in_dim = arch.chunk_len() + arch.t_embed_dim + arch.cond_dim;
        let fc1 = Linear::new(&mut params, &mut rng, "dp/fc1", in_dim, arch.trunk_width);
        let fc2 = Linear::new(&mut params, &mut rng, "dp/fc2", arch.trunk_width, arch.trunk_width);
        let fc3 = Linear::new(&mut params, &mut rng, "dp/fc3", arch.trunk_width, arch.trunk_width);
        let head = Linear::new(&mut params, &mut rng, "dp/head", arch.trunk_width, arch.chunk_len());
        params.add("dp/bounds/a_min", &[2], bounds.a_min.to_vec(), false);
        params.add("dp/bounds/a_max", &[2], bounds.a_max.to_vec(), false);
        params.add(
            "dp/arch",
            &[9],
            vec![
                arch.t_diff as f64,
                arch.h_pred as f64,
                arch.action_dim as f64,
                arch.obs_dim as f64,
                arch.t_embed_dim as f64,
                arch.cond_dim as f64,
                arch.trunk_width as f64,
                arch.beta_start,
                arch.beta_end,
            ],
            false,
        );
        let schedule = NoiseSchedule::linear(arch.t_diff, arch.beta_start, arch.beta_end);
        DiffusionPolicy {
            arch,
            params,
            schedule,
            bounds,
            frozen: false,
            t_embed,
            cond_proj,
            fc1,
            fc2,
            fc3,
            head,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::checkpoint::FormatError> {
        self.params.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::checkpoint::FormatError> {
        let entries = crate::checkpoint::load(path)?;
        let arch_e = entries
            .iter()
            .find(|e| e.name == "dp/arch")
            .ok_or_else(|| crate::checkpoint::FormatError::Invalid("missing dp/arch".into()))?;
        let a = &arch_e.data;
        let arch = DiffusionArch {
            t_diff: a[0] as usize,
            h_pred: a[1] as usize,
            action_dim: a[2] as usize,
            obs_dim: a[3] as usize,
            t_embed_dim: a[4] as usize,
            cond_dim: a[5] as usize,
            trunk_width: a[6] as usize,
            beta_start: a[7],
            beta_end: a[8],
        };
        let bounds_min = entries
            .iter()
            .find(|e| e.name == "dp/bounds/a_min")
            .ok_or_else(|| crate::checkpoint::FormatError::Invalid("missing bounds".into()))?;
        let bounds_max = entries
            .iter()
            .find(|e| e.name == "dp/bounds/a_max")
            .ok_or_else(|| crate::checkpoint::FormatError::Invalid("missing bounds".into()))?;
        let bounds = ActionBounds {
            a_min: [bounds_min.data[0], bounds_min.data[1]],
            a_max: [bounds_max.data[0], bounds_max.data[1]],
        };
        let mut dp = DiffusionPolicy::new(arch, bounds, 0);
        dp.params.load_entries(&entries)?;
        dp.frozen = true;
        Ok(dp)
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    /// Denoiser forward on the tape (training path): predicts the noise for
    /// a batch row. `x` is [1, chunk], `cond` is [1, obs].
    fn predict_eps_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        x: TensorId,
        t: usize,
        cond: TensorId,
    ) -> TensorId {
        let te = self.t_embed.forward(tape, leaves, t - 1);
        let c = self.cond_proj.forward(tape, leaves, cond);
        let c = tape.relu(c);
        let joint = tape.concat(&[x, te, c], 1);
        let h = self.fc1.forward(tape, leaves, joint);
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, leaves, h);
        let h = tape.relu(h);
        let h = self.fc3.forward(tape, leaves, h);
        let h = tape.relu(h);
        self.head.forward(tape, leaves, h)
    }

    /// Tape-free denoiser forward for sampling. `cond` is the raw 5-float
    /// state vector.
    pub fn predict_eps(&self, x: &[f64], t: usize, cond: &[f64]) -> Vec<f64> {
        let te = self.t_embed.row(&self.params, t - 1);
        let feats = cond_features(cond);
        let mut c = Vec::new();
        self.cond_proj.forward_fast(&self.params, &feats, &mut c);
        let mut cr = vec![0.0; c.len()];
        kernels::relu_slice(&c, &mut cr);
        let mut joint = Vec::with_capacity(x.len() + te.len() + cr.len());
        joint.extend_from_slice(x);
        joint.extend_from_slice(te);
        joint.extend_from_slice(&cr);
        let mut h1 = Vec::new();
        self.fc1.forward_fast(&self.params, &joint, &mut h1);
        let mut h1r = vec![0.0; h1.len()];
        kernels::relu_slice(&h1, &mut h1r);
        let mut h2 = Vec::new();
        self.fc2.forward_fast(&self.params, &h1r, &mut h2);
        let mut h2r = vec![0.0; h2.len()];
        kernels::relu_slice(&h2, &mut h2r);
        let mut h3 = Vec::new();
        self.fc3.forward_fast(&self.params, &h2r, &mut h3);
        let mut h3r = vec![0.0; h3.len()];
        kernels::relu_slice(&h3, &mut h3r);
        let mut out = Vec::new();
        self.head.forward_fast(&self.params, &h3r, &mut out);
        out
    }

    /// Ancestral DDPM sampling conditioned on `state_vec`, returning a raw
    /// (denormalized, workspace-clamped) chunk of `h_pred` actions.
    pub fn sample_chunk(&self, state_vec: &[f64], rng: &mut Rng) -> Vec<[f64; 2]> {
        let n = self.arch.chunk_len();
        let mut x = vec![0.0; n];
        rng.fill_normal(&mut x);
        for t in (1..=self.schedule.len()).rev() {
            let eps = self.predict_eps(&x, t, state_vec);
            let a = self.schedule.alphas[t - 1];
            let ab = self.schedule.alpha_bars[t - 1];
            let coef = (1.0 - a) / (1.0 - ab).sqrt();
            let inv_sqrt_a = 1.0 / a.sqrt();
            for i in 0..n {
                x[i] = inv_sqrt_a * (x[i] - coef * eps[i]);
            }
            if t > 1 {
                let ab_prev = self.schedule.alpha_bars[t - 2];
                let var = (1.0 - ab_prev) / (1.0 - ab) * self.schedule.betas[t - 1];
                let sd = var.sqrt();
                for xi in x.iter_mut() {
                    *xi += sd * rng.next_normal();
                }
            }
        }
        // denormalize and clamp to the workspace
        let mut out = Vec::with_capacity(self.arch.h_pred);
        for i in 0..self.arch.h_pred {
            let raw = self.bounds.denormalize([x[2 * i], x[2 * i + 1]]);
            out.push([raw[0].clamp(0.0, WORKSPACE), raw[1].clamp(0.0, WORKSPACE)]);
        }
        out
    }
}

/// One training example: conditioning state and a normalized target chunk.
struct ChunkSample {
    cond: [f64; 5],
    chunk: Vec<f64>,
}

/// Flatten the dataset into per-timestep chunk samples. Chunks that run off
/// the episode end repeat the last action.
fn collect_samples(ds: &Dataset, h_pred: usize) -> Vec<ChunkSample> {
    let goal = crate::env::GoalSpec::default();
    let bounds = ActionBounds { a_min: ds.a_min, a_max: ds.a_max };
    let mut out = Vec::new();
    for ep in &ds.episodes {
        for t in 0..ep.len() {
            let cond = crate::env::state_vec(&ep.states[t]);
            let mut chunk = Vec::with_capacity(h_pred * 2);
            for s in 0..h_pred {
                let a = ep.actions[(t + s).min(ep.len() - 1)];
                let na = normalize_action(a, &bounds);
                chunk.push(na[0]);
                chunk.push(na[1]);
            }
            out.push(ChunkSample { cond, chunk });
        }
    }
    let _ = goal;
    out
}

/// Train the denoiser with Adam on randomly drawn (chunk, t, eps)
/// minibatches. Deterministic for a fixed seed; gradients are accumulated
/// in sample order even though sample losses run in parallel.
pub fn train(ds: &Dataset, cfg: &Config, seed: u64) -> DiffusionPolicy {
    let arch = DiffusionArch::from_config(cfg);
    let bounds = ActionBounds { a_min: ds.a_min, a_max: ds.a_max };
    let mut dp = DiffusionPolicy::new(arch, bounds, seed);
    let samples = collect_samples(ds, dp.arch.h_pred);
    assert!(!samples.is_empty(), "empty dataset");
    let mut opt = Adam::new(&dp.params, cfg.lr_dp);
    let mut rng = Rng::new(seed ^ 0x6470_5f74_7261_696e);

    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs_dp {
        // fine-tuning phase: drop the step size for the last third
        opt.lr = if 3 * epoch >= 2 * cfg.epochs_dp { cfg.lr_dp * 0.2 } else { cfg.lr_dp };
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_dp) {
            // per-sample draws fixed before the parallel section
            let draws: Vec<(usize, usize, Vec<f64>, u64)> = batch
                .iter()
                .map(|&idx| {
                    let t = 1 + rng.next_usize(dp.arch.t_diff);
                    let mut eps = vec![0.0; dp.arch.chunk_len()];
                    rng.fill_normal(&mut eps);
                    (idx, t, eps, 0)
                })
                .collect();

            // one tape per worker chunk: parameters enter each tape once
            // and the chunk split is fixed, so the reduction order (and
            // hence the training run) is bit-deterministic
            let n_chunks = rayon::current_num_threads().clamp(1, 8);
            let chunk_size = draws.len().div_ceil(n_chunks);
            let results: Vec<(f64, Vec<Option<Vec<f64>>>)> = draws
                .par_chunks(chunk_size)
                .map(|part| {
                    let mut tape = Tape::new();
                    let leaves = dp.params.leaves(&mut tape);
                    let mut losses = Vec::with_capacity(part.len());
                    for (idx, t, eps, _) in part {
                        let sample = &samples[*idx];
                        let noisy = forward_noise(&dp.schedule, &sample.chunk, *t, eps);
                        let x = tape.leaf(noisy, &[1, dp.arch.chunk_len()], false);
                        let feats = cond_features(&sample.cond);
                        let cond = tape.leaf(feats.to_vec(), &[1, COND_FEATURES], false);
                        let target = tape.leaf(eps.clone(), &[1, dp.arch.chunk_len()], false);
                        let pred = dp.predict_eps_tape(&mut tape, &leaves, x, *t, cond);
                        let l = tape.mse(pred, target);
                        losses.push(tape.reshape(l, &[1, 1]));
                    }
                    let stacked = tape.concat(&losses, 1);
                    let sum = tape.sum(stacked);
                    tape.backward(sum);
                    (tape.value(sum), dp.params.collect_grads(&tape, &leaves))
                })
                .collect();

            // ordered reduction over the fixed chunk list
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; dp.params.len()];
            let mut batch_loss = 0.0;
            let bsz = draws.len() as f64;
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
                            None => {
                                *acc = Some(gi.iter().map(|v| v / bsz).collect());
                            }
                        }
                    }
                }
            }
            assert!(batch_loss.is_finite(), "diffusion training loss became non-finite");
            opt.step(&mut dp.params, &grads);
            epoch_loss += batch_loss;
            batches += 1;
        }
        eprintln!(
            "[train-dp] epoch {}/{} loss {:.6}",
            epoch + 1,
            cfg.epochs_dp,
            epoch_loss / batches.max(1) as f64
        );
    }
    dp.frozen = true;
    dp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos;

    fn small_cfg() -> Config {
        let mut cfg = Config::default();
        cfg.epochs_dp = 2;
        cfg.batch_dp = 16;
        cfg
    }

    #[test]
    fn schedule_monotone_and_bounded() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.02);
        for w in s.betas.windows(2) {
            assert!(w[0] < w[1]);
        }
        for w in s.alpha_bars.windows(2) {
            assert!(w[0] > w[1]);
        }
        assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(s.alpha_bars.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn forward_noise_limits() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.02);
        let x0 = vec![0.3, -0.7, 0.1];
        // eps = 0 keeps the signal direction, scaled by sqrt(abar)
        let xt = forward_noise(&s, &x0, 1, &[0.0, 0.0, 0.0]);
        let sa = s.alpha_bars[0].sqrt();
        for (a, b) in xt.iter().zip(&x0) {
            assert!((a - sa * b).abs() < 1e-12);
        }
        // x0 = 0 gives pure scaled noise
        let e = vec![1.0, -2.0, 0.5];
        let xt = forward_noise(&s, &[0.0, 0.0, 0.0], 50, &e);
        let sn = (1.0 - s.alpha_bars[49]).sqrt();
        for (a, b) in xt.iter().zip(&e) {
            assert!((a - sn * b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_noise_variance_matches_monte_carlo() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.02);
        let t = 25;
        let x0 = [0.4];
        let mut rng = Rng::new(77);
        let n = 10_000;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let xt = forward_noise(&s, &x0, t, &[rng.next_normal()]);
            let delta = xt[0] - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (xt[0] - mean);
        }
        let var = m2 / n as f64;
        let expect = 1.0 - s.alpha_bars[t - 1];
        assert!(
            (var - expect).abs() / expect < 0.05,
            "variance {var} vs expected {expect}"
        );
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn forward_noise_rejects_bad_t() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.02);
        forward_noise(&s, &[0.0], 11, &[0.0]);
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let ds = demos::generate(2, 3, 3.0).unwrap();
        let cfg = small_cfg();
        let dp = train(&ds, &cfg, 5);
        let obs = crate::env::state_vec(&ds.episodes[0].states[0]);
        let c1 = dp.sample_chunk(&obs, &mut Rng::new(9));
        let c2 = dp.sample_chunk(&obs, &mut Rng::new(9));
        assert_eq!(c1.len(), 16);
        for (a, b) in c1.iter().zip(&c2) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        for a in &c1 {
            assert!(a[0] >= 0.0 && a[0] <= WORKSPACE && a[1] >= 0.0 && a[1] <= WORKSPACE);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = demos::generate(2, 11, 3.0).unwrap();
        let mut cfg = small_cfg();
        cfg.epochs_dp = 1;

        // measure loss on a fixed probe set before and after training
        let probe_loss = |dp: &DiffusionPolicy| -> f64 {
            let samples = collect_samples(&ds, dp.arch.h_pred);
            let mut rng = Rng::new(123);
            let mut total = 0.0;
            let n = 64.min(samples.len());
            for i in 0..n {
                let s = &samples[i * samples.len() / n];
                let t = 1 + rng.next_usize(dp.arch.t_diff);
                let mut eps = vec![0.0; dp.arch.chunk_len()];
                rng.fill_normal(&mut eps);
                let noisy = forward_noise(&dp.schedule, &s.chunk, t, &eps);
                let pred = dp.predict_eps(&noisy, t, &s.cond);
                total += pred
                    .iter()
                    .zip(&eps)
                    .map(|(p, e)| (p - e) * (p - e))
                    .sum::<f64>()
                    / eps.len() as f64;
            }
            total / n as f64
        };

        let arch = DiffusionArch::from_config(&cfg);
        let bounds = ActionBounds { a_min: ds.a_min, a_max: ds.a_max };
        let untrained = DiffusionPolicy::new(arch, bounds, 5);
        let before = probe_loss(&untrained);
        let dp = train(&ds, &cfg, 5);
        let after = probe_loss(&dp);
        assert!(after < before, "training did not reduce loss: {before} -> {after}");

        let dp2 = train(&ds, &cfg, 5);
        assert_eq!(dp.checksum(), dp2.checksum(), "same seed must give identical checkpoints");
    }

    #[test]
    fn checkpoint_round_trip_preserves_params_and_arch() {
        let ds = demos::generate(1, 2, 3.0).unwrap();
        let mut cfg = small_cfg();
        cfg.epochs_dp = 1;
        let dp = train(&ds, &cfg, 7);
        let dir = std::env::temp_dir().join("dcdp_dp_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dp.ckpt");
        dp.save(&path).unwrap();
        let loaded = DiffusionPolicy::load(&path).unwrap();
        assert_eq!(dp.checksum(), loaded.checksum());
        assert_eq!(dp.arch, loaded.arch);
        assert!(loaded.frozen);
        let obs = [0.1, -0.2, 0.0, 0.3, 0.5];
        let a = dp.sample_chunk(&obs, &mut Rng::new(4));
        let b = loaded.sample_chunk(&obs, &mut Rng::new(4));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn tape_and_fast_denoiser_agree() {
        let ds = demos::generate(1, 4, 3.0).unwrap();
        let arch = DiffusionArch::from_config(&Config::default());
        let bounds = ActionBounds { a_min: ds.a_min, a_max: ds.a_max };
        let dp = DiffusionPolicy::new(arch, bounds, 3);
        let mut rng = Rng::new(6);
        let mut x = vec![0.0; dp.arch.chunk_len()];
        rng.fill_normal(&mut x);
        let cond = [0.2, -0.4, 0.6, 0.0, -0.9];

        let fast = dp.predict_eps(&x, 17, &cond);
        let mut tape = Tape::new();
        let leaves = dp.params.leaves(&mut tape);
        let xt = tape.leaf(x.clone(), &[1, dp.arch.chunk_len()], false);
        let ct = tape.leaf(cond_features(&cond).to_vec(), &[1, COND_FEATURES], false);
        let pred = dp.predict_eps_tape(&mut tape, &leaves, xt, 17, ct);
        for (a, b) in tape.data(pred).iter().zip(&fast) {
            assert_eq!(a.to_bits(), b.to_bits(), "fast path must match tape forward");
        }
    }
}
