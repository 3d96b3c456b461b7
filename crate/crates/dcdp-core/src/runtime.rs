//! Closed-loop execution: chunk normalization, the per-step dynamic
//! correction runtime, and the baseline execution modes.

use crate::diffusion::DiffusionPolicy;
use crate::encoder::HistoryBank;
use crate::env::WORKSPACE;
use crate::rng::Rng;
use crate::vae::Stage1Model;

/// Per-dimension action bounds from dataset statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionBounds {
    pub a_min: [f64; 2],
    pub a_max: [f64; 2],
}

impl ActionBounds {
    pub fn validate(&self) {
        for d in 0..2 {
            assert!(
                self.a_min[d] < self.a_max[d],
                "degenerate action bounds on dim {d}: [{}, {}]",
                self.a_min[d],
                self.a_max[d]
            );
        }
    }

    /// `a_norm = 2 (a - min) / (max - min) - 1`, elementwise.
    pub fn normalize(&self, a: [f64; 2]) -> [f64; 2] {
        self.validate();
        [
            2.0 * (a[0] - self.a_min[0]) / (self.a_max[0] - self.a_min[0]) - 1.0,
            2.0 * (a[1] - self.a_min[1]) / (self.a_max[1] - self.a_min[1]) - 1.0,
        ]
    }

    /// Exact inverse of [`ActionBounds::normalize`].
    pub fn denormalize(&self, a: [f64; 2]) -> [f64; 2] {
        self.validate();
        [
            (a[0] + 1.0) * 0.5 * (self.a_max[0] - self.a_min[0]) + self.a_min[0],
            (a[1] + 1.0) * 0.5 * (self.a_max[1] - self.a_min[1]) + self.a_min[1],
        ]
    }
}

pub fn normalize_action(a: [f64; 2], bounds: &ActionBounds) -> [f64; 2] {
    bounds.normalize(a)
}

pub fn normalize_chunk(chunk: &[[f64; 2]], bounds: &ActionBounds) -> Vec<f64> {
    let mut out = Vec::with_capacity(chunk.len() * 2);
    for a in chunk {
        let n = bounds.normalize(*a);
        out.push(n[0]);
        out.push(n[1]);
    }
    out
}

/// Which execution scheme a rollout uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuntimeMode {
    /// Sample a chunk, execute the first `h_exec` actions blindly.
    OpenLoop,
    /// Resample every step, execute one action.
    ClosedLoop,
    /// Resample every step, blend overlapping predictions.
    TemporalEnsemble,
    /// Sample a chunk every `h_exec` steps; decode each executed action
    /// through the frozen VAE with refreshed dynamic features.
    Dcdp,
}

impl RuntimeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuntimeMode::OpenLoop => "ol",
            RuntimeMode::ClosedLoop => "cl",
            RuntimeMode::TemporalEnsemble => "te",
            RuntimeMode::Dcdp => "dcdp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ol" | "open-loop" => Some(RuntimeMode::OpenLoop),
            "cl" | "closed-loop" => Some(RuntimeMode::ClosedLoop),
            "te" | "temporal-ensemble" => Some(RuntimeMode::TemporalEnsemble),
            "dcdp" => Some(RuntimeMode::Dcdp),
            _ => None,
        }
    }
}

/// State of one in-flight chunk: the frozen latent, the step cursor, and
/// the decoder's recurrent hidden state.
pub struct ChunkContext {
    pub z: Vec<f64>,
    pub step: usize,
    pub hidden: Vec<f64>,
}

/// Training-free corrected execution of a frozen diffusion policy.
///
/// `begin_chunk` samples a chunk from the slow policy and encodes its
/// executed prefix to a latent with the frozen VAE encoder (posterior mean,
/// no sampling at inference). `correct_step` then decodes one action per
/// control step conditioned on refreshed dynamic features from the history
/// bank; after `h_exec` steps the caller replans.
pub struct DcdpRuntime<'a> {
    pub dp: &'a DiffusionPolicy,
    pub stage1: &'a Stage1Model,
    ctx: Option<ChunkContext>,
}

impl<'a> DcdpRuntime<'a> {
    pub fn new(dp: &'a DiffusionPolicy, stage1: &'a Stage1Model) -> Self {
        assert!(dp.frozen, "stage-2 runtime requires a frozen diffusion policy");
        DcdpRuntime { dp, stage1, ctx: None }
    }

    pub fn h_exec(&self) -> usize {
        self.stage1.arch.h_exec
    }

    pub fn needs_replan(&self) -> bool {
        match &self.ctx {
            None => true,
            Some(c) => c.step >= self.h_exec(),
        }
    }

    /// Sample a fresh chunk from the slow policy and encode its executed
    /// prefix. Consumes `rng` draws for the diffusion sampler only.
    pub fn begin_chunk(&mut self, state_vec: &[f64], rng: &mut Rng) -> &ChunkContext {
        let chunk = self.dp.sample_chunk(state_vec, rng);
        let prefix = &chunk[..self.h_exec()];
        let normalized = normalize_chunk(prefix, &self.dp.bounds);
        let (mu, _logvar) = self.stage1.vae_encode_fast(&normalized);
        self.ctx = Some(ChunkContext {
            z: mu,
            step: 0,
            hidden: vec![0.0; self.stage1.arch.rnn_hidden],
        });
        self.ctx.as_ref().unwrap()
    }

    /// Replan at a chunk boundary. Must only be called once the previous
    /// chunk is exhausted.
    pub fn replan(&mut self, state_vec: &[f64], rng: &mut Rng) -> &ChunkContext {
        assert!(
            self.needs_replan(),
            "replan called with {} steps still pending",
            self.h_exec() - self.ctx.as_ref().map(|c| c.step).unwrap_or(0)
        );
        self.begin_chunk(state_vec, rng)
    }

    /// Decode the next corrected action from refreshed dynamic features.
    /// Never invokes the diffusion sampler.
    pub fn correct_step(&mut self, bank: &HistoryBank) -> [f64; 2] {
        let h_exec = self.h_exec();
        let ctx = self.ctx.as_mut().expect("no active chunk; call begin_chunk first");
        assert!(ctx.step < h_exec, "chunk exhausted; caller must replan");
        let features = self.stage1.encoder_extract_cached(bank);
        let norm_action =
            self.stage1
                .vae_decode_step_fast(&ctx.z, &features, ctx.step, &mut ctx.hidden);
        ctx.step += 1;
        let raw = self.dp.bounds.denormalize(norm_action);
        [raw[0].clamp(0.0, WORKSPACE), raw[1].clamp(0.0, WORKSPACE)]
    }

    pub fn context(&self) -> Option<&ChunkContext> {
        self.ctx.as_ref()
    }
}

/// Temporal-ensemble bookkeeping: running blended predictions per absolute
/// future timestep, updated as `blend = lambda * new + (1 - lambda) * old`.
pub struct TemporalEnsemble {
    pub lambda: f64,
    /// pending[i] is the blended prediction for absolute step `base + i`
    pending: Vec<[f64; 2]>,
    base: usize,
}

impl TemporalEnsemble {
    pub fn new(lambda: f64) -> Self {
        TemporalEnsemble { lambda, pending: Vec::new(), base: 0 }
    }

    /// Merge a fresh chunk predicted at absolute step `now` and return the
    /// blended action for `now`.
    pub fn merge(&mut self, now: usize, chunk: &[[f64; 2]]) -> [f64; 2] {
        // drop stale entries
        while self.base < now && !self.pending.is_empty() {
            self.pending.remove(0);
            self.base += 1;
        }
        if self.pending.is_empty() {
            self.base = now;
        }
        for (i, a) in chunk.iter().enumerate() {
            let slot = now + i - self.base;
            if slot < self.pending.len() {
                let old = self.pending[slot];
                self.pending[slot] = [
                    self.lambda * a[0] + (1.0 - self.lambda) * old[0],
                    self.lambda * a[1] + (1.0 - self.lambda) * old[1],
                ];
            } else {
                self.pending.push(*a);
            }
        }
        self.pending[now - self.base]
    }
}
