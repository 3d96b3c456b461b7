//! Fast dynamic-aware feature encoder.
//!
//! A sliding window of the `M` most recent observation images is encoded
//! per frame by a small shared-weight conv stack; scaled differences of
//! adjacent frame features capture scene motion; temporal self-attention
//! summarizes the window; and a fusion cross-attention block (queries from
//! temporal context, keys/values from the differential features) produces
//! the dynamic feature vector injected into the action decoder. A
//! self-supervised loss aligns the softmax of a fixed projection of that
//! vector with the softmax of the most recent differential map.
//!
//! Both a tape (training) and a tape-free (inference) path exist; they call
//! the same kernels in the same order, so their outputs are bit-identical.

use crate::kernels;
use crate::nn::{Conv2dLayer, ParamSet, Proj};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};
use std::collections::VecDeque;

pub const IMG: usize = crate::env::IMG_SIZE;

/// Feature-map side after the conv stack (48 -> 24 -> 12 -> 6).
pub const FEAT_HW: usize = 6;
/// Token pooling: 6x6 maps average-pooled with kernel 3 stride 3 to 2x2.
const POOL_K: usize = 3;
const POOL_HW: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderArch {
    pub m: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub d: usize,
    pub d_k: usize,
    pub d_f: usize,
    pub alpha_init: f64,
    /// temporal attention replaced by identity over tokens
    pub ablate_ta: bool,
    /// cross attention dropped; features come from pooled temporal context
    pub ablate_dca: bool,
}

impl EncoderArch {
    pub fn from_config(cfg: &crate::config::Config) -> Self {
        EncoderArch {
            m: cfg.history_len,
            c1: cfg.conv_c1,
            c2: cfg.conv_c2,
            c3: cfg.conv_c3,
            c4: cfg.conv_c4,
            d: cfg.attn_dim,
            d_k: cfg.attn_key_dim,
            d_f: cfg.feature_dim,
            alpha_init: cfg.alpha_init,
            ablate_ta: false,
            ablate_dca: false,
        }
    }

    pub fn feat_len(&self) -> usize {
        self.c4 * FEAT_HW * FEAT_HW
    }

    pub fn token_len(&self) -> usize {
        self.c4 * POOL_HW * POOL_HW
    }
}

/// Ring buffer of the most recent `m` observation images. Until `m` frames
/// have arrived the oldest available frame is repeated, so the logical
/// window always has length `m` in chronological order. For the frozen
/// inference path each frame's conv features are cached at push time.
pub struct HistoryBank {
    m: usize,
    images: VecDeque<Vec<f64>>,
    features: VecDeque<Vec<f64>>,
}

impl HistoryBank {
    pub fn new(m: usize) -> Self {
        assert!(m >= 1);
        HistoryBank { m, images: VecDeque::new(), features: VecDeque::new() }
    }

    pub fn capacity(&self) -> usize {
        self.m
    }

    pub fn fill_count(&self) -> usize {
        self.images.len()
    }

    pub fn push(&mut self, image: Vec<f64>) {
        assert_eq!(image.len(), IMG * IMG, "history bank expects {0}x{0} images", IMG);
        self.images.push_back(image);
        if self.images.len() > self.m {
            self.images.pop_front();
        }
    }

    pub fn push_with_features(&mut self, image: Vec<f64>, features: Vec<f64>) {
        self.push(image);
        self.features.push_back(features);
        if self.features.len() > self.m {
            self.features.pop_front();
        }
    }

    /// The logical window, oldest first, padded by repeating the oldest
    /// frame while the bank is filling.
    pub fn window_images(&self) -> Vec<&[f64]> {
        assert!(!self.images.is_empty(), "history bank is empty");
        let mut out = Vec::with_capacity(self.m);
        for _ in self.images.len()..self.m {
            out.push(self.images[0].as_slice());
        }
        for img in &self.images {
            out.push(img.as_slice());
        }
        out
    }

    /// Cached per-frame features with the same padding rule. Only valid when
    /// every push supplied features.
    pub fn window_features(&self) -> Vec<&[f64]> {
        assert_eq!(
            self.features.len(),
            self.images.len(),
            "bank was not fed with cached features"
        );
        let mut out = Vec::with_capacity(self.m);
        for _ in self.features.len()..self.m {
            out.push(self.features[0].as_slice());
        }
        for f in &self.features {
            out.push(f.as_slice());
        }
        out
    }
}

/// Layer handles into the shared stage-1 parameter set.
pub struct DynamicEncoder {
    pub arch: EncoderArch,
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    conv3: Conv2dLayer,
    conv4: Conv2dLayer,
    wq: Proj,
    wk: Proj,
    wv: Proj,
    wo: Proj,
    wq2: Proj,
    wk2: Proj,
    wv2: Proj,
    wf: Proj,
    alpha: usize,
    diff_head: usize,
}

impl DynamicEncoder {
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, arch: EncoderArch) -> Self {
        assert_eq!(
            arch.token_len(),
            arch.d,
            "token length {} must equal the attention model dim {}",
            arch.token_len(),
            arch.d
        );
        let conv1 = Conv2dLayer::new(ps, rng, "enc/conv1", 1, arch.c1, 3, 2, 1);
        let conv2 = Conv2dLayer::new(ps, rng, "enc/conv2", arch.c1, arch.c2, 3, 2, 1);
        let conv3 = Conv2dLayer::new(ps, rng, "enc/conv3", arch.c2, arch.c3, 3, 2, 1);
        let conv4 = Conv2dLayer::new(ps, rng, "enc/conv4", arch.c3, arch.c4, 1, 1, 0);
        let wq = Proj::new(ps, rng, "enc/ta/wq", arch.d, arch.d_k);
        let wk = Proj::new(ps, rng, "enc/ta/wk", arch.d, arch.d_k);
        let wv = Proj::new(ps, rng, "enc/ta/wv", arch.d, arch.d_k);
        let wo = Proj::new(ps, rng, "enc/ta/wo", arch.d_k, arch.d);
        let wq2 = Proj::new(ps, rng, "enc/dca/wq", arch.d, arch.d_k);
        let wk2 = Proj::new(ps, rng, "enc/dca/wk", arch.d, arch.d_k);
        let wv2 = Proj::new(ps, rng, "enc/dca/wv", arch.d, arch.d_k);
        let wf = Proj::new(ps, rng, "enc/wf", arch.d_k, arch.d_f);
        let alpha = ps.add("enc/alpha", &[1], vec![arch.alpha_init], true);
        // the self-supervision head is a fixed random projection so the
        // loss cannot be gamed by collapsing the head itself
        let n = arch.d_f * arch.feat_len();
        let s = (6.0 / (arch.d_f + arch.feat_len()) as f64).sqrt();
        let head: Vec<f64> = (0..n).map(|_| rng.range(-s, s)).collect();
        let diff_head = ps.add("enc/diff_head", &[arch.d_f, arch.feat_len()], head, false);
        DynamicEncoder {
            arch,
            conv1,
            conv2,
            conv3,
            conv4,
            wq,
            wk,
            wv,
            wo,
            wq2,
            wk2,
            wv2,
            wf,
            alpha,
            diff_head,
        }
    }

    // ── tape path ──────────────────────────────────────────────────────

    /// Shared-weight conv stack on one frame: [1,48,48] -> [c4,6,6].
    pub fn frame_features_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        image: TensorId,
    ) -> TensorId {
        let h = self.conv1.forward(tape, leaves, image);
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, leaves, h);
        let h = tape.relu(h);
        let h = self.conv3.forward(tape, leaves, h);
        let h = tape.relu(h);
        let h = self.conv4.forward(tape, leaves, h);
        tape.relu(h)
    }

    /// `D_t = alpha * (X_{t+1} - X_t)` for consecutive frame features.
    pub fn differentials_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        feats: &[TensorId],
    ) -> Vec<TensorId> {
        assert!(feats.len() >= 2, "differential features need at least two frames");
        feats
            .windows(2)
            .map(|w| {
                let d = tape.sub(w[1], w[0]);
                tape.mul_scalar_t(d, leaves[self.alpha])
            })
            .collect()
    }

    /// Average-pool a [c4,6,6] map into one [1, d] token.
    pub fn token_tape(&self, tape: &mut Tape, feat: TensorId) -> TensorId {
        let pooled = tape.avg_pool2d(feat, POOL_K, POOL_K);
        tape.reshape(pooled, &[1, self.arch.token_len()])
    }

    /// Temporal self-attention over the window tokens [m, d] -> [m, d].
    pub fn temporal_attention_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        tokens: TensorId,
    ) -> TensorId {
        if self.arch.ablate_ta {
            return tokens;
        }
        let q = self.wq.forward(tape, leaves, tokens);
        let k = self.wk.forward(tape, leaves, tokens);
        let v = self.wv.forward(tape, leaves, tokens);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scores = tape.scale(scores, 1.0 / (self.arch.d_k as f64).sqrt());
        let attn = tape.softmax(scores);
        let ctx = tape.matmul(attn, v);
        self.wo.forward(tape, leaves, ctx)
    }

    /// Fusion cross-attention: queries from temporal context, keys/values
    /// from differential tokens; residual to the queries, mean-pool over
    /// tokens, project to the feature width. Returns [1, d_f].
    pub fn fuse_cross_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        x_temporal: TensorId,
        d_tokens: Option<TensorId>,
    ) -> TensorId {
        let q = self.wq2.forward(tape, leaves, x_temporal);
        let fused = match d_tokens {
            Some(dt) if !self.arch.ablate_dca => {
                let k = self.wk2.forward(tape, leaves, dt);
                let v = self.wv2.forward(tape, leaves, dt);
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt);
                let scores = tape.scale(scores, 1.0 / (self.arch.d_k as f64).sqrt());
                let attn = tape.softmax(scores);
                let ctx = tape.matmul(attn, v);
                tape.add(ctx, q)
            }
            _ => q,
        };
        let pooled = tape.mean_axis0(fused);
        self.wf.forward(tape, leaves, pooled)
    }

    /// Self-supervised differential loss:
    /// `KL(softmax(head(F)) || softmax(flatten(D_last)))`.
    pub fn diff_loss_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        features: TensorId,
        d_last: TensorId,
    ) -> TensorId {
        let proj = tape.matmul(features, leaves[self.diff_head]); // [1, feat_len]
        let p = tape.softmax(proj);
        let flat = tape.reshape(d_last, &[1, self.arch.feat_len()]);
        let q = tape.softmax(flat);
        let logp = tape.log(p);
        let logq = tape.log(q);
        let diff = tape.sub(logp, logq);
        let terms = tape.mul(p, diff);
        tape.sum(terms)
    }

    /// Full pipeline on the tape. Returns the dynamic features [1, d_f] and
    /// the differential maps (for the self-supervised loss).
    pub fn extract_tape(
        &self,
        tape: &mut Tape,
        leaves: &[TensorId],
        frame_feats: &[TensorId],
    ) -> (TensorId, Vec<TensorId>) {
        assert_eq!(frame_feats.len(), self.arch.m, "window must have m frames");
        let diffs = self.differentials_tape(tape, leaves, frame_feats);
        let tokens: Vec<TensorId> =
            frame_feats.iter().map(|&f| self.token_tape(tape, f)).collect();
        let tokens = tape.concat(&tokens, 0);
        let xt = self.temporal_attention_tape(tape, leaves, tokens);
        let d_tokens: Vec<TensorId> = diffs.iter().map(|&d| self.token_tape(tape, d)).collect();
        let d_tokens = tape.concat(&d_tokens, 0);
        let f = self.fuse_cross_tape(tape, leaves, xt, Some(d_tokens));
        (f, diffs)
    }

    // ── tape-free path ─────────────────────────────────────────────────

    /// Conv features of one frame, identical to the tape path bit for bit.
    pub fn frame_features_fast(&self, ps: &ParamSet, image: &[f64]) -> Vec<f64> {
        let mut a = Vec::new();
        self.conv1.forward_fast(ps, image, 48, 48, &mut a);
        relu_inplace(&mut a);
        let mut b = Vec::new();
        self.conv2.forward_fast(ps, &a, 24, 24, &mut b);
        relu_inplace(&mut b);
        let mut c = Vec::new();
        self.conv3.forward_fast(ps, &b, 12, 12, &mut c);
        relu_inplace(&mut c);
        let mut d = Vec::new();
        self.conv4.forward_fast(ps, &c, 6, 6, &mut d);
        relu_inplace(&mut d);
        d
    }

    fn token_fast(&self, feat: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.arch.token_len()];
        kernels::avg_pool2d(feat, self.arch.c4, FEAT_HW, FEAT_HW, POOL_K, POOL_K, &mut out);
        out
    }

    /// Full pipeline from cached per-frame conv features.
    pub fn extract_fast(&self, ps: &ParamSet, frame_feats: &[&[f64]]) -> Vec<f64> {
        let m = self.arch.m;
        let d = self.arch.d;
        let dk = self.arch.d_k;
        assert_eq!(frame_feats.len(), m);
        let alpha = ps.data(self.alpha)[0];

        // differential tokens
        let mut d_tokens = vec![0.0; (m - 1) * d];
        let mut scratch = vec![0.0; self.arch.feat_len()];
        for t in 0..m - 1 {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = (frame_feats[t + 1][i] - frame_feats[t][i]) * alpha;
            }
            let tok = self.token_fast(&scratch);
            d_tokens[t * d..(t + 1) * d].copy_from_slice(&tok);
        }

        // window tokens
        let mut tokens = vec![0.0; m * d];
        for (t, f) in frame_feats.iter().enumerate() {
            let tok = self.token_fast(f);
            tokens[t * d..(t + 1) * d].copy_from_slice(&tok);
        }

        // temporal attention
        let scale = 1.0 / (dk as f64).sqrt();
        let xt = if self.arch.ablate_ta {
            tokens.clone()
        } else {
            let mut q = Vec::new();
            self.wq.forward_fast(ps, &tokens, m, &mut q);
            let mut k = Vec::new();
            self.wk.forward_fast(ps, &tokens, m, &mut k);
            let mut v = Vec::new();
            self.wv.forward_fast(ps, &tokens, m, &mut v);
            let mut kt = vec![0.0; k.len()];
            kernels::transpose(&k, m, dk, &mut kt);
            let mut scores = vec![0.0; m * m];
            kernels::matmul(&q, &kt, m, dk, m, &mut scores);
            for s in scores.iter_mut() {
                *s *= scale;
            }
            let mut attn = vec![0.0; m * m];
            kernels::softmax_rows(&scores, m, m, &mut attn);
            let mut ctx = vec![0.0; m * dk];
            kernels::matmul(&attn, &v, m, m, dk, &mut ctx);
            let mut out = Vec::new();
            self.wo.forward_fast(ps, &ctx, m, &mut out);
            out
        };

        // fusion cross-attention
        let mut q2 = Vec::new();
        self.wq2.forward_fast(ps, &xt, m, &mut q2);
        let fused = if self.arch.ablate_dca {
            q2
        } else {
            let md = m - 1;
            let mut k2 = Vec::new();
            self.wk2.forward_fast(ps, &d_tokens, md, &mut k2);
            let mut v2 = Vec::new();
            self.wv2.forward_fast(ps, &d_tokens, md, &mut v2);
            let mut k2t = vec![0.0; k2.len()];
            kernels::transpose(&k2, md, dk, &mut k2t);
            let mut scores = vec![0.0; m * md];
            kernels::matmul(&q2, &k2t, m, dk, md, &mut scores);
            for s in scores.iter_mut() {
                *s *= scale;
            }
            let mut attn = vec![0.0; m * md];
            kernels::softmax_rows(&scores, m, md, &mut attn);
            let mut ctx = vec![0.0; m * dk];
            kernels::matmul(&attn, &v2, m, md, dk, &mut ctx);
            for (c, qv) in ctx.iter_mut().zip(q2.iter()) {
                *c += qv;
            }
            ctx
        };

        // mean-pool over tokens (same summation order as the tape op)
        let mut pooled = vec![0.0; dk];
        for row in 0..m {
            for col in 0..dk {
                pooled[col] += fused[row * dk + col];
            }
        }
        for v in pooled.iter_mut() {
            *v /= m as f64;
        }
        let mut f = Vec::new();
        self.wf.forward_fast(ps, &pooled, 1, &mut f);
        f
    }
}

fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
