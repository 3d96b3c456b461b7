//! Parameter storage, layer building blocks, and the Adam optimizer.
//!
//! Parameters live outside any tape as plain `f64` buffers in a [`ParamSet`];
//! each training step inserts them as leaves into a fresh [`Tape`], runs the
//! graph, and applies gradients back onto the set. Layers hold indices into
//! the set rather than data, so one `ParamSet` checkpoint captures a whole
//! model: names are slash-separated paths in the checkpoint container.

use crate::checkpoint::{self, Entry, FormatError};
use crate::kernels;
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Weight initialization schemes; biases default to zeros.
#[derive(Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>, trainable: bool) -> usize {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "param {name}: shape/data mismatch");
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name: name.to_string(), shape: shape.to_vec(), data, trainable });
        self.params.len() - 1
    }

    pub fn add_init(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Rng) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(v) => vec![v; n],
            Init::Xavier { fan_in, fan_out } => {
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.range(-s, s)).collect()
            }
        };
        self.add(name, shape, data, true)
    }

    pub fn data(&self, idx: usize) -> &[f64] {
        &self.params[idx].data
    }

    pub fn data_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.params[idx].data
    }

    pub fn shape(&self, idx: usize) -> &[usize] {
        &self.params[idx].shape
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.params[idx].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Insert every parameter into `tape` as a leaf (trainable ones with
    /// gradients enabled), returning ids aligned with parameter indices.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.data.clone(), &p.shape, p.trainable))
            .collect()
    }

    /// Gradients aligned with parameter indices after a backward pass.
    pub fn collect_grads(&self, tape: &Tape, leaves: &[TensorId]) -> Vec<Option<Vec<f64>>> {
        leaves.iter().map(|&id| tape.grad(id).map(|g| g.to_vec())).collect()
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        self.params
            .iter()
            .map(|p| Entry { name: p.name.clone(), shape: p.shape.clone(), data: p.data.clone() })
            .collect()
    }

    /// Replace values from checkpoint entries; names and shapes must match
    /// the constructed architecture exactly.
    pub fn load_entries(&mut self, entries: &[Entry]) -> Result<(), FormatError> {
        for p in self.params.iter_mut() {
            let e = entries.iter().find(|e| e.name == p.name).ok_or_else(|| {
                FormatError::Invalid(format!("checkpoint is missing parameter `{}`", p.name))
            })?;
            if e.shape != p.shape {
                return Err(FormatError::ShapeMismatch {
                    name: p.name.clone(),
                    shape: e.shape.clone(),
                    len: e.data.len(),
                });
            }
            p.data = e.data.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        checkpoint::save(path, &self.to_entries())
    }

    pub fn checksum(&self) -> u64 {
        checkpoint::checksum(&self.to_entries())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

// ── optimizer ──────────────────────────────────────────────────────────

/// Adam with bias correction; state is aligned with `ParamSet` indices.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ps.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: ps.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step(&mut self, ps: &mut ParamSet, grads: &[Option<Vec<f64>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, p) in ps.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads[idx].as_ref() else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

// ── layers ─────────────────────────────────────────────────────────────

/// Fully connected layer: y = x W + b with W stored [in, out].
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.add_init(
            &format!("{name}/w"),
            &[in_dim, out_dim],
            Init::Xavier { fan_in: in_dim, fan_out: out_dim },
            rng,
        );
        let b = ps.add_init(&format!("{name}/b"), &[out_dim], Init::Zeros, rng);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[TensorId], x: TensorId) -> TensorId {
        let y = tape.matmul(x, leaves[self.w]);
        tape.add_bias(y, leaves[self.b])
    }

    /// Tape-free row-vector forward for the inference path.
    pub fn forward_fast(&self, ps: &ParamSet, x: &[f64], out: &mut Vec<f64>) {
        out.resize(self.out_dim, 0.0);
        kernels::matvec_bias(x, ps.data(self.w), ps.data(self.b), self.in_dim, self.out_dim, out);
    }
}

/// Projection without bias, W stored [in, out]; used by attention blocks.
#[derive(Clone, Copy, Debug)]
pub struct Proj {
    pub w: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Proj {
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.add_init(
            &format!("{name}/w"),
            &[in_dim, out_dim],
            Init::Xavier { fan_in: in_dim, fan_out: out_dim },
            rng,
        );
        Proj { w, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[TensorId], x: TensorId) -> TensorId {
        tape.matmul(x, leaves[self.w])
    }

    /// rows [r, in] -> [r, out], tape-free.
    pub fn forward_fast(&self, ps: &ParamSet, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.resize(rows * self.out_dim, 0.0);
        kernels::matmul(x, ps.data(self.w), rows, self.in_dim, self.out_dim, out);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dLayer {
    pub w: usize,
    pub b: usize,
    pub ci: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut Rng,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = ci * k * k;
        let fan_out = co * k * k;
        let w = ps.add_init(
            &format!("{name}/w"),
            &[co, ci, k, k],
            Init::Xavier { fan_in, fan_out },
            rng,
        );
        let b = ps.add_init(&format!("{name}/b"), &[co], Init::Zeros, rng);
        Conv2dLayer { w, b, ci, co, k, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[TensorId], x: TensorId) -> TensorId {
        tape.conv2d(x, leaves[self.w], leaves[self.b], self.stride, self.pad)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            kernels::conv_out_dim(h, self.k, self.stride, self.pad),
            kernels::conv_out_dim(w, self.k, self.stride, self.pad),
        )
    }

    pub fn forward_fast(&self, ps: &ParamSet, x: &[f64], h: usize, w: usize, out: &mut Vec<f64>) {
        let (oh, ow) = self.out_hw(h, w);
        out.resize(self.co * oh * ow, 0.0);
        kernels::conv2d(
            x,
            ps.data(self.w),
            ps.data(self.b),
            self.ci,
            h,
            w,
            self.co,
            self.k,
            self.k,
            self.stride,
            self.pad,
            out,
        );
    }
}

/// Learned lookup table [n, d].
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: usize,
    pub n: usize,
    pub d: usize,
}

impl Embedding {
    pub fn new(ps: &mut ParamSet, rng: &mut Rng, name: &str, n: usize, d: usize) -> Self {
        let table = ps.add_init(
            &format!("{name}/table"),
            &[n, d],
            Init::Xavier { fan_in: n, fan_out: d },
            rng,
        );
        Embedding { table, n, d }
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[TensorId], index: usize) -> TensorId {
        tape.embed(leaves[self.table], index)
    }

    pub fn row<'a>(&self, ps: &'a ParamSet, index: usize) -> &'a [f64] {
        assert!(index < self.n, "embedding index {index} out of range {}", self.n);
        &ps.data(self.table)[index * self.d..(index + 1) * self.d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fast_matches_tape() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(4);
        let lin = Linear::new(&mut ps, &mut rng, "l", 3, 5);
        let x = vec![0.5, -1.0, 2.0];

        let mut tape = Tape::new();
        let leaves = ps.leaves(&mut tape);
        let xt = tape.leaf(x.clone(), &[1, 3], false);
        let y = lin.forward(&mut tape, &leaves, xt);

        let mut fast = Vec::new();
        lin.forward_fast(&ps, &x, &mut fast);
        for (a, b) in tape.data(y).iter().zip(&fast) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut ps = ParamSet::new();
        let idx = ps.add("x", &[4], vec![5.0, -3.0, 2.0, 8.0], true);
        let mut opt = Adam::new(&ps, 0.1);
        let loss_of = |ps: &ParamSet| -> f64 { ps.data(idx).iter().map(|v| v * v).sum() };
        let start = loss_of(&ps);
        for _ in 0..300 {
            let mut tape = Tape::new();
            let leaves = ps.leaves(&mut tape);
            let sq = tape.mul(leaves[idx], leaves[idx]);
            let l = tape.sum(sq);
            tape.backward(l);
            let grads = ps.collect_grads(&tape, &leaves);
            opt.step(&mut ps, &grads);
        }
        assert!(loss_of(&ps) < 1e-3 * start);
    }

    #[test]
    fn non_trainable_untouched_by_adam() {
        let mut ps = ParamSet::new();
        let frozen = ps.add("frozen", &[2], vec![1.0, 2.0], false);
        let live = ps.add("live", &[2], vec![1.0, 2.0], true);
        let mut opt = Adam::new(&ps, 0.05);
        for _ in 0..10 {
            let mut tape = Tape::new();
            let leaves = ps.leaves(&mut tape);
            let s = tape.add(leaves[frozen], leaves[live]);
            let sq = tape.mul(s, s);
            let l = tape.sum(sq);
            tape.backward(l);
            let grads = ps.collect_grads(&tape, &leaves);
            opt.step(&mut ps, &grads);
        }
        assert_eq!(ps.data(frozen), &[1.0, 2.0]);
        assert_ne!(ps.data(live), &[1.0, 2.0]);
    }

    #[test]
    fn checkpoint_round_trip_via_paramset() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(8);
        let _ = Linear::new(&mut ps, &mut rng, "enc/fc1", 4, 6);
        let _ = Linear::new(&mut ps, &mut rng, "enc/fc2", 6, 2);
        let entries = ps.to_entries();
        let mut ps2 = ParamSet::new();
        let mut rng2 = Rng::new(999);
        let _ = Linear::new(&mut ps2, &mut rng2, "enc/fc1", 4, 6);
        let _ = Linear::new(&mut ps2, &mut rng2, "enc/fc2", 6, 2);
        assert_ne!(ps.checksum(), ps2.checksum());
        ps2.load_entries(&entries).unwrap();
        assert_eq!(ps.checksum(), ps2.checksum());
    }
}
