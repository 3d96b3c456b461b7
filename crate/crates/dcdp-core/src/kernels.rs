//! Pure dense math kernels on flat `f64` slices.
//!
//! Both the autodiff tape and the tape-free inference path call into these,
//! so the two paths produce bit-identical values for the same inputs.

/// C[m,n] = A[m,k] @ B[k,n], accumulating into a zeroed output.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// y[n] = x[k] @ B[k,n] + bias[n]; the row-vector case with fused bias.
pub fn matvec_bias(x: &[f64], b: &[f64], bias: &[f64], k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), n);
    out.copy_from_slice(bias);
    for (p, &xv) in x.iter().enumerate() {
        let brow = &b[p * n..(p + 1) * n];
        for (o, &bv) in out.iter_mut().zip(brow.iter()) {
            *o += xv * bv;
        }
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}

/// Row-wise softmax over a [rows, cols] matrix, numerically stabilized.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &v) in orow.iter_mut().zip(row.iter()) {
            let e = (v - mx).exp();
            *o = e;
            denom += e;
        }
        for o in orow.iter_mut() {
            *o /= denom;
        }
    }
}

/// Output spatial extent of a convolution/pool along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// 2-D convolution: input [ci,h,w], weight [co,ci,kh,kw], bias [co],
/// output [co,oh,ow].
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut [f64],
) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    debug_assert_eq!(out.len(), co * oh * ow);
    for oc in 0..co {
        let wbase = oc * ci * kh * kw;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                let iy0 = (oy * stride) as isize - pad as isize;
                let ix0 = (ox * stride) as isize - pad as isize;
                for ic in 0..ci {
                    let ibase = ic * h * w;
                    let kbase = wbase + ic * kh * kw;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow = ibase + iy as usize * w;
                        let krow = kbase + ky * kw;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += input[irow + ix as usize] * weight[krow + kx];
                        }
                    }
                }
                out[oc * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
}

/// 2-D average pooling: input [c,h,w], non-overlapping windows allowed via
/// stride; output [c,oh,ow]. Windows are always fully inside (no padding).
pub fn avg_pool2d(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    out: &mut [f64],
) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    debug_assert_eq!(out.len(), c * oh * ow);
    let inv = 1.0 / (k * k) as f64;
    for ch in 0..c {
        let ibase = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    let irow = ibase + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        acc += input[irow + kx];
                    }
                }
                out[ch * oh * ow + oy * ow + ox] = acc * inv;
            }
        }
    }
}

#[inline]
pub fn tanh_slice(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = v.tanh();
    }
}

#[inline]
pub fn relu_slice(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

#[inline]
pub fn sigmoid_slice(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = 1.0 / (1.0 + (-v).exp());
    }
}
