//! Layer primitives of the CRD stack: strided 2-D convolutions, single
//! GRU directions, fully connected layers, and per-language output heads.
//!
//! Weight convention is `y = W x + b` with `W` stored as (out x in); a
//! sequence input `X` of shape (T x in) therefore maps through
//! `X * W^T + b` row by row.

use crate::activations::ActivationSlot;
use crate::numeric::{Matrix, Tensor3};
use rand::Rng;

pub const CONV_KERNEL: usize = 5;
pub const CONV_FREQ_STRIDE: usize = 2;

/// Uniform(-k, k) with k = 1 / sqrt(fan_in).
pub(crate) fn init_matrix<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let k = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-k..k))
}

pub(crate) fn init_vector<R: Rng>(len: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let k = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-k..k)).collect()
}

/// y += M x for M (out x in). Rows are processed four at a time with
/// independent accumulators; each output element still sums over ascending
/// k, identical to the plain dot product.
pub(crate) fn matvec_add(m: &Matrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.cols(), x.len());
    debug_assert_eq!(m.rows(), y.len());
    let rows = y.len();
    let mut i = 0;
    while i + 4 <= rows {
        let r0 = m.row(i);
        let r1 = m.row(i + 1);
        let r2 = m.row(i + 2);
        let r3 = m.row(i + 3);
        let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
        for (k, &xk) in x.iter().enumerate() {
            a0 += r0[k] * xk;
            a1 += r1[k] * xk;
            a2 += r2[k] * xk;
            a3 += r3[k] * xk;
        }
        y[i] += a0;
        y[i + 1] += a1;
        y[i + 2] += a2;
        y[i + 3] += a3;
        i += 4;
    }
    while i < rows {
        let row = m.row(i);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        y[i] += acc;
        i += 1;
    }
}

/// y += M^T x for M (out x in), x of length out, y of length in.
pub(crate) fn matvec_transpose_add(m: &Matrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.rows(), x.len());
    debug_assert_eq!(m.cols(), y.len());
    for (i, &xi) in x.iter().enumerate() {
        let row = m.row(i);
        for (yj, a) in y.iter_mut().zip(row) {
            *yj += xi * a;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 2-D convolution layer: 5x5 kernels, stride 1 in time with "same" padding,
/// stride 2 in frequency with "same" downsampling. No bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    /// Flat kernel bank indexed [out][in][kt][kf].
    pub weight: Vec<f64>,
    pub slot: ActivationSlot,
}

impl ConvLayer {
    pub fn init<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = in_channels * CONV_KERNEL * CONV_KERNEL;
        let k = 1.0 / (fan_in as f64).sqrt();
        let weight = (0..out_channels * in_channels * CONV_KERNEL * CONV_KERNEL)
            .map(|_| rng.random_range(-k..k))
            .collect();
        ConvLayer {
            out_channels,
            in_channels,
            weight,
            slot: ActivationSlot::FixedRelu,
        }
    }

    #[inline]
    pub fn kernel_at(&self, oc: usize, ic: usize, kt: usize, kf: usize) -> f64 {
        self.weight[((oc * self.in_channels + ic) * CONV_KERNEL + kt) * CONV_KERNEL + kf]
    }

    pub fn weight_len(&self) -> usize {
        self.weight.len()
    }

    pub fn out_freq(in_freq: usize) -> usize {
        in_freq.div_ceil(CONV_FREQ_STRIDE)
    }

    /// Leading zero-pad in the frequency axis for "same" downsampling.
    pub fn freq_pad_begin(in_freq: usize) -> usize {
        let out = Self::out_freq(in_freq);
        let total = ((out - 1) * CONV_FREQ_STRIDE + CONV_KERNEL).saturating_sub(in_freq);
        total / 2
    }

    /// Kernel bank re-indexed as [ic][kt][kf][oc] so the output-channel loop
    /// reads contiguously.
    fn permuted_weight(&self) -> Vec<f64> {
        let k = CONV_KERNEL;
        let mut wp = vec![0.0; self.weight.len()];
        for oc in 0..self.out_channels {
            for ic in 0..self.in_channels {
                for kt in 0..k {
                    for kf in 0..k {
                        wp[((ic * k + kt) * k + kf) * self.out_channels + oc] =
                            self.kernel_at(oc, ic, kt, kf);
                    }
                }
            }
        }
        wp
    }

    /// Pre-activation convolution output. Every output channel accumulates
    /// its taps in ascending (ic, kt, kf) order.
    pub fn forward_raw(&self, input: &Tensor3) -> Tensor3 {
        debug_assert_eq!(input.channels, self.in_channels);
        let k = CONV_KERNEL;
        let time = input.time;
        let out_freq = Self::out_freq(input.freq);
        let pad_t = k / 2;
        let pad_f = Self::freq_pad_begin(input.freq);
        let wp = self.permuted_weight();
        let oc_n = self.out_channels;
        let mut out = Tensor3::zeros(time, out_freq, oc_n);
        let odata = out.data_mut();
        for t in 0..time {
            for fo in 0..out_freq {
                let obase = (t * out_freq + fo) * oc_n;
                let orow = &mut odata[obase..obase + oc_n];
                for ic in 0..self.in_channels {
                    for kt in 0..k {
                        let ti = t + kt;
                        if ti < pad_t || ti - pad_t >= time {
                            continue;
                        }
                        for kf in 0..k {
                            let fi = fo * CONV_FREQ_STRIDE + kf;
                            if fi < pad_f || fi - pad_f >= input.freq {
                                continue;
                            }
                            let in_val = input.at(ti - pad_t, fi - pad_f, ic);
                            let wrow = &wp[((ic * k + kt) * k + kf) * oc_n..][..oc_n];
                            for (o, w) in orow.iter_mut().zip(wrow) {
                                *o += in_val * w;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backward through the raw convolution: accumulates kernel gradients
    /// into `dw` (when given) and returns the input gradient (when asked).
    pub fn backward_raw(
        &self,
        input: &Tensor3,
        d_pre: &Tensor3,
        dw: Option<&mut [f64]>,
        want_dx: bool,
    ) -> Option<Tensor3> {
        let k = CONV_KERNEL;
        let time = input.time;
        let pad_t = k / 2;
        let pad_f = Self::freq_pad_begin(input.freq);
        let oc_n = self.out_channels;
        let wp = self.permuted_weight();
        let mut dwp = dw.as_ref().map(|_| vec![0.0; self.weight.len()]);
        let mut dx = if want_dx {
            Some(Tensor3::zeros(time, input.freq, input.channels))
        } else {
            None
        };
        for t in 0..time {
            for fo in 0..d_pre.freq {
                let gbase = (t * d_pre.freq + fo) * oc_n;
                let grow = &d_pre.data()[gbase..gbase + oc_n];
                for ic in 0..self.in_channels {
                    for kt in 0..k {
                        let ti = t + kt;
                        if ti < pad_t || ti - pad_t >= time {
                            continue;
                        }
                        for kf in 0..k {
                            let fi = fo * CONV_FREQ_STRIDE + kf;
                            if fi < pad_f || fi - pad_f >= input.freq {
                                continue;
                            }
                            let (ti, fi) = (ti - pad_t, fi - pad_f);
                            let base = ((ic * k + kt) * k + kf) * oc_n;
                            if let Some(dwp) = dwp.as_mut() {
                                let in_val = input.at(ti, fi, ic);
                                let drow = &mut dwp[base..base + oc_n];
                                for (d, g) in drow.iter_mut().zip(grow) {
                                    *d += g * in_val;
                                }
                            }
                            if let Some(dx) = dx.as_mut() {
                                let wrow = &wp[base..base + oc_n];
                                let mut acc = 0.0;
                                for (g, w) in grow.iter().zip(wrow) {
                                    acc += g * w;
                                }
                                *dx.at_mut(ti, fi, ic) += acc;
                            }
                        }
                    }
                }
            }
        }
        if let (Some(dw), Some(dwp)) = (dw, dwp) {
            for oc in 0..oc_n {
                for ic in 0..self.in_channels {
                    for kt in 0..k {
                        for kf in 0..k {
                            dw[((oc * self.in_channels + ic) * k + kt) * k + kf] +=
                                dwp[((ic * k + kt) * k + kf) * oc_n + oc];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// One direction of a GRU layer.
///
/// Recurrence (update gate z, reset gate r, candidate c):
///   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
///   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
///   c_t = tanh(Wc x_t + Uc (r_t . h_{t-1}) + bc)
///   h_t = (1 - z_t) . h_{t-1} + z_t . c_t
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_cand: Matrix,
    pub u_update: Matrix,
    pub u_reset: Matrix,
    pub u_cand: Matrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_cand: Vec<f64>,
}

impl GruDirection {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruDirection {
            w_update: init_matrix(hidden, input, input, rng),
            w_reset: init_matrix(hidden, input, input, rng),
            w_cand: init_matrix(hidden, input, input, rng),
            u_update: init_matrix(hidden, hidden, hidden, rng),
            u_reset: init_matrix(hidden, hidden, hidden, rng),
            u_cand: init_matrix(hidden, hidden, hidden, rng),
            b_update: init_vector(hidden, hidden, rng),
            b_reset: init_vector(hidden, hidden, rng),
            b_cand: init_vector(hidden, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_update.rows()
    }
}

/// Per-frame state recorded during a directional GRU pass; all matrices are
/// indexed by absolute frame, regardless of scan direction.
#[derive(Debug, Clone)]
pub struct GruDirCache {
    pub update: Matrix,
    pub reset: Matrix,
    pub cand: Matrix,
    pub hidden: Matrix,
    /// r_t . h_{t-1}
    pub reset_hidden: Matrix,
}

impl GruDirection {
    /// Runs the direction over the sequence. `reverse = true` scans from the
    /// last frame toward the first (initial state zero either way).
    pub fn forward(&self, input: &Matrix, reverse: bool) -> GruDirCache {
        let frames = input.rows();
        let h = self.hidden();
        // Input projections for every frame at once.
        let xw_u = input.matmul_transpose_b(&self.w_update).expect("shape");
        let xw_r = input.matmul_transpose_b(&self.w_reset).expect("shape");
        let xw_c = input.matmul_transpose_b(&self.w_cand).expect("shape");

        let mut cache = GruDirCache {
            update: Matrix::zeros(frames, h),
            reset: Matrix::zeros(frames, h),
            cand: Matrix::zeros(frames, h),
            hidden: Matrix::zeros(frames, h),
            reset_hidden: Matrix::zeros(frames, h),
        };
        let mut h_prev = vec![0.0; h];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..frames).rev())
        } else {
            Box::new(0..frames)
        };
        for t in order {
            let mut pre_z = xw_u.row(t).to_vec();
            let mut pre_r = xw_r.row(t).to_vec();
            for (v, b) in pre_z.iter_mut().zip(&self.b_update) {
                *v += b;
            }
            for (v, b) in pre_r.iter_mut().zip(&self.b_reset) {
                *v += b;
            }
            matvec_add(&self.u_update, &h_prev, &mut pre_z);
            matvec_add(&self.u_reset, &h_prev, &mut pre_r);
            let z: Vec<f64> = pre_z.iter().map(|&v| sigmoid(v)).collect();
            let r: Vec<f64> = pre_r.iter().map(|&v| sigmoid(v)).collect();
            let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();

            let mut pre_c = xw_c.row(t).to_vec();
            for (v, b) in pre_c.iter_mut().zip(&self.b_cand) {
                *v += b;
            }
            matvec_add(&self.u_cand, &rh, &mut pre_c);
            let c: Vec<f64> = pre_c.iter().map(|&v| v.tanh()).collect();

            let h_new: Vec<f64> = (0..h)
                .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * c[j])
                .collect();

            cache.update.row_mut(t).copy_from_slice(&z);
            cache.reset.row_mut(t).copy_from_slice(&r);
            cache.cand.row_mut(t).copy_from_slice(&c);
            cache.reset_hidden.row_mut(t).copy_from_slice(&rh);
            cache.hidden.row_mut(t).copy_from_slice(&h_new);
            h_prev = h_new;
        }
        cache
    }

    /// Backpropagation through time for this direction. `d_hidden` holds the
    /// upstream gradient on each frame's hidden output (slot already applied
    /// by the caller). Returns the input-sequence gradient when requested.
    pub fn backward(
        &self,
        input: &Matrix,
        cache: &GruDirCache,
        d_hidden: &Matrix,
        reverse: bool,
        grads: Option<&mut GruDirGrads>,
        want_dx: bool,
    ) -> Option<Matrix> {
        let frames = input.rows();
        let h = self.hidden();
        let mut d_pre_z = Matrix::zeros(frames, h);
        let mut d_pre_r = Matrix::zeros(frames, h);
        let mut d_pre_c = Matrix::zeros(frames, h);
        // h_{t-1} per frame, for the batched weight-gradient products.
        let mut h_prev_all = Matrix::zeros(frames, h);

        let zeros = vec![0.0; h];
        let mut carry = vec![0.0; h];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new(0..frames)
        } else {
            Box::new((0..frames).rev())
        };
        for t in order {
            let h_prev: &[f64] = if reverse {
                if t + 1 < frames {
                    cache.hidden.row(t + 1)
                } else {
                    &zeros
                }
            } else if t > 0 {
                cache.hidden.row(t - 1)
            } else {
                &zeros
            };
            h_prev_all.row_mut(t).copy_from_slice(h_prev);

            let z = cache.update.row(t);
            let r = cache.reset.row(t);
            let c = cache.cand.row(t);
            let rh = cache.reset_hidden.row(t);
            let up = d_hidden.row(t);

            let mut dh = vec![0.0; h];
            for j in 0..h {
                dh[j] = up[j] + carry[j];
            }

            let mut d_prev = vec![0.0; h];
            {
                let dz_row = d_pre_z.row_mut(t);
                for j in 0..h {
                    let dz = dh[j] * (c[j] - h_prev[j]);
                    dz_row[j] = dz * z[j] * (1.0 - z[j]);
                    d_prev[j] += dh[j] * (1.0 - z[j]);
                }
            }
            {
                let dc_row = d_pre_c.row_mut(t);
                for j in 0..h {
                    let dc = dh[j] * z[j];
                    dc_row[j] = dc * (1.0 - c[j] * c[j]);
                }
            }
            // d(r . h_prev) = Uc^T d_pre_c
            let mut d_rh = vec![0.0; h];
            matvec_transpose_add(&self.u_cand, d_pre_c.row(t), &mut d_rh);
            {
                let dr_row = d_pre_r.row_mut(t);
                for j in 0..h {
                    let dr = d_rh[j] * h_prev[j];
                    dr_row[j] = dr * r[j] * (1.0 - r[j]);
                    d_prev[j] += d_rh[j] * r[j];
                }
            }
            matvec_transpose_add(&self.u_update, d_pre_z.row(t), &mut d_prev);
            matvec_transpose_add(&self.u_reset, d_pre_r.row(t), &mut d_prev);
            let _ = rh;
            carry = d_prev;
        }

        if let Some(g) = grads {
            g.w_update
                .add_assign(&d_pre_z.matmul_transpose_a(input).expect("shape"));
            g.w_reset
                .add_assign(&d_pre_r.matmul_transpose_a(input).expect("shape"));
            g.w_cand
                .add_assign(&d_pre_c.matmul_transpose_a(input).expect("shape"));
            g.u_update
                .add_assign(&d_pre_z.matmul_transpose_a(&h_prev_all).expect("shape"));
            g.u_reset
                .add_assign(&d_pre_r.matmul_transpose_a(&h_prev_all).expect("shape"));
            g.u_cand
                .add_assign(&d_pre_c.matmul_transpose_a(&cache.reset_hidden).expect("shape"));
            for t in 0..frames {
                for j in 0..h {
                    g.b_update[j] += d_pre_z.get(t, j);
                    g.b_reset[j] += d_pre_r.get(t, j);
                    g.b_cand[j] += d_pre_c.get(t, j);
                }
            }
        }

        if want_dx {
            let mut dx = d_pre_z.matmul(&self.w_update).expect("shape");
            dx.add_assign(&d_pre_r.matmul(&self.w_reset).expect("shape"));
            dx.add_assign(&d_pre_c.matmul(&self.w_cand).expect("shape"));
            Some(dx)
        } else {
            None
        }
    }
}

/// Gradient accumulators mirroring one GRU direction.
#[derive(Debug, Clone)]
pub struct GruDirGrads {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_cand: Matrix,
    pub u_update: Matrix,
    pub u_reset: Matrix,
    pub u_cand: Matrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_cand: Vec<f64>,
}

impl GruDirGrads {
    pub fn zeros_like(dir: &GruDirection) -> Self {
        GruDirGrads {
            w_update: Matrix::zeros(dir.w_update.rows(), dir.w_update.cols()),
            w_reset: Matrix::zeros(dir.w_reset.rows(), dir.w_reset.cols()),
            w_cand: Matrix::zeros(dir.w_cand.rows(), dir.w_cand.cols()),
            u_update: Matrix::zeros(dir.u_update.rows(), dir.u_update.cols()),
            u_reset: Matrix::zeros(dir.u_reset.rows(), dir.u_reset.cols()),
            u_cand: Matrix::zeros(dir.u_cand.rows(), dir.u_cand.cols()),
            b_update: vec![0.0; dir.b_update.len()],
            b_reset: vec![0.0; dir.b_reset.len()],
            b_cand: vec![0.0; dir.b_cand.len()],
        }
    }
}

/// Bidirectional GRU layer; forward and backward scans have independent
/// recurrent weights and their activated outputs are summed per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGruLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    pub fwd: GruDirection,
    pub bwd: GruDirection,
    pub slot: ActivationSlot,
}

impl BiGruLayer {
    pub fn init<R: Rng>(input: usize, hidden: usize, slot: ActivationSlot, rng: &mut R) -> Self {
        BiGruLayer {
            input_size: input,
            hidden_size: hidden,
            fwd: GruDirection::init(input, hidden, rng),
            bwd: GruDirection::init(input, hidden, rng),
            slot,
        }
    }
}

/// Fully connected layer with a slot activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub slot: ActivationSlot,
}

impl FcLayer {
    pub fn init<R: Rng>(input: usize, output: usize, slot: ActivationSlot, rng: &mut R) -> Self {
        FcLayer {
            weight: init_matrix(output, input, input, rng),
            bias: init_vector(output, input, rng),
            slot,
        }
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    /// Pre-activation affine map over the whole sequence.
    pub fn forward_raw(&self, input: &Matrix) -> Matrix {
        let mut pre = input.matmul_transpose_b(&self.weight).expect("shape");
        for t in 0..pre.rows() {
            let row = pre.row_mut(t);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        pre
    }
}

/// Per-language output projection; log-softmax is applied by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn init<R: Rng>(input: usize, vocab: usize, rng: &mut R) -> Self {
        Head {
            weight: init_matrix(vocab, input, input, rng),
            bias: init_vector(vocab, input, rng),
        }
    }
}
