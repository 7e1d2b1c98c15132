//! Raw slice kernels shared by the free functions and the tape.

use alloc::vec;
use alloc::vec::Vec;

use super::{Conv3dLayer, DenseLayer, Result, Tensor, TensorError};

/// Probabilities below this are clamped before taking the log.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

const AXES: [&str; 3] = ["depth", "height", "width"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub input: [usize; 3],
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        in_shape: [usize; 5],
        w_shape: [usize; 5],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let [batch, in_ch, d, h, w] = in_shape;
        let [out_ch, w_in, kd, kh, kw] = w_shape;
        if w_in != in_ch {
            return Err(TensorError::ShapeMismatch {
                axis: "input channels",
                expected: w_in,
                actual: in_ch,
            });
        }
        if stride.contains(&0) {
            return Err(TensorError::InvalidArgument("stride must be positive"));
        }
        let input = [d, h, w];
        let kernel = [kd, kh, kw];
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * pad[a];
            if kernel[a] > padded {
                return Err(TensorError::WindowExceedsInput {
                    axis: AXES[a],
                    window: kernel[a],
                    extent: padded,
                });
            }
            output[a] = (padded - kernel[a]) / stride[a] + 1;
        }
        Ok(Self {
            batch,
            in_ch,
            input,
            out_ch,
            kernel,
            stride,
            pad,
            output,
        })
    }

    pub fn out_shape(&self) -> [usize; 5] {
        let [d, h, w] = self.output;
        [self.batch, self.out_ch, d, h, w]
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    /// Unit kernel, unit stride and no padding: the unfolded input is the input.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Kernel along the last axis only with unit stride and output length
    /// equal to input length: each unfolded row is the input shifted by a
    /// constant offset, with `|offset|` entries per line falling outside.
    fn is_line_shift(&self) -> bool {
        self.kernel[..2] == [1, 1]
            && self.pad[..2] == [0, 0]
            && self.stride == [1, 1, 1]
            && self.output[2] == self.input[2]
    }
}

/// Copies `src` shifted by `shift` along lines of length `w` into `dst`,
/// zeroing positions whose source lies outside their line.
fn shift_lines(src: &[f64], dst: &mut [f64], w: usize, shift: isize) {
    let n = src.len();
    let s = shift.unsigned_abs();
    if s >= w {
        dst.fill(0.0);
        return;
    }
    let first = if shift >= 0 {
        dst[..n - s].copy_from_slice(&src[s..]);
        w - s
    } else {
        dst[s..].copy_from_slice(&src[..n - s]);
        0
    };
    for k in first..first + s {
        for i in (k..n).step_by(w) {
            dst[i] = 0.0;
        }
    }
}

/// Adjoint of [`shift_lines`], accumulating into `dst`.
fn unshift_lines(src: &[f64], dst: &mut [f64], w: usize, shift: isize) {
    let s = shift.unsigned_abs();
    if s >= w {
        return;
    }
    for (sl, dl) in src.chunks_exact(w).zip(dst.chunks_exact_mut(w)) {
        if shift >= 0 {
            for (o, v) in dl[s..].iter_mut().zip(&sl[..w - s]) {
                *o += v;
            }
        } else {
            for (o, v) in dl[..w - s].iter_mut().zip(&sl[s..]) {
                *o += v;
            }
        }
    }
}

/// Output indices `o` on one axis for which `o*s + k - p` lands inside the input.
fn valid_range(k: usize, p: usize, s: usize, in_ext: usize, out_ext: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    if in_ext + p <= k {
        return (0, 0);
    }
    let hi = ((in_ext - 1 + p - k) / s + 1).min(out_ext);
    (lo.min(hi), hi)
}

/// Unfolds one batch item into `cols`, a `(in_ch·taps) × out_plane` matrix
/// whose row order matches the weight layout. Padded taps read as zero.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let [d, h, w] = g.input;
    let [od_n, oh_n, ow_n] = g.output;
    let [kd_n, kh_n, kw_n] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let plane = g.out_plane();
    if g.is_line_shift() {
        let in_plane = g.in_plane();
        for ic in 0..g.in_ch {
            let src = &x[ic * in_plane..(ic + 1) * in_plane];
            for kw in 0..g.kernel[2] {
                let r = ic * g.kernel[2] + kw;
                let shift = kw as isize - g.pad[2] as isize;
                shift_lines(src, &mut cols[r * plane..(r + 1) * plane], w, shift);
            }
        }
        return;
    }
    if g.pad.iter().any(|&p| p > 0) {
        cols.fill(0.0);
    }
    let mut r = 0;
    for ic in 0..g.in_ch {
        let src = &x[ic * g.in_plane()..(ic + 1) * g.in_plane()];
        for kd in 0..kd_n {
            let (od0, od1) = valid_range(kd, pd, sd, d, od_n);
            for kh in 0..kh_n {
                let (oh0, oh1) = valid_range(kh, ph, sh, h, oh_n);
                for kw in 0..kw_n {
                    let (ow0, ow1) = valid_range(kw, pw, sw, w, ow_n);
                    let row = &mut cols[r * plane..(r + 1) * plane];
                    r += 1;
                    if ow0 >= ow1 {
                        continue;
                    }
                    let iw0 = ow0 * sw + kw - pw;
                    for od in od0..od1 {
                        let id = od * sd + kd - pd;
                        for oh in oh0..oh1 {
                            let ih = oh * sh + kh - ph;
                            let dst = &mut row
                                [(od * oh_n + oh) * ow_n + ow0..(od * oh_n + oh) * ow_n + ow1];
                            let base = (id * h + ih) * w + iw0;
                            if sw == 1 {
                                dst.copy_from_slice(&src[base..base + dst.len()]);
                            } else {
                                for (j, v) in dst.iter_mut().enumerate() {
                                    *v = src[base + j * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back, accumulating into `gx`.
fn col2im(g: &ConvGeom, cols: &[f64], gx: &mut [f64]) {
    let [d, h, w] = g.input;
    let [od_n, oh_n, ow_n] = g.output;
    let [kd_n, kh_n, kw_n] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let plane = g.out_plane();
    let in_plane = g.in_plane();
    if g.is_line_shift() {
        for ic in 0..g.in_ch {
            let dst = &mut gx[ic * in_plane..(ic + 1) * in_plane];
            for kw in 0..kw_n {
                let r = ic * kw_n + kw;
                let shift = kw as isize - pw as isize;
                unshift_lines(&cols[r * plane..(r + 1) * plane], dst, w, shift);
            }
        }
        return;
    }
    let mut r = 0;
    for ic in 0..g.in_ch {
        let dst = &mut gx[ic * in_plane..(ic + 1) * in_plane];
        for kd in 0..kd_n {
            let (od0, od1) = valid_range(kd, pd, sd, d, od_n);
            for kh in 0..kh_n {
                let (oh0, oh1) = valid_range(kh, ph, sh, h, oh_n);
                for kw in 0..kw_n {
                    let (ow0, ow1) = valid_range(kw, pw, sw, w, ow_n);
                    let row = &cols[r * plane..(r + 1) * plane];
                    r += 1;
                    if ow0 >= ow1 {
                        continue;
                    }
                    let iw0 = ow0 * sw + kw - pw;
                    for od in od0..od1 {
                        let id = od * sd + kd - pd;
                        for oh in oh0..oh1 {
                            let ih = oh * sh + kh - ph;
                            let src =
                                &row[(od * oh_n + oh) * ow_n + ow0..(od * oh_n + oh) * ow_n + ow1];
                            let base = (id * h + ih) * w + iw0;
                            if sw == 1 {
                                for (o, v) in dst[base..base + src.len()].iter_mut().zip(src) {
                                    *o += v;
                                }
                            } else {
                                for (j, v) in src.iter().enumerate() {
                                    dst[base + j * sw] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn taps(g: &ConvGeom) -> usize {
    g.in_ch * g.kernel.iter().product::<usize>()
}

pub(crate) fn conv3d_fwd(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let plane = g.out_plane();
    let rows = taps(g);
    let in_len = g.in_ch * g.in_plane();
    let mut buf = vec![0.0; if g.is_pointwise() { 0 } else { rows * plane }];
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let cols = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut buf);
            &buf
        };
        for oc in 0..g.out_ch {
            let o = &mut out[(n * g.out_ch + oc) * plane..(n * g.out_ch + oc + 1) * plane];
            o.fill(bias[oc]);
            for (r, &wv) in weight[oc * rows..(oc + 1) * rows].iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                for (a, c) in o.iter_mut().zip(&cols[r * plane..(r + 1) * plane]) {
                    *a += wv * c;
                }
            }
        }
    }
}

/// Gradients of a convolution. Any of the outputs may be skipped.
pub(crate) fn conv3d_bwd(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_x: Option<&mut [f64]>,
    mut grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    let plane = g.out_plane();
    if let Some(gb) = grad_b {
        for (slab, chunk) in grad_out.chunks_exact(plane).enumerate() {
            gb[slab % g.out_ch] += chunk.iter().sum::<f64>();
        }
    }
    if grad_x.is_none() && grad_w.is_none() {
        return;
    }
    let rows = taps(g);
    let in_len = g.in_ch * g.in_plane();
    let pointwise = g.is_pointwise();
    let scratch = if pointwise { 0 } else { rows * plane };
    let mut cols = vec![0.0; scratch];
    let mut gcols = vec![0.0; if grad_x.is_some() { scratch } else { 0 }];
    for n in 0..g.batch {
        let go = &grad_out[n * g.out_ch * plane..(n + 1) * g.out_ch * plane];
        if let Some(gw) = grad_w.as_deref_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let c = if pointwise {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            for oc in 0..g.out_ch {
                let gor = &go[oc * plane..(oc + 1) * plane];
                for r in 0..rows {
                    let cr = &c[r * plane..(r + 1) * plane];
                    gw[oc * rows + r] += gor.iter().zip(cr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if let Some(gx) = grad_x.as_deref_mut() {
            let gxn = &mut gx[n * in_len..(n + 1) * in_len];
            let target: &mut [f64] = if pointwise {
                gxn
            } else {
                gcols.fill(0.0);
                &mut gcols
            };
            for oc in 0..g.out_ch {
                let gor = &go[oc * plane..(oc + 1) * plane];
                for r in 0..rows {
                    let wv = weight[oc * rows + r];
                    if wv == 0.0 {
                        continue;
                    }
                    for (a, b) in target[r * plane..(r + 1) * plane].iter_mut().zip(gor) {
                        *a += wv * b;
                    }
                }
            }
            if !pointwise {
                col2im(g, &gcols, gxn);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl PoolGeom {
    pub fn new(in_shape: [usize; 5], window: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let [n, c, d, h, w] = in_shape;
        let input = [d, h, w];
        if window.iter().chain(&stride).any(|&v| v == 0) {
            return Err(TensorError::InvalidArgument(
                "pool window and stride must be positive",
            ));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            if window[a] > input[a] {
                return Err(TensorError::WindowExceedsInput {
                    axis: AXES[a],
                    window: window[a],
                    extent: input[a],
                });
            }
            output[a] = (input[a] - window[a]) / stride[a] + 1;
        }
        Ok(Self {
            planes: n * c,
            input,
            window,
            stride,
            output,
        })
    }

    pub fn out_shape(&self, in_shape: [usize; 5]) -> [usize; 5] {
        let [d, h, w] = self.output;
        [in_shape[0], in_shape[1], d, h, w]
    }

    #[inline(always)]
    fn visit(&self, mut f: impl FnMut(usize, usize)) {
        let [d, h, w] = self.input;
        let [od_n, oh_n, ow_n] = self.output;
        let [wd, wh, ww] = self.window;
        let [sd, sh, sw] = self.stride;
        for p in 0..self.planes {
            let in_base = p * d * h * w;
            let out_base = p * od_n * oh_n * ow_n;
            for od in 0..od_n {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let o = out_base + (od * oh_n + oh) * ow_n + ow;
                        for a in 0..wd {
                            for b in 0..wh {
                                let row = in_base + ((od * sd + a) * h + oh * sh + b) * w + ow * sw;
                                for c in 0..ww {
                                    f(o, row + c);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl PoolGeom {
    /// Pooling along the last axis only: every input line maps to one output line.
    fn lines_only(&self) -> bool {
        self.window[..2] == [1, 1] && self.stride[..2] == [1, 1]
    }
}

pub(crate) fn avg_pool_fwd(g: &PoolGeom, x: &[f64], out: &mut [f64]) {
    let scale = 1.0 / g.window.iter().product::<usize>() as f64;
    if g.lines_only() {
        let (w, ow_n, ww, sw) = (g.input[2], g.output[2], g.window[2], g.stride[2]);
        for (xl, ol) in x.chunks_exact(w).zip(out.chunks_exact_mut(ow_n)) {
            for (k, o) in ol.iter_mut().enumerate() {
                *o = xl[k * sw..k * sw + ww].iter().sum::<f64>() * scale;
            }
        }
        return;
    }
    out.fill(0.0);
    g.visit(|o, i| out[o] += x[i]);
    out.iter_mut().for_each(|v| *v *= scale);
}

pub(crate) fn avg_pool_bwd(g: &PoolGeom, grad_out: &[f64], grad_x: &mut [f64]) {
    let scale = 1.0 / g.window.iter().product::<usize>() as f64;
    if g.lines_only() {
        let (w, ow_n, ww, sw) = (g.input[2], g.output[2], g.window[2], g.stride[2]);
        for (xl, ol) in grad_x.chunks_exact_mut(w).zip(grad_out.chunks_exact(ow_n)) {
            for (k, o) in ol.iter().enumerate() {
                let v = o * scale;
                xl[k * sw..k * sw + ww].iter_mut().for_each(|x| *x += v);
            }
        }
        return;
    }
    g.visit(|o, i| grad_x[i] += grad_out[o] * scale);
}

pub(crate) fn dense_fwd(
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let wr = &weight[o * in_dim..(o + 1) * in_dim];
            let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            out[r * out_dim + o] = bias[o] + dot;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_bwd(
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_x: Option<&mut [f64]>,
    mut grad_w: Option<&mut [f64]>,
    mut grad_b: Option<&mut [f64]>,
) {
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let g = grad_out[r * out_dim + o];
            if let Some(gb) = grad_b.as_deref_mut() {
                gb[o] += g;
            }
            if let Some(gw) = grad_w.as_deref_mut() {
                for (w, xv) in gw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(xr) {
                    *w += g * xv;
                }
            }
            if let Some(gx) = grad_x.as_deref_mut() {
                let wr = &weight[o * in_dim..(o + 1) * in_dim];
                for (xg, w) in gx[r * in_dim..(r + 1) * in_dim].iter_mut().zip(wr) {
                    *xg += g * w;
                }
            }
        }
    }
}

pub(crate) fn softmax_rows(cols: usize, x: &[f64], out: &mut [f64]) {
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, v) in or.iter_mut().zip(xr) {
            *o = libm::exp(v - max);
            sum += *o;
        }
        or.iter_mut().for_each(|o| *o /= sum);
    }
}

pub(crate) fn softmax_rows_bwd(cols: usize, probs: &[f64], grad_out: &[f64], grad_x: &mut [f64]) {
    for ((pr, gr), xr) in probs
        .chunks_exact(cols)
        .zip(grad_out.chunks_exact(cols))
        .zip(grad_x.chunks_exact_mut(cols))
    {
        let dot: f64 = pr.iter().zip(gr).map(|(p, g)| p * g).sum();
        for ((x, p), g) in xr.iter_mut().zip(pr).zip(gr) {
            *x += p * (g - dot);
        }
    }
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(TensorError::ShapeMismatch {
            axis: "label count",
            expected: rows,
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

pub(crate) fn cross_entropy_value(classes: usize, probs: &[f64], labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| -libm::log(probs[r * classes + l].max(PROB_FLOOR)))
        .sum();
    total / labels.len() as f64
}

pub(crate) fn mse_value(classes: usize, probs: &[f64], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        for c in 0..classes {
            let target = if c == l { 1.0 } else { 0.0 };
            let d = probs[r * classes + c] - target;
            total += d * d;
        }
    }
    total / (labels.len() * classes) as f64
}

fn conv_geom(input: &Tensor, layer: &Conv3dLayer) -> Result<ConvGeom> {
    let geom = ConvGeom::new(
        input.dims5()?,
        layer.weight.dims5()?,
        layer.stride,
        layer.padding,
    )?;
    if layer.bias.len() != geom.out_ch {
        return Err(TensorError::ShapeMismatch {
            axis: "bias length",
            expected: geom.out_ch,
            actual: layer.bias.len(),
        });
    }
    Ok(geom)
}

/// Direct 3D cross-correlation of a `(batch, in_ch, D, H, W)` input.
pub fn conv3d_forward(input: &Tensor, layer: &Conv3dLayer) -> Result<Tensor> {
    let geom = conv_geom(input, layer)?;
    let shape = geom.out_shape();
    let mut out = vec![0.0; shape.iter().product()];
    conv3d_fwd(
        &geom,
        input.data(),
        layer.weight.data(),
        layer.bias.data(),
        &mut out,
    );
    Tensor::new(&shape, out)
}

/// Mean over each window of a `(batch, ch, D, H, W)` input, no padding.
pub fn avg_pool3d(input: &Tensor, window: [usize; 3], stride: [usize; 3]) -> Result<Tensor> {
    let in_shape = input.dims5()?;
    let geom = PoolGeom::new(in_shape, window, stride)?;
    let shape = geom.out_shape(in_shape);
    let mut out = vec![0.0; shape.iter().product()];
    avg_pool_fwd(&geom, input.data(), &mut out);
    Tensor::new(&shape, out)
}

pub(crate) fn dense_dims(input: &Tensor, layer: &DenseLayer) -> Result<[usize; 3]> {
    let [rows, in_dim] = input.dims2()?;
    let [out_dim, w_in] = layer.weight.dims2()?;
    if w_in != in_dim {
        return Err(TensorError::ShapeMismatch {
            axis: "dense input dimension",
            expected: w_in,
            actual: in_dim,
        });
    }
    if layer.bias.len() != out_dim {
        return Err(TensorError::ShapeMismatch {
            axis: "bias length",
            expected: out_dim,
            actual: layer.bias.len(),
        });
    }
    Ok([rows, in_dim, out_dim])
}

/// `input · weightᵀ + bias` for a `(batch, in_dim)` input.
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let [rows, in_dim, out_dim] = dense_dims(input, layer)?;
    let mut out = vec![0.0; rows * out_dim];
    dense_fwd(
        rows,
        in_dim,
        out_dim,
        input.data(),
        layer.weight.data(),
        layer.bias.data(),
        &mut out,
    );
    Tensor::new(&[rows, out_dim], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let data: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

/// Row-wise softmax over the last axis of a `(batch, k)` tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let [_, cols] = input.dims2()?;
    let mut out = vec![0.0; input.len()];
    softmax_rows(cols, input.data(), &mut out);
    Tensor::new(input.shape(), out)
}

/// Mean negative log-probability of the true class, probabilities floored at 1e-12.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let [rows, classes] = probs.dims2()?;
    check_labels(labels, rows, classes)?;
    Ok(cross_entropy_value(classes, probs.data(), labels))
}

/// Mean squared error between scores and one-hot targets, averaged over all entries.
pub fn mse_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let [rows, classes] = probs.dims2()?;
    check_labels(labels, rows, classes)?;
    Ok(mse_value(classes, probs.data(), labels))
}
