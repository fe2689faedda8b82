//! Layer specifications and the numeric kernels behind the graph ops.
//! All image tensors are `[batch, channels, height, width]`.

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Convolution block `convB[N, w, s, p]`: `filters` kernels of size
/// `kernel x kernel`, followed by a ReLU in the branch builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(filters: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self, NnError> {
        if filters == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::InvalidSpec(format!(
                "conv[{filters},{kernel},{stride},{pad}] needs filters, kernel and stride >= 1"
            )));
        }
        Ok(Self { filters, kernel, stride, pad })
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
    pub fn output_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// Max-pooling `pool[k, s]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize) -> Result<Self, NnError> {
        if kernel == 0 || stride == 0 {
            return Err(NnError::InvalidSpec(format!("pool[{kernel},{stride}] needs k, s >= 1")));
        }
        Ok(Self { kernel, stride })
    }

    pub fn output_extent(&self, n: usize) -> Option<usize> {
        (n >= self.kernel).then(|| (n - self.kernel) / self.stride + 1)
    }
}

/// Spatial pyramid pooling levels, coarse to fine (e.g. `[1, 2, 3, 6]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SppSpec {
    levels: Vec<usize>,
}

impl SppSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self, NnError> {
        if levels.is_empty() || levels[0] == 0 || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NnError::InvalidSpec(format!(
                "spp levels {levels:?} must be non-empty, >= 1 and strictly increasing"
            )));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn max_level(&self) -> usize {
        *self.levels.last().expect("non-empty")
    }

    /// Output bins per channel, `sum n^2`.
    pub fn bins_per_channel(&self) -> usize {
        self.levels.iter().map(|n| n * n).sum()
    }

    /// Window size `ceil(a/n)` and stride `floor(a/n)` for a map of extent `a`.
    pub fn window(a: usize, n: usize) -> (usize, usize) {
        (a.div_ceil(n), a / n)
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4], NnError> {
    match t.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(NnError::ShapeMismatch(format!("{what}: expected 4-d input, got {s:?}"))),
    }
}

/// Patch matrix `[C*k*k, Ho*Wo]` of one image.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, col: &mut [f64]) {
    let k = spec.kernel;
    let p = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let ii = (oi * spec.stride + ki) as isize - spec.pad as isize;
                    let drow = &mut dst[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * spec.stride + kj) as isize - spec.pad as isize;
                        *d = if jj < 0 || jj >= w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, dx: &mut [f64]) {
    let k = spec.kernel;
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &col[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let ii = (oi * spec.stride + ki) as isize - spec.pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * spec.stride + kj) as isize - spec.pad as isize;
                        if jj >= 0 && jj < w as isize {
                            plane[ii as usize * w + jj as usize] += src[oi * wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    ho: usize,
    wo: usize,
}

pub(crate) fn conv_geometry(x: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<ConvGeometry, NnError> {
    let [n, c, h, w] = dims4(x, "conv2d")?;
    let k = spec.kernel;
    if weight.shape() != [spec.filters, c, k, k] {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d: weight {:?} does not match [{}, {c}, {k}, {k}]",
            weight.shape(),
            spec.filters
        )));
    }
    if bias.shape() != [spec.filters] {
        return Err(NnError::ShapeMismatch(format!("conv2d: bias {:?}", bias.shape())));
    }
    let (Some(ho), Some(wo)) = (spec.output_extent(h), spec.output_extent(w)) else {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d: {h}x{w} input too small for kernel {k} with padding {}",
            spec.pad
        )));
    };
    Ok(ConvGeometry { n, c, h, w, o: spec.filters, ho, wo })
}

pub(crate) fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor, NnError> {
    let g = conv_geometry(x, weight, bias, spec)?;
    let r = g.c * spec.kernel * spec.kernel;
    let p = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.o * p];
    let mut col = vec![0.0; r * p];
    let wd = weight.data();
    for b in 0..g.n {
        let xin = &x.data()[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        im2col(xin, g.c, g.h, g.w, spec, g.ho, g.wo, &mut col);
        let ob = &mut out[b * g.o * p..(b + 1) * g.o * p];
        for o in 0..g.o {
            let orow = &mut ob[o * p..(o + 1) * p];
            orow.fill(bias.data()[o]);
            for (ri, &wv) in wd[o * r..(o + 1) * r].iter().enumerate() {
                let crow = &col[ri * p..(ri + 1) * p];
                for (dst, &cv) in orow.iter_mut().zip(crow) {
                    *dst += wv * cv;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.o, g.ho, g.wo], out)
}

/// Returns gradients for `(x, weight, bias)`.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let g = conv_geometry(x, weight, bias, spec)?;
    let r = g.c * spec.kernel * spec.kernel;
    let p = g.ho * g.wo;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(bias.shape());
    let mut col = vec![0.0; r * p];
    let mut dcol = vec![0.0; r * p];
    let wd = weight.data();
    for b in 0..g.n {
        let xin = &x.data()[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        im2col(xin, g.c, g.h, g.w, spec, g.ho, g.wo, &mut col);
        let gb = &grad_out.data()[b * g.o * p..(b + 1) * g.o * p];
        dcol.fill(0.0);
        for o in 0..g.o {
            let grow = &gb[o * p..(o + 1) * p];
            db.data_mut()[o] += grow.iter().sum::<f64>();
            let dwrow = &mut dw.data_mut()[o * r..(o + 1) * r];
            for ri in 0..r {
                let crow = &col[ri * p..(ri + 1) * p];
                dwrow[ri] += crow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                let wv = wd[o * r + ri];
                let drow = &mut dcol[ri * p..(ri + 1) * p];
                for (d, &gv) in drow.iter_mut().zip(grow) {
                    *d += wv * gv;
                }
            }
        }
        let dxb = &mut dx.data_mut()[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        col2im(&dcol, g.c, g.h, g.w, spec, g.ho, g.wo, dxb);
    }
    Ok((dx, dw, db))
}

/// Max-pooling forward; also returns the flat input index of every output's
/// maximum. Ties go to the first element in row-major scan order.
pub(crate) fn maxpool2d_forward(x: &Tensor, spec: &PoolSpec) -> Result<(Tensor, Vec<usize>), NnError> {
    let [n, c, h, w] = dims4(x, "maxpool2d")?;
    let (Some(ho), Some(wo)) = (spec.output_extent(h), spec.output_extent(w)) else {
        return Err(NnError::ShapeMismatch(format!(
            "maxpool2d: {h}x{w} input smaller than window {}",
            spec.kernel
        )));
    };
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..ho {
            for oj in 0..wo {
                let (best, idx) = window_max(xd, base, w, oi * spec.stride, oj * spec.stride, spec.kernel, spec.kernel);
                out.push(best);
                arg.push(idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, arg))
}

fn window_max(xd: &[f64], base: usize, w: usize, r0: usize, c0: usize, kh: usize, kw: usize) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut idx = base + r0 * w + c0;
    for i in r0..r0 + kh {
        for j in c0..c0 + kw {
            let k = base + i * w + j;
            if xd[k] > best {
                best = xd[k];
                idx = k;
            }
        }
    }
    (best, idx)
}

/// Routes each output gradient to its recorded argmax.
pub(crate) fn scatter_argmax(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&k, &g) in argmax.iter().zip(grad_out.data()) {
        d[k] += g;
    }
    dx
}

/// Spatial pyramid pooling. Output `[N, C * sum n^2]`, levels coarse to fine,
/// each level laid out as `[C, n, n]`. Windows follow `ceil(a/n)` /
/// `floor(a/n)` independently per axis.
pub(crate) fn spp_forward(x: &Tensor, spec: &SppSpec) -> Result<(Tensor, Vec<usize>), NnError> {
    let [n, c, h, w] = dims4(x, "spp")?;
    let need = spec.max_level();
    if h < need || w < need {
        return Err(NnError::InputTooSmall { height: h, width: w, required: need });
    }
    let per_sample = c * spec.bins_per_channel();
    let mut out = Vec::with_capacity(n * per_sample);
    let mut arg = Vec::with_capacity(n * per_sample);
    let xd = x.data();
    for b in 0..n {
        for &level in spec.levels() {
            let (wh, sh) = SppSpec::window(h, level);
            let (ww, sw) = SppSpec::window(w, level);
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for bi in 0..level {
                    for bj in 0..level {
                        let (best, idx) = window_max(xd, base, w, bi * sh, bj * sw, wh, ww);
                        out.push(best);
                        arg.push(idx);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, per_sample], out)?, arg))
}

/// `y = x W^T + b` with `x` flattened to `[N, in]`, `W: [out, in]`.
pub(crate) fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (n, fin, fout) = linear_dims(x, weight, bias)?;
    let mut out = vec![0.0; n * fout];
    for b in 0..n {
        let xr = &x.data()[b * fin..(b + 1) * fin];
        for o in 0..fout {
            let wr = &weight.data()[o * fin..(o + 1) * fin];
            out[b * fout + o] = bias.data()[o] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    Tensor::new(vec![n, fout], out)
}

pub(crate) fn linear_dims(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize), NnError> {
    let n = x.batch();
    let fin = x.len().checked_div(n).unwrap_or(0);
    match weight.shape() {
        &[fout, wi] if wi == fin && bias.shape() == [fout] => Ok((n, fin, fout)),
        s => Err(NnError::ShapeMismatch(format!(
            "linear: input features {fin}, weight {s:?}, bias {:?}",
            bias.shape()
        ))),
    }
}

pub(crate) fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (n, fin, fout) = linear_dims(x, weight, bias)?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(bias.shape());
    for b in 0..n {
        let xr = &x.data()[b * fin..(b + 1) * fin];
        for o in 0..fout {
            let g = grad_out.data()[b * fout + o];
            db.data_mut()[o] += g;
            let wr = &weight.data()[o * fin..(o + 1) * fin];
            let dwr = &mut dw.data_mut()[o * fin..(o + 1) * fin];
            for (d, &xv) in dwr.iter_mut().zip(xr) {
                *d += g * xv;
            }
            let dxr = &mut dx.data_mut()[b * fin..(b + 1) * fin];
            for (d, &wv) in dxr.iter_mut().zip(wr) {
                *d += g * wv;
            }
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_extents() {
        let c1 = ConvSpec::new(96, 11, 4, 0).unwrap();
        assert_eq!(c1.output_extent(227), Some(55));
        assert_eq!(c1.output_extent(10), None);
        assert_eq!(PoolSpec::new(3, 2).unwrap().output_extent(13), Some(6));
        assert!(ConvSpec::new(1, 0, 1, 0).is_err());
        assert!(PoolSpec::new(3, 0).is_err());
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = Tensor::new(vec![1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, &ConvSpec::new(1, 1, 1, 0).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let b = Tensor::zeros(&[4]);
        let err = conv2d_forward(&x, &w, &b, &ConvSpec::new(4, 3, 1, 0).unwrap());
        assert!(matches!(err, Err(NnError::ShapeMismatch(_))));
    }

    // Direct nested-loop convolution as an independent route.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, s: &ConvSpec) -> Vec<f64> {
        let [n, c, h, wd] = dims4(x, "").unwrap();
        let k = s.kernel;
        let ho = s.output_extent(h).unwrap();
        let wo = s.output_extent(wd).unwrap();
        let mut out = Vec::new();
        for bi in 0..n {
            for o in 0..s.filters {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b.data()[o];
                        for ch in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (i * s.stride + ki) as isize - s.pad as isize;
                                    let jj = (j * s.stride + kj) as isize - s.pad as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        acc += w.data()[((o * c + ch) * k + ki) * k + kj]
                                            * x.data()[((bi * c + ch) * h + ii as usize) * wd + jj as usize];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn patch_matrix_conv_matches_direct_loops() {
        let spec = ConvSpec::new(3, 3, 2, 1).unwrap();
        let fill = |shape: &[usize], seed: f64| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.37 + seed).sin()).collect()).unwrap()
        };
        let x = fill(&[2, 2, 7, 6], 0.1);
        let w = fill(&[3, 2, 3, 3], 0.7);
        let b = fill(&[3], 1.3);
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let r = naive_conv(&x, &w, &b, &spec);
        for (a, c) in y.data().iter().zip(&r) {
            assert!((a - c).abs() < 1e-10);
        }
        let y2 = conv2d_forward(&x, &w, &b, &spec).unwrap();
        assert_eq!(y.data(), y2.data());
    }

    #[test]
    fn maxpool_constant_and_ties() {
        let x = Tensor::full(&[1, 1, 5, 5], 2.5);
        let (y, arg) = maxpool2d_forward(&x, &PoolSpec::new(3, 2).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        // first-in-scan-order argmax: top-left of each window
        assert_eq!(arg, vec![0, 2, 10, 12]);
    }

    #[test]
    fn spp_bins_and_windows() {
        let spec = SppSpec::new(vec![1, 2, 3, 6, 13]).unwrap();
        assert_eq!(spec.bins_per_channel(), 219);
        assert_eq!(SppSpec::window(13, 6), (3, 2));
        assert_eq!(5 * 2 + 3, 13);
        assert!(SppSpec::new(vec![2, 2]).is_err());
        assert!(SppSpec::new(vec![]).is_err());

        let x = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(matches!(
            spp_forward(&x, &SppSpec::new(vec![1, 6]).unwrap()),
            Err(NnError::InputTooSmall { .. })
        ));
    }

    #[test]
    fn spp_shape_independent_of_input_size() {
        let spec = SppSpec::new(vec![1, 2, 3, 6]).unwrap();
        let (a, _) = spp_forward(&Tensor::zeros(&[1, 4, 13, 13]), &spec).unwrap();
        let (b, _) = spp_forward(&Tensor::zeros(&[1, 4, 10, 10]), &spec).unwrap();
        let (c, _) = spp_forward(&Tensor::zeros(&[1, 4, 9, 17]), &spec).unwrap();
        assert_eq!(a.shape(), &[1, 4 * 50]);
        assert_eq!(a.shape(), b.shape());
        assert_eq!(a.shape(), c.shape());
    }

    #[test]
    fn spp_level_one_is_global_max() {
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0, 5.0, 2.0, 0.0, 4.0, 9.0, 3.0, 1.0, 2.0]).unwrap();
        let (y, arg) = spp_forward(&x, &SppSpec::new(vec![1, 2]).unwrap()).unwrap();
        // level 2 on a=3: w=2, stride=1
        assert_eq!(y.data(), &[9.0, 5.0, 9.0, 4.0, 9.0]);
        assert_eq!(arg[0], 5);
    }

    #[test]
    fn linear_identity() {
        let x = Tensor::new(vec![1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(linear_forward(&x, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2])).is_err());
    }
}
