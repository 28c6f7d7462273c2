//! 2-D convolutions over NCHW tensors (dense via im2col + GEMM, depthwise direct).

use super::graph::Op;
use super::linalg::matmul;
use super::{Graph, Real, Result, Tensor, TensorError, Var};

/// Spatial padding mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that each output extent is `ceil(input / stride)`.
    Same,
    /// No padding.
    Valid,
}

/// Output extent along one axis, or `None` when a `Valid` window does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
    }
}

#[derive(Clone, Copy, Debug)]
pub(super) struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pad_top: usize,
    pad_left: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(
        op: &'static str,
        input: &[usize],
        kernel: &[usize],
        stride: (usize, usize),
        padding: Padding,
        depthwise: bool,
    ) -> Result<Self> {
        let err = |detail: String| TensorError::Shape { op, detail };
        if input.len() != 4 || kernel.len() != 4 {
            return Err(err(format!("input {input:?} and kernel {kernel:?} must both be rank 4")));
        }
        let (n, cin, h, w) = (input[0], input[1], input[2], input[3]);
        let (cout, kin, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if depthwise {
            if cout != cin || kin != 1 {
                return Err(err(format!("axis 1: depthwise kernel {kernel:?} needs one filter per channel of {cin}")));
            }
        } else if kin != cin {
            return Err(err(format!("axis 1: input has {cin} channels, kernel expects {kin}")));
        }
        let (sh, sw) = stride;
        if !(1..=2).contains(&sh) || !(1..=2).contains(&sw) {
            return Err(TensorError::Domain { op, detail: format!("stride {stride:?} outside {{1,2}}") });
        }
        let ho = conv_output_extent(h, kh, sh, padding).ok_or_else(|| err(format!("axis 2: {h} < kernel {kh}")))?;
        let wo = conv_output_extent(w, kw, sw, padding).ok_or_else(|| err(format!("axis 3: {w} < kernel {kw}")))?;
        let (pad_top, pad_left) = match padding {
            Padding::Same => (((ho - 1) * sh + kh).saturating_sub(h) / 2, ((wo - 1) * sw + kw).saturating_sub(w) / 2),
            Padding::Valid => (0, 0),
        };
        Ok(Self { n, cin, h, w, cout, kh, kw, sh, sw, pad_top, pad_left, ho, wo })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate read by output `(o, k)` along an axis, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1
    }
}

fn im2col<T: Real>(g: &Geometry, image: &[T], cols: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let plane = &image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.ho {
                    let Some(iy) = Geometry::src(oy, ky, g.sh, g.pad_top, g.h) else {
                        row[oy * g.wo..(oy + 1) * g.wo].iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    };
                    for ox in 0..g.wo {
                        row[oy * g.wo + ox] = match Geometry::src(ox, kx, g.sw, g.pad_left, g.w) {
                            Some(ix) => plane[iy * g.w + ix],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Geometry, cols: &[T], image: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let plane = &mut image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.ho {
                    let Some(iy) = Geometry::src(oy, ky, g.sh, g.pad_top, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = Geometry::src(ox, kx, g.sw, g.pad_left, g.w) {
                            plane[iy * g.w + ix] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(op: &'static str, bias: Option<&[usize]>, cout: usize) -> Result<()> {
    match bias {
        Some(s) if s != [cout] => {
            Err(TensorError::Shape { op, detail: format!("bias {s:?} for {cout} output channels") })
        }
        _ => Ok(()),
    }
}

impl<T: Real> Graph<T> {
    /// Dense convolution. `input: [N,Cin,H,W]`, `kernel: [Cout,Cin,kh,kw]`,
    /// optional `bias: [Cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let geom = Geometry::new("conv2d", self.shape(input), self.shape(kernel), stride, padding, false)?;
        check_bias("conv2d", bias.map(|b| self.shape(b)), geom.cout)?;
        let (p, patch) = (geom.out_plane(), geom.patch());
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![T::zero(); geom.n * geom.cout * p];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); patch * p] };
        for s in 0..geom.n {
            let image = &x[s * geom.cin * geom.h * geom.w..(s + 1) * geom.cin * geom.h * geom.w];
            let cols_ref: &[T] = if geom.is_pointwise() {
                image
            } else {
                im2col(&geom, image, &mut cols);
                &cols
            };
            let dst = &mut out[s * geom.cout * p..(s + 1) * geom.cout * p];
            matmul(k, false, cols_ref, false, dst, geom.cout, patch, p, false);
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (co, plane) in dst.chunks_mut(p).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
        }
        let value = Tensor::new(vec![geom.n, geom.cout, geom.ho, geom.wo], out)?;
        self.push(value, Op::Conv2d { input, kernel, bias, geom })
    }

    /// Per-channel convolution. `kernel: [C,1,kh,kw]`, optional `bias: [C]`.
    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let geom = Geometry::new("depthwise_conv2d", self.shape(input), self.shape(kernel), stride, padding, true)?;
        check_bias("depthwise_conv2d", bias.map(|b| self.shape(b)), geom.cout)?;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let bv = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); geom.n * geom.cin * geom.out_plane()];
        for s in 0..geom.n {
            for c in 0..geom.cin {
                let plane = &x[(s * geom.cin + c) * geom.h * geom.w..][..geom.h * geom.w];
                let kern = &k[c * geom.kh * geom.kw..][..geom.kh * geom.kw];
                let dst = &mut out[(s * geom.cin + c) * geom.out_plane()..][..geom.out_plane()];
                for oy in 0..geom.ho {
                    for ox in 0..geom.wo {
                        let mut acc = bv.map_or(T::zero(), |b| b[c]);
                        for ky in 0..geom.kh {
                            let Some(iy) = Geometry::src(oy, ky, geom.sh, geom.pad_top, geom.h) else { continue };
                            for kx in 0..geom.kw {
                                if let Some(ix) = Geometry::src(ox, kx, geom.sw, geom.pad_left, geom.w) {
                                    acc += plane[iy * geom.w + ix] * kern[ky * geom.kw + kx];
                                }
                            }
                        }
                        dst[oy * geom.wo + ox] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(vec![geom.n, geom.cin, geom.ho, geom.wo], out)?;
        self.push(value, Op::Depthwise { input, kernel, bias, geom })
    }

    /// Depthwise convolution followed by a 1×1 pointwise convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn depthwise_separable_conv2d(
        &mut self,
        input: Var,
        depth_kernel: Var,
        depth_bias: Option<Var>,
        point_kernel: Var,
        point_bias: Option<Var>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let ps = self.shape(point_kernel);
        if ps.len() != 4 || ps[2] != 1 || ps[3] != 1 {
            return Err(TensorError::Shape {
                op: "depthwise_separable_conv2d",
                detail: format!("axes 2,3: point kernel {ps:?} must be 1x1"),
            });
        }
        let d = self.depthwise_conv2d(input, depth_kernel, depth_bias, stride, padding)?;
        self.conv2d(d, point_kernel, point_bias, (1, 1), Padding::Valid)
    }
}

pub(super) fn conv2d_backward<T: Real>(
    input: Var,
    xv: &Tensor<T>,
    kernel: Var,
    kv: &Tensor<T>,
    bias: Option<Var>,
    geom: &Geometry,
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let (p, patch) = (geom.out_plane(), geom.patch());
    let image_len = geom.cin * geom.h * geom.w;
    let mut dk = vec![T::zero(); geom.cout * patch];
    let mut dx = vec![T::zero(); xv.numel()];
    let mut cols = vec![T::zero(); patch * p];
    let mut dcols = vec![T::zero(); patch * p];
    for s in 0..geom.n {
        let image = &xv.data()[s * image_len..(s + 1) * image_len];
        let go = &g.data()[s * geom.cout * p..(s + 1) * geom.cout * p];
        let dimage = &mut dx[s * image_len..(s + 1) * image_len];
        if geom.is_pointwise() {
            matmul(go, false, image, true, &mut dk, geom.cout, p, patch, true);
            matmul(kv.data(), true, go, false, dimage, patch, geom.cout, p, true);
        } else {
            im2col(geom, image, &mut cols);
            matmul(go, false, &cols, true, &mut dk, geom.cout, p, patch, true);
            matmul(kv.data(), true, go, false, &mut dcols, patch, geom.cout, p, false);
            col2im(geom, &dcols, dimage);
        }
    }
    let mut grads = vec![
        (input, Tensor::new(xv.shape().to_vec(), dx).unwrap()),
        (kernel, Tensor::new(kv.shape().to_vec(), dk).unwrap()),
    ];
    if let Some(b) = bias {
        grads.push((b, channel_sums(g, geom.n, geom.cout, p)));
    }
    grads
}

pub(super) fn depthwise_backward<T: Real>(
    input: Var,
    xv: &Tensor<T>,
    kernel: Var,
    kv: &Tensor<T>,
    bias: Option<Var>,
    geom: &Geometry,
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let mut dx = vec![T::zero(); xv.numel()];
    let mut dk = vec![T::zero(); kv.numel()];
    let kk = geom.kh * geom.kw;
    for s in 0..geom.n {
        for c in 0..geom.cin {
            let base = (s * geom.cin + c) * geom.h * geom.w;
            let plane = &xv.data()[base..base + geom.h * geom.w];
            let kern = &kv.data()[c * kk..(c + 1) * kk];
            let go = &g.data()[(s * geom.cin + c) * geom.out_plane()..][..geom.out_plane()];
            for oy in 0..geom.ho {
                for ox in 0..geom.wo {
                    let d = go[oy * geom.wo + ox];
                    for ky in 0..geom.kh {
                        let Some(iy) = Geometry::src(oy, ky, geom.sh, geom.pad_top, geom.h) else { continue };
                        for kx in 0..geom.kw {
                            if let Some(ix) = Geometry::src(ox, kx, geom.sw, geom.pad_left, geom.w) {
                                dk[c * kk + ky * geom.kw + kx] += d * plane[iy * geom.w + ix];
                                dx[base + iy * geom.w + ix] += d * kern[ky * geom.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    let mut grads = vec![
        (input, Tensor::new(xv.shape().to_vec(), dx).unwrap()),
        (kernel, Tensor::new(kv.shape().to_vec(), dk).unwrap()),
    ];
    if let Some(b) = bias {
        grads.push((b, channel_sums(g, geom.n, geom.cin, geom.out_plane())));
    }
    grads
}

fn channel_sums<T: Real>(g: &Tensor<T>, n: usize, c: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); c];
    for s in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += g.data()[(s * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new(vec![c], db).unwrap()
}
