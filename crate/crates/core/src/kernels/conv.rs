//! 2-D convolution, forward and backward.
//!
//! The default strategy lowers each (sample, group) pair to a GEMM over an
//! im2col buffer. [`ConvStrategy::Direct`] keeps the plain nested loop for
//! comparison and for tiny shapes.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::Config(format!(
                "conv kernel, stride and groups must be positive: {self:?}"
            )));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups={} must divide in_channels={} and out_channels={}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let dim = |size: usize, k: usize, axis: &str| {
            let padded = size + 2 * self.padding;
            if padded < k {
                return Err(Error::Config(format!(
                    "conv output {axis} is not positive: input {size}, padding {}, kernel {k}",
                    self.padding
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((dim(h, self.kernel.0, "height")?, dim(w, self.kernel.1, "width")?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvStrategy {
    #[default]
    Im2col,
    Direct,
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    cg: usize,
    og: usize,
}

impl Geometry {
    fn cols_rows(&self, spec: &ConvSpec) -> usize {
        self.cg * spec.kernel.0 * spec.kernel.1
    }

    fn is_pointwise(&self, spec: &ConvSpec) -> bool {
        spec.kernel == (1, 1) && spec.stride == 1 && spec.padding == 0
    }
}

fn check<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::dim("input channel axis", spec.in_channels, c));
    }
    let expected = spec.weight_shape();
    if weight.shape() != expected {
        return Err(Error::dim(
            "weight shape (O, I/groups, kh, kw)",
            format!("{expected:?}"),
            format!("{:?}", weight.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::dim(
                "bias length",
                spec.out_channels,
                format!("{:?}", b.shape()),
            ));
        }
    }
    let (ho, wo) = spec.output_hw(h, w)?;
    Ok(Geometry {
        n,
        h,
        w,
        ho,
        wo,
        cg: c / spec.groups,
        og: spec.out_channels / spec.groups,
    })
}

/// Unfolds the channel slice `x` (`cg x h x w`) into `(cg*kh*kw) x (ho*wo)`.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, spec: &ConvSpec, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let plane = g.ho * g.wo;
    for ci in 0..g.cg {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - p + ki as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kj as isize;
                        *out = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the channel slice `dx`.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, spec: &ConvSpec, dx: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let plane = g.ho * g.wo;
    for ci in 0..g.cg {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - p + ki as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = ox as isize * s - p + kj as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let d = &mut dst[iy as usize * g.w + ix as usize];
                        *d = *d + src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_with(input, weight, bias, spec, ConvStrategy::Im2col)
}

pub fn conv2d_with<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    strategy: ConvStrategy,
) -> Result<Tensor<T>> {
    let g = check(input, weight, bias, spec)?;
    let mut out = vec![T::zero(); g.n * spec.out_channels * g.ho * g.wo];
    match strategy {
        ConvStrategy::Im2col => forward_im2col(input.data(), weight.data(), &g, spec, &mut out),
        ConvStrategy::Direct => forward_direct(input.data(), weight.data(), &g, spec, &mut out),
    }
    if let Some(b) = bias {
        let plane = g.ho * g.wo;
        for chunk in out.chunks_mut(plane).enumerate() {
            let (idx, plane_out) = chunk;
            let bv = b.data()[idx % spec.out_channels];
            plane_out.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    Tensor::new(&[g.n, spec.out_channels, g.ho, g.wo], out)
}

fn forward_im2col<T: Scalar>(x: &[T], w: &[T], g: &Geometry, spec: &ConvSpec, out: &mut [T]) {
    let k = g.cols_rows(spec);
    let plane = g.ho * g.wo;
    let in_sample = spec.in_channels * g.h * g.w;
    let out_sample = spec.out_channels * plane;
    let pointwise = g.is_pointwise(spec);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };
    for n in 0..g.n {
        for grp in 0..spec.groups {
            let xs = &x[n * in_sample + grp * g.cg * g.h * g.w..][..g.cg * g.h * g.w];
            let lhs = &w[grp * g.og * k..(grp + 1) * g.og * k];
            let dst = &mut out[n * out_sample + grp * g.og * plane..][..g.og * plane];
            let rhs: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, g, spec, &mut cols);
                &cols
            };
            T::gemm(g.og, k, plane, lhs, (k, 1), rhs, (plane, 1), dst, (plane, 1), false);
        }
    }
}

fn forward_direct<T: Scalar>(x: &[T], w: &[T], g: &Geometry, spec: &ConvSpec, out: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    for n in 0..g.n {
        for o in 0..spec.out_channels {
            let grp = o / g.og;
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = T::zero();
                    for ci in 0..g.cg {
                        let c = grp * g.cg + ci;
                        for ki in 0..kh {
                            let iy = oy as isize * s - p + ki as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let ix = ox as isize * s - p + kj as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((n * spec.in_channels + c) * g.h + iy as usize) * g.w
                                    + ix as usize];
                                let wv = w[((o * g.cg + ci) * kh + ki) * kw + kj];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((n * spec.out_channels + o) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to its operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass. `input` gradients are only computed when `need_input`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = check(input, weight, None, spec)?;
    let expected = [g.n, spec.out_channels, g.ho, g.wo];
    if grad_out.shape() != expected {
        return Err(Error::dim(
            "upstream gradient shape",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let k = g.cols_rows(spec);
    let plane = g.ho * g.wo;
    let in_group = g.cg * g.h * g.w;
    let in_sample = spec.in_channels * g.h * g.w;
    let out_sample = spec.out_channels * plane;
    let pointwise = g.is_pointwise(spec);
    let (x, w, dy) = (input.data(), weight.data(), grad_out.data());

    let mut dw = vec![T::zero(); weight.numel()];
    let mut dx = if need_input { vec![T::zero(); input.numel()] } else { Vec::new() };
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut dcols = if need_input && !pointwise { vec![T::zero(); k * plane] } else { Vec::new() };

    for n in 0..g.n {
        for grp in 0..spec.groups {
            let x_off = n * in_sample + grp * in_group;
            let xs = &x[x_off..x_off + in_group];
            let dys = &dy[n * out_sample + grp * g.og * plane..][..g.og * plane];
            let rhs: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, &g, spec, &mut cols);
                &cols
            };
            // dW_g += dY_g (og x plane) * cols^T (plane x k)
            let dwg = &mut dw[grp * g.og * k..(grp + 1) * g.og * k];
            T::gemm(g.og, plane, k, dys, (plane, 1), rhs, (1, plane), dwg, (k, 1), true);
            if need_input {
                let wg = &w[grp * g.og * k..(grp + 1) * g.og * k];
                let dxs = &mut dx[x_off..x_off + in_group];
                if pointwise {
                    // dX_g += W_g^T (k x og) * dY_g (og x plane)
                    T::gemm(k, g.og, plane, wg, (1, k), dys, (plane, 1), dxs, (plane, 1), true);
                } else {
                    T::gemm(k, g.og, plane, wg, (1, k), dys, (plane, 1), &mut dcols, (plane, 1), false);
                    col2im(&dcols, &g, spec, dxs);
                }
            }
        }
    }

    let mut db = vec![T::zero(); spec.out_channels];
    for (idx, chunk) in dy.chunks(plane).enumerate() {
        let o = idx % spec.out_channels;
        db[o] = db[o] + chunk.iter().copied().sum::<T>();
    }

    Ok(ConvGrads {
        input: if need_input {
            Some(Tensor::new(input.shape(), dx)?)
        } else {
            None
        },
        weight: Tensor::new(weight.shape(), dw)?,
        bias: Tensor::new(&[spec.out_channels], db)?,
    })
}
