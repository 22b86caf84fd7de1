//! 2-D cross-correlation via im2col + GEMM, NCHW layout.

use crate::error::{dim_err, Result};
use crate::numerics::linalg::{gemm, Trans};
use crate::numerics::tensor::{Scalar, Tensor};

/// Square kernel size, stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// 3×3, stride 1, padding 1: preserves spatial extent.
    pub const SAME3: ConvGeometry = ConvGeometry { kernel: 3, stride: 1, pad: 1 };

    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry { kernel, stride, pad }
    }

    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.pad;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return Err(dim_err!(
                "extent {} too small for kernel {} (pad {})",
                extent,
                self.kernel,
                self.pad
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

struct Dims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ho: usize,
    wo: usize,
}

fn dims<T: Scalar>(x_shape: &[usize], kernel: &Tensor<T>, geom: ConvGeometry) -> Result<Dims> {
    if x_shape.len() != 4 {
        return Err(dim_err!("conv2d input must be n×c×h×w, got {:?}", x_shape));
    }
    kernel.expect_rank(4, "conv2d kernel")?;
    let ks = kernel.shape();
    if ks[2] != geom.kernel || ks[3] != geom.kernel {
        return Err(dim_err!("kernel {:?} does not match geometry {:?}", ks, geom));
    }
    if ks[1] != x_shape[1] {
        return Err(dim_err!(
            "kernel expects {} input channels, input has {}",
            ks[1],
            x_shape[1]
        ));
    }
    Ok(Dims {
        n: x_shape[0],
        c_in: x_shape[1],
        h: x_shape[2],
        w: x_shape[3],
        c_out: ks[0],
        ho: geom.output_extent(x_shape[2])?,
        wo: geom.output_extent(x_shape[3])?,
    })
}

fn im2col<T: Scalar>(img: &[T], d: &Dims, g: ConvGeometry, cols: &mut [T]) {
    let k = g.kernel;
    let hw_out = d.ho * d.wo;
    for c in 0..d.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * d.h + iy as usize) * d.w..(c * d.h + iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Dims, g: ConvGeometry, img: &mut [T]) {
    let k = g.kernel;
    let hw_out = d.ho * d.wo;
    for c in 0..d.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = (c * d.h + iy as usize) * d.w;
                    for ox in 0..d.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            img[base + ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation of `x: n×c_in×h×w` with `kernel: c_out×c_in×k×k`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    let d = dims(x.shape(), kernel, geom)?;
    let patch = d.c_in * geom.kernel * geom.kernel;
    let hw_out = d.ho * d.wo;
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * hw_out;
    let mut cols = vec![T::zero(); patch * hw_out];
    let mut out = Tensor::zeros(&[d.n, d.c_out, d.ho, d.wo]);
    for i in 0..d.n {
        im2col(&x.data()[i * in_len..(i + 1) * in_len], &d, geom, &mut cols);
        gemm(
            d.c_out,
            patch,
            hw_out,
            kernel.data(),
            Trans::No,
            &cols,
            Trans::No,
            T::zero(),
            &mut out.data_mut()[i * out_len..(i + 1) * out_len],
        );
    }
    Ok(out)
}

/// Gradient of the conv output w.r.t. the kernel.
pub fn conv2d_kernel_grad<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeometry,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = dims(x.shape(), kernel, geom)?;
    check_grad_shape(&d, grad)?;
    let patch = d.c_in * geom.kernel * geom.kernel;
    let hw_out = d.ho * d.wo;
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * hw_out;
    let mut cols = vec![T::zero(); patch * hw_out];
    let mut dk = Tensor::zeros(kernel.shape());
    for i in 0..d.n {
        im2col(&x.data()[i * in_len..(i + 1) * in_len], &d, geom, &mut cols);
        gemm(
            d.c_out,
            hw_out,
            patch,
            &grad.data()[i * out_len..(i + 1) * out_len],
            Trans::No,
            &cols,
            Trans::Yes,
            T::one(),
            dk.data_mut(),
        );
    }
    Ok(dk)
}

/// Gradient of the conv output w.r.t. its input.
pub fn conv2d_input_grad<T: Scalar>(
    input_shape: &[usize],
    kernel: &Tensor<T>,
    geom: ConvGeometry,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = dims(input_shape, kernel, geom)?;
    check_grad_shape(&d, grad)?;
    let patch = d.c_in * geom.kernel * geom.kernel;
    let hw_out = d.ho * d.wo;
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * hw_out;
    let mut cols = vec![T::zero(); patch * hw_out];
    let mut dx = Tensor::zeros(input_shape);
    for i in 0..d.n {
        gemm(
            patch,
            d.c_out,
            hw_out,
            kernel.data(),
            Trans::Yes,
            &grad.data()[i * out_len..(i + 1) * out_len],
            Trans::No,
            T::zero(),
            &mut cols,
        );
        col2im(&cols, &d, geom, &mut dx.data_mut()[i * in_len..(i + 1) * in_len]);
    }
    Ok(dx)
}

/// Both conv gradients: `(dL/dx, dL/dkernel)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeometry,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let dx = conv2d_input_grad(x.shape(), kernel, geom, grad)?;
    let dk = conv2d_kernel_grad(x, kernel, geom, grad)?;
    Ok((dx, dk))
}

fn check_grad_shape<T: Scalar>(d: &Dims, grad: &Tensor<T>) -> Result<()> {
    if grad.shape() != [d.n, d.c_out, d.ho, d.wo] {
        return Err(dim_err!(
            "conv grad shape {:?}, expected {:?}",
            grad.shape(),
            [d.n, d.c_out, d.ho, d.wo]
        ));
    }
    Ok(())
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    x.expect_rank(4, "add_channel_bias")?;
    let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
    if bias.len() != c {
        return Err(dim_err!("bias length {} vs {} channels", bias.len(), c));
    }
    for (idx, plane) in x.data_mut().chunks_mut(hw).enumerate() {
        let b = bias.data()[idx % c];
        for v in plane {
            *v += b;
        }
    }
    Ok(())
}

/// Per-channel sums over batch and space (the channel-bias gradient).
pub fn channel_sums<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank(4, "channel_sums")?;
    let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
    let mut out = Tensor::zeros(&[c]);
    for (idx, plane) in x.data().chunks(hw).enumerate() {
        out.data_mut()[idx % c] += plane.iter().copied().sum();
    }
    Ok(out)
}
