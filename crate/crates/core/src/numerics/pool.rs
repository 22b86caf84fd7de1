use crate::error::{dim_err, Result};
use crate::numerics::tensor::{Scalar, Tensor};

fn nchw<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(4, what)?;
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// 2×2 max pooling. Returns the pooled tensor and, for every output element,
/// the flat input index it was taken from. Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = nchw(x, "maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(dim_err!("maxpool2x2 needs even spatial extents, got {}×{}", h, w));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    let src = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, idx))
}

/// Routes each upstream gradient to the stored argmax position.
pub fn maxpool2x2_backward<T: Scalar>(
    grad: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad.len() != argmax.len() {
        return Err(dim_err!("maxpool grad has {} elements, {} indices", grad.len(), argmax.len()));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &i) in grad.data().iter().zip(argmax) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

/// Non-overlapping `k×k` average pooling.
pub fn avgpool<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x, "avgpool")?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(dim_err!("avgpool kernel {} does not divide {}×{}", k, h, w));
    }
    if k == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                dst[(plane * ho + y / k) * wo + xx / k] += src[(plane * h + y) * w + xx];
            }
        }
    }
    out.scale(inv);
    Ok(out)
}

/// Spreads each upstream gradient uniformly (`/k²`) over its window.
pub fn avgpool_backward<T: Scalar>(grad: &Tensor<T>, k: usize, input_shape: &[usize]) -> Result<Tensor<T>> {
    if input_shape.len() != 4 || k == 0 {
        return Err(dim_err!("avgpool_backward: bad input shape {:?}", input_shape));
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if grad.shape() != [n, c, h / k, w / k] {
        return Err(dim_err!("avgpool grad shape {:?} vs input {:?}", grad.shape(), input_shape));
    }
    if k == 1 {
        return Ok(grad.clone());
    }
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    let g = grad.data();
    Ok(Tensor::from_fn(input_shape, |i| {
        let xx = i % w;
        let y = (i / w) % h;
        let plane = i / (h * w);
        g[(plane * ho + y / k) * wo + xx / k] * inv
    }))
}
