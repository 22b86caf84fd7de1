use crate::error::{dim_err, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// Operand layout for [`gemm`]: whether the stored matrix is used transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a` holds `m×k` row-major when `ta == No`, otherwise `k×m`; likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Trans,
    b: &[T],
    tb: Trans,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    // SAFETY: lengths were checked against the extents above and strides
    // describe row-major storage of exactly those extents.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    t.expect_rank(2, what)?;
    Ok((t.shape()[0], t.shape()[1]))
}

/// Product `op(a) · op(b)` of rank-2 tensors.
pub fn matmul_t<T: Scalar>(a: &Tensor<T>, ta: Trans, b: &Tensor<T>, tb: Trans) -> Result<Tensor<T>> {
    let (ar, ac) = dims2(a, "matmul lhs")?;
    let (br, bc) = dims2(b, "matmul rhs")?;
    let (m, k) = if ta == Trans::No { (ar, ac) } else { (ac, ar) };
    let (k2, n) = if tb == Trans::No { (br, bc) } else { (bc, br) };
    if k != k2 {
        return Err(dim_err!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, a.data(), ta, b.data(), tb, T::zero(), out.data_mut());
    Ok(out)
}

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, Trans::No, b, Trans::No)
}

/// Gradients of `c = a·b` given `dL/dc`: returns `(G·bᵀ, aᵀ·G)`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let da = matmul_t(grad, Trans::No, b, Trans::Yes)?;
    let db = matmul_t(a, Trans::Yes, grad, Trans::No)?;
    Ok((da, db))
}

/// Adds `bias[j]` to every row of a rank-2 tensor.
pub fn add_row_bias<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let (_, d) = dims2(x, "add_row_bias")?;
    if bias.len() != d {
        return Err(dim_err!("bias length {} vs row length {}", bias.len(), d));
    }
    for row in x.data_mut().chunks_mut(d) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(())
}

/// Column sums of a rank-2 tensor (the bias gradient).
pub fn column_sums<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, d) = dims2(x, "column_sums")?;
    let mut out = Tensor::zeros(&[d]);
    for row in x.data().chunks(d) {
        for (o, &v) in out.data_mut().iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(out)
}
