use super::Real;

#[allow(clippy::too_many_arguments)]
pub(super) fn check_gemm(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    (rsa, csa): (isize, isize),
    b_len: usize,
    (rsb, csb): (isize, isize),
    c_len: usize,
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0, "negative strides unsupported");
    assert!(span(m, k, rsa, csa) <= a_len, "gemm: lhs view out of bounds");
    assert!(span(k, n, rsb, csb) <= b_len, "gemm: rhs view out of bounds");
    assert!(m * n <= c_len, "gemm: output view out of bounds");
}

/// `c (m×n) = op(a) · op(b) (+ c when accumulating)`.
///
/// `a` is stored `m×k`, or `k×m` when `trans_a`; likewise `b` is `k×n` or `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let a_strides = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let b_strides = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, a, a_strides, b, b_strides, beta, c);
}
