//! Forward numeric kernels. Pure functions over [`Tensor`]; shape checks live
//! in the tape so error messages can name the op.

use super::tensor::Tensor;

/// `op(a) * op(b)` where `op` optionally transposes.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let [ar, ac] = a.shape();
    let [br, bc] = b.shape();
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    // SAFETY: pointers and strides describe exactly the row-major buffers
    // owned by `a`, `b` and `out`, whose sizes were derived from their shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Output shape of a 2-D broadcast, or `None` if the shapes do not conform.
/// Each dimension must match or be 1 on one side.
pub(crate) fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> Option<[usize; 2]> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some([dim(a[0], b[0])?, dim(a[1], b[1])?])
}

pub(crate) fn binary(a: &Tensor, b: &Tensor, out: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == out && b.shape() == out {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out[0], out[1], data).expect("shape");
    }
    let [r, c] = out;
    // Broadcast dimensions get stride 0.
    let strides = |t: &Tensor| {
        (
            if t.rows() == r { t.cols() } else { 0 },
            usize::from(t.cols() == c),
        )
    };
    let (ar, ac) = strides(a);
    let (br, bc) = strides(b);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let (ao, bo) = (i * ar, i * br);
        data.extend((0..c).map(|j| f(ad[ao + j * ac], bd[bo + j * bc])));
    }
    Tensor::new(r, c, data).expect("shape")
}

/// `x W + b` with `b` a `1 x n` row broadcast over the batch.
pub(crate) fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut out = matmul(x, w, false, false);
    let n = out.cols();
    for row in out.data_mut().chunks_mut(n.max(1)) {
        for (o, bias) in row.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    out
}

pub(crate) fn sum_rows(x: &Tensor) -> Tensor {
    // axis 0: [r, c] -> [1, c]
    let c = x.cols();
    let mut acc = vec![0.0; c];
    for row in x.data().chunks(c.max(1)) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::row(acc)
}

pub(crate) fn sum_cols(x: &Tensor) -> Tensor {
    // axis 1: [r, c] -> [r, 1]
    let c = x.cols().max(1);
    Tensor::column(x.data().chunks(c).map(|row| row.iter().sum()).collect())
}

pub(crate) fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

pub(crate) fn expand(x: &Tensor, rows: usize, cols: usize) -> Tensor {
    let zeros = Tensor::zeros(rows, cols);
    binary(&zeros, x, [rows, cols], |_, v| v)
}

pub(crate) fn concat_cols(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row_slice(r));
        }
    }
    Tensor::new(rows, cols, data).expect("shape")
}

pub(crate) fn slice_cols(x: &Tensor, start: usize, end: usize) -> Tensor {
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * (end - start));
    for r in 0..rows {
        data.extend_from_slice(&x.row_slice(r)[start..end]);
    }
    Tensor::new(rows, end - start, data).expect("shape")
}

pub(crate) fn pad_cols(x: &Tensor, start: usize, total: usize) -> Tensor {
    let rows = x.rows();
    let mut out = Tensor::zeros(rows, total);
    let w = x.cols();
    for r in 0..rows {
        out.data_mut()[r * total + start..r * total + start + w].copy_from_slice(x.row_slice(r));
    }
    out
}

pub(crate) fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let c = x.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(x.row_slice(i));
    }
    Tensor::new(idx.len(), c, data).expect("shape")
}

/// Sums row `r` of `x` into output row `groups[r]`. Rows are visited in order,
/// so the summation order is fixed.
pub(crate) fn segment_sum(x: &Tensor, groups: &[usize], n_groups: usize) -> Tensor {
    let c = x.cols();
    let mut out = Tensor::zeros(n_groups, c);
    let od = out.data_mut();
    for (r, &g) in groups.iter().enumerate() {
        let src = x.row_slice(r);
        let dst = &mut od[g * c..(g + 1) * c];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    out
}

pub(crate) fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

/// `tanh` through one `exp`; a short odd series near zero avoids the
/// cancellation in `1 - 2 / (e + 1)`.
pub(crate) fn tanh(v: f64) -> f64 {
    let a = v.abs();
    let r = if a < 0.02 {
        let q = a * a;
        a * (1.0 - q * (1.0 / 3.0 - q * (2.0 / 15.0 - q * (17.0 / 315.0))))
    } else if a > 20.0 {
        1.0
    } else {
        1.0 - 2.0 / ((2.0 * a).exp() + 1.0)
    };
    r.copysign(v)
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
