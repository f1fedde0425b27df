//! Raw numeric kernels shared by tape ops.

use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×k] += g[m×n] · b[k×n]ᵀ`
pub fn gemm_nt<F: Scalar>(g: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            c[i * k + p] += acc;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · g[m×n]`
pub fn gemm_tn<F: Scalar>(a: &[F], g: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in c_row.iter_mut().zip(g_row) {
                *cv += av * gv;
            }
        }
    }
}

/// Numpy-style trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Row-major strides of `shape` laid against `out` (right-aligned), with
/// zero stride on broadcast dimensions.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Flat source index for every element of `out` when reading from `shape`.
pub(crate) fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let total: usize = out.iter().product();
    let src_total: usize = shape.iter().product();
    // Leading-only broadcast: source repeats contiguously.
    let trailing = &out[out.len() - shape.len()..];
    if trailing == shape {
        return (0..total).map(|i| i % src_total.max(1)).collect();
    }
    let strides = broadcast_strides(shape, out);
    let mut idx = Vec::with_capacity(total);
    let mut coord = vec![0usize; out.len()];
    for _ in 0..total {
        idx.push(coord.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for d in (0..out.len()).rev() {
            coord[d] += 1;
            if coord[d] < out[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    idx
}

/// Sums `grad` (shaped like `out`) down onto `shape`.
pub(crate) fn reduce_to_shape<F: Scalar>(grad: &[F], out: &[usize], shape: &[usize]) -> Vec<F> {
    if out == shape {
        return grad.to_vec();
    }
    let mut acc = vec![F::zero(); shape.iter().product()];
    for (g, i) in grad.iter().zip(broadcast_index(shape, out)) {
        acc[i] += *g;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_nn(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // a · bᵀᵀ: pass b transposed as 2x3
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm_nt(&a, &bt, &mut c2, 2, 2, 3);
        assert_eq!(c2, c);
        // aᵀ(3x2) · g(2x2) against explicit transposition
        let g = [1.0, 2.0, 3.0, 4.0];
        let mut c3 = [0.0; 6];
        gemm_tn(&a, &g, &mut c3, 2, 3, 2);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c4 = [0.0; 6];
        gemm_nn(&at, &g, &mut c4, 3, 2, 2);
        assert_eq!(c3, c4);
    }
}
