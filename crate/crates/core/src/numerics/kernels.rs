//! Row-major dense kernels. Every output row is accumulated from its own
//! input row in a fixed order, so rows never influence each other
//! numerically; the finite-context tests rely on that.

/// `a[m,k] · b[k,n]`
pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m,k] · b[n,k]ᵀ`
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[r,p]ᵀ · b[r,q]`
pub fn mm_tn(a: &[f64], b: &[f64], r: usize, p: usize, q: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), r * p);
    debug_assert_eq!(b.len(), r * q);
    let mut out = vec![0.0; p * q];
    for s in 0..r {
        let brow = &b[s * q..(s + 1) * q];
        for i in 0..p {
            let av = a[s * p + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * q..(i + 1) * q];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        // a 2x3, b 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        assert_eq!(mm_nn(&a, &b, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
        // bᵀ stored as 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(mm_nt(&a, &bt, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        assert_eq!(mm_tn(&at, &b, 3, 2, 2), vec![58.0, 64.0, 139.0, 154.0]);
    }
}
