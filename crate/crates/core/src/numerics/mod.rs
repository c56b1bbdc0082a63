//! Dense tensors, seeded random streams, tape-based reverse-mode
//! differentiation and a finite-difference gradient checker.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod rng;
mod tensor;

pub use gradcheck::{compare_gradients, eval, finite_diff_check, grad};
pub use graph::{logpdf_normal, Gradients, Graph, Var};
pub use rng::{gaussian_sample, purpose, stream_id, RngStream};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn logpdf_normalizer_cancels() {
        let v = logpdf_normal(&Tensor::scalar(0.4), &Tensor::scalar(0.4), 1.0 / (2.0 * PI)).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn logpdf_unit_variance() {
        let v = logpdf_normal(&Tensor::scalar(1.0), &Tensor::scalar(1.0), 1.0).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn logpdf_two_coordinates() {
        let v = logpdf_normal(&Tensor::vector(vec![1.0, 0.0]), &Tensor::vector(vec![0.0, 0.0]), 1.0).unwrap();
        assert!((v - (-(2.0 * PI).ln() - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn logpdf_rejects_bad_variance() {
        let x = Tensor::scalar(0.0);
        assert!(logpdf_normal(&x, &x, 0.0).is_err());
        assert!(logpdf_normal(&x, &x, -1.0).is_err());
    }

    #[test]
    fn softmax_mask_zeroes_entries() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap());
        let p = g.softmax(x, Some(&[true, true, false, false, true, true]));
        let d = g.value(p).data();
        assert_eq!(d[2], 0.0);
        assert_eq!(d[3], 0.0);
        assert!((d[0] + d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn every_primitive_passes_gradcheck() {
        let mut rng = RngStream::new(17, 2);
        let a = gaussian_sample(&[3, 4], &mut rng).unwrap();
        let b = gaussian_sample(&[4, 3], &mut rng).unwrap();
        let row = gaussian_sample(&[3], &mut rng).unwrap();
        let col = gaussian_sample(&[3], &mut rng).unwrap();
        let w = gaussian_sample(&[3, 3, 2], &mut rng).unwrap();
        let f = |g: &mut Graph<'_>, v: &[Var]| {
            let (a, b, row, col, w) = (v[0], v[1], v[2], v[3], v[4]);
            let ab = g.matmul(a, b); // 3x3
            let abt = g.matmul_nt(ab, ab);
            let s = g.add(ab, abt);
            let s = g.sub(s, ab);
            let s = g.mul(s, ab);
            let s = g.add_row(s, row);
            let s = g.mul_row(s, row);
            let s = g.sub_col(s, col);
            let s = g.mul_col(s, col);
            let s = g.scale(s, 0.1);
            let s = g.add_scalar(s, 0.3);
            let t = g.tanh(s);
            let e = g.exp(t);
            let sn = g.sin(e);
            let sq = g.square(sn);
            let pw = g.add_scalar(sq, 1.0);
            let pw = g.powf(pw, -0.5);
            let mask = [true, false, true, true, true, false, false, true, true];
            let sm = g.softmax(pw, Some(&mask));
            let ls = g.log_softmax(t);
            let pk = g.pick(ls, &[0, 2, 1]);
            let mc = g.mean_cols(sm);
            let r = g.reshape(a, &[4, 3]);
            let c = g.conv1d(r, w);
            let cr = g.relu(c);
            let zero = g.constant(Tensor::zeros(&[4, 2]));
            let lp = g.gaussian_logpdf(cr, zero, 0.7)?;
            let s1 = g.sum(pk);
            let s2 = g.sum(mc);
            let s3 = g.add(s1, s2);
            Ok(g.add(s3, lp))
        };
        let err = finite_diff_check(f, &[a, b, row, col, w], 1e-6).unwrap();
        assert!(err <= 1e-6, "err {err}");
    }
}
