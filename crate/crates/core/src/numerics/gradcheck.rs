use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Evaluates `f` on fresh differentiable copies of `inputs` and returns the
/// scalar value with its gradient w.r.t. every input.
pub fn grad<F>(f: F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.check_finite(out, "grad objective")?;
    let value = g.scalar(out);
    let grads = g.backward(out)?;
    let gs = vars.iter().map(|v| grads.wrt(*v)).collect::<Vec<_>>();
    if gs.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((value, gs))
}

/// Forward value only.
pub fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::NotDifferentiable("objective is not scalar".into()));
    }
    Ok(g.scalar(out))
}

/// Compares `analytic` against central differences of `f` and returns
/// `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)` over all
/// coordinates of all inputs.
pub fn compare_gradients<F>(f: &F, inputs: &[Tensor], analytic: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    if analytic.len() != inputs.len() {
        return Err(Error::shape("one analytic gradient per input is required"));
    }
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        if analytic[which].len() != input.len() {
            return Err(Error::shape(format!("gradient {which} has wrong length")));
        }
        for i in 0..input.len() {
            let x = input.data()[i];
            probe[which].data_mut()[i] = x + epsilon;
            let fp = eval(f, &probe)?;
            probe[which].data_mut()[i] = x - epsilon;
            let fm = eval(f, &probe)?;
            probe[which].data_mut()[i] = x;
            let numeric = (fp - fm) / (2.0 * epsilon);
            let err = (analytic[which].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Central-difference check of the reverse-mode gradient of `f`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = grad(&f, inputs)?;
    compare_gradients(&f, inputs, &analytic, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, RngStream};

    #[test]
    fn quadratic_form_gradient() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let (v, g) = grad(
            |g, v| {
                let sq = g.square(v[0]);
                Ok(g.sum(sq))
            },
            &[x],
        )
        .unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn standard_normal_score() {
        let (_, g) = grad(
            |g, v| {
                let zero = g.constant(Tensor::scalar(0.0));
                g.gaussian_logpdf(v[0], zero, 1.0)
            },
            &[Tensor::scalar(3.0)],
        )
        .unwrap();
        assert_eq!(g[0].item(), -3.0);
    }

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::new(vec![3, 1], vec![0.5, -1.5, 2.0]).unwrap();
        let f = move |g: &mut Graph<'_>, v: &[Var]| {
            let wv = g.constant(w.clone());
            let y = g.matmul(v[0], wv);
            Ok(g.sum(y))
        };
        let err = finite_diff_check(f, &[Tensor::vector(vec![0.1, 0.2, 0.3])], 1e-4).unwrap();
        assert!(err <= 1e-10, "err {err}");
    }

    #[test]
    fn sine_at_point_three() {
        let f = |g: &mut Graph<'_>, v: &[Var]| {
            let s = g.sin(v[0]);
            Ok(g.sum(s))
        };
        let err = finite_diff_check(f, &[Tensor::scalar(0.3)], 1e-5).unwrap();
        assert!(err <= 1e-8, "err {err}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let f = |g: &mut Graph<'_>, v: &[Var]| {
            let t = g.tanh(v[0]);
            let s = g.square(t);
            Ok(g.sum(s))
        };
        let x = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let (_, mut analytic) = grad(f, std::slice::from_ref(&x)).unwrap();
        analytic[0].data_mut()[1] += 0.1;
        let err = compare_gradients(&f, &[x], &analytic, 1e-5).unwrap();
        assert!(err >= 0.05, "err {err}");
    }

    #[test]
    fn random_mlp_matches_central_differences() {
        let mut rng = RngStream::new(5, 0);
        let w1 = gaussian_sample(&[4, 6], &mut rng).unwrap();
        let w2 = gaussian_sample(&[6, 5], &mut rng).unwrap();
        let w3 = gaussian_sample(&[5, 1], &mut rng).unwrap();
        let x = gaussian_sample(&[2, 4], &mut rng).unwrap();
        let f = |g: &mut Graph<'_>, v: &[Var]| {
            let h = g.matmul(v[0], v[1]);
            let h = g.tanh(h);
            let h = g.matmul(h, v[2]);
            let h = g.tanh(h);
            let y = g.matmul(h, v[3]);
            Ok(g.sum(y))
        };
        let err = finite_diff_check(f, &[x, w1, w2, w3], 1e-6).unwrap();
        assert!(err <= 1e-6, "err {err}");
    }

    #[test]
    fn epsilon_range_is_enforced() {
        let f = |g: &mut Graph<'_>, v: &[Var]| Ok(g.sum(v[0]));
        assert!(finite_diff_check(f, &[Tensor::scalar(1.0)], 1e-2).is_err());
    }

    #[test]
    fn non_scalar_objective_is_rejected() {
        let f = |_: &mut Graph<'_>, v: &[Var]| Ok(v[0]);
        assert!(matches!(grad(f, &[Tensor::vector(vec![1.0, 2.0])]), Err(Error::NotDifferentiable(_))));
    }
}
