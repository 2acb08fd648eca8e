//! Validation utilities: central finite differences and relative-error
//! comparison. Tests across the crate use these as the independent route
//! against analytic gradients.

use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Largest elementwise relative error between two buffers, with an absolute
/// floor so near-zero entries do not blow up the ratio.
pub fn rel_err<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_err on different-length buffers");
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64c(), y.to_f64c());
        let denom = x.abs().max(y.abs()).max(1e-6);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

pub fn rel_err_tensors<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_err on different shapes");
    rel_err(a.data(), b.data())
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad(
    x: &Tensor<f64>,
    h: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Tensor<f64> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Deterministic pseudo-random projection weights used to reduce a tensor
/// output to a scalar for gradient checking.
pub fn projection_weights(shape: &[usize], salt: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut state = salt.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect(),
    )
    .unwrap()
}

/// Outcome of one gradient check: max relative error per checked input.
pub struct GradCheck {
    pub worst: f64,
    pub per_input: Vec<f64>,
}

/// Check analytic gradients of a graph-building function against central
/// finite differences (f64, default h = 1e-5).
///
/// `build` receives a graph and the leaf vars (one per entry of `inputs`,
/// all tracked) and must return the output var; the output is contracted to
/// a scalar with fixed pseudo-random weights before differentiation.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    h: f64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let run = |tensors: &[Tensor<f64>]| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| g.leaf(t.clone(), true))
            .collect();
        let out = build(&mut g, &vars)?;
        let w = g.constant(projection_weights(g.shape(out), 17).cast());
        let prod = g.mul(out, w)?;
        let loss = g.sum_all(prod)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let per_input = vars.iter().map(|&v| grads.of(v).cloned()).collect();
        Ok((value, per_input))
    };

    let (_, analytic) = run(inputs)?;
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let fd = finite_diff_grad(x, h, |probe| {
            let mut probed: Vec<Tensor<f64>> = inputs.to_vec();
            probed[i] = probe.clone();
            run(&probed).expect("grad_check forward failed").0
        });
        let an = analytic[i]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        let e = rel_err_tensors(&an, &fd);
        per_input.push(e);
        worst = worst.max(e);
    }
    Ok(GradCheck { worst, per_input })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_matches_analytic_on_square() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let fd = finite_diff_grad(&x, 1e-5, |t| t.data().iter().map(|v| v * v).sum());
        assert!(rel_err(fd.data(), &[2.0, 4.0, 6.0]) < 1e-8);
    }

    #[test]
    fn grad_check_passes_for_composed_ops() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.05, -1.4, 0.9]).unwrap();
        let res = grad_check(&[x], 1e-5, |g, vars| {
            let s = g.sigmoid(vars[0])?;
            let e = g.exp(vars[0])?;
            g.mul(s, e)
        })
        .unwrap();
        assert!(res.worst < 1e-6, "worst rel err {}", res.worst);
    }
}
