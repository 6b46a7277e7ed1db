use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parametric exponential linear unit:
/// `(a/b)·x` for `x ≥ 0`, `a·(exp(x/b) − 1)` otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pelu {
    pub a: f64,
    pub b: f64,
}

impl Default for Pelu {
    fn default() -> Self {
        Pelu { a: 1.0, b: 1.0 }
    }
}

impl Pelu {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "PeLU parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Pelu { a, b })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.a / self.b * x
        } else {
            self.a * ((x / self.b).exp() - 1.0)
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.a / self.b
        } else {
            self.a / self.b * (x / self.b).exp()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Pelu(Pelu),
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    let mut out = input.clone();
    match kind {
        Activation::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Pelu(p) => out.data_mut().iter_mut().for_each(|v| *v = p.eval(*v)),
    }
    out
}

/// Gradient with respect to the activation input.
pub fn activation_backward(input: &Tensor, grad_out: &Tensor, kind: Activation) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "activation grad {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let mut g = grad_out.clone();
    match kind {
        Activation::Relu => {
            for (gv, x) in g.data_mut().iter_mut().zip(input.data()) {
                if *x <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        Activation::Pelu(p) => {
            for (gv, x) in g.data_mut().iter_mut().zip(input.data()) {
                *gv *= p.derivative(*x);
            }
        }
    }
    Ok(g)
}

pub fn relu(input: &Tensor) -> Tensor {
    activation(input, Activation::Relu)
}

/// ReLU backward using the activation *output* (equivalent mask, saves a cache).
pub fn relu_backward_from_output(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, y) in g.data_mut().iter_mut().zip(output.data()) {
        if *y <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn pelu_is_zero_and_continuous_at_origin() {
        for (a, b) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.7)] {
            let p = Pelu::new(a, b).unwrap();
            assert_eq!(p.eval(0.0), 0.0);
            let eps = 1e-9;
            assert!((p.eval(eps) - p.eval(-eps)).abs() < 1e-8);
            // Both branches have slope a/b at the origin.
            assert!((p.derivative(-1e-12) - p.derivative(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn pelu_rejects_non_positive_parameters() {
        assert!(Pelu::new(0.0, 1.0).is_err());
        assert!(Pelu::new(1.0, -1.0).is_err());
    }

    #[test]
    fn pelu_gradient_matches_central_difference() {
        let p = Pelu::new(1.0, 1.0).unwrap();
        for x in [0.37, -0.37] {
            let h = 1e-6;
            let fd = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
            let an = p.derivative(x);
            assert!(((an - fd) / fd).abs() < 1e-5, "x={x} analytic={an} fd={fd}");
        }
    }
}
