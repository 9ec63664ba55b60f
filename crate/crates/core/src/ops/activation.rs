use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Darknet's customary negative slope.
pub const DARKNET_LEAKY_SLOPE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Relu6,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if v < T::zero() {
                    T::from_f64(slope as f64) * v
                } else {
                    v
                }
            }
            Activation::Relu6 => v.max(T::zero()).min(T::from_f64(6.0)),
        }
    }

    /// Derivative at `v`; kinks take the right-hand side except at the upper relu6 clamp.
    pub fn derivative<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if v < T::zero() {
                    T::from_f64(slope as f64)
                } else {
                    T::one()
                }
            }
            Activation::Relu6 => {
                if v > T::zero() && v < T::from_f64(6.0) {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Relu6 => "relu6",
        }
    }
}

pub fn activate<T: Scalar>(x: &Tensor<T>, act: Activation) -> Tensor<T> {
    x.map(|v| act.apply(v))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    activate(x, Activation::Relu)
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f32) -> Tensor<T> {
    activate(x, Activation::LeakyRelu(slope))
}

pub fn relu6<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    activate(x, Activation::Relu6)
}

/// Gradient w.r.t. the activation's input `x`.
pub fn activation_backward<T: Scalar>(x: &Tensor<T>, act: Activation, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            context: "activation gradient".into(),
            left: x.shape(),
            right: grad_out.shape(),
        });
    }
    x.zip_map(grad_out, |v, g| g * act.derivative(v))
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    activation_backward(x, Activation::Relu, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn t(v: Vec<f32>) -> Tensor {
        Tensor::from_vec(Shape4::new(1, 1, 1, v.len()).unwrap(), v).unwrap()
    }

    #[test]
    fn relu_all_negative_is_zero() {
        assert!(relu(&t(vec![-1.0, -0.5, -3.0])).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leaky_identity_slope() {
        let x = t(vec![-2.0, 0.0, 3.5]);
        assert_eq!(leaky_relu(&x, 1.0), x);
        assert_eq!(leaky_relu(&x, 0.1).data()[0], -0.2f32);
    }

    #[test]
    fn relu6_clamps() {
        assert_eq!(relu6(&t(vec![10.0, -1.0, 3.0])).data(), &[6.0, 0.0, 3.0]);
    }

    #[test]
    fn relu_backward_passes_positive() {
        let x = t(vec![0.5, 2.0, 7.0]);
        let g = t(vec![1.25, -3.0, 0.125]);
        assert_eq!(relu_backward(&x, &g).unwrap(), g);
        let x = t(vec![-0.5, 2.0, 7.0]);
        assert_eq!(activation_backward(&x, Activation::Relu6, &g).unwrap().data(), &[0.0, -3.0, 0.0]);
    }
}
