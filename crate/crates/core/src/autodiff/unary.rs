//! Pointwise nonlinearities with closed-form derivatives up to order four.
//!
//! A graph node may hold any derivative of order 0..=3 of these functions;
//! reverse mode through such a node needs the next order, hence four.

use std::f64::consts::PI;

pub const MAX_NODE_ORDER: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryFn {
    Tanh,
    Relu,
    Gelu,
    Sigmoid,
    Exp,
}

#[inline]
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Tanh => "tanh",
            UnaryFn::Relu => "relu",
            UnaryFn::Gelu => "gelu",
            UnaryFn::Sigmoid => "sigmoid",
            UnaryFn::Exp => "exp",
        }
    }

    /// Whether second derivatives are meaningful (ReLU's are identically zero
    /// away from the kink and undefined at it).
    pub fn is_smooth(self) -> bool {
        !matches!(self, UnaryFn::Relu)
    }

    /// `order`-th derivative evaluated at `z`, for `order <= 4`.
    pub fn derivative(self, order: u8, z: f64) -> f64 {
        match self {
            UnaryFn::Tanh => {
                let t = z.tanh();
                let q = 1.0 - t * t;
                match order {
                    0 => t,
                    1 => q,
                    2 => -2.0 * t * q,
                    3 => -2.0 * q * (1.0 - 3.0 * t * t),
                    4 => 8.0 * t * q * (2.0 - 3.0 * t * t),
                    _ => unreachable!("derivative order {order} > 4"),
                }
            }
            UnaryFn::Relu => match order {
                0 => z.max(0.0),
                1 => {
                    if z > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                2..=4 => 0.0,
                _ => unreachable!("derivative order {order} > 4"),
            },
            UnaryFn::Gelu => {
                let phi = normal_pdf(z);
                match order {
                    0 => z * normal_cdf(z),
                    1 => normal_cdf(z) + z * phi,
                    2 => phi * (2.0 - z * z),
                    3 => phi * (z * z * z - 4.0 * z),
                    4 => phi * (-z.powi(4) + 7.0 * z * z - 4.0),
                    _ => unreachable!("derivative order {order} > 4"),
                }
            }
            UnaryFn::Sigmoid => {
                let s = sigmoid(z);
                let q = s * (1.0 - s);
                match order {
                    0 => s,
                    1 => q,
                    2 => q * (1.0 - 2.0 * s),
                    3 => q * (1.0 - 6.0 * s + 6.0 * s * s),
                    4 => q * ((1.0 - 2.0 * s) * (1.0 - 6.0 * s + 6.0 * s * s) + q * (12.0 * s - 6.0)),
                    _ => unreachable!("derivative order {order} > 4"),
                }
            }
            UnaryFn::Exp => {
                assert!(order <= 4, "derivative order {order} > 4");
                z.exp()
            }
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [UnaryFn; 4] = [UnaryFn::Tanh, UnaryFn::Gelu, UnaryFn::Sigmoid, UnaryFn::Exp];

    #[test]
    fn derivative_chain_matches_central_differences() {
        let h = 1e-5;
        for f in ALL {
            for &z in &[-1.7, -0.4, 0.0, 0.3, 1.2, 2.0] {
                for order in 0..4u8 {
                    let fd = (f.derivative(order, z + h) - f.derivative(order, z - h)) / (2.0 * h);
                    let exact = f.derivative(order + 1, z);
                    let scale = exact.abs().max(1.0);
                    assert!(
                        (fd - exact).abs() / scale < 1e-7,
                        "{:?} order {} at {}: fd {} exact {}",
                        f,
                        order + 1,
                        z,
                        fd,
                        exact
                    );
                }
            }
        }
    }

    #[test]
    fn relu_kink_conventions() {
        assert_eq!(UnaryFn::Relu.derivative(1, 0.0), 0.0);
        assert_eq!(UnaryFn::Relu.derivative(1, 2.0), 1.0);
        assert_eq!(UnaryFn::Relu.derivative(2, 2.0), 0.0);
        assert!(!UnaryFn::Relu.is_smooth());
    }

    #[test]
    fn known_values() {
        assert_eq!(UnaryFn::Tanh.derivative(0, 0.0), 0.0);
        assert_eq!(UnaryFn::Tanh.derivative(1, 0.0), 1.0);
        assert_eq!(UnaryFn::Tanh.derivative(2, 0.0), 0.0);
        assert!((UnaryFn::Gelu.derivative(1, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(UnaryFn::Sigmoid.derivative(0, 0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
