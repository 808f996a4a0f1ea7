//! Pointwise activations and their derivatives.

use crate::real::Real;

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_C);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_C);
    let half = T::lit(0.5);
    let three = T::lit(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

pub fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s + x * s * (T::one() - s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "gelu at {x}");
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8, "silu at {x}");
        }
    }
}
