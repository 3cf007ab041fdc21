use serde::{Deserialize, Serialize};

use crate::real::Real;

/// How the sigmoid is evaluated. The accelerator's gather units use a
/// piecewise-linear approximation; training uses the exact function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmoidMode {
    #[default]
    Exact,
    Pla,
}

impl SigmoidMode {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            SigmoidMode::Exact => sigmoid(x),
            SigmoidMode::Pla => sigmoid_pla(x),
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Four-segment piecewise-linear sigmoid with power-of-two slopes:
///
/// | `|x|`          | `y(|x|)`                |
/// |----------------|-------------------------|
/// | `[0, 1)`       | `0.25·|x| + 0.5`        |
/// | `[1, 2.375)`   | `0.125·|x| + 0.625`     |
/// | `[2.375, 4.875)` | `0.03125·|x| + 0.84765625` |
/// | `≥ 4.875`      | `1`                     |
///
/// The segments meet end to end, so the curve is continuous. Negative inputs
/// use `1 − y(|x|)`. Maximum deviation from the exact sigmoid is about 0.019;
/// the output saturates to exactly 0/1 well before ±8.
#[inline]
pub fn sigmoid_pla<T: Real>(x: T) -> T {
    let a = x.abs();
    let y = if a >= T::of(4.875) {
        T::one()
    } else if a >= T::of(2.375) {
        T::of(0.03125) * a + T::of(0.84765625)
    } else if a >= T::one() {
        T::of(0.125) * a + T::of(0.625)
    } else {
        T::of(0.25) * a + T::of(0.5)
    };
    if x < T::zero() {
        T::one() - y
    } else {
        y
    }
}
