//! Oracle suites shared by the unit-level integration tests and the
//! acceptance target. Each suite returns a one-line summary on success and
//! a description of the first violation on failure.

#![allow(dead_code)]

pub mod anderson;
pub mod descent;
pub mod gradcheck;
pub mod operators;

use mutn_core::rng::Stream;
use mutn_core::tensor::Tensor;

pub type Outcome = Result<String, String>;

pub fn random_tensor(s: &mut Stream, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| s.normal()).collect()).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.sub(b).unwrap().norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}
