//! Scalar abstraction for the simulation layer.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used for particle states: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Correctly rounded sum of `values` (Shewchuk's exact partials).
///
/// The result depends only on the multiset of inputs, never on their order,
/// so particle averages are exactly invariant under regrouping. Overflow of
/// intermediate partials is not handled.
pub fn exact_sum<F: Real>(values: impl IntoIterator<Item = F>) -> F {
    let mut partials: Vec<F> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != F::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let Some(mut n) = partials.len().checked_sub(1) else {
        return F::zero();
    };
    let mut hi = partials[n];
    let mut lo = F::zero();
    while n > 0 {
        let x = hi;
        let y = partials[n - 1];
        n -= 1;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != F::zero() {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push past a tie.
    if n > 0 {
        let next = partials[n - 1];
        if (lo < F::zero() && next < F::zero()) || (lo > F::zero() && next > F::zero()) {
            let y = lo + lo;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancels_exactly() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1f64; 10]), 1.0);
        assert_eq!(exact_sum(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn single_precision() {
        assert_eq!(exact_sum([1e8f32, 1.0, -1e8]), 1.0);
    }

    proptest! {
        #[test]
        fn order_independent(mut v in prop::collection::vec(-1e6f64..1e6, 0..40), seed in any::<u64>()) {
            let a = exact_sum(v.iter().copied());
            // deterministic shuffle
            let mut s = seed;
            for i in (1..v.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                v.swap(i, j);
            }
            let b = exact_sum(v.iter().copied());
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
