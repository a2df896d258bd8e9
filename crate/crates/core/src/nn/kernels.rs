use crate::element::Element;

const LANES: usize = 8;

#[inline]
fn fold_lanes<T: Element>(acc: [T; LANES]) -> T {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    for (l, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[l] = acc[l] + *x * *y;
    }
    fold_lanes(acc)
}

#[inline]
pub(crate) fn sum<T: Element>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut chunks = a.chunks_exact(LANES);
    for x in &mut chunks {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l];
        }
    }
    for (l, x) in chunks.remainder().iter().enumerate() {
        acc[l] = acc[l] + *x;
    }
    fold_lanes(acc)
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Element>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}
