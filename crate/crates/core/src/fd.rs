//! Central finite differences over flat coordinate vectors.
//!
//! Second-order stencils are combined with one Richardson step (`h`, `h/2`),
//! which removes the `h²` truncation term and leaves `O(h⁴)`.

/// Default step for finite-difference Laplacians and gradients.
pub const DEFAULT_STEP: f64 = 1e-4;

fn second_difference_sum<F>(f: &F, x: &mut [f64], center: f64, h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut acc = 0.0;
    for i in 0..x.len() {
        let xi = x[i];
        x[i] = xi + h;
        let fp = f(x);
        x[i] = xi - h;
        let fm = f(x);
        x[i] = xi;
        acc += fp - 2.0 * center + fm;
    }
    acc / (h * h)
}

/// Laplacian of `f` at `x`, Richardson-extrapolated from steps `h` and `h/2`.
pub fn laplacian<F>(f: F, x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let center = f(&work);
    let coarse = second_difference_sum(&f, &mut work, center, h);
    let fine = second_difference_sum(&f, &mut work, center, 0.5 * h);
    (4.0 * fine - coarse) / 3.0
}

/// Gradient of `f` at `x` by Richardson-extrapolated central differences.
pub fn gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = work[i];
        let mut central = |step: f64| {
            work[i] = xi + step;
            let fp = f(&work);
            work[i] = xi - step;
            let fm = f(&work);
            work[i] = xi;
            (fp - fm) / (2.0 * step)
        };
        let coarse = central(h);
        let fine = central(0.5 * h);
        out.push((4.0 * fine - coarse) / 3.0);
    }
    out
}

/// Second-order central stencil for the `order`-th derivative (1 ≤ order ≤ 4)
/// of a univariate function.
///
/// Returns `(offsets, weights)`: the derivative is
/// `Σ weights[i] · f(t + offsets[i]·h) / h^order`.
pub fn central_stencil(order: usize) -> (&'static [f64], &'static [f64]) {
    match order {
        1 => (&[-1.0, 1.0], &[-0.5, 0.5]),
        2 => (&[-1.0, 0.0, 1.0], &[1.0, -2.0, 1.0]),
        3 => (&[-2.0, -1.0, 1.0, 2.0], &[-0.5, 1.0, -1.0, 0.5]),
        4 => (&[-2.0, -1.0, 0.0, 1.0, 2.0], &[1.0, -4.0, 6.0, -4.0, 1.0]),
        _ => panic!("central stencil of order {order} not available"),
    }
}

/// `order`-th derivative of a univariate function with the second-order
/// central stencil at step `h`.
pub fn central_derivative<F>(f: F, t: f64, order: usize, h: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    let (offsets, weights) = central_stencil(order);
    let sum: f64 = offsets
        .iter()
        .zip(weights)
        .map(|(o, w)| w * f(t + o * h))
        .sum();
    sum / h.powi(order as i32)
}
