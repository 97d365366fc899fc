//! One-dimensional quadrature used by the transforms and the likelihoods.

use std::sync::OnceLock;

/// Composite Simpson rule on `[a, b]` with panel width at most `step`.
///
/// The number of sub-intervals is rounded up to the next even count.
pub fn simpson<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, step: f64) -> f64 {
    simpson_impl(f, a, b, step, 0.0)
}

fn simpson_impl<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, step: f64, inset: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let mut m = ((b - a) / step).ceil() as usize;
    m = m.max(2);
    if m % 2 == 1 {
        m += 1;
    }
    let h = (b - a) / m as f64;
    let d = inset * h;
    let mut acc = f(a + d) + f(b - d);
    for i in 1..m {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Simpson on `[a, b]` split at every interior breakpoint, so integrands that
/// jump or kink at the breakpoints are integrated piece by piece. Piece ends
/// are sampled just inside the piece, i.e. as one-sided limits.
pub fn simpson_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    step: f64,
) -> f64 {
    let mut total = 0.0;
    let mut left = a;
    for &bp in breakpoints {
        if bp > left && bp < b {
            total += simpson_impl(&mut f, left, bp, step, 1e-10);
            left = bp;
        }
    }
    total + simpson_impl(&mut f, left, b, step, 1e-10)
}

const GL_ORDER: usize = 16;

/// Gauss–Legendre nodes and weights on [-1, 1], computed once by Newton
/// iteration on the Legendre polynomial.
fn gauss_legendre() -> &'static [(f64, f64); GL_ORDER] {
    static RULE: OnceLock<[(f64, f64); GL_ORDER]> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut rule = [(0.0, 0.0); GL_ORDER];
        for (i, slot) in rule.iter_mut().enumerate() {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        rule
    })
}

/// 16-point Gauss–Legendre on `[a, b]`; exact to rounding for the smooth
/// exponential integrands that appear in the hazard models.
pub fn gauss_legendre_16<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre()
        .iter()
        .map(|&(x, wt)| wt * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Trapezoid rule on a tabulated function.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 0.3);
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn pieces_handle_jumps() {
        let f = |x: f64| if x < 1.0 { 1.0 } else { 3.0 };
        let v = simpson_pieces(f, 0.0, 2.0, &[1.0], 0.1);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_matches_exponential_integral() {
        let v = gauss_legendre_16(|x| (0.7 * x).exp(), 0.0, 5.0);
        let exact = ((0.7f64 * 5.0).exp() - 1.0) / 0.7;
        assert!((v - exact).abs() < 1e-12 * exact);
        let weights: f64 = gauss_legendre().iter().map(|r| r.1).sum();
        assert!((weights - 2.0).abs() < 1e-13);
    }
}
