//! Dense real polynomials in ascending coefficient order.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Degree ignoring exactly-zero leading coefficients; the zero
    /// polynomial reports `None`.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial::new(self.coeffs.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    /// All real roots strictly inside `(lo, hi)`, ascending.
    ///
    /// The interval is split at the roots of the derivative (found the same
    /// way, recursively) so each piece is monotone; a sign change on a
    /// monotone piece brackets exactly one root, which bisection then pins to
    /// machine precision. Double roots that touch zero without crossing are
    /// reported when the polynomial vanishes exactly at a critical point.
    pub fn real_roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        assert!(lo < hi, "empty interval");
        let Some(deg) = self.degree() else {
            return Vec::new();
        };
        if deg == 0 {
            return Vec::new();
        }
        if deg == 1 {
            let r = -self.coeffs[0] / self.coeffs[1];
            return if r > lo && r < hi { vec![r] } else { Vec::new() };
        }
        let mut knots = vec![lo];
        knots.extend(self.derivative().real_roots_in(lo, hi));
        knots.push(hi);

        let mut roots: Vec<f64> = Vec::new();
        for pair in knots.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (fa, fb) = (self.eval(a), self.eval(b));
            if a > lo && fa == 0.0 {
                push_unique(&mut roots, a);
            }
            if fa == 0.0 || fb == 0.0 || fa.signum() == fb.signum() {
                continue;
            }
            push_unique(&mut roots, bisect(|x| self.eval(x), a, b, fa));
        }
        roots.retain(|&r| r > lo && r < hi);
        roots
    }
}

fn push_unique(roots: &mut Vec<f64>, r: f64) {
    if roots.last().is_none_or(|&last| last != r) {
        roots.push(r);
    }
}

/// Bisection on a bracket with `f(a) = fa` of opposite sign to `f(b)`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn horner_and_derivative() {
        let p = Polynomial::new(vec![1.0, -2.0, 0.0, 3.0]);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 24.0);
        assert_eq!(p.derivative().coeffs, vec![-2.0, 0.0, 9.0]);
        assert_eq!(Polynomial::new(vec![0.0, 0.0]).degree(), None);
        assert_eq!(Polynomial::new(vec![1.0, 2.0, 0.0]).degree(), Some(1));
    }

    #[test]
    fn cubic_roots_inside_interval() {
        // (x + 0.5)(x - 0.25)(x - 0.75)
        let p = Polynomial::new(vec![0.09375, -0.3125, -0.5, 1.0]);
        let r = p.real_roots_in(-1.0, 1.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-0.5, 0.25, 0.75]) {
            assert!((got - want).abs() < 1e-14);
        }
        assert_eq!(p.real_roots_in(0.0, 0.5).len(), 1);
    }

    #[test]
    fn endpoints_are_excluded() {
        let p = Polynomial::new(vec![-1.0, 0.0, 1.0]);
        assert!(p.real_roots_in(-1.0, 1.0).is_empty());
        assert_eq!(p.real_roots_in(-2.0, 2.0).len(), 2);
    }

    fn discriminant_root_count(a: f64, b: f64, c: f64, d: f64) -> usize {
        // a x^3 + b x^2 + c x + d
        let disc = 18.0 * a * b * c * d - 4.0 * b.powi(3) * d + b * b * c * c - 4.0 * a * c.powi(3) - 27.0 * a * a * d * d;
        if disc > 0.0 {
            3
        } else {
            1
        }
    }

    proptest! {
        #[test]
        fn cubic_root_count_matches_discriminant(
            a in prop::sample::select(vec![-3.0, -1.0, -0.5, 0.5, 1.0, 2.0]),
            roots in prop::array::uniform3(-0.9f64..0.9),
            shift in -2.0f64..2.0,
        ) {
            // Build from roots so the discriminant sign is well away from zero
            // unless two roots nearly coincide, then perturb the constant.
            let [r1, r2, r3] = roots;
            prop_assume!((r1 - r2).abs() > 0.05 && (r2 - r3).abs() > 0.05 && (r1 - r3).abs() > 0.05);
            let b = -a * (r1 + r2 + r3);
            let c = a * (r1 * r2 + r2 * r3 + r1 * r3);
            let d = -a * r1 * r2 * r3 + shift * 0.01;
            let disc = 18.0 * a * b * c * d - 4.0 * b.powi(3) * d + b * b * c * c - 4.0 * a * c.powi(3) - 27.0 * a * a * d * d;
            prop_assume!(disc.abs() > 1e-9);
            let p = Polynomial::new(vec![d, c, b, a]);
            // Cauchy bound keeps every real root inside the search window.
            let bound = 1.0 + [b, c, d].iter().map(|v| (v / a).abs()).fold(0.0, f64::max);
            let found = p.real_roots_in(-bound - 1.0, bound + 1.0);
            prop_assert_eq!(found.len(), discriminant_root_count(a, b, c, d));
            for r in found {
                prop_assert!(p.eval(r).abs() < 1e-9);
            }
        }
    }
}
