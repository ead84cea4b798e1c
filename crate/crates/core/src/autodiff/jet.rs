//! Scalar jets: value, gradient and Laplacian carried through closed-form
//! coefficient and data functions.
//!
//! Problem data (exact solutions, encoder masks, lifts, coefficients) are
//! written once as functions of `&[Jet]` and evaluated either value-only
//! (empty gradients) or with derivatives for residual checks and the
//! product rule of the boundary encoding.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub v: f64,
    /// Gradient; empty when derivatives are not tracked.
    pub g: Vec<f64>,
    /// Laplacian (sum of pure second derivatives).
    pub l: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, g: Vec::new(), l: 0.0 }
    }

    /// Coordinate `k` of a point in `d` dimensions, seeded with `e_k`.
    pub fn variable(v: f64, k: usize, d: usize) -> Self {
        let mut g = vec![0.0; d];
        g[k] = 1.0;
        Jet { v, g, l: 0.0 }
    }

    /// Seeds every coordinate of `x` as an independent variable.
    pub fn point(x: &[f64]) -> Vec<Jet> {
        let d = x.len();
        x.iter().enumerate().map(|(k, &v)| Jet::variable(v, k, d)).collect()
    }

    /// Coordinates of `x` as constants (value-only evaluation).
    pub fn point_const(x: &[f64]) -> Vec<Jet> {
        x.iter().map(|&v| Jet::constant(v)).collect()
    }

    pub fn grad(&self, k: usize) -> f64 {
        self.g.get(k).copied().unwrap_or(0.0)
    }

    fn zip_g(a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
        let n = a.len().max(b.len());
        (0..n)
            .map(|k| fa * a.get(k).copied().unwrap_or(0.0) + fb * b.get(k).copied().unwrap_or(0.0))
            .collect()
    }

    fn dot_g(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Applies a scalar map with derivatives `f1 = f'(v)`, `f2 = f''(v)`.
    fn chain(&self, v: f64, f1: f64, f2: f64) -> Jet {
        Jet {
            v,
            g: self.g.iter().map(|x| f1 * x).collect(),
            l: f1 * self.l + f2 * Self::dot_g(&self.g, &self.g),
        }
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(&self) -> Jet {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        let x = self.v;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    pub fn sqrt(&self) -> Jet {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn atan(&self) -> Jet {
        let x = self.v;
        let q = 1.0 + x * x;
        self.chain(x.atan(), 1.0 / q, -2.0 * x / (q * q))
    }

    pub fn asin(&self) -> Jet {
        let x = self.v;
        let q = 1.0 - x * x;
        let r = q.sqrt();
        self.chain(x.asin(), 1.0 / r, x / (q * r))
    }

    pub fn tanh(&self) -> Jet {
        let t = self.v.tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }

    pub fn powi(&self, n: i32) -> Jet {
        let x = self.v;
        let nf = n as f64;
        let f2 = if !(0..2).contains(&n) {
            nf * (nf - 1.0) * x.powi(n - 2)
        } else {
            0.0
        };
        let f1 = if n != 0 { nf * x.powi(n - 1) } else { 0.0 };
        self.chain(x.powi(n), f1, f2)
    }

    pub fn square(&self) -> Jet {
        self.powi(2)
    }

    pub fn abs(&self) -> Jet {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.v.abs(), s, 0.0)
    }

    /// Pointwise minimum; ties take the first argument.
    pub fn min(&self, other: &Jet) -> Jet {
        if self.v <= other.v {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            v: self.v * c,
            g: self.g.iter().map(|x| x * c).collect(),
            l: self.l * c,
        }
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Jet::constant(v)
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            g: Jet::zip_g(&self.g, &o.g, 1.0, 1.0),
            l: self.l + o.l,
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet {
            v: self.v - o.v,
            g: Jet::zip_g(&self.g, &o.g, 1.0, -1.0),
            l: self.l - o.l,
        }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            g: Jet::zip_g(&self.g, &o.g, o.v, self.v),
            l: self.l * o.v + self.v * o.l + 2.0 * Jet::dot_g(&self.g, &o.g),
        }
    }
}

impl Div for &Jet {
    type Output = Jet;
    fn div(self, o: &Jet) -> Jet {
        let inv = o.chain(1.0 / o.v, -1.0 / (o.v * o.v), 2.0 / (o.v * o.v * o.v));
        self * &inv
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr for Jet {
            type Output = Jet;
            fn $m(self, o: Jet) -> Jet { (&self).$m(&o) }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, o: &Jet) -> Jet { (&self).$m(o) }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, o: Jet) -> Jet { self.$m(&o) }
        }
        impl $tr<f64> for Jet {
            type Output = Jet;
            fn $m(self, o: f64) -> Jet { (&self).$m(&Jet::constant(o)) }
        }
        impl $tr<f64> for &Jet {
            type Output = Jet;
            fn $m(self, o: f64) -> Jet { self.$m(&Jet::constant(o)) }
        }
        impl $tr<Jet> for f64 {
            type Output = Jet;
            fn $m(self, o: Jet) -> Jet { (&Jet::constant(self)).$m(&o) }
        }
        impl $tr<&Jet> for f64 {
            type Output = Jet;
            fn $m(self, o: &Jet) -> Jet { (&Jet::constant(self)).$m(o) }
        }
    )*};
}

owned_ops!(Add add, Sub sub, Mul mul, Div div);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[Jet]) -> Jet, x: &[f64]) {
        let j = f(&Jet::point(x));
        let h = 1e-4;
        let mut lap = 0.0;
        let f0 = f(&Jet::point_const(x)).v;
        assert!((j.v - f0).abs() < 1e-14);
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let fp = f(&Jet::point_const(&xp)).v;
            let fm = f(&Jet::point_const(&xm)).v;
            let d1 = (fp - fm) / (2.0 * h);
            assert!((d1 - j.grad(k)).abs() < 1e-7, "grad {k}: {d1} vs {}", j.grad(k));
            lap += (fp - 2.0 * f0 + fm) / (h * h);
        }
        assert!((lap - j.l).abs() < 1e-4, "lap {lap} vs {}", j.l);
    }

    #[test]
    fn composite_functions_match_finite_differences() {
        let x = [0.3, -0.45, 0.7];
        fd_check(|p| (&p[0] * &p[1]).sin() + p[2].exp() * p[0].cos(), &x);
        fd_check(|p| (p[0].square() + p[1].square()).sqrt().atan(), &x);
        fd_check(|p| (&p[1] / (&p[0] + 2.0)).asin() * p[2].tanh(), &x);
        fd_check(|p| (p[0].powi(3) - 1.5 * &p[2]).ln_1p_safe(), &x);
    }

    trait Ln1p {
        fn ln_1p_safe(&self) -> Jet;
    }

    impl Ln1p for Jet {
        fn ln_1p_safe(&self) -> Jet {
            (self + 3.0).ln()
        }
    }
}
