//! High-precision scaffolding shared by the analytic modules: precision
//! handling, compensated accumulation, and Gauss-Legendre quadrature with
//! nodes computed at working precision.

use rug::float::Round;
use rug::ops::CompleteRound;
use rug::Float;

/// Bits of mantissa for a requested number of decimal digits, with guard bits.
pub fn bits_for_digits(digits: u32) -> u32 {
    // log2(10) ~ 3.3219...
    (digits as f64 * 3.321928094887362).ceil() as u32 + 32
}

pub fn hpf(bits: u32, v: f64) -> Float {
    Float::with_val(bits, v)
}

pub fn hp_from_i128(bits: u32, v: i128) -> Float {
    Float::with_val(bits, v)
}

pub fn hp_pi(bits: u32) -> Float {
    Float::with_val(bits, rug::float::Constant::Pi)
}

/// Kahan-compensated f64 accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanF64 {
    sum: f64,
    c: f64,
}

impl KahanF64 {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Kahan accumulator at working precision. Each `Float` addition already
/// rounds at `bits`, so the compensation term recovers what the rounding
/// dropped; over ~10^6 terms this keeps the running sum honest.
#[derive(Debug, Clone)]
pub struct KahanHp {
    sum: Float,
    c: Float,
}

impl KahanHp {
    pub fn new(bits: u32) -> Self {
        Self {
            sum: Float::new(bits),
            c: Float::new(bits),
        }
    }

    pub fn add(&mut self, value: &Float) {
        let y = (value - &self.c).complete(self.sum.prec());
        let t = (&self.sum + &y).complete(self.sum.prec());
        self.c = (&t - &self.sum).complete(self.sum.prec()) - y;
        self.sum = t;
    }

    pub fn value(&self) -> Float {
        self.sum.clone()
    }
}

/// Legendre polynomial value and derivative at `x` by the three-term
/// recurrence, at the precision of `x`.
fn legendre_pd(n: usize, x: &Float) -> (Float, Float) {
    let bits = x.prec();
    let mut p0 = Float::with_val(bits, 1);
    let mut p1 = x.clone();
    for j in 2..=n {
        let a = (2 * j - 1) as u32;
        let b = (j - 1) as u32;
        let p2 = (x * &p1).complete(bits) * a - (&p0 * b).complete(bits);
        let p2 = p2 / (j as u32);
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let num = ((x * &p1).complete(bits) - &p0) * (n as u32);
    let den = (x * x).complete(bits) - 1u32;
    let d = num / den;
    (p1, d)
}

/// Gauss-Legendre nodes and weights on [-1, 1] at working precision.
/// Newton refinement from the Chebyshev initial guesses.
pub fn gauss_legendre(n: usize, bits: u32) -> Vec<(Float, Float)> {
    assert!(n >= 2);
    let pi = hp_pi(bits);
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let guess = ((&pi * (i as f64 - 0.25)).complete(bits) / (n as f64 + 0.5)).cos();
        let mut x = -guess; // ascending order
        for _ in 0..(bits / 8 + 8) {
            let (p, d) = legendre_pd(n, &x);
            let step = p / d;
            let done = step
                .clone()
                .abs()
                .to_f64_round(Round::Up)
                .abs()
                < 2f64.powi(-(bits as i32) + 4);
            x -= step;
            if done {
                break;
            }
        }
        let (_, d) = legendre_pd(n, &x);
        let one_minus_x2 = 1u32 - (&x * &x).complete(bits);
        let w = Float::with_val(bits, 2) / (one_minus_x2 * (&d * &d).complete(bits));
        out.push((x, w));
    }
    out
}

/// ∫_a^b f(x) dx by a single n-node Gauss-Legendre rule at working precision.
/// Intended for smooth integrands on short intervals; serves as the
/// quadrature reference the closed-form integrators are checked against.
pub fn gauss_legendre_integral<F>(f: F, a: &Float, b: &Float, n: usize, bits: u32) -> Float
where
    F: Fn(&Float) -> Float,
{
    let rule = gauss_legendre(n, bits);
    let half = ((b - a).complete(bits)) / 2u32;
    let mid = ((a + b).complete(bits)) / 2u32;
    let mut acc = KahanHp::new(bits);
    for (x, w) in &rule {
        let t = (&half * x).complete(bits) + &mid;
        let v = f(&t) * w;
        acc.add(&v);
    }
    acc.value() * half
}
