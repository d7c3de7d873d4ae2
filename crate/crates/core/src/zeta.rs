//! Laurent data of ζ at s = 1: Stieltjes constants by Euler-Maclaurin,
//! plus a direct ζ(s) evaluator used to cross-check the expansion.

use rug::ops::{CompleteRound, Pow};
use rug::{Float, Integer, Rational};

use crate::error::{DmError, Result};
use crate::hp::{bits_for_digits, KahanHp};

/// B_0 .. B_n as exact rationals (B_1 = -1/2 convention).
pub fn bernoulli(n: usize) -> Vec<Rational> {
    let mut b: Vec<Rational> = Vec::with_capacity(n + 1);
    for m in 0..=n {
        if m == 0 {
            b.push(Rational::from(1));
            continue;
        }
        // Σ_{j=0}^{m} C(m+1, j) B_j = 0
        let mut acc = Rational::new();
        for (j, bj) in b.iter().enumerate() {
            let c = Integer::from(m as u32 + 1).binomial(j as u32);
            acc += bj * Rational::from(c);
        }
        acc /= -Rational::from(m as u32 + 1);
        b.push(acc);
    }
    b
}

/// Truncated Laurent expansion of ζ at s = 1:
/// ζ(s) = 1/(s-1) + Σ_{j<order} (-1)^j γ_j (s-1)^j / j!.
#[derive(Debug, Clone)]
pub struct ZetaLaurent {
    pub order: usize,
    pub gammas: Vec<Float>,
    pub precision_digits: u32,
}

/// Derivatives of ln^j(x)/x stay in the span of ln^a(x) · x^{-m};
/// one differentiation maps coefficients exactly over the integers.
struct LogOverX {
    coeffs: Vec<Integer>, // coefficient of ln^a x
    inv_pow: u32,         // power m in x^{-m}
}

impl LogOverX {
    fn new(j: usize) -> Self {
        let mut coeffs = vec![Integer::new(); j + 1];
        coeffs[j] = Integer::from(1);
        Self {
            coeffs,
            inv_pow: 1,
        }
    }

    fn differentiate(&mut self) {
        let mut next = vec![Integer::new(); self.coeffs.len()];
        for (a, c) in self.coeffs.iter().enumerate() {
            if a > 0 {
                next[a - 1] += c * Integer::from(a as u32);
            }
            next[a] -= c * Integer::from(self.inv_pow);
        }
        self.coeffs = next;
        self.inv_pow += 1;
    }

    fn eval(&self, ln_x: &Float, x: &Float, bits: u32) -> Float {
        let mut poly = Float::new(bits);
        for c in self.coeffs.iter().rev() {
            poly *= ln_x;
            poly += Float::with_val(bits, c);
        }
        poly / x.clone().pow(self.inv_pow)
    }
}

/// Stieltjes constants γ_0 .. γ_{order-1}, accurate to `precision` digits.
pub fn zeta_laurent(order: usize, precision: u32) -> Result<ZetaLaurent> {
    if order < 1 || order > 8 {
        return Err(DmError::usage("order", "supported Laurent orders are 1..=8"));
    }
    if precision < 38 {
        return Err(DmError::usage("precision", "precision must be >= 38 digits"));
    }
    let bits = bits_for_digits(precision + 15);
    let n_cut: u32 = 4096;
    let em_terms = 16usize;
    let bern = bernoulli(2 * em_terms + 2);

    // ln m for m ≤ N once
    let logs: Vec<Float> = (0..=n_cut)
        .map(|m| Float::with_val(bits, m.max(1)).ln())
        .collect();

    let mut gammas = Vec::with_capacity(order);
    for j in 0..order {
        // Σ_{m≤N} ln^j m / m
        let mut sum = KahanHp::new(bits);
        for m in 1..=n_cut {
            let t = logs[m as usize].clone().pow(j as u32) / m;
            sum.add(&t);
        }
        let ln_n = &logs[n_cut as usize];
        let mut g = sum.value();
        g -= ln_n.clone().pow(j as u32 + 1) / (j as u32 + 1);
        g -= ln_n.clone().pow(j as u32) / (2 * n_cut);
        // Euler-Maclaurin tail: -Σ_i B_{2i}/(2i)! f^{(2i-1)}(N)
        let x = Float::with_val(bits, n_cut);
        let mut d = LogOverX::new(j);
        let mut fact = Integer::from(1);
        for i in 1..=em_terms {
            d.differentiate(); // order 2i-1 after odd number of calls
            fact *= Integer::from((2 * i as u32 - 1) * (2 * i as u32));
            let b = Float::with_val(bits, &bern[2 * i]);
            let f_deriv = d.eval(ln_n, &x, bits);
            g -= b * f_deriv / Float::with_val(bits, &fact);
            d.differentiate();
        }
        let g = Float::with_val(bits_for_digits(precision), g);
        gammas.push(g);
    }
    Ok(ZetaLaurent {
        order,
        gammas,
        precision_digits: precision,
    })
}

impl ZetaLaurent {
    /// Partial Laurent sum 1/(s-1) + Σ_{j<order} (-1)^j γ_j (s-1)^j / j!.
    pub fn eval(&self, s: &Float) -> Float {
        let bits = s.prec();
        let u = (s - 1u32).complete(bits);
        let mut acc = u.clone().recip();
        let mut u_pow = Float::with_val(bits, 1);
        let mut fact = Float::with_val(bits, 1);
        for (j, g) in self.gammas.iter().enumerate() {
            if j > 0 {
                u_pow *= &u;
                fact *= j as u32;
            }
            let term = (g * &u_pow).complete(bits) / &fact;
            if j % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
        acc
    }
}

/// ζ(s) for real s > 0, s ≠ 1, by Euler-Maclaurin at the precision of `s`.
pub fn zeta_direct(s: &Float) -> Float {
    let bits = s.prec();
    let n_cut: u32 = 256;
    let em_terms = 48usize;
    let bern = bernoulli(2 * em_terms);
    let mut acc = KahanHp::new(bits);
    for n in 1..n_cut {
        let t = Float::with_val(bits, n).pow((-s).complete(bits));
        acc.add(&t);
    }
    let nf = Float::with_val(bits, n_cut);
    let mut z = acc.value();
    // N^{1-s}/(s-1) + N^{-s}/2
    z += nf.clone().pow((1u32 - s).complete(bits)) / (s - 1u32).complete(bits);
    let n_pow_ms = nf.clone().pow((-s).complete(bits));
    z += (&n_pow_ms / 2u32).complete(bits);
    // Σ_i B_{2i}/(2i)! · s(s+1)⋯(s+2i-2) · N^{-s-2i+1}
    let mut rising = Float::with_val(bits, 1); // Π_{j<2i-1} (s+j)
    let mut fact = Integer::from(1);
    let mut n_shift = n_pow_ms * &nf; // N^{-s+1-2i} accumulated below
    for i in 1..=em_terms {
        // extend rising factorial to length 2i-1 and factorial to (2i)!
        if i == 1 {
            rising = s.clone();
            fact = Integer::from(2);
        } else {
            rising *= (s + (2 * i as u32 - 3)).complete(bits);
            rising *= (s + (2 * i as u32 - 2)).complete(bits);
            fact *= Integer::from((2 * i as u32 - 1) * (2 * i as u32));
        }
        n_shift /= (&nf * &nf).complete(bits);
        let b = Float::with_val(bits, &bern[2 * i]);
        let mut term = (&rising * &n_shift).complete(bits);
        term *= b;
        term /= Float::with_val(bits, &fact);
        z += term;
    }
    z
}
