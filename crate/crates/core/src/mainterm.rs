//! Main terms.  D_k(x) = x·P_{k-1}(log x) + Δ_k(x) where P_{k-1} is the
//! residue polynomial of ζ^k(s)x^s/s at s = 1; the r-variable sum has main
//! term x^r Σ_ℓ d_ℓ (log x)^ℓ with d_ℓ obtained by summing the kernel over
//! its support against products of shifted residue polynomials.

use std::collections::BTreeMap;
use std::path::Path;

use rug::ops::{CompleteRound, Pow};
use rug::{Float, Integer};
use serde::{Deserialize, Serialize};

use crate::error::{DmError, Result};
use crate::hp::{hpf, KahanHp};
use crate::multivar::Support;
use crate::sieve::TauTable;
use crate::zeta::ZetaLaurent;

/// P_{k-1}: coefficients of the degree-(k-1) polynomial in log x.
#[derive(Debug, Clone)]
pub struct MainTermPoly {
    pub k: u32,
    /// coeffs[j] multiplies (log x)^j
    pub coeffs: Vec<Float>,
}

/// Residue polynomial via the series Z(u) = uζ(1+u):
/// P_{k-1}(L) = [u^{k-1}] Z(u)^k e^{uL} / (1+u).
pub fn residue_main_poly(k: u32, zl: &ZetaLaurent, bits: u32) -> Result<MainTermPoly> {
    if k < 1 {
        return Err(DmError::usage("k", "k must be >= 1"));
    }
    let need = k as usize; // uses γ_0..γ_{k-2}
    if zl.order + 1 < need {
        return Err(DmError::LaurentOrder {
            have: zl.order,
            need: need - 1,
        });
    }
    let n = k as usize; // truncation length: powers u^0..u^{k-1}
    let mut z = vec![Float::with_val(bits, 0); n];
    z[0] = Float::with_val(bits, 1);
    let mut fact = Integer::from(1);
    for j in 0..n.saturating_sub(1) {
        // coefficient of u^{j+1} is (-1)^j γ_j / j!
        if j > 0 {
            fact *= Integer::from(j as u32);
        }
        let mut c = Float::with_val(bits, &zl.gammas[j]) / Float::with_val(bits, &fact);
        if j % 2 == 1 {
            c = -c;
        }
        z[j + 1] = c;
    }

    // zk = z^k by repeated truncated multiplication
    let mut zk = vec![Float::with_val(bits, 0); n];
    zk[0] = Float::with_val(bits, 1);
    for _ in 0..k {
        let mut out = vec![Float::with_val(bits, 0); n];
        for i in 0..n {
            if zk[i].is_zero() {
                continue;
            }
            for j in 0..n - i {
                let add = (&zk[i] * &z[j]).complete(bits);
                out[i + j] += add;
            }
        }
        zk = out;
    }

    // a_m = (1/m!) Σ_{i + t = k-1-m} zk_i (-1)^t
    let mut coeffs = Vec::with_capacity(k as usize);
    let mut mfact = Integer::from(1);
    for m in 0..k as usize {
        if m > 0 {
            mfact *= Integer::from(m as u32);
        }
        let mut s = Float::with_val(bits, 0);
        let rem = k as usize - 1 - m;
        for i in 0..=rem {
            let t = rem - i;
            if t % 2 == 0 {
                s += &zk[i];
            } else {
                s -= &zk[i];
            }
        }
        coeffs.push(s / Float::with_val(bits, &mfact));
    }
    Ok(MainTermPoly { k, coeffs })
}

/// x·P_{k-1}(log x).
pub fn eval_main_k(p: &MainTermPoly, x: f64, bits: u32) -> Float {
    assert!(x >= 1.0);
    eval_main_k_at(p, &hpf(bits, x))
}

/// Same, taking the argument at working precision (divisions like x/m must
/// be done in extended precision before the log, not in f64).
pub fn eval_main_k_at(p: &MainTermPoly, x: &Float) -> Float {
    let bits = x.prec();
    let l = x.clone().ln();
    let mut acc = Float::with_val(bits, 0);
    for c in p.coeffs.iter().rev() {
        acc = acc * &l + c;
    }
    acc * x
}

/// Δ_k(x) = D_k(⌊x⌋) − x·P_{k-1}(log x), the subtraction done at full
/// working precision.
pub fn delta_k_eval(tau: &TauTable, p: &MainTermPoly, x: f64, bits: u32) -> Result<Float> {
    if tau.k != p.k {
        return Err(DmError::usage("k", "tau table and polynomial disagree on k"));
    }
    let d = crate::sieve::summatory(tau, x)?;
    Ok(Float::with_val(bits, d) - eval_main_k(p, x, bits))
}

/// Polynomial in several variables with high-precision coefficients,
/// keyed by exponent tuples (deterministic order).
#[derive(Debug, Clone)]
pub struct MultiPoly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u16>, Float>,
}

impl MultiPoly {
    pub fn constant(nvars: usize, v: Float) -> Self {
        let mut terms = BTreeMap::new();
        if !v.is_zero() {
            terms.insert(vec![0u16; nvars], v);
        }
        MultiPoly { nvars, terms }
    }

    pub fn one(nvars: usize, bits: u32) -> Self {
        Self::constant(nvars, Float::with_val(bits, 1))
    }

    pub fn add_term(&mut self, exps: Vec<u16>, c: Float, bits: u32) {
        let slot = self
            .terms
            .entry(exps)
            .or_insert_with(|| Float::with_val(bits, 0));
        *slot += c;
    }

    pub fn mul(&self, other: &MultiPoly, bits: u32) -> MultiPoly {
        assert_eq!(self.nvars, other.nvars);
        let mut out = MultiPoly {
            nvars: self.nvars,
            terms: BTreeMap::new(),
        };
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exps: Vec<u16> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(exps, (ca * cb).complete(bits), bits);
            }
        }
        out
    }

    /// Evaluate given precomputed powers pw[v][e] = λ_v^e.
    pub fn eval_with_powers(&self, pw: &[Vec<Float>], bits: u32) -> Float {
        let mut acc = Float::with_val(bits, 0);
        for (exps, c) in &self.terms {
            let mut term = c.clone();
            for (v, &e) in exps.iter().enumerate() {
                if e > 0 {
                    term *= &pw[v][e as usize];
                }
            }
            acc += term;
        }
        acc
    }

    pub fn eval(&self, lambda: &[Float], bits: u32) -> Float {
        let maxdeg = self.max_degree();
        let pw: Vec<Vec<Float>> = lambda
            .iter()
            .map(|l| {
                let mut v = vec![Float::with_val(bits, 1)];
                for e in 1..=maxdeg {
                    v.push((&v[e - 1] * l).complete(bits));
                }
                v
            })
            .collect();
        self.eval_with_powers(&pw, bits)
    }

    pub fn max_degree(&self) -> usize {
        self.terms
            .keys()
            .flat_map(|e| e.iter())
            .map(|&e| e as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn terms_f64(&self) -> Vec<(Vec<u16>, f64)> {
        self.terms
            .iter()
            .map(|(e, c)| (e.clone(), c.to_f64()))
            .collect()
    }
}

/// Π_{j=1}^{t} P_{k-1}(L − λ_j) = Σ_ℓ C_ℓ(λ_1,…,λ_t) L^ℓ.
#[derive(Debug, Clone)]
pub struct LogProductExpansion {
    pub k: u32,
    pub t: usize,
    /// c[ℓ] is the coefficient polynomial C_ℓ, degree ≤ t(k-1), ℓ ≤ t(k-1)
    pub c: Vec<MultiPoly>,
}

pub fn expand_main_product(
    k: u32,
    t: usize,
    zl: &ZetaLaurent,
    bits: u32,
) -> Result<LogProductExpansion> {
    let p = residue_main_poly(k, zl, bits)?;
    let d = k as usize - 1;
    let mut acc: Vec<MultiPoly> = vec![MultiPoly::one(t, bits)];
    for j in 0..t {
        // P(L - λ_j) as a vector over powers of L, entries univariate in λ_j
        let mut factor: Vec<MultiPoly> = Vec::with_capacity(d + 1);
        for b in 0..=d {
            let mut poly = MultiPoly {
                nvars: t,
                terms: BTreeMap::new(),
            };
            for e in 0..=(d - b) {
                let a = b + e;
                let bin = Integer::from(a as u32).binomial(b as u32);
                let mut coef =
                    Float::with_val(bits, &bin) * &p.coeffs[a];
                if e % 2 == 1 {
                    coef = -coef;
                }
                if !coef.is_zero() {
                    let mut exps = vec![0u16; t];
                    exps[j] = e as u16;
                    poly.add_term(exps, coef, bits);
                }
            }
            factor.push(poly);
        }
        let mut next: Vec<MultiPoly> = vec![
            MultiPoly {
                nvars: t,
                terms: BTreeMap::new()
            };
            acc.len() + d
        ];
        for (b1, a) in acc.iter().enumerate() {
            if a.terms.is_empty() {
                continue;
            }
            for (b2, f) in factor.iter().enumerate() {
                let prod = a.mul(f, bits);
                for (exps, c) in prod.terms {
                    next[b1 + b2].add_term(exps, c, bits);
                }
            }
        }
        acc = next;
    }
    Ok(LogProductExpansion { k, t, c: acc })
}

/// The constants d_ℓ of x^r Σ d_ℓ (log x)^ℓ, with a truncation-tail
/// estimate extrapolated from the outermost dyadic bands of the support.
#[derive(Debug, Clone)]
pub struct MultiMainTerm {
    pub r: usize,
    pub k: u32,
    pub x_cut: u64,
    pub d: Vec<Float>,
    pub tail_estimate: f64,
    pub precision_digits: u32,
}

pub fn d_coefficients(
    expansion: &LogProductExpansion,
    support: &Support,
    precision_digits: u32,
    bits: u32,
) -> Result<MultiMainTerm> {
    if expansion.t != support.r || expansion.k != support.k {
        return Err(DmError::usage(
            "expansion",
            "expansion (k, t) must match support (k, r)",
        ));
    }
    let r = support.r;
    let nl = expansion.c.len();
    let maxdeg = expansion
        .c
        .iter()
        .map(|p| p.max_degree())
        .max()
        .unwrap_or(0);

    // log-power cache per coordinate value
    let mut ln_pows: Vec<Option<Vec<Float>>> = vec![None; support.limit as usize + 1];
    let mut sums: Vec<KahanHp> = (0..nl).map(|_| KahanHp::new(bits)).collect();
    // per-octave accumulators of Σ |f|·|C_ℓ|/Πm, octave 0 outermost
    let n_oct = if support.limit >= 16 {
        (64 - support.limit.leading_zeros() as usize).min(8).saturating_sub(2)
    } else {
        0
    };
    let mut octave = vec![vec![0f64; n_oct]; nl];

    let mut pw: Vec<Vec<Float>> = Vec::with_capacity(r);
    for i in 0..support.len() {
        let m = support.tuple(i);
        let f = support.f(i);
        pw.clear();
        let mut prod: u128 = 1;
        let mut maxc = 0u64;
        for &mj in m {
            prod *= mj as u128;
            maxc = maxc.max(mj);
            let slot = &mut ln_pows[mj as usize];
            if slot.is_none() {
                let l = hpf(bits, mj as f64).ln();
                let mut v = vec![Float::with_val(bits, 1)];
                for e in 1..=maxdeg {
                    v.push((&v[e - 1] * &l).complete(bits));
                }
                *slot = Some(v);
            }
            pw.push(slot.as_ref().unwrap().clone());
        }
        let w = Float::with_val(bits, f) / Float::with_val(bits, prod);
        for (l, cl) in expansion.c.iter().enumerate() {
            let cval = cl.eval_with_powers(&pw, bits);
            let term = (&cval * &w).complete(bits);
            let mag = term.to_f64().abs();
            sums[l].add(&term);
            if n_oct > 0 && maxc > 1 {
                // octave j covers maxc ∈ (limit/2^{j+1}, limit/2^j]
                let j = (support.limit / maxc).ilog2() as usize;
                if j < n_oct {
                    octave[l][j] += mag;
                }
            }
        }
    }

    // fit log-mass against octave index and extrapolate the remaining
    // geometric series past the cutoff; the regression smooths the
    // arithmetic fluctuation of individual bands
    let mut tail = 0f64;
    for l in 0..nl {
        let pts: Vec<(f64, f64)> = octave[l]
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(j, &m)| (j as f64, m.ln()))
            .collect();
        let t = match pts.len() {
            0 => 0.0,
            1 => pts[0].1.exp(),
            _ => {
                let n = pts.len() as f64;
                let sx: f64 = pts.iter().map(|p| p.0).sum();
                let sy: f64 = pts.iter().map(|p| p.1).sum();
                let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
                let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
                let beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
                let alpha = (sy - beta * sx) / n;
                // octave -1 would be (limit, 2·limit]; ratio between
                // successive outward octaves is q = e^{-beta}
                let q = (-beta).exp().clamp(0.02, 0.9);
                (alpha - beta).exp() / (1.0 - q)
            }
        };
        tail = tail.max(t);
    }

    Ok(MultiMainTerm {
        r,
        k: support.k,
        x_cut: support.limit,
        d: sums.into_iter().map(|s| s.value()).collect(),
        tail_estimate: tail,
        precision_digits,
    })
}

/// x^r Σ_ℓ d_ℓ (log x)^ℓ.
pub fn eval_main_rk(mm: &MultiMainTerm, x: f64, bits: u32) -> Float {
    assert!(x >= 1.0);
    let xh = hpf(bits, x);
    let l = xh.clone().ln();
    let mut acc = Float::with_val(bits, 0);
    for c in mm.d.iter().rev() {
        acc = acc * &l + c;
    }
    let xr = xh.pow(mm.r as u32);
    acc * xr
}

#[derive(Serialize, Deserialize)]
struct MainTermDoc {
    r: usize,
    k: u32,
    #[serde(rename = "X")]
    x_cut: u64,
    d: Vec<String>,
    tail_estimate: f64,
    precision_digits: u32,
}

pub fn save_main_term(mm: &MultiMainTerm, path: &Path) -> Result<()> {
    let digits = mm.precision_digits as usize;
    let doc = MainTermDoc {
        r: mm.r,
        k: mm.k,
        x_cut: mm.x_cut,
        d: mm
            .d
            .iter()
            .map(|v| v.to_string_radix(10, Some(digits)))
            .collect(),
        tail_estimate: mm.tail_estimate,
        precision_digits: mm.precision_digits,
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn load_main_term(path: &Path, bits: u32) -> Result<MultiMainTerm> {
    let doc: MainTermDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let d = doc
        .d
        .iter()
        .map(|s| {
            Float::parse(s)
                .map(|v| Float::with_val(bits, v))
                .map_err(|_| DmError::BadCache("bad coefficient literal".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiMainTerm {
        r: doc.r,
        k: doc.k,
        x_cut: doc.x_cut,
        d,
        tail_estimate: doc.tail_estimate,
        precision_digits: doc.precision_digits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hp::bits_for_digits;
    use crate::multivar::{enumerate_support, local_coefficients};
    use crate::sieve::{build_factor_sieve, build_tau_table};
    use crate::zeta::zeta_laurent;

    fn zl() -> ZetaLaurent {
        zeta_laurent(6, 60).unwrap()
    }

    #[test]
    fn residue_poly_k2() {
        let bits = bits_for_digits(60);
        let z = zl();
        let p = residue_main_poly(2, &z, bits).unwrap();
        // P_1(L) = L + 2γ_0 - 1
        let g0 = z.gammas[0].to_f64();
        assert!((p.coeffs[1].to_f64() - 1.0).abs() < 1e-30);
        assert!((p.coeffs[0].to_f64() - (2.0 * g0 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn residue_poly_k3() {
        let bits = bits_for_digits(60);
        let z = zl();
        let p = residue_main_poly(3, &z, bits).unwrap();
        let g0 = z.gammas[0].to_f64();
        let g1 = z.gammas[1].to_f64();
        // P_2(L) = L²/2 + (3γ_0 - 1)L + (3γ_0² - 3γ_1 - 3γ_0 + 1)
        assert!((p.coeffs[2].to_f64() - 0.5).abs() < 1e-14);
        assert!((p.coeffs[1].to_f64() - (3.0 * g0 - 1.0)).abs() < 1e-14);
        let c0 = 3.0 * g0 * g0 - 3.0 * g1 - 3.0 * g0 + 1.0;
        assert!((p.coeffs[0].to_f64() - c0).abs() < 1e-13);
    }

    #[test]
    fn residue_poly_needs_order() {
        let z = zeta_laurent(1, 40).unwrap();
        assert!(matches!(
            residue_main_poly(4, &z, 160),
            Err(DmError::LaurentOrder { .. })
        ));
    }

    #[test]
    fn delta_grows_slower_than_main() {
        let bits = bits_for_digits(50);
        let sieve = build_factor_sieve(200_000).unwrap();
        let tau = build_tau_table(200_000, 3, &sieve).unwrap();
        let p = residue_main_poly(3, &zl(), bits).unwrap();
        // |Δ_3(x)| should be ≪ x: check relative size shrinks
        let d1 = delta_k_eval(&tau, &p, 1e3, bits).unwrap().to_f64().abs() / 1e3;
        let d2 = delta_k_eval(&tau, &p, 1.8e5, bits).unwrap().to_f64().abs() / 1.8e5;
        assert!(d2 < d1, "relative delta not shrinking: {d1} vs {d2}");
        // and a handful of exact checks against a direct evaluation
        for x in [10.0f64, 100.0, 1234.5] {
            let lhs = delta_k_eval(&tau, &p, x, bits).unwrap();
            let rhs = Float::with_val(bits, crate::sieve::summatory(&tau, x).unwrap())
                - eval_main_k(&p, x, bits);
            assert!((lhs - rhs).to_f64().abs() < 1e-25);
        }
    }

    #[test]
    fn expansion_t1_matches_shifted_poly() {
        let bits = bits_for_digits(50);
        let z = zl();
        let p = residue_main_poly(3, &z, bits).unwrap();
        let exp = expand_main_product(3, 1, &z, bits).unwrap();
        // Σ_ℓ C_ℓ(λ) L^ℓ must equal P_2(L-λ) at sample points
        for (lv, lam) in [(1.3f64, 0.7f64), (5.0, 2.1), (0.0, 3.3)] {
            let lamh = vec![hpf(bits, lam)];
            let mut lhs = 0f64;
            for (l, c) in exp.c.iter().enumerate() {
                lhs += c.eval(&lamh, bits).to_f64() * lv.powi(l as i32);
            }
            let mut rhs = 0f64;
            for (a, pc) in p.coeffs.iter().enumerate() {
                rhs += pc.to_f64() * (lv - lam).powi(a as i32);
            }
            assert!((lhs - rhs).abs() < 1e-10, "lv={lv} lam={lam}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn expansion_t2_product_identity() {
        let bits = bits_for_digits(50);
        let z = zl();
        let p = residue_main_poly(3, &z, bits).unwrap();
        let exp = expand_main_product(3, 2, &z, bits).unwrap();
        assert_eq!(exp.c.len(), 5); // ℓ = 0..4
        for (lv, l1, l2) in [(2.0f64, 0.5f64, 1.5f64), (7.0, 3.0, 0.1)] {
            let lam = vec![hpf(bits, l1), hpf(bits, l2)];
            let mut lhs = 0f64;
            for (l, c) in exp.c.iter().enumerate() {
                lhs += c.eval(&lam, bits).to_f64() * lv.powi(l as i32);
            }
            let pe = |u: f64| -> f64 {
                p.coeffs
                    .iter()
                    .enumerate()
                    .map(|(a, pc)| pc.to_f64() * u.powi(a as i32))
                    .sum()
            };
            let rhs = pe(lv - l1) * pe(lv - l2);
            assert!((lhs - rhs).abs() < 1e-9);
        }
        // top coefficient C_{t(k-1)} = (leading coeff of P)^t = 1/4
        let top = exp.c[4].eval(&[hpf(bits, 9.0), hpf(bits, 4.0)], bits).to_f64();
        assert!((top - 0.25).abs() < 1e-12);
    }

    #[test]
    fn d_coeffs_x1_equal_c_at_zero() {
        let bits = bits_for_digits(50);
        let z = zl();
        let sieve = build_factor_sieve(100).unwrap();
        let lct = local_coefficients(2, 3, 8).unwrap();
        let sup = enumerate_support(1, &sieve, &lct).unwrap();
        let exp = expand_main_product(3, 2, &z, bits).unwrap();
        let mm = d_coefficients(&exp, &sup, 50, bits).unwrap();
        let zero = vec![hpf(bits, 0.0), hpf(bits, 0.0)];
        for (l, c) in exp.c.iter().enumerate() {
            let want = c.eval(&zero, bits).to_f64();
            assert!((mm.d[l].to_f64() - want).abs() < 1e-20);
        }
        assert_eq!(mm.tail_estimate, 0.0);
    }

    #[test]
    fn tail_estimate_decreases_with_x() {
        let bits = bits_for_digits(45);
        let z = zl();
        let sieve = build_factor_sieve(4000).unwrap();
        let lct = local_coefficients(2, 3, 12).unwrap();
        let exp = expand_main_product(3, 2, &z, bits).unwrap();
        let mut prev = f64::INFINITY;
        for x in [500u64, 2000, 4000] {
            let sup = enumerate_support(x, &sieve, &lct).unwrap();
            let mm = d_coefficients(&exp, &sup, 45, bits).unwrap();
            assert!(mm.tail_estimate >= 0.0);
            assert!(
                mm.tail_estimate < prev,
                "tail did not decrease at X={x}: {} >= {prev}",
                mm.tail_estimate
            );
            prev = mm.tail_estimate;
        }
    }

    #[test]
    fn main_term_roundtrip() {
        let bits = bits_for_digits(45);
        let z = zl();
        let sieve = build_factor_sieve(500).unwrap();
        let lct = local_coefficients(2, 3, 10).unwrap();
        let sup = enumerate_support(500, &sieve, &lct).unwrap();
        let exp = expand_main_product(3, 2, &z, bits).unwrap();
        let mm = d_coefficients(&exp, &sup, 45, bits).unwrap();
        let dir = std::env::temp_dir().join("dm_mainterm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mm.json");
        save_main_term(&mm, &path).unwrap();
        let back = load_main_term(&path, bits).unwrap();
        assert_eq!(back.x_cut, 500);
        for (a, b) in mm.d.iter().zip(&back.d) {
            assert!((a.to_f64() - b.to_f64()).abs() <= 1e-30_f64.max(a.to_f64().abs() * 1e-30));
        }
        let v1 = eval_main_rk(&mm, 123.0, bits).to_f64();
        let v2 = eval_main_rk(&back, 123.0, bits).to_f64();
        assert!((v1 - v2).abs() < v1.abs() * 1e-12);
    }
}
