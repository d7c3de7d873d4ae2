//! Moment integrals of the error term over [1, T]: the first moment, the
//! mean square, the third absolute moment, and sign-change counts, all by
//! closed-form antidifferentiation of x^a·(log x)^b on the unit intervals
//! where the summatory side is constant.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rug::ops::Pow;
use rug::{Float, Integer};
use serde::{Deserialize, Serialize};

use crate::error::{DmError, Result};
use crate::hp::KahanHp;
use crate::series::LPolynomial;

/// Antiderivative of x^a Σ_b q_b (log x)^b as x^{a+1} Σ_b α_b (log x)^b;
/// matching derivatives gives (a+1)α_b + (b+1)α_{b+1} = q_b, solved from
/// the top coefficient down.
fn antiderivative_coeffs(a: u32, q: &[Float], bits: u32) -> Vec<Float> {
    let ap1 = Float::with_val(bits, a + 1);
    let mut alpha = vec![Float::with_val(bits, 0); q.len()];
    for b in (0..q.len()).rev() {
        let mut num = Float::with_val(bits, &q[b]);
        if b + 1 < q.len() {
            num -= Float::with_val(bits, (b + 1) as u32) * &alpha[b + 1];
        }
        alpha[b] = num / &ap1;
    }
    alpha
}

fn convolve(a: &[Float], b: &[Float], bits: u32) -> Vec<Float> {
    let mut out = vec![Float::with_val(bits, 0); a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += (ai * bj).complete(bits);
        }
    }
    out
}

use rug::ops::CompleteRound;

/// Closed-form integrator for Δ(x) = S(⌊x⌋) − x^r Σ_ℓ d_ℓ (log x)^ℓ.
pub struct MomentEngine {
    pub r: u32,
    pub bits: u32,
    d: Vec<Float>,
    d_f64: Vec<f64>,
    /// antiderivative coefficient vectors for G, G², G³
    a1: Vec<Float>,
    a2: Vec<Float>,
    a3: Vec<Float>,
}

/// Moments of one window [t0, t1].
#[derive(Debug, Clone)]
pub struct MomentSlice {
    pub square: Float,
    pub first: Float,
    pub abs_cube: Float,
    pub sign_changes: u64,
}

/// Evaluations at one endpoint shared between neighbouring intervals.
struct Endpoint {
    g: f64,
    v1: Float,
    v2: Float,
    v3: Float,
}

const CHUNK: u64 = 4096;

impl MomentEngine {
    pub fn new(r: u32, d: &[Float], bits: u32) -> Result<MomentEngine> {
        if r == 0 || d.is_empty() {
            return Err(DmError::usage("d", "need r >= 1 and a nonempty main term"));
        }
        let d: Vec<Float> = d.iter().map(|c| Float::with_val(bits, c)).collect();
        let d2 = convolve(&d, &d, bits);
        let d3 = convolve(&d2, &d, bits);
        Ok(MomentEngine {
            r,
            bits,
            d_f64: d.iter().map(|c| c.to_f64()).collect(),
            a1: antiderivative_coeffs(r, &d, bits),
            a2: antiderivative_coeffs(2 * r, &d2, bits),
            a3: antiderivative_coeffs(3 * r, &d3, bits),
            d,
        })
    }

    /// main term at x, f64 (used for bracketing roots and signs)
    pub fn main_f64(&self, x: f64) -> f64 {
        let l = x.ln();
        let mut acc = 0f64;
        for c in self.d_f64.iter().rev() {
            acc = acc * l + c;
        }
        acc * x.powi(self.r as i32)
    }

    fn endpoint(&self, x: &Float) -> Endpoint {
        let bits = self.bits;
        let l = x.clone().ln();
        let horner = |q: &[Float]| -> Float {
            let mut acc = Float::with_val(bits, 0);
            for c in q.iter().rev() {
                acc = acc * &l + c;
            }
            acc
        };
        let xp = |e: u32| -> Float { x.clone().pow(e) };
        let g = (horner(&self.d) * xp(self.r)).to_f64();
        Endpoint {
            g,
            v1: horner(&self.a1) * xp(self.r + 1),
            v2: horner(&self.a2) * xp(2 * self.r + 1),
            v3: horner(&self.a3) * xp(3 * self.r + 1),
        }
    }

    /// Contribution of [x0, x1] where the step value is the constant s.
    /// Splits at a sign change of s − G (G is monotone on the window).
    fn piece(
        &self,
        s: &Float,
        x0f: f64,
        e0: &Endpoint,
        x1f: f64,
        e1: &Endpoint,
        sq: &mut KahanHp,
        fi: &mut KahanHp,
        cu: &mut KahanHp,
        signs: &mut u64,
    ) {
        let bits = self.bits;
        let du = Float::with_val(bits, x1f) - Float::with_val(bits, x0f);
        let d1 = (&e1.v1 - &e0.v1).complete(bits);
        let d2 = (&e1.v2 - &e0.v2).complete(bits);
        let d3 = (&e1.v3 - &e0.v3).complete(bits);
        let s2 = s.clone().pow(2u32);
        let s3 = (&s2 * s).complete(bits);

        fi.add(&((s * &du).complete(bits) - &d1));
        let mut q = (&s2 * &du).complete(bits);
        q -= Float::with_val(bits, 2u32) * s * &d1;
        q += &d2;
        sq.add(&q);

        let cube = |du: &Float, d1: &Float, d2: &Float, d3: &Float| -> Float {
            let mut c = (&s3 * du).complete(bits);
            c -= Float::with_val(bits, 3u32) * &s2 * d1;
            c += Float::with_val(bits, 3u32) * s * d2;
            c -= d3;
            c
        };

        let sf = s.to_f64();
        let h0 = sf - e0.g;
        let h1 = sf - e1.g;
        if h0 == 0.0 || h1 == 0.0 || (h0 > 0.0) == (h1 > 0.0) {
            cu.add(&cube(&du, &d1, &d2, &d3).abs());
        } else {
            *signs += 1;
            // G is monotone, so s − G crosses zero exactly once
            let (mut lo, mut hi) = (x0f, x1f);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let hm = sf - self.main_f64(mid);
                if (hm > 0.0) == (h0 > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 * hi {
                    break;
                }
            }
            let xr = 0.5 * (lo + hi);
            let er = self.endpoint(&Float::with_val(bits, xr));
            let dua = Float::with_val(bits, xr) - Float::with_val(bits, x0f);
            let dub = Float::with_val(bits, x1f) - Float::with_val(bits, xr);
            let ca = cube(
                &dua,
                &(&er.v1 - &e0.v1).complete(bits),
                &(&er.v2 - &e0.v2).complete(bits),
                &(&er.v3 - &e0.v3).complete(bits),
            );
            let cb = cube(
                &dub,
                &(&e1.v1 - &er.v1).complete(bits),
                &(&e1.v2 - &er.v2).complete(bits),
                &(&e1.v3 - &er.v3).complete(bits),
            );
            cu.add(&ca.abs());
            cu.add(&cb.abs());
        }
    }

    /// Moments of Δ over [t0, t1].  `step` returns S(n), the summatory value
    /// in force on [n, n+1).  Deterministic under any thread count: the
    /// window is cut into fixed chunks reduced in index order.
    pub fn integrate<F>(&self, t0: f64, t1: f64, step: &F) -> Result<MomentSlice>
    where
        F: Fn(u64) -> i128 + Sync,
    {
        if !(t0 >= 1.0 && t1 > t0) {
            return Err(DmError::usage("T", "need 1 <= t0 < t1"));
        }
        let bits = self.bits;
        let n0 = t0 as u64;
        let n1 = t1 as u64;
        let starts: Vec<u64> = (n0..=n1).step_by(CHUNK as usize).collect();
        let partials: Vec<(Float, Float, Float, u64)> = starts
            .par_iter()
            .map(|&cs| {
                let ce = (cs + CHUNK).min(n1 + 1);
                let mut sq = KahanHp::new(bits);
                let mut fi = KahanHp::new(bits);
                let mut cu = KahanHp::new(bits);
                let mut signs = 0u64;
                // a jump exactly at the window start is counted here, so
                // adjacent windows tile without double counting
                let mut prev_sign: Option<bool> = if cs == n0 && t0 == n0 as f64 && n0 >= 2 {
                    let h = step(n0 - 1) as f64 - self.main_f64(t0);
                    if h != 0.0 {
                        Some(h > 0.0)
                    } else {
                        None
                    }
                } else {
                    None
                };
                let mut x_lo = if cs == n0 { t0 } else { cs as f64 };
                let mut e_lo = self.endpoint(&Float::with_val(bits, x_lo));
                for n in cs..ce {
                    let x_hi = ((n + 1) as f64).min(t1);
                    if x_hi <= x_lo {
                        break;
                    }
                    let e_hi = self.endpoint(&Float::with_val(bits, x_hi));
                    let s = Float::with_val(bits, Integer::from(step(n)));
                    let sf = s.to_f64();
                    // jump discontinuity at the left endpoint
                    let h_in = sf - e_lo.g;
                    if let Some(p) = prev_sign {
                        if h_in != 0.0 && p != (h_in > 0.0) {
                            signs += 1;
                        }
                    }
                    self.piece(&s, x_lo, &e_lo, x_hi, &e_hi, &mut sq, &mut fi, &mut cu, &mut signs);
                    let h_out = sf - e_hi.g;
                    if h_out != 0.0 {
                        prev_sign = Some(h_out > 0.0);
                    }
                    x_lo = x_hi;
                    e_lo = e_hi;
                }
                (sq.value(), fi.value(), cu.value(), signs)
            })
            .collect();
        let mut sq = KahanHp::new(bits);
        let mut fi = KahanHp::new(bits);
        let mut cu = KahanHp::new(bits);
        let mut signs = 0u64;
        for (a, b, c, s) in &partials {
            sq.add(a);
            fi.add(b);
            cu.add(c);
            signs += s;
        }
        // chunk seams: a sign flip across a boundary integer is counted by
        // neither side, so scan them here
        for w in starts.windows(2) {
            let b = w[1];
            let left = (step(b - 1) as f64) - self.main_f64(b as f64);
            let right = (step(b) as f64) - self.main_f64(b as f64);
            if left != 0.0 && right != 0.0 && (left > 0.0) != (right > 0.0) {
                signs += 1;
            }
        }
        Ok(MomentSlice {
            square: sq.value(),
            first: fi.value(),
            abs_cube: cu.value(),
            sign_changes: signs,
        })
    }
}

/// Least-squares slope of log y against log x; needs at least three
/// strictly positive samples.
pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(DmError::usage("pairs", "need at least 3 samples"));
    }
    if pairs.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(DmError::usage("pairs", "samples must be positive"));
    }
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0f64, 0f64, 0f64, 0f64);
    for &(x, y) in pairs {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(DmError::usage("pairs", "degenerate abscissae"));
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Predicted mean square (r²/(6π²)) T^{2r−1/3} L(log T).
pub fn predicted_square(r: u32, lp: &LPolynomial, t: f64) -> f64 {
    let scale = (r * r) as f64 / (6.0 * std::f64::consts::PI * std::f64::consts::PI);
    scale * t.powf(2.0 * r as f64 - 1.0 / 3.0) * lp.eval_f64(t.ln())
}

/// Observed ∫₁^T Δ² against the prediction.
pub fn compare_theorem2(square: f64, r: u32, lp: &LPolynomial, t: f64) -> f64 {
    square / predicted_square(r, lp, t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub r: u32,
    pub k: u32,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<f64>,
    pub square: Vec<f64>,
    pub first: Vec<f64>,
    pub abs_cube: Vec<f64>,
    pub sign_changes: Vec<u64>,
    pub predicted_square: Vec<f64>,
    pub ratio: Vec<f64>,
}

/// Cumulative moments at each grid point, integrating each gap once.
pub fn moment_report<F, P>(
    r: u32,
    k: u32,
    engine: &MomentEngine,
    step: &F,
    t_grid: &[f64],
    predicted: P,
) -> Result<MomentReport>
where
    F: Fn(u64) -> i128 + Sync,
    P: Fn(f64) -> f64,
{
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) || t_grid[0] <= 1.0 {
        return Err(DmError::usage("T_grid", "need increasing grid with T > 1"));
    }
    let bits = engine.bits;
    let mut sq = KahanHp::new(bits);
    let mut fi = KahanHp::new(bits);
    let mut cu = KahanHp::new(bits);
    let mut signs = 0u64;
    let mut prev = 1.0f64;
    let mut report = MomentReport {
        r,
        k,
        t_grid: t_grid.to_vec(),
        square: Vec::new(),
        first: Vec::new(),
        abs_cube: Vec::new(),
        sign_changes: Vec::new(),
        predicted_square: Vec::new(),
        ratio: Vec::new(),
    };
    for &t in t_grid {
        let slice = engine.integrate(prev, t, step)?;
        sq.add(&slice.square);
        fi.add(&slice.first);
        cu.add(&slice.abs_cube);
        signs += slice.sign_changes;
        prev = t;
        let square = sq.value().to_f64();
        let pred = predicted(t);
        report.square.push(square);
        report.first.push(fi.value().to_f64());
        report.abs_cube.push(cu.value().to_f64());
        report.sign_changes.push(signs);
        report.predicted_square.push(pred);
        report
            .ratio
            .push(if pred != 0.0 { square / pred } else { f64::NAN });
    }
    Ok(report)
}

pub fn moments_csv(report: &MomentReport, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "T,square,first,abs_cube,sign_changes,predicted_square,ratio")?;
    for i in 0..report.t_grid.len() {
        writeln!(
            out,
            "{},{:.12e},{:.12e},{:.12e},{},{:.12e},{:.12e}",
            report.t_grid[i],
            report.square[i],
            report.first[i],
            report.abs_cube[i],
            report.sign_changes[i],
            report.predicted_square[i],
            report.ratio[i]
        )?;
    }
    Ok(())
}

pub fn moments_json(report: &MomentReport, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hp::{bits_for_digits, gauss_legendre_integral};
    use crate::mainterm::residue_main_poly;
    use crate::sieve::{build_factor_sieve, build_tau_table, TauTable};
    use crate::zeta::zeta_laurent;

    fn setup(limit: u64, k: u32) -> (TauTable, Vec<Float>, u32) {
        let bits = bits_for_digits(45);
        let sieve = build_factor_sieve(limit).unwrap();
        let tau = build_tau_table(limit, k, &sieve).unwrap();
        let zl = zeta_laurent(k as usize + 1, 50).unwrap();
        let poly = residue_main_poly(k, &zl, bits).unwrap();
        (tau, poly.coeffs, bits)
    }

    #[test]
    fn antiderivative_matches_derivative() {
        let bits = bits_for_digits(40);
        let q: Vec<Float> = [3.0, -1.0, 0.5]
            .iter()
            .map(|&c| Float::with_val(bits, c))
            .collect();
        let alpha = antiderivative_coeffs(2, &q, bits);
        // check (a+1)α_b + (b+1)α_{b+1} = q_b
        for b in 0..q.len() {
            let mut lhs = Float::with_val(bits, 3u32) * &alpha[b];
            if b + 1 < q.len() {
                lhs += Float::with_val(bits, (b + 1) as u32) * &alpha[b + 1];
            }
            let err = (lhs - &q[b]).abs().to_f64();
            assert!(err < 1e-38);
        }
    }

    #[test]
    fn engine_matches_quadrature_on_unit_intervals() {
        let (tau, d, bits) = setup(3000, 3);
        let engine = MomentEngine::new(1, &d, bits).unwrap();
        let step = |n: u64| tau.prefix(n);
        let mut st = 99u64;
        let mut next = || {
            st ^= st << 13;
            st ^= st >> 7;
            st ^= st << 17;
            st
        };
        for _ in 0..50 {
            let n = next() % 2900 + 10;
            let slice = engine.integrate(n as f64, (n + 1) as f64, &step).unwrap();
            let s = Float::with_val(bits, Integer::from(tau.prefix(n)));
            let dd = d.clone();
            let f2 = |x: &Float| -> Float {
                let l = x.clone().ln();
                let mut g = Float::with_val(bits, 0);
                for c in dd.iter().rev() {
                    g = g * &l + c;
                }
                let h = Float::with_val(bits, &s) - g * x;
                h.square()
            };
            let a = Float::with_val(bits, n);
            let b = Float::with_val(bits, n + 1);
            let want = gauss_legendre_integral(f2, &a, &b, 24, bits);
            let rel = ((slice.square.clone() - &want) / &want).abs().to_f64();
            assert!(rel < 1e-9, "n = {n}, rel = {rel}");
        }
    }

    #[test]
    fn abs_cube_with_root_matches_quadrature() {
        let (tau, d, bits) = setup(3000, 3);
        let engine = MomentEngine::new(1, &d, bits).unwrap();
        let step = |n: u64| tau.prefix(n);
        // scan for intervals containing a sign change and compare there
        let mut checked = 0;
        for n in 10u64..2000 {
            let h0 = tau.prefix(n) as f64 - engine.main_f64(n as f64);
            let h1 = tau.prefix(n) as f64 - engine.main_f64((n + 1) as f64);
            if (h0 > 0.0) == (h1 > 0.0) {
                continue;
            }
            let slice = engine.integrate(n as f64, (n + 1) as f64, &step).unwrap();
            // one interior crossing, possibly plus a jump at the window start
            assert!(slice.sign_changes >= 1 && slice.sign_changes <= 2);
            let s = Float::with_val(bits, Integer::from(tau.prefix(n)));
            let dd = d.clone();
            let f3 = |x: &Float| -> Float {
                let l = x.clone().ln();
                let mut g = Float::with_val(bits, 0);
                for c in dd.iter().rev() {
                    g = g * &l + c;
                }
                let h = Float::with_val(bits, &s) - g * x;
                h.clone().abs() * h.square()
            };
            let a = Float::with_val(bits, n);
            let b = Float::with_val(bits, n + 1);
            // split quadrature at the root for accuracy
            let xr = {
                let (mut lo, mut hi) = (n as f64, (n + 1) as f64);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if (tau.prefix(n) as f64 - engine.main_f64(mid) > 0.0) == (h0 > 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Float::with_val(bits, 0.5 * (lo + hi))
            };
            let want = gauss_legendre_integral(|x| f3(x), &a, &xr, 24, bits)
                + gauss_legendre_integral(|x| f3(x), &xr, &b, 24, bits);
            let rel = ((slice.abs_cube.clone() - &want) / &want).abs().to_f64();
            assert!(rel < 1e-8, "n = {n}, rel = {rel}");
            checked += 1;
            if checked >= 10 {
                break;
            }
        }
        assert!(checked >= 5, "too few root intervals found");
    }

    #[test]
    fn determinism_across_windows() {
        // one integrate over [a, c] equals [a, b] + [b, c]
        let (tau, d, bits) = setup(5000, 3);
        let engine = MomentEngine::new(1, &d, bits).unwrap();
        let step = |n: u64| tau.prefix(n);
        let whole = engine.integrate(1.0, 5000.0, &step).unwrap();
        let p1 = engine.integrate(1.0, 2500.0, &step).unwrap();
        let p2 = engine.integrate(2500.0, 5000.0, &step).unwrap();
        let err = (whole.square.clone() - (p1.square.clone() + &p2.square))
            .abs()
            .to_f64();
        assert!(err < 1e-20, "err = {err}");
        let errf = (whole.first.clone() - (p1.first.clone() + &p2.first))
            .abs()
            .to_f64();
        assert!(errf < 1e-20);
        assert_eq!(whole.sign_changes, p1.sign_changes + p2.sign_changes);
    }

    #[test]
    fn moment_inequalities() {
        // |∫Δ| ≤ sqrt((T−1)∫Δ²) and ∫Δ² ≤ (∫|Δ|³)^{2/3} (T−1)^{1/3}
        let (tau, d, bits) = setup(20_000, 3);
        let engine = MomentEngine::new(1, &d, bits).unwrap();
        let step = |n: u64| tau.prefix(n);
        for t in [1000.0f64, 5000.0, 20000.0] {
            let s = engine.integrate(1.0, t, &step).unwrap();
            let first = s.first.to_f64().abs();
            let square = s.square.to_f64();
            let cube = s.abs_cube.to_f64();
            let len = t - 1.0;
            assert!(first <= (len * square).sqrt() * (1.0 + 1e-12));
            assert!(square <= cube.powf(2.0 / 3.0) * len.powf(1.0 / 3.0) * (1.0 + 1e-12));
            assert!(s.sign_changes > 0);
        }
    }

    #[test]
    fn mean_square_growth_rate() {
        // ∫₁^T Δ₃² should grow roughly like T^{5/3}
        let (tau, d, bits) = setup(40_000, 3);
        let engine = MomentEngine::new(1, &d, bits).unwrap();
        let step = |n: u64| tau.prefix(n);
        let mut pairs = Vec::new();
        for t in [5_000.0f64, 10_000.0, 20_000.0, 40_000.0] {
            let s = engine.integrate(1.0, t, &step).unwrap();
            pairs.push((t, s.square.to_f64()));
        }
        let slope = fit_exponent(&pairs).unwrap();
        assert!((slope - 5.0 / 3.0).abs() < 0.35, "slope = {slope}");
    }

    #[test]
    fn fit_exponent_exact_power() {
        let pairs: Vec<(f64, f64)> = (1..=6).map(|i| {
            let x = (10f64).powi(i);
            (x, 3.5 * x.powf(1.25))
        }).collect();
        let slope = fit_exponent(&pairs).unwrap();
        assert!((slope - 1.25).abs() < 1e-12);
        assert!(fit_exponent(&pairs[..2]).is_err());
    }

    #[test]
    fn report_accumulates_and_serializes() {
        let (tau, d, bits) = setup(4000, 3);
        let engine = MomentEngine::new(1, &d, bits).unwrap();
        let step = |n: u64| tau.prefix(n);
        let grid = [1000.0f64, 2000.0, 4000.0];
        let report =
            moment_report(1, 3, &engine, &step, &grid, |t| 0.01 * t.powf(5.0 / 3.0)).unwrap();
        assert_eq!(report.square.len(), 3);
        assert!(report.square[0] < report.square[1] && report.square[1] < report.square[2]);
        let direct = engine.integrate(1.0, 2000.0, &step).unwrap();
        let rel = (report.square[1] - direct.square.to_f64()).abs() / direct.square.to_f64();
        assert!(rel < 1e-12);
        let dir = std::env::temp_dir().join("dm_moments_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("m.csv");
        let json = dir.join("m.json");
        moments_csv(&report, &csv).unwrap();
        moments_json(&report, &json).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("T,square,first,abs_cube,sign_changes,predicted_square,ratio"));
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(doc["T_grid"].as_array().unwrap().len(), 3);
    }
}
