//! Truncated oscillatory expansion of Δ₃:
//! δ₃₁(x,N) = x^{1/3}/(√3π) Σ_{n≤N} τ₃(n) n^{-2/3} cos(6π(nx)^{1/3}),
//! and the mean square of the remainder Δ₃ − δ₃₁ over [T, 2T].

use std::io::Write as _;
use std::path::Path;

use rug::ops::Pow;
use rug::Float;

use crate::error::{DmError, Result};
use crate::hp::{gauss_legendre, hpf, hp_pi, KahanF64};
use crate::mainterm::MainTermPoly;
use crate::sieve::TauTable;

#[derive(Debug, Clone, Copy)]
pub struct VoronoiConfig {
    pub n_trunc: u64,
    pub sample_count: usize,
    pub t_start: f64,
}

impl VoronoiConfig {
    pub fn new(n_trunc: u64, sample_count: usize, t_start: f64) -> Result<Self> {
        if t_start < 1.0 || sample_count == 0 {
            return Err(DmError::usage("config", "need T >= 1 and sample_count > 0"));
        }
        if n_trunc > 0 && (n_trunc as f64).powi(3) > t_start * t_start * (1.0 + 1e-9) {
            return Err(DmError::usage("N", "truncation must satisfy N <= T^(2/3)"));
        }
        Ok(VoronoiConfig {
            n_trunc,
            sample_count,
            t_start,
        })
    }
}

/// The truncated sum, arguments reduced mod 2π at working precision
/// before the cosine.
pub fn delta31(x: f64, n_trunc: u64, tau: &TauTable, bits: u32) -> Result<Float> {
    if x <= 0.0 {
        return Err(DmError::OutOfRange(format!("x = {x} must be positive")));
    }
    if n_trunc > tau.limit {
        return Err(DmError::OutOfRange(format!(
            "N = {n_trunc} beyond tau table limit {}",
            tau.limit
        )));
    }
    let two_pi = hp_pi(bits) * 2u32;
    let cbrt_x = hpf(bits, x).root(3);
    let mut acc = Float::with_val(bits, 0);
    for n in 1..=n_trunc {
        let cn = Float::with_val(bits, tau.tau(n))
            / Float::with_val(bits, n).pow(2u32).root(3);
        let mut arg = Float::with_val(bits, 6u32) * hp_pi(bits)
            * Float::with_val(bits, n).root(3)
            * &cbrt_x;
        // explicit range reduction
        let k = (arg.clone() / &two_pi).floor();
        arg -= k * &two_pi;
        acc += cn * arg.cos();
    }
    let scale = cbrt_x / (Float::with_val(bits, 3u32).sqrt() * hp_pi(bits));
    Ok(acc * scale)
}

/// d/dx δ₃₁, used to sanity-check the oscillatory evaluation against
/// finite differences.
pub fn delta31_deriv(x: f64, n_trunc: u64, tau: &TauTable, bits: u32) -> Result<Float> {
    if x <= 0.0 {
        return Err(DmError::OutOfRange(format!("x = {x} must be positive")));
    }
    if n_trunc > tau.limit {
        return Err(DmError::OutOfRange(format!(
            "N = {n_trunc} beyond tau table limit {}",
            tau.limit
        )));
    }
    let two_pi = hp_pi(bits) * 2u32;
    let xh = hpf(bits, x);
    let cbrt_x = xh.clone().root(3);
    let sqrt3pi = Float::with_val(bits, 3u32).sqrt() * hp_pi(bits);
    let mut acc = Float::with_val(bits, 0);
    for n in 1..=n_trunc {
        let cn = Float::with_val(bits, tau.tau(n))
            / Float::with_val(bits, n).pow(2u32).root(3);
        let an = Float::with_val(bits, 6u32) * hp_pi(bits) * Float::with_val(bits, n).root(3);
        let mut arg = an.clone() * &cbrt_x;
        let k = (arg.clone() / &two_pi).floor();
        arg -= k * &two_pi;
        // d/dx [x^{1/3} cos(a x^{1/3})]
        //   = (1/3) x^{-2/3} cos − (a/3) x^{-1/3} sin x^{1/3}... grouped:
        //   = (1/3) x^{-2/3} (cos(a x^{1/3}) − a x^{1/3} sin(a x^{1/3}))
        let inner = arg.clone().cos() - an * &cbrt_x * arg.sin();
        let x23 = xh.clone().pow(2u32).root(3);
        acc += cn * inner / (Float::with_val(bits, 3u32) * x23);
    }
    Ok(acc / sqrt3pi)
}

/// ms ≈ ∫_T^{2T} (Δ₃ − δ₃₁(·,N))² dx by per-unit-interval Gauss–Legendre;
/// bound_ratio = ms / (T^{5/3} N^{-1/3} + T^{14/9}).
pub fn remainder_mean_square(
    t_start: f64,
    n_trunc: u64,
    samples: usize,
    tau: &TauTable,
    poly: &MainTermPoly,
) -> Result<(f64, f64)> {
    if t_start < 1.0 || 2.0 * t_start > tau.limit as f64 {
        return Err(DmError::OutOfRange(format!(
            "window [{t_start}, {}] outside table",
            2.0 * t_start
        )));
    }
    if n_trunc > 0 && (n_trunc as f64).powi(3) > t_start * t_start * (1.0 + 1e-9) {
        return Err(DmError::usage("N", "truncation must satisfy N <= T^(2/3)"));
    }
    let samples = samples.max(2);
    let bits = 128;
    let rule = gauss_legendre(samples, bits);
    let nodes: Vec<f64> = rule.iter().map(|(n, _)| n.to_f64()).collect();
    let weights: Vec<f64> = rule.iter().map(|(_, w)| w.to_f64()).collect();

    // f64 term tables; the phases stay ≤ 6π(N·2T)^{1/3} which f64 cosine
    // reduces accurately at desk scale
    let cn: Vec<f64> = (1..=n_trunc)
        .map(|n| tau.tau(n) as f64 / (n as f64).powf(2.0 / 3.0))
        .collect();
    let an: Vec<f64> = (1..=n_trunc)
        .map(|n| 6.0 * std::f64::consts::PI * (n as f64).cbrt())
        .collect();
    let inv_sqrt3pi = 1.0 / (3f64.sqrt() * std::f64::consts::PI);
    let q: Vec<f64> = poly.coeffs.iter().map(|c| c.to_f64()).collect();

    let t_end = 2.0 * t_start;
    let mut breaks: Vec<f64> = vec![t_start];
    let mut v = t_start.floor() + 1.0;
    while v < t_end {
        breaks.push(v);
        v += 1.0;
    }
    breaks.push(t_end);

    let mut acc = KahanF64::new();
    for w in breaks.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            continue;
        }
        let step = tau.prefix(u.floor() as u64) as f64;
        let half = 0.5 * (v - u);
        let mid = 0.5 * (u + v);
        let mut local = 0.0;
        for (node, weight) in nodes.iter().zip(&weights) {
            let x = mid + half * node;
            let lx = x.ln();
            let mut main = 0.0;
            for c in q.iter().rev() {
                main = main * lx + c;
            }
            main *= x;
            let cbrt = x.cbrt();
            let mut osc = 0.0;
            for (c, a) in cn.iter().zip(&an) {
                osc += c * (a * cbrt).cos();
            }
            osc *= cbrt * inv_sqrt3pi;
            let g = step - main - osc;
            local += weight * g * g;
        }
        acc.add(local * half);
    }
    let ms = acc.value();
    let n_eff = n_trunc.max(1) as f64;
    let denom = t_start.powf(5.0 / 3.0) * n_eff.powf(-1.0 / 3.0) + t_start.powf(14.0 / 9.0);
    Ok((ms, ms / denom))
}

/// CSV rows of (T, N, ms, bound_ratio).
pub fn voronoi_csv(path: &Path, rows: &[(f64, u64, f64, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "T,N,ms,bound_ratio")?;
    for (t, n, ms, ratio) in rows {
        writeln!(out, "{t},{n},{ms:.6e},{ratio:.6e}")?;
    }
    Ok(())
}
