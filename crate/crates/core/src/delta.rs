//! Exact tables of S(n) = Σ_{n_1,…,n_r ≤ n} τ_k(n_1⋯n_r) and the error
//! term Δ(x) = S(⌊x⌋) − x^r Σ_ℓ d_ℓ (log x)^ℓ.  The table is built
//! incrementally: writing S(n) = Σ_m f(m) Π_j D_k(⌊n/m_j⌋), the product
//! for a support tuple changes between n-1 and n only when some
//! coordinate divides n, so one pass over 1..T costs about T log T
//! bucket updates instead of T·|support| re-evaluations.

use std::io::Write as _;
use std::path::Path;

use rug::Float;

use crate::error::{DmError, Result};
use crate::hp::hpf;
use crate::mainterm::{eval_main_k_at, eval_main_rk, MainTermPoly, MultiMainTerm};
use crate::multivar::Support;
use crate::sieve::{factorize, tau_k_of_product, FactorSieve, TauTable};

#[derive(Debug, Clone)]
pub struct MultiSumTable {
    pub r: usize,
    pub k: u32,
    pub limit: u64,
    s: Vec<i128>,
}

impl MultiSumTable {
    pub fn value(&self, n: u64) -> i128 {
        self.s[n as usize]
    }

    /// S(⌊y⌋), zero below 1.
    pub fn at(&self, y: f64) -> Result<i128> {
        if y < 1.0 {
            return Ok(0);
        }
        let n = y.floor() as u64;
        if n > self.limit {
            return Err(DmError::OutOfRange(format!(
                "x = {y} beyond table limit {}",
                self.limit
            )));
        }
        Ok(self.s[n as usize])
    }

    pub fn values(&self) -> &[i128] {
        &self.s
    }
}

/// Reference: enumerate every tuple.  Only for small boxes.
pub fn multisum_brute(x: u64, r: usize, k: u32, sieve: &FactorSieve) -> Result<i128> {
    let total = (x as f64).powi(r as i32);
    if total > 3e8 {
        return Err(DmError::Budget(format!("{x}^{r} brute-force tuple sum")));
    }
    let facs: Vec<_> = (1..=x)
        .map(|v| factorize(v, sieve))
        .collect::<Result<Vec<_>>>()?;
    let mut acc: i128 = 0;
    let mut n = vec![1u64; r];
    loop {
        let parts: Vec<_> = n.iter().map(|&v| &facs[(v - 1) as usize]).collect();
        acc = acc
            .checked_add(tau_k_of_product(&parts, k)? as i128)
            .ok_or_else(|| DmError::Overflow {
                context: "brute multisum".into(),
            })?;
        let mut j = r;
        let mut done = true;
        while j > 0 {
            j -= 1;
            if n[j] < x {
                n[j] += 1;
                for l in n.iter_mut().skip(j + 1) {
                    *l = 1;
                }
                done = false;
                break;
            }
        }
        if done {
            return Ok(acc);
        }
    }
}

/// Fast single value through the kernel: S(n) = Σ_m f(m) Π D_k(⌊n/m_j⌋).
pub fn multisum_fast(n: u64, tau: &TauTable, support: &Support) -> Result<i128> {
    if tau.k != support.k {
        return Err(DmError::usage("k", "tau table and support disagree on k"));
    }
    if n > tau.limit {
        return Err(DmError::OutOfRange(format!(
            "n = {n} beyond tau table limit {}",
            tau.limit
        )));
    }
    let mut acc: i128 = 0;
    for (m, f) in support.iter() {
        let mut prod: i128 = f;
        for &mj in m {
            if mj > n {
                prod = 0;
                break;
            }
            prod = prod
                .checked_mul(tau.prefix(n / mj))
                .ok_or_else(|| DmError::Overflow {
                    context: "direct multisum".into(),
                })?;
        }
        acc = acc.checked_add(prod).ok_or_else(|| DmError::Overflow {
            context: "direct multisum".into(),
        })?;
    }
    Ok(acc)
}

/// Full table of S(1..=t_limit) by divisor-driven updates.
pub fn build_multisum_table(
    t_limit: u64,
    tau: &TauTable,
    support: &Support,
    sieve: &FactorSieve,
) -> Result<MultiSumTable> {
    if tau.k != support.k {
        return Err(DmError::usage("k", "tau table and support disagree on k"));
    }
    if t_limit > tau.limit || t_limit > sieve.limit {
        return Err(DmError::OutOfRange(format!(
            "table limit {t_limit} beyond tau/sieve limits"
        )));
    }
    if support.limit < t_limit {
        return Err(DmError::usage(
            "support",
            "support must be enumerated at least up to the table limit",
        ));
    }
    let r = support.r;

    // keep only tuples that can ever activate, bucket them by distinct
    // coordinate values
    let mut tuples: Vec<(usize, i128)> = Vec::new(); // (offset into ms, f)
    let mut ms: Vec<u64> = Vec::new();
    for (m, f) in support.iter() {
        if m.iter().all(|&v| v <= t_limit) {
            tuples.push((ms.len(), f));
            ms.extend_from_slice(m);
        }
    }
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); t_limit as usize + 1];
    for (idx, (off, _)) in tuples.iter().enumerate() {
        let coords = &ms[*off..*off + r];
        for (pos, &v) in coords.iter().enumerate() {
            if coords[..pos].contains(&v) {
                continue;
            }
            buckets[v as usize].push(idx as u32);
        }
    }

    let mut cached: Vec<i128> = vec![0; tuples.len()];
    let mut stamp: Vec<u32> = vec![0; tuples.len()];
    let mut running: i128 = 0;
    let mut s: Vec<i128> = Vec::with_capacity(t_limit as usize + 1);
    s.push(0);
    let mut divs: Vec<u64> = Vec::new();
    for n in 1..=t_limit {
        divs.clear();
        divs.push(1);
        let fac = factorize(n, sieve)?;
        for (p, e) in fac.factors {
            let len = divs.len();
            let mut pw = 1u64;
            for _ in 0..e {
                pw *= p;
                for i in 0..len {
                    divs.push(divs[i] * pw);
                }
            }
        }
        for &d in &divs {
            if d > t_limit {
                continue;
            }
            for &idx in &buckets[d as usize] {
                let idx = idx as usize;
                if stamp[idx] == n as u32 {
                    continue;
                }
                stamp[idx] = n as u32;
                let (off, f) = tuples[idx];
                let mut prod: i128 = f;
                for &mj in &ms[off..off + r] {
                    if mj > n {
                        prod = 0;
                        break;
                    }
                    prod = prod
                        .checked_mul(tau.prefix(n / mj))
                        .ok_or_else(|| DmError::Overflow {
                            context: "multisum table".into(),
                        })?;
                }
                running = running
                    .checked_add(prod - cached[idx])
                    .ok_or_else(|| DmError::Overflow {
                        context: "multisum table".into(),
                    })?;
                cached[idx] = prod;
            }
        }
        s.push(running);
    }
    Ok(MultiSumTable {
        r,
        k: support.k,
        limit: t_limit,
        s,
    })
}

/// Δ(x) = S(⌊x⌋) − x^r Σ d_ℓ (log x)^ℓ at full working precision.
pub fn delta_rk_eval(
    x: f64,
    table: &MultiSumTable,
    mm: &MultiMainTerm,
    bits: u32,
) -> Result<Float> {
    if table.r != mm.r || table.k != mm.k {
        return Err(DmError::usage("mm", "table and main term disagree on (r, k)"));
    }
    if x < 1.0 {
        return Err(DmError::OutOfRange(format!("x = {x} below 1")));
    }
    let s = table.at(x)?;
    Ok(Float::with_val(bits, s) - eval_main_rk(mm, x, bits))
}

/// The dominating part of Δ: each tuple keeps the one-variable error in
/// the last coordinate and main terms in the others, times r for the
/// symmetric arrangements.
pub fn delta_star_eval(
    x: f64,
    support: &Support,
    tau: &TauTable,
    poly: &MainTermPoly,
    bits: u32,
) -> Result<Float> {
    if tau.k != support.k || poly.k != support.k {
        return Err(DmError::usage("k", "inputs disagree on k"));
    }
    let r = support.r;
    let xh = hpf(bits, x);
    let mut acc = Float::with_val(bits, 0);
    for (m, f) in support.iter() {
        if m.iter().any(|&mj| (mj as f64) > x) {
            continue;
        }
        let mut term = Float::with_val(bits, f);
        for &mj in &m[..r - 1] {
            let u = Float::with_val(bits, &xh) / Float::with_val(bits, mj);
            term *= eval_main_k_at(poly, &u);
        }
        let u = Float::with_val(bits, &xh) / Float::with_val(bits, m[r - 1]);
        let n = u.clone().floor().to_f64() as u64;
        let d = Float::with_val(bits, tau.prefix(n)) - eval_main_k_at(poly, &u);
        term *= d;
        acc += term;
    }
    Ok(acc * Float::with_val(bits, r as u32))
}

/// CSV of n, S(n), Δ(n + 1/2).
pub fn dump_delta_csv(
    path: &Path,
    table: &MultiSumTable,
    mm: &MultiMainTerm,
    from: u64,
    to: u64,
    bits: u32,
) -> Result<()> {
    if from < 1 || to > table.limit || from > to {
        return Err(DmError::usage("range", "need 1 <= from <= to <= table limit"));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "n,S,delta")?;
    for n in from..=to {
        let d = delta_rk_eval(n as f64 + 0.5, table, mm, bits)?;
        writeln!(out, "{n},{},{:.6e}", table.value(n), d.to_f64())?;
    }
    Ok(())
}
