//! Smallest-prime-factor sieve, factorization, and Piltz divisor tables.
//!
//! Everything downstream consumes these: τ_k(n) is assembled from the
//! factorization as Π binom(ν_i + k - 1, k - 1), and the summatory
//! function D_k(n) is kept as an exact 128-bit prefix sum.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DmError, Result};

/// Smallest-prime-factor table for 2 ≤ n ≤ limit, built with a linear sieve.
#[derive(Debug, Clone)]
pub struct FactorSieve {
    pub limit: u64,
    spf: Vec<u32>,
    primes: Vec<u32>,
}

impl FactorSieve {
    pub fn spf(&self, n: u64) -> u64 {
        self.spf[n as usize] as u64
    }

    pub fn primes(&self) -> &[u32] {
        &self.primes
    }

    pub fn is_prime(&self, n: u64) -> bool {
        n >= 2 && self.spf[n as usize] as u64 == n
    }
}

/// Canonical factorization, primes strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredInteger {
    pub n: u64,
    pub factors: Vec<(u64, u32)>,
}

pub fn build_factor_sieve(limit: u64) -> Result<FactorSieve> {
    if limit < 2 {
        return Err(DmError::usage("limit", "factor sieve needs limit >= 2"));
    }
    if limit > u32::MAX as u64 {
        return Err(DmError::usage("limit", "sieve limited to 32-bit n"));
    }
    let n = limit as usize + 1;
    let mut spf: Vec<u32> = Vec::new();
    spf.try_reserve_exact(n).map_err(|_| DmError::Allocation {
        bytes: 4 * n as u64 + 4 * (n as u64 / 10),
    })?;
    spf.resize(n, 0);
    let mut primes: Vec<u32> = Vec::new();
    for i in 2..n {
        if spf[i] == 0 {
            spf[i] = i as u32;
            primes.push(i as u32);
        }
        for &p in &primes {
            let ip = i * p as usize;
            if p > spf[i] || ip >= n {
                break;
            }
            spf[ip] = p;
        }
    }
    Ok(FactorSieve {
        limit,
        spf,
        primes,
    })
}

pub fn factorize(n: u64, sieve: &FactorSieve) -> Result<FactoredInteger> {
    if n < 1 || n > sieve.limit {
        return Err(DmError::OutOfRange(format!(
            "factorize({n}) outside [1, {}]",
            sieve.limit
        )));
    }
    let mut factors = Vec::new();
    let mut m = n;
    while m > 1 {
        let p = sieve.spf(m);
        let mut e = 0u32;
        while m % p == 0 {
            m /= p;
            e += 1;
        }
        factors.push((p, e));
    }
    Ok(FactoredInteger { n, factors })
}

/// binom(nu + k - 1, k - 1) with overflow detection.
pub fn tau_k_prime_power(nu: u32, k: u32) -> Result<u64> {
    // Multiply/divide alternately; intermediate stays exact since
    // prod of j consecutive integers is divisible by j!.
    let mut acc: u64 = 1;
    for j in 1..=(k - 1) as u64 {
        acc = acc
            .checked_mul(nu as u64 + j)
            .ok_or_else(|| DmError::Overflow {
                context: format!("tau_{k}(p^{nu})"),
            })?;
        acc /= j;
    }
    Ok(acc)
}

pub fn tau_k_of_factored(f: &FactoredInteger, k: u32) -> Result<u64> {
    let mut acc: u64 = 1;
    for &(_, e) in &f.factors {
        let t = tau_k_prime_power(e, k)?;
        acc = acc.checked_mul(t).ok_or_else(|| DmError::Overflow {
            context: format!("tau_{k}({})", f.n),
        })?;
    }
    Ok(acc)
}

/// τ_k of a product n_1 ⋯ n_r given the factorizations of the factors,
/// merging exponents rather than sieving to the product.
pub fn tau_k_of_product(parts: &[&FactoredInteger], k: u32) -> Result<u64> {
    let mut merged: Vec<(u64, u32)> = Vec::new();
    for f in parts {
        for &(p, e) in &f.factors {
            match merged.iter_mut().find(|(q, _)| *q == p) {
                Some((_, acc)) => *acc += e,
                None => merged.push((p, e)),
            }
        }
    }
    let mut acc: u64 = 1;
    for &(_, e) in &merged {
        let t = tau_k_prime_power(e, k)?;
        acc = acc.checked_mul(t).ok_or_else(|| DmError::Overflow {
            context: format!("tau_{k} of merged product"),
        })?;
    }
    Ok(acc)
}

/// τ_k values and exact summatory prefix sums D_k(n) for n ≤ limit.
#[derive(Debug, Clone)]
pub struct TauTable {
    pub k: u32,
    pub limit: u64,
    tau: Vec<u64>,
    prefix: Vec<i128>,
}

impl TauTable {
    pub fn tau(&self, n: u64) -> u64 {
        self.tau[n as usize]
    }

    /// D_k(n) = Σ_{m≤n} τ_k(m).
    pub fn prefix(&self, n: u64) -> i128 {
        self.prefix[n as usize]
    }

    pub fn tau_slice(&self) -> &[u64] {
        &self.tau
    }
}

pub fn build_tau_table(limit: u64, k: u32, sieve: &FactorSieve) -> Result<TauTable> {
    if k < 2 {
        return Err(DmError::usage("k", "tau table needs k >= 2"));
    }
    if limit > sieve.limit {
        return Err(DmError::OutOfRange(format!(
            "tau table limit {limit} exceeds sieve limit {}",
            sieve.limit
        )));
    }
    let n = limit as usize + 1;
    let mut tau: Vec<u64> = Vec::new();
    tau.try_reserve_exact(n).map_err(|_| DmError::Allocation {
        bytes: 24 * n as u64,
    })?;
    tau.resize(n, 0);
    if limit >= 1 {
        tau[1] = 1;
    }
    // Multiplicative fill: peel the smallest prime power from n.
    for m in 2..n {
        let p = sieve.spf(m as u64);
        let mut rest = m as u64;
        let mut e = 0u32;
        while rest % p == 0 {
            rest /= p;
            e += 1;
        }
        let t = tau_k_prime_power(e, k)?;
        tau[m] = tau[rest as usize]
            .checked_mul(t)
            .ok_or_else(|| DmError::Overflow {
                context: format!("tau_{k}({m})"),
            })?;
    }
    let mut prefix: Vec<i128> = vec![0; n];
    let mut acc: i128 = 0;
    for m in 1..n {
        acc = acc
            .checked_add(tau[m] as i128)
            .ok_or_else(|| DmError::Overflow {
                context: format!("D_{k} prefix at {m}"),
            })?;
        prefix[m] = acc;
    }
    Ok(TauTable {
        k,
        limit,
        tau,
        prefix,
    })
}

/// D_k(⌊y⌋); 0 for y < 1.
pub fn summatory(table: &TauTable, y: f64) -> Result<i128> {
    if y < 1.0 {
        return Ok(0);
    }
    let n = y.floor() as u64;
    if n > table.limit {
        return Err(DmError::OutOfRange(format!(
            "summatory({y}) beyond table limit {}",
            table.limit
        )));
    }
    Ok(table.prefix(n))
}

const TAU_CACHE_MAGIC: &[u8; 4] = b"DMT1";

/// Binary cache: magic "DMT1", then k and limit as little-endian u64,
/// then raw τ values; the prefix is recomputed on load.
pub fn save_tau_cache(table: &TauTable, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(TAU_CACHE_MAGIC)?;
    f.write_all(&(table.k as u64).to_le_bytes())?;
    f.write_all(&table.limit.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * table.limit as usize);
    for n in 1..=table.limit {
        buf.extend_from_slice(&table.tau(n).to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_tau_cache(path: &Path) -> Result<TauTable> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != TAU_CACHE_MAGIC {
        return Err(DmError::BadCache("wrong magic".into()));
    }
    let mut w = [0u8; 8];
    f.read_exact(&mut w)?;
    let k = u64::from_le_bytes(w) as u32;
    f.read_exact(&mut w)?;
    let limit = u64::from_le_bytes(w);
    let mut tau = vec![0u64; limit as usize + 1];
    let mut buf = vec![0u8; 8 * limit as usize];
    f.read_exact(&mut buf)?;
    for n in 1..=limit as usize {
        tau[n] = u64::from_le_bytes(buf[8 * (n - 1)..8 * n].try_into().unwrap());
    }
    let mut prefix = vec![0i128; limit as usize + 1];
    let mut acc: i128 = 0;
    for n in 1..=limit as usize {
        acc += tau[n] as i128;
        prefix[n] = acc;
    }
    Ok(TauTable {
        k,
        limit,
        tau,
        prefix,
    })
}
