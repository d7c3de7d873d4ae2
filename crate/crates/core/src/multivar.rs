//! The multiplicative r-variable kernel f_{r,k} defined by
//! Σ τ_k(n_1⋯n_r)/Πn_j^{s_j} = Πζ^k(s_j) · F_{r,k}(s), with F the
//! Dirichlet series of f.  Local coefficients are extracted exactly from
//! the Euler factor; f is assembled multiplicatively; the support (f ≠ 0)
//! is enumerated by prime blocks, which is what makes the downstream sums
//! feasible: a prime in the support must hit at least two coordinates.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DmError, Result};
use crate::sieve::{factorize, tau_k_of_product, tau_k_prime_power, FactorSieve, TauTable};

/// Prime-independent values c(ν) = f_{r,k}(p^{ν_1},…,p^{ν_r}) on the dense
/// exponent box 0 ≤ ν_j ≤ max_exp.
#[derive(Debug, Clone)]
pub struct LocalCoeffTable {
    pub r: usize,
    pub k: u32,
    pub max_exp: u32,
    c: Vec<i128>,
}

const LOCAL_BOX_BUDGET: usize = 1 << 24;

impl LocalCoeffTable {
    fn stride(&self) -> usize {
        self.max_exp as usize + 1
    }

    fn index(&self, nu: &[u32]) -> usize {
        debug_assert_eq!(nu.len(), self.r);
        let mut idx = 0usize;
        for &e in nu {
            idx = idx * self.stride() + e as usize;
        }
        idx
    }

    pub fn coeff(&self, nu: &[u32]) -> Result<i128> {
        if nu.iter().any(|&e| e > self.max_exp) {
            return Err(DmError::OutOfRange(format!(
                "exponent tuple {nu:?} exceeds max_exp {}",
                self.max_exp
            )));
        }
        Ok(self.c[self.index(nu)])
    }

    /// Non-zero blocks (excluding the all-zero tuple) grouped by their
    /// largest exponent; used by the support enumeration.
    pub fn nonzero_blocks_by_max_exp(&self) -> Vec<Vec<(Vec<u32>, i128)>> {
        let mut by_max: Vec<Vec<(Vec<u32>, i128)>> = vec![Vec::new(); self.max_exp as usize + 1];
        let mut nu = vec![0u32; self.r];
        loop {
            let c = self.c[self.index(&nu)];
            let maxe = *nu.iter().max().unwrap();
            if c != 0 && maxe > 0 {
                by_max[maxe as usize].push((nu.clone(), c));
            }
            // odometer
            let mut i = self.r;
            loop {
                if i == 0 {
                    return by_max;
                }
                i -= 1;
                if nu[i] < self.max_exp {
                    nu[i] += 1;
                    for e in nu.iter_mut().skip(i + 1) {
                        *e = 0;
                    }
                    break;
                }
            }
        }
    }
}

/// Extract c(ν) on the box: the local Euler factor is
/// (Π_j (1-u_j))^k · Σ_ν τ_k(p^{Σν}) Π u_j^{ν_j}, truncated multiplication
/// along each axis is exact for coefficients inside the box.
pub fn local_coefficients(r: usize, k: u32, max_exp: u32) -> Result<LocalCoeffTable> {
    if r < 2 || k < 2 {
        return Err(DmError::usage("r/k", "local coefficients need r >= 2, k >= 2"));
    }
    let stride = max_exp as usize + 1;
    let size = stride
        .checked_pow(r as u32)
        .filter(|&s| s <= LOCAL_BOX_BUDGET)
        .ok_or_else(|| DmError::Budget(format!("exponent box {stride}^{r} too large")))?;

    // base series: b[ν] = τ_k(p^{ν_1+…+ν_r})
    let mut c = vec![0i128; size];
    let mut nu = vec![0u32; r];
    let mut idx = 0usize;
    loop {
        let total: u32 = nu.iter().sum();
        c[idx] = tau_k_prime_power(total, k)? as i128;
        let mut i = r;
        let mut done = true;
        while i > 0 {
            i -= 1;
            if nu[i] < max_exp {
                nu[i] += 1;
                for e in nu.iter_mut().skip(i + 1) {
                    *e = 0;
                }
                done = false;
                break;
            }
        }
        if done {
            break;
        }
        idx = 0;
        for &e in &nu {
            idx = idx * stride + e as usize;
        }
    }

    // binomial row of (1-u)^k
    let mut binom: Vec<i128> = Vec::with_capacity(k as usize + 1);
    let mut acc: i128 = 1;
    binom.push(1);
    for i in 1..=k as u64 {
        acc = acc * (k as i128 - i as i128 + 1) / i as i128;
        binom.push(if i % 2 == 0 { acc } else { -acc });
    }

    // multiply by (1-u_j)^k along each axis
    let axis_stride = |axis: usize| stride.pow((r - 1 - axis) as u32);
    for axis in 0..r {
        let st = axis_stride(axis);
        let mut out = vec![0i128; size];
        for (flat, val) in c.iter().enumerate() {
            if *val == 0 {
                continue;
            }
            let e = (flat / st) % stride;
            for (i, &bi) in binom.iter().enumerate().take((max_exp as usize - e).min(k as usize) + 1)
            {
                let target = flat + i * st;
                let add = val.checked_mul(bi).ok_or_else(|| DmError::Overflow {
                    context: "local coefficient extraction".into(),
                })?;
                out[target] = out[target].checked_add(add).ok_or_else(|| DmError::Overflow {
                    context: "local coefficient extraction".into(),
                })?;
            }
        }
        c = out;
    }

    Ok(LocalCoeffTable { r, k, max_exp, c })
}

/// f_{r,k}(m_1,…,m_r): product over primes of the local coefficient at the
/// exponent tuple of p in (m_1,…,m_r).
pub fn f_eval(m: &[u64], sieve: &FactorSieve, lct: &LocalCoeffTable) -> Result<i128> {
    if m.len() != lct.r {
        return Err(DmError::usage("m", "tuple length must equal r"));
    }
    let mut exps: HashMap<u64, Vec<u32>> = HashMap::new();
    for (j, &mj) in m.iter().enumerate() {
        let fac = factorize(mj, sieve)?;
        for (p, e) in fac.factors {
            exps.entry(p).or_insert_with(|| vec![0; m.len()])[j] = e;
        }
    }
    let mut acc: i128 = 1;
    for nu in exps.values() {
        let c = lct.coeff(nu)?;
        if c == 0 {
            return Ok(0);
        }
        acc = acc.checked_mul(c).ok_or_else(|| DmError::Overflow {
            context: "f_eval product".into(),
        })?;
    }
    Ok(acc)
}

/// Both sides of the cancellation identity behind the vanishing of pure
/// prime-power terms: returns |LHS - RHS| at the point t.
pub fn lemma_identity_eval(r: usize, k: u32, t: &[f64]) -> f64 {
    assert_eq!(t.len(), r);
    assert!(t.iter().all(|&v| v.abs() > 0.0 && v.abs() < 1.0));
    let pow_k = |v: f64| (1.0 - v).powi(k as i32);
    let full: f64 = t.iter().map(|&v| pow_k(v)).product();
    let mut lhs = -((r as f64) - 1.0) * full;
    for j in 0..r {
        let partial: f64 = t
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, &v)| pow_k(v))
            .product();
        lhs += partial;
    }

    // RHS: 1 - Σ_{j≥2} (j-1) Σ_{|a|=j} Σ_{b_i ∈ 1..k} (-1)^{Σb} Π C(k,b_i) t_a^b,
    // exponents ranging independently (with strictly increasing b the two
    // sides already disagree at r = 2, k = 3, t = (1/2, 1/2))
    let binom = |n: u32, m: u32| -> f64 {
        let mut acc = 1f64;
        for i in 0..m {
            acc = acc * (n - i) as f64 / (i + 1) as f64;
        }
        acc
    };
    let mut rhs = 1.0;
    // subsets of {0..r-1} of size >= 2 via bitmask (r is small)
    for mask in 0u32..(1 << r) {
        let j = mask.count_ones() as usize;
        if j < 2 {
            continue;
        }
        let vars: Vec<usize> = (0..r).filter(|i| mask >> i & 1 == 1).collect();
        let mut b = vec![1u32; j];
        loop {
            let sign = if b.iter().sum::<u32>() % 2 == 0 { 1.0 } else { -1.0 };
            let mut term = sign * (j as f64 - 1.0);
            for (idx, &bv) in b.iter().enumerate() {
                term *= binom(k, bv) * t[vars[idx]].powi(bv as i32);
            }
            rhs -= term;
            let mut i = j;
            let mut done = true;
            while i > 0 {
                i -= 1;
                if b[i] < k {
                    b[i] += 1;
                    for l in b.iter_mut().skip(i + 1) {
                        *l = 1;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
    }
    (lhs - rhs).abs()
}

/// The support of f up to `limit`: every ordered tuple with all m_j ≤ limit
/// and f(m) ≠ 0, stored flat together with the exact f values.
#[derive(Debug, Clone)]
pub struct Support {
    pub r: usize,
    pub k: u32,
    pub limit: u64,
    ms: Vec<u64>,
    fs: Vec<i128>,
}

impl Support {
    pub fn len(&self) -> usize {
        self.fs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fs.is_empty()
    }

    pub fn tuple(&self, i: usize) -> &[u64] {
        &self.ms[i * self.r..(i + 1) * self.r]
    }

    pub fn f(&self, i: usize) -> i128 {
        self.fs[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u64], i128)> + '_ {
        (0..self.len()).map(move |i| (self.tuple(i), self.f(i)))
    }
}

const SUPPORT_BUDGET: usize = 80_000_000;

/// Enumerate the support by choosing, prime by prime, a non-zero local
/// block; pruning works because the cheapest block multiplies two
/// coordinates by p.
pub fn enumerate_support(limit: u64, sieve: &FactorSieve, lct: &LocalCoeffTable) -> Result<Support> {
    if limit > sieve.limit {
        return Err(DmError::OutOfRange(format!(
            "support limit {limit} exceeds sieve limit {}",
            sieve.limit
        )));
    }
    let blocks = lct.nonzero_blocks_by_max_exp();
    let primes = sieve.primes();
    let r = lct.r;
    let mut out = Support {
        r,
        k: lct.k,
        limit,
        ms: Vec::new(),
        fs: Vec::new(),
    };

    struct Rec<'a> {
        limit: u64,
        primes: &'a [u32],
        blocks: &'a [Vec<(Vec<u32>, i128)>],
        out_ms: Vec<u64>,
        out_fs: Vec<i128>,
        r: usize,
    }

    impl Rec<'_> {
        fn second_smallest(m: &[u64]) -> u64 {
            let mut a = u64::MAX;
            let mut b = u64::MAX;
            for &v in m {
                if v < a {
                    b = a;
                    a = v;
                } else if v < b {
                    b = v;
                }
            }
            b
        }

        fn go(&mut self, pi: usize, m: &mut Vec<u64>, f: i128) -> Result<()> {
            self.out_ms.extend_from_slice(m);
            self.out_fs.push(f);
            if self.out_fs.len() > SUPPORT_BUDGET / self.r {
                return Err(DmError::Budget("support enumeration".into()));
            }
            for q in pi..self.primes.len() {
                let p = self.primes[q] as u64;
                // a non-zero block touches >= 2 coordinates
                if p.saturating_mul(Self::second_smallest(m)) > self.limit {
                    break;
                }
                // largest usable exponent for this prime
                let mut e_max = 0u32;
                let mut pw = 1u64;
                while pw <= self.limit / p {
                    pw *= p;
                    e_max += 1;
                }
                let e_max = e_max.min(self.blocks.len() as u32 - 1);
                let mut scratch = vec![0u64; self.r];
                for band in 1..=e_max as usize {
                    for (nu, c) in &self.blocks[band] {
                        let mut ok = true;
                        for j in 0..self.r {
                            let mut factor = 1u64;
                            let mut over = false;
                            for _ in 0..nu[j] {
                                factor = match factor.checked_mul(p) {
                                    Some(v) if m[j].saturating_mul(v) <= self.limit => v,
                                    _ => {
                                        over = true;
                                        break;
                                    }
                                };
                            }
                            if over {
                                ok = false;
                                break;
                            }
                            scratch[j] = m[j] * factor;
                        }
                        if !ok {
                            continue;
                        }
                        let nf = f.checked_mul(*c).ok_or_else(|| DmError::Overflow {
                            context: "support f product".into(),
                        })?;
                        let mut next = scratch.clone();
                        self.go(q + 1, &mut next, nf)?;
                    }
                }
            }
            Ok(())
        }
    }

    let mut rec = Rec {
        limit,
        primes,
        blocks: &blocks,
        out_ms: Vec::new(),
        out_fs: Vec::new(),
        r,
    };
    let mut ones = vec![1u64; r];
    rec.go(0, &mut ones, 1)?;
    out.ms = rec.out_ms;
    out.fs = rec.out_fs;
    Ok(out)
}

/// τ_k(n_1⋯n_r) = Σ_{n_j = m_j d_j} f_{r,k}(m) Π τ_k(d_j), checked exactly.
pub fn convolution_check(
    n: &[u64],
    k: u32,
    sieve: &FactorSieve,
    lct: &LocalCoeffTable,
    tau: &TauTable,
) -> Result<bool> {
    let facs: Vec<_> = n
        .iter()
        .map(|&v| factorize(v, sieve))
        .collect::<Result<Vec<_>>>()?;
    let lhs = tau_k_of_product(&facs.iter().collect::<Vec<_>>(), k)? as i128;

    let divisor_lists: Vec<Vec<u64>> = facs
        .iter()
        .map(|f| {
            let mut divs = vec![1u64];
            for &(p, e) in &f.factors {
                let mut next = Vec::with_capacity(divs.len() * (e as usize + 1));
                for &d in &divs {
                    let mut pw = 1u64;
                    for _ in 0..=e {
                        next.push(d * pw);
                        pw = pw.saturating_mul(p);
                    }
                }
                divs = next;
            }
            divs
        })
        .collect();

    let r = n.len();
    let mut rhs: i128 = 0;
    let mut idx = vec![0usize; r];
    loop {
        let m: Vec<u64> = (0..r).map(|j| divisor_lists[j][idx[j]]).collect();
        let fv = f_eval(&m, sieve, lct)?;
        if fv != 0 {
            let mut term = fv;
            for j in 0..r {
                let d = n[j] / m[j];
                term = term
                    .checked_mul(tau.tau(d) as i128)
                    .ok_or_else(|| DmError::Overflow {
                        context: "convolution rhs".into(),
                    })?;
            }
            rhs = rhs.checked_add(term).ok_or_else(|| DmError::Overflow {
                context: "convolution rhs".into(),
            })?;
        }
        let mut j = r;
        let mut done = true;
        while j > 0 {
            j -= 1;
            if idx[j] + 1 < divisor_lists[j].len() {
                idx[j] += 1;
                for l in idx.iter_mut().skip(j + 1) {
                    *l = 0;
                }
                done = false;
                break;
            }
        }
        if done {
            break;
        }
    }
    Ok(lhs == rhs)
}

/// Sweep the whole box n_j ≤ nmax; memoizes f over divisor tuples.
pub fn convolution_box_check(
    nmax: u64,
    r: usize,
    k: u32,
    sieve: &FactorSieve,
    lct: &LocalCoeffTable,
    tau: &TauTable,
) -> Result<bool> {
    let mut f_cache: HashMap<Vec<u64>, i128> = HashMap::new();
    let facs: Vec<_> = (1..=nmax)
        .map(|v| factorize(v, sieve))
        .collect::<Result<Vec<_>>>()?;
    let divisors: Vec<Vec<u64>> = (1..=nmax)
        .map(|v| {
            let mut d: Vec<u64> = (1..=v).filter(|x| v % x == 0).collect();
            d.sort_unstable();
            d
        })
        .collect();

    let mut n = vec![1u64; r];
    loop {
        let nfacs: Vec<_> = n.iter().map(|&v| &facs[(v - 1) as usize]).collect();
        let lhs = tau_k_of_product(&nfacs, k)? as i128;
        let mut rhs: i128 = 0;
        let mut idx = vec![0usize; r];
        loop {
            let m: Vec<u64> = (0..r)
                .map(|j| divisors[(n[j] - 1) as usize][idx[j]])
                .collect();
            let fv = match f_cache.get(&m) {
                Some(&v) => v,
                None => {
                    let v = f_eval(&m, sieve, lct)?;
                    f_cache.insert(m.clone(), v);
                    v
                }
            };
            if fv != 0 {
                let mut term = fv;
                for j in 0..r {
                    term *= tau.tau(n[j] / m[j]) as i128;
                }
                rhs += term;
            }
            let mut j = r;
            let mut done = true;
            while j > 0 {
                j -= 1;
                if idx[j] + 1 < divisors[(n[j] - 1) as usize].len() {
                    idx[j] += 1;
                    for l in idx.iter_mut().skip(j + 1) {
                        *l = 0;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
        if lhs != rhs {
            return Ok(false);
        }
        let mut j = r;
        let mut done = true;
        while j > 0 {
            j -= 1;
            if n[j] < nmax {
                n[j] += 1;
                for l in n.iter_mut().skip(j + 1) {
                    *l = 1;
                }
                done = false;
                break;
            }
        }
        if done {
            return Ok(true);
        }
    }
}

/// |Σ_{n_j≤X} τ_k(Πn_j)/Πn_j^{s_j} − Πζ_X^k(s_j)·F_X(s)| with both sides
/// truncated at X.
pub fn dirichlet_factorization_residual(
    s: &[f64],
    x_cut: u64,
    sieve: &FactorSieve,
    lct: &LocalCoeffTable,
) -> Result<f64> {
    let r = s.len();
    if r != lct.r {
        return Err(DmError::usage("s", "length must equal r"));
    }
    if s.iter().any(|&v| v < 1.5) {
        return Err(DmError::usage("s", "need s_j >= 1.5 for a meaningful truncation"));
    }
    let total = (x_cut as f64).powi(r as i32);
    if total > 2e8 {
        return Err(DmError::Budget(format!("{x_cut}^{r} truncated Dirichlet sum")));
    }

    let facs: Vec<_> = (1..=x_cut)
        .map(|v| factorize(v, sieve))
        .collect::<Result<Vec<_>>>()?;
    let k = lct.k;

    // left side
    let mut lhs = crate::hp::KahanF64::new();
    let mut n = vec![1u64; r];
    loop {
        let parts: Vec<_> = n.iter().map(|&v| &facs[(v - 1) as usize]).collect();
        let t = tau_k_of_product(&parts, k)? as f64;
        let mut denom = 1f64;
        for j in 0..r {
            denom *= (n[j] as f64).powf(s[j]);
        }
        lhs.add(t / denom);
        let mut j = r;
        let mut done = true;
        while j > 0 {
            j -= 1;
            if n[j] < x_cut {
                n[j] += 1;
                for l in n.iter_mut().skip(j + 1) {
                    *l = 1;
                }
                done = false;
                break;
            }
        }
        if done {
            break;
        }
    }

    // right side: truncated zeta powers and truncated F over the support
    let mut rhs = 1f64;
    for &sj in s {
        let mut z = crate::hp::KahanF64::new();
        for n in 1..=x_cut {
            z.add((n as f64).powf(-sj));
        }
        rhs *= z.value().powi(k as i32);
    }
    let support = enumerate_support(x_cut, sieve, lct)?;
    let mut fsum = crate::hp::KahanF64::new();
    for (m, fv) in support.iter() {
        let mut denom = 1f64;
        for j in 0..r {
            denom *= (m[j] as f64).powf(s[j]);
        }
        fsum.add(fv as f64 / denom);
    }
    rhs *= fsum.value();

    Ok((lhs.value() - rhs).abs())
}

#[derive(Serialize, Deserialize)]
struct LocalCoeffCache {
    r: usize,
    k: u32,
    max_exp: u32,
    entries: Vec<(Vec<u32>, String)>,
}

/// JSON cache of the non-zero local coefficients.
pub fn save_local_coeffs(lct: &LocalCoeffTable, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut nu = vec![0u32; lct.r];
    loop {
        let c = lct.c[lct.index(&nu)];
        if c != 0 {
            entries.push((nu.clone(), c.to_string()));
        }
        let mut i = lct.r;
        let mut done = true;
        while i > 0 {
            i -= 1;
            if nu[i] < lct.max_exp {
                nu[i] += 1;
                for e in nu.iter_mut().skip(i + 1) {
                    *e = 0;
                }
                done = false;
                break;
            }
        }
        if done {
            break;
        }
    }
    let doc = LocalCoeffCache {
        r: lct.r,
        k: lct.k,
        max_exp: lct.max_exp,
        entries,
    };
    std::fs::write(path, serde_json::to_string(&doc)?)?;
    Ok(())
}

pub fn load_local_coeffs(path: &Path) -> Result<LocalCoeffTable> {
    let doc: LocalCoeffCache = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let stride = doc.max_exp as usize + 1;
    let size = stride.pow(doc.r as u32);
    let mut lct = LocalCoeffTable {
        r: doc.r,
        k: doc.k,
        max_exp: doc.max_exp,
        c: vec![0i128; size],
    };
    for (nu, v) in doc.entries {
        let val: i128 = v
            .parse()
            .map_err(|_| DmError::BadCache("non-integer coefficient".into()))?;
        let idx = lct.index(&nu);
        lct.c[idx] = val;
    }
    Ok(lct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sieve::{build_factor_sieve, build_tau_table};

    fn setup(limit: u64) -> FactorSieve {
        build_factor_sieve(limit).unwrap()
    }

    #[test]
    fn local_coeffs_r2_k3() {
        let lct = local_coefficients(2, 3, 6).unwrap();
        assert_eq!(lct.coeff(&[0, 0]).unwrap(), 1);
        assert_eq!(lct.coeff(&[1, 0]).unwrap(), 0);
        assert_eq!(lct.coeff(&[0, 1]).unwrap(), 0);
        assert_eq!(lct.coeff(&[1, 1]).unwrap(), -3);
        assert_eq!(lct.coeff(&[2, 1]).unwrap(), 1);
        assert_eq!(lct.coeff(&[1, 2]).unwrap(), 1);
        // pure terms vanish at every exponent in the box
        for e in 1..=6 {
            assert_eq!(lct.coeff(&[e, 0]).unwrap(), 0, "pure term e={e}");
        }
    }

    #[test]
    fn local_coeffs_symmetric() {
        for (r, k) in [(2usize, 3u32), (2, 4), (3, 3)] {
            let me = if r == 2 { 8 } else { 5 };
            let lct = local_coefficients(r, k, me).unwrap();
            let mut nu = vec![0u32; r];
            loop {
                let mut rev = nu.clone();
                rev.reverse();
                assert_eq!(lct.coeff(&nu).unwrap(), lct.coeff(&rev).unwrap());
                let mut i = r;
                let mut done = true;
                while i > 0 {
                    i -= 1;
                    if nu[i] < me {
                        nu[i] += 1;
                        for e in nu.iter_mut().skip(i + 1) {
                            *e = 0;
                        }
                        done = false;
                        break;
                    }
                }
                if done {
                    break;
                }
            }
        }
    }

    #[test]
    fn lemma_identity_examples() {
        assert!(lemma_identity_eval(2, 3, &[0.5, 0.5]) < 1e-12);
        // t -> 0: both sides -> 1; use a tiny value
        assert!(lemma_identity_eval(2, 3, &[1e-9, 1e-9]) < 1e-7);
        let mut st = 987654321u64;
        let mut next = || {
            st ^= st << 13;
            st ^= st >> 7;
            st ^= st << 17;
            (st % 1_000_000) as f64 / 1_000_001.0 * 1.8 - 0.9
        };
        let mut max_res = 0f64;
        for r in [2usize, 3] {
            for k in [3u32, 4] {
                for _ in 0..25 {
                    let t: Vec<f64> = (0..r)
                        .map(|_| {
                            let mut v = next();
                            if v == 0.0 {
                                v = 0.1;
                            }
                            v
                        })
                        .collect();
                    max_res = max_res.max(lemma_identity_eval(r, k, &t));
                }
            }
        }
        assert!(max_res < 1e-10, "max residual {max_res}");
    }

    #[test]
    fn f_eval_examples() {
        let sieve = setup(1000);
        let lct = local_coefficients(2, 3, 10).unwrap();
        assert_eq!(f_eval(&[1, 1], &sieve, &lct).unwrap(), 1);
        assert_eq!(f_eval(&[2, 3], &sieve, &lct).unwrap(), 0);
        assert_eq!(f_eval(&[12, 18], &sieve, &lct).unwrap(), 1); // c(2,1)·c(1,2)
    }

    #[test]
    fn f_eval_symmetric_and_pure_vanishing() {
        let sieve = setup(1000);
        let lct = local_coefficients(2, 3, 10).unwrap();
        for m in 2..=1000u64 {
            assert_eq!(f_eval(&[m, 1], &sieve, &lct).unwrap(), 0, "pure m={m}");
        }
        let lct3 = local_coefficients(3, 3, 9).unwrap();
        let mut st = 5550123u64;
        for _ in 0..100 {
            st ^= st << 13;
            st ^= st >> 7;
            st ^= st << 17;
            let a = st % 500 + 1;
            let b = (st >> 11) % 500 + 1;
            let c = (st >> 23) % 500 + 1;
            let v1 = f_eval(&[a, b, c], &sieve, &lct3).unwrap();
            let v2 = f_eval(&[c, a, b], &sieve, &lct3).unwrap();
            let v3 = f_eval(&[b, c, a], &sieve, &lct3).unwrap();
            assert!(v1 == v2 && v2 == v3);
        }
    }

    #[test]
    fn support_small_box() {
        let sieve = setup(100);
        let lct = local_coefficients(2, 3, 10).unwrap();
        let sup = enumerate_support(4, &sieve, &lct).unwrap();
        let mut got: Vec<(Vec<u64>, i128)> =
            sup.iter().map(|(m, f)| (m.to_vec(), f)).collect();
        got.sort();
        // exhaustive scan oracle
        let mut expect = Vec::new();
        for a in 1..=4u64 {
            for b in 1..=4u64 {
                let f = f_eval(&[a, b], &sieve, &lct).unwrap();
                if f != 0 {
                    expect.push((vec![a, b], f));
                }
            }
        }
        expect.sort();
        assert_eq!(got, expect);
        // the spec's listing: (4,4) only if c(2,2) != 0 — c(2,2) = 0 for k = 3
        assert_eq!(lct.coeff(&[2, 2]).unwrap(), 0);
        assert!(!got.iter().any(|(m, _)| m == &vec![4, 4]));
        assert!(got.contains(&(vec![2, 2], -3)));
    }

    #[test]
    fn support_limit_one() {
        let sieve = setup(100);
        let lct = local_coefficients(2, 3, 10).unwrap();
        let sup = enumerate_support(1, &sieve, &lct).unwrap();
        assert_eq!(sup.len(), 1);
        assert_eq!(sup.tuple(0), &[1, 1]);
    }

    #[test]
    fn support_count_matches_exhaustive_1e3() {
        let sieve = setup(1000);
        let lct = local_coefficients(2, 3, 10).unwrap();
        let sup = enumerate_support(1000, &sieve, &lct).unwrap();
        let mut count = 0usize;
        for a in 1..=1000u64 {
            for b in 1..=1000u64 {
                if f_eval(&[a, b], &sieve, &lct).unwrap() != 0 {
                    count += 1;
                }
            }
        }
        assert_eq!(sup.len(), count);
    }

    #[test]
    fn convolution_small_cases() {
        let sieve = setup(1000);
        let lct = local_coefficients(2, 3, 10).unwrap();
        let tau = build_tau_table(1000, 3, &sieve).unwrap();
        assert!(convolution_check(&[2, 2], 3, &sieve, &lct, &tau).unwrap());
        for n in 1..=50u64 {
            assert!(convolution_check(&[1, n], 3, &sieve, &lct, &tau).unwrap());
        }
    }

    #[test]
    fn convolution_box_60() {
        let sieve = setup(100);
        for k in [3u32, 4] {
            let lct = local_coefficients(2, k, 8).unwrap();
            let tau = build_tau_table(100, k, &sieve).unwrap();
            assert!(convolution_box_check(60, 2, k, &sieve, &lct, &tau).unwrap());
        }
    }

    #[test]
    fn dirichlet_residual_shrinks() {
        let sieve = setup(2048).limit; // just to assert construction works
        assert_eq!(sieve, 2048);
        let sieve = setup(2048);
        let lct = local_coefficients(2, 3, 12).unwrap();
        let r32 = dirichlet_factorization_residual(&[2.0, 2.0], 32, &sieve, &lct).unwrap();
        let r256 = dirichlet_factorization_residual(&[2.0, 2.0], 256, &sieve, &lct).unwrap();
        assert!(r256 < r32, "r32 = {r32}, r256 = {r256}");
        let rfast = dirichlet_factorization_residual(&[10.0, 10.0], 100, &sieve, &lct).unwrap();
        assert!(rfast < 1e-6);
    }

    #[test]
    fn local_coeff_cache_roundtrip() {
        let lct = local_coefficients(2, 3, 8).unwrap();
        let dir = std::env::temp_dir().join("dm_lct_cache_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("lct23.json");
        save_local_coeffs(&lct, &path).unwrap();
        let back = load_local_coeffs(&path).unwrap();
        assert_eq!(back.r, 2);
        assert_eq!(back.k, 3);
        for a in 0..=8u32 {
            for b in 0..=8u32 {
                assert_eq!(lct.coeff(&[a, b]).unwrap(), back.coeff(&[a, b]).unwrap());
            }
        }
    }
}
