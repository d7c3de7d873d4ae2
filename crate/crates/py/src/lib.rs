//! Python bindings for the core crate: divisor tables, the multiplicative
//! kernel, error-term evaluation, and the series constants.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use divisor_moments::delta::{build_multisum_table, multisum_fast, MultiSumTable};
use divisor_moments::hp::bits_for_digits;
use divisor_moments::mainterm::{
    d_coefficients, expand_main_product, residue_main_poly, MultiMainTerm,
};
use divisor_moments::multivar::{
    enumerate_support, f_eval, lemma_identity_eval, local_coefficients,
};
use divisor_moments::sieve::{build_factor_sieve, build_tau_table, factorize, FactorSieve};
use divisor_moments::zeta::zeta_laurent;
use divisor_moments::DmError;

fn err(e: DmError) -> PyErr {
    PyValueError::new_err(format!("[{}] {e}", e.code()))
}

/// τ_k table with factorization access.
#[pyclass]
struct Tau {
    sieve: FactorSieve,
    inner: divisor_moments::sieve::TauTable,
}

#[pymethods]
impl Tau {
    #[new]
    fn new(limit: u64, k: u32) -> PyResult<Self> {
        let sieve = build_factor_sieve(limit).map_err(err)?;
        let inner = build_tau_table(limit, k, &sieve).map_err(err)?;
        Ok(Tau { sieve, inner })
    }

    fn tau(&self, n: u64) -> PyResult<u64> {
        if n == 0 || n > self.inner.limit {
            return Err(PyValueError::new_err("n outside table"));
        }
        Ok(self.inner.tau(n))
    }

    /// Σ_{m<=n} τ_k(m)
    fn summatory(&self, n: u64) -> PyResult<i128> {
        if n > self.inner.limit {
            return Err(PyValueError::new_err("n outside table"));
        }
        Ok(self.inner.prefix(n))
    }

    fn factorize(&self, n: u64) -> PyResult<Vec<(u64, u32)>> {
        let f = factorize(n, &self.sieve).map_err(err)?;
        Ok(f.factors)
    }

    #[getter]
    fn limit(&self) -> u64 {
        self.inner.limit
    }

    #[getter]
    fn k(&self) -> u32 {
        self.inner.k
    }
}

/// Summatory table and truncated main term for the r-variable error term.
#[pyclass]
struct MultiDelta {
    table: MultiSumTable,
    mm: MultiMainTerm,
    bits: u32,
}

#[pymethods]
impl MultiDelta {
    #[new]
    #[pyo3(signature = (r, k, limit, digits=40))]
    fn new(r: usize, k: u32, limit: u64, digits: u32) -> PyResult<Self> {
        let bits = bits_for_digits(digits);
        let sieve = build_factor_sieve(limit).map_err(err)?;
        let tau = build_tau_table(limit, k, &sieve).map_err(err)?;
        let max_exp = if limit >= 2 { limit.ilog2() } else { 1 };
        let lct = local_coefficients(r, k, max_exp).map_err(err)?;
        let support = enumerate_support(limit, &sieve, &lct).map_err(err)?;
        let table = build_multisum_table(limit, &tau, &support, &sieve).map_err(err)?;
        let zl = zeta_laurent(k as usize + 1, digits + 7).map_err(err)?;
        let exp = expand_main_product(k, r, &zl, bits).map_err(err)?;
        let mm = d_coefficients(&exp, &support, digits, bits).map_err(err)?;
        Ok(MultiDelta { table, mm, bits })
    }

    /// S(n) = Σ over the box of τ_k of the coordinate product
    fn summatory(&self, n: u64) -> PyResult<i128> {
        if n > self.table.limit {
            return Err(PyValueError::new_err("n outside table"));
        }
        Ok(self.table.value(n))
    }

    /// Δ(x) = S(⌊x⌋) − main term
    fn delta(&self, x: f64) -> PyResult<f64> {
        divisor_moments::delta::delta_rk_eval(x, &self.table, &self.mm, self.bits)
            .map(|v| v.to_f64())
            .map_err(err)
    }

    /// truncated main-term coefficients d_ℓ
    fn main_coeffs(&self) -> Vec<f64> {
        self.mm.d.iter().map(|c| c.to_f64()).collect()
    }

    #[getter]
    fn tail_estimate(&self) -> f64 {
        self.mm.tail_estimate
    }
}

/// τ_k(n) for a single n.
#[pyfunction]
fn tau_k(n: u64, k: u32) -> PyResult<u64> {
    let sieve = build_factor_sieve(n.max(2)).map_err(err)?;
    let f = factorize(n, &sieve).map_err(err)?;
    divisor_moments::sieve::tau_k_of_factored(&f, k).map_err(err)
}

/// kernel value f_{r,k}(m); zero unless every prime divides two coordinates
#[pyfunction]
fn f_value(m: Vec<u64>, k: u32) -> PyResult<i128> {
    if m.is_empty() {
        return Err(PyValueError::new_err("need at least one coordinate"));
    }
    let top = *m.iter().max().unwrap();
    let sieve = build_factor_sieve(top.max(2)).map_err(err)?;
    let max_exp = if top >= 2 { top.ilog2() } else { 1 };
    let lct = local_coefficients(m.len(), k, max_exp).map_err(err)?;
    f_eval(&m, &sieve, &lct).map_err(err)
}

/// residual of the inclusion–exclusion polynomial identity at t
#[pyfunction]
fn lemma_residual(r: usize, k: u32, t: Vec<f64>) -> PyResult<f64> {
    if t.len() != r {
        return Err(PyValueError::new_err("need one t per variable"));
    }
    Ok(lemma_identity_eval(r, k, &t))
}

/// S(x) for the r-variable divisor sum, built from scratch
#[pyfunction]
fn multisum(x: u64, r: usize, k: u32) -> PyResult<i128> {
    let sieve = build_factor_sieve(x.max(2)).map_err(err)?;
    let tau = build_tau_table(x.max(2), k, &sieve).map_err(err)?;
    let max_exp = if x >= 2 { x.ilog2() } else { 1 };
    let lct = local_coefficients(r, k, max_exp).map_err(err)?;
    let support = enumerate_support(x, &sieve, &lct).map_err(err)?;
    multisum_fast(x, &tau, &support).map_err(err)
}

/// coefficients of the residue polynomial P_{k-1} (constant term first)
#[pyfunction]
#[pyo3(signature = (k, digits=40))]
fn main_poly(k: u32, digits: u32) -> PyResult<Vec<f64>> {
    let zl = zeta_laurent(k as usize + 1, digits + 7).map_err(err)?;
    let p = residue_main_poly(k, &zl, bits_for_digits(digits)).map_err(err)?;
    Ok(p.coeffs.iter().map(|c| c.to_f64()).collect())
}

/// partial Tong constant and its tail estimate
#[pyfunction]
#[pyo3(signature = (n, digits=40))]
fn tong(n: u64, digits: u32) -> PyResult<(f64, f64)> {
    let sieve = build_factor_sieve(n.max(2)).map_err(err)?;
    let tau = build_tau_table(n.max(2), 3, &sieve).map_err(err)?;
    let v = divisor_moments::series::tong_constant(n, &tau, bits_for_digits(digits))
        .map_err(err)?;
    Ok((v.value.to_f64(), v.tail_estimate))
}

#[pymodule]
fn divisor_moments_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tau>()?;
    m.add_class::<MultiDelta>()?;
    m.add_function(wrap_pyfunction!(tau_k, m)?)?;
    m.add_function(wrap_pyfunction!(f_value, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_residual, m)?)?;
    m.add_function(wrap_pyfunction!(multisum, m)?)?;
    m.add_function(wrap_pyfunction!(main_poly, m)?)?;
    m.add_function(wrap_pyfunction!(tong, m)?)?;
    Ok(())
}
