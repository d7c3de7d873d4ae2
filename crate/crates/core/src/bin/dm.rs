//! Batch CLI: builds tables, runs the experiments, and writes CSV/JSON
//! reports.  Non-interactive by design; every failure exits nonzero with a
//! machine-readable error record on stderr.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use divisor_moments::hp::bits_for_digits;
use divisor_moments::mainterm::{
    d_coefficients, expand_main_product, residue_main_poly, save_main_term,
};
use divisor_moments::moments::{moment_report, moments_csv, moments_json, MomentEngine};
use divisor_moments::multivar::{
    convolution_box_check, enumerate_support, lemma_identity_eval, local_coefficients, Support,
};
use divisor_moments::moments::predicted_square;
use divisor_moments::series::{d_matrix, l_polynomial, save_constants, tong_constant};
use divisor_moments::sieve::{
    build_factor_sieve, build_tau_table, load_tau_cache, save_tau_cache, FactorSieve, TauTable,
};
use divisor_moments::voronoi::{remainder_mean_square, voronoi_csv};
use divisor_moments::zeta::zeta_laurent;
use divisor_moments::{delta, DmError, Result};

#[derive(Parser)]
#[command(name = "dm", about = "divisor-sum error-term experiments", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// plain-text key=value file; explicit flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// decimal digits carried by the high-precision layer (>= 38)
    #[arg(long, global = true)]
    precision: Option<u32>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// csv or json where a choice exists
    #[arg(long, global = true)]
    format: Option<String>,
    /// byte-reproducible output; forces a single worker
    #[arg(long, global = true)]
    deterministic: bool,
    /// worker pool size
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// build a τ_k table (cached under DM_CACHE_DIR when set)
    Sieve {
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        limit: Option<u64>,
    },
    /// D-constant matrix and induced polynomial at (s,w) = (1/3, 2/3)
    Constants {
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        x: Option<u64>,
        #[arg(long)]
        y: Option<u64>,
    },
    /// dump n, S(n), Δ(n+1/2) over a range
    Delta {
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long = "T")]
        t: Option<u64>,
        /// support truncation for the main-term coefficients
        #[arg(long = "X")]
        x_cut: Option<u64>,
    },
    /// cumulative moment report over a dyadic grid ending at T
    Moments {
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long = "T")]
        t: Option<u64>,
        #[arg(long = "X")]
        x_cut: Option<u64>,
        /// D-constant truncations for the predicted column (r >= 2)
        #[arg(long)]
        x: Option<u64>,
        #[arg(long)]
        y: Option<u64>,
    },
    /// truncated-sum remainder mean square over [T, 2T]
    Voronoi {
        #[arg(long = "T")]
        t: Option<u64>,
        /// single truncation; omitted = geometric sweep T^(1/3)..T^(1/2)
        #[arg(long = "N")]
        n_trunc: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// exact identity sweeps; exits nonzero on any mismatch
    Verify {
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long = "box")]
        box_limit: Option<u64>,
    },
}

/// key=value overlay from --config; '#' starts a comment
struct Overlay(HashMap<String, String>);

impl Overlay {
    fn load(path: Option<&Path>) -> Result<Overlay> {
        let mut map = HashMap::new();
        if let Some(p) = path {
            for line in std::fs::read_to_string(p)?.lines() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| DmError::usage("config", format!("bad line `{line}`")))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Overlay(map))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| DmError::usage(key, format!("cannot parse `{v}`"))),
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn require<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| DmError::usage(name, "required (flag or config file)"))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("DM_CACHE_DIR").map(PathBuf::from)
}

/// τ_k table, going through the DM_CACHE_DIR binary cache when available.
fn get_tau(k: u32, limit: u64, sieve: &FactorSieve) -> Result<TauTable> {
    if let Some(dir) = cache_dir() {
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("tau_k{k}_n{limit}.dmt"));
        if path.exists() {
            let t = load_tau_cache(&path)?;
            if t.k == k && t.limit == limit {
                return Ok(t);
            }
        }
        let t = build_tau_table(limit, k, sieve)?;
        save_tau_cache(&t, &path)?;
        return Ok(t);
    }
    build_tau_table(limit, k, sieve)
}

fn build_support(r: usize, k: u32, x_cut: u64, sieve: &FactorSieve) -> Result<Support> {
    let max_exp = if x_cut >= 2 { x_cut.ilog2() } else { 1 };
    let lct = local_coefficients(r, k, max_exp)?;
    enumerate_support(x_cut, sieve, &lct)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let parameter = match &e {
                DmError::Usage { parameter, .. } => Some(parameter.clone()),
                _ => None,
            };
            let record = serde_json::json!({
                "code": e.code(),
                "message": e.to_string(),
                "parameter": parameter,
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let overlay = Overlay::load(c.config.as_deref())?;
    let precision = pick(c.precision, overlay.num("precision")?).unwrap_or(38);
    if precision < 38 {
        return Err(DmError::usage("precision", "need at least 38 digits"));
    }
    let bits = bits_for_digits(precision);
    let threads = if c.deterministic {
        Some(1)
    } else {
        pick(c.threads, overlay.num("threads")?)
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| DmError::usage("threads", e.to_string()))?;
    }
    let format = pick(c.format.clone(), overlay.0.get("format").cloned())
        .unwrap_or_else(|| "csv".to_string());
    if format != "csv" && format != "json" {
        return Err(DmError::usage("format", "must be csv or json"));
    }
    let output = pick(c.output.clone(), overlay.0.get("output").map(PathBuf::from));

    match cli.cmd {
        Cmd::Sieve { k, limit } => {
            let k = pick(k, overlay.num("k")?).unwrap_or(3);
            let limit = require(pick(limit, overlay.num("limit")?), "limit")?;
            check_rk(1, k)?;
            let sieve = build_factor_sieve(limit)?;
            let tau = get_tau(k, limit, &sieve)?;
            if let Some(path) = output {
                save_tau_cache(&tau, &path)?;
            }
            println!(
                "tau table: k={k} limit={limit} summatory={}",
                tau.prefix(limit)
            );
            Ok(())
        }
        Cmd::Constants { r, x, y } => {
            let r = pick(r, overlay.num("r")?).unwrap_or(2);
            if r < 2 {
                return Err(DmError::usage("r", "constants need r >= 2"));
            }
            let x = require(pick(x, overlay.num("x")?), "x")?;
            let y = require(pick(y, overlay.num("y")?), "y")?;
            let sieve = build_factor_sieve(x.max(y))?;
            let support = build_support(r, 3, x, &sieve)?;
            let tau = get_tau(3, y, &sieve)?;
            let zl = zeta_laurent(6, precision + 7)?;
            let exp = expand_main_product(3, r - 1, &zl, bits)?;
            let m = d_matrix(x, y, &exp, &support, &tau, bits)?;
            let lp = l_polynomial(r, &m.values, bits)?;
            let path = output.unwrap_or_else(|| PathBuf::from(format!("constants_r{r}.json")));
            save_constants(&m, &lp, &path)?;
            println!(
                "constants: r={r} x={x} y={y} D[0][0]={:.6} -> {}",
                m.values[0][0].to_f64(),
                path.display()
            );
            Ok(())
        }
        Cmd::Delta { r, k, t, x_cut } => {
            let r = pick(r, overlay.num("r")?).unwrap_or(2);
            let k = pick(k, overlay.num("k")?).unwrap_or(3);
            check_rk(r, k)?;
            let t = require(pick(t, overlay.num("T")?), "T")?;
            let x_cut = pick(x_cut, overlay.num("X")?).unwrap_or(t);
            let (table, mm) = build_delta_side(r, k, t, x_cut, precision, bits)?;
            let path = output.unwrap_or_else(|| PathBuf::from(format!("delta_r{r}_k{k}.csv")));
            delta::dump_delta_csv(&path, &table, &mm, 1, t, bits)?;
            println!("delta: r={r} k={k} T={t} X={x_cut} -> {}", path.display());
            Ok(())
        }
        Cmd::Moments {
            r,
            k,
            t,
            x_cut,
            x,
            y,
        } => {
            let r = pick(r, overlay.num("r")?).unwrap_or(1);
            let k = pick(k, overlay.num("k")?).unwrap_or(3);
            check_rk(r, k)?;
            let t = require(pick(t, overlay.num("T")?), "T")?;
            if t < 16 {
                return Err(DmError::usage("T", "grid needs T >= 16"));
            }
            let x_cut = pick(x_cut, overlay.num("X")?).unwrap_or(t);
            let grid: Vec<f64> = (0..4).rev().map(|j| (t >> j) as f64).collect();

            let (engine, step): (MomentEngine, Box<dyn Fn(u64) -> i128 + Sync>) = if r == 1 {
                let sieve = build_factor_sieve(t)?;
                let tau = get_tau(k, t, &sieve)?;
                let zl = zeta_laurent(k as usize + 1, precision + 7)?;
                let poly = residue_main_poly(k, &zl, bits)?;
                let engine = MomentEngine::new(1, &poly.coeffs, bits)?;
                (engine, Box::new(move |n| tau.prefix(n)))
            } else {
                let (table, mm) = build_delta_side(r, k, t, x_cut, precision, bits)?;
                let engine = MomentEngine::new(r as u32, &mm.d, bits)?;
                (engine, Box::new(move |n| table.value(n)))
            };

            let predicted: Box<dyn Fn(f64) -> f64> = if k == 3 && r == 1 {
                let sieve = build_factor_sieve(100_000)?;
                let tau3 = get_tau(3, 100_000, &sieve)?;
                let c = tong_constant(100_000, &tau3, bits)?.value.to_f64();
                Box::new(move |t: f64| c * t.powf(5.0 / 3.0))
            } else if k == 3 {
                let x = pick(x, overlay.num("x")?).unwrap_or(1000);
                let y = pick(y, overlay.num("y")?).unwrap_or(10_000);
                let sieve = build_factor_sieve(x.max(y))?;
                let support = build_support(r, 3, x, &sieve)?;
                let tau = get_tau(3, y, &sieve)?;
                let zl = zeta_laurent(6, precision + 7)?;
                let exp = expand_main_product(3, r - 1, &zl, bits)?;
                let m = d_matrix(x, y, &exp, &support, &tau, bits)?;
                let lp = l_polynomial(r, &m.values, bits)?;
                Box::new(move |t: f64| predicted_square(r as u32, &lp, t))
            } else {
                Box::new(|_| 0.0)
            };

            let report = moment_report(r as u32, k, &engine, &step, &grid, predicted)?;
            let path = output.unwrap_or_else(|| {
                PathBuf::from(format!("moments_r{r}_k{k}.{format}"))
            });
            if format == "json" {
                moments_json(&report, &path)?;
            } else {
                moments_csv(&report, &path)?;
            }
            println!(
                "moments: r={r} k={k} T={t} square={:.6e} ratio={:.4} -> {}",
                report.square.last().unwrap(),
                report.ratio.last().unwrap(),
                path.display()
            );
            Ok(())
        }
        Cmd::Voronoi { t, n_trunc, samples } => {
            let t = require(pick(t, overlay.num("T")?), "T")?;
            let samples = pick(samples, overlay.num("samples")?).unwrap_or(24);
            let tf = t as f64;
            let ns: Vec<u64> = match pick(n_trunc, overlay.num("N")?) {
                Some(n) => vec![n],
                None => {
                    let lo = tf.powf(1.0 / 3.0);
                    let hi = tf.sqrt();
                    (0..4)
                        .map(|j| (lo * (hi / lo).powf(j as f64 / 3.0)).round() as u64)
                        .collect()
                }
            };
            let sieve = build_factor_sieve(2 * t)?;
            let tau = get_tau(3, 2 * t, &sieve)?;
            let zl = zeta_laurent(4, precision + 7)?;
            let poly = residue_main_poly(3, &zl, bits)?;
            let mut rows = Vec::new();
            for &n in &ns {
                let (ms, ratio) = remainder_mean_square(tf, n, samples, &tau, &poly)?;
                rows.push((tf, n, ms, ratio));
            }
            let path = output.unwrap_or_else(|| PathBuf::from("voronoi.csv"));
            voronoi_csv(&path, &rows)?;
            println!("voronoi: T={t} rows={} -> {}", rows.len(), path.display());
            Ok(())
        }
        Cmd::Verify { r, k, box_limit } => {
            let r = pick(r, overlay.num("r")?).unwrap_or(2);
            let k = pick(k, overlay.num("k")?).unwrap_or(3);
            check_rk(r, k)?;
            let box_limit = pick(box_limit, overlay.num("box")?).unwrap_or(300);
            let sieve = build_factor_sieve(box_limit)?;
            let max_exp = if box_limit >= 2 { box_limit.ilog2() } else { 1 };
            let lct = local_coefficients(r, k, max_exp)?;
            let tau = get_tau(k, box_limit, &sieve)?;
            let ok = convolution_box_check(box_limit, r, k, &sieve, &lct, &tau)?;
            println!(
                "verify convolution: r={r} k={k} box={box_limit} -> {}",
                if ok { "pass" } else { "FAIL" }
            );
            let mut worst = 0f64;
            let mut state = 0x9e3779b97f4a7c15u64;
            for _ in 0..100 {
                let tpoint: Vec<f64> = (0..r)
                    .map(|_| {
                        state ^= state << 13;
                        state ^= state >> 7;
                        state ^= state << 17;
                        0.05 + 0.9 * (state % 1_000_000) as f64 / 1_000_000.0
                    })
                    .collect();
                worst = worst.max(lemma_identity_eval(r, k, &tpoint).abs());
            }
            let lemma_ok = worst < 1e-10;
            println!(
                "verify lemma identity: worst residual {worst:.3e} -> {}",
                if lemma_ok { "pass" } else { "FAIL" }
            );
            if ok && lemma_ok {
                Ok(())
            } else {
                Err(DmError::usage("verify", "identity sweep failed"))
            }
        }
    }
}

fn check_rk(r: usize, k: u32) -> Result<()> {
    if r < 1 {
        return Err(DmError::usage("r", "need r >= 1"));
    }
    if k < 2 {
        return Err(DmError::usage("k", "need k >= 2"));
    }
    Ok(())
}

/// Summatory table plus truncated main term for the r-variable error term.
fn build_delta_side(
    r: usize,
    k: u32,
    t: u64,
    x_cut: u64,
    precision: u32,
    bits: u32,
) -> Result<(delta::MultiSumTable, divisor_moments::mainterm::MultiMainTerm)> {
    if x_cut < t {
        return Err(DmError::usage("X", "support truncation X must cover T"));
    }
    let sieve = build_factor_sieve(x_cut)?;
    let tau = get_tau(k, x_cut, &sieve)?;
    let support = build_support(r, k, x_cut, &sieve)?;
    let table = delta::build_multisum_table(t, &tau, &support, &sieve)?;
    let zl = zeta_laurent(k as usize + 1, precision + 7)?;
    let exp = expand_main_product(k, r, &zl, bits)?;
    let mm = d_coefficients(&exp, &support, precision, bits)?;
    if let Some(dir) = cache_dir() {
        let _ = save_main_term(&mm, &dir.join(format!("mainterm_r{r}_k{k}_x{x_cut}.json")));
    }
    Ok((table, mm))
}
