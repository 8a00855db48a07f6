//! Size-sweep harness: run the solvers over an n-grid of unit-optimum
//! instances and fit log-log iteration exponents. Cells are independent and
//! run in parallel; the CSV is emitted in a fixed order so identical
//! configurations produce identical bytes.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use linf_mwu::error::{Error, Result};
use linf_mwu::mwu::{AlgoKind, SolveBackend, SolverParams, SolverRun};
use linf_mwu::potentials::fmt_g17;
use linf_mwu::problem::{generate, generate_planted, Distribution, Instance};
use linf_mwu::sketching::{derive_seed, SeedPurpose};
use linf_mwu::{
    solve_baseline_unaccelerated, solve_monotone, solve_nonmonotone_opt, solve_nonmonotone_robust,
    solve_nonmonotone_stable,
};

use crate::reference::bruteforce_opt;

/// Instance family a bench sweep draws from. Every family yields unit
/// optimum, either by construction or by oracle normalization, so the
/// solvers' iteration counts are comparable across sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchFamily {
    /// Planted active set; optimum exactly 1 with no oracle involved.
    Planted,
    /// Random entries, normalized by the reference oracle.
    Generated(Distribution),
}

impl BenchFamily {
    pub fn from_name(name: &str, kappa: Option<f64>) -> Result<BenchFamily> {
        if name == "planted" {
            Ok(BenchFamily::Planted)
        } else {
            Ok(BenchFamily::Generated(Distribution::from_name(
                name, kappa,
            )?))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub n_grid: Vec<usize>,
    pub seeds: u64,
    pub algos: Vec<AlgoKind>,
    pub epsilon: f64,
    pub d_dim: usize,
    pub backend: SolveBackend,
    pub base_seed: u64,
    pub max_iters: Option<u64>,
    pub family: BenchFamily,
}

impl BenchSpec {
    pub fn new(algos: Vec<AlgoKind>, epsilon: f64) -> BenchSpec {
        BenchSpec {
            n_grid: vec![32, 64, 128, 256],
            seeds: 10,
            algos,
            epsilon,
            d_dim: 3,
            backend: SolveBackend::Direct,
            base_seed: 0,
            max_iters: None,
            family: BenchFamily::Planted,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchCell {
    pub algo: AlgoKind,
    pub n: usize,
    pub seed: u64,
    pub primal: u64,
    pub width: u64,
    pub residual: f64,
    pub status: String,
    pub resets: u64,
    pub partial_resets: u64,
    pub queries: u64,
    pub primal_l3_mass: f64,
    pub width_l3_mass: f64,
    pub primal_l2_mean: f64,
    pub fake_l2_mean: f64,
    pub max_band_violation: f64,
    pub min_weight_seen: f64,
}

impl BenchCell {
    pub fn total_iters(&self) -> u64 {
        self.primal + self.width
    }
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub cells: Vec<BenchCell>,
    /// Fitted log-log slope of mean total iterations against n, per
    /// algorithm, in the order requested.
    pub slopes: Vec<(AlgoKind, f64)>,
    pub wall_seconds: f64,
}

/// Run `f` under the rayon pool size requested via LINF_MWU_THREADS;
/// unset (or unparsable) uses the default global pool.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let cap = std::env::var("LINF_MWU_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&k| k >= 1);
    match cap {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

fn cell_instance(spec: &BenchSpec, n: usize, seed: u64) -> Result<Instance> {
    let mix = derive_seed(
        spec.base_seed,
        ((n as u64) << 32) | seed,
        SeedPurpose::Instance,
    );
    match spec.family {
        BenchFamily::Planted => Ok(generate_planted(mix, n, spec.d_dim)?.0),
        BenchFamily::Generated(dist) => {
            let raw = generate(mix, n, spec.d_dim, dist)?;
            let found = bruteforce_opt(&raw)?;
            raw.normalize(found.opt)
        }
    }
}

fn dispatch(
    algo: AlgoKind,
    inst: &Instance,
    params: &SolverParams,
    backend: SolveBackend,
) -> Result<SolverRun> {
    match algo {
        AlgoKind::Monotone => solve_monotone(inst, params, backend),
        AlgoKind::BaselineUnaccelerated => solve_baseline_unaccelerated(inst, params),
        AlgoKind::Stable => solve_nonmonotone_stable(&inst.double(), params, backend),
        AlgoKind::Robust => solve_nonmonotone_robust(&inst.double(), params, backend),
        AlgoKind::Opt => solve_nonmonotone_opt(&inst.double(), params),
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn run_cell(spec: &BenchSpec, algo: AlgoKind, n: usize, seed: u64) -> BenchCell {
    let mut cell = BenchCell {
        algo,
        n,
        seed,
        primal: 0,
        width: 0,
        residual: f64::NAN,
        status: String::new(),
        resets: 0,
        partial_resets: 0,
        queries: 0,
        primal_l3_mass: 0.0,
        width_l3_mass: 0.0,
        primal_l2_mean: 0.0,
        fake_l2_mean: 0.0,
        max_band_violation: 0.0,
        min_weight_seen: f64::NAN,
    };
    let outcome = cell_instance(spec, n, seed).and_then(|inst| {
        let mut params = SolverParams::new(spec.epsilon, seed);
        params.max_iters = spec.max_iters;
        dispatch(algo, &inst, &params, spec.backend)
    });
    match outcome {
        Ok(run) => {
            cell.primal = run.iterations.primal;
            cell.width = run.iterations.width;
            cell.residual = run.residual_inf;
            cell.status = run.status.name().into();
            cell.resets = run.op_counts.resets;
            cell.partial_resets = run.op_counts.partial_resets;
            cell.queries = run.op_counts.queries;
            let rep = &run.stability_report;
            cell.primal_l3_mass = rep.primal_l3_mass;
            cell.width_l3_mass = rep.width_l3_mass;
            cell.primal_l2_mean = mean(&rep.primal_l2_per_step);
            cell.fake_l2_mean = mean(&rep.fake_l2_per_step);
            cell.max_band_violation = rep.max_band_violation;
            cell.min_weight_seen = rep.min_weight_seen;
        }
        Err(err) => {
            cell.status = format!("error:{}", crate::report::error_kind(&err));
        }
    }
    cell
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_loglog(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..points.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}

/// Mean total iterations per n for one algorithm, over the cells that
/// finished with a solver status (failed cells are excluded).
fn slope_for(cells: &[BenchCell], algo: AlgoKind, n_grid: &[usize]) -> f64 {
    let points: Vec<(f64, f64)> = n_grid
        .iter()
        .filter_map(|&n| {
            let iters: Vec<f64> = cells
                .iter()
                .filter(|c| c.algo == algo && c.n == n && !c.status.starts_with("error"))
                .map(|c| c.total_iters() as f64)
                .collect();
            if iters.is_empty() {
                None
            } else {
                Some((n as f64, mean(&iters)))
            }
        })
        .collect();
    fit_loglog(&points)
}

pub fn run_bench(spec: &BenchSpec) -> Result<BenchSummary> {
    if spec.n_grid.is_empty() || spec.algos.is_empty() || spec.seeds == 0 {
        return Err(Error::InvalidInstance(
            "bench needs a nonempty n-grid, at least one algorithm, and at least one seed".into(),
        ));
    }
    let started = Instant::now();
    let mut tasks = Vec::new();
    for &algo in &spec.algos {
        for &n in &spec.n_grid {
            for seed in 0..spec.seeds {
                tasks.push((algo, n, seed));
            }
        }
    }
    let mut cells: Vec<BenchCell> = with_thread_cap(|| {
        tasks
            .par_iter()
            .map(|&(algo, n, seed)| run_cell(spec, algo, n, seed))
            .collect()
    });
    let algo_rank = |a: AlgoKind| spec.algos.iter().position(|&x| x == a).unwrap_or(usize::MAX);
    cells.sort_by_key(|c| (algo_rank(c.algo), c.n, c.seed));
    let slopes = spec
        .algos
        .iter()
        .map(|&algo| (algo, slope_for(&cells, algo, &spec.n_grid)))
        .collect();
    Ok(BenchSummary {
        cells,
        slopes,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

pub const BENCH_CSV_HEADER: &str = "algo,n,seed,primal_iters,width_iters,total_iters,residual_inf,\
status,resets,partial_resets,queries,primal_l3_mass,width_l3_mass,primal_l2_mean,fake_l2_mean,\
max_band_violation,min_weight_seen";

pub fn write_csv<W: Write>(summary: &BenchSummary, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for c in &summary.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.algo.name(),
            c.n,
            c.seed,
            c.primal,
            c.width,
            c.total_iters(),
            fmt_g17(c.residual),
            c.status,
            c.resets,
            c.partial_resets,
            c.queries,
            fmt_g17(c.primal_l3_mass),
            fmt_g17(c.width_l3_mass),
            fmt_g17(c.primal_l2_mean),
            fmt_g17(c.fake_l2_mean),
            fmt_g17(c.max_band_violation),
            fmt_g17(c.min_weight_seen),
        )?;
    }
    writeln!(out, "# fitted log-log slope of mean total iterations vs n")?;
    for (algo, slope) in &summary.slopes {
        writeln!(out, "# slope,{},{}", algo.name(), fmt_g17(*slope))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_fit_recovers_a_pure_power_law() {
        let pts: Vec<(f64, f64)> = [32.0, 64.0, 128.0, 256.0]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.powf(0.4)))
            .collect();
        let slope = fit_loglog(&pts);
        assert!((slope - 0.4).abs() < 1e-12, "slope {slope}");
    }

    #[test]
    fn tiny_sweep_produces_sorted_deterministic_csv() {
        let mut spec = BenchSpec::new(vec![AlgoKind::Monotone], 0.2);
        spec.n_grid = vec![16, 24];
        spec.seeds = 2;
        let a = run_bench(&spec).unwrap();
        let b = run_bench(&spec).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_csv(&a, &mut csv_a).unwrap();
        write_csv(&b, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        assert!(a.cells.len() == 4);
        assert!(a.cells.windows(2).all(|w| (w[0].n, w[0].seed) <= (w[1].n, w[1].seed)));
    }
}
