//! Weighted least-squares oracle: given row weights r > 0, find Δ minimizing
//! Σ_e r_e (CΔ − d)²_e via the normal equations. The incremental form keeps
//! M = CᵀRC and b = CᵀRd patched under sparse weight changes, so a solve
//! costs one small Cholesky instead of a full rebuild.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::inverse_maintenance::{ImplicitInv, OneLevelInv, OpCounters, TwoLevelInv, UpdateBatch};
use crate::linalg;

/// Incremental updates accumulate f64 drift; rebuild from scratch after this
/// many coordinate patches.
const REBUILD_EVERY: usize = 4096;

/// The normal matrix always carries the shift λ = ridge_floor·trace(M)/dim
/// so rank-deficient systems solve and the maintained path stays consistent
/// with the direct one.
pub const DEFAULT_RIDGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub delta: Array1<f64>,
    /// u = CΔ − d over all rows.
    pub residual_u: Array1<f64>,
    /// Σ_e r_e u_e², the minimized energy.
    pub psi: f64,
    /// Diagonal shift that was needed to factor the normal matrix; 0 when
    /// the unmodified matrix factored cleanly.
    pub ridge: f64,
}

/// Which residual rows a partial solve should materialize.
#[derive(Debug, Clone, Copy)]
pub enum QueryRows<'a> {
    All,
    Subset(&'a [usize]),
}

#[derive(Debug, Clone)]
pub struct PartialOracleResult {
    pub delta: Array1<f64>,
    /// (row, u_row) pairs for the requested rows.
    pub residual_entries: Vec<(usize, f64)>,
    /// Present only when every row was materialized.
    pub psi: Option<f64>,
    pub ridge: f64,
}

/// Effective shift for a normal matrix under the given floor.
pub fn ridge_for(m: &Array2<f64>, ridge_floor: f64) -> f64 {
    let dim = m.nrows();
    let trace: f64 = (0..dim).map(|i| m[(i, i)].abs()).sum();
    ridge_floor.max(0.0) * trace / dim as f64
}

/// Solve the normal system with the formula shift, escalating it if the
/// factorization still fails.
fn solve_normal(
    m: &Array2<f64>,
    b: &Array1<f64>,
    ridge_floor: f64,
) -> Result<(Array1<f64>, f64)> {
    let dim = m.nrows();
    let base = ridge_for(m, ridge_floor);
    if base == 0.0 {
        if let Some(x) = linalg::cholesky_solve(m, b, 0.0) {
            return Ok((x, 0.0));
        }
    }
    let trace: f64 = (0..dim).map(|i| m[(i, i)].abs()).sum();
    let mut lam = if base > 0.0 {
        base
    } else {
        (trace / dim as f64).max(f64::MIN_POSITIVE) * 1e-14
    };
    for _ in 0..6 {
        let mut shifted = m.clone();
        for i in 0..dim {
            shifted[(i, i)] += lam;
        }
        if let Some(x) = linalg::cholesky_solve(&shifted, b, 0.0) {
            return Ok((x, lam));
        }
        lam *= 100.0;
    }
    Err(Error::SingularOracle {
        cond_estimate: f64::INFINITY,
    })
}

/// One-shot weighted least squares from scratch.
pub fn solve_direct(
    c: &Array2<f64>,
    target: &Array1<f64>,
    r: &Array1<f64>,
) -> Result<OracleResult> {
    solve_direct_with_ridge(c, target, r, DEFAULT_RIDGE_FLOOR)
}

pub fn solve_direct_with_ridge(
    c: &Array2<f64>,
    target: &Array1<f64>,
    r: &Array1<f64>,
    ridge_floor: f64,
) -> Result<OracleResult> {
    let (rows, dim) = c.dim();
    if r.len() != rows || target.len() != rows {
        return Err(Error::DimensionMismatch {
            context: format!(
                "oracle rows {rows}, weights {}, target {}",
                r.len(),
                target.len()
            ),
        });
    }
    if let Some((e, &v)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::PositivityBreach { coord: e, value: v });
    }
    let mut m = Array2::<f64>::zeros((dim, dim));
    let mut b = Array1::<f64>::zeros(dim);
    accumulate_normal(c, target, r, &mut m, &mut b);
    let (delta, ridge) = solve_normal(&m, &b, ridge_floor)?;
    let residual_u = c.dot(&delta) - target;
    let psi = weighted_energy(r, &residual_u);
    Ok(OracleResult {
        delta,
        residual_u,
        psi,
        ridge,
    })
}

fn accumulate_normal(
    c: &Array2<f64>,
    target: &Array1<f64>,
    r: &Array1<f64>,
    m: &mut Array2<f64>,
    b: &mut Array1<f64>,
) {
    let (rows, dim) = c.dim();
    m.fill(0.0);
    b.fill(0.0);
    for e in 0..rows {
        let re = r[e];
        for i in 0..dim {
            let ci = c[(e, i)];
            b[i] += re * target[e] * ci;
            for j in i..dim {
                m[(i, j)] += re * ci * c[(e, j)];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}

pub fn weighted_energy(r: &Array1<f64>, u: &Array1<f64>) -> f64 {
    r.iter().zip(u.iter()).map(|(re, ue)| re * ue * ue).sum()
}

/// Oracle with owned system and incrementally patched normal equations.
#[derive(Debug, Clone)]
pub struct WeightedOracle {
    c: Array2<f64>,
    target: Array1<f64>,
    r: Array1<f64>,
    m: Array2<f64>,
    b: Array1<f64>,
    patches_since_rebuild: usize,
}

impl WeightedOracle {
    pub fn new(c: Array2<f64>, target: Array1<f64>, r: Array1<f64>) -> Result<WeightedOracle> {
        let (rows, dim) = c.dim();
        if r.len() != rows || target.len() != rows {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "oracle rows {rows}, weights {}, target {}",
                    r.len(),
                    target.len()
                ),
            });
        }
        if let Some((e, &v)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::PositivityBreach { coord: e, value: v });
        }
        let mut oracle = WeightedOracle {
            c,
            target,
            r,
            m: Array2::zeros((dim, dim)),
            b: Array1::zeros(dim),
            patches_since_rebuild: 0,
        };
        oracle.rebuild();
        Ok(oracle)
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.r
    }

    pub fn weight(&self, e: usize) -> f64 {
        self.r[e]
    }

    pub fn rebuild(&mut self) {
        let (c, target, r) = (&self.c, &self.target, &self.r);
        accumulate_normal(c, target, r, &mut self.m, &mut self.b);
        self.patches_since_rebuild = 0;
    }

    /// Replace the weight of row e, patching M and b in O(dim²).
    pub fn set_weight(&mut self, e: usize, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::PositivityBreach { coord: e, value });
        }
        let diff = value - self.r[e];
        self.r[e] = value;
        if diff == 0.0 {
            return Ok(());
        }
        let dim = self.dim();
        for i in 0..dim {
            let ci = self.c[(e, i)];
            self.b[i] += diff * self.target[e] * ci;
            for j in 0..dim {
                self.m[(i, j)] += diff * ci * self.c[(e, j)];
            }
        }
        self.patches_since_rebuild += 1;
        if self.patches_since_rebuild >= REBUILD_EVERY {
            self.rebuild();
        }
        Ok(())
    }

    pub fn set_weights(&mut self, updates: &[(usize, f64)]) -> Result<()> {
        for &(e, v) in updates {
            self.set_weight(e, v)?;
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<OracleResult> {
        let (delta, ridge) = solve_normal(&self.m, &self.b, DEFAULT_RIDGE_FLOOR)?;
        let residual_u = self.c.dot(&delta) - &self.target;
        let psi = weighted_energy(&self.r, &residual_u);
        Ok(OracleResult {
            delta,
            residual_u,
            psi,
            ridge,
        })
    }

    pub fn solve_rows(&self, rows: QueryRows<'_>) -> Result<PartialOracleResult> {
        let (delta, ridge) = solve_normal(&self.m, &self.b, DEFAULT_RIDGE_FLOOR)?;
        match rows {
            QueryRows::All => {
                let u = self.c.dot(&delta) - &self.target;
                let psi = weighted_energy(&self.r, &u);
                let residual_entries = u.iter().cloned().enumerate().collect();
                Ok(PartialOracleResult {
                    delta,
                    residual_entries,
                    psi: Some(psi),
                    ridge,
                })
            }
            QueryRows::Subset(set) => {
                let residual_entries = set
                    .iter()
                    .map(|&e| (e, self.row_residual(e, &delta)))
                    .collect();
                Ok(PartialOracleResult {
                    delta,
                    residual_entries,
                    psi: None,
                    ridge,
                })
            }
        }
    }

    fn row_residual(&self, e: usize, delta: &Array1<f64>) -> f64 {
        let mut v = -self.target[e];
        for j in 0..self.dim() {
            v += self.c[(e, j)] * delta[j];
        }
        v
    }

    /// Energy of an arbitrary candidate Δ under the current weights.
    pub fn energy_at(&self, delta: &Array1<f64>) -> f64 {
        let u = self.c.dot(delta) - &self.target;
        weighted_energy(&self.r, &u)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaintainerConfig {
    /// Reset when accumulated update rank reaches rows^a0.
    pub a0: f64,
    /// Partial-reset (two-level only) when pending rank reaches rows^a1.
    pub a1: f64,
    pub ridge_floor: f64,
    pub two_level: bool,
}

impl Default for MaintainerConfig {
    fn default() -> MaintainerConfig {
        MaintainerConfig {
            a0: 0.75,
            a1: 0.5,
            ridge_floor: DEFAULT_RIDGE_FLOOR,
            two_level: false,
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    One(OneLevelInv),
    Two(TwoLevelInv),
}

/// Bordered-system update for a set of weight changes: column e of the
/// left factor is [c_e; 0], of the right factor [c_e; −d_e], with the
/// weight delta on the core diagonal.
fn bordered_weight_batch(
    c: &Array2<f64>,
    target: &Array1<f64>,
    changes: &[(usize, f64)],
) -> UpdateBatch {
    let dim = c.ncols();
    let k = changes.len();
    let mut u = Array2::<f64>::zeros((dim + 1, k));
    let mut v = Array2::<f64>::zeros((dim + 1, k));
    let mut core = Array2::<f64>::zeros((k, k));
    for (col, &(e, diff)) in changes.iter().enumerate() {
        for i in 0..dim {
            u[(i, col)] = c[(e, i)];
            v[(i, col)] = c[(e, i)];
        }
        v[(dim, col)] = -target[e];
        core[(col, col)] = diff;
    }
    UpdateBatch {
        u,
        core,
        v,
        j_delta: (0..=dim).collect(),
    }
}

/// Bordered matrix [[M+λI, −b],[0, 1]] for weights r, with λ frozen by the
/// caller. Its inverse's last column is [Δ; 1].
fn bordered_system(
    c: &Array2<f64>,
    target: &Array1<f64>,
    r: &Array1<f64>,
    ridge: f64,
) -> Array2<f64> {
    let dim = c.ncols();
    let mut m = Array2::<f64>::zeros((dim, dim));
    let mut b = Array1::<f64>::zeros(dim);
    accumulate_normal(c, target, r, &mut m, &mut b);
    let mut bordered = Array2::<f64>::zeros((dim + 1, dim + 1));
    bordered.slice_mut(s![..dim, ..dim]).assign(&m);
    for i in 0..dim {
        bordered[(i, i)] += ridge;
        bordered[(i, dim)] = -b[i];
    }
    bordered[(dim, dim)] = 1.0;
    bordered
}

/// Implicit running sum of weighted least-squares solutions: one bordered
/// solve [Δ; 1] is absorbed per recorded step, so the final query returns
/// [Σ_i Δ^(i); #steps] without ever materializing the iterates. The caller
/// records exactly one step per primal iteration, folding any intervening
/// width-step weight changes into that step's batch.
#[derive(Debug, Clone)]
pub struct ImplicitSum {
    c: Array2<f64>,
    target: Array1<f64>,
    r: Array1<f64>,
    inner: ImplicitInv,
    ridge: f64,
    reset_at: f64,
    partial_reset_at: f64,
    steps: u64,
}

impl ImplicitSum {
    /// Start the sum at the current weights; the construction itself absorbs
    /// the first step's solution.
    pub fn new(
        c: Array2<f64>,
        target: Array1<f64>,
        r: Array1<f64>,
        cfg: MaintainerConfig,
    ) -> Result<ImplicitSum> {
        let (rows, dim) = c.dim();
        if r.len() != rows || target.len() != rows {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "implicit sum rows {rows}, weights {}, target {}",
                    r.len(),
                    target.len()
                ),
            });
        }
        if let Some((e, &v)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::PositivityBreach { coord: e, value: v });
        }
        let mut m = Array2::<f64>::zeros((dim, dim));
        let mut b = Array1::<f64>::zeros(dim);
        accumulate_normal(&c, &target, &r, &mut m, &mut b);
        let ridge = ridge_for(&m, cfg.ridge_floor);
        let bordered = bordered_system(&c, &target, &r, ridge);
        let mut unit = Array1::<f64>::zeros(dim + 1);
        unit[dim] = 1.0;
        let inner = ImplicitInv::init(bordered, unit)?;
        Ok(ImplicitSum {
            c,
            target,
            r,
            inner,
            ridge,
            reset_at: (rows as f64).powf(cfg.a0),
            partial_reset_at: (rows as f64).powf(cfg.a1),
            steps: 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn counters(&self) -> &OpCounters {
        self.inner.counters()
    }

    pub fn is_degraded(&self) -> bool {
        self.inner.is_degraded()
    }

    /// Record one step at the given new weight values (coordinate, value).
    /// An empty or no-op update still contributes a term to the sum.
    pub fn note_step(&mut self, updates: &[(usize, f64)]) -> Result<()> {
        let mut changes = Vec::with_capacity(updates.len());
        for &(e, value) in updates {
            if e >= self.rows() {
                return Err(Error::StaleMaintainer(format!(
                    "weight update for row {e} on a {}-row system",
                    self.rows()
                )));
            }
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::PositivityBreach { coord: e, value });
            }
            let diff = value - self.r[e];
            if diff != 0.0 {
                changes.push((e, diff));
                self.r[e] = value;
            }
        }
        if changes.is_empty() {
            self.inner.accumulate_current()?;
        } else {
            let batch = bordered_weight_batch(&self.c, &self.target, &changes);
            self.inner.update(&batch)?;
            if (self.inner.k0() as f64) >= self.reset_at {
                self.inner.reset()?;
            } else if (self.inner.k1() as f64) >= self.partial_reset_at {
                self.inner.partial_reset()?;
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// [Σ Δ; #steps]: the accumulated solutions and the step count the last
    /// coordinate carries for free.
    pub fn query_sum(&self) -> Array1<f64> {
        self.inner.query_sum()
    }
}

/// Oracle answering weighted least-squares queries through an incrementally
/// maintained inverse. It tracks the bordered matrix [[M, −b],[0, 1]] with
/// M = CᵀRC + λI and b = CᵀRd, whose inverse's last column holds [Δ; 1], so
/// weight changes and right-hand-side changes arrive as one factored update.
#[derive(Debug, Clone)]
pub struct MaintainedOracle {
    c: Array2<f64>,
    target: Array1<f64>,
    r: Array1<f64>,
    backend: Backend,
    ridge: f64,
    reset_at: f64,
    partial_reset_at: f64,
    two_level: bool,
}

impl MaintainedOracle {
    pub fn new(
        c: Array2<f64>,
        target: Array1<f64>,
        r: Array1<f64>,
        cfg: MaintainerConfig,
    ) -> Result<MaintainedOracle> {
        let (rows, dim) = c.dim();
        if r.len() != rows || target.len() != rows {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "oracle rows {rows}, weights {}, target {}",
                    r.len(),
                    target.len()
                ),
            });
        }
        if let Some((e, &v)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::PositivityBreach { coord: e, value: v });
        }
        let mut m = Array2::<f64>::zeros((dim, dim));
        let mut b = Array1::<f64>::zeros(dim);
        accumulate_normal(&c, &target, &r, &mut m, &mut b);
        // The shift is frozen at construction so every later factored update
        // commutes with it.
        let ridge = ridge_for(&m, cfg.ridge_floor);
        let mut bordered = Array2::<f64>::zeros((dim + 1, dim + 1));
        bordered.slice_mut(s![..dim, ..dim]).assign(&m);
        for i in 0..dim {
            bordered[(i, i)] += ridge;
            bordered[(i, dim)] = -b[i];
        }
        bordered[(dim, dim)] = 1.0;
        let backend = if cfg.two_level {
            Backend::Two(TwoLevelInv::init(bordered)?)
        } else {
            Backend::One(OneLevelInv::init(bordered)?)
        };
        let reset_at = (rows as f64).powf(cfg.a0);
        let partial_reset_at = (rows as f64).powf(cfg.a1);
        Ok(MaintainedOracle {
            c,
            target,
            r,
            backend,
            ridge,
            reset_at,
            partial_reset_at,
            two_level: cfg.two_level,
        })
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.r
    }

    pub fn counters(&self) -> &OpCounters {
        match &self.backend {
            Backend::One(ds) => ds.counters(),
            Backend::Two(ds) => ds.counters(),
        }
    }

    pub fn is_degraded(&self) -> bool {
        match &self.backend {
            Backend::One(ds) => ds.is_degraded(),
            Backend::Two(ds) => ds.is_degraded(),
        }
    }

    pub fn inject_reset_fault(&mut self) {
        match &mut self.backend {
            Backend::One(ds) => ds.inject_reset_fault(),
            Backend::Two(ds) => ds.inject_reset_fault(),
        }
    }

    fn weight_batch(&self, changes: &[(usize, f64)]) -> UpdateBatch {
        bordered_weight_batch(&self.c, &self.target, changes)
    }

    /// Apply weight updates (coordinate, new value), run the reset policy,
    /// and answer the requested residual rows from the maintained inverse.
    pub fn update_and_solve(
        &mut self,
        updates: &[(usize, f64)],
        rows: QueryRows<'_>,
    ) -> Result<PartialOracleResult> {
        let mut changes = Vec::with_capacity(updates.len());
        for &(e, value) in updates {
            if e >= self.rows() {
                return Err(Error::StaleMaintainer(format!(
                    "weight update for row {e} on a {}-row system",
                    self.rows()
                )));
            }
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::PositivityBreach { coord: e, value });
            }
            let diff = value - self.r[e];
            if diff != 0.0 {
                changes.push((e, diff));
                self.r[e] = value;
            }
        }
        if !changes.is_empty() {
            let batch = self.weight_batch(&changes);
            match &mut self.backend {
                Backend::One(ds) => {
                    ds.update(&batch)?;
                    if (ds.k0() as f64) >= self.reset_at {
                        ds.reset()?;
                    }
                }
                Backend::Two(ds) => {
                    ds.update(&batch)?;
                    if (ds.k0() as f64) >= self.reset_at {
                        ds.reset()?;
                    } else if (ds.k1() as f64) >= self.partial_reset_at {
                        ds.partial_reset()?;
                    }
                }
            }
        }
        let dim = self.dim();
        let row_ix: Vec<usize> = (0..dim).collect();
        let col_ix = [dim];
        let block = match &mut self.backend {
            Backend::One(ds) => ds.query(&row_ix, &col_ix)?,
            Backend::Two(ds) => ds.query(&row_ix, &col_ix)?,
        };
        let delta = Array1::from_shape_fn(dim, |i| block[(i, 0)]);
        match rows {
            QueryRows::All => {
                let u = self.c.dot(&delta) - &self.target;
                let psi = weighted_energy(&self.r, &u);
                Ok(PartialOracleResult {
                    delta,
                    residual_entries: u.iter().cloned().enumerate().collect(),
                    psi: Some(psi),
                    ridge: self.ridge,
                })
            }
            QueryRows::Subset(set) => {
                let residual_entries = set
                    .iter()
                    .map(|&e| {
                        let mut v = -self.target[e];
                        for j in 0..dim {
                            v += self.c[(e, j)] * delta[j];
                        }
                        (e, v)
                    })
                    .collect();
                Ok(PartialOracleResult {
                    delta,
                    residual_entries,
                    psi: None,
                    ridge: self.ridge,
                })
            }
        }
    }

    pub fn is_two_level(&self) -> bool {
        self.two_level
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_system(seed: u64, rows: usize, dim: usize) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Array2::from_shape_fn((rows, dim), |_| rng.sample::<f64, _>(StandardNormal));
        let d = Array1::from_shape_fn(rows, |_| rng.sample::<f64, _>(StandardNormal));
        (c, d)
    }

    fn random_weights(seed: u64, rows: usize) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_fn(rows, |_| rng.random::<f64>() * 3.0 + 0.1)
    }

    #[test]
    fn unit_weights_midpoint() {
        // min (x-0)² + (x-2)² at x = 1: residuals [1, -1], energy 2.
        let res = solve_direct(&array![[1.0], [1.0]], &array![0.0, 2.0], &array![1.0, 1.0])
            .unwrap();
        assert!((res.delta[0] - 1.0).abs() < 1e-10);
        assert!((res.residual_u[0] - 1.0).abs() < 1e-10);
        assert!((res.residual_u[1] + 1.0).abs() < 1e-10);
        assert!((res.psi - 2.0).abs() < 1e-10);
        // M = [[2]], so the shift is floor·|2|/1.
        assert!((res.ridge - 2.0 * DEFAULT_RIDGE_FLOOR).abs() < 1e-27);
    }

    #[test]
    fn skewed_weights_shift_minimizer() {
        // min x² + 3(x-2)² at x = 3/2: energy 9/4 + 3/4 = 3.
        let res = solve_direct(&array![[1.0], [1.0]], &array![0.0, 2.0], &array![1.0, 3.0])
            .unwrap();
        assert!((res.delta[0] - 1.5).abs() < 1e-10);
        assert!((res.psi - 3.0).abs() < 1e-10);
    }

    #[test]
    fn in_span_target_zeroes_energy() {
        let res = solve_direct(&array![[1.0], [0.0]], &array![5.0, 0.0], &array![1.0, 2.0])
            .unwrap();
        assert!((res.delta[0] - 5.0).abs() < 1e-10);
        assert!(res.psi.abs() < 1e-20);
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let r = solve_direct(&array![[1.0]], &array![1.0], &array![0.0]);
        assert!(matches!(r, Err(Error::PositivityBreach { coord: 0, .. })));
    }

    #[test]
    fn minimizer_beats_finite_perturbations() {
        let (c, d) = random_system(42, 12, 3);
        let r = random_weights(43, 12);
        let res = solve_direct(&c, &d, &r).unwrap();
        let oracle = WeightedOracle::new(c, d, r).unwrap();
        let base = oracle.energy_at(&res.delta);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let dir = Array1::from_shape_fn(3, |_| rng.sample::<f64, _>(StandardNormal));
            for &h in &[1e-4, 1e-2, 0.5] {
                let perturbed = oracle.energy_at(&(&res.delta + &(h * &dir)));
                assert!(
                    perturbed >= base - 1e-9 * base.max(1.0),
                    "direction lowered energy: {perturbed} < {base}"
                );
            }
        }
    }

    #[test]
    fn incremental_patches_match_fresh_solve() {
        let (c, d) = random_system(7, 20, 4);
        let r = random_weights(8, 20);
        let mut oracle = WeightedOracle::new(c.clone(), d.clone(), r.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut r_now = r;
        for _ in 0..300 {
            let e = rng.random_range(0..20);
            let v = rng.random::<f64>() * 5.0 + 0.05;
            r_now[e] = v;
            oracle.set_weight(e, v).unwrap();
        }
        let inc = oracle.solve().unwrap();
        let fresh = solve_direct(&c, &d, &r_now).unwrap();
        for j in 0..4 {
            assert!(
                (inc.delta[j] - fresh.delta[j]).abs() < 1e-9,
                "drifted coordinate {j}"
            );
        }
        assert!((inc.psi - fresh.psi).abs() < 1e-9 * fresh.psi.max(1.0));
    }

    #[test]
    fn rebuild_threshold_keeps_accuracy() {
        let (c, d) = random_system(17, 8, 2);
        let r = random_weights(18, 8);
        let mut oracle = WeightedOracle::new(c.clone(), d.clone(), r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..(REBUILD_EVERY * 2 + 10) {
            let e = rng.random_range(0..8);
            let v = rng.random::<f64>() * 10.0 + 0.01;
            oracle.set_weight(e, v).unwrap();
        }
        let inc = oracle.solve().unwrap();
        let fresh = solve_direct(&c, &d, oracle.weights()).unwrap();
        assert!((inc.psi - fresh.psi).abs() < 1e-8 * fresh.psi.max(1.0));
    }

    #[test]
    fn partial_rows_match_full_solve() {
        let (c, d) = random_system(23, 15, 3);
        let r = random_weights(24, 15);
        let oracle = WeightedOracle::new(c, d, r).unwrap();
        let full = oracle.solve().unwrap();
        let rows = [0usize, 7, 14];
        let part = oracle.solve_rows(QueryRows::Subset(&rows)).unwrap();
        assert!(part.psi.is_none());
        for (e, v) in part.residual_entries {
            assert!((v - full.residual_u[e]).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_is_monotone_in_weights() {
        let (c, d) = random_system(31, 10, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for trial in 0..40 {
            let r = random_weights(100 + trial, 10);
            let base = solve_direct(&c, &d, &r).unwrap().psi;
            let mut bumped = r.clone();
            let e = rng.random_range(0..10);
            bumped[e] += rng.random::<f64>() * 2.0;
            let after = solve_direct(&c, &d, &bumped).unwrap().psi;
            assert!(
                after >= base - 1e-10 * base.max(1.0),
                "raising a weight lowered the energy"
            );
        }
    }

    #[test]
    fn energy_drop_bounded_by_relative_weight_change() {
        // For r' with |r' - r| ≤ r' elementwise, the energy at r' stays
        // above the old energy minus Σ ((r - r'_e)/r'_e) r'_e u'² in the
        // rearranged form below; checked against fresh solves.
        let (c, d) = random_system(51, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..40 {
            let r = random_weights(rng.random::<u64>(), 12);
            let mut r_new = r.clone();
            for e in 0..12 {
                // Multiplicative change in [0.55, 1.8] keeps |r' - r| ≤ r'.
                let f = 0.55 + rng.random::<f64>() * 1.25;
                r_new[e] = r[e] * f;
            }
            let old = solve_direct(&c, &d, &r).unwrap();
            let new = solve_direct(&c, &d, &r_new).unwrap();
            let correction: f64 = (0..12)
                .map(|e| ((r_new[e] - r[e]) / r_new[e]) * r[e] * old.residual_u[e].powi(2))
                .sum();
            assert!(
                new.psi >= old.psi + correction - 1e-9 * old.psi.max(1.0),
                "energy change bound violated: {} < {} + {}",
                new.psi,
                old.psi,
                correction
            );
        }
    }

    #[test]
    fn maintained_single_update_matches_direct() {
        let (c, d) = random_system(61, 6, 2);
        let mut r = random_weights(62, 6);
        let mut oracle =
            MaintainedOracle::new(c.clone(), d.clone(), r.clone(), MaintainerConfig::default())
                .unwrap();
        r[3] *= 2.5;
        let got = oracle
            .update_and_solve(&[(3, r[3])], QueryRows::All)
            .unwrap();
        let want = solve_direct(&c, &d, &r).unwrap();
        for j in 0..2 {
            assert!((got.delta[j] - want.delta[j]).abs() < 1e-8);
        }
        for (e, v) in &got.residual_entries {
            assert!((v - want.residual_u[*e]).abs() < 1e-8);
        }
        assert!((got.psi.unwrap() - want.psi).abs() < 1e-8 * want.psi.max(1.0));
    }

    #[test]
    fn maintained_empty_update_reproduces_initial_solve() {
        let (c, d) = random_system(63, 9, 3);
        let r = random_weights(64, 9);
        let mut oracle =
            MaintainedOracle::new(c.clone(), d.clone(), r.clone(), MaintainerConfig::default())
                .unwrap();
        let got = oracle.update_and_solve(&[], QueryRows::All).unwrap();
        let want = solve_direct(&c, &d, &r).unwrap();
        for j in 0..3 {
            assert!((got.delta[j] - want.delta[j]).abs() < 1e-10);
        }
        assert_eq!(oracle.counters().resets, 0);
    }

    fn drive_random_batches(two_level: bool) {
        let rows = 14;
        let dim = 3;
        let (c, d) = random_system(71, rows, dim);
        let r0 = random_weights(72, rows);
        let cfg = MaintainerConfig {
            two_level,
            ..MaintainerConfig::default()
        };
        let mut oracle = MaintainedOracle::new(c.clone(), d.clone(), r0.clone(), cfg).unwrap();
        let mut r = r0;
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for step in 0..100 {
            let batch: Vec<(usize, f64)> = (0..rng.random_range(1..5))
                .map(|_| {
                    let e = rng.random_range(0..rows);
                    let v = rng.random::<f64>() * 4.0 + 0.05;
                    (e, v)
                })
                .collect();
            for &(e, v) in &batch {
                r[e] = v;
            }
            let subset: Vec<usize> = (0..rows).filter(|_| rng.random::<f64>() < 0.4).collect();
            let want = solve_direct(&c, &d, &r).unwrap();
            if subset.is_empty() || step % 7 == 0 {
                let got = oracle.update_and_solve(&batch, QueryRows::All).unwrap();
                assert!(
                    (got.psi.unwrap() - want.psi).abs() < 1e-8 * want.psi.max(1.0),
                    "energy drift at step {step}"
                );
                for j in 0..dim {
                    assert!((got.delta[j] - want.delta[j]).abs() < 1e-8);
                }
            } else {
                let got = oracle
                    .update_and_solve(&batch, QueryRows::Subset(&subset))
                    .unwrap();
                for j in 0..dim {
                    assert!((got.delta[j] - want.delta[j]).abs() < 1e-8);
                }
                for (e, v) in got.residual_entries {
                    assert!(
                        (v - want.residual_u[e]).abs() < 1e-8,
                        "row {e} residual drift at step {step}"
                    );
                }
            }
        }
        assert!(!oracle.is_degraded());
    }

    #[test]
    fn maintained_batches_match_direct_one_level() {
        drive_random_batches(false);
    }

    #[test]
    fn maintained_batches_match_direct_two_level() {
        drive_random_batches(true);
    }

    #[test]
    fn maintained_solution_is_stationary() {
        let (c, d) = random_system(81, 10, 3);
        let r0 = random_weights(82, 10);
        let mut oracle =
            MaintainedOracle::new(c.clone(), d.clone(), r0, MaintainerConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..20 {
            let e = rng.random_range(0..10);
            let v = rng.random::<f64>() * 3.0 + 0.1;
            let got = oracle.update_and_solve(&[(e, v)], QueryRows::All).unwrap();
            // Gradient of the weighted energy: 2 CᵀR u (plus the tiny shift).
            let r = oracle.weights();
            let mut grad = Array1::<f64>::zeros(3);
            for (row, &u_e) in got.residual_entries.iter().map(|(e, v)| (*e, v)) {
                for j in 0..3 {
                    grad[j] += 2.0 * c[(row, j)] * r[row] * u_e;
                }
            }
            let scale = got.psi.unwrap().max(1.0);
            for j in 0..3 {
                assert!(
                    grad[j].abs() < 1e-8 * scale,
                    "gradient coordinate {j} = {} not stationary",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn maintained_reset_policy_fires() {
        let rows = 16;
        let (c, d) = random_system(91, rows, 2);
        let r0 = random_weights(92, rows);
        // rows^a0 = 2 forces a reset as soon as two factor columns pile up.
        let cfg = MaintainerConfig {
            a0: 0.25,
            a1: 0.1,
            ridge_floor: DEFAULT_RIDGE_FLOOR,
            two_level: true,
        };
        let mut oracle = MaintainedOracle::new(c.clone(), d.clone(), r0.clone(), cfg).unwrap();
        let mut r = r0;
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        for _ in 0..12 {
            let e = rng.random_range(0..rows);
            r[e] = rng.random::<f64>() * 4.0 + 0.1;
            oracle.update_and_solve(&[(e, r[e])], QueryRows::All).unwrap();
        }
        let counters = oracle.counters();
        assert!(counters.resets > 0, "reset threshold never fired");
        assert!(counters.queries >= 12);
        assert!(counters.scalar_ops.reset > 0);
        let want = solve_direct(&c, &d, &r).unwrap();
        let got = oracle.update_and_solve(&[], QueryRows::All).unwrap();
        assert!((got.psi.unwrap() - want.psi).abs() < 1e-8 * want.psi.max(1.0));
    }

    #[test]
    fn maintained_rejects_stale_coordinates() {
        let (c, d) = random_system(95, 5, 2);
        let r = random_weights(96, 5);
        let mut oracle = MaintainedOracle::new(c, d, r, MaintainerConfig::default()).unwrap();
        let got = oracle.update_and_solve(&[(5, 1.0)], QueryRows::All);
        assert!(matches!(got, Err(Error::StaleMaintainer(_))));
        let got = oracle.update_and_solve(&[(2, -1.0)], QueryRows::All);
        assert!(matches!(got, Err(Error::PositivityBreach { coord: 2, .. })));
    }

    #[test]
    fn implicit_sum_matches_per_step_direct_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(311);
        for trial in 0..12 {
            let rows = rng.random_range(8..20);
            let dim = rng.random_range(2..5);
            let (c, d) = random_system(1000 + trial, rows, dim);
            let mut r = random_weights(2000 + trial, rows);
            let cfg = MaintainerConfig {
                a0: 0.6,
                a1: 0.4,
                two_level: true,
                ..MaintainerConfig::default()
            };
            let mut implicit =
                ImplicitSum::new(c.clone(), d.clone(), r.clone(), cfg).unwrap();
            let mut sum_true = solve_direct(&c, &d, &r).unwrap().delta;
            for _ in 0..40 {
                let updates: Vec<(usize, f64)> = if rng.random::<f64>() < 0.2 {
                    Vec::new()
                } else {
                    let count = rng.random_range(1..4);
                    (0..count)
                        .map(|_| {
                            let e = rng.random_range(0..rows);
                            (e, r[e] * rng.random_range(0.5..2.0))
                        })
                        .collect()
                };
                for &(e, value) in &updates {
                    r[e] = value;
                }
                implicit.note_step(&updates).unwrap();
                sum_true = sum_true + solve_direct(&c, &d, &r).unwrap().delta;
            }
            let got = implicit.query_sum();
            assert_eq!(implicit.steps(), 41);
            assert!((got[dim] - 41.0).abs() < 1e-8);
            let scale = sum_true.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
            for (a, b) in got.iter().take(dim).zip(sum_true.iter()) {
                assert!((a - b).abs() < 1e-8 * scale, "trial {trial}: {a} vs {b}");
            }
        }
    }
}
