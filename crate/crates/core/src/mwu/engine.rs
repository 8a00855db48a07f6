//! Shared machinery for the solver loops: the backend-dispatched ℓ2 solve,
//! width-set selection, the dyadic band sweep, running-average progress
//! tracking, and final run assembly.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::inverse_maintenance::OpCounters;
use crate::l2_oracle::{MaintainedOracle, MaintainerConfig, QueryRows, WeightedOracle};
use crate::lazy_update::LazyVector;
use crate::linalg;
use crate::potentials::PotentialTrace;
use crate::{
    mwu::{
        IterationCounts, LazySchemeKind, Schedule, SolveBackend, SolverRun, StabilityReport,
        Status,
    },
};

/// Resistance map r = w + (ε/m)·Φ over the system's own row count.
pub(crate) fn resistances(w: &Array1<f64>, phi: f64, epsilon: f64) -> Array1<f64> {
    let shift = epsilon / w.len() as f64 * phi;
    w + shift
}

/// Run the schedule's selection scheme and return the synced coordinates
/// as (coordinate, approximate value) pairs ready for the solve driver.
pub(crate) fn select_pending(
    lazy: &mut LazyVector,
    scheme: LazySchemeKind,
    r_new: &Array1<f64>,
    index: u64,
) -> Result<Vec<(usize, f64)>> {
    let synced = match scheme {
        LazySchemeKind::Dyadic => lazy.select_vector(r_new, index)?,
        LazySchemeKind::BucketedL3 => lazy.select_vector_l3(r_new, index)?,
    };
    let approx = lazy.approx();
    Ok(synced.into_iter().map(|e| (e, approx[e])).collect())
}

/// Residual contract slack: early stopping triggers strictly inside the
/// bound so the recomputed final residual cannot round across it.
pub(crate) const STOP_MARGIN: f64 = 1e-6;

/// One weighted ℓ2 solve per iteration, through whichever arithmetic the
/// backend selects. Pending weight changes accumulated since the previous
/// solve are applied first.
pub(crate) enum SolveDriver {
    Direct(WeightedOracle),
    Maintained(MaintainedOracle),
}

pub(crate) struct SolveOutput {
    pub delta: Array1<f64>,
    /// Full residual vector CΔ − d.
    pub u: Array1<f64>,
    /// Σ r̄_e u_e² at the weights this solve used.
    pub psi: f64,
}

impl SolveDriver {
    pub fn new(
        backend: SolveBackend,
        c: &Array2<f64>,
        target: &Array1<f64>,
        r0: &Array1<f64>,
        schedule: &Schedule,
    ) -> Result<SolveDriver> {
        match backend {
            SolveBackend::Direct => Ok(SolveDriver::Direct(WeightedOracle::new(
                c.clone(),
                target.clone(),
                r0.clone(),
            )?)),
            SolveBackend::OneLevel | SolveBackend::TwoLevel => {
                let cfg = MaintainerConfig {
                    a0: schedule.a0,
                    a1: schedule.a1,
                    two_level: backend == SolveBackend::TwoLevel,
                    ..MaintainerConfig::default()
                };
                Ok(SolveDriver::Maintained(MaintainedOracle::new(
                    c.clone(),
                    target.clone(),
                    r0.clone(),
                    cfg,
                )?))
            }
        }
    }

    pub fn solve_with(&mut self, pending: &[(usize, f64)]) -> Result<SolveOutput> {
        match self {
            SolveDriver::Direct(oracle) => {
                oracle.set_weights(pending)?;
                let out = oracle.solve()?;
                Ok(SolveOutput {
                    delta: out.delta,
                    u: out.residual_u,
                    psi: out.psi,
                })
            }
            SolveDriver::Maintained(oracle) => {
                let out = oracle.update_and_solve(pending, QueryRows::All)?;
                let mut u = Array1::<f64>::zeros(oracle.rows());
                for (e, v) in out.residual_entries {
                    u[e] = v;
                }
                let psi = out.psi.ok_or_else(|| {
                    Error::InternalConsistency("full solve returned no energy".into())
                })?;
                Ok(SolveOutput {
                    delta: out.delta,
                    u,
                    psi,
                })
            }
        }
    }

    pub fn op_counts(&self) -> OpCounters {
        match self {
            SolveDriver::Direct(_) => OpCounters::default(),
            SolveDriver::Maintained(oracle) => oracle.counters().clone(),
        }
    }

    pub fn is_degraded(&self) -> bool {
        match self {
            SolveDriver::Direct(_) => false,
            SolveDriver::Maintained(oracle) => oracle.is_degraded(),
        }
    }
}

/// Field-wise sum of operation counters (solve maintainer + implicit
/// accumulator on the backends that run both).
pub(crate) fn add_op_counts(a: &OpCounters, b: &OpCounters) -> OpCounters {
    let mut out = a.clone();
    out.resets += b.resets;
    out.partial_resets += b.partial_resets;
    out.queries += b.queries;
    out.scalar_ops.reset += b.scalar_ops.reset;
    out.scalar_ops.partial_reset += b.scalar_ops.partial_reset;
    out.scalar_ops.query += b.scalar_ops.query;
    out
}

/// Maximal budgeted prefix: candidates sorted by descending weight (ties by
/// index), added while the running weight sum stays within `budget`.
/// Returns the prefix and the first rejected coordinate, if any.
pub(crate) fn width_split(
    candidates: &[usize],
    r_bar: &Array1<f64>,
    budget: f64,
) -> (Vec<usize>, Option<usize>) {
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by(|&a, &b| r_bar[b].total_cmp(&r_bar[a]).then(a.cmp(&b)));
    let mut h = Vec::new();
    let mut acc = 0.0;
    for (pos, &e) in order.iter().enumerate() {
        if acc + r_bar[e] <= budget {
            acc += r_bar[e];
            h.push(e);
        } else {
            return (h, Some(order[pos]));
        }
    }
    (h, None)
}

pub(crate) struct SweepOutcome {
    pub coords: Vec<usize>,
    /// Selected band's lower edge; tests pin the sweep order through it.
    #[allow(dead_code)]
    pub zeta: f64,
    pub fallback: bool,
}

/// Dyadic band sweep over H: bands ζ = ρ·2^c for c = 0..=c_ρ, the top band
/// right-open. The first non-empty band whose ℓ3 mass Σ r̄|u|³ reaches
/// ρΨ/ln(n/(ερ)) wins; when the pigeonhole threshold is non-positive (tiny
/// instances make ln(n/(ερ)) negative) any non-empty band passes it. If no
/// band qualifies, the largest-mass non-empty band is used and the event is
/// counted as a fallback.
pub(crate) fn zeta_sweep(
    h: &[usize],
    u: &Array1<f64>,
    r_bar: &Array1<f64>,
    schedule: &Schedule,
    psi: f64,
) -> Result<SweepOutcome> {
    if h.is_empty() {
        return Err(Error::InternalConsistency(
            "width band sweep over an empty heavy set".into(),
        ));
    }
    let rho = schedule.rho;
    let log_arg = schedule.n as f64 / (schedule.epsilon * rho);
    let threshold = if log_arg > 1.0 {
        rho * psi / log_arg.ln()
    } else {
        0.0
    };
    let mut best: Option<(f64, Vec<usize>, f64)> = None;
    for c in 0..=schedule.c_rho {
        let zeta = 2f64.powi(c as i32) * rho;
        let top = c == schedule.c_rho;
        let band: Vec<usize> = h
            .iter()
            .copied()
            .filter(|&e| {
                let a = u[e].abs();
                a >= zeta && (top || a < 2.0 * zeta)
            })
            .collect();
        if band.is_empty() {
            continue;
        }
        let mass: f64 = band.iter().map(|&e| r_bar[e] * u[e].abs().powi(3)).sum();
        if mass >= threshold {
            return Ok(SweepOutcome {
                coords: band,
                zeta,
                fallback: false,
            });
        }
        if best.as_ref().is_none_or(|(m, _, _)| mass > *m) {
            best = Some((mass, band, zeta));
        }
    }
    let (_, coords, zeta) = best.ok_or_else(|| {
        Error::InternalConsistency("heavy set missed every width band".into())
    })?;
    Ok(SweepOutcome {
        coords,
        zeta,
        fallback: true,
    })
}

/// Running average and its residual, tracked in O(rows) per primal step.
pub(crate) struct Progress {
    pub x_sum: Array1<f64>,
    /// Σ CΔ over primal steps, so the running average's residual needs no
    /// solve: residual_e(x_sum/i) = s_sum_e/i − d_e.
    s_sum: Array1<f64>,
    pub i: u64,
    pub k: u64,
    best_res: f64,
    best_x_sum: Array1<f64>,
    best_i: u64,
}

impl Progress {
    pub fn new(rows: usize, d_dim: usize) -> Progress {
        Progress {
            x_sum: Array1::zeros(d_dim),
            s_sum: Array1::zeros(rows),
            i: 0,
            k: 0,
            best_res: f64::INFINITY,
            best_x_sum: Array1::zeros(d_dim),
            best_i: 0,
        }
    }

    /// Absorb a primal step; returns the running average's residual.
    pub fn note_primal(
        &mut self,
        delta: &Array1<f64>,
        u: &Array1<f64>,
        target: &Array1<f64>,
    ) -> f64 {
        self.x_sum += delta;
        self.i += 1;
        let inv = 1.0 / self.i as f64;
        let mut res = 0.0f64;
        for e in 0..u.len() {
            self.s_sum[e] += u[e] + target[e];
            res = res.max((self.s_sum[e] * inv - target[e]).abs());
        }
        if res < self.best_res {
            self.best_res = res;
            self.best_x_sum.assign(&self.x_sum);
            self.best_i = self.i;
        }
        res
    }

    /// Final average: the full-run average normally, the best running
    /// average when a cap cut the run short.
    pub fn average(&self, capped: bool) -> Array1<f64> {
        let (sum, count) = if capped {
            (&self.best_x_sum, self.best_i)
        } else {
            (&self.x_sum, self.i)
        };
        if count == 0 {
            Array1::zeros(sum.len())
        } else {
            sum / count as f64
        }
    }

    pub fn average_count(&self, capped: bool) -> u64 {
        if capped {
            self.best_i
        } else {
            self.i
        }
    }

    pub fn defining_sum(&self, capped: bool) -> &Array1<f64> {
        if capped {
            &self.best_x_sum
        } else {
            &self.x_sum
        }
    }
}

/// Instrumentation tallies the loops feed and [`StabilityReport`] is built
/// from.
pub(crate) struct Tallies {
    pub primal_l3_mass: f64,
    pub width_l3_mass: f64,
    pub primal_l2_per_step: Vec<f64>,
    pub fake_l2_per_step: Vec<f64>,
    pub max_band_violation: f64,
    pub sweep_fallbacks: u64,
    pub min_weight_seen: f64,
    pub width_energy: Vec<f64>,
    fake_cum: Option<FakeDrift>,
}

struct FakeDrift {
    cum: Array1<f64>,
    lo: Array1<f64>,
    hi: Array1<f64>,
}

impl Tallies {
    pub fn new() -> Tallies {
        Tallies {
            primal_l3_mass: 0.0,
            width_l3_mass: 0.0,
            primal_l2_per_step: Vec::new(),
            fake_l2_per_step: Vec::new(),
            max_band_violation: 0.0,
            sweep_fallbacks: 0,
            min_weight_seen: f64::INFINITY,
            width_energy: Vec::new(),
            fake_cum: None,
        }
    }

    pub fn note_band(&mut self, r_bar: &Array1<f64>, r: &Array1<f64>) {
        let mut worst = 0.0f64;
        for e in 0..r.len() {
            worst = worst.max((r_bar[e] / r[e]).ln().abs());
        }
        self.max_band_violation = self.max_band_violation.max(worst);
    }

    pub fn note_min_weight(&mut self, w: &Array1<f64>) {
        for &v in w {
            if v < self.min_weight_seen {
                self.min_weight_seen = v;
            }
        }
    }

    /// Primal-step masses over exact resistances: the thresholded ℓ3 form
    /// and the per-step ℓ2 log mass.
    pub fn note_primal_step(&mut self, r_prev: &Array1<f64>, r_next: &Array1<f64>, alpha: f64, eps: f64) {
        let gate = 1.0 + 3.0 * eps * alpha;
        let mut l3 = 0.0;
        let mut l2 = 0.0;
        for e in 0..r_prev.len() {
            let ratio = r_next[e] / r_prev[e];
            let rel = ratio - 1.0;
            if ratio >= gate {
                l3 += rel * rel * rel;
            }
            let lg = ratio.ln();
            l2 += lg * lg;
        }
        self.primal_l3_mass += l3;
        self.primal_l2_per_step.push(l2);
    }

    pub fn note_width_step(&mut self, r_prev: &Array1<f64>, r_next: &Array1<f64>) {
        let mut l3 = 0.0;
        for e in 0..r_prev.len() {
            let rel = r_next[e] / r_prev[e] - 1.0;
            l3 += rel * rel * rel;
        }
        self.width_l3_mass += l3;
    }

    /// Fake-weight step for the robust solver: r̃ already computed by the
    /// caller; records the per-step ℓ2 mass against the pre-step exact
    /// resistances and extends the per-coordinate drift envelope.
    pub fn note_fake_step(
        &mut self,
        r_prev: &Array1<f64>,
        r_next: &Array1<f64>,
        r_fake: &Array1<f64>,
    ) {
        let rows = r_prev.len();
        let drift = self.fake_cum.get_or_insert_with(|| FakeDrift {
            cum: Array1::zeros(rows),
            lo: Array1::zeros(rows),
            hi: Array1::zeros(rows),
        });
        let mut l2 = 0.0;
        for e in 0..rows {
            let fake = r_fake[e].max(f64::MIN_POSITIVE);
            let lg = (fake / r_prev[e]).ln();
            l2 += lg * lg;
            drift.cum[e] += (fake / r_next[e]).ln();
            if drift.cum[e] < drift.lo[e] {
                drift.lo[e] = drift.cum[e];
            }
            if drift.cum[e] > drift.hi[e] {
                drift.hi[e] = drift.cum[e];
            }
        }
        self.fake_l2_per_step.push(l2);
    }

    fn fake_drift_max(&self) -> f64 {
        match &self.fake_cum {
            None => 0.0,
            Some(d) => {
                let mut worst = 0.0f64;
                for e in 0..d.cum.len() {
                    worst = worst.max(d.hi[e] - d.lo[e]);
                }
                worst
            }
        }
    }
}

/// How a loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FinishKind {
    /// Running average reached the residual target.
    Converged,
    /// The primal budget T completed.
    NaturalT,
    IterCap,
    WidthCap,
}

pub(crate) struct RunAssembly<'a> {
    pub schedule: Schedule,
    pub trace: PotentialTrace,
    pub tallies: Tallies,
    pub progress: Progress,
    pub finish: FinishKind,
    pub degraded: bool,
    pub op_counts: OpCounters,
    pub c: &'a Array2<f64>,
    pub target: &'a Array1<f64>,
    /// Replace the explicit average with an externally materialized sum
    /// (implicit accumulation); the explicit sum still sets the gap field.
    pub materialized_sum: Option<Array1<f64>>,
    /// Residual bound the statistical contract allows (robust runs get
    /// extra sketch slack).
    pub contract_bound: f64,
    /// Whether missing the contract is a statistical failure (sketch-driven
    /// run) rather than an iteration shortfall.
    pub statistical: bool,
}

pub(crate) fn assemble(parts: RunAssembly<'_>) -> SolverRun {
    let RunAssembly {
        schedule,
        trace,
        tallies,
        progress,
        finish,
        degraded,
        op_counts,
        c,
        target,
        materialized_sum,
        contract_bound,
        statistical,
    } = parts;
    let capped = matches!(finish, FinishKind::IterCap | FinishKind::WidthCap);
    let count = progress.average_count(capped);
    let explicit_sum = progress.defining_sum(capped);
    let (x_hat, mut averaging_gap) = match materialized_sum {
        Some(sum) if count > 0 && !capped => {
            let x = &sum / count as f64;
            let gap = sum
                .iter()
                .zip(explicit_sum.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            (x, gap)
        }
        _ => (progress.average(capped), 0.0),
    };
    if count > 0 {
        let roundoff = x_hat
            .iter()
            .zip(explicit_sum.iter())
            .fold(0.0f64, |m, (x, s)| m.max((x * count as f64 - s).abs()));
        averaging_gap = averaging_gap.max(roundoff.min(f64::INFINITY));
    }

    let mut residual = 0.0f64;
    let fitted = c.dot(&x_hat);
    for e in 0..target.len() {
        residual = residual.max((fitted[e] - target[e]).abs());
    }

    let mut status = Status::Ok;
    match finish {
        FinishKind::WidthCap => status = status.worse(Status::WidthCap),
        FinishKind::IterCap => status = status.worse(Status::IterCap),
        FinishKind::Converged => {}
        FinishKind::NaturalT => {
            if residual > contract_bound + 1e-9 {
                status = status.worse(if statistical {
                    Status::StatisticalFailure
                } else {
                    Status::IterCap
                });
            }
        }
    }
    if degraded {
        status = status.worse(Status::DegradedWoodbury);
    }
    if schedule.psi0_clamped {
        status = status.worse(Status::Psi0Clamped);
    }

    let stability_report = StabilityReport {
        primal_l3_mass: tallies.primal_l3_mass,
        width_l3_mass: tallies.width_l3_mass,
        fake_drift_max: tallies.fake_drift_max(),
        primal_l2_per_step: tallies.primal_l2_per_step,
        fake_l2_per_step: tallies.fake_l2_per_step,
        max_band_violation: tallies.max_band_violation,
        sweep_fallbacks: tallies.sweep_fallbacks,
        min_weight_seen: if tallies.min_weight_seen.is_finite() {
            tallies.min_weight_seen
        } else {
            0.0
        },
        width_energy: tallies.width_energy,
        averaging_gap,
    };

    SolverRun {
        x_hat,
        iterations: IterationCounts {
            primal: progress.i,
            width: progress.k,
        },
        trace,
        stability_report,
        op_counts,
        status,
        residual_inf: residual,
        schedule,
    }
}

/// Exact least-squares short circuit: when the target is (numerically) in
/// the column span, the ℓ2 solution already solves the ℓ∞ problem.
pub(crate) fn exact_shortcircuit(
    c: &Array2<f64>,
    target: &Array1<f64>,
) -> Result<Option<(Array1<f64>, f64)>> {
    let x = linalg::lstsq(c, target)?;
    let fitted = c.dot(&x);
    let mut res = 0.0f64;
    let mut scale = 1.0f64;
    for e in 0..target.len() {
        res = res.max((fitted[e] - target[e]).abs());
        scale = scale.max(target[e].abs());
    }
    if res <= 1e-10 * scale {
        Ok(Some((x, res)))
    } else {
        Ok(None)
    }
}

/// A trivial run for the short-circuit path.
pub(crate) fn shortcircuit_run(schedule: Schedule, x: Array1<f64>, residual: f64) -> SolverRun {
    let status = if schedule.psi0_clamped {
        Status::Psi0Clamped
    } else {
        Status::Ok
    };
    SolverRun {
        x_hat: x,
        iterations: IterationCounts::default(),
        trace: PotentialTrace {
            records: Vec::new(),
            psi0: schedule.psi0,
            psi0_clamped: schedule.psi0_clamped,
        },
        stability_report: StabilityReport {
            min_weight_seen: 1.0,
            ..StabilityReport::default()
        },
        op_counts: OpCounters::default(),
        status,
        residual_inf: residual,
        schedule,
    }
}
