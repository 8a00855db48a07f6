//! Width-reduced multiplicative-weights solvers for ℓ∞ regression.
//!
//! Four iteration schemes share one skeleton — solve a weighted ℓ2
//! subproblem, take a primal step when the residual is tame, otherwise
//! inflate the weights of the offending coordinates — and differ in how
//! weights move and how much staleness the bookkeeping tolerates:
//!
//! * [`solve_monotone`]: weights only grow; undoubled system; the lazy
//!   resistance approximation refreshes on a dyadic (or bucketed) schedule.
//! * [`solve_baseline_unaccelerated`]: primal-only reference scheme with
//!   exact resistances, the √n-iteration baseline the bench compares against.
//! * [`solve_nonmonotone_stable`]: signed steps on the doubled system with
//!   asymmetric rates, an ℓ3 trigger for width steps, and banded width
//!   updates.
//! * [`solve_nonmonotone_robust`]: the stable scheme driven by sketched
//!   residuals, heavy-hitter width candidates, and optional implicit
//!   solution accumulation.
//! * [`solve_nonmonotone_opt`]: exact-resistance variant with γ-scaled
//!   single-coordinate overflow updates, kept to cross-validate the stable
//!   scheme.
//!
//! [`solve_auto`] wraps any of them in a geometric search over the unknown
//! optimum so callers need not pre-normalize.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::inverse_maintenance::OpCounters;
use crate::potentials::{psi_zero, PotentialTrace};

mod auto;
mod engine;
mod monotone;
mod nonmonotone;
mod robust;

pub use auto::solve_auto;
pub use monotone::{solve_baseline_unaccelerated, solve_monotone};
pub use nonmonotone::{solve_nonmonotone_opt, solve_nonmonotone_stable};
pub use robust::solve_nonmonotone_robust;

/// Which solver family a schedule is resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoKind {
    Monotone,
    Stable,
    Robust,
    Opt,
    BaselineUnaccelerated,
}

impl AlgoKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgoKind::Monotone => "monotone",
            AlgoKind::Stable => "stable",
            AlgoKind::Robust => "robust",
            AlgoKind::Opt => "opt",
            AlgoKind::BaselineUnaccelerated => "baseline-unaccelerated",
        }
    }

    pub fn from_name(name: &str) -> Result<AlgoKind> {
        match name {
            "monotone" => Ok(AlgoKind::Monotone),
            "stable" => Ok(AlgoKind::Stable),
            "robust" => Ok(AlgoKind::Robust),
            "opt" => Ok(AlgoKind::Opt),
            "baseline-unaccelerated" => Ok(AlgoKind::BaselineUnaccelerated),
            other => Err(Error::InvalidInstance(format!(
                "unknown algorithm '{other}' (expected monotone|stable|robust|opt|baseline-unaccelerated)"
            ))),
        }
    }
}

/// Linear-algebra path for the per-iteration ℓ2 solves. The resistance
/// approximation schedule is a property of the algorithm, not the backend,
/// so backends change arithmetic, never iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveBackend {
    /// Fresh normal-equation solve every iteration.
    Direct,
    /// Single-level incremental inverse with full resets.
    OneLevel,
    /// Two-level incremental inverse with partial resets; the robust solver
    /// additionally accumulates its solution implicitly on this backend.
    TwoLevel,
}

impl SolveBackend {
    pub fn name(self) -> &'static str {
        match self {
            SolveBackend::Direct => "direct",
            SolveBackend::OneLevel => "one-level",
            SolveBackend::TwoLevel => "two-level",
        }
    }

    pub fn from_name(name: &str) -> Result<SolveBackend> {
        match name {
            "direct" => Ok(SolveBackend::Direct),
            "one-level" | "one_level" => Ok(SolveBackend::OneLevel),
            "two-level" | "two_level" => Ok(SolveBackend::TwoLevel),
            other => Err(Error::InvalidInstance(format!(
                "unknown backend '{other}' (expected direct|one-level|two-level)"
            ))),
        }
    }
}

/// Refresh schedule for the lazily maintained resistances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LazySchemeKind {
    /// Dyadic log-ratio windows; works for any positive sequence.
    Dyadic,
    /// Bucketed ℓ3-mass windows; requires coordinatewise monotone
    /// resistances and pairs with the one-level backend.
    BucketedL3,
}

impl LazySchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            LazySchemeKind::Dyadic => "dyadic",
            LazySchemeKind::BucketedL3 => "bucketed-l3",
        }
    }
}

/// Caller-facing knobs. Every schedule quantity the formulas produce can be
/// overridden; `None` means "use the formula with unit constants and
/// natural logs".
#[derive(Debug, Clone)]
pub struct SolverParams {
    /// Target slack; the approximation contract is 1+10ε. Must lie in
    /// (0, 1/2).
    pub epsilon: f64,
    /// Master seed; all sketch randomness derives from it.
    pub seed: u64,
    /// Approximation band for lazy resistances.
    pub delta: Option<f64>,
    /// Width/iteration trade-off exponent.
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    /// Primal iteration budget T.
    pub t_rounds: Option<u64>,
    /// Sketch rows for the robust solver.
    pub b: Option<usize>,
    /// Number of dyadic width bands minus one.
    pub c_rho: Option<u32>,
    /// Slack constant in the robust primal test.
    pub c3: Option<f64>,
    /// Safety cap on total loop iterations (primal + width).
    pub max_iters: Option<u64>,
    /// Full-reset exponent for incremental backends.
    pub a0: Option<f64>,
    /// Partial-reset exponent for the two-level backend.
    pub a1: Option<f64>,
    /// Force a refresh schedule instead of the per-backend default.
    pub lazy_scheme: Option<LazySchemeKind>,
    /// Use the exact ℓ3 mass in the robust primal test (default) instead of
    /// the max-stability sketch estimate.
    pub exact_l3: bool,
    /// Estimate Ψ through a JL sketch in the robust solver's tests instead
    /// of reading the exact weighted energy.
    pub jl_psi: bool,
    /// Re-randomize the heavy-hitter sketch at every width step instead of
    /// holding one matrix for the whole run.
    pub refresh_hh: bool,
}

impl SolverParams {
    pub fn new(epsilon: f64, seed: u64) -> SolverParams {
        SolverParams {
            epsilon,
            seed,
            delta: None,
            eta: None,
            alpha: None,
            tau: None,
            rho: None,
            t_rounds: None,
            b: None,
            c_rho: None,
            c3: None,
            max_iters: None,
            a0: None,
            a1: None,
            lazy_scheme: None,
            exact_l3: true,
            jl_psi: false,
            refresh_hh: false,
        }
    }
}

/// Fully resolved run configuration: every formula evaluated, every
/// override applied. This is what reports emit as `params_used`.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub algo: AlgoKind,
    /// Original row count (formulas use this even on the doubled system).
    pub n: usize,
    /// Rows the solver iterates over (n, or 2n when doubled).
    pub rows: usize,
    pub d_dim: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub alpha: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub tau: f64,
    pub rho: f64,
    pub t_rounds: u64,
    /// Hard width-step budget; only the monotone scheme has one.
    pub width_budget: Option<u64>,
    /// Sketch rows; zero for solvers that do not sketch.
    pub b: usize,
    pub c_rho: u32,
    pub c3: f64,
    pub max_iters: u64,
    pub seed: u64,
    pub psi0: f64,
    pub psi0_clamped: bool,
    pub ln_n: f64,
    /// ln(max(n,3)/Ψ₀), the scale-aware log the schedules share.
    pub big_l: f64,
    pub a0: f64,
    pub a1: f64,
    pub lazy_scheme: LazySchemeKind,
    pub exact_l3: bool,
    pub jl_psi: bool,
    pub refresh_hh: bool,
}

/// Outcome classification, ordered here from best to worst; when several
/// apply, the run reports the most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Ψ₀ hit its floor; the scale-aware logs used the clamped value.
    Psi0Clamped,
    /// An incremental inverse fell back to full re-inversion at least once.
    DegradedWoodbury,
    /// Sketch-driven run finished without meeting the residual contract.
    StatisticalFailure,
    /// The iteration cap fired; the best running average is returned.
    IterCap,
    /// The monotone width budget was exhausted (mis-scaled input).
    WidthCap,
    /// The outer optimum search exhausted its bracket.
    SearchFailure,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::IterCap => "iter-cap",
            Status::WidthCap => "width-cap",
            Status::Psi0Clamped => "psi0-clamped",
            Status::DegradedWoodbury => "degraded-woodbury",
            Status::StatisticalFailure => "statistical-failure",
            Status::SearchFailure => "search-failure",
        }
    }

    fn severity(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Psi0Clamped => 1,
            Status::DegradedWoodbury => 2,
            Status::StatisticalFailure => 3,
            Status::IterCap => 4,
            Status::WidthCap => 5,
            Status::SearchFailure => 6,
        }
    }

    /// The more severe of the two.
    pub fn worse(self, other: Status) -> Status {
        if other.severity() > self.severity() {
            other
        } else {
            self
        }
    }
}

/// Primal and width step counts actually executed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationCounts {
    pub primal: u64,
    pub width: u64,
}

/// Measured stability quantities the acceptance harness fits trends on.
/// All masses are over exact resistances, regardless of what the solver's
/// decisions used.
#[derive(Debug, Clone, Default)]
pub struct StabilityReport {
    /// Σ over primal steps of Σ_{e: r′ ≥ r(1+3εα)} ((r′−r)/r)³.
    pub primal_l3_mass: f64,
    /// Σ over width steps of Σ_e ((r′−r)/r)³.
    pub width_l3_mass: f64,
    /// Per primal step: Σ_e ln²(r′_e/r_e).
    pub primal_l2_per_step: Vec<f64>,
    /// Robust only: per primal step Σ_e ln²(r̃′_e/r_e) for the fake-weight
    /// sequence that removes the sketch noise term.
    pub fake_l2_per_step: Vec<f64>,
    /// Robust only: the largest windowed |Σ ln(r̃/r)| over all coordinates
    /// and all windows of primal steps.
    pub fake_drift_max: f64,
    /// Largest |ln(r̄_e/r_e)| observed at any solve.
    pub max_band_violation: f64,
    /// Width steps where no dyadic band met the pigeonhole mass threshold
    /// and the largest-mass band was used instead.
    pub sweep_fallbacks: u64,
    /// Smallest weight coordinate ever seen (positivity witness).
    pub min_weight_seen: f64,
    /// Per width step: Σ over updated coordinates of r̄_e·u_e².
    pub width_energy: Vec<f64>,
    /// max_e |x̂_e·T_done − Σ Δ_e|: zero up to rounding for explicit
    /// accumulation, and the implicit-vs-explicit discrepancy when the
    /// solution is materialized from the implicit accumulator.
    pub averaging_gap: f64,
}

/// A finished solver run.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub x_hat: Array1<f64>,
    pub iterations: IterationCounts,
    pub trace: PotentialTrace,
    pub stability_report: StabilityReport,
    pub op_counts: OpCounters,
    pub status: Status,
    /// ‖Cx̂ − d‖∞ on the system the solver was handed.
    pub residual_inf: f64,
    /// The resolved configuration the run used.
    pub schedule: Schedule,
}

fn positive(value: f64, what: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidInstance(format!(
            "{what} must be positive and finite, got {value}"
        )))
    }
}

fn ceil_u64(x: f64) -> u64 {
    if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x.ceil().max(1.0) as u64
    }
}

/// Evaluate one solver family's schedule at the instance dimensions.
/// `n` is the original row count; doubled solvers still feed the original
/// n into the formulas. Ψ₀ arrives pre-clamped from [`psi_zero`].
pub fn resolve_schedule(
    algo: AlgoKind,
    backend: SolveBackend,
    n: usize,
    d_dim: usize,
    psi0: f64,
    psi0_clamped: bool,
    params: &SolverParams,
) -> Result<Schedule> {
    let eps = params.epsilon;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidScale(eps));
    }
    if n == 0 || d_dim == 0 {
        return Err(Error::InvalidInstance(
            "schedule needs a nonempty system".into(),
        ));
    }
    let nf = (n.max(3)) as f64;
    let ln_n = nf.ln();
    let big_l = (nf / psi0).ln();
    let rows = match algo {
        AlgoKind::Monotone | AlgoKind::BaselineUnaccelerated => n,
        AlgoKind::Stable | AlgoKind::Robust | AlgoKind::Opt => 2 * n,
    };
    let nn = n as f64;

    let eta = match params.eta {
        Some(v) => positive(v, "eta")?,
        None => match algo {
            AlgoKind::Monotone | AlgoKind::Opt => 1.0 / 6.0,
            AlgoKind::Stable | AlgoKind::Robust => 0.1,
            AlgoKind::BaselineUnaccelerated => 0.5,
        },
    };
    let delta = match params.delta {
        Some(v) => positive(v, "delta")?,
        None => match algo {
            AlgoKind::Monotone | AlgoKind::BaselineUnaccelerated => eps / 6.0,
            AlgoKind::Stable | AlgoKind::Robust | AlgoKind::Opt => eps / 100.0,
        },
    };

    // The stable schedule's pseudocode carries an explicit /10 on α; the
    // other formulas instantiate their hidden constants as 1.
    let (alpha_default, tau_default, rho_default) = match algo {
        AlgoKind::Monotone => (
            nn.powf(-0.5 + eta) * eps.cbrt() / big_l,
            nn.cbrt() * eps.powf(-1.0 / 3.0) * big_l,
            f64::INFINITY,
        ),
        AlgoKind::BaselineUnaccelerated => (
            (eps / (2.0 * nn)).sqrt() / (1.0 + eps),
            f64::INFINITY,
            f64::INFINITY,
        ),
        AlgoKind::Stable | AlgoKind::Robust => (
            nn.powf(-0.5 + eta) * eps * ln_n.powf(-4.0 / 3.0) * big_l.powf(-1.0 / 3.0) / 10.0,
            nn.powf(0.5 - eta) * eps.powi(-4) * ln_n.powi(8) * big_l.powi(2),
            nn.powf(0.5 - 3.0 * eta) * eps.powi(-2) * ln_n.powi(4) * big_l,
        ),
        AlgoKind::Opt => (
            nn.powf(-0.5 + eta) * eps.cbrt() / 10.0,
            nn.powf(1.0 - 4.0 * eta) * eps.powf(-1.0 / 3.0),
            nn.powf(0.5 - 3.0 * eta),
        ),
    };
    let alpha = match params.alpha {
        Some(v) => positive(v, "alpha")?,
        None => alpha_default,
    };
    let tau = match params.tau {
        Some(v) => positive(v, "tau")?,
        None => tau_default,
    };
    let rho = match params.rho {
        Some(v) => positive(v, "rho")?,
        None => rho_default,
    };
    let (alpha_plus, alpha_minus) = match algo {
        AlgoKind::Monotone | AlgoKind::BaselineUnaccelerated => (alpha, alpha),
        AlgoKind::Stable | AlgoKind::Robust | AlgoKind::Opt => {
            (alpha, alpha / (1.0 + 2.0 * eps))
        }
    };

    let t_default = match algo {
        AlgoKind::Opt => ceil_u64(big_l / (alpha * eps * eps)),
        _ => ceil_u64(ln_n / (alpha * eps * eps)),
    };
    let t_rounds = match params.t_rounds {
        Some(v) if v >= 1 => v,
        Some(_) => return Err(Error::InvalidInstance("t_rounds must be ≥ 1".into())),
        None => t_default,
    };

    let width_budget = match algo {
        AlgoKind::Monotone => Some(ceil_u64(tau / (eps * eps))),
        _ => None,
    };

    let b = match algo {
        AlgoKind::Robust => {
            let by_formula = (nn.powf(0.5 + eta) * eps.powi(-2) * ln_n).ceil() as usize;
            let by_stability = (nn * alpha * ln_n.powi(4) / eps.powi(3)).ceil() as usize;
            let b = match params.b {
                Some(v) if v >= 1 => v,
                Some(_) => return Err(Error::InvalidInstance("b must be ≥ 1".into())),
                None => by_formula.max(by_stability),
            };
            b.max(1)
        }
        _ => 0,
    };

    let c_rho = match params.c_rho {
        Some(v) => v,
        None => {
            let goal = (nn / eps).sqrt();
            let mut c = 0u32;
            while 2f64.powi(c as i32) * rho < goal && c < 64 {
                c += 1;
            }
            c
        }
    };

    let c3 = match params.c3 {
        Some(v) => positive(v, "c3")?,
        None => {
            if params.exact_l3 {
                1.0
            } else {
                2.0
            }
        }
    };

    let max_iters = match params.max_iters {
        Some(v) if v >= 1 => v,
        Some(_) => return Err(Error::InvalidInstance("max_iters must be ≥ 1".into())),
        None => t_rounds.min(50 * n as u64),
    };

    let a0 = match params.a0 {
        Some(v) => positive(v, "a0")?,
        None => 0.75,
    };
    let a1 = match params.a1 {
        Some(v) => positive(v, "a1")?,
        None => 0.5,
    };

    let lazy_scheme = match params.lazy_scheme {
        Some(v) => v,
        None => match (algo, backend) {
            (AlgoKind::Monotone, SolveBackend::OneLevel) => LazySchemeKind::BucketedL3,
            _ => LazySchemeKind::Dyadic,
        },
    };

    Ok(Schedule {
        algo,
        n,
        rows,
        d_dim,
        epsilon: eps,
        delta,
        eta,
        alpha,
        alpha_plus,
        alpha_minus,
        tau,
        rho,
        t_rounds,
        width_budget,
        b,
        c_rho,
        c3,
        max_iters,
        seed: params.seed,
        psi0,
        psi0_clamped,
        ln_n,
        big_l,
        a0,
        a1,
        lazy_scheme,
        exact_l3: params.exact_l3,
        jl_psi: params.jl_psi,
        refresh_hh: params.refresh_hh,
    })
}

/// Ψ₀ of an original (undoubled) system, clamped and flagged.
pub(crate) fn psi_zero_of(c: &Array2<f64>, target: &Array1<f64>) -> Result<(f64, bool)> {
    psi_zero(c, target)
}

/// Random instance rescaled by its least-squares ℓ∞ residual, which bounds
/// the optimum from above, so the rescaled optimum is at most 1 and the
/// solvers' residual contracts apply.
#[cfg(test)]
pub(crate) fn normalized_gaussian(seed: u64, n: usize, d_dim: usize) -> crate::problem::Instance {
    let inst =
        crate::problem::generate(seed, n, d_dim, crate::problem::Distribution::Gaussian).unwrap();
    let x2 = crate::linalg::lstsq(&inst.c, &inst.target).unwrap();
    inst.normalize(inst.linf_residual(&x2)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_epsilon_at_and_above_half() {
        for eps in [0.5, 0.7, -0.1, 0.0] {
            let p = SolverParams::new(eps, 1);
            let got = resolve_schedule(AlgoKind::Monotone, SolveBackend::Direct, 10, 2, 1.0, false, &p);
            assert!(matches!(got, Err(Error::InvalidScale(_))), "eps {eps}");
        }
    }

    #[test]
    fn monotone_schedule_matches_hand_formulas() {
        let p = SolverParams::new(0.1, 7);
        let s =
            resolve_schedule(AlgoKind::Monotone, SolveBackend::Direct, 100, 4, 1.0, false, &p)
                .unwrap();
        let ln_n = 100f64.ln();
        let alpha = 100f64.powf(-1.0 / 3.0) * 0.1f64.cbrt() / ln_n;
        let tau = 100f64.cbrt() * 0.1f64.powf(-1.0 / 3.0) * ln_n;
        assert!((s.alpha - alpha).abs() < 1e-15);
        assert!((s.tau - tau).abs() < 1e-12);
        assert_eq!(s.t_rounds, (ln_n / (alpha * 0.01)).ceil() as u64);
        assert_eq!(s.width_budget, Some((tau / 0.01).ceil() as u64));
        assert_eq!(s.max_iters, 5000);
        assert_eq!(s.rows, 100);
        assert!((s.delta - 0.1 / 6.0).abs() < 1e-16);
        assert_eq!(s.lazy_scheme, LazySchemeKind::Dyadic);
    }

    #[test]
    fn stable_positivity_precondition_holds_at_defaults() {
        // αρ^{1/3} ≤ ε^{1/3}/(10 n^{1/3}) with equality at the default
        // schedule; a violated precondition would allow weight sign flips.
        for n in [20usize, 100, 512] {
            for eps in [0.05, 0.1, 0.3] {
                let p = SolverParams::new(eps, 1);
                let s = resolve_schedule(AlgoKind::Stable, SolveBackend::Direct, n, 3, 1.0, false, &p)
                    .unwrap();
                let lhs = s.alpha * s.rho.cbrt();
                let rhs = eps.cbrt() / (10.0 * (n as f64).cbrt());
                assert!(lhs <= rhs * (1.0 + 1e-12), "n {n} eps {eps}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn one_level_monotone_defaults_to_bucketed_scheme() {
        let p = SolverParams::new(0.1, 7);
        let s =
            resolve_schedule(AlgoKind::Monotone, SolveBackend::OneLevel, 64, 3, 1.0, false, &p)
                .unwrap();
        assert_eq!(s.lazy_scheme, LazySchemeKind::BucketedL3);
        let forced = SolverParams {
            lazy_scheme: Some(LazySchemeKind::Dyadic),
            ..p
        };
        let s = resolve_schedule(AlgoKind::Monotone, SolveBackend::OneLevel, 64, 3, 1.0, false, &forced)
            .unwrap();
        assert_eq!(s.lazy_scheme, LazySchemeKind::Dyadic);
    }

    #[test]
    fn robust_sketch_width_respects_stability_floor() {
        let p = SolverParams::new(0.15, 1);
        let s =
            resolve_schedule(AlgoKind::Robust, SolveBackend::Direct, 40, 4, 1.0, false, &p)
                .unwrap();
        let nn = 40f64;
        let ln_n = nn.ln();
        let by_formula = (nn.powf(0.6) * 0.15f64.powi(-2) * ln_n).ceil() as usize;
        let by_stability = (nn * s.alpha * ln_n.powi(4) / 0.15f64.powi(3)).ceil() as usize;
        assert_eq!(s.b, by_formula.max(by_stability));
        assert!(s.b >= 1);
    }

    #[test]
    fn zeta_band_count_covers_the_residual_range() {
        // 2^{c_ρ}·ρ ≥ √(n/ε) so the top band's right edge 2^{c_ρ+1}ρ
        // dominates the a-priori residual bound e^{(ε+2δ)/2}√(2n/ε).
        for n in [16usize, 100, 400] {
            for eps in [0.05, 0.2, 0.4] {
                let p = SolverParams::new(eps, 1);
                let s = resolve_schedule(AlgoKind::Stable, SolveBackend::Direct, n, 3, 1.0, false, &p)
                    .unwrap();
                let top = 2f64.powi(s.c_rho as i32) * s.rho;
                assert!(top >= (n as f64 / eps).sqrt());
                let residual_bound =
                    ((eps + 2.0 * s.delta) / 2.0).exp() * (2.0 * n as f64 / eps).sqrt();
                assert!(2.0 * top >= residual_bound, "n {n} eps {eps}");
            }
        }
    }

    #[test]
    fn status_precedence_is_total() {
        use Status::*;
        assert_eq!(Ok.worse(Psi0Clamped), Psi0Clamped);
        assert_eq!(Psi0Clamped.worse(DegradedWoodbury), DegradedWoodbury);
        assert_eq!(DegradedWoodbury.worse(StatisticalFailure), StatisticalFailure);
        assert_eq!(StatisticalFailure.worse(IterCap), IterCap);
        assert_eq!(IterCap.worse(WidthCap), WidthCap);
        assert_eq!(WidthCap.worse(SearchFailure), SearchFailure);
        assert_eq!(WidthCap.worse(Ok), WidthCap);
    }

    #[test]
    fn algo_and_backend_names_round_trip() {
        for algo in [
            AlgoKind::Monotone,
            AlgoKind::Stable,
            AlgoKind::Robust,
            AlgoKind::Opt,
            AlgoKind::BaselineUnaccelerated,
        ] {
            assert_eq!(AlgoKind::from_name(algo.name()).unwrap(), algo);
        }
        for backend in [SolveBackend::Direct, SolveBackend::OneLevel, SolveBackend::TwoLevel] {
            assert_eq!(SolveBackend::from_name(backend.name()).unwrap(), backend);
        }
        assert!(AlgoKind::from_name("fastest").is_err());
    }
}
