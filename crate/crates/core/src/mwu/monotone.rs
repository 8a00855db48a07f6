//! Width-reduced solver with monotone weights, and the unaccelerated
//! baseline it is benchmarked against.
//!
//! Both run on the original (undoubled) system and average their iterates.
//! The monotone loop keeps a lazily synchronized copy of the resistances;
//! width steps only mark the touched coordinates and let the next selection
//! window catch up, so the approximation stays one iteration stale at most.

use ndarray::Array1;

use crate::error::Result;
use crate::lazy_update::LazyVector;
use crate::potentials::{self, StepKind, TraceRecord};
use crate::problem::Instance;

use super::engine::{
    assemble, exact_shortcircuit, resistances, select_pending, shortcircuit_run, FinishKind,
    Progress, RunAssembly, SolveDriver, Tallies, STOP_MARGIN,
};
use super::{resolve_schedule, AlgoKind, LazySchemeKind, Schedule, SolveBackend, SolverParams,
    SolverRun};

/// Accelerated solver with monotone weight updates. Residual target for the
/// averaged iterate on a normalized instance: 1 + 10ε.
pub fn solve_monotone(
    inst: &Instance,
    params: &SolverParams,
    backend: SolveBackend,
) -> Result<SolverRun> {
    let (psi0, psi0_clamped) = super::psi_zero_of(&inst.c, &inst.target)?;
    let schedule = resolve_schedule(
        AlgoKind::Monotone,
        backend,
        inst.n,
        inst.d_dim,
        psi0,
        psi0_clamped,
        params,
    )?;
    if let Some((x, res)) = exact_shortcircuit(&inst.c, &inst.target)? {
        return Ok(shortcircuit_run(schedule, x, res));
    }
    run_monotone_loop(inst, schedule, backend)
}

fn run_monotone_loop(
    inst: &Instance,
    schedule: Schedule,
    backend: SolveBackend,
) -> Result<SolverRun> {
    let n = inst.n;
    let eps = schedule.epsilon;
    let bound = 1.0 + 10.0 * eps;
    let width_budget = schedule
        .width_budget
        .expect("monotone schedule always carries a width budget");

    let mut w = Array1::<f64>::ones(n);
    let mut phi = potentials::phi(&w);
    let mut r = resistances(&w, phi, eps);
    let mut lazy = match schedule.lazy_scheme {
        LazySchemeKind::Dyadic => LazyVector::dyadic(r.clone(), schedule.delta)?,
        LazySchemeKind::BucketedL3 => {
            let ln_n = schedule.ln_n;
            let zeta = 8.0 * schedule.alpha * schedule.alpha * n as f64 * ln_n.powi(3);
            LazyVector::bucketed(r.clone(), schedule.delta, zeta, schedule.t_rounds)?
        }
    };
    let mut driver = SolveDriver::new(backend, &inst.c, &inst.target, &r, &schedule)?;
    let mut progress = Progress::new(n, inst.d_dim);
    let mut tallies = Tallies::new();
    let mut trace = potentials::PotentialTrace {
        records: Vec::new(),
        psi0: schedule.psi0,
        psi0_clamped: schedule.psi0_clamped,
    };
    // The constructor synced every coordinate; attribute that to the first
    // solve's record.
    let mut pending: Vec<(usize, f64)> = Vec::new();
    let mut rank = n;

    let finish = loop {
        let t = progress.i + progress.k;
        if t >= schedule.max_iters {
            break FinishKind::IterCap;
        }
        if t >= 1 {
            pending = select_pending(&mut lazy, schedule.lazy_scheme, &r, t)?;
            rank = pending.len();
        }
        let out = driver.solve_with(&pending)?;
        pending.clear();
        tallies.note_band(lazy.approx(), &r);
        tallies.note_min_weight(&w);
        let u_max = out.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        if u_max <= schedule.tau {
            trace.push(TraceRecord {
                iter_i: progress.i,
                iter_k: progress.k,
                step: StepKind::Primal,
                phi,
                psi: out.psi,
                width_set_size: 0,
                max_abs_residual: u_max,
                update_rank: rank,
            });
            let avg_res = progress.note_primal(&out.delta, &out.u, &inst.target);
            let r_prev = r.clone();
            for e in 0..n {
                w[e] *= 1.0 + eps * schedule.alpha * out.u[e].abs();
            }
            phi = potentials::phi(&w);
            r = resistances(&w, phi, eps);
            tallies.note_primal_step(&r_prev, &r, schedule.alpha, eps);
            if avg_res <= bound * (1.0 - STOP_MARGIN) {
                break FinishKind::Converged;
            }
            if progress.i >= schedule.t_rounds {
                break FinishKind::NaturalT;
            }
        } else {
            let coords: Vec<usize> = (0..n).filter(|&e| out.u[e].abs() >= schedule.tau).collect();
            trace.push(TraceRecord {
                iter_i: progress.i,
                iter_k: progress.k,
                step: StepKind::Width,
                phi,
                psi: out.psi,
                width_set_size: coords.len(),
                max_abs_residual: u_max,
                update_rank: rank,
            });
            let r_bar = lazy.approx();
            tallies.width_energy.push(
                coords.iter().map(|&e| r_bar[e] * out.u[e] * out.u[e]).sum(),
            );
            let phi_before = phi;
            let r_prev = r.clone();
            for &e in &coords {
                w[e] = (1.0 + eps) * w[e] + eps * eps / n as f64 * phi_before;
            }
            phi = potentials::phi(&w);
            r = resistances(&w, phi, eps);
            tallies.note_width_step(&r_prev, &r);
            lazy.note_width_marks(t, &coords)?;
            progress.k += 1;
            if progress.k > width_budget {
                break FinishKind::WidthCap;
            }
        }
    };

    tallies.sweep_fallbacks = 0;
    let degraded = driver.is_degraded();
    let op_counts = driver.op_counts();
    Ok(assemble(RunAssembly {
        schedule,
        trace,
        tallies,
        progress,
        finish,
        degraded,
        op_counts,
        c: &inst.c,
        target: &inst.target,
        materialized_sum: None,
        contract_bound: bound,
        statistical: false,
    }))
}

/// Unaccelerated baseline: exact weights every iteration, no width steps.
/// Same residual contract as the monotone solver, with the classic
/// step-size schedule; it exists as the comparison point for iteration
/// scaling.
pub fn solve_baseline_unaccelerated(inst: &Instance, params: &SolverParams) -> Result<SolverRun> {
    let (psi0, psi0_clamped) = super::psi_zero_of(&inst.c, &inst.target)?;
    let schedule = resolve_schedule(
        AlgoKind::BaselineUnaccelerated,
        SolveBackend::Direct,
        inst.n,
        inst.d_dim,
        psi0,
        psi0_clamped,
        params,
    )?;
    if let Some((x, res)) = exact_shortcircuit(&inst.c, &inst.target)? {
        return Ok(shortcircuit_run(schedule, x, res));
    }
    let n = inst.n;
    let eps = schedule.epsilon;
    let bound = 1.0 + 10.0 * eps;
    let mut w = Array1::<f64>::ones(n);
    let mut phi = potentials::phi(&w);
    let mut r = resistances(&w, phi, eps);
    let mut driver = SolveDriver::new(SolveBackend::Direct, &inst.c, &inst.target, &r, &schedule)?;
    let mut progress = Progress::new(n, inst.d_dim);
    let mut tallies = Tallies::new();
    let mut trace = potentials::PotentialTrace {
        records: Vec::new(),
        psi0: schedule.psi0,
        psi0_clamped: schedule.psi0_clamped,
    };

    let finish = loop {
        if progress.i >= schedule.max_iters {
            break FinishKind::IterCap;
        }
        let pending: Vec<(usize, f64)> = (0..n).map(|e| (e, r[e])).collect();
        let out = driver.solve_with(&pending)?;
        tallies.note_band(&r, &r);
        tallies.note_min_weight(&w);
        let u_max = out.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        trace.push(TraceRecord {
            iter_i: progress.i,
            iter_k: 0,
            step: StepKind::Primal,
            phi,
            psi: out.psi,
            width_set_size: 0,
            max_abs_residual: u_max,
            update_rank: n,
        });
        let avg_res = progress.note_primal(&out.delta, &out.u, &inst.target);
        let r_prev = r.clone();
        for e in 0..n {
            w[e] *= 1.0 + eps * schedule.alpha * out.u[e].abs();
        }
        phi = potentials::phi(&w);
        r = resistances(&w, phi, eps);
        tallies.note_primal_step(&r_prev, &r, schedule.alpha, eps);
        if avg_res <= bound * (1.0 - STOP_MARGIN) {
            break FinishKind::Converged;
        }
        if progress.i >= schedule.t_rounds {
            break FinishKind::NaturalT;
        }
    };

    let degraded = driver.is_degraded();
    let op_counts = driver.op_counts();
    Ok(assemble(RunAssembly {
        schedule,
        trace,
        tallies,
        progress,
        finish,
        degraded,
        op_counts,
        c: &inst.c,
        target: &inst.target,
        materialized_sum: None,
        contract_bound: bound,
        statistical: false,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mwu::Status;
    use crate::problem::{generate, Distribution};
    use ndarray::array;

    fn two_row() -> Instance {
        // min_x max(|x − 0|, |x − 2|): optimum 1 at x = 1.
        Instance::new(array![[1.0], [1.0]], array![0.0, 2.0], None).unwrap()
    }

    #[test]
    fn two_row_instance_meets_the_residual_contract() {
        let inst = two_row();
        let params = SolverParams::new(0.1, 7);
        let run = solve_monotone(&inst, &params, SolveBackend::Direct).unwrap();
        assert!(run.residual_inf <= 2.0, "residual {}", run.residual_inf);
        assert_eq!(run.status, Status::Ok);
        assert!(run.iterations.primal >= 1);
        assert!((inst.linf_residual(&run.x_hat) - run.residual_inf).abs() < 1e-12);
    }

    #[test]
    fn in_span_target_short_circuits() {
        let c = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let x_true = array![2.0, -1.0];
        let target = c.dot(&x_true);
        let inst = Instance::new(c, target, None).unwrap();
        let params = SolverParams::new(0.1, 7);
        let run = solve_monotone(&inst, &params, SolveBackend::Direct).unwrap();
        assert!(run.residual_inf <= 1e-8);
        assert_eq!(run.iterations.primal, 0);
        assert_eq!(run.iterations.width, 0);
        assert!(run.trace.records.is_empty());
    }

    #[test]
    fn random_normalized_instances_converge_within_budgets() {
        let params = SolverParams::new(0.1, 0);
        for seed in 0..20u64 {
            let inst = crate::mwu::normalized_gaussian(seed, 24 + (seed as usize % 3) * 8, 3);
            let run = solve_monotone(&inst, &params, SolveBackend::Direct).unwrap();
            assert!(
                run.residual_inf <= 2.0,
                "seed {seed}: residual {}",
                run.residual_inf
            );
            let sched = &run.schedule;
            assert!(run.iterations.primal <= sched.t_rounds);
            assert!(run.iterations.width <= sched.width_budget.unwrap() + 1);
            assert!(run.stability_report.max_band_violation <= sched.delta + 1e-12);
            // Monotone updates never shrink a weight below its start.
            assert!(run.stability_report.min_weight_seen >= 1.0 - 1e-15);
        }
    }

    #[test]
    fn tiny_width_threshold_exhausts_the_width_budget() {
        // An unnormalized instance (optimum 5) with τ forced below the
        // residual scale: every iteration is a width step until the cap.
        let inst = Instance::new(array![[1.0], [1.0]], array![0.0, 10.0], None).unwrap();
        let mut params = SolverParams::new(0.25, 3);
        params.tau = Some(0.5);
        params.max_iters = Some(10_000);
        let run = solve_monotone(&inst, &params, SolveBackend::Direct).unwrap();
        assert_eq!(run.status, Status::WidthCap);
        let budget = run.schedule.width_budget.unwrap();
        assert_eq!(run.iterations.width, budget + 1);
        assert!(run
            .trace
            .records
            .iter()
            .any(|rec| rec.step == StepKind::Width && rec.width_set_size > 0));
        assert_eq!(run.stability_report.width_energy.len(), run.iterations.width as usize);
    }

    #[test]
    fn capped_run_reports_executed_counts_and_best_average() {
        let inst = Instance::new(array![[1.0], [1.0]], array![0.0, 6.0], None).unwrap();
        let mut params = SolverParams::new(0.1, 3);
        params.max_iters = Some(12);
        let run = solve_monotone(&inst, &params, SolveBackend::Direct).unwrap();
        assert_eq!(run.status, Status::IterCap);
        assert_eq!(run.iterations.primal + run.iterations.width, 12);
        // The reported iterate is the best running average, so its residual
        // can only beat the final average's.
        assert!((inst.linf_residual(&run.x_hat) - run.residual_inf).abs() < 1e-12);
        // Optimum is 3; no averaged iterate beats it.
        assert!(run.residual_inf >= 3.0 - 1e-9);
    }

    #[test]
    fn phi_trace_is_monotone_nondecreasing() {
        let inst = two_row();
        let mut params = SolverParams::new(0.2, 11);
        params.max_iters = Some(40);
        let run = solve_monotone(&inst, &params, SolveBackend::Direct).unwrap();
        for pair in run.trace.records.windows(2) {
            assert!(pair[1].phi >= pair[0].phi - 1e-12);
        }
    }

    #[test]
    fn one_level_backend_matches_direct_to_solver_precision() {
        let params_base = SolverParams::new(0.1, 5);
        for seed in [1u64, 2, 3] {
            let inst = generate(seed, 32, 3, Distribution::Gaussian).unwrap();
            // Pin one selection scheme so both backends walk the same
            // lazy-update schedule and the comparison is arithmetic only.
            let mut pa = params_base.clone();
            pa.lazy_scheme = Some(LazySchemeKind::Dyadic);
            pa.max_iters = Some(60);
            let direct = solve_monotone(&inst, &pa, SolveBackend::Direct).unwrap();
            let lazy = solve_monotone(&inst, &pa, SolveBackend::OneLevel).unwrap();
            assert_eq!(direct.iterations.primal, lazy.iterations.primal);
            assert_eq!(direct.iterations.width, lazy.iterations.width);
            for (a, b) in direct.x_hat.iter().zip(lazy.x_hat.iter()) {
                assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{a} vs {b}");
            }
            assert!((direct.residual_inf - lazy.residual_inf).abs() <= 1e-7);
        }
    }

    #[test]
    fn bucketed_scheme_is_the_one_level_default_and_stays_in_band() {
        let inst = generate(9, 40, 3, Distribution::Gaussian).unwrap();
        let mut params = SolverParams::new(0.1, 9);
        params.max_iters = Some(50);
        let run = solve_monotone(&inst, &params, SolveBackend::OneLevel).unwrap();
        assert_eq!(run.schedule.lazy_scheme, LazySchemeKind::BucketedL3);
        assert!(run.stability_report.max_band_violation <= run.schedule.delta + 1e-12);
    }

    #[test]
    fn baseline_matches_contract_and_reports_full_rank_updates() {
        let inst = two_row();
        let params = SolverParams::new(0.1, 7);
        let run = solve_baseline_unaccelerated(&inst, &params).unwrap();
        assert!(run.residual_inf <= 2.0);
        assert_eq!(run.iterations.width, 0);
        for rec in &run.trace.records {
            assert_eq!(rec.update_rank, inst.n);
            assert_eq!(rec.step, StepKind::Primal);
        }
        assert_eq!(run.stability_report.max_band_violation, 0.0);
    }
}
