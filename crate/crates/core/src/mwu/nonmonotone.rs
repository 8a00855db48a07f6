//! Non-monotone solvers on the doubled system: the lazily synchronized
//! stable solver and the exact-resistance variant with fractional width
//! steps.
//!
//! Both test each iterate's weighted ℓ3 residual mass against 2ρΨ to decide
//! between a primal step (signed rates, weights may shrink) and a width
//! step (heavy coordinates only, capacity-limited by Ψ/τ).

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::lazy_update::LazyVector;
use crate::potentials::{self, StepKind, TraceRecord};
use crate::problem::DoubledInstance;

use super::engine::{
    assemble, exact_shortcircuit, resistances, select_pending, shortcircuit_run, width_split,
    zeta_sweep, FinishKind, Progress, RunAssembly, SolveDriver, Tallies, STOP_MARGIN,
};
use super::{resolve_schedule, AlgoKind, SolveBackend, SolverParams, SolverRun};

/// Signed primal rates: rows pushing the residual up move at α₊, rows
/// pulling it down at the damped α₋, which keeps the products positive
/// whenever the residual stays under the width threshold regime.
fn primal_factor(u: f64, alpha_plus: f64, alpha_minus: f64, eps: f64) -> f64 {
    let rate = if u >= 0.0 { alpha_plus } else { alpha_minus };
    1.0 + eps * rate * u
}

fn apply_primal_weights(
    w: &mut Array1<f64>,
    u: &Array1<f64>,
    alpha_plus: f64,
    alpha_minus: f64,
    eps: f64,
) -> Result<()> {
    for e in 0..w.len() {
        let factor = primal_factor(u[e], alpha_plus, alpha_minus, eps);
        let next = w[e] * factor;
        if !(next > 0.0) || !next.is_finite() {
            return Err(Error::PositivityBreach {
                coord: e,
                value: next,
            });
        }
        w[e] = next;
    }
    Ok(())
}

/// Stable solver: lazy resistance synchronization, prefix-capacity width
/// steps with a dyadic band sweep when the whole heavy set fits.
pub fn solve_nonmonotone_stable(
    inst: &DoubledInstance,
    params: &SolverParams,
    backend: SolveBackend,
) -> Result<SolverRun> {
    let (psi0, psi0_clamped) =
        super::psi_zero_of(&inst.original_c().to_owned(), &inst.original_target().to_owned())?;
    let schedule = resolve_schedule(
        AlgoKind::Stable,
        backend,
        inst.n,
        inst.d_dim,
        psi0,
        psi0_clamped,
        params,
    )?;
    if let Some((x, res)) = exact_shortcircuit(&inst.c_tilde, &inst.d_tilde)? {
        return Ok(shortcircuit_run(schedule, x, res));
    }

    let rows = inst.rows();
    let eps = schedule.epsilon;
    let bound = 1.0 + 10.0 * eps;
    let mut w = Array1::<f64>::ones(rows);
    let mut phi = potentials::phi(&w);
    let mut r = resistances(&w, phi, eps);
    let mut lazy = LazyVector::dyadic(r.clone(), schedule.delta)?;
    let mut driver = SolveDriver::new(backend, &inst.c_tilde, &inst.d_tilde, &r, &schedule)?;
    let mut progress = Progress::new(rows, inst.d_dim);
    let mut tallies = Tallies::new();
    let mut trace = potentials::PotentialTrace {
        records: Vec::new(),
        psi0: schedule.psi0,
        psi0_clamped: schedule.psi0_clamped,
    };
    let mut pending: Vec<(usize, f64)> = Vec::new();

    let finish = loop {
        if progress.i + progress.k >= schedule.max_iters {
            break FinishKind::IterCap;
        }
        let iter_i = progress.i;
        let iter_k = progress.k;
        let out = driver.solve_with(&pending)?;
        pending.clear();
        tallies.note_band(lazy.approx(), &r);
        tallies.note_min_weight(&w);
        let u_max = out.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r_bar = lazy.approx();
        let l3_mass: f64 = (0..rows).map(|e| r_bar[e] * out.u[e].abs().powi(3)).sum();

        if l3_mass <= 2.0 * schedule.rho * out.psi {
            let phi_before = phi;
            let r_prev = r.clone();
            apply_primal_weights(&mut w, &out.u, schedule.alpha_plus, schedule.alpha_minus, eps)?;
            phi = potentials::phi(&w);
            r = resistances(&w, phi, eps);
            tallies.note_primal_step(&r_prev, &r, schedule.alpha, eps);
            let avg_res = progress.note_primal(&out.delta, &out.u, &inst.d_tilde);
            pending = select_pending(&mut lazy, schedule.lazy_scheme, &r, progress.i)?;
            trace.push(TraceRecord {
                iter_i,
                iter_k,
                step: StepKind::Primal,
                phi: phi_before,
                psi: out.psi,
                width_set_size: 0,
                max_abs_residual: u_max,
                update_rank: pending.len(),
            });
            if avg_res <= bound * (1.0 - STOP_MARGIN) {
                break FinishKind::Converged;
            }
            if progress.i >= schedule.t_rounds {
                break FinishKind::NaturalT;
            }
        } else {
            let heavy: Vec<usize> = (0..rows)
                .filter(|&e| out.u[e].abs() >= schedule.rho)
                .collect();
            if heavy.is_empty() {
                return Err(Error::InternalConsistency(
                    "width step fired with no coordinate at the threshold".into(),
                ));
            }
            let budget = out.psi / schedule.tau;
            let (prefix, rejected) = width_split(&heavy, r_bar, budget);
            let updated: Vec<usize> = match rejected {
                Some(extra) => {
                    let mut set = prefix;
                    set.push(extra);
                    set
                }
                None => {
                    let sweep = zeta_sweep(&heavy, &out.u, r_bar, &schedule, out.psi)?;
                    if sweep.fallback {
                        tallies.sweep_fallbacks += 1;
                    }
                    sweep.coords
                }
            };
            tallies.width_energy.push(
                updated.iter().map(|&e| r_bar[e] * out.u[e] * out.u[e]).sum(),
            );
            let phi_before = phi;
            let r_prev = r.clone();
            for &e in &updated {
                w[e] = (1.0 + eps) * w[e] + eps * eps / rows as f64 * phi_before;
            }
            phi = potentials::phi(&w);
            r = resistances(&w, phi, eps);
            tallies.note_width_step(&r_prev, &r);
            lazy.note_width_update(progress.i, &updated, &r)?;
            pending = updated.iter().map(|&e| (e, r[e])).collect();
            trace.push(TraceRecord {
                iter_i,
                iter_k,
                step: StepKind::Width,
                phi: phi_before,
                psi: out.psi,
                width_set_size: updated.len(),
                max_abs_residual: u_max,
                update_rank: updated.len(),
            });
            progress.k += 1;
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
        c: &inst.c_tilde,
        target: &inst.d_tilde,
        materialized_sum: None,
        contract_bound: bound,
        statistical: false,
    }))
}

/// Exact-resistance variant: every iteration refreshes all weights, width
/// steps spend the Ψ/τ capacity on a greedy prefix and close the gap with
/// one fractionally updated coordinate.
pub fn solve_nonmonotone_opt(inst: &DoubledInstance, params: &SolverParams) -> Result<SolverRun> {
    let (psi0, psi0_clamped) =
        super::psi_zero_of(&inst.original_c().to_owned(), &inst.original_target().to_owned())?;
    let schedule = resolve_schedule(
        AlgoKind::Opt,
        SolveBackend::Direct,
        inst.n,
        inst.d_dim,
        psi0,
        psi0_clamped,
        params,
    )?;
    if let Some((x, res)) = exact_shortcircuit(&inst.c_tilde, &inst.d_tilde)? {
        return Ok(shortcircuit_run(schedule, x, res));
    }

    let rows = inst.rows();
    let n0 = schedule.n as f64;
    let eps = schedule.epsilon;
    let bound = 1.0 + 10.0 * eps;
    let mut w = Array1::<f64>::ones(rows);
    let mut phi = potentials::phi(&w);
    let mut r = resistances(&w, phi, eps);
    let mut driver =
        SolveDriver::new(SolveBackend::Direct, &inst.c_tilde, &inst.d_tilde, &r, &schedule)?;
    let mut progress = Progress::new(rows, inst.d_dim);
    let mut tallies = Tallies::new();
    let mut trace = potentials::PotentialTrace {
        records: Vec::new(),
        psi0: schedule.psi0,
        psi0_clamped: schedule.psi0_clamped,
    };

    let finish = loop {
        if progress.i + progress.k >= schedule.max_iters {
            break FinishKind::IterCap;
        }
        let iter_i = progress.i;
        let iter_k = progress.k;
        let pending: Vec<(usize, f64)> = (0..rows).map(|e| (e, r[e])).collect();
        let out = driver.solve_with(&pending)?;
        tallies.note_band(&r, &r);
        tallies.note_min_weight(&w);
        let u_max = out.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let l3_mass: f64 = (0..rows).map(|e| r[e] * out.u[e].abs().powi(3)).sum();

        if l3_mass <= 2.0 * schedule.rho * out.psi {
            trace.push(TraceRecord {
                iter_i,
                iter_k,
                step: StepKind::Primal,
                phi,
                psi: out.psi,
                width_set_size: 0,
                max_abs_residual: u_max,
                update_rank: rows,
            });
            apply_primal_weights(&mut w, &out.u, schedule.alpha_plus, schedule.alpha_minus, eps)?;
            let r_prev = r.clone();
            phi = potentials::phi(&w);
            r = resistances(&w, phi, eps);
            tallies.note_primal_step(&r_prev, &r, schedule.alpha, eps);
            let avg_res = progress.note_primal(&out.delta, &out.u, &inst.d_tilde);
            if avg_res <= bound * (1.0 - STOP_MARGIN) {
                break FinishKind::Converged;
            }
            if progress.i >= schedule.t_rounds {
                break FinishKind::NaturalT;
            }
        } else {
            let heavy: Vec<usize> = (0..rows)
                .filter(|&e| out.u[e].abs() >= schedule.rho)
                .collect();
            if heavy.is_empty() {
                return Err(Error::InternalConsistency(
                    "width step fired with no coordinate at the threshold".into(),
                ));
            }
            let budget = out.psi / schedule.tau;
            let (prefix, rejected) = width_split(&heavy, &r, budget);
            let mut energy: f64 = prefix.iter().map(|&e| r[e] * out.u[e] * out.u[e]).sum();
            let phi_before = phi;
            let r_prev = r.clone();
            for &e in &prefix {
                w[e] = (1.0 + eps) * w[e] + eps * eps / n0 * phi_before;
            }
            if let Some(extra) = rejected {
                // Fractional step: scale the same update so the spent
                // capacity never exceeds the Ψ/τ budget.
                let gamma = (budget / r_prev[extra]).min(1.0);
                w[extra] = (1.0 + eps * gamma) * w[extra] + eps * eps * gamma / n0 * phi_before;
                energy += r_prev[extra] * out.u[extra] * out.u[extra];
            }
            tallies.width_energy.push(energy);
            phi = potentials::phi(&w);
            r = resistances(&w, phi, eps);
            tallies.note_width_step(&r_prev, &r);
            trace.push(TraceRecord {
                iter_i,
                iter_k,
                step: StepKind::Width,
                phi: phi_before,
                psi: out.psi,
                width_set_size: prefix.len() + rejected.is_some() as usize,
                max_abs_residual: u_max,
                update_rank: rows,
            });
            progress.k += 1;
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
        c: &inst.c_tilde,
        target: &inst.d_tilde,
        materialized_sum: None,
        contract_bound: bound,
        statistical: false,
    }))
}
