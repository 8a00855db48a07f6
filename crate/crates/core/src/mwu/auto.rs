//! Outer search over the optimum scale. The solvers' contracts assume the
//! instance is normalized so the optimum is about 1; this wrapper brackets
//! the optimum from the least-squares solution and probes geometrically,
//! accepting the first scale whose normalized run meets its residual
//! contract.

use crate::error::Result;
use crate::linalg;
use crate::problem::Instance;

use super::{
    solve_baseline_unaccelerated, solve_monotone, solve_nonmonotone_opt, solve_nonmonotone_robust,
    solve_nonmonotone_stable, AlgoKind, SolveBackend, SolverParams, SolverRun, Status,
};

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

fn accept_bound(algo: AlgoKind, eps: f64) -> f64 {
    match algo {
        AlgoKind::Robust => 1.0 + 10.5 * eps,
        _ => 1.0 + 10.0 * eps,
    }
}

/// Number of geometric probes needed to cross the least-squares bracket,
/// whose width is at most √n, plus slack at both ends.
pub(crate) fn probe_budget(n: usize, eps: f64) -> u64 {
    let ratio = 1.0 + eps / 4.0;
    ((n as f64).sqrt().ln() / ratio.ln()).ceil() as u64 + 2
}

/// Solve an instance of unknown scale: bracket the optimum, probe scales
/// geometrically, return the first normalized run meeting the contract with
/// its residual re-measured on the original instance.
pub fn solve_auto(
    inst: &Instance,
    params: &SolverParams,
    algo: AlgoKind,
    backend: SolveBackend,
) -> Result<SolverRun> {
    let x2 = linalg::lstsq(&inst.c, &inst.target)?;
    let fitted = inst.c.dot(&x2);
    let mut res2 = 0.0f64;
    let mut res_inf = 0.0f64;
    let mut scale = 1.0f64;
    for e in 0..inst.n {
        let gap = fitted[e] - inst.target[e];
        res2 += gap * gap;
        res_inf = res_inf.max(gap.abs());
        scale = scale.max(inst.target[e].abs());
    }
    let res2 = res2.sqrt();
    if res_inf <= 1e-10 * scale {
        // Zero-optimum instance; every solver short-circuits it.
        return dispatch(algo, inst, params, backend);
    }

    let lower = res2 / (inst.n as f64).sqrt();
    let upper = res_inf;
    let ratio = 1.0 + params.epsilon / 4.0;
    let budget = probe_budget(inst.n, params.epsilon);
    let bound = accept_bound(algo, params.epsilon);

    let mut best: Option<(f64, SolverRun)> = None;
    let mut accepted_any = false;
    for j in 0..budget {
        let guess = lower * ratio.powi(j as i32);
        if guess > upper * ratio {
            break;
        }
        let normalized = inst.normalize(guess)?;
        let run = dispatch(algo, &normalized, params, backend)?;
        let raw_residual = inst.linf_residual(&run.x_hat);
        let accepted = run.residual_inf <= bound + 1e-12;
        let better = best
            .as_ref()
            .is_none_or(|(prev, _)| raw_residual < *prev);
        if better {
            best = Some((raw_residual, run));
        }
        if accepted {
            accepted_any = true;
            break;
        }
    }

    let (raw_residual, mut run) = best.ok_or_else(|| {
        crate::error::Error::SearchFailure("empty scale bracket".into())
    })?;
    run.residual_inf = raw_residual;
    if !accepted_any {
        run.status = run.status.worse(Status::SearchFailure);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::generate_planted;
    use ndarray::array;

    #[test]
    fn tight_bracket_accepts_on_the_first_probe() {
        // Least-squares gives residual (1, −1): bracket collapses to [1, 1].
        let inst = Instance::new(array![[1.0], [1.0]], array![0.0, 2.0], None).unwrap();
        let params = SolverParams::new(0.1, 3);
        let run = solve_auto(&inst, &params, AlgoKind::Monotone, SolveBackend::Direct).unwrap();
        assert!(run.residual_inf <= (1.0 + 10.0 * 0.1) * (1.0 + 0.1 / 4.0) + 1e-9);
        assert!(run.residual_inf >= 1.0 - 1e-9);
    }

    #[test]
    fn zero_optimum_short_circuits() {
        let c = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let x_true = array![3.0, -0.5];
        let target = c.dot(&x_true);
        let inst = Instance::new(c, target, None).unwrap();
        let params = SolverParams::new(0.1, 3);
        let run = solve_auto(&inst, &params, AlgoKind::Stable, SolveBackend::Direct).unwrap();
        assert!(run.residual_inf <= 1e-8);
        assert_eq!(run.iterations.primal, 0);
    }

    #[test]
    fn known_scale_instance_lands_within_the_search_guarantee() {
        let eps = 0.15;
        let opt_scale = 4.2;
        let (planted, _) = generate_planted(11, 20, 3).unwrap();
        let scaled = Instance::new(
            planted.c.clone(),
            planted.target.mapv(|v| v * opt_scale),
            None,
        )
        .unwrap();
        let mut params = SolverParams::new(eps, 11);
        params.max_iters = Some(400);
        let run = solve_auto(&scaled, &params, AlgoKind::Stable, SolveBackend::Direct).unwrap();
        // Planted optimum is exactly 1 before scaling.
        let limit = (1.0 + 10.0 * eps) * (1.0 + eps / 4.0) * opt_scale;
        assert!(
            run.residual_inf <= limit,
            "residual {} over limit {limit}",
            run.residual_inf
        );
        assert!(run.residual_inf >= opt_scale - 1e-6);
    }

    #[test]
    fn probe_budget_grows_slowly_with_n() {
        let eps = 0.1;
        assert!(probe_budget(16, eps) >= 2);
        assert!(probe_budget(256, eps) > probe_budget(16, eps));
        assert!(probe_budget(256, eps) < 200);
    }
}
