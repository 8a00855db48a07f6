//! Hand-rolled JSON emission. Reports must be byte-identical across runs of
//! the same configuration, so floats are printed with 17 significant digits
//! (enough to round-trip f64) and maps are emitted in a fixed field order.
//! Non-finite floats serialize as null.

use linf_mwu::error::Error;
use linf_mwu::mwu::{Schedule, SolveBackend, SolverRun};
use linf_mwu::potentials::fmt_g17;

pub fn json_f64(x: f64) -> String {
    if x.is_finite() {
        fmt_g17(x)
    } else {
        "null".into()
    }
}

pub fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_f64_array(xs: &[f64]) -> String {
    let body: Vec<String> = xs.iter().map(|&x| json_f64(x)).collect();
    format!("[{}]", body.join(","))
}

fn params_json(schedule: &Schedule, backend: SolveBackend) -> String {
    let width_budget = match schedule.width_budget {
        Some(b) => b.to_string(),
        None => "null".into(),
    };
    format!(
        concat!(
            "{{\"algo\":{},\"backend\":{},\"n\":{},\"rows\":{},\"d_dim\":{},",
            "\"epsilon\":{},\"delta\":{},\"eta\":{},\"alpha\":{},",
            "\"alpha_plus\":{},\"alpha_minus\":{},\"tau\":{},\"rho\":{},",
            "\"t_rounds\":{},\"width_budget\":{},\"b\":{},\"c_rho\":{},",
            "\"c3\":{},\"max_iters\":{},\"seed\":{},\"psi0\":{},",
            "\"psi0_clamped\":{},\"ln_n\":{},\"big_l\":{},\"a0\":{},\"a1\":{},",
            "\"lazy_scheme\":{},\"exact_l3\":{},\"jl_psi\":{},\"refresh_hh\":{}}}"
        ),
        json_str(schedule.algo.name()),
        json_str(backend.name()),
        schedule.n,
        schedule.rows,
        schedule.d_dim,
        json_f64(schedule.epsilon),
        json_f64(schedule.delta),
        json_f64(schedule.eta),
        json_f64(schedule.alpha),
        json_f64(schedule.alpha_plus),
        json_f64(schedule.alpha_minus),
        json_f64(schedule.tau),
        json_f64(schedule.rho),
        schedule.t_rounds,
        width_budget,
        schedule.b,
        schedule.c_rho,
        json_f64(schedule.c3),
        schedule.max_iters,
        schedule.seed,
        json_f64(schedule.psi0),
        schedule.psi0_clamped,
        json_f64(schedule.ln_n),
        json_f64(schedule.big_l),
        json_f64(schedule.a0),
        json_f64(schedule.a1),
        json_str(schedule.lazy_scheme.name()),
        schedule.exact_l3,
        schedule.jl_psi,
        schedule.refresh_hh,
    )
}

pub fn report_json(run: &SolverRun, backend: SolveBackend) -> String {
    let ops = &run.op_counts;
    format!(
        concat!(
            "{{\"x\":{},\"residual_inf\":{},",
            "\"iterations\":{{\"primal\":{},\"width\":{}}},\"status\":{},",
            "\"op_counts\":{{\"resets\":{},\"partial_resets\":{},\"queries\":{},",
            "\"scalar_ops\":{{\"reset\":{},\"partial_reset\":{},\"query\":{}}}}},",
            "\"params_used\":{}}}\n"
        ),
        json_f64_array(run.x_hat.as_slice().unwrap_or(&[])),
        json_f64(run.residual_inf),
        run.iterations.primal,
        run.iterations.width,
        json_str(run.status.name()),
        ops.resets,
        ops.partial_resets,
        ops.queries,
        ops.scalar_ops.reset,
        ops.scalar_ops.partial_reset,
        ops.scalar_ops.query,
        params_json(&run.schedule, backend),
    )
}

/// Stable machine-readable identifier for an error variant.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidInstance(_) => "invalid-instance",
        Error::InvalidScale(_) => "invalid-scale",
        Error::UnsupportedDistribution(_) => "unsupported-distribution",
        Error::DimensionMismatch { .. } => "dimension-mismatch",
        Error::SingularOracle { .. } => "singular-oracle",
        Error::SingularMatrix { .. } => "singular-matrix",
        Error::InternalConsistency(_) => "internal-consistency",
        Error::StaleMaintainer(_) => "stale-maintainer",
        Error::ContractViolation(_) => "contract-violation",
        Error::BudgetExceeded { .. } => "budget-exceeded",
        Error::PositivityBreach { .. } => "positivity-breach",
        Error::SearchFailure(_) => "search-failure",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

pub fn error_json(err: &Error) -> String {
    format!(
        "{{\"error\":{{\"kind\":{},\"message\":{}}}}}\n",
        json_str(error_kind(err)),
        json_str(&err.to_string()),
    )
}

/// Exit code classification: 2 for configuration and input problems (the
/// caller handed us something unusable), 1 for failures inside a run.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInstance(_)
        | Error::InvalidScale(_)
        | Error::UnsupportedDistribution(_)
        | Error::DimensionMismatch { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strings_escape_quotes_and_control_bytes() {
        assert_eq!(json_str("a\"b\\c\nd"), "\"a\\\"b\\\\c\\nd\"");
        assert_eq!(json_str("\u{1}"), "\"\\u0001\"");
    }

    #[test]
    fn non_finite_floats_become_null() {
        assert_eq!(json_f64(f64::NAN), "null");
        assert_eq!(json_f64(f64::INFINITY), "null");
        assert!(json_f64(1.5).contains("1.5"));
    }

    #[test]
    fn io_errors_exit_with_the_path_code() {
        let err = Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(exit_code_for(&err), 2);
        assert_eq!(error_kind(&err), "io");
        let err = Error::SearchFailure("empty bracket".into());
        assert_eq!(exit_code_for(&err), 1);
    }
}
