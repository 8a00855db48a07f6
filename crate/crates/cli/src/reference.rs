//! Reference Chebyshev oracle: the exact value of min_x ‖Cx−d‖∞ together
//! with a primal witness and a dual certificate.
//!
//! The optimum of an ℓ∞ regression is attained on an active set of at most
//! d+1 rows whose residuals equioscillate, and the certificate is a
//! probability vector μ over sign-folded rows (rows of [C; −C]) with
//! Σ μ_e·C̃_e = 0 and Σ μ_e·d̃_e equal to the optimum. Three routes produce
//! that pair:
//!
//! * exhaustive search over all (d+1)-row active sets when the subset count
//!   is small,
//! * a basis-exchange search over the same active sets (simplex pivoting on
//!   the dual linear program) for everything else,
//! * smoothed descent (p-norm homotopy) whose weighted normal equations
//!   yield a feasible dual bound, kept as the fallback when pivoting hits a
//!   degenerate basis.
//!
//! Every accepted answer passes [`verify_certificate`] at 1e−9; the descent
//! route additionally reports its certified duality gap.

use ndarray::{Array1, Array2};

use linf_mwu::error::{Error, Result};
use linf_mwu::linalg;
use linf_mwu::problem::Instance;

/// Subset-count ceiling under which the exhaustive route runs.
const ENUM_SUBSET_BUDGET: u128 = 200_000;
/// Relative tolerance of the certificate checks.
pub const CERT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptMethod {
    /// The target is in the column span; the optimum is zero.
    Interpolation,
    /// Exhaustive search over active sets of d+1 rows.
    Enumeration,
    /// Basis-exchange (simplex) search over the same active sets.
    Exchange,
    /// Smoothed-descent fallback; `gap` carries the certified duality gap.
    Descent,
}

impl OptMethod {
    pub fn name(self) -> &'static str {
        match self {
            OptMethod::Interpolation => "interpolation",
            OptMethod::Enumeration => "enumeration",
            OptMethod::Exchange => "exchange",
            OptMethod::Descent => "descent",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub opt: f64,
    pub x_star: Array1<f64>,
    /// Nonnegative weights on sign-folded rows: (e, μ_e) puts mass μ_e on row
    /// e of [C; −C]. The weights sum to one and the weighted rows sum to
    /// zero; empty only when the optimum is zero.
    pub certificate: Vec<(usize, f64)>,
    pub method: OptMethod,
    /// Certified duality gap: rounding-level except on the descent route.
    pub gap: f64,
}

/// Row e of the sign-folded system: rows 0..n are (C_e, d_e), rows n..2n are
/// their negations.
fn folded_row(inst: &Instance, e: usize, out: &mut [f64]) -> f64 {
    let n = inst.n;
    if e < n {
        for j in 0..inst.d_dim {
            out[j] = inst.c[(e, j)];
        }
        inst.target[e]
    } else {
        for j in 0..inst.d_dim {
            out[j] = -inst.c[(e - n, j)];
        }
        -inst.target[e - n]
    }
}

fn folded_target(inst: &Instance, e: usize) -> f64 {
    if e < inst.n {
        inst.target[e]
    } else {
        -inst.target[e - inst.n]
    }
}

/// Check the primal value, the dual weights, and their agreement at `tol`
/// (relative). An empty certificate is only acceptable for a zero optimum.
pub fn verify_certificate(
    inst: &Instance,
    opt: f64,
    x: &Array1<f64>,
    cert: &[(usize, f64)],
    tol: f64,
) -> Result<()> {
    let scale = inst
        .target
        .iter()
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()))
        .max(opt);
    let col_scale = inst.c.iter().fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let fail = |what: String| Err(Error::ContractViolation(what));

    let residual = inst.linf_residual(x);
    if !(residual <= opt + tol * scale) {
        return fail(format!(
            "primal residual {residual} exceeds claimed optimum {opt}"
        ));
    }
    if cert.is_empty() {
        if opt <= tol * scale {
            return Ok(());
        }
        return fail(format!("no dual certificate for nonzero optimum {opt}"));
    }

    let mut total = 0.0;
    let mut combo = vec![0.0_f64; inst.d_dim];
    let mut value = 0.0;
    let mut row = vec![0.0_f64; inst.d_dim];
    for &(e, mu) in cert {
        if e >= 2 * inst.n {
            return fail(format!("certificate row {e} out of range"));
        }
        if mu < -1e-12 {
            return fail(format!("negative certificate weight {mu} at row {e}"));
        }
        let te = folded_row(inst, e, &mut row);
        for j in 0..inst.d_dim {
            combo[j] += mu * row[j];
        }
        value += mu * te;
        total += mu;
        // Active rows equioscillate: C̃_e·x − d̃_e = −opt.
        let res_e: f64 = row
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - te;
        if (res_e + opt).abs() > tol * scale.max(1.0) * 10.0 {
            return fail(format!(
                "certificate row {e} is not active: residual {res_e} vs optimum {opt}"
            ));
        }
    }
    if (total - 1.0).abs() > tol {
        return fail(format!("certificate mass {total} is not one"));
    }
    let worst = combo.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if worst > tol * col_scale {
        return fail(format!("weighted rows sum to {worst}, not zero"));
    }
    if (value - opt).abs() > tol * scale * 10.0 {
        return fail(format!("dual value {value} disagrees with optimum {opt}"));
    }
    Ok(())
}

fn subset_count(n: usize, k: usize) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128);
        acc /= (i + 1) as u128;
        if acc > ENUM_SUBSET_BUDGET * 4 {
            return u128::MAX;
        }
    }
    acc
}

/// Null vector of the d×(d+1) matrix whose columns are the given C rows:
/// pin one coordinate to 1 and solve for the rest, trying pins until one
/// block is invertible.
fn active_null_vector(inst: &Instance, idx: &[usize]) -> Option<Vec<f64>> {
    let d = inst.d_dim;
    let k = idx.len();
    for pin in (0..k).rev() {
        let mut m = Array2::<f64>::zeros((d, d));
        let mut rhs = Array1::<f64>::zeros(d);
        let mut col = 0;
        for (j, &row) in idx.iter().enumerate() {
            if j == pin {
                for i in 0..d {
                    rhs[i] = -inst.c[(row, i)];
                }
            } else {
                for i in 0..d {
                    m[(i, col)] = inst.c[(row, i)];
                }
                col += 1;
            }
        }
        if let Ok(w) = linalg::solve(&m, &rhs) {
            if w.iter().all(|v| v.is_finite() && v.abs() <= 1e10) {
                let mut lambda = vec![0.0_f64; k];
                let mut col = 0;
                for j in 0..k {
                    if j == pin {
                        lambda[j] = 1.0;
                    } else {
                        lambda[j] = w[col];
                        col += 1;
                    }
                }
                return Some(lambda);
            }
        }
    }
    None
}

/// Solve the equioscillation system of one active set: the best ℓ∞ fit on
/// rows `idx` alone has value |λᵀb|/‖λ‖₁ for a null vector λ of the stacked
/// rows, with residual signs read off λ.
struct ActiveSet {
    value: f64,
    /// +1 rows sit above the fit (residual +value), −1 below.
    signs: Vec<f64>,
    /// ℓ₁-normalized |λ|.
    weights: Vec<f64>,
}

fn solve_active_set(inst: &Instance, idx: &[usize]) -> Option<ActiveSet> {
    let lambda = active_null_vector(inst, idx)?;
    let l1: f64 = lambda.iter().map(|v| v.abs()).sum();
    if !(l1 > 0.0) || !l1.is_finite() {
        return None;
    }
    let lb: f64 = lambda
        .iter()
        .zip(idx.iter())
        .map(|(&l, &row)| l * inst.target[row])
        .sum();
    let value = lb.abs() / l1;
    let sigma = if lb >= 0.0 { 1.0 } else { -1.0 };
    let signs: Vec<f64> = lambda.iter().map(|&l| -l.signum() * sigma).collect();
    if signs.iter().any(|s| *s == 0.0) {
        return None;
    }
    let weights: Vec<f64> = lambda.iter().map(|&l| l.abs() / l1).collect();
    Some(ActiveSet {
        value,
        signs,
        weights,
    })
}

/// Fit point for a solved active set: the consistent stacked system
/// C_S·x = b_S + value·signs.
fn active_set_point(inst: &Instance, idx: &[usize], set: &ActiveSet) -> Result<Array1<f64>> {
    let k = idx.len();
    let mut a = Array2::<f64>::zeros((k, inst.d_dim));
    let mut b = Array1::<f64>::zeros(k);
    for (j, &row) in idx.iter().enumerate() {
        for i in 0..inst.d_dim {
            a[(j, i)] = inst.c[(row, i)];
        }
        b[j] = inst.target[row] + set.value * set.signs[j];
    }
    linalg::lstsq(&a, &b)
}

fn certificate_rows(inst: &Instance, idx: &[usize], set: &ActiveSet) -> Vec<(usize, f64)> {
    idx.iter()
        .zip(set.signs.iter().zip(set.weights.iter()))
        .filter(|(_, (_, &mu))| mu > 1e-15)
        .map(|(&row, (&s, &mu))| {
            let e = if s > 0.0 { row + inst.n } else { row };
            (e, mu)
        })
        .collect()
}

/// Exhaustive route: every (d+1)-row subset, keeping the feasible candidate
/// with the largest active-set value.
fn enumerate_opt(inst: &Instance) -> Result<OptResult> {
    let n = inst.n;
    let k = inst.d_dim + 1;
    let scale = inst
        .target
        .iter()
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Array1<f64>, Vec<usize>, ActiveSet)> = None;
    loop {
        if let Some(set) = solve_active_set(inst, &idx) {
            let beats = best.as_ref().map_or(set.value > 0.0, |(v, ..)| {
                set.value > *v * (1.0 + 1e-13) + 1e-15
            });
            if beats {
                if let Ok(x) = active_set_point(inst, &idx, &set) {
                    let residual = inst.linf_residual(&x);
                    if residual <= set.value * (1.0 + 1e-9) + 1e-12 * scale {
                        best = Some((set.value, x, idx.clone(), set));
                    }
                }
            }
        }
        // Lexicographic successor of the combination.
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            if idx[pos] != pos + n - k {
                idx[pos] += 1;
                for j in pos + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                let (value, x, idx, set) = best.ok_or_else(|| {
                    Error::InternalConsistency(
                        "no feasible active set survived the enumeration".into(),
                    )
                })?;
                let certificate = certificate_rows(inst, &idx, &set);
                verify_certificate(inst, value, &x, &certificate, CERT_TOL)?;
                let gap = (inst.linf_residual(&x) - value).max(0.0);
                return Ok(OptResult {
                    opt: value,
                    x_star: x,
                    certificate,
                    method: OptMethod::Enumeration,
                    gap,
                });
            }
        }
    }
}

/// Dual linear program the exchange route pivots on:
///   maximize d̃ᵀλ  subject to  C̃ᵀλ = 0, Σλ = 1, λ ≥ 0
/// over the 2n sign-folded rows. Its constraint multipliers are the fit
/// point and the optimum; the optimal basis is the certificate.
struct ExchangeLp<'a> {
    inst: &'a Instance,
    /// d_dim + 1 constraints.
    m: usize,
    /// 2n real columns; ids at and above this are phase-one artificials.
    real: usize,
}

impl<'a> ExchangeLp<'a> {
    fn column(&self, id: usize, out: &mut Array1<f64>) {
        if id < self.real {
            let mut row = vec![0.0_f64; self.inst.d_dim];
            folded_row(self.inst, id, &mut row);
            for j in 0..self.inst.d_dim {
                out[j] = row[j];
            }
            out[self.m - 1] = 1.0;
        } else {
            out.fill(0.0);
            out[id - self.real] = 1.0;
        }
    }

    fn cost(&self, id: usize, phase_one: bool) -> f64 {
        if phase_one {
            if id < self.real {
                0.0
            } else {
                -1.0
            }
        } else {
            folded_target(self.inst, id)
        }
    }

    fn basis_matrix(&self, basis: &[usize]) -> Array2<f64> {
        let mut b = Array2::<f64>::zeros((self.m, self.m));
        let mut col = Array1::<f64>::zeros(self.m);
        for (j, &id) in basis.iter().enumerate() {
            self.column(id, &mut col);
            for i in 0..self.m {
                b[(i, j)] = col[i];
            }
        }
        b
    }

    /// One phase of Bland-rule simplex; `phase_one` also widens the column
    /// set to include the artificials already in the basis.
    fn pivot_to_optimum(&self, basis: &mut [usize], phase_one: bool) -> Result<()> {
        let rhs = {
            let mut v = Array1::<f64>::zeros(self.m);
            v[self.m - 1] = 1.0;
            v
        };
        let cost_scale = 1.0
            + self
                .inst
                .target
                .iter()
                .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
        let rc_tol = 1e-11 * cost_scale;
        let mut col = Array1::<f64>::zeros(self.m);
        for _pivot in 0..20_000 {
            let b = self.basis_matrix(basis);
            let lu = linalg::Lu::new(&b).ok_or_else(|| Error::SingularMatrix {
                context: "exchange basis".into(),
            })?;
            let x_b = lu.solve(&rhs);
            let c_b = Array1::from_iter(basis.iter().map(|&id| self.cost(id, phase_one)));
            let y = linalg::solve(&b.t().to_owned(), &c_b)?;

            // Bland: the lowest-id improving column enters.
            let mut entering = None;
            for id in 0..self.real {
                if basis.contains(&id) {
                    continue;
                }
                self.column(id, &mut col);
                let rc = self.cost(id, phase_one) - y.dot(&col);
                if rc > rc_tol {
                    entering = Some(id);
                    break;
                }
            }
            let enter = match entering {
                Some(id) => id,
                None => return Ok(()),
            };

            self.column(enter, &mut col);
            let dir = lu.solve(&col);
            // Bland again: among the tightest ratios, the lowest basis id
            // leaves.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if dir[i] > 1e-11 {
                    let ratio = x_b[i].max(0.0) / dir[i];
                    let better = match leave {
                        None => true,
                        Some((best_i, best_ratio)) => {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12 && basis[i] < basis[best_i])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let (leave_pos, _) = leave.ok_or_else(|| {
                Error::InternalConsistency("unbounded exchange direction".into())
            })?;
            basis[leave_pos] = enter;
        }
        Err(Error::InternalConsistency(
            "exchange pivot budget exhausted".into(),
        ))
    }
}

fn exchange_opt(inst: &Instance) -> Result<OptResult> {
    let m = inst.d_dim + 1;
    let real = 2 * inst.n;
    let lp = ExchangeLp { inst, m, real };
    let mut basis: Vec<usize> = (real..real + m).collect();

    lp.pivot_to_optimum(&mut basis, true)?;
    let rhs = {
        let mut v = Array1::<f64>::zeros(m);
        v[m - 1] = 1.0;
        v
    };
    let b = lp.basis_matrix(&basis);
    let lu = linalg::Lu::new(&b).ok_or_else(|| Error::SingularMatrix {
        context: "exchange phase-one basis".into(),
    })?;
    let x_b = lu.solve(&rhs);
    let infeasibility: f64 = basis
        .iter()
        .zip(x_b.iter())
        .filter(|(&id, _)| id >= real)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    if infeasibility > 1e-9 {
        return Err(Error::InternalConsistency(format!(
            "exchange phase one stalled at infeasibility {infeasibility}"
        )));
    }
    // Swap out artificials stuck at level zero; failure means a redundant
    // constraint, which the descent route must handle.
    let mut col = Array1::<f64>::zeros(m);
    for pos in 0..m {
        if basis[pos] < real {
            continue;
        }
        let mut replaced = false;
        for id in 0..real {
            if basis.contains(&id) {
                continue;
            }
            lp.column(id, &mut col);
            let dir = lu.solve(&col);
            if dir[pos].abs() > 1e-7 {
                basis[pos] = id;
                replaced = true;
                break;
            }
        }
        if !replaced {
            return Err(Error::InternalConsistency(
                "degenerate exchange basis: a constraint is redundant".into(),
            ));
        }
    }

    lp.pivot_to_optimum(&mut basis, false)?;

    let b = lp.basis_matrix(&basis);
    let lu = linalg::Lu::new(&b).ok_or_else(|| Error::SingularMatrix {
        context: "exchange final basis".into(),
    })?;
    let mut mu = lu.solve(&rhs);
    let c_b = Array1::from_iter(basis.iter().map(|&id| lp.cost(id, false)));
    let y = linalg::solve(&b.t().to_owned(), &c_b)?;
    let mut x = Array1::from_iter((0..inst.d_dim).map(|j| y[j]));
    let mut opt = y[m - 1].max(0.0);

    // Polish: re-solve the equioscillation system of the final active set;
    // pivoting noise accumulates and the square solve sharpens (x, opt).
    let mut eq = Array2::<f64>::zeros((m, m));
    let mut rhs_eq = Array1::<f64>::zeros(m);
    let mut row = vec![0.0_f64; inst.d_dim];
    for (j, &id) in basis.iter().enumerate() {
        let te = folded_row(inst, id, &mut row);
        for i in 0..inst.d_dim {
            eq[(j, i)] = row[i];
        }
        eq[(j, m - 1)] = 1.0;
        rhs_eq[j] = te;
    }
    if let Ok(sharp) = linalg::solve(&eq, &rhs_eq) {
        let v = sharp[m - 1];
        if v.is_finite() && (v - opt).abs() <= 1e-6 * (1.0 + opt) && v >= 0.0 {
            for j in 0..inst.d_dim {
                x[j] = sharp[j];
            }
            opt = v;
        }
    }

    for v in mu.iter_mut() {
        if *v < 0.0 && *v > -1e-11 {
            *v = 0.0;
        }
    }
    let certificate: Vec<(usize, f64)> = basis
        .iter()
        .zip(mu.iter())
        .filter(|(_, &v)| v > 1e-15)
        .map(|(&id, &v)| (id, v))
        .collect();
    verify_certificate(inst, opt, &x, &certificate, CERT_TOL)?;
    let gap = (inst.linf_residual(&x) - opt).max(0.0);
    Ok(OptResult {
        opt,
        x_star: x,
        certificate,
        method: OptMethod::Exchange,
        gap,
    })
}

/// Descent fallback: p-norm homotopy by iteratively reweighted least
/// squares. Each inner weighted solve's normal equations Cᵀ·(w∘res) = 0 make
/// λ = w∘res an exactly-balanced dual direction, so folding it onto signed
/// rows gives a feasible lower bound; the homotopy runs until the certified
/// gap closes (or the round budget runs out).
pub fn descent_opt(inst: &Instance, max_rounds: u64) -> Result<OptResult> {
    let scale = inst
        .target
        .iter()
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let n = inst.n;
    let mut x = linalg::lstsq(&inst.c, &inst.target)?;
    let mut upper = inst.linf_residual(&x);
    let mut best_x = x.clone();
    let mut lower = 0.0_f64;
    let mut best_cert: Vec<(usize, f64)> = Vec::new();
    let gap_tol = |u: f64| 1e-7 * u.max(1.0);

    let mut p = 2.0_f64;
    let mut rounds: u64 = 0;
    while rounds < max_rounds && upper - lower > gap_tol(upper) {
        p = (p * 1.6).min(1e7);
        for _ in 0..3 {
            rounds += 1;
            let res = inst.c.dot(&x) - &inst.target;
            let m = res.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if m < upper {
                upper = m;
                best_x = x.clone();
            }
            if m <= 1e-15 * scale {
                break;
            }
            let w = Array1::from_iter(
                res.iter()
                    .map(|&v| ((v.abs() / m).max(1e-280)).powf(p - 2.0).max(1e-280)),
            );
            let sw = w.mapv(f64::sqrt);
            let mut cw = inst.c.clone();
            for (i, mut r) in cw.rows_mut().into_iter().enumerate() {
                r.mapv_inplace(|v| v * sw[i]);
            }
            let dw = &inst.target * &sw;
            let x_new = match linalg::lstsq(&cw, &dw) {
                Ok(v) => v,
                Err(_) => break,
            };

            // Dual bound from the fresh solve: λ = w∘res(x_new) satisfies
            // Cᵀλ = 0 up to solver roundoff, which is charged to the bound.
            let res_new = inst.c.dot(&x_new) - &inst.target;
            let m_new = res_new.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if m_new < upper {
                upper = m_new;
                best_x = x_new.clone();
            }
            let lam = &w * &res_new;
            let l1: f64 = lam.iter().map(|v| v.abs()).sum();
            if l1 > 0.0 {
                let energy: f64 = lam.iter().zip(res_new.iter()).map(|(a, b)| a * b).sum();
                let defect = inst
                    .c
                    .t()
                    .dot(&lam)
                    .iter()
                    .fold(0.0_f64, |acc, v| acc.max(v.abs()));
                let x_bound = 2.0 * (1.0 + x_new.iter().map(|v| v.abs()).sum::<f64>());
                let cand = energy / l1 - defect / l1 * x_bound;
                if cand > lower {
                    lower = cand;
                    let peak = lam.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
                    best_cert = lam
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v.abs() > 1e-14 * peak)
                        .map(|(e, &v)| {
                            let id = if v > 0.0 { e + n } else { e };
                            (id, v.abs() / l1)
                        })
                        .collect();
                }
            }
            x = 0.5 * &x + 0.5 * &x_new;
        }
    }

    let gap = (upper - lower).max(0.0);
    if gap > gap_tol(upper) {
        return Err(Error::ContractViolation(format!(
            "descent could not certify the optimum: gap {gap} after {rounds} rounds"
        )));
    }
    Ok(OptResult {
        opt: upper,
        x_star: best_x,
        certificate: best_cert,
        method: OptMethod::Descent,
        gap,
    })
}

/// Exact Chebyshev optimum with a verified certificate. Exhaustive search
/// when the subset count is affordable, basis exchange otherwise, smoothed
/// descent when pivoting reports degeneracy.
pub fn bruteforce_opt(inst: &Instance) -> Result<OptResult> {
    let scale = inst
        .target
        .iter()
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let x_ls = linalg::lstsq(&inst.c, &inst.target)?;
    let r_ls = inst.linf_residual(&x_ls);
    if r_ls <= 1e-11 * scale {
        return Ok(OptResult {
            opt: 0.0,
            x_star: x_ls,
            certificate: Vec::new(),
            method: OptMethod::Interpolation,
            gap: r_ls,
        });
    }

    if inst.n >= inst.d_dim + 1 && subset_count(inst.n, inst.d_dim + 1) <= ENUM_SUBSET_BUDGET {
        if let Ok(found) = enumerate_opt(inst) {
            return Ok(found);
        }
    }
    match exchange_opt(inst) {
        Ok(found) => Ok(found),
        Err(_) => descent_opt(inst, 1_000_000),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use linf_mwu::problem::{generate, Distribution};
    use ndarray::array;

    #[test]
    fn two_parallel_rows_equioscillate() {
        let inst = Instance::new(array![[1.0], [1.0]], array![0.0, 2.0], None).unwrap();
        let found = bruteforce_opt(&inst).unwrap();
        assert!((found.opt - 1.0).abs() < 1e-12, "opt {}", found.opt);
        assert!((found.x_star[0] - 1.0).abs() < 1e-12);
        assert_eq!(found.method, OptMethod::Enumeration);
    }

    #[test]
    fn spanned_target_interpolates_to_zero() {
        let c = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let x = array![0.3, -0.7];
        let d = c.dot(&x);
        let inst = Instance::new(c, d, None).unwrap();
        let found = bruteforce_opt(&inst).unwrap();
        assert_eq!(found.method, OptMethod::Interpolation);
        assert!(found.opt == 0.0);
        assert!(found.certificate.is_empty());
    }

    #[test]
    fn enumeration_and_exchange_agree_on_random_instances() {
        for seed in 0..12u64 {
            let inst = generate(seed, 15, 2, Distribution::Gaussian).unwrap();
            let enumerated = enumerate_opt(&inst).unwrap();
            let exchanged = exchange_opt(&inst).unwrap();
            assert!(
                (enumerated.opt - exchanged.opt).abs() <= 1e-9 * enumerated.opt.max(1.0),
                "seed {seed}: enumeration {} exchange {}",
                enumerated.opt,
                exchanged.opt
            );
        }
        for seed in 0..6u64 {
            let inst = generate(seed, 25, 3, Distribution::Gaussian).unwrap();
            let enumerated = enumerate_opt(&inst).unwrap();
            let exchanged = exchange_opt(&inst).unwrap();
            assert!(
                (enumerated.opt - exchanged.opt).abs() <= 1e-9 * enumerated.opt.max(1.0),
                "seed {seed}: enumeration {} exchange {}",
                enumerated.opt,
                exchanged.opt
            );
        }
    }

    #[test]
    fn descent_matches_enumeration_within_cross_oracle_tolerance() {
        for seed in 0..8u64 {
            let inst = generate(seed, 15, 2, Distribution::Gaussian).unwrap();
            let enumerated = enumerate_opt(&inst).unwrap();
            let descended = descent_opt(&inst, 1_000_000).unwrap();
            assert!(
                (enumerated.opt - descended.opt).abs() <= 1e-6 * enumerated.opt.max(1.0),
                "seed {seed}: enumeration {} descent {} (gap {})",
                enumerated.opt,
                descended.opt,
                descended.gap
            );
        }
    }

    #[test]
    fn certificates_verify_on_random_instances() {
        for seed in 0..10u64 {
            let n = 20 + (seed as usize % 4) * 15;
            let d = 2 + (seed as usize % 3);
            let inst = generate(seed, n, d, Distribution::Gaussian).unwrap();
            let found = bruteforce_opt(&inst).unwrap();
            verify_certificate(&inst, found.opt, &found.x_star, &found.certificate, CERT_TOL)
                .unwrap();
            assert!(found.opt > 0.0);
        }
    }

    #[test]
    fn exchange_handles_sizes_past_the_enumeration_budget() {
        let inst = generate(3, 150, 5, Distribution::Gaussian).unwrap();
        assert!(subset_count(150, 6) > ENUM_SUBSET_BUDGET);
        let found = bruteforce_opt(&inst).unwrap();
        assert_eq!(found.method, OptMethod::Exchange);
        verify_certificate(&inst, found.opt, &found.x_star, &found.certificate, CERT_TOL)
            .unwrap();
    }

    #[test]
    fn planted_instances_report_unit_optimum() {
        for seed in 0..6u64 {
            let (inst, _) = linf_mwu::problem::generate_planted(seed, 40, 3).unwrap();
            let found = bruteforce_opt(&inst).unwrap();
            assert!(
                (found.opt - 1.0).abs() <= 1e-9,
                "seed {seed}: opt {}",
                found.opt
            );
        }
    }
}
