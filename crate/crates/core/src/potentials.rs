//! Solver instrumentation: the ℓ1 weight potential, the initial value of the
//! weighted least-squares energy with its clamp, and per-iteration trace
//! records with CSV serialization.

use ndarray::{Array1, Array2};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg;

/// Floor applied to the initial energy so downstream logarithms stay finite.
pub const PSI0_FLOOR: f64 = 1e-12;

/// Φ(w) = Σ_e w_e. Weights are maintained positive, so this is the ℓ1 norm.
pub fn phi(w: &Array1<f64>) -> f64 {
    w.sum()
}

/// Initial energy floor: min{1, dᵀ(I − C(CᵀC)⁻¹Cᵀ)d}, the squared norm of
/// the component of the target outside the column span. Returns the value
/// and whether the floor clamp fired.
pub fn psi_zero(c: &Array2<f64>, target: &Array1<f64>) -> Result<(f64, bool)> {
    let z = linalg::lstsq(c, target)?;
    let resid = target - &c.dot(&z);
    let raw = resid.dot(&resid).max(0.0);
    let capped = raw.min(1.0);
    if capped < PSI0_FLOOR {
        Ok((PSI0_FLOOR, true))
    } else {
        Ok((capped, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Primal,
    Width,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Primal => "primal",
            StepKind::Width => "width",
        }
    }

    pub fn parse(text: &str) -> Result<StepKind> {
        match text {
            "primal" => Ok(StepKind::Primal),
            "width" => Ok(StepKind::Width),
            other => Err(Error::InvalidInstance(format!("unknown step kind {other}"))),
        }
    }
}

/// One solver iteration as seen by the instrumentation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter_i: u64,
    pub iter_k: u64,
    pub step: StepKind,
    pub phi: f64,
    pub psi: f64,
    pub width_set_size: usize,
    pub max_abs_residual: f64,
    pub update_rank: usize,
}

pub const TRACE_HEADER: &str =
    "iter_i,iter_k,step,phi,psi,width_set_size,max_abs_residual,update_rank";

/// Format a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Default)]
pub struct PotentialTrace {
    pub records: Vec<TraceRecord>,
    pub psi0: f64,
    pub psi0_clamped: bool,
}

impl PotentialTrace {
    pub fn push(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter_i,
                r.iter_k,
                r.step.as_str(),
                fmt_g17(r.phi),
                fmt_g17(r.psi),
                r.width_set_size,
                fmt_g17(r.max_abs_residual),
                r.update_rank
            )?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<PotentialTrace> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::InvalidInstance("empty trace".into()))?;
        if header.trim_end() != TRACE_HEADER {
            return Err(Error::InvalidInstance(format!(
                "unexpected trace header: {header}"
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim_end().split(',').collect();
            if parts.len() != 8 {
                return Err(Error::InvalidInstance(format!(
                    "trace row has {} fields, expected 8",
                    parts.len()
                )));
            }
            let field = |i: usize| -> Result<f64> {
                parts[i]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInstance(format!("bad trace float: {e}")))
            };
            records.push(TraceRecord {
                iter_i: parts[0]
                    .parse()
                    .map_err(|e| Error::InvalidInstance(format!("bad trace int: {e}")))?,
                iter_k: parts[1]
                    .parse()
                    .map_err(|e| Error::InvalidInstance(format!("bad trace int: {e}")))?,
                step: StepKind::parse(parts[2])?,
                phi: field(3)?,
                psi: field(4)?,
                width_set_size: parts[5]
                    .parse()
                    .map_err(|e| Error::InvalidInstance(format!("bad trace int: {e}")))?,
                max_abs_residual: field(6)?,
                update_rank: parts[7]
                    .parse()
                    .map_err(|e| Error::InvalidInstance(format!("bad trace int: {e}")))?,
            });
        }
        Ok(PotentialTrace {
            records,
            psi0: 0.0,
            psi0_clamped: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn phi_sums_weights() {
        assert_eq!(phi(&array![1.0, 2.0, 3.5]), 6.5);
        assert_eq!(phi(&array![0.25]), 0.25);
    }

    #[test]
    fn psi_zero_caps_at_one() {
        // Projection of [0,2] onto span{[1,1]} leaves residual [-1,1] with
        // squared norm 2; the cap takes over.
        let (v, clamped) = psi_zero(&array![[1.0], [1.0]], &array![0.0, 2.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
        assert!(!clamped);
    }

    #[test]
    fn psi_zero_partial_projection() {
        // Residual of projecting [0,1] onto span{[1,1]}: [-1/2, 1/2], squared
        // norm 1/2.
        let (v, clamped) = psi_zero(&array![[1.0], [1.0]], &array![0.0, 1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
        assert!(!clamped);
    }

    #[test]
    fn psi_zero_clamps_in_span_targets() {
        let (v, clamped) = psi_zero(&array![[1.0], [0.0]], &array![3.0, 0.0]).unwrap();
        assert_eq!(v, PSI0_FLOOR);
        assert!(clamped);
    }

    #[test]
    fn g17_round_trips() {
        for &x in &[1.0, -0.1, 1e-300, std::f64::consts::PI, 12345.6789] {
            let s = fmt_g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut tr = PotentialTrace::default();
        tr.push(TraceRecord {
            iter_i: 0,
            iter_k: 0,
            step: StepKind::Primal,
            phi: 10.0,
            psi: 0.125,
            width_set_size: 0,
            max_abs_residual: 1.5,
            update_rank: 3,
        });
        tr.push(TraceRecord {
            iter_i: 1,
            iter_k: 1,
            step: StepKind::Width,
            phi: 10.5,
            psi: 0.25,
            width_set_size: 7,
            max_abs_residual: 2.5,
            update_rank: 7,
        });
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        let back = PotentialTrace::read_csv(std::io::BufReader::new(text.as_bytes())).unwrap();
        assert_eq!(back.records, tr.records);
    }
}
