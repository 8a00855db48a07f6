//! Problem model: a dense regression instance min_x ‖Cx − d‖∞, the
//! sign-doubled system the non-monotone solvers run on, scale normalization,
//! and seeded instance generation with JSON serialization.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg;

/// A regression instance. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub d_dim: usize,
    pub c: Array2<f64>,
    pub target: Array1<f64>,
    /// Caller's estimate of the optimum value, if any.
    pub scale_hint: Option<f64>,
}

impl Instance {
    pub fn new(
        c: Array2<f64>,
        target: Array1<f64>,
        scale_hint: Option<f64>,
    ) -> Result<Instance> {
        let (n, d_dim) = c.dim();
        if n == 0 || d_dim == 0 {
            return Err(Error::InvalidInstance("empty matrix".into()));
        }
        if d_dim > n {
            return Err(Error::InvalidInstance(format!(
                "more columns ({d_dim}) than rows ({n})"
            )));
        }
        if target.len() != n {
            return Err(Error::InvalidInstance(format!(
                "target length {} does not match row count {n}",
                target.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) || target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite entry".into()));
        }
        if let Some(s) = scale_hint {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidScale(s));
            }
        }
        Ok(Instance {
            n,
            d_dim,
            c,
            target,
            scale_hint,
        })
    }

    /// ‖Cx − target‖∞ evaluated directly.
    pub fn linf_residual(&self, x: &Array1<f64>) -> f64 {
        let r = self.c.dot(x) - &self.target;
        r.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Sign-doubled system: rows of C then rows of −C, so every residual
    /// coordinate appears with both signs.
    pub fn double(&self) -> DoubledInstance {
        let m = 2 * self.n;
        let mut c_tilde = Array2::<f64>::zeros((m, self.d_dim));
        c_tilde.slice_mut(s![..self.n, ..]).assign(&self.c);
        c_tilde.slice_mut(s![self.n.., ..]).assign(&(-&self.c));
        let mut d_tilde = Array1::<f64>::zeros(m);
        d_tilde.slice_mut(s![..self.n]).assign(&self.target);
        d_tilde.slice_mut(s![self.n..]).assign(&(-&self.target));
        DoubledInstance {
            n: self.n,
            d_dim: self.d_dim,
            c_tilde,
            d_tilde,
        }
    }

    /// Divide C and the target by `opt`; if `opt` is the true optimum the
    /// result has optimum value 1.
    pub fn normalize(&self, opt: f64) -> Result<Instance> {
        if !(opt > 0.0) || !opt.is_finite() {
            return Err(Error::InvalidScale(opt));
        }
        Instance::new(
            &self.c / opt,
            &self.target / opt,
            self.scale_hint.map(|s| s / opt),
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = InstanceFile {
            n: self.n,
            d: self.d_dim,
            c: self.c.iter().cloned().collect(),
            target: self.target.to_vec(),
            scale_hint: self.scale_hint,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Instance> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.c.len() != file.n * file.d {
            return Err(Error::InvalidInstance(format!(
                "matrix entry count {} does not equal n*d = {}",
                file.c.len(),
                file.n * file.d
            )));
        }
        if file.target.len() != file.n {
            return Err(Error::InvalidInstance(format!(
                "target length {} does not equal n = {}",
                file.target.len(),
                file.n
            )));
        }
        let c = Array2::from_shape_vec((file.n, file.d), file.c)
            .map_err(|e| Error::InvalidInstance(e.to_string()))?;
        Instance::new(c, Array1::from_vec(file.target), file.scale_hint)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Instance> {
        Instance::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// On-disk shape: {"n", "d", "C" (row-major), "target", "scale_hint"}.
#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    d: usize,
    #[serde(rename = "C")]
    c: Vec<f64>,
    target: Vec<f64>,
    scale_hint: Option<f64>,
}

/// The sign-doubled system C̃ = [C; −C], d̃ = [d; −d].
#[derive(Debug, Clone)]
pub struct DoubledInstance {
    /// Row count of the original instance; the doubled system has 2n rows.
    pub n: usize,
    pub d_dim: usize,
    pub c_tilde: Array2<f64>,
    pub d_tilde: Array1<f64>,
}

impl DoubledInstance {
    pub fn rows(&self) -> usize {
        2 * self.n
    }

    /// max_e (C̃x − d̃)_e; equals ‖Cx − d‖∞ of the original instance.
    pub fn linf_residual(&self, x: &Array1<f64>) -> f64 {
        let r = self.c_tilde.dot(x) - &self.d_tilde;
        r.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(*v))
    }

    /// View of the original (undoubled) rows.
    pub fn original_c(&self) -> ndarray::ArrayView2<'_, f64> {
        self.c_tilde.slice(s![..self.n, ..])
    }

    pub fn original_target(&self) -> ndarray::ArrayView1<'_, f64> {
        self.d_tilde.slice(s![..self.n])
    }
}

/// Entry distribution for generated instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian,
    Uniform,
    /// Singular values of C spread geometrically over [1/kappa, 1].
    IllConditioned { kappa: f64 },
}

impl Distribution {
    pub fn from_name(name: &str, kappa: Option<f64>) -> Result<Distribution> {
        match name {
            "gaussian" => Ok(Distribution::Gaussian),
            "uniform" => Ok(Distribution::Uniform),
            "ill-conditioned" => Ok(Distribution::IllConditioned {
                kappa: kappa.unwrap_or(1e6),
            }),
            other => Err(Error::UnsupportedDistribution(other.into())),
        }
    }
}

/// Deterministic instance generation: the same seed yields bit-identical
/// output.
pub fn generate(seed: u64, n: usize, d_dim: usize, dist: Distribution) -> Result<Instance> {
    if n == 0 || d_dim == 0 || d_dim > n {
        return Err(Error::InvalidInstance(format!(
            "generate needs n >= d >= 1, got n={n} d={d_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, target) = match dist {
        Distribution::Gaussian => {
            let c = Array2::from_shape_fn((n, d_dim), |_| rng.sample::<f64, _>(StandardNormal));
            let t = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            (c, t)
        }
        Distribution::Uniform => {
            let c = Array2::from_shape_fn((n, d_dim), |_| rng.random::<f64>() * 2.0 - 1.0);
            let t = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 - 1.0);
            (c, t)
        }
        Distribution::IllConditioned { kappa } => {
            if !(kappa >= 1.0) || !kappa.is_finite() {
                return Err(Error::InvalidScale(kappa));
            }
            let u = orthonormal_columns(&mut rng, n, d_dim);
            let v = orthonormal_columns(&mut rng, d_dim, d_dim);
            // Geometric singular values from 1 down to 1/kappa.
            let mut c = Array2::<f64>::zeros((n, d_dim));
            for k in 0..d_dim {
                let sigma = if d_dim == 1 {
                    1.0
                } else {
                    kappa.powf(-(k as f64) / (d_dim as f64 - 1.0))
                };
                for i in 0..n {
                    for j in 0..d_dim {
                        c[(i, j)] += sigma * u[(i, k)] * v[(j, k)];
                    }
                }
            }
            let t = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            (c, t)
        }
    };
    Instance::new(c, target, None)
}

/// Random matrix with orthonormal columns via modified Gram-Schmidt.
fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    debug_assert!(k <= n);
    let mut q = Array2::<f64>::zeros((n, k));
    for col in 0..k {
        loop {
            let mut v = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            for prev in 0..col {
                let proj: f64 = (0..n).map(|i| q[(i, prev)] * v[i]).sum();
                for i in 0..n {
                    v[i] -= proj * q[(i, prev)];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for i in 0..n {
                    q[(i, col)] = v[i] / norm;
                }
                break;
            }
        }
    }
    q
}

/// Instance with a planted optimum: an active set of d+1 rows carries a dual
/// certificate (null vector of the active block with matching residual
/// signs), so the optimum value is exactly 1 and attained at the returned
/// point. Used by benchmarks that cannot afford the enumeration oracle.
pub fn generate_planted(seed: u64, n: usize, d_dim: usize) -> Result<(Instance, Array1<f64>)> {
    if d_dim + 1 > n {
        return Err(Error::InvalidInstance(format!(
            "planted instance needs n >= d+1, got n={n} d={d_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..64 {
        let c = Array2::from_shape_fn((n, d_dim), |_| rng.sample::<f64, _>(StandardNormal));
        // Null vector of the first (d+1) rows transposed: fix the last entry
        // to 1 and solve the leading square block.
        let active = d_dim + 1;
        let block = Array2::from_shape_fn((d_dim, d_dim), |(r, c_ix)| c[(c_ix, r)]);
        let rhs = Array1::from_shape_fn(d_dim, |r| -c[(d_dim, r)]);
        let head = match linalg::solve(&block, &rhs) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let mut lambda = Array1::<f64>::zeros(active);
        for i in 0..d_dim {
            lambda[i] = head[i];
        }
        lambda[d_dim] = 1.0;
        if lambda.iter().any(|v| v.abs() < 1e-6 || !v.is_finite()) {
            continue;
        }
        let x_star = Array1::from_shape_fn(d_dim, |_| rng.sample::<f64, _>(StandardNormal));
        let mut residual = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 1.8 - 0.9);
        for i in 0..active {
            residual[i] = lambda[i].signum();
        }
        let target = c.dot(&x_star) - &residual;
        let inst = Instance::new(c, target, Some(1.0))?;
        return Ok((inst, x_star));
    }
    Err(Error::InternalConsistency(
        "planted generation kept hitting degenerate active blocks".into(),
    ))
}
