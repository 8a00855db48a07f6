//! Seeded randomized linear maps: a sign-based coordinate-wise embedding,
//! a Gaussian JL transform, a max-stability ℓ3 norm estimator, and a
//! count-sketch heavy hitter. Every application is a pure function of
//! (seed, input); per-iteration sketches are derived from a master seed
//! instead of being stored.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// What a derived seed is for. Keeping the purposes distinct ensures two
/// consumers never share a random stream even at equal counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    ResidualEmbedding,
    EnergyEstimate,
    HeavyHitter,
    L3Estimate,
    Instance,
}

impl SeedPurpose {
    fn tag(self) -> u64 {
        match self {
            SeedPurpose::ResidualEmbedding => 1,
            SeedPurpose::EnergyEstimate => 2,
            SeedPurpose::HeavyHitter => 3,
            SeedPurpose::L3Estimate => 4,
            SeedPurpose::Instance => 5,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-iteration seed from a master seed, an iteration
/// counter, and a purpose tag.
pub fn derive_seed(master: u64, counter: u64, purpose: SeedPurpose) -> u64 {
    let mixed = splitmix64(master ^ splitmix64(purpose.tag()));
    splitmix64(mixed ^ counter.wrapping_mul(0xD6E8FEB86659FD93))
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context: format!("sketch expects {expected}-dimensional input, got {got}"),
        });
    }
    Ok(())
}

/// Random sign embedding S ∈ {±1/√b}^{b×n}. Columns have squared norm
/// exactly one, so SᵀS has an exact unit diagonal.
#[derive(Debug, Clone)]
pub struct CweSketch {
    /// Sign pattern; the 1/√b scale is applied on use.
    signs: Array2<f64>,
    b: usize,
}

impl CweSketch {
    pub fn new(n: usize, b: usize, seed: u64) -> Result<CweSketch> {
        if n == 0 || b == 0 {
            return Err(Error::InternalConsistency(format!(
                "sign sketch needs positive dimensions, got {b}x{n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs =
            Array2::from_shape_fn((b, n), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        Ok(CweSketch { signs, b })
    }

    pub fn rows(&self) -> usize {
        self.b
    }

    pub fn cols(&self) -> usize {
        self.signs.ncols()
    }

    /// S·x, a b-dimensional image.
    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_len(self.cols(), x.len())?;
        Ok(self.signs.dot(x) / (self.b as f64).sqrt())
    }

    /// SᵀS·x. Scaling happens once at the end so the exact diagonal
    /// survives: for x = e_j the j-th output is b/b = 1 exactly.
    pub fn roundtrip(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_len(self.cols(), x.len())?;
        let image = self.signs.dot(x);
        Ok(self.signs.t().dot(&image) / self.b as f64)
    }

    /// R^{−1/2}·SᵀS·R^{1/2}·x for a positive diagonal R given by `scale`:
    /// the conjugated roundtrip used to estimate residuals under weights.
    pub fn reweighted_roundtrip(
        &self,
        scale: &Array1<f64>,
        x: &Array1<f64>,
    ) -> Result<Array1<f64>> {
        check_len(self.cols(), scale.len())?;
        check_len(self.cols(), x.len())?;
        for (e, &s) in scale.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::PositivityBreach { coord: e, value: s });
            }
        }
        let lifted = Array1::from_shape_fn(x.len(), |e| scale[e].sqrt() * x[e]);
        let mut back = self.roundtrip(&lifted)?;
        for e in 0..back.len() {
            back[e] /= scale[e].sqrt();
        }
        Ok(back)
    }
}

/// Gaussian JL transform with k = ⌈c·ε⁻²·ln(n/δ_fail)⌉ rows.
#[derive(Debug, Clone)]
pub struct JlSketch {
    rows: Array2<f64>,
}

pub const JL_DEFAULT_ROW_CONSTANT: f64 = 8.0;

impl JlSketch {
    pub fn new(n: usize, eps: f64, delta_fail: f64, c: f64, seed: u64) -> Result<JlSketch> {
        if n == 0 {
            return Err(Error::InternalConsistency(
                "JL sketch needs a positive dimension".into(),
            ));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidScale(eps));
        }
        if !(delta_fail > 0.0 && delta_fail < 1.0) {
            return Err(Error::InvalidScale(delta_fail));
        }
        let k = (c * eps.powi(-2) * (n as f64 / delta_fail).ln()).ceil() as usize;
        let k = k.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (k as f64).sqrt();
        let rows =
            Array2::from_shape_fn((k, n), |_| rng.sample::<f64, _>(StandardNormal) * scale);
        Ok(JlSketch { rows })
    }

    pub fn k(&self) -> usize {
        self.rows.nrows()
    }

    /// ‖Jx‖₂, a (1±ε)-estimate of ‖x‖₂ at the configured success rate.
    pub fn norm(&self, x: &Array1<f64>) -> Result<f64> {
        check_len(self.rows.ncols(), x.len())?;
        let image = self.rows.dot(x);
        Ok(image.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// Exact ℓ3 norm, the fallback estimator the solver uses by default.
pub fn l3_norm(x: &Array1<f64>) -> f64 {
    x.iter().map(|v| v.abs().powi(3)).sum::<f64>().cbrt()
}

/// Median bias of the max-stability estimator: the per-repetition maximum
/// is ‖x‖₃ / E^{1/3} with E exponential, whose median is (ln 2)^{1/3}.
const L3_MEDIAN_BIAS: f64 = 1.130_422_011_398_361_5;

/// Max-stability ℓ3 estimator: each repetition scales coordinates by
/// independent Exponential(1)^{−1/3} draws, hashes them with signs into
/// ⌈c₃·n^{1/3}·ln³n⌉ buckets, and reads off the largest bucket magnitude;
/// the estimate is the bias-corrected median over repetitions.
#[derive(Debug, Clone)]
pub struct L3Sketch {
    n: usize,
    buckets: usize,
    reps: usize,
    seed: u64,
}

impl L3Sketch {
    pub fn new(n: usize, c3: f64, seed: u64) -> Result<L3Sketch> {
        if n == 0 {
            return Err(Error::InternalConsistency(
                "l3 sketch needs a positive dimension".into(),
            ));
        }
        if !(c3 > 0.0) || !c3.is_finite() {
            return Err(Error::InvalidScale(c3));
        }
        let nf = n as f64;
        let log = nf.max(3.0).ln();
        let buckets = ((c3 * nf.cbrt() * log.powi(3)).ceil() as usize).max(1);
        let reps = ((14.0 * log).ceil() as usize).max(9) | 1;
        Ok(L3Sketch {
            n,
            buckets,
            reps,
            seed,
        })
    }

    pub fn repetitions(&self) -> usize {
        self.reps
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn estimate(&self, x: &Array1<f64>) -> Result<f64> {
        check_len(self.n, x.len())?;
        let mut maxima = Vec::with_capacity(self.reps);
        for rep in 0..self.reps {
            let mut rng =
                ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ (rep as u64) << 32));
            let mut bucket = vec![0.0f64; self.buckets];
            for e in 0..self.n {
                let slot = rng.random_range(0..self.buckets);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let exp: f64 = rng.sample(Exp1);
                bucket[slot] += sign * x[e] / exp.cbrt();
            }
            maxima.push(bucket.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        maxima.sort_by(|a, b| a.total_cmp(b));
        Ok(maxima[self.reps / 2] / L3_MEDIAN_BIAS)
    }
}

/// Count-sketch heavy hitter: `reps` sign/bucket hash pairs over
/// ⌈4/ε²⌉ buckets, decoded by the median estimator against a table-based
/// ℓ2 norm estimate. Returns candidates only; callers confirm against
/// exact queries.
#[derive(Debug, Clone)]
pub struct HeavyHitterSketch {
    n: usize,
    eps_heavy: f64,
    reps: usize,
    buckets: usize,
    cap: usize,
    seed: u64,
}

/// Sketch image: one bucket row per repetition.
#[derive(Debug, Clone)]
pub struct HeavyHitterImage {
    table: Vec<Array1<f64>>,
}

impl HeavyHitterSketch {
    pub fn new(n: usize, eps_heavy: f64, delta_fail: f64, seed: u64) -> Result<HeavyHitterSketch> {
        if n == 0 {
            return Err(Error::InternalConsistency(
                "heavy-hitter sketch needs a positive dimension".into(),
            ));
        }
        if !(eps_heavy > 0.0) || !eps_heavy.is_finite() {
            return Err(Error::InvalidScale(eps_heavy));
        }
        if !(delta_fail > 0.0 && delta_fail < 1.0) {
            return Err(Error::InvalidScale(delta_fail));
        }
        let nf = (n as f64).max(3.0);
        let reps = ((nf / delta_fail).ln() / 2f64.ln()).ceil() as usize;
        let reps = reps.max(5) | 1;
        let buckets = ((4.0 / (eps_heavy * eps_heavy)).ceil() as usize).max(2);
        let cap = ((4.0 / (eps_heavy * eps_heavy)).ceil() as usize).max(1);
        Ok(HeavyHitterSketch {
            n,
            eps_heavy,
            reps,
            buckets,
            cap,
            seed,
        })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    fn hashes(&self, rep: usize, e: usize) -> (usize, f64) {
        let h = splitmix64(self.seed ^ ((rep as u64) << 40) ^ (e as u64).wrapping_mul(0x100000001B3));
        let slot = (h >> 8) as usize % self.buckets;
        let sign = if h & 1 == 1 { 1.0 } else { -1.0 };
        (slot, sign)
    }

    pub fn sketch(&self, x: &Array1<f64>) -> Result<HeavyHitterImage> {
        check_len(self.n, x.len())?;
        let mut table = vec![Array1::<f64>::zeros(self.buckets); self.reps];
        for rep in 0..self.reps {
            for e in 0..self.n {
                let (slot, sign) = self.hashes(rep, e);
                table[rep][slot] += sign * x[e];
            }
        }
        Ok(HeavyHitterImage { table })
    }

    /// Candidate heavy coordinates of the sketched vector: all indices whose
    /// median estimate reaches (ε/2) times the estimated ℓ2 norm, largest
    /// first, capped at ⌈4/ε²⌉ entries.
    pub fn decode(&self, image: &HeavyHitterImage) -> Result<Vec<usize>> {
        if image.table.len() != self.reps
            || image.table.iter().any(|row| row.len() != self.buckets)
        {
            return Err(Error::InternalConsistency(
                "heavy-hitter image does not match the sketch geometry".into(),
            ));
        }
        // Each repetition's table norm has expectation ‖x‖₂²; the median
        // over repetitions is a robust scale reference.
        let mut norms: Vec<f64> = image
            .table
            .iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        norms.sort_by(|a, b| a.total_cmp(b));
        let scale = norms[norms.len() / 2];
        let mut estimates: Vec<(usize, f64)> = (0..self.n)
            .map(|e| {
                let mut values: Vec<f64> = (0..self.reps)
                    .map(|rep| {
                        let (slot, sign) = self.hashes(rep, e);
                        sign * image.table[rep][slot]
                    })
                    .collect();
                values.sort_by(|a, b| a.total_cmp(b));
                (e, values[self.reps / 2].abs())
            })
            .collect();
        estimates.retain(|&(_, est)| est >= 0.5 * self.eps_heavy * scale);
        estimates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        estimates.truncate(self.cap);
        Ok(estimates.into_iter().map(|(e, _)| e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit_vector(n: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v /= norm;
        v
    }

    #[test]
    fn cwe_unit_basis_diagonal_is_exact() {
        let n = 32;
        for seed in 0..20u64 {
            let sk = CweSketch::new(n, 8, seed).unwrap();
            let mut x = Array1::zeros(n);
            x[3] = 1.0;
            let y = sk.roundtrip(&x).unwrap();
            assert_eq!(y[3], 1.0, "diagonal must be exact for seed {seed}");
        }
    }

    #[test]
    fn cwe_mean_matches_the_identity() {
        let n = 32;
        let b = 8;
        let x = unit_vector(n, 7);
        let trials = 10_000;
        let e = 5usize;
        let mut sum = 0.0;
        let mut sums_sq = 0.0;
        for seed in 0..trials {
            let y = CweSketch::new(n, b, seed).unwrap().roundtrip(&x).unwrap();
            sum += y[e];
            sums_sq += y[e] * y[e];
        }
        let mean = sum / trials as f64;
        let var = (sums_sq / trials as f64 - mean * mean).max(0.0);
        let stderr = (var / trials as f64).sqrt();
        assert!(
            (mean - x[e]).abs() <= 4.0 * stderr,
            "mean {mean} vs true {} with stderr {stderr}",
            x[e]
        );
        // Empirical variance against the embedding bound ‖x‖²/b with an
        // extra factor 2 of statistical slack.
        assert!(
            var <= 2.0 / b as f64,
            "variance {var} exceeds 2·‖x‖²/b = {}",
            2.0 / b as f64
        );
    }

    #[test]
    fn cwe_bilinear_concentration_failure_rate() {
        let n = 64;
        let b = 16;
        let g = unit_vector(n, 11);
        let h = unit_vector(n, 13);
        let exact = g.dot(&h);
        let c2 = (n as f64).log2().ceil();
        let bound = c2 / (b as f64).sqrt();
        let trials = 10_000;
        let mut failures = 0;
        for seed in 0..trials {
            let sk = CweSketch::new(n, b, seed).unwrap();
            let est = sk.apply(&g).unwrap().dot(&sk.apply(&h).unwrap());
            if (est - exact).abs() > bound {
                failures += 1;
            }
        }
        let rate = failures as f64 / trials as f64;
        println!("bilinear concentration failure rate: {rate:.4}");
        assert!(rate <= 0.01, "failure rate {rate} above 1%");
    }

    #[test]
    fn cwe_error_distribution_is_symmetric() {
        let n = 32;
        let b = 8;
        let x = unit_vector(n, 17);
        let e = 2usize;
        let trials = 10_000;
        let mut errors = Vec::with_capacity(trials as usize);
        for seed in 0..trials {
            let y = CweSketch::new(n, b, seed).unwrap().roundtrip(&x).unwrap();
            errors.push(y[e] - x[e]);
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let var = errors.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / errors.len() as f64;
        let skew = errors.iter().map(|v| (v - mean).powi(3)).sum::<f64>()
            / (errors.len() as f64 * var.powf(1.5));
        println!("embedding error skewness: {skew:.4}");
        assert!(skew.abs() <= 0.1, "skewness {skew} outside ±0.1");
    }

    #[test]
    fn cwe_reweighted_roundtrip_matches_direct_conjugation() {
        let n = 16;
        let sk = CweSketch::new(n, 8, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let scale = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 + 0.1);
        let x = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let got = sk.reweighted_roundtrip(&scale, &x).unwrap();
        let lifted = Array1::from_shape_fn(n, |e| scale[e].sqrt() * x[e]);
        let want = sk.roundtrip(&lifted).unwrap();
        for e in 0..n {
            assert!((got[e] - want[e] / scale[e].sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn cwe_is_deterministic_in_the_seed() {
        let x = unit_vector(24, 3);
        let a = CweSketch::new(24, 6, 42).unwrap().roundtrip(&x).unwrap();
        let b = CweSketch::new(24, 6, 42).unwrap().roundtrip(&x).unwrap();
        assert_eq!(a, b);
        let c = CweSketch::new(24, 6, 43).unwrap().roundtrip(&x).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn jl_zero_vector_and_exact_doubling() {
        let n = 40;
        let sk = JlSketch::new(n, 0.2, 0.01, JL_DEFAULT_ROW_CONSTANT, 7).unwrap();
        let zero = Array1::zeros(n);
        assert_eq!(sk.norm(&zero).unwrap(), 0.0);
        let x = unit_vector(n, 21);
        let one = sk.norm(&x).unwrap();
        let two = sk.norm(&(&x * 2.0)).unwrap();
        assert_eq!(two, 2.0 * one, "power-of-two scaling must be exact");
    }

    #[test]
    fn jl_norm_concentrates_at_the_configured_rate() {
        let n = 64;
        let x = unit_vector(n, 23);
        let trials = 1_000;
        let mut hits = 0;
        for seed in 0..trials {
            let sk = JlSketch::new(n, 0.2, 0.01, JL_DEFAULT_ROW_CONSTANT, seed).unwrap();
            let est = sk.norm(&x).unwrap();
            if est >= 0.8 && est <= 1.2 {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        println!("JL acceptance rate: {rate:.3}");
        assert!(rate >= 0.99, "JL rate {rate} below 99%");
    }

    #[test]
    fn l3_exact_norm_agrees_with_hand_values() {
        assert_eq!(l3_norm(&array![0.0, 0.0]), 0.0);
        assert!((l3_norm(&array![1.0, -1.0]) - 2f64.cbrt()).abs() < 1e-15);
        assert!((l3_norm(&array![3.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn l3_estimate_zero_and_exact_doubling() {
        let n = 32;
        let sk = L3Sketch::new(n, 1.0, 5).unwrap();
        assert_eq!(sk.estimate(&Array1::zeros(n)).unwrap(), 0.0);
        let x = unit_vector(n, 29);
        let one = sk.estimate(&x).unwrap();
        let two = sk.estimate(&(&x * 2.0)).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12 * one.max(1.0));
    }

    #[test]
    fn l3_estimate_lands_in_the_distortion_band() {
        // Band [C₃^{-1/3}, C₃^{1/3}] with the measured constant C₃ = 2.
        let n = 64;
        let lo = 2f64.powf(-1.0 / 3.0);
        let hi = 2f64.powf(1.0 / 3.0);
        let mut worst = 0.0f64;
        for (label, x) in [
            ("basis", {
                let mut x = Array1::zeros(n);
                x[1] = 1.0;
                x
            }),
            ("flat", Array1::from_elem(n, 1.0)),
        ] {
            let exact = l3_norm(&x);
            let trials = 1_000;
            let mut hits = 0;
            for seed in 0..trials {
                let sk = L3Sketch::new(n, 1.0, seed).unwrap();
                let ratio = sk.estimate(&x).unwrap() / exact;
                if ratio >= lo && ratio <= hi {
                    hits += 1;
                }
            }
            let miss = 1.0 - hits as f64 / trials as f64;
            println!("l3 {label} miss rate: {miss:.3}");
            worst = worst.max(miss);
        }
        assert!(worst <= 0.01, "l3 estimator missed the band too often");
    }

    #[test]
    fn heavy_hitter_recovers_a_planted_spike() {
        let n = 64;
        let trials = 1_000;
        let mut hits = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..trials {
            let mut x = Array1::from_shape_fn(n, |_| {
                rng.sample::<f64, _>(StandardNormal) * 0.1
            });
            x[3] += 10.0;
            let sk = HeavyHitterSketch::new(n, 0.5, 0.01, seed).unwrap();
            let list = sk.decode(&sk.sketch(&x).unwrap()).unwrap();
            if list.contains(&3) {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        println!("heavy-hitter recall: {rate:.3}");
        assert!(rate >= 0.99);
    }

    #[test]
    fn heavy_hitter_reports_all_exactly_heavy_coordinates() {
        let n = 48;
        let eps = 0.4;
        let trials = 1_000;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut misses = 0;
        for seed in 0..trials {
            let mut x = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            // Plant two spikes of different magnitudes.
            x[5] = 8.0;
            x[17] = -6.0;
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let heavy: Vec<usize> =
                (0..n).filter(|&e| x[e].abs() >= eps * norm).collect();
            let sk = HeavyHitterSketch::new(n, eps, 0.01, seed).unwrap();
            let list = sk.decode(&sk.sketch(&x).unwrap()).unwrap();
            assert!(list.len() <= sk.cap());
            if !heavy.iter().all(|e| list.contains(e)) {
                misses += 1;
            }
        }
        let rate = misses as f64 / trials as f64;
        println!("heavy-hitter miss rate: {rate:.3}");
        assert!(rate <= 0.01);
    }

    #[test]
    fn martingale_accumulation_stays_under_the_freedman_bound() {
        // Sum of per-iteration embedding errors of a fixed coordinate
        // across independent sketches, against the accumulation bound
        // 10(C₁+C₂)·ln n·√(nT/(bε)) with C₁ = 1, C₂ = ⌈log₂ n⌉.
        let n = 64;
        let t_rounds = 32u64;
        let eps: f64 = 0.5;
        let b = ((n as f64).powf(0.6) * eps.powi(-2) * (n as f64).ln()).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let w = Array1::from_shape_fn(n, |_| rng.random::<f64>() + 0.5);
        let phi: f64 = w.sum();
        let rbar = Array1::from_shape_fn(n, |e| w[e] + eps / n as f64 * phi);
        let mut u = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let psi: f64 = (0..n).map(|e| rbar[e] * u[e] * u[e]).sum();
        u *= (phi / psi).sqrt();
        let c2 = (n as f64).log2().ceil();
        let bound = 10.0 * (1.0 + c2) * (n as f64).ln()
            * ((n as u64 * t_rounds) as f64 / (b as f64 * eps)).sqrt();
        let replays = 200;
        let mut ok = 0;
        let e = 9usize;
        for replay in 0..replays {
            let master = derive_seed(4242, replay, SeedPurpose::ResidualEmbedding);
            let mut acc = 0.0;
            for round in 0..t_rounds {
                let seed = derive_seed(master, round, SeedPurpose::ResidualEmbedding);
                let sk = CweSketch::new(n, b, seed).unwrap();
                let uhat = sk.reweighted_roundtrip(&rbar, &u).unwrap();
                acc += uhat[e] - u[e];
            }
            if acc.abs() <= bound {
                ok += 1;
            }
        }
        let rate = ok as f64 / replays as f64;
        println!("martingale acceptance rate: {rate:.3}");
        assert!(rate >= 0.99);
    }

    #[test]
    fn derived_seeds_separate_purposes_and_counters() {
        let a = derive_seed(1, 0, SeedPurpose::ResidualEmbedding);
        let b = derive_seed(1, 0, SeedPurpose::HeavyHitter);
        let c = derive_seed(1, 1, SeedPurpose::ResidualEmbedding);
        let d = derive_seed(2, 0, SeedPurpose::ResidualEmbedding);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_seed(1, 0, SeedPurpose::ResidualEmbedding));
    }
}
