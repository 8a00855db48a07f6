//! Lazily updated resistance approximations.
//!
//! A solver's resistance vector changes a little every iteration, but the
//! expensive downstream consumers (inverse maintenance) only want to hear
//! about coordinates whose value moved materially. The schemes here maintain
//! an approximation that stays within a multiplicative e^δ band of the true
//! vector while touching few coordinates per step: one driven by dyadic
//! index windows, one driven by a bucket decomposition of per-step ℓ3 mass.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Counters describing how much lazy-update work a run performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectStats {
    pub calls: u64,
    /// Coordinates refreshed by the selection rules (width syncs excluded).
    pub synced_coordinates: u64,
    /// Coordinates synced exactly by width steps.
    pub width_syncs: u64,
    /// Out-of-band syncs forced by the approximation guard. Zero in any run
    /// that respects the schemes' stability preconditions.
    pub forced_syncs: u64,
}

#[derive(Debug, Clone)]
struct Bucket {
    members: u64,
    /// Per-level running sums of |ratio − 1| since the level's last test.
    acc: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
enum Scheme {
    /// Compare against snapshots taken 2^ℓ indices ago, for every dyadic
    /// level ℓ that divides the current index.
    Dyadic { anchors: Vec<Array1<f64>> },
    /// Bucket iterations by per-step ℓ3 mass; test windows of bucket
    /// members rather than windows of raw indices.
    Bucketed {
        zeta: f64,
        cap: u64,
        log_t: u32,
        buckets: Vec<Option<Bucket>>,
    },
}

/// δ-approximate view of a positive vector undergoing multiplicative drift.
///
/// Invariant after every accepted call: |ln(approx_e / r_e)| ≤ δ for all e.
#[derive(Debug, Clone)]
pub struct LazyVector {
    approx: Array1<f64>,
    /// The exact vector as of the most recently processed index.
    prev: Array1<f64>,
    delta: f64,
    log_n: u32,
    next_index: u64,
    /// Last index at which a width step touched the coordinate; -1 if never.
    last_width: Vec<i64>,
    update_log: Vec<(u64, Vec<usize>)>,
    stats: SelectStats,
    scheme: Scheme,
}

fn ceil_log2(x: u64) -> u32 {
    match x {
        0 | 1 => 0,
        _ => 64 - (x - 1).leading_zeros(),
    }
}

fn check_positive(r: &Array1<f64>) -> Result<()> {
    for (e, &v) in r.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::PositivityBreach { coord: e, value: v });
        }
    }
    Ok(())
}

/// Bucket index for one iteration's ℓ3 mass: the unique j with
/// ζ/2^{j+1} < m ≤ ζ/2^j, or the last bucket when m ≤ ζ/cap.
pub fn classify_iteration(mass: f64, zeta: f64, cap: u64) -> Result<u32> {
    if !mass.is_finite() || mass < 0.0 {
        return Err(Error::InternalConsistency(format!(
            "iteration mass {mass} is not a finite nonnegative number"
        )));
    }
    if mass > zeta {
        return Err(Error::BudgetExceeded {
            mass,
            budget: zeta,
        });
    }
    let log_t = ceil_log2(cap).max(1);
    if mass * cap as f64 <= zeta {
        return Ok(log_t);
    }
    for j in 0..log_t {
        if mass > zeta / 2f64.powi(j as i32 + 1) {
            return Ok(j);
        }
    }
    Ok(log_t)
}

impl LazyVector {
    /// Dyadic-window scheme, initialized at index 0 with a full sync.
    pub fn dyadic(r0: Array1<f64>, delta: f64) -> Result<LazyVector> {
        let log_n = ceil_log2(r0.len() as u64).max(1);
        let anchors = vec![r0.clone(); log_n as usize + 1];
        LazyVector::init(r0, delta, Scheme::Dyadic { anchors })
    }

    /// Bucketed ℓ3 scheme for monotone weight sequences with total ℓ3
    /// ratio mass at most `zeta` over at most `cap` iterations.
    pub fn bucketed(r0: Array1<f64>, delta: f64, zeta: f64, cap: u64) -> Result<LazyVector> {
        if !(zeta > 0.0) || !zeta.is_finite() {
            return Err(Error::InvalidScale(zeta));
        }
        if cap == 0 {
            return Err(Error::InternalConsistency(
                "bucketed scheme needs a positive iteration cap".into(),
            ));
        }
        let log_t = ceil_log2(cap).max(1);
        let buckets = vec![None; log_t as usize + 1];
        LazyVector::init(
            r0,
            delta,
            Scheme::Bucketed {
                zeta,
                cap,
                log_t,
                buckets,
            },
        )
    }

    fn init(r0: Array1<f64>, delta: f64, scheme: Scheme) -> Result<LazyVector> {
        if r0.is_empty() {
            return Err(Error::InternalConsistency(
                "lazy vector needs at least one coordinate".into(),
            ));
        }
        check_positive(&r0)?;
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::InvalidScale(delta));
        }
        let n = r0.len();
        let log_n = ceil_log2(n as u64).max(1);
        let all: Vec<usize> = (0..n).collect();
        Ok(LazyVector {
            approx: r0.clone(),
            prev: r0,
            delta,
            log_n,
            next_index: 1,
            last_width: vec![-1; n],
            update_log: vec![(0, all)],
            stats: SelectStats {
                calls: 1,
                synced_coordinates: n as u64,
                ..SelectStats::default()
            },
            scheme,
        })
    }

    pub fn len(&self) -> usize {
        self.approx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.approx.is_empty()
    }

    pub fn approx(&self) -> &Array1<f64> {
        &self.approx
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn stats(&self) -> &SelectStats {
        &self.stats
    }

    pub fn update_log(&self) -> &[(u64, Vec<usize>)] {
        &self.update_log
    }

    /// Index the next select call must carry.
    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    fn check_step(&self, r_new: &Array1<f64>, index: u64) -> Result<()> {
        if r_new.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "lazy vector has {} coordinates, update has {}",
                    self.len(),
                    r_new.len()
                ),
            });
        }
        check_positive(r_new)?;
        if index != self.next_index {
            return Err(Error::InternalConsistency(format!(
                "select called with index {index}, expected {}",
                self.next_index
            )));
        }
        Ok(())
    }

    /// Sync any coordinate the scheme left outside the e^δ band. This never
    /// fires when the drift obeys the schemes' stability preconditions; it
    /// exists so the approximation guarantee survives any input.
    fn enforce_band(&mut self, r_new: &Array1<f64>, sync: &mut Vec<usize>) {
        for e in 0..self.len() {
            if (self.approx[e] / r_new[e]).ln().abs() > self.delta {
                self.approx[e] = r_new[e];
                sync.push(e);
                self.stats.forced_syncs += 1;
            }
        }
    }

    fn commit(&mut self, r_new: &Array1<f64>, index: u64, mut sync: Vec<usize>) -> Vec<usize> {
        sync.sort_unstable();
        sync.dedup();
        for &e in &sync {
            self.approx[e] = r_new[e];
        }
        self.enforce_band(r_new, &mut sync);
        sync.sort_unstable();
        self.prev.assign(r_new);
        self.next_index = index + 1;
        self.stats.calls += 1;
        self.stats.synced_coordinates += sync.len() as u64;
        self.update_log.push((index, sync.clone()));
        sync
    }

    /// Dyadic selection: for every level ℓ with 2^ℓ | index, refresh the
    /// coordinates whose log-ratio against the snapshot 2^ℓ indices back
    /// reaches δ/(2 log n), unless a width step touched them inside that
    /// window. The top level forces a full refresh.
    pub fn select_vector(&mut self, r_new: &Array1<f64>, index: u64) -> Result<Vec<usize>> {
        self.check_step(r_new, index)?;
        let n = self.len();
        let log_n = self.log_n;
        let threshold = self.delta / (2.0 * log_n as f64);
        let Scheme::Dyadic { anchors } = &mut self.scheme else {
            return Err(Error::ContractViolation(
                "dyadic selection called on a bucketed lazy vector".into(),
            ));
        };
        let mut sync: Vec<usize> = Vec::new();
        for level in 0..=log_n {
            let span = 1u64 << level;
            if index % span != 0 {
                continue;
            }
            if level == log_n {
                sync = (0..n).collect();
                break;
            }
            let anchor = &anchors[level as usize];
            let cutoff = index as i64 - span as i64;
            for e in 0..n {
                if self.last_width[e] > cutoff {
                    continue;
                }
                if (r_new[e] / anchor[e]).ln().abs() >= threshold {
                    sync.push(e);
                }
            }
        }
        for level in 0..=log_n {
            if index % (1u64 << level) == 0 {
                anchors[level as usize].assign(r_new);
            }
        }
        Ok(self.commit(r_new, index, sync))
    }

    /// Bucketed selection for monotone sequences: the step joins the bucket
    /// matching its ℓ3 ratio mass, and every level whose stride divides the
    /// step's in-bucket rank tests accumulated |ratio − 1| over the last
    /// 2^ℓ bucket members against δ/(10 log² n).
    pub fn select_vector_l3(&mut self, r_new: &Array1<f64>, index: u64) -> Result<Vec<usize>> {
        self.check_step(r_new, index)?;
        let n = self.len();
        let threshold = self.delta / (10.0 * (self.log_n as f64).powi(2));
        let mut deviation = Array1::<f64>::zeros(n);
        let mut mass = 0.0;
        for e in 0..n {
            if r_new[e] < self.prev[e] * (1.0 - 1e-12) {
                return Err(Error::ContractViolation(format!(
                    "coordinate {e} decreased from {} to {} under the monotone scheme",
                    self.prev[e], r_new[e]
                )));
            }
            let dev = (r_new[e] / self.prev[e] - 1.0).abs();
            deviation[e] = dev;
            mass += dev.powi(3);
        }
        let Scheme::Bucketed {
            zeta,
            cap,
            log_t,
            buckets,
        } = &mut self.scheme
        else {
            return Err(Error::ContractViolation(
                "bucketed selection called on a dyadic lazy vector".into(),
            ));
        };
        let j = classify_iteration(mass, *zeta, *cap)?;
        let log_t = *log_t;
        let bucket = buckets[j as usize].get_or_insert_with(|| Bucket {
            members: 0,
            acc: vec![Array1::zeros(n); log_t as usize + 1],
        });
        bucket.members += 1;
        let rank = bucket.members;
        let mut sync: Vec<usize> = Vec::new();
        for level in 0..=log_t {
            let acc = &mut bucket.acc[level as usize];
            *acc += &deviation;
            if rank % (1u64 << level) == 0 {
                for e in 0..n {
                    if acc[e] >= threshold {
                        sync.push(e);
                    }
                }
                acc.fill(0.0);
            }
        }
        Ok(self.commit(r_new, index, sync))
    }

    /// Record a width step without syncing: touched coordinates are only
    /// marked, so straddling dyadic windows skip them while the level-0
    /// window picks them up at the next select. The monotone solver's width
    /// branch leaves r̄ stale for exactly one iteration this way.
    pub fn note_width_marks(&mut self, index: u64, coords: &[usize]) -> Result<()> {
        if index + 1 != self.next_index {
            return Err(Error::InternalConsistency(format!(
                "width mark at index {index}, but the last processed index is {}",
                self.next_index - 1
            )));
        }
        for &e in coords {
            if e >= self.len() {
                return Err(Error::InternalConsistency(format!(
                    "width mark for coordinate {e} on a {}-coordinate vector",
                    self.len()
                )));
            }
            self.last_width[e] = index as i64;
        }
        Ok(())
    }

    /// Record a width step: touched coordinates sync exactly and are marked
    /// so dyadic windows spanning the step skip them. `index` must be the
    /// most recently processed select index.
    pub fn note_width_update(
        &mut self,
        index: u64,
        coords: &[usize],
        r_now: &Array1<f64>,
    ) -> Result<()> {
        if r_now.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "lazy vector has {} coordinates, width sync has {}",
                    self.len(),
                    r_now.len()
                ),
            });
        }
        if index + 1 != self.next_index {
            return Err(Error::InternalConsistency(format!(
                "width sync at index {index}, but the last processed index is {}",
                self.next_index - 1
            )));
        }
        for &e in coords {
            if e >= self.len() {
                return Err(Error::InternalConsistency(format!(
                    "width sync for coordinate {e} on a {}-coordinate vector",
                    self.len()
                )));
            }
            let v = r_now[e];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::PositivityBreach { coord: e, value: v });
            }
            self.approx[e] = v;
            self.last_width[e] = index as i64;
        }
        self.stats.width_syncs += coords.len() as u64;
        self.update_log.push((index, coords.to_vec()));
        Ok(())
    }
}
