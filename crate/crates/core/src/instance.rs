//! Job-shop instances with deterministic or triangular operation durations.

use rand::Rng;
use thiserror::Error;

use crate::seed::{self, stream};

/// Operation identifier: `job * n_machines + rank`.
pub type OpId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("instance dimensions must be positive (got {n_jobs}x{n_machines})")]
    EmptyDimension { n_jobs: usize, n_machines: usize },
    #[error("job {job}: machine sequence is not a permutation of 0..{n_machines}")]
    NotPermutation { job: usize, n_machines: usize },
    #[error("invalid duration parameters (min {min}, mode {mode}, max {max}): need 0 < min <= mode <= max")]
    InvalidDuration { min: f64, mode: f64, max: f64 },
    #[error("invalid bounds: low {low} must be <= 1 and high {high} >= 1")]
    InvalidBounds { low: f64, high: f64 },
    #[error("operation table has {got} entries, expected {expected}")]
    WrongShape { expected: usize, got: usize },
    #[error("stochasticize expects deterministic durations (job {job}, rank {rank})")]
    AlreadyStochastic { job: usize, rank: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for InstanceError {
    fn from(e: std::io::Error) -> Self {
        InstanceError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DurationKind {
    Deterministic,
    Triangular,
}

/// Duration law of one operation. Deterministic durations store `min = mode = max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationModel {
    kind: DurationKind,
    min: f64,
    mode: f64,
    max: f64,
}

impl DurationModel {
    pub fn deterministic(duration: f64) -> Result<Self, InstanceError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(InstanceError::InvalidDuration {
                min: duration,
                mode: duration,
                max: duration,
            });
        }
        Ok(Self {
            kind: DurationKind::Deterministic,
            min: duration,
            mode: duration,
            max: duration,
        })
    }

    pub fn triangular(min: f64, mode: f64, max: f64) -> Result<Self, InstanceError> {
        if !(min > 0.0 && min <= mode && mode <= max && max.is_finite()) {
            return Err(InstanceError::InvalidDuration { min, mode, max });
        }
        Ok(Self {
            kind: DurationKind::Triangular,
            min,
            mode,
            max,
        })
    }

    pub fn kind(&self) -> DurationKind {
        self.kind
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn mode(&self) -> f64 {
        self.mode
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn mean(&self) -> f64 {
        (self.min + self.mode + self.max) / 3.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, c, b) = (self.min, self.mode, self.max);
        if x < a {
            0.0
        } else if x >= b {
            1.0
        } else if x <= c {
            (x - a) * (x - a) / ((b - a) * (c - a))
        } else {
            1.0 - (b - x) * (b - x) / ((b - a) * (b - c))
        }
    }

    /// Inverse CDF at `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        triangular_quantile(self.min, self.mode, self.max, u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            DurationKind::Deterministic => self.mode,
            DurationKind::Triangular => self.quantile(rng.random::<f64>()),
        }
    }
}

/// Inverse CDF of the triangular law with support `[min, max]` and the given mode.
pub fn triangular_quantile(min: f64, mode: f64, max: f64, u: f64) -> f64 {
    let width = max - min;
    if width <= 0.0 {
        return mode;
    }
    let at_mode = (mode - min) / width;
    let x = if u < at_mode {
        min + (u * width * (mode - min)).sqrt()
    } else {
        max - ((1.0 - u) * width * (max - mode)).sqrt()
    };
    x.clamp(min, max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Operation {
    pub job: usize,
    pub rank: usize,
    pub machine: usize,
    pub duration: DurationModel,
}

/// A square job-shop instance: every job visits every machine exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    n_jobs: usize,
    n_machines: usize,
    ops: Vec<Operation>,
    seed: Option<u64>,
}

impl Instance {
    /// Builds an instance from per-job machine sequences and duration models.
    pub fn new(
        machines: Vec<Vec<usize>>,
        durations: Vec<Vec<DurationModel>>,
    ) -> Result<Self, InstanceError> {
        let n_jobs = machines.len();
        let n_machines = machines.first().map_or(0, Vec::len);
        if n_jobs == 0 || n_machines == 0 {
            return Err(InstanceError::EmptyDimension { n_jobs, n_machines });
        }
        if durations.len() != n_jobs {
            return Err(InstanceError::WrongShape {
                expected: n_jobs * n_machines,
                got: durations.iter().map(Vec::len).sum(),
            });
        }
        let mut ops = Vec::with_capacity(n_jobs * n_machines);
        for (job, (row, drow)) in machines.iter().zip(&durations).enumerate() {
            if !is_permutation(row, n_machines) {
                return Err(InstanceError::NotPermutation { job, n_machines });
            }
            if drow.len() != n_machines {
                return Err(InstanceError::WrongShape {
                    expected: n_jobs * n_machines,
                    got: durations.iter().map(Vec::len).sum(),
                });
            }
            for (rank, (&machine, &duration)) in row.iter().zip(drow).enumerate() {
                ops.push(Operation {
                    job,
                    rank,
                    machine,
                    duration,
                });
            }
        }
        Ok(Self {
            n_jobs,
            n_machines,
            ops,
            seed: None,
        })
    }

    /// Deterministic instance from integer-like duration and machine matrices.
    pub fn deterministic(
        durations: Vec<Vec<f64>>,
        machines: Vec<Vec<usize>>,
    ) -> Result<Self, InstanceError> {
        let models = durations
            .into_iter()
            .map(|row| row.into_iter().map(DurationModel::deterministic).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        Self::new(machines, models)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_jobs(&self) -> usize {
        self.n_jobs
    }

    pub fn n_machines(&self) -> usize {
        self.n_machines
    }

    pub fn n_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn ops(&self) -> &[Operation] {
        &self.ops
    }

    #[inline]
    pub fn op_id(&self, job: usize, rank: usize) -> OpId {
        job * self.n_machines + rank
    }

    #[inline]
    pub fn op(&self, id: OpId) -> &Operation {
        &self.ops[id]
    }

    #[inline]
    pub fn machine(&self, id: OpId) -> usize {
        self.ops[id].machine
    }

    #[inline]
    pub fn job_pred(&self, id: OpId) -> Option<OpId> {
        (self.ops[id].rank > 0).then(|| id - 1)
    }

    pub fn is_stochastic(&self) -> bool {
        self.ops
            .iter()
            .any(|o| o.duration.kind() == DurationKind::Triangular)
    }

    pub fn min_durations(&self) -> Vec<f64> {
        self.ops.iter().map(|o| o.duration.min()).collect()
    }

    pub fn mode_durations(&self) -> Vec<f64> {
        self.ops.iter().map(|o| o.duration.mode()).collect()
    }

    pub fn max_durations(&self) -> Vec<f64> {
        self.ops.iter().map(|o| o.duration.max()).collect()
    }

    /// Largest `max` parameter over all operations.
    pub fn max_duration(&self) -> f64 {
        self.ops.iter().map(|o| o.duration.max()).fold(0.0, f64::max)
    }

    /// Operations that run on `machine`, in job order.
    pub fn ops_on_machine(&self, machine: usize) -> Vec<OpId> {
        (0..self.n_ops())
            .filter(|&o| self.ops[o].machine == machine)
            .collect()
    }

    /// Machine matrix, one row per job.
    pub fn machine_rows(&self) -> Vec<Vec<usize>> {
        self.ops
            .chunks(self.n_machines)
            .map(|row| row.iter().map(|o| o.machine).collect())
            .collect()
    }
}

fn is_permutation(row: &[usize], n: usize) -> bool {
    if row.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &m in row {
        if m >= n || std::mem::replace(&mut seen[m], true) {
            return false;
        }
    }
    true
}

/// One joint realization of all operation durations, indexed by [`OpId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub durations: Vec<f64>,
}

impl Scenario {
    pub fn mode(instance: &Instance) -> Self {
        Self {
            durations: instance.mode_durations(),
        }
    }

    pub fn min(instance: &Instance) -> Self {
        Self {
            durations: instance.min_durations(),
        }
    }

    pub fn max(instance: &Instance) -> Self {
        Self {
            durations: instance.max_durations(),
        }
    }

    /// Checks `min <= real <= max` for every operation.
    pub fn is_consistent_with(&self, instance: &Instance) -> bool {
        self.durations.len() == instance.n_ops()
            && instance
                .ops()
                .iter()
                .zip(&self.durations)
                .all(|(o, &d)| o.duration.min() <= d && d <= o.duration.max())
    }
}

/// Taillard-style generator: integer durations uniform in `[1, 99]`, each job
/// an independent uniform permutation of the machines.
pub fn generate_taillard(
    n_jobs: usize,
    n_machines: usize,
    seed: u64,
) -> Result<Instance, InstanceError> {
    if n_jobs == 0 || n_machines == 0 {
        return Err(InstanceError::EmptyDimension { n_jobs, n_machines });
    }
    let mut rng = seed::rng_for(seed, &[stream::STRUCTURE]);
    let mut durations = Vec::with_capacity(n_jobs);
    let mut machines = Vec::with_capacity(n_jobs);
    for _ in 0..n_jobs {
        durations.push(
            (0..n_machines)
                .map(|_| rng.random_range(1..=99u32) as f64)
                .collect(),
        );
        let mut perm: Vec<usize> = (0..n_machines).collect();
        // Fisher-Yates
        for i in (1..n_machines).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        machines.push(perm);
    }
    Ok(Instance::deterministic(durations, machines)?.with_seed(Some(seed)))
}

/// Turns deterministic durations into triangular ones with the original
/// duration as mode, `min` uniform in `[low*mode, mode]` and `max` uniform in
/// `[mode, high*mode]`. Parameters stay real-valued.
pub fn stochasticize(
    instance: &Instance,
    seed: u64,
    low: f64,
    high: f64,
) -> Result<Instance, InstanceError> {
    if !(low <= 1.0 && low > 0.0 && high >= 1.0 && high.is_finite()) {
        return Err(InstanceError::InvalidBounds { low, high });
    }
    let mut rng = seed::rng_for(seed, &[stream::BOUNDS]);
    let mut ops = Vec::with_capacity(instance.n_ops());
    for op in instance.ops() {
        if op.duration.kind() != DurationKind::Deterministic {
            return Err(InstanceError::AlreadyStochastic {
                job: op.job,
                rank: op.rank,
            });
        }
        let mode = op.duration.mode();
        let u_min: f64 = rng.random();
        let u_max: f64 = rng.random();
        let min = mode - u_min * (mode - low * mode);
        let max = mode + u_max * (high * mode - mode);
        ops.push(Operation {
            duration: DurationModel::triangular(min, mode, max)?,
            ..*op
        });
    }
    Ok(Instance {
        ops,
        ..instance.clone()
    })
}

/// Draws one duration per operation by inverse-CDF sampling.
pub fn sample_scenario(instance: &Instance, seed: u64) -> Scenario {
    let mut rng = seed::rng_for(seed, &[stream::SCENARIO]);
    sample_scenario_with(instance, &mut rng)
}

pub fn sample_scenario_with<R: Rng + ?Sized>(instance: &Instance, rng: &mut R) -> Scenario {
    Scenario {
        durations: instance
            .ops()
            .iter()
            .map(|o| o.duration.sample(rng))
            .collect(),
    }
}
