//! Forward Euler–Maruyama particle ensemble.
//!
//! Every Brownian increment is a pure function of `(seed, particle, level)`,
//! so any level can be regenerated bitwise during the backward sweep and the
//! particle loop can run in any order. When the full `(N+1)·M·d` trajectory
//! array does not fit the memory budget, only every `stride`-th level (plus
//! the terminal level) is stored and the rest are re-simulated on demand.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Identifies the Gaussian block `ΔW_k^j` of one particle at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStreamKey {
    pub seed: u64,
    pub particle: u32,
    pub level: u32,
}

impl RngStreamKey {
    pub fn new(seed: u64, particle: usize, level: usize) -> Self {
        RngStreamKey {
            seed,
            particle: particle as u32,
            level: level as u32,
        }
    }

    fn generator(&self) -> ChaCha8Rng {
        // ChaCha keyed by the seed; the 64-bit stream id selects (particle, level).
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.particle as u64) << 32) | self.level as u64);
        rng
    }
}

/// Fills `out` with i.i.d. `N(0, dt)` samples for `key` (ziggurat sampling
/// over a ChaCha8 stream).
pub fn gaussian_block_into(key: RngStreamKey, dt: f64, out: &mut [f64]) {
    let mut rng = key.generator();
    let scale = dt.sqrt();
    for o in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *o = scale * z;
    }
}

pub fn gaussian_block(key: RngStreamKey, d: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; d];
    gaussian_block_into(key, dt, &mut out);
    out
}

/// `t_k = k·Δt`. Every module derives level times through this function.
#[inline]
pub fn level_time(k: usize, dt: f64) -> f64 {
    k as f64 * dt
}

/// Particle positions at one time level, particle-major (`M × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub k: usize,
    pub t: f64,
    pub n_particles: usize,
    pub dim: usize,
    pub positions: Vec<f64>,
}

impl LevelState {
    /// All `m` particles at `x0`.
    pub fn initial(x0: &[f64], m: usize) -> Self {
        let mut positions = Vec::with_capacity(m * x0.len());
        for _ in 0..m {
            positions.extend_from_slice(x0);
        }
        LevelState {
            k: 0,
            t: 0.0,
            n_particles: m,
            dim: x0.len(),
            positions,
        }
    }

    pub fn from_positions(k: usize, t: f64, dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || positions.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not split into particles of dimension {dim}",
                positions.len()
            )));
        }
        Ok(LevelState {
            k,
            t,
            n_particles: positions.len() / dim,
            dim,
            positions,
        })
    }

    #[inline]
    pub fn particle(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }
}

/// Advances every particle by one Euler–Maruyama step:
/// `X_{k+1} = X_k + μ(t_k, X_k)Δt + σ(t_k, X_k)ΔW_k`.
pub fn step_level(
    state: &LevelState,
    problem: &ProblemSpec,
    dt: f64,
    seed: u64,
) -> Result<LevelState> {
    let d = state.dim;
    if d != problem.dimension {
        return Err(Error::DimensionMismatch {
            expected: problem.dimension,
            got: d,
        });
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let k = state.k;
    let t = state.t;
    let mut next = vec![0.0; state.positions.len()];
    next.par_chunks_mut(d)
        .zip(state.positions.par_chunks(d))
        .enumerate()
        .for_each_init(
            || (vec![0.0; d], vec![0.0; d]),
            |(dw, buf), (j, (out, x))| {
                gaussian_block_into(RngStreamKey::new(seed, j, k), dt, dw);
                problem
                    .diffusion
                    .apply_into(t, x, dw, buf)
                    .expect("diffusion validated against problem dimension");
                out.copy_from_slice(x);
                for (o, b) in out.iter_mut().zip(buf.iter()) {
                    *o += b;
                }
                if !problem.drift.is_zero() {
                    problem.drift.eval_into(t, x, buf);
                    for (o, b) in out.iter_mut().zip(buf.iter()) {
                        *o += b * dt;
                    }
                }
            },
        );
    if let Some(pos) = next.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            particle: pos / d,
            level: k,
        });
    }
    Ok(LevelState {
        k: k + 1,
        t: level_time(k + 1, dt),
        n_particles: state.n_particles,
        dim: d,
        positions: next,
    })
}

/// How a [`PathStore`] keeps its levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageMode {
    Full,
    Checkpointed { stride: usize },
}

/// Requested layout for [`simulate_paths_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageRequest {
    /// Decide from the memory budget.
    Auto,
    Full,
    Checkpointed { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoragePlan {
    pub mode: StorageMode,
    /// Bytes held by stored levels.
    pub stored_bytes: u64,
    /// Bytes of the re-simulated working segment (zero in full mode).
    pub segment_bytes: u64,
}

/// Chooses full or checkpointed storage for `n + 1` levels of `m × d` floats.
pub fn plan_storage(
    n: usize,
    m: usize,
    d: usize,
    budget_bytes: u64,
    stride: Option<usize>,
) -> Result<StoragePlan> {
    let level = (m * d * 8) as u64;
    if budget_bytes < 2 * level {
        return Err(Error::config(format!(
            "memory budget of {budget_bytes} bytes is below two levels ({} bytes)",
            2 * level
        )));
    }
    let full = (n as u64 + 1) * level;
    if full <= budget_bytes {
        return Ok(StoragePlan {
            mode: StorageMode::Full,
            stored_bytes: full,
            segment_bytes: 0,
        });
    }
    let stride = stride.unwrap_or_else(|| ceil_sqrt(n)).max(1);
    let plan = checkpoint_plan(n, level, stride);
    if plan.stored_bytes + plan.segment_bytes > budget_bytes {
        return Err(Error::config(format!(
            "checkpointing with stride {stride} needs {} bytes, budget is {budget_bytes}",
            plan.stored_bytes + plan.segment_bytes
        )));
    }
    Ok(plan)
}

fn checkpoint_plan(n: usize, level_bytes: u64, stride: usize) -> StoragePlan {
    let stored_levels = n.div_ceil(stride) as u64 + 1;
    StoragePlan {
        mode: StorageMode::Checkpointed { stride },
        stored_bytes: stored_levels * level_bytes,
        segment_bytes: stride as u64 * level_bytes,
    }
}

fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 1 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r.max(1)
}

/// Forward trajectories of the whole ensemble.
#[derive(Debug, Clone)]
pub struct PathStore {
    mode: StorageMode,
    /// Full mode: every level. Checkpointed: levels `0, s, 2s, …` then `N`.
    levels: Vec<LevelState>,
    pub n_steps: usize,
    pub n_particles: usize,
    pub dim: usize,
    pub seed: u64,
    pub dt: f64,
}

impl PathStore {
    pub fn mode(&self) -> StorageMode {
        self.mode
    }

    /// Number of scalars currently held (excluding any working segment).
    pub fn stored_scalars(&self) -> usize {
        self.levels.iter().map(|l| l.positions.len()).sum()
    }

    pub fn terminal(&self) -> &LevelState {
        self.levels.last().expect("store always holds the terminal level")
    }

    /// Stored level `k`, if it is held without re-simulation.
    pub fn stored(&self, k: usize) -> Option<&LevelState> {
        match self.mode {
            StorageMode::Full => self.levels.get(k),
            StorageMode::Checkpointed { stride } => {
                if k == self.n_steps {
                    self.levels.last()
                } else if k % stride == 0 {
                    self.levels.get(k / stride)
                } else {
                    None
                }
            }
        }
    }

    fn checkpoint_at_or_below(&self, k: usize) -> &LevelState {
        match self.mode {
            StorageMode::Full => &self.levels[k],
            StorageMode::Checkpointed { stride } => {
                if k == self.n_steps {
                    self.terminal()
                } else {
                    &self.levels[k / stride]
                }
            }
        }
    }
}

pub fn simulate_paths(problem: &ProblemSpec, config: &SolverConfig) -> Result<PathStore> {
    simulate_paths_with(problem, config, StorageRequest::Auto)
}

pub fn simulate_paths_with(
    problem: &ProblemSpec,
    config: &SolverConfig,
    request: StorageRequest,
) -> Result<PathStore> {
    problem.validate()?;
    config.validate(problem.dimension)?;
    let (n, m, d) = (config.n_steps, config.n_particles, problem.dimension);
    let mode = match request {
        StorageRequest::Auto => {
            plan_storage(n, m, d, config.memory_budget_bytes, config.checkpoint_stride)?.mode
        }
        StorageRequest::Full => StorageMode::Full,
        StorageRequest::Checkpointed { stride } if stride == 0 => {
            return Err(Error::config("checkpoint stride must be positive"))
        }
        StorageRequest::Checkpointed { stride } => StorageMode::Checkpointed { stride },
    };
    let dt = config.dt(problem.horizon);
    let mut levels = Vec::new();
    let mut current = LevelState::initial(&problem.query_point, m);
    for k in 0..n {
        let next = step_level(&current, problem, dt, config.seed)?;
        let keep = match mode {
            StorageMode::Full => true,
            StorageMode::Checkpointed { stride } => k % stride == 0,
        };
        if keep {
            levels.push(current);
        }
        current = next;
    }
    levels.push(current);
    Ok(PathStore {
        mode,
        levels,
        n_steps: n,
        n_particles: m,
        dim: d,
        seed: config.seed,
        dt,
    })
}

/// Positions at level `k`, re-simulated from the nearest checkpoint when
/// they are not stored. Bitwise equal to what full storage would hold.
pub fn restore_level(store: &PathStore, k: usize, problem: &ProblemSpec) -> Result<LevelState> {
    if k > store.n_steps {
        return Err(Error::invalid(format!(
            "level {k} outside 0..={}",
            store.n_steps
        )));
    }
    if let Some(level) = store.stored(k) {
        return Ok(level.clone());
    }
    let mut current = store.checkpoint_at_or_below(k).clone();
    while current.k < k {
        current = step_level(&current, problem, store.dt, store.seed)?;
    }
    Ok(current)
}

/// Serves levels to the backward sweep in decreasing `k`, re-simulating one
/// checkpoint segment at a time.
pub struct BackwardCursor<'a> {
    store: &'a PathStore,
    problem: &'a ProblemSpec,
    segment_start: Option<usize>,
    segment: Vec<LevelState>,
}

impl<'a> BackwardCursor<'a> {
    pub fn new(store: &'a PathStore, problem: &'a ProblemSpec) -> Self {
        BackwardCursor {
            store,
            problem,
            segment_start: None,
            segment: Vec::new(),
        }
    }

    pub fn level(&mut self, k: usize) -> Result<&LevelState> {
        let stride = match self.store.mode {
            StorageMode::Full => return Ok(&self.store.levels[k]),
            StorageMode::Checkpointed { stride } => stride,
        };
        if let Some(level) = self.store.stored(k) {
            return Ok(level);
        }
        let start = (k / stride) * stride;
        if self.segment_start != Some(start) {
            self.segment.clear();
            let end = (start + stride - 1).min(self.store.n_steps - 1);
            let mut current = self.store.levels[start / stride].clone();
            while current.k < end {
                current = step_level(&current, self.problem, self.store.dt, self.store.seed)?;
                self.segment.push(current.clone());
            }
            self.segment_start = Some(start);
        }
        Ok(&self.segment[k - start - 1])
    }
}

const DUMP_MAGIC: &[u8; 4] = b"FBLL";
pub const DUMP_VERSION: u32 = 1;

/// A level read back from its binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDump {
    pub k: u32,
    pub n_particles: u32,
    pub dim: u32,
    pub seed: u64,
    pub positions: Vec<f64>,
}

/// Writes a level as a 32-byte little-endian header
/// `magic "FBLL" | version u32 | k u32 | M u32 | d u32 | reserved u32 | seed u64`
/// followed by the `M·d` positions as little-endian f64, particle-major.
pub fn write_level_dump<W: Write>(mut w: W, level: &LevelState, seed: u64) -> std::io::Result<()> {
    let mut header = [0u8; 32];
    header[0..4].copy_from_slice(DUMP_MAGIC);
    header[4..8].copy_from_slice(&DUMP_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(level.k as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(level.n_particles as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(level.dim as u32).to_le_bytes());
    header[24..32].copy_from_slice(&seed.to_le_bytes());
    w.write_all(&header)?;
    for v in &level.positions {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_level_dump<R: Read>(mut r: R) -> std::io::Result<LevelDump> {
    use std::io::{Error as IoError, ErrorKind};
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(IoError::new(ErrorKind::InvalidData, "bad magic"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != DUMP_VERSION {
        return Err(IoError::new(
            ErrorKind::InvalidData,
            format!("unsupported dump version {version}"),
        ));
    }
    let (k, m, d) = (u32_at(8), u32_at(12), u32_at(16));
    let seed = u64::from_le_bytes(header[24..32].try_into().unwrap());
    let mut bytes = vec![0u8; m as usize * d as usize * 8];
    r.read_exact(&mut bytes)?;
    let positions = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LevelDump {
        k,
        n_particles: m,
        dim: d,
        seed,
        positions,
    })
}
