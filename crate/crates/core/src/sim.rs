//! Exact event-driven Monte Carlo simulator of branching Brownian motion
//! with branching rate `beta v(x)` (binary fission, both copies continue).
//!
//! No time-discretization error exists anywhere: positions advance by exact
//! Gaussian increments between events, and branch times come from thinning
//! against the constant dominating rate `beta v_max`, accepted with
//! probability `v(x)/v_max`. Checkpoint crossings split an increment in two,
//! which is exact by the memorylessness of the exponential proposal and the
//! independence of Brownian increments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::potential::{Dim, Potential, PotentialSpec};
use crate::spectral::PsiTable;
use crate::stats::{bootstrap_ci, linear_fit, mean, standard_error};

pub const DEFAULT_MAX_PARTICLES: usize = 1_000_000;

/// Counting region `U`; counts cover all of space when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Region {
    fn contains(&self, pos: &[f64; 3], dim: Dim) -> bool {
        let mut d2 = 0.0;
        for i in 0..dim.as_usize() {
            let c = self.center.get(i).copied().unwrap_or(0.0);
            d2 += (pos[i] - c) * (pos[i] - c);
        }
        d2 <= self.radius * self.radius
    }
}

/// JSON wire form of a simulation config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfigSpec {
    pub potential: PotentialSpec,
    pub beta: f64,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub checkpoints: Vec<f64>,
    pub replicas: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub count_region: Option<Region>,
    #[serde(default)]
    pub max_particles: Option<usize>,
    /// Attach ground-state scores (requires a supercritical beta).
    #[serde(default)]
    pub psi_scores: bool,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub potential: Potential,
    pub beta: f64,
    pub x0: [f64; 3],
    pub t_end: f64,
    pub checkpoints: Vec<f64>,
    pub replicas: usize,
    pub base_seed: u64,
    pub count_region: Option<Region>,
    pub max_particles: usize,
    pub psi: Option<PsiTable>,
    pub workers: Option<usize>,
}

impl SimConfig {
    pub fn new(potential: Potential, beta: f64, x0: &[f64], t_end: f64) -> Result<Self> {
        let mut pos = [0.0; 3];
        if x0.len() != potential.dim().as_usize() {
            return Err(Error::validation("x0 length must match the dimension"));
        }
        pos[..x0.len()].copy_from_slice(x0);
        Ok(SimConfig {
            potential,
            beta,
            x0: pos,
            t_end,
            checkpoints: vec![t_end],
            replicas: 1,
            base_seed: 0,
            count_region: None,
            max_particles: DEFAULT_MAX_PARTICLES,
            psi: None,
            workers: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::validation("beta must be >= 0"));
        }
        if self.t_end <= 0.0 {
            return Err(Error::validation("t_end must be positive"));
        }
        if self.replicas < 1 {
            return Err(Error::validation("replicas must be >= 1"));
        }
        if self.checkpoints.is_empty()
            || self.checkpoints.windows(2).any(|w| w[1] <= w[0])
            || self.checkpoints[0] <= 0.0
            || *self.checkpoints.last().unwrap() > self.t_end
        {
            return Err(Error::validation(
                "checkpoints must be sorted, positive and within (0, t_end]",
            ));
        }
        Ok(())
    }

    pub fn from_spec(spec: &SimConfigSpec) -> Result<Self> {
        let potential = Potential::from_spec(&spec.potential)?;
        let mut cfg = SimConfig::new(potential, spec.beta, &spec.x0, spec.t_end)?;
        cfg.checkpoints = spec.checkpoints.clone();
        cfg.replicas = spec.replicas;
        cfg.base_seed = spec.seed.unwrap_or(0);
        cfg.count_region = spec.count_region.clone();
        cfg.max_particles = spec.max_particles.unwrap_or(DEFAULT_MAX_PARTICLES);
        cfg.workers = spec.workers;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of everything that determines the law of the counts (not the
    /// sample size or seed); reports with equal law hashes may merge.
    pub fn law_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let spec = serde_json::json!({
            "potential": self.potential.to_spec(),
            "beta": self.beta,
            "x0": self.x0,
            "t_end": self.t_end,
            "checkpoints": self.checkpoints,
            "count_region": self.count_region,
            "max_particles": self.max_particles,
            "psi": self.psi.is_some(),
        });
        hex::encode(Sha256::digest(spec.to_string().as_bytes()))
    }
}

/// Branching rate field; the public API instantiates it with a `Potential`,
/// tests may use unbounded-support fields to unlock closed-form oracles.
pub(crate) trait BranchField: Sync {
    fn rate_max(&self) -> f64;
    fn eval_at(&self, pos: &[f64; 3], dim: Dim) -> f64;
}

impl BranchField for Potential {
    fn rate_max(&self) -> f64 {
        self.v_max()
    }
    fn eval_at(&self, pos: &[f64; 3], dim: Dim) -> f64 {
        debug_assert_eq!(dim, self.dim());
        self.eval(&pos[..dim.as_usize()])
    }
}

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent substream for one particle, keyed by (replica seed, birth
/// index); makes replicas order-independent and merges deterministic.
pub fn birth_stream(seed: u64, birth_index: u64) -> ChaCha8Rng {
    let mut x = seed ^ birth_index.wrapping_mul(0xA24B_AED4_963E_E407);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut x).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// The thinning accept rule, factored out so its distribution is testable.
pub fn branch_accept(rng: &mut impl Rng, v_here: f64, v_max: f64) -> bool {
    v_here >= v_max || rng.random::<f64>() * v_max < v_here
}

pub(crate) fn advance_generic<F: BranchField + ?Sized>(
    pos: &[f64; 3],
    rng: &mut impl Rng,
    beta: f64,
    field: &F,
    dim: Dim,
    t_remaining: f64,
) -> ([f64; 3], bool, f64) {
    let rate = beta * field.rate_max();
    let tau = if rate > 0.0 {
        rng.sample::<f64, _>(Exp1) / rate
    } else {
        f64::INFINITY
    };
    let dt = tau.min(t_remaining);
    let sigma = dt.sqrt();
    let mut new_pos = *pos;
    for coord in new_pos.iter_mut().take(dim.as_usize()) {
        *coord += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    let branched = tau <= t_remaining
        && branch_accept(rng, field.eval_at(&new_pos, dim), field.rate_max());
    (new_pos, branched, dt)
}

/// One thinning step: propose `tau ~ Exp(beta v_max)`, move by an exact
/// Gaussian increment over `min(tau, t_remaining)`, and if the proposal
/// fires inside the window accept a branch with probability `v(x)/v_max`.
pub fn advance_particle(
    pos: &[f64; 3],
    rng: &mut impl Rng,
    beta: f64,
    potential: &Potential,
    t_remaining: f64,
) -> ([f64; 3], bool, f64) {
    advance_generic(pos, rng, beta, potential, potential.dim(), t_remaining)
}

/// Per-replica simulation output at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaOutput {
    pub counts: Vec<u64>,
    pub counts_region: Vec<u64>,
    pub psi_sums: Vec<f64>,
    pub final_count: u64,
    pub branch_events: u64,
    pub truncated: bool,
}

pub(crate) struct ReplicaSetup<'a, F: BranchField + ?Sized> {
    pub field: &'a F,
    pub dim: Dim,
    pub beta: f64,
    pub x0: [f64; 3],
    pub t_end: f64,
    pub checkpoints: &'a [f64],
    pub count_region: Option<&'a Region>,
    pub max_particles: usize,
    pub psi: Option<&'a PsiTable>,
}

pub(crate) fn run_replica_generic<F: BranchField + ?Sized>(
    s: &ReplicaSetup<'_, F>,
    seed: u64,
) -> ReplicaOutput {
    let k = s.checkpoints.len();
    let mut counts = vec![0u64; k];
    let mut counts_region = vec![0u64; k];
    let mut psi_sums = vec![0.0; k];
    let mut branch_events = 0u64;
    let mut truncated = false;

    let mut queue: VecDeque<(f64, [f64; 3])> = VecDeque::new();
    queue.push_back((0.0, s.x0));
    let mut next_birth: u64 = 0;
    let mut total_particles: usize = 1;

    while let Some((birth_time, start)) = queue.pop_front() {
        let birth_index = next_birth;
        next_birth += 1;
        let mut rng = birth_stream(seed, birth_index);
        let mut t = birth_time;
        let mut pos = start;
        let mut ck = s.checkpoints.partition_point(|&c| c < t);
        loop {
            let next_ck = if ck < k { s.checkpoints[ck] } else { f64::INFINITY };
            let cap = next_ck.min(s.t_end);
            if t >= s.t_end {
                break;
            }
            let (new_pos, branched, dt) =
                advance_generic(&pos, &mut rng, s.beta, s.field, s.dim, cap - t);
            pos = new_pos;
            t += dt;
            if branched {
                branch_events += 1;
                if total_particles < s.max_particles {
                    total_particles += 1;
                    queue.push_back((t, pos));
                } else {
                    truncated = true;
                }
            } else if t >= cap {
                t = cap;
                if ck < k && cap == next_ck {
                    counts[ck] += 1;
                    if let Some(region) = s.count_region {
                        if region.contains(&pos, s.dim) {
                            counts_region[ck] += 1;
                        }
                    }
                    if let Some(table) = s.psi {
                        psi_sums[ck] += table.eval_point(&pos[..s.dim.as_usize()]);
                    }
                    ck += 1;
                }
                // hitting t_end exits at the top of the loop
            }
        }
    }
    ReplicaOutput {
        counts,
        counts_region,
        psi_sums,
        final_count: total_particles as u64,
        branch_events,
        truncated,
    }
}

/// Runs one replica of the configured system; deterministic in (config, seed).
pub fn run_replica(config: &SimConfig, seed: u64) -> Result<ReplicaOutput> {
    config.validate()?;
    let setup = ReplicaSetup {
        field: &config.potential,
        dim: config.potential.dim(),
        beta: config.beta,
        x0: config.x0,
        t_end: config.t_end,
        checkpoints: &config.checkpoints,
        count_region: config.count_region.as_ref(),
        max_particles: config.max_particles,
        psi: config.psi.as_ref(),
    };
    Ok(run_replica_generic(&setup, seed))
}

/// Ensemble statistics over replicas; merges are associative and exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub checkpoints: Vec<f64>,
    pub t_end: f64,
    /// `counts[replica][checkpoint]`
    pub counts: Vec<Vec<u64>>,
    pub counts_region: Option<Vec<Vec<u64>>>,
    pub psi_scores: Option<Vec<Vec<f64>>>,
    pub lambda0: Option<f64>,
    pub final_counts: Vec<u64>,
    pub branch_events: Vec<u64>,
    pub truncated_replicas: Vec<usize>,
    pub seeds: Vec<u64>,
    pub law_hash: String,
    pub merge_count: u32,
    /// Integer power sums of `n_t` per checkpoint: `[sum n, sum n^2, sum n^3, sum n^4]`.
    pub moment_sums: Vec<[u128; 4]>,
}

impl EnsembleReport {
    pub fn replicas(&self) -> usize {
        self.counts.len()
    }

    fn from_outputs(
        config_like: (&[f64], f64, String, Option<f64>, bool, bool),
        outputs: Vec<ReplicaOutput>,
        seeds: Vec<u64>,
    ) -> EnsembleReport {
        let (checkpoints, t_end, law_hash, lambda0, with_region, with_psi) = config_like;
        let k = checkpoints.len();
        let mut moment_sums = vec![[0u128; 4]; k];
        for out in &outputs {
            for (j, &c) in out.counts.iter().enumerate() {
                let c = c as u128;
                moment_sums[j][0] += c;
                moment_sums[j][1] += c * c;
                moment_sums[j][2] += c * c * c;
                moment_sums[j][3] += c * c * c * c;
            }
        }
        EnsembleReport {
            checkpoints: checkpoints.to_vec(),
            t_end,
            counts: outputs.iter().map(|o| o.counts.clone()).collect(),
            counts_region: with_region
                .then(|| outputs.iter().map(|o| o.counts_region.clone()).collect()),
            psi_scores: with_psi.then(|| outputs.iter().map(|o| o.psi_sums.clone()).collect()),
            lambda0,
            final_counts: outputs.iter().map(|o| o.final_count).collect(),
            branch_events: outputs.iter().map(|o| o.branch_events).collect(),
            truncated_replicas: outputs
                .iter()
                .enumerate()
                .filter_map(|(i, o)| o.truncated.then_some(i))
                .collect(),
            seeds,
            law_hash,
            merge_count: 1,
            moment_sums,
        }
    }

    /// Pools two reports of the same law; moments add exactly.
    pub fn merge(&self, other: &EnsembleReport) -> Result<EnsembleReport> {
        if self.law_hash != other.law_hash || self.checkpoints != other.checkpoints {
            return Err(Error::contract("cannot merge reports of different configurations"));
        }
        let mut out = self.clone();
        let offset = out.counts.len();
        out.counts.extend(other.counts.iter().cloned());
        match (&mut out.counts_region, &other.counts_region) {
            (Some(a), Some(b)) => a.extend(b.iter().cloned()),
            (None, None) => {}
            _ => return Err(Error::contract("one report lacks region counts")),
        }
        match (&mut out.psi_scores, &other.psi_scores) {
            (Some(a), Some(b)) => a.extend(b.iter().cloned()),
            (None, None) => {}
            _ => return Err(Error::contract("one report lacks psi scores")),
        }
        out.final_counts.extend(other.final_counts.iter().cloned());
        out.branch_events.extend(other.branch_events.iter().cloned());
        out.truncated_replicas
            .extend(other.truncated_replicas.iter().map(|&i| i + offset));
        out.seeds.extend(other.seeds.iter().cloned());
        out.merge_count += other.merge_count;
        for (a, b) in out.moment_sums.iter_mut().zip(&other.moment_sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        Ok(out)
    }

    /// Mean of `n_t` at checkpoint `j` from the exact integer sums.
    pub fn mean_count(&self, j: usize) -> f64 {
        self.moment_sums[j][0] as f64 / self.replicas() as f64
    }

    /// Raw moment `E n^p` at checkpoint `j`, p in 1..=4.
    pub fn raw_moment(&self, j: usize, p: usize) -> f64 {
        self.moment_sums[j][p - 1] as f64 / self.replicas() as f64
    }
}

pub(crate) fn run_ensemble_generic<F: BranchField + ?Sized>(
    setup: &ReplicaSetup<'_, F>,
    replicas: usize,
    base_seed: u64,
    workers: Option<usize>,
    law_hash: String,
    lambda0: Option<f64>,
) -> Result<EnsembleReport> {
    let seeds: Vec<u64> = (0..replicas as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let run_all = || -> Vec<ReplicaOutput> {
        seeds
            .par_iter()
            .map(|&s| run_replica_generic(setup, s))
            .collect()
    };
    let outputs = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::numerical(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    Ok(EnsembleReport::from_outputs(
        (
            setup.checkpoints,
            setup.t_end,
            law_hash,
            lambda0,
            setup.count_region.is_some(),
            setup.psi.is_some(),
        ),
        outputs,
        seeds,
    ))
}

/// Runs `replicas` independent replicas with seeds `base_seed + i` and
/// pools them; the merge is order-independent, so worker count does not
/// affect results.
pub fn run_ensemble(config: &SimConfig) -> Result<EnsembleReport> {
    config.validate()?;
    let setup = ReplicaSetup {
        field: &config.potential,
        dim: config.potential.dim(),
        beta: config.beta,
        x0: config.x0,
        t_end: config.t_end,
        checkpoints: &config.checkpoints,
        count_region: config.count_region.as_ref(),
        max_particles: config.max_particles,
        psi: config.psi.as_ref(),
    };
    run_ensemble_generic(
        &setup,
        config.replicas,
        config.base_seed,
        config.workers,
        config.law_hash(),
        config.psi.as_ref().map(|t| t.lambda0),
    )
}

/// Growth-exponent estimate from the log of mean counts over a window.
#[derive(Debug, Clone)]
pub struct GrowthFit {
    pub slope: f64,
    pub ci: (f64, f64),
    pub window_times: Vec<f64>,
}

pub fn estimate_growth(report: &EnsembleReport, window: (f64, f64)) -> Result<GrowthFit> {
    let idx: Vec<usize> = report
        .checkpoints
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= window.0 && t <= window.1)
        .map(|(j, _)| j)
        .collect();
    if idx.len() < 4 {
        return Err(Error::domain("growth window must contain at least 4 checkpoints"));
    }
    let times: Vec<f64> = idx.iter().map(|&j| report.checkpoints[j]).collect();
    let slope_of = |rows: &[usize]| -> Option<f64> {
        let mut ys = Vec::with_capacity(idx.len());
        for &j in &idx {
            let m = rows
                .iter()
                .map(|&r| report.counts[r][j] as f64)
                .sum::<f64>()
                / rows.len() as f64;
            if m <= 0.0 {
                return None;
            }
            ys.push(m.ln());
        }
        Some(linear_fit(&times, &ys).1)
    };
    let all: Vec<usize> = (0..report.replicas()).collect();
    let slope = slope_of(&all)
        .ok_or_else(|| Error::numerical("estimate_growth: nonpositive mean counts"))?;
    let ci = bootstrap_ci(
        report.replicas(),
        200,
        report.seeds.first().copied().unwrap_or(0) ^ 0x5eed,
        |rows| slope_of(rows),
        0.95,
    )?;
    Ok(GrowthFit { slope, ci, window_times: times })
}

/// Per-checkpoint means of the additive martingale `e^{-lambda0 t} sum psi`
/// plus flatness statistics.
#[derive(Debug, Clone)]
pub struct MartingaleReport {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// z-scores of each checkpoint mean against the t = 0 value psi(x0).
    pub z_vs_initial: Vec<f64>,
    /// Largest paired z-score between checkpoints.
    pub flatness: f64,
}

pub fn martingale_check(report: &EnsembleReport, psi_at_x0: f64) -> Result<MartingaleReport> {
    let scores = report
        .psi_scores
        .as_ref()
        .ok_or_else(|| Error::contract("report carries no psi scores"))?;
    let lambda0 = report
        .lambda0
        .ok_or_else(|| Error::contract("report carries no lambda0"))?;
    let k = report.checkpoints.len();
    let m = report.replicas();
    let mut mart: Vec<Vec<f64>> = vec![Vec::with_capacity(m); k];
    for row in scores {
        for (j, &s) in row.iter().enumerate() {
            mart[j].push((-lambda0 * report.checkpoints[j]).exp() * s);
        }
    }
    let means: Vec<f64> = mart.iter().map(|xs| mean(xs)).collect();
    let ses: Vec<f64> = mart.iter().map(|xs| standard_error(xs)).collect();
    let z_vs_initial: Vec<f64> = means
        .iter()
        .zip(&ses)
        .map(|(&mu, &se)| (mu - psi_at_x0) / se)
        .collect();
    let mut flatness: f64 = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let d: Vec<f64> = (0..m).map(|r| mart[b][r] - mart[a][r]).collect();
            let z = mean(&d) / standard_error(&d);
            flatness = flatness.max(z.abs());
        }
    }
    Ok(MartingaleReport {
        times: report.checkpoints.clone(),
        means,
        standard_errors: ses,
        z_vs_initial,
        flatness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentScaling {
    None,
    /// Scale counts by `exp(-lambda0 t)` before taking moments.
    ExpLambda0,
}

#[derive(Debug, Clone)]
pub struct CheckpointMoments {
    pub t: f64,
    /// moments 1..=4 of the (scaled) count
    pub moments: [f64; 4],
    pub ci: [(f64, f64); 4],
}

/// Pooled moment estimators with bootstrap CIs per checkpoint.
pub fn empirical_moments(
    report: &EnsembleReport,
    scaling: MomentScaling,
) -> Result<Vec<CheckpointMoments>> {
    let lambda0 = match scaling {
        MomentScaling::None => 0.0,
        MomentScaling::ExpLambda0 => report
            .lambda0
            .ok_or_else(|| Error::contract("scaled moments need lambda0 in the report"))?,
    };
    let mut out = Vec::with_capacity(report.checkpoints.len());
    for (j, &t) in report.checkpoints.iter().enumerate() {
        let scale = (-lambda0 * t).exp();
        let xs: Vec<f64> = report.counts.iter().map(|row| scale * row[j] as f64).collect();
        let mut moments = [0.0; 4];
        let mut ci = [(0.0, 0.0); 4];
        for p in 1..=4usize {
            let pow: Vec<f64> = xs.iter().map(|&x| x.powi(p as i32)).collect();
            moments[p - 1] = mean(&pow);
            ci[p - 1] = bootstrap_ci(
                pow.len(),
                200,
                report.seeds.first().copied().unwrap_or(0) ^ (p as u64),
                |rows| Some(mean(&rows.iter().map(|&r| pow[r]).collect::<Vec<_>>())),
                0.95,
            )?;
        }
        out.push(CheckpointMoments { t, moments, ci });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Shape;
    use crate::stats::{ks_one_sample, variance};

    fn bump3() -> Potential {
        Potential::new(Dim::Three, Shape::Bump { center: 0.0, radius: 1.0, height: 1.0 }).unwrap()
    }

    /// Unbounded constant field: unlocks the Yule closed forms. Only
    /// reachable from tests; the public config schema cannot express it.
    struct ConstField(f64);

    impl BranchField for ConstField {
        fn rate_max(&self) -> f64 {
            self.0
        }
        fn eval_at(&self, _pos: &[f64; 3], _dim: Dim) -> f64 {
            self.0
        }
    }

    #[test]
    fn pure_diffusion_never_branches_variance_matches() {
        let p = bump3();
        let mut rng = birth_stream(11, 0);
        let mut sum2 = [0.0; 3];
        let n = 100_000;
        let t = 0.73;
        for _ in 0..n {
            let (pos, branched, dt) = advance_particle(&[0.0; 3], &mut rng, 0.0, &p, t);
            assert!(!branched);
            assert_eq!(dt, t);
            for c in 0..3 {
                sum2[c] += pos[c] * pos[c];
            }
        }
        for c in 0..3 {
            let var = sum2[c] / n as f64;
            assert!((var / t - 1.0).abs() < 0.02, "coord {c} variance {var}");
        }
    }

    #[test]
    fn thinning_acceptance_probability() {
        // at v = v_max/2 the accept probability is exactly 1/2
        let mut rng = birth_stream(5, 0);
        let n = 200_000;
        let mut acc = 0u64;
        for _ in 0..n {
            if branch_accept(&mut rng, 0.5, 1.0) {
                acc += 1;
            }
        }
        let p = acc as f64 / n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((p - 0.5).abs() <= 4.0 * se, "acceptance {p}");
    }

    #[test]
    fn constant_field_interevent_times_are_exponential() {
        // along a lineage the branch events form a Poisson process
        // no horizon: a fixed number of gaps per walker avoids censoring bias
        let field = ConstField(1.0);
        let beta = 1.3;
        let mut gaps = vec![];
        for seed in 0..700u64 {
            let mut rng = birth_stream(seed, 0);
            let mut t = 0.0;
            let mut pos = [0.0; 3];
            let mut last = 0.0;
            let mut found = 0;
            while found < 6 {
                let (np, branched, dt) =
                    advance_generic(&pos, &mut rng, beta, &field, Dim::Three, f64::INFINITY);
                pos = np;
                t += dt;
                if branched {
                    gaps.push(t - last);
                    last = t;
                    found += 1;
                }
            }
        }
        assert!(gaps.len() > 3000);
        let rate = beta * 1.0;
        let d = ks_one_sample(&gaps, |x| 1.0 - (-rate * x).exp());
        // 1% critical value
        let crit = 1.628 / (gaps.len() as f64).sqrt();
        assert!(d < crit, "KS {d} crit {crit}");
    }

    #[test]
    fn replica_determinism() {
        let mut cfg = SimConfig::new(bump3(), 4.0, &[0.0, 0.0, 0.0], 3.0).unwrap();
        cfg.checkpoints = vec![1.0, 2.0, 3.0];
        let a = run_replica(&cfg, 42).unwrap();
        let b = run_replica(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = run_replica(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn beta_zero_single_particle() {
        let mut cfg = SimConfig::new(bump3(), 0.0, &[0.0, 0.0, 0.0], 2.0).unwrap();
        cfg.checkpoints = vec![0.5, 1.0, 2.0];
        cfg.replicas = 20;
        let rep = run_ensemble(&cfg).unwrap();
        for row in &rep.counts {
            assert_eq!(row, &vec![1, 1, 1]);
        }
        for j in 0..3 {
            assert_eq!(rep.raw_moment(j, 1), 1.0);
            assert_eq!(rep.raw_moment(j, 2), 1.0);
        }
    }

    #[test]
    fn counts_monotone_and_at_least_one() {
        let mut cfg = SimConfig::new(bump3(), 5.0, &[0.0, 0.0, 0.0], 4.0).unwrap();
        cfg.checkpoints = vec![1.0, 2.0, 3.0, 4.0];
        cfg.replicas = 50;
        let rep = run_ensemble(&cfg).unwrap();
        for row in &rep.counts {
            assert!(row[0] >= 1);
            for w in row.windows(2) {
                assert!(w[1] >= w[0], "counts not monotone: {row:?}");
            }
        }
    }

    #[test]
    fn merge_equals_pooled_run() {
        let mut cfg = SimConfig::new(bump3(), 4.0, &[0.0, 0.0, 0.0], 2.0).unwrap();
        cfg.checkpoints = vec![1.0, 2.0];
        cfg.replicas = 30;
        cfg.base_seed = 100;
        let full = run_ensemble(&cfg).unwrap();
        let mut c1 = cfg.clone();
        c1.replicas = 12;
        let mut c2 = cfg.clone();
        c2.replicas = 18;
        c2.base_seed = 112;
        let merged = run_ensemble(&c1).unwrap().merge(&run_ensemble(&c2).unwrap()).unwrap();
        assert_eq!(full.moment_sums, merged.moment_sums);
        assert_eq!(full.counts, merged.counts);
        assert_eq!(merged.merge_count, 2);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = SimConfig::new(bump3(), 4.0, &[0.0, 0.0, 0.0], 2.0).unwrap();
        cfg.checkpoints = vec![1.0, 2.0];
        cfg.replicas = 16;
        cfg.workers = Some(1);
        let a = run_ensemble(&cfg).unwrap();
        cfg.workers = Some(4);
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn yule_process_moments() {
        // constant field: E n_t = e^{bct}, E n_t^2 = 2 e^{2bct} - e^{bct}
        let field = ConstField(0.7);
        let beta = 1.0;
        let t_end = 3.0; // beta*c*t = 2.1
        let checkpoints = [1.0, 2.0, 3.0];
        let setup = ReplicaSetup {
            field: &field,
            dim: Dim::Three,
            beta,
            x0: [0.0; 3],
            t_end,
            checkpoints: &checkpoints,
            count_region: None,
            max_particles: DEFAULT_MAX_PARTICLES,
            psi: None,
        };
        let rep = run_ensemble_generic(&setup, 4000, 7, None, "yule".into(), None).unwrap();
        for (j, &t) in checkpoints.iter().enumerate() {
            let bct = beta * 0.7 * t;
            let m1_exact = bct.exp();
            let m2_exact = 2.0 * (2.0 * bct).exp() - bct.exp();
            let xs: Vec<f64> = rep.counts.iter().map(|r| r[j] as f64).collect();
            let m1 = mean(&xs);
            let se1 = standard_error(&xs);
            assert!((m1 - m1_exact).abs() <= 3.0 * se1, "t={t}: m1 {m1} vs {m1_exact}");
            let sq: Vec<f64> = xs.iter().map(|&x| x * x).collect();
            let m2 = mean(&sq);
            let se2 = standard_error(&sq);
            assert!((m2 - m2_exact).abs() <= 3.0 * se2, "t={t}: m2 {m2} vs {m2_exact}");
        }
    }

    #[test]
    fn interval_splitting_invariance() {
        // exactness: inserting extra checkpoints must not change the law
        let mut one = SimConfig::new(bump3(), 5.0, &[0.0, 0.0, 0.0], 3.0).unwrap();
        one.checkpoints = vec![3.0];
        one.replicas = 3000;
        let mut split = one.clone();
        split.checkpoints = vec![0.7, 1.3, 2.1, 3.0];
        split.base_seed = 50_000;
        let a = run_ensemble(&one).unwrap();
        let b = run_ensemble(&split).unwrap();
        let xa: Vec<f64> = a.counts.iter().map(|r| *r.last().unwrap() as f64).collect();
        let xb: Vec<f64> = b.counts.iter().map(|r| *r.last().unwrap() as f64).collect();
        let (ma, mb) = (mean(&xa), mean(&xb));
        let se = (variance(&xa) / xa.len() as f64 + variance(&xb) / xb.len() as f64).sqrt();
        assert!((ma - mb).abs() <= 3.5 * se, "means {ma} vs {mb} (se {se})");
    }

    #[test]
    fn growth_estimate_on_exact_exponential() {
        // synthetic counts n_t = round(e^{0.5 t}); counts large enough that
        // the rounding shifts log-means by well under the tolerance
        let checkpoints: Vec<f64> = (0..=5).map(|k| 10.0 + 2.0 * k as f64).collect();
        let counts: Vec<Vec<u64>> = (0..50)
            .map(|_| checkpoints.iter().map(|&t| (0.5 * t).exp().round() as u64).collect())
            .collect();
        let k = checkpoints.len();
        let report = EnsembleReport {
            checkpoints: checkpoints.clone(),
            t_end: 20.0,
            counts,
            counts_region: None,
            psi_scores: None,
            lambda0: None,
            final_counts: vec![],
            branch_events: vec![],
            truncated_replicas: vec![],
            seeds: vec![1],
            law_hash: "synthetic".into(),
            merge_count: 1,
            moment_sums: vec![[0; 4]; k],
        };
        let fit = estimate_growth(&report, (10.0, 20.0)).unwrap();
        assert!((fit.slope - 0.5).abs() <= 1e-3, "slope {}", fit.slope);
    }

    #[test]
    fn growth_estimate_needs_four_checkpoints() {
        let mut cfg = SimConfig::new(bump3(), 1.0, &[0.0, 0.0, 0.0], 2.0).unwrap();
        cfg.checkpoints = vec![1.0, 2.0];
        cfg.replicas = 5;
        let rep = run_ensemble(&cfg).unwrap();
        assert!(estimate_growth(&rep, (0.0, 2.0)).is_err());
    }

    #[test]
    fn martingale_requires_scores() {
        let mut cfg = SimConfig::new(bump3(), 1.0, &[0.0, 0.0, 0.0], 1.0).unwrap();
        cfg.replicas = 3;
        let rep = run_ensemble(&cfg).unwrap();
        assert!(matches!(martingale_check(&rep, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation_rejects_bad_checkpoints() {
        let mut cfg = SimConfig::new(bump3(), 1.0, &[0.0, 0.0, 0.0], 2.0).unwrap();
        cfg.checkpoints = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.checkpoints = vec![1.0, 3.0];
        assert!(cfg.validate().is_err());
        cfg.checkpoints = vec![];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sim_config_json_round_trip() {
        let json = r#"{
            "potential": {"dim":3,"shape":"bump","radius":1.0,"height":1.0},
            "beta": 2.0,
            "x0": [0.0, 0.0, 0.0],
            "t_end": 4.0,
            "checkpoints": [1.0, 2.0, 4.0],
            "replicas": 10,
            "seed": 7,
            "count_region": {"center":[0.0,0.0,0.0],"radius":2.0}
        }"#;
        let spec: SimConfigSpec = serde_json::from_str(json).unwrap();
        let cfg = SimConfig::from_spec(&spec).unwrap();
        assert_eq!(cfg.replicas, 10);
        assert_eq!(cfg.base_seed, 7);
        let rep = run_ensemble(&cfg).unwrap();
        assert!(rep.counts_region.is_some());
        // region counts never exceed total counts
        let region = rep.counts_region.as_ref().unwrap();
        for (row, row_u) in rep.counts.iter().zip(region) {
            for (a, b) in row.iter().zip(row_u) {
                assert!(b <= a);
            }
        }
    }
}
