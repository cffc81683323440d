//! Multi-view box fusion by particle-filtering random optimization.
//!
//! A global box's position and extents are refined so that its projection
//! into every stored view matches the hull of the candidate observed in that
//! view. Rotation is held fixed. The search reuses one pre-sampled swarm
//! template: each iteration scores every template particle around the
//! current state, jumps to the best particle that beats the current state,
//! and contracts the per-dimension search extent to the spread of the
//! improving particles (or by a fixed factor when none improve).

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::association::{check, CandidateObservation, ConfigError, GlobalObject};
use crate::geometry::{project_box_hull, Intrinsics, Rotation3, Vec3, Z_NEAR};

mod silhouette;

use silhouette::{box_silhouette, Poly, Target};

/// Smallest admissible box extent during the search, meters.
pub const MIN_SIZE: f64 = 0.01;

/// Fitness assigned to states with a non-admissible size.
pub const INVALID_FITNESS: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("box size must be positive, got ({0}, {1}, {2})")]
    NonPositiveSize(f64, f64, f64),
    #[error("no candidates to fuse")]
    NoCandidates,
    #[error("a swarm template needs at least 2 particles, got {0}")]
    TemplateTooSmall(usize),
}

/// Fixed particle set in `[-1, 1]^6` (dx, dy, dz, dl, dw, dh); row 0 is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmTemplate {
    particles: Vec<[f64; 6]>,
    seed: u64,
}

impl SwarmTemplate {
    pub fn particles(&self) -> &[[f64; 6]] {
        &self.particles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

pub fn pst_generate(n_pst: usize, seed: u64) -> Result<SwarmTemplate, FusionError> {
    if n_pst < 2 {
        return Err(FusionError::TemplateTooSmall(n_pst));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut particles = Vec::with_capacity(n_pst);
    particles.push([0.0; 6]);
    for _ in 1..n_pst {
        particles.push(std::array::from_fn(|_| rng.gen_range(-1.0..=1.0)));
    }
    Ok(SwarmTemplate { particles, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub n_pst: usize,
    pub k_max: usize,
    /// Initial position spread as a fraction of the mean candidate extent.
    pub sigma_init_pos: f64,
    /// Initial size spread as a fraction of the initial size, per dimension.
    pub sigma_init_size: f64,
    /// Contraction applied when no particle improves.
    pub shrink: f64,
    /// Stop once every spread component is below this, meters.
    pub min_sigma: f64,
    /// Stop once the best fitness gains less than this over 3 iterations.
    pub epsilon_f: f64,
    /// Minimum candidate count before fusion runs.
    pub tau_box: usize,
    /// Softmax temperature; only read by likelihood-weighted variants.
    pub xi: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n_pst: 1024,
            k_max: 30,
            sigma_init_pos: 0.15,
            sigma_init_size: 0.15,
            shrink: 0.5,
            min_sigma: 1e-3,
            epsilon_f: 1e-3,
            tau_box: 3,
            xi: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check("n_pst", self.n_pst as f64, self.n_pst >= 2, ">= 2")?;
        check("k_max", self.k_max as f64, self.k_max >= 1, ">= 1")?;
        check("sigma_init_pos", self.sigma_init_pos, self.sigma_init_pos > 0.0, "> 0")?;
        check("sigma_init_size", self.sigma_init_size, self.sigma_init_size > 0.0, "> 0")?;
        check("shrink", self.shrink, self.shrink > 0.0 && self.shrink < 1.0, "(0, 1)")?;
        check("min_sigma", self.min_sigma, self.min_sigma > 0.0, "> 0")?;
        check("epsilon_f", self.epsilon_f, self.epsilon_f > 0.0, "> 0")?;
        check("tau_box", self.tau_box as f64, self.tau_box >= 1, ">= 1")?;
        check("xi", self.xi, self.xi > 0.0, "> 0")?;
        Ok(())
    }
}

/// Starting point of an optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionInit {
    pub center: Vec3,
    pub size: Vec3,
    pub rotation: Rotation3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionResult {
    pub p_star: Vec3,
    pub s_star: Vec3,
    /// Mean per-view hull IoU at the returned state.
    pub fitness: f64,
    pub initial_fitness: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One stored view, with the camera and the candidate's own projected hull.
struct View {
    rot: Matrix3<f64>,
    trans: Vec3,
    /// Camera rotation composed with the (frozen) box rotation.
    axes: Matrix3<f64>,
    k: Intrinsics,
    target: Option<Target>,
}

/// The objective for a fixed rotation and candidate list.
pub struct FusionProblem {
    views: Vec<View>,
}

impl FusionProblem {
    pub fn new(psi: &[CandidateObservation], rotation: &Rotation3) -> Self {
        let r_box = rotation.to_rotation_matrix().into_inner();
        let views = psi
            .iter()
            .map(|c| {
                let rot = c.cam_from_world.rotation.to_rotation_matrix().into_inner();
                let target = project_box_hull(&c.intrinsics, &c.cam_from_world, &c.box_world)
                    .and_then(|h| Target::new(&h.vertices));
                View { rot, trans: c.cam_from_world.translation.vector, axes: rot * r_box, k: c.intrinsics, target }
            })
            .collect();
        Self { views }
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// Mean over views of the hull IoU; non-visible views score 0.
    pub fn evaluate(&self, center: &Vec3, size: &Vec3) -> f64 {
        self.mean_above(center, size, f64::NEG_INFINITY).unwrap_or(0.0)
    }

    /// The mean, or `None` as soon as it provably cannot exceed `floor`.
    ///
    /// Every view is first bounded from areas and bounding boxes; exact
    /// clipping then replaces the bounds one view at a time.
    fn mean_above(&self, center: &Vec3, size: &Vec3, floor: f64) -> Option<f64> {
        let n = self.views.len();
        if n == 0 {
            return Some(0.0);
        }
        let need = floor * n as f64 - 1e-9;
        let mut shapes: SmallVec<[(&Target, Poly, f64); 24]> = SmallVec::new();
        let mut slack = 0.0;
        for v in &self.views {
            if let Some((target, outline)) = v.outline(center, size) {
                let bound = target.iou_bound(&outline);
                slack += bound;
                shapes.push((target, outline, bound));
            }
        }
        if slack < need {
            return None;
        }
        let mut total = 0.0;
        for (target, outline, bound) in &shapes {
            slack -= bound;
            total += target.iou(outline);
            if total + slack < need {
                return None;
            }
        }
        Some(total / n as f64)
    }

    /// As [`evaluate`](Self::evaluate), with [`INVALID_FITNESS`] for sizes at
    /// or below [`MIN_SIZE`].
    pub fn fitness(&self, state: &[f64; 6]) -> f64 {
        self.fitness_above(state, f64::NEG_INFINITY)
    }

    /// Exact fitness when it may exceed `floor`, otherwise some value not
    /// above `floor`.
    fn fitness_above(&self, state: &[f64; 6], floor: f64) -> f64 {
        if state[3] <= MIN_SIZE || state[4] <= MIN_SIZE || state[5] <= MIN_SIZE {
            return INVALID_FITNESS;
        }
        let center = Vec3::new(state[0], state[1], state[2]);
        let size = Vec3::new(state[3], state[4], state[5]);
        self.mean_above(&center, &size, floor).unwrap_or(f64::NEG_INFINITY)
    }
}

impl View {
    /// The target and the projected outline of `(center, size)`, when both exist.
    #[inline]
    fn outline(&self, center: &Vec3, size: &Vec3) -> Option<(&Target, Poly)> {
        let target = self.target.as_ref()?;
        let c = self.rot * center + self.trans;
        box_silhouette(&c, &self.axes, &(size * 0.5), &self.k, Z_NEAR).map(|p| (target, p))
    }
}

/// Mean per-view IoU between the projected box `(p, s, rot)` and each
/// candidate's own projected hull.
pub fn fusion_objective(
    p: &Vec3,
    s: &Vec3,
    rot: &Rotation3,
    psi: &[CandidateObservation],
) -> Result<f64, FusionError> {
    if psi.is_empty() {
        return Err(FusionError::NoCandidates);
    }
    if !s.iter().all(|v| *v > 0.0) {
        return Err(FusionError::NonPositiveSize(s.x, s.y, s.z));
    }
    Ok(FusionProblem::new(psi, rot).evaluate(p, s))
}

/// Mean center and mean size of the candidates; rotation of the
/// highest-scoring one (earliest on ties).
pub fn init_from_candidates(psi: &[CandidateObservation]) -> Result<FusionInit, FusionError> {
    let best = psi
        .iter()
        .reduce(|best, c| if c.score > best.score { c } else { best })
        .ok_or(FusionError::NoCandidates)?;
    let n = psi.len() as f64;
    let center = psi.iter().fold(Vec3::zeros(), |acc, c| acc + c.box_world.center) / n;
    let size = psi.iter().fold(Vec3::zeros(), |acc, c| acc + c.box_world.size) / n;
    Ok(FusionInit { center, size, rotation: best.box_world.rotation })
}

fn mean_extent(psi: &[CandidateObservation]) -> f64 {
    psi.iter().map(|c| c.box_world.size.sum() / 3.0).sum::<f64>() / psi.len().max(1) as f64
}

/// Particle-filtering optimization over `(x, y, z, l, w, h)`.
///
/// Deterministic for fixed inputs: particle scores are computed in parallel
/// but reduced in template order, lowest index winning ties.
pub fn pfo_optimize(init: &FusionInit, psi: &[CandidateObservation], pst: &SwarmTemplate, cfg: &FusionConfig) -> FusionResult {
    let problem = FusionProblem::new(psi, &init.rotation);
    let mut state = [init.center.x, init.center.y, init.center.z, init.size.x, init.size.y, init.size.z];
    let mut current = problem.fitness(&state);
    let initial_fitness = current;

    let sp = cfg.sigma_init_pos * mean_extent(psi);
    let mut sigma = [
        sp,
        sp,
        sp,
        cfg.sigma_init_size * init.size.x,
        cfg.sigma_init_size * init.size.y,
        cfg.sigma_init_size * init.size.z,
    ];
    let mut history = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    let particles = pst.particles();

    for k in 1..=cfg.k_max {
        iterations = k;
        let scores: Vec<f64> = particles
            .par_iter()
            .with_min_len(64)
            .map(|r| {
                let q: [f64; 6] = std::array::from_fn(|d| state[d] + sigma[d] * r[d]);
                problem.fitness_above(&q, current)
            })
            .collect();

        let mut best: Option<usize> = None;
        let mut spread = [0.0f64; 6];
        for (i, &f) in scores.iter().enumerate() {
            if f > current {
                for d in 0..6 {
                    spread[d] = spread[d].max(particles[i][d].abs());
                }
                if best.map_or(true, |b| f > scores[b]) {
                    best = Some(i);
                }
            }
        }
        match best {
            Some(b) => {
                let r = &particles[b];
                state = std::array::from_fn(|d| state[d] + sigma[d] * r[d]);
                current = scores[b];
                for d in 0..6 {
                    sigma[d] *= spread[d].clamp(0.1, 1.0);
                }
            }
            None => sigma.iter_mut().for_each(|s| *s *= cfg.shrink),
        }
        history.push(current);

        if sigma.iter().fold(0.0f64, |m, s| m.max(*s)) < cfg.min_sigma {
            converged = true;
            break;
        }
        if k >= 3 && history[k] - history[k - 3] < cfg.epsilon_f {
            converged = true;
            break;
        }
    }

    FusionResult {
        p_star: Vec3::new(state[0], state[1], state[2]),
        s_star: Vec3::new(state[3], state[4], state[5]),
        fitness: current,
        initial_fitness,
        iterations,
        converged,
    }
}

/// Fuses `obj` when it holds at least `tau_box` candidates and has new ones.
///
/// The first fusion starts from the candidate average; later ones warm-start
/// from the current global box. Returns whether fusion ran.
pub fn maybe_fuse(obj: &mut GlobalObject, pst: &SwarmTemplate, cfg: &FusionConfig) -> Option<FusionResult> {
    if !obj.fused_dirty || obj.candidates.len() < cfg.tau_box {
        return None;
    }
    let init = if obj.fusion_count == 0 {
        init_from_candidates(&obj.candidates).ok()?
    } else {
        FusionInit { center: obj.bbox.center, size: obj.bbox.size, rotation: obj.bbox.rotation }
    };
    let result = pfo_optimize(&init, &obj.candidates, pst, cfg);
    obj.bbox.center = result.p_star;
    obj.bbox.size = result.s_star;
    obj.bbox.rotation = init.rotation;
    obj.fused_dirty = false;
    obj.fusion_count += 1;
    Some(result)
}
