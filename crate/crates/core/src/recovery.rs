//! Empirical latent recovery on linear-Gaussian multi-environment data.
//!
//! The unmixing model mirrors the generating process: a shared source map
//! `F̃`, per-task target maps `B̃_t` on the parent coordinates and free
//! per-environment latent means and variances. Stacking the observables as
//! `z = (x, y_1, …, y_m) = G l`, the fit minimises
//!
//! ```text
//! J = Σ_d ‖G μ̃_d − m̂_d‖² + ‖G diag(σ̃²_d) Gᵀ − Ĉ_d‖²_F
//! ```
//!
//! over `(F̃, B̃, μ̃, log σ̃²)` by gradient descent with step halving. Recovered
//! latents `F̃⁻¹ x` are scored against the truth by absolute Pearson
//! correlation under the best permutation.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{conditioning, DgpSpec, Nonlinearity, SyntheticDataset, RANK_TOLERANCE};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, tags};
use crate::topology::ScmTopology;

/// Latent count limit for exhaustive permutation matching.
pub const MAX_MATCH_LATENTS: usize = 8;

/// Minimum drop in median MCC from the identifiable to the colliding spec.
pub const MIN_MEDIAN_GAP: f64 = 0.10;

/// Minimum cross-seed range of the colliding latents' matched correlation.
pub const MIN_DISPERSION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub initial_step: f64,
    /// Multiplier applied to the step after an accepted move.
    pub step_growth: f64,
    pub min_step: f64,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 8,
            max_iters: 2000,
            initial_step: 1e-2,
            step_growth: 1.2,
            min_step: 1e-10,
            grad_tol: 1e-9,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::Config(
                "restarts and max_iters must be positive".into(),
            ));
        }
        for (name, v) in [
            ("initial_step", self.initial_step),
            ("min_step", self.min_step),
            ("grad_tol", self.grad_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return Err(Error::Config(format!(
                "step_growth must be ≥ 1 (got {})",
                self.step_growth
            )));
        }
        Ok(())
    }
}

/// Empirical mean and (biased) covariance of `z = (x, y_1, …)` in one
/// environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMoments {
    pub count: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn stacked_row(sample: &crate::dgp::Sample) -> Vec<f64> {
    let mut z = sample.x.clone();
    for y in &sample.y {
        z.extend_from_slice(y);
    }
    z
}

fn check_schema(dataset: &SyntheticDataset, topology: &ScmTopology) -> Result<()> {
    let dims: Vec<usize> = (0..topology.num_tasks())
        .map(|t| topology.parent_latents(t).map(|p| p.len()))
        .collect::<Result<_>>()?;
    if dataset.num_latents != topology.num_latents() || dataset.target_dims != dims {
        return Err(Error::Data(format!(
            "dataset has {} latents and target dims {:?}; topology expects {} and {:?}",
            dataset.num_latents,
            dataset.target_dims,
            topology.num_latents(),
            dims
        )));
    }
    Ok(())
}

pub fn environment_moments(
    dataset: &SyntheticDataset,
    topology: &ScmTopology,
) -> Result<Vec<EnvMoments>> {
    check_schema(dataset, topology)?;
    let p = dataset.num_latents + dataset.target_dims.iter().sum::<usize>();
    let mut out = Vec::with_capacity(dataset.num_environments);
    for env in 0..dataset.num_environments {
        let rows: Vec<Vec<f64>> = dataset.env_samples(env).map(stacked_row).collect();
        if rows.is_empty() {
            return Err(Error::Data(format!("environment {env} has no samples")));
        }
        let count = rows.len();
        let mut mean = DVector::zeros(p);
        for r in &rows {
            for (a, v) in r.iter().enumerate() {
                mean[a] += v;
            }
        }
        mean /= count as f64;
        let mut cov = DMatrix::zeros(p, p);
        for r in &rows {
            let c = DVector::from_iterator(p, r.iter().zip(mean.iter()).map(|(v, m)| v - m));
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= count as f64;
        out.push(EnvMoments { count, mean, cov });
    }
    Ok(out)
}

/// Fitted (or true) linear unmixing model.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixModel {
    pub f: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub env_means: Vec<DVector<f64>>,
    pub env_variances: Vec<DVector<f64>>,
}

impl UnmixModel {
    /// The generating parameters of a linear spec, as a model.
    pub fn from_spec(spec: &DgpSpec) -> Result<Self> {
        if spec.mixing.nonlinearity != Nonlinearity::None {
            return Err(Error::Data("unmixing model requires linear mixing".into()));
        }
        Ok(UnmixModel {
            f: spec.mixing.f.clone(),
            b: spec.mixing.b.clone(),
            env_means: spec
                .prior
                .environments()
                .iter()
                .map(|e| DVector::from_column_slice(&e.means))
                .collect(),
            env_variances: spec
                .prior
                .environments()
                .iter()
                .map(|e| DVector::from_column_slice(&e.variances))
                .collect(),
        })
    }

    pub fn is_singular(&self) -> bool {
        conditioning(&self.f) <= RANK_TOLERANCE
    }
}

/// Parameter layout shared by the objective and its gradient.
struct Layout {
    n: usize,
    envs: usize,
    parents: Vec<Vec<usize>>,
    /// First stacked row of each task block.
    task_rows: Vec<usize>,
    p: usize,
}

impl Layout {
    fn new(topology: &ScmTopology, envs: usize) -> Result<Self> {
        let n = topology.num_latents();
        let parents: Vec<Vec<usize>> = (0..topology.num_tasks())
            .map(|t| topology.parent_latents(t).map(|s| s.iter().collect()))
            .collect::<Result<_>>()?;
        let mut task_rows = Vec::with_capacity(parents.len());
        let mut at = n;
        for pa in &parents {
            task_rows.push(at);
            at += pa.len();
        }
        Ok(Layout {
            n,
            envs,
            parents,
            task_rows,
            p: at,
        })
    }

    fn len(&self) -> usize {
        self.n * self.n
            + self
                .parents
                .iter()
                .map(|p| p.len() * p.len())
                .sum::<usize>()
            + 2 * self.envs * self.n
    }

    fn pack(&self, model: &UnmixModel) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.len());
        for i in 0..self.n {
            for j in 0..self.n {
                theta.push(model.f[(i, j)]);
            }
        }
        for (t, pa) in self.parents.iter().enumerate() {
            for a in 0..pa.len() {
                for b in 0..pa.len() {
                    theta.push(model.b[t][(a, b)]);
                }
            }
        }
        for d in 0..self.envs {
            theta.extend(model.env_means[d].iter());
        }
        for d in 0..self.envs {
            theta.extend(model.env_variances[d].iter().map(|v| v.ln()));
        }
        theta
    }

    fn unpack(&self, theta: &[f64]) -> UnmixModel {
        let n = self.n;
        let mut at = 0;
        let f = DMatrix::from_fn(n, n, |i, j| theta[i * n + j]);
        at += n * n;
        let mut b = Vec::with_capacity(self.parents.len());
        for pa in &self.parents {
            let k = pa.len();
            b.push(DMatrix::from_fn(k, k, |i, j| theta[at + i * k + j]));
            at += k * k;
        }
        let env_means = (0..self.envs)
            .map(|d| DVector::from_column_slice(&theta[at + d * n..at + (d + 1) * n]))
            .collect();
        at += self.envs * n;
        let env_variances = (0..self.envs)
            .map(|d| {
                DVector::from_iterator(
                    n,
                    theta[at + d * n..at + (d + 1) * n].iter().map(|s| s.exp()),
                )
            })
            .collect();
        UnmixModel {
            f,
            b,
            env_means,
            env_variances,
        }
    }

    fn stacked(&self, model: &UnmixModel) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.p, self.n);
        g.view_mut((0, 0), (self.n, self.n)).copy_from(&model.f);
        for (t, pa) in self.parents.iter().enumerate() {
            for a in 0..pa.len() {
                for (b, &col) in pa.iter().enumerate() {
                    g[(self.task_rows[t] + a, col)] = model.b[t][(a, b)];
                }
            }
        }
        g
    }
}

fn check_model(layout: &Layout, model: &UnmixModel) -> Result<()> {
    let ok = model.f.shape() == (layout.n, layout.n)
        && model.b.len() == layout.parents.len()
        && model
            .b
            .iter()
            .zip(&layout.parents)
            .all(|(b, pa)| b.shape() == (pa.len(), pa.len()))
        && model.env_means.len() == layout.envs
        && model.env_variances.len() == layout.envs
        && model.env_means.iter().all(|m| m.len() == layout.n)
        && model
            .env_variances
            .iter()
            .all(|v| v.len() == layout.n && v.iter().all(|&s| s > 0.0 && s.is_finite()));
    if ok {
        Ok(())
    } else {
        Err(Error::Data(
            "model shape does not match topology and environments".into(),
        ))
    }
}

/// Moment-matching objective and optionally its gradient in packed layout.
fn objective_and_grad(
    layout: &Layout,
    model: &UnmixModel,
    moments: &[EnvMoments],
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let g = layout.stacked(model);
    let n = layout.n;
    let mut value = 0.0;
    let mut dg = DMatrix::zeros(layout.p, n);
    let mut dmu: Vec<DVector<f64>> = Vec::with_capacity(layout.envs);
    let mut ds: Vec<DVector<f64>> = Vec::with_capacity(layout.envs);
    for (d, mom) in moments.iter().enumerate() {
        let mu = &model.env_means[d];
        let var = &model.env_variances[d];
        let r = &g * mu - &mom.mean;
        let gd = DMatrix::from_fn(layout.p, n, |i, j| g[(i, j)] * var[j]);
        let resid = &gd * g.transpose() - &mom.cov;
        value += r.norm_squared() + resid.norm_squared();
        if want_grad {
            dg += 2.0 * &r * mu.transpose() + 4.0 * &resid * &gd;
            dmu.push(2.0 * g.transpose() * &r);
            let grg = g.transpose() * &resid * &g;
            ds.push(DVector::from_fn(n, |j, _| 2.0 * grg[(j, j)] * var[j]));
        }
    }
    if !want_grad {
        return (value, Vec::new());
    }
    let mut grad = Vec::with_capacity(layout.len());
    for i in 0..n {
        for j in 0..n {
            grad.push(dg[(i, j)]);
        }
    }
    for (t, pa) in layout.parents.iter().enumerate() {
        for a in 0..pa.len() {
            for &col in pa {
                grad.push(dg[(layout.task_rows[t] + a, col)]);
            }
        }
    }
    for v in &dmu {
        grad.extend(v.iter());
    }
    for v in &ds {
        grad.extend(v.iter());
    }
    (value, grad)
}

/// Objective value of `model` against the dataset's moments.
pub fn objective(
    model: &UnmixModel,
    topology: &ScmTopology,
    moments: &[EnvMoments],
) -> Result<f64> {
    let layout = Layout::new(topology, moments.len())?;
    check_model(&layout, model)?;
    Ok(objective_and_grad(&layout, model, moments, false).0)
}

/// Analytic gradient in packed order: `F̃` row-major, each `B̃_t` row-major,
/// every `μ̃_d`, every `log σ̃²_d`.
pub fn objective_gradient(
    model: &UnmixModel,
    topology: &ScmTopology,
    moments: &[EnvMoments],
) -> Result<Vec<f64>> {
    let layout = Layout::new(topology, moments.len())?;
    check_model(&layout, model)?;
    Ok(objective_and_grad(&layout, model, moments, true).1)
}

/// Evaluates the objective at a packed parameter vector; for gradient checks.
pub fn objective_at_packed(
    theta: &[f64],
    topology: &ScmTopology,
    moments: &[EnvMoments],
) -> Result<f64> {
    let layout = Layout::new(topology, moments.len())?;
    if theta.len() != layout.len() {
        return Err(Error::Shape("packed parameter length mismatch".into()));
    }
    Ok(objective_and_grad(&layout, &layout.unpack(theta), moments, false).0)
}

pub fn pack_model(model: &UnmixModel, topology: &ScmTopology) -> Result<Vec<f64>> {
    let layout = Layout::new(topology, model.env_means.len())?;
    check_model(&layout, model)?;
    Ok(layout.pack(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RestartOutcome {
    pub restart: usize,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: UnmixModel,
    pub objective: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome>,
    /// Objective after each accepted step of the best restart.
    pub best_history: Vec<f64>,
}

struct Descent {
    model: UnmixModel,
    initial: f64,
    value: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn descend(layout: &Layout, init: &UnmixModel, moments: &[EnvMoments], cfg: &FitConfig) -> Descent {
    let mut theta = layout.pack(init);
    let (mut value, mut grad) = objective_and_grad(layout, init, moments, true);
    let initial = value;
    let mut step = cfg.initial_step;
    let mut history = vec![value];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < cfg.grad_tol || step < cfg.min_step {
            break;
        }
        iterations += 1;
        let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
        let model = layout.unpack(&candidate);
        let admissible = !model.is_singular() && candidate.iter().all(|v| v.is_finite());
        let next = if admissible {
            objective_and_grad(layout, &model, moments, false).0
        } else {
            f64::INFINITY
        };
        if next < value {
            theta = candidate;
            value = next;
            grad = objective_and_grad(layout, &model, moments, true).1;
            history.push(value);
            step *= cfg.step_growth;
        } else {
            step *= 0.5;
        }
    }
    Descent {
        model: layout.unpack(&theta),
        initial,
        value,
        iterations,
        history,
    }
}

/// Random starting point: Gaussian maps, then the latent moments implied by
/// projecting each environment's data moments through `G⁺`.
fn random_init<R: Rng + ?Sized>(
    layout: &Layout,
    moments: &[EnvMoments],
    rng: &mut R,
) -> UnmixModel {
    let n = layout.n;
    loop {
        let f = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b: Vec<DMatrix<f64>> = layout
            .parents
            .iter()
            .map(|pa| {
                DMatrix::from_fn(pa.len(), pa.len(), |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                })
            })
            .collect();
        if conditioning(&f) < 1e-3 {
            continue;
        }
        let mut model = UnmixModel {
            f,
            b,
            env_means: vec![DVector::zeros(n); layout.envs],
            env_variances: vec![DVector::from_element(n, 1.0); layout.envs],
        };
        let g = layout.stacked(&model);
        let Ok(pinv) = g.clone().pseudo_inverse(1e-12) else {
            continue;
        };
        for (d, mom) in moments.iter().enumerate() {
            model.env_means[d] = &pinv * &mom.mean;
            let proj = &pinv * &mom.cov * pinv.transpose();
            model.env_variances[d] = DVector::from_fn(n, |j, _| proj[(j, j)].max(1e-6));
        }
        return model;
    }
}

/// Best of `config.restarts` random-start descents.
pub fn fit(
    dataset: &SyntheticDataset,
    topology: &ScmTopology,
    config: &FitConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if topology.num_latents() > MAX_MATCH_LATENTS {
        return Err(Error::Capacity(format!(
            "fit supports at most {MAX_MATCH_LATENTS} latents"
        )));
    }
    let moments = environment_moments(dataset, topology)?;
    let layout = Layout::new(topology, moments.len())?;
    let inits: Vec<UnmixModel> = (0..config.restarts)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, tags::FIT, r as u64));
            random_init(&layout, &moments, &mut rng)
        })
        .collect();
    run_restarts(&layout, &moments, &inits, config)
}

/// Single descent from a given starting model.
pub fn fit_from(
    dataset: &SyntheticDataset,
    topology: &ScmTopology,
    init: &UnmixModel,
    config: &FitConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    let moments = environment_moments(dataset, topology)?;
    let layout = Layout::new(topology, moments.len())?;
    check_model(&layout, init)?;
    run_restarts(&layout, &moments, std::slice::from_ref(init), config)
}

/// Exact model-implied moments of a linear, noiseless spec; the fit's
/// population target.
pub fn population_moments(spec: &DgpSpec) -> Result<Vec<EnvMoments>> {
    if !spec.noise.is_zero() {
        return Err(Error::Data("population moments assume zero noise".into()));
    }
    let model = UnmixModel::from_spec(spec)?;
    let layout = Layout::new(&spec.topology, model.env_means.len())?;
    let g = layout.stacked(&model);
    Ok(model
        .env_means
        .iter()
        .zip(&model.env_variances)
        .map(|(mu, var)| EnvMoments {
            count: 0,
            mean: &g * mu,
            cov: &g * DMatrix::from_diagonal(var) * g.transpose(),
        })
        .collect())
}

/// Single descent from `init` against precomputed moments.
pub fn fit_moments_from(
    moments: &[EnvMoments],
    topology: &ScmTopology,
    init: &UnmixModel,
    config: &FitConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    let layout = Layout::new(topology, moments.len())?;
    check_model(&layout, init)?;
    if moments
        .iter()
        .any(|m| m.mean.len() != layout.p || m.cov.shape() != (layout.p, layout.p))
    {
        return Err(Error::Data(
            "moment dimensions do not match the topology".into(),
        ));
    }
    run_restarts(&layout, moments, std::slice::from_ref(init), config)
}

fn run_restarts(
    layout: &Layout,
    moments: &[EnvMoments],
    inits: &[UnmixModel],
    config: &FitConfig,
) -> Result<FitOutcome> {
    let mut best: Option<(usize, Descent)> = None;
    let mut restarts = Vec::with_capacity(inits.len());
    for (r, init) in inits.iter().enumerate() {
        let run = descend(layout, init, moments, config);
        let collapsed = run.model.is_singular() || !run.value.is_finite();
        restarts.push(RestartOutcome {
            restart: r,
            initial_objective: run.initial,
            objective: run.value,
            iterations: run.iterations,
            collapsed,
        });
        if collapsed {
            continue;
        }
        // Strict improvement keeps the earliest restart on ties.
        if best.as_ref().is_none_or(|(_, b)| run.value < b.value) {
            best = Some((r, run));
        }
    }
    let (best_restart, run) = best.ok_or_else(|| {
        Error::SingularModel("every restart collapsed to a singular source map".into())
    })?;
    Ok(FitOutcome {
        model: run.model,
        objective: run.value,
        best_restart,
        restarts,
        best_history: run.history,
    })
}

/// `l̃ = F̃⁻¹ x` for each row.
pub fn recover_latents(model: &UnmixModel, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if model.is_singular() {
        return Err(Error::SingularModel("source map is not invertible".into()));
    }
    let n = model.f.nrows();
    let lu = model.f.clone().lu();
    xs.iter()
        .map(|x| {
            if x.len() != n {
                return Err(Error::Shape(format!(
                    "x row has {} entries, expected {n}",
                    x.len()
                )));
            }
            let v = lu
                .solve(&DVector::from_column_slice(x))
                .ok_or_else(|| Error::SingularModel("LU solve failed".into()))?;
            Ok(v.iter().copied().collect())
        })
        .collect()
}

/// Pearson correlation matrix `corr[i][k]` between column `i` of `a` and
/// column `k` of `b`.
pub fn cross_correlation(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "row counts differ or are zero ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a[0].len(), b[0].len());
    if a.iter().any(|r| r.len() != na) || b.iter().any(|r| r.len() != nb) {
        return Err(Error::Shape("ragged latent rows".into()));
    }
    let center = |rows: &[Vec<f64>], k: usize| -> Result<Vec<Vec<f64>>> {
        let count = rows.len() as f64;
        (0..k)
            .map(|j| {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / count;
                let col: Vec<f64> = rows.iter().map(|r| r[j] - mean).collect();
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm.is_nan() || norm <= 1e-12 * mean.abs().max(1.0) * count.sqrt() {
                    return Err(Error::Degenerate(format!(
                        "column {} has zero variance",
                        j + 1
                    )));
                }
                Ok(col.into_iter().map(|v| v / norm).collect())
            })
            .collect()
    };
    let ca = center(a, na)?;
    let cb = center(b, nb)?;
    Ok(ca
        .iter()
        .map(|u| {
            cb.iter()
                .map(|v| {
                    let c: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                    c.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matching {
    /// `permutation[i]` is the estimated column matched to true latent `i`.
    pub permutation: Vec<usize>,
    pub per_latent_abs_corr: Vec<f64>,
}

/// Exhaustive search for the permutation maximising mean |correlation|.
/// Ties keep the lexicographically smallest permutation.
pub fn match_permutation(true_latents: &[Vec<f64>], est_latents: &[Vec<f64>]) -> Result<Matching> {
    let corr = cross_correlation(true_latents, est_latents)?;
    let n = corr.len();
    if corr[0].len() != n {
        return Err(Error::Shape(
            "true and estimated latent counts differ".into(),
        ));
    }
    if n > MAX_MATCH_LATENTS {
        return Err(Error::Capacity(format!(
            "exhaustive matching supports at most {MAX_MATCH_LATENTS} latents"
        )));
    }
    let abs: Vec<Vec<f64>> = corr
        .iter()
        .map(|r| r.iter().map(|c| c.abs()).collect())
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let score: f64 = perm.iter().enumerate().map(|(i, &k)| abs[i][k]).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let per_latent_abs_corr = permutation
        .iter()
        .enumerate()
        .map(|(i, &k)| abs[i][k])
        .collect();
    Ok(Matching {
        permutation,
        per_latent_abs_corr,
    })
}

/// Mean of matched |correlations|.
pub fn mcc(per_latent_abs_corr: &[f64]) -> f64 {
    if per_latent_abs_corr.is_empty() {
        return 0.0;
    }
    per_latent_abs_corr.iter().sum::<f64>() / per_latent_abs_corr.len() as f64
}

/// Groups of latents with identical target-side child sets.
pub fn colliding_blocks(topology: &ScmTopology) -> Vec<Vec<usize>> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for j in 0..topology.num_latents() {
        let col = topology.column_bits(j);
        match blocks
            .iter_mut()
            .find(|b| topology.column_bits(b[0]) == col)
        {
            Some(b) => b.push(j),
            None => blocks.push(vec![j]),
        }
    }
    blocks.retain(|b| b.len() > 1);
    blocks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub permutation: Vec<usize>,
    pub per_latent_abs_corr: Vec<f64>,
    pub mcc: f64,
    pub restart_objectives: Vec<f64>,
    pub objective: f64,
    pub colliding_blocks: Vec<Vec<usize>>,
}

/// Fits, recovers latents from `x` and scores them against the retained
/// ground truth.
pub fn recover(
    dataset: &SyntheticDataset,
    topology: &ScmTopology,
    config: &FitConfig,
) -> Result<RecoveryReport> {
    let outcome = fit(dataset, topology, config)?;
    report_for(dataset, topology, &outcome)
}

pub fn report_for(
    dataset: &SyntheticDataset,
    topology: &ScmTopology,
    outcome: &FitOutcome,
) -> Result<RecoveryReport> {
    let est = recover_latents(&outcome.model, &dataset.xs())?;
    let matching = match_permutation(&dataset.latents(), &est)?;
    Ok(RecoveryReport {
        mcc: mcc(&matching.per_latent_abs_corr),
        permutation: matching.permutation,
        per_latent_abs_corr: matching.per_latent_abs_corr,
        restart_objectives: outcome.restarts.iter().map(|r| r.objective).collect(),
        objective: outcome.objective,
        colliding_blocks: colliding_blocks(topology),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seeds: usize,
    pub samples_per_env: usize,
    pub fit: FitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: 10,
            samples_per_env: 20_000,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub mcc: f64,
    pub per_latent_abs_corr: Vec<f64>,
    pub objective: f64,
    /// Mean matched |correlation| over the colliding latents, or over all
    /// latents when none collide.
    pub focus_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub median_mcc: f64,
    /// Range (max − min) of `focus_corr` across seeds.
    pub dispersion: f64,
    /// Sample standard deviation of `focus_corr` across seeds.
    pub focus_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecRuns {
    pub identifiable: bool,
    pub colliding_blocks: Vec<Vec<usize>>,
    pub per_seed: Vec<SeedRun>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub identifiable: SpecRuns,
    pub colliding: SpecRuns,
    /// `median_mcc(identifiable) − median_mcc(colliding)`.
    pub median_gap: f64,
}

impl ExperimentReport {
    /// True when the colliding spec is recovered markedly worse or markedly
    /// less stably than the identifiable one.
    pub fn shows_contrast(&self) -> bool {
        self.median_gap >= MIN_MEDIAN_GAP || self.colliding.summary.dispersion >= MIN_DISPERSION
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Fits and scores one spec over `config.seeds` fresh datasets.
pub fn run_spec(spec: &DgpSpec, config: &ExperimentConfig, base_seed: u64) -> Result<SpecRuns> {
    let blocks = colliding_blocks(&spec.topology);
    let focus: Vec<usize> = if blocks.is_empty() {
        (0..spec.topology.num_latents()).collect()
    } else {
        blocks.iter().flatten().copied().collect()
    };
    // Seeds run in parallel; the ordered collect keeps the report independent
    // of scheduling.
    let per_seed: Vec<SeedRun> = (0..config.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let data = spec.generate(
                config.samples_per_env,
                derive_seed(base_seed, tags::DATA, s),
            )?;
            let fit_cfg = FitConfig {
                seed: derive_seed(base_seed, tags::FIT, s),
                ..config.fit
            };
            let report = recover(&data, &spec.topology, &fit_cfg)?;
            let focus_corr = mcc(&focus
                .iter()
                .map(|&j| report.per_latent_abs_corr[j])
                .collect::<Vec<_>>());
            Ok(SeedRun {
                seed: s,
                mcc: report.mcc,
                per_latent_abs_corr: report.per_latent_abs_corr,
                objective: report.objective,
                focus_corr,
            })
        })
        .collect::<Result<_>>()?;
    let mccs: Vec<f64> = per_seed.iter().map(|r| r.mcc).collect();
    let focus_vals: Vec<f64> = per_seed.iter().map(|r| r.focus_corr).collect();
    let (lo, hi) = focus_vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(SpecRuns {
        identifiable: crate::ident::uic_check(&spec.topology),
        colliding_blocks: blocks,
        per_seed,
        summary: RunSummary {
            median_mcc: median(&mccs),
            dispersion: if focus_vals.is_empty() { 0.0 } else { hi - lo },
            focus_std: sample_std(&focus_vals),
        },
    })
}

/// Runs the identifiable and the colliding spec under the same seeds.
pub fn identifiability_experiment(
    spec_ident: &DgpSpec,
    spec_collide: &DgpSpec,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    if !crate::ident::uic_check(&spec_ident.topology) {
        return Err(Error::Config(
            "first spec's topology is not identifiable".into(),
        ));
    }
    if crate::ident::uic_check(&spec_collide.topology) {
        return Err(Error::Config(
            "second spec's topology has no colliding latents".into(),
        ));
    }
    for spec in [spec_ident, spec_collide] {
        if spec.mixing.nonlinearity != Nonlinearity::None {
            return Err(Error::Config(
                "recovery experiments require linear mixing".into(),
            ));
        }
    }
    let identifiable = run_spec(spec_ident, config, seed)?;
    let colliding = run_spec(spec_collide, config, seed)?;
    Ok(ExperimentReport {
        median_gap: identifiable.summary.median_mcc - colliding.summary.median_mcc,
        identifiable,
        colliding,
    })
}
