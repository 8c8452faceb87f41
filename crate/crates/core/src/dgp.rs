//! Synthetic multi-environment data from the meta-SCM generating process.
//!
//! Latents are independent Gaussians whose means and variances depend on the
//! environment (the dataset-property node). The Gaussian is written in
//! exponential-family form with sufficient statistics `T(l) = (l, l²)` and
//! natural parameters `λ(d) = (μ/σ², −1/(2σ²))`.
//!
//! Observables follow the additive noise model with linear mechanisms:
//! `x = g(F l) + ε_x` with `g` the identity or a leaky rectifier, and
//! `y_t = B_t l[Pa(Y_t)] + ε_t` with the parent coordinates in ascending order.
//!
//! Seeding: environment `e` draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! its stream set to `e`, latents first, then `x` noise, then `y` noise, row by
//! row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::ScmTopology;

/// Relative singular-value tolerance for rank and invertibility checks.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Dimension of the sufficient statistic `(l, l²)`.
pub const SUFFICIENT_STAT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianEnvironment {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Per-environment Gaussian priors over `n` scalar latents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpFamilyPrior {
    num_latents: usize,
    environments: Vec<GaussianEnvironment>,
}

impl ExpFamilyPrior {
    pub fn new(environments: Vec<GaussianEnvironment>) -> Result<Self> {
        let Some(first) = environments.first() else {
            return Err(Error::Config("at least one environment is required".into()));
        };
        let n = first.means.len();
        if n == 0 {
            return Err(Error::Config(
                "environments must describe at least one latent".into(),
            ));
        }
        for (e, env) in environments.iter().enumerate() {
            if env.means.len() != n || env.variances.len() != n {
                return Err(Error::Config(format!(
                    "environment {e} has {} means and {} variances, expected {n}",
                    env.means.len(),
                    env.variances.len()
                )));
            }
            if let Some(v) = env.variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Config(format!("environment {e} has variance {v}")));
            }
            if let Some(v) = env.means.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("environment {e} has mean {v}")));
            }
        }
        Ok(ExpFamilyPrior {
            num_latents: n,
            environments,
        })
    }

    pub fn num_latents(&self) -> usize {
        self.num_latents
    }

    pub fn num_environments(&self) -> usize {
        self.environments.len()
    }

    pub fn environments(&self) -> &[GaussianEnvironment] {
        &self.environments
    }

    pub fn environment(&self, env: usize) -> Result<&GaussianEnvironment> {
        self.environments.get(env).ok_or_else(|| {
            Error::Config(format!(
                "environment {env} not configured ({} available)",
                self.environments.len()
            ))
        })
    }

    /// `(μ/σ², −1/(2σ²))` for each latent in environment `env`.
    pub fn natural_parameters(&self, env: usize) -> Result<Vec<[f64; 2]>> {
        let e = self.environment(env)?;
        Ok(e.means
            .iter()
            .zip(&e.variances)
            .map(|(&mu, &var)| [mu / var, -0.5 / var])
            .collect())
    }

    /// Log partition function of latent `j` in `env`, with unit base measure
    /// absorbed as `1/√(2π)`: `μ²/(2σ²) + ½ ln(2πσ²)`.
    pub fn log_partition(&self, env: usize, j: usize) -> Result<f64> {
        let e = self.environment(env)?;
        let (mu, var) = (e.means[j], e.variances[j]);
        Ok(mu * mu / (2.0 * var) + 0.5 * (2.0 * std::f64::consts::PI * var).ln())
    }

    /// Required environment count `dim(l) · dim(T) + 1` for scalar latents.
    pub fn required_environments(&self) -> usize {
        SUFFICIENT_STAT_DIM + 1
    }
}

/// Sufficient statistic of a scalar Gaussian latent.
pub fn sufficient_statistics(l: f64) -> [f64; 2] {
    [l, l * l]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    #[default]
    None,
    Leaky {
        slope: f64,
    },
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::None => v,
            Nonlinearity::Leaky { slope } => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
        }
    }
}

/// Smallest over largest singular value; zero for the empty matrix.
pub fn conditioning(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Numerical rank with singular values above `RANK_TOLERANCE · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// Linear mechanisms for the source and each target.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSpec {
    pub f: DMatrix<f64>,
    pub nonlinearity: Nonlinearity,
    /// One square matrix per task, of size `|Pa(Y_t)|`.
    pub b: Vec<DMatrix<f64>>,
}

impl MixingSpec {
    pub fn validate(&self, topology: &ScmTopology) -> Result<()> {
        let n = topology.num_latents();
        if self.f.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "F is {:?}, expected {n}×{n}",
                self.f.shape()
            )));
        }
        if conditioning(&self.f) <= RANK_TOLERANCE {
            return Err(Error::Config("F is not invertible".into()));
        }
        if let Nonlinearity::Leaky { slope } = self.nonlinearity {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::Config(format!("leaky slope {slope} outside (0, 1)")));
            }
        }
        if self.b.len() != topology.num_tasks() {
            return Err(Error::Shape(format!(
                "{} target mechanisms for {} tasks",
                self.b.len(),
                topology.num_tasks()
            )));
        }
        for (t, b) in self.b.iter().enumerate() {
            let p = topology.parent_latents(t)?.len();
            if b.shape() != (p, p) {
                return Err(Error::Shape(format!(
                    "B_{} is {:?}, expected {p}×{p}",
                    t + 1,
                    b.shape()
                )));
            }
            if conditioning(b) <= RANK_TOLERANCE {
                return Err(Error::Config(format!("B_{} is not invertible", t + 1)));
            }
        }
        Ok(())
    }
}

/// Independent Gaussian noise scales per observable coordinate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseSpec {
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

impl NoiseSpec {
    pub fn zero(topology: &ScmTopology) -> Self {
        NoiseSpec {
            x: vec![0.0; topology.num_latents()],
            y: (0..topology.num_tasks())
                .map(|t| vec![0.0; topology.parent_latents(t).map_or(0, |p| p.len())])
                .collect(),
        }
    }

    pub fn validate(&self, topology: &ScmTopology) -> Result<()> {
        if self.x.len() != topology.num_latents() || self.y.len() != topology.num_tasks() {
            return Err(Error::Shape(
                "noise dimensions do not match topology".into(),
            ));
        }
        for (t, y) in self.y.iter().enumerate() {
            if y.len() != topology.parent_latents(t)?.len() {
                return Err(Error::Shape(format!(
                    "noise for Y_{} has wrong length",
                    t + 1
                )));
            }
        }
        let all = self.x.iter().chain(self.y.iter().flatten());
        if let Some(s) = all.into_iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!(
                "noise scale {s} is negative or not finite"
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.x
            .iter()
            .chain(self.y.iter().flatten())
            .all(|&s| s == 0.0)
    }
}

/// A complete generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub topology: ScmTopology,
    pub prior: ExpFamilyPrior,
    pub mixing: MixingSpec,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    #[serde(default)]
    x: Option<Vec<f64>>,
    #[serde(default)]
    y: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgpDoc {
    topology: serde_json::Value,
    environments: Vec<GaussianEnvironment>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    #[serde(rename = "B", default)]
    b: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default)]
    noise: Option<NoiseDoc>,
    #[serde(default)]
    nonlinearity: Nonlinearity,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Shape(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl DgpSpec {
    pub fn new(
        topology: ScmTopology,
        prior: ExpFamilyPrior,
        mixing: MixingSpec,
        noise: NoiseSpec,
    ) -> Result<Self> {
        if prior.num_latents() != topology.num_latents() {
            return Err(Error::Shape(format!(
                "prior describes {} latents, topology has {}",
                prior.num_latents(),
                topology.num_latents()
            )));
        }
        mixing.validate(&topology)?;
        noise.validate(&topology)?;
        Ok(DgpSpec {
            topology,
            prior,
            mixing,
            noise,
        })
    }

    /// Parses the DGP JSON document. Target mechanisms and noise are keyed
    /// `t1`, `t2`, … (one-based task index).
    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: DgpDoc = serde_json::from_str(s)?;
        let topology = ScmTopology::from_json_value(doc.topology)?;
        let prior = ExpFamilyPrior::new(doc.environments)?;
        let f = matrix_from_rows(&doc.f, "F")?;
        let mut b = Vec::with_capacity(topology.num_tasks());
        for t in 0..topology.num_tasks() {
            let key = format!("t{}", t + 1);
            let p = topology.parent_latents(t)?.len();
            match doc.b.get(&key) {
                Some(rows) if p > 0 => b.push(matrix_from_rows(rows, &key)?),
                Some(rows) if rows.is_empty() => b.push(DMatrix::zeros(0, 0)),
                Some(_) => {
                    return Err(Error::Shape(format!(
                        "{key} has no parents but B is non-empty"
                    )))
                }
                None if p == 0 => b.push(DMatrix::zeros(0, 0)),
                None => return Err(Error::Config(format!("missing B entry `{key}`"))),
            }
        }
        if let Some(extra) = doc.b.keys().find(|k| {
            k.strip_prefix('t')
                .and_then(|i| i.parse::<usize>().ok())
                .is_none_or(|i| i == 0 || i > topology.num_tasks())
        }) {
            return Err(Error::Config(format!("unknown B entry `{extra}`")));
        }
        let mut noise = NoiseSpec::zero(&topology);
        if let Some(nd) = doc.noise {
            if let Some(x) = nd.x {
                noise.x = x;
            }
            for (key, scales) in nd.y {
                let t = key
                    .strip_prefix('t')
                    .and_then(|i| i.parse::<usize>().ok())
                    .filter(|&i| i >= 1 && i <= topology.num_tasks())
                    .ok_or_else(|| Error::Config(format!("unknown noise entry `{key}`")))?;
                noise.y[t - 1] = scales;
            }
        }
        DgpSpec::new(
            topology,
            prior,
            MixingSpec {
                f,
                nonlinearity: doc.nonlinearity,
                b,
            },
            noise,
        )
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let b: BTreeMap<String, Vec<Vec<f64>>> = self
            .mixing
            .b
            .iter()
            .enumerate()
            .map(|(t, m)| (format!("t{}", t + 1), matrix_to_rows(m)))
            .collect();
        let noise_y: BTreeMap<String, Vec<f64>> = self
            .noise
            .y
            .iter()
            .enumerate()
            .map(|(t, s)| (format!("t{}", t + 1), s.clone()))
            .collect();
        serde_json::json!({
            "topology": self.topology,
            "environments": self.prior.environments(),
            "F": matrix_to_rows(&self.mixing.f),
            "B": b,
            "noise": {"x": self.noise.x, "y": noise_y},
            "nonlinearity": self.mixing.nonlinearity,
        })
    }

    /// Draws `samples_per_env` rows from every environment.
    pub fn generate(&self, samples_per_env: usize, seed: u64) -> Result<SyntheticDataset> {
        if samples_per_env == 0 {
            return Err(Error::Config("samples per environment must be ≥ 1".into()));
        }
        let mut samples = Vec::with_capacity(samples_per_env * self.prior.num_environments());
        for env in 0..self.prior.num_environments() {
            let mut rng = env_rng(seed, env);
            let latents = sample_latents_with(&self.prior, env, samples_per_env, &mut rng)?;
            let observed = generate_observed_with(
                &self.topology,
                &self.mixing,
                &self.noise,
                &latents,
                &mut rng,
            )?;
            for (index, ((l, x), y)) in latents
                .into_iter()
                .zip(observed.x)
                .zip(observed.y)
                .enumerate()
            {
                samples.push(Sample {
                    env,
                    index,
                    latent: l,
                    x,
                    y,
                });
            }
        }
        Ok(SyntheticDataset {
            num_latents: self.topology.num_latents(),
            target_dims: target_dims(&self.topology),
            num_environments: self.prior.num_environments(),
            samples,
        })
    }
}

fn target_dims(topology: &ScmTopology) -> Vec<usize> {
    (0..topology.num_tasks())
        .map(|t| topology.parent_latents(t).map_or(0, |p| p.len()))
        .collect()
}

/// Generator for environment `env` under a run seed.
pub fn env_rng(seed: u64, env: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(env as u64);
    rng
}

/// `count` i.i.d. draws of the latent vector in environment `env`.
pub fn sample_latents(
    prior: &ExpFamilyPrior,
    env: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    sample_latents_with(prior, env, count, &mut env_rng(seed, env))
}

pub fn sample_latents_with<R: Rng + ?Sized>(
    prior: &ExpFamilyPrior,
    env: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Config("count must be ≥ 1".into()));
    }
    let e = prior.environment(env)?;
    let sds: Vec<f64> = e.variances.iter().map(|v| v.sqrt()).collect();
    Ok((0..count)
        .map(|_| {
            e.means
                .iter()
                .zip(&sds)
                .map(|(&mu, &sd)| {
                    let z: f64 = rng.sample(StandardNormal);
                    mu + sd * z
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub x: Vec<Vec<f64>>,
    /// `y[row][task]`.
    pub y: Vec<Vec<Vec<f64>>>,
}

/// Pushes latent rows through the mechanisms and adds noise.
pub fn generate_observed<R: Rng + ?Sized>(
    topology: &ScmTopology,
    mixing: &MixingSpec,
    noise: &NoiseSpec,
    latents: &[Vec<f64>],
    rng: &mut R,
) -> Result<Observed> {
    mixing.validate(topology)?;
    noise.validate(topology)?;
    generate_observed_with(topology, mixing, noise, latents, rng)
}

fn generate_observed_with<R: Rng + ?Sized>(
    topology: &ScmTopology,
    mixing: &MixingSpec,
    noise: &NoiseSpec,
    latents: &[Vec<f64>],
    rng: &mut R,
) -> Result<Observed> {
    let n = topology.num_latents();
    let parents: Vec<Vec<usize>> = (0..topology.num_tasks())
        .map(|t| topology.parent_latents(t).map(|p| p.iter().collect()))
        .collect::<Result<_>>()?;
    let mut xs = Vec::with_capacity(latents.len());
    let mut ys = Vec::with_capacity(latents.len());
    for l in latents {
        if l.len() != n {
            return Err(Error::Shape(format!(
                "latent row has {} entries, expected {n}",
                l.len()
            )));
        }
        let lv = DVector::from_column_slice(l);
        let fx = &mixing.f * &lv;
        let x: Vec<f64> = fx
            .iter()
            .zip(&noise.x)
            .map(|(&v, &sd)| {
                let z: f64 = rng.sample(StandardNormal);
                mixing.nonlinearity.apply(v) + sd * z
            })
            .collect();
        let mut y_row = Vec::with_capacity(parents.len());
        for (t, pa) in parents.iter().enumerate() {
            let sub = DVector::from_iterator(pa.len(), pa.iter().map(|&j| l[j]));
            let by = &mixing.b[t] * sub;
            y_row.push(
                by.iter()
                    .zip(&noise.y[t])
                    .map(|(&v, &sd)| {
                        let z: f64 = rng.sample(StandardNormal);
                        v + sd * z
                    })
                    .collect(),
            );
        }
        xs.push(x);
        ys.push(y_row);
    }
    Ok(Observed { x: xs, y: ys })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarietyReport {
    pub ok: bool,
    pub n_envs: usize,
    pub required: usize,
    /// Rank of the stacked difference matrix.
    pub rank: usize,
    /// Rank of each latent's `dim(T) × (n_envs − 1)` block.
    pub per_latent_rank: Vec<usize>,
    /// Rows `2j`, `2j+1` hold latent `j`'s natural-parameter differences;
    /// column `k − 1` is `λ(d_k) − λ(d_0)`.
    pub matrix: Vec<Vec<f64>>,
}

/// Environment variety check on natural-parameter differences.
///
/// Passes when there are at least `dim(T) + 1` environments and every
/// latent's block of differences has rank `dim(T)`.
pub fn check_variety(prior: &ExpFamilyPrior) -> VarietyReport {
    let n = prior.num_latents();
    let e = prior.num_environments();
    let required = prior.required_environments();
    let lambdas: Vec<Vec<[f64; 2]>> = (0..e)
        .map(|d| prior.natural_parameters(d).expect("environment in range"))
        .collect();
    let cols = e.saturating_sub(1);
    let h = DMatrix::from_fn(SUFFICIENT_STAT_DIM * n, cols, |r, c| {
        let (j, s) = (r / SUFFICIENT_STAT_DIM, r % SUFFICIENT_STAT_DIM);
        lambdas[c + 1][j][s] - lambdas[0][j][s]
    });
    let rank = numerical_rank(&h);
    let per_latent_rank: Vec<usize> = (0..n)
        .map(|j| {
            let block = h
                .rows(SUFFICIENT_STAT_DIM * j, SUFFICIENT_STAT_DIM)
                .into_owned();
            numerical_rank(&block)
        })
        .collect();
    let ok = e >= required && per_latent_rank.iter().all(|&r| r == SUFFICIENT_STAT_DIM);
    VarietyReport {
        ok,
        n_envs: e,
        required,
        rank,
        per_latent_rank,
        matrix: matrix_to_rows(&h),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub env: usize,
    /// Position within its environment.
    pub index: usize,
    pub latent: Vec<f64>,
    pub x: Vec<f64>,
    /// One vector per task, empty for tasks without parents.
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub num_latents: usize,
    pub target_dims: Vec<usize>,
    pub num_environments: usize,
    pub samples: Vec<Sample>,
}

impl SyntheticDataset {
    pub fn env_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_environments];
        for s in &self.samples {
            counts[s.env] += 1;
        }
        counts
    }

    /// Rows of environment `env`, in order.
    pub fn env_samples(&self, env: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.env == env)
    }

    pub fn latents(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.latent.clone()).collect()
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    /// Restricts to the given environments, renumbered from zero.
    pub fn select_environments(&self, envs: &[usize]) -> SyntheticDataset {
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                envs.iter().position(|&e| e == s.env).map(|new| Sample {
                    env: new,
                    ..s.clone()
                })
            })
            .collect();
        SyntheticDataset {
            num_latents: self.num_latents,
            target_dims: self.target_dims.clone(),
            num_environments: envs.len(),
            samples,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["env".to_string(), "sample".to_string()];
        h.extend((1..=self.num_latents).map(|j| format!("l_{j}")));
        h.extend((1..=self.num_latents).map(|j| format!("x_{j}")));
        for (t, &d) in self.target_dims.iter().enumerate() {
            h.extend((1..=d).map(|k| format!("y{}_{k}", t + 1)));
        }
        h
    }

    pub fn column_count(&self) -> usize {
        2 + 2 * self.num_latents + self.target_dims.iter().sum::<usize>()
    }
}

/// Shortest representation that parses back to the same double.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes the dataset CSV, ground-truth latents included.
pub fn export_dataset(dataset: &SyntheticDataset, path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    write_dataset(dataset, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(dataset: &SyntheticDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset.header())?;
    for s in &dataset.samples {
        let mut rec = vec![s.env.to_string(), s.index.to_string()];
        rec.extend(s.latent.iter().map(|&v| fmt_f64(v)));
        rec.extend(s.x.iter().map(|&v| fmt_f64(v)));
        for y in &s.y {
            rec.extend(y.iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV written by [`export_dataset`] for `topology`.
pub fn import_dataset(path: &Path, topology: &ScmTopology) -> Result<SyntheticDataset> {
    read_dataset(File::open(path)?, topology)
}

pub fn read_dataset<R: std::io::Read>(
    input: R,
    topology: &ScmTopology,
) -> Result<SyntheticDataset> {
    let n = topology.num_latents();
    let dims = target_dims(topology);
    let mut reader = csv::Reader::from_reader(input);
    let expected = SyntheticDataset {
        num_latents: n,
        target_dims: dims.clone(),
        num_environments: 0,
        samples: Vec::new(),
    }
    .header();
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Data(format!(
            "CSV header {header:?} does not match topology schema {expected:?}"
        )));
    }
    let mut samples = Vec::new();
    let mut num_envs = 0;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_usize = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("row {}: bad integer `{}`", row + 1, field(i))))
        };
        let parse_f64 = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {}: bad number `{}`", row + 1, field(i))))
        };
        let env = parse_usize(0)?;
        let index = parse_usize(1)?;
        let latent = (2..2 + n).map(parse_f64).collect::<Result<Vec<_>>>()?;
        let x = (2 + n..2 + 2 * n)
            .map(parse_f64)
            .collect::<Result<Vec<_>>>()?;
        let mut at = 2 + 2 * n;
        let mut y = Vec::with_capacity(dims.len());
        for &d in &dims {
            y.push((at..at + d).map(parse_f64).collect::<Result<Vec<_>>>()?);
            at += d;
        }
        num_envs = num_envs.max(env + 1);
        samples.push(Sample {
            env,
            index,
            latent,
            x,
            y,
        });
    }
    Ok(SyntheticDataset {
        num_latents: n,
        target_dims: dims,
        num_environments: num_envs,
        samples,
    })
}
