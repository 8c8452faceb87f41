//! `scm-ident` command-line front end.
//!
//! Exit codes: 0 success or identifiable, 1 not identifiable, 2 input error,
//! 3 numeric failure, 4 internal decider disagreement. JSON output is
//! pretty-printed with sorted keys; index fields in JSON are zero-based while
//! labels (`L_1`, `Y_1`) are one-based.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::dgp::{self, check_variety, DgpSpec};
use crate::error::{Error, Result};
use crate::ident::{self, WorklistOrder, DEFAULT_MAX_FAMILY};
use crate::losses::{self, LossConfig, SoftAdjacency};
use crate::recovery::{self, ExperimentConfig, FitConfig, UnmixModel};
use crate::seeding::{derive_seed, tags};
use crate::selection::{self, TaskScoreVector};
use crate::topology::ScmTopology;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_IDENTIFIABLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_DISAGREEMENT: i32 = 4;

/// Environment variable capping the worker count (0 or unset = automatic).
pub const THREADS_ENV: &str = "SCM_IDENT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Fifo,
    Lifo,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskMethod {
    Bernoulli,
    Gumbel,
    Both,
}

#[derive(Debug, Parser)]
#[command(
    name = "scm-ident",
    version,
    about = "Identifiability tools for multi-task structural causal models"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "text")]
    pub format: Format,
    /// Root seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide identifiability with both deciders.
    Check { topology: PathBuf },
    /// Print the subtraction-closure family.
    Closure {
        topology: PathBuf,
        /// Print a derivation chain for every singleton.
        #[arg(long)]
        trace: bool,
        #[arg(long, value_enum, default_value = "fifo")]
        order: OrderArg,
    },
    /// Audit decider agreement over every binary matrix up to a shape.
    Enumerate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
    },
    /// Evaluate the structure losses on a JSON matrix.
    Loss {
        matrix: PathBuf,
        #[arg(long, default_value_t = 50)]
        alpha: u32,
        #[arg(long, default_value_t = 1.0)]
        lambda_uic: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_dis: f64,
        /// Externally computed reconstruction loss.
        #[arg(long, default_value_t = 0.0)]
        rec: f64,
        /// Externally computed prediction loss.
        #[arg(long, default_value_t = 0.0)]
        pre: f64,
        /// Also print the analytic gradients.
        #[arg(long)]
        grad: bool,
    },
    /// Compare analytic and finite-difference loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        alpha: u32,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 6)]
        cols: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Soft and hard latent masks from task scores.
    Mask {
        /// JSON array of scores, or array of per-task score arrays.
        scores: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        scale: f64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, value_enum, default_value = "both")]
        method: MaskMethod,
    },
    /// Generate a synthetic multi-environment dataset as CSV.
    #[command(name = "dgp-gen")]
    DgpGen {
        spec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the unmixing model and score latent recovery.
    Recover {
        data: PathBuf,
        topology: PathBuf,
        /// JSON object overriding fit settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start a single descent from this spec's true parameters.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Contrast recovery on an identifiable and a colliding spec.
    Experiment {
        spec_ident: PathBuf,
        spec_collide: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Fit settings accepted by `recover --config`; the seed always comes from
/// `--seed`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfigDoc {
    restarts: Option<usize>,
    max_iters: Option<usize>,
    initial_step: Option<f64>,
    step_growth: Option<f64>,
    min_step: Option<f64>,
    grad_tol: Option<f64>,
}

impl FitConfigDoc {
    fn apply(self, mut cfg: FitConfig) -> FitConfig {
        cfg.restarts = self.restarts.unwrap_or(cfg.restarts);
        cfg.max_iters = self.max_iters.unwrap_or(cfg.max_iters);
        cfg.initial_step = self.initial_step.unwrap_or(cfg.initial_step);
        cfg.step_growth = self.step_growth.unwrap_or(cfg.step_growth);
        cfg.min_step = self.min_step.unwrap_or(cfg.min_step);
        cfg.grad_tol = self.grad_tol.unwrap_or(cfg.grad_tol);
        cfg
    }
}

/// What a command produced: an exit code plus renderings for each format.
/// `raw` bypasses formatting entirely.
struct Outcome {
    code: i32,
    text: String,
    json: Value,
    raw: Option<Vec<u8>>,
}

impl Outcome {
    fn new(code: i32, text: String, json: Value) -> Self {
        Outcome {
            code,
            text,
            json,
            raw: None,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_topology(path: &Path) -> Result<ScmTopology> {
    ScmTopology::from_json_str(&read(path)?)
}

fn load_spec(path: &Path) -> Result<DgpSpec> {
    DgpSpec::from_json_str(&read(path)?)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::SingularModel(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn pair_labels(t: &ScmTopology, pairs: &[(usize, usize)]) -> Vec<[String; 2]> {
    pairs
        .iter()
        .map(|&(a, b)| [t.latent_label(a), t.latent_label(b)])
        .collect()
}

fn set_labels(t: &ScmTopology, set: crate::topology::FactorSet) -> Vec<String> {
    set.iter().map(|j| t.latent_label(j)).collect()
}

fn verdict_word(ok: bool) -> &'static str {
    if ok {
        "identifiable"
    } else {
        "not identifiable"
    }
}

fn cmd_check(path: &Path) -> Result<Outcome> {
    let t = load_topology(path)?;
    let closure = ident::closure_identifiable(&t)?;
    let uic_pairs = ident::uic_violations(&t);
    let uic = uic_pairs.is_empty();
    let agree = closure.identifiable == uic && closure.violating_pairs == uic_pairs;
    let capacity = t.capacity_diagnostic();
    let bounds = t.parent_bound_diagnostic();

    let mut text = String::new();
    writeln!(
        text,
        "topology: {} tasks, {} latents",
        t.num_tasks(),
        t.num_latents()
    )
    .ok();
    writeln!(
        text,
        "closure decider: {}",
        verdict_word(closure.identifiable)
    )
    .ok();
    writeln!(text, "matrix decider:  {}", verdict_word(uic)).ok();
    if uic_pairs.is_empty() {
        writeln!(text, "violating pairs: none").ok();
    } else {
        let shown: Vec<String> = pair_labels(&t, &uic_pairs)
            .into_iter()
            .map(|[a, b]| format!("({a}, {b})"))
            .collect();
        writeln!(text, "violating pairs: {}", shown.join(" ")).ok();
    }
    writeln!(
        text,
        "capacity (advisory): n = {} vs 2^m - 1 = {}{}",
        capacity.num_latents,
        capacity.nonempty_bound,
        if capacity.exceeds { " (exceeded)" } else { "" }
    )
    .ok();
    for b in bounds.iter().filter(|b| b.violates) {
        writeln!(
            text,
            "parent bound (advisory): {} has {} parents > {}",
            t.task_label(b.task),
            b.num_parents,
            b.bound
        )
        .ok();
    }
    if !agree {
        writeln!(text, "internal error: deciders disagree").ok();
    }
    let json = json!({
        "num_tasks": t.num_tasks(),
        "num_latents": t.num_latents(),
        "identifiable": uic,
        "deciders_agree": agree,
        "closure": {
            "identifiable": closure.identifiable,
            "violating_pairs": closure.violating_pairs,
        },
        "uic": {
            "identifiable": uic,
            "violating_pairs": uic_pairs,
        },
        "violating_pair_labels": pair_labels(&t, &uic_pairs),
        "capacity": capacity,
        "parent_bounds": bounds,
    });
    let code = if !agree {
        EXIT_DISAGREEMENT
    } else if uic {
        EXIT_OK
    } else {
        EXIT_NOT_IDENTIFIABLE
    };
    Ok(Outcome::new(code, text, json))
}

fn cmd_closure(path: &Path, trace: bool, order: OrderArg, seed: u64) -> Result<Outcome> {
    let t = load_topology(path)?;
    let order = match order {
        OrderArg::Fifo => WorklistOrder::Fifo,
        OrderArg::Lifo => WorklistOrder::Lifo,
        OrderArg::Shuffled => WorklistOrder::Shuffled(seed),
    };
    let family = ident::closure_generate_with(&t, order, DEFAULT_MAX_FAMILY)?;
    let verdict = ident::verdict_from_family(&t, &family);
    let members = family.canonical_sets();
    let missing: Vec<String> = (0..t.num_latents())
        .filter(|&j| verdict.per_latent[j].is_none())
        .map(|j| t.latent_label(j))
        .collect();

    let mut text = String::new();
    writeln!(
        text,
        "family size: {} (bound 2^{})",
        family.len(),
        t.num_latents()
    )
    .ok();
    for s in &members {
        writeln!(text, "  {}", t.format_set(*s)).ok();
    }
    if missing.is_empty() {
        writeln!(text, "all singletons present: {}", verdict_word(true)).ok();
    } else {
        writeln!(text, "missing singletons: {}", missing.join(", ")).ok();
    }
    let mut derivations = serde_json::Map::new();
    for (j, chain) in verdict.per_latent.iter().enumerate() {
        let Some(chain) = chain else { continue };
        if trace {
            writeln!(text, "derivation of {{{}}}:", t.latent_label(j)).ok();
            for line in chain.render(&t) {
                writeln!(text, "  {line}").ok();
            }
        }
        derivations.insert(
            t.latent_label(j),
            json!({"steps": chain.steps, "rendered": chain.render(&t)}),
        );
    }
    let mut json = json!({
        "family_size": family.len(),
        "size_bound_log2": t.num_latents(),
        "members": members.iter().map(|s| set_labels(&t, *s)).collect::<Vec<_>>(),
        "identifiable": verdict.identifiable,
        "missing_singletons": missing,
    });
    if trace {
        json["derivations"] = Value::Object(derivations);
    }
    let code = if verdict.identifiable {
        EXIT_OK
    } else {
        EXIT_NOT_IDENTIFIABLE
    };
    Ok(Outcome::new(code, text, json))
}

fn cmd_enumerate(m: usize, n: usize) -> Result<Outcome> {
    let report = ident::equivalence_audit(m, n)?;
    let mut text = String::new();
    writeln!(
        text,
        "{:>3} {:>3} {:>10} {:>12} {:>10}",
        "m", "n", "matrices", "identifiable", "mismatches"
    )
    .ok();
    for s in &report.shapes {
        writeln!(
            text,
            "{:>3} {:>3} {:>10} {:>12} {:>10}",
            s.num_tasks, s.num_latents, s.matrices, s.identifiable, s.mismatches
        )
        .ok();
    }
    writeln!(
        text,
        "total {} matrices, {} agreements, {} mismatches",
        report.total_matrices,
        report.agreements,
        report.mismatches.len()
    )
    .ok();
    writeln!(
        text,
        "duplicate-column acceptances: {}; row-sum bound exceptions: {}",
        report.duplicate_column_exceptions(),
        report.row_sum_exceptions()
    )
    .ok();
    let mut capacity = Vec::new();
    for tasks in 1..=m {
        let measured = report.max_identifiable_latents(tasks);
        // Reaching the audited ceiling only gives a lower bound.
        let at_ceiling = measured == Some(n);
        let stated_bound = (1u128 << tasks) - 1;
        let shown = match measured {
            Some(v) if at_ceiling => format!("≥ {v} (audit ceiling)"),
            Some(v) => v.to_string(),
            None => "none".into(),
        };
        writeln!(
            text,
            "m = {tasks}: max identifiable n = {shown}; stated bound 2^m - 1 = {stated_bound}; distinct-column count 2^m = {}",
            1u128 << tasks
        )
        .ok();
        capacity.push(json!({
            "num_tasks": tasks,
            "max_identifiable_latents": measured,
            "lower_bound_only": at_ceiling,
            "stated_bound": stated_bound as u64,
            "distinct_column_count": (1u128 << tasks) as u64,
        }));
    }
    let json = json!({
        "max_tasks": report.max_tasks,
        "max_latents": report.max_latents,
        "total_matrices": report.total_matrices,
        "agreements": report.agreements,
        "mismatches": report.mismatches,
        "duplicate_column_exceptions": report.duplicate_column_exceptions(),
        "row_sum_exceptions": report.row_sum_exceptions(),
        "shapes": report.shapes,
        "capacity": capacity,
    });
    let code = if report.mismatches.is_empty() {
        EXIT_OK
    } else {
        EXIT_DISAGREEMENT
    };
    Ok(Outcome::new(code, text, json))
}

fn load_matrix(path: &Path) -> Result<SoftAdjacency> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(&read(path)?)?;
    SoftAdjacency::from_rows(&rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_loss(
    path: &Path,
    alpha: u32,
    lambda_uic: f64,
    lambda_dis: f64,
    rec: f64,
    pre: f64,
    grad: bool,
) -> Result<Outcome> {
    let config = LossConfig {
        alpha,
        lambda_uic,
        lambda_dis,
    };
    config.validate()?;
    let m = load_matrix(path)?;
    let uic = losses::uic_loss(&m, alpha)?;
    let dis = losses::dis_loss(&m, alpha)?;
    let total = losses::total_loss(rec, pre, &m, &config)?;
    let mut text = format!("uic_loss: {uic:e}\ndis_loss: {dis:e}\ntotal_loss: {total:e}\n");
    let mut json = json!({
        "alpha": alpha,
        "lambda_uic": lambda_uic,
        "lambda_dis": lambda_dis,
        "uic_loss": uic,
        "dis_loss": dis,
        "total_loss": total,
    });
    if grad {
        let to_rows = |g: losses::Gradient| -> Vec<Vec<f64>> {
            g.values.chunks(g.cols).map(<[f64]>::to_vec).collect()
        };
        let gu = to_rows(losses::uic_loss_grad(&m, alpha)?);
        let gd = to_rows(losses::dis_loss_grad(&m, alpha)?);
        writeln!(text, "uic_grad: {gu:?}\ndis_grad: {gd:?}").ok();
        json["uic_grad"] = json!(gu);
        json["dis_grad"] = json!(gd);
    }
    Ok(Outcome::new(EXIT_OK, text, json))
}

fn cmd_gradcheck(
    alpha: u32,
    trials: usize,
    rows: usize,
    cols: usize,
    tol: f64,
    seed: u64,
) -> Result<Outcome> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be positive (got {tol})"
        )));
    }
    let r = losses::gradient_check(rows, cols, alpha, trials, seed)?;
    let pass = r.max_rel_err() <= tol;
    let text = format!(
        "{rows}x{cols}, alpha {alpha}, {trials} trials: max rel err uic {:.3e}, dis {:.3e} ({} at tolerance {tol:e})\n",
        r.max_rel_err_uic,
        r.max_rel_err_dis,
        if pass { "pass" } else { "fail" }
    );
    let json = json!({"report": r, "tolerance": tol, "pass": pass});
    Ok(Outcome::new(
        if pass { EXIT_OK } else { EXIT_NUMERIC },
        text,
        json,
    ))
}

fn cmd_mask(
    path: &Path,
    scale: f64,
    temperature: f64,
    method: MaskMethod,
    seed: u64,
) -> Result<Outcome> {
    let v: Value = serde_json::from_str(&read(path)?)?;
    let tasks: Vec<Vec<f64>> = match &v {
        Value::Array(items) if items.iter().all(Value::is_number) => {
            vec![serde_json::from_value(v.clone())?]
        }
        _ => serde_json::from_value(v)?,
    };
    if tasks.is_empty() {
        return Err(Error::Shape("no task scores given".into()));
    }
    let mut soft_rows = Vec::with_capacity(tasks.len());
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut text = String::new();
    for (t, scores) in tasks.into_iter().enumerate() {
        let h = TaskScoreVector::new(scores)?;
        let soft = selection::soft_mask(&h, scale)?;
        let mut entry = json!({"soft": soft});
        writeln!(text, "task {}: soft {:?}", t + 1, soft).ok();
        if matches!(method, MaskMethod::Bernoulli | MaskMethod::Both) {
            let hard =
                selection::sample_hard_mask(&soft, derive_seed(seed, tags::MASK, 2 * t as u64))?;
            writeln!(text, "  bernoulli {hard:?}").ok();
            entry["bernoulli"] = json!(hard);
        }
        if matches!(method, MaskMethod::Gumbel | MaskMethod::Both) {
            let g = selection::gumbel_softmax_mask(
                &soft,
                temperature,
                derive_seed(seed, tags::MASK, 2 * t as u64 + 1),
            )?;
            writeln!(text, "  gumbel relaxed {:?} hard {:?}", g.relaxed, g.hard).ok();
            entry["gumbel"] = json!(g);
        }
        per_task.push(entry);
        soft_rows.push(soft);
    }
    let matrix = selection::build_task_latent_matrix(&soft_rows)?;
    let alpha = LossConfig::default().alpha;
    let uic = losses::uic_loss(&matrix, alpha)?;
    let dis = losses::dis_loss(&matrix, alpha)?;
    writeln!(
        text,
        "stacked matrix: uic_loss {uic:e}, dis_loss {dis:e} (alpha {alpha})"
    )
    .ok();
    let json = json!({
        "scale": scale,
        "temperature": temperature,
        "tasks": per_task,
        "matrix": matrix.to_rows(),
        "uic_loss": uic,
        "dis_loss": dis,
    });
    Ok(Outcome::new(EXIT_OK, text, json))
}

fn cmd_dgp_gen(path: &Path, samples: usize, out: Option<&Path>, seed: u64) -> Result<Outcome> {
    let spec = load_spec(path)?;
    let data = spec.generate(samples, seed)?;
    let Some(out) = out else {
        let mut buf = Vec::new();
        dgp::write_dataset(&data, &mut buf)?;
        return Ok(Outcome {
            code: EXIT_OK,
            text: String::new(),
            json: Value::Null,
            raw: Some(buf),
        });
    };
    dgp::export_dataset(&data, out)?;
    let variety = check_variety(&spec.prior);
    let text = format!(
        "wrote {} rows ({} environments x {samples}) to {}\nvariety check: {} (per-latent ranks {:?})\n",
        data.samples.len(),
        data.num_environments,
        out.display(),
        if variety.ok { "pass" } else { "fail" },
        variety.per_latent_rank
    );
    let json = json!({
        "rows": data.samples.len(),
        "environments": data.num_environments,
        "samples_per_env": samples,
        "columns": data.header(),
        "variety": variety,
    });
    Ok(Outcome::new(EXIT_OK, text, json))
}

fn cmd_recover(
    data: &Path,
    topology: &Path,
    config: Option<&Path>,
    init_from: Option<&Path>,
    seed: u64,
) -> Result<Outcome> {
    let t = load_topology(topology)?;
    let ds = dgp::import_dataset(data, &t)?;
    let doc: FitConfigDoc = match config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => FitConfigDoc::default(),
    };
    let cfg = doc.apply(FitConfig {
        seed,
        ..FitConfig::default()
    });
    let outcome = match init_from {
        Some(p) => {
            let spec = load_spec(p)?;
            if spec.topology != t {
                return Err(Error::Data(
                    "initializing spec has a different topology".into(),
                ));
            }
            recovery::fit_from(&ds, &t, &UnmixModel::from_spec(&spec)?, &cfg)?
        }
        None => recovery::fit(&ds, &t, &cfg)?,
    };
    let report = recovery::report_for(&ds, &t, &outcome)?;
    let text = format!(
        "mcc: {:.6}\nper-latent |corr|: {:?}\npermutation: {:?}\nobjective: {:e} (best restart {})\n",
        report.mcc, report.per_latent_abs_corr, report.permutation, report.objective, outcome.best_restart
    );
    let json = json!({"report": report, "config": cfg, "best_restart": outcome.best_restart});
    Ok(Outcome::new(EXIT_OK, text, json))
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    ident_path: &Path,
    collide_path: &Path,
    seeds: usize,
    samples: usize,
    restarts: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<Outcome> {
    let si = load_spec(ident_path)?;
    let sc = load_spec(collide_path)?;
    if seeds == 0 || samples == 0 {
        return Err(Error::Config("seeds and samples must be positive".into()));
    }
    let config = ExperimentConfig {
        seeds,
        samples_per_env: samples,
        fit: FitConfig {
            restarts,
            ..FitConfig::default()
        },
    };
    config.fit.validate()?;
    let report = recovery::identifiability_experiment(&si, &sc, &config, seed)?;
    let contrast = report.shows_contrast();
    let mut json = serde_json::to_value(&report)?;
    json["contrast"] = json!(contrast);
    json["thresholds"] = json!({
        "min_median_gap": recovery::MIN_MEDIAN_GAP,
        "min_dispersion": recovery::MIN_DISPERSION,
    });
    if let Some(p) = out {
        std::fs::write(p, render_json(&json)?)?;
    }
    let text = format!(
        "identifiable: median mcc {:.4}, dispersion {:.4}\ncolliding:    median mcc {:.4}, dispersion {:.4} (std {:.4})\nmedian gap {:.4}; contrast {}\n",
        report.identifiable.summary.median_mcc,
        report.identifiable.summary.dispersion,
        report.colliding.summary.median_mcc,
        report.colliding.summary.dispersion,
        report.colliding.summary.focus_std,
        report.median_gap,
        if contrast { "shown" } else { "not shown" }
    );
    Ok(Outcome::new(EXIT_OK, text, json))
}

fn render_json(v: &Value) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(v)?;
    buf.push(b'\n');
    Ok(buf)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a non-negative integer (got `{v}`)"
            ))
        })?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let seed = cli.seed;
    match &cli.command {
        Command::Check { topology } => cmd_check(topology),
        Command::Closure {
            topology,
            trace,
            order,
        } => cmd_closure(topology, *trace, *order, seed),
        Command::Enumerate { m, n } => cmd_enumerate(*m, *n),
        Command::Loss {
            matrix,
            alpha,
            lambda_uic,
            lambda_dis,
            rec,
            pre,
            grad,
        } => cmd_loss(matrix, *alpha, *lambda_uic, *lambda_dis, *rec, *pre, *grad),
        Command::Gradcheck {
            alpha,
            trials,
            rows,
            cols,
            tolerance,
        } => cmd_gradcheck(*alpha, *trials, *rows, *cols, *tolerance, seed),
        Command::Mask {
            scores,
            scale,
            temperature,
            method,
        } => cmd_mask(scores, *scale, *temperature, *method, seed),
        Command::DgpGen { spec, samples, out } => cmd_dgp_gen(spec, *samples, out.as_deref(), seed),
        Command::Recover {
            data,
            topology,
            config,
            init_from,
        } => cmd_recover(
            data,
            topology,
            config.as_deref(),
            init_from.as_deref(),
            seed,
        ),
        Command::Experiment {
            spec_ident,
            spec_collide,
            seeds,
            samples,
            restarts,
            out,
        } => cmd_experiment(
            spec_ident,
            spec_collide,
            *seeds,
            *samples,
            *restarts,
            out.as_deref(),
            seed,
        ),
    }
}

/// Parses `args` (including the program name), runs the command and writes
/// its output. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(&cli)));
    match result {
        Ok(outcome) => {
            let body = match (&outcome.raw, cli.format) {
                (Some(raw), _) => Ok(raw.clone()),
                (None, Format::Text) => Ok(outcome.text.into_bytes()),
                (None, Format::Json) => render_json(&outcome.json),
            };
            match body.and_then(|b| stdout.write_all(&b).map_err(Error::from)) {
                Ok(()) => outcome.code,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    EXIT_INPUT
                }
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
