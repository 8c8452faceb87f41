//! The two identifiability deciders.
//!
//! * [`closure_generate`] / [`closure_identifiable`]: grow the family of latent
//!   sets seeded by `∅`, the universal set and every `Pa(Y_t)` under pairwise
//!   set subtraction, and ask whether every singleton is reached.
//! * [`uic_check`]: the matrix condition. Two columns of `A` collide iff their
//!   agreement count `Σ_k a_kj a_kj' + (1 − a_kj)(1 − a_kj')` equals `m`.
//!
//! [`equivalence_audit`] runs both over every binary matrix of small shapes.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::topology::{FactorSet, ScmTopology, MAX_INDEX};

/// Default cap on the number of members of a closure family.
///
/// The family is a Boolean algebra over the column classes, so it can hold up
/// to `2^n` sets; 4096 covers every topology with `n ≤ 12`.
pub const DEFAULT_MAX_FAMILY: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "task", rename_all = "snake_case")]
pub enum Seed {
    Empty,
    Universal,
    TaskParents(usize),
}

/// How a family member was first obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    Seed(Seed),
    /// `family[minuend] − family[subtrahend]`.
    Difference {
        minuend: usize,
        subtrahend: usize,
    },
}

/// Order in which the worklist releases pending members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorklistOrder {
    Fifo,
    Lifo,
    /// Pending members are shuffled before each pop.
    Shuffled(u64),
}

#[derive(Debug, Clone)]
pub struct ClosureFamily {
    sets: Vec<FactorSet>,
    trace: Vec<Derivation>,
    index: HashMap<FactorSet, usize>,
}

impl ClosureFamily {
    fn with_seeds(topology: &ScmTopology) -> Self {
        let mut family = ClosureFamily {
            sets: Vec::new(),
            trace: Vec::new(),
            index: HashMap::new(),
        };
        family.insert(FactorSet::EMPTY, Derivation::Seed(Seed::Empty));
        family.insert(topology.universe(), Derivation::Seed(Seed::Universal));
        for t in 0..topology.num_tasks() {
            let parents = topology.parent_latents(t).expect("task index in range");
            family.insert(parents, Derivation::Seed(Seed::TaskParents(t)));
        }
        family
    }

    /// Returns the index of the newly inserted member, or `None` if present.
    fn insert(&mut self, set: FactorSet, how: Derivation) -> Option<usize> {
        if self.index.contains_key(&set) {
            return None;
        }
        let idx = self.sets.len();
        self.sets.push(set);
        self.trace.push(how);
        self.index.insert(set, idx);
        Some(idx)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[FactorSet] {
        &self.sets
    }

    pub fn trace(&self) -> &[Derivation] {
        &self.trace
    }

    pub fn contains(&self, set: FactorSet) -> bool {
        self.index.contains_key(&set)
    }

    pub fn position(&self, set: FactorSet) -> Option<usize> {
        self.index.get(&set).copied()
    }

    /// Members sorted by bit pattern; independent of generation order.
    pub fn canonical_sets(&self) -> Vec<FactorSet> {
        let mut v = self.sets.clone();
        v.sort_unstable();
        v
    }

    /// Flattens the derivation of `family[idx]` into a chain whose steps only
    /// reference earlier steps.
    pub fn chain(&self, idx: usize) -> DerivationChain {
        let mut steps = Vec::new();
        let mut placed: HashMap<usize, usize> = HashMap::new();
        self.push_chain(idx, &mut steps, &mut placed);
        DerivationChain { steps }
    }

    fn push_chain(
        &self,
        idx: usize,
        steps: &mut Vec<ChainStep>,
        placed: &mut HashMap<usize, usize>,
    ) -> usize {
        if let Some(&at) = placed.get(&idx) {
            return at;
        }
        let rule = match self.trace[idx] {
            Derivation::Seed(seed) => ChainRule::Seed(seed),
            Derivation::Difference {
                minuend,
                subtrahend,
            } => {
                let a = self.push_chain(minuend, steps, placed);
                let b = self.push_chain(subtrahend, steps, placed);
                ChainRule::Difference {
                    minuend: a,
                    subtrahend: b,
                }
            }
        };
        steps.push(ChainStep {
            set: self.sets[idx],
            rule,
        });
        let at = steps.len() - 1;
        placed.insert(idx, at);
        at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRule {
    Seed(Seed),
    /// Indices refer to earlier steps of the same chain.
    Difference {
        minuend: usize,
        subtrahend: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainStep {
    #[serde(serialize_with = "ser_set")]
    pub set: FactorSet,
    pub rule: ChainRule,
}

fn ser_set<S: serde::Serializer>(set: &FactorSet, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(set.iter())
}

/// A replayable certificate that some set belongs to the closure family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DerivationChain {
    pub steps: Vec<ChainStep>,
}

impl DerivationChain {
    pub fn conclusion(&self) -> FactorSet {
        self.steps.last().map_or(FactorSet::EMPTY, |s| s.set)
    }

    /// Recomputes every step from the topology alone and returns the final
    /// set, or `None` if any step's recorded set disagrees with its rule.
    pub fn replay(&self, topology: &ScmTopology) -> Option<FactorSet> {
        let mut values: Vec<FactorSet> = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let v = match step.rule {
                ChainRule::Seed(Seed::Empty) => FactorSet::EMPTY,
                ChainRule::Seed(Seed::Universal) => topology.universe(),
                ChainRule::Seed(Seed::TaskParents(t)) => topology.parent_latents(t).ok()?,
                ChainRule::Difference {
                    minuend,
                    subtrahend,
                } => {
                    if minuend >= values.len() || subtrahend >= values.len() {
                        return None;
                    }
                    values[minuend].difference(values[subtrahend])
                }
            };
            if v != step.set {
                return None;
            }
            values.push(v);
        }
        values.last().copied()
    }

    pub fn render(&self, topology: &ScmTopology) -> Vec<String> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, step)| {
                let what = match step.rule {
                    ChainRule::Seed(Seed::Empty) => "seed ∅".to_string(),
                    ChainRule::Seed(Seed::Universal) => "seed Pa(X)".to_string(),
                    ChainRule::Seed(Seed::TaskParents(t)) => {
                        format!("seed Pa({})", topology.task_label(t))
                    }
                    ChainRule::Difference {
                        minuend,
                        subtrahend,
                    } => {
                        format!("[{minuend}] − [{subtrahend}]")
                    }
                };
                format!("[{i}] {} = {}", what, topology.format_set(step.set))
            })
            .collect()
    }
}

/// Least family containing the seeds and closed under pairwise subtraction.
pub fn closure_generate(topology: &ScmTopology) -> Result<ClosureFamily> {
    closure_generate_with(topology, WorklistOrder::Fifo, DEFAULT_MAX_FAMILY)
}

pub fn closure_generate_with(
    topology: &ScmTopology,
    order: WorklistOrder,
    max_members: usize,
) -> Result<ClosureFamily> {
    if topology.num_latents() > MAX_INDEX {
        return Err(Error::Capacity(format!(
            "closure supports at most {MAX_INDEX} latents"
        )));
    }
    let mut family = ClosureFamily::with_seeds(topology);
    let mut pending: VecDeque<usize> = (0..family.len()).collect();
    let mut processed: Vec<usize> = Vec::new();
    let mut rng = match order {
        WorklistOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    while let Some(current) = pop(&mut pending, order, rng.as_mut()) {
        processed.push(current);
        for &other in &processed {
            let (a, b) = (family.sets[current], family.sets[other]);
            for (minuend, subtrahend, set) in [
                (current, other, a.difference(b)),
                (other, current, b.difference(a)),
            ] {
                if let Some(idx) = family.insert(
                    set,
                    Derivation::Difference {
                        minuend,
                        subtrahend,
                    },
                ) {
                    if family.len() > max_members {
                        return Err(Error::Capacity(format!(
                            "closure family exceeds {max_members} members"
                        )));
                    }
                    pending.push_back(idx);
                }
            }
        }
    }
    Ok(family)
}

fn pop(
    pending: &mut VecDeque<usize>,
    order: WorklistOrder,
    rng: Option<&mut ChaCha8Rng>,
) -> Option<usize> {
    match order {
        WorklistOrder::Fifo => pending.pop_front(),
        WorklistOrder::Lifo => pending.pop_back(),
        WorklistOrder::Shuffled(_) => {
            if let Some(rng) = rng {
                pending.make_contiguous().shuffle(rng);
            }
            pending.pop_front()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentVerdict {
    pub identifiable: bool,
    /// For each latent, a chain ending in its singleton when one exists.
    pub per_latent: Vec<Option<DerivationChain>>,
    pub violating_pairs: Vec<(usize, usize)>,
}

/// Identifiability by closure: every singleton must be a family member.
///
/// `violating_pairs` lists latent pairs that no family member separates,
/// which is computed from the family alone.
pub fn closure_identifiable(topology: &ScmTopology) -> Result<IdentVerdict> {
    let family = closure_generate(topology)?;
    Ok(verdict_from_family(topology, &family))
}

pub fn verdict_from_family(topology: &ScmTopology, family: &ClosureFamily) -> IdentVerdict {
    let n = topology.num_latents();
    let per_latent: Vec<Option<DerivationChain>> = (0..n)
        .map(|j| {
            family
                .position(FactorSet::singleton(j))
                .map(|idx| family.chain(idx))
        })
        .collect();
    let mut violating_pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let separated = family.sets().iter().any(|s| s.contains(a) != s.contains(b));
            if !separated {
                violating_pairs.push((a, b));
            }
        }
    }
    IdentVerdict {
        identifiable: per_latent.iter().all(Option::is_some),
        per_latent,
        violating_pairs,
    }
}

/// Agreement count between columns `a` and `b`, in exact integer arithmetic.
pub fn agreement_count(topology: &ScmTopology, a: usize, b: usize) -> usize {
    topology
        .adjacency()
        .iter()
        .map(|row| {
            let (x, y) = (usize::from(row[a]), usize::from(row[b]));
            x * y + (1 - x) * (1 - y)
        })
        .sum()
}

/// Pairs where the indicator of the normalized agreement matrix fires.
pub fn uic_violations(topology: &ScmTopology) -> Vec<(usize, usize)> {
    let (m, n) = (topology.num_tasks(), topology.num_latents());
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if agreement_count(topology, a, b) == m {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

pub fn uic_check(topology: &ScmTopology) -> bool {
    uic_violations(topology).is_empty()
}

/// Outcome of both deciders on one enumerated matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatrixOutcome {
    pub num_tasks: usize,
    pub num_latents: usize,
    /// Row-major: bit `i * n + j` is entry `(i, j)`.
    pub bits: u64,
    pub closure: bool,
    pub uic: bool,
    pub has_duplicate_column: bool,
    pub max_row_sum: usize,
}

impl MatrixOutcome {
    pub fn topology(&self) -> ScmTopology {
        matrix_from_bits(self.num_tasks, self.num_latents, self.bits)
    }
}

pub fn matrix_from_bits(m: usize, n: usize, bits: u64) -> ScmTopology {
    let rows: Vec<Vec<u8>> = (0..m)
        .map(|i| (0..n).map(|j| ((bits >> (i * n + j)) & 1) as u8).collect())
        .collect();
    ScmTopology::from_adjacency(&rows).expect("enumerated matrix is well formed")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeSummary {
    pub num_tasks: usize,
    pub num_latents: usize,
    pub matrices: u64,
    pub identifiable: u64,
    pub mismatches: u64,
    /// Matrices with a duplicated column that either decider accepted.
    pub duplicate_column_exceptions: u64,
    /// Accepted matrices with a row sum above `2^(m−1)`.
    pub row_sum_exceptions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub max_tasks: usize,
    pub max_latents: usize,
    pub total_matrices: u64,
    pub agreements: u64,
    pub mismatches: Vec<MatrixOutcome>,
    pub shapes: Vec<ShapeSummary>,
}

impl AuditReport {
    /// Largest `n` in the audited range with at least one identifiable
    /// topology for `m` tasks.
    pub fn max_identifiable_latents(&self, m: usize) -> Option<usize> {
        self.shapes
            .iter()
            .filter(|s| s.num_tasks == m && s.identifiable > 0)
            .map(|s| s.num_latents)
            .max()
    }

    pub fn duplicate_column_exceptions(&self) -> u64 {
        self.shapes
            .iter()
            .map(|s| s.duplicate_column_exceptions)
            .sum()
    }

    pub fn row_sum_exceptions(&self) -> u64 {
        self.shapes.iter().map(|s| s.row_sum_exceptions).sum()
    }
}

/// Largest `m · n` accepted by [`equivalence_audit`].
pub const MAX_AUDIT_CELLS: usize = 20;

pub fn evaluate_matrix(m: usize, n: usize, bits: u64) -> Result<MatrixOutcome> {
    let topology = matrix_from_bits(m, n, bits);
    let closure = closure_identifiable(&topology)?.identifiable;
    let uic = uic_check(&topology);
    let max_row_sum = topology
        .adjacency()
        .iter()
        .map(|r| r.iter().map(|&a| usize::from(a)).sum())
        .max()
        .unwrap_or(0);
    Ok(MatrixOutcome {
        num_tasks: m,
        num_latents: n,
        bits,
        closure,
        uic,
        has_duplicate_column: !topology.collision_pairs().is_empty(),
        max_row_sum,
    })
}

/// Every binary `A` of every shape `m ≤ max_m`, `n ≤ max_n`, through both
/// deciders. Results are reduced in enumeration order.
pub fn equivalence_audit(max_m: usize, max_n: usize) -> Result<AuditReport> {
    if max_m == 0 || max_n == 0 {
        return Err(Error::Capacity("max_m and max_n must be positive".into()));
    }
    if max_m * max_n > MAX_AUDIT_CELLS {
        return Err(Error::Capacity(format!(
            "exhaustive audit needs max_m · max_n ≤ {MAX_AUDIT_CELLS} (got {})",
            max_m * max_n
        )));
    }
    let mut report = AuditReport {
        max_tasks: max_m,
        max_latents: max_n,
        total_matrices: 0,
        agreements: 0,
        mismatches: Vec::new(),
        shapes: Vec::new(),
    };
    for m in 1..=max_m {
        for n in 1..=max_n {
            let count = 1u64 << (m * n);
            let outcomes: Vec<MatrixOutcome> = (0..count)
                .into_par_iter()
                .map(|bits| evaluate_matrix(m, n, bits))
                .collect::<Result<_>>()?;
            let bound = 1usize << (m - 1);
            let mut shape = ShapeSummary {
                num_tasks: m,
                num_latents: n,
                matrices: count,
                identifiable: 0,
                mismatches: 0,
                duplicate_column_exceptions: 0,
                row_sum_exceptions: 0,
            };
            for o in outcomes {
                report.total_matrices += 1;
                if o.closure == o.uic {
                    report.agreements += 1;
                } else {
                    shape.mismatches += 1;
                    report.mismatches.push(o);
                }
                if o.closure && o.uic {
                    shape.identifiable += 1;
                }
                if o.has_duplicate_column && (o.closure || o.uic) {
                    shape.duplicate_column_exceptions += 1;
                }
                if (o.closure || o.uic) && o.max_row_sum > bound {
                    shape.row_sum_exceptions += 1;
                }
            }
            report.shapes.push(shape);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MinTasks {
    pub num_tasks: usize,
    pub witness: ScmTopology,
}

/// Smallest task count admitting `n_latents` pairwise-distinct columns,
/// with a witness topology.
pub fn min_tasks_for(n_latents: usize, allow_zero_column: bool) -> Result<MinTasks> {
    if n_latents == 0 || n_latents > 16 {
        return Err(Error::Capacity(format!(
            "min_tasks_for supports 1..=16 latents (got {n_latents})"
        )));
    }
    let needed = n_latents as u64 + u64::from(!allow_zero_column);
    let mut m = 1;
    while (1u64 << m) < needed {
        m += 1;
    }
    let first = u64::from(!allow_zero_column);
    let columns: Vec<u64> = (first..first + n_latents as u64).collect();
    let witness = ScmTopology::from_columns(m, &columns)?;
    debug_assert!(uic_check(&witness));
    Ok(MinTasks {
        num_tasks: m,
        witness,
    })
}
