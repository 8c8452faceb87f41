//! Meta-SCM topologies: tasks, latent factors and the binary latent→target
//! adjacency, plus advisory structural diagnostics.
//!
//! Every latent is a parent of every source observable `X_t`, so only the
//! target side (`L_j → Y_t`) is stored. Indices are zero-based in the API and
//! rendered one-based (`L_1`, `Y_1`) in labels.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the fixed bitset backing [`FactorSet`].
pub const MAX_INDEX: usize = 64;

/// A subset of `{0, .., 63}` stored as a 64-bit mask.
///
/// Used both for sets of latent factors and for sets of tasks.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorSet(u64);

impl FactorSet {
    pub const EMPTY: FactorSet = FactorSet(0);

    pub const fn from_bits(bits: u64) -> Self {
        FactorSet(bits)
    }

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(
            n <= MAX_INDEX,
            "FactorSet holds at most {MAX_INDEX} indices"
        );
        if n == MAX_INDEX {
            FactorSet(u64::MAX)
        } else {
            FactorSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        assert!(i < MAX_INDEX, "index {i} out of FactorSet range");
        FactorSet(1u64 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        indices.into_iter().fold(FactorSet::EMPTY, |acc, i| {
            acc.union(FactorSet::singleton(i))
        })
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_INDEX && self.0 & (1u64 << i) != 0
    }

    pub fn insert(&mut self, i: usize) {
        *self = self.union(FactorSet::singleton(i));
    }

    pub const fn union(self, other: Self) -> Self {
        FactorSet(self.0 | other.0)
    }

    pub const fn intersection(self, other: Self) -> Self {
        FactorSet(self.0 & other.0)
    }

    /// `self − other`, i.e. `self ∩ complement(other)`.
    pub const fn difference(self, other: Self) -> Self {
        FactorSet(self.0 & !other.0)
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// The single member, if this set has exactly one.
    pub fn as_singleton(self) -> Option<usize> {
        (self.len() == 1).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.difference(other).is_empty()
    }

    /// Members in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(i)
            }
        })
    }
}

impl fmt::Debug for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for FactorSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        FactorSet::from_indices(iter)
    }
}

/// Topology document as read from JSON, before validation.
///
/// Entries are parsed as reals so that a non-binary entry is reported as a
/// value error rather than a parse error.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub num_tasks: usize,
    pub num_latents: usize,
    pub adjacency: Vec<Vec<f64>>,
    #[serde(default)]
    pub latent_names: Option<Vec<String>>,
    #[serde(default)]
    pub task_names: Option<Vec<String>>,
}

/// Checks every topology invariant on an unvalidated document.
pub fn validate(doc: &TopologyDoc) -> Result<()> {
    let (m, n) = (doc.num_tasks, doc.num_latents);
    if m == 0 || n == 0 {
        return Err(Error::Shape(format!(
            "num_tasks and num_latents must be positive (got m={m}, n={n})"
        )));
    }
    if m > MAX_INDEX || n > MAX_INDEX {
        return Err(Error::Capacity(format!(
            "at most {MAX_INDEX} tasks and {MAX_INDEX} latents are supported (got m={m}, n={n})"
        )));
    }
    if doc.adjacency.len() != m {
        return Err(Error::Shape(format!(
            "adjacency has {} rows, expected num_tasks={m}",
            doc.adjacency.len()
        )));
    }
    for (i, row) in doc.adjacency.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Shape(format!(
                "adjacency row {} has {} columns, expected num_latents={n}",
                i + 1,
                row.len()
            )));
        }
        if let Some((j, v)) = row.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::Value(format!(
                "adjacency entry ({}, {}) = {v} is not 0 or 1",
                i + 1,
                j + 1
            )));
        }
    }
    check_names("latent_names", doc.latent_names.as_deref(), n)?;
    check_names("task_names", doc.task_names.as_deref(), m)?;
    Ok(())
}

fn check_names(what: &str, names: Option<&[String]>, expected: usize) -> Result<()> {
    let Some(names) = names else { return Ok(()) };
    if names.len() != expected {
        return Err(Error::Name(format!(
            "{what} has {} entries, expected {expected}",
            names.len()
        )));
    }
    let mut seen = HashSet::new();
    for name in names {
        if name.is_empty() {
            return Err(Error::Name(format!("{what} contains an empty name")));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::Name(format!("{what} contains duplicate `{name}`")));
        }
    }
    Ok(())
}

/// A validated meta-SCM topology. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScmTopology {
    num_tasks: usize,
    num_latents: usize,
    adjacency: Vec<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latent_names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_names: Option<Vec<String>>,
}

impl TryFrom<TopologyDoc> for ScmTopology {
    type Error = Error;

    fn try_from(doc: TopologyDoc) -> Result<Self> {
        validate(&doc)?;
        let adjacency = doc
            .adjacency
            .iter()
            .map(|row| row.iter().map(|&v| u8::from(v == 1.0)).collect())
            .collect();
        Ok(ScmTopology {
            num_tasks: doc.num_tasks,
            num_latents: doc.num_latents,
            adjacency,
            latent_names: doc.latent_names,
            task_names: doc.task_names,
        })
    }
}

impl ScmTopology {
    /// Builds a topology from an `m × n` 0/1 matrix, inferring the shape.
    pub fn from_adjacency<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        ScmTopology::try_from(TopologyDoc {
            num_tasks: m,
            num_latents: n,
            adjacency: rows
                .iter()
                .map(|r| r.as_ref().iter().map(|&v| f64::from(v)).collect())
                .collect(),
            latent_names: None,
            task_names: None,
        })
    }

    /// Builds a topology from latent columns, each given as the bitmask of
    /// tasks it points to (bit `i` set iff the latent is a parent of `Y_i`).
    pub fn from_columns(num_tasks: usize, columns: &[u64]) -> Result<Self> {
        let rows: Vec<Vec<u8>> = (0..num_tasks)
            .map(|i| columns.iter().map(|c| ((c >> i) & 1) as u8).collect())
            .collect();
        ScmTopology::from_adjacency(&rows)
    }

    pub fn with_names(
        mut self,
        latent_names: Option<Vec<String>>,
        task_names: Option<Vec<String>>,
    ) -> Result<Self> {
        check_names("latent_names", latent_names.as_deref(), self.num_latents)?;
        check_names("task_names", task_names.as_deref(), self.num_tasks)?;
        self.latent_names = latent_names;
        self.task_names = task_names;
        Ok(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: TopologyDoc = serde_json::from_str(s)?;
        ScmTopology::try_from(doc)
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let doc: TopologyDoc = serde_json::from_value(v)?;
        ScmTopology::try_from(doc)
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_latents(&self) -> usize {
        self.num_latents
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    pub fn entry(&self, task: usize, latent: usize) -> bool {
        self.adjacency[task][latent] == 1
    }

    /// The set of all latents, i.e. `Pa(X_t)` for every task.
    pub fn universe(&self) -> FactorSet {
        FactorSet::full(self.num_latents)
    }

    pub fn latent_label(&self, j: usize) -> String {
        match &self.latent_names {
            Some(names) => names[j].clone(),
            None => format!("L_{}", j + 1),
        }
    }

    pub fn task_label(&self, i: usize) -> String {
        match &self.task_names {
            Some(names) => names[i].clone(),
            None => format!("Y_{}", i + 1),
        }
    }

    /// Renders a latent set as `{L_1, L_3}`.
    pub fn format_set(&self, set: FactorSet) -> String {
        let labels: Vec<String> = set.iter().map(|j| self.latent_label(j)).collect();
        format!("{{{}}}", labels.join(", "))
    }

    /// `Pa(Y_task)` restricted to latents.
    pub fn parent_latents(&self, task: usize) -> Result<FactorSet> {
        let row = self.adjacency.get(task).ok_or_else(|| {
            Error::Index(format!(
                "task {task} (zero-based) with {} tasks",
                self.num_tasks
            ))
        })?;
        Ok(row
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(j, _)| j)
            .collect())
    }

    /// Target-side child set of a latent, as a set of task indices.
    pub fn child_tasks(&self, latent: usize) -> Result<FactorSet> {
        if latent >= self.num_latents {
            return Err(Error::Index(format!(
                "latent {latent} (zero-based) with {} latents",
                self.num_latents
            )));
        }
        Ok((0..self.num_tasks)
            .filter(|&i| self.adjacency[i][latent] == 1)
            .collect())
    }

    /// Column `j` as a task bitmask. Infallible counterpart of `child_tasks`.
    pub fn column_bits(&self, latent: usize) -> u64 {
        (0..self.num_tasks).fold(0u64, |acc, i| {
            acc | (u64::from(self.adjacency[i][latent]) << i)
        })
    }

    /// All unordered latent pairs `(j, j')`, `j < j'`, with identical columns.
    pub fn collision_pairs(&self) -> Vec<(usize, usize)> {
        let cols: Vec<u64> = (0..self.num_latents).map(|j| self.column_bits(j)).collect();
        let mut pairs = Vec::new();
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                if cols[a] == cols[b] {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    pub fn capacity_diagnostic(&self) -> CapacityReport {
        let bound = capacity_bound(self.num_tasks);
        CapacityReport {
            num_latents: self.num_latents,
            num_tasks: self.num_tasks,
            nonempty_bound: bound,
            exceeds: (self.num_latents as u128) > bound,
            distinct_column_bound: bound + 1,
        }
    }

    pub fn parent_bound_diagnostic(&self) -> Vec<ParentBoundReport> {
        let bound = parent_bound(self.num_tasks);
        (0..self.num_tasks)
            .map(|i| {
                let parents = self.adjacency[i].iter().filter(|&&a| a == 1).count();
                ParentBoundReport {
                    task: i,
                    num_parents: parents,
                    bound,
                    violates: (parents as u128) > bound,
                }
            })
            .collect()
    }
}

/// `2^m − 1`, the count of non-empty child subsets.
fn capacity_bound(m: usize) -> u128 {
    (1u128 << m) - 1
}

/// `2^(m−1)`, the parent-set size limit for any single task.
fn parent_bound(m: usize) -> u128 {
    1u128 << (m - 1)
}

/// Latent count against the non-empty-child-set bound.
///
/// `distinct_column_bound` (`2^m`) is the count of distinct columns when one
/// latent may point to no target at all. Both are reported; neither rejects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CapacityReport {
    pub num_latents: usize,
    pub num_tasks: usize,
    pub nonempty_bound: u128,
    pub exceeds: bool,
    pub distinct_column_bound: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParentBoundReport {
    pub task: usize,
    pub num_parents: usize,
    pub bound: u128,
    pub violates: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(m: usize, n: usize, adjacency: Vec<Vec<f64>>) -> TopologyDoc {
        TopologyDoc {
            num_tasks: m,
            num_latents: n,
            adjacency,
            latent_names: None,
            task_names: None,
        }
    }

    #[test]
    fn validate_identity() {
        assert!(validate(&doc(2, 2, vec![vec![1.0, 0.0], vec![0.0, 1.0]])).is_ok());
    }

    #[test]
    fn validate_rejects_fractional_entry() {
        let err = validate(&doc(2, 2, vec![vec![0.5, 0.0], vec![0.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::Value(_)), "{err}");
    }

    #[test]
    fn validate_rejects_extra_column() {
        let err = validate(&doc(1, 2, vec![vec![1.0, 0.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        let err = validate(&doc(2, 2, vec![vec![1.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        let err = validate(&doc(0, 2, vec![])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn validate_rejects_bad_names() {
        let mut d = doc(1, 2, vec![vec![1.0, 0.0]]);
        d.latent_names = Some(vec!["a".into(), "a".into()]);
        assert!(matches!(validate(&d).unwrap_err(), Error::Name(_)));
        d.latent_names = Some(vec!["a".into()]);
        assert!(matches!(validate(&d).unwrap_err(), Error::Name(_)));
        d.latent_names = Some(vec!["a".into(), "b".into()]);
        d.task_names = Some(vec!["summarize".into()]);
        assert!(validate(&d).is_ok());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let s = r#"{"num_tasks":1,"num_latents":1,"adjacency":[[1]],"extra":3}"#;
        assert!(matches!(
            ScmTopology::from_json_str(s).unwrap_err(),
            Error::Json(_)
        ));
        let s = r#"{"num_tasks":1,"num_latents":1,"adjacency":[[1]]}"#;
        let t = ScmTopology::from_json_str(s).unwrap();
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"num_tasks":1,"num_latents":1,"adjacency":[[1]]}"#
        );
    }

    #[test]
    fn parents_and_children() {
        let t = ScmTopology::from_adjacency(&[[1, 1, 0], [0, 1, 1]]).unwrap();
        assert_eq!(
            t.parent_latents(0).unwrap(),
            FactorSet::from_indices([0, 1])
        );
        assert!(matches!(t.parent_latents(2), Err(Error::Index(_))));

        let t = ScmTopology::from_adjacency(&[[0, 0]]).unwrap();
        assert!(t.parent_latents(0).unwrap().is_empty());

        let t = ScmTopology::from_adjacency(&[[1, 0], [1, 0]]).unwrap();
        assert_eq!(t.child_tasks(0).unwrap(), FactorSet::from_indices([0, 1]));
        assert!(t.child_tasks(1).unwrap().is_empty());
        assert!(matches!(t.child_tasks(2), Err(Error::Index(_))));
    }

    #[test]
    fn collisions() {
        let t = ScmTopology::from_adjacency(&[[1, 0], [0, 1]]).unwrap();
        assert!(t.collision_pairs().is_empty());
        let t = ScmTopology::from_columns(2, &[0b01, 0b01, 0b10]).unwrap();
        assert_eq!(t.collision_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn capacity_bounds() {
        let c = ScmTopology::from_columns(2, &[1, 2, 3])
            .unwrap()
            .capacity_diagnostic();
        assert_eq!((c.nonempty_bound, c.exceeds), (3, false));
        let c = ScmTopology::from_columns(2, &[0, 1, 2, 3, 3])
            .unwrap()
            .capacity_diagnostic();
        assert_eq!((c.nonempty_bound, c.exceeds), (3, true));
        let c = ScmTopology::from_columns(3, &[1, 2, 3, 4, 5, 6, 7])
            .unwrap()
            .capacity_diagnostic();
        assert_eq!((c.nonempty_bound, c.exceeds), (7, false));
    }

    #[test]
    fn parent_bounds() {
        let t = ScmTopology::from_adjacency(&[[1, 1, 1], [0, 1, 0]]).unwrap();
        let r = t.parent_bound_diagnostic();
        assert_eq!((r[0].num_parents, r[0].bound, r[0].violates), (3, 2, true));
        assert!(!r[1].violates);
        let t = ScmTopology::from_adjacency(&[[1, 1, 1, 1], [0, 1, 0, 1], [0, 0, 1, 1]]).unwrap();
        let r = t.parent_bound_diagnostic();
        assert_eq!((r[0].num_parents, r[0].bound, r[0].violates), (4, 4, false));
    }

    #[test]
    fn factor_set_algebra() {
        let a = FactorSet::from_indices([0, 2, 5]);
        let b = FactorSet::from_indices([2, 3]);
        assert_eq!(a.difference(b), FactorSet::from_indices([0, 5]));
        assert_eq!(a.intersection(b).as_singleton(), Some(2));
        assert_eq!(a.union(b).len(), 4);
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![0, 2, 5]);
        assert_eq!(FactorSet::full(64).len(), 64);
        assert!(FactorSet::EMPTY.is_subset(a));
    }
}
