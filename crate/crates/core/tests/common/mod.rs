//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use scm_ident::topology::ScmTopology;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).expect("fixture readable")
}

/// Three tasks, five latents; columns L1=(1,0,0), L2=(1,1,0), L3=(0,1,1),
/// L4=(0,0,1), L5=(0,1,0).
pub fn walkthrough() -> ScmTopology {
    ScmTopology::from_adjacency(&[[1, 1, 0, 0, 0], [0, 1, 1, 0, 1], [0, 0, 1, 1, 0]]).unwrap()
}

/// Two tasks, four latents; L3 and L4 both feed Y1 and Y2.
pub fn collide() -> ScmTopology {
    ScmTopology::from_adjacency(&[[1, 0, 1, 1], [0, 1, 1, 1]]).unwrap()
}

pub fn topology_from_rows(rows: &[Vec<u8>]) -> ScmTopology {
    ScmTopology::from_adjacency(rows).unwrap()
}

/// Random binary matrix with `m` in `1..=max_m`, `n` in `1..=max_n`.
pub fn arb_rows(max_m: usize, max_n: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max_m, 1..=max_n)
        .prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(0u8..=1, n), m))
}

/// Random binary matrix biased towards repeated columns.
pub fn arb_rows_colliding(max_m: usize, max_n: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    arb_rows(max_m, max_n).prop_flat_map(|rows| {
        let n = rows[0].len();
        (Just(rows), 0..n, 0..n).prop_map(|(mut rows, a, b)| {
            for r in rows.iter_mut() {
                r[b] = r[a];
            }
            rows
        })
    })
}

/// Pairwise distinctness of columns, computed directly from the rows.
pub fn columns_distinct(rows: &[Vec<u8>]) -> bool {
    let n = rows[0].len();
    let cols: BTreeSet<Vec<u8>> = (0..n)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect();
    cols.len() == n
}

/// Naive fixpoint of the subtraction closure over `BTreeSet<usize>` sets.
pub fn naive_closure(rows: &[Vec<u8>]) -> BTreeSet<BTreeSet<usize>> {
    let n = rows[0].len();
    let mut family: BTreeSet<BTreeSet<usize>> = BTreeSet::new();
    family.insert(BTreeSet::new());
    family.insert((0..n).collect());
    for r in rows {
        family.insert((0..n).filter(|&j| r[j] == 1).collect());
    }
    loop {
        let members: Vec<BTreeSet<usize>> = family.iter().cloned().collect();
        let before = family.len();
        for a in &members {
            for b in &members {
                family.insert(a.difference(b).copied().collect());
            }
        }
        if family.len() == before {
            return family;
        }
    }
}

/// The printed double-sum loss formula evaluated literally.
pub fn literal_line_loss(lines: &[Vec<f64>], alpha: i32) -> f64 {
    let len = lines[0].len();
    let mut total = 0.0;
    for a in lines {
        for b in lines {
            let mut s: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| x * y + (1.0 - x) * (1.0 - y))
                .sum();
            if std::ptr::eq(a, b) {
                s -= len as f64;
            }
            total += s.powi(alpha);
        }
    }
    total / (len as f64).powi(alpha)
}

pub fn columns_of(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows[0].len();
    (0..n)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect()
}

/// Central finite differences of `f` on a row-major vector.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, or the absolute gap when both vanish.
pub fn normwise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Pearson correlation from first principles.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
