//! Task-guided causal factor selection: soft masks from task scores, hard
//! masks by Bernoulli sampling or two-class Gumbel-softmax, mask application,
//! and stacking per-task masks into the task–latent matrix.
//!
//! All sampling uses [`ChaCha8Rng`] seeded through `SeedableRng::seed_from_u64`,
//! so a seed reproduces the same draws on every platform.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::SoftAdjacency;

/// Open interval of admissible scaling coefficients.
pub const SCALE_RANGE: (f64, f64) = (50.0, 200.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaskConfig {
    pub scale: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            scale: 100.0,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        check_temperature(self.temperature)
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > SCALE_RANGE.0 && scale < SCALE_RANGE.1) {
        return Err(Error::Domain(format!(
            "scale must lie in ({}, {}) (got {scale})",
            SCALE_RANGE.0, SCALE_RANGE.1
        )));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature must be positive (got {t})"
        )));
    }
    Ok(())
}

/// Pre-activation task scores, one per latent.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScoreVector(Vec<f64>);

impl TaskScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("task score {v} is not finite")));
        }
        Ok(TaskScoreVector(scores))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest double below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `sigmoid(scale · h)` elementwise, kept strictly inside `(0, 1)`.
pub fn soft_mask(h: &TaskScoreVector, scale: f64) -> Result<Vec<f64>> {
    check_scale(scale)?;
    Ok(h.as_slice()
        .iter()
        .map(|&v| sigmoid(scale * v).clamp(f64::MIN_POSITIVE, BELOW_ONE))
        .collect())
}

fn check_probabilities(soft: &[f64]) -> Result<()> {
    if let Some(p) = soft.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!(
            "selection probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Independent Bernoulli draws; entry `j` is 1 with probability `soft[j]`.
pub fn sample_hard_mask(soft: &[f64], seed: u64) -> Result<Vec<u8>> {
    sample_hard_mask_with(soft, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_hard_mask_with<R: Rng + ?Sized>(soft: &[f64], rng: &mut R) -> Result<Vec<u8>> {
    check_probabilities(soft)?;
    Ok(soft
        .iter()
        .map(|&p| {
            let u: f64 = rng.random();
            u8::from(u < p)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GumbelMask {
    /// Softmax weight of the "selected" class.
    pub relaxed: Vec<f64>,
    /// Argmax of the two classes.
    pub hard: Vec<u8>,
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// Two-class Gumbel-softmax per coordinate over {selected, not selected}
/// with class probabilities `(soft[j], 1 − soft[j])`.
pub fn gumbel_softmax_mask(soft: &[f64], temperature: f64, seed: u64) -> Result<GumbelMask> {
    gumbel_softmax_mask_with(soft, temperature, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gumbel_softmax_mask_with<R: Rng + ?Sized>(
    soft: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Result<GumbelMask> {
    check_probabilities(soft)?;
    check_temperature(temperature)?;
    let mut relaxed = Vec::with_capacity(soft.len());
    let mut hard = Vec::with_capacity(soft.len());
    for &p in soft {
        let g_on = gumbel(rng);
        let g_off = gumbel(rng);
        let on = p.ln() + g_on;
        let off = (1.0 - p).ln() + g_off;
        // Softmax over two logits is the sigmoid of their difference.
        let diff = on - off;
        relaxed.push(if diff.is_nan() {
            0.5
        } else {
            sigmoid(diff / temperature)
        });
        hard.push(u8::from(on > off));
    }
    Ok(GumbelMask { relaxed, hard })
}

/// Scales the `j`-th latent representation by `mask[j]`.
pub fn apply_mask(mask: &[f64], latent_reps: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if mask.len() != latent_reps.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} latent representations",
            mask.len(),
            latent_reps.len()
        )));
    }
    if let Some(first) = latent_reps.first() {
        if latent_reps.iter().any(|r| r.len() != first.len()) {
            return Err(Error::Shape(
                "latent representations differ in length".into(),
            ));
        }
    }
    Ok(mask
        .iter()
        .zip(latent_reps)
        .map(|(&w, rep)| rep.iter().map(|v| w * v).collect())
        .collect())
}

/// Stacks one soft mask per task into the `m × n` task–latent matrix.
pub fn build_task_latent_matrix(soft_masks: &[Vec<f64>]) -> Result<SoftAdjacency> {
    if soft_masks.is_empty() {
        return Err(Error::Shape("at least one task mask is required".into()));
    }
    SoftAdjacency::from_rows(soft_masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_mask_values() {
        let h = TaskScoreVector::new(vec![0.0, 0.1, -0.1, 50.0, -50.0]).unwrap();
        let s = soft_mask(&h, 100.0).unwrap();
        assert_eq!(s[0], 0.5);
        // Independent evaluation of 1 / (1 + e^{-10}).
        assert!((s[1] - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert!((s[1] + s[2] - 1.0).abs() < 1e-15);
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0), "{s:?}");
        assert_eq!(soft_mask(&h, 60.0).unwrap()[0], 0.5);
        assert!(matches!(soft_mask(&h, 50.0), Err(Error::Domain(_))));
        assert!(matches!(soft_mask(&h, 250.0), Err(Error::Domain(_))));
        assert!(TaskScoreVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn hard_mask_degenerate_and_deterministic() {
        assert_eq!(sample_hard_mask(&[1.0, 0.0], 3).unwrap(), vec![1, 0]);
        assert_eq!(
            sample_hard_mask(&[1.0 - 1e-12, 1e-12], 3).unwrap(),
            vec![1, 0]
        );
        let soft = [0.2, 0.5, 0.9, 0.4];
        assert_eq!(
            sample_hard_mask(&soft, 11).unwrap(),
            sample_hard_mask(&soft, 11).unwrap()
        );
        assert!(sample_hard_mask(&[1.5], 0).is_err());
    }

    #[test]
    fn gumbel_deterministic() {
        let soft = [0.2, 0.5, 0.9];
        let a = gumbel_softmax_mask(&soft, 0.5, 9).unwrap();
        let b = gumbel_softmax_mask(&soft, 0.5, 9).unwrap();
        assert_eq!(a, b);
        for (r, h) in a.relaxed.iter().zip(&a.hard) {
            assert!((0.0..=1.0).contains(r));
            assert_eq!(*h, u8::from(*r > 0.5));
        }
        assert!(gumbel_softmax_mask(&soft, 0.0, 9).is_err());
        let g = gumbel_softmax_mask(&[1.0, 0.0], 1.0, 4).unwrap();
        assert_eq!(g.hard, vec![1, 0]);
    }

    #[test]
    fn mask_application() {
        let reps = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(apply_mask(&[1.0, 1.0], &reps).unwrap(), reps);
        assert_eq!(
            apply_mask(&[0.0, 0.0], &reps).unwrap(),
            vec![vec![0.0, 0.0], vec![0.0, 0.0]]
        );
        assert_eq!(
            apply_mask(&[1.0, 0.0], &reps).unwrap(),
            vec![vec![1.0, 2.0], vec![0.0, 0.0]]
        );
        assert!(matches!(apply_mask(&[1.0], &reps), Err(Error::Shape(_))));
        assert!(matches!(
            apply_mask(&[1.0, 1.0], &[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn stacking() {
        let m = build_task_latent_matrix(&[vec![0.2, 0.8]]).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert_eq!(m.row(0), &[0.2, 0.8]);
        let masks = vec![vec![0.1, 0.7, 0.3], vec![0.9, 0.2, 0.6]];
        let m = build_task_latent_matrix(&masks).unwrap();
        assert_eq!(m.to_rows(), masks);
        assert!(matches!(
            build_task_latent_matrix(&[]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            build_task_latent_matrix(&[vec![0.1], vec![0.2, 0.3]]),
            Err(Error::Shape(_))
        ));
    }
}
