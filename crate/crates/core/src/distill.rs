//! Self-distillation: a shared BEV encoder and the teacher-normalized loss.
//!
//! Student and teacher grids are stacked along a batch axis and pass
//! through the same encoder, so the encoder doubles as the adaptation
//! module without extra parameters. The loss compares encoded grids cell by
//! cell, normalizing by the teacher's magnitude:
//!
//! ```text
//! L = mean_{ij ∈ I} ‖(T_ij − S_ij) / ‖T_ij‖₂‖₂,   I = {ij : ‖T_ij‖₂ ≥ ε}
//! ```
//!
//! Cells where the teacher is (near) zero are left out and the mean runs over
//! the included cells only.

use ndarray::{s, Array3, Array4, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::view::BevFeatureGrid;

pub const DEFAULT_EPS: f64 = 1e-6;

/// A deterministic map on BEV grids with parameters shared across the batch.
///
/// `encode_batch` receives grids stacked as `(batch, h, w, c)`; every
/// implementation must treat samples independently.
pub trait BevEncoder: Send + Sync {
    fn encode_batch(&self, batch: &Array4<f64>) -> Array4<f64>;

    fn encode(&self, grid: &BevFeatureGrid) -> BevFeatureGrid {
        let batch = grid.values.clone().insert_axis(Axis(0));
        let out = self.encode_batch(&batch);
        BevFeatureGrid {
            values: out.index_axis_move(Axis(0), 0),
            cfg: grid.cfg,
        }
    }
}

/// Passes grids through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEncoder;

impl BevEncoder for IdentityEncoder {
    fn encode_batch(&self, batch: &Array4<f64>) -> Array4<f64> {
        batch.clone()
    }
}

/// 3×3 mean filter per channel with zero padding.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoxBlurEncoder;

impl BevEncoder for BoxBlurEncoder {
    fn encode_batch(&self, batch: &Array4<f64>) -> Array4<f64> {
        let (n, h, w, c) = batch.dim();
        let mut out = Array4::zeros((n, h, w, c));
        for b in 0..n {
            for i in 0..h {
                let (i0, i1) = (i.saturating_sub(1), (i + 1).min(h - 1));
                for j in 0..w {
                    let (j0, j1) = (j.saturating_sub(1), (j + 1).min(w - 1));
                    for k in 0..c {
                        let acc: f64 = batch.slice(s![b, i0..=i1, j0..=j1, k]).sum();
                        out[[b, i, j, k]] = acc / 9.0;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Identity,
    BoxBlur,
}

impl EncoderKind {
    pub fn build(self) -> Box<dyn BevEncoder> {
        match self {
            EncoderKind::Identity => Box::new(IdentityEncoder),
            EncoderKind::BoxBlur => Box::new(BoxBlurEncoder),
        }
    }
}

fn check_same_shape(context: &'static str, a: &BevFeatureGrid, b: &BevFeatureGrid) -> Result<()> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::shape(context, a.values.shape(), b.values.shape()));
    }
    Ok(())
}

/// Encodes student and teacher as one batch of two.
pub fn encode_joint(
    encoder: &dyn BevEncoder,
    student: &BevFeatureGrid,
    teacher: &BevFeatureGrid,
) -> Result<(BevFeatureGrid, BevFeatureGrid)> {
    check_same_shape("encode_joint", student, teacher)?;
    let batch = ndarray::stack(Axis(0), &[student.values.view(), teacher.values.view()])
        .expect("equal shapes stack");
    let out = encoder.encode_batch(&batch);
    let mut it = out.outer_iter();
    let s = it.next().expect("two samples").to_owned();
    let t = it.next().expect("two samples").to_owned();
    Ok((
        BevFeatureGrid {
            values: s,
            cfg: student.cfg,
        },
        BevFeatureGrid {
            values: t,
            cfg: teacher.cfg,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillLoss {
    pub loss: f64,
    pub included_cells: usize,
}

fn l2(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(t: ArrayView1<f64>, s: ArrayView1<f64>) -> f64 {
    t.iter()
        .zip(s.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Teacher-normalized per-cell L2 distance, averaged over cells whose
/// teacher norm is at least `eps`. Zero when no cell qualifies.
pub fn distillation_loss(
    teacher_enc: &BevFeatureGrid,
    student_enc: &BevFeatureGrid,
    eps: f64,
) -> Result<DistillLoss> {
    check_same_shape("distillation_loss", teacher_enc, student_enc)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be > 0, got {eps}")));
    }
    let mut total = 0.0;
    let mut included = 0usize;
    for (t, s) in teacher_enc
        .values
        .lanes(Axis(2))
        .into_iter()
        .zip(student_enc.values.lanes(Axis(2)))
    {
        let tn = l2(t);
        if tn < eps {
            continue;
        }
        included += 1;
        total += diff_norm(t, s) / tn;
    }
    let loss = if included == 0 {
        0.0
    } else {
        total / included as f64
    };
    Ok(DistillLoss {
        loss,
        included_cells: included,
    })
}

/// Analytic gradient of [`distillation_loss`] with respect to the student.
///
/// `∂L/∂S_ij = −(T_ij − S_ij) / (N·‖T_ij‖·‖T_ij − S_ij‖)` on included cells;
/// zero on excluded cells and at cells where student equals teacher (the
/// loss is not differentiable there, zero is a valid subgradient).
pub fn distillation_gradient(
    teacher_enc: &BevFeatureGrid,
    student_enc: &BevFeatureGrid,
    eps: f64,
) -> Result<Array3<f64>> {
    let DistillLoss { included_cells, .. } = distillation_loss(teacher_enc, student_enc, eps)?;
    let mut grad = Array3::zeros(student_enc.values.raw_dim());
    if included_cells == 0 {
        return Ok(grad);
    }
    let n = included_cells as f64;
    for ((t, s), mut g) in teacher_enc
        .values
        .lanes(Axis(2))
        .into_iter()
        .zip(student_enc.values.lanes(Axis(2)))
        .zip(grad.lanes_mut(Axis(2)))
    {
        let tn = l2(t);
        if tn < eps {
            continue;
        }
        let dn = diff_norm(t, s);
        if dn == 0.0 {
            continue;
        }
        for ((gk, tk), sk) in g.iter_mut().zip(t.iter()).zip(s.iter()) {
            *gk = -(tk - sk) / (n * tn * dn);
        }
    }
    Ok(grad)
}

/// Outcome of comparing the analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked_cells: usize,
    /// Included cells skipped because student equals teacher there.
    pub skipped_cells: usize,
}

/// Denominator floor of the relative error.
const GRAD_REL_FLOOR: f64 = 1e-8;

/// Central-difference check of [`distillation_gradient`] with step `h`.
pub fn loss_gradient_check(
    teacher_enc: &BevFeatureGrid,
    student_enc: &BevFeatureGrid,
    eps: f64,
    h: f64,
) -> Result<GradCheck> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", format!("must be > 0, got {h}")));
    }
    let grad = distillation_gradient(teacher_enc, student_enc, eps)?;
    let (gh, gw, c) = student_enc.values.dim();
    let mut probe = student_enc.clone();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..gh {
        for j in 0..gw {
            let t = teacher_enc.values.slice(s![i, j, ..]);
            if l2(t) < eps {
                continue;
            }
            if diff_norm(t, student_enc.values.slice(s![i, j, ..])) == 0.0 {
                skipped += 1;
                continue;
            }
            checked += 1;
            for k in 0..c {
                let x0 = student_enc.values[[i, j, k]];
                probe.values[[i, j, k]] = x0 + h;
                let up = distillation_loss(teacher_enc, &probe, eps)?.loss;
                probe.values[[i, j, k]] = x0 - h;
                let down = distillation_loss(teacher_enc, &probe, eps)?.loss;
                probe.values[[i, j, k]] = x0;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grad[[i, j, k]];
                let denom = analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
                max_rel = max_rel.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        checked_cells: checked,
        skipped_cells: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::BevGridConfig;

    fn cfg(n: usize) -> BevGridConfig {
        BevGridConfig {
            grid_h: n,
            grid_w: n,
            ..Default::default()
        }
    }

    fn grid(n: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> BevFeatureGrid {
        BevFeatureGrid::new(Array3::from_shape_fn((n, n, c), |(i, j, k)| f(i, j, k)), cfg(n))
            .unwrap()
    }

    #[test]
    fn equal_grids_zero_loss() {
        let t = grid(4, 3, |i, j, k| (i + j * k) as f64 + 0.5);
        let l = distillation_loss(&t, &t, 1e-6).unwrap();
        assert_eq!(l.loss, 0.0);
        assert_eq!(l.included_cells, 16);
    }

    #[test]
    fn single_cell_three_four() {
        let mut t = grid(2, 2, |_, _, _| 0.0);
        t.values[[1, 0, 0]] = 3.0;
        t.values[[1, 0, 1]] = 4.0;
        let s = grid(2, 2, |_, _, _| 0.0);
        let l = distillation_loss(&t, &s, 1e-6).unwrap();
        assert_eq!(l.included_cells, 1);
        assert!((l.loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_teacher_gives_zero() {
        let t = grid(3, 2, |_, _, _| 0.0);
        let s = grid(3, 2, |i, _, _| i as f64);
        let l = distillation_loss(&t, &s, 1e-6).unwrap();
        assert_eq!((l.loss, l.included_cells), (0.0, 0));
    }

    #[test]
    fn shape_and_eps_checked() {
        let a = grid(3, 2, |_, _, _| 1.0);
        let b = grid(3, 3, |_, _, _| 1.0);
        assert!(distillation_loss(&a, &b, 1e-6).is_err());
        assert!(distillation_loss(&a, &a, 0.0).is_err());
        assert!(encode_joint(&IdentityEncoder, &a, &b).is_err());
    }

    #[test]
    fn identity_encoder_bitwise() {
        let s = grid(4, 2, |i, j, k| (i as f64).sin() + (j * k) as f64);
        let t = grid(4, 2, |i, j, _| (i * j) as f64 * 0.1);
        let (es, et) = encode_joint(&IdentityEncoder, &s, &t).unwrap();
        assert_eq!(es, s);
        assert_eq!(et, t);
    }

    #[test]
    fn box_blur_impulse_response() {
        let mut g = grid(5, 1, |_, _, _| 0.0);
        g.values[[2, 2, 0]] = 9.0;
        let out = BoxBlurEncoder.encode(&g);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if (1..=3).contains(&i) && (1..=3).contains(&j) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(out.values[[i, j, 0]], expect);
            }
        }
    }

    #[test]
    fn gradient_zero_at_equality() {
        let t = grid(3, 2, |i, j, k| 1.0 + (i + j + k) as f64);
        let chk = loss_gradient_check(&t, &t, 1e-6, 1e-5).unwrap();
        assert_eq!(chk.checked_cells, 0);
        assert_eq!(chk.skipped_cells, 9);
        assert!(distillation_gradient(&t, &t, 1e-6)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_differences() {
        let t = grid(4, 3, |i, j, k| 1.0 + ((i * 5 + j * 3 + k) as f64).sin());
        let s = grid(4, 3, |i, j, k| ((i * 2 + j + k * 7) as f64).cos());
        let chk = loss_gradient_check(&t, &s, 1e-6, 1e-5).unwrap();
        assert!(chk.max_rel_error < 1e-5, "{chk:?}");
        assert_eq!(chk.checked_cells, 16);
    }
}
