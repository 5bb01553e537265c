use super::{CodecError, Result};
use crate::geometry::VoxelGrid;
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Scores are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]` before the log.
pub const FOCAL_EPS: f64 = 1e-7;

/// Focal loss of one voxel and its derivative with respect to the score.
fn voxel(score: f64, occupied: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = score.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let inside = (FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&score);
    // Written in terms of p_t; d p_t / d p is +1 for occupied voxels, -1
    // otherwise.
    let (pt, a, sign) = if occupied {
        (p, alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - alpha, -1.0)
    };
    let q = 1.0 - pt;
    let loss = -a * q.powf(gamma) * pt.ln();
    if !inside {
        return (loss, 0.0);
    }
    let focus = if gamma == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * pt.ln()
    };
    let dpt = a * (focus - q.powf(gamma) / pt);
    (loss, sign * dpt)
}

fn check(scores: &Tensor, target: &VoxelGrid) -> Result<()> {
    let r = target.resolution();
    if scores.shape() != [1, r, r, r] {
        return Err(CodecError::Shape(format!(
            "scores of shape {:?} do not match a grid of resolution {r}",
            scores.shape()
        )));
    }
    Ok(())
}

fn occupancy(target: &VoxelGrid) -> Vec<bool> {
    let mut occ = vec![false; target.resolution().pow(3)];
    for &c in target.occupied() {
        occ[target.dense_index(c)] = true;
    }
    occ
}

/// Alpha-balanced focal loss of occupancy `scores` against `target`,
/// summed over every cell of the grid (natural log).
pub fn focal_loss(scores: &Tensor, target: &VoxelGrid, alpha: f64, gamma: f64) -> Result<f64> {
    check(scores, target)?;
    let occ = occupancy(target);
    Ok(scores
        .data()
        .iter()
        .zip(&occ)
        .map(|(&s, &o)| voxel(s, o, alpha, gamma).0)
        .sum())
}

struct FocalOp {
    occupied: Vec<bool>,
    alpha: f64,
    gamma: f64,
}

impl Backward for FocalOp {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        _: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let g = grad[0];
        let out = inputs[0]
            .data()
            .iter()
            .zip(&self.occupied)
            .map(|(&s, &o)| g * voxel(s, o, self.alpha, self.gamma).1)
            .collect();
        vec![Some(out)]
    }
}

pub(crate) fn record_focal(
    tape: &mut Tape,
    scores: Var,
    target: &VoxelGrid,
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    let loss = focal_loss(tape.value(scores), target, alpha, gamma)?;
    let op = FocalOp {
        occupied: occupancy(target),
        alpha,
        gamma,
    };
    Ok(tape.custom(&[scores], Tensor::scalar(loss), Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_costs_nothing() {
        assert!(voxel(1.0, true, 0.9, 2.0).0 < 1e-12);
        assert!(voxel(0.0, false, 0.9, 2.0).0 < 1e-12);
    }

    #[test]
    fn scalar_values() {
        // p_t = 0.5, alpha = 0.9, gamma = 2: 0.9 * 0.25 * ln 2.
        let expect = 0.9 * 0.25 * std::f64::consts::LN_2;
        assert!((voxel(0.5, true, 0.9, 2.0).0 - expect).abs() < 1e-12);
        assert!((voxel(0.5, true, 0.9, 2.0).0 - 0.155958).abs() < 1e-5);
        // Empty voxel with p = 0.5 has the same p_t but weight 0.1.
        assert!((voxel(0.5, false, 0.9, 2.0).0 - expect / 9.0).abs() < 1e-12);
        let expect = 0.9 * 0.01 * -(0.9f64).ln();
        assert!((voxel(0.9, true, 0.9, 2.0).0 - expect).abs() < 1e-12);
        assert!((expect - 9.483e-4).abs() < 1e-6);
    }

    #[test]
    fn clamping_keeps_loss_finite() {
        for s in [-3.0, 0.0, 1.0, 7.0] {
            for o in [true, false] {
                let (l, d) = voxel(s, o, 0.9, 2.0);
                assert!(l.is_finite() && d == 0.0);
            }
        }
        assert!((voxel(0.0, true, 1.0, 0.0).0 + FOCAL_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_is_balanced_cross_entropy() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let (lo, _) = voxel(p, true, 0.7, 0.0);
            let (le, _) = voxel(p, false, 0.7, 0.0);
            assert!((lo - -0.7 * p.ln()).abs() < 1e-9);
            assert!((le - -0.3 * (1.0 - p).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for gamma in [0.0, 0.5, 2.0, 3.0] {
            for i in 1..20 {
                let p = i as f64 / 20.0;
                for o in [true, false] {
                    let h = 1e-6;
                    let numeric =
                        (voxel(p + h, o, 0.9, gamma).0 - voxel(p - h, o, 0.9, gamma).0) / (2.0 * h);
                    let analytic = voxel(p, o, 0.9, gamma).1;
                    assert!(
                        (numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0),
                        "{p} {o} {gamma}"
                    );
                }
            }
        }
    }

    #[test]
    fn sums_over_all_cells() {
        let grid = VoxelGrid::new(2, vec![[0, 0, 0]]).unwrap();
        let scores = Tensor::full(&[1, 2, 2, 2], 0.5);
        let one = 0.9 * 0.25 * std::f64::consts::LN_2;
        let total = focal_loss(&scores, &grid, 0.9, 2.0).unwrap();
        assert!((total - (one + 7.0 * one / 9.0)).abs() < 1e-12);
        assert!(focal_loss(&Tensor::zeros(&[1, 3, 3, 3]), &grid, 0.9, 2.0).is_err());
    }
}
