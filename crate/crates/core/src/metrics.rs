//! Pose error metrics: MPJPE, Procrustes-aligned MPJPE, PCK and AUC.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

fn check_pair(pred: &[Matrix], gt: &[Matrix]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(shape_err((gt.len(), 0), (pred.len(), 0)));
    }
    for (p, g) in pred.iter().zip(gt) {
        if g.cols() != 3 {
            return Err(shape_err((g.rows(), 3), g.shape()));
        }
        p.ensure_shape(g.rows(), 3)?;
    }
    Ok(())
}

/// Euclidean error of every joint, samples concatenated.
pub fn joint_errors(pred: &[Matrix], gt: &[Matrix]) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let mut out = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        for j in 0..g.rows() {
            let d: f64 = (0..3).map(|c| (p[(j, c)] - g[(j, c)]) * (p[(j, c)] - g[(j, c)])).sum();
            out.push(libm::sqrt(d));
        }
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Mean per-joint position error over all `N·J` joints.
pub fn mpjpe(pred: &[Matrix], gt: &[Matrix]) -> Result<f64> {
    Ok(mean(&joint_errors(pred, gt)?))
}

/// `s·R·x + t` minimizing the summed squared distance to `gt`, applied to `pred`.
///
/// Rotation comes from the SVD of the cross-covariance with the reflection
/// sign corrected, so `det R = +1`.
pub fn procrustes_align(pred: &Matrix, gt: &Matrix) -> Result<Matrix> {
    gt.ensure_shape(gt.rows(), 3)?;
    pred.ensure_shape(gt.rows(), 3)?;
    let n = gt.rows();
    let rows = |m: &Matrix| -> Vec<Vector3<f64>> { (0..n).map(|j| Vector3::new(m[(j, 0)], m[(j, 1)], m[(j, 2)])).collect() };
    let (x, y) = (rows(pred), rows(gt));
    let mu_x = x.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_y = y.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(&y) {
        let (xa, yb) = (a - mu_x, b - mu_y);
        cov += yb * xa.transpose();
        var_x += xa.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(core::cmp::Ordering::Equal));
    let top = sv[order[0]];
    if var_x <= 0.0 || top <= 0.0 || sv[order[1]] <= 1e-12 * top {
        return Err(Error::DegenerateConfiguration(0));
    }
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let mut sign = Matrix3::identity();
    sign[(order[2], order[2])] = d;
    let rot = u * sign * v_t;
    let trace: f64 = (0..3).map(|i| sv[i] * sign[(i, i)]).sum();
    let scale = trace / var_x;
    let mut out = Matrix::zeros(n, 3);
    for (j, a) in x.iter().enumerate() {
        let p = rot * (a - mu_x) * scale + mu_y;
        for c in 0..3 {
            out[(j, c)] = p[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesSummary {
    pub pa_mpjpe: f64,
    pub evaluated: usize,
    /// Sample indices skipped for a rank-deficient cross-covariance.
    pub skipped: Vec<usize>,
}

/// Procrustes-aligned MPJPE averaged over samples; degenerate samples are
/// skipped and reported.
pub fn pa_mpjpe(pred: &[Matrix], gt: &[Matrix]) -> Result<ProcrustesSummary> {
    check_pair(pred, gt)?;
    let mut errors = Vec::new();
    let mut skipped = Vec::new();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        match procrustes_align(p, g) {
            Ok(aligned) => errors.extend(joint_errors(core::slice::from_ref(&aligned), core::slice::from_ref(g))?),
            Err(Error::DegenerateConfiguration(_)) => skipped.push(i),
            Err(e) => return Err(e),
        }
    }
    if errors.is_empty() && !pred.is_empty() {
        return Err(Error::DegenerateConfiguration(skipped[0]));
    }
    Ok(ProcrustesSummary { pa_mpjpe: mean(&errors), evaluated: pred.len() - skipped.len(), skipped })
}

pub const DEFAULT_PCK_THRESHOLD_MM: f64 = 150.0;

/// `5, 10, …, 150` mm.
pub fn default_auc_thresholds() -> Vec<f64> {
    (1..=30).map(|i| 5.0 * i as f64).collect()
}

fn pck_of(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    100.0 * errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

/// `(PCK %, AUC %)`: share of joints with error below `threshold_mm`, and the
/// mean PCK over `auc_thresholds`.
pub fn pck_auc(pred: &[Matrix], gt: &[Matrix], threshold_mm: f64, auc_thresholds: &[f64]) -> Result<(f64, f64)> {
    let errors = joint_errors(pred, gt)?;
    let pck = pck_of(&errors, threshold_mm);
    let auc = mean(&auc_thresholds.iter().map(|&t| pck_of(&errors, t)).collect::<Vec<_>>());
    Ok((pck, auc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pose(rows: &[[f64; 3]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn mpjpe_examples() {
        let gt = vec![pose(&[[0.0, 0.0, 0.0], [10.0, 5.0, -3.0]])];
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let mut shifted = gt[0].clone();
        for j in 0..2 {
            shifted[(j, 0)] += 10.0;
        }
        assert_eq!(mpjpe(&[shifted], &gt).unwrap(), 10.0);
        let pred = vec![pose(&[[3.0, 0.0, 0.0], [10.0, 5.0, 1.0]])];
        assert_eq!(mpjpe(&pred, &gt).unwrap(), 3.5);
        assert!(mpjpe(&pred, &[]).is_err());
    }

    #[test]
    fn pa_removes_similarity() {
        let gt = pose(&[[0.0, 0.0, 0.0], [100.0, 20.0, 5.0], [-30.0, 80.0, 40.0], [10.0, -50.0, 90.0]]);
        let (c, s) = (libm::cos(0.5235987755982988), libm::sin(0.5235987755982988));
        let mut pred = Matrix::zeros(4, 3);
        for j in 0..4 {
            let (x, y, z) = (gt[(j, 0)], gt[(j, 1)], gt[(j, 2)]);
            pred[(j, 0)] = 1.7 * (c * x - s * y) + 5.0;
            pred[(j, 1)] = 1.7 * (s * x + c * y) + 6.0;
            pred[(j, 2)] = 1.7 * z + 7.0;
        }
        let r = pa_mpjpe(&[pred], core::slice::from_ref(&gt)).unwrap();
        assert!(r.pa_mpjpe < 1e-8, "{}", r.pa_mpjpe);
        assert!(pa_mpjpe(core::slice::from_ref(&gt), core::slice::from_ref(&gt)).unwrap().pa_mpjpe < 1e-10);
    }

    #[test]
    fn degenerate_samples_are_skipped() {
        let line = pose(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let good = pose(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let r = pa_mpjpe(&[line.clone(), good.clone()], &[line.clone(), good]).unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert_eq!(r.evaluated, 1);
        assert!(matches!(pa_mpjpe(core::slice::from_ref(&line), core::slice::from_ref(&line)), Err(Error::DegenerateConfiguration(0))));
    }

    #[test]
    fn pck_examples() {
        let gt = vec![Matrix::zeros(4, 3)];
        assert_eq!(pck_auc(&gt, &gt, 150.0, &default_auc_thresholds()).unwrap(), (100.0, 100.0));
        let mut far = Matrix::zeros(4, 3);
        for j in 0..4 {
            far[(j, 1)] = 200.0;
        }
        assert_eq!(pck_auc(&[far], &gt, 150.0, &default_auc_thresholds()).unwrap().0, 0.0);
        let mut mid = Matrix::zeros(4, 3);
        for j in 0..4 {
            mid[(j, 2)] = 72.0;
        }
        let (pck, auc) = pck_auc(&[mid], &gt, 150.0, &default_auc_thresholds()).unwrap();
        assert_eq!(pck, 100.0);
        assert!((auc - 16.0 / 30.0 * 100.0).abs() < 1e-9);
    }
}
