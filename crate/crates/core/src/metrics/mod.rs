//! Evaluation suite: realism (FD), diversity, synchrony (P-FD), and per-frame
//! position errors (MPJPE / PA-MPJPE).

mod report;

pub use report::{write_curves_csv, write_report_kv, write_svg_curves, CurveSeries};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{procrustes_align, JointPositions};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("feature sets have different dimensionality: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("feature set needs at least 2 samples for covariance, got {0}")]
    TooFewSamples(usize),
    #[error("shape mismatch: predicted {pred} frames vs ground truth {gt}")]
    FrameMismatch { pred: usize, gt: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Generated,
    GroundTruth,
}

/// N x D matrix of per-sample features (flattened joint locations).
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub data: Vec<f64>,
    pub dims: usize,
    pub provenance: Provenance,
}

impl FeatureSet {
    pub fn new(dims: usize, provenance: Provenance) -> Self {
        FeatureSet {
            data: Vec::new(),
            dims,
            provenance,
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dims);
        self.data.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Per-frame flattened joint locations of one sequence, appended as rows.
    pub fn push_positions(&mut self, pos: &JointPositions, joint_subset: &[usize]) {
        for f in 0..pos.frames() {
            let mut row = Vec::with_capacity(joint_subset.len() * 3);
            for &j in joint_subset {
                row.extend_from_slice(&pos.at(f, j));
            }
            self.push(&row);
        }
    }
}

/// Frechet distance between Gaussian fits plus numerical diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct FrechetResult {
    pub distance: f64,
    /// Total magnitude of negative eigenvalues clamped to zero in the matrix
    /// square root.
    pub clamped_mass: f64,
    /// Set when either covariance was fit from fewer samples than feature
    /// dimensions (singular fit; computation proceeds with clamping).
    pub singular_warning: bool,
}

const EIG_CLAMP: f64 = 1e-10;

fn mean_and_cov(set: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = set.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let d = set.dims;
    let mut mean = DVector::zeros(d);
    for row in set.data.chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in set.data.chunks(d) {
        let centered = DVector::from_iterator(d, row.iter().zip(mean.iter()).map(|(v, m)| v - m));
        cov.syger(1.0, &centered, &centered, 1.0);
    }
    // unbiased estimator, the FID convention
    cov /= (n - 1) as f64;
    // syger fills the lower triangle; mirror it
    for i in 0..d {
        for j in (i + 1)..d {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    Ok((mean, cov))
}

/// Symmetric PSD square root with eigenvalue clamping; returns the root and
/// the clamped mass.
fn sqrtm_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) / 2.0;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut clamped = 0.0;
    let vals = eig.eigenvalues.map(|l| {
        if l < EIG_CLAMP {
            clamped += (l.min(0.0)).abs();
            0.0f64.max(l.max(0.0)).sqrt()
        } else {
            l.sqrt()
        }
    });
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (root, clamped)
}

/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`, the trace term
/// evaluated through the symmetric eigendecomposition of
/// `sqrt(S1) S2 sqrt(S1)` (same spectrum as `S1 S2`, but symmetric).
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<FrechetResult> {
    if a.dims != b.dims {
        return Err(MetricsError::DimMismatch {
            a: a.dims,
            b: b.dims,
        });
    }
    let (mu1, s1) = mean_and_cov(a)?;
    let (mu2, s2) = mean_and_cov(b)?;
    let singular_warning = a.len() <= a.dims || b.len() <= b.dims;

    let (root1, clamp1) = sqrtm_psd(&s1);
    let inner = &root1 * &s2 * &root1;
    let (cross_root, clamp2) = sqrtm_psd(&inner);

    let mean_term = (&mu1 - &mu2).norm_squared();
    let trace_term = s1.trace() + s2.trace() - 2.0 * cross_root.trace();
    let distance = (mean_term + trace_term).max(0.0);
    Ok(FrechetResult {
        distance,
        clamped_mass: clamp1 + clamp2,
        singular_warning,
    })
}

/// Temporal variance across a sequence of poses, measuring the amount of
/// motion: per sequence, the variance over time of each feature coordinate
/// averaged over coordinates; then averaged over sequences. Population
/// variance (1/T).
pub fn diversity(sequences: &[FeatureSet]) -> f64 {
    if sequences.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for seq in sequences {
        let t = seq.len();
        if t < 2 {
            continue;
        }
        let d = seq.dims;
        let mut mean = vec![0.0; d];
        for row in seq.data.chunks(d) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= t as f64;
        }
        let mut var_sum = 0.0;
        for row in seq.data.chunks(d) {
            for (m, &v) in mean.iter().zip(row) {
                var_sum += (v - m) * (v - m);
            }
        }
        total += var_sum / (t as f64 * d as f64);
    }
    total / sequences.len() as f64
}

/// FD on concatenated Alice-Bob features: row i of the paired set is
/// `[alice_row_i | bob_row_i]`. Measures couple synchrony.
pub fn paired_fd(
    alice_pred: &FeatureSet,
    alice_gt: &FeatureSet,
    bob: &FeatureSet,
) -> Result<FrechetResult> {
    if alice_pred.len() != bob.len() || alice_gt.len() != bob.len() {
        return Err(MetricsError::FrameMismatch {
            pred: alice_pred.len(),
            gt: bob.len(),
        });
    }
    let concat = |alice: &FeatureSet, provenance| {
        let mut out = FeatureSet::new(alice.dims + bob.dims, provenance);
        for (arow, brow) in alice
            .data
            .chunks(alice.dims)
            .zip(bob.data.chunks(bob.dims))
        {
            let mut row = Vec::with_capacity(out.dims);
            row.extend_from_slice(arow);
            row.extend_from_slice(brow);
            out.push(&row);
        }
        out
    };
    frechet_distance(
        &concat(alice_pred, Provenance::Generated),
        &concat(alice_gt, Provenance::GroundTruth),
    )
}

/// Mean per-joint position error over a joint subset, without (`aligned =
/// false`) or with per-frame Procrustes alignment. Returns the mean over
/// frames and the per-frame curve.
pub fn mpjpe(
    pred: &JointPositions,
    gt: &JointPositions,
    joint_subset: &[usize],
    aligned: bool,
) -> Result<(f64, Vec<f64>)> {
    if pred.frames() != gt.frames() || pred.joints() != gt.joints() {
        return Err(MetricsError::FrameMismatch {
            pred: pred.frames(),
            gt: gt.frames(),
        });
    }
    let mut curve = Vec::with_capacity(pred.frames());
    for f in 0..pred.frames() {
        let p = pred.subset(f, joint_subset);
        let g = gt.subset(f, joint_subset);
        let p = if aligned {
            procrustes_align(&p, &g).aligned
        } else {
            p
        };
        let err: f64 = p
            .iter()
            .zip(&g)
            .map(|(a, b)| {
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / joint_subset.len() as f64;
        curve.push(err);
    }
    let mean = curve.iter().sum::<f64>() / curve.len().max(1) as f64;
    Ok((mean, curve))
}

/// Scalar metrics plus per-timestep error curves for one evaluated method.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub method: String,
    pub fd: Option<f64>,
    pub div: Option<f64>,
    pub paired_fd: Option<f64>,
    pub mpjpe: Option<f64>,
    pub pa_mpjpe: Option<f64>,
    pub mpjpe_curve: Vec<f64>,
    pub pa_mpjpe_curve: Vec<f64>,
    pub sample_count: usize,
    pub fd_clamped_mass: f64,
    pub fd_singular_warning: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_from_rows(rows: &[&[f64]]) -> FeatureSet {
        let mut s = FeatureSet::new(rows[0].len(), Provenance::GroundTruth);
        for r in rows {
            s.push(r);
        }
        s
    }

    #[test]
    fn fd_of_identical_sets_is_zero() {
        let a = set_from_rows(&[&[0.1, 0.2], &[0.4, -0.3], &[1.0, 0.5]]);
        let fd = frechet_distance(&a, &a).unwrap();
        assert!(fd.distance.abs() < 1e-9);
    }

    #[test]
    fn fd_matches_1d_closed_form() {
        // sample mean 0 / unbiased variance 1 vs mean 1 / variance 1:
        // closed form (mu1-mu2)^2 + (sigma1-sigma2)^2 = 1
        let s = 1.0 / 2.0f64.sqrt();
        let a = set_from_rows(&[&[-s], &[s]]);
        let b = set_from_rows(&[&[1.0 - s], &[1.0 + s]]);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd.distance - 1.0).abs() < 1e-6, "fd = {}", fd.distance);
    }

    #[test]
    fn fd_is_symmetric() {
        let a = set_from_rows(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5], &[1.5, 2.0]]);
        let b = set_from_rows(&[&[1.0, 1.0], &[3.0, 0.0], &[-0.5, 1.5], &[2.5, 2.0]]);
        let ab = frechet_distance(&a, &b).unwrap().distance;
        let ba = frechet_distance(&b, &a).unwrap().distance;
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab >= 0.0);
    }

    #[test]
    fn fd_matches_diagonal_closed_form() {
        // columns of a Hadamard-style design are zero-mean and mutually
        // orthogonal, so the sample covariance is exactly diagonal
        let h: [[f64; 4]; 8] = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
            [-1.0, 1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0, 1.0],
            [-1.0, 1.0, -1.0, 1.0],
            [-1.0, -1.0, -1.0, -1.0],
        ];
        let scale_a = [0.5, 1.0, 1.5, 2.0];
        let scale_b = [1.0, 0.7, 2.0, 0.4];
        let shift_b = [0.3, -0.2, 0.8, 0.0];
        let mut a = FeatureSet::new(4, Provenance::GroundTruth);
        let mut b = FeatureSet::new(4, Provenance::Generated);
        for row in &h {
            let ra: Vec<f64> = row.iter().zip(&scale_a).map(|(v, s)| v * s).collect();
            let rb: Vec<f64> = row
                .iter()
                .zip(scale_b.iter().zip(&shift_b))
                .map(|(v, (s, t))| v * s + t)
                .collect();
            a.push(&ra);
            b.push(&rb);
        }
        // per-dimension closed form with unbiased sigma = scale * sqrt(8/7)
        let corr = (8.0f64 / 7.0).sqrt();
        let expected: f64 = (0..4)
            .map(|d| {
                let dm = shift_b[d];
                let ds = (scale_a[d] - scale_b[d]) * corr;
                dm * dm + ds * ds
            })
            .sum();
        let fd = frechet_distance(&a, &b).unwrap();
        assert!(
            (fd.distance - expected).abs() < 1e-6,
            "fd {} vs closed form {expected}",
            fd.distance
        );
    }

    #[test]
    fn fd_dim_mismatch_is_rejected() {
        let a = set_from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let b = set_from_rows(&[&[0.0], &[1.0]]);
        assert!(frechet_distance(&a, &b).is_err());
    }

    #[test]
    fn singular_warning_fires_when_d_exceeds_n() {
        let a = set_from_rows(&[&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0]]);
        let fd = frechet_distance(&a, &a).unwrap();
        assert!(fd.singular_warning);
        assert!(fd.distance.abs() < 1e-9);
    }

    #[test]
    fn diversity_of_frozen_sequence_is_zero() {
        let s = set_from_rows(&[&[0.5, 1.0], &[0.5, 1.0], &[0.5, 1.0]]);
        assert_eq!(diversity(&[s]), 0.0);
    }

    #[test]
    fn diversity_scales_quadratically() {
        let base = set_from_rows(&[&[0.0, 0.0], &[1.0, 2.0], &[2.0, 0.5], &[0.3, 1.1]]);
        let d1 = diversity(std::slice::from_ref(&base));
        // scale all motion by 2 about the temporal mean
        let t = base.len();
        let mut mean = vec![0.0; 2];
        for row in base.data.chunks(2) {
            mean[0] += row[0] / t as f64;
            mean[1] += row[1] / t as f64;
        }
        let mut scaled = FeatureSet::new(2, Provenance::GroundTruth);
        for row in base.data.chunks(2) {
            scaled.push(&[
                mean[0] + 2.0 * (row[0] - mean[0]),
                mean[1] + 2.0 * (row[1] - mean[1]),
            ]);
        }
        let d2 = diversity(&[scaled]);
        assert!((d2 - 4.0 * d1).abs() < 1e-9);
    }

    #[test]
    fn diversity_matches_brute_force() {
        let s = set_from_rows(&[&[0.1, -0.4], &[0.9, 0.2], &[-0.3, 1.0], &[0.4, 0.4]]);
        // brute force: average over coordinates of population variance
        let mut expect = 0.0;
        for c in 0..2 {
            let col: Vec<f64> = s.data.chunks(2).map(|r| r[c]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            expect += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
        }
        expect /= 2.0;
        assert!((diversity(&[s]) - expect).abs() < 1e-12);
    }

    #[test]
    fn paired_fd_zero_for_identical_alice() {
        let alice = set_from_rows(&[&[0.0, 1.0], &[1.0, 0.5], &[0.7, 0.2]]);
        let bob = set_from_rows(&[&[1.0, 1.0], &[0.0, 0.2], &[0.4, 0.9]]);
        let r = paired_fd(&alice, &alice, &bob).unwrap();
        assert!(r.distance.abs() < 1e-9);
    }

    #[test]
    fn paired_fd_rejects_length_mismatch() {
        let alice = set_from_rows(&[&[0.0], &[1.0]]);
        let bob = set_from_rows(&[&[0.0], &[1.0], &[2.0]]);
        assert!(paired_fd(&alice, &alice, &bob).is_err());
    }
}
