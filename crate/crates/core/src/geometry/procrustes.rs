//! Similarity-transform Procrustes alignment (rotation, translation, uniform
//! scale) via SVD of the 3x3 cross-covariance with reflection correction.

use nalgebra::{Matrix3, Vector3};

use super::to_vec3;

#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub aligned: Vec<[f64; 3]>,
    /// Set when the cross-covariance was rank-deficient and alignment fell
    /// back to translation only.
    pub translation_only: bool,
}

impl ProcrustesResult {
    pub fn residual_mse(&self, gt: &[[f64; 3]]) -> f64 {
        let n = self.aligned.len().max(1) as f64;
        self.aligned
            .iter()
            .zip(gt)
            .map(|(a, g)| (to_vec3(*a) - to_vec3(*g)).norm_squared())
            .sum::<f64>()
            / n
    }
}

/// Aligns `pred` onto `gt` with the least-squares similarity transform.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> ProcrustesResult {
    assert_eq!(pred.len(), gt.len(), "point sets must match");
    let n = pred.len().max(1) as f64;
    let mean = |pts: &[[f64; 3]]| {
        let mut m = Vector3::zeros();
        for p in pts {
            m += to_vec3(*p);
        }
        m / n
    };
    let pm = mean(pred);
    let gm = mean(gt);

    let mut cov = Matrix3::zeros();
    let mut pred_var = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let pc = to_vec3(*p) - pm;
        let gc = to_vec3(*g) - gm;
        cov += pc * gc.transpose();
        pred_var += pc.norm_squared();
    }

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    // collinear or coincident input: no well-posed rotation
    let degenerate = pred_var < 1e-24 || sv[1] <= 1e-12 * sv[0].max(1e-300);
    if degenerate {
        let aligned = pred
            .iter()
            .map(|p| {
                let v = to_vec3(*p) - pm + gm;
                [v[0], v[1], v[2]]
            })
            .collect();
        return ProcrustesResult {
            aligned,
            translation_only: true,
        };
    }

    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let d = if det < 0.0 { -1.0 } else { 1.0 };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let scale = (sv[0] + sv[1] + sv[2] * d) / pred_var;

    let aligned = pred
        .iter()
        .map(|p| {
            let v3 = rotation * (to_vec3(*p) - pm) * scale + gm;
            [v3[0], v3[1], v3[2]]
        })
        .collect();
    ProcrustesResult {
        aligned,
        translation_only: false,
    }
}
