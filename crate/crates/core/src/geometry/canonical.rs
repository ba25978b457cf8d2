//! World-frame canonicalization and the dyadic relative-frame transform.

use nalgebra::Matrix3;

use crate::motion::{DyadClip, MotionSequence, Person};

use super::{axis_angle_to_matrix, from_vec3, matrix_to_axis_angle, to_vec3};

/// How the partner's orientation is composed into the subject's frame.
///
/// The compose-inverse form `R' = R0^-1 R` is the rigid-frame change that
/// matches the translation line; the literal form `R' = R0^-1 R^-1`
/// additionally inverts the partner's own orientation and is kept only for
/// fidelity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrientationConvention {
    #[default]
    ComposeInverse,
    LiteralInverse,
}

impl OrientationConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "compose-inverse" => Some(Self::ComposeInverse),
            "literal-inverse" => Some(Self::LiteralInverse),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ComposeInverse => "compose-inverse",
            Self::LiteralInverse => "literal-inverse",
        }
    }
}

fn transform_sequence(seq: &MotionSequence, r0_inv: &Matrix3<f64>, t0: [f64; 3]) -> MotionSequence {
    let t0 = to_vec3(t0);
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let mut out = f.clone();
            out.gamma = from_vec3(r0_inv * (to_vec3(f.gamma) - t0));
            let r = axis_angle_to_matrix(f.phi);
            out.phi = matrix_to_axis_angle(&(r0_inv * r));
            out
        })
        .collect();
    MotionSequence::new(frames, seq.fps)
}

/// Rigidly re-expresses the whole clip in the subject's frame-0 frame: after
/// the op the subject starts at the origin with identity orientation (torso
/// facing +z, head +y, given the rest pose faces that way).
pub fn canonicalize(clip: &DyadClip, subject: Person) -> DyadClip {
    let subject_seq = match subject {
        Person::Alice => &clip.alice,
        Person::Bob => &clip.bob,
    };
    let f0 = &subject_seq.frames[0];
    let r0 = axis_angle_to_matrix(f0.phi);
    let r0_inv = r0.transpose();
    let t0 = f0.gamma;
    DyadClip {
        alice: transform_sequence(&clip.alice, &r0_inv, t0),
        bob: transform_sequence(&clip.bob, &r0_inv, t0),
        clip_id: clip.clip_id.clone(),
        source: clip.source,
        mirrored: clip.mirrored,
    }
}

/// Re-expresses a partner sequence relative to the subject's frame-0
/// parameters: translations become `R0^-1 (gamma - gamma0)` exactly;
/// orientations compose per the chosen convention; theta is unchanged.
pub fn relative_frame(
    partner: &MotionSequence,
    subject_phi0: [f64; 3],
    subject_gamma0: [f64; 3],
    convention: OrientationConvention,
) -> MotionSequence {
    let r0_inv = axis_angle_to_matrix(subject_phi0).transpose();
    let t0 = to_vec3(subject_gamma0);
    let frames = partner
        .frames
        .iter()
        .map(|f| {
            let mut out = f.clone();
            out.gamma = from_vec3(r0_inv * (to_vec3(f.gamma) - t0));
            let r = axis_angle_to_matrix(f.phi);
            let composed = match convention {
                OrientationConvention::ComposeInverse => r0_inv * r,
                OrientationConvention::LiteralInverse => r0_inv * r.transpose(),
            };
            out.phi = matrix_to_axis_angle(&composed);
            out
        })
        .collect();
    MotionSequence::new(frames, partner.fps)
}

/// Inverse of [`relative_frame`] under the compose-inverse convention.
pub fn relative_frame_inverse(
    relative: &MotionSequence,
    subject_phi0: [f64; 3],
    subject_gamma0: [f64; 3],
) -> MotionSequence {
    let r0 = axis_angle_to_matrix(subject_phi0);
    let t0 = to_vec3(subject_gamma0);
    let frames = relative
        .frames
        .iter()
        .map(|f| {
            let mut out = f.clone();
            out.gamma = from_vec3(r0 * to_vec3(f.gamma) + t0);
            let r = axis_angle_to_matrix(f.phi);
            out.phi = matrix_to_axis_angle(&(r0 * r));
            out
        })
        .collect();
    MotionSequence::new(frames, relative.fps)
}
