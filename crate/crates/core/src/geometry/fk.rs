//! Forward kinematics: joint rotations to world-space joint positions.

use nalgebra::{Matrix3, Vector3};

use crate::motion::MotionSequence;

use super::skeleton::{Skeleton, SKELETON_JOINTS};
use super::{axis_angle_to_matrix, to_vec3, GeometryError, Result};

/// World-space joint locations, `[t][joint] -> meters`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    positions: Vec<[f64; 3]>,
    joints: usize,
}

impl JointPositions {
    pub fn frames(&self) -> usize {
        self.positions.len() / self.joints
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn at(&self, frame: usize, joint: usize) -> [f64; 3] {
        self.positions[frame * self.joints + joint]
    }

    pub fn frame(&self, frame: usize) -> &[[f64; 3]] {
        &self.positions[frame * self.joints..(frame + 1) * self.joints]
    }

    /// Gathers a joint subset of one frame.
    pub fn subset(&self, frame: usize, indices: &[usize]) -> Vec<[f64; 3]> {
        indices.iter().map(|&j| self.at(frame, j)).collect()
    }
}

/// Standard tree FK: each joint's world rotation composes ancestor rotations
/// from the root orientation down; a joint's position is its parent's
/// position plus the parent's world rotation applied to the rest offset. The
/// root sits at gamma.
pub fn forward_kinematics(seq: &MotionSequence, skel: &Skeleton) -> Result<JointPositions> {
    if skel.len() != SKELETON_JOINTS {
        return Err(GeometryError::JointMismatch {
            got: skel.len(),
            expected: SKELETON_JOINTS,
        });
    }
    let n = skel.len();
    let mut positions = Vec::with_capacity(seq.len() * n);
    let mut world_rot: Vec<Matrix3<f64>> = vec![Matrix3::identity(); n];
    let mut world_pos: Vec<Vector3<f64>> = vec![Vector3::zeros(); n];
    for frame in &seq.frames {
        for (j, joint) in skel.joints().iter().enumerate() {
            match joint.parent {
                None => {
                    world_rot[j] = axis_angle_to_matrix(frame.phi);
                    world_pos[j] = to_vec3(frame.gamma);
                }
                Some(p) => {
                    let local = axis_angle_to_matrix(frame.theta[j - 1]);
                    world_rot[j] = world_rot[p] * local;
                    world_pos[j] = world_pos[p] + world_rot[p] * to_vec3(joint.offset);
                }
            }
        }
        positions.extend(world_pos.iter().map(|p| [p[0], p[1], p[2]]));
    }
    Ok(JointPositions {
        positions,
        joints: n,
    })
}
