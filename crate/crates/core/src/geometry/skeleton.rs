//! Skeleton definition: joint tree, rest-pose offsets, left/right symmetry
//! pairs and the 14-joint "major" subset used by the position-error metrics.

use std::collections::BTreeMap;
use std::path::Path;

use crate::motion::{JointSymmetry, JOINT_COUNT};

use super::{GeometryError, Result};

pub const SKELETON_JOINTS: usize = JOINT_COUNT + 1;
pub const MAJOR_JOINT_COUNT: usize = 14;

const DEFAULT_SKELETON: &str = include_str!("../../data/skeleton_default.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` only for the root.
    pub parent: Option<usize>,
    /// Rest-pose bone offset from the parent joint, meters.
    pub offset: [f64; 3],
    /// Index of the left/right partner; self for unpaired joints.
    pub symmetry: usize,
    pub major: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    /// The bundled SMPL-topology skeleton with anthropometric offsets.
    pub fn default_skeleton() -> Skeleton {
        Skeleton::parse(DEFAULT_SKELETON, "<default>").expect("bundled skeleton is valid")
    }

    pub fn load(path: &Path) -> Result<Skeleton> {
        let text = std::fs::read_to_string(path)?;
        Skeleton::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Skeleton> {
        let mut names: BTreeMap<String, usize> = BTreeMap::new();
        let mut rows: Vec<(String, String, [f64; 3], String, bool, usize)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| GeometryError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message,
            };
            let cols: Vec<&str> = trimmed.split_whitespace().collect();
            if cols.len() != 7 {
                return Err(err(format!("expected 7 columns, got {}", cols.len())));
            }
            let mut offset = [0.0; 3];
            for (i, slot) in offset.iter_mut().enumerate() {
                *slot = cols[2 + i]
                    .parse::<f64>()
                    .map_err(|e| err(format!("offset: {e}")))?;
                if !slot.is_finite() {
                    return Err(err("non-finite offset".to_string()));
                }
            }
            let major = match cols[6] {
                "0" => false,
                "1" => true,
                other => return Err(err(format!("bad major flag `{other}`"))),
            };
            if names
                .insert(cols[0].to_string(), rows.len())
                .is_some()
            {
                return Err(err(format!("duplicate joint `{}`", cols[0])));
            }
            rows.push((
                cols[0].to_string(),
                cols[1].to_string(),
                offset,
                cols[5].to_string(),
                major,
                lineno + 1,
            ));
        }
        if rows.len() != SKELETON_JOINTS {
            return Err(GeometryError::JointCount {
                got: rows.len(),
                expected: SKELETON_JOINTS,
            });
        }
        let mut joints = Vec::with_capacity(rows.len());
        for (i, (name, parent, offset, sym, major, line)) in rows.iter().enumerate() {
            let err = |message: String| GeometryError::Parse {
                path: origin.to_string(),
                line: *line,
                message,
            };
            let parent_idx = if parent == "-" {
                if i != 0 {
                    return Err(err("only the first joint may be the root".to_string()));
                }
                None
            } else {
                let p = *names
                    .get(parent)
                    .ok_or_else(|| err(format!("unknown parent `{parent}`")))?;
                if p >= i {
                    return Err(err("parent must be declared before the child".to_string()));
                }
                Some(p)
            };
            let sym_idx = if sym == "-" {
                i
            } else {
                *names
                    .get(sym)
                    .ok_or_else(|| err(format!("unknown symmetry partner `{sym}`")))?
            };
            joints.push(Joint {
                name: name.clone(),
                parent: parent_idx,
                offset: *offset,
                symmetry: sym_idx,
                major: *major,
            });
        }
        let skel = Skeleton { joints };
        skel.validate()?;
        Ok(skel)
    }

    fn validate(&self) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            let partner = j.symmetry;
            if self.joints[partner].symmetry != i {
                return Err(GeometryError::BadJoint {
                    joint: j.name.clone(),
                    message: "symmetry map is not an involution".to_string(),
                });
            }
        }
        let majors = self.major_indices().len();
        if majors != MAJOR_JOINT_COUNT {
            return Err(GeometryError::BadJoint {
                joint: "<major subset>".to_string(),
                message: format!("expected {MAJOR_JOINT_COUNT} major joints, got {majors}"),
            });
        }
        Ok(())
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Indices of the 14 major joints, in declaration order.
    pub fn major_indices(&self) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.major)
            .map(|(i, _)| i)
            .collect()
    }

    /// The left/right permutation over the 23 theta channels (joints 1..24).
    pub fn theta_symmetry(&self) -> JointSymmetry {
        let mut map = [0usize; JOINT_COUNT];
        for (channel, slot) in map.iter_mut().enumerate() {
            let joint = channel + 1;
            let partner = self.joints[joint].symmetry;
            debug_assert!(partner >= 1, "root cannot be a symmetry partner");
            *slot = partner - 1;
        }
        JointSymmetry(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_loads() {
        let s = Skeleton::default_skeleton();
        assert_eq!(s.len(), 24);
        assert_eq!(s.major_indices().len(), 14);
        assert_eq!(s.joints()[0].parent, None);
    }

    #[test]
    fn symmetry_is_involution_and_mirrors_offsets() {
        let s = Skeleton::default_skeleton();
        for (i, j) in s.joints().iter().enumerate() {
            assert_eq!(s.joints()[j.symmetry].symmetry, i);
            let p = s.joints()[j.symmetry].offset;
            assert_eq!([-j.offset[0], j.offset[1], j.offset[2]], p);
        }
    }

    #[test]
    fn theta_symmetry_is_involution() {
        let sym = Skeleton::default_skeleton().theta_symmetry();
        for j in 0..JOINT_COUNT {
            assert_eq!(sym.0[sym.0[j]], j);
        }
    }

    #[test]
    fn parse_rejects_wrong_joint_count() {
        let text = "pelvis - 0 0 0 - 0\n";
        assert!(matches!(
            Skeleton::parse(text, "<test>"),
            Err(GeometryError::JointCount { got: 1, .. })
        ));
    }

    #[test]
    fn parse_rejects_unknown_parent_with_line() {
        let text = DEFAULT_SKELETON.replace("neck            spine3", "neck            ghost");
        let err = Skeleton::parse(&text, "<test>").unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }
}
