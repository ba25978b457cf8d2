//! Canonical data model for single-person and dyadic motion trajectories.
//!
//! A frame holds 23 axis-angle joint rotations (theta), the root orientation
//! (phi) and root translation (gamma). Sequences are uniformly spaced at a
//! fixed frame rate; the default 25 fps comes from 100-frame clips spanning
//! 4 seconds.

mod clip_io;
mod manifest;

pub use clip_io::{
    export_sequence_text, import_dyad_text, import_sequence_text, load_clip, save_clip,
    CLIP_MAGIC, CLIP_VERSION,
};
pub use manifest::{DatasetManifest, ManifestEntry, Split};

use thiserror::Error;

pub const JOINT_COUNT: usize = 23;
/// Values per frame in flat layouts: 23*3 theta + 3 phi + 3 gamma.
pub const FRAME_DIMS: usize = JOINT_COUNT * 3 + 3 + 3;
pub const DEFAULT_FPS: f64 = 25.0;
pub const DEFAULT_CLIP_FRAMES: usize = 100;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("alice and bob sequences differ in length: {alice} vs {bob}")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("alice and bob sequences differ in fps: {alice} vs {bob}")]
    FpsMismatch { alice: f64, bob: f64 },
    #[error("clip_frames must be at least 1")]
    BadChunkSize,
    #[error("empty sequence")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Container(#[from] crate::container::ContainerError),
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, MotionError>;

/// One frame: axis-angle joint rotations, root orientation, root translation.
/// Axis-angle vectors encode the rotation axis scaled by the angle in
/// radians; canonical wrapping keeps magnitudes in [0, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub theta: [[f64; 3]; JOINT_COUNT],
    pub phi: [f64; 3],
    pub gamma: [f64; 3],
}

impl MotionFrame {
    pub fn rest() -> Self {
        MotionFrame {
            theta: [[0.0; 3]; JOINT_COUNT],
            phi: [0.0; 3],
            gamma: [0.0; 3],
        }
    }

    pub fn to_flat(&self) -> [f64; FRAME_DIMS] {
        let mut out = [0.0; FRAME_DIMS];
        for (j, rot) in self.theta.iter().enumerate() {
            out[j * 3..j * 3 + 3].copy_from_slice(rot);
        }
        out[JOINT_COUNT * 3..JOINT_COUNT * 3 + 3].copy_from_slice(&self.phi);
        out[JOINT_COUNT * 3 + 3..].copy_from_slice(&self.gamma);
        out
    }

    pub fn from_flat(values: &[f64]) -> Self {
        debug_assert_eq!(values.len(), FRAME_DIMS);
        let mut frame = MotionFrame::rest();
        for j in 0..JOINT_COUNT {
            frame.theta[j].copy_from_slice(&values[j * 3..j * 3 + 3]);
        }
        frame.phi.copy_from_slice(&values[JOINT_COUNT * 3..JOINT_COUNT * 3 + 3]);
        frame.gamma.copy_from_slice(&values[JOINT_COUNT * 3 + 3..]);
        frame
    }
}

/// A person's trajectory: ordered frames at a uniform frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<MotionFrame>,
    pub fps: f64,
}

impl MotionSequence {
    pub fn new(frames: Vec<MotionFrame>, fps: f64) -> Self {
        MotionSequence { frames, fps }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Flat `[t, FRAME_DIMS]` view in theta|phi|gamma order.
    pub fn to_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * FRAME_DIMS);
        for f in &self.frames {
            out.extend_from_slice(&f.to_flat());
        }
        out
    }

    /// Flat `[t, 69]` theta stream.
    pub fn theta_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * JOINT_COUNT * 3);
        for f in &self.frames {
            for rot in &f.theta {
                out.extend_from_slice(rot);
            }
        }
        out
    }

    /// Flat `[t, 3]` phi stream.
    pub fn phi_rows(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.phi).collect()
    }

    /// Flat `[t, 3]` gamma stream.
    pub fn gamma_rows(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.gamma).collect()
    }

    pub fn slice(&self, from: usize, to: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames[from..to].to_vec(),
            fps: self.fps,
        }
    }
}

/// The two members of a dyad: Alice is the person being predicted, Bob the
/// conditioning partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Person {
    Alice,
    Bob,
}

impl Person {
    pub fn as_str(self) -> &'static str {
        match self {
            Person::Alice => "alice",
            Person::Bob => "bob",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Synthetic,
    Imported,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Synthetic => "synthetic",
            SourceTag::Imported => "imported",
        }
    }
}

/// A time-aligned Alice/Bob pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadClip {
    pub alice: MotionSequence,
    pub bob: MotionSequence,
    pub clip_id: String,
    pub source: SourceTag,
    pub mirrored: bool,
}

impl DyadClip {
    pub fn new(
        alice: MotionSequence,
        bob: MotionSequence,
        clip_id: impl Into<String>,
        source: SourceTag,
    ) -> Result<Self> {
        if alice.len() != bob.len() {
            return Err(MotionError::LengthMismatch {
                alice: alice.len(),
                bob: bob.len(),
            });
        }
        if alice.fps != bob.fps {
            return Err(MotionError::FpsMismatch {
                alice: alice.fps,
                bob: bob.fps,
            });
        }
        Ok(DyadClip {
            alice,
            bob,
            clip_id: clip_id.into(),
            source,
            mirrored: false,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.alice.len()
    }
}

/// Left/right joint channel permutation over the 23 non-root joints.
/// An involution: `map[map[j]] == j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSymmetry(pub [usize; JOINT_COUNT]);

impl JointSymmetry {
    pub fn identity() -> Self {
        let mut m = [0usize; JOINT_COUNT];
        for (j, slot) in m.iter_mut().enumerate() {
            *slot = j;
        }
        JointSymmetry(m)
    }
}

/// Splits an aligned sequence pair into consecutive non-overlapping clips of
/// `clip_frames` frames. A trailing remainder shorter than `clip_frames` is
/// dropped.
pub fn chunk(
    alice: &MotionSequence,
    bob: &MotionSequence,
    clip_frames: usize,
    id_prefix: &str,
    source: SourceTag,
) -> Result<Vec<DyadClip>> {
    if clip_frames == 0 {
        return Err(MotionError::BadChunkSize);
    }
    if alice.len() != bob.len() {
        return Err(MotionError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
        });
    }
    let n = alice.len() / clip_frames;
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let (from, to) = (i * clip_frames, (i + 1) * clip_frames);
        clips.push(DyadClip::new(
            alice.slice(from, to),
            bob.slice(from, to),
            format!("{id_prefix}-{i:04}"),
            source,
        )?);
    }
    Ok(clips)
}

fn mirror_axis_angle(v: [f64; 3]) -> [f64; 3] {
    // conjugation by the yz-plane reflection: (ax, ay, az) -> (ax, -ay, -az)
    [v[0], -v[1], -v[2]]
}

fn mirror_frame(frame: &MotionFrame, sym: &JointSymmetry) -> MotionFrame {
    let mut out = MotionFrame::rest();
    for j in 0..JOINT_COUNT {
        out.theta[j] = mirror_axis_angle(frame.theta[sym.0[j]]);
    }
    out.phi = mirror_axis_angle(frame.phi);
    out.gamma = [-frame.gamma[0], frame.gamma[1], frame.gamma[2]];
    out
}

fn mirror_sequence(seq: &MotionSequence, sym: &JointSymmetry) -> MotionSequence {
    MotionSequence {
        frames: seq.frames.iter().map(|f| mirror_frame(f, sym)).collect(),
        fps: seq.fps,
    }
}

/// Reflects a clip across the yz plane: translations negate x, rotations are
/// conjugated by the reflection, and left/right joint channels swap per the
/// skeleton's symmetry map. Toggles the mirror flag.
pub fn mirror(clip: &DyadClip, sym: &JointSymmetry) -> DyadClip {
    DyadClip {
        alice: mirror_sequence(&clip.alice, sym),
        bob: mirror_sequence(&clip.bob, sym),
        clip_id: clip.clip_id.clone(),
        source: clip.source,
        mirrored: !clip.mirrored,
    }
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub person: Option<&'static str>,
    pub frame: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(p) = self.person {
            write!(f, "{p} ")?;
        }
        if let Some(fr) = self.frame {
            write!(f, "frame {fr} ")?;
        }
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every clip invariant and reports all violations; an empty report
/// means the clip is well-formed.
pub fn validate(clip: &DyadClip) -> Vec<Violation> {
    let mut report = Vec::new();
    if clip.alice.len() != clip.bob.len() {
        report.push(Violation {
            person: None,
            frame: None,
            field: "length",
            message: format!("alice {} vs bob {}", clip.alice.len(), clip.bob.len()),
        });
    }
    if clip.alice.fps != clip.bob.fps {
        report.push(Violation {
            person: None,
            frame: None,
            field: "fps",
            message: format!("alice {} vs bob {}", clip.alice.fps, clip.bob.fps),
        });
    }
    if clip.alice.is_empty() {
        report.push(Violation {
            person: Some("alice"),
            frame: None,
            field: "length",
            message: "empty sequence".to_string(),
        });
    }
    for (person, seq) in [("alice", &clip.alice), ("bob", &clip.bob)] {
        for (i, frame) in seq.frames.iter().enumerate() {
            let mut push = |field: &'static str, msg: String| {
                report.push(Violation {
                    person: Some(person),
                    frame: Some(i),
                    field,
                    message: msg,
                });
            };
            if frame.theta.iter().flatten().any(|v| !v.is_finite()) {
                push("theta", "non-finite value".to_string());
            }
            if frame.phi.iter().any(|v| !v.is_finite()) {
                push("phi", "non-finite value".to_string());
            }
            if frame.gamma.iter().any(|v| !v.is_finite()) {
                push("gamma", "non-finite value".to_string());
            }
        }
    }
    report
}
