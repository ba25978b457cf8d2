//! Deterministic generator of coupled lead-follow dyad clips.
//!
//! Bob (the leader) composes parametric primitives: sway, a step cycle,
//! seeded turn events, and arm-raise events. Alice (the follower) is a
//! deterministic response function of Bob's state `lag` frames earlier plus
//! smoothed seeded noise: in mirror-follow mode she is his yz-mirror; the
//! lag-follow response additionally answers his arm raise with a twirl. The
//! event randomness is what makes her future unpredictable from her own past
//! while staying a function of his, so the dyadic experiment is well-posed;
//! [`certify_gap`] checks that numerically at generation time.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    axis_angle_to_matrix, forward_kinematics, matrix_to_axis_angle, wrap_axis_angle, Skeleton,
};
use crate::metrics::mpjpe;
use crate::motion::{
    mirror, save_clip, DatasetManifest, DyadClip, JointSymmetry, ManifestEntry, MotionFrame,
    MotionSequence, Split, SourceTag, Violation, DEFAULT_CLIP_FRAMES, DEFAULT_FPS, JOINT_COUNT,
};
use crate::seeding::rng_for;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("generated clip violates motion invariants: {0:?}")]
    InvalidClip(Vec<Violation>),
    #[error("predictability gap certification failed: constant-predictor error {const_err:.4} vs oracle error {oracle_err:.4}")]
    GapNotCertified { const_err: f64, oracle_err: f64 },
    #[error("motion: {0}")]
    Motion(#[from] crate::motion::MotionError),
    #[error("geometry: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    MirrorFollow,
    LagFollow,
    Orbit,
}

impl CouplingMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mirror-follow" => Some(Self::MirrorFollow),
            "lag-follow" => Some(Self::LagFollow),
            "orbit" => Some(Self::Orbit),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MirrorFollow => "mirror-follow",
            Self::LagFollow => "lag-follow",
            Self::Orbit => "orbit",
        }
    }
}

/// Bob's motion vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Sway,
    StepCycle,
    Turn,
    ArmRaise,
}

#[derive(Debug, Clone)]
pub struct ChoreographyConfig {
    pub clips: usize,
    pub frames: usize,
    pub fps: f64,
    pub coupling: CouplingMode,
    /// Follower lag in frames.
    pub lag: usize,
    pub noise_amplitude: f64,
    pub vocabulary: Vec<Primitive>,
    pub seed: u64,
    /// Add yz-mirrored copies of training clips.
    pub mirror_augment: bool,
}

impl Default for ChoreographyConfig {
    fn default() -> Self {
        ChoreographyConfig {
            clips: 2000,
            frames: DEFAULT_CLIP_FRAMES,
            fps: DEFAULT_FPS,
            coupling: CouplingMode::LagFollow,
            lag: 12,
            noise_amplitude: 0.02,
            vocabulary: vec![
                Primitive::Sway,
                Primitive::StepCycle,
                Primitive::Turn,
                Primitive::ArmRaise,
            ],
            seed: 0,
            mirror_augment: false,
        }
    }
}

impl ChoreographyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.frames < 2 {
            return Err(SynthError::BadConfig(
                "need at least 1 clip of at least 2 frames".into(),
            ));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude < 0.2) {
            return Err(SynthError::BadConfig(format!(
                "noise amplitude {} outside [0, 0.2)",
                self.noise_amplitude
            )));
        }
        if self.fps <= 0.0 {
            return Err(SynthError::BadConfig("fps must be positive".into()));
        }
        if self.vocabulary.is_empty() {
            return Err(SynthError::BadConfig("empty motion vocabulary".into()));
        }
        Ok(())
    }
}

// joint indices into theta channels (skeleton joint - 1)
const L_HIP: usize = 0;
const R_HIP: usize = 1;
const SPINE1: usize = 2;
const L_KNEE: usize = 3;
const R_KNEE: usize = 4;
const SPINE2: usize = 5;
const NECK: usize = 11;
const L_SHOULDER: usize = 15;
const R_SHOULDER: usize = 16;
const L_ELBOW: usize = 17;
const R_ELBOW: usize = 18;

/// One arm-raise event in leader-track time.
#[derive(Debug, Clone, Copy)]
struct RaiseEvent {
    start: f64,
    duration: f64,
}

/// Per-clip sampled leader choreography.
#[derive(Debug, Clone)]
struct Choreography {
    base_x: f64,
    base_z: f64,
    step_hz: f64,
    step_phase: f64,
    sway_amp: f64,
    wander_amp: [f64; 2],
    wander_hz: [f64; 2],
    wander_phase: [f64; 2],
    leg_amp: f64,
    knee_amp: f64,
    arm_amp: f64,
    torso_amp: f64,
    yaw_amp: f64,
    yaw_hz: f64,
    yaw_phase: f64,
    turns: Vec<(f64, f64, f64)>, // (start, duration, delta yaw)
    raises: Vec<RaiseEvent>,
    orbit_radius: f64,
    orbit_hz: f64,
    orbit_phase: f64,
}

impl Choreography {
    fn sample(config: &ChoreographyConfig, rng: &mut ChaCha8Rng, track_frames: usize) -> Self {
        let has = |p: Primitive| config.vocabulary.contains(&p);
        let seconds = track_frames as f64 / config.fps;
        let mut turns = Vec::new();
        if has(Primitive::Turn) {
            let n = rng.random_range(1..=3usize);
            let mut total: f64 = 0.0;
            for _ in 0..n {
                let start = rng.random_range(0.1..0.8) * seconds;
                let duration = rng.random_range(0.4..0.9);
                let mut delta = rng.random_range(-0.8..0.8f64);
                // keep cumulative yaw well inside the wrapping range
                if (total + delta).abs() > 1.0 {
                    delta = -delta;
                }
                total += delta;
                turns.push((start, duration, delta));
            }
            turns.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let mut raises = Vec::new();
        if has(Primitive::ArmRaise) {
            let n = rng.random_range(1..=2usize);
            let mut last_end = 0.0;
            for _ in 0..n {
                let start = rng.random_range(0.15..0.75) * seconds;
                if start < last_end + 0.4 {
                    continue;
                }
                let duration = rng.random_range(1.0..1.6);
                last_end = start + duration;
                raises.push(RaiseEvent { start, duration });
            }
            raises.sort_by(|a, b| a.start.total_cmp(&b.start));
        }
        Choreography {
            base_x: rng.random_range(0.6..1.1),
            base_z: rng.random_range(-0.3..0.3),
            step_hz: rng.random_range(0.8..1.4),
            step_phase: rng.random_range(0.0..std::f64::consts::TAU),
            sway_amp: if has(Primitive::Sway) {
                rng.random_range(0.06..0.14)
            } else {
                0.0
            },
            wander_amp: [rng.random_range(0.15..0.45), rng.random_range(0.15..0.45)],
            wander_hz: [rng.random_range(0.05..0.16), rng.random_range(0.05..0.16)],
            wander_phase: [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
            leg_amp: if has(Primitive::StepCycle) {
                rng.random_range(0.25..0.45)
            } else {
                0.0
            },
            knee_amp: if has(Primitive::StepCycle) {
                rng.random_range(0.3..0.55)
            } else {
                0.0
            },
            arm_amp: rng.random_range(0.2..0.4),
            torso_amp: if has(Primitive::Sway) {
                rng.random_range(0.05..0.15)
            } else {
                0.0
            },
            yaw_amp: rng.random_range(0.1..0.35),
            yaw_hz: rng.random_range(0.1..0.3),
            yaw_phase: rng.random_range(0.0..std::f64::consts::TAU),
            turns,
            raises,
            orbit_radius: rng.random_range(0.8..1.2),
            orbit_hz: rng.random_range(0.08..0.2),
            orbit_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Leader state at track time `t` seconds: frame plus the arm-raise
    /// envelope and its progress.
    fn leader_state(&self, t: f64) -> (MotionFrame, f64, f64) {
        let tau = std::f64::consts::TAU;
        let mut f = MotionFrame::rest();
        let step = tau * self.step_hz * t + self.step_phase;

        // root translation: base offset + sway + slow wander; vertical bob
        // at double the step frequency
        f.gamma[0] = self.base_x
            + self.sway_amp * step.sin()
            + self.wander_amp[0] * (tau * self.wander_hz[0] * t + self.wander_phase[0]).sin();
        f.gamma[1] = 0.03 * (2.0 * step).sin();
        f.gamma[2] = self.base_z
            + self.wander_amp[1] * (tau * self.wander_hz[1] * t + self.wander_phase[1]).sin();

        // heading: bounded oscillation plus smoothstep turn events
        let mut yaw = self.yaw_amp * (tau * self.yaw_hz * t + self.yaw_phase).sin();
        for &(start, duration, delta) in &self.turns {
            yaw += delta * smoothstep((t - start) / duration);
        }
        f.phi = [0.02 * step.sin(), yaw, 0.02 * (step + 1.0).cos()];

        // step cycle: alternating hips and knees
        let (s, s_anti) = (step.sin(), (step + std::f64::consts::PI).sin());
        f.theta[L_HIP][0] = self.leg_amp * s;
        f.theta[R_HIP][0] = self.leg_amp * s_anti;
        f.theta[L_KNEE][0] = self.knee_amp * 0.5 * (1.0 - step.cos());
        f.theta[R_KNEE][0] = self.knee_amp * 0.5 * (1.0 + step.cos());

        // torso and head sway
        f.theta[SPINE1][2] = self.torso_amp * s;
        f.theta[SPINE2][2] = self.torso_amp * 0.5 * s;
        f.theta[NECK][1] = 0.08 * (0.5 * step).sin();

        // arm swing, antiphase with the same-side leg
        f.theta[L_SHOULDER][0] = self.arm_amp * s_anti;
        f.theta[R_SHOULDER][0] = self.arm_amp * s;
        f.theta[L_ELBOW][1] = 0.3 * 0.5 * (1.0 - step.cos());
        f.theta[R_ELBOW][1] = 0.3 * 0.5 * (1.0 + step.cos());

        // arm raise: left arm ramps up, holds, ramps down
        let mut envelope: f64 = 0.0;
        let mut progress = 0.0;
        for r in &self.raises {
            let x = (t - r.start) / r.duration;
            if (0.0..1.0).contains(&x) {
                let ramp = 0.2;
                let e = if x < ramp {
                    smoothstep(x / ramp)
                } else if x > 1.0 - ramp {
                    smoothstep((1.0 - x) / ramp)
                } else {
                    1.0
                };
                envelope = envelope.max(e);
                progress = x;
            }
        }
        f.theta[L_SHOULDER][2] = 1.1 * envelope;
        f.theta[L_ELBOW][1] *= 1.0 - envelope;

        (f, envelope, progress)
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// The follower's deterministic response to a lagged leader state.
fn respond(
    state: &MotionFrame,
    envelope: f64,
    progress: f64,
    t: f64,
    mode: CouplingMode,
    choreo: &Choreography,
    sym: &JointSymmetry,
) -> MotionFrame {
    let mirrored = mirror_frame(state, sym);
    match mode {
        CouplingMode::MirrorFollow => mirrored,
        CouplingMode::LagFollow => {
            let mut f = mirrored;
            if envelope > 0.0 {
                // twirl answer: a yaw spin that returns to neutral, arms
                // out, legs straightening, blended by the raise envelope
                let spin = 1.2 * (std::f64::consts::PI * progress).sin();
                let r_yaw = axis_angle_to_matrix([0.0, spin, 0.0]);
                let r_base = axis_angle_to_matrix(f.phi);
                f.phi = matrix_to_axis_angle(&(r_yaw * r_base));
                let blend = |v: &mut f64, target: f64| *v += envelope * (target - *v);
                blend(&mut f.theta[L_SHOULDER][2], 0.9);
                blend(&mut f.theta[R_SHOULDER][2], -0.9);
                blend(&mut f.theta[L_KNEE][0], 0.05);
                blend(&mut f.theta[R_KNEE][0], 0.05);
                blend(&mut f.theta[L_HIP][0], 0.0);
                blend(&mut f.theta[R_HIP][0], 0.0);
            }
            f
        }
        CouplingMode::Orbit => {
            let mut f = mirrored;
            let angle = std::f64::consts::TAU * choreo.orbit_hz * t + choreo.orbit_phase;
            f.gamma = [
                state.gamma[0] + choreo.orbit_radius * angle.cos(),
                state.gamma[1],
                state.gamma[2] + choreo.orbit_radius * angle.sin(),
            ];
            f
        }
    }
}

fn mirror_frame(frame: &MotionFrame, sym: &JointSymmetry) -> MotionFrame {
    let mut out = MotionFrame::rest();
    for j in 0..JOINT_COUNT {
        let src = frame.theta[sym.0[j]];
        out.theta[j] = [src[0], -src[1], -src[2]];
    }
    out.phi = [frame.phi[0], -frame.phi[1], -frame.phi[2]];
    out.gamma = [-frame.gamma[0], frame.gamma[1], frame.gamma[2]];
    out
}

/// Smoothed Gaussian noise tracks (`channels x frames`), band-limited by two
/// passes of a binomial kernel.
fn smooth_noise(
    channels: usize,
    frames: usize,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let pad = 8;
    (0..channels)
        .map(|_| {
            let mut raw: Vec<f64> = (0..frames + 2 * pad)
                .map(|_| {
                    // Box-Muller
                    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.random();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            for _ in 0..2 {
                let src = raw.clone();
                for i in 2..src.len() - 2 {
                    raw[i] = (0..5).map(|k| KERNEL[k] * src[i + k - 2]).sum();
                }
            }
            raw[pad..pad + frames]
                .iter()
                .map(|v| v * amplitude)
                .collect()
        })
        .collect()
}

/// Generates one coupled dyad clip, bit-deterministic in `(config, index)`.
pub fn generate_dyad(config: &ChoreographyConfig, index: usize) -> Result<DyadClip> {
    config.validate()?;
    let sym = Skeleton::default_skeleton().theta_symmetry();
    let clip_id = format!("clip-{index:05}");
    let mut rng = rng_for(config.seed, &["clip", &index.to_string()]);
    let track_frames = config.frames + config.lag;
    let choreo = Choreography::sample(config, &mut rng, track_frames);

    let mut noise_rng = rng_for(config.seed, &["clip-noise", &index.to_string()]);
    let noise = smooth_noise(12, config.frames, config.noise_amplitude, &mut noise_rng);

    let dt = 1.0 / config.fps;
    let mut bob_frames = Vec::with_capacity(config.frames);
    let mut alice_frames = Vec::with_capacity(config.frames);
    for i in 0..config.frames {
        // Bob leads: his state at frame i is track time i + lag
        let (bob, _, _) = choreo.leader_state((i + config.lag) as f64 * dt);
        bob_frames.push(bob);

        // Alice responds to the track state at frame i (= Bob lagged)
        let (lagged, env, progress) = choreo.leader_state(i as f64 * dt);
        let mut alice = respond(
            &lagged,
            env,
            progress,
            i as f64 * dt,
            config.coupling,
            &choreo,
            &sym,
        );
        let noisy_joints = [L_HIP, R_HIP, L_KNEE, R_KNEE, L_SHOULDER, R_SHOULDER];
        for (k, &j) in noisy_joints.iter().enumerate() {
            alice.theta[j][0] += noise[k][i];
        }
        for c in 0..3 {
            alice.phi[c] += noise[6 + c][i] * 0.5;
            alice.gamma[c] += noise[9 + c][i];
        }
        alice.phi = wrap_axis_angle(alice.phi);
        for j in 0..JOINT_COUNT {
            alice.theta[j] = wrap_axis_angle(alice.theta[j]);
        }
        alice_frames.push(alice);
    }

    let clip = DyadClip::new(
        MotionSequence::new(alice_frames, config.fps),
        MotionSequence::new(bob_frames, config.fps),
        clip_id,
        SourceTag::Synthetic,
    )?;
    let report = crate::motion::validate(&clip);
    if !report.is_empty() {
        return Err(SynthError::InvalidClip(report));
    }
    Ok(clip)
}

/// Noise-free Alice for a clip index: the response-function oracle the
/// certification compares against.
fn oracle_alice(config: &ChoreographyConfig, index: usize) -> MotionSequence {
    let sym = Skeleton::default_skeleton().theta_symmetry();
    let mut rng = rng_for(config.seed, &["clip", &index.to_string()]);
    let track_frames = config.frames + config.lag;
    let choreo = Choreography::sample(config, &mut rng, track_frames);
    let dt = 1.0 / config.fps;
    let frames = (0..config.frames)
        .map(|i| {
            let (lagged, env, progress) = choreo.leader_state(i as f64 * dt);
            respond(
                &lagged,
                env,
                progress,
                i as f64 * dt,
                config.coupling,
                &choreo,
                &sym,
            )
        })
        .collect();
    MotionSequence::new(frames, config.fps)
}

/// Certified conditional-predictability gap on the suffix after `prefix`
/// frames, Monte-Carlo over up to 100 clips.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    /// Mean suffix MPJPE of the best per-clip constant predictor (chosen
    /// with oracle knowledge of the suffix, an upper bound on anything a
    /// prefix-only constant could achieve).
    pub const_err: f64,
    /// Mean suffix MPJPE of the oracle response function given Bob.
    pub oracle_err: f64,
}

pub fn certify_gap(config: &ChoreographyConfig, prefix: usize) -> Result<GapReport> {
    let skel = Skeleton::default_skeleton();
    let major = skel.major_indices();
    let n = config.clips.min(100);
    let mut const_total = 0.0;
    let mut oracle_total = 0.0;
    for index in 0..n {
        let clip = generate_dyad(config, index)?;
        let suffix = clip.alice.slice(prefix, clip.frame_count());
        let gt_pos = forward_kinematics(&suffix, &skel)?;

        // best constant pose: per-channel temporal mean of the true suffix
        let t = suffix.len();
        let mut mean_flat = vec![0.0; crate::motion::FRAME_DIMS];
        for f in &suffix.frames {
            for (m, v) in mean_flat.iter_mut().zip(f.to_flat()) {
                *m += v / t as f64;
            }
        }
        let const_seq =
            MotionSequence::new(vec![MotionFrame::from_flat(&mean_flat); t], config.fps);
        let const_pos = forward_kinematics(&const_seq, &skel)?;
        let (const_err, _) =
            mpjpe(&const_pos, &gt_pos, &major, false).expect("matching shapes by construction");

        let oracle = oracle_alice(config, index).slice(prefix, config.frames);
        let oracle_pos = forward_kinematics(&oracle, &skel)?;
        let (oracle_err, _) =
            mpjpe(&oracle_pos, &gt_pos, &major, false).expect("matching shapes by construction");

        const_total += const_err;
        oracle_total += oracle_err;
    }
    let report = GapReport {
        const_err: const_total / n as f64,
        oracle_err: oracle_total / n as f64,
    };
    if report.const_err <= report.oracle_err {
        return Err(SynthError::GapNotCertified {
            const_err: report.const_err,
            oracle_err: report.oracle_err,
        });
    }
    Ok(report)
}

/// Generates the full dataset on disk: clips under `clips/`, an 80/10/10
/// train/validation/test split by seeded shuffle, mirrored training copies
/// when augmentation is on, and the manifest. The predictability gap is
/// certified before anything is written.
pub fn generate_dataset(config: &ChoreographyConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    certify_gap(config, config.frames * 48 / 100)?;

    let clips_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clips_dir)?;

    let mut order: Vec<usize> = (0..config.clips).collect();
    let mut shuffle_rng = rng_for(config.seed, &["split"]);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = config.clips * 8 / 10;
    let n_val = config.clips / 10;

    let sym = Skeleton::default_skeleton().theta_symmetry();
    let mut manifest = DatasetManifest::new(config.seed);
    for (rank, &index) in order.iter().enumerate() {
        let split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
        let clip = generate_dyad(config, index)?;
        let rel = Path::new("clips").join(format!("{}.clip", clip.clip_id));
        save_clip(&clip, &out_dir.join(&rel))?;
        manifest.entries.push(ManifestEntry {
            path: rel,
            split,
            mirrored: false,
        });
        if config.mirror_augment && split == Split::Train {
            let mut m = mirror(&clip, &sym);
            m.clip_id = format!("{}-m", clip.clip_id);
            let rel = Path::new("clips").join(format!("{}.clip", m.clip_id));
            save_clip(&m, &out_dir.join(&rel))?;
            manifest.entries.push(ManifestEntry {
                path: rel,
                split,
                mirrored: true,
            });
        }
    }
    manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Loads every clip of a split, in manifest order.
pub fn load_split(manifest: &DatasetManifest, root: &Path, split: Split) -> Result<Vec<DyadClip>> {
    let mut clips = Vec::new();
    for e in manifest.split_entries(split) {
        clips.push(crate::motion::load_clip(&root.join(&e.path))?);
    }
    Ok(clips)
}
