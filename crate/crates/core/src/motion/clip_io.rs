//! Clip serialization: a versioned binary container plus a text interchange
//! format for motion recovered by external video-reconstruction tools.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "DYCL", version u32,
//! clip id (u16 len + utf8), source u8, mirror u8,
//! fps f64, frame count u32,
//! alice frames, bob frames  (75 f64 per frame: 23x3 theta, 3 phi, 3 gamma)
//! ```
//!
//! Text interchange: one frame per line, 75 whitespace-separated values in
//! the same order; one file per person.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::container::{ContainerError, CountingReader, CountingWriter};

use super::{
    DyadClip, MotionError, MotionFrame, MotionSequence, Result, SourceTag, FRAME_DIMS,
};

pub const CLIP_MAGIC: [u8; 4] = *b"DYCL";
pub const CLIP_VERSION: u32 = 1;

pub fn save_clip(clip: &DyadClip, path: &Path) -> Result<()> {
    let mut w = CountingWriter::new(BufWriter::new(File::create(path)?));
    w.write_all(&CLIP_MAGIC)?;
    w.write_u32(CLIP_VERSION)?;
    w.write_str16(&clip.clip_id)?;
    w.write_all(&[match clip.source {
        SourceTag::Synthetic => 0u8,
        SourceTag::Imported => 1u8,
    }])?;
    w.write_all(&[clip.mirrored as u8])?;
    w.write_f64(clip.alice.fps)?;
    w.write_u32(clip.frame_count() as u32)?;
    for seq in [&clip.alice, &clip.bob] {
        for frame in &seq.frames {
            for v in frame.to_flat() {
                w.write_f64(v)?;
            }
        }
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<DyadClip> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if magic != CLIP_MAGIC {
        return Err(ContainerError::BadMagic {
            expected: CLIP_MAGIC,
            got: magic,
        }
        .into());
    }
    let version = r.read_u32("version")?;
    if version != CLIP_VERSION {
        return Err(ContainerError::BadVersion {
            got: version,
            supported: CLIP_VERSION,
        }
        .into());
    }
    let clip_id = r.read_str16("clip id")?;
    let mut tag = [0u8; 2];
    r.read_exact_at(&mut tag, "source/mirror flags")?;
    let source = match tag[0] {
        0 => SourceTag::Synthetic,
        1 => SourceTag::Imported,
        other => {
            return Err(ContainerError::Malformed {
                offset: r.offset,
                context: format!("unknown source tag {other}"),
            }
            .into())
        }
    };
    let mirrored = tag[1] != 0;
    let fps = r.read_f64("fps")?;
    let t = r.read_u32("frame count")? as usize;
    let mut read_seq = |r: &mut CountingReader<_>| -> Result<MotionSequence> {
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let mut flat = [0.0; FRAME_DIMS];
            for v in flat.iter_mut() {
                *v = r.read_f64("frame record")?;
            }
            frames.push(MotionFrame::from_flat(&flat));
        }
        Ok(MotionSequence::new(frames, fps))
    };
    let alice = read_seq(&mut r)?;
    let bob = read_seq(&mut r)?;
    Ok(DyadClip {
        alice,
        bob,
        clip_id,
        source,
        mirrored,
    })
}

/// Writes a sequence in the one-frame-per-line text interchange format.
pub fn export_sequence_text(seq: &MotionSequence, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for frame in &seq.frames {
        let flat = frame.to_flat();
        let line: Vec<String> = flat.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sequence from the text interchange format: one frame per line,
/// 23x3 theta values, 3 phi, 3 gamma.
pub fn import_sequence_text(path: &Path, fps: f64) -> Result<MotionSequence> {
    let reader = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| MotionError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message,
        };
        let mut flat = [0.0; FRAME_DIMS];
        let mut count = 0usize;
        for (i, tok) in trimmed.split_whitespace().enumerate() {
            if i >= FRAME_DIMS {
                count = i + 1;
                break;
            }
            flat[i] = tok
                .parse::<f64>()
                .map_err(|e| parse_err(format!("value {}: {e}", i + 1)))?;
            count = i + 1;
        }
        if count != FRAME_DIMS {
            return Err(parse_err(format!(
                "expected {FRAME_DIMS} values per frame, got {count}"
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".to_string()));
        }
        frames.push(MotionFrame::from_flat(&flat));
    }
    if frames.is_empty() {
        return Err(MotionError::Empty);
    }
    Ok(MotionSequence::new(frames, fps))
}

/// Builds a dyad clip from two imported text sequences.
pub fn import_dyad_text(
    alice_path: &Path,
    bob_path: &Path,
    fps: f64,
    clip_id: &str,
) -> Result<DyadClip> {
    let alice = import_sequence_text(alice_path, fps)?;
    let bob = import_sequence_text(bob_path, fps)?;
    DyadClip::new(alice, bob, clip_id, SourceTag::Imported)
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_clip;
    use super::*;

    #[test]
    fn binary_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c1.clip");
        let p2 = dir.path().join("c2.clip");
        let clip = random_clip(10, 21);
        save_clip(&clip, &p1).unwrap();
        let loaded = load_clip(&p1).unwrap();
        assert_eq!(loaded, clip);
        save_clip(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_header_fails_without_partial_clip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.clip");
        std::fs::write(&p, b"XXXX\x01\x00\x00\x00rest").unwrap();
        assert!(load_clip(&p).is_err());
    }

    #[test]
    fn truncated_body_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.clip");
        save_clip(&random_clip(4, 22), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_clip(&p).unwrap_err();
        assert!(err.to_string().contains("offset"));
    }

    #[test]
    fn empty_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.clip");
        std::fs::write(&p, b"").unwrap();
        assert!(load_clip(&p).is_err());
    }

    #[test]
    fn text_interchange_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = random_clip(6, 23);
        let pa = dir.path().join("alice.txt");
        let pb = dir.path().join("bob.txt");
        export_sequence_text(&clip.alice, &pa).unwrap();
        export_sequence_text(&clip.bob, &pb).unwrap();
        let imported = import_dyad_text(&pa, &pb, clip.alice.fps, "imp").unwrap();
        assert_eq!(imported.source, SourceTag::Imported);
        for (a, b) in clip.alice.frames.iter().zip(&imported.alice.frames) {
            for (x, y) in a.to_flat().iter().zip(b.to_flat().iter()) {
                assert_eq!(x, y, "text roundtrip must be exact");
            }
        }
    }

    #[test]
    fn short_line_is_a_parse_error_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.txt");
        std::fs::write(&p, "0.0 1.0 2.0\n").unwrap();
        let err = import_sequence_text(&p, 25.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":1") && msg.contains("75"), "got: {msg}");
    }
}
