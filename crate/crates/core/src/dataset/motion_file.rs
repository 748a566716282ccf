//! Versioned motion file: a little-endian binary form for bulk data and a
//! JSON form for small fixtures.
//!
//! Binary layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `SAMF`                            |
//! | 4      | 2    | format version (u16, currently 1)       |
//! | 6      | 2    | joint count (u16, always 22)            |
//! | 8      | 8    | fps (f64)                               |
//! | 16     | 4    | frame count (u32)                       |
//! | 20     | 32   | skeleton hash (SHA-256)                 |
//! | 52     | ...  | frames × 135 f32: 132 rotations, 3 translation |

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, MotionSequence, Pose, NUM_JOINTS, POSE_DIM};
use crate::linalg::Vec3;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"SAMF";
pub const FORMAT_VERSION: u16 = 1;
pub const FRAME_FLOATS: usize = POSE_DIM + 3;
pub const HEADER_BYTES: usize = 52;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFile {
    pub fps: f64,
    pub skeleton_hash: [u8; 32],
    /// Frame-major, [`FRAME_FLOATS`] values per frame.
    pub payload: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct TextForm {
    format: String,
    version: u16,
    fps: f64,
    joint_count: usize,
    skeleton_hash: String,
    frames: Vec<Vec<f32>>,
}

impl MotionFile {
    pub fn frame_count(&self) -> usize {
        self.payload.len() / FRAME_FLOATS
    }

    pub fn from_sequence<T: Real>(seq: &MotionSequence<T>, tree: &KinematicTree<T>) -> Result<Self> {
        let mut payload = Vec::with_capacity(seq.len() * FRAME_FLOATS);
        for f in &seq.frames {
            if f.num_joints() != NUM_JOINTS {
                return Err(Error::DimensionMismatch(format!("pose has {} joints", f.num_joints())));
            }
            payload.extend(f.rotation_vector().iter().map(|v| v.as_f64() as f32));
            payload.extend(f.root_translation.0.iter().map(|v| v.as_f64() as f32));
        }
        Ok(Self { fps: seq.fps, skeleton_hash: tree.hash(), payload })
    }

    pub fn to_sequence<T: Real>(&self) -> Result<MotionSequence<T>> {
        let frames = self
            .payload
            .chunks_exact(FRAME_FLOATS)
            .map(|c| {
                let rot: Vec<T> = c[..POSE_DIM].iter().map(|&v| T::lit(v as f64)).collect();
                let tr = &c[POSE_DIM..];
                Pose::from_rotation_vector(&rot, Vec3::new(T::lit(tr[0] as f64), T::lit(tr[1] as f64), T::lit(tr[2] as f64)))
            })
            .collect();
        MotionSequence::new(frames, self.fps)
    }

    pub fn check_skeleton<T: Real>(&self, tree: &KinematicTree<T>) -> Result<()> {
        if self.skeleton_hash != tree.hash() {
            return Err(Error::InvalidFile("skeleton hash does not match the configured tree".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload.len() * 4);
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u16::<LittleEndian>(NUM_JOINTS as u16).unwrap();
        out.write_f64::<LittleEndian>(self.fps).unwrap();
        out.write_u32::<LittleEndian>(self.frame_count() as u32).unwrap();
        out.extend_from_slice(&self.skeleton_hash);
        for &v in &self.payload {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::InvalidFile("truncated header".into()));
        }
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::UnsupportedFormat("bad magic".into()));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!("motion file version {version}")));
        }
        let joints = r.read_u16::<LittleEndian>()? as usize;
        if joints != NUM_JOINTS {
            return Err(Error::InvalidFile(format!("joint count {joints}")));
        }
        let fps = r.read_f64::<LittleEndian>()?;
        let frames = r.read_u32::<LittleEndian>()? as usize;
        let mut skeleton_hash = [0u8; 32];
        r.read_exact(&mut skeleton_hash)?;
        let expected = HEADER_BYTES + frames * FRAME_FLOATS * 4;
        if bytes.len() != expected {
            return Err(Error::InvalidFile(format!("payload is {} bytes, header implies {expected}", bytes.len())));
        }
        let mut payload = vec![0f32; frames * FRAME_FLOATS];
        r.read_f32_into::<LittleEndian>(&mut payload)?;
        Ok(Self { fps, skeleton_hash, payload })
    }

    pub fn to_json(&self) -> String {
        let form = TextForm {
            format: "stratavatar-motion".into(),
            version: FORMAT_VERSION,
            fps: self.fps,
            joint_count: NUM_JOINTS,
            skeleton_hash: hex::encode(self.skeleton_hash),
            frames: self.payload.chunks_exact(FRAME_FLOATS).map(|c| c.to_vec()).collect(),
        };
        serde_json::to_string_pretty(&form).expect("motion json serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let form: TextForm = serde_json::from_str(s)?;
        if form.format != "stratavatar-motion" || form.version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!("{} v{}", form.format, form.version)));
        }
        if form.joint_count != NUM_JOINTS {
            return Err(Error::InvalidFile(format!("joint count {}", form.joint_count)));
        }
        let hash = hex::decode(&form.skeleton_hash).map_err(|e| Error::InvalidFile(e.to_string()))?;
        let skeleton_hash: [u8; 32] =
            hash.try_into().map_err(|_| Error::InvalidFile("skeleton hash must be 32 bytes".into()))?;
        let mut payload = Vec::with_capacity(form.frames.len() * FRAME_FLOATS);
        for (i, f) in form.frames.iter().enumerate() {
            if f.len() != FRAME_FLOATS {
                return Err(Error::InvalidFile(format!("frame {i} has {} values", f.len())));
            }
            payload.extend_from_slice(f);
        }
        Ok(Self { fps: form.fps, skeleton_hash, payload })
    }

    /// Writes binary for `.samf` paths and JSON for `.json` paths.
    pub fn write(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => std::fs::write(path, self.to_json())?,
            _ => std::fs::write(path, self.to_bytes())?,
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&std::fs::read_to_string(path)?),
            _ => Self::from_bytes(&std::fs::read(path)?),
        }
    }
}
