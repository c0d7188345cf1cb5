//! Binary containers: RAWK (k-space), TRAJ (trajectory), IMGS (images) and
//! MASK (labels).
//!
//! Each file is a 4-byte magic, a `u32` version, a `u32`-length-prefixed
//! JSON header, a little-endian payload and a CRC32 of all preceding bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::acquisition::RawAcquisition;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;
use crate::types::{label, ImageSeries, SegmentationMask, C32, C64};

pub const VERSION: u32 = 1;

/// Writes to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Bounds-checked little-endian reader over a CRC-verified body.
pub struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
    source: String,
}

impl<'a> Cursor<'a> {
    /// Verifies the trailing CRC32 and reads everything before it.
    pub fn with_crc(bytes: &'a [u8], source: &str) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format {
                path: source.into(),
                offset: 0,
                message: format!("file too short ({} bytes)", bytes.len()),
            });
        }
        let split = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[split..].try_into().expect("four bytes"));
        let actual = crc32fast::hash(&bytes[..split]);
        if stored != actual {
            return Err(Error::Format {
                path: source.into(),
                offset: split as u64,
                message: format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}"),
            });
        }
        Ok(Self {
            body: &bytes[..split],
            pos: 0,
            source: source.into(),
        })
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        self.error_at(self.pos, message)
    }

    pub fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.clone(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.body.len())
            .ok_or_else(|| self.error(format!("unexpected end of data reading {n} bytes")))?;
        let out = &self.body[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("two bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("four bytes")))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4)?;
        if got != magic {
            return Err(self.error_at(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    /// Fails unless the whole body was consumed.
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(self.error(format!("{} unexpected trailing bytes", self.body.len() - self.pos)));
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.body.len() - self.pos
    }
}

fn encode<H: Serialize>(magic: &[u8; 4], header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Header and payload cursor of a container.
fn decode<'a, H: DeserializeOwned>(bytes: &'a [u8], magic: &[u8; 4], source: &str) -> Result<(H, Cursor<'a>)> {
    let mut cur = Cursor::with_crc(bytes, source)?;
    cur.expect_magic(magic)?;
    let version = cur.u32()?;
    if version != VERSION {
        return Err(cur.error_at(4, format!("unsupported version {version}")));
    }
    let len = cur.u32()? as usize;
    let at = cur.offset();
    let header = serde_json::from_slice(cur.bytes(len)?).map_err(|e| cur.error_at(at, format!("header JSON: {e}")))?;
    Ok((header, cur))
}

fn payload_f32(cur: &mut Cursor<'_>, n: usize, what: &str) -> Result<Vec<f32>> {
    if cur.remaining() != n * 4 {
        return Err(cur.error(format!(
            "{what} payload holds {} bytes, header implies {}",
            cur.remaining(),
            n * 4
        )));
    }
    Ok(cur
        .bytes(n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

// TRAJ ----------------------------------------------------------------------

pub const TRAJ_MAGIC: &[u8; 4] = b"TRAJ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajHeader {
    pub n_arms: usize,
    pub samples: usize,
    pub units: String,
    pub fov: f64,
    pub dwell_time: f64,
    pub arms_per_frame: usize,
    pub frames_per_orientation: usize,
    pub orientation_offsets: Vec<f64>,
}

pub fn encode_traj(t: &Trajectory) -> Result<Vec<u8>> {
    let header = TrajHeader {
        n_arms: t.n_arms_total(),
        samples: t.samples_per_arm,
        units: "cycles/FOV".into(),
        fov: t.fov,
        dwell_time: t.dwell_time,
        arms_per_frame: t.arms_per_frame,
        frames_per_orientation: t.frames_per_orientation,
        orientation_offsets: t.orientation_offsets.clone(),
    };
    let payload: Vec<u8> =
        t.k.iter()
            .flat_map(|k| [k[0] as f32, k[1] as f32])
            .flat_map(f32::to_le_bytes)
            .collect();
    encode(TRAJ_MAGIC, &header, &payload)
}

pub fn decode_traj(bytes: &[u8], source: &str) -> Result<Trajectory> {
    let (h, mut cur): (TrajHeader, _) = decode(bytes, TRAJ_MAGIC, source)?;
    if h.units != "cycles/FOV" {
        return Err(cur.error_at(12, format!("unsupported units `{}`", h.units)));
    }
    if h.n_arms != h.arms_per_frame * h.orientation_offsets.len() {
        return Err(cur.error_at(12, "n_arms must equal arms_per_frame x orientations"));
    }
    let v = payload_f32(&mut cur, 2 * h.n_arms * h.samples, "trajectory")?;
    Ok(Trajectory {
        fov: h.fov,
        dwell_time: h.dwell_time,
        arms_per_frame: h.arms_per_frame,
        samples_per_arm: h.samples,
        frames_per_orientation: h.frames_per_orientation,
        orientation_offsets: h.orientation_offsets,
        k: v.chunks_exact(2).map(|p| [p[0] as f64, p[1] as f64]).collect(),
    })
}

pub fn write_traj(path: &Path, t: &Trajectory) -> Result<()> {
    atomic_write(path, &encode_traj(t)?)
}

pub fn read_traj(path: &Path) -> Result<Trajectory> {
    decode_traj(&read_file(path)?, &path.display().to_string())
}

// RAWK ----------------------------------------------------------------------

pub const RAWK_MAGIC: &[u8; 4] = b"RAWK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    /// `[n_frames, n_coils, n_arms, samples_per_arm]`
    pub dims: [usize; 4],
    pub n_frames: usize,
    pub n_coils: usize,
    pub n_arms: usize,
    pub samples_per_arm: usize,
    /// µs
    pub dwell_time: f64,
    /// TRAJ file, relative to the RAWK file's directory.
    pub trajectory: String,
    /// ms
    pub frame_dt: f64,
    pub grid_size: usize,
    /// mm
    pub pixel_size: f64,
}

pub fn encode_rawk(raw: &RawAcquisition, trajectory_file: &str) -> Result<Vec<u8>> {
    let d = raw.dims();
    let header = RawHeader {
        dims: [d.n_frames, d.n_coils, d.n_arms, d.samples_per_arm],
        n_frames: d.n_frames,
        n_coils: d.n_coils,
        n_arms: d.n_arms,
        samples_per_arm: d.samples_per_arm,
        dwell_time: d.dwell_time,
        trajectory: trajectory_file.into(),
        frame_dt: d.frame_dt,
        grid_size: d.grid_size,
        pixel_size: d.pixel_size,
    };
    let payload: Vec<u8> = raw
        .data
        .iter()
        .flat_map(|v| [v.re, v.im])
        .flat_map(f32::to_le_bytes)
        .collect();
    encode(RAWK_MAGIC, &header, &payload)
}

pub fn decode_rawk_header(bytes: &[u8], source: &str) -> Result<RawHeader> {
    Ok(decode::<RawHeader>(bytes, RAWK_MAGIC, source)?.0)
}

/// Rebuilds the acquisition given the trajectory the header refers to.
pub fn decode_rawk(bytes: &[u8], source: &str, trajectory: Trajectory) -> Result<RawAcquisition> {
    let (h, mut cur): (RawHeader, _) = decode(bytes, RAWK_MAGIC, source)?;
    if h.dims != [h.n_frames, h.n_coils, h.n_arms, h.samples_per_arm] {
        return Err(cur.error_at(12, "dims disagree with the named counts"));
    }
    if trajectory.arms_per_frame != h.n_arms || trajectory.samples_per_arm != h.samples_per_arm {
        return Err(cur.error_at(
            12,
            format!(
                "trajectory has {} arms of {} samples, data {} of {}",
                trajectory.arms_per_frame, trajectory.samples_per_arm, h.n_arms, h.samples_per_arm
            ),
        ));
    }
    let n = h.n_frames * h.n_coils * h.n_arms * h.samples_per_arm;
    let v = payload_f32(&mut cur, 2 * n, "k-space")?;
    let data = v.chunks_exact(2).map(|p| C32::new(p[0], p[1])).collect();
    RawAcquisition::new(
        trajectory,
        h.n_frames,
        h.n_coils,
        h.frame_dt,
        h.grid_size,
        h.pixel_size,
        data,
    )
}

/// Writes the RAWK file; `trajectory_file` is recorded as given.
pub fn write_rawk(path: &Path, raw: &RawAcquisition, trajectory_file: &str) -> Result<()> {
    atomic_write(path, &encode_rawk(raw, trajectory_file)?)
}

/// Reads a RAWK file and the TRAJ file it names.
pub fn read_rawk(path: &Path) -> Result<RawAcquisition> {
    let bytes = read_file(path)?;
    let source = path.display().to_string();
    let header = decode_rawk_header(&bytes, &source)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let traj_path = dir.join(&header.trajectory);
    let traj = read_traj(&traj_path).map_err(|e| match e {
        Error::Io(io) => Error::Format {
            path: source.clone(),
            // start of the JSON header that names the file
            offset: 12,
            message: format!("trajectory {}: {}", header.trajectory, io.kind()),
        },
        other => other,
    })?;
    decode_rawk(&bytes, &source, traj)
}

// IMGS ----------------------------------------------------------------------

pub const IMGS_MAGIC: &[u8; 4] = b"IMGS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageHeader {
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub n_frames: usize,
    pub n_slices: usize,
    pub n_coils: usize,
    pub dtype: Dtype,
    /// mm
    pub pixel_size: f64,
    /// mm
    pub slice_thickness: f64,
}

impl ImageHeader {
    pub fn count(&self) -> usize {
        self.height * self.width * self.n_frames * self.n_slices * self.n_coils
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageData {
    F32(Vec<f32>),
    C64(Vec<C32>),
}

/// Image stack stored `[slice][frame][coil][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    pub header: ImageHeader,
    pub data: ImageData,
}

impl ImageStack {
    pub fn new(header: ImageHeader, data: ImageData) -> Result<Self> {
        let (len, dtype) = match &data {
            ImageData::F32(v) => (v.len(), Dtype::F32),
            ImageData::C64(v) => (v.len(), Dtype::C64),
        };
        if dtype != header.dtype {
            return Err(Error::InvalidConfig("image dtype disagrees with its data".into()));
        }
        if len != header.count() {
            return Err(Error::shape("image stack", header.count(), len));
        }
        Ok(Self { header, data })
    }

    pub fn from_series(series: &ImageSeries<f64>) -> Self {
        Self {
            header: ImageHeader {
                height: series.height,
                width: series.width,
                n_frames: series.n_frames,
                n_slices: series.n_slices,
                n_coils: 1,
                dtype: Dtype::F32,
                pixel_size: series.pixel_size,
                slice_thickness: series.slice_thickness,
            },
            data: ImageData::F32(series.data.iter().map(|&v| v as f32).collect()),
        }
    }

    /// Single-slice complex frames.
    pub fn from_complex_frames(frames: &[Array2<C64>], pixel_size: f64, slice_thickness: f64) -> Result<Self> {
        let (h, w) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
        if frames.iter().any(|f| f.dim() != (h, w)) {
            return Err(Error::InvalidConfig("frames differ in size".into()));
        }
        let data = frames
            .iter()
            .flat_map(|f| f.iter().map(|v| C32::new(v.re as f32, v.im as f32)))
            .collect();
        Self::new(
            ImageHeader {
                height: h,
                width: w,
                n_frames: frames.len(),
                n_slices: 1,
                n_coils: 1,
                dtype: Dtype::C64,
                pixel_size,
                slice_thickness,
            },
            ImageData::C64(data),
        )
    }

    /// Magnitude series, one coil, as `f64`.
    pub fn to_series(&self) -> Result<ImageSeries<f64>> {
        let h = &self.header;
        if h.n_coils != 1 {
            return Err(Error::InvalidConfig(format!(
                "expected one coil, stack has {}",
                h.n_coils
            )));
        }
        let data = match &self.data {
            ImageData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ImageData::C64(v) => v.iter().map(|x| x.norm() as f64).collect(),
        };
        Ok(ImageSeries {
            height: h.height,
            width: h.width,
            n_frames: h.n_frames,
            n_slices: h.n_slices,
            pixel_size: h.pixel_size,
            slice_thickness: h.slice_thickness,
            data,
        })
    }

    /// Complex frames of slice 0, coil 0.
    pub fn complex_frames(&self) -> Vec<Array2<C64>> {
        let h = &self.header;
        let len = h.height * h.width;
        let stride = len * h.n_coils;
        (0..h.n_frames)
            .map(|f| {
                let o = f * stride;
                let v: Vec<C64> = match &self.data {
                    ImageData::F32(d) => d[o..o + len].iter().map(|&x| C64::new(x as f64, 0.0)).collect(),
                    ImageData::C64(d) => d[o..o + len]
                        .iter()
                        .map(|x| C64::new(x.re as f64, x.im as f64))
                        .collect(),
                };
                Array2::from_shape_vec((h.height, h.width), v).expect("frame shape")
            })
            .collect()
    }
}

pub fn encode_imgs(stack: &ImageStack) -> Result<Vec<u8>> {
    let payload: Vec<u8> = match &stack.data {
        ImageData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        ImageData::C64(v) => v.iter().flat_map(|x| [x.re, x.im]).flat_map(f32::to_le_bytes).collect(),
    };
    encode(IMGS_MAGIC, &stack.header, &payload)
}

pub fn decode_imgs(bytes: &[u8], source: &str) -> Result<ImageStack> {
    let (h, mut cur): (ImageHeader, _) = decode(bytes, IMGS_MAGIC, source)?;
    let n = h.count();
    let data = match h.dtype {
        Dtype::F32 => ImageData::F32(payload_f32(&mut cur, n, "image")?),
        Dtype::C64 => ImageData::C64(
            payload_f32(&mut cur, 2 * n, "image")?
                .chunks_exact(2)
                .map(|p| C32::new(p[0], p[1]))
                .collect(),
        ),
    };
    ImageStack::new(h, data)
}

pub fn write_imgs(path: &Path, stack: &ImageStack) -> Result<()> {
    atomic_write(path, &encode_imgs(stack)?)
}

pub fn read_imgs(path: &Path) -> Result<ImageStack> {
    decode_imgs(&read_file(path)?, &path.display().to_string())
}

// MASK ----------------------------------------------------------------------

pub const MASK_MAGIC: &[u8; 4] = b"MASK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub n_frames: usize,
    pub n_slices: usize,
    pub n_coils: usize,
    pub dtype: String,
    pub pixel_size: f64,
    pub slice_thickness: f64,
    /// Label value to name.
    pub labels: Vec<(u8, String)>,
}

pub fn encode_mask(mask: &SegmentationMask) -> Result<Vec<u8>> {
    let header = MaskHeader {
        height: mask.height,
        width: mask.width,
        n_frames: mask.n_frames,
        n_slices: mask.n_slices,
        n_coils: 1,
        dtype: "u8".into(),
        pixel_size: mask.pixel_size,
        slice_thickness: mask.slice_thickness,
        labels: label::NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u8, n.to_string()))
            .collect(),
    };
    encode(MASK_MAGIC, &header, &mask.data)
}

pub fn decode_mask(bytes: &[u8], source: &str) -> Result<SegmentationMask> {
    let (h, mut cur): (MaskHeader, _) = decode(bytes, MASK_MAGIC, source)?;
    if h.dtype != "u8" || h.n_coils != 1 {
        return Err(cur.error_at(
            12,
            format!("expected u8 single-coil labels, got {} x{}", h.dtype, h.n_coils),
        ));
    }
    let n = h.height * h.width * h.n_frames * h.n_slices;
    if cur.remaining() != n {
        return Err(cur.error(format!(
            "mask payload holds {} bytes, header implies {n}",
            cur.remaining()
        )));
    }
    let at = cur.offset();
    let data = cur.bytes(n)?.to_vec();
    if let Some(i) = data.iter().position(|&v| v as usize >= label::COUNT) {
        return Err(cur.error_at(at + i, format!("label {} out of range", data[i])));
    }
    Ok(SegmentationMask {
        height: h.height,
        width: h.width,
        n_frames: h.n_frames,
        n_slices: h.n_slices,
        pixel_size: h.pixel_size,
        slice_thickness: h.slice_thickness,
        data,
    })
}

pub fn write_mask(path: &Path, mask: &SegmentationMask) -> Result<()> {
    atomic_write(path, &encode_mask(mask)?)
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    decode_mask(&read_file(path)?, &path.display().to_string())
}
