//! Luma extraction from Y4M and raw planar 4:2:0 files.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoFormat {
    Y4m,
    Raw,
}

/// Random access to the luma planes of a video file.
#[derive(Debug)]
pub struct LumaReader {
    path: PathBuf,
    file: File,
    width: usize,
    height: usize,
    bytes_per_sample: usize,
    bit_depth: u32,
    /// Byte offset of every luma plane.
    offsets: Vec<u64>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path, what: &str) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{what} {}", path.display());
    move |source| Error::Io { context, source }
}

/// Splits a Y4M colourspace tag into its base and bit depth (`420p10` ->
/// `("420", 10)`).
fn split_tag(tag: &str) -> (&str, u32) {
    if tag == "mono16" {
        return ("mono", 16);
    }
    match tag.rfind('p') {
        Some(i) if i + 1 < tag.len() && tag[i + 1..].chars().all(|c| c.is_ascii_digit()) => {
            (&tag[..i], tag[i + 1..].parse().unwrap_or(8))
        }
        _ => (tag, 8),
    }
}

/// Chroma plane sizes relative to luma for a Y4M colourspace tag.
fn chroma_samples(tag: &str, w: usize, h: usize) -> Option<usize> {
    let (cw, ch) = ((w + 1) / 2, (h + 1) / 2);
    match split_tag(tag).0 {
        "420" | "420jpeg" | "420mpeg2" | "420paldv" => Some(2 * cw * ch),
        "422" => Some(2 * cw * h),
        "444" => Some(2 * w * h),
        "444alpha" => Some(3 * w * h),
        "mono" => Some(0),
        _ => None,
    }
}

impl LumaReader {
    /// Opens `path`. Raw files need `dims`; for Y4M, `dims` (when given)
    /// must agree with the header.
    pub fn open(path: &Path, format: VideoFormat, dims: Option<(usize, usize)>) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path, "opening"))?;
        let len = file.metadata().map_err(io_err(path, "inspecting"))?.len();
        match format {
            VideoFormat::Raw => {
                let (w, h) = dims.ok_or_else(|| format_err(path, "raw input requires explicit width and height"))?;
                if w == 0 || h == 0 {
                    return Err(format_err(path, format!("invalid dims {w}x{h}")));
                }
                let frame = (w * h + 2 * ((w + 1) / 2) * ((h + 1) / 2)) as u64;
                if len % frame != 0 {
                    return Err(format_err(
                        path,
                        format!(
                            "size {len} bytes is not a whole number of {w}x{h} 4:2:0 frames ({frame} bytes each): expected {} bytes, got {len}",
                            (len / frame + 1) * frame
                        ),
                    ));
                }
                Ok(Self {
                    path: path.to_path_buf(),
                    file,
                    width: w,
                    height: h,
                    bytes_per_sample: 1,
                    bit_depth: 8,
                    offsets: (0..len / frame).map(|i| i * frame).collect(),
                })
            }
            VideoFormat::Y4m => Self::open_y4m(path, file, len, dims),
        }
    }

    fn open_y4m(path: &Path, file: File, len: u64, dims: Option<(usize, usize)>) -> Result<Self> {
        let mut rd = BufReader::new(file);
        let mut line = Vec::new();
        rd.read_until(b'\n', &mut line).map_err(io_err(path, "reading"))?;
        if !line.ends_with(b"\n") {
            return Err(format_err(path, "unterminated Y4M stream header"));
        }
        let header = String::from_utf8_lossy(&line[..line.len() - 1]).into_owned();
        let mut tokens = header.split(' ');
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(format_err(path, "missing YUV4MPEG2 signature"));
        }
        let (mut w, mut h, mut tag) = (None, None, "420jpeg".to_string());
        for t in tokens.filter(|t| !t.is_empty()) {
            let (key, val) = t.split_at(1);
            match key {
                "W" => w = val.parse::<usize>().ok(),
                "H" => h = val.parse::<usize>().ok(),
                "C" => tag = val.to_string(),
                _ => {}
            }
        }
        let (w, h) = match (w, h) {
            (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(format_err(path, format!("header lacks valid W/H: {header:?}"))),
        };
        if let Some((dw, dh)) = dims {
            if (dw, dh) != (w, h) {
                return Err(format_err(
                    path,
                    format!("header declares {w}x{h}, manifest says {dw}x{dh}"),
                ));
            }
        }
        let chroma =
            chroma_samples(&tag, w, h).ok_or_else(|| format_err(path, format!("unsupported colourspace C{tag}")))?;
        let depth = split_tag(&tag).1;
        let bps = if depth > 8 { 2 } else { 1 };
        let payload = ((w * h + chroma) * bps) as u64;
        let mut offsets = Vec::new();
        let mut pos = line.len() as u64;
        let mut file = rd.into_inner();
        while pos < len {
            file.seek(SeekFrom::Start(pos)).map_err(io_err(path, "seeking"))?;
            let mut rd = BufReader::new(&mut file);
            let mut fl = Vec::new();
            rd.read_until(b'\n', &mut fl).map_err(io_err(path, "reading"))?;
            if !fl.starts_with(b"FRAME") || !fl.ends_with(b"\n") {
                return Err(format_err(path, format!("malformed frame header at byte {pos}")));
            }
            let start = pos + fl.len() as u64;
            if start + payload > len {
                return Err(format_err(
                    path,
                    format!(
                        "truncated frame {}: expected {payload} bytes at offset {start}, file has {} remaining",
                        offsets.len(),
                        len - start
                    ),
                ));
            }
            offsets.push(start);
            pos = start + payload;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            width: w,
            height: h,
            bytes_per_sample: bps,
            bit_depth: depth,
            offsets,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.offsets.len()
    }

    /// Luma plane `i`; samples above 8 bits keep their most significant 8 bits.
    pub fn read_frame(&mut self, i: usize) -> Result<Frame> {
        let off = *self.offsets.get(i).ok_or_else(|| {
            format_err(
                &self.path,
                format!("frame {i} requested, file has {}", self.offsets.len()),
            )
        })?;
        let n = self.width * self.height;
        let mut buf = vec![0u8; n * self.bytes_per_sample];
        self.file
            .seek(SeekFrom::Start(off))
            .map_err(io_err(&self.path, "seeking"))?;
        self.file.read_exact(&mut buf).map_err(io_err(&self.path, "reading"))?;
        let data = if self.bytes_per_sample == 1 {
            buf.iter().map(|&b| f32::from(b)).collect()
        } else {
            let shift = self.bit_depth - 8;
            buf.chunks_exact(2)
                .map(|c| f32::from(((u16::from_le_bytes([c[0], c[1]]) >> shift) & 0xff) as u8))
                .collect()
        };
        Frame::new(self.width, self.height, data)
    }
}

/// Reads every luma plane of a file in display order.
pub fn read_luma(path: &Path, format: VideoFormat, dims: Option<(usize, usize)>) -> Result<Vec<Frame>> {
    let mut r = LumaReader::open(path, format, dims)?;
    (0..r.frame_count()).map(|i| r.read_frame(i)).collect()
}

/// Serialises 8-bit frames as a 4:2:0 Y4M stream with neutral chroma.
pub fn encode_y4m(frames: &[Frame], fps: u32) -> Vec<u8> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width(), f.height()));
    let mut out = format!("YUV4MPEG2 W{w} H{h} F{fps}:1 Ip A1:1 C420jpeg\n").into_bytes();
    let chroma = 2 * ((w + 1) / 2) * ((h + 1) / 2);
    for f in frames {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(&f.to_u8());
        out.extend(std::iter::repeat(128u8).take(chroma));
    }
    out
}
