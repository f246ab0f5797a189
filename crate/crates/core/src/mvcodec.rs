//! Encoder-facing MV export: quarter-pel quantisation, 32-bit packing,
//! 85-block superblock matrices and the CBMV container.
//!
//! Superblock block order is size-major (one 64, four 32, sixteen 16,
//! sixty-four 8) and raster within each size. A packed word carries the
//! vertical component in the high half and the horizontal one in the low
//! half, both two's complement.

use std::fs;
use std::path::Path;

use crate::checkpoint::write_atomic;
use crate::error::{dims_err, invalid, Error, Result};
use crate::mv::{check_aligned, MvFieldSet, RefDir, BLOCK_SIZES, MV_CLIP};

pub const BLOCKS_PER_SUPERBLOCK: usize = 85;
pub const MAGIC: &[u8; 4] = b"CBMV";
pub const VERSION: u32 = 1;
/// Ordering tag of the size-major, raster-within-size block order.
pub const ORDER_SIZE_MAJOR_RASTER: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct QuarterPelMv {
    pub u_q4: i32,
    pub v_q4: i32,
}

fn quantize_component(x: f32) -> Result<i32> {
    if !x.is_finite() || x.abs() > MV_CLIP {
        return Err(invalid(
            "quantize_mv",
            format!("component {x} outside [-{MV_CLIP}, {MV_CLIP}]"),
        ));
    }
    // f64::round rounds half away from zero.
    Ok((f64::from(x) * 4.0).round() as i32)
}

/// Scales a full-pel MV by four and rounds half away from zero.
pub fn quantize_mv(u: f32, v: f32) -> Result<QuarterPelMv> {
    Ok(QuarterPelMv {
        u_q4: quantize_component(u)?,
        v_q4: quantize_component(v)?,
    })
}

pub fn pack_mv(q: QuarterPelMv) -> Result<u32> {
    let u = i16::try_from(q.u_q4).map_err(|_| invalid("pack_mv", format!("u {} exceeds 16 bits", q.u_q4)))?;
    let v = i16::try_from(q.v_q4).map_err(|_| invalid("pack_mv", format!("v {} exceeds 16 bits", q.v_q4)))?;
    Ok((u32::from(u as u16) << 16) | u32::from(v as u16))
}

pub fn unpack_mv(w: u32) -> QuarterPelMv {
    QuarterPelMv {
        u_q4: i32::from((w >> 16) as u16 as i16),
        v_q4: i32::from(w as u16 as i16),
    }
}

/// `(size index, row offset, col offset)` of superblock slot `k`, offsets
/// in blocks of that size relative to the superblock's first block.
pub fn slot_position(k: usize) -> (usize, usize, usize) {
    let mut base = 0;
    for (si, &s) in BLOCK_SIZES.iter().enumerate() {
        let per_side = 64 / s;
        let n = per_side * per_side;
        if k < base + n {
            let i = k - base;
            return (si, i / per_side, i % per_side);
        }
        base += n;
    }
    panic!("superblock slot {k} out of range");
}

/// Packed MVs of one frame, dims `2 x (W/64) x (H/64) x 85`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSuperblockMvs {
    pub sb_cols: usize,
    pub sb_rows: usize,
    pub words: Vec<u32>,
}

impl PackedSuperblockMvs {
    pub fn dims(&self) -> [usize; 4] {
        [2, self.sb_cols, self.sb_rows, BLOCKS_PER_SUPERBLOCK]
    }

    #[inline]
    pub fn index(&self, reference: usize, sb_col: usize, sb_row: usize, k: usize) -> usize {
        ((reference * self.sb_cols + sb_col) * self.sb_rows + sb_row) * BLOCKS_PER_SUPERBLOCK + k
    }

    pub fn get(&self, reference: usize, sb_col: usize, sb_row: usize, k: usize) -> u32 {
        self.words[self.index(reference, sb_col, sb_row, k)]
    }
}

/// Gathers the 85 constituent block MVs of every superblock, for both references.
pub fn assemble_superblocks(mvs: &MvFieldSet) -> Result<PackedSuperblockMvs> {
    mvs.validate()?;
    let (sb_cols, sb_rows) = (mvs.width / 64, mvs.height / 64);
    let mut out = PackedSuperblockMvs {
        sb_cols,
        sb_rows,
        words: vec![0; 2 * sb_cols * sb_rows * BLOCKS_PER_SUPERBLOCK],
    };
    for dir in RefDir::BOTH {
        for sc in 0..sb_cols {
            for sr in 0..sb_rows {
                for k in 0..BLOCKS_PER_SUPERBLOCK {
                    let (si, dr, dc) = slot_position(k);
                    let per_side = 64 / BLOCK_SIZES[si];
                    let (u, v) = mvs.fields[si].mv(sr * per_side + dr, sc * per_side + dc, dir);
                    let i = out.index(dir.index(), sc, sr, k);
                    out.words[i] = pack_mv(quantize_mv(u, v)?)?;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`assemble_superblocks`]: MVs come back in full-pel units at
/// quarter-pel precision.
pub fn scatter_superblocks(packed: &PackedSuperblockMvs) -> Result<MvFieldSet> {
    let want = 2 * packed.sb_cols * packed.sb_rows * BLOCKS_PER_SUPERBLOCK;
    if packed.words.len() != want {
        return Err(dims_err("scatter_superblocks", "word count", want, packed.words.len()));
    }
    let mut mvs = MvFieldSet::zeros(packed.sb_cols * 64, packed.sb_rows * 64)?;
    for dir in RefDir::BOTH {
        for sc in 0..packed.sb_cols {
            for sr in 0..packed.sb_rows {
                for k in 0..BLOCKS_PER_SUPERBLOCK {
                    let (si, dr, dc) = slot_position(k);
                    let per_side = 64 / BLOCK_SIZES[si];
                    let q = unpack_mv(packed.get(dir.index(), sc, sr, k));
                    mvs.fields[si].set_mv(
                        sr * per_side + dr,
                        sc * per_side + dc,
                        dir,
                        (q.u_q4 as f32 / 4.0, q.v_q4 as f32 / 4.0),
                    );
                }
            }
        }
    }
    Ok(mvs)
}

/// Quantises every component of a field set to quarter-pel precision.
pub fn quantize_fields(mvs: &MvFieldSet) -> Result<MvFieldSet> {
    let mut out = mvs.clone();
    for f in &mut out.fields {
        for x in &mut f.data {
            *x = quantize_component(*x)? as f32 / 4.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MvFileHeader {
    pub width: u32,
    pub height: u32,
    pub ordering: u32,
}

pub fn encode_mv_file(header: &MvFileHeader, frames: &[PackedSuperblockMvs]) -> Result<Vec<u8>> {
    check_aligned(header.width as usize, header.height as usize, "write_mv_file")?;
    let (sb_cols, sb_rows) = (header.width as usize / 64, header.height as usize / 64);
    let count = u32::try_from(frames.len()).map_err(|_| invalid("write_mv_file", "too many frames"))?;
    let mut buf = Vec::with_capacity(24 + frames.len() * 2 * sb_cols * sb_rows * BLOCKS_PER_SUPERBLOCK * 4);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, header.width, header.height, count, header.ordering] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (i, f) in frames.iter().enumerate() {
        if f.sb_cols != sb_cols
            || f.sb_rows != sb_rows
            || f.words.len() != 2 * sb_cols * sb_rows * BLOCKS_PER_SUPERBLOCK
        {
            return Err(dims_err(
                "write_mv_file",
                format!("frame {i}"),
                format!("2x{sb_cols}x{sb_rows}x85"),
                format!("2x{}x{}x85 ({} words)", f.sb_cols, f.sb_rows, f.words.len()),
            ));
        }
        for w in &f.words {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_mv_file(bytes: &[u8], origin: &Path) -> Result<(MvFileHeader, Vec<PackedSuperblockMvs>)> {
    let fail = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < 24 {
        return Err(fail(format!("truncated header: {} of 24 bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}, expected {MAGIC:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    let (version, width, height, count, ordering) = (word(1), word(2), word(3), word(4), word(5));
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}, expected {VERSION}")));
    }
    if ordering != ORDER_SIZE_MAJOR_RASTER {
        return Err(fail(format!("unknown block ordering tag {ordering}")));
    }
    if width == 0 || height == 0 || width % 64 != 0 || height % 64 != 0 {
        return Err(fail(format!("dims {width}x{height} not positive multiples of 64")));
    }
    let (sb_cols, sb_rows) = (width as usize / 64, height as usize / 64);
    let per_frame = 2 * sb_cols * sb_rows * BLOCKS_PER_SUPERBLOCK;
    let expected = (count as usize)
        .checked_mul(per_frame * 4)
        .ok_or_else(|| fail("payload size overflow".into()))?;
    let payload = &bytes[24..];
    if payload.len() != expected {
        return Err(fail(format!(
            "payload of {} bytes does not match {count} frames of {width}x{height} ({expected} bytes)",
            payload.len()
        )));
    }
    let frames = payload
        .chunks_exact(per_frame * 4)
        .map(|chunk| PackedSuperblockMvs {
            sb_cols,
            sb_rows,
            words: chunk
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        })
        .collect();
    Ok((
        MvFileHeader {
            width,
            height,
            ordering,
        },
        frames,
    ))
}

pub fn write_mv_file(path: &Path, header: &MvFileHeader, frames: &[PackedSuperblockMvs]) -> Result<()> {
    write_atomic(path, &encode_mv_file(header, frames)?)
}

pub fn read_mv_file(path: &Path) -> Result<(MvFileHeader, Vec<PackedSuperblockMvs>)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    decode_mv_file(&bytes, path)
}
