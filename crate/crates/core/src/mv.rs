//! Per-block motion vector fields.
//!
//! Components are `(u, v)`: `u` is the vertical displacement (positive
//! down), `v` the horizontal one (positive right), both in pixels.

use cbt_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{dims_err, invalid, Result};

/// Block sizes served by the model, coarsest first.
pub const BLOCK_SIZES: [usize; 4] = [64, 32, 16, 8];

/// Largest admissible MV component magnitude.
pub const MV_CLIP: f32 = 127.0;

/// Reference frame index: 0 = past, 1 = future.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefDir {
    Past,
    Future,
}

impl RefDir {
    pub const BOTH: [RefDir; 2] = [RefDir::Past, RefDir::Future];

    pub fn index(self) -> usize {
        match self {
            RefDir::Past => 0,
            RefDir::Future => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            RefDir::Past => "p",
            RefDir::Future => "f",
        }
    }
}

pub fn size_index(block_size: usize) -> Result<usize> {
    BLOCK_SIZES
        .iter()
        .position(|&s| s == block_size)
        .ok_or_else(|| invalid("block size", format!("{block_size} is not one of {BLOCK_SIZES:?}")))
}

/// Integer full-pel motion vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Mv {
    pub u: i32,
    pub v: i32,
}

impl Mv {
    pub const ZERO: Mv = Mv { u: 0, v: 0 };

    pub fn new(u: i32, v: i32) -> Self {
        Self { u, v }
    }

    pub fn l1(self) -> i32 {
        self.u.abs() + self.v.abs()
    }
}

/// One `rows x cols` grid of integer MVs for blocks of `block_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntMvField {
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub mvs: Vec<Mv>,
}

impl IntMvField {
    pub fn zeros(block_size: usize, rows: usize, cols: usize) -> Self {
        Self {
            block_size,
            rows,
            cols,
            mvs: vec![Mv::ZERO; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Mv {
        self.mvs[r * self.cols + c]
    }
}

/// Real-valued field with four channels `[u_P, v_P, u_F, v_F]` per block,
/// stored channel-last as `rows x cols x 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvField {
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl MvField {
    pub fn zeros(block_size: usize, rows: usize, cols: usize) -> Self {
        Self {
            block_size,
            rows,
            cols,
            data: vec![0.0; rows * cols * 4],
        }
    }

    /// Channel-last `rows x cols x 4` dims.
    pub fn dims(&self) -> [usize; 3] {
        [self.rows, self.cols, 4]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, ch: usize) -> f32 {
        self.data[(r * self.cols + c) * 4 + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, value: f32) {
        self.data[(r * self.cols + c) * 4 + ch] = value;
    }

    /// `(u, v)` of block `(r, c)` towards reference `dir`.
    pub fn mv(&self, r: usize, c: usize, dir: RefDir) -> (f32, f32) {
        let base = 2 * dir.index();
        (self.at(r, c, base), self.at(r, c, base + 1))
    }

    pub fn set_mv(&mut self, r: usize, c: usize, dir: RefDir, mv: (f32, f32)) {
        let base = 2 * dir.index();
        self.set(r, c, base, mv.0);
        self.set(r, c, base + 1, mv.1);
    }

    /// Reads batch element `n` of a `N x 4 x rows x cols` tensor.
    pub fn from_tensor(t: &Tensor<f32>, n: usize, block_size: usize) -> Result<Self> {
        let (batch, ch, rows, cols) = t.nchw("mv field")?;
        if ch != 4 {
            return Err(dims_err("mv field", "channels", 4, ch));
        }
        if n >= batch {
            return Err(dims_err("mv field", "batch index", format!("< {batch}"), n));
        }
        let mut out = Self::zeros(block_size, rows, cols);
        for c in 0..4 {
            for y in 0..rows {
                for x in 0..cols {
                    out.set(y, x, c, t.at4(n, c, y, x));
                }
            }
        }
        Ok(out)
    }

    /// `1 x 4 x rows x cols` tensor view.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut t = Tensor::zeros(&[1, 4, self.rows, self.cols]);
        for c in 0..4 {
            for y in 0..self.rows {
                for x in 0..self.cols {
                    t.set4(0, c, y, x, self.at(y, x, c));
                }
            }
        }
        t
    }

    /// The two-channel plane of one reference as an integer field, rounding
    /// to the nearest full pel.
    pub fn to_int(&self, dir: RefDir) -> IntMvField {
        let mut out = IntMvField::zeros(self.block_size, self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (u, v) = self.mv(r, c, dir);
                out.mvs[r * self.cols + c] = Mv::new(u.round() as i32, v.round() as i32);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// MV fields for 64, 32, 16 and 8 pixel blocks of one `width x height` frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvFieldSet {
    pub width: usize,
    pub height: usize,
    /// Indexed like [`BLOCK_SIZES`].
    pub fields: [MvField; 4],
}

impl MvFieldSet {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_aligned(width, height, "mv field set")?;
        Ok(Self {
            width,
            height,
            fields: BLOCK_SIZES.map(|s| MvField::zeros(s, height / s, width / s)),
        })
    }

    pub fn field(&self, block_size: usize) -> Result<&MvField> {
        Ok(&self.fields[size_index(block_size)?])
    }

    pub fn field_mut(&mut self, block_size: usize) -> Result<&mut MvField> {
        Ok(&mut self.fields[size_index(block_size)?])
    }

    /// Checks every field against the `(H/S) x (W/S) x 4` dimension rule.
    pub fn validate(&self) -> Result<()> {
        check_aligned(self.width, self.height, "mv field set")?;
        for (f, &s) in self.fields.iter().zip(&BLOCK_SIZES) {
            let want = [self.height / s, self.width / s, 4];
            if f.block_size != s || f.dims() != want || f.data.len() != want.iter().product::<usize>() {
                return Err(dims_err(
                    "mv field set",
                    format!("m{s}"),
                    format!("{want:?}"),
                    format!("{:?}", f.dims()),
                ));
            }
        }
        Ok(())
    }

    /// Builds a set from integer fields, `per_size[i] = (past, future)` for `BLOCK_SIZES[i]`.
    pub fn from_int(width: usize, height: usize, per_size: &[(IntMvField, IntMvField); 4]) -> Result<Self> {
        let mut out = Self::zeros(width, height)?;
        for (f, (p, fu)) in out.fields.iter_mut().zip(per_size) {
            for (dir, src) in [(RefDir::Past, p), (RefDir::Future, fu)] {
                if src.rows != f.rows || src.cols != f.cols || src.block_size != f.block_size {
                    return Err(dims_err(
                        "mv field set",
                        format!("m{}", f.block_size),
                        format!("{}x{}", f.rows, f.cols),
                        format!("{}x{}", src.rows, src.cols),
                    ));
                }
                for r in 0..f.rows {
                    for c in 0..f.cols {
                        let mv = src.get(r, c);
                        f.set_mv(r, c, dir, (mv.u as f32, mv.v as f32));
                    }
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_aligned(width: usize, height: usize, op: &'static str) -> Result<()> {
    if width == 0 || height == 0 || width % 64 != 0 || height % 64 != 0 {
        return Err(invalid(
            op,
            format!("frame {width}x{height} is not a positive multiple of 64"),
        ));
    }
    Ok(())
}
