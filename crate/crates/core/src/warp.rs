//! Block-translation spatial transformer: grid generation from per-block MVs
//! and bilinear sampling with border clamping.

use cbt_tensor::ops::{add, slice_channels, upsample_nearest};
use cbt_tensor::{Backward, Graph, Scalar, Tensor, TensorError, Var};

use crate::error::{dims_err, Result};
use crate::frame::Frame;
use crate::mv::{MvField, MvFieldSet, RefDir, BLOCK_SIZES};
use crate::triplet::FrameTriplet;

/// Source coordinates per output pixel, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub width: usize,
    pub height: usize,
    /// Vertical source coordinate.
    pub ty: Vec<f32>,
    /// Horizontal source coordinate.
    pub tx: Vec<f32>,
}

impl SamplingGrid {
    pub fn identity(width: usize, height: usize) -> Self {
        let mut ty = Vec::with_capacity(width * height);
        let mut tx = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                ty.push(y as f32);
                tx.push(x as f32);
            }
        }
        Self { width, height, ty, tx }
    }
}

/// Identity grid plus the nearest-neighbour upsampled MVs of reference `dir`.
pub fn generate_grid(field: &MvField, width: usize, height: usize, dir: RefDir) -> Result<SamplingGrid> {
    let s = field.block_size;
    if s == 0 || width % s != 0 || height % s != 0 || field.rows != height / s || field.cols != width / s {
        return Err(dims_err(
            "generate_grid",
            "mv field",
            format!(
                "{}x{}x4 for {width}x{height} with {s}px blocks",
                height / s.max(1),
                width / s.max(1)
            ),
            format!("{}x{}x4", field.rows, field.cols),
        ));
    }
    let mut grid = SamplingGrid::identity(width, height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = field.mv(y / s, x / s, dir);
            let i = y * width + x;
            grid.ty[i] += u;
            grid.tx[i] += v;
        }
    }
    Ok(grid)
}

/// Bilinear cell for coordinate `t` on an axis of length `n`.
///
/// Returns `(i0, i1, frac, inside)`: the clamped coordinate is
/// `i0 + frac` with `frac` in `[0, 1]`; at lattice points the cell to the
/// left/top is used. `inside` is false when `t` was clamped.
#[inline]
fn cell<T: Scalar>(t: T, n: usize) -> (usize, usize, T, bool) {
    let hi = T::from_usize_lossy(n - 1);
    let inside = t >= T::zero() && t <= hi;
    let c = t.max(T::zero()).min(hi);
    let i0 = (c.ceil() - T::one()).max(T::zero());
    let frac = c - i0;
    let i0 = i0.to_usize().unwrap_or(0);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, frac, inside)
}

#[inline]
fn sample<T: Scalar>(src: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let (y0, y1, fy, _) = cell(y, h);
    let (x0, x1, fx, _) = cell(x, w);
    let one = T::one();
    let top = (one - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
    let bot = (one - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
    (one - fy) * top + fy * bot
}

/// Samples `reference` at every grid position.
pub fn bilinear_sample_frame(reference: &Frame, grid: &SamplingGrid) -> Result<Frame> {
    let (h, w) = (reference.height(), reference.width());
    let data = grid
        .ty
        .iter()
        .zip(&grid.tx)
        .map(|(&y, &x)| sample(reference.data(), h, w, y, x))
        .collect();
    Frame::new(grid.width, grid.height, data)
}

struct SampleBackward;

impl<T: Scalar> Backward<T> for SampleBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (src, grid) = (inputs[0], inputs[1]);
        let (n, _, sh, sw) = src.nchw("bilinear_sample").expect("checked in forward");
        let (_, _, oh, ow) = grid.nchw("bilinear_sample").expect("checked in forward");
        let mut g_src = Tensor::zeros(src.dims());
        let mut g_grid = Tensor::zeros(grid.dims());
        let one = T::one();
        let (splane, oplane) = (sh * sw, oh * ow);
        for b in 0..n {
            let s = &src.data()[b * splane..(b + 1) * splane];
            let gs = &mut g_src.data_mut()[b * splane..(b + 1) * splane];
            let go = &g.data()[b * oplane..(b + 1) * oplane];
            let gd = &grid.data()[b * 2 * oplane..(b + 1) * 2 * oplane];
            let mut gy_acc = vec![T::zero(); oplane];
            let mut gx_acc = vec![T::zero(); oplane];
            for i in 0..oplane {
                let up = go[i];
                if up == T::zero() {
                    continue;
                }
                let (y0, y1, fy, in_y) = cell(gd[i], sh);
                let (x0, x1, fx, in_x) = cell(gd[oplane + i], sw);
                let (a, bb, c, d) = (s[y0 * sw + x0], s[y0 * sw + x1], s[y1 * sw + x0], s[y1 * sw + x1]);
                gs[y0 * sw + x0] += up * (one - fy) * (one - fx);
                gs[y0 * sw + x1] += up * (one - fy) * fx;
                gs[y1 * sw + x0] += up * fy * (one - fx);
                gs[y1 * sw + x1] += up * fy * fx;
                if in_y {
                    let top = (one - fx) * a + fx * bb;
                    let bot = (one - fx) * c + fx * d;
                    gy_acc[i] = up * (bot - top);
                }
                if in_x {
                    gx_acc[i] = up * ((one - fy) * (bb - a) + fy * (d - c));
                }
            }
            let gg = &mut g_grid.data_mut()[b * 2 * oplane..(b + 1) * 2 * oplane];
            gg[..oplane].copy_from_slice(&gy_acc);
            gg[oplane..].copy_from_slice(&gx_acc);
        }
        vec![Some(g_src), Some(g_grid)]
    }
}

/// Differentiable sampler.
///
/// `reference` is `N x 1 x H x W`; `grid` is `N x 2 x H' x W'` holding the
/// vertical then horizontal source coordinate of every output pixel.
/// Coordinates outside the frame are clamped to the border, where the
/// coordinate gradient is zero.
pub fn bilinear_sample<T: Scalar>(g: &mut Graph<T>, reference: Var, grid: Var) -> cbt_tensor::Result<Var> {
    let (n, c, sh, sw) = g.value(reference).nchw("bilinear_sample")?;
    let (gn, gc, oh, ow) = g.value(grid).nchw("bilinear_sample")?;
    if c != 1 || gc != 2 || gn != n {
        return Err(TensorError::ShapeMismatch {
            op: "bilinear_sample",
            dim: "batch/channels".into(),
            expected: format!("reference Nx1, grid Nx2 with N={n}"),
            actual: format!("reference {n}x{c}, grid {gn}x{gc}"),
        });
    }
    let src = g.value(reference).data();
    let gd = g.value(grid).data();
    let (splane, oplane) = (sh * sw, oh * ow);
    let mut out = Vec::with_capacity(n * oplane);
    for b in 0..n {
        let s = &src[b * splane..(b + 1) * splane];
        let gy = &gd[b * 2 * oplane..b * 2 * oplane + oplane];
        let gx = &gd[b * 2 * oplane + oplane..(b + 1) * 2 * oplane];
        out.extend(gy.iter().zip(gx).map(|(&y, &x)| sample(s, sh, sw, y, x)));
    }
    let out = Tensor::from_vec(&[n, 1, oh, ow], out)?;
    g.record("bilinear_sample", out, &[reference, grid], Box::new(SampleBackward))
}

/// `N x 2 x H x W` identity coordinates.
pub fn identity_grid<T: Scalar>(n: usize, h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        for y in 0..h {
            data.extend(std::iter::repeat(T::from_usize_lossy(y)).take(w));
        }
        for _ in 0..h {
            data.extend((0..w).map(T::from_usize_lossy));
        }
    }
    Tensor::from_vec(&[n, 2, h, w], data).expect("identity grid dims")
}

/// Grid for reference `dir` from a `N x 4 x H/S x W/S` MV output.
pub fn grid_from_mvs<T: Scalar>(g: &mut Graph<T>, mvs: Var, block_size: usize, dir: RefDir) -> cbt_tensor::Result<Var> {
    let base = 2 * dir.index();
    let mv = slice_channels(g, mvs, base, base + 2)?;
    let up = upsample_nearest(g, mv, block_size)?;
    let (n, _, h, w) = g.value(up).nchw("grid_from_mvs")?;
    let id = g.constant(identity_grid(n, h, w));
    add(g, id, up)
}

/// Eight predicted frames, indexed `[reference][size]` with sizes ordered
/// like [`BLOCK_SIZES`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub frames: [[Frame; 4]; 2],
}

impl PredictionSet {
    pub fn get(&self, dir: RefDir, block_size: usize) -> Result<&Frame> {
        Ok(&self.frames[dir.index()][crate::mv::size_index(block_size)?])
    }
}

pub fn predict_frames(triplet: &FrameTriplet, mvs: &MvFieldSet) -> Result<PredictionSet> {
    mvs.validate()?;
    if mvs.width != triplet.width() || mvs.height != triplet.height() {
        return Err(dims_err(
            "predict_frames",
            "frame dims",
            format!("{}x{}", triplet.width(), triplet.height()),
            format!("{}x{}", mvs.width, mvs.height),
        ));
    }
    let (w, h) = (triplet.width(), triplet.height());
    let one = |dir: RefDir, si: usize| -> Result<Frame> {
        let grid = generate_grid(&mvs.fields[si], w, h, dir)?;
        bilinear_sample_frame(triplet.reference(dir), &grid)
    };
    let mut frames: Vec<[Frame; 4]> = Vec::with_capacity(2);
    for dir in RefDir::BOTH {
        let per = [one(dir, 0)?, one(dir, 1)?, one(dir, 2)?, one(dir, 3)?];
        frames.push(per);
    }
    let future = frames.pop().expect("two references");
    let past = frames.pop().expect("two references");
    debug_assert_eq!(BLOCK_SIZES.len(), 4);
    Ok(PredictionSet { frames: [past, future] })
}

/// Differentiable counterpart of [`predict_frames`]: `refs` are the
/// `N x 1 x H x W` past and future references, `mvs[i]` the model output for
/// `BLOCK_SIZES[i]`. Returns `[reference][size]`.
pub fn predict_frames_graph<T: Scalar>(
    g: &mut Graph<T>,
    refs: [Var; 2],
    mvs: &[Var; 4],
) -> cbt_tensor::Result<[[Var; 4]; 2]> {
    let mut out = [[refs[0]; 4]; 2];
    for dir in RefDir::BOTH {
        for (si, &s) in BLOCK_SIZES.iter().enumerate() {
            let grid = grid_from_mvs(g, mvs[si], s, dir)?;
            out[dir.index()][si] = bilinear_sample(g, refs[dir.index()], grid)?;
        }
    }
    Ok(out)
}
