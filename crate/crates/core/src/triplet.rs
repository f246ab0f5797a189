use cbt_tensor::Tensor;

use crate::error::{invalid, Result};
use crate::frame::Frame;
use crate::mv::check_aligned;

/// Past reference, current frame and future reference, padded to 64-pixel
/// multiples.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTriplet {
    pub past: Frame,
    pub q: Frame,
    pub future: Frame,
    /// Temporal layer, 1..=4.
    pub layer_k: u8,
    /// Extents before padding.
    pub orig_w: usize,
    pub orig_h: usize,
}

impl FrameTriplet {
    pub fn new(past: Frame, q: Frame, future: Frame, layer_k: u8, orig_w: usize, orig_h: usize) -> Result<Self> {
        q.same_dims(&past, "triplet")?;
        q.same_dims(&future, "triplet")?;
        check_aligned(q.width(), q.height(), "triplet")?;
        if !(1..=4).contains(&layer_k) {
            return Err(invalid("triplet", format!("layer {layer_k} outside 1..=4")));
        }
        if orig_w == 0 || orig_h == 0 || orig_w > q.width() || orig_h > q.height() {
            return Err(invalid(
                "triplet",
                format!(
                    "original extent {orig_w}x{orig_h} not within padded {}x{}",
                    q.width(),
                    q.height()
                ),
            ));
        }
        Ok(Self {
            past,
            q,
            future,
            layer_k,
            orig_w,
            orig_h,
        })
    }

    /// Triplet whose frames are already aligned, with no padding.
    pub fn unpadded(past: Frame, q: Frame, future: Frame, layer_k: u8) -> Result<Self> {
        let (w, h) = (q.width(), q.height());
        Self::new(past, q, future, layer_k, w, h)
    }

    pub fn width(&self) -> usize {
        self.q.width()
    }

    pub fn height(&self) -> usize {
        self.q.height()
    }

    /// Temporal distance between the current frame and either reference.
    pub fn distance(&self) -> usize {
        1 << (4 - self.layer_k)
    }

    pub fn reference(&self, dir: crate::mv::RefDir) -> &Frame {
        match dir {
            crate::mv::RefDir::Past => &self.past,
            crate::mv::RefDir::Future => &self.future,
        }
    }
}

/// Stacks triplets into an `N x 3 x H x W` tensor (channels R_P, Q, R_F),
/// scaled to `[0, 1]`.
pub fn stack_inputs(triplets: &[&FrameTriplet]) -> Result<Tensor<f32>> {
    let first = triplets.first().ok_or_else(|| invalid("stack", "no triplets"))?;
    let (w, h) = (first.width(), first.height());
    let plane = w * h;
    let mut data = Vec::with_capacity(triplets.len() * 3 * plane);
    for t in triplets {
        first.q.same_dims(&t.q, "stack")?;
        for f in [&t.past, &t.q, &t.future] {
            data.extend(f.data().iter().map(|&v| v / 255.0));
        }
    }
    Ok(Tensor::from_vec(&[triplets.len(), 3, h, w], data)?)
}

/// Stacks one frame per triplet into an `N x 1 x H x W` tensor of raw sample values.
pub fn stack_frames(frames: &[&Frame]) -> Result<Tensor<f32>> {
    let first = frames.first().ok_or_else(|| invalid("stack", "no frames"))?;
    let mut data = Vec::with_capacity(frames.len() * first.data().len());
    for f in frames {
        first.same_dims(f, "stack")?;
        data.extend_from_slice(f.data());
    }
    Ok(Tensor::from_vec(
        &[frames.len(), 1, first.height(), first.width()],
        data,
    )?)
}
