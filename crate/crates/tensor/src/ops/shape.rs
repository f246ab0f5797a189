use crate::error::{invalid, mismatch, Result};
use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct ConcatBackward {
    channels: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatBackward {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (n, c_total, h, w) = g.nchw("concat_channels").expect("4-D gradient");
        let plane = h * w;
        let mut out = Vec::with_capacity(self.channels.len());
        let mut offset = 0;
        for &c in &self.channels {
            let mut t = Tensor::zeros(&[n, c, h, w]);
            for b in 0..n {
                let src = &g.data()[(b * c_total + offset) * plane..(b * c_total + offset + c) * plane];
                t.data_mut()[b * c * plane..(b + 1) * c * plane].copy_from_slice(src);
            }
            offset += c;
            out.push(Some(t));
        }
        out
    }
}

/// Concatenates NCHW tensors along the channel axis, preserving order.
pub fn concat_channels<T: Scalar>(g: &mut Graph<T>, inputs: &[Var]) -> Result<Var> {
    let Some(&first) = inputs.first() else {
        return Err(invalid("concat_channels", "no inputs"));
    };
    let (n, _, h, w) = g.value(first).nchw("concat_channels")?;
    let mut channels = Vec::with_capacity(inputs.len());
    for &v in inputs {
        let (vn, vc, vh, vw) = g.value(v).nchw("concat_channels")?;
        if vn != n {
            return Err(mismatch("concat_channels", "batch", n, vn));
        }
        if (vh, vw) != (h, w) {
            return Err(mismatch(
                "concat_channels",
                "spatial extent",
                format!("{h}x{w}"),
                format!("{vh}x{vw}"),
            ));
        }
        channels.push(vc);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c_total * plane);
    for b in 0..n {
        for (&v, &c) in inputs.iter().zip(&channels) {
            data.extend_from_slice(&g.value(v).data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    let out = Tensor::from_vec(&[n, c_total, h, w], data)?;
    g.record("concat_channels", out, inputs, Box::new(ConcatBackward { channels }))
}

struct SliceBackward {
    start: usize,
}

impl<T: Scalar> Backward<T> for SliceBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (n, c_in, h, w) = inputs[0].nchw("slice_channels").expect("4-D input");
        let (_, c, _, _) = g.nchw("slice_channels").expect("4-D gradient");
        let plane = h * w;
        let mut t = Tensor::zeros(&[n, c_in, h, w]);
        for b in 0..n {
            let dst = (b * c_in + self.start) * plane;
            t.data_mut()[dst..dst + c * plane].copy_from_slice(&g.data()[b * c * plane..(b + 1) * c * plane]);
        }
        vec![Some(t)]
    }
}

/// Channels `start..end` of an NCHW tensor.
pub fn slice_channels<T: Scalar>(g: &mut Graph<T>, x: Var, start: usize, end: usize) -> Result<Var> {
    let (n, c_in, h, w) = g.value(x).nchw("slice_channels")?;
    if start >= end || end > c_in {
        return Err(invalid(
            "slice_channels",
            format!("range {start}..{end} outside 0..{c_in}"),
        ));
    }
    let c = end - start;
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c * plane);
    for b in 0..n {
        let src = (b * c_in + start) * plane;
        data.extend_from_slice(&g.value(x).data()[src..src + c * plane]);
    }
    let out = Tensor::from_vec(&[n, c, h, w], data)?;
    g.record("slice_channels", out, &[x], Box::new(SliceBackward { start }))
}

struct CropBackward {
    top: usize,
    left: usize,
}

impl<T: Scalar> Backward<T> for CropBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].nchw("crop").expect("4-D input");
        let (_, _, ch, cw) = g.nchw("crop").expect("4-D gradient");
        let mut t = Tensor::zeros(&[n, c, h, w]);
        for p in 0..n * c {
            for y in 0..ch {
                let dst = (p * h + self.top + y) * w + self.left;
                let src = (p * ch + y) * cw;
                t.data_mut()[dst..dst + cw].copy_from_slice(&g.data()[src..src + cw]);
            }
        }
        vec![Some(t)]
    }
}

/// Spatial window `[top, top+height) x [left, left+width)` of an NCHW tensor.
pub fn crop<T: Scalar>(g: &mut Graph<T>, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
    let (n, c, h, w) = g.value(x).nchw("crop")?;
    if height == 0 || width == 0 || top + height > h || left + width > w {
        return Err(invalid(
            "crop",
            format!("window {height}x{width} at ({top},{left}) outside {h}x{w}"),
        ));
    }
    let src = g.value(x).data();
    let mut data = Vec::with_capacity(n * c * height * width);
    for p in 0..n * c {
        for y in 0..height {
            let s = (p * h + top + y) * w + left;
            data.extend_from_slice(&src[s..s + width]);
        }
    }
    let out = Tensor::from_vec(&[n, c, height, width], data)?;
    g.record("crop", out, &[x], Box::new(CropBackward { top, left }))
}

struct UpsampleBackward {
    factor: usize,
}

impl<T: Scalar> Backward<T> for UpsampleBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (n, c, h, w) = inputs[0].nchw("upsample_nearest").expect("4-D input");
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut t = Tensor::zeros(&[n, c, h, w]);
        let gd = g.data();
        let td = t.data_mut();
        for p in 0..n * c {
            for oy in 0..oh {
                let row = &gd[(p * oh + oy) * ow..(p * oh + oy + 1) * ow];
                let dst = &mut td[(p * h + oy / f) * w..(p * h + oy / f + 1) * w];
                for (ox, &v) in row.iter().enumerate() {
                    dst[ox / f] += v;
                }
            }
        }
        vec![Some(t)]
    }
}

/// Nearest-neighbour upsampling: each value is replicated over a
/// `factor x factor` cell.
pub fn upsample_nearest<T: Scalar>(g: &mut Graph<T>, x: Var, factor: usize) -> Result<Var> {
    if factor == 0 {
        return Err(invalid("upsample_nearest", "factor must be at least 1"));
    }
    let out = upsample_nearest_tensor(g.value(x), factor)?;
    g.record("upsample_nearest", out, &[x], Box::new(UpsampleBackward { factor }))
}

/// Graph-free nearest-neighbour upsampling.
pub fn upsample_nearest_tensor<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw("upsample_nearest")?;
    let f = factor;
    let (oh, ow) = (h * f, w * f);
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for oy in 0..oh {
            let row = &x.data()[(p * h + oy / f) * w..(p * h + oy / f + 1) * w];
            for ox in 0..ow {
                data.push(row[ox / f]);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::elementwise::dot_const;

    #[test]
    fn concat_shapes_and_order() {
        let mut g = Graph::<f32>::new();
        let a = g.param(Tensor::full(&[1, 2, 4, 4], 1.0));
        let b = g.param(Tensor::full(&[1, 3, 4, 4], 2.0));
        let y = concat_channels(&mut g, &[a, b]).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 5, 4, 4]);
        assert_eq!(g.value(y).at4(0, 1, 3, 3), 1.0);
        assert_eq!(g.value(y).at4(0, 2, 0, 0), 2.0);
    }

    #[test]
    fn concat_single_is_identity() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = g.param(t.clone());
        let y = concat_channels(&mut g, &[a]).unwrap();
        assert_eq!(g.value(y), &t);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.param(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.param(Tensor::zeros(&[1, 2, 4, 2]));
        let err = concat_channels(&mut g, &[a, b]).unwrap_err();
        assert!(err.to_string().contains("spatial extent"), "{err}");
    }

    #[test]
    fn upsample_block_constant() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = upsample_nearest(&mut g, x, 2).unwrap();
        let expect = [
            1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(g.value(y).data(), &expect);
        let y1 = upsample_nearest(&mut g, x, 1).unwrap();
        assert_eq!(g.value(y1), g.value(x));
    }

    #[test]
    fn upsample_gradient_pools_cells() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[1, 1, 2, 3]));
        let y = upsample_nearest(&mut g, x, 3).unwrap();
        let w = Tensor::from_vec(&[1, 1, 6, 9], (0..54).map(|i| i as f64).collect()).unwrap();
        let s = dot_const(&mut g, y, &w).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        for by in 0..2 {
            for bx in 0..3 {
                let mut expect = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        expect += ((by * 3 + dy) * 9 + bx * 3 + dx) as f64;
                    }
                }
                assert_eq!(grad.at4(0, 0, by, bx), expect);
            }
        }
    }

    #[test]
    fn slice_and_crop() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_vec(&[1, 4, 2, 2], (0..16).map(|v| v as f32).collect()).unwrap();
        let x = g.param(t);
        let s = slice_channels(&mut g, x, 2, 4).unwrap();
        assert_eq!(g.value(s).data(), &[8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0]);
        let c = crop(&mut g, x, 1, 0, 1, 2).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 3.0, 6.0, 7.0, 10.0, 11.0, 14.0, 15.0]);
        assert!(slice_channels(&mut g, x, 3, 5).is_err());
        assert!(crop(&mut g, x, 1, 1, 2, 1).is_err());
    }
}
