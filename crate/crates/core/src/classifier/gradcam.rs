//! Grad-CAM over the last conv block of the 3-D backbone.

use super::model::{BackboneKind, Model};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::VideoTensor;

/// Heatmap for `target` on a prepared conv3d input: channel weights are the mean gradient of the
/// class logit over each channel's activation map; the ReLU of the weighted sum is upsampled
/// trilinearly to the input grid and min-max normalized. A map with no positive value is all zero.
pub fn grad_cam(model: &Model, input: &[f64], target: usize) -> Result<VideoTensor> {
    let s = &model.spec;
    if s.kind != BackboneKind::Conv3d {
        return Err(Error::invalid(
            "Grad-CAM needs a conv3d backbone; feature inputs have no spatial maps",
        ));
    }
    if target >= s.num_classes() {
        return Err(Error::invalid(format!(
            "target class {target} out of range"
        )));
    }
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    // A variable input keeps the activations on the gradient path.
    let f = model.forward(&mut g, &p, &[input], true)?;
    let act = f.last_conv.expect("conv3d forward records its last block");
    let mask = Tensor::from_fn(
        [1, s.num_classes()],
        |i| if i == target { 1.0 } else { 0.0 },
    );
    let mask = g.constant(mask);
    let picked = g.mul(f.logits, mask)?;
    let score = g.sum(picked);
    let grads = g.backward(score)?;
    let dact = grads.wrt(act);
    let a = g.value(act);
    let shape = a.shape().to_vec();
    let (c, d, h, w) = (shape[1], shape[2], shape[3], shape[4]);
    let vol = d * h * w;
    let mut cam = vec![0.0; vol];
    for ch in 0..c {
        let gch = &dact.data()[ch * vol..(ch + 1) * vol];
        let alpha = gch.iter().sum::<f64>() / vol as f64;
        for (k, v) in a.data()[ch * vol..(ch + 1) * vol].iter().enumerate() {
            cam[k] += alpha * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut up = trilinear(&cam, [d, h, w], [s.frames, s.size, s.size]);
    let max = up.iter().copied().fold(0.0f64, f64::max);
    let min = up.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        up.iter_mut().for_each(|v| *v = 0.0);
    } else if max > min {
        up.iter_mut().for_each(|v| *v = (*v - min) / (max - min));
    } else {
        up.iter_mut().for_each(|v| *v = 1.0);
    }
    VideoTensor::new(s.frames, 1, s.size, s.size, up)
}

/// Corner-aligned trilinear resampling of a `[D, H, W]` volume.
pub fn trilinear(src: &[f64], dims: [usize; 3], out: [usize; 3]) -> Vec<f64> {
    let axis = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = (o * (n_in - 1)) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        (lo, (lo + 1).min(n_in - 1), pos - lo as f64)
    };
    let [d, h, w] = dims;
    let at = |z: usize, y: usize, x: usize| src[(z * h + y) * w + x];
    let mut res = Vec::with_capacity(out.iter().product());
    for oz in 0..out[0] {
        let (z0, z1, fz) = axis(oz, out[0], d);
        for oy in 0..out[1] {
            let (y0, y1, fy) = axis(oy, out[1], h);
            for ox in 0..out[2] {
                let (x0, x1, fx) = axis(ox, out[2], w);
                let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
                let plane = |z| {
                    lerp(
                        lerp(at(z, y0, x0), at(z, y0, x1), fx),
                        lerp(at(z, y1, x0), at(z, y1, x1), fx),
                        fy,
                    )
                };
                res.push(lerp(plane(z0), plane(z1), fz));
            }
        }
    }
    res
}
