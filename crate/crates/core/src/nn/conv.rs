use super::gemm::sgemm;
use super::{join, Param, Slot};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a strided, zero-padded square-kernel window over one image.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfold `src` (`C×H×W`) into `cols` (`C·k·k × out_h·out_w`).
    fn im2col(&self, src: &[f32], cols: &mut [f32]) {
        let Window {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        } = *self;
        let ncols = out_h * out_w;
        for c in 0..channels {
            let plane = &src[c * height * width..(c + 1) * height * width];
            for ki in 0..kernel {
                for kj in 0..kernel {
                    let row = ((c * kernel + ki) * kernel + kj) * ncols;
                    for oy in 0..out_h {
                        let dst = &mut cols[row + oy * out_w..row + (oy + 1) * out_w];
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= height as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let line = &plane[iy as usize * width..(iy as usize + 1) * width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            *d = if ix >= 0 && ix < width as isize {
                                line[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatter-add `cols` back into `dst`.
    fn col2im(&self, cols: &[f32], dst: &mut [f32]) {
        let Window {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        } = *self;
        let ncols = out_h * out_w;
        for c in 0..channels {
            let plane = &mut dst[c * height * width..(c + 1) * height * width];
            for ki in 0..kernel {
                for kj in 0..kernel {
                    let row = ((c * kernel + ki) * kernel + kj) * ncols;
                    for oy in 0..out_h {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        let src = &cols[row + oy * out_w..row + (oy + 1) * out_w];
                        let line = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix >= 0 && ix < width as isize {
                                line[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad(grad: &mut [f32], dy: &[f32], plane: usize) {
    for (c, g) in grad.iter_mut().enumerate() {
        let s: f64 = dy[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum();
        *g += s as f32;
    }
}

/// Common surface of the two convolution flavours so blocks can be generic.
pub trait ConvLayer {
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
    /// Spatial output size for a square input, `None` if the window does not fit.
    fn output_size(&self, input: usize) -> Option<usize>;
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    /// Accumulates parameter gradients when `need_dw`; returns the input
    /// gradient when `need_dx`.
    fn backward(&mut self, x: &Tensor, dy: &Tensor, need_dx: bool, need_dw: bool)
        -> Result<Option<Tensor>>;
    fn weight_mut(&mut self) -> &mut Param;
    fn bias_mut(&mut self) -> &mut Param;
    fn weight(&self) -> &Param;
    fn bias(&self) -> &Param;

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        f(&join(prefix, "weight"), &self.weight().value, true);
        f(&join(prefix, "bias"), &self.bias().value, true);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(self.weight_mut()));
        f(&join(prefix, "bias"), Slot::Param(self.bias_mut()));
    }
}

/// 2-D convolution, weight layout `[C_out, C_in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Param::zeros(&[out_c, in_c, kernel, kernel]),
            bias: Param::zeros(&[out_c]),
            in_c,
            out_c,
            kernel,
            stride,
            padding,
        }
    }

    fn window(&self, x: &Tensor) -> Result<(usize, Window)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_c {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_c
            )));
        }
        let (out_h, out_w) = conv_out(h, self.kernel, self.stride, self.padding)
            .zip(conv_out(w, self.kernel, self.stride, self.padding))
            .ok_or_else(|| Error::Shape(format!("input {h}×{w} too small for kernel")))?;
        Ok((
            n,
            Window {
                channels: c,
                height: h,
                width: w,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
                out_h,
                out_w,
            },
        ))
    }
}

impl ConvLayer for Conv2d {
    fn in_channels(&self) -> usize {
        self.in_c
    }

    fn out_channels(&self) -> usize {
        self.out_c
    }

    fn output_size(&self, input: usize) -> Option<usize> {
        conv_out(input, self.kernel, self.stride, self.padding).filter(|&s| s > 0)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, win) = self.window(x)?;
        let plane = win.cols();
        let mut out = Tensor::zeros(&[n, self.out_c, win.out_h, win.out_w]);
        let mut cols = vec![0.0; win.rows() * plane];
        for i in 0..n {
            win.im2col(x.sample(i), &mut cols);
            let y = out.sample_mut(i);
            sgemm(self.out_c, win.rows(), plane, self.weight.value.data(), false, &cols, false, y, false);
            add_bias(y, self.bias.value.data(), plane);
        }
        Ok(out)
    }

    fn backward(
        &mut self,
        x: &Tensor,
        dy: &Tensor,
        need_dx: bool,
        need_dw: bool,
    ) -> Result<Option<Tensor>> {
        let (n, win) = self.window(x)?;
        let plane = win.cols();
        if dy.shape() != [n, self.out_c, win.out_h, win.out_w] {
            return Err(Error::Shape(format!(
                "conv backward: gradient shape {:?} does not match output",
                dy.shape()
            )));
        }
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = vec![0.0; win.rows() * plane];
        for i in 0..n {
            let g = dy.sample(i);
            if need_dw {
                win.im2col(x.sample(i), &mut cols);
                sgemm(self.out_c, plane, win.rows(), g, false, &cols, true, self.weight.grad.data_mut(), true);
                accumulate_bias_grad(self.bias.grad.data_mut(), g, plane);
            }
            if let Some(dx) = dx.as_mut() {
                sgemm(win.rows(), self.out_c, plane, self.weight.value.data(), true, g, false, &mut cols, false);
                win.col2im(&cols, dx.sample_mut(i));
            }
        }
        Ok(dx)
    }

    fn weight_mut(&mut self) -> &mut Param {
        &mut self.weight
    }

    fn bias_mut(&mut self) -> &mut Param {
        &mut self.bias
    }

    fn weight(&self) -> &Param {
        &self.weight
    }

    fn bias(&self) -> &Param {
        &self.bias
    }
}

/// Transposed 2-D convolution, weight layout `[C_in, C_out, k, k]`.
///
/// Output size is `(in − 1)·stride − 2·padding + kernel`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvTranspose2d {
            weight: Param::zeros(&[in_c, out_c, kernel, kernel]),
            bias: Param::zeros(&[out_c]),
            in_c,
            out_c,
            kernel,
            stride,
            padding,
        }
    }

    /// The window runs over the *output* image and lands on the input grid.
    fn window(&self, x: &Tensor) -> Result<(usize, Window)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_c {
            return Err(Error::Shape(format!(
                "transposed conv expects {} input channels, got {c}",
                self.in_c
            )));
        }
        let out_h = self
            .output_size(h)
            .ok_or_else(|| Error::Shape(format!("input {h}×{w} yields an empty output")))?;
        let out_w = self
            .output_size(w)
            .ok_or_else(|| Error::Shape(format!("input {h}×{w} yields an empty output")))?;
        Ok((
            n,
            Window {
                channels: self.out_c,
                height: out_h,
                width: out_w,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
                out_h: h,
                out_w: w,
            },
        ))
    }
}

impl ConvLayer for ConvTranspose2d {
    fn in_channels(&self) -> usize {
        self.in_c
    }

    fn out_channels(&self) -> usize {
        self.out_c
    }

    fn output_size(&self, input: usize) -> Option<usize> {
        if input == 0 {
            return None;
        }
        ((input - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.padding)
            .filter(|&s| s > 0)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, win) = self.window(x)?;
        let in_plane = win.cols();
        let mut out = Tensor::zeros(&[n, self.out_c, win.height, win.width]);
        let mut cols = vec![0.0; win.rows() * in_plane];
        for i in 0..n {
            sgemm(win.rows(), self.in_c, in_plane, self.weight.value.data(), true, x.sample(i), false, &mut cols, false);
            let y = out.sample_mut(i);
            win.col2im(&cols, y);
            add_bias(y, self.bias.value.data(), win.height * win.width);
        }
        Ok(out)
    }

    fn backward(
        &mut self,
        x: &Tensor,
        dy: &Tensor,
        need_dx: bool,
        need_dw: bool,
    ) -> Result<Option<Tensor>> {
        let (n, win) = self.window(x)?;
        let in_plane = win.cols();
        let out_plane = win.height * win.width;
        if dy.shape() != [n, self.out_c, win.height, win.width] {
            return Err(Error::Shape(format!(
                "transposed conv backward: gradient shape {:?} does not match output",
                dy.shape()
            )));
        }
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = vec![0.0; win.rows() * in_plane];
        for i in 0..n {
            let g = dy.sample(i);
            win.im2col(g, &mut cols);
            if need_dw {
                sgemm(self.in_c, in_plane, win.rows(), x.sample(i), false, &cols, true, self.weight.grad.data_mut(), true);
                accumulate_bias_grad(self.bias.grad.data_mut(), g, out_plane);
            }
            if let Some(dx) = dx.as_mut() {
                sgemm(self.in_c, win.rows(), in_plane, self.weight.value.data(), false, &cols, false, dx.sample_mut(i), false);
            }
        }
        Ok(dx)
    }

    fn weight_mut(&mut self) -> &mut Param {
        &mut self.weight
    }

    fn bias_mut(&mut self) -> &mut Param {
        &mut self.bias
    }

    fn weight(&self) -> &Param {
        &self.weight
    }

    fn bias(&self) -> &Param {
        &self.bias
    }
}
