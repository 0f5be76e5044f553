use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewMut2, Axis};

use super::{ParamGrad, Real, Shape};

/// 2-D convolution with square kernels followed by a ReLU.
///
/// The weight is stored as `(out_channels, in_channels * k * k)`, which is the
/// row-major flattening of the usual `(out, in, k, k)` layout.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub trainable: bool,
}

/// Values kept from a training forward pass.
#[derive(Debug)]
pub struct ConvCache<T> {
    input: Array4<T>,
    output: Array4<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Array2::zeros((out_channels, in_channels * kernel * kernel)),
            bias: Array1::zeros(out_channels),
            trainable: true,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let span = |d: usize| {
            let padded = d + 2 * self.padding;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        Some((span(height)?, span(width)?))
    }

    pub fn output_shape(&self, input: Shape) -> Option<Shape> {
        match input {
            Shape::Spatial { channels, height, width } if channels == self.in_channels => {
                let (height, width) = self.output_hw(height, width)?;
                Some(Shape::Spatial { channels: self.out_channels, height, width })
            }
            _ => None,
        }
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "{}: channel mismatch", self.name);
        let (ho, wo) = self.output_hw(h, w).expect("input smaller than kernel");
        let plane = ho * wo;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array4::<T>::zeros((n, self.out_channels, ho, wo));
        let mut cols = Array2::<T>::zeros((c * self.kernel * self.kernel, plane));
        {
            let out_slice = out.as_slice_mut().expect("fresh array");
            for (i, chunk) in out_slice.chunks_mut(self.out_channels * plane).enumerate() {
                let image = &xs[i * c * h * w..(i + 1) * c * h * w];
                self.im2col(image, h, w, ho, wo, cols.as_slice_mut().expect("fresh array"));
                let mut y = ArrayViewMut2::from_shape((self.out_channels, plane), chunk)
                    .expect("output chunk");
                general_mat_mul(T::one(), &self.weight, &cols, T::zero(), &mut y);
                for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
                    row.mapv_inplace(|v| {
                        let v = v + b;
                        if v > T::zero() {
                            v
                        } else {
                            T::zero()
                        }
                    });
                }
            }
        }
        out
    }

    pub fn forward_train(&self, x: Array4<T>) -> (Array4<T>, ConvCache<T>) {
        let y = self.forward(&x);
        (y.clone(), ConvCache { input: x, output: y })
    }

    /// Backpropagates through the ReLU and convolution. Weight gradients are
    /// produced only for trainable layers; the input gradient only on request.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Array4<T>,
        need_input_grad: bool,
    ) -> (Option<ParamGrad<T>>, Option<Array4<T>>) {
        let (n, c, h, w) = cache.input.dim();
        let (_, _, ho, wo) = cache.output.dim();
        let plane = ho * wo;
        let ckk = c * self.kernel * self.kernel;

        let mut g = grad_out.as_standard_layout().into_owned();
        ndarray::Zip::from(&mut g).and(&cache.output).for_each(|g, &y| {
            if y <= T::zero() {
                *g = T::zero();
            }
        });

        let input = cache.input.as_standard_layout();
        let xs = input.as_slice().expect("standard layout");
        let gs = g.as_slice().expect("standard layout");

        let mut param = self.trainable.then(|| ParamGrad {
            weight: Array2::<T>::zeros(self.weight.raw_dim()),
            bias: Array1::<T>::zeros(self.out_channels),
        });
        let mut dx = need_input_grad.then(|| Array4::<T>::zeros((n, c, h, w)));
        if param.is_none() && dx.is_none() {
            return (None, None);
        }

        let mut cols = Array2::<T>::zeros((ckk, plane));
        let mut dcols = Array2::<T>::zeros((ckk, plane));
        for i in 0..n {
            let gi = ArrayView2::from_shape(
                (self.out_channels, plane),
                &gs[i * self.out_channels * plane..(i + 1) * self.out_channels * plane],
            )
            .expect("gradient chunk");
            if let Some(p) = param.as_mut() {
                let image = &xs[i * c * h * w..(i + 1) * c * h * w];
                self.im2col(image, h, w, ho, wo, cols.as_slice_mut().expect("fresh array"));
                general_mat_mul(T::one(), &gi, &cols.t(), T::one(), &mut p.weight);
                p.bias += &gi.sum_axis(Axis(1));
            }
            if let Some(dx) = dx.as_mut() {
                general_mat_mul(T::one(), &self.weight.t(), &gi, T::zero(), &mut dcols);
                let dxs = dx.as_slice_mut().expect("fresh array");
                self.col2im(
                    dcols.as_slice().expect("fresh array"),
                    h,
                    w,
                    ho,
                    wo,
                    &mut dxs[i * c * h * w..(i + 1) * c * h * w],
                );
            }
        }
        (param, dx)
    }

    /// Valid output columns `[lo, hi)` for kernel offset `kj` along an axis of
    /// length `len`.
    fn valid_range(&self, kj: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        // ox * s + kj - p <= len - 1
        let hi = if len + p >= kj + 1 {
            ((len + p - kj - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, image: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let plane = ho * wo;
        for ci in 0..self.in_channels {
            let src_plane = &image[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid_range(ki, h, ho);
                for kj in 0..k {
                    let (xlo, xhi) = self.valid_range(kj, w, wo);
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if oy < ylo || oy >= yhi {
                            drow.fill(T::zero());
                            continue;
                        }
                        let iy = oy * s + ki - self.padding;
                        let src = &src_plane[iy * w..(iy + 1) * w];
                        drow[..xlo].fill(T::zero());
                        drow[xhi..].fill(T::zero());
                        if s == 1 {
                            let start = xlo + kj - self.padding;
                            drow[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                drow[ox] = src[ox * s + kj - self.padding];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, image: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let plane = ho * wo;
        for ci in 0..self.in_channels {
            let dst_plane = &mut image[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid_range(ki, h, ho);
                for kj in 0..k {
                    let (xlo, xhi) = self.valid_range(kj, w, wo);
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - self.padding;
                        let drow = &mut dst_plane[iy * w..(iy + 1) * w];
                        let srow = &src[oy * wo..(oy + 1) * wo];
                        for ox in xlo..xhi {
                            drow[ox * s + kj - self.padding] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}
