use ndarray::Array4;

use super::{Real, Shape};

/// Max pooling without padding (floor output size).
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug)]
pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    // flat offset within the input plane of each output's winner
    argmax: Vec<u32>,
}

impl MaxPool2d {
    pub fn new(name: impl Into<String>, kernel: usize, stride: usize) -> Self {
        Self { name: name.into(), kernel, stride }
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if height < self.kernel || width < self.kernel {
            return None;
        }
        Some((
            (height - self.kernel) / self.stride + 1,
            (width - self.kernel) / self.stride + 1,
        ))
    }

    pub fn output_shape(&self, input: Shape) -> Option<Shape> {
        match input {
            Shape::Spatial { channels, height, width } => {
                let (height, width) = self.output_hw(height, width)?;
                Some(Shape::Spatial { channels, height, width })
            }
            Shape::Flat(_) => None,
        }
    }

    fn run<T: Real>(&self, x: &Array4<T>, mut record: Option<&mut Vec<u32>>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w).expect("input smaller than pooling window");
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array4::<T>::zeros((n, c, ho, wo));
        let os = out.as_slice_mut().expect("fresh array");
        for (plane_idx, (src, dst)) in xs.chunks(h * w).zip(os.chunks_mut(ho * wo)).enumerate() {
            debug_assert!(plane_idx < n * c);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for ky in 0..self.kernel {
                        let row = (oy * self.stride + ky) * w;
                        for kx in 0..self.kernel {
                            let at = row + ox * self.stride + kx;
                            // strict comparison keeps the first maximum
                            if src[at] > best {
                                best = src[at];
                                best_at = at;
                            }
                        }
                    }
                    dst[oy * wo + ox] = best;
                    if let Some(r) = record.as_deref_mut() {
                        r.push(best_at as u32);
                    }
                }
            }
        }
        out
    }

    pub fn forward<T: Real>(&self, x: &Array4<T>) -> Array4<T> {
        self.run(x, None)
    }

    pub fn forward_train<T: Real>(&self, x: &Array4<T>) -> (Array4<T>, PoolCache) {
        let mut argmax = Vec::new();
        let y = self.run(x, Some(&mut argmax));
        (y, PoolCache { input_dim: x.dim(), argmax })
    }

    pub fn backward<T: Real>(&self, cache: &PoolCache, grad_out: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = cache.input_dim;
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        let g = grad_out.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let plane_out = gs.len() / (n * c).max(1);
        let dxs = dx.as_slice_mut().expect("fresh array");
        for (p, dplane) in dxs.chunks_mut(h * w).enumerate() {
            for j in 0..plane_out {
                let k = p * plane_out + j;
                dplane[cache.argmax[k] as usize] += gs[k];
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn vgg_and_alexnet_geometry() {
        let vgg = MaxPool2d::new("pool", 2, 2);
        let mut side = 224;
        for _ in 0..5 {
            side = vgg.output_hw(side, side).unwrap().0;
        }
        assert_eq!(side, 7);
        let alex = MaxPool2d::new("pool", 3, 2);
        assert_eq!(alex.output_hw(55, 55), Some((27, 27)));
        assert_eq!(alex.output_hw(27, 27), Some((13, 13)));
        assert_eq!(alex.output_hw(13, 13), Some((6, 6)));
    }

    #[test]
    fn routes_gradient_to_the_winner() {
        let pool = MaxPool2d::new("p", 2, 2);
        let x = Array::from_shape_vec((1, 1, 2, 4), vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 0.0, 1.0]).unwrap();
        let (y, cache) = pool.forward_train(&x);
        assert_eq!(y.iter().copied().collect::<Vec<f64>>(), vec![5.0, 2.0]);
        let dx = pool.backward(&cache, &Array::from_elem((1, 1, 1, 2), 1.0));
        // tie between the two 2.0 entries resolves to the first
        assert_eq!(
            dx.iter().copied().collect::<Vec<f64>>(),
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }
}
