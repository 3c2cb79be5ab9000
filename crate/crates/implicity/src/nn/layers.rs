//! Basic differentiable layers: linear, fully-connected ResNet block,
//! 2D convolution (im2col + gemm), nearest upsampling.

use ndarray::{Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grad::{Grads, Module};
use super::scalar::Scalar;

pub fn init_uniform<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    ArrayD::from_shape_fn(shape, |_| F::cast((rng.gen::<f64>() * 2.0 - 1.0) * bound))
}

pub fn relu<F: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of relu given the pre-activation input.
pub fn relu_grad<F: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
    gy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut g = gy.clone();
    ndarray::Zip::from(&mut g).and(x).for_each(|g, &x| {
        if x <= F::zero() {
            *g = F::zero();
        }
    });
    g
}

fn as2<F: Scalar>(t: &ArrayD<F>) -> ArrayView2<'_, F> {
    t.view().into_dimensionality().expect("rank-2 tensor")
}

fn as1<F: Scalar>(t: &ArrayD<F>) -> ArrayView1<'_, F> {
    t.view().into_dimensionality().expect("rank-1 tensor")
}

fn as4<F: Scalar>(t: &ArrayD<F>) -> ArrayView4<'_, F> {
    t.view().into_dimensionality().expect("rank-4 tensor")
}

/// y = x W^T + b over rows.
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub name: String,
    /// Shape (out, in).
    pub w: ArrayD<F>,
    pub b: ArrayD<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(name: impl Into<String>, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            name: name.into(),
            w: init_uniform(&[n_out, n_in], n_in, rng),
            b: ArrayD::zeros(vec![n_out]),
        }
    }

    /// Zero-initialized variant; used for the residual output maps so a
    /// fresh block starts as the identity plus shortcut.
    pub fn new_zeroed(name: impl Into<String>, n_in: usize, n_out: usize) -> Self {
        Linear {
            name: name.into(),
            w: ArrayD::zeros(vec![n_out, n_in]),
            b: ArrayD::zeros(vec![n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&as2(&self.w).t());
        y = y + &as1(&self.b);
        y
    }

    pub fn backward(&self, x: &Array2<F>, gy: &Array2<F>, grads: &mut Grads<F>) -> Array2<F> {
        let gw = gy.t().dot(x);
        let gb = gy.sum_axis(Axis(0));
        grads.acc(&format!("{}.w", self.name), gw.into_dyn());
        grads.acc(&format!("{}.b", self.name), gb.into_dyn());
        gy.dot(&as2(&self.w))
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        f(&format!("{}.w", self.name.clone()), &mut self.w);
        f(&format!("{}.b", self.name.clone()), &mut self.b);
    }
}

/// Fully-connected ResNet block: shortcut(x) + fc1(relu(fc0(relu(x)))).
/// fc1 starts at zero so the block is initially the shortcut alone.
#[derive(Debug, Clone)]
pub struct ResnetBlockFC<F: Scalar> {
    pub fc0: Linear<F>,
    pub fc1: Linear<F>,
    pub shortcut: Option<Linear<F>>,
}

#[derive(Debug)]
pub struct ResnetCache<F: Scalar> {
    x: Array2<F>,
    a0: Array2<F>,
    h: Array2<F>,
}

impl<F: Scalar> ResnetBlockFC<F> {
    pub fn new(
        name: &str,
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let shortcut = if n_in != n_out {
            Some(Linear::new(format!("{name}.sc"), n_in, n_out, rng))
        } else {
            None
        };
        ResnetBlockFC {
            fc0: Linear::new(format!("{name}.fc0"), n_in, n_hidden, rng),
            fc1: Linear::new_zeroed(format!("{name}.fc1"), n_hidden, n_out),
            shortcut,
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, ResnetCache<F>) {
        let a0 = relu(x);
        let h = self.fc0.forward(&a0);
        let a1 = relu(&h);
        let dx = self.fc1.forward(&a1);
        let y = match &self.shortcut {
            Some(sc) => sc.forward(x) + &dx,
            None => x + &dx,
        };
        (y, ResnetCache { x: x.clone(), a0, h })
    }

    pub fn backward(
        &self,
        cache: &ResnetCache<F>,
        gy: &Array2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let a1 = relu(&cache.h);
        let ga1 = self.fc1.backward(&a1, gy, grads);
        let gh = relu_grad(&cache.h, &ga1);
        let ga0 = self.fc0.backward(&cache.a0, &gh, grads);
        let mut gx = relu_grad(&cache.x, &ga0);
        match &self.shortcut {
            Some(sc) => gx = gx + sc.backward(&cache.x, gy, grads),
            None => gx = gx + gy,
        }
        gx
    }
}

impl<F: Scalar> Module<F> for ResnetBlockFC<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        self.fc0.visit(f);
        self.fc1.visit(f);
        if let Some(sc) = &self.shortcut {
            sc.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        self.fc0.visit_mut(f);
        self.fc1.visit_mut(f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_mut(f);
        }
    }
}

fn conv_out(n: usize, k: usize, pad: usize, stride: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

fn im2col<F: Scalar>(
    x: &Array3<F>,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
) -> Array2<F> {
    let (cin, h, w) = x.dim();
    let (ho, wo) = (conv_out(h, kh, pad, stride), conv_out(w, kw, pad, stride));
    let mut col = Array2::<F>::zeros((cin * kh * kw, ho * wo));
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        col[(row, oi * wo + oj)] = x[(c, ii as usize, jj as usize)];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    gcol: &Array2<F>,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
) -> Array3<F> {
    let (ho, wo) = (conv_out(h, kh, pad, stride), conv_out(w, kw, pad, stride));
    let mut gx = Array3::<F>::zeros((cin, h, w));
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        gx[(c, ii as usize, jj as usize)] =
                            gx[(c, ii as usize, jj as usize)] + gcol[(row, oi * wo + oj)];
                    }
                }
            }
        }
    }
    gx
}

/// 2D convolution, square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub name: String,
    /// Shape (out, in, kh, kw).
    pub w: ArrayD<F>,
    pub b: ArrayD<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Conv2d {
            name: name.into(),
            w: init_uniform(&[cout, cin, k, k], cin * k * k, rng),
            b: ArrayD::zeros(vec![cout]),
            stride,
            pad: k / 2,
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[0]
    }

    fn w_mat(&self) -> Array2<F> {
        let v = as4(&self.w);
        let (co, ci, kh, kw) = v.dim();
        v.to_owned().into_shape((co, ci * kh * kw)).unwrap()
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (_, h, w) = x.dim();
        let k = self.w.shape()[2];
        let (ho, wo) = (
            conv_out(h, k, self.pad, self.stride),
            conv_out(w, k, self.pad, self.stride),
        );
        let col = im2col(x, k, k, self.pad, self.stride);
        let mut y = self.w_mat().dot(&col);
        for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(as1(&self.b).iter()) {
            row.mapv_inplace(|v| v + bv);
        }
        y.into_shape((self.c_out(), ho, wo)).unwrap()
    }

    /// Rebuilds the column matrix from the cached input instead of keeping
    /// it around; trades a little compute for a lot of activation memory.
    pub fn backward(&self, x: &Array3<F>, gy: &Array3<F>, grads: &mut Grads<F>) -> Array3<F> {
        let (cin, h, w) = x.dim();
        let k = self.w.shape()[2];
        let (co, ho, wo) = gy.dim();
        let gy_mat = gy.to_owned().into_shape((co, ho * wo)).unwrap();
        let col = im2col(x, k, k, self.pad, self.stride);
        // dot can hand back an F-layout array (seen when ho*wo == 1) and
        // into_shape follows memory order, so force row-major first.
        let gw = gy_mat.dot(&col.t()).as_standard_layout().to_owned();
        grads.acc(
            &format!("{}.w", self.name),
            gw.into_shape(self.w.shape().to_vec()).unwrap(),
        );
        grads.acc(&format!("{}.b", self.name), gy_mat.sum_axis(Axis(1)).into_dyn());
        let gcol = self.w_mat().t().dot(&gy_mat);
        col2im(&gcol, cin, h, w, k, k, self.pad, self.stride)
    }
}

impl<F: Scalar> Module<F> for Conv2d<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        f(&format!("{}.w", self.name.clone()), &mut self.w);
        f(&format!("{}.b", self.name.clone()), &mut self.b);
    }
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, i, j)| x[(ci, i / 2, j / 2)])
}

pub fn upsample2_grad<F: Scalar>(gy: &Array3<F>) -> Array3<F> {
    let (c, h2, w2) = gy.dim();
    let mut gx = Array3::<F>::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                gx[(ci, i / 2, j / 2)] = gx[(ci, i / 2, j / 2)] + gy[(ci, i, j)];
            }
        }
    }
    gx
}

/// Stack two row-major feature matrices along the column axis.
pub fn concat_channels2<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("column concat")
}

/// Stack two feature maps along the channel axis.
pub fn concat_channels<F: Scalar>(a: &Array3<F>, b: &Array3<F>) -> Array3<F> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("channel concat")
}

pub fn split_channels<F: Scalar>(g: &Array3<F>, c_first: usize) -> (Array3<F>, Array3<F>) {
    let (a, b) = g.view().split_at(Axis(0), c_first);
    (a.to_owned(), b.to_owned())
}
