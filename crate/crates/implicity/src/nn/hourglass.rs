//! Ortho-image encoder: strided stem to quarter resolution, then one or
//! more hourglass bodies with additive skips, then a linear 1x1 head.

use ndarray::{Array3, ArrayD};
use rand_chacha::ChaCha8Rng;

use super::grad::{Grads, Module};
use super::layers::{relu, relu_grad, upsample2, upsample2_grad, Conv2d};
use super::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct HourglassBody<F: Scalar> {
    pub d1: Conv2d<F>,
    pub d2: Conv2d<F>,
    pub mid: Conv2d<F>,
    pub u2: Conv2d<F>,
    pub u1: Conv2d<F>,
}

pub struct BodyCache<F: Scalar> {
    x: Array3<F>,
    d1_pre: Array3<F>,
    d1_act: Array3<F>,
    d2_pre: Array3<F>,
    d2_act: Array3<F>,
    mid_pre: Array3<F>,
    u2_in: Array3<F>,
    u2_pre: Array3<F>,
    u1_in: Array3<F>,
    u1_pre: Array3<F>,
}

impl<F: Scalar> HourglassBody<F> {
    fn new(name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        HourglassBody {
            d1: Conv2d::new(format!("{name}.d1"), 2 * d, 4 * d, 3, 2, rng),
            d2: Conv2d::new(format!("{name}.d2"), 4 * d, 4 * d, 3, 2, rng),
            mid: Conv2d::new(format!("{name}.mid"), 4 * d, 4 * d, 3, 1, rng),
            u2: Conv2d::new(format!("{name}.u2"), 4 * d, 4 * d, 3, 1, rng),
            u1: Conv2d::new(format!("{name}.u1"), 4 * d, 2 * d, 3, 1, rng),
        }
    }

    /// x: (2d, n, n) -> (2d, n, n) with additive skips at both scales.
    fn forward(&self, x: &Array3<F>) -> (Array3<F>, BodyCache<F>) {
        let d1_pre = self.d1.forward(x);
        let d1_act = relu(&d1_pre);
        let d2_pre = self.d2.forward(&d1_act);
        let d2_act = relu(&d2_pre);
        let mid_pre = self.mid.forward(&d2_act);
        let u2_in = upsample2(&relu(&mid_pre));
        let u2_pre = self.u2.forward(&u2_in) + &d1_act;
        let u1_in = upsample2(&relu(&u2_pre));
        let u1_pre = self.u1.forward(&u1_in) + x;
        let y = relu(&u1_pre);
        (
            y,
            BodyCache {
                x: x.clone(),
                d1_pre,
                d1_act,
                d2_pre,
                d2_act,
                mid_pre,
                u2_in,
                u2_pre,
                u1_in,
                u1_pre,
            },
        )
    }

    fn backward(&self, c: &BodyCache<F>, gy: &Array3<F>, grads: &mut Grads<F>) -> Array3<F> {
        let gu1_pre = relu_grad(&c.u1_pre, gy);
        // The additive skip from x flows straight through.
        let mut gx = gu1_pre.clone();
        let gu1_in = self.u1.backward(&c.u1_in, &gu1_pre, grads);
        let gu2_act = upsample2_grad(&gu1_in);
        let gu2_pre = relu_grad(&c.u2_pre, &gu2_act);
        let mut gd1_act = gu2_pre.clone();
        let gu2_in = self.u2.backward(&c.u2_in, &gu2_pre, grads);
        let gmid_act = upsample2_grad(&gu2_in);
        let gmid_pre = relu_grad(&c.mid_pre, &gmid_act);
        let gd2_act = self.mid.backward(&c.d2_act, &gmid_pre, grads);
        let gd2_pre = relu_grad(&c.d2_pre, &gd2_act);
        gd1_act = gd1_act + self.d2.backward(&c.d1_act, &gd2_pre, grads);
        let gd1_pre = relu_grad(&c.d1_pre, &gd1_act);
        gx = gx + self.d1.backward(&c.x, &gd1_pre, grads);
        gx
    }
}

impl<F: Scalar> Module<F> for HourglassBody<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        for c in [&self.d1, &self.d2, &self.mid, &self.u2, &self.u1] {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        for c in [&mut self.d1, &mut self.d2, &mut self.mid, &mut self.u2, &mut self.u1] {
            c.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder<F: Scalar> {
    pub stem0: Conv2d<F>,
    pub stem1: Conv2d<F>,
    pub bodies: Vec<HourglassBody<F>>,
    pub head: Conv2d<F>,
}

pub struct ImageEncCache<F: Scalar> {
    x: Array3<F>,
    s0_pre: Array3<F>,
    s0_act: Array3<F>,
    s1_pre: Array3<F>,
    bodies: Vec<BodyCache<F>>,
    head_in: Array3<F>,
}

impl<F: Scalar> ImageEncoder<F> {
    pub fn new(d: usize, stacks: usize, rng: &mut ChaCha8Rng) -> Self {
        let stem0 = Conv2d::new("img.stem0", 2, d, 3, 2, rng);
        let stem1 = Conv2d::new("img.stem1", d, 2 * d, 3, 2, rng);
        let bodies = (0..stacks.max(1))
            .map(|i| HourglassBody::new(&format!("img.hg{i}"), d, rng))
            .collect();
        let head = Conv2d::new("img.head", 2 * d, d, 1, 1, rng);
        ImageEncoder { stem0, stem1, bodies, head }
    }

    /// x: (2, n, n) image pair -> (d, n/4, n/4) feature plane.
    pub fn forward(&self, x: &Array3<F>) -> Result<(Array3<F>, ImageEncCache<F>)> {
        let (c, h, w) = x.dim();
        if c != 2 {
            return Err(Error::ShapeMismatch(format!("image encoder expects 2 channels, got {c}")));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::ShapeMismatch(format!("image {h}x{w} not divisible by 16")));
        }
        let s0_pre = self.stem0.forward(x);
        let s0_act = relu(&s0_pre);
        let s1_pre = self.stem1.forward(&s0_act);
        let mut cur = relu(&s1_pre);
        let mut bodies = Vec::new();
        for b in &self.bodies {
            let (y, cache) = b.forward(&cur);
            bodies.push(cache);
            cur = y;
        }
        let head_in = cur;
        let y = self.head.forward(&head_in);
        Ok((
            y,
            ImageEncCache { x: x.clone(), s0_pre, s0_act, s1_pre, bodies, head_in },
        ))
    }

    pub fn backward(&self, c: &ImageEncCache<F>, gy: &Array3<F>, grads: &mut Grads<F>) {
        let mut g = self.head.backward(&c.head_in, gy, grads);
        for (b, cache) in self.bodies.iter().zip(c.bodies.iter()).rev() {
            g = b.backward(cache, &g, grads);
        }
        let gs1_pre = relu_grad(&c.s1_pre, &g);
        let gs0_act = self.stem1.backward(&c.s0_act, &gs1_pre, grads);
        let gs0_pre = relu_grad(&c.s0_pre, &gs0_act);
        let _ = self.stem0.backward(&c.x, &gs0_pre, grads);
    }
}

impl<F: Scalar> Module<F> for ImageEncoder<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        self.stem0.visit(f);
        self.stem1.visit(f);
        for b in &self.bodies {
            b.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        self.stem0.visit_mut(f);
        self.stem1.visit_mut(f);
        for b in &mut self.bodies {
            b.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
