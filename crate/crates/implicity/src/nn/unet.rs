//! 2D U-Net over feature planes: stride-2 downsampling with channel
//! doubling capped at 8x the base width, nearest upsampling with skip
//! concatenation on the way back up.

use ndarray::{Array3, ArrayD};
use rand_chacha::ChaCha8Rng;

use super::grad::{Grads, Module};
use super::layers::{concat_channels, relu, relu_grad, split_channels, upsample2, upsample2_grad, Conv2d};
use super::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct UNet<F: Scalar> {
    pub down: Vec<Conv2d<F>>,
    pub mid: Conv2d<F>,
    pub up: Vec<Conv2d<F>>,
    pub depth: usize,
}

pub struct UNetCache<F: Scalar> {
    /// Input of each down conv; doubles as the skip connection.
    down_in: Vec<Array3<F>>,
    down_pre: Vec<Array3<F>>,
    mid_in: Array3<F>,
    mid_pre: Array3<F>,
    up_cat: Vec<Array3<F>>,
    up_pre: Vec<Array3<F>>,
}

impl<F: Scalar> UNet<F> {
    pub fn new(name: &str, d: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let cap = 8 * d;
        let ch = |i: usize| (d << i).min(cap);
        let mut down = Vec::new();
        for i in 0..depth {
            down.push(Conv2d::new(format!("{name}.down{i}"), ch(i), ch(i + 1), 3, 2, rng));
        }
        let mid = Conv2d::new(format!("{name}.mid"), ch(depth), ch(depth), 3, 1, rng);
        let mut up = Vec::new();
        for i in (0..depth).rev() {
            up.push(Conv2d::new(
                format!("{name}.up{i}"),
                ch(i + 1) + ch(i),
                ch(i),
                3,
                1,
                rng,
            ));
        }
        UNet { down, mid, up, depth }
    }

    pub fn forward(&self, x: &Array3<F>) -> Result<(Array3<F>, UNetCache<F>)> {
        let (_, h, w) = x.dim();
        if h % (1 << self.depth) != 0 || w % (1 << self.depth) != 0 {
            return Err(Error::ShapeMismatch(format!(
                "plane {h}x{w} not divisible by 2^{}",
                self.depth
            )));
        }
        let mut down_in = Vec::new();
        let mut down_pre = Vec::new();
        let mut cur = x.clone();
        for conv in &self.down {
            down_in.push(cur.clone());
            let pre = conv.forward(&cur);
            cur = relu(&pre);
            down_pre.push(pre);
        }
        let mid_in = cur.clone();
        let mid_pre = self.mid.forward(&mid_in);
        cur = relu(&mid_pre);
        let mut up_cat = Vec::new();
        let mut up_pre = Vec::new();
        for (k, conv) in self.up.iter().enumerate() {
            let skip = &down_in[self.depth - 1 - k];
            let upsampled = upsample2(&cur);
            let cat = concat_channels(&upsampled, skip);
            let pre = conv.forward(&cat);
            // The last up conv is linear so plane features can go negative.
            cur = if k + 1 == self.up.len() { pre.clone() } else { relu(&pre) };
            up_cat.push(cat);
            up_pre.push(pre);
        }
        Ok((cur, UNetCache { down_in, down_pre, mid_in, mid_pre, up_cat, up_pre }))
    }

    pub fn backward(
        &self,
        cache: &UNetCache<F>,
        gy: &Array3<F>,
        grads: &mut Grads<F>,
    ) -> Array3<F> {
        let mut gskips: Vec<Option<Array3<F>>> = vec![None; self.depth];
        let mut g = gy.clone();
        for (k, conv) in self.up.iter().enumerate().rev() {
            let gpre = if k + 1 == self.up.len() {
                g
            } else {
                relu_grad(&cache.up_pre[k], &g)
            };
            let gcat = conv.backward(&cache.up_cat[k], &gpre, grads);
            let c_up = conv.c_in() - cache.down_in[self.depth - 1 - k].dim().0;
            let (gup, gskip) = split_channels(&gcat, c_up);
            gskips[self.depth - 1 - k] = Some(gskip);
            g = upsample2_grad(&gup);
        }
        let gmid_pre = relu_grad(&cache.mid_pre, &g);
        g = self.mid.backward(&cache.mid_in, &gmid_pre, grads);
        for (i, conv) in self.down.iter().enumerate().rev() {
            let gpre = relu_grad(&cache.down_pre[i], &g);
            let mut gx = conv.backward(&cache.down_in[i], &gpre, grads);
            if let Some(gskip) = gskips[i].take() {
                gx = gx + &gskip;
            }
            g = gx;
        }
        g
    }
}

impl<F: Scalar> Module<F> for UNet<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        for c in &self.down {
            c.visit(f);
        }
        self.mid.visit(f);
        for c in &self.up {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        for c in &mut self.down {
            c.visit_mut(f);
        }
        self.mid.visit_mut(f);
        for c in &mut self.up {
            c.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    #[test]
    fn output_shape_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = UNet::<f64>::new("u", 4, 3, &mut rng);
        let x = Array3::from_shape_fn((4, 16, 16), |_| rng.gen::<f64>() - 0.5);
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y.dim(), (4, 16, 16));
        let bad = Array3::<f64>::zeros((4, 12, 12));
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn channel_growth_is_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UNet::<f64>::new("u", 4, 5, &mut rng);
        assert_eq!(net.down[0].c_out(), 8);
        assert_eq!(net.down[2].c_out(), 32);
        // 8d cap = 32.
        assert_eq!(net.down[3].c_out(), 32);
        assert_eq!(net.down[4].c_out(), 32);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = UNet::<f64>::new("u", 2, 2, &mut rng);
        let x = Array3::from_shape_fn((2, 8, 8), |_| rng.gen::<f64>() - 0.5);
        let loss = |n: &UNet<f64>, x: &Array3<f64>| {
            n.forward(x).unwrap().0.mapv(|v| v * v).sum()
        };
        let (y, cache) = net.forward(&x).unwrap();
        let gy = y.mapv(|v| 2.0 * v);
        let mut grads = Grads::new();
        let gx = net.backward(&cache, &gy, &mut grads);
        let eps = 1e-6;
        for name in ["u.down0.w", "u.mid.w", "u.up1.w", "u.up0.b"] {
            let g = grads.get(name).unwrap().clone();
            let flat = g.len() / 3;
            let probe = |n: &mut UNet<f64>, delta: f64| {
                n.visit_mut(&mut |nm, t| {
                    if nm == name {
                        t.as_slice_mut().unwrap()[flat] += delta;
                    }
                });
            };
            probe(&mut net, eps);
            let up = loss(&net, &x);
            probe(&mut net, -2.0 * eps);
            let down = loss(&net, &x);
            probe(&mut net, eps);
            let num = (up - down) / (2.0 * eps);
            let ana = g.as_slice().unwrap()[flat];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6) < 1e-5,
                "{name}: {num} vs {ana}"
            );
        }
        let mut xp = x.clone();
        xp[(1, 3, 4)] += eps;
        let mut xm = x.clone();
        xm[(1, 3, 4)] -= eps;
        let num = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
        assert!((num - gx[(1, 3, 4)]).abs() / num.abs().max(1e-6) < 1e-5);
    }
}
