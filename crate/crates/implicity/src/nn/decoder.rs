//! Occupancy decoder: coordinate features through five fully-connected
//! ResNet blocks, each modulated additively by the latent code, ending in
//! a logistic unit.

use ndarray::{Array1, Array2, ArrayD, Axis};
use rand_chacha::ChaCha8Rng;

use super::grad::{Grads, Module};
use super::layers::{Linear, ResnetBlockFC, ResnetCache};
use super::scalar::Scalar;

pub const N_DECODER_BLOCKS: usize = 5;

#[derive(Debug, Clone)]
pub struct Decoder<F: Scalar> {
    pub fc_p: Linear<F>,
    pub fc_c: Vec<Linear<F>>,
    pub blocks: Vec<ResnetBlockFC<F>>,
    pub fc_out: Linear<F>,
}

pub struct DecoderCache<F: Scalar> {
    x: Array2<F>,
    code: Array2<F>,
    /// Input to each block (after the code injection).
    block_caches: Vec<ResnetCache<F>>,
    net_final: Array2<F>,
    logits: Array1<F>,
}

impl<F: Scalar> DecoderCache<F> {
    pub fn logits(&self) -> &Array1<F> {
        &self.logits
    }
}

pub fn sigmoid<F: Scalar>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

impl<F: Scalar> Decoder<F> {
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let fc_p = Linear::new("dec.fc_p", 3, d, rng);
        let mut fc_c = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..N_DECODER_BLOCKS {
            fc_c.push(Linear::new(format!("dec.fc_c{i}"), d, d, rng));
            blocks.push(ResnetBlockFC::new(&format!("dec.block{i}"), d, d, d, rng));
        }
        let fc_out = Linear::new("dec.fc_out", d, 1, rng);
        Decoder { fc_p, fc_c, blocks, fc_out }
    }

    /// queries: (n, 3) normalized coordinates; code: (n, d) plane samples.
    pub fn forward(&self, queries: &Array2<F>, code: &Array2<F>) -> (Array1<F>, DecoderCache<F>) {
        let mut net = self.fc_p.forward(queries);
        let mut block_caches = Vec::new();
        for (fc_c, blk) in self.fc_c.iter().zip(self.blocks.iter()) {
            net = net + fc_c.forward(code);
            let (next, cache) = blk.forward(&net);
            block_caches.push(cache);
            net = next;
        }
        // Linear output map on the residual stream: keeps gradient flow
        // alive even when every hidden unit happens to rectify to zero.
        let logits_mat = self.fc_out.forward(&net);
        let logits = logits_mat.index_axis(Axis(1), 0).to_owned();
        let probs = logits.mapv(sigmoid);
        (
            probs,
            DecoderCache {
                x: queries.clone(),
                code: code.clone(),
                block_caches,
                net_final: net,
                logits,
            },
        )
    }

    /// Backward from the gradient w.r.t. the logits; returns the gradient
    /// w.r.t. the latent code.
    pub fn backward(
        &self,
        cache: &DecoderCache<F>,
        glogits: &Array1<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let n = glogits.len();
        let gy = glogits.to_owned().into_shape((n, 1)).unwrap();
        let mut gnet = self.fc_out.backward(&cache.net_final, &gy, grads);
        let d = cache.code.ncols();
        let mut gcode = Array2::<F>::zeros((n, d));
        for i in (0..self.blocks.len()).rev() {
            let ginput = self.blocks[i].backward(&cache.block_caches[i], &gnet, grads);
            gcode = gcode + self.fc_c[i].backward(&cache.code, &ginput, grads);
            gnet = ginput;
        }
        let _ = self.fc_p.backward(&cache.x, &gnet, grads);
        gcode
    }
}

impl<F: Scalar> Module<F> for Decoder<F> {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<F>)) {
        self.fc_p.visit(f);
        for (c, b) in self.fc_c.iter().zip(self.blocks.iter()) {
            c.visit(f);
            b.visit(f);
        }
        self.fc_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        self.fc_p.visit_mut(f);
        for (c, b) in self.fc_c.iter_mut().zip(self.blocks.iter_mut()) {
            c.visit_mut(f);
            b.visit_mut(f);
        }
        self.fc_out.visit_mut(f);
    }
}
