use ndarray::{s, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, BiLstm, BiLstmCache, Linear, LinearCache, Module, Param, Real};
use crate::stage::NUM_STAGES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Hidden size per direction.
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            num_layers: 2,
            num_classes: NUM_STAGES,
        }
    }
}

/// Stacked BiLSTM over a feature series followed by one fully connected layer.
///
/// The classifier sees only the top layer's forward state at the last step
/// and its backward state at the first step, concatenated to width `2u`.
#[derive(Debug, Clone)]
pub struct ContextHead<F: Real> {
    pub layers: Vec<BiLstm<F>>,
    pub fc: Linear<F>,
}

#[derive(Debug)]
pub struct HeadCache<F: Real> {
    layers: Vec<BiLstmCache<F>>,
    fc: LinearCache<F>,
    steps: usize,
    batch: usize,
}

impl<F: Real> ContextHead<F> {
    pub fn new<R: Rng + ?Sized>(input_size: usize, config: &HeadConfig, rng: &mut R) -> Result<Self> {
        if config.num_layers == 0 || config.hidden_size == 0 || config.num_classes == 0 {
            return Err(Error::Config(format!("invalid head config {config:?}")));
        }
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut width = input_size;
        for _ in 0..config.num_layers {
            layers.push(BiLstm::new(width, config.hidden_size, rng));
            width = 2 * config.hidden_size;
        }
        let fc = Linear::new(2 * config.hidden_size, config.num_classes, rng);
        Ok(Self { layers, fc })
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fwd.input_size()
    }

    /// Runs the recurrence over `[T, B, D]` and returns the top layer's outputs `[T, B, 2u]`.
    pub fn recurrent_outputs(&self, seq: &Array3<F>) -> Result<(Array3<F>, Vec<BiLstmCache<F>>)> {
        let (t, _, d) = seq.dim();
        if t == 0 {
            return Err(Error::Shape("context head needs at least one time step".into()));
        }
        if d != self.input_size() {
            return Err(Error::Shape(format!(
                "context head expects feature width {}, got {d}",
                self.input_size()
            )));
        }
        if seq.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature series contains NaN or Inf".into()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = seq.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&x);
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    /// `[h_fwd(T), h_bwd(1)]` for each batch row, width `2u`.
    pub fn final_context(&self, outputs: &Array3<F>) -> Array2<F> {
        let (t, b, _) = outputs.dim();
        let h = self.hidden();
        let mut ctx = Array2::zeros((b, 2 * h));
        ctx.slice_mut(s![.., ..h]).assign(&outputs.slice(s![t - 1, .., ..h]));
        ctx.slice_mut(s![.., h..]).assign(&outputs.slice(s![0, .., h..]));
        ctx
    }

    /// Logits from precomputed top-layer outputs.
    pub fn classify_outputs(&self, outputs: &Array3<F>) -> Array2<F> {
        self.fc.forward(self.final_context(outputs)).0
    }

    pub fn forward(&self, seq: &Array3<F>) -> Result<(Array2<F>, HeadCache<F>)> {
        let (outputs, layers) = self.recurrent_outputs(seq)?;
        let (t, b, _) = outputs.dim();
        let (logits, fc) = self.fc.forward(self.final_context(&outputs));
        Ok((
            logits,
            HeadCache {
                layers,
                fc,
                steps: t,
                batch: b,
            },
        ))
    }

    /// Returns the gradient w.r.t. the input series `[T, B, D]`.
    pub fn backward(&mut self, cache: HeadCache<F>, dlogits: &Array2<F>) -> Array3<F> {
        let h = self.hidden();
        let dctx = self.fc.backward(cache.fc, dlogits);
        let mut dy = Array3::zeros((cache.steps, cache.batch, 2 * h));
        dy.slice_mut(s![cache.steps - 1, .., ..h]).assign(&dctx.slice(s![.., ..h]));
        {
            let mut first = dy.slice_mut(s![0, .., h..]);
            first += &dctx.slice(s![.., h..]);
        }
        for (layer, c) in self.layers.iter_mut().zip(cache.layers).rev() {
            dy = layer.backward(c, &dy);
        }
        dy
    }
}

impl<F: Real> Module<F> for ContextHead<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("lstm{i}")), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("lstm{i}")), f);
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}
