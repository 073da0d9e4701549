//! Architecture, parameter layout and the batched forward/backward passes.

use super::nn::{self, bce_with_logit, sigmoid, Conv, Dense, Resize, Shape};
use super::LatentError;
use std::ops::Range;

/// Layer widths of the encoder, decoder and regressor.
///
/// The encoder is a stack of stride-2 3×3 convolutions followed by a dense map
/// to `2J` outputs (mean and log-variance). The decoder maps `z` densely onto
/// a coarse grid with `decoder_channels[0]` channels, then for every further
/// entry resizes to the next finer encoder resolution and convolves; a final
/// convolution produces one logit per pixel. The regressor is a dense `tanh`
/// stack from `μ` to the four standardized components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
}

impl Architecture {
    /// Desk-scale network for `h × w` cells and a 16-dimensional latent space.
    pub fn desk(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            latent_dim: 16,
            encoder_channels: vec![8, 16, 32],
            decoder_channels: vec![16, 8, 8],
            regressor_hidden: vec![64, 64],
        }
    }

    /// 8×8 input, two latent dimensions, one hundred parameters.
    pub fn tiny() -> Self {
        Self {
            height: 8,
            width: 8,
            latent_dim: 2,
            encoder_channels: vec![1, 1],
            decoder_channels: vec![1, 1, 1],
            regressor_hidden: vec![2],
        }
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        let bad = |m: &str| Err(LatentError::InvalidConfig(m.to_string()));
        if self.height == 0 || self.width == 0 || self.latent_dim == 0 {
            return bad("input size and latent dimension must be positive");
        }
        if self.encoder_channels.is_empty() || self.decoder_channels.is_empty() {
            return bad("encoder and decoder need at least one layer");
        }
        if self.decoder_channels.len() > self.encoder_channels.len() + 1 {
            return bad("decoder has more upsampling stages than the encoder has resolutions");
        }
        let widths = self.encoder_channels.iter().chain(&self.decoder_channels).chain(&self.regressor_hidden);
        if widths.copied().any(|c| c == 0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    /// Spatial sizes from the input down through every encoder convolution.
    fn encoder_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![(self.height, self.width)];
        for _ in &self.encoder_channels {
            let (h, w) = *sizes.last().unwrap();
            sizes.push((nn::conv_out(h, 2), nn::conv_out(w, 2)));
        }
        sizes
    }

    pub(crate) fn plan(&self) -> Plan {
        let mut layout = Vec::new();
        let mut offset = 0;
        let mut slot = |name: String, fan_in: usize, fan_out: usize, w_len: usize| {
            let w = offset..offset + w_len;
            layout.push(LayerSpec { name: format!("{name}.w"), shape: vec![w_len / fan_out, fan_out], offset });
            offset += w_len;
            let b = offset..offset + fan_out;
            layout.push(LayerSpec { name: format!("{name}.b"), shape: vec![fan_out], offset });
            offset += fan_out;
            Slot { w, b, fan_in, fan_out }
        };
        let sizes = self.encoder_sizes();
        let mut enc_convs = Vec::new();
        let mut cin = 1;
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            let conv = Conv { input: Shape { h: sizes[i].0, w: sizes[i].1, c: cin }, cout: c, stride: 2 };
            enc_convs.push((conv, slot(format!("enc.conv{i}"), 9 * cin, c, conv.weight_len())));
            cin = c;
        }
        let flat = enc_convs.last().unwrap().0.output().len();
        let j = self.latent_dim;
        let enc_dense = (Dense { input: flat, output: 2 * j }, slot("enc.dense".into(), flat, 2 * j, flat * 2 * j));

        let stages = self.decoder_channels.len() - 1;
        let (sh, sw) = sizes[stages];
        let start = Shape { h: sh, w: sw, c: self.decoder_channels[0] };
        let dec_dense = (Dense { input: j, output: start.len() }, slot("dec.dense".into(), j, start.len(), j * start.len()));
        let mut dec_stages = Vec::new();
        let mut cur = start;
        for s in 1..=stages {
            let (th, tw) = sizes[stages - s];
            let resize = Resize { from: cur, to_h: th, to_w: tw };
            let conv = Conv { input: resize.output(), cout: self.decoder_channels[s], stride: 1 };
            let sl = slot(format!("dec.conv{}", s - 1), 9 * cur.c, conv.cout, conv.weight_len());
            dec_stages.push((resize, conv, sl));
            cur = conv.output();
        }
        let out_conv = Conv { input: cur, cout: 1, stride: 1 };
        let dec_out = (out_conv, slot("dec.out".into(), 9 * cur.c, 1, out_conv.weight_len()));

        let mut reg = Vec::new();
        let mut width = j;
        for (i, &hdim) in self.regressor_hidden.iter().chain(std::iter::once(&4)).enumerate() {
            reg.push((Dense { input: width, output: hdim }, slot(format!("reg.dense{i}"), width, hdim, width * hdim)));
            width = hdim;
        }
        Plan { enc_convs, enc_dense, dec_dense, dec_stages, dec_out, reg, layout, n_params: offset }
    }
}

/// One named array in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub enc_convs: Vec<(Conv, Slot)>,
    pub enc_dense: (Dense, Slot),
    pub dec_dense: (Dense, Slot),
    pub dec_stages: Vec<(Resize, Conv, Slot)>,
    pub dec_out: (Conv, Slot),
    pub reg: Vec<(Dense, Slot)>,
    pub layout: Vec<LayerSpec>,
    pub n_params: usize,
}

impl Plan {
    /// Slots whose weights feed a rectifier (He scaling) and the rest (Glorot scaling).
    pub fn slots(&self) -> Vec<(&Slot, bool)> {
        let mut v: Vec<(&Slot, bool)> = self.enc_convs.iter().map(|(_, s)| (s, true)).collect();
        v.push((&self.enc_dense.1, false));
        v.push((&self.dec_dense.1, true));
        v.extend(self.dec_stages.iter().map(|(_, _, s)| (s, true)));
        v.push((&self.dec_out.1, false));
        v.extend(self.reg.iter().map(|(_, s)| (s, false)));
        v
    }
}

/// Per-sample averages of the three loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub reg: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon.is_finite() && self.kl.is_finite() && self.reg.is_finite()
    }
}

pub(crate) fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu.iter().zip(logvar).map(|(m, lv)| 1.0 + lv - lv.exp() - m * m).sum::<f64>()
}

/// Activations kept for the backward pass.
struct Cache {
    batch: usize,
    enc_cols: Vec<Vec<f64>>,
    enc_acts: Vec<Vec<f64>>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
    dec_h0: Vec<f64>,
    dec_cols: Vec<Vec<f64>>,
    dec_acts: Vec<Vec<f64>>,
    out_col: Vec<f64>,
    logits: Vec<f64>,
    reg_inputs: Vec<Vec<f64>>,
    pred: Vec<f64>,
}

pub(crate) struct Network<'a> {
    pub plan: &'a Plan,
    pub params: &'a [f64],
    pub j: usize,
}

impl<'a> Network<'a> {
    fn w(&self, s: &Slot) -> &'a [f64] {
        &self.params[s.w.clone()]
    }

    fn b(&self, s: &Slot) -> &'a [f64] {
        &self.params[s.b.clone()]
    }

    /// Encoder: returns the post-activation maps, im2col buffers and `(μ, log σ²)` per sample.
    #[allow(clippy::type_complexity)]
    fn encoder(&self, x: &[f64], batch: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let mut cols = Vec::new();
        let mut acts = Vec::new();
        let mut h = x.to_vec();
        for (conv, s) in &self.plan.enc_convs {
            let (mut y, col) = conv.forward(&h, self.w(s), self.b(s), batch);
            nn::relu_inplace(&mut y);
            cols.push(col);
            acts.push(y.clone());
            h = y;
        }
        let (d, s) = &self.plan.enc_dense;
        let out = d.forward(&h, self.w(s), self.b(s), batch);
        (cols, acts, out)
    }

    pub fn encode(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let (_, _, out) = self.encoder(x, batch);
        split_posterior(&out, batch, self.j)
    }

    #[allow(clippy::type_complexity)]
    fn decoder(&self, z: &[f64], batch: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let (d, s) = &self.plan.dec_dense;
        let mut h0 = d.forward(z, self.w(s), self.b(s), batch);
        nn::relu_inplace(&mut h0);
        let mut cols = Vec::new();
        let mut acts = Vec::new();
        let mut h = h0.clone();
        for (resize, conv, s) in &self.plan.dec_stages {
            let up = resize.forward(&h, batch);
            let (mut y, col) = conv.forward(&up, self.w(s), self.b(s), batch);
            nn::relu_inplace(&mut y);
            cols.push(col);
            acts.push(y.clone());
            h = y;
        }
        let (conv, s) = &self.plan.dec_out;
        let (logits, out_col) = conv.forward(&h, self.w(s), self.b(s), batch);
        (h0, cols, acts, out_col, logits)
    }

    /// Pixel logits for each latent vector.
    pub fn decode_logits(&self, z: &[f64], batch: usize) -> Vec<f64> {
        self.decoder(z, batch).4
    }

    fn regressor(&self, mu: &[f64], batch: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut inputs = Vec::new();
        let mut h = mu.to_vec();
        let last = self.plan.reg.len() - 1;
        for (i, (d, s)) in self.plan.reg.iter().enumerate() {
            let mut y = d.forward(&h, self.w(s), self.b(s), batch);
            if i < last {
                nn::tanh_inplace(&mut y);
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        (inputs, h)
    }

    /// Standardized property predictions from posterior means.
    pub fn regress(&self, mu: &[f64], batch: usize) -> Vec<f64> {
        self.regressor(mu, batch).1
    }

    fn forward(&self, x: &[f64], eps: &[f64], batch: usize) -> Cache {
        let (enc_cols, enc_acts, out) = self.encoder(x, batch);
        let (mu, logvar) = split_posterior(&out, batch, self.j);
        let z: Vec<f64> = (0..mu.len()).map(|i| mu[i] + (0.5 * logvar[i]).exp() * eps[i]).collect();
        let (dec_h0, dec_cols, dec_acts, out_col, logits) = self.decoder(&z, batch);
        let (reg_inputs, pred) = self.regressor(&mu, batch);
        Cache {
            batch,
            enc_cols,
            enc_acts,
            mu,
            logvar,
            eps: eps.to_vec(),
            z,
            dec_h0,
            dec_cols,
            dec_acts,
            out_col,
            logits,
            reg_inputs,
            pred,
        }
    }

    /// Batch-mean loss and its gradient with respect to every parameter.
    ///
    /// `x` holds pixel targets in [0, 1], `labels` standardized properties
    /// (four per sample) and `eps` the reparameterization noise (`J` per sample).
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        labels: &[f64],
        eps: &[f64],
        batch: usize,
        reg_weight: f64,
        want_grad: bool,
    ) -> (LossTerms, Vec<f64>) {
        let c = self.forward(x, eps, batch);
        let j = self.j;
        let npix = x.len() / batch;
        let inv = 1.0 / batch as f64;
        let mut terms = LossTerms::default();
        let mut dlogits = vec![0.0; c.logits.len()];
        for (k, (&a, &t)) in c.logits.iter().zip(x).enumerate() {
            terms.recon += bce_with_logit(a, t);
            dlogits[k] = (sigmoid(a) - t) * inv;
        }
        let mut dpred = vec![0.0; c.pred.len()];
        for b in 0..batch {
            terms.kl += kl_divergence(&c.mu[b * j..(b + 1) * j], &c.logvar[b * j..(b + 1) * j]);
            let diff: Vec<f64> = (0..4).map(|k| c.pred[4 * b + k] - labels[4 * b + k]).collect();
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            terms.reg += reg_weight * norm;
            if norm > 0.0 {
                for k in 0..4 {
                    dpred[4 * b + k] = reg_weight * diff[k] / norm * inv;
                }
            }
        }
        terms.recon *= inv;
        terms.kl *= inv;
        terms.reg *= inv;
        terms.total = terms.recon + terms.kl + terms.reg;
        debug_assert_eq!(npix * batch, c.logits.len());
        if !want_grad {
            return (terms, Vec::new());
        }
        (terms, self.backward(&c, dlogits, dpred, inv))
    }

    fn backward(&self, c: &Cache, dlogits: Vec<f64>, dpred: Vec<f64>, inv: f64) -> Vec<f64> {
        let plan = self.plan;
        let batch = c.batch;
        let j = self.j;
        let mut g = vec![0.0; self.params.len()];

        // decoder
        let (conv, s) = &plan.dec_out;
        let (gw, gb) = grad_slices(&mut g, s);
        let mut dh = conv.backward(&c.out_col, &dlogits, self.w(s), gw, gb, batch, true).unwrap();
        for (k, (resize, conv, s)) in plan.dec_stages.iter().enumerate().rev() {
            nn::relu_backward(&c.dec_acts[k], &mut dh);
            let (gw, gb) = grad_slices(&mut g, s);
            let dup = conv.backward(&c.dec_cols[k], &dh, self.w(s), gw, gb, batch, true).unwrap();
            dh = resize.backward(&dup, batch);
        }
        nn::relu_backward(&c.dec_h0, &mut dh);
        let (d, s) = &plan.dec_dense;
        let (gw, gb) = grad_slices(&mut g, s);
        let dz = d.backward(&c.z, &dh, self.w(s), gw, gb, batch, true).unwrap();

        // regressor
        let mut dr = dpred;
        let last = plan.reg.len() - 1;
        for (i, (d, s)) in plan.reg.iter().enumerate().rev() {
            if i < last {
                nn::tanh_backward(&c.reg_inputs[i + 1], &mut dr);
            }
            let (gw, gb) = grad_slices(&mut g, s);
            dr = d.backward(&c.reg_inputs[i], &dr, self.w(s), gw, gb, batch, true).unwrap();
        }

        // posterior: reparameterization, KL and the regressor path
        let mut dout = vec![0.0; batch * 2 * j];
        for b in 0..batch {
            for k in 0..j {
                let i = b * j + k;
                let var = c.logvar[i].exp();
                let sigma = (0.5 * c.logvar[i]).exp();
                dout[b * 2 * j + k] = dz[i] + c.mu[i] * inv + dr[i];
                dout[b * 2 * j + j + k] = dz[i] * c.eps[i] * 0.5 * sigma + 0.5 * (var - 1.0) * inv;
            }
        }

        // encoder
        let (d, s) = &plan.enc_dense;
        let (gw, gb) = grad_slices(&mut g, s);
        let flat = c.enc_acts.last().unwrap();
        let mut dh = d.backward(flat, &dout, self.w(s), gw, gb, batch, true).unwrap();
        for (k, (conv, s)) in plan.enc_convs.iter().enumerate().rev() {
            nn::relu_backward(&c.enc_acts[k], &mut dh);
            let (gw, gb) = grad_slices(&mut g, s);
            match conv.backward(&c.enc_cols[k], &dh, self.w(s), gw, gb, batch, k > 0) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
        g
    }
}

fn grad_slices<'g>(g: &'g mut [f64], s: &Slot) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert_eq!(s.w.end, s.b.start);
    let (w, b) = g[s.w.start..s.b.end].split_at_mut(s.w.len());
    (w, b)
}

fn split_posterior(out: &[f64], batch: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = Vec::with_capacity(batch * j);
    let mut logvar = Vec::with_capacity(batch * j);
    for b in 0..batch {
        mu.extend_from_slice(&out[b * 2 * j..b * 2 * j + j]);
        logvar.extend_from_slice(&out[b * 2 * j + j..(b + 1) * 2 * j]);
    }
    (mu, logvar)
}
