//! Flat-parameter network: calendar embedding, two valid 1-D convolutions
//! with ReLU, a GRU stack and a bias-free dense head.
//!
//! GRU cell, per step (`*` is elementwise):
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r * h) + b_n)
//! h' = (1 - z) * n + z * h
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape. `output_slots` is also the number of slot-of-day
/// embedding rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub gru_units: usize,
    pub gru_layers: usize,
    pub kernel_size: usize,
    pub embed_dim: usize,
    pub input_window_days: usize,
    pub output_slots: usize,
}

impl ModelConfig {
    /// Per-cluster model.
    pub fn small(input_window_days: usize) -> Self {
        ModelConfig {
            conv1_filters: 16,
            conv2_filters: 64,
            gru_units: 32,
            gru_layers: 1,
            kernel_size: 3,
            embed_dim: 4,
            input_window_days,
            output_slots: 12,
        }
    }

    /// Whole-household model.
    pub fn large(input_window_days: usize) -> Self {
        ModelConfig {
            conv1_filters: 32,
            conv2_filters: 128,
            gru_units: 64,
            gru_layers: 3,
            ..ModelConfig::small(input_window_days)
        }
    }

    pub fn sequence_len(&self) -> usize {
        self.input_window_days * self.output_slots
    }

    /// Steps seen by the GRU after two valid convolutions.
    pub fn gru_len(&self) -> usize {
        self.sequence_len() - 2 * (self.kernel_size - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("gru_units", self.gru_units),
            ("gru_layers", self.gru_layers),
            ("kernel_size", self.kernel_size),
            ("embed_dim", self.embed_dim),
            ("input_window_days", self.input_window_days),
            ("output_slots", self.output_slots),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if self.sequence_len() < 2 * (self.kernel_size - 1) + 1 {
            return Err(Error::Config(format!(
                "input window of {} steps is too short for two kernels of size {}",
                self.sequence_len(),
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Name, shape and position of one parameter tensor in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct GruOffsets {
    input: usize,
    w: usize,
    u: usize,
    b: usize,
}

/// Parameter layout for a config and a number of numeric input channels.
#[derive(Debug, Clone)]
pub struct Layout {
    pub config: ModelConfig,
    pub numeric: usize,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    emb_dow: usize,
    emb_slot: usize,
    emb_holiday: usize,
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    gru: Vec<GruOffsets>,
    dense: usize,
}

impl Layout {
    pub fn new(config: ModelConfig, numeric: usize) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let spec = TensorSpec {
                name,
                shape,
                offset: total,
                fan_in,
            };
            total += spec.len();
            let offset = spec.offset;
            tensors.push(spec);
            offset
        };
        let e = config.embed_dim;
        let c0 = numeric + e;
        let k = config.kernel_size;
        let (f1, f2, h) = (config.conv1_filters, config.conv2_filters, config.gru_units);
        let emb_dow = push("embed.day_of_week".into(), vec![7, e], 1);
        let emb_slot = push("embed.slot".into(), vec![config.output_slots, e], 1);
        let emb_holiday = push("embed.holiday".into(), vec![2, e], 1);
        let c1w = push("conv1.weight".into(), vec![f1, c0, k], c0 * k);
        let c1b = push("conv1.bias".into(), vec![f1], c0 * k);
        let c2w = push("conv2.weight".into(), vec![f2, f1, k], f1 * k);
        let c2b = push("conv2.bias".into(), vec![f2], f1 * k);
        let mut gru = Vec::new();
        for l in 0..config.gru_layers {
            let input = if l == 0 { f2 } else { h };
            let w = push(format!("gru{l}.input_weight"), vec![3 * h, input], input);
            let u = push(format!("gru{l}.hidden_weight"), vec![3 * h, h], h);
            let b = push(format!("gru{l}.bias"), vec![3 * h], h);
            gru.push(GruOffsets { input, w, u, b });
        }
        let dense = push("dense.weight".into(), vec![config.output_slots, h], h);
        Ok(Layout {
            config,
            numeric,
            tensors,
            total,
            emb_dow,
            emb_slot,
            emb_holiday,
            c1w,
            c1b,
            c2w,
            c2b,
            gru,
            dense,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.numeric + self.config.embed_dim
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.total];
        for t in &self.tensors {
            let bound = 1.0 / (t.fan_in as f64).sqrt();
            for p in &mut params[t.range()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        params
    }
}

/// One model input: `steps` rows of numeric channels plus calendar ids
/// `[day_of_week, slot, holiday]`, and the normalized day-ahead target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub numeric: Vec<f64>,
    pub calendar: Vec<[usize; 3]>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn steps(&self) -> usize {
        self.calendar.len()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += scale * v`
fn axpy(out: &mut [f64], scale: f64, v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += scale * x;
    }
}

struct GruCache {
    /// Hidden states `h_0..h_T`, row-major.
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct Cache {
    x0: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    gru: Vec<GruCache>,
}

fn conv_forward(x: &[f64], steps: usize, cin: usize, w: &[f64], b: &[f64], cout: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let out_steps = steps - k + 1;
    let mut z = vec![0.0; out_steps * cout];
    for t in 0..out_steps {
        let window = &x[t * cin..(t + k) * cin];
        for f in 0..cout {
            let wf = &w[f * cin * k..(f + 1) * cin * k];
            let mut s = b[f];
            for j in 0..k {
                let xr = &window[j * cin..(j + 1) * cin];
                for c in 0..cin {
                    s += wf[c * k + j] * xr[c];
                }
            }
            z[t * cout + f] = s;
        }
    }
    let a = z.iter().map(|v| v.max(0.0)).collect();
    (z, a)
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    steps: usize,
    cin: usize,
    w: &[f64],
    z: &[f64],
    da: &[f64],
    cout: usize,
    k: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let out_steps = steps - k + 1;
    let mut dx = vec![0.0; steps * cin];
    for t in 0..out_steps {
        for f in 0..cout {
            let idx = t * cout + f;
            if z[idx] <= 0.0 {
                continue;
            }
            let g = da[idx];
            db[f] += g;
            let wf = &w[f * cin * k..(f + 1) * cin * k];
            let dwf = &mut dw[f * cin * k..(f + 1) * cin * k];
            for j in 0..k {
                let row = (t + j) * cin;
                for c in 0..cin {
                    dwf[c * k + j] += g * x[row + c];
                    dx[row + c] += g * wf[c * k + j];
                }
            }
        }
    }
    dx
}

fn gru_forward(x: &[f64], steps: usize, d: usize, hsz: usize, w: &[f64], u: &[f64], b: &[f64]) -> GruCache {
    let mut h = vec![0.0; (steps + 1) * hsz];
    let mut zs = vec![0.0; steps * hsz];
    let mut rs = vec![0.0; steps * hsz];
    let mut ns = vec![0.0; steps * hsz];
    let mut rh = vec![0.0; hsz];
    for t in 0..steps {
        let xt = &x[t * d..(t + 1) * d];
        let (prev, next) = h.split_at_mut((t + 1) * hsz);
        let hp = &prev[t * hsz..];
        let hn = &mut next[..hsz];
        for i in 0..hsz {
            let zi = b[i] + dot(&w[i * d..(i + 1) * d], xt) + dot(&u[i * hsz..(i + 1) * hsz], hp);
            let ri_row = hsz + i;
            let ri = b[ri_row] + dot(&w[ri_row * d..(ri_row + 1) * d], xt) + dot(&u[ri_row * hsz..(ri_row + 1) * hsz], hp);
            zs[t * hsz + i] = sigmoid(zi);
            rs[t * hsz + i] = sigmoid(ri);
        }
        for i in 0..hsz {
            rh[i] = rs[t * hsz + i] * hp[i];
        }
        for i in 0..hsz {
            let row = 2 * hsz + i;
            let ni = (b[row] + dot(&w[row * d..(row + 1) * d], xt) + dot(&u[row * hsz..(row + 1) * hsz], &rh)).tanh();
            ns[t * hsz + i] = ni;
            let zi = zs[t * hsz + i];
            hn[i] = (1.0 - zi) * ni + zi * hp[i];
        }
    }
    GruCache {
        h,
        z: zs,
        r: rs,
        n: ns,
    }
}

/// Backward through one GRU layer. `dh_out` holds the loss gradient with
/// respect to each emitted hidden state `h_1..h_T`.
#[allow(clippy::too_many_arguments)]
fn gru_backward(
    x: &[f64],
    steps: usize,
    d: usize,
    hsz: usize,
    w: &[f64],
    u: &[f64],
    cache: &GruCache,
    dh_out: &[f64],
    dw: &mut [f64],
    du: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; steps * d];
    let mut dh = vec![0.0; hsz];
    let mut dhp = vec![0.0; hsz];
    let mut dan = vec![0.0; hsz];
    let mut daz = vec![0.0; hsz];
    let mut dar = vec![0.0; hsz];
    let mut rh = vec![0.0; hsz];
    let mut drh = vec![0.0; hsz];
    for t in (0..steps).rev() {
        for i in 0..hsz {
            dh[i] += dh_out[t * hsz + i];
        }
        let hp = &cache.h[t * hsz..(t + 1) * hsz];
        let z = &cache.z[t * hsz..(t + 1) * hsz];
        let r = &cache.r[t * hsz..(t + 1) * hsz];
        let n = &cache.n[t * hsz..(t + 1) * hsz];
        let xt = &x[t * d..(t + 1) * d];
        for i in 0..hsz {
            let dn = dh[i] * (1.0 - z[i]);
            let dz = dh[i] * (hp[i] - n[i]);
            dhp[i] = dh[i] * z[i];
            dan[i] = dn * (1.0 - n[i] * n[i]);
            daz[i] = dz * z[i] * (1.0 - z[i]);
            rh[i] = r[i] * hp[i];
        }
        // Candidate: recurrent path goes through r * h.
        drh.iter_mut().for_each(|v| *v = 0.0);
        for (i, &g) in dan.iter().enumerate() {
            let row = 2 * hsz + i;
            db[row] += g;
            axpy(&mut dw[row * d..(row + 1) * d], g, xt);
            axpy(&mut du[row * hsz..(row + 1) * hsz], g, &rh);
            axpy(&mut dx[t * d..(t + 1) * d], g, &w[row * d..(row + 1) * d]);
            axpy(&mut drh, g, &u[row * hsz..(row + 1) * hsz]);
        }
        for i in 0..hsz {
            dar[i] = drh[i] * hp[i] * r[i] * (1.0 - r[i]);
            dhp[i] += drh[i] * r[i];
        }
        for (gate, grads) in [(0, &daz), (1, &dar)] {
            for (i, &g) in grads.iter().enumerate() {
                let row = gate * hsz + i;
                db[row] += g;
                axpy(&mut dw[row * d..(row + 1) * d], g, xt);
                axpy(&mut du[row * hsz..(row + 1) * hsz], g, hp);
                axpy(&mut dx[t * d..(t + 1) * d], g, &w[row * d..(row + 1) * d]);
                axpy(&mut dhp, g, &u[row * hsz..(row + 1) * hsz]);
            }
        }
        std::mem::swap(&mut dh, &mut dhp);
    }
    dx
}

impl Layout {
    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let steps = self.config.sequence_len();
        if sample.steps() != steps || sample.numeric.len() != steps * self.numeric {
            return Err(Error::Shape(format!(
                "sample has {} steps x {} values, model expects {steps} steps x {} channels",
                sample.steps(),
                sample.numeric.len(),
                self.numeric
            )));
        }
        let slots = self.config.output_slots;
        if let Some(c) = sample.calendar.iter().find(|c| c[0] >= 7 || c[1] >= slots || c[2] >= 2) {
            return Err(Error::Shape(format!("calendar ids {c:?} out of range")));
        }
        Ok(())
    }

    /// Forward pass; returns the outputs and the activation cache.
    pub fn forward(&self, params: &[f64], sample: &Sample) -> Result<(Vec<f64>, Cache)> {
        self.check_sample(sample)?;
        let cfg = &self.config;
        let (e, k, hsz) = (cfg.embed_dim, cfg.kernel_size, cfg.gru_units);
        let c0 = self.input_channels();
        let steps = cfg.sequence_len();
        let mut x0 = vec![0.0; steps * c0];
        for t in 0..steps {
            let row = &mut x0[t * c0..(t + 1) * c0];
            row[..self.numeric].copy_from_slice(&sample.numeric[t * self.numeric..(t + 1) * self.numeric]);
            let [dow, slot, hol] = sample.calendar[t];
            for i in 0..e {
                row[self.numeric + i] = params[self.emb_dow + dow * e + i]
                    + params[self.emb_slot + slot * e + i]
                    + params[self.emb_holiday + hol * e + i];
            }
        }
        let (f1, f2) = (cfg.conv1_filters, cfg.conv2_filters);
        let s1 = steps - k + 1;
        let s2 = s1 - k + 1;
        let (z1, a1) = conv_forward(&x0, steps, c0, &params[self.c1w..], &params[self.c1b..], f1, k);
        let (z2, a2) = conv_forward(&a1, s1, f1, &params[self.c2w..], &params[self.c2b..], f2, k);
        let mut gru = Vec::with_capacity(self.gru.len());
        for (l, off) in self.gru.iter().enumerate() {
            let lower;
            let input: &[f64] = if l == 0 {
                &a2
            } else {
                lower = gru_outputs(&gru[l - 1], hsz);
                &lower
            };
            let c = gru_forward(input, s2, off.input, hsz, &params[off.w..], &params[off.u..], &params[off.b..]);
            gru.push(c);
        }
        let last = gru.last().expect("at least one layer");
        let h_last = &last.h[s2 * hsz..];
        let out = (0..cfg.output_slots)
            .map(|o| dot(&params[self.dense + o * hsz..self.dense + (o + 1) * hsz], h_last))
            .collect();
        Ok((
            out,
            Cache {
                x0,
                z1,
                a1,
                z2,
                a2,
                gru,
            },
        ))
    }

    pub fn predict(&self, params: &[f64], sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.forward(params, sample)?.0)
    }

    /// Mean squared error of one sample; gradients are added into `grad`.
    pub fn loss_and_grad(&self, params: &[f64], sample: &Sample, grad: &mut [f64]) -> Result<f64> {
        if sample.target.len() != self.config.output_slots {
            return Err(Error::Shape(format!(
                "target has {} values, model emits {}",
                sample.target.len(),
                self.config.output_slots
            )));
        }
        let (out, cache) = self.forward(params, sample)?;
        let cfg = &self.config;
        let (e, k, hsz) = (cfg.embed_dim, cfg.kernel_size, cfg.gru_units);
        let slots = cfg.output_slots as f64;
        let steps = cfg.sequence_len();
        let s1 = steps - k + 1;
        let s2 = s1 - k + 1;
        let mut loss = 0.0;
        let mut dy = vec![0.0; out.len()];
        for (o, (y, t)) in out.iter().zip(&sample.target).enumerate() {
            loss += (y - t) * (y - t);
            dy[o] = 2.0 * (y - t) / slots;
        }
        loss /= slots;

        let top = cache.gru.last().expect("at least one layer");
        let h_last = &top.h[s2 * hsz..];
        let mut dh_out = vec![0.0; s2 * hsz];
        for (o, g) in dy.iter().enumerate() {
            axpy(&mut grad[self.dense + o * hsz..self.dense + (o + 1) * hsz], *g, h_last);
            axpy(
                &mut dh_out[(s2 - 1) * hsz..],
                *g,
                &params[self.dense + o * hsz..self.dense + (o + 1) * hsz],
            );
        }
        for l in (0..self.gru.len()).rev() {
            let off = self.gru[l];
            let lower;
            let input: &[f64] = if l == 0 {
                &cache.a2
            } else {
                lower = gru_outputs(&cache.gru[l - 1], hsz);
                &lower
            };
            let (dw, rest) = grad[off.w..].split_at_mut(3 * hsz * off.input);
            let (du, rest) = rest.split_at_mut(3 * hsz * hsz);
            let db = &mut rest[..3 * hsz];
            dh_out = gru_backward(
                input,
                s2,
                off.input,
                hsz,
                &params[off.w..],
                &params[off.u..],
                &cache.gru[l],
                &dh_out,
                dw,
                du,
                db,
            );
        }
        let (f1, f2) = (cfg.conv1_filters, cfg.conv2_filters);
        let c0 = self.input_channels();
        let (dw2, rest) = grad[self.c2w..].split_at_mut(f2 * f1 * k);
        let da1 = conv_backward(&cache.a1, s1, f1, &params[self.c2w..], &cache.z2, &dh_out, f2, k, dw2, &mut rest[..f2]);
        let (dw1, rest) = grad[self.c1w..].split_at_mut(f1 * c0 * k);
        let dx0 = conv_backward(&cache.x0, steps, c0, &params[self.c1w..], &cache.z1, &da1, f1, k, dw1, &mut rest[..f1]);
        for t in 0..steps {
            let [dow, slot, hol] = sample.calendar[t];
            for i in 0..e {
                let g = dx0[t * c0 + self.numeric + i];
                grad[self.emb_dow + dow * e + i] += g;
                grad[self.emb_slot + slot * e + i] += g;
                grad[self.emb_holiday + hol * e + i] += g;
            }
        }
        Ok(loss)
    }

    /// Loss of one sample without gradients.
    pub fn loss(&self, params: &[f64], sample: &Sample) -> Result<f64> {
        let out = self.predict(params, sample)?;
        Ok(out.iter().zip(&sample.target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / out.len() as f64)
    }
}

/// Hidden states `h_1..h_T` of a layer as the next layer's input sequence.
fn gru_outputs(c: &GruCache, hsz: usize) -> Vec<f64> {
    c.h[hsz..].to_vec()
}
