//! Forward and backward passes of the CRNN over a mini-batch of segments.
//!
//! Activations are stored time-major per segment as `[batch][time][band][channel]`.

use super::config::{FreqIntegration, KERNEL};
use super::loss::LossConfig;
use super::model::{CrnnModel, GruParams, ParamSet};
use super::real::{gemm, sigmoid, Real, View};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

/// Upper bound on elements in one im2col buffer.
const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization.
    Train,
    /// Running statistics in batch normalization.
    Infer,
}

struct ConvCache<T> {
    input: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    argmax: Vec<u32>,
    fin: usize,
    fout: usize,
    ci: usize,
    co: usize,
}

struct GruCache<T> {
    /// Input projection plus input bias, time order, `[T][3H]`.
    xw: Vec<T>,
    /// Remaining caches are in processing order, `[T][H]`.
    hu_n: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    /// `[T + 1][H]`; row 0 is the initial zero state.
    h: Vec<T>,
    reverse: bool,
}

/// Everything the backward pass needs.
pub struct ForwardCache<T> {
    pub batch: usize,
    pub frames: usize,
    pub mode: Mode,
    convs: Vec<ConvCache<T>>,
    pooled: Vec<T>,
    integ_argmax: Vec<u32>,
    integrated: Vec<T>,
    gru: Vec<(GruCache<T>, Option<GruCache<T>>)>,
    hidden: Vec<T>,
    /// `[batch][time]` output probabilities.
    pub probs: Vec<T>,
}

fn im2col<T: Real>(
    x: &[T],
    frames: usize,
    fin: usize,
    ci: usize,
    t0: usize,
    t1: usize,
    col: &mut [T],
) {
    let k = KERNEL * KERNEL * ci;
    let half = (KERNEL / 2) as isize;
    for tt in t0..t1 {
        for f in 0..fin {
            let row = &mut col[((tt - t0) * fin + f) * k..((tt - t0) * fin + f + 1) * k];
            for dt in 0..KERNEL {
                let ts = tt as isize + dt as isize - half;
                let seg = &mut row[dt * KERNEL * ci..(dt + 1) * KERNEL * ci];
                if ts < 0 || ts >= frames as isize {
                    seg.iter_mut().for_each(|v| *v = T::zero());
                    continue;
                }
                let base = ts as usize * fin;
                for df in 0..KERNEL {
                    let fs = f as isize + df as isize - half;
                    let dst = &mut seg[df * ci..(df + 1) * ci];
                    if fs < 0 || fs >= fin as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                    } else {
                        let src = (base + fs as usize) * ci;
                        dst.copy_from_slice(&x[src..src + ci]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(
    dcol: &[T],
    frames: usize,
    fin: usize,
    ci: usize,
    t0: usize,
    t1: usize,
    dx: &mut [T],
) {
    let k = KERNEL * KERNEL * ci;
    let half = (KERNEL / 2) as isize;
    for tt in t0..t1 {
        for f in 0..fin {
            let row = &dcol[((tt - t0) * fin + f) * k..((tt - t0) * fin + f + 1) * k];
            for dt in 0..KERNEL {
                let ts = tt as isize + dt as isize - half;
                if ts < 0 || ts >= frames as isize {
                    continue;
                }
                let base = ts as usize * fin;
                for df in 0..KERNEL {
                    let fs = f as isize + df as isize - half;
                    if fs < 0 || fs >= fin as isize {
                        continue;
                    }
                    let dst = (base + fs as usize) * ci;
                    let src = &row[(dt * KERNEL + df) * ci..(dt * KERNEL + df + 1) * ci];
                    for (d, s) in dx[dst..dst + ci].iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn time_chunk(fin: usize, ci: usize) -> usize {
    (COL_BUDGET / (fin * KERNEL * KERNEL * ci)).max(1)
}

/// Same-padded 5x5 convolution, stride 1, for every segment.
fn conv_forward<T: Real>(
    x: &[T],
    batch: usize,
    frames: usize,
    fin: usize,
    ci: usize,
    kernel: &[T],
    bias: &[T],
    co: usize,
) -> Vec<T> {
    let k = KERNEL * KERNEL * ci;
    let seg_in = frames * fin * ci;
    let seg_out = frames * fin * co;
    let chunk = time_chunk(fin, ci).min(frames);
    let mut y = vec![T::zero(); batch * seg_out];
    let mut col = vec![T::zero(); chunk * fin * k];
    for b in 0..batch {
        let xb = &x[b * seg_in..(b + 1) * seg_in];
        let mut t0 = 0;
        while t0 < frames {
            let t1 = (t0 + chunk).min(frames);
            let rows = (t1 - t0) * fin;
            im2col(xb, frames, fin, ci, t0, t1, &mut col);
            let out = &mut y[b * seg_out + t0 * fin * co..b * seg_out + t1 * fin * co];
            gemm(T::one(), View::rm(&col[..rows * k], rows, k), View::rm(kernel, k, co), T::zero(), out);
            t0 = t1;
        }
    }
    for row in y.chunks_exact_mut(co) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &[T],
    dy: &[T],
    batch: usize,
    frames: usize,
    fin: usize,
    ci: usize,
    kernel: &[T],
    co: usize,
    dkernel: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let k = KERNEL * KERNEL * ci;
    let seg_in = frames * fin * ci;
    let seg_out = frames * fin * co;
    let chunk = time_chunk(fin, ci).min(frames);
    let mut col = vec![T::zero(); chunk * fin * k];
    let mut dcol = if need_dx { vec![T::zero(); chunk * fin * k] } else { Vec::new() };
    let mut dx = if need_dx { vec![T::zero(); batch * seg_in] } else { Vec::new() };
    for b in 0..batch {
        let xb = &x[b * seg_in..(b + 1) * seg_in];
        let mut t0 = 0;
        while t0 < frames {
            let t1 = (t0 + chunk).min(frames);
            let rows = (t1 - t0) * fin;
            im2col(xb, frames, fin, ci, t0, t1, &mut col);
            let dyc = &dy[b * seg_out + t0 * fin * co..b * seg_out + t1 * fin * co];
            gemm(T::one(), View::rm_t(&col[..rows * k], rows, k), View::rm(dyc, rows, co), T::one(), dkernel);
            if need_dx {
                gemm(T::one(), View::rm(dyc, rows, co), View::rm_t(kernel, k, co), T::zero(), &mut dcol[..rows * k]);
                col2im_add(&dcol[..rows * k], frames, fin, ci, t0, t1, &mut dx[b * seg_in..(b + 1) * seg_in]);
            }
            t0 = t1;
        }
    }
    for row in dy.chunks_exact(co) {
        for (d, v) in dbias.iter_mut().zip(row) {
            *d += *v;
        }
    }
    need_dx.then_some(dx)
}

fn gru_forward<T: Real>(x: &[T], frames: usize, g: &GruParams<T>, reverse: bool) -> GruCache<T> {
    let (d, h) = (g.input_dim, g.hidden);
    let h3 = 3 * h;
    let mut xw = vec![T::zero(); frames * h3];
    gemm(T::one(), View::rm(x, frames, d), View::rm(&g.kernel, d, h3), T::zero(), &mut xw);
    for row in xw.chunks_exact_mut(h3) {
        for (v, b) in row.iter_mut().zip(&g.input_bias) {
            *v += *b;
        }
    }
    let mut c = GruCache {
        xw,
        hu_n: vec![T::zero(); frames * h],
        z: vec![T::zero(); frames * h],
        r: vec![T::zero(); frames * h],
        n: vec![T::zero(); frames * h],
        h: vec![T::zero(); (frames + 1) * h],
        reverse,
    };
    let mut hu = vec![T::zero(); h3];
    for s in 0..frames {
        let t = if reverse { frames - 1 - s } else { s };
        hu.copy_from_slice(&g.recurrent_bias);
        let (hprev, hnext) = c.h.split_at_mut((s + 1) * h);
        let hprev = &hprev[s * h..];
        for (i, &hv) in hprev.iter().enumerate() {
            let urow = &g.recurrent_kernel[i * h3..(i + 1) * h3];
            for (a, &u) in hu.iter_mut().zip(urow) {
                *a += hv * u;
            }
        }
        let xwt = &c.xw[t * h3..(t + 1) * h3];
        for j in 0..h {
            let z = sigmoid(xwt[j] + hu[j]);
            let r = sigmoid(xwt[h + j] + hu[h + j]);
            let hn = hu[2 * h + j];
            let n = (xwt[2 * h + j] + r * hn).tanh();
            c.z[s * h + j] = z;
            c.r[s * h + j] = r;
            c.n[s * h + j] = n;
            c.hu_n[s * h + j] = hn;
            hnext[j] = z * hprev[j] + (T::one() - z) * n;
        }
    }
    c
}

/// Backpropagates through one GRU direction. `dh_out` is `[T][H]` in time
/// order; gradients are accumulated into `grads` and `dx` (`[T][D]`).
fn gru_backward<T: Real>(
    x: &[T],
    frames: usize,
    g: &GruParams<T>,
    c: &GruCache<T>,
    dh_out: &[T],
    grads: &mut GruParams<T>,
    dx: &mut [T],
) {
    let (d, h) = (g.input_dim, g.hidden);
    let h3 = 3 * h;
    let mut dxw = vec![T::zero(); frames * h3];
    let mut dh_next = vec![T::zero(); h];
    let mut dh = vec![T::zero(); h];
    let mut dhu = vec![T::zero(); h3];
    for s in (0..frames).rev() {
        let t = if c.reverse { frames - 1 - s } else { s };
        let hprev = &c.h[s * h..(s + 1) * h];
        for j in 0..h {
            dh[j] = dh_out[t * h + j] + dh_next[j];
        }
        let dxwt = &mut dxw[t * h3..(t + 1) * h3];
        for j in 0..h {
            let z = c.z[s * h + j];
            let r = c.r[s * h + j];
            let n = c.n[s * h + j];
            let dz = dh[j] * (hprev[j] - n);
            let dn = dh[j] * (T::one() - z);
            let dn_pre = dn * (T::one() - n * n);
            let dr = dn_pre * c.hu_n[s * h + j];
            let dz_pre = dz * z * (T::one() - z);
            let dr_pre = dr * r * (T::one() - r);
            dxwt[j] = dz_pre;
            dxwt[h + j] = dr_pre;
            dxwt[2 * h + j] = dn_pre;
            dhu[j] = dz_pre;
            dhu[h + j] = dr_pre;
            dhu[2 * h + j] = dn_pre * r;
            dh_next[j] = dh[j] * z;
        }
        for (b, v) in grads.recurrent_bias.iter_mut().zip(&dhu) {
            *b += *v;
        }
        for (i, &hv) in hprev.iter().enumerate() {
            let urow = &g.recurrent_kernel[i * h3..(i + 1) * h3];
            let durow = &mut grads.recurrent_kernel[i * h3..(i + 1) * h3];
            let mut acc = T::zero();
            for ((du, &u), &gv) in durow.iter_mut().zip(urow).zip(&dhu) {
                *du += hv * gv;
                acc += u * gv;
            }
            dh_next[i] += acc;
        }
    }
    gemm(T::one(), View::rm_t(x, frames, d), View::rm(&dxw, frames, h3), T::one(), &mut grads.kernel);
    for row in dxw.chunks_exact(h3) {
        for (b, v) in grads.input_bias.iter_mut().zip(row) {
            *b += *v;
        }
    }
    gemm(T::one(), View::rm(&dxw, frames, h3), View::rm_t(&g.kernel, d, h3), T::one(), dx);
}

impl<T: Real> CrnnModel<T> {
    /// Runs the network on `inputs`, each a `frames x bands` time-major segment.
    pub fn forward_batch(&self, inputs: &[&[f32]], mode: Mode) -> Result<ForwardCache<T>> {
        let cfg = &self.config;
        let (frames, bands) = (cfg.input_frames, cfg.input_bands);
        let batch = inputs.len();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        for (i, seg) in inputs.iter().enumerate() {
            if seg.len() != frames * bands {
                return Err(Error::Shape(format!(
                    "segment {i} has {} values, model expects {frames}x{bands}",
                    seg.len()
                )));
            }
        }
        let c = cfg.channel_size;
        let pool = cfg.pool_size;

        let mut x: Vec<T> = inputs.iter().flat_map(|s| s.iter().map(|&v| T::from_f32(v))).collect();
        let mut fin = bands;
        let mut ci = 1;
        let mut convs = Vec::with_capacity(cfg.conv_depth);
        for (l, cp) in self.params.convs.iter().enumerate() {
            let co = c;
            let y = conv_forward(&x, batch, frames, fin, ci, &cp.kernel, &cp.bias, co);
            let rows = batch * frames * fin;

            let (mean, var) = match mode {
                Mode::Train => {
                    let mut m = vec![0.0f64; co];
                    for row in y.chunks_exact(co) {
                        for (a, v) in m.iter_mut().zip(row) {
                            *a += v.f64();
                        }
                    }
                    m.iter_mut().for_each(|a| *a /= rows as f64);
                    let mut s = vec![0.0f64; co];
                    for row in y.chunks_exact(co) {
                        for ((a, v), mu) in s.iter_mut().zip(row).zip(&m) {
                            let dlt = v.f64() - mu;
                            *a += dlt * dlt;
                        }
                    }
                    s.iter_mut().for_each(|a| *a /= rows as f64);
                    (m.into_iter().map(T::of).collect::<Vec<_>>(), s.into_iter().map(T::of).collect::<Vec<_>>())
                }
                Mode::Infer => (self.running[l].mean.clone(), self.running[l].var.clone()),
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(BN_EPSILON)).sqrt()).collect();

            let fout = fin / pool;
            let mut xhat = y;
            let mut pooled = vec![T::zero(); batch * frames * fout * co];
            let mut argmax = vec![0u32; batch * frames * fout * co];
            let mut act = vec![T::zero(); co];
            for bt in 0..batch * frames {
                for f in 0..fin {
                    let base = (bt * fin + f) * co;
                    let row = &mut xhat[base..base + co];
                    for ch in 0..co {
                        let xh = (row[ch] - mean[ch]) * inv_std[ch];
                        row[ch] = xh;
                        let a = cp.gamma[ch] * xh + cp.beta[ch];
                        act[ch] = if a > T::zero() { a } else { T::zero() };
                    }
                    let fo = f / pool;
                    if fo >= fout {
                        continue;
                    }
                    let obase = (bt * fout + fo) * co;
                    for ch in 0..co {
                        if f % pool == 0 || act[ch] > pooled[obase + ch] {
                            pooled[obase + ch] = act[ch];
                            argmax[obase + ch] = f as u32;
                        }
                    }
                }
            }
            convs.push(ConvCache {
                input: x,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                argmax,
                fin,
                fout,
                ci,
                co,
            });
            x = pooled;
            fin = fout;
            ci = co;
        }

        let fc = fin;
        let d = cfg.integration_dim();
        let mut integ_argmax = Vec::new();
        let integrated = match cfg.freq_integration {
            FreqIntegration::Flatten => x.clone(),
            FreqIntegration::GlobalAverage => {
                let mut z = vec![T::zero(); batch * frames * c];
                let scale = T::one() / T::of(fc as f64);
                for (bt, zrow) in z.chunks_exact_mut(c).enumerate() {
                    for f in 0..fc {
                        let src = &x[(bt * fc + f) * c..(bt * fc + f + 1) * c];
                        for (a, v) in zrow.iter_mut().zip(src) {
                            *a += *v;
                        }
                    }
                    zrow.iter_mut().for_each(|a| *a *= scale);
                }
                z
            }
            FreqIntegration::GlobalMax => {
                let mut z = vec![T::zero(); batch * frames * c];
                integ_argmax = vec![0u32; batch * frames * c];
                for bt in 0..batch * frames {
                    for f in 0..fc {
                        let src = &x[(bt * fc + f) * c..(bt * fc + f + 1) * c];
                        for ch in 0..c {
                            if f == 0 || src[ch] > z[bt * c + ch] {
                                z[bt * c + ch] = src[ch];
                                integ_argmax[bt * c + ch] = f as u32;
                            }
                        }
                    }
                }
                z
            }
        };

        let hd = cfg.hidden_per_direction();
        let mut hidden = vec![T::zero(); batch * frames * c];
        let mut gru = Vec::with_capacity(batch);
        for b in 0..batch {
            let zb = &integrated[b * frames * d..(b + 1) * frames * d];
            let fwd = gru_forward(zb, frames, &self.params.gru_fwd, false);
            let bwd = self.params.gru_bwd.as_ref().map(|g| gru_forward(zb, frames, g, true));
            for t in 0..frames {
                let dst = &mut hidden[(b * frames + t) * c..(b * frames + t + 1) * c];
                dst[..hd].copy_from_slice(&fwd.h[(t + 1) * hd..(t + 2) * hd]);
                if let Some(bc) = &bwd {
                    let s = frames - 1 - t;
                    dst[hd..].copy_from_slice(&bc.h[(s + 1) * hd..(s + 2) * hd]);
                }
            }
            gru.push((fwd, bwd));
        }

        let w = &self.params.out_weight;
        let bias = self.params.out_bias[0];
        let probs = hidden
            .chunks_exact(c)
            .map(|hrow| {
                let logit = hrow.iter().zip(w).fold(bias, |a, (h, w)| a + *h * *w);
                sigmoid(logit)
            })
            .collect();

        Ok(ForwardCache {
            batch,
            frames,
            mode,
            convs,
            pooled: x,
            integ_argmax,
            integrated,
            gru,
            hidden,
            probs,
        })
    }

    /// Inference-mode probabilities for one segment.
    pub fn predict(&self, segment: &[f32]) -> Result<Vec<f32>> {
        let cache = self.forward_batch(&[segment], Mode::Infer)?;
        Ok(cache.probs.iter().map(|p| p.as_f32()).collect())
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = T::of(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (run, cc) in self.running.iter_mut().zip(&cache.convs) {
            for (r, b) in run.mean.iter_mut().zip(&cc.batch_mean) {
                *r = m * *r + one_m * *b;
            }
            for (r, b) in run.var.iter_mut().zip(&cc.batch_var) {
                *r = m * *r + one_m * *b;
            }
        }
    }

    /// Gradients of the loss given `d loss / d logit` for every output frame.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T]) -> ParamSet<T> {
        let cfg = &self.config;
        let (batch, frames) = (cache.batch, cache.frames);
        let c = cfg.channel_size;
        let hd = cfg.hidden_per_direction();
        let d = cfg.integration_dim();
        let mut grads = ParamSet::<T>::zeros(cfg);

        let mut dhidden = vec![T::zero(); batch * frames * c];
        for (i, (&dl, hrow)) in dlogits.iter().zip(cache.hidden.chunks_exact(c)).enumerate() {
            grads.out_bias[0] += dl;
            for (g, h) in grads.out_weight.iter_mut().zip(hrow) {
                *g += dl * *h;
            }
            for (dh, w) in dhidden[i * c..(i + 1) * c].iter_mut().zip(&self.params.out_weight) {
                *dh = dl * *w;
            }
        }

        let mut dintegrated = vec![T::zero(); batch * frames * d];
        let mut dh_dir = vec![T::zero(); frames * hd];
        for b in 0..batch {
            let zb = &cache.integrated[b * frames * d..(b + 1) * frames * d];
            let dzb = &mut dintegrated[b * frames * d..(b + 1) * frames * d];
            let (fwd, bwd) = &cache.gru[b];
            for t in 0..frames {
                let src = &dhidden[(b * frames + t) * c..(b * frames + t) * c + hd];
                dh_dir[t * hd..(t + 1) * hd].copy_from_slice(src);
            }
            gru_backward(zb, frames, &self.params.gru_fwd, fwd, &dh_dir, &mut grads.gru_fwd, dzb);
            if let (Some(bc), Some(g), Some(gg)) = (bwd, &self.params.gru_bwd, &mut grads.gru_bwd) {
                for t in 0..frames {
                    let src = &dhidden[(b * frames + t) * c + hd..(b * frames + t + 1) * c];
                    dh_dir[t * hd..(t + 1) * hd].copy_from_slice(src);
                }
                gru_backward(zb, frames, g, bc, &dh_dir, gg, dzb);
            }
        }

        let fc = cfg.conv_out_bands();
        let mut dpooled = match cfg.freq_integration {
            FreqIntegration::Flatten => dintegrated,
            FreqIntegration::GlobalAverage => {
                let scale = T::one() / T::of(fc as f64);
                let mut dp = vec![T::zero(); cache.pooled.len()];
                for (bt, drow) in dintegrated.chunks_exact(c).enumerate() {
                    for f in 0..fc {
                        for (a, v) in dp[(bt * fc + f) * c..(bt * fc + f + 1) * c].iter_mut().zip(drow) {
                            *a = *v * scale;
                        }
                    }
                }
                dp
            }
            FreqIntegration::GlobalMax => {
                let mut dp = vec![T::zero(); cache.pooled.len()];
                for (bt, drow) in dintegrated.chunks_exact(c).enumerate() {
                    for ch in 0..c {
                        let f = cache.integ_argmax[bt * c + ch] as usize;
                        dp[(bt * fc + f) * c + ch] += drow[ch];
                    }
                }
                dp
            }
        };

        for l in (0..cfg.conv_depth).rev() {
            let cc = &cache.convs[l];
            let cp = &self.params.convs[l];
            let (fin, fout, co) = (cc.fin, cc.fout, cc.co);
            let rows = batch * frames * fin;

            // Unpool and mask through the ReLU, giving d(bn output).
            let mut dy = vec![T::zero(); rows * co];
            for bt in 0..batch * frames {
                for fo in 0..fout {
                    let obase = (bt * fout + fo) * co;
                    for ch in 0..co {
                        let f = cc.argmax[obase + ch] as usize;
                        let idx = (bt * fin + f) * co + ch;
                        let a = cp.gamma[ch] * cc.xhat[idx] + cp.beta[ch];
                        if a > T::zero() {
                            dy[idx] += dpooled[obase + ch];
                        }
                    }
                }
            }

            let g = &mut grads.convs[l];
            for (row, xrow) in dy.chunks_exact(co).zip(cc.xhat.chunks_exact(co)) {
                for ch in 0..co {
                    g.gamma[ch] += row[ch] * xrow[ch];
                    g.beta[ch] += row[ch];
                }
            }
            match cache.mode {
                Mode::Train => {
                    let n = T::of(rows as f64);
                    let mean_dxhat: Vec<T> = (0..co).map(|ch| cp.gamma[ch] * g.beta[ch] / n).collect();
                    let mean_dxhat_xhat: Vec<T> = (0..co).map(|ch| cp.gamma[ch] * g.gamma[ch] / n).collect();
                    for (row, xrow) in dy.chunks_exact_mut(co).zip(cc.xhat.chunks_exact(co)) {
                        for ch in 0..co {
                            let dxhat = row[ch] * cp.gamma[ch];
                            row[ch] = cc.inv_std[ch] * (dxhat - mean_dxhat[ch] - xrow[ch] * mean_dxhat_xhat[ch]);
                        }
                    }
                }
                Mode::Infer => {
                    for row in dy.chunks_exact_mut(co) {
                        for ch in 0..co {
                            row[ch] = row[ch] * cp.gamma[ch] * cc.inv_std[ch];
                        }
                    }
                }
            }

            let dx = conv_backward(
                &cc.input,
                &dy,
                batch,
                frames,
                fin,
                cc.ci,
                &cp.kernel,
                co,
                &mut g.kernel,
                &mut g.bias,
                l > 0,
            );
            if let Some(dx) = dx {
                dpooled = dx;
            }
        }
        grads
    }
}

/// Exponential moving averages of batch statistics started from zero and
/// divided by `1 - momentum^updates`, so early estimates are not pulled
/// toward the initial running values.
pub struct RunningStatsTracker {
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
    updates: i32,
}

impl RunningStatsTracker {
    pub fn new<T: Real>(model: &CrnnModel<T>) -> Self {
        let zeros: Vec<Vec<f64>> = model.running.iter().map(|r| vec![0.0; r.mean.len()]).collect();
        Self { mean: zeros.clone(), var: zeros, updates: 0 }
    }

    pub fn updates(&self) -> i32 {
        self.updates
    }

    /// Folds one training-mode pass into the averages and writes the
    /// debiased values into `model`.
    pub fn observe<T: Real>(&mut self, model: &mut CrnnModel<T>, cache: &ForwardCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        self.updates += 1;
        let debias = 1.0 - BN_MOMENTUM.powi(self.updates);
        for (l, cc) in cache.convs.iter().enumerate() {
            for (acc, b) in [(&mut self.mean[l], &cc.batch_mean), (&mut self.var[l], &cc.batch_var)] {
                for (a, v) in acc.iter_mut().zip(b) {
                    *a = BN_MOMENTUM * *a + (1.0 - BN_MOMENTUM) * v.f64();
                }
            }
            let run = &mut model.running[l];
            for (r, a) in run.mean.iter_mut().zip(&self.mean[l]) {
                *r = T::of(a / debias);
            }
            for (r, a) in run.var.iter_mut().zip(&self.var[l]) {
                *r = T::of(a / debias);
            }
        }
    }
}

/// Mean loss over all frames in the batch and its gradient w.r.t. each logit.
pub fn batch_loss<T: Real>(probs: &[T], targets: &[&[u8]], loss: &LossConfig) -> (f64, Vec<T>) {
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(probs.len());
    let labels = targets.iter().flat_map(|t| t.iter());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.f64();
        total += loss.frame_loss(p, y);
        dlogits.push(T::of(loss.frame_grad_logit(p, y) / n));
    }
    (total / n, dlogits)
}
