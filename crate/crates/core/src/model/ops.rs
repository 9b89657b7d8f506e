//! Building blocks of the network, each with its backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, PosEncoding};
use super::params::{LayerSlots, ParameterStore};
use crate::error::{Error, Result};
use crate::mask::MaskMatrix;
use crate::tensor::{affine, affine_backward, gemm, Mat, MatMut, Scalar};

/// Per-instance normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    /// Population standard deviation, clamped below at `eps`.
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
    };
}

/// Computes mean and standard deviation over the contributing cells and
/// standardizes every cell with them.
pub fn revin_normalize(
    values: &[f64],
    contributes: &[bool],
    eps: f64,
) -> Result<(Vec<f64>, NormStats)> {
    if values.len() != contributes.len() {
        return Err(Error::domain("normalization inputs have different lengths"));
    }
    let stats = revin_stats(values, contributes, eps)?;
    let out = values
        .iter()
        .map(|v| (v - stats.mean) / stats.std)
        .collect();
    Ok((out, stats))
}

pub(crate) fn revin_stats(values: &[f64], contributes: &[bool], eps: f64) -> Result<NormStats> {
    let n = contributes.iter().filter(|&&c| c).count();
    if n == 0 {
        return Err(Error::domain(
            "no cells contribute to normalization statistics",
        ));
    }
    let picked = || {
        values
            .iter()
            .zip(contributes)
            .filter(|(_, &c)| c)
            .map(|(v, _)| *v)
    };
    let mean = picked().sum::<f64>() / n as f64;
    let var = picked().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok(NormStats {
        mean,
        std: var.sqrt().max(eps),
    })
}

pub fn revin_denormalize(y: &[f64], stats: NormStats) -> Vec<f64> {
    y.iter().map(|v| v * stats.std + stats.mean).collect()
}

/// Per-cell feature rows `[value, covariates…]`.
pub(crate) fn cell_features<T: Scalar>(values: &[f64], covariates: &[f64], k: usize) -> Vec<T> {
    let mut feat = Vec::with_capacity(values.len() * (1 + k));
    for (i, &v) in values.iter().enumerate() {
        feat.push(T::of(v));
        feat.extend(covariates[i * k..(i + 1) * k].iter().map(|&x| T::of(x)));
    }
    feat
}

/// Affine map of each cell's `(1 + K)` feature vector to `d_model`.
pub fn project_input<T: Scalar>(
    values: &[T],
    covariates: &[T],
    params: &ParameterStore<T>,
) -> Result<Vec<T>> {
    let cfg = params.config();
    let cells = cfg.h * cfg.c;
    if values.len() != cells || covariates.len() != cells * cfg.k {
        return Err(Error::domain(format!(
            "input projection expects {cells} values and {} covariates",
            cells * cfg.k
        )));
    }
    let mut feat = Vec::with_capacity(cells * (1 + cfg.k));
    for i in 0..cells {
        feat.push(values[i]);
        feat.extend_from_slice(&covariates[i * cfg.k..(i + 1) * cfg.k]);
    }
    Ok(project_features(&feat, params))
}

pub(crate) fn project_features<T: Scalar>(feat: &[T], params: &ParameterStore<T>) -> Vec<T> {
    let cfg = params.config();
    let s = &params.slots;
    affine(
        feat,
        cfg.h * cfg.c,
        1 + cfg.k,
        params.get(&s.input_w),
        params.get(&s.input_b),
        cfg.d_model,
    )
}

/// Replaces the latent vector of every masked cell with the mask token.
pub fn apply_mask_token<T: Scalar>(
    latent: &mut [T],
    mask: &MaskMatrix,
    params: &ParameterStore<T>,
) {
    let d = params.config().d_model;
    let token = params.get(&params.slots.mask_token);
    for (cell, &m) in mask.bits().iter().enumerate() {
        if m {
            latent[cell * d..(cell + 1) * d].copy_from_slice(token);
        }
    }
}

/// Flattens each `P × P` patch of the `H × C × width` grid into one row:
/// patches in row-major grid order, cells row-major inside the patch.
pub(crate) fn patchify<T: Scalar>(grid: &[T], cfg: &ModelConfig, width: usize) -> Vec<T> {
    let p = cfg.patch_size;
    let mut out = Vec::with_capacity(grid.len());
    for pr in 0..cfg.grid_rows() {
        for pc in 0..cfg.grid_cols() {
            for i in 0..p {
                let cell = (pr * p + i) * cfg.c + pc * p;
                out.extend_from_slice(&grid[cell * width..(cell + p) * width]);
            }
        }
    }
    out
}

/// Inverse of [`patchify`]: writes patch rows back into grid order.
pub(crate) fn unpatchify<T: Scalar>(patches: &[T], cfg: &ModelConfig, width: usize) -> Vec<T> {
    let p = cfg.patch_size;
    let mut grid = vec![T::zero(); patches.len()];
    let mut at = 0;
    for pr in 0..cfg.grid_rows() {
        for pc in 0..cfg.grid_cols() {
            for i in 0..p {
                let cell = (pr * p + i) * cfg.c + pc * p;
                grid[cell * width..(cell + p) * width]
                    .copy_from_slice(&patches[at..at + p * width]);
                at += p * width;
            }
        }
    }
    grid
}

/// Patch tokens before positional encoding.
pub fn patch_embed<T: Scalar>(latent: &[T], params: &ParameterStore<T>) -> Result<Vec<T>> {
    let cfg = params.config();
    if latent.len() != cfg.h * cfg.c * cfg.d_model {
        return Err(Error::domain("latent grid does not match the model window"));
    }
    let patches = patchify(latent, cfg, cfg.d_model);
    Ok(embed_patches(&patches, params))
}

pub(crate) fn embed_patches<T: Scalar>(patches: &[T], params: &ParameterStore<T>) -> Vec<T> {
    let cfg = params.config();
    let s = &params.slots;
    affine(
        patches,
        cfg.num_tokens(),
        cfg.patch_cells() * cfg.d_model,
        params.get(&s.patch_w),
        params.get(&s.patch_b),
        cfg.d_model,
    )
}

/// `pos × channel` table: `sin(pos / 10000^(2i/d))` at channel `2i`,
/// `cos(…)` at `2i + 1`.
pub fn sinusoidal_table(num_tokens: usize, d_model: usize) -> Result<Vec<f64>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::config(
            "model.d_model",
            "sinusoidal positional encoding needs an even width",
        ));
    }
    let mut table = vec![0.0; num_tokens * d_model];
    for pos in 0..num_tokens {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            table[pos * d_model + 2 * i] = angle.sin();
            table[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(table)
}

/// Positional table for a mode; learned tables come from the parameters,
/// so for `Learned` this returns zeros of the right shape.
pub fn positional_encoding(
    num_tokens: usize,
    d_model: usize,
    mode: PosEncoding,
) -> Result<Vec<f64>> {
    match mode {
        PosEncoding::Sinusoidal => sinusoidal_table(num_tokens, d_model),
        PosEncoding::Learned | PosEncoding::None => Ok(vec![0.0; num_tokens * d_model]),
    }
}

pub(crate) fn add_positions<T: Scalar>(tokens: &mut [T], params: &ParameterStore<T>) {
    let table: &[T] = match params.config().pe_mode {
        PosEncoding::Sinusoidal => &params.pe_table,
        PosEncoding::Learned => params.get(params.slots.pos.as_ref().expect("learned slot")),
        PosEncoding::None => return,
    };
    for (t, &p) in tokens.iter_mut().zip(table) {
        *t += p;
    }
}

/// Row statistics of a layer normalization.
#[derive(Debug, Clone)]
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &[T],
    d: usize,
    gain: &[T],
    offset: &[T],
    eps: f64,
) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    let mut out = vec![T::zero(); x.len()];
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(eps);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gain[j] + offset[j];
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Returns `dx`; accumulates gain/offset gradients.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    d: usize,
    gain: &[T],
    cache: &NormCache<T>,
    dgain: &mut [T],
    doffset: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut sum = T::zero();
        let mut dot = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            doffset[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum += dxhat[j];
            dot += dxhat[j] * xh[j];
        }
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - sum * inv_d - xh[j] * dot * inv_d);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `1 - 2 / (e^{2u} + 1)`.
#[inline]
fn tanh<T: Scalar>(u: T) -> T {
    let two = T::of(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + tanh(inner))
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = tanh(inner);
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub(crate) fn split_pair<'a, T>(
    buf: &'a mut [T],
    first: &std::ops::Range<usize>,
    second: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(first.end <= second.start);
    let (lo, hi) = buf.split_at_mut(second.start);
    (&mut lo[first.clone()], &mut hi[..second.len()])
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Softmax weights, `heads × L × L`.
    probs: Vec<T>,
    /// Dropout scale per attention weight, when dropout is active.
    keep: Option<Vec<T>>,
    attn: Vec<T>,
    norm1_cache: NormCache<T>,
    norm1: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    norm2_cache: NormCache<T>,
}

/// One post-norm encoder block:
/// `z1 = Attn(z)`, `z2 = LN(z1 + z)`, `z3 = FF(z2)`, `out = LN(z3 + z2)`.
pub(crate) fn encoder_layer_forward<T: Scalar>(
    x: &[T],
    params: &ParameterStore<T>,
    layer: &LayerSlots,
    dropout: Option<&mut ChaCha8Rng>,
) -> (Vec<T>, LayerCache<T>) {
    let cfg = params.config();
    let (l, d, heads, dh) = (cfg.num_tokens(), cfg.d_model, cfg.num_heads, cfg.head_dim());
    let q = affine(x, l, d, params.get(&layer.wq), params.get(&layer.bq), d);
    let k = affine(x, l, d, params.get(&layer.wk), params.get(&layer.bk), d);
    let v = affine(x, l, d, params.get(&layer.wv), params.get(&layer.bv), d);
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let mut probs = vec![T::zero(); heads * l * l];
    let mut keep = None;
    let mut attn = vec![T::zero(); l * d];
    for h in 0..heads {
        let s = &mut probs[h * l * l..(h + 1) * l * l];
        gemm(
            scale,
            Mat::new(&q, l, d).cols(h * dh, dh),
            Mat::new(&k, l, d).cols(h * dh, dh).t(),
            T::zero(),
            MatMut::new(s, l, l),
        );
        for row in s.chunks_exact_mut(l) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for w in row.iter_mut() {
                *w = (*w - max).exp();
                sum += *w;
            }
            let inv = T::one() / sum;
            for w in row.iter_mut() {
                *w *= inv;
            }
        }
    }
    let weights: std::borrow::Cow<[T]> = match dropout {
        Some(rng) if cfg.dropout > 0.0 => {
            let scale_keep = T::of(1.0 / (1.0 - cfg.dropout));
            let mask: Vec<T> = (0..probs.len())
                .map(|_| {
                    if rng.random::<f64>() < cfg.dropout {
                        T::zero()
                    } else {
                        scale_keep
                    }
                })
                .collect();
            let dropped = probs.iter().zip(&mask).map(|(&p, &m)| p * m).collect();
            keep = Some(mask);
            std::borrow::Cow::Owned(dropped)
        }
        _ => std::borrow::Cow::Borrowed(&probs),
    };
    for h in 0..heads {
        gemm(
            T::one(),
            Mat::new(&weights[h * l * l..(h + 1) * l * l], l, l),
            Mat::new(&v, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut attn, l, d).cols(h * dh, dh),
        );
    }
    drop(weights);

    let mut res1 = affine(&attn, l, d, params.get(&layer.wo), params.get(&layer.bo), d);
    for (r, &xi) in res1.iter_mut().zip(x) {
        *r += xi;
    }
    let (norm1, norm1_cache) = layer_norm(
        &res1,
        d,
        params.get(&layer.ln1_g),
        params.get(&layer.ln1_b),
        cfg.eps,
    );

    let ff_pre = affine(
        &norm1,
        l,
        d,
        params.get(&layer.w1),
        params.get(&layer.b1),
        cfg.d_ff,
    );
    let ff_act: Vec<T> = ff_pre.iter().map(|&u| gelu(u)).collect();
    let mut res2 = affine(
        &ff_act,
        l,
        cfg.d_ff,
        params.get(&layer.w2),
        params.get(&layer.b2),
        d,
    );
    for (r, &z) in res2.iter_mut().zip(&norm1) {
        *r += z;
    }
    let (out, norm2_cache) = layer_norm(
        &res2,
        d,
        params.get(&layer.ln2_g),
        params.get(&layer.ln2_b),
        cfg.eps,
    );

    let cache = LayerCache {
        input: x.to_vec(),
        q,
        k,
        v,
        probs,
        keep,
        attn,
        norm1_cache,
        norm1,
        ff_pre,
        ff_act,
        norm2_cache,
    };
    (out, cache)
}

/// Returns the gradient with respect to the layer input.
pub(crate) fn encoder_layer_backward<T: Scalar>(
    dout: &[T],
    cache: &LayerCache<T>,
    params: &ParameterStore<T>,
    layer: &LayerSlots,
    grads: &mut [T],
) -> Vec<T> {
    let cfg = params.config();
    let (l, d, heads, dh) = (cfg.num_tokens(), cfg.d_model, cfg.num_heads, cfg.head_dim());

    // out = LN2(res2)
    let (dg, db) = split_pair(grads, &layer.ln2_g, &layer.ln2_b);
    let dres2 = layer_norm_backward(
        dout,
        d,
        params.get(&layer.ln2_g),
        &cache.norm2_cache,
        dg,
        db,
    );

    // res2 = FF(norm1) + norm1
    let (dw, db) = split_pair(grads, &layer.w2, &layer.b2);
    let mut dact = affine_backward(
        &cache.ff_act,
        l,
        cfg.d_ff,
        params.get(&layer.w2),
        &dres2,
        d,
        dw,
        db,
        true,
    )
    .expect("dx requested");
    for (g, &u) in dact.iter_mut().zip(&cache.ff_pre) {
        *g *= gelu_grad(u);
    }
    let (dw, db) = split_pair(grads, &layer.w1, &layer.b1);
    let dnorm1_ff = affine_backward(
        &cache.norm1,
        l,
        d,
        params.get(&layer.w1),
        &dact,
        cfg.d_ff,
        dw,
        db,
        true,
    )
    .expect("dx requested");
    let dnorm1: Vec<T> = dres2.iter().zip(&dnorm1_ff).map(|(&a, &b)| a + b).collect();

    // norm1 = LN1(attn_out + x)
    let (dg, db) = split_pair(grads, &layer.ln1_g, &layer.ln1_b);
    let dres1 = layer_norm_backward(
        &dnorm1,
        d,
        params.get(&layer.ln1_g),
        &cache.norm1_cache,
        dg,
        db,
    );

    let (dw, db) = split_pair(grads, &layer.wo, &layer.bo);
    let dattn = affine_backward(
        &cache.attn,
        l,
        d,
        params.get(&layer.wo),
        &dres1,
        d,
        dw,
        db,
        true,
    )
    .expect("dx requested");

    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); l * d];
    let mut dk = vec![T::zero(); l * d];
    let mut dv = vec![T::zero(); l * d];
    let mut dweights = vec![T::zero(); l * l];
    let mut dropped = if cache.keep.is_some() {
        vec![T::zero(); l * l]
    } else {
        Vec::new()
    };
    for h in 0..heads {
        let probs = &cache.probs[h * l * l..(h + 1) * l * l];
        let weights: &[T] = match &cache.keep {
            Some(keep) => {
                for ((w, &p), &m) in dropped
                    .iter_mut()
                    .zip(probs)
                    .zip(&keep[h * l * l..(h + 1) * l * l])
                {
                    *w = p * m;
                }
                &dropped
            }
            None => probs,
        };
        // dW' = dO_h · V_hᵀ ; dV_h = W'ᵀ · dO_h
        gemm(
            T::one(),
            Mat::new(&dattn, l, d).cols(h * dh, dh),
            Mat::new(&cache.v, l, d).cols(h * dh, dh).t(),
            T::zero(),
            MatMut::new(&mut dweights, l, l),
        );
        gemm(
            T::one(),
            Mat::new(weights, l, l).t(),
            Mat::new(&dattn, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut dv, l, d).cols(h * dh, dh),
        );
        if let Some(keep) = &cache.keep {
            for (g, &m) in dweights.iter_mut().zip(&keep[h * l * l..(h + 1) * l * l]) {
                *g *= m;
            }
        }
        // Softmax backward, row by row; dweights becomes dS.
        for (grow, prow) in dweights.chunks_exact_mut(l).zip(probs.chunks_exact(l)) {
            let dot: T = grow.iter().zip(prow).map(|(&g, &p)| g * p).sum();
            for (g, &p) in grow.iter_mut().zip(prow) {
                *g = p * (*g - dot);
            }
        }
        gemm(
            scale,
            Mat::new(&dweights, l, l),
            Mat::new(&cache.k, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut dq, l, d).cols(h * dh, dh),
        );
        gemm(
            scale,
            Mat::new(&dweights, l, l).t(),
            Mat::new(&cache.q, l, d).cols(h * dh, dh),
            T::zero(),
            MatMut::new(&mut dk, l, d).cols(h * dh, dh),
        );
    }

    let mut dx = dres1;
    for (grad, w, b) in [
        (&dq, &layer.wq, &layer.bq),
        (&dk, &layer.wk, &layer.bk),
        (&dv, &layer.wv, &layer.bv),
    ] {
        let (dw, db) = split_pair(grads, w, b);
        let part = affine_backward(&cache.input, l, d, params.get(w), grad, d, dw, db, true)
            .expect("dx requested");
        for (a, p) in dx.iter_mut().zip(part) {
            *a += p;
        }
    }
    dx
}

/// Applies encoder layer `index` without dropout.
pub fn encoder_layer<T: Scalar>(
    tokens: &[T],
    params: &ParameterStore<T>,
    index: usize,
) -> Result<Vec<T>> {
    let cfg = params.config();
    if tokens.len() != cfg.num_tokens() * cfg.d_model {
        return Err(Error::domain("token matrix does not match the model"));
    }
    let layer = params
        .slots
        .layers
        .get(index)
        .ok_or_else(|| Error::domain(format!("no encoder layer {index}")))?;
    let (out, _) = encoder_layer_forward(tokens, params, layer, None);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite activation in encoder layer {index}"
        )));
    }
    Ok(out)
}

/// Maps tokens to `P × P × N` values each and reassembles the grid, still
/// on the normalized scale.
pub fn reconstruct<T: Scalar>(tokens: &[T], params: &ParameterStore<T>) -> Result<Vec<T>> {
    let cfg = params.config();
    if tokens.len() != cfg.num_tokens() * cfg.d_model {
        return Err(Error::domain("token matrix does not match the model"));
    }
    let s = &params.slots;
    let out = affine(
        tokens,
        cfg.num_tokens(),
        cfg.d_model,
        params.get(&s.head_w),
        params.get(&s.head_b),
        cfg.patch_cells() * cfg.n_out,
    );
    Ok(unpatchify(&out, cfg, cfg.n_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny(pe: PosEncoding) -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            d_model: 8,
            num_heads: 2,
            d_ff: 16,
            patch_size: 2,
            h: 4,
            c: 6,
            k: 2,
            n_out: 1,
            pe_mode: pe,
            eps: 1e-5,
            dropout: 0.0,
        }
    }

    #[test]
    fn revin_examples() {
        let (out, stats) = revin_normalize(&[5.0; 6], &[true; 6], 1e-5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean, 5.0);
        assert_eq!(stats.std, 1e-5);

        let (out, stats) = revin_normalize(&[1.0, 3.0, 5.0, 7.0], &[true; 4], 1e-5).unwrap();
        let r5 = 5f64.sqrt();
        assert!((stats.mean - 4.0).abs() < 1e-15);
        assert!((stats.std - r5).abs() < 1e-15);
        for (a, b) in out.iter().zip([-3.0 / r5, -1.0 / r5, 1.0 / r5, 3.0 / r5]) {
            assert!((a - b).abs() < 1e-14);
        }

        let back = revin_denormalize(&[0.0; 4], NormStats { mean: 4.0, std: r5 });
        assert!(back.iter().all(|&v| (v - 4.0).abs() < 1e-15));
        assert_eq!(
            revin_denormalize(&[1.5, -2.0], NormStats::IDENTITY),
            vec![1.5, -2.0]
        );
        assert!(revin_normalize(&[1.0], &[false], 1e-5).is_err());
    }

    #[test]
    fn revin_stats_ignore_non_contributing_cells() {
        let (_, s) = revin_normalize(&[1.0, 3.0, 1e9], &[true, true, false], 1e-5).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }

    #[test]
    fn projection_examples() {
        let cfg = tiny(PosEncoding::None);
        let mut p = ParameterStore::<f64>::zeros(&cfg).unwrap();
        let bias: Vec<f64> = (0..8).map(|i| i as f64).collect();
        p.array_mut("input_proj.bias")
            .unwrap()
            .copy_from_slice(&bias);
        let cells = cfg.h * cfg.c;
        let vals: Vec<f64> = (0..cells).map(|i| i as f64).collect();
        let cov = vec![0.5; cells * 2];
        let z = project_input(&vals, &cov, &p).unwrap();
        for cell in 0..cells {
            assert_eq!(&z[cell * 8..(cell + 1) * 8], bias.as_slice());
        }

        let mut cfg0 = cfg.clone();
        cfg0.k = 0;
        let mut p = ParameterStore::<f64>::init(&cfg0, 1).unwrap();
        p.array_mut("input_proj.bias").unwrap().fill(0.0);
        let w = p.array("input_proj.weight").unwrap().to_vec();
        let z = project_input(&vals, &[], &p).unwrap();
        for cell in 0..cells {
            for j in 0..8 {
                assert!((z[cell * 8 + j] - w[j] * vals[cell]).abs() < 1e-12);
            }
        }

        let p = ParameterStore::<f64>::init(&cfg, 2).unwrap();
        let mut same = vec![1.0; cells];
        same[3] = 2.0;
        let z = project_input(&same, &vec![0.25; cells * 2], &p).unwrap();
        assert_eq!(&z[0..8], &z[8..16]);
        assert_ne!(&z[0..8], &z[24..32]);
        assert!(project_input(&same[1..], &cov, &p).is_err());
    }

    #[test]
    fn mask_token_selector() {
        let cfg = tiny(PosEncoding::None);
        let p = ParameterStore::<f64>::init(&cfg, 5).unwrap();
        let cells = cfg.h * cfg.c;
        let latent: Vec<f64> = (0..cells * 8).map(|i| i as f64 * 0.01).collect();
        let token = p.array("mask_token").unwrap().to_vec();

        let mut z = latent.clone();
        apply_mask_token(&mut z, &MaskMatrix::new(cfg.h, cfg.c), &p);
        assert_eq!(z, latent);

        let mut z = latent.clone();
        apply_mask_token(&mut z, &MaskMatrix::full(cfg.h, cfg.c), &p);
        assert!(z.chunks(8).all(|c| c == token.as_slice()));

        let mut mask = MaskMatrix::new(cfg.h, cfg.c);
        mask.set(1, 2, true);
        let mut z = latent.clone();
        apply_mask_token(&mut z, &mask, &p);
        for cell in 0..cells {
            let got = &z[cell * 8..(cell + 1) * 8];
            if cell == cfg.c + 2 {
                assert_eq!(got, token.as_slice());
            } else {
                assert_eq!(got, &latent[cell * 8..(cell + 1) * 8]);
            }
        }
    }

    #[test]
    fn patch_counts_and_patch_locality() {
        let cfg = ModelConfig::tiny();
        assert_eq!(cfg.num_tokens(), 150);
        let mut one = cfg.clone();
        one.h = 4;
        one.c = 4;
        assert_eq!(one.num_tokens(), 1);

        let cfg = tiny(PosEncoding::None);
        let p = ParameterStore::<f64>::init(&cfg, 8).unwrap();
        let d = cfg.d_model;
        let latent: Vec<f64> = (0..cfg.h * cfg.c * d)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let base = patch_embed(&latent, &p).unwrap();
        // Swap patch (0,0) with patch (1,2) cell by cell.
        let mut swapped = latent.clone();
        for i in 0..2 {
            for j in 0..2 {
                let a = (i * cfg.c + j) * d;
                let b = ((2 + i) * cfg.c + 4 + j) * d;
                for ch in 0..d {
                    swapped.swap(a + ch, b + ch);
                }
            }
        }
        let out = patch_embed(&swapped, &p).unwrap();
        let (t0, t1) = (0, cfg.grid_cols() + 2);
        assert_eq!(&out[t0 * d..(t0 + 1) * d], &base[t1 * d..(t1 + 1) * d]);
        assert_eq!(&out[t1 * d..(t1 + 1) * d], &base[t0 * d..(t0 + 1) * d]);
        assert_eq!(&out[d..2 * d], &base[d..2 * d]);
    }

    #[test]
    fn patchify_unpatchify_markers() {
        let cfg = ModelConfig::tiny();
        let grid: Vec<f64> = (0..cfg.h * cfg.c).map(|i| i as f64).collect();
        let patches = patchify(&grid, &cfg, 1);
        // Token 1 is the second patch in the first patch row.
        assert_eq!(&patches[16..20], &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(patches[20], 44.0);
        assert_eq!(unpatchify(&patches, &cfg, 1), grid);
    }

    #[test]
    fn reconstruct_inverts_linear_patch_embedding() {
        // N = 1 latent width 1 would not fit d_model, so build a d_model = P*P model
        // whose input projection copies the value into channel 0 only.
        let cfg = ModelConfig {
            num_layers: 1,
            d_model: 4,
            num_heads: 1,
            d_ff: 4,
            patch_size: 2,
            h: 4,
            c: 4,
            k: 0,
            n_out: 1,
            pe_mode: PosEncoding::None,
            eps: 1e-5,
            dropout: 0.0,
        };
        let mut p = ParameterStore::<f64>::zeros(&cfg).unwrap();
        // latent channel 0 = value
        p.array_mut("input_proj.weight").unwrap()[0] = 1.0;
        // patch embed: token channel q = channel 0 of cell q in the patch
        {
            let w = p.array_mut("patch_embed.weight").unwrap();
            for q in 0..4 {
                w[(q * 4) * 4 + q] = 1.0;
            }
        }
        // head: identity from token channel to cell
        {
            let w = p.array_mut("head.weight").unwrap();
            for q in 0..4 {
                w[q * 4 + q] = 1.0;
            }
        }
        let vals: Vec<f64> = (0..16).map(|i| i as f64 * 1.5 - 3.0).collect();
        let z = project_input(&vals, &[], &p).unwrap();
        let tokens = patch_embed(&z, &p).unwrap();
        let back = reconstruct(&tokens, &p).unwrap();
        assert_eq!(back, vals);
    }

    #[test]
    fn reconstruct_bias_layout() {
        let cfg = ModelConfig::tiny();
        let mut p = ParameterStore::<f32>::zeros(&cfg).unwrap();
        let b: Vec<f32> = (0..16).map(|i| i as f32).collect();
        p.array_mut("head.bias").unwrap().copy_from_slice(&b);
        let out = reconstruct(&vec![0.0; 150 * 64], &p).unwrap();
        assert_eq!(out.len(), 60 * 40);
        for h in 0..60 {
            for c in 0..40 {
                assert_eq!(out[h * 40 + c], ((h % 4) * 4 + c % 4) as f32);
            }
        }
    }

    #[test]
    fn sinusoidal_values() {
        let t = positional_encoding(3, 6, PosEncoding::Sinusoidal).unwrap();
        assert_eq!(&t[0..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((t[6] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((t[7] - 0.540_302_305_868_139_8).abs() < 1e-15);
        let i1 = 1.0 / 10000f64.powf(2.0 / 6.0);
        assert!((t[8] - i1.sin()).abs() < 1e-15);
        assert!(positional_encoding(3, 5, PosEncoding::Sinusoidal).is_err());
        assert!(positional_encoding(3, 5, PosEncoding::None)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let cfg = ModelConfig {
            h: 2,
            c: 2,
            ..tiny(PosEncoding::None)
        };
        assert_eq!(cfg.num_tokens(), 1);
        let p = ParameterStore::<f64>::init(&cfg, 4).unwrap();
        let layer = &p.slots.layers[0];
        let x: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let (_, cache) = encoder_layer_forward(&x, &p, layer, None);
        let v = affine(&x, 1, 8, p.get(&layer.wv), p.get(&layer.bv), 8);
        for (a, b) in cache.attn.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let cfg = tiny(PosEncoding::None);
        let p = ParameterStore::<f64>::init(&cfg, 6).unwrap();
        let (l, d) = (cfg.num_tokens(), cfg.d_model);
        let x: Vec<f64> = (0..l * d)
            .map(|i| ((i * 13) % 17) as f64 * 0.1 - 0.8)
            .collect();
        let perm: Vec<usize> = (0..l).rev().collect();
        let px: Vec<f64> = perm
            .iter()
            .flat_map(|&i| x[i * d..(i + 1) * d].to_vec())
            .collect();
        let y = encoder_layer(&x, &p, 0).unwrap();
        let py = encoder_layer(&px, &p, 0).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..d {
                assert!((py[new * d + j] - y[old * d + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 16;
        let x: Vec<f64> = (0..10 * d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (_, cache) = layer_norm(&x, d, &[1.0; 16], &[0.0; 16], 1e-5);
        for row in cache.xhat.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
