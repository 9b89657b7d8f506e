//! Full forward pass and its reverse-mode gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    add_positions, apply_mask_token, cell_features, embed_patches, encoder_layer_backward,
    encoder_layer_forward, patchify, project_features, revin_stats, split_pair, unpatchify,
    LayerCache, NormStats,
};
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::frame::Instance;
use crate::mask::MaskMatrix;
use crate::tensor::{affine, affine_backward, Scalar};

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    stats: NormStats,
    features: Vec<T>,
    mask: MaskMatrix,
    patches: Vec<T>,
    layers: Vec<LayerCache<T>>,
    encoded: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn stats(&self) -> NormStats {
        self.stats
    }
}

fn check_inputs<T: Scalar>(
    instance: &Instance,
    mask: &MaskMatrix,
    params: &ParameterStore<T>,
) -> Result<()> {
    let cfg = params.config();
    if instance.h != cfg.h || instance.c != cfg.c || instance.k != cfg.k {
        return Err(Error::domain(format!(
            "instance {}x{}x{} does not match model window {}x{}x{}",
            instance.h, instance.c, instance.k, cfg.h, cfg.c, cfg.k
        )));
    }
    let cells = cfg.h * cfg.c;
    if instance.values.len() != cells
        || instance.observed.len() != cells
        || instance.target.len() != cells
        || instance.covariates.len() != cells * cfg.k
    {
        return Err(Error::domain("instance buffers do not match its shape"));
    }
    if mask.rows() != cfg.h || mask.cols() != cfg.c {
        return Err(Error::domain("mask does not match the model window"));
    }
    Ok(())
}

/// Forward pass that records activations. `dropout_seed` enables attention
/// dropout when the config asks for it.
pub fn forward_cached<T: Scalar>(
    instance: &Instance,
    mask: &MaskMatrix,
    params: &ParameterStore<T>,
    dropout_seed: Option<u64>,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    check_inputs(instance, mask, params)?;
    let cfg = params.config();
    let (l, d) = (cfg.num_tokens(), cfg.d_model);

    // Statistics come from cells the model is allowed to see.
    let visible: Vec<bool> = instance
        .observed
        .iter()
        .zip(mask.bits())
        .map(|(&o, &m)| o && !m)
        .collect();
    let stats = revin_stats(&instance.values, &visible, cfg.eps)?;
    let normalized: Vec<f64> = instance
        .values
        .iter()
        .zip(&visible)
        .map(|(&v, &vis)| {
            if vis {
                (v - stats.mean) / stats.std
            } else {
                0.0
            }
        })
        .collect();
    let features = cell_features::<T>(&normalized, &instance.covariates, cfg.k);

    let mut latent = project_features(&features, params);
    // Unobserved cells carry no usable value, so they are hidden as well.
    let hidden = MaskMatrix::from_bits(cfg.h, cfg.c, visible.iter().map(|v| !v).collect())?;
    apply_mask_token(&mut latent, &hidden, params);
    let patches = patchify(&latent, cfg, d);
    let mut tokens = embed_patches(&patches, params);
    add_positions(&mut tokens, params);

    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for slot in &params.slots.layers {
        let (out, cache) = encoder_layer_forward(&tokens, params, slot, rng.as_mut());
        layers.push(cache);
        tokens = out;
    }

    let s = &params.slots;
    let head = affine(
        &tokens,
        l,
        d,
        params.get(&s.head_w),
        params.get(&s.head_b),
        cfg.patch_cells() * cfg.n_out,
    );
    let grid = unpatchify(&head, cfg, cfg.n_out);
    let (std, mean) = (T::of(stats.std), T::of(stats.mean));
    let pred: Vec<T> = grid.iter().map(|&y| y * std + mean).collect();
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    let cache = ForwardCache {
        stats,
        features,
        mask: hidden,
        patches,
        layers,
        encoded: tokens,
    };
    Ok((pred, cache))
}

/// Predicted `H × C` grid on the raw scale.
pub fn forward<T: Scalar>(
    instance: &Instance,
    mask: &MaskMatrix,
    params: &ParameterStore<T>,
) -> Result<Vec<T>> {
    forward_cached(instance, mask, params, None).map(|(pred, _)| pred)
}

/// Accumulates parameter gradients into `grads` given `dpred = ∂loss/∂pred`.
pub fn backward<T: Scalar>(
    cache: &ForwardCache<T>,
    dpred: &[T],
    params: &ParameterStore<T>,
    grads: &mut [T],
) {
    let cfg = params.config();
    let (l, d) = (cfg.num_tokens(), cfg.d_model);
    let s = &params.slots;
    assert_eq!(grads.len(), params.len());

    let std = T::of(cache.stats.std);
    let dgrid: Vec<T> = dpred.iter().map(|&g| g * std).collect();
    let dhead = patchify(&dgrid, cfg, cfg.n_out);
    let (dw, db) = split_pair(grads, &s.head_w, &s.head_b);
    let mut dtokens = affine_backward(
        &cache.encoded,
        l,
        d,
        params.get(&s.head_w),
        &dhead,
        cfg.patch_cells() * cfg.n_out,
        dw,
        db,
        true,
    )
    .expect("dx requested");

    for (slot, layer_cache) in s.layers.iter().zip(&cache.layers).rev() {
        dtokens = encoder_layer_backward(&dtokens, layer_cache, params, slot, grads);
    }

    if let Some(pos) = &s.pos {
        for (g, &dt) in grads[pos.clone()].iter_mut().zip(&dtokens) {
            *g += dt;
        }
    }

    let (dw, db) = split_pair(grads, &s.patch_w, &s.patch_b);
    let dpatches = affine_backward(
        &cache.patches,
        l,
        cfg.patch_cells() * d,
        params.get(&s.patch_w),
        &dtokens,
        d,
        dw,
        db,
        true,
    )
    .expect("dx requested");
    let mut dlatent = unpatchify(&dpatches, cfg, d);

    let token_grad = &mut grads[s.mask_token.clone()];
    for (cell, &m) in cache.mask.bits().iter().enumerate() {
        if m {
            let row = &mut dlatent[cell * d..(cell + 1) * d];
            for (g, r) in token_grad.iter_mut().zip(row.iter_mut()) {
                *g += *r;
                *r = T::zero();
            }
        }
    }
    let (dw, db) = split_pair(grads, &s.input_w, &s.input_b);
    affine_backward(
        &cache.features,
        cfg.h * cfg.c,
        1 + cfg.k,
        params.get(&s.input_w),
        &dlatent,
        d,
        dw,
        db,
        false,
    );
}
