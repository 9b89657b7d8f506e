//! Finite-difference check of the hand-written backward pass.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripcast::frame::Instance;
use tripcast::mask::{progressive_mask, MaskMatrix};
use tripcast::model::{forward, ModelConfig, ParameterStore, PosEncoding};
use tripcast::train::{instance_gradient, loss_selection, masked_mae_loss, LossScope};

fn small_config(pe_mode: PosEncoding) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        d_model: 8,
        num_heads: 2,
        d_ff: 12,
        patch_size: 2,
        h: 4,
        c: 6,
        k: 2,
        n_out: 1,
        pe_mode,
        eps: 1e-5,
        dropout: 0.0,
    }
}

fn instance(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Instance {
    let cells = cfg.h * cfg.c;
    let values: Vec<f64> = (0..cells).map(|_| rng.random_range(-2.0..3.0)).collect();
    Instance {
        series_id: "g".into(),
        window_start: NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
        h: cfg.h,
        c: cfg.c,
        k: cfg.k,
        values: values.clone(),
        observed: vec![true; cells],
        covariates: (0..cells * cfg.k)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
        target: values,
    }
}

fn check(cfg: ModelConfig, mask: MaskMatrix, scope: LossScope, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterStore::<f64>::init(&cfg, seed).unwrap();
    // Give the zero-initialized biases and gains some spread.
    for v in params.data_mut().iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let mut inst = instance(&cfg, &mut rng);
    // Keep every residual well away from the kink of |x|.
    let pred = forward(&inst, &mask, &params).unwrap();
    for (t, p) in inst.target.iter_mut().zip(&pred) {
        let offset = rng.random_range(0.1..1.0);
        *t = if rng.random_bool(0.5) {
            p + offset
        } else {
            p - offset
        };
    }
    let selection = loss_selection(&mask, scope);
    let (_, analytic) = instance_gradient(&params, &inst, &mask, scope, None)
        .unwrap()
        .unwrap();

    let loss_at = |p: &ParameterStore<f64>| {
        let pred = forward(&inst, &mask, p).unwrap();
        masked_mae_loss(&pred, &inst.target, &selection).unwrap()
    };
    let step = 1e-5;
    let mut numeric = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params.data()[i];
        params.data_mut()[i] = orig + step;
        let up = loss_at(&params);
        params.data_mut()[i] = orig - step;
        let down = loss_at(&params);
        params.data_mut()[i] = orig;
        numeric[i] = (up - down) / (2.0 * step);
    }

    for entry in params.layout().entries() {
        let r = entry.range();
        let (a, n) = (&analytic[r.clone()], &numeric[r]);
        let diff: f64 = a
            .iter()
            .zip(n)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_n: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / (norm_a + norm_n).max(1e-12);
        assert!(
            rel < 1e-3 || diff < 1e-9,
            "{}: relative error {rel:e} (analytic norm {norm_a:e}, numeric norm {norm_n:e})",
            entry.name
        );
    }
}

#[test]
fn gradient_matches_finite_differences_sinusoidal() {
    let cfg = small_config(PosEncoding::Sinusoidal);
    let mask = progressive_mask(cfg.h, cfg.c, 3).unwrap();
    check(cfg, mask, LossScope::MaskedOnly, 11);
}

#[test]
fn gradient_matches_finite_differences_learned_positions() {
    let cfg = small_config(PosEncoding::Learned);
    let mask = progressive_mask(cfg.h, cfg.c, 2).unwrap();
    check(cfg, mask, LossScope::MaskedOnly, 12);
}

#[test]
fn gradient_matches_finite_differences_all_cells() {
    let cfg = ModelConfig {
        num_layers: 1,
        ..small_config(PosEncoding::None)
    };
    let mut mask = progressive_mask(cfg.h, cfg.c, 2).unwrap();
    mask.set(0, 1, true);
    check(cfg, mask, LossScope::AllCells, 13);
}
