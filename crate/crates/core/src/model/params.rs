use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::{ModelConfig, PosEncoding};
use super::ops::sinusoidal_table;
use crate::error::Result;
use crate::tensor::Scalar;

/// One named array inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSlots {
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
}

/// Offsets of every array, fixed by the config.
#[derive(Debug, Clone)]
pub(crate) struct Slots {
    pub input_w: Range<usize>,
    pub input_b: Range<usize>,
    pub mask_token: Range<usize>,
    pub patch_w: Range<usize>,
    pub patch_b: Range<usize>,
    pub pos: Option<Range<usize>>,
    pub layers: Vec<LayerSlots>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

/// Ordered list of named arrays for a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        Self::build(cfg).0
    }

    fn build(cfg: &ModelConfig) -> (Self, Slots) {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let e = ParamEntry {
                name,
                shape,
                offset,
            };
            offset += e.len();
            let r = e.range();
            entries.push(e);
            r
        };
        let d = cfg.d_model;
        let pp = cfg.patch_cells();
        let input_w = push("input_proj.weight".into(), vec![1 + cfg.k, d]);
        let input_b = push("input_proj.bias".into(), vec![d]);
        let mask_token = push("mask_token".into(), vec![d]);
        let patch_w = push("patch_embed.weight".into(), vec![pp * d, d]);
        let patch_b = push("patch_embed.bias".into(), vec![d]);
        let pos = (cfg.pe_mode == PosEncoding::Learned)
            .then(|| push("pos_embed".into(), vec![cfg.num_tokens(), d]));
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            layers.push(LayerSlots {
                wq: push(p("attn.query.weight"), vec![d, d]),
                bq: push(p("attn.query.bias"), vec![d]),
                wk: push(p("attn.key.weight"), vec![d, d]),
                bk: push(p("attn.key.bias"), vec![d]),
                wv: push(p("attn.value.weight"), vec![d, d]),
                bv: push(p("attn.value.bias"), vec![d]),
                wo: push(p("attn.output.weight"), vec![d, d]),
                bo: push(p("attn.output.bias"), vec![d]),
                ln1_g: push(p("norm1.gain"), vec![d]),
                ln1_b: push(p("norm1.offset"), vec![d]),
                w1: push(p("ff.hidden.weight"), vec![d, cfg.d_ff]),
                b1: push(p("ff.hidden.bias"), vec![cfg.d_ff]),
                w2: push(p("ff.output.weight"), vec![cfg.d_ff, d]),
                b2: push(p("ff.output.bias"), vec![d]),
                ln2_g: push(p("norm2.gain"), vec![d]),
                ln2_b: push(p("norm2.offset"), vec![d]),
            });
        }
        let head_w = push("head.weight".into(), vec![d, pp * cfg.n_out]);
        let head_b = push("head.bias".into(), vec![pp * cfg.n_out]);
        let slots = Slots {
            input_w,
            input_b,
            mask_token,
            patch_w,
            patch_b,
            pos,
            layers,
            head_w,
            head_b,
        };
        (
            Self {
                entries,
                total: offset,
            },
            slots,
        )
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Exact number of scalar parameters for a config.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    ParamLayout::for_config(cfg).total()
}

/// All trainable weights of one model, stored contiguously.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    config: ModelConfig,
    layout: ParamLayout,
    pub(crate) slots: Slots,
    data: Vec<T>,
    /// Fixed sinusoidal table (empty for other modes).
    pub(crate) pe_table: Vec<T>,
}

impl<T: Scalar> ParameterStore<T> {
    /// All-zero parameters (gains included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = ParamLayout::build(config);
        let pe_table = match config.pe_mode {
            PosEncoding::Sinusoidal => sinusoidal_table(config.num_tokens(), config.d_model)?
                .into_iter()
                .map(T::of)
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self {
            config: config.clone(),
            data: vec![T::zero(); layout.total()],
            layout,
            slots,
            pe_table,
        })
    }

    /// Seeded initialization: Glorot-uniform weights, zero biases, unit
    /// normalization gains, small normal mask token and learned positions.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = Normal::new(0.0, 0.02).expect("valid normal");
        for e in store.layout.entries.clone() {
            let slice = &mut store.data[e.range()];
            if e.name.ends_with(".weight") {
                let (fan_in, fan_out) = (e.shape[0], e.shape[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                for v in slice.iter_mut() {
                    *v = T::of(dist.sample(&mut rng));
                }
            } else if e.name.ends_with(".gain") {
                slice.fill(T::one());
            } else if e.name == "mask_token" || e.name == "pos_embed" {
                for v in slice.iter_mut() {
                    *v = T::of(small.sample(&mut rng));
                }
            }
        }
        Ok(store)
    }

    /// Wraps an existing buffer laid out for `config`.
    pub fn from_data(config: &ModelConfig, data: Vec<T>) -> Result<Self> {
        let mut store = Self::zeros(config)?;
        if data.len() != store.data.len() {
            return Err(crate::error::Error::domain(format!(
                "parameter buffer has {} values, config needs {}",
                data.len(),
                store.data.len()
            )));
        }
        store.data = data;
        Ok(store)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn array(&self, name: &str) -> Option<&[T]> {
        self.layout.entry(name).map(|e| &self.data[e.range()])
    }

    pub fn array_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.entry(name)?.range();
        Some(&mut self.data[r])
    }

    #[inline]
    pub(crate) fn get(&self, r: &Range<usize>) -> &[T] {
        &self.data[r.clone()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion with the same layout.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            config: self.config.clone(),
            layout: self.layout.clone(),
            slots: self.slots.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            pe_table: self.pe_table.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand count of one encoder layer, independent of the layout code.
    fn layer_count(d: usize, d_ff: usize) -> usize {
        let attention = 4 * (d * d + d);
        let norms = 2 * (2 * d);
        let ff = d * d_ff + d_ff + d_ff * d + d;
        attention + norms + ff
    }

    fn hand_count(cfg: &ModelConfig) -> usize {
        let d = cfg.d_model;
        let pp = cfg.patch_size * cfg.patch_size;
        let input = (1 + cfg.k) * d + d;
        let patch = pp * d * d + d;
        let pos = if cfg.pe_mode == PosEncoding::Learned {
            cfg.num_tokens() * d
        } else {
            0
        };
        let head = d * pp + pp;
        input + d + patch + pos + cfg.num_layers * layer_count(d, cfg.d_ff) + head
    }

    #[test]
    fn count_matches_hand_count() {
        for mut cfg in [
            ModelConfig::tiny(),
            ModelConfig::small(),
            ModelConfig::base(),
        ] {
            assert_eq!(count_parameters(&cfg), hand_count(&cfg));
            cfg.pe_mode = PosEncoding::Learned;
            assert_eq!(count_parameters(&cfg), hand_count(&cfg));
        }
    }

    #[test]
    fn doubling_layers_adds_per_layer_count() {
        let mut cfg = ModelConfig::small();
        let base = count_parameters(&cfg);
        let n = cfg.num_layers;
        cfg.num_layers *= 2;
        assert_eq!(
            count_parameters(&cfg) - base,
            n * layer_count(cfg.d_model, cfg.d_ff)
        );
    }

    #[test]
    fn small_config_with_four_by_four_patches_near_published_size() {
        let mut cfg = ModelConfig::small();
        cfg.patch_size = 4;
        let n = count_parameters(&cfg) as f64;
        assert!((n / 928_000.0 - 1.0).abs() <= 0.15, "{n}");
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let cfg = ModelConfig::tiny();
        let a = ParameterStore::<f32>::init(&cfg, 3).unwrap();
        let b = ParameterStore::<f32>::init(&cfg, 3).unwrap();
        let c = ParameterStore::<f32>::init(&cfg, 4).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        assert!(a.all_finite());
        assert!(a
            .array("layers.1.norm2.gain")
            .unwrap()
            .iter()
            .all(|&g| g == 1.0));
        assert!(a.array("head.bias").unwrap().iter().all(|&g| g == 0.0));
        let names: Vec<_> = a
            .layout()
            .entries()
            .iter()
            .map(|e| e.name.as_str())
            .collect();
        assert_eq!(names.first(), Some(&"input_proj.weight"));
        assert_eq!(names.last(), Some(&"head.bias"));
    }
}
