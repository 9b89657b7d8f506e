use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frame::COVARIATE_CHANNELS;

/// Attention memory grows with the square of this.
pub const MAX_TOKENS: usize = 4096;

/// Positional encoding added to the patch tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosEncoding {
    Sinusoidal,
    Learned,
    None,
}

impl fmt::Display for PosEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosEncoding::Sinusoidal => "sinusoidal",
            PosEncoding::Learned => "learned",
            PosEncoding::None => "none",
        })
    }
}

impl FromStr for PosEncoding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sinusoidal" | "fixed" => Ok(PosEncoding::Sinusoidal),
            "learned" => Ok(PosEncoding::Learned),
            "none" => Ok(PosEncoding::None),
            other => Err(format!("unknown positional encoding `{other}`")),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub patch_size: usize,
    /// Event rows per window.
    pub h: usize,
    /// Leading steps per window.
    pub c: usize,
    /// Covariate channels per cell.
    pub k: usize,
    /// Output channels; only the univariate case is supported.
    pub n_out: usize,
    pub pe_mode: PosEncoding,
    pub eps: f64,
    /// Dropout applied to attention weights during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl ModelConfig {
    fn sized(num_layers: usize, d_model: usize, num_heads: usize, patch_size: usize) -> Self {
        Self {
            num_layers,
            d_model,
            num_heads,
            d_ff: 4 * d_model,
            patch_size,
            h: 60,
            c: 40,
            k: COVARIATE_CHANNELS,
            n_out: 1,
            pe_mode: PosEncoding::Sinusoidal,
            eps: 1e-5,
            dropout: 0.0,
        }
    }

    /// Desk-scale model: 2 layers, width 64, 4 heads, 4×4 patches.
    pub fn tiny() -> Self {
        Self::sized(2, 64, 4, 4)
    }

    /// Published small size (4 layers, 128 wide, 4 heads) with 2×2 patches.
    pub fn small() -> Self {
        Self::sized(4, 128, 4, 2)
    }

    /// Published base size (4 layers, 256 wide, 8 heads) with 2×2 patches.
    pub fn base() -> Self {
        Self::sized(4, 256, 8, 2)
    }

    /// Published large size (6 layers, 512 wide, 8 heads) with 2×2 patches.
    pub fn large() -> Self {
        Self::sized(6, 512, 8, 2)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "small" => Some(Self::small()),
            "base" => Some(Self::base()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn grid_rows(&self) -> usize {
        self.h / self.patch_size
    }

    pub fn grid_cols(&self) -> usize {
        self.c / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn patch_cells(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.num_layers", self.num_layers),
            ("model.d_model", self.d_model),
            ("model.num_heads", self.num_heads),
            ("model.d_ff", self.d_ff),
            ("model.patch_size", self.patch_size),
            ("model.h", self.h),
            ("model.c", self.c),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        let bounded = [
            ("model.num_layers", self.num_layers, 1 << 10),
            ("model.d_model", self.d_model, 1 << 14),
            ("model.d_ff", self.d_ff, 1 << 16),
            ("model.h", self.h, 1 << 13),
            ("model.c", self.c, 1 << 13),
            ("model.k", self.k, 1 << 10),
        ];
        for (key, v, max) in bounded {
            if v > max {
                return Err(Error::config(
                    key,
                    format!("{v} exceeds the supported maximum {max}"),
                ));
            }
        }
        if !self.h.is_multiple_of(self.patch_size) {
            return Err(Error::config(
                "model.patch_size",
                format!("{} does not divide H = {}", self.patch_size, self.h),
            ));
        }
        if !self.c.is_multiple_of(self.patch_size) {
            return Err(Error::config(
                "model.patch_size",
                format!("{} does not divide C = {}", self.patch_size, self.c),
            ));
        }
        if self.num_tokens() > MAX_TOKENS {
            return Err(Error::config(
                "model.patch_size",
                format!(
                    "{} tokens exceed the supported maximum {MAX_TOKENS}",
                    self.num_tokens()
                ),
            ));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                "model.num_heads",
                format!(
                    "{} does not divide d_model = {}",
                    self.num_heads, self.d_model
                ),
            ));
        }
        if self.pe_mode == PosEncoding::Sinusoidal && !self.d_model.is_multiple_of(2) {
            return Err(Error::config(
                "model.d_model",
                "sinusoidal positional encoding needs an even width",
            ));
        }
        if self.n_out != 1 {
            return Err(Error::config(
                "model.n_out",
                "only univariate output (1) is supported",
            ));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(
                "model.eps",
                "must be a positive finite number",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must be in [0, 1)"));
        }
        Ok(())
    }

    /// `key=value` lines with the `model.` prefix.
    pub fn to_kv_lines(&self) -> Vec<String> {
        vec![
            format!("model.num_layers={}", self.num_layers),
            format!("model.d_model={}", self.d_model),
            format!("model.num_heads={}", self.num_heads),
            format!("model.d_ff={}", self.d_ff),
            format!("model.patch_size={}", self.patch_size),
            format!("model.h={}", self.h),
            format!("model.c={}", self.c),
            format!("model.k={}", self.k),
            format!("model.n_out={}", self.n_out),
            format!("model.pe_mode={}", self.pe_mode),
            format!("model.eps={:?}", self.eps),
            format!("model.dropout={:?}", self.dropout),
        ]
    }

    /// Applies one `model.*` key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
        }
        match key {
            "model.num_layers" => self.num_layers = num(key, value)?,
            "model.d_model" => self.d_model = num(key, value)?,
            "model.num_heads" => self.num_heads = num(key, value)?,
            "model.d_ff" => self.d_ff = num(key, value)?,
            "model.patch_size" => self.patch_size = num(key, value)?,
            "model.h" => self.h = num(key, value)?,
            "model.c" => self.c = num(key, value)?,
            "model.k" => self.k = num(key, value)?,
            "model.n_out" => self.n_out = num(key, value)?,
            "model.pe_mode" => {
                self.pe_mode = value
                    .trim()
                    .parse()
                    .map_err(|e: String| Error::config(key, e))?
            }
            "model.eps" => self.eps = num(key, value)?,
            "model.dropout" => self.dropout = num(key, value)?,
            _ => return Err(Error::config(key, "unknown model key")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["tiny", "small", "base", "large"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(ModelConfig::tiny().num_tokens(), 150);
    }

    #[test]
    fn validation_errors_name_keys() {
        let mut c = ModelConfig::tiny();
        c.patch_size = 7;
        assert!(
            matches!(c.validate(), Err(Error::Config { key, .. }) if key == "model.patch_size")
        );
        let mut c = ModelConfig::tiny();
        c.num_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "model.num_heads"));
        let mut c = ModelConfig::tiny();
        c.d_model = 6;
        c.num_heads = 3;
        c.d_model = 9;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.n_out = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::base();
        c.pe_mode = PosEncoding::Learned;
        c.dropout = 0.1;
        let mut back = ModelConfig::tiny();
        for line in c.to_kv_lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(back, c);
        assert!(back.set("model.bogus", "1").is_err());
    }
}
