//! Token-level masks over the event × leading grid.
//!
//! A mask bit set to `true` marks a cell whose latent vector is replaced by
//! the learned mask token. Two pre-training strategies are provided (random
//! Bernoulli masking and the progressive staircase triangle) together with
//! the inference-time frontier mask, which carries no random component.

use rand::Rng;

use crate::error::{Error, Result};

/// Boolean `h × c` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    h: usize,
    c: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(h: usize, c: usize) -> Self {
        Self {
            h,
            c,
            bits: vec![false; h * c],
        }
    }

    pub fn full(h: usize, c: usize) -> Self {
        Self {
            h,
            c,
            bits: vec![true; h * c],
        }
    }

    pub fn from_bits(h: usize, c: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != h * c {
            return Err(Error::domain(format!(
                "mask has {} bits, expected {h}x{c}",
                bits.len()
            )));
        }
        Ok(Self { h, c, bits })
    }

    pub fn rows(&self) -> usize {
        self.h
    }

    pub fn cols(&self) -> usize {
        self.c
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, h: usize, c: usize) -> bool {
        self.bits[h * self.c + c]
    }

    #[inline]
    pub fn set(&mut self, h: usize, c: usize, value: bool) {
        self.bits[h * self.c + c] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates of masked cells in row-major order.
    pub fn masked_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let c = self.c;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / c, i % c))
    }

    /// Cell-wise OR. Shapes must agree.
    pub fn union(&self, other: &MaskMatrix) -> Result<MaskMatrix> {
        self.check_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(MaskMatrix {
            h: self.h,
            c: self.c,
            bits,
        })
    }

    pub fn is_subset_of(&self, other: &MaskMatrix) -> bool {
        self.h == other.h
            && self.c == other.c
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    fn check_shape(&self, other: &MaskMatrix) -> Result<()> {
        if self.h != other.h || self.c != other.c {
            return Err(Error::domain(format!(
                "mask shape {}x{} does not match {}x{}",
                self.h, self.c, other.h, other.c
            )));
        }
        Ok(())
    }
}

/// Masking configuration used during pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPolicy {
    pub random_p: f64,
    pub progressive_enabled: bool,
    pub h_pred_max: usize,
    pub seed: u64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            random_p: 0.15,
            progressive_enabled: true,
            h_pred_max: 15,
            seed: 0,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self, h: usize, c: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.random_p) {
            return Err(Error::config(
                "mask.random_p",
                format!("{} is outside [0, 1]", self.random_p),
            ));
        }
        let limit = h.saturating_sub(1).min(c);
        if self.h_pred_max < 1 || self.h_pred_max > limit {
            return Err(Error::config(
                "mask.h_pred_max",
                format!("{} is outside [1, {limit}]", self.h_pred_max),
            ));
        }
        Ok(())
    }
}

/// Lower-right staircase: the last `d` event rows have `1..=d` trailing
/// leading steps masked.
pub fn staircase(h: usize, c: usize, d: usize) -> Result<MaskMatrix> {
    if h == 0 || c == 0 {
        return Err(Error::domain(format!("empty grid {h}x{c}")));
    }
    if d > (h - 1).min(c) {
        return Err(Error::domain(format!(
            "frontier depth {d} outside [0, {}] for a {h}x{c} grid",
            (h - 1).min(c)
        )));
    }
    let mut mask = MaskMatrix::new(h, c);
    let first = h - d;
    for row in first..h {
        let depth = row - first + 1;
        for col in c - depth..c {
            mask.set(row, col, true);
        }
    }
    Ok(mask)
}

/// Independent Bernoulli(p) mask.
pub fn random_mask<R: Rng + ?Sized>(h: usize, c: usize, p: f64, rng: &mut R) -> Result<MaskMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "mask probability {p} outside [0, 1]"
        )));
    }
    let bits = (0..h * c).map(|_| rng.random::<f64>() < p).collect();
    Ok(MaskMatrix { h, c, bits })
}

/// Progressive (triangular) training mask of depth `d ≥ 1`.
pub fn progressive_mask(h: usize, c: usize, d: usize) -> Result<MaskMatrix> {
    if d == 0 {
        return Err(Error::domain("progressive mask depth must be at least 1"));
    }
    staircase(h, c, d)
}

/// Draws one pre-training mask: an optional progressive triangle of uniform
/// depth in `1..=h_pred_max`, OR-ed with random masking of the remaining cells.
pub fn sample_training_mask<R: Rng + ?Sized>(
    policy: &MaskPolicy,
    h: usize,
    c: usize,
    rng: &mut R,
) -> Result<MaskMatrix> {
    policy.validate(h, c)?;
    let triangle = if policy.progressive_enabled {
        let d = rng.random_range(1..=policy.h_pred_max);
        progressive_mask(h, c, d)?
    } else {
        MaskMatrix::new(h, c)
    };
    // Cells already inside the triangle stay masked, so the union only adds
    // random cells outside it.
    let random = random_mask(h, c, policy.random_p, rng)?;
    triangle.union(&random)
}

/// Inference mask for a known frontier depth.
pub fn inference_mask(h: usize, c: usize, d: usize, h_pred_max: usize) -> Result<MaskMatrix> {
    if d > h_pred_max {
        return Err(Error::domain(format!(
            "frontier depth {d} exceeds the maximum prediction horizon {h_pred_max}"
        )));
    }
    staircase(h, c, d)
}

/// Recovers the frontier depth from an observedness grid and returns the
/// matching inference mask. Fails when the unobserved region is not an
/// exact lower-right staircase.
pub fn inference_mask_from_observed(
    h: usize,
    c: usize,
    observed: &[bool],
    h_pred_max: usize,
) -> Result<(MaskMatrix, usize)> {
    if observed.len() != h * c {
        return Err(Error::domain("observedness grid has the wrong size"));
    }
    if h == 0 {
        return Err(Error::domain("empty grid"));
    }
    // The last row of a staircase carries exactly `depth` unobserved cells.
    let depth = observed[(h - 1) * c..].iter().filter(|&&o| !o).count();
    if depth > (h - 1).min(c) {
        return Err(Error::domain(
            "unobserved region is not a frontier triangle",
        ));
    }
    let mask = inference_mask(h, c, depth, h_pred_max)?;
    let matches = mask.bits().iter().zip(observed).all(|(&m, &o)| m != o);
    if !matches {
        return Err(Error::domain(
            "unobserved region is not a frontier triangle",
        ));
    }
    Ok((mask, depth))
}
