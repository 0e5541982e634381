use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channel multiplier `num / den` in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WidthFactor {
    num: u32,
    den: u32,
}

impl WidthFactor {
    pub const FULL: Self = Self { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::invalid("width_factor", format!("{num}/{den} is not in (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// ceil(n · factor), rounded up to a multiple of `groups`.
    pub fn scale(self, n: usize, groups: usize) -> usize {
        let scaled = (n * self.num as usize).div_ceil(self.den as usize).max(1);
        scaled.div_ceil(groups) * groups
    }
}

impl Default for WidthFactor {
    fn default() -> Self {
        Self::FULL
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl fmt::Display for WidthFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthFactor {
    type Err = Error;

    /// Accepts `"1/8"`, `"1"` or a decimal such as `"0.125"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("width_factor", format!("cannot parse {s:?}"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid("width_factor", format!("{v} is not in (0, 1]")));
        }
        let den = 1_000_000u32;
        Self::new(((v * den as f64).round() as u32).max(1), den)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// (height, width), both divisible by 32
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub width_factor: WidthFactor,
    /// group count of every group norm
    pub groups: usize,
    pub gn_epsilon: f64,
    pub dropout_rate: f64,
    pub block_a_repeats: usize,
    pub block_b_repeats: usize,
    /// decoder concatenates encoder taps; off for the ablation
    pub skip_connections: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (224, 224),
            input_channels: 3,
            width_factor: WidthFactor::FULL,
            groups: 16,
            gn_epsilon: 1e-5,
            dropout_rate: 0.3,
            block_a_repeats: 3,
            block_b_repeats: 5,
            skip_connections: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        check_spatial(h, w)?;
        if self.input_channels == 0 || self.groups == 0 {
            return Err(Error::invalid("model", "input_channels and groups must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("model", "dropout_rate must be in [0, 1)"));
        }
        if self.block_a_repeats == 0 || self.block_b_repeats == 0 {
            return Err(Error::invalid("model", "block repeats must be at least 1"));
        }
        if !(self.gn_epsilon > 0.0) {
            return Err(Error::invalid("model", "gn_epsilon must be positive"));
        }
        Ok(())
    }

    pub(crate) fn ch(&self, n: usize) -> usize {
        self.width_factor.scale(n, self.groups)
    }
}

pub(crate) fn check_spatial(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::invalid(
            "model",
            format!("input {h}x{w} must be a positive multiple of 32 in both dimensions"),
        ));
    }
    Ok(())
}
