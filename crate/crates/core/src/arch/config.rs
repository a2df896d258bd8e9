//! Model configuration and its `key = value` text format.
//!
//! ```text
//! # default model
//! widths = 16, 32, 64, 128, 256, 512
//! n = 7
//! dw_variant = axial
//! addc = true
//! bottleneck_width = 256
//! seed = 0
//! ```
//!
//! Missing keys keep their defaults. Unknown keys, duplicate keys and
//! malformed values are errors carrying the 1-based line number.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const LEVELS: usize = 6;

/// How the depthwise stage of each encoder/decoder module is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DwVariant {
    /// A `1 x n` and an `n x 1` depthwise convolution summed with the input.
    Axial,
    /// One `n x n` depthwise convolution summed with the input.
    Square,
}

impl fmt::Display for DwVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DwVariant::Axial => "axial",
            DwVariant::Square => "square",
        })
    }
}

impl FromStr for DwVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "axial" => Ok(DwVariant::Axial),
            "square" => Ok(DwVariant::Square),
            other => Err(format!("unknown dw_variant `{other}` (expected axial or square)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Channel width of feature level `i`, which sits at `1 / 2^i` scale.
    pub widths: [usize; LEVELS],
    /// Depthwise kernel length of the encoder and decoder modules.
    pub n: usize,
    pub dw_variant: DwVariant,
    /// Dilated axial branches (d = 1, 2, 3, k = 3) in the bottleneck when
    /// set; a single `n = 7` axial pair otherwise.
    pub addc: bool,
    pub bottleneck_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64, 128, 256, 512],
            n: 7,
            dw_variant: DwVariant::Axial,
            addc: true,
            bottleneck_width: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::input(format!("width of level {i} must be positive")));
        }
        if self.bottleneck_width == 0 {
            return Err(Error::input("bottleneck_width must be positive"));
        }
        if self.n % 2 == 0 {
            return Err(Error::UnsupportedKernel(self.n));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        format!(
            "widths = {}\nn = {}\ndw_variant = {}\naddc = {}\nbottleneck_width = {}\nseed = {}\n",
            widths.join(", "),
            self.n,
            self.dw_variant,
            self.addc,
            self.bottleneck_width,
            self.seed
        )
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

fn parse_num<N: FromStr>(v: &str) -> std::result::Result<N, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got `{v}`"))
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            match key {
                "widths" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != LEVELS {
                        return Err(err(format!(
                            "widths needs {LEVELS} comma-separated values, got {}",
                            parts.len()
                        )));
                    }
                    for (slot, p) in cfg.widths.iter_mut().zip(parts) {
                        *slot = parse_num(p).map_err(err)?;
                    }
                }
                "n" => cfg.n = parse_num(value).map_err(err)?,
                "dw_variant" => cfg.dw_variant = value.parse().map_err(err)?,
                "addc" => cfg.addc = parse_bool(value).map_err(err)?,
                "bottleneck_width" => cfg.bottleneck_width = parse_num(value).map_err(err)?,
                "seed" => cfg.seed = parse_num(value).map_err(err)?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.to_text().parse::<ModelConfig>().unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: ModelConfig = "# ablation\nn = 5\ndw_variant = square\naddc = off\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.dw_variant, DwVariant::Square);
        assert!(!cfg.addc);
        assert_eq!(cfg.widths, ModelConfig::default().widths);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("n = 7\ncolour = red\n", 2),
            ("\n\nwidths = 1, 2, 3\n", 3),
            ("n = seven\n", 1),
            ("n = 3\nn = 5\n", 2),
            ("just text\n", 1),
        ];
        for (text, line) in cases {
            match text.parse::<ModelConfig>() {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn even_kernel_and_zero_width_rejected() {
        assert!(matches!(
            "n = 4".parse::<ModelConfig>(),
            Err(Error::UnsupportedKernel(4))
        ));
        assert!("widths = 0, 1, 1, 1, 1, 1".parse::<ModelConfig>().is_err());
    }
}
