//! The ablation grid: depthwise operator x kernel length x dilated bottleneck.

use std::fmt;

use super::config::{DwVariant, ModelConfig};

pub const GRID_KERNELS: [usize; 3] = [3, 5, 7];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub dw_variant: DwVariant,
    pub n: usize,
    pub addc: bool,
}

impl Variant {
    /// `base` with this variant's operator, kernel and bottleneck applied.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            dw_variant: self.dw_variant,
            n: self.n,
            addc: self.addc,
            ..base.clone()
        }
    }

    pub fn is_default(&self) -> bool {
        let d = ModelConfig::default();
        (self.dw_variant, self.n, self.addc) == (d.dw_variant, d.n, d.addc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let addc = if self.addc { "addc" } else { "noaddc" };
        write!(f, "{}-n{}-{}", self.dw_variant, self.n, addc)
    }
}

/// All 12 combinations of {axial, square} x n in {3, 5, 7} x ADDC {on, off}.
pub fn list_variants() -> Vec<Variant> {
    let mut out = Vec::with_capacity(12);
    for dw_variant in [DwVariant::Axial, DwVariant::Square] {
        for n in GRID_KERNELS {
            for addc in [true, false] {
                out.push(Variant {
                    dw_variant,
                    n,
                    addc,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::count_config;

    #[test]
    fn grid_has_twelve_distinct_variants() {
        let v = list_variants();
        assert_eq!(v.len(), 12);
        let mut names: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 12);
        assert_eq!(v.iter().filter(|x| x.is_default()).count(), 1);
    }

    #[test]
    fn square_always_costs_more_than_axial() {
        let base = ModelConfig::default();
        for n in GRID_KERNELS {
            for addc in [true, false] {
                let axial = Variant { dw_variant: DwVariant::Axial, n, addc };
                let square = Variant { dw_variant: DwVariant::Square, n, addc };
                assert!(
                    count_config(&square.apply(&base)).total()
                        > count_config(&axial.apply(&base)).total()
                );
            }
        }
    }
}
