use serde::{Deserialize, Serialize};

use crate::autograd::kernels::conv_out_len;
use crate::error::{AstnError, Result};

/// One convolution layer: `channels` output maps, odd `kernel` with same
/// padding, optional non-overlapping max-pool of width `pool` (0 or 1 = none).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    #[serde(default)]
    pub pool: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, pool: usize) -> Self {
        ConvSpec { channels, kernel, pool }
    }

    fn out_len(&self, len: usize) -> Option<usize> {
        let l = conv_out_len(len, self.kernel, 1, self.kernel / 2)?;
        if self.pool > 1 {
            (l >= self.pool).then_some(l / self.pool)
        } else {
            Some(l)
        }
    }
}

/// How a pair of representations is turned into discriminator input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorVariant {
    SecondOrder,
    FirstOrder,
    AbsFirstOrder,
    Concatenated,
}

impl DiscriminatorVariant {
    pub const ALL: [DiscriminatorVariant; 4] = [
        DiscriminatorVariant::SecondOrder,
        DiscriminatorVariant::FirstOrder,
        DiscriminatorVariant::AbsFirstOrder,
        DiscriminatorVariant::Concatenated,
    ];
}

/// Which representation levels the discriminator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorLevels {
    /// Spatial, intrinsic and dynamic representations together.
    MultiLevel,
    DynamicOnly,
}

impl std::fmt::Display for DiscriminatorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiscriminatorVariant::SecondOrder => "second_order",
            DiscriminatorVariant::FirstOrder => "first_order",
            DiscriminatorVariant::AbsFirstOrder => "abs_first_order",
            DiscriminatorVariant::Concatenated => "concatenated",
        })
    }
}

impl std::fmt::Display for DiscriminatorLevels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiscriminatorLevels::MultiLevel => "multi_level",
            DiscriminatorLevels::DynamicOnly => "dynamic_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AstnConfig {
    pub width: usize,
    pub height: usize,
    pub sample_rate: usize,
    pub spatial_layers: Vec<ConvSpec>,
    pub leaky_slope: f64,
    pub spatial_dim: usize,
    pub intrinsic_layers: Vec<ConvSpec>,
    pub intrinsic_dim: usize,
    pub hidden_dim: usize,
    pub bidirectional: bool,
    pub classifier_hidden: Vec<usize>,
    pub discriminator_variant: DiscriminatorVariant,
    pub discriminator_levels: DiscriminatorLevels,
    /// Swap the pair coding so same-subject pairs target 1 instead of 0.
    pub flip_pair_coding: bool,
}

impl Default for AstnConfig {
    fn default() -> Self {
        AstnConfig {
            width: 32,
            height: 16,
            sample_rate: 12,
            spatial_layers: vec![
                ConvSpec::new(8, 3, 2),
                ConvSpec::new(16, 3, 2),
                ConvSpec::new(24, 3, 0),
                ConvSpec::new(24, 3, 0),
                ConvSpec::new(16, 3, 0),
            ],
            leaky_slope: 0.01,
            spatial_dim: 64,
            intrinsic_layers: vec![ConvSpec::new(32, 3, 2), ConvSpec::new(32, 3, 0)],
            intrinsic_dim: 64,
            hidden_dim: 64,
            bidirectional: true,
            classifier_hidden: vec![64],
            discriminator_variant: DiscriminatorVariant::SecondOrder,
            discriminator_levels: DiscriminatorLevels::MultiLevel,
            flip_pair_coding: false,
        }
    }
}

impl AstnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AstnError::Config(m));
        if self.spatial_dim == 0 || self.intrinsic_dim == 0 || self.hidden_dim == 0 {
            return bad("spatial_dim, intrinsic_dim and hidden_dim must be positive".into());
        }
        if self.width == 0 || self.height == 0 || self.sample_rate == 0 {
            return bad("input geometry must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad(format!("leaky_slope {} must be finite and >= 0", self.leaky_slope));
        }
        for l in self.spatial_layers.iter().chain(&self.intrinsic_layers) {
            if l.channels == 0 || l.kernel % 2 == 0 {
                return bad(format!("conv layer {l:?} needs channels > 0 and an odd kernel"));
            }
        }
        if self.classifier_hidden.contains(&0) {
            return bad("classifier hidden sizes must be positive".into());
        }
        self.spatial_flat_dim()?;
        self.intrinsic_flat_dim()?;
        Ok(())
    }

    /// Flattened size entering the spatial projection.
    pub fn spatial_flat_dim(&self) -> Result<usize> {
        let (mut w, mut h, mut c) = (self.width, self.height, 1);
        for (i, l) in self.spatial_layers.iter().enumerate() {
            match (l.out_len(w), l.out_len(h)) {
                (Some(a), Some(b)) if a > 0 && b > 0 => (w, h, c) = (a, b, l.channels),
                _ => {
                    return Err(AstnError::Config(format!(
                        "spatial layer {i} shrinks the {}×{} grid to nothing",
                        self.width, self.height
                    )))
                }
            }
        }
        Ok(w * h * c)
    }

    /// Flattened size entering the intrinsic projection.
    pub fn intrinsic_flat_dim(&self) -> Result<usize> {
        let (mut len, mut c) = (self.sample_rate, self.spatial_dim);
        for (i, l) in self.intrinsic_layers.iter().enumerate() {
            match l.out_len(len) {
                Some(n) if n > 0 => (len, c) = (n, l.channels),
                _ => {
                    return Err(AstnError::Config(format!(
                        "intrinsic layer {i}: {} frames per second is shorter than its receptive field",
                        self.sample_rate
                    )))
                }
            }
        }
        Ok(len * c)
    }

    /// Width of the dynamic representation.
    pub fn dynamic_dim(&self) -> usize {
        self.hidden_dim * if self.bidirectional { 2 } else { 1 }
    }

    pub fn discriminator_input_dim(&self) -> usize {
        let base = match self.discriminator_levels {
            DiscriminatorLevels::MultiLevel => self.spatial_dim + self.intrinsic_dim + self.dynamic_dim(),
            DiscriminatorLevels::DynamicOnly => self.dynamic_dim(),
        };
        match self.discriminator_variant {
            DiscriminatorVariant::Concatenated => 2 * base,
            _ => base,
        }
    }

    /// Discriminator targets for (same-subject, different-subject) pairs.
    pub fn pair_targets(&self) -> (f64, f64) {
        if self.flip_pair_coding {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims() {
        let c = AstnConfig::default();
        c.validate().unwrap();
        assert_eq!(c.spatial_flat_dim().unwrap(), 8 * 4 * 16);
        assert_eq!(c.intrinsic_flat_dim().unwrap(), 6 * 32);
        assert_eq!(c.discriminator_input_dim(), 64 + 64 + 128);
    }

    #[test]
    fn short_windows_rejected() {
        let c = AstnConfig {
            sample_rate: 1,
            intrinsic_layers: vec![ConvSpec::new(4, 3, 2)],
            ..AstnConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_partial_input() {
        let c = AstnConfig::default();
        let back: AstnConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: AstnConfig =
            serde_json::from_str(r#"{"bidirectional": false, "discriminator_variant": "abs_first_order"}"#).unwrap();
        assert!(!partial.bidirectional);
        assert_eq!(partial.discriminator_variant, DiscriminatorVariant::AbsFirstOrder);
    }
}
