use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults give the 50-convolution model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub down_block_layers: Vec<usize>,
    pub bottleneck_layers: usize,
    pub up_block_layers: Vec<usize>,
    pub growth_rate: usize,
    pub initial_filters: usize,
    pub kernel_size: usize,
    pub dropout_p: f64,
    pub l2_factor: f64,
    pub pool_size: usize,
    pub tu_stride: usize,
    pub window_len: usize,
    pub bn_eps: f64,
    /// Running-statistics decay: `running = m * running + (1 - m) * batch`.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            down_block_layers: vec![4, 5, 7],
            bottleneck_layers: 10,
            up_block_layers: vec![7, 5, 4],
            growth_rate: 12,
            initial_filters: 48,
            kernel_size: 3,
            dropout_p: 0.2,
            l2_factor: 0.01,
            pool_size: 2,
            tu_stride: 2,
            window_len: 2048,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.down_block_layers.len();
        if n == 0 {
            return bad("down_block_layers must not be empty".into());
        }
        if self.up_block_layers.len() != n {
            return bad(format!(
                "up_block_layers has {} blocks but down_block_layers has {n}",
                self.up_block_layers.len()
            ));
        }
        if self.down_block_layers.iter().chain(&self.up_block_layers).any(|&l| l == 0)
            || self.bottleneck_layers == 0
        {
            return bad("every dense block needs at least one layer".into());
        }
        if self.growth_rate == 0 || self.initial_filters == 0 {
            return bad("growth_rate and initial_filters must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.pool_size != 2 || self.tu_stride != 2 {
            return bad("pool_size and tu_stride must both be 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must be in [0, 1)", self.dropout_p));
        }
        if !(self.l2_factor >= 0.0) {
            return bad(format!("l2_factor {} must be non-negative", self.l2_factor));
        }
        if !(self.bn_eps >= 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be >= 0 and bn_momentum in [0, 1)".into());
        }
        let factor = self.pool_size.pow(n as u32);
        if self.window_len == 0 || self.window_len % factor != 0 {
            return bad(format!(
                "window_len {} is not divisible by {factor} (pool_size^{n})",
                self.window_len
            ));
        }
        Ok(())
    }

    /// Total convolutions: first conv, one per dense layer, one per TD and TU,
    /// and the output conv.
    pub fn conv_count(&self) -> usize {
        let layers: usize = self.down_block_layers.iter().chain(&self.up_block_layers).sum::<usize>()
            + self.bottleneck_layers;
        2 + layers + 2 * self.down_block_layers.len()
    }

    /// Channel count at each skip tap (input of each TD).
    pub fn skip_channels(&self) -> Vec<usize> {
        let mut c = self.initial_filters;
        self.down_block_layers
            .iter()
            .map(|&l| {
                c += l * self.growth_rate;
                c
            })
            .collect()
    }

    /// The name of the first field whose value differs from `other`.
    pub fn first_mismatch(&self, other: &ModelConfig) -> Option<String> {
        let a = serde_json::to_value(self).ok()?;
        let b = serde_json::to_value(other).ok()?;
        let (a, b) = (a.as_object()?, b.as_object()?);
        a.iter()
            .find(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
    }
}

/// Optimiser and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_snr_set: Vec<i32>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 80,
            seed: 0,
            train_snr_set: crate::noisemix::SNR_LADDER_DB.to_vec(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-7,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must be in [0, 1) and eps positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.conv_count(), 50);
        assert_eq!(c.skip_channels(), vec![96, 156, 240]);
    }

    #[test]
    fn window_must_divide_by_eight() {
        for bad in [1004, 1001, 4, 0] {
            let c = ModelConfig {
                window_len: bad,
                ..ModelConfig::default()
            };
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{bad}");
        }
        // 1000 = 8 * 125 is a valid length.
        let c = ModelConfig {
            window_len: 1000,
            ..ModelConfig::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn mismatch_names_field() {
        let a = ModelConfig::default();
        let b = ModelConfig {
            window_len: 1024,
            ..a.clone()
        };
        assert_eq!(a.first_mismatch(&b).as_deref(), Some("window_len"));
        assert_eq!(a.first_mismatch(&a), None);
    }
}
