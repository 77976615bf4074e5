use serde::{Deserialize, Serialize};

use super::ModelError;

/// One convolutional layer: square kernel, valid padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMode {
    NoGaze,
    GazeAsInput,
    GazeDropout,
    CentralBlobDropout,
}

impl IntegrationMode {
    pub fn needs_gaze(&self) -> bool {
        matches!(self, IntegrationMode::GazeAsInput | IntegrationMode::GazeDropout)
    }
}

/// PilotNet-style driver network description: five conv layers, four dense
/// layers, and the gaze-integration scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub conv: [ConvSpec; 5],
    pub dense: [usize; 4],
    pub integration_mode: IntegrationMode,
    pub uniform_keep_prob: f64,
    pub p_base: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::pilotnet(IntegrationMode::NoGaze)
    }
}

impl ModelConfig {
    /// The published PilotNet layer geometry at 200x66 input.
    pub fn pilotnet(mode: IntegrationMode) -> Self {
        ModelConfig {
            input_width: 200,
            input_height: 66,
            input_channels: if mode == IntegrationMode::GazeAsInput { 2 } else { 1 },
            conv: [
                ConvSpec { out_channels: 24, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 36, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 48, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 64, kernel: 3, stride: 1 },
                ConvSpec { out_channels: 64, kernel: 3, stride: 1 },
            ],
            dense: [100, 50, 10, 1],
            integration_mode: mode,
            uniform_keep_prob: 0.5,
            p_base: 0.25,
        }
    }

    /// Same geometry with slim channel counts; trains in minutes on one core.
    pub fn compact(mode: IntegrationMode) -> Self {
        ModelConfig {
            conv: [
                ConvSpec { out_channels: 6, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 8, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 8, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 8, kernel: 3, stride: 1 },
                ConvSpec { out_channels: 8, kernel: 3, stride: 1 },
            ],
            dense: [24, 12, 8, 1],
            ..ModelConfig::pilotnet(mode)
        }
    }

    /// (channels, height, width) after each conv layer. Errors name the first
    /// layer whose output would be empty.
    pub fn conv_chain(&self) -> Result<Vec<(usize, usize, usize)>, ModelError> {
        let mut chain = Vec::with_capacity(self.conv.len());
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.kernel > h || spec.kernel > w || spec.stride == 0 {
                return Err(ModelError::Config(format!(
                    "conv layer {i} cannot apply a {k}x{k} stride-{s} kernel to a {h}x{w} input",
                    k = spec.kernel,
                    s = spec.stride
                )));
            }
            h = (h - spec.kernel) / spec.stride + 1;
            w = (w - spec.kernel) / spec.stride + 1;
            chain.push((spec.out_channels, h, w));
        }
        Ok(chain)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if *self.dense.last().unwrap() != 1 {
            return Err(ModelError::Config(
                "final dense width must be 1 (steering scalar)".into(),
            ));
        }
        if !(self.uniform_keep_prob > 0.0 && self.uniform_keep_prob <= 1.0) {
            return Err(ModelError::Config(format!(
                "uniform_keep_prob {} outside (0,1]",
                self.uniform_keep_prob
            )));
        }
        if !(self.p_base > 0.0 && self.p_base <= 1.0) {
            return Err(ModelError::Config(format!("p_base {} outside (0,1]", self.p_base)));
        }
        let expected_channels = if self.integration_mode == IntegrationMode::GazeAsInput { 2 } else { 1 };
        if self.input_channels != expected_channels {
            return Err(ModelError::Config(format!(
                "integration mode {:?} requires {expected_channels} input channel(s), got {}",
                self.integration_mode, self.input_channels
            )));
        }
        self.conv_chain()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GazeLossMode {
    L1,
    Adversarial,
}

/// Toy encoder-decoder gaze predictor. Encoder convs downsample; decoder
/// convs run at the coarse resolution with the last one producing a single
/// logit channel that is bilinearly upsampled to the input resolution and
/// passed through a frame-wide softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazePredictorConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub encoder: Vec<ConvSpec>,
    pub decoder: Vec<ConvSpec>,
    pub loss_mode: GazeLossMode,
    pub l1_weight: f64,
}

impl Default for GazePredictorConfig {
    fn default() -> Self {
        GazePredictorConfig {
            input_width: 200,
            input_height: 66,
            // Kernels are sized so a decoder unit's receptive field (~49 px)
            // spans both lane boundaries at typical fixation depth; narrower
            // stacks cannot tell the lane center from any other road pixel.
            encoder: vec![
                ConvSpec { out_channels: 8, kernel: 5, stride: 2 },
                ConvSpec { out_channels: 16, kernel: 3, stride: 2 },
            ],
            decoder: vec![
                ConvSpec { out_channels: 12, kernel: 5, stride: 1 },
                ConvSpec { out_channels: 8, kernel: 5, stride: 1 },
                ConvSpec { out_channels: 1, kernel: 3, stride: 1 },
            ],
            loss_mode: GazeLossMode::L1,
            l1_weight: 100.0,
        }
    }
}

impl GazePredictorConfig {
    pub fn conv_chain(&self) -> Result<Vec<(usize, usize, usize)>, ModelError> {
        let mut chain = Vec::new();
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, spec) in self.encoder.iter().chain(self.decoder.iter()).enumerate() {
            if spec.kernel > h || spec.kernel > w || spec.stride == 0 {
                return Err(ModelError::Config(format!(
                    "gaze predictor layer {i} cannot apply a {k}x{k} stride-{s} kernel to {h}x{w}",
                    k = spec.kernel,
                    s = spec.stride
                )));
            }
            h = (h - spec.kernel) / spec.stride + 1;
            w = (w - spec.kernel) / spec.stride + 1;
            chain.push((spec.out_channels, h, w));
        }
        match self.decoder.last() {
            Some(last) if last.out_channels == 1 => Ok(chain),
            _ => Err(ModelError::Config(
                "gaze predictor decoder must end in a single-channel layer".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pilotnet_conv_chain_matches_published_arithmetic() {
        let cfg = ModelConfig::default();
        let chain = cfg.conv_chain().unwrap();
        let spatial: Vec<(usize, usize)> = chain.iter().map(|(_, h, w)| (*h, *w)).collect();
        assert_eq!(
            spatial,
            vec![(31, 98), (14, 47), (5, 22), (3, 20), (1, 18)]
        );
    }

    #[test]
    fn invalid_chain_names_first_failing_layer() {
        let mut cfg = ModelConfig::default();
        cfg.input_height = 8; // dies at conv layer 1 (8 -> 2 -> too small for 5x5)
        let err = cfg.conv_chain().unwrap_err().to_string();
        assert!(err.contains("conv layer 1"), "{err}");
    }

    #[test]
    fn gaze_as_input_needs_two_channels() {
        let mut cfg = ModelConfig::pilotnet(IntegrationMode::GazeAsInput);
        assert_eq!(cfg.input_channels, 2);
        cfg.validate().unwrap();
        cfg.input_channels = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn predictor_chain_is_valid_by_default() {
        GazePredictorConfig::default().conv_chain().unwrap();
    }
}
