use crate::autodiff::fourier_width;
use crate::error::{Error, Result};

/// Architecture and refinement hyperparameters. Every width downstream of
/// these (featurization size, per-camera refinement vector) is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub feature_dim: usize,
    pub max_views: usize,
    pub freeze_encoder: bool,

    pub init_heads: usize,
    pub init_ff_hidden: usize,
    pub init_mlp_hidden: usize,
    pub init_mlp_layers: usize,

    pub refine_heads: usize,
    pub refine_attn_dim: usize,
    pub refine_ff_hidden: usize,
    /// Per-point width after the reduction layer.
    pub refine_dim: usize,
    pub lstm_hidden: usize,
    pub pose_mlp_hidden: usize,
    pub num_points: usize,
    pub iterations: usize,

    pub fourier_bands: usize,
    pub fourier_include_input: bool,

    /// Draw fresh probe points after every pose update.
    pub resample_points: bool,
    /// Recurrent LSTM update; when off, a stateless GELU layer takes its place.
    pub use_lstm: bool,
    /// Fourier-encode point and pose inputs; when off they enter raw.
    pub positional_encoding: bool,
    /// Sample raw image colours instead of encoder features.
    pub rgb_features: bool,
    /// Stop gradients at the projected sample coordinates.
    pub detach_sample_coords: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            feature_dim: 64,
            max_views: 9,
            freeze_encoder: false,
            init_heads: 8,
            init_ff_hidden: 256,
            init_mlp_hidden: 512,
            init_mlp_layers: 3,
            refine_heads: 2,
            refine_attn_dim: 128,
            refine_ff_hidden: 256,
            refine_dim: 32,
            lstm_hidden: 512,
            pose_mlp_hidden: 512,
            num_points: 128,
            iterations: 10,
            fourier_bands: 3,
            fourier_include_input: true,
            resample_points: true,
            use_lstm: true,
            positional_encoding: true,
            rgb_features: false,
            detach_sample_coords: false,
        }
    }
}

impl ModelConfig {
    /// Narrow heads for CPU training runs.
    pub fn smoke() -> Self {
        Self {
            init_ff_hidden: 128,
            init_mlp_hidden: 128,
            refine_attn_dim: 64,
            refine_ff_hidden: 128,
            lstm_hidden: 128,
            pose_mlp_hidden: 128,
            ..Self::default()
        }
    }

    /// Widths of the original large-scale setup; not trainable on a CPU.
    pub fn paper_scale() -> Self {
        Self {
            image_size: 224,
            feature_dim: 768,
            init_ff_hidden: 2048,
            refine_attn_dim: 2048,
            refine_ff_hidden: 2048,
            num_points: 1000,
            ..Self::default()
        }
    }

    /// Minimal network for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            feature_dim: 8,
            max_views: 4,
            init_heads: 2,
            init_ff_hidden: 8,
            init_mlp_hidden: 8,
            init_mlp_layers: 3,
            refine_heads: 2,
            refine_attn_dim: 8,
            refine_ff_hidden: 8,
            refine_dim: 32,
            lstm_hidden: 6,
            pose_mlp_hidden: 6,
            num_points: 16,
            iterations: 2,
            fourier_bands: 1,
            ..Self::default()
        }
    }

    /// Channels of the map the refinement stage samples from.
    pub fn sampled_channels(&self) -> usize {
        if self.rgb_features {
            3
        } else {
            self.feature_dim
        }
    }

    /// Sampling stride of that map in pixels.
    pub fn sampled_stride(&self) -> usize {
        if self.rgb_features {
            1
        } else {
            self.patch_size
        }
    }

    /// Encoded width of a `d`-vector.
    pub fn encoded_width(&self, d: usize) -> usize {
        if self.positional_encoding {
            d * fourier_width(self.fourier_bands, self.fourier_include_input)
        } else {
            d
        }
    }

    /// Per camera and point: sampled features, encoded point, encoded quaternion, encoded translation.
    pub fn featurization_dim(&self) -> usize {
        self.sampled_channels() + self.encoded_width(3) + self.encoded_width(4) + self.encoded_width(3)
    }

    /// Per-camera refinement vector: `P * refine_dim`.
    pub fn refine_vector_dim(&self) -> usize {
        self.num_points * self.refine_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("feature_dim", self.feature_dim),
            ("max_views", self.max_views),
            ("init_heads", self.init_heads),
            ("init_ff_hidden", self.init_ff_hidden),
            ("init_mlp_hidden", self.init_mlp_hidden),
            ("refine_heads", self.refine_heads),
            ("refine_attn_dim", self.refine_attn_dim),
            ("refine_ff_hidden", self.refine_ff_hidden),
            ("refine_dim", self.refine_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("pose_mlp_hidden", self.pose_mlp_hidden),
            ("num_points", self.num_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} is not a multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if !self.feature_dim.is_multiple_of(self.init_heads) {
            return bad(format!(
                "feature_dim {} is not divisible by init_heads {}",
                self.feature_dim, self.init_heads
            ));
        }
        if !self.refine_attn_dim.is_multiple_of(self.refine_heads) {
            return bad(format!(
                "refine_attn_dim {} is not divisible by refine_heads {}",
                self.refine_attn_dim, self.refine_heads
            ));
        }
        Ok(())
    }
}
