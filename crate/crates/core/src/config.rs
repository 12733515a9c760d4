//! Pipeline settings shared by base completion and the coarse-to-fine loop.

use serde::{Deserialize, Serialize};

use crate::aggregate::{make_layout, WeightKind, WindowLayout};
use crate::align::FlowParams;
use crate::backends::{BackendDescriptor, Flavor, MaskMode};
use crate::error::{Error, Result};

/// How a coarse level is brought to the next finer frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    /// Linear in time between the bracketing coarse frames.
    #[default]
    Blend,
    /// Nearest coarse frame.
    Repeat,
}

impl std::str::FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blend" => Ok(UpsampleMode::Blend),
            "repeat" => Ok(UpsampleMode::Repeat),
            other => Err(Error::Config(format!("unknown upsample mode '{other}'"))),
        }
    }
}

/// Fully resolved pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Horizontal stride between spatial windows, in working-canvas pixels.
    pub spatial_stride: usize,
    /// Frames shared by consecutive temporal windows.
    pub temporal_overlap: usize,
    pub aggregate_weights: WeightKind,
    pub mask_mode: MaskMode,
    pub upsample: UpsampleMode,
    /// Warp and re-tone the input onto the upsampled estimate before merging.
    pub align: bool,
    pub flow: FlowParams,
    /// Unmasking rounds per token sampling pass.
    pub token_iterations: usize,
    /// When false, levels below the base are upsampled and merged only.
    pub resynthesize: bool,
}

impl PipelineConfig {
    /// Defaults for a backend flavor: stride 32, overlap 40 and no alignment
    /// for gaussian backends; stride 80, overlap 5 and alignment for token
    /// backends.
    pub fn defaults_for(flavor: Flavor) -> Self {
        let (spatial_stride, temporal_overlap, align) = match flavor {
            Flavor::Gaussian => (32, 40, false),
            Flavor::Token => (80, 5, true),
        };
        PipelineConfig {
            spatial_stride,
            temporal_overlap,
            aggregate_weights: WeightKind::Tent,
            mask_mode: MaskMode::Standard,
            upsample: UpsampleMode::Blend,
            align,
            flow: FlowParams::default(),
            token_iterations: 12,
            resynthesize: true,
        }
    }

    pub fn validate(&self, descriptor: &BackendDescriptor) -> Result<()> {
        if self.spatial_stride == 0 || self.spatial_stride > descriptor.native_width {
            return Err(Error::Config(format!(
                "spatial stride {} must be in 1..={}",
                self.spatial_stride, descriptor.native_width
            )));
        }
        if self.temporal_overlap >= descriptor.context_frames {
            return Err(Error::Config(format!(
                "temporal overlap {} must be below the {}-frame context",
                self.temporal_overlap, descriptor.context_frames
            )));
        }
        if descriptor.flavor == Flavor::Token {
            let p = descriptor.patch_size;
            if self.spatial_stride % p != 0 {
                return Err(Error::Config(format!(
                    "spatial stride {} is not a multiple of the {p}-pixel token patch",
                    self.spatial_stride
                )));
            }
            let g = descriptor.token_frames;
            if descriptor.context_frames % g != 0 || self.temporal_overlap % g != 0 {
                return Err(Error::Config(format!(
                    "context and overlap must be multiples of the {g}-frame token group"
                )));
            }
        }
        if self.token_iterations == 0 {
            return Err(Error::Config("token_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// The reduced canvas a backend works on, plus its window layout.
#[derive(Debug, Clone)]
pub struct WorkingCanvas {
    pub height: usize,
    pub width: usize,
    pub layout: WindowLayout,
}

/// Scales a `height x width` canvas to the backend's native height, keeping
/// the aspect ratio. The width is at least one window and, for token
/// backends, a whole number of patches.
pub fn working_canvas(height: usize, width: usize, descriptor: &BackendDescriptor, config: &PipelineConfig) -> Result<WorkingCanvas> {
    let nh = descriptor.native_height;
    let nw = descriptor.native_width;
    let mut w = ((width as f64 * nh as f64 / height as f64).round() as usize).max(nw);
    if descriptor.flavor == Flavor::Token {
        w = w.div_ceil(descriptor.patch_size) * descriptor.patch_size;
    }
    let layout = make_layout(w, nw, config.spatial_stride, config.aggregate_weights)?;
    Ok(WorkingCanvas {
        height: nh,
        width: w,
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flavor_defaults() {
        let g = PipelineConfig::defaults_for(Flavor::Gaussian);
        assert_eq!((g.spatial_stride, g.temporal_overlap, g.align), (32, 40, false));
        g.validate(&BackendDescriptor::gaussian_default()).unwrap();
        let t = PipelineConfig::defaults_for(Flavor::Token);
        assert_eq!((t.spatial_stride, t.temporal_overlap, t.align), (80, 5, true));
        t.validate(&BackendDescriptor::token_default()).unwrap();
    }

    #[test]
    fn bad_settings() {
        let d = BackendDescriptor::token_default();
        let mut c = PipelineConfig::defaults_for(Flavor::Token);
        c.spatial_stride = 84;
        assert!(matches!(c.validate(&d), Err(Error::Config(_))));
        c.spatial_stride = 80;
        c.temporal_overlap = 11;
        assert!(matches!(c.validate(&d), Err(Error::Config(_))));
        assert!("sideways".parse::<UpsampleMode>().is_err());
    }

    #[test]
    fn working_canvas_sizes() {
        let d = BackendDescriptor::gaussian_default();
        let c = PipelineConfig::defaults_for(Flavor::Gaussian);
        let wc = working_canvas(128, 512, &d, &c).unwrap();
        assert_eq!((wc.height, wc.width, wc.layout.len()), (128, 512, 13));
        let wc = working_canvas(256, 200, &d, &c).unwrap();
        assert_eq!(wc.width, 128);
        let d = BackendDescriptor::token_default();
        let c = PipelineConfig::defaults_for(Flavor::Token);
        let wc = working_canvas(128, 500, &d, &c).unwrap();
        assert_eq!((wc.height, wc.width), (96, 376));
        assert!(wc.layout.to_token_lattice(8).is_ok());
    }
}
