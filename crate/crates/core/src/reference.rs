//! Published cost figures for the three LiteSeg variants.

use crate::backbones::Backbone;

/// Input extents the GFLOPs figures were measured at.
pub const REFERENCE_INPUT: (usize, usize) = (512, 1024);

/// GFLOPs at [`REFERENCE_INPUT`] with standard or depthwise-separable head convolutions.
pub fn reference_gflops(backbone: Backbone, depthwise: bool) -> f64 {
    match (backbone, depthwise) {
        (Backbone::Darknet19, false) => 123.26,
        (Backbone::MobileNetV2, false) => 18.86,
        (Backbone::ShuffleNet, false) => 9.36,
        (Backbone::Darknet19, true) => 103.09,
        (Backbone::MobileNetV2, true) => 4.9,
        (Backbone::ShuffleNet, true) => 2.75,
    }
}

/// Millions of parameters of the released (depthwise) models.
pub fn reference_mparams(backbone: Backbone) -> f64 {
    match backbone {
        Backbone::Darknet19 => 20.55,
        Backbone::MobileNetV2 => 4.38,
        Backbone::ShuffleNet => 3.51,
    }
}

/// Frames per second at 360x640 and 1024x2048 on a desktop GPU. Informational only.
pub fn reference_fps(backbone: Backbone) -> (f64, f64) {
    match backbone {
        Backbone::Darknet19 => (98.0, 15.0),
        Backbone::MobileNetV2 => (161.0, 22.0),
        Backbone::ShuffleNet => (133.0, 31.0),
    }
}

/// Signed deviation of `computed` from `reference`, in percent.
pub fn percent_deviation(computed: f64, reference: f64) -> f64 {
    (computed - reference) / reference * 100.0
}
