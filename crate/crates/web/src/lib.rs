//! wasm-bindgen exports for the static demo page in `www/`.
//!
//! The plain functions (`costs`, `footprint`, `Trainer`) hold the logic and are
//! usable natively; the `#[wasm_bindgen]` items wrap them for JavaScript.

use liteseg::backbones::Backbone;
use liteseg::graph::{count_flops, FlopConvention, WeightStore};
use liteseg::image::Palette;
use liteseg::ops::{conv2d, ConvParams, ConvWeights};
use liteseg::reference::{reference_gflops, reference_mparams};
use liteseg::train::{predict, synthetic_dataset, train_step, Dataset, OptimizerState, ToyConfig, TOY_CLASSES};
use liteseg::{build_liteseg, LiteSeg, LiteSegConfig, Shape4, Tensor};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleCost {
    pub module: &'static str,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Costs {
    pub backbone: String,
    pub depthwise: bool,
    pub height: usize,
    pub width: usize,
    pub mparams: f64,
    pub gflops_mac: f64,
    pub gflops_mac2: f64,
    pub published_gflops: f64,
    pub published_mparams: f64,
    pub modules: Vec<ModuleCost>,
}

fn module_of(id: &str) -> Option<&'static str> {
    if id == "input" {
        None
    } else if id.starts_with("daspp.") {
        Some("daspp")
    } else if id.starts_with("dec.") || id == "logits" {
        Some("decoder")
    } else {
        Some("backbone")
    }
}

/// Parameters and FLOPs of the full-width model at `height x width`.
pub fn costs(backbone: Backbone, depthwise: bool, height: usize, width: usize) -> liteseg::Result<Costs> {
    let m = build_liteseg(&LiteSegConfig::for_backbone(backbone).with_depthwise(depthwise))?;
    let input = Shape4::new(1, 3, height, width)?;
    let mac = count_flops(&m.graph, input, FlopConvention::Mac)?;
    let mac2 = count_flops(&m.graph, input, FlopConvention::Mac2)?;
    let mut modules: Vec<ModuleCost> = ["backbone", "daspp", "decoder"]
        .into_iter()
        .map(|module| ModuleCost { module, params: 0, macs: 0 })
        .collect();
    for e in &mac.entries {
        if let Some(name) = module_of(&e.id) {
            let slot = modules.iter_mut().find(|m| m.module == name).expect("known module");
            slot.params += e.params;
            slot.macs += e.macs;
        }
    }
    Ok(Costs {
        backbone: backbone.to_string(),
        depthwise,
        height,
        width,
        mparams: mac.mparams(),
        gflops_mac: mac.gflops(),
        gflops_mac2: mac2.gflops(),
        published_gflops: reference_gflops(backbone, depthwise),
        published_mparams: reference_mparams(backbone),
        modules,
    })
}

/// Number of paths from each input pixel to the centre output of a 3x3 conv at
/// `rate`, optionally followed by a plain 3x3 refinement conv. Row-major `size x size`.
pub fn footprint(rate: usize, refine: bool, size: usize) -> liteseg::Result<Vec<f32>> {
    if rate == 0 || size == 0 || size.is_multiple_of(2) {
        return Err(liteseg::Error::Usage(format!("need rate >= 1 and an odd size (got {rate}, {size})")));
    }
    let s = Shape4::new(1, 1, size, size)?;
    let c = size / 2;
    let delta = Tensor::from_fn(s, |_, _, y, x| if (y, x) == (c, c) { 1.0 } else { 0.0 })?;
    let ones = ConvWeights::new(Tensor::from_vec(Shape4::new(1, 1, 3, 3)?, vec![1.0; 9])?, None)?;
    let mut y = conv2d(&delta, &ones, &ConvParams::same(3, rate))?;
    if refine {
        y = conv2d(&y, &ones, &ConvParams::same(3, 1))?;
    }
    Ok(y.data().to_vec())
}

fn rgba_from_rgb(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// Epoch-at-a-time toy training, so a page can interleave rendering.
pub struct Trainer {
    model: LiteSeg,
    store: WeightStore,
    opt: OptimizerState,
    data: Dataset,
    palette: Palette,
    epoch: usize,
    epochs: usize,
    loss: f64,
    accuracy: f64,
}

impl Trainer {
    pub fn new(seed: u64, images: usize, size: usize, lr: f64, epochs: usize) -> liteseg::Result<Self> {
        if epochs == 0 {
            return Err(liteseg::Error::Usage("epochs must be positive".into()));
        }
        let model = build_liteseg(&ToyConfig::toy_model())?;
        let store = WeightStore::init(&model.graph, seed);
        Ok(Trainer {
            store,
            opt: OptimizerState::new(lr, epochs)?,
            data: synthetic_dataset(images, size, seed)?,
            palette: Palette::default_for(TOY_CLASSES),
            model,
            epoch: 0,
            epochs,
            loss: f64::NAN,
            accuracy: 0.0,
        })
    }

    /// Run up to `n` more epochs; returns how many ran.
    pub fn step(&mut self, n: usize) -> liteseg::Result<usize> {
        let todo = n.min(self.epochs - self.epoch);
        for _ in 0..todo {
            let lr = self.opt.lr_at(self.epoch)?;
            let (loss, acc) = train_step(&self.model.graph, &mut self.store, &mut self.opt, &self.data, lr)?;
            self.loss = loss;
            self.accuracy = acc;
            self.epoch += 1;
        }
        Ok(todo)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Training-mode pixel accuracy of the last epoch.
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn images(&self) -> usize {
        self.data.len()
    }

    pub fn size(&self) -> usize {
        self.data.labels.w
    }

    fn check(&self, index: usize) -> liteseg::Result<()> {
        if index >= self.images() {
            return Err(liteseg::Error::Usage(format!("image {index} of {}", self.images())));
        }
        Ok(())
    }

    pub fn image_rgba(&self, index: usize) -> liteseg::Result<Vec<u8>> {
        self.check(index)?;
        let t = &self.data.images;
        let size = self.size();
        let mut out = Vec::with_capacity(size * size * 4);
        for y in 0..size {
            for x in 0..size {
                for c in 0..3 {
                    out.push(((t.at(index, c, y, x) + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8);
                }
                out.push(255);
            }
        }
        Ok(out)
    }

    pub fn truth_rgba(&self, index: usize) -> liteseg::Result<Vec<u8>> {
        self.check(index)?;
        let plane = self.data.labels.plane();
        let labels = liteseg::LabelMap::new(
            1,
            self.size(),
            self.size(),
            self.data.labels.data[index * plane..(index + 1) * plane].to_vec(),
        )?;
        Ok(rgba_from_rgb(&self.palette.colorize(&labels)?.data))
    }

    /// Inference-mode prediction for one training image.
    pub fn prediction_rgba(&self, index: usize) -> liteseg::Result<Vec<u8>> {
        self.check(index)?;
        let size = self.size();
        let t = &self.data.images;
        let image = Tensor::from_fn(Shape4::new(1, 3, size, size)?, |_, c, y, x| t.at(index, c, y, x))?;
        let labels = predict(&self.model.graph, &self.store, &image)?;
        Ok(rgba_from_rgb(&self.palette.colorize(&labels)?.data))
    }
}

fn js(e: liteseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = costSummary)]
pub fn cost_summary(backbone: &str, depthwise: bool, height: usize, width: usize) -> Result<String, JsError> {
    let b: Backbone = backbone.parse().map_err(js)?;
    let c = costs(b, depthwise, height, width).map_err(js)?;
    serde_json::to_string(&c).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = atrousFootprint)]
pub fn atrous_footprint(rate: usize, refine: bool, size: usize) -> Result<Vec<f32>, JsError> {
    footprint(rate, refine, size).map_err(js)
}

#[wasm_bindgen(js_name = ToyTrainer)]
pub struct ToyTrainer(Trainer);

#[wasm_bindgen(js_class = ToyTrainer)]
impl ToyTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, images: usize, size: usize, lr: f64, epochs: usize) -> Result<ToyTrainer, JsError> {
        Trainer::new(seed.into(), images, size, lr, epochs).map(ToyTrainer).map_err(js)
    }

    pub fn step(&mut self, n: usize) -> Result<usize, JsError> {
        self.0.step(n).map_err(js)
    }

    pub fn epoch(&self) -> usize {
        self.0.epoch()
    }

    pub fn epochs(&self) -> usize {
        self.0.epochs()
    }

    pub fn loss(&self) -> f64 {
        self.0.loss()
    }

    pub fn accuracy(&self) -> f64 {
        self.0.accuracy()
    }

    pub fn images(&self) -> usize {
        self.0.images()
    }

    pub fn size(&self) -> usize {
        self.0.size()
    }

    #[wasm_bindgen(js_name = imageRgba)]
    pub fn image_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        self.0.image_rgba(index).map_err(js)
    }

    #[wasm_bindgen(js_name = truthRgba)]
    pub fn truth_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        self.0.truth_rgba(index).map_err(js)
    }

    #[wasm_bindgen(js_name = predictionRgba)]
    pub fn prediction_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        self.0.prediction_rgba(index).map_err(js)
    }
}
