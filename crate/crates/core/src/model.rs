//! Full model assembly: backbone, DASPP encoder head and decoder.

use std::fmt::Write as _;

use crate::backbones::{append_backbone, Backbone, BackboneTaps};
use crate::error::{Error, Result};
use crate::graph::{CostReport, GraphBuilder, LayerKind, LayerSpec, ModelGraph, TAP_ENCODER, TAP_LOGITS, TAP_LOW_LEVEL};
use crate::ops::{Activation, ConvParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LiteSegConfig {
    pub backbone: Backbone,
    pub output_stride: usize,
    pub num_classes: usize,
    pub aspp_filters: usize,
    pub aspp_rates: [usize; 3],
    pub depthwise: bool,
    pub decoder_filters: usize,
    /// 1x1 reduction of the low-level features, applied only when they are wider.
    pub lowlevel_reduce: Option<usize>,
    /// Concatenate the DASPP input with its branch outputs.
    pub short_residual: bool,
    /// Optional 1x1 projection of the DASPP input before that concatenation.
    pub residual_reduce: Option<usize>,
    /// Backbone channel multiplier; 1.0 is the published network.
    pub width_multiplier: f64,
}

impl Default for LiteSegConfig {
    fn default() -> Self {
        Self::for_backbone(Backbone::MobileNetV2)
    }
}

impl LiteSegConfig {
    pub fn for_backbone(backbone: Backbone) -> Self {
        LiteSegConfig {
            backbone,
            output_stride: backbone.default_stride(),
            num_classes: 19,
            aspp_filters: 96,
            aspp_rates: [3, 6, 9],
            depthwise: false,
            decoder_filters: 96,
            lowlevel_reduce: Some(48),
            short_residual: true,
            residual_reduce: None,
            width_multiplier: 1.0,
        }
    }

    pub fn with_depthwise(mut self, on: bool) -> Self {
        self.depthwise = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.output_stride != 16 && self.output_stride != 32 {
            return Err(Error::Unsupported(format!("output stride {} (expected 16 or 32)", self.output_stride)));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if self.aspp_filters == 0 || self.decoder_filters == 0 {
            return bad("filter counts must be positive".into());
        }
        let r = self.aspp_rates;
        if r[0] == 0 || r[0] > r[1] || r[1] > r[2] {
            return bad(format!("aspp_rates {r:?} must be positive and ascending"));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return bad(format!("width_multiplier {} must be positive", self.width_multiplier));
        }
        if self.residual_reduce == Some(0) {
            return bad("residual_reduce must be positive or absent".into());
        }
        Ok(())
    }

    /// Parse `key=value` lines. `#` starts a comment. Missing keys keep defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = LiteSegConfig::default();
        let mut stride_given = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |detail: String| Error::Parse { line: line_no, detail };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| perr(format!("key `{key}`: invalid value `{value}` ({what})"));
            let count = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
            let flag = || match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(bad("expected true or false")),
            };
            let optional = || count().map(|v| (v > 0).then_some(v));
            match key {
                "backbone" => cfg.backbone = value.parse().map_err(|_| bad("expected darknet19, mobilenetv2 or shufflenet"))?,
                "output_stride" => {
                    cfg.output_stride = match count()? {
                        v @ (16 | 32) => v,
                        _ => return Err(bad("expected 16 or 32")),
                    };
                    stride_given = true;
                }
                "num_classes" => cfg.num_classes = count()?,
                "aspp_filters" => cfg.aspp_filters = count()?,
                "aspp_rates" => {
                    let rates = value
                        .split(',')
                        .map(|r| r.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("expected three comma-separated integers"))?;
                    cfg.aspp_rates = rates.try_into().map_err(|_| bad("expected exactly three rates"))?;
                }
                "depthwise" => cfg.depthwise = flag()?,
                "decoder_filters" => cfg.decoder_filters = count()?,
                "lowlevel_reduce" => cfg.lowlevel_reduce = optional()?,
                "short_residual" => cfg.short_residual = flag()?,
                "residual_reduce" => cfg.residual_reduce = optional()?,
                "width_multiplier" => {
                    cfg.width_multiplier = value
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite() && *v > 0.0)
                        .ok_or_else(|| bad("expected a positive number"))?
                }
                _ => return Err(perr(format!("unknown key `{key}`"))),
            }
        }
        if !stride_given {
            cfg.output_stride = cfg.backbone.default_stride();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.unwrap_or(0);
        let r = self.aspp_rates;
        format!(
            "backbone={}\noutput_stride={}\nnum_classes={}\naspp_filters={}\naspp_rates={},{},{}\ndepthwise={}\n\
             decoder_filters={}\nlowlevel_reduce={}\nshort_residual={}\nresidual_reduce={}\nwidth_multiplier={}\n",
            self.backbone,
            self.output_stride,
            self.num_classes,
            self.aspp_filters,
            r[0],
            r[1],
            r[2],
            self.depthwise,
            self.decoder_filters,
            opt(self.lowlevel_reduce),
            self.short_residual,
            opt(self.residual_reduce),
            self.width_multiplier
        )
    }
}

const RELU: Option<Activation> = Some(Activation::Relu);

/// 3x3 conv + BN + ReLU, depthwise-separable when the flag is set.
fn conv3(b: &mut GraphBuilder, id: &str, input: &str, out_c: usize, dilation: usize, depthwise: bool) -> Result<String> {
    let p = ConvParams::same(3, dilation);
    if depthwise {
        b.dwsep_bn(id, input, out_c, 3, p, RELU)
    } else {
        b.conv_bn(id, input, out_c, 3, p, RELU)
    }
}

/// Append the DASPP head after layer `input`; returns the fused output id.
pub fn build_daspp(b: &mut GraphBuilder, input: &str, cfg: &LiteSegConfig) -> Result<String> {
    let f = cfg.aspp_filters;
    let mut branches = vec![b.conv_bn("daspp.b0", input, f, 1, ConvParams::default(), RELU)?];
    for (i, &rate) in cfg.aspp_rates.iter().enumerate() {
        let a = conv3(b, &format!("daspp.atrous{}", i + 1), input, f, rate, cfg.depthwise)?;
        branches.push(conv3(b, &format!("daspp.refine{}", i + 1), &a, f, 1, cfg.depthwise)?);
    }
    if cfg.short_residual {
        let skip = match cfg.residual_reduce {
            Some(r) => b.conv_bn("daspp.skip", input, r, 1, ConvParams::default(), RELU)?,
            None => input.to_string(),
        };
        branches.push(skip);
    }
    let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
    let cat = b.add(LayerSpec::new("daspp.cat", LayerKind::Concat, &refs))?;
    b.conv_bn("daspp.fuse", &cat, f, 1, ConvParams::default(), RELU)
}

/// Append the decoder. `image` supplies the final output extents. Returns the logits id.
pub fn build_decoder(b: &mut GraphBuilder, encoder: &str, low_level: &str, image: &str, cfg: &LiteSegConfig) -> Result<String> {
    let up = b.add(LayerSpec::new("dec.up", LayerKind::Upsample, &[encoder, low_level]))?;
    let low_c = b.channels(low_level)?;
    let low = match cfg.lowlevel_reduce {
        Some(r) if low_c > r => b.conv_bn("dec.reduce", low_level, r, 1, ConvParams::default(), RELU)?,
        _ => low_level.to_string(),
    };
    let mut x = b.add(LayerSpec::new("dec.cat", LayerKind::Concat, &[&up, &low]))?;
    for i in 1..=3 {
        x = conv3(b, &format!("dec.conv{i}"), &x, cfg.decoder_filters, 1, cfg.depthwise)?;
    }
    let cls = b.conv("dec.classifier", &x, cfg.num_classes, 1, ConvParams::default(), true)?;
    b.add(LayerSpec::new("logits", LayerKind::Upsample, &[&cls, image]))
}

#[derive(Debug, Clone)]
pub struct LiteSeg {
    pub config: LiteSegConfig,
    pub graph: ModelGraph,
    pub backbone: BackboneTaps,
    /// Non-fatal diagnostics about the configuration.
    pub warnings: Vec<String>,
}

pub fn build_liteseg(cfg: &LiteSegConfig) -> Result<LiteSeg> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if cfg.backbone == Backbone::Darknet19 && cfg.output_stride == 32 {
        warnings.push("darknet19 is normally run at output stride 16".to_string());
    }
    if cfg.backbone != Backbone::Darknet19 && cfg.output_stride == 16 {
        warnings.push(format!("{} is normally run at output stride 32", cfg.backbone));
    }
    let mut b = GraphBuilder::new();
    b.input("input", 3)?;
    let taps = append_backbone(&mut b, cfg.backbone, "input", cfg.output_stride, cfg.width_multiplier)?;
    let enc = build_daspp(&mut b, &taps.last.id, cfg)?;
    let logits = build_decoder(&mut b, &enc, &taps.low_level.id, "input", cfg)?;
    b.tap(TAP_LOW_LEVEL, &taps.low_level.id)?;
    b.tap(TAP_ENCODER, &enc)?;
    b.tap(TAP_LOGITS, &logits)?;
    b.tap("backbone_out", &taps.last.id)?;
    Ok(LiteSeg {
        config: cfg.clone(),
        graph: b.build()?,
        backbone: taps,
        warnings,
    })
}

/// Aligned per-layer table: id, kind, output shape, params, FLOPs, then totals.
pub fn summary_table(report: &CostReport) -> String {
    let idw = report.entries.iter().map(|e| e.id.len()).max().unwrap_or(2).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<idw$}  {:<10}  {:>18}  {:>10}  {:>14}", "layer", "kind", "output", "params", "flops");
    for e in &report.entries {
        let shape = e.output.map_or_else(|| "-".to_string(), |o| o.to_string());
        let _ = writeln!(s, "{:<idw$}  {:<10}  {:>18}  {:>10}  {:>14}", e.id, e.kind, shape, e.params, e.flops);
    }
    let _ = writeln!(
        s,
        "total: params {} ({:.3} M, {} stored)  flops {} ({:.3} G, convention {})",
        report.total_params,
        report.mparams(),
        report.total_stored_params,
        report.total_flops,
        report.gflops(),
        report.convention
    );
    s
}
