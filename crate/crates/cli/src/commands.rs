use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use liteseg::graph::{count_flops, forward, FlopConvention, WeightStore};
use liteseg::image::{Image, Palette};
use liteseg::metrics::{benchmark_fps, pad_to_multiple, BenchConfig, BenchReport, BENCH_ALIGN};
use liteseg::model::summary_table;
use liteseg::ops::argmax_channel;
use liteseg::reference::{percent_deviation, reference_gflops, REFERENCE_INPUT};
use liteseg::train::{
    gradcheck as run_gradcheck, history_csv, train_toy as run_toy, GradcheckConfig, MultiScaleSpec, ToyConfig, TOY_CLASSES,
};
use liteseg::{build_liteseg, LiteSeg, LiteSegConfig, Shape4};

use crate::extents::Extents;
use crate::{Failure, InferArgs, TrainArgs};

pub struct Context {
    /// Explicit `--config`; commands pick their own default otherwise.
    config: Option<LiteSegConfig>,
    weights: Option<PathBuf>,
    seed: u64,
}

impl Context {
    pub fn load(config: Option<&Path>, weights: Option<PathBuf>, seed: u64) -> Result<Self, Failure> {
        let config = match config {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::new("io", format!("cannot read config {}: {e}", p.display())))?;
                let cfg = LiteSegConfig::parse(&text).map_err(|e| {
                    let f = Failure::from(e);
                    Failure::new(f.kind, format!("{}: {}", p.display(), f.detail))
                })?;
                Some(cfg)
            }
        };
        Ok(Context { config, weights, seed })
    }

    fn model_config(&self) -> LiteSegConfig {
        self.config.clone().unwrap_or_default()
    }

    fn toy_config(&self) -> LiteSegConfig {
        self.config.clone().unwrap_or_else(ToyConfig::toy_model)
    }

    fn build(&self, cfg: &LiteSegConfig) -> Result<LiteSeg, Failure> {
        let m = build_liteseg(cfg)?;
        for w in &m.warnings {
            eprintln!("warning: {w}");
        }
        Ok(m)
    }

    fn weights_for(&self, m: &LiteSeg) -> Result<WeightStore, Failure> {
        match &self.weights {
            None => Ok(WeightStore::init(&m.graph, self.seed)),
            Some(p) => WeightStore::load(p, &m.graph).map_err(|e| match e {
                liteseg::Error::Io(io) => Failure::new("load", format!("cannot read weights {}: {io}", p.display())),
                other => other.into(),
            }),
        }
    }
}

fn input_shape(e: Extents) -> Result<Shape4, Failure> {
    Ok(Shape4::new(1, 3, e.h, e.w)?)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new("io", format!("cannot write {}: {e}", path.display())))
}

pub fn summarize(ctx: &Context, input: Extents, convention: FlopConvention) -> Result<(), Failure> {
    input.require_aligned("input")?;
    let cfg = ctx.model_config();
    let m = ctx.build(&cfg)?;
    let report = count_flops(&m.graph, input_shape(input)?, convention)?;
    println!(
        "model: backbone {} os {} classes {} depthwise {} input {input}",
        cfg.backbone, cfg.output_stride, cfg.num_classes, cfg.depthwise
    );
    print!("{}", summary_table(&report));
    Ok(())
}

pub fn flops(
    ctx: &Context,
    input: Extents,
    convention: FlopConvention,
    csv: bool,
    compare: bool,
) -> Result<(), Failure> {
    input.require_aligned("input")?;
    let cfg = ctx.model_config();
    let m = ctx.build(&cfg)?;
    let report = count_flops(&m.graph, input_shape(input)?, convention)?;
    let mut out = String::new();
    if csv {
        out.push_str("layer,kind,macs,other_ops,flops,gflops\n");
        for e in &report.entries {
            let _ = writeln!(out, "{},{},{},{},{},{:.6}", e.id, e.kind, e.macs, e.other_ops, e.flops, e.flops as f64 / 1e9);
        }
        let _ = writeln!(out, "total,,{},,{},{:.6}", report.total_macs, report.total_flops, report.gflops());
    } else {
        let idw = report.entries.iter().map(|e| e.id.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:<idw$}  {:<10}  {:>14}  {:>12}", "layer", "kind", "flops", "gflops");
        for e in &report.entries {
            let _ = writeln!(out, "{:<idw$}  {:<10}  {:>14}  {:>12.6}", e.id, e.kind, e.flops, e.flops as f64 / 1e9);
        }
        let _ = writeln!(
            out,
            "total: {:.3} GFLOPs ({} convention, input {input}, {} MACs)",
            report.gflops(),
            convention,
            report.total_macs
        );
    }
    if compare {
        let (h, w) = REFERENCE_INPUT;
        let reference = reference_gflops(cfg.backbone, cfg.depthwise);
        let variant = if cfg.depthwise { "depthwise" } else { "standard" };
        let _ = writeln!(
            out,
            "\npublished: {} {variant} at {h}x{w}: {reference} GFLOPs",
            cfg.backbone
        );
        let _ = writeln!(out, "{:<10}  {:>10}  {:>10}  {:>10}", "convention", "computed", "published", "deviation");
        for conv in FlopConvention::ALL {
            let g = count_flops(&m.graph, Shape4::new(1, 3, h, w)?, conv)?.gflops();
            let _ = writeln!(
                out,
                "{:<10}  {:>10.2}  {:>10.2}  {:>+9.1}%",
                conv.name(),
                g,
                reference,
                percent_deviation(g, reference)
            );
        }
    }
    print!("{out}");
    Ok(())
}

pub fn infer(ctx: &Context, a: &InferArgs) -> Result<(), Failure> {
    let cfg = ctx.model_config();
    if cfg.num_classes > 256 {
        return Err(Failure::new(
            "unsupported",
            format!("{} classes do not fit an 8-bit label image", cfg.num_classes),
        ));
    }
    let m = ctx.build(&cfg)?;
    let weights = ctx.weights_for(&m)?;
    let img = Image::load(&a.image).map_err(|e| match e {
        liteseg::Error::Io(io) => Failure::new("io", format!("cannot read image {}: {io}", a.image.display())),
        other => other.into(),
    })?;
    if img.channels != 3 {
        return Err(Failure::new("format", format!("{} is not an RGB (P6) image", a.image.display())));
    }
    let size = Extents {
        h: img.height,
        w: img.width,
    };
    if !a.pad {
        size.require_aligned("image")
            .map_err(|f| Failure::new(f.kind, format!("{}; or pass --pad", f.detail)))?;
    }
    let palette = match &a.palette {
        Some(p) => Some(Palette::load(p)?),
        None => a.color.as_ref().map(|_| Palette::default_for(cfg.num_classes)),
    };
    if let Some(p) = &palette {
        if p.len() < cfg.num_classes {
            return Err(Failure::new(
                "usage",
                format!("palette has {} colors for {} classes", p.len(), cfg.num_classes),
            ));
        }
    }
    let x = pad_to_multiple(&img.to_tensor()?, BENCH_ALIGN)?;
    let out = forward(&m.graph, &x, &weights)?;
    let labels = argmax_channel(&out[liteseg::graph::TAP_LOGITS]).crop(0, 0, size.h, size.w)?;
    Image::from_labels(&labels)?.save(&a.out)?;
    if let (Some(path), Some(p)) = (&a.color, &palette) {
        p.colorize(&labels)?.save(path)?;
    }
    eprintln!("wrote {} ({}x{}, {} classes)", a.out.display(), size.h, size.w, cfg.num_classes);
    Ok(())
}

pub fn train_toy(ctx: &Context, a: &TrainArgs) -> Result<(), Failure> {
    let model = ctx.toy_config();
    if model.num_classes != TOY_CLASSES {
        return Err(Failure::new(
            "usage",
            format!("the synthetic dataset has {TOY_CLASSES} classes, config asks for {}", model.num_classes),
        ));
    }
    let multiscale = if a.multiscale.is_empty() {
        None
    } else {
        Some(MultiScaleSpec::new(a.multiscale.iter().map(|e| (e.h, e.w)).collect())?)
    };
    let cfg = ToyConfig {
        model,
        epochs: a.epochs,
        lr: a.lr,
        seed: ctx.seed,
        images: a.images,
        size: a.size,
        multiscale,
    };
    let run = run_toy(&cfg)?;
    let csv = history_csv(&run.history);
    let last = run.history.last().expect("at least one epoch");
    let summary = format!(
        "epochs {} final loss {:.6} train pixel acc {:.4} eval pixel acc {:.4}",
        cfg.epochs, last.loss, last.pixel_acc, run.final_accuracy
    );
    match &a.csv {
        Some(p) => {
            write_file(p, &csv)?;
            println!("{summary}");
        }
        None => {
            print!("{csv}");
            eprintln!("{summary}");
        }
    }
    if let Some(p) = &a.save_weights {
        run.weights.save(p)?;
        let cfg_path = p.with_extension("cfg");
        write_file(&cfg_path, &cfg.model.to_text())?;
        eprintln!("saved weights to {} and config to {}", p.display(), cfg_path.display());
    }
    Ok(())
}

pub fn bench(ctx: &Context, inputs: &[Extents], burn_in: usize, runs: usize, csv: Option<&Path>) -> Result<(), Failure> {
    if runs == 0 {
        return Err(Failure::new("usage", "--runs must be at least 1"));
    }
    let cfg = ctx.model_config();
    let m = ctx.build(&cfg)?;
    let weights = ctx.weights_for(&m)?;
    let label = format!("liteseg-{}{}", cfg.backbone, if cfg.depthwise { "-dw" } else { "" });
    let bench_cfg = BenchConfig {
        burn_in,
        runs,
        seed: ctx.seed,
    };
    let mut reports = Vec::new();
    for &e in inputs {
        eprintln!("benchmarking {label} at {e} ({burn_in} burn-in, {runs} runs)");
        reports.push(benchmark_fps(&label, &m.graph, &weights, input_shape(e)?, &bench_cfg)?);
    }
    print!("{}", BenchReport::table(&reports));
    if let Some(p) = csv {
        write_file(p, &BenchReport::csv(&reports))?;
    }
    Ok(())
}

pub fn gradcheck(ctx: &Context, samples: usize, batch: usize, size: usize) -> Result<(), Failure> {
    let cfg = GradcheckConfig {
        model: ctx.toy_config(),
        samples,
        seed: ctx.seed,
        batch,
        size,
    };
    let report = run_gradcheck(&cfg)?;
    println!("{:<40}  {:>8}  {:>14}  {:>14}  {:>10}", "param", "index", "analytic", "numeric", "rel_err");
    for s in &report.samples {
        println!(
            "{:<40}  {:>8}  {:>14.6e}  {:>14.6e}  {:>10.3e}",
            s.param, s.index, s.analytic, s.numeric, s.rel_err
        );
    }
    println!(
        "worst relative error {:.3e} (tolerance {:.0e}, {} informative, {} kink draws skipped)",
        report.worst(),
        report.tolerance,
        report.informative(),
        report.kinks_skipped
    );
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        let ids: Vec<String> = report.failures().map(|s| format!("{}[{}]", s.param, s.index)).collect();
        println!("FAIL");
        Err(Failure::new("gradcheck", format!("gradient mismatch at {}", ids.join(", "))))
    }
}
