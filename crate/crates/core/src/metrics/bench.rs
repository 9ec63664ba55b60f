use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{forward, ModelGraph, WeightStore};
use crate::tensor::{Shape4, Tensor};

/// Spatial extents fed to the network are padded up to a multiple of this.
pub const BENCH_ALIGN: usize = 32;

/// Distinct pre-generated inputs cycled through during a benchmark.
const INPUT_POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub burn_in: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            burn_in: 200,
            runs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub label: String,
    pub input: Shape4,
    /// Extents the network actually ran at.
    pub padded: Shape4,
    pub burn_in: usize,
    /// Seconds per timed run, in execution order.
    pub latencies: Vec<f64>,
}

impl BenchReport {
    pub fn runs(&self) -> usize {
        self.latencies.len()
    }

    pub fn mean_latency(&self) -> f64 {
        self.latencies.iter().sum::<f64>() / self.latencies.len() as f64
    }

    /// Timed runs divided by total timed seconds.
    pub fn mean_fps(&self) -> f64 {
        1.0 / self.mean_latency()
    }

    /// Nearest-rank percentile of the run latencies, `q` in `(0, 100]`.
    pub fn percentile(&self, q: f64) -> f64 {
        let mut sorted = self.latencies.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    }

    pub fn p50(&self) -> f64 {
        self.percentile(50.0)
    }

    pub fn p95(&self) -> f64 {
        self.percentile(95.0)
    }

    pub const CSV_HEADER: &'static str = "model,input_h,input_w,padded_h,padded_w,burn_in,runs,mean_fps,mean_ms,p50_ms,p95_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            self.label,
            self.input.h,
            self.input.w,
            self.padded.h,
            self.padded.w,
            self.burn_in,
            self.runs(),
            self.mean_fps(),
            self.mean_latency() * 1e3,
            self.p50() * 1e3,
            self.p95() * 1e3
        )
    }

    pub fn csv(reports: &[BenchReport]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// Aligned text table, one row per report.
    pub fn table(reports: &[BenchReport]) -> String {
        let rows: Vec<[String; 7]> = reports
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("FPS ({}x{})", r.input.h, r.input.w),
                    format!("{}x{}", r.padded.h, r.padded.w),
                    format!("{}+{}", r.burn_in, r.runs()),
                    format!("{:.3}", r.mean_fps()),
                    format!("{:.2}", r.p50() * 1e3),
                    format!("{:.2}", r.p95() * 1e3),
                ]
            })
            .collect();
        let header = ["model", "column", "ran at", "burn-in+runs", "mean FPS", "p50 ms", "p95 ms"];
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for r in &rows {
            let cells: Vec<&str> = r.iter().map(String::as_str).collect();
            line(&mut out, &cells);
        }
        out
    }
}

/// Reflect-pad bottom and right edges up to the next multiple of `align`.
pub fn pad_to_multiple(x: &Tensor, align: usize) -> Result<Tensor> {
    let s = x.shape();
    let ph = s.h.div_ceil(align) * align - s.h;
    let pw = s.w.div_ceil(align) * align - s.w;
    if ph == 0 && pw == 0 {
        return Ok(x.clone());
    }
    x.pad_reflect(0, ph, 0, pw)
}

/// Time inference forwards at `input` extents. Inputs are generated up front;
/// padding to [`BENCH_ALIGN`] happens inside the timed region.
pub fn benchmark_fps(
    label: &str,
    g: &ModelGraph,
    w: &WeightStore,
    input: Shape4,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.runs == 0 {
        return Err(Error::Usage("benchmark needs at least one timed run".into()));
    }
    if input.c != g.input_channels() {
        return Err(Error::Shape(format!(
            "benchmark input has {} channels, model expects {}",
            input.c,
            g.input_channels()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<Tensor> = (0..INPUT_POOL)
        .map(|_| Tensor::from_fn(input, |_, _, _, _| rng.gen_range(-0.5f32..0.5)))
        .collect::<Result<_>>()?;
    let padded = pad_to_multiple(&pool[0], BENCH_ALIGN)?.shape();
    // Fail on shape errors before any timing.
    crate::graph::infer_shapes(g, padded)?;

    let run = |i: usize| -> Result<f64> {
        let x = &pool[i % INPUT_POOL];
        let start = Instant::now();
        let xp = pad_to_multiple(x, BENCH_ALIGN)?;
        let out = forward(g, &xp, w)?;
        let secs = start.elapsed().as_secs_f64();
        drop(out);
        Ok(secs)
    };
    for i in 0..cfg.burn_in {
        run(i)?;
    }
    let latencies = (0..cfg.runs).map(|i| run(cfg.burn_in + i)).collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        label: label.to_string(),
        input,
        padded,
        burn_in: cfg.burn_in,
        latencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(lat: &[f64]) -> BenchReport {
        let s = Shape4::new(1, 3, 360, 640).unwrap();
        BenchReport {
            label: "m".into(),
            input: s,
            padded: s.with_hw(384, 640),
            burn_in: 0,
            latencies: lat.to_vec(),
        }
    }

    #[test]
    fn single_run_fps_is_reciprocal() {
        let r = report(&[0.25]);
        assert_eq!(r.mean_fps(), 4.0);
        assert_eq!(r.p50(), 0.25);
        assert_eq!(r.p95(), 0.25);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let lat: Vec<f64> = (1..=20).rev().map(|v| v as f64).collect();
        let r = report(&lat);
        assert_eq!(r.p50(), 10.0);
        assert_eq!(r.p95(), 19.0);
        assert_eq!(r.percentile(100.0), 20.0);
    }

    #[test]
    fn pads_360_to_384() {
        let x = Tensor::<f32>::zeros(Shape4::new(1, 3, 360, 640).unwrap()).unwrap();
        assert_eq!(pad_to_multiple(&x, 32).unwrap().shape(), Shape4::new(1, 3, 384, 640).unwrap());
    }

    #[test]
    fn table_and_csv_have_one_row_per_report() {
        let rs = [report(&[0.1, 0.2]), report(&[0.3])];
        assert_eq!(BenchReport::table(&rs).lines().count(), 3);
        let csv = BenchReport::csv(&rs);
        assert_eq!(csv.lines().next().unwrap(), BenchReport::CSV_HEADER);
        assert_eq!(csv.lines().count(), 3);
    }
}
