//! Segmentation quality metrics and inference timing.

mod bench;

pub use bench::{benchmark_fps, pad_to_multiple, BenchConfig, BenchReport, BENCH_ALIGN};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};

/// Pixel tally indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_index: u32,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        Self::with_ignore(num_classes, IGNORE_INDEX)
    }

    pub fn with_ignore(num_classes: usize, ignore_index: u32) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Usage("confusion matrix needs at least one class".into()));
        }
        if (ignore_index as usize) < num_classes {
            return Err(Error::Usage(format!(
                "ignore index {ignore_index} collides with a class id (num_classes {num_classes})"
            )));
        }
        Ok(ConfusionMatrix {
            num_classes,
            ignore_index,
            counts: vec![0; num_classes * num_classes],
        })
    }

    /// Build from a dense row-major tally.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        let mut cm = Self::new(num_classes)?;
        if counts.len() != num_classes * num_classes {
            return Err(Error::Usage(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        cm.counts = counts;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_index(&self) -> u32 {
        self.ignore_index
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    /// Scored pixels so far.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check_label(&self, l: u32) -> Result<()> {
        if l != self.ignore_index && l as usize >= self.num_classes {
            return Err(Error::InvalidLabel {
                label: l,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Add one labelled batch. Pixels whose truth is the ignore index are skipped.
    /// On error the matrix is left untouched.
    pub fn update(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.n != truth.n || pred.h != truth.h || pred.w != truth.w {
            return Err(Error::Shape(format!(
                "prediction {}x{}x{} vs truth {}x{}x{}",
                pred.n, pred.h, pred.w, truth.n, truth.h, truth.w
            )));
        }
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            self.check_label(t)?;
            if t != self.ignore_index {
                if p == self.ignore_index {
                    return Err(Error::InvalidLabel {
                        label: p,
                        num_classes: self.num_classes,
                    });
                }
                self.check_label(p)?;
            }
        }
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            if t != self.ignore_index {
                self.counts[t as usize * self.num_classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Sum of two tallies over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Usage(format!(
                "cannot merge {} and {} class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, fp, fn)` for one class.
    pub fn class_terms(&self, c: usize) -> (u64, u64, u64) {
        let k = self.num_classes;
        let tp = self.get(c, c);
        let row: u64 = (0..k).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..k).map(|t| self.get(t, c)).sum();
        (tp, col - tp, row - tp)
    }

    /// IOU per class; `None` for classes absent from both truth and prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let (tp, fp, fn_) = self.class_terms(c);
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn per_class_iou_exact(&self) -> Vec<Option<Ratio<u64>>> {
        (0..self.num_classes)
            .map(|c| {
                let (tp, fp, fn_) = self.class_terms(c);
                let denom = tp + fp + fn_;
                (denom > 0).then(|| Ratio::new(tp, denom))
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(Error::Domain("mIOU of an empty confusion matrix".into()));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// mIOU in exact rational arithmetic.
    pub fn miou_exact(&self) -> Result<BigRational> {
        let ious: Vec<Ratio<u64>> = self.per_class_iou_exact().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(Error::Domain("mIOU of an empty confusion matrix".into()));
        }
        let sum = ious.iter().fold(BigRational::from_integer(BigInt::from(0)), |acc, r| {
            acc + BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
        });
        Ok(sum / BigRational::from_integer(BigInt::from(ious.len())))
    }

    /// Overall fraction of scored pixels on the diagonal.
    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Domain("pixel accuracy of an empty confusion matrix".into()));
        }
        let diag: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        Ok(diag as f64 / total as f64)
    }
}

/// Total map from class id to a coarser category id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    class_to_category: Vec<usize>,
    names: Vec<String>,
}

pub const CITYSCAPES_CATEGORIES: [&str; 7] = ["flat", "nature", "object", "sky", "construction", "human", "vehicle"];

impl CategoryMap {
    pub fn new(class_to_category: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if class_to_category.is_empty() || names.is_empty() {
            return Err(Error::Usage("category map needs classes and categories".into()));
        }
        if let Some((c, &k)) = class_to_category.iter().enumerate().find(|(_, &k)| k >= names.len()) {
            return Err(Error::Usage(format!(
                "class {c} maps to category {k}, only {} categories",
                names.len()
            )));
        }
        Ok(CategoryMap { class_to_category, names })
    }

    /// The 19 Cityscapes training classes grouped into 7 categories.
    pub fn cityscapes() -> Self {
        // road sidewalk | building wall fence | pole light sign | vegetation terrain | sky | person rider | car truck bus train motorcycle bicycle
        let map = vec![0, 0, 4, 4, 4, 2, 2, 2, 1, 1, 3, 5, 5, 6, 6, 6, 6, 6, 6];
        Self::new(map, CITYSCAPES_CATEGORIES.iter().map(|s| s.to_string()).collect()).expect("static map is total")
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_category.len()
    }

    pub fn num_categories(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn category(&self, class: usize) -> usize {
        self.class_to_category[class]
    }

    /// Sum the tally into category rows and columns.
    pub fn collapse(&self, cm: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if cm.num_classes() != self.num_classes() {
            return Err(Error::Usage(format!(
                "category map covers {} classes, matrix has {}",
                self.num_classes(),
                cm.num_classes()
            )));
        }
        let k = self.num_categories();
        let mut counts = vec![0u64; k * k];
        for t in 0..cm.num_classes() {
            for p in 0..cm.num_classes() {
                counts[self.category(t) * k + self.category(p)] += cm.get(t, p);
            }
        }
        ConfusionMatrix::from_counts(k, counts)
    }
}

pub fn category_miou(cm: &ConfusionMatrix, map: &CategoryMap) -> Result<f64> {
    map.collapse(cm)?.miou()
}
