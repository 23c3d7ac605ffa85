use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::Mask;

use super::{auroc, average_precision, macro_average, pro};

/// One evaluated image: predicted heatmap and score next to its ground truth.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub heatmap: Vec<f64>,
    pub image_score: f64,
    pub mask: Mask,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TimingStats {
    pub forwards_per_image: f64,
    pub seconds_per_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CategoryReport {
    pub category: String,
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub pixel_ap: f64,
    pub images: usize,
    pub anomalous_images: usize,
    pub pixels: usize,
    pub anomalous_pixels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingStats>,
}

/// Macro-averaged metrics over categories plus the per-category rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalReport {
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub pixel_ap: f64,
    pub images: usize,
    pub pixels: usize,
    pub fpr_limit: f64,
    pub categories: Vec<CategoryReport>,
}

/// Scores one category: image AUROC from image scores, pixel AUROC and AP
/// over all pixels pooled, PRO over all maps.
pub fn evaluate(category: &str, items: &[EvalItem], fpr_limit: f64) -> Result<CategoryReport> {
    ensure!(!items.is_empty(), "nothing to evaluate for {category}");
    let mut pixel_scores = Vec::new();
    let mut pixel_labels = Vec::new();
    for item in items {
        ensure!(
            item.heatmap.len() == item.mask.bits().len(),
            "heatmap of {} values for a {}x{} mask",
            item.heatmap.len(),
            item.mask.height(),
            item.mask.width()
        );
        pixel_scores.extend_from_slice(&item.heatmap);
        pixel_labels.extend_from_slice(item.mask.bits());
    }
    let scores: Vec<f64> = items.iter().map(|i| i.image_score).collect();
    let labels: Vec<bool> = items.iter().map(|i| i.label).collect();
    let maps: Vec<Vec<f64>> = items.iter().map(|i| i.heatmap.clone()).collect();
    let masks: Vec<Mask> = items.iter().map(|i| i.mask.clone()).collect();
    Ok(CategoryReport {
        category: category.to_string(),
        image_auroc: auroc(&scores, &labels)?,
        pixel_auroc: auroc(&pixel_scores, &pixel_labels)?,
        pro: pro(&maps, &masks, fpr_limit)?,
        pixel_ap: average_precision(&pixel_scores, &pixel_labels)?,
        images: items.len(),
        anomalous_images: labels.iter().filter(|&&l| l).count(),
        pixels: pixel_labels.len(),
        anomalous_pixels: pixel_labels.iter().filter(|&&l| l).count(),
        timing: None,
    })
}

impl EvalReport {
    pub fn from_categories(categories: Vec<CategoryReport>, fpr_limit: f64) -> Result<Self> {
        ensure!(!categories.is_empty(), "report needs at least one category");
        let avg = |f: fn(&CategoryReport) -> f64| {
            macro_average(&categories.iter().map(f).collect::<Vec<_>>())
        };
        Ok(EvalReport {
            image_auroc: avg(|c| c.image_auroc),
            pixel_auroc: avg(|c| c.pixel_auroc),
            pro: avg(|c| c.pro),
            pixel_ap: avg(|c| c.pixel_ap),
            images: categories.iter().map(|c| c.images).sum(),
            pixels: categories.iter().map(|c| c.pixels).sum(),
            fpr_limit,
            categories,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per category and a mean row.
    pub fn to_table(&self) -> String {
        let header = ["category", "image-auroc", "pixel-auroc", "pro", "pixel-ap", "images"];
        let mut rows: Vec<[String; 6]> = self
            .categories
            .iter()
            .map(|c| {
                [
                    c.category.clone(),
                    format!("{:.4}", c.image_auroc),
                    format!("{:.4}", c.pixel_auroc),
                    format!("{:.4}", c.pro),
                    format!("{:.4}", c.pixel_ap),
                    c.images.to_string(),
                ]
            })
            .collect();
        rows.push([
            "mean".to_string(),
            format!("{:.4}", self.image_auroc),
            format!("{:.4}", self.pixel_auroc),
            format!("{:.4}", self.pro),
            format!("{:.4}", self.pixel_ap),
            self.images.to_string(),
        ]);
        let widths: Vec<usize> = (0..6)
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            for (i, cell) in cells.iter().enumerate() {
                if i == 0 {
                    let _ = write!(out, "{cell:<w$}", w = widths[0]);
                } else {
                    let _ = write!(out, "  {cell:>w$}", w = widths[i]);
                }
            }
            out.push('\n');
        };
        line(header.to_vec(), &mut out);
        for row in &rows {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        out
    }
}
