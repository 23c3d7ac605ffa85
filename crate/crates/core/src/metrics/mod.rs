//! Detection and localization metrics: AUROC, average precision and PRO.

mod report;

use std::collections::VecDeque;

use crate::error::{ensure, Result};
use crate::image::Mask;

pub use report::{evaluate, CategoryReport, EvalItem, EvalReport, TimingStats};

/// Default upper false-positive-rate bound for PRO integration.
pub const DEFAULT_FPR_LIMIT: f64 = 0.3;

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    ensure!(
        scores.len() == labels.len(),
        "{} scores but {} labels",
        scores.len(),
        labels.len()
    );
    ensure!(scores.iter().all(|s| !s.is_nan()), "scores contain NaN");
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    ensure!(
        pos > 0 && neg > 0,
        "AUROC needs both classes ({pos} positive, {neg} negative)"
    );
    let order = descending(scores);
    // Walk tie groups from the top; each positive beats every negative below
    // its group and ties half of those inside it.
    let mut credit = 0.0;
    let mut neg_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        let neg_below = neg - neg_above - gn;
        credit += gp as f64 * (neg_below as f64 + 0.5 * gn as f64);
        neg_above += gn;
        i = j;
    }
    Ok(credit / (pos as f64 * neg as f64))
}

/// Step-interpolated area under the precision–recall curve, one step per
/// distinct score threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    ensure!(pos > 0, "average precision needs at least one positive");
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// 8-connected components of a mask as lists of pixel indices.
pub fn connected_components(mask: &Mask) -> Vec<Vec<usize>> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    for start in 0..h * w {
        if !mask.bits()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut region = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            region.push(p);
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.bits()[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        regions.push(region);
    }
    regions
}

/// Per-region overlap: mean recall over ground-truth components against the
/// global false-positive rate, integrated over `[0, fpr_limit]` by trapezoids
/// and divided by `fpr_limit`. Pixels scoring at or above a threshold count
/// as positive; thresholds sweep every distinct score.
pub fn pro(maps: &[Vec<f64>], masks: &[Mask], fpr_limit: f64) -> Result<f64> {
    ensure!(
        maps.len() == masks.len(),
        "{} score maps but {} masks",
        maps.len(),
        masks.len()
    );
    ensure!(
        fpr_limit > 0.0 && fpr_limit <= 1.0,
        "fpr limit must lie in (0, 1], got {fpr_limit}"
    );
    // Per pixel: score and region id (usize::MAX for normal pixels).
    let mut pixels: Vec<(f64, usize)> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for (map, mask) in maps.iter().zip(masks) {
        ensure!(
            map.len() == mask.bits().len(),
            "score map of {} values for a {}x{} mask",
            map.len(),
            mask.height(),
            mask.width()
        );
        ensure!(map.iter().all(|s| !s.is_nan()), "score map contains NaN");
        let mut region_of = vec![usize::MAX; map.len()];
        for region in connected_components(mask) {
            for &p in &region {
                region_of[p] = sizes.len();
            }
            sizes.push(region.len());
        }
        pixels.extend(map.iter().copied().zip(region_of));
    }
    ensure!(!sizes.is_empty(), "PRO needs at least one anomalous region");
    let negatives = pixels.iter().filter(|p| p.1 == usize::MAX).count();
    ensure!(negatives > 0, "PRO needs at least one normal pixel");
    pixels.sort_by(|a, b| b.0.total_cmp(&a.0));

    let regions = sizes.len() as f64;
    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut recall_sum) = (0usize, 0.0);
    let mut i = 0;
    while i < pixels.len() {
        let s = pixels[i].0;
        while i < pixels.len() && pixels[i].0 == s {
            match pixels[i].1 {
                usize::MAX => fp += 1,
                r => recall_sum += 1.0 / sizes[r] as f64,
            }
            i += 1;
        }
        curve.push((fp as f64 / negatives as f64, recall_sum / regions));
    }
    Ok(integrate_to(&curve, fpr_limit) / fpr_limit)
}

/// Trapezoid area under a piecewise-linear curve with nondecreasing x,
/// truncated at `limit`.
fn integrate_to(curve: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for pair in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_at = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_at) / 2.0;
            break;
        }
    }
    area
}

/// Arithmetic mean, used to macro-average per-category values.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
