use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dice, f1, hausdorff, match_detections, objects, DetectionCounts};
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Output of one segmentation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub mask: Mask,
    /// Forward passes used; 1 for a single pass.
    pub iterations: usize,
    /// Dice between consecutive masks, one entry per refinement step.
    pub dice_trace: Vec<f64>,
}

impl Segmentation {
    pub fn single(mask: Mask) -> Self {
        Segmentation {
            mask,
            iterations: 1,
            dice_trace: Vec::new(),
        }
    }
}

/// Anything that turns an image into a binary mask.
pub trait Segmenter: Sync {
    fn segment(&self, sample: &ImageSample) -> Result<Segmentation>;
}

/// Returns the ground truth. Useful as a sanity check of the scoring path.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, sample: &ImageSample) -> Result<Segmentation> {
        Ok(Segmentation::single(sample.mask.binarized()))
    }
}

impl<F: Fn(&ImageSample) -> Result<Mask> + Sync> Segmenter for F {
    fn segment(&self, sample: &ImageSample) -> Result<Segmentation> {
        self(sample).map(Segmentation::single)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageEval {
    pub domain: usize,
    pub dice: f64,
    pub hausdorff: f64,
    pub counts: DetectionCounts,
    pub iterations: usize,
    pub dice_trace: Vec<f64>,
}

pub fn evaluate_image(pred: &Mask, truth: &Mask) -> Result<(f64, f64, DetectionCounts)> {
    let pred = pred.binarized();
    let truth = truth.binarized();
    Ok((
        dice(&pred, &truth)?,
        hausdorff(&pred, &truth)?,
        match_detections(&objects(&pred), &objects(&truth))?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub domain: String,
    pub f1: f64,
    pub dice_mean: f64,
    pub hausdorff_mean_px: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub refine: bool,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn row(&self, domain: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.domain == domain)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.domain.len()).max().unwrap_or(0).max(6);
        writeln!(
            f,
            "{:<width$}  {:>5}  {:>6}  {:>6}  {:>13}",
            "domain", "n", "F1", "Dice", "Hausdorff(px)"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>5}  {:>6.4}  {:>6.4}  {:>13.4}",
                r.domain, r.n, r.f1, r.dice_mean, r.hausdorff_mean_px
            )?;
        }
        Ok(())
    }
}

/// Score `segmenter` on every sample and aggregate per domain: detection
/// counts are pooled before F1, Dice and Hausdorff are averaged per image.
/// Rows follow `domain_names` order.
pub fn evaluate_dataset(
    segmenter: &dyn Segmenter,
    samples: &[ImageSample],
    domain_names: &[String],
    refine: bool,
) -> Result<(EvalReport, Vec<ImageEval>)> {
    for (d, name) in domain_names.iter().enumerate() {
        if !samples.iter().any(|s| s.domain == d) {
            return Err(Error::Config(format!("domain {d} ({name}) has no evaluation samples")));
        }
    }
    if let Some(s) = samples.iter().find(|s| s.domain >= domain_names.len()) {
        return Err(Error::Index {
            what: "sample domain id",
            index: s.domain,
            limit: domain_names.len(),
        });
    }
    let images: Vec<ImageEval> = samples
        .par_iter()
        .map(|s| {
            let seg = segmenter.segment(s)?;
            let (d, h, counts) = evaluate_image(&seg.mask, &s.mask)?;
            Ok(ImageEval {
                domain: s.domain,
                dice: d,
                hausdorff: h,
                counts,
                iterations: seg.iterations,
                dice_trace: seg.dice_trace,
            })
        })
        .collect::<Result<_>>()?;
    let rows = domain_names
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let mine: Vec<&ImageEval> = images.iter().filter(|e| e.domain == d).collect();
            let n = mine.len();
            let mut counts = DetectionCounts::default();
            for e in &mine {
                counts += e.counts;
            }
            EvalRow {
                domain: name.clone(),
                f1: f1(counts),
                dice_mean: mine.iter().map(|e| e.dice).sum::<f64>() / n as f64,
                hausdorff_mean_px: mine.iter().map(|e| e.hausdorff).sum::<f64>() / n as f64,
                n,
            }
        })
        .collect();
    Ok((EvalReport { refine, rows }, images))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetConfig, DatasetPreset};

    fn toy() -> (Vec<ImageSample>, Vec<String>) {
        let mut c = DatasetConfig::preset(DatasetPreset::Toy);
        c.domains.iter_mut().for_each(|d| d.n_test = 4);
        c.domains.iter_mut().for_each(|d| d.n_train = 0);
        let ds = generate(&c, 2).unwrap();
        (ds.test, ds.domain_names)
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (samples, names) = toy();
        let (r, _) = evaluate_dataset(&OracleSegmenter, &samples, &names, false).unwrap();
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert_eq!(
                (row.f1, row.dice_mean, row.hausdorff_mean_px, row.n),
                (1.0, 1.0, 0.0, 4)
            );
        }
    }

    #[test]
    fn empty_predictions_use_the_border_fallback() {
        let (samples, names) = toy();
        let empty = |s: &ImageSample| Ok(Mask::new(s.width(), s.height()));
        let (r, per) = evaluate_dataset(&empty, &samples, &names, false).unwrap();
        for row in &r.rows {
            assert_eq!((row.f1, row.dice_mean), (0.0, 0.0));
        }
        for (e, s) in per.iter().zip(&samples) {
            let whole = Mask::filled(s.width(), s.height());
            assert_eq!(e.hausdorff, hausdorff(&whole, &s.mask).unwrap());
        }
    }

    #[test]
    fn eroded_oracle_matches_direct_count() {
        let (samples, names) = toy();
        let erode = |m: &Mask| {
            Mask::from_fn(m.width(), m.height(), |x, y| {
                m.is_fg(x, y)
                    && x > 0
                    && y > 0
                    && x + 1 < m.width()
                    && y + 1 < m.height()
                    && m.is_fg(x - 1, y)
                    && m.is_fg(x + 1, y)
                    && m.is_fg(x, y - 1)
                    && m.is_fg(x, y + 1)
            })
        };
        let seg = |s: &ImageSample| Ok(erode(&s.mask));
        let (_, per) = evaluate_dataset(&seg, &samples, &names, false).unwrap();
        for (e, s) in per.iter().zip(&samples) {
            let inner = erode(&s.mask).area() as f64;
            let expected = 2.0 * inner / (inner + s.mask.area() as f64);
            assert!((e.dice - expected).abs() <= 1e-9);
        }
    }

    #[test]
    fn missing_domain_is_a_config_error() {
        let (samples, mut names) = toy();
        names.push("ghost".into());
        assert!(matches!(
            evaluate_dataset(&OracleSegmenter, &samples, &names, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn text_and_json_forms() {
        let (samples, names) = toy();
        let (r, _) = evaluate_dataset(&OracleSegmenter, &samples, &names, false).unwrap();
        let text = r.to_string();
        assert!(text.lines().next().unwrap().contains("Hausdorff(px)"));
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let row = &v["rows"][0];
        for k in ["domain", "f1", "dice_mean", "hausdorff_mean_px", "n"] {
            assert!(row.get(k).is_some(), "{k}");
        }
    }
}
