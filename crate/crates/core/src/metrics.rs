//! IoU and Dice scoring, per-method aggregation, and the comparison table.

use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imgio::BinaryMask;

/// Pixel confusion counts of a predicted mask against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2tp / (2tp + fp + fn)`; 1.0 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// `tp / (tp + fp + fn)`; 1.0 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<Confusion> {
    if pred.dims() != truth.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(confusion(pred, truth)?.dice())
}

pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(confusion(pred, truth)?.iou())
}

/// Segmentation approach being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cca,
    Watershed,
    UNet,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cca, Method::Watershed, Method::UNet];

    /// Row label used in the comparison table.
    pub fn display_name(&self) -> &'static str {
        match self {
            Method::Cca => "Connected Component Analysis",
            Method::Watershed => "Watershed Algorithm",
            Method::UNet => "U-Net Model",
        }
    }

    /// Short identifier used on the command line and in CSVs.
    pub fn key(&self) -> &'static str {
        match self {
            Method::Cca => "cca",
            Method::Watershed => "watershed",
            Method::UNet => "unet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cca" => Some(Method::Cca),
            "watershed" => Some(Method::Watershed),
            "unet" | "u-net" => Some(Method::UNet),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub entry_id: String,
    pub iou: f64,
    pub dice: f64,
    pub confusion: Confusion,
}

impl PairScore {
    pub fn new(entry_id: &str, pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        let c = confusion(pred, truth)?;
        Ok(Self {
            entry_id: entry_id.to_string(),
            iou: c.iou(),
            dice: c.dice(),
            confusion: c,
        })
    }
}

/// Macro-averaged (mean over images) scores of one method, as percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub scores: Vec<PairScore>,
    pub mean_iou_pct: f64,
    pub mean_dice_pct: f64,
}

pub fn aggregate(method: Method, scores: Vec<PairScore>) -> Result<MethodReport> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let n = scores.len() as f64;
    let mean_iou = scores.iter().map(|s| s.iou).sum::<f64>() / n;
    let mean_dice = scores.iter().map(|s| s.dice).sum::<f64>() / n;
    Ok(MethodReport {
        method,
        scores,
        mean_iou_pct: 100.0 * mean_iou,
        mean_dice_pct: 100.0 * mean_dice,
    })
}

/// One table row: method label with its mean IoU and Dice percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub iou_pct: f64,
    pub dice_pct: f64,
}

impl From<&MethodReport> for SummaryRow {
    fn from(r: &MethodReport) -> Self {
        Self {
            method: r.method,
            iou_pct: r.mean_iou_pct,
            dice_pct: r.mean_dice_pct,
        }
    }
}

/// Markdown comparison table, one decimal place per value.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from("| Name of Approach | IoU Metric | DICE Score |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.1} | {:.1} |",
            r.method.display_name(),
            r.iou_pct,
            r.dice_pct
        );
    }
    out
}

pub const SCORES_CSV_HEADER: &str = "method,entry_id,iou,dice,tp,fp,fn,tn";
pub const SUMMARY_CSV_HEADER: &str = "method,mean_iou_pct,mean_dice_pct,n_images";

pub fn scores_csv(reports: &[MethodReport]) -> String {
    let mut out = format!("{SCORES_CSV_HEADER}\n");
    for r in reports {
        for s in &r.scores {
            let c = s.confusion;
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{},{},{},{}",
                r.method, s.entry_id, s.iou, s.dice, c.tp, c.fp, c.fn_, c.tn
            );
        }
    }
    out
}

pub fn summary_csv(reports: &[MethodReport]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{}",
            r.method,
            r.mean_iou_pct,
            r.mean_dice_pct,
            r.scores.len()
        );
    }
    out
}
