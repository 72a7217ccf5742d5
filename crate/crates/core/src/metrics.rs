//! CLEAR-style 3D MOT metrics with 3D IoU matching, and the recall sweep
//! that averages MOTA/MOTP over target recall levels.
//!
//! A sequence is a slice of frames, each holding the boxes present in that
//! frame. Ground truth and results are aligned by frame index.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::error::{Error, Result};
use crate::geometry::{iou3d, Box3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmotaFormula {
    /// `clamp(MOTA_r / r, 0, 1)`.
    #[default]
    Ratio,
    /// `clamp(1 - (IDS + FP + FN - (1 - r) * num_gt) / (r * num_gt), 0, 1)`,
    /// the variant used by the public AB3DMOT evaluation tool.
    IntegratedFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thres: f64,
    pub category: String,
    pub num_recall_steps: usize,
    pub smota: SmotaFormula,
}

impl EvalConfig {
    pub fn new(iou_thres: f64, category: impl Into<String>) -> Self {
        EvalConfig {
            iou_thres,
            category: category.into(),
            num_recall_steps: 40,
            smota: SmotaFormula::Ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_thres > 0.0 && self.iou_thres <= 1.0) {
            return Err(Error::Config(format!(
                "iou_thres must lie in (0, 1], got {}",
                self.iou_thres
            )));
        }
        if self.num_recall_steps == 0 {
            return Err(Error::Config("num_recall_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox {
    pub id: i64,
    pub bbox: Box3D,
    pub score: Option<f64>,
}

/// Boxes per frame, indexed by frame.
pub type Sequence = Vec<Vec<TrackedBox>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt index, pred index, iou)`, ascending by gt index.
    pub matches: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Matches one frame. Pairs that continue a gt-to-prediction identity from
/// `previous` (gt id to pred id) are kept first when they clear the
/// threshold; the rest are assigned by maximum total IoU.
pub fn match_frame(gt: &[TrackedBox], pred: &[TrackedBox], iou_thres: f64, previous: &HashMap<i64, i64>) -> FrameMatch {
    let iou = DMatrix::from_fn(gt.len(), pred.len(), |i, j| iou3d(&gt[i].bbox, &pred[j].bbox));
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut matches = Vec::new();

    for (i, g) in gt.iter().enumerate() {
        let Some(&pid) = previous.get(&g.id) else { continue };
        if let Some(j) = pred.iter().position(|p| p.id == pid) {
            if !pred_used[j] && iou[(i, j)] >= iou_thres {
                gt_used[i] = true;
                pred_used[j] = true;
                matches.push((i, j, iou[(i, j)]));
            }
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let free_pred: Vec<usize> = (0..pred.len()).filter(|&j| !pred_used[j]).collect();
    let masked = DMatrix::from_fn(free_gt.len(), free_pred.len(), |a, b| {
        let v = iou[(free_gt[a], free_pred[b])];
        if v >= iou_thres {
            v
        } else {
            0.0
        }
    });
    for (a, b) in max_weight_assignment(&masked) {
        let (i, j) = (free_gt[a], free_pred[b]);
        if iou[(i, j)] >= iou_thres {
            gt_used[i] = true;
            pred_used[j] = true;
            matches.push((i, j, iou[(i, j)]));
        }
    }
    matches.sort_by_key(|m| m.0);

    FrameMatch {
        matches,
        false_positives: (0..pred.len()).filter(|&j| !pred_used[j]).collect(),
        false_negatives: (0..gt.len()).filter(|&i| !gt_used[i]).collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub num_gt: usize,
    pub matches: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub frag: usize,
    pub sum_iou: f64,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.num_gt += o.num_gt;
        self.matches += o.matches;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.frag += o.frag;
        self.sum_iou += o.sum_iou;
    }

    /// `1 - (FP + FN + IDS) / num_gt`; a sequence without ground truth
    /// divides by 1.
    pub fn mota(&self) -> f64 {
        1.0 - (self.fp + self.fn_ + self.ids) as f64 / self.num_gt.max(1) as f64
    }

    /// Mean IoU over matches, 0 without matches.
    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.sum_iou / self.matches as f64
        }
    }

    pub fn recall(&self) -> f64 {
        self.matches as f64 / self.num_gt.max(1) as f64
    }
}

fn check_unique_ids(seq: &[Vec<TrackedBox>], what: &str) -> Result<()> {
    for (f, boxes) in seq.iter().enumerate() {
        let mut seen = HashSet::new();
        for b in boxes {
            if !seen.insert(b.id) {
                return Err(Error::Input(format!("{what}: duplicate id {} in frame {f}", b.id)));
            }
        }
    }
    Ok(())
}

/// Counts over one sequence, keeping only predictions for which `keep`
/// holds.
fn evaluate_filtered(
    gt: &[Vec<TrackedBox>],
    pred: &[Vec<TrackedBox>],
    iou_thres: f64,
    keep: impl Fn(&TrackedBox) -> bool,
) -> Counts {
    let frames = gt.len().max(pred.len());
    let empty = Vec::new();
    let mut c = Counts::default();
    let mut previous: HashMap<i64, i64> = HashMap::new();
    let mut last_match: HashMap<i64, i64> = HashMap::new();
    // gt id -> (was matched in its latest present frame, ever matched)
    let mut state: HashMap<i64, (bool, bool)> = HashMap::new();

    for f in 0..frames {
        let g = gt.get(f).unwrap_or(&empty);
        let p: Vec<TrackedBox> = pred
            .get(f)
            .unwrap_or(&empty)
            .iter()
            .filter(|b| keep(b))
            .copied()
            .collect();
        let m = match_frame(g, &p, iou_thres, &previous);

        c.num_gt += g.len();
        c.matches += m.matches.len();
        c.fp += m.false_positives.len();
        c.fn_ += m.false_negatives.len();

        let mut matched_ids = HashMap::new();
        for &(i, j, v) in &m.matches {
            c.sum_iou += v;
            matched_ids.insert(g[i].id, p[j].id);
            if let Some(old) = last_match.insert(g[i].id, p[j].id) {
                if old != p[j].id {
                    c.ids += 1;
                }
            }
        }
        for b in g {
            let matched = matched_ids.contains_key(&b.id);
            let entry = state.entry(b.id).or_insert((false, false));
            if matched && !entry.0 && entry.1 {
                c.frag += 1;
            }
            *entry = (matched, entry.1 || matched);
        }
        previous = matched_ids;
    }
    c
}

/// Counts over one sequence with every prediction kept.
pub fn evaluate_sequence(gt: &[Vec<TrackedBox>], pred: &[Vec<TrackedBox>], iou_thres: f64) -> Result<Counts> {
    check_unique_ids(gt, "ground truth")?;
    check_unique_ids(pred, "results")?;
    Ok(evaluate_filtered(gt, pred, iou_thres, |_| true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub r: f64,
    /// Confidence threshold realizing this row; `None` when there are no
    /// results at all.
    pub threshold: Option<f64>,
    pub recall: f64,
    pub mota: f64,
    pub motp: f64,
    pub smota: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou_thres: f64,
    pub category: String,
    pub rows: Vec<RecallRow>,
    pub samota: f64,
    pub amota: f64,
    pub amotp: f64,
    pub mota: f64,
    pub motp: f64,
    pub ids: usize,
    pub frag: usize,
    pub num_gt: usize,
}

pub fn smota(formula: SmotaFormula, r: f64, c: &Counts) -> f64 {
    let v = match formula {
        SmotaFormula::Ratio => c.mota() / r,
        SmotaFormula::IntegratedFn => {
            let n = c.num_gt.max(1) as f64;
            1.0 - ((c.ids + c.fp + c.fn_) as f64 - (1.0 - r) * n) / (r * n)
        }
    };
    v.clamp(0.0, 1.0)
}

/// `100 * mean(values)`.
pub fn percent_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    100.0 * values.sum::<f64>() / n as f64
}

/// One `(ground truth, results)` pair per sequence.
pub fn recall_sweep(sequences: &[(Sequence, Sequence)], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut scores = Vec::new();
    for (gt, pred) in sequences {
        check_unique_ids(gt, "ground truth")?;
        check_unique_ids(pred, "results")?;
        for (f, boxes) in pred.iter().enumerate() {
            for b in boxes {
                let s = b
                    .score
                    .ok_or_else(|| Error::Input(format!("result id {} in frame {f} has no confidence", b.id)))?;
                if !s.is_finite() {
                    return Err(Error::Input(format!(
                        "result id {} in frame {f} has a non-finite confidence",
                        b.id
                    )));
                }
                scores.push(s);
            }
        }
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();

    let at = |thr: Option<f64>| -> Counts {
        let mut total = Counts::default();
        for (gt, pred) in sequences {
            let c = evaluate_filtered(gt, pred, cfg.iou_thres, |b| {
                thr.is_none_or(|t| b.score.unwrap_or(0.0) >= t)
            });
            total.add(&c);
        }
        total
    };
    // thresholds from highest to lowest; the last one keeps every result
    let evaluated: Vec<(Option<f64>, Counts)> = if scores.is_empty() {
        vec![(None, at(None))]
    } else {
        scores.par_iter().map(|&t| (Some(t), at(Some(t)))).collect()
    };

    let num_gt = evaluated[0].1.num_gt;
    let l = cfg.num_recall_steps;
    let rows: Vec<RecallRow> = (1..=l)
        .map(|k| {
            let r = k as f64 / l as f64;
            // recall >= k/L, compared exactly in integers; the strict `<`
            // keeps the earlier (higher) threshold on ties
            let mut pick: Option<&(Option<f64>, Counts)> = None;
            for e in &evaluated {
                if e.1.matches * l >= k * num_gt && pick.is_none_or(|p| e.1.matches < p.1.matches) {
                    pick = Some(e);
                }
            }
            let (threshold, c) = pick.unwrap_or_else(|| evaluated.last().unwrap());
            RecallRow {
                r,
                threshold: *threshold,
                recall: c.recall(),
                mota: c.mota(),
                motp: c.motp(),
                smota: smota(cfg.smota, r, c),
                fp: c.fp,
                fn_: c.fn_,
                ids: c.ids,
            }
        })
        .collect();

    let mut best = &evaluated[0];
    for e in &evaluated[1..] {
        if e.1.mota() > best.1.mota() {
            best = e;
        }
    }

    Ok(MetricsReport {
        iou_thres: cfg.iou_thres,
        category: cfg.category.clone(),
        samota: percent_mean(rows.iter().map(|r| r.smota)),
        amota: percent_mean(rows.iter().map(|r| r.mota)),
        amotp: percent_mean(rows.iter().map(|r| r.motp)),
        mota: best.1.mota(),
        motp: best.1.motp(),
        ids: best.1.ids,
        frag: best.1.frag,
        num_gt,
        rows,
    })
}

impl MetricsReport {
    /// Human-readable summary table followed by the per-recall rows.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} @ 3D IoU {:.2}", self.category, self.iou_thres);
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
            "sAMOTA", "AMOTA", "AMOTP", "MOTA", "MOTP", "IDS", "FRAG"
        );
        let _ = writeln!(
            s,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6}",
            self.samota, self.amota, self.amotp, self.mota, self.motp, self.ids, self.frag
        );
        let _ = writeln!(
            s,
            "\n{:>6} {:>10} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}",
            "r", "threshold", "recall", "MOTA_r", "MOTP_r", "sMOTA_r", "FP", "FN", "IDS"
        );
        for r in &self.rows {
            let thr = r.threshold.map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
            let _ = writeln!(
                s,
                "{:>6.3} {:>10} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6} {:>6}",
                r.r, thr, r.recall, r.mota, r.motp, r.smota, r.fp, r.fn_, r.ids
            );
        }
        s
    }

    /// `key=value` lines with two decimals.
    pub fn key_values(&self) -> String {
        format!(
            "category={}\niou_thres={:.2}\nsAMOTA={:.2}\nAMOTA={:.2}\nAMOTP={:.2}\nMOTA={:.2}\nMOTP={:.2}\nIDS={}\nFRAG={}\n",
            self.category, self.iou_thres, self.samota, self.amota, self.amotp, self.mota, self.motp, self.ids, self.frag
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn car(x: f64, y: f64) -> Box3D {
        Box3D::new(x, y, 0.0, 4.0, 2.0, 1.5, 0.0).unwrap()
    }

    fn tb(id: i64, b: Box3D) -> TrackedBox {
        TrackedBox {
            id,
            bbox: b,
            score: Some(1.0),
        }
    }

    fn scored(id: i64, b: Box3D, s: f64) -> TrackedBox {
        TrackedBox {
            id,
            bbox: b,
            score: Some(s),
        }
    }

    #[test]
    fn match_examples() {
        let gt = vec![tb(0, car(0.0, 0.0)), tb(1, car(10.0, 0.0))];
        let m = match_frame(&gt, &gt, 0.25, &HashMap::new());
        assert_eq!(m.matches, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());

        let three = vec![tb(0, car(0.0, 0.0)), tb(1, car(10.0, 0.0)), tb(2, car(20.0, 0.0))];
        assert_eq!(match_frame(&three, &[], 0.25, &HashMap::new()).false_negatives.len(), 3);
    }

    #[test]
    fn crossed_pairs_use_total_iou() {
        // with IoUs {0.6, 0.3 / 0.4, 0.7} the pairings total 1.3 vs 0.7
        let w = DMatrix::from_row_slice(2, 2, &[0.6, 0.3, 0.4, 0.7]);
        assert_eq!(max_weight_assignment(&w), vec![(0, 0), (1, 1)]);

        // geometric instance: pred 0 overlaps gt 0 more than gt 1 does
        let gt = vec![tb(0, car(0.0, 0.0)), tb(1, car(2.5, 0.0))];
        let pred = vec![tb(7, car(0.6, 0.0)), tb(8, car(2.9, 0.0))];
        let m = match_frame(&gt, &pred, 0.25, &HashMap::new());
        assert_eq!(
            m.matches.iter().map(|x| (x.0, x.1)).collect::<Vec<_>>(),
            vec![(0, 0), (1, 1)]
        );
    }

    #[test]
    fn previous_identity_wins_over_better_overlap() {
        let gt = vec![tb(0, car(0.0, 0.0))];
        let pred = vec![tb(5, car(0.0, 0.0)), tb(6, car(0.5, 0.0))];
        let prev = HashMap::from([(0, 6)]);
        let m = match_frame(&gt, &pred, 0.25, &prev);
        assert_eq!(m.matches[0].1, 1);
        assert_eq!(m.false_positives, vec![0]);
    }

    #[test]
    fn perfect_results() {
        let gt: Sequence = (0..5)
            .map(|f| vec![tb(0, car(f as f64, 0.0)), tb(1, car(f as f64, 8.0))])
            .collect();
        let c = evaluate_sequence(&gt, &gt, 0.7).unwrap();
        assert_eq!((c.fp, c.fn_, c.ids, c.frag), (0, 0, 0, 0));
        assert_eq!(c.mota(), 1.0);
        assert_eq!(c.motp(), 1.0);
    }

    #[test]
    fn mota_hand_computed() {
        // 10 gt boxes over 5 frames, two tracks
        let gt: Sequence = (0..5)
            .map(|f| vec![tb(0, car(f as f64, 0.0)), tb(1, car(f as f64, 8.0))])
            .collect();
        let mut pred = gt.clone();
        pred[1].push(tb(9, car(30.0, 30.0))); // FP
        pred[2].retain(|b| b.id != 1); // FN
        for b in pred[3..].iter_mut().flatten() {
            if b.id == 0 {
                b.id = 4; // IDS at frame 3
            }
        }
        let c = evaluate_sequence(&gt, &pred, 0.5).unwrap();
        assert_eq!((c.num_gt, c.fp, c.fn_, c.ids), (10, 1, 1, 1));
        assert_abs_diff_eq!(c.mota(), 0.7, epsilon = 1e-12);
        // the FN interrupts track 1 once
        assert_eq!(c.frag, 1);
    }

    #[test]
    fn frag_single_interruption() {
        let gt: Sequence = (0..6)
            .map(|f| if f == 0 { vec![] } else { vec![tb(0, car(0.0, 0.0))] })
            .collect();
        let pred: Sequence = (0..6)
            .map(|f| {
                if [1, 2, 4, 5].contains(&f) {
                    vec![tb(3, car(0.0, 0.0))]
                } else {
                    vec![]
                }
            })
            .collect();
        let c = evaluate_sequence(&gt, &pred, 0.5).unwrap();
        assert_eq!(c.frag, 1);
        assert_eq!(c.ids, 0);
        assert_eq!(c.fn_, 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let seq: Sequence = vec![vec![tb(0, car(0.0, 0.0)), tb(0, car(5.0, 0.0))]];
        assert!(matches!(evaluate_sequence(&seq, &[], 0.5), Err(Error::Input(_))));
        assert!(matches!(evaluate_sequence(&[], &seq, 0.5), Err(Error::Input(_))));
    }

    /// Ten gt objects in one frame. At confidence 0.9: five hits and one
    /// FP (recall 0.5, MOTA 0.4). At 0.5: all hits and four FPs (recall 1,
    /// MOTA 0.6).
    fn two_level_fixture() -> Vec<(Sequence, Sequence)> {
        let gt: Vec<TrackedBox> = (0..10).map(|i| tb(i, car(10.0 * i as f64, 0.0))).collect();
        let mut pred: Vec<TrackedBox> = (0..10)
            .map(|i| scored(i, car(10.0 * i as f64, 0.0), if i < 5 { 0.9 } else { 0.5 }))
            .collect();
        pred.push(scored(100, car(0.0, 50.0), 0.9));
        for k in 0..3 {
            pred.push(scored(101 + k, car(10.0 * k as f64, 80.0), 0.5));
        }
        vec![(vec![gt], vec![pred])]
    }

    #[test]
    fn amota_is_mean_of_rows() {
        let mut cfg = EvalConfig::new(0.5, "Car");
        cfg.num_recall_steps = 2;
        let rep = recall_sweep(&two_level_fixture(), &cfg).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].threshold, Some(0.9));
        assert_eq!(rep.rows[1].threshold, Some(0.5));
        assert_abs_diff_eq!(rep.rows[0].mota, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.rows[1].mota, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.amota, 50.0, epsilon = 1e-9);
        assert_eq!(rep.amota, percent_mean(rep.rows.iter().map(|r| r.mota)));
        assert_abs_diff_eq!(rep.rows[0].smota, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.samota, 70.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.mota, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn smota_arithmetic_and_clamp() {
        let c = |fp, fn_, ids, matches| Counts {
            num_gt: 10,
            matches,
            fp,
            fn_,
            ids,
            frag: 0,
            sum_iou: 0.0,
        };
        // MOTA 0.4 at r = 0.5
        assert_abs_diff_eq!(smota(SmotaFormula::Ratio, 0.5, &c(1, 5, 0, 5)), 0.8, epsilon = 1e-12);
        // MOTA -0.2
        assert_eq!(smota(SmotaFormula::Ratio, 0.3, &c(7, 5, 0, 5)), 0.0);
        assert_eq!(smota(SmotaFormula::Ratio, 0.1, &c(0, 5, 0, 5)), 1.0);
        // integrated variant at r = 0.5 discounts the 5 FN that recall 0.5 forces
        assert_abs_diff_eq!(
            smota(SmotaFormula::IntegratedFn, 0.5, &c(1, 5, 0, 5)),
            0.8,
            epsilon = 1e-12
        );
        assert_eq!(smota(SmotaFormula::IntegratedFn, 0.5, &c(20, 5, 0, 5)), 0.0);
    }

    #[test]
    fn unreachable_recall_uses_lowest_threshold() {
        let gt: Sequence = vec![vec![tb(0, car(0.0, 0.0)), tb(1, car(10.0, 0.0))]];
        let pred: Sequence = vec![vec![scored(0, car(0.0, 0.0), 0.7)]];
        let mut cfg = EvalConfig::new(0.5, "Car");
        cfg.num_recall_steps = 4;
        let rep = recall_sweep(&[(gt, pred)], &cfg).unwrap();
        assert_eq!(rep.rows[3].threshold, Some(0.7));
        assert_abs_diff_eq!(rep.rows[3].mota, 0.5, epsilon = 1e-12);
        assert_eq!(rep.rows[3].smota, 0.5);
    }

    #[test]
    fn empty_results_give_zero_smota() {
        let gt: Sequence = vec![vec![tb(0, car(0.0, 0.0))]];
        let rep = recall_sweep(&[(gt, vec![])], &EvalConfig::new(0.25, "Car")).unwrap();
        assert!(rep.mota <= 0.0);
        assert!(rep.rows.iter().all(|r| r.smota == 0.0));
        assert_eq!(rep.samota, 0.0);
    }

    #[test]
    fn missing_confidence_rejected() {
        let gt: Sequence = vec![vec![tb(0, car(0.0, 0.0))]];
        let pred: Sequence = vec![vec![TrackedBox {
            id: 0,
            bbox: car(0.0, 0.0),
            score: None,
        }]];
        assert!(matches!(
            recall_sweep(&[(gt, pred)], &EvalConfig::new(0.25, "Car")),
            Err(Error::Input(_))
        ));
        let mut bad = EvalConfig::new(0.0, "Car");
        assert!(bad.validate().is_err());
        bad.iou_thres = 0.5;
        bad.num_recall_steps = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn perfect_sweep_is_100() {
        let gt: Sequence = (0..4)
            .map(|f| vec![tb(0, car(f as f64, 0.0)), tb(1, car(0.0, 9.0))])
            .collect();
        let pred: Sequence = gt
            .iter()
            .enumerate()
            .map(|(f, v)| {
                v.iter()
                    .map(|b| scored(b.id, b.bbox, 0.1 * (f + 1) as f64 + 0.01 * b.id as f64))
                    .collect()
            })
            .collect();
        let rep = recall_sweep(&[(gt, pred)], &EvalConfig::new(0.7, "Car")).unwrap();
        assert_eq!(rep.samota, 100.0);
        assert_eq!(rep.mota, 1.0);
        assert_eq!((rep.ids, rep.frag), (0, 0));
        assert!(rep.key_values().contains("sAMOTA=100.00\n"));
        assert!(rep.table().contains("sAMOTA"));
    }

    fn arb_scene() -> impl Strategy<Value = (Sequence, Sequence)> {
        let frame = proptest::collection::vec((0i64..4, -20.0..20.0f64, -20.0..20.0f64, -3.0..3.0f64), 0..4);
        proptest::collection::vec((frame.clone(), frame), 1..5).prop_map(|frames| {
            let mk = |v: &Vec<(i64, f64, f64, f64)>| {
                let mut seen = HashSet::new();
                v.iter()
                    .filter(|(id, ..)| seen.insert(*id))
                    .map(|&(id, x, y, t)| TrackedBox {
                        id,
                        bbox: Box3D::new(x, y, 0.0, 4.0, 2.0, 1.5, t).unwrap(),
                        score: Some(0.5),
                    })
                    .collect::<Vec<_>>()
            };
            let gt = frames.iter().map(|(g, _)| mk(g)).collect();
            let pred = frames.iter().map(|(_, p)| mk(p)).collect();
            (gt, pred)
        })
    }

    proptest! {
        #[test]
        fn mota_bounded_and_one_iff_clean((gt, pred) in arb_scene()) {
            let c = evaluate_sequence(&gt, &pred, 0.25).unwrap();
            prop_assert!(c.mota() <= 1.0);
            prop_assert_eq!(c.mota() == 1.0, c.fp + c.fn_ + c.ids == 0);
            prop_assert_eq!(c.matches + c.fn_, c.num_gt);
        }

        #[test]
        fn noise_track_adds_fp((gt, pred) in arb_scene()) {
            let base = evaluate_sequence(&gt, &pred, 0.25).unwrap();
            let mut noisy = pred.clone();
            for f in noisy.iter_mut() {
                f.push(TrackedBox { id: 999, bbox: Box3D::new(500.0, 500.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap(), score: Some(0.5) });
            }
            let c = evaluate_sequence(&gt, &noisy, 0.25).unwrap();
            prop_assert!(c.fp > base.fp);
            prop_assert!(c.fn_ >= base.fn_);
        }

        #[test]
        fn rigid_transform_invariance((gt, pred) in arb_scene(), dx in -50.0..50.0f64, dy in -50.0..50.0f64, yaw in -3.0..3.0f64) {
            let (c, s) = (yaw.cos(), yaw.sin());
            let move_seq = |seq: &Sequence| -> Sequence {
                seq.iter().map(|f| f.iter().map(|b| {
                    let p = b.bbox.center();
                    let q = Vector3::new(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy, p.z);
                    TrackedBox { bbox: b.bbox.with_center(&q.into()).rotated_yaw(yaw), ..*b }
                }).collect()).collect()
            };
            let a = evaluate_sequence(&gt, &pred, 0.25).unwrap();
            let b = evaluate_sequence(&move_seq(&gt), &move_seq(&pred), 0.25).unwrap();
            prop_assert_eq!((a.fp, a.fn_, a.ids, a.frag), (b.fp, b.fn_, b.ids, b.frag));
            prop_assert!((a.sum_iou - b.sum_iou).abs() < 1e-6);
        }

        #[test]
        fn smota_in_unit_interval(fp in 0usize..30, fn_ in 0usize..10, ids in 0usize..5, k in 1usize..41) {
            let c = Counts { num_gt: 10, matches: 10 - fn_.min(10), fp, fn_: fn_.min(10), ids, frag: 0, sum_iou: 0.0 };
            let r = k as f64 / 40.0;
            for f in [SmotaFormula::Ratio, SmotaFormula::IntegratedFn] {
                let v = smota(f, r, &c);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
