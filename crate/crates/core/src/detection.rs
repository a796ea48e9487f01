//! Matching predicted boxes to ground truth and tallying confusion matrices.
//!
//! Two families of matrices come out of the same matched corpus:
//!
//! * class-labeled: one count per ground-truth object, at the object's band;
//! * proposition-labeled: one count per (frame, band) pair, comparing the set
//!   of classes present in the band against the set of classes detected.
//!
//! In both families a (frame, band) pair with no ground-truth object counts
//! once on the empty/empty diagonal entry. Predictions that match no
//! annotated object are ignored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cm::{band_for_distance, ClassSet, CmMode, DistanceBands, DistanceParamCm, PropSet};
use crate::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; 0 for disjoint or merely touching boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A ground-truth annotation. `class` indexes a [`ClassSet`] and is never
/// the empty label.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame: String,
    pub bbox: BoundingBox,
    pub distance: f64,
    pub class: usize,
}

impl DetectionRecord {
    pub fn new(frame: impl Into<String>, bbox: BoundingBox, distance: f64, class: usize) -> Result<Self> {
        if !distance.is_finite() || distance <= 0.0 {
            return Err(Error::InvalidDistance(distance));
        }
        Ok(DetectionRecord {
            frame: frame.into(),
            bbox,
            distance,
            class,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub frame: String,
    pub bbox: BoundingBox,
    pub class: usize,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn new(
        frame: impl Into<String>,
        bbox: BoundingBox,
        class: usize,
        confidence: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidRecord(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(PredictionRecord {
            frame: frame.into(),
            bbox,
            class,
            confidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// For each ground-truth record, the index of its matched prediction.
    pub matched: Vec<Option<usize>>,
    /// Predictions left without a ground-truth partner.
    pub unmatched_predictions: Vec<usize>,
}

impl MatchResult {
    /// Predicted class of ground truth `gt`, `None` when it was missed.
    pub fn predicted_class(&self, gt: usize, preds: &[PredictionRecord]) -> Option<usize> {
        self.matched[gt].map(|p| preds[p].class)
    }
}

/// Greedy matching of one frame: predictions in descending confidence each
/// take the unmatched ground truth with the highest IoU at or above the
/// threshold. Equal confidences keep input order, equal IoUs prefer the
/// lower ground-truth index.
pub fn match_frame(
    gts: &[DetectionRecord],
    preds: &[PredictionRecord],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));

    let mut matched = vec![None; gts.len()];
    let mut unmatched_predictions = Vec::new();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g].is_some() {
                continue;
            }
            let overlap = iou(&gt.bbox, &preds[p].bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        match best {
            Some((g, _)) => matched[g] = Some(p),
            None => unmatched_predictions.push(p),
        }
    }
    unmatched_predictions.sort_unstable();
    MatchResult {
        matched,
        unmatched_predictions,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub token: String,
    pub ground_truth: Vec<DetectionRecord>,
    pub predictions: Vec<PredictionRecord>,
}

/// Records grouped by frame, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    frames: Vec<Frame>,
}

impl Corpus {
    /// Groups records by frame token. `empty_frames` lists frames that exist
    /// but carry no annotations; they still contribute to the empty column.
    pub fn from_records<I>(
        ground_truth: Vec<DetectionRecord>,
        predictions: Vec<PredictionRecord>,
        empty_frames: I,
    ) -> Self
    where
        I: IntoIterator<Item = String>,
    {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut frames: Vec<Frame> = Vec::new();
        let mut slot = |token: &str, frames: &mut Vec<Frame>| -> usize {
            if let Some(&i) = index.get(token) {
                return i;
            }
            frames.push(Frame {
                token: token.into(),
                ..Frame::default()
            });
            index.insert(token.into(), frames.len() - 1);
            frames.len() - 1
        };
        for gt in ground_truth {
            let i = slot(&gt.frame, &mut frames);
            frames[i].ground_truth.push(gt);
        }
        for token in empty_frames {
            slot(&token, &mut frames);
        }
        for p in predictions {
            let i = slot(&p.frame, &mut frames);
            frames[i].predictions.push(p);
        }
        Corpus { frames }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    fn check_classes(&self, classes: &ClassSet) -> Result<()> {
        for f in &self.frames {
            let bad = f
                .ground_truth
                .iter()
                .map(|g| g.class)
                .chain(f.predictions.iter().map(|p| p.class))
                .find(|&c| c >= classes.len());
            if let Some(c) = bad {
                return Err(Error::InvalidRecord(format!(
                    "class index {c} in frame `{}` is outside the class set",
                    f.token
                )));
            }
        }
        Ok(())
    }
}

/// Per-object tally: `counts[predicted class or emp, true class]` in the band
/// of the object's distance.
pub fn build_class_cm(
    corpus: &Corpus,
    classes: &ClassSet,
    bands: &DistanceBands,
    iou_threshold: f64,
) -> Result<DistanceParamCm> {
    corpus.check_classes(classes)?;
    let mut dp = DistanceParamCm::zeros(bands.clone(), CmMode::Class, classes.clone())?;
    let emp = classes.len();
    for frame in corpus.frames() {
        let m = match_frame(&frame.ground_truth, &frame.predictions, iou_threshold);
        let mut occupied = vec![false; bands.len()];
        for (g, gt) in frame.ground_truth.iter().enumerate() {
            let k = band_for_distance(bands, gt.distance)?;
            occupied[k] = true;
            let predicted = m.predicted_class(g, &frame.predictions).unwrap_or(emp);
            dp.band_mut(k).add(predicted, gt.class, 1);
        }
        for (k, _) in occupied.iter().enumerate().filter(|(_, o)| !**o) {
            dp.band_mut(k).add(emp, emp, 1);
        }
    }
    Ok(dp)
}

/// Per-(frame, band) tally: `counts[detected proposition set, true set]`.
pub fn build_prop_cm(
    corpus: &Corpus,
    classes: &ClassSet,
    bands: &DistanceBands,
    iou_threshold: f64,
) -> Result<DistanceParamCm> {
    corpus.check_classes(classes)?;
    let mut dp = DistanceParamCm::zeros(bands.clone(), CmMode::Prop, classes.clone())?;
    for frame in corpus.frames() {
        let m = match_frame(&frame.ground_truth, &frame.predictions, iou_threshold);
        let mut truth = vec![PropSet::EMPTY; bands.len()];
        let mut seen = vec![PropSet::EMPTY; bands.len()];
        for (g, gt) in frame.ground_truth.iter().enumerate() {
            let k = band_for_distance(bands, gt.distance)?;
            truth[k] = truth[k].with(gt.class);
            if let Some(c) = m.predicted_class(g, &frame.predictions) {
                seen[k] = seen[k].with(c);
            }
        }
        for k in 0..bands.len() {
            let cm = dp.band_mut(k);
            let (i, j) = (cm.prop_index(seen[k]), cm.prop_index(truth[k]));
            cm.add(i, j, 1);
        }
    }
    Ok(dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gt(frame: &str, b: BoundingBox, d: f64, class: usize) -> DetectionRecord {
        DetectionRecord::new(frame, b, d, class).unwrap()
    }

    fn pred(frame: &str, b: BoundingBox, class: usize, conf: f64) -> PredictionRecord {
        PredictionRecord::new(frame, b, class, conf).unwrap()
    }

    fn classes() -> ClassSet {
        ClassSet::new(["ped", "obs"]).unwrap()
    }

    fn tens() -> DistanceBands {
        DistanceBands::uniform(10.0, 10).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
        assert!(DetectionRecord::new("f", bx(0.0, 0.0, 1.0, 1.0), 0.0, 0).is_err());
        assert!(PredictionRecord::new("f", bx(0.0, 0.0, 1.0, 1.0), 0, 1.5).is_err());
    }

    #[test]
    fn match_threshold() {
        let g = [gt("f", bx(0.0, 0.0, 10.0, 10.0), 5.0, 0)];
        // IoU 0.8
        let p = [pred("f", bx(0.0, 0.0, 10.0, 8.0), 0, 0.9)];
        let m = match_frame(&g, &p, 0.5);
        assert_eq!(m.matched, [Some(0)]);
        // IoU 0.3
        let p = [pred("f", bx(0.0, 0.0, 10.0, 3.0), 0, 0.9)];
        let m = match_frame(&g, &p, 0.5);
        assert_eq!(m.matched, [None]);
        assert_eq!(m.unmatched_predictions, [0]);
    }

    #[test]
    fn greedy_takes_the_higher_overlap() {
        let p = [pred("f", bx(0.0, 0.0, 10.0, 9.0), 1, 0.7)];
        let g = [
            gt("f", bx(0.0, 0.0, 10.0, 6.3), 5.0, 0),
            gt("f", bx(0.0, 0.0, 10.0, 10.0), 5.0, 0),
        ];
        let overlaps: Vec<f64> = g.iter().map(|g| iou(&g.bbox, &p[0].bbox)).collect();
        assert!((overlaps[0] - 0.7).abs() < 1e-12);
        assert!((overlaps[1] - 0.9).abs() < 1e-12);
        // Enumerate both single-edge assignments; greedy must realize the better one.
        let best = (0..g.len())
            .max_by(|&a, &b| overlaps[a].total_cmp(&overlaps[b]))
            .unwrap();
        let m = match_frame(&g, &p, 0.5);
        assert_eq!(m.matched[best], Some(0));
        assert_eq!(m.matched[1 - best], None);
    }

    #[test]
    fn confidence_order_decides_contested_ground_truth() {
        let g = [gt("f", bx(0.0, 0.0, 10.0, 10.0), 5.0, 0)];
        let p = [
            pred("f", bx(0.0, 0.0, 10.0, 10.0), 1, 0.4),
            pred("f", bx(0.0, 0.0, 10.0, 9.0), 0, 0.9),
        ];
        let m = match_frame(&g, &p, 0.5);
        assert_eq!(m.matched, [Some(1)]);
        assert_eq!(m.unmatched_predictions, [0]);
    }

    #[test]
    fn equal_overlap_prefers_lower_index() {
        let g = [
            gt("f", bx(0.0, 0.0, 10.0, 10.0), 5.0, 0),
            gt("f", bx(0.0, 0.0, 10.0, 10.0), 5.0, 1),
        ];
        let p = [pred("f", bx(0.0, 0.0, 10.0, 10.0), 0, 0.5)];
        assert_eq!(match_frame(&g, &p, 0.5).matched, [Some(0), None]);
    }

    #[test]
    fn class_cm_single_object() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let corpus = Corpus::from_records(vec![gt("f", b, 5.0, 0)], vec![pred("f", b, 0, 0.9)], []);
        let dp = build_class_cm(&corpus, &classes(), &tens(), 0.5).unwrap();
        let band0 = dp.band(0);
        assert_eq!(band0.count(0, 0), 1);
        // Every other band of this frame is empty.
        assert_eq!(band0.total(), 1);
        for k in 1..10 {
            assert_eq!(dp.band(k).count(2, 2), 1);
            assert_eq!(dp.band(k).total(), 1);
        }

        let missed = Corpus::from_records(vec![gt("f", b, 5.0, 0)], vec![], []);
        let dp = build_class_cm(&missed, &classes(), &tens(), 0.5).unwrap();
        assert_eq!(dp.band(0).count(2, 0), 1);
        assert_eq!(dp.band(0).total(), 1);
    }

    #[test]
    fn prop_cm_examples() {
        let ped_box = bx(0.0, 0.0, 10.0, 10.0);
        let obs_box = bx(50.0, 0.0, 60.0, 10.0);
        let only_ped = Corpus::from_records(vec![gt("f", ped_box, 5.0, 0)], vec![], []);
        let dp = build_prop_cm(&only_ped, &classes(), &tens(), 0.5).unwrap();
        let cm = dp.band(0);
        let (e, p) = (cm.prop_index(PropSet::EMPTY), cm.prop_index(PropSet::singleton(0)));
        assert_eq!(cm.count(e, p), 1);
        assert_eq!(cm.total(), 1);

        let both = Corpus::from_records(
            vec![gt("f", ped_box, 5.0, 0), gt("f", obs_box, 7.0, 1)],
            vec![pred("f", obs_box, 1, 0.8)],
            [],
        );
        let dp = build_prop_cm(&both, &classes(), &tens(), 0.5).unwrap();
        let cm = dp.band(0);
        let all = PropSet::singleton(0).with(1);
        assert_eq!(cm.count(cm.prop_index(PropSet::singleton(1)), cm.prop_index(all)), 1);
        for k in 0..10 {
            assert_eq!(dp.band(k).total(), 1);
        }
    }

    #[test]
    fn spurious_detections_on_empty_frames_are_ignored() {
        let corpus = Corpus::from_records(
            vec![],
            vec![pred("f", bx(0.0, 0.0, 1.0, 1.0), 0, 0.99)],
            ["g".into()],
        );
        let class = build_class_cm(&corpus, &classes(), &tens(), 0.5).unwrap();
        let prop = build_prop_cm(&corpus, &classes(), &tens(), 0.5).unwrap();
        for k in 0..10 {
            assert_eq!(class.band(k).count(2, 2), 2);
            assert_eq!(class.band(k).total(), 2);
            assert_eq!(prop.band(k).count(3, 3), 2);
        }
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let corpus =
            Corpus::from_records(vec![gt("f", bx(0.0, 0.0, 1.0, 1.0), 5.0, 7)], vec![], []);
        assert!(build_class_cm(&corpus, &classes(), &tens(), 0.5).is_err());
    }
}
