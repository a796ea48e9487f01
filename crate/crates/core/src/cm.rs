//! Label spaces, confusion matrices and distance banding.
//!
//! A [`ConfusionMatrix`] is indexed `[predicted, true]`. Two label spaces are
//! supported, selected by [`CmMode`]:
//!
//! * `Class`: one label per object class followed by the reserved empty label
//!   `emp`, which absorbs missed detections.
//! * `Prop`: one label per subset of the class propositions ("an object of
//!   class c is present"). Non-empty subsets come first, ordered by
//!   cardinality and then lexicographically by class index; the empty subset
//!   plays the role of `emp` and is always last.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Reserved name of the "no object" class.
pub const EMPTY_LABEL: &str = "emp";

/// Proposition-labeled matrices enumerate all subsets; keep that enumerable.
pub const MAX_PROP_CLASSES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmMode {
    Class,
    Prop,
}

impl CmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CmMode::Class => "class",
            CmMode::Prop => "prop",
        }
    }
}

impl fmt::Display for CmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for CmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(CmMode::Class),
            "prop" => Ok(CmMode::Prop),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected `class` or `prop`)"
            ))),
        }
    }
}

/// Ordered set of object classes, excluding the reserved `emp` class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidLabels("class set is empty".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty()
                || name
                    .chars()
                    .any(|c| c.is_whitespace() || matches!(c, ',' | '+' | '{' | '}'))
            {
                return Err(Error::InvalidLabels(format!("invalid class name `{name}`")));
            }
            if name == EMPTY_LABEL {
                return Err(Error::InvalidLabels(format!(
                    "`{EMPTY_LABEL}` is reserved and implicit"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidLabels(format!("duplicate class `{name}`")));
            }
        }
        Ok(ClassSet { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Index of a class, or of `emp` (== `len()`) for the reserved label.
    pub fn label_index(&self, name: &str) -> Result<usize> {
        if name == EMPTY_LABEL {
            return Ok(self.len());
        }
        self.index_of(name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    /// Name of a class-label index, with `len()` mapping to `emp`.
    pub fn label_name(&self, index: usize) -> &str {
        if index == self.len() {
            EMPTY_LABEL
        } else {
            &self.names[index]
        }
    }
}

/// A subset of the class propositions, stored as a bit mask over class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PropSet(u32);

impl PropSet {
    pub const EMPTY: PropSet = PropSet(0);

    pub fn from_bits(bits: u32) -> Self {
        PropSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn singleton(class: usize) -> Self {
        PropSet(1 << class)
    }

    pub fn with(self, class: usize) -> Self {
        PropSet(self.0 | (1 << class))
    }

    pub fn contains(self, class: usize) -> bool {
        self.0 & (1 << class) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |i| bits & (1 << i) != 0)
    }
}

/// All subsets of `n` propositions in canonical order (empty subset last).
pub fn canonical_prop_order(n: usize) -> Vec<PropSet> {
    assert!(n <= MAX_PROP_CLASSES);
    let mut sets: Vec<PropSet> = (1u32..(1u32 << n)).map(PropSet).collect();
    sets.sort_by(|a, b| {
        a.len()
            .cmp(&b.len())
            .then_with(|| a.members().cmp(b.members()))
    });
    sets.push(PropSet::EMPTY);
    sets
}

/// Strictly increasing band edges in meters. Band `k` covers
/// `(edges[k-1], edges[k]]`, band 0 covers `(0, edges[0]]`, and anything
/// beyond the last edge is clamped into the last band.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBands {
    edges: Vec<f64>,
}

impl DistanceBands {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidBands("no band edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::InvalidBands(
                "edges must be finite and positive".into(),
            ));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBands(
                "edges must be strictly increasing".into(),
            ));
        }
        Ok(DistanceBands { edges })
    }

    /// Evenly spaced edges `step, 2*step, ..., count*step`.
    pub fn uniform(step: f64, count: usize) -> Result<Self> {
        Self::new((1..=count).map(|i| step * i as f64).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

pub fn band_for_distance(bands: &DistanceBands, d: f64) -> Result<usize> {
    if !d.is_finite() || d <= 0.0 {
        return Err(Error::InvalidDistance(d));
    }
    let k = bands.edges.partition_point(|&edge| edge < d);
    Ok(k.min(bands.len() - 1))
}

/// How to normalize a column that has no observations at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroColumnPolicy {
    #[default]
    Strict,
    /// Treat an unobserved configuration as a guaranteed miss: point mass on
    /// the empty label.
    EmptyFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    mode: CmMode,
    classes: ClassSet,
    counts: Vec<u64>,
    prop_order: Vec<PropSet>,
}

impl ConfusionMatrix {
    pub fn zeros(mode: CmMode, classes: ClassSet) -> Result<Self> {
        let prop_order = match mode {
            CmMode::Class => Vec::new(),
            CmMode::Prop => {
                if classes.len() > MAX_PROP_CLASSES {
                    return Err(Error::InvalidLabels(format!(
                        "at most {MAX_PROP_CLASSES} propositions are supported"
                    )));
                }
                canonical_prop_order(classes.len())
            }
        };
        let dim = match mode {
            CmMode::Class => classes.len() + 1,
            CmMode::Prop => prop_order.len(),
        };
        Ok(ConfusionMatrix {
            mode,
            classes,
            counts: vec![0; dim * dim],
            prop_order,
        })
    }

    /// Row-major counts, row = predicted label, column = true label.
    pub fn from_counts(mode: CmMode, classes: ClassSet, counts: Vec<u64>) -> Result<Self> {
        let mut cm = Self::zeros(mode, classes)?;
        if counts.len() != cm.counts.len() {
            return Err(Error::Shape {
                expected: cm.counts.len(),
                found: counts.len(),
            });
        }
        cm.counts = counts;
        Ok(cm)
    }

    /// Perfect perception: `n` on every diagonal entry.
    pub fn identity(mode: CmMode, classes: ClassSet, n: u64) -> Result<Self> {
        let mut cm = Self::zeros(mode, classes)?;
        for i in 0..cm.dim() {
            cm.add(i, i, n);
        }
        Ok(cm)
    }

    pub fn mode(&self) -> CmMode {
        self.mode
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            CmMode::Class => self.classes.len() + 1,
            CmMode::Prop => self.prop_order.len(),
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted * self.dim() + truth]
    }

    pub fn add(&mut self, predicted: usize, truth: usize, n: u64) {
        let dim = self.dim();
        self.counts[predicted * dim + truth] += n;
    }

    pub fn column_sum(&self, truth: usize) -> u64 {
        (0..self.dim()).map(|i| self.count(i, truth)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of `emp` (class mode) or of the empty subset (prop mode).
    pub fn empty_index(&self) -> usize {
        self.dim() - 1
    }

    pub fn same_space(&self, other: &ConfusionMatrix) -> bool {
        self.mode == other.mode && self.classes == other.classes
    }

    /// Label index of a proposition set. Only meaningful in prop mode.
    pub fn prop_index(&self, set: PropSet) -> usize {
        debug_assert_eq!(self.mode, CmMode::Prop);
        self.prop_order
            .iter()
            .position(|&s| s == set)
            .expect("proposition set outside the label space")
    }

    pub fn prop_at(&self, index: usize) -> PropSet {
        self.prop_order[index]
    }

    pub fn label_name(&self, index: usize) -> String {
        match self.mode {
            CmMode::Class => self.classes.label_name(index).to_string(),
            CmMode::Prop => {
                let set = self.prop_order[index];
                let mut out = String::from("{");
                for (n, member) in set.members().enumerate() {
                    if n > 0 {
                        out.push('+');
                    }
                    out.push_str(self.classes.name(member));
                }
                out.push('}');
                out
            }
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| self.label_name(i)).collect()
    }

    /// Inverse of [`label_name`](Self::label_name). In prop mode `emp` is
    /// accepted as an alias of `{}`.
    pub fn label_index(&self, name: &str) -> Result<usize> {
        match self.mode {
            CmMode::Class => self.classes.label_index(name),
            CmMode::Prop => {
                let set = parse_prop_label(&self.classes, name)?;
                Ok(self.prop_index(set))
            }
        }
    }
}

fn parse_prop_label(classes: &ClassSet, name: &str) -> Result<PropSet> {
    if name == EMPTY_LABEL {
        return Ok(PropSet::EMPTY);
    }
    let inner = name
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| Error::UnknownLabel(name.to_string()))?;
    let mut set = PropSet::EMPTY;
    if inner.is_empty() {
        return Ok(set);
    }
    for member in inner.split('+') {
        let idx = classes
            .index_of(member)
            .ok_or_else(|| Error::UnknownLabel(member.to_string()))?;
        if set.contains(idx) {
            return Err(Error::UnknownLabel(name.to_string()));
        }
        set = set.with(idx);
    }
    Ok(set)
}

/// One confusion matrix per distance band, all over the same label space.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceParamCm {
    bands: DistanceBands,
    per_band: Vec<ConfusionMatrix>,
}

impl DistanceParamCm {
    pub fn new(bands: DistanceBands, per_band: Vec<ConfusionMatrix>) -> Result<Self> {
        if per_band.len() != bands.len() {
            return Err(Error::Shape {
                expected: bands.len(),
                found: per_band.len(),
            });
        }
        if per_band.windows(2).any(|w| !w[0].same_space(&w[1])) {
            return Err(Error::LabelMismatch);
        }
        Ok(DistanceParamCm { bands, per_band })
    }

    pub fn zeros(bands: DistanceBands, mode: CmMode, classes: ClassSet) -> Result<Self> {
        let empty = ConfusionMatrix::zeros(mode, classes)?;
        let per_band = vec![empty; bands.len()];
        Ok(DistanceParamCm { bands, per_band })
    }

    pub fn bands(&self) -> &DistanceBands {
        &self.bands
    }

    pub fn per_band(&self) -> &[ConfusionMatrix] {
        &self.per_band
    }

    pub fn band(&self, k: usize) -> &ConfusionMatrix {
        &self.per_band[k]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut ConfusionMatrix {
        &mut self.per_band[k]
    }

    pub fn mode(&self) -> CmMode {
        self.per_band[0].mode()
    }

    pub fn classes(&self) -> &ClassSet {
        self.per_band[0].classes()
    }
}

/// Detection probabilities `P(predicted = i | true = j)` for one true label.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDistribution {
    true_label: usize,
    probs: Vec<f64>,
}

impl ColumnDistribution {
    pub fn true_label(&self) -> usize {
        self.true_label
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, predicted: usize) -> f64 {
        self.probs[predicted]
    }
}

pub fn normalize_column(
    cm: &ConfusionMatrix,
    truth: usize,
    policy: ZeroColumnPolicy,
) -> Result<ColumnDistribution> {
    if truth >= cm.dim() {
        return Err(Error::LabelNotInSpace(format!("#{truth}")));
    }
    let total = cm.column_sum(truth);
    if total == 0 {
        return match policy {
            ZeroColumnPolicy::Strict => Err(Error::ZeroColumn(cm.label_name(truth))),
            ZeroColumnPolicy::EmptyFallback => {
                let mut probs = vec![0.0; cm.dim()];
                probs[cm.empty_index()] = 1.0;
                Ok(ColumnDistribution {
                    true_label: truth,
                    probs,
                })
            }
        };
    }
    let total = total as f64;
    let probs = (0..cm.dim())
        .map(|i| cm.count(i, truth) as f64 / total)
        .collect();
    Ok(ColumnDistribution {
        true_label: truth,
        probs,
    })
}

/// Elementwise sum of matrices over one label space.
pub fn sum_matrices(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let (first, rest) = matrices
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
    let mut out = first.clone();
    for cm in rest {
        if !cm.same_space(&out) {
            return Err(Error::LabelMismatch);
        }
        for (acc, c) in out.counts.iter_mut().zip(&cm.counts) {
            *acc += c;
        }
    }
    Ok(out)
}

/// Collapse a distance-parametrized family into a single matrix.
pub fn aggregate(dp: &DistanceParamCm) -> Result<ConfusionMatrix> {
    sum_matrices(&dp.per_band)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassSet {
        ClassSet::new(["ped", "obs"]).unwrap()
    }

    fn tens() -> DistanceBands {
        DistanceBands::uniform(10.0, 10).unwrap()
    }

    #[test]
    fn band_lookup() {
        let b = tens();
        assert_eq!(band_for_distance(&b, 9.5).unwrap(), 0);
        assert_eq!(band_for_distance(&b, 10.0).unwrap(), 0);
        assert_eq!(band_for_distance(&b, 10.000001).unwrap(), 1);
        assert_eq!(band_for_distance(&b, 100.0).unwrap(), 9);
        assert_eq!(band_for_distance(&b, 250.0).unwrap(), 9);
        assert_eq!(band_for_distance(&b, 1e-9).unwrap(), 0);
    }

    #[test]
    fn band_lookup_rejects_bad_distances() {
        let b = tens();
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                band_for_distance(&b, d),
                Err(Error::InvalidDistance(_))
            ));
        }
    }

    #[test]
    fn bands_validate() {
        assert!(DistanceBands::new(vec![]).is_err());
        assert!(DistanceBands::new(vec![10.0, 10.0]).is_err());
        assert!(DistanceBands::new(vec![0.0, 10.0]).is_err());
        assert!(DistanceBands::new(vec![20.0, 10.0]).is_err());
    }

    #[test]
    fn class_set_rejects_reserved_and_duplicates() {
        assert!(ClassSet::new(["ped", "emp"]).is_err());
        assert!(ClassSet::new(["ped", "ped"]).is_err());
        assert!(ClassSet::new(["a,b"]).is_err());
        assert!(ClassSet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn prop_order_matches_table_layout() {
        let cm = ConfusionMatrix::zeros(CmMode::Prop, classes()).unwrap();
        assert_eq!(cm.label_names(), ["{ped}", "{obs}", "{ped+obs}", "{}"]);
        assert_eq!(cm.label_index("emp").unwrap(), 3);
        assert_eq!(cm.label_index("{ped+obs}").unwrap(), 2);
        assert!(cm.label_index("{obs+obs}").is_err());
        assert!(cm.label_index("{car}").is_err());

        let order = canonical_prop_order(3);
        assert_eq!(order.len(), 8);
        let bits: Vec<u32> = order.iter().map(|s| s.bits()).collect();
        assert_eq!(bits, [0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111, 0]);
    }

    #[test]
    fn class_labels_put_emp_last() {
        let cm = ConfusionMatrix::zeros(CmMode::Class, classes()).unwrap();
        assert_eq!(cm.label_names(), ["ped", "obs", "emp"]);
        assert_eq!(cm.empty_index(), 2);
    }

    #[test]
    fn normalize_class_ped_column() {
        let cm = ConfusionMatrix::from_counts(
            CmMode::Class,
            classes(),
            vec![31, 0, 0, 0, 191, 0, 127, 734, 3227],
        )
        .unwrap();
        let col = normalize_column(&cm, 0, ZeroColumnPolicy::Strict).unwrap();
        assert!((col.prob(0) - 31.0 / 158.0).abs() < 1e-12);
        assert_eq!(col.prob(1), 0.0);
        assert!((col.prob(2) - 127.0 / 158.0).abs() < 1e-12);
        assert!((col.prob(0) - 0.196203).abs() < 1e-6);
    }

    #[test]
    fn normalize_identity_is_point_mass() {
        let cm = ConfusionMatrix::identity(CmMode::Class, classes(), 5).unwrap();
        for j in 0..3 {
            let col = normalize_column(&cm, j, ZeroColumnPolicy::Strict).unwrap();
            for i in 0..3 {
                assert_eq!(col.prob(i), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_column_policy() {
        let cm = ConfusionMatrix::zeros(CmMode::Class, classes()).unwrap();
        assert!(matches!(
            normalize_column(&cm, 0, ZeroColumnPolicy::Strict),
            Err(Error::ZeroColumn(label)) if label == "ped"
        ));
        let col = normalize_column(&cm, 0, ZeroColumnPolicy::EmptyFallback).unwrap();
        assert_eq!(col.probs(), [0.0, 0.0, 1.0]);
        assert!(normalize_column(&cm, 3, ZeroColumnPolicy::Strict).is_err());
    }

    #[test]
    fn aggregate_sums_elementwise() {
        let a = ConfusionMatrix::from_counts(CmMode::Class, classes(), (0..9).collect()).unwrap();
        let b = ConfusionMatrix::from_counts(CmMode::Class, classes(), vec![1; 9]).unwrap();
        let dp = DistanceParamCm::new(
            DistanceBands::new(vec![10.0, 20.0]).unwrap(),
            vec![a.clone(), b],
        )
        .unwrap();
        let agg = aggregate(&dp).unwrap();
        let expected: Vec<u64> = (1..10).collect();
        assert_eq!(agg.counts(), &expected[..]);

        let single =
            DistanceParamCm::new(DistanceBands::new(vec![10.0]).unwrap(), vec![a.clone()]).unwrap();
        assert_eq!(aggregate(&single).unwrap(), a);
    }

    #[test]
    fn aggregate_rejects_mismatched_spaces() {
        let a = ConfusionMatrix::zeros(CmMode::Class, classes()).unwrap();
        let b = ConfusionMatrix::zeros(CmMode::Class, ClassSet::new(["ped", "car"]).unwrap())
            .unwrap();
        assert_eq!(sum_matrices(&[a.clone(), b.clone()]), Err(Error::LabelMismatch));
        let bands = DistanceBands::new(vec![10.0, 20.0]).unwrap();
        assert_eq!(
            DistanceParamCm::new(bands, vec![a, b]),
            Err(Error::LabelMismatch)
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_columns_are_distributions(counts in prop::collection::vec(0u64..1000, 16)) {
                let cm = ConfusionMatrix::from_counts(CmMode::Prop, classes(), counts).unwrap();
                for j in 0..cm.dim() {
                    match normalize_column(&cm, j, ZeroColumnPolicy::Strict) {
                        Ok(col) => {
                            let s: f64 = col.probs().iter().sum();
                            prop_assert!((s - 1.0).abs() < 1e-12);
                            prop_assert!(col.probs().iter().all(|p| (0.0..=1.0).contains(p)));
                        }
                        Err(_) => prop_assert_eq!(cm.column_sum(j), 0),
                    }
                }
            }

            #[test]
            fn aggregate_commutes_with_column_sums(
                a in prop::collection::vec(0u64..500, 9),
                b in prop::collection::vec(0u64..500, 9),
                c in prop::collection::vec(0u64..500, 9),
            ) {
                let mats: Vec<_> = [a, b, c]
                    .into_iter()
                    .map(|v| ConfusionMatrix::from_counts(CmMode::Class, classes(), v).unwrap())
                    .collect();
                let dp = DistanceParamCm::new(
                    DistanceBands::new(vec![5.0, 15.0, 40.0]).unwrap(),
                    mats.clone(),
                ).unwrap();
                let agg = aggregate(&dp).unwrap();
                for j in 0..3 {
                    let per: u64 = mats.iter().map(|m| m.column_sum(j)).sum();
                    prop_assert_eq!(agg.column_sum(j), per);
                }
            }

            #[test]
            fn band_lookup_is_total_and_monotone(x in 1e-6f64..1e4, y in 1e-6f64..1e4) {
                let b = tens();
                let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
                let klo = band_for_distance(&b, lo).unwrap();
                let khi = band_for_distance(&b, hi).unwrap();
                prop_assert!(klo <= khi);
                prop_assert!(khi < b.len());
            }
        }
    }
}
