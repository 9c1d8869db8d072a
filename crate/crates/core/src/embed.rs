//! Genetic-distance representation head.
//!
//! A species' embedding is its row of the genetic distance matrix: the model
//! regresses each image onto the row of its species (or classifies with
//! plain cross-entropy, reusing the pre-softmax vector as the embedding).
//! Classification compares a predicted embedding against every row of the
//! diagonal-zero reference matrix; the resulting per-class distance vector is
//! the label embedding and its argmin is the predicted class.
//!
//! Target construction order: subset filter, then min-max normalization over
//! the off-diagonal entries, then the diagonal override. Training against a
//! diagonal of -1 while classifying against the diagonal-0 reference pushes
//! the self-component of a fitted embedding below every cross-distance,
//! which separates classes under cosine distance.

use alloc::string::String;
use alloc::vec::Vec;

// Float provides sqrt/abs on f64 in no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::element::Element;
use crate::genetics::GeneticDistanceMatrix;
use crate::tensor::{self, cross_entropy, mae_mean, mse_mean, mse_sum, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("embed: width mismatch: prediction has {got} components, reference {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("embed: subset needs at least 2 species, got {0}")]
    SubsetTooSmall(usize),
    #[error("embed: degenerate embedding (zero norm) under cosine distance")]
    DegenerateEmbedding,
    #[error("embed: class {0} has no samples")]
    EmptyClass(usize),
    #[error("embed: class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error(transparent)]
    Genetics(#[from] crate::genetics::Error),
    #[error(transparent)]
    Tensor(#[from] tensor::Error),
}

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalize {
    None,
    /// Min-max over off-diagonal entries to `[0, 1]`; the diagonal is left
    /// untouched (overrides happen afterwards).
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadVariant {
    /// Cross-entropy on class labels; the pre-softmax vector doubles as the
    /// distance embedding.
    Softmax,
    /// Sum of squared errors against the target row ("MSE-S").
    MseSum,
    /// Mean squared error against the target row ("MSE-A").
    MseMean,
    /// Mean absolute error against the target row.
    Mae,
}

impl HeadVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadVariant::Softmax => "softmax",
            HeadVariant::MseSum => "mse_sum",
            HeadVariant::MseMean => "mse_mean",
            HeadVariant::Mae => "mae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softmax" => Some(HeadVariant::Softmax),
            "mse_sum" => Some(HeadVariant::MseSum),
            "mse_mean" => Some(HeadVariant::MseMean),
            "mae" => Some(HeadVariant::Mae),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMetric {
    Cosine,
    Euclidean,
}

impl DistanceMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(DistanceMetric::Cosine),
            "euclidean" => Some(DistanceMetric::Euclidean),
            _ => None,
        }
    }
}

/// How an [`EmbeddingTargetSet`] was derived from its source matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingRecord {
    pub normalize: Normalize,
    pub diag_override: Option<f64>,
    pub subset: Option<Vec<String>>,
}

/// Per-species regression targets: row `i` is the processed distance row of
/// species `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTargetSet {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    processing: ProcessingRecord,
}

impl EmbeddingTargetSet {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn target(&self, class: usize) -> Result<&[f64]> {
        self.rows
            .get(class)
            .map(Vec::as_slice)
            .ok_or(Error::ClassOutOfRange {
                index: class,
                classes: self.k(),
            })
    }

    pub fn processing(&self) -> &ProcessingRecord {
        &self.processing
    }

    /// Targets as a matrix-layout CSV.
    pub fn to_csv(&self) -> String {
        crate::genetics::matrix_csv(&self.names, |i, j| self.rows[i][j])
    }
}

/// Derive regression targets from a distance matrix: subset filter first,
/// then optional min-max over off-diagonal entries, then diagonal override.
pub fn build_targets(
    source: &GeneticDistanceMatrix,
    normalize: Normalize,
    diag_override: Option<f64>,
    subset: Option<&[String]>,
) -> Result<EmbeddingTargetSet> {
    let matrix = match subset {
        Some(keep) => {
            if keep.len() < 2 {
                return Err(Error::SubsetTooSmall(keep.len()));
            }
            source.submatrix(keep)?
        }
        None => source.clone(),
    };
    let k = matrix.size();
    let mut rows: Vec<Vec<f64>> = (0..k).map(|i| matrix.row(i).to_vec()).collect();

    if normalize == Normalize::MinMax && k > 1 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        let span = hi - lo;
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
                }
            }
        }
    }

    if let Some(d) = diag_override {
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = d;
        }
    }

    Ok(EmbeddingTargetSet {
        names: matrix.names().to_vec(),
        rows,
        processing: ProcessingRecord {
            normalize,
            diag_override,
            subset: subset.map(<[String]>::to_vec),
        },
    })
}

/// Loss of a batch of predictions `[N, k]` against the target rows of their
/// true classes (mean over the batch for the per-sample variants).
pub fn head_loss<T: Element>(
    pred: &Tensor<T>,
    classes: &[usize],
    targets: &EmbeddingTargetSet,
    variant: HeadVariant,
) -> Result<Tensor<T>> {
    let (n, k) = pred.dims2("head_loss")?;
    if k != targets.k() {
        return Err(Error::WidthMismatch {
            got: k,
            expected: targets.k(),
        });
    }
    if classes.len() != n {
        return Err(Error::WidthMismatch {
            got: classes.len(),
            expected: n,
        });
    }
    if variant == HeadVariant::Softmax {
        return Ok(cross_entropy(pred, classes)?);
    }
    let mut target_data = Vec::with_capacity(n * k);
    for &c in classes {
        for &v in targets.target(c)? {
            target_data.push(T::cast(v));
        }
    }
    let target = Tensor::from_vec(&[n, k], target_data)?;
    let loss = match variant {
        HeadVariant::MseSum => {
            // per-sample sum of squares, averaged over the batch
            let total = mse_sum(pred, &target)?;
            if n == 1 {
                total
            } else {
                scale_scalar(&total, 1.0 / n as f64)?
            }
        }
        HeadVariant::MseMean => mse_mean(pred, &target)?,
        HeadVariant::Mae => mae_mean(pred, &target)?,
        HeadVariant::Softmax => unreachable!(),
    };
    Ok(loss)
}

/// Multiply a scalar tensor by a constant, keeping the graph.
fn scale_scalar<T: Element>(x: &Tensor<T>, factor: f64) -> tensor::Result<Tensor<T>> {
    let f = T::cast(factor);
    Tensor::from_op(
        "scale_scalar",
        alloc::vec![1],
        alloc::vec![x.item()? * f],
        alloc::vec![x.clone()],
        alloc::boxed::Box::new(move |args| {
            let p = &args.parents[0];
            if p.wants_grad() {
                p.accumulate_grad(alloc::vec![args.out_grad[0] * f]);
            }
            Ok(())
        }),
    )
}

/// Cosine distance `1 - a.b / (|a||b|)`; errors on zero norms.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance of the prediction to every row of the diagonal-zero reference
/// matrix (the label embedding), and the argmin class. Ties break to the
/// lowest class index.
pub fn classify_by_distance(
    pred: &[f64],
    reference: &GeneticDistanceMatrix,
    metric: DistanceMetric,
) -> Result<(usize, Vec<f64>)> {
    let k = reference.size();
    if pred.len() != k {
        return Err(Error::WidthMismatch {
            got: pred.len(),
            expected: k,
        });
    }
    let mut label_embedding = Vec::with_capacity(k);
    for i in 0..k {
        let row = reference.row(i);
        let d = match metric {
            DistanceMetric::Cosine => cosine_distance(pred, row)?,
            DistanceMetric::Euclidean => euclidean_distance(pred, row),
        };
        label_embedding.push(d);
    }
    let mut best = 0usize;
    for (i, &d) in label_embedding.iter().enumerate() {
        if d < label_embedding[best] {
            best = i;
        }
    }
    Ok((best, label_embedding))
}

/// Inference configuration of the distance head.
#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub variant: HeadVariant,
    pub metric: DistanceMetric,
    /// Diagonal-zero ground truth used for label-embedding classification.
    pub reference: GeneticDistanceMatrix,
}

impl HeadConfig {
    pub fn classify(&self, pred: &[f64]) -> Result<(usize, Vec<f64>)> {
        classify_by_distance(pred, &self.reference, self.metric)
    }
}

/// Predicted distance matrix and absolute error against the trained targets.
#[derive(Debug, Clone)]
pub struct DistancePrediction {
    pub names: Vec<String>,
    /// `predicted[i][j]`: mean predicted component `j` over test images of
    /// true species `i`.
    pub predicted: Vec<Vec<f64>>,
    /// `|predicted - target|`, target diagonal as trained.
    pub abs_error: Vec<Vec<f64>>,
}

impl DistancePrediction {
    pub fn predicted_csv(&self) -> String {
        crate::genetics::matrix_csv(&self.names, |i, j| self.predicted[i][j])
    }

    pub fn error_csv(&self) -> String {
        crate::genetics::matrix_csv(&self.names, |i, j| self.abs_error[i][j])
    }
}

/// Evaluate a predictor over a labelled set: entry `(i, j)` of the predicted
/// matrix is the mean over samples of true class `i` of predicted component
/// `j`; the error matrix is the absolute difference from the targets.
///
/// `predict` maps a sample to its embedding vector; any model (or oracle)
/// fits.
pub fn evaluate_distance_prediction<S, F>(
    samples: &[(S, usize)],
    targets: &EmbeddingTargetSet,
    mut predict: F,
) -> Result<DistancePrediction>
where
    F: FnMut(&S) -> Result<Vec<f64>>,
{
    let k = targets.k();
    let mut sums = alloc::vec![alloc::vec![0.0f64; k]; k];
    let mut counts = alloc::vec![0usize; k];
    for (sample, class) in samples {
        if *class >= k {
            return Err(Error::ClassOutOfRange {
                index: *class,
                classes: k,
            });
        }
        let pred = predict(sample)?;
        if pred.len() != k {
            return Err(Error::WidthMismatch {
                got: pred.len(),
                expected: k,
            });
        }
        for (j, &v) in pred.iter().enumerate() {
            sums[*class][j] += v;
        }
        counts[*class] += 1;
    }
    let mut predicted = alloc::vec![alloc::vec![0.0f64; k]; k];
    let mut abs_error = alloc::vec![alloc::vec![0.0f64; k]; k];
    for i in 0..k {
        if counts[i] == 0 {
            return Err(Error::EmptyClass(i));
        }
        let t = targets.target(i)?;
        for j in 0..k {
            predicted[i][j] = sums[i][j] / counts[i] as f64;
            abs_error[i][j] = (predicted[i][j] - t[j]).abs();
        }
    }
    Ok(DistancePrediction {
        names: targets.names().to_vec(),
        predicted,
        abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn toy_matrix() -> GeneticDistanceMatrix {
        GeneticDistanceMatrix::from_csv(
            "species,a,b,c\na,0,0.2,0.9\nb,0.2,0,0.8\nc,0.9,0.8,0\n",
        )
        .unwrap()
    }

    #[test]
    fn diag_override_keeps_off_diagonals() {
        let text = include_str!("../../../data/mushroom18_genetic_distance.csv");
        let m = GeneticDistanceMatrix::from_csv(text).unwrap();
        let t = build_targets(&m, Normalize::None, Some(-1.0), None).unwrap();
        let i = m.index_of("Amanita pruitii").unwrap();
        let j = m.index_of("Armillaria mellea").unwrap();
        assert_eq!(t.target(i).unwrap()[j], 0.66);
        for c in 0..t.k() {
            assert_eq!(t.target(c).unwrap()[c], -1.0);
        }
    }

    #[test]
    fn subset_drops_a_species_to_17() {
        let text = include_str!("../../../data/mushroom18_genetic_distance.csv");
        let m = GeneticDistanceMatrix::from_csv(text).unwrap();
        let keep: Vec<String> = m
            .names()
            .iter()
            .filter(|n| n.as_str() != "Cantharellus cibarius")
            .cloned()
            .collect();
        let t = build_targets(&m, Normalize::None, None, Some(&keep)).unwrap();
        assert_eq!(t.k(), 17);
        assert!(!t.names().iter().any(|n| n == "Cantharellus cibarius"));
    }

    #[test]
    fn minmax_maps_offdiagonal_extremes_and_spares_diagonal() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::MinMax, None, None).unwrap();
        // off-diagonal min 0.2 -> 0, max 0.9 -> 1, diagonal untouched (0)
        assert_eq!(t.target(0).unwrap()[1], 0.0);
        assert_eq!(t.target(0).unwrap()[2], 1.0);
        assert_eq!(t.target(0).unwrap()[0], 0.0);
        assert!((t.target(1).unwrap()[2] - (0.8 - 0.2) / 0.7).abs() < 1e-12);
    }

    #[test]
    fn minmax_preserves_offdiagonal_order() {
        let m = toy_matrix();
        let plain = build_targets(&m, Normalize::None, None, None).unwrap();
        let normed = build_targets(&m, Normalize::MinMax, None, None).unwrap();
        let order = |t: &EmbeddingTargetSet| {
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        pairs.push((i, j));
                    }
                }
            }
            pairs.sort_by(|&(i1, j1), &(i2, j2)| {
                t.target(i1).unwrap()[j1]
                    .partial_cmp(&t.target(i2).unwrap()[j2])
                    .unwrap()
            });
            pairs
        };
        assert_eq!(order(&plain), order(&normed));
    }

    #[test]
    fn subset_errors() {
        let m = toy_matrix();
        assert!(matches!(
            build_targets(&m, Normalize::None, None, Some(&["a".to_string()])),
            Err(Error::SubsetTooSmall(1))
        ));
        assert!(matches!(
            build_targets(
                &m,
                Normalize::None,
                None,
                Some(&["a".to_string(), "zzz".to_string()])
            ),
            Err(Error::Genetics(crate::genetics::Error::UnknownSpecies(_)))
        ));
    }

    #[test]
    fn head_loss_exact_values() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::None, None, None).unwrap();
        // pred == target row 1 -> zero for every regression variant
        let pred =
            Tensor::<f64>::from_vec(&[1, 3], t.target(1).unwrap().to_vec()).unwrap();
        for v in [HeadVariant::MseSum, HeadVariant::MseMean, HeadVariant::Mae] {
            assert_eq!(
                head_loss(&pred, &[1], &t, v).unwrap().item().unwrap(),
                0.0
            );
        }
        // unit bump on one component
        let mut bumped = t.target(1).unwrap().to_vec();
        bumped[2] += 1.0;
        let pred = Tensor::<f64>::from_vec(&[1, 3], bumped).unwrap();
        assert_eq!(
            head_loss(&pred, &[1], &t, HeadVariant::MseSum)
                .unwrap()
                .item()
                .unwrap(),
            1.0
        );
        assert!(
            (head_loss(&pred, &[1], &t, HeadVariant::MseMean)
                .unwrap()
                .item()
                .unwrap()
                - 1.0 / 3.0)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn softmax_head_uniform_logits_loss_is_ln_k() {
        let names: Vec<String> = (0..18).map(|i| alloc::format!("s{i}")).collect();
        let m = GeneticDistanceMatrix::new(names, alloc::vec![0.0; 18 * 18]).unwrap();
        let t = build_targets(&m, Normalize::None, None, None).unwrap();
        let pred = Tensor::<f64>::zeros(&[1, 18]);
        let loss = head_loss(&pred, &[0], &t, HeadVariant::Softmax)
            .unwrap()
            .item()
            .unwrap();
        assert!((loss - (18.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn classify_exact_row_match_and_cosine_scale_invariance() {
        let m = toy_matrix();
        let (class, le) =
            classify_by_distance(m.row(1), &m, DistanceMetric::Euclidean).unwrap();
        assert_eq!(class, 1);
        assert_eq!(le[1], 0.0);

        let scaled: Vec<f64> = m.row(1).iter().map(|v| v * 2.5).collect();
        let (class, _) = classify_by_distance(&scaled, &m, DistanceMetric::Cosine).unwrap();
        assert_eq!(class, 1);
    }

    #[test]
    fn classify_toy_euclidean_matches_brute_force() {
        let m = toy_matrix();
        let pred = [0.1, 0.1, 0.85];
        let (class, le) =
            classify_by_distance(&pred, &m, DistanceMetric::Euclidean).unwrap();
        // brute force over all rows, ties to the lowest index
        let mut best = 0;
        for i in 0..3 {
            let d = euclidean_distance(&pred, m.row(i));
            assert!((d - le[i]).abs() < 1e-15);
            if d < le[best] {
                best = i;
            }
        }
        assert_eq!(class, best);
    }

    #[test]
    fn exact_ties_break_to_the_lowest_index() {
        let m = GeneticDistanceMatrix::from_csv(
            "species,a,b,c\na,0,2,8\nb,2,0,8\nc,8,8,0\n",
        )
        .unwrap();
        // equidistant from rows 0 and 1 with exactly representable values
        let pred = [1.0, 1.0, 8.0];
        let (class, le) =
            classify_by_distance(&pred, &m, DistanceMetric::Euclidean).unwrap();
        assert_eq!(le[0], le[1]);
        assert_eq!(class, 0);
    }

    #[test]
    fn zero_prediction_is_degenerate_under_cosine() {
        let m = toy_matrix();
        assert!(matches!(
            classify_by_distance(&[0.0, 0.0, 0.0], &m, DistanceMetric::Cosine),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn negative_diagonal_targets_separate_own_row_under_cosine() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::None, Some(-1.0), None).unwrap();
        for c in 0..3 {
            let fitted = t.target(c).unwrap();
            assert!(fitted[c] < 0.0);
            let (class, le) =
                classify_by_distance(fitted, &m, DistanceMetric::Cosine).unwrap();
            assert_eq!(class, c);
            for (i, &d) in le.iter().enumerate() {
                if i != c {
                    assert!(le[c] < d, "class {c}: own distance not strictly smallest");
                }
            }
        }
    }

    #[test]
    fn oracle_predictor_yields_zero_error_matrix() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::None, Some(-1.0), None).unwrap();
        let samples: Vec<((), usize)> =
            alloc::vec![((), 0), ((), 1), ((), 1), ((), 2)];
        let t2 = t.clone();
        let mut idx = 0usize;
        let classes = [0usize, 1, 1, 2];
        let result = evaluate_distance_prediction(&samples, &t, move |_| {
            let c = classes[idx];
            idx += 1;
            Ok(t2.target(c).unwrap().to_vec())
        })
        .unwrap();
        for row in &result.abs_error {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_predictor_gives_identical_prediction_rows() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::None, None, None).unwrap();
        let samples: Vec<((), usize)> = alloc::vec![((), 0), ((), 1), ((), 2)];
        let result =
            evaluate_distance_prediction(&samples, &t, |_| Ok(alloc::vec![0.3, 0.3, 0.3]))
                .unwrap();
        assert_eq!(result.predicted[0], result.predicted[1]);
        assert_eq!(result.predicted[1], result.predicted[2]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::None, None, None).unwrap();
        let samples: Vec<((), usize)> = alloc::vec![((), 0), ((), 1)];
        assert!(matches!(
            evaluate_distance_prediction(&samples, &t, |_| Ok(alloc::vec![0.0, 0.0, 0.1])),
            Err(Error::EmptyClass(2))
        ));
    }

    #[test]
    fn error_matrix_matches_independent_second_pass() {
        let m = toy_matrix();
        let t = build_targets(&m, Normalize::None, None, None).unwrap();
        let samples: Vec<(usize, usize)> =
            alloc::vec![(0, 0), (1, 0), (2, 1), (3, 1), (4, 2)];
        let fake = |s: &usize| -> Vec<f64> {
            alloc::vec![*s as f64 * 0.1, 0.5 - *s as f64 * 0.05, 0.2]
        };
        let result =
            evaluate_distance_prediction(&samples, &t, |s| Ok(fake(s))).unwrap();
        // independent accumulation pass
        for c in 0..3 {
            let members: Vec<&(usize, usize)> =
                samples.iter().filter(|(_, cl)| *cl == c).collect();
            for j in 0..3 {
                let mean: f64 = members.iter().map(|(s, _)| fake(s)[j]).sum::<f64>()
                    / members.len() as f64;
                assert!((result.predicted[c][j] - mean).abs() < 1e-9);
                let expect_err = (mean - t.target(c).unwrap()[j]).abs();
                assert!((result.abs_error[c][j] - expect_err).abs() < 1e-9);
            }
        }
    }
}
