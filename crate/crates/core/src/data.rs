//! Dataset ingestion, scaling, splits and synthetic generators.
//!
//! The weight-perturbation sensitivity assumes every training row satisfies
//! `‖x‖₂ ≤ 1`. Min-max scaling alone bounds coordinates, not row norms, so the
//! standard pipeline is [`fit_minmax`] → [`apply_minmax`] → [`project_unit_ball`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::numerics::RandomSource;

/// Tolerance on row norms for data that is meant to lie in the unit ball.
pub const UNIT_BALL_SLACK: f64 = 1e-9;

/// Dense labelled training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    label_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking shapes and label ranges.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let names = (0..num_classes).map(|k| k.to_string()).collect();
        Self::with_label_names(features, labels, num_classes, names)
    }

    pub fn with_label_names(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        label_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if label_names.len() != num_classes {
            return Err(Error::Dimension {
                expected: num_classes,
                found: label_names.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self {
            features: features.as_standard_layout().into_owned(),
            labels,
            num_classes,
            label_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Original label spelling for each compact class index.
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Largest row L2 norm.
    pub fn max_row_norm(&self) -> f64 {
        self.features
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset {
            features,
            labels,
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
        }
    }

    /// Errors unless every class has at least one sample.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(k) => Err(Error::invalid(format!(
                "class {k} ({}) has no training samples",
                self.label_names[k]
            ))),
            None => Ok(()),
        }
    }

    /// Errors if any row norm exceeds `1 + UNIT_BALL_SLACK`.
    pub fn require_unit_ball(&self) -> Result<()> {
        for (i, r) in self.features.rows().into_iter().enumerate() {
            let norm = r.dot(&r).sqrt();
            if norm > 1.0 + UNIT_BALL_SLACK {
                return Err(Error::invalid(format!(
                    "row {i} has L2 norm {norm:.6} > 1; scale and project the data first"
                )));
            }
        }
        Ok(())
    }
}

/// Maps label spellings to compact indices in first-appearance order.
#[derive(Default)]
struct LabelCompactor {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl LabelCompactor {
    fn id(&mut self, name: &str) -> usize {
        if let Some(&k) = self.index.get(name) {
            return k;
        }
        let k = self.names.len();
        self.index.insert(name.to_string(), k);
        self.names.push(name.to_string());
        k
    }
}

fn parse_err(source: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.display().to_string(),
        line,
        column,
        message: message.into(),
    }
}

/// Reads a comma-separated table. Rows and columns in errors are 1-based.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(path, 0, 0, format!("{other:?}")),
        })?;

    let mut compactor = LabelCompactor::default();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;

    for (r, record) in reader.records().enumerate() {
        let line = r + 1 + usize::from(has_header);
        let record = record.map_err(|e| parse_err(path, line, 0, e.to_string()))?;
        if record.len() <= label_column {
            return Err(parse_err(
                path,
                line,
                record.len(),
                format!("label column {} missing", label_column + 1),
            ));
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(parse_err(
                path,
                line,
                record.len(),
                format!("expected {expected} fields, found {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_column {
                labels.push(compactor.id(cell));
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, c + 1, format!("cannot parse {cell:?} as a number")))?;
            values.push(v);
        }
    }

    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid(format!("{}: no samples", path.display())));
    }
    let d = width.unwrap_or(1) - 1;
    if compactor.names.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need at least 2 distinct labels, found {}",
            path.display(),
            compactor.names.len()
        )));
    }
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::invalid(e.to_string()))?;
    let c = compactor.names.len();
    Dataset::with_label_names(features, labels, c, compactor.names)
}

/// Reads the sparse `label index:value ...` text format into a dense matrix.
///
/// Indices are 1-based and strictly increasing per line; `d` is the largest
/// index seen. Blank lines and `#` comments are skipped.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut compactor = LabelCompactor::default();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(path, line_no, 1, format!("bad label {label_tok:?}")))?;
        // Canonical spelling so "1", "+1" and "1.0" are one class.
        labels.push(compactor.id(&format!("{label}")));

        let mut row = Vec::new();
        let mut last = 0usize;
        for (t, tok) in tokens.enumerate() {
            let column = t + 2;
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, line_no, column, format!("malformed token {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, line_no, column, format!("bad index in {tok:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(path, line_no, column, format!("bad value in {tok:?}")))?;
            if idx == 0 || idx <= last {
                return Err(parse_err(
                    path,
                    line_no,
                    column,
                    format!("indices must be 1-based and strictly increasing, got {idx} after {last}"),
                ));
            }
            last = idx;
            row.push((idx - 1, val));
        }
        d = d.max(last);
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: no samples", path.display())));
    }
    if compactor.names.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need at least 2 distinct labels",
            path.display()
        )));
    }
    let mut features = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[[i, j]] = v;
        }
    }
    let c = compactor.names.len();
    Dataset::with_label_names(features, labels, c, compactor.names)
}

/// Writes `data` in libsvm format. The last feature index is always written,
/// even when zero, so the dense width survives a round trip.
pub fn save_libsvm(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let d = data.dim();
    for (i, row) in data.features.rows().into_iter().enumerate() {
        out.push_str(&data.labels[i].to_string());
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 || j + 1 == d {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-feature affine map onto `[0, 1]`, fitted on training data only.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    min: Array1<f64>,
    range: Array1<f64>,
}

impl MinMaxScaler {
    pub fn min(&self) -> &Array1<f64> {
        &self.min
    }

    pub fn range(&self) -> &Array1<f64> {
        &self.range
    }
}

pub fn fit_minmax(train: &Dataset) -> MinMaxScaler {
    let d = train.dim();
    let mut min = Array1::from_elem(d, f64::INFINITY);
    let mut max = Array1::from_elem(d, f64::NEG_INFINITY);
    for row in train.features.rows() {
        for j in 0..d {
            min[j] = min[j].min(row[j]);
            max[j] = max[j].max(row[j]);
        }
    }
    if train.is_empty() {
        min.fill(0.0);
        max.fill(0.0);
    }
    let range = &max - &min;
    MinMaxScaler { min, range }
}

/// Applies a fitted scaler; values outside the training range clamp to `[0, 1]`
/// and zero-range features map to 0.
pub fn apply_minmax(scaler: &MinMaxScaler, data: &Dataset) -> Result<Dataset> {
    if scaler.min.len() != data.dim() {
        return Err(Error::Dimension {
            expected: scaler.min.len(),
            found: data.dim(),
        });
    }
    let mut features = data.features.clone();
    for mut row in features.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let r = scaler.range[j];
            *v = if r > 0.0 {
                ((*v - scaler.min[j]) / r).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(Dataset {
        features,
        ..data.clone()
    })
}

/// Rescales rows with `‖x‖₂ > 1` onto the unit sphere (computed norm at most
/// 1); other rows are unchanged.
pub fn project_unit_ball(data: &Dataset) -> Dataset {
    let mut features = data.features.clone();
    for mut row in features.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 1.0 {
            // Rounding can leave the quotient an ulp outside the ball; shrink
            // the divisor's reciprocal until the computed norm is at most 1.
            let mut scale = 1.0 / norm;
            let original = row.to_owned();
            loop {
                row.assign(&original.mapv(|v| v * scale));
                if row.dot(&row).sqrt() <= 1.0 {
                    break;
                }
                scale = scale.next_down();
            }
        }
    }
    Dataset {
        features,
        ..data.clone()
    }
}

/// Per-class random split with `round(count · test_fraction)` test samples per
/// class, always leaving at least one training sample. Both outputs keep the
/// original row order.
pub fn stratified_split(data: &Dataset, test_fraction: f64, rng: &mut RandomSource) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::domain(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut test_idx = Vec::new();
    for (k, members) in by_class.iter_mut().enumerate() {
        if test_fraction > 0.0 && members.len() == 1 {
            return Err(Error::invalid(format!(
                "class {k} has {} samples; stratified split needs at least 2",
                members.len()
            )));
        }
        let take = ((members.len() as f64 * test_fraction).round() as usize).min(members.len().saturating_sub(1));
        rng.shuffle(members);
        test_idx.extend_from_slice(&members[..take]);
    }
    test_idx.sort_unstable();
    let mut is_test = vec![false; data.len()];
    for &i in &test_idx {
        is_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !is_test[i]).collect();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// Gaussian blobs with unit covariance whose class means sit at
/// `separation · (cos 2πk/c, sin 2πk/c, 0, …)`. The output is min-max scaled
/// and projected into the unit ball. Rows are interleaved by class.
pub fn synth_blobs(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    rng: &mut RandomSource,
) -> Result<Dataset> {
    if classes < 2 || dim < 2 {
        return Err(Error::domain(format!(
            "synth_blobs needs classes >= 2 and dim >= 2, got {classes} and {dim}"
        )));
    }
    let n = classes * n_per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n_per_class {
        for k in 0..classes {
            let row = i * classes + k;
            let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            for j in 0..dim {
                features[[row, j]] = rng.standard_normal();
            }
            features[[row, 0]] += separation * angle.cos();
            features[[row, 1]] += separation * angle.sin();
            labels.push(k);
        }
    }
    let raw = Dataset::new(features, labels, classes)?;
    let scaler = fit_minmax(&raw);
    Ok(project_unit_ball(&apply_minmax(&scaler, &raw)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_first_appearance_labels() {
        let f = write_tmp("x1,x2,y\n1,2,a\n3,4,b\n5,6,a\n");
        let ds = load_csv(f.path(), 2, true).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.label_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.features(), &array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    }

    #[test]
    fn csv_reports_bad_cell_position() {
        let f = write_tmp("1,2,a\n3,oops,b\n");
        match load_csv(f.path(), 2, false) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_requires_two_labels() {
        let f = write_tmp("1,2,a\n3,4,a\n");
        assert!(matches!(load_csv(f.path(), 2, false), Err(Error::InvalidData(_))));
    }

    #[test]
    fn csv_label_column_first() {
        let f = write_tmp("7,0.5,0.25\n3,1,2\n");
        let ds = load_csv(f.path(), 0, false).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.label_names(), &["7".to_string(), "3".to_string()]);
    }

    #[test]
    fn libsvm_sparse_to_dense() {
        let f = write_tmp("1 1:0.5 3:2.0\n0 2:1\n");
        let ds = load_libsvm(f.path()).unwrap();
        assert_eq!(ds.features().row(0).to_vec(), vec![0.5, 0.0, 2.0]);
        assert_eq!(ds.features().row(1).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn libsvm_label_compaction() {
        let f = write_tmp("2 1:1\n5 1:2\n2 1:3\n");
        let ds = load_libsvm(f.path()).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn libsvm_errors() {
        let empty = write_tmp("");
        assert!(load_libsvm(empty.path()).is_err());
        let bad_order = write_tmp("1 1:1\n0 3:1 2:1\n");
        match load_libsvm(bad_order.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let malformed = write_tmp("1 1:1\n0 2-1\n");
        assert!(matches!(
            load_libsvm(malformed.path()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn minmax_examples() {
        let train = Dataset::new(array![[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]], vec![0, 1, 0], 2).unwrap();
        let scaler = fit_minmax(&train);
        let t = apply_minmax(&scaler, &train).unwrap();
        assert_eq!(t.features().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(t.features().column(1).to_vec(), vec![0.0, 0.0, 0.0]);

        let test = Dataset::new(array![[0.0, 9.0], [10.0, 1.0]], vec![0, 1], 2).unwrap();
        let t = apply_minmax(&scaler, &test).unwrap();
        assert_eq!(t.features()[[0, 0]], 0.0);
        assert_eq!(t.features()[[1, 0]], 1.0);

        let wrong = Dataset::new(array![[1.0]], vec![0], 2).unwrap();
        assert!(matches!(apply_minmax(&scaler, &wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn unit_ball_examples() {
        let ds = Dataset::new(array![[3.0, 4.0], [0.3, 0.4]], vec![0, 1], 2).unwrap();
        let p = project_unit_ball(&ds);
        assert!((p.features()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((p.features()[[0, 1]] - 0.8).abs() < 1e-15);
        assert_eq!(p.features().row(1).to_vec(), vec![0.3, 0.4]);

        let ones = Dataset::new(Array2::ones((1, 16)), vec![0], 2).unwrap();
        assert!(project_unit_ball(&ones).features().iter().all(|&v| v == 0.25));
    }

    fn labelled(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
            .collect();
        let n = labels.len();
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::new(features, labels, counts.len()).unwrap()
    }

    #[test]
    fn split_counts() {
        let mut rng = RandomSource::new(1);
        let (train, test) = stratified_split(&labelled(&[10, 10, 10]), 0.2, &mut rng).unwrap();
        assert_eq!(test.class_counts(), vec![2, 2, 2]);
        assert_eq!(train.class_counts(), vec![8, 8, 8]);

        let (_, test) = stratified_split(&labelled(&[10, 10]), 0.0, &mut rng).unwrap();
        assert!(test.is_empty());

        let (_, test) = stratified_split(&labelled(&[100, 50]), 0.3, &mut rng).unwrap();
        assert_eq!(test.class_counts(), vec![30, 15]);

        assert!(stratified_split(&labelled(&[1, 5]), 0.2, &mut rng).is_err());
        assert!(stratified_split(&labelled(&[3, 3]), 0.9, &mut rng)
            .map(|(tr, _)| tr.class_counts() == vec![1, 1])
            .unwrap());
    }

    #[test]
    fn blobs_are_deterministic_and_bounded() {
        let a = synth_blobs(4, 50, 5, 3.0, &mut RandomSource::new(8)).unwrap();
        let b = synth_blobs(4, 50, 5, 3.0, &mut RandomSource::new(8)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_row_norm() <= 1.0 + UNIT_BALL_SLACK);
        assert_eq!(a.class_counts(), vec![50; 4]);
        assert!(synth_blobs(1, 5, 5, 1.0, &mut RandomSource::new(1)).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (2usize..30, 1usize..6).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-50.0f64..50.0, n * d),
                proptest::collection::vec(0usize..3, n),
            )
                .prop_map(move |(vals, labels)| {
                    Dataset::new(Array2::from_shape_vec((n, d), vals).unwrap(), labels, 3).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn minmax_in_unit_cube(ds in arb_dataset()) {
            let t = apply_minmax(&fit_minmax(&ds), &ds).unwrap();
            prop_assert!(t.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn projection_idempotent_and_nonexpanding(ds in arb_dataset()) {
            let p = project_unit_ball(&ds);
            prop_assert_eq!(&project_unit_ball(&p), &p);
            for (a, b) in ds.features().rows().into_iter().zip(p.features().rows()) {
                prop_assert!(b.dot(&b).sqrt() <= a.dot(&a).sqrt() + 1e-12);
                prop_assert!(b.dot(&b).sqrt() <= 1.0 + UNIT_BALL_SLACK);
            }
        }

        #[test]
        fn split_partitions_rows(ds in arb_dataset(), seed in any::<u64>()) {
            prop_assume!(ds.class_counts().iter().all(|&c| c == 0 || c >= 2));
            let (train, test) = stratified_split(&ds, 0.3, &mut RandomSource::new(seed)).unwrap();
            prop_assert_eq!(train.len() + test.len(), ds.len());
            let mut rows: Vec<Vec<u64>> = train.features().rows().into_iter()
                .chain(test.features().rows())
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            let mut orig: Vec<Vec<u64>> = ds.features().rows().into_iter()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            orig.sort();
            prop_assert_eq!(rows, orig);
        }

        #[test]
        fn libsvm_round_trip(ds in arb_dataset()) {
            let f = tempfile::NamedTempFile::new().unwrap();
            prop_assume!(ds.class_counts().iter().filter(|&&c| c > 0).count() >= 2);
            save_libsvm(&ds, f.path()).unwrap();
            let back = load_libsvm(f.path()).unwrap();
            prop_assert_eq!(back.features(), ds.features());
        }
    }
}
