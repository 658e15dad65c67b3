//! File formats and preprocessing: CSV populations, the log-shift transform
//! for assay intensities, model persistence and contour export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::{quadric_eval, BoundaryClassifier, QuadricParams};
use crate::error::{check_dim, Error, Result};
use crate::levelset::LevelSetFamily;
use crate::model::{Class, Measurement, TestPopulation, TrainingPopulation};
use crate::optimizer::SigmaSchedule;
use crate::synth::ConvergenceReport;

pub const LOG_SHIFT_EPSILON: f64 = 0.01;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// `x_i -> ln(epsilon + x_i - mins_i)`, with `mins` frozen from the training
/// negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogShiftTransform {
    pub mins: Vec<f64>,
    pub epsilon: f64,
}

pub fn fit_transform(pop: &TrainingPopulation<f64>) -> Result<LogShiftTransform> {
    let neg = pop.negatives();
    if neg.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    let mins = (0..pop.dim())
        .map(|k| neg.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(LogShiftTransform {
        mins,
        epsilon: LOG_SHIFT_EPSILON,
    })
}

pub fn apply_transform(t: &LogShiftTransform, r: &Measurement<f64>) -> Result<Measurement<f64>> {
    check_dim(t.mins.len(), r.dim())?;
    let coords = r
        .coords()
        .iter()
        .zip(&t.mins)
        .enumerate()
        .map(|(index, (&x, &min))| {
            let arg = t.epsilon + x - min;
            if arg > 0.0 {
                Ok(arg.ln())
            } else {
                Err(Error::NonFiniteCoordinate {
                    index,
                    value: arg.ln(),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Measurement::new(coords)
}

impl LogShiftTransform {
    pub fn apply_training(&self, pop: &TrainingPopulation<f64>) -> Result<TrainingPopulation<f64>> {
        let map = |s: &[Measurement<f64>]| {
            s.iter()
                .map(|r| apply_transform(self, r))
                .collect::<Result<Vec<_>>>()
        };
        TrainingPopulation::new(map(pop.negatives())?, map(pop.positives())?)
    }

    pub fn apply_test(&self, test: &TestPopulation<f64>) -> Result<TestPopulation<f64>> {
        let samples = test
            .samples()
            .iter()
            .map(|r| apply_transform(self, r))
            .collect::<Result<Vec<_>>>()?;
        TestPopulation::new(samples, test.true_labels().map(<[Class]>::to_vec))
    }
}

/// Contents of a CSV file: labelled rows split by class, or unlabelled rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Training(TrainingPopulation<f64>),
    Test(TestPopulation<f64>),
}

/// CSV as read from disk, before splitting by label.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub rows: Vec<Measurement<f64>>,
    pub labels: Option<Vec<Class>>,
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            row,
            column: String::new(),
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            row,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn parse_label(row: usize, cell: &str) -> Result<Class> {
    match cell.trim() {
        "0" => Ok(Class::Negative),
        "1" => Ok(Class::Positive),
        other => Err(Error::UnknownLabelValue {
            row,
            value: other.to_string(),
        }),
    }
}

/// Reads a headered CSV. Rows are reported by file line, the header being
/// line 1. Every column other than `label_column` is a numeric feature.
pub fn read_table(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_error)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = label_column.and_then(|name| headers.iter().position(|h| h == name));
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "no feature columns".into(),
        });
    }
    let mut rows = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let mut coords = Vec::with_capacity(feature_names.len());
        for (i, cell) in record.iter().enumerate() {
            if Some(i) == label_idx {
                if let Some(l) = labels.as_mut() {
                    l.push(parse_label(row, cell)?);
                }
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: headers[i].clone(),
                message: format!("not a number: {cell:?}"),
            })?;
            coords.push(v);
        }
        rows.push(Measurement::new(coords)?);
    }
    Ok(Table {
        feature_names,
        rows,
        labels,
    })
}

/// Reads a CSV; rows are split into classes when `label_column` names a
/// header, otherwise they form a test population.
pub fn read_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let table = read_table(path, label_column)?;
    match table.labels {
        Some(labels) => {
            let (mut neg, mut pos) = (Vec::new(), Vec::new());
            for (r, l) in table.rows.into_iter().zip(labels) {
                match l {
                    Class::Negative => neg.push(r),
                    Class::Positive => pos.push(r),
                }
            }
            Ok(Dataset::Training(TrainingPopulation::new(neg, pos)?))
        }
        None => Ok(Dataset::Test(TestPopulation::new(table.rows, None)?)),
    }
}

pub fn read_training_csv(
    path: impl AsRef<Path>,
    label_column: &str,
) -> Result<TrainingPopulation<f64>> {
    match read_csv(path, Some(label_column))? {
        Dataset::Training(p) => Ok(p),
        Dataset::Test(_) => Err(Error::InvalidArgument(format!(
            "label column {label_column:?} not found"
        ))),
    }
}

/// Reads unlabelled rows; a column named `ignore_column`, if present, is
/// skipped rather than treated as a feature.
pub fn read_test_csv(
    path: impl AsRef<Path>,
    ignore_column: Option<&str>,
) -> Result<TestPopulation<f64>> {
    let table = read_table(path, ignore_column)?;
    TestPopulation::new(table.rows, None)
}

/// Default feature names `x0, x1, ...`.
pub fn feature_names(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

fn csv_writer(path: impl AsRef<Path>) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

/// Writes feature columns plus, when `label_column` is given, a 0/1 label.
pub fn write_rows<'a>(
    path: impl AsRef<Path>,
    names: &[String],
    label_column: Option<&str>,
    rows: impl IntoIterator<Item = (&'a Measurement<f64>, Option<Class>)>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = names.to_vec();
    header.extend(label_column.map(str::to_string));
    w.write_record(&header).map_err(csv_error)?;
    for (r, label) in rows {
        check_dim(names.len(), r.dim())?;
        let mut rec: Vec<String> = r.coords().iter().map(f64::to_string).collect();
        if label_column.is_some() {
            let l = label.ok_or_else(|| Error::InvalidArgument("row without a label".into()))?;
            rec.push(l.index().to_string());
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Negatives first, then positives, labelled in `label_column`.
pub fn write_csv(
    path: impl AsRef<Path>,
    pop: &TrainingPopulation<f64>,
    label_column: &str,
) -> Result<()> {
    write_rows(
        path,
        &feature_names(pop.dim()),
        Some(label_column),
        pop.iter().map(|(c, r)| (r, Some(c))),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetRecord {
    pub q_grid: Vec<f64>,
    pub params: Vec<Vec<f64>>,
    pub shadow_points: Vec<Vec<f64>>,
    pub constraint_violation: f64,
    pub grid_violations: usize,
}

/// Everything needed to classify new data with a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub dim: usize,
    pub feature_names: Vec<String>,
    pub transform: Option<LogShiftTransform>,
    pub q: f64,
    pub params: Vec<f64>,
    pub schedule: Vec<f64>,
    pub levelsets: Option<LevelSetRecord>,
}

impl ModelFile {
    pub fn new(
        feature_names: Vec<String>,
        transform: Option<LogShiftTransform>,
        q: f64,
        quadric: &QuadricParams<f64>,
        schedule: &SigmaSchedule<f64>,
    ) -> Self {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            dim: quadric.dim(),
            feature_names,
            transform,
            q,
            params: quadric.params().to_vec(),
            schedule: schedule.values().to_vec(),
            levelsets: None,
        }
    }

    pub fn with_levelsets(mut self, family: &LevelSetFamily<f64>) -> Self {
        self.levelsets = Some(LevelSetRecord {
            q_grid: family.q_grid.clone(),
            params: family.params.iter().map(|p| p.params().to_vec()).collect(),
            shadow_points: family
                .shadow_points
                .iter()
                .map(|r| r.coords().to_vec())
                .collect(),
            constraint_violation: family.constraint_violation,
            grid_violations: family.grid_violations,
        });
        self
    }

    pub fn quadric(&self) -> Result<QuadricParams<f64>> {
        QuadricParams::new(self.dim, self.params.clone())
    }

    pub fn classifier(&self) -> Result<BoundaryClassifier<f64>> {
        Ok(BoundaryClassifier::new(self.quadric()?))
    }

    pub fn family(&self) -> Result<Option<LevelSetFamily<f64>>> {
        let Some(rec) = &self.levelsets else {
            return Ok(None);
        };
        Ok(Some(LevelSetFamily {
            q_grid: rec.q_grid.clone(),
            params: rec
                .params
                .iter()
                .map(|p| QuadricParams::new(self.dim, p.clone()))
                .collect::<Result<_>>()?,
            shadow_points: rec
                .shadow_points
                .iter()
                .map(|c| Measurement::new(c.clone()))
                .collect::<Result<_>>()?,
            constraint_violation: rec.constraint_violation,
            grid_violations: rec.grid_violations,
        }))
    }

    /// Maps raw measurements into the space the model was fitted in.
    pub fn prepare(&self, r: &Measurement<f64>) -> Result<Measurement<f64>> {
        check_dim(self.dim, r.dim())?;
        match &self.transform {
            Some(t) => apply_transform(t, r),
            None => Ok(r.clone()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.feature_names.len() != self.dim {
            return Err(Error::ModelFormat(
                "feature names do not match dimension".into(),
            ));
        }
        if let Some(t) = &self.transform {
            check_dim(self.dim, t.mins.len())?;
        }
        self.quadric()?;
        self.family()?;
        Ok(())
    }
}

/// JSON with shortest round-trip float formatting, so reals survive exactly.
pub fn write_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, model).map_err(|e| Error::ModelFormat(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    let model: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

/// `B` sampled on a `resolution x resolution` grid including the box corners,
/// `x` varying fastest. Rows are `[x, y, B]`.
pub fn boundary_contour(
    clf: &BoundaryClassifier<f64>,
    bbox: BoundingBox,
    resolution: usize,
) -> Result<Vec<[f64; 3]>> {
    if clf.quadric.dim() != 2 {
        return Err(Error::UnsupportedDimension(clf.quadric.dim()));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument(
            "contour resolution must be >= 2".into(),
        ));
    }
    let step = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            let (x, y) = (step(bbox.x, i), step(bbox.y, j));
            let b = quadric_eval(&clf.quadric, &Measurement::new(vec![x, y])?)?;
            rows.push([x, y, b]);
        }
    }
    Ok(rows)
}

pub fn export_boundary_contour(
    path: impl AsRef<Path>,
    clf: &BoundaryClassifier<f64>,
    bbox: BoundingBox,
    resolution: usize,
) -> Result<()> {
    let rows = boundary_contour(clf, bbox, resolution)?;
    let mut w = csv_writer(path)?;
    w.write_record(["x", "y", "B"]).map_err(csv_error)?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Bounding box of a 2-D population widened by `margin` of its extent per side.
pub fn population_bbox(pop: &TrainingPopulation<f64>, margin: f64) -> Result<BoundingBox> {
    if pop.dim() != 2 {
        return Err(Error::UnsupportedDimension(pop.dim()));
    }
    let range = |k: usize| {
        let (lo, hi) = pop
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, r)| {
                (lo.min(r[k]), hi.max(r[k]))
            });
        let pad = margin * (hi - lo);
        (lo - pad, hi + pad)
    };
    Ok(BoundingBox {
        x: range(0),
        y: range(1),
    })
}

/// Header plus numeric rows to any writer, reals in shortest round-trip form.
pub fn write_numeric_csv<W: Write>(
    writer: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        check_dim(header.len(), row.len())?;
        w.write_record(row.iter().map(f64::to_string))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence_report(path: impl AsRef<Path>, report: &ConvergenceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["S", "mean_sq_frobenius"])
        .map_err(csv_error)?;
    for (s, v) in report.sample_sizes.iter().zip(&report.mean_sq_frobenius) {
        w.write_record([s.to_string(), v.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
