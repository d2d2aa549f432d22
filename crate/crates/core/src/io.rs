//! On-disk formats.
//!
//! Datasets are JSON lines: a header object `{num_classes, feature_dim, name}`
//! followed by one object per bag `{bag_id, bag_label, instances,
//! instance_labels?}`. Class indices are 0-based. Models are a single
//! versioned JSON document. Predictions are JSON lines, one bag per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Instance, ValidationReport};
use crate::error::{MimlError, Result};
use crate::kernel::KernelDictionary;
use crate::label::LabelSet;
use crate::metrics::DummyBaseline;
use crate::model::{FeatureMap, Model, WeightMatrix};
use crate::predict::BagPrediction;
use crate::train::TrainConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    num_classes: usize,
    feature_dim: usize,
    #[serde(default)]
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BagRecord {
    bag_id: String,
    bag_label: Vec<usize>,
    instances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instance_labels: Option<Vec<usize>>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> MimlError {
    MimlError::Parse {
        line,
        msg: msg.to_string(),
    }
}

/// Parses a dataset without validating it. Blank lines are ignored.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut header: Option<HeaderRecord> = None;
    let mut bags = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(
                serde_json::from_str(&line)
                    .map_err(|e| parse_err(lineno, format!("header: {e}")))?,
            );
            continue;
        }
        let rec: BagRecord = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        // labels beyond the mask width cannot be represented; report them here with the line
        let label = LabelSet::from_classes(rec.bag_label.iter().copied())
            .map_err(|e| parse_err(lineno, format!("bag {}: {e}", rec.bag_id)))?;
        let instances = rec.instances.into_iter().map(Instance::new).collect();
        let mut bag = Bag::new(rec.bag_id, instances, label);
        bag.true_labels = rec.instance_labels;
        bags.push(bag);
    }
    let h = header.ok_or_else(|| parse_err(1, "missing header line"))?;
    Ok(Dataset::new(h.name, h.num_classes, h.feature_dim, bags))
}

pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let header = HeaderRecord {
        num_classes: ds.num_classes,
        feature_dim: ds.feature_dim,
        name: ds.name.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    writeln!(w)?;
    for b in &ds.bags {
        let rec = BagRecord {
            bag_id: b.id.clone(),
            bag_label: b.label.to_vec(),
            instances: b.instances.iter().map(|x| x.features.clone()).collect(),
            instance_labels: b.true_labels.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Prefixes an I/O error with the path it concerns.
fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> MimlError + '_ {
    move |e| {
        MimlError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }
}

/// Reads and validates a dataset. Fatal findings abort unless `force` is set;
/// warnings are returned either way.
pub fn load_dataset(path: impl AsRef<Path>, force: bool) -> Result<(Dataset, ValidationReport)> {
    let ds = read_dataset(File::open(path.as_ref()).map_err(with_path(path.as_ref()))?)?;
    let report = ds.validate();
    if !force {
        if let Some(f) = report.fatal().next() {
            return Err(MimlError::InvalidData(f.to_string()));
        }
    }
    Ok((ds, report))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(
        ds,
        File::create(path.as_ref()).map_err(with_path(path.as_ref()))?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Linear,
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub mode: ModelMode,
    pub num_classes: usize,
    /// Dimension of raw input instances.
    pub feature_dim: usize,
    /// `(d + 1) x C` rows; the last row is the bias.
    pub weights: Vec<Vec<f64>>,
    pub config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelDictionary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<DummyBaseline>,
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        let (mode, kernel) = match &m.features {
            FeatureMap::Linear => (ModelMode::Linear, None),
            FeatureMap::Kernel(d) => (ModelMode::Kernel, Some(d.clone())),
        };
        Self {
            format_version: MODEL_FORMAT_VERSION,
            mode,
            num_classes: m.num_classes,
            feature_dim: m.input_dim,
            weights: m.weights.to_rows(),
            config: m.config.clone(),
            kernel,
            baseline: m.baseline.clone(),
        }
    }
}

impl TryFrom<ModelFile> for Model {
    type Error = MimlError;

    fn try_from(f: ModelFile) -> Result<Model> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(MimlError::InvalidData(format!(
                "unsupported model format version {}",
                f.format_version
            )));
        }
        let weights = WeightMatrix::from_rows(f.weights)?;
        if weights.num_classes() != f.num_classes {
            return Err(MimlError::DimensionMismatch {
                expected: f.num_classes,
                got: weights.num_classes(),
                context: "model weight columns",
            });
        }
        if weights.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(MimlError::InvalidData("non-finite model weight".into()));
        }
        let mut model = match (f.mode, f.kernel) {
            (ModelMode::Linear, None) => Model::linear(weights, f.config),
            (ModelMode::Kernel, Some(d)) => {
                let d = KernelDictionary::new(d.anchors, d.anchor_indices, d.delta, d.scale_s)?;
                if d.len() != weights.feature_dim() {
                    return Err(MimlError::DimensionMismatch {
                        expected: d.len(),
                        got: weights.feature_dim(),
                        context: "kernel anchors vs weight rows",
                    });
                }
                Model::kernel(weights, d, f.config)
            }
            (mode, _) => {
                return Err(MimlError::InvalidData(format!(
                    "model mode {mode:?} does not match the presence of a kernel dictionary"
                )))
            }
        };
        if model.input_dim != f.feature_dim {
            return Err(MimlError::DimensionMismatch {
                expected: f.feature_dim,
                got: model.input_dim,
                context: "model feature_dim",
            });
        }
        model.baseline = f.baseline;
        Ok(model)
    }
}

pub fn model_to_json(model: &Model) -> Result<String> {
    serde_json::to_string_pretty(&ModelFile::from(model))
        .map_err(|e| MimlError::InvalidData(e.to_string()))
}

pub fn model_from_json(s: &str) -> Result<Model> {
    let f: ModelFile = serde_json::from_str(s).map_err(|e| parse_err(e.line(), e))?;
    f.try_into()
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut s = model_to_json(model)?;
    s.push('\n');
    std::fs::write(path.as_ref(), s).map_err(with_path(path.as_ref()))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_json(&std::fs::read_to_string(path.as_ref()).map_err(with_path(path.as_ref()))?)
}

pub fn write_predictions<W: Write>(preds: &[BagPrediction], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for p in preds {
        serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<BagPrediction>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?);
    }
    Ok(out)
}

/// Flat key/value metrics as pretty JSON with sorted keys.
pub fn metrics_to_json(metrics: &BTreeMap<String, f64>) -> String {
    let mut s =
        serde_json::to_string_pretty(metrics).expect("string keys and finite values serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(
            "s",
            3,
            2,
            vec![
                Bag::new(
                    "a",
                    vec![
                        Instance::new(vec![0.1, -2.5]),
                        Instance::new(vec![1e-300, 3.0]),
                    ],
                    LabelSet::from_classes([0, 2]).unwrap(),
                )
                .with_true_labels(vec![0, 2]),
                Bag::new(
                    "b",
                    vec![Instance::new(vec![0.3333333333333333, 7.0])],
                    LabelSet::singleton(1),
                ),
            ],
        )
    }

    #[test]
    fn dataset_round_trip() {
        let ds = sample();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(!text.lines().nth(2).unwrap().contains("instance_labels"));
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"num_classes\":2,\"feature_dim\":1}\n{\"bag_id\":\"a\",\"bag_label\":[0],\"instances\":[[1.0]]}\n{oops}\n";
        match read_dataset(text.as_bytes()) {
            Err(MimlError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "{\"num_classes\":2,\"feature_dim\":1}\n\n{\"bag_id\":\"a\",\"bag_label\":[70],\"instances\":[[1.0]]}\n";
        match read_dataset(text.as_bytes()) {
            Err(MimlError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("bag a"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_rejects_fatal_findings_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"num_classes\":3,\"feature_dim\":1}\n{\"bag_id\":\"x\",\"bag_label\":[0,1],\"instances\":[[1.0]]}\n{\"bag_id\":\"y\",\"bag_label\":[5],\"instances\":[[1.0]]}\n",
        )
        .unwrap();
        let err = load_dataset(&p, false).unwrap_err().to_string();
        assert!(err.contains("unsatisfiable union"), "{err}");
        let (ds, report) = load_dataset(&p, true).unwrap();
        assert_eq!(ds.bags.len(), 2);
        assert!(report.fatal().any(|f| f.to_string().contains('y')));
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let w = WeightMatrix::from_rows(vec![
            vec![0.1 + 0.2, -1e-17],
            vec![std::f64::consts::PI, 12345.678901234567],
        ])
        .unwrap();
        let m = Model::linear(w, TrainConfig::default());
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights.as_slice().iter().zip(m.weights.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn kernel_model_round_trip() {
        let d = KernelDictionary::new(
            vec![
                Instance::new(vec![0.5, 1.0 / 3.0]),
                Instance::new(vec![2.0, 0.0]),
            ],
            vec![0, 4],
            0.7,
            0.5,
        )
        .unwrap();
        let w =
            WeightMatrix::from_rows(vec![vec![1.0, 2.0], vec![0.1, 0.2], vec![-0.3, 0.3]]).unwrap();
        let m = Model::kernel(w, d, TrainConfig::default());
        let json = model_to_json(&m).unwrap();
        assert!(json.contains("\"kernel\""));
        assert_eq!(model_from_json(&json).unwrap(), m);
    }

    #[test]
    fn inconsistent_model_is_rejected() {
        let m = Model::linear(WeightMatrix::zeros(2, 2), TrainConfig::default());
        let mut f = ModelFile::from(&m);
        f.mode = ModelMode::Kernel;
        assert!(Model::try_from(f).is_err());
        let mut f = ModelFile::from(&m);
        f.format_version = 99;
        assert!(Model::try_from(f).is_err());
    }
}
