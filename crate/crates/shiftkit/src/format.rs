//! Input files: distributions (JSON or CSV), feature vectors, priors,
//! selection tables and representation maps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shiftkit_core::{
    ClassPriors, Error, FeatureDensity, FiniteJointDistribution, RepresentationMap, SelectionModel,
    Table, ValidationReport,
};

use crate::error::CliError;

/// `{"features": [...], "classes": [...], "weights": [[...], ...]}` with one
/// row per feature cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub features: Vec<String>,
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

/// `{"features": [...], "values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureVectorFile {
    pub features: Vec<String>,
    pub values: Vec<f64>,
}

/// `{"classes": [...], "values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsFile {
    pub classes: Vec<String>,
    pub values: Vec<f64>,
}

/// `{"groups": {"cell": "group", ...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub groups: BTreeMap<String, String>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_error(path: &Path, message: impl ToString) -> CliError {
    CliError::Parse {
        path: PathBuf::from(path),
        message: message.to_string(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| parse_error(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    feature: String,
    class: String,
    weight: f64,
}

/// Long-format `feature,class,weight`; labels keep their order of first
/// appearance and absent combinations weigh zero.
pub fn parse_csv_table(text: &str, path: &Path) -> Result<TableFile, CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["feature", "class", "weight"] {
        return Err(parse_error(path, "header must be feature,class,weight"));
    }
    let mut features: Vec<String> = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    let mut entries = BTreeMap::new();
    for record in reader.deserialize() {
        let r: CsvRecord = record.map_err(|e| parse_error(path, e))?;
        let x = position_or_push(&mut features, r.feature);
        let i = position_or_push(&mut classes, r.class);
        if entries.insert((x, i), r.weight).is_some() {
            return Err(parse_error(
                path,
                format!("duplicate entry for {}/{}", features[x], classes[i]),
            ));
        }
    }
    let weights = (0..features.len())
        .map(|x| (0..classes.len()).map(|i| entries.get(&(x, i)).copied().unwrap_or(0.0)).collect())
        .collect();
    Ok(TableFile {
        features,
        classes,
        weights,
    })
}

fn position_or_push(labels: &mut Vec<String>, label: String) -> usize {
    match labels.iter().position(|l| *l == label) {
        Some(k) => k,
        None => {
            labels.push(label);
            labels.len() - 1
        }
    }
}

/// Reads a table file without validating its weights.
pub fn read_table(path: &Path) -> Result<TableFile, CliError> {
    if is_csv(path) {
        parse_csv_table(&read(path)?, path)
    } else {
        read_json(path)
    }
}

impl TableFile {
    pub fn table(&self) -> Result<Table, Error> {
        let rows = self.weights.len();
        if rows != self.features.len() || self.weights.iter().any(|r| r.len() != self.classes.len()) {
            return Err(Error::ShapeMismatch {
                expected: (self.features.len(), self.classes.len()),
                found: (rows, self.weights.first().map_or(0, Vec::len)),
            });
        }
        Table::from_rows(&self.weights)
    }

    pub fn validate(&self) -> Result<ValidationReport, Error> {
        Ok(shiftkit_core::dist::validate(&self.features, &self.classes, &self.table()?))
    }

    pub fn distribution(&self) -> Result<FiniteJointDistribution, Error> {
        FiniteJointDistribution::new(self.features.clone(), self.classes.clone(), self.table()?)
    }

    pub fn from_distribution(dist: &FiniteJointDistribution) -> Self {
        TableFile {
            features: dist.features().to_vec(),
            classes: dist.classes().to_vec(),
            weights: dist.weights().iter_rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

pub fn load_distribution(path: &Path) -> Result<FiniteJointDistribution, CliError> {
    Ok(read_table(path)?.distribution()?)
}

fn same_labels(expected: &[String], found: &[String]) -> Result<(), Error> {
    if expected.len() != found.len() {
        return Err(Error::ShapeMismatch {
            expected: (expected.len(), 1),
            found: (found.len(), 1),
        });
    }
    if expected != found {
        return Err(Error::LabelMismatch);
    }
    Ok(())
}

/// Feature vector whose labels must equal the distribution's.
pub fn load_feature_vector(path: &Path, dist: &FiniteJointDistribution) -> Result<Vec<f64>, CliError> {
    let file: FeatureVectorFile = read_json(path)?;
    if file.values.len() != file.features.len() {
        return Err(parse_error(path, "features and values differ in length"));
    }
    same_labels(dist.features(), &file.features)?;
    Ok(file.values)
}

pub fn load_density(path: &Path, dist: &FiniteJointDistribution) -> Result<FeatureDensity, CliError> {
    Ok(FeatureDensity::new(load_feature_vector(path, dist)?, dist)?)
}

pub fn load_priors(path: &Path, dist: &FiniteJointDistribution) -> Result<ClassPriors, CliError> {
    let file: PriorsFile = read_json(path)?;
    if file.values.len() != file.classes.len() {
        return Err(parse_error(path, "classes and values differ in length"));
    }
    same_labels(dist.classes(), &file.classes)?;
    Ok(ClassPriors::new(file.values)?)
}

/// Selection probabilities in the distribution shape, labelled like `dist`.
pub fn load_selection(path: &Path, dist: &FiniteJointDistribution) -> Result<SelectionModel, CliError> {
    let file = read_table(path)?;
    same_labels(dist.features(), &file.features)?;
    same_labels(dist.classes(), &file.classes)?;
    Ok(SelectionModel::new(file.table()?)?)
}

/// Every feature of `dist` must be mapped, and nothing else.
pub fn load_map(path: &Path, dist: &FiniteJointDistribution) -> Result<RepresentationMap, CliError> {
    let file: MapFile = read_json(path)?;
    let mut labels = Vec::with_capacity(dist.num_cells());
    for f in dist.features() {
        match file.groups.get(f) {
            Some(g) => labels.push(g.as_str()),
            None => return Err(Error::LabelMismatch.into()),
        }
    }
    if file.groups.len() != dist.num_cells() {
        return Err(Error::LabelMismatch.into());
    }
    Ok(RepresentationMap::from_labels(&labels)?)
}
