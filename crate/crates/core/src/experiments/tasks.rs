//! Disjoint class-subset tasks over one labeled dataset.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::idx::{load_idx_dir, LabeledImages};
use crate::error::{Error, Result};
use crate::model::{Dataset, TaskData};

/// A task: the listed original classes, relabeled `0..K` in list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub data_dir: PathBuf,
    pub classes: Vec<u8>,
    /// Examples kept per class, in file order; `None` keeps all.
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
}

impl TaskSpec {
    /// Parses `DIR:c0,c1[,...][:TRAIN[:TEST]]`, or reads a JSON file when
    /// the argument ends in `.json`.
    pub fn parse(arg: &str) -> Result<TaskSpec> {
        if arg.ends_with(".json") {
            let text = std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?;
            return Ok(serde_json::from_str(&text)?);
        }
        // The class list is the first comma-separated numeric field, so the
        // directory itself may contain colons.
        let parts: Vec<&str> = arg.split(':').collect();
        let cls_at = parts
            .iter()
            .position(|p| {
                !p.is_empty() && p.split(',').all(|c| c.parse::<u8>().is_ok()) && p.contains(',')
            })
            .ok_or_else(|| {
                Error::InvalidArgument(format!("task {arg:?} is not DIR:c0,c1[:train[:test]]"))
            })?;
        let dir = parts[..cls_at].join(":");
        let classes: Vec<u8> = parts[cls_at]
            .split(',')
            .map(|c| c.parse().unwrap())
            .collect();
        let limit = |i: usize| -> Result<Option<usize>> {
            parts
                .get(i)
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad per-class count {p:?}")))
                })
                .transpose()
        };
        Ok(TaskSpec {
            name: format!("classes-{}", parts[cls_at].replace(',', "-")),
            data_dir: PathBuf::from(dir),
            classes,
            train_per_class: limit(cls_at + 1)?,
            test_per_class: limit(cls_at + 2)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Loads from already-decoded train and test sets.
    pub fn load_from(&self, train: &LabeledImages, test: &LabeledImages) -> Result<TaskData> {
        Ok(TaskData {
            train: select_classes(train, &self.classes, self.train_per_class)?,
            test: select_classes(test, &self.classes, self.test_per_class)?,
        })
    }

    pub fn load(&self) -> Result<TaskData> {
        let (train, test) = load_idx_dir(&self.data_dir)?;
        self.load_from(&train, &test)
    }
}

/// Examples of `classes`, relabeled by position in `classes`.
pub fn select_classes(
    set: &LabeledImages,
    classes: &[u8],
    per_class: Option<usize>,
) -> Result<Dataset> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "a task needs at least two classes".into(),
        ));
    }
    let mut taken = vec![0usize; classes.len()];
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (img, &label) in set.images.iter().zip(&set.labels) {
        if let Some(k) = classes.iter().position(|&c| c == label) {
            if per_class.is_none_or(|cap| taken[k] < cap) {
                taken[k] += 1;
                images.push(img.clone());
                labels.push(k);
            }
        }
    }
    if let Some(k) = taken.iter().position(|&t| t == 0) {
        return Err(Error::Dataset(format!(
            "class {} has no examples",
            classes[k]
        )));
    }
    Ok(Dataset {
        images,
        labels,
        num_classes: classes.len(),
    })
}

/// One task per subset; subsets must be pairwise disjoint.
pub fn make_disjoint_tasks(
    data_dir: impl Into<PathBuf>,
    subsets: &[Vec<u8>],
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
) -> Result<Vec<TaskSpec>> {
    let data_dir = data_dir.into();
    let mut seen = HashSet::new();
    for &c in subsets.iter().flatten() {
        if !seen.insert(c) {
            return Err(Error::OverlappingClasses(c));
        }
    }
    Ok(subsets
        .iter()
        .enumerate()
        .map(|(i, classes)| TaskSpec {
            name: format!("set-{}", i + 1),
            data_dir: data_dir.clone(),
            classes: classes.clone(),
            train_per_class,
            test_per_class,
        })
        .collect())
}

/// `{0,1}, {2,3}, ..., {8,9}`.
pub fn default_subsets() -> Vec<Vec<u8>> {
    (0..5).map(|i| vec![2 * i, 2 * i + 1]).collect()
}
