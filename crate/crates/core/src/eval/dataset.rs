use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const VISA_SPLIT_CSV: &str = "split_csv/1cls.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Mvtec,
    Visa,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvtec" => Ok(Self::Mvtec),
            "visa" => Ok(Self::Visa),
            other => Err(Error::invalid(format!(
                "unknown dataset layout {other:?} (expected mvtec | visa)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestItem {
    pub path: PathBuf,
    pub anomalous: bool,
    pub defect: String,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryIndex {
    pub name: String,
    /// Nominal reference pool in sorted filename order.
    pub train: Vec<PathBuf>,
    pub test: Vec<TestItem>,
}

impl CategoryIndex {
    pub fn n_anomalous(&self) -> usize {
        self.test.iter().filter(|t| t.anomalous).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub layout: Layout,
    pub categories: Vec<CategoryIndex>,
}

impl DatasetIndex {
    pub fn category(&self, name: &str) -> Option<&CategoryIndex> {
        self.categories.iter().find(|c| c.name == name)
    }
}

fn dataset_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        message: msg.into(),
    }
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_image(p)).collect())
}

fn detect_layout(root: &Path) -> Layout {
    if root.join(VISA_SPLIT_CSV).is_file() {
        Layout::Visa
    } else {
        Layout::Mvtec
    }
}

/// Indexes a dataset tree; `layout: None` picks VisA when its split file exists.
pub fn load_dataset(root: &Path, layout: Option<Layout>) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let layout = layout.unwrap_or_else(|| detect_layout(root));
    let categories = match layout {
        Layout::Mvtec => load_mvtec(root)?,
        Layout::Visa => load_visa(root)?,
    };
    if categories.is_empty() {
        return Err(dataset_err(root, "no categories found"));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        layout,
        categories,
    })
}

fn load_mvtec(root: &Path) -> Result<Vec<CategoryIndex>> {
    let mut out = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.join("train").is_dir() {
            continue;
        }
        out.push(load_mvtec_category(&dir)?);
    }
    Ok(out)
}

fn load_mvtec_category(dir: &Path) -> Result<CategoryIndex> {
    let name = dir.file_name().unwrap().to_string_lossy().into_owned();
    let good = dir.join("train").join("good");
    let train = if good.is_dir() { list_images(&good)? } else { Vec::new() };
    if train.is_empty() {
        return Err(dataset_err(&good, "no reference pool: train/good has no images"));
    }
    let test_dir = dir.join("test");
    if !test_dir.is_dir() {
        return Err(dataset_err(&test_dir, "missing test directory"));
    }
    let mut test = Vec::new();
    let mut missing = Vec::new();
    for type_dir in sorted_entries(&test_dir)? {
        if !type_dir.is_dir() {
            continue;
        }
        let defect = type_dir.file_name().unwrap().to_string_lossy().into_owned();
        let anomalous = defect != "good";
        for path in list_images(&type_dir)? {
            let mask = if anomalous {
                let stem = path.file_stem().unwrap().to_string_lossy();
                let m = dir.join("ground_truth").join(&defect).join(format!("{stem}_mask.png"));
                if !m.is_file() {
                    missing.push(m.display().to_string());
                }
                Some(m)
            } else {
                None
            };
            test.push(TestItem {
                path,
                anomalous,
                defect: defect.clone(),
                mask,
            });
        }
    }
    if !missing.is_empty() {
        return Err(dataset_err(
            dir,
            format!("missing ground-truth masks: {}", missing.join(", ")),
        ));
    }
    Ok(CategoryIndex { name, train, test })
}

#[derive(Debug, Deserialize)]
struct VisaRow {
    object: String,
    split: String,
    label: String,
    image: String,
    #[serde(default)]
    mask: String,
}

fn load_visa(root: &Path) -> Result<Vec<CategoryIndex>> {
    let csv_path = root.join(VISA_SPLIT_CSV);
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| dataset_err(&csv_path, e.to_string()))?;
    let mut out: Vec<CategoryIndex> = Vec::new();
    let mut missing = Vec::new();
    for (line, row) in reader.deserialize::<VisaRow>().enumerate() {
        let row = row.map_err(|e| dataset_err(&csv_path, format!("row {}: {e}", line + 2)))?;
        let cat = match out.iter().position(|c| c.name == row.object) {
            Some(i) => &mut out[i],
            None => {
                out.push(CategoryIndex {
                    name: row.object.clone(),
                    train: Vec::new(),
                    test: Vec::new(),
                });
                out.last_mut().unwrap()
            }
        };
        let anomalous = match row.label.as_str() {
            "normal" => false,
            "anomaly" => true,
            other => {
                return Err(dataset_err(
                    &csv_path,
                    format!("row {}: unknown label {other:?}", line + 2),
                ))
            }
        };
        let path = root.join(&row.image);
        match row.split.as_str() {
            "train" if !anomalous => cat.train.push(path),
            "train" => {}
            "test" => {
                let mask = if anomalous {
                    let m = root.join(&row.mask);
                    if row.mask.is_empty() || !m.is_file() {
                        missing.push(m.display().to_string());
                    }
                    Some(m)
                } else {
                    None
                };
                cat.test.push(TestItem {
                    path,
                    anomalous,
                    defect: if anomalous { "anomaly" } else { "good" }.into(),
                    mask,
                });
            }
            other => {
                return Err(dataset_err(
                    &csv_path,
                    format!("row {}: unknown split {other:?}", line + 2),
                ))
            }
        }
    }
    if !missing.is_empty() {
        return Err(dataset_err(
            &csv_path,
            format!("missing ground-truth masks: {}", missing.join(", ")),
        ));
    }
    for c in &mut out {
        if c.train.is_empty() {
            return Err(dataset_err(&csv_path, format!("no reference pool for {}", c.name)));
        }
        c.train.sort();
        c.test.sort_by(|a, b| a.path.cmp(&b.path));
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
