//! Tabular dataset model and CSV ingestion.
//!
//! Feature columns are named `<modality>__<name>`; the modality tags drive
//! masking and attribution summaries. Bioregion is a categorical per-row code
//! that is one-hot encoded into `bioreg__*` columns at ingestion (the raw code
//! is retained for the biogeographic baseline).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// Predictor family a feature column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Bioreg,
    Abio,
    Rsbio,
    Msi,
    Sar,
    Other,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Bioreg,
        Modality::Abio,
        Modality::Rsbio,
        Modality::Msi,
        Modality::Sar,
        Modality::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Bioreg => "bioreg",
            Modality::Abio => "abio",
            Modality::Rsbio => "rsbio",
            Modality::Msi => "msi",
            Modality::Sar => "sar",
            Modality::Other => "other",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Modality> {
        match s {
            "bioreg" => Ok(Modality::Bioreg),
            "abio" => Ok(Modality::Abio),
            "rsbio" => Ok(Modality::Rsbio),
            "msi" => Ok(Modality::Msi),
            "sar" => Ok(Modality::Sar),
            "other" => Ok(Modality::Other),
            _ => Err(Error::SchemaError(format!("unknown modality {s:?}"))),
        }
    }
}

/// Policy for cells that fail to parse as numbers ("NA", empty, "NaN").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    DropRow,
    MedianImpute,
}

/// Immutable tabular dataset. All rows share one column schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleTable {
    pub ids: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub bioregion: Vec<String>,
    /// Leaf class index per row; `None` at predict time.
    pub leaf: Vec<Option<usize>>,
    pub feature_names: Vec<String>,
    pub modalities: Vec<Modality>,
    pub features: Array2<f64>,
}

impl SampleTable {
    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Column indices whose modality is in `mask`.
    pub fn columns_for(&self, mask: &[Modality]) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&j| mask.contains(&self.modalities[j]))
            .collect()
    }

    /// Feature sub-matrix for the given rows and columns.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), cols.len()));
        for (ri, &r) in rows.iter().enumerate() {
            for (ci, &c) in cols.iter().enumerate() {
                out[[ri, ci]] = self.features[[r, c]];
            }
        }
        out
    }

    /// Leaf labels of the given rows; errors if any is missing.
    pub fn labels(&self, rows: &[usize]) -> Result<Vec<usize>> {
        rows.iter()
            .map(|&r| {
                self.leaf[r]
                    .ok_or_else(|| Error::SchemaError(format!("row {r} has no class label")))
            })
            .collect()
    }

    /// Per-leaf sample counts over the given rows.
    pub fn class_counts(&self, rows: &[usize], n_leaves: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_leaves];
        for &r in rows {
            if let Some(c) = self.leaf[r] {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Row-subset copy preserving the full feature schema.
    pub fn subset(&self, rows: &[usize]) -> SampleTable {
        let cols: Vec<usize> = (0..self.n_features()).collect();
        SampleTable {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            x: rows.iter().map(|&r| self.x[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            bioregion: rows.iter().map(|&r| self.bioregion[r].clone()).collect(),
            leaf: rows.iter().map(|&r| self.leaf[r]).collect(),
            feature_names: self.feature_names.clone(),
            modalities: self.modalities.clone(),
            features: self.submatrix(rows, &cols),
        }
    }

    /// Stable hash of the feature schema (names + modalities).
    pub fn schema_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.feature_names.hash(&mut h);
        for m in &self.modalities {
            m.as_str().hash(&mut h);
        }
        h.finish()
    }
}

const MANDATORY: [&str; 6] = ["plot_id", "x", "y", "bioregion", "formation", "class"];

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// Loads a dataset CSV, validating labels against the taxonomy and applying
/// the missing-value policy. Bioregion is one-hot encoded unless the file
/// already carries `bioreg__` columns.
pub fn load_dataset(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
    policy: MissingPolicy,
) -> Result<SampleTable> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    for m in MANDATORY {
        if !header.iter().any(|h| h == m) {
            return Err(Error::SchemaError(format!("missing mandatory column {m:?}")));
        }
    }
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (ci_id, ci_x, ci_y, ci_bio, ci_class) = (
        col("plot_id"),
        col("x"),
        col("y"),
        col("bioregion"),
        col("class"),
    );
    let mut feat_cols: Vec<(usize, String, Modality)> = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if MANDATORY.contains(&name.as_str()) {
            continue;
        }
        let (prefix, _) = name
            .split_once("__")
            .ok_or_else(|| Error::SchemaError(format!("feature column {name:?} lacks a modality prefix")))?;
        feat_cols.push((j, name.clone(), prefix.parse()?));
    }

    let mut ids = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut bioregion = Vec::new();
    let mut leaf = Vec::new();
    // Raw cells, Some(v) when numeric, None when missing.
    let mut raw: Vec<Vec<Option<f64>>> = Vec::new();

    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |j: usize| rec.get(j).unwrap_or("").to_string();
        let parse_coord = |j: usize, name: &str| -> Result<f64> {
            get(j)
                .trim()
                .parse()
                .map_err(|_| Error::NonNumericFeature(name.to_string(), row_idx))
        };
        let class_cell = get(ci_class);
        let leaf_idx = if is_missing(&class_cell) {
            None
        } else {
            Some(
                taxonomy
                    .leaf_index(class_cell.trim())
                    .ok_or_else(|| Error::UnknownLabel(class_cell.trim().to_string(), row_idx))?,
            )
        };
        let mut row = Vec::with_capacity(feat_cols.len());
        for (j, name, _) in &feat_cols {
            let cell = get(*j);
            if is_missing(&cell) {
                row.push(None);
            } else {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::NonNumericFeature(name.clone(), row_idx))?;
                row.push(Some(v));
            }
        }
        ids.push(get(ci_id));
        xs.push(parse_coord(ci_x, "x")?);
        ys.push(parse_coord(ci_y, "y")?);
        bioregion.push(get(ci_bio).trim().to_string());
        leaf.push(leaf_idx);
        raw.push(row);
    }

    // Missing policy.
    let keep: Vec<usize> = match policy {
        MissingPolicy::DropRow => (0..raw.len())
            .filter(|&r| raw[r].iter().all(|c| c.is_some()))
            .collect(),
        MissingPolicy::MedianImpute => (0..raw.len()).collect(),
    };
    if policy == MissingPolicy::MedianImpute {
        for j in 0..feat_cols.len() {
            let mut vals: Vec<f64> = raw.iter().filter_map(|r| r[j]).collect();
            if vals.is_empty() {
                return Err(Error::SchemaError(format!(
                    "column {:?} is entirely missing",
                    feat_cols[j].1
                )));
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = if vals.len() % 2 == 1 {
                vals[vals.len() / 2]
            } else {
                0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
            };
            for r in raw.iter_mut() {
                if r[j].is_none() {
                    r[j] = Some(med);
                }
            }
        }
    }

    let n = keep.len();
    let mut features = Array2::zeros((n, feat_cols.len()));
    for (ri, &r) in keep.iter().enumerate() {
        for j in 0..feat_cols.len() {
            features[[ri, j]] = raw[r][j].unwrap();
        }
    }
    let select = |v: &[String]| keep.iter().map(|&r| v[r].clone()).collect::<Vec<_>>();
    let mut table = SampleTable {
        ids: select(&ids),
        x: keep.iter().map(|&r| xs[r]).collect(),
        y: keep.iter().map(|&r| ys[r]).collect(),
        bioregion: select(&bioregion),
        leaf: keep.iter().map(|&r| leaf[r]).collect(),
        feature_names: feat_cols.iter().map(|(_, n, _)| n.clone()).collect(),
        modalities: feat_cols.iter().map(|(_, _, m)| *m).collect(),
        features,
    };

    if !table.modalities.contains(&Modality::Bioreg) {
        table = one_hot_bioregion(table);
    }
    Ok(table)
}

/// Appends one `bioreg__<code>` 0/1 column per distinct bioregion code.
fn one_hot_bioregion(t: SampleTable) -> SampleTable {
    let mut codes: Vec<String> = t.bioregion.clone();
    codes.sort();
    codes.dedup();
    let n = t.n_rows();
    let mut onehot = Array2::zeros((n, codes.len()));
    for r in 0..n {
        let j = codes.binary_search(&t.bioregion[r]).unwrap();
        onehot[[r, j]] = 1.0;
    }
    let mut feature_names = t.feature_names;
    let mut modalities = t.modalities;
    for c in &codes {
        feature_names.push(format!("bioreg__{c}"));
        modalities.push(Modality::Bioreg);
    }
    let features = ndarray::concatenate(Axis(1), &[t.features.view(), onehot.view()]).unwrap();
    SampleTable {
        ids: t.ids,
        x: t.x,
        y: t.y,
        bioregion: t.bioregion,
        leaf: t.leaf,
        feature_names,
        modalities,
        features,
    }
}

/// Writes a dataset CSV that `load_dataset` reads back bit-identically
/// (shortest round-trip float formatting, identical row order).
pub fn write_dataset(path: impl AsRef<Path>, table: &SampleTable, taxonomy: &Taxonomy) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = MANDATORY.iter().map(|s| s.to_string()).collect();
    header.extend(table.feature_names.iter().cloned());
    w.write_record(&header)?;
    for r in 0..table.n_rows() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        rec.push(table.ids[r].clone());
        rec.push(format!("{}", table.x[r]));
        rec.push(format!("{}", table.y[r]));
        rec.push(table.bioregion[r].clone());
        match table.leaf[r] {
            Some(c) => {
                rec.push(taxonomy.formations()[taxonomy.parent_of(c)].clone());
                rec.push(taxonomy.leaves()[c].clone());
            }
            None => {
                rec.push(String::new());
                rec.push(String::new());
            }
        }
        for j in 0..table.n_features() {
            rec.push(format!("{}", table.features[[r, j]]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Column standardization fit on training rows only. One-hot (0/1) columns
/// and BIOREG columns are passed through.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub scaled: Vec<bool>,
}

impl Scaler {
    pub fn fit(x: &Array2<f64>, modalities: &[Modality]) -> Scaler {
        let (n, p) = x.dim();
        let mut mean = vec![0.0; p];
        let mut sd = vec![1.0; p];
        let mut scaled = vec![false; p];
        for j in 0..p {
            if modalities[j] == Modality::Bioreg {
                continue;
            }
            let col = x.index_axis(Axis(1), j);
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            if binary {
                continue;
            }
            let m = col.sum() / n as f64;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            sd[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
            scaled[j] = true;
        }
        Scaler { mean, sd, scaled }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for j in 0..self.mean.len() {
            if self.scaled[j] {
                let mut col = out.index_axis_mut(Axis(1), j);
                col.mapv_inplace(|v| (v - self.mean[j]) / self.sd[j]);
            }
        }
        out
    }
}

/// Per-sample probability vectors over a declared leaf-class list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbabilityTable {
    /// Leaf indices (into the taxonomy) labelling the columns.
    pub classes: Vec<usize>,
    pub probs: Array2<f64>,
}

impl ProbabilityTable {
    pub fn n_rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Top-1 class (taxonomy leaf index) per row, ties by ascending column.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                self.classes[best]
            })
            .collect()
    }

    pub fn assert_rows_normalized(&self, tol: f64) -> Result<()> {
        for (i, row) in self.probs.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::ShapeMismatch(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }
}
