//! Labeled point clouds and their CSV / ASCII PLY representations.
//!
//! Point order is preserved exactly on load and save: the index of a point in
//! the file is the index used by pixel mappings and prediction sets.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub type CategoryId = u32;
pub type Rgb = [u8; 3];

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("point cloud file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}:{line}: non-numeric value {value:?} in column `{column}`")]
    NonNumeric {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{path}: required `label` column/property is missing")]
    MissingLabel { path: PathBuf },
    #[error("{path}:{line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}:{line}: non-finite coordinate")]
    NonFinite { path: PathBuf, line: u64 },
    #[error("cannot infer point cloud format from {0} (expected .csv or .ply)")]
    UnknownFormat(PathBuf),
    #[error("invalid category sidecar {path}: {reason}")]
    BadCategories { path: PathBuf, reason: String },
    #[error("column lengths differ: {positions} positions, {labels} labels, {colors:?} colors")]
    LengthMismatch {
        positions: usize,
        labels: usize,
        colors: Option<usize>,
    },
    #[error("label {0} has no category name")]
    UnnamedLabel(CategoryId),
    #[error("cloud has {0} non-finite coordinates")]
    InvalidCoordinates(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    Csv,
    PlyAscii,
    #[default]
    Auto,
}

impl CloudFormat {
    fn resolve(self, path: &Path) -> Result<CloudFormat, CloudError> {
        match self {
            CloudFormat::Auto => {
                let ext = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase);
                match ext.as_deref() {
                    Some("csv") => Ok(CloudFormat::Csv),
                    Some("ply") => Ok(CloudFormat::PlyAscii),
                    _ => Err(CloudError::UnknownFormat(path.to_path_buf())),
                }
            }
            f => Ok(f),
        }
    }
}

/// Columnar point set with ground-truth category labels.
///
/// Construction only checks that the columns have equal length; finiteness and
/// category coverage are reported by [`validate_cloud`] and enforced by
/// [`LabeledCloud::ensure_valid`] at the entry of downstream stages.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    positions: Vec<[f64; 3]>,
    colors: Option<Vec<Rgb>>,
    labels: Vec<CategoryId>,
    category_names: BTreeMap<CategoryId, String>,
}

impl LabeledCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        colors: Option<Vec<Rgb>>,
        labels: Vec<CategoryId>,
        category_names: BTreeMap<CategoryId, String>,
    ) -> Result<Self, CloudError> {
        let colors_len = colors.as_ref().map(Vec::len);
        if positions.len() != labels.len() || colors_len.is_some_and(|n| n != positions.len()) {
            return Err(CloudError::LengthMismatch {
                positions: positions.len(),
                labels: labels.len(),
                colors: colors_len,
            });
        }
        Ok(Self {
            positions,
            colors,
            labels,
            category_names,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> &[CategoryId] {
        &self.labels
    }

    pub fn category_names(&self) -> &BTreeMap<CategoryId, String> {
        &self.category_names
    }

    pub fn category_name(&self, id: CategoryId) -> Option<&str> {
        self.category_names.get(&id).map(String::as_str)
    }

    /// Looks up a category id by name, ignoring case and `_`/space differences.
    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        let key = normalize_name(name);
        self.category_names
            .iter()
            .find(|(_, n)| normalize_name(n) == key)
            .map(|(&id, _)| id)
    }

    /// Replaces the category table. Every label present must be named.
    pub fn with_category_names(
        mut self,
        names: BTreeMap<CategoryId, String>,
    ) -> Result<Self, CloudError> {
        if let Some(&missing) = self.labels.iter().find(|l| !names.contains_key(l)) {
            return Err(CloudError::UnnamedLabel(missing));
        }
        self.category_names = names;
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Option<Vec<Rgb>>) -> Result<Self, CloudError> {
        if let Some(c) = &colors {
            if c.len() != self.len() {
                return Err(CloudError::LengthMismatch {
                    positions: self.len(),
                    labels: self.labels.len(),
                    colors: Some(c.len()),
                });
            }
        }
        self.colors = colors;
        Ok(self)
    }

    /// Errors if the cloud violates any of its invariants.
    pub fn ensure_valid(&self) -> Result<(), CloudError> {
        let report = validate_cloud(self);
        if report.n_invalid_coords > 0 {
            return Err(CloudError::InvalidCoordinates(report.n_invalid_coords));
        }
        if let Some(&missing) = report.missing_labels.first() {
            return Err(CloudError::UnnamedLabel(missing));
        }
        Ok(())
    }
}

pub(crate) fn normalize_name(name: &str) -> String {
    name.trim()
        .chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudValidationReport {
    pub n_points: usize,
    pub n_invalid_coords: usize,
    pub missing_labels: Vec<CategoryId>,
    /// Bounds over finite points; `None` when there are none.
    pub bbox: Option<BoundingBox>,
}

/// Counts points with a non-finite coordinate, lists unnamed labels and
/// computes the bounding box of the finite points.
pub fn validate_cloud(cloud: &LabeledCloud) -> CloudValidationReport {
    let mut n_invalid = 0;
    let mut bbox: Option<BoundingBox> = None;
    for p in &cloud.positions {
        if !p.iter().all(|v| v.is_finite()) {
            n_invalid += 1;
            continue;
        }
        let b = bbox.get_or_insert(BoundingBox { min: *p, max: *p });
        for k in 0..3 {
            b.min[k] = b.min[k].min(p[k]);
            b.max[k] = b.max[k].max(p[k]);
        }
    }
    let mut missing: Vec<CategoryId> = cloud
        .labels
        .iter()
        .filter(|l| !cloud.category_names.contains_key(l))
        .copied()
        .collect();
    missing.sort_unstable();
    missing.dedup();
    CloudValidationReport {
        n_points: cloud.len(),
        n_invalid_coords: n_invalid,
        missing_labels: missing,
        bbox,
    }
}

#[derive(Serialize, Deserialize)]
struct CategorySidecar {
    categories: BTreeMap<String, String>,
}

/// Path of the category sidecar that accompanies a cloud file:
/// `town.csv` → `town.categories.json`.
pub fn category_sidecar_path(cloud_path: &Path) -> PathBuf {
    cloud_path.with_extension("categories.json")
}

pub fn read_categories(path: &Path) -> Result<BTreeMap<CategoryId, String>, CloudError> {
    let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    let sidecar: CategorySidecar =
        serde_json::from_str(&text).map_err(|e| CloudError::BadCategories {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    sidecar
        .categories
        .into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<CategoryId>()
                .map(|id| (id, v))
                .map_err(|_| CloudError::BadCategories {
                    path: path.to_path_buf(),
                    reason: format!("category key {k:?} is not a non-negative integer"),
                })
        })
        .collect()
}

pub fn write_categories(
    names: &BTreeMap<CategoryId, String>,
    path: &Path,
) -> Result<(), CloudError> {
    let sidecar = CategorySidecar {
        categories: names.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("category map serializes");
    fs::write(path, text).map_err(|source| io_err(path, source))
}

fn io_err(path: &Path, source: std::io::Error) -> CloudError {
    if source.kind() == std::io::ErrorKind::NotFound {
        CloudError::NotFound(path.to_path_buf())
    } else {
        CloudError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Loads a cloud, preserving file order.
///
/// Category names come from, in order of precedence: the JSON sidecar next to
/// the file, `comment category <id> <name>` lines of a PLY header, and finally
/// a generated `label_<id>` placeholder for any label left unnamed.
pub fn load_point_cloud(path: &Path, format: CloudFormat) -> Result<LabeledCloud, CloudError> {
    if !path.exists() {
        return Err(CloudError::NotFound(path.to_path_buf()));
    }
    let (positions, colors, labels, mut names) = match format.resolve(path)? {
        CloudFormat::Csv => read_csv(path)?,
        CloudFormat::PlyAscii => read_ply(path)?,
        CloudFormat::Auto => unreachable!("resolved above"),
    };
    let sidecar = category_sidecar_path(path);
    if sidecar.exists() {
        names = read_categories(&sidecar)?;
    }
    for l in &labels {
        names.entry(*l).or_insert_with(|| format!("label_{l}"));
    }
    LabeledCloud::new(positions, colors, labels, names)
}

type Columns = (
    Vec<[f64; 3]>,
    Option<Vec<Rgb>>,
    Vec<CategoryId>,
    BTreeMap<CategoryId, String>,
);

#[derive(Default)]
struct FieldSlots {
    xyz: [Option<usize>; 3],
    rgb: [Option<usize>; 3],
    label: Option<usize>,
}

impl FieldSlots {
    fn assign(&mut self, name: &str, idx: usize) -> bool {
        let slot = match name.to_ascii_lowercase().as_str() {
            "x" => &mut self.xyz[0],
            "y" => &mut self.xyz[1],
            "z" => &mut self.xyz[2],
            "red" => &mut self.rgb[0],
            "green" => &mut self.rgb[1],
            "blue" => &mut self.rgb[2],
            "label" => &mut self.label,
            _ => return false,
        };
        *slot = Some(idx);
        true
    }

    fn check(&self, path: &Path) -> Result<(usize, Option<[usize; 3]>, [usize; 3]), CloudError> {
        let label = self.label.ok_or_else(|| CloudError::MissingLabel {
            path: path.to_path_buf(),
        })?;
        let xyz = match self.xyz {
            [Some(x), Some(y), Some(z)] => [x, y, z],
            _ => {
                return Err(CloudError::MalformedHeader {
                    path: path.to_path_buf(),
                    reason: "x, y and z are all required".into(),
                })
            }
        };
        let rgb = match self.rgb {
            [Some(r), Some(g), Some(b)] => Some([r, g, b]),
            [None, None, None] => None,
            _ => {
                return Err(CloudError::MalformedHeader {
                    path: path.to_path_buf(),
                    reason: "red, green and blue must appear together".into(),
                })
            }
        };
        Ok((label, rgb, xyz))
    }
}

struct RecordParser<'a> {
    path: &'a Path,
    names: Vec<String>,
    label: usize,
    rgb: Option<[usize; 3]>,
    xyz: [usize; 3],
}

impl RecordParser<'_> {
    fn field<'f>(&self, fields: &[&'f str], idx: usize, line: u64) -> Result<&'f str, CloudError> {
        fields
            .get(idx)
            .map(|s| s.trim())
            .ok_or_else(|| CloudError::MalformedRecord {
                path: self.path.to_path_buf(),
                line,
                reason: format!("expected {} fields, found {}", self.names.len(), fields.len()),
            })
    }

    fn non_numeric(&self, idx: usize, line: u64, value: &str) -> CloudError {
        CloudError::NonNumeric {
            path: self.path.to_path_buf(),
            line,
            column: self.names[idx].clone(),
            value: value.to_string(),
        }
    }

    fn parse(
        &self,
        fields: &[&str],
        line: u64,
    ) -> Result<([f64; 3], Option<Rgb>, CategoryId), CloudError> {
        if fields.len() != self.names.len() {
            return Err(CloudError::MalformedRecord {
                path: self.path.to_path_buf(),
                line,
                reason: format!("expected {} fields, found {}", self.names.len(), fields.len()),
            });
        }
        let mut p = [0.0f64; 3];
        for (k, &idx) in self.xyz.iter().enumerate() {
            let s = self.field(fields, idx, line)?;
            p[k] = s.parse().map_err(|_| self.non_numeric(idx, line, s))?;
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(CloudError::NonFinite {
                path: self.path.to_path_buf(),
                line,
            });
        }
        let color = match self.rgb {
            Some(cols) => {
                let mut c = [0u8; 3];
                for (k, &idx) in cols.iter().enumerate() {
                    let s = self.field(fields, idx, line)?;
                    c[k] = parse_integral(s).ok_or_else(|| self.non_numeric(idx, line, s))?;
                }
                Some(c)
            }
            None => None,
        };
        let s = self.field(fields, self.label, line)?;
        let label = parse_integral(s).ok_or_else(|| self.non_numeric(self.label, line, s))?;
        Ok((p, color, label))
    }
}

/// Accepts `7` as well as exporter output such as `7.0`.
fn parse_integral<T: TryFrom<u64>>(s: &str) -> Option<T> {
    if let Ok(v) = s.parse::<u64>() {
        return T::try_from(v).ok();
    }
    let f: f64 = s.parse().ok()?;
    if f.fract() == 0.0 && f >= 0.0 && f <= u64::MAX as f64 {
        T::try_from(f as u64).ok()
    } else {
        None
    }
}

fn read_csv(path: &Path) -> Result<Columns, CloudError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().all(str::is_empty) {
        return Err(CloudError::MalformedHeader {
            path: path.to_path_buf(),
            reason: "empty header line".into(),
        });
    }
    let mut slots = FieldSlots::default();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    for (i, name) in names.iter().enumerate() {
        if !slots.assign(name, i) {
            log::warn!("{}: ignoring unknown column `{name}`", path.display());
        }
    }
    let (label, rgb, xyz) = slots.check(path)?;
    let parser = RecordParser {
        path,
        names,
        label,
        rgb,
        xyz,
    };

    let mut positions = Vec::new();
    let mut colors = rgb.map(|_| Vec::new());
    let mut labels = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(path, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = record.iter().collect();
        let (p, c, l) = parser.parse(&fields, line)?;
        positions.push(p);
        if let (Some(cs), Some(c)) = (colors.as_mut(), c) {
            cs.push(c);
        }
        labels.push(l);
    }
    Ok((positions, colors, labels, BTreeMap::new()))
}

fn csv_err(path: &Path, e: csv::Error) -> CloudError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => CloudError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: format!("expected {expected_len} fields, found {len}"),
        },
        other => CloudError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: format!("{other:?}"),
        },
    }
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn read_ply(path: &Path) -> Result<Columns, CloudError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut line_no: u64 = 0;
    let header_err = |reason: String| CloudError::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };

    let mut next_line = |line_no: &mut u64| -> Result<Option<String>, CloudError> {
        *line_no += 1;
        lines.next().transpose().map_err(|e| io_err(path, e))
    };

    match next_line(&mut line_no)? {
        Some(l) if l.trim() == "ply" => {}
        _ => return Err(header_err("missing `ply` magic line".into())),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut names = BTreeMap::new();
    let mut saw_format = false;
    loop {
        let Some(line) = next_line(&mut line_no)? else {
            return Err(header_err("missing end_header".into()));
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(header_err(format!("unsupported PLY format `{other}`")))
            }
            ["comment", "category", id, rest @ ..] if !rest.is_empty() => {
                if let Ok(id) = id.parse::<CategoryId>() {
                    names.insert(id, rest.join(" "));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, name] | ["property", _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before any element".into()))?;
                el.properties.push(name.to_string());
            }
            _ => return Err(header_err(format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(header_err("missing `format ascii 1.0` line".into()));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err("no `vertex` element".into()))?;

    let mut slots = FieldSlots::default();
    let vertex = &elements[vertex_pos];
    for (i, name) in vertex.properties.iter().enumerate() {
        if !slots.assign(name, i) {
            log::warn!("{}: ignoring unknown property `{name}`", path.display());
        }
    }
    let (label, rgb, xyz) = slots.check(path)?;
    let parser = RecordParser {
        path,
        names: vertex.properties.clone(),
        label,
        rgb,
        xyz,
    };

    // Elements declared before `vertex` are skipped line by line.
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            if next_line(&mut line_no)?.is_none() {
                return Err(CloudError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: format!("file ends inside element `{}`", el.name),
                });
            }
        }
    }

    let n = vertex.count;
    let mut positions = Vec::with_capacity(n);
    let mut colors = rgb.map(|_| Vec::with_capacity(n));
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let Some(line) = next_line(&mut line_no)? else {
            return Err(CloudError::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("expected {n} vertices, file ended after {}", positions.len()),
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (p, c, l) = parser.parse(&fields, line_no)?;
        positions.push(p);
        if let (Some(cs), Some(c)) = (colors.as_mut(), c) {
            cs.push(c);
        }
        labels.push(l);
    }
    Ok((positions, colors, labels, names))
}

/// Writes a cloud as CSV or ASCII PLY.
///
/// Coordinates use the shortest decimal form that parses back to the same
/// `f64`, so a reload is bit-identical. CSV output also writes the category
/// sidecar; PLY output carries category names as header comments.
pub fn save_labeled_cloud(
    cloud: &LabeledCloud,
    path: &Path,
    format: CloudFormat,
) -> Result<(), CloudError> {
    let format = format.resolve(path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let result = match format {
        CloudFormat::Csv => write_csv(cloud, &mut w),
        CloudFormat::PlyAscii => write_ply(cloud, &mut w),
        CloudFormat::Auto => unreachable!("resolved above"),
    }
    .and_then(|_| w.flush());
    result.map_err(|e| io_err(path, e))?;
    if format == CloudFormat::Csv {
        write_categories(&cloud.category_names, &category_sidecar_path(path))?;
    }
    Ok(())
}

fn write_csv(cloud: &LabeledCloud, w: &mut impl Write) -> std::io::Result<()> {
    match cloud.colors() {
        Some(_) => writeln!(w, "x,y,z,red,green,blue,label")?,
        None => writeln!(w, "x,y,z,label")?,
    }
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.positions[i];
        match cloud.colors() {
            Some(c) => {
                let [r, g, b] = c[i];
                writeln!(w, "{x:?},{y:?},{z:?},{r},{g},{b},{}", cloud.labels[i])?
            }
            None => writeln!(w, "{x:?},{y:?},{z:?},{}", cloud.labels[i])?,
        }
    }
    Ok(())
}

fn write_ply(cloud: &LabeledCloud, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    for (id, name) in &cloud.category_names {
        writeln!(w, "comment category {id} {name}")?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if cloud.colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "property uint label")?;
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.positions[i];
        match cloud.colors() {
            Some(c) => {
                let [r, g, b] = c[i];
                writeln!(w, "{x:?} {y:?} {z:?} {r} {g} {b} {}", cloud.labels[i])?
            }
            None => writeln!(w, "{x:?} {y:?} {z:?} {}", cloud.labels[i])?,
        }
    }
    Ok(())
}
