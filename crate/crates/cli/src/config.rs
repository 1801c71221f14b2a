//! Run configuration: one TOML document, optionally patched with
//! `key=value` overrides before it is interpreted.

use std::fs;
use std::path::{Path, PathBuf};

use gctf::harness::{GridSpec, MaskPlan, SyntheticSpec};
use gctf::{Cost, UpdateConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cost for `fit`; takes precedence over `engine.cost`.
    pub cost: Option<Cost>,
    pub data: DataSection,
    pub model: ModelSection,
    /// Missing-data pattern applied to the first observation in `fit`.
    pub mask: Option<MaskPlan>,
    pub engine: UpdateConfig,
    pub grid: GridSpec,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub x1: Option<PathBuf>,
    pub x2: Option<PathBuf>,
    pub x3: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Replace every positive link count by 1.
    pub binarize_x1: bool,
    /// Map positive feature counts `v` to `1 + ln v`.
    pub preprocess_x3: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Cp,
    Tucker,
    #[default]
    CoupledCp,
    CoupledTucker,
    /// A model document given by `model.document`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelChoice,
    pub components: usize,
    pub core: [usize; 3],
    pub document: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelChoice::default(),
            components: 2,
            core: [2, 2, 2],
            document: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Report file name inside `dir`; the CSV table goes next to it.
    pub report: PathBuf,
    pub record_timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            report: PathBuf::from("report.json"),
            record_timing: false,
        }
    }
}

/// A loaded configuration together with the directory its relative input
/// paths are resolved against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Reads `path` (or starts from an empty document), applies the overrides
/// in order and deserialises the result.
pub fn load(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<Loaded, String> {
    let (mut table, base_dir) = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            let table: Table = toml::from_str(&text)
                .map_err(|e| format!("invalid config {}: {e}", p.display()))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, dir)
        }
        None => (Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e| format!("invalid config: {e}"))?;
    if let Some(seed) = seed {
        config.apply_seed(seed);
    }
    Ok(Loaded { config, base_dir })
}

/// Sets a dotted key such as `engine.max_iters=50`. The value is read as a
/// TOML value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` is malformed"));
    }
    let value = parse_value(raw.trim());

    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{key}`: `{part}` is not a section"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// The `--seed` flag: replaces every seed the configuration carries.
    pub fn apply_seed(&mut self, seed: u64) {
        self.engine.seed = seed;
        self.grid.base_seed = seed;
        if let Some(mask) = self.mask.as_mut() {
            mask.seed = seed;
        }
        if let Some(s) = self.data.synthetic.as_mut() {
            s.seed = seed;
        }
    }

    pub fn fit_settings(&self) -> UpdateConfig {
        UpdateConfig {
            cost: self.cost.unwrap_or(self.engine.cost),
            ..self.engine.clone()
        }
    }
}
