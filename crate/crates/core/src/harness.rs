//! Link-prediction experiments on a user x location x activity tensor with
//! two side matrices.
//!
//! A cell hides part of `X1` according to a [`MaskPlan`], fits one of the
//! four models, and scores the held-out positions of `X1` by AUC against the
//! original binary labels. Side matrices are always fully observed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit, predict, Cost, FactorSet, FitResult, UpdateConfig};
use crate::error::{GctfError, Result};
use crate::model::{
    build_coupled_cp, build_coupled_tucker, build_cp, build_tucker, LinkDims, ModelSpec,
};
use crate::tensor::{product_then_marginalize, DenseTensor, Index, Mask};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cp,
    Tucker,
    CoupledCp,
    CoupledTucker,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Cp,
        ModelKind::Tucker,
        ModelKind::CoupledCp,
        ModelKind::CoupledTucker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cp => "cp",
            ModelKind::Tucker => "tucker",
            ModelKind::CoupledCp => "coupled_cp",
            ModelKind::CoupledTucker => "coupled_tucker",
        }
    }

    pub fn is_coupled(self) -> bool {
        matches!(self, ModelKind::CoupledCp | ModelKind::CoupledTucker)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = GctfError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                GctfError::InvalidValue(format!(
                    "unknown model `{s}` (expected cp, tucker, coupled_cp or coupled_tucker)"
                ))
            })
    }
}

/// Binary user x location x activity links plus the user x location and
/// location x feature side matrices. Axes are labelled `(i,j,k)`, `(i,m)`
/// and `(j,n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDataset {
    pub x1: DenseTensor,
    pub x2: DenseTensor,
    pub x3: DenseTensor,
}

impl LinkDataset {
    /// Relabels the three tensors and checks that they agree on the user and
    /// location axes and that `x1` is binary.
    pub fn new(x1: DenseTensor, x2: DenseTensor, x3: DenseTensor) -> Result<Self> {
        let x1 = x1.relabel(&["i", "j", "k"])?;
        let x2 = x2.relabel(&["i", "m"])?;
        let x3 = x3.relabel(&["j", "n"])?;
        if let Some(v) = x1.values().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(GctfError::InvalidValue(format!(
                "link tensor must be binary, found {v}"
            )));
        }
        let (s1, s2, s3) = (x1.shape(), x2.shape(), x3.shape());
        if s1[0] != s2[0] {
            return Err(GctfError::Shape(format!(
                "link tensor has {} users but the user-location matrix has {}",
                s1[0], s2[0]
            )));
        }
        if s1[1] != s3[0] {
            return Err(GctfError::Shape(format!(
                "link tensor has {} locations but the feature matrix has {}",
                s1[1], s3[0]
            )));
        }
        Ok(LinkDataset { x1, x2, x3 })
    }

    pub fn dims(&self) -> LinkDims {
        let (s1, s2, s3) = (self.x1.shape(), self.x2.shape(), self.x3.shape());
        LinkDims::new(s1[0], s1[1], s1[2], s2[1], s3[1])
    }
}

/// `1 + ln(v)` for positive counts, 0 otherwise.
pub fn preprocess_features(raw: &DenseTensor) -> Result<DenseTensor> {
    if let Some(v) = raw.values().iter().find(|&&v| v < 0.0) {
        return Err(GctfError::InvalidValue(format!(
            "feature counts must be non-negative, found {v}"
        )));
    }
    raw.map(|v| if v > 0.0 { 1.0 + v.ln() } else { 0.0 })
}

/// 1 where the input is positive, 0 elsewhere.
pub fn binarize(t: &DenseTensor) -> DenseTensor {
    t.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
        .expect("0/1 values are valid tensor entries")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskKind {
    RandomEntries { fraction: f64 },
    MissingSlices { axis: String, count: usize },
}

impl MaskKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            MaskKind::RandomEntries { .. } => "random_entries",
            MaskKind::MissingSlices { .. } => "missing_slices",
        }
    }

    /// The swept quantity: missing fraction or number of missing slices.
    pub fn parameter(&self) -> String {
        match self {
            MaskKind::RandomEntries { fraction } => format!("{fraction}"),
            MaskKind::MissingSlices { count, .. } => count.to_string(),
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskKind::RandomEntries { fraction } => write!(f, "{:.0}% missing", fraction * 100.0),
            MaskKind::MissingSlices { axis, count } => write!(f, "{count} {axis}-slices missing"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    #[serde(flatten)]
    pub kind: MaskKind,
    pub seed: u64,
}

impl MaskPlan {
    pub fn random_entries(fraction: f64, seed: u64) -> Self {
        MaskPlan {
            kind: MaskKind::RandomEntries { fraction },
            seed,
        }
    }

    pub fn missing_slices(axis: impl Into<String>, count: usize, seed: u64) -> Self {
        MaskPlan {
            kind: MaskKind::MissingSlices {
                axis: axis.into(),
                count,
            },
            seed,
        }
    }
}

/// Builds the mask for `plan` over a tensor with the given axes. Returns the
/// mask and the flat offsets of the hidden positions in ascending order.
pub fn make_mask(plan: &MaskPlan, layout: &[Index]) -> Result<(Mask, Vec<usize>)> {
    let mut mask = Mask::ones(layout.to_vec())?;
    let total = mask.tensor().len();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut heldout: Vec<usize> = match &plan.kind {
        MaskKind::RandomEntries { fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(GctfError::InvalidValue(format!(
                    "missing fraction must lie in [0, 1], got {fraction}"
                )));
            }
            let amount = (fraction * total as f64).round() as usize;
            sample(&mut rng, total, amount.min(total)).into_vec()
        }
        MaskKind::MissingSlices { axis, count } => {
            let ax = layout
                .iter()
                .position(|i| &i.label == axis)
                .ok_or_else(|| {
                    GctfError::InvalidValue(format!("no axis `{axis}` to drop slices from"))
                })?;
            let card = layout[ax].cardinality;
            if *count > card {
                return Err(GctfError::InvalidValue(format!(
                    "cannot drop {count} slices from axis `{axis}` of size {card}"
                )));
            }
            let slices = sample(&mut rng, card, *count).into_vec();
            let inner: usize = layout[ax + 1..].iter().map(|i| i.cardinality).product();
            (0..total)
                .filter(|off| slices.contains(&((off / inner) % card)))
                .collect()
        }
    };
    heldout.sort_unstable();
    for &off in &heldout {
        mask.hide(off);
    }
    Ok((mask, heldout))
}

/// Area under the ROC curve in its rank form: the probability that a random
/// positive scores above a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GctfError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GctfError::InvalidValue("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(GctfError::UndefinedMetric(format!(
            "AUC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the positives; tied groups share their mean rank.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_mean_rank = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&o| labels[o]).count() as u64;
        twice_rank_sum += twice_mean_rank * pos_in_group;
        start = end;
    }
    let twice_u = twice_rank_sum - positives * (positives + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Model-size and engine settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSettings {
    /// Rank of the CP models.
    pub components: usize,
    /// Core size `(p, q, r)` of the Tucker models.
    pub core: [usize; 3],
    /// Engine parameters; `cost` and `seed` are set per cell.
    pub engine: UpdateConfig,
    /// Store wall-clock time per cell. Off by default so reports are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for CellSettings {
    fn default() -> Self {
        CellSettings {
            components: 2,
            core: [2, 2, 2],
            engine: UpdateConfig::default(),
            record_timing: false,
        }
    }
}

/// Builds the model of the given kind over the dataset, with `x1_mask` on
/// the link tensor. Single-tensor models only see `X1`.
pub fn build_model(
    dataset: &LinkDataset,
    model: ModelKind,
    x1_mask: Mask,
    settings: &CellSettings,
) -> Result<ModelSpec> {
    let d = dataset.dims();
    let mut spec = match model {
        ModelKind::Cp => build_cp([d.i, d.j, d.k], settings.components)?,
        ModelKind::Tucker => build_tucker([d.i, d.j, d.k], settings.core)?,
        ModelKind::CoupledCp => build_coupled_cp(d, settings.components)?,
        ModelKind::CoupledTucker => build_coupled_tucker(d, settings.core)?,
    };
    spec.set_observation("X1", dataset.x1.clone(), x1_mask)?;
    if model.is_coupled() {
        let full = |t: &DenseTensor| Mask::ones(t.indices().to_vec());
        spec.set_observation("X2", dataset.x2.clone(), full(&dataset.x2)?)?;
        spec.set_observation("X3", dataset.x3.clone(), full(&dataset.x3)?)?;
    }
    Ok(spec)
}

/// Fits one model with `x1_mask` applied and returns the fit together with
/// the reconstructed link tensor.
pub fn fit_cell(
    dataset: &LinkDataset,
    model: ModelKind,
    cost: Cost,
    x1_mask: Mask,
    settings: &CellSettings,
    seed: u64,
) -> Result<(FitResult, DenseTensor)> {
    let spec = build_model(dataset, model, x1_mask, settings)?;
    let config = UpdateConfig {
        cost,
        seed,
        ..settings.engine.clone()
    };
    let result = fit(&spec, &config)?;
    let x1_hat = predict(&spec, &result.factors, spec.observation_id("X1")?)?;
    Ok((result, x1_hat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub model: ModelKind,
    pub cost: Cost,
    pub mask: MaskKind,
    pub repeat: usize,
    pub mask_seed: u64,
    pub engine_seed: u64,
    /// Absent when the metric is undefined or the fit failed.
    pub auc: Option<f64>,
    pub heldout: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: Option<f64>,
    pub wall_ms: Option<u64>,
    pub error: Option<String>,
}

/// Runs one experiment cell. Failures are recorded in the returned record.
pub fn run_cell(
    dataset: &LinkDataset,
    model: ModelKind,
    cost: Cost,
    plan: &MaskPlan,
    settings: &CellSettings,
    engine_seed: u64,
    repeat: usize,
) -> CellRecord {
    let started = Instant::now();
    let mut record = CellRecord {
        model,
        cost,
        mask: plan.kind.clone(),
        repeat,
        mask_seed: plan.seed,
        engine_seed,
        auc: None,
        heldout: 0,
        iterations: 0,
        converged: false,
        final_objective: None,
        wall_ms: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let (mask, heldout) = make_mask(plan, dataset.x1.indices())?;
        record.heldout = heldout.len();
        let (fit, x1_hat) = fit_cell(dataset, model, cost, mask, settings, engine_seed)?;
        record.iterations = fit.iterations_run;
        record.converged = fit.converged;
        record.final_objective = Some(fit.final_objective());
        let scores: Vec<f64> = heldout.iter().map(|&o| x1_hat.values()[o]).collect();
        let labels: Vec<bool> = heldout
            .iter()
            .map(|&o| dataset.x1.values()[o] > 0.0)
            .collect();
        record.auc = Some(auc(&scores, &labels)?);
        Ok(())
    })();
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    if settings.record_timing {
        record.wall_ms = Some(started.elapsed().as_millis() as u64);
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Missing fractions for the random-entries pattern.
    pub fractions: Vec<f64>,
    /// Numbers of missing slices for the cold-start pattern.
    pub slice_counts: Vec<usize>,
    pub slice_axis: String,
    pub models: Vec<ModelKind>,
    pub costs: Vec<Cost>,
    pub repeats: usize,
    pub base_seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            fractions: vec![0.4, 0.6, 0.8, 0.9, 0.95],
            slice_counts: Vec::new(),
            slice_axis: "i".into(),
            models: ModelKind::ALL.to_vec(),
            costs: vec![Cost::Euc, Cost::Kl],
            repeats: 10,
            base_seed: 0,
        }
    }
}

/// SplitMix64 finaliser; derives independent seeds from a base seed and a stream tag.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl GridSpec {
    fn mask_kinds(&self) -> Vec<MaskKind> {
        let mut kinds: Vec<MaskKind> = self
            .fractions
            .iter()
            .map(|&fraction| MaskKind::RandomEntries { fraction })
            .collect();
        kinds.extend(
            self.slice_counts
                .iter()
                .map(|&count| MaskKind::MissingSlices {
                    axis: self.slice_axis.clone(),
                    count,
                }),
        );
        kinds
    }

    /// Every cell of the grid in execution order. Within one repeat all
    /// models and costs share the same mask and the same engine seed.
    pub fn cells(&self) -> Vec<(usize, MaskPlan, ModelKind, Cost, u64)> {
        let mut out = Vec::new();
        for repeat in 0..self.repeats {
            let engine_seed = derive_seed(self.base_seed, (repeat as u64) << 32);
            for (pos, kind) in self.mask_kinds().into_iter().enumerate() {
                let plan = MaskPlan {
                    kind,
                    seed: derive_seed(self.base_seed, ((repeat as u64) << 32) | (pos as u64 + 1)),
                };
                for &model in &self.models {
                    for &cost in &self.costs {
                        out.push((repeat, plan.clone(), model, cost, engine_seed));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub dims: LinkDims,
    pub grid: GridSpec,
    pub settings: CellSettings,
    pub records: Vec<CellRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub cost: Cost,
    pub mask: MaskKind,
    pub mean_auc: Option<f64>,
    pub scored: usize,
    pub failed: usize,
}

impl ExperimentReport {
    pub fn failed_cells(&self) -> usize {
        self.records.iter().filter(|r| r.auc.is_none()).count()
    }

    /// Mean AUC per (model, cost, mask) over repeats, in grid order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for r in &self.records {
            let pos = rows
                .iter()
                .position(|s| s.model == r.model && s.cost == r.cost && s.mask == r.mask)
                .unwrap_or_else(|| {
                    rows.push(SummaryRow {
                        model: r.model,
                        cost: r.cost,
                        mask: r.mask.clone(),
                        mean_auc: None,
                        scored: 0,
                        failed: 0,
                    });
                    sums.push(0.0);
                    rows.len() - 1
                });
            match r.auc {
                Some(a) => {
                    rows[pos].scored += 1;
                    sums[pos] += a;
                }
                None => rows[pos].failed += 1,
            }
        }
        for (row, sum) in rows.iter_mut().zip(sums) {
            if row.scored > 0 {
                row.mean_auc = Some(sum / row.scored as f64);
            }
        }
        rows
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<5} {:<24} {:>9} {:>7}\n",
            "model", "cost", "mask", "mean AUC", "cells"
        );
        for row in self.summary() {
            let auc = row
                .mean_auc
                .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            out.push_str(&format!(
                "{:<16} {:<5} {:<24} {:>9} {:>4}/{:<2}\n",
                row.model.as_str(),
                row.cost.as_str(),
                row.mask.to_string(),
                auc,
                row.scored,
                row.scored + row.failed
            ));
        }
        out
    }
}

/// Runs every grid cell, using up to `jobs` worker threads. The record order
/// and contents depend only on the inputs, never on `jobs`.
pub fn run_grid(
    dataset: &LinkDataset,
    grid: &GridSpec,
    settings: &CellSettings,
    jobs: usize,
) -> Result<ExperimentReport> {
    let cells = grid.cells();
    let run = |(repeat, plan, model, cost, seed): &(usize, MaskPlan, ModelKind, Cost, u64)| {
        let record = run_cell(dataset, *model, *cost, plan, settings, *seed, *repeat);
        log::debug!(
            "{} {} {} repeat {} -> auc {:?}",
            model,
            cost,
            plan.kind,
            repeat,
            record.auc
        );
        record
    };
    let records: Vec<CellRecord> = if jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| GctfError::InvalidValue(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    };
    Ok(ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        dims: dataset.dims(),
        grid: grid.clone(),
        settings: settings.clone(),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Noise-free model values; the link tensor is thresholded at its median.
    Exact,
    /// Every entry drawn from a Poisson with the model value as mean; the
    /// link tensor records whether the count is positive.
    Poisson,
}

impl FromStr for Noise {
    type Err = GctfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Noise::Exact),
            "poisson" => Ok(Noise::Poisson),
            other => Err(GctfError::InvalidValue(format!(
                "unknown noise `{other}` (expected exact or poisson)"
            ))),
        }
    }
}

/// How ground-truth factors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    /// Every factor entry i.i.d. uniform on `(0, 1]`.
    #[default]
    Uniform,
    /// Users and both location axes are split into `components` equal-sized
    /// groups; a factor entry is 1 for the entity's own group and `contrast`
    /// otherwise. User rows are jittered by a factor in `(0.75, 1]`, the
    /// activity factor is flat and the feature factor uniform. `link_scale`
    /// and `side_scale` multiply the location factors of `X1` and `X2`.
    ///
    /// Links then depend on the user's group but not on overall popularity,
    /// and the user-location matrix reveals the group.
    Communities {
        contrast: f64,
        link_scale: f64,
        side_scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dims: LinkDims,
    pub components: usize,
    pub noise: Noise,
    pub seed: u64,
    #[serde(default)]
    pub structure: Structure,
}

impl SyntheticSpec {
    pub fn new(dims: LinkDims, components: usize, noise: Noise, seed: u64) -> Self {
        SyntheticSpec {
            dims,
            components,
            noise,
            seed,
            structure: Structure::Uniform,
        }
    }
}

fn community_factor(
    rng: &mut ChaCha8Rng,
    label: &str,
    size: usize,
    components: usize,
    contrast: f64,
    scale: f64,
    jitter: bool,
) -> Result<DenseTensor> {
    let mut groups: Vec<usize> = (0..size).map(|x| x % components).collect();
    for x in (1..size).rev() {
        groups.swap(x, rng.random_range(0..=x));
    }
    let mut values = Vec::with_capacity(size * components);
    for &g in &groups {
        let factor = if jitter {
            0.75 + 0.25 * (1.0 - rng.random::<f64>())
        } else {
            1.0
        };
        for c in 0..components {
            let base = if c == g { 1.0 } else { contrast };
            values.push(scale * base * factor);
        }
    }
    DenseTensor::new(
        vec![Index::new(label, size), Index::new("r", components)],
        values,
    )
}

/// Seed stream for ground truth, kept apart from the engine's own
/// initialisation so that equal seeds never start a fit at the truth.
const TRUTH_STREAM: u64 = 0x7A07;
const NOISE_STREAM: u64 = 0x5EED;

fn draw_truth(model: &ModelSpec, spec: &SyntheticSpec) -> Result<FactorSet> {
    let seed = derive_seed(spec.seed, TRUTH_STREAM);
    match spec.structure {
        Structure::Uniform => FactorSet::random(model, seed, 1.0),
        Structure::Communities {
            contrast,
            link_scale,
            side_scale,
        } => {
            for (what, v) in [
                ("contrast", contrast),
                ("link_scale", link_scale),
                ("side_scale", side_scale),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(GctfError::InvalidValue(format!(
                        "{what} must be positive, got {v}"
                    )));
                }
            }
            let d = spec.dims;
            let r = spec.components;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = community_factor(&mut rng, "i", d.i, r, contrast, 1.0, true)?;
            let b = community_factor(&mut rng, "j", d.j, r, contrast, link_scale, false)?;
            let c = DenseTensor::filled(vec![Index::new("k", d.k), Index::new("r", r)], 1.0)?;
            let dm = community_factor(&mut rng, "m", d.m, r, contrast, side_scale, false)?;
            let e = DenseTensor::new(
                vec![Index::new("n", d.n), Index::new("r", r)],
                (0..d.n * r).map(|_| 1.0 - rng.random::<f64>()).collect(),
            )?;
            FactorSet::new(model, vec![a, b, c, dm, e])
        }
    }
}

/// Draws coupled-CP ground truth and generates the three observations from it.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(LinkDataset, FactorSet)> {
    let model = build_coupled_cp(spec.dims, spec.components)?;
    let truth = draw_truth(&model, spec)?;
    let means: Vec<DenseTensor> = (0..model.observations.len())
        .map(|nu| predict(&model, &truth, nu))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, NOISE_STREAM));
    let observed: Vec<DenseTensor> = match spec.noise {
        Noise::Exact => means.clone(),
        Noise::Poisson => means
            .iter()
            .map(|m| {
                let draws = m
                    .values()
                    .iter()
                    .map(|&mean| poisson_draw(&mut rng, mean))
                    .collect();
                DenseTensor::new(m.indices().to_vec(), draws)
            })
            .collect::<Result<_>>()?,
    };
    let x1 = match spec.noise {
        Noise::Exact => {
            let mut sorted = observed[0].values().to_vec();
            sorted.sort_by(f64::total_cmp);
            let median = median_of_sorted(&sorted);
            observed[0].map(|v| if v > median { 1.0 } else { 0.0 })?
        }
        Noise::Poisson => binarize(&observed[0]),
    };
    let dataset = LinkDataset::new(x1, observed[1].clone(), observed[2].clone())?;
    Ok((dataset, truth))
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn poisson_draw(rng: &mut impl Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng)
}

/// Reconstruction of the link tensor for explicit coupled-CP factors.
pub fn coupled_cp_links(truth: &FactorSet) -> Result<DenseTensor> {
    let (a, b, c) = (
        truth.get("A").ok_or_else(|| missing("A"))?,
        truth.get("B").ok_or_else(|| missing("B"))?,
        truth.get("C").ok_or_else(|| missing("C"))?,
    );
    product_then_marginalize(&[a, b, c], &["i", "j", "k"])
}

fn missing(name: &str) -> GctfError {
    GctfError::Lookup {
        kind: "factor",
        name: name.to_string(),
    }
}
