//! Layer-wise probing: one predictor per embedding layer and config, the
//! 24→48 layer-axis alignment and local-optimum detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{SampleRecord, Split};
use crate::error::{Error, Result};
use crate::model::PredictorConfig;
use crate::rng::{derive_seed, Xoshiro256};
use crate::training::{layer_label, load_samples, train, Sample, TrainRunConfig};

/// Length of the reference layer axis (the deepest backbone).
pub const REFERENCE_LAYERS: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelSize {
    Xlsr300M,
    Xlsr1B,
    Xlsr2B,
    Other,
}

impl ModelSize {
    /// Number of transformer layers, when known.
    pub fn num_layers(self) -> Option<u32> {
        match self {
            ModelSize::Xlsr300M => Some(24),
            ModelSize::Xlsr1B | ModelSize::Xlsr2B => Some(48),
            ModelSize::Other => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelSize::Xlsr300M => "300M",
            ModelSize::Xlsr1B => "1B",
            ModelSize::Xlsr2B => "2B",
            ModelSize::Other => "other",
        }
    }
}

impl std::str::FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .to_ascii_lowercase()
            .trim_start_matches("xlsr")
            .trim_start_matches(['-', '_'])
        {
            "300m" => Ok(ModelSize::Xlsr300M),
            "1b" => Ok(ModelSize::Xlsr1B),
            "2b" => Ok(ModelSize::Xlsr2B),
            "other" => Ok(ModelSize::Other),
            other => Err(Error::Config(format!("unknown model size '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub layer: u32,
    pub best_val_rmse: f64,
    pub best_config_id: String,
    /// Validation RMSE of every config trained on this layer.
    pub config_rmse: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepError {
    pub layer: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSweepTable {
    pub model_size: ModelSize,
    /// Sorted by layer.
    pub rows: Vec<SweepRow>,
    pub errors: Vec<SweepError>,
    /// Position of each row on the 0–48 reference axis.
    pub axis_positions: Vec<f64>,
}

/// Position of `layer` of a `num_layers`-deep model on the reference axis.
pub fn aligned_position(layer: u32, num_layers: u32) -> f64 {
    layer as f64 * REFERENCE_LAYERS as f64 / num_layers as f64
}

/// Reference-axis positions of the table rows. Layers of a 24-layer model
/// land on 2·layer; models of unknown depth keep their own indices.
pub fn align_layer_axis(table: &LayerSweepTable) -> Vec<f64> {
    let depth = table.model_size.num_layers().unwrap_or(REFERENCE_LAYERS);
    table.rows.iter().map(|r| aligned_position(r.layer, depth)).collect()
}

/// Piecewise-linear resampling of `(position, value)` points (sorted by
/// position) at every integer position in their range.
pub fn interpolate_linear(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let Some((first, last)) = points.first().zip(points.last()) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut seg = 0;
    let mut x = first.0.ceil();
    while x <= last.0 {
        while seg + 1 < points.len() - 1 && points[seg + 1].0 < x {
            seg += 1;
        }
        let (x0, y0) = points[seg];
        let y = match points.get(seg + 1) {
            Some(&(x1, y1)) if x1 > x0 => y0 + (y1 - y0) * (x - x0) / (x1 - x0),
            _ => y0,
        };
        out.push((x, y));
        x += 1.0;
    }
    out
}

/// Index ranges `(start, end)` (inclusive) of local minima. Runs of equal
/// values are merged and count as one minimum when every existing neighbor
/// run is strictly larger; a sequence of one run is a minimum.
pub fn find_local_optima(values: &[f64]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if values[run.0] == *v => run.1 = i,
            _ => runs.push((i, i)),
        }
    }
    (0..runs.len())
        .filter(|&k| {
            let v = values[runs[k].0];
            let left = k.checked_sub(1).is_none_or(|j| values[runs[j].0] > v);
            let right = runs.get(k + 1).is_none_or(|r| values[r.0] > v);
            left && right
        })
        .map(|k| runs[k])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalOptimum {
    pub first_layer: u32,
    pub last_layer: u32,
    pub rmse: f64,
}

impl LayerSweepTable {
    pub fn local_optima(&self) -> Vec<LocalOptimum> {
        let values: Vec<f64> = self.rows.iter().map(|r| r.best_val_rmse).collect();
        find_local_optima(&values)
            .into_iter()
            .map(|(a, b)| LocalOptimum {
                first_layer: self.rows[a].layer,
                last_layer: self.rows[b].layer,
                rmse: values[a],
            })
            .collect()
    }

    /// Best RMSE linearly interpolated at every integer reference position.
    pub fn interpolated(&self) -> Vec<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .axis_positions
            .iter()
            .zip(&self.rows)
            .map(|(&p, r)| (p, r.best_val_rmse))
            .collect();
        interpolate_linear(&pts)
    }

    /// Plot table with one line per layer (errors included), sorted by layer.
    pub fn to_tsv(&self) -> String {
        let mut lines: BTreeMap<u32, String> = BTreeMap::new();
        for (r, p) in self.rows.iter().zip(&self.axis_positions) {
            lines.insert(
                r.layer,
                format!(
                    "{}\t{}\t{}\t{}\t{}\t",
                    layer_label(r.layer),
                    p,
                    r.best_val_rmse,
                    self.model_size.name(),
                    r.best_config_id
                ),
            );
        }
        for e in &self.errors {
            let msg = e.message.replace(['\t', '\n'], " ");
            lines.insert(
                e.layer,
                format!("{}\t\t\t{}\t\t{msg}", layer_label(e.layer), self.model_size.name()),
            );
        }
        let mut out = String::from("layer\taligned_position\trmse\tmodel_size\tbest_config\terror\n");
        for l in lines.values() {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    pub fn interpolated_tsv(&self) -> String {
        let mut out = String::from("aligned_position\trmse\tmodel_size\n");
        for (p, v) in self.interpolated() {
            let _ = writeln!(out, "{p}\t{v}\t{}", self.model_size.name());
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub model_size: ModelSize,
    /// Fraction of each split used, sampled with `seed`.
    pub fraction: f64,
    pub seed: u64,
    /// Worker threads; `None` uses the current rayon pool.
    pub jobs: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            model_size: ModelSize::Other,
            fraction: 1.0,
            seed: 0,
            jobs: None,
        }
    }
}

/// Seeded subsample of `ceil(fraction·n)` records, kept in input order.
pub fn subsample<'a>(records: &[&'a SampleRecord], fraction: f64, seed: u64) -> Vec<&'a SampleRecord> {
    if fraction >= 1.0 {
        return records.to_vec();
    }
    let keep = ((records.len() as f64 * fraction).ceil() as usize).min(records.len());
    let mut idx = Xoshiro256::seed_from_u64(seed).permutation(records.len());
    idx.truncate(keep);
    idx.sort_unstable();
    idx.into_iter().map(|i| records[i]).collect()
}

struct LayerData {
    train: Vec<Sample>,
    val: Vec<Sample>,
}

fn load_layer(train_recs: &[&SampleRecord], val_recs: &[&SampleRecord], layer: u32) -> Result<LayerData> {
    let data = LayerData {
        train: load_samples(train_recs, &[layer])?,
        val: load_samples(val_recs, &[layer])?,
    };
    let dims: Vec<usize> = data
        .train
        .iter()
        .chain(&data.val)
        .map(|s| s.streams[0].feature_dim())
        .collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Shape(format!(
            "layer {} has inconsistent feature dimensions",
            layer_label(layer)
        )));
    }
    Ok(data)
}

/// Train every config on every layer and keep the minimum validation RMSE
/// per layer. Per-layer failures are recorded and do not stop the sweep.
/// `records` must carry split labels; `configs` are templates whose input
/// dimension and feature layer are filled in per layer.
pub fn sweep_layers(
    records: &[SampleRecord],
    layers: &[u32],
    configs: &[PredictorConfig],
    run: &TrainRunConfig,
    opts: &SweepOptions,
) -> Result<LayerSweepTable> {
    if layers.is_empty() || configs.is_empty() {
        return Err(Error::Config("a sweep needs at least one layer and one config".into()));
    }
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {} outside (0, 1]", opts.fraction)));
    }
    let pick = |split: Split, tag: u64| {
        let recs: Vec<&SampleRecord> = records.iter().filter(|r| r.split == split).collect();
        subsample(&recs, opts.fraction, derive_seed(&[opts.seed, tag]))
    };
    let train_recs = pick(Split::Train, 0);
    let val_recs = pick(Split::Validation, 1);
    if train_recs.is_empty() || val_recs.is_empty() {
        return Err(Error::Empty(
            "a sweep needs both training and validation records".into(),
        ));
    }
    let mut layers = layers.to_vec();
    layers.sort_unstable();
    layers.dedup();

    let body = || {
        let loaded: Vec<(u32, Result<LayerData>)> = layers
            .par_iter()
            .map(|&l| (l, load_layer(&train_recs, &val_recs, l)))
            .collect();
        let jobs: Vec<(u32, usize, &LayerData)> = loaded
            .iter()
            .filter_map(|(l, d)| d.as_ref().ok().map(|d| (*l, d)))
            .flat_map(|(l, d)| (0..configs.len()).map(move |c| (l, c, d)))
            .collect();
        let results: Vec<(u32, usize, Result<f64>)> = jobs
            .into_par_iter()
            .map(|(layer, c, data)| {
                let cfg = PredictorConfig {
                    input_dim: data.train[0].streams[0].feature_dim(),
                    ..configs[c].clone()
                }
                .with_feature_layer(layer);
                let r = train(&cfg, run, &data.train, &data.val)
                    .map(|o| o.report.best_val_rmse.expect("validation set is non-empty"));
                (layer, c, r)
            })
            .collect();
        (loaded, results)
    };
    let (loaded, results) = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    };

    let mut errors: BTreeMap<u32, String> = loaded
        .into_iter()
        .filter_map(|(l, d)| d.err().map(|e| (l, e.to_string())))
        .collect();
    let mut per_layer: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
    for (layer, c, r) in results {
        match r {
            Ok(rmse) => per_layer.entry(layer).or_default().push((configs[c].id(), rmse)),
            Err(e) => {
                errors
                    .entry(layer)
                    .or_insert_with(|| format!("config {}: {e}", configs[c].id()));
            }
        }
    }
    let rows: Vec<SweepRow> = per_layer
        .into_iter()
        .filter(|(l, _)| !errors.contains_key(l))
        .map(|(layer, config_rmse)| {
            let (best_config_id, best_val_rmse) = config_rmse
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .cloned()
                .expect("at least one config per layer");
            SweepRow {
                layer,
                best_val_rmse,
                best_config_id,
                config_rmse,
            }
        })
        .collect();
    let mut table = LayerSweepTable {
        model_size: opts.model_size,
        rows,
        errors: errors
            .into_iter()
            .map(|(layer, message)| SweepError { layer, message })
            .collect(),
        axis_positions: Vec::new(),
    };
    table.axis_positions = align_layer_axis(&table);
    Ok(table)
}
