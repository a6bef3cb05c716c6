//! Multi-experiment, multi-metric experimental data: units with features,
//! `(unit, experiment, arm, metric, value)` observations, unit splits and
//! (for synthetic data) ground-truth potential outcomes.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! manifest.json         counts, arms per experiment, file names, generator echo
//! units.csv             unit_id,f0,...,f{m-1}
//! observations.csv      unit_id,experiment_id,arm,metric_id,value
//! splits.csv            unit_id,split            (train | val | test)
//! true_outcomes.csv     unit_id,experiment_id,metric_id,arm,control,treated,ite   (optional)
//! ```
//!
//! Reals are written with 17 significant digits so a save/load cycle is
//! bit-exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

pub const FORMAT_VERSION: &str = "hte-v1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const UNITS_FILE: &str = "units.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const SPLITS_FILE: &str = "splits.csv";
pub const TRUTH_FILE: &str = "true_outcomes.csv";

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    ids: Vec<u64>,
    features: Matrix,
    index: HashMap<u64, usize>,
}

impl UnitTable {
    pub fn new(ids: Vec<u64>, features: Matrix) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::dims("UnitTable", ids.len(), features.rows()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::Consistency(format!("duplicate unit_id {id}")));
            }
        }
        Ok(UnitTable {
            ids,
            features,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn x(&self, id: u64) -> Option<&[f64]> {
        self.row_of(id).map(|r| self.features.row(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub unit_id: u64,
    pub experiment: usize,
    pub arm: usize,
    pub metric: usize,
    pub value: f64,
}

/// An observation resolved against a [`UnitTable`]: `unit_row` indexes the
/// feature matrix directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsRow {
    pub unit_row: usize,
    pub experiment: usize,
    pub arm: usize,
    pub metric: usize,
    pub value: f64,
}

/// Ground truth for one treated arm of one (unit, experiment, metric).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueOutcome {
    pub unit_id: u64,
    pub experiment: usize,
    pub metric: usize,
    pub arm: usize,
    pub control: f64,
    pub treated: f64,
    pub ite: f64,
}

type CellKey = (u64, usize, usize, usize);

/// Anything that can report an ITE for `(unit, experiment, metric, arm)`.
pub trait IteSource {
    fn ite(&self, unit_id: u64, experiment: usize, metric: usize, arm: usize) -> Option<f64>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PotentialOutcomeTensor {
    rows: Vec<TrueOutcome>,
    index: HashMap<CellKey, usize>,
}

impl PotentialOutcomeTensor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one treated arm; the ITE is stored as `treated − control`.
    pub fn push(
        &mut self,
        unit_id: u64,
        experiment: usize,
        metric: usize,
        arm: usize,
        control: f64,
        treated: f64,
    ) -> Result<()> {
        if arm == 0 {
            return Err(Error::InvalidArgument(
                "true outcomes are keyed by treated arm (>= 1)".into(),
            ));
        }
        let key = (unit_id, experiment, metric, arm);
        if self.index.contains_key(&key) {
            return Err(Error::Consistency(format!(
                "duplicate true outcome {key:?}"
            )));
        }
        self.index.insert(key, self.rows.len());
        self.rows.push(TrueOutcome {
            unit_id,
            experiment,
            metric,
            arm,
            control,
            treated,
            ite: treated - control,
        });
        Ok(())
    }

    pub fn get(
        &self,
        unit_id: u64,
        experiment: usize,
        metric: usize,
        arm: usize,
    ) -> Option<&TrueOutcome> {
        self.index
            .get(&(unit_id, experiment, metric, arm))
            .map(|&i| &self.rows[i])
    }

    pub fn rows(&self) -> &[TrueOutcome] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl IteSource for PotentialOutcomeTensor {
    fn ite(&self, unit_id: u64, experiment: usize, metric: usize, arm: usize) -> Option<f64> {
        self.get(unit_id, experiment, metric, arm).map(|r| r.ite)
    }
}

/// Model predictions of potential outcomes, arm 0 included. CATEs are
/// derived as `outcome(t) − outcome(0)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictedTensor {
    rows: Vec<(CellKey, f64)>,
    index: HashMap<CellKey, usize>,
}

pub const PREDICTIONS_FILE: &str = "predictions.csv";

impl PredictedTensor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        unit_id: u64,
        experiment: usize,
        metric: usize,
        arm: usize,
        outcome: f64,
    ) {
        let key = (unit_id, experiment, metric, arm);
        match self.index.get(&key) {
            Some(&i) => self.rows[i].1 = outcome,
            None => {
                self.index.insert(key, self.rows.len());
                self.rows.push((key, outcome));
            }
        }
    }

    pub fn outcome(
        &self,
        unit_id: u64,
        experiment: usize,
        metric: usize,
        arm: usize,
    ) -> Option<f64> {
        self.index
            .get(&(unit_id, experiment, metric, arm))
            .map(|&i| self.rows[i].1)
    }

    pub fn cate(&self, unit_id: u64, experiment: usize, metric: usize, arm: usize) -> Option<f64> {
        Some(
            self.outcome(unit_id, experiment, metric, arm)?
                - self.outcome(unit_id, experiment, metric, 0)?,
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(unit_id, experiment, metric, arm)` of every entry, in insertion order.
    pub fn keys(&self) -> impl Iterator<Item = (u64, usize, usize, usize)> + '_ {
        self.rows.iter().map(|&(k, _)| k)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        write_record(
            &mut w,
            path,
            [
                "unit_id",
                "experiment_id",
                "metric_id",
                "arm",
                "outcome",
                "cate",
            ],
        )?;
        for &((u, k, j, t), y) in &self.rows {
            let cate = if t == 0 {
                0.0
            } else {
                self.cate(u, k, j, t).unwrap_or(f64::NAN)
            };
            write_record(
                &mut w,
                path,
                [
                    u.to_string(),
                    k.to_string(),
                    j.to_string(),
                    t.to_string(),
                    fmt_real(y),
                    fmt_real(cate),
                ],
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut out = PredictedTensor::new();
        for_each_record(path, 6, |line, rec| {
            let u = parse_field::<u64>(&file, line, rec, 0)?;
            let k = parse_field::<usize>(&file, line, rec, 1)?;
            let j = parse_field::<usize>(&file, line, rec, 2)?;
            let t = parse_field::<usize>(&file, line, rec, 3)?;
            let y = parse_field::<f64>(&file, line, rec, 4)?;
            out.insert(u, k, j, t, y);
            Ok(())
        })?;
        Ok(out)
    }
}

impl IteSource for PredictedTensor {
    fn ite(&self, unit_id: u64, experiment: usize, metric: usize, arm: usize) -> Option<f64> {
        self.cate(unit_id, experiment, metric, arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    #[serde(rename = "val")]
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

impl Splits {
    pub fn all_train(ids: &[u64]) -> Self {
        Splits {
            train: ids.to_vec(),
            ..Default::default()
        }
    }

    pub fn get(&self, name: SplitName) -> &[u64] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, name: SplitName) -> &mut Vec<u64> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
        }
    }

    /// unit_id → split, failing on a unit listed twice.
    pub fn membership(&self) -> Result<HashMap<u64, SplitName>> {
        let mut map = HashMap::new();
        for name in [SplitName::Train, SplitName::Validation, SplitName::Test] {
            for &id in self.get(name) {
                if let Some(prev) = map.insert(id, name) {
                    return Err(Error::Consistency(format!(
                        "unit {id} is in both {} and {}",
                        prev.as_str(),
                        name.as_str()
                    )));
                }
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

/// Shuffles the units with `stream` and cuts them into train / val / test.
/// Cut points are rounded cumulative fractions, so each size is within 1
/// of `fraction × n`.
pub fn split_units(
    unit_ids: &[u64],
    fractions: SplitFractions,
    stream: &mut RngStream,
) -> Result<Splits> {
    let f = [fractions.train, fractions.validation, fractions.test];
    if f.iter().any(|&x| !(x >= 0.0)) || f.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be nonnegative with sum <= 1, got {f:?}"
        )));
    }
    let n = unit_ids.len();
    let mut ids = unit_ids.to_vec();
    stream.shuffle(&mut ids);
    let cut = |c: f64| ((c * n as f64).round() as usize).min(n);
    let b1 = cut(f[0]);
    let b2 = cut(f[0] + f[1]).max(b1);
    let b3 = cut(f[0] + f[1] + f[2]).max(b2);
    Ok(Splits {
        train: ids[..b1].to_vec(),
        validation: ids[b1..b2].to_vec(),
        test: ids[b2..b3].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub units: String,
    pub observations: String,
    pub splits: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_outcomes: Option<String>,
}

impl Default for ManifestFiles {
    fn default() -> Self {
        ManifestFiles {
            units: UNITS_FILE.into(),
            observations: OBSERVATIONS_FILE.into(),
            splits: SPLITS_FILE.into(),
            true_outcomes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub n_units: usize,
    pub n_features: usize,
    pub n_experiments: usize,
    pub n_metrics: usize,
    /// Number of arms per experiment, control included.
    pub arms_per_experiment: Vec<usize>,
    pub files: ManifestFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub units: UnitTable,
    pub observations: Vec<Observation>,
    pub splits: Splits,
    pub truth: Option<PotentialOutcomeTensor>,
}

impl Dataset {
    /// Assembles a dataset, deriving the manifest counts and validating
    /// every invariant.
    pub fn new(
        units: UnitTable,
        observations: Vec<Observation>,
        splits: Splits,
        truth: Option<PotentialOutcomeTensor>,
        n_metrics: usize,
        arms_per_experiment: Vec<usize>,
        generator: Option<serde_json::Value>,
    ) -> Result<Self> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION.into(),
            n_units: units.len(),
            n_features: units.n_features(),
            n_experiments: arms_per_experiment.len(),
            n_metrics,
            arms_per_experiment,
            files: ManifestFiles {
                true_outcomes: truth.as_ref().map(|_| TRUTH_FILE.to_string()),
                ..Default::default()
            },
            generator,
        };
        let ds = Dataset {
            manifest,
            units,
            observations,
            splits,
            truth,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_experiments(&self) -> usize {
        self.manifest.n_experiments
    }

    pub fn n_metrics(&self) -> usize {
        self.manifest.n_metrics
    }

    pub fn n_arms(&self, experiment: usize) -> usize {
        self.manifest.arms_per_experiment[experiment]
    }

    /// Checks all structural invariants (the same checks `load` runs).
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: m.format_version.clone(),
                expected: FORMAT_VERSION.into(),
            });
        }
        if m.n_units != self.units.len() {
            return Err(Error::Consistency(format!(
                "manifest n_units = {} but {} units present",
                m.n_units,
                self.units.len()
            )));
        }
        if m.n_features != self.units.n_features() {
            return Err(Error::Consistency(format!(
                "manifest n_features = {} but units have {} features",
                m.n_features,
                self.units.n_features()
            )));
        }
        if m.n_experiments != m.arms_per_experiment.len() {
            return Err(Error::Consistency(format!(
                "manifest n_experiments = {} but arms_per_experiment has {} entries",
                m.n_experiments,
                m.arms_per_experiment.len()
            )));
        }
        if let Some(k) = m.arms_per_experiment.iter().position(|&a| a < 2) {
            return Err(Error::Consistency(format!(
                "experiment {k} needs a control and at least one treated arm"
            )));
        }
        if !self.units.features().is_finite() {
            return Err(Error::Consistency("non-finite feature value".into()));
        }
        let mut has_control = vec![false; m.n_experiments];
        let mut present = vec![false; m.n_experiments];
        for (i, o) in self.observations.iter().enumerate() {
            let row = i + 2;
            self.check_obs(o, OBSERVATIONS_FILE, row)?;
            present[o.experiment] = true;
            if o.arm == 0 {
                has_control[o.experiment] = true;
            }
        }
        if let Some(k) = (0..m.n_experiments).find(|&k| present[k] && !has_control[k]) {
            return Err(Error::Consistency(format!(
                "experiment {k} has no control (arm 0) observations"
            )));
        }
        let membership = self.splits.membership()?;
        if let Some(id) = membership
            .keys()
            .find(|id| self.units.row_of(**id).is_none())
        {
            return Err(Error::Consistency(format!(
                "split references unknown unit {id}"
            )));
        }
        if let Some(truth) = &self.truth {
            for (i, t) in truth.rows().iter().enumerate() {
                let row = i + 2;
                if self.units.row_of(t.unit_id).is_none() {
                    return Err(Error::DanglingUnit {
                        file: TRUTH_FILE.into(),
                        row,
                        unit_id: t.unit_id,
                    });
                }
                if t.experiment >= m.n_experiments || t.metric >= m.n_metrics {
                    return Err(schema(TRUTH_FILE, row, "experiment or metric out of range"));
                }
                if t.arm == 0 || t.arm >= m.arms_per_experiment[t.experiment] {
                    return Err(schema(TRUTH_FILE, row, "arm out of range"));
                }
                if t.ite != t.treated - t.control {
                    return Err(schema(TRUTH_FILE, row, "ite != treated - control"));
                }
            }
        }
        Ok(())
    }

    fn check_obs(&self, o: &Observation, file: &str, row: usize) -> Result<()> {
        let m = &self.manifest;
        if self.units.row_of(o.unit_id).is_none() {
            return Err(Error::DanglingUnit {
                file: file.into(),
                row,
                unit_id: o.unit_id,
            });
        }
        if o.experiment >= m.n_experiments {
            return Err(schema(
                file,
                row,
                &format!("experiment_id {} out of range", o.experiment),
            ));
        }
        if o.arm >= m.arms_per_experiment[o.experiment] {
            return Err(schema(file, row, &format!("arm {} out of range", o.arm)));
        }
        if o.metric >= m.n_metrics {
            return Err(schema(
                file,
                row,
                &format!("metric_id {} out of range", o.metric),
            ));
        }
        if !o.value.is_finite() {
            return Err(schema(file, row, "non-finite value"));
        }
        Ok(())
    }

    /// Observations of units in `split` (all units when `None`), resolved to
    /// feature-matrix rows, in file order.
    pub fn rows(&self, split: Option<SplitName>) -> Result<Vec<ObsRow>> {
        let members = match split {
            Some(_) => Some(self.splits.membership()?),
            None => None,
        };
        let mut out = Vec::new();
        for o in &self.observations {
            if let (Some(map), Some(name)) = (&members, split) {
                if map.get(&o.unit_id) != Some(&name) {
                    continue;
                }
            }
            let unit_row = self
                .units
                .row_of(o.unit_id)
                .ok_or_else(|| Error::Consistency(format!("unknown unit {}", o.unit_id)))?;
            out.push(ObsRow {
                unit_row,
                experiment: o.experiment,
                arm: o.arm,
                metric: o.metric,
                value: o.value,
            });
        }
        Ok(out)
    }

    /// Distinct (unit, experiment) enrolments of units in `split`, each with
    /// its observed arm, in first-seen order.
    pub fn enrolments(&self, split: Option<SplitName>) -> Result<Vec<(u64, usize, usize)>> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for r in self.rows(split)? {
            let id = self.units.ids()[r.unit_row];
            if seen.insert((id, r.experiment), r.arm).is_none() {
                out.push((id, r.experiment, r.arm));
            }
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, manifest + "\n").map_err(|e| Error::io(&mpath, e))?;

        let path = dir.join(&self.manifest.files.units);
        let mut w = csv_writer(&path)?;
        let mut header = vec!["unit_id".to_string()];
        header.extend((0..self.units.n_features()).map(|i| format!("f{i}")));
        write_record(&mut w, &path, &header)?;
        for (row, &id) in self.units.ids().iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend(self.units.features().row(row).iter().map(|&v| fmt_real(v)));
            write_record(&mut w, &path, &rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(&self.manifest.files.observations);
        let mut w = csv_writer(&path)?;
        write_record(
            &mut w,
            &path,
            ["unit_id", "experiment_id", "arm", "metric_id", "value"],
        )?;
        for o in &self.observations {
            write_record(
                &mut w,
                &path,
                [
                    o.unit_id.to_string(),
                    o.experiment.to_string(),
                    o.arm.to_string(),
                    o.metric.to_string(),
                    fmt_real(o.value),
                ],
            )?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(&self.manifest.files.splits);
        let mut w = csv_writer(&path)?;
        write_record(&mut w, &path, ["unit_id", "split"])?;
        for name in [SplitName::Train, SplitName::Validation, SplitName::Test] {
            for id in self.splits.get(name) {
                write_record(&mut w, &path, [id.to_string(), name.as_str().to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        if let (Some(truth), Some(name)) = (&self.truth, &self.manifest.files.true_outcomes) {
            let path = dir.join(name);
            let mut w = csv_writer(&path)?;
            write_record(
                &mut w,
                &path,
                [
                    "unit_id",
                    "experiment_id",
                    "metric_id",
                    "arm",
                    "control",
                    "treated",
                    "ite",
                ],
            )?;
            for t in truth.rows() {
                write_record(
                    &mut w,
                    &path,
                    [
                        t.unit_id.to_string(),
                        t.experiment.to_string(),
                        t.metric.to_string(),
                        t.arm.to_string(),
                        fmt_real(t.control),
                        fmt_real(t.treated),
                        fmt_real(t.ite),
                    ],
                )?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: mpath.clone(),
            msg: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version,
                expected: FORMAT_VERSION.into(),
            });
        }

        let units = load_units(&dir.join(&manifest.files.units))?;
        if units.len() != manifest.n_units {
            return Err(Error::Consistency(format!(
                "manifest n_units = {} but {} has {} units",
                manifest.n_units,
                manifest.files.units,
                units.len()
            )));
        }

        let opath = dir.join(&manifest.files.observations);
        let ofile = manifest.files.observations.clone();
        let mut observations = Vec::new();
        for_each_record(&opath, 5, |line, rec| {
            let o = Observation {
                unit_id: parse_field(&ofile, line, rec, 0)?,
                experiment: parse_field(&ofile, line, rec, 1)?,
                arm: parse_field(&ofile, line, rec, 2)?,
                metric: parse_field(&ofile, line, rec, 3)?,
                value: parse_field(&ofile, line, rec, 4)?,
            };
            if units.row_of(o.unit_id).is_none() {
                return Err(Error::DanglingUnit {
                    file: ofile.clone(),
                    row: line,
                    unit_id: o.unit_id,
                });
            }
            observations.push(o);
            Ok(())
        })?;

        let spath = dir.join(&manifest.files.splits);
        let sfile = manifest.files.splits.clone();
        let mut splits = Splits::default();
        for_each_record(&spath, 2, |line, rec| {
            let id: u64 = parse_field(&sfile, line, rec, 0)?;
            let name: SplitName = rec[1]
                .parse()
                .map_err(|_| schema(&sfile, line, "unknown split name"))?;
            if units.row_of(id).is_none() {
                return Err(Error::DanglingUnit {
                    file: sfile.clone(),
                    row: line,
                    unit_id: id,
                });
            }
            splits.get_mut(name).push(id);
            Ok(())
        })?;

        let truth = match &manifest.files.true_outcomes {
            None => None,
            Some(name) => {
                let tpath = dir.join(name);
                let tfile = name.clone();
                let mut truth = PotentialOutcomeTensor::new();
                for_each_record(&tpath, 7, |line, rec| {
                    let unit_id: u64 = parse_field(&tfile, line, rec, 0)?;
                    let experiment = parse_field(&tfile, line, rec, 1)?;
                    let metric = parse_field(&tfile, line, rec, 2)?;
                    let arm = parse_field(&tfile, line, rec, 3)?;
                    let control: f64 = parse_field(&tfile, line, rec, 4)?;
                    let treated: f64 = parse_field(&tfile, line, rec, 5)?;
                    let ite: f64 = parse_field(&tfile, line, rec, 6)?;
                    if units.row_of(unit_id).is_none() {
                        return Err(Error::DanglingUnit {
                            file: tfile.clone(),
                            row: line,
                            unit_id,
                        });
                    }
                    if ite != treated - control {
                        return Err(schema(&tfile, line, "ite != treated - control"));
                    }
                    truth
                        .push(unit_id, experiment, metric, arm, control, treated)
                        .map_err(|e| schema(&tfile, line, &e.to_string()))
                })?;
                Some(truth)
            }
        };

        let ds = Dataset {
            manifest,
            units,
            observations,
            splits,
            truth,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn schema(file: &str, row: usize, msg: &str) -> Error {
    Error::Schema {
        file: file.into(),
        row,
        msg: msg.into(),
    }
}

fn load_units(path: &Path) -> Result<UnitTable> {
    let file = path.file_name().map_or_else(
        || path.display().to_string(),
        |f| f.to_string_lossy().into_owned(),
    );
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(&file, 1, e))?.clone();
    if header.get(0) != Some("unit_id") {
        return Err(schema(&file, 1, "first column must be unit_id"));
    }
    let m = header.len() - 1;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(&file, line, e))?;
        if rec.len() != m + 1 {
            return Err(schema(
                &file,
                line,
                &format!("expected {} fields, got {}", m + 1, rec.len()),
            ));
        }
        ids.push(parse_field::<u64>(&file, line, &rec, 0)?);
        for c in 1..=m {
            data.push(parse_field::<f64>(&file, line, &rec, c)?);
        }
        width = Some(m);
    }
    let m = width.unwrap_or(m);
    let n = ids.len();
    UnitTable::new(ids, Matrix::from_vec(n, m, data)?)
}

/// Reads a headered CSV whose fields are all reals into a matrix.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let file = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(&file, 1, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(&file, line, e))?;
        if rec.len() != cols {
            return Err(schema(
                &file,
                line,
                &format!("expected {cols} fields, got {}", rec.len()),
            ));
        }
        for c in 0..cols {
            data.push(parse_field::<f64>(&file, line, &rec, c)?);
        }
        rows += 1;
    }
    Ok((header, Matrix::from_vec(rows, cols, data)?))
}

/// Writes a matrix as a headered CSV with the given column names.
pub fn write_numeric_csv(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    if header.len() != m.cols() {
        return Err(Error::dims("write_numeric_csv", m.cols(), header.len()));
    }
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, header)?;
    for i in 0..m.rows() {
        write_record(&mut w, path, m.row(i).iter().map(|&v| fmt_real(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Builds the units×experiments ITE matrix for one metric and treated arm.
/// Entry (i, c) is the ITE of `unit_ids[i]` in `experiments[c]`.
pub fn ite_slice<S: IteSource + ?Sized>(
    source: &S,
    unit_ids: &[u64],
    experiments: &[usize],
    metric: usize,
    arm: usize,
) -> Result<Matrix> {
    let mut m = Matrix::zeros(unit_ids.len(), experiments.len());
    let mut missing = Vec::new();
    for (i, &u) in unit_ids.iter().enumerate() {
        for (c, &k) in experiments.iter().enumerate() {
            match source.ite(u, k, metric, arm) {
                Some(v) => m[(i, c)] = v,
                None => missing.push((u, k)),
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<String> = missing
            .iter()
            .take(5)
            .map(|(u, k)| format!("(unit {u}, experiment {k})"))
            .collect();
        return Err(Error::Missing(format!(
            "{} of {} entries of the metric {metric} / arm {arm} slice, e.g. {}",
            missing.len(),
            unit_ids.len() * experiments.len(),
            shown.join(", ")
        )));
    }
    Ok(m)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub(crate) fn write_record<I, T>(w: &mut csv::Writer<fs::File>, path: &Path, rec: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| Error::Corrupt {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn csv_err(file: &str, row: usize, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        return schema(file, row, &format!("io: {e}"));
    }
    schema(file, row, &e.to_string())
}

/// Iterates data records of a headered CSV, passing the 1-based file line.
fn for_each_record<F>(path: &Path, width: usize, mut f: F) -> Result<()>
where
    F: FnMut(usize, &csv::StringRecord) -> Result<()>,
{
    let file = path.file_name().map_or_else(
        || path.display().to_string(),
        |f| f.to_string_lossy().into_owned(),
    );
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(&file, 1, e))?;
    if header.len() != width {
        return Err(schema(
            &file,
            1,
            &format!("expected {width} columns, got {}", header.len()),
        ));
    }
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(&file, line, e))?;
        if rec.len() != width {
            return Err(schema(
                &file,
                line,
                &format!("expected {width} fields, got {}", rec.len()),
            ));
        }
        f(line, &rec)?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    file: &str,
    line: usize,
    rec: &csv::StringRecord,
    col: usize,
) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| schema(file, line, &format!("cannot parse field {col} ({raw:?})")))
}
