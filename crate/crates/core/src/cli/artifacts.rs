//! CSV tables and JSON manifests in the output directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::grid::{AugmentedGrid, ValueTable};
use crate::risk::CvarEstimate;
use crate::value_iteration::{PolicyStage, PolicyTable};

pub const SOLVE_MANIFEST: &str = "manifest_solve.json";
pub const MC_MANIFEST: &str = "manifest_mc.json";
pub const SETS_MANIFEST: &str = "manifest_sets.json";
pub const J0_FILE: &str = "J_stage0.csv";
pub const W0_FILE: &str = "W0_mc.csv";
pub const J0STAR_FILE: &str = "J0star_mc.csv";
pub const SETS_FILE: &str = "sets.csv";
pub const SETS_REPORT: &str = "sets_report.json";

pub fn policy_file(k: usize) -> String {
    format!("policy_stage{k}.csv")
}

pub fn multipliers_file(k: usize) -> String {
    format!("multipliers_stage{k}.csv")
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Upstream files this run read, as checksummed when read.
    pub inputs: Vec<FileEntry>,
    pub timings: Vec<Timing>,
    pub concavity_repairs: usize,
    pub saturations: usize,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> Self {
        Self {
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            seed: None,
            inputs: Vec::new(),
            timings: Vec::new(),
            concavity_repairs: 0,
            saturations: 0,
            files: Vec::new(),
        }
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }
}

/// Writes CSV files into `dir` and remembers their checksums.
pub struct OutputDir {
    pub dir: PathBuf,
    pub written: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write_csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::io(Path::new(name), e.into());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(Path::new(name), e.into_error()))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(entry(name, bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// The manifest lists every file written before it, not itself.
    pub fn finish(mut self, name: &str, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.files = std::mem::take(&mut self.written);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn entry(name: &str, bytes: &[u8]) -> FileEntry {
    FileEntry {
        name: name.into(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len() as u64,
    }
}

pub fn read_manifest(dir: &Path, name: &str) -> Result<RunManifest, CliError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|_| CliError::missing(format!("{} not found", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::stale(format!("{}: {e}", path.display())))
}

/// Reads a file listed in `manifest`, failing if its checksum changed.
pub fn read_checked(dir: &Path, manifest: &RunManifest, name: &str) -> Result<(Vec<u8>, FileEntry), CliError> {
    let path = dir.join(name);
    let listed = manifest
        .file(name)
        .ok_or_else(|| CliError::missing(format!("{name} is not listed in the {} manifest", manifest.command)))?;
    let bytes = fs::read(&path).map_err(|_| CliError::missing(format!("{} not found", path.display())))?;
    let actual = entry(name, &bytes);
    if actual.sha256 != listed.sha256 {
        return Err(CliError::stale(format!("{} does not match its manifest checksum", path.display())));
    }
    Ok((bytes, actual))
}

fn parse_f64(field: Option<&str>, what: &str, name: &str) -> Result<f64, CliError> {
    field
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| CliError::stale(format!("{name}: bad {what} field")))
}

fn records(bytes: &[u8], name: &str) -> Result<Vec<csv::StringRecord>, CliError> {
    csv::Reader::from_reader(bytes)
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::stale(format!("{name}: {e}")))
}

/// Rows are emitted in grid order: states outer, levels inner.
fn grid_rows(grid: &AugmentedGrid) -> impl Iterator<Item = (f64, f64)> + '_ {
    grid.states()
        .iter()
        .flat_map(move |&x| grid.levels().iter().map(move |&y| (x, y)))
}

fn check_point(grid: &AugmentedGrid, i: usize, x: f64, y: f64, name: &str) -> Result<(), CliError> {
    let (ix, iy) = grid.split(i);
    if grid.states()[ix] != x || grid.levels()[iy] != y {
        return Err(CliError::stale(format!("{name}: row {} is at ({x}, {y}), not on the configured grid", i + 1)));
    }
    Ok(())
}

pub fn value_rows(table: &ValueTable, grid: &AugmentedGrid) -> Vec<Vec<String>> {
    grid_rows(grid)
        .zip(table.values())
        .map(|((x, y), &j)| vec![table.stage.to_string(), num(x), num(y), num(j)])
        .collect()
}

pub fn read_value_table(bytes: &[u8], grid: &AugmentedGrid, name: &str) -> Result<ValueTable, CliError> {
    let recs = records(bytes, name)?;
    if recs.len() != grid.len() {
        return Err(CliError::stale(format!("{name}: {} rows for {} grid points", recs.len(), grid.len())));
    }
    let mut values = Vec::with_capacity(recs.len());
    let mut stage = 0;
    for (i, r) in recs.iter().enumerate() {
        stage = r.get(0).and_then(|s| s.parse().ok()).unwrap_or(0);
        let x = parse_f64(r.get(1), "x", name)?;
        let y = parse_f64(r.get(2), "y", name)?;
        check_point(grid, i, x, y, name)?;
        values.push(parse_f64(r.get(3), "J", name)?);
    }
    ValueTable::new(stage, grid, values).map_err(|e| CliError::stale(format!("{name}: {e}")))
}

pub fn policy_rows(policy: &PolicyTable, k: usize) -> Vec<Vec<String>> {
    let stage = &policy.stages[k];
    grid_rows(&policy.grid)
        .zip(&stage.controls)
        .map(|((x, y), &c)| vec![k.to_string(), num(x), num(y), num(policy.control_values[c])])
        .collect()
}

/// `R̄(d_j)` per grid point and disturbance index `j`.
pub fn multiplier_rows(policy: &PolicyTable, k: usize) -> Vec<Vec<String>> {
    let stage = &policy.stages[k];
    grid_rows(&policy.grid)
        .zip(&stage.multipliers)
        .flat_map(|((x, y), rs)| {
            rs.iter()
                .enumerate()
                .map(move |(j, &r)| vec![k.to_string(), num(x), num(y), j.to_string(), num(r)])
        })
        .collect()
}

/// Rebuilds the greedy tables written by `solve`.
pub fn read_policy(
    dir: &Path,
    manifest: &RunManifest,
    grid: &AugmentedGrid,
    controls: &[f64],
    n_disturbances: usize,
    horizon: usize,
) -> Result<PolicyTable, CliError> {
    let mut stages = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let name = policy_file(k);
        let (bytes, _) = read_checked(dir, manifest, &name)?;
        let recs = records(&bytes, &name)?;
        if recs.len() != grid.len() {
            return Err(CliError::stale(format!("{name}: {} rows for {} grid points", recs.len(), grid.len())));
        }
        let mut chosen = Vec::with_capacity(recs.len());
        for (i, r) in recs.iter().enumerate() {
            check_point(grid, i, parse_f64(r.get(1), "x", &name)?, parse_f64(r.get(2), "y", &name)?, &name)?;
            let u = parse_f64(r.get(3), "u", &name)?;
            let c = controls
                .iter()
                .position(|&v| v == u)
                .ok_or_else(|| CliError::stale(format!("{name}: control {u} is not in the control set")))?;
            chosen.push(c);
        }

        let name = multipliers_file(k);
        let (bytes, _) = read_checked(dir, manifest, &name)?;
        let mut multipliers = vec![Vec::new(); grid.len()];
        for r in records(&bytes, &name)? {
            let x = parse_f64(r.get(1), "x", &name)?;
            let y = parse_f64(r.get(2), "y", &name)?;
            let point = grid.index(grid.nearest_state(x), grid.nearest_level(y));
            check_point(grid, point, x, y, &name)?;
            multipliers[point].push(parse_f64(r.get(4), "R", &name)?);
        }
        if multipliers.iter().any(|m| m.len() != n_disturbances) {
            return Err(CliError::stale(format!("{name}: expected {n_disturbances} multipliers per grid point")));
        }
        stages.push(PolicyStage {
            stage: k,
            controls: chosen,
            multipliers,
        });
    }
    Ok(PolicyTable {
        control_values: controls.to_vec(),
        grid: grid.clone(),
        stages,
    })
}

pub const ESTIMATE_HEADER: [&str; 7] = ["x", "alpha", "estimate", "stderr", "M", "sigma", "seed"];

/// Empty `stderr` means no bootstrap was run.
pub fn estimate_rows(states: &[f64], estimates: &[Vec<CvarEstimate>], seed: u64) -> Vec<Vec<String>> {
    states
        .iter()
        .zip(estimates)
        .flat_map(|(&x, row)| {
            row.iter().map(move |e| {
                vec![
                    num(x),
                    num(e.confidence_alpha),
                    num(e.value),
                    e.std_error.map(num).unwrap_or_default(),
                    e.sample_count.to_string(),
                    num(e.jitter_sigma),
                    seed.to_string(),
                ]
            })
        })
        .collect()
}

/// Estimates keyed by the bit patterns of `(x, alpha)`.
pub fn read_estimates(bytes: &[u8], name: &str) -> Result<HashMap<(u64, u64), CvarEstimate>, CliError> {
    let mut out = HashMap::new();
    for r in records(bytes, name)? {
        let x = parse_f64(r.get(0), "x", name)?;
        let alpha = parse_f64(r.get(1), "alpha", name)?;
        let se = match r.get(3) {
            Some("") | None => None,
            s => Some(parse_f64(s, "stderr", name)?),
        };
        let e = CvarEstimate {
            value: parse_f64(r.get(2), "estimate", name)?,
            confidence_alpha: alpha,
            sample_count: r.get(4).and_then(|s| s.parse().ok()).unwrap_or(0),
            jitter_sigma: parse_f64(r.get(5), "sigma", name)?,
            quantile: f64::NAN,
            std_error: se,
        };
        out.insert((x.to_bits(), alpha.to_bits()), e);
    }
    Ok(out)
}
