//! Dataset directories: a trace, one map per observation, and a manifest with the
//! hidden ground truth used only for evaluation.

use std::path::{Path, PathBuf};

use absgraph::envsim::{build_env, generate_dataset, EnvSpec, GroundTruthEnv};
use absgraph::otdist::SpatialMap;
use absgraph::trace::Trace;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io;
use crate::SCHEMA_VERSION;

pub const MANIFEST: &str = "manifest.json";
pub const TRACE: &str = "trace.jsonl";
pub const MAPS: &str = "maps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub spec: EnvSpec,
    pub n_obs: usize,
    pub map_shape: [usize; 2],
    /// Ground-truth state of every observation.
    pub states: Vec<usize>,
    /// Ground-truth abstract class of every observation.
    pub classes: Vec<usize>,
    pub render_seeds: Vec<u64>,
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub trace: Trace,
    pub maps: Vec<SpatialMap>,
    pub env: GroundTruthEnv,
}

pub fn map_path(dir: &Path, obs: usize) -> PathBuf {
    dir.join(MAPS).join(format!("{obs:06}.csv"))
}

/// Samples and renders `spec`, writing the dataset into `out`.
pub fn cmd_generate(spec: &EnvSpec, out: &Path) -> Result<DatasetManifest, CliError> {
    spec.validate()?;
    let ds = generate_dataset(spec)?;
    io::create_dir(&out.join(MAPS))?;
    io::write_with(&out.join(TRACE), |w| {
        ds.trace().write_jsonl(&mut *w).map_err(std::io::Error::other)
    })?;
    for (o, map) in ds.maps.iter().enumerate() {
        io::write_with(&map_path(out, o), |w| map.write_csv(w))?;
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        n_obs: ds.maps.len(),
        map_shape: spec.grid,
        states: ds.sampled.states.clone(),
        classes: ds.classes(),
        render_seeds: ds.render_seeds.clone(),
    };
    io::write_json(&out.join(MANIFEST), &manifest)?;
    log::info!(
        "wrote {} observations of {} to {}",
        manifest.n_obs,
        spec.kind.name(),
        out.display()
    );
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    let path = dir.join(MANIFEST);
    let manifest: DatasetManifest = io::read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::Schema {
            path,
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(manifest)
}

pub fn read_map(path: &Path) -> Result<SpatialMap, CliError> {
    SpatialMap::read_csv(io::open(path)?).map_err(|e| CliError::parse(path, e))
}

pub fn load(dir: &Path) -> Result<LoadedDataset, CliError> {
    let manifest = read_manifest(dir)?;
    let trace_path = dir.join(TRACE);
    let trace = Trace::read_jsonl(io::open(&trace_path)?)?;
    if trace.num_observations() != manifest.n_obs {
        return Err(CliError::parse(
            &trace_path,
            format!(
                "{} observations, manifest says {}",
                trace.num_observations(),
                manifest.n_obs
            ),
        ));
    }
    let maps = (0..manifest.n_obs)
        .map(|o| read_map(&map_path(dir, o)))
        .collect::<Result<Vec<_>, _>>()?;
    let env = build_env(&manifest.spec)?;
    Ok(LoadedDataset {
        manifest,
        trace,
        maps,
        env,
    })
}
