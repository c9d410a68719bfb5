//! Stage orchestration over an artifact directory.
//!
//! ```text
//! <root>/ingest/     dataset dump (manifest.json, channels/, total.csv, weather.csv)
//! <root>/events/     events.csv, events.json
//! <root>/associate/  q.csv, q.counters.json
//! <root>/cluster/    clusters.json
//! <root>/dcc/        dcc.csv, selection.json
//! <root>/train/      one checkpoint per target, index.json
//! <root>/forecast/   forecast.csv, targets.json
//! <root>/evaluate/   report.json
//! ```
//!
//! Every stage directory also holds `stage.json` with the stage version, the
//! full config and its hash, and SHA-256 digests of inputs and outputs. A
//! stage whose recorded digests still match is skipped unless forced.

mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    AssociationSection, ClusteringSection, EventsConfig, FeaturesSection, ForecastSection, InputConfig, KMode,
    ModelChoice, ModelPreset, PipelineConfig,
};

use crate::association::AssociationConfig;
use crate::error::{Error, ErrorKind, Result};

/// Environment variable naming the default artifact root.
pub const ROOT_ENV: &str = "LOADASSOC_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Events,
    Associate,
    Cluster,
    Dcc,
    Train,
    Forecast,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Events,
        Stage::Associate,
        Stage::Cluster,
        Stage::Dcc,
        Stage::Train,
        Stage::Forecast,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Events => "events",
            Stage::Associate => "associate",
            Stage::Cluster => "cluster",
            Stage::Dcc => "dcc",
            Stage::Train => "train",
            Stage::Forecast => "forecast",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Bumped whenever a stage's output format or semantics change.
    pub fn version(self) -> u32 {
        1
    }

    /// Earlier stages whose artifacts this stage reads.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Events => &[Stage::Ingest],
            Stage::Associate => &[Stage::Events],
            Stage::Cluster => &[Stage::Associate, Stage::Events],
            Stage::Dcc => &[Stage::Ingest, Stage::Cluster],
            Stage::Train => &[Stage::Ingest, Stage::Cluster, Stage::Dcc],
            Stage::Forecast => &[Stage::Ingest, Stage::Train],
            Stage::Evaluate => &[Stage::Ingest, Stage::Forecast],
        }
    }

    /// The artifact that must exist for later stages to start here.
    pub fn key_artifact(self) -> &'static str {
        match self {
            Stage::Ingest => "manifest.json",
            Stage::Events => "events.json",
            Stage::Associate => "q.csv",
            Stage::Cluster => "clusters.json",
            Stage::Dcc => "selection.json",
            Stage::Train => "index.json",
            Stage::Forecast => "forecast.csv",
            Stage::Evaluate => "report.json",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Contents of `<stage>/stage.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub stage_version: u32,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub const STAGE_MANIFEST: &str = "stage.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of every file under `dir` except stage manifests, keyed by
/// `prefix/relative/path`.
fn hash_tree(dir: &Path, prefix: &str, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let key = format!("{prefix}/{name}");
        if p.is_dir() {
            hash_tree(&p, &key, out)?;
        } else if name != STAGE_MANIFEST {
            out.insert(key, sha256_file(&p)?);
        }
    }
    Ok(())
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Outcome of one stage in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
}

/// Machine-readable failure record written to `<root>/error.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: Option<Stage>,
    pub kind: ErrorKind,
    pub message: String,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, root: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            root: root.into(),
        })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    fn input_files(&self) -> Vec<PathBuf> {
        let i = &self.config.input;
        match &i.synth {
            Some(spec) => vec![spec.clone()],
            None => i.data.iter().cloned().chain(i.schema.clone()).collect(),
        }
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        if stage == Stage::Ingest {
            if self.input_files().is_empty() {
                return Err(Error::Config("input: set `synth` or `data` + `schema`".into()));
            }
            for p in self.input_files() {
                if !p.is_file() {
                    return Err(Error::MissingArtifact {
                        stage: stage.name().into(),
                        path: p,
                    });
                }
                out.insert(p.display().to_string(), sha256_file(&p)?);
            }
            return Ok(out);
        }
        for dep in stage.inputs() {
            let dir = self.stage_dir(*dep);
            let key = dir.join(dep.key_artifact());
            if !key.is_file() {
                return Err(Error::MissingArtifact {
                    stage: stage.name().into(),
                    path: key,
                });
            }
            hash_tree(&dir, dep.name(), &mut out)?;
        }
        Ok(out)
    }

    fn is_current(&self, stage: Stage, hash: &str, inputs: &BTreeMap<String, String>) -> bool {
        let dir = self.stage_dir(stage);
        let Ok(text) = fs::read_to_string(dir.join(STAGE_MANIFEST)) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<StageManifest>(&text) else {
            return false;
        };
        if m.stage_version != stage.version() || m.config_hash != hash || &m.inputs != inputs {
            return false;
        }
        let mut outputs = BTreeMap::new();
        hash_tree(&dir, stage.name(), &mut outputs).is_ok() && outputs == m.outputs
    }

    fn execute(&self, stage: Stage) -> Result<()> {
        let cfg = &self.config;
        let dir = self.stage_dir(stage);
        let dir_of = |s: Stage| self.stage_dir(s);
        match stage {
            Stage::Ingest => match &cfg.input.synth {
                Some(spec) => stages::synth(spec, &dir),
                None => {
                    let schema = cfg.input.schema.as_ref().expect("validated");
                    stages::ingest(&cfg.input.data, schema, &dir).map(|_| ())
                }
            },
            Stage::Events => {
                let e = &cfg.events;
                let p = stages::EventParams {
                    on_threshold: e.on_threshold,
                    min_duration: e.min_duration,
                    exclude_below: e.exclude_below,
                    peak_quantile: e.peak_quantile,
                };
                stages::events(&dir_of(Stage::Ingest), &p, &dir).map(|_| ())
            }
            Stage::Associate => {
                let a = AssociationConfig::new(cfg.association.target_window, cfg.association.candidate_window)?;
                stages::associate(&dir_of(Stage::Events), &a, &dir.join("q.csv"))
            }
            Stage::Cluster => {
                let c = &cfg.clustering;
                let excluded = stages::excluded_channels(&dir_of(Stage::Events))?;
                stages::cluster(
                    &dir_of(Stage::Associate).join("q.csv"),
                    c.k,
                    c.seed,
                    c.attach_excluded,
                    excluded,
                    &dir.join("clusters.json"),
                )
                .map(|_| ())
            }
            Stage::Dcc => stages::dcc(
                &dir_of(Stage::Ingest),
                &dir_of(Stage::Cluster).join("clusters.json"),
                &cfg.forecast,
                cfg.features.threshold,
                &dir.join("dcc.csv"),
            )
            .map(|_| ()),
            Stage::Train => stages::train(
                &dir_of(Stage::Ingest),
                &dir_of(Stage::Cluster).join("clusters.json"),
                &stages::read_selection(&dir_of(Stage::Dcc).join("selection.json"))?,
                &cfg.forecast,
                &dir,
            )
            .map(|_| ()),
            Stage::Forecast => {
                stages::forecast(&dir_of(Stage::Train), &dir_of(Stage::Ingest), None, &dir.join("forecast.csv")).map(|_| ())
            }
            Stage::Evaluate => {
                stages::evaluate(&dir_of(Stage::Forecast), &dir_of(Stage::Ingest), &dir.join("report.json")).map(|_| ())
            }
        }
    }

    /// Run one stage unless its recorded digests are current.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageOutcome> {
        let hash = config_hash(&self.config);
        let inputs = self.input_hashes(stage)?;
        if !force && self.is_current(stage, &hash, &inputs) {
            info!("{stage}: up to date");
            return Ok(StageOutcome { stage, skipped: true });
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        info!("{stage}: running");
        self.execute(stage)?;
        let mut outputs = BTreeMap::new();
        hash_tree(&dir, stage.name(), &mut outputs)?;
        let manifest = StageManifest {
            stage,
            stage_version: stage.version(),
            config_hash: hash,
            config: self.config.clone(),
            inputs,
            outputs,
        };
        let path = dir.join(STAGE_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(StageOutcome { stage, skipped: false })
    }

    /// Run stages `from..=to` in order. On failure `<root>/error.json`
    /// records the failing stage and error kind.
    pub fn run(&self, from: Stage, to: Stage, force: bool) -> Result<Vec<StageOutcome>> {
        if from > to {
            return Err(Error::Config(format!("--from {from} comes after --to {to}")));
        }
        let err_path = self.root.join("error.json");
        let _ = fs::remove_file(&err_path);
        let mut outcomes = Vec::new();
        for stage in Stage::ALL.into_iter().filter(|s| (from..=to).contains(s)) {
            match self.run_stage(stage, force) {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    let report = ErrorReport {
                        stage: Some(stage),
                        kind: e.kind(),
                        message: e.to_string(),
                    };
                    if fs::create_dir_all(&self.root).is_ok() {
                        if let Ok(text) = serde_json::to_string_pretty(&report) {
                            let _ = fs::write(&err_path, text + "\n");
                        }
                    }
                    return Err(e);
                }
            }
        }
        Ok(outcomes)
    }
}
