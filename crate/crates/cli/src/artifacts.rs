//! On-disk artifacts: trajectory CSV, JSON reports and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rendezvous_core::convergence::SeedOutcome;
use rendezvous_core::scenario::{self, InitialCondition};
use rendezvous_core::{Point, Scenario, TrajectoryRecord};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TRAJECTORY_HEADER: &str = "k,robot,x1,x2,xt1,xt2,gamma,v1,v2,V";

/// Formats a float with 17 significant digits.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per `(k, robot)`, with `V(k)` repeated on every robot's row.
pub fn trajectory_csv(traj: &TrajectoryRecord) -> String {
    let mut out = String::with_capacity(traj.steps.len() * traj.x0.len() * 220);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for step in &traj.steps {
        let v = float(step.disagreement);
        for (i, ((x, xt), noise)) in step.x.iter().zip(&step.xt).zip(&step.noise).enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                step.k,
                i + 1,
                float(x[0]),
                float(x[1]),
                float(xt[0]),
                float(xt[1]),
                u8::from(step.gamma[i]),
                float(noise[0]),
                float(noise[1]),
                v,
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

pub fn seeds_csv(per_seed: &[SeedOutcome]) -> String {
    let mut out = String::from("seed,V0,V_T,window_max\n");
    for s in per_seed {
        writeln!(out, "{},{},{},{}", s.seed, float(s.v0), float(s.v_final), float(s.window_max))
            .expect("writing to a String cannot fail");
    }
    out
}

/// SHA-256 of the canonical JSON form of the scenario.
pub fn config_hash(scenario: &Scenario) -> String {
    hex::encode(Sha256::digest(scenario::to_canonical_json(scenario).as_bytes()))
}

#[derive(Debug, Serialize)]
pub struct InitRecord {
    pub mode: &'static str,
    /// Initial positions actually used, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Point>>,
}

impl InitRecord {
    pub fn from_scenario(scenario: &Scenario, realized: Option<&[Point]>) -> Self {
        let mode = match scenario.init {
            InitialCondition::Sample => "sample",
            InitialCondition::Fixed(_) => "fixed",
        };
        let x0 = match (&scenario.init, realized) {
            (_, Some(x0)) => Some(x0.to_vec()),
            (InitialCondition::Fixed(x0), None) => Some(x0.clone()),
            (InitialCondition::Sample, None) => None,
        };
        Self { mode, x0 }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub flags: serde_json::Value,
    pub init: InitRecord,
    pub artifacts: Vec<String>,
}

/// Writes named artifacts into `dir`, remembering what was written.
pub struct ArtifactDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write_text(&mut self, name: &str, contents: &str) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Writes `<command>.manifest.json` listing everything written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> io::Result<PathBuf> {
        manifest.artifacts = self.written.clone();
        let name = format!("{}.manifest.json", manifest.command);
        self.write_json(&name, &manifest)
    }
}
