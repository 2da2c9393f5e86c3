//! Run directory layout. Every file is written to a temporary name and
//! renamed into place.
//!
//! ```text
//! config.toml        configuration snapshot
//! state.json         full campaign state, for resuming
//! samples.csv        every evaluated sample under the current surrogate
//! failures.csv       evaluations that failed and were excluded
//! iter-000/          preliminary: model.json, strata.csv, new_samples.csv
//! iter-NNN/          conditional.csv, allocation.csv, new_samples.csv,
//!                    model.json, strata.csv, estimate.json
//! report.json        final estimate and history
//! report.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use strata_core::{AllocationPlan, ConditionalTable, ParameterSpace, SampleRecord, StratumSet, StratumWeights};

use crate::campaign::{FailureRecord, FinalReport, RunState, Stage};
use crate::config::RunConfig;
use crate::error::{Result, RunError};

pub const CONFIG_FILE: &str = "config.toml";
pub const STATE_FILE: &str = "state.json";
pub const SAMPLES_FILE: &str = "samples.csv";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| RunError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("state serializes");
    s.push(b'\n');
    s
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn sample_table(space: &ParameterSpace, samples: &[&SampleRecord]) -> Vec<u8> {
    let mut header: Vec<String> =
        ["id", "iteration", "stratum", "j_tilde", "j_true", "residual"].map(String::from).to_vec();
    header.extend(space.names().map(String::from));
    let rows = samples.iter().map(|s| {
        let residual = s.j_true.zip(s.j_tilde).map(|(j, t)| j - t);
        let mut r = vec![
            s.id.to_string(),
            s.iteration.to_string(),
            opt(s.stratum),
            opt(s.j_tilde),
            opt(s.j_true),
            opt(residual),
        ];
        r.extend(s.params.iter().map(f64::to_string));
        r
    });
    csv_bytes(&header, rows)
}

fn failure_table(space: &ParameterSpace, failures: &[FailureRecord]) -> Vec<u8> {
    let mut header: Vec<String> = ["id", "iteration", "message"].map(String::from).to_vec();
    header.extend(space.names().map(String::from));
    let rows = failures.iter().map(|f| {
        let mut r = vec![f.id.to_string(), f.iteration.to_string(), f.message.clone()];
        r.extend(f.params.iter().map(f64::to_string));
        r
    });
    csv_bytes(&header, rows)
}

fn strata_table(strata: &StratumSet, weights: &StratumWeights) -> Vec<u8> {
    let header = ["index", "lower", "upper", "p1", "variance", "pool_count"].map(String::from);
    let rows = (0..strata.len()).map(|i| {
        let (lo, hi) = strata.bounds(i);
        vec![
            i.to_string(),
            lo.to_string(),
            hi.to_string(),
            weights.p1[i].to_string(),
            weights.variance[i].to_string(),
            weights.counts[i].to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

fn conditional_table(table: &ConditionalTable, used: &[f64]) -> Vec<u8> {
    let header =
        ["index", "count", "exceed", "p2_pred", "p2_obs", "p2_mix", "p2_extrapolated", "p2_used"].map(String::from);
    let rows = (0..table.counts.len()).map(|i| {
        vec![
            i.to_string(),
            table.counts[i].to_string(),
            table.exceed_counts[i].to_string(),
            table.p2_pred[i].to_string(),
            opt(table.p2_obs[i]),
            table.p2_mix[i].to_string(),
            table.p2_extrapolated[i].to_string(),
            used[i].to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

fn allocation_table(plan: &AllocationPlan) -> Vec<u8> {
    let header = ["stratum", "weight", "target", "existing", "additional"].map(String::from);
    let rows = (0..plan.weights.len()).map(|i| {
        vec![
            i.to_string(),
            plan.weights[i].to_string(),
            plan.target[i].to_string(),
            plan.existing[i].to_string(),
            plan.additional[i].to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

impl RunDir {
    /// Creates the directory (which must not hold a run yet) and writes the
    /// configuration snapshot.
    pub fn create(root: impl Into<PathBuf>, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let root = root.into();
        if root.join(CONFIG_FILE).exists() {
            return Err(RunError::Config(format!("{} already holds a run", root.display())));
        }
        fs::create_dir_all(&root).map_err(|e| RunError::io(&root, e))?;
        let dir = RunDir { root };
        write_atomic(&dir.path(CONFIG_FILE), config.to_toml().as_bytes())?;
        Ok(dir)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join(CONFIG_FILE).is_file() {
            return Err(RunError::Config(format!("{} is not a run directory (no {CONFIG_FILE})", root.display())));
        }
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn iteration_dir(&self, k: u32) -> PathBuf {
        self.root.join(format!("iter-{k:03}"))
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.path(CONFIG_FILE))
    }

    pub fn load_state(&self) -> Result<Option<RunState>> {
        let path = self.path(STATE_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| RunError::io(&path, e))?;
        let state: RunState = serde_json::from_slice(&bytes).map_err(|e| RunError::format(&path, e))?;
        Ok(Some(state))
    }

    fn write_in(&self, k: u32, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self.iteration_dir(k);
        fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
        write_atomic(&dir.join(name), bytes)
    }

    fn save_stage(&self, k: u32, stage: &Stage) -> Result<()> {
        self.write_in(k, "model.json", &json(&stage.model))?;
        self.write_in(k, "strata.csv", &strata_table(&stage.strata, &stage.weights))
    }

    /// Cumulative tables and, last, the state itself.
    fn save_cumulative(&self, state: &RunState) -> Result<()> {
        let space = state.config.space()?;
        let all: Vec<&SampleRecord> = state.samples.iter().collect();
        write_atomic(&self.path(SAMPLES_FILE), &sample_table(&space, &all))?;
        write_atomic(&self.path("failures.csv"), &failure_table(&space, &state.failures))?;
        write_atomic(&self.path(STATE_FILE), &json(state))
    }

    pub fn save_preliminary(&self, state: &RunState) -> Result<()> {
        let space = state.config.space()?;
        self.save_stage(0, &state.preliminary)?;
        let fresh: Vec<&SampleRecord> = state.samples.iter().filter(|s| s.iteration == 0).collect();
        self.write_in(0, "new_samples.csv", &sample_table(&space, &fresh))?;
        self.save_cumulative(state)
    }

    /// Written before candidate search so an infeasible allocation can be
    /// inspected.
    pub fn save_allocation(
        &self,
        k: u32,
        strata: &StratumSet,
        table: &ConditionalTable,
        p2_used: &[f64],
        plan: &AllocationPlan,
    ) -> Result<()> {
        debug_assert_eq!(strata.len(), plan.weights.len());
        self.write_in(k, "conditional.csv", &conditional_table(table, p2_used))?;
        self.write_in(k, "allocation.csv", &allocation_table(plan))
    }

    pub fn save_iteration(&self, state: &RunState) -> Result<()> {
        let it = state.iterations.last().expect("an iteration was just completed");
        let k = it.iteration;
        let space = state.config.space()?;
        self.save_stage(k, &it.stage)?;
        let fresh: Vec<&SampleRecord> = state.samples.iter().filter(|s| s.iteration == k).collect();
        self.write_in(k, "new_samples.csv", &sample_table(&space, &fresh))?;
        self.write_in(k, "estimate.json", &json(&it.estimate))?;
        self.save_cumulative(state)
    }

    pub fn save_report(&self, report: &FinalReport) -> Result<()> {
        write_atomic(&self.path("report.json"), &json(report))?;
        write_atomic(&self.path("report.txt"), report.to_text().as_bytes())
    }
}
