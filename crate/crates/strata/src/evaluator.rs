//! Expensive objective evaluators and the parallel batch driver.
//!
//! External evaluators speak a line protocol over the child's stdin/stdout.
//! Each request is one JSON object per line,
//!
//! ```text
//! {"id":17,"params":{"aspect_ratio":9.5,"sweep":31.2,...}}
//! ```
//!
//! and the child answers each with one line `{"id":17,"objective":0.734}`.
//! Children are long-lived, one per worker thread, and receive the run
//! directory in `STRATA_RUN_DIR`.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use strata_core::synthetic::SyntheticObjective;
use strata_core::{ParameterSpace, ParameterVector};

pub const RUN_DIR_ENV: &str = "STRATA_RUN_DIR";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRequest {
    pub id: u64,
    pub params: ParameterVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub id: u64,
    pub objective: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationFailure {
    pub id: u64,
    pub error: EvalError,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("could not start evaluator: {0}")]
    Spawn(String),
    #[error("evaluator i/o: {0}")]
    Io(String),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("evaluator exited: {0}")]
    Exited(String),
    #[error("malformed reply {line:?}: {reason}")]
    Malformed { line: String, reason: String },
    #[error("reply for id {got} while waiting for {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("objective {0} is not finite")]
    NonFinite(f64),
    #[error("{0}")]
    Objective(String),
}

/// Results in request order plus every failure, also in request order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    pub results: Vec<EvaluationResult>,
    pub failures: Vec<EvaluationFailure>,
}

pub trait Evaluator: Sync {
    fn describe(&self) -> String;

    /// Per-thread evaluation state, e.g. a child process.
    fn start_worker(&self) -> Box<dyn Worker + '_>;
}

pub trait Worker {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<f64, EvalError>;
}

/// Evaluates `requests` on up to `parallelism` threads. Each request is
/// evaluated exactly once; the outcome does not depend on scheduling for a
/// deterministic evaluator.
pub fn evaluate_batch(evaluator: &dyn Evaluator, requests: &[EvaluationRequest], parallelism: usize) -> BatchOutcome {
    let threads = parallelism.max(1).min(requests.len());
    if threads == 0 {
        return BatchOutcome::default();
    }
    let next = AtomicUsize::new(0);
    let run = || {
        let mut worker = evaluator.start_worker();
        let mut done = Vec::new();
        loop {
            let k = next.fetch_add(1, Ordering::Relaxed);
            let Some(req) = requests.get(k) else { break };
            let start = Instant::now();
            let out =
                worker.evaluate(req).and_then(|j| if j.is_finite() { Ok(j) } else { Err(EvalError::NonFinite(j)) });
            done.push((k, out, start.elapsed()));
        }
        done
    };
    let mut slots: Vec<Option<(Result<f64, EvalError>, Duration)>> = vec![None; requests.len()];
    let chunks: Vec<_> = if threads == 1 {
        vec![run()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(run)).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    for (k, out, t) in chunks.into_iter().flatten() {
        slots[k] = Some((out, t));
    }
    let mut outcome = BatchOutcome::default();
    for (req, slot) in requests.iter().zip(slots) {
        match slot.expect("every request is claimed once") {
            (Ok(objective), wall_time) => outcome.results.push(EvaluationResult { id: req.id, objective, wall_time }),
            (Err(error), _) => {
                log::warn!("evaluation {} failed: {error}", req.id);
                outcome.failures.push(EvaluationFailure { id: req.id, error })
            }
        }
    }
    outcome
}

/// In-process closed-form objective.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    objective: SyntheticObjective,
}

impl SyntheticEvaluator {
    pub fn new(objective: SyntheticObjective) -> Self {
        SyntheticEvaluator { objective }
    }

    pub fn objective(&self) -> &SyntheticObjective {
        &self.objective
    }
}

impl Evaluator for SyntheticEvaluator {
    fn describe(&self) -> String {
        self.objective.describe()
    }

    fn start_worker(&self) -> Box<dyn Worker + '_> {
        Box::new(SyntheticWorker(&self.objective))
    }
}

struct SyntheticWorker<'a>(&'a SyntheticObjective);

impl Worker for SyntheticWorker<'_> {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<f64, EvalError> {
        self.0.evaluate(&request.params).map_err(|e| EvalError::Objective(e.to_string()))
    }
}

/// A child process speaking the line protocol.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: Vec<String>,
    pub timeout: Duration,
    pub run_dir: Option<PathBuf>,
    pub space: ParameterSpace,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, space: ParameterSpace) -> Self {
        ExternalEvaluator { command, timeout: DEFAULT_TIMEOUT, run_dir: None, space }
    }

    fn spawn(&self) -> Result<ChildLink, EvalError> {
        let (program, args) = self.command.split_first().ok_or_else(|| EvalError::Spawn("empty command".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        if let Some(dir) = &self.run_dir {
            cmd.env(RUN_DIR_ENV, dir);
        }
        let mut child = cmd.spawn().map_err(|e| EvalError::Spawn(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line.map_err(|e| e.to_string())).is_err() || failed {
                    return;
                }
            }
        });
        Ok(ChildLink { child, stdin, replies: rx })
    }
}

impl Evaluator for ExternalEvaluator {
    fn describe(&self) -> String {
        format!("external {}", self.command.join(" "))
    }

    fn start_worker(&self) -> Box<dyn Worker + '_> {
        Box::new(ExternalWorker { evaluator: self, link: None })
    }
}

struct ChildLink {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<Result<String, String>>,
}

impl ChildLink {
    fn shutdown(mut self) {
        drop(self.stdin);
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn exit_status(&mut self) -> String {
        match self.child.wait() {
            Ok(status) => status.to_string(),
            Err(e) => e.to_string(),
        }
    }
}

struct ExternalWorker<'a> {
    evaluator: &'a ExternalEvaluator,
    link: Option<ChildLink>,
}

struct NamedParams<'a>(&'a ParameterSpace, &'a [f64]);

impl Serialize for NamedParams<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.1.len()))?;
        for (name, v) in self.0.names().zip(self.1) {
            map.serialize_entry(name, v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: u64,
    params: NamedParams<'a>,
}

/// `{"id":N,"objective":x}`, or `{"id":N,"error":"..."}` for a case the
/// evaluator could not compute.
#[derive(Deserialize)]
struct WireReply {
    id: u64,
    objective: Option<f64>,
    error: Option<String>,
}

/// One request line, without the trailing newline.
pub fn encode_request(space: &ParameterSpace, request: &EvaluationRequest) -> String {
    let wire = WireRequest { id: request.id, params: NamedParams(space, &request.params) };
    serde_json::to_string(&wire).expect("request serializes")
}

impl ExternalWorker<'_> {
    fn exchange(&mut self, request: &EvaluationRequest) -> Result<f64, EvalError> {
        if self.link.is_none() {
            self.link = Some(self.evaluator.spawn()?);
        }
        let link = self.link.as_mut().expect("link present");
        let mut line = encode_request(&self.evaluator.space, request);
        line.push('\n');
        if let Err(e) = link.stdin.write_all(line.as_bytes()).and_then(|_| link.stdin.flush()) {
            return Err(EvalError::Io(e.to_string()));
        }
        let reply = match link.replies.recv_timeout(self.evaluator.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(EvalError::Io(e)),
            Err(RecvTimeoutError::Timeout) => return Err(EvalError::Timeout(self.evaluator.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(EvalError::Exited(link.exit_status())),
        };
        let parsed: WireReply = serde_json::from_str(reply.trim())
            .map_err(|e| EvalError::Malformed { line: reply.clone(), reason: e.to_string() })?;
        if parsed.id != request.id {
            return Err(EvalError::IdMismatch { expected: request.id, got: parsed.id });
        }
        match (parsed.objective, parsed.error) {
            (_, Some(message)) => Err(EvalError::Objective(message)),
            (Some(j), None) => Ok(j),
            (None, None) => Err(EvalError::Malformed { line: reply, reason: "neither objective nor error".into() }),
        }
    }
}

impl Worker for ExternalWorker<'_> {
    fn evaluate(&mut self, request: &EvaluationRequest) -> Result<f64, EvalError> {
        let out = self.exchange(request);
        // after a protocol failure the child's state is unknown; start afresh
        if matches!(out, Err(ref e) if !matches!(e, EvalError::Objective(_))) {
            if let Some(link) = self.link.take() {
                link.kill();
            }
        }
        out
    }
}

impl Drop for ExternalWorker<'_> {
    fn drop(&mut self) {
        if let Some(link) = self.link.take() {
            link.shutdown();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use strata_core::synthetic::{SyntheticFamily, SyntheticObjectiveSpec};

    fn synthetic() -> SyntheticEvaluator {
        let spec = SyntheticObjectiveSpec::new(SyntheticFamily::Noisy, 5);
        SyntheticEvaluator::new(SyntheticObjective::new(spec, ParameterSpace::wing_default()).unwrap())
    }

    fn requests(n: usize) -> Vec<EvaluationRequest> {
        let space = ParameterSpace::wing_default();
        let mut rng = strata_core::rng::substream(3, strata_core::rng::Stream::PreliminaryDraws, &[]);
        space
            .sample_uniform(&mut rng, n)
            .into_iter()
            .enumerate()
            .map(|(i, params)| EvaluationRequest { id: 100 + i as u64, params })
            .collect()
    }

    #[test]
    fn empty_batch() {
        let out = evaluate_batch(&synthetic(), &[], 4);
        assert!(out.results.is_empty() && out.failures.is_empty());
    }

    #[test]
    fn parallelism_does_not_change_values() {
        let reqs = requests(10);
        let a = evaluate_batch(&synthetic(), &reqs, 1);
        let b = evaluate_batch(&synthetic(), &reqs, 8);
        let bits = |o: &BatchOutcome| o.results.iter().map(|r| (r.id, r.objective.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.results.len(), 10);
        assert!(a.results.iter().zip(&reqs).all(|(r, q)| r.id == q.id));
    }

    #[test]
    fn out_of_box_request_fails_alone() {
        let mut reqs = requests(3);
        let mut bad = reqs[1].params.clone().into_values();
        bad[0] = 100.0;
        reqs[1].params = ParameterVector::from_values(bad);
        let out = evaluate_batch(&synthetic(), &reqs, 2);
        assert_eq!(out.results.len(), 2);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].id, 101);
    }

    #[test]
    fn request_wire_format() {
        let space = ParameterSpace::new(vec![
            strata_core::ParameterDef::new("b", 0.0, 1.0).unwrap(),
            strata_core::ParameterDef::new("a", 0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let req = EvaluationRequest { id: 7, params: ParameterVector::from_values(vec![0.25, 0.1]) };
        assert_eq!(encode_request(&space, &req), r#"{"id":7,"params":{"b":0.25,"a":0.1}}"#);
    }
}
