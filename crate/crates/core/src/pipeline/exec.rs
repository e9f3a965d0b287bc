use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{plan, plan_text, run_job, Dag, JobSpec, Layout, PipelineConfig, PipelineError, Result};
use crate::corpus::BlockManifest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOutcome {
    Ran,
    Skipped,
    Failed(String),
    /// A prerequisite failed.
    Blocked,
    /// Not part of the selection passed to [`execute`].
    NotSelected,
}

/// What the last successful run of a job recorded.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JobRecord {
    pub fingerprint: String,
    /// Output path relative to the work directory, mapped to its sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunState {
    pub jobs: BTreeMap<String, JobRecord>,
}

impl RunState {
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read(path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RunState::default()),
            Err(e) => Err(e.into()),
        }
    }

    /// Write through a temporary file so a crash never leaves half a state.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec_pretty(self)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    /// Job id and outcome, in plan order.
    pub outcomes: Vec<(String, JobOutcome)>,
}

impl RunReport {
    fn with(&self, pred: impl Fn(&JobOutcome) -> bool) -> Vec<&str> {
        self.outcomes.iter().filter(|(_, o)| pred(o)).map(|(id, _)| id.as_str()).collect()
    }

    pub fn ran(&self) -> Vec<&str> {
        self.with(|o| *o == JobOutcome::Ran)
    }

    pub fn skipped(&self) -> Vec<&str> {
        self.with(|o| *o == JobOutcome::Skipped)
    }

    pub fn failed(&self) -> Vec<(&str, &str)> {
        self.outcomes
            .iter()
            .filter_map(|(id, o)| match o {
                JobOutcome::Failed(msg) => Some((id.as_str(), msg.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn blocked(&self) -> Vec<&str> {
        self.with(|o| *o == JobOutcome::Blocked)
    }

    pub fn success(&self) -> bool {
        self.outcomes.iter().all(|(_, o)| !matches!(o, JobOutcome::Failed(_) | JobOutcome::Blocked))
    }

    pub fn outcome(&self, id: &str) -> Option<&JobOutcome> {
        self.outcomes.iter().find(|(j, _)| j == id).map(|(_, o)| o)
    }
}

/// Options for [`execute`].
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Ids that already ran earlier in this invocation. They are not run again
    /// but count as having run, so their dependents are redone.
    pub carried: HashSet<String>,
    /// When set, only these job indices are considered.
    pub only: Option<HashSet<usize>>,
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn fingerprint(job: &JobSpec, layout: &Layout) -> String {
    let mut h = Sha256::new();
    h.update(job.id.as_bytes());
    h.update([0]);
    h.update(job.config_digest.as_bytes());
    for input in &job.inputs {
        h.update([0]);
        h.update(layout.relative(input).to_string_lossy().as_bytes());
        h.update([0]);
        match file_digest(input) {
            Ok(d) => h.update(d.as_bytes()),
            Err(_) => h.update(b"missing"),
        }
    }
    hex::encode(h.finalize())
}

fn outputs_intact(record: &JobRecord, layout: &Layout) -> bool {
    !record.outputs.is_empty()
        && record
            .outputs
            .iter()
            .all(|(p, d)| file_digest(&layout.root.join(p)).map(|x| &x == d).unwrap_or(false))
}

#[derive(Serialize)]
struct JournalLine<'a> {
    job: &'a str,
    outcome: &'a JobOutcome,
    fingerprint: &'a str,
    outputs: Vec<String>,
}

struct Shared {
    status: Vec<Option<JobOutcome>>,
    pending: Vec<usize>,
    ready: std::collections::BTreeSet<usize>,
    running: usize,
    state: RunState,
    journal: fs::File,
    error: Option<PipelineError>,
}

impl Shared {
    fn journal(&mut self, job: &str, outcome: &JobOutcome, fp: &str, outputs: Vec<String>) -> Result<()> {
        let line = serde_json::to_string(&JournalLine { job, outcome, fingerprint: fp, outputs })?;
        writeln!(self.journal, "{line}")?;
        Ok(())
    }

    /// Record that job `i` is finished and release or block its dependents.
    fn finish(&mut self, dag: &Dag, children: &[Vec<usize>], i: usize, outcome: JobOutcome) {
        self.status[i] = Some(outcome);
        let mut stack = vec![i];
        while let Some(j) = stack.pop() {
            for &c in &children[j] {
                if self.status[c].is_some() {
                    continue;
                }
                self.pending[c] -= 1;
                if self.pending[c] > 0 {
                    continue;
                }
                let broken = dag.jobs[c]
                    .deps
                    .iter()
                    .any(|&d| matches!(self.status[d], Some(JobOutcome::Failed(_)) | Some(JobOutcome::Blocked)));
                if broken {
                    self.status[c] = Some(JobOutcome::Blocked);
                    let id = dag.jobs[c].id.clone();
                    if let Err(e) = self.journal(&id, &JobOutcome::Blocked, "", Vec::new()) {
                        self.error.get_or_insert(e);
                    }
                    stack.push(c);
                } else {
                    self.ready.insert(c);
                }
            }
        }
    }
}

enum Decision {
    Skip(String),
    Run(String),
    Carry,
    Ignore,
}

/// Run the jobs of `dag` with `cfg.workers` threads, skipping jobs whose
/// fingerprint and outputs match the recorded state.
pub fn execute(dag: &Dag, cfg: &PipelineConfig, opts: &ExecOptions) -> Result<RunReport> {
    let layout = Layout::new(&cfg.work_dir);
    fs::create_dir_all(&layout.root)?;
    let state = RunState::load(&layout.state())?;
    let journal = fs::OpenOptions::new().create(true).append(true).open(layout.journal())?;

    let n = dag.jobs.len();
    let mut children = vec![Vec::new(); n];
    for (i, j) in dag.jobs.iter().enumerate() {
        for &d in &j.deps {
            children[d].push(i);
        }
    }
    let pending: Vec<usize> = dag.jobs.iter().map(|j| j.deps.len()).collect();
    let ready = (0..n).filter(|&i| pending[i] == 0).collect();
    let shared = Mutex::new(Shared { status: vec![None; n], pending, ready, running: 0, state, journal, error: None });
    let wake = Condvar::new();

    let decide = |sh: &Shared, i: usize| -> Decision {
        let job = &dag.jobs[i];
        if opts.carried.contains(&job.id) {
            return Decision::Carry;
        }
        if let Some(only) = &opts.only {
            if !only.contains(&i) {
                return Decision::Ignore;
            }
        }
        let fp = fingerprint(job, &layout);
        let upstream_ran = job.deps.iter().any(|&d| sh.status[d] == Some(JobOutcome::Ran));
        let unchanged = sh
            .state
            .jobs
            .get(&job.id)
            .is_some_and(|r| r.fingerprint == fp && outputs_intact(r, &layout));
        if !upstream_ran && unchanged {
            Decision::Skip(fp)
        } else {
            Decision::Run(fp)
        }
    };

    let worker = || loop {
        let mut sh = shared.lock().unwrap();
        let i = loop {
            if sh.error.is_some() && sh.running == 0 {
                return;
            }
            if let Some(i) = sh.ready.pop_first() {
                if sh.error.is_none() {
                    break i;
                }
                continue;
            }
            if sh.running == 0 {
                wake.notify_all();
                return;
            }
            sh = wake.wait(sh).unwrap();
        };
        let job = &dag.jobs[i];
        match decide(&sh, i) {
            Decision::Carry => {
                sh.finish(dag, &children, i, JobOutcome::Ran);
            }
            Decision::Ignore => {
                sh.finish(dag, &children, i, JobOutcome::NotSelected);
            }
            Decision::Skip(fp) => {
                let outputs = sh.state.jobs[&job.id].outputs.keys().cloned().collect();
                if let Err(e) = sh.journal(&job.id, &JobOutcome::Skipped, &fp, outputs) {
                    sh.error.get_or_insert(e);
                }
                sh.finish(dag, &children, i, JobOutcome::Skipped);
            }
            Decision::Run(fp) => {
                sh.running += 1;
                drop(sh);
                let result = run_job(job, cfg).and_then(|paths| {
                    let mut outputs = BTreeMap::new();
                    for p in paths {
                        let d = file_digest(&p)?;
                        outputs.insert(layout.relative(&p).to_string_lossy().into_owned(), d);
                    }
                    Ok(outputs)
                });
                sh = shared.lock().unwrap();
                sh.running -= 1;
                let outcome = match result {
                    Ok(outputs) => {
                        let names = outputs.keys().cloned().collect();
                        sh.state.jobs.insert(job.id.clone(), JobRecord { fingerprint: fp.clone(), outputs });
                        let saved = sh.state.save(&layout.state());
                        let logged = sh.journal(&job.id, &JobOutcome::Ran, &fp, names);
                        if let Err(e) = saved.and(logged) {
                            sh.error.get_or_insert(e);
                        }
                        JobOutcome::Ran
                    }
                    Err(e) => {
                        // forget the old record so a later run retries
                        sh.state.jobs.remove(&job.id);
                        let saved = sh.state.save(&layout.state());
                        let failed = JobOutcome::Failed(e.to_string());
                        let logged = sh.journal(&job.id, &failed, &fp, Vec::new());
                        if let Err(e) = saved.and(logged) {
                            sh.error.get_or_insert(e);
                        }
                        failed
                    }
                };
                sh.finish(dag, &children, i, outcome);
            }
        }
        wake.notify_all();
    };

    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1) {
            s.spawn(worker);
        }
    });

    let sh = shared.into_inner().unwrap();
    if let Some(e) = sh.error {
        return Err(e);
    }
    let outcomes = dag
        .jobs
        .iter()
        .zip(sh.status)
        .map(|(j, o)| (j.id.clone(), o.unwrap_or(JobOutcome::Blocked)))
        .collect();
    Ok(RunReport { outcomes })
}

/// Load the corpus manifest of every configured language.
pub fn load_manifests(cfg: &PipelineConfig) -> Result<BTreeMap<crate::corpus::Lang, BlockManifest>> {
    let dir: PathBuf = Layout::new(&cfg.work_dir).corpus_dir();
    cfg.langs.iter().map(|l| Ok((l.clone(), BlockManifest::load(&dir, l)?))).collect()
}

/// The full run: the text task first, then the rest of the graph planned
/// from the resulting manifests.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport> {
    let text = plan_text(cfg)?;
    let first = execute(&text, cfg, &ExecOptions::default())?;
    if !first.success() {
        return Ok(first);
    }
    let carried = first.ran().into_iter().map(String::from).collect();
    let dag = plan(cfg, &load_manifests(cfg)?)?;
    execute(&dag, cfg, &ExecOptions { carried, only: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_round_trip_is_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("state.json");
        assert_eq!(RunState::load(&p).unwrap(), RunState::default());
        let mut s = RunState::default();
        s.jobs.insert(
            "embed:de:00000".into(),
            JobRecord { fingerprint: "ab".into(), outputs: BTreeMap::from([("emb/x".into(), "cd".into())]) },
        );
        s.save(&p).unwrap();
        assert_eq!(RunState::load(&p).unwrap(), s);
        assert!(!dir.path().join("state.json.tmp").exists());
    }

    #[test]
    fn report_queries() {
        let r = RunReport {
            outcomes: vec![
                ("a".into(), JobOutcome::Ran),
                ("b".into(), JobOutcome::Skipped),
                ("c".into(), JobOutcome::Failed("boom".into())),
                ("d".into(), JobOutcome::Blocked),
            ],
        };
        assert_eq!(r.ran(), ["a"]);
        assert_eq!(r.skipped(), ["b"]);
        assert_eq!(r.failed(), [("c", "boom")]);
        assert_eq!(r.blocked(), ["d"]);
        assert!(!r.success());
    }
}
