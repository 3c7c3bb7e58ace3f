//! State-machine workflow engine.
//!
//! A definition is an ordered list of stages, each bound by name to a
//! registered operation. [`Engine::step`] performs exactly one attempt of
//! the current stage; failures are retried with exponential backoff and
//! ±20% jitter drawn from an RNG seeded per (engine, instance, stage,
//! attempt), so a recorded run replays to the same schedule and state.
//! Instance input and scratch data live only in memory and are dropped
//! when the instance reaches a terminal state.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("unknown workflow {0:?}")]
    UnknownWorkflow(String),
    #[error("unknown instance {0}")]
    UnknownInstance(u64),
    #[error("instance {0} is in a terminal state")]
    InstanceTerminal(u64),
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),
    #[error("operation {0:?} is not registered")]
    UnboundOperation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

fn default_multiplier() -> f64 {
    2.0
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 50, multiplier: default_multiplier() }
    }
}

impl RetryPolicy {
    pub const JITTER: f64 = 0.2;

    pub fn once() -> Self {
        Self { max_attempts: 1, ..Self::default() }
    }

    /// Delay before attempt `attempt + 1`, given `attempt` ≥ 1 failed.
    pub fn backoff(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let base = self.backoff_ms as f64 * self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let factor = 1.0 + rng.gen_range(-Self::JITTER..=Self::JITTER);
        Duration::from_micros((base * factor * 1000.0).max(0.0) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDefinition {
    pub name: String,
    pub operation: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    /// Run in reverse order for completed stages when the workflow fails
    /// under [`OnFailure::Compensate`].
    #[serde(default)]
    pub compensate: Option<String>,
}

impl StageDefinition {
    pub fn new(name: &str, operation: &str) -> Self {
        Self {
            name: name.into(),
            operation: operation.into(),
            retry: RetryPolicy::default(),
            timeout_ms: 30_000,
            compensate: None,
        }
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn compensate(mut self, operation: &str) -> Self {
        self.compensate = Some(operation.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnFailure {
    Halt,
    Compensate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDefinition {
    pub name: String,
    pub stages: Vec<StageDefinition>,
    pub on_failure: OnFailure,
}

impl WorkflowDefinition {
    pub fn new(name: &str, stages: Vec<StageDefinition>) -> Self {
        Self { name: name.into(), stages, on_failure: OnFailure::Halt }
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        if self.stages.is_empty() {
            return Err(WorkflowError::InvalidDefinition("no stages".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if !seen.insert(s.name.as_str()) {
                return Err(WorkflowError::InvalidDefinition(format!("duplicate stage {:?}", s.name)));
            }
            if s.retry.max_attempts < 1 {
                return Err(WorkflowError::InvalidDefinition(format!("stage {:?} has max_attempts 0", s.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum InstanceState {
    Pending,
    Running { stage: String },
    Completed,
    Failed { stage: String, reason: String },
}

impl InstanceState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, InstanceState::Completed | InstanceState::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{reason}")]
pub struct StageError {
    pub reason: String,
    pub retryable: bool,
}

impl StageError {
    pub fn retryable(reason: impl Into<String>) -> Self {
        Self { reason: reason.into(), retryable: true }
    }

    pub fn fatal(reason: impl Into<String>) -> Self {
        Self { reason: reason.into(), retryable: false }
    }
}

/// Transient per-instance data handed to operations.
#[derive(Debug, Clone)]
pub struct StageContext {
    pub instance_id: u64,
    pub stage: String,
    pub attempt: u32,
    pub input: Value,
    pub scratch: BTreeMap<String, Value>,
}

pub type Operation = Arc<dyn Fn(&mut StageContext) -> Result<(), StageError> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum AttemptOutcome {
    Ok,
    Err { reason: String, retryable: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub stage: String,
    pub attempt: u32,
    pub outcome: AttemptOutcome,
    pub duration_ms: f64,
    /// Delay scheduled before the next attempt, if one follows.
    pub backoff_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkflowInstance {
    pub id: u64,
    pub definition: String,
    pub state: InstanceState,
    pub attempts: BTreeMap<String, u32>,
    pub log: Vec<AttemptRecord>,
    pub compensated: Vec<String>,
    pub created_at: i64,
    #[serde(skip)]
    stage_index: usize,
    #[serde(skip)]
    context: Option<StageContext>,
}

impl WorkflowInstance {
    /// The per-attempt outcomes, in order: everything needed to replay.
    pub fn recorded_outcomes(&self) -> Vec<AttemptOutcome> {
        self.log.iter().map(|r| r.outcome.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: InstanceState,
    /// Set when the stage failed and will be retried after this delay.
    pub retry_in: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub attempts: u64,
    pub successes: u64,
    pub failures: u64,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowMetrics {
    pub workflow: String,
    pub instances: u64,
    pub completed: u64,
    pub failed: u64,
    pub running: u64,
    /// Completed over terminal instances; 0 when none finished.
    pub success_rate: f64,
    pub stages: Vec<StageMetrics>,
}

type Slot = Arc<Mutex<WorkflowInstance>>;

pub struct Engine {
    seed: u64,
    definitions: RwLock<HashMap<String, Arc<WorkflowDefinition>>>,
    operations: RwLock<HashMap<String, Operation>>,
    instances: RwLock<HashMap<u64, Slot>>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("seed", &self.seed)
            .field("definitions", &self.definitions.read().unwrap().keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            definitions: RwLock::default(),
            operations: RwLock::default(),
            instances: RwLock::default(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn register_operation<F>(&self, name: &str, op: F)
    where
        F: Fn(&mut StageContext) -> Result<(), StageError> + Send + Sync + 'static,
    {
        self.operations.write().unwrap().insert(name.to_string(), Arc::new(op));
    }

    pub fn register_definition(&self, def: WorkflowDefinition) -> Result<String, WorkflowError> {
        def.validate()?;
        let ops = self.operations.read().unwrap();
        for s in &def.stages {
            for op in std::iter::once(&s.operation).chain(s.compensate.as_ref()) {
                if !ops.contains_key(op) {
                    return Err(WorkflowError::UnboundOperation(op.clone()));
                }
            }
        }
        let name = def.name.clone();
        self.definitions.write().unwrap().insert(name.clone(), Arc::new(def));
        Ok(name)
    }

    pub fn definition(&self, name: &str) -> Option<Arc<WorkflowDefinition>> {
        self.definitions.read().unwrap().get(name).cloned()
    }

    pub fn start(&self, name: &str, input: Value, now: i64) -> Result<u64, WorkflowError> {
        if self.definition(name).is_none() {
            return Err(WorkflowError::UnknownWorkflow(name.into()));
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let instance = WorkflowInstance {
            id,
            definition: name.into(),
            state: InstanceState::Pending,
            attempts: BTreeMap::new(),
            log: Vec::new(),
            compensated: Vec::new(),
            created_at: now,
            stage_index: 0,
            context: Some(StageContext {
                instance_id: id,
                stage: String::new(),
                attempt: 0,
                input,
                scratch: BTreeMap::new(),
            }),
        };
        self.instances.write().unwrap().insert(id, Arc::new(Mutex::new(instance)));
        Ok(id)
    }

    fn slot(&self, id: u64) -> Result<Slot, WorkflowError> {
        self.instances.read().unwrap().get(&id).cloned().ok_or(WorkflowError::UnknownInstance(id))
    }

    pub fn instance(&self, id: u64) -> Option<WorkflowInstance> {
        self.slot(id).ok().map(|s| s.lock().unwrap().clone())
    }

    /// Scratch data of a live instance (cleared once terminal).
    pub fn scratch(&self, id: u64) -> Option<BTreeMap<String, Value>> {
        let slot = self.slot(id).ok()?;
        let guard = slot.lock().unwrap();
        guard.context.as_ref().map(|c| c.scratch.clone())
    }

    /// Runs one attempt of the current stage.
    pub fn step(&self, id: u64) -> Result<StepResult, WorkflowError> {
        let slot = self.slot(id)?;
        let mut inst = slot.lock().unwrap();
        let def = self.definition(&inst.definition).ok_or_else(|| WorkflowError::UnknownWorkflow(inst.definition.clone()))?;
        let ops = self.operations.read().unwrap().clone();
        step_instance(self.seed, &def, &mut inst, |name, ctx| match ops.get(name) {
            Some(op) => op(ctx),
            None => Err(StageError::fatal(format!("operation {name} unbound"))),
        })
    }

    /// Steps to a terminal state, sleeping through backoff delays.
    pub fn run(&self, id: u64) -> Result<WorkflowInstance, WorkflowError> {
        self.run_with(id, std::thread::sleep)
    }

    pub fn run_with(&self, id: u64, mut sleep: impl FnMut(Duration)) -> Result<WorkflowInstance, WorkflowError> {
        loop {
            let r = self.step(id)?;
            if r.state.is_terminal() {
                return self.instance(id).ok_or(WorkflowError::UnknownInstance(id));
            }
            if let Some(d) = r.retry_in {
                sleep(d);
            }
        }
    }

    /// Re-executes `name` with each attempt's outcome taken from `recorded`
    /// instead of the bound operations.
    pub fn replay(&self, name: &str, instance_id: u64, recorded: &[AttemptOutcome]) -> Result<WorkflowInstance, WorkflowError> {
        let def = self.definition(name).ok_or_else(|| WorkflowError::UnknownWorkflow(name.into()))?;
        let mut inst = WorkflowInstance {
            id: instance_id,
            definition: name.into(),
            state: InstanceState::Pending,
            attempts: BTreeMap::new(),
            log: Vec::new(),
            compensated: Vec::new(),
            created_at: 0,
            stage_index: 0,
            context: Some(StageContext {
                instance_id,
                stage: String::new(),
                attempt: 0,
                input: Value::Null,
                scratch: BTreeMap::new(),
            }),
        };
        let mut outcomes = recorded.iter();
        let compensations: BTreeSet<&str> = def.stages.iter().filter_map(|s| s.compensate.as_deref()).collect();
        while !inst.state.is_terminal() {
            step_instance(self.seed, &def, &mut inst, |name, _| {
                if compensations.contains(name) && !def.stages.iter().any(|s| s.operation == name) {
                    return Ok(());
                }
                match outcomes.next() {
                    Some(AttemptOutcome::Ok) => Ok(()),
                    Some(AttemptOutcome::Err { reason, retryable }) => {
                        Err(StageError { reason: reason.clone(), retryable: *retryable })
                    }
                    None => Err(StageError::fatal("replay log exhausted")),
                }
            })?;
        }
        Ok(inst)
    }

    pub fn metrics(&self, name: &str) -> WorkflowMetrics {
        let Some(def) = self.definition(name) else {
            return WorkflowMetrics {
                workflow: name.into(),
                instances: 0,
                completed: 0,
                failed: 0,
                running: 0,
                success_rate: 0.0,
                stages: Vec::new(),
            };
        };
        let slots: Vec<Slot> = self.instances.read().unwrap().values().cloned().collect();
        let (mut instances, mut completed, mut failed, mut running) = (0, 0, 0, 0);
        let mut per_stage: HashMap<&str, (u64, u64, Vec<f64>)> = HashMap::new();
        for slot in slots {
            let inst = slot.lock().unwrap();
            if inst.definition != name {
                continue;
            }
            instances += 1;
            match inst.state {
                InstanceState::Completed => completed += 1,
                InstanceState::Failed { .. } => failed += 1,
                _ => running += 1,
            }
            for rec in &inst.log {
                if let Some(s) = def.stages.iter().find(|s| s.name == rec.stage) {
                    let entry = per_stage.entry(s.name.as_str()).or_default();
                    match rec.outcome {
                        AttemptOutcome::Ok => entry.0 += 1,
                        AttemptOutcome::Err { .. } => entry.1 += 1,
                    }
                    entry.2.push(rec.duration_ms);
                }
            }
        }
        let stages = def
            .stages
            .iter()
            .map(|s| {
                let (successes, failures, mut durations) = per_stage.remove(s.name.as_str()).unwrap_or_default();
                durations.sort_by(f64::total_cmp);
                StageMetrics {
                    stage: s.name.clone(),
                    attempts: successes + failures,
                    successes,
                    failures,
                    p50_ms: quantile(&durations, 0.50),
                    p95_ms: quantile(&durations, 0.95),
                    max_ms: durations.last().copied(),
                }
            })
            .collect();
        let terminal = completed + failed;
        WorkflowMetrics {
            workflow: name.into(),
            instances,
            completed,
            failed,
            running,
            success_rate: if terminal == 0 { 0.0 } else { completed as f64 / terminal as f64 },
            stages,
        }
    }
}

/// Nearest-rank quantile of sorted samples.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn jitter_rng(seed: u64, instance: u64, stage: usize, attempt: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&instance.to_le_bytes());
    key[16..24].copy_from_slice(&(stage as u64).to_le_bytes());
    key[24..28].copy_from_slice(&attempt.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn step_instance(
    seed: u64,
    def: &WorkflowDefinition,
    inst: &mut WorkflowInstance,
    mut execute: impl FnMut(&str, &mut StageContext) -> Result<(), StageError>,
) -> Result<StepResult, WorkflowError> {
    if inst.state.is_terminal() {
        return Err(WorkflowError::InstanceTerminal(inst.id));
    }
    let index = inst.stage_index;
    let stage = &def.stages[index];
    let attempt = inst.attempts.get(&stage.name).copied().unwrap_or(0) + 1;
    inst.attempts.insert(stage.name.clone(), attempt);
    inst.state = InstanceState::Running { stage: stage.name.clone() };

    let mut ctx = inst.context.take().expect("live instance has a context");
    ctx.stage = stage.name.clone();
    ctx.attempt = attempt;
    let started = Instant::now();
    let mut result = execute(&stage.operation, &mut ctx);
    let elapsed = started.elapsed();
    if result.is_ok() && elapsed > Duration::from_millis(stage.timeout_ms) {
        result = Err(StageError::retryable(format!("timeout after {} ms", elapsed.as_millis())));
    }
    inst.context = Some(ctx);

    let duration_ms = elapsed.as_secs_f64() * 1000.0;
    let (outcome, retry_in) = match &result {
        Ok(()) => (AttemptOutcome::Ok, None),
        Err(e) => {
            let retry = e.retryable && attempt < stage.retry.max_attempts;
            let delay = retry.then(|| stage.retry.backoff(attempt, &mut jitter_rng(seed, inst.id, index, attempt)));
            (AttemptOutcome::Err { reason: e.reason.clone(), retryable: e.retryable }, delay)
        }
    };
    inst.log.push(AttemptRecord {
        stage: stage.name.clone(),
        attempt,
        outcome,
        duration_ms,
        backoff_ms: retry_in.map(|d| d.as_secs_f64() * 1000.0),
    });

    match result {
        Ok(()) if index + 1 == def.stages.len() => {
            inst.state = InstanceState::Completed;
            inst.context = None;
        }
        Ok(()) => {
            inst.stage_index += 1;
            inst.state = InstanceState::Running { stage: def.stages[index + 1].name.clone() };
        }
        Err(_) if retry_in.is_some() => {}
        Err(e) => {
            if def.on_failure == OnFailure::Compensate {
                let mut ctx = inst.context.take().expect("live instance has a context");
                for done in def.stages[..index].iter().rev() {
                    if let Some(op) = &done.compensate {
                        ctx.stage = done.name.clone();
                        let _ = execute(op, &mut ctx);
                        inst.compensated.push(done.name.clone());
                    }
                }
            }
            inst.state = InstanceState::Failed { stage: stage.name.clone(), reason: e.reason };
            inst.context = None;
        }
    }
    Ok(StepResult { state: inst.state.clone(), retry_in })
}
