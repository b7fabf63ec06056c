//! C ABI over the trafficrl core.
//!
//! Handles are opaque pointers created by `*_new` / `*_load` and released
//! with the matching `*_free`. Every fallible call returns a [`TrcStatus`];
//! on failure a description is kept per thread and can be copied out with
//! [`trc_last_error_message`]. Panics never cross the boundary: they are
//! reported as [`TrcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use trafficrl::agent::{Agent, AgentConfig, AgentError, Variant};
use trafficrl::feed::parse_event;
use trafficrl::nn::{load_checkpoint, NetError};
use trafficrl::sim::{Intersection, SimConfig, SimError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    EpisodeDone = 4,
    Io = 5,
    Parse = 6,
    BufferTooSmall = 7,
    Checkpoint = 8,
    Panic = 9,
}

/// Itemized reward of one decision. Penalties are magnitudes; `total` is
/// the signed sum.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrcReward {
    pub waiting_penalty: f64,
    pub remaining_penalty: f64,
    pub fairness_penalty: f64,
    pub in_reward: f64,
    pub out_reward: f64,
    pub speed_reward: f64,
    pub stuck_penalty: f64,
    pub total: f64,
}

/// Opaque single-intersection simulator.
pub struct TrcEnv {
    inner: Intersection,
}

/// Opaque greedy policy loaded from a checkpoint.
pub struct TrcAgent {
    inner: Agent,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Failure(TrcStatus, String);

impl Failure {
    fn new(status: TrcStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::EpisodeDone => TrcStatus::EpisodeDone,
            SimError::ActionOutOfRange { .. } => TrcStatus::InvalidArgument,
            _ => TrcStatus::InvalidConfig,
        };
        Failure(status, e.to_string())
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        let status = match e {
            NetError::Checkpoint(_) => TrcStatus::Checkpoint,
            NetError::DimensionMismatch { .. } => TrcStatus::InvalidArgument,
            _ => TrcStatus::InvalidConfig,
        };
        Failure(status, e.to_string())
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Net(n) => n.into(),
            AgentError::Sim(s) => s.into(),
            other => Failure(TrcStatus::InvalidConfig, other.to_string()),
        }
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TrcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TrcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TrcStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::new(TrcStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    opt_str(p)?.ok_or_else(|| Failure::new(TrcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::new(TrcStatus::NullPointer, "output buffer is null"));
    }
    if len < needed {
        return Err(Failure::new(
            TrcStatus::BufferTooSmall,
            format!("output buffer holds {len} values, need {needed}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(TrcStatus::NullPointer, "handle is null"))
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(TrcStatus::NullPointer, "handle is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn trc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a simulator. `config_toml` holds the simulator settings as TOML
/// (null or empty for defaults); unknown keys are rejected.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trc_env_new(config_toml: *const c_char, seed: u64, out: *mut *mut TrcEnv) -> TrcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(TrcStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let text = opt_str(config_toml)?.unwrap_or("");
        let config: SimConfig =
            toml::from_str(text).map_err(|e| Failure::new(TrcStatus::InvalidConfig, e.to_string().trim().to_string()))?;
        let env = Intersection::new(config, seed)?;
        *out = Box::into_raw(Box::new(TrcEnv { inner: env }));
        Ok(())
    })
}

/// Releases a simulator. Null is ignored.
///
/// # Safety
/// `env` must be null or a handle from [`trc_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trc_env_free(env: *mut TrcEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation vector length (`1 + 5R`); 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trc_env_observation_len(env: *const TrcEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.observation_len())
}

/// Number of actions (roads); 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trc_env_n_actions(env: *const TrcEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.n_actions())
}

/// Starts a new episode and writes the initial observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must be valid for `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn trc_env_reset(env: *mut TrcEnv, seed: u64, obs: *mut f64, obs_len: usize) -> TrcStatus {
    guard(|| {
        let env = handle_mut(env)?;
        let out = out_slice(obs, obs_len, env.inner.observation_len())?;
        let o = env.inner.reset(seed);
        out[..o.len()].copy_from_slice(o.as_slice());
        Ok(())
    })
}

/// Serves road `action` for one decision interval. Writes the next
/// observation, the reward terms and whether the episode ended.
///
/// # Safety
/// `env` must be a live handle; `obs` valid for `obs_len` doubles; `reward`
/// and `done` valid pointers or null (then skipped).
#[no_mangle]
pub unsafe extern "C" fn trc_env_step(
    env: *mut TrcEnv,
    action: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut TrcReward,
    done: *mut bool,
) -> TrcStatus {
    guard(|| {
        let env = handle_mut(env)?;
        let out = out_slice(obs, obs_len, env.inner.observation_len())?;
        let step = env.inner.step(action)?;
        out[..step.observation.len()].copy_from_slice(step.observation.as_slice());
        if let Some(r) = reward.as_mut() {
            let b = &step.reward;
            *r = TrcReward {
                waiting_penalty: b.waiting_penalty,
                remaining_penalty: b.remaining_penalty,
                fairness_penalty: b.fairness_penalty,
                in_reward: b.in_reward,
                out_reward: b.out_reward,
                speed_reward: b.speed_reward,
                stuck_penalty: b.stuck_penalty,
                total: b.total,
            };
        }
        if let Some(d) = done.as_mut() {
            *d = step.done;
        }
        Ok(())
    })
}

/// Mean wait in seconds over every vehicle currently queued.
///
/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trc_env_mean_waiting_s(env: *const TrcEnv, out: *mut f64) -> TrcStatus {
    guard(|| {
        let env = handle(env)?;
        let out = out.as_mut().ok_or_else(|| Failure::new(TrcStatus::NullPointer, "out is null"))?;
        *out = env.inner.mean_waiting_s();
        Ok(())
    })
}

/// Loads a network checkpoint as a greedy policy. The head type decides the
/// variant (categorical: rainbow, scalar: vanilla DQN).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trc_agent_load(path: *const c_char, out: *mut *mut TrcAgent) -> TrcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(TrcStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let path = req_str(path, "path")?;
        if !Path::new(path).exists() {
            return Err(Failure::new(TrcStatus::Io, format!("checkpoint {path} not found")));
        }
        let net = load_checkpoint(Path::new(path))?;
        let variant = if net.spec().support.is_some() { Variant::Rainbow } else { Variant::VanillaDqn };
        let agent = Agent::from_network(net, &AgentConfig::default().with_variant(variant), 0)?;
        *out = Box::into_raw(Box::new(TrcAgent { inner: agent }));
        Ok(())
    })
}

/// Releases an agent. Null is ignored.
///
/// # Safety
/// `agent` must be null or a handle from [`trc_agent_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trc_agent_free(agent: *mut TrcAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Greedy action for `obs` (mean weights; ties go to the lowest index).
///
/// # Safety
/// `agent` must be a live handle, `obs` valid for `obs_len` doubles and
/// `action` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trc_agent_select_action(
    agent: *const TrcAgent,
    obs: *const f64,
    obs_len: usize,
    action: *mut usize,
) -> TrcStatus {
    guard(|| {
        let agent = handle(agent)?;
        if obs.is_null() || action.is_null() {
            return Err(Failure::new(TrcStatus::NullPointer, "obs or action is null"));
        }
        let obs = std::slice::from_raw_parts(obs, obs_len);
        *action = agent.inner.greedy_action(obs)?;
        Ok(())
    })
}

/// Per-action values (expected return) for `obs`, written to `values`.
///
/// # Safety
/// `agent` must be a live handle, `obs` valid for `obs_len` doubles and
/// `values` for `values_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn trc_agent_action_values(
    agent: *const TrcAgent,
    obs: *const f64,
    obs_len: usize,
    values: *mut f64,
    values_len: usize,
) -> TrcStatus {
    guard(|| {
        let agent = handle(agent)?;
        if obs.is_null() {
            return Err(Failure::new(TrcStatus::NullPointer, "obs is null"));
        }
        let out = out_slice(values, values_len, agent.inner.n_actions())?;
        let q = agent.inner.action_values(std::slice::from_raw_parts(obs, obs_len), None)?;
        out[..q.len()].copy_from_slice(&q);
        Ok(())
    })
}

/// Checks one NDJSON detection-event line against the feed schema.
///
/// # Safety
/// `line` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn trc_feed_validate_line(line: *const c_char) -> TrcStatus {
    guard(|| {
        let line = req_str(line, "line")?;
        parse_event(line).map_err(|e| Failure::new(TrcStatus::Parse, e.to_string()))?;
        Ok(())
    })
}
