//! C ABI over the pushing environment and the corrected-policy runtime.
//!
//! Handles are opaque pointers created and destroyed by this library; every
//! fallible call returns a [`DcdpStatus`] and writes results through out
//! pointers. Panics are caught at the boundary and surfaced as
//! `DCDP_STATUS_PANIC` with the message retrievable via
//! [`dcdp_last_error`]. The generated header lands in `include/dcdp.h`.

use dcdp_core::diffusion::DiffusionPolicy;
use dcdp_core::encoder::HistoryBank;
use dcdp_core::env::{self, PerturbKind, PerturbationSchedule, PushTEnv};
use dcdp_core::rng::Rng;
use dcdp_core::runtime::{ChunkContext, RuntimeMode};
use dcdp_core::vae::Stage1Model;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

/// Result codes for every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum DcdpStatus {
    Ok = 0,
    NullArgument = 1,
    Io = 2,
    Format = 3,
    Invalid = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dcdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// ABI revision; bump on any breaking header change.
#[no_mangle]
pub extern "C" fn dcdp_abi_version() -> u32 {
    1
}

fn guard<F: FnOnce() -> DcdpStatus>(f: F) -> DcdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(|s| s.as_str())
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            set_error(msg);
            DcdpStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, DcdpStatus> {
    if p.is_null() {
        return Err(DcdpStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| DcdpStatus::Invalid)
}

// ── environment handle ─────────────────────────────────────────────────

/// Opaque simulation environment.
pub struct DcdpEnv {
    inner: PushTEnv,
}

/// Create an environment reset to `seed` with no perturbation.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_new(seed: u64, out: *mut *mut DcdpEnv) -> DcdpStatus {
    guard(|| {
        if out.is_null() {
            return DcdpStatus::NullArgument;
        }
        let (env, _) = PushTEnv::reset(seed, PerturbationSchedule::none());
        *out = Box::into_raw(Box::new(DcdpEnv { inner: env }));
        DcdpStatus::Ok
    })
}

/// # Safety
/// `env` must be a pointer from [`dcdp_env_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_free(env: *mut DcdpEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Reset in place, keeping the configured perturbation schedule.
///
/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_reset(env: *mut DcdpEnv, seed: u64) -> DcdpStatus {
    guard(|| {
        let Some(e) = env.as_mut() else { return DcdpStatus::NullArgument };
        let perturb = e.inner.perturb.clone();
        let (fresh, _) = PushTEnv::reset(seed, perturb);
        e.inner = fresh;
        DcdpStatus::Ok
    })
}

/// Configure the perturbation: kind 0 = none, 1 = constant, 2 = random.
///
/// # Safety
/// `env` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_set_perturbation(
    env: *mut DcdpEnv,
    kind: u32,
    magnitude: f64,
    dir_x: f64,
    dir_y: f64,
    resample_period: u32,
    seed: u64,
) -> DcdpStatus {
    guard(|| {
        let Some(e) = env.as_mut() else { return DcdpStatus::NullArgument };
        e.inner.perturb = match kind {
            0 => PerturbationSchedule::none(),
            1 => {
                if dir_x == 0.0 && dir_y == 0.0 {
                    set_error("constant perturbation needs a nonzero direction");
                    return DcdpStatus::Invalid;
                }
                PerturbationSchedule::constant(magnitude, [dir_x, dir_y])
            }
            2 => {
                if resample_period == 0 {
                    set_error("resample period must be positive");
                    return DcdpStatus::Invalid;
                }
                PerturbationSchedule::random(magnitude, resample_period, seed)
            }
            _ => {
                set_error("unknown perturbation kind");
                return DcdpStatus::Invalid;
            }
        };
        let _ = PerturbKind::None;
        DcdpStatus::Ok
    })
}

/// Advance one control step toward the target position `(ax, ay)`.
/// Writes the scaled 5-float state vector and the overlap ratio.
///
/// # Safety
/// `env` must be valid; `out_state5` must have room for 5 doubles and
/// `out_sigma` for one, or be null to skip.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_step(
    env: *mut DcdpEnv,
    ax: f64,
    ay: f64,
    out_state5: *mut f64,
    out_sigma: *mut f64,
) -> DcdpStatus {
    guard(|| {
        let Some(e) = env.as_mut() else { return DcdpStatus::NullArgument };
        if !ax.is_finite() || !ay.is_finite() {
            set_error("non-finite action");
            return DcdpStatus::Invalid;
        }
        let obs = e.inner.step([ax, ay]);
        if !out_state5.is_null() {
            std::ptr::copy_nonoverlapping(obs.state_vec.as_ptr(), out_state5, 5);
        }
        if !out_sigma.is_null() {
            *out_sigma = e.inner.overlap();
        }
        DcdpStatus::Ok
    })
}

/// Current scaled state vector without stepping.
///
/// # Safety
/// `env` must be valid; `out_state5` must have room for 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_state(env: *const DcdpEnv, out_state5: *mut f64) -> DcdpStatus {
    guard(|| {
        let Some(e) = env.as_ref() else { return DcdpStatus::NullArgument };
        if out_state5.is_null() {
            return DcdpStatus::NullArgument;
        }
        let sv = env::state_vec(&e.inner.state);
        std::ptr::copy_nonoverlapping(sv.as_ptr(), out_state5, 5);
        DcdpStatus::Ok
    })
}

/// Render the 48x48 grayscale observation (2304 doubles, row-major).
///
/// # Safety
/// `env` must be valid; `out_pixels` must have room for 2304 doubles.
#[no_mangle]
pub unsafe extern "C" fn dcdp_env_render(env: *const DcdpEnv, out_pixels: *mut f64) -> DcdpStatus {
    guard(|| {
        let Some(e) = env.as_ref() else { return DcdpStatus::NullArgument };
        if out_pixels.is_null() {
            return DcdpStatus::NullArgument;
        }
        let img = env::render(&e.inner.state, &e.inner.goal);
        std::ptr::copy_nonoverlapping(img.as_ptr(), out_pixels, img.len());
        DcdpStatus::Ok
    })
}

// ── policy and runtime handles ─────────────────────────────────────────

struct PolicyInner {
    dp: DiffusionPolicy,
    stage1: Stage1Model,
}

/// Opaque frozen policy bundle (diffusion policy + stage-1 model).
pub struct DcdpPolicy {
    inner: Arc<PolicyInner>,
}

/// Load both checkpoints. The handle is immutable and may back any number
/// of runtimes.
///
/// # Safety
/// `dp_path` and `fast_path` must be NUL-terminated UTF-8 paths; `out` must
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dcdp_policy_load(
    dp_path: *const c_char,
    fast_path: *const c_char,
    out: *mut *mut DcdpPolicy,
) -> DcdpStatus {
    guard(|| {
        if out.is_null() {
            return DcdpStatus::NullArgument;
        }
        let dp_path = match cstr(dp_path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let fast_path = match cstr(fast_path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let dp = match DiffusionPolicy::load(Path::new(dp_path)) {
            Ok(dp) => dp,
            Err(e) => {
                set_error(&e.to_string());
                return DcdpStatus::Format;
            }
        };
        let stage1 = match Stage1Model::load(Path::new(fast_path)) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return DcdpStatus::Format;
            }
        };
        *out = Box::into_raw(Box::new(DcdpPolicy { inner: Arc::new(PolicyInner { dp, stage1 }) }));
        DcdpStatus::Ok
    })
}

/// # Safety
/// `policy` must be a pointer from [`dcdp_policy_load`], not yet freed.
/// Runtimes created from it keep their own reference and stay valid.
#[no_mangle]
pub unsafe extern "C" fn dcdp_policy_free(policy: *mut DcdpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Combined parameter checksum, for training-free audits.
///
/// # Safety
/// `policy` must be valid; `out` must point to one u64.
#[no_mangle]
pub unsafe extern "C" fn dcdp_policy_checksum(
    policy: *const DcdpPolicy,
    out: *mut u64,
) -> DcdpStatus {
    guard(|| {
        let Some(p) = policy.as_ref() else { return DcdpStatus::NullArgument };
        if out.is_null() {
            return DcdpStatus::NullArgument;
        }
        *out = p.inner.dp.checksum() ^ p.inner.stage1.checksum().rotate_left(1);
        DcdpStatus::Ok
    })
}

/// Execution mode for a runtime handle.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum DcdpMode {
    OpenLoop = 0,
    ClosedLoop = 1,
    TemporalEnsemble = 2,
    Dcdp = 3,
}

/// Opaque stepping runtime. Feed one observation per control step with
/// `dcdp_runtime_observe`, then read the action with `dcdp_runtime_action`.
pub struct DcdpRuntimeHandle {
    policy: Arc<PolicyInner>,
    mode: RuntimeMode,
    rng: Rng,
    bank: HistoryBank,
    ctx: Option<ChunkContext>,
    open_chunk: Vec<[f64; 2]>,
    ensemble: dcdp_core::runtime::TemporalEnsemble,
    step: usize,
    state_vec: [f64; 5],
    observed: bool,
}

/// Create a runtime bound to `policy`.
///
/// # Safety
/// `policy` must be a valid handle; `out` must point to writable storage
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dcdp_runtime_new(
    policy: *const DcdpPolicy,
    mode: DcdpMode,
    seed: u64,
    out: *mut *mut DcdpRuntimeHandle,
) -> DcdpStatus {
    guard(|| {
        let Some(p) = policy.as_ref() else { return DcdpStatus::NullArgument };
        if out.is_null() {
            return DcdpStatus::NullArgument;
        }
        let mode = match mode {
            DcdpMode::OpenLoop => RuntimeMode::OpenLoop,
            DcdpMode::ClosedLoop => RuntimeMode::ClosedLoop,
            DcdpMode::TemporalEnsemble => RuntimeMode::TemporalEnsemble,
            DcdpMode::Dcdp => RuntimeMode::Dcdp,
        };
        let m = p.inner.stage1.arch.encoder.m;
        *out = Box::into_raw(Box::new(DcdpRuntimeHandle {
            policy: p.inner.clone(),
            mode,
            rng: Rng::new(seed),
            bank: HistoryBank::new(m),
            ctx: None,
            open_chunk: Vec::new(),
            ensemble: dcdp_core::runtime::TemporalEnsemble::new(0.5),
            step: 0,
            state_vec: [0.0; 5],
            observed: false,
        }));
        DcdpStatus::Ok
    })
}

/// # Safety
/// `rt` must be a pointer from [`dcdp_runtime_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcdp_runtime_free(rt: *mut DcdpRuntimeHandle) {
    if !rt.is_null() {
        drop(Box::from_raw(rt));
    }
}

/// Supply the observation for the current control step: the scaled 5-float
/// state vector and the 48x48 image (2304 doubles).
///
/// # Safety
/// `rt` must be valid; `state5` must point to 5 doubles and `image2304` to
/// 2304 doubles.
#[no_mangle]
pub unsafe extern "C" fn dcdp_runtime_observe(
    rt: *mut DcdpRuntimeHandle,
    state5: *const f64,
    image2304: *const f64,
) -> DcdpStatus {
    guard(|| {
        let Some(r) = rt.as_mut() else { return DcdpStatus::NullArgument };
        if state5.is_null() || image2304.is_null() {
            return DcdpStatus::NullArgument;
        }
        let sv = std::slice::from_raw_parts(state5, 5);
        let img = std::slice::from_raw_parts(image2304, env::IMG_SIZE * env::IMG_SIZE);
        if sv.iter().chain(img.iter()).any(|v| !v.is_finite()) {
            set_error("non-finite observation");
            return DcdpStatus::Invalid;
        }
        r.state_vec.copy_from_slice(sv);
        if r.mode == RuntimeMode::Dcdp {
            let feats = r.policy.stage1.frame_features(img);
            r.bank.push_with_features(img.to_vec(), feats);
        }
        r.observed = true;
        DcdpStatus::Ok
    })
}

/// Compute the action for the current step and advance the step cursor.
///
/// # Safety
/// `rt` must be valid and have received an observation for this step;
/// `out_action2` must have room for 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn dcdp_runtime_action(
    rt: *mut DcdpRuntimeHandle,
    out_action2: *mut f64,
) -> DcdpStatus {
    guard(|| {
        let Some(r) = rt.as_mut() else { return DcdpStatus::NullArgument };
        if out_action2.is_null() {
            return DcdpStatus::NullArgument;
        }
        if !r.observed {
            set_error("call dcdp_runtime_observe before dcdp_runtime_action");
            return DcdpStatus::Invalid;
        }
        let h_exec = r.policy.stage1.arch.h_exec;
        let action = match r.mode {
            RuntimeMode::OpenLoop => {
                if r.step % h_exec == 0 {
                    r.open_chunk = r.policy.dp.sample_chunk(&r.state_vec, &mut r.rng);
                }
                r.open_chunk[r.step % h_exec]
            }
            RuntimeMode::ClosedLoop => r.policy.dp.sample_chunk(&r.state_vec, &mut r.rng)[0],
            RuntimeMode::TemporalEnsemble => {
                let chunk = r.policy.dp.sample_chunk(&r.state_vec, &mut r.rng);
                r.ensemble.merge(r.step, &chunk)
            }
            RuntimeMode::Dcdp => {
                let needs = match &r.ctx {
                    None => true,
                    Some(c) => c.step >= h_exec,
                };
                if needs {
                    let chunk = r.policy.dp.sample_chunk(&r.state_vec, &mut r.rng);
                    let prefix = &chunk[..h_exec];
                    let normalized =
                        dcdp_core::runtime::normalize_chunk(prefix, &r.policy.dp.bounds);
                    let (mu, _) = r.policy.stage1.vae_encode_fast(&normalized);
                    r.ctx = Some(ChunkContext {
                        z: mu,
                        step: 0,
                        hidden: vec![0.0; r.policy.stage1.arch.rnn_hidden],
                    });
                }
                let ctx = r.ctx.as_mut().unwrap();
                let feats = r.policy.stage1.encoder_extract_cached(&r.bank);
                let norm = r.policy.stage1.vae_decode_step_fast(
                    &ctx.z,
                    &feats,
                    ctx.step,
                    &mut ctx.hidden,
                );
                ctx.step += 1;
                let raw = r.policy.dp.bounds.denormalize(norm);
                [
                    raw[0].clamp(0.0, env::WORKSPACE),
                    raw[1].clamp(0.0, env::WORKSPACE),
                ]
            }
        };
        r.step += 1;
        r.observed = false;
        std::ptr::copy_nonoverlapping(action.as_ptr(), out_action2, 2);
        DcdpStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcdp_core::config::Config;
    use dcdp_core::{demos, diffusion, vae};
    use std::ptr;

    fn checkpoints() -> (std::path::PathBuf, std::path::PathBuf) {
        let dir = std::env::temp_dir().join("dcdp_ffi_test");
        std::fs::create_dir_all(&dir).unwrap();
        let dp_path = dir.join("dp.ckpt");
        let fast_path = dir.join("fast.ckpt");
        if !dp_path.exists() || !fast_path.exists() {
            let ds = demos::generate(2, 5, 3.0).unwrap();
            let mut cfg = Config::default();
            cfg.epochs_dp = 1;
            cfg.epochs_stage1 = 1;
            cfg.batch_stage1 = 8;
            let dp = diffusion::train(&ds, &cfg, 3);
            dp.save(&dp_path).unwrap();
            let s1 = vae::train_stage1(&ds, &cfg, 3, false, false, false);
            s1.save(&fast_path).unwrap();
        }
        (dp_path, fast_path)
    }

    fn c_path(p: &std::path::Path) -> CString {
        CString::new(p.to_str().unwrap()).unwrap()
    }

    #[test]
    fn env_lifecycle_and_step() {
        unsafe {
            let mut env: *mut DcdpEnv = ptr::null_mut();
            assert!(dcdp_env_new(7, &mut env) == DcdpStatus::Ok);
            let mut state = [0.0f64; 5];
            assert!(dcdp_env_state(env, state.as_mut_ptr()) == DcdpStatus::Ok);
            assert!(state.iter().all(|v| v.is_finite()));
            let mut sigma = -1.0;
            assert!(
                dcdp_env_step(env, 100.0, 100.0, state.as_mut_ptr(), &mut sigma)
                    == DcdpStatus::Ok
            );
            assert!((0.0..=1.0).contains(&sigma));
            let mut img = vec![0.0f64; 48 * 48];
            assert!(dcdp_env_render(env, img.as_mut_ptr()) == DcdpStatus::Ok);
            assert!(img.iter().any(|&v| v > 0.0));
            // non-finite action is rejected, not a panic
            assert!(dcdp_env_step(env, f64::NAN, 0.0, ptr::null_mut(), ptr::null_mut())
                == DcdpStatus::Invalid);
            dcdp_env_free(env);
        }
    }

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            assert!(dcdp_env_new(1, ptr::null_mut()) == DcdpStatus::NullArgument);
            let mut out: *mut DcdpPolicy = ptr::null_mut();
            assert!(
                dcdp_policy_load(ptr::null(), ptr::null(), &mut out)
                    == DcdpStatus::NullArgument
            );
            assert!(dcdp_runtime_action(ptr::null_mut(), ptr::null_mut())
                == DcdpStatus::NullArgument);
        }
    }

    #[test]
    fn missing_checkpoint_is_format_error_with_message() {
        unsafe {
            let mut out: *mut DcdpPolicy = ptr::null_mut();
            let bogus = CString::new("/nonexistent/dp.ckpt").unwrap();
            let st = dcdp_policy_load(bogus.as_ptr(), bogus.as_ptr(), &mut out);
            assert!(st == DcdpStatus::Format);
            let msg = CStr::from_ptr(dcdp_last_error()).to_str().unwrap();
            assert!(!msg.is_empty());
        }
    }

    #[test]
    fn perturbation_validation() {
        unsafe {
            let mut env: *mut DcdpEnv = ptr::null_mut();
            dcdp_env_new(3, &mut env);
            assert!(
                dcdp_env_set_perturbation(env, 1, 1.0, 0.0, 0.0, 50, 0) == DcdpStatus::Invalid
            );
            assert!(dcdp_env_set_perturbation(env, 9, 1.0, 1.0, 0.0, 50, 0) == DcdpStatus::Invalid);
            assert!(dcdp_env_set_perturbation(env, 2, 1.0, 0.0, 0.0, 50, 4) == DcdpStatus::Ok);
            dcdp_env_free(env);
        }
    }

    #[test]
    fn full_closed_loop_through_the_abi() {
        let (dp_path, fast_path) = checkpoints();
        unsafe {
            let mut policy: *mut DcdpPolicy = ptr::null_mut();
            let dp_c = c_path(&dp_path);
            let fast_c = c_path(&fast_path);
            assert!(
                dcdp_policy_load(dp_c.as_ptr(), fast_c.as_ptr(), &mut policy) == DcdpStatus::Ok
            );
            let mut sum0 = 0u64;
            assert!(dcdp_policy_checksum(policy, &mut sum0) == DcdpStatus::Ok);

            let mut rt: *mut DcdpRuntimeHandle = ptr::null_mut();
            assert!(dcdp_runtime_new(policy, DcdpMode::Dcdp, 11, &mut rt) == DcdpStatus::Ok);
            let mut env: *mut DcdpEnv = ptr::null_mut();
            assert!(dcdp_env_new(0, &mut env) == DcdpStatus::Ok);

            let mut state = [0.0f64; 5];
            let mut img = vec![0.0f64; 48 * 48];
            dcdp_env_state(env, state.as_mut_ptr());
            dcdp_env_render(env, img.as_mut_ptr());

            // action before observe is rejected
            let mut action = [0.0f64; 2];
            assert!(dcdp_runtime_action(rt, action.as_mut_ptr()) == DcdpStatus::Invalid);

            for _ in 0..20 {
                assert!(
                    dcdp_runtime_observe(rt, state.as_ptr(), img.as_ptr()) == DcdpStatus::Ok
                );
                assert!(dcdp_runtime_action(rt, action.as_mut_ptr()) == DcdpStatus::Ok);
                assert!(action[0].is_finite() && action[1].is_finite());
                assert!((0.0..=512.0).contains(&action[0]));
                let mut sigma = 0.0;
                assert!(
                    dcdp_env_step(env, action[0], action[1], state.as_mut_ptr(), &mut sigma)
                        == DcdpStatus::Ok
                );
                dcdp_env_render(env, img.as_mut_ptr());
            }

            // policy untouched by stepping
            let mut sum1 = 0u64;
            dcdp_policy_checksum(policy, &mut sum1);
            assert_eq!(sum0, sum1);

            // freeing the policy first must not invalidate the runtime
            dcdp_policy_free(policy);
            assert!(dcdp_runtime_observe(rt, state.as_ptr(), img.as_ptr()) == DcdpStatus::Ok);
            assert!(dcdp_runtime_action(rt, action.as_mut_ptr()) == DcdpStatus::Ok);
            dcdp_runtime_free(rt);
            dcdp_env_free(env);
        }
    }

    #[test]
    fn runtime_is_deterministic_across_handles() {
        let (dp_path, fast_path) = checkpoints();
        unsafe {
            let mut policy: *mut DcdpPolicy = ptr::null_mut();
            let dp_c = c_path(&dp_path);
            let fast_c = c_path(&fast_path);
            dcdp_policy_load(dp_c.as_ptr(), fast_c.as_ptr(), &mut policy);
            let run = |seed: u64| -> Vec<[f64; 2]> {
                let mut rt: *mut DcdpRuntimeHandle = ptr::null_mut();
                dcdp_runtime_new(policy, DcdpMode::OpenLoop, seed, &mut rt);
                let mut env: *mut DcdpEnv = ptr::null_mut();
                dcdp_env_new(2, &mut env);
                let mut state = [0.0f64; 5];
                let mut img = vec![0.0f64; 48 * 48];
                dcdp_env_state(env, state.as_mut_ptr());
                dcdp_env_render(env, img.as_mut_ptr());
                let mut actions = Vec::new();
                let mut action = [0.0f64; 2];
                for _ in 0..12 {
                    dcdp_runtime_observe(rt, state.as_ptr(), img.as_ptr());
                    dcdp_runtime_action(rt, action.as_mut_ptr());
                    actions.push(action);
                    dcdp_env_step(env, action[0], action[1], state.as_mut_ptr(), ptr::null_mut());
                    dcdp_env_render(env, img.as_mut_ptr());
                }
                dcdp_runtime_free(rt);
                dcdp_env_free(env);
                actions
            };
            let a = run(5);
            let b = run(5);
            assert_eq!(a, b);
            dcdp_policy_free(policy);
        }
    }
}
