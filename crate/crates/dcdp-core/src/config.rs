//! Flat key=value configuration.
//!
//! Every tunable in the workspace lives here with its default. A config
//! file is plain text, one `key=value` per line, `#` comments allowed.
//! Environment variables override file values: `DCDP_<KEY>` with the key
//! upper-cased (e.g. `DCDP_EPOCHS_DP=40`).

use std::path::Path;

macro_rules! config_struct {
    ($($(#[$doc:meta])* $name:ident : $ty:ty = $default:expr),+ $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $($(#[$doc])* pub $name: $ty,)+
        }

        impl Default for Config {
            fn default() -> Self {
                Config { $($name: $default,)+ }
            }
        }

        impl Config {
            /// All keys with their current values, serialization order fixed.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.to_string()),)+]
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.trim().parse::<$ty>().map_err(|_| {
                            ConfigError::BadValue { key: key.into(), value: value.into() }
                        })?;
                        Ok(())
                    })+
                    _ => Err(ConfigError::UnknownKey(key.into())),
                }
            }
        }
    };
}

config_struct! {
    // environment
    perturb_magnitude: f64 = 1.0,
    resample_period: u32 = 50,
    // demonstrations
    n_demos: usize = 200,
    demo_jitter: f64 = 3.0,
    // diffusion policy
    t_diff: usize = 50,
    beta_start: f64 = 1e-4,
    beta_end: f64 = 0.02,
    h_pred: usize = 16,
    h_exec: usize = 8,
    t_embed_dim: usize = 64,
    cond_dim: usize = 256,
    trunk_width: usize = 256,
    epochs_dp: usize = 48,
    batch_dp: usize = 64,
    lr_dp: f64 = 1e-3,
    // dynamic feature encoder
    history_len: usize = 4,
    conv_c1: usize = 4,
    conv_c2: usize = 8,
    conv_c3: usize = 16,
    conv_c4: usize = 32,
    attn_dim: usize = 128,
    attn_key_dim: usize = 64,
    feature_dim: usize = 128,
    alpha_init: f64 = 1.0,
    // action vae
    latent_dim: usize = 32,
    step_embed_dim: usize = 32,
    rnn_hidden: usize = 128,
    lambda_kl: f64 = 1e-3,
    lambda_diff: f64 = 0.1,
    epochs_stage1: usize = 8,
    batch_stage1: usize = 16,
    lr_stage1: f64 = 1e-3,
    // evaluation
    n_seeds: usize = 50,
    t_max: u32 = 300,
    sigma_star: f64 = 0.95,
    te_lambda: f64 = 0.5,
    rate_hz: f64 = 10.0,
    pace_realtime: bool = false,
    // latency benchmark
    bench_warmup: usize = 100,
    bench_steps: usize = 1000,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("cannot parse value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line}: `{text}` (expected key=value)")]
    Malformed { line: usize, text: String },
}

impl Config {
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn parse_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Malformed { line: i + 1, text: raw.into() });
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        cfg.parse_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Apply `DCDP_<KEY>` environment overrides on top of current values.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        let keys: Vec<&'static str> = self.entries().iter().map(|(k, _)| *k).collect();
        for key in keys {
            let var = format!("DCDP_{}", key.to_uppercase());
            if let Ok(v) = std::env::var(&var) {
                self.set(key, &v)?;
            }
        }
        Ok(())
    }
}
