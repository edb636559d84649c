//! Setting resolution: defaults, then the JSON config file, then `BATIK_*`
//! environment variables, then explicit command-line flags.
//!
//! The config file is one flat JSON object keyed by flag name
//! (`{"seed": 7, "threshold": 0.4, ...}`); the environment override for
//! `--cluster-threshold` is `BATIK_CLUSTER_THRESHOLD`, and so on.

use std::collections::HashMap;
use std::path::Path;

use batik_core::Error;

pub struct Settings {
    file: HashMap<String, serde_json::Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let file = match path {
            None => HashMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::format(p.display().to_string(), e.to_string()))?
            }
        };
        Ok(Settings { file })
    }

    /// Resolves one setting. `flag` is the kebab-case flag name.
    pub fn resolve<T: FromSetting>(&self, flag: &str, cli: Option<T>, default: T) -> Result<T, Error> {
        if let Some(v) = cli {
            return Ok(v);
        }
        let env_key = format!("BATIK_{}", flag.replace('-', "_").to_uppercase());
        if let Ok(raw) = std::env::var(&env_key) {
            return T::from_str_setting(&raw)
                .ok_or_else(|| Error::Config(format!("{env_key}: cannot parse `{raw}`")));
        }
        if let Some(v) = self.file.get(flag) {
            return T::from_json_setting(v)
                .ok_or_else(|| Error::Config(format!("config key {flag}: wrong type")));
        }
        Ok(default)
    }
}

pub trait FromSetting: Sized {
    fn from_str_setting(s: &str) -> Option<Self>;
    fn from_json_setting(v: &serde_json::Value) -> Option<Self>;
}

macro_rules! numeric_setting {
    ($t:ty) => {
        impl FromSetting for $t {
            fn from_str_setting(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn from_json_setting(v: &serde_json::Value) -> Option<Self> {
                v.as_f64().and_then(|f| {
                    let c = f as $t;
                    (c as f64 == f).then_some(c)
                })
            }
        }
    };
}

numeric_setting!(u64);
numeric_setting!(usize);

impl FromSetting for f64 {
    fn from_str_setting(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn from_json_setting(v: &serde_json::Value) -> Option<Self> {
        v.as_f64()
    }
}

impl FromSetting for String {
    fn from_str_setting(s: &str) -> Option<Self> {
        Some(s.to_string())
    }
    fn from_json_setting(v: &serde_json::Value) -> Option<Self> {
        v.as_str().map(|s| s.to_string())
    }
}

impl FromSetting for bool {
    fn from_str_setting(s: &str) -> Option<Self> {
        match s {
            "1" | "true" | "yes" => Some(true),
            "0" | "false" | "no" => Some(false),
            _ => None,
        }
    }
    fn from_json_setting(v: &serde_json::Value) -> Option<Self> {
        v.as_bool()
    }
}
