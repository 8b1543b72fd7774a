//! Flat `section.key = value` settings merged from defaults, an optional
//! config file and command-line flags (in increasing priority).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Default,
    File,
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Default => "default",
            Origin::File => "file",
            Origin::Flag => "flag",
        })
    }
}

/// Every recognized key with its default, if it has one.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("experiment.case", None),
    ("experiment.realizations", Some("50")),
    ("experiment.seed", Some("1")),
    ("experiment.threads", Some("1")),
    ("experiment.noise_pct", Some("3")),
    ("experiment.modality", Some("EEG")),
    ("experiment.deep_amplitude", Some("10")),
    ("experiment.superficial_amplitude", Some("5")),
    ("experiment.sigma", None),
    ("ramus.levels", Some("3")),
    ("ramus.sparsity", Some("8")),
    ("ramus.decompositions", Some("100")),
    ("ramus.n_iter", Some("10")),
    ("hbm.family", Some("IG")),
    ("hbm.beta", Some("1.5")),
    ("hbm.theta0", Some("1e-10")),
    ("forward.sources", Some("6400")),
    ("forward.source_radius", Some("87")),
    ("forward.scalp_radius", Some("100")),
    ("forward.electrodes", Some("102")),
    ("forward.meg_scale", Some("1.2")),
    ("forward.conductivity", Some("0.33")),
    ("forward.series_terms", Some("300")),
    ("forward.space_seed", Some("2024")),
    ("forward.modality", Some("EEG")),
    ("forward.leadfield", None),
    ("forward.meg_leadfield", None),
    ("output.dir", None),
    ("output.file", None),
    ("output.binary", Some("false")),
];

/// Keys fixed by a case preset.
pub const PRESET_KEYS: &[&str] = &[
    "experiment.modality",
    "experiment.noise_pct",
    "experiment.deep_amplitude",
    "experiment.superficial_amplitude",
    "ramus.sparsity",
    "ramus.decompositions",
    "hbm.family",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_file_text(text: &str, origin: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ConfigError(format!("{}:{}: expected `key = value`", origin.display(), n + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !known(k) {
            return Err(ConfigError(format!("{}:{}: unknown key `{k}`", origin.display(), n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Origin)>,
}

impl Settings {
    pub fn resolve(file: &[(String, String)], flags: &[(&str, String)]) -> Result<Settings, ConfigError> {
        let mut values = BTreeMap::new();
        for (k, d) in KEYS {
            if let Some(d) = d {
                values.insert(k.to_string(), (d.to_string(), Origin::Default));
            }
        }
        for (k, v) in file {
            if !known(k) {
                return Err(ConfigError(format!("unknown key `{k}`")));
            }
            values.insert(k.clone(), (v.clone(), Origin::File));
        }
        for (k, v) in flags {
            if !known(k) {
                return Err(ConfigError(format!("unknown key `{k}`")));
            }
            values.insert(k.to_string(), (v.clone(), Origin::Flag));
        }
        Ok(Settings { values })
    }

    pub fn load(file: Option<&Path>, flags: &[(&str, String)]) -> Result<Settings, ConfigError> {
        let entries = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                parse_file_text(&text, p)?
            }
            None => Vec::new(),
        };
        Settings::resolve(&entries, flags)
    }

    pub fn origin(&self, key: &str) -> Option<Origin> {
        self.values.get(key).map(|v| v.1)
    }

    pub fn is_set(&self, key: &str) -> bool {
        matches!(self.origin(key), Some(Origin::File | Origin::Flag))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|v| v.0.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .raw(key)
            .ok_or_else(|| ConfigError(format!("missing required setting `{key}`")))?;
        raw.parse()
            .map_err(|e| ConfigError(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// `key = value` lines, defaulted ones marked.
    pub fn manifest_lines(&self) -> Vec<String> {
        self.values
            .iter()
            .map(|(k, (v, o))| match o {
                Origin::Default => format!("{k} = {v}  # default"),
                _ => format!("{k} = {v}"),
            })
            .collect()
    }
}
