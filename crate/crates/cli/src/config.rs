//! Flat `key=value` configuration files layered under command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Keys read from a config file that have not yet been claimed by a command.
#[derive(Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (usize, String)>,
    source: String,
}

impl ConfigMap {
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{source}:{}: expected key=value, got `{line}`", i + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(CliError::Usage(format!("{source}:{}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self {
            entries,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                CliError::Usage(format!("{}:{line}: bad value `{v}` for `{key}`: {e}", self.source))
            }),
        }
    }

    /// Fails on the first key no command claimed.
    pub fn finish(self) -> Result<(), CliError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(CliError::Usage(format!("{}:{line}: unknown key `{k}`", self.source))),
        }
    }
}

/// Declares a group of optional settings that can come from flags or from a
/// config file, with the default applied after both are consulted.
macro_rules! settings {
    ($(#[$meta:meta])* $name:ident { $( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),* $(,)? }) => {
        $(#[$meta])*
        #[derive(clap::Args, Debug, Clone, Default)]
        pub struct $name {
            $( $(#[doc = $doc])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            /// Fills unset fields from the config file, then from defaults.
            pub fn resolve(&mut self, cfg: &mut $crate::config::ConfigMap) -> Result<(), $crate::error::CliError> {
                $(
                    if self.$field.is_none() {
                        self.$field = cfg.take(stringify!($field))?;
                    }
                    if self.$field.is_none() {
                        self.$field = $default;
                    }
                )*
                Ok(())
            }

            pub fn echo(&self, out: &mut Vec<(String, String)>) {
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field).to_string(), $crate::config::Echo::echo(v)));
                    }
                )*
            }
        }
    };
}

pub(crate) use settings;

/// Rendering of a setting in a manifest, parseable back by `FromStr`.
pub trait Echo {
    fn echo(&self) -> String;
}

macro_rules! echo_display {
    ($($t:ty),*) => { $( impl Echo for $t { fn echo(&self) -> String { self.to_string() } } )* };
}

echo_display!(
    usize,
    u64,
    i32,
    f32,
    bool,
    String,
    promptforge::pipeline::Variant,
    promptforge::color::MaskMode,
    promptforge::trainer::Augment,
    promptforge::data::SplitTag
);

impl Echo for std::path::PathBuf {
    fn echo(&self) -> String {
        self.display().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_unknown_keys() {
        let mut m = ConfigMap::parse("# run\n\nepochs = 3\nlr0=2.5\nbogus=1\n", "t").unwrap();
        assert_eq!(m.take::<usize>("epochs").unwrap(), Some(3));
        assert_eq!(m.take::<f32>("lr0").unwrap(), Some(2.5));
        assert_eq!(m.take::<f32>("missing").unwrap(), None);
        let err = m.finish().unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_lines() {
        assert!(ConfigMap::parse("epochs 3", "t").is_err());
        assert!(ConfigMap::parse("a=1\na=2", "t").is_err());
        let mut m = ConfigMap::parse("epochs=three", "t").unwrap();
        assert!(m.take::<usize>("epochs").unwrap_err().to_string().contains("epochs"));
    }
}
