//! Flat `section.key = value` configuration shared by checkpoints and the CLI.

use std::fmt::Display;
use std::str::FromStr;

/// A config struct whose fields are addressed as `SECTION.key`.
pub trait KeyValueConfig {
    const SECTION: &'static str;

    /// Keys without the section prefix, in serialisation order.
    fn keys() -> &'static [&'static str];

    fn get(&self, key: &str) -> Option<String>;

    /// Sets one key; the error describes the rejected value.
    fn set(&mut self, key: &str, value: &str) -> Result<(), String>;

    /// Every violated invariant, phrased with its key.
    fn validate(&self) -> Vec<String>;

    fn to_kv(&self) -> Vec<(String, String)> {
        Self::keys()
            .iter()
            .map(|k| (format!("{}.{k}", Self::SECTION), self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Applies every `SECTION.*` entry and ignores other sections.
    fn apply_kv<'a, I>(&mut self, entries: I) -> Result<(), Vec<String>>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let prefix = format!("{}.", Self::SECTION);
        let mut errors = Vec::new();
        for (key, value) in entries {
            if let Some(k) = key.strip_prefix(&prefix) {
                if let Err(e) = self.set(k, value) {
                    errors.push(format!("{key}: {e}"));
                }
            }
        }
        errors.extend(self.validate());
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Parses a trimmed config value, describing the failure.
pub fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("invalid value {value:?} ({e})"))
}
