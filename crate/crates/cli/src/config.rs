//! The merged run configuration: defaults, then a config file, then
//! `WORDLM_<SECTION>_<KEY>` environment variables, then `--set` overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use wordlm::config::{parse, KeyValueConfig};
use wordlm::evaluation::TagMode;
use wordlm::model::ModelConfig;
use wordlm::training::finetune::FinetuneConfig;
use wordlm::training::{ProjectionOptions, TrainConfig};

/// Why a configuration was rejected; every message names its key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabConfig {
    pub k: usize,
    pub lowercase: bool,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            k: 30_000,
            lowercase: true,
        }
    }
}

impl KeyValueConfig for VocabConfig {
    const SECTION: &'static str = "vocab";

    fn keys() -> &'static [&'static str] {
        &["k", "lowercase"]
    }

    fn get(&self, key: &str) -> Option<String> {
        match key {
            "k" => Some(self.k.to_string()),
            "lowercase" => Some(self.lowercase.to_string()),
            _ => None,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "k" => self.k = parse(value)?,
            "lowercase" => self.lowercase = parse(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> Vec<String> {
        if self.k == 0 {
            vec!["vocab.k: must be positive".into()]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub max_length: usize,
    pub ks: Vec<usize>,
    pub mask_prob: f64,
    pub high: u64,
    pub medium: u64,
    pub low: u64,
    pub strict_buckets: bool,
    pub tag_mode: TagMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_length: wordlm::vocabulary::DEFAULT_MAX_LENGTH,
            ks: vec![1, 5, 10],
            mask_prob: 0.15,
            high: 3000,
            medium: 300,
            low: 3,
            strict_buckets: false,
            tag_mode: TagMode::Span,
        }
    }
}

impl KeyValueConfig for EvalConfig {
    const SECTION: &'static str = "eval";

    fn keys() -> &'static [&'static str] {
        &["max_length", "ks", "mask_prob", "high", "medium", "low", "strict_buckets", "tag_mode"]
    }

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "max_length" => self.max_length.to_string(),
            "ks" => self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            "mask_prob" => self.mask_prob.to_string(),
            "high" => self.high.to_string(),
            "medium" => self.medium.to_string(),
            "low" => self.low.to_string(),
            "strict_buckets" => self.strict_buckets.to_string(),
            "tag_mode" => match self.tag_mode {
                TagMode::Span => "span".into(),
                TagMode::Token => "token".into(),
            },
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "max_length" => self.max_length = parse(value)?,
            "ks" => {
                self.ks = value
                    .split(',')
                    .map(parse)
                    .collect::<Result<Vec<usize>, String>>()?
            }
            "mask_prob" => self.mask_prob = parse(value)?,
            "high" => self.high = parse(value)?,
            "medium" => self.medium = parse(value)?,
            "low" => self.low = parse(value)?,
            "strict_buckets" => self.strict_buckets = parse(value)?,
            "tag_mode" => {
                self.tag_mode = match value.trim() {
                    "span" => TagMode::Span,
                    "token" => TagMode::Token,
                    other => return Err(format!("expected span or token, got {other:?}")),
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.max_length < 3 {
            errs.push(format!("eval.max_length: {} leaves no room for words", self.max_length));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            errs.push("eval.ks: need one or more positive k".into());
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            errs.push(format!("eval.mask_prob: {} outside [0, 1]", self.mask_prob));
        }
        if !(self.high > self.medium && self.medium > self.low && self.low > 0) {
            errs.push("eval.high: thresholds must satisfy high > medium > low > 0".into());
        }
        errs
    }
}

/// Projection pretraining options under `projection.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSection(pub ProjectionOptions);

impl KeyValueConfig for ProjectionSection {
    const SECTION: &'static str = "projection";

    fn keys() -> &'static [&'static str] {
        &["lr", "momentum", "max_iters", "tolerance"]
    }

    fn get(&self, key: &str) -> Option<String> {
        let o = &self.0;
        Some(match key {
            "lr" => o.lr.to_string(),
            "momentum" => o.momentum.to_string(),
            "max_iters" => o.max_iters.to_string(),
            "tolerance" => o.tolerance.to_string(),
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let o = &mut self.0;
        match key {
            "lr" => o.lr = parse(value)?,
            "momentum" => o.momentum = parse(value)?,
            "max_iters" => o.max_iters = parse(value)?,
            "tolerance" => o.tolerance = parse(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.0.lr > 0.0) {
            errs.push("projection.lr: must be positive".into());
        }
        if !(0.0..1.0).contains(&self.0.momentum) {
            errs.push("projection.momentum: must lie in [0, 1)".into());
        }
        errs
    }
}

/// Fine-tuning options under `finetune.*`; length and seed come from the
/// `eval` and `train` sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSection {
    pub lr: f32,
    pub epochs: usize,
    pub max_answer_len: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let d = FinetuneConfig::default();
        Self {
            lr: d.lr,
            epochs: d.epochs,
            max_answer_len: d.max_answer_len,
        }
    }
}

impl KeyValueConfig for FinetuneSection {
    const SECTION: &'static str = "finetune";

    fn keys() -> &'static [&'static str] {
        &["lr", "epochs", "max_answer_len"]
    }

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "max_answer_len" => self.max_answer_len.to_string(),
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "lr" => self.lr = parse(value)?,
            "epochs" => self.epochs = parse(value)?,
            "max_answer_len" => self.max_answer_len = parse(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0) {
            errs.push("finetune.lr: must be positive".into());
        }
        if self.max_answer_len == 0 {
            errs.push("finetune.max_answer_len: must be positive".into());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: VocabConfig,
    pub eval: EvalConfig,
    pub projection: ProjectionSection,
    pub finetune: FinetuneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab: VocabConfig::default(),
            eval: EvalConfig::default(),
            projection: ProjectionSection(ProjectionOptions::default()),
            finetune: FinetuneSection::default(),
        }
    }
}

fn declared<T: KeyValueConfig>() -> impl Iterator<Item = String> {
    T::keys().iter().map(|k| format!("{}.{k}", T::SECTION))
}

impl RunConfig {
    /// Every accepted `section.key`.
    pub fn declared_keys() -> Vec<String> {
        declared::<ModelConfig>()
            .chain(declared::<TrainConfig>())
            .chain(declared::<VocabConfig>())
            .chain(declared::<EvalConfig>())
            .chain(declared::<ProjectionSection>())
            .chain(declared::<FinetuneSection>())
            .collect()
    }

    /// Applies entries in order; later entries win. Invariants are checked
    /// once at the end.
    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<(), ConfigError> {
        let keys = Self::declared_keys();
        let mut errs: Vec<String> = entries
            .iter()
            .filter(|(k, _)| !keys.contains(k))
            .map(|(k, _)| format!("{k}: unknown key"))
            .collect();
        for (key, value) in entries.iter().filter(|(k, _)| keys.contains(k)) {
            let (section, k) = key.split_once('.').expect("declared keys are sectioned");
            let result = match section {
                "model" => self.model.set(k, value),
                "train" => self.train.set(k, value),
                "vocab" => self.vocab.set(k, value),
                "eval" => self.eval.set(k, value),
                "projection" => self.projection.set(k, value),
                _ => self.finetune.set(k, value),
            };
            if let Err(e) = result {
                errs.push(format!("{key}: {e}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    pub fn validate(&self, check_model: bool) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if check_model {
            errs.extend(self.model.validate());
        }
        errs.extend(self.train.validate());
        errs.extend(self.vocab.validate());
        errs.extend(self.eval.validate());
        errs.extend(self.projection.validate());
        errs.extend(self.finetune.validate());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = self.model.to_kv();
        out.extend(self.train.to_kv());
        out.extend(self.vocab.to_kv());
        out.extend(self.eval.to_kv());
        out.extend(self.projection.to_kv());
        out.extend(self.finetune.to_kv());
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lr: self.finetune.lr,
            epochs: self.finetune.epochs,
            seed: self.train.seed,
            max_length: self.eval.max_length,
            max_answer_len: self.finetune.max_answer_len,
        }
    }
}

/// `section.key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut errs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_owned(), v.trim().to_owned())),
            _ => errs.push(format!("{origin}:{}: expected `section.key = value`", i + 1)),
        }
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(ConfigError(errs))
    }
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
    parse_config_text(&text, &path.display().to_string())
}

/// `WORDLM_<SECTION>_<KEY>` variables. Unrecognised `WORDLM_` variables are
/// reported as unknown keys.
pub fn env_overrides<I>(vars: I) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (String, String)>,
{
    let keys = RunConfig::declared_keys();
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(name, value)| {
            let rest = name.strip_prefix("WORDLM_")?;
            let key = keys
                .iter()
                .find(|k| k.replace('.', "_").to_ascii_uppercase() == rest)
                .cloned()
                .unwrap_or_else(|| format!("env {name}"));
            Some((key, value))
        })
        .collect();
    out.sort();
    out
}

pub fn parse_set(arg: &str) -> Result<(String, String), String> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got {arg:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_sources_win_and_unknown_keys_are_listed() {
        let mut c = RunConfig::default();
        let entries = vec![
            ("train.seed".to_string(), "3".to_string()),
            ("train.seed".to_string(), "4".to_string()),
            ("model.colour".to_string(), "blue".to_string()),
            ("model.layers".to_string(), "x".to_string()),
        ];
        let err = c.apply(&entries).unwrap_err();
        assert_eq!(err.0.len(), 2);
        assert!(err.0[0].starts_with("model.colour"));
        assert!(err.0[1].starts_with("model.layers"));
        assert_eq!(c.train.seed, 4);
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.eval.ks = vec![1, 3];
        c.train.peak_lr = 1e-3;
        let text = c.render();
        let mut d = RunConfig::default();
        d.apply(&parse_config_text(&text, "t").unwrap()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn env_names_map_to_keys() {
        let vars = vec![
            ("WORDLM_TRAIN_PEAK_LR".to_string(), "0.1".to_string()),
            ("WORDLM_NOPE".to_string(), "1".to_string()),
            ("HOME".to_string(), "/".to_string()),
        ];
        let kv = env_overrides(vars);
        assert_eq!(kv[1], ("train.peak_lr".to_string(), "0.1".to_string()));
        assert!(kv[0].0.starts_with("env WORDLM_NOPE"));
    }

    #[test]
    fn malformed_lines_are_reported_with_position() {
        let err = parse_config_text("model.layers = 2\njunk\n", "f.cfg").unwrap_err();
        assert_eq!(err.0, vec!["f.cfg:2: expected `section.key = value`"]);
    }
}
