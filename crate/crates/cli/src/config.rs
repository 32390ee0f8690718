//! Plain-text run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment, blank lines are
//! ignored. Keys mirror the training-config field names exactly; every key
//! is required and unknown keys are rejected, so a config file is always a
//! complete, diffable record of a run. `parse(serialize(c)) == c` holds for
//! any valid config.

use lorasculpt::regularizer::LayerReg;
use lorasculpt::trainer::{Baseline, TrainConfig};
use lorasculpt::{Result, SculptError};

pub const CONFIG_KEYS: &[&str] = &[
    "total_steps",
    "warmup_steps",
    "learning_rate",
    "momentum",
    "batch_size",
    "retained_density",
    "omega",
    "epsilon",
    "alpha",
    "beta",
    "seed",
    "baseline",
    "rank",
    "gamma",
    "dims",
    "layer_tags",
    "dare_drop",
    "l2_lambda",
    "pretrain_steps",
    "pretrain_lr",
    "noise_std",
    "num_source_tasks",
    "teacher_std",
    "source_spread",
    "target_shift",
];

fn cfg_err(msg: String) -> SculptError {
    SculptError::Config(msg)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| cfg_err(format!("key {key}: cannot parse {value:?}: {e}")))
}

/// Parses a full config; missing and unknown keys are both errors, listed
/// by name.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut seen: Vec<(&str, String)> = Vec::new();
    let mut unknown: Vec<String> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`, got {raw:?}", line_no + 1)))?;
        let key = key.trim();
        let value = value.trim().to_string();
        match CONFIG_KEYS.iter().find(|&&k| k == key) {
            Some(&canonical) => {
                if seen.iter().any(|(k, _)| *k == canonical) {
                    return Err(cfg_err(format!("duplicate key: {canonical}")));
                }
                seen.push((canonical, value));
            }
            None => unknown.push(key.to_string()),
        }
    }
    if !unknown.is_empty() {
        return Err(cfg_err(format!("unknown config keys: {}", unknown.join(", "))));
    }
    let missing: Vec<&str> = CONFIG_KEYS
        .iter()
        .filter(|&&k| !seen.iter().any(|(s, _)| *s == k))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(cfg_err(format!("missing config keys: {}", missing.join(", "))));
    }

    let get = |key: &str| -> &str {
        &seen.iter().find(|(k, _)| *k == key).unwrap().1
    };

    let dims: Vec<usize> = get("dims")
        .split(',')
        .map(|t| parse_num::<usize>("dims", t.trim()))
        .collect::<Result<_>>()?;
    let layer_tags: Vec<LayerReg> = get("layer_tags")
        .split(',')
        .map(|t| LayerReg::parse(t.trim()))
        .collect::<Result<_>>()?;

    let cfg = TrainConfig {
        total_steps: parse_num("total_steps", get("total_steps"))?,
        warmup_steps: parse_num("warmup_steps", get("warmup_steps"))?,
        learning_rate: parse_num("learning_rate", get("learning_rate"))?,
        momentum: parse_num("momentum", get("momentum"))?,
        batch_size: parse_num("batch_size", get("batch_size"))?,
        retained_density: parse_num("retained_density", get("retained_density"))?,
        omega: parse_num("omega", get("omega"))?,
        epsilon: parse_num("epsilon", get("epsilon"))?,
        alpha: parse_num("alpha", get("alpha"))?,
        beta: parse_num("beta", get("beta"))?,
        seed: parse_num("seed", get("seed"))?,
        baseline: Baseline::parse(get("baseline")).map_err(|e| cfg_err(e.to_string()))?,
        rank: parse_num("rank", get("rank"))?,
        gamma: parse_num("gamma", get("gamma"))?,
        dims,
        layer_tags,
        dare_drop: parse_num("dare_drop", get("dare_drop"))?,
        l2_lambda: parse_num("l2_lambda", get("l2_lambda"))?,
        pretrain_steps: parse_num("pretrain_steps", get("pretrain_steps"))?,
        pretrain_lr: parse_num("pretrain_lr", get("pretrain_lr"))?,
        noise_std: parse_num("noise_std", get("noise_std"))?,
        num_source_tasks: parse_num("num_source_tasks", get("num_source_tasks"))?,
        teacher_std: parse_num("teacher_std", get("teacher_std"))?,
        source_spread: parse_num("source_spread", get("source_spread"))?,
        target_shift: parse_num("target_shift", get("target_shift"))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Renders a config in canonical key order; `parse_config` inverts this
/// losslessly.
pub fn serialize_config(cfg: &TrainConfig) -> String {
    let dims: Vec<String> = cfg.dims.iter().map(|d| d.to_string()).collect();
    let tags: Vec<&str> = cfg.layer_tags.iter().map(|t| t.as_str()).collect();
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("total_steps", cfg.total_steps.to_string());
    kv("warmup_steps", cfg.warmup_steps.to_string());
    kv("learning_rate", format!("{}", cfg.learning_rate));
    kv("momentum", format!("{}", cfg.momentum));
    kv("batch_size", cfg.batch_size.to_string());
    kv("retained_density", format!("{}", cfg.retained_density));
    kv("omega", format!("{}", cfg.omega));
    kv("epsilon", format!("{}", cfg.epsilon));
    kv("alpha", format!("{}", cfg.alpha));
    kv("beta", format!("{}", cfg.beta));
    kv("seed", cfg.seed.to_string());
    kv("baseline", cfg.baseline.as_str().to_string());
    kv("rank", cfg.rank.to_string());
    kv("gamma", format!("{}", cfg.gamma));
    kv("dims", dims.join(","));
    kv("layer_tags", tags.join(","));
    kv("dare_drop", format!("{}", cfg.dare_drop));
    kv("l2_lambda", format!("{}", cfg.l2_lambda));
    kv("pretrain_steps", cfg.pretrain_steps.to_string());
    kv("pretrain_lr", format!("{}", cfg.pretrain_lr));
    kv("noise_std", format!("{}", cfg.noise_std));
    kv("num_source_tasks", cfg.num_source_tasks.to_string());
    kv("teacher_std", format!("{}", cfg.teacher_std));
    kv("source_spread", format!("{}", cfg.source_spread));
    kv("target_shift", format!("{}", cfg.target_shift));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_default() {
        let cfg = TrainConfig::default();
        let text = serialize_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn round_trip_modified() {
        let mut cfg = TrainConfig::default();
        cfg.baseline = Baseline::Dare;
        cfg.dims = vec![8, 16, 4];
        cfg.layer_tags = vec![LayerReg::None, LayerReg::Frobenius];
        cfg.rank = 4;
        cfg.alpha = 0.0;
        cfg.seed = 123456789;
        cfg.epsilon = 3.25e-9;
        let back = parse_config(&serialize_config(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_keys_listed() {
        let mut text = serialize_config(&TrainConfig::default());
        text = text
            .lines()
            .filter(|l| !l.starts_with("omega") && !l.starts_with("rank"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("missing"), "{err}");
        assert!(err.contains("omega") && err.contains("rank"), "{err}");
    }

    #[test]
    fn unknown_keys_listed() {
        let mut text = serialize_config(&TrainConfig::default());
        text.push_str("mystery_knob = 3\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("unknown") && err.contains("mystery_knob"), "{err}");
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut text = String::from("# run configuration\n\n");
        text.push_str(&serialize_config(&TrainConfig::default()));
        text.push_str("\n# trailing comment\n");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut text = serialize_config(&TrainConfig::default());
        text.push_str("seed = 7\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let mut text = serialize_config(&TrainConfig::default());
        text = text.replace("retained_density = 0.1", "retained_density = 0");
        assert!(parse_config(&text).is_err());
    }
}
