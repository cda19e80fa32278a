//! Flat `key = value` training configuration files.
//!
//! ```text
//! # Spmotif-0.9
//! alpha = 0.5
//! beta = 0.1
//! gamma = 0.5
//! r = 0.2
//! r_s = 0.7
//! ```
//!
//! `#` and `;` start comments, `[section]` lines are ignored, unknown keys
//! are rejected. `r` is accepted as an alias of `r_aug`.

use std::fmt::Write as _;
use std::path::Path;

use crate::eda::LambdaPolicy;
use crate::error::{Error, Result};
use crate::trainer::{PredictionMode, TrainConfig};

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("{key}: cannot parse {value:?}")))
}

fn parse_lambda(value: &str) -> Result<LambdaPolicy> {
    let v = value.trim();
    if let Some(inner) = v.strip_prefix("uniform(").and_then(|s| s.strip_suffix(')')) {
        let (lo, hi) = inner
            .split_once(',')
            .ok_or_else(|| Error::Usage(format!("lambda: expected uniform(low,high), got {v:?}")))?;
        return Ok(LambdaPolicy::Uniform {
            low: parse("lambda", lo.trim())?,
            high: parse("lambda", hi.trim())?,
        });
    }
    if v == "uniform" {
        return Ok(LambdaPolicy::Uniform { low: 0.3, high: 0.7 });
    }
    Ok(LambdaPolicy::Fixed {
        value: parse("lambda", v)?,
    })
}

fn format_lambda(l: &LambdaPolicy) -> String {
    match *l {
        LambdaPolicy::Fixed { value } => format!("{value}"),
        LambdaPolicy::Uniform { low, high } => format!("uniform({low},{high})"),
    }
}

/// Sets one field by its file/flag name.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    match key.trim().replace('-', "_").as_str() {
        "alpha" => cfg.alpha = parse(key, value)?,
        "beta" => cfg.beta = parse(key, value)?,
        "gamma" => cfg.gamma = parse(key, value)?,
        "r" | "r_aug" => cfg.r_aug = parse(key, value)?,
        "r_s" => cfg.r_s = parse(key, value)?,
        "r_add" => cfg.r_add = parse(key, value)?,
        "lambda" => cfg.lambda = parse_lambda(value)?,
        "t" | "temperature" => cfg.temperature = parse(key, value)?,
        "t_final" | "temperature_final" => {
            cfg.temperature_final = match value {
                "" | "none" => None,
                v => Some(parse(key, v)?),
            }
        }
        "tau" => cfg.contrastive.tau = parse(key, value)?,
        "positive_keep_prob" => cfg.contrastive.positive_keep_prob = parse(key, value)?,
        "negative_keep_prob" => cfg.contrastive.negative_keep_prob = parse(key, value)?,
        "normalize" => cfg.contrastive.normalize = parse(key, value)?,
        "soft_membership" => cfg.contrastive.soft_membership = parse(key, value)?,
        "hidden" => cfg.hidden = parse(key, value)?,
        "layers" => cfg.layers = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "learning_rate" | "lr" => cfg.learning_rate = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "prediction" => {
            cfg.prediction = match value {
                "rationale" => PredictionMode::Rationale,
                "full-graph" | "full_graph" => PredictionMode::FullGraph,
                other => return Err(Error::Usage(format!("prediction: unknown mode {other:?}"))),
            }
        }
        other => return Err(Error::Usage(format!("unknown config key {other:?}"))),
    }
    Ok(())
}

/// Applies every line of `text` on top of `cfg`.
pub fn apply_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        apply(cfg, k, v).map_err(|e| match e {
            Error::Usage(m) => Error::Usage(format!("line {}: {m}", n + 1)),
            other => other,
        })?;
    }
    Ok(())
}

pub fn parse_text(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_text(&mut cfg, text)?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text)
}

/// Every field in the file format, so `parse_text(&render(c)) == c`.
pub fn render(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let c = &cfg.contrastive;
    let prediction = match cfg.prediction {
        PredictionMode::Rationale => "rationale",
        PredictionMode::FullGraph => "full-graph",
    };
    let t_final = cfg.temperature_final.map_or("none".to_string(), |t| t.to_string());
    let rows: [(&str, String); 21] = [
        ("alpha", cfg.alpha.to_string()),
        ("beta", cfg.beta.to_string()),
        ("gamma", cfg.gamma.to_string()),
        ("r_aug", cfg.r_aug.to_string()),
        ("r_s", cfg.r_s.to_string()),
        ("r_add", cfg.r_add.to_string()),
        ("lambda", format_lambda(&cfg.lambda)),
        ("temperature", cfg.temperature.to_string()),
        ("temperature_final", t_final),
        ("tau", c.tau.to_string()),
        ("positive_keep_prob", c.positive_keep_prob.to_string()),
        ("negative_keep_prob", c.negative_keep_prob.to_string()),
        ("normalize", c.normalize.to_string()),
        ("soft_membership", c.soft_membership.to_string()),
        ("hidden", cfg.hidden.to_string()),
        ("layers", cfg.layers.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("seed", cfg.seed.to_string()),
        ("prediction", prediction.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_row_is_accepted() {
        let cfg = parse_text("[spmotif-0.9]\nalpha=0.5\nbeta = 0.1 # prse\ngamma=0.5\nr=0.2\nr_s=0.7\n").unwrap();
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = TrainConfig {
            alpha: 0.25,
            temperature_final: Some(0.3),
            lambda: LambdaPolicy::Uniform { low: 0.3, high: 0.7 },
            prediction: PredictionMode::FullGraph,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        cfg.contrastive.tau = 0.2;
        assert_eq!(parse_text(&render(&cfg)).unwrap(), cfg);
        assert_eq!(parse_text(&render(&TrainConfig::default())).unwrap(), TrainConfig::default());
    }

    #[test]
    fn bad_input_is_a_usage_error() {
        for text in ["nonsense", "alpha = x", "colour = red", "prediction = maybe"] {
            assert!(matches!(parse_text(text), Err(Error::Usage(_))), "{text}");
        }
    }
}
