//! `key = value` configuration files.

use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::train::TrainConfig;

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        detail: format!("invalid value `{v}` for `{key}`"),
    })
}

fn parse_flag(line: usize, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(Error::Parse {
            line,
            detail: format!("invalid flag `{other}`"),
        }),
    }
}

/// Applies every `key = value` line of `text` on top of `base`.
pub fn apply_config(base: TrainConfig, text: &str) -> Result<TrainConfig> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            detail: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let wrap = |e: Error| match e {
            Error::Config(detail) => Error::Parse { line, detail },
            other => other,
        };
        match key {
            "mode" => cfg.mode = value.parse().map_err(wrap)?,
            "head" => cfg.head = value.parse::<HeadKind>().map_err(wrap)?,
            "optimizer" => cfg.optimizer = value.parse().map_err(wrap)?,
            "alpha" => cfg.alpha = parse_value(line, key, value)?,
            "iterations" => cfg.iterations = parse_value(line, key, value)?,
            "inner_steps" => cfg.inner_steps = parse_value(line, key, value)?,
            "ft_reg_weight" => cfg.ft_reg_weight = parse_value(line, key, value)?,
            "ft_init_gamma" => cfg.ft_init_gamma = parse_value(line, key, value)?,
            "ft_init_beta" => cfg.ft_init_beta = parse_value(line, key, value)?,
            "way" => cfg.n_way = parse_value(line, key, value)?,
            "shot" => cfg.n_shot = parse_value(line, key, value)?,
            "query" => cfg.n_query = parse_value(line, key, value)?,
            "seed" => cfg.master_seed = parse_value(line, key, value)?,
            "encoder_widths" => {
                cfg.encoder_widths = value
                    .split(',')
                    .map(|w| parse_value(line, key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "ft_blocks" => {
                cfg.ft_blocks = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|f| parse_flag(line, f)).collect::<Result<_>>()?
                }
            }
            other => {
                return Err(Error::Parse {
                    line,
                    detail: format!("unknown key `{other}`"),
                })
            }
        }
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    apply_config(TrainConfig::default(), text)
}

/// Text form that [`parse_config`] reads back to an equal config.
pub fn config_to_text(cfg: &TrainConfig) -> String {
    let join = |v: Vec<String>| v.join(",");
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("mode", cfg.mode.to_string());
    kv("head", cfg.head.to_string());
    // {:?} on f64 prints the shortest string that round-trips
    kv("alpha", format!("{:?}", cfg.alpha));
    kv("iterations", cfg.iterations.to_string());
    kv("inner_steps", cfg.inner_steps.to_string());
    kv("ft_reg_weight", format!("{:?}", cfg.ft_reg_weight));
    kv("ft_init_gamma", format!("{:?}", cfg.ft_init_gamma));
    kv("ft_init_beta", format!("{:?}", cfg.ft_init_beta));
    kv("way", cfg.n_way.to_string());
    kv("shot", cfg.n_shot.to_string());
    kv("query", cfg.n_query.to_string());
    kv("seed", cfg.master_seed.to_string());
    kv("optimizer", cfg.optimizer.to_string());
    kv("encoder_widths", join(cfg.encoder_widths.iter().map(|w| w.to_string()).collect()));
    kv("ft_blocks", join(cfg.ft_blocks.iter().map(|f| f.to_string()).collect()));
    s
}
