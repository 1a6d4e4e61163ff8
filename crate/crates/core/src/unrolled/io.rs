//! Model parameter files: a line-oriented text format with hexadecimal
//! float encoding (IEEE-754 bit patterns), so round trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{AffineMap, LayerParams, ModelParams, H_M, H_W};
use crate::error::{Error, Result};

pub(crate) const MODEL_FORMAT: &str = "flowten-model 1";

pub(crate) fn hex_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub(crate) fn parse_hex_f64(s: &str) -> Result<f64> {
    let bits = u64::from_str_radix(s, 16)
        .map_err(|_| Error::format(format!("bad hex float {s:?}")))?;
    Ok(f64::from_bits(bits))
}

fn write_map(out: &mut String, name: &str, map: &AffineMap) {
    out.push_str(name);
    for w in &map.weights {
        out.push(' ');
        out.push_str(&hex_f64(*w));
    }
    out.push(' ');
    out.push_str(&hex_f64(map.bias));
    out.push('\n');
}

/// Serializes model parameters; see the module docs for the format.
pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MODEL_FORMAT);
    out.push('\n');
    out.push_str(&format!("layers {}\n", params.layers.len()));
    out.push_str(&format!("adaptive {}\n", params.adaptive));
    out.push_str(&format!("coupled {}\n", params.coupled));
    out.push_str(&format!("nonneg {}\n", params.nonneg));
    out.push_str(&format!("head_bound {}\n", hex_f64(params.head_bound)));
    match params.rank {
        Some(r) => out.push_str(&format!("rank {r}\n")),
        None => out.push_str("rank default\n"),
    }
    for (i, layer) in params.layers.iter().enumerate() {
        out.push_str(&format!("layer {i}\n"));
        out.push_str(&format!("log_lambda {}\n", hex_f64(layer.log_lambda)));
        match layer.log_nu {
            Some(v) => out.push_str(&format!("log_nu {}\n", hex_f64(v))),
            None => out.push_str("log_nu none\n"),
        }
        out.push_str(&format!("log_mu {}\n", hex_f64(layer.log_mu)));
        out.push_str(&format!("m_bias {}\n", hex_f64(layer.m_bias)));
        write_map(&mut out, "w_map", &layer.w_map);
        write_map(&mut out, "m_map", &layer.m_map);
    }
    fs::write(path, out)?;
    Ok(())
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    path: &'a Path,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.inner
            .next()
            .ok_or_else(|| Error::format(format!("{}: truncated model file", self.path.display())))
    }

    fn field(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap_or("");
        if head != key {
            return Err(Error::format(format!(
                "{}: expected {key:?}, found {head:?}",
                self.path.display()
            )));
        }
        Ok(toks.collect())
    }

    fn scalar(&mut self, key: &str) -> Result<&'a str> {
        let v = self.field(key)?;
        if v.len() != 1 {
            return Err(Error::format(format!(
                "{}: {key} expects one value",
                self.path.display()
            )));
        }
        Ok(v[0])
    }
}

fn parse_map(tokens: &[&str], n: usize, what: &str) -> Result<AffineMap> {
    if tokens.len() != n + 1 {
        return Err(Error::format(format!(
            "{what} expects {} values, found {}",
            n + 1,
            tokens.len()
        )));
    }
    let mut weights = Vec::with_capacity(n);
    for t in &tokens[..n] {
        weights.push(parse_hex_f64(t)?);
    }
    Ok(AffineMap {
        weights,
        bias: parse_hex_f64(tokens[n])?,
    })
}

/// Loads model parameters saved by [`save_model`].
pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    let mut lines = Lines {
        inner: text.lines(),
        path,
    };
    if lines.next_line()? != MODEL_FORMAT {
        return Err(Error::format(format!(
            "{}: not a model file (bad header)",
            path.display()
        )));
    }
    let n_layers: usize = lines
        .scalar("layers")?
        .parse()
        .map_err(|_| Error::format("bad layer count".to_string()))?;
    let parse_bool = |s: &str| -> Result<bool> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::format(format!("bad boolean {other:?}"))),
        }
    };
    let adaptive = parse_bool(lines.scalar("adaptive")?)?;
    let coupled = parse_bool(lines.scalar("coupled")?)?;
    let nonneg = parse_bool(lines.scalar("nonneg")?)?;
    let head_bound = parse_hex_f64(lines.scalar("head_bound")?)?;
    let rank = match lines.scalar("rank")? {
        "default" => None,
        s => Some(
            s.parse::<usize>()
                .map_err(|_| Error::format(format!("bad rank {s:?}")))?,
        ),
    };
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let idx = lines.scalar("layer")?;
        if idx != i.to_string() {
            return Err(Error::format(format!("layer index mismatch at {idx}")));
        }
        let log_lambda = parse_hex_f64(lines.scalar("log_lambda")?)?;
        let log_nu = match lines.scalar("log_nu")? {
            "none" => None,
            s => Some(parse_hex_f64(s)?),
        };
        let log_mu = parse_hex_f64(lines.scalar("log_mu")?)?;
        let m_bias = parse_hex_f64(lines.scalar("m_bias")?)?;
        let w_map = parse_map(&lines.field("w_map")?, H_W, "w_map")?;
        let m_map = parse_map(&lines.field("m_map")?, H_M, "m_map")?;
        layers.push(LayerParams {
            log_lambda,
            log_nu,
            log_mu,
            m_bias,
            w_map,
            m_map,
        });
    }
    Ok(ModelParams {
        layers,
        head_bound,
        adaptive,
        coupled,
        nonneg,
        rank,
    })
}
