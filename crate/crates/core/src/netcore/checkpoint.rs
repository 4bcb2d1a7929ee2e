//! Plain-text parameter checkpoints.
//!
//! ```text
//! pwflow-mlp 1
//! widths 5 64 64 64 2
//! activation silu
//! seed 7
//! # any number of comment lines
//! values 8770
//! <one value per line>
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so loading restores the
//! exact bits.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{MlpParams, MlpSpec};

const MAGIC: &str = "pwflow-mlp 1";

pub fn to_text(params: &MlpParams, comments: &[String]) -> String {
    let spec = params.spec();
    let widths: Vec<String> = spec.layer_widths.iter().map(|w| w.to_string()).collect();
    let mut out = format!(
        "{MAGIC}\nwidths {}\nactivation {}\nseed {}\n",
        widths.join(" "),
        spec.activation,
        spec.seed
    );
    for c in comments {
        for line in c.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(&format!("values {}\n", params.len()));
    for v in params.values() {
        out.push_str(&format!("{v:?}\n"));
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_text(text: &str) -> Result<MlpParams> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(bad("missing checkpoint header"));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing '{name}'")))?;
        line.strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .map(|r| r.trim().to_string())
            .ok_or_else(|| bad(format!("expected '{name}', got '{line}'")))
    };
    let layer_widths = field("widths")?
        .split_whitespace()
        .map(|w| w.parse::<usize>().map_err(|e| bad(format!("width: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let activation = field("activation")?.parse()?;
    let seed = field("seed")?
        .parse::<u64>()
        .map_err(|e| bad(format!("seed: {e}")))?;
    let count = field("values")?
        .parse::<usize>()
        .map_err(|e| bad(format!("value count: {e}")))?;
    let values = lines
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("value '{l}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != count {
        return Err(bad(format!(
            "expected {count} values, found {}",
            values.len()
        )));
    }
    let spec = MlpSpec::new(layer_widths, activation, seed)?;
    MlpParams::from_values(spec, values)
}

pub fn save_checkpoint(path: &Path, params: &MlpParams, comments: &[String]) -> Result<()> {
    fs::write(path, to_text(params, comments))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_params, Activation};

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = MlpSpec::new(vec![5, 9, 2], Activation::Silu, 77).unwrap();
        let p = init_params(&spec).unwrap();
        let text = to_text(&p, &["method ota\nstages 4".to_string()]);
        let q = from_text(&text).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_text("hello").is_err());
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu, 0).unwrap();
        let p = init_params(&spec).unwrap();
        let text = to_text(&p, &[]).replace("values 2", "values 3");
        assert!(from_text(&text).is_err());
    }
}
