//! Classifier checkpoint files.
//!
//! ```text
//! FLTRIGGER-CHECKPOINT 1
//! input <height> <width> <channels>
//! hidden <w1>,<w2>,...        (empty list written as "hidden -")
//! classes <C>
//! layout <sha256 of Layout::describe(), lowercase hex>
//! values <count>
//! <blank line>
//! <count little-endian f64 values>
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Classifier, ClassifierSpec, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "FLTRIGGER-CHECKPOINT 1";

fn layout_digest(spec: &ClassifierSpec) -> String {
    let digest = Sha256::digest(spec.mlp().layout().describe().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint(model: &Classifier) -> Vec<u8> {
    let spec = model.spec();
    let hidden = if spec.hidden.is_empty() {
        "-".to_string()
    } else {
        spec.hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let params = model.flatten();
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\ninput {} {} {}\nhidden {hidden}\nclasses {}\nlayout {}\nvalues {}\n\n",
        spec.height,
        spec.width,
        spec.channels,
        spec.classes,
        layout_digest(spec),
        params.len()
    )
    .into_bytes();
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Classifier> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("missing header terminator"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let body = &bytes[split + 2..];
    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("bad magic line"));
    }
    let mut field = |key: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(bad(format!("expected `{key}` line, got `{line}`")));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number `{s}`")));

    let input = field("input")?;
    if input.len() != 3 {
        return Err(bad("input needs three extents"));
    }
    let hidden_raw = field("hidden")?;
    let hidden = match hidden_raw.as_slice() {
        [h] if h == "-" => vec![],
        [h] => h.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("malformed hidden line")),
    };
    let classes = num(field("classes")?.first().ok_or_else(|| bad("classes"))?)?;
    let spec = ClassifierSpec {
        height: num(&input[0])?,
        width: num(&input[1])?,
        channels: num(&input[2])?,
        hidden,
        classes,
    };
    let digest = field("layout")?;
    if digest.first().map(String::as_str) != Some(layout_digest(&spec).as_str()) {
        return Err(bad("layout digest does not match spec"));
    }
    let count = num(field("values")?.first().ok_or_else(|| bad("values"))?)?;
    if body.len() != count * 8 {
        return Err(bad(format!(
            "expected {} value bytes, found {}",
            count * 8,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Classifier::unflatten(&spec, ParamVector::new(values))
}

pub fn save_checkpoint(model: &Classifier, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
