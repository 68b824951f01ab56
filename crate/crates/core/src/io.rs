//! Round CSV and PGM writers.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flcore::RoundRecord;

pub const CSV_HEADER: &str = "round,ma,asr,n_removed,removed_ids,wall_ms";

fn metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Renders the CSV text: header plus one line per record. Metrics are
/// fractions with six decimals; unevaluated rounds leave them empty.
pub fn render_round_csv(records: &[RoundRecord]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let ids: Vec<String> = r.removed.iter().map(|id| id.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round,
            metric(r.ma),
            metric(r.asr),
            r.removed.len(),
            ids.join(";"),
            r.wall_ms
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_round_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    std::fs::write(path, render_round_csv(records)).map_err(|e| Error::io(path, e))
}

/// Binary P5 bytes for an `H × W` or `H × W × 1` image in `[0, 1]`.
pub fn encode_pgm(image: &[f64], height: usize, width: usize, channels: usize) -> Result<Vec<u8>> {
    if channels != 1 {
        return Err(Error::InvalidArgument(format!(
            "PGM needs a single-channel image, got {channels} channels"
        )));
    }
    if image.len() != height * width {
        return Err(Error::Shape(format!(
            "{} pixels for a {height}x{width} image",
            image.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &p in image {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("pixel {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn dump_pgm(image: &[f64], shape: (usize, usize, usize), path: &Path) -> Result<()> {
    let bytes = encode_pgm(image, shape.0, shape.1, shape.2)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
