//! Result files: `metrics.json`, the Table-2-shaped `tables.csv`, and
//! per-frame image dumps.
//!
//! `metrics.json` is a JSON array of [`MetricsRecord`] objects with mIoU
//! values as fractions. `tables.csv` reports mIoU ×100, MBpf with three
//! decimals and CE with two; a missing CE is written as `-`.

use std::fmt::Write as _;
use std::path::Path;

use dcpnet_core::{ClassMask, Tensor};

use crate::error::{Error, Result};
use crate::eval::MetricsRecord;
use crate::pnm::{image_to_ppm, mask_to_pgm, mask_to_ppm, write_pnm};

pub const TABLE_HEADER: &str = "Type,Method,Noisy,Normal,Avg.,Comm. Cost,CE";

/// One frame to dump as images.
#[derive(Clone, Debug)]
pub struct FrameDump {
    pub index: u64,
    pub view: Tensor,
    pub truth: ClassMask,
    pub prediction: ClassMask,
}

pub fn table_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in records {
        let ce = r.ce.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2},{:.3},{}",
            r.group,
            r.method,
            100.0 * r.noisy,
            100.0 * r.normal,
            100.0 * r.avg,
            r.comm_cost_mbpf,
            ce
        );
    }
    out
}

/// Write `metrics.json`, `tables.csv` and, for every dump,
/// `frames/frame-NNNNN-{view.ppm,truth.pgm,pred.pgm,pred.ppm}`.
pub fn emit_report(records: &[MetricsRecord], dumps: &[FrameDump], classes: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(records)?;
    let path = dir.join("metrics.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("tables.csv");
    std::fs::write(&path, table_csv(records)).map_err(|e| Error::io(&path, e))?;
    if dumps.is_empty() {
        return Ok(());
    }
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    for d in dumps {
        let stem = format!("frame-{:05}", d.index);
        write_pnm(&image_to_ppm(&d.view)?, &frames.join(format!("{stem}-view.ppm")))?;
        write_pnm(&mask_to_pgm(&d.truth, classes)?, &frames.join(format!("{stem}-truth.pgm")))?;
        write_pnm(&mask_to_pgm(&d.prediction, classes)?, &frames.join(format!("{stem}-pred.pgm")))?;
        write_pnm(&mask_to_ppm(&d.prediction), &frames.join(format!("{stem}-pred.ppm")))?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
