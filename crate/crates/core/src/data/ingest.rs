//! Image-directory ingestion driven by a `path,u,s` label table.

use std::path::Path;

use image::imageops::FilterType;
use serde::Deserialize;

use super::dataset::{Features, LabeledDataset};
use crate::error::{Error, Result};

/// Side length images are resized to on ingestion.
pub const INGEST_SIDE: u32 = 64;

#[derive(Deserialize)]
struct Row {
    path: String,
    u: usize,
    s: usize,
}

/// Reads the CSV label table at `table` (header `path,u,s`; paths relative
/// to the table's directory), loads each image as RGB and resizes it to
/// 64×64. Alphabet sizes are one more than the largest label seen, with a
/// minimum of two.
pub fn ingest_image_table(table: &Path) -> Result<LabeledDataset> {
    let base = table.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(table).map_err(|e| Error::LabelTable(e.to_string()))?;
    let side = INGEST_SIDE as usize;
    let (mut pixels, mut u, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::LabelTable(format!("row {}: {e}", line + 1)))?;
        let path = base.join(&row.path);
        let img = image::open(&path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.resize_exact(INGEST_SIDE, INGEST_SIDE, FilterType::Triangle).to_rgb8();
        pixels.extend_from_slice(rgb.as_raw());
        u.push(row.u);
        s.push(row.s);
    }
    if u.is_empty() {
        return Err(Error::LabelTable("no rows".into()));
    }
    let n_u = (u.iter().max().unwrap() + 1).max(2);
    let n_s = (s.iter().max().unwrap() + 1).max(2);
    LabeledDataset::new(Features::Image { height: side, width: side, channels: 3, pixels }, u, s, n_u, n_s)
}
