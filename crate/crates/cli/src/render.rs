//! PNG output with provenance text chunks, and heatmap overlays.
//!
//! Heatmaps use the piecewise-linear "jet" map (blue at 0, red at 1) and are
//! blended over the input image with a fixed alpha of 0.5.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use lgsan::{LgsanError, Result};

pub const OVERLAY_ALPHA: f64 = 0.5;

pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f64| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8], meta: &[(String, String)]) -> Result<()> {
    let enc_err = |e: png::EncodingError| LgsanError::Data(format!("{}: {e}", path.display()));
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    for (k, v) in meta {
        enc.add_text_chunk(k.clone(), v.clone()).map_err(enc_err)?;
    }
    let mut writer = enc.write_header().map_err(enc_err)?;
    writer.write_image_data(data).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}

/// Grayscale map in `[0, 1]`, row-major.
pub fn save_gray(path: &Path, map: &[f64], w: usize, h: usize, meta: &[(String, String)]) -> Result<()> {
    let data: Vec<u8> = map.iter().map(|&v| to_u8(v)).collect();
    write_png(path, w, h, png::ColorType::Grayscale, &data, meta)
}

/// `rgb` is channel-major in `[0, 1]`, like a sample image.
pub fn save_overlay(path: &Path, rgb: &[f32], map: &[f64], w: usize, h: usize, meta: &[(String, String)]) -> Result<()> {
    let hw = w * h;
    let mut data = Vec::with_capacity(3 * hw);
    for (i, &v) in map.iter().enumerate() {
        let heat = jet(v);
        for c in 0..3 {
            data.push(to_u8((1.0 - OVERLAY_ALPHA) * rgb[c * hw + i] as f64 + OVERLAY_ALPHA * heat[c]));
        }
    }
    write_png(path, w, h, png::ColorType::Rgb, &data, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_endpoints_and_middle() {
        assert_eq!(jet(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(jet(0.5), [0.5, 1.0, 0.5]);
        assert_eq!(jet(1.0), [0.5, 0.0, 0.0]);
    }

    #[test]
    fn text_chunks_survive_a_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_gray(&p, &[0.0, 0.5, 1.0, 0.25], 2, 2, &[("seed".into(), "7".into())]).unwrap();
        let reader = png::Decoder::new(std::io::BufReader::new(File::open(&p).unwrap())).read_info().unwrap();
        let text = &reader.info().uncompressed_latin1_text;
        assert_eq!((text[0].keyword.as_str(), text[0].text.as_str()), ("seed", "7"));
    }
}
