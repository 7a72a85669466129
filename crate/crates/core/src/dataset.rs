//! Manifest ingestion, mask and media I/O, and prediction persistence.

use std::collections::HashMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryMask, LabelGrid, ModelError, VideoSample};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: manifest parse error at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("cannot decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("{0}: image has zero width or height")]
    ShapeZero(String),
    #[error("{0}")]
    Sample(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn decode_err(path: &str, message: impl ToString) -> DatasetError {
    DatasetError::Decode {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub frames: Vec<String>,
    pub audio_segments: Vec<String>,
    #[serde(default)]
    pub gt_masks: Option<Vec<String>>,
    #[serde(default)]
    pub clip_label: Option<String>,
}

/// JSON manifest: `{"dataset": .., "samples": [..]}`. Paths are relative to
/// the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: String,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub dataset: String,
    pub samples: Vec<VideoSample>,
    pub warnings: Vec<String>,
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &String| -> Result<PathBuf, DatasetError> {
        let full = base.join(p);
        if full.is_file() {
            Ok(full)
        } else {
            Err(DatasetError::MissingFile(full.display().to_string()))
        }
    };
    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut warnings = Vec::new();
    for s in &manifest.samples {
        let mut sample = VideoSample {
            id: s.id.clone(),
            frames: s.frames.iter().map(resolve).collect::<Result<_, _>>()?,
            audio_segments: s.audio_segments.iter().map(resolve).collect::<Result<_, _>>()?,
            gt_masks: s
                .gt_masks
                .as_ref()
                .map(|g| g.iter().map(resolve).collect::<Result<_, _>>())
                .transpose()?,
            clip_label: s.clip_label.clone(),
        };
        for w in sample.normalize()? {
            tracing::warn!("{w}");
            warnings.push(w);
        }
        samples.push(sample);
    }
    Ok(LoadedManifest {
        dataset: manifest.dataset,
        samples,
        warnings,
    })
}

/// Reads a label image. Indexed PNGs yield palette indices, grayscale
/// yields raw values, and true-colour images number each distinct non-black
/// colour from 1 in order of first appearance (black stays 0).
pub fn load_mask(path: &Path) -> Result<LabelGrid, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_label_png(&bytes, &path.display().to_string())
}

pub fn decode_label_png(bytes: &[u8], origin: &str) -> Result<LabelGrid, DatasetError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(origin, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(origin, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(origin, e))?;
    let (w, h) = (info.width, info.height);
    if w == 0 || h == 0 {
        return Err(DatasetError::ShapeZero(origin.to_string()));
    }
    let bits = info.bit_depth as usize;
    let channels = info.color_type.samples();
    let mut labels = Vec::with_capacity(w as usize * h as usize);
    for row in buf.chunks(info.line_size).take(h as usize) {
        match bits {
            1 | 2 | 4 => {
                let per_byte = 8 / bits;
                let mask = (1u8 << bits) - 1;
                for x in 0..w as usize {
                    let byte = row[x / per_byte];
                    let shift = 8 - bits * (x % per_byte + 1);
                    labels.push(((byte >> shift) & mask) as u32);
                }
            }
            8 => labels.extend(row.chunks(channels).take(w as usize).map(|px| pixel_key(px))),
            16 => labels.extend(row.chunks(2 * channels).take(w as usize).map(|px| {
                let wide: Vec<u32> = px
                    .chunks(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
                    .collect();
                pack16(&wide)
            })),
            _ => return Err(decode_err(origin, "unsupported bit depth")),
        }
    }
    let labels = match info.color_type {
        png::ColorType::Rgb | png::ColorType::Rgba => index_colours(&labels),
        _ => labels,
    };
    Ok(LabelGrid {
        height: h,
        width: w,
        labels,
    })
}

// Grey and indexed images use the first sample; colour images are packed so
// that distinct colours stay distinct before re-indexing.
fn pixel_key(px: &[u8]) -> u32 {
    match px.len() {
        1 | 2 => px[0] as u32,
        _ => u32::from_be_bytes([0, px[0], px[1], px[2]]),
    }
}

fn pack16(px: &[u32]) -> u32 {
    match px.len() {
        1 | 2 => px[0],
        _ => (px[0] >> 8) << 16 | (px[1] >> 8) << 8 | (px[2] >> 8),
    }
}

fn index_colours(keys: &[u32]) -> Vec<u32> {
    let mut ids: HashMap<u32, u32> = HashMap::new();
    keys.iter()
        .map(|&k| {
            if k == 0 {
                return 0;
            }
            let next = ids.len() as u32 + 1;
            *ids.entry(k).or_insert(next)
        })
        .collect()
}

/// Threshold used when reading 8-bit prediction masks.
pub const MASK_THRESHOLD: u32 = 128;

pub fn threshold_grid(grid: &LabelGrid) -> Result<BinaryMask, DatasetError> {
    let bits = grid
        .labels
        .iter()
        .map(|&v| (v >= MASK_THRESHOLD) as u8)
        .collect();
    Ok(BinaryMask::from_bits(grid.height, grid.width, bits)?)
}

/// Encodes a mask as a single-channel 8-bit PNG with values 0/255.
pub fn mask_to_png(mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width(), mask.height());
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        let data: Vec<u8> = mask.bits().iter().map(|&b| b * 255).collect();
        writer.write_image_data(&data).expect("in-memory png data");
    }
    out
}

/// Decodes a 0/255 mask PNG, thresholding at 128.
pub fn mask_from_png(bytes: &[u8], origin: &str) -> Result<BinaryMask, DatasetError> {
    threshold_grid(&decode_label_png(bytes, origin)?)
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, mask_to_png(mask)).map_err(io_err(path))
}

/// A decoded frame, re-encoded as PNG for transport.
#[derive(Debug, Clone)]
pub struct FrameImage {
    pub width: u32,
    pub height: u32,
    pub png: Vec<u8>,
}

impl FrameImage {
    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .expect("in-memory png encode");
        Self {
            width: img.width(),
            height: img.height(),
            png,
        }
    }
}

pub fn load_frame(path: &Path) -> Result<FrameImage, DatasetError> {
    let origin = path.display().to_string();
    let img = image::open(path).map_err(|e| decode_err(&origin, e))?.to_rgb8();
    if img.width() == 0 || img.height() == 0 {
        return Err(DatasetError::ShapeZero(origin));
    }
    Ok(FrameImage::from_rgb(&img))
}

/// Frame dimensions from PNG bytes, without a full decode.
pub fn png_dims(bytes: &[u8]) -> Result<(u32, u32), DatasetError> {
    let reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| decode_err("<image>", e))?;
    let info = reader.info();
    Ok((info.height, info.width))
}

/// Audio segment bytes, passed through unchanged. The warning is set when
/// the file is not 16-bit 16 kHz mono.
pub fn load_audio(path: &Path) -> Result<(Vec<u8>, Option<String>), DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let origin = path.display().to_string();
    let spec = hound::WavReader::new(Cursor::new(&bytes))
        .map_err(|e| decode_err(&origin, e))?
        .spec();
    let canonical = spec.channels == 1
        && spec.sample_rate == 16_000
        && spec.bits_per_sample == 16
        && spec.sample_format == hound::SampleFormat::Int;
    let warning = (!canonical).then(|| {
        format!(
            "{origin}: audio is {} ch / {} Hz / {} bit, expected mono 16 kHz 16-bit; sent as is",
            spec.channels, spec.sample_rate, spec.bits_per_sample
        )
    });
    Ok((bytes, warning))
}

/// Frame with the mask blended in at 50% with a red tint.
pub fn overlay(frame: &FrameImage, mask: &BinaryMask) -> Result<RgbImage, DatasetError> {
    let mut img = image::load_from_memory_with_format(&frame.png, ImageFormat::Png)
        .map_err(|e| decode_err("<frame>", e))?
        .to_rgb8();
    for (x, y, px) in img.enumerate_pixels_mut() {
        if mask.get(y, x) {
            let tint = [255u16, 0, 0];
            for c in 0..3 {
                px.0[c] = ((px.0[c] as u16 + tint[c]) / 2) as u8;
            }
        }
    }
    Ok(img)
}

pub fn prediction_path(out: &Path, video_id: &str, frame_index: usize) -> PathBuf {
    out.join(video_id).join(format!("{frame_index:05}.png"))
}

/// Builds a manifest from a directory tree laid out as
/// `<root>/<video>/frames/*`, `<root>/<video>/audio/*.wav` and optional
/// `<root>/<video>/labels/*.png`, each sorted by file name.
pub fn convert_directory(root: &Path, dataset: &str) -> Result<Manifest, DatasetError> {
    let list = |dir: &Path, exts: &[&str]| -> Result<Vec<String>, DatasetError> {
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        Ok(files
            .iter()
            .map(|p| {
                p.strip_prefix(root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/")
            })
            .collect())
    };
    let mut videos: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    videos.sort();
    let mut samples = Vec::new();
    for v in videos {
        let id = v.file_name().unwrap_or_default().to_string_lossy().to_string();
        let frames = list(&v.join("frames"), &["png", "jpg", "jpeg"])?;
        let audio = list(&v.join("audio"), &["wav"])?;
        if frames.is_empty() || audio.is_empty() {
            tracing::warn!("skipping `{id}`: no frames or no audio");
            continue;
        }
        let labels = list(&v.join("labels"), &["png"])?;
        samples.push(ManifestSample {
            id,
            frames,
            audio_segments: audio,
            gt_masks: (!labels.is_empty()).then_some(labels),
            clip_label: None,
        });
    }
    Ok(Manifest {
        dataset: dataset.to_string(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, palette: Option<Vec<u8>>, data: &[u8]) {
        let file = fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        enc.write_header().unwrap().write_image_data(data).unwrap();
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BinaryMask::zeros(3, 4);
        m.set(0, 0, true);
        m.set(1, 2, true);
        m.set(2, 3, true);
        let p = dir.path().join("m.png");
        save_mask(&m, &p).unwrap();
        let grid = load_mask(&p).unwrap();
        assert_eq!(grid.labels.iter().filter(|&&v| v == 255).count(), 3);
        assert_eq!(threshold_grid(&grid).unwrap(), m);
    }

    #[test]
    fn palette_png_yields_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pal.png");
        // palette: 0 black, 1 red, 2 green, 3 blue
        let palette = vec![0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255];
        write_png(&p, 3, 2, png::ColorType::Indexed, png::BitDepth::Eight, Some(palette.clone()), &[0, 1, 2, 3, 0, 2]);
        assert_eq!(load_mask(&p).unwrap(), LabelGrid::from_rows(&[&[0, 1, 2], &[3, 0, 2]]));

        // 2-bit packed indices: row [3,1,0] -> 0b11_01_00_00
        let p4 = dir.path().join("pal2.png");
        write_png(&p4, 3, 1, png::ColorType::Indexed, png::BitDepth::Two, Some(palette), &[0b1101_0000]);
        assert_eq!(load_mask(&p4).unwrap(), LabelGrid::from_rows(&[&[3, 1, 0]]));
    }

    #[test]
    fn rgb_png_numbers_colours() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let red = [200, 0, 0];
        let blue = [0, 0, 90];
        let black = [0, 0, 0];
        let data: Vec<u8> = [black, blue, red, blue].concat();
        write_png(&p, 2, 2, png::ColorType::Rgb, png::BitDepth::Eight, None, &data);
        assert_eq!(load_mask(&p).unwrap(), LabelGrid::from_rows(&[&[0, 1], &[2, 1]]));
    }

    #[test]
    fn truncated_png_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        let bytes = mask_to_png(&BinaryMask::zeros(8, 8));
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_mask(&p), Err(DatasetError::Decode { .. })));
    }

    #[test]
    fn overlay_tints_foreground() {
        let img = RgbImage::from_pixel(2, 1, image::Rgb([100, 100, 100]));
        let frame = FrameImage::from_rgb(&img);
        let mask = BinaryMask::from_rows(&[&[1, 0]]).unwrap();
        let out = overlay(&frame, &mask).unwrap();
        assert_eq!(out.get_pixel(0, 0).0, [177, 50, 50]);
        assert_eq!(out.get_pixel(1, 0).0, [100, 100, 100]);
    }

    #[test]
    fn frame_dims_from_png() {
        let frame = FrameImage::from_rgb(&RgbImage::new(7, 5));
        assert_eq!(png_dims(&frame.png).unwrap(), (5, 7));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn png_round_trip_identity(h in 1u32..=512, w in 1u32..=512, seed in any::<u64>()) {
                let mut s = seed | 1;
                let bits: Vec<u8> = (0..h * w).map(|_| {
                    s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                    (s & 1) as u8
                }).collect();
                let m = BinaryMask::from_bits(h, w, bits).unwrap();
                prop_assert_eq!(mask_from_png(&mask_to_png(&m), "mem").unwrap(), m);
            }
        }
    }
}
