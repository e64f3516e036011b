//! Samples, the procedural camouflage generator, edge derivation and the
//! on-disk dataset layout (`Imgs/`, `GT/`, optional `Edge/` and `meta.tsv`).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{LgsanError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub h: usize,
    pub w: usize,
    /// Channel-major RGB in `[0, 1]`, length `3 * h * w`.
    pub image: Vec<f32>,
    pub mask: Vec<bool>,
    pub edge: Vec<bool>,
    pub category: String,
    pub prompt: String,
}

impl Sample {
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    /// Mean intensity inside minus outside the mask, averaged over channels.
    pub fn intensity_gap(&self) -> f64 {
        let hw = self.h * self.w;
        let (mut fg, mut bg, mut nf, mut nb) = (0.0, 0.0, 0.0f64, 0.0f64);
        for i in 0..hw {
            let v = (0..3).map(|c| self.image[c * hw + i] as f64).sum::<f64>() / 3.0;
            if self.mask[i] {
                fg += v;
                nf += 1.0;
            } else {
                bg += v;
                nb += 1.0;
            }
        }
        (fg / nf.max(1.0) - bg / nb.max(1.0)).abs()
    }
}

/// 3x3 morphological gradient: dilation XOR erosion, with the outside of the
/// image treated as background.
pub fn derive_edge_gt(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize && mask[r as usize * w + c as usize];
    let mut out = vec![false; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (mut any, mut all) = (false, true);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let v = at(r + dr, c + dc);
                    any |= v;
                    all &= v;
                }
            }
            out[r as usize * w + c as usize] = any && !all;
        }
    }
    out
}

pub const CATEGORIES: [&str; 8] = ["owl", "crab", "frog", "moth", "fish", "lizard", "spider", "seahorse"];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub size: usize,
    pub camo_strength: f64,
    pub seed: u64,
    pub prompt_template: String,
}

impl SyntheticSpec {
    pub fn new(n: usize, size: usize, camo_strength: f64, seed: u64) -> Self {
        Self { n, size, camo_strength, seed, prompt_template: "a photo of the camouflaged {category}".into() }
    }
}

/// Smooth value noise: a sum of octaves of bicubically-eased random lattices.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, base_cells: usize, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let mut amp = 1.0;
    let mut total = 0.0;
    for o in 0..octaves {
        let cells = base_cells << o;
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>() - 0.5).collect();
        let ease = |t: f64| t * t * (3.0 - 2.0 * t);
        for r in 0..size {
            let y = r as f64 / size as f64 * cells as f64;
            let (y0, ty) = (y.floor() as usize, ease(y.fract()));
            for c in 0..size {
                let x = c as f64 / size as f64 * cells as f64;
                let (x0, tx) = (x.floor() as usize, ease(x.fract()));
                let l = |yy: usize, xx: usize| lattice[yy * (cells + 1) + xx];
                let top = l(y0, x0) * (1.0 - tx) + l(y0, x0 + 1) * tx;
                let bot = l(y0 + 1, x0) * (1.0 - tx) + l(y0 + 1, x0 + 1) * tx;
                out[r * size + c] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        total += amp;
        amp *= 0.6;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Radial shape whose outline depends on the category.
fn shape_mask(rng: &mut ChaCha8Rng, size: usize, category_idx: usize, scale: f64) -> Vec<bool> {
    let s = size as f64;
    let (cy, cx) = (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s);
    let base = scale * s;
    let rot = rng.random_range(0.0..2.0 * PI);
    let family = category_idx % 4;
    let lobes = 3 + category_idx % 4;
    let aspect = rng.random_range(0.6..1.0);
    let harmonics: Vec<(f64, f64)> = (1..=3).map(|_| (rng.random_range(0.0..0.15), rng.random_range(0.0..2.0 * PI))).collect();
    let radius = |theta: f64| -> f64 {
        match family {
            0 => 1.0,
            1 => 1.0 + 0.35 * (lobes as f64 * theta).cos(),
            2 => 1.0 + harmonics.iter().enumerate().map(|(j, (a, p))| a * ((j + 2) as f64 * theta + p).cos()).sum::<f64>(),
            _ => 1.0 + 0.2 * (2.0 * theta).cos().abs(),
        }
    };
    let mut mask = vec![false; size * size];
    for r in 0..size {
        for c in 0..size {
            let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            let (ry, rx) = (dx * rot.sin() + dy * rot.cos(), dx * rot.cos() - dy * rot.sin());
            let (ry, rx) = (ry / aspect, rx);
            let d = (ry * ry + rx * rx).sqrt();
            mask[r * size + c] = d <= base * radius(ry.atan2(rx));
        }
    }
    mask
}

/// One procedural sample. Deterministic in `(spec.seed, index)`.
pub fn generate_sample(spec: &SyntheticSpec, index: usize) -> Sample {
    let size = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let cat_idx = rng.random_range(0..CATEGORIES.len());
    let category = CATEGORIES[cat_idx].to_string();

    let mut mask = Vec::new();
    for attempt in 0..20 {
        let scale = if attempt < 19 { rng.random_range(0.12..0.32) } else { 0.2 };
        let m = shape_mask(&mut rng, size, cat_idx, scale);
        let frac = m.iter().filter(|&&v| v).count() as f64 / (size * size) as f64;
        mask = m;
        if (0.02..=0.40).contains(&frac) {
            break;
        }
    }

    let tint: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..0.7)).collect();
    let contrast = rng.random_range(0.45..0.7);
    let cells = [2usize, 4][rng.random_range(0..2)];
    let bg_tex: Vec<Vec<f64>> = (0..2).map(|_| value_noise(&mut rng, size, cells, 4)).collect();
    let fg_tex: Vec<Vec<f64>> = (0..2).map(|_| value_noise(&mut rng, size, cells * 2, 4)).collect();
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let shift = (1.0 - spec.camo_strength) * 0.45 * sign;

    let hw = size * size;
    let mean_over = |tex: &[f64], inside: bool| -> f64 {
        let (s, n) = tex.iter().zip(&mask).filter(|(_, &m)| m == inside).fold((0.0f64, 0.0f64), |(s, n), (v, _)| (s + v, n + 1.0));
        s / n.max(1.0)
    };
    // Re-center the object texture on the background's mean over the same
    // region so only `shift` separates the two in brightness.
    let fg_offset: Vec<f64> = (0..2).map(|k| mean_over(&bg_tex[k], true) - mean_over(&fg_tex[k], true)).collect();

    let mut image = vec![0f32; 3 * hw];
    for i in 0..hw {
        let (a, b, off) = if mask[i] {
            (fg_tex[0][i] + fg_offset[0], fg_tex[1][i] + fg_offset[1], shift)
        } else {
            (bg_tex[0][i], bg_tex[1][i], 0.0)
        };
        for (c, t) in tint.iter().enumerate() {
            let mix = if c == 1 { 0.7 * a + 0.3 * b } else { a * (1.0 - 0.3 * c as f64) + b * 0.3 * c as f64 };
            let v = t + contrast * mix + off;
            image[c * hw + i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    let edge = derive_edge_gt(&mask, size, size);
    Sample {
        name: format!("syn_{index:05}"),
        h: size,
        w: size,
        image,
        mask,
        edge,
        prompt: spec.prompt_template.replace("{category}", &category),
        category,
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Vec<Sample> {
    (0..spec.n).map(|i| generate_sample(spec, i)).collect()
}

/// Deterministic split by index: the first `n - round(n * val_fraction)`
/// samples train, the rest validate.
pub fn split_train_val(samples: Vec<Sample>, val_fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n_val = (samples.len() as f64 * val_fraction).round() as usize;
    let mut train = samples;
    let val = train.split_off(train.len() - n_val.min(train.len()));
    (train, val)
}

/// The train/validation split a run configuration describes: the dataset
/// under `data.root` resized to `data.size`, or synthetic samples.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = match &cfg.data.root {
        Some(root) => load_cod_dataset(root, Some(cfg.data.size), &cfg.grounding.prompt_template)?.load_all()?,
        None => {
            let mut spec = SyntheticSpec::new(cfg.data.samples, cfg.data.size, cfg.data.camo_strength, cfg.data.seed);
            spec.prompt_template = cfg.grounding.prompt_template.clone();
            generate_synthetic(&spec)
        }
    };
    if samples.is_empty() {
        return Err(LgsanError::Data("dataset is empty".into()));
    }
    Ok(split_train_val(samples, cfg.data.val_fraction))
}

/// A stacked batch ready for the network.
#[derive(Debug, Clone)]
pub struct Batch {
    pub image: Tensor,
    pub mask: Tensor,
    pub edge: Tensor,
    pub prompts: Vec<String>,
}

pub fn make_batch(samples: &[&Sample], dtype: DType, device: &Device) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| LgsanError::Data("empty batch".into()))?;
    let (h, w) = (first.h, first.w);
    if samples.iter().any(|s| (s.h, s.w) != (h, w)) {
        return Err(LgsanError::Data("samples in a batch must share one size".into()));
    }
    let b = samples.len();
    let img: Vec<f32> = samples.iter().flat_map(|s| s.image.iter().copied()).collect();
    let to_f = |v: &[bool]| v.iter().map(|&x| if x { 1f32 } else { 0.0 }).collect::<Vec<_>>();
    let mask: Vec<f32> = samples.iter().flat_map(|s| to_f(&s.mask)).collect();
    let edge: Vec<f32> = samples.iter().flat_map(|s| to_f(&s.edge)).collect();
    Ok(Batch {
        image: Tensor::from_vec(img, (b, 3, h, w), device)?.to_dtype(dtype)?,
        mask: Tensor::from_vec(mask, (b, 1, h, w), device)?.to_dtype(dtype)?,
        edge: Tensor::from_vec(edge, (b, 1, h, w), device)?.to_dtype(dtype)?,
        prompts: samples.iter().map(|s| s.prompt.clone()).collect(),
    })
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> LgsanError {
    LgsanError::Data(format!("{}: {e}", path.display()))
}

fn mask_to_gray(mask: &[bool], h: usize, w: usize) -> GrayImage {
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([if mask[y as usize * w + x as usize] { 255 } else { 0 }]))
}

/// Writes `Imgs/`, `GT/`, `Edge/` and `meta.tsv` under `root`.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for d in ["Imgs", "GT", "Edge"] {
        std::fs::create_dir_all(root.join(d))?;
    }
    let mut meta = String::from("filename\tcategory\tprompt\n");
    for s in samples {
        let hw = s.h * s.w;
        let img: RgbImage = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
            let i = y as usize * s.w + x as usize;
            let px = |c: usize| (s.image[c * hw + i] * 255.0).round().clamp(0.0, 255.0) as u8;
            Rgb([px(0), px(1), px(2)])
        });
        let file = format!("{}.png", s.name);
        img.save(root.join("Imgs").join(&file)).map_err(|e| data_err(root, e))?;
        mask_to_gray(&s.mask, s.h, s.w).save(root.join("GT").join(&file)).map_err(|e| data_err(root, e))?;
        mask_to_gray(&s.edge, s.h, s.w).save(root.join("Edge").join(&file)).map_err(|e| data_err(root, e))?;
        meta.push_str(&format!("{}\t{}\t{}\n", file, s.category, s.prompt));
    }
    std::fs::write(root.join("meta.tsv"), meta)?;
    Ok(())
}

/// Category from a COD10K-style name such as `COD10K-CAM-1-Aquatic-3-Crab-32`.
pub fn category_from_filename(stem: &str) -> Option<String> {
    let parts: Vec<&str> = stem.split('-').collect();
    (parts.len() >= 7 && parts[0].starts_with("COD10K")).then(|| parts[5].to_lowercase())
}

#[derive(Debug, Clone)]
struct Entry {
    stem: String,
    image: PathBuf,
    gt: PathBuf,
    edge: Option<PathBuf>,
    category: String,
    prompt: Option<String>,
}

/// Lazily loaded dataset on disk.
#[derive(Debug, Clone)]
pub struct CodDataset {
    entries: Vec<Entry>,
    size: Option<usize>,
    template: String,
}

fn list_stems(dir: &Path, exts: &[&str]) -> Result<HashMap<String, PathBuf>> {
    let mut out = HashMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| data_err(dir, e))? {
        let p = e?.path();
        let ext = p.extension().and_then(|x| x.to_str()).map(str::to_lowercase);
        if ext.is_some_and(|x| exts.contains(&x.as_str())) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p.clone());
            }
        }
    }
    Ok(out)
}

/// Opens `root` with `Imgs/` and `GT/` holding files of matching stems.
/// `size` resizes every sample to a square of that side.
pub fn load_cod_dataset(root: &Path, size: Option<usize>, prompt_template: &str) -> Result<CodDataset> {
    let images = list_stems(&root.join("Imgs"), &["png", "jpg", "jpeg"])?;
    let gts = list_stems(&root.join("GT"), &["png"])?;
    let edges = if root.join("Edge").is_dir() { list_stems(&root.join("Edge"), &["png"])? } else { HashMap::new() };

    let mut meta: HashMap<String, (String, Option<String>)> = HashMap::new();
    let meta_path = root.join("meta.tsv");
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path)?;
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 {
                return Err(data_err(&meta_path, format!("line {}: expected filename<TAB>category[<TAB>prompt]", ln + 1)));
            }
            let stem = Path::new(cols[0]).file_stem().and_then(|s| s.to_str()).unwrap_or(cols[0]).to_string();
            meta.insert(stem, (cols[1].to_string(), cols.get(2).map(|s| s.to_string())));
        }
    }

    let mut stems: Vec<&String> = images.keys().collect();
    stems.sort();
    let mut orphans: Vec<String> = stems.iter().filter(|s| !gts.contains_key(**s)).map(|s| images[*s].display().to_string()).collect();
    orphans.extend(gts.keys().filter(|s| !images.contains_key(*s)).map(|s| gts[s].display().to_string()));
    if !orphans.is_empty() {
        orphans.sort();
        return Err(LgsanError::Data(format!("unpaired files: {}", orphans.join(", "))));
    }
    let entries = stems
        .into_iter()
        .map(|s| {
            let (category, prompt) = meta
                .get(s)
                .cloned()
                .unwrap_or_else(|| (category_from_filename(s).unwrap_or_else(|| "object".into()), None));
            Entry { stem: s.clone(), image: images[s].clone(), gt: gts[s].clone(), edge: edges.get(s).cloned(), category, prompt }
        })
        .collect();
    Ok(CodDataset { entries, size, template: prompt_template.to_string() })
}

impl CodDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.stem.as_str())
    }

    fn read_mask(&self, path: &Path) -> Result<(Vec<bool>, usize, usize)> {
        let mut g = image::open(path).map_err(|e| data_err(path, e))?.to_luma8();
        if let Some(s) = self.size {
            if g.dimensions() != (s as u32, s as u32) {
                g = image::imageops::resize(&g, s as u32, s as u32, image::imageops::FilterType::Nearest);
            }
        }
        let (w, h) = g.dimensions();
        Ok((g.pixels().map(|p| p.0[0] >= 128).collect(), h as usize, w as usize))
    }

    pub fn get(&self, i: usize) -> Result<Sample> {
        let e = self.entries.get(i).ok_or_else(|| LgsanError::Data(format!("index {i} out of range")))?;
        let mut rgb = image::open(&e.image).map_err(|err| data_err(&e.image, err))?.to_rgb8();
        if let Some(s) = self.size {
            if rgb.dimensions() != (s as u32, s as u32) {
                rgb = image::imageops::resize(&rgb, s as u32, s as u32, image::imageops::FilterType::Triangle);
            }
        }
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let (mask, mh, mw) = self.read_mask(&e.gt)?;
        if (mh, mw) != (h, w) {
            return Err(data_err(&e.gt, format!("mask is {mh}x{mw}, image is {h}x{w}")));
        }
        let edge = match &e.edge {
            Some(p) => {
                let (edge, eh, ew) = self.read_mask(p)?;
                if (eh, ew) != (h, w) {
                    return Err(data_err(p, "edge map size differs from image"));
                }
                edge
            }
            None => derive_edge_gt(&mask, h, w),
        };
        let hw = h * w;
        let mut image = vec![0f32; 3 * hw];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                image[c * hw + i] = p.0[c] as f32 / 255.0;
            }
        }
        Ok(Sample {
            name: e.stem.clone(),
            h,
            w,
            image,
            mask,
            edge,
            prompt: e.prompt.clone().unwrap_or_else(|| self.template.replace("{category}", &e.category)),
            category: e.category.clone(),
        })
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Binary mask from an 8-bit grayscale file, thresholded at 128.
pub fn read_binary_png(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let g = image::open(path).map_err(|e| data_err(path, e))?.to_luma8();
    let (w, h) = g.dimensions();
    Ok((g.pixels().map(|p| p.0[0] >= 128).collect(), h as usize, w as usize))
}

/// Grayscale file as values in `[0, 1]`.
pub fn read_gray_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let g = image::open(path).map_err(|e| data_err(path, e))?.to_luma8();
    let (w, h) = g.dimensions();
    Ok((g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(), h as usize, w as usize))
}
