//! Procedural two-domain texture benchmark.
//!
//! Every class is a band-limited sinusoid texture pushed through a color
//! ramp, plus per-pixel grain. Classes pair up on color and differ in
//! texture, so neither cue alone separates them. Domain A is rendered clean;
//! domain B applies `degrade` (blur, hue rotation, gain, vignette, noise) to
//! the clean render of its own fragments, scaled by one `shift_strength`
//! knob. A third, generic texture task serves as backbone pretraining data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::augment::gaussian_blur_chw;
use crate::data::manifest::{write_manifest, DatasetTag, ImageRecord, View, GENERIC_CLASSES};
use crate::data::raster::RgbImage;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    pub color_lo: [f64; 3],
    pub color_hi: [f64; 3],
    /// Spatial frequency band in cycles per pixel.
    pub freq: (f64, f64),
    /// Dominant wave direction in radians; `None` draws each wave's direction uniformly.
    pub orientation: Option<f64>,
    pub grain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub image_edge: usize,
    pub fragments_per_class_view: usize,
    /// Domain B degradation scale. The default is the smallest positive value on the
    /// calibration grid where two-step beats scratch on B by 0.05 (`stage-transfer calibrate`).
    pub shift_strength: f64,
    pub textures: Vec<ClassTexture>,
    /// Images per generic class and their edge (one image per fragment).
    pub generic_per_class: usize,
    pub generic_edge: usize,
}

const BROWN: ([f64; 3], [f64; 3]) = ([0.36, 0.22, 0.12], [0.66, 0.46, 0.26]);
const CREAM: ([f64; 3], [f64; 3]) = ([0.70, 0.62, 0.40], [0.95, 0.88, 0.66]);
const GREY: ([f64; 3], [f64; 3]) = ([0.44, 0.42, 0.38], [0.74, 0.70, 0.62]);

impl Default for SynthSpec {
    fn default() -> Self {
        let tex = |c: ([f64; 3], [f64; 3]), freq, orientation, grain| ClassTexture {
            color_lo: c.0,
            color_hi: c.1,
            freq,
            orientation,
            grain,
        };
        Self {
            image_edge: 64,
            fragments_per_class_view: 20,
            shift_strength: 0.1,
            textures: vec![
                tex(BROWN, (0.03, 0.06), None, 0.02),
                tex(BROWN, (0.15, 0.25), None, 0.04),
                tex(CREAM, (0.04, 0.07), Some(0.0), 0.02),
                tex(CREAM, (0.09, 0.13), None, 0.09),
                tex(GREY, (0.09, 0.13), Some(PI / 2.0), 0.03),
                tex(GREY, (0.03, 0.06), None, 0.02),
            ],
            generic_per_class: 60,
            generic_edge: 32,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.textures.len() != DatasetTag::A.class_keys().len() {
            return Err(Error::Config(format!(
                "synthetic spec has {} class textures; the pipeline expects {}",
                self.textures.len(),
                DatasetTag::A.class_keys().len()
            )));
        }
        if self.image_edge < 8 || self.fragments_per_class_view == 0 || self.generic_edge < 8 {
            return Err(Error::Config("synthetic spec sizes too small".into()));
        }
        if !(self.shift_strength >= 0.0) {
            return Err(Error::Config(format!("shift strength {} must be non-negative", self.shift_strength)));
        }
        Ok(())
    }

    /// Images of fragment `j`: 1 to 4 in rotation.
    pub fn images_in_fragment(j: usize) -> usize {
        1 + j % 4
    }

    pub fn rows_per_domain(&self) -> usize {
        let per_view: usize = (0..self.fragments_per_class_view).map(Self::images_in_fragment).sum();
        per_view * 2 * self.textures.len()
    }
}

/// Per-fragment appearance jitter shared by all its images.
#[derive(Debug, Clone, Copy)]
struct FragmentLatent {
    color_shift: [f64; 3],
    freq_scale: f64,
    angle_jitter: f64,
}

/// Parameters `degrade` drew for one domain-B image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub image_id: String,
    pub blur_sigma: f64,
    pub hue_shift_deg: f64,
    pub gain: f64,
    pub vignette: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub spec: SynthSpec,
    pub seed: u64,
    pub a: Vec<ImageRecord>,
    pub b: Vec<ImageRecord>,
    pub degradations: Vec<Degradation>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn fragment_latent(rng: &mut ChaCha8Rng) -> FragmentLatent {
    FragmentLatent {
        color_shift: [uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05)],
        freq_scale: uniform(rng, 0.9, 1.1),
        angle_jitter: uniform(rng, -0.2, 0.2),
    }
}

/// Clean CHW render in [0, 1].
fn render_clean(tex: &ClassTexture, latent: &FragmentLatent, view: View, edge: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const WAVES: usize = 6;
    let waves: Vec<(f64, f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            let f = uniform(rng, tex.freq.0, tex.freq.1) * latent.freq_scale;
            let theta = match tex.orientation {
                Some(o) => o + latent.angle_jitter + uniform(rng, -0.25, 0.25),
                None => uniform(rng, 0.0, PI),
            };
            (2.0 * PI * f * theta.cos(), 2.0 * PI * f * theta.sin(), uniform(rng, 0.0, 2.0 * PI), 0.0)
        })
        .collect();
    // section views show growth rings around an off-center nucleus
    let rings = (view == View::Section).then(|| {
        let r = edge as f64;
        (uniform(rng, -r, 2.0 * r), uniform(rng, -r, 2.0 * r), uniform(rng, 10.0, 16.0), uniform(rng, 0.0, 2.0 * PI))
    });
    let norm = (2.0 / WAVES as f64).sqrt();
    let grain = Normal::new(0.0, 1.0).expect("valid normal");
    let plane = edge * edge;
    let mut out = vec![0.0; 3 * plane];
    for y in 0..edge {
        for x in 0..edge {
            let (xf, yf) = (x as f64, y as f64);
            let mut field: f64 = waves.iter().map(|(kx, ky, ph, _)| (kx * xf + ky * yf + ph).cos()).sum::<f64>() * norm;
            if let Some((cx, cy, period, ph)) = rings {
                let r = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
                field += 0.6 * (2.0 * PI * r / period + ph).cos();
            }
            let t = (0.5 + 0.22 * field).clamp(0.0, 1.0);
            let g = tex.grain * grain.sample(rng);
            for c in 0..3 {
                let v = tex.color_lo[c] + (tex.color_hi[c] - tex.color_lo[c]) * t + latent.color_shift[c] + g;
                out[c * plane + y * edge + x] = v;
            }
        }
    }
    out
}

/// Rotation of RGB about the gray axis by `deg`.
fn hue_rotate(rgb: [f64; 3], deg: f64) -> [f64; 3] {
    let a = deg.to_radians();
    let (cos, sin) = (a.cos(), a.sin());
    let k = (1.0 - cos) / 3.0;
    let s = sin / 3f64.sqrt();
    let m = [[cos + k, k - s, k + s], [k + s, cos + k, k - s], [k - s, k + s, cos + k]];
    [0, 1, 2].map(|i| m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2])
}

/// Applies a domain-B degradation to a clean CHW render.
fn degrade(clean: &mut [f64], edge: usize, strength: f64, image_id: &str, rng: &mut ChaCha8Rng) -> Degradation {
    let d = Degradation {
        image_id: image_id.to_string(),
        blur_sigma: uniform(rng, 0.5, 2.0) * strength,
        hue_shift_deg: uniform(rng, -25.0, 25.0) * strength,
        gain: 1.0 + uniform(rng, -0.25, 0.1) * strength,
        vignette: uniform(rng, 0.2, 0.6) * strength,
        noise_std: 0.04 * strength,
    };
    if d.blur_sigma > 0.0 {
        gaussian_blur_chw(clean, 3, edge, d.blur_sigma);
    }
    let plane = edge * edge;
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let c = (edge as f64 - 1.0) / 2.0;
    for y in 0..edge {
        for x in 0..edge {
            let i = y * edge + x;
            let rgb = hue_rotate([clean[i], clean[plane + i], clean[2 * plane + i]], d.hue_shift_deg);
            let r2 = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (2.0 * c * c);
            let shade = d.gain * (1.0 - d.vignette * r2);
            for (ch, v) in rgb.iter().enumerate() {
                clean[ch * plane + i] = v * shade + d.noise_std * noise.sample(rng);
            }
        }
    }
    d
}

fn to_raster(chw: &[f64], edge: usize) -> RgbImage {
    let plane = edge * edge;
    let pixels = (0..plane)
        .flat_map(|i| (0..3).map(move |c| (chw[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    RgbImage::new(edge, edge, pixels).expect("consistent size")
}

struct Job {
    dataset: DatasetTag,
    class: usize,
    view: View,
    fragment: usize,
    image: usize,
}

impl Job {
    fn ids(&self, keys: &[String]) -> (String, String) {
        let tag = match self.dataset {
            DatasetTag::A => "a",
            DatasetTag::B => "b",
            DatasetTag::Generic => "g",
        };
        let key = keys[self.class].to_lowercase();
        let view = match self.view {
            View::Surface => "sur",
            View::Section => "sec",
        };
        let fragment = format!("{tag}-{key}-{view}-f{:02}", self.fragment);
        (format!("{fragment}-i{}", self.image), fragment)
    }
}

fn domain_jobs(spec: &SynthSpec, dataset: DatasetTag) -> Vec<Job> {
    let mut jobs = Vec::new();
    for class in 0..spec.textures.len() {
        for view in [View::Surface, View::Section] {
            for fragment in 0..spec.fragments_per_class_view {
                for image in 0..SynthSpec::images_in_fragment(fragment) {
                    jobs.push(Job { dataset, class, view, fragment, image });
                }
            }
        }
    }
    jobs
}

fn render_job(spec: &SynthSpec, seed: u64, job: &Job) -> (ImageRecord, Option<Degradation>) {
    let keys = job.dataset.class_keys();
    let (image_id, fragment_id) = job.ids(&keys);
    let latent = fragment_latent(&mut rng::stream(seed, &format!("synth/latent/{fragment_id}")));
    let mut img_rng = rng::stream(seed, &format!("synth/render/{image_id}"));
    let mut chw = render_clean(&spec.textures[job.class], &latent, job.view, spec.image_edge, &mut img_rng);
    let degradation = (job.dataset == DatasetTag::B).then(|| {
        let mut deg_rng = rng::stream(seed, &format!("synth/degrade/{image_id}"));
        degrade(&mut chw, spec.image_edge, spec.shift_strength, &image_id, &mut deg_rng)
    });
    let record = ImageRecord {
        path: PathBuf::from(format!("images/{image_id}.ppm")),
        image_id,
        fragment_id,
        dataset: job.dataset,
        class_key: keys[job.class].clone(),
        view: job.view,
        pixels: to_raster(&chw, spec.image_edge),
    };
    (record, degradation)
}

/// Renders both domains. Deterministic per seed regardless of thread count.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthBenchmark> {
    spec.validate()?;
    let render = |dataset| -> Vec<(ImageRecord, Option<Degradation>)> {
        domain_jobs(spec, dataset).par_iter().map(|job| render_job(spec, seed, job)).collect()
    };
    let a: Vec<ImageRecord> = render(DatasetTag::A).into_iter().map(|(r, _)| r).collect();
    let (b, degradations): (Vec<ImageRecord>, Vec<Option<Degradation>>) = render(DatasetTag::B).into_iter().unzip();
    Ok(SynthBenchmark {
        spec: spec.clone(),
        seed,
        a,
        b,
        degradations: degradations.into_iter().flatten().collect(),
    })
}

/// Undegraded render of a domain-B image, for checking `B = degrade(clean)`.
pub fn clean_render_of(spec: &SynthSpec, seed: u64, record: &ImageRecord) -> Result<RgbImage> {
    let keys = record.dataset.class_keys();
    let job = domain_jobs(spec, record.dataset)
        .into_iter()
        .find(|j| j.ids(&keys).0 == record.image_id)
        .ok_or_else(|| Error::Data(format!("{} is not a synthetic image id", record.image_id)))?;
    let (_, fragment_id) = job.ids(&keys);
    let latent = fragment_latent(&mut rng::stream(seed, &format!("synth/latent/{fragment_id}")));
    let mut img_rng = rng::stream(seed, &format!("synth/render/{}", record.image_id));
    Ok(to_raster(&render_clean(&spec.textures[job.class], &latent, job.view, spec.image_edge, &mut img_rng), spec.image_edge))
}

/// Re-applies the logged degradation of `record` to its clean render.
pub fn redegrade(spec: &SynthSpec, seed: u64, record: &ImageRecord) -> Result<RgbImage> {
    let keys = record.dataset.class_keys();
    let job = domain_jobs(spec, record.dataset)
        .into_iter()
        .find(|j| j.ids(&keys).0 == record.image_id)
        .ok_or_else(|| Error::Data(format!("{} is not a synthetic image id", record.image_id)))?;
    Ok(render_job(spec, seed, &job).0.pixels)
}

/// Generic texture classes: random palettes, bands and orientations drawn
/// from the seed, rendered at `generic_edge`, one image per fragment. Each
/// image gets a random hue rotation, so color carries no class signal.
pub fn generic_textures(spec: &SynthSpec, seed: u64) -> Vec<ImageRecord> {
    let mut palette = rng::stream(seed, "synth/generic/palette");
    let textures: Vec<ClassTexture> = (0..GENERIC_CLASSES)
        .map(|_| {
            let lo = [0; 3].map(|_| uniform(&mut palette, 0.1, 0.6));
            let hi = lo.map(|v| v + uniform(&mut palette, 0.15, 0.4));
            let f0 = uniform(&mut palette, 0.03, 0.2);
            ClassTexture {
                color_lo: lo,
                color_hi: hi,
                freq: (f0, f0 * 1.5),
                orientation: palette.random_bool(0.5).then(|| uniform(&mut palette, 0.0, PI)),
                grain: uniform(&mut palette, 0.01, 0.08),
            }
        })
        .collect();
    let keys = DatasetTag::Generic.class_keys();
    let jobs: Vec<(usize, usize)> =
        (0..GENERIC_CLASSES).flat_map(|c| (0..spec.generic_per_class).map(move |i| (c, i))).collect();
    jobs.par_iter()
        .map(|&(c, i)| {
            let image_id = format!("g-{}-i{i:03}", keys[c].to_lowercase());
            let mut r = rng::stream(seed, &format!("synth/generic/{image_id}"));
            let latent = fragment_latent(&mut r);
            let mut chw = render_clean(&textures[c], &latent, View::Surface, spec.generic_edge, &mut r);
            // classes are told apart by texture alone
            let deg = uniform(&mut r, -180.0, 180.0);
            let plane = spec.generic_edge * spec.generic_edge;
            for i in 0..plane {
                let rgb = hue_rotate([chw[i], chw[plane + i], chw[2 * plane + i]], deg);
                for (ch, v) in rgb.into_iter().enumerate() {
                    chw[ch * plane + i] = v;
                }
            }
            ImageRecord {
                path: PathBuf::from(format!("images/{image_id}.ppm")),
                fragment_id: image_id.clone(),
                image_id,
                dataset: DatasetTag::Generic,
                class_key: keys[c].clone(),
                view: View::Surface,
                pixels: to_raster(&chw, spec.generic_edge),
            }
        })
        .collect()
}

pub const DOMAIN_A_DIR: &str = "dataset_a";
pub const DOMAIN_B_DIR: &str = "dataset_b";
pub const GENERIC_DIR: &str = "generic";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `root/manifest.csv` and every raster at `root/record.path`.
pub fn write_dataset(root: &Path, records: &[ImageRecord]) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for r in records {
        let path = root.join(&r.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        r.pixels.write_ppm(&path)?;
    }
    write_manifest(&root.join(MANIFEST_FILE), records)
}

impl SynthBenchmark {
    /// Writes `dataset_a/` and `dataset_b/` (manifest + PPM rasters),
    /// `degradations.csv` and `synth_spec.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_dataset(&dir.join(DOMAIN_A_DIR), &self.a)?;
        write_dataset(&dir.join(DOMAIN_B_DIR), &self.b)?;
        let deg = dir.join("degradations.csv");
        let mut w = csv::Writer::from_path(&deg)?;
        for d in &self.degradations {
            w.serialize(d)?;
        }
        w.flush().map_err(|e| Error::io(&deg, e))?;
        let spec_path = dir.join("synth_spec.json");
        let body = serde_json::to_string_pretty(&serde_json::json!({ "seed": self.seed, "spec": self.spec }))?;
        std::fs::write(&spec_path, body).map_err(|e| Error::io(&spec_path, e))
    }
}
