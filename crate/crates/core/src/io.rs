//! Frame sequences, masks, configuration files and CSV logs.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageReader, RgbImage};
use rayon::prelude::*;

use crate::analysis::AmbiguityEstimate;
use crate::error::{Error, Result};
use crate::motion::AffineChain;
use crate::pipeline::{EnergyRow, PipelineConfig};
use crate::reconstruct::ReconstructionMode;
use crate::volume::{BoolVolume, Dims, OcclusionMask, PatchShape, VideoVolume, Volume};

pub const DEFAULT_PATTERN: &str = "frame_%05d.png";

/// A numbered image sequence in one directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceSpec {
    pub dir: PathBuf,
    /// File name with one `%d` or `%0Nd` placeholder.
    pub pattern: String,
    /// First index; the smallest index present when `None`.
    pub start: Option<usize>,
    /// Number of frames; every contiguous frame from `start` when `None`.
    pub count: Option<usize>,
}

impl SequenceSpec {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            pattern: DEFAULT_PATTERN.to_string(),
            start: None,
            count: None,
        }
    }

    pub fn with_pattern(mut self, pattern: impl Into<String>) -> Self {
        self.pattern = pattern.into();
        self
    }

    pub fn path(&self, index: usize) -> Result<PathBuf> {
        let p = Pattern::parse(&self.pattern)?;
        Ok(self.dir.join(p.format(index)))
    }

    /// Frame indices to read, checked for gaps.
    pub fn frame_indices(&self) -> Result<Vec<usize>> {
        let pattern = Pattern::parse(&self.pattern)?;
        let mut found: Vec<usize> = fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| pattern.index_of(n)))
            .collect();
        found.sort_unstable();
        found.dedup();
        let no_frames = || Error::NoFrames {
            dir: self.dir.clone(),
            pattern: self.pattern.clone(),
        };
        let start = match self.start {
            Some(s) => s,
            None => *found.first().ok_or_else(no_frames)?,
        };
        let count = match self.count {
            Some(c) => c,
            None => {
                let last = *found.last().ok_or_else(no_frames)?;
                if last < start {
                    return Err(no_frames());
                }
                last - start + 1
            }
        };
        if count == 0 {
            return Err(no_frames());
        }
        let indices: Vec<usize> = (start..start + count).collect();
        for &i in &indices {
            if found.binary_search(&i).is_err() {
                return Err(Error::MissingFrame {
                    index: i,
                    path: self.dir.join(pattern.format(i)),
                });
            }
        }
        Ok(indices)
    }
}

#[derive(Clone, Debug)]
struct Pattern {
    prefix: String,
    suffix: String,
    width: usize,
}

impl Pattern {
    fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("file pattern {s:?} needs exactly one %d or %0Nd"));
        let at = s.find('%').ok_or_else(bad)?;
        let rest = &s[at + 1..];
        let end = rest.find('d').ok_or_else(bad)?;
        let spec = &rest[..end];
        let width = if spec.is_empty() {
            0
        } else if spec.starts_with('0') && spec.len() > 1 {
            spec[1..].parse().map_err(|_| bad())?
        } else {
            return Err(bad());
        };
        let suffix = &rest[end + 1..];
        if suffix.contains('%') {
            return Err(bad());
        }
        Ok(Self {
            prefix: s[..at].to_string(),
            suffix: suffix.to_string(),
            width,
        })
    }

    fn format(&self, i: usize) -> String {
        format!("{}{:0w$}{}", self.prefix, i, self.suffix, w = self.width)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        let digits = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if self.width > 0 && digits.len() < self.width {
            return None;
        }
        let i: usize = digits.parse().ok()?;
        (self.format(i) == name).then_some(i)
    }
}

fn decode(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

fn read_frames(spec: &SequenceSpec) -> Result<(Dims, Vec<(PathBuf, RgbImage)>)> {
    let paths: Vec<PathBuf> = spec.frame_indices()?.into_iter().map(|i| spec.path(i)).collect::<Result<_>>()?;
    let frames: Vec<(PathBuf, RgbImage)> = paths
        .into_par_iter()
        .map(|p| decode(&p).map(|img| (p, img)))
        .collect::<Result<_>>()?;
    let (w, h) = frames[0].1.dimensions();
    for (p, img) in &frames {
        if img.dimensions() != (w, h) {
            return Err(Error::FrameSize {
                path: p.clone(),
                expected: format!("{w}x{h}"),
                actual: format!("{}x{}", img.width(), img.height()),
            });
        }
    }
    Ok((Dims::new(w as usize, h as usize, frames.len()).validate()?, frames))
}

/// Reads a colour sequence with values in `[0, 255]`.
pub fn load_sequence(spec: &SequenceSpec) -> Result<VideoVolume> {
    let (dims, frames) = read_frames(spec)?;
    let mut data = Vec::with_capacity(dims.len());
    for (_, img) in &frames {
        data.extend(img.pixels().map(|px| px.0.map(f64::from)));
    }
    Volume::from_vec(dims, data)
}

/// Reads a mask sequence: a voxel is occluded when any channel exceeds 127.
pub fn load_mask_volume(spec: &SequenceSpec, dims: Dims) -> Result<BoolVolume> {
    let (found, frames) = read_frames(spec)?;
    if found != dims {
        return Err(Error::DimensionMismatch {
            expected: dims.to_string(),
            actual: found.to_string(),
        });
    }
    let mut data = Vec::with_capacity(dims.len());
    for (_, img) in &frames {
        data.extend(img.pixels().map(|px| px.0.iter().any(|&c| c > 127)));
    }
    let mask = Volume::from_vec(dims, data)?;
    if mask.count() == dims.len() {
        return Err(Error::FullyOccluded);
    }
    Ok(mask)
}

pub fn load_mask(spec: &SequenceSpec, dims: Dims) -> Result<OcclusionMask> {
    Ok(OcclusionMask::new(load_mask_volume(spec, dims)?))
}

/// Clamps to `[0, 255]` and rounds half to even.
pub fn quantise(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Writes every frame under a temporary name first and renames them once all
/// of them have been written, so a failure leaves no partial sequence.
pub fn save_sequence(u: &VideoVolume, spec: &SequenceSpec) -> Result<()> {
    let pattern = Pattern::parse(&spec.pattern)?;
    let created = !spec.dir.exists();
    fs::create_dir_all(&spec.dir).map_err(|e| Error::io(&spec.dir, e))?;
    let d = u.dims();
    let start = spec.start.unwrap_or(0);
    let jobs: Vec<(PathBuf, PathBuf, usize)> = (0..d.frames)
        .map(|t| {
            let name = pattern.format(start + t);
            (spec.dir.join(format!(".{name}.part")), spec.dir.join(name), t)
        })
        .collect();
    let written: Result<()> = jobs.par_iter().try_for_each(|(tmp, _, t)| {
        let bytes: Vec<u8> = u.frame(*t).iter().flat_map(|c| c.map(quantise)).collect();
        let img = RgbImage::from_raw(d.width as u32, d.height as u32, bytes).expect("frame buffer size");
        img.save_with_format(tmp, image::ImageFormat::Png).map_err(|e| match e {
            image::ImageError::IoError(e) => Error::io(tmp, e),
            other => Error::Decode {
                path: tmp.clone(),
                message: other.to_string(),
            },
        })
    });
    let renamed = written.and_then(|_| {
        jobs.iter()
            .try_for_each(|(tmp, dst, _)| fs::rename(tmp, dst).map_err(|e| Error::io(dst, e)))
    });
    if renamed.is_err() {
        for (tmp, _, _) in &jobs {
            let _ = fs::remove_file(tmp);
        }
        if created {
            let _ = fs::remove_dir(&spec.dir);
        }
    }
    renamed
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn energy_log_csv(rows: &[EnergyRow]) -> String {
    let mut s = String::from("level,iteration,e,energy\n");
    for r in rows {
        s.push_str(&format!("{},{},{:e},{:e}\n", r.level, r.iteration, r.e, r.energy));
    }
    s
}

pub fn save_log(rows: &[EnergyRow], path: &Path) -> Result<()> {
    write_text(path, &energy_log_csv(rows))
}

/// One row per frame with the six affine parameters mapping it onto the
/// reference frame.
pub fn warps_csv(chain: &AffineChain) -> String {
    let mut s = String::from("frame,a1,a2,a3,a4,a5,a6\n");
    for (n, w) in chain.warps.iter().enumerate() {
        let a = w.0;
        s.push_str(&format!("{n},{:e},{:e},{:e},{:e},{:e},{:e}\n", a[0], a[1], a[2], a[3], a[4], a[5]));
    }
    s
}

pub fn save_warps(chain: &AffineChain, path: &Path) -> Result<()> {
    write_text(path, &warps_csv(chain))
}

/// `(shape, estimate, published value)` rows.
pub fn ambiguity_csv(rows: &[(String, AmbiguityEstimate, Option<f64>)]) -> String {
    let mut s = String::from("shape,trials,estimate,stderr,published\n");
    for (shape, est, published) in rows {
        let pv = published.map(|v| format!("{v:e}")).unwrap_or_default();
        s.push_str(&format!("{shape},{},{:e},{:e},{pv}\n", est.trials, est.probability, est.stderr));
    }
    s
}

/// Settings read from a `key = value` file. Absent keys are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub patch_size: Option<PatchShape>,
    pub lambda: Option<f64>,
    pub levels: Option<usize>,
    pub rho: Option<f64>,
    pub r_max: Option<usize>,
    pub pm_iters: Option<usize>,
    pub max_iters: Option<usize>,
    pub stop_eps: Option<f64>,
    pub texture: Option<bool>,
    pub align: Option<bool>,
    pub recon: Option<ReconstructionMode>,
    pub feature_radius: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub pattern: Option<String>,
}

pub const CONFIG_KEYS: [&str; 15] = [
    "patch_size",
    "lambda",
    "levels",
    "rho",
    "r_max",
    "pm_iters",
    "max_iters",
    "stop_eps",
    "texture",
    "align",
    "recon",
    "feature_radius",
    "seed",
    "threads",
    "pattern",
];

pub fn parse_patch_size(s: &str) -> Result<PatchShape> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("patch size {s:?} must be X,Y,T")))?;
    match parts[..] {
        [x, y, t] => PatchShape::new(x, y, t),
        _ => Err(Error::Config(format!("patch size {s:?} must be X,Y,T"))),
    }
}

pub fn parse_recon(s: &str) -> Result<ReconstructionMode> {
    match s {
        "weighted" => Ok(ReconstructionMode::Weighted),
        "unweighted" => Ok(ReconstructionMode::Unweighted),
        _ => Err(Error::Config(format!("recon must be weighted or unweighted, got {s:?}"))),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "on" | "yes" | "1" => Some(true),
        "false" | "off" | "no" | "0" => Some(false),
        _ => None,
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ConfigFile::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::Config(format!("line {}: bad value {value:?} for {key}", n + 1));
            macro_rules! num {
                () => {
                    Some(value.parse().map_err(|_| bad())?)
                };
            }
            match key {
                "patch_size" => c.patch_size = Some(parse_patch_size(value)?),
                "lambda" => c.lambda = num!(),
                "levels" => c.levels = num!(),
                "rho" => c.rho = num!(),
                "r_max" => c.r_max = num!(),
                "pm_iters" => c.pm_iters = num!(),
                "max_iters" => c.max_iters = num!(),
                "stop_eps" => c.stop_eps = num!(),
                "texture" => c.texture = Some(parse_bool(value).ok_or_else(bad)?),
                "align" => c.align = Some(parse_bool(value).ok_or_else(bad)?),
                "recon" => c.recon = Some(parse_recon(value)?),
                "feature_radius" => c.feature_radius = num!(),
                "seed" => c.seed = num!(),
                "threads" => c.threads = num!(),
                "pattern" => c.pattern = Some(value.to_string()),
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Overwrites the fields of `config` that this file sets.
    pub fn apply(&self, config: &mut PipelineConfig) {
        if let Some(v) = self.patch_size {
            config.shape = v;
        }
        if let Some(v) = self.lambda {
            config.lambda = v;
        }
        if let Some(v) = self.levels {
            config.levels = Some(v);
        }
        if let Some(v) = self.rho {
            config.rho = v;
        }
        if let Some(v) = self.r_max {
            config.r_max = Some(v);
        }
        if let Some(v) = self.pm_iters {
            config.pm_iters = v;
        }
        if let Some(v) = self.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = self.stop_eps {
            config.stop_eps = v;
        }
        if let Some(v) = self.texture {
            config.texture = v;
        }
        if let Some(v) = self.align {
            config.align = v;
        }
        if let Some(v) = self.recon {
            config.mode = v;
        }
        if let Some(v) = self.feature_radius {
            config.feature_radius = Some(v);
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
    }
}
