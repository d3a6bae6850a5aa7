//! Corruption suite: 15 families at 5 severities.
//!
//! Parameters per (family, severity) come from a key=value ladder table. The
//! table shipped with the crate is compiled in; `PCD_LADDER_FILE` points to a
//! replacement. Frost, fog, snow and elastic use seeded value-noise fields and
//! jpeg uses a blockwise 8×8 DCT with an IJG-scaled quantization table, so no
//! external assets or codecs are involved. Every output is clamped to `[0,1]`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{self, KeyValues};
use crate::rng::{derive_seed, Rng};
use crate::synth::{self, Dataset, Sample};
use crate::tensor::TensorF;

pub const DEFAULT_LADDERS: &str = include_str!("../ladders.txt");
pub const LADDER_ENV: &str = "PCD_LADDER_FILE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    Elastic,
    Pixelate,
    Jpeg,
}

impl Family {
    pub const ALL: [Family; 15] = [
        Family::GaussianNoise,
        Family::ShotNoise,
        Family::ImpulseNoise,
        Family::DefocusBlur,
        Family::GlassBlur,
        Family::MotionBlur,
        Family::ZoomBlur,
        Family::Snow,
        Family::Frost,
        Family::Fog,
        Family::Brightness,
        Family::Contrast,
        Family::Elastic,
        Family::Pixelate,
        Family::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::GaussianNoise => "gaussian_noise",
            Family::ShotNoise => "shot_noise",
            Family::ImpulseNoise => "impulse_noise",
            Family::DefocusBlur => "defocus_blur",
            Family::GlassBlur => "glass_blur",
            Family::MotionBlur => "motion_blur",
            Family::ZoomBlur => "zoom_blur",
            Family::Snow => "snow",
            Family::Frost => "frost",
            Family::Fog => "fog",
            Family::Brightness => "brightness",
            Family::Contrast => "contrast",
            Family::Elastic => "elastic",
            Family::Pixelate => "pixelate",
            Family::Jpeg => "jpeg",
        }
    }

    fn arity(self) -> usize {
        match self {
            Family::GlassBlur | Family::Snow => 3,
            Family::ZoomBlur | Family::Frost | Family::Fog | Family::Elastic => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub family: Family,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(family: Family, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::SeverityOutOfRange(severity));
        }
        Ok(CorruptionSpec {
            family,
            severity,
            seed,
        })
    }
}

/// Parameter lists keyed by family and severity.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladders {
    table: BTreeMap<(Family, u8), Vec<f64>>,
}

impl Ladders {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let kv = io::parse_key_values(text, path)?;
        let bad = |msg: String| Error::KeyValue {
            path: path.to_path_buf(),
            msg,
        };
        let mut table = BTreeMap::new();
        for (key, value) in &kv {
            if key == "version" {
                continue;
            }
            let (fam, sev) = key
                .rsplit_once('.')
                .ok_or_else(|| bad(format!("bad key {key}")))?;
            let family: Family = fam.parse()?;
            let severity: u8 = sev
                .parse()
                .map_err(|_| bad(format!("bad severity in {key}")))?;
            if !(1..=5).contains(&severity) {
                return Err(Error::SeverityOutOfRange(severity));
            }
            let params = value
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad parameters for {key}: {value}")))?;
            if params.len() != family.arity() {
                return Err(bad(format!(
                    "{key} needs {} parameters, got {}",
                    family.arity(),
                    params.len()
                )));
            }
            table.insert((family, severity), params);
        }
        for f in Family::ALL {
            for s in 1..=5 {
                if !table.contains_key(&(f, s)) {
                    return Err(bad(format!("missing {f}.{s}")));
                }
            }
        }
        Ok(Ladders { table })
    }

    pub fn builtin() -> Self {
        Ladders::parse(DEFAULT_LADDERS, Path::new("ladders.txt")).expect("shipped table is valid")
    }

    /// The table named by `PCD_LADDER_FILE`, or the built-in one.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(LADDER_ENV) {
            Some(p) => {
                let path = Path::new(&p);
                Ladders::parse(&io::read_text(path)?, path)
            }
            None => Ok(Ladders::builtin()),
        }
    }

    pub fn params(&self, family: Family, severity: u8) -> Result<&[f64]> {
        self.table
            .get(&(family, severity))
            .map(Vec::as_slice)
            .ok_or(Error::SeverityOutOfRange(severity))
    }
}

impl Default for Ladders {
    fn default() -> Self {
        Ladders::builtin()
    }
}

/// Corrupt every channel of a `[C,H,W]` image in `[0,1]`.
pub fn corrupt(image: &TensorF, spec: &CorruptionSpec, ladders: &Ladders) -> Result<TensorF> {
    let (c, h, w) = image.chw()?;
    let params = ladders.params(spec.family, spec.severity)?;
    let mut rng = Rng::new(derive_seed(spec.seed, spec.family as u64));
    let plane = h * w;
    let mut out = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let src = &image.data()[ch * plane..(ch + 1) * plane];
        let mut p = Plane {
            h,
            w,
            v: src.to_vec(),
        };
        apply(spec.family, params, &mut p, &mut rng);
        out.extend(p.v.into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    TensorF::new(vec![c, h, w], out)
}

#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    /// Bilinear sample at continuous pixel-center coordinates, replicate border.
    fn sample(&self, y: f64, x: f64) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x0 + 1) * fx;
        let bot = self.at(y0 + 1, x0) * (1.0 - fx) + self.at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn mean(&self) -> f64 {
        self.v.iter().sum::<f64>() / self.v.len() as f64
    }
}

fn apply(family: Family, p: &[f64], img: &mut Plane, rng: &mut Rng) {
    match family {
        Family::GaussianNoise => img.v.iter_mut().for_each(|v| *v += p[0] * rng.normal()),
        Family::ShotNoise => img
            .v
            .iter_mut()
            .for_each(|v| *v = rng.poisson(v.clamp(0.0, 1.0) * p[0]) as f64 / p[0]),
        Family::ImpulseNoise => img.v.iter_mut().for_each(|v| {
            if rng.uniform() < p[0] {
                *v = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            }
        }),
        Family::DefocusBlur => *img = disk_blur(img, p[0]),
        Family::GlassBlur => glass_blur(img, p[0], p[1] as isize, p[2] as usize, rng),
        Family::MotionBlur => {
            let angle =
                rng.uniform_range(-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4);
            *img = line_blur(img, p[0] as usize, angle);
        }
        Family::ZoomBlur => *img = zoom_blur(img, p[0], p[1]),
        Family::Snow => snow(img, p[0], p[1] as usize, p[2], rng),
        Family::Frost => {
            let tex = value_noise(img.h, img.w, 4.0, rng);
            for (v, t) in img.v.iter_mut().zip(tex) {
                // bright crystals concentrate where the texture peaks
                *v = p[0] * *v + p[1] * t * t;
            }
        }
        Family::Fog => {
            let haze = fractal_noise(img.h, img.w, p[1], rng);
            let max = img.v.iter().cloned().fold(0.0, f64::max);
            for (v, f) in img.v.iter_mut().zip(haze) {
                *v = (*v + p[0] * f) * max / (max + p[0]);
            }
        }
        Family::Brightness => img.v.iter_mut().for_each(|v| *v += p[0]),
        Family::Contrast => {
            let m = img.mean();
            img.v.iter_mut().for_each(|v| *v = (*v - m) * p[0] + m);
        }
        Family::Elastic => elastic(img, p[0], p[1], rng),
        Family::Pixelate => pixelate(img, p[0]),
        Family::Jpeg => jpeg(img, p[0]),
    }
}

fn gaussian_blur(img: &Plane, sigma: f64) -> Plane {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let mut tmp = img.clone();
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let s: f64 = (-r..=r)
                .map(|d| taps[(d + r) as usize] * img.at(y, x + d))
                .sum();
            tmp.v[y as usize * img.w + x as usize] = s / norm;
        }
    }
    let mut out = tmp.clone();
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let s: f64 = (-r..=r)
                .map(|d| taps[(d + r) as usize] * tmp.at(y + d, x))
                .sum();
            out.v[y as usize * img.w + x as usize] = s / norm;
        }
    }
    out
}

fn disk_blur(img: &Plane, radius: f64) -> Plane {
    let r = radius.ceil() as isize;
    let taps: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= radius * radius + 1e-9)
        .collect();
    let n = taps.len() as f64;
    let mut out = img.clone();
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let s: f64 = taps.iter().map(|&(dy, dx)| img.at(y + dy, x + dx)).sum();
            out.v[y as usize * img.w + x as usize] = s / n;
        }
    }
    out
}

/// Average of `length` bilinear samples on a centered segment at `angle`.
fn line_blur(img: &Plane, length: usize, angle: f64) -> Plane {
    let (sy, sx) = angle.sin_cos();
    let half = (length as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            let s: f64 = (0..length)
                .map(|i| {
                    let t = i as f64 - half;
                    img.sample(y as f64 + t * sy, x as f64 + t * sx)
                })
                .sum();
            out.v[y * img.w + x] = s / length as f64;
        }
    }
    out
}

fn zoom_blur(img: &Plane, max_zoom: f64, step: f64) -> Plane {
    let (cy, cx) = ((img.h as f64 - 1.0) / 2.0, (img.w as f64 - 1.0) / 2.0);
    let mut acc = img.v.clone();
    let mut n = 1usize;
    let mut i = 1;
    loop {
        let z = 1.0 + step * i as f64;
        if z >= max_zoom - 1e-9 {
            break;
        }
        for y in 0..img.h {
            for x in 0..img.w {
                acc[y * img.w + x] +=
                    img.sample((y as f64 - cy) / z + cy, (x as f64 - cx) / z + cx);
            }
        }
        n += 1;
        i += 1;
    }
    Plane {
        h: img.h,
        w: img.w,
        v: acc.into_iter().map(|v| v / n as f64).collect(),
    }
}

fn glass_blur(img: &mut Plane, sigma: f64, max_delta: isize, iterations: usize, rng: &mut Rng) {
    *img = gaussian_blur(img, sigma);
    let (h, w) = (img.h as isize, img.w as isize);
    for _ in 0..iterations {
        for y in (max_delta..h - max_delta).rev() {
            for x in (max_delta..w - max_delta).rev() {
                let span = 2 * max_delta as u64 + 1;
                let dy = rng.below(span) as isize - max_delta;
                let dx = rng.below(span) as isize - max_delta;
                let (a, b) = ((y * w + x) as usize, ((y + dy) * w + x + dx) as usize);
                img.v.swap(a, b);
            }
        }
    }
    *img = gaussian_blur(img, sigma);
}

fn snow(img: &mut Plane, density: f64, length: usize, opacity: f64, rng: &mut Rng) {
    let flakes = Plane {
        h: img.h,
        w: img.w,
        v: (0..img.h * img.w)
            .map(|_| if rng.uniform() < density { 1.0 } else { 0.0 })
            .collect(),
    };
    let angle = rng.uniform_range(
        -std::f64::consts::FRAC_PI_2 - 0.4,
        -std::f64::consts::FRAC_PI_2 + 0.4,
    );
    let streaks = line_blur(&flakes, length.max(1), angle);
    for (v, s) in img.v.iter_mut().zip(streaks.v) {
        // a flake's mass is spread along its streak; rescale so streak cores stay bright
        let layer = (s * length as f64 * 0.5).min(1.0);
        *v = (1.0 - 0.3 * opacity) * *v + opacity * layer;
    }
}

/// Smooth value noise in `[0,1]` on a lattice with spacing `cell` pixels.
fn value_noise(h: usize, w: usize, cell: f64, rng: &mut Rng) -> Vec<f64> {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.uniform()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let gy = y as f64 / cell;
        let (iy, fy) = (gy.floor() as usize, smooth(gy.fract()));
        for x in 0..w {
            let gx = x as f64 / cell;
            let (ix, fx) = (gx.floor() as usize, smooth(gx.fract()));
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(iy, ix) * (1.0 - fx) + g(iy, ix + 1) * fx;
            let bot = g(iy + 1, ix) * (1.0 - fx) + g(iy + 1, ix + 1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Sum of value-noise octaves, amplitude shrinking by `decay` per halving of
/// the lattice spacing, normalised to `[0,1]`.
fn fractal_noise(h: usize, w: usize, decay: f64, rng: &mut Rng) -> Vec<f64> {
    let mut acc = vec![0.0; h * w];
    let mut cell = h.max(w) as f64 / 2.0;
    let mut amp = 1.0;
    while cell >= 1.0 {
        for (a, n) in acc.iter_mut().zip(value_noise(h, w, cell, rng)) {
            *a += amp * n;
        }
        cell /= 2.0;
        amp /= decay;
    }
    let (lo, hi) = acc
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
            (l.min(v), u.max(v))
        });
    let span = (hi - lo).max(1e-12);
    acc.into_iter().map(|v| (v - lo) / span).collect()
}

fn elastic(img: &mut Plane, alpha: f64, sigma: f64, rng: &mut Rng) {
    let field = |rng: &mut Rng| {
        let raw = Plane {
            h: img.h,
            w: img.w,
            v: (0..img.h * img.w)
                .map(|_| rng.uniform_range(-1.0, 1.0))
                .collect(),
        };
        let smooth = gaussian_blur(&raw, sigma);
        let peak = smooth
            .v
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        smooth
            .v
            .into_iter()
            .map(|v| alpha * v / peak)
            .collect::<Vec<_>>()
    };
    let dy = field(rng);
    let dx = field(rng);
    let src = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            let i = y * img.w + x;
            img.v[i] = src.sample(y as f64 + dy[i], x as f64 + dx[i]);
        }
    }
}

fn pixelate(img: &mut Plane, factor: f64) {
    let sh = ((img.h as f64 * factor).round() as usize).max(1);
    let sw = ((img.w as f64 * factor).round() as usize).max(1);
    let mut small = vec![0.0; sh * sw];
    let mut counts = vec![0usize; sh * sw];
    for y in 0..img.h {
        for x in 0..img.w {
            let i = (y * sh / img.h) * sw + x * sw / img.w;
            small[i] += img.v[y * img.w + x];
            counts[i] += 1;
        }
    }
    for (s, c) in small.iter_mut().zip(&counts) {
        *s /= (*c).max(1) as f64;
    }
    for y in 0..img.h {
        for x in 0..img.w {
            img.v[y * img.w + x] = small[(y * sh / img.h) * sw + x * sw / img.w];
        }
    }
}

const JPEG_LUMA: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16.,
    24., 40., 57., 69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109.,
    103., 77., 24., 35., 55., 64., 81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120.,
    101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

fn jpeg_table(quality: f64) -> [f64; 64] {
    let q = quality.clamp(1.0, 100.0);
    let scale = if q < 50.0 {
        5000.0 / q
    } else {
        200.0 - 2.0 * q
    };
    JPEG_LUMA.map(|b| ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn jpeg(img: &mut Plane, quality: f64) {
    let table = jpeg_table(quality);
    let basis: Vec<f64> = (0..8)
        .flat_map(|u| {
            (0..8).map(move |x| {
                let cu = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
                cu * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
            })
        })
        .collect();
    let (h, w) = (img.h, img.w);
    let src = img.clone();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let v = src.at((by + y) as isize, (bx + x) as isize);
                    block[y * 8 + x] = (v.clamp(0.0, 1.0) * 255.0).round() - 128.0;
                }
            }
            let mut coef = [0.0; 64];
            for u in 0..8 {
                for v in 0..8 {
                    let mut s = 0.0;
                    for y in 0..8 {
                        for x in 0..8 {
                            s += basis[u * 8 + y] * basis[v * 8 + x] * block[y * 8 + x];
                        }
                    }
                    coef[u * 8 + v] = (s / table[u * 8 + v]).round() * table[u * 8 + v];
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    if by + y >= h || bx + x >= w {
                        continue;
                    }
                    let mut s = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            s += basis[u * 8 + y] * basis[v * 8 + x] * coef[u * 8 + v];
                        }
                    }
                    img.v[(by + y) * w + bx + x] = ((s + 128.0).round().clamp(0.0, 255.0)) / 255.0;
                }
            }
        }
    }
}

/// Corrupt each sample with a per-image seed derived from `spec.seed`.
pub fn corrupt_samples(ds: &Dataset, spec: &CorruptionSpec, ladders: &Ladders) -> Result<Dataset> {
    use rayon::prelude::*;
    let samples = ds
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let img_spec = CorruptionSpec {
                seed: derive_seed(spec.seed, i as u64),
                ..*spec
            };
            Ok(Sample {
                image: corrupt(&s.image, &img_spec, ladders)?,
                labels: s.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        classes: ds.classes,
        samples,
    })
}

/// Mirror a dataset folder with corrupted images; label files are copied verbatim.
pub fn corrupt_dataset(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    spec: &CorruptionSpec,
    ladders: &Ladders,
) -> Result<()> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let ds = synth::load_dataset(input)?;
    let corrupted = corrupt_samples(&ds, spec, ladders)?;
    io::create_dir(output)?;
    for (i, s) in corrupted.samples.iter().enumerate() {
        let path = output.join(synth::image_name(i));
        let bytes = io::encode_pnm(&s.image)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let (from, to) = (
            input.join(synth::label_name(i)),
            output.join(synth::label_name(i)),
        );
        std::fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
    }
    let mut manifest: KeyValues = synth::load_manifest(input)?;
    manifest.insert("corruption".into(), spec.family.to_string());
    manifest.insert("severity".into(), spec.severity.to_string());
    manifest.insert("corruption_seed".into(), spec.seed.to_string());
    io::save_key_values(&manifest, output.join(synth::SPEC_FILE))
}

/// Anisotropic total variation of every channel.
pub fn total_variation(t: &TensorF) -> f64 {
    let (c, h, w) = t.chw().expect("[C,H,W]");
    let d = t.data();
    let mut tv = 0.0;
    for ch in 0..c {
        let p = &d[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    tv += (p[y * w + x + 1] - p[y * w + x]).abs();
                }
                if y + 1 < h {
                    tv += (p[(y + 1) * w + x] - p[y * w + x]).abs();
                }
            }
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64, c: usize) -> TensorF {
        TensorF::filled(vec![c, 32, 32], v)
    }

    fn random_image(seed: u64) -> TensorF {
        let mut r = Rng::new(seed);
        TensorF::new(vec![1, 32, 32], (0..1024).map(|_| r.uniform()).collect()).unwrap()
    }

    fn variance(t: &TensorF) -> f64 {
        let m = t.mean();
        t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t.len() as f64
    }

    fn spec(f: Family, s: u8) -> CorruptionSpec {
        CorruptionSpec::new(f, s, 99).unwrap()
    }

    #[test]
    fn gaussian_ladder() {
        let l = Ladders::builtin();
        let sigmas: Vec<f64> = (1..=5)
            .map(|s| l.params(Family::GaussianNoise, s).unwrap()[0])
            .collect();
        assert_eq!(sigmas, vec![0.04, 0.06, 0.08, 0.09, 0.10]);
    }

    #[test]
    fn every_family_parses_and_has_five_levels() {
        let l = Ladders::builtin();
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            for s in 1..=5 {
                assert_eq!(l.params(f, s).unwrap().len(), f.arity());
            }
        }
        assert!(matches!(
            "blur".parse::<Family>(),
            Err(Error::UnknownFamily(_))
        ));
    }

    #[test]
    fn severity_zero_rejected() {
        let err = CorruptionSpec::new(Family::Fog, 0, 1).unwrap_err();
        assert!(err.to_string().contains("severity out of range"));
        assert!(CorruptionSpec::new(Family::Fog, 6, 1).is_err());
    }

    #[test]
    fn incomplete_ladder_rejected() {
        assert!(Ladders::parse("gaussian_noise.1 = 0.1", Path::new("x")).is_err());
        let broken = DEFAULT_LADDERS.replace("jpeg.5 = 7", "jpeg.5 = 7,8");
        assert!(Ladders::parse(&broken, Path::new("x")).is_err());
    }

    #[test]
    fn brightness_shifts_mean_by_offset() {
        let l = Ladders::builtin();
        for s in 1..=4 {
            let out = corrupt(&constant(0.5, 1), &spec(Family::Brightness, s), &l).unwrap();
            let offset = l.params(Family::Brightness, s).unwrap()[0];
            assert!((out.mean() - (0.5 + offset)).abs() < 1e-12);
        }
    }

    #[test]
    fn blurs_keep_constant_images() {
        let l = Ladders::builtin();
        for f in [
            Family::DefocusBlur,
            Family::MotionBlur,
            Family::ZoomBlur,
            Family::GlassBlur,
        ] {
            for s in 1..=5 {
                let out = corrupt(&constant(0.3, 1), &spec(f, s), &l).unwrap();
                assert!(
                    out.data().iter().all(|v| (v - 0.3).abs() < 1e-12),
                    "{f} {s}"
                );
            }
        }
    }

    #[test]
    fn outputs_in_range_shape_preserved_deterministic() {
        let l = Ladders::builtin();
        let img = TensorF::new(vec![3, 20, 27], {
            let mut r = Rng::new(1);
            (0..3 * 20 * 27).map(|_| r.uniform()).collect()
        })
        .unwrap();
        for f in Family::ALL {
            for s in 1..=5 {
                let a = corrupt(&img, &spec(f, s), &l).unwrap();
                assert_eq!(a.shape(), img.shape());
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{f} {s}");
                assert_eq!(a, corrupt(&img, &spec(f, s), &l).unwrap());
            }
        }
    }

    #[test]
    fn noise_variance_grows_with_severity() {
        let l = Ladders::builtin();
        for f in [
            Family::GaussianNoise,
            Family::ShotNoise,
            Family::ImpulseNoise,
        ] {
            let vars: Vec<f64> = (1..=5)
                .map(|s| {
                    variance(
                        &corrupt(&TensorF::filled(vec![1, 128, 128], 0.5), &spec(f, s), &l)
                            .unwrap(),
                    )
                })
                .collect();
            assert!(vars.windows(2).all(|p| p[1] > p[0]), "{f}: {vars:?}");
        }
    }

    #[test]
    fn blur_total_variation_shrinks_with_severity() {
        let l = Ladders::builtin();
        for seed in 0..5 {
            let img = random_image(seed);
            for f in [
                Family::DefocusBlur,
                Family::GlassBlur,
                Family::MotionBlur,
                Family::ZoomBlur,
            ] {
                let tvs: Vec<f64> = (1..=5)
                    .map(|s| {
                        total_variation(
                            &corrupt(&img, &CorruptionSpec::new(f, s, seed).unwrap(), &l).unwrap(),
                        )
                    })
                    .collect();
                assert!(
                    tvs.windows(2).all(|p| p[1] <= p[0]),
                    "{f} seed {seed}: {tvs:?}"
                );
                assert!(tvs[0] < total_variation(&img));
            }
        }
    }

    #[test]
    fn jpeg_table_scaling() {
        assert_eq!(jpeg_table(50.0), JPEG_LUMA);
        assert_eq!(jpeg_table(25.0)[0], 32.0);
        assert_eq!(jpeg_table(100.0), [1.0; 64]);
    }

    #[test]
    fn jpeg_high_quality_is_near_identity() {
        let img = random_image(3);
        let mut p = Plane {
            h: 32,
            w: 32,
            v: img.data().to_vec(),
        };
        jpeg(&mut p, 100.0);
        for (a, b) in p.v.iter().zip(img.data()) {
            assert!((a - b).abs() < 3.0 / 255.0);
        }
    }

    #[test]
    fn pixelate_makes_blocks() {
        let img = random_image(4);
        let out = corrupt(&img, &spec(Family::Pixelate, 5), &Ladders::builtin()).unwrap();
        // factor 0.25 on 32 px → 8 px blocks
        let d = out.data();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(d[y * 32 + x], d[(y / 4 * 4) * 32 + x / 4 * 4]);
            }
        }
    }

    #[test]
    fn dataset_folder_mirror() {
        let dir = tempfile::tempdir().unwrap();
        let spec_s = crate::synth::SceneSpec {
            height: 16,
            width: 16,
            ..Default::default()
        };
        let ds = crate::synth::generate(&spec_s, 3).unwrap();
        let src = dir.path().join("src");
        crate::synth::save_dataset(&ds, &src, &spec_s.to_key_values()).unwrap();
        let l = Ladders::builtin();
        let cs = spec(Family::GaussianNoise, 3);
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        corrupt_dataset(&src, &a, &cs, &l).unwrap();
        corrupt_dataset(&src, &b, &cs, &l).unwrap();
        for i in 0..3 {
            let read = |d: &Path, n: String| std::fs::read(d.join(n)).unwrap();
            assert_eq!(
                read(&a, crate::synth::image_name(i)),
                read(&b, crate::synth::image_name(i))
            );
            assert_eq!(
                read(&a, crate::synth::label_name(i)),
                read(&src, crate::synth::label_name(i))
            );
            assert_ne!(
                read(&a, crate::synth::image_name(i)),
                read(&src, crate::synth::image_name(i))
            );
        }
    }
}
