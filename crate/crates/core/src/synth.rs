//! Seeded synthetic segmentation scenes: ellipses and rectangles over a
//! background, each class rendered at its own mean intensity plus noise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, KeyValues};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{LabelMap, TensorF};

pub const SPEC_FILE: &str = "spec.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Intensity per class, background first.
    pub class_means: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            classes: 3,
            min_shapes: 1,
            max_shapes: 3,
            class_means: SceneSpec::spaced_means(3),
            noise: 0.12,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.class_means.len() != self.classes {
            return bad(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                self.classes
            ));
        }
        let mut sorted = self.class_means.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|p| p[1] - p[0] < 0.15 - 1e-12) {
            return bad("class means must differ by at least 0.15".into());
        }
        if sorted.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("class means must lie in [0,1]".into());
        }
        if self.height < 3 || self.width < 3 {
            return bad("scene must be at least 3x3".into());
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return bad("shape count range must satisfy 1 <= min <= max".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        Ok(())
    }

    /// Evenly spaced means in `[0.2, 0.8]`, used when only K is given.
    /// Background takes the middle level so that blurring a shape edge never
    /// passes through another shape class's intensity.
    pub fn spaced_means(classes: usize) -> Vec<f64> {
        if classes < 2 {
            return vec![0.5; classes];
        }
        let mut levels: Vec<f64> = (0..classes)
            .map(|c| 0.2 + 0.6 * c as f64 / (classes - 1) as f64)
            .collect();
        let bg = levels.remove((classes - 1) / 2);
        levels.insert(0, bg);
        levels
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("height".into(), self.height.to_string());
        kv.insert("width".into(), self.width.to_string());
        kv.insert("classes".into(), self.classes.to_string());
        kv.insert("min_shapes".into(), self.min_shapes.to_string());
        kv.insert("max_shapes".into(), self.max_shapes.to_string());
        kv.insert(
            "class_means".into(),
            self.class_means
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("noise".into(), self.noise.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv
    }

    pub fn from_key_values(kv: &KeyValues, path: &Path) -> Result<Self> {
        let means: String = io::kv_get(kv, "class_means", path)?;
        let class_means = means
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::KeyValue {
                path: path.to_path_buf(),
                msg: format!("bad class_means {means}"),
            })?;
        let spec = SceneSpec {
            height: io::kv_get(kv, "height", path)?,
            width: io::kv_get(kv, "width", path)?,
            classes: io::kv_get(kv, "classes", path)?,
            min_shapes: io::kv_get(kv, "min_shapes", path)?,
            max_shapes: io::kv_get(kv, "max_shapes", path)?,
            class_means,
            noise: io::kv_get(kv, "noise", path)?,
            seed: io::kv_get(kv, "seed", path)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: TensorF,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn in_channels(&self) -> usize {
        self.samples.first().map_or(1, |s| s.image.shape()[0])
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse,
    Rect,
}

/// Render one scene from its own seed.
pub fn generate_one(spec: &SceneSpec, seed: u64) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let mut rng = Rng::new(seed);
    let mut labels = vec![0u8; h * w];
    let n_shapes =
        spec.min_shapes + rng.below((spec.max_shapes - spec.min_shapes + 1) as u64) as usize;
    let short = h.min(w) as f64;
    for _ in 0..n_shapes {
        let class = 1 + rng.below(spec.classes as u64 - 1) as u8;
        let shape = if rng.uniform() < 0.5 {
            Shape::Ellipse
        } else {
            Shape::Rect
        };
        let cy = rng.uniform_range(0.0, h as f64);
        let cx = rng.uniform_range(0.0, w as f64);
        let ry = rng.uniform_range(short / 10.0, short / 4.0);
        let rx = rng.uniform_range(short / 10.0, short / 4.0);
        for y in 0..h {
            let dy = (y as f64 + 0.5 - cy) / ry;
            for x in 0..w {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let inside = match shape {
                    Shape::Ellipse => dx * dx + dy * dy <= 1.0,
                    Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
                };
                // later shapes occlude earlier ones
                if inside {
                    labels[y * w + x] = class;
                }
            }
        }
    }
    let image = labels
        .iter()
        .map(|&c| {
            let mean = spec.class_means[c as usize];
            let v = if spec.noise > 0.0 {
                mean + spec.noise * rng.normal()
            } else {
                mean
            };
            v.clamp(0.0, 1.0)
        })
        .collect();
    Sample {
        image: TensorF::new(vec![1, h, w], image).expect("finite"),
        labels: LabelMap::new(h, w, spec.classes, labels).expect("labels below K"),
    }
}

/// `n` scenes; scene `i` uses a seed derived from `(spec.seed, i)`.
pub fn generate(spec: &SceneSpec, n: usize) -> Result<Dataset> {
    generate_range(spec, 0, n)
}

/// Scenes `start..start + n` of the stream that [`generate`] draws from.
pub fn generate_range(spec: &SceneSpec, start: usize, n: usize) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dataset size must be at least 1".into(),
        ));
    }
    use rayon::prelude::*;
    let samples = (start..start + n)
        .into_par_iter()
        .map(|i| generate_one(spec, derive_seed(spec.seed, i as u64)))
        .collect();
    Ok(Dataset {
        classes: spec.classes,
        samples,
    })
}

pub fn image_name(i: usize) -> String {
    format!("img_{i:05}.pgm")
}

pub fn label_name(i: usize) -> String {
    format!("lbl_{i:05}.pgm")
}

/// Write `img_%05d.pgm`, `lbl_%05d.pgm` and the manifest. `manifest` must
/// contain at least `classes`; `count` is filled in.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>, manifest: &KeyValues) -> Result<()> {
    let dir = dir.as_ref();
    io::create_dir(dir)?;
    for (i, s) in ds.samples.iter().enumerate() {
        match s.image.shape()[0] {
            3 => io::save_ppm(&s.image, dir.join(image_name(i)))?,
            _ => io::save_pgm(&s.image, dir.join(image_name(i)))?,
        }
        io::save_label_pgm(&s.labels, dir.join(label_name(i)))?;
    }
    let mut kv = manifest.clone();
    kv.insert("classes".into(), ds.classes.to_string());
    kv.insert("count".into(), ds.len().to_string());
    io::save_key_values(&kv, dir.join(SPEC_FILE))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<KeyValues> {
    let path = dir.as_ref().join(SPEC_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    io::load_key_values(path)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let kv = load_manifest(dir)?;
    let mpath = dir.join(SPEC_FILE);
    let classes: usize = io::kv_get(&kv, "classes", &mpath)?;
    let count: usize = io::kv_get(&kv, "count", &mpath)?;
    let samples = (0..count)
        .map(|i| {
            let image = io::decode_pnm(
                &std::fs::read(dir.join(image_name(i)))
                    .map_err(|e| Error::io(dir.join(image_name(i)), e))?,
            )?;
            let labels = io::load_label_pgm(dir.join(label_name(i)), classes)?;
            if (image.shape()[1], image.shape()[2]) != (labels.height(), labels.width()) {
                return Err(Error::Shape(format!(
                    "sample {i}: image and label sizes differ"
                )));
            }
            Ok(Sample { image, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { classes, samples })
}
