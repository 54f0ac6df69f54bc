//! Synthetic paired (partial, complete) shapes, the XYZ text format and
//! dataset manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// A primitive surface in its local frame, centered on the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Axis along z, closed by two caps.
    Cylinder { radius: f64, height: f64 },
    /// Full side lengths.
    Box { extents: [f64; 3] },
    /// Axis along z, apex at `+height/2`, closed base.
    Cone { radius: f64, height: f64 },
    /// Both surfaces, `b` shifted by `offset`.
    Union { a: Box<Primitive>, b: Box<Primitive>, offset: [f64; 3] },
}

pub const PRIMITIVE_KINDS: [&str; 5] = ["sphere", "cylinder", "box", "cone", "union"];

impl Primitive {
    /// A random primitive of the named kind with dimensions in `[0.5, 1.5]`.
    pub fn random(kind: &str, rng: &mut impl Rng) -> Result<Self> {
        let mut dim = || rng.gen_range(0.5..1.5);
        Ok(match kind {
            "sphere" => Primitive::Sphere { radius: dim() },
            "cylinder" => Primitive::Cylinder { radius: dim() * 0.6, height: dim() * 1.5 },
            "box" => Primitive::Box { extents: [dim(), dim(), dim()] },
            "cone" => Primitive::Cone { radius: dim() * 0.7, height: dim() * 1.5 },
            "union" => {
                let a = Primitive::random(PRIMITIVE_KINDS[rng.gen_range(0..4)], rng)?;
                let b = Primitive::random(PRIMITIVE_KINDS[rng.gen_range(0..4)], rng)?;
                let offset = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.4..1.0)];
                Primitive::Union { a: Box::new(a), b: Box::new(b), offset }
            }
            other => return Err(Error::arg(format!("unknown primitive '{other}'"))),
        })
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self {
            Primitive::Sphere { radius } => pos(*radius),
            Primitive::Cylinder { radius, height } | Primitive::Cone { radius, height } => {
                pos(*radius) && pos(*height)
            }
            Primitive::Box { extents } => extents.iter().all(|&e| pos(e)),
            Primitive::Union { a, b, offset } => {
                a.validate()?;
                b.validate()?;
                offset.iter().all(|o| o.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("primitive dimensions must be positive: {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Primitive::Sphere { radius: r } => 4.0 * PI * r * r,
            Primitive::Cylinder { radius: r, height: h } => 2.0 * PI * r * h + 2.0 * PI * r * r,
            Primitive::Box { extents: [x, y, z] } => 2.0 * (x * y + y * z + x * z),
            Primitive::Cone { radius: r, height: h } => PI * r * (r * r + h * h).sqrt() + PI * r * r,
            Primitive::Union { ref a, ref b, .. } => a.area() + b.area(),
        }
    }

    /// Center and radius of a sphere enclosing the surface.
    pub fn bounding_sphere(&self) -> ([f64; 3], f64) {
        match *self {
            Primitive::Sphere { radius } => ([0.0; 3], radius),
            Primitive::Cylinder { radius: r, height: h } | Primitive::Cone { radius: r, height: h } => {
                ([0.0; 3], (r * r + h * h / 4.0).sqrt())
            }
            Primitive::Box { extents: [x, y, z] } => ([0.0; 3], 0.5 * (x * x + y * y + z * z).sqrt()),
            Primitive::Union { ref a, ref b, offset } => {
                let (ca, ra) = a.bounding_sphere();
                let (cb, rb) = b.bounding_sphere();
                let cb = [cb[0] + offset[0], cb[1] + offset[1], cb[2] + offset[2]];
                let d = crate::geometry::sq_dist(&ca, &cb).sqrt();
                if d + rb <= ra {
                    (ca, ra)
                } else if d + ra <= rb {
                    (cb, rb)
                } else {
                    let r = 0.5 * (d + ra + rb);
                    let s = (r - ra) / d;
                    ([ca[0] + s * (cb[0] - ca[0]), ca[1] + s * (cb[1] - ca[1]), ca[2] + s * (cb[2] - ca[2])], r)
                }
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        use std::f64::consts::TAU;
        let disk = |rng: &mut dyn rand::RngCore, r: f64| {
            let rho = r * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * TAU;
            (rho * a.cos(), rho * a.sin())
        };
        match *self {
            Primitive::Sphere { radius } => {
                // Archimedes: z uniform on [-1, 1] is area-uniform on the sphere.
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let a = rng.gen::<f64>() * TAU;
                let s = (1.0 - z * z).max(0.0).sqrt();
                [radius * s * a.cos(), radius * s * a.sin(), radius * z]
            }
            Primitive::Cylinder { radius: r, height: h } => {
                let side = TAU * r * h;
                let u = rng.gen::<f64>() * (side + TAU * r * r);
                if u < side {
                    let a = rng.gen::<f64>() * TAU;
                    [r * a.cos(), r * a.sin(), rng.gen_range(-h / 2.0..h / 2.0)]
                } else {
                    let (x, y) = disk(rng, r);
                    let z = if u < side + std::f64::consts::PI * r * r { h / 2.0 } else { -h / 2.0 };
                    [x, y, z]
                }
            }
            Primitive::Box { extents } => {
                let [x, y, z] = extents;
                let faces = [y * z, y * z, x * z, x * z, x * y, x * y];
                let f = pick(rng, &faces);
                let axis = f / 2;
                let mut p = [0.0; 3];
                for (d, v) in p.iter_mut().enumerate() {
                    *v = if d == axis {
                        if f % 2 == 0 { -extents[d] / 2.0 } else { extents[d] / 2.0 }
                    } else {
                        rng.gen_range(-extents[d] / 2.0..extents[d] / 2.0)
                    };
                }
                p
            }
            Primitive::Cone { radius: r, height: h } => {
                use std::f64::consts::PI;
                let side = PI * r * (r * r + h * h).sqrt();
                if rng.gen::<f64>() * (side + PI * r * r) < side {
                    // Lateral area up to distance s from the apex grows as s².
                    let s = rng.gen::<f64>().sqrt();
                    let a = rng.gen::<f64>() * TAU;
                    [s * r * a.cos(), s * r * a.sin(), h / 2.0 - s * h]
                } else {
                    let (x, y) = disk(rng, r);
                    [x, y, -h / 2.0]
                }
            }
            Primitive::Union { ref a, ref b, offset } => {
                if pick(rng, &[a.area(), b.area()]) == 0 {
                    a.sample(rng)
                } else {
                    let p = b.sample(rng);
                    [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]
                }
            }
        }
    }
}

fn pick(rng: &mut (impl Rng + ?Sized), weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// A primitive placed in the world: rotated by Euler angles (radians, applied
/// x then y then z), scaled and translated. `seed` drives surface sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub primitive: Primitive,
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    pub scale: f64,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(primitive: Primitive, seed: u64) -> Self {
        ShapeSpec { primitive, rotation: [0.0; 3], translation: [0.0; 3], scale: 1.0, seed }
    }

    /// A random primitive of the named kind in a random pose.
    pub fn random(kind: &str, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let primitive = Primitive::random(kind, &mut rng)?;
        let rotation = [
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.0..std::f64::consts::TAU),
        ];
        let translation = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
        Ok(ShapeSpec { primitive, rotation, translation, scale: rng.gen_range(0.8..1.2), seed })
    }

    fn pose(&self, p: [f64; 3]) -> [f64; 3] {
        let [ax, ay, az] = self.rotation;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let [x, y, z] = p;
        let (y, z) = (cx * y - sx * z, sx * y + cx * z);
        let (x, z) = (cy * x + sy * z, -sy * x + cy * z);
        let (x, y) = (cz * x - sz * y, sz * x + cz * y);
        let s = self.scale;
        let t = self.translation;
        [s * x + t[0], s * y + t[1], s * z + t[2]]
    }
}

/// `n` area-uniform surface samples, normalized so the primitive's bounding
/// sphere becomes the unit sphere at the origin.
pub fn sample_complete(spec: &ShapeSpec, n: usize) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::arg("sample_complete: n must be at least 1"));
    }
    if !(spec.scale.is_finite() && spec.scale > 0.0) {
        return Err(Error::arg(format!("sample_complete: scale must be positive, got {}", spec.scale)));
    }
    spec.primitive.validate()?;
    let (c, r) = spec.primitive.bounding_sphere();
    let center = spec.pose(c);
    let radius = r * spec.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = (0..n)
        .map(|_| {
            let p = spec.pose(spec.primitive.sample(&mut rng));
            [(p[0] - center[0]) / radius, (p[1] - center[1]) / radius, (p[2] - center[2]) / radius]
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Number of points kept out of `n` at `keep_ratio`, i.e. `⌈keep_ratio·n⌉`
/// with a little slack against products like `0.3·10 = 3.0000000000000004`.
pub fn keep_count(n: usize, keep_ratio: f64) -> usize {
    ((keep_ratio * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Camera-facing crop: keeps the points with the largest projection onto
/// `view`, ties going to the lower index. Kept points retain their order.
pub fn make_partial(complete: &PointCloud, view: [f64; 3], keep_ratio: f64) -> Result<PointCloud> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::arg(format!("keep_ratio must lie in (0, 1], got {keep_ratio}")));
    }
    let norm = (view[0] * view[0] + view[1] * view[1] + view[2] * view[2]).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::arg("make_partial: view direction must be non-zero"));
    }
    let dot = |p: &[f64; 3]| p[0] * view[0] + p[1] * view[1] + p[2] * view[2];
    let mut order: Vec<usize> = (0..complete.len()).collect();
    order.sort_by(|&a, &b| dot(&complete.get(b)).total_cmp(&dot(&complete.get(a))).then(a.cmp(&b)));
    let mut kept = order[..keep_count(complete.len(), keep_ratio)].to_vec();
    kept.sort_unstable();
    Ok(complete.select(&kept))
}

/// `n` unit vectors spread over the sphere on a golden-angle spiral.
pub fn fibonacci_views(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            [r * a.cos(), r * a.sin(), z]
        })
        .collect()
}

pub const NUM_VIEWS: usize = 26;

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f64::from_str(f).map_err(|e| err(format!("'{f}': {e}")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite coordinate '{f}'")));
            }
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

/// Shortest decimal representation of each coordinate, so reading the file
/// back yields exactly the same values.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 40);
    for p in cloud.points() {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).expect("writing to a String");
    }
    s
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub partial: PathBuf,
    pub complete: PathBuf,
    pub resolution: usize,
    pub split: Split,
}

/// A paired partial/complete sample loaded into memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub partial: PointCloud,
    pub complete: PointCloud,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Parses the manifest and checks that every referenced file exists and
    /// resolutions agree within each split.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        for split in [Split::Train, Split::Val, Split::Test] {
            let mut res = self.entries.iter().filter(|e| e.split == split).map(|e| e.resolution);
            if let Some(first) = res.next() {
                if let Some(other) = res.find(|&r| r != first) {
                    return Err(Error::Data(format!(
                        "{split:?} split mixes resolutions {first} and {other}"
                    )));
                }
            }
        }
        for e in &self.entries {
            for p in [&e.partial, &e.complete] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Data(format!("{}: missing file {}", e.id, full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolution(&self, split: Split) -> Option<usize> {
        self.split(split).next().map(|e| e.resolution)
    }

    /// Reads every sample of `split`, checking complete clouds have the
    /// declared resolution.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split)
            .map(|e| {
                let partial = read_xyz(&self.resolve(&e.partial))?;
                let complete = read_xyz(&self.resolve(&e.complete))?;
                if complete.len() != e.resolution {
                    return Err(Error::Data(format!(
                        "{}: complete cloud has {} points, manifest says {}",
                        e.id,
                        complete.len(),
                        e.resolution
                    )));
                }
                if partial.is_empty() {
                    return Err(Error::Data(format!("{}: empty partial cloud", e.id)));
                }
                Ok(Sample { id: e.id.clone(), partial, complete })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct GenConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub complete_points: usize,
    pub partial_points: usize,
    pub keep_ratio: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    /// The toy dataset: 1024-point complete shapes, 512-point partials.
    fn default() -> Self {
        GenConfig {
            train: 64,
            val: 16,
            test: 16,
            complete_points: 1024,
            partial_points: 512,
            keep_ratio: 0.5,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Complete and partial clouds of 2048 points each.
    pub fn full_2048() -> Self {
        GenConfig { complete_points: 2048, partial_points: 2048, ..Self::default() }
    }
}

/// Per-shape seed derived from the dataset seed and the shape's index, so a
/// shape does not depend on how many others are generated.
pub fn shape_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One generated sample: the shape, the view it was cropped from and both clouds.
pub fn generate_sample(cfg: &GenConfig, index: u64) -> Result<(ShapeSpec, Sample)> {
    let seed = shape_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = PRIMITIVE_KINDS[rng.gen_range(0..PRIMITIVE_KINDS.len())];
    let spec = ShapeSpec::random(kind, rng.gen())?;
    let view = fibonacci_views(NUM_VIEWS)[rng.gen_range(0..NUM_VIEWS)];
    // The partial is cropped from a cloud dense enough to leave
    // `partial_points` after the crop; for the default sizes that cloud is
    // the complete cloud itself.
    let dense_n = (cfg.partial_points as f64 / cfg.keep_ratio).ceil() as usize;
    let dense = sample_complete(&spec, dense_n)?;
    let mut partial = make_partial(&dense, view, cfg.keep_ratio)?;
    if partial.len() > cfg.partial_points {
        partial = partial.select(&(0..cfg.partial_points).collect::<Vec<_>>());
    }
    let complete = if dense_n == cfg.complete_points { dense } else { sample_complete(&spec, cfg.complete_points)? };
    Ok((spec, Sample { id: format!("shape-{index:05}"), partial, complete }))
}

/// Writes every split under `out_dir` (`<split>/<id>.partial.xyz`,
/// `<split>/<id>.complete.xyz`) plus `manifest.json`, and returns the manifest.
pub fn gen_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.complete_points == 0 || cfg.partial_points == 0 || !(cfg.keep_ratio > 0.0 && cfg.keep_ratio <= 1.0) {
        return Err(Error::Config(format!("invalid dataset configuration {cfg:?}")));
    }
    let mut entries = Vec::new();
    let mut index = 0u64;
    for (split, count) in [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)] {
        let dir_name = serde_json::to_value(split)?.as_str().unwrap_or("split").to_owned();
        let dir = out_dir.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for _ in 0..count {
            let (_, s) = generate_sample(cfg, index)?;
            index += 1;
            let partial = PathBuf::from(&dir_name).join(format!("{}.partial.xyz", s.id));
            let complete = PathBuf::from(&dir_name).join(format!("{}.complete.xyz", s.id));
            write_xyz(&s.partial, &out_dir.join(&partial))?;
            write_xyz(&s.complete, &out_dir.join(&complete))?;
            entries.push(ManifestEntry { id: s.id, partial, complete, resolution: cfg.complete_points, split });
        }
    }
    let manifest = DatasetManifest { entries, root: out_dir.to_path_buf() };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
