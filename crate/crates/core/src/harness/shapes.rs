//! Procedural shapes-on-textures dataset with a tunable background cue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{ClassId, Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Cross];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
        }
    }

    /// Whether offset `(dx, dy)` from the center lies inside a shape of
    /// half-extent `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Disk => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
            // apex up, base at dy = r
            Shape::Triangle => dy <= r && dy >= -r && dx.abs() <= (dy + r) / 2.0,
            Shape::Cross => {
                let arm = r * 0.33;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Stripes,
    Checker,
    Noise,
    Gradient,
}

impl Texture {
    pub const ALL: [Texture; 4] = [Texture::Stripes, Texture::Checker, Texture::Noise, Texture::Gradient];

    /// Two endpoint colors; each texture has its own palette so that the
    /// background is recognizable from color statistics alone.
    fn palette(self) -> ([f64; 3], [f64; 3]) {
        match self {
            Texture::Stripes => ([200.0, 40.0, 30.0], [120.0, 20.0, 60.0]),
            Texture::Checker => ([30.0, 170.0, 50.0], [10.0, 90.0, 40.0]),
            Texture::Noise => ([40.0, 60.0, 200.0], [20.0, 130.0, 170.0]),
            Texture::Gradient => ([220.0, 190.0, 40.0], [150.0, 90.0, 20.0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesConfig {
    pub canvas: u32,
    /// Number of classes; class `c` draws shape `c` and owns texture `c`.
    pub classes: usize,
    /// Training images per class.
    pub per_class: usize,
    /// Test images per class.
    pub test_per_class: usize,
    /// Probability that a training image uses its class's own texture.
    pub rho: f64,
    /// Blend toward a per-class color on shape pixels, 0 for neutral gray.
    pub shape_tint: f64,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self { canvas: 64, classes: 4, per_class: 50, test_per_class: 50, rho: 1.0, shape_tint: 0.6, seed: 0 }
    }
}

impl ShapesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > Shape::ALL.len() {
            return Err(Error::InvalidInput(format!("classes must be in 1..={}", Shape::ALL.len())));
        }
        if self.canvas < 16 {
            return Err(Error::InvalidInput("canvas must be at least 16 pixels".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.shape_tint) {
            return Err(Error::InvalidInput("rho and shape_tint must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Everything needed to render one image, so it can be re-rendered with a
/// different background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class_id: ClassId,
    pub texture: usize,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub brightness: f64,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub id: String,
    pub image: Raster,
    /// 255 exactly on shape pixels.
    pub mask: Mask,
    pub spec: ShapeSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapesDataset {
    pub train: Vec<ShapeSample>,
    pub test: Vec<ShapeSample>,
}

const TINTS: [[f64; 3]; 4] = [[110.0, 230.0, 230.0], [230.0, 110.0, 230.0], [245.0, 245.0, 245.0], [70.0, 70.0, 70.0]];

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Fill `canvas` with texture `kind`; layout parameters come from `seed`.
pub fn render_texture(kind: Texture, canvas: u32, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = kind.palette();
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-20.0..20.0));
    let c0 = [c0[0] + jitter[0], c0[1] + jitter[1], c0[2] + jitter[2]];
    let c1 = [c1[0] + jitter[0], c1[1] + jitter[1], c1[2] + jitter[2]];
    let mut img = Raster::filled(canvas, canvas, &[0, 0, 0]).expect("canvas is non-empty");
    let period = rng.random_range(6.0..14.0);
    let phase = rng.random_range(0.0..period);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    let cell = rng.random_range(4..10) as i64;
    let (sx, sy) = (rng.random_range(0..cell), rng.random_range(0..cell));
    let n = canvas as f64;
    for y in 0..canvas {
        for x in 0..canvas {
            let (fx, fy) = (x as f64, y as f64);
            let t = match kind {
                Texture::Stripes => (((fx * ca + fy * sa + phase) / period).floor() as i64).rem_euclid(2) as f64,
                Texture::Checker => (((x as i64 + sx) / cell + (y as i64 + sy) / cell) % 2) as f64,
                Texture::Noise => rng.random::<f64>(),
                Texture::Gradient => (((fx - n / 2.0) * ca + (fy - n / 2.0) * sa) / n + 0.5).clamp(0.0, 1.0),
            };
            let c = lerp(c0, c1, t);
            img.pixel_mut(x, y).copy_from_slice(&[to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]);
        }
    }
    img
}

/// Draw one image description for `class`.
fn draw_spec<R: Rng>(cfg: &ShapesConfig, class: usize, rho: f64, rng: &mut R) -> ShapeSpec {
    let n = cfg.canvas as f64;
    let radius = rng.random_range(0.16 * n..0.3 * n);
    let texture = if rng.random_bool(rho) { class } else { rng.random_range(0..cfg.classes) };
    ShapeSpec {
        class_id: ClassId(class as u32),
        texture,
        cx: rng.random_range(radius..n - radius),
        cy: rng.random_range(radius..n - radius),
        radius,
        brightness: rng.random_range(170.0..240.0),
        texture_seed: rng.random(),
    }
}

/// Render `spec`, optionally with another texture in place of its own.
pub fn render(cfg: &ShapesConfig, spec: &ShapeSpec, texture: usize) -> (Raster, Mask) {
    let shape = Shape::ALL[spec.class_id.0 as usize];
    let mut img = render_texture(Texture::ALL[texture], cfg.canvas, spec.texture_seed);
    let mut mask = Mask::filled(cfg.canvas, cfg.canvas, 0).expect("canvas is non-empty");
    let gray = [spec.brightness; 3];
    let color = lerp(gray, TINTS[spec.class_id.0 as usize], cfg.shape_tint);
    let rgb = [to_u8(color[0]), to_u8(color[1]), to_u8(color[2])];
    for y in 0..cfg.canvas {
        for x in 0..cfg.canvas {
            if shape.contains(x as f64 + 0.5 - spec.cx, y as f64 + 0.5 - spec.cy, spec.radius) {
                img.pixel_mut(x, y).copy_from_slice(&rgb);
                mask.set(x, y, 255);
            }
        }
    }
    (img, mask)
}

fn sample(cfg: &ShapesConfig, id: String, spec: ShapeSpec) -> ShapeSample {
    let (image, mask) = render(cfg, &spec, spec.texture);
    ShapeSample { id, image, mask, spec }
}

/// Generate train and test splits. Training backgrounds follow `rho`; test
/// backgrounds follow the same rule so the test split is in-distribution.
pub fn gen_shapes_dataset(cfg: &ShapesConfig) -> Result<ShapesDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut split = |name: &str, per_class: usize| {
        let mut out = Vec::with_capacity(per_class * cfg.classes);
        for i in 0..per_class {
            for c in 0..cfg.classes {
                let spec = draw_spec(cfg, c, cfg.rho, &mut rng);
                out.push(sample(cfg, format!("{name}-{c}-{i}"), spec));
            }
        }
        out
    };
    let train = split("train", cfg.per_class);
    let test = split("test", cfg.test_per_class);
    Ok(ShapesDataset { train, test })
}

/// Re-render each test image over a texture belonging to another class.
pub fn swapped_backgrounds(cfg: &ShapesConfig, test: &[ShapeSample], seed: u64) -> Vec<ShapeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    test.iter()
        .map(|s| {
            let own = s.spec.class_id.0 as usize;
            let texture = if cfg.classes > 1 { (own + rng.random_range(1..cfg.classes)) % cfg.classes } else { own };
            let (image, mask) = render(cfg, &s.spec, texture);
            ShapeSample { id: format!("{}-swap", s.id), image, mask, spec: ShapeSpec { texture, ..s.spec } }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = ShapesConfig { per_class: 3, test_per_class: 2, ..Default::default() };
        assert_eq!(gen_shapes_dataset(&cfg).unwrap(), gen_shapes_dataset(&cfg).unwrap());
        let other = gen_shapes_dataset(&ShapesConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other, gen_shapes_dataset(&cfg).unwrap());
    }

    #[test]
    fn rho_one_pairs_class_with_own_texture() {
        let cfg = ShapesConfig { per_class: 10, test_per_class: 5, ..Default::default() };
        let ds = gen_shapes_dataset(&cfg).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            assert_eq!(s.spec.texture, s.spec.class_id.0 as usize);
        }
    }

    #[test]
    fn mask_covers_exactly_the_shape() {
        let cfg = ShapesConfig { per_class: 2, test_per_class: 0, ..Default::default() };
        for s in gen_shapes_dataset(&cfg).unwrap().train {
            // swapping the texture changes only unmasked pixels
            let other = (s.spec.texture + 1) % 4;
            let (swapped, mask2) = render(&cfg, &s.spec, other);
            assert_eq!(mask2, s.mask);
            let mut changed_bg = 0;
            for y in 0..cfg.canvas {
                for x in 0..cfg.canvas {
                    if s.mask.is_set(x, y) {
                        assert_eq!(swapped.pixel(x, y), s.image.pixel(x, y));
                    } else if swapped.pixel(x, y) != s.image.pixel(x, y) {
                        changed_bg += 1;
                    }
                }
            }
            assert!(changed_bg > 0);
            assert!(s.mask.count_set() > 50);
            assert!(s.mask.count_set() < (cfg.canvas * cfg.canvas) as usize);
        }
    }

    #[test]
    fn swapped_split_uses_foreign_textures() {
        let cfg = ShapesConfig { per_class: 0, test_per_class: 10, ..Default::default() };
        let ds = gen_shapes_dataset(&cfg).unwrap();
        let swapped = swapped_backgrounds(&cfg, &ds.test, 3);
        for (a, b) in ds.test.iter().zip(&swapped) {
            assert_ne!(b.spec.texture, a.spec.class_id.0 as usize);
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn shapes_differ() {
        let r = 10.0;
        let pts: Vec<(f64, f64)> = (-10..=10).flat_map(|y| (-10..=10).map(move |x| (x as f64, y as f64))).collect();
        let sets: Vec<Vec<bool>> =
            Shape::ALL.iter().map(|s| pts.iter().map(|&(x, y)| s.contains(x, y, r)).collect()).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(sets[i], sets[j]);
            }
        }
    }
}
