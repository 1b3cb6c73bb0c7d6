//! Procedural desk-scale corpus: face-like windows, clutter backgrounds and
//! annotated test scenes.
//!
//! Faces are drawn parametrically (oval, eyes, brows, nose shadow, mouth)
//! with randomised geometry, illumination and noise so that a cascade needs
//! several features per stage to separate them from clutter.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::eval::{BBox, GroundTruthBox};
use crate::image::GrayImage;

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = ((u - self.cx) / self.rx, (v - self.cy) / self.ry);
        du * du + dv * dv <= 1.0
    }
}

struct FaceParams {
    background: Clutter,
    face: Ellipse,
    features: Vec<Ellipse>,
    gradient: (f64, f64),
    /// In-plane rotation about the window centre, radians.
    angle: f64,
    /// Side lighting: `(side, factor)` darkens the half where `side * (u - 0.5) > 0`.
    shadow: Option<(f64, f64)>,
    noise: f64,
}

impl FaceParams {
    fn random(rng: &mut impl Rng) -> Self {
        let skin = rng.gen_range(90.0..220.0);
        let shapes = rng.gen_range(0..5);
        let background = Clutter::random(rng, 1.0, shapes);
        let j = |rng: &mut dyn rand::RngCore, s: f64| rng.gen_range(-s..=s);
        let cx = 0.5 + j(rng, 0.08);
        let cy = 0.54 + j(rng, 0.08);
        let face = Ellipse {
            cx,
            cy,
            rx: rng.gen_range(0.34..0.56),
            ry: rng.gen_range(0.44..0.66),
            value: skin,
        };
        let eye_y = cy - 0.17 + j(rng, 0.04);
        let eye_dx = rng.gen_range(0.16..0.24);
        let eye_dark = skin * rng.gen_range(0.4..0.95);
        let (erx, ery) = (rng.gen_range(0.07..0.12), rng.gen_range(0.04..0.08));
        let mut features = vec![
            Ellipse { cx: cx - eye_dx, cy: eye_y, rx: erx, ry: ery, value: eye_dark },
            Ellipse { cx: cx + eye_dx, cy: eye_y, rx: erx, ry: ery, value: eye_dark },
        ];
        if rng.gen_bool(0.6) {
            let brow = skin * rng.gen_range(0.3..0.8);
            let by = eye_y - rng.gen_range(0.09..0.13);
            for side in [-1.0, 1.0] {
                features.push(Ellipse { cx: cx + side * eye_dx, cy: by, rx: 0.11, ry: 0.025, value: brow });
            }
        }
        features.push(Ellipse {
            cx,
            cy: cy + 0.03,
            rx: 0.045,
            ry: 0.11,
            value: skin * rng.gen_range(0.75..0.95),
        });
        features.push(Ellipse {
            cx: cx + j(rng, 0.03),
            cy: cy + rng.gen_range(0.2..0.28),
            rx: rng.gen_range(0.12..0.24),
            ry: rng.gen_range(0.03..0.06),
            value: skin * rng.gen_range(0.3..0.85),
        });
        if rng.gen_bool(0.15) {
            // partial occlusion
            features.push(Ellipse {
                cx: rng.gen_range(0.0..1.0),
                cy: rng.gen_range(0.0..1.0),
                rx: rng.gen_range(0.1..0.25),
                ry: rng.gen_range(0.1..0.25),
                value: rng.gen_range(0.0..255.0),
            });
        }
        Self {
            background,
            face,
            features,
            gradient: (rng.gen_range(-0.6..0.6), rng.gen_range(-0.4..0.4)),
            angle: rng.gen_range(-0.35..0.35),
            shadow: rng
                .gen_bool(0.3)
                .then(|| (if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, rng.gen_range(0.4..0.8))),
            noise: rng.gen_range(4.0..40.0),
        }
    }

    fn shade(&self, u: f64, v: f64) -> f64 {
        let mut value = self.background.shade(u, v);
        let (sin, cos) = self.angle.sin_cos();
        let (du, dv) = (u - 0.5, v - 0.5);
        let (fu, fv) = (0.5 + cos * du - sin * dv, 0.5 + sin * du + cos * dv);
        if self.face.contains(fu, fv) {
            value = self.face.value;
            for e in &self.features {
                if e.contains(fu, fv) {
                    value = e.value;
                }
            }
        }
        if let Some((side, factor)) = self.shadow {
            if side * du > 0.0 {
                value *= factor;
            }
        }
        value * (1.0 + self.gradient.0 * du + self.gradient.1 * dv)
    }
}

/// 2x2 supersampled rendering of a unit-square shader.
fn render(w: usize, h: usize, noise: f64, rng: &mut impl Rng, shade: impl Fn(f64, f64) -> f64) -> GrayImage {
    let normal = Normal::new(0.0, noise.max(1e-9)).expect("positive sigma");
    let offsets = [0.25, 0.75];
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for oy in offsets {
            for ox in offsets {
                acc += shade((x as f64 + ox) / w as f64, (y as f64 + oy) / h as f64);
            }
        }
        (acc / 4.0 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8
    })
    .expect("render targets have positive size")
}

/// A face rendering that must not count as a face: flipped, rotated,
/// eyeless, eyes moved down, off-centre or at the wrong scale.
fn decoy_window(rng: &mut impl Rng, size: usize) -> GrayImage {
    let mut params = FaceParams::random(rng);
    let variant = rng.gen_range(0..6);
    let sign = |rng: &mut dyn rand::RngCore| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (mut du, mut dv, mut zoom) = (0.0, 0.0, 1.0);
    match variant {
        2 => {
            let skin = params.face.value;
            for e in params.features.iter_mut().take(2) {
                e.value = skin;
            }
        }
        3 => {
            let drop = rng.gen_range(0.2..0.4);
            for e in params.features.iter_mut().take(2) {
                e.cy += drop;
            }
        }
        4 => {
            du = sign(rng) * rng.gen_range(0.25..0.5);
            dv = rng.gen_range(-0.5..0.5);
        }
        5 => {
            zoom = if rng.gen_bool(0.5) {
                rng.gen_range(0.45..0.65)
            } else {
                rng.gen_range(1.5..2.2)
            };
        }
        _ => {}
    }
    render(size, size, params.noise, rng, |u, v| match variant {
        0 => params.shade(u, 1.0 - v),
        1 => params.shade(v, u),
        _ => params.shade(0.5 + (u - 0.5) / zoom + du, 0.5 + (v - 0.5) / zoom + dv),
    })
}

/// A random face-like window of the given size.
pub fn face_window(rng: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    let params = FaceParams::random(rng);
    render(w, h, params.noise, rng, |u, v| params.shade(u, v))
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Oval(Ellipse),
    Line { a: f64, b: f64, c: f64, half_width: f64 },
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Shape::Rect { x0, y0, x1, y1 } => u >= *x0 && u < *x1 && v >= *y0 && v < *y1,
            Shape::Oval(e) => e.contains(u, v),
            Shape::Line { a, b, c, half_width } => (a * u + b * v + c).abs() < *half_width,
        }
    }
}

/// Shaded background with painted shapes, later shapes on top.
struct Clutter {
    base: f64,
    gx: f64,
    gy: f64,
    shapes: Vec<(Shape, f64)>,
}

impl Clutter {
    fn random(rng: &mut impl Rng, aspect: f64, count: usize) -> Self {
        let mut shapes: Vec<(Shape, f64)> = Vec::with_capacity(count);
        for _ in 0..count {
            let value = rng.gen_range(0.0..255.0);
            let shape = match rng.gen_range(0..6) {
                0 => {
                    let (x0, y0) = (rng.gen_range(-0.2..1.0), rng.gen_range(-0.2..1.0));
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.gen_range(0.05..0.6),
                        y1: y0 + rng.gen_range(0.05..0.6),
                    }
                }
                1 => Shape::Oval(Ellipse {
                    cx: rng.gen_range(0.0..1.0),
                    cy: rng.gen_range(0.0..1.0),
                    rx: rng.gen_range(0.03..0.35),
                    ry: rng.gen_range(0.03..0.35),
                    value,
                }),
                2 => {
                    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                    let (a, b) = (angle.cos(), angle.sin() / aspect);
                    Shape::Line {
                        a,
                        b,
                        c: -(a * rng.gen_range(0.0..1.0) + b * rng.gen_range(0.0..1.0)),
                        half_width: rng.gen_range(0.01..0.08),
                    }
                }
                3 => {
                    // a dark pair, the cheapest impostor of an eye line
                    let cy = rng.gen_range(0.0..1.0);
                    let cx = rng.gen_range(0.0..1.0);
                    let d = rng.gen_range(0.02..0.12);
                    let r = rng.gen_range(0.01..0.05);
                    shapes.push((Shape::Oval(Ellipse { cx: cx - d, cy, rx: r, ry: r * 0.7, value }), value));
                    Shape::Oval(Ellipse { cx: cx + d, cy, rx: r, ry: r * 0.7, value })
                }
                _ => {
                    // a face-sized oval with dark blobs in the wrong places
                    let (cx, cy) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                    let r = rng.gen_range(0.05..0.2);
                    shapes.push((Shape::Oval(Ellipse { cx, cy, rx: r * 0.8, ry: r, value }), value));
                    let ey = cy + rng.gen_range(-0.7..0.5) * r;
                    let dx = rng.gen_range(0.15..0.7) * r;
                    let dark = value * rng.gen_range(0.2..0.8);
                    let (erx, ery) = (r * rng.gen_range(0.1..0.3), r * rng.gen_range(0.06..0.16));
                    for side in [-1.0, 1.0] {
                        let blob = Ellipse { cx: cx + side * dx, cy: ey, rx: erx, ry: ery, value: 0.0 };
                        shapes.push((Shape::Oval(blob), dark));
                    }
                    if rng.gen_bool(0.5) {
                        let my = cy + rng.gen_range(-0.7..0.7) * r;
                        let mw = r * rng.gen_range(0.2..0.5);
                        shapes.push((Shape::Rect { x0: cx - mw, y0: my, x1: cx + mw, y1: my + r * 0.1 }, dark));
                    }
                    continue;
                }
            };
            shapes.push((shape, value));
        }
        Self {
            base: rng.gen_range(20.0..230.0),
            gx: rng.gen_range(-80.0..80.0),
            gy: rng.gen_range(-80.0..80.0),
            shapes,
        }
    }

    fn shade(&self, u: f64, v: f64) -> f64 {
        let mut value = self.base + self.gx * (u - 0.5) + self.gy * (v - 0.5);
        for (shape, shade) in &self.shapes {
            if shape.contains(u, v) {
                value = *shade;
            }
        }
        value
    }
}

/// A random non-face image: shaded background, blobs, bars and stripes.
pub fn clutter_image(rng: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    let count = rng.gen_range(3..14) + (w * h) / 600;
    let clutter = Clutter::random(rng, w as f64 / h as f64, count);
    let noise = rng.gen_range(2.0..20.0);
    let mut img = render(w, h, noise, rng, |u, v| clutter.shade(u, v));
    let largest = w.min(h);
    if largest >= 12 {
        for _ in 0..rng.gen_range(0..=(w * h) / 150) {
            let size = rng.gen_range(12..=largest.min(48));
            let decoy = decoy_window(rng, size);
            let (x, y) = (rng.gen_range(0..=w - size), rng.gen_range(0..=h - size));
            paste(&mut img, &decoy, x, y);
        }
    }
    img
}

fn paste(dst: &mut GrayImage, src: &GrayImage, x: usize, y: usize) {
    for sy in 0..src.height() {
        for sx in 0..src.width() {
            dst.set(x + sx, y + sy, src.get(sx, sy));
        }
    }
}

/// A clutter scene with up to `faces` non-overlapping square faces pasted in.
pub fn scene(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    faces: usize,
    min_face: usize,
    max_face: usize,
) -> (GrayImage, Vec<BBox>) {
    let mut img = clutter_image(rng, w, h);
    let mut boxes: Vec<BBox> = Vec::new();
    let max_face = max_face.min(w).min(h);
    let min_face = min_face.min(max_face);
    for _ in 0..faces {
        for _attempt in 0..50 {
            let size = rng.gen_range(min_face..=max_face);
            let x = rng.gen_range(0..=w - size);
            let y = rng.gen_range(0..=h - size);
            let candidate = BBox::new(x as f64, y as f64, size as f64, size as f64);
            let clear = boxes.iter().all(|b| {
                candidate.x + candidate.w <= b.x
                    || b.x + b.w <= candidate.x
                    || candidate.y + candidate.h <= b.y
                    || b.y + b.h <= candidate.y
            });
            if !clear {
                continue;
            }
            let face = face_window(rng, size, size);
            paste(&mut img, &face, x, y);
            boxes.push(candidate);
            break;
        }
    }
    (img, boxes)
}

/// Sizes of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub window: usize,
    pub positives: usize,
    pub negative_images: usize,
    pub negative_size: usize,
    pub test_images: usize,
    pub test_size: usize,
    pub faces_per_test_image: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            window: 19,
            positives: 400,
            negative_images: 60,
            negative_size: 96,
            test_images: 20,
            test_size: 96,
            faces_per_test_image: 2,
        }
    }
}

/// Training pools plus a held-out annotated test split.
#[derive(Debug, Clone)]
pub struct DeskCorpus {
    pub positives: Vec<GrayImage>,
    pub negatives: Vec<GrayImage>,
    pub test_images: Vec<(String, GrayImage)>,
    pub test_truth: Vec<GroundTruthBox>,
}

impl DeskCorpus {
    /// Training and test splits come from independent streams of `seed`.
    pub fn generate(spec: &CorpusSpec, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let mut train = ChaCha8Rng::seed_from_u64(seed);
        train.set_stream(1);
        let mut test = ChaCha8Rng::seed_from_u64(seed);
        test.set_stream(2);

        let positives = (0..spec.positives)
            .map(|_| face_window(&mut train, spec.window, spec.window))
            .collect();
        let negatives = (0..spec.negative_images)
            .map(|_| clutter_image(&mut train, spec.negative_size, spec.negative_size))
            .collect();
        let mut test_images = Vec::new();
        let mut test_truth = Vec::new();
        for i in 0..spec.test_images {
            let name = format!("test_{i:03}.pgm");
            let (img, boxes) = scene(
                &mut test,
                spec.test_size,
                spec.test_size,
                spec.faces_per_test_image,
                spec.window,
                (spec.window * 2).min(spec.test_size),
            );
            test_truth.extend(boxes.into_iter().map(|bbox| GroundTruthBox {
                image: name.clone(),
                bbox,
            }));
            test_images.push((name, img));
        }
        Self {
            positives,
            negatives,
            test_images,
            test_truth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec {
            positives: 5,
            negative_images: 2,
            test_images: 2,
            ..CorpusSpec::default()
        };
        let a = DeskCorpus::generate(&spec, 42);
        let b = DeskCorpus::generate(&spec, 42);
        assert_eq!(a.positives, b.positives);
        assert_eq!(a.negatives, b.negatives);
        assert_eq!(a.test_truth, b.test_truth);
        assert_ne!(a.positives, DeskCorpus::generate(&spec, 43).positives);
    }

    #[test]
    fn scene_boxes_are_disjoint_and_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (img, boxes) = scene(&mut rng, 80, 60, 3, 19, 30);
            for (i, a) in boxes.iter().enumerate() {
                assert!(a.x >= 0.0 && a.y >= 0.0);
                assert!(a.x + a.w <= img.width() as f64 && a.y + a.h <= img.height() as f64);
                for b in &boxes[i + 1..] {
                    assert_eq!(crate::eval::iou(a, b).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn faces_have_darker_eye_band_than_cheeks() {
        // sanity check that the drawing is face-like on average
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut darker = 0;
        for _ in 0..200 {
            let f = face_window(&mut rng, 24, 24);
            let band = |y0: usize, y1: usize| {
                let mut s = 0u32;
                for y in y0..y1 {
                    for x in 6..18 {
                        s += f.get(x, y) as u32;
                    }
                }
                s
            };
            if band(7, 10) < band(11, 14) {
                darker += 1;
            }
        }
        assert!(darker > 150, "{darker}");
    }
}
