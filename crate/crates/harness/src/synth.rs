//! Deterministic synthetic scenes: one to three coloured shapes on a black
//! canvas, with captions, grounding phrases and attribute questions.

use mmgen_core::{derive_seed, seeded, DetRng, ImageTensor};
use mmgen_mmtok::BBox;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Whether the unit-square point `(u, v)` lies inside the shape.
    fn covers(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
            // apex at top centre, base along the bottom edge
            ShapeKind::Triangle => (u - 0.5).abs() <= v / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Color(pub usize);

pub const PALETTE: [(&str, [f32; 3]); 8] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.8, 0.1]),
    ("blue", [0.1, 0.2, 0.95]),
    ("yellow", [0.95, 0.9, 0.1]),
    ("cyan", [0.1, 0.85, 0.85]),
    ("magenta", [0.85, 0.1, 0.85]),
    ("white", [0.95, 0.95, 0.95]),
    ("orange", [0.95, 0.5, 0.05]),
];

impl Color {
    pub fn word(self) -> &'static str {
        PALETTE[self.0].0
    }

    pub fn rgb(self) -> [f32; 3] {
        PALETTE[self.0].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: Color,
    pub bbox: BBox,
}

impl Shape {
    /// `a red square`.
    pub fn phrase(&self) -> String {
        format!("a {} {}", self.color.word(), self.kind.word())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub shapes: Vec<Shape>,
}

/// Closed word list of every text the corpus can produce.
pub fn word_list() -> Vec<String> {
    let mut words: Vec<String> = [
        "a", "an", "and", "the", "of", "image", "picture", "photo", "with", "what", "color", "is",
        "based", "on", "answer", "in", "one", "word", "or", "phrase", "short", "shape", "shapes",
        "how", "many", "are", "there", "two", "three", "you", "helpful", "assistant", "describe",
        "which", "yes", "no", "left", "right",
    ]
    .iter()
    .map(|w| w.to_string())
    .collect();
    words.extend(PALETTE.iter().map(|(w, _)| w.to_string()));
    words.extend(ShapeKind::ALL.iter().map(|k| k.word().to_string()));
    words.extend([".", ",", ":", "?"].iter().map(|w| w.to_string()));
    words
}

/// Scene generation constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// (kind, colour) combinations never generated.
    pub excluded: Vec<(ShapeKind, Color)>,
    /// When set, every scene contains this combination.
    pub required: Option<(ShapeKind, Color)>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            min_shapes: 1,
            max_shapes: 3,
            excluded: Vec::new(),
            required: None,
        }
    }
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2
}

impl SynthScene {
    /// Scene `index` of the stream identified by `seed`.
    pub fn generate(seed: u64, index: u64, spec: &SceneSpec) -> Self {
        let mut rng = seeded(derive_seed(seed, index));
        Self::sample(&mut rng, spec)
    }

    pub fn sample(rng: &mut DetRng, spec: &SceneSpec) -> Self {
        let count = rng.random_range(spec.min_shapes..=spec.max_shapes);
        let mut kinds = ShapeKind::ALL.to_vec();
        let mut shapes: Vec<Shape> = Vec::with_capacity(count);
        let mut forced = spec.required;
        while shapes.len() < count {
            let (kind, color) = match forced.take() {
                Some((k, c)) => (k, c),
                None => {
                    let kind = kinds[rng.random_range(0..kinds.len())];
                    let allowed: Vec<Color> = (0..PALETTE.len())
                        .map(Color)
                        .filter(|&c| !spec.excluded.contains(&(kind, c)))
                        .collect();
                    (kind, allowed[rng.random_range(0..allowed.len())])
                }
            };
            kinds.retain(|&k| k != kind);
            let mut bbox = BBox::new(0.0, 0.0, 0.4, 0.4).expect("valid box");
            for _ in 0..64 {
                let side = rng.random_range(0.3..0.5);
                let x = rng.random_range(0.0..1.0 - side);
                let y = rng.random_range(0.0..1.0 - side);
                bbox = BBox::new(x, y, x + side, y + side).expect("box inside the unit square");
                if !shapes.iter().any(|s| overlaps(&s.bbox, &bbox)) {
                    break;
                }
            }
            shapes.push(Shape { kind, color, bbox });
            if kinds.is_empty() {
                break;
            }
        }
        shapes.sort_by(|a, b| a.bbox.x1.total_cmp(&b.bbox.x1));
        Self { shapes }
    }

    /// Rasterizes the scene; later shapes paint over earlier ones.
    pub fn render(&self, size: usize) -> ImageTensor {
        let mut img = ImageTensor::black(size, size, 3);
        for s in &self.shapes {
            let b = s.bbox;
            for y in 0..size {
                let py = (y as f64 + 0.5) / size as f64;
                if py < b.y1 || py > b.y2 {
                    continue;
                }
                for x in 0..size {
                    let px = (x as f64 + 0.5) / size as f64;
                    if px < b.x1 || px > b.x2 {
                        continue;
                    }
                    let u = (px - b.x1) / (b.x2 - b.x1);
                    let v = (py - b.y1) / (b.y2 - b.y1);
                    if s.kind.covers(u, v) {
                        img.set_pixel(y, x, &s.color.rgb());
                    }
                }
            }
        }
        img
    }

    /// `a red square and a blue circle .`, shapes left to right.
    pub fn caption(&self) -> String {
        let phrases: Vec<String> = self.shapes.iter().map(Shape::phrase).collect();
        format!("{} .", phrases.join(" and "))
    }

    pub fn shape_of(&self, kind: ShapeKind) -> Option<&Shape> {
        self.shapes.iter().find(|s| s.kind == kind)
    }
}

/// `what color is the square ?`
pub fn color_question(kind: ShapeKind) -> String {
    format!("what color is the {} ?", kind.word())
}
