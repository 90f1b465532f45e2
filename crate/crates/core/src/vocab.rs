//! Colour/shape vocabulary of the synthetic tabletop scenes.
//!
//! Every (colour, shape) label owns a distinct flat RGB value so that the
//! offline mask and embedding providers can key on exact pixel colours.

use serde::{Deserialize, Serialize};

pub const BACKGROUND_RGB: [u8; 3] = [128, 128, 128];
pub const FLOOR_RGB: [u8; 3] = [196, 178, 140];

pub const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [205, 40, 40]),
    ("green", [40, 170, 60]),
    ("blue", [40, 70, 205]),
    ("yellow", [225, 205, 40]),
    ("purple", [140, 60, 175]),
    ("orange", [240, 130, 30]),
    ("cyan", [40, 195, 205]),
    ("white", [240, 240, 240]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Cylinder,
    Sphere,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Cylinder, Shape::Sphere];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Sphere => "sphere",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Shape words and their synonyms.
    pub fn parse(word: &str) -> Option<Shape> {
        match word {
            "cube" | "cubes" | "box" | "boxes" | "block" | "blocks" | "cuboid" => Some(Shape::Cube),
            "cylinder" | "cylinders" | "can" | "cans" | "tube" | "barrel" => Some(Shape::Cylinder),
            "sphere" | "spheres" | "ball" | "balls" | "orb" => Some(Shape::Sphere),
            _ => None,
        }
    }
}

pub const LABEL_COUNT: usize = COLORS.len() * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub color: usize,
    pub shape: Shape,
}

impl Label {
    pub fn new(color: usize, shape: Shape) -> Self {
        Self { color, shape }
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            color: i / 3,
            shape: Shape::ALL[i % 3],
        }
    }

    pub fn index(&self) -> usize {
        self.color * 3 + self.shape.index()
    }

    pub fn color_name(&self) -> &'static str {
        COLORS[self.color].0
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.color_name(), self.shape.name())
    }

    /// Flat surface colour; shapes of one colour family differ slightly.
    pub fn rgb(&self) -> [u8; 3] {
        let off = 12 * self.shape.index() as u8;
        COLORS[self.color].1.map(|c| c.saturating_sub(off))
    }

    pub fn parse(text: &str) -> Option<Label> {
        match mentions(text).as_slice() {
            [Mention {
                color: Some(c),
                shape: Some(s),
            }] => Some(Label::new(*c, *s)),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = Label> {
        (0..LABEL_COUNT).map(Label::from_index)
    }
}

pub fn color_index(word: &str) -> Option<usize> {
    let w = match word {
        "grey" | "gray" | "silver" => return None,
        "violet" | "magenta" => "purple",
        "teal" | "turquoise" => "cyan",
        other => other,
    };
    COLORS.iter().position(|(n, _)| *n == w)
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// A colour and/or shape reference found in free text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub color: Option<usize>,
    pub shape: Option<Shape>,
}

/// Left-to-right colour/shape references. A colour binds to the next shape
/// word; a colour followed by another colour (or nothing) stands alone.
pub fn mentions(text: &str) -> Vec<Mention> {
    let mut out = Vec::new();
    let mut pending: Option<usize> = None;
    for t in tokens(text) {
        if let Some(c) = color_index(&t) {
            if let Some(p) = pending.replace(c) {
                out.push(Mention {
                    color: Some(p),
                    shape: None,
                });
            }
        } else if let Some(s) = Shape::parse(&t) {
            out.push(Mention {
                color: pending.take(),
                shape: Some(s),
            });
        }
    }
    if let Some(p) = pending {
        out.push(Mention {
            color: Some(p),
            shape: None,
        });
    }
    out
}

pub fn is_floor_word(word: &str) -> bool {
    matches!(word, "floor" | "ground" | "background" | "surface")
}
