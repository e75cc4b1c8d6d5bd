//! Geometry kernel: relation classification, overlap, flips and recentering.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounded::{category_counts, BoundingBox, EntityId, ImageRecord};

/// Spatial relation of a subject box to an object box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Subject lies entirely left of the object.
    Left,
    /// Subject lies entirely right of the object.
    Right,
    /// Subject lies entirely above the object.
    Above,
    /// Subject lies entirely below the object.
    Below,
}

impl Relation {
    /// The relation with the opposite keyword (left/right, above/below).
    pub fn opposite(self) -> Self {
        match self {
            Self::Left => Self::Right,
            Self::Right => Self::Left,
            Self::Above => Self::Below,
            Self::Below => Self::Above,
        }
    }

    /// The relation seen in a horizontally mirrored image.
    pub fn mirrored(self) -> Self {
        match self {
            Self::Left => Self::Right,
            Self::Right => Self::Left,
            other => other,
        }
    }

    /// Left or right.
    pub fn is_horizontal(self) -> bool {
        matches!(self, Self::Left | Self::Right)
    }

    /// Caption phrase between the two noun phrases.
    pub fn phrase(self) -> &'static str {
        match self {
            Self::Left => "is to the left of",
            Self::Right => "is to the right of",
            Self::Above => "is above",
            Self::Below => "is below",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Above => "above",
            Self::Below => "below",
        })
    }
}

/// Relations holding between two boxes: at most one horizontal and at most
/// one vertical.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Relations {
    horizontal: Option<Relation>,
    vertical: Option<Relation>,
}

impl Relations {
    /// Whether `rel` holds.
    pub fn contains(&self, rel: Relation) -> bool {
        self.horizontal == Some(rel) || self.vertical == Some(rel)
    }
    /// No relation holds (the boxes overlap on both axes).
    pub fn is_empty(&self) -> bool {
        self.horizontal.is_none() && self.vertical.is_none()
    }
    /// Number of relations, 0 to 2.
    pub fn len(&self) -> usize {
        usize::from(self.horizontal.is_some()) + usize::from(self.vertical.is_some())
    }
    /// Horizontal relation, if any.
    pub fn horizontal(&self) -> Option<Relation> {
        self.horizontal
    }
    /// Vertical relation, if any.
    pub fn vertical(&self) -> Option<Relation> {
        self.vertical
    }
    /// Horizontal first, then vertical.
    pub fn iter(&self) -> impl Iterator<Item = Relation> {
        self.horizontal.into_iter().chain(self.vertical)
    }
}

/// An ordered entity pair in one image with the relation subject→object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFact {
    /// Image the entities belong to.
    pub image_id: String,
    /// Subject entity.
    pub subject: EntityId,
    /// Object entity.
    pub object: EntityId,
    /// Relation of subject to object.
    pub relation: Relation,
}

/// Relations of `a` to `b`.
///
/// `a` is left of `b` iff `a.x2 <= b.x1`, right iff `a.x1 >= b.x2`, above iff
/// `a.y2 <= b.y1`, below iff `a.y1 >= b.y2`. Touching edges count.
pub fn classify_relations(a: &BoundingBox, b: &BoundingBox) -> Relations {
    let horizontal = if a.x2() <= b.x1() {
        Some(Relation::Left)
    } else if a.x1() >= b.x2() {
        Some(Relation::Right)
    } else {
        None
    };
    let vertical = if a.y2() <= b.y1() {
        Some(Relation::Above)
    } else if a.y1() >= b.y2() {
        Some(Relation::Below)
    } else {
        None
    };
    Relations { horizontal, vertical }
}

/// Whether the intersection has positive area. Touching edges do not overlap.
pub fn boxes_overlap(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x1().max(b.x1()) < a.x2().min(b.x2()) && a.y1().max(b.y1()) < a.y2().min(b.y2())
}

/// Mirror a box across the vertical centre line of a `width`-wide canvas.
///
/// # Panics
///
/// If the box does not fit within `width`.
pub fn hflip_box(b: &BoundingBox, width: u32) -> BoundingBox {
    assert!(b.x2() <= width, "box {b} exceeds canvas width {width}");
    BoundingBox::new(width - b.x2(), b.y1(), width - b.x1(), b.y2())
        .expect("mirroring preserves extent")
}

/// A recentred box that cannot fit the canvas at its original size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("box {bbox} does not fit a {width}x{height} canvas")]
pub struct Unsatisfiable {
    /// The box that cannot be placed.
    pub bbox: BoundingBox,
    /// Canvas width.
    pub width: u32,
    /// Canvas height.
    pub height: u32,
}

/// Places an extent of `size` centred on `doubled_center / 2` along one axis,
/// then translates it minimally into `0..limit`. Returns the start and
/// whether a translation happened.
fn place_axis(size: u32, doubled_center: i64, round_up: bool, limit: u32) -> (u32, bool) {
    let offset = doubled_center - i64::from(size);
    let start = if round_up { offset.div_euclid(2) + offset.rem_euclid(2) } else { offset.div_euclid(2) };
    let max_start = i64::from(limit - size);
    let clamped = start.clamp(0, max_start);
    (clamped as u32, clamped != start)
}

fn recenter(
    b: &BoundingBox,
    target: &BoundingBox,
    round_up: bool,
    width: u32,
    height: u32,
) -> Result<(BoundingBox, bool), Unsatisfiable> {
    if b.width() > width || b.height() > height {
        return Err(Unsatisfiable { bbox: *b, width, height });
    }
    let cx = i64::from(target.x1()) + i64::from(target.x2());
    let cy = i64::from(target.y1()) + i64::from(target.y2());
    let (x1, cx_moved) = place_axis(b.width(), cx, round_up, width);
    let (y1, cy_moved) = place_axis(b.height(), cy, round_up, height);
    let out = BoundingBox::new(x1, y1, x1 + b.width(), y1 + b.height()).expect("size preserved");
    Ok((out, cx_moved || cy_moved))
}

/// Swaps the centres of two boxes while keeping each box's size.
///
/// `a'` gets `a`'s size centred on `b`'s centre and vice versa. Half-pixel
/// centres round down for `a'` and up for `b'`, which makes the swap its own
/// inverse whenever no clamping is needed. A recentred box that leaves the
/// canvas is translated the minimum distance back inside.
pub fn swap_centers(
    a: &BoundingBox,
    b: &BoundingBox,
    width: u32,
    height: u32,
) -> Result<(BoundingBox, BoundingBox), Unsatisfiable> {
    let (a2, _) = recenter(a, b, false, width, height)?;
    let (b2, _) = recenter(b, a, true, width, height)?;
    Ok((a2, b2))
}

/// Whether [`swap_centers`] would need to translate either box.
pub fn swap_needs_clamp(a: &BoundingBox, b: &BoundingBox, width: u32, height: u32) -> Result<bool, Unsatisfiable> {
    let (_, ca) = recenter(a, b, false, width, height)?;
    let (_, cb) = recenter(b, a, true, width, height)?;
    Ok(ca || cb)
}

/// True iff no category has more than one boxed instance.
pub fn unique_category_filter(record: &ImageRecord) -> bool {
    category_counts(record).values().all(|&n| n <= 1)
}
