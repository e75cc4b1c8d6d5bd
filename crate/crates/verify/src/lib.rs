//! Reference oracles, written from the definitions on raw edge
//! coordinates rather than through the library code they check.

use countercurate_core::spatial::Relation;

/// `[x1, y1, x2, y2]`.
pub type Edges = [u32; 4];

/// Relations of `a` to `b`, one inequality each.
pub fn relations(a: Edges, b: Edges) -> Vec<Relation> {
    let mut out = Vec::new();
    if a[2] <= b[0] {
        out.push(Relation::Left);
    }
    if a[0] >= b[2] {
        out.push(Relation::Right);
    }
    if a[3] <= b[1] {
        out.push(Relation::Above);
    }
    if a[1] >= b[3] {
        out.push(Relation::Below);
    }
    out
}

/// Whether the intersection has positive area.
pub fn overlaps(a: Edges, b: Edges) -> bool {
    let w = i64::from(a[2].min(b[2])) - i64::from(a[0].max(b[0]));
    let h = i64::from(a[3].min(b[3])) - i64::from(a[1].max(b[1]));
    w > 0 && h > 0
}

/// The box mirrored on a canvas `width` wide.
pub fn mirrored(a: Edges, width: u32) -> Edges {
    [width - a[2], a[1], width - a[0], a[3]]
}

/// The relation seen from the other box.
pub fn opposite(r: Relation) -> Relation {
    match r {
        Relation::Left => Relation::Right,
        Relation::Right => Relation::Left,
        Relation::Above => Relation::Below,
        Relation::Below => Relation::Above,
    }
}

/// Boxes left after removing `chosen` and every box overlapping it.
pub fn survivors_after_direct_removal(boxes: &[Edges], chosen: usize) -> Vec<usize> {
    (0..boxes.len()).filter(|&j| j != chosen && !overlaps(boxes[chosen], boxes[j])).collect()
}
