//! A small synthetic grounded corpus with flat-colour images, for smoke
//! runs and tests without real data.
//!
//! Even indices are positions scenes: two or three categories, one box
//! each, in distinct grid cells. Odd indices are counting scenes: two
//! categories with several boxes each, some of which overlap.

use std::collections::BTreeMap;
use std::path::Path;

use countercurate_core::grounded::{parse_entity_caption, BoundingBox, EntityId, ImageRecord};
use countercurate_core::rng::keyed_rng;
use countercurate_core::text::{count_phrase, with_article, NumberStyle};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::write_corpus;
use crate::images::{fill_rect, key_color, save_png};

pub const WIDTH: u32 = 240;
pub const HEIGHT: u32 = 160;
const COLS: u32 = 3;
const ROWS: u32 = 2;

/// (category, entity type).
const CATEGORIES: [(&str, &str); 10] = [
    ("dog", "animals"),
    ("cat", "animals"),
    ("woman", "people"),
    ("man", "people"),
    ("bike", "vehicles"),
    ("car", "vehicles"),
    ("tree", "scene"),
    ("ball", "other"),
    ("bench", "other"),
    ("kite", "other"),
];

const ADJECTIVES: [&str; 6] = ["red", "small", "old", "striped", "wooden", "tall"];
const LINKS: [&str; 4] = ["near", "beside", "and", "with"];

fn cell_box(rng: &mut impl Rng, cell: u32) -> BoundingBox {
    let (cw, ch) = (WIDTH / COLS, HEIGHT / ROWS);
    let (cx, cy) = ((cell % COLS) * cw, (cell / COLS) * ch);
    let x1 = cx + rng.random_range(2..cw / 4);
    let y1 = cy + rng.random_range(2..ch / 4);
    let x2 = cx + cw - rng.random_range(2..cw / 4);
    let y2 = cy + ch - rng.random_range(2..ch / 4);
    BoundingBox::new(x1, y1, x2, y2).expect("cell box is proper")
}

fn positions_scene(rng: &mut impl Rng, id: &str) -> ImageRecord {
    let n = rng.random_range(2..=3usize);
    let mut cats = CATEGORIES.to_vec();
    cats.shuffle(rng);
    let mut cells: Vec<u32> = (0..COLS * ROWS).collect();
    cells.shuffle(rng);
    let mut phrases = Vec::new();
    let mut boxes = BTreeMap::new();
    let mut categories = BTreeMap::new();
    for (k, ((cat, ty), cell)) in cats.iter().zip(&cells).take(n).enumerate() {
        let eid = k as EntityId + 1;
        let adj = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
        phrases.push(format!("[/EN#{eid}/{ty} {}]", with_article(&format!("{adj} {cat}"))));
        boxes.insert(eid, vec![cell_box(rng, *cell)]);
        categories.insert(eid, cat.to_string());
    }
    let link = LINKS[rng.random_range(0..LINKS.len())];
    record(id, &phrases.join(&format!(" {link} ")), boxes, categories)
}

fn counting_scene(rng: &mut impl Rng, id: &str) -> ImageRecord {
    let mut cats = CATEGORIES.to_vec();
    cats.shuffle(rng);
    let (p, q) = (cats[0], cats[1]);
    let n_p = rng.random_range(1..=2u32);
    let n_q = rng.random_range(n_p + 1..=4u32);
    let mut cells: Vec<u32> = (0..COLS * ROWS).collect();
    cells.shuffle(rng);
    let overlapping = rng.random_bool(0.5);
    let mut next_cell = cells.into_iter();
    let mut all: Vec<BoundingBox> = Vec::new();
    for _ in 0..n_p + n_q {
        let b = match next_cell.next() {
            Some(cell) if !(overlapping && all.len() == 1) => cell_box(rng, cell),
            _ => {
                // straddle an existing box so it overlaps
                let base = all[rng.random_range(0..all.len())];
                let x1 = (base.x1() + base.width() / 2).min(WIDTH - 12);
                let y1 = (base.y1() + base.height() / 2).min(HEIGHT - 12);
                BoundingBox::new(x1, y1, (x1 + 30).min(WIDTH), (y1 + 24).min(HEIGHT)).expect("proper")
            }
        };
        all.push(b);
    }
    let q_boxes = all.split_off(n_p as usize);
    let p_boxes = all;
    let caption = format!(
        "[/EN#1/{} {}] {} [/EN#2/{} {}]",
        p.1,
        count_phrase(n_p, p.0, NumberStyle::Words),
        LINKS[rng.random_range(0..LINKS.len())],
        q.1,
        count_phrase(n_q, q.0, NumberStyle::Words),
    );
    let boxes = BTreeMap::from([(1, p_boxes), (2, q_boxes)]);
    let categories = BTreeMap::from([(1, p.0.to_string()), (2, q.0.to_string())]);
    record(id, &caption, boxes, categories)
}

fn record(
    id: &str,
    caption: &str,
    boxes: BTreeMap<EntityId, Vec<BoundingBox>>,
    categories: BTreeMap<EntityId, String>,
) -> ImageRecord {
    let caption = parse_entity_caption(caption).expect("synthetic caption parses");
    ImageRecord::new(id, WIDTH, HEIGHT, format!("images/{id}.png"), vec![caption], boxes, categories)
        .expect("synthetic record is valid")
}

/// The `i`th record for `seed`.
pub fn synth_record(seed: u64, i: usize) -> ImageRecord {
    let mut rng = keyed_rng(seed, &format!("synth/{i}"));
    let id = format!("syn{i:05}");
    if i.is_multiple_of(2) {
        positions_scene(&mut rng, &id)
    } else {
        counting_scene(&mut rng, &id)
    }
}

/// Draws a record: a flat background with each box filled by its category
/// colour.
pub fn render(record: &ImageRecord) -> RgbImage {
    let mut img = RgbImage::from_pixel(record.width(), record.height(), Rgb(key_color(record.image_id())));
    for (eid, b) in record.all_boxes() {
        fill_rect(&mut img, &b, key_color(record.category(eid).unwrap_or("")));
    }
    img
}

/// Writes `corpus.jsonl` and `images/` under `dir`; returns the records.
pub fn write_synthetic_corpus(dir: &Path, count: usize, seed: u64) -> std::io::Result<Vec<ImageRecord>> {
    let records: Vec<ImageRecord> = (0..count).map(|i| synth_record(seed, i)).collect();
    for r in &records {
        save_png(&render(r), &dir.join(r.image_path())).map_err(std::io::Error::other)?;
    }
    write_corpus(&dir.join("corpus.jsonl"), &records)?;
    Ok(records)
}
