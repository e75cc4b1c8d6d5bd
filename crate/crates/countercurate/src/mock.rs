//! Deterministic stand-ins for the generation and language-model services.

use std::sync::Arc;

use countercurate_core::grounded::{parse_entity_caption, GroundedCaption};
use countercurate_core::jobs::{ExpectedFormat, JobKind, JobSpec};
use countercurate_core::text::indefinite_article;
use sha2::{Digest, Sha256};

use crate::clients::{Client, ClientError, LocalFlip, Output, Registry, ResolvedJob};
use crate::images;

/// Side of the square canvas mock text-to-image renders.
pub const MOCK_T2I_SIZE: u32 = 64;

const NOUN_SUBSTITUTES: [&str; 5] = ["statue", "robot", "puppet", "scarecrow", "mannequin"];
const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "pink", "black", "white", "purple"];

/// Placeholder images for inpaint, grounded and plain generation.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockImageClient;

impl Client for MockImageClient {
    fn name(&self) -> &str {
        "mock-image"
    }

    fn execute(&self, job: &ResolvedJob) -> Result<Output, ClientError> {
        let img = match &job.job.spec {
            JobSpec::Inpaint { regions, .. } => {
                let bytes = job.source.as_deref().ok_or_else(|| ClientError::fatal("source image missing"))?;
                let src = images::decode(bytes).map_err(|e| ClientError::fatal(e.to_string()))?;
                images::placeholder_inpaint(&src, regions)
            }
            JobSpec::BoxedT2I { width, height, regions, .. } => {
                let prompt = job.prompt.as_deref().ok_or_else(|| ClientError::fatal("prompt unresolved"))?;
                images::placeholder(*width, *height, prompt, regions)
            }
            JobSpec::TextToImage { prompt, .. } => images::placeholder(MOCK_T2I_SIZE, MOCK_T2I_SIZE, prompt, &[]),
            other => return Err(ClientError::fatal(format!("mock image client cannot run {}", other.kind()))),
        };
        Ok(Output::Image(images::png_bytes(&img)))
    }
}

/// Echoes free-text requests and fabricates attribute answers from the
/// tagged caption in the request.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockLlmClient;

impl Client for MockLlmClient {
    fn name(&self) -> &str {
        "mock-llm"
    }

    fn execute(&self, job: &ResolvedJob) -> Result<Output, ClientError> {
        let JobSpec::LlmText { request } = &job.job.spec else {
            return Err(ClientError::fatal(format!("mock llm cannot run {}", job.job.kind())));
        };
        Ok(Output::Text(match request.expected_format {
            ExpectedFormat::FreeText => request.user.clone(),
            ExpectedFormat::AttributeJson => mock_attribute_answer(&request.user),
        }))
    }
}

/// Flips locally, everything else mocked.
pub fn mock_registry(max_in_flight: usize) -> Registry {
    let mut r = Registry::new();
    r.register(JobKind::HFlip, Arc::new(LocalFlip), max_in_flight);
    for kind in [JobKind::Inpaint, JobKind::BoxedT2I, JobKind::TextToImage] {
        r.register(kind, Arc::new(MockImageClient), max_in_flight);
    }
    r.register(JobKind::LlmText, Arc::new(MockLlmClient), max_in_flight);
    r
}

fn pick<'a>(options: &[&'a str], key: &str, avoid: &str) -> &'a str {
    let start = Sha256::digest(key.as_bytes())[0] as usize;
    (0..options.len())
        .map(|i| options[(start + i) % options.len()])
        .find(|o| !o.eq_ignore_ascii_case(avoid))
        .expect("at least two options")
}

fn replace_noun(phrase: &str) -> String {
    let (head, last) = phrase.rsplit_once(' ').unwrap_or(("", phrase));
    let new = pick(&NOUN_SUBSTITUTES, phrase, last);
    let head = match head {
        "a" | "an" | "A" | "An" => {
            let art = indefinite_article(new);
            if head.starts_with('A') { capitalize(art) } else { art.into() }
        }
        h => h.into(),
    };
    if head.is_empty() { new.into() } else { format!("{head} {new}") }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn recolor(phrase: &str) -> String {
    let words: Vec<&str> = phrase.split(' ').collect();
    if let Some(i) = words.iter().position(|w| COLORS.contains(&w.to_ascii_lowercase().as_str())) {
        let new = pick(&COLORS, phrase, words[i]);
        let mut out: Vec<String> = words.iter().map(|w| (*w).to_string()).collect();
        out[i] = new.into();
        return out.join(" ");
    }
    let color = pick(&COLORS, phrase, "");
    match words.as_slice() {
        [det, rest @ ..] if !rest.is_empty() && matches!(det.to_ascii_lowercase().as_str(), "a" | "an") => {
            let art = indefinite_article(color);
            let art = if det.starts_with('A') { capitalize(art) } else { art.into() };
            format!("{art} {color} {}", rest.join(" "))
        }
        [det, rest @ ..] if !rest.is_empty() => format!("{det} {color} {}", rest.join(" ")),
        _ => format!("{color} {phrase}"),
    }
}

fn substitute(caption: &GroundedCaption, edits: &[(usize, String)]) -> String {
    let plain = caption.plain();
    let mut edits: Vec<(std::ops::Range<usize>, &str)> =
        edits.iter().map(|(k, new)| (caption.spans()[*k].range.clone(), new.as_str())).collect();
    edits.sort_by_key(|(r, _)| r.start);
    let mut out = String::new();
    let mut at = 0;
    for (r, new) in edits {
        out.push_str(&plain[at..r.start]);
        out.push_str(new);
        at = r.end;
    }
    out.push_str(&plain[at..]);
    out
}

/// A well-formed attribute answer for the request's tagged caption: the
/// first phrase's noun replaced, the second phrase (or the first) recoloured
/// and, with two or more phrases, the first two swapped.
pub fn mock_attribute_answer(user: &str) -> String {
    let tagged = user.lines().find_map(|l| l.strip_prefix("Enhanced Caption: ")).unwrap_or("");
    let Ok(caption) = parse_entity_caption(tagged) else {
        return "I cannot parse this caption.".into();
    };
    let spans = caption.spans();
    if spans.is_empty() {
        return "There are no tagged entities to edit.".into();
    }
    let noun_phrase = replace_noun(&spans[0].phrase);
    let adj_idx = usize::from(spans.len() > 1);
    let adj_phrase = recolor(&spans[adj_idx].phrase);
    let reverse = if spans.len() > 1 && !spans[0].phrase.eq_ignore_ascii_case(&spans[1].phrase) {
        serde_json::json!({
            "action": [spans[0].entity_id, spans[1].entity_id],
            "caption": substitute(&caption, &[(0, spans[1].phrase.clone()), (1, spans[0].phrase.clone())]),
        })
    } else {
        serde_json::Value::Null
    };
    serde_json::json!({
        "noun": {
            "action": [spans[0].entity_id, spans[0].phrase, noun_phrase],
            "caption": substitute(&caption, &[(0, noun_phrase.clone())]),
        },
        "adjective": {
            "action": [spans[adj_idx].entity_id, spans[adj_idx].phrase, adj_phrase],
            "caption": substitute(&caption, &[(adj_idx, adj_phrase.clone())]),
        },
        "reverse": reverse,
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use countercurate_core::attributes::{parse_attribute_response, single_slot_ok, NegativeKind};

    #[test]
    fn answer_is_parseable_and_single_slot() {
        let user = "Original Caption: A child in a pink dress\nEnhanced Caption: [/EN#1/people A child] in [/EN#2/clothing a pink dress]\nBounding Boxes: #1: purple\nYour answer:";
        let n = parse_attribute_response(&mock_attribute_answer(user)).unwrap();
        let plain = "A child in a pink dress";
        assert_eq!(n.noun.action.entity_id, 1);
        assert_ne!(n.noun.caption, plain);
        assert!(n.adjective.caption.starts_with("A child in a "));
        assert!(!n.adjective.caption.contains("pink"));
        assert_eq!(n.reverse.as_ref().unwrap().caption, "a pink dress in A child");
        assert!(single_slot_ok(NegativeKind::Noun, plain, &n.noun.caption));
        assert!(single_slot_ok(NegativeKind::Adjective, plain, &n.adjective.caption));
        assert_eq!(mock_attribute_answer(user), mock_attribute_answer(user));
    }

    #[test]
    fn single_entity_has_no_reverse() {
        let user = "Enhanced Caption: [/EN#4/animals an apple] on the table";
        let n = parse_attribute_response(&mock_attribute_answer(user)).unwrap();
        assert!(n.reverse.is_none());
        assert!(n.adjective.action.new_phrase.starts_with("a ") || n.adjective.action.new_phrase.starts_with("an "));
        assert!(parse_attribute_response(&mock_attribute_answer("Enhanced Caption: nothing here")).is_err());
    }
}
