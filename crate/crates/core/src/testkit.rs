//! Fixture builders for tests: small PDFs written from known strings, and Zotero
//! scenario directories in the [`crate::fixture`] format.
//!
//! Enabled with the `testkit` feature.

use std::path::Path;

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream};

use crate::fixture::FixtureWriter;
use crate::http::{HttpRequest, HttpResponse};
use crate::zotero::{file_url, items_url, PAGE_SIZE};

/// A PDF with one page per entry; `\n` inside an entry starts a new text line.
pub fn text_pdf(pages: &[&str]) -> Vec<u8> {
    build_pdf(pages.iter().map(|p| PageContent::Text(p)).collect())
}

/// A one-page PDF whose only content is an image: no text layer.
pub fn image_only_pdf() -> Vec<u8> {
    build_pdf(vec![PageContent::Image])
}

enum PageContent<'a> {
    Text(&'a str),
    Image,
}

fn build_pdf(pages: Vec<PageContent<'_>>) -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let font_id = doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Helvetica",
        "Encoding" => "WinAnsiEncoding",
    });
    let image_id = doc.add_object(Stream::new(
        dictionary! {
            "Type" => "XObject",
            "Subtype" => "Image",
            "Width" => 2,
            "Height" => 2,
            "ColorSpace" => "DeviceGray",
            "BitsPerComponent" => 8,
        },
        vec![0u8, 255, 255, 0],
    ));
    let resources_id = doc.add_object(dictionary! {
        "Font" => dictionary! { "F1" => font_id },
        "XObject" => dictionary! { "Im1" => image_id },
    });

    let mut kids: Vec<Object> = Vec::new();
    for page in pages {
        let operations = match page {
            PageContent::Text(text) => {
                let mut ops = vec![
                    Operation::new("BT", vec![]),
                    Operation::new("Tf", vec!["F1".into(), 11.into()]),
                    Operation::new("TL", vec![14.into()]),
                    Operation::new("Td", vec![72.into(), 770.into()]),
                ];
                for (i, line) in text.split('\n').enumerate() {
                    if i > 0 {
                        ops.push(Operation::new("T*", vec![]));
                    }
                    ops.push(Operation::new("Tj", vec![Object::string_literal(line)]));
                }
                ops.push(Operation::new("ET", vec![]));
                ops
            }
            PageContent::Image => vec![
                Operation::new("q", vec![]),
                Operation::new("cm", vec![200.into(), 0.into(), 0.into(), 200.into(), 100.into(), 500.into()]),
                Operation::new("Do", vec!["Im1".into()]),
                Operation::new("Q", vec![]),
            ],
        };
        let content = Content { operations }.encode().expect("content encodes");
        let content_id = doc.add_object(Stream::new(dictionary! {}, content));
        let page_id = doc.add_object(dictionary! {
            "Type" => "Page",
            "Parent" => pages_id,
            "Contents" => content_id,
        });
        kids.push(page_id.into());
    }
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! {
            "Type" => "Pages",
            "Kids" => kids,
            "Count" => count,
            "Resources" => resources_id,
            "MediaBox" => vec![0.into(), 0.into(), 595.into(), 842.into()],
        }),
    );
    let catalog_id = doc.add_object(dictionary! {
        "Type" => "Catalog",
        "Pages" => pages_id,
    });
    doc.trailer.set("Root", catalog_id);
    let mut out = Vec::new();
    doc.save_to(&mut out).expect("in-memory save");
    out
}

/// One library item in a scenario.
#[derive(Debug, Clone)]
pub struct FixtureItem {
    pub key: String,
    pub item_type: String,
    pub title: String,
    pub filename: Option<String>,
    pub content_type: Option<String>,
    /// Served from `/items/{key}/file` when present.
    pub file: Option<(String, Vec<u8>)>,
}

impl FixtureItem {
    pub fn pdf(key: &str, filename: &str, title: &str, body: Vec<u8>) -> Self {
        Self {
            key: key.into(),
            item_type: "attachment".into(),
            title: title.into(),
            filename: Some(filename.into()),
            content_type: Some("application/pdf".into()),
            file: Some(("application/pdf".into(), body)),
        }
    }

    pub fn html_snapshot(key: &str, title: &str) -> Self {
        Self {
            key: key.into(),
            item_type: "attachment".into(),
            title: title.into(),
            filename: Some(format!("{key}.html")),
            content_type: Some("text/html".into()),
            file: Some(("text/html".into(), b"<html><body>snapshot</body></html>".to_vec())),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let mut data = serde_json::json!({
            "key": self.key,
            "version": 1,
            "itemType": self.item_type,
            "title": self.title,
            "linkMode": "imported_file",
        });
        if let Some(f) = &self.filename {
            data["filename"] = f.clone().into();
        }
        if let Some(ct) = &self.content_type {
            data["contentType"] = ct.clone().into();
        }
        serde_json::json!({ "key": self.key, "version": 1, "data": data })
    }
}

/// Writes a Zotero scenario: paged listing (100 per page) and file downloads, all gated
/// on `api_key`, plus catch-all 403 responses for any other key.
pub fn write_zotero_scenario(dir: &Path, base_url: &str, api_key: &str, items: &[FixtureItem]) -> std::io::Result<()> {
    let writer = FixtureWriter::create(dir)?;
    let json = |body: Vec<u8>| HttpResponse {
        status: 200,
        headers: vec![("Content-Type".into(), "application/json".into())],
        body,
    };
    let forbidden = HttpResponse {
        status: 403,
        headers: vec![("Content-Type".into(), "text/plain".into())],
        body: b"Forbidden".to_vec(),
    };

    let mut start = 0;
    loop {
        let page: Vec<_> = items.iter().skip(start).take(PAGE_SIZE).map(FixtureItem::to_json).collect();
        let request = HttpRequest::get(items_url(base_url, start));
        let body = serde_json::to_vec_pretty(&page).map_err(std::io::Error::other)?;
        writer.record(&request, &[("Zotero-API-Key", api_key)], false, &json(body))?;
        writer.record(&request, &[], false, &forbidden)?;
        if page.len() < PAGE_SIZE {
            break;
        }
        start += PAGE_SIZE;
    }
    for item in items {
        if let Some((content_type, body)) = &item.file {
            let request = HttpRequest::get(file_url(base_url, &item.key));
            let response = HttpResponse {
                status: 200,
                headers: vec![("Content-Type".into(), content_type.clone())],
                body: body.clone(),
            };
            writer.record(&request, &[("Zotero-API-Key", api_key)], false, &response)?;
            writer.record(&request, &[], false, &forbidden)?;
        }
    }
    Ok(())
}

pub const SICKLE_CELL_LIBRARY_ID: &str = "53";
pub const SICKLE_CELL_FILES: [&str; 2] = [
    "Sundd et al. - 2019 - Pathophysiology of Sickle Cell Disease.pdf",
    "Bender and Carlberg - 1993 - Sickle Cell Disease.pdf",
];

pub const SICKLE_CELL_QUESTION: &str = "How does the HBB gene mutation change the beta-globin subunit of hemoglobin in sickle cell disease, and how do those molecular changes give red blood cells their sickle shape?";

/// Scripted reply used by the end-to-end scenario.
pub const SICKLE_CELL_REPLY: &str = "A single-nucleotide change in the HBB gene swaps glutamic acid for valine at position six of the beta-globin chain [1][2]. The resulting sickle hemoglobin polymerizes when it gives up oxygen [1]. The polymers stretch and stiffen the red cell into a sickle shape, and the rigid cells block small vessels [1]. The substitution is inherited in an autosomal recessive pattern [2].";

/// Page texts of the two scenario documents (written for the fixture; the
/// biomedical content is only narrative).
pub fn sickle_cell_pages() -> [Vec<&'static str>; 2] {
    [
        vec![
            "Sickle cell disease begins with a mutation in the HBB gene. The HBB gene encodes the beta-globin subunit of hemoglobin.\nThe mutation changes glutamic acid to valine at position six of beta-globin, producing sickle hemoglobin (HbS).",
            "When sickle hemoglobin releases oxygen, deoxygenated HbS molecules polymerize into long fibers.\nThe polymer fibers distort red blood cells into the sickle shape. Sickled red blood cells are rigid,\nimpair blood flow, and aggregate in small vessels, which causes pain crises and organ damage.",
        ],
        vec![
            "Sickle cell disease is an inherited disorder of hemoglobin. It follows an autosomal recessive pattern:\npatients carry two copies of the sickle allele of the beta-globin gene.",
            "Diagnosis relies on hemoglobin electrophoresis and newborn screening programs.\nManagement includes hydroxyurea, transfusion, and pain control.",
        ],
    ]
}

/// Writes the two-PDF sickle-cell scenario for group library 53 and returns the item keys.
pub fn write_sickle_cell_scenario(dir: &Path, api_key: &str) -> std::io::Result<[&'static str; 2]> {
    let pages = sickle_cell_pages();
    let keys = ["SUNDD019", "BENDER93"];
    let titles = ["Pathophysiology of Sickle Cell Disease", "Sickle Cell Disease"];
    let items: Vec<FixtureItem> = (0..2)
        .map(|i| FixtureItem::pdf(keys[i], SICKLE_CELL_FILES[i], titles[i], text_pdf(&pages[i])))
        .collect();
    write_zotero_scenario(dir, "https://api.zotero.org/groups/53", api_key, &items)?;
    Ok(keys)
}

// Random data and independent oracles shared by the property suites.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::chunker::{ChunkParams, TextSpan};
use crate::embedder::EmbeddingVector;
use crate::store::{VectorRecord, VectorStore};

/// A random unit vector with components drawn from [-1, 1).
pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if let Ok(u) = EmbeddingVector::normalized(v) {
            return u;
        }
    }
}

/// A store of `n` random records. About one record in ten copies an earlier vector so
/// that exact score ties occur.
pub fn random_store<R: Rng>(rng: &mut R, n: usize, dim: usize) -> VectorStore {
    let mut store = VectorStore::new(dim, format!("random/{dim}"), 500, 200);
    let mut vectors: Vec<EmbeddingVector> = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let vector = match vectors.choose(rng) {
            Some(prev) if rng.random_bool(0.1) => prev.clone(),
            _ => random_unit(rng, dim),
        };
        vectors.push(vector.clone());
        let chunk = crate::chunker::Chunk {
            doc_id: format!("doc{}", rng.random_range(0..50)),
            seq: i,
            text: format!("record {i}"),
            span: (0, 0),
        };
        let mut metadata = std::collections::BTreeMap::new();
        metadata.insert("filename".to_string(), format!("{}.pdf", chunk.doc_id));
        records.push(VectorRecord::new(chunk, vector, metadata));
    }
    store.add_records(records).expect("generated ids are unique");
    store
}

/// Exhaustive score-and-sort: every record scored, sorted by descending score then
/// ascending id, first `k` kept.
pub fn brute_force_top_k(store: &VectorStore, q: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = store
        .records()
        .iter()
        .map(|r| {
            let mut s = 0.0f64;
            for (a, b) in q.values().iter().zip(r.vector.values()) {
                s += f64::from(*a) * f64::from(*b);
            }
            (r.record_id.clone(), s.clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

const WORDS: &[&str] = &[
    "the", "cell", "sickle", "hemoglobin", "a", "of", "polymer", "β-globin", "naïve", "zürich", "数据", "x",
    "antidisestablishmentarianism", "HbS", "and", "oxygen", "—", "é", "👍",
];

/// Random text of roughly `len` characters with words, runs of spaces, line breaks
/// and paragraph breaks, including multi-byte characters.
pub fn random_text<R: Rng>(rng: &mut R, len: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    while count < len {
        let piece: String = match rng.random_range(0..20) {
            0 => "\n\n".into(),
            1 => "\n".into(),
            2 => " ".repeat(rng.random_range(2..5)),
            3 => "\t".into(),
            4 => {
                let n = rng.random_range(1..80);
                (0..n).map(|_| rng.random_range('a'..='z')).collect()
            }
            _ => format!("{} ", WORDS.choose(rng).expect("nonempty")),
        };
        count += piece.chars().count();
        out.push_str(&piece);
    }
    out.chars().take(len).collect()
}

/// Random valid chunking parameters with whitespace separators.
pub fn random_params<R: Rng>(rng: &mut R) -> ChunkParams {
    let size = rng.random_range(1..=600);
    let overlap = rng.random_range(0..size);
    let separators: Vec<String> = match rng.random_range(0..3) {
        0 => vec!["\n\n".into(), "\n".into(), " ".into(), String::new()],
        1 => vec![" ".into(), String::new()],
        _ => vec!["\n".into(), String::new()],
    };
    ChunkParams::new(size, overlap)
        .and_then(|p| p.with_separators(separators))
        .expect("generated params are valid")
}

/// Checks size bound, non-blank text, span/text agreement, ordering, coverage of every
/// non-whitespace character and bounded overlap between neighbours.
pub fn check_chunk_invariants(text: &str, params: &ChunkParams, spans: &[TextSpan]) -> Result<(), String> {
    let chars: Vec<char> = text.chars().collect();
    let max_sep = params.separators.iter().map(|s| s.chars().count()).max().unwrap_or(0);
    let mut covered = vec![false; chars.len()];
    for (i, s) in spans.iter().enumerate() {
        let n = s.text.chars().count();
        if n == 0 || n > params.chunk_size {
            return Err(format!("chunk {i} has length {n}, bound {}", params.chunk_size));
        }
        if s.text.trim().is_empty() {
            return Err(format!("chunk {i} is blank"));
        }
        if s.start > s.end || s.end > chars.len() {
            return Err(format!("chunk {i} span {}..{} out of range", s.start, s.end));
        }
        let slice: String = chars[s.start..s.end].iter().collect();
        if slice.trim() != s.text {
            return Err(format!("chunk {i} text differs from its span"));
        }
        for c in &mut covered[s.start..s.end] {
            *c = true;
        }
        if i > 0 {
            let prev = &spans[i - 1];
            if s.start < prev.start {
                return Err(format!("chunk {i} starts before chunk {}", i - 1));
            }
            let inter = prev.end.min(s.end).saturating_sub(s.start.max(prev.start));
            if inter > params.chunk_overlap + max_sep {
                return Err(format!(
                    "chunks {} and {i} share {inter} characters, bound {}",
                    i - 1,
                    params.chunk_overlap + max_sep
                ));
            }
        }
    }
    if let Some(pos) = chars.iter().zip(&covered).position(|(c, cov)| !c.is_whitespace() && !cov) {
        return Err(format!("character {pos} ({:?}) is not covered", chars[pos]));
    }
    Ok(())
}

/// One frozen chunker case: input, parameters and the expected spans.
#[derive(Debug, Clone)]
pub struct GoldenCase {
    pub name: String,
    pub text: String,
    pub params: ChunkParams,
    pub expected: Vec<TextSpan>,
}

#[derive(serde::Deserialize)]
struct CaseSpec {
    name: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    file: Option<String>,
    chunk_size: usize,
    chunk_overlap: usize,
}

#[derive(serde::Deserialize)]
struct ExpectedFile {
    separators: Vec<String>,
    chunks: Vec<ExpectedChunk>,
}

#[derive(serde::Deserialize)]
struct ExpectedChunk {
    text: String,
    span: [usize; 2],
}

/// Loads `cases.json`, `corpus/` and `expected/` from a golden directory.
pub fn load_golden_cases(dir: &Path) -> std::io::Result<Vec<GoldenCase>> {
    let read_json = |p: &Path| -> std::io::Result<serde_json::Value> {
        serde_json::from_slice(&std::fs::read(p)?).map_err(std::io::Error::other)
    };
    let specs: Vec<CaseSpec> =
        serde_json::from_value(read_json(&dir.join("cases.json"))?).map_err(std::io::Error::other)?;
    let mut cases = Vec::with_capacity(specs.len());
    for spec in specs {
        let text = match (spec.text, spec.file) {
            (Some(t), _) => t,
            (None, Some(f)) => std::fs::read_to_string(dir.join("corpus").join(f))?,
            (None, None) => return Err(std::io::Error::other(format!("case {} has no input", spec.name))),
        };
        let expected: ExpectedFile = serde_json::from_value(read_json(&dir.join("expected").join(format!("{}.json", spec.name)))?)
            .map_err(std::io::Error::other)?;
        let params = ChunkParams::new(spec.chunk_size, spec.chunk_overlap)
            .and_then(|p| p.with_separators(expected.separators))
            .map_err(std::io::Error::other)?;
        cases.push(GoldenCase {
            name: spec.name,
            text,
            params,
            expected: expected
                .chunks
                .into_iter()
                .map(|c| TextSpan {
                    text: c.text,
                    start: c.span[0],
                    end: c.span[1],
                })
                .collect(),
        });
    }
    Ok(cases)
}
