//! Scene records: one image's detections, stored as JSON Lines.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::tokenize::normalize_token;

pub const MAX_OBJECTS: usize = 100;
pub const MAX_OCR_TOKENS: usize = 80;
pub const MAX_CONCEPT_CANDIDATES: usize = 15;
/// Confidence assigned to OCR entries that do not carry one.
pub const DEFAULT_OCR_CONFIDENCE: f64 = 0.9;

/// Pixel-space box `[x_tl, y_tl, x_br, y_br]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl BoundingBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Self {
        Self { x_tl, y_tl, x_br, y_br }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_tl, self.y_tl, self.x_br, self.y_br]
    }

    /// `0 <= x_tl < x_br <= width` and likewise vertically.
    pub fn check_within(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        let [a, b, c, d] = self.as_array();
        if !self.as_array().iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite coordinate in {:?}", self.as_array()));
        }
        if !(0.0 <= a && a < c && c <= width as f64) {
            return Err(format!("x range [{a}, {c}) not within 0..{width} with x_tl < x_br"));
        }
        if !(0.0 <= b && b < d && d <= height as f64) {
            return Err(format!("y range [{b}, {d}) not within 0..{height} with y_tl < y_br"));
        }
        Ok(())
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub feat: Vec<f64>,
}

fn default_conf() -> f64 {
    DEFAULT_OCR_CONFIDENCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrEntry {
    pub token: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub feat: Vec<f64>,
    #[serde(default = "default_conf")]
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptCandidate {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectEntry>,
    pub ocr: Vec<OcrEntry>,
    #[serde(default)]
    pub concepts: Vec<ConceptCandidate>,
    #[serde(default)]
    pub captions: Vec<String>,
    /// Path to the P5 depth map, relative to the records file.
    pub depth_map: String,
}

impl SceneRecord {
    /// Appearance feature width shared by objects and OCR tokens.
    pub fn feature_dim(&self) -> usize {
        self.objects.first().map_or(0, |o| o.feat.len())
    }

    /// OCR surfaces under the shared caption tokenization.
    pub fn ocr_surfaces(&self) -> Vec<String> {
        self.ocr.iter().map(|o| normalize_token(&o.token)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: String, msg: String| Error::Validation {
            record: self.id.clone(),
            field,
            msg,
        };
        if self.id.is_empty() {
            return Err(fail("id".into(), "empty".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(fail(
                "width/height".into(),
                format!("{}x{} image", self.width, self.height),
            ));
        }
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(fail(
                "objects".into(),
                format!("{} entries; need 1..={MAX_OBJECTS}", self.objects.len()),
            ));
        }
        if self.ocr.is_empty() || self.ocr.len() > MAX_OCR_TOKENS {
            return Err(fail(
                "ocr".into(),
                format!(
                    "{} entries; need 1..={MAX_OCR_TOKENS} (limit {MAX_OCR_TOKENS})",
                    self.ocr.len()
                ),
            ));
        }
        if self.concepts.len() > MAX_CONCEPT_CANDIDATES {
            return Err(fail(
                "concepts".into(),
                format!("{} candidates exceeds {MAX_CONCEPT_CANDIDATES}", self.concepts.len()),
            ));
        }
        let d = self.feature_dim();
        if d == 0 {
            return Err(fail("objects[0].feat".into(), "empty feature vector".into()));
        }
        let check_feat = |field: String, feat: &[f64]| -> Result<()> {
            if feat.len() != d {
                return Err(fail(
                    field,
                    format!("length {} but record feature dim is {d}", feat.len()),
                ));
            }
            if feat.iter().any(|v| !v.is_finite()) {
                return Err(fail(field, "non-finite value".into()));
            }
            Ok(())
        };
        for (i, o) in self.objects.iter().enumerate() {
            o.bbox
                .check_within(self.width, self.height)
                .map_err(|m| fail(format!("objects[{i}].box"), m))?;
            check_feat(format!("objects[{i}].feat"), &o.feat)?;
        }
        for (i, o) in self.ocr.iter().enumerate() {
            o.bbox
                .check_within(self.width, self.height)
                .map_err(|m| fail(format!("ocr[{i}].box"), m))?;
            check_feat(format!("ocr[{i}].feat"), &o.feat)?;
            if !(0.0..=1.0).contains(&o.conf) {
                return Err(fail(format!("ocr[{i}].conf"), format!("{} outside [0, 1]", o.conf)));
            }
            if !o.token.chars().any(|c| c.is_ascii_alphanumeric()) {
                return Err(fail(
                    format!("ocr[{i}].token"),
                    format!("{:?} has no [a-z0-9] characters", o.token),
                ));
            }
        }
        for (i, c) in self.concepts.iter().enumerate() {
            if c.word.trim().is_empty() {
                return Err(fail(format!("concepts[{i}].word"), "empty".into()));
            }
            if !c.score.is_finite() {
                return Err(fail(format!("concepts[{i}].score"), "non-finite".into()));
            }
        }
        if self.depth_map.is_empty() {
            return Err(fail("depth_map".into(), "empty path".into()));
        }
        Ok(())
    }
}

/// Parses JSON Lines, validating every record. Blank lines are rejected.
pub fn parse_scene_records(text: &str, origin: &str) -> Result<Vec<SceneRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let record: SceneRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        record.validate()?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Validation {
                record: record.id,
                field: "id".into(),
                msg: format!("duplicate id at line {line_no}"),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_scene_records(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_records(&text, &path.display().to_string())
}

pub fn scene_records_to_string(records: &[SceneRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_scene_records(path: impl AsRef<Path>, records: &[SceneRecord]) -> Result<()> {
    let path = path.as_ref();
    let text = scene_records_to_string(records)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
