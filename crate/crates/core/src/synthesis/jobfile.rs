//! Job files: a `SynthesisJob` with image paths instead of digests and an
//! optional distractor pool for concepts without unrelated knowledge.
//!
//! ```json
//! {"job_id": "demo", "seed": 7, "distractors": ["transportation"],
//!  "concepts": [{"id": "gw", "category": "abstract_concept",
//!                "target_knowledge": "global warming", "images": ["img/gw1.png"]}]}
//! ```

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::extract::pick_distractor;
use crate::domain::{
    Category, ConceptSpec, ImageRef, MediaType, ResponseSources, StructureMode, SynthesisJob, Temperatures,
    TurnWeights,
};

#[derive(Debug, thiserror::Error)]
pub enum JobFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed job file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("image {0}: unsupported media type (expected .jpg, .jpeg, .png or .webp)")]
    MediaType(String),
    #[error("concept '{0}' has no unrelated knowledge and no eligible distractor")]
    NoDistractor(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageEntry {
    Path(String),
    Ref(ImageRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFileConcept {
    pub id: String,
    pub category: Category,
    pub target_knowledge: String,
    #[serde(default)]
    pub unrelated_knowledge: Option<String>,
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    pub job_id: String,
    pub concepts: Vec<JobFileConcept>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub vote_m: Option<usize>,
    #[serde(default)]
    pub response_source: Option<ResponseSources>,
    #[serde(default)]
    pub structure_mode: Option<StructureMode>,
    #[serde(default)]
    pub weights: Option<TurnWeights<f64>>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    #[serde(default)]
    pub temperatures: Option<Temperatures>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub distractors: Vec<String>,
}

impl JobFile {
    /// Resolves image paths against `base_dir` (hashing their bytes) and
    /// fills missing unrelated knowledge from the distractor pool.
    pub fn resolve(self, base_dir: &Path) -> Result<SynthesisJob, JobFileError> {
        let seed = self.seed.unwrap_or(0);
        let mut concepts = Vec::with_capacity(self.concepts.len());
        for c in self.concepts {
            let unrelated = match c.unrelated_knowledge {
                Some(u) => u,
                None => pick_distractor(&c.target_knowledge, &self.distractors, seed)
                    .ok_or_else(|| JobFileError::NoDistractor(c.id.clone()))?,
            };
            let images = c.images.into_iter().map(|e| resolve_image(e, base_dir)).collect::<Result<_, _>>()?;
            concepts.push(ConceptSpec {
                id: c.id,
                category: c.category,
                target_knowledge: c.target_knowledge,
                unrelated_knowledge: unrelated,
                images,
                domain: c.domain,
                description: c.description,
            });
        }
        let mut job = SynthesisJob::new(self.job_id, concepts);
        job.seed = seed;
        job.created_at = self.created_at;
        if let Some(v) = self.vote_m {
            job.vote_m = v;
        }
        if let Some(v) = self.response_source {
            job.response_source = v;
        }
        if let Some(v) = self.structure_mode {
            job.structure_mode = v;
        }
        if let Some(v) = self.weights {
            job.weights = v;
        }
        if let Some(v) = self.max_concurrency {
            job.max_concurrency = v;
        }
        if let Some(v) = self.temperatures {
            job.temperatures = v;
        }
        if let Some(v) = self.max_tokens {
            job.max_tokens = v;
        }
        Ok(job)
    }
}

fn resolve_image(entry: ImageEntry, base_dir: &Path) -> Result<ImageRef, JobFileError> {
    match entry {
        ImageEntry::Ref(r) => Ok(r),
        ImageEntry::Path(locator) => {
            let media_type = MediaType::from_path(&locator).ok_or_else(|| JobFileError::MediaType(locator.clone()))?;
            let path = base_dir.join(&locator);
            let bytes = std::fs::read(&path).map_err(|source| JobFileError::Io { path, source })?;
            Ok(ImageRef::from_bytes(locator, media_type, &bytes))
        }
    }
}

pub fn parse_job_file(text: &str, base_dir: &Path) -> Result<SynthesisJob, JobFileError> {
    serde_json::from_str::<JobFile>(text)?.resolve(base_dir)
}

/// Loads a job file; relative image paths resolve against its directory.
/// Returns the job and that directory.
pub fn load_job_file(path: &Path) -> Result<(SynthesisJob, PathBuf), JobFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| JobFileError::Io { path: path.to_path_buf(), source })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_job_file(&text, &base_dir)?, base_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::sha256_hex;

    #[test]
    fn resolves_paths_and_distractors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"png bytes").unwrap();
        let text = r#"{"job_id":"j","seed":3,"vote_m":5,"distractors":["transportation","cooking"],
            "concepts":[{"id":"gw","category":"abstract_concept","target_knowledge":"global warming","images":["a.png"]}]}"#;
        let job = parse_job_file(text, dir.path()).unwrap();
        assert_eq!(job.vote_m, 5);
        assert_eq!(job.max_concurrency, 4);
        assert_eq!(job.concepts[0].images[0].digest, sha256_hex(b"png bytes"));
        assert!(["transportation", "cooking"].contains(&job.concepts[0].unrelated_knowledge.as_str()));
        assert_eq!(parse_job_file(text, dir.path()).unwrap(), job);
    }

    #[test]
    fn errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        let missing = r#"{"job_id":"j","concepts":[{"id":"c","category":"abstract_concept","target_knowledge":"t","images":["nope.png"]}],"distractors":["d"]}"#;
        assert!(matches!(parse_job_file(missing, dir.path()), Err(JobFileError::Io { .. })));
        let no_pool = r#"{"job_id":"j","concepts":[{"id":"c","category":"abstract_concept","target_knowledge":"t","images":[]}]}"#;
        assert!(matches!(parse_job_file(no_pool, dir.path()), Err(JobFileError::NoDistractor(id)) if id == "c"));
        let unknown = r#"{"job_id":"j","concepts":[],"bogus":1}"#;
        assert!(matches!(parse_job_file(unknown, dir.path()), Err(JobFileError::Parse(_))));
        let gif = r#"{"job_id":"j","concepts":[{"id":"c","category":"abstract_concept","target_knowledge":"t","unrelated_knowledge":"u","images":["x.gif"]}]}"#;
        assert!(matches!(parse_job_file(gif, dir.path()), Err(JobFileError::MediaType(_))));
    }
}
