use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::domain::MediaType;
use crate::gateway::LoadedImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredImage {
    pub media_type: MediaType,
    pub bytes: Arc<[u8]>,
}

/// Content-addressed image bytes, stored as `<digest>.<ext>`.
pub struct ImageStore {
    dir: Option<PathBuf>,
    cache: RwLock<HashMap<String, StoredImage>>,
}

const EXTENSIONS: [(&str, MediaType); 3] = [("jpg", MediaType::Jpeg), ("png", MediaType::Png), ("webp", MediaType::Webp)];

fn extension(media_type: MediaType) -> &'static str {
    EXTENSIONS.iter().find(|(_, m)| *m == media_type).map(|(e, _)| *e).expect("every media type has an extension")
}

fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl ImageStore {
    pub fn in_memory() -> Self {
        Self { dir: None, cache: RwLock::new(HashMap::new()) }
    }

    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: Some(dir.to_path_buf()), cache: RwLock::new(HashMap::new()) })
    }

    pub fn put(&self, image: &LoadedImage) -> std::io::Result<()> {
        let digest = &image.image.digest;
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{digest}.{}", extension(image.image.media_type)));
            if !path.exists() {
                std::fs::write(&path, &image.bytes)?;
            }
        }
        self.cache.write().insert(
            digest.clone(),
            StoredImage { media_type: image.image.media_type, bytes: image.bytes.clone() },
        );
        Ok(())
    }

    pub fn get(&self, digest: &str) -> Option<StoredImage> {
        if !is_digest(digest) {
            return None;
        }
        if let Some(hit) = self.cache.read().get(digest) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        EXTENSIONS.iter().find_map(|(ext, media_type)| {
            let bytes = std::fs::read(dir.join(format!("{digest}.{ext}"))).ok()?;
            let stored = StoredImage { media_type: *media_type, bytes: bytes.into() };
            self.cache.write().insert(digest.to_string(), stored.clone());
            Some(stored)
        })
    }
}
