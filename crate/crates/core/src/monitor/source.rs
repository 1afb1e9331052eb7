//! File-backed frame sources.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::backbone::Image;

use super::ppm::read_ppm;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub timestamp_ms: u64,
    pub image: Image,
}

/// Ordered PPM files read lazily. A frame's index is its position in the
/// listing and its timestamp is `index * interval_ms`; files that cannot be
/// read or decoded are skipped with a warning.
#[derive(Debug, Clone)]
pub struct FrameSource {
    paths: Vec<PathBuf>,
    next: usize,
    interval_ms: u64,
}

impl FrameSource {
    pub fn from_paths(paths: Vec<PathBuf>, interval_ms: u64) -> Self {
        Self {
            paths,
            next: 0,
            interval_ms,
        }
    }

    /// Every `*.ppm` in `dir`, sorted by file name.
    pub fn directory(dir: impl AsRef<Path>, interval_ms: u64) -> io::Result<Self> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "ppm") && path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(Self::from_paths(paths, interval_ms))
    }

    /// One path per line; blank lines and `#` lines are ignored and relative
    /// paths resolve against the manifest's directory.
    pub fn manifest(path: impl AsRef<Path>, interval_ms: u64) -> io::Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(path)?;
        let paths = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| base.join(l))
            .collect();
        Ok(Self::from_paths(paths, interval_ms))
    }

    /// A directory is listed, anything else is read as a manifest.
    pub fn open(path: impl AsRef<Path>, interval_ms: u64) -> io::Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            Self::directory(path, interval_ms)
        } else {
            Self::manifest(path, interval_ms)
        }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl Iterator for FrameSource {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        while self.next < self.paths.len() {
            let index = self.next;
            self.next += 1;
            let path = &self.paths[index];
            let decoded = fs::read(path)
                .map_err(|e| e.to_string())
                .and_then(|b| read_ppm(&b).map_err(|e| e.to_string()));
            match decoded {
                Ok(image) => {
                    return Some(Frame {
                        index: index as u64,
                        timestamp_ms: index as u64 * self.interval_ms,
                        image,
                    });
                }
                Err(e) => log::warn!("skipping frame {}: {e}", path.display()),
            }
        }
        None
    }
}
