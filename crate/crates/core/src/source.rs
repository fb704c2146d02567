//! Collections of descriptor sets that may live in memory or on disk, and
//! the fixed-width parallel map used by batch operations.

use std::borrow::Cow;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::Result;
use crate::ppf::{read_ppf, PointPatternSet};

/// Random-access view of a collection of sets, so fitting and scoring can
/// stream from disk instead of holding every set in memory.
pub trait SetSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, index: usize) -> Result<Cow<'_, PointPatternSet>>;
}

impl SetSource for [PointPatternSet] {
    fn len(&self) -> usize {
        <[PointPatternSet]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Cow<'_, PointPatternSet>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

impl SetSource for [&PointPatternSet] {
    fn len(&self) -> usize {
        <[&PointPatternSet]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Cow<'_, PointPatternSet>> {
        Ok(Cow::Borrowed(self[index]))
    }
}

/// PPF files read on demand.
#[derive(Debug, Clone, Default)]
pub struct PpfFiles(pub Vec<PathBuf>);

impl SetSource for PpfFiles {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, PointPatternSet>> {
        read_ppf(&self.0[index]).map(Cow::Owned)
    }
}

/// `(0..len).map(f)`, run on `jobs` threads when `jobs > 1`. Output order
/// always follows the index.
pub fn par_map<T, F>(len: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if jobs <= 1 || len <= 1 {
        return (0..len).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..len).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            (0..len).map(f).collect()
        }
    }
}
