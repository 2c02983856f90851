//! Cache-contents optimization: which files to hold given what users want.
//!
//! Selecting cache contents is a 0-1 knapsack: each candidate file has an
//! integer size in storage units and a value (its estimated request
//! intensity), and the cache has a fixed capacity. The solver is an exact
//! dynamic program over remaining capacity — cheap at catalog scale — with a
//! deterministic tie-break so that repeated runs and the brute-force oracle
//! in the tests agree on the selected set, not just its value.
//!
//! Updates are event-triggered: the cache is re-solved only when a popularity
//! change has been flagged, otherwise it is carried forward untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rateless::{FileId, FileSpec};

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("parameter out of range: {0}")]
    InvalidParameter(String),
    /// No candidate files to place — every file fell below the liveness
    /// threshold. Callers keep the previous cache when this happens.
    #[error("alive set is empty; keeping the previous cache is the caller's fallback")]
    EmptyAliveSet,
}

/// One knapsack candidate: a file, its size, and its estimated worth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheItem {
    pub id: FileId,
    pub size: u32,
    pub value: f64,
}

/// Solver output: the chosen files (ascending id) and their summed worth.
#[derive(Debug, Clone, PartialEq)]
pub struct CachePlan {
    pub files: Vec<FileId>,
    pub total_value: f64,
    pub used_capacity: u32,
}

/// Current cache contents plus the round of the last re-solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheState {
    pub capacity: u32,
    /// Cached file ids, ascending.
    pub contents: Vec<FileId>,
    /// Broadcast round at which the contents were last (re)planned.
    pub epoch: u64,
}

impl CacheState {
    pub fn empty(capacity: u32) -> Self {
        CacheState { capacity, contents: Vec::new(), epoch: 0 }
    }

    pub fn contains(&self, id: FileId) -> bool {
        self.contents.binary_search(&id).is_ok()
    }
}

/// Exact 0-1 knapsack over the candidate files.
///
/// Among equal-value optima the lexicographically smallest id set wins. This
/// falls out of the reconstruction: the value table is computed over item
/// suffixes, and the walk from the front takes every item whose inclusion
/// recomputes the tabulated optimum — the recomputation reuses the exact
/// expression that built the table, so the comparison is float-safe.
pub fn solve_knapsack(items: &[CacheItem], capacity: u32) -> Result<CachePlan, PlacementError> {
    if items.is_empty() {
        return Err(PlacementError::EmptyAliveSet);
    }
    let mut sorted: Vec<CacheItem> = items.to_vec();
    sorted.sort_by_key(|it| it.id);
    for pair in sorted.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(PlacementError::InvalidParameter(format!(
                "duplicate candidate file {}",
                pair[0].id
            )));
        }
    }
    for it in &sorted {
        if it.size == 0 {
            return Err(PlacementError::InvalidParameter(format!(
                "file {} has zero size",
                it.id
            )));
        }
        if !(it.value > 0.0) || !it.value.is_finite() {
            return Err(PlacementError::InvalidParameter(format!(
                "file {} has non-positive value {}",
                it.id, it.value
            )));
        }
    }

    let n = sorted.len();
    let cap = capacity as usize;
    // best[i][w]: optimal value using items i.. with w units free.
    let mut best = vec![vec![0.0f64; cap + 1]; n + 1];
    for i in (0..n).rev() {
        let size = sorted[i].size as usize;
        let value = sorted[i].value;
        for w in 0..=cap {
            let skip = best[i + 1][w];
            best[i][w] = if size <= w {
                skip.max(value + best[i + 1][w - size])
            } else {
                skip
            };
        }
    }

    // Front-to-back walk preferring inclusion: the lexicographically smallest
    // optimal set.
    let mut files = Vec::new();
    let mut used = 0u32;
    let mut w = cap;
    for i in 0..n {
        let size = sorted[i].size as usize;
        if size <= w && sorted[i].value + best[i + 1][w - size] == best[i][w] {
            files.push(sorted[i].id);
            used += sorted[i].size;
            w -= size;
        }
    }
    Ok(CachePlan { files, total_value: best[0][cap], used_capacity: used })
}

/// Event-triggered cache update: re-solve only when a change was flagged.
///
/// With no flag the state is returned as-is (epoch included). With a flag the
/// knapsack is re-solved over the current candidates and the epoch advances,
/// even when the optimum happens to coincide with the old contents.
pub fn update_cache(
    cache: &CacheState,
    change_flagged: bool,
    candidates: &[CacheItem],
    round: u64,
) -> Result<(CacheState, Option<CachePlan>), PlacementError> {
    if !change_flagged {
        return Ok((cache.clone(), None));
    }
    let plan = solve_knapsack(candidates, cache.capacity)?;
    let state = CacheState {
        capacity: cache.capacity,
        contents: plan.files.clone(),
        epoch: round,
    };
    Ok((state, Some(plan)))
}

/// What a cache transition moves over the backhaul.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheChange {
    /// Newly fetched files, ascending.
    pub added: Vec<FileId>,
    /// Evicted files, ascending.
    pub removed: Vec<FileId>,
    /// Total size of the fetched files, in storage units.
    pub backhaul_units: u64,
}

impl CacheChange {
    pub fn is_noop(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Set difference between two cache states, with the backhaul cost of the
/// fetches priced from the catalog.
pub fn fetch_delta(
    old: &CacheState,
    new: &CacheState,
    catalog: &[FileSpec],
) -> Result<CacheChange, PlacementError> {
    let size_of = |id: FileId| -> Result<u64, PlacementError> {
        catalog
            .iter()
            .find(|spec| spec.id == id)
            .map(|spec| spec.size as u64)
            .ok_or_else(|| {
                PlacementError::InvalidParameter(format!("file {id} missing from catalog"))
            })
    };
    let mut added = Vec::new();
    let mut backhaul = 0u64;
    for &id in &new.contents {
        if !old.contains(id) {
            backhaul += size_of(id)?;
            added.push(id);
        }
    }
    let removed: Vec<FileId> = old
        .contents
        .iter()
        .copied()
        .filter(|&id| !new.contains(id))
        .collect();
    Ok(CacheChange { added, removed, backhaul_units: backhaul })
}
