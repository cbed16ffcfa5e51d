//! Per-surface projector visibility bitsets and their pooled identities.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::meshgen::Surface;

use super::camera::{projector_rays, Projector, ProjectionError};
use super::raycast::SceneIndex;

/// Arbitrary-width set of projector indices. Ordered by its value as a
/// binary number (bit k = projector k).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ProjectorSet {
    words: Vec<u64>,
}

impl ProjectorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, k: u32) {
        let w = (k / 64) as usize;
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << (k % 64);
    }

    pub fn contains(&self, k: u32) -> bool {
        self.words
            .get((k / 64) as usize)
            .is_some_and(|w| w & (1 << (k % 64)) != 0)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64u32).filter(move |b| w & (1 << b) != 0).map(move |b| wi as u32 * 64 + b)
        })
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Numeric value when the set fits in 128 bits.
    pub fn value(&self) -> Option<u128> {
        let used = self.significant();
        if used.len() > 2 {
            return None;
        }
        Some(used.iter().enumerate().map(|(i, &w)| u128::from(w) << (64 * i)).sum())
    }

    fn significant(&self) -> &[u64] {
        let n = self.words.iter().rposition(|&w| w != 0).map_or(0, |i| i + 1);
        &self.words[..n]
    }
}

impl FromIterator<u32> for ProjectorSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut s = ProjectorSet::new();
        for k in iter {
            s.insert(k);
        }
        s
    }
}

impl Ord for ProjectorSet {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.significant(), other.significant());
        a.len()
            .cmp(&b.len())
            .then_with(|| a.iter().rev().cmp(b.iter().rev()))
    }
}

impl PartialOrd for ProjectorSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Serialized as the ascending list of member indices.
impl Serialize for ProjectorSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ProjectorSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let members = Vec::<u32>::deserialize(d)?;
        Ok(members.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMaskTable {
    /// Projectors that texture each surface.
    pub masks: BTreeMap<u32, ProjectorSet>,
    /// Distinct masks in ascending value order; the index is the pool id.
    pub pools: Vec<ProjectorSet>,
}

impl SurfaceMaskTable {
    pub fn pool_id(&self, surface_id: u32) -> Option<usize> {
        let mask = self.masks.get(&surface_id)?;
        self.pools.binary_search(mask).ok()
    }

    pub fn mask(&self, surface_id: u32) -> Option<&ProjectorSet> {
        self.masks.get(&surface_id)
    }
}

/// Ray fan density and depth range used for visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanSettings {
    pub nx: usize,
    pub ny: usize,
}

impl Default for FanSettings {
    fn default() -> Self {
        Self { nx: 32, ny: 18 }
    }
}

/// Surfaces struck first by at least one ray of the projector's fan.
pub fn visible_surfaces(
    p: &Projector,
    index: &SceneIndex,
    fan: FanSettings,
) -> Result<BTreeSet<u32>, ProjectionError> {
    let mut seen = BTreeSet::new();
    if index.is_empty() {
        // Still validate the fan request.
        projector_rays(p, fan.nx, fan.ny)?;
        return Ok(seen);
    }
    for fr in projector_rays(p, fan.nx, fan.ny)? {
        if let Some(h) = index.intersect(&fr.ray, p.intrinsics.near, p.intrinsics.far) {
            seen.insert(h.surface_id);
        }
    }
    Ok(seen)
}

/// Convenience wrapper that indexes `surfaces` first.
pub fn visible_surfaces_in(
    p: &Projector,
    surfaces: &[Surface],
    fan: FanSettings,
) -> Result<BTreeSet<u32>, ProjectionError> {
    visible_surfaces(p, &SceneIndex::new(surfaces), fan)
}

/// Bit k of a surface's mask is set iff projector k sees it.
pub fn assign_masks(
    projectors: &[Projector],
    surfaces: &[Surface],
    fan: FanSettings,
) -> Result<SurfaceMaskTable, ProjectionError> {
    let index = SceneIndex::new(surfaces);
    let mut masks: BTreeMap<u32, ProjectorSet> = surfaces.iter().map(|s| (s.surface_id, ProjectorSet::new())).collect();
    for p in projectors {
        for sid in visible_surfaces(p, &index, fan)? {
            if let Some(m) = masks.get_mut(&sid) {
                m.insert(p.projector_id);
            }
        }
    }
    let pools: BTreeSet<ProjectorSet> = masks.values().cloned().collect();
    Ok(SurfaceMaskTable {
        masks,
        pools: pools.into_iter().collect(),
    })
}

/// The projector whose image textures each surface: the newest in the mask,
/// ties going to the lower projector id. Surfaces nobody sees are absent.
pub fn texture_assignment(table: &SurfaceMaskTable, projectors: &[Projector]) -> BTreeMap<u32, u32> {
    let by_id: BTreeMap<u32, &Projector> = projectors.iter().map(|p| (p.projector_id, p)).collect();
    table
        .masks
        .iter()
        .filter_map(|(&sid, mask)| {
            mask.iter()
                .filter_map(|k| by_id.get(&k).copied())
                .max_by(|a, b| {
                    a.priority_timestamp
                        .cmp(&b.priority_timestamp)
                        .then(b.projector_id.cmp(&a.projector_id))
                })
                .map(|p| (sid, p.projector_id))
        })
        .collect()
}
