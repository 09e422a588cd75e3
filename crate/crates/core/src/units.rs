//! Discrete speech units: synthetic frame features, k-means quantization and
//! run-length deduplication.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::text::TokenId;

/// Unit ids in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnitSequence {
    pub ids: Vec<u32>,
    pub deduplicated: bool,
}

impl UnitSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        UnitSequence {
            ids,
            deduplicated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check(&self, k: usize) -> Result<()> {
        match self.ids.iter().find(|&&u| u as usize >= k) {
            Some(&id) => Err(Error::InvalidUnitId { id, k }),
            None => Ok(()),
        }
    }
}

/// Collapse runs of equal consecutive ids.
pub fn dedup(u: &UnitSequence) -> UnitSequence {
    let mut ids = u.ids.clone();
    ids.dedup();
    UnitSequence {
        ids,
        deduplicated: true,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trained k-means codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub centroids: Vec<Vec<f64>>,
    pub dim: usize,
}

/// A fitted quantizer together with the inertia recorded at every Lloyd iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansFit {
    pub quantizer: Quantizer,
    pub inertia: Vec<f64>,
}

impl Quantizer {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid under squared Euclidean distance; ties go to the lower id.
    pub fn nearest(&self, frame: &[f64]) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(frame, c);
            if d < best.1 {
                best = (i as u32, d);
            }
        }
        best
    }
}

/// Map every frame to its nearest centroid (not deduplicated).
pub fn quantize(q: &Quantizer, features: &[Vec<f64>]) -> Result<UnitSequence> {
    let mut ids = Vec::with_capacity(features.len());
    for f in features {
        if f.len() != q.dim {
            return Err(Error::FeatureDimMismatch {
                expected: q.dim,
                got: f.len(),
            });
        }
        ids.push(q.nearest(f).0);
    }
    Ok(UnitSequence::new(ids))
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Empty clusters are re-seeded with the point farthest from its centroid.
/// Stops after `iters` iterations or when assignments no longer change.
pub fn kmeans_fit(features: &[Vec<f64>], k: usize, seed: u64, iters: usize) -> Result<KmeansFit> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if features.len() < k {
        return Err(Error::TooFewPoints {
            k,
            points: features.len(),
        });
    }
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::FeatureDimMismatch {
            expected: dim,
            got: f.len(),
        });
    }
    let mut rng = SeededRng::new(seed);

    // k-means++: first centre uniform, then proportional to squared distance.
    let mut centroids = vec![features[rng.below(features.len())].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let Some(i) = rng.weighted(&d2) else {
            let mut distinct: Vec<&Vec<f64>> = Vec::new();
            for f in features {
                if !distinct.contains(&f) {
                    distinct.push(f);
                }
            }
            return Err(Error::TooFewDistinctPoints {
                k,
                distinct: distinct.len(),
            });
        };
        centroids.push(features[i].clone());
        let c = centroids.last().unwrap();
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, c));
        }
    }

    let mut q = Quantizer { centroids, dim };
    let mut assign = vec![usize::MAX; features.len()];
    let mut inertia = Vec::new();
    for _ in 0..iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        let mut dist = Vec::with_capacity(features.len());
        for (a, f) in assign.iter_mut().zip(features) {
            let (id, d) = q.nearest(f);
            if *a != id as usize {
                *a = id as usize;
                changed = true;
            }
            total += d;
            dist.push(d);
        }
        inertia.push(total);
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, f) in assign.iter().zip(features) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(f) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                q.centroids[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..features.len())
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&i, &j| dist[i].partial_cmp(&dist[j]).unwrap().then(j.cmp(&i)));
                if let Some(i) = far {
                    counts[assign[i]] -= 1;
                    assign[i] = c;
                    counts[c] = 1;
                    dist[i] = 0.0;
                    q.centroids[c] = features[i].clone();
                }
            }
        }
    }
    Ok(KmeansFit {
        quantizer: q,
        inertia,
    })
}

/// Per-word pronunciation anchors. Homophones share one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorBook {
    pub dim: usize,
    pub anchors: Vec<Vec<f64>>,
    /// Anchor index of each source token id; `None` for reserved ids.
    pub class_of: Vec<Option<usize>>,
}

impl AnchorBook {
    /// Anchors drawn from `N(0, spread^2)` per coordinate, one per pronunciation class.
    pub fn new(class_of: Vec<Option<usize>>, dim: usize, spread: f64, seed: u64) -> Self {
        let n = class_of.iter().flatten().copied().max().map_or(0, |m| m + 1);
        let mut rng = SeededRng::new(seed);
        let anchors = (0..n)
            .map(|_| (0..dim).map(|_| spread * rng.normal()).collect())
            .collect();
        AnchorBook {
            dim,
            anchors,
            class_of,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchor(&self, t: TokenId) -> Option<&[f64]> {
        self.class_of
            .get(t.index())
            .copied()
            .flatten()
            .map(|c| self.anchors[c].as_slice())
    }
}

/// Frame features for an utterance: each word's anchor repeated plus Gaussian noise.
pub fn synth_features(
    book: &AnchorBook,
    utterance: &[TokenId],
    frames_per_word: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeededRng::new(seed);
    let mut frames = Vec::with_capacity(utterance.len() * frames_per_word);
    for &t in utterance {
        let anchor = book.anchor(t).ok_or(Error::InvalidTokenId {
            id: t.0,
            size: book.class_of.len(),
        })?;
        for _ in 0..frames_per_word {
            frames.push(anchor.iter().map(|a| a + noise * rng.normal()).collect());
        }
    }
    Ok(frames)
}
