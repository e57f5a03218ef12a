//! Reservoir sampling of encoder outputs and the offline k-means used to
//! rebuild a codebook from it.

use crate::error::{Result, VqError};
use crate::numerics::{sq_dist, Matrix, Rng};
use crate::quantizer::{nearest_row, Codebook};

/// Lloyd defaults used by [`reestimate_codebook`] callers.
pub const DEFAULT_LLOYD_ITERS: usize = 10;
pub const DEFAULT_LLOYD_TOL: f64 = 1e-6;

/// Fixed-capacity uniform sample of a stream of `d`-dimensional rows
/// (Vitter's Algorithm R).
#[derive(Clone, Debug, PartialEq)]
pub struct Reservoir {
    capacity: usize,
    dim: usize,
    items: Vec<f64>,
    seen: u64,
}

impl Reservoir {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            items: Vec::with_capacity(capacity * dim),
            seen: 0,
        }
    }

    /// Rebuilds a reservoir from a snapshot.
    pub fn from_parts(capacity: usize, items: Matrix, seen: u64) -> Result<Self> {
        let expected = (capacity as u64).min(seen) as usize;
        if items.rows() != expected {
            return Err(VqError::shape("Reservoir::from_parts", expected, items.rows()));
        }
        Ok(Self {
            capacity,
            dim: items.cols(),
            items: items.into_data(),
            seen,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stream rows observed so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Number of rows currently held, `min(capacity, seen)`.
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            (self.capacity as u64).min(self.seen) as usize
        } else {
            self.items.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn items(&self) -> Matrix {
        Matrix::new(self.len(), self.dim, self.items.clone()).expect("reservoir layout")
    }

    /// Feeds every row of `batch` through the reservoir.
    pub fn update(&mut self, batch: &Matrix, rng: &mut Rng) -> Result<()> {
        if batch.rows() > 0 && batch.cols() != self.dim {
            return Err(VqError::shape("Reservoir::update", self.dim, batch.cols()));
        }
        for row in batch.row_iter() {
            self.seen += 1;
            if self.len() < self.capacity {
                self.items.extend_from_slice(row);
            } else {
                // Row number `seen` survives with probability capacity/seen.
                let j = rng.below_u64(self.seen);
                if j < self.capacity as u64 {
                    let j = j as usize;
                    self.items[j * self.dim..(j + 1) * self.dim].copy_from_slice(row);
                }
            }
        }
        Ok(())
    }
}

/// Squared distance from every point to its nearest centroid, summed.
pub fn quantization_cost(points: &Matrix, centroids: &Matrix) -> f64 {
    points
        .row_iter()
        .map(|p| {
            centroids
                .row_iter()
                .map(|c| sq_dist(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// k-means++ seeding: the first centroid uniformly, every further one with
/// probability proportional to its squared distance to the nearest chosen
/// centroid.
pub fn kmeanspp_seed(points: &Matrix, k: usize, rng: &mut Rng) -> Result<Matrix> {
    check_seed_args(points, k)?;
    let first = rng.below(points.rows());
    kmeanspp_seed_from(points, k, first, rng)
}

/// [`kmeanspp_seed`] with the first centroid fixed to row `first`.
pub fn kmeanspp_seed_from(
    points: &Matrix,
    k: usize,
    first: usize,
    rng: &mut Rng,
) -> Result<Matrix> {
    check_seed_args(points, k)?;
    if first >= points.rows() {
        return Err(VqError::IndexOutOfRange {
            what: "points",
            index: first,
            size: points.rows(),
        });
    }
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points
        .row_iter()
        .map(|p| sq_dist(p, points.row(first)))
        .collect();

    while chosen.len() < k {
        // All remaining points coincide with a centroid: fall back to uniform,
        // duplicates are valid seeds.
        let next = rng
            .weighted_index(&nearest)
            .unwrap_or_else(|| rng.below(points.rows()));
        chosen.push(next);
        let c = points.row(next);
        for (d, p) in nearest.iter_mut().zip(points.row_iter()) {
            *d = d.min(sq_dist(p, c));
        }
    }
    points.select_rows(&chosen)
}

fn check_seed_args(points: &Matrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(VqError::InvalidArgument("k-means++ needs K >= 1".into()));
    }
    if points.rows() < k {
        return Err(VqError::InsufficientPoints {
            what: "k-means++ seeding",
            needed: k,
            got: points.rows(),
        });
    }
    if !points.is_finite() {
        return Err(VqError::NonFinite("kmeanspp_seed"));
    }
    Ok(())
}

/// Outcome of a Lloyd run with its per-iteration costs.
#[derive(Clone, Debug)]
pub struct LloydReport {
    pub centroids: Matrix,
    /// Quantization cost of the initial centroids followed by the cost after
    /// each iteration.
    pub costs: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd refinement of `init` on `points`.
pub fn lloyd(points: &Matrix, init: &Matrix, max_iters: usize, tol: f64) -> Result<Matrix> {
    Ok(lloyd_with_trace(points, init, max_iters, tol)?.centroids)
}

/// Lloyd iterations until no centroid moves more than `tol` or `max_iters`
/// is reached. An empty cluster is moved onto the point farthest from its
/// current centroid, which can only lower the cost.
pub fn lloyd_with_trace(
    points: &Matrix,
    init: &Matrix,
    max_iters: usize,
    tol: f64,
) -> Result<LloydReport> {
    if points.cols() != init.cols() {
        return Err(VqError::shape("lloyd", init.cols(), points.cols()));
    }
    let (k, d) = init.shape();
    let mut centroids = init.clone();
    let mut costs = vec![quantization_cost(points, &centroids)];
    let mut iterations = 0;
    if points.rows() == 0 || k == 0 {
        return Ok(LloydReport {
            centroids,
            costs,
            iterations,
        });
    }

    let mut assign = vec![0usize; points.rows()];
    let mut dist = vec![0.0f64; points.rows()];
    for _ in 0..max_iters {
        for (i, p) in points.row_iter().enumerate() {
            let j = nearest_row(p, &centroids);
            assign[i] = j;
            dist[i] = sq_dist(p, centroids.row(j));
        }

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (p, &j) in points.row_iter().zip(&assign) {
            counts[j] += 1;
            for (s, &v) in sums.row_mut(j).iter_mut().zip(p) {
                *s += v;
            }
        }

        let mut next = centroids.clone();
        let mut taken = vec![false; points.rows()];
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, &s) in next.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            } else if let Some(far) = farthest_untaken(&dist, &taken) {
                taken[far] = true;
                dist[far] = 0.0;
                next.row_mut(j).copy_from_slice(points.row(far));
            }
        }

        let shift = centroids
            .row_iter()
            .zip(next.row_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        costs.push(quantization_cost(points, &centroids));
        if shift < tol {
            break;
        }
    }
    Ok(LloydReport {
        centroids,
        costs,
        iterations,
    })
}

fn farthest_untaken(dist: &[f64], taken: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &d) in dist.iter().enumerate() {
        if taken[i] {
            continue;
        }
        if best.is_none_or(|b| d > dist[b]) {
            best = Some(i);
        }
    }
    best
}

/// Rebuilds a `K`-word codebook from the reservoir: k-means++ seeding
/// followed by `lloyd_iters` Lloyd iterations (`0` keeps the raw seeds).
pub fn reestimate_codebook(
    reservoir: &Reservoir,
    k: usize,
    rng: &mut Rng,
    lloyd_iters: usize,
) -> Result<Codebook> {
    reestimate_from_points(&reservoir.items(), k, rng, lloyd_iters)
}

pub(crate) fn reestimate_from_points(
    points: &Matrix,
    k: usize,
    rng: &mut Rng,
    lloyd_iters: usize,
) -> Result<Codebook> {
    if points.rows() < k {
        return Err(VqError::InsufficientPoints {
            what: "codebook reestimation (reservoir capacity and warm-up must supply at least K samples)",
            needed: k,
            got: points.rows(),
        });
    }
    let seeds = kmeanspp_seed(points, k, rng)?;
    let words = if lloyd_iters == 0 {
        seeds
    } else {
        lloyd(points, &seeds, lloyd_iters, DEFAULT_LLOYD_TOL)?
    };
    Codebook::new(words)
}
