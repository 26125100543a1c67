//! Lloyd's k-means over frame vectors and nearest-centroid quantization.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AudioTokenStream, Vocabulary};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances of the training frames to their nearest
    /// centroid.
    pub inertia: f64,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid by squared Euclidean distance, lowest index on ties.
    pub fn nearest(&self, frame: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, frame)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], frame: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, frame);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_frames(frames: &[Vec<f64>]) -> Result<usize> {
    let dim = frames.first().map(Vec::len).ok_or(Error::EmptyCorpus)?;
    if dim == 0 {
        return Err(Error::invalid("frames have zero dimensions"));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("frame {i} has non-finite values")));
        }
    }
    Ok(dim)
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn train_kmeans(frames: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    train_kmeans_traced(frames, k, max_iters, seed).map(|(cb, _)| cb)
}

/// Same as [`train_kmeans`], also returning the inertia measured at each
/// assignment step.
pub fn train_kmeans_traced(
    frames: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Codebook, Vec<f64>)> {
    let dim = check_frames(frames)?;
    if k == 0 || k > frames.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={}",
            frames.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(frames, k, &mut rng);
    let exec = Execution::default();

    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let nearest_all = map_indexed(exec, frames, |_, f| nearest(&centroids, f));
        let new_assignment: Vec<usize> = nearest_all.iter().map(|&(j, _)| j).collect();
        history.push(nearest_all.iter().map(|&(_, d)| d).sum());
        if new_assignment == assignment {
            break;
        }
        assignment = new_assignment;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &j) in frames.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(f) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let n = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / n).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                reseed_empty(frames, &mut centroids, &mut assignment, &mut counts, j);
            }
        }
    }
    let inertia = frames.iter().map(|f| nearest(&centroids, f).1).sum();
    Ok((
        Codebook {
            dim,
            centroids,
            inertia,
        },
        history,
    ))
}

fn seed_plus_plus(frames: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![frames[rng.random_range(0..frames.len())].clone()];
    let mut d2: Vec<f64> = frames.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // Fewer distinct points than k; duplicates become empty clusters
            // that Lloyd re-seeds.
            rng.random_range(0..frames.len())
        };
        centroids.push(frames[pick].clone());
        let c = centroids.last().expect("just pushed");
        for (d, f) in d2.iter_mut().zip(frames) {
            *d = d.min(sq_dist(f, c));
        }
    }
    centroids
}

fn reseed_empty(
    frames: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignment: &mut [usize],
    counts: &mut [usize],
    empty: usize,
) {
    let largest = (0..counts.len())
        .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
        .expect("k >= 1");
    let mut far = None;
    for (i, f) in frames.iter().enumerate() {
        if assignment[i] != largest {
            continue;
        }
        let d = sq_dist(f, &centroids[largest]);
        if far.is_none_or(|(_, best)| d > best) {
            far = Some((i, d));
        }
    }
    if let Some((i, _)) = far {
        centroids[empty] = frames[i].clone();
        assignment[i] = empty;
        counts[largest] -= 1;
        counts[empty] += 1;
    }
}

/// Maps each frame to the speech unit of its nearest centroid.
pub fn quantize_frames(
    cb: &Codebook,
    vocab: &Vocabulary,
    frames: &[Vec<f64>],
    utt_id: &str,
) -> Result<AudioTokenStream> {
    if cb.k() > vocab.n_speech() {
        return Err(Error::invalid(format!(
            "codebook has {} centroids but vocabulary only {} speech units",
            cb.k(),
            vocab.n_speech()
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.len() != cb.dim) {
        return Err(Error::DimMismatch {
            expected: cb.dim,
            got: f.len(),
        });
    }
    let units = map_indexed(Execution::default(), frames, |_, f| cb.nearest(f).0 as u32);
    Ok(AudioTokenStream::new(utt_id, units))
}

pub fn write_codebook(path: &Path, cb: &Codebook) -> Result<()> {
    let mut out = format!("dim={}\tk={}\tinertia={}\n", cb.dim, cb.k(), cb.inertia);
    for c in &cb.centroids {
        let row: Vec<String> = c.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let mut dim = None;
    let mut k = None;
    let mut inertia = None;
    for field in header.split('\t') {
        match field.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("k", v)) => k = v.parse::<usize>().ok(),
            Some(("inertia", v)) => inertia = v.parse::<f64>().ok(),
            _ => return Err(Error::parse(path, 1, format!("bad header field {field:?}"))),
        }
    }
    let (Some(dim), Some(k), Some(inertia)) = (dim, k, inertia) else {
        return Err(Error::parse(path, 1, "header needs dim, k and inertia"));
    };
    let mut centroids = Vec::with_capacity(k);
    for (n, line) in lines.enumerate() {
        let row = super::io::parse_row(line, dim).map_err(|m| Error::parse(path, n + 2, m))?;
        centroids.push(row);
    }
    if centroids.len() != k || k == 0 {
        return Err(Error::parse(path, 1, format!("expected {k} centroids, found {}", centroids.len())));
    }
    Ok(Codebook {
        dim,
        centroids,
        inertia,
    })
}
