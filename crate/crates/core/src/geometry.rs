//! Spatial queries on small point sets: farthest point sampling, ball
//! queries, nearest centers and concentric shells.
//!
//! Everything here is a brute-force linear scan over the points and is not
//! differentiated through.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dist_sq(a: &Point, b: &Point) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn norm(a: &Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// A non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    positions: Vec<Point>,
}

impl PointSet {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::arg("a point set needs at least one point"));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::arg(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointSet { positions })
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<Point> {
        self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Lexicographic total order on coordinates.
pub fn cmp_points(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Greedy farthest point sampling starting at `seed_index`. Ties go to the
/// lowest index.
pub fn farthest_point_sample(points: &[Point], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::arg(format!("cannot sample {m} of {n} points")));
    }
    if seed_index >= n {
        return Err(Error::arg(format!("seed index {seed_index} out of {n} points")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = seed_index;
    selected.push(current);
    taken[current] = true;
    while selected.len() < m {
        let c = points[current];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        taken[current] = true;
        selected.push(current);
    }
    Ok(selected)
}

/// Indices of points with `‖p − center‖ ≤ radius`, in ascending distance
/// order with coordinate ties broken lexicographically. The order depends
/// only on the point positions, never on their storage order.
pub fn points_within(points: &[Point], center: &Point, radius: f64) -> Vec<usize> {
    let mut inside: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d = dist(p, center);
            (d <= radius).then_some((d, i))
        })
        .collect();
    inside.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| cmp_points(&points[a.1], &points[b.1]))
            .then(a.1.cmp(&b.1))
    });
    inside.into_iter().map(|(_, i)| i).collect()
}

/// Picks `k` of `candidates` uniformly without replacement, keeping their
/// relative order. Fewer than `k` candidates are repeated cyclically.
pub fn select_k<R: Rng + ?Sized>(candidates: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    let q = candidates.len();
    if q == 0 {
        return Vec::new();
    }
    if q <= k {
        return (0..k).map(|i| candidates[i % q]).collect();
    }
    let mut slots: Vec<usize> = (0..q).collect();
    for i in 0..k {
        let j = rng.random_range(i..q);
        slots.swap(i, j);
    }
    let mut chosen = slots[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|s| candidates[s]).collect()
}

/// `k` indices of points inside the ball, sampled uniformly when more than
/// `k` qualify and padded cyclically when fewer do.
pub fn ball_query<R: Rng + ?Sized>(
    points: &[Point],
    center: &Point,
    radius: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::arg(format!("ball radius must be positive, got {radius}")));
    }
    if k == 0 {
        return Err(Error::arg("ball query needs k ≥ 1"));
    }
    let inside = points_within(points, center, radius);
    if inside.is_empty() {
        return Err(Error::EmptyRegion { radius });
    }
    Ok(select_k(&inside, k, rng))
}

/// Index of the point closest to `center`; ties go to the lowest index.
pub fn nearest_point(points: &[Point], center: &Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist_sq(p, center);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// [`ball_query`] that falls back to the nearest point repeated `k` times
/// when the ball is empty. The flag reports whether the fallback fired.
pub fn ball_query_or_nearest<R: Rng + ?Sized>(
    points: &[Point],
    center: &Point,
    radius: f64,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, bool)> {
    match ball_query(points, center, radius, k, rng) {
        Ok(idx) => Ok((idx, false)),
        Err(Error::EmptyRegion { .. }) => Ok((vec![nearest_point(points, center); k], true)),
        Err(e) => Err(e),
    }
}

/// The `u` centers closest to center `j`, excluding `j`, nearest first with
/// ties to the lowest index.
pub fn k_nearest_centers(centers: &[Point], j: usize, u: usize) -> Result<Vec<usize>> {
    let m = centers.len();
    if j >= m {
        return Err(Error::arg(format!("center {j} out of {m}")));
    }
    if u >= m {
        return Err(Error::arg(format!("cannot pick {u} neighbours among {m} centers")));
    }
    let c = centers[j];
    let mut others: Vec<(f64, usize)> = centers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(i, p)| (dist_sq(p, &c), i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().take(u).map(|(_, i)| i).collect())
}

/// Assignment of neighbours to `T` concentric shells of a ball.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShellPartition {
    /// 1-based shell of each neighbour, aligned with the input list.
    pub shell_of: Vec<usize>,
    /// Neighbour count per shell, `counts[t - 1]` for shell `t`.
    pub counts: Vec<usize>,
}

impl ShellPartition {
    /// Positions in the neighbour list, grouped by shell in increasing order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.counts.len()];
        for (i, &t) in self.shell_of.iter().enumerate() {
            out[t - 1].push(i);
        }
        out
    }
}

/// Shell `t` holds neighbours with `(t−1)/T·r_outer < d ≤ t/T·r_outer`;
/// shell 1 also holds `d = 0`.
pub fn shell_partition(
    points: &[Point],
    neighbors: &[usize],
    center: &Point,
    r_outer: f64,
    t_shells: usize,
) -> Result<ShellPartition> {
    if t_shells == 0 {
        return Err(Error::arg("need at least one shell"));
    }
    if !(r_outer > 0.0) {
        return Err(Error::arg(format!("outer radius must be positive, got {r_outer}")));
    }
    let mut shell_of = Vec::with_capacity(neighbors.len());
    let mut counts = vec![0; t_shells];
    for &i in neighbors {
        let d = dist(&points[i], center);
        if d > r_outer {
            return Err(Error::Contract(format!(
                "neighbour {i} at distance {d} lies outside radius {r_outer}"
            )));
        }
        let t = (1..=t_shells)
            .find(|&t| d <= r_outer * t as f64 / t_shells as f64)
            .unwrap_or(t_shells);
        shell_of.push(t);
        counts[t - 1] += 1;
    }
    Ok(ShellPartition { shell_of, counts })
}
