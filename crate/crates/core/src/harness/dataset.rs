//! Labelled point-cloud collections and their text file format.
//!
//! ```text
//! LRLDS1 <num_clouds> <num_classes>
//! cloud <label> <num_points>
//! x y z
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::abstraction::derive_seed;
use crate::error::{Error, Result};
use crate::geometry::{self, Point, PointSet};

pub const DATASET_MAGIC: &str = "LRLDS1";

/// Tolerance of the centroid and unit-sphere checks.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub points: PointSet,
    pub label: usize,
}

/// Indices into [`Dataset::clouds`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "test" => Ok(SplitKind::Test),
            _ => Err(Error::arg(format!("split must be train or test, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<LabeledCloud>,
    pub split: Split,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset with a stratified, seeded 80/20 split.
    pub fn new(clouds: Vec<LabeledCloud>, class_names: Vec<String>, seed: u64) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::arg("a dataset needs at least two classes"));
        }
        if let Some(c) = clouds.iter().find(|c| c.label >= class_names.len()) {
            return Err(Error::arg(format!(
                "label {} out of range for {} classes",
                c.label,
                class_names.len()
            )));
        }
        let split = stratified_split(&clouds, class_names.len(), seed);
        Ok(Dataset {
            clouds,
            split,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.split.train,
            SplitKind::Test => &self.split.test,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clouds.iter().map(|c| c.label).collect()
    }
}

/// Per class: shuffle, then the first `round(0.2 n)` (at least one when the
/// class has two or more clouds) go to the test split. Both lists come out
/// sorted.
pub fn stratified_split(clouds: &[LabeledCloud], classes: usize, seed: u64) -> Split {
    let mut split = Split::default();
    for class in 0..classes {
        let mut members: Vec<usize> = (0..clouds.len()).filter(|&i| clouds[i].label == class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5_9117, class as u64]));
        members.shuffle(&mut rng);
        let n = members.len();
        let mut n_test = (n as f64 * 0.2).round() as usize;
        if n >= 2 {
            n_test = n_test.max(1);
        }
        split.test.extend_from_slice(&members[..n_test]);
        split.train.extend_from_slice(&members[n_test..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    split
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Moves the centroid to the origin and scales into the unit sphere. A
/// cloud collapsed onto one point is only centred.
pub fn normalize(points: &mut [Point]) {
    let c = centroid(points);
    for p in points.iter_mut() {
        *p = geometry::sub(p, &c);
    }
    let max = points.iter().map(geometry::norm).fold(0.0, f64::max);
    if max > 0.0 {
        for p in points.iter_mut() {
            for v in p.iter_mut() {
                *v /= max;
            }
        }
    }
}

pub fn is_normalized(points: &[Point]) -> bool {
    let c = centroid(points);
    let max = points.iter().map(geometry::norm).fold(0.0, f64::max);
    geometry::norm(&c) <= NORMALIZATION_TOLERANCE && (max - 1.0).abs() <= NORMALIZATION_TOLERANCE
}

/// Brings a cloud to exactly `target` points: a seeded subset without
/// replacement when larger, seeded duplicates when smaller.
pub fn resample(points: &[Point], target: usize, seed: u64) -> Vec<Point> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n >= target {
        let all: Vec<usize> = (0..n).collect();
        let mut idx = geometry::select_k(&all, target, &mut rng);
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        use rand::Rng;
        let mut out = points.to_vec();
        while out.len() < target {
            out.push(points[rng.random_range(0..n)]);
        }
        out
    }
}

pub fn to_text(dataset: &Dataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{DATASET_MAGIC} {} {}", dataset.clouds.len(), dataset.num_classes());
    for c in &dataset.clouds {
        let _ = writeln!(s, "cloud {} {}", c.label, c.points.len());
        for p in c.points.positions() {
            // `{:?}` prints the shortest text that parses back to the same f64.
            let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
        }
    }
    s
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(dataset))?;
    Ok(())
}

/// Clouds and class count exactly as stored.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub clouds: Vec<(usize, Vec<Point>)>,
    pub num_classes: usize,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    offset: usize,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.offset += l.len() + 1;
                    self.last = i + 1;
                    if !l.trim().is_empty() {
                        return Ok((i + 1, l));
                    }
                }
                None => {
                    return Err(Error::parse(
                        format!("line {}, byte offset {}", self.last + 1, self.offset),
                        format!("unexpected end of file, expected {what}"),
                    ))
                }
            }
        }
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(format!("line {line}"), format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("bad {what} {tok:?}")))
}

pub fn parse_dataset(text: &str) -> Result<RawDataset> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        offset: 0,
        last: 0,
    };
    let (no, header) = lines.next("header")?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(DATASET_MAGIC) {
        return Err(Error::parse(
            format!("line {no}"),
            format!("expected {DATASET_MAGIC} header"),
        ));
    }
    let n_clouds: usize = field(tok.next(), no, "cloud count")?;
    let num_classes: usize = field(tok.next(), no, "class count")?;
    if tok.next().is_some() {
        return Err(Error::parse(format!("line {no}"), "trailing tokens in header"));
    }
    let mut clouds = Vec::with_capacity(n_clouds);
    for _ in 0..n_clouds {
        let (no, rec) = lines.next("cloud record")?;
        let mut tok = rec.split_whitespace();
        if tok.next() != Some("cloud") {
            return Err(Error::parse(
                format!("line {no}"),
                "expected `cloud <label> <num_points>`",
            ));
        }
        let label: usize = field(tok.next(), no, "label")?;
        let n: usize = field(tok.next(), no, "point count")?;
        if label >= num_classes {
            return Err(Error::parse(
                format!("line {no}"),
                format!("label {label} ≥ {num_classes} classes"),
            ));
        }
        if n == 0 {
            return Err(Error::parse(format!("line {no}"), "cloud without points"));
        }
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let (no, l) = lines.next("point")?;
            let mut tok = l.split_whitespace();
            let p: Point = [
                field(tok.next(), no, "x")?,
                field(tok.next(), no, "y")?,
                field(tok.next(), no, "z")?,
            ];
            if tok.next().is_some() || p.iter().any(|v: &f64| !v.is_finite()) {
                return Err(Error::parse(format!("line {no}"), "expected three finite coordinates"));
            }
            pts.push(p);
        }
        clouds.push((label, pts));
    }
    if let Ok((no, _)) = lines.next("") {
        return Err(Error::parse(format!("line {no}"), "data after the last cloud"));
    }
    Ok(RawDataset { clouds, num_classes })
}

/// A validated dataset plus any normalisation warnings.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Reads a dataset file, resamples every cloud to `points` points when
/// given and re-normalises clouds that break the centroid or unit-sphere
/// invariant.
pub fn load_dataset(path: &Path, points: Option<usize>, seed: u64) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)?;
    from_raw(parse_dataset(&text)?, points, seed)
}

pub fn from_raw(raw: RawDataset, points: Option<usize>, seed: u64) -> Result<Loaded> {
    let mut warnings = Vec::new();
    let mut clouds = Vec::with_capacity(raw.clouds.len());
    for (i, (label, mut pts)) in raw.clouds.into_iter().enumerate() {
        if let Some(p) = points {
            if pts.len() != p {
                pts = resample(&pts, p, derive_seed(&[seed, 0x5_4B5A, i as u64]));
            }
        }
        if !is_normalized(&pts) {
            warnings.push(format!("cloud {i} was not normalised; re-normalising"));
            normalize(&mut pts);
        }
        clouds.push(LabeledCloud {
            points: PointSet::new(pts)?,
            label,
        });
    }
    let names = (0..raw.num_classes).map(|c| format!("class{c}")).collect();
    Ok(Loaded {
        dataset: Dataset::new(clouds, names, seed)?,
        warnings,
    })
}
