//! Parametric shape families sampled on their surfaces.
//!
//! Clutter mode embeds the object in a scene-like setting: a ground plane
//! patch under it and a few small fragments nearby.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::abstraction::derive_seed;
use crate::error::{Error, Result};
use crate::geometry::{Point, PointSet};

use super::dataset::{normalize, Dataset, LabeledCloud};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub points: usize,
    /// Standard deviation of the Gaussian jitter, before normalisation.
    pub noise: f64,
    pub clutter: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 3,
            per_class: 100,
            points: 1024,
            noise: 0.01,
            clutter: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::arg("synthetic data needs at least two classes"));
        }
        if self.points < 64 {
            return Err(Error::arg("synthetic clouds need at least 64 points"));
        }
        if self.per_class == 0 {
            return Err(Error::arg("per_class must be at least 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::arg("noise must be a finite non-negative number"));
        }
        Ok(())
    }
}

pub const FAMILIES: [&str; 6] = ["box", "cylinder", "chair", "sphere", "cone", "torus"];

/// A closed surface in its local frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    /// Axis-aligned box given by half extents.
    Box {
        half: Point,
    },
    /// Capped cylinder along z, centred at the origin.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    Sphere {
        radius: f64,
    },
    /// Base disk at `z = 0`, apex at `z = height`.
    Cone {
        radius: f64,
        height: f64,
    },
    /// Around the z axis.
    Torus {
        major: f64,
        minor: f64,
    },
}

fn hypot2(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

impl Surface {
    pub fn area(&self) -> f64 {
        match *self {
            Surface::Box { half: [a, b, c] } => 8.0 * (a * b + b * c + c * a),
            Surface::Cylinder { radius, half_height } => 4.0 * PI * radius * half_height + 2.0 * PI * radius * radius,
            Surface::Sphere { radius } => 4.0 * PI * radius * radius,
            Surface::Cone { radius, height } => PI * radius * hypot2(radius, height) + PI * radius * radius,
            Surface::Torus { major, minor } => 4.0 * PI * PI * major * minor,
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn distance(&self, p: &Point) -> f64 {
        match *self {
            Surface::Box { half } => {
                let q = [p[0].abs() - half[0], p[1].abs() - half[1], p[2].abs() - half[2]];
                if q.iter().all(|&v| v <= 0.0) {
                    -q[0].max(q[1]).max(q[2])
                } else {
                    let o = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                    (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt()
                }
            }
            Surface::Cylinder { radius, half_height } => {
                let dr = hypot2(p[0], p[1]) - radius;
                let dz = p[2].abs() - half_height;
                if dr <= 0.0 && dz <= 0.0 {
                    -dr.max(dz)
                } else {
                    hypot2(dr.max(0.0), dz.max(0.0))
                }
            }
            Surface::Sphere { radius } => (hypot2(hypot2(p[0], p[1]), p[2]) - radius).abs(),
            Surface::Cone { radius, height } => {
                let rho = hypot2(p[0], p[1]);
                let base = hypot2((rho - radius).max(0.0), p[2]);
                // Segment from (radius, 0) to (0, height) in the (rho, z) plane.
                let (ux, uz) = (-radius, height);
                let len2 = ux * ux + uz * uz;
                let t = (((rho - radius) * ux + p[2] * uz) / len2).clamp(0.0, 1.0);
                let side = hypot2(rho - (radius + t * ux), p[2] - t * uz);
                base.min(side)
            }
            Surface::Torus { major, minor } => (hypot2(hypot2(p[0], p[1]) - major, p[2]) - minor).abs(),
        }
    }

    /// One point drawn uniformly by area.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match *self {
            Surface::Box { half: [a, b, c] } => {
                let faces = [b * c, a * c, a * b];
                let total = faces[0] + faces[1] + faces[2];
                let pick = rng.random::<f64>() * total;
                let axis = if pick < faces[0] {
                    0
                } else if pick < faces[0] + faces[1] {
                    1
                } else {
                    2
                };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [
                    rng.random_range(-a..=a),
                    rng.random_range(-b..=b),
                    rng.random_range(-c..=c),
                ];
                p[axis] = sign * [a, b, c][axis];
                p
            }
            Surface::Cylinder { radius, half_height } => {
                let side = 4.0 * PI * radius * half_height;
                let caps = 2.0 * PI * radius * radius;
                let phi = rng.random_range(0.0..2.0 * PI);
                if rng.random::<f64>() * (side + caps) < side {
                    [
                        radius * phi.cos(),
                        radius * phi.sin(),
                        rng.random_range(-half_height..=half_height),
                    ]
                } else {
                    let rho = radius * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() {
                        half_height
                    } else {
                        -half_height
                    };
                    [rho * phi.cos(), rho * phi.sin(), z]
                }
            }
            Surface::Sphere { radius } => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let n = hypot2(hypot2(v[0], v[1]), v[2]);
                if n > 1e-12 {
                    break [radius * v[0] / n, radius * v[1] / n, radius * v[2] / n];
                }
            },
            Surface::Cone { radius, height } => {
                let side = PI * radius * hypot2(radius, height);
                let base = PI * radius * radius;
                let phi = rng.random_range(0.0..2.0 * PI);
                if rng.random::<f64>() * (side + base) < side {
                    let s = rng.random::<f64>().sqrt();
                    [radius * s * phi.cos(), radius * s * phi.sin(), height * (1.0 - s)]
                } else {
                    let rho = radius * rng.random::<f64>().sqrt();
                    [rho * phi.cos(), rho * phi.sin(), 0.0]
                }
            }
            Surface::Torus { major, minor } => loop {
                let theta = rng.random_range(0.0..2.0 * PI);
                let phi = rng.random_range(0.0..2.0 * PI);
                let w = (major + minor * phi.cos()) / (major + minor);
                if rng.random::<f64>() <= w {
                    let rho = major + minor * phi.cos();
                    break [rho * theta.cos(), rho * theta.sin(), minor * phi.sin()];
                }
            },
        }
    }
}

/// A surface placed at `offset` in the object frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub surface: Surface,
    pub offset: Point,
}

/// One or more parts, rotated about the vertical axis by `yaw`.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub parts: Vec<Part>,
    pub yaw: f64,
}

fn rotate_z(p: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

impl Shape {
    pub fn distance(&self, p: &Point) -> f64 {
        let local = rotate_z(p, -self.yaw);
        self.parts
            .iter()
            .map(|part| {
                let q = [
                    local[0] - part.offset[0],
                    local[1] - part.offset[1],
                    local[2] - part.offset[2],
                ];
                part.surface.distance(&q)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        let areas: Vec<f64> = self.parts.iter().map(|p| p.surface.area()).collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut part = &self.parts[self.parts.len() - 1];
                for (p, a) in self.parts.iter().zip(&areas) {
                    if pick < *a {
                        part = p;
                        break;
                    }
                    pick -= a;
                }
                let q = part.surface.sample(rng);
                rotate_z(
                    &[q[0] + part.offset[0], q[1] + part.offset[1], q[2] + part.offset[2]],
                    self.yaw,
                )
            })
            .collect()
    }

    pub fn lowest_z(&self, points: &[Point]) -> f64 {
        points.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min)
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, base: f64) -> f64 {
    base * rng.random_range(0.8..1.2)
}

/// A random instance of class `class`. Classes beyond the six families
/// reuse them with a stretched aspect ratio.
pub fn random_shape<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Shape {
    let stretch = 1.0 + 0.6 * (class / FAMILIES.len()) as f64;
    let parts = match class % FAMILIES.len() {
        0 => vec![Part {
            surface: Surface::Box {
                half: [jitter(rng, 0.5) * stretch, jitter(rng, 0.35), jitter(rng, 0.3)],
            },
            offset: [0.0; 3],
        }],
        1 => vec![Part {
            surface: Surface::Cylinder {
                radius: jitter(rng, 0.3),
                half_height: jitter(rng, 0.5) * stretch,
            },
            offset: [0.0; 3],
        }],
        2 => {
            let w = jitter(rng, 0.4);
            let seat_h = jitter(rng, 0.06);
            let back_t = jitter(rng, 0.06);
            let back_h = jitter(rng, 0.4) * stretch;
            vec![
                Part {
                    surface: Surface::Box { half: [w, w, seat_h] },
                    offset: [0.0, 0.0, 0.0],
                },
                Part {
                    surface: Surface::Box {
                        half: [back_t, w, back_h],
                    },
                    offset: [-w + back_t, 0.0, seat_h + back_h],
                },
            ]
        }
        3 => vec![Part {
            surface: Surface::Sphere {
                radius: jitter(rng, 0.5),
            },
            offset: [0.0; 3],
        }],
        4 => vec![Part {
            surface: Surface::Cone {
                radius: jitter(rng, 0.4),
                height: jitter(rng, 0.8) * stretch,
            },
            offset: [0.0; 3],
        }],
        _ => vec![Part {
            surface: Surface::Torus {
                major: jitter(rng, 0.45) * stretch,
                minor: jitter(rng, 0.15),
            },
            offset: [0.0; 3],
        }],
    };
    Shape {
        parts,
        yaw: rng.random_range(0.0..2.0 * PI),
    }
}

/// Ground patch under the object plus two small fragments beside it.
fn clutter<R: Rng + ?Sized>(object: &[Point], n_plane: usize, n_frag: usize, rng: &mut R) -> Vec<Point> {
    let floor = object.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min) - 0.02;
    let reach = object.iter().map(|p| hypot2(p[0], p[1])).fold(0.0, f64::max).max(0.1);
    let extent = 1.4 * reach;
    let mut out: Vec<Point> = (0..n_plane)
        .map(|_| {
            [
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                floor,
            ]
        })
        .collect();
    let n_first = n_frag / 2;
    for count in [n_first, n_frag - n_first] {
        let angle = rng.random_range(0.0..2.0 * PI);
        let dist = reach * rng.random_range(1.2..1.6);
        let size = reach * rng.random_range(0.1..0.25);
        let surface = if rng.random::<bool>() {
            Surface::Box {
                half: [size, size * 0.7, size * 1.3],
            }
        } else {
            Surface::Sphere { radius: size }
        };
        let center = [dist * angle.cos(), dist * angle.sin(), floor + size * 1.3];
        for _ in 0..count {
            let q = surface.sample(rng);
            out.push([q[0] + center[0], q[1] + center[1], q[2] + center[2]]);
        }
    }
    out
}

/// Object points before normalisation, with the shape they were drawn from.
pub fn sample_cloud(spec: &SyntheticSpec, class: usize, seed: u64) -> (Shape, Vec<Point>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = random_shape(class, &mut rng);
    let n_object = if spec.clutter {
        (spec.points as f64 * 0.7).round() as usize
    } else {
        spec.points
    };
    let mut pts = shape.sample(n_object, &mut rng);
    if spec.clutter {
        let rest = spec.points - n_object;
        let n_plane = (rest * 2) / 3;
        let extra = clutter(&pts, n_plane, rest - n_plane, &mut rng);
        pts.extend(extra);
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("validated noise");
        for p in &mut pts {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    (shape, pts)
}

/// Deterministic in `seed`; clouds are stored class by class.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut clouds = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for i in 0..spec.per_class {
            let (_, mut pts) = sample_cloud(spec, class, derive_seed(&[seed, 0x5_7A7E, class as u64, i as u64]));
            normalize(&mut pts);
            clouds.push(LabeledCloud {
                points: PointSet::new(pts)?,
                label: class,
            });
        }
    }
    let names = (0..spec.classes)
        .map(|c| {
            let base = FAMILIES[c % FAMILIES.len()];
            match c / FAMILIES.len() {
                0 => base.to_string(),
                k => format!("{base}{}", k + 1),
            }
        })
        .collect();
    Dataset::new(clouds, names, seed)
}
