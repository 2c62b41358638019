use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::vocab::HOUSEHOLD_NAMES;
use super::{Dir, EnvError};
use crate::numerics::{cosine_similarity, squared_distance, Real, Tensor};

/// Reserved object ids for the immovable put-task fixtures.
pub const BED: usize = 0;
pub const BOX: usize = 1;

const MIN_CODE_DISTANCE: Real = 0.05;
const MIN_PROTOTYPE_DISTANCE: Real = 0.6;
const EXEMPLAR_SIGMA: Real = 0.05;
const VIEW_NOISE: Real = 0.02;
/// Per-cell brightness falloff of the gaze ray, so depth is visible.
const DISTANCE_FALLOFF: Real = 0.08;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub dim: usize,
    pub categories: usize,
    pub exemplars: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { dim: 16, categories: 40, exemplars: 6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectDef {
    pub id: usize,
    /// `None` for fixtures.
    pub category: Option<usize>,
    pub exemplar: usize,
    pub code: Vec<Real>,
    pub name: String,
    pub movable: bool,
}

/// The fixed object catalogue plus the per-run view transforms.
#[derive(Clone, Debug)]
pub struct World {
    config: WorldConfig,
    objects: Vec<ObjectDef>,
    views: Vec<Tensor>,
    view_angle: Real,
}

impl World {
    pub fn generate(config: WorldConfig) -> Result<Self, EnvError> {
        if config.categories > HOUSEHOLD_NAMES.len() {
            return Err(EnvError::Config(format!(
                "at most {} categories are supported",
                HOUSEHOLD_NAMES.len()
            )));
        }
        if config.dim < 2 || config.exemplars < 1 || config.categories < 1 {
            return Err(EnvError::Config("world needs dim >= 2 and at least one category and exemplar".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..100 {
            let objects = sample_objects(&config, &mut rng);
            if separated(&objects, config.exemplars) {
                let (views, view_angle) = fit_views(&objects, config.dim, &mut rng);
                return Ok(Self { config, objects, views, view_angle });
            }
        }
        Err(EnvError::Config("could not sample a separated object catalogue".into()))
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn categories(&self) -> usize {
        self.config.categories
    }

    pub fn exemplars(&self) -> usize {
        self.config.exemplars
    }

    pub fn objects(&self) -> &[ObjectDef] {
        &self.objects
    }

    pub fn object(&self, id: usize) -> &ObjectDef {
        &self.objects[id]
    }

    pub fn exemplar(&self, category: usize, exemplar: usize) -> usize {
        2 + category * self.config.exemplars + exemplar
    }

    /// Rotation angle of each Givens factor in the view transforms.
    pub fn view_angle(&self) -> Real {
        self.view_angle
    }

    pub fn view(&self, dir: Dir) -> &Tensor {
        &self.views[dir.index()]
    }

    /// Code seen when looking at `id` from `distance` cells away while facing
    /// `dir`; `noise` supplies the per-element Gaussian perturbation.
    pub fn render(&self, id: usize, dir: Dir, distance: usize, noise: Option<&mut ChaCha8Rng>) -> Vec<Real> {
        let b = &self.objects[id].code;
        let v = self.view(dir);
        let gain = (1.0 - DISTANCE_FALLOFF * (distance.max(1) - 1) as Real).max(0.2);
        let mut out: Vec<Real> = (0..b.len()).map(|i| gain * v.row(i).iter().zip(b).map(|(a, x)| a * x).sum::<Real>()).collect();
        if let Some(rng) = noise {
            let n = Normal::new(0.0, VIEW_NOISE).expect("valid sigma");
            for x in &mut out {
                *x += n.sample(rng);
            }
        }
        for x in &mut out {
            *x = x.clamp(0.0, 1.0);
        }
        out
    }
}

fn uniform_code(dim: usize, lo: Real, hi: Real, rng: &mut ChaCha8Rng) -> Vec<Real> {
    (0..dim).map(|_| rng.random_range(lo..hi)).collect()
}

fn sample_objects(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<ObjectDef> {
    let dim = config.dim;
    let delta = Normal::new(0.0, EXEMPLAR_SIGMA).expect("valid sigma");
    let mut objects = Vec::with_capacity(2 + config.categories * config.exemplars);
    for (id, name) in [(BED, "bed"), (BOX, "box")] {
        objects.push(ObjectDef { id, category: None, exemplar: 0, code: uniform_code(dim, 0.1, 0.9, rng), name: name.into(), movable: false });
    }
    let mut prototypes: Vec<Vec<Real>> = Vec::with_capacity(config.categories);
    for (c, category_name) in HOUSEHOLD_NAMES.iter().enumerate().take(config.categories) {
        let mut p = uniform_code(dim, 0.2, 0.8, rng);
        for _ in 0..1000 {
            if prototypes.iter().all(|q| squared_distance(q, &p).sqrt() >= MIN_PROTOTYPE_DISTANCE) {
                break;
            }
            p = uniform_code(dim, 0.2, 0.8, rng);
        }
        for e in 0..config.exemplars {
            let code = p.iter().map(|x| (x + delta.sample(rng)).clamp(0.1, 0.9)).collect();
            objects.push(ObjectDef {
                id: objects.len(),
                category: Some(c),
                exemplar: e,
                code,
                name: category_name.to_string(),
                movable: true,
            });
        }
        prototypes.push(p);
    }
    objects
}

/// Every pair is at least `MIN_CODE_DISTANCE` apart, and every exemplar is
/// closer to all of its own category than to any other object.
fn separated(objects: &[ObjectDef], exemplars: usize) -> bool {
    let n = objects.len();
    let dist = |i: usize, j: usize| squared_distance(&objects[i].code, &objects[j].code).sqrt();
    for i in 0..n {
        let mut within: Real = 0.0;
        let mut across = Real::INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist(i, j);
            if d <= MIN_CODE_DISTANCE {
                return false;
            }
            if objects[i].category.is_some() && objects[i].category == objects[j].category {
                within = within.max(d);
            } else {
                across = across.min(d);
            }
        }
        if exemplars > 1 && objects[i].category.is_some() && within >= across {
            return false;
        }
    }
    true
}

/// Orthonormal transform built from a fixed sequence of Givens rotations.
fn givens_view(dim: usize, pairs: &[(usize, usize, Real)], angle: Real) -> Tensor {
    let mut m = Tensor::identity(dim);
    for &(i, j, sign) in pairs {
        let (s, c) = (sign * angle).sin_cos();
        for r in 0..dim {
            let (a, b) = (m.get(r, i), m.get(r, j));
            m.set(r, i, c * a - s * b);
            m.set(r, j, s * a + c * b);
        }
    }
    m
}

/// Shrinks the rotation angle until each object's views are more similar
/// to one another than to any view of any other object.
fn fit_views(objects: &[ObjectDef], dim: usize, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Real) {
    let pair_sets: Vec<Vec<(usize, usize, Real)>> = (0..4)
        .map(|v| {
            if v == 0 {
                return Vec::new();
            }
            (0..dim / 2)
                .map(|_| {
                    let i = rng.random_range(0..dim);
                    let mut j = rng.random_range(0..dim - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j, if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                })
                .collect()
        })
        .collect();
    let mut angle = 0.3;
    loop {
        let views: Vec<Tensor> = pair_sets.iter().map(|p| givens_view(dim, p, angle)).collect();
        if views_consistent(objects, &views) || angle < 1e-4 {
            return (views, angle);
        }
        angle *= 0.7;
    }
}

fn views_consistent(objects: &[ObjectDef], views: &[Tensor]) -> bool {
    let codes: Vec<Vec<Vec<Real>>> = objects
        .iter()
        .map(|o| {
            views
                .iter()
                .map(|v| (0..o.code.len()).map(|r| v.row(r).iter().zip(&o.code).map(|(a, b)| a * b).sum()).collect())
                .collect()
        })
        .collect();
    let cos = |a: &[Real], b: &[Real]| cosine_similarity(a, b).expect("same length");
    for i in 0..codes.len() {
        let mut own = Real::INFINITY;
        for a in &codes[i] {
            for b in &codes[i] {
                own = own.min(cos(a, b));
            }
        }
        for (j, other) in codes.iter().enumerate() {
            if j == i {
                continue;
            }
            for a in &codes[i] {
                for b in other {
                    if cos(a, b) >= own {
                        return false;
                    }
                }
            }
        }
    }
    true
}
