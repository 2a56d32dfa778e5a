//! Basin hopping evolution over patch locations.
//!
//! Each generation runs a few random hops around every population member
//! (accepting strict improvements), breeds children by swapping
//! coordinates between random parents, and keeps the fittest placements.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::ClassifierOracle;
use super::{fitness_with_goal, AttackError, Goal};
use crate::imagecore::{Patch, PatchBBox, RasterImage};

#[derive(Debug, Clone, PartialEq)]
pub struct BheConfig {
    pub population: usize,
    pub generations: usize,
    pub hops_per_gen: usize,
    /// Maximum hop offset per axis, in pixels.
    pub hop_radius: usize,
    pub crossover_rate: f64,
    pub seed: u64,
    pub goal: Goal,
}

impl BheConfig {
    /// Defaults for an image of the given size.
    pub fn for_image(width: usize, height: usize, seed: u64) -> Self {
        Self {
            population: 10,
            generations: 20,
            hops_per_gen: 3,
            hop_radius: width.min(height).div_ceil(8).max(1),
            crossover_rate: 0.5,
            seed,
            goal: Goal::Targeted,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.population < 2 {
            return Err(AttackError::Config(format!(
                "population {} must be at least 2",
                self.population
            )));
        }
        if self.generations == 0 || self.hops_per_gen == 0 || self.hop_radius == 0 {
            return Err(AttackError::Config(
                "generations, hops and hop radius must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(AttackError::Config(format!(
                "crossover rate {} outside [0, 1]",
                self.crossover_rate
            )));
        }
        Ok(())
    }

    /// Upper bound on oracle queries for one run.
    pub fn query_budget(&self) -> usize {
        self.population * self.generations * (self.hops_per_gen + 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BheResult {
    pub bbox: PatchBBox,
    pub fitness: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Member {
    x0: usize,
    y0: usize,
    fitness: f64,
}

/// Higher fitness first, then smaller `(y0, x0)`.
fn rank(a: &Member, b: &Member) -> Ordering {
    b.fitness
        .partial_cmp(&a.fitness)
        .unwrap_or(Ordering::Equal)
        .then((a.y0, a.x0).cmp(&(b.y0, b.x0)))
}

struct Evaluator<'a, O> {
    oracle: O,
    image: &'a RasterImage,
    patch: &'a Patch,
    goal: Goal,
    cache: HashMap<(usize, usize), f64>,
    queries: usize,
}

impl<O: ClassifierOracle> Evaluator<'_, O> {
    fn eval(&mut self, x0: usize, y0: usize) -> Result<Member, AttackError> {
        if let Some(&fitness) = self.cache.get(&(x0, y0)) {
            return Ok(Member { x0, y0, fitness });
        }
        let bbox = PatchBBox::square(x0, y0, self.patch.side());
        let fitness = fitness_with_goal(&mut self.oracle, self.image, self.patch, bbox, self.goal)?;
        self.queries += 1;
        self.cache.insert((x0, y0), fitness);
        Ok(Member { x0, y0, fitness })
    }
}

fn hop(v: usize, radius: usize, max: usize, rng: &mut impl Rng) -> usize {
    let r = radius as i64;
    (v as i64 + rng.gen_range(-r..=r)).clamp(0, max as i64) as usize
}

/// Search for the placement of `patch` (identity transform) that maximizes
/// the goal fitness. Repeated placements are served from a cache, so the
/// query count never exceeds [`BheConfig::query_budget`].
pub fn bhe_optimize<O: ClassifierOracle>(
    oracle: O,
    image: &RasterImage,
    patch: &Patch,
    cfg: &BheConfig,
) -> Result<BheResult, AttackError> {
    cfg.validate()?;
    let side = patch.side();
    if side > image.width() || side > image.height() {
        return Err(AttackError::PatchTooLarge {
            side,
            width: image.width(),
            height: image.height(),
        });
    }
    let (max_x, max_y) = (image.width() - side, image.height() - side);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ev = Evaluator {
        oracle,
        image,
        patch,
        goal: cfg.goal,
        cache: HashMap::new(),
        queries: 0,
    };

    let mut population = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        let (x0, y0) = (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y));
        population.push(ev.eval(x0, y0)?);
    }
    let mut best = *population
        .iter()
        .min_by(|a, b| rank(a, b))
        .expect("population >= 2");

    for _ in 0..cfg.generations {
        for member in population.iter_mut() {
            for _ in 0..cfg.hops_per_gen {
                let x0 = hop(member.x0, cfg.hop_radius, max_x, &mut rng);
                let y0 = hop(member.y0, cfg.hop_radius, max_y, &mut rng);
                let cand = ev.eval(x0, y0)?;
                if cand.fitness > member.fitness {
                    *member = cand;
                }
            }
            if member.fitness > best.fitness {
                best = *member;
            }
        }

        let mut children = Vec::new();
        for _ in 0..cfg.population {
            if rng.gen_bool(cfg.crossover_rate) {
                let a = population[rng.gen_range(0..population.len())];
                let b = population[rng.gen_range(0..population.len())];
                children.push(ev.eval(a.x0, b.y0)?);
            }
        }
        population.extend(children);
        population.sort_by(rank);
        // a placement occupies one slot
        population.dedup_by_key(|m| (m.x0, m.y0));
        population.truncate(cfg.population);
        if population[0].fitness > best.fitness {
            best = population[0];
        }
    }

    Ok(BheResult {
        bbox: PatchBBox::square(best.x0, best.y0, side),
        fitness: best.fitness,
        queries: ev.queries,
    })
}

/// Brute force over every placement; ties go to the smallest `(y0, x0)`.
pub fn exhaustive_best_location<O: ClassifierOracle>(
    mut oracle: O,
    image: &RasterImage,
    patch: &Patch,
    goal: Goal,
) -> Result<(PatchBBox, f64), AttackError> {
    let side = patch.side();
    if side > image.width() || side > image.height() {
        return Err(AttackError::PatchTooLarge {
            side,
            width: image.width(),
            height: image.height(),
        });
    }
    let mut best: Option<(PatchBBox, f64)> = None;
    for y0 in 0..=image.height() - side {
        for x0 in 0..=image.width() - side {
            let bbox = PatchBBox::square(x0, y0, side);
            let f = fitness_with_goal(&mut oracle, image, patch, bbox, goal)?;
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((bbox, f));
            }
        }
    }
    Ok(best.expect("at least one placement"))
}
