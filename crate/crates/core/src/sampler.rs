//! Direction candidates: uniform draws on the unit sphere, cross-entropy
//! refinement and selection of the executed direction.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::interaction::Aot;
use crate::kinematics::Vec3;
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub directions: Vec<Vec3>,
    pub scores: Option<Vec<f64>>,
}

impl CandidateSet {
    pub fn new(directions: Vec<Vec3>) -> Self {
        Self {
            directions,
            scores: None,
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn with_scores(mut self, scores: Vec<f64>) -> Self {
        self.scores = Some(scores);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub n_samples: usize,
    pub temperature: f64,
    pub rounds: usize,
    /// Standard deviation of the tangent-plane perturbation, radians.
    pub noise_sigma: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            temperature: 20.0,
            rounds: 2,
            noise_sigma: 0.1,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("cem.n_samples must be >= 2".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("cem.temperature must be > 0".into()));
        }
        if self.rounds < 1 {
            return Err(Error::Config("cem.rounds must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("cem.noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Forward,
    Backward,
    Goal,
}

impl SelectionMode {
    /// AoT class a candidate must be predicted to have to be eligible.
    pub fn target(self) -> Aot {
        match self {
            SelectionMode::Forward => Aot::Forward,
            SelectionMode::Backward | SelectionMode::Goal => Aot::Backward,
        }
    }
}

/// Scorer output for one candidate direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub dist: f64,
    /// Probabilities of classes -1, 0, +1 in that order.
    pub aot: [f64; 3],
}

impl Prediction {
    pub fn one_hot(dist: f64, class: Aot) -> Self {
        let mut aot = [0.0; 3];
        aot[class.class_index()] = 1.0;
        Self { dist, aot }
    }

    /// Most likely class; ties go to the lower class index.
    pub fn class(&self) -> Aot {
        let mut best = 0;
        for i in 1..3 {
            if self.aot[i] > self.aot[best] {
                best = i;
            }
        }
        Aot::from_class_index(best)
    }

    /// Expected AoT value.
    pub fn expected_aot(&self) -> f64 {
        self.aot[2] - self.aot[0]
    }

    /// CEM score `dist * E[aot]`, sign-flipped for modes that seek
    /// backward motion so the resampling concentrates on eligible candidates.
    pub fn cem_score(&self, mode: SelectionMode) -> f64 {
        let s = self.dist * self.expected_aot();
        match mode {
            SelectionMode::Forward => s,
            SelectionMode::Backward | SelectionMode::Goal => -s,
        }
    }
}

pub fn uniform_directions(n: usize, seed: u64) -> CandidateSet {
    let mut rng = rng::from_seed(seed);
    let directions = (0..n)
        .map(|_| {
            let [x, y, z]: [f64; 3] = UnitSphere.sample(&mut rng);
            Vec3::new(x, y, z).normalize()
        })
        .collect();
    CandidateSet::new(directions)
}

/// Softmax of `temperature * score`. Non-finite scores get zero mass.
pub fn resampling_distribution(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Score);
    }
    let w: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s.is_finite() {
                (temperature * (s - max)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Unit vector perturbed by an isotropic Gaussian in its tangent plane.
pub fn perturb(direction: &Vec3, sigma: f64, rng: &mut impl Rng) -> Vec3 {
    if sigma == 0.0 {
        return *direction;
    }
    let helper = if direction.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = direction.cross(&helper).normalize();
    let v = direction.cross(&u);
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    (direction + (u * a + v * b) * sigma).normalize()
}

/// One resample-and-perturb round over a scored candidate set.
pub fn cem_round(candidates: &CandidateSet, cfg: &CemConfig, seed: u64) -> Result<CandidateSet> {
    let scores = candidates
        .scores
        .as_ref()
        .ok_or_else(|| Error::invalid("cem_round needs scored candidates"))?;
    if scores.len() != candidates.len() {
        return Err(Error::Shape {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    let p = resampling_distribution(scores, cfg.temperature)?;
    let dist = WeightedIndex::new(&p).map_err(|_| Error::Score)?;
    let mut rng = rng::from_seed(seed);
    let directions = (0..cfg.n_samples)
        .map(|_| {
            let i = dist.sample(&mut rng);
            perturb(&candidates.directions[i], cfg.noise_sigma, &mut rng)
        })
        .collect();
    Ok(CandidateSet::new(directions))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub index: Option<usize>,
    pub terminate: bool,
}

/// Picks the candidate with the largest predicted distance among those whose
/// predicted class matches the mode. Goal mode terminates when none match;
/// the exploration modes fall back to the unrestricted argmax.
pub fn select_direction(predictions: &[Prediction], mode: SelectionMode) -> Result<Selection> {
    if predictions.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let target = mode.target();
    let eligible = argmax_by(predictions, |p| p.class() == target, |p| p.dist);
    match (eligible, mode) {
        (Some(i), _) => Ok(Selection {
            index: Some(i),
            terminate: false,
        }),
        (None, SelectionMode::Goal) => Ok(Selection {
            index: None,
            terminate: true,
        }),
        (None, _) => Ok(Selection {
            index: argmax_by(predictions, |_| true, |p| p.dist),
            terminate: false,
        }),
    }
}

/// First index with the largest key among filtered items; NaN keys never win.
pub fn argmax_by<T>(
    items: &[T],
    keep: impl Fn(&T) -> bool,
    key: impl Fn(&T) -> f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, it) in items.iter().enumerate() {
        if !keep(it) {
            continue;
        }
        let k = key(it);
        match best {
            None => best = Some((i, k)),
            Some((_, b)) if k > b || (b.is_nan() && !k.is_nan()) => best = Some((i, k)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

/// Every candidate evaluated during a search, in order, with the round each
/// came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub directions: Vec<Vec3>,
    pub predictions: Vec<Prediction>,
    pub round: Vec<usize>,
}

/// Uniform first round followed by `rounds - 1` CEM rounds. `score` maps a
/// slice of directions to one prediction each.
pub fn cem_search<F>(
    cfg: &CemConfig,
    mode: SelectionMode,
    seed: u64,
    mut score: F,
) -> Result<SearchResult>
where
    F: FnMut(&[Vec3]) -> Result<Vec<Prediction>>,
{
    cfg.validate()?;
    let mut out = SearchResult {
        directions: Vec::new(),
        predictions: Vec::new(),
        round: Vec::new(),
    };
    let mut current = uniform_directions(cfg.n_samples, rng::derive(seed, &[0]));
    for r in 0..cfg.rounds {
        let preds = score(&current.directions)?;
        if preds.len() != current.len() {
            return Err(Error::Shape {
                expected: current.len(),
                got: preds.len(),
            });
        }
        out.directions.extend_from_slice(&current.directions);
        out.predictions.extend_from_slice(&preds);
        out.round.extend(std::iter::repeat_n(r, preds.len()));
        if r + 1 < cfg.rounds {
            let scored = current.with_scores(preds.iter().map(|p| p.cem_score(mode)).collect());
            current = cem_round(&scored, cfg, rng::derive(seed, &[r as u64 + 1]))?;
        }
    }
    Ok(out)
}
