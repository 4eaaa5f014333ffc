//! Box-bounded derivative-free minimization: a (mu+lambda) evolution
//! strategy for the global phase and Nelder-Mead for local refinement.
//!
//! Both work in coordinates normalized to the unit cube so that one step
//! size fits parameters of very different magnitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Objective shared across worker threads.
pub type Objective<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub mu: usize,
    pub lambda: usize,
    /// Initial mutation standard deviation as a fraction of each bound width.
    pub initial_sigma: f64,
    /// Step-size factor of the one-fifth success rule.
    pub sigma_factor: f64,
    pub min_sigma: f64,
    pub max_generations: usize,
    pub simplex_max_iterations: usize,
    pub simplex_tolerance: f64,
    /// Initial simplex edge as a fraction of each bound width.
    pub simplex_initial_step: f64,
    pub simplex_restarts: usize,
    /// Stop as soon as the best objective reaches this value.
    pub target: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mu: 5,
            lambda: 25,
            initial_sigma: 0.1,
            sigma_factor: 1.22,
            min_sigma: 1e-6,
            max_generations: 60,
            simplex_max_iterations: 400,
            simplex_tolerance: 1e-9,
            simplex_initial_step: 0.02,
            simplex_restarts: 2,
            target: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu < 1 || self.lambda < self.mu {
            return Err(invalid("optimizer needs mu >= 1 and lambda >= mu"));
        }
        if !(self.initial_sigma > 0.0 && self.sigma_factor > 1.0 && self.min_sigma > 0.0) {
            return Err(invalid("mutation scale settings must be positive (factor > 1)"));
        }
        if !(self.simplex_tolerance > 0.0 && self.simplex_initial_step > 0.0) {
            return Err(invalid("simplex tolerances must be positive"));
        }
        Ok(())
    }

    fn reached(&self, q: f64) -> bool {
        self.target.is_some_and(|t| q <= t)
    }
}

pub fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("bound {i} must satisfy low < high, got [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn to_unit(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

fn from_unit(y: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    y.iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| lo + v.clamp(0.0, 1.0) * (hi - lo))
        .collect()
}

fn score(q: f64) -> f64 {
    if q.is_nan() {
        f64::INFINITY
    } else {
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub best: Vec<f64>,
    pub best_q: f64,
    /// Best objective after each generation, starting with the initial population.
    pub history: Vec<f64>,
    /// Best parameter vector after each generation.
    pub trajectory: Vec<Vec<f64>>,
    pub evaluations: usize,
}

#[derive(Clone)]
struct Member {
    y: Vec<f64>,
    q: f64,
}

/// (mu+lambda) evolution strategy with per-coordinate Gaussian mutation and
/// one-fifth success rule. Offspring of one generation are evaluated in
/// parallel; mutations are drawn serially from one seeded stream, so the
/// outcome does not depend on the thread count.
pub fn evolve(
    cfg: &OptimizerConfig,
    objective: &Objective<'_>,
    bounds: &[(f64, f64)],
    start: Option<&[f64]>,
) -> Result<EvolveResult> {
    cfg.validate()?;
    validate_bounds(bounds)?;
    let dim = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut seeds: Vec<Vec<f64>> = Vec::with_capacity(cfg.mu);
    if let Some(s) = start {
        if s.len() != dim {
            return Err(invalid("start point dimension differs from bounds"));
        }
        seeds.push(to_unit(s, bounds));
    }
    while seeds.len() < cfg.mu {
        seeds.push((0..dim).map(|_| rng.random::<f64>()).collect());
    }
    let eval = |ys: &[Vec<f64>]| -> Vec<f64> {
        ys.par_iter()
            .map(|y| score(objective(&from_unit(y, bounds))))
            .collect()
    };
    let qs = eval(&seeds);
    let mut pop: Vec<Member> = seeds
        .into_iter()
        .zip(qs)
        .map(|(y, q)| Member { y, q })
        .collect();
    pop.sort_by(|a, b| a.q.total_cmp(&b.q));
    let mut evaluations = pop.len();
    let mut history = vec![pop[0].q];
    let mut trajectory = vec![from_unit(&pop[0].y, bounds)];
    let mut sigma = vec![cfg.initial_sigma; dim];

    for _ in 0..cfg.max_generations {
        if cfg.reached(pop[0].q) || sigma.iter().all(|s| *s < cfg.min_sigma) || dim == 0 {
            break;
        }
        let mut parents = Vec::with_capacity(cfg.lambda);
        let mut children = Vec::with_capacity(cfg.lambda);
        for _ in 0..cfg.lambda {
            let p = rng.random_range(0..pop.len());
            let child: Vec<f64> = pop[p]
                .y
                .iter()
                .zip(&sigma)
                .map(|(v, s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    (v + s * z).clamp(0.0, 1.0)
                })
                .collect();
            parents.push(pop[p].q);
            children.push(child);
        }
        let qs = eval(&children);
        evaluations += qs.len();
        let successes = qs.iter().zip(&parents).filter(|(c, p)| c < p).count();
        let rate = successes as f64 / cfg.lambda as f64;
        let factor = if rate > 0.2 {
            cfg.sigma_factor
        } else if rate < 0.2 {
            1.0 / cfg.sigma_factor
        } else {
            1.0
        };
        for s in sigma.iter_mut() {
            *s = (*s * factor).min(0.5);
        }
        pop.extend(children.into_iter().zip(qs).map(|(y, q)| Member { y, q }));
        // stable sort keeps older members ahead on ties
        pop.sort_by(|a, b| a.q.total_cmp(&b.q));
        pop.truncate(cfg.mu);
        history.push(pop[0].q);
        trajectory.push(from_unit(&pop[0].y, bounds));
    }

    Ok(EvolveResult {
        best: from_unit(&pop[0].y, bounds),
        best_q: pop[0].q,
        history,
        trajectory,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub best: Vec<f64>,
    pub best_q: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Nelder-Mead descent from `start`. Points outside the box are scored at
/// their projection plus a penalty growing with the distance to the box;
/// the returned point is always feasible and never worse than `start`.
pub fn simplex_refine(
    cfg: &OptimizerConfig,
    objective: &Objective<'_>,
    bounds: &[(f64, f64)],
    start: &[f64],
) -> Result<SimplexResult> {
    cfg.validate()?;
    validate_bounds(bounds)?;
    let dim = bounds.len();
    if start.len() != dim {
        return Err(invalid("start point dimension differs from bounds"));
    }
    let mut best_y = to_unit(start, bounds);
    let mut best_q = score(objective(&from_unit(&best_y, bounds)));
    let mut evaluations = 1;
    let mut history = vec![best_q];
    let mut iterations = 0;
    if dim == 0 {
        return Ok(SimplexResult {
            best: from_unit(&best_y, bounds),
            best_q,
            history,
            iterations,
            evaluations,
        });
    }

    for _ in 0..=cfg.simplex_restarts {
        if cfg.reached(best_q) || iterations >= cfg.simplex_max_iterations {
            break;
        }
        let before = best_q;
        let f = |y: &[f64], best_y: &mut Vec<f64>, best_q: &mut f64, evals: &mut usize| -> f64 {
            *evals += 1;
            let clamped: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let dist = y
                .iter()
                .zip(&clamped)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let q = score(objective(&from_unit(&clamped, bounds)));
            if q < *best_q {
                *best_q = q;
                *best_y = clamped;
            }
            if dist > 0.0 {
                q + (1.0 + q.abs()) * 1e3 * dist
            } else {
                q
            }
        };

        let mut simplex: Vec<Vec<f64>> = vec![best_y.clone()];
        for i in 0..dim {
            let mut v = best_y.clone();
            let step = cfg.simplex_initial_step;
            v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
            simplex.push(v);
        }
        let mut values: Vec<f64> = vec![best_q];
        for v in simplex.iter().skip(1) {
            let q = f(v, &mut best_y, &mut best_q, &mut evaluations);
            values.push(q);
        }

        while iterations < cfg.simplex_max_iterations {
            iterations += 1;
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            history.push(best_q);

            let diameter = simplex
                .iter()
                .skip(1)
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diameter < cfg.simplex_tolerance || cfg.reached(best_q) {
                break;
            }

            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr, &mut best_y, &mut best_q, &mut evaluations);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = f(&xe, &mut best_y, &mut best_q, &mut evaluations);
                if fe < fr {
                    simplex[dim] = xe;
                    values[dim] = fe;
                } else {
                    simplex[dim] = xr;
                    values[dim] = fr;
                }
                continue;
            }
            if fr < values[dim - 1] {
                simplex[dim] = xr;
                values[dim] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[dim] {
                let xc = along(-0.5);
                let fc = f(&xc, &mut best_y, &mut best_q, &mut evaluations);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc, &mut best_y, &mut best_q, &mut evaluations);
                (xc, fc)
            };
            if fc < values[dim].min(fr) {
                simplex[dim] = xc;
                values[dim] = fc;
                continue;
            }
            for i in 1..=dim {
                let shrunk: Vec<f64> = simplex[i]
                    .iter()
                    .zip(&simplex[0])
                    .map(|(v, b)| b + 0.5 * (v - b))
                    .collect();
                values[i] = f(&shrunk, &mut best_y, &mut best_q, &mut evaluations);
                simplex[i] = shrunk;
            }
        }
        if !(best_q < before) {
            break;
        }
    }

    Ok(SimplexResult {
        best: from_unit(&best_y, bounds),
        best_q,
        history,
        iterations,
        evaluations,
    })
}

/// Global search followed by local refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Vec<f64>,
    pub best_q: f64,
    pub initial_q: f64,
    /// `(evaluations so far, best objective)` over both phases.
    pub history: Vec<(usize, f64)>,
    pub trajectory: Vec<Vec<f64>>,
}

pub fn minimize(
    cfg: &OptimizerConfig,
    objective: &Objective<'_>,
    bounds: &[(f64, f64)],
    start: &[f64],
) -> Result<SearchResult> {
    let initial_q = score(objective(start));
    let es = evolve(cfg, objective, bounds, Some(start))?;
    let per_gen = cfg.lambda;
    let mut history: Vec<(usize, f64)> = es
        .history
        .iter()
        .enumerate()
        .map(|(g, q)| (cfg.mu + g * per_gen, *q))
        .collect();
    let mut trajectory = es.trajectory.clone();
    let nm = simplex_refine(cfg, objective, bounds, &es.best)?;
    let base = es.evaluations;
    let mut running = es.best_q;
    for (i, q) in nm.history.iter().enumerate() {
        running = running.min(*q);
        history.push((base + i, running));
    }
    let (best, best_q) = if nm.best_q <= es.best_q {
        (nm.best, nm.best_q)
    } else {
        (es.best, es.best_q)
    };
    trajectory.push(best.clone());
    Ok(SearchResult {
        best,
        best_q,
        initial_q,
        history,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube4() -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); 4]
    }

    #[test]
    fn l1_bowl_is_found() {
        let x0 = [0.3, -0.7, 0.1, 0.55];
        let obj = |x: &[f64]| x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let cfg = OptimizerConfig {
            max_generations: 200,
            seed: 11,
            ..OptimizerConfig::default()
        };
        let r = evolve(&cfg, &obj, &cube4(), None).unwrap();
        for (a, b) in r.best.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-2, "{a} vs {b}");
        }
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.history.len() <= 201);
    }

    #[test]
    fn evolve_is_seed_deterministic() {
        let obj = |x: &[f64]| (x[0] - 0.2).powi(2) + (x[1] + 0.4).abs();
        let cfg = OptimizerConfig { seed: 5, max_generations: 30, ..OptimizerConfig::default() };
        let b = vec![(-1.0, 1.0); 2];
        let a1 = evolve(&cfg, &obj, &b, None).unwrap();
        let a2 = evolve(&cfg, &obj, &b, None).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn candidates_stay_inside_bounds() {
        use std::sync::Mutex;
        let seen = Mutex::new(Vec::new());
        let obj = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            -x[0] - x[1]
        };
        let b = vec![(0.0, 1.0), (2.0, 3.0)];
        let cfg = OptimizerConfig { initial_sigma: 0.5, max_generations: 20, ..OptimizerConfig::default() };
        let r = evolve(&cfg, &obj, &b, Some(&[0.9, 2.9])).unwrap();
        simplex_refine(&cfg, &obj, &b, &r.best).unwrap();
        for x in seen.lock().unwrap().iter() {
            assert!(x[0] >= 0.0 && x[0] <= 1.0 && x[1] >= 2.0 && x[1] <= 3.0);
        }
    }

    #[test]
    fn simplex_quadratic_bowl() {
        let obj = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.25).powi(2) + (x[2] - 0.1).powi(2);
        let b = vec![(-5.0, 5.0); 3];
        let cfg = OptimizerConfig { simplex_max_iterations: 2000, simplex_tolerance: 1e-10, ..OptimizerConfig::default() };
        let r = simplex_refine(&cfg, &obj, &b, &[0.0, 0.0, 0.0]).unwrap();
        assert!((r.best[0] - 1.5).abs() < 1e-6);
        assert!((r.best[1] + 0.25).abs() < 1e-6);
        assert!((r.best[2] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn simplex_start_at_minimum_is_kept() {
        let obj = |x: &[f64]| x[0].powi(2) + x[1].powi(2);
        let b = vec![(-1.0, 1.0); 2];
        let r = simplex_refine(&OptimizerConfig::default(), &obj, &b, &[0.0, 0.0]).unwrap();
        assert!(r.best_q <= 0.0);
        assert_eq!(r.best, vec![0.0, 0.0]);
    }

    #[test]
    fn simplex_respects_active_bounds() {
        let obj = |x: &[f64]| (x[0] - 3.0).powi(2) + x[1].powi(2);
        let b = vec![(-1.0, 1.0); 2];
        let r = simplex_refine(&OptimizerConfig::default(), &obj, &b, &[0.0, 0.5]).unwrap();
        assert!(r.best[0] <= 1.0 && r.best[0] > 0.999);
        assert!(r.best[1].abs() < 1e-4);
    }

    #[test]
    fn empty_problem() {
        let obj = |_x: &[f64]| 4.0;
        let r = minimize(&OptimizerConfig::default(), &obj, &[], &[]).unwrap();
        assert!(r.best.is_empty());
        assert_eq!(r.best_q, 4.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn best_so_far_never_increases(seed in 0u64..10_000, cx in -1.0..1.0f64, cy in -1.0..1.0f64) {
                let obj = |x: &[f64]| ((x[0] - cx).abs() + (x[1] - cy).powi(2)).sqrt() + (5.0 * x[0]).sin() * 0.1;
                let cfg = OptimizerConfig { seed, max_generations: 15, ..OptimizerConfig::default() };
                let r = evolve(&cfg, &obj, &[(-1.0, 1.0), (-1.0, 1.0)], None).unwrap();
                prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
                let s = simplex_refine(&cfg, &obj, &[(-1.0, 1.0), (-1.0, 1.0)], &r.best).unwrap();
                prop_assert!(s.best_q <= r.best_q);
            }
        }
    }
}
