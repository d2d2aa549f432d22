//! Timing harness for the posterior engines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MimlError, Result};
use crate::label::LabelSet;
use crate::model::{softmax_in_place, PriorMatrix};
use crate::posterior::{Engine, PosteriorResult, SubsetLattice, BRUTE_FORCE_GUARD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub engine: Engine,
    pub bag_sizes: Vec<usize>,
    pub cardinalities: Vec<usize>,
    pub num_classes: usize,
    /// Random bags timed together at each grid point.
    pub bags_per_point: usize,
    /// Timing repetitions; the median is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Fast,
            bag_sizes: vec![8, 16, 32, 64, 128],
            cardinalities: vec![3],
            num_classes: 6,
            bags_per_point: 20,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub engine: Engine,
    pub n_b: usize,
    pub card: usize,
    /// Median wall time to process all bags of the grid point.
    pub seconds: f64,
    /// Largest posterior deviation from the reference engine.
    pub max_abs_err: f64,
    /// The engine the deviation was measured against.
    pub reference: Engine,
}

pub const CSV_HEADER: &str = "engine,n_b,card,seconds,max_abs_err";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.3e}",
            self.engine.name(),
            self.n_b,
            self.card,
            self.seconds,
            self.max_abs_err
        )
    }
}

/// Random bag priors from uniform scores in `[-2, 2)`.
pub fn random_bags(
    n: usize,
    num_classes: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<PriorMatrix> {
    (0..count)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let mut s: Vec<f64> = (0..num_classes)
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect();
                    softmax_in_place(&mut s);
                    s
                })
                .collect();
            PriorMatrix::from_rows(&rows).expect("softmax rows are valid")
        })
        .collect()
}

/// Median wall time of running `engine` over all `bags`.
pub fn time_engine(
    engine: Engine,
    bags: &[PriorMatrix],
    lattice: &SubsetLattice,
    repeats: usize,
) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        for p in bags {
            std::hint::black_box(engine.run(p, lattice)?);
        }
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn max_dev(a: &PosteriorResult, b: &PosteriorResult) -> f64 {
    a.posterior
        .rows()
        .flatten()
        .zip(b.posterior.rows().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn oracle_allowed(n: usize, card: usize) -> bool {
    (card as f64).powi(n as i32) <= BRUTE_FORCE_GUARD
}

/// Sweeps bag size and label cardinality. The deviation is measured against
/// brute force where its guard allows, else between the forward and FAST
/// engines. Grid points the brute-force engine cannot run are skipped.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.bags_per_point == 0 {
        return Err(MimlError::InvalidConfig(
            "bags_per_point must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &card in &cfg.cardinalities {
        if card == 0 || card > cfg.num_classes {
            return Err(MimlError::InvalidConfig(format!(
                "cardinality {card} not in 1..={}",
                cfg.num_classes
            )));
        }
        let label = LabelSet::from_classes(0..card)?;
        let lattice = SubsetLattice::new(label)?;
        for &n in &cfg.bag_sizes {
            if n < card {
                continue;
            }
            let oracle = oracle_allowed(n, card);
            if cfg.engine == Engine::Brute && !oracle {
                continue;
            }
            let bags = random_bags(n, cfg.num_classes, cfg.bags_per_point, &mut rng);
            let reference = if oracle {
                Engine::Brute
            } else if cfg.engine == Engine::Forward {
                Engine::Fast
            } else {
                Engine::Forward
            };
            let mut err = 0.0f64;
            for p in &bags {
                let got = cfg.engine.run(p, &lattice)?;
                let want = reference.run(p, &lattice)?;
                err = err.max(max_dev(&got, &want));
            }
            let seconds = time_engine(cfg.engine, &bags, &lattice, cfg.repeats)?;
            rows.push(BenchRow {
                engine: cfg.engine,
                n_b: n,
                card,
                seconds,
                max_abs_err: err,
                reference,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
