#![allow(dead_code)]

use crplus::model::{CellIndex, TrendConstants};
use crplus::panjer::{Policy, Portfolio};
use crplus::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three age groups, two risk factors, mortality of a few percent.
pub fn loss_params() -> ModelParams {
    let mut p = ModelParams::flat(3, 2, TrendConstants::default(), 0.3);
    p.variances.sigma2 = vec![0.4, 0.15];
    for (i, dp) in p.death_prob.iter_mut().enumerate() {
        dp.alpha = -3.6 + 0.35 * i as f64;
        dp.beta = -0.02;
    }
    for c in 0..p.cells() {
        p.weights.u[c][1] = 0.3 + 0.1 * c as f64;
        p.weights.u[c][2] = -0.2 + 0.05 * c as f64;
    }
    p
}

/// 100 single-life policies over all cells with exposures `1..=5`.
pub fn hundred_policies(seed: u64) -> Portfolio {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policies = (0..100)
        .map(|_| Policy {
            cell: CellIndex::from_linear(rng.random_range(0..6)),
            exposure: rng.random_range(1..=5),
            count: 1,
        })
        .collect();
    Portfolio {
        policies,
        loss_unit: 1000.0,
        valuation_year: 2011,
    }
}
