use crplus::forecast::{death_rate_forecast, top_causes, weight_posterior, ForecastTable, Summary};
use crplus::model::{laplace_cdf, CellIndex, Gender, TrendConstants};
use crplus::{ModelParams, TimeMapping};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_draws(n: usize, seed: u64) -> Vec<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut p = ModelParams::flat(2, 3, TrendConstants::default(), 0.2);
            for dp in p.death_prob.iter_mut() {
                dp.alpha = rng.random_range(-6.0..-2.0);
                dp.beta = rng.random_range(-0.1..0.1);
            }
            for c in 0..p.cells() {
                for k in 1..=3 {
                    p.weights.u[c][k] = rng.random_range(-1.0..1.0);
                    p.weights.v[c][k] = rng.random_range(-0.05..0.05);
                }
            }
            p
        })
        .collect()
}

fn names() -> Vec<String> {
    ["other", "circulatory", "neoplasms", "respiratory"]
        .map(String::from)
        .to_vec()
}

fn all_stats(draws: &[ModelParams], years: &[i32]) -> Vec<f64> {
    let map = TimeMapping::default();
    let cells: Vec<CellIndex> = CellIndex::all(2).collect();
    let t = ForecastTable::build(draws, &cells, years, &map, names()).unwrap();
    let mut out = Vec::new();
    for b in &t.blocks {
        for e in &b.entries {
            out.extend([e.cause.0 as f64, e.summary.mean, e.summary.q05, e.summary.q95]);
        }
        let s = b.death_probability;
        out.extend([s.mean, s.q05, s.q95]);
    }
    out
}

#[test]
fn forecasts_gauge_invariant() {
    let draws = random_draws(300, 1);
    let years = [2011, 2031, 2051];
    let base = all_stats(&draws, &years);
    for c in 0..4 {
        let mut shifted = draws.clone();
        for p in shifted.iter_mut() {
            p.weights.u[c].iter_mut().for_each(|x| *x += 3.7);
            p.weights.v[c].iter_mut().for_each(|x| *x += 3.7);
        }
        let other = all_stats(&shifted, &years);
        assert_eq!(base.len(), other.len());
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() < 1e-9, "cell {c}: {a} vs {b}");
        }
    }
}

#[test]
fn ranking_ignores_draw_order() {
    let mut draws = random_draws(250, 2);
    let map = TimeMapping::default();
    let cell = CellIndex::new(2, Gender::Female, 2).unwrap();
    let a = top_causes(&draws, cell, 2031, &map, 4).unwrap();
    draws.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let b = top_causes(&draws, cell, 2031, &map, 4).unwrap();
    let ids = |v: &[crplus::forecast::WeightSummary]| v.iter().map(|e| e.cause).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.summary.q05, y.summary.q05);
        assert_eq!(x.summary.q95, y.summary.q95);
        assert!((x.summary.mean - y.summary.mean).abs() < 1e-12);
    }
}

#[test]
fn table_invariants_hold() {
    let draws = random_draws(200, 4);
    let map = TimeMapping::default();
    let cells: Vec<CellIndex> = CellIndex::all(2).collect();
    let t = ForecastTable::build(&draws, &cells, &[2011, 2051], &map, names()).unwrap();
    assert_eq!(t.blocks.len(), 8);
    for b in &t.blocks {
        let s: f64 = b.entries.iter().map(|e| e.summary.mean).sum();
        assert!((s - 1.0).abs() < 1e-9);
        for w in b.entries.windows(2) {
            assert!(w[0].summary.mean >= w[1].summary.mean);
        }
        for e in &b.entries {
            assert!(e.summary.q05 <= e.summary.mean && e.summary.mean <= e.summary.q95);
        }
    }
}

#[test]
fn flat_trend_is_constant_over_years() {
    let mut draws = random_draws(50, 5);
    for p in draws.iter_mut() {
        p.death_prob.iter_mut().for_each(|dp| dp.beta = 0.0);
    }
    let map = TimeMapping::default();
    let cell = CellIndex::from_linear(1);
    let at_2011 = death_rate_forecast(&draws, cell, 2011, &map).unwrap();
    for year in [2031, 2051, 2300] {
        assert_eq!(death_rate_forecast(&draws, cell, year, &map).unwrap(), at_2011);
    }
}

#[test]
fn long_horizon_stays_below_limit() {
    let draws = random_draws(100, 6);
    let map = TimeMapping::default();
    for cell in CellIndex::all(2) {
        for p in &draws {
            let dp = &p.death_prob[cell.linear()];
            let limit = laplace_cdf(dp.alpha + dp.beta * dp.trend.upper_limit()).unwrap();
            let one = std::slice::from_ref(p);
            let q = death_rate_forecast(one, cell, 1_000_000, &map).unwrap().mean;
            if dp.beta > 0.0 {
                assert!(q < limit, "{q} >= {limit}");
            } else {
                assert!(q > limit, "{q} <= {limit}");
            }
        }
    }
}

#[test]
fn quantiles_sandwich_mean() {
    let draws = random_draws(150, 7);
    let map = TimeMapping::default();
    for cell in CellIndex::all(2) {
        let ws = weight_posterior(&draws, cell, 2051, &map).unwrap();
        for e in ws {
            assert!(e.summary.q05 <= e.summary.q95);
            let vals: Vec<f64> = draws
                .iter()
                .map(|p| crplus::model::cause_weights(cell, map.t_of_year(2051), p)[e.cause.0])
                .collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= e.summary.mean && e.summary.mean <= hi);
        }
    }
}

#[test]
fn nearest_rank_quantiles_on_known_sample() {
    // 20 draws whose only difference is alpha, so q is monotone in the draw
    // index and the nearest-rank 5% / 95% quantiles are draws 1 and 19.
    let base = ModelParams::flat(1, 1, TrendConstants::default(), 0.1);
    let draws: Vec<ModelParams> = (1..=20)
        .map(|i| {
            let mut p = base.clone();
            p.death_prob.iter_mut().for_each(|dp| dp.alpha = -5.0 + 0.1 * i as f64);
            p
        })
        .collect();
    let cell = CellIndex::from_linear(0);
    let q = |i: usize| laplace_cdf(-5.0 + 0.1 * i as f64).unwrap();
    let s: Summary = death_rate_forecast(&draws, cell, 1990, &TimeMapping::default()).unwrap();
    assert_eq!(s.q05, q(1));
    assert_eq!(s.q95, q(19));
}

#[test]
fn csv_round_trip_is_exact() {
    let draws = random_draws(60, 8);
    let cells: Vec<CellIndex> = CellIndex::all(2).collect();
    let t = ForecastTable::build(&draws, &cells, &[2011, 2031], &TimeMapping::default(), names()).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back = ForecastTable::read_csv(buf.as_slice(), names()).unwrap();
    assert_eq!(back.blocks.len(), t.blocks.len());
    for (a, b) in t.blocks.iter().zip(&back.blocks) {
        assert_eq!((a.cell, a.year), (b.cell, b.year));
        assert_eq!(a.entries, b.entries);
    }
}

#[test]
fn fixture_table_matches_golden_text() {
    let mut p = ModelParams::flat(1, 3, TrendConstants::default(), 0.1);
    p.weights.u[0] = vec![0.0, 1.0, 0.5, -0.5];
    p.weights.u[1] = vec![0.0, 0.2, 1.2, 0.1];
    p.death_prob[1].alpha = -3.0;
    let mut q = p.clone();
    q.weights.u[0][1] = 0.9;
    let cells: Vec<CellIndex> = CellIndex::all(1).collect();
    let t = ForecastTable::build(&vec![p, q], &cells, &[2011], &TimeMapping::default(), names()).unwrap();
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    let golden_csv = include_str!("golden/forecast_fixture.csv");
    assert_eq!(String::from_utf8(csv).unwrap(), golden_csv);
    let golden_txt = include_str!("golden/forecast_fixture.txt");
    assert_eq!(t.render_text(3), golden_txt);
}
