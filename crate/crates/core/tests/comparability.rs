use crplus::ingest::{apply_comparability, IngestConfig};

#[test]
fn comparability_examples_exact() {
    let cfg = IngestConfig::default();
    assert_eq!(apply_comparability(100, 1.25, 1990, &cfg), 125);
    assert_eq!(apply_comparability(50, 0.78, 1990, &cfg), 39);
    assert_eq!(apply_comparability(25, 0.78, 1996, &cfg), 20);
    assert_eq!(apply_comparability(25, 0.78, 1997, &cfg), 25);
    assert_eq!(apply_comparability(100, 1.25, 2011, &cfg), 100);
}

#[test]
fn no_cutoff_means_no_adjustment() {
    let cfg = IngestConfig {
        comparability_cutoff_year: None,
        ..IngestConfig::default()
    };
    assert_eq!(apply_comparability(50, 0.78, 1987, &cfg), 50);
}

#[test]
fn halves_round_up_everywhere() {
    let cfg = IngestConfig::default();
    for n in 0..2000u64 {
        // n * 0.5 lands on .5 for every odd n
        let want = n / 2 + n % 2;
        assert_eq!(apply_comparability(n, 0.5, 1990, &cfg), want);
    }
}
