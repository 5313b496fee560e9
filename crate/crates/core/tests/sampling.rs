use slide_core::oracle::simulate_retrieval;
use slide_core::sampler::{retrieval_probability, ProbeParam, SamplingStrategy};

#[test]
fn vanilla_formula_matches_simulation() {
    let (k, l) = (2, 10);
    let p = 0.8f64;
    let tau = 3;
    let exact = retrieval_probability(SamplingStrategy::Vanilla, p, k, l, ProbeParam::TablesProbed(tau)).unwrap();
    let sim = simulate_retrieval(SamplingStrategy::Vanilla, p, k, l, ProbeParam::TablesProbed(tau), 100_000, 1).unwrap();
    assert!((exact - sim).abs() <= 0.01, "{exact} vs {sim}");
}

#[test]
fn hard_threshold_tail_matches_sampler_simulation() {
    for q in [0.2f64, 0.5, 0.8] {
        let p = q.sqrt();
        for m in [1, 3, 5, 8] {
            let exact =
                retrieval_probability(SamplingStrategy::HardThreshold, p, 2, 10, ProbeParam::MinFreq(m)).unwrap();
            let sim = simulate_retrieval(SamplingStrategy::HardThreshold, p, 2, 10, ProbeParam::MinFreq(m), 20_000, 7)
                .unwrap();
            assert!((exact - sim).abs() <= 0.015, "q={q} m={m}: {exact} vs {sim}");
        }
    }
}

#[test]
fn threshold_curves_are_nested_and_monotone() {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let curve = |m: usize| -> Vec<f64> {
        grid.iter()
            .map(|&p| retrieval_probability(SamplingStrategy::HardThreshold, p, 1, 10, ProbeParam::MinFreq(m)).unwrap())
            .collect()
    };
    let curves: Vec<Vec<f64>> = (1..=9).map(curve).collect();
    for c in &curves {
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(c[0], 0.0);
        assert!((c[100] - 1.0).abs() < 1e-12);
    }
    for pair in curves.windows(2) {
        assert!(pair[0].iter().zip(&pair[1]).all(|(lo, hi)| hi <= lo));
    }
}

#[test]
fn threshold_tail_has_no_rounding_dips() {
    for l in [5usize, 10, 50] {
        for k in 1..4 {
            for m in 1..=l {
                let mut prev = 0.0;
                for i in 0..=5000 {
                    let p = i as f64 / 5000.0;
                    let v =
                        retrieval_probability(SamplingStrategy::HardThreshold, p, k, l, ProbeParam::MinFreq(m)).unwrap();
                    assert!(v >= prev, "l={l} k={k} m={m} p={p}: {v} < {prev}");
                    prev = v;
                }
            }
        }
    }
}
