use mlem::theory::{e_gamma, geometric_sum, geometric_sum_bound};

const ORACLE: &str = include_str!("data/e_gamma_oracle.txt");

fn oracle_rows() -> Vec<(f64, f64, f64)> {
    ORACLE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn e_gamma_matches_high_precision_values() {
    let rows = oracle_rows();
    assert_eq!(rows.len(), 100);
    for (g, r, want) in rows {
        let got = e_gamma(g, r);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs(),
            "gamma {g} r {r}: {got} vs {want}"
        );
    }
}

#[test]
fn geometric_bound_dominates_direct_sum() {
    for gi in 0..=40 {
        let gamma = 0.1 * gi as f64 + 0.05 * (gi % 3) as f64;
        for k_min in -3..=3 {
            for k_max in k_min..=k_min + 25 {
                let s = geometric_sum(gamma, k_min, k_max);
                let b = geometric_sum_bound(gamma, k_min, k_max);
                assert!(
                    s <= b * (1.0 + 1e-12),
                    "gamma {gamma} [{k_min}, {k_max}]: {s} > {b}"
                );
            }
        }
    }
}
