use crate::mempool::Mempool;

/// Seven unit-size transactions with prices 1, e, e^(−1/12), e^(5/12), 1, 1,
/// e^(−3); with k = 3 and λ = 1 the clamp shift is 1/3.
pub fn table2() -> Mempool {
    Mempool::from_prices(&[
        1.0,
        1f64.exp(),
        (-1.0f64 / 12.0).exp(),
        (5.0f64 / 12.0).exp(),
        1.0,
        1.0,
        (-3.0f64).exp(),
    ])
    .unwrap()
}

/// Equilibrium marginals of [`table2`].
pub fn table1_profile() -> Vec<f64> {
    vec![1.0 / 3.0, 1.0, 0.25, 0.75, 1.0 / 3.0, 1.0 / 3.0, 0.0]
}
