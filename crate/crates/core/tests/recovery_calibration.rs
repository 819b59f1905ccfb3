//! Recomputes the subspace-recovery threshold frozen in the acceptance
//! suite. Slow (50 default fits), so ignored by default:
//! `cargo test -p envreg-core --test recovery_calibration -- --ignored --nocapture`.

use envreg::eval::{largest_principal_angle, simulate, SimConfig};
use envreg::mcem::{fit_from, FitConfig};

const FROZEN_THRESHOLD: f64 = 0.2232374788016513;

#[test]
#[ignore]
fn truth_initialized_angle_percentile() {
    let mut angles: Vec<f64> = (1000..1050u64)
        .map(|seed| {
            let (y, x, truth) = simulate(&SimConfig { seed, ..SimConfig::default() }).unwrap();
            let cfg = FitConfig { s: 4, k: 4, seed, ..FitConfig::default() };
            let f = fit_from(&y, &x, &cfg, &truth.basis).unwrap();
            largest_principal_angle(&f.basis, &truth.basis).unwrap()
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let theta = angles[(0.95 * angles.len() as f64).ceil() as usize - 1];
    println!("theta* = {theta:.16}");
    assert_eq!(theta, FROZEN_THRESHOLD);
}
