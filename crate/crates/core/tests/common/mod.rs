#![allow(dead_code)]

use std::path::PathBuf;

use jadpp::scenario::Scenario;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(config_path(name)).expect("shipped config loads")
}

/// Eight antennas, one user with one MPC.
pub fn single_mpc(n: usize, aoa: f64, spread: f64, power_db: f64) -> Scenario {
    Scenario::from_json_str(&format!(
        r#"{{
        "n_antennas": {n}, "channel_memory": 2, "slow_pilot_len": 8, "fast_pilot_len": 8,
        "rf_chains": 4, "search_beams": 2, "sector_deg": [-45, 45], "grid_size": 90,
        "look_spread_deg": 3, "snapshots": 2, "p_fa": 0.001, "guard_deg": 4,
        "users": [{{"id": 1, "group": 1, "power_db": {power_db},
                   "mpcs": [{{"delay": 1, "aoa_deg": {aoa}, "spread_deg": {spread}}}]}}]
        }}"#
    ))
    .unwrap()
}
