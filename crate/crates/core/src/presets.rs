//! Reference data: a 15-level MCS table and the per-block rate distributions
//! of eight users sampled from an urban drive trace.

use crate::allocation::{CellConfig, User};
use crate::channel::{McsTable, RatePmf};
use crate::playout::FrameParams;

pub const TABLE_SINR_DB: [f64; 15] = [
    -9.5, -6.7, -4.1, -1.8, 0.4, 2.4, 4.5, 6.4, 8.5, 10.3, 12.2, 14.1, 15.8, 17.8, 19.8,
];

pub const TABLE_RATES_KBPS: [f64; 15] = [
    48.0, 73.6, 121.8, 192.2, 282.0, 378.0, 474.2, 712.0, 772.2, 874.8, 1063.8, 1249.6, 1448.4,
    1640.6, 1778.4,
];

pub const USER_PROBS: [[f64; 15]; 8] = [
    [0.0, 0.1, 0.72, 0.04, 0.05, 0.09, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.2, 0.7, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.02, 0.12, 0.51, 0.32, 0.01, 0.01, 0.01, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.01, 0.98, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.22, 0.04, 0.07, 0.04, 0.04, 0.06, 0.17, 0.15, 0.01, 0.01, 0.06, 0.06, 0.0, 0.03, 0.04],
    [0.17, 0.11, 0.1, 0.07, 0.05, 0.1, 0.17, 0.11, 0.02, 0.04, 0.0, 0.03, 0.0, 0.02, 0.01],
    [0.05, 0.03, 0.06, 0.07, 0.09, 0.17, 0.33, 0.08, 0.01, 0.01, 0.01, 0.03, 0.01, 0.03, 0.02],
    [0.0, 0.0, 0.0, 0.02, 0.01, 0.03, 0.06, 0.08, 0.01, 0.02, 0.01, 0.03, 0.0, 0.05, 0.68],
];

/// Resource blocks in the cell.
pub const BLOCKS: u32 = 275;
/// 3 MB of 5 kb packets.
pub const BUFFER_PACKETS: usize = 4800;
pub const FRAME_SECONDS: f64 = 0.010;
pub const PACKET_BITS: f64 = 5000.0;

pub fn mcs_table() -> McsTable {
    McsTable::new(
        TABLE_SINR_DB.to_vec(),
        TABLE_RATES_KBPS.iter().map(|r| r * 1e3).collect(),
    )
    .expect("reference table is valid")
}

/// Rate distribution of reference user `user` (1-based, 1..=8).
pub fn user_pmf(user: usize) -> RatePmf {
    assert!((1..=8).contains(&user), "reference users are numbered 1..=8");
    let rates: Vec<f64> = TABLE_RATES_KBPS.iter().map(|r| r * 1e3).collect();
    RatePmf::from_levels(&rates, &USER_PROBS[user - 1]).expect("reference rows are valid")
}

pub fn user_pmfs() -> Vec<RatePmf> {
    (1..=8).map(user_pmf).collect()
}

pub fn frame() -> FrameParams {
    FrameParams::new(FRAME_SECONDS, PACKET_BITS).expect("reference frame is valid")
}

/// Cell with the given reference users (1-based ids), default frame and buffer.
pub fn cell(users: &[usize]) -> CellConfig {
    CellConfig::new(
        users
            .iter()
            .map(|&u| User::new(u.to_string(), user_pmf(u)))
            .collect(),
        BLOCKS,
        frame(),
        BUFFER_PACKETS,
    )
    .expect("reference cell is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        for row in USER_PROBS {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(mcs_table().levels(), 15);
    }
}
