//! Geweke test of the sampler with continuous and with binary data.

mod common;

use common::geweke::{geweke_z_scores, Kinds};
use jnirm::DataKind;

fn check(kinds: Kinds, seed: u64) {
    let z = geweke_z_scores(&kinds, seed, 50_000, 200_000);
    for (name, z) in &z {
        println!("{name:>14}: z {z:6.2}");
    }
    let bad: Vec<_> = z.iter().filter(|(_, z)| z.abs() > 4.0).collect();
    assert!(bad.is_empty(), "moments differ: {bad:?}");
}

#[test]
fn geweke_continuous_network_and_items() {
    check(
        Kinds {
            network: DataKind::Continuous,
            items: DataKind::Continuous,
        },
        101,
    );
}

#[test]
fn geweke_binary_network_and_items() {
    check(
        Kinds {
            network: DataKind::Binary,
            items: DataKind::Binary,
        },
        202,
    );
}
