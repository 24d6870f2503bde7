mod common;

use harp_cli::checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
use harp_cli::CliError;
use harp_core::env::ScenarioConfig;
use proptest::prelude::*;

fn bits(c: &Checkpoint) -> Vec<(String, Vec<usize>, Vec<u64>)> {
    c.store
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                p.value.shape().to_vec(),
                p.value.data().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

#[test]
fn zero_step_training_gives_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_checkpoint(dir.path(), "5v6", 3);
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.meta.env_steps, 0);
    assert_eq!(loaded.meta.train_seed, 3);
    assert_eq!(loaded.meta.scenario, "5v6");
    loaded.check_scenario(&ScenarioConfig::named("5v6").unwrap()).unwrap();
}

#[test]
fn header_layout() {
    let bytes = common::untrained("8v8", 0).to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
}

#[test]
fn round_trip_is_bit_identical() {
    let original = common::untrained("5v6", 11);
    let back = Checkpoint::from_bytes(&original.to_bytes()).unwrap();
    assert_eq!(bits(&original), bits(&back));
    assert_eq!(original.meta, back.meta);
    assert_eq!(original.net, back.net);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn arbitrary_values_survive(values in proptest::collection::vec(any::<f64>(), 1..64), seed in 0u64..4) {
        let mut c = common::untrained("5v6", seed);
        let mut k = 0;
        for p in c.store.iter_mut() {
            for v in p.value.data_mut() {
                *v = values[k % values.len()];
                k += 1;
            }
        }
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(bits(&c), bits(&back));
    }
}

#[test]
fn wrong_scenario_is_a_checkpoint_error() {
    let c = common::untrained("5v6", 0);
    let err = c.check_scenario(&ScenarioConfig::named("8v8").unwrap()).unwrap_err();
    assert!(matches!(err, CliError::Checkpoint(_)), "{err}");
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = common::untrained("5v6", 0).to_bytes();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(CliError::Checkpoint(m)) if m.contains("magic")));

    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(CliError::Checkpoint(m)) if m.contains("version")));

    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(CliError::Checkpoint(m)) if m.contains("truncated")));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(Checkpoint::from_bytes(&trailing), Err(CliError::Checkpoint(m)) if m.contains("trailing")));
}

#[test]
fn blobs_must_match_the_architecture() {
    // an 8v8 metadata block in front of 5v6 parameter blobs
    let small = common::untrained("5v6", 0).to_bytes();
    let big = common::untrained("8v8", 0).to_bytes();
    let meta_end = |b: &[u8]| 12 + u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    let mut spliced = big[..meta_end(&big)].to_vec();
    spliced.extend_from_slice(&small[meta_end(&small)..]);
    let err = Checkpoint::from_bytes(&spliced).unwrap_err();
    assert!(matches!(err, CliError::Checkpoint(_)), "{err}");
}
