use imbalance_core::scenario::load_si_trace_csv;
use imbalance_core::{generate_strategy_fixture, load_scenario, save_scenario, Archetype, Error};

#[test]
fn scenario_file_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("latch.json");
    let s = generate_strategy_fixture(Archetype::BeMfrrLatch, 3);
    save_scenario(&s, &path).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), s);
}

#[test]
fn si_trace_file_is_read_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("si.csv");
    std::fs::write(&path, "minute,system_imbalance_mw\n0,1.5\n1,-2\n2,0\n").unwrap();
    assert_eq!(load_si_trace_csv(&path).unwrap(), vec![1.5, -2.0, 0.0]);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_scenario(dir.path().join("nope.json")), Err(Error::Io(_))));
}
