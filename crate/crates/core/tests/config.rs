use gprhog::experiment::ExperimentConfig;

#[test]
fn shipped_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let shipped = ExperimentConfig::load(std::path::Path::new(path)).unwrap();
    assert_eq!(shipped, ExperimentConfig::default());
}

#[test]
fn mistyped_values_rejected_partial_files_accepted() {
    assert!(ExperimentConfig::from_toml("[forest]\nn_trees = \"many\"\n").is_err());
    let cfg = ExperimentConfig::from_toml("far_window = [0.002, 0.04]\n").unwrap();
    assert_eq!(cfg.far_window, (0.002, 0.04));
}
