use spottunet_core::datagen::DatasetConfig;
use spottunet_core::harness::ExperimentPlan;
use spottunet_core::strategies::Profile;

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> T {
    serde_json::from_str(text).unwrap()
}

#[test]
fn shipped_dataset_configs_match_the_defaults() {
    let desk: DatasetConfig = parse(include_str!("../../../configs/dataset_desk.json"));
    let compact: DatasetConfig = parse(include_str!("../../../configs/dataset_compact.json"));
    assert_eq!(desk, DatasetConfig::desk(0));
    assert_eq!(compact, DatasetConfig::compact(0));
    desk.validate().unwrap();
}

#[test]
fn shipped_plans_match_the_defaults() {
    let desk: ExperimentPlan = parse(include_str!("../../../configs/plan_desk.json"));
    let compact: ExperimentPlan = parse(include_str!("../../../configs/plan_compact.json"));
    assert_eq!(desk, ExperimentPlan::desk("data/desk", "runs", Profile::Desk));
    assert_eq!(compact, ExperimentPlan::desk("data/compact", "runs", Profile::Compact));
    desk.validate().unwrap();
}
