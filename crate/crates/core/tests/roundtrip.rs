use seal_core::envsim::SceneParams;
use seal_core::evalharness::roundtrip::oracle_round_trip;
use seal_core::geometry::CameraModel;

#[test]
fn perfect_oracle_round_trip_reproduces_instance_masks() {
    let seeds: Vec<u64> = (0..5).collect();
    let report = oracle_round_trip(&seeds, &SceneParams::default(), &CameraModel::default(), 4, 20).unwrap();
    assert_eq!(report.poses, 20);
    assert!(!report.instances.is_empty());
    let worst = report.worst().unwrap();
    assert!(worst.iou >= 0.95, "{worst:?}");
}
