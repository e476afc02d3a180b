//! Golden-file check of the path serialization schema.

use pathfbsde::DiscretePath;

#[test]
fn path_json_schema_is_stable() {
    let text = include_str!("data/path.json");
    let path: DiscretePath = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(path.dim(), 1);
    // history segment on [0, 1], spliced grid values after
    assert_eq!(path.value_at(0.25), &[1.0]);
    assert_eq!(path.value_at(0.75), &[2.0]);
    assert_eq!(path.value_at(1.0), &[2.0]);
    assert_eq!(path.value_at(1.6), &[4.0]);
    // stopped extension past the horizon
    assert_eq!(path.value_at(9.0), &[3.0]);
    assert_eq!(path.sup_norm(), 4.0);

    // writing back reproduces the golden byte string
    let again = serde_json::to_string(&path).unwrap();
    assert_eq!(again, text.trim());
}
