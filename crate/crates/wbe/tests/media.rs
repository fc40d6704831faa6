use wbe::commands::gen::generate_media;
use wbe::config::DatasetSection;

fn section(json: serde_json::Value) -> DatasetSection {
    serde_json::from_value(json).unwrap()
}

#[test]
fn tri5_pixel_count_respects_the_area_bound() {
    let s = section(serde_json::json!({"family": "tri5", "N": 12, "n_eta": 80, "n_sc": 80, "seed": 21}));
    let count = s.family_params.triangle_count as f64;
    let bound = count * 1.5 * (3f64.sqrt() / 4.0) * 25.0;
    for (i, m) in generate_media(&s).unwrap().iter().enumerate() {
        let filled = m.values.iter().filter(|v| **v != 0.0).count();
        assert!(filled > 0, "sample {i} is empty");
        assert!(filled as f64 <= bound, "sample {i}: {filled} pixels > {bound}");
    }
}

#[test]
fn media_depend_only_on_seed_and_index() {
    let a = generate_media(&section(serde_json::json!({"family": "smooth", "N": 3, "n_eta": 16, "n_sc": 16, "seed": 4}))).unwrap();
    let b = generate_media(&section(serde_json::json!({"family": "smooth", "N": 5, "n_eta": 16, "n_sc": 16, "seed": 4}))).unwrap();
    assert_eq!(a[..], b[..3]);
    let c = generate_media(&section(serde_json::json!({"family": "smooth", "N": 3, "n_eta": 16, "n_sc": 16, "seed": 5}))).unwrap();
    assert_ne!(a, c);
}
