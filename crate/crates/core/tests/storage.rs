use num_complex::Complex64;
use serde_json::Value;
use wbe_core::{read_tensor, write_tensor, Rng, Tensor};

#[test]
fn rng_stream_matches_reference_splitmix() {
    let fixture: Value = serde_json::from_str(include_str!("fixtures/rng_seed_20240601.json")).unwrap();
    let mut rng = Rng::new(fixture["seed"].as_u64().unwrap());
    for want in fixture["first_16_u64"].as_array().unwrap() {
        assert_eq!(rng.next_u64(), want.as_u64().unwrap());
    }
    assert_eq!(rng.counter(), 16);
}

#[test]
fn large_complex_tensor_roundtrips_through_disk() {
    let n = 1usize << 20;
    let data: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new((i as f64).sin(), -(i as f64) * 1e-3))
        .collect();
    let t = Tensor::complex(vec![1 << 10, 1 << 10], data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.wbt");
    write_tensor(&path, &t).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 2 * 8 + 16 * n as u64);
    assert_eq!(read_tensor(&path).unwrap(), t);
}

#[test]
fn truncated_file_is_rejected() {
    let t = Tensor::real(vec![4, 4], (0..16).map(f64::from).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.wbt");
    write_tensor(&path, &t).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_tensor(&path).is_err());
}
