use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde_json::json;
use wbe::output::{read_matrix_csv, read_pgm, sidecar_path, PgmSidecar};
use wbe_core::helmholtz::store::{save_dataset, DatasetMeta, ForwardKind};
use wbe_core::helmholtz::WideBandDataset;
use wbe_core::media::Medium;
use wbe_core::model::Checkpoint;
use wbe_core::{read_tensor, write_tensor, Family, FrequencySet, Grids, Tensor};

fn wbe(dir: &Path, args: &[&str], config: &serde_json::Value) -> Output {
    let path = dir.join(format!("config_{}.json", args[0]));
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_wbe"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .env_remove("WBE_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|r| r.unwrap().iter().map(String::from).collect()));
    rows
}

fn born_config(out: &Path, n: usize, n_sc: usize) -> serde_json::Value {
    json!({
        "out": out,
        "dataset": {
            "family": "smooth", "N": n, "n_eta": n_sc, "n_sc": n_sc, "seed": 5,
            "freqs": [0.5, 1.0, 2.0], "forward": "born",
            "family_params": {"smooth_sigma_px": 1.5, "smooth_points": 4}
        }
    })
}

#[test]
fn gen_writes_the_dataset_layout_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = |out: &Path| {
        json!({
            "out": out,
            "dataset": {"family": "smooth", "N": 2, "n_eta": 16, "n_sc": 16, "seed": 11}
        })
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&wbe(tmp.path(), &["gen"], &cfg(&a)));
    ok(&wbe(tmp.path(), &["gen"], &cfg(&b)));
    let media = read_tensor(a.join("dataset/media.wbt")).unwrap();
    assert_eq!(media.dims(), &[2, 16, 16]);
    let freqs = FrequencySet::scaled_default(16);
    for f in freqs.freqs() {
        let name = format!("dataset/lambda_f{f}.wbt");
        let t = read_tensor(a.join(&name)).unwrap();
        assert_eq!(t.dims(), &[2, 16, 16]);
        assert!(t.as_complex().is_some());
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    assert_eq!(fs::read(a.join("dataset/media.wbt")).unwrap(), fs::read(b.join("dataset/media.wbt")).unwrap());
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(a.join("dataset/meta.json")).unwrap()).unwrap();
    assert_eq!((meta.n_sc, meta.n_eta, meta.seed, meta.forward), (16, 16, 11, ForwardKind::Pde));
    assert!(meta.solver.is_some());
}

#[test]
fn seed_environment_variable_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |out: PathBuf, seed: Option<&str>| {
        let path = tmp.path().join("c.json");
        fs::write(&path, born_config(&out, 2, 8).to_string()).unwrap();
        let mut c = Command::new(env!("CARGO_BIN_EXE_wbe"));
        c.args(["gen", "--config"]).arg(&path).env_remove("WBE_SEED");
        if let Some(s) = seed {
            c.env("WBE_SEED", s);
        }
        ok(&c.output().unwrap());
        fs::read(out.join("dataset/media.wbt")).unwrap()
    };
    let plain = run(tmp.path().join("p"), None);
    let same = run(tmp.path().join("s"), Some("5"));
    let other = run(tmp.path().join("o"), Some("6"));
    assert_eq!(plain, same);
    assert_ne!(plain, other);
    let meta = fs::read_to_string(tmp.path().join("o/dataset/meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 6"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    // unknown key
    let bad = json!({"out": out, "dataset": {"family": "smooth", "N": 1, "n_eta": 8, "n_sc": 8, "colour": 1}});
    assert_eq!(wbe(tmp.path(), &["gen"], &bad).status.code(), Some(1));
    assert!(!out.exists(), "validation must precede side effects");
    // invalid value
    let bad = json!({"out": out, "dataset": {"family": "smooth", "N": 0, "n_eta": 8, "n_sc": 8}});
    assert_eq!(wbe(tmp.path(), &["gen"], &bad).status.code(), Some(1));
    // missing section
    assert_eq!(wbe(tmp.path(), &["train"], &json!({"out": out})).status.code(), Some(1));
    // missing dataset on disk
    assert_eq!(wbe(tmp.path(), &["fbp"], &json!({"out": out, "fbp": {}})).status.code(), Some(3));
    // unreadable config
    let o = Command::new(env!("CARGO_BIN_EXE_wbe"))
        .args(["gen", "--config", "/definitely/not/here.json"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    // diverging optimiser
    let mut cfg = born_config(&out, 4, 8);
    ok(&wbe(tmp.path(), &["gen"], &cfg));
    cfg["train"] = json!({"lr": 1e300, "epochs": 3, "batch": 2, "train_fraction": 0.5});
    let o = wbe(tmp.path(), &["train"], &cfg);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite training loss"));
}

#[test]
fn fbp_on_born_data_solves_the_normal_equations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut cfg = born_config(&out, 3, 16);
    ok(&wbe(tmp.path(), &["gen"], &cfg));
    cfg["fbp"] = json!({"cg_tol": 1e-8, "pgm": true});
    let stdout = ok(&wbe(tmp.path(), &["fbp"], &cfg));
    assert!(stdout.contains("fbp mean rel_rmse"));
    let rows = csv_rows(&out.join("fbp/metrics.csv"));
    assert_eq!(rows[0], ["sample", "rel_rmse", "converged", "iterations", "max_relative_residual"]);
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert_eq!(r[2], "true");
        assert!(r[4].parse::<f64>().unwrap() <= 1e-8);
        assert!(r[1].parse::<f64>().unwrap() < 1.0);
    }
    assert_eq!(read_tensor(out.join("fbp/recon.wbt")).unwrap().dims(), &[3, 16, 16]);
    assert!(out.join("fbp/recon_0002.pgm").exists());
    assert!(sidecar_path(&out.join("fbp/recon_0002.pgm")).exists());
}

#[test]
fn fbp_on_zero_data_gives_zero_and_skips_the_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("zero");
    let grids = Grids::square(8).unwrap();
    let freqs = FrequencySet::new(vec![1.0, 2.0]).unwrap();
    let ds = WideBandDataset {
        grids,
        freqs: freqs.clone(),
        media: vec![Medium::zeros(8, Family::Custom); 2],
        data: vec![Array3::<Complex64>::zeros((2, 8, 8)); freqs.len()],
    };
    let meta = DatasetMeta {
        n_sc: 8,
        n_eta: 8,
        n_rho: 8,
        freqs: vec![1.0, 2.0],
        receiver_radius: grids.receiver_radius,
        seed: 0,
        family: Family::Custom,
        family_params: None,
        forward: ForwardKind::Born,
        solver: None,
    };
    save_dataset(&dir, &ds, &meta).unwrap();
    let path = tmp.path().join("c.json");
    fs::write(&path, json!({"out": tmp.path().join("o"), "fbp": {}}).to_string()).unwrap();
    fs::create_dir_all(tmp.path().join("o")).unwrap();
    fs::rename(&dir, tmp.path().join("o/dataset")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wbe")).args(["fbp", "--config"]).arg(&path).output().unwrap();
    let stdout = ok(&o);
    assert!(stdout.contains("rel_rmse undefined"));
    let recon = read_tensor(tmp.path().join("o/fbp/recon.wbt")).unwrap();
    assert!(recon.as_real().unwrap().iter().all(|&v| v == 0.0));
    let rows = csv_rows(&tmp.path().join("o/fbp/metrics.csv"));
    assert!(rows[1..].iter().all(|r| r[1].is_empty()));
}

#[test]
fn train_rotate_and_sweep_on_a_small_born_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut cfg = born_config(&out, 12, 8);
    ok(&wbe(tmp.path(), &["gen"], &cfg));

    // zero epochs: the checkpoint is the initialisation
    cfg["train"] = json!({"epochs": 0, "train_fraction": 0.75, "seed": 3});
    ok(&wbe(tmp.path(), &["train"], &cfg));
    let ck = Checkpoint::load(out.join("checkpoint")).unwrap();
    let spec = ck.params.spec.clone();
    let init = wbe_core::model::ModelParams::init(&spec, wbe_core::model::Init::KernelInit, 3).unwrap();
    assert_eq!(ck.params, init);
    assert_eq!(ck.epoch, 0);

    cfg["train"] = json!({"epochs": 3, "batch": 4, "lr": 1e-3, "train_fraction": 0.75, "seed": 3});
    let stdout = ok(&wbe(tmp.path(), &["train"], &cfg));
    let hist = csv_rows(&out.join("history.csv"));
    assert_eq!(hist[0], ["epoch", "train_mse", "val_rel_rmse", "lr"]);
    assert_eq!(hist.len(), 4);
    let final_val: f64 = hist[3][2].parse().unwrap();
    assert!(stdout.contains(&format!("final validation rel_rmse {final_val}")), "{stdout}");

    cfg["rotate-test"] = json!({"quarter_turns": [0, 4]});
    assert_eq!(wbe(tmp.path(), &["rotate-test"], &cfg).status.code(), Some(1));
    cfg["rotate-test"] = json!({"quarter_turns": [0, 1, 2, 3, 0]});
    ok(&wbe(tmp.path(), &["rotate-test"], &cfg));
    let rows = csv_rows(&out.join("rotate_test.csv"));
    assert_eq!(rows[0], ["quarter_turns", "degrees", "rel_rmse"]);
    assert_eq!(rows.len(), 6);
    let rel: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(rel[0], final_val);
    assert_eq!(rel[4], rel[0]);
    assert!(rel.iter().all(|r| r.is_finite()));

    cfg["sweep"] = json!({"sizes": [2, 4], "freq_sets": [[2.0], [0.5, 1.0, 2.0]], "test_size": 3});
    cfg["train"]["epochs"] = json!(1);
    ok(&wbe(tmp.path(), &["sweep", "--jobs", "2"], &cfg));
    let m = csv_rows(&out.join("sweep.csv"));
    assert_eq!(m[0], ["train_size", "f=2", "f=0.5+1+2"]);
    assert_eq!(m.len(), 3);
    assert!(m[1..].iter().all(|r| r[1..].iter().all(|v| v.parse::<f64>().is_ok())));
    assert_eq!(csv_rows(&out.join("sweep_cells.csv")).len(), 5);

    // sweep larger than the dataset is a config error
    cfg["sweep"]["sizes"] = json!([20]);
    assert_eq!(wbe(tmp.path(), &["sweep"], &cfg).status.code(), Some(1));
}

#[test]
fn export_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ex");
    let flat = tmp.path().join("flat.wbt");
    write_tensor(&flat, &Tensor::real(vec![4, 6], vec![2.5; 24]).unwrap()).unwrap();
    let cfg = json!({"out": out, "export": {"input": flat, "format": "pgm"}});
    ok(&wbe(tmp.path(), &["export"], &cfg));
    let (cols, rows, px) = read_pgm(&out.join("flat.pgm")).unwrap();
    assert_eq!((cols, rows), (6, 4));
    assert!(px.iter().all(|&g| g == 128));
    let sc: PgmSidecar = serde_json::from_str(&fs::read_to_string(out.join("flat.pgm.json")).unwrap()).unwrap();
    assert_eq!((sc.min, sc.max), (2.5, 2.5));

    let img = Array2::from_shape_fn((80, 80), |(i, j)| ((i * 7 + j * 13) as f64).sin() / 3.0);
    let stack = Array3::from_shape_fn((2, 80, 80), |(k, i, j)| img[[i, j]] * (k + 1) as f64);
    let media = tmp.path().join("media.wbt");
    write_tensor(&media, &Tensor::from_real_array(&stack).unwrap()).unwrap();
    let cfg = json!({"out": out, "export": {"input": media, "format": "pgm", "index": 0}});
    ok(&wbe(tmp.path(), &["export"], &cfg));
    assert!(fs::read(out.join("media_0.pgm")).unwrap().starts_with(b"P5 80 80 255\n"));

    let cfg = json!({"out": out, "export": {"input": media, "format": "csv", "index": 1, "output": out.join("m.csv")}});
    ok(&wbe(tmp.path(), &["export"], &cfg));
    let back = read_matrix_csv(&out.join("m.csv")).unwrap();
    let want = img.mapv(|v| 2.0 * v);
    assert!(back.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-12));

    // non-2D input
    let cfg = json!({"out": out, "export": {"input": media, "format": "csv"}});
    assert_eq!(wbe(tmp.path(), &["export"], &cfg).status.code(), Some(1));
}
