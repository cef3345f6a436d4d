use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splatspace_core::oracle::reference_render;
use splatspace_core::render::{decode_png, encode_png, Camera};
use splatspace_core::splat::{parse_ply, serialize_ply, GaussianSplatAsset, Provenance, Splat};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splatspace"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CAM: &str = "0.3,0.2,-2;0,0,0;0.6;48x40";

fn single_splat() -> GaussianSplatAsset {
    GaussianSplatAsset::new(
        vec![Splat::new([0.0, 0.0, 0.0], [0.9, 0.1, 0.3, 0.0], [-1.6, -2.2, -1.9], 10.0, [1.2, -0.4, 0.3])],
        Provenance::File,
    )
}

/// Regenerates the single-splat fixture and its golden render from the
/// brute-force oracle when `UPDATE_GOLDEN` is set.
fn golden_single() -> (PathBuf, Vec<u8>) {
    let ply = fixtures().join("single.ply");
    let png = fixtures().join("single.png");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let asset = single_splat();
        std::fs::write(&ply, serialize_ply(&asset)).unwrap();
        let mut camera = Camera::new([0.3, 0.2, -2.0], [0.0; 3], 0.6, 48, 40);
        camera.near = 0.01;
        let image = reference_render(&asset, &camera, [10, 20, 30]);
        std::fs::write(&png, encode_png(&image.to_rgba_image())).unwrap();
    }
    (ply, std::fs::read(png).unwrap())
}

#[test]
fn render_matches_frozen_oracle_png() {
    let (ply, golden) = golden_single();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.png");
    let sidecar = dir.path().join("r.json");
    let o = bin()
        .args(["render", "--ply"])
        .arg(&ply)
        .args(["--cam", CAM, "--bg", "0a141e", "--out"])
        .arg(&out)
        .arg("--sidecar")
        .arg(&sidecar)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    assert!(bytes == golden, "render differs from the frozen oracle image");
    let cam: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar).unwrap()).unwrap();
    assert_eq!(cam["width"], 48);
    assert_eq!(cam["fov"], 0.6);
}

#[test]
fn empty_ply_renders_background() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("empty.ply");
    std::fs::write(&ply, serialize_ply(&GaussianSplatAsset::new(vec![], Provenance::File))).unwrap();
    let out = dir.path().join("e.png");
    let o = bin().args(["render", "--ply"]).arg(&ply).args(["--cam", CAM, "--bg", "#336699", "--out"]).arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let image = decode_png(&std::fs::read(out).unwrap()).unwrap();
    assert!(image.pixels().all(|p| p.0 == [0x33, 0x66, 0x99, 255]));
}

#[test]
fn bad_inputs_have_stable_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ply");
    std::fs::write(&bad, b"not a ply file\n").unwrap();
    let out = dir.path().join("x.png");
    let o = bin().args(["render", "--ply"]).arg(&bad).args(["--cam", CAM, "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: ") && err.contains("MalformedHeader") && err.trim_end().lines().count() == 1, "{err}");

    let missing = dir.path().join("none.ply");
    let o = bin().args(["render", "--ply"]).arg(&missing).args(["--cam", CAM, "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    let (ply, _) = golden_single();
    for (cam, bg) in [("1,2;0,0,0;0.5;8x8", "000000"), ("0,0,-2;0,0,0;0.5;8x8", "zz0000"), ("0,0,0;0,0,0;0.5;8x8", "000000")] {
        let o = bin().args(["render", "--ply"]).arg(&ply).args(["--cam", cam, "--bg", bg, "--out"]).arg(&out).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{cam} {bg}: {}", stderr(&o));
    }
    let o = bin().args(["render", "--ply"]).arg(&ply).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn write_symmetric(path: &Path) {
    let mut splats = Vec::new();
    for (i, x) in [0.15f32, 0.4, 0.7].into_iter().enumerate() {
        let y = i as f32 * 0.2 - 0.2;
        let color = [0.8 - i as f32 * 0.4, 0.2 * i as f32, 0.5];
        splats.push(Splat::new([x, y, 0.1], [1.0, 0.0, 0.0, 0.0], [-2.0, -2.3, -2.1], 2.0, color));
        splats.push(Splat::new([-x, y, 0.1], [1.0, 0.0, 0.0, 0.0], [-2.0, -2.3, -2.1], 2.0, color));
    }
    std::fs::write(path, serialize_ply(&GaussianSplatAsset::new(splats, Provenance::File))).unwrap();
}

#[test]
fn views_write_four_plus_n_files() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("sym.ply");
    write_symmetric(&ply);
    let out = dir.path().join("views");
    let o = bin().args(["views", "--ply"]).arg(&ply).arg("--out").arg(&out).args(["--frames", "6", "--resolution", "40"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 4 + 6);
    assert!(["front.png", "left.png", "right.png", "back.png", "orbit-000.png", "orbit-005.png"].iter().all(|n| names.contains(&n.to_string())));

    let read = |n: &str| std::fs::read(out.join(n)).unwrap();
    assert_eq!(read("orbit-000.png"), read("front.png"));

    let left = decode_png(&read("left.png")).unwrap();
    let right = decode_png(&read("right.png")).unwrap();
    let w = left.width();
    for (x, y, p) in left.enumerate_pixels() {
        let q = right.get_pixel(w - 1 - x, y);
        for c in 0..4 {
            assert!(p.0[c].abs_diff(q.0[c]) <= 2, "({x},{y}) {p:?} vs {q:?}");
        }
    }
    assert!(parse_ply(&std::fs::read(&ply).unwrap()).is_ok());
}

#[test]
fn views_of_empty_asset_fail() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("empty.ply");
    std::fs::write(&ply, serialize_ply(&GaussianSplatAsset::new(vec![], Provenance::File))).unwrap();
    let o = bin().args(["views", "--ply"]).arg(&ply).arg("--out").arg(dir.path().join("v")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("EmptyAsset"));
}
