use std::process::Command;
use std::time::Duration;

use revfilt_core::filters::doctor;
use revfilt_core::io::quantize;
use revfilt_core::{BlackBoxFilter, Error, ExternalFilter, FilterSpec, Image};

fn ramp() -> Image {
    Image::from_fn(24, 16, |x, y| ((x * 11 + y * 5) % 256) as f64 / 255.0).unwrap()
}

fn on_8bit_grid(img: &Image) -> Image {
    img.map("quantize", |v| quantize(v) as f64 / 255.0).unwrap()
}

#[test]
fn cat_is_identity_on_8bit_images() {
    let img = on_8bit_grid(&ramp());
    let out = ExternalFilter::new("cat").apply(&img).unwrap();
    assert_eq!(out, img);
}

#[test]
fn nonzero_exit_is_reported() {
    let err = ExternalFilter::new("cat >/dev/null; echo boom >&2; exit 3")
        .apply(&ramp())
        .unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::ExternalFilter { .. }), "{msg}");
    assert!(msg.contains("boom") || msg.contains('3'), "{msg}");
}

#[test]
fn slow_child_times_out() {
    let f = ExternalFilter::new("sleep 5; cat").with_timeout(Duration::from_millis(300));
    let start = std::time::Instant::now();
    let err = f.apply(&ramp()).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(4));
    assert!(err.to_string().contains("time"), "{err}");
}

#[test]
fn resized_output_is_rejected() {
    let script = "cat >/dev/null; printf 'P5\\n2 2\\n255\\n\\000\\000\\000\\000'";
    assert!(ExternalFilter::new(script).apply(&ramp()).is_err());
    let report = doctor(&ExternalFilter::new(script), &ramp());
    assert!(report.map(|r| !r.healthy()).unwrap_or(true));
}

#[test]
fn spec_builds_external_filter() {
    let spec: FilterSpec = "extern:cmd=cat,timeout=5".parse().unwrap();
    let img = on_8bit_grid(&ramp());
    assert_eq!(spec.build().unwrap().apply(&img).unwrap(), img);
}

const SCIPY_GAUSSIAN: &str = r#"
import sys
import numpy as np
from scipy.ndimage import gaussian_filter
data = sys.stdin.buffer.read()
parts = data.split(maxsplit=4)
w, h = int(parts[1]), int(parts[2])
img = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w) / 255.0
out = gaussian_filter(img, 2.0, mode="nearest", truncate=3.0)
px = np.clip(np.round(out * 255.0), 0, 255).astype(np.uint8)
sys.stdout.buffer.write(b"P5\n%d %d\n255\n" % (w, h) + px.tobytes())
"#;

fn scipy_available() -> bool {
    Command::new("python3")
        .args(["-c", "import numpy, scipy.ndimage"])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

#[test]
fn gaussian_matches_scipy_through_extern() {
    if !scipy_available() {
        eprintln!("python3 with scipy not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("gauss.py");
    std::fs::write(&script, SCIPY_GAUSSIAN).unwrap();
    let external = ExternalFilter::new(format!("python3 {}", script.display()));
    let builtin: FilterSpec = "gaussian:sigma=2".parse().unwrap();

    let img = on_8bit_grid(&Image::from_fn(40, 30, |x, y| if (x / 8 + y / 6) % 2 == 0 { 0.9 } else { 0.1 }).unwrap());
    let ours = builtin.build().unwrap().apply(&img).unwrap();
    let theirs = external.apply(&img).unwrap();
    let diff = ours.max_abs_diff(&theirs).unwrap();
    assert!(diff <= 2.0 / 255.0, "max difference {diff}");
}
