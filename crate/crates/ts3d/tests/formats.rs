use std::path::Path;

use proptest::prelude::*;
use ts3d::image::{encode_ppm, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm};
use ts3d::kitti::{format_calib, format_labels, parse_calib, parse_labels};
use ts3d::Error;
use ts3d_core::label::{Calibration, ObjectLabel};
use ts3d_core::Tensor;

fn here() -> &'static Path {
    Path::new("test.txt")
}

#[test]
fn reference_line_fields() {
    let l = parse_labels("Car 0.00 0 -1.57 0 0 100 50 1.5 1.6 3.9 0 1.5 20 -1.57\n", here()).unwrap();
    assert_eq!(l.len(), 1);
    let l = &l[0];
    assert_eq!(l.kind, "Car");
    assert_eq!(l.occluded, 0);
    assert_eq!(l.bbox, [0.0, 0.0, 100.0, 50.0]);
    assert_eq!(l.dimensions, [1.5, 1.6, 3.9]);
    assert_eq!(l.location, [0.0, 1.5, 20.0]);
    assert_eq!(l.rotation_y, -1.57);
    assert_eq!(l.score, None);
}

#[test]
fn score_column_and_dont_care() {
    let text = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n\
                Pedestrian 0 1 0.2 1 2 3 4 1.7 0.6 0.8 1 1.6 9 0.3 0.875\n";
    let l = parse_labels(text, here()).unwrap();
    assert_eq!(l.len(), 2);
    assert!(l[0].is_dont_care());
    assert_eq!(l[0].class(), None);
    assert_eq!(l[1].score, Some(0.875));
    assert_eq!(parse_labels(&format_labels(&l), here()).unwrap(), l);
}

#[test]
fn malformed_lines_report_their_number() {
    let text = "Car 0 0 0 0 0 1 1 1 1 1 0 1.5 20 0\n\nCar 0 0 0 0 0 1 1 1 1 1 0 1.5 twenty 0\n";
    match parse_labels(text, here()) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("twenty"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    match parse_labels("Car 0 0 0\n", here()) {
        Err(Error::Parse { line: 1, msg, .. }) => assert!(msg.contains("15 or 16"), "{msg}"),
        other => panic!("expected a field-count error, got {other:?}"),
    }
    assert!(matches!(parse_labels("Car 0 x 0 0 0 1 1 1 1 1 0 1.5 20 0", here()), Err(Error::Parse { line: 1, .. })));
}

fn arb_label() -> impl Strategy<Value = ObjectLabel> {
    (
        prop::sample::select(vec!["Car", "Pedestrian", "Cyclist", "DontCare"]),
        -1.0e3..1.0e3f64,
        -1i32..4,
        prop::array::uniform4(-2.0e3..2.0e3f64),
        prop::array::uniform3(0.01..10.0f64),
        prop::array::uniform3(-100.0..100.0f64),
        -3.2..3.2f64,
        prop::option::of(0.0..1.0f64),
    )
        .prop_map(|(kind, truncated, occluded, bbox, dimensions, location, ry, score)| ObjectLabel {
            kind: kind.to_string(),
            truncated,
            occluded,
            alpha: ry / 2.0,
            bbox,
            dimensions,
            location,
            rotation_y: ry,
            score,
        })
}

proptest! {
    #[test]
    fn label_round_trip_is_exact(labels in prop::collection::vec(arb_label(), 0..8)) {
        // Scores are per file: all or none.
        let mut labels = labels;
        let scored = labels.first().is_some_and(|l| l.score.is_some());
        for l in &mut labels {
            if !scored { l.score = None } else if l.score.is_none() { l.score = Some(0.5) }
        }
        prop_assert_eq!(parse_labels(&format_labels(&labels), here()).unwrap(), labels);
    }
}

#[test]
fn calibration_round_trip_and_disparity() {
    let c = Calibration::stereo(721.0, 609.5, 172.8, 0.54);
    let back = parse_calib(&format_calib(&c), here()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.focal(), 721.0);
    assert!((back.baseline() - 0.54).abs() < 1e-12);
    // f·b/z = 721 · 0.54 / 10
    assert!((back.disparity_at(10.0) - 38.934).abs() < 1e-9);
}

#[test]
fn missing_p3_is_an_error() {
    let c = Calibration::stereo(200.0, 128.0, 64.0, 0.3);
    let text: String = format_calib(&c).lines().filter(|l| !l.starts_with("P3")).map(|l| format!("{l}\n")).collect();
    match parse_calib(&text, here()) {
        Err(Error::Parse { msg, .. }) => assert!(msg.contains("P3"), "{msg}"),
        other => panic!("expected a missing-row error, got {other:?}"),
    }
    assert!(parse_calib("P2: 1 2 3\nP3: 1 2 3 4 5 6 7 8 9 10 11 12\n", here()).is_err());
}

#[test]
fn pixmap_round_trip_is_identity_on_8_bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ppm");
    let img = Tensor::from_fn(&[5, 7, 3], |i| ((i * 37) % 256) as f32 / 255.0);
    write_ppm(&p, &img).unwrap();
    let back = read_ppm(&p).unwrap();
    assert_eq!(back.shape(), img.shape());
    assert_eq!(back.data(), img.data());
    assert_eq!(encode_ppm(&back).unwrap(), std::fs::read(&p).unwrap());
    assert!(encode_ppm(&Tensor::<f32>::zeros(&[2, 2])).is_err());
}

#[test]
fn pixmap_header_comments_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.ppm");
    let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
    bytes.extend([0, 128, 255, 255, 0, 51]);
    std::fs::write(&p, bytes).unwrap();
    let img = read_ppm(&p).unwrap();
    assert_eq!(img.shape(), &[1, 2, 3]);
    assert_eq!(img.data()[5], 0.2);
    std::fs::write(&p, b"P6\n2 1\n255\n\x00").unwrap();
    assert!(read_ppm(&p).is_err());
}

#[test]
fn float_and_gray_maps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.37 - 1.0).collect();
    write_pfm(&dir.path().join("d.pfm"), 4, 3, &values).unwrap();
    assert_eq!(read_pfm(&dir.path().join("d.pfm")).unwrap(), (4, 3, values));
    let gray: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
    write_pgm(&dir.path().join("g.pgm"), 4, 3, &gray).unwrap();
    assert_eq!(read_pgm(&dir.path().join("g.pgm")).unwrap(), (4, 3, gray));
    assert!(write_pgm(&dir.path().join("bad.pgm"), 4, 4, &[0.0; 3]).is_err());
}
