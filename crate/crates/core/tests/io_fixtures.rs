use std::path::PathBuf;

use texloss::imaging::Spacing;
use texloss::io::{self, SampleWidth};
use texloss::{Domain, GrayImage};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Written by numpy: big-endian u16 samples holding HU + 1024.
#[test]
fn loads_externally_written_pgm() {
    let img = io::load_image(&fixture("known_2x2.pgm")).unwrap();
    assert_eq!((img.width(), img.height()), (2, 2));
    assert_eq!(img.domain(), Domain::Hounsfield);
    assert_eq!(img.data(), &[-1024.0, 0.0, 1000.0, 3071.0]);
}

/// Written with Python's `struct` module in single precision.
#[test]
fn loads_externally_written_native_grid() {
    let img = io::load_image(&fixture("normalized_3x2_f32.txg")).unwrap();
    assert_eq!((img.width(), img.height()), (3, 2));
    assert_eq!(img.domain(), Domain::Normalized);
    assert_eq!(img.spacing(), Some(Spacing::new(0.7, 0.8)));
    assert_eq!(img.data(), &[-0.5, 0.25, 1.0, -1.0, 0.0, 0.75]);
}

#[test]
fn pgm_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    let img = GrayImage::new(3, 1, vec![-1024.0, 12.0, 2000.0], Domain::Hounsfield).unwrap();
    io::save_image(&path, &img).unwrap();
    let back = io::load_image(&path).unwrap();
    assert_eq!(back.data(), img.data());
    assert_eq!(std::fs::read(&path).unwrap()[..2], *b"P5");
}

#[test]
fn native_round_trip_is_lossless_in_double_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.txg");
    let img = GrayImage::new(2, 2, vec![0.1, -1.0 / 3.0, 0.7, 1.0], Domain::Normalized)
        .unwrap()
        .with_spacing(Spacing::new(0.5, 0.6));
    io::save_native(&path, &img).unwrap();
    assert_eq!(io::load_native(&path).unwrap(), img);
    let single = io::decode_native(&io::encode_native(&img, SampleWidth::F32)).unwrap();
    assert_eq!(single.data()[1], (-1.0f32 / 3.0) as f64);
}

#[test]
fn rejects_corrupt_files() {
    let bytes = std::fs::read(fixture("normalized_3x2_f32.txg")).unwrap();
    assert!(io::decode_native(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(io::decode_native(&bad).is_err());
    assert!(io::decode_pgm(b"P2\n1 1\n255\n0").is_err());
}
