use std::path::Path;

use proptest::prelude::*;
use retifluid::pgm::*;
use retifluid::CliError;
use retifluid_core::image::{GrayImage, LabelMap};

fn p() -> &'static Path {
    Path::new("test.pgm")
}

proptest! {
    #[test]
    fn encode_parse_roundtrip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u8> = (0..h * w).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let img = Pgm { width: w, height: h, data };
        prop_assert_eq!(parse_pgm(&encode_pgm(&img), p()).unwrap(), img);
    }
}

#[test]
fn header_comments_and_whitespace() {
    let mut bytes = b"P5 # made by hand\n# another\n3\t2\n# max\n255\n".to_vec();
    bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
    let img = parse_pgm(&bytes, p()).unwrap();
    assert_eq!((img.width, img.height), (3, 2));
    assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn malformed_files_are_format_errors() {
    let cases: [&[u8]; 7] = [
        b"P2\n2 2\n255\n1 2 3 4",
        b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0",
        b"P5\n2 2\n255\n\x01\x02\x03",
        b"P5\n2\n",
        b"P5\n0 2\n255\n",
        b"",
        b"P5\n2 2\n255",
    ];
    for bytes in cases {
        let err = parse_pgm(bytes, p()).unwrap_err();
        assert!(matches!(err, CliError::Format(_)), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn image_and_mask_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::new(2, 3, vec![0.0, 1.0, 0.5, 0.2, 1.5, -0.3]).unwrap();
    let path = dir.path().join("i.pgm");
    save_image(&path, &img).unwrap();
    let back = load_image(&path).unwrap();
    let want = [0.0, 255.0, 128.0, 51.0, 255.0, 0.0].map(|v: f64| v / 255.0);
    assert_eq!(back.data, want.to_vec());
    // quantised images survive unchanged
    save_image(&path, &back).unwrap();
    assert_eq!(load_image(&path).unwrap(), back);

    let mask = LabelMap::new(2, 2, vec![0, 3, 1, 2]).unwrap();
    let mp = dir.path().join("m.pgm");
    save_mask(&mp, &mask).unwrap();
    assert_eq!(load_mask(&mp).unwrap(), mask);
    let err = load_mask(&dir.path().join("missing.pgm")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
