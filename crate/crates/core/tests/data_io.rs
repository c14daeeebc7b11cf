use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use softlif::data::{
    center_crop, center_offset, load_cifar10_bin, load_mnist_idx, mnist_paths, write_idx_images, write_idx_labels,
    Split,
};
use softlif::tensor::Tensor;
use softlif::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[test]
fn mnist_fixture_matches_raw_bytes() {
    let dir = fixtures().join("mnist");
    for split in [Split::Train, Split::Test] {
        let (images, labels) = mnist_paths(&dir, split);
        let ds = load_mnist_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.image_shape(), [1, 28, 28]);
        assert_eq!(ds.split(), split);
        let raw_images = std::fs::read(&images).unwrap();
        let raw_labels = std::fs::read(&labels).unwrap();
        for i in [0, 37, 99] {
            assert_eq!(ds.label(i), raw_labels[8 + i] as usize);
            let px = &raw_images[16 + i * 784..16 + (i + 1) * 784];
            for (a, &b) in ds.pixels(i).iter().zip(px) {
                assert_eq!(*a, b as f32 / 255.0);
            }
        }
    }
}

#[test]
fn gzip_and_plain_files_load_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
    let labels = [3u8, 0, 9];
    let plain_i = tmp.path().join("train-images-idx3-ubyte");
    let plain_l = tmp.path().join("train-labels-idx1-ubyte");
    write_idx_images(&plain_i, 4, 5, &pixels).unwrap();
    write_idx_labels(&plain_l, &labels).unwrap();
    let plain = load_mnist_idx(&plain_i, &plain_l).unwrap();

    let gz_dir = tmp.path().join("gz");
    std::fs::create_dir(&gz_dir).unwrap();
    for src in [&plain_i, &plain_l] {
        let dst = gz_dir.join(format!("{}.gz", src.file_name().unwrap().to_string_lossy()));
        let mut enc = GzEncoder::new(std::fs::File::create(dst).unwrap(), Compression::default());
        enc.write_all(&std::fs::read(src).unwrap()).unwrap();
        enc.finish().unwrap();
    }
    let (gi, gl) = mnist_paths(&gz_dir, Split::Train);
    assert!(gi.to_string_lossy().ends_with(".gz"));
    let gz = load_mnist_idx(gi, gl).unwrap();
    assert_eq!(plain.labels(), gz.labels());
    assert_eq!(plain.labels(), &labels);
    assert_eq!(gz.image_shape(), [1, 4, 5]);
    for i in 0..3 {
        assert_eq!(plain.pixels(i), gz.pixels(i));
    }
}

#[test]
fn truncated_idx_reports_path_and_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("train-images-idx3-ubyte");
    let labels = tmp.path().join("train-labels-idx1-ubyte");
    write_idx_images(&images, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
    write_idx_labels(&labels, &[1, 2]).unwrap();
    let mut bytes = std::fs::read(&images).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&images, &bytes).unwrap();
    match load_mnist_idx(&images, &labels).unwrap_err() {
        Error::Parse { path, offset, reason } => {
            assert_eq!(path, images);
            assert_eq!(offset, 21);
            assert!(reason.contains("truncated"), "{reason}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn bad_magic_and_label_range_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("i");
    let labels = tmp.path().join("l");
    write_idx_images(&images, 1, 1, &[0]).unwrap();
    write_idx_labels(&labels, &[10]).unwrap();
    let err = load_mnist_idx(&images, &labels).unwrap_err().to_string();
    assert!(err.contains("outside 0..=9"), "{err}");
    // Swapping the files trips the magic check.
    let err = load_mnist_idx(&labels, &images).unwrap_err().to_string();
    assert!(err.contains("bad magic"), "{err}");
}

#[test]
fn label_count_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("i");
    let labels = tmp.path().join("l");
    write_idx_images(&images, 1, 1, &[0, 1]).unwrap();
    write_idx_labels(&labels, &[1]).unwrap();
    assert!(matches!(load_mnist_idx(&images, &labels), Err(Error::Parse { .. })));
}

#[test]
fn cifar_record_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("test_batch.bin");
    let mut record = vec![6u8];
    // Channel-major planes: red = 10, green = 20, blue = 30, plus one marked pixel.
    for v in [10u8, 20, 30] {
        record.extend(std::iter::repeat_n(v, 1024));
    }
    record[1 + 1024 + 5 * 32 + 7] = 255;
    std::fs::write(&path, &record).unwrap();
    let ds = load_cifar10_bin(&[&path]).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.label(0), 6);
    assert_eq!(ds.split(), Split::Test);
    let img = ds.image(0);
    assert_eq!(img.shape(), &[3, 32, 32]);
    assert_eq!(img.data()[0], 10.0 / 255.0);
    assert_eq!(img.data()[1024], 20.0 / 255.0);
    assert_eq!(img.data()[2048 + 1023], 30.0 / 255.0);
    assert_eq!(img.data()[1024 + 5 * 32 + 7], 1.0);

    std::fs::write(&path, &record[..3000]).unwrap();
    assert!(matches!(
        load_cifar10_bin(&[&path]),
        Err(Error::Parse { offset: 0, .. })
    ));
}

#[test]
fn cifar_fixture_loads() {
    let ds = load_cifar10_bin(&[fixtures().join("cifar10/test_batch.bin")]).unwrap();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds.image_shape(), [3, 32, 32]);
    for i in 0..100 {
        assert_eq!(ds.label(i), i % 10);
    }
}

#[test]
fn center_crop_takes_the_middle() {
    assert_eq!(center_offset(32, 32, 24), (4, 4));
    let data: Vec<f32> = (0..3 * 32 * 32).map(|i| i as f32).collect();
    let img = Tensor::new(vec![3, 32, 32], data).unwrap();
    let out = center_crop(&img, 24).unwrap();
    assert_eq!(out.shape(), &[3, 24, 24]);
    for c in 0..3 {
        for y in 0..24 {
            for x in 0..24 {
                let expected = (c * 1024 + (y + 4) * 32 + x + 4) as f32;
                assert_eq!(out.data()[(c * 24 + y) * 24 + x], expected);
            }
        }
    }
    assert!(center_crop(&img, 33).is_err());
}

#[test]
fn missing_file_names_the_path() {
    let err = load_mnist_idx("/nonexistent/a", "/nonexistent/b")
        .unwrap_err()
        .to_string();
    assert!(err.contains("/nonexistent/a"), "{err}");
}
