use std::collections::BTreeSet;
use std::fs;

use fastsal::archive::WeightArchive;
use fastsal::core::data::synth_dataset;
use fastsal::core::metrics::{DensityMap, FixationData};
use fastsal::core::net::{Model, ModelConfig};
use fastsal::core::Tensor;
use fastsal::dataset::{
    load_manifest, load_samples, read_fixations, save_manifest, split_manifest, write_fixations, write_samples,
    Manifest, ManifestEntry, Split,
};
use fastsal::pnm::{decode_image, encode_density, encode_ppm, load_density, load_image, save_density, save_image};
use fastsal::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ppm_examples() {
    let white = b"P6\n2 2\n255\n\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff";
    let t = decode_image(white).unwrap();
    assert_eq!(t.shape(), &[3, 2, 2]);
    assert!(t.data().iter().all(|&v| v == 1.0));

    let red = b"P6 # comment\n1 1\n255\n\xff\x00\x00";
    assert_eq!(decode_image(red).unwrap().data(), &[1.0, 0.0, 0.0]);

    // gray input is replicated to three channels
    let gray = b"P5\n2 1\n255\n\x00\x80";
    let g = decode_image(gray).unwrap();
    assert_eq!(g.shape(), &[3, 1, 2]);
    for c in 0..3 {
        assert_eq!(g.data()[c * 2], 0.0);
        assert!((g.data()[c * 2 + 1] - 128.0 / 255.0).abs() < 1e-7);
    }

    // 16-bit samples are big-endian
    let deep = b"P5\n1 1\n65535\n\x80\x00";
    assert!((decode_image(deep).unwrap().data()[0] - 32768.0 / 65535.0).abs() < 1e-7);
}

#[test]
fn ppm_errors() {
    for bad in [&b"P3\n1 1\n255\n"[..], b"P6\n1\n", b"P6\n0 1\n255\n", b"P6\n1 1\n255"] {
        assert!(decode_image(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
    }
    let err = decode_image(b"P6\n2 2\n255\n\x00\x00\x00").unwrap_err();
    assert!(err.contains("truncated"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.ppm");
    fs::write(&p, b"P6\n2 2\n255\n\x00").unwrap();
    assert!(matches!(load_image(&p), Err(Error::Format { .. })));
    assert!(matches!(load_image(&dir.path().join("absent.ppm")), Err(Error::Io { .. })));
}

#[test]
fn ppm_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let raw = Tensor::<f32>::uniform(&[3, 5, 7], 0.0, 1.0, &mut rng);
    // quantize first so the round trip is exact
    let img = raw.map(|v| (v * 255.0).round() / 255.0);
    let bytes = encode_ppm(&img).unwrap();
    assert_eq!(decode_image(&bytes).unwrap(), img);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ppm");
    save_image(&p, &img).unwrap();
    assert_eq!(load_image(&p).unwrap(), img);
    assert_eq!(fs::read(&p).unwrap(), bytes);
}

#[test]
fn density_pgm_round_trip() {
    let d = DensityMap::center_gaussian(9, 11, 2.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.pgm");
    save_density(&p, &d).unwrap();
    assert_eq!(&fs::read(&p).unwrap()[..2], b"P5");
    let back = load_density(&p).unwrap();
    assert_eq!(back.size(), (9, 11));
    assert!((back.sum() - 1.0).abs() < 1e-12);
    let top = d.values().iter().cloned().fold(0.0, f64::max);
    for (a, b) in d.values().iter().zip(back.values()) {
        // 16-bit quantization relative to the peak
        assert!((a - b).abs() <= top / 65535.0 + 1e-12);
    }
    // encoding is deterministic
    assert_eq!(encode_density(&d), encode_density(&d));
}

#[test]
fn fixations_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    let f = FixationData::new(6, 8, vec![(0, 0), (5, 7), (2, 3)]).unwrap();
    write_fixations(&p, &f).unwrap();
    assert_eq!(read_fixations(&p, (6, 8)).unwrap(), f);

    fs::write(&p, "1,2\n3,4\n").unwrap();
    assert_eq!(read_fixations(&p, (6, 8)).unwrap().points(), &[(1, 2), (3, 4)]);
    fs::write(&p, "row,col\n9,0\n").unwrap();
    assert!(read_fixations(&p, (6, 8)).is_err());
}

fn sample_manifest(dir: &std::path::Path, n: usize) -> Manifest {
    let data = synth_dataset(n, 16, 0.2, 5).unwrap();
    let splits: Vec<Split> = (0..n).map(|i| [Split::Train, Split::Val][i % 2]).collect();
    write_samples(dir, &data, &splits).unwrap()
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample_manifest(dir.path(), 4);
    let mp = dir.path().join("manifest.csv");
    save_manifest(&mp, &m).unwrap();
    let text = fs::read_to_string(&mp).unwrap();
    assert!(text.starts_with("image,ground_truth,split"));
    assert!(!text.contains(dir.path().to_str().unwrap()), "paths are stored relative");
    let back = load_manifest(&mp).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.of_split(Split::Train).len(), 2);

    let samples = load_samples(&back.entries.iter().collect::<Vec<_>>(), None).unwrap();
    assert_eq!(samples[0].id, "synth_00000");
    assert_eq!(samples[0].image.shape(), &[3, 16, 16]);
    assert!(!samples[0].fixations.is_empty());
    let resized = load_samples(&back.entries.iter().collect::<Vec<_>>(), Some((8, 8))).unwrap();
    assert_eq!(resized[0].image.shape(), &[3, 8, 8]);
    assert_eq!(resized[0].density.size(), (8, 8));
    assert_eq!(resized[0].fixations.size(), (8, 8));

    fs::remove_file(&m.entries[1].image).unwrap();
    assert!(matches!(load_manifest(&mp), Err(Error::Data(_))));
}

#[test]
fn manifest_minimal_columns() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::<f32>::full(&[3, 8, 8], 0.5);
    save_image(&dir.path().join("a.ppm"), &img).unwrap();
    fs::write(dir.path().join("a.csv"), "4,4\n").unwrap();
    let mp = dir.path().join("m.csv");
    fs::write(&mp, "image,ground_truth,split\na.ppm,a.csv,val\n").unwrap();
    let m = load_manifest(&mp).unwrap();
    assert_eq!(m.entries[0].split, Split::Val);
    assert_eq!(m.entries[0].fixations, None);
    let s = load_samples(&m.of_split(Split::Val), None).unwrap();
    assert_eq!(s[0].density.argmax(), 4 * 8 + 4);
}

#[test]
fn split_904_99() {
    let entries = (0..1003)
        .map(|i| ManifestEntry {
            image: format!("i{i}.ppm").into(),
            ground_truth: format!("i{i}.csv").into(),
            split: Split::Test,
            fixations: None,
            sigma: None,
        })
        .collect();
    let m = Manifest { entries };
    let a = split_manifest(&m, 904, 99, 11).unwrap();
    assert_eq!(a, split_manifest(&m, 904, 99, 11).unwrap());
    assert_eq!(a.of_split(Split::Train).len(), 904);
    assert_eq!(a.of_split(Split::Val).len(), 99);
    assert!(a.of_split(Split::Test).is_empty());
    let ids: BTreeSet<_> = a.entries.iter().map(|e| e.id()).collect();
    assert_eq!(ids.len(), 1003);
    assert!(split_manifest(&m, 1000, 99, 11).is_err());
}

#[test]
fn archive_round_trip_and_errors() {
    let cfg = ModelConfig::tiny(32, 2, 3);
    let model = Model::<f32>::build(&cfg, 4).unwrap();
    let arch = WeightArchive::from_model(&model);
    let bytes = arch.to_bytes().unwrap();
    assert_eq!(&bytes[..5], b"FSAL1");
    let path = std::path::Path::new("mem.fsal");
    let back = WeightArchive::from_bytes(&bytes, path).unwrap();
    assert_eq!(back, arch);
    let rebuilt = back.into_model(None).unwrap();
    let x = Tensor::<f32>::full(&[1, 3, 32, 32], 0.1);
    assert_eq!(rebuilt.forward(&x).unwrap(), model.forward(&x).unwrap());

    let err = WeightArchive::from_bytes(&bytes[..bytes.len() - 4], path).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");

    // a different width is reported by name, not silently loaded
    let other = Model::<f32>::build(&ModelConfig::tiny(32, 2, 1), 4).unwrap();
    let diff = arch.diff(&other.params);
    assert!(!diff.is_empty());
    assert!(diff.iter().any(|d| d.contains("fc")), "{diff:?}");
    let err = arch.clone().into_model(Some(&ModelConfig::tiny(32, 2, 1))).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let bare = WeightArchive {
        config: None,
        params: arch.params.clone(),
    };
    assert!(matches!(bare.into_model(None), Err(Error::Usage(_))));
}
