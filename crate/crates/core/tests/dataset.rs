use mdseg::data::pgm::Pgm;
use mdseg::data::{generate, generate_dataset, load_dataset, DatasetConfig, DatasetPreset, Split};

fn two_domains(n_train: usize, n_test: usize) -> DatasetConfig {
    let mut c = DatasetConfig::preset(DatasetPreset::Toy);
    for d in &mut c.domains {
        d.n_train = n_train;
        d.n_test = n_test;
    }
    c
}

#[test]
fn written_dataset_loads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = two_domains(10, 5);
    let (manifest, path) = generate_dataset(&config, 1, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 30);
    assert!(path.ends_with("manifest.json"));
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, generate(&config, 1).unwrap());
    assert_eq!(load_dataset(&path).unwrap(), loaded);
    for d in 0..2 {
        assert_eq!(loaded.count(Split::Train, d), 10);
        assert_eq!(loaded.count(Split::Test, d), 5);
    }
}

#[test]
fn files_follow_the_pgm_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = generate_dataset(&two_domains(3, 1), 2, dir.path()).unwrap();
    for e in &manifest.entries {
        let bytes = std::fs::read(dir.path().join(&e.mask)).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let mask = Pgm::decode(&bytes).unwrap();
        assert_eq!(mask.maxval, 255);
        assert!(mask.pixels.iter().all(|&p| p == 0 || p == 255));
        assert_eq!(mdseg::metrics::objects(&mask.to_mask()).len(), 1);
        let image = Pgm::read(&dir.path().join(&e.image)).unwrap();
        assert_eq!((image.width, image.height), (64, 64));
    }
}

#[test]
fn corrupt_manifest_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.json"), "{\"seed\": 1").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("manifest.json"), "{err}");
}
