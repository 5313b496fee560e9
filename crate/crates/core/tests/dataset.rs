use slide_core::data::{synthetic, Dataset, SyntheticConfig};

#[test]
fn file_round_trip() {
    let (train, _) = synthetic(&SyntheticConfig {
        num_train: 500,
        num_test: 0,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.txt");
    train.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), train);
}

#[test]
fn crlf_file_parses_like_lf() {
    let dir = tempfile::tempdir().unwrap();
    let lf = dir.path().join("lf.txt");
    let crlf = dir.path().join("crlf.txt");
    let text = "3 6 4\n0,3 0:1 5:2.5\n1 2:0.5\n2 1:1 3:1 4:1\n";
    std::fs::write(&lf, text).unwrap();
    std::fs::write(&crlf, text.replace('\n', "\r\n")).unwrap();
    assert_eq!(Dataset::load(&lf).unwrap(), Dataset::load(&crlf).unwrap());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = Dataset::load(std::path::Path::new("/nonexistent/data.txt")).unwrap_err();
    assert!(matches!(err, slide_core::data::DataError::Io(_)));
}
