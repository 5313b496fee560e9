use std::path::Path;
use std::process::Command;

fn slide() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slide"))
}

const TINY: &str = r#"
seed = 4
workers = 1

[data.synthetic]
num_train = 300
num_test = 60
dim = 200
num_labels = 100

[model]
hidden = [16]

[hash]
k = 4
l = 8

[sampler]
beta = 10

[train]
batch_size = 32
epochs = 2
learning_rate = 0.001
eval_every = 5

[bench]
sample_sizes = [500, 2000, 5000]
repeats = 2
neurons = 32
dim = 500
worker_counts = [1, 2, 4, 8]
scaling_iterations = 5
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path) -> std::process::Output {
    slide()
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("SLIDE_THREADS")
        .output()
        .unwrap()
}

/// Data rows of a CSV written by the binary, after checking the hash line.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    let hash = first.strip_prefix("# config-hash: ").expect("hash comment first");
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    let body: String = lines.collect::<Vec<_>>().join("\n");
    csv::Reader::from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn train_writes_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = run("train", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("train.csv"));
    assert!(!rows.is_empty());
    assert_eq!(rows[0].len(), 6);
    let walls: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(walls.windows(2).all(|w| w[0] <= w[1]));
    // 300 examples in batches of 32 for two epochs
    assert_eq!(rows.last().unwrap()[0], "20");
    assert!(out.join("model.ckpt").exists());
}

#[test]
fn single_worker_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("train", &cfg, &a).status.success());
    assert!(run("train", &cfg, &b).status.success());
    let strip_time = |p: &Path| -> Vec<Vec<String>> {
        csv_rows(p)
            .into_iter()
            .map(|mut r| {
                r.remove(1);
                r
            })
            .collect()
    };
    assert_eq!(strip_time(&a.join("train.csv")), strip_time(&b.join("train.csv")));
    assert_eq!(
        std::fs::read(a.join("model.ckpt")).unwrap(),
        std::fs::read(b.join("model.ckpt")).unwrap()
    );
}

#[test]
fn bench_commands_emit_one_row_per_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    for (cmd, file, rows) in [
        ("bench-samplers", "bench_samplers.csv", 9),
        ("bench-insertion", "bench_insertion.csv", 2),
        ("bench-scaling", "bench_scaling.csv", 4),
    ] {
        let o = run(cmd, &cfg, &out);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(csv_rows(&out.join(file)).len(), rows, "{cmd}");
    }
}

#[test]
fn bad_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for text in [
        "workers = 0\n",
        "[hash]\nfamily = \"cubehash\"\n",
        "no_such_key = 1\n",
        "[data]\ntrain = \"/nonexistent/train.txt\"\ntest = \"/nonexistent/test.txt\"\n",
    ] {
        let cfg = write_config(dir.path(), text);
        let o = run("train", &cfg, &out);
        assert!(!o.status.success(), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("slide: "));
    }
    let o = run("train", &dir.path().join("missing.toml"), &out);
    assert!(!o.status.success());
}

#[test]
fn workers_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = slide()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("SLIDE_THREADS", "not-a-number")
        .output()
        .unwrap();
    assert!(!o.status.success());
    let o = slide()
        .args(["train", "--workers", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("SLIDE_THREADS", "0")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
