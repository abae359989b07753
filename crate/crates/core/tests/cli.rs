//! Black-box checks of the `voicecloak` binary: flag plumbing, exit
//! codes, output formats, and the determinism contract. Everything
//! runs on a 3-speaker miniature corpus so the whole file stays fast.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use voicecloak::encoder::{init_params, EncoderConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voicecloak"))
}

/// --speakers 3 --utterances 6 --duration 0.4 plus a patch length that
/// matches the clip, shared by every tiny run below. Six utterances
/// leave two held out per speaker, the minimum that yields any
/// same-speaker trial pairs.
const TINY: &[&str] = &[
    "--speakers",
    "3",
    "--utterances",
    "6",
    "--duration",
    "0.4",
    "--patch-length",
    "6400",
];

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn voicecloak")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    trials: PathBuf,
}

/// One tiny corpus (seed 7), synthesized once per test process.
fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let mut args = vec!["synth", "--out", root.to_str().unwrap(), "--seed", "7"];
        args.extend_from_slice(TINY);
        let out = run(&args);
        assert!(out.status.success(), "synth failed: {}", stderr(&out));
        Corpus {
            manifest: root.join("manifest.csv"),
            trials: root.join("trials.txt"),
            _dir: dir,
            root,
        }
    })
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref())
        .unwrap_or_else(|e| panic!("read {}: {e}", path.as_ref().display()))
}

#[test]
fn synth_is_deterministic_and_prints_paths() {
    let c = corpus();
    let out_line = {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("again");
        let mut args = vec!["synth", "--out", root.to_str().unwrap(), "--seed", "7"];
        args.extend_from_slice(TINY);
        let out = run(&args);
        assert!(out.status.success());
        for rel in ["manifest.csv", "trials.txt", "wav/spk001_utt003.wav"] {
            assert_eq!(
                read(c.root.join(rel)),
                read(root.join(rel)),
                "{rel} differs between identical synth runs"
            );
        }
        stdout(&out)
    };
    assert!(out_line.contains("manifest="), "stdout: {out_line}");
    assert!(out_line.contains("trials="), "stdout: {out_line}");
}

#[test]
fn synth_into_unwritable_dir_fails() {
    let out = run(&["synth", "--out", "/dev/null/sub", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));
}

#[test]
fn train_zero_epochs_serializes_the_initial_weights() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("zero.hspk");
    let mut args = vec![
        "train",
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "0",
        "--seed",
        "9",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("final_epoch_loss=n/a"));

    let expected_path = dir.path().join("expected.hspk");
    let expected = init_params(&EncoderConfig::preset("cfgA").unwrap().with_seed(9), 3);
    expected.save(&expected_path).unwrap();
    assert_eq!(
        read(&model),
        read(&expected_path),
        "untrained model file should be exactly the serialized initial weights"
    );
}

#[test]
fn train_names_the_bad_manifest_line() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("broken.csv");
    std::fs::write(&manifest, "wav/a.wav,0\nwav/b.wav\n").unwrap();
    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("m.hspk").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("broken.csv:2:"),
        "stderr should name line 2: {}",
        stderr(&out)
    );
}

#[test]
fn evaluate_prints_the_metrics_line() {
    let c = corpus();
    let mut args = vec![
        "evaluate",
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--trials",
        c.trials.to_str().unwrap(),
        "--epochs",
        "1",
        "--seed",
        "3",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    let line = line.trim();
    assert!(line.starts_with("EER="), "stdout: {line}");
    assert!(line.contains("% minDCF="), "stdout: {line}");
    let eer: f64 = line
        .strip_prefix("EER=")
        .and_then(|r| r.split('%').next())
        .unwrap()
        .parse()
        .expect("EER parses as a number");
    assert!((0.0..=100.0).contains(&eer));
}

#[test]
fn evaluate_without_trials_file_fails() {
    let c = corpus();
    let out = run(&[
        "evaluate",
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--trials",
        "/nonexistent/trials.txt",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("trials.txt"), "{}", stderr(&out));
}

fn train_tiny_model(c: &Corpus, dir: &Path) -> PathBuf {
    let model = dir.join("gen.hspk");
    let mut args = vec![
        "train",
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "1",
        "--seed",
        "5",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    model
}

#[test]
fn protect_with_zero_epsilon_copies_the_corpus_bit_for_bit() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny_model(c, dir.path());
    let prot = dir.path().join("prot");
    let mut args = vec![
        "protect",
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--out",
        prot.to_str().unwrap(),
        "--epsilon",
        "0",
        "--steps",
        "2",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(prot.join("protection.log").is_file());
    for spk in 0..3 {
        for utt in 0..4 {
            let rel = format!("wav/spk{spk:03}_utt{utt:03}.wav");
            assert_eq!(
                read(c.root.join(&rel)),
                read(prot.join(&rel)),
                "{rel} changed under a zero perturbation bound"
            );
        }
    }
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let model = train_tiny_model(c, dir.path());
    let cfg_path = dir.path().join("settings.cfg");
    std::fs::write(&cfg_path, "epsilon = 0\nsteps = 2\n").unwrap();

    // config file alone: epsilon 0 wins over the built-in default
    let from_file = dir.path().join("from_file");
    let mut args = vec![
        "protect",
        "--config",
        cfg_path.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--out",
        from_file.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let rel = "wav/spk000_utt000.wav";
    assert_eq!(read(c.root.join(rel)), read(from_file.join(rel)));

    // the flag overrides the file
    let from_flag = dir.path().join("from_flag");
    let mut args = vec![
        "protect",
        "--config",
        cfg_path.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--out",
        from_flag.to_str().unwrap(),
        "--epsilon",
        "0.005",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_ne!(
        read(c.root.join(rel)),
        read(from_flag.join(rel)),
        "a nonzero bound from the flag should actually perturb"
    );
}

#[test]
fn unknown_config_key_is_rejected_with_its_line() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "epochs = 1\nnonsense = 3\n").unwrap();
    let out = run(&[
        "evaluate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--manifest",
        c.manifest.to_str().unwrap(),
        "--trials",
        c.trials.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("nonsense"), "{err}");
    assert!(err.contains("bad.cfg:2:"), "should name line 2: {err}");
}
