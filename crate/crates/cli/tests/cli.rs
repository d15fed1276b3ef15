use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cat_cli::config::CliConfig;
use cat_core::dsp::{write_wav, Waveform};
use cat_core::model::checkpoint::write_checkpoint;
use cat_core::model::CatModel;
use tempfile::TempDir;

fn cat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cat")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tone(path: &Path, freq: f64, seconds: f64) {
    let n = (32_000.0 * seconds) as usize;
    let samples = (0..n).map(|i| 0.5 * (TAU * freq * i as f64 / 32_000.0).sin()).collect();
    write_wav(path, &Waveform::new(samples, 32_000).unwrap()).unwrap();
}

/// Short clips and a narrow model so that a full train/eval cycle takes
/// well under a second.
const SHORT: &str = "\
dsp.mel_bands = 16
model.width = 8
model.heads = 2
model.layers = 1
model.time_embed_dim = 8
model.kernel = global
train.epochs = 3
train.batch = 4
data.synth.train_per_class = 4
data.synth.test_per_class = 2
data.synth.duration = 0.1
";

fn config_file(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_single_file() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("a.wav");
    tone(&wav, 440.0, 0.5);
    let out = dir.path().join("a.mrmf");
    let o = cat(&["extract", "--in", path_str(&wav), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(&fs::read(&out).unwrap()[..4], b"MRMF");
    let line = stdout(&o);
    assert!(line.contains("T=50") && line.contains("K=3") && line.contains("F=64"), "{line}");
}

#[test]
fn extract_directory_mirrors_names() {
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("in");
    fs::create_dir_all(src.join("sub")).unwrap();
    tone(&src.join("one.wav"), 300.0, 0.2);
    tone(&src.join("two.wav"), 600.0, 0.2);
    tone(&src.join("sub/three.wav"), 900.0, 0.2);
    fs::write(src.join("notes.txt"), "ignored").unwrap();
    let dst = dir.path().join("out");
    let o = cat(&["extract", "--in", path_str(&src), "--out", path_str(&dst)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for rel in ["one.mrmf", "two.mrmf", "sub/three.mrmf"] {
        assert!(dst.join(rel).is_file(), "{rel} missing");
    }
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn extract_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("a.wav");
    tone(&wav, 1234.0, 0.3);
    let (a, b) = (dir.path().join("a1.mrmf"), dir.path().join("a2.mrmf"));
    assert!(cat(&["extract", "--in", path_str(&wav), "--out", path_str(&a)]).status.success());
    assert!(cat(&["extract", "--in", path_str(&wav), "--out", path_str(&b)]).status.success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn unreadable_wav_is_named() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("broken.wav");
    fs::write(&bad, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();
    let o = cat(&["extract", "--in", path_str(&bad), "--out", path_str(&dir.path().join("x.mrmf"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("broken.wav"), "{}", stderr(&o));
}

fn reports(o: &Output) -> Vec<serde_json::Value> {
    stdout(o)
        .lines()
        .map(|l| serde_json::from_str(l).expect("epoch report is JSON"))
        .collect()
}

fn without_seconds(mut v: serde_json::Value) -> serde_json::Value {
    v.as_object_mut().unwrap().remove("seconds");
    v
}

#[test]
fn train_then_eval_on_synthetic_data() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(&dir, "short.cfg", SHORT);
    let ckpt = dir.path().join("model.catc");
    let o = cat(&["train", "--config", path_str(&cfg), "--synth", "--out", path_str(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = reports(&o);
    assert_eq!(lines.len(), 3);
    for (i, r) in lines.iter().enumerate() {
        assert_eq!(r["epoch"], i + 1);
        for key in ["l_theta", "l_c", "l_rs", "L", "train_acc", "eval_acc", "eval_map", "eval_l_rs", "seconds"] {
            assert!(r[key].is_number(), "{key} missing from {r}");
        }
    }

    let again = cat(&["train", "--config", path_str(&cfg), "--synth", "--out", path_str(&dir.path().join("b.catc"))]);
    let first: Vec<_> = lines.into_iter().map(without_seconds).collect();
    let second: Vec<_> = reports(&again).into_iter().map(without_seconds).collect();
    assert_eq!(first, second);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(dir.path().join("b.catc")).unwrap());

    let e = cat(&["eval", "--config", path_str(&cfg), "--checkpoint", path_str(&ckpt), "--synth", "test"]);
    assert!(e.status.success(), "{}", stderr(&e));
    let text = stdout(&e);
    let acc_line = text.lines().find(|l| l.starts_with("accuracy ")).unwrap();
    assert_eq!(acc_line.split(' ').nth(1).unwrap().split('.').nth(1).unwrap().len(), 4);
    assert!(text.lines().any(|l| l.starts_with("map ")));
}

#[test]
fn disabled_causal_term_logs_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(&dir, "ablate.cfg", &format!("{SHORT}loss.lambda_c = 0\n"));
    let o = cat(&["train", "--config", path_str(&cfg), "--synth", "--out", path_str(&dir.path().join("m.catc"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in reports(&o) {
        assert_eq!(r["l_c"].as_f64(), Some(0.0));
    }
}

#[test]
fn train_on_wav_folder() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    for (class, base) in [("high", 3000.0), ("low", 400.0)] {
        fs::create_dir_all(root.join(class)).unwrap();
        for i in 0..3 {
            tone(&root.join(class).join(format!("{i}.wav")), base + 50.0 * i as f64, 0.1 + 0.01 * i as f64);
        }
    }
    let cfg = config_file(&dir, "f.cfg", &format!("{SHORT}model.classes = 2\n"));
    let ckpt = dir.path().join("m.catc");
    let o = cat(&["train", "--config", path_str(&cfg), "--data", path_str(&root), "--out", path_str(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = cat(&["eval", "--config", path_str(&cfg), "--checkpoint", path_str(&ckpt), "--data", path_str(&root)]);
    assert!(e.status.success(), "{}", stderr(&e));
}

#[test]
fn config_violations_are_named() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(&dir, "bad.cfg", &format!("{SHORT}train.batch = 1\n"));
    let o = cat(&["train", "--config", path_str(&cfg), "--synth", "--out", path_str(&dir.path().join("m.catc"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("batch"), "{}", stderr(&o));

    let cfg = config_file(&dir, "unknown.cfg", "model.depth = 3\n");
    let o = cat(&["pns-verify", "--config", path_str(&cfg), "--count", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("model.depth"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(&dir, "short.cfg", SHORT);
    let ckpt = dir.path().join("bad.catc");
    fs::write(&ckpt, b"NOPE\x01\x00\x00\x00").unwrap();
    let o = cat(&["eval", "--config", path_str(&cfg), "--checkpoint", path_str(&ckpt), "--synth", "test"]);
    assert!(!o.status.success());
    assert!(o.stdout.is_empty());
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn mismatched_checkpoint_names_tensor() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(&dir, "short.cfg", SHORT);
    let wide = CliConfig::parse(&format!("{SHORT}model.width = 12\n")).unwrap();
    let model = CatModel::init(wide.model(10), 0).unwrap();
    let ckpt = dir.path().join("wide.catc");
    write_checkpoint(model.params(), &mut fs::File::create(&ckpt).unwrap()).unwrap();
    let o = cat(&["eval", "--config", path_str(&cfg), "--checkpoint", path_str(&ckpt), "--synth", "test"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("patch.mel.w"), "{}", stderr(&o));
}

#[test]
fn untrained_model_scores_near_chance() {
    use rand::{Rng, SeedableRng};
    // Every class holds clips from one noise distribution, so labels carry
    // no acoustic information.
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("noise");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for class in ["a", "b", "c", "d"] {
        fs::create_dir_all(root.join(class)).unwrap();
        for i in 0..50 {
            let samples = (0..3200).map(|_| rng.random_range(-0.3..0.3)).collect();
            write_wav(root.join(class).join(format!("{i}.wav")), &Waveform::new(samples, 32_000).unwrap()).unwrap();
        }
    }
    let cfg_path = config_file(&dir, "chance.cfg", SHORT);
    let cfg = CliConfig::parse(SHORT).unwrap();
    let model = CatModel::init(cfg.model(cfg.dsp.frames_for(3200)), 99).unwrap();
    let ckpt = dir.path().join("init.catc");
    write_checkpoint(model.params(), &mut fs::File::create(&ckpt).unwrap()).unwrap();
    let o = cat(&["eval", "--config", path_str(&cfg_path), "--checkpoint", path_str(&ckpt), "--data", path_str(&root)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("accuracy "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((acc - 0.25).abs() <= 0.15, "accuracy {acc}");
}

#[test]
fn gradcheck_preset_passes_and_lists_every_group() {
    let o = cat(&["gradcheck"]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    let preset = CliConfig::gradcheck_preset();
    let model = CatModel::init(preset.model(preset.gradcheck_frames), preset.gradcheck_seed).unwrap();
    for (name, _) in model.params().iter() {
        assert!(
            text.lines().any(|l| l.split_whitespace().next() == Some(name) && l.ends_with("ok")),
            "{name} missing or failing"
        );
    }
}

#[test]
fn broken_gradient_is_caught() {
    let o = cat(&["gradcheck", "--break-gradient"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
    assert!(stderr(&o).contains("gradient check failed for"));
}

#[test]
fn pns_verify_reports_no_violations() {
    let o = cat(&["pns-verify", "--count", "50", "--seed", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.trim_end().ends_with("54 models, 0 violations"));
    let bij: Vec<&str> = text.lines().find(|l| l.contains("bijective")).unwrap().split_whitespace().collect();
    assert_eq!(&bij[4..7], &["1.000000", "1.000000", "1.000000"]);
    let ind: Vec<&str> = text.lines().find(|l| l.contains("independent")).unwrap().split_whitespace().collect();
    assert_eq!(ind[4], "0.000000");
    assert!(ind[5].parse::<f64>().unwrap() <= 0.0);
}

#[test]
fn dumped_defaults_load_back() {
    let o = cat(&["--dump-defaults"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for (key, _, _) in CliConfig::default().entries() {
        assert!(text.contains(&format!("{key} =")), "{key} not dumped");
    }
    assert_eq!(CliConfig::parse(&text).unwrap(), CliConfig::default());
}
