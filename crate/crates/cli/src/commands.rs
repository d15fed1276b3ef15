use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cat_core::causal::{DiscreteScm, PnsEstimate};
use cat_core::dsp::{load_wav, MrmfExtractor};
use cat_core::model::checkpoint::{read_checkpoint, write_checkpoint};
use cat_core::model::CatModel;
use cat_core::train::{
    check_objective_gradients, evaluate, split_per_class, synth_dataset, Dataset, Example, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::CliConfig;

/// Largest model the gradient check accepts, in scalar parameters.
pub const GRADCHECK_PARAM_LIMIT: usize = 20_000;
const ORDER_SLACK: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-10;

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn write_feature(extractor: &MrmfExtractor, input: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let wave = load_wav(input).with_context(|| format!("loading {}", input.display()))?;
    let feat = extractor
        .extract(&wave)
        .with_context(|| format!("extracting {}", input.display()))?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(output).with_context(|| format!("creating {}", output.display()))?);
    feat.write_to(&mut w)?;
    w.flush()?;
    writeln!(
        out,
        "{}\tT={}\tK={}\tF={}",
        output.display(),
        feat.frames(),
        feat.resolutions(),
        feat.bands()
    )?;
    Ok(())
}

/// One `.mrmf` per WAV; a directory input mirrors its layout under `output`.
pub fn extract(cfg: &CliConfig, input: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let extractor = MrmfExtractor::new(cfg.dsp.clone())?;
    if input.is_dir() {
        let files = wav_files(input)?;
        if files.is_empty() {
            bail!("no .wav files under {}", input.display());
        }
        for f in files {
            let rel = f.strip_prefix(input).expect("walked from input");
            write_feature(&extractor, &f, &output.join(rel).with_extension("mrmf"), out)?;
        }
        Ok(())
    } else {
        write_feature(&extractor, input, output, out)
    }
}

/// Loads `<root>/<class>/*.wav`; labels follow the sorted class names. Clips
/// are cut to the shortest clip's frame count.
pub fn load_wav_folder(root: &Path, extractor: &MrmfExtractor) -> Result<(Dataset, Vec<String>)> {
    let mut classes: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.len() < 2 {
        bail!("{} must hold at least two class directories", root.display());
    }
    let mut examples = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        for f in wav_files(dir)? {
            let wave = load_wav(&f).with_context(|| format!("loading {}", f.display()))?;
            let features = extractor.extract(&wave).with_context(|| format!("extracting {}", f.display()))?;
            examples.push(Example { features, label });
        }
    }
    let frames = examples.iter().map(|e| e.features.frames()).min().unwrap_or(0);
    if frames == 0 {
        bail!("no usable .wav files under {}", root.display());
    }
    for e in &mut examples {
        e.features = e.features.truncate_frames(frames)?;
    }
    let names = classes
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    Ok((Dataset::new(examples, classes.len())?, names))
}

/// The synthetic corpus split into training and test sets.
pub fn synth_split(cfg: &CliConfig) -> Result<(Dataset, Dataset)> {
    let extractor = MrmfExtractor::new(cfg.dsp.clone())?;
    let spec = cfg.synth();
    if cfg.classes != spec.classes.len() {
        bail!(
            "model.classes = {} but the synthetic corpus has {} classes",
            cfg.classes,
            spec.classes.len()
        );
    }
    let waves = synth_dataset(&spec)?;
    let (train, test) = split_per_class(&waves, cfg.synth_train_per_class);
    Ok((
        Dataset::from_waveforms(&train, &extractor, cfg.classes)?,
        Dataset::from_waveforms(&test, &extractor, cfg.classes)?,
    ))
}

fn folder(cfg: &CliConfig, root: &Path) -> Result<Dataset> {
    let (data, names) = load_wav_folder(root, &MrmfExtractor::new(cfg.dsp.clone())?)?;
    if data.classes != cfg.classes {
        bail!(
            "{} holds {} classes ({}) but model.classes = {}",
            root.display(),
            data.classes,
            names.join(", "),
            cfg.classes
        );
    }
    Ok(data)
}

pub enum TrainData {
    Folder(PathBuf),
    Synth,
}

pub fn train(cfg: &CliConfig, data: TrainData, checkpoint: &Path, out: &mut dyn Write) -> Result<()> {
    let (train, eval) = match data {
        TrainData::Synth => synth_split(cfg)?,
        TrainData::Folder(root) => {
            let train = folder(cfg, &root)?;
            let eval = match &cfg.eval_path {
                Some(p) => folder(cfg, p)?,
                None => train.clone(),
            };
            (train, eval)
        }
    };
    let frames = train.examples[0].features.frames();
    let mut trainer = Trainer::new(cfg.train(frames))?;
    eprintln!(
        "training on {} clips ({} eval), {} parameters",
        train.len(),
        eval.len(),
        trainer.model().params().scalar_count()
    );
    let mut io_err = None;
    trainer.run(&train, &eval, |r| {
        eprintln!(
            "epoch {:>3}  L {:.4}  acc {:.4}  map {:.4}",
            r.epoch, r.total, r.eval_acc, r.eval_map
        );
        let line = serde_json::to_string(r).expect("report serializes");
        if let Err(e) = writeln!(out, "{line}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let mut w = BufWriter::new(File::create(checkpoint).with_context(|| format!("creating {}", checkpoint.display()))?);
    write_checkpoint(trainer.model().params(), &mut w)?;
    w.flush()?;
    eprintln!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

pub fn load_model(cfg: &CliConfig, checkpoint: &Path, frames: usize) -> Result<CatModel> {
    let mut model = CatModel::init(cfg.model(frames), cfg.seed)?;
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let entries = read_checkpoint(&mut BufReader::new(file)).with_context(|| format!("reading {}", checkpoint.display()))?;
    model
        .load_params(entries)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok(model)
}

pub enum EvalData {
    Folder(PathBuf),
    SynthTrain,
    SynthTest,
}

pub fn eval(cfg: &CliConfig, checkpoint: &Path, data: EvalData, out: &mut dyn Write) -> Result<()> {
    let data = match data {
        EvalData::Folder(root) => folder(cfg, &root)?,
        EvalData::SynthTrain => synth_split(cfg)?.0,
        EvalData::SynthTest => synth_split(cfg)?.1,
    };
    let model = load_model(cfg, checkpoint, data.examples[0].features.frames())?;
    let m = evaluate(&model, &data)?;
    if !m.skipped_classes.is_empty() {
        eprintln!("classes absent from the data, skipped in mAP: {:?}", m.skipped_classes);
    }
    writeln!(out, "accuracy {:.4}", m.accuracy)?;
    writeln!(out, "map {:.4}", m.map)?;
    writeln!(out, "l_rs {:.4}", m.l_rs)?;
    Ok(())
}

/// Prints one row per parameter tensor; `Ok(false)` when any fails.
pub fn gradcheck(cfg: &CliConfig, sabotage: bool, out: &mut dyn Write) -> Result<bool> {
    let model = cfg.model(cfg.gradcheck_frames);
    let count = CatModel::init(model.clone(), cfg.gradcheck_seed)?.params().scalar_count();
    if count > GRADCHECK_PARAM_LIMIT {
        bail!("gradient check needs a tiny model: {count} parameters exceed the limit of {GRADCHECK_PARAM_LIMIT}");
    }
    let report = check_objective_gradients(
        &model,
        cfg.gradcheck_batch,
        cfg.gradcheck_seed,
        cfg.weights,
        cfg.epsilon,
        sabotage,
    )?;
    writeln!(out, "{:<34} {:>7} {:>12} {:>12}  status", "group", "entries", "max_rel", "max_abs")?;
    for p in &report.params {
        writeln!(
            out,
            "{:<34} {:>7} {:>12.3e} {:>12.3e}  {}",
            p.name,
            p.entries,
            p.max_rel_error,
            p.max_abs_error,
            if p.passed { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(
        out,
        "{} groups, {count} parameters, max relative error {:.3e}",
        report.params.len(),
        report.max_rel_error()
    )?;
    let failing: Vec<&str> = report.failing().map(|p| p.name.as_str()).collect();
    if !failing.is_empty() {
        eprintln!("gradient check failed for: {}", failing.join(", "));
    }
    Ok(failing.is_empty())
}

fn canonical_cases() -> Vec<(&'static str, DiscreteScm, usize, usize)> {
    let identity = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let flat = vec![vec![0.7, 0.3], vec![0.7, 0.3]];
    vec![
        (
            "bijective",
            DiscreteScm::functional(vec![0.5, 0.5], &[0, 1], 2, identity).expect("valid"),
            1,
            1,
        ),
        (
            "independent",
            DiscreteScm::functional(vec![0.5, 0.5], &[0, 1], 2, flat.clone()).expect("valid"),
            1,
            1,
        ),
        (
            "constant-f",
            DiscreteScm::functional(vec![0.5, 0.5], &[0, 0], 2, flat.clone()).expect("valid"),
            0,
            1,
        ),
        (
            "outside-image",
            DiscreteScm::functional(vec![0.5, 0.5], &[0, 0], 2, flat).expect("valid"),
            1,
            1,
        ),
    ]
}

fn fmt_opt(v: Option<&PnsEstimate>) -> String {
    v.map_or_else(|| "-".into(), |e| format!("{:.6}", e.value))
}

/// Compares exact PNS, the interventional bound, and the observational
/// estimate on canonical and random models. `Ok(false)` on any violation.
pub fn pns_verify(seed: u64, count: usize, out: &mut dyn Write) -> Result<bool> {
    if count == 0 {
        bail!("--count must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(String, DiscreteScm, usize, usize)> = canonical_cases()
        .into_iter()
        .map(|(n, s, z, y)| (n.to_string(), s, z, y))
        .collect();
    for i in 0..count {
        let (label, confounded, stochastic) = match i % 3 {
            0 => ("random", false, false),
            1 => ("confounded", true, false),
            _ => ("stochastic-f", false, true),
        };
        let scm = DiscreteScm::random(&mut rng, confounded, stochastic);
        let z = rng.random_range(0..scm.nz());
        let y = rng.random_range(0..scm.ny());
        cases.push((format!("{label}-{i}"), scm, z, y));
    }

    writeln!(
        out,
        "{:>4}  {:<18} {:>2} {:>2} {:>10} {:>10} {:>10} {:>10}  status",
        "id", "case", "z", "y", "exact", "bound", "observ", "gap"
    )?;
    let mut violations = 0usize;
    for (id, (name, scm, z, y)) in cases.iter().enumerate() {
        let exact = scm.brute_force_pns(*z, *y)?;
        let bound = scm.interventional_bound(*z, *y)?;
        let obs = if scm.is_deterministic() {
            Some(scm.observational_estimate(*z, *y)?)
        } else {
            None
        };
        let mut problems = Vec::new();
        if !(-1e-12..=1.0 + 1e-12).contains(&exact.value) {
            problems.push("exact-range");
        }
        if bound.value > exact.value + ORDER_SLACK {
            problems.push("order");
        }
        if let Some(o) = &obs {
            if scm.is_confounder_free() && !o.degenerate && (o.value - bound.value).abs() > IDENTITY_TOL {
                problems.push("identity");
            }
        }
        violations += problems.len();
        let status = if !problems.is_empty() {
            format!("VIOLATION {}", problems.join(","))
        } else if obs.as_ref().is_some_and(|o| o.degenerate) {
            "ok (degenerate support)".into()
        } else {
            "ok".into()
        };
        writeln!(
            out,
            "{id:>4}  {name:<18} {z:>2} {y:>2} {:>10.6} {:>10.6} {:>10} {:>10.3e}  {status}",
            exact.value,
            bound.value,
            fmt_opt(obs.as_ref()),
            exact.value - bound.value,
        )?;
    }
    writeln!(out, "{} models, {violations} violations", cases.len())?;
    Ok(violations == 0)
}
