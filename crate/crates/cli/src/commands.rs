use std::path::{Path, PathBuf};
use std::sync::Arc;

use hvc_core::config::{Precision, RunConfig};
use hvc_core::data::{
    augment_pipeline_traced, compute_margins, load_idx, load_mnist_dir, write_pgm, AugmentConfig,
    ImageSet, StreamKey, MNIST_FILES,
};
use hvc_core::ensemble::{
    enumerate_subsets, majority_vote, parse_threshold, sample_subsets, troublesome_digits,
    PredictionMatrix, SubsetFamily, TieBreak,
};
use hvc_core::model::{Checkpoint, Model};
use hvc_core::train::{evaluate_checkpoint, train as train_loop, OutputDir, TrainState, METRICS_HEADER};
use hvc_core::{Element, Error, Result};

use crate::ConfigArgs;

fn read_config(args: &ConfigArgs, base: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match (&args.config, base) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::from_text(&text)?
        }
        (None, Some(text)) => RunConfig::from_text(text)?,
        (None, None) => RunConfig::default(),
    };
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn test_set(dir: &Path, limit: Option<usize>) -> Result<ImageSet> {
    let set = load_idx(dir.join(MNIST_FILES[2]), dir.join(MNIST_FILES[3]))?;
    Ok(match limit {
        Some(n) => set.truncated(n),
        None => set,
    })
}

pub fn train(
    args: &ConfigArgs,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<u64>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let ck = resume.as_ref().map(Checkpoint::load).transpose()?;
    let mut cfg = read_config(args, ck.as_ref().map(|c| c.run_config.as_str()))?;
    if let Some(d) = data {
        cfg.data_dir = d;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(ck) = &ck {
        if ck.config != cfg.train.model {
            return Err(Error::Config(
                "model settings differ from the checkpoint being resumed".into(),
            ));
        }
    }
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, ck.as_ref()),
        Precision::F64 => train_as::<f64>(&cfg, ck.as_ref()),
    }
}

fn train_as<T: Element>(cfg: &RunConfig, ck: Option<&Checkpoint>) -> Result<()> {
    let t = &cfg.train;
    let (mut train_set, mut test) = load_mnist_dir(&cfg.data_dir)?;
    if let Some(n) = t.train_limit {
        train_set = train_set.truncated(n);
    }
    if let Some(n) = t.test_limit {
        test = test.truncated(n);
    }
    let mut state = match ck {
        Some(ck) => TrainState::<T>::from_checkpoint(ck, t)?,
        None => TrainState::<T>::new(t)?,
    };
    let out = OutputDir::new(&cfg.out_dir)?;
    let record = cfg.to_kv();
    let cfg_path = out.dir.join("config.txt");
    std::fs::write(&cfg_path, &record).map_err(|e| Error::io(&cfg_path, e))?;
    eprintln!(
        "training {} images, testing {}, epochs {}..{} -> {}",
        train_set.len(),
        test.len(),
        state.epochs_completed + 1,
        t.epochs,
        out.dir.display()
    );
    println!("{METRICS_HEADER}");
    let history = train_loop(t, &mut state, Arc::new(train_set), &test, Some(&out), &record, |m| {
        println!("{}", m.log_line())
    })?;
    if let Some(last) = history.last() {
        eprintln!(
            "final EMA accuracy {:.4}, best {:.4}",
            last.test_acc_ema, state.best_accuracy
        );
    }
    Ok(())
}

pub fn eval(ckpt: &Path, data: &Path, use_ema: bool, limit: Option<usize>, batch: usize) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let set = test_set(data, limit)?;
    let e = evaluate_checkpoint::<f32>(&ck, &set, use_ema, batch)?;
    let correct = e
        .predictions
        .iter()
        .zip(set.labels())
        .filter(|(p, l)| p == l)
        .count();
    println!("accuracy {:.4} ({correct}/{})", e.accuracy, set.len());
    Ok(())
}

pub fn init(args: &ConfigArgs, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = read_config(args, None)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let model = Model::<f32>::build(cfg.train.model.clone(), cfg.train.seed)?;
    let mut ck = Checkpoint::from_model(&model, cfg.train.seed);
    ck.run_config = cfg.to_kv();
    ck.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn dump_preds(
    ckpts: &[PathBuf],
    data: &Path,
    out: &Path,
    use_ema: bool,
    limit: Option<usize>,
    batch: usize,
) -> Result<()> {
    let set = test_set(data, limit)?;
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for path in ckpts {
        let ck = Checkpoint::load(path)?;
        let e = evaluate_checkpoint::<f32>(&ck, &set, use_ema, batch)?;
        println!("{}: accuracy {:.4}", path.display(), e.accuracy);
        rows.push(e.predictions);
        names.push(path.display().to_string());
    }
    let classes = Checkpoint::load(&ckpts[0])?.config.classes;
    PredictionMatrix::new(classes, set.labels().to_vec(), rows, names)?.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn params(
    args: &ConfigArgs,
    head: Option<String>,
    branches: Option<usize>,
    merge: Option<String>,
) -> Result<()> {
    let mut cfg = read_config(args, None)?;
    if let Some(h) = head {
        cfg.set("head", &h)?;
    }
    if let Some(b) = branches {
        cfg.set("branches", &b.to_string())?;
    }
    if let Some(m) = merge {
        cfg.set("merge", &m)?;
    }
    cfg.train.model.validate()?;
    let manifest = hvc_core::model::ParamManifest::for_config(&cfg.train.model);
    println!("{manifest}");
    Ok(())
}

pub fn augment_preview(
    data: &Path,
    out: &Path,
    seed: u64,
    epoch: u64,
    count: usize,
    strategy: &str,
) -> Result<()> {
    let set = load_idx(data.join(MNIST_FILES[0]), data.join(MNIST_FILES[1]))?;
    let cfg = AugmentConfig {
        strategy: strategy.parse()?,
        ..Default::default()
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for i in 0..count.min(set.len()) {
        let image = set.image(i);
        let (aug, ops) = augment_pipeline_traced(image, &cfg, StreamKey::new(seed, epoch, i as u64));
        write_pgm(out.join(format!("{i:05}_orig.pgm")), image)?;
        write_pgm(out.join(format!("{i:05}_aug.pgm")), &aug)?;
        let m = compute_margins(image);
        println!(
            "{i:05} label {} margins l{} r{} t{} b{} draws {:?}",
            set.label(i),
            m.left,
            m.right,
            m.top,
            m.bottom,
            ops
        );
    }
    Ok(())
}

pub fn ensemble_count(
    matrix: &Path,
    sizes: &str,
    thresholds: &[String],
    tie: &str,
    sample: Option<u64>,
    seed: u64,
) -> Result<()> {
    let m = PredictionMatrix::load(matrix)?;
    let family: SubsetFamily = sizes.parse()?;
    let tie: TieBreak = tie.parse()?;
    let thresholds: Vec<u32> = thresholds
        .iter()
        .map(|t| parse_threshold(t))
        .collect::<Result<_>>()?;
    let report = match sample {
        Some(draws) => sample_subsets(&m, family, tie, &thresholds, draws, seed)?,
        None => enumerate_subsets(&m, family, tie, &thresholds)?,
    };
    print!("{report}");
    Ok(())
}

pub fn ensemble_vote(matrix: &Path, models: &[usize], tie: &str) -> Result<()> {
    let m = PredictionMatrix::load(matrix)?;
    let tie: TieBreak = tie.parse()?;
    let models: Vec<usize> = if models.is_empty() {
        (0..m.models()).collect()
    } else {
        models.to_vec()
    };
    if let Some(&j) = models.iter().find(|&&j| j >= m.models()) {
        return Err(Error::Config(format!(
            "model index {j} out of range for {} models",
            m.models()
        )));
    }
    let votes = majority_vote(&m, &models, tie);
    let correct = votes.iter().zip(m.labels()).filter(|(v, l)| v == l).count();
    println!(
        "models {:?} tie-break {tie}: accuracy {:.4} ({correct}/{})",
        models,
        correct as f64 / m.samples().max(1) as f64,
        m.samples()
    );
    Ok(())
}

pub fn ensemble_troublesome(matrix: &Path) -> Result<()> {
    let m = PredictionMatrix::load(matrix)?;
    println!("{}", troublesome_digits(&m));
    Ok(())
}
