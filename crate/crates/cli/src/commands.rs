use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use c2c::bagdata::{generate_bags_from_pools, load_manifest, load_mnist_pool, save_manifest, Bag, BagDataset, Split};
use c2c::diffcore::GradCheckReport;
use c2c::model::{load_checkpoint, save_checkpoint, Checkpoint};
use c2c::rng::stream;
use c2c::trainer::{
    ablate as run_ablation, ablation_table, attention_uniformity_stats, evaluate, metrics_table, toy_gradient_check,
    train_with, write_ablation, write_attention_csv, write_metrics, TrainConfig,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::manifest::{load_run_manifest, RunRecorder, RUN_MANIFEST};
use crate::options::{AblateOptions, EvalOptions, GenDataOptions, GradcheckOptions, Precision, TrainOptions};
use crate::{NumericFailure, UsageError};

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| UsageError(format!("missing required flag --{flag} (or `{flag}` in --config)")).into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn gen_data(opts: GenDataOptions) -> Result<()> {
    let images = required(&opts.mnist_images, "mnist-images")?;
    let labels = required(&opts.mnist_labels, "mnist-labels")?;
    let out = required(&opts.out, "out")?;
    let test_pair = match (&opts.mnist_test_images, &opts.mnist_test_labels) {
        (Some(i), Some(l)) => Some((i, l)),
        (None, None) => None,
        _ => return Err(UsageError("--mnist-test-images and --mnist-test-labels go together".into()).into()),
    };
    let config = opts.dataset_config();
    config.validate()?;

    let mut rec = RunRecorder::start("gen-data", &opts);
    rec.manifest.seed = Some(config.seed);
    rec.manifest.resolved = serde_json::to_value(&config)?;
    rec.input("mnist-images", images);
    rec.input("mnist-labels", labels);

    let train_pool = load_mnist_pool(images, labels)?;
    let mut source = format!("mnist-idx train={}", file_name(images));
    let test_pool = match test_pair {
        Some((i, l)) => {
            rec.input("mnist-test-images", i);
            rec.input("mnist-test-labels", l);
            source.push_str(&format!(" test={}", file_name(i)));
            Some(load_mnist_pool(i, l)?)
        }
        None => None,
    };
    let mut rng = stream(config.seed, "bags", &[]);
    let (train, test) = generate_bags_from_pools(
        &train_pool,
        test_pool.as_deref().unwrap_or(&train_pool),
        &config,
        &mut rng,
    )?;
    let dataset = BagDataset {
        config,
        source,
        train,
        test,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_manifest(&dataset, out)?;
    rec.output(out.clone());

    let count = |bags: &[Bag]| {
        let pos = bags.iter().filter(|b| b.is_positive()).count();
        let inst: usize = bags.iter().map(Bag::len).sum();
        format!("{} bags ({pos} positive, {inst} instances)", bags.len())
    };
    println!("train: {}", count(&dataset.train));
    println!("test:  {}", count(&dataset.test));
    println!("wrote {}", out.display());
    let mut manifest_path = out.clone().into_os_string();
    manifest_path.push(".run.json");
    rec.finish(Path::new(&manifest_path))
}

/// Train options resolved against a dataset: the encoder input size follows
/// the images.
fn resolve_train_config(opts: &TrainOptions, dataset: &BagDataset) -> Result<TrainConfig> {
    let mut cfg = opts.train_config();
    let first = dataset
        .train
        .iter()
        .chain(&dataset.test)
        .flat_map(|b| b.instances.first())
        .next()
        .ok_or_else(|| UsageError("dataset has no instances".into()))?;
    cfg.model.input_rows = first.image.rows;
    cfg.model.input_cols = first.image.cols;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(opts: TrainOptions) -> Result<()> {
    let data = required(&opts.data, "data")?;
    let out = required(&opts.out, "out")?;
    let dataset = load_manifest(data)?;
    let cfg = resolve_train_config(&opts, &dataset)?;

    let mut rec = RunRecorder::start("train", &opts);
    rec.manifest.seed = Some(cfg.seed);
    rec.manifest.resolved = serde_json::to_value(&cfg)?;
    rec.input("data", data);
    create_dir(out)?;

    let log_path = out.join("epochs.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    let outcome = train_with(&dataset.train, &cfg, |r| {
        let line = serde_json::to_string(r).expect("epoch records serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
        let val = r
            .validation
            .as_ref()
            .map_or(String::new(), |v| format!(" val_acc {:.4}", v.accuracy));
        println!(
            "epoch {:>3}  loss {:.5} (wsi {:.5} patch {:.5} kld {:.5})  train_acc {:.4}{val}  {:.1}s",
            r.epoch, r.loss.total, r.loss.l_wsi, r.loss.l_patch, r.loss.l_kld, r.train.accuracy, r.seconds
        );
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    rec.output(log_path);

    let ckpt_path = out.join("checkpoint.c2c");
    save_checkpoint(
        &Checkpoint {
            model: outcome.model,
            train_config: Some(serde_json::to_value(&cfg)?),
        },
        &ckpt_path,
    )?;
    rec.output(ckpt_path.clone());
    println!("wrote {}", ckpt_path.display());
    rec.finish(&out.join(RUN_MANIFEST))
}

pub fn eval(opts: EvalOptions) -> Result<()> {
    let data = required(&opts.data, "data")?;
    let ckpt_path = required(&opts.checkpoint, "checkpoint")?;
    let out = required(&opts.out, "out")?;
    let split = opts.split.unwrap_or(Split::Test);

    let dataset = load_manifest(data)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let cfg: TrainConfig = match &ckpt.train_config {
        Some(v) => serde_json::from_value(v.clone()).context("checkpoint train_config")?,
        None => TrainConfig::default(),
    };

    let mut rec = RunRecorder::start("eval", &opts);
    rec.manifest.seed = Some(cfg.seed);
    rec.manifest.resolved = serde_json::json!({ "split": split, "train_config": cfg });
    rec.input("data", data);
    rec.input("checkpoint", ckpt_path);
    create_dir(out)?;

    let bags: Vec<&Bag> = dataset.split(split).iter().collect();
    let ev = evaluate(&bags, &ckpt.model, cfg.pooling, Some((cfg.k, cfg.seed)))?;
    write_metrics(out, &ev.metrics)?;
    rec.output(out.join("metrics.json"));
    rec.output(out.join("metrics.txt"));
    let csv_path = out.join("attention.csv");
    write_attention_csv(&csv_path, &ev.attention)?;
    rec.output(csv_path);
    let uni = attention_uniformity_stats(&ev.attention, &dataset.config.positive_digits);
    write_json(&out.join("uniformity.json"), &uni)?;
    rec.output(out.join("uniformity.json"));
    write_json(&out.join("predictions.json"), &ev.predictions)?;
    rec.output(out.join("predictions.json"));

    print!("{}", metrics_table(&ev.metrics));
    if let Some(m) = uni.median {
        println!("attention CV median over positive bags: {m:.4}");
    }
    rec.finish(&out.join(RUN_MANIFEST))
}

pub fn ablate(opts: AblateOptions) -> Result<()> {
    let axis = *required(&opts.axis, "axis")?;
    let values = required(&opts.values, "values")?;
    let data = required(&opts.train.data, "data")?;
    let out = required(&opts.train.out, "out")?;
    let dataset = load_manifest(data)?;
    let base = resolve_train_config(&opts.train, &dataset)?;
    let configs = values
        .iter()
        .map(|v| axis.apply(&base, v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| UsageError(e.to_string()))?;

    let mut rec = RunRecorder::start("ablate", &opts);
    rec.manifest.seed = Some(base.seed);
    rec.manifest.resolved = serde_json::json!({ "axis": axis, "values": values, "configs": configs });
    rec.input("data", data);
    create_dir(out)?;

    let test: Vec<&Bag> = dataset.test.iter().collect();
    let rows = run_ablation(&dataset.train, &test, &base, axis, values)?;
    write_ablation(out, &rows)?;
    rec.output(out.join("ablation.json"));
    rec.output(out.join("ablation.txt"));
    print!("{}", ablation_table(&rows));
    rec.finish(&out.join(RUN_MANIFEST))
}

fn print_gradcheck(r: &GradCheckReport) {
    println!("{:<28} {:>7} {:>12}", "parameter", "coords", "max_rel_err");
    for t in &r.tensors {
        println!("{:<28} {:>7} {:>12.3e}", t.name, t.coords_checked, t.max_rel_error);
    }
    println!("groups checked: {}", r.groups().join(", "));
}

pub fn gradcheck(opts: GradcheckOptions) -> Result<()> {
    let check = opts.check_options();
    let mut rec = RunRecorder::start("gradcheck", &opts);
    rec.manifest.seed = Some(check.seed);
    let report = match opts.precision() {
        Precision::F64 => toy_gradient_check::<f64>(check.seed, &check)?,
        Precision::F32 => toy_gradient_check::<f32>(check.seed, &check)?,
    };
    print_gradcheck(&report);
    if let Some(out) = &opts.out {
        rec.manifest.resolved = serde_json::json!({
            "precision": report.precision,
            "epsilon": check.epsilon,
            "tolerance": check.tolerance,
            "coords_per_tensor": check.coords_per_tensor,
            "denom_floor": check.denom_floor,
        });
        create_dir(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
        rec.output(out.join("gradcheck.json"));
        rec.finish(&out.join(RUN_MANIFEST))?;
    }
    let worst = format!(
        "worst parameter {} in group {}",
        report.worst_param.as_deref().unwrap_or("-"),
        report.worst_group.as_deref().unwrap_or("-")
    );
    if report.passed {
        println!(
            "gradient check passed ({}): max relative error {:.3e} <= tolerance {:.1e}; {worst}",
            report.precision, report.max_rel_error, report.tolerance
        );
        Ok(())
    } else {
        Err(NumericFailure(format!(
            "gradient check FAILED ({}): max relative error {:.3e} exceeds tolerance {:.1e}; {worst}",
            report.precision, report.max_rel_error, report.tolerance
        ))
        .into())
    }
}

fn recorded<T: DeserializeOwned>(options: serde_json::Value) -> Result<T> {
    serde_json::from_value(options).context("run manifest options do not match the command")
}

pub fn rerun(path: &Path, out: Option<PathBuf>) -> Result<()> {
    let m = load_run_manifest(path)?;
    match m.command.as_str() {
        "gen-data" => {
            let mut o: GenDataOptions = recorded(m.options)?;
            o.out = out.or(o.out);
            gen_data(o)
        }
        "train" => {
            let mut o: TrainOptions = recorded(m.options)?;
            o.out = out.or(o.out);
            train(o)
        }
        "eval" => {
            let mut o: EvalOptions = recorded(m.options)?;
            o.out = out.or(o.out);
            eval(o)
        }
        "ablate" => {
            let mut o: AblateOptions = recorded(m.options)?;
            o.train.out = out.or(o.train.out);
            ablate(o)
        }
        "gradcheck" => {
            let mut o: GradcheckOptions = recorded(m.options)?;
            o.out = out.or(o.out);
            gradcheck(o)
        }
        other => Err(UsageError(format!("run manifest names unknown command {other:?}")).into()),
    }
}
