//! One function per subcommand. Every metric file is a pure function of the
//! config and seed; wall-clock time goes to stdout and `timing_<cmd>.txt`.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drifa_core::data::{import, DatasetSplit};
use drifa_core::training::{evaluate, task_metrics, EpochRecord};
use drifa_core::{generate, mc_predict, saliency, split, train, uncertainty_report, ClassificationMetrics, Dataset, DrifaNet};
use drifa_tensor::checkpoint;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{confusion_csv, mean_std, metrics_csv, metrics_table, pgm};

pub const CHECKPOINT_FILE: &str = "checkpoint.drif";
const EVAL_CHUNK: usize = 64;

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Common {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Common {
    /// Loads the config and applies `--seed` to the training seed, which
    /// drives initialization, the split, shuffling and dropout.
    pub fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        fs::create_dir_all(&self.out)?;
        Ok(config)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        Ok(())
    }

    fn timing(&self, command: &str, start: Instant) -> Result<()> {
        let secs = start.elapsed().as_secs_f64();
        println!("{command} finished in {secs:.2} s");
        self.write(&format!("timing_{command}.txt"), format!("wall_clock_seconds = {secs:.3}\n"))
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    match (&config.data.synthetic, &config.data.path) {
        (Some(spec), None) => Ok(generate(spec)?),
        (None, Some(path)) => {
            let ds = import(path).map_err(|e| CliError::Data(e.to_string()))?;
            config
                .check_data_shape(ds.modalities, &ds.classes_per_task, ds.image_size)
                .map_err(|e| CliError::Data(e.to_string()))?;
            Ok(ds)
        }
        _ => Err(CliError::Config("[data] needs exactly one of `synthetic` or `path`".into())),
    }
}

pub fn load_split(config: &RunConfig, seed: u64) -> Result<DatasetSplit> {
    let ds = load_dataset(config)?;
    let sp = split(&ds, config.data.fractions, seed)?;
    if sp.train.is_empty() || sp.test.is_empty() {
        return Err(CliError::Data(format!("split left {} train and {} test samples", sp.train.len(), sp.test.len())));
    }
    Ok(sp)
}

/// Builds the configured network and overwrites its parameters from `path`.
pub fn load_network(config: &RunConfig, path: &Path) -> Result<DrifaNet> {
    let records = checkpoint::load(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut net = DrifaNet::new(config.model.clone(), config.train.seed)?;
    checkpoint::restore(&mut net.store, &records).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    Ok(net)
}

fn task_label(t: usize) -> String {
    format!("task{t}")
}

fn epoch_line(r: &EpochRecord) -> String {
    let acc: Vec<String> = r.val_accuracy.iter().map(f64::to_string).collect();
    format!("{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_loss, acc.join(","))
}

pub fn cmd_train(common: &Common) -> Result<()> {
    let start = Instant::now();
    let config = common.load()?;
    let sp = load_split(&config, config.train.seed)?;
    let mut net = DrifaNet::new(config.model.clone(), config.train.seed)?;
    println!(
        "training on {} samples ({} val, {} test), {} parameters, config {}",
        sp.train.len(),
        sp.val.len(),
        sp.test.len(),
        net.store.iter().map(|(_, p)| p.value.numel()).sum::<usize>(),
        config.hash()
    );

    let acc_cols: Vec<String> = (0..config.model.tasks.len()).map(|t| format!("val_accuracy_{}", task_label(t))).collect();
    let mut log = format!("epoch,lr,train_loss,val_loss,{}\n", acc_cols.join(","));
    let outcome = train(&mut net, &sp.train, &sp.val, &config.train, |r| {
        println!(
            "epoch {:>4}  lr {:.2e}  train {:.5}  val {:.5}  acc {:?}",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_accuracy
        );
        writeln!(log, "{}", epoch_line(r)).unwrap();
    })?;

    checkpoint::save(&net.store, common.out.join(CHECKPOINT_FILE))?;
    common.write("train_log.csv", log)?;
    common.write("config.toml", config.to_toml())?;
    common.write(
        "train_summary.txt",
        format!(
            "config_hash = {}\nepochs = {}\nbest_epoch = {}\nbest_val_loss = {}\n",
            config.hash(),
            outcome.history.len(),
            outcome.best_epoch,
            outcome.best_val_loss
        ),
    )?;
    println!("best epoch {} (val loss {:.5})", outcome.best_epoch, outcome.best_val_loss);
    common.timing("train", start)
}

fn checkpoint_path(common: &Common, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| common.out.join(CHECKPOINT_FILE), Path::to_path_buf)
}

pub fn cmd_eval(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let config = common.load()?;
    let net = load_network(&config, &checkpoint_path(common, checkpoint))?;
    let sp = load_split(&config, config.train.seed)?;
    let ev = evaluate(&net, &sp.test, EVAL_CHUNK)?;
    let metrics = task_metrics(&net, &sp.test, &ev.predictions)?;
    let rows: Vec<(String, &ClassificationMetrics)> = metrics.iter().enumerate().map(|(t, m)| (task_label(t), m)).collect();

    let table = metrics_table(&rows);
    print!("{table}");
    let header = format!("config_hash = {}\ntest_samples = {}\nloss = {}\n\n", config.hash(), sp.test.len(), ev.loss);
    common.write("metrics.txt", header + &table)?;
    common.write("metrics.csv", metrics_csv(&rows))?;
    common.write("confusion.csv", confusion_csv(&metrics.iter().collect::<Vec<_>>()))?;
    common.timing("eval", start)
}

pub fn cmd_uq(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let config = common.load()?;
    let net = load_network(&config, &checkpoint_path(common, checkpoint))?;
    let sp = load_split(&config, config.train.seed)?;
    let inputs = sp.test.full_batch().inputs;
    let deterministic = task_metrics(&net, &sp.test, &net.predict(&inputs)?)?;
    let dists = mc_predict(&net, &inputs, &config.uq)?;

    let mut summary = format!("config_hash = {}\npasses = {}\n", config.hash(), config.uq.passes());
    let mut deltas = String::from("task,metric,deterministic,uq,delta\n");
    let mut samples = String::from("task,sample,truth,predicted,entropy,max_prob\n");
    for (t, (dist, det)) in dists.iter().zip(&deterministic).enumerate() {
        let labels = sp.test.labels(t);
        let report = uncertainty_report(dist, &labels)?;
        let uq = &report.metrics;
        for (name, d, u) in [
            ("accuracy", det.accuracy, uq.accuracy),
            ("precision", det.precision, uq.precision),
            ("recall", det.recall, uq.recall),
            ("f1", det.f1, uq.f1),
        ] {
            writeln!(deltas, "{t},{name},{d},{u},{}", u - d).unwrap();
        }
        for (r, s) in report.records.iter().zip(&sp.test.samples) {
            writeln!(samples, "{t},{},{},{},{},{}", s.id, r.truth, r.predicted, r.entropy, r.max_prob).unwrap();
        }
        let rows = [(format!("{} deterministic", task_label(t)), det), (format!("{} uq", task_label(t)), uq)];
        let table = metrics_table(&rows);
        print!("{table}");
        writeln!(summary, "\n## {}\n{table}\n{}", task_label(t), report.render()).unwrap();
    }
    common.write("uq_report.txt", summary)?;
    common.write("uq_deltas.csv", deltas)?;
    common.write("uq_samples.csv", samples)?;
    common.timing("uq", start)
}

pub fn cmd_saliency(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let config = common.load()?;
    let net = load_network(&config, &checkpoint_path(common, checkpoint))?;
    let sp = load_split(&config, config.train.seed)?;
    let s = &config.saliency;
    let chosen: Vec<usize> = (0..sp.test.len().min(s.max_samples)).collect();
    let maps = saliency(&net, &sp.test.batch(&chosen).inputs, s.task, s.class)?;

    let dir = common.out.join("saliency");
    fs::create_dir_all(&dir)?;
    let [h, w, _] = sp.test.image_size;
    let mut index = String::from("file,sample,modality,task,class,truth\n");
    for (m, map) in maps.iter().enumerate() {
        for (b, &i) in chosen.iter().enumerate() {
            let sample = &sp.test.samples[i];
            let file = format!("s{}_m{m}.pgm", sample.id);
            fs::write(dir.join(&file), pgm(w, h, &map.data()[b * h * w..(b + 1) * h * w]))?;
            writeln!(index, "{file},{},{m},{},{},{}", sample.id, s.task, s.class, sample.labels[s.task]).unwrap();
        }
    }
    fs::write(dir.join("index.txt"), index)?;
    println!("wrote {} maps to {}", chosen.len() * maps.len(), dir.display());
    common.timing("saliency", start)
}

/// Test metrics of one ablation cell.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub row: usize,
    pub seed: u64,
    pub metrics: Vec<ClassificationMetrics>,
}

/// Trains and evaluates every (row, seed) pair on the same data. Runs are
/// independent and collected in grid order.
pub fn run_ablation(config: &RunConfig, seeds: &[u64]) -> Result<(Vec<String>, Vec<AblationRun>)> {
    let rows = config.ablation_rows();
    for (label, model) in &rows {
        model.validate().map_err(|e| CliError::Config(format!("ablation row `{label}`: {e}")))?;
    }
    let ds = load_dataset(config)?;
    let jobs: Vec<(usize, u64)> = (0..rows.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let runs = jobs
        .into_par_iter()
        .map(|(row, seed)| -> Result<AblationRun> {
            let sp = split(&ds, config.data.fractions, seed)?;
            let mut net = DrifaNet::new(rows[row].1.clone(), seed)?;
            let train_cfg = drifa_core::TrainConfig { seed, ..config.train.clone() };
            train(&mut net, &sp.train, &sp.val, &train_cfg, |_| {})?;
            let ev = evaluate(&net, &sp.test, EVAL_CHUNK)?;
            let metrics = task_metrics(&net, &sp.test, &ev.predictions)?;
            eprintln!("  {} seed {seed}: accuracy {:.4}", rows[row].0, metrics[0].accuracy);
            Ok(AblationRun { row, seed, metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows.into_iter().map(|(l, _)| l).collect(), runs))
}

/// Mean ± std per row and task, in row order.
pub fn summarize_ablation(labels: &[String], runs: &[AblationRun]) -> (String, String) {
    let tasks = runs.first().map_or(0, |r| r.metrics.len());
    let mut table = format!(
        "{:<24} {:>5}  {:>17}  {:>17}  {:>17}  {:>17}\n",
        "row", "task", "accuracy", "precision", "recall", "f1"
    );
    let mut csv = String::from(
        "row,task,seeds,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n",
    );
    for (r, label) in labels.iter().enumerate() {
        for t in 0..tasks {
            let cell: Vec<&ClassificationMetrics> = runs.iter().filter(|x| x.row == r).map(|x| &x.metrics[t]).collect();
            let stats: Vec<(f64, f64)> = [
                cell.iter().map(|m| m.accuracy).collect::<Vec<_>>(),
                cell.iter().map(|m| m.precision).collect(),
                cell.iter().map(|m| m.recall).collect(),
                cell.iter().map(|m| m.f1).collect(),
            ]
            .iter()
            .map(|v| mean_std(v))
            .collect();
            write!(table, "{label:<24} {t:>5}").unwrap();
            write!(csv, "{label},{t},{}", cell.len()).unwrap();
            for (mean, std) in &stats {
                write!(table, "  {mean:>8.4} ± {std:<6.4}").unwrap();
                write!(csv, ",{mean},{std}").unwrap();
            }
            table.push('\n');
            csv.push('\n');
        }
    }
    (table, csv)
}

/// `--seed N` replaces the configured seed list by as many consecutive seeds
/// starting at N.
pub fn cmd_ablate(common: &Common) -> Result<()> {
    let start = Instant::now();
    let config = RunConfig::load(&common.config)?;
    fs::create_dir_all(&common.out)?;
    let seeds: Vec<u64> = match common.seed {
        Some(base) => (0..config.ablate.seeds.len() as u64).map(|k| base + k).collect(),
        None => config.ablate.seeds.clone(),
    };
    let (labels, runs) = run_ablation(&config, &seeds)?;
    let (table, csv) = summarize_ablation(&labels, &runs);
    print!("{table}");

    let mut per_run = String::from("row,seed,task,accuracy,precision,recall,f1\n");
    for run in &runs {
        for (t, m) in run.metrics.iter().enumerate() {
            writeln!(per_run, "{},{},{t},{},{},{},{}", labels[run.row], run.seed, m.accuracy, m.precision, m.recall, m.f1)
                .unwrap();
        }
    }
    let header = format!("config_hash = {}\ngrid = {:?}\nseeds = {seeds:?}\n\n", config.hash(), config.ablate.grid);
    common.write("ablation.txt", header + &table)?;
    common.write("ablation.csv", csv)?;
    common.write("ablation_runs.csv", per_run)?;
    common.timing("ablate", start)
}
