use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use domm::bundle::{load_model_bundle, save_model_bundle};
use domm::io::{read_aol, read_rol, to_canonical_json_pretty, write_aol, write_file, write_rol};
use domm::labels::{preprocess_annotations, sweep_csv, sweep_thresholds, threshold_grid, ThresholdConfig};
use domm::manifest::DatasetManifest;
use domm::pipeline::{
    cross_validate, decode_utterance, load_annotations, load_corpus, score_predictions, train_bundle,
    Components, EvalReport, ExperimentConfig, FoldReport, TOOL_VERSION,
};
use domm::synth::{generate_corpus, write_corpus, SynthConfig};
use domm::{AolSequence, Error, Result, RolSequence};

#[derive(Parser, Debug)]
#[command(name = "domm", version, about = "Ordinal label conversion, training, decoding and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Experiment or synthesis config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write consensus AOL and ROL files for each utterance.
    Convert {
        #[command(flatten)]
        common: Common,
        /// Restrict to these split tags (repeatable).
        #[arg(long)]
        split: Vec<String>,
    },
    /// Label balance and agreement over a grid of symmetric thresholds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.08)]
        start: f64,
        #[arg(long, default_value_t = 0.2)]
        end: f64,
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        #[arg(long)]
        split: Vec<String>,
    },
    /// Fit a model bundle on the training splits.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Decode utterances with a trained bundle.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// Splits to decode; defaults to the config's test splits.
        #[arg(long)]
        split: Vec<String>,
    },
    /// Score predicted label files against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Prediction directory, optionally named as NAME=DIR (repeatable).
        #[arg(long, required = true)]
        pred: Vec<String>,
        /// Directory with ground-truth `<id>.aol.csv` and `<id>.rol.csv`.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Preset::Moderate)]
        preset: Preset,
    },
    /// Cross validation over the manifest's fold tags.
    Xval {
        #[command(flatten)]
        common: Common,
        /// Run folds one after another instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Moderate,
    Noiseless,
}

#[derive(Serialize)]
struct RunRecord {
    command: &'static str,
    tool_version: &'static str,
    config_hash: Option<String>,
    seed: Option<u64>,
    manifest: Option<String>,
    outputs: Vec<String>,
}

struct Run {
    out: PathBuf,
    record: RunRecord,
}

impl Run {
    fn new(command: &'static str, out: &Path) -> Self {
        Self {
            out: out.to_path_buf(),
            record: RunRecord {
                command,
                tool_version: TOOL_VERSION,
                config_hash: None,
                seed: None,
                manifest: None,
                outputs: Vec::new(),
            },
        }
    }

    fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let rel = rel.as_ref();
        write_file(&self.out.join(rel), bytes)?;
        self.record.outputs.push(rel.display().to_string());
        Ok(())
    }

    fn track(&mut self, rel: impl AsRef<Path>) {
        self.record.outputs.push(rel.as_ref().display().to_string());
    }

    fn finish(self) -> Result<()> {
        write_file(&self.out.join("run.json"), &to_canonical_json_pretty(&self.record)?)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&body).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Config from `--config` with command-line overrides applied.
fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &common.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_path(common: &Common, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    common
        .manifest
        .clone()
        .or_else(|| cfg.and_then(|c| c.manifest.clone()))
        .ok_or_else(|| Error::Config("no manifest given (use --manifest or the config's manifest field)".into()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!("manifest {} does not exist", path.display())));
    }
    DatasetManifest::load(path)
}

fn split_filter(splits: &[String]) -> impl Fn(&domm::manifest::ManifestEntry) -> bool + '_ {
    move |e| splits.is_empty() || splits.contains(&e.split)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { common, split } => convert(&common, &split),
        Command::Sweep { common, start, end, step, split } => sweep(&common, start, end, step, &split),
        Command::Train { common, variant } => train(&common, variant.as_deref()),
        Command::Decode { common, bundle, split } => decode(&common, &bundle, &split),
        Command::Eval { common, pred, truth } => eval(&common, &pred, &truth),
        Command::Synth { common, preset } => synth(&common, preset),
        Command::Xval { common, serial } => xval(&common, serial),
    }
}

fn convert(common: &Common, split: &[String]) -> Result<()> {
    let mpath = manifest_path(common, None)?;
    let manifest = load_manifest(&mpath)?;
    let corpus = load_corpus(&manifest, split_filter(split))?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput("no utterances selected".into()));
    }
    let mut run = Run::new("convert", &common.out);
    run.record.manifest = Some(mpath.display().to_string());
    for u in &corpus {
        let aol = format!("labels/{}.aol.csv", u.id);
        let rol = format!("labels/{}.rol.csv", u.id);
        write_aol(&common.out.join(&aol), &u.aol)?;
        write_rol(&common.out.join(&rol), &u.rol)?;
        run.track(aol);
        run.track(rol);
    }
    run.finish()
}

fn sweep(common: &Common, start: f64, end: f64, step: f64, split: &[String]) -> Result<()> {
    let mpath = manifest_path(common, None)?;
    let manifest = load_manifest(&mpath)?;
    let mut smoothed = Vec::new();
    for entry in manifest.utterances.iter().filter(|e| split_filter(split)(e)) {
        let ann = load_annotations(&manifest, entry)?;
        smoothed.push(preprocess_annotations(&ann, &manifest.preprocessing)?);
    }
    if smoothed.is_empty() {
        return Err(Error::InvalidInput("no utterances selected".into()));
    }
    let grid = threshold_grid(start, end, step)?
        .into_iter()
        .map(|t2| ThresholdConfig::new(-t2, t2, manifest.thresholds.boundary_mode))
        .collect::<Result<Vec<_>>>()?;
    let rows = sweep_thresholds(&smoothed, &grid)?;
    let mut run = Run::new("sweep", &common.out);
    run.record.manifest = Some(mpath.display().to_string());
    run.write("sweep.csv", sweep_csv(&rows).as_bytes())?;
    run.finish()
}

fn train(common: &Common, variant: Option<&str>) -> Result<()> {
    let mut cfg = experiment_config(common)?;
    if let Some(v) = variant {
        cfg.variant = v.parse()?;
    }
    let mpath = manifest_path(common, Some(&cfg))?;
    let manifest = load_manifest(&mpath)?;
    let train = load_corpus(&manifest, |e| cfg.train_splits.contains(&e.split))?;
    if train.is_empty() {
        return Err(Error::InvalidInput(format!("training splits {:?} are empty", cfg.train_splits)));
    }
    let hash = cfg.hash()?;
    let bundle = train_bundle(&train, &cfg, cfg.seed, &hash, Components::for_variant(cfg.variant))?;
    save_model_bundle(&bundle, &common.out.join("bundle.json"))?;
    let mut run = Run::new("train", &common.out);
    run.track("bundle.json");
    run.record.config_hash = Some(hash);
    run.record.seed = Some(cfg.seed);
    run.record.manifest = Some(mpath.display().to_string());
    run.finish()
}

fn decode(common: &Common, bundle_path: &Path, split: &[String]) -> Result<()> {
    let cfg = experiment_config(common)?;
    let mpath = manifest_path(common, Some(&cfg))?;
    let manifest = load_manifest(&mpath)?;
    if !bundle_path.exists() {
        return Err(Error::InvalidInput(format!("bundle {} does not exist", bundle_path.display())));
    }
    let bundle = load_model_bundle(bundle_path)?;
    let splits = if split.is_empty() { cfg.test_splits.clone() } else { split.to_vec() };
    let test = load_corpus(&manifest, |e| splits.contains(&e.split))?;
    if test.is_empty() {
        return Err(Error::InvalidInput(format!("splits {splits:?} are empty")));
    }
    let mut run = Run::new("decode", &common.out);
    for u in &test {
        let d = decode_utterance(&bundle, bundle.variant, &u.features, Some(&u.rol))?;
        let aol = format!("pred/{}.aol.csv", u.id);
        write_aol(&common.out.join(&aol), &d.aol)?;
        run.track(aol);
        if let Some(r) = &d.predicted_rol {
            let rol = format!("pred/{}.rol.csv", u.id);
            write_rol(&common.out.join(&rol), r)?;
            run.track(rol);
        }
    }
    run.record.config_hash = Some(bundle.provenance.config_hash.clone());
    run.record.seed = Some(bundle.provenance.seed);
    run.record.manifest = Some(mpath.display().to_string());
    run.finish()
}

/// `<id>` of every `<id>.aol.csv` in `dir`, sorted.
fn aol_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".aol.csv")).map(str::to_string))
        .collect();
    ids.sort();
    Ok(ids)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::InvalidInput(format!("missing file {}", path.display())))
    }
}

fn eval(common: &Common, preds: &[String], truth_dir: &Path) -> Result<()> {
    let cfg = experiment_config(common)?;
    let named: Vec<(String, PathBuf)> = preds
        .iter()
        .map(|p| match p.split_once('=') {
            Some((n, d)) => (n.to_string(), PathBuf::from(d)),
            None => ("prediction".to_string(), PathBuf::from(p)),
        })
        .collect();
    let mut names: Vec<&String> = named.iter().map(|(n, _)| n).collect();
    names.sort();
    names.dedup();
    if names.len() != named.len() {
        return Err(Error::Config("prediction names must be distinct".into()));
    }
    let ids = aol_ids(&named[0].1)?;
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("no .aol.csv files in {}", named[0].1.display())));
    }
    let mut truth: Vec<(AolSequence, Option<RolSequence>)> = Vec::new();
    let mut predictions: BTreeMap<String, Vec<AolSequence>> = BTreeMap::new();
    let mut ranks: Vec<RolSequence> = Vec::new();
    for id in &ids {
        let aol = read_aol(&require(truth_dir.join(format!("{id}.aol.csv")))?)?;
        let rol_path = truth_dir.join(format!("{id}.rol.csv"));
        let rol = if rol_path.exists() { Some(read_rol(&rol_path)?) } else { None };
        truth.push((aol, rol));
        for (name, dir) in &named {
            let p = read_aol(&require(dir.join(format!("{id}.aol.csv")))?)?;
            predictions.entry(name.clone()).or_default().push(p);
        }
        let pr = named.iter().map(|(_, d)| d.join(format!("{id}.rol.csv"))).find(|p| p.exists());
        if let Some(p) = pr {
            ranks.push(read_rol(&p)?);
        }
    }
    let ranks = (ranks.len() == ids.len()).then_some(ranks);
    let (variants, ranking, utterances) =
        score_predictions(&truth, &predictions, ranks.as_deref(), cfg.tau_variant, &cfg.precision_k)?;
    let hash = cfg.hash()?;
    let fold = FoldReport {
        fold: "all".into(),
        seed: cfg.seed,
        train_utterances: 0,
        test_utterances: ids.len(),
        skipped: None,
        variants,
        ranking,
        utterances,
    };
    let report = EvalReport::new(&hash, cfg.seed, vec![fold]);
    let mut run = Run::new("eval", &common.out);
    run.write("report.json", &to_canonical_json_pretty(&report)?)?;
    run.write("table.csv", report.table_csv().as_bytes())?;
    run.record.config_hash = Some(hash);
    run.record.seed = Some(cfg.seed);
    run.finish()
}

fn synth(common: &Common, preset: Preset) -> Result<()> {
    let mut cfg: SynthConfig = match (&common.config, preset) {
        (Some(p), _) => read_json(p)?,
        (None, Preset::Moderate) => SynthConfig::default(),
        (None, Preset::Noiseless) => SynthConfig::noiseless(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let corpus = generate_corpus(&cfg)?;
    write_corpus(&cfg, &corpus, &common.out)?;
    let mut run = Run::new("synth", &common.out);
    run.write("synth_config.json", &to_canonical_json_pretty(&cfg)?)?;
    run.track("manifest.json");
    run.track("latent.csv");
    run.track("features/");
    run.track("annotations/");
    run.record.seed = Some(cfg.seed);
    run.finish()
}

fn xval(common: &Common, serial: bool) -> Result<()> {
    let cfg = experiment_config(common)?;
    let mpath = manifest_path(common, Some(&cfg))?;
    let manifest = load_manifest(&mpath)?;
    let folds = match &cfg.folds {
        Some(f) => f.clone(),
        None => manifest.split_tags(),
    };
    if let Some(missing) = folds.iter().find(|f| !manifest.utterances.iter().any(|u| &u.split == *f)) {
        return Err(Error::Config(format!("fold {missing:?} has no utterances")));
    }
    let corpus = load_corpus(&manifest, |e| folds.contains(&e.split))?;
    let hash = cfg.hash()?;
    let report = cross_validate(&corpus, &folds, &cfg, &hash, !serial)?;
    let mut run = Run::new("xval", &common.out);
    run.write("report.json", &to_canonical_json_pretty(&report)?)?;
    run.write("table.csv", report.table_csv().as_bytes())?;
    run.record.config_hash = Some(hash);
    run.record.seed = Some(cfg.seed);
    run.record.manifest = Some(mpath.display().to_string());
    run.finish()
}
