use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use phocnet::augment::{balance_augment, DEFAULT_FACTOR_RANGE};
use phocnet::data::{
    build_synthetic_dataset, load_manifest, save_pgm, write_manifest, Dataset, Split,
    WordSample, VOCABULARY,
};
use phocnet::model::{build_network, init_params, load_model, save_model, ArchitectureSpec, Head, NetworkModel};
use phocnet::phoc::{
    encode_phoc, normalize_transcription, read_bigram_file, select_bigrams, Alphabet, Bigram, PhocConfig, PhocConfigRecord,
};
use phocnet::predictions::{read_predictions, write_predictions, Prediction, PredictionFormat, PredictionSet};
use phocnet::retrieval::{evaluate_qbe, evaluate_qbs, EvalReport};
use phocnet::train::{train, LogRecord, Target, TrainConfig, TrainSample};

#[derive(Parser)]
#[command(name = "phocnet", version, about = "Word spotting with PHOC attribute networks")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads [default: available cores]. 1 runs the sequential
    /// reference path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic word image dataset with a manifest.
    Synth(SynthArgs),
    /// Class-balance a manifest's training split with affine warps.
    Augment(AugmentArgs),
    /// Print PHOC vectors, or their dimension.
    Phoc(PhocCmdArgs),
    /// Train a network on a manifest's training split.
    Train(TrainArgs),
    /// Write predicted vectors for the images of a manifest.
    Predict(PredictArgs),
    /// Evaluate retrieval on stored predictions or a model.
    Eval(EvalArgs),
}

#[derive(Args)]
struct PhocArgs {
    /// Alphabet preset name or a file with one symbol per line.
    #[arg(long, default_value = "latin36")]
    alphabet: String,
    /// Unigram pyramid levels.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    levels: Vec<usize>,
    /// File with one bigram per line. Overrides --bigram-count.
    #[arg(long)]
    bigrams: Option<PathBuf>,
    /// Number of most frequent bigrams to select from the transcriptions
    /// at hand; 0 disables bigrams.
    #[arg(long, default_value_t = 50)]
    bigram_count: usize,
    /// Bigram pyramid levels.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    bigram_levels: Vec<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for images and manifest.tsv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Words to render. Without words, --words-file or --classes picks them.
    words: Vec<String>,
    /// File with one word per line.
    #[arg(long, conflicts_with = "words")]
    words_file: Option<PathBuf>,
    /// Take this many words from the built-in vocabulary.
    #[arg(long, default_value_t = 30)]
    classes: usize,
    #[arg(long, default_value_t = 30)]
    samples_per_class: usize,
    /// Fraction of each class assigned to the training split.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    train_ratio: f64,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the augmented images and manifest.tsv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of training samples after augmentation.
    #[arg(long, default_value_t = 500_000)]
    target: usize,
    /// Range of the random affine factors, as low,high.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [DEFAULT_FACTOR_RANGE.0, DEFAULT_FACTOR_RANGE.1])]
    factor_range: Vec<f64>,
    /// Alphabet used to normalize transcriptions.
    #[arg(long, default_value = "latin36")]
    alphabet: String,
}

#[derive(Args)]
struct PhocCmdArgs {
    /// Transcriptions to encode.
    words: Vec<String>,
    /// Encode every transcription of this manifest instead.
    #[arg(long, conflicts_with = "words")]
    manifest: Option<PathBuf>,
    /// Print only the vector dimension.
    #[arg(long)]
    dim_only: bool,
    /// Write the selected bigrams to this file.
    #[arg(long)]
    write_bigrams: Option<PathBuf>,
    /// Write ground-truth PHOCs of the manifest as a prediction file.
    #[arg(long, requires = "manifest")]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[command(flatten)]
    phoc: PhocArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    /// Training log TSV [default: <model>.log.tsv].
    #[arg(long)]
    log: Option<PathBuf>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Architecture preset.
    #[arg(long, default_value = "phocnet-mini", value_parser = ["phocnet-mini", "phocnet-full"])]
    arch: String,
    #[arg(long, value_parser = ["phoc", "softmax"])]
    mode: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    total_iterations: Option<u64>,
    #[arg(long)]
    lr_drop_iteration: Option<u64>,
    #[arg(long)]
    lr_drop_factor: Option<f64>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long, value_parser = ["sum", "mean"])]
    loss_normalization: Option<String>,
    #[command(flatten)]
    phoc: PhocArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output prediction file.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file from `predict` or `phoc --output`.
    #[arg(long, conflicts_with_all = ["model", "manifest"], required_unless_present = "model")]
    predictions: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Qbe)]
    protocol: ProtocolArg,
    /// Words, one per line, never used as query strings.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Report file; the report goes to standard output otherwise.
    #[arg(long)]
    output: Option<PathBuf>,
    /// PHOC space of the query strings [default: the one stored with the
    /// predictions or model].
    #[arg(long)]
    phoc_alphabet: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "phoc_alphabet")]
    phoc_levels: Option<Vec<usize>>,
    #[arg(long, requires = "phoc_alphabet")]
    phoc_bigrams: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', requires = "phoc_bigrams")]
    phoc_bigram_levels: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Binary,
}

impl From<Format> for PredictionFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => PredictionFormat::Tsv,
            Format::Binary => PredictionFormat::Binary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Qbe,
    Qbs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => bail!("--threads must be positive"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, usize::from),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting worker threads")?;
    match cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Augment(a) => augment(a, cli.seed),
        Command::Phoc(a) => phoc(a),
        Command::Train(a) => train_cmd(a, cli.seed, cli.threads, threads),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
    }
}

fn alphabet_from(name: &str) -> Result<Alphabet> {
    match Alphabet::from_preset(name) {
        Ok(a) => Ok(a),
        Err(_) if Path::new(name).is_file() => {
            Alphabet::from_file(name).with_context(|| format!("reading alphabet {name}"))
        }
        Err(e) => Err(anyhow!("alphabet {name:?}: {e} (and no such file)")),
    }
}

impl PhocArgs {
    /// Resolves the PHOC space; selected bigrams come from `words`.
    fn resolve<S: AsRef<str>>(&self, words: &[S]) -> Result<PhocConfig> {
        let alphabet = alphabet_from(&self.alphabet)?;
        let bigrams: Vec<Bigram> = match &self.bigrams {
            Some(path) => read_bigram_file(path).with_context(|| format!("reading bigrams {}", path.display()))?,
            None => select_bigrams(words, self.bigram_count, &alphabet),
        };
        let bigram_levels = if bigrams.is_empty() { Vec::new() } else { self.bigram_levels.clone() };
        PhocConfig::new(alphabet, self.levels.clone(), bigrams, bigram_levels).context("PHOC configuration")
    }
}

fn load(path: &Path, alphabet: &Alphabet) -> Result<Dataset> {
    let loaded = load_manifest(path, alphabet).with_context(|| format!("loading manifest {}", path.display()))?;
    if !loaded.dropped.is_empty() {
        log::warn!("{}: {} rows dropped with empty transcriptions", path.display(), loaded.dropped.len());
    }
    Ok(loaded.dataset)
}

fn select(dataset: &Dataset, split: SplitArg) -> Dataset {
    match split {
        SplitArg::Train => dataset.split(Split::Train),
        SplitArg::Test => dataset.split(Split::Test),
        SplitArg::All => dataset.clone(),
    }
}

fn read_words(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let words: Vec<String> = if let Some(path) = &a.words_file {
        read_words(path)?
    } else if !a.words.is_empty() {
        a.words.clone()
    } else {
        if a.classes > VOCABULARY.len() {
            bail!("--classes {} exceeds the built-in vocabulary of {}", a.classes, VOCABULARY.len());
        }
        VOCABULARY[..a.classes].iter().map(|w| w.to_string()).collect()
    };
    let ds = build_synthetic_dataset(&words, a.samples_per_class, a.train_ratio, seed, &a.out_dir)
        .with_context(|| format!("building synthetic dataset in {}", a.out_dir.display()))?;
    log::info!("wrote {} images of {} words to {}", ds.len(), words.len(), a.out_dir.display());
    println!("{}", a.out_dir.join("manifest.tsv").display());
    Ok(())
}

fn augment(a: AugmentArgs, seed: u64) -> Result<()> {
    let alphabet = alphabet_from(&a.alphabet)?;
    let ds = load(&a.manifest, &alphabet)?;
    let mut classes: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for s in ds.samples().iter().filter(|s| s.split == Split::Train) {
        classes.entry(s.transcription.clone()).or_default().push(s.image.clone());
    }
    let range = (a.factor_range[0], a.factor_range[1]);
    let augmented = balance_augment(&classes, a.target, range, seed)
        .with_context(|| format!("augmenting {}", a.manifest.display()))?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut samples = Vec::with_capacity(augmented.len() + ds.len());
    for (i, s) in augmented.into_iter().enumerate() {
        let path = a.out_dir.join(format!("aug_{i:06}.pgm"));
        save_pgm(&path, &s.image).with_context(|| format!("writing {}", path.display()))?;
        samples.push(WordSample {
            id: format!("aug_{i:06}"),
            image: s.image,
            transcription: s.class,
            split: Split::Train,
            fold: None,
            path: Some(path),
        });
    }
    for s in ds.samples().iter().filter(|s| s.split == Split::Test) {
        let mut s = s.clone();
        if let Some(p) = &s.path {
            s.path = Some(fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))?);
        }
        samples.push(s);
    }
    let out = a.out_dir.join("manifest.tsv");
    write_manifest(&out, &samples).with_context(|| format!("writing {}", out.display()))?;
    log::info!("{} training samples over {} classes", a.target, classes.len());
    println!("{}", out.display());
    Ok(())
}

fn phoc(a: PhocCmdArgs) -> Result<()> {
    let alphabet = alphabet_from(&a.phoc.alphabet)?;
    let (words, ids): (Vec<String>, Vec<String>) = match &a.manifest {
        Some(path) => {
            let ds = load(path, &alphabet)?;
            let ids = ds.samples().iter().map(|s| s.id.clone()).collect();
            (ds.samples().iter().map(|s| s.transcription.clone()).collect(), ids)
        }
        None => {
            let words: Vec<String> = a.words.iter().map(|w| normalize_transcription(w, &alphabet)).collect();
            let ids = (0..words.len()).map(|i| i.to_string()).collect();
            (words, ids)
        }
    };
    let config = a.phoc.resolve(&words)?;
    if let Some(path) = &a.write_bigrams {
        let text: String = config.bigrams().iter().map(|b| format!("{b}\n")).collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if a.dim_only {
        println!("{}", config.dimension());
        return Ok(());
    }
    let encoded = words
        .iter()
        .map(|w| encode_phoc(w, &config).with_context(|| format!("encoding {w:?}")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &a.output {
        let set = PredictionSet {
            phoc: Some(PhocConfigRecord::from(&config)),
            records: ids
                .into_iter()
                .zip(&words)
                .zip(&encoded)
                .map(|((id, w), v)| Prediction {
                    id,
                    transcription: w.clone(),
                    vector: v.to_floats(),
                })
                .collect(),
        };
        write_predictions(path, &set, a.format.into()).with_context(|| format!("writing {}", path.display()))?;
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    for (w, v) in words.iter().zip(&encoded) {
        let bits: String = v.bits().iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        writeln!(out, "{w}\t{bits}")?;
    }
    Ok(())
}

fn resolve_config(a: &TrainArgs, seed: u64, threads_flag: Option<usize>, threads: usize) -> Result<TrainConfig> {
    let file = match &a.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    let mut flags: Vec<(&str, String)> = Vec::new();
    let mut push = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k, v));
        }
    };
    push("mode", a.mode.clone());
    push("batch_size", a.batch_size.map(|v| v.to_string()));
    push("momentum", a.momentum.map(|v| v.to_string()));
    push("weight_decay", a.weight_decay.map(|v| v.to_string()));
    push("base_lr", a.base_lr.map(|v| v.to_string()));
    push("total_iterations", a.total_iterations.map(|v| v.to_string()));
    push("lr_drop_iteration", a.lr_drop_iteration.map(|v| v.to_string()));
    push("lr_drop_factor", a.lr_drop_factor.map(|v| v.to_string()));
    push("log_every", a.log_every.map(|v| v.to_string()));
    push("loss_normalization", a.loss_normalization.clone());
    push("threads", threads_flag.map(|v| v.to_string()));
    // The seed flag always has a value; an explicit `seed` key in the file
    // only wins when the flag is left at its default.
    let file_has = |key: &str| {
        file.lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .any(|(k, _)| k.trim() == key)
    };
    let mut text = format!("threads = {threads}\n");
    if !(file_has("seed") && seed == 42) {
        flags.push(("seed", seed.to_string()));
    }
    text.push_str(&file);
    text.push('\n');
    for (k, v) in &flags {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let mut probe = TrainConfig::default();
    probe.apply_kv(&text).context("configuration")?;
    let mut config = TrainConfig::preset(probe.mode);
    config.apply_kv(&text).context("configuration")?;
    config.validate().context("configuration")?;
    Ok(config)
}

fn log_progress(record: &LogRecord, _: &NetworkModel<f32>) -> Option<f64> {
    log::info!(
        "iteration {} loss {:.6} lr {:e} ({:.1}s)",
        record.iteration,
        record.loss,
        record.lr,
        record.elapsed_seconds
    );
    None
}

fn train_cmd(a: TrainArgs, seed: u64, threads_flag: Option<usize>, threads: usize) -> Result<()> {
    let config = resolve_config(&a, seed, threads_flag, threads)?;
    if a.print_config {
        print!("{}", config.to_kv());
        return Ok(());
    }
    let alphabet = alphabet_from(&a.phoc.alphabet)?;
    let ds = load(&a.manifest, &alphabet)?.split(Split::Train);
    if ds.is_empty() {
        bail!("{}: no training samples", a.manifest.display());
    }
    let words: Vec<&str> = ds.samples().iter().map(|s| s.transcription.as_str()).collect();
    let (model, samples) = match config.mode {
        phocnet::train::TrainMode::Phoc => {
            let phoc = a.phoc.resolve(&words)?;
            let spec = ArchitectureSpec::preset(&a.arch, Head::Sigmoid)?;
            let mut model = build_network::<f32>(&spec, phoc.dimension())?;
            model.metadata.phoc = Some(PhocConfigRecord::from(&phoc));
            model.metadata.phoc_digest = Some(phoc.digest());
            let samples = ds
                .samples()
                .iter()
                .map(|s| {
                    let y = encode_phoc(&s.transcription, &phoc).with_context(|| format!("encoding {:?}", s.transcription))?;
                    Ok(TrainSample {
                        image: s.image.clone(),
                        target: Target::Attributes(y.to_floats()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (model, samples)
        }
        phocnet::train::TrainMode::Softmax => {
            let classes: Vec<String> = ds.class_index().keys().cloned().collect();
            let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
            let spec = ArchitectureSpec::preset(&a.arch, Head::Softmax)?;
            let mut model = build_network::<f32>(&spec, classes.len())?;
            let samples = ds
                .samples()
                .iter()
                .map(|s| TrainSample {
                    image: s.image.clone(),
                    target: Target::Class(index[s.transcription.as_str()]),
                })
                .collect();
            model.metadata.classes = classes;
            (model, samples)
        }
    };
    let mut model = model;
    init_params(&mut model, &mut ChaCha8Rng::seed_from_u64(config.seed));
    log::info!(
        "training {} ({} parameters) on {} samples for {} iterations",
        a.arch,
        model.parameter_count(),
        samples.len(),
        config.total_iterations
    );
    let mut observer = log_progress;
    let (model, log) = train(&samples, model, &config, &mut observer)?;
    save_model(&model, &a.model).with_context(|| format!("writing {}", a.model.display()))?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.model.clone().into_os_string();
        p.push(".log.tsv");
        PathBuf::from(p)
    });
    log.write_tsv(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
    Ok(())
}

fn model_alphabet(model: &NetworkModel<f32>) -> Alphabet {
    model
        .metadata
        .phoc
        .as_ref()
        .and_then(|r| Alphabet::from_chars(r.alphabet.chars()).ok())
        .unwrap_or_else(Alphabet::latin36)
}

fn predict_set(model_path: &Path, manifest: &Path, split: SplitArg) -> Result<PredictionSet> {
    let model = load_model(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let ds = select(&load(manifest, &model_alphabet(&model))?, split);
    let records = ds
        .samples()
        .par_iter()
        .map(|s| {
            let vector = model.predict(&s.image).with_context(|| format!("sample {}", s.id))?;
            Ok(Prediction {
                id: s.id.clone(),
                transcription: s.transcription.clone(),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet {
        phoc: model.metadata.phoc.clone(),
        records,
    })
}

fn predict(a: PredictArgs) -> Result<()> {
    let set = predict_set(&a.model, &a.manifest, a.split)?;
    write_predictions(&a.output, &set, a.format.into()).with_context(|| format!("writing {}", a.output.display()))?;
    log::info!("{} predictions written to {}", set.records.len(), a.output.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let set = match (&a.predictions, &a.model, &a.manifest) {
        (Some(p), _, _) => read_predictions(p).with_context(|| format!("reading predictions {}", p.display()))?,
        (None, Some(m), Some(x)) => predict_set(m, x, a.split)?,
        _ => bail!("either --predictions or --model with --manifest is required"),
    };
    let vectors = set.vectors_f64();
    let labels = set.labels();
    let report: EvalReport = match a.protocol {
        ProtocolArg::Qbe => evaluate_qbe(&vectors, &labels)?,
        ProtocolArg::Qbs => {
            let config = match &a.phoc_alphabet {
                Some(name) => {
                    let alphabet = alphabet_from(name)?;
                    let bigrams = match &a.phoc_bigrams {
                        Some(p) => read_bigram_file(p).with_context(|| format!("reading bigrams {}", p.display()))?,
                        None => Vec::new(),
                    };
                    let levels = a.phoc_levels.clone().unwrap_or_else(|| vec![2, 3, 4, 5]);
                    let bigram_levels = match (&a.phoc_bigram_levels, bigrams.is_empty()) {
                        (_, true) => Vec::new(),
                        (Some(l), false) => l.clone(),
                        (None, false) => vec![2],
                    };
                    PhocConfig::new(alphabet, levels, bigrams, bigram_levels).context("PHOC configuration")?
                }
                None => {
                    let record = set
                        .phoc
                        .clone()
                        .ok_or_else(|| anyhow!("QbS needs a PHOC space: none stored with the predictions, pass --phoc-alphabet"))?;
                    PhocConfig::try_from(record).context("stored PHOC configuration")?
                }
            };
            let exclude: BTreeSet<String> = match &a.exclude {
                Some(p) => read_words(p)?
                    .iter()
                    .map(|w| normalize_transcription(w, config.alphabet()))
                    .collect(),
                None => BTreeSet::new(),
            };
            evaluate_qbs(&vectors, &labels, &config, &exclude)?
        }
    };
    let mut report = report;
    if matches!(a.protocol, ProtocolArg::Qbe) {
        for q in &mut report.queries {
            if let Some(r) = q.query.parse::<usize>().ok().and_then(|i| set.records.get(i)) {
                q.query = r.id.clone();
            }
        }
    }
    let tsv = report.to_tsv();
    match &a.output {
        Some(path) => {
            fs::write(path, &tsv).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", report.summary());
        }
        None => print!("{tsv}"),
    }
    Ok(())
}

/// The error chain joined by `: `, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}
