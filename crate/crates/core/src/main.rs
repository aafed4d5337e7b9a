use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vocalmotion::jsonl;
use vocalmotion::lm::{train_lm, LMConfig, LanguageModel, LmTrainOptions, SamplerConfig};
use vocalmotion::metrics::{
    diversity, fid, DiversityKind, EvalReport, FeatureSet, Table, GENERATION_COLUMNS, RECONSTRUCTION_COLUMNS,
    VOCAL_COLUMNS,
};
use vocalmotion::motion::{ablate_single_vs_split, ablation_table, CodecConfig, MotionTokenizer, TrainOptions};
use vocalmotion::pipeline::config::layered;
use vocalmotion::pipeline::run::{
    analyze_clips, build_corpus, evaluate_generation, layout_for, load_clips, motion_of, motion_tokens, render,
    unit_record, Clip, MotionTokenRecord,
};
use vocalmotion::pipeline::{build_dataset, generate, split_counts, BuildConfig, FixtureConfig, Split, MANIFEST_FILE};
use vocalmotion::tokens::{StreamRecord, TokenStream};
use vocalmotion::vocal::{
    analyze, read_wav, write_wav, F0CodecConfig, KMeansConfig, UnitRecord, VocalClip, VocalCodec, DEFAULT_HOP,
};
use vocalmotion::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "vocalmotion",
    version,
    about = "Lyrics to singing-vocal and whole-body motion tokens"
)]
struct Cli {
    /// Seed for every random choice the command makes
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON file merged over the command's defaults; flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset preparation
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Part-wise motion tokenizer
    #[command(subcommand)]
    Codec(CodecCmd),
    /// Vocal unit codec
    #[command(subcommand)]
    Vocal(VocalCmd),
    /// Text-conditioned token model
    #[command(subcommand)]
    Lm(LmCmd),
    /// Render generated streams to audio and motion
    Resynth(ResynthArgs),
    /// Score generations, or one metric over two feature files
    Evaluate(EvaluateArgs),
    /// Single codec vs split codecs across codebook sizes
    Ablate(AblateArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    /// Generate the synthetic fixture, segment it and write a manifest
    Build {
        #[arg(long)]
        songs: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum CodecCmd {
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        codebook_size: Option<usize>,
    },
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        fps: f64,
    },
}

#[derive(Subcommand, Debug)]
enum VocalCmd {
    /// Fit semantic units and train the F0 codec on the train split
    FitUnits {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        codes: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Unit ids for one recording or for every clip of a manifest
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "audio")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long, requires = "singer")]
        audio: Option<PathBuf>,
        #[arg(long)]
        singer: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum LmCmd {
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        motion_codec: PathBuf,
        #[arg(long)]
        vocal_codec: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample a stream for one lyric or for every clip of a split
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "manifest")]
        lyric: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct ResynthArgs {
    #[arg(long)]
    streams: PathBuf,
    #[arg(long)]
    motion_codec: PathBuf,
    #[arg(long)]
    vocal_codec: PathBuf,
    /// Takes singers from matching clips
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    singer: Option<String>,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_enum, requires_all = ["real", "gen"])]
    metric: Option<MetricArg>,
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long)]
    gen: Option<PathBuf>,
    #[arg(long, required_unless_present = "metric")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, required_unless_present = "metric")]
    streams: Option<PathBuf>,
    #[arg(long, required_unless_present = "metric")]
    motion_codec: Option<PathBuf>,
    #[arg(long, required_unless_present = "metric")]
    vocal_codec: Option<PathBuf>,
    /// Also write the report as CSV tables
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Fid,
    Div,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DatasetSettings {
    fixture: FixtureConfig,
    build: BuildConfig,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CodecSettings {
    codec: CodecConfig,
    train: TrainOptions,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocalSettings {
    hop_seconds: f64,
    kmeans: KMeansConfig,
    f0: F0CodecConfig,
    train: TrainOptions,
}

impl Default for VocalSettings {
    fn default() -> Self {
        Self {
            hop_seconds: DEFAULT_HOP,
            kmeans: KMeansConfig::default(),
            f0: F0CodecConfig::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LmSettings {
    model: LMConfig,
    train: LmTrainOptions,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            model: LMConfig::desk(),
            train: LmTrainOptions::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GenerateSettings {
    sampler: SamplerConfig,
    max_tokens: usize,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AblateSettings {
    codec: CodecConfig,
    train: TrainOptions,
    sizes: Vec<usize>,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            train: TrainOptions::default(),
            sizes: vec![256, 512, 1024],
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn need_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| invalid("--out is required for this command"))
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    jsonl::write_atomic(path, text.as_bytes())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn dataset_build(cli: &Cli, songs: Option<usize>) -> Result<()> {
    let out = need_out(cli)?;
    let mut s: DatasetSettings = layered(&DatasetSettings::default(), cli.config.as_deref())?;
    if let Some(n) = songs {
        s.fixture.songs = n;
    }
    if let Some(seed) = cli.seed {
        s.fixture.seed = seed;
        s.build.seed = seed;
    }
    fs::create_dir_all(out)?;
    let songs = generate(&s.fixture)?;
    let clips = build_dataset(&songs, out, &s.build)?;
    let (tr, va, te) = split_counts(songs.len(), s.build.ratios)?;
    log::info!(
        "{}: {} clips from {} songs ({tr}/{va}/{te} train/val/test songs)",
        out.join(MANIFEST_FILE).display(),
        clips.len(),
        songs.len()
    );
    write_json(&out.join("dataset_config.json"), &s)
}

fn train_clips(manifest: &Path) -> Result<Vec<Clip>> {
    let clips = load_clips(manifest, Some(Split::Train))?;
    if clips.is_empty() {
        return Err(invalid(format!("{} has no train clips", manifest.display())));
    }
    Ok(clips)
}

fn motion_seqs(clips: &[Clip]) -> Result<Vec<vocalmotion::motion::MotionSequence>> {
    clips.iter().map(|c| motion_of(c).cloned()).collect()
}

fn codec(cli: &Cli, cmd: &CodecCmd) -> Result<()> {
    let out = need_out(cli)?;
    match cmd {
        CodecCmd::Train {
            manifest,
            steps,
            codebook_size,
        } => {
            let mut s: CodecSettings = layered(&CodecSettings::default(), cli.config.as_deref())?;
            if let Some(n) = steps {
                s.train.steps = *n;
            }
            if let Some(k) = codebook_size {
                s.codec.codebook_size = *k;
            }
            if let Some(seed) = cli.seed {
                s.train.seed = seed;
            }
            let seqs = motion_seqs(&train_clips(manifest)?)?;
            let (tok, logs) = MotionTokenizer::train(&seqs, &s.codec, &s.train)?;
            ensure_parent(out)?;
            tok.save(out)?;
            let names = ["face", "body", "hand"];
            let log: serde_json::Map<String, serde_json::Value> = names
                .iter()
                .zip(&logs)
                .map(|(n, l)| {
                    (
                        n.to_string(),
                        serde_json::json!({"loss": l.losses, "recon": l.recon, "commitment": l.commitment, "codes_reset": l.codes_reset}),
                    )
                })
                .collect();
            write_json(
                &sibling(out, ".log.json"),
                &serde_json::json!({"settings": s, "parts": log}),
            )
        }
        CodecCmd::Encode {
            checkpoint,
            manifest,
            split,
        } => {
            let tok = MotionTokenizer::load(checkpoint)?;
            let clips = load_clips(manifest, split.map(Split::from))?;
            let recs: Vec<MotionTokenRecord> = clips.iter().map(|c| motion_tokens(c, &tok)).collect::<Result<_>>()?;
            ensure_parent(out)?;
            jsonl::save(out, &recs)
        }
        CodecCmd::Decode {
            checkpoint,
            tokens,
            fps,
        } => {
            let tok = MotionTokenizer::load(checkpoint)?;
            let recs: Vec<MotionTokenRecord> = jsonl::load(tokens)?;
            fs::create_dir_all(out)?;
            for r in &recs {
                let m = tok.decode(&r.face, &r.body, &r.hand, *fps)?;
                m.save(out.join(format!("{}.motion", r.clip_id)))?;
            }
            Ok(())
        }
    }
}

fn vocal(cli: &Cli, cmd: &VocalCmd) -> Result<()> {
    let out = need_out(cli)?;
    match cmd {
        VocalCmd::FitUnits {
            manifest,
            units,
            codes,
            steps,
        } => {
            let mut s: VocalSettings = layered(&VocalSettings::default(), cli.config.as_deref())?;
            if let Some(k) = units {
                s.kmeans.k = *k;
            }
            if let Some(c) = codes {
                s.f0.codes = *c;
            }
            if let Some(n) = steps {
                s.train.steps = *n;
            }
            if let Some(seed) = cli.seed {
                s.kmeans.seed = seed;
                s.train.seed = seed;
            }
            let clips = train_clips(manifest)?;
            let analyses = analyze_clips(&clips, s.hop_seconds)?;
            let items: Vec<VocalClip> = clips
                .iter()
                .zip(&analyses)
                .map(|(c, a)| VocalClip {
                    singer: &c.manifest.singer_id,
                    analysis: a,
                })
                .collect();
            let codec = VocalCodec::fit(&items, &s.kmeans, &s.f0, &s.train)?;
            ensure_parent(out)?;
            codec.save(out)?;
            write_json(
                &sibling(out, ".log.json"),
                &serde_json::json!({"settings": s, "inertia": codec.units.inertia}),
            )
        }
        VocalCmd::Analyze {
            checkpoint,
            manifest,
            split,
            audio,
            singer,
        } => {
            let codec = VocalCodec::load(checkpoint)?;
            let recs = match (manifest, audio, singer) {
                (Some(m), None, _) => load_clips(m, split.map(Split::from))?
                    .iter()
                    .map(|c| unit_record(c, &codec))
                    .collect::<Result<Vec<_>>>()?,
                (None, Some(a), Some(singer)) => {
                    let (pcm, sr) = read_wav(a)?;
                    let u = codec.encode(&analyze(&pcm, sr, codec.hop_seconds)?, singer)?;
                    let id = a
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    vec![UnitRecord {
                        clip_id: id,
                        semantic_ids: u.semantic_ids,
                        pitch_ids: u.pitch_ids,
                        singer_id: singer.clone(),
                        hop_seconds: codec.hop_seconds,
                    }]
                }
                _ => return Err(invalid("give --manifest, or --audio with --singer")),
            };
            ensure_parent(out)?;
            jsonl::save(out, &recs)
        }
    }
}

fn lm(cli: &Cli, cmd: &LmCmd) -> Result<()> {
    let out = need_out(cli)?;
    match cmd {
        LmCmd::Train {
            manifest,
            motion_codec,
            vocal_codec,
            epochs,
        } => {
            let mut s: LmSettings = layered(&LmSettings::default(), cli.config.as_deref())?;
            if let Some(e) = epochs {
                s.model.epochs = *e;
            }
            if let Some(seed) = cli.seed {
                s.train.seed = seed;
            }
            let tok = MotionTokenizer::load(motion_codec)?;
            let voc = VocalCodec::load(vocal_codec)?;
            let layout = layout_for(&tok, &voc);
            let corpus = build_corpus(&layout, &train_clips(manifest)?, &tok, &voc)?;
            let (model, losses) = train_lm(&corpus, &layout, &s.model, &s.train)?;
            ensure_parent(out)?;
            model.save(out)?;
            let streams: Vec<StreamRecord> = corpus
                .iter()
                .map(|e| StreamRecord {
                    clip_id: e.clip_id.clone(),
                    ids: e.stream.ids.clone(),
                })
                .collect();
            jsonl::save(sibling(out, ".corpus.jsonl"), &streams)?;
            write_json(
                &sibling(out, ".log.json"),
                &serde_json::json!({"settings": s, "losses": losses}),
            )
        }
        LmCmd::Generate {
            checkpoint,
            lyric,
            manifest,
            split,
            top_k,
            temperature,
            max_tokens,
        } => {
            let mut s: GenerateSettings = layered(&GenerateSettings::default(), cli.config.as_deref())?;
            if let Some(k) = top_k {
                s.sampler.top_k = *k;
            }
            if let Some(t) = temperature {
                s.sampler.temperature = *t;
            }
            if let Some(n) = max_tokens {
                s.max_tokens = *n;
            }
            if let Some(seed) = cli.seed {
                s.sampler.seed = seed;
            }
            let model = LanguageModel::load(checkpoint)?;
            let jobs: Vec<(String, String)> = match (lyric, manifest) {
                (Some(l), None) => vec![("lyric".into(), l.clone())],
                (None, Some(m)) => load_clips(m, Some((*split).into()))?
                    .into_iter()
                    .map(|c| (c.manifest.clip_id, c.manifest.lyric))
                    .collect(),
                _ => return Err(invalid("give --lyric or --manifest")),
            };
            let mut recs = Vec::new();
            for (i, (clip_id, text)) in jobs.into_iter().enumerate() {
                let sampler = SamplerConfig {
                    seed: s.sampler.seed.wrapping_add(i as u64),
                    ..s.sampler
                };
                let g = model.generate(&text, &sampler, s.max_tokens)?;
                if g.truncated {
                    log::warn!(
                        "{clip_id}: generation stopped before the end token ({} tokens)",
                        g.stream.len()
                    );
                }
                recs.push(StreamRecord {
                    clip_id,
                    ids: g.stream.ids,
                });
            }
            ensure_parent(out)?;
            jsonl::save(out, &recs)
        }
    }
}

fn resynth(cli: &Cli, a: &ResynthArgs) -> Result<()> {
    let out = need_out(cli)?;
    let tok = MotionTokenizer::load(&a.motion_codec)?;
    let voc = VocalCodec::load(&a.vocal_codec)?;
    let layout = layout_for(&tok, &voc);
    let clips = match &a.manifest {
        Some(m) => load_clips(m, None)?,
        None => Vec::new(),
    };
    let recs: Vec<StreamRecord> = jsonl::load(&a.streams)?;
    fs::create_dir_all(out)?;
    let seed = cli.seed.unwrap_or(0);
    for (i, r) in recs.iter().enumerate() {
        let singer = match (&a.singer, clips.iter().find(|c| c.manifest.clip_id == r.clip_id)) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => c.manifest.singer_id.clone(),
            (None, None) => voc
                .pitch
                .singers
                .first()
                .cloned()
                .ok_or_else(|| invalid("vocal codec knows no singer"))?,
        };
        let stream = TokenStream::new(r.ids.clone());
        let rendered = render(
            &layout,
            &stream,
            &tok,
            &voc,
            &singer,
            a.fps,
            seed.wrapping_add(i as u64),
        )?;
        if let Some(m) = &rendered.motion {
            m.save(out.join(format!("{}.motion", r.clip_id)))?;
        }
        if let Some(pcm) = &rendered.audio {
            write_wav(out.join(format!("{}.wav", r.clip_id)), pcm, voc.sample_rate)?;
        }
        write_json(&out.join(format!("{}.decouple.json", r.clip_id)), &rendered.report)?;
    }
    Ok(())
}

fn read_features(path: &Path) -> Result<FeatureSet> {
    let s: FeatureSet = serde_json::from_str(&fs::read_to_string(path)?)?;
    FeatureSet::new(s.rows)
}

fn tables(r: &EvalReport) -> String {
    let mut out = String::new();
    for cols in [&GENERATION_COLUMNS[..], &RECONSTRUCTION_COLUMNS[..], &VOCAL_COLUMNS[..]] {
        let mut t = Table::new(cols);
        t.push("ours", cols.iter().map(|c| r.get(c)).collect());
        out.push_str(&t.to_csv());
        out.push('\n');
    }
    out
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    if let Some(metric) = a.metric {
        let (real, gen) = (a.real.as_deref().expect("clap"), a.gen.as_deref().expect("clap"));
        let (name, v) = match metric {
            MetricArg::Fid => ("FID", fid(&read_features(real)?, &read_features(gen)?)?),
            MetricArg::Div => ("DIV", diversity(&read_features(gen)?, DiversityKind::Dispersion)?),
        };
        println!("{v}");
        if let Some(out) = &cli.out {
            let mut r = EvalReport::new(serde_json::json!({"metric": name, "real": real, "gen": gen}));
            r.record(name, Ok(v));
            ensure_parent(out)?;
            jsonl::write_atomic(out, r.to_json()?.as_bytes())?;
        }
        return Ok(());
    }
    let req = |p: &Option<PathBuf>| p.clone().expect("clap");
    let tok = MotionTokenizer::load(req(&a.motion_codec))?;
    let voc = VocalCodec::load(req(&a.vocal_codec))?;
    let layout = layout_for(&tok, &voc);
    let clips = load_clips(&req(&a.manifest), Some(a.split.into()))?;
    let gen: Vec<StreamRecord> = jsonl::load(req(&a.streams))?;
    let report = evaluate_generation(&layout, &clips, &gen, &tok, &voc, cli.seed.unwrap_or(0))?;
    let json = report.to_json()?;
    match &cli.out {
        Some(out) => {
            ensure_parent(out)?;
            jsonl::write_atomic(out, json.as_bytes())?;
        }
        None => println!("{json}"),
    }
    if let Some(t) = &a.table {
        ensure_parent(t)?;
        jsonl::write_atomic(t, tables(&report).as_bytes())?;
    }
    Ok(())
}

fn ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let out = need_out(cli)?;
    let mut s: AblateSettings = layered(&AblateSettings::default(), cli.config.as_deref())?;
    if let Some(sizes) = &a.sizes {
        s.sizes = sizes.clone();
    }
    if let Some(n) = a.steps {
        s.train.steps = n;
    }
    if let Some(seed) = cli.seed {
        s.train.seed = seed;
    }
    let train = motion_seqs(&train_clips(&a.manifest)?)?;
    let eval = motion_seqs(&load_clips(&a.manifest, Some(Split::Test))?)?;
    let rows = ablate_single_vs_split(&train, &eval, &s.codec, &s.train, &s.sizes)?;
    ensure_parent(out)?;
    jsonl::write_atomic(out, ablation_table(&rows).to_csv().as_bytes())?;
    write_json(
        &sibling(out, ".json"),
        &serde_json::json!({"settings": s, "rows": rows}),
    )
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset(DatasetCmd::Build { songs }) => dataset_build(cli, *songs),
        Command::Codec(c) => codec(cli, c),
        Command::Vocal(c) => vocal(cli, c),
        Command::Lm(c) => lm(cli, c),
        Command::Resynth(a) => resynth(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Ablate(a) => ablate(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
