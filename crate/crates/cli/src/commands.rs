use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use simulmt::data::{
    de_bpe, load_parallel_corpus, read_lines, BpeModel, CorpusFilter, RawPair, SentencePair, Side, Vocabulary,
};
use simulmt::eval::{bleu, decode_corpus, latency, MetricsReport};
use simulmt::model::{Checkpoint, DecodeTrace, Policy};
use simulmt::synth::{generate, TaskSpec};
use simulmt::tensor::set_precision;
use simulmt::trainer::{fit, Mode, RunOutput};

use crate::config::{self, RunConfig};
use crate::Failure;

pub const LOG_FILE: &str = "train_log.tsv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const SOURCE_VOCAB_FILE: &str = "source.vocab";
pub const TARGET_VOCAB_FILE: &str = "target.vocab";
pub const METRICS_FILE: &str = "metrics.tsv";

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

pub fn bpe_train(
    input: &Path,
    merges: usize,
    model_path: &Path,
    vocab_path: Option<&Path>,
    vocab_size: usize,
) -> Result<(), Failure> {
    let lines = read_lines(input)?;
    let model = BpeModel::train(lines.iter().map(String::as_str), merges)?;
    model.save(model_path)?;
    if let Some(path) = vocab_path {
        let segmented: Vec<Vec<String>> = lines.iter().map(|l| model.apply(l)).collect();
        Vocabulary::build(&segmented, vocab_size, Side::Target)?.save(path)?;
    }
    println!("merges\t{}", model.merges().len());
    Ok(())
}

pub fn synth(spec: &TaskSpec, count: usize, seed: u64, source: &Path, target: &Path) -> Result<(), Failure> {
    let pairs = generate(spec, count, seed);
    let side = |f: fn(&RawPair) -> &Vec<String>| -> String { pairs.iter().map(|p| f(p).join(" ") + "\n").collect() };
    write_file(source, &side(|p| &p.source))?;
    write_file(target, &side(|p| &p.target))
}

/// Optional subword segmentation of one side.
struct Segmenter(Option<BpeModel>);

impl Segmenter {
    fn load(path: Option<PathBuf>) -> Result<Self, Failure> {
        Ok(Self(path.map(|p| BpeModel::load(&p)).transpose()?))
    }

    fn apply(&self, tokens: &[String]) -> Vec<String> {
        match &self.0 {
            Some(m) => m.apply(&tokens.join(" ")),
            None => tokens.to_vec(),
        }
    }

    fn line(&self, line: &str) -> Vec<String> {
        match &self.0 {
            Some(m) => m.apply(line),
            None => line.split_whitespace().map(str::to_owned).collect(),
        }
    }

    fn join(&self, tokens: &[String]) -> String {
        match &self.0 {
            Some(_) => de_bpe(tokens),
            None => tokens.join(" "),
        }
    }
}

/// Loads, segments and filters a parallel corpus. The length filter sees
/// the segmented token counts.
fn load_pairs(
    src: &Path,
    tgt: &Path,
    filter: &CorpusFilter,
    seg: (&Segmenter, &Segmenter),
) -> Result<(Vec<RawPair>, usize), Failure> {
    let unfiltered = CorpusFilter {
        max_len: usize::MAX,
        max_ratio: f64::INFINITY,
    };
    let loaded = load_parallel_corpus(src, tgt, &unfiltered)?;
    let mut dropped = loaded.dropped;
    let mut pairs = Vec::with_capacity(loaded.pairs.len());
    for p in loaded.pairs {
        let pair = RawPair {
            source: seg.0.apply(&p.source),
            target: seg.1.apply(&p.target),
        };
        if simulmt::data::keep_pair(pair.source.len(), pair.target.len(), filter) {
            pairs.push(pair);
        } else {
            dropped += 1;
        }
    }
    Ok((pairs, dropped))
}

fn encode(pairs: &[RawPair], sv: &Vocabulary, tv: &Vocabulary) -> Result<Vec<SentencePair>, Failure> {
    pairs
        .iter()
        .map(|p| Ok(SentencePair::new(sv.encode(&p.source), tv.encode(&p.target))?))
        .collect()
}

pub fn train(cfg: &RunConfig, run_dir: &Path) -> Result<(), Failure> {
    let train_cfg = cfg.train_config()?;
    let threads: usize = cfg.parse_value("threads")?;
    simulmt::par::init_threads(threads).map_err(|e| Failure::new("config", e))?;
    fs::create_dir_all(run_dir).map_err(|e| Failure::io(run_dir, e))?;
    write_file(&run_dir.join(config::FILE_NAME), &cfg.to_text())?;

    let seg = (
        Segmenter::load(cfg.path("source_bpe"))?,
        Segmenter::load(cfg.path("target_bpe"))?,
    );
    let filter = cfg.filter()?;
    let (train_raw, dropped) = load_pairs(
        &cfg.required_path("train_source")?,
        &cfg.required_path("train_target")?,
        &filter,
        (&seg.0, &seg.1),
    )?;
    let (valid_raw, _) = load_pairs(
        &cfg.required_path("valid_source")?,
        &cfg.required_path("valid_target")?,
        &filter,
        (&seg.0, &seg.1),
    )?;
    if train_raw.is_empty() || valid_raw.is_empty() {
        return Err(Failure::new("data", "no sentence pairs left after filtering"));
    }
    eprintln!("train pairs {} (dropped {dropped}), valid pairs {}", train_raw.len(), valid_raw.len());

    let sources: Vec<Vec<String>> = train_raw.iter().map(|p| p.source.clone()).collect();
    let targets: Vec<Vec<String>> = train_raw.iter().map(|p| p.target.clone()).collect();
    let sv = Vocabulary::build(&sources, cfg.parse_value("source_vocab_size")?, Side::Source)?;
    let tv = Vocabulary::build(&targets, cfg.parse_value("target_vocab_size")?, Side::Target)?;
    sv.save(&run_dir.join(SOURCE_VOCAB_FILE))?;
    tv.save(&run_dir.join(TARGET_VOCAB_FILE))?;
    let train = encode(&train_raw, &sv, &tv)?;
    let valid = encode(&valid_raw, &sv, &tv)?;

    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    let log = run_dir.join(LOG_FILE);
    let meta = vec![
        ("mode".to_owned(), train_cfg.mode.to_string()),
        ("k".to_owned(), train_cfg.k.to_string()),
        ("alpha".to_owned(), train_cfg.alpha.to_string()),
    ];
    let output = RunOutput {
        checkpoint: &checkpoint,
        log: &log,
        meta,
    };
    let outcome = fit(&train_cfg, sv.len(), tv.len(), &train, &valid, Some(&output), |row| {
        eprintln!("{}", row.to_tsv());
    })?;
    println!("best_epoch\t{}\tval_loss\t{:.6}", outcome.best_epoch, outcome.best_val);
    Ok(())
}

/// A trained run loaded for decoding.
pub struct Loaded {
    cfg: RunConfig,
    checkpoint: Checkpoint,
    sv: Vocabulary,
    tv: Vocabulary,
    seg: (Segmenter, Segmenter),
}

impl Loaded {
    pub fn open(run_dir: &Path) -> Result<Self, Failure> {
        let cfg = RunConfig::load(&run_dir.join(config::FILE_NAME))?;
        set_precision(cfg.train_config()?.precision);
        let threads: usize = cfg.parse_value("threads")?;
        simulmt::par::init_threads(threads).map_err(|e| Failure::new("config", e))?;
        Ok(Self {
            checkpoint: Checkpoint::load(&run_dir.join(CHECKPOINT_FILE))?,
            sv: Vocabulary::load(&run_dir.join(SOURCE_VOCAB_FILE), Side::Source)?,
            tv: Vocabulary::load(&run_dir.join(TARGET_VOCAB_FILE), Side::Target)?,
            seg: (
                Segmenter::load(cfg.path("source_bpe"))?,
                Segmenter::load(cfg.path("target_bpe"))?,
            ),
            cfg,
        })
    }

    /// The trained policy unless `mode` / `k` override it.
    pub fn policy(&self, mode: Option<Mode>, k: Option<usize>) -> Result<Policy, Failure> {
        let trained: Mode = self.cfg.parse_value("mode")?;
        let k = match k {
            Some(k) => k,
            None => self.cfg.parse_value("k")?,
        };
        if k == 0 {
            return Err(Failure::new("config", "k must be at least 1"));
        }
        Ok(mode.unwrap_or(trained).policy(k))
    }

    fn sources(&self, path: &Path) -> Result<Vec<Vec<usize>>, Failure> {
        Ok(read_lines(path)?
            .iter()
            .map(|l| self.sv.encode(&self.seg.0.line(l)))
            .collect())
    }

    fn max_len(&self) -> Result<usize, Failure> {
        self.cfg.parse_value("decode_max_len")
    }

    fn hypothesis(&self, trace: &DecodeTrace) -> String {
        self.seg.1.join(&self.tv.decode(&trace.output()))
    }
}

pub fn translate(
    run_dir: &Path,
    input: &Path,
    output: Option<&Path>,
    policy: (Option<Mode>, Option<usize>),
    traces: Option<&Path>,
) -> Result<(), Failure> {
    let run = Loaded::open(run_dir)?;
    let policy = run.policy(policy.0, policy.1)?;
    let sources = run.sources(input)?;
    let decoded = decode_corpus(&run.checkpoint.params, &sources, policy, run.max_len()?)?;
    let hyps: String = decoded.iter().map(|t| run.hypothesis(t) + "\n").collect();
    match output {
        Some(p) => write_file(p, &hyps)?,
        None => print!("{hyps}"),
    }
    if let Some(p) = traces {
        let lines: String = decoded.iter().map(|t| t.to_line(&run.tv) + "\n").collect();
        write_file(p, &lines)?;
    }
    std::io::stdout().flush().map_err(|e| Failure::new("io", e.to_string()))?;
    Ok(())
}

pub fn evaluate_run(
    run_dir: &Path,
    source: &Path,
    reference: &Path,
    policy: (Option<Mode>, Option<usize>),
    report: Option<&Path>,
) -> Result<(), Failure> {
    let run = Loaded::open(run_dir)?;
    let policy = run.policy(policy.0, policy.1)?;
    let sources = run.sources(source)?;
    let refs: Vec<Vec<String>> = read_lines(reference)?
        .iter()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect();
    if refs.len() != sources.len() {
        return Err(Failure::new(
            "data",
            format!("{} source lines but {} reference lines", sources.len(), refs.len()),
        ));
    }
    let traces = decode_corpus(&run.checkpoint.params, &sources, policy, run.max_len()?)?;
    let hyps: Vec<Vec<String>> = traces
        .iter()
        .map(|t| run.hypothesis(t).split_whitespace().map(str::to_owned).collect())
        .collect();
    let metrics = MetricsReport {
        bleu: bleu(&hyps, &refs)?,
        latency: latency(&traces)?,
        sentences: traces.len(),
    };
    let line = metrics.to_tsv();
    let path = report.map_or_else(|| run_dir.join(METRICS_FILE), Path::to_path_buf);
    write_file(&path, &format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}
