use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpe_nmt::config::{parse_kv, parse_overrides, read_kv, Entry};
use dpe_nmt::data::{format_ids, read_ids, read_keys, read_lines, write_lines, Bitext, Corpus, Vocab};
use dpe_nmt::decode::{bleu, exact_match, run_2pt, translate, SyntheticSpec};
use dpe_nmt::experiment::{run_experiment, ExperimentSpec};
use dpe_nmt::train::{average_checkpoints, train, Checkpoint, RunConfig};
use dpe_nmt::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "dpe", version, about = "Transformer NMT with dynamic position encoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra key=value settings, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabularies, id files, supervision keys and reordered source
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        align: Option<PathBuf>,
        /// Require alignments (needed for DPE supervision)
        #[arg(long)]
        dpe: bool,
        /// File name prefix of the outputs
        #[arg(long, default_value = "train")]
        prefix: String,
        /// Reuse existing vocabularies instead of building them
        #[arg(long)]
        src_vocab: Option<PathBuf>,
        #[arg(long)]
        tgt_vocab: Option<PathBuf>,
    },
    /// Train a model on id-encoded data
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        keys: Option<PathBuf>,
        #[arg(long)]
        dev_src: PathBuf,
        #[arg(long)]
        dev_tgt: PathBuf,
        #[arg(long)]
        dev_keys: Option<PathBuf>,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
    },
    /// Translate tokenized text with a checkpoint
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// First-pass reordering model (two-pass decoding)
        #[arg(long)]
        reorder_model: Option<PathBuf>,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Score hypotheses against references
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Apply the alignment reordering rules to a corpus
    Reorder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        align: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Average checkpoints
    Average {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Run an experiment spec and print its report
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic corpus
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn entries(common: &Common) -> Result<Vec<Entry>> {
    let mut e = match &common.config {
        Some(p) => read_kv(p)?,
        None => Vec::new(),
    };
    e.extend(parse_overrides(&common.overrides)?);
    Ok(e)
}

fn out_dir(common: &Common) -> Result<&Path> {
    let d = common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("--out DIR is required".into()))?;
    std::fs::create_dir_all(d).map_err(|e| Error::Io {
        path: d.to_path_buf(),
        source: e,
    })?;
    Ok(d)
}

fn seed_line(seed: Option<u64>) -> String {
    format!("seed={}\n", seed.unwrap_or(1))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_bitext(src: &Path, tgt: &Path, keys: Option<&Path>) -> Result<Bitext> {
    Bitext::new(read_ids(src)?, read_ids(tgt)?, keys.map(read_keys).transpose()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess {
            common,
            src,
            tgt,
            align,
            dpe,
            prefix,
            src_vocab,
            tgt_vocab,
        } => {
            if dpe && align.is_none() {
                return Err(Error::Config("--dpe needs --align".into()));
            }
            let out = out_dir(&common)?;
            let corpus = Corpus::read(&src, &tgt, align.as_deref())?;
            let sv = match src_vocab {
                Some(p) => Vocab::read(&p)?,
                None => Vocab::build(corpus.src.iter().map(String::as_str)),
            };
            let tv = match tgt_vocab {
                Some(p) => Vocab::read(&p)?,
                None => Vocab::build(corpus.tgt.iter().map(String::as_str)),
            };
            sv.write(&out.join("vocab.src"))?;
            tv.write(&out.join("vocab.tgt"))?;
            let bt = corpus.encode(&sv, &tv)?;
            write_lines(&out.join(format!("{prefix}.src.ids")), bt.src.iter().map(|x| format_ids(x)))?;
            write_lines(&out.join(format!("{prefix}.tgt.ids")), bt.tgt.iter().map(|x| format_ids(x)))?;
            if let Some(keys) = &bt.keys {
                write_lines(&out.join(format!("{prefix}.keys")), keys.iter().map(ToString::to_string))?;
                let re = corpus.reordered_source()?;
                write_lines(&out.join(format!("{prefix}.reordered")), &re)?;
                write_lines(
                    &out.join(format!("{prefix}.reordered.ids")),
                    re.iter().map(|l| format_ids(&sv.encode(l))),
                )?;
            }
            write_text(&out.join("preprocess.info"), &seed_line(common.seed))?;
            println!("{} sentence pairs written to {}", corpus.len(), out.display());
        }
        Command::Train {
            common,
            src,
            tgt,
            keys,
            dev_src,
            dev_tgt,
            dev_keys,
            src_vocab,
            tgt_vocab,
        } => {
            let mut cfg = RunConfig::from_entries(&entries(&common)?)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            cfg.model.vocab_src = Vocab::read(&src_vocab)?.len();
            cfg.model.vocab_tgt = Vocab::read(&tgt_vocab)?.len();
            let tr = load_bitext(&src, &tgt, keys.as_deref())?;
            let dv = load_bitext(&dev_src, &dev_tgt, dev_keys.as_deref())?;
            let out = out_dir(&common)?;
            let o = train(&cfg, &tr, &dv, Some(out))?;
            for r in &o.log {
                println!("{r}");
            }
            println!("final model written to {}", out.join("final.dpec").display());
        }
        Command::Translate {
            common,
            model,
            reorder_model,
            src_vocab,
            tgt_vocab,
            input,
            output,
            beam,
        } => {
            let _ = entries(&common)?;
            let m = Checkpoint::read(&model)?.to_model()?;
            let r = reorder_model.map(|p| Checkpoint::read(&p)?.to_model()).transpose()?;
            let (sv, tv) = (Vocab::read(&src_vocab)?, Vocab::read(&tgt_vocab)?);
            let mut lines = Vec::new();
            for (i, line) in read_lines(&input)?.iter().enumerate() {
                let ids = sv.encode(line);
                if ids.is_empty() {
                    return Err(Error::Input(format!("{} line {}: empty sentence", input.display(), i + 1)));
                }
                let out = match &r {
                    Some(r) => run_2pt(r, &m, &ids, beam)?.translation,
                    None => translate(&m, &ids, beam)?.output().to_vec(),
                };
                lines.push(tv.decode(&out));
            }
            match output {
                Some(p) => write_lines(&p, &lines)?,
                None => lines.iter().for_each(|l| println!("{l}")),
            }
        }
        Command::Evaluate { common, hyp, reference } => {
            let _ = entries(&common)?;
            let (h, r) = (read_lines(&hyp)?, read_lines(&reference)?);
            if h.len() != r.len() {
                return Err(Error::Input(format!(
                    "{}: {} lines, {}: {} lines",
                    hyp.display(),
                    h.len(),
                    reference.display(),
                    r.len()
                )));
            }
            let norm = |xs: &[String]| -> Vec<String> {
                xs.iter().map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ")).collect()
            };
            println!("BLEU\t{:.2}", bleu(&h, &r)?);
            println!("exact_match\t{:.4}", exact_match(&norm(&h), &norm(&r))?);
        }
        Command::Reorder {
            common,
            src,
            tgt,
            align,
            output,
            keys,
        } => {
            let _ = entries(&common)?;
            let corpus = Corpus::read(&src, &tgt, Some(&align))?;
            write_lines(&output, corpus.reordered_source()?)?;
            if let Some(k) = keys {
                let kv = corpus.keys()?.expect("alignments present");
                write_lines(&k, kv.iter().map(ToString::to_string))?;
            }
        }
        Command::Average {
            common,
            output,
            checkpoints,
        } => {
            let _ = entries(&common)?;
            let cps = checkpoints.iter().map(|p| Checkpoint::read(p)).collect::<Result<Vec<_>>>()?;
            average_checkpoints(&cps)?.write(&output)?;
        }
        Command::Experiment { common } => {
            let path = common
                .config
                .as_deref()
                .ok_or_else(|| Error::Config("experiment needs --config SPEC".into()))?;
            let mut e = read_kv(path)?;
            e.extend(parse_overrides(&common.overrides)?);
            if let Some(s) = common.seed {
                e.extend(parse_kv(&format!("seeds={s}\n"))?);
            }
            let mut spec = ExperimentSpec::from_entries(&e)?;
            if let dpe_nmt::experiment::DataSource::Files(d) = &mut spec.data {
                if d.is_relative() {
                    *d = path.parent().unwrap_or(Path::new(".")).join(&*d);
                }
            }
            let report = run_experiment(&spec, common.out.as_deref())?;
            print!("{report}");
        }
        Command::Synth { common } => {
            let mut e = entries(&common)?;
            if let Some(s) = common.seed {
                e.extend(parse_kv(&format!("seed={s}\n"))?);
            }
            let spec = SyntheticSpec::from_entries(&e)?;
            let out = out_dir(&common)?;
            let s = spec.generate()?;
            for (name, c) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
                write_lines(&out.join(format!("{name}.src")), &c.src)?;
                write_lines(&out.join(format!("{name}.tgt")), &c.tgt)?;
                write_lines(&out.join(format!("{name}.align")), c.align.as_deref().unwrap_or(&[]))?;
            }
            let info: String = spec
                .task
                .to_entries()
                .into_iter()
                .map(|(k, v)| format!("{k}={v}\n"))
                .collect();
            write_text(&out.join("synth.info"), &info)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Input => 3,
                ErrorClass::Runtime => 4,
            })
        }
    }
}
