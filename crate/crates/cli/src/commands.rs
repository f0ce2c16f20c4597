use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spikealign::ctc::{self, AlignmentMode};
use spikealign::label_sim::{self, LabelMode};
use spikealign::tensor_io::{self, Tensor};
use spikealign::toy::{self, ToyConfig};
use spikealign::transducer::{self, AdditiveScorer};
use spikealign::{framewise, metrics};
use spikealign::{
    DecodeResult, Error, ExpansionConfig, LabelRecord, LogitMatrix, Manifest,
    Matrix, TransducerLattice, UtteranceRecord,
};

use crate::{Cli, Command, Inputs};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config; nothing was read.
    Usage(String),
    Data(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(e) if e.is_numerical() => 3,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Data(e) => e.fmt(f),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(e: impl fmt::Display) -> Outcome<T> {
    Err(Failure::Usage(e.to_string()))
}

fn parse_flag<T: std::str::FromStr<Err = Error>>(value: &str) -> Outcome<T> {
    value.parse().or_else(usage)
}

fn expansion(left: f64, right: f64) -> Outcome<ExpansionConfig> {
    ExpansionConfig::new(left, right).or_else(usage)
}

/// Output files must land in an existing directory and must not overwrite
/// an input.
fn check_output(out: &Path, inputs: &[&Path]) -> Outcome {
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return usage(format!("output directory {} does not exist", parent.display()));
    }
    let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    if inputs.iter().any(|i| canon(i) == canon(out)) {
        return usage(format!("refusing to overwrite input {}", out.display()));
    }
    Ok(())
}

fn check_inputs(paths: &[&Path]) -> Outcome {
    for p in paths {
        if !p.is_file() {
            return usage(format!("input file {} not found", p.display()));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

fn read_matrix(manifest: &Manifest, record: &UtteranceRecord, key: &str) -> spikealign::Result<LogitMatrix> {
    let t = tensor_io::read_tensor(manifest.tensor_path(record, key)?)?;
    if t.rank() != 2 || t.dims[0] != record.num_frames {
        return Err(Error::Shape(format!(
            "{}: `{key}` tensor is {:?}, expected [{}, V]",
            record.id, t.dims, record.num_frames
        )));
    }
    LogitMatrix::new(t.dims[0], t.dims[1], t.to_f64())
}

/// Runs `f` on every manifest record in parallel, keeping manifest order.
fn per_utterance<T: Send>(
    manifest: &Manifest,
    f: impl Fn(&UtteranceRecord) -> spikealign::Result<T> + Sync + Send,
) -> spikealign::Result<Vec<T>> {
    manifest.records.par_iter().map(f).collect()
}

/// `losses.tsv` plus one gradient tensor per utterance under `grad/`.
fn write_losses(out_dir: &Path, rows: &[(String, f64, Vec<usize>, Vec<f64>)]) -> Outcome<f64> {
    let grad_dir = out_dir.join("grad");
    create_dir(&grad_dir)?;
    let mut table = String::from("id\tloss\n");
    for (id, loss, dims, grad) in rows {
        table.push_str(&format!("{id}\t{loss:.9}\n"));
        let t = Tensor::from_f64(dims.clone(), grad)?;
        tensor_io::write_tensor(grad_dir.join(format!("{id}.bin")), &t.dims, &t.values)?;
    }
    let path = out_dir.join("losses.tsv");
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    let losses: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(framewise::batch_mean(&losses)?)
}

pub fn run(cli: Cli) -> Outcome {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return usage("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .or_else(usage)?;
    }
    match cli.command {
        Command::CtcLoss { inputs, out_dir } => ctc_loss(&inputs, &out_dir),
        Command::CtcAlign { inputs, alignment, out } => {
            let mode: AlignmentMode = parse_flag(&alignment)?;
            let cfg = expansion(0.0, 0.0)?;
            simulate(&inputs, cfg, LabelMode::Hard, mode, &out, "ctc-align")
        }
        Command::SimulateLabels {
            inputs,
            r_left,
            r_right,
            mode,
            alignment,
            out,
        } => {
            let cfg = expansion(r_left, r_right)?;
            let mode: LabelMode = parse_flag(&mode)?;
            let alignment: AlignmentMode = parse_flag(&alignment)?;
            simulate(&inputs, cfg, mode, alignment, &out, "simulate-labels")
        }
        Command::PretrainLoss { inputs, labels, out_dir } => pretrain_loss(&inputs, &labels, &out_dir),
        Command::RnntLoss { inputs, out_dir } => rnnt_loss(&inputs, &out_dir),
        Command::Decode {
            inputs,
            bigram,
            beam,
            greedy,
            max_symbols,
            out,
        } => decode(&inputs, bigram.as_deref(), beam, greedy, max_symbols, &out),
        Command::Wer { hyp, reference, out } => wer(&hyp, &reference, &out),
        Command::Latency {
            decodes,
            manifest,
            frame_ms,
            out,
        } => latency(&decodes, &manifest, frame_ms, &out),
        Command::ToyRun {
            config,
            seed,
            seeds,
            out_dir,
        } => toy_run(config.as_deref(), seed, seeds, &out_dir),
    }
}

fn ctc_loss(inputs: &Inputs, out_dir: &Path) -> Outcome {
    check_inputs(&[&inputs.manifest])?;
    let manifest = tensor_io::read_manifest(&inputs.manifest)?;
    let rows = per_utterance(&manifest, |r| {
        let logits = read_matrix(&manifest, r, &inputs.key)?;
        let (loss, grad) = ctc::ctc_loss_grad(&logits, &r.tokens)?;
        Ok((r.id.clone(), loss, vec![grad.rows(), grad.cols()], grad.into_vec()))
    })?;
    let mean = write_losses(out_dir, &rows)?;
    println!("ctc-loss: {} utterances, mean loss {mean:.6} -> {}", rows.len(), out_dir.display());
    Ok(())
}

fn simulate(
    inputs: &Inputs,
    cfg: ExpansionConfig,
    mode: LabelMode,
    alignment: AlignmentMode,
    out: &Path,
    name: &str,
) -> Outcome {
    check_inputs(&[&inputs.manifest])?;
    check_output(out, &[&inputs.manifest])?;
    let manifest = tensor_io::read_manifest(&inputs.manifest)?;
    let results = per_utterance(&manifest, |r| {
        let logits = read_matrix(&manifest, r, &inputs.key)?;
        let path = match ctc::ctc_align(&logits, &r.tokens, alignment) {
            Ok(p) => p,
            Err(e @ Error::Infeasible { .. }) => {
                log::warn!("{}: {e}; skipped", r.id);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        Ok(Some(LabelRecord {
            id: r.id.clone(),
            targets: label_sim::simulate(&path.segments, r.num_frames, &cfg, mode)?,
        }))
    })?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let records: Vec<LabelRecord> = results.into_iter().flatten().collect();
    tensor_io::write_label_records(out, &records)?;
    println!(
        "{name}: {} records, {skipped} skipped -> {}",
        records.len(),
        out.display()
    );
    Ok(())
}

fn pretrain_loss(inputs: &Inputs, labels: &Path, out_dir: &Path) -> Outcome {
    check_inputs(&[&inputs.manifest, labels])?;
    let manifest = tensor_io::read_manifest(&inputs.manifest)?;
    let records = tensor_io::read_label_records(labels)?;
    tensor_io::check_frame_counts(&records, &manifest)?;
    let rows = records
        .par_iter()
        .map(|rec| {
            let r = manifest
                .get(&rec.id)
                .ok_or_else(|| Error::MissingReference(rec.id.clone()))?;
            let logits = read_matrix(&manifest, r, &inputs.key)?;
            let (loss, grad) = framewise::framewise_loss_grad(&logits, &rec.targets)?;
            Ok((r.id.clone(), loss, vec![grad.rows(), grad.cols()], grad.into_vec()))
        })
        .collect::<spikealign::Result<Vec<_>>>()?;
    let mean = write_losses(out_dir, &rows)?;
    println!("pretrain-loss: {} utterances, mean loss {mean:.6} -> {}", rows.len(), out_dir.display());
    Ok(())
}

fn rnnt_loss(inputs: &Inputs, out_dir: &Path) -> Outcome {
    check_inputs(&[&inputs.manifest])?;
    let manifest = tensor_io::read_manifest(&inputs.manifest)?;
    let rows = per_utterance(&manifest, |r| {
        let t = tensor_io::read_tensor(manifest.tensor_path(r, &inputs.key)?)?;
        let want = [r.num_frames, r.tokens.len() + 1];
        if t.rank() != 3 || t.dims[..2] != want {
            return Err(Error::Shape(format!(
                "{}: `{}` tensor is {:?}, expected [{}, {}, V]",
                r.id, inputs.key, t.dims, want[0], want[1]
            )));
        }
        let lattice = TransducerLattice::new(t.dims[0], r.tokens.len(), t.dims[2], t.to_f64())?;
        let (loss, grad) = transducer::rnnt_loss_grad(&lattice, &r.tokens)?;
        Ok((r.id.clone(), loss, t.dims.clone(), grad))
    })?;
    let mean = write_losses(out_dir, &rows)?;
    println!("rnnt-loss: {} utterances, mean loss {mean:.6} -> {}", rows.len(), out_dir.display());
    Ok(())
}

fn decode(inputs: &Inputs, bigram: Option<&Path>, beam: usize, greedy: bool, max_symbols: usize, out: &Path) -> Outcome {
    if beam == 0 || max_symbols == 0 {
        return usage("--beam and --max-symbols must be at least 1");
    }
    check_inputs(&[&inputs.manifest])?;
    if let Some(b) = bigram {
        check_inputs(&[b])?;
    }
    check_output(out, &[&inputs.manifest])?;
    let manifest = tensor_io::read_manifest(&inputs.manifest)?;
    let table = match bigram {
        Some(p) => {
            let t = tensor_io::read_tensor(p)?;
            if t.rank() != 2 {
                return Err(Error::Shape(format!("bigram tensor is {:?}, expected [V, V]", t.dims)).into());
            }
            Some(Matrix::from_vec(t.dims[0], t.dims[1], t.to_f64())?)
        }
        None => None,
    };
    let results = per_utterance(&manifest, |r| {
        let logits = read_matrix(&manifest, r, &inputs.key)?;
        let zeros;
        let table = match &table {
            Some(t) => t,
            None => {
                zeros = Matrix::zeros(logits.vocab(), logits.vocab());
                &zeros
            }
        };
        let scorer = AdditiveScorer::new(&logits, table)?;
        let d = if greedy {
            transducer::greedy_decode(&scorer, r.num_frames, max_symbols)?
        } else {
            transducer::beam_decode(&scorer, r.num_frames, beam, max_symbols)?
        };
        Ok((r.id.clone(), d))
    })?;
    tensor_io::write_decode_records(out, &results)?;
    let tokens: usize = results.iter().map(|(_, d)| d.tokens.len()).sum();
    println!(
        "decode: {} utterances, {tokens} tokens ({}) -> {}",
        results.len(),
        if greedy { "greedy".to_string() } else { format!("beam {beam}") },
        out.display()
    );
    Ok(())
}

fn wer(hyp: &Path, reference: &Path, out: &Path) -> Outcome {
    check_inputs(&[hyp, reference])?;
    check_output(out, &[hyp, reference])?;
    let hyps = crate::transcript::read_transcripts(hyp)?;
    let refs = crate::transcript::read_transcripts(reference)?;
    if let Some((id, _)) = hyps.iter().find(|(id, _)| !refs.iter().any(|(r, _)| r == id)) {
        return Err(Error::MissingReference(id.clone()).into());
    }
    let pairs = refs
        .into_iter()
        .map(|(id, words)| {
            let h = hyps.iter().find(|(h, _)| *h == id).map(|(_, w)| w.clone()).unwrap_or_default();
            (h, words)
        })
        .collect::<Vec<_>>();
    let result = metrics::corpus_wer(&pairs)?;
    write_json(out, &result)?;
    let c = result.counts;
    println!(
        "wer: {:.2}% (S={} I={} D={}) over {} words",
        100.0 * result.rate,
        c.substitutions,
        c.insertions,
        c.deletions,
        result.reference_words
    );
    Ok(())
}

fn latency(decodes: &Path, manifest_path: &Path, frame_ms: f64, out: &Path) -> Outcome {
    if !(frame_ms > 0.0 && frame_ms.is_finite()) {
        return usage("--frame-ms must be positive");
    }
    check_inputs(&[decodes, manifest_path])?;
    check_output(out, &[decodes, manifest_path])?;
    let manifest = tensor_io::read_manifest(manifest_path)?;
    let decoded = tensor_io::read_decode_records(decodes)?;
    let pairs = decoded
        .iter()
        .map(|(id, d)| {
            let r = manifest.get(id).ok_or_else(|| Error::MissingReference(id.clone()))?;
            Ok((d, r))
        })
        .collect::<spikealign::Result<Vec<(&DecodeResult, &UtteranceRecord)>>>()?;
    let report = metrics::emission_latency(&pairs, frame_ms)?;
    write_json(out, &report)?;
    let ms = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.1} ms"));
    println!(
        "latency: EL@50 {}, EL@90 {} over {} words from {}/{} exact utterances",
        ms(report.el50),
        ms(report.el90),
        report.per_word.len(),
        report.num_utts_used,
        report.num_utts_total
    );
    Ok(())
}

fn toy_run(config: Option<&Path>, seed: Option<u64>, seeds: Vec<u64>, out_dir: &Path) -> Outcome {
    let cfg = match config {
        Some(p) => {
            check_inputs(&[p])?;
            // anything but a read failure is a bad config
            ToyConfig::load(p).map_err(|e| match e {
                Error::Io { .. } => Failure::Data(e),
                other => Failure::Usage(other.to_string()),
            })?
        }
        None => ToyConfig::default(),
    };
    cfg.validate().or_else(usage)?;
    let seeds = match (seed, seeds.is_empty()) {
        (Some(s), _) => vec![s],
        (None, false) => seeds,
        (None, true) => vec![cfg.seed],
    };
    create_dir(out_dir)?;
    let used: PathBuf = out_dir.join("config.toml");
    std::fs::write(&used, cfg.to_toml_string()).map_err(|e| Error::io(&used, e))?;
    let report = toy::run_comparison(&cfg, &seeds, Some(out_dir))?;
    print!("{}", report.to_text());
    Ok(())
}
