//! On-disk formats exchanged between pipeline stages.
//!
//! Tensor files (little-endian):
//! - magic: `SPKALN01` (8 bytes)
//! - rank: u32, one of 1, 2, 3
//! - dims: rank * u32
//! - payload: f32 * product(dims), row-major
//!
//! Label records are UTF-8 text, one utterance per line:
//! `id<TAB>0:tok[:prob] 1:tok[:prob] ...`. Hard records carry only token
//! indices; soft records carry a probability for every frame, written with
//! six decimals.
//!
//! Manifests are tab-separated `key=value` fields, one utterance per line:
//! `id<TAB>frames=T<TAB>tokens=3 5 2<TAB>words=w:0-1:12 ...<TAB>logits=path`.
//! Any key other than `frames`, `tokens` and `words` names a tensor path.
//!
//! Decode records: `id<TAB>tok@frame tok@frame ...`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::label_sim::{FrameLabels, SoftFrameLabels, SoftTarget};
use crate::transducer::DecodeResult;

pub const MAGIC: &[u8; 8] = b"SPKALN01";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        check_shape(&dims, values.len())?;
        Ok(Self { dims, values })
    }

    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }
}

fn check_shape(dims: &[usize], len: usize) -> Result<()> {
    if !(1..=3).contains(&dims.len()) {
        return Err(Error::BadRank(dims.len()));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::Shape(format!("dimension exceeds u32: {dims:?}")));
    }
    let numel: usize = dims.iter().product();
    if numel != len {
        return Err(Error::Shape(format!(
            "dims {dims:?} imply {numel} values, got {len}"
        )));
    }
    Ok(())
}

pub fn encode_tensor(dims: &[usize], values: &[f32]) -> Result<Vec<u8>> {
    check_shape(dims, values.len())?;
    let mut buf = Vec::with_capacity(12 + 4 * dims.len() + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    let mut pos = 8;
    let read_u32 = |pos: &mut usize| -> Result<usize> {
        let end = *pos + 4;
        let chunk = bytes.get(*pos..end).ok_or(Error::Truncated {
            expected: end,
            found: bytes.len(),
        })?;
        *pos = end;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()) as usize)
    };
    let rank = read_u32(&mut pos)?;
    if !(1..=3).contains(&rank) {
        return Err(Error::BadRank(rank));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(&mut pos)?);
    }
    let numel: usize = dims.iter().product();
    let expected = pos + numel * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let values = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, values })
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(dims, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Per-frame supervision carried by one label-record line.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameTargets {
    Hard(FrameLabels),
    Soft(SoftFrameLabels),
}

impl FrameTargets {
    pub fn len(&self) -> usize {
        match self {
            FrameTargets::Hard(h) => h.len(),
            FrameTargets::Soft(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub id: String,
    pub targets: FrameTargets,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::Invalid(format!("bad utterance id {id:?}")));
    }
    Ok(())
}

pub fn format_label_record(record: &LabelRecord) -> Result<String> {
    check_id(&record.id)?;
    let mut line = String::new();
    line.push_str(&record.id);
    line.push('\t');
    match &record.targets {
        FrameTargets::Hard(labels) => {
            for (t, tok) in labels.iter().enumerate() {
                if t > 0 {
                    line.push(' ');
                }
                write!(line, "{t}:{tok}").unwrap();
            }
        }
        FrameTargets::Soft(soft) => {
            for (t, target) in soft.iter().enumerate() {
                if !(0.0..=1.0).contains(&target.prob) {
                    return Err(Error::Probability(target.prob));
                }
                if t > 0 {
                    line.push(' ');
                }
                write!(line, "{t}:{}:{:.6}", target.token, target.prob).unwrap();
            }
        }
    }
    Ok(line)
}

pub fn parse_label_record(line: &str, file: &str, lineno: usize) -> Result<LabelRecord> {
    let err = |msg: String| Error::parse(file, lineno, msg);
    let (id, body) = line
        .split_once('\t')
        .ok_or_else(|| err("missing tab after utterance id".into()))?;
    if id.is_empty() {
        return Err(err("empty utterance id".into()));
    }
    let mut hard = Vec::new();
    let mut soft = Vec::new();
    for (t, entry) in body.split_whitespace().enumerate() {
        let mut parts = entry.split(':');
        let frame: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("bad frame index in {entry:?}")))?;
        if frame != t {
            return Err(err(format!("expected frame {t}, found {frame}")));
        }
        let token: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("bad token in {entry:?}")))?;
        match (parts.next(), parts.next()) {
            (None, _) => hard.push(token),
            (Some(p), None) => {
                let prob: f64 = p
                    .parse()
                    .map_err(|_| err(format!("bad probability in {entry:?}")))?;
                if !(0.0..=1.0).contains(&prob) {
                    return Err(err(format!("probability {prob} outside [0, 1]")));
                }
                soft.push(SoftTarget { token, prob });
            }
            _ => return Err(err(format!("too many fields in {entry:?}"))),
        }
    }
    let targets = match (hard.is_empty(), soft.is_empty()) {
        (false, true) => FrameTargets::Hard(FrameLabels::new(hard)),
        (true, false) => FrameTargets::Soft(SoftFrameLabels::new(soft)),
        (true, true) => return Err(err("record has no frames".into())),
        (false, false) => return Err(err("record mixes hard and soft entries".into())),
    };
    Ok(LabelRecord {
        id: id.to_string(),
        targets,
    })
}

pub fn write_label_records(path: impl AsRef<Path>, records: &[LabelRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format_label_record(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_label_records(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_record(l, &name, i + 1))
        .collect()
}

/// Checks that every record has exactly as many frames as its manifest entry.
pub fn check_frame_counts(records: &[LabelRecord], manifest: &Manifest) -> Result<()> {
    for r in records {
        let utt = manifest
            .get(&r.id)
            .ok_or_else(|| Error::MissingReference(r.id.clone()))?;
        if r.targets.len() != utt.num_frames {
            return Err(Error::Shape(format!(
                "{}: label record has {} frames, manifest says {}",
                r.id,
                r.targets.len(),
                utt.num_frames
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordBoundary {
    pub word: String,
    /// First and last token index (inclusive, 0-based) of the word.
    pub first_token: usize,
    pub last_token: usize,
    /// Reference frame (0-based) at which the word ends.
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub num_frames: usize,
    pub tokens: Vec<usize>,
    pub words: Option<Vec<WordBoundary>>,
    pub tensors: BTreeMap<String, PathBuf>,
}

impl UtteranceRecord {
    pub fn new(id: impl Into<String>, num_frames: usize, tokens: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            num_frames,
            tokens,
            words: None,
            tensors: BTreeMap::new(),
        }
    }

    /// Checks token range against a vocabulary (blank fixed at 0) and that
    /// word spans partition the token sequence.
    pub fn validate(&self, vocab: Option<usize>) -> Result<()> {
        check_id(&self.id)?;
        for &tok in &self.tokens {
            if tok == 0 {
                return Err(Error::BlankInLabels);
            }
            if let Some(v) = vocab {
                if tok >= v {
                    return Err(Error::LabelOutOfRange { label: tok, vocab: v });
                }
            }
        }
        if let Some(words) = &self.words {
            let mut next = 0;
            for w in words {
                if w.first_token != next || w.last_token < w.first_token {
                    return Err(Error::Shape(format!(
                        "{}: word spans do not partition the tokens",
                        self.id
                    )));
                }
                next = w.last_token + 1;
            }
            if next != self.tokens.len() {
                return Err(Error::Shape(format!(
                    "{}: word spans cover {next} of {} tokens",
                    self.id,
                    self.tokens.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    /// Directory relative tensor paths are resolved against.
    pub base_dir: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn tensor_path(&self, record: &UtteranceRecord, key: &str) -> Result<PathBuf> {
        let p = record.tensors.get(key).ok_or_else(|| {
            Error::Invalid(format!("utterance {} has no `{key}` tensor", record.id))
        })?;
        Ok(if p.is_absolute() {
            p.clone()
        } else {
            self.base_dir.join(p)
        })
    }
}

pub fn format_manifest_line(r: &UtteranceRecord) -> Result<String> {
    r.validate(None)?;
    let mut line = format!("{}\tframes={}\ttokens=", r.id, r.num_frames);
    let toks: Vec<String> = r.tokens.iter().map(|t| t.to_string()).collect();
    line.push_str(&toks.join(" "));
    if let Some(words) = &r.words {
        line.push_str("\twords=");
        for (i, w) in words.iter().enumerate() {
            if w.word.is_empty() || w.word.contains([':', ' ', '\t']) {
                return Err(Error::Invalid(format!("bad word {:?}", w.word)));
            }
            if i > 0 {
                line.push(' ');
            }
            write!(
                line,
                "{}:{}-{}:{}",
                w.word, w.first_token, w.last_token, w.end_frame
            )
            .unwrap();
        }
    }
    for (key, path) in &r.tensors {
        if matches!(key.as_str(), "frames" | "tokens" | "words") || key.contains(['=', '\t']) {
            return Err(Error::Invalid(format!("bad tensor key {key:?}")));
        }
        write!(line, "\t{key}={}", path.display()).unwrap();
    }
    Ok(line)
}

fn parse_word(entry: &str) -> Option<WordBoundary> {
    let mut parts = entry.rsplitn(3, ':');
    let end_frame = parts.next()?.parse().ok()?;
    let (a, b) = parts.next()?.split_once('-')?;
    let word = parts.next()?.to_string();
    Some(WordBoundary {
        word,
        first_token: a.parse().ok()?,
        last_token: b.parse().ok()?,
        end_frame,
    })
}

pub fn parse_manifest_line(line: &str, file: &str, lineno: usize) -> Result<UtteranceRecord> {
    let err = |msg: String| Error::parse(file, lineno, msg);
    let mut fields = line.split('\t');
    let id = fields.next().unwrap_or_default();
    if id.is_empty() {
        return Err(err("empty utterance id".into()));
    }
    let mut frames = None;
    let mut tokens = None;
    let mut words = None;
    let mut tensors = BTreeMap::new();
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("field {field:?} is not key=value")))?;
        match key {
            "frames" => {
                frames = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| err(format!("bad frame count {value:?}")))?,
                )
            }
            "tokens" => {
                tokens = Some(
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err(format!("bad token list {value:?}")))?,
                )
            }
            "words" => {
                words = Some(
                    value
                        .split_whitespace()
                        .map(|w| parse_word(w).ok_or_else(|| err(format!("bad word entry {w:?}"))))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            _ => {
                if tensors.insert(key.to_string(), PathBuf::from(value)).is_some() {
                    return Err(err(format!("duplicate key {key}")));
                }
            }
        }
    }
    let record = UtteranceRecord {
        id: id.to_string(),
        num_frames: frames.ok_or_else(|| err("missing frames=".into()))?,
        tokens: tokens.ok_or_else(|| err("missing tokens=".into()))?,
        words,
        tensors,
    };
    record
        .validate(None)
        .map_err(|e| err(e.to_string()))?;
    Ok(record)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format_manifest_line(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| parse_manifest_line(l, &name, i + 1))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate utterance id {}", r.id)));
        }
    }
    Ok(Manifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        records,
    })
}

pub fn format_decode_line(id: &str, result: &DecodeResult) -> Result<String> {
    check_id(id)?;
    let entries: Vec<String> = result
        .tokens
        .iter()
        .zip(&result.emission_frames)
        .map(|(tok, frame)| format!("{tok}@{frame}"))
        .collect();
    Ok(format!("{id}\t{}", entries.join(" ")))
}

pub fn parse_decode_line(line: &str, file: &str, lineno: usize) -> Result<(String, DecodeResult)> {
    let err = |msg: String| Error::parse(file, lineno, msg);
    let (id, body) = line
        .split_once('\t')
        .ok_or_else(|| err("missing tab after utterance id".into()))?;
    let mut result = DecodeResult::default();
    for entry in body.split_whitespace() {
        let (tok, frame) = entry
            .split_once('@')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| err(format!("bad decode entry {entry:?}")))?;
        if result.emission_frames.last().is_some_and(|&f| f > frame) {
            return Err(err("emission frames must be non-decreasing".into()));
        }
        result.tokens.push(tok);
        result.emission_frames.push(frame);
    }
    Ok((id.to_string(), result))
}

pub fn write_decode_records(path: impl AsRef<Path>, records: &[(String, DecodeResult)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, r) in records {
        out.push_str(&format_decode_line(id, r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_decode_records(path: impl AsRef<Path>) -> Result<Vec<(String, DecodeResult)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_decode_line(l, &name, i + 1))
        .collect()
}
