//! Labeled byte samples: directory ingestion, the synthetic family generator,
//! and the corpus manifest.
//!
//! Corpus directories follow one layout: a root holding a `benign/`
//! subdirectory plus one subdirectory per malware family. Files inside are
//! treated as opaque byte strings.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, Cursor, Read};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, fisher_yates, rng_from, tag, SeededRng};

/// Reserved family name carried by every benign sample.
pub const BENIGN_FAMILY: &str = "benign";

/// Default per-file size above which ingestion streams instead of reading into memory.
pub const DEFAULT_SIZE_CAP: u64 = 64 * 1024 * 1024;

pub const MANIFEST_FORMAT: &str = "bytegram-corpus-manifest";
pub const SYNTH_SPEC_FORMAT: &str = "bytegram-synth-spec";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malware,
}

impl Label {
    /// Class sign used by the learners: +1 malware, -1 benign.
    pub fn sign(self) -> i8 {
        match self {
            Label::Malware => 1,
            Label::Benign => -1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Malware => "malware",
            Label::Benign => "benign",
        }
    }

    pub fn from_sign(sign: i8) -> Option<Label> {
        match sign {
            1 => Some(Label::Malware),
            -1 => Some(Label::Benign),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Synthetic {
        corpus_seed: u64,
        family: String,
        index: usize,
    },
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::File(p) => write!(f, "{}", p.display()),
            Source::Synthetic {
                corpus_seed,
                family,
                index,
            } => write!(f, "synthetic:seed={corpus_seed}:family={family}:index={index}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Payload {
    Memory(Vec<u8>),
    Streamed { path: PathBuf, len: u64 },
}

/// A labeled, non-empty byte sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    id: String,
    label: Label,
    family: String,
    payload: Payload,
    source: Source,
}

fn check_label_family(label: Label, family: &str) -> Result<()> {
    if (label == Label::Benign) != (family == BENIGN_FAMILY) {
        return Err(Error::contract(format!(
            "label {label:?} is inconsistent with family {family:?}"
        )));
    }
    Ok(())
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        family: impl Into<String>,
        bytes: Vec<u8>,
        source: Source,
    ) -> Result<Sample> {
        let family = family.into();
        check_label_family(label, &family)?;
        if bytes.is_empty() {
            return Err(Error::contract("sample bytes must be non-empty"));
        }
        Ok(Sample {
            id: id.into(),
            label,
            family,
            payload: Payload::Memory(bytes),
            source,
        })
    }

    /// A sample whose bytes stay on disk and are read on demand.
    pub fn streamed(
        id: impl Into<String>,
        label: Label,
        family: impl Into<String>,
        path: PathBuf,
        len: u64,
    ) -> Result<Sample> {
        let family = family.into();
        check_label_family(label, &family)?;
        if len == 0 {
            return Err(Error::contract("sample bytes must be non-empty"));
        }
        Ok(Sample {
            id: id.into(),
            label,
            family,
            source: Source::File(path.clone()),
            payload: Payload::Streamed { path, len },
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn len(&self) -> u64 {
        match &self.payload {
            Payload::Memory(b) => b.len() as u64,
            Payload::Streamed { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-memory bytes, or `None` for samples above the ingestion size cap.
    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.payload {
            Payload::Memory(b) => Some(b),
            Payload::Streamed { .. } => None,
        }
    }

    pub fn open(&self) -> Result<Box<dyn Read + Send + '_>> {
        match &self.payload {
            Payload::Memory(b) => Ok(Box::new(Cursor::new(b.as_slice()))),
            Payload::Streamed { path, .. } => {
                let f = fs::File::open(path).map_err(|source| Error::Ingestion {
                    path: path.clone(),
                    source,
                })?;
                Ok(Box::new(BufReader::new(f)))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub size_cap: u64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            size_cap: DEFAULT_SIZE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct ScanReport {
    pub samples: Vec<Sample>,
    pub warnings: Vec<ScanWarning>,
}

/// Ingest every regular file of `path`, ordered by file name.
pub fn scan_directory(
    path: &Path,
    label: Label,
    family: &str,
    opts: &ScanOptions,
) -> Result<ScanReport> {
    check_label_family(label, family)?;
    let ingest = |source| Error::Ingestion {
        path: path.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(ingest)? {
        let entry = entry.map_err(ingest)?;
        let p = entry.path();
        // fs::metadata follows symlinks, so linked files count as regular files
        let meta = fs::metadata(&p).map_err(|source| Error::Ingestion {
            path: p.clone(),
            source,
        })?;
        if meta.is_file() {
            files.push((entry.file_name(), p, meta.len()));
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let loaded: Vec<Result<std::result::Result<Sample, ScanWarning>>> = files
        .into_par_iter()
        .map(|(name, p, len)| {
            if len == 0 {
                return Ok(Err(ScanWarning {
                    path: p,
                    reason: "zero-byte file skipped".into(),
                }));
            }
            let id = format!("{family}/{}", name.to_string_lossy());
            if len > opts.size_cap {
                return Sample::streamed(id, label, family, p, len).map(Ok);
            }
            let bytes = fs::read(&p).map_err(|source| Error::Ingestion {
                path: p.clone(),
                source,
            })?;
            if bytes.is_empty() {
                return Ok(Err(ScanWarning {
                    path: p,
                    reason: "zero-byte file skipped".into(),
                }));
            }
            Sample::new(id, label, family, bytes, Source::File(p)).map(Ok)
        })
        .collect();

    let mut report = ScanReport::default();
    for item in loaded {
        match item? {
            Ok(s) => report.samples.push(s),
            Err(w) => {
                log::warn!("{}: {}", w.path.display(), w.reason);
                report.warnings.push(w);
            }
        }
    }
    Ok(report)
}

/// Ingest a corpus root: `benign/` plus one subdirectory per family, families
/// in lexicographic order. Loose files in the root are ignored.
pub fn scan_corpus_root(root: &Path, opts: &ScanOptions) -> Result<ScanReport> {
    let ingest = |source| Error::Ingestion {
        path: root.to_path_buf(),
        source,
    };
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(ingest)? {
        let entry = entry.map_err(ingest)?;
        if entry.file_type().map_err(ingest)?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    if !dirs.iter().any(|d| d != BENIGN_FAMILY) {
        return Err(Error::config(format!(
            "{} contains no family subdirectories",
            root.display()
        )));
    }
    let mut report = ScanReport::default();
    for d in dirs {
        let label = if d == BENIGN_FAMILY {
            Label::Benign
        } else {
            Label::Malware
        };
        let part = scan_directory(&root.join(&d), label, &d, opts)?;
        report.samples.extend(part.samples);
        report.warnings.extend(part.warnings);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasNgram {
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub weight: f64,
}

/// Parameters of one synthetic family.
///
/// `separation` scales how often a bias n-gram replaces a background byte;
/// at 0 the family is indistinguishable from benign background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFamilySpec {
    pub name: String,
    pub bias_ngrams: Vec<BiasNgram>,
    pub background_seed: u64,
    pub length_range: (usize, usize),
    pub separation: f64,
}

/// Probability of emitting a bias n-gram at each step when `separation == 1`.
pub const MAX_BIAS_RATE: f64 = 0.5;

impl SynthFamilySpec {
    fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == BENIGN_FAMILY {
            return Err(Error::config(format!("invalid family name {:?}", self.name)));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return Err(Error::config(format!(
                "family {}: invalid length range ({lo}, {hi})",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(Error::config(format!(
                "family {}: separation {} outside [0, 1]",
                self.name, self.separation
            )));
        }
        if self.separation > 0.0 && self.bias_ngrams.is_empty() {
            return Err(Error::config(format!(
                "family {}: positive separation needs at least one bias n-gram",
                self.name
            )));
        }
        for b in &self.bias_ngrams {
            if b.bytes.is_empty() || !(b.weight.is_finite() && b.weight > 0.0) {
                return Err(Error::config(format!(
                    "family {}: bias n-grams need non-empty bytes and positive weight",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Generator parameters; also the on-disk synthetic spec document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub seed: u64,
    pub per_family: usize,
    pub n_benign: usize,
    pub families: Vec<SynthFamilySpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCount {
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub families: Vec<FamilyCount>,
    pub n_benign: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorParams>,
}

impl CorpusManifest {
    pub fn new(families: Vec<FamilyCount>, n_benign: usize, generator: Option<GeneratorParams>) -> Self {
        CorpusManifest {
            format: MANIFEST_FORMAT.into(),
            version: FORMAT_VERSION,
            families,
            n_benign,
            generator,
        }
    }

    /// Counts per family (first-appearance order) and benign total.
    pub fn from_samples(samples: &[Sample], generator: Option<GeneratorParams>) -> Self {
        let mut families: Vec<FamilyCount> = Vec::new();
        let mut n_benign = 0;
        for s in samples {
            if s.label == Label::Benign {
                n_benign += 1;
                continue;
            }
            match families.iter_mut().find(|f| f.name == s.family) {
                Some(f) => f.count += 1,
                None => families.push(FamilyCount {
                    name: s.family.clone(),
                    count: 1,
                }),
            }
        }
        CorpusManifest::new(families, n_benign, generator)
    }

    pub fn family_names(&self) -> Vec<String> {
        self.families.iter().map(|f| f.name.clone()).collect()
    }

    fn validate(&self, origin: &str) -> Result<()> {
        if self.format != MANIFEST_FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::parse(
                origin,
                1,
                format!("unsupported manifest {} v{}", self.format, self.version),
            ));
        }
        let mut seen = BTreeSet::new();
        for f in &self.families {
            if f.count == 0 {
                return Err(Error::config(format!("family {} has zero samples", f.name)));
            }
            if !seen.insert(&f.name) {
                return Err(Error::config(format!("family {} listed twice", f.name)));
            }
        }
        Ok(())
    }
}

fn json_error(origin: &str, e: serde_json::Error) -> Error {
    Error::parse(origin, e.line(), e.to_string())
}

pub fn manifest_to_string(manifest: &CorpusManifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn manifest_from_str(text: &str, origin: &str) -> Result<CorpusManifest> {
    let m: CorpusManifest = serde_json::from_str(text).map_err(|e| json_error(origin, e))?;
    m.validate(origin)?;
    Ok(m)
}

pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    crate::write_atomic(path, manifest_to_string(manifest).as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path).map_err(|source| Error::Ingestion {
        path: path.to_path_buf(),
        source,
    })?;
    manifest_from_str(&text, &path.display().to_string())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSpecDoc {
    format: String,
    version: u32,
    #[serde(flatten)]
    params: GeneratorParams,
}

pub fn save_synth_spec(params: &GeneratorParams, path: &Path) -> Result<()> {
    let doc = SynthSpecDoc {
        format: SYNTH_SPEC_FORMAT.into(),
        version: FORMAT_VERSION,
        params: params.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("spec serializes");
    s.push('\n');
    crate::write_atomic(path, s.as_bytes())
}

pub fn load_synth_spec(path: &Path) -> Result<GeneratorParams> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| Error::Ingestion {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: SynthSpecDoc = serde_json::from_str(&text).map_err(|e| json_error(&origin, e))?;
    if doc.format != SYNTH_SPEC_FORMAT || doc.version != FORMAT_VERSION {
        return Err(Error::parse(origin, 1, "unsupported synthetic spec format"));
    }
    Ok(doc.params)
}

/// Shared background byte distribution: a seeded permutation of the 256 byte
/// values with harmonic (Zipf, s = 1) integer weights. Integer weights keep
/// sampling identical across platforms.
#[derive(Clone, Debug)]
pub struct Background {
    symbols: [u8; 256],
    cumulative: [u64; 256],
}

impl Background {
    pub fn from_seed(corpus_seed: u64) -> Background {
        let mut symbols: Vec<u8> = (0..=255u8).collect();
        fisher_yates(&mut symbols, &mut rng_from(derive_seed(corpus_seed, &[tag("background")])));
        let mut cumulative = [0u64; 256];
        let mut acc = 0u64;
        for (rank, c) in cumulative.iter_mut().enumerate() {
            acc += (1u64 << 20) / (rank as u64 + 1);
            *c = acc;
        }
        Background {
            symbols: symbols.try_into().expect("256 symbols"),
            cumulative,
        }
    }

    pub fn draw(&self, rng: &mut SeededRng) -> u8 {
        let total = self.cumulative[255];
        let u = rng.gen_range(0..total);
        let rank = self.cumulative.partition_point(|&c| c <= u);
        self.symbols[rank]
    }

    /// Byte value at the given frequency rank (0 = most frequent).
    pub fn symbol_at_rank(&self, rank: usize) -> u8 {
        self.symbols[rank]
    }
}

fn synth_bytes(
    background: &Background,
    spec: Option<&SynthFamilySpec>,
    length_range: (usize, usize),
    rng: &mut SeededRng,
) -> Vec<u8> {
    let len = rng.gen_range(length_range.0 as u64..=length_range.1 as u64) as usize;
    let mut out = Vec::with_capacity(len + 8);
    let (rate, bias, total_weight) = match spec {
        Some(s) => (
            s.separation * MAX_BIAS_RATE,
            s.bias_ngrams.as_slice(),
            s.bias_ngrams.iter().map(|b| b.weight).sum::<f64>(),
        ),
        None => (0.0, &[][..], 0.0),
    };
    while out.len() < len {
        // family streams draw the coin even at rate 0 so the byte stream
        // structure does not depend on separation
        let emit_bias = spec.is_some() && rng.gen::<f64>() < rate;
        if emit_bias {
            let mut pick = rng.gen::<f64>() * total_weight;
            let mut chosen = &bias[bias.len() - 1];
            for b in bias {
                if pick < b.weight {
                    chosen = b;
                    break;
                }
                pick -= b.weight;
            }
            out.extend_from_slice(&chosen.bytes);
        } else {
            out.push(background.draw(rng));
        }
    }
    out.truncate(len);
    out
}

/// Generate `per_family` samples for every spec plus `n_benign` background-only
/// samples. Output is a pure function of the arguments.
///
/// Benign lengths are drawn from the union of the family length ranges.
pub fn generate_synthetic(
    specs: &[SynthFamilySpec],
    per_family: usize,
    n_benign: usize,
    seed: u64,
) -> Result<(Vec<Sample>, CorpusManifest)> {
    if per_family == 0 {
        return Err(Error::config("per_family must be at least 1"));
    }
    if specs.is_empty() {
        return Err(Error::config("at least one family spec is required"));
    }
    let mut names = BTreeSet::new();
    for s in specs {
        s.validate()?;
        if !names.insert(s.name.as_str()) {
            return Err(Error::config(format!("duplicate family name {}", s.name)));
        }
    }
    let background = Background::from_seed(seed);
    let benign_range = (
        specs.iter().map(|s| s.length_range.0).min().unwrap_or(1),
        specs.iter().map(|s| s.length_range.1).max().unwrap_or(1),
    );

    let jobs: Vec<(Option<&SynthFamilySpec>, usize)> = specs
        .iter()
        .flat_map(|s| (0..per_family).map(move |i| (Some(s), i)))
        .chain((0..n_benign).map(|i| (None, i)))
        .collect();

    let samples = jobs
        .into_par_iter()
        .map(|(spec, index)| {
            let (family, label, stream_seed, range) = match spec {
                Some(s) => (
                    s.name.as_str(),
                    Label::Malware,
                    derive_seed(seed, &[tag("family"), tag(&s.name), s.background_seed, index as u64]),
                    s.length_range,
                ),
                None => (
                    BENIGN_FAMILY,
                    Label::Benign,
                    derive_seed(seed, &[tag(BENIGN_FAMILY), index as u64]),
                    benign_range,
                ),
            };
            let bytes = synth_bytes(&background, spec, range, &mut rng_from(stream_seed));
            Sample::new(
                format!("{family}-{index:05}"),
                label,
                family,
                bytes,
                Source::Synthetic {
                    corpus_seed: seed,
                    family: family.to_string(),
                    index,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let params = GeneratorParams {
        seed,
        per_family,
        n_benign,
        families: specs.to_vec(),
    };
    let manifest = CorpusManifest::from_samples(&samples, Some(params));
    Ok((samples, manifest))
}

/// `count` families named `family-00`, `family-01`, ... each with three
/// random 6-byte bias n-grams of weights 3, 2, 1.
pub fn default_family_specs(
    count: usize,
    separation: f64,
    length_range: (usize, usize),
    seed: u64,
) -> Vec<SynthFamilySpec> {
    let mut rng = rng_from(derive_seed(seed, &[tag("default-specs")]));
    (0..count)
        .map(|i| SynthFamilySpec {
            name: format!("family-{i:02}"),
            bias_ngrams: (0..3)
                .map(|j| BiasNgram {
                    bytes: (0..6).map(|_| rng.gen::<u8>()).collect(),
                    weight: f64::from(3 - j),
                })
                .collect(),
            background_seed: i as u64,
            length_range,
            separation,
        })
        .collect()
}

/// Write samples under `dir/<family>/<id>.bin` plus `dir/manifest.json`.
pub fn write_corpus(samples: &[Sample], manifest: &CorpusManifest, dir: &Path) -> Result<()> {
    samples.par_iter().try_for_each(|s| -> Result<()> {
        let fam_dir = dir.join(s.family());
        fs::create_dir_all(&fam_dir)?;
        let name = s.id().rsplit('/').next().unwrap_or(s.id());
        let mut bytes = Vec::with_capacity(s.len() as usize);
        s.open()?.read_to_end(&mut bytes)?;
        fs::write(fam_dir.join(format!("{name}.bin")), bytes)?;
        Ok(())
    })?;
    save_manifest(manifest, &dir.join("manifest.json"))
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, separation: f64) -> SynthFamilySpec {
        SynthFamilySpec {
            name: name.into(),
            bias_ngrams: vec![BiasNgram {
                bytes: vec![0xde, 0xad],
                weight: 1.0,
            }],
            background_seed: 3,
            length_range: (500, 900),
            separation,
        }
    }

    #[test]
    fn scan_orders_by_name_and_skips_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.exe"), b"bb").unwrap();
        fs::write(dir.path().join("a.exe"), b"a").unwrap();
        fs::write(dir.path().join("z.exe"), b"").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        let r = scan_directory(dir.path(), Label::Malware, "fam", &ScanOptions::default()).unwrap();
        let ids: Vec<_> = r.samples.iter().map(|s| s.id()).collect();
        assert_eq!(ids, ["fam/a.exe", "fam/b.exe"]);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].path.ends_with("z.exe"));
    }

    #[test]
    fn scan_empty_and_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        let r = scan_directory(dir.path(), Label::Benign, BENIGN_FAMILY, &ScanOptions::default()).unwrap();
        assert!(r.samples.is_empty());
        let missing = scan_directory(
            &dir.path().join("nope"),
            Label::Benign,
            BENIGN_FAMILY,
            &ScanOptions::default(),
        );
        assert!(matches!(missing, Err(Error::Ingestion { .. })));
    }

    #[test]
    fn scan_streams_files_above_cap() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("big"), vec![7u8; 100]).unwrap();
        let r = scan_directory(dir.path(), Label::Malware, "f", &ScanOptions { size_cap: 10 }).unwrap();
        let s = &r.samples[0];
        assert!(s.bytes().is_none());
        assert_eq!(s.len(), 100);
        let mut buf = Vec::new();
        s.open().unwrap().read_to_end(&mut buf).unwrap();
        assert_eq!(buf, vec![7u8; 100]);
    }

    #[test]
    fn sample_invariants() {
        assert!(Sample::new("x", Label::Benign, "fam", vec![1], Source::File("x".into())).is_err());
        assert!(Sample::new("x", Label::Malware, BENIGN_FAMILY, vec![1], Source::File("x".into())).is_err());
        assert!(Sample::new("x", Label::Malware, "fam", vec![], Source::File("x".into())).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let specs = [spec("a", 0.7)];
        let (s1, m1) = generate_synthetic(&specs, 3, 2, 7).unwrap();
        let (s2, m2) = generate_synthetic(&specs, 3, 2, 7).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(m1, m2);
        assert_eq!(s1.len(), 5);
        assert_eq!(m1.families, vec![FamilyCount { name: "a".into(), count: 3 }]);
        assert_eq!(m1.n_benign, 2);
        let (s3, _) = generate_synthetic(&specs, 3, 2, 8).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        assert!(generate_synthetic(&[spec("a", 0.5), spec("a", 0.5)], 1, 0, 1).is_err());
        assert!(generate_synthetic(&[spec("a", 0.5)], 0, 0, 1).is_err());
        assert!(generate_synthetic(&[spec("a", 1.5)], 1, 0, 1).is_err());
        assert!(generate_synthetic(&[spec(BENIGN_FAMILY, 0.5)], 1, 0, 1).is_err());
    }

    #[test]
    fn lengths_respect_range() {
        let (samples, _) = generate_synthetic(&[spec("a", 0.3)], 20, 5, 1).unwrap();
        for s in &samples {
            assert!((500..=900).contains(&s.len()), "{}", s.len());
        }
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let (_, m) = generate_synthetic(&[spec("a", 0.3), spec("b", 0.1)], 2, 1, 5).unwrap();
        let text = manifest_to_string(&m);
        assert_eq!(manifest_from_str(&text, "m").unwrap(), m);
        let cut = &text[..text.len() / 2];
        match manifest_from_str(cut, "m") {
            Err(Error::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let zero = CorpusManifest::new(vec![FamilyCount { name: "x".into(), count: 0 }], 0, None);
        assert!(manifest_from_str(&manifest_to_string(&zero), "m").is_err());
    }

    #[test]
    fn full_scale_manifest_counts() {
        let families = (0..20)
            .map(|i| FamilyCount {
                name: format!("f{i}"),
                count: 1000,
            })
            .collect();
        let m = CorpusManifest::new(families, 1000, None);
        let back = manifest_from_str(&manifest_to_string(&m), "m").unwrap();
        assert_eq!(back.families.len(), 20);
        assert!(back.families.iter().all(|f| f.count == 1000));
        assert_eq!(back.n_benign, 1000);
    }
}
