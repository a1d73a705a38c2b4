//! WAV decoding, dataset indexing and seeded train/test splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fnv1a, SplitMix64};

pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;
pub const MANIFEST_VERSION: u32 = 1;

/// Mono PCM audio with samples normalised to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        if samples.iter().any(|s| s.abs() > 1.0) {
            return Err(Error::InvalidParameter("waveform samples must lie in [-1, 1]".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::MalformedWav(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => {
            Error::UnsupportedCodec(format!("{}: unsupported WAV feature", path.display()))
        }
        other => Error::MalformedWav(format!("{}: {other}", path.display())),
    }
}

/// Decodes a 16-bit PCM WAV file. Sample `i` is `raw_i / 32768`.
///
/// Multi-channel files are accepted with a warning and reduced to channel 0.
pub fn decode_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedCodec(format!(
            "{}: {:?} {}-bit (only PCM 16-bit is supported)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav(format!("{}: zero channels", path.display())));
    }
    if channels > 1 {
        warn!(
            "{} has {channels} channels, using channel 0 only",
            path.display()
        );
    }
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.into_samples::<i16>().enumerate() {
        let s = s.map_err(|e| map_hound(path, e))?;
        if i % channels == 0 {
            samples.push(s as f32 / 32768.0);
        }
    }
    Ok(Waveform {
        samples,
        sample_rate_hz: spec.sample_rate,
    })
}

/// Writes a mono 16-bit PCM WAV. Samples are scaled by 32768, rounded and
/// saturated, so decoding a previously decoded file reproduces it exactly.
pub fn encode_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &wave.samples {
        let raw = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(raw).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MachineType {
    Fan,
    Pump,
    Slider,
    Valve,
}

impl MachineType {
    pub const ALL: [MachineType; 4] = [Self::Fan, Self::Pump, Self::Slider, Self::Valve];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fan => "fan",
            Self::Pump => "pump",
            Self::Slider => "slider",
            Self::Valve => "valve",
        }
    }
}

impl fmt::Display for MachineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MachineType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fan" => Ok(Self::Fan),
            "pump" => Ok(Self::Pump),
            "slider" => Ok(Self::Slider),
            "valve" => Ok(Self::Valve),
            _ => Err(Error::InvalidParameter(format!("unknown machine type {s:?}"))),
        }
    }
}

/// Product model within a machine type. Directories `id_00`..`id_06` map to
/// `M0`..`M6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MachineId {
    M0,
    M2,
    M4,
    M6,
}

impl MachineId {
    pub const ALL: [MachineId; 4] = [Self::M0, Self::M2, Self::M4, Self::M6];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::M0 => "M0",
            Self::M2 => "M2",
            Self::M4 => "M4",
            Self::M6 => "M6",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Self::M0 => "id_00",
            Self::M2 => "id_02",
            Self::M4 => "id_04",
            Self::M6 => "id_06",
        }
    }

    pub fn from_dir_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.dir_name() == s)
    }
}

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MachineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .or_else(|| Self::from_dir_name(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown machine id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "anomalous" | "abnormal" => Ok(Self::Anomalous),
            _ => Err(Error::InvalidParameter(format!("unknown label {s:?}"))),
        }
    }
}

/// One (machine type, machine id) dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub machine_type: MachineType,
    pub machine_id: MachineId,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.machine_type, self.machine_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordingMeta {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub machine_type: MachineType,
    pub machine_id: MachineId,
    pub label: Label,
    pub snr_tag: String,
}

impl RecordingMeta {
    pub fn group(&self) -> GroupKey {
        GroupKey {
            machine_type: self.machine_type,
            machine_id: self.machine_id,
        }
    }

    /// Parses `<...>/<machine_type>/<id_XX>/<normal|abnormal>/<file>.wav`.
    /// The label comes only from the parent directory name.
    pub fn from_relative_path(rel: &str) -> Result<Self> {
        let parts: Vec<&str> = rel.split('/').filter(|p| !p.is_empty()).collect();
        let layout_err = |reason: &str| Error::Layout {
            path: PathBuf::from(rel),
            reason: reason.to_string(),
        };
        if parts.len() < 4 {
            return Err(layout_err(
                "expected <machine_type>/<id>/<normal|abnormal>/<file>.wav",
            ));
        }
        let n = parts.len();
        let label = match parts[n - 2] {
            "normal" => Label::Normal,
            "abnormal" => Label::Anomalous,
            _ => return Err(layout_err("label directory must be `normal` or `abnormal`")),
        };
        let machine_id = MachineId::from_dir_name(parts[n - 3])
            .ok_or_else(|| layout_err("machine id directory must be one of id_00, id_02, id_04, id_06"))?;
        let machine_type: MachineType = parts[n - 4]
            .parse()
            .map_err(|_| layout_err("unknown machine type directory"))?;
        let snr_tag = parts[..n - 4]
            .iter()
            .rev()
            .find_map(|p| parse_snr_tag(p))
            .unwrap_or_default();
        Ok(Self {
            path: rel.to_string(),
            machine_type,
            machine_id,
            label,
            snr_tag,
        })
    }
}

/// Extracts an SNR tag such as `-6dB` from directory names like `-6_dB_fan`.
fn parse_snr_tag(component: &str) -> Option<String> {
    let pos = component.find("dB")?;
    let head = component[..pos].trim_end_matches('_');
    let start = head
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '-' || *c == '+')
        .last()
        .map(|(i, _)| i)?;
    let num = &head[start..];
    if num.chars().any(|c| c.is_ascii_digit()) {
        Some(format!("{num}dB"))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by path, no duplicates.
    pub entries: Vec<RecordingMeta>,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, mut entries: Vec<RecordingMeta>) -> Self {
        entries.sort();
        entries.dedup_by(|a, b| a.path == b.path);
        Self {
            root: root.into(),
            entries,
        }
    }

    pub fn absolute_path(&self, meta: &RecordingMeta) -> PathBuf {
        self.root.join(&meta.path)
    }

    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<&RecordingMeta>> {
        let mut out: BTreeMap<GroupKey, Vec<&RecordingMeta>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.group()).or_default().push(e);
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&RecordingMeta) -> bool) -> Self {
        Self {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn relative_slash_path(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<String> = rel
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect();
    Some(parts.join("/"))
}

/// Indexes every `.wav` file below `root`.
pub fn index_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let is_wav = entry
            .path()
            .extension()
            .map(|x| x.eq_ignore_ascii_case("wav"))
            .unwrap_or(false);
        if !is_wav {
            continue;
        }
        let rel = relative_slash_path(root, entry.path()).ok_or_else(|| Error::Layout {
            path: entry.path().to_path_buf(),
            reason: "not below dataset root".into(),
        })?;
        entries.push(RecordingMeta::from_relative_path(&rel)?);
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(DatasetIndex::new(root, entries))
}

/// Per (machine type, id): draws `n_test_normal` normal clips and up to the
/// same number of anomalous clips into the test set; the remaining normal
/// clips form the training set. Anomalous clips never enter training.
pub fn split_train_test(
    index: &DatasetIndex,
    seed: u64,
    n_test_normal: usize,
) -> Result<(DatasetIndex, DatasetIndex)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (group, clips) in index.groups() {
        let mut normal: Vec<&RecordingMeta> =
            clips.iter().copied().filter(|c| c.label == Label::Normal).collect();
        let mut anomalous: Vec<&RecordingMeta> =
            clips.iter().copied().filter(|c| c.label == Label::Anomalous).collect();
        if normal.len() < n_test_normal {
            return Err(Error::InsufficientNormal {
                group: group.to_string(),
                available: normal.len(),
                required: n_test_normal,
            });
        }
        let mut rng = SplitMix64::new(seed ^ fnv1a(group.to_string().as_bytes()));
        rng.shuffle(&mut normal);
        rng.shuffle(&mut anomalous);
        let n_anom = n_test_normal.min(anomalous.len());
        test.extend(normal[..n_test_normal].iter().map(|m| (*m).clone()));
        test.extend(anomalous[..n_anom].iter().map(|m| (*m).clone()));
        train.extend(normal[n_test_normal..].iter().map(|m| (*m).clone()));
    }
    Ok((
        DatasetIndex::new(&index.root, train),
        DatasetIndex::new(&index.root, test),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub meta: RecordingMeta,
    pub split: Split,
    pub seed: Option<u64>,
}

/// Line-oriented clip manifest.
///
/// ```text
/// manifest_version: 1
/// root: <dataset root>
/// path<TAB>machine_type<TAB>machine_id<TAB>label<TAB>snr<TAB>split<TAB>seed
/// fan/id_00/normal/00000000.wav<TAB>fan<TAB>M0<TAB>normal<TAB>-6dB<TAB>train<TAB>0
/// ```
///
/// `seed` is `-` for unsplit entries, `snr` is `-` when unknown. Records are
/// sorted by path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_COLUMNS: &str = "path\tmachine_type\tmachine_id\tlabel\tsnr\tsplit\tseed";

impl Manifest {
    pub fn unsplit(index: &DatasetIndex) -> Self {
        Self {
            root: index.root.clone(),
            entries: index
                .entries
                .iter()
                .map(|m| ManifestEntry {
                    meta: m.clone(),
                    split: Split::All,
                    seed: None,
                })
                .collect(),
        }
    }

    /// Manifest covering the train and test clips of one seeded split.
    /// Clips excluded from both (surplus anomalies) are omitted.
    pub fn from_split(train: &DatasetIndex, test: &DatasetIndex, seed: u64) -> Self {
        let mut entries: Vec<ManifestEntry> = train
            .entries
            .iter()
            .map(|m| (m, Split::Train))
            .chain(test.entries.iter().map(|m| (m, Split::Test)))
            .map(|(m, split)| ManifestEntry {
                meta: m.clone(),
                split,
                seed: Some(seed),
            })
            .collect();
        entries.sort_by(|a, b| a.meta.path.cmp(&b.meta.path));
        Self {
            root: train.root.clone(),
            entries,
        }
    }

    pub fn index(&self) -> DatasetIndex {
        DatasetIndex::new(
            &self.root,
            self.entries.iter().map(|e| e.meta.clone()).collect(),
        )
    }

    pub fn select(&self, split: Split) -> DatasetIndex {
        DatasetIndex::new(
            &self.root,
            self.entries
                .iter()
                .filter(|e| split == Split::All || e.split == split)
                .map(|e| e.meta.clone())
                .collect(),
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "manifest_version: {MANIFEST_VERSION}")?;
        writeln!(w, "root: {}", self.root.display())?;
        writeln!(w, "{MANIFEST_COLUMNS}")?;
        for e in &self.entries {
            let m = &e.meta;
            let snr = if m.snr_tag.is_empty() { "-" } else { &m.snr_tag };
            let seed = e.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.path,
                m.machine_type,
                m.machine_id,
                m.label,
                snr,
                e.split.as_str(),
                seed
            )?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Truncated(format!("manifest missing {what}")))?
                .map_err(|e| Error::io(path, e))
        };
        let version = next("version line")?;
        let version = version
            .strip_prefix("manifest_version:")
            .ok_or_else(|| Error::Format("manifest must start with `manifest_version:`".into()))?
            .trim()
            .parse::<u32>()
            .map_err(|e| Error::Format(format!("manifest version: {e}")))?;
        if version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let root = next("root line")?;
        let root = root
            .strip_prefix("root:")
            .ok_or_else(|| Error::Format("manifest missing `root:` line".into()))?
            .trim()
            .to_string();
        if next("column header")? != MANIFEST_COLUMNS {
            return Err(Error::Format("unexpected manifest column header".into()));
        }
        let mut entries = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(Error::Format(format!("manifest record has {} fields: {line}", cols.len())));
            }
            let meta = RecordingMeta {
                path: cols[0].to_string(),
                machine_type: cols[1].parse()?,
                machine_id: cols[2].parse()?,
                label: cols[3].parse()?,
                snr_tag: if cols[4] == "-" { String::new() } else { cols[4].to_string() },
            };
            let seed = match cols[6] {
                "-" => None,
                s => Some(
                    s.parse::<u64>()
                        .map_err(|e| Error::Format(format!("manifest seed {s:?}: {e}")))?,
                ),
            };
            entries.push(ManifestEntry {
                meta,
                split: cols[5].parse()?,
                seed,
            });
        }
        Ok(Self {
            root: PathBuf::from(root),
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(path: &str) -> RecordingMeta {
        RecordingMeta::from_relative_path(path).unwrap()
    }

    #[test]
    fn parses_layout() {
        let m = meta("fan/id_00/normal/a.wav");
        assert_eq!(
            (m.machine_type, m.machine_id, m.label),
            (MachineType::Fan, MachineId::M0, Label::Normal)
        );
        let m = meta("valve/id_06/abnormal/b.wav");
        assert_eq!(
            (m.machine_type, m.machine_id, m.label),
            (MachineType::Valve, MachineId::M6, Label::Anomalous)
        );
        assert_eq!(meta("-6_dB_fan/fan/id_02/normal/c.wav").snr_tag, "-6dB");
        assert_eq!(meta("6dB_pump/pump/id_02/normal/c.wav").snr_tag, "6dB");
        assert_eq!(meta("pump/id_04/normal/c.wav").snr_tag, "");
    }

    #[test]
    fn rejects_unknown_ids_and_labels() {
        assert!(RecordingMeta::from_relative_path("fan/id_01/normal/a.wav").is_err());
        assert!(RecordingMeta::from_relative_path("fan/id_00/weird/a.wav").is_err());
        assert!(RecordingMeta::from_relative_path("drill/id_00/normal/a.wav").is_err());
        assert!(RecordingMeta::from_relative_path("id_00/normal/a.wav").is_err());
    }

    fn synthetic_index(normal: usize, anomalous: usize) -> DatasetIndex {
        let mut entries = Vec::new();
        for i in 0..normal {
            entries.push(meta(&format!("slider/id_00/normal/{i:05}.wav")));
        }
        for i in 0..anomalous {
            entries.push(meta(&format!("slider/id_00/abnormal/{i:05}.wav")));
        }
        DatasetIndex::new("/data", entries)
    }

    #[test]
    fn split_counts() {
        let index = synthetic_index(1000, 300);
        let (train, test) = split_train_test(&index, 0, 150).unwrap();
        assert_eq!(train.len(), 850);
        assert!(train.entries.iter().all(|e| e.label == Label::Normal));
        let test_normal = test.entries.iter().filter(|e| e.label == Label::Normal).count();
        assert_eq!((test_normal, test.len() - test_normal), (150, 150));
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let index = synthetic_index(400, 200);
        let a = split_train_test(&index, 3, 150).unwrap();
        let b = split_train_test(&index, 3, 150).unwrap();
        assert_eq!(a, b);
        let c = split_train_test(&index, 4, 150).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn split_caps_anomalies_at_available() {
        // counting oracle: 200 available, 150 requested -> 150 drawn, 50 unused
        let index = synthetic_index(400, 200);
        let (train, test) = split_train_test(&index, 9, 150).unwrap();
        let drawn = test
            .entries
            .iter()
            .filter(|e| e.label == Label::Anomalous)
            .count();
        let unused = index
            .entries
            .iter()
            .filter(|e| e.label == Label::Anomalous)
            .filter(|e| !test.entries.contains(e) && !train.entries.contains(e))
            .count();
        assert_eq!((drawn, unused), (150, 50));

        let few = synthetic_index(400, 40);
        let (_, test) = split_train_test(&few, 9, 150).unwrap();
        assert_eq!(test.len(), 190);
    }

    #[test]
    fn insufficient_normal_is_an_error() {
        let index = synthetic_index(100, 10);
        assert!(matches!(
            split_train_test(&index, 0, 150),
            Err(Error::InsufficientNormal { available: 100, .. })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let index = synthetic_index(20, 5);
        let (train, test) = split_train_test(&index, 1, 5).unwrap();
        let manifest = Manifest::from_split(&train, &test, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        manifest.write(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.select(Split::Train), train);
        assert_eq!(back.select(Split::Test), test);
    }

    #[test]
    fn snr_tag_parsing() {
        assert_eq!(parse_snr_tag("-6_dB_fan").as_deref(), Some("-6dB"));
        assert_eq!(parse_snr_tag("0_dB_valve").as_deref(), Some("0dB"));
        assert_eq!(parse_snr_tag("fan"), None);
        assert_eq!(parse_snr_tag("dB"), None);
    }
}
