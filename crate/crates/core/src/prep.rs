//! Dataset preparation: slice recordings into one-bar loops at downbeats,
//! stretch each bar to the target tempo and render a fixed-size mel tensor.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio_io::{self, AudioClip, CANONICAL_RATE};
use crate::dsp::{self, MelSpectrogram, N_MELS};
use crate::error::{Error, Result};
use crate::par;
use crate::tensorio::{self, Tensor};

/// Frames kept per bar.
pub const FIXED_FRAMES: usize = 320;
pub const MIN_BPM: f64 = 30.0;
pub const MAX_BPM: f64 = 480.0;
pub const BEATS_PER_BAR: u32 = 4;
/// Samples in a 120 BPM four-beat bar at 44.1 kHz.
pub const BAR_SAMPLES: usize = 88_200;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub sample_rate: u32,
    pub target_bpm: f64,
    pub bar_beats: u32,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            sample_rate: CANONICAL_RATE,
            target_bpm: 120.0,
            bar_beats: BEATS_PER_BAR,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.bar_beats == 0 || !(self.target_bpm > 0.0) {
            return Err(Error::invalid(format!("invalid preparation config {self:?}")));
        }
        Ok(())
    }

    /// Bar length in samples at the target tempo.
    pub fn bar_samples(&self) -> usize {
        (self.bar_beats as f64 * 60.0 / self.target_bpm * self.sample_rate as f64).round() as usize
    }

    /// Seconds per bar at `bpm`.
    pub fn bar_period(&self, bpm: f64) -> f64 {
        self.bar_beats as f64 * 60.0 / bpm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownbeatAnnotation {
    pub source_path: String,
    pub downbeat_times: Vec<f64>,
}

impl DownbeatAnnotation {
    /// Checks ordering and range against a clip of `duration` seconds.
    /// The final downbeat may sit exactly at the end of the clip.
    pub fn validate(&self, duration: f64) -> Result<()> {
        let t = &self.downbeat_times;
        if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "{}: downbeat times must be finite and non-negative",
                self.source_path
            )));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "{}: downbeat times must be strictly increasing",
                self.source_path
            )));
        }
        if let Some(&last) = t.last() {
            if last > duration + 1e-6 {
                return Err(Error::invalid(format!(
                    "{}: downbeat at {last}s beyond clip duration {duration}s",
                    self.source_path
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Implied tempo outside [30, 480] BPM.
    TempoRange,
    /// Stretch ratio outside [0.25, 4].
    StretchRatio,
    /// Annotation file given but no entry for this recording.
    NoAnnotation,
    /// Recording shorter than one bar.
    TooShort,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::TempoRange => "tempo_range",
            DropReason::StretchRatio => "stretch_ratio",
            DropReason::NoAnnotation => "no_annotation",
            DropReason::TooShort => "too_short",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedBar {
    pub bar_index: usize,
    pub clip: AudioClip,
    pub original_bpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedBar {
    pub bar_index: usize,
    pub original_bpm: Option<f64>,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SliceOutcome {
    pub bars: Vec<SlicedBar>,
    pub dropped: Vec<DroppedBar>,
}

/// One bar per consecutive pair of four-beat downbeats.
pub fn slice_bars(clip: &AudioClip, annotation: &DownbeatAnnotation) -> Result<SliceOutcome> {
    slice_bars_with_beats(clip, annotation, BEATS_PER_BAR)
}

pub fn slice_bars_with_beats(
    clip: &AudioClip,
    annotation: &DownbeatAnnotation,
    bar_beats: u32,
) -> Result<SliceOutcome> {
    clip.validate()?;
    let times = &annotation.downbeat_times;
    if times.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need at least 2 downbeats, got {}",
            annotation.source_path,
            times.len()
        )));
    }
    annotation.validate(clip.duration())?;
    let sr = clip.sample_rate as f64;
    let n = clip.len();
    let mut out = SliceOutcome::default();
    for (bar_index, w) in times.windows(2).enumerate() {
        let bpm = bar_beats as f64 * 60.0 / (w[1] - w[0]);
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            out.dropped.push(DroppedBar {
                bar_index,
                original_bpm: Some(bpm),
                reason: DropReason::TempoRange,
            });
            continue;
        }
        let start = ((w[0] * sr).round() as usize).min(n);
        let end = ((w[1] * sr).round() as usize).min(n);
        if end <= start {
            out.dropped.push(DroppedBar {
                bar_index,
                original_bpm: Some(bpm),
                reason: DropReason::TooShort,
            });
            continue;
        }
        out.bars.push(SlicedBar {
            bar_index,
            clip: AudioClip {
                samples: clip.samples[start..end].to_vec(),
                sample_rate: clip.sample_rate,
                source_path: clip.source_path.clone(),
            },
            original_bpm: bpm,
        });
    }
    Ok(out)
}

/// Downbeats every four beats at `bpm`, starting at `offset`.
pub fn grid_slice(clip: &AudioClip, bpm: f64, offset: f64) -> Result<DownbeatAnnotation> {
    grid_slice_with_beats(clip, bpm, offset, BEATS_PER_BAR)
}

pub fn grid_slice_with_beats(
    clip: &AudioClip,
    bpm: f64,
    offset: f64,
    bar_beats: u32,
) -> Result<DownbeatAnnotation> {
    clip.validate()?;
    let duration = clip.duration();
    if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
        return Err(Error::invalid(format!("grid tempo {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
    }
    if !(0.0..duration).contains(&offset) {
        return Err(Error::invalid(format!("grid offset {offset} outside [0, {duration})")));
    }
    let period = bar_beats as f64 * 60.0 / bpm;
    let downbeat_times = (0..)
        .map(|k| offset + k as f64 * period)
        .take_while(|&t| t < duration)
        .collect();
    Ok(DownbeatAnnotation {
        source_path: clip
            .source_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
        downbeat_times,
    })
}

/// Stretches a bar to the 2-second, 120 BPM length.
pub fn normalize_bar(bar: &AudioClip) -> Result<AudioClip> {
    normalize_bar_with(bar, &PrepConfig::default())
}

pub fn normalize_bar_with(bar: &AudioClip, config: &PrepConfig) -> Result<AudioClip> {
    dsp::time_stretch(bar, config.bar_samples())
}

/// Mel spectrogram of a normalized bar, cropped to 320 frames.
pub fn render_fixed_mel(bar: &AudioClip) -> Result<MelSpectrogram> {
    render_fixed_mel_with(bar, &PrepConfig::default())
}

pub fn render_fixed_mel_with(bar: &AudioClip, config: &PrepConfig) -> Result<MelSpectrogram> {
    let expected = config.bar_samples();
    if bar.len() != expected {
        return Err(Error::invalid(format!(
            "fixed mel rendering expects {expected} samples, got {}",
            bar.len()
        )));
    }
    dsp::mel_spectrogram(bar)?.crop_frames(FIXED_FRAMES)
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tensor_file: Option<String>,
    pub origin: String,
    pub bar_index: usize,
    pub original_bpm: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub files: usize,
    pub bars_written: usize,
    pub dropped: BTreeMap<String, usize>,
    pub entries: Vec<ManifestEntry>,
}

impl PrepSummary {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Reads `path,downbeat_seconds` rows grouped by path.
pub fn read_annotations(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "downbeat_seconds" {
        return Err(Error::format(path, "expected header `path,downbeat_seconds`"));
    }
    let mut out: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let t: f64 = record[1]
            .parse()
            .map_err(|_| Error::format(path, format!("row {}: bad time {:?}", i + 1, &record[1])))?;
        out.entry(record[0].to_string()).or_default().push(t);
    }
    for times in out.values_mut() {
        times.sort_by(f64::total_cmp);
    }
    Ok(out)
}

fn list_wavs(input_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(input_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(input_dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        let is_wav = entry
            .path()
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"));
        if entry.file_type().is_file() && is_wav {
            files.push(entry.into_path());
        }
    }
    files.sort();
    Ok(files)
}

fn relative_id(input_dir: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(input_dir).unwrap_or(file);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn lookup_annotation<'a>(
    annotations: &'a HashMap<String, Vec<f64>>,
    input_dir: &Path,
    file: &Path,
    rel: &str,
) -> Option<&'a Vec<f64>> {
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned());
    let joined = input_dir.join(rel).display().to_string();
    [Some(rel.to_string()), Some(file.display().to_string()), Some(joined), name]
        .into_iter()
        .flatten()
        .find_map(|key| annotations.get(&key))
}

enum SliceSource<'a> {
    Annotation(&'a [f64]),
    Grid(f64),
    Missing,
}

struct FileResult {
    entries: Vec<ManifestEntry>,
}

fn process_file(
    file: &Path,
    rel: &str,
    source: SliceSource<'_>,
    out_dir: &Path,
    config: &PrepConfig,
) -> Result<FileResult> {
    let clip = audio_io::resample(&audio_io::read_wav(file)?, config.sample_rate)?;
    let dropped_file = |reason: DropReason| FileResult {
        entries: vec![ManifestEntry {
            tensor_file: None,
            origin: rel.to_string(),
            bar_index: 0,
            original_bpm: None,
            status: format!("dropped:{}", reason.as_str()),
        }],
    };

    let annotation = match source {
        SliceSource::Missing => return Ok(dropped_file(DropReason::NoAnnotation)),
        SliceSource::Annotation(times) => DownbeatAnnotation {
            source_path: rel.to_string(),
            downbeat_times: times.to_vec(),
        },
        SliceSource::Grid(bpm) => {
            let mut grid = grid_slice_with_beats(&clip, bpm, 0.0, config.bar_beats)?;
            // close the last bar when a full period still fits in the clip
            let period = config.bar_period(bpm);
            if let Some(&last) = grid.downbeat_times.last() {
                let end = last + period;
                if end * config.sample_rate as f64 <= clip.len() as f64 + 0.5 {
                    grid.downbeat_times.push(end);
                }
            }
            grid
        }
    };
    if annotation.downbeat_times.len() < 2 {
        return Ok(dropped_file(DropReason::TooShort));
    }

    let sliced = slice_bars_with_beats(&clip, &annotation, config.bar_beats)?;
    let stem = rel
        .strip_suffix(".wav")
        .or_else(|| rel.strip_suffix(".WAV"))
        .unwrap_or(rel)
        .replace('/', "__");

    let mut entries: Vec<ManifestEntry> = sliced
        .dropped
        .iter()
        .map(|d| ManifestEntry {
            tensor_file: None,
            origin: rel.to_string(),
            bar_index: d.bar_index,
            original_bpm: d.original_bpm,
            status: format!("dropped:{}", d.reason.as_str()),
        })
        .collect();

    let target = config.bar_samples();
    for bar in &sliced.bars {
        let ratio = target as f64 / bar.clip.len() as f64;
        if !(dsp::MIN_STRETCH..=dsp::MAX_STRETCH).contains(&ratio) || (ratio != 1.0 && bar.clip.len() < 2048) {
            entries.push(ManifestEntry {
                tensor_file: None,
                origin: rel.to_string(),
                bar_index: bar.bar_index,
                original_bpm: Some(bar.original_bpm),
                status: format!("dropped:{}", DropReason::StretchRatio.as_str()),
            });
            continue;
        }
        let normalized = normalize_bar_with(&bar.clip, config)?;
        let mel = render_fixed_mel_with(&normalized, config)?;
        let name = format!("{stem}_bar{:04}.lten", bar.bar_index);
        tensorio::write_tensor(out_dir.join(&name), &Tensor::from_matrix(&mel.values))?;
        entries.push(ManifestEntry {
            tensor_file: Some(name),
            origin: rel.to_string(),
            bar_index: bar.bar_index,
            original_bpm: Some(bar.original_bpm),
            status: "ok".to_string(),
        });
    }
    entries.sort_by_key(|e| e.bar_index);
    Ok(FileResult { entries })
}

/// Prepares every WAV under `input_dir` into `out_dir`: one LTEN mel tensor
/// per kept bar plus `manifest.json`. Bars are sliced from the annotation
/// file when one covers the recording, otherwise on a fixed grid at
/// `grid_bpm` (or the target tempo when no grid tempo is given and no
/// annotation file is used).
pub fn prepare_dataset(
    input_dir: &Path,
    annotations: Option<&Path>,
    grid_bpm: Option<f64>,
    out_dir: &Path,
    config: &PrepConfig,
) -> Result<PrepSummary> {
    config.validate()?;
    if let Some(bpm) = grid_bpm {
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            return Err(Error::invalid(format!("grid tempo {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
        }
    }
    let files = list_wavs(input_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no WAV files under {}", input_dir.display())));
    }
    let table = annotations.map(read_annotations).transpose()?;
    let fallback_bpm = match (&table, grid_bpm) {
        (_, Some(bpm)) => Some(bpm),
        (None, None) => Some(config.target_bpm),
        (Some(_), None) => None,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(PathBuf, String)> = files
        .into_iter()
        .map(|f| {
            let rel = relative_id(input_dir, &f);
            (f, rel)
        })
        .collect();
    let results = par::try_map(&jobs, |(file, rel)| {
        let source = match table
            .as_ref()
            .and_then(|t| lookup_annotation(t, input_dir, file, rel))
        {
            Some(times) => SliceSource::Annotation(times),
            None => match fallback_bpm {
                Some(bpm) => SliceSource::Grid(bpm),
                None => SliceSource::Missing,
            },
        };
        process_file(file, rel, source, out_dir, config)
    })?;

    let entries: Vec<ManifestEntry> = results.into_iter().flat_map(|r| r.entries).collect();
    let mut dropped = BTreeMap::new();
    for e in &entries {
        if let Some(reason) = e.status.strip_prefix("dropped:") {
            *dropped.entry(reason.to_string()).or_insert(0) += 1;
        }
    }
    let summary = PrepSummary {
        files: jobs.len(),
        bars_written: entries.iter().filter(|e| e.status == "ok").count(),
        dropped,
        entries,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&summary.entries).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(summary)
}

/// A prepared mel tensor with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBar {
    pub id: String,
    pub mel: MelSpectrogram,
}

/// Lists the tensor files of a prepared directory: the manifest's kept bars
/// in manifest order, or every `.lten` file sorted by name.
pub fn prepared_tensor_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::format(&manifest, e.to_string()))?;
        return Ok(entries
            .into_iter()
            .filter(|e| e.status == "ok")
            .filter_map(|e| e.tensor_file)
            .map(|f| dir.join(f))
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lten"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every prepared 80×320 tensor from `dir`.
pub fn load_prepared(dir: &Path) -> Result<Vec<PreparedBar>> {
    let files = prepared_tensor_files(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no prepared tensors in {}", dir.display())));
    }
    par::try_map(&files, |path| {
        let values = tensorio::read_tensor(path)?
            .to_matrix()
            .map_err(|e| Error::format(path, e.to_string()))?;
        if values.shape() != (N_MELS, FIXED_FRAMES) {
            return Err(Error::format(
                path,
                format!("expected {N_MELS}x{FIXED_FRAMES} tensor, got {}x{}", values.rows(), values.cols()),
            ));
        }
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(PreparedBar {
            mel: MelSpectrogram {
                values,
                sample_rate: CANONICAL_RATE,
                frame_spec: dsp::StftFrameSpec::default(),
                source_id: id.clone(),
            },
            id,
        })
    })
}
