//! Power STFT and dB-scaled Mel spectrograms.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    /// Reflect-pad `n_fft / 2` samples on both sides so frame `t` is centred
    /// on sample `t * hop`.
    pub center: bool,
    pub sample_rate_hz: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            center: true,
            sample_rate_hz: PIPELINE_SAMPLE_RATE,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_fft must be a power of two, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidParameter(format!(
                "hop must be in 1..={}, got {}",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if self.center {
            len / self.hop + 1
        } else if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// `|X[k, t]|^2`, shape `[n_fft/2 + 1, frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub values: Array2<f64>,
    pub config: StftConfig,
}

impl PowerSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Reflects `i` into `0..len` the way numpy's `reflect` pad mode does,
/// repeating the mirror for pads longer than the signal.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

pub fn stft_power(wave: &Waveform, cfg: &StftConfig) -> Result<PowerSpectrogram> {
    cfg.validate()?;
    if wave.samples.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    if wave.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("waveform samples"));
    }
    if wave.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::SampleRate {
            found: wave.sample_rate_hz,
            expected: cfg.sample_rate_hz,
        });
    }
    let n_fft = cfg.n_fft;
    let len = wave.samples.len();
    let padded: Vec<f64> = if cfg.center {
        let pad = (n_fft / 2) as isize;
        (-pad..len as isize + pad)
            .map(|i| wave.samples[reflect_index(i, len)] as f64)
            .collect()
    } else {
        wave.samples.iter().map(|&s| s as f64).collect()
    };
    let n_frames = cfg.n_frames(len);
    if n_frames == 0 {
        return Err(Error::NotEnoughSamples {
            required: n_fft,
            found: len,
        });
    }
    let n_bins = cfg.n_bins();
    let window = hann_periodic(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Array2::<f64>::zeros((n_bins, n_frames));
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(padded[start + k] * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..n_bins {
            values[[k, t]] = buf[k].norm_sqr();
        }
    }
    Ok(PowerSpectrogram {
        values,
        config: *cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    Slaney,
    Htk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelNorm {
    /// Divide each triangle by its bandwidth in Hz (constant energy per band).
    Slaney,
    None,
}

const SLANEY_F_SP: f64 = 200.0 / 3.0;
const SLANEY_MIN_LOG_HZ: f64 = 1000.0;

fn slaney_logstep() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
        MelScale::Slaney => {
            if hz >= SLANEY_MIN_LOG_HZ {
                SLANEY_MIN_LOG_HZ / SLANEY_F_SP + (hz / SLANEY_MIN_LOG_HZ).ln() / slaney_logstep()
            } else {
                hz / SLANEY_F_SP
            }
        }
    }
}

pub fn mel_to_hz(mel: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
        MelScale::Slaney => {
            let min_log_mel = SLANEY_MIN_LOG_HZ / SLANEY_F_SP;
            if mel >= min_log_mel {
                SLANEY_MIN_LOG_HZ * (slaney_logstep() * (mel - min_log_mel)).exp()
            } else {
                SLANEY_F_SP * mel
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub scale: MelScale,
    pub norm: MelNorm,
    pub top_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            f_min: 0.0,
            f_max: 8000.0,
            scale: MelScale::Slaney,
            norm: MelNorm::Slaney,
            top_db: 80.0,
        }
    }
}

/// Triangular filters, shape `[n_mels, n_fft/2 + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub f_min: f64,
    pub f_max: f64,
    pub scale: MelScale,
}

pub fn build_mel_filterbank(
    sample_rate_hz: u32,
    n_fft: usize,
    cfg: &MelConfig,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max && cfg.f_max <= nyquist) {
        return Err(Error::InvalidParameter(format!(
            "mel range must satisfy 0 <= f_min < f_max <= {nyquist}, got [{}, {}]",
            cfg.f_min, cfg.f_max
        )));
    }
    if cfg.n_mels == 0 {
        return Err(Error::InvalidParameter("n_mels must be positive".into()));
    }
    let n_bins = n_fft / 2 + 1;
    let fft_freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate_hz as f64 / n_fft as f64)
        .collect();
    let mel_lo = hz_to_mel(cfg.f_min, cfg.scale);
    let mel_hi = hz_to_mel(cfg.f_max, cfg.scale);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| {
            let m = mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64;
            mel_to_hz(m, cfg.scale)
        })
        .collect();
    let mut weights = Array2::<f64>::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = match cfg.norm {
            MelNorm::Slaney => 2.0 / (hi - lo),
            MelNorm::None => 1.0,
        };
        for (k, &f) in fft_freqs.iter().enumerate() {
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            let w = rising.min(falling).max(0.0);
            weights[[m, k]] = w * enorm;
        }
    }
    Ok(MelFilterbank {
        weights,
        f_min: cfg.f_min,
        f_max: cfg.f_max,
        scale: cfg.scale,
    })
}

pub const AMIN: f64 = 1e-10;

/// dB Mel spectrogram referenced to its own maximum: the peak is 0 dB and
/// everything is clamped to `[-top_db, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// Shape `[n_mels, frames]`.
    pub values_db: Array2<f64>,
    /// `10 log10` of the per-clip maximum Mel power.
    pub ref_db: f64,
    pub top_db: f64,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values_db.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values_db.ncols()
    }
}

/// Projects power onto the Mel filters without any dB conversion.
pub fn mel_power(power: &PowerSpectrogram, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if fb.weights.ncols() != power.values.nrows() {
        return Err(Error::DimensionMismatch {
            expected: fb.weights.ncols(),
            found: power.values.nrows(),
        });
    }
    Ok(fb.weights.dot(&power.values))
}

pub fn mel_db(power: &PowerSpectrogram, fb: &MelFilterbank, top_db: f64) -> Result<MelSpectrogram> {
    if !(top_db > 0.0) {
        return Err(Error::InvalidParameter("top_db must be positive".into()));
    }
    let mel = mel_power(power, fb)?;
    Ok(power_to_db(&mel, top_db))
}

pub(crate) fn power_to_db(mel: &Array2<f64>, top_db: f64) -> MelSpectrogram {
    let peak = mel.iter().copied().fold(0.0f64, f64::max);
    let ref_db = 10.0 * peak.max(AMIN).log10();
    let values_db = mel.mapv(|v| (10.0 * v.max(AMIN).log10() - ref_db).max(-top_db));
    MelSpectrogram {
        values_db,
        ref_db,
        top_db,
    }
}

/// Mel front end with a cached filterbank.
#[derive(Debug, Clone)]
pub struct MelFrontEnd {
    pub stft: StftConfig,
    pub mel: MelConfig,
    filterbank: MelFilterbank,
}

impl MelFrontEnd {
    pub fn new(stft: StftConfig, mel: MelConfig) -> Result<Self> {
        stft.validate()?;
        let filterbank = build_mel_filterbank(stft.sample_rate_hz, stft.n_fft, &mel)?;
        Ok(Self {
            stft,
            mel,
            filterbank,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn process(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let power = stft_power(wave, &self.stft)?;
        mel_db(&power, &self.filterbank, self.mel.top_db)
    }
}

const MEL_DUMP_MAGIC: &[u8; 4] = b"MELS";

/// Debug dump: `MELS`, u32 rows, u32 cols, row-major little-endian f32.
pub fn write_mel_dump(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MEL_DUMP_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(mel.n_mels() as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(mel.n_frames() as u32).map_err(io)?;
    for &v in mel.values_db.iter() {
        w.write_f32::<LittleEndian>(v as f32).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_mel_dump(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Truncated("mel dump header".into()))?;
    if &magic != MEL_DUMP_MAGIC {
        return Err(Error::BadMagic { expected: "MELS" });
    }
    let trunc = |_| Error::Truncated("mel dump".into());
    let rows = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut data = vec![0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(trunc)?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}
