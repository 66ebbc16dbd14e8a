//! Shoebox room simulation by the image-source method, plus WAV I/O.
//!
//! All six walls share one pressure reflection coefficient `β`. Image
//! contributions `β^k / (4π d)` are placed at the nearest sample by default.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::geometry::{MicArray, Point};

/// Sabine's constant, s/m.
const SABINE: f64 = 0.161;

/// Level, relative to the first image, below which the series is truncated.
const TAIL_FLOOR: f64 = 1e-3;

/// Half-length of the windowed-sinc kernel used for fractional placement.
const SINC_HALF_TAPS: i64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reflection {
    /// Reverberation time in seconds, converted with Sabine's formula.
    T60(f64),
    /// Wall reflection coefficient in `[0, 1)`.
    Beta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayPlacement {
    #[default]
    Nearest,
    /// Hann-windowed sinc interpolation of fractional delays.
    Sinc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Length, width and height in meters; the room spans `[0, dims]`.
    pub dims: [f64; 3],
    pub reflection: Reflection,
    pub fs: f64,
    pub c: f64,
    /// Highest reflection order; derived from `β` when absent.
    #[serde(default)]
    pub max_order: Option<usize>,
    #[serde(default)]
    pub placement: DelayPlacement,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], reflection: Reflection, fs: f64, c: f64) -> Result<Self> {
        let room = Self { dims, reflection, fs, c, max_order: None, placement: DelayPlacement::Nearest };
        room.validate()?;
        Ok(room)
    }

    pub fn anechoic(dims: [f64; 3], fs: f64, c: f64) -> Result<Self> {
        Self::new(dims, Reflection::Beta(0.0), fs, c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidRoom(format!("dimensions {:?}", self.dims)));
        }
        if !(self.fs > 0.0 && self.c > 0.0) {
            return Err(Error::InvalidRoom(format!("fs {} and c {} must be positive", self.fs, self.c)));
        }
        match self.reflection {
            Reflection::Beta(b) if !(0.0..1.0).contains(&b) => {
                Err(Error::InvalidRoom(format!("reflection coefficient {b} outside [0, 1)")))
            }
            Reflection::T60(t) if !(t > 0.0) => Err(Error::InvalidRoom(format!("T60 {t} must be positive"))),
            _ => Ok(()),
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dims;
        2.0 * (l * w + l * h + w * h)
    }

    pub fn beta(&self) -> Result<f64> {
        match self.reflection {
            Reflection::Beta(b) => Ok(b),
            Reflection::T60(t) => t60_to_beta(self, t),
        }
    }

    /// Explicit order, or the smallest order with `β^order <= 1e-3`.
    pub fn order(&self) -> Result<usize> {
        if let Some(order) = self.max_order {
            return Ok(order);
        }
        let beta = self.beta()?;
        if beta == 0.0 {
            return Ok(0);
        }
        Ok((TAIL_FLOOR.ln() / beta.ln()).ceil().max(1.0) as usize)
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..3).all(|k| x[k] > 0.0 && x[k] < self.dims[k])
    }
}

/// Uniform wall reflection coefficient reproducing `t60` under Sabine's
/// formula `T60 = 0.161 V / (S (1 - β²))`.
pub fn t60_to_beta(room: &RoomSpec, t60: f64) -> Result<f64> {
    if !(t60 > 0.0) {
        return Err(Error::InvalidRoom(format!("T60 {t60} must be positive")));
    }
    let absorption = SABINE * room.volume() / (room.surface() * t60);
    if absorption > 1.0 {
        return Err(Error::T60TooShort { t60, absorption });
    }
    Ok((1.0 - absorption).sqrt().min(1.0 - f64::EPSILON))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub samples: Vec<f64>,
    pub fs: f64,
}

/// Distances from every image of `src` (up to `order` reflections) to `mic`,
/// with the number of reflections of each image.
fn images(dims: &[f64; 3], src: &Point, mic: &Point, order: usize) -> Vec<(f64, u32)> {
    let reach = (order / 2 + 1) as i64;
    let mut out = Vec::new();
    // Per-axis offsets and reflection counts; q = 1 mirrors the source.
    let axis = |k: usize| -> Vec<(f64, u32)> {
        let mut terms = Vec::new();
        for n in -reach..=reach {
            let shift = 2.0 * n as f64 * dims[k];
            for q in 0..2i64 {
                let reflections = ((n - q).abs() + n.abs()) as u32;
                if reflections as usize > order {
                    continue;
                }
                // Grouped so that swapping src and mic maps terms exactly.
                let delta = if q == 0 { (src[k] - mic[k]) + shift } else { shift - (src[k] + mic[k]) };
                terms.push((delta, reflections));
            }
        }
        terms
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    for &(dx, rx) in &ax {
        for &(dy, ry) in &ay {
            if (rx + ry) as usize > order {
                continue;
            }
            for &(dz, rz) in &az {
                let total = rx + ry + rz;
                if total as usize <= order {
                    out.push(((dx * dx + dy * dy + dz * dz).sqrt(), total));
                }
            }
        }
    }
    out
}

/// Room impulse response from `src` to `mic`.
pub fn image_method_rir(room: &RoomSpec, src: &Point, mic: &Point) -> Result<ImpulseResponse> {
    room.validate()?;
    if src == mic {
        return Err(Error::SourceAtMic(*src));
    }
    for p in [src, mic] {
        if !room.contains(p) {
            return Err(Error::InvalidRoom(format!("{p:?} is not strictly inside {:?}", room.dims)));
        }
    }
    let beta = room.beta()?;
    let order = room.order()?;
    let k = room.fs / room.c;
    let mut taps: Vec<(i64, f64)> = Vec::new();
    for (dist, reflections) in images(&room.dims, src, mic, order) {
        let gain = beta.powi(reflections as i32) / (4.0 * std::f64::consts::PI * dist);
        if gain == 0.0 {
            continue;
        }
        let delay = dist * k;
        match room.placement {
            DelayPlacement::Nearest => taps.push((delay.round() as i64, gain)),
            DelayPlacement::Sinc => {
                let centre = delay.round() as i64;
                for n in centre - SINC_HALF_TAPS..=centre + SINC_HALF_TAPS {
                    if n < 0 {
                        continue;
                    }
                    let t = n as f64 - delay;
                    let window = 0.5 * (1.0 + (std::f64::consts::PI * t / (SINC_HALF_TAPS + 1) as f64).cos());
                    let sinc =
                        if t == 0.0 { 1.0 } else { (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t) };
                    taps.push((n, gain * sinc * window));
                }
            }
        }
    }
    // Fixed accumulation order keeps the response independent of image
    // enumeration order.
    taps.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let len = taps.last().map_or(1, |t| t.0 as usize + 1);
    let mut samples = vec![0.0; len];
    for (n, g) in taps {
        samples[n as usize] += g;
    }
    Ok(ImpulseResponse { samples, fs: room.fs })
}

/// Linear convolution via FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let spectrum = |x: &[f64]| {
        let mut input = vec![0.0; n];
        input[..x.len()].copy_from_slice(x);
        let mut out = forward.make_output_vec();
        forward.process(&mut input, &mut out).expect("planned sizes");
        out
    };
    let sa = spectrum(a);
    let sb = spectrum(b);
    let mut prod: Vec<_> = sa.iter().zip(&sb).map(|(x, y)| x * y).collect();
    prod[0].im = 0.0;
    let last = prod.len() - 1;
    prod[last].im = 0.0;
    let mut time = inverse.make_output_vec();
    inverse.process(&mut prod, &mut time).expect("planned sizes");
    time.truncate(out_len);
    let scale = 1.0 / n as f64;
    time.iter_mut().for_each(|v| *v *= scale);
    time
}

/// Microphone signals for a point source, one channel per microphone and
/// as long as `signal`. With `snr_db`, independent white Gaussian noise is
/// added to each channel at that signal-to-noise ratio.
pub fn render_mic_signals(
    room: &RoomSpec,
    src: &Point,
    signal: &[f64],
    array: &MicArray,
    snr_db: Option<f64>,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    if signal.is_empty() {
        return Err(Error::Empty("source signal"));
    }
    let channels = exec::map(array.mic_count(), exec, |m| -> Result<Vec<f64>> {
        let rir = image_method_rir(room, src, &array.positions()[m])?;
        let mut out = fft_convolve(signal, &rir.samples);
        out.truncate(signal.len());
        if let Some(snr) = snr_db {
            let power = out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64);
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
        }
        Ok(out)
    });
    channels.into_iter().collect()
}

/// Seeded white noise in `[-1, 1)`, the default excitation.
pub fn noise_burst(len: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn wav_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Wav { path: path.to_path_buf(), message: e.to_string() }
}

/// Writes integer PCM, scaling all channels by one factor so the loudest
/// sample sits at 0.9 of full scale.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], fs: u32, bits: u16) -> Result<()> {
    if !(bits == 16 || bits == 24) {
        return Err(wav_err(path, format!("unsupported bit depth {bits}")));
    }
    let len = channels.first().map_or(0, Vec::len);
    if channels.is_empty() || channels.iter().any(|c| c.len() != len) {
        return Err(wav_err(path, "channels must be non-empty and of equal length"));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: fs,
        bits_per_sample: bits,
        sample_format: hound::SampleFormat::Int,
    };
    let peak = channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let full = ((1i64 << (bits - 1)) - 1) as f64;
    let scale = if peak > 0.0 { 0.9 * full / peak } else { 0.0 };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for n in 0..len {
        for ch in channels {
            writer.write_sample((ch[n] * scale).round() as i32).map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Reads a PCM WAV file into per-channel samples in `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(reader.len() as usize).is_multiple_of(channels) {
        return Err(wav_err(path, format!("{} samples do not split into {channels} channels", reader.len())));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
    };
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (ch, v) in out.iter_mut().zip(frame) {
            ch.push(*v);
        }
    }
    Ok((out, spec.sample_rate))
}
