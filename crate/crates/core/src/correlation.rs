//! Framing and per-pair cross-correlation.
//!
//! Correlations use the convention `φ[ζ] = Σ_n s1[n] s2[n + ζ]`, so a
//! signal reaching the second microphone `ζ` samples after the first peaks
//! at `+ζ`, the same sign as [`crate::geometry::tdoa_samples`].

use std::io::Write;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::geometry::MicArray;

/// Relative floor below which PHAT zero-weights a cross-spectrum bin.
pub const PHAT_FLOOR: f64 = 1e-12;

/// Frame length and hop, both in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FramePlan {
    pub frame_len: usize,
    pub hop: usize,
}

impl FramePlan {
    /// 4096-sample frames with 50 % overlap.
    pub const STANDARD: FramePlan = FramePlan { frame_len: 4096, hop: 2048 };

    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len == 0 || hop == 0 {
            return Err(Error::InvalidFramePlan(format!("frame {frame_len}, hop {hop}")));
        }
        Ok(Self { frame_len, hop })
    }

    pub fn frame_count(&self, signal_len: usize) -> Result<usize> {
        if signal_len < self.frame_len {
            return Err(Error::SignalTooShort { len: signal_len, frame_len: self.frame_len });
        }
        Ok((signal_len - self.frame_len) / self.hop + 1)
    }

    pub fn frame_start(&self, index: usize) -> usize {
        index * self.hop
    }
}

impl Default for FramePlan {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Overlapping rectangular frames of `signal`.
pub fn frame_signal<'a>(signal: &'a [f64], plan: &FramePlan) -> Result<Vec<&'a [f64]>> {
    let n = plan.frame_count(signal.len())?;
    Ok((0..n).map(|k| &signal[plan.frame_start(k)..plan.frame_start(k) + plan.frame_len]).collect())
}

/// Direct evaluation of `Σ_n s1[n] s2[n + ζ]` for `|ζ| <= max_lag`, with
/// samples outside the frames taken as zero. Entry `ζ + max_lag`.
pub fn cross_correlation_time(s1: &[f64], s2: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if s1.len() != s2.len() {
        return Err(Error::FrameLengthMismatch(s1.len(), s2.len()));
    }
    let n = s1.len();
    if max_lag >= n {
        return Err(Error::MaxLagTooLarge { max_lag, frame_len: n });
    }
    Ok((-(max_lag as isize)..=max_lag as isize)
        .map(|lag| {
            let lo = (-lag).max(0) as usize;
            let hi = (n as isize - lag.max(0)) as usize;
            (lo..hi).map(|i| s1[i] * s2[(i as isize + lag) as usize]).sum()
        })
        .collect())
}

/// Normalizes every bin of a cross-spectrum to unit magnitude. Bins below
/// [`PHAT_FLOOR`] times the largest magnitude are set to zero. Returns
/// `true` when the whole spectrum is zero.
pub fn phat_weight(spectrum: &mut [Complex<f64>]) -> bool {
    let peak = spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return true;
    }
    let floor = PHAT_FLOOR * peak;
    for z in spectrum.iter_mut() {
        let mag = z.norm();
        *z = if mag < floor { Complex::new(0.0, 0.0) } else { *z / mag };
    }
    false
}

/// Lag-indexed output of a single generalized cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcc {
    /// Entry `ζ + max_lag` holds `φ[ζ]`.
    pub values: Vec<f64>,
    /// PHAT was requested on an all-zero cross-spectrum.
    pub degenerate: bool,
}

/// FFT plans for correlating frames of one length.
///
/// Frames are zero-padded to at least twice their length so the circular
/// correlation equals the linear one for every representable lag.
#[derive(Clone)]
pub struct Correlator {
    frame_len: usize,
    fft_len: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator").field("frame_len", &self.frame_len).field("fft_len", &self.fft_len).finish()
    }
}

impl Correlator {
    pub fn new(frame_len: usize) -> Self {
        let fft_len = (2 * frame_len).next_power_of_two().max(2);
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            frame_len,
            fft_len,
            forward: planner.plan_fft_forward(fft_len),
            inverse: planner.plan_fft_inverse(fft_len),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    fn check(&self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.frame_len {
            return Err(Error::FrameLengthMismatch(frame.len(), self.frame_len));
        }
        Ok(())
    }

    fn spectrum(&self, frame: &[f64]) -> Vec<Complex<f64>> {
        let mut input = vec![0.0; self.fft_len];
        input[..frame.len()].copy_from_slice(frame);
        let mut output = self.forward.make_output_vec();
        self.forward.process(&mut input, &mut output).expect("buffer sizes come from the plan");
        output
    }

    fn correlate_spectra(&self, a: &[Complex<f64>], b: &[Complex<f64>], max_lag: usize, phat: bool) -> Gcc {
        let mut cross: Vec<Complex<f64>> = a.iter().zip(b).map(|(x, y)| x.conj() * y).collect();
        let degenerate = phat && phat_weight(&mut cross);
        // DC and Nyquist bins of a real signal's spectrum are real.
        cross[0].im = 0.0;
        let last = cross.len() - 1;
        cross[last].im = 0.0;
        let mut time = self.inverse.make_output_vec();
        self.inverse.process(&mut cross, &mut time).expect("buffer sizes come from the plan");
        let scale = 1.0 / self.fft_len as f64;
        let n = self.fft_len;
        let values = (-(max_lag as isize)..=max_lag as isize)
            .map(|lag| time[lag.rem_euclid(n as isize) as usize] * scale)
            .collect();
        Gcc { values, degenerate }
    }

    /// Generalized cross-correlation of two frames, optionally PHAT-weighted.
    pub fn gcc(&self, s1: &[f64], s2: &[f64], max_lag: usize, phat: bool) -> Result<Gcc> {
        if s1.len() != s2.len() {
            return Err(Error::FrameLengthMismatch(s1.len(), s2.len()));
        }
        self.check(s1)?;
        if max_lag >= self.frame_len {
            return Err(Error::MaxLagTooLarge { max_lag, frame_len: self.frame_len });
        }
        Ok(self.correlate_spectra(&self.spectrum(s1), &self.spectrum(s2), max_lag, phat))
    }

    /// Correlates every microphone pair of one multichannel frame.
    pub fn correlate(
        &self,
        channels: &[&[f64]],
        array: &MicArray,
        max_lag: usize,
        phat: bool,
        exec: Exec,
    ) -> Result<CorrelationSet> {
        if channels.len() != array.mic_count() {
            return Err(Error::ChannelCount { expected: array.mic_count(), found: channels.len() });
        }
        for ch in channels {
            self.check(ch)?;
        }
        if max_lag >= self.frame_len {
            return Err(Error::MaxLagTooLarge { max_lag, frame_len: self.frame_len });
        }
        let spectra = exec::map(channels.len(), exec, |m| self.spectrum(channels[m]));
        let per_pair = exec::map(array.pair_count(), exec, |p| {
            let (a, b) = array.pairs()[p];
            self.correlate_spectra(&spectra[a], &spectra[b], max_lag, phat)
        });
        let width = 2 * max_lag + 1;
        let mut values = Vec::with_capacity(width * per_pair.len());
        let mut degenerate = Vec::with_capacity(per_pair.len());
        for g in per_pair {
            values.extend_from_slice(&g.values);
            degenerate.push(g.degenerate);
        }
        Ok(CorrelationSet { max_lag, phat, values, degenerate })
    }
}

/// One-shot [`Correlator::gcc`].
pub fn gcc(s1: &[f64], s2: &[f64], max_lag: usize, phat: bool) -> Result<Gcc> {
    Correlator::new(s1.len()).gcc(s1, s2, max_lag, phat)
}

/// Correlation functions of every pair for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    max_lag: usize,
    phat: bool,
    values: Vec<f64>,
    degenerate: Vec<bool>,
}

impl CorrelationSet {
    /// Wraps explicit per-pair functions, each of length `2 * max_lag + 1`.
    pub fn from_pairs(max_lag: usize, phat: bool, pairs: Vec<Vec<f64>>) -> Result<Self> {
        let width = 2 * max_lag + 1;
        let mut values = Vec::with_capacity(width * pairs.len());
        for (p, f) in pairs.iter().enumerate() {
            if f.len() != width {
                return Err(Error::LagOutOfRange { pair: p, lag: f.len() as i32, max_lag });
            }
            values.extend_from_slice(f);
        }
        let degenerate = vec![false; pairs.len()];
        Ok(Self { max_lag, phat, values, degenerate })
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn phat(&self) -> bool {
        self.phat
    }

    pub fn pair_count(&self) -> usize {
        self.degenerate.len()
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// `φ_p` over `[-max_lag, max_lag]`; entry `ζ + max_lag`.
    pub fn pair(&self, p: usize) -> &[f64] {
        let width = 2 * self.max_lag + 1;
        &self.values[p * width..(p + 1) * width]
    }

    pub fn get(&self, p: usize, lag: i32) -> Result<f64> {
        if lag.unsigned_abs() as usize > self.max_lag || p >= self.pair_count() {
            return Err(Error::LagOutOfRange { pair: p, lag, max_lag: self.max_lag });
        }
        Ok(self.pair(p)[(lag + self.max_lag as i32) as usize])
    }

    /// Lag of the largest value of pair `p` (lowest lag on ties).
    pub fn peak_lag(&self, p: usize) -> i32 {
        let f = self.pair(p);
        let mut best = 0;
        for (i, v) in f.iter().enumerate() {
            if *v > f[best] {
                best = i;
            }
        }
        best as i32 - self.max_lag as i32
    }

    /// Multiplies every value by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * k).collect(), ..self.clone() }
    }

    /// Fails unless every `(pair, lag)` bound fits this set.
    pub(crate) fn check_bounds(&self, bounds: &[(i32, i32)]) -> Result<()> {
        if bounds.len() != self.pair_count() {
            return Err(Error::PairMismatch { table: bounds.len(), corr: self.pair_count() });
        }
        for (p, &(lo, hi)) in bounds.iter().enumerate() {
            for lag in [lo, hi] {
                if lag.unsigned_abs() as usize > self.max_lag {
                    return Err(Error::LagOutOfRange { pair: p, lag, max_lag: self.max_lag });
                }
            }
        }
        Ok(())
    }

    /// Pair-major flat storage, offset so that index `p * width + ζ + max_lag`.
    pub(crate) fn raw(&self) -> &[f64] {
        &self.values
    }

    /// CSV with header `pair,lag,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "pair,lag,value")?;
        for p in 0..self.pair_count() {
            for (i, v) in self.pair(p).iter().enumerate() {
                writeln!(out, "{p},{},{v}", i as i64 - self.max_lag as i64)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn impulse(n: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    }

    #[test]
    fn frame_counts() {
        let plan = FramePlan::STANDARD;
        assert_eq!(plan.frame_count(4096).unwrap(), 1);
        assert_eq!(plan.frame_count(216_000).unwrap(), 104);
        assert_eq!(10 * plan.frame_count(216_000).unwrap(), 1040);
        let signal: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let frames = frame_signal(&signal, &plan).unwrap();
        let starts: Vec<f64> = frames.iter().map(|f| f[0]).collect();
        assert_eq!(starts, vec![0.0, 2048.0, 4096.0]);
        assert!(frames.iter().all(|f| f.len() == 4096));
        assert!(matches!(
            frame_signal(&signal[..100], &plan),
            Err(Error::SignalTooShort { len: 100, frame_len: 4096 })
        ));
    }

    #[test]
    fn time_domain_impulses() {
        let a = impulse(256, 100);
        let phi = cross_correlation_time(&a, &a, 20).unwrap();
        assert_eq!(phi[20], 1.0);
        assert_eq!(phi.iter().sum::<f64>(), 1.0);

        let b = impulse(256, 107);
        let phi = cross_correlation_time(&a, &b, 20).unwrap();
        let peak = phi.iter().position(|&v| v == 1.0).unwrap() as i32 - 20;
        assert_eq!(peak, 7);
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let a = noise(4096, 1);
        let b = noise(4096, 2);
        let ea: f64 = a.iter().map(|v| v * v).sum();
        let eb: f64 = b.iter().map(|v| v * v).sum();
        let limit = 0.2 * (ea * eb).sqrt();
        let phi = cross_correlation_time(&a, &b, 300).unwrap();
        assert!(phi.iter().all(|v| v.abs() < limit));
    }

    #[test]
    fn time_domain_errors() {
        assert!(matches!(cross_correlation_time(&[0.0; 4], &[0.0; 5], 1), Err(Error::FrameLengthMismatch(4, 5))));
        assert!(matches!(cross_correlation_time(&[0.0; 4], &[0.0; 4], 4), Err(Error::MaxLagTooLarge { .. })));
    }

    #[test]
    fn frame_energy_at_zero_lag() {
        let a = noise(1024, 9);
        let energy: f64 = a.iter().map(|v| v * v).sum();
        let g = gcc(&a, &a, 10, false).unwrap();
        assert!((g.values[10] - energy).abs() < 1e-9 * energy);
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        for seed in 0..5 {
            let a = noise(1000, seed);
            let b = noise(1000, seed + 100);
            let direct = cross_correlation_time(&a, &b, 999).unwrap();
            let fast = gcc(&a, &b, 999, false).unwrap();
            let scale = direct.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (d, f) in direct.iter().zip(&fast.values) {
                assert!((d - f).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn phat_delayed_burst() {
        let n = 4096;
        let burst = noise(1024, 5);
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        s1[1000..2024].copy_from_slice(&burst);
        s2[1007..2031].copy_from_slice(&burst);
        let g = gcc(&s1, &s2, 50, true).unwrap();
        let set = CorrelationSet::from_pairs(50, true, vec![g.values.clone()]).unwrap();
        assert_eq!(set.peak_lag(0), 7);
        assert!((set.get(0, 7).unwrap() - 1.0).abs() < 1e-9);
        let second = g.values.iter().enumerate().filter(|(i, _)| *i != 57).map(|(_, v)| *v).fold(f64::MIN, f64::max);
        assert!(second < 0.1);
        assert!(!g.degenerate);
    }

    #[test]
    fn phat_autocorrelation_peaks_at_zero() {
        let a = noise(2048, 3);
        let g = gcc(&a, &a, 100, true).unwrap();
        let set = CorrelationSet::from_pairs(100, true, vec![g.values]).unwrap();
        assert_eq!(set.peak_lag(0), 0);
    }

    #[test]
    fn phat_on_silence_is_flagged() {
        let z = vec![0.0; 512];
        let g = gcc(&z, &z, 10, true).unwrap();
        assert!(g.degenerate);
        assert!(g.values.iter().all(|v| *v == 0.0));
        assert!(!gcc(&z, &z, 10, false).unwrap().degenerate);
    }

    #[test]
    fn phat_is_idempotent() {
        let a = noise(64, 11);
        let mut spec: Vec<Complex<f64>> = a.chunks(2).map(|c| Complex::new(c[0], c[1])).collect();
        spec[3] = Complex::new(0.0, 0.0);
        phat_weight(&mut spec);
        let once = spec.clone();
        phat_weight(&mut spec);
        for (x, y) in once.iter().zip(&spec) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn set_lookup_is_bounds_checked() {
        let set = CorrelationSet::from_pairs(2, false, vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(set.get(0, -2).unwrap(), 1.0);
        assert_eq!(set.get(0, 2).unwrap(), 5.0);
        assert!(matches!(set.get(0, 3), Err(Error::LagOutOfRange { .. })));
        assert!(set.check_bounds(&[(-2, 2)]).is_ok());
        assert!(set.check_bounds(&[(-3, 0)]).is_err());
        assert!(set.check_bounds(&[(0, 0), (0, 0)]).is_err());
    }
}
